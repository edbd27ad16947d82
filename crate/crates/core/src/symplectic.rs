//! Symplectic matrix predicates and the constructive hyperbolic perturbation
//! of unipotent symplectic matrices.
//!
//! Conventions: coordinates are ordered (e₁..e_n, f₁..f_n) and the standard
//! form matrix is J = [[0, I], [−I, 0]], so ω(u, v) = uᵀ J v and
//! ω(e_i, f_j) = δ_ij. Everything is dense linear algebra — matrices here are
//! 2×2 or 4×4 in the application, so clarity wins over sparsity.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

/// Spectral classification tolerance: eigenvalues within this of 1 count as
/// 1 (unipotent test); moduli within this of the unit circle block the
/// hyperbolic verdict.
pub const SPEC_TOL: f64 = 1e-7;

/// Moduli within this of 1 are treated as *exactly* on the unit circle
/// (machine-clean elliptic eigenvalues), not as ambiguous.
const CIRCLE_CLEAN: f64 = 1e-12;

/// Symplectic-form residual allowed by the `SymplecticMatrix` constructor.
pub const SYMPLECTIC_RESIDUAL_TOL: f64 = 1e-9;

/// Standard symplectic form on R^{2n}: J = [[0, I], [−I, 0]].
pub fn standard_form(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}

/// ‖MᵀJM − J‖_F.
pub fn symplectic_residual(m: &DMatrix<f64>, j: &DMatrix<f64>) -> f64 {
    (m.transpose() * j * m - j).norm()
}

/// A validated symplectic matrix with its half-dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticMatrix {
    m: DMatrix<f64>,
    n: usize,
}

impl SymplecticMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 || m.nrows() % 2 != 0 {
            return Err(Error::Invalid(format!(
                "symplectic matrix must be square of even size, got {}×{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let n = m.nrows() / 2;
        let residual = symplectic_residual(&m, &standard_form(n));
        if !(residual < SYMPLECTIC_RESIDUAL_TOL) {
            return Err(Error::NotSymplectic { residual });
        }
        Ok(Self { m, n })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn half_dim(&self) -> usize {
        self.n
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        robust_complex_eigenvalues(&self.m)
    }
}

/// Eigenvalues with a retry ladder. The QR iteration behind
/// `complex_eigenvalues` can stall on (near-)defective matrices and emit
/// NaNs; conjugating by a fixed orthogonal matrix leaves the spectrum
/// untouched but reliably unsticks it. Anything still non-finite after the
/// retries is returned as-is so callers can flag the ambiguity.
pub(crate) fn robust_complex_eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    let finite =
        |v: &[Complex64]| v.iter().all(|l| l.re.is_finite() && l.im.is_finite());
    let eig: Vec<Complex64> = m.complex_eigenvalues().iter().copied().collect();
    if finite(&eig) {
        return eig;
    }
    let dim = m.nrows();
    let mut last = eig;
    for variant in 1..=3u32 {
        let a = DMatrix::from_fn(dim, dim, |i, j| {
            let phase = (1 + i) as f64 * (1 + j) as f64 * (1.3 + variant as f64);
            phase.sin() + if i == j { 2.0 } else { 0.0 }
        });
        let q = a.qr().q();
        let conjugated = q.transpose() * m * &q;
        let retry: Vec<Complex64> =
            conjugated.complex_eigenvalues().iter().copied().collect();
        if finite(&retry) {
            return retry;
        }
        last = retry;
    }
    last
}

#[derive(Debug, Clone)]
struct SpectralClass {
    all_near_one: bool,
    all_off_circle: bool,
    /// Eigenvalues suspiciously close to the unit circle but away from 1:
    /// cannot be called on- or off-circle at SPEC_TOL.
    ambiguous: Vec<Complex64>,
}

fn classify(p: &SymplecticMatrix) -> SpectralClass {
    let mut all_near_one = true;
    let mut all_off_circle = true;
    let mut ambiguous = Vec::new();
    for lam in p.eigenvalues() {
        if !lam.re.is_finite() || !lam.im.is_finite() {
            // The eigenvalue solver gave up; refuse to guess.
            all_near_one = false;
            all_off_circle = false;
            ambiguous.push(lam);
            continue;
        }
        let near_one = (lam - Complex64::new(1.0, 0.0)).norm() < SPEC_TOL;
        let circle_dist = (lam.norm() - 1.0).abs();
        if !near_one {
            all_near_one = false;
            if circle_dist > CIRCLE_CLEAN && circle_dist <= SPEC_TOL {
                ambiguous.push(lam);
            }
        }
        if circle_dist <= SPEC_TOL {
            all_off_circle = false;
        }
    }
    SpectralClass {
        all_near_one,
        all_off_circle,
        ambiguous,
    }
}

/// Whether the spectrum is {1} (within SPEC_TOL).
pub fn is_unipotent(p: &SymplecticMatrix) -> Result<bool> {
    let c = classify(p);
    if c.all_near_one {
        return Ok(true);
    }
    if !c.ambiguous.is_empty() {
        return Err(Error::IndeterminateSpectrum(format!(
            "eigenvalues {:?} sit within {SPEC_TOL:.0e} of the unit circle but not of 1",
            c.ambiguous
        )));
    }
    Ok(false)
}

/// Whether the spectrum avoids the unit circle (within SPEC_TOL).
pub fn is_hyperbolic(p: &SymplecticMatrix) -> Result<bool> {
    let c = classify(p);
    if !c.ambiguous.is_empty() {
        return Err(Error::IndeterminateSpectrum(format!(
            "eigenvalues {:?} sit within {SPEC_TOL:.0e} of the unit circle but not of 1",
            c.ambiguous
        )));
    }
    Ok(c.all_off_circle)
}

// ---- subspace helpers --------------------------------------------------------

/// Orthonormal kernel basis of `a` (columns), via the eigendecomposition of
/// aᵀa; singular values below `tol` count as zero. Deterministic: eigenvectors
/// sorted by eigenvalue, signs normalized.
pub(crate) fn nullspace(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = a.ncols();
    let normal = a.transpose() * a;
    let eig = nalgebra::SymmetricEigen::new(normal);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut cols = Vec::new();
    for &i in &idx {
        // eigenvalue of aᵀa = σ², compare σ against tol
        if eig.eigenvalues[i].max(0.0).sqrt() <= tol {
            let mut v: DVector<f64> = eig.eigenvectors.column(i).into();
            let mut k = 0;
            for r in 1..n {
                if v[r].abs() > v[k].abs() {
                    k = r;
                }
            }
            if v[k] < 0.0 {
                v = -v;
            }
            cols.push(v);
        }
    }
    let mut out = DMatrix::zeros(n, cols.len());
    for (c, v) in cols.iter().enumerate() {
        out.set_column(c, v);
    }
    out
}

/// Gram–Schmidt the standard basis against `constraints` (columns), returning
/// an orthonormal basis (columns) of the orthogonal complement. Lexicographic:
/// earlier standard basis vectors are preferred, which makes invariant-subspace
/// outputs canonical when they are not unique.
fn complement_basis(dim: usize, constraints: &DMatrix<f64>) -> DMatrix<f64> {
    let mut kept: Vec<DVector<f64>> = Vec::new();
    let mut ortho: Vec<DVector<f64>> = (0..constraints.ncols())
        .map(|c| constraints.column(c).into_owned())
        .collect();
    // Orthonormalize the constraints first.
    let mut cons: Vec<DVector<f64>> = Vec::new();
    for v in ortho.drain(..) {
        let mut w = v;
        for u in &cons {
            let d = u.dot(&w);
            w -= u * d;
        }
        let n = w.norm();
        if n > 1e-12 {
            cons.push(w / n);
        }
    }
    for i in 0..dim {
        let mut w = DVector::zeros(dim);
        w[i] = 1.0;
        for u in cons.iter().chain(kept.iter()) {
            let d = u.dot(&w);
            w -= u * d;
        }
        let n = w.norm();
        if n > 1e-9 {
            kept.push(w / n);
        }
    }
    let mut out = DMatrix::zeros(dim, kept.len());
    for (c, v) in kept.iter().enumerate() {
        out.set_column(c, v);
    }
    out
}

// ---- invariant Lagrangian ----------------------------------------------------

/// A P-invariant Lagrangian subspace of a unipotent symplectic matrix,
/// returned as an orthonormal 2n×n basis.
///
/// Greedy construction: starting from an eigenvector for the eigenvalue 1,
/// repeatedly pass to the induced map on (V^ω ∩ V^⊥) — which again has
/// spectrum {1} — and pull one more kernel vector back. Unipotence guarantees
/// each step succeeds; a numerical failure to find the next vector is
/// reported as a degeneracy with the residual attached.
pub fn invariant_lagrangian(p: &SymplecticMatrix) -> Result<DMatrix<f64>> {
    match is_unipotent(p) {
        Ok(true) => {}
        Ok(false) => {
            return Err(Error::NotUnipotent(
                "spectrum is not {1}: invariant Lagrangian construction needs a unipotent matrix"
                    .into(),
            ))
        }
        Err(e) => return Err(e),
    }
    let n = p.half_dim();
    let dim = 2 * n;
    let j = standard_form(n);
    let m = p.matrix();

    let mut v = DMatrix::<f64>::zeros(dim, 0);
    while v.ncols() < n {
        // Constraints for V′ = V^ω ∩ V^⊥: u ⊥ V and u ⊥ J·V.
        let mut constraints = DMatrix::zeros(dim, 2 * v.ncols());
        for c in 0..v.ncols() {
            constraints.set_column(c, &v.column(c));
            constraints.set_column(v.ncols() + c, &(&j * v.column(c).into_owned()));
        }
        let w = complement_basis(dim, &constraints);
        if w.ncols() == 0 {
            return Err(Error::Degeneracy(
                "invariant Lagrangian: complement collapsed before reaching dimension n".into(),
            ));
        }
        // Induced map on V′ (orthogonal projection along V is exact because
        // V′ ⊥ V): find a fixed vector of WᵀPW.
        let induced = w.transpose() * m * &w;
        let a = &induced - DMatrix::<f64>::identity(induced.nrows(), induced.ncols());
        let kernel = nullspace(&a, 1e-6);
        if kernel.ncols() == 0 {
            let smin = a
                .clone()
                .svd(false, false)
                .singular_values
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            return Err(Error::Degeneracy(format!(
                "invariant Lagrangian: no fixed direction in the induced map (σ_min = {smin:.3e})"
            )));
        }
        // Canonical pick: project the first standard coordinate of V′ with a
        // nonneglibible kernel component.
        let proj = &kernel * kernel.transpose();
        let mut picked: Option<DVector<f64>> = None;
        for i in 0..kernel.nrows() {
            let mut e = DVector::zeros(kernel.nrows());
            e[i] = 1.0;
            let c = &proj * e;
            if c.norm() > 1e-6 {
                picked = Some(&c / c.norm());
                break;
            }
        }
        let c = picked.ok_or_else(|| {
            Error::Degeneracy("invariant Lagrangian: kernel projection degenerate".into())
        })?;
        let new_vec = &w * c;

        let mut grown = DMatrix::zeros(dim, v.ncols() + 1);
        for ccol in 0..v.ncols() {
            grown.set_column(ccol, &v.column(ccol));
        }
        grown.set_column(v.ncols(), &(&new_vec / new_vec.norm()));
        v = grown;
    }

    // Verify the construction: isotropy and invariance.
    for i in 0..n {
        for k in 0..n {
            let om = v.column(i).dot(&(&j * v.column(k).into_owned()));
            if om.abs() > 1e-8 {
                return Err(Error::Degeneracy(format!(
                    "invariant Lagrangian: isotropy violated, ω(v{i},v{k}) = {om:.3e}"
                )));
            }
        }
    }
    let proj_v = &v * v.transpose();
    for i in 0..n {
        let pv = m * v.column(i).into_owned();
        let res = (&pv - &proj_v * &pv).norm();
        if res > 1e-8 {
            return Err(Error::Degeneracy(format!(
                "invariant Lagrangian: invariance violated on column {i}, residual {res:.3e}"
            )));
        }
    }
    Ok(v)
}

/// Complete a Lagrangian basis E (2n×n, columns) to a symplectic basis:
/// returns F with ω(e_i, f_j) = δ_ij and ω(f_i, f_j) = 0.
pub fn lagrangian_completion(e: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = e.nrows();
    if dim % 2 != 0 || e.ncols() != dim / 2 {
        return Err(Error::Invalid(format!(
            "Lagrangian basis must be 2n×n, got {}×{}",
            dim,
            e.ncols()
        )));
    }
    let n = dim / 2;
    let j = standard_form(n);
    // F₀ = (EᵀJ)⁺ pairs correctly with E; the symmetric correction
    // F = F₀ + E·(K/2), K = F₀ᵀJF₀, kills ω(f_i, f_j) without touching the
    // pairing (EᵀJE = 0 on a Lagrangian).
    let etj = e.transpose() * &j;
    let f0 = etj
        .svd(true, true)
        .pseudo_inverse(1e-12)
        .map_err(|err| Error::Degeneracy(format!("Lagrangian completion pinv failed: {err}")))?;
    let k = f0.transpose() * &j * &f0;
    let f = &f0 + e * (k * 0.5);
    // Validate.
    let pairing = e.transpose() * &j * &f;
    let skew = f.transpose() * &j * &f;
    let id = DMatrix::<f64>::identity(n, n);
    if (pairing - &id).norm() > 1e-10 || skew.norm() > 1e-10 {
        return Err(Error::Degeneracy(
            "Lagrangian completion failed the pairing check".into(),
        ));
    }
    Ok(f)
}

// ---- hyperbolic perturbation ---------------------------------------------------

/// The one-parameter hyperbolic deformation P_t of a unipotent symplectic P:
/// in a symplectic basis whose first half spans a P-invariant Lagrangian,
/// P_t = diag(eᵗI, e⁻ᵗI)·P. For t ≠ 0 the spectrum lives on the moduli
/// {eᵗ, e⁻ᵗ}, so P_t is hyperbolic, and P_t → P as t → 0.
pub fn hyperbolic_perturbation(p: &SymplecticMatrix, t: f64) -> Result<SymplecticMatrix> {
    if t == 0.0 {
        return Ok(p.clone());
    }
    let n = p.half_dim();
    let e = invariant_lagrangian(p)?;
    let f = lagrangian_completion(&e)?;
    let mut b = DMatrix::zeros(2 * n, 2 * n);
    for c in 0..n {
        b.set_column(c, &e.column(c));
        b.set_column(n + c, &f.column(c));
    }
    let j = standard_form(n);
    // B is symplectic, so B⁻¹ = J⁻¹BᵀJ = −JBᵀJ, exactly structure-preserving.
    let b_inv = -(&j) * b.transpose() * &j;
    let mut d = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        d[(i, i)] = t.exp();
        d[(n + i, n + i)] = (-t).exp();
    }
    let p_t = &b * d * &b_inv * p.matrix();
    SymplecticMatrix::new(p_t)
}

// ---- generalized eigenspace splitting ----------------------------------------

/// P restricted to the generalized eigenspace of 1 (block `a`) and to its
/// symplectic orthogonal (block `b`), with the basis columns used.
#[derive(Debug, Clone)]
pub struct BlockSplit {
    /// P on V = ker (P−I)^{2n}; spectrum {1}.
    pub a: DMatrix<f64>,
    /// P on W = V^ω; 1 not in the spectrum.
    pub b: DMatrix<f64>,
    /// Basis of V (columns).
    pub basis_v: DMatrix<f64>,
    /// Basis of W (columns).
    pub basis_w: DMatrix<f64>,
}

/// Split a symplectic matrix along the generalized eigenspace of the
/// eigenvalue 1 and its symplectic orthogonal complement.
pub fn unipotent_block_split(p: &SymplecticMatrix) -> Result<BlockSplit> {
    let n = p.half_dim();
    let dim = 2 * n;
    let m = p.matrix();
    let id = DMatrix::<f64>::identity(dim, dim);
    // (P − I)^{2n} kills exactly the generalized eigenspace of 1.
    let mut k = &id - m;
    k = -k; // P − I
    let mut power = id.clone();
    for _ in 0..dim {
        power = &power * &k;
    }
    let svs = power.clone().svd(false, false).singular_values;
    let smax = svs.iter().cloned().fold(0.0f64, f64::max);
    // Scale against which "numerically zero" is judged: rounding noise in the
    // 2n-fold product sits around ε·max(1, ‖P−I‖)^{2n}.
    let power_scale = k.norm().max(1.0).powi(dim as i32);
    let whole_space_unipotent = smax <= 1e-12 * power_scale;
    if !whole_space_unipotent {
        // Ambiguity guard: singular values in the gray zone mean the
        // eigenvalue-1 cluster is not cleanly separated.
        for s in svs.iter() {
            let rel = s / smax;
            if rel > 1e-9 && rel < 1e-5 {
                return Err(Error::IndeterminateSpectrum(format!(
                    "generalized eigenspace of 1 is not cleanly separated (σ/σ_max = {rel:.3e})"
                )));
            }
        }
    }
    let basis_v = if whole_space_unipotent {
        DMatrix::<f64>::identity(dim, dim)
    } else {
        nullspace(&power, 1e-7 * smax.sqrt().max(1e-7))
    };
    let kv = basis_v.ncols();

    let j = standard_form(n);
    // W = {u : ω(u, V) = 0} = nullspace of (JV)ᵀ.
    let basis_w = if kv == 0 {
        DMatrix::<f64>::identity(dim, dim)
    } else if kv == dim {
        DMatrix::<f64>::zeros(dim, 0)
    } else {
        let jv = &j * &basis_v;
        nullspace(&jv.transpose().into_owned(), 1e-9)
    };
    if basis_w.ncols() + kv != dim {
        return Err(Error::Degeneracy(format!(
            "block split dimensions inconsistent: dim V = {kv}, dim W = {}",
            basis_w.ncols()
        )));
    }

    // Change of basis and block extraction.
    let mut basis = DMatrix::zeros(dim, dim);
    for c in 0..kv {
        basis.set_column(c, &basis_v.column(c));
    }
    for c in 0..basis_w.ncols() {
        basis.set_column(kv + c, &basis_w.column(c));
    }
    let binv = basis.clone().try_inverse().ok_or_else(|| {
        Error::Degeneracy("block split basis not invertible (V ∩ V^ω ≠ 0?)".into())
    })?;
    let pb = binv * m * &basis;
    let a = pb.view((0, 0), (kv, kv)).into_owned();
    let b = pb.view((kv, kv), (dim - kv, dim - kv)).into_owned();
    let off = pb.view((0, kv), (kv, dim - kv)).norm() + pb.view((kv, 0), (dim - kv, kv)).norm();
    if off > 1e-7 * (1.0 + m.norm()) {
        return Err(Error::Degeneracy(format!(
            "block split off-diagonal residual {off:.3e}: subspaces not invariant"
        )));
    }
    Ok(BlockSplit {
        a,
        b,
        basis_v,
        basis_w,
    })
}
