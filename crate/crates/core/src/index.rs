//! Morse indices, transverse nullities, and Bott functions for critical loops.
//!
//! All indices are eigenvalue counts of finite-difference Hessians of the
//! discrete action: the analytic differential is differenced centrally
//! (ε = 1e−5) column by column and the result symmetrized. The free-period
//! Hessian borders the fixed-period one with the period row/column, so the
//! fixed block is a principal submatrix and Cauchy interlacing pins
//! ind_free − ind_fixed to {0, 1} structurally.
//!
//! A caveat worth knowing when comparing against pen-and-paper values: the
//! central-difference velocity is blind to sawtooth oscillation, so the
//! discrete Hessian carries an aliased copy of the low-frequency spectrum
//! near the Nyquist band. Every identity tested here (Bott iteration, Λ(1) =
//! ind_fixed, interlacing, mean index) holds exactly for the discrete
//! functional, aliased band included; only direct comparison with continuum
//! index values needs care. Tests that count kernels use odd N so that the
//! exact sawtooth zero modes of flat directions stay out of the picture.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::MonodromyData;
use crate::geometry::MagneticSystem;
use crate::loops::{differential, gradient, DiscreteLoop, LoopTangent};
use crate::symplectic::SymplecticMatrix;
use crate::{Error, Result};

/// Singular values of I − P below this count toward the transverse nullity.
pub const RANK_TOL: f64 = 1e-7;

/// Eigenvalue angles are snapped to rational multiples of 2π within this.
pub const ANGLE_TOL: f64 = 1e-6;

/// Near-miss band: angles this close to a root of unity (but outside
/// ANGLE_TOL) flag the partition as ambiguous instead of being snapped.
pub const ANGLE_NEAR_MISS: f64 = 1e-4;

/// Step for the central differences of the analytic differential.
const FD_EPS: f64 = 1e-5;

/// Negative-count threshold factor: eigenvalues below −λ_tol with
/// λ_tol = 1e−8·max|λ| count as negative, |λ| ≤ λ_tol as zero.
const LAMBDA_TOL_FACTOR: f64 = 1e-8;

/// Eigenvalue counts of a symmetric matrix with the thresholds used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub negative: usize,
    pub zero: usize,
    pub positive: usize,
    /// Largest |λ|.
    pub lambda_max: f64,
    /// The zero/negative threshold actually applied.
    pub threshold: f64,
}

fn summarize(eigs: &[f64]) -> SpectrumSummary {
    let lambda_max = eigs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let threshold = LAMBDA_TOL_FACTOR * lambda_max;
    let mut s = SpectrumSummary {
        negative: 0,
        zero: 0,
        positive: 0,
        lambda_max,
        threshold,
    };
    for &l in eigs {
        if l < -threshold {
            s.negative += 1;
        } else if l > threshold {
            s.positive += 1;
        } else {
            s.zero += 1;
        }
    }
    s
}

fn check_critical(
    system: &MagneticSystem,
    kappa: f64,
    l: &DiscreteLoop,
    crit_tol: f64,
) -> Result<()> {
    let g = gradient(system, kappa, l)?;
    if g.norm >= crit_tol {
        return Err(Error::NotCritical {
            grad_norm: g.norm,
            tol: crit_tol,
        });
    }
    Ok(())
}

/// The three pieces of the bordered Hessian: node block (2N×2N), the mixed
/// node/period column, and the ∂²S/∂T² corner.
fn hessian_parts(
    system: &MagneticSystem,
    kappa: f64,
    l: &DiscreteLoop,
) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let n = l.len();
    let dim = 2 * n;
    let mut block = DMatrix::<f64>::zeros(dim, dim);
    let mut border_a = DVector::<f64>::zeros(dim);
    for m in 0..n {
        for comp in 0..2 {
            let col = 2 * m + comp;
            let mut tan = LoopTangent::zeros(n);
            tan.u[m][comp] = 1.0;
            let dp = differential(system, kappa, &l.displaced(&tan, FD_EPS)?)?;
            let dm = differential(system, kappa, &l.displaced(&tan, -FD_EPS)?)?;
            for j in 0..n {
                for c in 0..2 {
                    block[(2 * j + c, col)] = (dp.u[j][c] - dm.u[j][c]) / (2.0 * FD_EPS);
                }
            }
            border_a[col] = (dp.r - dm.r) / (2.0 * FD_EPS);
        }
    }
    let mut tan = LoopTangent::zeros(n);
    tan.r = 1.0;
    let dp = differential(system, kappa, &l.displaced(&tan, FD_EPS)?)?;
    let dm = differential(system, kappa, &l.displaced(&tan, -FD_EPS)?)?;
    let mut border_b = DVector::<f64>::zeros(dim);
    for j in 0..n {
        for c in 0..2 {
            border_b[2 * j + c] = (dp.u[j][c] - dm.u[j][c]) / (2.0 * FD_EPS);
        }
    }
    let corner = (dp.r - dm.r) / (2.0 * FD_EPS);
    let block = (&block + block.transpose()) * 0.5;
    let border = (border_a + border_b) * 0.5;
    Ok((block, border, corner))
}

/// Second variation of the free-period action: (2N+1)×(2N+1), node slots
/// first, period slot last. The leading 2N×2N principal block is exactly the
/// fixed-period Hessian.
pub fn free_period_hessian(
    system: &MagneticSystem,
    kappa: f64,
    l: &DiscreteLoop,
) -> Result<DMatrix<f64>> {
    let (block, border, corner) = hessian_parts(system, kappa, l)?;
    let dim = block.nrows();
    let mut h = DMatrix::<f64>::zeros(dim + 1, dim + 1);
    h.view_mut((0, 0), (dim, dim)).copy_from(&block);
    for i in 0..dim {
        h[(i, dim)] = border[i];
        h[(dim, i)] = border[i];
    }
    h[(dim, dim)] = corner;
    Ok(h)
}

fn indices_of(h_free: &DMatrix<f64>) -> Result<(usize, usize, SpectrumSummary)> {
    let dim = h_free.nrows() - 1;
    let fixed = h_free.view((0, 0), (dim, dim)).into_owned();
    let eig_fixed = SymmetricEigen::new(fixed).eigenvalues;
    let eig_free = SymmetricEigen::new(h_free.clone()).eigenvalues;
    let sum_fixed = summarize(eig_fixed.as_slice());
    let sum_free = summarize(eig_free.as_slice());
    let (lo, hi) = (sum_fixed.negative, sum_free.negative);
    if hi < lo || hi > lo + 1 {
        // Interlacing forces the true counts into {0, 1}; landing outside
        // means an eigenvalue straddles the zero threshold.
        return Err(Error::IndexInconsistency(format!(
            "free index {hi} vs fixed index {lo}: bordered count must grow by 0 or 1"
        )));
    }
    Ok((lo, hi, sum_fixed))
}

/// Morse index of the fixed-period second variation, with the spectrum
/// summary of the Hessian it was counted from.
pub fn fixed_period_index(
    system: &MagneticSystem,
    kappa: f64,
    l: &DiscreteLoop,
    crit_tol: f64,
) -> Result<(usize, SpectrumSummary)> {
    check_critical(system, kappa, l, crit_tol)?;
    let h = free_period_hessian(system, kappa, l)?;
    let (fixed, _, summary) = indices_of(&h)?;
    Ok((fixed, summary))
}

/// Morse index of the free-period second variation (period direction
/// included). Guaranteed to exceed the fixed-period index by 0 or 1.
pub fn free_period_index(
    system: &MagneticSystem,
    kappa: f64,
    l: &DiscreteLoop,
    crit_tol: f64,
) -> Result<usize> {
    check_critical(system, kappa, l, crit_tol)?;
    let h = free_period_hessian(system, kappa, l)?;
    let (_, free, _) = indices_of(&h)?;
    Ok(free)
}

/// Transverse nullity dim ker(I − P) of a linearized Poincaré map.
pub fn transverse_nullity(p: &nalgebra::Matrix2<f64>) -> usize {
    let res = nalgebra::Matrix2::<f64>::identity() - p;
    res.svd(false, false)
        .singular_values
        .iter()
        .filter(|s| **s < RANK_TOL)
        .count()
}

/// Transverse nullity of a computed monodromy.
pub fn nullity(m: &MonodromyData) -> usize {
    transverse_nullity(&m.poincare)
}

/// One class of the iterated-nullity partition: the orders n in `members`
/// share the eigenvalue set σ_n(P) = {λ ∈ σ(P) : λⁿ = 1}, `n_j` is the least
/// of them (and divides all of them), and `nu` the summed geometric
/// multiplicity — the transverse nullity of every iterate in the class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionClass {
    pub members: Vec<usize>,
    pub n_j: usize,
    pub nu: usize,
}

/// Partition of {1, …, n_max} by the nullity pattern of iterates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NullityPartition {
    pub classes: Vec<PartitionClass>,
    /// Set when an eigenvalue sat suspiciously near (but not at) a root of
    /// unity of admissible order; its contribution was dropped, not guessed.
    pub ambiguous: bool,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Geometric multiplicity over ℂ of the eigenvalue e^{2πip/q} of a real
/// matrix, via the kernel of the realified shifted matrix.
fn complex_geometric_multiplicity(m: &DMatrix<f64>, p: usize, q: usize) -> usize {
    let dim = m.nrows();
    let angle = std::f64::consts::TAU * p as f64 / q as f64;
    let (c, s) = (angle.cos(), angle.sin());
    let mut real = DMatrix::<f64>::zeros(2 * dim, 2 * dim);
    let shifted = m - DMatrix::<f64>::identity(dim, dim) * c;
    real.view_mut((0, 0), (dim, dim)).copy_from(&shifted);
    real.view_mut((dim, dim), (dim, dim)).copy_from(&shifted);
    for i in 0..dim {
        real[(i, dim + i)] = s;
        real[(dim + i, i)] = -s;
    }
    // The kernel tolerance must absorb the snap distance (≤ ANGLE_TOL) plus
    // eigenvalue rounding, both well below the O(1) spacing of distinct roots.
    let svd = real.svd(false, false);
    let kernel = svd
        .singular_values
        .iter()
        .filter(|sv| **sv < 1e-5)
        .count();
    debug_assert!(kernel % 2 == 0, "realified kernel must have even dimension");
    kernel / 2
}

/// Partition {1, …, n_max} into classes of iteration orders with identical
/// transverse nullity, together with each class's minimal order and nullity.
pub fn iterated_nullity_partition(
    p: &SymplecticMatrix,
    n_max: usize,
) -> Result<NullityPartition> {
    if n_max == 0 {
        return Err(Error::Invalid("iteration range must be nonempty".into()));
    }
    let eigs = p.eigenvalues();
    if eigs
        .iter()
        .any(|l| !l.re.is_finite() || !l.im.is_finite())
    {
        return Err(Error::IndeterminateSpectrum(
            "eigenvalue solver returned non-finite values".into(),
        ));
    }

    // Snap on-circle eigenvalues to roots of unity of order ≤ n_max.
    let mut ambiguous = false;
    let mut roots: Vec<(usize, usize)> = Vec::new();
    for lam in &eigs {
        if (lam.norm() - 1.0).abs() > 1e-6 {
            continue;
        }
        let angle = lam.arg().rem_euclid(std::f64::consts::TAU);
        let mut best: Option<(f64, usize, usize)> = None;
        for q in 1..=n_max {
            for num in 0..q {
                if gcd(num, q) != 1 && !(num == 0 && q == 1) {
                    continue;
                }
                let target = std::f64::consts::TAU * num as f64 / q as f64;
                let mut d = (angle - target).abs();
                d = d.min(std::f64::consts::TAU - d);
                if best.map_or(true, |(bd, _, _)| d < bd) {
                    best = Some((d, num, q));
                }
            }
        }
        let (d, num, q) = best.expect("q = 1 candidate always exists");
        if d <= ANGLE_TOL {
            if !roots.contains(&(num, q)) {
                roots.push((num, q));
            }
        } else if d <= ANGLE_NEAR_MISS {
            ambiguous = true;
        }
    }
    roots.sort_unstable();

    let multiplicities: Vec<usize> = roots
        .iter()
        .map(|&(num, q)| complex_geometric_multiplicity(p.matrix(), num, q))
        .collect();

    // Group orders by which snapped roots they resolve.
    let sigma = |n: usize| -> Vec<usize> {
        roots
            .iter()
            .enumerate()
            .filter(|(_, (_, q))| n % q == 0)
            .map(|(i, _)| i)
            .collect()
    };
    let mut classes: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for n in 1..=n_max {
        let key = sigma(n);
        match classes.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(n),
            None => classes.push((key, vec![n])),
        }
    }
    let mut out = Vec::with_capacity(classes.len());
    for (key, members) in classes {
        let n_j = members[0];
        if members.iter().any(|m| m % n_j != 0) {
            return Err(Error::IndexInconsistency(format!(
                "partition class {members:?} is not generated by its least element {n_j}"
            )));
        }
        let nu = key.iter().map(|&i| multiplicities[i]).sum();
        out.push(PartitionClass { members, n_j, nu });
    }
    out.sort_by_key(|c| c.n_j);
    Ok(NullityPartition {
        classes: out,
        ambiguous,
    })
}

/// Index of the fixed-period second variation on e^{iθ}-twisted variations,
/// assembled by phasing the seam-crossing couplings of the real Hessian and
/// counting negative eigenvalues of the resulting Hermitian matrix.
pub fn bott_function(
    system: &MagneticSystem,
    kappa: f64,
    l: &DiscreteLoop,
    theta: f64,
    crit_tol: f64,
) -> Result<usize> {
    check_critical(system, kappa, l, crit_tol)?;
    let (block, _, _) = hessian_parts(system, kappa, l)?;
    twisted_negative_count(&block, l.len(), theta)
}

/// Couplings that cross the seam s = 0 for the width-2 stencil.
fn seam_blocks(n: usize) -> [(usize, usize); 3] {
    [(n - 2, 0), (n - 1, 0), (n - 1, 1)]
}

fn twisted_negative_count(block: &DMatrix<f64>, n: usize, theta: f64) -> Result<usize> {
    let dim = 2 * n;
    let (c, s) = (theta.cos(), theta.sin());
    // Hermitian matrix A + iB: identical to the real Hessian except that the
    // couplings wrapping the seam pick up e^{iθ} (conjugate on transposes).
    let mut a = block.clone();
    let mut b = DMatrix::<f64>::zeros(dim, dim);
    for (blk_r, blk_c) in seam_blocks(n) {
        for i in 0..2 {
            for j in 0..2 {
                let r = 2 * blk_r + i;
                let q = 2 * blk_c + j;
                let v = block[(r, q)];
                a[(r, q)] = v * c;
                b[(r, q)] = v * s;
                a[(q, r)] = v * c;
                b[(q, r)] = -v * s;
            }
        }
    }
    // Realification [[A, −B], [B, A]] is symmetric with doubled spectrum.
    let mut real = DMatrix::<f64>::zeros(2 * dim, 2 * dim);
    real.view_mut((0, 0), (dim, dim)).copy_from(&a);
    real.view_mut((dim, dim), (dim, dim)).copy_from(&a);
    real.view_mut((0, dim), (dim, dim)).copy_from(&(-&b));
    real.view_mut((dim, 0), (dim, dim)).copy_from(&b);
    let eig = SymmetricEigen::new(real).eigenvalues;
    let sum = summarize(eig.as_slice());
    if sum.negative % 2 != 0 {
        return Err(Error::IndexInconsistency(format!(
            "realified twisted Hessian has odd negative count {}",
            sum.negative
        )));
    }
    Ok(sum.negative / 2)
}

/// Λ sampled on the uniform angle grid θ_k = 2πk/grid. Angle evaluations are
/// independent and run in parallel.
pub fn bott_sweep(
    system: &MagneticSystem,
    kappa: f64,
    l: &DiscreteLoop,
    grid: usize,
    crit_tol: f64,
) -> Result<Vec<(f64, usize)>> {
    if grid == 0 {
        return Err(Error::Invalid("angle grid must be nonempty".into()));
    }
    check_critical(system, kappa, l, crit_tol)?;
    let (block, _, _) = hessian_parts(system, kappa, l)?;
    let n = l.len();
    (0..grid)
        .into_par_iter()
        .map(|k| {
            let theta = std::f64::consts::TAU * k as f64 / grid as f64;
            twisted_negative_count(&block, n, theta).map(|count| (theta, count))
        })
        .collect()
}

/// Average of Bott samples over the circle — equals the mean index. The grid
/// must be uniform starting at 0 with at least 64 angles (the trapezoid rule
/// on a periodic grid is the plain mean).
pub fn mean_index(samples: &[(f64, usize)]) -> Result<f64> {
    if samples.len() < 64 {
        return Err(Error::Invalid(format!(
            "mean index needs at least 64 angle samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    for (k, (theta, _)) in samples.iter().enumerate() {
        let expected = std::f64::consts::TAU * k as f64 / n;
        if (theta - expected).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "angle grid not uniform at sample {k}: {theta} vs {expected}"
            )));
        }
    }
    Ok(samples.iter().map(|(_, c)| *c as f64).sum::<f64>() / n)
}

/// Everything the catalog records about the second variation at one loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexReport {
    pub ind_free: usize,
    pub ind_fixed: usize,
    pub nullity: usize,
    pub bott_samples: Vec<(f64, usize)>,
    pub mean_index: f64,
}

/// Assemble the full index report for a critical loop with its monodromy.
pub fn index_report(
    system: &MagneticSystem,
    kappa: f64,
    l: &DiscreteLoop,
    monodromy: &MonodromyData,
    grid: usize,
    crit_tol: f64,
) -> Result<IndexReport> {
    check_critical(system, kappa, l, crit_tol)?;
    let h = free_period_hessian(system, kappa, l)?;
    let (ind_fixed, ind_free, _) = indices_of(&h)?;
    let bott_samples = bott_sweep(system, kappa, l, grid.max(64), crit_tol)?;
    if bott_samples[0].1 != ind_fixed {
        return Err(Error::IndexInconsistency(format!(
            "Λ(1) = {} disagrees with the fixed-period index {}",
            bott_samples[0].1, ind_fixed
        )));
    }
    let mean = mean_index(&bott_samples)?;
    Ok(IndexReport {
        ind_free,
        ind_fixed,
        nullity: nullity(monodromy),
        bott_samples,
        mean_index: mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_orbit, monodromy, PhaseState};
    use crate::geometry::{ChartTopology, MetricKind, OneFormKind, PotentialKind, Vec2};
    use crate::loops::{action, iterate};
    use crate::testing;
    use approx::assert_relative_eq;
    use nalgebra::Matrix2;

    // Flat torus with a cosine well and no magnetic term: the constant loop
    // at the bottom of the well is critical at κ = V_min = 0, and the entire
    // second variation diagonalizes in Fourier modes, giving closed-form
    // index counts for the discrete operator.
    fn well_system() -> MagneticSystem {
        MagneticSystem::new(
            ChartTopology::Torus,
            MetricKind::Euclidean,
            OneFormKind::Zero,
            PotentialKind::Cosine { amplitude: 1.0 },
        )
        .unwrap()
    }

    fn well_loop(n: usize, period: f64) -> DiscreteLoop {
        DiscreteLoop::constant(Vec2::new(0.5, 0.3), period, n).unwrap()
    }

    /// Closed-form negative count of the twisted Hessian of the well loop:
    /// the u₁ mode ν = k + θ/2π is negative iff N|sin(2πν/N)| < 2πT√a
    /// (central-difference dispersion), the u₂ modes never are.
    fn well_bott_oracle(n: usize, period: f64, amplitude: f64, theta: f64) -> usize {
        let tau = theta / std::f64::consts::TAU;
        let bound = std::f64::consts::TAU * period * amplitude.sqrt();
        (0..n)
            .filter(|k| {
                let nu = *k as f64 + tau;
                let sym = n as f64 * (std::f64::consts::TAU * nu / n as f64).sin().abs();
                sym < bound
            })
            .count()
    }

    /// Discretely critical constant-field circle: unit radius, period
    /// N·sin(2π/N) (the dispersion-corrected 2π), exactly critical for the
    /// discrete action at b₀ = 1, κ = ½.
    fn discrete_circle(n: usize) -> DiscreteLoop {
        let period = n as f64 * (std::f64::consts::TAU / n as f64).sin();
        DiscreteLoop::circle(Vec2::new(0.0, 1.0), 1.0, true, n, period).unwrap()
    }

    #[test]
    fn transverse_nullity_of_reference_maps() {
        assert_eq!(transverse_nullity(&Matrix2::identity()), 2);
        assert_eq!(transverse_nullity(&Matrix2::new(2.0, 0.0, 0.0, 0.5)), 0);
        let a = std::f64::consts::TAU / 3.0;
        let rot = Matrix2::new(a.cos(), -a.sin(), a.sin(), a.cos());
        assert_eq!(transverse_nullity(&rot), 0);
        // Shear: 1 is an eigenvalue with one eigenvector.
        assert_eq!(transverse_nullity(&Matrix2::new(1.0, 1.0, 0.0, 1.0)), 1);
    }

    #[test]
    fn partition_of_a_third_turn_rotation() {
        let a = std::f64::consts::TAU / 3.0;
        let rot = SymplecticMatrix::new(DMatrix::from_row_slice(
            2,
            2,
            &[a.cos(), -a.sin(), a.sin(), a.cos()],
        ))
        .unwrap();
        let part = iterated_nullity_partition(&rot, 12).unwrap();
        assert!(!part.ambiguous);
        assert_eq!(part.classes.len(), 2);
        assert_eq!(part.classes[0].n_j, 1);
        assert_eq!(part.classes[0].nu, 0);
        assert_eq!(
            part.classes[0].members,
            vec![1, 2, 4, 5, 7, 8, 10, 11]
        );
        assert_eq!(part.classes[1].n_j, 3);
        assert_eq!(part.classes[1].nu, 2);
        assert_eq!(part.classes[1].members, vec![3, 6, 9, 12]);
    }

    #[test]
    fn partition_of_identity_and_hyperbolic() {
        let id = SymplecticMatrix::new(DMatrix::identity(2, 2)).unwrap();
        let part = iterated_nullity_partition(&id, 7).unwrap();
        assert_eq!(part.classes.len(), 1);
        assert_eq!(part.classes[0].nu, 2);
        assert_eq!(part.classes[0].n_j, 1);

        let id4 = SymplecticMatrix::new(DMatrix::identity(4, 4)).unwrap();
        assert_eq!(iterated_nullity_partition(&id4, 5).unwrap().classes[0].nu, 4);

        let hyp =
            SymplecticMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5])).unwrap();
        let part = iterated_nullity_partition(&hyp, 12).unwrap();
        assert_eq!(part.classes.len(), 1);
        assert_eq!(part.classes[0].nu, 0);
        assert_eq!(part.classes[0].members.len(), 12);
    }

    #[test]
    fn partition_of_a_mixed_sp4_block() {
        // rot(2π/3) ⊕ rot(π) in (q₁,p₁,q₂,p₂) layout via direct embedding.
        let a = std::f64::consts::TAU / 3.0;
        let mut m = DMatrix::<f64>::zeros(4, 4);
        // Block acting on (e₁ = q₁, f₁ = p₁): standard rotation is symplectic.
        m[(0, 0)] = a.cos();
        m[(0, 1)] = -a.sin();
        m[(1, 0)] = a.sin();
        m[(1, 1)] = a.cos();
        m[(2, 2)] = -1.0;
        m[(3, 3)] = -1.0;
        // Convert to the (q₁,q₂,p₁,p₂) ordering used by standard_form.
        let perm = [0usize, 2, 1, 3];
        let mut reordered = DMatrix::<f64>::zeros(4, 4);
        for r in 0..4 {
            for c in 0..4 {
                reordered[(r, c)] = m[(perm[r], perm[c])];
            }
        }
        let p = SymplecticMatrix::new(reordered).unwrap();
        let part = iterated_nullity_partition(&p, 12).unwrap();
        // Classes: coprime to 6 → ν 0; even not divisible by 3 → ν 2 (from −1);
        // divisible by 3, odd → ν 2 (from e^{±2πi/3}); divisible by 6 → ν 4.
        let by_nj: std::collections::BTreeMap<usize, (Vec<usize>, usize)> = part
            .classes
            .iter()
            .map(|c| (c.n_j, (c.members.clone(), c.nu)))
            .collect();
        assert_eq!(by_nj[&1].0, vec![1, 5, 7, 11]);
        assert_eq!(by_nj[&1].1, 0);
        assert_eq!(by_nj[&2].0, vec![2, 4, 8, 10]);
        assert_eq!(by_nj[&2].1, 2);
        assert_eq!(by_nj[&3].0, vec![3, 9]);
        assert_eq!(by_nj[&3].1, 2);
        assert_eq!(by_nj[&6].0, vec![6, 12]);
        assert_eq!(by_nj[&6].1, 4);
    }

    #[test]
    fn partition_matches_brute_force_kernels() {
        // Half generic symplectic products, half conjugated rational
        // rotations; the partition must reproduce dim ker(Pⁿ − I) for all n.
        let mut rng = testing::rng(61);
        use rand::Rng;
        let n_max = 12;
        for trial in 0..50 {
            let m = if trial % 2 == 0 {
                testing::rand_symplectic(&mut rng, 1, 4, 0.8)
            } else {
                let q: usize = rng.gen_range(1..=n_max);
                let num: usize = rng.gen_range(0..q);
                let ang = std::f64::consts::TAU * num as f64 / q as f64;
                let rot =
                    DMatrix::from_row_slice(2, 2, &[ang.cos(), -ang.sin(), ang.sin(), ang.cos()]);
                let conj = testing::rand_symplectic(&mut rng, 1, 3, 0.5);
                let cinv = conj.clone().try_inverse().unwrap();
                &conj * rot * cinv
            };
            let p = SymplecticMatrix::new(m.clone()).unwrap();
            let part = iterated_nullity_partition(&p, n_max).unwrap();
            for n in 1..=n_max {
                let expected = part
                    .classes
                    .iter()
                    .find(|c| c.members.contains(&n))
                    .map(|c| c.nu)
                    .unwrap();
                let mut pn = DMatrix::<f64>::identity(2, 2);
                for _ in 0..n {
                    pn = &pn * &m;
                }
                let brute = (pn - DMatrix::<f64>::identity(2, 2))
                    .svd(false, false)
                    .singular_values
                    .iter()
                    .filter(|s| **s < 1e-6)
                    .count();
                assert_eq!(
                    expected, brute,
                    "trial {trial}, n = {n}: partition {expected} vs kernel {brute}"
                );
            }
        }
    }

    #[test]
    fn near_miss_angles_raise_the_ambiguity_flag() {
        let ang = std::f64::consts::TAU / 3.0 + 5e-5;
        let rot = SymplecticMatrix::new(DMatrix::from_row_slice(
            2,
            2,
            &[ang.cos(), -ang.sin(), ang.sin(), ang.cos()],
        ))
        .unwrap();
        let part = iterated_nullity_partition(&rot, 12).unwrap();
        assert!(part.ambiguous);
        // Nothing snapped: every class reports zero nullity.
        assert!(part.classes.iter().all(|c| c.nu == 0));
    }

    #[test]
    fn well_loop_fixed_index_matches_the_dispersion_count() {
        let sys = well_system();
        let (n, t) = (65usize, 2.3);
        let l = well_loop(n, t);
        let (ind, summary) = fixed_period_index(&sys, 0.0, &l, 1e-6).unwrap();
        let oracle = well_bott_oracle(n, t, 1.0, 0.0);
        assert_eq!(ind, oracle);
        assert_eq!(ind, 9, "N=65, T=2.3: modes 0, ±1, ±2 plus the aliased band");
        // u₂ zero modes: the k = 0 translation only (odd N keeps sawtooth out).
        assert_eq!(summary.zero, 1);
    }

    #[test]
    fn well_loop_free_index_equals_fixed() {
        // At a constant loop the period row/column of the bordered Hessian
        // vanishes identically, so the free index adds nothing.
        let sys = well_system();
        let l = well_loop(65, 2.3);
        let free = free_period_index(&sys, 0.0, &l, 1e-6).unwrap();
        let (fixed, _) = fixed_period_index(&sys, 0.0, &l, 1e-6).unwrap();
        assert_eq!(free, fixed);
    }

    #[test]
    fn noncritical_loops_are_rejected() {
        let sys = well_system();
        // Constant loop off the well bottom: ∂V ≠ 0.
        let l = DiscreteLoop::constant(Vec2::new(0.3, 0.3), 2.0, 32).unwrap();
        assert!(matches!(
            fixed_period_index(&sys, 0.0, &l, 1e-6),
            Err(Error::NotCritical { .. })
        ));
    }

    #[test]
    fn bott_function_matches_the_dispersion_count() {
        let sys = well_system();
        let (n, t) = (65usize, 2.3);
        let l = well_loop(n, t);
        for theta in [
            0.0,
            std::f64::consts::PI,
            std::f64::consts::TAU / 3.0,
            2.0 * std::f64::consts::TAU / 3.0,
            1.234,
        ] {
            let got = bott_function(&sys, 0.0, &l, theta, 1e-6).unwrap();
            let want = well_bott_oracle(n, t, 1.0, theta);
            assert_eq!(got, want, "Λ at θ = {theta}");
        }
    }

    #[test]
    fn bott_iteration_formula_holds_discretely() {
        // ind_fixed(γⁿ) = Σ_{ωⁿ=1} Λ(ω), exactly, for n = 2 and 3.
        let sys = well_system();
        let (n, t) = (65usize, 2.3);
        let l = well_loop(n, t);
        let lam = |theta: f64| bott_function(&sys, 0.0, &l, theta, 1e-6).unwrap();

        let l2 = iterate(&l, 2).unwrap();
        let (ind2, _) = fixed_period_index(&sys, 0.0, &l2, 1e-6).unwrap();
        assert_eq!(ind2, lam(0.0) + lam(std::f64::consts::PI));

        let l3 = iterate(&l, 3).unwrap();
        let (ind3, _) = fixed_period_index(&sys, 0.0, &l3, 1e-6).unwrap();
        assert_eq!(
            ind3,
            lam(0.0)
                + lam(std::f64::consts::TAU / 3.0)
                + lam(2.0 * std::f64::consts::TAU / 3.0)
        );
    }

    #[test]
    fn bott_function_is_lower_semicontinuous_at_the_jump() {
        // The twisted Hessian has an exact zero mode where the dispersion
        // relation crosses the curvature bound; just off that angle the mode
        // is strictly signed, so Λ(nearby) ≥ Λ(at the angle).
        let sys = well_system();
        let (n, t) = (65usize, 2.3);
        let l = well_loop(n, t);
        let bound = std::f64::consts::TAU * t; // 2πT√a, a = 1
        // Jump angle: mode k = 2, ν = 2 + τ with N sin(2πν/N) = bound.
        let nu = (n as f64 / std::f64::consts::TAU) * (bound / n as f64).asin();
        let tau = nu - 2.0;
        assert!(tau > 0.0 && tau < 1.0);
        let theta0 = std::f64::consts::TAU * tau;
        let at = bott_function(&sys, 0.0, &l, theta0, 1e-6).unwrap();
        let below = bott_function(&sys, 0.0, &l, theta0 - 0.01, 1e-6).unwrap();
        let above = bott_function(&sys, 0.0, &l, theta0 + 0.01, 1e-6).unwrap();
        assert!(below >= at && above >= at, "{below} / {at} / {above}");
        assert!(below.max(above) > at, "a jump should actually occur here");
    }

    #[test]
    fn discrete_circle_is_a_degenerate_minimum() {
        let sys = MagneticSystem::plane_constant_field(1.0);
        let l = discrete_circle(65);
        let g = crate::loops::gradient(&sys, 0.5, &l).unwrap();
        assert!(g.norm < 1e-10, "discrete circle gradient norm {}", g.norm);

        let h = free_period_hessian(&sys, 0.5, &l).unwrap();
        let (fixed, free, summary) = indices_of(&h).unwrap();
        assert_eq!(fixed, 0);
        assert_eq!(free, 0);
        // Exact symmetries: two translations, the rotation, and the flat
        // radius ray (fixed period); bordering with T kills one flat
        // direction, leaving a 3-dimensional kernel.
        assert_eq!(summary.zero, 4);
        let free_zero = summarize(
            SymmetricEigen::new(h.clone()).eigenvalues.as_slice(),
        )
        .zero;
        assert_eq!(free_zero, 3);
    }

    #[test]
    fn circle_nullity_matches_the_hessian_kernel() {
        // Transverse nullity from the ODE monodromy (2) plus the (ẋ, 0)
        // direction equals the free-period Hessian kernel (3).
        let sys = MagneticSystem::plane_constant_field(1.0);
        let state = PhaseState::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0));
        let traj = integrate_orbit(&sys, state, std::f64::consts::TAU, 4096).unwrap();
        let mono = monodromy(&sys, &traj).unwrap();
        assert_eq!(nullity(&mono), 2);

        let l = discrete_circle(65);
        let h = free_period_hessian(&sys, 0.5, &l).unwrap();
        let kernel = summarize(SymmetricEigen::new(h).eigenvalues.as_slice()).zero;
        assert_eq!(kernel, nullity(&mono) + 1);
    }

    #[test]
    fn index_report_on_the_circle() {
        let sys = MagneticSystem::plane_constant_field(1.0);
        let state = PhaseState::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0));
        let traj = integrate_orbit(&sys, state, std::f64::consts::TAU, 2048).unwrap();
        let mono = monodromy(&sys, &traj).unwrap();
        let l = discrete_circle(65);
        let report = index_report(&sys, 0.5, &l, &mono, 64, 1e-6).unwrap();
        assert_eq!(report.ind_free, 0);
        assert_eq!(report.ind_fixed, 0);
        assert_eq!(report.nullity, 2);
        assert_eq!(report.bott_samples.len(), 64);
        assert_eq!(report.bott_samples[0].1, report.ind_fixed);
        // A degenerate minimum: the whole Bott sweep vanishes.
        assert_relative_eq!(report.mean_index, 0.0);
        // Round trip through JSON.
        let json = serde_json::to_string(&report).unwrap();
        let back: IndexReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.ind_free, report.ind_free);
        assert_eq!(back.bott_samples, report.bott_samples);
    }

    #[test]
    fn mean_index_validates_and_averages() {
        let flat: Vec<(f64, usize)> = (0..64)
            .map(|k| (std::f64::consts::TAU * k as f64 / 64.0, 0))
            .collect();
        assert_relative_eq!(mean_index(&flat).unwrap(), 0.0);
        let half: Vec<(f64, usize)> = (0..128)
            .map(|k| {
                (
                    std::f64::consts::TAU * k as f64 / 128.0,
                    usize::from(k < 64),
                )
            })
            .collect();
        assert_relative_eq!(mean_index(&half).unwrap(), 0.5);
        assert!(mean_index(&flat[..32]).is_err());
        let mut crooked = flat.clone();
        crooked[5].0 += 0.1;
        assert!(mean_index(&crooked).is_err());
    }

    #[test]
    fn well_loop_mean_index_tracks_iterated_indices() {
        // Mean of the sweep ≈ ind(γ⁸)/8 — the discrete Bloch identity makes
        // the agreement tight well below the 0.3 criterion used downstream.
        let sys = well_system();
        let (n, t) = (65usize, 2.3);
        let l = well_loop(n, t);
        let sweep = bott_sweep(&sys, 0.0, &l, 64, 1e-6).unwrap();
        let mean = mean_index(&sweep).unwrap();
        let l8 = iterate(&l, 8).unwrap();
        let (ind8, _) = fixed_period_index(&sys, 0.0, &l8, 1e-6).unwrap();
        let reference = ind8 as f64 / 8.0;
        assert!(
            (mean - reference).abs() < 0.3,
            "mean {mean} vs ind(γ⁸)/8 = {reference}"
        );
    }

    #[test]
    fn action_is_consistent_with_the_well_setup() {
        // Sanity anchor for the oracle: the critical constant loop really has
        // S = 0 at κ = 0 (V at the bottom vanishes identically).
        let sys = well_system();
        let l = well_loop(65, 2.3);
        assert_relative_eq!(action(&sys, 0.0, &l).unwrap(), 0.0, epsilon = 1e-12);
    }
}
