//! Magnetic geodesic flow: the second-order ODE, its linearization, and
//! monodromy data for closed orbits.
//!
//! The equation of motion in chart coordinates is
//!
//! ```text
//! a^k = −Γ^k_ij v^i v^j + (Y(x) v)^k − (grad V)^k
//! ```
//!
//! integrated with fixed-step RK4 (deterministic, no adaptive state), with
//! the variational equations carried alongside when a monodromy matrix is
//! requested. The Hamiltonian side uses the Legendre transform of the
//! quadratic Lagrangian L(x,v) = ½|v|²_g − θ_x(v) − V(x), i.e.
//! p = g(x)v − θ(x) and H(x,p) = ½|p+θ|²_{g⁻¹} + V. The sign of the magnetic
//! term is the one consistent with a = Y(v): see the circle test below.

use nalgebra::{DMatrix, DVector, Matrix4, Vector2, Vector4};
use num_complex::Complex64;

use crate::geometry::{position_distance, ChartTopology, MagneticSystem, Mat2, Vec2, PLANE_BOUND};
use crate::{Error, Result};

pub type Mat4 = Matrix4<f64>;
pub type Vec4 = Vector4<f64>;

/// Closure tolerances defining "periodic orbit" at the ODE level.
pub const CLOSURE_POS_TOL: f64 = 1e-6;
pub const CLOSURE_VEL_TOL: f64 = 1e-5;

/// Below this speed an orbit is treated as constant (no transverse structure).
pub const SPEED_FLOOR: f64 = 1e-8;

/// Point-velocity pair in chart coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseState {
    pub x: Vec2,
    pub v: Vec2,
}

impl PhaseState {
    pub fn new(x: Vec2, v: Vec2) -> Self {
        Self { x, v }
    }

    /// Energy E(x,v) = ½|v|²_g + V(x).
    pub fn energy(&self, system: &MagneticSystem) -> f64 {
        0.5 * self.v.dot(&(system.metric(self.x) * self.v)) + system.potential(self.x)
    }
}

/// Fixed-step RK4 trajectory with sampled states and the observed energy drift.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<PhaseState>,
    pub dt: f64,
    pub max_energy_drift: f64,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.dt * (self.states.len() - 1) as f64
    }

    pub fn start(&self) -> PhaseState {
        self.states[0]
    }

    pub fn end(&self) -> PhaseState {
        *self.states.last().expect("trajectory has at least one state")
    }

    /// (position, velocity) closure error between the endpoints, with torus wrap.
    pub fn closure_error(&self, system: &MagneticSystem) -> (f64, f64) {
        let a = self.start();
        let b = self.end();
        (
            position_distance(system.topology(), b.x, a.x),
            (b.v - a.v).norm(),
        )
    }
}

/// Monodromy of a closed orbit: linearized period map in an adapted
/// symplectic basis, with the transverse Poincaré block extracted.
#[derive(Debug, Clone)]
pub struct MonodromyData {
    /// dφ_H^T(z) written in the adapted basis (e₁, f₁, e₂, f₂); block
    /// structure: first row (1,0,0,0), f₁ column (0,1,0,0)ᵀ.
    pub full_matrix: Mat4,
    /// Transverse 2×2 block (linearized Poincaré map inside the energy level).
    pub poincare: Mat2,
    /// Basis columns (e₁, f₁, e₂, f₂) in canonical (x,p) coordinates;
    /// f₁ = X_H(z), e₁ = ∇H/|∇H|², (e₂,f₂) spans the transverse symplectic plane.
    pub basis: Mat4,
    /// Eigenvalues of the period map: {1, 1} ∪ spectrum of P.
    pub spectrum_full: Vec<Complex64>,
    /// Eigenvalues of P.
    pub spectrum_p: Vec<Complex64>,
    /// Period map in canonical (x,p) coordinates (no basis change).
    pub canonical_matrix: Mat4,
    /// ‖MᵀΩM − Ω‖_F of `full_matrix` in the adapted basis.
    pub symplectic_residual: f64,
    /// How far the raw basis-changed matrix was from the exact block form
    /// before snapping (conservation-law violation of the integrator).
    pub structural_residual: f64,
    /// (position, velocity) closure error of the input orbit.
    pub closure: (f64, f64),
}

// ---- equation of motion -----------------------------------------------------

/// Acceleration a(x,v) of the magnetic geodesic equation.
pub fn accel(system: &MagneticSystem, x: Vec2, v: Vec2) -> Result<Vec2> {
    let gamma = system.christoffel(x)?;
    let y = system.lorentz_at(x)?;
    let grad_v = system.metric_inv(x)? * system.potential_d(x);
    let magnetic = y * v;
    let mut a = Vec2::zeros();
    for k in 0..2 {
        let mut quad = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                quad += gamma[k][i][j] * v[i] * v[j];
            }
        }
        a[k] = -quad + magnetic[k] - grad_v[k];
    }
    Ok(a)
}

/// Phase-space vector field: state ↦ (v, a).
pub fn magnetic_rhs(system: &MagneticSystem, state: &PhaseState) -> Result<(Vec2, Vec2)> {
    Ok((state.v, accel(system, state.x, state.v)?))
}

/// Jacobians (∂a/∂x, ∂a/∂v) of the acceleration, from analytic derivatives.
pub fn accel_jacobians(system: &MagneticSystem, x: Vec2, v: Vec2) -> Result<(Mat2, Mat2)> {
    let gamma = system.christoffel(x)?;
    let dgamma = system.christoffel_d(x)?;
    let y = system.lorentz_at(x)?;
    let dy = system.lorentz_d(x)?;
    let ginv = system.metric_inv(x)?;
    let dg = system.metric_d(x);
    let dginv = [-ginv * dg[0] * ginv, -ginv * dg[1] * ginv];
    let vd = system.potential_d(x);
    let vdd = system.potential_dd(x);

    let mut dax = Mat2::zeros();
    let mut dav = Mat2::zeros();
    for m in 0..2 {
        let dyv = dy[m] * v;
        // ∂_m (g⁻¹ ∇V) = (∂_m g⁻¹)∇V + g⁻¹ ∂_m∇V
        let dgrad = dginv[m] * vd + ginv * Vector2::new(vdd[(m, 0)], vdd[(m, 1)]);
        for k in 0..2 {
            let mut quad = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    quad += dgamma[m][k][i][j] * v[i] * v[j];
                }
            }
            dax[(k, m)] = -quad + dyv[k] - dgrad[k];
            let mut lin = 0.0;
            for j in 0..2 {
                lin += gamma[k][m][j] * v[j];
            }
            dav[(k, m)] = -2.0 * lin + y[(k, m)];
        }
    }
    Ok((dax, dav))
}

fn check_chart(system: &MagneticSystem, x: Vec2, t: f64) -> Result<()> {
    if system.topology() == ChartTopology::Plane
        && (x[0].abs() > PLANE_BOUND || x[1].abs() > PLANE_BOUND)
    {
        return Err(Error::LeftChart { t });
    }
    if !(x[0].is_finite() && x[1].is_finite()) {
        return Err(Error::LeftChart { t });
    }
    Ok(())
}

fn rk4_step(system: &MagneticSystem, s: PhaseState, dt: f64) -> Result<PhaseState> {
    let f = |st: &PhaseState| magnetic_rhs(system, st);
    let (k1x, k1v) = f(&s)?;
    let s2 = PhaseState::new(s.x + k1x * (dt / 2.0), s.v + k1v * (dt / 2.0));
    let (k2x, k2v) = f(&s2)?;
    let s3 = PhaseState::new(s.x + k2x * (dt / 2.0), s.v + k2v * (dt / 2.0));
    let (k3x, k3v) = f(&s3)?;
    let s4 = PhaseState::new(s.x + k3x * dt, s.v + k3v * dt);
    let (k4x, k4v) = f(&s4)?;
    Ok(PhaseState::new(
        s.x + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (dt / 6.0),
        s.v + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0),
    ))
}

/// Flow the state for signed time `t` in `steps` RK4 steps (internal: the
/// public integrator restricts to forward time).
pub(crate) fn flow_steps(
    system: &MagneticSystem,
    state: PhaseState,
    t: f64,
    steps: usize,
) -> Result<PhaseState> {
    let dt = t / steps as f64;
    let mut s = state;
    for i in 0..steps {
        s = rk4_step(system, s, dt)?;
        check_chart(system, s.x, dt * (i + 1) as f64)?;
    }
    Ok(s)
}

/// Integrate the magnetic geodesic equation with fixed-step RK4.
///
/// Positions are kept on the universal-cover lift (the torus chart never
/// wraps mid-flight), so winding is readable from the endpoints.
pub fn integrate_orbit(
    system: &MagneticSystem,
    state0: PhaseState,
    t: f64,
    steps: usize,
) -> Result<Trajectory> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Invalid(format!("duration must be positive, got {t}")));
    }
    if steps < 8 {
        return Err(Error::Invalid(format!("need at least 8 steps, got {steps}")));
    }
    check_chart(system, state0.x, 0.0)?;
    let dt = t / steps as f64;
    let e0 = state0.energy(system);
    let mut states = Vec::with_capacity(steps + 1);
    states.push(state0);
    let mut drift: f64 = 0.0;
    let mut s = state0;
    for i in 0..steps {
        s = rk4_step(system, s, dt)?;
        check_chart(system, s.x, dt * (i + 1) as f64)?;
        drift = drift.max((s.energy(system) - e0).abs());
        states.push(s);
    }
    Ok(Trajectory {
        states,
        dt,
        max_energy_drift: drift,
    })
}

// ---- variational equations --------------------------------------------------

fn variational_matrix(system: &MagneticSystem, s: &PhaseState) -> Result<Mat4> {
    let (dax, dav) = accel_jacobians(system, s.x, s.v)?;
    let mut a = Mat4::zeros();
    a.fixed_view_mut::<2, 2>(0, 2).copy_from(&Mat2::identity());
    a.fixed_view_mut::<2, 2>(2, 0).copy_from(&dax);
    a.fixed_view_mut::<2, 2>(2, 2).copy_from(&dav);
    Ok(a)
}

/// Flow the state and the 4×4 linearization (in (x,v) coordinates) together.
pub fn flow_with_linearization(
    system: &MagneticSystem,
    state: PhaseState,
    t: f64,
    steps: usize,
) -> Result<(PhaseState, Mat4)> {
    let dt = t / steps as f64;
    let mut s = state;
    let mut m = Mat4::identity();
    for i in 0..steps {
        // RK4 on the product system d(z, M)/dt = (f(z), A(z)M).
        let (k1x, k1v) = magnetic_rhs(system, &s)?;
        let k1m = variational_matrix(system, &s)? * m;

        let s2 = PhaseState::new(s.x + k1x * (dt / 2.0), s.v + k1v * (dt / 2.0));
        let (k2x, k2v) = magnetic_rhs(system, &s2)?;
        let k2m = variational_matrix(system, &s2)? * (m + k1m * (dt / 2.0));

        let s3 = PhaseState::new(s.x + k2x * (dt / 2.0), s.v + k2v * (dt / 2.0));
        let (k3x, k3v) = magnetic_rhs(system, &s3)?;
        let k3m = variational_matrix(system, &s3)? * (m + k2m * (dt / 2.0));

        let s4 = PhaseState::new(s.x + k3x * dt, s.v + k3v * dt);
        let (k4x, k4v) = magnetic_rhs(system, &s4)?;
        let k4m = variational_matrix(system, &s4)? * (m + k3m * dt);

        s = PhaseState::new(
            s.x + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (dt / 6.0),
            s.v + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0),
        );
        m += (k1m + k2m * 2.0 + k3m * 2.0 + k4m) * (dt / 6.0);
        check_chart(system, s.x, dt * (i + 1) as f64)?;
    }
    Ok((s, m))
}

// ---- Legendre transform and Hamiltonian side --------------------------------

/// Conjugate momentum p = g(x)v − θ(x).
pub fn momentum(system: &MagneticSystem, x: Vec2, v: Vec2) -> Vec2 {
    system.metric(x) * v - system.theta(x)
}

/// Velocity recovered from momentum: v = g⁻¹(p + θ).
pub fn velocity_of_momentum(system: &MagneticSystem, x: Vec2, p: Vec2) -> Result<Vec2> {
    Ok(system.metric_inv(x)? * (p + system.theta(x)))
}

/// H(x,p) = ½|p+θ|²_{g⁻¹} + V(x); equals E(x,v) under the Legendre transform.
pub fn hamiltonian(system: &MagneticSystem, x: Vec2, p: Vec2) -> Result<f64> {
    let w = p + system.theta(x);
    Ok(0.5 * w.dot(&(system.metric_inv(x)? * w)) + system.potential(x))
}

/// Partial derivatives (∂H/∂x, ∂H/∂p).
pub fn hamiltonian_partials(system: &MagneticSystem, x: Vec2, p: Vec2) -> Result<(Vec2, Vec2)> {
    let ginv = system.metric_inv(x)?;
    let dg = system.metric_d(x);
    let dginv = [-ginv * dg[0] * ginv, -ginv * dg[1] * ginv];
    let td = system.theta_d(x);
    let vd = system.potential_d(x);
    let w = p + system.theta(x);
    let v = ginv * w;
    let mut hx = Vec2::zeros();
    for m in 0..2 {
        hx[m] = 0.5 * w.dot(&(dginv[m] * w)) + td[(m, 0)] * v[0] + td[(m, 1)] * v[1] + vd[m];
    }
    Ok((hx, v))
}

/// Hamiltonian vector field X_H = (∂H/∂p, −∂H/∂x) in (x,p) coordinates.
pub fn hamiltonian_field(system: &MagneticSystem, x: Vec2, p: Vec2) -> Result<Vec4> {
    let (hx, hp) = hamiltonian_partials(system, x, p)?;
    Ok(Vec4::new(hp[0], hp[1], -hx[0], -hx[1]))
}

/// Differential of the Legendre transform (x,v) ↦ (x,p): Λ = [[I,0],[W,G]],
/// W_{km} = (∂_m g · v)_k − ∂_m θ_k.
pub fn legendre_jacobian(system: &MagneticSystem, x: Vec2, v: Vec2) -> Mat4 {
    let g = system.metric(x);
    let dg = system.metric_d(x);
    let td = system.theta_d(x);
    let mut w = Mat2::zeros();
    for m in 0..2 {
        let col = dg[m] * v;
        for k in 0..2 {
            w[(k, m)] = col[k] - td[(m, k)];
        }
    }
    let mut lam = Mat4::identity();
    lam.fixed_view_mut::<2, 2>(2, 0).copy_from(&w);
    lam.fixed_view_mut::<2, 2>(2, 2).copy_from(&g);
    lam
}

/// Canonical symplectic form matrix in (x,p) coordinates (ω(e₁-slot pairing
/// chosen so that ω(∇H/|∇H|², X_H) = 1).
pub fn j_canonical() -> Mat4 {
    let mut j = Mat4::zeros();
    j.fixed_view_mut::<2, 2>(0, 2)
        .copy_from(&(-Mat2::identity()));
    j.fixed_view_mut::<2, 2>(2, 0).copy_from(&Mat2::identity());
    j
}

/// Form matrix in the adapted basis (e₁, f₁, e₂, f₂): blockdiag(J₂, J₂).
pub fn omega_adapted() -> Mat4 {
    let mut j = Mat4::zeros();
    j[(0, 1)] = 1.0;
    j[(1, 0)] = -1.0;
    j[(2, 3)] = 1.0;
    j[(3, 2)] = -1.0;
    j
}

fn omega(j: &Mat4, a: &Vec4, b: &Vec4) -> f64 {
    a.dot(&(j * b))
}

/// Adapted symplectic basis at a phase point: columns (e₁, f₁, e₂, f₂) with
/// f₁ = X_H, e₁ = ∇H/|∇H|² (so ω(e₁,f₁) = 1 exactly), and (e₂, f₂) a
/// symplectic-normalized basis of the orthogonal complement of
/// span{J∇H, JX_H} — equivalently, of the tangent space of the energy level
/// transverse to the flow.
pub fn adapted_basis(system: &MagneticSystem, x: Vec2, p: Vec2) -> Result<Mat4> {
    let j = j_canonical();
    let (hx, hp) = hamiltonian_partials(system, x, p)?;
    let grad = Vec4::new(hx[0], hx[1], hp[0], hp[1]);
    let n2 = grad.norm_squared();
    if n2 < 1e-16 {
        return Err(Error::ConstantOrbit { speed: hp.norm() });
    }
    let e1 = grad / n2;
    let f1 = Vec4::new(hp[0], hp[1], -hx[0], -hx[1]);

    // W = {u : ω(e₁,u) = ω(f₁,u) = 0}: kernel of the 2×4 constraint matrix,
    // found as the two smallest eigenvectors of its normal matrix.
    let je1 = j * e1;
    let jf1 = j * f1;
    let normal = je1 * je1.transpose() + jf1 * jf1.transpose();
    let eig = nalgebra::SymmetricEigen::new(normal);
    let mut idx: Vec<usize> = (0..4).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut w1: Vec4 = eig.eigenvectors.column(idx[0]).into();
    let mut w2: Vec4 = eig.eigenvectors.column(idx[1]).into();
    // Deterministic sign: largest-magnitude component positive.
    for w in [&mut w1, &mut w2] {
        let mut k = 0;
        for i in 1..4 {
            if w[i].abs() > w[k].abs() {
                k = i;
            }
        }
        if w[k] < 0.0 {
            *w = -*w;
        }
    }
    let s = omega(&j, &w1, &w2);
    if s.abs() < 1e-10 {
        return Err(Error::Degeneracy(
            "transverse plane is not symplectic (ω(w₁,w₂) ≈ 0)".into(),
        ));
    }
    let e2 = w1;
    let f2 = w2 / s;

    let mut b = Mat4::zeros();
    b.set_column(0, &e1);
    b.set_column(1, &f1);
    b.set_column(2, &e2);
    b.set_column(3, &f2);
    Ok(b)
}

fn eigenvalues_2x2(p: &Mat2) -> Vec<Complex64> {
    let tr = p[(0, 0)] + p[(1, 1)];
    let det = p[(0, 0)] * p[(1, 1)] - p[(0, 1)] * p[(1, 0)];
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        let r = disc.sqrt();
        vec![
            Complex64::new(tr / 2.0 + r, 0.0),
            Complex64::new(tr / 2.0 - r, 0.0),
        ]
    } else {
        let r = (-disc).sqrt();
        vec![
            Complex64::new(tr / 2.0, r),
            Complex64::new(tr / 2.0, -r),
        ]
    }
}

/// Monodromy data of a closed orbit, from its integrated trajectory.
///
/// The trajectory must close up within the closure tolerances and be
/// non-constant. The variational equations are re-integrated along the orbit,
/// pushed to the Hamiltonian side through the Legendre differential, and
/// written in the adapted basis, where the conservation-law block structure
/// (first row, flow column) is enforced exactly after a residual check.
pub fn monodromy(system: &MagneticSystem, orbit: &Trajectory) -> Result<MonodromyData> {
    let z0 = orbit.start();
    let speed = z0.v.norm();
    if speed < SPEED_FLOOR {
        return Err(Error::ConstantOrbit { speed });
    }
    let (pos_err, vel_err) = orbit.closure_error(system);
    if pos_err > CLOSURE_POS_TOL || vel_err > CLOSURE_VEL_TOL {
        return Err(Error::NotPeriodic {
            pos_err,
            vel_err,
            pos_tol: CLOSURE_POS_TOL,
            vel_tol: CLOSURE_VEL_TOL,
        });
    }
    let steps = orbit.states.len() - 1;
    let t = orbit.duration();
    let (end, m_xv) = flow_with_linearization(system, z0, t, steps)?;

    // Push to (x,p) coordinates: M_xp = Λ(end) · M_xv · Λ(start)⁻¹.
    let lam0 = legendre_jacobian(system, z0.x, z0.v);
    let lam1 = legendre_jacobian(system, end.x, end.v);
    let lam0_inv = lam0
        .try_inverse()
        .ok_or_else(|| Error::Degeneracy("Legendre differential not invertible".into()))?;
    let m_xp = lam1 * m_xv * lam0_inv;

    let p0 = momentum(system, z0.x, z0.v);
    let basis = adapted_basis(system, z0.x, p0)?;
    let basis_inv = basis
        .try_inverse()
        .ok_or_else(|| Error::Degeneracy("adapted basis not invertible".into()))?;
    let raw = basis_inv * m_xp * basis;

    // Exact arithmetic gives first row (1,0,0,0) (energy conservation) and
    // f₁ column (0,1,0,0)ᵀ (flow invariance); measure the violation, then snap.
    let mut structural = 0.0f64;
    for c in 0..4 {
        let want = if c == 0 { 1.0 } else { 0.0 };
        structural = structural.max((raw[(0, c)] - want).abs());
    }
    for r in 0..4 {
        let want = if r == 1 { 1.0 } else { 0.0 };
        structural = structural.max((raw[(r, 1)] - want).abs());
    }
    if structural > 1e-3 {
        return Err(Error::Degeneracy(format!(
            "monodromy block structure violated by {structural:.3e}; orbit not closed well enough"
        )));
    }
    let mut full = raw;
    for c in 0..4 {
        full[(0, c)] = if c == 0 { 1.0 } else { 0.0 };
    }
    for r in 0..4 {
        full[(r, 1)] = if r == 1 { 1.0 } else { 0.0 };
    }

    let poincare: Mat2 = full.fixed_view::<2, 2>(2, 2).into();
    let spectrum_p = eigenvalues_2x2(&poincare);
    let mut spectrum_full = vec![Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)];
    spectrum_full.extend_from_slice(&spectrum_p);

    let om = omega_adapted();
    let symplectic_residual = (full.transpose() * om * full - om).norm();

    Ok(MonodromyData {
        full_matrix: full,
        poincare,
        basis,
        spectrum_full,
        spectrum_p,
        canonical_matrix: m_xp,
        symplectic_residual,
        structural_residual: structural,
        closure: (pos_err, vel_err),
    })
}

// ---- closed-orbit refinement -------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct RefineOptions {
    /// RK4 steps per flow evaluation.
    pub steps: usize,
    pub max_iter: usize,
    pub pos_tol: f64,
    pub vel_tol: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            steps: 2048,
            max_iter: 40,
            pos_tol: CLOSURE_POS_TOL,
            vel_tol: CLOSURE_VEL_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RefinedOrbit {
    pub state: PhaseState,
    pub period: f64,
    pub pos_err: f64,
    pub vel_err: f64,
    pub iterations: usize,
}

/// Polish an approximately periodic initial condition into a closed orbit of
/// the flow: damped Gauss–Newton on F(z,T) = φ_T(z) − z with the min-norm
/// pseudo-inverse step (the problem is underdetermined along the orbit
/// direction and any symmetry families, so the 4×5 Jacobian is rank-deficient
/// by design).
pub fn refine_periodic(
    system: &MagneticSystem,
    state0: PhaseState,
    period0: f64,
    opts: &RefineOptions,
) -> Result<RefinedOrbit> {
    const T_FLOOR: f64 = 1e-3;
    let mut z = state0;
    let mut t = period0;
    if t <= T_FLOOR {
        return Err(Error::Invalid(format!("period {t} below floor {T_FLOOR}")));
    }

    let residual = |z: &PhaseState, t: f64| -> Result<(Vec4, PhaseState)> {
        let end = flow_steps(system, *z, t, opts.steps)?;
        let mut dx = end.x - z.x;
        if system.topology() == ChartTopology::Torus {
            dx[0] -= dx[0].round();
            dx[1] -= dx[1].round();
        }
        let dv = end.v - z.v;
        Ok((Vec4::new(dx[0], dx[1], dv[0], dv[1]), end))
    };

    let (mut r, mut end) = residual(&z, t)?;
    for iter in 0..opts.max_iter {
        let pos_err = r.fixed_rows::<2>(0).norm();
        let vel_err = r.fixed_rows::<2>(2).norm();
        if pos_err < opts.pos_tol && vel_err < opts.vel_tol {
            return Ok(RefinedOrbit {
                state: z,
                period: t,
                pos_err,
                vel_err,
                iterations: iter,
            });
        }

        let (_, m) = flow_with_linearization(system, z, t, opts.steps)?;
        let a_end = accel(system, end.x, end.v)?;
        let mut jac = DMatrix::<f64>::zeros(4, 5);
        for i in 0..4 {
            for jcol in 0..4 {
                jac[(i, jcol)] = m[(i, jcol)] - if i == jcol { 1.0 } else { 0.0 };
            }
        }
        jac[(0, 4)] = end.v[0];
        jac[(1, 4)] = end.v[1];
        jac[(2, 4)] = a_end[0];
        jac[(3, 4)] = a_end[1];

        let rhs = DVector::from_column_slice(&[-r[0], -r[1], -r[2], -r[3]]);
        let svd = jac.svd(true, true);
        let step = svd
            .solve(&rhs, 1e-10)
            .map_err(|e| Error::Degeneracy(format!("refinement step solve failed: {e}")))?;

        // Damped update: halve until the residual actually shrinks.
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..8 {
            let z_try = PhaseState::new(
                z.x + Vec2::new(step[0], step[1]) * alpha,
                z.v + Vec2::new(step[2], step[3]) * alpha,
            );
            let t_try = (t + step[4] * alpha).max(T_FLOOR);
            match residual(&z_try, t_try) {
                Ok((r_try, end_try)) if r_try.norm() < r.norm() => {
                    z = z_try;
                    t = t_try;
                    r = r_try;
                    end = end_try;
                    improved = true;
                    break;
                }
                _ => alpha *= 0.5,
            }
        }
        if !improved {
            break;
        }
    }
    let pos_err = r.fixed_rows::<2>(0).norm();
    let vel_err = r.fixed_rows::<2>(2).norm();
    if pos_err < opts.pos_tol && vel_err < opts.vel_tol {
        return Ok(RefinedOrbit {
            state: z,
            period: t,
            pos_err,
            vel_err,
            iterations: opts.max_iter,
        });
    }
    Err(Error::NotPeriodic {
        pos_err,
        vel_err,
        pos_tol: opts.pos_tol,
        vel_tol: opts.vel_tol,
    })
}
