//! Discrete free-period loops and the action functional.
//!
//! A loop is N uniformly spaced samples of a 1-periodic curve together with a
//! free period T > 0. On the torus the nodes live on a continuous lift to R²
//! and the integer winding vector records the free homotopy class; the closure
//! node is defined as x_N := x_0 + winding. Velocities are central differences
//! on the lift and integrals are trapezoid sums (= means on a periodic grid),
//! which makes the n-fold iteration identities hold exactly at the quadrature
//! level rather than just in the limit.
//!
//! The action of a loop (x, T) at energy κ is
//!
//! ```text
//! S_κ = (1/N) Σ_j [ |d_j|²_{g(x_j)} / (2T) − θ(x_j)·d_j − T·V(x_j) ] + κT,
//! d_j = N (x_{j+1} − x_{j−1}) / 2,
//! ```
//!
//! the magnetic term carrying the sign that makes the constant-field circle of
//! the equations of motion a critical point (see the circle tests here and in
//! `dynamics`).

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::geometry::{MagneticSystem, Vec2};
use crate::{Error, Result};

/// Minimum sample count.
pub const MIN_NODES: usize = 16;

/// Periods at or below this trip the Palais-Smale warning (the variational
/// structure degenerates as T → 0; descent results near the floor are suspect).
pub const T_FLOOR: f64 = 1e-3;

/// A discrete free-period loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LoopRecord", into = "LoopRecord")]
pub struct DiscreteLoop {
    nodes: Vec<Vec2>,
    period: f64,
    winding: [i64; 2],
}

/// Serialized form: `{N, T, winding, nodes}`, bit-exact round trip.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LoopRecord {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "T")]
    t: f64,
    winding: [i64; 2],
    nodes: Vec<[f64; 2]>,
}

impl From<DiscreteLoop> for LoopRecord {
    fn from(l: DiscreteLoop) -> Self {
        LoopRecord {
            n: l.nodes.len(),
            t: l.period,
            winding: l.winding,
            nodes: l.nodes.iter().map(|x| [x[0], x[1]]).collect(),
        }
    }
}

impl TryFrom<LoopRecord> for DiscreteLoop {
    type Error = Error;
    fn try_from(r: LoopRecord) -> Result<Self> {
        if r.n != r.nodes.len() {
            return Err(Error::Invalid(format!(
                "loop record claims N = {} but carries {} nodes",
                r.n,
                r.nodes.len()
            )));
        }
        DiscreteLoop::new(
            r.nodes.iter().map(|x| Vector2::new(x[0], x[1])).collect(),
            r.t,
            r.winding,
        )
    }
}

/// Tangent vector (u, R) at a loop: per-node displacements plus a period slot.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopTangent {
    pub u: Vec<Vec2>,
    pub r: f64,
}

impl LoopTangent {
    pub fn zeros(n: usize) -> Self {
        Self {
            u: vec![Vec2::zeros(); n],
            r: 0.0,
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            u: self.u.iter().map(|v| v * a).collect(),
            r: self.r * a,
        }
    }
}

/// Preconditioned gradient with its norm and degeneracy diagnostics.
#[derive(Debug, Clone)]
pub struct GradientData {
    /// Metric-dual gradient direction (H¹ × ℝ representation of dS).
    pub tangent: LoopTangent,
    /// ‖grad S‖ in the loop-space metric (√⟨grad, grad⟩ = √dS[grad]).
    pub norm: f64,
    /// Set when the period has degenerated to the floor where the
    /// Palais-Smale property is lost; results remain usable but suspect.
    pub ps_warning: bool,
}

impl DiscreteLoop {
    pub fn new(nodes: Vec<Vec2>, period: f64, winding: [i64; 2]) -> Result<Self> {
        if nodes.len() < MIN_NODES {
            return Err(Error::Invalid(format!(
                "loop needs at least {MIN_NODES} nodes, got {}",
                nodes.len()
            )));
        }
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::Invalid(format!("loop period must be positive, got {period}")));
        }
        if nodes
            .iter()
            .any(|x| !(x[0].is_finite() && x[1].is_finite()))
        {
            return Err(Error::Invalid("loop nodes must be finite".into()));
        }
        Ok(Self {
            nodes,
            period,
            winding,
        })
    }

    /// Constant loop at a point (winding zero).
    pub fn constant(x: Vec2, period: f64, n: usize) -> Result<Self> {
        Self::new(vec![x; n], period, [0, 0])
    }

    /// Round circle seed of signed orientation: counterclockwise when `ccw`.
    pub fn circle(center: Vec2, radius: f64, ccw: bool, n: usize, period: f64) -> Result<Self> {
        let sign = if ccw { 1.0 } else { -1.0 };
        let nodes = (0..n)
            .map(|j| {
                let a = std::f64::consts::TAU * j as f64 / n as f64;
                center + Vec2::new(radius * a.cos(), sign * radius * a.sin())
            })
            .collect();
        Self::new(nodes, period, [0, 0])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn winding(&self) -> [i64; 2] {
        self.winding
    }

    pub fn nodes(&self) -> &[Vec2] {
        &self.nodes
    }

    pub fn ps_warning(&self) -> bool {
        self.period <= T_FLOOR
    }

    /// Node on the lift for any integer index (…, −1, 0, …, N, N+1, …).
    pub fn node_lift(&self, j: i64) -> Vec2 {
        let n = self.nodes.len() as i64;
        let q = j.div_euclid(n);
        let r = j.rem_euclid(n) as usize;
        self.nodes[r]
            + Vec2::new(
                (q * self.winding[0]) as f64,
                (q * self.winding[1]) as f64,
            )
    }

    /// Central-difference velocity d_j = N(x_{j+1} − x_{j−1})/2 (per unit s).
    pub fn velocity(&self, j: usize) -> Vec2 {
        let n = self.nodes.len() as f64;
        (self.node_lift(j as i64 + 1) - self.node_lift(j as i64 - 1)) * (n / 2.0)
    }

    /// Physical phase state implied at node 0 (velocity per unit time).
    pub fn phase_state(&self) -> crate::dynamics::PhaseState {
        crate::dynamics::PhaseState::new(self.nodes[0], self.velocity(0) / self.period)
    }

    /// The loop displaced by α·(u, R). Errors if the period leaves (0, ∞).
    pub fn displaced(&self, tangent: &LoopTangent, alpha: f64) -> Result<Self> {
        if tangent.u.len() != self.nodes.len() {
            return Err(Error::Invalid(format!(
                "tangent has {} nodes, loop has {}",
                tangent.u.len(),
                self.nodes.len()
            )));
        }
        Self::new(
            self.nodes
                .iter()
                .zip(&tangent.u)
                .map(|(x, u)| x + u * alpha)
                .collect(),
            self.period + alpha * tangent.r,
            self.winding,
        )
    }

    /// Linear resample on the lift to `m` nodes (period and winding kept).
    pub fn resample(&self, m: usize) -> Result<Self> {
        let n = self.nodes.len();
        let nodes = (0..m)
            .map(|i| {
                let pos = i as f64 * n as f64 / m as f64;
                let j = pos.floor();
                let frac = pos - j;
                let a = self.node_lift(j as i64);
                let b = self.node_lift(j as i64 + 1);
                a * (1.0 - frac) + b * frac
            })
            .collect();
        Self::new(nodes, self.period, self.winding)
    }

    /// Node energies E_j = ½|d_j/T|²_g + V(x_j).
    pub fn node_energies(&self, system: &MagneticSystem) -> Vec<f64> {
        (0..self.nodes.len())
            .map(|j| {
                let x = self.nodes[j];
                let v = self.velocity(j) / self.period;
                0.5 * v.dot(&(system.metric(x) * v)) + system.potential(x)
            })
            .collect()
    }
}

// ---- action and its differential ----------------------------------------------

/// Free-period action S_κ(x, T).
pub fn action(system: &MagneticSystem, kappa: f64, l: &DiscreteLoop) -> Result<f64> {
    if !(l.period() > 0.0) {
        return Err(Error::Invalid("action needs a positive period".into()));
    }
    let n = l.len();
    let t = l.period();
    let mut sum = 0.0;
    for j in 0..n {
        let x = l.nodes()[j];
        let d = l.velocity(j);
        let g = system.metric(x);
        sum += d.dot(&(g * d)) / (2.0 * t) - system.theta(x).dot(&d) - t * system.potential(x);
    }
    Ok(sum / n as f64 + kappa * t)
}

/// Differential of the action: node partials in the u slots, ∂S/∂T in r.
pub fn differential(system: &MagneticSystem, kappa: f64, l: &DiscreteLoop) -> Result<LoopTangent> {
    let n = l.len();
    let nf = n as f64;
    let t = l.period();

    // w_j = ∂S/∂d_j = g(x_j) d_j/(NT) − θ(x_j)/N, shared by the stencil terms.
    let mut w = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    for j in 0..n {
        let x = l.nodes()[j];
        let dj = l.velocity(j);
        w.push(system.metric(x) * dj / (nf * t) - system.theta(x) / nf);
        d.push(dj);
    }

    let mut u = vec![Vec2::zeros(); n];
    let mut kinetic = 0.0;
    let mut potential = 0.0;
    for m in 0..n {
        let x = l.nodes()[m];
        let dg = system.metric_d(x);
        let td = system.theta_d(x);
        let vd = system.potential_d(x);
        let dm = d[m];
        kinetic += dm.dot(&(system.metric(x) * dm));
        potential += system.potential(x);
        let wm_prev = w[(m + n - 1) % n];
        let wm_next = w[(m + 1) % n];
        for c in 0..2 {
            let metric_term = dm.dot(&(dg[c] * dm)) / (2.0 * nf * t);
            let theta_term = (td[(c, 0)] * dm[0] + td[(c, 1)] * dm[1]) / nf;
            let pot_term = t * vd[c] / nf;
            u[m][c] = metric_term - theta_term - pot_term
                + (nf / 2.0) * (wm_prev[c] - wm_next[c]);
        }
    }
    kinetic /= nf;
    potential /= nf;
    // ∂S/∂T = −K/T² + κ − V̄  (= mean of κ − E along the loop).
    let r = -kinetic / (2.0 * t * t) + kappa - potential;
    Ok(LoopTangent { u, r })
}

/// The loop-space inner product ⟨(u,R),(v,S)⟩ = RS/T + (T/N)Σ[u·v + T⁻²N²ΔuΔv]
/// (first-order term by forward differences on the periodic grid; the flat
/// version of the H¹ pairing, an equivalent norm on the metrics in play).
pub fn pairing(l: &DiscreteLoop, a: &LoopTangent, b: &LoopTangent) -> f64 {
    let n = l.len();
    let nf = n as f64;
    let t = l.period();
    let mut zero_order = 0.0;
    let mut first_order = 0.0;
    for j in 0..n {
        zero_order += a.u[j].dot(&b.u[j]);
        let da = (a.u[(j + 1) % n] - a.u[j]) * nf;
        let db = (b.u[(j + 1) % n] - b.u[j]) * nf;
        first_order += da.dot(&db);
    }
    a.r * b.r / t + (t / nf) * (zero_order + first_order / (t * t))
}

/// Solve the cyclic tridiagonal system (I + c·L) y = rhs where L is the
/// periodic second-difference stencil (2, −1, −1), via Thomas elimination with
/// the Sherman–Morrison corner correction. Diagonally dominant for c > 0.
fn solve_periodic_h1(c: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let beta = 1.0 + 2.0 * c; // diagonal
    let alpha = -c; // off-diagonal and corners

    // A = A' + u vᵀ with u = (γ, 0, …, 0, α)ᵀ, v = (1, 0, …, 0, α/γ)ᵀ.
    let gamma = -beta;
    let mut diag = vec![beta; n];
    diag[0] = beta - gamma;
    diag[n - 1] = beta - alpha * alpha / gamma;

    let thomas = |d: &[f64], b: &[f64]| -> Vec<f64> {
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        cp[0] = alpha / d[0];
        dp[0] = b[0] / d[0];
        for i in 1..n {
            let m = d[i] - alpha * cp[i - 1];
            cp[i] = alpha / m;
            dp[i] = (b[i] - alpha * dp[i - 1]) / m;
        }
        let mut y = vec![0.0; n];
        y[n - 1] = dp[n - 1];
        for i in (0..n - 1).rev() {
            y[i] = dp[i] - cp[i] * y[i + 1];
        }
        y
    };

    let y = thomas(&diag, rhs);
    let mut uvec = vec![0.0; n];
    uvec[0] = gamma;
    uvec[n - 1] = alpha;
    let z = thomas(&diag, &uvec);
    let vy = y[0] + (alpha / gamma) * y[n - 1];
    let vz = z[0] + (alpha / gamma) * z[n - 1];
    let factor = vy / (1.0 + vz);
    (0..n).map(|i| y[i] - factor * z[i]).collect()
}

/// Preconditioned gradient of S_κ: the metric-dual of the differential under
/// `pairing`, computed by one periodic tridiagonal solve per component plus
/// the T·∂S/∂T period slot. ⟨grad, v⟩ = dS[v] holds to solver precision.
pub fn gradient(system: &MagneticSystem, kappa: f64, l: &DiscreteLoop) -> Result<GradientData> {
    let n = l.len();
    let nf = n as f64;
    let t = l.period();
    let diff = differential(system, kappa, l)?;

    // Node part: (T/N)(I + T⁻²L) w = d  ⇒  w = (N/T) (I + T⁻²L)⁻¹ d.
    let c = (nf / t) * (nf / t);
    let mut u = vec![Vec2::zeros(); n];
    for comp in 0..2 {
        let rhs: Vec<f64> = (0..n).map(|j| diff.u[j][comp]).collect();
        let sol = solve_periodic_h1(c, &rhs);
        for j in 0..n {
            u[j][comp] = sol[j] * (nf / t);
        }
    }
    // Period slot: ⟨(0,R),(0,S)⟩ = RS/T ⇒ R = T·∂S/∂T.
    let r = t * diff.r;
    let tangent = LoopTangent { u, r };

    // ⟨grad, grad⟩ = dS[grad], the defining identity — cheaper and exact.
    let mut norm2 = diff.r * r;
    for j in 0..n {
        norm2 += diff.u[j].dot(&tangent.u[j]);
    }
    Ok(GradientData {
        tangent,
        norm: norm2.max(0.0).sqrt(),
        ps_warning: l.ps_warning(),
    })
}

// ---- group actions --------------------------------------------------------------

/// n-fold iteration ψⁿ(x, T) = (x(n·), nT): each traversal appends the lifted
/// nodes shifted by the winding; the class multiplies by n.
pub fn iterate(l: &DiscreteLoop, n: usize) -> Result<DiscreteLoop> {
    if n == 0 {
        return Err(Error::Invalid("iteration order must be ≥ 1".into()));
    }
    let base = l.len() as i64;
    let nodes = (0..(n as i64) * base)
        .map(|j| l.node_lift(j))
        .collect();
    DiscreteLoop::new(
        nodes,
        l.period() * n as f64,
        [l.winding()[0] * n as i64, l.winding()[1] * n as i64],
    )
}

/// Differential of ψⁿ on tangents: dψⁿ(u, R) = (u repeated n times, nR).
pub fn iterate_tangent(tangent: &LoopTangent, n: usize) -> LoopTangent {
    let base = tangent.u.len();
    let u = (0..n * base).map(|j| tangent.u[j % base]).collect();
    LoopTangent {
        u,
        r: tangent.r * n as f64,
    }
}

/// Time translation by a node-aligned fraction τ = k/N of the period.
pub fn translate(l: &DiscreteLoop, tau: f64) -> Result<DiscreteLoop> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::Invalid(format!("translation fraction must lie in [0,1), got {tau}")));
    }
    let n = l.len();
    let kf = tau * n as f64;
    let k = kf.round();
    if (kf - k).abs() > 1e-9 {
        return Err(Error::NotNodeAligned { tau, n });
    }
    let k = k as i64;
    let nodes = (0..n as i64).map(|j| l.node_lift(j + k)).collect();
    DiscreteLoop::new(nodes, l.period(), l.winding())
}

/// Integer chart offset that best superimposes `b` onto `a` (torus lifts may
/// differ by a deck transformation).
pub fn chart_offset(a: &DiscreteLoop, b: &DiscreteLoop) -> Vec2 {
    let n = a.len().min(b.len());
    let mut mean = Vec2::zeros();
    for j in 0..n {
        mean += a.nodes()[j] - b.nodes()[j];
    }
    mean /= n as f64;
    Vec2::new(mean[0].round(), mean[1].round())
}

fn h1_distance_squared(a: &DiscreteLoop, b: &DiscreteLoop, offset: Vec2) -> f64 {
    let n = a.len();
    let nf = n as f64;
    let t_bar = 0.5 * (a.period() + b.period());
    let dt = a.period() - b.period();
    let mut zero_order = 0.0;
    let mut first_order = 0.0;
    for j in 0..n {
        let dj = a.nodes()[j] - b.nodes()[j] - offset;
        let djn = a.node_lift(j as i64 + 1) - b.node_lift(j as i64 + 1) - offset;
        zero_order += dj.norm_squared();
        first_order += ((djn - dj) * nf).norm_squared();
    }
    dt * dt / t_bar + (t_bar / nf) * (zero_order + first_order / (t_bar * t_bar))
}

/// Distance between critical circles: min over node-aligned time shifts of
/// the H¹×ℝ distance, after removing any integer chart offset. Symmetric, and
/// zero exactly on the 𝕋-orbit of a loop.
pub fn circle_distance(a: &DiscreteLoop, b: &DiscreteLoop) -> Result<f64> {
    let n = a.len().max(b.len()).max(MIN_NODES);
    let ar = if a.len() == n { a.clone() } else { a.resample(n)? };
    let br = if b.len() == n { b.clone() } else { b.resample(n)? };
    let mut best = f64::INFINITY;
    for k in 0..n {
        let shifted = translate(&ar, k as f64 / n as f64)?;
        let off = chart_offset(&shifted, &br);
        let d2 = h1_distance_squared(&shifted, &br, off);
        if d2 < best {
            best = d2;
        }
    }
    Ok(best.max(0.0).sqrt())
}

/// Membership residual for the orthogonal complement of the iterate image:
/// tangents (u, R) at ψⁿ(γ) with Σ_{j<n} u((s+j)/n) ≡ 0 and R = 0 form
/// (T ψⁿ(𝓜))^⊥; returns max_s |Σ_j u| + |R| (zero iff in the complement).
pub fn orthogonal_complement_residual(
    base: &DiscreteLoop,
    n: usize,
    tangent: &LoopTangent,
) -> Result<f64> {
    let nb = base.len();
    if tangent.u.len() != nb * n {
        return Err(Error::Invalid(format!(
            "tangent lives on {} nodes, expected {}·{}",
            tangent.u.len(),
            nb,
            n
        )));
    }
    let mut worst = 0.0f64;
    for k in 0..nb {
        let mut s = Vec2::zeros();
        for j in 0..n {
            s += tangent.u[k + j * nb];
        }
        worst = worst.max(s.norm());
    }
    Ok(worst + tangent.r.abs())
}
