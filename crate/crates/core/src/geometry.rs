//! Chart-based surface geometry.
//!
//! Everything works in a single 2D chart: either the unit-square torus chart
//! (all callables 1-periodic in both coordinates) or an unbounded plane chart
//! for closed-form test cases. Metrics, magnetic 1-forms and potentials are
//! named analytic families with closed-form first and second partial
//! derivatives — second derivatives are needed by the linearized flow and by
//! Hessian assembly, and finite differencing them would put uncontrolled
//! noise exactly where eigenvalue signs are decided.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

pub const TAU: f64 = std::f64::consts::TAU;

/// Rotation-like matrix J_row = [[0, -1], [1, 0]] entering the Lorentz
/// operator Y(x) = b(x) · g(x)⁻¹ · J_row.
pub const J_ROW: Mat2 = Mat2::new(0.0, -1.0, 1.0, 0.0);

/// Bounding box half-width for the plane chart; leaving it is a hard error
/// (the plane chart only exists for closed-form tests).
pub const PLANE_BOUND: f64 = 1.0e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartTopology {
    /// Global periodic chart [0,1)²; positions live on lifts in R².
    Torus,
    /// Unbounded chart with a generous bounding box, for test systems.
    Plane,
}

/// Analytic metric families. All are conformal to the flat metric,
/// g = e^{2u} I, which covers the flat case (u ≡ 0) and gives non-trivial
/// Christoffel symbols with simple closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricKind {
    Euclidean,
    /// u(x) = amplitude · cos(2π x₁); periodic, torus-compatible.
    ConformalCosine { amplitude: f64 },
    /// u(x) = gradient · x; plane only (not periodic).
    ConformalLinear { gradient: [f64; 2] },
}

/// Analytic magnetic 1-forms θ. The induced field strength is
/// b = ∂₁θ₂ − ∂₂θ₁, i.e. dθ = b dx¹∧dx².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OneFormKind {
    Zero,
    /// θ = (0, b₀ x₁): constant field b₀. Plane only (not periodic).
    LinearY { field: f64 },
    /// θ = (0, −b₀ cos(2π x₁)/2π): field b(x) = b₀ sin(2π x₁). Exact on the
    /// torus since the field integrates to zero over the fundamental domain.
    SineField { amplitude: f64 },
    /// θ = (a cos(2π x₁), 0) = d(a sin(2π x₁)/2π): closed, b ≡ 0.
    ClosedCosine { amplitude: f64 },
}

/// Analytic potentials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialKind {
    Zero,
    /// V(x) = amplitude · (1 + cos(2π x₁)) ≥ 0 for amplitude ≥ 0.
    Cosine { amplitude: f64 },
}

/// A magnetic system: chart topology, metric, magnetic 1-form, potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagneticSystem {
    topology: ChartTopology,
    metric: MetricKind,
    one_form: OneFormKind,
    potential: PotentialKind,
}

/// Lorentz operator of a system, as a standalone evaluator.
#[derive(Debug, Clone, Copy)]
pub struct LorentzOperator<'a> {
    system: &'a MagneticSystem,
}

impl MagneticSystem {
    pub fn new(
        topology: ChartTopology,
        metric: MetricKind,
        one_form: OneFormKind,
        potential: PotentialKind,
    ) -> Result<Self> {
        if topology == ChartTopology::Torus {
            if let MetricKind::ConformalLinear { gradient } = metric {
                if gradient != [0.0, 0.0] {
                    return Err(Error::Invalid(
                        "conformal_linear metric is not 1-periodic; use it on the plane chart only"
                            .into(),
                    ));
                }
            }
            if let OneFormKind::LinearY { field } = one_form {
                if field != 0.0 {
                    return Err(Error::Invalid(
                        "linear_y 1-form is not 1-periodic; use it on the plane chart only".into(),
                    ));
                }
            }
        }
        Ok(Self {
            topology,
            metric,
            one_form,
            potential,
        })
    }

    /// Flat torus with field b(x) = b₀ sin(2π x₁).
    pub fn flat_torus_sin_field(b0: f64) -> Self {
        Self {
            topology: ChartTopology::Torus,
            metric: MetricKind::Euclidean,
            one_form: OneFormKind::SineField { amplitude: b0 },
            potential: PotentialKind::Zero,
        }
    }

    /// Flat plane with constant field b₀ (test system).
    pub fn plane_constant_field(b0: f64) -> Self {
        Self {
            topology: ChartTopology::Plane,
            metric: MetricKind::Euclidean,
            one_form: OneFormKind::LinearY { field: b0 },
            potential: PotentialKind::Zero,
        }
    }

    /// Flat torus with θ = 0 (no magnetic force).
    pub fn flat_torus_zero_field() -> Self {
        Self {
            topology: ChartTopology::Torus,
            metric: MetricKind::Euclidean,
            one_form: OneFormKind::Zero,
            potential: PotentialKind::Zero,
        }
    }

    pub fn topology(&self) -> ChartTopology {
        self.topology
    }

    pub fn metric_kind(&self) -> MetricKind {
        self.metric
    }

    pub fn one_form_kind(&self) -> OneFormKind {
        self.one_form
    }

    pub fn potential_kind(&self) -> PotentialKind {
        self.potential
    }

    // ---- metric -----------------------------------------------------------

    fn conformal_exponent(&self, x: Vec2) -> (f64, Vec2, Mat2) {
        match self.metric {
            MetricKind::Euclidean => (0.0, Vec2::zeros(), Mat2::zeros()),
            MetricKind::ConformalCosine { amplitude } => {
                let u = amplitude * (TAU * x[0]).cos();
                let u1 = -TAU * amplitude * (TAU * x[0]).sin();
                let u11 = -TAU * TAU * amplitude * (TAU * x[0]).cos();
                (
                    u,
                    Vec2::new(u1, 0.0),
                    Mat2::new(u11, 0.0, 0.0, 0.0),
                )
            }
            MetricKind::ConformalLinear { gradient } => {
                let a = Vec2::new(gradient[0], gradient[1]);
                (a.dot(&x), a, Mat2::zeros())
            }
        }
    }

    /// Metric tensor g(x) (2×2 symmetric positive definite).
    pub fn metric(&self, x: Vec2) -> Mat2 {
        let (u, _, _) = self.conformal_exponent(x);
        Mat2::identity() * (2.0 * u).exp()
    }

    /// First partials of the metric: `[∂₁g, ∂₂g]`.
    pub fn metric_d(&self, x: Vec2) -> [Mat2; 2] {
        let (u, du, _) = self.conformal_exponent(x);
        let e2u = (2.0 * u).exp();
        [
            Mat2::identity() * (2.0 * du[0] * e2u),
            Mat2::identity() * (2.0 * du[1] * e2u),
        ]
    }

    /// Second partials of the metric: `[i][j] = ∂_i ∂_j g`.
    pub fn metric_dd(&self, x: Vec2) -> [[Mat2; 2]; 2] {
        let (u, du, ddu) = self.conformal_exponent(x);
        let e2u = (2.0 * u).exp();
        let mut out = [[Mat2::zeros(); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let c = (2.0 * ddu[(i, j)] + 4.0 * du[i] * du[j]) * e2u;
                out[i][j] = Mat2::identity() * c;
            }
        }
        out
    }

    /// Inverse metric, failing if g(x) is not positive definite.
    pub fn metric_inv(&self, x: Vec2) -> Result<Mat2> {
        let g = self.metric(x);
        let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
        if !(det > 0.0 && g[(0, 0)] > 0.0) || !det.is_finite() {
            return Err(Error::MetricNotPositiveDefinite(x[0], x[1]));
        }
        Ok(Mat2::new(g[(1, 1)], -g[(0, 1)], -g[(1, 0)], g[(0, 0)]) / det)
    }

    // ---- magnetic 1-form ---------------------------------------------------

    /// θ(x) as a covector (components θ₁, θ₂).
    pub fn theta(&self, x: Vec2) -> Vec2 {
        match self.one_form {
            OneFormKind::Zero => Vec2::zeros(),
            OneFormKind::LinearY { field } => Vec2::new(0.0, field * x[0]),
            OneFormKind::SineField { amplitude } => {
                Vec2::new(0.0, -amplitude * (TAU * x[0]).cos() / TAU)
            }
            OneFormKind::ClosedCosine { amplitude } => {
                Vec2::new(amplitude * (TAU * x[0]).cos(), 0.0)
            }
        }
    }

    /// First partials of θ: entry `(i, j)` is ∂_i θ_j.
    pub fn theta_d(&self, x: Vec2) -> Mat2 {
        match self.one_form {
            OneFormKind::Zero => Mat2::zeros(),
            OneFormKind::LinearY { field } => Mat2::new(0.0, field, 0.0, 0.0),
            OneFormKind::SineField { amplitude } => {
                Mat2::new(0.0, amplitude * (TAU * x[0]).sin(), 0.0, 0.0)
            }
            OneFormKind::ClosedCosine { amplitude } => {
                Mat2::new(-TAU * amplitude * (TAU * x[0]).sin(), 0.0, 0.0, 0.0)
            }
        }
    }

    /// Second partials of θ: `[k]` is the symmetric matrix `(i, j) ↦ ∂_i ∂_j θ_k`.
    pub fn theta_dd(&self, x: Vec2) -> [Mat2; 2] {
        match self.one_form {
            OneFormKind::Zero | OneFormKind::LinearY { .. } => [Mat2::zeros(), Mat2::zeros()],
            OneFormKind::SineField { amplitude } => [
                Mat2::zeros(),
                Mat2::new(TAU * amplitude * (TAU * x[0]).cos(), 0.0, 0.0, 0.0),
            ],
            OneFormKind::ClosedCosine { amplitude } => [
                Mat2::new(-TAU * TAU * amplitude * (TAU * x[0]).cos(), 0.0, 0.0, 0.0),
                Mat2::zeros(),
            ],
        }
    }

    /// Field strength b(x) = ∂₁θ₂ − ∂₂θ₁.
    pub fn field(&self, x: Vec2) -> f64 {
        let td = self.theta_d(x);
        td[(0, 1)] - td[(1, 0)]
    }

    /// Gradient of the field strength, (∂₁b, ∂₂b).
    pub fn field_d(&self, x: Vec2) -> Vec2 {
        let tdd = self.theta_dd(x);
        Vec2::new(
            tdd[1][(0, 0)] - tdd[0][(0, 1)],
            tdd[1][(1, 0)] - tdd[0][(1, 1)],
        )
    }

    /// Pointwise sup over the chart of |θ|_g (∞ when unbounded); used by
    /// action lower-bound checks.
    pub fn theta_sup_norm(&self) -> f64 {
        let euclid_sup = match self.one_form {
            OneFormKind::Zero => 0.0,
            OneFormKind::LinearY { field } => {
                if field == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            OneFormKind::SineField { amplitude } => amplitude.abs() / TAU,
            OneFormKind::ClosedCosine { amplitude } => amplitude.abs(),
        };
        // |θ|_g = e^{-u} |θ| for conformal metrics; bound e^{-u} by e^{|a|}.
        let factor = match self.metric {
            MetricKind::Euclidean => 1.0,
            MetricKind::ConformalCosine { amplitude } => amplitude.abs().exp(),
            MetricKind::ConformalLinear { .. } => f64::INFINITY,
        };
        euclid_sup * factor
    }

    // ---- potential ---------------------------------------------------------

    pub fn potential(&self, x: Vec2) -> f64 {
        match self.potential {
            PotentialKind::Zero => 0.0,
            PotentialKind::Cosine { amplitude } => amplitude * (1.0 + (TAU * x[0]).cos()),
        }
    }

    /// Partials (∂₁V, ∂₂V).
    pub fn potential_d(&self, x: Vec2) -> Vec2 {
        match self.potential {
            PotentialKind::Zero => Vec2::zeros(),
            PotentialKind::Cosine { amplitude } => {
                Vec2::new(-TAU * amplitude * (TAU * x[0]).sin(), 0.0)
            }
        }
    }

    /// Hessian of V.
    pub fn potential_dd(&self, x: Vec2) -> Mat2 {
        match self.potential {
            PotentialKind::Zero => Mat2::zeros(),
            PotentialKind::Cosine { amplitude } => {
                Mat2::new(-TAU * TAU * amplitude * (TAU * x[0]).cos(), 0.0, 0.0, 0.0)
            }
        }
    }

    // ---- derived operators ------------------------------------------------

    /// Christoffel symbols Γ^k_{ij} of the Levi-Civita connection,
    /// indexed `[k][i][j]`.
    pub fn christoffel(&self, x: Vec2) -> Result<[[[f64; 2]; 2]; 2]> {
        let ginv = self.metric_inv(x)?;
        let dg = self.metric_d(x);
        let mut gamma = [[[0.0; 2]; 2]; 2];
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut s = 0.0;
                    for l in 0..2 {
                        s += ginv[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                    }
                    gamma[k][i][j] = 0.5 * s;
                }
            }
        }
        Ok(gamma)
    }

    /// Partials of the Christoffel symbols, indexed `[m][k][i][j]` = ∂_m Γ^k_{ij}.
    pub fn christoffel_d(&self, x: Vec2) -> Result<[[[[f64; 2]; 2]; 2]; 2]> {
        let ginv = self.metric_inv(x)?;
        let dg = self.metric_d(x);
        let ddg = self.metric_dd(x);
        // ∂_m g⁻¹ = -g⁻¹ (∂_m g) g⁻¹
        let dginv = [-ginv * dg[0] * ginv, -ginv * dg[1] * ginv];
        let mut out = [[[[0.0; 2]; 2]; 2]; 2];
        for m in 0..2 {
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        let mut s = 0.0;
                        for l in 0..2 {
                            s += dginv[m][(k, l)]
                                * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                            s += ginv[(k, l)]
                                * (ddg[m][i][(j, l)] + ddg[m][j][(i, l)] - ddg[m][l][(i, j)]);
                        }
                        out[m][k][i][j] = 0.5 * s;
                    }
                }
            }
        }
        Ok(out)
    }

    /// The Lorentz operator as a standalone evaluator.
    pub fn lorentz(&self) -> LorentzOperator<'_> {
        LorentzOperator { system: self }
    }

    /// Lorentz operator matrix Y(x) = b(x) · g(x)⁻¹ · J_row, the unique
    /// endomorphism with g(Y u, v) = dθ(u, v).
    pub fn lorentz_at(&self, x: Vec2) -> Result<Mat2> {
        Ok(self.metric_inv(x)? * J_ROW * self.field(x))
    }

    /// ∂_m Y(x), needed by the linearized flow.
    pub fn lorentz_d(&self, x: Vec2) -> Result<[Mat2; 2]> {
        let ginv = self.metric_inv(x)?;
        let dg = self.metric_d(x);
        let dginv = [-ginv * dg[0] * ginv, -ginv * dg[1] * ginv];
        let b = self.field(x);
        let db = self.field_d(x);
        Ok([
            (dginv[0] * b + ginv * db[0]) * J_ROW,
            (dginv[1] * b + ginv * db[1]) * J_ROW,
        ])
    }
}

impl<'a> LorentzOperator<'a> {
    /// Y(x) as a 2×2 matrix.
    pub fn at(&self, x: Vec2) -> Result<Mat2> {
        self.system.lorentz_at(x)
    }

    /// Field strength b(x).
    pub fn field(&self, x: Vec2) -> f64 {
        self.system.field(x)
    }
}

/// Shortest representative of `a − b` modulo Z² (torus displacement).
pub fn torus_delta(a: Vec2, b: Vec2) -> Vec2 {
    let mut d = a - b;
    for k in 0..2 {
        d[k] -= d[k].round();
    }
    d
}

/// Chart-aware position distance: torus distance folds out integer shifts.
pub fn position_distance(topology: ChartTopology, a: Vec2, b: Vec2) -> f64 {
    match topology {
        ChartTopology::Torus => torus_delta(a, b).norm(),
        ChartTopology::Plane => (a - b).norm(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dtheta(sys: &MagneticSystem, x: Vec2, u: Vec2, v: Vec2) -> f64 {
        // dθ(u, v) = b(x) (u₁ v₂ − u₂ v₁)
        sys.field(x) * (u[0] * v[1] - u[1] * v[0])
    }

    #[test]
    fn flat_metric_has_vanishing_christoffel() {
        let sys = MagneticSystem::flat_torus_sin_field(1.0);
        let gamma = sys.christoffel(Vec2::new(0.3, 0.7)).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    assert_eq!(gamma[k][i][j], 0.0);
                }
            }
        }
    }

    #[test]
    fn conformal_linear_christoffel_matches_closed_form() {
        // g = e^{2u} I with u = x₁: Γ¹₁₁ = 1, Γ¹₂₂ = −1, Γ²₁₂ = Γ²₂₁ = 1,
        // all others zero. Closed form: Γ^k_ij = δ_ik u_j + δ_jk u_i − δ_ij u_k.
        let sys = MagneticSystem::new(
            ChartTopology::Plane,
            MetricKind::ConformalLinear { gradient: [1.0, 0.0] },
            OneFormKind::Zero,
            PotentialKind::Zero,
        )
        .unwrap();
        let x = Vec2::new(0.37, -0.81);
        let gamma = sys.christoffel(x).unwrap();
        let du = [1.0, 0.0];
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let expect = (if i == k { du[j] } else { 0.0 })
                        + (if j == k { du[i] } else { 0.0 })
                        - (if i == j { du[k] } else { 0.0 });
                    assert_relative_eq!(gamma[k][i][j], expect, max_relative = 1e-12);
                }
            }
        }
        assert_relative_eq!(gamma[0][0][0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(gamma[0][1][1], -1.0, max_relative = 1e-12);
        assert_relative_eq!(gamma[1][0][1], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn christoffel_is_periodic_on_the_torus() {
        let sys = MagneticSystem::new(
            ChartTopology::Torus,
            MetricKind::ConformalCosine { amplitude: 0.4 },
            OneFormKind::SineField { amplitude: 2.0 },
            PotentialKind::Zero,
        )
        .unwrap();
        let x = Vec2::new(0.21, 0.93);
        let a = sys.christoffel(x).unwrap();
        let b = sys.christoffel(x + Vec2::new(1.0, 0.0)).unwrap();
        let c = sys.christoffel(x + Vec2::new(0.0, 1.0)).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    assert!((a[k][i][j] - b[k][i][j]).abs() < 1e-12);
                    assert!((a[k][i][j] - c[k][i][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lorentz_constant_field_rotates() {
        // g = I, θ = (0, b₀ x₁): Y u = b₀ (−u₂, u₁).
        let b0 = 1.7;
        let sys = MagneticSystem::plane_constant_field(b0);
        let y = sys.lorentz_at(Vec2::new(0.4, -2.0)).unwrap();
        let u = Vec2::new(0.3, -1.1);
        let yu = y * u;
        assert_relative_eq!(yu[0], -b0 * u[1], max_relative = 1e-14);
        assert_relative_eq!(yu[1], b0 * u[0], max_relative = 1e-14);
    }

    #[test]
    fn lorentz_defining_identity_holds() {
        // g(Y u, v) = dθ(u, v) on basis vectors and random pairs,
        // including a conformal metric.
        let systems = vec![
            MagneticSystem::flat_torus_sin_field(2.5),
            MagneticSystem::new(
                ChartTopology::Torus,
                MetricKind::ConformalCosine { amplitude: 0.3 },
                OneFormKind::SineField { amplitude: 1.2 },
                PotentialKind::Zero,
            )
            .unwrap(),
        ];
        let mut rng = crate::testing::rng(7);
        for sys in &systems {
            for _ in 0..250 {
                let x = crate::testing::rand_vec2(&mut rng, 1.0);
                let u = crate::testing::rand_vec2(&mut rng, 2.0);
                let v = crate::testing::rand_vec2(&mut rng, 2.0);
                let g = sys.metric(x);
                let y = sys.lorentz_at(x).unwrap();
                let lhs = (y * u).dot(&(g * v));
                let rhs = dtheta(sys, x, u, v);
                assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }
        }
    }

    #[test]
    fn lorentz_is_g_antisymmetric() {
        let sys = MagneticSystem::new(
            ChartTopology::Torus,
            MetricKind::ConformalCosine { amplitude: 0.5 },
            OneFormKind::SineField { amplitude: 3.0 },
            PotentialKind::Zero,
        )
        .unwrap();
        let mut rng = crate::testing::rng(11);
        for _ in 0..200 {
            let x = crate::testing::rand_vec2(&mut rng, 1.0);
            let u = crate::testing::rand_vec2(&mut rng, 1.0);
            let g = sys.metric(x);
            let y = sys.lorentz_at(x).unwrap();
            let q = (y * u).dot(&(g * u));
            assert!(q.abs() < 1e-13 * (1.0 + u.norm_squared()));
        }
    }

    #[test]
    fn exact_one_form_gives_zero_lorentz() {
        let sys = MagneticSystem::new(
            ChartTopology::Torus,
            MetricKind::Euclidean,
            OneFormKind::ClosedCosine { amplitude: 1.3 },
            PotentialKind::Zero,
        )
        .unwrap();
        for t in 0..32 {
            let x = Vec2::new(t as f64 / 32.0, 0.5 - t as f64 / 64.0);
            assert!(sys.field(x).abs() < 1e-14);
            assert!(sys.lorentz_at(x).unwrap().norm() < 1e-14);
        }
    }

    #[test]
    fn plane_only_kinds_rejected_on_torus() {
        assert!(MagneticSystem::new(
            ChartTopology::Torus,
            MetricKind::Euclidean,
            OneFormKind::LinearY { field: 1.0 },
            PotentialKind::Zero,
        )
        .is_err());
        assert!(MagneticSystem::new(
            ChartTopology::Torus,
            MetricKind::ConformalLinear { gradient: [0.5, 0.0] },
            OneFormKind::Zero,
            PotentialKind::Zero,
        )
        .is_err());
    }

    #[test]
    fn derivative_consistency_by_finite_differences() {
        // Closed-form first/second derivatives agree with central differences.
        let sys = MagneticSystem::new(
            ChartTopology::Torus,
            MetricKind::ConformalCosine { amplitude: 0.35 },
            OneFormKind::SineField { amplitude: 2.2 },
            PotentialKind::Cosine { amplitude: 0.7 },
        )
        .unwrap();
        let x = Vec2::new(0.123, 0.456);
        let h = 1e-6;
        for m in 0..2 {
            let mut dx = Vec2::zeros();
            dx[m] = h;
            let dg_fd = (sys.metric(x + dx) - sys.metric(x - dx)) / (2.0 * h);
            assert!((dg_fd - sys.metric_d(x)[m]).norm() < 1e-8);
            let td_fd = (sys.theta(x + dx) - sys.theta(x - dx)) / (2.0 * h);
            let td = sys.theta_d(x);
            assert!((td_fd - Vec2::new(td[(m, 0)], td[(m, 1)])).norm() < 1e-8);
            let dv_fd = (sys.potential(x + dx) - sys.potential(x - dx)) / (2.0 * h);
            assert!((dv_fd - sys.potential_d(x)[m]).abs() < 1e-7);
            let db_fd = (sys.field(x + dx) - sys.field(x - dx)) / (2.0 * h);
            assert!((db_fd - sys.field_d(x)[m]).abs() < 1e-7);
            // Christoffel derivative vs FD of Christoffel.
            let gp = sys.christoffel(x + dx).unwrap();
            let gm = sys.christoffel(x - dx).unwrap();
            let dgamma = sys.christoffel_d(x).unwrap();
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        let fd = (gp[k][i][j] - gm[k][i][j]) / (2.0 * h);
                        assert!((fd - dgamma[m][k][i][j]).abs() < 1e-6);
                    }
                }
            }
        }
    }
}
