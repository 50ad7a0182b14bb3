//! Benchmark SDEs with closed-form strong solutions.
//!
//! | name      | equation                                                      |
//! |-----------|---------------------------------------------------------------|
//! | `tan`     | `dX = (1+X)(1+X²) dt + (1+X²) dW`                             |
//! | `geom2`   | `dX = a₀X dt + b₁X dW¹ + b₂X dW²`                             |
//! | `rot23`   | two coupled linear equations driven by three Wiener processes |
//! | `nonauto` | `dX = [2X/(1+t) + ½(1+t)²] dt + ½(1+t)² dW`                   |
//! | `gl`      | `dX = [−X³ + (α+½σ²)X] dt + σX dW`                            |
//! | `sech`    | `dX = −tanh X (a + ½b² sech²X) dt + b sech X dW`              |
//!
//! The `gl` and `sech` solutions involve path integrals; an [`OracleTracker`]
//! accumulates them on the same increments the integrator consumes.

use std::fmt;
use std::str::FromStr;

use ndarray::{array, ArrayView1};

use crate::error::{Result, SdeError};
use crate::noise::WienerGrid;
use crate::system::{Matrix, NoiseIncrement, NoiseStructure, SdeSystem, Vector};

/// Distance from a pole of `tan`, measured as `|cos(t + W + arctan X₀)|`, at
/// which the `tan` oracle refuses to evaluate.
pub const TAN_POLE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemId {
    Tan,
    GeomBM2,
    Rotational2x3,
    NonAutonomous,
    GinzburgLandau,
    Sech,
}

impl ProblemId {
    pub const ALL: [ProblemId; 6] = [
        ProblemId::Tan,
        ProblemId::GeomBM2,
        ProblemId::Rotational2x3,
        ProblemId::NonAutonomous,
        ProblemId::GinzburgLandau,
        ProblemId::Sech,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemId::Tan => "tan",
            ProblemId::GeomBM2 => "geom2",
            ProblemId::Rotational2x3 => "rot23",
            ProblemId::NonAutonomous => "nonauto",
            ProblemId::GinzburgLandau => "gl",
            ProblemId::Sech => "sech",
        }
    }

    /// Step size used for this problem in the reference experiments.
    pub fn reference_step_size(self) -> f64 {
        match self {
            ProblemId::Tan => 2.5e-5,
            ProblemId::GeomBM2 => 1e-2,
            ProblemId::Rotational2x3 => 1e-2,
            ProblemId::NonAutonomous => 1e-3,
            ProblemId::GinzburgLandau => 5e-6,
            ProblemId::Sech => 1e-5,
        }
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemId {
    type Err = SdeError;

    fn from_str(s: &str) -> Result<Self> {
        ProblemId::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            SdeError::Argument(format!("unknown problem {s:?}; valid problems: tan, geom2, rot23, nonauto, gl, sech"))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Coefficients {
    Tan,
    Geom { a0: f64, b1: f64, b2: f64 },
    Rotational,
    NonAutonomous,
    GinzburgLandau { alpha: f64, sigma: f64 },
    Sech { a: f64, b: f64 },
}

/// One benchmark SDE with its parameters, initial data and oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkProblem {
    id: ProblemId,
    params: Vec<(&'static str, f64)>,
    coefficients: Coefficients,
    x0: Vector,
    t0: f64,
    step_size: f64,
}

/// Builds a problem with its default parameters, `X₀ = 1` and `t₀ = 0`.
pub fn make_problem(id: ProblemId) -> BenchmarkProblem {
    let params: Vec<(&'static str, f64)> = match id {
        ProblemId::Tan | ProblemId::NonAutonomous => vec![("x0", 1.0)],
        ProblemId::GeomBM2 => vec![("a0", 1.0), ("b1", 0.5), ("b2", 0.5), ("x0", 1.0)],
        ProblemId::Rotational2x3 => vec![],
        ProblemId::GinzburgLandau => vec![("alpha", 0.01), ("sigma", 4.0), ("x0", 1.0)],
        ProblemId::Sech => vec![("a", 0.02), ("b", 1.0), ("x0", 1.0)],
    };
    let mut problem = BenchmarkProblem {
        id,
        params,
        coefficients: Coefficients::Tan,
        x0: Vector::zeros(0),
        t0: 0.0,
        step_size: id.reference_step_size(),
    };
    problem.refresh();
    problem
}

impl BenchmarkProblem {
    fn refresh(&mut self) {
        let params = self.params.clone();
        let p = |name: &str| params.iter().find(|(n, _)| *n == name).map_or(f64::NAN, |(_, v)| *v);
        self.coefficients = match self.id {
            ProblemId::Tan => Coefficients::Tan,
            ProblemId::GeomBM2 => Coefficients::Geom { a0: p("a0"), b1: p("b1"), b2: p("b2") },
            ProblemId::Rotational2x3 => Coefficients::Rotational,
            ProblemId::NonAutonomous => Coefficients::NonAutonomous,
            ProblemId::GinzburgLandau => Coefficients::GinzburgLandau { alpha: p("alpha"), sigma: p("sigma") },
            ProblemId::Sech => Coefficients::Sech { a: p("a"), b: p("b") },
        };
        self.x0 = match self.id {
            ProblemId::Rotational2x3 => array![1.0, 0.0],
            _ => array![p("x0")],
        };
    }

    pub fn id(&self) -> ProblemId {
        self.id
    }

    pub fn params(&self) -> &[(&'static str, f64)] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }

    pub fn x0(&self) -> &Vector {
        &self.x0
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Suggested integration step.
    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(SdeError::Argument(format!("parameter {name} must be finite")));
        }
        let Some(slot) = self.params.iter_mut().find(|(n, _)| *n == name) else {
            let known: Vec<&str> = self.params.iter().map(|(n, _)| *n).collect();
            return Err(SdeError::Argument(format!(
                "problem {} has no parameter {name:?} (parameters: {})",
                self.id,
                if known.is_empty() { "none".to_string() } else { known.join(", ") }
            )));
        };
        slot.1 = value;
        self.refresh();
        Ok(self)
    }

    /// Named parameter sets. Every problem has `default`; `geom2` also has
    /// `fig2-like` (`a₀ = 0.1, b₁ = b₂ = 1`), whose solution decays to zero.
    pub fn with_preset(self, preset: &str) -> Result<Self> {
        match (self.id, preset) {
            (_, "default") => Ok(make_problem(self.id)),
            (ProblemId::GeomBM2, "fig2-like") => make_problem(self.id)
                .with_param("a0", 0.1)?
                .with_param("b1", 1.0)?
                .with_param("b2", 1.0),
            (id, other) => Err(SdeError::Argument(format!("problem {id} has no preset {other:?}"))),
        }
    }

    pub fn with_step_size(mut self, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SdeError::Argument(format!("step size must be positive, got {dt}")));
        }
        self.step_size = dt;
        Ok(self)
    }

    pub fn oracle(&self) -> OracleTracker<'_> {
        OracleTracker::new(self)
    }

    /// Exact solution at grid time `t`, evaluated on the grid's path prefix.
    pub fn exact(&self, t: f64, grid: &WienerGrid) -> Result<Vector> {
        exact(self, t, grid)
    }

    /// The exact solution along `W ≡ 0`, with the path integrals done in
    /// closed form.
    pub fn exact_zero_path(&self, t: f64) -> Result<Vector> {
        let m = self.noise_dim();
        let integral = match self.coefficients {
            Coefficients::GinzburgLandau { alpha, .. } => {
                if alpha == 0.0 {
                    t
                } else {
                    (2.0 * alpha * t).exp_m1() / (2.0 * alpha)
                }
            }
            _ => 0.0,
        };
        self.closed_form(t, &Vector::zeros(m), integral)
    }

    fn closed_form(&self, t: f64, w: &Vector, integral: f64) -> Result<Vector> {
        let x0 = self.x0[0];
        let value = match self.coefficients {
            Coefficients::Tan => {
                let arg = t + w[0] + x0.atan();
                if arg.cos().abs() < TAN_POLE_TOLERANCE {
                    return Err(SdeError::PoleProximity { t });
                }
                array![arg.tan()]
            }
            Coefficients::Geom { a0, b1, b2 } => {
                array![x0 * ((a0 - 0.5 * (b1 * b1 + b2 * b2)) * t + b1 * w[0] + b2 * w[1]).exp()]
            }
            Coefficients::Rotational => {
                let r = (-2.0 * t + w[0] - w[1]).exp();
                array![r * w[2].cos(), r * w[2].sin()]
            }
            Coefficients::NonAutonomous => {
                let g = (1.0 + t) / (1.0 + self.t0);
                let s = (1.0 + t) * (1.0 + t);
                array![g * g * x0 + 0.5 * s * (w[0] + t - self.t0)]
            }
            Coefficients::GinzburgLandau { alpha, sigma } => {
                array![x0 * (alpha * t + sigma * w[0]).exp() / (1.0 + 2.0 * x0 * x0 * integral).sqrt()]
            }
            Coefficients::Sech { a, b } => {
                let decay = (-a * t).exp();
                array![(decay * x0.sinh() + decay * b * integral).asinh()]
            }
        };
        if value.iter().any(|v| !v.is_finite()) {
            return Err(SdeError::Domain { quantity: "exact solution", component: 0, t });
        }
        Ok(value)
    }
}

impl SdeSystem for BenchmarkProblem {
    fn dim(&self) -> usize {
        match self.id {
            ProblemId::Rotational2x3 => 2,
            _ => 1,
        }
    }

    fn noise_dim(&self) -> usize {
        match self.id {
            ProblemId::GeomBM2 => 2,
            ProblemId::Rotational2x3 => 3,
            _ => 1,
        }
    }

    fn drift(&self, x: ArrayView1<'_, f64>, t: f64) -> Vector {
        match self.coefficients {
            Coefficients::Tan => array![(1.0 + x[0]) * (1.0 + x[0] * x[0])],
            Coefficients::Geom { a0, .. } => array![a0 * x[0]],
            Coefficients::Rotational => array![-1.5 * x[0], -1.5 * x[1]],
            Coefficients::NonAutonomous => array![2.0 * x[0] / (1.0 + t) + 0.5 * (1.0 + t) * (1.0 + t)],
            Coefficients::GinzburgLandau { alpha, sigma } => {
                array![-x[0].powi(3) + (alpha + 0.5 * sigma * sigma) * x[0]]
            }
            Coefficients::Sech { a, b } => {
                let sech = 1.0 / x[0].cosh();
                array![-x[0].tanh() * (a + 0.5 * b * b * sech * sech)]
            }
        }
    }

    fn diffusion(&self, x: ArrayView1<'_, f64>, t: f64) -> Matrix {
        match self.coefficients {
            Coefficients::Tan => array![[1.0 + x[0] * x[0]]],
            Coefficients::Geom { b1, b2, .. } => array![[b1 * x[0], b2 * x[0]]],
            Coefficients::Rotational => array![[x[0], -x[0], -x[1]], [x[1], -x[1], x[0]]],
            Coefficients::NonAutonomous => array![[0.5 * (1.0 + t) * (1.0 + t)]],
            Coefficients::GinzburgLandau { sigma, .. } => array![[sigma * x[0]]],
            Coefficients::Sech { b, .. } => array![[b / x[0].cosh()]],
        }
    }

    fn diffusion_contraction(&self, x: ArrayView1<'_, f64>, _t: f64) -> Option<Vector> {
        Some(match self.coefficients {
            Coefficients::Tan => array![2.0 * x[0] * (1.0 + x[0] * x[0])],
            Coefficients::Geom { b1, b2, .. } => array![(b1 * b1 + b2 * b2) * x[0]],
            Coefficients::Rotational => x.to_owned(),
            Coefficients::NonAutonomous => array![0.0],
            Coefficients::GinzburgLandau { sigma, .. } => array![sigma * sigma * x[0]],
            Coefficients::Sech { b, .. } => {
                let sech = 1.0 / x[0].cosh();
                array![-b * b * sech * sech * x[0].tanh()]
            }
        })
    }

    fn noise_structure(&self) -> NoiseStructure {
        match self.id {
            ProblemId::GeomBM2 | ProblemId::Rotational2x3 => NoiseStructure::Commutative,
            _ => NoiseStructure::Diagonal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccumulatorMode {
    /// `Σ g(s_l, W_l)·Δs` on left endpoints.
    Riemann,
    /// `Σ g(s_l, W_l)·ΔW_l` on left endpoints.
    Ito,
}

/// Running left-endpoint sum of a path integral driven by one Wiener process.
#[derive(Debug, Clone, PartialEq)]
pub struct PathAccumulator {
    pub mode: AccumulatorMode,
    pub value: f64,
    pub last_time: f64,
    /// Path value at `last_time`.
    pub w: f64,
}

impl PathAccumulator {
    pub fn new(mode: AccumulatorMode, t0: f64) -> Self {
        Self { mode, value: 0.0, last_time: t0, w: 0.0 }
    }

    /// Adds one cell of length `dt` over which the path moves by `dw`.
    pub fn push<F: Fn(f64, f64) -> f64>(&mut self, dt: f64, dw: f64, integrand: F) {
        let g = integrand(self.last_time, self.w);
        self.value += match self.mode {
            AccumulatorMode::Riemann => g * dt,
            AccumulatorMode::Ito => g * dw,
        };
        self.last_time += dt;
        self.w += dw;
    }

    /// Adds a contiguous run of uniform cells starting at `t_start`.
    pub fn accumulate<F: Fn(f64, f64) -> f64>(
        &mut self,
        t_start: f64,
        dt: f64,
        increments: &[f64],
        integrand: F,
    ) -> Result<()> {
        let tol = 1e-12 * t_start.abs().max(1.0);
        if (t_start - self.last_time).abs() > tol {
            return Err(SdeError::Usage(format!(
                "segment starts at {t_start} but the accumulator is at {}",
                self.last_time
            )));
        }
        for &dw in increments {
            self.push(dt, dw, &integrand);
        }
        Ok(())
    }
}

/// Follows a Wiener path step by step and evaluates the exact solution at the
/// current time.
#[derive(Debug, Clone)]
pub struct OracleTracker<'a> {
    problem: &'a BenchmarkProblem,
    t: f64,
    w: Vector,
    integral: Option<PathAccumulator>,
    /// Time at which the path carried a tan argument across a pole.
    pole_crossed: Option<f64>,
}

impl<'a> OracleTracker<'a> {
    fn new(problem: &'a BenchmarkProblem) -> Self {
        let integral = match problem.coefficients {
            Coefficients::GinzburgLandau { .. } => Some(PathAccumulator::new(AccumulatorMode::Riemann, problem.t0)),
            Coefficients::Sech { .. } => Some(PathAccumulator::new(AccumulatorMode::Ito, problem.t0)),
            _ => None,
        };
        Self { problem, t: problem.t0, w: Vector::zeros(problem.noise_dim()), integral, pole_crossed: None }
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn w(&self) -> &Vector {
        &self.w
    }

    /// Index of the tan branch `(π/2 + (k−1)π, π/2 + kπ)` holding the argument.
    fn tan_branch(&self) -> Option<f64> {
        match self.problem.coefficients {
            Coefficients::Tan => {
                let arg = self.t + self.w[0] + self.problem.x0[0].atan();
                Some(((arg - std::f64::consts::FRAC_PI_2) / std::f64::consts::PI).floor())
            }
            _ => None,
        }
    }

    pub fn advance(&mut self, inc: &NoiseIncrement) {
        let branch = self.tan_branch();
        if let Some(acc) = &mut self.integral {
            match self.problem.coefficients {
                Coefficients::GinzburgLandau { alpha, sigma } => {
                    acc.push(inc.dt, inc.dw[0], |s, w| (2.0 * alpha * s + 2.0 * sigma * w).exp())
                }
                Coefficients::Sech { a, .. } => acc.push(inc.dt, inc.dw[0], |s, _| (a * s).exp()),
                _ => unreachable!("only path-integral problems carry an accumulator"),
            }
        }
        self.t += inc.dt;
        self.w += &inc.dw;
        if self.pole_crossed.is_none() && branch != self.tan_branch() {
            self.pole_crossed = Some(self.t);
        }
    }

    /// The exact solution at the current time. For `tan`, fails once the
    /// path has crossed a pole, even if it stepped over it between nodes.
    pub fn value(&self) -> Result<Vector> {
        if let Some(t) = self.pole_crossed {
            return Err(SdeError::PoleProximity { t });
        }
        let integral = self.integral.as_ref().map_or(0.0, |acc| acc.value);
        self.problem.closed_form(self.t, &self.w, integral)
    }
}

/// Exact solution at grid node time `t`, consuming the grid prefix up to `t`.
pub fn exact(problem: &BenchmarkProblem, t: f64, grid: &WienerGrid) -> Result<Vector> {
    if grid.noise_dim() != problem.noise_dim() {
        return Err(SdeError::Argument(format!(
            "grid carries {} Wiener processes, problem {} needs {}",
            grid.noise_dim(),
            problem.id,
            problem.noise_dim()
        )));
    }
    let steps = (t - grid.t0) / grid.dt;
    let l = steps.round();
    if l < 0.0 || (steps - l).abs() > 1e-9 * steps.abs().max(1.0) || l as usize > grid.len() {
        return Err(SdeError::Argument(format!("time {t} is not a node of the grid")));
    }
    let mut oracle = problem.oracle();
    for i in 0..l as usize {
        oracle.advance(&grid.increment(i));
    }
    oracle.t = t;
    oracle.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::RngStream;
    use crate::system::{fd_contraction, modified_drift};

    #[test]
    fn defaults_follow_reference_setup() {
        let tan = make_problem(ProblemId::Tan);
        assert_eq!(tan.x0()[0], 1.0);
        assert_eq!(tan.step_size(), 2.5e-5);
        let gl = make_problem(ProblemId::GinzburgLandau);
        assert_eq!((gl.param("alpha"), gl.param("sigma")), (Some(0.01), Some(4.0)));
        let sech = make_problem(ProblemId::Sech);
        assert_eq!((sech.param("a"), sech.param("b")), (Some(0.02), Some(1.0)));
        for id in ProblemId::ALL {
            assert_eq!(id.name().parse::<ProblemId>().unwrap(), id);
            assert_eq!(make_problem(id).t0(), 0.0);
        }
        assert!("ornstein".parse::<ProblemId>().is_err());
    }

    #[test]
    fn parameter_validation() {
        let geom = make_problem(ProblemId::GeomBM2);
        assert!(geom.clone().with_param("sigma", 1.0).is_err());
        assert!(geom.clone().with_param("a0", f64::NAN).is_err());
        assert!(geom.clone().with_step_size(-1e-3).is_err());
        let decaying = geom.clone().with_preset("fig2-like").unwrap();
        assert_eq!(decaying.param("a0"), Some(0.1));
        assert!(geom.with_preset("nope").is_err());
        assert!(make_problem(ProblemId::GinzburgLandau).with_param("sigma", 0.0).is_ok());
        assert!(make_problem(ProblemId::Rotational2x3).with_param("x0", 2.0).is_err());
    }

    #[test]
    fn zero_path_examples() {
        let tan = make_problem(ProblemId::Tan);
        let v = tan.exact_zero_path(std::f64::consts::PI / 12.0).unwrap();
        assert!((v[0] - 3f64.sqrt()).abs() < 1e-12);

        let na = make_problem(ProblemId::NonAutonomous);
        assert!((na.exact_zero_path(1.0).unwrap()[0] - 6.0).abs() < 1e-12);

        let rot = make_problem(ProblemId::Rotational2x3);
        let v = rot.exact_zero_path(0.7).unwrap();
        assert!((v[0] - (-1.4f64).exp()).abs() < 1e-15 && v[1] == 0.0);

        let geom = make_problem(ProblemId::GeomBM2);
        let grid = WienerGrid::generate(&mut RngStream::new(1, 0), 0.0, 0.01, 10, 2).unwrap();
        assert_eq!(geom.exact(0.0, &grid).unwrap()[0], 1.0);
    }

    #[test]
    fn oracles_start_at_initial_state() {
        for id in ProblemId::ALL {
            let p = make_problem(id);
            let start = p.oracle().value().unwrap();
            assert!((&start - p.x0()).iter().all(|d| d.abs() < 1e-15), "{id}: {start}");
        }
    }

    #[test]
    fn tan_pole_is_detected() {
        let tan = make_problem(ProblemId::Tan);
        let t = std::f64::consts::FRAC_PI_4;
        assert!(matches!(tan.exact_zero_path(t), Err(SdeError::PoleProximity { .. })));
    }

    #[test]
    fn analytic_contractions_match_finite_differences() {
        let mut rng = RngStream::new(99, 0);
        for id in ProblemId::ALL {
            let p = make_problem(id);
            for _ in 0..100 {
                let x: Vector = (0..p.dim()).map(|_| 1.5 * rng.standard_normal()).collect();
                let t = rng.standard_normal().abs();
                let analytic = p.diffusion_contraction(x.view(), t).unwrap();
                let fd = fd_contraction(&p, x.view(), t).unwrap();
                for j in 0..p.dim() {
                    let scale = analytic[j].abs().max(1.0);
                    assert!((analytic[j] - fd[j]).abs() <= 1e-4 * scale, "{id}: {analytic} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn rotational_contraction_is_sum_of_squared_coefficient_matrices() {
        let b1 = array![[1.0, 0.0], [0.0, 1.0]];
        let b2 = array![[-1.0, 0.0], [0.0, -1.0]];
        let b3 = array![[0.0, -1.0], [1.0, 0.0]];
        let x = array![0.3, -1.2];
        let expected = b1.dot(&b1).dot(&x) + b2.dot(&b2).dot(&x) + b3.dot(&b3).dot(&x);
        let rot = make_problem(ProblemId::Rotational2x3);
        let c = fd_contraction(&rot, x.view(), 0.0).unwrap();
        assert!((&c - &expected).iter().all(|d| d.abs() < 1e-8));
    }

    #[test]
    fn geometric2_modified_drift_matches_solution_exponent() {
        let p = make_problem(ProblemId::GeomBM2).with_param("a0", 0.3).unwrap();
        let x = 2.5;
        let a = modified_drift(&p, array![x].view(), 0.0).unwrap()[0];
        assert!((a - (0.3 - 0.5 * (0.25 + 0.25)) * x).abs() < 1e-14);
    }

    #[test]
    fn accumulator_examples() {
        let mut riemann = PathAccumulator::new(AccumulatorMode::Riemann, 0.0);
        riemann.accumulate(0.0, 0.01, &[0.0; 100], |_, _| 1.0).unwrap();
        assert!((riemann.value - 1.0).abs() < 1e-12);

        let increments = [0.1, -0.25, 0.3, 0.05];
        let mut ito = PathAccumulator::new(AccumulatorMode::Ito, 0.0);
        ito.accumulate(0.0, 0.25, &increments, |_, _| 1.0).unwrap();
        assert_eq!(ito.value, ito.w);
        assert_eq!(ito.w, ((0.1 + -0.25) + 0.3) + 0.05);

        let (alpha, dt) = (0.01, 1e-3);
        let mut gl = PathAccumulator::new(AccumulatorMode::Riemann, 0.0);
        gl.accumulate(0.0, dt, &vec![0.0; 1000], |s, _| (2.0 * alpha * s).exp()).unwrap();
        let closed = (0.02f64.exp() - 1.0) / 0.02;
        assert!((gl.value - closed).abs() < 2e-5);
        assert!((closed - 1.010067).abs() < 1e-6);

        let mut acc = PathAccumulator::new(AccumulatorMode::Ito, 0.0);
        assert!(matches!(acc.accumulate(0.5, 0.1, &[0.1], |_, _| 1.0), Err(SdeError::Usage(_))));
    }

    #[test]
    fn accumulation_is_associative_over_segments() {
        let mut rng = RngStream::new(4, 0);
        let incs: Vec<f64> = (0..50).map(|_| 0.1 * rng.standard_normal()).collect();
        let g = |s: f64, w: f64| (0.3 * s + w).exp();
        let mut whole = PathAccumulator::new(AccumulatorMode::Riemann, 0.0);
        whole.accumulate(0.0, 0.01, &incs, g).unwrap();
        let mut parts = PathAccumulator::new(AccumulatorMode::Riemann, 0.0);
        parts.accumulate(0.0, 0.01, &incs[..17], g).unwrap();
        let t_mid = parts.last_time;
        parts.accumulate(t_mid, 0.01, &incs[17..], g).unwrap();
        assert_eq!(whole, parts);
    }

    #[test]
    fn exact_requires_grid_nodes() {
        let p = make_problem(ProblemId::NonAutonomous);
        let grid = WienerGrid::generate(&mut RngStream::new(1, 0), 0.0, 0.1, 10, 1).unwrap();
        assert!(p.exact(0.55, &grid).is_err());
        assert!(p.exact(2.0, &grid).is_err());
        let w = grid.w_at(10)[0];
        let v = p.exact(1.0, &grid).unwrap()[0];
        assert!((v - (4.0 + 2.0 * (w + 1.0))).abs() < 1e-12);
    }
}
