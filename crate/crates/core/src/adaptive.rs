//! Fixed-step and adaptive trajectory drivers.
//!
//! The adaptive driver steps with `Srk4` and controls the step with its
//! embedded estimate. A rejected `(Δt, ΔW)` is bridge-split: the first half
//! is retried at once and the second half waits on a stack. Fresh increments
//! are drawn only when that stack is empty, so the realized Wiener path never
//! changes once drawn.

use ndarray::ArrayView1;

use crate::error::{Result, SdeError};
use crate::noise::{bridge_split_with, quantize, sample_increment, BridgeRule, RngStream, WienerGrid};
use crate::schemes::{srk4_step, step, SchemeId};
use crate::system::{NoiseIncrement, SdeSystem, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct StepController {
    pub atol: f64,
    pub rtol: f64,
    pub safety: f64,
    pub min_scale: f64,
    pub max_scale: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// First trial step; defaults to `min(dt_max, (t_end − t0)/100)`.
    pub dt_initial: Option<f64>,
}

impl StepController {
    pub fn new(atol: f64, rtol: f64) -> Self {
        Self {
            atol,
            rtol,
            safety: 0.9,
            min_scale: 0.2,
            max_scale: 5.0,
            dt_min: 1e-14,
            dt_max: f64::INFINITY,
            dt_initial: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.atol > 0.0
            && self.rtol > 0.0
            && self.safety > 0.0
            && 0.0 < self.min_scale
            && self.min_scale < 1.0
            && 1.0 < self.max_scale
            && self.dt_min > 0.0
            && self.dt_min <= self.dt_max
            && self.dt_initial.is_none_or(|h| h > 0.0);
        if ok {
            Ok(())
        } else {
            Err(SdeError::Argument(format!("inconsistent step controller {self:?}")))
        }
    }

    fn scale(&self, norm: f64) -> f64 {
        if norm == 0.0 {
            return self.max_scale;
        }
        (self.safety * norm.powf(-0.2)).clamp(self.min_scale, self.max_scale)
    }
}

/// `sqrt(mean_j (err_j / (atol + rtol·max(|x_old,j|, |x_new,j|)))²)`.
pub fn error_norm(err: ArrayView1<'_, f64>, x_old: ArrayView1<'_, f64>, x_new: ArrayView1<'_, f64>, ctrl: &StepController) -> f64 {
    let n = err.len();
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = (0..n)
        .map(|j| {
            let scale = ctrl.atol + ctrl.rtol * x_old[j].abs().max(x_new[j].abs());
            (err[j] / scale).powi(2)
        })
        .sum();
    (sum / n as f64).sqrt()
}

/// Recorded output of a run. Row 0 is the initial state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vector>,
    pub w: Vec<Vector>,
    pub dt_used: Vec<f64>,
    /// Number of accepted steps taken when each row was recorded.
    pub step_index: Vec<usize>,
    /// Set on rows whose step was reached after at least one rejection.
    pub rejected: Vec<bool>,
    /// Increments of every accepted step, in order.
    pub consumed: Vec<NoiseIncrement>,
    /// Freshly drawn increments, before any bridge splitting.
    pub roots: Vec<NoiseIncrement>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl Trajectory {
    fn start(x0: &Vector, t0: f64, m: usize) -> Self {
        let mut traj = Trajectory::default();
        traj.record(t0, x0, &Vector::zeros(m), 0.0, false);
        traj
    }

    fn record(&mut self, t: f64, x: &Vector, w: &Vector, dt: f64, rejected: bool) {
        self.step_index.push(self.accepted_steps);
        self.t.push(t);
        self.x.push(x.clone());
        self.w.push(w.clone());
        self.dt_used.push(dt);
        self.rejected.push(rejected);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn final_state(&self) -> &Vector {
        self.x.last().expect("trajectory always holds the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.t.last().expect("trajectory always holds the initial state")
    }
}

pub type Projection<'a> = dyn Fn(&mut Vector) + Sync + 'a;
pub type RejectHook<'a> = dyn Fn(usize) -> bool + Sync + 'a;

pub struct AdaptiveOptions<'a> {
    /// Record every `stride`-th accepted step (the final step always).
    pub stride: usize,
    pub bridge: BridgeRule,
    /// Applied to the state after every accepted step, e.g. renormalization.
    pub projection: Option<&'a Projection<'a>>,
    /// Keep `consumed` and `roots` in the trajectory.
    pub record_path: bool,
    /// Test hook: forces rejection of the attempt with the given index.
    #[doc(hidden)]
    pub force_reject: Option<&'a RejectHook<'a>>,
}

impl Default for AdaptiveOptions<'_> {
    fn default() -> Self {
        Self { stride: 1, bridge: BridgeRule::default(), projection: None, record_path: true, force_reject: None }
    }
}

struct Segment {
    t_start: f64,
    t_stop: f64,
    inc: NoiseIncrement,
}

impl Segment {
    fn split(self, rng: &mut RngStream, rule: BridgeRule) -> (Segment, Segment) {
        let (a, b) = bridge_split_with(&self.inc, rng, rule);
        let t_mid = self.t_start + a.dt;
        (
            Segment { t_start: self.t_start, t_stop: t_mid, inc: a },
            Segment { t_start: t_mid, t_stop: self.t_stop, inc: b },
        )
    }
}

pub fn integrate_adaptive<S: SdeSystem + ?Sized>(
    sys: &S,
    x0: &Vector,
    t0: f64,
    t_end: f64,
    ctrl: &StepController,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    integrate_adaptive_with(sys, x0, t0, t_end, ctrl, rng, &AdaptiveOptions::default())
}

pub fn integrate_adaptive_with<S: SdeSystem + ?Sized>(
    sys: &S,
    x0: &Vector,
    t0: f64,
    t_end: f64,
    ctrl: &StepController,
    rng: &mut RngStream,
    opts: &AdaptiveOptions<'_>,
) -> Result<Trajectory> {
    let (traj, failure) = integrate_adaptive_partial(sys, x0, t0, t_end, ctrl, rng, opts)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(traj),
    }
}

/// Like [`integrate_adaptive_with`], but a numerical failure mid-run returns
/// the trajectory up to the last accepted step alongside the error.
pub fn integrate_adaptive_partial<S: SdeSystem + ?Sized>(
    sys: &S,
    x0: &Vector,
    t0: f64,
    t_end: f64,
    ctrl: &StepController,
    rng: &mut RngStream,
    opts: &AdaptiveOptions<'_>,
) -> Result<(Trajectory, Option<SdeError>)> {
    ctrl.validate()?;
    if !(t_end > t0) {
        return Err(SdeError::Argument(format!("end time {t_end} must exceed start time {t0}")));
    }
    if x0.len() != sys.dim() {
        return Err(SdeError::Argument(format!("initial state has {} components, system expects {}", x0.len(), sys.dim())));
    }
    let m = sys.noise_dim();
    let stride = opts.stride.max(1);
    let mut traj = Trajectory::start(x0, t0, m);
    let mut x = x0.clone();
    let mut w = Vector::zeros(m);
    let mut t = t0;
    let mut pending: Vec<Segment> = Vec::new();
    let mut dt_next = ctrl.dt_initial.unwrap_or((t_end - t0) / 100.0).clamp(ctrl.dt_min, ctrl.dt_max);
    let mut attempt = 0usize;
    let mut after_rejection = false;

    while t < t_end || !pending.is_empty() {
        let seg = match pending.pop() {
            Some(mut seg) => {
                while seg.inc.dt > dt_next && 0.5 * seg.inc.dt >= ctrl.dt_min {
                    let (first, second) = seg.split(rng, opts.bridge);
                    pending.push(second);
                    seg = first;
                }
                seg
            }
            None => {
                let remaining = t_end - t;
                let last = dt_next >= remaining;
                let dt = if last { remaining } else { dt_next };
                let mut inc = sample_increment(rng, dt, m)?;
                quantize(&mut inc);
                if opts.record_path {
                    traj.roots.push(inc.clone());
                }
                Segment { t_start: t, t_stop: if last { t_end } else { t + dt }, inc }
            }
        };

        let trial = match srk4_step(sys, x.view(), t, &seg.inc) {
            Err(e) if !e.is_numerical() => return Err(e),
            trial => trial,
        };
        let norm = match &trial {
            Ok(r) => {
                let err = r.embedded_error.as_ref().expect("srk4 carries an embedded pair");
                error_norm(err.view(), x.view(), r.state.view(), ctrl)
            }
            Err(_) => f64::INFINITY,
        };
        let forced = opts.force_reject.is_some_and(|hook| hook(attempt));
        attempt += 1;

        if norm <= 1.0 && !forced {
            let mut state = trial?.state;
            if let Some(project) = opts.projection {
                project(&mut state);
            }
            x = state;
            w += &seg.inc.dw;
            t = seg.t_stop;
            traj.accepted_steps += 1;
            let done = t >= t_end && pending.is_empty();
            if traj.accepted_steps.is_multiple_of(stride) || done {
                traj.record(t, &x, &w, seg.inc.dt, after_rejection);
            }
            after_rejection = false;
            dt_next = (seg.inc.dt * ctrl.scale(norm)).clamp(ctrl.dt_min, ctrl.dt_max);
            if opts.record_path {
                traj.consumed.push(seg.inc);
            }
        } else {
            traj.rejected_steps += 1;
            after_rejection = true;
            if 0.5 * seg.inc.dt < ctrl.dt_min {
                let e = SdeError::StepSizeUnderflow { t, dt: seg.inc.dt, norm, state: x.to_vec() };
                return Ok((traj, Some(e)));
            }
            let (first, second) = seg.split(rng, opts.bridge);
            dt_next = first.inc.dt;
            pending.push(second);
            pending.push(first);
        }
    }
    Ok((traj, None))
}

/// Where a fixed-step run takes its Wiener increments from.
pub enum NoiseSource<'a> {
    /// Draw `N(0, Δt)` increments one step at a time.
    Fresh(&'a mut RngStream),
    /// Consume a recorded path; the grid is coarsened if `dt` is a multiple
    /// of its step.
    Grid(&'a WienerGrid),
    /// `ΔW ≡ 0`.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedStepConfig {
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub scheme: SchemeId,
    pub stride: usize,
}

impl FixedStepConfig {
    pub fn new(t0: f64, t_end: f64, dt: f64, scheme: SchemeId) -> Self {
        Self { t0, t_end, dt, scheme, stride: 1 }
    }

    /// Number of full steps and the length of a trailing partial step (zero
    /// if the span is an integer number of steps).
    pub fn step_count(&self) -> Result<(usize, f64)> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SdeError::Argument(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.t_end > self.t0) {
            return Err(SdeError::Argument(format!("end time {} must exceed start time {}", self.t_end, self.t0)));
        }
        let ratio = (self.t_end - self.t0) / self.dt;
        let nearest = ratio.round();
        if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            return Ok((nearest as usize, 0.0));
        }
        let full = ratio.floor() as usize;
        Ok((full, self.t_end - (self.t0 + full as f64 * self.dt)))
    }
}

fn grid_for(grid: &WienerGrid, dt: f64) -> Result<std::borrow::Cow<'_, WienerGrid>> {
    let ratio = dt / grid.dt;
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-9 * factor {
        return Err(SdeError::Argument(format!("step {dt} is not a multiple of the grid step {}", grid.dt)));
    }
    if factor == 1.0 {
        Ok(std::borrow::Cow::Borrowed(grid))
    } else {
        Ok(std::borrow::Cow::Owned(grid.coarsen(factor as usize)?))
    }
}

/// Uniform stepping with any scheme.
pub fn integrate_fixed<S: SdeSystem + ?Sized>(
    sys: &S,
    x0: &Vector,
    cfg: &FixedStepConfig,
    noise: NoiseSource<'_>,
) -> Result<Trajectory> {
    let (traj, failure) = integrate_fixed_partial(sys, x0, cfg, noise)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(traj),
    }
}

/// Like [`integrate_fixed`], but a numerical failure returns the steps taken
/// so far alongside the error.
pub fn integrate_fixed_partial<S: SdeSystem + ?Sized>(
    sys: &S,
    x0: &Vector,
    cfg: &FixedStepConfig,
    noise: NoiseSource<'_>,
) -> Result<(Trajectory, Option<SdeError>)> {
    if x0.len() != sys.dim() {
        return Err(SdeError::Argument(format!("initial state has {} components, system expects {}", x0.len(), sys.dim())));
    }
    let (full, partial) = cfg.step_count()?;
    let m = sys.noise_dim();
    let stride = cfg.stride.max(1);
    let mut noise = noise;
    let grid = match &noise {
        NoiseSource::Grid(g) => {
            if partial > 0.0 {
                return Err(SdeError::Argument("grid-driven runs need an integer number of steps".into()));
            }
            let g = grid_for(g, cfg.dt)?;
            if g.len() < full || g.noise_dim() != m {
                return Err(SdeError::Argument(format!(
                    "grid has {} steps of {} processes; run needs {full} steps of {m}",
                    g.len(),
                    g.noise_dim()
                )));
            }
            Some(g)
        }
        _ => None,
    };
    let total = full + usize::from(partial > 0.0);
    let mut traj = Trajectory::start(x0, cfg.t0, m);
    let mut x = x0.clone();
    let mut w = Vector::zeros(m);
    for k in 0..total {
        let dt = if k < full { cfg.dt } else { partial };
        let t = cfg.t0 + k as f64 * cfg.dt;
        let inc = match (&mut noise, &grid) {
            (_, Some(g)) => g.increment(k),
            (NoiseSource::Fresh(rng), None) => sample_increment(rng, dt, m)?,
            _ => NoiseIncrement::zero(dt, m),
        };
        let result = match step(cfg.scheme, sys, x.view(), t, &inc) {
            Ok(r) => r,
            Err(SdeError::BlowUp { t, state, .. }) => return Ok((traj, Some(SdeError::BlowUp { t, step: Some(k), state }))),
            Err(e) if e.is_numerical() => return Ok((traj, Some(e))),
            Err(e) => return Err(e),
        };
        x = result.state;
        w += &inc.dw;
        let t_next = if k + 1 == total { cfg.t_end } else { cfg.t0 + (k + 1) as f64 * cfg.dt };
        traj.accepted_steps += 1;
        if (k + 1) % stride == 0 || k + 1 == total {
            traj.record(t_next, &x, &w, dt, false);
        }
        traj.consumed.push(inc);
    }
    Ok((traj, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_problem, ProblemId};
    use crate::system::{FnSystem, Matrix};
    use ndarray::array;

    #[test]
    fn error_norm_examples() {
        let ctrl = StepController::new(1e-6, 1e-3);
        let zero = Vector::zeros(2);
        assert_eq!(error_norm(zero.view(), zero.view(), zero.view(), &ctrl), 0.0);
        let one = array![1e-6];
        let origin = array![0.0];
        assert_eq!(error_norm(one.view(), origin.view(), origin.view(), &ctrl), 1.0);
        let two = array![1e-6, 1e-6];
        assert_eq!(error_norm(two.view(), zero.view(), zero.view(), &ctrl), 1.0);
    }

    #[test]
    fn controller_validation() {
        assert!(StepController::new(1e-6, 1e-6).validate().is_ok());
        assert!(StepController::new(0.0, 1e-6).validate().is_err());
        let mut c = StepController::new(1e-6, 1e-6);
        c.min_scale = 1.5;
        assert!(c.validate().is_err());
        let mut c = StepController::new(1e-6, 1e-6);
        c.dt_max = 1e-20;
        assert!(c.validate().is_err());
    }

    #[test]
    fn adaptive_exponential_matches_reference() {
        let sys = FnSystem::new(1, 1, |x, _| x.to_owned(), |_, _| Matrix::zeros((1, 1)));
        let tol = 1e-10;
        let traj = integrate_adaptive(&sys, &array![1.0], 0.0, 1.0, &StepController::new(tol, tol), &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(traj.final_time(), 1.0);
        assert!((traj.final_state()[0] - std::f64::consts::E).abs() <= 100.0 * tol);
    }

    #[test]
    fn forced_rejection_splits_exactly() {
        let sys = make_problem(ProblemId::NonAutonomous);
        let hook = |attempt: usize| attempt == 0;
        let opts = AdaptiveOptions { force_reject: Some(&hook), ..Default::default() };
        let mut ctrl = StepController::new(1e-6, 1e-6);
        ctrl.dt_initial = Some(0.1);
        let traj = integrate_adaptive_with(&sys, sys.x0(), 0.0, 0.5, &ctrl, &mut RngStream::new(2, 0), &opts).unwrap();
        assert_eq!(traj.rejected_steps, 1);
        let root = &traj.roots[0];
        let (a, b) = (&traj.consumed[0], &traj.consumed[1]);
        assert_eq!(a.dt + b.dt, root.dt);
        assert_eq!(a.dw[0] + b.dw[0], root.dw[0]);
        assert!(traj.rejected[1]);
    }

    #[test]
    fn fixed_single_step_equals_step() {
        let sys = make_problem(ProblemId::Tan);
        let grid = WienerGrid::generate(&mut RngStream::new(8, 0), 0.0, 0.01, 1, 1).unwrap();
        let cfg = FixedStepConfig::new(0.0, 0.01, 0.01, SchemeId::Srk2);
        let traj = integrate_fixed(&sys, sys.x0(), &cfg, NoiseSource::Grid(&grid)).unwrap();
        let direct = step(SchemeId::Srk2, &sys, sys.x0().view(), 0.0, &grid.increment(0)).unwrap();
        assert_eq!(*traj.final_state(), direct.state);
        assert_eq!(traj.len(), 2);
    }

    #[test]
    fn fresh_draws_match_generated_grid() {
        let sys = make_problem(ProblemId::GeomBM2);
        let cfg = FixedStepConfig::new(0.0, 1.0, 0.01, SchemeId::MilsteinDF);
        let fresh = integrate_fixed(&sys, sys.x0(), &cfg, NoiseSource::Fresh(&mut RngStream::new(5, 2))).unwrap();
        let grid = WienerGrid::generate(&mut RngStream::new(5, 2), 0.0, 0.01, 100, 2).unwrap();
        let gridded = integrate_fixed(&sys, sys.x0(), &cfg, NoiseSource::Grid(&grid)).unwrap();
        assert_eq!(fresh.x, gridded.x);
        assert_eq!(fresh.final_time(), 1.0);
    }

    #[test]
    fn coarse_grid_run_equals_presummed_run() {
        let sys = make_problem(ProblemId::Rotational2x3);
        let fine = WienerGrid::generate(&mut RngStream::new(3, 0), 0.0, 0.005, 200, 3).unwrap();
        let coarse = fine.coarsen(4).unwrap();
        let cfg = FixedStepConfig::new(0.0, 1.0, 0.02, SchemeId::Srk4);
        let a = integrate_fixed(&sys, sys.x0(), &cfg, NoiseSource::Grid(&fine)).unwrap();
        let b = integrate_fixed(&sys, sys.x0(), &cfg, NoiseSource::Grid(&coarse)).unwrap();
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn stride_and_partial_final_step() {
        let sys = make_problem(ProblemId::NonAutonomous);
        let mut cfg = FixedStepConfig::new(0.0, 1.05, 0.1, SchemeId::EulerMaruyama);
        cfg.stride = 4;
        let traj = integrate_fixed(&sys, sys.x0(), &cfg, NoiseSource::Zero).unwrap();
        assert_eq!(traj.t.len(), 1 + 2 + 1);
        assert_eq!(traj.final_time(), 1.05);
        assert!((traj.dt_used.last().unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(traj.accepted_steps, 11);
    }

    #[test]
    fn blow_up_carries_step_index() {
        let sys = FnSystem::new(1, 0, |x, _| array![x[0] * x[0]], |_, _| Matrix::zeros((1, 0)));
        let cfg = FixedStepConfig::new(0.0, 10.0, 0.5, SchemeId::EulerMaruyama);
        match integrate_fixed(&sys, &array![1.0], &cfg, NoiseSource::Zero) {
            Err(SdeError::BlowUp { step: Some(_), .. }) | Err(SdeError::Domain { .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
