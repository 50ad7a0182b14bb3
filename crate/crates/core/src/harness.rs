//! Experiment drivers behind the command-line tool: single runs, error-vs-time
//! comparisons on a shared path, strong-order convergence studies and QSD
//! ensembles. Every driver returns a [`Table`] ready for [`write_csv`].

use std::io::Write;
use std::path::Path;

use crate::adaptive::{
    integrate_adaptive_partial, integrate_fixed_partial, AdaptiveOptions, FixedStepConfig, NoiseSource,
    StepController, Trajectory,
};
use crate::error::{Result, SdeError};
use crate::noise::{RngStream, WienerGrid};
use crate::problems::BenchmarkProblem;
use crate::qsd::{run_ensemble, AbsorberModel, EnsembleConfig};
use crate::schemes::SchemeId;
use crate::system::{NoiseIncrement, SdeSystem};

/// Errors below this are treated as round-off in convergence fits.
pub const ERROR_FLOOR: f64 = 1e-14;

/// Warn when an ensemble loses more than this much norm at the Fock cutoff.
pub const TRUNCATION_WARNING: f64 = 1e-6;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push_numbers(&mut self, values: &[f64]) {
        self.rows.push(values.iter().map(|&v| format_value(v)).collect());
    }

    /// A diagnostic row: the failure time followed by `label` in every other
    /// column.
    fn push_diagnostic(&mut self, t: f64, label: &str) {
        let mut row = vec![format_value(t)];
        row.resize(self.header.len(), label.to_string());
        self.rows.push(row);
    }

    /// Values of a numeric column (non-numeric cells become `NaN`).
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j].parse().unwrap_or(f64::NAN)).collect())
    }
}

/// 17 significant digits in scientific notation; round-trips every `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv<W: Write>(table: &Table, out: W) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()
}

pub fn write_csv_file(table: &Table, path: &Path) -> Result<()> {
    let io = |source| SdeError::Io { path: path.to_path_buf(), source };
    let file = std::fs::File::create(path).map_err(io)?;
    write_csv(table, std::io::BufWriter::new(file)).map_err(io)
}

pub fn read_csv(path: &Path) -> Result<Table> {
    let io = |source| SdeError::Io { path: path.to_path_buf(), source };
    let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path).map_err(|e| io(e.into()))?;
    let header = r.headers().map_err(|e| io(e.into()))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for record in r.records() {
        rows.push(record.map_err(|e| io(e.into()))?.iter().map(String::from).collect());
    }
    Ok(Table { header, rows })
}

/// Output of a driver: the table, human-readable notes for stderr, and the
/// numerical failure that truncated the output, if any.
#[derive(Debug)]
pub struct Report {
    pub table: Table,
    pub notes: Vec<String>,
    pub failure: Option<SdeError>,
}

fn failure_label(e: &SdeError) -> &'static str {
    match e {
        SdeError::PoleProximity { .. } => "pole",
        SdeError::BlowUp { .. } => "blowup",
        SdeError::StepSizeUnderflow { .. } => "underflow",
        _ => "failed",
    }
}

fn failure_time(e: &SdeError) -> f64 {
    match e {
        SdeError::PoleProximity { t }
        | SdeError::BlowUp { t, .. }
        | SdeError::StepSizeUnderflow { t, .. }
        | SdeError::Domain { t, .. } => *t,
        _ => f64::NAN,
    }
}

fn check_component(problem: &BenchmarkProblem, component: usize) -> Result<()> {
    if component >= problem.dim() {
        return Err(SdeError::Argument(format!(
            "component {} out of range: problem {} has {} component(s)",
            component + 1,
            problem.id(),
            problem.dim()
        )));
    }
    Ok(())
}

fn check_span(problem: &BenchmarkProblem, t_end: f64) -> Result<()> {
    if !(t_end > problem.t0()) {
        return Err(SdeError::Argument(format!("end time must exceed {}, got {t_end}", problem.t0())));
    }
    Ok(())
}

/// Exact solution of component `component` after each of the given step
/// counts, following `path`. Stops at the first pole (checked after every
/// step) and returns it.
fn exact_along(
    problem: &BenchmarkProblem,
    path: impl IntoIterator<Item = NoiseIncrement>,
    at_steps: &[usize],
    times: &[f64],
    component: usize,
) -> (Vec<f64>, Option<SdeError>) {
    let mut oracle = problem.oracle();
    let mut values = Vec::with_capacity(at_steps.len());
    let mut next = 0;
    let mut push_ready = |done: usize, oracle: &crate::problems::OracleTracker<'_>, values: &mut Vec<f64>| -> Result<()> {
        while next < at_steps.len() && at_steps[next] == done {
            let _ = times[next];
            values.push(oracle.value()?[component]);
            next += 1;
        }
        Ok(())
    };
    if let Err(e) = push_ready(0, &oracle, &mut values) {
        return (values, Some(e));
    }
    for (k, inc) in path.into_iter().enumerate() {
        oracle.advance(&inc);
        if let Err(e) = oracle.value() {
            return (values, Some(e));
        }
        if let Err(e) = push_ready(k + 1, &oracle, &mut values) {
            return (values, Some(e));
        }
    }
    (values, None)
}

fn log_error(approx: f64, exact: f64) -> f64 {
    (approx - exact).abs().log10()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stepper {
    Fixed { scheme: SchemeId, dt: f64 },
    Adaptive(StepController),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub problem: BenchmarkProblem,
    pub stepper: Stepper,
    pub t_end: f64,
    pub seed: u64,
    pub stride: usize,
    /// Zero-based component for the error column.
    pub component: usize,
}

/// One trajectory on stream 0 of `seed`. Columns: `t, x1.., w1.., dt_used,
/// rejected_flag, log10_abs_err`.
pub fn cmd_run(spec: &RunSpec) -> Result<Report> {
    let problem = &spec.problem;
    check_component(problem, spec.component)?;
    check_span(problem, spec.t_end)?;
    let stride = spec.stride.max(1);
    let mut rng = RngStream::new(spec.seed, 0);
    let (traj, scheme_failure) = match &spec.stepper {
        Stepper::Fixed { scheme, dt } => {
            let cfg = FixedStepConfig { t0: problem.t0(), t_end: spec.t_end, dt: *dt, scheme: *scheme, stride };
            integrate_fixed_partial(problem, problem.x0(), &cfg, NoiseSource::Fresh(&mut rng))?
        }
        Stepper::Adaptive(ctrl) => {
            let opts = AdaptiveOptions { stride, ..Default::default() };
            integrate_adaptive_partial(problem, problem.x0(), problem.t0(), spec.t_end, ctrl, &mut rng, &opts)?
        }
    };

    let n = problem.dim();
    let m = problem.noise_dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|j| format!("x{j}")));
    header.extend((1..=m).map(|k| format!("w{k}")));
    header.extend(["dt_used", "rejected_flag", "log10_abs_err"].map(String::from));
    let mut table = Table::new(header);

    let (exact, pole) = exact_along(problem, traj.consumed.iter().cloned(), &traj.step_index, &traj.t, spec.component);
    let rows = exact.len().min(traj.len());
    #[allow(clippy::needless_range_loop)]
    for r in 0..rows {
        let mut row = vec![traj.t[r]];
        row.extend(traj.x[r].iter());
        row.extend(traj.w[r].iter());
        row.push(traj.dt_used[r]);
        row.push(if traj.rejected[r] { 1.0 } else { 0.0 });
        row.push(log_error(traj.x[r][spec.component], exact[r]));
        let mut cells: Vec<String> = row.iter().map(|&v| format_value(v)).collect();
        cells[n + m + 2] = u8::from(traj.rejected[r]).to_string();
        table.rows.push(cells);
    }

    let mut notes = vec![format!("{} accepted, {} rejected steps", traj.accepted_steps, traj.rejected_steps)];
    let failure = pole.or(scheme_failure);
    if let Some(e) = &failure {
        table.push_diagnostic(failure_time(e), failure_label(e));
        notes.push(format!("output truncated: {e}"));
    }
    Ok(Report { table, notes, failure })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSpec {
    pub problem: BenchmarkProblem,
    pub schemes: Vec<SchemeId>,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub stride: usize,
    pub component: usize,
}

/// All schemes on one shared path (stream 0 of `seed`). Columns: `t,
/// log10_abs_err_<scheme>...`. Schemes that cannot handle the problem's noise
/// are left out with a note; a scheme that blows up shows its failure label
/// in its column from then on.
pub fn cmd_compare(spec: &CompareSpec) -> Result<Report> {
    let problem = &spec.problem;
    check_component(problem, spec.component)?;
    check_span(problem, spec.t_end)?;
    if spec.schemes.is_empty() {
        return Err(SdeError::Argument("no schemes requested".into()));
    }
    let stride = spec.stride.max(1);
    let mut cfg = FixedStepConfig { t0: problem.t0(), t_end: spec.t_end, dt: spec.dt, scheme: SchemeId::Srk2, stride };
    let (steps, partial) = cfg.step_count()?;
    if partial > 0.0 {
        return Err(SdeError::Argument(format!(
            "time step {} does not divide the span {}",
            spec.dt,
            spec.t_end - problem.t0()
        )));
    }
    let grid = WienerGrid::generate(&mut RngStream::new(spec.seed, 0), problem.t0(), spec.dt, steps, problem.noise_dim())?;

    let mut notes = Vec::new();
    let mut columns: Vec<(SchemeId, Trajectory, Option<SdeError>)> = Vec::new();
    for &scheme in &spec.schemes {
        cfg.scheme = scheme;
        match integrate_fixed_partial(problem, problem.x0(), &cfg, NoiseSource::Grid(&grid)) {
            Ok((traj, failure)) => {
                if let Some(e) = &failure {
                    notes.push(format!("{scheme}: {e}"));
                }
                columns.push((scheme, traj, failure));
            }
            Err(SdeError::UnsupportedNoise(msg)) => notes.push(format!("{scheme} skipped: {msg}")),
            Err(e) => return Err(e),
        }
    }
    if columns.is_empty() {
        return Err(SdeError::UnsupportedNoise(format!("no requested scheme supports problem {}", problem.id())));
    }

    // Every run records the same rows up to its own failure.
    let mut at_steps: Vec<usize> = (0..=steps).filter(|k| k % stride == 0).collect();
    if *at_steps.last().expect("step 0") != steps {
        at_steps.push(steps);
    }
    let times: Vec<f64> =
        at_steps.iter().map(|&k| if k == steps { spec.t_end } else { problem.t0() + k as f64 * spec.dt }).collect();
    let (exact, pole) = exact_along(problem, (0..steps).map(|l| grid.increment(l)), &at_steps, &times, spec.component);

    let mut header = vec!["t".to_string()];
    header.extend(columns.iter().map(|(s, ..)| format!("log10_abs_err_{s}")));
    let mut table = Table::new(header);
    for (r, &t) in times.iter().enumerate().take(exact.len()) {
        let mut cells = vec![format_value(t)];
        for (_, traj, failure) in &columns {
            cells.push(match traj.x.get(r) {
                Some(x) => format_value(log_error(x[spec.component], exact[r])),
                None => failure.as_ref().map_or("nan", failure_label).to_string(),
            });
        }
        table.rows.push(cells);
    }
    if let Some(e) = &pole {
        table.push_diagnostic(failure_time(e), failure_label(e));
        notes.push(format!("output truncated: {e}"));
    }
    let failure = pole.or_else(|| columns.into_iter().find_map(|(.., f)| f));
    Ok(Report { table, notes, failure })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergeSpec {
    pub problem: BenchmarkProblem,
    pub schemes: Vec<SchemeId>,
    /// Step sizes are `2^-level`.
    pub levels: Vec<u32>,
    /// The path is drawn `refine` dyadic levels below the finest step.
    pub refine: u32,
    pub t_end: f64,
    pub seed: u64,
    /// Number of paths whose errors are pooled by the median.
    pub paths: usize,
    /// Integrate on `W ≡ 0` against the closed-form zero-path solution.
    pub zero_noise: bool,
    pub component: usize,
    pub floor: f64,
}

impl ConvergeSpec {
    pub fn new(problem: BenchmarkProblem, schemes: Vec<SchemeId>, levels: Vec<u32>) -> Self {
        Self { problem, schemes, levels, refine: 0, t_end: 1.0, seed: 0, paths: 1, zero_noise: false, component: 0, floor: ERROR_FLOOR }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub dt: Vec<f64>,
    /// Median endpoint error per level, for each scheme.
    pub errors: Vec<(SchemeId, Vec<f64>)>,
    /// Least-squares slope of `log2 error` against `log2 dt` over the errors
    /// above the floor; `None` if fewer than two remain.
    pub slopes: Vec<(SchemeId, Option<f64>)>,
    pub seed: u64,
    pub streams: Vec<u64>,
    pub notes: Vec<String>,
}

impl ConvergenceReport {
    pub fn slope(&self, scheme: SchemeId) -> Option<f64> {
        self.slopes.iter().find(|(s, _)| *s == scheme).and_then(|(_, v)| *v)
    }

    /// Columns `dt, err_<scheme>...`, one row per level, then a `slope` row.
    pub fn table(&self) -> Table {
        let mut header = vec!["dt".to_string()];
        header.extend(self.errors.iter().map(|(s, _)| format!("err_{s}")));
        let mut table = Table::new(header);
        for (l, &dt) in self.dt.iter().enumerate() {
            let mut row = vec![dt];
            row.extend(self.errors.iter().map(|(_, e)| e[l]));
            table.push_numbers(&row);
        }
        let mut last = vec!["slope".to_string()];
        last.extend(self.slopes.iter().map(|(_, s)| s.map_or("nan".to_string(), format_value)));
        table.rows.push(last);
        table
    }
}

pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Endpoint exact value and grid for one stream, or `None` if the exact
/// solution hits a pole on the way.
fn convergence_path(spec: &ConvergeSpec, stream: u64, fine_dt: f64, steps: usize) -> Result<Option<(WienerGrid, f64)>> {
    let problem = &spec.problem;
    let m = problem.noise_dim();
    if spec.zero_noise {
        let grid = WienerGrid::zeros(problem.t0(), fine_dt, steps, m)?;
        return Ok(Some((grid, problem.exact_zero_path(spec.t_end)?[spec.component])));
    }
    let grid = WienerGrid::generate(&mut RngStream::new(spec.seed, stream), problem.t0(), fine_dt, steps, m)?;
    let (exact, pole) = exact_along(problem, (0..steps).map(|l| grid.increment(l)), &[steps], &[spec.t_end], spec.component);
    Ok(match pole {
        None => Some((grid, exact[0])),
        Some(e) if e.is_numerical() => None,
        Some(e) => return Err(e),
    })
}

/// Fixed-path strong convergence study over dyadic step sizes.
pub fn cmd_converge(spec: &ConvergeSpec) -> Result<ConvergenceReport> {
    let problem = &spec.problem;
    check_component(problem, spec.component)?;
    check_span(problem, spec.t_end)?;
    if spec.levels.len() < 4 {
        return Err(SdeError::Argument("a convergence study needs at least 4 levels".into()));
    }
    if spec.schemes.is_empty() || spec.paths == 0 {
        return Err(SdeError::Argument("need at least one scheme and one path".into()));
    }
    let mut levels = spec.levels.clone();
    levels.sort_unstable();
    levels.dedup();
    let fine = levels.last().expect("non-empty") + spec.refine;
    if fine > 40 {
        return Err(SdeError::Argument(format!("finest level 2^-{fine} is too fine")));
    }
    let fine_dt = (-(fine as f64)).exp2();
    let span = spec.t_end - problem.t0();
    let steps_f = span / fine_dt;
    if steps_f.fract() != 0.0 {
        return Err(SdeError::Argument(format!("span {span} is not a multiple of the finest step {fine_dt:e}")));
    }
    let steps = steps_f as usize;
    let coarse_steps = span * (levels[0] as f64).exp2();
    if coarse_steps.fract() != 0.0 {
        return Err(SdeError::Argument(format!("span {span} is not a multiple of the coarsest step")));
    }

    let paths = if spec.zero_noise { 1 } else { spec.paths };
    let mut notes = Vec::new();
    let mut schemes = spec.schemes.clone();
    let mut per_path: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut streams = Vec::new();
    let max_streams = 50 * paths as u64 + 50;
    let mut stream = 0;
    while per_path.len() < paths {
        if stream >= max_streams {
            return Err(SdeError::Argument(format!("only {} of {paths} paths usable after {stream} streams", per_path.len())));
        }
        let Some((grid, exact)) = convergence_path(spec, stream, fine_dt, steps)? else {
            notes.push(format!("stream {stream} skipped: exact solution reaches a pole"));
            stream += 1;
            continue;
        };
        let mut errors = Vec::with_capacity(schemes.len());
        let mut usable = true;
        let mut s = 0;
        while s < schemes.len() && usable {
            let scheme = schemes[s];
            let mut row = Vec::with_capacity(levels.len());
            for &level in &levels {
                let coarse = grid.coarsen(1usize << (fine - level))?;
                let cfg = FixedStepConfig { t0: problem.t0(), t_end: spec.t_end, dt: coarse.dt, scheme, stride: usize::MAX };
                match integrate_fixed_partial(problem, problem.x0(), &cfg, NoiseSource::Grid(&coarse)) {
                    Ok((traj, None)) => row.push((traj.final_state()[spec.component] - exact).abs()),
                    Ok((_, Some(e))) => {
                        notes.push(format!("stream {stream} skipped: {scheme} at dt 2^-{level}: {e}"));
                        usable = false;
                        break;
                    }
                    Err(SdeError::UnsupportedNoise(msg)) => {
                        notes.push(format!("{scheme} skipped: {msg}"));
                        row.clear();
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            if !usable {
                break;
            }
            if row.is_empty() {
                schemes.remove(s);
                for p in &mut per_path {
                    p.remove(s);
                }
                continue;
            }
            errors.push(row);
            s += 1;
        }
        if schemes.is_empty() {
            return Err(SdeError::UnsupportedNoise(format!("no requested scheme supports problem {}", problem.id())));
        }
        if usable {
            per_path.push(errors);
            streams.push(stream);
        }
        stream += 1;
    }

    let dt: Vec<f64> = levels.iter().map(|&l| (-(l as f64)).exp2()).collect();
    let mut errors = Vec::new();
    let mut slopes = Vec::new();
    for (s, &scheme) in schemes.iter().enumerate() {
        let med: Vec<f64> = (0..levels.len())
            .map(|l| median(&mut per_path.iter().map(|p| p[s][l]).collect::<Vec<_>>()))
            .collect();
        let kept: Vec<(f64, f64)> =
            dt.iter().zip(&med).filter(|(_, &e)| e > spec.floor && e.is_finite()).map(|(&h, &e)| (h.log2(), e.log2())).collect();
        if kept.len() < med.len() {
            notes.push(format!("{scheme}: {} level(s) below the {:e} floor left out of the fit", med.len() - kept.len(), spec.floor));
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = kept.into_iter().unzip();
        slopes.push((scheme, least_squares_slope(&xs, &ys)));
        errors.push((scheme, med));
    }
    Ok(ConvergenceReport { dt, errors, slopes, seed: spec.seed, streams, notes })
}

/// Columns `t, n_mean, n_stderr, M`.
pub fn cmd_qsd(model: &AbsorberModel, cfg: &EnsembleConfig) -> Result<Report> {
    let stats = run_ensemble(model, cfg)?;
    let mut notes = Vec::new();
    for (stream, msg) in &stats.failures {
        notes.push(format!("trajectory on stream {stream} dropped: {msg}"));
    }
    if stats.max_truncation_loss > TRUNCATION_WARNING {
        notes.push(format!(
            "warning: Fock truncation at {} loses up to {:e} of the norm",
            model.n_max, stats.max_truncation_loss
        ));
    }
    if stats.count == 0 {
        return Err(SdeError::EnsembleFailed { failed: stats.failures.len() });
    }
    let mut table = Table::new(["t", "n_mean", "n_stderr", "M"]);
    let mean = stats.mean();
    let stderr = stats.stderr();
    for (k, &t) in stats.times.iter().enumerate() {
        table.rows.push(vec![format_value(t), format_value(mean[k]), format_value(stderr[k]), stats.count.to_string()]);
    }
    Ok(Report { table, notes, failure: None })
}
