//! Quantum state diffusion for the two-photon nonlinear absorber
//!
//! ```text
//! d|ψ⟩ = 0.1(a† − a)|ψ⟩dt + (2⟨a†²⟩a² − a†²a² − ⟨a†²⟩⟨a²⟩)|ψ⟩dt + √2(a² − ⟨a²⟩)|ψ⟩dξ
//! ```
//!
//! on a Fock space truncated at `N_max` photons. The complex state is embedded
//! in `R^{2(N_max+1)}` as interleaved `(Re ψ_n, Im ψ_n)` pairs and integrated
//! with the adaptive `Srk4` driver.

use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView1, Axis};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::adaptive::{integrate_adaptive_with, AdaptiveOptions, StepController};
use crate::error::{Result, SdeError};
use crate::exact_sum::ExactSum;
use crate::noise::{sample_increment, RngStream};
use crate::schemes::{step, SchemeId};
use crate::system::{Matrix, NoiseStructure, SdeSystem, Vector};

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ladder {
    Lower,
    Raise,
    Number,
    Lower2,
    Raise2,
}

/// A (not necessarily normalized) state in the truncated Fock basis.
#[derive(Debug, Clone, PartialEq)]
pub struct FockState {
    pub amp: Vec<Complex64>,
    /// Squared norm dropped at the truncation edge by the operation that
    /// produced this state.
    pub truncation_loss: f64,
}

impl FockState {
    pub fn vacuum(n_max: usize) -> Self {
        Self::number(n_max, 0)
    }

    pub fn number(n_max: usize, n: usize) -> Self {
        let mut amp = vec![Complex64::new(0.0, 0.0); n_max + 1];
        amp[n] = Complex64::new(1.0, 0.0);
        Self { amp, truncation_loss: 0.0 }
    }

    pub fn from_amplitudes(amp: Vec<Complex64>) -> Self {
        Self { amp, truncation_loss: 0.0 }
    }

    pub fn n_max(&self) -> usize {
        self.amp.len() - 1
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amp.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &FockState) -> Complex64 {
        inner(&self.amp, &other.amp)
    }

    pub fn normalize(&mut self) {
        let s = self.norm_sqr().sqrt();
        self.amp.iter_mut().for_each(|z| *z /= s);
    }

    pub fn apply(&self, op: Ladder) -> FockState {
        let mut out = vec![Complex64::new(0.0, 0.0); self.amp.len()];
        let loss = apply_into(&self.amp, op, &mut out);
        FockState { amp: out, truncation_loss: loss }
    }

    /// `⟨ψ|A|ψ⟩ / ⟨ψ|ψ⟩`.
    pub fn expectation(&self, op: Ladder) -> Complex64 {
        inner(&self.amp, &self.apply(op).amp) / self.norm_sqr()
    }

    pub fn mean_occupation(&self) -> f64 {
        occupation(&self.amp)
    }

    /// Interleaved `(Re, Im)` embedding.
    pub fn to_real(&self) -> Vector {
        let mut x = Vector::zeros(2 * self.amp.len());
        for (n, z) in self.amp.iter().enumerate() {
            x[2 * n] = z.re;
            x[2 * n + 1] = z.im;
        }
        x
    }

    pub fn from_real(x: ArrayView1<'_, f64>) -> Self {
        Self::from_amplitudes(to_complex(x))
    }
}

fn inner(u: &[Complex64], v: &[Complex64]) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

fn occupation(amp: &[Complex64]) -> f64 {
    let norm: f64 = amp.iter().map(|z| z.norm_sqr()).sum();
    let n: f64 = amp.iter().enumerate().map(|(k, z)| k as f64 * z.norm_sqr()).sum();
    n / norm
}

fn to_complex(x: ArrayView1<'_, f64>) -> Vec<Complex64> {
    x.as_slice()
        .map(|s| s.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
        .unwrap_or_else(|| (0..x.len() / 2).map(|n| Complex64::new(x[2 * n], x[2 * n + 1])).collect())
}

fn embed(v: &[Complex64], x: &mut ndarray::ArrayViewMut1<'_, f64>) {
    for (n, z) in v.iter().enumerate() {
        x[2 * n] = z.re;
        x[2 * n + 1] = z.im;
    }
}

fn apply_into(amp: &[Complex64], op: Ladder, out: &mut [Complex64]) -> f64 {
    let top = amp.len() - 1;
    out.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
    match op {
        Ladder::Lower => {
            for n in 1..=top {
                out[n - 1] = amp[n] * (n as f64).sqrt();
            }
            0.0
        }
        Ladder::Lower2 => {
            for n in 2..=top {
                out[n - 2] = amp[n] * ((n * (n - 1)) as f64).sqrt();
            }
            0.0
        }
        Ladder::Number => {
            for n in 0..=top {
                out[n] = amp[n] * n as f64;
            }
            0.0
        }
        Ladder::Raise => {
            for n in 0..top {
                out[n + 1] = amp[n] * ((n + 1) as f64).sqrt();
            }
            (top + 1) as f64 * amp[top].norm_sqr()
        }
        Ladder::Raise2 => {
            for n in 0..top.saturating_sub(1) {
                out[n + 2] = amp[n] * (((n + 1) * (n + 2)) as f64).sqrt();
            }
            (top.saturating_sub(1)..=top)
                .map(|n| ((n + 1) * (n + 2)) as f64 * amp[n].norm_sqr())
                .sum()
        }
    }
}

fn apply(amp: &[Complex64], op: Ladder) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); amp.len()];
    apply_into(amp, op, &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseKind {
    /// `dξ = (dW¹ + i dW²)/√2`, two real Wiener processes.
    #[default]
    Complex,
    /// One real Wiener process driving the single channel.
    Real,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Complex => "complex",
            NoiseKind::Real => "real",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = SdeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complex" => Ok(NoiseKind::Complex),
            "real" => Ok(NoiseKind::Real),
            _ => Err(SdeError::Argument(format!("unknown noise kind '{s}' (expected complex or real)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsorberModel {
    pub drive: f64,
    pub noise_kind: NoiseKind,
    pub n_max: usize,
}

impl Default for AbsorberModel {
    fn default() -> Self {
        Self { drive: 0.1, noise_kind: NoiseKind::Complex, n_max: 30 }
    }
}

impl AbsorberModel {
    pub fn validate(&self) -> Result<()> {
        if self.n_max < 4 {
            return Err(SdeError::Argument(format!("Fock truncation must be at least 4, got {}", self.n_max)));
        }
        if !self.drive.is_finite() {
            return Err(SdeError::Argument("drive must be finite".into()));
        }
        Ok(())
    }

    /// `⟨ψ|a²|ψ⟩/⟨ψ|ψ⟩` together with `a²ψ`.
    fn lowered2(&self, psi: &[Complex64]) -> (Vec<Complex64>, Complex64, f64) {
        let a2 = apply(psi, Ladder::Lower2);
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        (a2.clone(), inner(psi, &a2) / norm, norm)
    }

    pub fn drift_complex(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let (a2, e2, _) = self.lowered2(psi);
        let up = apply(psi, Ladder::Raise);
        let down = apply(psi, Ladder::Lower);
        let a2dag_a2 = apply(&a2, Ladder::Raise2);
        let e2c = e2.conj();
        let ee = e2.norm_sqr();
        (0..psi.len())
            .map(|n| self.drive * (up[n] - down[n]) + 2.0 * e2c * a2[n] - a2dag_a2[n] - ee * psi[n])
            .collect()
    }

    /// The channel field `g = √2(a² − ⟨a²⟩)ψ`.
    pub fn channel(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let (a2, e2, _) = self.lowered2(psi);
        let s = std::f64::consts::SQRT_2;
        a2.iter().zip(psi).map(|(a, p)| s * (a - e2 * p)).collect()
    }

    /// Directional derivative of [`Self::channel`] along `v`, treating `ψ` as a
    /// real vector (the map is not holomorphic).
    fn channel_derivative(&self, psi: &[Complex64], v: &[Complex64]) -> Vec<Complex64> {
        let (a2, e2, norm) = self.lowered2(psi);
        let a2v = apply(v, Ladder::Lower2);
        let de = (inner(v, &a2) + inner(psi, &a2v) - e2 * (inner(v, psi) + inner(psi, v))) / norm;
        let s = std::f64::consts::SQRT_2;
        (0..psi.len()).map(|n| s * (a2v[n] - e2 * v[n] - de * psi[n])).collect()
    }
}

impl SdeSystem for AbsorberModel {
    fn dim(&self) -> usize {
        2 * (self.n_max + 1)
    }

    fn noise_dim(&self) -> usize {
        match self.noise_kind {
            NoiseKind::Complex => 2,
            NoiseKind::Real => 1,
        }
    }

    fn drift(&self, x: ArrayView1<'_, f64>, _t: f64) -> Vector {
        let d = self.drift_complex(&to_complex(x));
        let mut out = Vector::zeros(x.len());
        embed(&d, &mut out.view_mut());
        out
    }

    fn diffusion(&self, x: ArrayView1<'_, f64>, _t: f64) -> Matrix {
        let g = self.channel(&to_complex(x));
        let mut b = Matrix::zeros((x.len(), self.noise_dim()));
        match self.noise_kind {
            NoiseKind::Real => embed(&g, &mut b.column_mut(0)),
            NoiseKind::Complex => {
                let r = std::f64::consts::FRAC_1_SQRT_2;
                let g1: Vec<Complex64> = g.iter().map(|z| z * r).collect();
                let g2: Vec<Complex64> = g1.iter().map(|z| z * I).collect();
                embed(&g1, &mut b.column_mut(0));
                embed(&g2, &mut b.column_mut(1));
            }
        }
        b
    }

    fn diffusion_contraction(&self, x: ArrayView1<'_, f64>, _t: f64) -> Option<Vector> {
        let psi = to_complex(x);
        let g = self.channel(&psi);
        let c: Vec<Complex64> = match self.noise_kind {
            NoiseKind::Real => self.channel_derivative(&psi, &g),
            // ½(Dg[g] + i·Dg[ig]) collapses to −⟨g|g⟩/⟨ψ|ψ⟩·ψ.
            NoiseKind::Complex => {
                let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
                let gg: f64 = g.iter().map(|z| z.norm_sqr()).sum();
                psi.iter().map(|p| -gg / norm * p).collect()
            }
        };
        let mut out = Vector::zeros(x.len());
        embed(&c, &mut out.view_mut());
        Some(out)
    }

    fn noise_structure(&self) -> NoiseStructure {
        NoiseStructure::General
    }
}

fn renormalize(x: &mut Vector) {
    let s = x.dot(x).sqrt();
    if s > 0.0 && s.is_finite() {
        x.mapv_inplace(|v| v / s);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stepping {
    Adaptive(StepController),
    Fixed { dt: f64, scheme: SchemeId },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub t_end: f64,
    /// Number of output intervals on `[0, t_end]`.
    pub intervals: usize,
    pub stepping: Stepping,
    pub trajectories: usize,
    pub seed: u64,
    /// Trajectory `j` draws from stream `first_stream + j`.
    pub first_stream: u64,
}

impl EnsembleConfig {
    pub fn new(t_end: f64, trajectories: usize, seed: u64) -> Self {
        let mut ctrl = StepController::new(1e-6, 1e-6);
        ctrl.dt_initial = Some(1e-3);
        ctrl.dt_max = 0.05;
        Self { t_end, intervals: 100, stepping: Stepping::Adaptive(ctrl), trajectories, seed, first_stream: 0 }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.intervals).map(|i| self.t_end * i as f64 / self.intervals as f64).collect()
    }
}

/// Running occupation statistics on a fixed output grid. Sums are exact, so
/// merging ensembles in any order gives bit-identical results.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    sum: Vec<ExactSum>,
    sum_sq: Vec<ExactSum>,
    pub count: usize,
    pub max_truncation_loss: f64,
    /// Largest `|⟨ψ|ψ⟩ − 1|` seen after renormalization.
    pub max_norm_deviation: f64,
    /// Stream ids and messages of trajectories that failed numerically.
    pub failures: Vec<(u64, String)>,
}

impl EnsembleStats {
    pub fn empty(times: Vec<f64>) -> Self {
        let k = times.len();
        Self {
            times,
            sum: vec![ExactSum::default(); k],
            sum_sq: vec![ExactSum::default(); k],
            count: 0,
            max_truncation_loss: 0.0,
            max_norm_deviation: 0.0,
            failures: Vec::new(),
        }
    }

    pub fn push(&mut self, occupation: &[f64]) {
        assert_eq!(occupation.len(), self.times.len(), "sample count must match the output grid");
        for (k, &n) in occupation.iter().enumerate() {
            self.sum[k].add(n);
            self.sum_sq[k].add(n * n);
        }
        self.count += 1;
    }

    pub fn merge(mut self, other: EnsembleStats) -> Self {
        assert_eq!(self.times, other.times, "ensembles must share an output grid");
        for k in 0..self.times.len() {
            self.sum[k].merge(&other.sum[k]);
            self.sum_sq[k].merge(&other.sum_sq[k]);
        }
        self.count += other.count;
        self.max_truncation_loss = self.max_truncation_loss.max(other.max_truncation_loss);
        self.max_norm_deviation = self.max_norm_deviation.max(other.max_norm_deviation);
        self.failures.extend(other.failures);
        self.failures.sort_by_key(|f| f.0);
        self
    }

    pub fn mean(&self) -> Vec<f64> {
        let m = self.count as f64;
        self.sum.iter().map(|s| s.value() / m).collect()
    }

    /// Sample variance (`M − 1` denominator); zero for a single trajectory.
    pub fn variance(&self) -> Vec<f64> {
        let m = self.count as f64;
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, q)| {
                if self.count < 2 {
                    return 0.0;
                }
                let mut dev = q.clone();
                let s = s.value();
                dev.add(-s * s / m);
                (dev.value() / (m - 1.0)).max(0.0)
            })
            .collect()
    }

    pub fn stderr(&self) -> Vec<f64> {
        let m = self.count as f64;
        self.variance().into_iter().map(|v| (v / m).sqrt()).collect()
    }
}

struct Sampled {
    occupation: Vec<f64>,
    truncation_loss: f64,
    norm_deviation: f64,
}

/// Nearest accepted step to each output time (the earlier one on a tie).
fn sample(times: &[f64], step_times: &[f64], states: &[Vector], n_max: usize) -> Sampled {
    let mut occupation = Vec::with_capacity(times.len());
    let mut j = 0;
    for &t in times {
        while j + 1 < step_times.len() && (step_times[j + 1] - t).abs() < (step_times[j] - t).abs() {
            j += 1;
        }
        occupation.push(occupation_of(states[j].view()));
    }
    let mut truncation_loss: f64 = 0.0;
    let mut norm_deviation: f64 = 0.0;
    for x in states {
        let norm = x.dot(x);
        let top = (x[2 * n_max].powi(2) + x[2 * n_max + 1].powi(2)) / norm;
        truncation_loss = truncation_loss.max((n_max + 1) as f64 * top);
        norm_deviation = norm_deviation.max((norm - 1.0).abs());
    }
    Sampled { occupation, truncation_loss, norm_deviation }
}

fn occupation_of(x: ArrayView1<'_, f64>) -> f64 {
    let pairs = x.len() / 2;
    let sq = x.mapv(|v| v * v);
    let weights = sq.into_shape_with_order((pairs, 2)).expect("interleaved pairs").sum_axis(Axis(1));
    let norm = weights.sum();
    weights.iter().enumerate().map(|(n, w)| n as f64 * w).sum::<f64>() / norm
}

fn fixed_trajectory(model: &AbsorberModel, x0: &Vector, t_end: f64, dt: f64, scheme: SchemeId, rng: &mut RngStream) -> Result<(Vec<f64>, Vec<Vector>)> {
    let steps = (t_end / dt).round() as usize;
    if steps == 0 || ((steps as f64 * dt) - t_end).abs() > 1e-9 * t_end {
        return Err(SdeError::Argument(format!("fixed step {dt} does not divide the end time {t_end}")));
    }
    let m = model.noise_dim();
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(x0.clone());
    let mut x = x0.clone();
    for k in 0..steps {
        let t = k as f64 * dt;
        let inc = sample_increment(rng, dt, m)?;
        let mut next = step(scheme, model, x.view(), t, &inc)?.state;
        renormalize(&mut next);
        x = next;
        times.push(if k + 1 == steps { t_end } else { (k + 1) as f64 * dt });
        states.push(x.clone());
    }
    Ok((times, states))
}

/// One trajectory from the vacuum; returns the step times and renormalized
/// states.
pub fn run_trajectory(model: &AbsorberModel, cfg: &EnsembleConfig, stream: u64) -> Result<(Vec<f64>, Vec<Vector>)> {
    let x0 = FockState::vacuum(model.n_max).to_real();
    let mut rng = RngStream::new(cfg.seed, stream);
    match &cfg.stepping {
        Stepping::Adaptive(ctrl) => {
            let project = |x: &mut Vector| renormalize(x);
            let opts = AdaptiveOptions { projection: Some(&project), record_path: false, ..Default::default() };
            let traj = integrate_adaptive_with(model, &x0, 0.0, cfg.t_end, ctrl, &mut rng, &opts)?;
            Ok((traj.t, traj.x))
        }
        Stepping::Fixed { dt, scheme } => fixed_trajectory(model, &x0, cfg.t_end, *dt, *scheme, &mut rng),
    }
}

/// Integrates `cfg.trajectories` independent trajectories in parallel and
/// pools their occupation numbers. Numerically failed trajectories are left
/// out of the statistics and listed in [`EnsembleStats::failures`].
pub fn run_ensemble(model: &AbsorberModel, cfg: &EnsembleConfig) -> Result<EnsembleStats> {
    model.validate()?;
    if cfg.trajectories == 0 {
        return Err(SdeError::Argument("need at least one trajectory".into()));
    }
    if !(cfg.t_end > 0.0) || cfg.intervals == 0 {
        return Err(SdeError::Argument("end time and output interval count must be positive".into()));
    }
    let times = cfg.times();
    let streams = cfg.first_stream..cfg.first_stream + cfg.trajectories as u64;
    streams
        .into_par_iter()
        .map(|stream| -> Result<EnsembleStats> {
            let mut stats = EnsembleStats::empty(times.clone());
            match run_trajectory(model, cfg, stream) {
                Ok((step_times, states)) => {
                    let s = sample(&times, &step_times, &states, model.n_max);
                    stats.push(&s.occupation);
                    stats.max_truncation_loss = s.truncation_loss;
                    stats.max_norm_deviation = s.norm_deviation;
                }
                Err(e) if e.is_numerical() => stats.failures.push((stream, e.to_string())),
                Err(e) => return Err(e),
            }
            Ok(stats)
        })
        .try_reduce(|| EnsembleStats::empty(times.clone()), |a, b| Ok(a.merge(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::fd_contraction;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(u: &[Complex64], v: &[Complex64], tol: f64) -> bool {
        u.iter().zip(v).all(|(a, b)| (a - b).norm() < tol)
    }

    #[test]
    fn ladder_algebra() {
        let vac = FockState::vacuum(6);
        assert!(vac.apply(Ladder::Lower).amp.iter().all(|z| z.norm() == 0.0));
        assert_eq!(vac.apply(Ladder::Raise).amp, FockState::number(6, 1).amp);
        let three = FockState::number(6, 3);
        let n3 = three.apply(Ladder::Lower).apply(Ladder::Raise);
        assert!(close(&n3.amp, &three.apply(Ladder::Number).amp, 1e-14));
        assert!((n3.amp[3].re - 3.0).abs() < 1e-14);
        let top = FockState::number(6, 6).apply(Ladder::Raise);
        assert!(top.amp.iter().all(|z| z.norm() == 0.0));
        assert_eq!(top.truncation_loss, 7.0);
    }

    #[test]
    fn drift_examples() {
        let model = AbsorberModel { n_max: 6, ..Default::default() };
        let d0 = model.drift_complex(&FockState::vacuum(6).amp);
        let mut want = vec![c(0.0, 0.0); 7];
        want[1] = c(0.1, 0.0);
        assert!(close(&d0, &want, 1e-15));

        let d1 = model.drift_complex(&FockState::number(6, 1).amp);
        let mut want = vec![c(0.0, 0.0); 7];
        want[0] = c(-0.1, 0.0);
        want[2] = c(0.1 * 2f64.sqrt(), 0.0);
        assert!(close(&d1, &want, 1e-15));

        let undriven = AbsorberModel { drive: 0.0, ..model };
        assert!(undriven.drift_complex(&FockState::vacuum(6).amp).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn channel_examples() {
        let model = AbsorberModel { n_max: 4, ..Default::default() };
        assert!(model.channel(&FockState::vacuum(4).amp).iter().all(|z| z.norm() == 0.0));
        let g2 = model.channel(&FockState::number(4, 2).amp);
        assert!((g2[0] - c(2.0, 0.0)).norm() < 1e-15);

        // Dense matrix arithmetic for (|0⟩ + |2⟩)/√2.
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let psi = vec![c(r, 0.0), c(0.0, 0.0), c(r, 0.0), c(0.0, 0.0), c(0.0, 0.0)];
        let mut a2 = [[0.0; 5]; 5];
        for n in 2..5 {
            a2[n - 2][n] = ((n * (n - 1)) as f64).sqrt();
        }
        let a2psi: Vec<Complex64> = (0..5).map(|i| (0..5).map(|j| psi[j] * a2[i][j]).sum()).collect();
        let e2: Complex64 = (0..5).map(|i| psi[i].conj() * a2psi[i]).sum();
        assert!((e2.re - 2f64.sqrt() / 2.0).abs() < 1e-15);
        let want: Vec<Complex64> = (0..5).map(|i| 2f64.sqrt() * (a2psi[i] - e2 * psi[i])).collect();
        assert!(close(&model.channel(&psi), &want, 1e-14));
    }

    fn generic_state(n_max: usize) -> FockState {
        let amp: Vec<Complex64> = (0..=n_max)
            .map(|n| c((0.7f64).powi(n as i32) * (1.0 + 0.3 * n as f64).cos(), 0.4 * (0.6f64).powi(n as i32) * (n as f64).sin()))
            .collect();
        let mut s = FockState::from_amplitudes(amp);
        s.normalize();
        s
    }

    #[test]
    fn analytic_contraction_matches_finite_differences() {
        for kind in [NoiseKind::Complex, NoiseKind::Real] {
            let model = AbsorberModel { n_max: 8, noise_kind: kind, ..Default::default() };
            let x = generic_state(8).to_real();
            let analytic = model.diffusion_contraction(x.view(), 0.0).unwrap();
            let fd = fd_contraction(&model, x.view(), 0.0).unwrap();
            let err = (&analytic - &fd).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err < 1e-7, "{kind}: {err}");
        }
    }

    #[test]
    fn complex_contraction_is_radial() {
        let model = AbsorberModel { n_max: 8, ..Default::default() };
        let psi = generic_state(8);
        let g = model.channel(&psi.amp);
        let gg: f64 = g.iter().map(|z| z.norm_sqr()).sum();
        let cvec = to_complex(model.diffusion_contraction(psi.to_real().view(), 0.0).unwrap().view());
        let want: Vec<Complex64> = psi.amp.iter().map(|p| -gg * p).collect();
        assert!(close(&cvec, &want, 1e-13));
        let ig: Vec<Complex64> = g.iter().map(|z| z * I).collect();
        let d1 = model.channel_derivative(&psi.amp, &g);
        let d2 = model.channel_derivative(&psi.amp, &ig);
        let general: Vec<Complex64> = d1.iter().zip(&d2).map(|(a, b)| 0.5 * (a + I * b)).collect();
        assert!(close(&general, &want, 1e-13));
    }

    #[test]
    fn embedding_round_trip() {
        let psi = generic_state(5);
        assert_eq!(FockState::from_real(psi.to_real().view()), psi);
        assert!((occupation_of(psi.to_real().view()) - psi.mean_occupation()).abs() < 1e-15);
        let n = psi.expectation(Ladder::Number);
        assert!(n.im.abs() < 1e-15 && n.re >= 0.0);
        assert!((n.re - psi.mean_occupation()).abs() < 1e-14);
    }

    #[test]
    fn one_deterministic_step_from_vacuum() {
        let model = AbsorberModel::default();
        let x0 = FockState::vacuum(model.n_max).to_real();
        for h in [1e-2, 1e-3] {
            let inc = crate::system::NoiseIncrement::zero(h, 2);
            let x = step(SchemeId::Srk2, &model, x0.view(), 0.0, &inc).unwrap().state;
            assert!((x[2] - 0.1 * h).abs() < 10.0 * h * h);
        }
    }

    #[test]
    fn undriven_vacuum_is_stationary() {
        let model = AbsorberModel { drive: 0.0, ..Default::default() };
        let stats = run_ensemble(&model, &EnsembleConfig::new(1.0, 1, 42)).unwrap();
        assert!(stats.mean().iter().all(|&n| n == 0.0));
        assert_eq!(stats.count, 1);
    }

    #[test]
    fn renormalized_norm_and_determinism() {
        let model = AbsorberModel { n_max: 12, ..Default::default() };
        let mut cfg = EnsembleConfig::new(1.0, 8, 7);
        cfg.intervals = 10;
        let a = run_ensemble(&model, &cfg).unwrap();
        let b = run_ensemble(&model, &cfg).unwrap();
        assert_eq!(a.mean(), b.mean());
        assert!(a.max_norm_deviation < 1e-12);
        assert!(a.failures.is_empty());
        assert!(a.mean().iter().all(|&n| n >= 0.0));
    }

    #[test]
    fn merge_matches_pooled_run() {
        let model = AbsorberModel { n_max: 10, ..Default::default() };
        let mut cfg = EnsembleConfig::new(0.5, 6, 3);
        cfg.intervals = 5;
        let pooled = run_ensemble(&model, &cfg).unwrap();
        let mut first = cfg.clone();
        first.trajectories = 2;
        let mut rest = cfg.clone();
        rest.trajectories = 4;
        rest.first_stream = 2;
        let merged = run_ensemble(&model, &rest).unwrap().merge(run_ensemble(&model, &first).unwrap());
        assert_eq!(merged.mean(), pooled.mean());
        assert_eq!(merged.variance(), pooled.variance());
        assert_eq!(merged.count, 6);
    }

    #[test]
    fn sampling_picks_nearest_step() {
        let states: Vec<Vector> = (0..3).map(|n| FockState::number(4, n).to_real()).collect();
        let s = sample(&[0.0, 0.4, 0.6, 1.0], &[0.0, 0.5, 1.0], &states, 4);
        assert_eq!(s.occupation, vec![0.0, 1.0, 1.0, 2.0]);
    }
}
