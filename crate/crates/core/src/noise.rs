//! Seeded Gaussian streams, Wiener increment grids and the bridge split used
//! to refine a rejected step without changing the realized Wiener path.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SdeError};
use crate::system::{NoiseIncrement, Vector};

/// A reproducible Gaussian source identified by `(seed, stream_id)`.
///
/// Streams share the seed and differ in the ChaCha stream word, so trajectory
/// `i` of an ensemble owns stream `i` and never sees another trajectory's draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn normal(&mut self, variance: f64) -> f64 {
        variance.sqrt() * self.standard_normal()
    }
}

/// Parses a seed given either in decimal or as `0x`-prefixed hex.
pub fn parse_seed(text: &str) -> Result<u64> {
    let text = text.trim();
    let parsed = match text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => text.parse::<u64>(),
    };
    parsed.map_err(|e| SdeError::Argument(format!("invalid seed {text:?}: {e}")))
}

/// Draws `m` independent `N(0, dt)` Wiener increments.
pub fn sample_increment(rng: &mut RngStream, dt: f64, m: usize) -> Result<NoiseIncrement> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SdeError::Argument(format!("time step must be positive, got {dt}")));
    }
    let sd = dt.sqrt();
    let dw = (0..m).map(|_| sd * rng.standard_normal()).collect();
    Ok(NoiseIncrement { dt, dw })
}

/// Variance of the bridge offset `y` in a split `(dW/2 − y, dW/2 + y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BridgeRule {
    /// `y ~ N(0, dt/2)`, as the rejected-step rule is usually stated.
    #[default]
    HalfStep,
    /// `y ~ N(0, dt/4)`, the conditional law of a Brownian bridge midpoint.
    Conditional,
}

impl BridgeRule {
    pub fn offset_variance(self, dt: f64) -> f64 {
        match self {
            BridgeRule::HalfStep => 0.5 * dt,
            BridgeRule::Conditional => 0.25 * dt,
        }
    }
}

impl std::str::FromStr for BridgeRule {
    type Err = SdeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "half-step" | "paper" => Ok(BridgeRule::HalfStep),
            "conditional" | "exact" => Ok(BridgeRule::Conditional),
            other => Err(SdeError::Argument(format!(
                "unknown bridge rule {other:?} (expected half-step or conditional)"
            ))),
        }
    }
}

fn pow2(e: i32) -> f64 {
    f64::from_bits(((e + 1023) as u64) << 52)
}

/// Largest power of two dividing `w` (infinite for zero).
fn lowest_bit(w: f64) -> f64 {
    if w == 0.0 || !w.is_finite() {
        return f64::INFINITY;
    }
    let bits = w.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let mut mant = bits & ((1u64 << 52) - 1);
    if exp == 0 {
        return f64::MIN_POSITIVE * f64::EPSILON;
    }
    mant |= 1u64 << 52;
    pow2(exp - 1075 + mant.trailing_zeros() as i32)
}

/// Dyadic resolution at which increments of a step of length `dt` are held.
///
/// Values that are multiples of this quantum and stay below `2^53` of it add
/// and subtract exactly, so every split tree built from a quantized root sums
/// back to the root bit for bit.
pub fn path_quantum(dt: f64) -> f64 {
    let scale = dt.sqrt().log2().floor() as i32;
    pow2((scale - 40).max(-1000))
}

/// Rounds each Wiener increment onto the [`path_quantum`] grid of its step.
pub fn quantize(inc: &mut NoiseIncrement) {
    if inc.dt <= 0.0 {
        return;
    }
    let q = path_quantum(inc.dt);
    inc.dw.mapv_inplace(|w| (w / q).round() * q);
}

const MAX_SPLIT_TRIES: usize = 64;

/// `a + b == w` in exact arithmetic, not just after rounding.
fn sums_exactly(a: f64, b: f64, w: f64) -> bool {
    let s = a + b;
    let bv = s - a;
    let err = (a - (s - bv)) + (b - bv);
    s == w && err == 0.0
}

/// Splits a rejected `(dt, dW)` into `(dt/2, dW/2 − y)` and `(dt/2, dW/2 + y)`
/// with `y ~ N(0, dt/2)` drawn independently per Wiener component.
pub fn bridge_split(inc: &NoiseIncrement, rng: &mut RngStream) -> (NoiseIncrement, NoiseIncrement) {
    bridge_split_with(inc, rng, BridgeRule::HalfStep)
}

/// [`bridge_split`] with a selectable offset variance.
///
/// The halves always add back to the original increment exactly, component
/// by component. The first half is rounded onto a dyadic grid that divides
/// the original; for quantized paths this never needs more than one draw.
/// An unquantized increment cannot always be split exactly once |y| ≫ |dW|;
/// after a bounded number of redraws it falls back to the midpoint (y = 0).
pub fn bridge_split_with(
    inc: &NoiseIncrement,
    rng: &mut RngStream,
    rule: BridgeRule,
) -> (NoiseIncrement, NoiseIncrement) {
    let half_dt = 0.5 * inc.dt;
    let sd = rule.offset_variance(inc.dt).sqrt();
    let q_nominal = if half_dt > 0.0 { path_quantum(half_dt) } else { f64::INFINITY };
    let m = inc.noise_dim();
    let mut first = Vector::zeros(m);
    let mut second = Vector::zeros(m);
    for k in 0..m {
        let w = inc.dw[k];
        let q = q_nominal.min(lowest_bit(w));
        let mut split = None;
        for _ in 0..MAX_SPLIT_TRIES {
            let y = sd * rng.standard_normal();
            let mut a = 0.5 * w - y;
            if q.is_finite() {
                a = (a / q).round() * q;
            }
            let b = w - a;
            if sums_exactly(a, b, w) {
                split = Some((a, b));
                break;
            }
        }
        let (a, b) = split.unwrap_or((0.5 * w, w - 0.5 * w));
        first[k] = a;
        second[k] = b;
    }
    (
        NoiseIncrement { dt: half_dt, dw: first },
        NoiseIncrement { dt: half_dt, dw: second },
    )
}

/// A realized Wiener path on a uniform grid: row `l` holds the increments over
/// `[t0 + l·dt, t0 + (l+1)·dt]`. The path starts at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerGrid {
    pub t0: f64,
    pub dt: f64,
    pub increments: Array2<f64>,
}

impl WienerGrid {
    pub fn new(t0: f64, dt: f64, increments: Array2<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SdeError::Argument(format!("grid step must be positive, got {dt}")));
        }
        if increments.iter().any(|w| !w.is_finite()) {
            return Err(SdeError::Argument("grid increments must be finite".into()));
        }
        Ok(Self { t0, dt, increments })
    }

    /// `steps` consecutive draws from `rng`, in the same order
    /// [`sample_increment`] would produce them one step at a time.
    pub fn generate(rng: &mut RngStream, t0: f64, dt: f64, steps: usize, m: usize) -> Result<Self> {
        let mut increments = Array2::zeros((steps, m));
        for l in 0..steps {
            let inc = sample_increment(rng, dt, m)?;
            increments.row_mut(l).assign(&inc.dw);
        }
        Self::new(t0, dt, increments)
    }

    pub fn zeros(t0: f64, dt: f64, steps: usize, m: usize) -> Result<Self> {
        Self::new(t0, dt, Array2::zeros((steps, m)))
    }

    pub fn len(&self) -> usize {
        self.increments.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn noise_dim(&self) -> usize {
        self.increments.ncols()
    }

    pub fn time(&self, l: usize) -> f64 {
        self.t0 + l as f64 * self.dt
    }

    pub fn increment(&self, l: usize) -> NoiseIncrement {
        NoiseIncrement { dt: self.dt, dw: self.increments.row(l).to_owned() }
    }

    /// `W` at node `l`, summed left to right.
    pub fn w_at(&self, l: usize) -> Vector {
        let mut w = Vector::zeros(self.noise_dim());
        for row in self.increments.slice(s![..l, ..]).outer_iter() {
            w += &row;
        }
        w
    }

    pub fn coarsen(&self, factor: usize) -> Result<WienerGrid> {
        coarsen(self, factor)
    }
}

/// Block-sums `factor` consecutive fine increments into one coarse increment.
pub fn coarsen(grid: &WienerGrid, factor: usize) -> Result<WienerGrid> {
    if factor == 0 || !grid.len().is_multiple_of(factor) {
        return Err(SdeError::Argument(format!(
            "coarsening factor {factor} does not divide grid length {}",
            grid.len()
        )));
    }
    if factor == 1 {
        return Ok(grid.clone());
    }
    let coarse_len = grid.len() / factor;
    let mut increments = Array2::zeros((coarse_len, grid.noise_dim()));
    for (l, mut row) in increments.outer_iter_mut().enumerate() {
        for fine in grid.increments.slice(s![l * factor..(l + 1) * factor, ..]).outer_iter() {
            row += &fine;
        }
    }
    WienerGrid::new(grid.t0, grid.dt * factor as f64, increments)
}
