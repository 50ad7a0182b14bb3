//! The Itô SDE abstraction `dX^j = a^j(X,t) dt + Σ_k b^j_k(X,t) dW^k` and the
//! modified drift / increment function every Runge-Kutta scheme consumes.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Result, SdeError};

pub type Vector = Array1<f64>;
pub type Matrix = Array2<f64>;

/// Structure of the diffusion fields, as asserted by whoever builds the system.
///
/// Only the derivative-free Milstein scheme looks at this; it needs either
/// diagonal or commutative noise because it does not simulate Lévy areas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseStructure {
    /// Column `k` only depends on (and only drives) component `k`; includes the
    /// scalar case `m = 1`.
    Diagonal,
    /// The diffusion fields commute: `L^k b_l = L^l b_k` for all pairs.
    Commutative,
    #[default]
    General,
}

/// An Itô SDE with `n` state components and `m` independent Wiener processes.
///
/// Implementations must not carry mutable shared state: one instance is used
/// concurrently by independent trajectory workers.
pub trait SdeSystem: Sync {
    fn dim(&self) -> usize;

    fn noise_dim(&self) -> usize;

    /// The drift `a(x, t)`.
    fn drift(&self, x: ArrayView1<'_, f64>, t: f64) -> Vector;

    /// The `n × m` diffusion matrix; column `k` is the field `b_k(x, t)`.
    fn diffusion(&self, x: ArrayView1<'_, f64>, t: f64) -> Matrix;

    /// Analytic `C^j = Σ_k Σ_i b^i_k ∂b^j_k/∂x^i`, if known. When this returns
    /// `None` the contraction is computed by central differences.
    fn diffusion_contraction(&self, _x: ArrayView1<'_, f64>, _t: f64) -> Option<Vector> {
        None
    }

    fn noise_structure(&self) -> NoiseStructure {
        NoiseStructure::General
    }
}

impl<S: SdeSystem + ?Sized> SdeSystem for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn noise_dim(&self) -> usize {
        (**self).noise_dim()
    }
    fn drift(&self, x: ArrayView1<'_, f64>, t: f64) -> Vector {
        (**self).drift(x, t)
    }
    fn diffusion(&self, x: ArrayView1<'_, f64>, t: f64) -> Matrix {
        (**self).diffusion(x, t)
    }
    fn diffusion_contraction(&self, x: ArrayView1<'_, f64>, t: f64) -> Option<Vector> {
        (**self).diffusion_contraction(x, t)
    }
    fn noise_structure(&self) -> NoiseStructure {
        (**self).noise_structure()
    }
}

type DriftFn = dyn Fn(ArrayView1<'_, f64>, f64) -> Vector + Send + Sync;
type DiffusionFn = dyn Fn(ArrayView1<'_, f64>, f64) -> Matrix + Send + Sync;

/// An [`SdeSystem`] assembled from closures.
pub struct FnSystem {
    n: usize,
    m: usize,
    drift: Box<DriftFn>,
    diffusion: Box<DiffusionFn>,
    contraction: Option<Box<DriftFn>>,
    structure: NoiseStructure,
}

impl FnSystem {
    pub fn new<A, B>(n: usize, m: usize, drift: A, diffusion: B) -> Self
    where
        A: Fn(ArrayView1<'_, f64>, f64) -> Vector + Send + Sync + 'static,
        B: Fn(ArrayView1<'_, f64>, f64) -> Matrix + Send + Sync + 'static,
    {
        Self {
            n,
            m,
            drift: Box::new(drift),
            diffusion: Box::new(diffusion),
            contraction: None,
            structure: NoiseStructure::General,
        }
    }

    /// A deterministic system `dX = a(X,t) dt` with no Wiener processes.
    pub fn ode<A>(n: usize, drift: A) -> Self
    where
        A: Fn(ArrayView1<'_, f64>, f64) -> Vector + Send + Sync + 'static,
    {
        Self::new(n, 0, drift, move |_, _| Matrix::zeros((n, 0))).with_structure(NoiseStructure::Diagonal)
    }

    pub fn with_contraction<C>(mut self, contraction: C) -> Self
    where
        C: Fn(ArrayView1<'_, f64>, f64) -> Vector + Send + Sync + 'static,
    {
        self.contraction = Some(Box::new(contraction));
        self
    }

    pub fn with_structure(mut self, structure: NoiseStructure) -> Self {
        self.structure = structure;
        self
    }
}

impl SdeSystem for FnSystem {
    fn dim(&self) -> usize {
        self.n
    }
    fn noise_dim(&self) -> usize {
        self.m
    }
    fn drift(&self, x: ArrayView1<'_, f64>, t: f64) -> Vector {
        (self.drift)(x, t)
    }
    fn diffusion(&self, x: ArrayView1<'_, f64>, t: f64) -> Matrix {
        (self.diffusion)(x, t)
    }
    fn diffusion_contraction(&self, x: ArrayView1<'_, f64>, t: f64) -> Option<Vector> {
        self.contraction.as_ref().map(|c| c(x, t))
    }
    fn noise_structure(&self) -> NoiseStructure {
        self.structure
    }
}

/// A time step paired with the Wiener increments realized over it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrement {
    pub dt: f64,
    pub dw: Vector,
}

impl NoiseIncrement {
    /// Zero-length steps are accepted so that schemes can be checked on the
    /// identity case; samplers only ever produce `dt > 0`.
    pub fn new(dt: f64, dw: Vector) -> Result<Self> {
        if !(dt.is_finite() && dt >= 0.0) {
            return Err(SdeError::Argument(format!("time step must be finite and non-negative, got {dt}")));
        }
        if let Some(k) = dw.iter().position(|w| !w.is_finite()) {
            return Err(SdeError::Argument(format!("Wiener increment {k} is not finite")));
        }
        Ok(Self { dt, dw })
    }

    pub fn zero(dt: f64, m: usize) -> Self {
        Self { dt, dw: Vector::zeros(m) }
    }

    pub fn noise_dim(&self) -> usize {
        self.dw.len()
    }
}

/// Output of one step of a scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: Vector,
    /// Difference between the main and the embedded solution, for schemes that
    /// carry an embedded pair.
    pub embedded_error: Option<Vector>,
}

pub(crate) fn check_finite(v: &Vector, quantity: &'static str, t: f64) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(component) => Err(SdeError::Domain { quantity, component, t }),
        None => Ok(()),
    }
}

fn check_finite_matrix(b: &Matrix, quantity: &'static str, t: f64) -> Result<()> {
    for (j, row) in b.outer_iter().enumerate() {
        if row.iter().any(|x| !x.is_finite()) {
            return Err(SdeError::Domain { quantity, component: j, t });
        }
    }
    Ok(())
}

fn check_shapes<S: SdeSystem + ?Sized>(sys: &S, x: ArrayView1<'_, f64>) -> Result<()> {
    if x.len() != sys.dim() {
        return Err(SdeError::Argument(format!(
            "state has {} components, system expects {}",
            x.len(),
            sys.dim()
        )));
    }
    Ok(())
}

/// Central-difference evaluation of `C^j = Σ_k Σ_i b^i_k ∂b^j_k/∂x^i` with
/// per-coordinate step `1e-6·max(1, |x_i|)`.
pub fn fd_contraction<S: SdeSystem + ?Sized>(sys: &S, x: ArrayView1<'_, f64>, t: f64) -> Result<Vector> {
    check_shapes(sys, x)?;
    let b = sys.diffusion(x, t);
    check_finite_matrix(&b, "diffusion", t)?;
    fd_contraction_with(sys, x, t, &b)
}

fn fd_contraction_with<S: SdeSystem + ?Sized>(
    sys: &S,
    x: ArrayView1<'_, f64>,
    t: f64,
    b: &Matrix,
) -> Result<Vector> {
    let n = sys.dim();
    let m = sys.noise_dim();
    let mut c = Vector::zeros(n);
    if m == 0 {
        return Ok(c);
    }
    let mut probe = x.to_owned();
    for i in 0..n {
        let weights = b.row(i);
        if weights.iter().all(|&w| w == 0.0) {
            continue;
        }
        let xi = x[i];
        let h = 1e-6 * xi.abs().max(1.0);
        let (hi, lo) = (xi + h, xi - h);
        probe[i] = hi;
        let plus = sys.diffusion(probe.view(), t);
        probe[i] = lo;
        let minus = sys.diffusion(probe.view(), t);
        probe[i] = xi;
        check_finite_matrix(&plus, "diffusion", t)?;
        check_finite_matrix(&minus, "diffusion", t)?;
        let span = hi - lo;
        for k in 0..m {
            let w = weights[k];
            if w == 0.0 {
                continue;
            }
            for j in 0..n {
                c[j] += w * (plus[[j, k]] - minus[[j, k]]) / span;
            }
        }
    }
    Ok(c)
}

fn contraction_with<S: SdeSystem + ?Sized>(
    sys: &S,
    x: ArrayView1<'_, f64>,
    t: f64,
    b: &Matrix,
) -> Result<Vector> {
    let c = match sys.diffusion_contraction(x, t) {
        Some(c) => c,
        None => fd_contraction_with(sys, x, t, b)?,
    };
    check_finite(&c, "diffusion contraction", t)?;
    Ok(c)
}

/// The modified drift `ã = a − ½ Σ_k Σ_i b^i_k ∂b^j_k/∂x^i`, i.e. the time
/// derivative of the solution viewed as a function of `(t, W)`.
pub fn modified_drift<S: SdeSystem + ?Sized>(sys: &S, x: ArrayView1<'_, f64>, t: f64) -> Result<Vector> {
    check_shapes(sys, x)?;
    let b = sys.diffusion(x, t);
    check_finite_matrix(&b, "diffusion", t)?;
    modified_drift_with(sys, x, t, &b)
}

fn modified_drift_with<S: SdeSystem + ?Sized>(
    sys: &S,
    x: ArrayView1<'_, f64>,
    t: f64,
    b: &Matrix,
) -> Result<Vector> {
    let mut a = sys.drift(x, t);
    check_finite(&a, "drift", t)?;
    if sys.noise_dim() > 0 {
        let c = contraction_with(sys, x, t, b)?;
        a.scaled_add(-0.5, &c);
    }
    Ok(a)
}

/// `f = ã(x,t)·Δt + Σ_k b_k(x,t)·ΔW^k` for the given displacements.
pub fn increment_function<S: SdeSystem + ?Sized>(
    sys: &S,
    x: ArrayView1<'_, f64>,
    t: f64,
    inc: &NoiseIncrement,
) -> Result<Vector> {
    check_shapes(sys, x)?;
    if inc.noise_dim() != sys.noise_dim() {
        return Err(SdeError::Argument(format!(
            "increment has {} Wiener components, system expects {}",
            inc.noise_dim(),
            sys.noise_dim()
        )));
    }
    let b = sys.diffusion(x, t);
    check_finite_matrix(&b, "diffusion", t)?;
    let mut f = modified_drift_with(sys, x, t, &b)? * inc.dt;
    if sys.noise_dim() > 0 {
        f += &b.dot(&inc.dw);
    }
    Ok(f)
}
