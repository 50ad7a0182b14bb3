//! Fixed-step one-step maps.
//!
//! `Srk2` and `Srk4` run an ordinary Runge-Kutta tableau on the increment
//! function, holding the same `(Δt, ΔW)` in every stage and placing stage `i`
//! at time `t + c_i·Δt`.

mod tableau;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use ndarray::ArrayView1;

pub use tableau::ButcherTableau;

use crate::error::{Result, SdeError};
use crate::system::{increment_function, NoiseIncrement, NoiseStructure, SdeSystem, StepResult, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeId {
    EulerMaruyama,
    MilsteinDF,
    Srk2,
    Srk4,
}

impl SchemeId {
    pub const ALL: [SchemeId; 4] = [SchemeId::EulerMaruyama, SchemeId::MilsteinDF, SchemeId::Srk2, SchemeId::Srk4];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::EulerMaruyama => "em",
            SchemeId::MilsteinDF => "milstein",
            SchemeId::Srk2 => "srk2",
            SchemeId::Srk4 => "srk4",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = SdeError;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| SdeError::Argument(format!("unknown scheme {s:?}; valid schemes: em, milstein, srk2, srk4")))
    }
}

fn finish(state: Vector, t: f64, embedded_error: Option<Vector>) -> Result<StepResult> {
    if state.iter().any(|x| !x.is_finite()) {
        return Err(SdeError::BlowUp { t, step: None, state: state.to_vec() });
    }
    Ok(StepResult { state, embedded_error })
}

/// `x' = x + a·Δt + Σ_k b_k·ΔW^k`.
pub fn em_step<S: SdeSystem + ?Sized>(sys: &S, x: ArrayView1<'_, f64>, t: f64, inc: &NoiseIncrement) -> Result<StepResult> {
    let a = sys.drift(x, t);
    crate::system::check_finite(&a, "drift", t)?;
    let mut next = x.to_owned();
    next.scaled_add(inc.dt, &a);
    if inc.noise_dim() > 0 {
        let b = sys.diffusion(x, t);
        next += &b.dot(&inc.dw);
    }
    finish(next, t + inc.dt, None)
}

/// Derivative-free Milstein scheme with supporting values
/// `x̄_k = x + a·Δt + b_k·√Δt`.
///
/// Diagonal noise uses only the `k = l` corrections; commutative noise uses
/// the symmetrized products `ΔW^k ΔW^l − δ_kl Δt` over all pairs.
pub fn milstein_df_step<S: SdeSystem + ?Sized>(
    sys: &S,
    x: ArrayView1<'_, f64>,
    t: f64,
    inc: &NoiseIncrement,
) -> Result<StepResult> {
    let structure = sys.noise_structure();
    if structure == NoiseStructure::General && sys.noise_dim() > 1 {
        return Err(SdeError::UnsupportedNoise(
            "derivative-free Milstein needs diagonal or commutative noise (Lévy areas are not simulated)".into(),
        ));
    }
    let a = sys.drift(x, t);
    crate::system::check_finite(&a, "drift", t)?;
    let m = inc.noise_dim();
    let mut next = x.to_owned();
    next.scaled_add(inc.dt, &a);
    if m == 0 {
        return finish(next, t + inc.dt, None);
    }
    let b = sys.diffusion(x, t);
    next += &b.dot(&inc.dw);
    if inc.dt > 0.0 {
        let sqrt_dt = inc.dt.sqrt();
        let mut base = x.to_owned();
        base.scaled_add(inc.dt, &a);
        let all_pairs = structure == NoiseStructure::Commutative;
        for k in 0..m {
            let mut support = base.clone();
            support.scaled_add(sqrt_dt, &b.column(k));
            let b_support = sys.diffusion(support.view(), t);
            let partners = if all_pairs { 0..m } else { k..k + 1 };
            for l in partners {
                let mut product = inc.dw[k] * inc.dw[l];
                if k == l {
                    product -= inc.dt;
                }
                let scale = product / (2.0 * sqrt_dt);
                let diff = &b_support.column(l) - &b.column(l);
                next.scaled_add(scale, &diff);
            }
        }
    }
    finish(next, t + inc.dt, None)
}

/// The four-stage stochastic Runge-Kutta scheme of strong order 2:
/// `x' = x + (K¹ + 2K² + 2K³ + K⁴)/6` with every `K` an increment function.
pub fn srk2_step<S: SdeSystem + ?Sized>(sys: &S, x: ArrayView1<'_, f64>, t: f64, inc: &NoiseIncrement) -> Result<StepResult> {
    let half = 0.5 * inc.dt;
    let k1 = increment_function(sys, x, t, inc)?;
    let y = &x + &(&k1 * 0.5);
    let k2 = increment_function(sys, y.view(), t + half, inc)?;
    let y = &x + &(&k2 * 0.5);
    let k3 = increment_function(sys, y.view(), t + half, inc)?;
    let y = &x + &k3;
    let k4 = increment_function(sys, y.view(), t + inc.dt, inc)?;
    let sum = k1 + &(k2 * 2.0) + &(k3 * 2.0) + &k4;
    finish(&x + &(sum / 6.0), t + inc.dt, None)
}

/// Runs an explicit tableau on the increment function.
pub fn tableau_step<S: SdeSystem + ?Sized>(
    tableau: &ButcherTableau,
    sys: &S,
    x: ArrayView1<'_, f64>,
    t: f64,
    inc: &NoiseIncrement,
) -> Result<StepResult> {
    let s = tableau.stages();
    let mut stages: Vec<Vector> = Vec::with_capacity(s);
    for i in 0..s {
        let mut y = x.to_owned();
        for (j, &aij) in tableau.a[i].iter().enumerate() {
            if aij != 0.0 {
                y.scaled_add(aij, &stages[j]);
            }
        }
        stages.push(increment_function(sys, y.view(), t + tableau.c[i] * inc.dt, inc)?);
    }
    let mut next = x.to_owned();
    for (bi, k) in tableau.b.iter().zip(&stages) {
        if *bi != 0.0 {
            next.scaled_add(*bi, k);
        }
    }
    let embedded = tableau.error_weights.as_ref().map(|e| {
        let mut err = Vector::zeros(x.len());
        for (ei, k) in e.iter().zip(&stages) {
            if *ei != 0.0 {
                err.scaled_add(*ei, k);
            }
        }
        err
    });
    finish(next, t + inc.dt, embedded)
}

fn dop853() -> &'static ButcherTableau {
    static TABLEAU: OnceLock<ButcherTableau> = OnceLock::new();
    TABLEAU.get_or_init(ButcherTableau::dop853)
}

/// The twelve-stage scheme of strong order 4 built on the eighth-order
/// DOP853 tableau; reports the fifth-order embedded difference.
pub fn srk4_step<S: SdeSystem + ?Sized>(sys: &S, x: ArrayView1<'_, f64>, t: f64, inc: &NoiseIncrement) -> Result<StepResult> {
    tableau_step(dop853(), sys, x, t, inc)
}

pub fn step<S: SdeSystem + ?Sized>(
    scheme: SchemeId,
    sys: &S,
    x: ArrayView1<'_, f64>,
    t: f64,
    inc: &NoiseIncrement,
) -> Result<StepResult> {
    match scheme {
        SchemeId::EulerMaruyama => em_step(sys, x, t, inc),
        SchemeId::MilsteinDF => milstein_df_step(sys, x, t, inc),
        SchemeId::Srk2 => srk2_step(sys, x, t, inc),
        SchemeId::Srk4 => srk4_step(sys, x, t, inc),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{FnSystem, Matrix};
    use ndarray::array;

    fn exp_ode() -> FnSystem {
        FnSystem::new(1, 1, |x, _| x.to_owned(), |_, _| Matrix::zeros((1, 1)))
    }

    fn tan_system() -> FnSystem {
        FnSystem::new(
            1,
            1,
            |x, _| array![(1.0 + x[0]) * (1.0 + x[0] * x[0])],
            |x, _| array![[1.0 + x[0] * x[0]]],
        )
        .with_contraction(|x, _| array![2.0 * x[0] * (1.0 + x[0] * x[0])])
        .with_structure(NoiseStructure::Diagonal)
    }

    #[test]
    fn scheme_names_round_trip() {
        for id in SchemeId::ALL {
            assert_eq!(id.name().parse::<SchemeId>().unwrap(), id);
        }
        let err = "rk45".parse::<SchemeId>().unwrap_err().to_string();
        assert!(err.contains("em, milstein, srk2, srk4"));
    }

    #[test]
    fn em_examples() {
        let geom = FnSystem::new(1, 2, |x, _| x.to_owned(), |_, _| Matrix::zeros((1, 2)));
        let r = em_step(&geom, array![1.0].view(), 0.0, &NoiseIncrement::new(0.01, array![0.7, -2.0]).unwrap()).unwrap();
        assert!((r.state[0] - 1.01).abs() < 1e-15);
        assert!(r.embedded_error.is_none());

        let r = em_step(&tan_system(), array![1.0].view(), 0.0, &NoiseIncrement::new(0.01, array![0.1]).unwrap()).unwrap();
        assert!((r.state[0] - 1.24).abs() < 1e-15);
    }

    #[test]
    fn all_schemes_fix_state_on_empty_step() {
        let sys = tan_system();
        let x = array![0.3];
        for id in SchemeId::ALL {
            let r = step(id, &sys, x.view(), 0.2, &NoiseIncrement::zero(0.0, 1)).unwrap();
            assert_eq!(r.state, x, "{id}");
            if let Some(err) = r.embedded_error {
                assert!(err.iter().all(|e| *e == 0.0));
            }
        }
    }

    #[test]
    fn milstein_examples() {
        let linear = FnSystem::new(1, 1, |_, _| Vector::zeros(1), |x, _| array![[x[0]]]).with_structure(NoiseStructure::Diagonal);
        let r = milstein_df_step(&linear, array![1.0].view(), 0.0, &NoiseIncrement::new(0.01, array![0.2]).unwrap()).unwrap();
        assert!((r.state[0] - 1.215).abs() < 1e-14);
        // analytic Milstein: ½·b·b'·(ΔW² − Δt) with b = b' = 1
        assert!((r.state[0] - (1.2 + 0.5 * (0.04 - 0.01))).abs() < 1e-14);

        let r = milstein_df_step(&linear, array![1.0].view(), 0.0, &NoiseIncrement::new(0.01, array![0.1]).unwrap()).unwrap();
        assert!((r.state[0] - 1.1).abs() < 1e-15);

        let additive = FnSystem::new(1, 1, |x, _| -x.to_owned(), |_, _| array![[0.3]]);
        let inc = NoiseIncrement::new(0.01, array![0.37]).unwrap();
        let x = array![2.0];
        assert_eq!(
            milstein_df_step(&additive, x.view(), 0.0, &inc).unwrap().state,
            em_step(&additive, x.view(), 0.0, &inc).unwrap().state
        );
    }

    #[test]
    fn milstein_rejects_general_noise() {
        let sys = FnSystem::new(2, 2, |_, _| Vector::zeros(2), |x, _| array![[x[1], 0.0], [0.0, x[0]]]);
        let err = milstein_df_step(&sys, array![1.0, 1.0].view(), 0.0, &NoiseIncrement::zero(0.1, 2));
        assert!(matches!(err, Err(SdeError::UnsupportedNoise(_))));
    }

    #[test]
    fn srk2_reduces_to_classical_rk4() {
        let r = srk2_step(&exp_ode(), array![1.0].view(), 0.0, &NoiseIncrement::new(0.1, array![0.4]).unwrap()).unwrap();
        // (1 + h + h²/2 + h³/6 + h⁴/24) at h = 0.1
        assert!((r.state[0] - 1.105_170_833_333_333_3).abs() < 1e-15);
        assert!((r.state[0] - 0.1f64.exp()).abs() < 1e-7);
    }

    #[test]
    fn srk4_reduces_to_eighth_order_rk() {
        let r = srk4_step(&exp_ode(), array![1.0].view(), 0.0, &NoiseIncrement::zero(0.1, 1)).unwrap();
        assert!((r.state[0] - 0.1f64.exp()).abs() < 1e-13);
        assert!(r.embedded_error.unwrap()[0].abs() < 1e-8);
    }

    #[test]
    fn srk2_single_step_on_tan_problem_tracks_exact_solution() {
        let sys = tan_system();
        let dt: f64 = 2.5e-5;
        let x0 = 1.0f64;
        let bound = 3.0 * dt.sqrt();
        for i in 0..=20 {
            let dw = -bound + 2.0 * bound * i as f64 / 20.0;
            let r = srk2_step(&sys, array![x0].view(), 0.0, &NoiseIncrement::new(dt, array![dw]).unwrap()).unwrap();
            let exact = (dt + dw + x0.atan()).tan();
            assert!((r.state[0] - exact).abs() < 1e-9, "dw = {dw}: {}", (r.state[0] - exact).abs());
        }
    }

    #[test]
    fn blow_up_is_reported() {
        let sys = FnSystem::new(1, 0, |x, _| x.to_owned(), |_, _| Matrix::zeros((1, 0)));
        let r = em_step(&sys, array![1.5e308].view(), 0.0, &NoiseIncrement::zero(1.0, 0));
        assert!(matches!(r, Err(SdeError::BlowUp { .. })));
    }
}
