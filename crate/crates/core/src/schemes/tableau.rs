#![allow(clippy::excessive_precision)]

use crate::error::{Result, SdeError};

/// An explicit Runge-Kutta tableau, optionally with an embedded pair.
///
/// `error_weights` holds `b − b_emb` directly so the embedded estimate is formed
/// from published coefficients without an extra cancellation.
#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub error_weights: Option<Vec<f64>>,
}

impl ButcherTableau {
    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn embedded_weights(&self) -> Option<Vec<f64>> {
        self.error_weights
            .as_ref()
            .map(|e| self.b.iter().zip(e).map(|(b, e)| b - e).collect())
    }

    /// The classical four-stage method.
    pub fn classical_rk4() -> Self {
        Self {
            a: vec![vec![], vec![0.5], vec![0.0, 0.5], vec![0.0, 0.0, 1.0]],
            b: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
            c: vec![0.0, 0.5, 0.5, 1.0],
            error_weights: None,
        }
    }

    /// Hairer and Wanner's twelve-stage eighth-order method (DOP853) with its
    /// fifth-order embedded error weights.
    pub fn dop853() -> Self {
        let a = DOP853_A
            .iter()
            .enumerate()
            .map(|(i, row)| row[..i].to_vec())
            .collect();
        Self {
            a,
            b: DOP853_B.to_vec(),
            c: DOP853_C.to_vec(),
            error_weights: Some(DOP853_E.to_vec()),
        }
    }

    /// Checks shapes, `Σb = 1` and `c_i = Σ_j a_ij` to within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let s = self.stages();
        if self.c.len() != s || self.a.len() != s {
            return Err(SdeError::Argument("tableau arrays disagree on the stage count".into()));
        }
        if let Some(e) = &self.error_weights {
            if e.len() != s {
                return Err(SdeError::Argument("error weights have the wrong length".into()));
            }
        }
        let sum_b: f64 = self.b.iter().sum();
        if (sum_b - 1.0).abs() > tol {
            return Err(SdeError::Argument(format!("weights sum to {sum_b}, not 1")));
        }
        for (i, row) in self.a.iter().enumerate() {
            if row.len() > i {
                return Err(SdeError::Argument(format!("stage {i} is not explicit")));
            }
            let row_sum: f64 = row.iter().sum();
            if (row_sum - self.c[i]).abs() > tol {
                return Err(SdeError::Argument(format!(
                    "stage {i}: row sum {row_sum} differs from abscissa {}",
                    self.c[i]
                )));
            }
        }
        Ok(())
    }
}

const DOP853_C: [f64; 12] = [
    0.0,
    0.526001519587677318785587544488e-01,
    0.789002279381515978178381316732e-01,
    0.118350341907227396726757197510e+00,
    0.281649658092772603273242802490e+00,
    0.333333333333333333333333333333e+00,
    0.25e+00,
    0.307692307692307692307692307692e+00,
    0.651282051282051282051282051282e+00,
    0.6e+00,
    0.857142857142857142857142857142e+00,
    1.0,
];

const DOP853_B: [f64; 12] = [
    5.42937341165687622380535766363e-2,
    0.0,
    0.0,
    0.0,
    0.0,
    4.45031289275240888144113950566e0,
    1.89151789931450038304281599044e0,
    -5.8012039600105847814672114227e0,
    3.1116436695781989440891606237e-1,
    -1.52160949662516078556178806805e-1,
    2.01365400804030348374776537501e-1,
    4.47106157277725905176885569043e-2,
];

const DOP853_E: [f64; 12] = [
    0.1312004499419488073250102996e-01,
    0.0,
    0.0,
    0.0,
    0.0,
    -0.1225156446376204440720569753e+01,
    -0.4957589496572501915214079952e+00,
    0.1664377182454986536961530415e+01,
    -0.3503288487499736816886487290e+00,
    0.3341791187130174790297318841e+00,
    0.8192320648511571246570742613e-01,
    -0.2235530786388629525884427845e-01,
];

#[rustfmt::skip]
const DOP853_A: [[f64; 12]; 12] = [
    [0.0; 12],
    [5.26001519587677318785587544488e-2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.97250569845378994544595329183e-2, 5.91751709536136983633785987549e-2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [2.95875854768068491816892993775e-2, 0.0, 8.87627564304205475450678981324e-2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [2.41365134159266685502369798665e-1, 0.0, -8.84549479328286085344864962717e-1, 9.24834003261792003115737966543e-1,
     0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.7037037037037037037037037037e-2, 0.0, 0.0, 1.70828608729473871279604482173e-1,
     1.25467687566822425016691814123e-1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.7109375e-2, 0.0, 0.0, 1.70252211019544039314978060272e-1, 6.02165389804559606850219397283e-2,
     -1.7578125e-2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.70920001185047927108779319836e-2, 0.0, 0.0, 1.70383925712239993810214054705e-1,
     1.07262030446373284651809199168e-1, -1.53194377486244017527936158236e-2,
     8.27378916381402288758473766002e-3, 0.0, 0.0, 0.0, 0.0, 0.0],
    [6.24110958716075717114429577812e-1, 0.0, 0.0, -3.36089262944694129406857109825e0,
     -8.68219346841726006818189891453e-1, 2.75920996994467083049415600797e1,
     2.01540675504778934086186788979e1, -4.34898841810699588477366255144e1, 0.0, 0.0, 0.0, 0.0],
    [4.77662536438264365890433908527e-1, 0.0, 0.0, -2.48811461997166764192642586468e0,
     -5.90290826836842996371446475743e-1, 2.12300514481811942347288949897e1,
     1.52792336328824235832596922938e1, -3.32882109689848629194453265587e1,
     -2.03312017085086261358222928593e-2, 0.0, 0.0, 0.0],
    [-9.3714243008598732571704021658e-1, 0.0, 0.0, 5.18637242884406370830023853209e0,
     1.09143734899672957818500254654e0, -8.14978701074692612513997267357e0,
     -1.85200656599969598641566180701e1, 2.27394870993505042818970056734e1,
     2.49360555267965238987089396762e0, -3.0467644718982195003823669022e0, 0.0, 0.0],
    [2.27331014751653820792359768449e0, 0.0, 0.0, -1.05344954667372501984066689879e1,
     -2.00087205822486249909675718444e0, -1.79589318631187989172765950534e1,
     2.79488845294199600508499808837e1, -2.85899827713502369474065508674e0,
     -8.87285693353062954433549289258e0, 1.23605671757943030647266201528e1,
     6.43392746015763530355970484046e-1, 0.0],
];

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).map(|(a, b)| a * b).sum()
    }

    fn a_times(t: &ButcherTableau, v: &[f64]) -> Vec<f64> {
        t.a.iter().map(|row| dot(row, &v[..row.len()])).collect()
    }

    #[test]
    fn tableaux_are_consistent() {
        ButcherTableau::classical_rk4().validate(1e-15).unwrap();
        ButcherTableau::dop853().validate(1e-13).unwrap();
    }

    #[test]
    fn dop853_quadrature_conditions_through_order_eight() {
        let t = ButcherTableau::dop853();
        for q in 1..=8 {
            let cq: Vec<f64> = t.c.iter().map(|c| c.powi(q - 1)).collect();
            let lhs = dot(&t.b, &cq);
            assert!((lhs - 1.0 / q as f64).abs() < 1e-13, "order {q}: {lhs}");
        }
    }

    #[test]
    fn dop853_tree_conditions_through_order_four() {
        let t = ButcherTableau::dop853();
        let c2: Vec<f64> = t.c.iter().map(|c| c * c).collect();
        let ac = a_times(&t, &t.c);
        let ac2 = a_times(&t, &c2);
        let aac = a_times(&t, &ac);
        let c_ac: Vec<f64> = t.c.iter().zip(&ac).map(|(c, v)| c * v).collect();
        assert!((dot(&t.b, &ac) - 1.0 / 6.0).abs() < 1e-13);
        assert!((dot(&t.b, &c_ac) - 1.0 / 8.0).abs() < 1e-13);
        assert!((dot(&t.b, &ac2) - 1.0 / 12.0).abs() < 1e-13);
        assert!((dot(&t.b, &aac) - 1.0 / 24.0).abs() < 1e-13);
    }

    #[test]
    fn embedded_weights_are_consistent_of_order_five() {
        let t = ButcherTableau::dop853();
        let e = t.error_weights.as_ref().unwrap();
        assert!(e.iter().sum::<f64>().abs() < 1e-13);
        let emb = t.embedded_weights().unwrap();
        for q in 1..=5 {
            let cq: Vec<f64> = t.c.iter().map(|c| c.powi(q - 1)).collect();
            assert!((dot(&emb, &cq) - 1.0 / q as f64).abs() < 1e-12, "order {q}");
        }
    }
}
