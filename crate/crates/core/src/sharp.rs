//! Cluster-level sharp null and the constant proportional effect model.
//!
//! Under the model `r_T − r_C = β·(d_T − d_C)` at the cluster level, the
//! adjusted response `f̃ = ΣR/n − β0·ΣD/n` of each cluster does not depend on
//! encouragement when `β = β0`. The double-rank statistic
//! `T = Σ 1{A_k > 0}·φ(d_k, q_k)` combines the sign of the encouraged-minus-control
//! adjusted difference `A_k` with the dose-gap rank `d_k` and the effect-size rank
//! `q_k`. Its randomization distribution is approximated by a normal law with
//! mean `Σ s_k φ_k / 2` and variance `Σ s_k φ_k² / 4`.

use crate::data::{Diagnostic, Study};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridInterval};
use crate::stats::{average_ranks, normal_cdf, normal_sf};

/// Weight function `φ(d, q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phi {
    /// `φ = 1`: the sign test.
    Sign,
    /// `φ = q`: the Wilcoxon signed rank test.
    Wilcoxon,
    /// `φ = d·q`: dose-weighted signed ranks.
    DoseRank,
    /// `φ = d^a·q^b` with nonnegative exponents.
    Poly { a: f64, b: f64 },
}

impl Phi {
    /// Parses `sign`, `wilcoxon`, `doserank` or `poly:<a>,<b>`.
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "sign" => Ok(Phi::Sign),
            "wilcoxon" => Ok(Phi::Wilcoxon),
            "doserank" => Ok(Phi::DoseRank),
            other => {
                let bad = || Error::InvalidArgument(format!("unknown weight function `{other}`"));
                let rest = other.strip_prefix("poly:").ok_or_else(bad)?;
                let (a, b) = rest.split_once(',').ok_or_else(bad)?;
                let a: f64 = a.trim().parse().map_err(|_| bad())?;
                let b: f64 = b.trim().parse().map_err(|_| bad())?;
                if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
                    return Err(Error::InvalidArgument(
                        "poly exponents must be finite and nonnegative".into(),
                    ));
                }
                Ok(Phi::Poly { a, b })
            }
        }
    }

    /// Evaluates `φ(d, q)`.
    pub fn eval(&self, d: f64, q: f64) -> f64 {
        match *self {
            Phi::Sign => 1.0,
            Phi::Wilcoxon => q,
            Phi::DoseRank => d * q,
            Phi::Poly { a, b } => d.powf(a) * q.powf(b),
        }
    }

    /// Canonical text form, inverse of [`Phi::parse`].
    pub fn name(&self) -> String {
        match self {
            Phi::Sign => "sign".into(),
            Phi::Wilcoxon => "wilcoxon".into(),
            Phi::DoseRank => "doserank".into(),
            Phi::Poly { a, b } => format!("poly:{a},{b}"),
        }
    }
}

/// How the normal tail is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Continuity {
    /// Plain normal tail at the observed statistic.
    #[default]
    None,
    /// Shift the observed statistic half a lattice step toward the mean.
    ///
    /// The statistic lives on a lattice of spacing `g` for the sign, Wilcoxon
    /// and dose-rank weights (ranks are multiples of `1/(2(K+1))`); `g` is the
    /// greatest common divisor of the weights on that lattice. Polynomial
    /// weights have no lattice and are left uncorrected.
    Lattice,
}

/// Per-pair inputs of the double-rank statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleRankInputs {
    /// Encouraged-minus-control adjusted differences `A_k`.
    pub a: Vec<f64>,
    /// Dose-gap ranks divided by `K + 1`.
    pub d: Vec<f64>,
    /// Ranks of `|A_k|` divided by `K + 1` (average ranks for ties).
    pub q: Vec<f64>,
    /// Indicators `1{|A_k| > 0}`.
    pub s: Vec<bool>,
}

impl DoubleRankInputs {
    /// Builds the inputs from adjusted differences and dose gaps.
    pub fn from_parts(a: Vec<f64>, dose_gaps: &[f64]) -> Self {
        let k1 = a.len() as f64 + 1.0;
        let d = average_ranks(dose_gaps)
            .into_iter()
            .map(|r| r / k1)
            .collect();
        let abs: Vec<f64> = a.iter().map(|v| v.abs()).collect();
        let q = average_ranks(&abs).into_iter().map(|r| r / k1).collect();
        let s = a.iter().map(|v| v.abs() > 0.0).collect();
        Self { a, d, q, s }
    }

    /// Inputs for `study` at `β0`.
    pub fn new(study: &Study, beta0: f64) -> Self {
        let gaps: Vec<f64> = study.pairs().iter().map(|p| p.dose_gap()).collect();
        Self::from_parts(adjusted_differences(study, beta0), &gaps)
    }

    /// Number of pairs.
    pub fn k(&self) -> usize {
        self.a.len()
    }

    /// Weights `s_k·φ(d_k, q_k)`.
    pub fn weights(&self, phi: Phi) -> Vec<f64> {
        (0..self.k())
            .map(|i| {
                if self.s[i] {
                    phi.eval(self.d[i], self.q[i])
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Adjusted differences `A_k = f̃_enc − f̃_ctl` with `f̃ = ΣR/n − β0·ΣD/n`.
pub fn adjusted_differences(study: &Study, beta0: f64) -> Vec<f64> {
    let f = |c: &crate::data::Cluster| c.sum_r / c.n as f64 - beta0 * c.sum_d / c.n as f64;
    study
        .pairs()
        .iter()
        .map(|p| f(p.encouraged()) - f(p.control()))
        .collect()
}

/// Double-rank statistic with its null moments and normal p-values.
#[derive(Debug, Clone, PartialEq)]
pub struct TdrResult {
    /// Observed statistic `Σ 1{A_k > 0}·φ_k`.
    pub statistic: f64,
    /// Null mean `Σ s_k φ_k / 2`.
    pub mean: f64,
    /// Null variance `Σ s_k φ_k² / 4`.
    pub variance: f64,
    /// Standardized deviate `(T − mean)/sd` (before any continuity shift).
    pub deviate: f64,
    /// Upper-tail p-value `P(T ≥ t)`.
    pub p_one_sided: f64,
    /// Lower-tail p-value `P(T ≤ t)`.
    pub p_lower: f64,
    /// `2·min(upper, lower)` capped at 1.
    pub p_two_sided: f64,
    /// Findings such as a degenerate null distribution.
    pub diagnostics: Vec<Diagnostic>,
}

/// Lattice step of the statistic for the given weight function.
fn lattice_step(inputs: &DoubleRankInputs, phi: Phi) -> f64 {
    let k1 = inputs.k() as f64 + 1.0;
    // Ranks are multiples of 1/(2(K+1)); scale weights to integers.
    let unit = match phi {
        Phi::Sign => 1.0,
        Phi::Wilcoxon => 1.0 / (2.0 * k1),
        Phi::DoseRank => 1.0 / (4.0 * k1 * k1),
        Phi::Poly { .. } => return 0.0,
    };
    let mut g: u64 = 0;
    for w in inputs.weights(phi).into_iter().filter(|&w| w > 0.0) {
        g = gcd(g, (w / unit).round() as u64);
    }
    g as f64 * unit
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Double-rank statistic and its normal approximation.
///
/// When every `A_k` is zero the null distribution is degenerate; the result
/// has variance 0, all p-values equal to 1 and a diagnostic.
pub fn t_dr(inputs: &DoubleRankInputs, phi: Phi, continuity: Continuity) -> TdrResult {
    let w = inputs.weights(phi);
    let statistic: f64 = w
        .iter()
        .zip(&inputs.a)
        .filter(|(_, &a)| a > 0.0)
        .map(|(w, _)| w)
        .sum();
    let mean = w.iter().sum::<f64>() / 2.0;
    let variance = w.iter().map(|v| v * v).sum::<f64>() / 4.0;
    if !(variance > 0.0) {
        return TdrResult {
            statistic,
            mean,
            variance,
            deviate: 0.0,
            p_one_sided: 1.0,
            p_lower: 1.0,
            p_two_sided: 1.0,
            diagnostics: vec![Diagnostic::warning(
                "degenerate_null",
                None,
                "every adjusted difference is zero; the statistic has a point-mass null distribution",
            )],
        };
    }
    let sd = variance.sqrt();
    let half = match continuity {
        Continuity::None => 0.0,
        Continuity::Lattice => lattice_step(inputs, phi) / 2.0,
    };
    let deviate = (statistic - mean) / sd;
    let p_upper = normal_sf((statistic - half - mean) / sd);
    let p_lower = normal_cdf((statistic + half - mean) / sd);
    TdrResult {
        statistic,
        mean,
        variance,
        deviate,
        p_one_sided: p_upper,
        p_lower,
        p_two_sided: (2.0 * p_upper.min(p_lower)).min(1.0),
        diagnostics: Vec::new(),
    }
}

/// Options of the sharp-null test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpOptions {
    /// Weight function.
    pub phi: Phi,
    /// Tail evaluation.
    pub continuity: Continuity,
}

impl SharpOptions {
    /// Options with the given weight function and no continuity shift.
    pub fn new(phi: Phi) -> Self {
        Self {
            phi,
            continuity: Continuity::None,
        }
    }
}

/// Tests `β = β0` under the constant proportional effect model.
pub fn test_sharp(study: &Study, beta0: f64, opts: SharpOptions) -> TdrResult {
    t_dr(
        &DoubleRankInputs::new(study, beta0),
        opts.phi,
        opts.continuity,
    )
}

/// Confidence set for `β`: grid points whose two-sided p-value exceeds `alpha`.
pub fn invert_beta_ci(
    study: &Study,
    opts: SharpOptions,
    alpha: f64,
    grid: &Grid,
) -> Result<GridInterval> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    let keep: Vec<bool> = grid
        .points()
        .into_iter()
        .map(|b| test_sharp(study, b, opts).p_two_sided > alpha)
        .collect();
    Ok(GridInterval::from_mask(grid, &keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Cluster, Pair};
    use approx::assert_relative_eq;

    fn inputs(a: &[f64]) -> DoubleRankInputs {
        let gaps: Vec<f64> = (0..a.len()).map(|i| 0.3 + 0.1 * i as f64).collect();
        DoubleRankInputs::from_parts(a.to_vec(), &gaps)
    }

    #[test]
    fn sign_test_four_positive() {
        let r = t_dr(&inputs(&[1.0, 2.0, 0.5, 3.0]), Phi::Sign, Continuity::None);
        assert_eq!((r.statistic, r.mean, r.variance), (4.0, 2.0, 1.0));
        assert_relative_eq!(r.p_one_sided, 0.022750131948179195, max_relative = 1e-10);
    }

    #[test]
    fn wilcoxon_two_pairs() {
        let r = t_dr(&inputs(&[1.0, 2.0]), Phi::Wilcoxon, Continuity::None);
        assert_relative_eq!(r.statistic, 1.0, epsilon = 1e-15);
        assert_relative_eq!(r.mean, 0.5, epsilon = 1e-15);
        assert_relative_eq!(r.variance, 5.0 / 36.0, epsilon = 1e-15);
        assert_relative_eq!(r.deviate, 1.3416407864998738, epsilon = 1e-12);
    }

    #[test]
    fn balanced_signs_give_half() {
        let r = t_dr(
            &inputs(&[1.0, -1.0, 2.0, -2.0]),
            Phi::Wilcoxon,
            Continuity::None,
        );
        assert_relative_eq!(r.p_one_sided, 0.5, epsilon = 1e-12);
        assert_relative_eq!(r.p_two_sided, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn all_zero_is_degenerate() {
        let r = t_dr(&inputs(&[0.0, 0.0, 0.0]), Phi::DoseRank, Continuity::None);
        assert_eq!(r.p_two_sided, 1.0);
        assert_eq!(r.diagnostics.len(), 1);
    }

    #[test]
    fn lattice_steps() {
        let i = inputs(&[1.0, -2.0, 3.0, 4.0]);
        assert_eq!(lattice_step(&i, Phi::Sign), 1.0);
        assert_relative_eq!(lattice_step(&i, Phi::Wilcoxon), 1.0 / 5.0, epsilon = 1e-15);
        assert_relative_eq!(lattice_step(&i, Phi::DoseRank), 1.0 / 25.0, epsilon = 1e-15);
        let tied = inputs(&[1.0, -1.0, 3.0]);
        assert_relative_eq!(
            lattice_step(&tied, Phi::Wilcoxon),
            3.0 / 8.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn adjusted_difference_examples() {
        let c = |dose, n, d, r| Cluster {
            dose,
            n,
            sum_d: d,
            sum_r: r,
            xt: vec![],
            xbar: vec![],
        };
        let s = Study::new(vec![
            Pair {
                id: 1,
                clusters: [c(0.9, 2, 2.0, 3.0), c(0.1, 1, 1.0, 1.0)],
            },
            Pair {
                id: 2,
                clusters: [c(0.1, 2, 1.0, 3.0), c(0.9, 2, 2.0, 4.0)],
            },
        ])
        .unwrap();
        let a = adjusted_differences(&s, 1.0);
        assert_relative_eq!(a[0], 0.5, epsilon = 1e-15);
        let a0 = adjusted_differences(&s, 0.0);
        assert_relative_eq!(a0[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn phi_parse_round_trip() {
        for t in ["sign", "wilcoxon", "doserank", "poly:2,0.5"] {
            assert_eq!(Phi::parse(t).unwrap().name(), t);
        }
        assert!(Phi::parse("poly:-1,2").is_err());
        assert!(Phi::parse("median").is_err());
    }
}
