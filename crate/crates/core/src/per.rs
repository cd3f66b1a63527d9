//! Pooled effect ratio: `λ_PER = Σ(Σr_T − Σr_C) / Σ(Σd_T − Σd_C)` over all
//! clusters.
//!
//! The test of `λ_PER = λ0` uses `T(λ0) = K⁻¹ Σ Y_k(λ0)` with
//! `Y_k(λ0) = Σ_j (2Z_kj − 1)(ΣR_kj − λ0·ΣD_kj)` and the conservative variance
//! estimator `S²_Q = K⁻¹·Y_Qᵀ(I − H_Q)Y_Q`.

use crate::data::{Diagnostic, PotentialOutcomeCluster, Study};
use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridInterval};
use crate::stats::two_sided_normal_p;

/// Pair statistics `Y_k(λ0)`.
pub fn pair_statistics(study: &Study, lambda0: f64) -> Vec<f64> {
    study
        .pairs()
        .iter()
        .map(|p| {
            let (e, c) = (p.encouraged(), p.control());
            (e.sum_r - lambda0 * e.sum_d) - (c.sum_r - lambda0 * c.sum_d)
        })
        .collect()
}

/// Regression-assisted variance estimator `S²_Q`.
pub fn s2_q(y: &[f64], design: &DesignMatrix) -> Result<f64> {
    if y.len() != design.k() {
        return Err(Error::InvalidArgument(format!(
            "{} statistics for a design with {} rows",
            y.len(),
            design.k()
        )));
    }
    Ok(design.residual_form(y)? / y.len() as f64)
}

/// Outcome of a test of `λ_PER = λ0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerReport {
    /// Hypothesized value.
    pub lambda0: f64,
    /// `T(λ0)`.
    pub t: f64,
    /// `S²_Q`.
    pub s2: f64,
    /// `√K·T/√S²` (±∞ when `S² = 0 ≠ T`, 0 when both vanish).
    pub deviate: f64,
    /// Two-sided normal p-value.
    pub p_value: f64,
    /// `p_value ≤ α`.
    pub reject: bool,
    /// Findings such as a zero variance estimate.
    pub diagnostics: Vec<Diagnostic>,
}

/// Tests `λ_PER = λ0` at level `alpha`.
pub fn test_per(
    study: &Study,
    lambda0: f64,
    design: &DesignMatrix,
    alpha: f64,
) -> Result<PerReport> {
    if study.k() < 2 {
        return Err(Error::InvalidArgument(
            "the test needs at least two pairs".into(),
        ));
    }
    let y = pair_statistics(study, lambda0);
    let k = y.len() as f64;
    let t = y.iter().sum::<f64>() / k;
    let mut s2 = s2_q(&y, design)?;
    // Rounding leaves a residue of order ε·Σy² when the residuals vanish.
    let scale = y.iter().map(|v| v * v).sum::<f64>() / k;
    if s2 <= 1e-12 * scale {
        s2 = 0.0;
    }
    let mut diagnostics = Vec::new();
    let (deviate, p_value) = if s2 > 0.0 {
        let z = k.sqrt() * t / s2.sqrt();
        (z, two_sided_normal_p(z))
    } else if t != 0.0 {
        diagnostics.push(Diagnostic::warning(
            "zero_variance",
            None,
            "variance estimate is zero while the mean statistic is not; p-value set to 0",
        ));
        (t.signum() * f64::INFINITY, 0.0)
    } else {
        diagnostics.push(Diagnostic::warning(
            "zero_variance",
            None,
            "every pair statistic is zero; p-value set to 1",
        ));
        (0.0, 1.0)
    };
    Ok(PerReport {
        lambda0,
        t,
        s2,
        deviate,
        p_value,
        reject: p_value <= alpha,
        diagnostics,
    })
}

/// Confidence set for `λ_PER`: grid points with p-value above `alpha`.
pub fn invert_per_ci(
    study: &Study,
    design: &DesignMatrix,
    alpha: f64,
    grid: &Grid,
) -> Result<GridInterval> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    let keep = grid
        .points()
        .into_iter()
        .map(|l| Ok(test_per(study, l, design, alpha)?.p_value > alpha))
        .collect::<Result<Vec<bool>>>()?;
    Ok(GridInterval::from_mask(grid, &keep))
}

/// Point estimate `Σ_k ΔR_k / Σ_k ΔD_k`, the root of `T(λ)`.
pub fn per_estimate(study: &Study) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for p in study.pairs() {
        num += p.encouraged().sum_r - p.control().sum_r;
        den += p.encouraged().sum_d - p.control().sum_d;
    }
    (den != 0.0).then(|| num / den)
}

/// Confidence interval by bisection on each side of the point estimate.
///
/// Assumes the acceptance region is an interval containing the estimate;
/// returns `None` when there is no estimate. A side whose bracket end is
/// still accepted is reported at that end.
pub fn per_ci_bisection(
    study: &Study,
    design: &DesignMatrix,
    alpha: f64,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<Option<(f64, f64)>> {
    let Some(center) = per_estimate(study) else {
        return Ok(None);
    };
    let accept =
        |l: f64| -> Result<bool> { Ok(test_per(study, l, design, alpha)?.p_value > alpha) };
    let side = |outer: f64| -> Result<f64> {
        if accept(outer)? {
            return Ok(outer);
        }
        let (mut a, mut r) = (center, outer);
        while (r - a).abs() > tol {
            let m = 0.5 * (a + r);
            if accept(m)? {
                a = m;
            } else {
                r = m;
            }
        }
        Ok(a)
    };
    Ok(Some((side(lo)?, side(hi)?)))
}

/// Weights `w_kj = CO_kj / Σ CO` and effect ratios `β_kj` of the clusters.
///
/// `Σ w·β` equals the pooled effect ratio.
pub fn per_weights(potential: &[PotentialOutcomeCluster]) -> Result<(Vec<f64>, Vec<f64>)> {
    let total: f64 = potential.iter().map(|c| c.compliance()).sum();
    if total == 0.0 {
        return Err(Error::InvalidArgument("total compliance is zero".into()));
    }
    let mut w = Vec::with_capacity(potential.len());
    let mut beta = Vec::with_capacity(potential.len());
    for c in potential {
        let co = c.compliance();
        w.push(co / total);
        beta.push(if co != 0.0 {
            (c.sum_r_t - c.sum_r_c) / co
        } else {
            0.0
        });
    }
    Ok((w, beta))
}

/// Pooled effect ratio computed directly from potential outcomes.
pub fn lambda_per(potential: &[PotentialOutcomeCluster]) -> f64 {
    let num: f64 = potential.iter().map(|c| c.sum_r_t - c.sum_r_c).sum();
    let den: f64 = potential.iter().map(|c| c.compliance()).sum();
    num / den
}

/// Average cluster effect ratio: the unweighted mean of `β_kj`.
///
/// Clusters with zero compliance have no effect ratio; the function returns
/// `None` if any cluster lacks one.
pub fn lambda_acer(potential: &[PotentialOutcomeCluster]) -> Option<f64> {
    let ratios: Option<Vec<f64>> = potential.iter().map(|c| c.effect_ratio()).collect();
    ratios.map(|r| r.iter().sum::<f64>() / r.len() as f64)
}

/// Two clusters observed in two periods, given as integer outcome
/// differences `a` and compliance counts `b` per cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimpsonWitness {
    /// Outcome differences in period 1.
    pub a1: [i64; 2],
    /// Compliance counts in period 1.
    pub b1: [i64; 2],
    /// Outcome differences in period 2.
    pub a2: [i64; 2],
    /// Compliance counts in period 2.
    pub b2: [i64; 2],
}

impl SimpsonWitness {
    /// Cluster potential outcomes for one period (`Σd_C = Σr_C = 0`).
    pub fn period(&self, second: bool) -> [PotentialOutcomeCluster; 2] {
        let (a, b) = if second {
            (self.a2, self.b2)
        } else {
            (self.a1, self.b1)
        };
        [0, 1].map(|k| PotentialOutcomeCluster {
            sum_d_t: b[k] as f64,
            sum_d_c: 0.0,
            sum_r_t: a[k] as f64,
            sum_r_c: 0.0,
        })
    }
}

/// An instance where both cluster effect ratios rise between periods, the
/// average cluster effect ratio rises, and the pooled effect ratio falls.
///
/// Period 1: ratios 9/9 and 0/1 (pooled 9/10). Period 2: ratios 11/10 and
/// 1/9 (pooled 12/19).
pub fn simpson_witness() -> SimpsonWitness {
    SimpsonWitness {
        a1: [9, 0],
        b1: [9, 1],
        a2: [11, 1],
        b2: [10, 9],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Cluster, Pair};
    use crate::design::{build_design, DesignKind};
    use approx::assert_relative_eq;

    fn c(dose: f64, n: usize, d: f64, r: f64) -> Cluster {
        Cluster {
            dose,
            n,
            sum_d: d,
            sum_r: r,
            xt: vec![],
            xbar: vec![],
        }
    }

    #[test]
    fn degenerate_zero_variance_path() {
        let s = Study::new(vec![
            Pair {
                id: 1,
                clusters: [c(1.0, 3, 2.0, 3.0), c(0.0, 3, 1.0, 1.0)],
            },
            Pair {
                id: 2,
                clusters: [c(1.0, 3, 2.0, 4.0), c(0.0, 3, 1.0, 2.0)],
            },
        ])
        .unwrap();
        let d = build_design(&s, DesignKind::E).unwrap();
        let r = test_per(&s, 1.0, &d, 0.05).unwrap();
        assert_eq!((r.t, r.s2, r.p_value, r.reject), (1.0, 0.0, 0.0, true));
        assert_eq!(r.diagnostics.len(), 1);
    }

    #[test]
    fn all_zero_statistics_give_p_one() {
        let s = Study::new(vec![
            Pair {
                id: 1,
                clusters: [c(1.0, 3, 2.0, 2.0), c(0.0, 3, 1.0, 1.0)],
            },
            Pair {
                id: 2,
                clusters: [c(1.0, 3, 3.0, 3.0), c(0.0, 3, 1.0, 1.0)],
            },
        ])
        .unwrap();
        let d = build_design(&s, DesignKind::E).unwrap();
        let r = test_per(&s, 1.0, &d, 0.05).unwrap();
        assert_eq!((r.t, r.p_value), (0.0, 1.0));
    }

    #[test]
    fn weights_normalise() {
        let pc = |co: f64, beta: f64| PotentialOutcomeCluster {
            sum_d_t: co,
            sum_d_c: 0.0,
            sum_r_t: beta * co,
            sum_r_c: 0.0,
        };
        let (w, b) = per_weights(&[pc(1.0, 2.0), pc(3.0, 4.0)]).unwrap();
        assert_eq!(w, vec![0.25, 0.75]);
        assert_relative_eq!(
            w[0] * b[0] + w[1] * b[1],
            lambda_per(&[pc(1.0, 2.0), pc(3.0, 4.0)]),
            epsilon = 1e-15
        );
        let eq = [pc(2.0, 1.0), pc(2.0, 3.0)];
        assert_relative_eq!(lambda_per(&eq), lambda_acer(&eq).unwrap(), epsilon = 1e-15);
        assert!(per_weights(&[pc(0.0, 1.0)]).is_err());
    }
}
