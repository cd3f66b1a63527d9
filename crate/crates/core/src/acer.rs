//! Inference for the average cluster effect ratio
//! `λ_ACER = (2K)⁻¹ Σ_kj β_kj` under a lower bound `ι_min` on every cluster's
//! compliance rate.
//!
//! A test of `λ_ACER = λ0` at level `α`:
//!
//! 1. builds a level-`α/2` interval `[L, U]` for the average compliance rate
//!    `S_CO = (2K)⁻¹ Σ_kj CO_kj/n_kj`;
//! 2. minimizes `ρ(CO) = K²V̄² − χ²·V_Qᵀ(I − H_Q)V_Q` with
//!    `χ² = z²_{1−α/4}` over integer `CO` in the compliance boxes whose
//!    `S_CO` lies in `[L, U]`;
//! 3. rejects iff the certified minimum is strictly positive, which is the
//!    same as `δ_min(λ0) > z_{1−α/4}`.
//!
//! Compliance vectors are slot-major: entry `k` is the encouraged cluster of
//! pair `k` and entry `K + k` its control cluster.

use std::time::Duration;

use rayon::prelude::*;

use crate::data::{Diagnostic, Study};
use crate::design::{build_design, DesignKind, DesignMatrix};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridInterval};
use crate::miqcp::{
    dinkelbach_min_ratio, solve, AcerInstance, BoundRecord, MiqcpProblem, RatioOutcome, SolveMode,
    SolveOptions, SolveStatus,
};
use crate::stats::normal_quantile;

/// Integer compliance box of one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterBox {
    /// `ceil(n·ι_min)`, at least 1.
    pub lo: i64,
    /// `ΣD` when encouraged, `n − ΣD` otherwise.
    pub hi: i64,
}

impl ClusterBox {
    /// Whether the box is empty.
    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }
}

/// Compliance boxes of every cluster, as (encouraged, control) per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplianceBounds {
    /// Assumed lower bound on compliance rates.
    pub iota_min: f64,
    /// Boxes per pair in input pair order.
    pub boxes: Vec<[ClusterBox; 2]>,
    /// Positions of pairs with at least one empty box.
    pub dropped_pairs: Vec<usize>,
}

impl ComplianceBounds {
    /// Positions of pairs whose boxes are both nonempty.
    pub fn retained_pairs(&self) -> Vec<usize> {
        (0..self.boxes.len())
            .filter(|i| !self.dropped_pairs.contains(i))
            .collect()
    }
}

fn integer_count(v: f64, what: &str, pair: usize) -> Result<i64> {
    let r = v.round();
    if (v - r).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "pair {pair}: {what} = {v} is not an integer count"
        )));
    }
    Ok(r as i64)
}

/// Compliance boxes for lower bound `iota_min` on compliance rates.
///
/// `lo = max(1, ceil(n·ι_min))`; the product is reduced by `1e-9` before
/// the ceiling so that values such as `30 × 0.1` are not pushed up by
/// rounding.
pub fn compliance_box(study: &Study, iota_min: f64) -> Result<ComplianceBounds> {
    if !(iota_min > 0.0) || !iota_min.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "iota_min must be positive, got {iota_min}"
        )));
    }
    let mut boxes = Vec::with_capacity(study.k());
    let mut dropped_pairs = Vec::new();
    for (pos, pair) in study.pairs().iter().enumerate() {
        let mut b = [ClusterBox { lo: 0, hi: 0 }; 2];
        for (s, c) in [pair.encouraged(), pair.control()].into_iter().enumerate() {
            let d = integer_count(c.sum_d, "sum_d", pair.id)?;
            let n = c.n as i64;
            let lo = ((c.n as f64 * iota_min - 1e-9).ceil() as i64).max(1);
            let hi = if s == 0 { d } else { n - d };
            b[s] = ClusterBox { lo, hi };
        }
        if b.iter().any(ClusterBox::is_empty) {
            dropped_pairs.push(pos);
        }
        boxes.push(b);
    }
    Ok(ComplianceBounds {
        iota_min,
        boxes,
        dropped_pairs,
    })
}

/// Level-`α/2` interval for the average compliance rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SCoInterval {
    /// `L_{α/2}`.
    pub lower: f64,
    /// `U_{α/2}`.
    pub upper: f64,
}

/// `D̄ ± z_{1−α/4}/K·√(D_Qᵀ(I − H_Q)D_Q)` with
/// `D_k = ΣD_k,enc/n_k,enc − ΣD_k,ctl/n_k,ctl`.
pub fn sco_confidence_interval(
    study: &Study,
    design: &DesignMatrix,
    alpha: f64,
) -> Result<SCoInterval> {
    check_alpha(alpha)?;
    let k = study.k();
    if k < 2 {
        return Err(Error::InvalidArgument(
            "the interval needs at least two pairs".into(),
        ));
    }
    let d: Vec<f64> = study
        .pairs()
        .iter()
        .map(|p| p.encouraged().treated_fraction() - p.control().treated_fraction())
        .collect();
    let mean = d.iter().sum::<f64>() / k as f64;
    let half = normal_quantile(1.0 - alpha / 4.0) / k as f64 * design.residual_form(&d)?.sqrt();
    Ok(SCoInterval {
        lower: mean - half,
        upper: mean + half,
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )))
    }
}

/// The fixed-compliance statistic `δ(λ0; CO) = K|V̄| / √(V_Qᵀ(I − H_Q)V_Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaStat {
    /// `δ`; `+∞` when the variance form vanishes and `V̄ ≠ 0`, 0 when both vanish.
    pub value: f64,
    /// `V̄`.
    pub v_bar: f64,
    /// `V_Qᵀ(I − H_Q)V_Q`.
    pub form: f64,
    /// Findings such as a vanishing variance form.
    pub diagnostics: Vec<Diagnostic>,
}

/// `V_k = ΣR_k,enc/CO_k,enc − ΣR_k,ctl/CO_k,ctl − λ0` for slot-major `co`.
pub fn contrasts(study: &Study, co: &[i64], lambda0: f64) -> Result<Vec<f64>> {
    let k = study.k();
    if co.len() != 2 * k {
        return Err(Error::InvalidArgument(format!(
            "compliance vector has length {} instead of {}",
            co.len(),
            2 * k
        )));
    }
    if let Some(c) = co.iter().find(|&&c| c < 1) {
        return Err(Error::InvalidArgument(format!(
            "compliance values must be at least 1, got {c}"
        )));
    }
    Ok(study
        .pairs()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.encouraged().sum_r / co[i] as f64 - p.control().sum_r / co[k + i] as f64 - lambda0
        })
        .collect())
}

/// Computes `δ(λ0; CO)`.
pub fn delta_stat(
    study: &Study,
    co: &[i64],
    lambda0: f64,
    design: &DesignMatrix,
) -> Result<DeltaStat> {
    let v = contrasts(study, co, lambda0)?;
    let k = v.len() as f64;
    let v_bar = v.iter().sum::<f64>() / k;
    let form = design.residual_form(&v)?;
    let mut diagnostics = Vec::new();
    let value = if form > 0.0 {
        k * v_bar.abs() / form.sqrt()
    } else if v_bar != 0.0 {
        diagnostics.push(Diagnostic::warning(
            "zero_variance",
            None,
            "variance form vanishes while the mean contrast does not; statistic set to +inf",
        ));
        f64::INFINITY
    } else {
        0.0
    };
    Ok(DeltaStat {
        value,
        v_bar,
        form,
        diagnostics,
    })
}

/// Test of `λ_ACER = λ0` at a known compliance vector: rejects when
/// `δ(λ0; CO) > z_{1−level/2}`.
pub fn fixed_compliance_test(
    study: &Study,
    co: &[i64],
    lambda0: f64,
    design: &DesignMatrix,
    level: f64,
) -> Result<(DeltaStat, bool)> {
    check_alpha(level)?;
    let d = delta_stat(study, co, lambda0, design)?;
    let reject = d.value > normal_quantile(1.0 - level / 2.0);
    Ok((d, reject))
}

/// Outcome of an ACER test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcerDecision {
    /// The certified minimum of `ρ` is positive.
    Reject,
    /// Some feasible compliance vector has `ρ ≤ 0`, or the feasible set is empty.
    FailToReject,
    /// The solver ran out of budget; widen the limits.
    Inconclusive,
}

impl AcerDecision {
    /// Snake-case name.
    pub fn name(&self) -> &'static str {
        match self {
            Self::Reject => "reject",
            Self::FailToReject => "fail_to_reject",
            Self::Inconclusive => "inconclusive",
        }
    }
}

/// Settings for [`test_acer`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AcerOptions {
    /// Solver budgets.
    pub solver: SolveOptions,
    /// Also compute `δ_min` by Dinkelbach iteration.
    pub delta_min: bool,
}

/// Full report of an ACER test.
#[derive(Debug, Clone, PartialEq)]
pub struct AcerReport {
    /// Hypothesized value.
    pub lambda0: f64,
    /// Decision.
    pub decision: AcerDecision,
    /// Critical value `z_{1−α/4}`.
    pub critical_value: f64,
    /// Final solver status.
    pub solver_status: SolveStatus,
    /// Certified lower bound on `min ρ`.
    pub rho_lower: f64,
    /// Best feasible `ρ` found.
    pub rho_upper: f64,
    /// Best compliance vector found (slot-major over retained pairs).
    /// It certifies the bound only and carries no substantive meaning.
    pub minimizing_co: Option<Vec<i64>>,
    /// `δ_min(λ0)` when requested and settled.
    pub delta_min: Option<f64>,
    /// Interval for the average compliance rate.
    pub sco: SCoInterval,
    /// Labels of pairs removed because a compliance box was empty.
    pub dropped_pairs: Vec<usize>,
    /// Number of pairs analysed.
    pub k: usize,
    /// Branch-and-bound nodes.
    pub nodes: usize,
    /// Bound trace.
    pub bound_history: Vec<BoundRecord>,
    /// Solver wall time.
    pub elapsed: Duration,
    /// Findings.
    pub diagnostics: Vec<Diagnostic>,
}

/// Data and design shared by every `λ0` for one study and `ι_min`.
#[derive(Debug, Clone)]
pub struct AcerSetup {
    /// Study restricted to retained pairs.
    pub study: Study,
    /// Design built on the retained pairs.
    pub design: DesignMatrix,
    /// Compliance boxes of the full study.
    pub bounds: ComplianceBounds,
    /// Interval for the average compliance rate.
    pub sco: SCoInterval,
    /// `z_{1−α/4}`.
    pub critical_value: f64,
    /// Level.
    pub alpha: f64,
    /// Labels of dropped pairs.
    pub dropped_labels: Vec<usize>,
    /// Findings about dropped pairs.
    pub diagnostics: Vec<Diagnostic>,
}

impl AcerSetup {
    /// Computes boxes, drops pairs with empty boxes, builds the design on the
    /// remaining pairs and the compliance-rate interval.
    pub fn new(study: &Study, iota_min: f64, kind: DesignKind, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let bounds = compliance_box(study, iota_min)?;
        let retained = bounds.retained_pairs();
        let mut diagnostics = Vec::new();
        let dropped_labels: Vec<usize> = bounds
            .dropped_pairs
            .iter()
            .map(|&i| study.pairs()[i].id)
            .collect();
        for &label in &dropped_labels {
            diagnostics.push(Diagnostic::warning(
                "dropped_pair",
                Some(label),
                format!("pair {label} has a cluster with an empty compliance box and is excluded"),
            ));
        }
        let sub = study.subset(&retained);
        if sub.k() < 2 {
            return Err(Error::InvalidArgument(format!(
                "only {} pairs remain after dropping empty compliance boxes",
                sub.k()
            )));
        }
        let design = build_design(&sub, kind)?;
        design.check_leverage()?;
        let sco = sco_confidence_interval(&sub, &design, alpha)?;
        Ok(Self {
            study: sub,
            design,
            sco,
            critical_value: normal_quantile(1.0 - alpha / 4.0),
            alpha,
            dropped_labels,
            diagnostics,
            bounds,
        })
    }

    /// Solver instance for `λ0`.
    pub fn instance(&self, lambda0: f64) -> AcerInstance {
        let retained = self.bounds.retained_pairs();
        let pick = |s: usize| -> Vec<[i64; 2]> {
            retained
                .iter()
                .map(|&i| {
                    let b = self.bounds.boxes[i];
                    if s == 0 {
                        [b[0].lo, b[1].lo]
                    } else {
                        [b[0].hi, b[1].hi]
                    }
                })
                .collect()
        };
        AcerInstance {
            r: self
                .study
                .pairs()
                .iter()
                .map(|p| [p.encouraged().sum_r, p.control().sum_r])
                .collect(),
            n: self
                .study
                .pairs()
                .iter()
                .map(|p| [p.encouraged().n, p.control().n])
                .collect(),
            lo: pick(0),
            hi: pick(1),
            lambda0,
            chi2: self.critical_value * self.critical_value,
            leverage: self.design.leverage.iter().copied().collect(),
            basis: self.design.basis.clone(),
            sco: (self.sco.lower, self.sco.upper),
        }
    }

    /// Runs the test at `λ0`.
    pub fn test(&self, lambda0: f64, opts: &AcerOptions) -> Result<AcerReport> {
        let inst = self.instance(lambda0);
        let problem = MiqcpProblem::from_acer(&inst)?;
        let out = solve(
            &problem,
            SolveMode::SignCertify { threshold: 0.0 },
            opts.solver,
        )?;
        let mut diagnostics = self.diagnostics.clone();
        let decision = match out.status {
            SolveStatus::SignPositive => AcerDecision::Reject,
            SolveStatus::SignNegative => AcerDecision::FailToReject,
            SolveStatus::Infeasible => {
                diagnostics.push(Diagnostic::warning(
                    "vacuous_feasible_set",
                    None,
                    "no compliance vector satisfies the boxes and the compliance-rate interval; \
                     this suggests the assumed iota_min does not fit the data",
                ));
                AcerDecision::FailToReject
            }
            SolveStatus::OptimumFound | SolveStatus::Inconclusive => {
                diagnostics.push(Diagnostic::warning(
                    "solver_inconclusive",
                    None,
                    format!("solver budget exhausted after {} nodes; the sign of min rho is not settled", out.node_count),
                ));
                AcerDecision::Inconclusive
            }
        };
        let delta_min = if opts.delta_min && out.status != SolveStatus::Infeasible {
            match dinkelbach_min_ratio(&inst, opts.solver)? {
                RatioOutcome::Minimum { ratio, .. } => Some(ratio.sqrt()),
                RatioOutcome::Infeasible => None,
                RatioOutcome::Inconclusive => {
                    diagnostics.push(Diagnostic::warning(
                        "delta_min_inconclusive",
                        None,
                        "solver budget exhausted while minimizing the statistic",
                    ));
                    None
                }
            }
        } else {
            None
        };
        Ok(AcerReport {
            lambda0,
            decision,
            critical_value: self.critical_value,
            solver_status: out.status,
            rho_lower: out.best_lower,
            rho_upper: out.best_upper,
            minimizing_co: out.incumbent,
            delta_min,
            sco: self.sco,
            dropped_pairs: self.dropped_labels.clone(),
            k: self.study.k(),
            nodes: out.node_count,
            bound_history: out.history,
            elapsed: out.elapsed,
            diagnostics,
        })
    }

    /// Range of `V̄ + λ0` over the boxes, ignoring the compliance-rate interval.
    pub fn contrast_range(&self) -> (f64, f64) {
        let inst = self.instance(0.0);
        let (mut lo, mut hi) = (0.0, 0.0);
        for p in 0..inst.k() {
            let mut vals = Vec::with_capacity(4);
            for c0 in [inst.lo[p][0], inst.hi[p][0]] {
                for c1 in [inst.lo[p][1], inst.hi[p][1]] {
                    vals.push(inst.r[p][0] / c0 as f64 - inst.r[p][1] / c1 as f64);
                }
            }
            lo += vals.iter().copied().fold(f64::INFINITY, f64::min);
            hi += vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        let k = inst.k() as f64;
        (lo / k, hi / k)
    }

    /// A grid of `points` values over the contrast range widened by its
    /// length on each side.
    pub fn default_grid(&self, points: usize) -> Result<Grid> {
        let (lo, hi) = self.contrast_range();
        let w = (hi - lo).max(1e-6);
        Grid::with_points(lo - w, hi + w, points)
    }
}

/// Tests `λ_ACER = λ0` at level `alpha`.
pub fn test_acer(
    study: &Study,
    lambda0: f64,
    iota_min: f64,
    kind: DesignKind,
    alpha: f64,
    opts: &AcerOptions,
) -> Result<AcerReport> {
    AcerSetup::new(study, iota_min, kind, alpha)?.test(lambda0, opts)
}

/// Confidence set for `λ_ACER` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AcerInterval {
    /// Retained (not rejected) grid points summarized as an interval.
    pub interval: GridInterval,
    /// Grid points whose test was inconclusive; they are retained.
    pub inconclusive: Vec<f64>,
    /// Decisions per grid point.
    pub decisions: Vec<(f64, AcerDecision)>,
    /// Labels of dropped pairs.
    pub dropped_pairs: Vec<usize>,
}

/// Inverts [`test_acer`] over `grid`.
///
/// A level-1 test rejects every value, so `alpha = 1` yields an empty set.
pub fn acer_confidence_interval(
    study: &Study,
    iota_min: f64,
    kind: DesignKind,
    alpha: f64,
    grid: &Grid,
    opts: &AcerOptions,
) -> Result<AcerInterval> {
    check_alpha(alpha)?;
    let setup = AcerSetup::new(study, iota_min, kind, alpha)?;
    if alpha == 1.0 {
        let points = grid.points();
        return Ok(AcerInterval {
            interval: GridInterval::from_mask(grid, &vec![false; points.len()]),
            inconclusive: Vec::new(),
            decisions: points
                .into_iter()
                .map(|p| (p, AcerDecision::Reject))
                .collect(),
            dropped_pairs: setup.dropped_labels,
        });
    }
    invert_on_grid(&setup, grid, opts)
}

/// Inverts the test of a prepared setup over `grid`.
pub fn invert_on_grid(setup: &AcerSetup, grid: &Grid, opts: &AcerOptions) -> Result<AcerInterval> {
    let opts = AcerOptions {
        delta_min: false,
        ..*opts
    };
    let decisions = grid
        .points()
        .into_par_iter()
        .map(|l| Ok((l, setup.test(l, &opts)?.decision)))
        .collect::<Result<Vec<_>>>()?;
    let keep: Vec<bool> = decisions
        .iter()
        .map(|(_, d)| *d != AcerDecision::Reject)
        .collect();
    let mut interval = GridInterval::from_mask(grid, &keep);
    let inconclusive: Vec<f64> = decisions
        .iter()
        .filter(|(_, d)| *d == AcerDecision::Inconclusive)
        .map(|(l, _)| *l)
        .collect();
    if !inconclusive.is_empty() {
        interval.diagnostics.push(Diagnostic::warning(
            "inconclusive_grid_points",
            None,
            format!(
                "{} grid points were inconclusive and are kept in the set",
                inconclusive.len()
            ),
        ));
    }
    Ok(AcerInterval {
        interval,
        inconclusive,
        decisions,
        dropped_pairs: setup.dropped_labels.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Cluster, Pair};
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

    fn study(pairs: Vec<[Cluster; 2]>) -> Study {
        Study::new(
            pairs
                .into_iter()
                .enumerate()
                .map(|(i, clusters)| Pair {
                    id: i + 1,
                    clusters,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn box_examples() {
        let s = study(vec![
            [c(0.9, 10, 7.0, 1.0), c(0.1, 10, 10.0, 1.0)],
            [c(0.9, 10, 7.0, 1.0), c(0.1, 10, 2.0, 1.0)],
        ]);
        let b = compliance_box(&s, 0.2).unwrap();
        assert_eq!(b.boxes[0][0], ClusterBox { lo: 2, hi: 7 });
        assert!(b.boxes[0][1].is_empty());
        assert_eq!(b.dropped_pairs, vec![0]);
        assert_eq!(compliance_box(&s, 0.0001).unwrap().boxes[1][0].lo, 1);
        assert!(compliance_box(&s, 0.0).is_err());
    }

    #[test]
    fn ceiling_ignores_rounding_noise() {
        let s = study(vec![
            [c(0.9, 30, 20.0, 1.0), c(0.1, 30, 2.0, 1.0)],
            [c(0.9, 30, 20.0, 1.0), c(0.1, 30, 2.0, 1.0)],
        ]);
        assert_eq!(compliance_box(&s, 0.1).unwrap().boxes[0][0].lo, 3);
    }

    #[test]
    fn contrast_example() {
        let s = study(vec![
            [c(1.0, 4, 2.0, 3.0), c(0.0, 4, 1.0, 1.0)],
            [c(1.0, 4, 2.0, 3.0), c(0.0, 4, 1.0, 1.0)],
        ]);
        let v = contrasts(&s, &[2, 2, 1, 1], 0.0).unwrap();
        assert_eq!(v, vec![0.5, 0.5]);
    }

    #[test]
    fn constant_rates_give_a_degenerate_interval() {
        let s = study(vec![
            [c(1.0, 10, 6.0, 0.0), c(0.0, 10, 2.0, 0.0)],
            [c(1.0, 20, 12.0, 0.0), c(0.0, 20, 4.0, 0.0)],
            [c(1.0, 5, 3.0, 0.0), c(0.0, 5, 1.0, 0.0)],
        ]);
        let d = build_design(&s, DesignKind::E).unwrap();
        let i = sco_confidence_interval(&s, &d, 0.05).unwrap();
        assert_relative_eq!(i.lower, 0.4, epsilon = 1e-12);
        assert_relative_eq!(i.upper, 0.4, epsilon = 1e-12);
    }
}
