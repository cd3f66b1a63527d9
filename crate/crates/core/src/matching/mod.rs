//! Optimal nonbipartite matching of clusters.
//!
//! Clusters are paired so that paired clusters look alike on covariates but
//! differ in dose. The distance is a rank-based robust Mahalanobis distance;
//! pairs whose dose gap falls below a threshold receive an additive penalty;
//! optional sink units absorb clusters without a good partner. The matching is
//! an exact minimum-weight perfect matching.

pub mod blossom;

use nalgebra::DMatrix;

use crate::data::{Cluster, Pair, Study, UnpairedCluster};
use crate::error::{Error, Result};
use crate::stats::{average_ranks, mean, sample_variance, welch_t_test};

/// Distance construction settings.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSpec {
    /// Penalty added to pairs whose dose gap is below `dose_gap_threshold`.
    pub penalty: f64,
    /// Dose gap below which the penalty applies.
    pub dose_gap_threshold: f64,
    /// Number of sink units.
    pub sinks: usize,
    /// Covariate columns to use (indices into `xt ++ xbar`); `None` uses all.
    pub columns: Option<Vec<usize>>,
}

impl DistanceSpec {
    /// Default dose-gap threshold.
    pub const DEFAULT_DOSE_GAP: f64 = 0.2;

    /// Spec with the given penalty, the default threshold and no sinks.
    pub fn with_penalty(penalty: f64) -> Self {
        Self {
            penalty,
            dose_gap_threshold: Self::DEFAULT_DOSE_GAP,
            sinks: 0,
            columns: None,
        }
    }

    fn check(&self, units: usize) -> Result<()> {
        if !(self.penalty >= 0.0) || !(self.dose_gap_threshold >= 0.0) {
            return Err(Error::InvalidArgument(
                "penalty and dose-gap threshold must be nonnegative".into(),
            ));
        }
        if self.sinks >= units || !(units - self.sinks).is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "{} sinks with {} clusters: need sinks < clusters and an even number of matched clusters",
                self.sinks, units
            )));
        }
        Ok(())
    }
}

/// Square cost matrix ready for matching.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    /// Costs; rows and columns `n_real..` are sinks.
    pub dist: DMatrix<f64>,
    /// Number of real units.
    pub n_real: usize,
    /// Entries greater than or equal to this value are forbidden edges.
    pub sentinel: Option<f64>,
}

impl CostMatrix {
    /// A cost matrix without sinks or forbidden edges.
    pub fn plain(dist: DMatrix<f64>) -> Self {
        let n_real = dist.nrows();
        Self {
            dist,
            n_real,
            sentinel: None,
        }
    }

    fn forbidden(&self, i: usize, j: usize) -> bool {
        self.sentinel.is_some_and(|s| self.dist[(i, j)] >= s)
    }
}

/// Result of an optimal matching.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Matched real units `(i, j)` with `i < j`, sorted.
    pub pairs: Vec<(usize, usize)>,
    /// Real units matched to sinks, sorted.
    pub dropped: Vec<usize>,
    /// Total distance over `pairs` (sink edges excluded).
    pub total_distance: f64,
}

/// Rank-based robust Mahalanobis distance between rows of `covariates`.
///
/// Each column is replaced by its average ranks; the distance is
/// `sqrt((r_i − r_j)ᵀ S⁻¹ (r_i − r_j))` with `S` the sample covariance of the
/// rank matrix.
pub fn rank_robust_mahalanobis(covariates: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = covariates.shape();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two units".into()));
    }
    if p == 0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let mut ranks = DMatrix::zeros(n, p);
    for c in 0..p {
        let col: Vec<f64> = covariates.column(c).iter().copied().collect();
        for (r, v) in average_ranks(&col).into_iter().enumerate() {
            ranks[(r, c)] = v;
        }
    }
    let centered = {
        let mut m = ranks.clone();
        for c in 0..p {
            let mu = m.column(c).mean();
            m.column_mut(c).add_scalar_mut(-mu);
        }
        m
    };
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let offending = dependent_columns(&centered);
    if !offending.is_empty() {
        return Err(Error::SingularCovariance(offending));
    }
    let chol = nalgebra::Cholesky::new(cov)
        .ok_or_else(|| Error::SingularCovariance(dependent_columns(&centered)))?;
    // Whitened ranks: rows w_i = L⁻¹ r_i, so d(i,j) = ‖w_i − w_j‖.
    let white = chol
        .l()
        .solve_lower_triangular(&ranks.transpose())
        .expect("Cholesky factor is nonsingular");
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = (white.column(i) - white.column(j)).norm();
            d[(i, j)] = dist;
            d[(j, i)] = dist;
        }
    }
    Ok(d)
}

/// Columns that are constant or numerically dependent on earlier columns.
fn dependent_columns(centered: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<nalgebra::DVector<f64>> = Vec::new();
    let mut out = Vec::new();
    for c in 0..centered.ncols() {
        let col = centered.column(c).into_owned();
        let norm0 = col.norm();
        let mut r = col;
        for b in &basis {
            let proj = b.dot(&r);
            r -= b * proj;
        }
        if norm0 == 0.0 || r.norm() <= 1e-10 * norm0 {
            out.push(c);
        } else {
            let nr = r.norm();
            basis.push(r / nr);
        }
    }
    out
}

/// Adds `spec.penalty` to every off-diagonal entry whose dose gap is below
/// `spec.dose_gap_threshold`.
pub fn apply_dose_penalty(
    dist: &DMatrix<f64>,
    doses: &[f64],
    spec: &DistanceSpec,
) -> Result<DMatrix<f64>> {
    let n = dist.nrows();
    if dist.ncols() != n || doses.len() != n {
        return Err(Error::InvalidArgument(
            "distance matrix and doses must agree in size".into(),
        ));
    }
    let mut out = dist.clone();
    if spec.penalty == 0.0 {
        return Ok(out);
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && (doses[i] - doses[j]).abs() < spec.dose_gap_threshold {
                out[(i, j)] += spec.penalty;
            }
        }
    }
    Ok(out)
}

/// Appends `m` sink units: zero cost to every real unit, and a forbidden
/// sentinel (sum of all finite entries plus one) between sinks.
pub fn add_sinks(dist: &DMatrix<f64>, m: usize) -> Result<CostMatrix> {
    let n = dist.nrows();
    if !(n + m).is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "{n} units plus {m} sinks is odd"
        )));
    }
    if m == 0 {
        return Ok(CostMatrix::plain(dist.clone()));
    }
    let sentinel = dist.iter().filter(|v| v.is_finite()).sum::<f64>() + 1.0;
    let mut out = DMatrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(dist);
    for i in n..n + m {
        for j in n..n + m {
            if i != j {
                out[(i, j)] = sentinel;
            }
        }
    }
    Ok(CostMatrix {
        dist: out,
        n_real: n,
        sentinel: Some(sentinel),
    })
}

/// Exact minimum-weight perfect matching on `cost`.
///
/// Forbidden edges (entries at or above the sentinel) are excluded from the
/// graph. Costs are scaled to integers with 2⁻⁴⁰ relative resolution before
/// running the blossom algorithm; the reported total is recomputed from the
/// original real-valued costs.
pub fn optimal_nonbipartite_match(cost: &CostMatrix) -> Result<MatchResult> {
    let n = cost.dist.nrows();
    if cost.dist.ncols() != n || !n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "matching needs an even square matrix, got {n}x{}",
            cost.dist.ncols()
        )));
    }
    let mut maxd: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            if !cost.forbidden(i, j) {
                let d = cost.dist[(i, j)];
                if !(d >= 0.0) || !d.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "cost ({i},{j}) = {d} is not a finite nonnegative number"
                    )));
                }
                maxd = maxd.max(d);
            }
        }
    }
    let scale = if maxd > 0.0 {
        (1u64 << 40) as f64 / maxd
    } else {
        1.0
    };
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            if !cost.forbidden(i, j) {
                let w = ((maxd - cost.dist[(i, j)]) * scale).round() as i64 + 1;
                edges.push((i, j, w));
            }
        }
    }
    let mate = blossom::max_weight_matching(n, &edges, true);
    if mate.iter().any(Option::is_none) {
        return Err(Error::NoPerfectMatching);
    }
    let mut pairs = Vec::new();
    let mut dropped = Vec::new();
    for (i, m) in mate.iter().enumerate().take(cost.n_real) {
        let j = m.expect("perfect matching");
        if j >= cost.n_real {
            dropped.push(i);
        } else if i < j {
            pairs.push((i, j));
        }
    }
    let total_distance = pairs.iter().map(|&(i, j)| cost.dist[(i, j)]).sum();
    Ok(MatchResult {
        pairs,
        dropped,
        total_distance,
    })
}

/// Covariate matrix `xt ++ xbar` (optionally restricted to `columns`).
fn covariate_matrix(units: &[UnpairedCluster], columns: Option<&[usize]>) -> Result<DMatrix<f64>> {
    let full: Vec<Vec<f64>> = units
        .iter()
        .map(|u| {
            u.cluster
                .xt
                .iter()
                .chain(&u.cluster.xbar)
                .copied()
                .collect()
        })
        .collect();
    let p = full.first().map_or(0, Vec::len);
    if full.iter().any(|r| r.len() != p) {
        return Err(Error::Validation(
            "clusters have different covariate lengths".into(),
        ));
    }
    let cols: Vec<usize> = match columns {
        Some(c) => c.to_vec(),
        None => (0..p).collect(),
    };
    if let Some(&bad) = cols.iter().find(|&&c| c >= p) {
        return Err(Error::InvalidArgument(format!(
            "covariate column {bad} out of range (have {p})"
        )));
    }
    Ok(DMatrix::from_fn(units.len(), cols.len(), |i, c| {
        full[i][cols[c]]
    }))
}

/// Matches unpaired clusters end to end and returns the paired study.
///
/// Pair labels are assigned 1, 2, ... in order of each pair's first unit;
/// the cluster listed first in the input becomes slot 1.
pub fn match_clusters(
    units: &[UnpairedCluster],
    spec: &DistanceSpec,
) -> Result<(Study, MatchResult)> {
    spec.check(units.len())?;
    let x = covariate_matrix(units, spec.columns.as_deref())?;
    let base = rank_robust_mahalanobis(&x)?;
    let doses: Vec<f64> = units.iter().map(|u| u.cluster.dose).collect();
    let penalised = apply_dose_penalty(&base, &doses, spec)?;
    let cost = add_sinks(&penalised, spec.sinks)?;
    let result = optimal_nonbipartite_match(&cost)?;
    let pairs: Vec<Pair> = result
        .pairs
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| Pair {
            id: k + 1,
            clusters: [units[i].cluster.clone(), units[j].cluster.clone()],
        })
        .collect();
    Ok((Study::new(pairs)?, result))
}

/// One row of a covariate balance table.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceRow {
    /// Covariate name.
    pub name: String,
    /// Mean over control clusters.
    pub mean_control: f64,
    /// Mean over encouraged clusters.
    pub mean_encouraged: f64,
    /// (encouraged − control) / pooled SD, with pooled SD
    /// `sqrt((s²_enc + s²_ctl) / 2)`.
    pub standardized_difference: f64,
    /// Welch two-sample t-test p-value.
    pub t_test_p_value: f64,
    /// True when the pooled SD is zero and the standardized difference was set to 0.
    pub zero_pooled_sd: bool,
}

fn balance_row(name: String, ctl: &[f64], enc: &[f64]) -> BalanceRow {
    let (mc, me) = (mean(ctl), mean(enc));
    let pooled = ((sample_variance(ctl) + sample_variance(enc)) / 2.0).sqrt();
    let zero = !(pooled > 0.0);
    BalanceRow {
        name,
        mean_control: mc,
        mean_encouraged: me,
        standardized_difference: if zero { 0.0 } else { (me - mc) / pooled },
        t_test_p_value: welch_t_test(enc, ctl),
        zero_pooled_sd: zero,
    }
}

/// Balance of dose and every covariate between encouraged and control clusters.
pub fn balance_table(study: &Study) -> Result<Vec<BalanceRow>> {
    if study.k() < 2 {
        return Err(Error::InvalidArgument(
            "balance needs at least two pairs".into(),
        ));
    }
    let column = |f: &dyn Fn(&Cluster) -> f64| -> (Vec<f64>, Vec<f64>) {
        let ctl = study.pairs().iter().map(|p| f(p.control())).collect();
        let enc = study.pairs().iter().map(|p| f(p.encouraged())).collect();
        (ctl, enc)
    };
    let mut rows = Vec::new();
    let (c, e) = column(&|cl| cl.dose);
    rows.push(balance_row("dose".into(), &c, &e));
    for i in 0..study.n_cluster_covariates() {
        let (c, e) = column(&|cl| cl.xt[i]);
        rows.push(balance_row(format!("xt{}", i + 1), &c, &e));
    }
    for i in 0..study.n_individual_covariates() {
        let (c, e) = column(&|cl| cl.xbar[i]);
        rows.push(balance_row(format!("xbar{}", i + 1), &c, &e));
    }
    Ok(rows)
}

/// Writes a balance table as CSV.
pub fn write_balance_csv<W: std::io::Write>(writer: W, rows: &[BalanceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "covariate",
        "mean_control",
        "mean_encouraged",
        "std_diff",
        "p_value",
    ])?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.mean_control.to_string(),
            r.mean_encouraged.to_string(),
            r.standardized_difference.to_string(),
            r.t_test_p_value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn one_dimensional_rank_distance() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let d = rank_robust_mahalanobis(&x).unwrap();
        assert_relative_eq!(d[(0, 2)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(d[(0, 1)], 1.0, epsilon = 1e-12);
        assert_eq!(d[(1, 1)], 0.0);
    }

    #[test]
    fn identical_units_have_zero_distance() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 5.0, 1.0, 5.0, 2.0, 0.0, 3.0, 7.0]);
        let d = rank_robust_mahalanobis(&x).unwrap();
        assert_eq!(d[(0, 1)], 0.0);
    }

    #[test]
    fn constant_column_is_reported() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        assert!(
            matches!(rank_robust_mahalanobis(&x), Err(Error::SingularCovariance(c)) if c == vec![1])
        );
    }

    #[test]
    fn dose_penalty_cases() {
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 2.0, 0.0]);
        let spec = DistanceSpec::with_penalty(1e4);
        let out = apply_dose_penalty(&d, &[0.30, 0.40], &spec).unwrap();
        assert_eq!(out[(0, 1)], 10002.0);
        assert_eq!(out[(0, 0)], 0.0);
        let out = apply_dose_penalty(&d, &[0.29, 0.84], &spec).unwrap();
        assert_eq!(out, d);
        let out = apply_dose_penalty(&d, &[0.30, 0.40], &DistanceSpec::with_penalty(0.0)).unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn sinks_construction() {
        let d = DMatrix::from_element(4, 4, 1.0) - DMatrix::identity(4, 4);
        assert_eq!(add_sinks(&d, 0).unwrap().dist, d);
        let c = add_sinks(&d, 2).unwrap();
        assert_eq!(c.dist.shape(), (6, 6));
        assert_eq!(c.dist[(0, 4)], 0.0);
        assert_eq!(c.dist[(5, 3)], 0.0);
        assert_eq!(c.dist[(4, 5)], 13.0);
        assert_eq!(c.sentinel, Some(13.0));
        assert!(add_sinks(&d, 1).is_err());
    }

    #[test]
    fn four_unit_example() {
        let mut d = DMatrix::from_element(4, 4, 10.0);
        for i in 0..4 {
            d[(i, i)] = 0.0;
        }
        d[(0, 1)] = 1.0;
        d[(1, 0)] = 1.0;
        d[(2, 3)] = 1.0;
        d[(3, 2)] = 1.0;
        let r = optimal_nonbipartite_match(&CostMatrix::plain(d)).unwrap();
        assert_eq!(r.pairs, vec![(0, 1), (2, 3)]);
        assert_eq!(r.total_distance, 2.0);
    }

    #[test]
    fn two_units_single_pair() {
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 3.5, 3.5, 0.0]);
        let r = optimal_nonbipartite_match(&CostMatrix::plain(d)).unwrap();
        assert_eq!((r.pairs, r.total_distance), (vec![(0, 1)], 3.5));
    }

    #[test]
    fn sinks_drop_the_outlier() {
        // Units 0,1,2 close together, unit 3 far away; 2 sinks remove two units.
        let pos: [f64; 4] = [0.0, 0.1, 0.3, 50.0];
        let d = DMatrix::from_fn(4, 4, |i, j| (pos[i] - pos[j]).abs());
        let c = add_sinks(&d, 2).unwrap();
        let r = optimal_nonbipartite_match(&c).unwrap();
        assert_eq!(r.pairs, vec![(0, 1)]);
        assert_eq!(r.dropped, vec![2, 3]);
    }

    #[test]
    fn balance_hand_computation() {
        let mk = |dose, x| Cluster {
            dose,
            n: 1,
            sum_d: 0.0,
            sum_r: 0.0,
            xt: vec![x],
            xbar: vec![],
        };
        let pairs = (0..3)
            .map(|k| Pair {
                id: k + 1,
                clusters: [mk(0.1, 1.0 + k as f64), mk(0.9, 2.0 + k as f64)],
            })
            .collect();
        let rows = balance_table(&Study::new(pairs).unwrap()).unwrap();
        assert_relative_eq!(rows[1].standardized_difference, 1.0, epsilon = 1e-12);
        assert_eq!(rows[1].mean_control, 2.0);
    }

    #[test]
    fn balance_identical_groups() {
        let mk = |dose, x| Cluster {
            dose,
            n: 1,
            sum_d: 0.0,
            sum_r: 0.0,
            xt: vec![x],
            xbar: vec![],
        };
        let pairs = (0..3)
            .map(|k| Pair {
                id: k + 1,
                clusters: [mk(0.1, k as f64), mk(0.9, k as f64)],
            })
            .collect();
        let rows = balance_table(&Study::new(pairs).unwrap()).unwrap();
        assert_eq!(rows[1].standardized_difference, 0.0);
        assert_eq!(rows[1].t_test_p_value, 1.0);
    }
}
