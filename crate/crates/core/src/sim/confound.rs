//! Linear structural world with a cluster-level latent confounder.
//!
//! A latent factor `a_k ~ N(μ, σ²)` drives the observed covariate
//! `x_ki = a_k + e_ki`, the unmeasured confounder `u_ki = a_k + f_ki` and the
//! cluster dose `Z̃_k = γ0 + γ1·a_k + h_k`. Treatment uptake and outcome are
//! `D = η0 + η1·Z̃ + η2·x + η3·u + v` and `R = β·D + β1·x + β2·u + ε`, with
//! `(e, f)` bivariate normal with correlation `ρ` and unit-variance noises
//! `h, v, ε`. Individual-level matched analyses pair units across clusters
//! on `x`; cluster-level analyses pair clusters on `x̄`. Both invert a Huber
//! M-test for the additive effect `β`.

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::{Cluster, UnpairedCluster};
use crate::error::{Error, Result};
use crate::matching::{
    apply_dose_penalty, optimal_nonbipartite_match, rank_robust_mahalanobis, CostMatrix,
    DistanceSpec,
};
use crate::sim::huber::{huber_ci, DEFAULT_HUBER_C};
use crate::sim::replicate_rng;
use crate::stats::mean;

/// Parameters of the confounded world.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfoundDgpConfig {
    /// Number of clusters.
    pub clusters: usize,
    /// Individuals per cluster.
    pub n: usize,
    /// Mean of the latent factor.
    pub mu: f64,
    /// Standard deviation of the latent factor.
    pub sigma: f64,
    /// Standard deviation of the covariate noise `e`.
    pub sigma_e: f64,
    /// Standard deviation of the confounder noise `f`.
    pub sigma_u: f64,
    /// Correlation of `e` and `f`.
    pub rho: f64,
    /// Dose intercept.
    pub gamma0: f64,
    /// Dose loading on the latent factor.
    pub gamma1: f64,
    /// Uptake coefficients `(η0, η1, η2, η3)`.
    pub eta: [f64; 4],
    /// Treatment effect.
    pub beta: f64,
    /// Outcome coefficient of `x`.
    pub beta1: f64,
    /// Outcome coefficient of `u`.
    pub beta2: f64,
    /// Seed of the experiment.
    pub seed: u64,
}

impl Default for ConfoundDgpConfig {
    fn default() -> Self {
        Self {
            clusters: 200,
            n: 10,
            mu: 0.0,
            sigma: 1.0,
            sigma_e: 1.0,
            sigma_u: 1.0,
            rho: 0.5,
            gamma0: 0.0,
            gamma1: 1.0,
            eta: [0.0, 1.0, 1.0, 1.0],
            beta: 1.0,
            beta1: 1.0,
            beta2: 2.0,
            seed: 1,
        }
    }
}

impl ConfoundDgpConfig {
    /// Checks positivity of the scales, `|ρ| ≤ 1` and the sizes.
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma_e > 0.0 && self.sigma_u > 0.0) {
            return Err(Error::InvalidArgument(
                "σ, σ_e and σ_u must be positive".into(),
            ));
        }
        if !(self.rho.abs() <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "|ρ| must be at most 1, got {}",
                self.rho
            )));
        }
        if self.clusters < 2 || self.n == 0 {
            return Err(Error::InvalidArgument(
                "need at least two clusters and nonempty clusters".into(),
            ));
        }
        Ok(())
    }

    /// `γ1·var(a | x) = γ1 / (1/σ_e² + 1/σ²)`, the individual-level confounding
    /// covariance when `ρ = 0`.
    pub fn individual_confounding(&self) -> f64 {
        self.gamma1 / (1.0 / self.sigma_e.powi(2) + 1.0 / self.sigma.powi(2))
    }

    /// `γ1·var(a | x̄) = γ1 / (n/σ_e² + 1/σ²)`, the cluster-level counterpart.
    pub fn cluster_confounding(&self) -> f64 {
        self.gamma1 / (self.n as f64 / self.sigma_e.powi(2) + 1.0 / self.sigma.powi(2))
    }

    /// Exact `cov(Z̃, u | x)` including the `e`–`f` correlation:
    /// `γ1·σ²·(σ_e² − ρσ_eσ_u) / (σ² + σ_e²)`.
    pub fn individual_confounding_exact(&self) -> f64 {
        let (s2, se2) = (self.sigma.powi(2), self.sigma_e.powi(2));
        self.gamma1 * s2 * (se2 - self.rho * self.sigma_e * self.sigma_u) / (s2 + se2)
    }

    /// Exact `cov(Z̃, ū | x̄)`: the individual formula with `σ_e²` and the
    /// `e`–`f` covariance divided by `n`.
    pub fn cluster_confounding_exact(&self) -> f64 {
        let n = self.n as f64;
        let (s2, se2) = (self.sigma.powi(2), self.sigma_e.powi(2) / n);
        self.gamma1 * s2 * (se2 - self.rho * self.sigma_e * self.sigma_u / n) / (s2 + se2)
    }
}

/// One simulated individual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfoundUnit {
    /// Cluster index.
    pub cluster: usize,
    /// Observed covariate.
    pub x: f64,
    /// Unmeasured confounder.
    pub u: f64,
    /// Cluster dose.
    pub z: f64,
    /// Treatment uptake (continuous).
    pub d: f64,
    /// Outcome.
    pub r: f64,
}

/// Cluster means of one simulated cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfoundCluster {
    /// Latent factor.
    pub a: f64,
    /// Dose.
    pub z: f64,
    /// Mean covariate `x̄`.
    pub xbar: f64,
    /// Mean confounder `ū`.
    pub ubar: f64,
    /// Mean uptake `D̄`.
    pub dbar: f64,
    /// Mean outcome `R̄`.
    pub rbar: f64,
}

/// One simulated world at both levels.
#[derive(Debug, Clone)]
pub struct ConfoundWorld {
    /// Individual rows, grouped by cluster.
    pub units: Vec<ConfoundUnit>,
    /// Cluster means.
    pub clusters: Vec<ConfoundCluster>,
    /// Individuals per cluster.
    pub n: usize,
}

impl ConfoundWorld {
    /// Clusters as matching inputs: dose `Z̃`, sums of `D` and `R`, and `x̄`
    /// as the only covariate.
    pub fn unpaired_clusters(&self) -> Vec<UnpairedCluster> {
        self.clusters
            .iter()
            .enumerate()
            .map(|(i, c)| UnpairedCluster {
                id: i + 1,
                cluster: Cluster {
                    dose: c.z,
                    n: self.n,
                    sum_d: c.dbar * self.n as f64,
                    sum_r: c.rbar * self.n as f64,
                    xt: Vec::new(),
                    xbar: vec![c.xbar],
                },
            })
            .collect()
    }
}

/// Draws one world.
pub fn gen_confound_world(cfg: &ConfoundDgpConfig, rng: &mut ChaCha8Rng) -> Result<ConfoundWorld> {
    cfg.validate()?;
    let mut std = || -> f64 { StandardNormal.sample(rng) };
    let corr_tail = (1.0 - cfg.rho * cfg.rho).max(0.0).sqrt();
    let mut units = Vec::with_capacity(cfg.clusters * cfg.n);
    let mut clusters = Vec::with_capacity(cfg.clusters);
    for k in 0..cfg.clusters {
        let a = cfg.mu + cfg.sigma * std();
        let z = cfg.gamma0 + cfg.gamma1 * a + std();
        let (mut sx, mut su, mut sd, mut sr) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..cfg.n {
            let g1 = std();
            let g2 = std();
            let e = cfg.sigma_e * g1;
            let f = cfg.sigma_u * (cfg.rho * g1 + corr_tail * g2);
            let x = a + e;
            let u = a + f;
            let d = cfg.eta[0] + cfg.eta[1] * z + cfg.eta[2] * x + cfg.eta[3] * u + std();
            let r = cfg.beta * d + cfg.beta1 * x + cfg.beta2 * u + std();
            units.push(ConfoundUnit {
                cluster: k,
                x,
                u,
                z,
                d,
                r,
            });
            sx += x;
            su += u;
            sd += d;
            sr += r;
        }
        let n = cfg.n as f64;
        clusters.push(ConfoundCluster {
            a,
            z,
            xbar: sx / n,
            ubar: su / n,
            dbar: sd / n,
            rbar: sr / n,
        });
    }
    Ok(ConfoundWorld {
        units,
        clusters,
        n: cfg.n,
    })
}

/// Level of a matched analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Analysis {
    /// Individuals paired across clusters on `x`.
    Individual,
    /// Clusters paired on `x̄`.
    Cluster,
}

impl Analysis {
    /// Parses `individual` or `cluster`.
    pub fn parse(text: &str) -> Result<Self> {
        match text.trim().to_ascii_lowercase().as_str() {
            "individual" => Ok(Self::Individual),
            "cluster" => Ok(Self::Cluster),
            other => Err(Error::InvalidArgument(format!(
                "unknown analysis level {other:?}"
            ))),
        }
    }

    /// Lower-case name.
    pub fn name(&self) -> &'static str {
        match self {
            Self::Individual => "individual",
            Self::Cluster => "cluster",
        }
    }
}

/// Matching and testing settings of the confounding experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfoundAnalysisOptions {
    /// Huber tuning constant.
    pub huber_c: f64,
    /// Test level.
    pub alpha: f64,
    /// Dose penalty for cluster pairs.
    pub cluster_spec: DistanceSpec,
    /// Dose penalty for individual pairs.
    pub individual_spec: DistanceSpec,
    /// Size of the `x`-sorted blocks within which individuals are matched.
    pub block: usize,
}

/// Default dose-gap threshold of the penalty: pairs whose instrument values
/// differ by less than this are penalized.
pub const DEFAULT_CONFOUND_DOSE_GAP: f64 = 0.6;

impl Default for ConfoundAnalysisOptions {
    fn default() -> Self {
        let spec = DistanceSpec {
            penalty: 10.0,
            dose_gap_threshold: DEFAULT_CONFOUND_DOSE_GAP,
            sinks: 0,
            columns: None,
        };
        Self {
            huber_c: DEFAULT_HUBER_C,
            alpha: 0.05,
            cluster_spec: spec.clone(),
            individual_spec: spec,
            block: 20,
        }
    }
}

/// Encouraged-minus-control differences `(ΔR, ΔD)` of matched pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairDifferences {
    /// Outcome differences.
    pub dr: Vec<f64>,
    /// Uptake differences.
    pub dd: Vec<f64>,
    /// Dose differences (always positive).
    pub dz: Vec<f64>,
}

impl PairDifferences {
    fn push(&mut self, (z1, d1, r1): (f64, f64, f64), (z2, d2, r2): (f64, f64, f64)) {
        // Dose ties have probability zero under the continuous dose law.
        let s = if z1 >= z2 { 1.0 } else { -1.0 };
        self.dr.push(s * (r1 - r2));
        self.dd.push(s * (d1 - d2));
        self.dz.push(s * (z1 - z2));
    }
}

/// Matches clusters on `x̄` with the dose penalty and returns pair differences
/// of the cluster means. An odd cluster out is dropped through one sink.
pub fn cluster_pairs(world: &ConfoundWorld, spec: &DistanceSpec) -> Result<PairDifferences> {
    let c = &world.clusters;
    let x = DMatrix::from_fn(c.len(), 1, |i, _| c[i].xbar);
    let doses: Vec<f64> = c.iter().map(|v| v.z).collect();
    let dist = apply_dose_penalty(&rank_robust_mahalanobis(&x)?, &doses, spec)?;
    let cost = crate::matching::add_sinks(&dist, c.len() % 2)?;
    let m = optimal_nonbipartite_match(&cost)?;
    let mut out = PairDifferences::default();
    for &(i, j) in &m.pairs {
        out.push(
            (c[i].z, c[i].dbar, c[i].rbar),
            (c[j].z, c[j].dbar, c[j].rbar),
        );
    }
    Ok(out)
}

/// Matches individuals on `x` across clusters and returns unit-level pair
/// differences.
///
/// Units are sorted by `x` and cut into consecutive blocks of `block` units;
/// each block is matched exactly with pairs inside one cluster forbidden and
/// sinks for an odd unit or for units that cannot be paired outside their
/// own cluster.
pub fn individual_pairs(
    world: &ConfoundWorld,
    spec: &DistanceSpec,
    block: usize,
) -> Result<PairDifferences> {
    if block < 2 {
        return Err(Error::InvalidArgument(
            "individual matching blocks need at least two units".into(),
        ));
    }
    let units = &world.units;
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.sort_by(|&a, &b| units[a].x.total_cmp(&units[b].x));
    let mut out = PairDifferences::default();
    let chunks: Vec<&[usize]> = order.chunks(block).collect();
    let mut last = chunks.len();
    // Merge a trailing singleton into the previous block.
    let mut tail: Vec<usize> = Vec::new();
    if chunks.len() > 1 && chunks[chunks.len() - 1].len() == 1 {
        tail = chunks[chunks.len() - 2]
            .iter()
            .chain(chunks[chunks.len() - 1])
            .copied()
            .collect();
        last -= 2;
    }
    let mut blocks: Vec<&[usize]> = chunks[..last].to_vec();
    if !tail.is_empty() {
        blocks.push(&tail);
    }
    for ids in blocks {
        let m = ids.len();
        let x = DMatrix::from_fn(m, 1, |i, _| units[ids[i]].x);
        let doses: Vec<f64> = ids.iter().map(|&i| units[i].z).collect();
        let dist = match rank_robust_mahalanobis(&x) {
            Ok(d) => apply_dose_penalty(&d, &doses, spec)?,
            Err(_) => continue,
        };
        let Some(matched) =
            match_block(&dist, |i, j| units[ids[i]].cluster == units[ids[j]].cluster)
        else {
            continue;
        };
        for &(i, j) in &matched.pairs {
            let (a, b) = (&units[ids[i]], &units[ids[j]]);
            out.push((a.z, a.d, a.r), (b.z, b.d, b.r));
        }
    }
    Ok(out)
}

/// Exact matching of one block with `same_cluster` pairs forbidden.
///
/// Sinks absorb an odd unit and, when the block has no feasible perfect
/// matching, as few further units as needed. Sink edges cost more than all
/// real edges together, so units are dropped only when unavoidable.
fn match_block(
    dist: &DMatrix<f64>,
    same_cluster: impl Fn(usize, usize) -> bool,
) -> Option<crate::matching::MatchResult> {
    let m = dist.nrows();
    let drop_cost = dist.iter().sum::<f64>() + 1.0;
    let sentinel = 4.0 * drop_cost;
    let mut sinks = m % 2;
    while sinks <= m {
        let size = m + sinks;
        let full = DMatrix::from_fn(size, size, |i, j| {
            if i == j {
                0.0
            } else if i >= m && j >= m {
                sentinel
            } else if i >= m || j >= m {
                drop_cost
            } else if same_cluster(i, j) {
                sentinel
            } else {
                dist[(i, j)]
            }
        });
        let cost = CostMatrix {
            dist: full,
            n_real: m,
            sentinel: Some(sentinel),
        };
        if let Ok(matched) = optimal_nonbipartite_match(&cost) {
            return Some(matched);
        }
        sinks += 2;
    }
    None
}

/// Huber M-test confidence interval of one analysis of one world.
pub fn analyse(
    world: &ConfoundWorld,
    analysis: Analysis,
    opts: &ConfoundAnalysisOptions,
) -> Result<(f64, f64)> {
    let diffs = match analysis {
        Analysis::Cluster => cluster_pairs(world, &opts.cluster_spec)?,
        Analysis::Individual => individual_pairs(world, &opts.individual_spec, opts.block)?,
    };
    huber_ci(&diffs.dr, &diffs.dd, opts.huber_c, opts.alpha)
}

/// Summary of a coverage experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    /// Analysis level.
    pub analysis: Analysis,
    /// Number of clusters.
    pub clusters: usize,
    /// Individuals per cluster.
    pub n: usize,
    /// Replicates with a finite interval.
    pub replicates: usize,
    /// Replicates whose interval could not be computed.
    pub failures: usize,
    /// Mean lower end point.
    pub ci_left: f64,
    /// Mean upper end point.
    pub ci_right: f64,
    /// Mean length.
    pub ci_length: f64,
    /// Mean midpoint.
    pub midpoint: f64,
    /// Fraction of intervals covering the true `β`.
    pub coverage: f64,
}

impl CoverageRow {
    fn from_intervals(
        analysis: Analysis,
        cfg: &ConfoundDgpConfig,
        cis: &[Result<(f64, f64)>],
    ) -> Self {
        let ok: Vec<(f64, f64)> = cis
            .iter()
            .filter_map(|c| c.as_ref().ok().copied())
            .collect();
        let lo: Vec<f64> = ok.iter().map(|c| c.0).collect();
        let hi: Vec<f64> = ok.iter().map(|c| c.1).collect();
        let covered = ok
            .iter()
            .filter(|c| c.0 <= cfg.beta && cfg.beta <= c.1)
            .count();
        Self {
            analysis,
            clusters: cfg.clusters,
            n: cfg.n,
            replicates: ok.len(),
            failures: cis.len() - ok.len(),
            ci_left: mean(&lo),
            ci_right: mean(&hi),
            ci_length: mean(&hi) - mean(&lo),
            midpoint: 0.5 * (mean(&lo) + mean(&hi)),
            coverage: covered as f64 / ok.len().max(1) as f64,
        }
    }
}

/// Runs `replicates` worlds and summarises the intervals of each requested
/// analysis; both levels see the same worlds.
pub fn run_coverage_experiments(
    cfg: &ConfoundDgpConfig,
    replicates: usize,
    analyses: &[Analysis],
    opts: &ConfoundAnalysisOptions,
) -> Result<Vec<CoverageRow>> {
    cfg.validate()?;
    if replicates < 1 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    let per_rep: Vec<Vec<Result<(f64, f64)>>> = (0..replicates as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(cfg.seed, rep);
            match gen_confound_world(cfg, &mut rng) {
                Ok(world) => analyses.iter().map(|&a| analyse(&world, a, opts)).collect(),
                Err(e) => analyses
                    .iter()
                    .map(|_| Err(Error::InvalidArgument(e.to_string())))
                    .collect(),
            }
        })
        .collect();
    Ok(analyses
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let cis: Vec<Result<(f64, f64)>> = per_rep
                .iter()
                .map(|r| {
                    r[i].as_ref()
                        .map(|v| *v)
                        .map_err(|e| Error::InvalidArgument(e.to_string()))
                })
                .collect();
            CoverageRow::from_intervals(a, cfg, &cis)
        })
        .collect())
}

/// Coverage experiment for a single analysis level; requires at least 100
/// replicates.
pub fn run_coverage_experiment(
    cfg: &ConfoundDgpConfig,
    replicates: usize,
    analysis: Analysis,
    opts: &ConfoundAnalysisOptions,
) -> Result<CoverageRow> {
    if replicates < 100 {
        return Err(Error::InvalidArgument(format!(
            "coverage experiments need at least 100 replicates, got {replicates}"
        )));
    }
    Ok(run_coverage_experiments(cfg, replicates, &[analysis], opts)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn residual_cov(x: &[f64], y: &[f64], w: &[f64]) -> f64 {
        // Covariance of the residuals of y and w after a simple regression on x.
        let resid = |v: &[f64]| {
            let (mx, mv) = (mean(x), mean(v));
            let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
            let sxv: f64 = x.iter().zip(v).map(|(a, b)| (a - mx) * (b - mv)).sum();
            let slope = sxv / sxx;
            x.iter()
                .zip(v)
                .map(|(a, b)| b - mv - slope * (a - mx))
                .collect::<Vec<f64>>()
        };
        let (ry, rw) = (resid(y), resid(w));
        ry.iter().zip(&rw).map(|(a, b)| a * b).sum::<f64>() / (x.len() - 2) as f64
    }

    #[test]
    fn displayed_confounding_covariances() {
        let cfg = ConfoundDgpConfig {
            n: 50,
            ..ConfoundDgpConfig::default()
        };
        assert_relative_eq!(cfg.individual_confounding(), 0.5, max_relative = 1e-15);
        assert_relative_eq!(cfg.cluster_confounding(), 1.0 / 51.0, max_relative = 1e-15);
        let uncorrelated = ConfoundDgpConfig {
            rho: 0.0,
            ..cfg.clone()
        };
        assert_relative_eq!(
            uncorrelated.cluster_confounding_exact(),
            uncorrelated.cluster_confounding(),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            cfg.individual_confounding_exact(),
            0.25,
            max_relative = 1e-15
        );
    }

    #[test]
    fn monte_carlo_cluster_covariance_matches_formula() {
        for rho in [0.0, 0.5] {
            let cfg = ConfoundDgpConfig {
                clusters: 20_000,
                n: 50,
                rho,
                ..ConfoundDgpConfig::default()
            };
            let w = gen_confound_world(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let xb: Vec<f64> = w.clusters.iter().map(|c| c.xbar).collect();
            let z: Vec<f64> = w.clusters.iter().map(|c| c.z).collect();
            let ub: Vec<f64> = w.clusters.iter().map(|c| c.ubar).collect();
            let a: Vec<f64> = w.clusters.iter().map(|c| c.a).collect();
            let cov = residual_cov(&xb, &z, &ub);
            assert!(
                (cov - cfg.cluster_confounding_exact()).abs() < 0.004,
                "rho {rho}: {cov}"
            );
            // γ1·var(a | x̄) holds for any ρ.
            let cov_a = residual_cov(&xb, &z, &a);
            assert!(
                (cov_a - cfg.cluster_confounding()).abs() < 0.004,
                "rho {rho}: {cov_a}"
            );
        }
    }

    #[test]
    fn generator_is_reproducible() {
        let cfg = ConfoundDgpConfig {
            clusters: 6,
            n: 3,
            ..ConfoundDgpConfig::default()
        };
        let a = gen_confound_world(&cfg, &mut replicate_rng(9, 2)).unwrap();
        let b = gen_confound_world(&cfg, &mut replicate_rng(9, 2)).unwrap();
        assert_eq!(a.units, b.units);
        assert_eq!(a.clusters, b.clusters);
    }

    #[test]
    fn individual_pairs_never_share_a_cluster() {
        let cfg = ConfoundDgpConfig {
            clusters: 12,
            n: 5,
            ..ConfoundDgpConfig::default()
        };
        let w = gen_confound_world(&cfg, &mut replicate_rng(1, 0)).unwrap();
        let d = individual_pairs(&w, &DistanceSpec::with_penalty(0.0), 7).unwrap();
        assert!(d.dz.iter().all(|z| *z > 0.0));
        assert!(d.dr.len() >= 25);
    }
}
