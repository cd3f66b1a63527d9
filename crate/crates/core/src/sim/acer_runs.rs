//! Size and run-time experiments for the ACER test on the compliance world.

use std::time::Instant;

use rayon::prelude::*;

use crate::acer::{test_acer, AcerDecision, AcerOptions};
use crate::design::DesignKind;
use crate::error::{Error, Result};
use crate::miqcp::SolveStatus;
use crate::sim::acer_dgp::{gen_acer_world, AcerDgpConfig};
use crate::sim::replicate_rng;
use crate::stats::quantile;

/// Outcome of one replicate of an ACER experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct AcerRun {
    /// Replicate index.
    pub replicate: u64,
    /// True average cluster effect ratio of the world.
    pub lambda_acer: f64,
    /// Tested value.
    pub lambda0: f64,
    /// Test decision.
    pub decision: AcerDecision,
    /// Solver status.
    pub status: SolveStatus,
    /// Branch-and-bound nodes.
    pub nodes: usize,
    /// Wall time of the test in seconds.
    pub seconds: f64,
    /// Multinomial redraws needed to build the world.
    pub redraws: usize,
}

/// Settings shared by the size and timing experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct AcerExperiment {
    /// World generator settings; `seed` seeds the experiment.
    pub dgp: AcerDgpConfig,
    /// Assumed compliance floor; `None` uses the floor the generator guarantees.
    pub iota_min: Option<f64>,
    /// Test level.
    pub alpha: f64,
    /// Tested value minus the true `λ_ACER`.
    pub lambda_offset: f64,
    /// Solver and reporting options.
    pub options: AcerOptions,
}

impl AcerExperiment {
    /// Experiment testing the true value at level 0.05 with the guaranteed floor.
    pub fn new(dgp: AcerDgpConfig) -> Self {
        Self {
            dgp,
            iota_min: None,
            alpha: 0.05,
            lambda_offset: 0.0,
            options: AcerOptions::default(),
        }
    }

    fn iota(&self) -> f64 {
        self.iota_min.unwrap_or_else(|| self.dgp.iota_floor())
    }
}

/// Runs replicates `0..replicates` of `exp`.
pub fn run_acer_replicates(exp: &AcerExperiment, replicates: usize) -> Result<Vec<AcerRun>> {
    exp.dgp.validate()?;
    (0..replicates as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(exp.dgp.seed, rep);
            let world = gen_acer_world(&exp.dgp, &mut rng)?;
            let lambda0 = world.lambda_acer + exp.lambda_offset;
            let start = Instant::now();
            let report = test_acer(
                &world.study,
                lambda0,
                exp.iota(),
                DesignKind::E,
                exp.alpha,
                &exp.options,
            )?;
            Ok(AcerRun {
                replicate: rep,
                lambda_acer: world.lambda_acer,
                lambda0,
                decision: report.decision,
                status: report.solver_status,
                nodes: report.nodes,
                seconds: start.elapsed().as_secs_f64(),
                redraws: world.redraws,
            })
        })
        .collect()
}

/// Rejection summary of a size experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeRow {
    /// Pairs per world.
    pub k: usize,
    /// Replicates run.
    pub replicates: usize,
    /// Replicates rejecting.
    pub rejections: usize,
    /// Replicates the solver left undecided.
    pub inconclusive: usize,
    /// Rejections over replicates.
    pub rejection_rate: f64,
    /// Total multinomial redraws.
    pub redraws: usize,
}

/// Empirical rejection rate of the ACER test at the true value.
pub fn run_size_experiment(exp: &AcerExperiment, replicates: usize) -> Result<SizeRow> {
    if replicates == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    let runs = run_acer_replicates(exp, replicates)?;
    let rejections = runs
        .iter()
        .filter(|r| r.decision == AcerDecision::Reject)
        .count();
    Ok(SizeRow {
        k: exp.dgp.k,
        replicates,
        rejections,
        inconclusive: runs
            .iter()
            .filter(|r| r.decision == AcerDecision::Inconclusive)
            .count(),
        rejection_rate: rejections as f64 / replicates as f64,
        redraws: runs.iter().map(|r| r.redraws).sum(),
    })
}

/// Run-time summary for one `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    /// Pairs per world.
    pub k: usize,
    /// Replicates run.
    pub replicates: usize,
    /// Median wall time in seconds.
    pub median_seconds: f64,
    /// First quartile of wall time.
    pub q1_seconds: f64,
    /// Third quartile of wall time.
    pub q3_seconds: f64,
    /// Median node count.
    pub median_nodes: f64,
    /// Replicates the solver left undecided.
    pub inconclusive: usize,
}

/// Median and interquartile range of the ACER test's wall time for each `K`
/// in `ks`.
pub fn run_timing(exp: &AcerExperiment, ks: &[usize], replicates: usize) -> Result<Vec<TimingRow>> {
    if replicates == 0 || ks.is_empty() {
        return Err(Error::InvalidArgument(
            "timing needs at least one K and one replicate".into(),
        ));
    }
    ks.iter()
        .map(|&k| {
            let mut e = exp.clone();
            e.dgp.k = k;
            let runs = run_acer_replicates(&e, replicates)?;
            let secs: Vec<f64> = runs.iter().map(|r| r.seconds).collect();
            let nodes: Vec<f64> = runs.iter().map(|r| r.nodes as f64).collect();
            Ok(TimingRow {
                k,
                replicates,
                median_seconds: quantile(&secs, 0.5),
                q1_seconds: quantile(&secs, 0.25),
                q3_seconds: quantile(&secs, 0.75),
                median_nodes: quantile(&nodes, 0.5),
                inconclusive: runs
                    .iter()
                    .filter(|r| r.decision == AcerDecision::Inconclusive)
                    .count(),
            })
        })
        .collect()
}
