//! Synthetic worlds and simulation experiments.
//!
//! Two generators are provided: a compliance-stratum world used to check the
//! size and run time of the ACER test ([`acer_dgp`]), and a linear structural
//! world with a cluster-level latent confounder used to compare individual-
//! and cluster-level matched analyses ([`confound`]). Replicates draw from
//! independent ChaCha streams derived from one seed, so results do not depend
//! on thread scheduling.

pub mod acer_dgp;
pub mod acer_runs;
pub mod config;
pub mod confound;
pub mod huber;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use acer_dgp::{gen_acer_world, AcerDgpConfig, AcerWorld};
pub use acer_runs::{
    run_acer_replicates, run_size_experiment, run_timing, AcerExperiment, AcerRun, SizeRow,
    TimingRow,
};
pub use confound::{
    gen_confound_world, run_coverage_experiment, run_coverage_experiments, Analysis,
    ConfoundAnalysisOptions, ConfoundDgpConfig, ConfoundWorld, CoverageRow,
    DEFAULT_CONFOUND_DOSE_GAP,
};

/// Random stream for replicate `rep` of an experiment seeded with `seed`.
pub fn replicate_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}
