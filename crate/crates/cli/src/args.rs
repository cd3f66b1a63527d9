//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Matched cluster-level instrumental-variable designs: matching,
/// randomization tests, confidence sets and simulations.
#[derive(Debug, Parser)]
#[command(name = "clusteriv", version, about)]
pub struct Cli {
    /// Subcommand to run.
    #[command(subcommand)]
    pub command: Command,
}

/// Top-level subcommands.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pair unmatched clusters by optimal nonbipartite matching.
    Match(MatchArgs),
    /// Covariate balance table of a matched study.
    Balance(BalanceArgs),
    /// Hypothesis tests.
    Test {
        /// Test family.
        #[command(subcommand)]
        which: Family,
    },
    /// Confidence sets by test inversion.
    Ci {
        /// Test family.
        #[command(subcommand)]
        which: CiFamily,
    },
    /// Simulation experiments.
    Simulate {
        /// Experiment.
        #[command(subcommand)]
        which: Experiment,
    },
    /// Solve a dumped ACER optimization problem.
    SolveDump(SolveDumpArgs),
}

/// Granularity of the input CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Level {
    /// `pair,slot,dose,n,sum_d,sum_r,xt..,xbar..`
    Cluster,
    /// `pair,slot,dose,treated,outcome,x..`
    Individual,
}

/// Matched-study input.
#[derive(Debug, Args)]
pub struct InputArgs {
    /// Input CSV.
    #[arg(long = "in", value_name = "CSV")]
    pub input: PathBuf,
    /// Input granularity.
    #[arg(long, value_enum, default_value_t = Level::Cluster)]
    pub level: Level,
    /// Pairs with a cluster smaller than this are removed.
    #[arg(long, default_value_t = 1)]
    pub min_cluster_size: usize,
}

/// `match` flags.
#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Unmatched clusters, header `cluster,dose,n,sum_d,sum_r,xt..,xbar..`.
    #[arg(long = "in", value_name = "CSV")]
    pub input: PathBuf,
    /// Matched-pair CSV to write.
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
    /// Balance table CSV to write.
    #[arg(long, value_name = "CSV")]
    pub balance: Option<PathBuf>,
    /// JSON report (standard output when absent).
    #[arg(long, value_name = "JSON")]
    pub report: Option<PathBuf>,
    /// Penalty added to pairs with a small dose gap.
    #[arg(long, default_value_t = 0.0)]
    pub penalty: f64,
    /// Dose gap below which the penalty applies.
    #[arg(long, default_value_t = 0.2)]
    pub dose_gap: f64,
    /// Number of sink units.
    #[arg(long, default_value_t = 0)]
    pub sinks: usize,
}

/// `balance` flags.
#[derive(Debug, Args)]
pub struct BalanceArgs {
    /// Matched study.
    #[command(flatten)]
    pub input: InputArgs,
    /// Balance table CSV to write.
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
    /// JSON report (standard output when absent).
    #[arg(long, value_name = "JSON")]
    pub report: Option<PathBuf>,
}

/// Tests.
#[derive(Debug, Subcommand)]
pub enum Family {
    /// Cluster-level sharp null of a constant proportional effect.
    Sharp(SharpTestArgs),
    /// Pooled effect ratio.
    Per(PerTestArgs),
    /// Average cluster effect ratio.
    Acer(AcerTestArgs),
}

/// Confidence sets.
#[derive(Debug, Subcommand)]
pub enum CiFamily {
    /// Constant proportional effect `β`.
    Sharp(SharpCiArgs),
    /// Pooled effect ratio.
    Per(PerCiArgs),
    /// Average cluster effect ratio.
    Acer(AcerCiArgs),
}

/// Continuity handling of the sharp-null normal approximation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ContinuityArg {
    /// No correction.
    None,
    /// Half-lattice-step correction.
    Lattice,
}

/// Options shared by sharp-null commands.
#[derive(Debug, Args)]
pub struct SharpCommon {
    /// Matched study.
    #[command(flatten)]
    pub input: InputArgs,
    /// Weight function: sign, wilcoxon, doserank or poly:<a>,<b>.
    #[arg(long, default_value = "doserank")]
    pub phi: String,
    /// Test level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Continuity correction.
    #[arg(long, value_enum, default_value_t = ContinuityArg::None)]
    pub continuity: ContinuityArg,
    /// JSON report (standard output when absent).
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,
}

/// `test sharp` flags.
#[derive(Debug, Args)]
pub struct SharpTestArgs {
    /// Shared options.
    #[command(flatten)]
    pub common: SharpCommon,
    /// Hypothesized effect.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub beta0: f64,
}

/// `ci sharp` flags.
#[derive(Debug, Args)]
pub struct SharpCiArgs {
    /// Shared options.
    #[command(flatten)]
    pub common: SharpCommon,
    /// Grid `lo:hi:step` of candidate effects.
    #[arg(long, alias = "beta-grid", allow_hyphen_values = true)]
    pub grid: String,
}

/// Design matrix choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DesignArg {
    /// Intercept only.
    E,
    /// Intercept and cluster covariates.
    Q1,
    /// Q1 plus residualized individual-covariate means.
    Q2,
}

/// Options shared by PER commands.
#[derive(Debug, Args)]
pub struct PerCommon {
    /// Matched study.
    #[command(flatten)]
    pub input: InputArgs,
    /// Design matrix of the variance estimator.
    #[arg(long, value_enum)]
    pub design: DesignArg,
    /// Test level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// JSON report (standard output when absent).
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,
}

/// `test per` flags.
#[derive(Debug, Args)]
pub struct PerTestArgs {
    /// Shared options.
    #[command(flatten)]
    pub common: PerCommon,
    /// Hypothesized pooled effect ratio.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda0: f64,
}

/// `ci per` flags.
#[derive(Debug, Args)]
pub struct PerCiArgs {
    /// Shared options.
    #[command(flatten)]
    pub common: PerCommon,
    /// Grid `lo:hi:step`.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: String,
}

/// Options shared by ACER commands.
#[derive(Debug, Args)]
pub struct AcerCommon {
    /// Matched study.
    #[command(flatten)]
    pub input: InputArgs,
    /// Assumed lower bound on every cluster's compliance rate.
    #[arg(long)]
    pub iota_min: f64,
    /// Design matrix of the variance estimator.
    #[arg(long, value_enum)]
    pub design: DesignArg,
    /// Test level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Branch-and-bound node budget per test.
    #[arg(long, default_value_t = 200_000)]
    pub max_nodes: usize,
    /// Wall-time budget per test in seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// JSON report (standard output when absent).
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,
}

/// `test acer` flags.
#[derive(Debug, Args)]
pub struct AcerTestArgs {
    /// Shared options.
    #[command(flatten)]
    pub common: AcerCommon,
    /// Hypothesized average cluster effect ratio.
    #[arg(long, allow_negative_numbers = true)]
    pub lambda0: f64,
    /// Also compute the minimum standardized deviate.
    #[arg(long)]
    pub delta_min: bool,
    /// Write the optimization problem in dump format.
    #[arg(long, value_name = "FILE")]
    pub dump_problem: Option<PathBuf>,
}

/// `ci acer` flags.
#[derive(Debug, Args)]
pub struct AcerCiArgs {
    /// Shared options.
    #[command(flatten)]
    pub common: AcerCommon,
    /// Grid `lo:hi:step`; defaults to 201 points over a data-driven bracket.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
}

/// Simulation experiments.
#[derive(Debug, Subcommand)]
pub enum Experiment {
    /// Size of the ACER test on the compliance-stratum world.
    Acer(SimArgs),
    /// Coverage of individual- and cluster-level analyses under confounding.
    Confound(ConfoundSimArgs),
    /// Run time of the ACER test across `K`.
    Timing(SimArgs),
}

/// Flags shared by every experiment.
#[derive(Debug, Args)]
pub struct SimArgs {
    /// Key-value configuration file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Number of replicates.
    #[arg(long)]
    pub reps: usize,
    /// Result CSV to write.
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON summary (standard output when absent).
    #[arg(long, value_name = "JSON")]
    pub report: Option<PathBuf>,
}

/// Which analyses the confounding experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalysisArg {
    /// Individual-level matched analysis.
    Individual,
    /// Cluster-level matched analysis.
    Cluster,
    /// Both, on the same worlds.
    Both,
}

/// `simulate confound` flags.
#[derive(Debug, Args)]
pub struct ConfoundSimArgs {
    /// Shared flags.
    #[command(flatten)]
    pub sim: SimArgs,
    /// Analyses to run.
    #[arg(long, value_enum, default_value_t = AnalysisArg::Both)]
    pub analysis: AnalysisArg,
}

/// Solver mode for `solve-dump`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Stop once the sign relative to the threshold is proven.
    Sign,
    /// Solve to optimality.
    Optimize,
}

/// `solve-dump` flags.
#[derive(Debug, Args)]
pub struct SolveDumpArgs {
    /// Problem dump.
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Solver mode.
    #[arg(long, value_enum, default_value_t = ModeArg::Optimize)]
    pub mode: ModeArg,
    /// Threshold for sign mode.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub threshold: f64,
    /// Node budget.
    #[arg(long, default_value_t = 200_000)]
    pub max_nodes: usize,
    /// Wall-time budget in seconds.
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// JSON report (standard output when absent).
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,
}
