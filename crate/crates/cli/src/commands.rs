//! Subcommand implementations.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use clusteriv::acer::{acer_confidence_interval, AcerDecision, AcerOptions, AcerSetup};
use clusteriv::data::{
    read_clusters_csv, read_individuals_csv, read_unpaired_csv, validate_study, write_clusters_csv,
    IngestOptions, Study,
};
use clusteriv::design::{build_design, DesignKind};
use clusteriv::grid::Grid;
use clusteriv::matching::{
    balance_table, match_clusters, write_balance_csv, BalanceRow, DistanceSpec,
};
use clusteriv::miqcp::{solve, MiqcpProblem, SolveMode, SolveOptions, SolveStatus};
use clusteriv::per::{invert_per_ci, per_estimate, test_per};
use clusteriv::sharp::{invert_beta_ci, test_sharp, Continuity, Phi, SharpOptions};
use clusteriv::sim::config::{acer_run_config, confound_config, AcerRunConfig};
use clusteriv::sim::{
    run_acer_replicates, run_coverage_experiments, run_timing, AcerExperiment, Analysis,
};
use clusteriv::Error;
use serde_json::{Map, Value};

use crate::args::*;
use crate::report::{diagnostics, grid_interval, num, nums, object, opt_num, Report};

/// Why a command failed; selects the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or arguments (exit 1).
    Usage(String),
    /// Input data failed validation or could not be read (exit 2).
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::CapExceeded { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

/// Result of a successful command.
#[derive(Debug)]
pub struct Outcome {
    /// Whether a solver budget ran out (exit 3).
    pub inconclusive: bool,
}

type CmdResult = Result<Outcome, Failure>;

fn done(inconclusive: bool) -> CmdResult {
    Ok(Outcome { inconclusive })
}

/// Runs the parsed command.
pub fn dispatch(cli: Cli) -> CmdResult {
    let start = Instant::now();
    match cli.command {
        Command::Match(a) => run_match(a, start),
        Command::Balance(a) => run_balance(a, start),
        Command::Test { which } => match which {
            Family::Sharp(a) => run_sharp_test(a, start),
            Family::Per(a) => run_per_test(a, start),
            Family::Acer(a) => run_acer_test(a, start),
        },
        Command::Ci { which } => match which {
            CiFamily::Sharp(a) => run_sharp_ci(a, start),
            CiFamily::Per(a) => run_per_ci(a, start),
            CiFamily::Acer(a) => run_acer_ci(a, start),
        },
        Command::Simulate { which } => match which {
            Experiment::Acer(a) => run_sim_acer(a, start),
            Experiment::Confound(a) => run_sim_confound(a, start),
            Experiment::Timing(a) => run_sim_timing(a, start),
        },
        Command::SolveDump(a) => run_solve_dump(a, start),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Data(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<File, Failure> {
    File::create(path).map_err(|e| Failure::Data(format!("cannot create {}: {e}", path.display())))
}

fn emit(report: Value, path: Option<&Path>) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(&report).expect("reports serialize");
    text.push('\n');
    match path {
        Some(p) => create(p)?.write_all(text.as_bytes()),
        None => std::io::stdout().write_all(text.as_bytes()),
    }
    .map_err(|e| Failure::Data(format!("cannot write report: {e}")))
}

fn check_alpha(alpha: f64) -> Result<(), Failure> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Failure::Usage(format!(
            "--alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

fn check_distinct(paths: &[Option<&Path>]) -> Result<(), Failure> {
    let given: Vec<&Path> = paths.iter().flatten().copied().collect();
    for (i, a) in given.iter().enumerate() {
        if given[i + 1..].contains(a) {
            return Err(Failure::Usage(format!(
                "path {} is used twice",
                a.display()
            )));
        }
    }
    Ok(())
}

fn load_study(input: &InputArgs) -> Result<(Study, Value), Failure> {
    let opts = IngestOptions {
        min_cluster_size: input.min_cluster_size,
    };
    let reader = open(&input.input)?;
    let mut study = match input.level {
        Level::Cluster => read_clusters_csv(reader, opts)?,
        Level::Individual => read_individuals_csv(reader, opts)?,
    };
    study.source = input.input.display().to_string();
    let mut diags = study.ingest_notes.clone();
    diags.extend(validate_study(&study));
    let info = object([
        ("path", Value::from(study.source.clone())),
        (
            "level",
            Value::from(if input.level == Level::Cluster {
                "cluster"
            } else {
                "individual"
            }),
        ),
        ("pairs", Value::from(study.k())),
        ("diagnostics", diagnostics(&diags)),
    ]);
    Ok((study, info))
}

fn design_kind(d: DesignArg) -> DesignKind {
    match d {
        DesignArg::E => DesignKind::E,
        DesignArg::Q1 => DesignKind::Q1,
        DesignArg::Q2 => DesignKind::Q2,
    }
}

fn solver_options(max_nodes: usize, time_limit: Option<f64>) -> Result<SolveOptions, Failure> {
    let mut opts = SolveOptions {
        max_nodes,
        ..SolveOptions::default()
    };
    if let Some(t) = time_limit {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Failure::Usage(format!(
                "--time-limit must be positive, got {t}"
            )));
        }
        opts.time_limit = Some(Duration::from_secs_f64(t));
    }
    Ok(opts)
}

fn balance_json(rows: &[BalanceRow]) -> Value {
    Value::Array(
        rows.iter()
            .map(|r| {
                object([
                    ("covariate", Value::from(r.name.clone())),
                    ("mean_control", num(r.mean_control)),
                    ("mean_encouraged", num(r.mean_encouraged)),
                    ("std_diff", num(r.standardized_difference)),
                    ("p_value", num(r.t_test_p_value)),
                ])
            })
            .collect(),
    )
}

fn run_match(a: MatchArgs, start: Instant) -> CmdResult {
    check_distinct(&[
        Some(&a.input),
        Some(&a.out),
        a.balance.as_deref(),
        a.report.as_deref(),
    ])?;
    let units = read_unpaired_csv(open(&a.input)?)?;
    let spec = DistanceSpec {
        penalty: a.penalty,
        dose_gap_threshold: a.dose_gap,
        sinks: a.sinks,
        columns: None,
    };
    let (study, result) = match_clusters(&units, &spec)?;
    write_clusters_csv(create(&a.out)?, &study)?;
    let rows = balance_table(&study)?;
    if let Some(path) = &a.balance {
        write_balance_csv(create(path)?, &rows)?;
    }
    let label = |i: usize| Value::from(units[i].id);
    let mut r = Report::new("match");
    r.field(
        "parameters",
        object([
            ("penalty", num(a.penalty)),
            ("dose_gap", num(a.dose_gap)),
            ("sinks", Value::from(a.sinks)),
        ]),
    )
    .field(
        "result",
        object([
            ("pairs", Value::from(result.pairs.len())),
            ("total_distance", num(result.total_distance)),
            (
                "matched",
                Value::Array(
                    result
                        .pairs
                        .iter()
                        .map(|&(i, j)| Value::Array(vec![label(i), label(j)]))
                        .collect(),
                ),
            ),
            (
                "dropped_clusters",
                Value::Array(result.dropped.iter().map(|&i| label(i)).collect()),
            ),
        ]),
    )
    .field("balance", balance_json(&rows));
    emit(r.finish(start.elapsed()), a.report.as_deref())?;
    done(false)
}

fn run_balance(a: BalanceArgs, start: Instant) -> CmdResult {
    let (study, info) = load_study(&a.input)?;
    let rows = balance_table(&study)?;
    write_balance_csv(create(&a.out)?, &rows)?;
    let mut r = Report::new("balance");
    r.field("input", info).field("balance", balance_json(&rows));
    emit(r.finish(start.elapsed()), a.report.as_deref())?;
    done(false)
}

fn sharp_options(c: &SharpCommon) -> Result<SharpOptions, Failure> {
    check_alpha(c.alpha)?;
    let phi = Phi::parse(&c.phi)?;
    let continuity = match c.continuity {
        ContinuityArg::None => Continuity::None,
        ContinuityArg::Lattice => Continuity::Lattice,
    };
    Ok(SharpOptions { phi, continuity })
}

fn sharp_parameters(c: &SharpCommon, opts: &SharpOptions) -> Vec<(&'static str, Value)> {
    vec![
        ("phi", Value::from(opts.phi.name())),
        ("alpha", num(c.alpha)),
        (
            "continuity",
            Value::from(if opts.continuity == Continuity::Lattice {
                "lattice"
            } else {
                "none"
            }),
        ),
    ]
}

fn to_object(fields: Vec<(&'static str, Value)>) -> Value {
    Value::Object(
        fields
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect::<Map<String, Value>>(),
    )
}

fn run_sharp_test(a: SharpTestArgs, start: Instant) -> CmdResult {
    let opts = sharp_options(&a.common)?;
    let (study, info) = load_study(&a.common.input)?;
    let res = test_sharp(&study, a.beta0, opts);
    let mut params = vec![("beta0", num(a.beta0))];
    params.extend(sharp_parameters(&a.common, &opts));
    let mut r = Report::new("test sharp");
    r.field("input", info)
        .field("parameters", to_object(params))
        .field(
            "result",
            object([
                ("statistic", num(res.statistic)),
                ("null_mean", num(res.mean)),
                ("null_variance", num(res.variance)),
                ("deviate", num(res.deviate)),
                ("p_greater", num(res.p_one_sided)),
                ("p_less", num(res.p_lower)),
                ("p_two_sided", num(res.p_two_sided)),
                ("reject", Value::from(res.p_two_sided <= a.common.alpha)),
                ("diagnostics", diagnostics(&res.diagnostics)),
            ]),
        );
    emit(r.finish(start.elapsed()), a.common.out.as_deref())?;
    done(false)
}

fn run_sharp_ci(a: SharpCiArgs, start: Instant) -> CmdResult {
    let opts = sharp_options(&a.common)?;
    let grid = Grid::parse(&a.grid)?;
    let (study, info) = load_study(&a.common.input)?;
    let ci = invert_beta_ci(&study, opts, a.common.alpha, &grid)?;
    let mut params = sharp_parameters(&a.common, &opts);
    params.push(("grid", Value::from(a.grid.clone())));
    let mut r = Report::new("ci sharp");
    r.field("input", info)
        .field("parameters", to_object(params))
        .field("interval", grid_interval(&ci))
        .field("diagnostics", diagnostics(&ci.diagnostics));
    emit(r.finish(start.elapsed()), a.common.out.as_deref())?;
    done(false)
}

fn run_per_test(a: PerTestArgs, start: Instant) -> CmdResult {
    let c = &a.common;
    check_alpha(c.alpha)?;
    let (study, info) = load_study(&c.input)?;
    let design = build_design(&study, design_kind(c.design))?;
    let res = test_per(&study, a.lambda0, &design, c.alpha)?;
    let mut diags = design.diagnostics.clone();
    diags.extend(res.diagnostics.iter().cloned());
    let mut r = Report::new("test per");
    r.field("input", info)
        .field(
            "parameters",
            object([
                ("lambda0", num(a.lambda0)),
                ("design", Value::from(design.kind.name())),
                ("alpha", num(c.alpha)),
            ]),
        )
        .field(
            "result",
            object([
                ("estimate", opt_num(per_estimate(&study))),
                ("t", num(res.t)),
                ("s2", num(res.s2)),
                ("deviate", num(res.deviate)),
                ("p_value", num(res.p_value)),
                ("reject", Value::from(res.reject)),
                ("design_rank", Value::from(design.rank())),
                (
                    "dropped_design_columns",
                    Value::from(design.dropped.clone()),
                ),
            ]),
        )
        .field("diagnostics", diagnostics(&diags));
    emit(r.finish(start.elapsed()), c.out.as_deref())?;
    done(false)
}

fn run_per_ci(a: PerCiArgs, start: Instant) -> CmdResult {
    let c = &a.common;
    check_alpha(c.alpha)?;
    let grid = Grid::parse(&a.grid)?;
    let (study, info) = load_study(&c.input)?;
    let design = build_design(&study, design_kind(c.design))?;
    let ci = invert_per_ci(&study, &design, c.alpha, &grid)?;
    let mut diags = design.diagnostics.clone();
    diags.extend(ci.diagnostics.iter().cloned());
    let mut r = Report::new("ci per");
    r.field("input", info)
        .field(
            "parameters",
            object([
                ("design", Value::from(design.kind.name())),
                ("alpha", num(c.alpha)),
                ("grid", Value::from(a.grid.clone())),
            ]),
        )
        .field("estimate", opt_num(per_estimate(&study)))
        .field("interval", grid_interval(&ci))
        .field("diagnostics", diagnostics(&diags));
    emit(r.finish(start.elapsed()), c.out.as_deref())?;
    done(false)
}

fn acer_setup(c: &AcerCommon) -> Result<(AcerSetup, Value, AcerOptions), Failure> {
    check_alpha(c.alpha)?;
    if !(c.iota_min > 0.0 && c.iota_min <= 1.0) {
        return Err(Failure::Usage(format!(
            "--iota-min must lie in (0, 1], got {}",
            c.iota_min
        )));
    }
    let solver = solver_options(c.max_nodes, c.time_limit)?;
    let (study, info) = load_study(&c.input)?;
    let setup = AcerSetup::new(&study, c.iota_min, design_kind(c.design), c.alpha)?;
    Ok((
        setup,
        info,
        AcerOptions {
            solver,
            delta_min: false,
        },
    ))
}

fn acer_parameters(c: &AcerCommon, setup: &AcerSetup) -> Vec<(&'static str, Value)> {
    vec![
        ("iota_min", num(c.iota_min)),
        ("design", Value::from(setup.design.kind.name())),
        ("alpha", num(c.alpha)),
        ("max_nodes", Value::from(c.max_nodes)),
    ]
}

fn sco_json(setup: &AcerSetup) -> Value {
    object([
        ("lower", num(setup.sco.lower)),
        ("upper", num(setup.sco.upper)),
        ("level", num(setup.alpha / 2.0)),
    ])
}

fn run_acer_test(a: AcerTestArgs, start: Instant) -> CmdResult {
    check_distinct(&[
        Some(&a.common.input.input),
        a.common.out.as_deref(),
        a.dump_problem.as_deref(),
    ])?;
    let (setup, info, mut opts) = acer_setup(&a.common)?;
    opts.delta_min = a.delta_min;
    if let Some(path) = &a.dump_problem {
        let problem = MiqcpProblem::from_acer(&setup.instance(a.lambda0))?;
        create(path)?
            .write_all(problem.dump().as_bytes())
            .map_err(|e| Failure::Data(format!("cannot write dump: {e}")))?;
    }
    let rep = setup.test(a.lambda0, &opts)?;
    let mut params = vec![("lambda0", num(a.lambda0))];
    params.extend(acer_parameters(&a.common, &setup));
    let trace = Value::Array(
        rep.bound_history
            .iter()
            .map(|b| {
                object([
                    ("node", Value::from(b.node)),
                    ("lower", num(b.lower)),
                    ("upper", num(b.upper)),
                ])
            })
            .collect(),
    );
    let co = rep.minimizing_co.as_ref().map_or(Value::Null, |v| {
        Value::Array(v.iter().map(|&c| Value::from(c)).collect())
    });
    let mut r = Report::new("test acer");
    r.field("input", info)
        .field("parameters", to_object(params))
        .field(
            "result",
            object([
                ("decision", Value::from(rep.decision.name())),
                ("critical_value", num(rep.critical_value)),
                ("solver_status", Value::from(rep.solver_status.name())),
                ("rho_lower", num(rep.rho_lower)),
                ("rho_upper", num(rep.rho_upper)),
                ("delta_min", opt_num(rep.delta_min)),
                ("compliance_rate_interval", sco_json(&setup)),
                ("pairs_analysed", Value::from(rep.k)),
                ("dropped_pairs", Value::from(rep.dropped_pairs.clone())),
                ("nodes", Value::from(rep.nodes)),
                ("bound_trace", trace),
                (
                    "minimizing_co",
                    object([
                        ("certificate_only", Value::from(true)),
                        ("slot_major_values", co),
                    ]),
                ),
            ]),
        );
    r.field("diagnostics", diagnostics(&rep.diagnostics));
    emit(r.finish(start.elapsed()), a.common.out.as_deref())?;
    done(rep.decision == AcerDecision::Inconclusive)
}

fn run_acer_ci(a: AcerCiArgs, start: Instant) -> CmdResult {
    let (setup, info, opts) = acer_setup(&a.common)?;
    let grid = match &a.grid {
        Some(g) => Grid::parse(g)?,
        None => setup.default_grid(201)?,
    };
    let ci = acer_confidence_interval(
        &setup.study,
        a.common.iota_min,
        setup.design.kind,
        a.common.alpha,
        &grid,
        &opts,
    )?;
    let mut params = acer_parameters(&a.common, &setup);
    params.push((
        "grid",
        object([
            ("lower", num(grid.point(0))),
            ("upper", num(grid.point(grid.len() - 1))),
            ("points", Value::from(grid.len())),
        ]),
    ));
    let mut diags = setup.diagnostics.clone();
    diags.extend(ci.interval.diagnostics.iter().cloned());
    let mut r = Report::new("ci acer");
    r.field("input", info)
        .field("parameters", to_object(params))
        .field("compliance_rate_interval", sco_json(&setup))
        .field("interval", grid_interval(&ci.interval))
        .field("inconclusive_points", nums(&ci.inconclusive))
        .field("dropped_pairs", Value::from(setup.dropped_labels.clone()))
        .field(
            "decisions",
            Value::Array(
                ci.decisions
                    .iter()
                    .map(|(l, d)| {
                        object([("lambda0", num(*l)), ("decision", Value::from(d.name()))])
                    })
                    .collect(),
            ),
        )
        .field("diagnostics", diagnostics(&diags));
    emit(r.finish(start.elapsed()), a.common.out.as_deref())?;
    done(!ci.inconclusive.is_empty())
}

fn read_config(path: Option<&Path>) -> Result<String, Failure> {
    match path {
        None => Ok(String::new()),
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Failure::Data(format!("cannot read {}: {e}", p.display()))),
    }
}

fn acer_config(s: &SimArgs) -> Result<AcerRunConfig, Failure> {
    if s.reps == 0 {
        return Err(Failure::Usage("--reps must be positive".into()));
    }
    check_distinct(&[s.config.as_deref(), Some(&s.out), s.report.as_deref()])?;
    let mut cfg = acer_run_config(&read_config(s.config.as_deref())?)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(seed) = s.seed {
        cfg.experiment.dgp.seed = seed;
    }
    Ok(cfg)
}

fn experiment_json(e: &AcerExperiment) -> Value {
    object([
        ("k", Value::from(e.dgp.k)),
        ("n", Value::from(e.dgp.n)),
        ("probs", nums(&e.dgp.probs)),
        ("beta", num(e.dgp.beta)),
        ("spread", num(e.dgp.spread)),
        ("seed", Value::from(e.dgp.seed)),
        (
            "iota_min",
            num(e.iota_min.unwrap_or_else(|| e.dgp.iota_floor())),
        ),
        ("alpha", num(e.alpha)),
        ("lambda_offset", num(e.lambda_offset)),
    ])
}

fn run_sim_acer(a: SimArgs, start: Instant) -> CmdResult {
    let cfg = acer_config(&a)?;
    let exp = &cfg.experiment;
    let runs = run_acer_replicates(exp, a.reps)?;
    let mut w = csv::Writer::from_writer(create(&a.out)?);
    w.write_record([
        "replicate",
        "lambda_acer",
        "lambda0",
        "decision",
        "solver_status",
        "nodes",
        "redraws",
    ])
    .map_err(csv_err)?;
    for r in &runs {
        w.write_record([
            r.replicate.to_string(),
            num(r.lambda_acer).to_string(),
            num(r.lambda0).to_string(),
            r.decision.name().to_string(),
            r.status.name().to_string(),
            r.nodes.to_string(),
            r.redraws.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Failure::Data(e.to_string()))?;
    let rejections = runs
        .iter()
        .filter(|r| r.decision == AcerDecision::Reject)
        .count();
    let inconclusive = runs
        .iter()
        .filter(|r| r.decision == AcerDecision::Inconclusive)
        .count();
    let mut rep = Report::new("simulate acer");
    rep.field("parameters", experiment_json(exp)).field(
        "result",
        object([
            ("replicates", Value::from(a.reps)),
            ("rejections", Value::from(rejections)),
            ("inconclusive", Value::from(inconclusive)),
            ("rejection_rate", num(rejections as f64 / a.reps as f64)),
            (
                "redraws",
                Value::from(runs.iter().map(|r| r.redraws).sum::<usize>()),
            ),
        ]),
    );
    emit(rep.finish(start.elapsed()), a.report.as_deref())?;
    done(inconclusive > 0)
}

fn csv_err(e: csv::Error) -> Failure {
    Failure::Data(format!("cannot write CSV: {e}"))
}

fn run_sim_timing(a: SimArgs, start: Instant) -> CmdResult {
    let cfg = acer_config(&a)?;
    let rows = run_timing(&cfg.experiment, &cfg.ks, a.reps)?;
    let mut w = csv::Writer::from_writer(create(&a.out)?);
    w.write_record([
        "k",
        "replicates",
        "median_seconds",
        "q1_seconds",
        "q3_seconds",
        "median_nodes",
        "inconclusive",
    ])
    .map_err(csv_err)?;
    for r in &rows {
        w.write_record([
            r.k.to_string(),
            r.replicates.to_string(),
            r.median_seconds.to_string(),
            r.q1_seconds.to_string(),
            r.q3_seconds.to_string(),
            r.median_nodes.to_string(),
            r.inconclusive.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Failure::Data(e.to_string()))?;
    let inconclusive: usize = rows.iter().map(|r| r.inconclusive).sum();
    let mut rep = Report::new("simulate timing");
    rep.field("parameters", experiment_json(&cfg.experiment))
        .field("ks", Value::from(cfg.ks.clone()))
        .field(
            "result",
            Value::Array(
                rows.iter()
                    .map(|r| {
                        object([
                            ("k", Value::from(r.k)),
                            ("median_nodes", num(r.median_nodes)),
                            ("inconclusive", Value::from(r.inconclusive)),
                        ])
                    })
                    .collect(),
            ),
        );
    let mut report = rep.finish(start.elapsed());
    // Wall times belong to the timing block.
    report["timing"]["per_k"] = Value::Array(
        rows.iter()
            .map(|r| {
                object([
                    ("k", Value::from(r.k)),
                    ("median_seconds", Value::from(r.median_seconds)),
                    ("q1_seconds", Value::from(r.q1_seconds)),
                    ("q3_seconds", Value::from(r.q3_seconds)),
                ])
            })
            .collect(),
    );
    emit(report, a.report.as_deref())?;
    done(inconclusive > 0)
}

fn run_sim_confound(a: ConfoundSimArgs, start: Instant) -> CmdResult {
    let s = &a.sim;
    if s.reps == 0 {
        return Err(Failure::Usage("--reps must be positive".into()));
    }
    check_distinct(&[s.config.as_deref(), Some(&s.out), s.report.as_deref()])?;
    let (mut cfg, opts) = confound_config(&read_config(s.config.as_deref())?)
        .map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(seed) = s.seed {
        cfg.seed = seed;
    }
    let analyses: Vec<Analysis> = match a.analysis {
        AnalysisArg::Individual => vec![Analysis::Individual],
        AnalysisArg::Cluster => vec![Analysis::Cluster],
        AnalysisArg::Both => vec![Analysis::Individual, Analysis::Cluster],
    };
    let rows = run_coverage_experiments(&cfg, s.reps, &analyses, &opts)?;
    let mut w = csv::Writer::from_writer(create(&s.out)?);
    w.write_record([
        "analysis",
        "clusters",
        "n",
        "replicates",
        "failures",
        "ci_left",
        "ci_right",
        "ci_length",
        "midpoint",
        "coverage",
    ])
    .map_err(csv_err)?;
    let mut json_rows = Vec::new();
    for r in &rows {
        w.write_record([
            r.analysis.name().to_string(),
            r.clusters.to_string(),
            r.n.to_string(),
            r.replicates.to_string(),
            r.failures.to_string(),
            num(r.ci_left).to_string(),
            num(r.ci_right).to_string(),
            num(r.ci_length).to_string(),
            num(r.midpoint).to_string(),
            num(r.coverage).to_string(),
        ])
        .map_err(csv_err)?;
        json_rows.push(object([
            ("analysis", Value::from(r.analysis.name())),
            ("replicates", Value::from(r.replicates)),
            ("failures", Value::from(r.failures)),
            ("ci_left", num(r.ci_left)),
            ("ci_right", num(r.ci_right)),
            ("ci_length", num(r.ci_length)),
            ("midpoint", num(r.midpoint)),
            ("coverage", num(r.coverage)),
        ]));
    }
    w.flush().map_err(|e| Failure::Data(e.to_string()))?;
    let mut rep = Report::new("simulate confound");
    rep.field(
        "parameters",
        object([
            ("clusters", Value::from(cfg.clusters)),
            ("n", Value::from(cfg.n)),
            ("rho", num(cfg.rho)),
            ("gamma1", num(cfg.gamma1)),
            ("beta", num(cfg.beta)),
            ("beta2", num(cfg.beta2)),
            ("seed", Value::from(cfg.seed)),
            ("huber_c", num(opts.huber_c)),
            ("alpha", num(opts.alpha)),
            (
                "cluster_dose_gap",
                num(opts.cluster_spec.dose_gap_threshold),
            ),
            ("cluster_penalty", num(opts.cluster_spec.penalty)),
            (
                "individual_dose_gap",
                num(opts.individual_spec.dose_gap_threshold),
            ),
            ("individual_penalty", num(opts.individual_spec.penalty)),
            ("block", Value::from(opts.block)),
        ]),
    )
    .field("result", Value::Array(json_rows));
    emit(rep.finish(start.elapsed()), s.report.as_deref())?;
    done(false)
}

fn run_solve_dump(a: SolveDumpArgs, start: Instant) -> CmdResult {
    let text = std::fs::read_to_string(&a.input)
        .map_err(|e| Failure::Data(format!("cannot read {}: {e}", a.input.display())))?;
    let problem = MiqcpProblem::load(&text)?;
    let mode = match a.mode {
        ModeArg::Sign => SolveMode::SignCertify {
            threshold: a.threshold,
        },
        ModeArg::Optimize => SolveMode::optimize(),
    };
    let out = solve(&problem, mode, solver_options(a.max_nodes, a.time_limit)?)?;
    let incumbent = out.incumbent.as_ref().map_or(Value::Null, |v| {
        Value::Array(v.iter().map(|&c| Value::from(c)).collect())
    });
    let mut r = Report::new("solve-dump");
    r.field(
        "parameters",
        object([
            (
                "mode",
                Value::from(if a.mode == ModeArg::Sign {
                    "sign"
                } else {
                    "optimize"
                }),
            ),
            ("threshold", num(a.threshold)),
            ("max_nodes", Value::from(a.max_nodes)),
            ("variables", Value::from(problem.dim())),
        ]),
    )
    .field(
        "result",
        object([
            ("status", Value::from(out.status.name())),
            ("best_upper", num(out.best_upper)),
            ("best_lower", num(out.best_lower)),
            ("nodes", Value::from(out.node_count)),
            ("incumbent", incumbent),
        ]),
    );
    emit(r.finish(start.elapsed()), a.out.as_deref())?;
    done(out.status == SolveStatus::Inconclusive)
}
