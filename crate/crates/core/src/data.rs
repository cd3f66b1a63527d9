//! Matched-pair cluster data: records, aggregation, validation and CSV I/O.
//!
//! A [`Study`] holds `K` matched pairs of clusters. Within each pair the cluster
//! with the strictly larger dose is the encouraged one (`Z = 1`). Every
//! downstream statistic depends on the per-cluster sums `n`, `ΣD` and `ΣR`, so
//! individual rows are optional.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

/// One individual within a cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct IndividualRecord {
    /// Pair label `k` as it appears in the input.
    pub pair: usize,
    /// Cluster slot within the pair, 1 or 2.
    pub slot: u8,
    /// Cluster dose, repeated on every row of the cluster.
    pub dose: f64,
    /// Treatment indicator `D`; must be 0 or 1.
    pub treated: f64,
    /// Outcome `R`.
    pub outcome: f64,
    /// Individual-level covariates.
    pub covariates: Vec<f64>,
}

/// Aggregates of one cluster's individual rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    /// Number of individuals.
    pub n: usize,
    /// Number of treated individuals.
    pub sum_d: f64,
    /// Sum of outcomes.
    pub sum_r: f64,
    /// Mean of each individual covariate.
    pub xbar: Vec<f64>,
}

/// Cluster-level record.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Encouragement dose.
    pub dose: f64,
    /// Cluster size.
    pub n: usize,
    /// Treated count `ΣD`.
    pub sum_d: f64,
    /// Outcome sum `ΣR`.
    pub sum_r: f64,
    /// Cluster-level covariates.
    pub xt: Vec<f64>,
    /// Means of individual-level covariates.
    pub xbar: Vec<f64>,
}

impl Cluster {
    /// Treated fraction `ΣD / n`.
    pub fn treated_fraction(&self) -> f64 {
        self.sum_d / self.n as f64
    }

    /// Mean outcome `ΣR / n`.
    pub fn mean_outcome(&self) -> f64 {
        self.sum_r / self.n as f64
    }
}

/// A matched pair of clusters in input slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    /// Pair label as it appears in the input.
    pub id: usize,
    /// Clusters in slot order (slot 1 first).
    pub clusters: [Cluster; 2],
}

impl Pair {
    /// Index (0 or 1) of the encouraged cluster, the one with the larger dose.
    ///
    /// A dose tie resolves to slot 0; [`Study::new`] rejects ties, so this
    /// only matters for studies built with [`Study::new_unchecked`].
    pub fn encouraged_slot(&self) -> usize {
        usize::from(self.clusters[1].dose > self.clusters[0].dose)
    }

    /// Encouragement indicator `Z` for slot `j`.
    pub fn z(&self, j: usize) -> u8 {
        u8::from(self.encouraged_slot() == j)
    }

    /// The encouraged cluster.
    pub fn encouraged(&self) -> &Cluster {
        &self.clusters[self.encouraged_slot()]
    }

    /// The control cluster.
    pub fn control(&self) -> &Cluster {
        &self.clusters[1 - self.encouraged_slot()]
    }

    /// Absolute dose gap `|Z̃_1 − Z̃_2|`.
    pub fn dose_gap(&self) -> f64 {
        (self.clusters[0].dose - self.clusters[1].dose).abs()
    }
}

/// Severity of a validation finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    /// The data can be analysed, but the finding affects interpretation.
    Warning,
    /// The data violate a structural requirement.
    Error,
}

/// A validation or analysis finding.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    /// Severity of the finding.
    pub severity: Severity,
    /// Stable machine-readable code.
    pub code: &'static str,
    /// Pair label the finding refers to, if any.
    pub pair: Option<usize>,
    /// Human-readable explanation.
    pub message: String,
}

impl Diagnostic {
    /// A warning-level diagnostic.
    pub fn warning(code: &'static str, pair: Option<usize>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            code,
            pair,
            message: message.into(),
        }
    }

    /// An error-level diagnostic.
    pub fn error(code: &'static str, pair: Option<usize>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            code,
            pair,
            message: message.into(),
        }
    }
}

/// Matched-pair study.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Study {
    pairs: Vec<Pair>,
    /// Individual rows, when the study was read at the individual level.
    pub individuals: Vec<IndividualRecord>,
    /// Free-form provenance label (input path, generator name, ...).
    pub source: String,
    /// Findings produced while reading the input (for example pairs removed
    /// because a cluster fell below the size floor).
    pub ingest_notes: Vec<Diagnostic>,
}

impl Study {
    /// Builds a study, rejecting structural problems: fewer than two pairs,
    /// dose ties, empty clusters, treated counts outside `[0, n]` and
    /// inconsistent covariate lengths.
    pub fn new(pairs: Vec<Pair>) -> Result<Self> {
        let study = Self::new_unchecked(pairs);
        let errors: Vec<String> = validate_study(&study)
            .into_iter()
            .filter(|d| d.severity == Severity::Error)
            .map(|d| d.message)
            .collect();
        if errors.is_empty() {
            Ok(study)
        } else {
            Err(Error::Validation(errors.join("; ")))
        }
    }

    /// Builds a study without checks; use [`validate_study`] to inspect it.
    pub fn new_unchecked(pairs: Vec<Pair>) -> Self {
        Self {
            pairs,
            ..Self::default()
        }
    }

    /// The matched pairs.
    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    /// Number of pairs `K`.
    pub fn k(&self) -> usize {
        self.pairs.len()
    }

    /// A study restricted to the pairs at `indices` (positions, not labels).
    pub fn subset(&self, indices: &[usize]) -> Study {
        let pairs = indices.iter().map(|&i| self.pairs[i].clone()).collect();
        let ids: Vec<usize> = indices.iter().map(|&i| self.pairs[i].id).collect();
        let individuals = self
            .individuals
            .iter()
            .filter(|r| ids.contains(&r.pair))
            .cloned()
            .collect();
        Study {
            pairs,
            individuals,
            source: self.source.clone(),
            ingest_notes: Vec::new(),
        }
    }

    /// Number of cluster-level covariates (taken from the first cluster).
    pub fn n_cluster_covariates(&self) -> usize {
        self.pairs.first().map_or(0, |p| p.clusters[0].xt.len())
    }

    /// Number of individual covariate means (taken from the first cluster).
    pub fn n_individual_covariates(&self) -> usize {
        self.pairs.first().map_or(0, |p| p.clusters[0].xbar.len())
    }
}

/// Full potential outcomes of one cluster, used by the simulation harness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialOutcomeCluster {
    /// Treated count if encouraged.
    pub sum_d_t: f64,
    /// Treated count if not encouraged.
    pub sum_d_c: f64,
    /// Outcome sum if encouraged.
    pub sum_r_t: f64,
    /// Outcome sum if not encouraged.
    pub sum_r_c: f64,
}

impl PotentialOutcomeCluster {
    /// Compliers minus defiers, `Σd_T − Σd_C`.
    pub fn compliance(&self) -> f64 {
        self.sum_d_t - self.sum_d_c
    }

    /// Cluster effect ratio `(Σr_T − Σr_C) / (Σd_T − Σd_C)`, defined only for
    /// positive compliance.
    pub fn effect_ratio(&self) -> Option<f64> {
        let co = self.compliance();
        (co > 0.0).then(|| (self.sum_r_t - self.sum_r_c) / co)
    }
}

/// Aggregates the individual rows of one cluster.
///
/// Fails on an empty slice, on rows from different `(pair, slot)` keys and
/// on treatment values other than 0 or 1.
pub fn aggregate_cluster(rows: &[IndividualRecord]) -> Result<ClusterSummary> {
    let first = rows
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot aggregate an empty cluster".into()))?;
    let p = first.covariates.len();
    let mut sum_d = 0.0;
    let mut sum_r = 0.0;
    let mut xsum = vec![0.0; p];
    for r in rows {
        if (r.pair, r.slot) != (first.pair, first.slot) {
            return Err(Error::InvalidArgument(format!(
                "rows mix clusters ({}, {}) and ({}, {})",
                first.pair, first.slot, r.pair, r.slot
            )));
        }
        if r.treated != 0.0 && r.treated != 1.0 {
            return Err(Error::InvalidArgument(format!(
                "treatment must be 0 or 1, got {} in pair {} slot {}",
                r.treated, r.pair, r.slot
            )));
        }
        if r.covariates.len() != p {
            return Err(Error::InvalidArgument(format!(
                "covariate length {} differs from {} in pair {} slot {}",
                r.covariates.len(),
                p,
                r.pair,
                r.slot
            )));
        }
        sum_d += r.treated;
        sum_r += r.outcome;
        for (acc, x) in xsum.iter_mut().zip(&r.covariates) {
            *acc += x;
        }
    }
    let n = rows.len();
    Ok(ClusterSummary {
        n,
        sum_d,
        sum_r,
        xbar: xsum.into_iter().map(|s| s / n as f64).collect(),
    })
}

/// Inspects a study and reports structural problems and uninformative
/// clusters. Never mutates the study.
pub fn validate_study(study: &Study) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if study.k() < 2 {
        out.push(Diagnostic::error(
            "too_few_pairs",
            None,
            format!("a study needs at least 2 pairs, found {}", study.k()),
        ));
    }
    let (q, p) = (
        study.n_cluster_covariates(),
        study.n_individual_covariates(),
    );
    for pair in study.pairs() {
        let id = Some(pair.id);
        let [a, b] = &pair.clusters;
        if a.dose == b.dose || a.dose.is_nan() || b.dose.is_nan() {
            out.push(Diagnostic::error(
                "dose_tie",
                id,
                format!(
                    "dose tie in pair {}: both clusters have dose {}",
                    pair.id, a.dose
                ),
            ));
        }
        for (j, c) in pair.clusters.iter().enumerate() {
            if c.n == 0 {
                out.push(Diagnostic::error(
                    "empty_cluster",
                    id,
                    format!("pair {} slot {} has no individuals", pair.id, j + 1),
                ));
                continue;
            }
            if !(c.sum_d >= 0.0 && c.sum_d <= c.n as f64) {
                out.push(Diagnostic::error(
                    "treated_out_of_range",
                    id,
                    format!(
                        "pair {} slot {}: treated count {} outside [0, {}]",
                        pair.id,
                        j + 1,
                        c.sum_d,
                        c.n
                    ),
                ));
            }
            if c.xt.len() != q || c.xbar.len() != p {
                out.push(Diagnostic::error(
                    "covariate_length",
                    id,
                    format!(
                        "pair {} slot {}: covariate lengths ({}, {}) differ from ({}, {})",
                        pair.id,
                        j + 1,
                        c.xt.len(),
                        c.xbar.len(),
                        q,
                        p
                    ),
                ));
            }
        }
        if a.dose != b.dose {
            let (enc, ctl) = (pair.encouraged(), pair.control());
            if enc.sum_d == 0.0 {
                out.push(Diagnostic::warning(
                    "uninformative_cluster",
                    id,
                    format!(
                        "pair {}: encouraged cluster has no treated individuals, so it has no compliers and is uninformative under strict instrument relevance",
                        pair.id
                    ),
                ));
            }
            if ctl.n > 0 && ctl.sum_d == ctl.n as f64 {
                out.push(Diagnostic::warning(
                    "uninformative_cluster",
                    id,
                    format!(
                        "pair {}: control cluster is fully treated, so it has no compliers and is uninformative under strict instrument relevance",
                        pair.id
                    ),
                ));
            }
        }
    }
    if !study.individuals.is_empty() {
        check_individual_sums(study, &mut out);
    }
    out
}

fn check_individual_sums(study: &Study, out: &mut Vec<Diagnostic>) {
    let mut groups: BTreeMap<(usize, u8), Vec<IndividualRecord>> = BTreeMap::new();
    for r in &study.individuals {
        groups.entry((r.pair, r.slot)).or_default().push(r.clone());
    }
    for pair in study.pairs() {
        for (j, c) in pair.clusters.iter().enumerate() {
            let key = (pair.id, j as u8 + 1);
            let Some(rows) = groups.get(&key) else {
                out.push(Diagnostic::error(
                    "sum_mismatch",
                    Some(pair.id),
                    format!("pair {} slot {} has no individual rows", pair.id, j + 1),
                ));
                continue;
            };
            match aggregate_cluster(rows) {
                Ok(s) => {
                    let tol = 1e-9 * (1.0 + c.sum_r.abs());
                    if s.n != c.n || s.sum_d != c.sum_d || (s.sum_r - c.sum_r).abs() > tol {
                        out.push(Diagnostic::error(
                            "sum_mismatch",
                            Some(pair.id),
                            format!(
                                "pair {} slot {}: stored sums (n={}, ΣD={}, ΣR={}) differ from individual rows (n={}, ΣD={}, ΣR={})",
                                pair.id, j + 1, c.n, c.sum_d, c.sum_r, s.n, s.sum_d, s.sum_r
                            ),
                        ));
                    }
                }
                Err(e) => out.push(Diagnostic::error(
                    "sum_mismatch",
                    Some(pair.id),
                    e.to_string(),
                )),
            }
        }
    }
}

/// Options applied while reading CSV input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    /// Pairs containing a cluster smaller than this are removed with a note.
    pub min_cluster_size: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            min_cluster_size: 1,
        }
    }
}

fn parse_f64(field: &str, column: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        Error::Parse(format!(
            "line {line}: column `{column}` is not a number: `{field}`"
        ))
    })
}

fn parse_usize(field: &str, column: &str, line: usize) -> Result<usize> {
    field.trim().parse::<usize>().map_err(|_| {
        Error::Parse(format!(
            "line {line}: column `{column}` is not a non-negative integer: `{field}`"
        ))
    })
}

struct Header {
    index: BTreeMap<String, usize>,
    xt: Vec<usize>,
    xbar: Vec<usize>,
    x: Vec<usize>,
}

impl Header {
    fn new(record: &csv::StringRecord) -> Self {
        let mut index = BTreeMap::new();
        let (mut xt, mut xbar, mut x) = (Vec::new(), Vec::new(), Vec::new());
        for (i, name) in record.iter().enumerate() {
            let name = name.trim();
            index.insert(name.to_string(), i);
            if name.starts_with("xbar") {
                xbar.push(i);
            } else if name.starts_with("xt") {
                xt.push(i);
            } else if name.starts_with('x') {
                x.push(i);
            }
        }
        Self { index, xt, xbar, x }
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Parse(format!("missing required column `{name}`")))
    }
}

fn parse_slot(field: &str, line: usize) -> Result<u8> {
    match field.trim() {
        "1" => Ok(1),
        "2" => Ok(2),
        other => Err(Error::Parse(format!(
            "line {line}: slot must be 1 or 2, got `{other}`"
        ))),
    }
}

fn assemble_pairs(
    clusters: BTreeMap<usize, [Option<Cluster>; 2]>,
    opts: IngestOptions,
) -> Result<(Vec<Pair>, Vec<Diagnostic>)> {
    let mut pairs = Vec::new();
    let mut notes = Vec::new();
    for (id, slots) in clusters {
        let [Some(a), Some(b)] = slots else {
            return Err(Error::Validation(format!(
                "pair {id} does not have both slots 1 and 2"
            )));
        };
        if a.n < opts.min_cluster_size || b.n < opts.min_cluster_size {
            notes.push(Diagnostic::warning(
                "small_cluster",
                Some(id),
                format!(
                    "pair {id} removed: cluster sizes ({}, {}) below the floor {}",
                    a.n, b.n, opts.min_cluster_size
                ),
            ));
            continue;
        }
        pairs.push(Pair {
            id,
            clusters: [a, b],
        });
    }
    Ok((pairs, notes))
}

fn finish_study(
    pairs: Vec<Pair>,
    notes: Vec<Diagnostic>,
    individuals: Vec<IndividualRecord>,
) -> Result<Study> {
    let mut study = Study::new(pairs)?;
    study.ingest_notes = notes;
    study.individuals = individuals;
    Ok(study)
}

/// Reads a cluster-level CSV with header
/// `pair,slot,dose,n,sum_d,sum_r,xt1..xtq,xbar1..xbarp`.
pub fn read_clusters_csv<R: Read>(reader: R, opts: IngestOptions) -> Result<Study> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = Header::new(rdr.headers()?);
    let cols = [
        header.col("pair")?,
        header.col("slot")?,
        header.col("dose")?,
        header.col("n")?,
        header.col("sum_d")?,
        header.col("sum_r")?,
    ];
    let mut clusters: BTreeMap<usize, [Option<Cluster>; 2]> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let pair = parse_usize(&rec[cols[0]], "pair", line)?;
        let slot = parse_slot(&rec[cols[1]], line)?;
        let cluster = Cluster {
            dose: parse_f64(&rec[cols[2]], "dose", line)?,
            n: parse_usize(&rec[cols[3]], "n", line)?,
            sum_d: parse_f64(&rec[cols[4]], "sum_d", line)?,
            sum_r: parse_f64(&rec[cols[5]], "sum_r", line)?,
            xt: header
                .xt
                .iter()
                .map(|&c| parse_f64(&rec[c], "xt", line))
                .collect::<Result<_>>()?,
            xbar: header
                .xbar
                .iter()
                .map(|&c| parse_f64(&rec[c], "xbar", line))
                .collect::<Result<_>>()?,
        };
        let entry = clusters.entry(pair).or_default();
        let s = usize::from(slot - 1);
        if entry[s].is_some() {
            return Err(Error::Validation(format!(
                "pair {pair} slot {slot} appears twice"
            )));
        }
        entry[s] = Some(cluster);
    }
    let (pairs, notes) = assemble_pairs(clusters, opts)?;
    finish_study(pairs, notes, Vec::new())
}

/// Reads an individual-level CSV with header
/// `pair,slot,dose,treated,outcome,x1..xp` and aggregates it into clusters.
pub fn read_individuals_csv<R: Read>(reader: R, opts: IngestOptions) -> Result<Study> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = Header::new(rdr.headers()?);
    let cols = [
        header.col("pair")?,
        header.col("slot")?,
        header.col("dose")?,
        header.col("treated")?,
        header.col("outcome")?,
    ];
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        rows.push(IndividualRecord {
            pair: parse_usize(&rec[cols[0]], "pair", line)?,
            slot: parse_slot(&rec[cols[1]], line)?,
            dose: parse_f64(&rec[cols[2]], "dose", line)?,
            treated: parse_f64(&rec[cols[3]], "treated", line)?,
            outcome: parse_f64(&rec[cols[4]], "outcome", line)?,
            covariates: header
                .x
                .iter()
                .map(|&c| parse_f64(&rec[c], "x", line))
                .collect::<Result<_>>()?,
        });
    }
    let (pairs, notes, kept) = pairs_from_individuals(rows, opts)?;
    finish_study(pairs, notes, kept)
}

/// Groups individual rows into clusters and pairs.
///
/// Returns the pairs, ingestion notes and the rows belonging to kept pairs.
pub fn pairs_from_individuals(
    rows: Vec<IndividualRecord>,
    opts: IngestOptions,
) -> Result<(Vec<Pair>, Vec<Diagnostic>, Vec<IndividualRecord>)> {
    let mut groups: BTreeMap<(usize, u8), Vec<IndividualRecord>> = BTreeMap::new();
    for r in &rows {
        groups.entry((r.pair, r.slot)).or_default().push(r.clone());
    }
    let mut clusters: BTreeMap<usize, [Option<Cluster>; 2]> = BTreeMap::new();
    for ((pair, slot), members) in &groups {
        let dose = members[0].dose;
        if members.iter().any(|r| r.dose != dose) {
            return Err(Error::Validation(format!(
                "pair {pair} slot {slot}: dose varies within the cluster"
            )));
        }
        let s = aggregate_cluster(members)?;
        clusters.entry(*pair).or_default()[usize::from(slot - 1)] = Some(Cluster {
            dose,
            n: s.n,
            sum_d: s.sum_d,
            sum_r: s.sum_r,
            xt: Vec::new(),
            xbar: s.xbar,
        });
    }
    let (pairs, notes) = assemble_pairs(clusters, opts)?;
    let kept_ids: Vec<usize> = pairs.iter().map(|p| p.id).collect();
    let kept = rows
        .into_iter()
        .filter(|r| kept_ids.contains(&r.pair))
        .collect();
    Ok((pairs, notes, kept))
}

fn covariate_header(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}{i}"))
}

/// Writes a study in the cluster-level CSV schema.
pub fn write_clusters_csv<W: Write>(writer: W, study: &Study) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["pair", "slot", "dose", "n", "sum_d", "sum_r"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(covariate_header("xt", study.n_cluster_covariates()));
    header.extend(covariate_header("xbar", study.n_individual_covariates()));
    w.write_record(&header)?;
    for pair in study.pairs() {
        for (j, c) in pair.clusters.iter().enumerate() {
            let mut rec = vec![
                pair.id.to_string(),
                (j + 1).to_string(),
                c.dose.to_string(),
                c.n.to_string(),
                c.sum_d.to_string(),
                c.sum_r.to_string(),
            ];
            rec.extend(c.xt.iter().map(f64::to_string));
            rec.extend(c.xbar.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A cluster awaiting matching.
#[derive(Debug, Clone, PartialEq)]
pub struct UnpairedCluster {
    /// Cluster label from the input.
    pub id: usize,
    /// Cluster data.
    pub cluster: Cluster,
}

/// Reads unmatched clusters with header `cluster,dose,n,sum_d,sum_r,xt1..,xbar1..`.
pub fn read_unpaired_csv<R: Read>(reader: R) -> Result<Vec<UnpairedCluster>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = Header::new(rdr.headers()?);
    let cols = [
        header.col("cluster")?,
        header.col("dose")?,
        header.col("n")?,
        header.col("sum_d")?,
        header.col("sum_r")?,
    ];
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        out.push(UnpairedCluster {
            id: parse_usize(&rec[cols[0]], "cluster", line)?,
            cluster: Cluster {
                dose: parse_f64(&rec[cols[1]], "dose", line)?,
                n: parse_usize(&rec[cols[2]], "n", line)?,
                sum_d: parse_f64(&rec[cols[3]], "sum_d", line)?,
                sum_r: parse_f64(&rec[cols[4]], "sum_r", line)?,
                xt: header
                    .xt
                    .iter()
                    .map(|&c| parse_f64(&rec[c], "xt", line))
                    .collect::<Result<_>>()?,
                xbar: header
                    .xbar
                    .iter()
                    .map(|&c| parse_f64(&rec[c], "xbar", line))
                    .collect::<Result<_>>()?,
            },
        });
    }
    Ok(out)
}

/// Writes unmatched clusters in the schema read by [`read_unpaired_csv`].
pub fn write_unpaired_csv<W: Write>(writer: W, clusters: &[UnpairedCluster]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let q = clusters.first().map_or(0, |c| c.cluster.xt.len());
    let p = clusters.first().map_or(0, |c| c.cluster.xbar.len());
    let mut header: Vec<String> = ["cluster", "dose", "n", "sum_d", "sum_r"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(covariate_header("xt", q));
    header.extend(covariate_header("xbar", p));
    w.write_record(&header)?;
    for u in clusters {
        let c = &u.cluster;
        let mut rec = vec![
            u.id.to_string(),
            c.dose.to_string(),
            c.n.to_string(),
            c.sum_d.to_string(),
            c.sum_r.to_string(),
        ];
        rec.extend(c.xt.iter().map(f64::to_string));
        rec.extend(c.xbar.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(pair: usize, slot: u8, d: f64, r: f64) -> IndividualRecord {
        IndividualRecord {
            pair,
            slot,
            dose: 0.5,
            treated: d,
            outcome: r,
            covariates: vec![],
        }
    }

    fn cluster(dose: f64, n: usize, sum_d: f64, sum_r: f64) -> Cluster {
        Cluster {
            dose,
            n,
            sum_d,
            sum_r,
            xt: vec![],
            xbar: vec![],
        }
    }

    #[test]
    fn aggregate_direct_sums() {
        let rows = vec![
            row(1, 1, 1.0, 0.0),
            row(1, 1, 0.0, 1.0),
            row(1, 1, 1.0, 0.0),
        ];
        let s = aggregate_cluster(&rows).unwrap();
        assert_eq!((s.n, s.sum_d, s.sum_r), (3, 2.0, 1.0));
    }

    #[test]
    fn aggregate_cancellation() {
        let s = aggregate_cluster(&[row(1, 1, 0.0, 5.0), row(1, 1, 0.0, -5.0)]).unwrap();
        assert_eq!((s.n, s.sum_d, s.sum_r), (2, 0.0, 0.0));
    }

    #[test]
    fn aggregate_rejects_empty_mixed_and_nonbinary() {
        assert!(aggregate_cluster(&[]).is_err());
        assert!(aggregate_cluster(&[row(1, 1, 0.0, 0.0), row(1, 2, 0.0, 0.0)]).is_err());
        assert!(aggregate_cluster(&[row(1, 1, 0.5, 0.0)]).is_err());
    }

    #[test]
    fn validate_flags_dose_tie() {
        let s = Study::new_unchecked(vec![
            Pair {
                id: 1,
                clusters: [cluster(0.5, 3, 1.0, 0.0), cluster(0.5, 3, 1.0, 0.0)],
            },
            Pair {
                id: 2,
                clusters: [cluster(0.7, 3, 2.0, 0.0), cluster(0.1, 3, 1.0, 0.0)],
            },
        ]);
        let d = validate_study(&s);
        assert!(d.iter().any(|d| d.code == "dose_tie" && d.pair == Some(1)));
        assert!(Study::new(s.pairs().to_vec()).is_err());
    }

    #[test]
    fn validate_flags_uninformative_encouraged() {
        let s = Study::new_unchecked(vec![
            Pair {
                id: 1,
                clusters: [cluster(0.9, 10, 0.0, 0.0), cluster(0.1, 10, 0.0, 0.0)],
            },
            Pair {
                id: 2,
                clusters: [cluster(0.7, 3, 2.0, 0.0), cluster(0.1, 3, 1.0, 0.0)],
            },
        ]);
        let d = validate_study(&s);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, "uninformative_cluster");
        assert_eq!(d[0].severity, Severity::Warning);
    }

    #[test]
    fn validate_well_formed_is_empty() {
        let s = Study::new(vec![
            Pair {
                id: 1,
                clusters: [cluster(0.9, 10, 6.0, 1.0), cluster(0.1, 10, 2.0, 0.0)],
            },
            Pair {
                id: 2,
                clusters: [cluster(0.2, 3, 1.0, 0.0), cluster(0.7, 3, 2.0, 0.0)],
            },
        ])
        .unwrap();
        assert!(validate_study(&s).is_empty());
        assert_eq!(s.pairs()[1].encouraged_slot(), 1);
        assert_eq!(s.pairs()[1].z(0), 0);
    }

    #[test]
    fn validate_covariate_length_mismatch() {
        let mut a = cluster(0.9, 10, 6.0, 1.0);
        a.xt = vec![1.0];
        let s = Study::new_unchecked(vec![
            Pair {
                id: 1,
                clusters: [a, cluster(0.1, 10, 2.0, 0.0)],
            },
            Pair {
                id: 2,
                clusters: [cluster(0.2, 3, 1.0, 0.0), cluster(0.7, 3, 2.0, 0.0)],
            },
        ]);
        assert!(validate_study(&s)
            .iter()
            .any(|d| d.code == "covariate_length"));
    }

    #[test]
    fn cluster_csv_round_trip() {
        let text = "pair,slot,dose,n,sum_d,sum_r,xt1,xbar1\n\
                    1,1,0.84,10,7,2,1.5,0.3\n1,2,0.29,12,3,1,2.5,0.4\n\
                    2,2,0.9,8,5,0,1,0.1\n2,1,0.2,9,1,1,0,0.2\n";
        let s = read_clusters_csv(text.as_bytes(), IngestOptions::default()).unwrap();
        assert_eq!(s.k(), 2);
        assert_eq!(s.pairs()[1].encouraged_slot(), 1);
        let mut buf = Vec::new();
        write_clusters_csv(&mut buf, &s).unwrap();
        let again = read_clusters_csv(buf.as_slice(), IngestOptions::default()).unwrap();
        assert_eq!(again.pairs(), s.pairs());
    }

    #[test]
    fn cluster_csv_dose_tie_is_rejected() {
        let text = "pair,slot,dose,n,sum_d,sum_r\n1,1,0.5,10,7,2\n1,2,0.5,12,3,1\n2,1,0.9,8,5,0\n2,2,0.2,9,1,1\n";
        let err = read_clusters_csv(text.as_bytes(), IngestOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Validation(m) if m.contains("pair 1")));
    }

    #[test]
    fn size_floor_removes_pairs() {
        let text = "pair,slot,dose,n,sum_d,sum_r\n1,1,0.9,10,7,2\n1,2,0.5,2,1,1\n2,1,0.9,8,5,0\n2,2,0.2,9,1,1\n3,1,0.9,8,5,0\n3,2,0.2,9,1,1\n";
        let s = read_clusters_csv(
            text.as_bytes(),
            IngestOptions {
                min_cluster_size: 5,
            },
        )
        .unwrap();
        assert_eq!(s.k(), 2);
        assert_eq!(s.ingest_notes.len(), 1);
    }

    #[test]
    fn individual_csv_aggregates() {
        let text = "pair,slot,dose,treated,outcome,x1\n\
                    1,1,0.8,1,0,1\n1,1,0.8,0,1,3\n1,2,0.2,0,0,2\n\
                    2,1,0.1,0,1,0\n2,2,0.6,1,0,0\n2,2,0.6,1,1,1\n";
        let s = read_individuals_csv(text.as_bytes(), IngestOptions::default()).unwrap();
        let c = &s.pairs()[0].clusters[0];
        assert_eq!(
            (c.n, c.sum_d, c.sum_r, c.xbar.clone()),
            (2, 1.0, 1.0, vec![2.0])
        );
        assert!(validate_study(&s).is_empty());
    }
}
