//! Key-value configuration files for the simulation experiments.
//!
//! One `key = value` per line; blank lines and text after `#` are ignored.
//! Lists are comma separated. Unknown keys are rejected so that typos do not
//! silently fall back to defaults.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matching::DistanceSpec;
use crate::sim::acer_dgp::AcerDgpConfig;
use crate::sim::acer_runs::AcerExperiment;
use crate::sim::confound::{ConfoundAnalysisOptions, ConfoundDgpConfig};

/// Parsed key-value pairs; keys are consumed as they are read.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvConfig {
    /// Parses the text of a configuration file.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("config line {}: expected key = value", i + 1))
            })?;
            let key = key.trim().to_ascii_lowercase();
            if entries
                .insert(key.clone(), (i + 1, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::Parse(format!(
                    "config line {}: duplicate key {key:?}",
                    i + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Removes and parses `key`.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| {
                Error::Parse(format!("config line {line}: cannot parse {key} = {v:?}"))
            }),
        }
    }

    /// Removes and parses the comma-separated list under `key`.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| {
                        Error::Parse(format!("config line {line}: bad list entry {s:?} in {key}"))
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Fails if any key was never read.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (line, _))) => Err(Error::Parse(format!(
                "config line {line}: unknown key {key:?}"
            ))),
        }
    }
}

fn set<T: FromStr>(kv: &mut KvConfig, key: &str, slot: &mut T) -> Result<()> {
    if let Some(v) = kv.take(key)? {
        *slot = v;
    }
    Ok(())
}

fn fixed_list<const N: usize>(kv: &mut KvConfig, key: &str, slot: &mut [f64; N]) -> Result<()> {
    if let Some(v) = kv.take_list::<f64>(key)? {
        *slot = v.try_into().map_err(|v: Vec<f64>| {
            Error::Parse(format!("{key} needs {N} values, got {}", v.len()))
        })?;
    }
    Ok(())
}

/// Settings of an ACER size or timing run read from a configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct AcerRunConfig {
    /// Experiment settings.
    pub experiment: AcerExperiment,
    /// Values of `K` for a timing run (defaults to the single `k`).
    pub ks: Vec<usize>,
}

/// Reads `k, n, probs, beta, spread, seed, iota_min, alpha, lambda_offset,
/// ks, max_nodes, time_limit` (all optional).
pub fn acer_run_config(text: &str) -> Result<AcerRunConfig> {
    let mut kv = KvConfig::parse(text)?;
    let mut dgp = AcerDgpConfig::default();
    set(&mut kv, "k", &mut dgp.k)?;
    set(&mut kv, "n", &mut dgp.n)?;
    fixed_list(&mut kv, "probs", &mut dgp.probs)?;
    set(&mut kv, "beta", &mut dgp.beta)?;
    set(&mut kv, "spread", &mut dgp.spread)?;
    set(&mut kv, "seed", &mut dgp.seed)?;
    let mut exp = AcerExperiment::new(dgp);
    exp.iota_min = kv.take("iota_min")?;
    set(&mut kv, "alpha", &mut exp.alpha)?;
    set(&mut kv, "lambda_offset", &mut exp.lambda_offset)?;
    set(&mut kv, "max_nodes", &mut exp.options.solver.max_nodes)?;
    if let Some(secs) = kv.take::<f64>("time_limit")? {
        if !(secs > 0.0) {
            return Err(Error::Parse("time_limit must be positive".into()));
        }
        exp.options.solver.time_limit = Some(std::time::Duration::from_secs_f64(secs));
    }
    let ks = kv.take_list("ks")?.unwrap_or_else(|| vec![exp.dgp.k]);
    kv.finish()?;
    exp.dgp.validate()?;
    if !(exp.alpha > 0.0 && exp.alpha < 1.0) {
        return Err(Error::Parse(format!(
            "alpha must lie in (0,1), got {}",
            exp.alpha
        )));
    }
    Ok(AcerRunConfig {
        experiment: exp,
        ks,
    })
}

/// Reads the confounded-world parameters (`clusters, n, mu, sigma, sigma_e,
/// sigma_u, rho, gamma0, gamma1, eta, beta, beta1, beta2, seed`) and the
/// analysis settings (`huber_c, alpha, cluster_penalty,
/// cluster_dose_gap, individual_penalty, individual_dose_gap, block`).
pub fn confound_config(text: &str) -> Result<(ConfoundDgpConfig, ConfoundAnalysisOptions)> {
    let mut kv = KvConfig::parse(text)?;
    let mut c = ConfoundDgpConfig::default();
    set(&mut kv, "clusters", &mut c.clusters)?;
    set(&mut kv, "n", &mut c.n)?;
    set(&mut kv, "mu", &mut c.mu)?;
    set(&mut kv, "sigma", &mut c.sigma)?;
    set(&mut kv, "sigma_e", &mut c.sigma_e)?;
    set(&mut kv, "sigma_u", &mut c.sigma_u)?;
    set(&mut kv, "rho", &mut c.rho)?;
    set(&mut kv, "gamma0", &mut c.gamma0)?;
    set(&mut kv, "gamma1", &mut c.gamma1)?;
    fixed_list(&mut kv, "eta", &mut c.eta)?;
    set(&mut kv, "beta", &mut c.beta)?;
    set(&mut kv, "beta1", &mut c.beta1)?;
    set(&mut kv, "beta2", &mut c.beta2)?;
    set(&mut kv, "seed", &mut c.seed)?;
    let mut o = ConfoundAnalysisOptions::default();
    set(&mut kv, "huber_c", &mut o.huber_c)?;
    set(&mut kv, "alpha", &mut o.alpha)?;
    set_spec(&mut kv, "cluster", &mut o.cluster_spec)?;
    set_spec(&mut kv, "individual", &mut o.individual_spec)?;
    set(&mut kv, "block", &mut o.block)?;
    kv.finish()?;
    c.validate()?;
    if !(o.alpha > 0.0 && o.alpha < 1.0) || !(o.huber_c > 0.0) {
        return Err(Error::Parse(
            "alpha must lie in (0,1) and huber_c must be positive".into(),
        ));
    }
    Ok((c, o))
}

fn set_spec(kv: &mut KvConfig, prefix: &str, spec: &mut DistanceSpec) -> Result<()> {
    set(kv, &format!("{prefix}_penalty"), &mut spec.penalty)?;
    set(
        kv,
        &format!("{prefix}_dose_gap"),
        &mut spec.dose_gap_threshold,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_lists_and_defaults() {
        let cfg = acer_run_config("k = 40 # pairs\n\nprobs = 0.5, 0.25, 0.25\nks=10,20\n").unwrap();
        assert_eq!(cfg.experiment.dgp.k, 40);
        assert_eq!(cfg.experiment.dgp.probs, [0.5, 0.25, 0.25]);
        assert_eq!(cfg.ks, vec![10, 20]);
        assert_eq!(cfg.experiment.dgp.n, 10);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed_keys() {
        assert!(acer_run_config("kk = 3").is_err());
        assert!(acer_run_config("k = 3\nk = 4").is_err());
        assert!(acer_run_config("k 3").is_err());
        assert!(acer_run_config("probs = 0.5, 0.5").is_err());
        assert!(confound_config("rho = 1.5").is_err());
    }

    #[test]
    fn confound_keys_reach_both_structs() {
        let (c, o) =
            confound_config("clusters = 50\nrho = 0\ncluster_dose_gap = 0.7\nblock = 8").unwrap();
        assert_eq!(c.clusters, 50);
        assert_eq!(c.rho, 0.0);
        assert_eq!(o.cluster_spec.dose_gap_threshold, 0.7);
        assert_eq!(o.block, 8);
    }
}
