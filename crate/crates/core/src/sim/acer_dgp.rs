//! Compliance-stratum world for the ACER size and timing experiments.
//!
//! Each cluster draws its complier / always-taker / never-taker counts from a
//! multinomial law, a cluster effect `β_kj ~ N(β, spread²)` and a control
//! outcome sum `Σr_C ~ N(0, 1)`. One cluster per pair is encouraged at random.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Cluster, Pair, PotentialOutcomeCluster, Study};
use crate::error::{Error, Result};

/// Configuration of the compliance-stratum world.
#[derive(Debug, Clone, PartialEq)]
pub struct AcerDgpConfig {
    /// Number of matched pairs `K`.
    pub k: usize,
    /// Individuals per cluster.
    pub n: usize,
    /// Stratum probabilities `(ι_C, ι_A, ι_N)`.
    pub probs: [f64; 3],
    /// Centre `β` of the cluster effects.
    pub beta: f64,
    /// Standard deviation of the cluster effects.
    pub spread: f64,
    /// Seed of the random stream.
    pub seed: u64,
}

impl Default for AcerDgpConfig {
    fn default() -> Self {
        Self {
            k: 100,
            n: 10,
            probs: [0.25, 0.25, 0.5],
            beta: 1.0,
            spread: 1.0,
            seed: 1,
        }
    }
}

impl AcerDgpConfig {
    /// Checks the probabilities, sizes and spread.
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.probs.iter().sum();
        if self.probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "stratum probabilities {:?} must be nonnegative and sum to 1",
                self.probs
            )));
        }
        if self.probs[0] == 0.0 {
            return Err(Error::InvalidArgument(
                "complier probability must be positive".into(),
            ));
        }
        if self.k < 2 || self.n == 0 {
            return Err(Error::InvalidArgument(
                "need at least two pairs and nonempty clusters".into(),
            ));
        }
        if !(self.spread >= 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidArgument(
                "effect spread must be nonnegative and β finite".into(),
            ));
        }
        Ok(())
    }

    /// Compliance floor every generated cluster satisfies: one complier out of `n`.
    pub fn iota_floor(&self) -> f64 {
        1.0 / self.n as f64
    }
}

/// One generated world.
#[derive(Debug, Clone)]
pub struct AcerWorld {
    /// The observed study (encouraged dose 1, control dose 0).
    pub study: Study,
    /// Potential outcomes per pair, in slot order.
    pub potential: Vec<[PotentialOutcomeCluster; 2]>,
    /// Stratum counts `(CO, AT, NT)` per pair, in slot order.
    pub strata: Vec<[[usize; 3]; 2]>,
    /// Average cluster effect ratio of the potential outcomes.
    pub lambda_acer: f64,
    /// Pooled effect ratio of the potential outcomes.
    pub lambda_per: f64,
    /// Number of multinomial draws discarded because `CO = 0`.
    pub redraws: usize,
}

/// Draws `(CO, AT, NT)` by sequential categorical sampling of `n` individuals.
pub fn multinomial3(rng: &mut ChaCha8Rng, n: usize, probs: [f64; 3]) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for _ in 0..n {
        let u: f64 = rng.random();
        let cat = if u < probs[0] {
            0
        } else if u < probs[0] + probs[1] {
            1
        } else {
            2
        };
        counts[cat] += 1;
    }
    counts
}

/// Generates the world for `cfg` from `rng`; fails when `cfg` is invalid.
///
/// Clusters drawing no complier are redrawn so that every cluster has a
/// positive compliance; the count of discarded draws is recorded.
pub fn gen_acer_world(cfg: &AcerDgpConfig, rng: &mut ChaCha8Rng) -> Result<AcerWorld> {
    cfg.validate()?;
    let effect =
        Normal::new(cfg.beta, cfg.spread).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut redraws = 0;
    let mut pairs = Vec::with_capacity(cfg.k);
    let mut potential = Vec::with_capacity(cfg.k);
    let mut strata = Vec::with_capacity(cfg.k);
    let (mut ratio_sum, mut num, mut den) = (0.0, 0.0, 0.0);
    for k in 0..cfg.k {
        let mut po = [PotentialOutcomeCluster {
            sum_d_t: 0.0,
            sum_d_c: 0.0,
            sum_r_t: 0.0,
            sum_r_c: 0.0,
        }; 2];
        let mut st = [[0usize; 3]; 2];
        for j in 0..2 {
            let counts = loop {
                let c = multinomial3(rng, cfg.n, cfg.probs);
                if c[0] > 0 {
                    break c;
                }
                redraws += 1;
            };
            let beta_kj = effect.sample(rng);
            let r_c = std_normal.sample(rng);
            let co = counts[0] as f64;
            let at = counts[1] as f64;
            po[j] = PotentialOutcomeCluster {
                sum_d_t: co + at,
                sum_d_c: at,
                sum_r_t: r_c + beta_kj * co,
                sum_r_c: r_c,
            };
            assert!(
                po[j].sum_d_t >= po[j].sum_d_c,
                "monotonicity violated in pair {k} slot {j}"
            );
            st[j] = counts;
            ratio_sum += (po[j].sum_r_t - po[j].sum_r_c) / co;
            num += po[j].sum_r_t - po[j].sum_r_c;
            den += co;
        }
        let enc = usize::from(rng.random_bool(0.5));
        let clusters = [0usize, 1].map(|j| {
            let encouraged = j == enc;
            Cluster {
                dose: if encouraged { 1.0 } else { 0.0 },
                n: cfg.n,
                sum_d: if encouraged {
                    po[j].sum_d_t
                } else {
                    po[j].sum_d_c
                },
                sum_r: if encouraged {
                    po[j].sum_r_t
                } else {
                    po[j].sum_r_c
                },
                xt: Vec::new(),
                xbar: Vec::new(),
            }
        });
        pairs.push(Pair {
            id: k + 1,
            clusters,
        });
        potential.push(po);
        strata.push(st);
    }
    let mut study = Study::new(pairs)?;
    study.source = format!("acer-dgp seed {}", cfg.seed);
    Ok(AcerWorld {
        study,
        potential,
        strata,
        lambda_acer: ratio_sum / (2 * cfg.k) as f64,
        lambda_per: num / den,
        redraws,
    })
}
