//! Sign certification for `min ρ(CO)` over integer compliance boxes.
//!
//! The decision vector has `2K` integer coordinates `CO_i` and their
//! reciprocals `CO′_i = 1/CO_i`. The objective is a quadratic in the
//! reciprocals, `ρ = yᵀ Q_final y + q_finalᵀ y + constant` with `y = CO′`, and
//! the feasible set is the product of integer boxes intersected with the slab
//! `L ≤ a₁ᵀCO ≤ U`.
//!
//! Coordinates are ordered slot-major: index `i = s·K + k` for pair `k` and
//! slot `s`, where slot 0 is the encouraged cluster.

mod bnb;
mod envelope;
mod oracle;
mod relax;

pub use bnb::{
    dinkelbach_min_ratio, solve, BoundRecord, RatioOutcome, SolveMode, SolveOptions, SolveOutcome,
    SolveStatus,
};
pub use envelope::{reciprocal_envelope, ReciprocalEnvelope};
pub use oracle::{enumerate_oracle, OracleOutcome, DEFAULT_ORACLE_CAP};

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Absolute slack added to both ends of `[L, U]` when assembling a problem.
///
/// Average compliance rates are sums of fractions that lie exactly on an end
/// point in some studies (a degenerate interval `L = U`, for instance); the
/// slack keeps such points feasible regardless of summation order.
pub const NORM_SLACK: f64 = 1e-12;

/// Ingredients of the ACER objective for one hypothesized `λ0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AcerInstance {
    /// Outcome sums `ΣR` per pair as (encouraged, control).
    pub r: Vec<[f64; 2]>,
    /// Cluster sizes per pair as (encouraged, control).
    pub n: Vec<[usize; 2]>,
    /// Lower compliance bounds per pair as (encouraged, control).
    pub lo: Vec<[i64; 2]>,
    /// Upper compliance bounds per pair as (encouraged, control).
    pub hi: Vec<[i64; 2]>,
    /// Hypothesized effect ratio.
    pub lambda0: f64,
    /// Critical value `χ²` multiplying the variance form.
    pub chi2: f64,
    /// Leverages `h_k` of the design.
    pub leverage: Vec<f64>,
    /// Orthonormal design basis `U` (`K × p`).
    pub basis: DMatrix<f64>,
    /// Interval `[L, U]` for the average compliance rate.
    pub sco: (f64, f64),
}

impl AcerInstance {
    /// Number of pairs.
    pub fn k(&self) -> usize {
        self.r.len()
    }

    /// Pair contrasts `V_k = ΣR_k1/CO_k1 − ΣR_k2/CO_k2 − λ0` for slot-major `co`.
    pub fn contrasts(&self, co: &[i64]) -> Vec<f64> {
        let k = self.k();
        (0..k)
            .map(|p| self.r[p][0] / co[p] as f64 - self.r[p][1] / co[k + p] as f64 - self.lambda0)
            .collect()
    }

    /// Numerator `K²V̄²` and variance form `V_Qᵀ(I − H)V_Q` at `co`.
    pub fn ratio_parts(&self, co: &[i64]) -> (f64, f64) {
        let v = self.contrasts(co);
        let sum: f64 = v.iter().sum();
        let vq = DVector::from_fn(v.len(), |i, _| v[i] / (1.0 - self.leverage[i]).sqrt());
        let proj = self.basis.transpose() * &vq;
        (
            sum * sum,
            (vq.norm_squared() - proj.norm_squared()).max(0.0),
        )
    }

    /// The same instance with `χ²` replaced by `chi2`.
    pub fn with_chi2(&self, chi2: f64) -> Self {
        Self {
            chi2,
            ..self.clone()
        }
    }
}

/// A reciprocal-coupled integer quadratic program.
#[derive(Debug, Clone, PartialEq)]
pub struct MiqcpProblem {
    /// Number of pairs `K`; there are `2K` integer coordinates.
    pub k: usize,
    /// Symmetric `2K × 2K` matrix acting on the reciprocals.
    pub q_final: DMatrix<f64>,
    /// Linear term acting on the reciprocals.
    pub q_lin: DVector<f64>,
    /// Constant term.
    pub constant: f64,
    /// Integer lower bounds of `CO`.
    pub lo: Vec<i64>,
    /// Integer upper bounds of `CO`.
    pub hi: Vec<i64>,
    /// Norm row `a₁` (`a₁ᵀCO ≤ b₁`).
    pub a1: Vec<f64>,
    /// Right-hand side `b₁ = U`.
    pub b1: f64,
    /// Norm row `a₂ = −a₁` (`a₂ᵀCO ≤ b₂`).
    pub a2: Vec<f64>,
    /// Right-hand side `b₂ = −L`.
    pub b2: f64,
    /// ACER ingredients when the problem was assembled from data.
    pub acer: Option<AcerInstance>,
}

impl MiqcpProblem {
    /// Assembles the problem for an ACER instance.
    ///
    /// The norm rows encode `L − NORM_SLACK ≤ a₁ᵀCO ≤ U + NORM_SLACK`.
    ///
    /// With `P = eeᵀ + χ²ΛHΛ − χ²Λ²`, `Λ = diag(1/√(1 − h))` and `V = My − λ0e`,
    /// `ρ = VᵀPV = K²V̄² − χ²V_Qᵀ(I − H)V_Q`, so `Q_final = MᵀPM`,
    /// `q_final = −2λ0MᵀPe` and `constant = λ0²eᵀPe`.
    pub fn from_acer(inst: &AcerInstance) -> Result<Self> {
        let k = inst.k();
        if k == 0
            || inst.n.len() != k
            || inst.lo.len() != k
            || inst.hi.len() != k
            || inst.leverage.len() != k
        {
            return Err(Error::InvalidArgument(
                "inconsistent ACER instance dimensions".into(),
            ));
        }
        if inst.basis.nrows() != k {
            return Err(Error::InvalidArgument(
                "design basis has the wrong number of rows".into(),
            ));
        }
        for p in 0..k {
            for s in 0..2 {
                if inst.lo[p][s] < 1 || inst.lo[p][s] > inst.hi[p][s] {
                    return Err(Error::InvalidArgument(format!(
                        "pair index {p}, slot {s}: empty compliance box [{}, {}]",
                        inst.lo[p][s], inst.hi[p][s]
                    )));
                }
            }
        }
        if !(inst.sco.0 <= inst.sco.1) {
            return Err(Error::InvalidArgument(format!(
                "norm interval [{}, {}] is empty",
                inst.sco.0, inst.sco.1
            )));
        }
        if let Some(h) = inst
            .leverage
            .iter()
            .find(|&&h| h >= 1.0 - crate::design::LEVERAGE_LIMIT)
        {
            return Err(Error::Leverage {
                row: inst.leverage.iter().position(|x| x == h).unwrap_or(0),
                value: *h,
            });
        }
        let lam = DVector::from_iterator(k, inst.leverage.iter().map(|h| 1.0 / (1.0 - h).sqrt()));
        let hat = &inst.basis * inst.basis.transpose();
        let mut p = DMatrix::from_element(k, k, 1.0);
        for i in 0..k {
            for j in 0..k {
                p[(i, j)] += inst.chi2 * lam[i] * hat[(i, j)] * lam[j];
            }
            p[(i, i)] -= inst.chi2 * lam[i] * lam[i];
        }
        let mut m = DMatrix::zeros(k, 2 * k);
        for i in 0..k {
            m[(i, i)] = inst.r[i][0];
            m[(i, k + i)] = -inst.r[i][1];
        }
        let e = DVector::from_element(k, 1.0);
        let pe = &p * &e;
        let mut q_final = m.transpose() * &p * &m;
        symmetrize(&mut q_final);
        let q_lin = m.transpose() * &pe * (-2.0 * inst.lambda0);
        let constant = inst.lambda0 * inst.lambda0 * e.dot(&pe);
        let mut lo = vec![0; 2 * k];
        let mut hi = vec![0; 2 * k];
        let mut a1 = vec![0.0; 2 * k];
        for pidx in 0..k {
            for s in 0..2 {
                let i = s * k + pidx;
                lo[i] = inst.lo[pidx][s];
                hi[i] = inst.hi[pidx][s];
                a1[i] = 1.0 / (2.0 * k as f64 * inst.n[pidx][s] as f64);
            }
        }
        let a2 = a1.iter().map(|v| -v).collect();
        Ok(Self {
            k,
            q_final,
            q_lin,
            constant,
            lo,
            hi,
            a1,
            b1: inst.sco.1 + NORM_SLACK,
            a2,
            b2: -inst.sco.0 + NORM_SLACK,
            acer: Some(inst.clone()),
        })
    }

    /// Number of integer coordinates (`2K`).
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Norm interval `[L, U]`.
    pub fn norm_interval(&self) -> (f64, f64) {
        (-self.b2, self.b1)
    }

    /// Box of the reciprocal `CO′_i`: `[1/hi, 1/lo]`.
    pub fn reciprocal_box(&self, i: usize) -> (f64, f64) {
        (1.0 / self.hi[i] as f64, 1.0 / self.lo[i] as f64)
    }

    /// `a₁ᵀCO`, summed in coordinate order.
    pub fn norm_value(&self, co: &[i64]) -> f64 {
        self.a1.iter().zip(co).map(|(a, &c)| a * c as f64).sum()
    }

    /// Whether `co` lies in the boxes and satisfies both norm rows.
    pub fn is_feasible(&self, co: &[i64]) -> bool {
        if co.len() != self.dim() {
            return false;
        }
        let in_box = co
            .iter()
            .enumerate()
            .all(|(i, &c)| c >= self.lo[i] && c <= self.hi[i]);
        let t = self.norm_value(co);
        let (l, u) = self.norm_interval();
        in_box && t <= u && t >= l
    }

    /// `ρ` at `co` through `(Q_final, q_final, constant)`.
    pub fn evaluate(&self, co: &[i64]) -> f64 {
        let y = DVector::from_iterator(co.len(), co.iter().map(|&c| 1.0 / c as f64));
        (&self.q_final * &y).dot(&y) + self.q_lin.dot(&y) + self.constant
    }

    /// Number of integer points in the boxes (saturating).
    pub fn box_count(&self) -> u128 {
        self.lo.iter().zip(&self.hi).fold(1u128, |acc, (&l, &h)| {
            acc.saturating_mul((h - l + 1).max(0) as u128)
        })
    }

    /// The same problem restricted to the boxes `[lo, hi]`.
    pub fn restrict(&self, lo: Vec<i64>, hi: Vec<i64>) -> Self {
        let mut p = self.clone();
        p.lo = lo;
        p.hi = hi;
        if let Some(inst) = &mut p.acer {
            let k = inst.k();
            for pi in 0..k {
                for s in 0..2 {
                    inst.lo[pi][s] = p.lo[s * k + pi];
                    inst.hi[pi][s] = p.hi[s * k + pi];
                }
            }
        }
        p
    }

    /// Line-oriented text dump that [`MiqcpProblem::load`] reads back exactly.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let join_f = |v: &mut dyn Iterator<Item = f64>| {
            v.map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
        };
        let join_i = |v: &[i64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(out, "miqcp-dump 1");
        let _ = writeln!(out, "k {}", self.k);
        let _ = writeln!(out, "constant {:?}", self.constant);
        for i in 0..self.dim() {
            let _ = writeln!(
                out,
                "Q {i} {}",
                join_f(&mut (0..=i).map(|j| self.q_final[(i, j)]))
            );
        }
        let _ = writeln!(out, "q {}", join_f(&mut self.q_lin.iter().copied()));
        let _ = writeln!(out, "lo {}", join_i(&self.lo));
        let _ = writeln!(out, "hi {}", join_i(&self.hi));
        let _ = writeln!(out, "a1 {}", join_f(&mut self.a1.iter().copied()));
        let _ = writeln!(out, "b1 {:?}", self.b1);
        let _ = writeln!(out, "a2 {}", join_f(&mut self.a2.iter().copied()));
        let _ = writeln!(out, "b2 {:?}", self.b2);
        out
    }

    /// Parses a dump written by [`MiqcpProblem::dump`].
    ///
    /// The loaded problem carries no ACER ingredients. The second norm row
    /// must be the negation of the first.
    pub fn load(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty dump".into()))?;
        if header != "miqcp-dump 1" {
            return Err(Error::Parse(format!("unknown dump header `{header}`")));
        }
        let mut k = None;
        let mut constant = None;
        let mut qrows: Vec<Vec<f64>> = Vec::new();
        let (mut q, mut a1, mut a2) = (None, None, None);
        let (mut lo, mut hi) = (None, None);
        let (mut b1, mut b2) = (None, None);
        let floats = |it: std::str::SplitWhitespace| -> Result<Vec<f64>> {
            it.map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad number `{s}`")))
            })
            .collect()
        };
        let ints = |it: std::str::SplitWhitespace| -> Result<Vec<i64>> {
            it.map(|s| {
                s.parse::<i64>()
                    .map_err(|_| Error::Parse(format!("bad integer `{s}`")))
            })
            .collect()
        };
        let scalar = |it: std::str::SplitWhitespace, key: &str| -> Result<f64> {
            let v = floats(it)?;
            if v.len() != 1 {
                return Err(Error::Parse(format!("`{key}` needs one value")));
            }
            Ok(v[0])
        };
        for line in lines {
            let mut it = line.split_whitespace();
            let key = it.next().unwrap_or_default();
            match key {
                "k" => {
                    k = Some(
                        it.next()
                            .and_then(|s| s.parse::<usize>().ok())
                            .ok_or_else(|| Error::Parse("bad `k` line".into()))?,
                    )
                }
                "constant" => constant = Some(scalar(it, key)?),
                "Q" => {
                    let idx: usize = it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::Parse("bad `Q` row index".into()))?;
                    if idx != qrows.len() {
                        return Err(Error::Parse(format!("`Q` row {idx} out of order")));
                    }
                    let row = floats(it)?;
                    if row.len() != idx + 1 {
                        return Err(Error::Parse(format!(
                            "`Q` row {idx} has {} entries",
                            row.len()
                        )));
                    }
                    qrows.push(row);
                }
                "q" => q = Some(floats(it)?),
                "lo" => lo = Some(ints(it)?),
                "hi" => hi = Some(ints(it)?),
                "a1" => a1 = Some(floats(it)?),
                "a2" => a2 = Some(floats(it)?),
                "b1" => b1 = Some(scalar(it, key)?),
                "b2" => b2 = Some(scalar(it, key)?),
                other => return Err(Error::Parse(format!("unknown dump key `{other}`"))),
            }
        }
        let missing = |name: &str| Error::Parse(format!("dump lacks `{name}`"));
        let k = k.ok_or_else(|| missing("k"))?;
        let dim = 2 * k;
        let q = q.ok_or_else(|| missing("q"))?;
        let lo = lo.ok_or_else(|| missing("lo"))?;
        let hi = hi.ok_or_else(|| missing("hi"))?;
        let a1 = a1.ok_or_else(|| missing("a1"))?;
        let a2 = a2.ok_or_else(|| missing("a2"))?;
        if qrows.len() != dim
            || [q.len(), lo.len(), hi.len(), a1.len(), a2.len()]
                .iter()
                .any(|&l| l != dim)
        {
            return Err(Error::Parse(format!(
                "dump dimensions do not match k = {k}"
            )));
        }
        if a1.iter().zip(&a2).any(|(x, y)| *y != -*x) {
            return Err(Error::Parse(
                "second norm row must be the negation of the first".into(),
            ));
        }
        if lo.iter().zip(&hi).any(|(&l, &h)| l < 1 || l > h) {
            return Err(Error::Parse("boxes must satisfy 1 ≤ lo ≤ hi".into()));
        }
        let mut q_final = DMatrix::zeros(dim, dim);
        for (i, row) in qrows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                q_final[(i, j)] = v;
                q_final[(j, i)] = v;
            }
        }
        Ok(Self {
            k,
            q_final,
            q_lin: DVector::from_vec(q),
            constant: constant.ok_or_else(|| missing("constant"))?,
            lo,
            hi,
            a1,
            b1: b1.ok_or_else(|| missing("b1"))?,
            a2,
            b2: b2.ok_or_else(|| missing("b2"))?,
            acer: None,
        })
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}
