//! Convex relaxation over mixtures of per-block integer options.
//!
//! The objective is written as
//! `F = ‖Σ_b a_b z_b + a₀‖² + Σ_b cost_b + constant`, where each block `b`
//! picks one option `o` carrying a scalar `z_b(o)`, a separable cost
//! `cost_b(o)` (which may be concave in `z`) and a norm contribution `t_b(o)`.
//! Replacing each block's choice by a probability mixture over its options
//! gives a convex problem over a product of simplices cut by the slab
//! `L ≤ Σ E[t_b] ≤ U`; its minimum never exceeds the integer minimum, and its
//! value at a pure choice equals `ρ`.
//!
//! For problems assembled from ACER data the blocks are pairs,
//! `z = ΣR₁/CO₁ − ΣR₂/CO₂`, `cost = −χ²(z − λ0)²/(1 − h)` and `a_b` is column
//! `b` of `[eᵀ; √χ²·UᵀΛ]`. For loaded dumps the blocks are single coordinates
//! with `z = 1/CO`, the indefinite part of `Q_final` is moved into
//! `cost = s·z² + q·z` with `s = min(0, λ_min(Q_final))`, and the remainder
//! `Q_final − sI` is factored as `AᵀA`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::MiqcpProblem;
use crate::error::{Error, Result};

/// `f64` ordered by `total_cmp`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct OrdF64(pub(crate) f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone)]
enum BlockSpec {
    Pair {
        idx: [usize; 2],
        r: [f64; 2],
        lambda0: f64,
        c: f64,
    },
    Single {
        idx: usize,
        s: f64,
        q: f64,
    },
}

/// Block decomposition of a problem's objective.
#[derive(Debug, Clone)]
pub(crate) struct Structure {
    a: DMatrix<f64>,
    a0: DVector<f64>,
    constant: f64,
    blocks: Vec<BlockSpec>,
    col_norm2: Vec<f64>,
    a1: Vec<f64>,
    pub(crate) lower: f64,
    pub(crate) upper: f64,
    dim: usize,
}

impl Structure {
    pub(crate) fn from_problem(p: &MiqcpProblem) -> Result<Self> {
        let (lower, upper) = p.norm_interval();
        let dim = p.dim();
        let (a, a0, constant, blocks) = match &p.acer {
            Some(inst) => {
                if !(inst.chi2 >= 0.0) {
                    return Err(Error::InvalidArgument(
                        "critical value must be nonnegative".into(),
                    ));
                }
                let k = inst.k();
                let pdim = inst.basis.ncols();
                let mut b = DMatrix::zeros(1 + pdim, k);
                let sq = inst.chi2.sqrt();
                for j in 0..k {
                    b[(0, j)] = 1.0;
                    let lam = 1.0 / (1.0 - inst.leverage[j]).sqrt();
                    for r in 0..pdim {
                        b[(1 + r, j)] = sq * inst.basis[(j, r)] * lam;
                    }
                }
                let a0 = -(&b * DVector::from_element(k, 1.0)) * inst.lambda0;
                let blocks = (0..k)
                    .map(|j| BlockSpec::Pair {
                        idx: [j, k + j],
                        r: inst.r[j],
                        lambda0: inst.lambda0,
                        c: inst.chi2 / (1.0 - inst.leverage[j]),
                    })
                    .collect();
                (b, a0, 0.0, blocks)
            }
            None => {
                let eig = SymmetricEigen::new(p.q_final.clone());
                let lmin = eig
                    .eigenvalues
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                let s = lmin.min(0.0);
                let mut a = eig.eigenvectors.transpose();
                for (r, &lam) in eig.eigenvalues.iter().enumerate() {
                    let w = (lam - s).max(0.0).sqrt();
                    a.row_mut(r).scale_mut(w);
                }
                let blocks = (0..dim)
                    .map(|i| BlockSpec::Single {
                        idx: i,
                        s,
                        q: p.q_lin[i],
                    })
                    .collect();
                (a, DVector::zeros(dim), p.constant, blocks)
            }
        };
        let col_norm2 = (0..a.ncols()).map(|j| a.column(j).norm_squared()).collect();
        Ok(Self {
            a,
            a0,
            constant,
            blocks,
            col_norm2,
            a1: p.a1.clone(),
            lower,
            upper,
            dim,
        })
    }

    pub(crate) fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Options of block `b` inside the boxes `[lo, hi]`.
    pub(crate) fn options(&self, b: usize, lo: &[i64], hi: &[i64]) -> BlockOptions {
        match &self.blocks[b] {
            BlockSpec::Pair { idx, r, lambda0, c } => {
                let w = [hi[idx[0]] - lo[idx[0]] + 1, hi[idx[1]] - lo[idx[1]] + 1];
                let n = (w[0] * w[1]) as usize;
                let mut z = Vec::with_capacity(n);
                let mut cost = Vec::with_capacity(n);
                let mut t = Vec::with_capacity(n);
                for c0 in lo[idx[0]]..=hi[idx[0]] {
                    let z0 = r[0] / c0 as f64;
                    let t0 = self.a1[idx[0]] * c0 as f64;
                    for c1 in lo[idx[1]]..=hi[idx[1]] {
                        let zz = z0 - r[1] / c1 as f64;
                        let v = zz - lambda0;
                        z.push(zz);
                        cost.push(-c * v * v);
                        t.push(t0 + self.a1[idx[1]] * c1 as f64);
                    }
                }
                BlockOptions::new(
                    vec![idx[0], idx[1]],
                    vec![lo[idx[0]], lo[idx[1]]],
                    vec![w[0], w[1]],
                    z,
                    cost,
                    t,
                )
            }
            BlockSpec::Single { idx, s, q } => {
                let mut z = Vec::new();
                let mut cost = Vec::new();
                let mut t = Vec::new();
                for c0 in lo[*idx]..=hi[*idx] {
                    let y = 1.0 / c0 as f64;
                    z.push(y);
                    cost.push(s * y * y + q * y);
                    t.push(self.a1[*idx] * c0 as f64);
                }
                BlockOptions::new(
                    vec![*idx],
                    vec![lo[*idx]],
                    vec![hi[*idx] - lo[*idx] + 1],
                    z,
                    cost,
                    t,
                )
            }
        }
    }

    /// `ρ` at a pure choice.
    pub(crate) fn eval_choice(&self, opts: &[BlockOptions], choice: &[u32]) -> f64 {
        let mut r = self.a0.clone();
        let mut c = self.constant;
        for (b, (bo, &o)) in opts.iter().zip(choice).enumerate() {
            r.axpy(bo.z[o as usize], &self.a.column(b), 1.0);
            c += bo.cost[o as usize];
        }
        r.norm_squared() + c
    }
}

/// Integer options of one block at one node, in odometer order.
#[derive(Debug, Clone)]
pub(crate) struct BlockOptions {
    clusters: Vec<usize>,
    lo: Vec<i64>,
    width: Vec<i64>,
    z: Vec<f64>,
    cost: Vec<f64>,
    t: Vec<f64>,
    by_t: Vec<u32>,
    t_min: f64,
    t_max: f64,
}

impl BlockOptions {
    fn new(
        clusters: Vec<usize>,
        lo: Vec<i64>,
        width: Vec<i64>,
        z: Vec<f64>,
        cost: Vec<f64>,
        t: Vec<f64>,
    ) -> Self {
        let mut by_t: Vec<u32> = (0..t.len() as u32).collect();
        by_t.sort_by(|&a, &b| t[a as usize].total_cmp(&t[b as usize]).then(a.cmp(&b)));
        let t_min = t[by_t[0] as usize];
        let t_max = t[*by_t.last().expect("blocks have at least one option") as usize];
        Self {
            clusters,
            lo,
            width,
            z,
            cost,
            t,
            by_t,
            t_min,
            t_max,
        }
    }

    fn len(&self) -> usize {
        self.z.len()
    }

    /// Compliance values of option `o`, one per cluster of the block.
    fn co(&self, o: usize) -> [i64; 2] {
        if self.clusters.len() == 1 {
            [self.lo[0] + o as i64, 0]
        } else {
            let w1 = self.width[1] as usize;
            [self.lo[0] + (o / w1) as i64, self.lo[1] + (o % w1) as i64]
        }
    }

    /// Option index of the given compliance values (clamped to the box).
    fn index_of(&self, co: [i64; 2]) -> usize {
        let c0 = (co[0] - self.lo[0]).clamp(0, self.width[0] - 1) as usize;
        if self.clusters.len() == 1 {
            c0
        } else {
            let c1 = (co[1] - self.lo[1]).clamp(0, self.width[1] - 1) as usize;
            c0 * self.width[1] as usize + c1
        }
    }
}

/// Aggregated mixture: block means of `z`, total cost and norm value, and
/// per-coordinate means of `CO` and `1/CO`.
#[derive(Debug, Clone)]
pub(crate) struct Point {
    zeta: DVector<f64>,
    cost: f64,
    t: f64,
    pub(crate) eco: Vec<f64>,
    pub(crate) ey: Vec<f64>,
}

/// A vertex of the relaxed feasible set: a pure choice except possibly one
/// block split between two options.
#[derive(Debug, Clone)]
struct Vertex {
    choice: Vec<u32>,
    frac: Option<(usize, u32, f64)>,
    value: f64,
}

/// Result of relaxing one node.
#[derive(Debug, Clone)]
pub(crate) enum Relaxed {
    /// No mixture satisfies the norm slab.
    Infeasible,
    /// A relaxation solve with its best certified bound.
    Bounded {
        lower: f64,
        point: Point,
        best_vertex: Option<(Vec<u32>, f64)>,
    },
}

/// Per-node relaxation state.
pub(crate) struct NodeRelaxation<'a> {
    s: &'a Structure,
    pub(crate) opts: Vec<BlockOptions>,
    g: Vec<Vec<f64>>,
}

impl<'a> NodeRelaxation<'a> {
    pub(crate) fn new(s: &'a Structure, lo: &[i64], hi: &[i64]) -> Self {
        let opts: Vec<BlockOptions> = (0..s.n_blocks()).map(|b| s.options(b, lo, hi)).collect();
        let g = opts.iter().map(|o| vec![0.0; o.len()]).collect();
        Self { s, opts, g }
    }

    /// Whether some mixture meets the norm slab.
    pub(crate) fn slab_reachable(&self) -> bool {
        let tmin: f64 = self.opts.iter().map(|o| o.t_min).sum();
        let tmax: f64 = self.opts.iter().map(|o| o.t_max).sum();
        tmin <= self.s.upper && tmax >= self.s.lower
    }

    /// Whether every block has a single option.
    pub(crate) fn is_leaf(&self) -> bool {
        self.opts.iter().all(|o| o.len() == 1)
    }

    pub(crate) fn eval(&self, choice: &[u32]) -> f64 {
        self.s.eval_choice(&self.opts, choice)
    }

    pub(crate) fn norm_of(&self, choice: &[u32]) -> f64 {
        self.opts
            .iter()
            .zip(choice)
            .map(|(b, &o)| b.t[o as usize])
            .sum()
    }

    pub(crate) fn choice_to_co(&self, choice: &[u32]) -> Vec<i64> {
        let mut co = vec![0; self.s.dim];
        for (b, &o) in self.opts.iter().zip(choice) {
            let v = b.co(o as usize);
            for (j, &c) in b.clusters.iter().enumerate() {
                co[c] = v[j];
            }
        }
        co
    }

    pub(crate) fn co_to_choice(&self, co: &[i64]) -> Vec<u32> {
        self.opts
            .iter()
            .map(|b| {
                let v = [co[b.clusters[0]], b.clusters.get(1).map_or(0, |&c| co[c])];
                b.index_of(v) as u32
            })
            .collect()
    }

    fn point_of(&self, v: &Vertex) -> Point {
        let nb = self.opts.len();
        let mut p = Point {
            zeta: DVector::zeros(nb),
            cost: 0.0,
            t: 0.0,
            eco: vec![0.0; self.s.dim],
            ey: vec![0.0; self.s.dim],
        };
        let add = |p: &mut Point, b: usize, o: usize, w: f64| {
            let bo = &self.opts[b];
            p.zeta[b] += w * bo.z[o];
            p.cost += w * bo.cost[o];
            p.t += w * bo.t[o];
            let co = bo.co(o);
            for (j, &c) in bo.clusters.iter().enumerate() {
                p.eco[c] += w * co[j] as f64;
                p.ey[c] += w / co[j] as f64;
            }
        };
        for b in 0..nb {
            match v.frac {
                Some((fb, o2, th)) if fb == b => {
                    add(&mut p, b, v.choice[b] as usize, 1.0 - th);
                    add(&mut p, b, o2 as usize, th);
                }
                _ => add(&mut p, b, v.choice[b] as usize, 1.0),
            }
        }
        p
    }

    /// Minimizes `Σ_b gz_b·E[z_b] + E[cost_b]` over mixtures meeting the slab.
    fn lmo(&mut self, gz: &DVector<f64>) -> Option<Vertex> {
        let nb = self.opts.len();
        let mut choice = vec![0u32; nb];
        let mut t0 = 0.0;
        let mut value = 0.0;
        for b in 0..nb {
            let bo = &self.opts[b];
            let g = &mut self.g[b];
            let mut best = 0usize;
            for o in 0..bo.len() {
                g[o] = gz[b] * bo.z[o] + bo.cost[o];
                if g[o] < g[best] || (g[o] == g[best] && bo.t[o] < bo.t[best]) {
                    best = o;
                }
            }
            choice[b] = best as u32;
            t0 += bo.t[best];
            value += g[best];
        }
        let (lower, upper) = (self.s.lower, self.s.upper);
        if t0 >= lower && t0 <= upper {
            return Some(Vertex {
                choice,
                frac: None,
                value,
            });
        }
        let increase = t0 < lower;
        let mut need = if increase { lower - t0 } else { t0 - upper };
        // Per-block hull walks away from the cheapest option; each edge is
        // (from, to, |dt|, dg) and prices dg/|dt| are nondecreasing along a walk.
        let mut walks: Vec<Vec<(u32, u32, f64, f64)>> = vec![Vec::new(); nb];
        for b in 0..nb {
            let bo = &self.opts[b];
            let g = &self.g[b];
            let mut hull: Vec<u32> = Vec::new();
            for &o in &bo.by_t {
                let (to, go) = (bo.t[o as usize], g[o as usize]);
                if let Some(&last) = hull.last() {
                    if bo.t[last as usize] == to {
                        if go < g[last as usize] || (go == g[last as usize] && o == choice[b]) {
                            hull.pop();
                        } else {
                            continue;
                        }
                    }
                }
                while hull.len() >= 2 {
                    let (p0, p1) = (hull[hull.len() - 2] as usize, hull[hull.len() - 1] as usize);
                    let cross =
                        (bo.t[p1] - bo.t[p0]) * (go - g[p0]) - (g[p1] - g[p0]) * (to - bo.t[p0]);
                    if cross <= 0.0 {
                        hull.pop();
                    } else {
                        break;
                    }
                }
                hull.push(o);
            }
            let start = hull
                .iter()
                .position(|&o| o == choice[b])
                .expect("the leftmost cheapest option is a lower-hull vertex");
            let walk = &mut walks[b];
            if increase {
                for j in start..hull.len().saturating_sub(1) {
                    let (f, t) = (hull[j], hull[j + 1]);
                    walk.push((
                        f,
                        t,
                        bo.t[t as usize] - bo.t[f as usize],
                        g[t as usize] - g[f as usize],
                    ));
                }
            } else {
                for j in (1..=start).rev() {
                    let (f, t) = (hull[j], hull[j - 1]);
                    walk.push((
                        f,
                        t,
                        bo.t[f as usize] - bo.t[t as usize],
                        g[t as usize] - g[f as usize],
                    ));
                }
            }
        }
        // Merge the walks by price, always taking each block's next edge.
        let mut heap: BinaryHeap<Reverse<(OrdF64, usize)>> = BinaryHeap::new();
        let mut next = vec![0usize; nb];
        for (b, w) in walks.iter().enumerate() {
            if let Some(&(_, _, dt, dg)) = w.first() {
                heap.push(Reverse((OrdF64(dg / dt), b)));
            }
        }
        while let Some(Reverse((_, b))) = heap.pop() {
            let (_, t, dt, dg) = walks[b][next[b]];
            if dt >= need {
                let th = need / dt;
                value += th * dg;
                return Some(Vertex {
                    choice,
                    frac: Some((b, t, th)),
                    value,
                });
            }
            choice[b] = t;
            value += dg;
            need -= dt;
            next[b] += 1;
            if let Some(&(_, _, dt, dg)) = walks[b].get(next[b]) {
                heap.push(Reverse((OrdF64(dg / dt), b)));
            }
        }
        None
    }

    /// Frank-Wolfe on the mixture relaxation.
    ///
    /// Stops once the certified bound exceeds `target`, once the iterate's
    /// value drops below `target` (the node cannot be pruned), on a small
    /// duality gap, or after `max_iter` iterations.
    pub(crate) fn frank_wolfe(&mut self, target: f64, max_iter: usize) -> Relaxed {
        let s = self.s;
        let nb = self.opts.len();
        let mut gz = DVector::from_fn(nb, |b, _| {
            let bo = &self.opts[b];
            2.0 * bo.z.iter().sum::<f64>() / bo.len() as f64
        });
        let Some(v0) = self.lmo(&gz) else {
            return Relaxed::Infeasible;
        };
        let mut best_vertex: Option<(Vec<u32>, f64)> = None;
        let mut x = self.point_of(&v0);
        if v0.frac.is_none() {
            best_vertex = Some((v0.choice.clone(), s.eval_choice(&self.opts, &v0.choice)));
        }
        let mut r = &s.a * &x.zeta + &s.a0;
        let mut lower = f64::NEG_INFINITY;
        for _ in 0..max_iter {
            let f = r.norm_squared() + x.cost + s.constant;
            gz = s.a.transpose() * &r * 2.0;
            let Some(v) = self.lmo(&gz) else {
                return Relaxed::Infeasible;
            };
            let gx = gz.dot(&x.zeta) + x.cost;
            let gap = (gx - v.value).max(0.0);
            let slack = 1e-11 * (1.0 + f.abs() + gx.abs() + v.value.abs());
            lower = lower.max(f - gap - slack);
            if v.frac.is_none() {
                let val = s.eval_choice(&self.opts, &v.choice);
                if best_vertex.as_ref().is_none_or(|(_, bv)| val < *bv) {
                    best_vertex = Some((v.choice.clone(), val));
                }
            }
            if lower > target || f < target || gap <= slack {
                break;
            }
            let sp = self.point_of(&v);
            let d = &sp.zeta - &x.zeta;
            let ad = &s.a * &d;
            let qa = ad.norm_squared();
            let qb = 2.0 * r.dot(&ad) + (sp.cost - x.cost);
            let gamma = if qa > 0.0 {
                (-qb / (2.0 * qa)).clamp(0.0, 1.0)
            } else if qb < 0.0 {
                1.0
            } else {
                0.0
            };
            if gamma == 0.0 {
                break;
            }
            x.zeta += d * gamma;
            x.cost += gamma * (sp.cost - x.cost);
            x.t += gamma * (sp.t - x.t);
            for i in 0..x.eco.len() {
                x.eco[i] += gamma * (sp.eco[i] - x.eco[i]);
                x.ey[i] += gamma * (sp.ey[i] - x.ey[i]);
            }
            r.axpy(gamma, &ad, 1.0);
        }
        Relaxed::Bounded {
            lower,
            point: x,
            best_vertex,
        }
    }

    /// Rounds mean compliance values and repairs the norm slab by greedy unit
    /// moves; `None` when the repair gets stuck.
    pub(crate) fn round_repair(&self, eco: &[f64]) -> Option<Vec<u32>> {
        let co: Vec<i64> = eco.iter().map(|v| v.round() as i64).collect();
        let mut choice = self.co_to_choice(&co);
        let s = self.s;
        let mut r = s.a0.clone();
        for (b, bo) in self.opts.iter().enumerate() {
            r.axpy(bo.z[choice[b] as usize], &s.a.column(b), 1.0);
        }
        let mut t = self.norm_of(&choice);
        let budget: usize = self.opts.iter().map(|b| b.len()).sum::<usize>() + 1;
        for _ in 0..budget {
            let increase = if t < s.lower {
                true
            } else if t > s.upper {
                false
            } else {
                return Some(choice);
            };
            let mut best: Option<(f64, usize, usize)> = None;
            for (b, bo) in self.opts.iter().enumerate() {
                let cur = choice[b] as usize;
                let cco = bo.co(cur);
                let ar = s.a.column(b).dot(&r);
                for j in 0..bo.clusters.len() {
                    for step in [-1i64, 1] {
                        let mut nco = cco;
                        nco[j] += step;
                        if nco[j] < bo.lo[j] || nco[j] >= bo.lo[j] + bo.width[j] {
                            continue;
                        }
                        let o = bo.index_of(nco);
                        let dt = bo.t[o] - bo.t[cur];
                        if (increase && dt <= 0.0) || (!increase && dt >= 0.0) {
                            continue;
                        }
                        let dz = bo.z[o] - bo.z[cur];
                        let df =
                            2.0 * dz * ar + dz * dz * s.col_norm2[b] + bo.cost[o] - bo.cost[cur];
                        let price = df / dt.abs();
                        if best.is_none_or(|(p, _, _)| price < p) {
                            best = Some((price, b, o));
                        }
                    }
                }
            }
            let (_, b, o) = best?;
            let bo = &self.opts[b];
            let cur = choice[b] as usize;
            r.axpy(bo.z[o] - bo.z[cur], &s.a.column(b), 1.0);
            t += bo.t[o] - bo.t[cur];
            choice[b] = o as u32;
        }
        None
    }

    /// Block coordinate descent from a feasible choice, keeping the slab.
    pub(crate) fn coordinate_descent(&self, choice: &mut [u32], passes: usize) {
        let s = self.s;
        let mut r = s.a0.clone();
        for (b, bo) in self.opts.iter().enumerate() {
            r.axpy(bo.z[choice[b] as usize], &s.a.column(b), 1.0);
        }
        let mut t = self.norm_of(choice);
        for _ in 0..passes {
            let mut improved = false;
            for (b, bo) in self.opts.iter().enumerate() {
                if bo.len() == 1 {
                    continue;
                }
                let cur = choice[b] as usize;
                let ar = s.a.column(b).dot(&r);
                let scale = 1e-13 * (r.norm_squared() + bo.cost[cur].abs() + 1.0);
                let mut best = (-scale, cur);
                for o in 0..bo.len() {
                    let nt = t - bo.t[cur] + bo.t[o];
                    if nt < s.lower || nt > s.upper {
                        continue;
                    }
                    let dz = bo.z[o] - bo.z[cur];
                    let df = 2.0 * dz * ar + dz * dz * s.col_norm2[b] + bo.cost[o] - bo.cost[cur];
                    if df < best.0 {
                        best = (df, o);
                    }
                }
                if best.1 != cur {
                    let o = best.1;
                    r.axpy(bo.z[o] - bo.z[cur], &s.a.column(b), 1.0);
                    t += bo.t[o] - bo.t[cur];
                    choice[b] = o as u32;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
    }
}
