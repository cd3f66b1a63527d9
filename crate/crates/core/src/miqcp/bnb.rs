//! Best-first branch-and-bound with sign-based early termination, and
//! Dinkelbach iteration for the minimum ratio `K²V̄² / V_Qᵀ(I − H)V_Q`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use super::relax::{NodeRelaxation, OrdF64, Relaxed, Structure};
use super::{AcerInstance, MiqcpProblem};
use crate::error::Result;

/// What the solver must establish.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolveMode {
    /// Decide whether the minimum exceeds `threshold`.
    SignCertify {
        /// Value the minimum is compared against.
        threshold: f64,
    },
    /// Locate the minimum to within `abs_gap + rel_gap·|best_upper|`.
    Optimize {
        /// Relative optimality gap.
        rel_gap: f64,
        /// Absolute optimality gap.
        abs_gap: f64,
    },
}

impl SolveMode {
    /// Optimization with a relative gap of `1e-12` and no absolute slack.
    pub fn optimize() -> Self {
        Self::Optimize {
            rel_gap: 1e-12,
            abs_gap: 0.0,
        }
    }
}

/// Solver budgets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Maximum number of processed nodes.
    pub max_nodes: usize,
    /// Frank-Wolfe iterations per node.
    pub fw_iterations: usize,
    /// Block coordinate descent passes per node heuristic.
    pub descent_passes: usize,
    /// Optional wall-clock limit.
    pub time_limit: Option<Duration>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_nodes: 200_000,
            fw_iterations: 200,
            descent_passes: 4,
            time_limit: None,
        }
    }
}

/// Final solver state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Every feasible point has `ρ > threshold`.
    SignPositive,
    /// A feasible point with `ρ ≤ threshold` was found.
    SignNegative,
    /// The minimum was located within the requested gap.
    OptimumFound,
    /// No integer point satisfies the constraints.
    Infeasible,
    /// A budget ran out before the question was settled.
    Inconclusive,
}

impl SolveStatus {
    /// Snake-case name.
    pub fn name(&self) -> &'static str {
        match self {
            Self::SignPositive => "sign_positive",
            Self::SignNegative => "sign_negative",
            Self::OptimumFound => "optimum_found",
            Self::Infeasible => "infeasible",
            Self::Inconclusive => "inconclusive",
        }
    }
}

/// Global bounds after a given number of processed nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRecord {
    /// Nodes processed so far.
    pub node: usize,
    /// Global lower bound.
    pub lower: f64,
    /// Incumbent value (`+∞` before the first feasible point).
    pub upper: f64,
}

/// Solver result.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    /// Final state.
    pub status: SolveStatus,
    /// Best feasible value found (`+∞` if none).
    pub best_upper: f64,
    /// Certified lower bound on the minimum (`+∞` when infeasible).
    pub best_lower: f64,
    /// Best feasible compliance vector found.
    pub incumbent: Option<Vec<i64>>,
    /// Nodes processed.
    pub node_count: usize,
    /// Wall time.
    pub elapsed: Duration,
    /// Bound trace, one entry per change.
    pub history: Vec<BoundRecord>,
}

#[derive(Debug)]
struct Node {
    lower: f64,
    seq: usize,
    lo: Vec<i64>,
    hi: Vec<i64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        OrdF64(self.lower)
            .cmp(&OrdF64(other.lower))
            .then(self.seq.cmp(&other.seq))
    }
}

struct Search {
    upper: f64,
    incumbent: Option<Vec<i64>>,
    closed_min: f64,
    history: Vec<BoundRecord>,
    last: (f64, f64),
}

impl Search {
    fn offer(&mut self, value: f64, co: Vec<i64>) {
        if value < self.upper {
            self.upper = value;
            self.incumbent = Some(co);
        }
    }

    fn record(&mut self, node: usize, lower: f64) {
        let lower = lower.min(self.upper);
        if (lower, self.upper) != self.last {
            self.last = (lower, self.upper);
            self.history.push(BoundRecord {
                node,
                lower,
                upper: self.upper,
            });
        }
    }
}

/// Runs branch-and-bound on `problem`.
pub fn solve(problem: &MiqcpProblem, mode: SolveMode, opts: SolveOptions) -> Result<SolveOutcome> {
    let start = Instant::now();
    let structure = Structure::from_problem(problem)?;
    let mut st = Search {
        upper: f64::INFINITY,
        incumbent: None,
        closed_min: f64::INFINITY,
        history: Vec::new(),
        last: (f64::NAN, f64::NAN),
    };
    let mut heap = BinaryHeap::new();
    heap.push(Reverse(Node {
        lower: f64::NEG_INFINITY,
        seq: 0,
        lo: problem.lo.clone(),
        hi: problem.hi.clone(),
    }));
    let mut seq = 1;
    let mut nodes = 0usize;
    let tol = |ub: f64| match mode {
        SolveMode::Optimize { rel_gap, abs_gap } => abs_gap + rel_gap * ub.abs(),
        SolveMode::SignCertify { .. } => 0.0,
    };
    let finish = |status, st: Search, lower: f64, nodes, history_extra: Option<BoundRecord>| {
        let mut history = st.history;
        history.extend(history_extra);
        SolveOutcome {
            status,
            best_upper: st.upper,
            best_lower: lower,
            incumbent: st.incumbent,
            node_count: nodes,
            elapsed: start.elapsed(),
            history,
        }
    };
    while let Some(Reverse(node)) = heap.pop() {
        let global_lower = node.lower.min(st.closed_min);
        match mode {
            SolveMode::SignCertify { threshold } => {
                if st.upper <= threshold {
                    return Ok(finish(
                        SolveStatus::SignNegative,
                        st,
                        global_lower,
                        nodes,
                        None,
                    ));
                }
                if node.lower > threshold {
                    heap.push(Reverse(node));
                    break;
                }
            }
            SolveMode::Optimize { .. } => {
                if st.upper.is_finite() && node.lower >= st.upper - tol(st.upper) {
                    let lower = global_lower.min(st.upper);
                    return Ok(finish(SolveStatus::OptimumFound, st, lower, nodes, None));
                }
            }
        }
        if nodes >= opts.max_nodes || opts.time_limit.is_some_and(|t| start.elapsed() > t) {
            heap.push(Reverse(node));
            break;
        }
        nodes += 1;
        st.record(nodes, global_lower);
        let mut relax = NodeRelaxation::new(&structure, &node.lo, &node.hi);
        if !relax.slab_reachable() {
            continue;
        }
        if relax.is_leaf() {
            let choice = vec![0u32; structure.n_blocks()];
            let t = relax.norm_of(&choice);
            if t >= structure.lower && t <= structure.upper {
                let v = relax.eval(&choice);
                st.offer(v, relax.choice_to_co(&choice));
                st.closed_min = st.closed_min.min(v);
            }
            continue;
        }
        let target = match mode {
            SolveMode::SignCertify { threshold } => threshold,
            SolveMode::Optimize { .. } => st.upper - tol(st.upper),
        };
        let (lower, point) = match relax.frank_wolfe(target, opts.fw_iterations) {
            Relaxed::Infeasible => continue,
            Relaxed::Bounded {
                lower,
                point,
                best_vertex,
            } => {
                if let Some((choice, v)) = best_vertex {
                    st.offer(v, relax.choice_to_co(&choice));
                }
                (lower.max(node.lower), point)
            }
        };
        if let Some(mut choice) = relax.round_repair(&point.eco) {
            relax.coordinate_descent(&mut choice, opts.descent_passes);
            let v = relax.eval(&choice);
            st.offer(v, relax.choice_to_co(&choice));
        }
        let pruned = match mode {
            SolveMode::SignCertify { threshold } => lower > threshold,
            SolveMode::Optimize { .. } => st.upper.is_finite() && lower >= st.upper - tol(st.upper),
        };
        if pruned {
            st.closed_min = st.closed_min.min(lower);
            continue;
        }
        for (lo, hi) in split(&node.lo, &node.hi, &point.eco, &point.ey) {
            heap.push(Reverse(Node { lower, seq, lo, hi }));
            seq += 1;
        }
    }
    let open_min = heap.peek().map_or(f64::INFINITY, |Reverse(n)| n.lower);
    let lower = open_min.min(st.closed_min);
    let exhausted = heap.is_empty();
    if let SolveMode::SignCertify { threshold } = mode {
        if st.upper <= threshold {
            return Ok(finish(SolveStatus::SignNegative, st, lower, nodes, None));
        }
        if lower > threshold {
            if st.incumbent.is_none() {
                match find_feasible(problem, 1_000_000) {
                    Feasibility::Found(co) => {
                        let v = problem.evaluate(&co);
                        st.offer(v, co);
                    }
                    Feasibility::Infeasible => {
                        return Ok(finish(
                            SolveStatus::Infeasible,
                            st,
                            f64::INFINITY,
                            nodes,
                            None,
                        ));
                    }
                    Feasibility::Unknown => {
                        return Ok(finish(SolveStatus::Inconclusive, st, lower, nodes, None));
                    }
                }
            }
            let rec = BoundRecord {
                node: nodes,
                lower,
                upper: st.upper,
            };
            return Ok(finish(
                SolveStatus::SignPositive,
                st,
                lower,
                nodes,
                Some(rec),
            ));
        }
        return Ok(finish(SolveStatus::Inconclusive, st, lower, nodes, None));
    }
    if exhausted {
        if st.incumbent.is_none() {
            return Ok(finish(
                SolveStatus::Infeasible,
                st,
                f64::INFINITY,
                nodes,
                None,
            ));
        }
        let lower = lower.min(st.upper);
        let rec = BoundRecord {
            node: nodes,
            lower,
            upper: st.upper,
        };
        return Ok(finish(
            SolveStatus::OptimumFound,
            st,
            lower,
            nodes,
            Some(rec),
        ));
    }
    let lower = lower.min(st.upper);
    Ok(finish(SolveStatus::Inconclusive, st, lower, nodes, None))
}

/// Splits the coordinate whose mixture violates `CO·CO′ = 1` the most.
fn split(lo: &[i64], hi: &[i64], eco: &[f64], ey: &[f64]) -> [(Vec<i64>, Vec<i64>); 2] {
    let mut best: Option<(f64, i64, usize)> = None;
    for i in 0..lo.len() {
        if hi[i] == lo[i] {
            continue;
        }
        let viol = (eco[i] * ey[i] - 1.0).abs();
        let viol = if viol < 1e-12 { 0.0 } else { viol };
        let width = hi[i] - lo[i];
        let better = match best {
            None => true,
            Some((bv, bw, _)) => viol > bv || (viol == bv && width > bw),
        };
        if better {
            best = Some((viol, width, i));
        }
    }
    let (_, _, i) = best.expect("a non-leaf node has a splittable coordinate");
    let cut = (eco[i].floor() as i64).clamp(lo[i], hi[i] - 1);
    let mut hi_left = hi.to_vec();
    hi_left[i] = cut;
    let mut lo_right = lo.to_vec();
    lo_right[i] = cut + 1;
    [(lo.to_vec(), hi_left), (lo_right, hi.to_vec())]
}

enum Feasibility {
    Found(Vec<i64>),
    Infeasible,
    Unknown,
}

/// Depth-first search for an integer point satisfying the norm rows.
fn find_feasible(problem: &MiqcpProblem, limit: usize) -> Feasibility {
    let dim = problem.dim();
    let (l, u) = problem.norm_interval();
    let contrib = |i: usize, c: i64| problem.a1[i] * c as f64;
    let mut rest_min = vec![0.0; dim + 1];
    let mut rest_max = vec![0.0; dim + 1];
    for i in (0..dim).rev() {
        let (a, b) = (contrib(i, problem.lo[i]), contrib(i, problem.hi[i]));
        rest_min[i] = rest_min[i + 1] + a.min(b);
        rest_max[i] = rest_max[i + 1] + a.max(b);
    }
    let mut co = problem.lo.clone();
    let mut visits = 0usize;
    fn go(
        i: usize,
        partial: f64,
        co: &mut Vec<i64>,
        visits: &mut usize,
        limit: usize,
        p: &MiqcpProblem,
        bounds: (f64, f64, &[f64], &[f64]),
    ) -> Option<bool> {
        let (l, u, rmin, rmax) = bounds;
        *visits += 1;
        if *visits > limit {
            return None;
        }
        if partial + rmin[i] > u || partial + rmax[i] < l {
            return Some(false);
        }
        if i == co.len() {
            return Some(p.is_feasible(co));
        }
        for c in p.lo[i]..=p.hi[i] {
            co[i] = c;
            match go(
                i + 1,
                partial + p.a1[i] * c as f64,
                co,
                visits,
                limit,
                p,
                bounds,
            ) {
                Some(true) => return Some(true),
                Some(false) => {}
                None => return None,
            }
        }
        co[i] = p.lo[i];
        Some(false)
    }
    match go(
        0,
        0.0,
        &mut co,
        &mut visits,
        limit,
        problem,
        (l, u, &rest_min, &rest_max),
    ) {
        Some(true) => Feasibility::Found(co),
        Some(false) => Feasibility::Infeasible,
        None => Feasibility::Unknown,
    }
}

/// Result of minimizing the ratio `N/D` of numerator `K²V̄²` to variance
/// form `D` over the feasible set.
#[derive(Debug, Clone, PartialEq)]
pub enum RatioOutcome {
    /// Minimum ratio (`0` if some point has `V̄ = 0`, `+∞` if every point
    /// has `D = 0 < N`) with a minimizer.
    Minimum {
        /// Minimum of `N/D`.
        ratio: f64,
        /// A minimizing compliance vector.
        co: Vec<i64>,
        /// Dinkelbach iterations used.
        iterations: usize,
    },
    /// No feasible point.
    Infeasible,
    /// A subproblem exhausted its budget.
    Inconclusive,
}

fn ratio_at(inst: &AcerInstance, co: &[i64]) -> (f64, f64, f64) {
    let (n, d) = inst.ratio_parts(co);
    let r = if n == 0.0 {
        0.0
    } else if d == 0.0 {
        f64::INFINITY
    } else {
        n / d
    };
    (n, d, r)
}

/// Minimizes `K²V̄² / V_Qᵀ(I − H)V_Q` by Dinkelbach iteration on
/// `min N − t·D`, each step solved to optimality by [`solve`].
pub fn dinkelbach_min_ratio(inst: &AcerInstance, opts: SolveOptions) -> Result<RatioOutcome> {
    let run = |t: f64, scale: f64| -> Result<Option<SolveOutcome>> {
        let p = MiqcpProblem::from_acer(&inst.with_chi2(t))?;
        let out = solve(
            &p,
            SolveMode::Optimize {
                rel_gap: 1e-13,
                abs_gap: 1e-12 * scale,
            },
            opts,
        )?;
        Ok(match out.status {
            SolveStatus::Inconclusive => None,
            _ => Some(out),
        })
    };
    let Some(first) = run(0.0, 0.0)? else {
        return Ok(RatioOutcome::Inconclusive);
    };
    let Some(co0) = first.incumbent else {
        return Ok(RatioOutcome::Infeasible);
    };
    let (n0, d0, mut t) = ratio_at(inst, &co0);
    let mut best_co = co0;
    if t == 0.0 {
        return Ok(RatioOutcome::Minimum {
            ratio: 0.0,
            co: best_co,
            iterations: 1,
        });
    }
    let mut iterations = 1;
    if t.is_infinite() {
        // Find any point with a positive variance form.
        let mut probe = (n0 / (d0 + 1.0)).max(1.0);
        loop {
            iterations += 1;
            let Some(out) = run(probe, n0)? else {
                return Ok(RatioOutcome::Inconclusive);
            };
            let co = out.incumbent.expect("feasible problems keep an incumbent");
            let (_, _, r) = ratio_at(inst, &co);
            if out.best_upper < 0.0 && r.is_finite() {
                t = r;
                best_co = co;
                break;
            }
            probe *= 16.0;
            if probe > 1e300 {
                return Ok(RatioOutcome::Minimum {
                    ratio: f64::INFINITY,
                    co: best_co,
                    iterations,
                });
            }
        }
    }
    while iterations < 200 {
        iterations += 1;
        let (n, d) = inst.ratio_parts(&best_co);
        let scale = n + t * d;
        let Some(out) = run(t, scale)? else {
            return Ok(RatioOutcome::Inconclusive);
        };
        let co = out.incumbent.expect("feasible problems keep an incumbent");
        if out.best_upper >= -1e-11 * scale {
            return Ok(RatioOutcome::Minimum {
                ratio: t,
                co: best_co,
                iterations,
            });
        }
        let (_, _, r) = ratio_at(inst, &co);
        if !(r < t) {
            return Ok(RatioOutcome::Minimum {
                ratio: t,
                co: best_co,
                iterations,
            });
        }
        t = r;
        best_co = co;
        if t == 0.0 {
            return Ok(RatioOutcome::Minimum {
                ratio: 0.0,
                co: best_co,
                iterations,
            });
        }
    }
    Ok(RatioOutcome::Inconclusive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miqcp::oracle::{enumerate_oracle, OracleOutcome};
    use crate::miqcp::tests::small_instance;
    use approx::assert_relative_eq;

    fn oracle_min(p: &MiqcpProblem) -> Option<f64> {
        match enumerate_oracle(p, 1_000_000).unwrap() {
            OracleOutcome::Optimum { value, .. } => Some(value),
            OracleOutcome::Infeasible => None,
        }
    }

    #[test]
    fn singleton_boxes_take_one_node() {
        let mut inst = small_instance(0.1, 5.0);
        inst.lo = inst.hi.clone();
        let p = MiqcpProblem::from_acer(&inst).unwrap();
        let out = solve(&p, SolveMode::optimize(), SolveOptions::default()).unwrap();
        assert_eq!(out.status, SolveStatus::OptimumFound);
        assert_eq!(out.node_count, 1);
        assert_relative_eq!(out.best_upper, p.evaluate(&p.hi), max_relative = 1e-12);
    }

    #[test]
    fn optimize_matches_enumeration() {
        for (l0, chi2) in [(0.0, 5.0), (0.5, 5.0), (3.0, 1.0), (-2.0, 0.0), (1.0, 12.0)] {
            let p = MiqcpProblem::from_acer(&small_instance(l0, chi2)).unwrap();
            let out = solve(&p, SolveMode::optimize(), SolveOptions::default()).unwrap();
            let want = oracle_min(&p).unwrap();
            assert_eq!(out.status, SolveStatus::OptimumFound);
            assert_relative_eq!(out.best_upper, want, max_relative = 1e-9, epsilon = 1e-12);
            assert!(out.best_lower <= out.best_upper);
        }
    }

    #[test]
    fn loaded_dump_matches_enumeration() {
        let p = MiqcpProblem::load(
            &MiqcpProblem::from_acer(&small_instance(0.7, 5.0))
                .unwrap()
                .dump(),
        )
        .unwrap();
        let out = solve(&p, SolveMode::optimize(), SolveOptions::default()).unwrap();
        assert_relative_eq!(out.best_upper, oracle_min(&p).unwrap(), max_relative = 1e-9);
    }

    #[test]
    fn sign_certification_far_from_data() {
        let p = MiqcpProblem::from_acer(&small_instance(50.0, 5.0)).unwrap();
        let out = solve(
            &p,
            SolveMode::SignCertify { threshold: 0.0 },
            SolveOptions::default(),
        )
        .unwrap();
        assert_eq!(out.status, SolveStatus::SignPositive);
        assert!(out.best_lower > 0.0);
        assert!(oracle_min(&p).unwrap() > 0.0);
    }

    #[test]
    fn infeasible_slab() {
        let mut inst = small_instance(0.0, 5.0);
        inst.sco = (10.0, 11.0);
        let p = MiqcpProblem::from_acer(&inst).unwrap();
        let out = solve(&p, SolveMode::optimize(), SolveOptions::default()).unwrap();
        assert_eq!(out.status, SolveStatus::Infeasible);
        let out = solve(
            &p,
            SolveMode::SignCertify { threshold: 0.0 },
            SolveOptions::default(),
        )
        .unwrap();
        assert_eq!(out.status, SolveStatus::Infeasible);
    }

    #[test]
    fn history_is_monotone() {
        let p = MiqcpProblem::from_acer(&small_instance(0.4, 5.0)).unwrap();
        let out = solve(&p, SolveMode::optimize(), SolveOptions::default()).unwrap();
        for w in out.history.windows(2) {
            assert!(w[1].lower >= w[0].lower);
            assert!(w[1].upper <= w[0].upper);
        }
    }

    #[test]
    fn dinkelbach_matches_brute_force() {
        let inst = small_instance(0.4, 5.0);
        let p = MiqcpProblem::from_acer(&inst).unwrap();
        let mut best = f64::INFINITY;
        let dim = p.dim();
        let mut co = p.lo.clone();
        'outer: loop {
            if p.is_feasible(&co) {
                best = best.min(ratio_at(&inst, &co).2);
            }
            let mut i = dim;
            loop {
                if i == 0 {
                    break 'outer;
                }
                i -= 1;
                if co[i] < p.hi[i] {
                    co[i] += 1;
                    break;
                }
                co[i] = p.lo[i];
            }
        }
        match dinkelbach_min_ratio(&inst, SolveOptions::default()).unwrap() {
            RatioOutcome::Minimum { ratio, .. } => {
                assert_relative_eq!(ratio, best, max_relative = 1e-9)
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
