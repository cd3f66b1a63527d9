//! Property tests of invariants that hold for every input.

use nalgebra::DMatrix;
use proptest::prelude::*;

use clusteriv::acer::{AcerOptions, AcerSetup};
use clusteriv::data::{read_clusters_csv, write_clusters_csv, Cluster, IngestOptions, Pair, Study};
use clusteriv::design::{build_design, DesignKind};
use clusteriv::grid::{Grid, GridInterval};
use clusteriv::matching::{
    add_sinks, optimal_nonbipartite_match, rank_robust_mahalanobis, CostMatrix,
};
use clusteriv::miqcp::{solve, MiqcpProblem, SolveMode, SolveOptions, SolveStatus};
use clusteriv::per::{pair_statistics, s2_q};
use clusteriv::sharp::{t_dr, Continuity, DoubleRankInputs, Phi};
use clusteriv::sim::huber::{huber_ci, huber_deviate, DEFAULT_HUBER_C};

fn symmetric_costs(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(0.0..10.0f64, n * n).prop_map(move |v| {
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                v[i.min(j) * n + i.max(j)]
            }
        })
    })
}

/// Studies with 2 to 6 pairs, integer counts and one cluster covariate.
fn small_study() -> impl Strategy<Value = Study> {
    let cluster = (3usize..8, 0.0..1.0f64, 0.0..20.0f64, -1.0..1.0f64);
    prop::collection::vec((cluster.clone(), cluster, 0.0..0.4f64, 0.45..0.9f64), 2..7).prop_map(
        |rows| {
            let pairs = rows
                .into_iter()
                .enumerate()
                .map(|(k, ((n1, f1, r1, x1), (n2, f2, r2, x2), lo, hi))| {
                    let d1 = ((n1 as f64 * f1).round()).max(1.0);
                    let d2 = ((n2 as f64 * f2).round()).min(n2 as f64 - 1.0);
                    let dose_lo = lo + 0.001 * k as f64;
                    Pair {
                        id: k + 1,
                        clusters: [
                            Cluster {
                                dose: hi,
                                n: n1,
                                sum_d: d1,
                                sum_r: r1.round(),
                                xt: vec![x1],
                                xbar: vec![],
                            },
                            Cluster {
                                dose: dose_lo,
                                n: n2,
                                sum_d: d2,
                                sum_r: r2.round(),
                                xt: vec![x2],
                                xbar: vec![],
                            },
                        ],
                    }
                })
                .collect();
            Study::new(pairs).expect("doses are distinct by construction")
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matching_beats_the_identity_pairing(d in (2usize..7).prop_flat_map(|h| symmetric_costs(2 * h))) {
        let n = d.nrows();
        let m = optimal_nonbipartite_match(&CostMatrix::plain(d.clone())).unwrap();
        let mut seen = vec![false; n];
        for &(i, j) in &m.pairs {
            prop_assert!(i < j && !seen[i] && !seen[j]);
            seen[i] = true;
            seen[j] = true;
        }
        prop_assert!(seen.iter().all(|&s| s));
        let identity: f64 = (0..n / 2).map(|i| d[(2 * i, 2 * i + 1)]).sum();
        prop_assert!(m.total_distance <= identity + 1e-9);
    }

    #[test]
    fn sinks_drop_exactly_their_number(d in symmetric_costs(7), extra in 0usize..2) {
        let sinks = 1 + 2 * extra;
        let cost = add_sinks(&d, sinks).unwrap();
        let m = optimal_nonbipartite_match(&cost).unwrap();
        prop_assert_eq!(m.dropped.len(), sinks);
        prop_assert_eq!(m.pairs.len(), (7 - sinks) / 2);
    }

    #[test]
    fn rank_distance_ignores_monotone_transforms(x in prop::collection::vec(-5.0..5.0f64, 12)) {
        let base = DMatrix::from_fn(6, 2, |i, j| x[2 * i + j]);
        let warped = base.map(|v| v.powi(3) + 2.0 * v);
        let (a, b) = match (rank_robust_mahalanobis(&base), rank_robust_mahalanobis(&warped)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(_), Err(_)) => return Ok(()),
            _ => return Err(TestCaseError::fail("only one of the two rank matrices was singular")),
        };
        for i in 0..6 {
            prop_assert_eq!(a[(i, i)], 0.0);
            for j in 0..6 {
                prop_assert!((a[(i, j)] - b[(i, j)]).abs() < 1e-9);
                prop_assert!((a[(i, j)] - a[(j, i)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flipping_every_sign_swaps_the_tails(
        a in prop::collection::vec(prop_oneof![-3.0..-0.01f64, 0.01..3.0f64], 2..30),
        seed in 0.0..1.0f64,
    ) {
        let gaps: Vec<f64> = (0..a.len()).map(|i| (seed + 0.37 * i as f64).fract()).collect();
        let flipped: Vec<f64> = a.iter().map(|v| -v).collect();
        for phi in [Phi::Sign, Phi::Wilcoxon, Phi::DoseRank] {
            let r = t_dr(&DoubleRankInputs::from_parts(a.clone(), &gaps), phi, Continuity::Lattice);
            let f = t_dr(&DoubleRankInputs::from_parts(flipped.clone(), &gaps), phi, Continuity::Lattice);
            prop_assert!((r.statistic + f.statistic - 2.0 * r.mean).abs() < 1e-9);
            prop_assert!((r.p_one_sided - f.p_lower).abs() < 1e-12);
            prop_assert!((r.p_two_sided - f.p_two_sided).abs() < 1e-12);
            prop_assert!(r.p_two_sided <= 1.0 && r.p_two_sided > 0.0);
        }
    }

    #[test]
    fn unadjusted_variance_is_scaled_sample_variance(study in small_study(), lambda0 in -2.0..2.0f64) {
        let y = pair_statistics(&study, lambda0);
        let k = y.len() as f64;
        let mean = y.iter().sum::<f64>() / k;
        let sample_var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
        let e = build_design(&study, DesignKind::E).unwrap();
        let s2 = s2_q(&y, &e).unwrap();
        prop_assert!((s2 - sample_var).abs() <= 1e-9 * (1.0 + sample_var));
    }

    #[test]
    fn pair_statistics_are_affine_in_lambda(study in small_study(), l in -3.0..3.0f64) {
        let y0 = pair_statistics(&study, 0.0);
        let y1 = pair_statistics(&study, 1.0);
        let yl = pair_statistics(&study, l);
        for k in 0..y0.len() {
            prop_assert!((yl[k] - (y0[k] + l * (y1[k] - y0[k]))).abs() < 1e-9);
        }
    }

    #[test]
    fn cluster_csv_round_trips(study in small_study()) {
        let mut buf = Vec::new();
        write_clusters_csv(&mut buf, &study).unwrap();
        let back = read_clusters_csv(buf.as_slice(), IngestOptions::default()).unwrap();
        prop_assert_eq!(back.pairs(), study.pairs());
    }

    #[test]
    fn grid_interval_brackets_the_mask(mask in prop::collection::vec(any::<bool>(), 1..40)) {
        let grid = Grid::with_points(0.0, 1.0, mask.len().max(2)).unwrap();
        let mut mask = mask;
        mask.resize(grid.len(), false);
        let gi = GridInterval::from_mask(&grid, &mask);
        prop_assert_eq!(gi.retained, mask.iter().filter(|&&m| m).count());
        if let (Some(lo), Some(hi)) = (gi.lower, gi.upper) {
            for (i, &m) in mask.iter().enumerate() {
                if m {
                    prop_assert!(grid.point(i) >= lo && grid.point(i) <= hi);
                }
            }
        } else {
            prop_assert!(gi.is_empty());
        }
    }

    #[test]
    fn huber_interval_excludes_distant_values(
        dd in prop::collection::vec(0.2..1.0f64, 12..30),
        noise in prop::collection::vec(-1.0..1.0f64, 30),
        beta in -2.0..2.0f64,
    ) {
        let dr: Vec<f64> = dd.iter().zip(&noise).map(|(d, e)| beta * d + e).collect();
        let (lo, hi) = huber_ci(&dr, &dd, DEFAULT_HUBER_C, 0.05).unwrap();
        prop_assert!(lo <= hi);
        let far = 10.0 * (hi - lo + 1.0);
        for b in [lo - far, hi + far] {
            prop_assert!(huber_deviate(&dr, &dd, b, DEFAULT_HUBER_C).unwrap().abs() > 1.96);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dumped_problems_solve_identically(study in small_study(), lambda0 in -3.0..3.0f64) {
        let Ok(setup) = AcerSetup::new(&study, 0.2, DesignKind::E, 0.1) else { return Ok(()) };
        let p = MiqcpProblem::from_acer(&setup.instance(lambda0)).unwrap();
        let q = MiqcpProblem::load(&p.dump()).unwrap();
        let mode = SolveMode::SignCertify { threshold: 0.0 };
        let a = solve(&p, mode, SolveOptions::default()).unwrap();
        let b = solve(&q, mode, SolveOptions::default()).unwrap();
        prop_assert_eq!(a.status, b.status);
    }

    #[test]
    fn larger_iota_never_accepts_more(study in small_study(), lambda0 in -3.0..3.0f64) {
        let (Ok(wide), Ok(narrow)) = (
            AcerSetup::new(&study, 0.1, DesignKind::E, 0.1),
            AcerSetup::new(&study, 0.3, DesignKind::E, 0.1),
        ) else {
            return Ok(());
        };
        if wide.study.k() != narrow.study.k() {
            return Ok(());
        }
        let opts = AcerOptions::default();
        let w = wide.test(lambda0, &opts).unwrap();
        let n = narrow.test(lambda0, &opts).unwrap();
        prop_assert!(w.solver_status != SolveStatus::Inconclusive && n.solver_status != SolveStatus::Inconclusive);
        if w.decision == clusteriv::acer::AcerDecision::Reject {
            prop_assert_eq!(n.decision, clusteriv::acer::AcerDecision::Reject);
        }
    }

    #[test]
    fn delta_min_bounds_every_feasible_statistic(study in small_study(), lambda0 in -3.0..3.0f64) {
        let Ok(setup) = AcerSetup::new(&study, 0.2, DesignKind::E, 0.1) else { return Ok(()) };
        let opts = AcerOptions { delta_min: true, ..AcerOptions::default() };
        let r = setup.test(lambda0, &opts).unwrap();
        let (Some(dmin), Some(co)) = (r.delta_min, r.minimizing_co.clone()) else { return Ok(()) };
        let d = clusteriv::acer::delta_stat(&setup.study, &co, lambda0, &setup.design).unwrap();
        prop_assert!(dmin <= d.value * (1.0 + 1e-9) + 1e-12);
        let reject = r.decision == clusteriv::acer::AcerDecision::Reject;
        prop_assert_eq!(reject, dmin > r.critical_value);
    }
}
