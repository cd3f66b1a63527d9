//! End-to-end workflows through the public API.

use clusteriv::acer::{acer_confidence_interval, test_acer, AcerDecision, AcerOptions};
use clusteriv::data::{read_individuals_csv, read_unpaired_csv, validate_study, IngestOptions};
use clusteriv::design::{build_design, DesignKind};
use clusteriv::grid::Grid;
use clusteriv::matching::{balance_table, match_clusters, DistanceSpec};
use clusteriv::per::{invert_per_ci, per_ci_bisection, per_estimate};
use clusteriv::sharp::{invert_beta_ci, Phi, SharpOptions};
use clusteriv::sim::{gen_acer_world, replicate_rng, AcerDgpConfig};

/// Individual rows for 6 pairs; encouraged clusters treat 4 of 6, controls 1 of 6.
fn individual_csv() -> String {
    let mut text = String::from("pair,slot,dose,treated,outcome,x1\n");
    for pair in 1..=6 {
        for slot in 1..=2 {
            let encouraged = (pair + slot) % 2 == 0;
            let dose = if encouraged {
                0.7 + 0.01 * pair as f64
            } else {
                0.2
            };
            for i in 0..6 {
                let treated = usize::from(if encouraged { i < 4 } else { i < 1 });
                let outcome = 0.5 * treated as f64 + 0.1 * ((pair * 7 + slot * 3 + i) % 5) as f64;
                text.push_str(&format!(
                    "{pair},{slot},{dose},{treated},{outcome},{}\n",
                    i as f64 + 0.5 * pair as f64
                ));
            }
        }
    }
    text
}

#[test]
fn individual_rows_flow_through_every_test() {
    let study =
        read_individuals_csv(individual_csv().as_bytes(), IngestOptions::default()).unwrap();
    assert_eq!(study.k(), 6);
    assert!(
        validate_study(&study).is_empty(),
        "{:?}",
        validate_study(&study)
    );
    let p = study.pairs()[0].encouraged();
    assert_eq!((p.n, p.sum_d), (6, 4.0));

    let beta = invert_beta_ci(
        &study,
        SharpOptions::new(Phi::Wilcoxon),
        0.05,
        &Grid::new(-3.0, 3.0, 0.01).unwrap(),
    )
    .unwrap();
    assert!(!beta.is_empty());

    let design = build_design(&study, DesignKind::Q2).unwrap();
    let est = per_estimate(&study).unwrap();
    let grid_ci =
        invert_per_ci(&study, &design, 0.05, &Grid::new(-3.0, 3.0, 0.001).unwrap()).unwrap();
    let (lo, hi) = per_ci_bisection(&study, &design, 0.05, -10.0, 10.0, 1e-9)
        .unwrap()
        .unwrap();
    assert!(lo <= est && est <= hi);
    assert!(
        (grid_ci.lower.unwrap() - lo).abs() < 2e-3 && (grid_ci.upper.unwrap() - hi).abs() < 2e-3
    );

    let report = test_acer(
        &study,
        50.0,
        0.1,
        DesignKind::E,
        0.05,
        &AcerOptions::default(),
    )
    .unwrap();
    assert_eq!(report.decision, AcerDecision::Reject);
}

#[test]
fn unpaired_clusters_are_matched_and_balanced() {
    let mut text = String::from("cluster,dose,n,sum_d,sum_r,xt1,xbar1\n");
    for c in 1..=12 {
        let dose = if c % 2 == 0 {
            0.8 - 0.01 * c as f64
        } else {
            0.1 + 0.01 * c as f64
        };
        text.push_str(&format!(
            "{c},{dose},10,{},{},{},{}\n",
            c % 6 + 2,
            c % 4,
            (c / 2) as f64,
            (c % 3) as f64 * 0.5
        ));
    }
    let units = read_unpaired_csv(text.as_bytes()).unwrap();
    let spec = DistanceSpec {
        penalty: 100.0,
        dose_gap_threshold: 0.3,
        sinks: 2,
        columns: None,
    };
    let (study, result) = match_clusters(&units, &spec).unwrap();
    assert_eq!(study.k(), 5);
    assert_eq!(result.dropped.len(), 2);
    assert!(study.pairs().iter().all(|p| p.dose_gap() >= 0.3));
    let balance = balance_table(&study).unwrap();
    let names: Vec<&str> = balance.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names.len(), 3, "dose plus two covariates: {names:?}");
    assert!(balance[0].mean_encouraged > balance[0].mean_control);
}

#[test]
fn simulated_world_covers_the_truth() {
    let cfg = AcerDgpConfig {
        k: 30,
        seed: 11,
        ..AcerDgpConfig::default()
    };
    let world = gen_acer_world(&cfg, &mut replicate_rng(cfg.seed, 0)).unwrap();
    let grid = Grid::with_points(world.lambda_acer - 6.0, world.lambda_acer + 6.0, 25).unwrap();
    let ci = acer_confidence_interval(
        &world.study,
        cfg.iota_floor(),
        DesignKind::E,
        0.05,
        &grid,
        &AcerOptions::default(),
    )
    .unwrap();
    let truth_kept = ci.decisions[12].1 != AcerDecision::Reject;
    assert!((ci.decisions[12].0 - world.lambda_acer).abs() < 1e-12 && truth_kept);
    assert!(ci.inconclusive.is_empty());
}
