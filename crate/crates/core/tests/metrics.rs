mod common;

use proptest::prelude::*;
use std::f64::consts::PI;

use cdsynth::dynamics::{SystemState, TaskDescription};
use cdsynth::metrics::{
    compare_reports, direction_sector, episodes, is_success, progress_histogram, regrasp_entropy,
    rotation_class, segment_bounds, segment_progress, shannon_entropy, velocity_entropy,
    weighted_distance, EntropyReport, Episode, MetricsConfig, MetricsError,
};
use common::demo_from_poses;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

#[test]
fn entropy_examples() {
    assert!(close(shannon_entropy(&[8, 4, 4], 16).unwrap(), 0.375));
    assert_eq!(shannon_entropy(&[0, 7, 0], 3).unwrap(), 0.0);
    assert!(close(shannon_entropy(&[5; 16], 16).unwrap(), 1.0));
    assert!(close(shannon_entropy(&[1, 1], 2).unwrap(), 1.0));
    assert_eq!(shannon_entropy(&[0, 0], 2), Err(MetricsError::EmptyCounts));
    assert_eq!(shannon_entropy(&[1], 1), Err(MetricsError::BadBase(1)));
}

#[test]
fn sectors_and_rotation_classes() {
    assert_eq!(direction_sector(1.0, 0.0, 16), 0);
    assert_eq!(direction_sector(0.0, 1.0, 16), 4);
    assert_eq!(direction_sector(-1.0, 0.0, 16), 8);
    assert_eq!(direction_sector(0.0, -1.0, 16), 12);
    assert_eq!(direction_sector(1.0, -1e-9, 16), 15);
    assert_eq!(rotation_class(0.02, 0.01), 0);
    assert_eq!(rotation_class(-0.02, 0.01), 1);
    assert_eq!(rotation_class(0.01, 0.01), 2);
}

fn line(len: usize, step: [f64; 3], start: [f64; 3]) -> Vec<[f64; 3]> {
    (0..len)
        .map(|i| {
            [
                start[0] + step[0] * i as f64,
                start[1] + step[1] * i as f64,
                start[2] + step[2] * i as f64,
            ]
        })
        .collect()
}

fn small_cfg() -> MetricsConfig {
    MetricsConfig {
        cell: 1.0,
        h_a: 1,
        ..MetricsConfig::default()
    }
}

#[test]
fn single_direction_has_zero_entropy() {
    // all inside one cell, moving along +x
    let d = demo_from_poses(&line(20, [0.001, 0.0, 0.0], [0.5, 0.5, 0.0]), vec![], 0, 0);
    let v = velocity_entropy(&[d], &small_cfg()).unwrap();
    assert_eq!(v.cells.len(), 1);
    assert_eq!(v.cells[0].linear_counts[0], 19);
    assert_eq!(v.mean_linear, Some(0.0));
    assert_eq!(v.cells[0].angular_counts, [0, 0, 19]);
    assert_eq!(v.mean_angular, Some(0.0));
}

#[test]
fn opposite_directions_give_a_quarter() {
    let a = demo_from_poses(&line(11, [0.001, 0.0, 0.02], [0.5, 0.5, 0.0]), vec![], 0, 0);
    let b = demo_from_poses(
        &line(11, [-0.001, 0.0, -0.02], [0.5, 0.5, 0.0]),
        vec![],
        1,
        0,
    );
    let v = velocity_entropy(&[a, b], &small_cfg()).unwrap();
    assert!(close(v.mean_linear.unwrap(), 0.25));
    assert_eq!(v.cells[0].angular_counts, [10, 10, 0]);
    assert!(close(v.mean_angular.unwrap(), 2f64.ln() / 3f64.ln()));
}

#[test]
fn tiny_displacements_are_skipped() {
    let d = demo_from_poses(&line(10, [0.0, 0.0, 0.0], [0.5, 0.5, 0.0]), vec![], 0, 0);
    let v = velocity_entropy(&[d], &small_cfg()).unwrap();
    assert_eq!(v.skipped, 9);
    assert_eq!(v.mean_linear, None);
    assert_eq!(v.cells[0].linear_entropy, None);
}

#[test]
fn cell_means_are_sample_weighted() {
    // 30 samples with entropy 0 in one cell, 10 with entropy 0.25 in another
    let a = demo_from_poses(&line(31, [0.001, 0.0, 0.0], [0.5, 0.5, 0.0]), vec![], 0, 0);
    let b = demo_from_poses(&line(6, [0.001, 0.0, 0.0], [3.5, 0.5, 0.0]), vec![], 1, 0);
    let c = demo_from_poses(&line(6, [-0.001, 0.0, 0.0], [3.5, 0.5, 0.0]), vec![], 2, 0);
    let v = velocity_entropy(&[a, b, c], &small_cfg()).unwrap();
    assert_eq!(v.cells.len(), 2);
    assert!(close(v.mean_linear.unwrap(), 0.25 * 10.0 / 40.0));
}

#[test]
fn mixed_step_durations_are_rejected() {
    let a = demo_from_poses(&line(5, [0.001, 0.0, 0.0], [0.5, 0.5, 0.0]), vec![], 0, 0);
    let mut b = a.clone();
    b.dt = 0.05;
    assert!(matches!(
        velocity_entropy(&[a, b], &small_cfg()),
        Err(MetricsError::MixedStepDuration(..))
    ));
}

#[test]
fn weighted_distance_examples() {
    assert_eq!(weighted_distance(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0]), 0.0);
    assert!(close(
        weighted_distance(&[0.0, 0.0, 0.0], &[0.3, 0.4, 0.0]),
        0.5
    ));
    assert!(close(
        weighted_distance(&[0.0, 0.0, 0.0], &[0.0, 0.0, PI]),
        0.2 * PI
    ));
    // the yaw gap wraps
    assert!(close(
        weighted_distance(&[0.0, 0.0, 3.0], &[0.0, 0.0, -3.0]),
        0.2 * (2.0 * PI - 6.0)
    ));
}

#[test]
fn success_thresholds_are_strict() {
    let t = TaskDescription::default();
    let at = |dx: f64, dth: f64| {
        SystemState::new([t.goal[0] + dx, t.goal[1], t.goal[2] + dth], vec![0.0; 4])
    };
    assert!(is_success(&at(0.099, 0.19), &t));
    assert!(!is_success(&at(0.0, 0.21), &t));
    assert!(!is_success(&at(0.101, 0.0), &t));
    assert!(is_success(&at(0.0, -0.19), &t));
}

#[test]
fn segment_progress_telescopes() {
    let poses = line(30, [0.005, -0.002, 0.03], [0.4, 0.1, 1.0]);
    let d = demo_from_poses(&poses, vec![7, 15, 22], 0, 0);
    assert_eq!(
        segment_bounds(&d),
        vec![(0, 7), (7, 15), (15, 22), (22, 29)]
    );
    let prog = segment_progress(&d);
    let total = weighted_distance(&poses[0], &d.goal) - weighted_distance(&poses[29], &d.goal);
    assert!((prog.iter().sum::<f64>() - total).abs() <= 1e-12);

    let h = progress_histogram(&[d.clone(), d], &MetricsConfig::default()).unwrap();
    assert_eq!(h.counts.iter().sum::<u64>(), 8);
    assert_eq!(h.samples.len(), 8);
    for v in &h.samples {
        let b = ((v - h.start) / h.bin_width).floor() as usize;
        assert!(b < h.counts.len());
    }
}

#[test]
fn negative_progress_fraction() {
    // moves away from the goal, then toward it
    let mut poses = line(10, [-0.01, 0.0, 0.0], [0.6, 0.0, PI]);
    poses.extend(line(10, [0.02, 0.0, 0.0], [0.51, 0.0, PI]));
    let d = demo_from_poses(&poses, vec![9], 0, 0);
    let h = progress_histogram(&[d], &MetricsConfig::default()).unwrap();
    assert_eq!(h.samples.len(), 2);
    assert_eq!(h.negative_fraction, Some(0.5));
}

#[test]
fn regrasp_entropy_examples() {
    let cfg = MetricsConfig::default();
    let always = Episode {
        plan_id: 0,
        n_actions: 100,
        regrasps: vec![0, 50],
    };
    let r = regrasp_entropy(&[always.clone(), always.clone()], &cfg).unwrap();
    assert_eq!(r.probability[0], 1.0);
    assert_eq!(r.probability[12], 1.0);
    assert_eq!(r.mean, Some(0.0));

    let never = Episode {
        plan_id: 1,
        n_actions: 100,
        regrasps: vec![],
    };
    let r = regrasp_entropy(&[always, never], &cfg).unwrap();
    assert_eq!(r.entropy[0], 1.0);
    assert_eq!(r.entropy[12], 1.0);
    assert!(close(r.mean.unwrap(), 2.0 / 25.0));
    assert_eq!(r.n_episodes, 2);

    assert_eq!(regrasp_entropy(&[], &cfg).unwrap().mean, None);
}

#[test]
fn episodes_join_chunks_in_order() {
    let p = line(11, [0.001, 0.0, 0.0], [0.5, 0.0, 0.0]);
    let a = demo_from_poses(&p, vec![0], 4, 0);
    let b = demo_from_poses(&p, vec![0, 3], 4, 2);
    let c = demo_from_poses(&p, vec![2], 9, 0);
    let eps = episodes(&[b, c, a]);
    assert_eq!(eps.len(), 2);
    assert_eq!(eps[0].plan_id, 4);
    assert_eq!(eps[0].n_actions, 20);
    assert_eq!(eps[0].regrasps, vec![0, 10, 13]);
    assert_eq!(eps[1].regrasps, vec![2]);
}

#[test]
fn report_comparison_of_identical_inputs_is_zero() {
    let d = demo_from_poses(
        &line(80, [0.002, 0.001, 0.01], [0.4, 0.0, 0.0]),
        vec![30],
        0,
        0,
    );
    let cfg = MetricsConfig::default();
    let a = EntropyReport::build(std::slice::from_ref(&d), &cfg, vec![]).unwrap();
    let c = compare_reports(&a, &a.clone());
    for v in c.summary_delta.values().flatten() {
        assert_eq!(*v, 0.0);
    }
    assert!(c.regrasp_entropy_delta.iter().all(|v| *v == 0.0));
    assert_eq!(a.summary()["demos"], Some(1.0));
    let dir = tempfile::tempdir().unwrap();
    a.write_csv_dir(dir.path()).unwrap();
    assert!(std::fs::read_dir(dir.path()).unwrap().count() >= 3);
}

proptest! {
    #[test]
    fn entropy_is_permutation_invariant_and_bounded(mut counts in prop::collection::vec(0u64..50, 2..20), rot in 0usize..20) {
        prop_assume!(counts.iter().sum::<u64>() > 0);
        let b = counts.len();
        let h = shannon_entropy(&counts, b).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&h));
        let r = rot % b;
        counts.rotate_left(r);
        prop_assert!((shannon_entropy(&counts, b).unwrap() - h).abs() <= 1e-12);
        counts.reverse();
        prop_assert!((shannon_entropy(&counts, b).unwrap() - h).abs() <= 1e-12);
    }

    #[test]
    fn weighted_distance_is_symmetric(a in prop::array::uniform3(-3.0f64..3.0), b in prop::array::uniform3(-3.0f64..3.0)) {
        let d = weighted_distance(&a, &b);
        prop_assert!(d >= 0.0);
        prop_assert!((d - weighted_distance(&b, &a)).abs() <= 1e-12);
    }
}
