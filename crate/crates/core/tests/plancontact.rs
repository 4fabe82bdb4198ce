mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cdsynth::dynamics::{
    angle_diff, step_smoothed, Action, DynamicsParams, SystemState, TaskDescription,
};
use cdsynth::plancontact::{
    delta_bounds, linearize, plan_contact, plan_contact_step, TrustRegion, FD_EPS,
};
use common::contact_rich;

fn setup() -> (DynamicsParams, TaskDescription) {
    (DynamicsParams::default(), TaskDescription::default())
}

fn one_sided_b(
    s: &SystemState,
    p: &DynamicsParams,
    t: &TaskDescription,
    eps: f64,
) -> Vec<[f64; 3]> {
    let base = step_smoothed(s, &Action(s.q_rbt.clone()), p, t).unwrap();
    (0..s.n_rbt())
        .map(|j| {
            let mut a = s.q_rbt.clone();
            a[j] += eps;
            let n = step_smoothed(s, &Action(a), p, t).unwrap();
            [
                (n.q_obj[0] - base.q_obj[0]) / eps,
                (n.q_obj[1] - base.q_obj[1]) / eps,
                angle_diff(n.q_obj[2], base.q_obj[2]) / eps,
            ]
        })
        .collect()
}

#[test]
fn push_along_x_has_positive_gain() {
    let (p, t) = setup();
    let s = SystemState::new([0.6, 0.0, 0.0], vec![0.2995, 0.0, 1.1, 0.6]);
    let cols = one_sided_b(&s, &p, &t, 1e-5);
    let m = linearize(&s, &p, &t).unwrap();
    assert!(cols[0][0] > 0.0);
    assert!(m.b[(0, 0)] > 0.0);
}

#[test]
fn sensitivities_agree_with_forward_differences() {
    let (p, t) = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..30 {
        let s = contact_rich(&mut rng, &t);
        let m = linearize(&s, &p, &t).unwrap();
        let cols = one_sided_b(&s, &p, &t, FD_EPS / 2.0);
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for (j, col) in cols.iter().enumerate() {
            for i in 0..3 {
                num = num.max((m.b[(i, j)] - col[i]).abs());
                den = den.max(col[i].abs());
            }
        }
        assert!(num <= 1e-2 * den.max(1e-6), "{num} vs {den}");
    }
}

#[test]
fn objective_beats_grid_search() {
    let (p, t) = setup();
    let tr = TrustRegion::default();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..20 {
        let s = contact_rich(&mut rng, &t);
        let target = [
            rng.random_range(0.4..0.8),
            rng.random_range(-0.3..0.3),
            rng.random_range(-3.0..3.0),
        ];
        let step = plan_contact_step(&s, &target, &p, &t, &tr).unwrap();
        let got = step.model.objective(&target, &step.delta);
        let (lo, hi) = delta_bounds(&step.model.action, &t, &tr);
        let grid: Vec<Vec<f64>> = (0..4)
            .map(|j| {
                (0..5)
                    .map(|k| lo[j] + (hi[j] - lo[j]) * k as f64 / 4.0)
                    .collect()
            })
            .collect();
        let mut best = f64::INFINITY;
        for d0 in grid[0].iter().copied() {
            for d1 in grid[1].iter().copied() {
                for d2 in grid[2].iter().copied() {
                    for d3 in grid[3].iter().copied() {
                        let d = [d0, d1, d2, d3];
                        // the grid point must also respect the object limits the QP enforces
                        let r = step.model.residual(&[0.0, 0.0, 0.0], &d);
                        let pred = [r[0], r[1]];
                        if (0..2).all(|i| pred[i] >= t.object_lb[i] && pred[i] <= t.object_ub[i]) {
                            best = best.min(step.model.objective(&target, &d));
                        }
                    }
                }
            }
        }
        assert!(got <= best + 1e-9, "{got} > {best}");
    }
}

#[test]
fn holding_target_never_increases_model_objective() {
    let (p, t) = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..20 {
        let s = contact_rich(&mut rng, &t);
        let step = plan_contact_step(&s, &s.q_obj, &p, &t, &TrustRegion::default()).unwrap();
        let zero = step.model.objective(&s.q_obj, &[0.0; 4]);
        assert!(step.model.objective(&s.q_obj, &step.delta) <= zero + 1e-15);
    }
}

#[test]
fn no_contact_gives_zero_change_and_free_step() {
    let (p, t) = setup();
    let s = SystemState::new([0.6, 0.0, 0.0], vec![0.05, 0.6, 1.15, -0.6]);
    let (next, a) = plan_contact(&s, &[0.7, 0.1, 2.0], &p, &t, &TrustRegion::default()).unwrap();
    assert_eq!(a.0, s.q_rbt);
    assert!(next.bit_eq(&step_smoothed(&s, &a, &p, &t).unwrap()));
}

#[test]
fn plan_contact_is_deterministic() {
    let (p, t) = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let s = contact_rich(&mut rng, &t);
    let tr = TrustRegion::default();
    let a = plan_contact(&s, &t.goal, &p, &t, &tr).unwrap();
    let b = plan_contact(&s, &t.goal, &p, &t, &tr).unwrap();
    assert!(a.0.bit_eq(&b.0));
    assert_eq!(a.1, b.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn change_respects_trust_region_and_limits(seed in 0u64..100_000, tx in 0.35f64..0.85, ty in -0.35f64..0.35, th in -3.1f64..3.1) {
        let (p, mut t) = setup();
        // tighten the limits so they bind for some fingers
        t.robot_ub = vec![0.9, 0.3, 0.9, 0.3];
        t.robot_lb = vec![0.3, -0.3, 0.3, -0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = contact_rich(&mut rng, &TaskDescription::default());
        t.clamp_robot(&mut s.q_rbt);
        let tr = TrustRegion { delta_max: 0.015 };
        let step = plan_contact_step(&s, &[tx, ty, th], &p, &t, &tr).unwrap();
        for (j, d) in step.delta.iter().enumerate() {
            prop_assert!(d.abs() <= tr.delta_max);
            let q = s.q_rbt[j] + d;
            prop_assert!(q >= t.robot_lb[j] && q <= t.robot_ub[j]);
            prop_assert_eq!(step.action.0[j], q);
        }
    }
}
