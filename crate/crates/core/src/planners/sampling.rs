use rand::Rng;
use std::f64::consts::{FRAC_PI_2, PI};

use super::PlannerError;
use crate::dynamics::{wrap_angle, SystemState, TaskDescription};
use crate::metrics::weighted_distance;

/// Gap left between a freshly placed finger and the disk surface, m.
pub const GRASP_CLEARANCE: f64 = 1e-3;
pub const GRASP_TRIES: usize = 1000;

/// Samples a two-finger grasp around the object at `q_obj`.
///
/// The first contact bearing is uniform, the second is offset by a uniform
/// separation in `[90, 180]` degrees with a random sign. Draws that put a
/// finger outside the joint limits are rejected.
pub fn sample_grasp<R: Rng + ?Sized>(
    q_obj: &[f64; 3],
    task: &TaskDescription,
    rng: &mut R,
) -> Result<Vec<f64>, PlannerError> {
    let r = task.disk_radius + task.finger_radius + GRASP_CLEARANCE;
    for _ in 0..GRASP_TRIES {
        let a1 = rng.random_range(-PI..PI);
        let sep = rng.random_range(FRAC_PI_2..=PI);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let a2 = wrap_angle(a1 + sign * sep);
        let q = vec![
            q_obj[0] + r * a1.cos(),
            q_obj[1] + r * a1.sin(),
            q_obj[0] + r * a2.cos(),
            q_obj[1] + r * a2.sin(),
        ];
        let apart = (q[0] - q[2]).hypot(q[1] - q[3]) > 2.0 * task.finger_radius;
        if apart && task.robot_in_bounds(&q) {
            return Ok(q);
        }
    }
    Err(PlannerError::GraspInfeasible {
        tries: GRASP_TRIES,
        q_obj: *q_obj,
    })
}

/// Start state for demonstration generation and evaluation episodes.
///
/// The object is uniform in an axis-aligned `region` (side lengths `[x, y]`)
/// centered at the goal position, clipped to the object limits, with yaw 0.
/// Each finger is uniform in its joint box, rejected while it touches the disk.
pub fn sample_initial_state<R: Rng + ?Sized>(
    task: &TaskDescription,
    region: [f64; 2],
    rng: &mut R,
) -> Result<SystemState, PlannerError> {
    let mut q_obj = [0.0; 3];
    for i in 0..2 {
        let lo = (task.goal[i] - 0.5 * region[i]).max(task.object_lb[i]);
        let hi = (task.goal[i] + 0.5 * region[i]).min(task.object_ub[i]);
        q_obj[i] = if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        };
    }
    let mut q_rbt = Vec::with_capacity(task.n_rbt());
    for f in 0..task.finger_count {
        let mut placed = false;
        for _ in 0..GRASP_TRIES {
            let x = rng.random_range(task.robot_lb[2 * f]..=task.robot_ub[2 * f]);
            let y = rng.random_range(task.robot_lb[2 * f + 1]..=task.robot_ub[2 * f + 1]);
            let clear = (x - q_obj[0]).hypot(y - q_obj[1]) > task.disk_radius + task.finger_radius;
            let apart = q_rbt
                .chunks(2)
                .all(|o: &[f64]| (o[0] - x).hypot(o[1] - y) > 2.0 * task.finger_radius);
            if clear && apart {
                q_rbt.push(x);
                q_rbt.push(y);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(PlannerError::GraspInfeasible {
                tries: GRASP_TRIES,
                q_obj,
            });
        }
    }
    Ok(SystemState::new(q_obj, q_rbt))
}

/// The goal with probability `goal_bias`, otherwise a uniform pose in the object limits.
pub fn sample_object_pose<R: Rng + ?Sized>(
    task: &TaskDescription,
    rng: &mut R,
    goal_bias: f64,
) -> [f64; 3] {
    if rng.random::<f64>() < goal_bias {
        return task.goal;
    }
    let mut q = [0.0; 3];
    for (i, v) in q.iter_mut().enumerate() {
        *v = rng.random_range(task.object_lb[i]..=task.object_ub[i]);
    }
    q[2] = wrap_angle(q[2]);
    q
}

/// Index of the pose closest to `target` in weighted distance; ties go to the lowest index.
pub fn nearest<'a, I>(poses: I, target: &[f64; 3]) -> Option<usize>
where
    I: IntoIterator<Item = &'a [f64; 3]>,
{
    let mut best: Option<(usize, f64)> = None;
    for (i, q) in poses.into_iter().enumerate() {
        let d = weighted_distance(q, target);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::finger_phi;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grasp_at_center_is_feasible() {
        let task = TaskDescription::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q_obj = [0.6, 0.0, 0.0];
        let q = sample_grasp(&q_obj, &task, &mut rng).unwrap();
        assert!(task.robot_in_bounds(&q));
        let s = SystemState::new(q_obj, q);
        for i in 0..2 {
            assert!((finger_phi(&s, &task, i) - GRASP_CLEARANCE).abs() < 1e-12);
        }
    }

    #[test]
    fn grasp_far_outside_fails() {
        let task = TaskDescription::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let err = sample_grasp(&[2.0, 2.0, 0.0], &task, &mut rng).unwrap_err();
        assert!(matches!(
            err,
            PlannerError::GraspInfeasible { tries: 1000, .. }
        ));
    }

    #[test]
    fn full_goal_bias() {
        let task = TaskDescription::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(sample_object_pose(&task, &mut rng, 1.0), task.goal);
        }
    }

    #[test]
    fn nearest_picks_lowest_tie() {
        let poses = [
            [0.3, 0.0, 0.0],
            [0.1, 0.0, 0.0],
            [0.2, 0.0, 0.0],
            [0.1, 0.0, 0.0],
        ];
        assert_eq!(nearest(poses.iter(), &[0.0, 0.0, 0.0]), Some(1));
        assert_eq!(nearest([[1.0, 1.0, 1.0]].iter(), &[0.0, 0.0, 0.0]), Some(0));
        assert_eq!(nearest(std::iter::empty(), &[0.0, 0.0, 0.0]), None);
    }
}
