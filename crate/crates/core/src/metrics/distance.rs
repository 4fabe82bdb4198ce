use crate::dynamics::{angle_diff, SystemState, TaskDescription};

/// Meters per radian in the weighted pose distance.
pub const ORIENTATION_WEIGHT: f64 = 0.2;

/// Position error plus 0.2 times the shortest yaw difference.
pub fn weighted_distance(q: &[f64; 3], q_goal: &[f64; 3]) -> f64 {
    let dp = (q_goal[0] - q[0]).hypot(q_goal[1] - q[1]);
    dp + ORIENTATION_WEIGHT * angle_diff(q_goal[2], q[2]).abs()
}

/// Task success: position error and yaw error both strictly below the thresholds.
pub fn is_success(state: &SystemState, task: &TaskDescription) -> bool {
    let g = &task.goal;
    let dp = (g[0] - state.q_obj[0]).hypot(g[1] - state.q_obj[1]);
    let dth = angle_diff(g[2], state.q_obj[2]).abs();
    dp < task.success_position && dth < task.success_orientation
}
