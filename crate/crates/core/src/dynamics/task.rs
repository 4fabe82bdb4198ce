use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::DynamicsError;

/// Geometry, limits, goal and success thresholds of the planar rotation task.
///
/// The default is a 0.6 m diameter disk that must be turned to 180 degrees at
/// `[0.65, 0.0]`, manipulated by two point fingers with two prismatic axes each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskDescription {
    pub disk_radius: f64,
    pub finger_radius: f64,
    pub finger_count: usize,
    pub object_lb: [f64; 3],
    pub object_ub: [f64; 3],
    /// Per-joint lower limits, `[x0, y0, x1, y1, ...]`.
    pub robot_lb: Vec<f64>,
    pub robot_ub: Vec<f64>,
    pub goal: [f64; 3],
    pub success_position: f64,
    pub success_orientation: f64,
    /// Side lengths `[x, y]` of the initialization region centered at the goal.
    pub init_region: [f64; 2],
}

impl Default for TaskDescription {
    fn default() -> Self {
        Self {
            disk_radius: 0.3,
            finger_radius: 0.0,
            finger_count: 2,
            object_lb: [0.35, -0.35, -PI],
            object_ub: [0.85, 0.35, PI],
            // wide enough for a finger to circle the disk at the regrasp
            // radius wherever the object is
            robot_lb: vec![0.01, -0.69, 0.01, -0.69],
            robot_ub: vec![1.19, 0.69, 1.19, 0.69],
            goal: [0.65, 0.0, PI],
            success_position: 0.1,
            success_orientation: 0.2,
            init_region: [0.4, 0.7],
        }
    }
}

impl TaskDescription {
    pub fn n_rbt(&self) -> usize {
        2 * self.finger_count
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |msg: String| Err(DynamicsError::InvalidConfig(msg));
        if !(self.disk_radius > 0.0) {
            return bad("disk_radius must be positive".into());
        }
        if !(self.finger_radius >= 0.0) {
            return bad("finger_radius must be non-negative".into());
        }
        if self.finger_count == 0 {
            return bad("finger_count must be at least 1".into());
        }
        if self.robot_lb.len() != self.n_rbt() || self.robot_ub.len() != self.n_rbt() {
            return bad(format!(
                "robot limits must have {} entries (two per finger)",
                self.n_rbt()
            ));
        }
        for i in 0..3 {
            if !(self.object_lb[i] < self.object_ub[i]) {
                return bad(format!("object_lb[{i}] must be below object_ub[{i}]"));
            }
        }
        for (i, (lo, hi)) in self.robot_lb.iter().zip(&self.robot_ub).enumerate() {
            if !(lo < hi) {
                return bad(format!("robot_lb[{i}] must be below robot_ub[{i}]"));
            }
        }
        for i in 0..2 {
            if self.goal[i] < self.object_lb[i] || self.goal[i] > self.object_ub[i] {
                return bad("goal lies outside the object limits".into());
            }
        }
        if !(self.success_position > 0.0 && self.success_orientation > 0.0) {
            return bad("success thresholds must be positive".into());
        }
        Ok(())
    }

    /// Whether the planar object position lies inside the object limits.
    pub fn object_in_bounds(&self, q_obj: &[f64; 3]) -> bool {
        (0..2).all(|i| q_obj[i] >= self.object_lb[i] && q_obj[i] <= self.object_ub[i])
    }

    pub fn clamp_robot(&self, q_rbt: &mut [f64]) {
        for (q, (lo, hi)) in q_rbt
            .iter_mut()
            .zip(self.robot_lb.iter().zip(&self.robot_ub))
        {
            *q = q.clamp(*lo, *hi);
        }
    }

    pub fn robot_in_bounds(&self, q_rbt: &[f64]) -> bool {
        q_rbt
            .iter()
            .zip(self.robot_lb.iter().zip(&self.robot_ub))
            .all(|(q, (lo, hi))| q >= lo && q <= hi)
    }
}

/// Parameters of the quasi-dynamic contact model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsParams {
    /// Timestep in seconds.
    pub h: f64,
    /// Robot stiffness per joint, N/m.
    pub stiffness: Vec<f64>,
    /// Object regularization `[m, m, I_z]`.
    pub object_mass: [f64; 3],
    pub mu: f64,
    /// Smoothing sharpness of the log-barrier contact model.
    pub kappa: f64,
    /// Floor applied to signed distances inside the barrier.
    pub phi_min: f64,
    /// Contact detection distance.
    pub d_max: f64,
    /// Newton iteration cap for the smoothed step.
    pub newton_max_iter: usize,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self {
            h: 0.1,
            stiffness: vec![200.0; 4],
            // 1 kg disk; I_z = m r^2 / 2 = 0.045, rounded up
            object_mass: [1.0, 1.0, 0.05],
            mu: 0.5,
            kappa: 1e4,
            phi_min: 1e-4,
            d_max: 0.05,
            newton_max_iter: 200,
        }
    }
}

impl DynamicsParams {
    pub fn validate(&self, task: &TaskDescription) -> Result<(), DynamicsError> {
        let bad = |msg: &str| Err(DynamicsError::InvalidConfig(msg.to_string()));
        if !(self.h > 0.0) {
            return bad("h must be positive");
        }
        if self.stiffness.len() != task.n_rbt() {
            return bad("stiffness must have one entry per robot joint");
        }
        if !self
            .stiffness
            .iter()
            .chain(&self.object_mass)
            .all(|k| *k > 0.0)
        {
            return bad("stiffness and object_mass entries must be positive");
        }
        if !(self.mu >= 0.0) {
            return bad("mu must be non-negative");
        }
        if !(self.kappa > 0.0) {
            return bad("kappa must be positive");
        }
        if !(self.phi_min > 0.0) {
            return bad("phi_min must be positive");
        }
        if !(self.d_max >= 0.0) {
            return bad("d_max must be non-negative");
        }
        Ok(())
    }

    pub fn with_kappa(&self, kappa: f64) -> Self {
        Self {
            kappa,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let task = TaskDescription::default();
        task.validate().unwrap();
        DynamicsParams::default().validate(&task).unwrap();
        assert_eq!(task.goal, [0.65, 0.0, PI]);
        assert_eq!(task.n_rbt(), 4);
    }

    #[test]
    fn rejects_inverted_limits() {
        let task = TaskDescription {
            object_lb: [0.9, -0.35, -PI],
            ..Default::default()
        };
        assert!(task.validate().is_err());
    }

    #[test]
    fn rejects_goal_outside_limits() {
        let task = TaskDescription {
            goal: [1.2, 0.0, 0.0],
            ..Default::default()
        };
        assert!(task.validate().is_err());
    }
}
