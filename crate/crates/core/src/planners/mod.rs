//! Contact-RRT, greedy search and a primitive-graph planner for the planar task.

mod greedy;
mod primitive;
mod rrt;
mod sampling;

pub use greedy::greedy_search;
pub use primitive::{
    build_primitive_graph, canonical_yaw, enumerate_shortest_paths, nearest_canonical,
    primitive_plan, shortest_path, validate_edge, Primitive, PrimitiveDir, PrimitiveGraph,
    N_CANONICAL,
};
pub use rrt::{contact_rrt, EdgeKind, PlanTree, RrtStats, TreeNode};
pub use sampling::{
    nearest, sample_grasp, sample_initial_state, sample_object_pose, GRASP_CLEARANCE, GRASP_TRIES,
};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::dynamics::{Action, DynamicsError, SystemState, TaskDescription};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlannerError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("no feasible grasp after {tries} tries at object pose {q_obj:?}")]
    GraspInfeasible { tries: usize, q_obj: [f64; 3] },
    #[error("invalid planner configuration: {0}")]
    InvalidConfig(String),
    #[error("primitive edge {edge} failed: {reason}")]
    PrimitiveBuild { edge: String, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerKind {
    Rrt,
    Greedy,
    Primitive,
}

impl PlannerKind {
    pub fn id(self) -> u8 {
        match self {
            PlannerKind::Rrt => 0,
            PlannerKind::Greedy => 1,
            PlannerKind::Primitive => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(PlannerKind::Rrt),
            1 => Some(PlannerKind::Greedy),
            2 => Some(PlannerKind::Primitive),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::Rrt => "rrt",
            PlannerKind::Greedy => "greedy",
            PlannerKind::Primitive => "primitive",
        }
    }
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlannerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rrt" => Ok(PlannerKind::Rrt),
            "greedy" => Ok(PlannerKind::Greedy),
            "primitive" => Ok(PlannerKind::Primitive),
            other => Err(format!(
                "unknown planner '{other}' (expected rrt, greedy or primitive)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Probability that an RRT expansion is a regrasp.
    pub p_grasp: f64,
    /// RRT node budget.
    pub max_nodes: usize,
    /// Maximum inverse-dynamics steps per RRT extension.
    pub extend_steps: usize,
    /// Probability of using the goal as the RRT subgoal.
    pub goal_bias: f64,
    /// Weighted-distance threshold at which a plan counts as reaching the goal.
    pub goal_tol: f64,
    pub rng_seed: u64,
    /// Greedy search gives up after this many actions.
    pub max_actions: usize,
    /// Greedy stall guard: window length in steps ...
    pub stall_window: usize,
    /// ... and the minimum distance decrease over that window.
    pub stall_progress: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            p_grasp: 0.2,
            max_nodes: 2000,
            extend_steps: 20,
            goal_bias: 0.2,
            goal_tol: 0.05,
            rng_seed: 0,
            max_actions: 10_000,
            stall_window: 10,
            stall_progress: 1e-5,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: &str| Err(PlannerError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.p_grasp) || !(0.0..=1.0).contains(&self.goal_bias) {
            return bad("p_grasp and goal_bias must lie in [0, 1]");
        }
        if self.max_nodes == 0
            || self.extend_steps == 0
            || self.max_actions == 0
            || self.stall_window == 0
        {
            return bad("budgets must be positive");
        }
        if !(self.goal_tol > 0.0) {
            return bad("goal_tol must be positive");
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            rng_seed: seed,
            ..self.clone()
        }
    }
}

/// One plan element.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PlanItem {
    /// A commanded action and the smoothed state it leads to.
    Step { action: Action, state: SystemState },
    /// Jump of the robot joints to a new grasp, object unchanged.
    Regrasp { q_rbt: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub start: SystemState,
    pub goal: [f64; 3],
    pub items: Vec<PlanItem>,
    pub success: bool,
}

impl Plan {
    pub fn empty(start: SystemState, goal: [f64; 3], success: bool) -> Self {
        Self {
            start,
            goal,
            items: Vec::new(),
            success,
        }
    }

    pub fn final_state(&self) -> SystemState {
        let mut s = self.start.clone();
        for it in &self.items {
            match it {
                PlanItem::Step { state, .. } => s = state.clone(),
                PlanItem::Regrasp { q_rbt } => s.q_rbt = q_rbt.clone(),
            }
        }
        s
    }

    pub fn n_actions(&self) -> usize {
        self.items
            .iter()
            .filter(|i| matches!(i, PlanItem::Step { .. }))
            .count()
    }

    pub fn n_regrasps(&self) -> usize {
        self.items.len() - self.n_actions()
    }

    /// Number of maximal runs of consecutive steps.
    pub fn n_contact_segments(&self) -> usize {
        let mut n = 0;
        let mut in_seg = false;
        for it in &self.items {
            match it {
                PlanItem::Step { .. } => {
                    if !in_seg {
                        n += 1;
                        in_seg = true;
                    }
                }
                PlanItem::Regrasp { .. } => in_seg = false,
            }
        }
        n
    }

    /// The state before every item, followed by the final state.
    pub fn states(&self) -> Vec<SystemState> {
        let mut out = vec![self.start.clone()];
        let mut s = self.start.clone();
        for it in &self.items {
            match it {
                PlanItem::Step { state, .. } => s = state.clone(),
                PlanItem::Regrasp { q_rbt } => s.q_rbt = q_rbt.clone(),
            }
            out.push(s.clone());
        }
        out
    }
}

/// Whether any joint sits within `1e-6` of one of its limits.
pub fn at_joint_limit(q: &[f64], task: &TaskDescription) -> bool {
    q.iter()
        .zip(task.robot_lb.iter().zip(&task.robot_ub))
        .any(|(v, (lo, hi))| v - lo <= 1e-6 || hi - v <= 1e-6)
}

pub(crate) fn check_task(task: &TaskDescription) -> Result<(), PlannerError> {
    task.validate()?;
    if task.finger_count != 2 {
        return Err(PlannerError::InvalidConfig(
            "the planners place exactly two fingers".into(),
        ));
    }
    Ok(())
}

/// Convenience used by the planners: same object pose, new joints.
pub(crate) fn with_grasp(state: &SystemState, q_rbt: Vec<f64>) -> SystemState {
    SystemState::new(state.q_obj, q_rbt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planner_names_round_trip() {
        for k in [
            PlannerKind::Rrt,
            PlannerKind::Greedy,
            PlannerKind::Primitive,
        ] {
            assert_eq!(k.name().parse::<PlannerKind>().unwrap(), k);
            assert_eq!(PlannerKind::from_id(k.id()), Some(k));
        }
        assert!("astar".parse::<PlannerKind>().is_err());
        assert_eq!(PlannerKind::from_id(3), None);
    }

    #[test]
    fn segment_count() {
        let s = SystemState::new([0.6, 0.0, 0.0], vec![0.4; 4]);
        let step = PlanItem::Step {
            action: Action(vec![0.4; 4]),
            state: s.clone(),
        };
        let rg = PlanItem::Regrasp {
            q_rbt: vec![0.5; 4],
        };
        let plan = Plan {
            start: s,
            goal: [0.65, 0.0, 0.0],
            items: vec![rg.clone(), step.clone(), step.clone(), rg, step],
            success: true,
        };
        assert_eq!(plan.n_contact_segments(), 2);
        assert_eq!(plan.n_regrasps(), 2);
        assert_eq!(plan.states().len(), 6);
    }
}
