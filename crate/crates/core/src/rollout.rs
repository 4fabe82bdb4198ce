//! Chunked execution of plans in the exact stepper.
//!
//! A plan is cut at its regrasps. Every chunk starts from the planned state,
//! moves the fingers to the new grasp along a retract, arc, approach path and
//! then replays the planned contact actions through [`step_exact`].

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::dynamics::{
    angle_diff, step_exact, Action, DynamicsError, DynamicsParams, SystemState, TaskDescription,
};
use crate::metrics::weighted_distance;
use crate::planners::{Plan, PlanItem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RolloutError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("regrasp path blocked for every finger order")]
    RegraspBlocked,
    #[error("plan did not reach its goal")]
    PlanFailed,
    #[error("invalid rollout configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub reset_at_chunk_start: bool,
    /// Clearance between the disk surface and the regrasp arc, m.
    pub retract_margin: f64,
    /// Finger travel per regrasp waypoint, m.
    pub approach_speed: f64,
    /// Demonstrations shorter than this many states are merged with the next chunk.
    pub min_states: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            reset_at_chunk_start: true,
            retract_margin: 0.02,
            approach_speed: 0.01,
            // h_o + h_a + 1 for the default dataset horizons
            min_states: 64,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), RolloutError> {
        if !(self.retract_margin > 0.0) || !(self.approach_speed > 0.0) {
            return Err(RolloutError::InvalidConfig(
                "retract_margin and approach_speed must be positive".into(),
            ));
        }
        if self.min_states < 2 {
            return Err(RolloutError::InvalidConfig(
                "min_states must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// One recorded chunk: `states[t + 1] = step_exact(states[t], actions[t])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub states: Vec<SystemState>,
    pub actions: Vec<Action>,
    /// Step duration, s.
    pub dt: f64,
    /// Action indices at which a regrasp motion starts, strictly increasing.
    pub regrasp_indices: Vec<usize>,
    pub plan_id: u64,
    /// Index of the first plan chunk this demonstration covers.
    pub chunk_index: usize,
    pub goal: [f64; 3],
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<(), String> {
        if self.states.is_empty() {
            return Err("no states".into());
        }
        if self.actions.len() + 1 != self.states.len() {
            return Err(format!(
                "{} states but {} actions",
                self.states.len(),
                self.actions.len()
            ));
        }
        if !self.regrasp_indices.windows(2).all(|w| w[0] < w[1]) {
            return Err("regrasp indices not strictly increasing".into());
        }
        if self
            .regrasp_indices
            .last()
            .is_some_and(|&i| i >= self.states.len())
        {
            return Err("regrasp index out of range".into());
        }
        if !self.states.iter().all(|s| s.is_finite())
            || !self
                .actions
                .iter()
                .all(|a| a.0.iter().all(|v| v.is_finite()))
        {
            return Err("non-finite entry".into());
        }
        Ok(())
    }

    /// Re-executes the actions from the first state.
    pub fn replay(
        &self,
        params: &DynamicsParams,
        task: &TaskDescription,
    ) -> Result<Vec<SystemState>, DynamicsError> {
        let mut out = Vec::with_capacity(self.states.len());
        let mut s = self.states[0].clone();
        out.push(s.clone());
        for a in &self.actions {
            s = step_exact(&s, a, params, task)?;
            out.push(s.clone());
        }
        Ok(out)
    }
}

/// A regrasp (if any) followed by its contact segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Chunk {
    /// Planned state before the chunk.
    pub start: SystemState,
    pub regrasp: Option<Vec<f64>>,
    pub actions: Vec<Action>,
    /// Planned state after each action.
    pub states: Vec<SystemState>,
}

impl Chunk {
    /// Planned state at the end of the chunk.
    pub fn end(&self) -> SystemState {
        match (self.states.last(), &self.regrasp) {
            (Some(s), _) => s.clone(),
            (None, Some(q)) => SystemState::new(self.start.q_obj, q.clone()),
            (None, None) => self.start.clone(),
        }
    }
}

/// Splits a plan at its regrasps; only the first chunk may lack one.
pub fn chunk_plan(plan: &Plan) -> Vec<Chunk> {
    let mut out: Vec<Chunk> = Vec::new();
    let mut cur = plan.start.clone();
    for item in &plan.items {
        match item {
            PlanItem::Regrasp { q_rbt } => {
                out.push(Chunk {
                    start: cur.clone(),
                    regrasp: Some(q_rbt.clone()),
                    actions: Vec::new(),
                    states: Vec::new(),
                });
                cur.q_rbt = q_rbt.clone();
            }
            PlanItem::Step { action, state } => {
                if out.is_empty() {
                    out.push(Chunk {
                        start: cur.clone(),
                        regrasp: None,
                        actions: Vec::new(),
                        states: Vec::new(),
                    });
                }
                let c = out.last_mut().expect("pushed above");
                c.actions.push(action.clone());
                c.states.push(state.clone());
                cur = state.clone();
            }
        }
    }
    if out.is_empty() {
        out.push(Chunk {
            start: plan.start.clone(),
            regrasp: None,
            actions: Vec::new(),
            states: Vec::new(),
        });
    }
    out
}

/// Waypoints moving a single finger from `from` to `to` around a disk
/// centered at `center`: radially out (or in) to `radius`, along that circle,
/// then radially to the target. `dir` picks the arc direction (+1 is
/// counterclockwise). The last waypoint is `to` itself.
fn finger_path(
    center: [f64; 2],
    radius: f64,
    from: [f64; 2],
    to: [f64; 2],
    dir: f64,
    speed: f64,
) -> Vec<[f64; 2]> {
    let b0 = (from[1] - center[1]).atan2(from[0] - center[0]);
    let b1 = (to[1] - center[1]).atan2(to[0] - center[0]);
    let r0 = (from[0] - center[0]).hypot(from[1] - center[1]);
    let r1 = (to[0] - center[0]).hypot(to[1] - center[1]);
    let mut sweep = angle_diff(b1, b0);
    if sweep * dir < 0.0 {
        sweep += dir * 2.0 * PI;
    }
    let l0 = (r0 - radius).abs();
    let l1 = radius * sweep.abs();
    let l2 = (r1 - radius).abs();
    let total = l0 + l1 + l2;
    if total == 0.0 {
        return Vec::new();
    }
    let n = (total / speed).ceil() as usize;
    let at = |s: f64| -> [f64; 2] {
        if s <= l0 {
            let r = r0 + (radius - r0) * if l0 > 0.0 { s / l0 } else { 1.0 };
            [center[0] + r * b0.cos(), center[1] + r * b0.sin()]
        } else if s <= l0 + l1 {
            let b = b0 + sweep * (s - l0) / l1;
            [center[0] + radius * b.cos(), center[1] + radius * b.sin()]
        } else {
            let r = radius + (r1 - radius) * (s - l0 - l1) / l2;
            [center[0] + r * b1.cos(), center[1] + r * b1.sin()]
        }
    };
    let mut out: Vec<[f64; 2]> = (1..n).map(|k| at(k as f64 * speed)).collect();
    out.push(to);
    out
}

/// Commands that move the fingers one at a time from `state.q_rbt` to
/// `new_q_rbt` without touching the disk.
///
/// Each finger retracts radially to `disk + margin`, travels along that circle
/// and approaches radially, one waypoint per `approach_speed` of path. The
/// shorter arc is tried first. An arc passing within `margin` of another finger,
/// or a waypoint outside the joint limits, blocks that path; when every path of
/// a finger is blocked the other finger order is tried.
pub fn synthesize_regrasp_motion(
    state: &SystemState,
    new_q_rbt: &[f64],
    task: &TaskDescription,
    cfg: &RolloutConfig,
) -> Result<Vec<Action>, RolloutError> {
    let n_f = task.finger_count;
    let forward: Vec<usize> = (0..n_f).collect();
    let backward: Vec<usize> = (0..n_f).rev().collect();
    for order in [forward, backward] {
        if let Some(seq) = regrasp_in_order(state, new_q_rbt, task, cfg, &order) {
            return Ok(seq);
        }
    }
    Err(RolloutError::RegraspBlocked)
}

fn regrasp_in_order(
    state: &SystemState,
    new_q_rbt: &[f64],
    task: &TaskDescription,
    cfg: &RolloutConfig,
    order: &[usize],
) -> Option<Vec<Action>> {
    let center = [state.q_obj[0], state.q_obj[1]];
    let radius = task.disk_radius + task.finger_radius + cfg.retract_margin;
    let mut cmd = state.q_rbt.clone();
    let mut out = Vec::new();
    for &f in order {
        let from = [cmd[2 * f], cmd[2 * f + 1]];
        let to = [new_q_rbt[2 * f], new_q_rbt[2 * f + 1]];
        if from == to {
            continue;
        }
        let b0 = (from[1] - center[1]).atan2(from[0] - center[0]);
        let b1 = (to[1] - center[1]).atan2(to[0] - center[0]);
        let short = if angle_diff(b1, b0) >= 0.0 { 1.0 } else { -1.0 };
        let path = [short, -short].into_iter().find_map(|dir| {
            let path = finger_path(center, radius, from, to, dir, cfg.approach_speed);
            path.iter()
                .all(|p| waypoint_ok(p, f, &cmd, center, task, cfg))
                .then_some(path)
        })?;
        for p in path {
            cmd[2 * f] = p[0];
            cmd[2 * f + 1] = p[1];
            out.push(Action(cmd.clone()));
        }
    }
    Some(out)
}

fn waypoint_ok(
    p: &[f64; 2],
    f: usize,
    cmd: &[f64],
    center: [f64; 2],
    task: &TaskDescription,
    cfg: &RolloutConfig,
) -> bool {
    let phi = (p[0] - center[0]).hypot(p[1] - center[1]) - task.disk_radius - task.finger_radius;
    if phi <= 0.0 {
        return false;
    }
    for axis in 0..2 {
        let j = 2 * f + axis;
        if p[axis] < task.robot_lb[j] || p[axis] > task.robot_ub[j] {
            return false;
        }
    }
    (0..task.finger_count).filter(|&o| o != f).all(|o| {
        let q = [cmd[2 * o], cmd[2 * o + 1]];
        (q[0] - p[0]).hypot(q[1] - p[1]) > cfg.retract_margin + 2.0 * task.finger_radius
    })
}

/// Why part of a plan produced no demonstration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dropped {
    pub chunk_index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub demos: Vec<Demonstration>,
    pub dropped: Vec<Dropped>,
    /// Weighted distance between the executed and planned object pose at the
    /// end of every executed chunk.
    pub drift: Vec<f64>,
}

/// Moves `points` rigidly with the object from pose `from` to pose `to`.
fn carry(points: &[f64], from: &[f64; 3], to: &[f64; 3]) -> Vec<f64> {
    if from == to {
        return points.to_vec();
    }
    let (s, c) = angle_diff(to[2], from[2]).sin_cos();
    points
        .chunks(2)
        .flat_map(|p| {
            let dx = p[0] - from[0];
            let dy = p[1] - from[1];
            [to[0] + c * dx - s * dy, to[1] + s * dx + c * dy]
        })
        .collect()
}

struct Recording {
    states: Vec<SystemState>,
    actions: Vec<Action>,
    regrasps: Vec<usize>,
    first_chunk: usize,
}

impl Recording {
    fn new(start: SystemState, first_chunk: usize) -> Self {
        Self {
            states: vec![start],
            actions: Vec::new(),
            regrasps: Vec::new(),
            first_chunk,
        }
    }

    fn push(&mut self, a: Action, s: SystemState) {
        self.actions.push(a);
        self.states.push(s);
    }
}

/// Executes one chunk from the last recorded state. The regrasp target and
/// the contact commands move rigidly with any drift of the object away from
/// the planned chunk start.
fn run_chunk(
    rec: &mut Recording,
    chunk: &Chunk,
    params: &DynamicsParams,
    task: &TaskDescription,
    cfg: &RolloutConfig,
) -> Result<f64, RolloutError> {
    let cur = rec.states.last().expect("recording is never empty").clone();
    let planned = chunk.start.q_obj;
    if let Some(q) = &chunk.regrasp {
        let target = carry(q, &planned, &cur.q_obj);
        let idx = rec.actions.len();
        if rec.regrasps.last() != Some(&idx) {
            rec.regrasps.push(idx);
        }
        let mut s = cur.clone();
        for a in synthesize_regrasp_motion(&cur, &target, task, cfg)? {
            s = step_exact(&s, &a, params, task)?;
            rec.push(a, s.clone());
        }
    }
    let mut s = rec.states.last().expect("recording is never empty").clone();
    for a in &chunk.actions {
        let a = Action(carry(a.as_slice(), &planned, &cur.q_obj));
        s = step_exact(&s, &a, params, task)?;
        rec.push(a, s.clone());
    }
    Ok(weighted_distance(&s.q_obj, &chunk.end().q_obj))
}

/// Rolls a successful plan out in the exact stepper, one demonstration per
/// chunk (short chunks merged with the following ones).
///
/// A chunk whose execution fails is dropped with its reason. If any executed
/// state leaves the object limits the whole plan is dropped.
pub fn rollout_plan(
    plan: &Plan,
    plan_id: u64,
    cfg: &RolloutConfig,
    params: &DynamicsParams,
    task: &TaskDescription,
) -> Result<RolloutResult, RolloutError> {
    cfg.validate()?;
    if !plan.success {
        return Err(RolloutError::PlanFailed);
    }
    let chunks = chunk_plan(plan);
    let mut res = RolloutResult::default();
    let mut done: Vec<Recording> = Vec::new();
    let mut rec: Option<Recording> = None;

    for (ci, chunk) in chunks.iter().enumerate() {
        let open = match rec.take() {
            Some(r) => r,
            None => Recording::new(chunk.start.clone(), ci),
        };
        let mut attempt = open;
        let snapshot = (attempt.states.len(), attempt.regrasps.len());
        match run_chunk(&mut attempt, chunk, params, task, cfg) {
            Ok(drift) => {
                res.drift.push(drift);
                if !cfg.reset_at_chunk_start || attempt.states.len() < cfg.min_states {
                    rec = Some(attempt);
                } else {
                    done.push(attempt);
                }
            }
            Err(e) => {
                log::debug!("plan {plan_id}: chunk {ci} dropped: {e}");
                res.dropped.push(Dropped {
                    chunk_index: ci,
                    reason: e.to_string(),
                });
                // keep what was recorded before the failing chunk
                attempt.states.truncate(snapshot.0);
                attempt.actions.truncate(snapshot.0 - 1);
                attempt.regrasps.truncate(snapshot.1);
                if attempt.actions.is_empty() {
                    continue;
                }
                if attempt.states.len() >= cfg.min_states {
                    done.push(attempt);
                } else {
                    res.dropped.push(Dropped {
                        chunk_index: attempt.first_chunk,
                        reason: "too short after a dropped chunk".into(),
                    });
                }
            }
        }
    }
    if let Some(mut tail) = rec {
        // a short trailing chunk continues the previous demonstration
        if tail.states.len() < cfg.min_states && cfg.reset_at_chunk_start {
            if let Some(mut prev) = done.pop() {
                let first = tail.first_chunk;
                let end = chunks.len();
                let mut ok = true;
                for (ci, chunk) in chunks.iter().enumerate().take(end).skip(first) {
                    let snapshot = prev.states.len();
                    if let Err(e) = run_chunk(&mut prev, chunk, params, task, cfg) {
                        res.dropped.push(Dropped {
                            chunk_index: ci,
                            reason: e.to_string(),
                        });
                        prev.states.truncate(snapshot);
                        prev.actions.truncate(snapshot - 1);
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    prev.regrasps.retain(|&i| i < prev.actions.len());
                }
                tail = prev;
            }
        }
        if tail.states.len() >= cfg.min_states {
            done.push(tail);
        } else {
            res.dropped.push(Dropped {
                chunk_index: tail.first_chunk,
                reason: format!(
                    "{} states, fewer than {}",
                    tail.states.len(),
                    cfg.min_states
                ),
            });
        }
    }

    if let Some((ci, _)) = done
        .iter()
        .flat_map(|r| r.states.iter().map(move |s| (r.first_chunk, s)))
        .find(|(_, s)| !task.object_in_bounds(&s.q_obj))
    {
        res.dropped.push(Dropped {
            chunk_index: ci,
            reason: "object left its limits".into(),
        });
        log::debug!("plan {plan_id}: dropped, object left its limits");
        return Ok(res);
    }

    res.demos = done
        .into_iter()
        .map(|r| Demonstration {
            states: r.states,
            actions: r.actions,
            dt: params.h,
            regrasp_indices: r.regrasps,
            plan_id,
            chunk_index: r.first_chunk,
            goal: plan.goal,
        })
        .collect();
    Ok(res)
}
