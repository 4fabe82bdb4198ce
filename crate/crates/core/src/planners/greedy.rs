use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;

use super::{
    at_joint_limit, check_task, sample_grasp, with_grasp, Plan, PlanItem, PlannerConfig,
    PlannerError,
};
use crate::dynamics::{contact_set, DynamicsParams, SystemState, TaskDescription};
use crate::metrics::weighted_distance;
use crate::plancontact::{plan_contact, TrustRegion};

/// Greedy search: grasp, push straight for the goal, regrasp when stuck.
///
/// A regrasp is triggered when a joint reaches its limit or when the weighted
/// distance to the goal fell by less than `stall_progress` over the last
/// `stall_window` steps. A step that would push the object out of its limits
/// is dropped, still counts against the budget, and ends the segment. The plan
/// fails after `max_actions` actions.
pub fn greedy_search(
    start: &SystemState,
    task: &TaskDescription,
    params: &DynamicsParams,
    tr: &TrustRegion,
    cfg: &PlannerConfig,
) -> Result<Plan, PlannerError> {
    check_task(task)?;
    cfg.validate()?;
    let goal = task.goal;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut plan = Plan::empty(start.clone(), goal, false);
    let mut cur = start.clone();
    let mut budget = cfg.max_actions;
    let ctx = Drive {
        task,
        params,
        tr,
        cfg,
    };
    plan.success = ctx.drive(
        &mut plan,
        &mut cur,
        &goal,
        cfg.goal_tol,
        false,
        &mut rng,
        &mut budget,
    )?;
    Ok(plan)
}

pub(crate) struct Drive<'a> {
    pub task: &'a TaskDescription,
    pub params: &'a DynamicsParams,
    pub tr: &'a TrustRegion,
    pub cfg: &'a PlannerConfig,
}

impl Drive<'_> {
    /// Pushes the object toward `target` with inverse-dynamics steps, regrasping
    /// at joint limits and stalls, until within `tol` or out of `budget`.
    ///
    /// With `keep_grasp` the current fingers are tried before the first regrasp.
    #[allow(clippy::too_many_arguments)]
    pub fn drive(
        &self,
        plan: &mut Plan,
        cur: &mut SystemState,
        target: &[f64; 3],
        tol: f64,
        keep_grasp: bool,
        rng: &mut ChaCha8Rng,
        budget: &mut usize,
    ) -> Result<bool, PlannerError> {
        let cfg = self.cfg;
        let mut keep = keep_grasp && !contact_set(cur, self.task, self.params.d_max).is_empty();
        loop {
            if weighted_distance(&cur.q_obj, target) < tol {
                return Ok(true);
            }
            if *budget == 0 {
                return Ok(false);
            }
            if !keep {
                let grasp = match sample_grasp(&cur.q_obj, self.task, rng) {
                    Ok(g) => g,
                    Err(PlannerError::GraspInfeasible { .. }) => {
                        log::debug!("no grasp at {:?}, giving up", cur.q_obj);
                        return Ok(false);
                    }
                    Err(e) => return Err(e),
                };
                plan.items.push(PlanItem::Regrasp {
                    q_rbt: grasp.clone(),
                });
                *cur = with_grasp(cur, grasp);
            }
            keep = false;

            let mut recent: VecDeque<f64> = VecDeque::with_capacity(cfg.stall_window + 1);
            recent.push_back(weighted_distance(&cur.q_obj, target));
            loop {
                let (next, action) = plan_contact(cur, target, self.params, self.task, self.tr)?;
                if !self.task.object_in_bounds(&next.q_obj) {
                    // the step is dropped but still charged, so regrasp loops terminate
                    *budget -= 1;
                    break;
                }
                let limit = at_joint_limit(action.as_slice(), self.task)
                    || at_joint_limit(&next.q_rbt, self.task);
                plan.items.push(PlanItem::Step {
                    action,
                    state: next.clone(),
                });
                *cur = next;
                *budget -= 1;

                let d = weighted_distance(&cur.q_obj, target);
                if d < tol {
                    return Ok(true);
                }
                if *budget == 0 || limit {
                    break;
                }
                recent.push_back(d);
                if recent.len() > cfg.stall_window {
                    let old = recent.pop_front().unwrap_or(d);
                    if old - d < cfg.stall_progress {
                        break;
                    }
                }
            }
        }
    }
}
