use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_task, nearest, sample_grasp, sample_object_pose, with_grasp, Plan, PlanItem,
    PlannerConfig, PlannerError,
};
use crate::dynamics::{contact_set, Action, DynamicsParams, SystemState, TaskDescription};
use crate::metrics::weighted_distance;
use crate::plancontact::{plan_contact, TrustRegion};

/// An extension must bring the object at least this much (weighted distance)
/// closer to its subgoal to be kept; one that moves it less than this marks
/// its source node as stuck.
const MIN_EXTENSION: f64 = 1e-3;
/// Per-step progress toward the subgoal below which an extension stops.
const EXTEND_STALL: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EdgeKind {
    Root,
    Regrasp,
    /// The actions of an extension and the smoothed state after each of them;
    /// the last state is the node's own.
    Contact {
        actions: Vec<Action>,
        states: Vec<SystemState>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub state: SystemState,
    pub parent: Option<usize>,
    pub edge: EdgeKind,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RrtStats {
    pub iterations: usize,
    /// Coin flips between regrasp and extension.
    pub expansions: usize,
    /// Flips that came up regrasp.
    pub regrasp_draws: usize,
    /// Regrasps taken because no node could be extended.
    pub forced_regrasps: usize,
    pub failed_extensions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanTree {
    pub nodes: Vec<TreeNode>,
    pub root: usize,
    pub goal_node: Option<usize>,
    pub success: bool,
    pub stats: RrtStats,
}

impl PlanTree {
    /// Node indices from the root to `idx`.
    pub fn path_to(&self, idx: usize) -> Vec<usize> {
        let mut path = vec![idx];
        let mut cur = idx;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Node closest to `goal`; the goal node itself when the search succeeded.
    pub fn best_node(&self, goal: &[f64; 3]) -> usize {
        self.goal_node.unwrap_or_else(|| {
            nearest(self.nodes.iter().map(|n| &n.state.q_obj), goal).unwrap_or(self.root)
        })
    }

    /// The root-to-goal path as a plan (root-to-best-node on failure).
    pub fn extract_plan(&self, goal: [f64; 3]) -> Plan {
        let path = self.path_to(self.best_node(&goal));
        let mut plan = Plan::empty(self.nodes[self.root].state.clone(), goal, self.success);
        for &i in &path[1..] {
            match &self.nodes[i].edge {
                EdgeKind::Root => {}
                EdgeKind::Regrasp => plan.items.push(PlanItem::Regrasp {
                    q_rbt: self.nodes[i].state.q_rbt.clone(),
                }),
                EdgeKind::Contact { actions, states } => {
                    for (a, s) in actions.iter().zip(states) {
                        plan.items.push(PlanItem::Step {
                            action: a.clone(),
                            state: s.clone(),
                        });
                    }
                }
            }
        }
        plan
    }
}

struct Flags {
    in_contact: bool,
    superseded: bool,
    stuck: bool,
    goal_stuck: bool,
}

/// Contact-RRT.
///
/// Each iteration either regrasps a uniformly chosen node (probability
/// `p_grasp`) or extends the node nearest to a sampled subgoal with up to
/// `extend_steps` inverse-dynamics steps. A node that received a regrasp
/// child is no longer extended itself, since the child shares its object pose
/// and would otherwise never win a nearest-neighbour query. Nodes whose fingers
/// are out of contact, or whose last extension went nowhere, are skipped as
/// well; when nothing is left to extend a regrasp is forced. An extension that
/// does not approach its subgoal is discarded, and a node that failed to
/// approach the goal is not picked for goal-biased extensions again.
pub fn contact_rrt(
    start: &SystemState,
    task: &TaskDescription,
    params: &DynamicsParams,
    tr: &TrustRegion,
    cfg: &PlannerConfig,
) -> Result<PlanTree, PlannerError> {
    check_task(task)?;
    cfg.validate()?;
    let goal = task.goal;
    let in_contact = |s: &SystemState| !contact_set(s, task, params.d_max).is_empty();

    let mut tree = PlanTree {
        nodes: vec![TreeNode {
            state: start.clone(),
            parent: None,
            edge: EdgeKind::Root,
        }],
        root: 0,
        goal_node: None,
        success: false,
        stats: RrtStats::default(),
    };
    if weighted_distance(&start.q_obj, &goal) < cfg.goal_tol {
        tree.goal_node = Some(0);
        tree.success = true;
        return Ok(tree);
    }
    let mut flags = vec![Flags {
        in_contact: in_contact(start),
        superseded: false,
        stuck: false,
        goal_stuck: false,
    }];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);

    while tree.nodes.len() < cfg.max_nodes && tree.stats.iterations < 10 * cfg.max_nodes {
        tree.stats.iterations += 1;
        let extendable: Vec<usize> = flags
            .iter()
            .enumerate()
            .filter(|(_, f)| f.in_contact && !f.superseded && !f.stuck)
            .map(|(i, _)| i)
            .collect();
        let draw = rng.random::<f64>() < cfg.p_grasp;
        tree.stats.expansions += 1;
        if draw {
            tree.stats.regrasp_draws += 1;
        }

        if draw || extendable.is_empty() {
            if !draw {
                tree.stats.forced_regrasps += 1;
            }
            let k = rng.random_range(0..tree.nodes.len());
            let parent = tree.nodes[k].state.clone();
            let grasp = match sample_grasp(&parent.q_obj, task, &mut rng) {
                Ok(g) => g,
                Err(PlannerError::GraspInfeasible { .. }) => continue,
                Err(e) => return Err(e),
            };
            let child = with_grasp(&parent, grasp);
            flags[k].superseded = true;
            flags.push(Flags {
                in_contact: in_contact(&child),
                superseded: false,
                stuck: false,
                goal_stuck: false,
            });
            tree.nodes.push(TreeNode {
                state: child,
                parent: Some(k),
                edge: EdgeKind::Regrasp,
            });
            continue;
        }

        let sub = sample_object_pose(task, &mut rng, cfg.goal_bias);
        let pool: Vec<usize> = if sub == goal {
            extendable
                .iter()
                .copied()
                .filter(|&i| !flags[i].goal_stuck)
                .collect()
        } else {
            extendable
        };
        let Some(pick) = nearest(pool.iter().map(|&i| &tree.nodes[i].state.q_obj), &sub) else {
            tree.stats.failed_extensions += 1;
            continue;
        };
        let k = pool[pick];
        let from = tree.nodes[k].state.clone();

        let mut cur = from.clone();
        let mut actions = Vec::new();
        let mut states = Vec::new();
        let mut reached = false;
        let mut d_prev = weighted_distance(&cur.q_obj, &sub);
        for _ in 0..cfg.extend_steps {
            let (next, a) = plan_contact(&cur, &sub, params, task, tr)?;
            if !task.object_in_bounds(&next.q_obj) {
                break;
            }
            actions.push(a);
            states.push(next.clone());
            cur = next;
            if weighted_distance(&cur.q_obj, &goal) < cfg.goal_tol {
                reached = true;
                break;
            }
            let d = weighted_distance(&cur.q_obj, &sub);
            if d < cfg.goal_tol || d_prev - d < EXTEND_STALL {
                break;
            }
            d_prev = d;
        }
        let gain = weighted_distance(&from.q_obj, &sub) - weighted_distance(&cur.q_obj, &sub);
        if !reached && (actions.is_empty() || gain < MIN_EXTENSION) {
            // extensions are deterministic, so retrying toward the goal would
            // only add the same node again
            if sub == goal {
                flags[k].goal_stuck = true;
            }
            if actions.is_empty() || weighted_distance(&from.q_obj, &cur.q_obj) < MIN_EXTENSION {
                flags[k].stuck = true;
            }
            tree.stats.failed_extensions += 1;
            continue;
        }
        flags.push(Flags {
            in_contact: in_contact(&cur),
            superseded: false,
            stuck: false,
            goal_stuck: false,
        });
        tree.nodes.push(TreeNode {
            state: cur,
            parent: Some(k),
            edge: EdgeKind::Contact { actions, states },
        });
        if reached {
            tree.goal_node = Some(tree.nodes.len() - 1);
            tree.success = true;
            break;
        }
    }
    Ok(tree)
}
