use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use super::greedy::Drive;
use super::{check_task, sample_grasp, with_grasp, Plan, PlanItem, PlannerConfig, PlannerError};
use crate::dynamics::{
    angle_diff, step_smoothed, wrap_angle, Action, DynamicsParams, SystemState, TaskDescription,
};
use crate::metrics::weighted_distance;
use crate::plancontact::{plan_contact, TrustRegion};

pub const N_CANONICAL: usize = 8;

/// Grasps tried per node before the build gives up.
const GRASP_ATTEMPTS: usize = 64;
/// Step cap when synthesizing one primitive.
const PRIMITIVE_STEPS: usize = 400;
/// Primitives are synthesized to this fraction of the goal tolerance.
const SYNTH_FRACTION: f64 = 0.2;

/// Yaw of canonical node `i`: -135 degrees plus 45 degrees per index.
pub fn canonical_yaw(i: usize) -> f64 {
    wrap_angle((-135.0 + 45.0 * i as f64).to_radians())
}

/// Canonical node with the smallest yaw gap to `theta`; ties go to the lower index.
pub fn nearest_canonical(theta: f64) -> usize {
    let mut best = 0;
    let mut best_gap = f64::INFINITY;
    for i in 0..N_CANONICAL {
        let gap = angle_diff(canonical_yaw(i), theta).abs();
        if gap < best_gap - 1e-12 {
            best = i;
            best_gap = gap;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrimitiveDir {
    YawPlus45,
    YawMinus45,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub from: usize,
    pub to: usize,
    pub dir: PrimitiveDir,
    pub actions: Vec<Action>,
    /// Smoothed state after each action.
    pub states: Vec<SystemState>,
    pub cost: f64,
}

/// Roadmap over the canonical yaws at the goal position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveGraph {
    pub position: [f64; 2],
    pub grasps: Vec<Vec<f64>>,
    pub edges: Vec<Primitive>,
    pub seed: u64,
}

impl PrimitiveGraph {
    pub fn node_pose(&self, i: usize) -> [f64; 3] {
        [self.position[0], self.position[1], canonical_yaw(i)]
    }

    pub fn node_state(&self, i: usize) -> SystemState {
        SystemState::new(self.node_pose(i), self.grasps[i].clone())
    }

    pub fn edge(&self, from: usize, to: usize) -> Option<&Primitive> {
        self.edges.iter().find(|e| e.from == from && e.to == to)
    }

    pub fn out_edges(&self, from: usize) -> impl Iterator<Item = &Primitive> {
        self.edges.iter().filter(move |e| e.from == from)
    }
}

fn edge_name(from: usize, to: usize, dir: PrimitiveDir) -> String {
    format!(
        "{:?} {}deg -> {}deg",
        dir,
        canonical_yaw(from).to_degrees().round(),
        canonical_yaw(to).to_degrees().round()
    )
}

/// Builds the eight-node yaw roadmap with one fixed grasp per node.
///
/// For every node grasps are drawn from the seeded sampler until both the
/// +45 and -45 degree primitives can be synthesized from it by iterating
/// inverse-dynamics steps; each primitive is then validated by replay.
pub fn build_primitive_graph(
    task: &TaskDescription,
    params: &DynamicsParams,
    tr: &TrustRegion,
    cfg: &PlannerConfig,
    seed: u64,
) -> Result<PrimitiveGraph, PlannerError> {
    check_task(task)?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let position = [task.goal[0], task.goal[1]];
    let mut grasps = Vec::with_capacity(N_CANONICAL);
    let mut edges = Vec::with_capacity(2 * N_CANONICAL);
    let tight = SYNTH_FRACTION * cfg.goal_tol;

    for i in 0..N_CANONICAL {
        let pose = [position[0], position[1], canonical_yaw(i)];
        let plus = ((i + 1) % N_CANONICAL, PrimitiveDir::YawPlus45);
        let minus = (
            (i + N_CANONICAL - 1) % N_CANONICAL,
            PrimitiveDir::YawMinus45,
        );
        let mut last_err = String::from("no grasp attempts made");
        let mut failing = plus;
        let mut found = None;
        for _ in 0..GRASP_ATTEMPTS {
            let grasp = sample_grasp(&pose, task, &mut rng)?;
            let src = SystemState::new(pose, grasp.clone());
            let mut built = Vec::new();
            for (to, dir) in [plus, minus] {
                let target = [position[0], position[1], canonical_yaw(to)];
                match synthesize(&src, &target, tight, task, params, tr) {
                    Ok((actions, states)) => built.push(Primitive {
                        from: i,
                        to,
                        dir,
                        actions,
                        states,
                        cost: 1.0,
                    }),
                    Err(reason) => {
                        last_err = reason;
                        failing = (to, dir);
                        break;
                    }
                }
            }
            if built.len() == 2 {
                found = Some((grasp, built));
                break;
            }
        }
        let Some((grasp, built)) = found else {
            return Err(PlannerError::PrimitiveBuild {
                edge: edge_name(i, failing.0, failing.1),
                reason: last_err,
            });
        };
        grasps.push(grasp);
        edges.extend(built);
    }

    let graph = PrimitiveGraph {
        position,
        grasps,
        edges,
        seed,
    };
    for e in &graph.edges {
        validate_edge(&graph, e, cfg.goal_tol, task, params).map_err(|reason| {
            PlannerError::PrimitiveBuild {
                edge: edge_name(e.from, e.to, e.dir),
                reason,
            }
        })?;
    }
    Ok(graph)
}

/// Iterates inverse-dynamics steps from `src` toward `target` with a fixed grasp.
fn synthesize(
    src: &SystemState,
    target: &[f64; 3],
    tol: f64,
    task: &TaskDescription,
    params: &DynamicsParams,
    tr: &TrustRegion,
) -> Result<(Vec<Action>, Vec<SystemState>), String> {
    let mut cur = src.clone();
    let mut actions = Vec::new();
    let mut states = Vec::new();
    let mut recent = VecDeque::new();
    recent.push_back(weighted_distance(&cur.q_obj, target));
    for _ in 0..PRIMITIVE_STEPS {
        let (next, a) = plan_contact(&cur, target, params, task, tr).map_err(|e| e.to_string())?;
        actions.push(a);
        states.push(next.clone());
        cur = next;
        let d = weighted_distance(&cur.q_obj, target);
        if d < tol {
            return Ok((actions, states));
        }
        recent.push_back(d);
        if recent.len() > 10 {
            let old = recent.pop_front().unwrap_or(d);
            if old - d < 1e-5 {
                return Err(format!("stalled at distance {d:.4}"));
            }
        }
    }
    Err(format!("no convergence within {PRIMITIVE_STEPS} steps"))
}

/// Replays a primitive from its source node and checks it lands on the target yaw.
pub fn validate_edge(
    graph: &PrimitiveGraph,
    edge: &Primitive,
    goal_tol: f64,
    task: &TaskDescription,
    params: &DynamicsParams,
) -> Result<(), String> {
    let mut s = graph.node_state(edge.from);
    for (k, a) in edge.actions.iter().enumerate() {
        s = step_smoothed(&s, a, params, task).map_err(|e| e.to_string())?;
        if s.max_abs_diff(&edge.states[k]) > 1e-6 {
            return Err(format!(
                "replay diverges from the recorded states at step {k}"
            ));
        }
    }
    let d = weighted_distance(&s.q_obj, &graph.node_pose(edge.to));
    if d >= goal_tol {
        return Err(format!("replay ends {d:.4} from the target"));
    }
    Ok(())
}

/// Lexicographically smallest among the cheapest node sequences from `from` to `to`.
pub fn shortest_path(graph: &PrimitiveGraph, from: usize, to: usize) -> Option<(f64, Vec<usize>)> {
    let mut best: Vec<Option<(f64, Vec<usize>)>> = vec![None; N_CANONICAL];
    let mut done = [false; N_CANONICAL];
    best[from] = Some((0.0, vec![from]));
    loop {
        let mut pick: Option<usize> = None;
        for v in 0..N_CANONICAL {
            if done[v] {
                continue;
            }
            if let Some((c, p)) = &best[v] {
                let better = match pick.and_then(|u| best[u].as_ref()) {
                    None => true,
                    Some((cu, pu)) => c < cu || (c == cu && p < pu),
                };
                if better {
                    pick = Some(v);
                }
            }
        }
        let u = pick?;
        done[u] = true;
        if u == to {
            return best[u].clone();
        }
        let (cu, pu) = best[u].clone().expect("picked node has a label");
        for e in graph.out_edges(u) {
            if done[e.to] {
                continue;
            }
            let mut p = pu.clone();
            p.push(e.to);
            let cand = (cu + e.cost, p);
            let replace = match &best[e.to] {
                None => true,
                Some((c, p)) => cand.0 < *c || (cand.0 == *c && cand.1 < *p),
            };
            if replace {
                best[e.to] = Some(cand);
            }
        }
    }
}

/// Every cheapest node sequence from `from` to `to`, sorted.
pub fn enumerate_shortest_paths(graph: &PrimitiveGraph, from: usize, to: usize) -> Vec<Vec<usize>> {
    // distances to `to` by Bellman-Ford on the reversed edges
    let mut dist = [f64::INFINITY; N_CANONICAL];
    dist[to] = 0.0;
    for _ in 0..N_CANONICAL {
        for e in &graph.edges {
            if dist[e.to] + e.cost < dist[e.from] {
                dist[e.from] = dist[e.to] + e.cost;
            }
        }
    }
    let mut out = Vec::new();
    if dist[from].is_infinite() {
        return out;
    }
    let mut stack = vec![vec![from]];
    while let Some(path) = stack.pop() {
        let u = *path.last().expect("paths are non-empty");
        if u == to {
            out.push(path);
            continue;
        }
        for e in graph.out_edges(u) {
            if (dist[e.to] + e.cost - dist[u]).abs() < 1e-12 {
                let mut p = path.clone();
                p.push(e.to);
                stack.push(p);
            }
        }
    }
    out.sort();
    out
}

/// Rotates finger offsets about the node center by `rot` and moves them to `center`.
fn transform_fingers(q: &[f64], node: &[f64; 3], center: &[f64; 3], rot: f64) -> Vec<f64> {
    let (s, c) = rot.sin_cos();
    let mut out = Vec::with_capacity(q.len());
    for f in q.chunks(2) {
        let dx = f[0] - node[0];
        let dy = f[1] - node[1];
        out.push(center[0] + c * dx - s * dy);
        out.push(center[1] + s * dx + c * dy);
    }
    out
}

/// Plans from `start` to the goal position at yaw `goal_yaw` through the roadmap.
///
/// The object is first driven onto the canonical pose nearest its start yaw,
/// then the primitives along the shortest roadmap path are replayed (mapped
/// onto the actual object pose, with a regrasp to each node's grasp), and a
/// final adjustment closes the remaining gap to the goal yaw.
#[allow(clippy::too_many_arguments)]
pub fn primitive_plan(
    start: &SystemState,
    goal_yaw: f64,
    graph: &PrimitiveGraph,
    task: &TaskDescription,
    params: &DynamicsParams,
    tr: &TrustRegion,
    cfg: &PlannerConfig,
) -> Result<Plan, PlannerError> {
    check_task(task)?;
    cfg.validate()?;
    let goal = [graph.position[0], graph.position[1], wrap_angle(goal_yaw)];
    let mut plan = Plan::empty(start.clone(), goal, false);
    if weighted_distance(&start.q_obj, &goal) < cfg.goal_tol {
        plan.success = true;
        return Ok(plan);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut budget = cfg.max_actions;
    let drive = Drive {
        task,
        params,
        tr,
        cfg,
    };
    let c0 = nearest_canonical(start.q_obj[2]);
    let cg = nearest_canonical(goal[2]);
    let mut cur = start.clone();

    if c0 != cg {
        // connect to the first canonical pose, starting from its stored grasp
        let node0 = graph.node_pose(c0);
        let tight = SYNTH_FRACTION * cfg.goal_tol;
        if weighted_distance(&cur.q_obj, &node0) >= tight {
            let rot = angle_diff(cur.q_obj[2], node0[2]);
            let grasp = transform_fingers(&graph.grasps[c0], &node0, &cur.q_obj, rot);
            let grasp = if task.robot_in_bounds(&grasp) {
                grasp
            } else {
                sample_grasp(&cur.q_obj, task, &mut rng)?
            };
            plan.items.push(PlanItem::Regrasp {
                q_rbt: grasp.clone(),
            });
            cur = with_grasp(&cur, grasp);
            if !drive.drive(
                &mut plan,
                &mut cur,
                &node0,
                tight,
                true,
                &mut rng,
                &mut budget,
            )? {
                return Ok(plan);
            }
        }

        let Some((_, path)) = shortest_path(graph, c0, cg) else {
            return Ok(plan);
        };
        for w in path.windows(2) {
            let edge = graph.edge(w[0], w[1]).expect("path follows graph edges");
            let node = graph.node_pose(w[0]);
            let rot = angle_diff(cur.q_obj[2], node[2]);
            let center = cur.q_obj;
            let mut grasp = transform_fingers(&graph.grasps[w[0]], &node, &center, rot);
            task.clamp_robot(&mut grasp);
            plan.items.push(PlanItem::Regrasp {
                q_rbt: grasp.clone(),
            });
            cur = with_grasp(&cur, grasp);
            for a in &edge.actions {
                if budget == 0 {
                    return Ok(plan);
                }
                let mut q = transform_fingers(a.as_slice(), &node, &center, rot);
                task.clamp_robot(&mut q);
                let action = Action(q);
                let next = step_smoothed(&cur, &action, params, task)?;
                plan.items.push(PlanItem::Step {
                    action,
                    state: next.clone(),
                });
                cur = next;
                budget -= 1;
            }
        }
    }

    // final adjustment, keeping the current grasp while it still works
    plan.success = drive.drive(
        &mut plan,
        &mut cur,
        &goal,
        cfg.goal_tol,
        true,
        &mut rng,
        &mut budget,
    )?;
    Ok(plan)
}
