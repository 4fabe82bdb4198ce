use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use super::DatasetError;
use crate::dynamics::SystemState;
use crate::rollout::Demonstration;

/// Width of a featurized object pose `[x, y, sin theta, cos theta]`.
pub const POSE_DIM: usize = 4;
pub const GOAL_DIM: usize = POSE_DIM;

/// How many hindsight goals are drawn per observation time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GoalRule {
    /// Every reachable goal offset.
    All,
    /// `k` distinct offsets drawn uniformly, or all of them if fewer exist.
    Uniform(usize),
}

impl Default for GoalRule {
    fn default() -> Self {
        GoalRule::Uniform(4)
    }
}

impl fmt::Display for GoalRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GoalRule::All => f.write_str("all"),
            GoalRule::Uniform(k) => write!(f, "uniform:{k}"),
        }
    }
}

impl FromStr for GoalRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(GoalRule::All);
        }
        let k = s
            .strip_prefix("uniform:")
            .ok_or_else(|| format!("unknown goal rule '{s}' (expected all or uniform:K)"))?;
        match k.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(GoalRule::Uniform(k)),
            _ => Err(format!("bad k in '{s}': must be a positive integer")),
        }
    }
}

impl Serialize for GoalRule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GoalRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Observation history: `h_o + 1` states per tuple.
    pub h_o: usize,
    /// Actions per tuple.
    pub h_a: usize,
    pub rule: GoalRule,
    /// Seed for the goal draws.
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            h_o: 3,
            h_a: 60,
            rule: GoalRule::default(),
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.h_o < 1 || self.h_a < 1 {
            return Err(DatasetError::Invalid(
                "h_o and h_a must be at least 1".into(),
            ));
        }
        if self.rule == GoalRule::Uniform(0) {
            return Err(DatasetError::Invalid("k must be at least 1".into()));
        }
        Ok(())
    }

    /// Shortest demonstration that yields a tuple.
    pub fn min_len(&self) -> usize {
        self.h_o + self.h_a + 1
    }
}

/// Observation history, action window and hindsight goal from one demonstration.
///
/// For observation time `t` and goal offset `h_g >= 1`:
/// `obs` features `states[t - h_o ..= t]`, `actions` is `actions[t .. t + h_a]`
/// and `goal` is `states[t + h_a + h_g - 1]`, so `h_g = 1` is the state the
/// action window ends in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelabeledTuple {
    pub plan_id: u64,
    pub chunk_index: usize,
    pub t: usize,
    pub h_g: usize,
    /// `(h_o + 1)` featurized states, oldest first.
    pub obs: Vec<f64>,
    /// `h_a` actions, row-major.
    pub actions: Vec<f64>,
    pub goal: [f64; GOAL_DIM],
}

impl RelabeledTuple {
    pub fn goal_index(&self, h_a: usize) -> usize {
        goal_index(self.t, self.h_g, h_a)
    }
}

pub fn goal_index(t: usize, h_g: usize, h_a: usize) -> usize {
    t + h_a + h_g - 1
}

pub fn encode_pose(q: &[f64; 3]) -> [f64; POSE_DIM] {
    let (s, c) = q[2].sin_cos();
    [q[0], q[1], s, c]
}

pub fn decode_pose(f: &[f64; POSE_DIM]) -> [f64; 3] {
    [f[0], f[1], f[2].atan2(f[3])]
}

/// `[x, y, sin theta, cos theta, q_rbt...]`.
pub fn featurize_state(s: &SystemState) -> Vec<f64> {
    let mut v = encode_pose(&s.q_obj).to_vec();
    v.extend_from_slice(&s.q_rbt);
    v
}

/// Observation times with at least one goal, or `None` if the demo is too short.
pub fn valid_times(len: usize, h_o: usize, h_a: usize) -> Option<RangeInclusive<usize>> {
    (len >= h_o + h_a + 1).then(|| h_o..=len - 1 - h_a)
}

/// Number of goal offsets at time `t`: `h_g` ranges over `1..=len - t - h_a`.
pub fn max_goal_offset(len: usize, t: usize, h_a: usize) -> usize {
    len - t - h_a
}

/// Tuples produced by `GoalRule::All`, summed in closed form.
pub fn count_all(len: usize, h_o: usize, h_a: usize) -> usize {
    // sum over t of (len - t - h_a) is 1 + 2 + ... + (len - h_a - h_o)
    let n = (len + 1).saturating_sub(h_o + h_a + 1);
    n * (n + 1) / 2
}

/// Tuples produced by `GoalRule::Uniform(k)`.
pub fn count_uniform(len: usize, h_o: usize, h_a: usize, k: usize) -> usize {
    valid_times(len, h_o, h_a).map_or(0, |r| r.map(|t| max_goal_offset(len, t, h_a).min(k)).sum())
}

/// Hindsight-relabeled tuples from one demonstration. Demos shorter than
/// `h_o + h_a + 1` states give nothing.
pub fn relabel<R: Rng + ?Sized>(
    demo: &Demonstration,
    cfg: &DatasetConfig,
    rng: &mut R,
) -> Vec<RelabeledTuple> {
    let len = demo.states.len();
    let Some(times) = valid_times(len, cfg.h_o, cfg.h_a) else {
        return Vec::new();
    };
    let feats: Vec<Vec<f64>> = demo.states.iter().map(featurize_state).collect();
    let mut out = Vec::new();
    for t in times {
        let n_goals = max_goal_offset(len, t, cfg.h_a);
        let offsets: Vec<usize> = match cfg.rule {
            GoalRule::Uniform(k) if k < n_goals => {
                let mut v: Vec<usize> = index::sample(rng, n_goals, k)
                    .into_iter()
                    .map(|i| i + 1)
                    .collect();
                v.sort_unstable();
                v
            }
            _ => (1..=n_goals).collect(),
        };
        let obs: Vec<f64> = feats[t - cfg.h_o..=t].concat();
        let actions: Vec<f64> = demo.actions[t..t + cfg.h_a]
            .iter()
            .flat_map(|a| a.0.iter().copied())
            .collect();
        for h_g in offsets {
            out.push(RelabeledTuple {
                plan_id: demo.plan_id,
                chunk_index: demo.chunk_index,
                t,
                h_g,
                obs: obs.clone(),
                actions: actions.clone(),
                goal: encode_pose(&demo.states[goal_index(t, h_g, cfg.h_a)].q_obj),
            });
        }
    }
    out
}

/// Seed for the goal draws of one demonstration, so results do not depend on
/// the order demos are processed in.
pub fn demo_seed(base: u64, plan_id: u64, chunk_index: usize) -> u64 {
    let mut h = base ^ 0x9e37_79b9_7f4a_7c15;
    for v in [plan_id, chunk_index as u64] {
        h = (h ^ v).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 31;
    }
    h
}
