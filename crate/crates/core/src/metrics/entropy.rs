use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use thiserror::Error;

use super::weighted_distance;
use crate::dynamics::angle_diff;
use crate::rollout::Demonstration;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("entropy of an empty count vector")]
    EmptyCounts,
    #[error("entropy base must be at least 2, got {0}")]
    BadBase(usize),
    #[error("invalid metrics configuration: {0}")]
    InvalidConfig(String),
    #[error("demonstrations disagree on the step duration ({0} vs {1})")]
    MixedStepDuration(f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Grid cell edge, m.
    pub cell: f64,
    /// Linear direction sectors.
    pub b_lin: usize,
    /// Yaw change (rad over `h_a` steps) below which a sample counts as not rotating.
    pub omega_eps: f64,
    /// Normalized-time bins for the regrasp entropy.
    pub intervals: usize,
    /// Differencing horizon, steps.
    pub h_a: usize,
    /// Displacements shorter than this (m) have no direction and are skipped.
    pub min_displacement: f64,
    /// Progress histogram bin width, D units.
    pub progress_bin: f64,
    /// Segments with progress below minus this count as negative progress.
    pub negative_progress: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            cell: 0.05,
            b_lin: 16,
            omega_eps: 0.01,
            intervals: 25,
            h_a: 60,
            min_displacement: 1e-4,
            progress_bin: 0.05,
            negative_progress: 0.01,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let bad = |m: &str| Err(MetricsError::InvalidConfig(m.into()));
        if !(self.cell > 0.0) || !(self.progress_bin > 0.0) {
            return bad("cell and progress_bin must be positive");
        }
        if self.b_lin < 2 {
            return bad("b_lin must be at least 2");
        }
        if self.intervals == 0 || self.h_a == 0 {
            return bad("intervals and h_a must be positive");
        }
        if !(self.omega_eps >= 0.0)
            || !(self.min_displacement >= 0.0)
            || !(self.negative_progress >= 0.0)
        {
            return bad("thresholds must be non-negative");
        }
        Ok(())
    }
}

/// Shannon entropy of `counts` in base `base`: `-sum p log_base p`.
pub fn shannon_entropy(counts: &[u64], base: usize) -> Result<f64, MetricsError> {
    if base < 2 {
        return Err(MetricsError::BadBase(base));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(MetricsError::EmptyCounts);
    }
    let ln_b = (base as f64).ln();
    let n = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln() / ln_b
        })
        .sum();
    Ok(h.max(0.0))
}

/// Sector index of a planar direction, sectors starting at angle 0 counterclockwise.
pub fn direction_sector(dx: f64, dy: f64, b: usize) -> usize {
    let a = dy.atan2(dx).rem_euclid(2.0 * PI);
    ((a / (2.0 * PI / b as f64)) as usize).min(b - 1)
}

/// Rotation class: 0 counterclockwise, 1 clockwise, 2 none.
pub fn rotation_class(dtheta: f64, omega_eps: f64) -> usize {
    if dtheta > omega_eps {
        0
    } else if dtheta < -omega_eps {
        1
    } else {
        2
    }
}

/// Statistics of one occupied grid cell. The cell is
/// `[ix * cell, (ix + 1) * cell) x [iy * cell, (iy + 1) * cell)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub ix: i64,
    pub iy: i64,
    pub linear_counts: Vec<u64>,
    pub angular_counts: [u64; 3],
    /// `None` when every sample in the cell was skipped for direction.
    pub linear_entropy: Option<f64>,
    pub angular_entropy: f64,
}

impl CellStat {
    pub fn n_linear(&self) -> u64 {
        self.linear_counts.iter().sum()
    }

    pub fn n_angular(&self) -> u64 {
        self.angular_counts.iter().sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VelocityEntropy {
    pub cells: Vec<CellStat>,
    /// Samples without a linear direction (displacement too small).
    pub skipped: u64,
    /// Occupancy-weighted means; `None` without samples.
    pub mean_linear: Option<f64>,
    pub mean_angular: Option<f64>,
}

fn cell_of(x: f64, cell: f64) -> i64 {
    (x / cell).floor() as i64
}

/// Object-velocity direction entropy on a grid of the plane.
///
/// Every `t` with `t + h_a` inside a demonstration gives one sample at the
/// cell holding the object at `t`: the direction sector of the displacement
/// over `h_a` steps (skipped when shorter than `min_displacement`) and the
/// rotation class of the yaw change.
pub fn velocity_entropy(
    demos: &[Demonstration],
    cfg: &MetricsConfig,
) -> Result<VelocityEntropy, MetricsError> {
    cfg.validate()?;
    check_dt(demos)?;
    let mut lin: BTreeMap<(i64, i64), Vec<u64>> = BTreeMap::new();
    let mut ang: BTreeMap<(i64, i64), [u64; 3]> = BTreeMap::new();
    let mut skipped = 0;
    for d in demos {
        if d.states.len() <= cfg.h_a {
            continue;
        }
        for t in 0..d.states.len() - cfg.h_a {
            let a = &d.states[t].q_obj;
            let b = &d.states[t + cfg.h_a].q_obj;
            let key = (cell_of(a[0], cfg.cell), cell_of(a[1], cfg.cell));
            ang.entry(key).or_insert([0; 3])
                [rotation_class(angle_diff(b[2], a[2]), cfg.omega_eps)] += 1;
            let lc = lin.entry(key).or_insert_with(|| vec![0; cfg.b_lin]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            if dx.hypot(dy) < cfg.min_displacement {
                skipped += 1;
            } else {
                lc[direction_sector(dx, dy, cfg.b_lin)] += 1;
            }
        }
    }
    let mut out = VelocityEntropy {
        skipped,
        ..Default::default()
    };
    let (mut wl, mut sl, mut wa, mut sa) = (0.0, 0u64, 0.0, 0u64);
    for (key, counts) in lin {
        let angular_counts = ang[&key];
        let n_lin: u64 = counts.iter().sum();
        let linear_entropy = if n_lin > 0 {
            Some(shannon_entropy(&counts, cfg.b_lin)?)
        } else {
            None
        };
        let angular_entropy = shannon_entropy(&angular_counts, 3)?;
        if let Some(h) = linear_entropy {
            wl += h * n_lin as f64;
            sl += n_lin;
        }
        let n_ang: u64 = angular_counts.iter().sum();
        wa += angular_entropy * n_ang as f64;
        sa += n_ang;
        out.cells.push(CellStat {
            ix: key.0,
            iy: key.1,
            linear_counts: counts,
            angular_counts,
            linear_entropy,
            angular_entropy,
        });
    }
    out.mean_linear = (sl > 0).then(|| wl / sl as f64);
    out.mean_angular = (sa > 0).then(|| wa / sa as f64);
    Ok(out)
}

fn check_dt(demos: &[Demonstration]) -> Result<(), MetricsError> {
    if let Some(first) = demos.first() {
        if let Some(d) = demos.iter().find(|d| d.dt != first.dt) {
            return Err(MetricsError::MixedStepDuration(first.dt, d.dt));
        }
    }
    Ok(())
}

/// State index ranges `[start, end]` of the contact segments of a demonstration:
/// the demonstration cut at its regrasp indices.
pub fn segment_bounds(d: &Demonstration) -> Vec<(usize, usize)> {
    if d.states.is_empty() {
        return Vec::new();
    }
    let last = d.states.len() - 1;
    let mut cuts = vec![0];
    cuts.extend(
        d.regrasp_indices
            .iter()
            .copied()
            .filter(|&i| i > 0 && i < last),
    );
    cuts.push(last);
    cuts.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| (w[0], w[1]))
        .collect()
}

/// Signed progress `D(start) - D(end)` toward the demonstration goal, per segment.
pub fn segment_progress(d: &Demonstration) -> Vec<f64> {
    segment_bounds(d)
        .into_iter()
        .map(|(a, b)| {
            weighted_distance(&d.states[a].q_obj, &d.goal)
                - weighted_distance(&d.states[b].q_obj, &d.goal)
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProgressHistogram {
    pub bin_width: f64,
    /// Lower edge of the first bin.
    pub start: f64,
    pub counts: Vec<u64>,
    /// Every segment's progress, in demonstration order.
    pub samples: Vec<f64>,
    /// Fraction of segments with progress below the negative-progress threshold.
    pub negative_fraction: Option<f64>,
}

/// Histogram of per-segment progress with bins aligned to multiples of the width.
pub fn progress_histogram(
    demos: &[Demonstration],
    cfg: &MetricsConfig,
) -> Result<ProgressHistogram, MetricsError> {
    cfg.validate()?;
    let samples: Vec<f64> = demos.iter().flat_map(segment_progress).collect();
    let w = cfg.progress_bin;
    let mut h = ProgressHistogram {
        bin_width: w,
        ..Default::default()
    };
    if samples.is_empty() {
        return Ok(h);
    }
    let lo = samples
        .iter()
        .map(|v| (v / w).floor() as i64)
        .min()
        .unwrap_or(0);
    let hi = samples
        .iter()
        .map(|v| (v / w).floor() as i64)
        .max()
        .unwrap_or(0);
    h.start = lo as f64 * w;
    h.counts = vec![0; (hi - lo + 1) as usize];
    for v in &samples {
        h.counts[((v / w).floor() as i64 - lo) as usize] += 1;
    }
    let neg = samples
        .iter()
        .filter(|&&v| v < -cfg.negative_progress)
        .count();
    h.negative_fraction = Some(neg as f64 / samples.len() as f64);
    h.samples = samples;
    Ok(h)
}

/// A plan's demonstrations joined in chunk order: total action count and the
/// regrasp action indices on the joined timeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub plan_id: u64,
    pub n_actions: usize,
    pub regrasps: Vec<usize>,
}

/// Groups demonstrations into episodes by plan id.
pub fn episodes(demos: &[Demonstration]) -> Vec<Episode> {
    let mut by_plan: BTreeMap<u64, Vec<&Demonstration>> = BTreeMap::new();
    for d in demos {
        by_plan.entry(d.plan_id).or_default().push(d);
    }
    by_plan
        .into_iter()
        .map(|(plan_id, mut ds)| {
            ds.sort_by_key(|d| d.chunk_index);
            let mut off = 0;
            let mut regrasps = Vec::new();
            for d in ds {
                regrasps.extend(d.regrasp_indices.iter().map(|i| off + i));
                off += d.actions.len();
            }
            Episode {
                plan_id,
                n_actions: off,
                regrasps,
            }
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegraspEntropy {
    /// Fraction of episodes with a regrasp in each interval.
    pub probability: Vec<f64>,
    /// Bernoulli entropy (base 2) of each interval.
    pub entropy: Vec<f64>,
    pub mean: Option<f64>,
    pub n_episodes: usize,
}

/// Regrasp entropy over normalized episode time.
///
/// A regrasp at action index `i` of an episode with `n` actions falls at
/// normalized time `i / n`, in interval `floor(intervals * i / n)`.
pub fn regrasp_entropy(
    eps: &[Episode],
    cfg: &MetricsConfig,
) -> Result<RegraspEntropy, MetricsError> {
    cfg.validate()?;
    let k = cfg.intervals;
    let mut hits = vec![0u64; k];
    let mut n = 0u64;
    for e in eps.iter().filter(|e| e.n_actions > 0) {
        n += 1;
        let mut seen = vec![false; k];
        for &i in &e.regrasps {
            let b = ((i as f64 / e.n_actions as f64) * k as f64).floor() as usize;
            seen[b.min(k - 1)] = true;
        }
        for (h, s) in hits.iter_mut().zip(seen) {
            *h += s as u64;
        }
    }
    let mut out = RegraspEntropy {
        n_episodes: n as usize,
        ..Default::default()
    };
    if n == 0 {
        return Ok(out);
    }
    for h in hits {
        out.probability.push(h as f64 / n as f64);
        out.entropy.push(shannon_entropy(&[h, n - h], 2)?);
    }
    out.mean = Some(out.entropy.iter().sum::<f64>() / k as f64);
    Ok(out)
}
