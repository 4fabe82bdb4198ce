use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use super::entropy::{
    episodes, progress_histogram, regrasp_entropy, velocity_entropy, MetricsConfig, MetricsError,
    ProgressHistogram, RegraspEntropy, VelocityEntropy,
};
use crate::rollout::Demonstration;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub config: MetricsConfig,
    /// Content hashes of the analyzed dataset files.
    pub dataset_hashes: Vec<String>,
    pub n_demos: usize,
    pub velocity: VelocityEntropy,
    pub progress: ProgressHistogram,
    pub regrasp: RegraspEntropy,
}

impl EntropyReport {
    pub fn build(
        demos: &[Demonstration],
        cfg: &MetricsConfig,
        dataset_hashes: Vec<String>,
    ) -> Result<Self, MetricsError> {
        Ok(Self {
            config: cfg.clone(),
            dataset_hashes,
            n_demos: demos.len(),
            velocity: velocity_entropy(demos, cfg)?,
            progress: progress_histogram(demos, cfg)?,
            regrasp: regrasp_entropy(&episodes(demos), cfg)?,
        })
    }

    /// The scalar summaries by name.
    pub fn summary(&self) -> BTreeMap<&'static str, Option<f64>> {
        BTreeMap::from([
            ("mean_linear_entropy", self.velocity.mean_linear),
            ("mean_angular_entropy", self.velocity.mean_angular),
            ("mean_regrasp_entropy", self.regrasp.mean),
            (
                "negative_progress_fraction",
                self.progress.negative_fraction,
            ),
            ("occupied_cells", Some(self.velocity.cells.len() as f64)),
            ("segments", Some(self.progress.samples.len() as f64)),
            ("demos", Some(self.n_demos as f64)),
        ])
    }

    /// Per-cell rows for plotting.
    pub fn write_cells_csv(&self, path: &Path) -> io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "ix",
            "iy",
            "x0",
            "y0",
            "n_linear",
            "linear_entropy",
            "n_angular",
            "angular_entropy",
        ])?;
        let c = self.config.cell;
        for s in &self.velocity.cells {
            w.write_record([
                s.ix.to_string(),
                s.iy.to_string(),
                format!("{}", s.ix as f64 * c),
                format!("{}", s.iy as f64 * c),
                s.n_linear().to_string(),
                s.linear_entropy.map(|h| h.to_string()).unwrap_or_default(),
                s.n_angular().to_string(),
                s.angular_entropy.to_string(),
            ])?;
        }
        w.flush()
    }

    pub fn write_progress_csv(&self, path: &Path) -> io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["bin_lo", "bin_hi", "count"])?;
        let h = &self.progress;
        for (i, n) in h.counts.iter().enumerate() {
            let lo = h.start + i as f64 * h.bin_width;
            w.write_record([
                lo.to_string(),
                (lo + h.bin_width).to_string(),
                n.to_string(),
            ])?;
        }
        w.flush()
    }

    pub fn write_regrasp_csv(&self, path: &Path) -> io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["interval", "t0", "t1", "probability", "entropy"])?;
        let k = self.config.intervals as f64;
        for (i, (p, h)) in self
            .regrasp
            .probability
            .iter()
            .zip(&self.regrasp.entropy)
            .enumerate()
        {
            w.write_record([
                i.to_string(),
                (i as f64 / k).to_string(),
                ((i + 1) as f64 / k).to_string(),
                p.to_string(),
                h.to_string(),
            ])?;
        }
        w.flush()
    }

    /// Writes `cells.csv`, `progress.csv` and `regrasp.csv` into `dir`.
    pub fn write_csv_dir(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_cells_csv(&dir.join("cells.csv"))?;
        self.write_progress_csv(&dir.join("progress.csv"))?;
        self.write_regrasp_csv(&dir.join("regrasp.csv"))
    }

    /// Coarse text rendering of the linear entropy grid, highest `y` first.
    /// Digits are the entropy in tenths; `.` marks cells without data.
    pub fn render_grid(&self) -> String {
        let cells = &self.velocity.cells;
        let (Some(x0), Some(x1)) = (
            cells.iter().map(|c| c.ix).min(),
            cells.iter().map(|c| c.ix).max(),
        ) else {
            return String::from("(no data)\n");
        };
        let y0 = cells.iter().map(|c| c.iy).min().unwrap_or(0);
        let y1 = cells.iter().map(|c| c.iy).max().unwrap_or(0);
        let map: BTreeMap<(i64, i64), Option<f64>> = cells
            .iter()
            .map(|c| ((c.ix, c.iy), c.linear_entropy))
            .collect();
        let mut out = String::new();
        for iy in (y0..=y1).rev() {
            for ix in x0..=x1 {
                out.push(match map.get(&(ix, iy)).copied().flatten() {
                    Some(h) => {
                        char::from_digit(((h * 10.0).round() as u32).min(9), 10).unwrap_or('9')
                    }
                    None => '.',
                });
            }
            out.push('\n');
        }
        out
    }
}

/// Signed differences `b - a` between two reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportComparison {
    pub summary_delta: BTreeMap<String, Option<f64>>,
    pub regrasp_entropy_delta: Vec<f64>,
    /// Linear entropy difference in cells occupied in both reports.
    pub cell_linear_delta: Vec<((i64, i64), f64)>,
}

pub fn compare_reports(a: &EntropyReport, b: &EntropyReport) -> ReportComparison {
    let sa = a.summary();
    let sb = b.summary();
    let summary_delta = sa
        .iter()
        .map(|(k, va)| {
            let d = match (va, sb.get(k).copied().flatten()) {
                (Some(x), Some(y)) => Some(y - x),
                _ => None,
            };
            (k.to_string(), d)
        })
        .collect();
    let regrasp_entropy_delta = a
        .regrasp
        .entropy
        .iter()
        .zip(&b.regrasp.entropy)
        .map(|(x, y)| y - x)
        .collect();
    let lin_a: BTreeMap<(i64, i64), f64> = a
        .velocity
        .cells
        .iter()
        .filter_map(|c| c.linear_entropy.map(|h| ((c.ix, c.iy), h)))
        .collect();
    let cell_linear_delta = b
        .velocity
        .cells
        .iter()
        .filter_map(|c| {
            let hb = c.linear_entropy?;
            lin_a.get(&(c.ix, c.iy)).map(|ha| ((c.ix, c.iy), hb - ha))
        })
        .collect();
    ReportComparison {
        summary_delta,
        regrasp_entropy_delta,
        cell_linear_delta,
    }
}
