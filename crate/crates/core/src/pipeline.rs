//! Plan, roll out and store: the batch generation used by the `plan` command.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

use crate::config::RunConfig;
use crate::dataset::{
    config_hash, demo_seed, read_demos, relabel, write_demos, DatasetConfig, DatasetError,
    DemoFile, DemoHeader, Manifest, RelabeledTuple, TupleHeader, SCHEMA_VERSION,
};
use crate::planners::{
    build_primitive_graph, contact_rrt, greedy_search, primitive_plan, sample_initial_state, Plan,
    PlannerError, PlannerKind, PrimitiveGraph,
};
use crate::rollout::{rollout_plan, Demonstration, Dropped};

pub const DEMO_FILE: &str = "demos.bin";
/// The run configuration, written next to the data so a run can be repeated.
pub const CONFIG_FILE: &str = "run.toml";
pub const DEMOS_KIND: &str = "demos";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("{0}")]
    Input(String),
}

/// What happened to one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub seed: u64,
    /// The planner reached its goal tolerance.
    pub planned: bool,
    pub plan_actions: usize,
    pub plan_regrasps: usize,
    /// Demonstrations kept from the rollout.
    pub demos: usize,
    pub dropped: Vec<Dropped>,
    /// The last executed state meets the task's success thresholds.
    pub executed_success: bool,
    /// Planner or rollout error, if any.
    pub error: Option<String>,
    pub millis: u64,
}

impl PlanOutcome {
    /// Planned successfully and contributed demonstrations.
    pub fn success(&self) -> bool {
        self.planned && self.demos > 0 && self.error.is_none()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Generated {
    /// In seed order.
    pub demos: Vec<Demonstration>,
    pub outcomes: Vec<PlanOutcome>,
}

impl Generated {
    pub fn successes(&self) -> usize {
        self.outcomes.iter().filter(|o| o.success()).count()
    }
}

/// Runs one planner on the start state drawn for `seed`.
pub fn plan_seed(
    kind: PlannerKind,
    seed: u64,
    cfg: &RunConfig,
    graph: Option<&PrimitiveGraph>,
) -> Result<Plan, PlannerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = sample_initial_state(&cfg.task, cfg.task.init_region, &mut rng)?;
    let pc = cfg.planner.with_seed(seed);
    let (task, params, tr) = (&cfg.task, &cfg.params, &cfg.trust_region);
    match kind {
        PlannerKind::Greedy => greedy_search(&start, task, params, tr, &pc),
        PlannerKind::Rrt => Ok(contact_rrt(&start, task, params, tr, &pc)?.extract_plan(task.goal)),
        PlannerKind::Primitive => {
            let g = graph.ok_or_else(|| {
                PlannerError::InvalidConfig("primitive planner needs its graph".into())
            })?;
            primitive_plan(&start, task.goal[2], g, task, params, tr, &pc)
        }
    }
}

fn run_seed(
    kind: PlannerKind,
    seed: u64,
    cfg: &RunConfig,
    graph: Option<&PrimitiveGraph>,
) -> (PlanOutcome, Vec<Demonstration>) {
    let t0 = Instant::now();
    let mut out = PlanOutcome {
        seed,
        planned: false,
        plan_actions: 0,
        plan_regrasps: 0,
        demos: 0,
        dropped: Vec::new(),
        executed_success: false,
        error: None,
        millis: 0,
    };
    let mut demos = Vec::new();
    match plan_seed(kind, seed, cfg, graph) {
        Err(e) => out.error = Some(e.to_string()),
        Ok(plan) => {
            out.planned = plan.success;
            out.plan_actions = plan.n_actions();
            out.plan_regrasps = plan.n_regrasps();
            if plan.success {
                match rollout_plan(&plan, seed, &cfg.rollout, &cfg.params, &cfg.task) {
                    Ok(r) => {
                        out.dropped = r.dropped;
                        out.executed_success = r
                            .demos
                            .last()
                            .and_then(|d| d.states.last())
                            .is_some_and(|s| crate::metrics::is_success(s, &cfg.task));
                        demos = r.demos;
                    }
                    Err(e) => out.error = Some(e.to_string()),
                }
            }
        }
    }
    out.demos = demos.len();
    out.millis = t0.elapsed().as_millis() as u64;
    (out, demos)
}

/// Plans and rolls out seeds `first..first + count` on `jobs` worker threads.
/// The result does not depend on `jobs`.
pub fn generate(
    kind: PlannerKind,
    first: u64,
    count: u64,
    cfg: &RunConfig,
    jobs: usize,
) -> Result<Generated, PipelineError> {
    let graph = match kind {
        PlannerKind::Primitive => Some(build_primitive_graph(
            &cfg.task,
            &cfg.params,
            &cfg.trust_region,
            &cfg.planner,
            cfg.planner.rng_seed,
        )?),
        _ => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let results: Vec<(PlanOutcome, Vec<Demonstration>)> = pool.install(|| {
        use rayon::prelude::*;
        (first..first + count)
            .into_par_iter()
            .map(|seed| run_seed(kind, seed, cfg, graph.as_ref()))
            .collect()
    });
    let mut g = Generated::default();
    for (o, d) in results {
        g.outcomes.push(o);
        g.demos.extend(d);
    }
    Ok(g)
}

pub fn demo_header(kind: PlannerKind, seed: u64, cfg: &RunConfig) -> DemoHeader {
    DemoHeader {
        version: SCHEMA_VERSION,
        planner: kind,
        seed,
        task_hash: config_hash(&cfg.task),
        params_hash: config_hash(&cfg.params),
        n_rbt: cfg.task.n_rbt(),
    }
}

/// Writes the demonstration file and its manifest into `dir`.
pub fn write_dataset(
    dir: &Path,
    kind: PlannerKind,
    first: u64,
    count: u64,
    cfg: &RunConfig,
    gen: &Generated,
    extra: serde_json::Value,
) -> Result<Manifest, PipelineError> {
    std::fs::create_dir_all(dir).map_err(DatasetError::from)?;
    write_demos(
        &dir.join(DEMO_FILE),
        &demo_header(kind, first, cfg),
        &gen.demos,
    )?;
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_toml()).map_err(DatasetError::from)?;
    let config = serde_json::json!({
        "planner": kind,
        "seed": first,
        "count": count,
        "run": cfg,
    });
    let mut m = Manifest::new(DEMOS_KIND, config);
    m.add_file(dir, DEMO_FILE, gen.demos.len() as u64)?;
    m.add_file(dir, CONFIG_FILE, 0)?;
    m.counts.insert("plans".into(), count);
    m.counts.insert("successes".into(), gen.successes() as u64);
    m.counts.insert("demos".into(), gen.demos.len() as u64);
    m.counts.insert(
        "dropped_chunks".into(),
        gen.outcomes.iter().map(|o| o.dropped.len() as u64).sum(),
    );
    let mut extra = extra;
    if let serde_json::Value::Object(map) = &mut extra {
        map.insert(
            "outcomes".into(),
            serde_json::to_value(&gen.outcomes).expect("outcomes serialize"),
        );
    }
    m.extra = extra;
    m.write(dir)?;
    Ok(m)
}

/// Demonstration files (`*.bin`) of a dataset directory with their content
/// hashes, in manifest order, or sorted by name when there is no manifest.
pub fn load_dataset(dir: &Path) -> Result<(Vec<DemoFile>, Vec<String>), PipelineError> {
    if !dir.is_dir() {
        return Err(PipelineError::Input(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let names: Vec<String> = match Manifest::read(dir) {
        Ok(m) => {
            m.verify(dir)?;
            m.files
                .into_iter()
                .map(|f| f.path)
                .filter(|p| p.ends_with(".bin"))
                .collect()
        }
        Err(_) => {
            let mut v: Vec<String> = std::fs::read_dir(dir)
                .map_err(DatasetError::from)?
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.ends_with(".bin"))
                .collect();
            v.sort();
            v
        }
    };
    if names.is_empty() {
        return Err(PipelineError::Input(format!(
            "no demonstration files in {}",
            dir.display()
        )));
    }
    let mut files = Vec::new();
    let mut hashes = Vec::new();
    for n in names {
        let path = dir.join(&n);
        let bytes = std::fs::read(&path).map_err(DatasetError::from)?;
        hashes.push(crate::dataset::sha256_hex(&bytes));
        files.push(crate::dataset::decode_demos(&bytes).map_err(|e| match e {
            DatasetError::BadMagic => {
                PipelineError::Input(format!("{} is not a demonstration file", path.display()))
            }
            e => PipelineError::Dataset(e),
        })?);
    }
    Ok((files, hashes))
}

/// Reads a demo file, checking it against the expected task and parameters.
pub fn read_checked(path: &Path, cfg: &RunConfig) -> Result<DemoFile, DatasetError> {
    let f = read_demos(path)?;
    f.check_hashes(&config_hash(&cfg.task), &config_hash(&cfg.params))?;
    Ok(f)
}

#[derive(Clone, Debug)]
pub struct Relabeled {
    pub header: TupleHeader,
    pub tuples: Vec<RelabeledTuple>,
    pub n_demos: u64,
    /// Demonstrations shorter than `h_o + h_a + 1` states.
    pub too_short: u64,
}

/// Relabels every demonstration of `files`, each with its own goal-draw seed.
pub fn relabel_files(files: &[DemoFile], dc: &DatasetConfig) -> Result<Relabeled, PipelineError> {
    dc.validate()?;
    let first = &files
        .first()
        .ok_or_else(|| PipelineError::Input("no demonstration files".into()))?
        .header;
    if let Some(f) = files
        .iter()
        .find(|f| f.header.task_hash != first.task_hash || f.header.n_rbt != first.n_rbt)
    {
        return Err(PipelineError::Input(format!(
            "input files disagree on the task ({} vs {})",
            hex::encode(&first.task_hash[..6]),
            hex::encode(&f.header.task_hash[..6])
        )));
    }
    let mut out = Relabeled {
        header: TupleHeader {
            version: SCHEMA_VERSION,
            rule: dc.rule,
            h_o: dc.h_o,
            h_a: dc.h_a,
            n_rbt: first.n_rbt,
            task_hash: first.task_hash,
        },
        tuples: Vec::new(),
        n_demos: 0,
        too_short: 0,
    };
    for d in files.iter().flat_map(|f| &f.demos) {
        out.n_demos += 1;
        if d.len() < dc.min_len() {
            out.too_short += 1;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(demo_seed(dc.seed, d.plan_id, d.chunk_index));
        out.tuples.extend(relabel(d, dc, &mut rng));
    }
    Ok(out)
}
