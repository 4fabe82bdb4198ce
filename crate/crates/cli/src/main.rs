use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use cdsynth::config::RunConfig;
use cdsynth::dataset::{config_hash, write_tuples, DatasetConfig, GoalRule, Manifest};
use cdsynth::metrics::{compare_reports, EntropyReport};
use cdsynth::pipeline::{generate, load_dataset, relabel_files, write_dataset, Relabeled};
use cdsynth::planners::PlannerKind;
use cdsynth::rollout::Demonstration;
use cdsynth::simserver::{serve_stdio, serve_tcp};

#[derive(Parser)]
#[command(
    name = "cdsynth",
    version,
    about = "Contact-rich demonstration synthesis for a planar rotation task"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Plan, roll out and store demonstrations for a range of seeds.
    Plan(PlanArgs),
    /// Entropy and progress audit of a demonstration dataset.
    Analyze(AnalyzeArgs),
    /// Build hindsight-relabeled training tuples.
    Relabel(RelabelArgs),
    /// Run the simulation server.
    Serve(ServeArgs),
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long, value_parser = parse_planner)]
    planner: PlannerKind,
    #[arg(long, default_value_t = 100)]
    n: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run configuration (TOML, or JSON by extension).
    #[arg(long)]
    task: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "CDSYNTH_JOBS")]
    jobs: Option<usize>,
    /// Exit with status 1 if fewer than this fraction of plans succeed.
    #[arg(long, default_value_t = 0.8)]
    min_success: f64,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Second dataset; deltas are reported as compare minus input.
    #[arg(long)]
    compare: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    task: Option<PathBuf>,
    /// Grid cell edge, m.
    #[arg(long)]
    cell: Option<f64>,
    /// Linear direction sectors.
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    intervals: Option<usize>,
    #[arg(long = "h-a")]
    h_a: Option<usize>,
    #[arg(long)]
    omega_eps: Option<f64>,
    /// Print the linear entropy grid.
    #[arg(long)]
    grid: bool,
}

#[derive(Args)]
struct RelabelArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "h-o")]
    h_o: Option<usize>,
    #[arg(long = "h-a")]
    h_a: Option<usize>,
    /// all | uniform:K
    #[arg(long, value_parser = parse_rule)]
    rule: Option<GoalRule>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    task: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Transport {
    #[arg(long)]
    stdio: bool,
    #[arg(long)]
    port: Option<u16>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    transport: Transport,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long)]
    task: Option<PathBuf>,
}

fn parse_planner(s: &str) -> Result<PlannerKind, String> {
    s.parse()
}

fn parse_rule(s: &str) -> Result<GoalRule, String> {
    s.parse()
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn cmd_plan(a: PlanArgs) -> Result<ExitCode> {
    if !(0.0..=1.0).contains(&a.min_success) {
        bail!("--min-success must lie in [0, 1]");
    }
    let cfg = load_config(a.task.as_deref())?;
    let jobs = a.jobs.unwrap_or_else(default_jobs).max(1);
    let t0 = Instant::now();
    let gen = generate(a.planner, a.seed, a.n, &cfg, jobs)?;
    let elapsed = t0.elapsed();
    let extra = serde_json::json!({
        "jobs": jobs,
        "elapsed_ms": elapsed.as_millis() as u64,
        "min_success": a.min_success,
    });
    let m = write_dataset(&a.out, a.planner, a.seed, a.n, &cfg, &gen, extra)?;
    let ok = gen.successes();
    println!(
        "{}: {ok}/{} plans succeeded, {} demonstrations, {} chunks dropped, {:.1} s -> {}",
        a.planner,
        a.n,
        gen.demos.len(),
        m.counts.get("dropped_chunks").copied().unwrap_or(0),
        elapsed.as_secs_f64(),
        a.out.display()
    );
    let frac = if a.n == 0 {
        1.0
    } else {
        ok as f64 / a.n as f64
    };
    if frac < a.min_success {
        eprintln!(
            "success fraction {frac:.3} is below the floor {}",
            a.min_success
        );
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn read_all(dir: &Path, cfg: Option<&RunConfig>) -> Result<(Vec<Demonstration>, Vec<String>)> {
    let (files, hashes) =
        load_dataset(dir).with_context(|| format!("reading {}", dir.display()))?;
    let mut demos = Vec::new();
    for f in files {
        if let Some(c) = cfg {
            f.check_hashes(&config_hash(&c.task), &config_hash(&c.params))?;
        }
        demos.extend(f.demos);
    }
    Ok((demos, hashes))
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<ExitCode> {
    let run = a.task.as_deref().map(RunConfig::load).transpose()?;
    let mut mc = run.as_ref().map(|r| r.metrics.clone()).unwrap_or_default();
    if let Some(v) = a.cell {
        mc.cell = v;
    }
    if let Some(v) = a.bins {
        mc.b_lin = v;
    }
    if let Some(v) = a.intervals {
        mc.intervals = v;
    }
    if let Some(v) = a.h_a {
        mc.h_a = v;
    }
    if let Some(v) = a.omega_eps {
        mc.omega_eps = v;
    }
    mc.validate()?;
    let (demos, hashes) = read_all(&a.input, run.as_ref())?;
    let report = EntropyReport::build(&demos, &mc, hashes)?;
    let mut out = serde_json::json!({ "report": report });
    if let Some(other) = &a.compare {
        let (d2, h2) = read_all(other, run.as_ref())?;
        let r2 = EntropyReport::build(&d2, &mc, h2)?;
        let cmp = compare_reports(&report, &r2);
        for (k, v) in &cmp.summary_delta {
            println!("delta {k}: {}", fmt_opt(*v));
        }
        out["compare"] = serde_json::to_value(&r2)?;
        out["delta"] = serde_json::to_value(&cmp)?;
    }
    for (k, v) in report.summary() {
        println!("{k}: {}", fmt_opt(v));
    }
    if a.grid {
        print!("{}", report.render_grid());
    }
    if let Some(p) = &a.report {
        let mut text = serde_json::to_string_pretty(&out)?;
        text.push('\n');
        std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(d) = &a.csv {
        report
            .write_csv_dir(d)
            .with_context(|| format!("writing CSV files to {}", d.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

fn cmd_relabel(a: RelabelArgs) -> Result<ExitCode> {
    let run = a.task.as_deref().map(RunConfig::load).transpose()?;
    let mut dc = run
        .as_ref()
        .map(|r| r.dataset.clone())
        .unwrap_or_else(DatasetConfig::default);
    if let Some(v) = a.h_o {
        dc.h_o = v;
    }
    if let Some(v) = a.h_a {
        dc.h_a = v;
    }
    if let Some(v) = a.rule {
        dc.rule = v;
    }
    if let Some(v) = a.seed {
        dc.seed = v;
    }
    let (files, hashes) =
        load_dataset(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    if let Some(r) = &run {
        for f in &files {
            f.check_hashes(&config_hash(&r.task), &config_hash(&r.params))?;
        }
    }
    let Relabeled {
        header,
        tuples,
        n_demos,
        too_short: short,
    } = relabel_files(&files, &dc)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_tuples(&a.out, &header, &tuples)?;
    let mut m = Manifest::new(
        "tuples",
        serde_json::json!({ "dataset": dc, "input": a.input.display().to_string(), "input_hashes": hashes }),
    );
    let dir = a
        .out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = a
        .out
        .file_name()
        .ok_or_else(|| anyhow!("--out must name a file"))?
        .to_string_lossy()
        .into_owned();
    m.add_file(dir, &name, tuples.len() as u64)?;
    m.counts.insert("tuples".into(), tuples.len() as u64);
    m.counts.insert("demos".into(), n_demos);
    m.counts.insert("demos_too_short".into(), short);
    let mpath = manifest_path(&a.out);
    m.write_to(&mpath)?;
    println!(
        "{} tuples from {n_demos} demonstrations (h_o={}, h_a={}, rule={}) -> {}",
        tuples.len(),
        dc.h_o,
        dc.h_a,
        dc.rule,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// `tuples.bin` -> `tuples.bin.manifest.json`.
fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn cmd_serve(a: ServeArgs) -> Result<ExitCode> {
    let cfg = load_config(a.task.as_deref())?;
    if a.transport.stdio {
        serve_stdio(&cfg.params, &cfg.task)?;
    } else if let Some(port) = a.transport.port {
        let listener = std::net::TcpListener::bind((a.host.as_str(), port))
            .with_context(|| format!("cannot listen on {}:{port}", a.host))?;
        eprintln!("listening on {}", listener.local_addr()?);
        serve_tcp(listener, &cfg.params, &cfg.task, None)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Plan(a) => cmd_plan(a),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::Relabel(a) => cmd_relabel(a),
        Cmd::Serve(a) => cmd_serve(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
