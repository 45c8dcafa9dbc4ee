mod config;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use prospect_core::features::{bmd_report, future_min_distance, mine_interactive_pairs, targets_for_agent, TargetParams};
use prospect_core::metrics::{evaluate, EvalRecord};
use prospect_core::model::{Model, PairInputs};
use prospect_core::numeric::ParameterStore;
use prospect_core::scene::{
    generate_synthetic, read_predictions, read_scenarios, write_predictions, write_scenarios, AgentId, PredictionRecord,
    Scenario, ScenarioKind, SynthConfig,
};
use prospect_core::train::{predict_joint, predict_marginal, prepare_pairs, train, Stage, TrainConfig};
use serde::Serialize;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "prospectnet", version, about = "Joint trajectory prediction for interacting vehicle pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// key = value configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic interactive scenarios as JSON lines.
    GenData {
        /// yield_turn, merge, follow, two_left_turns or mixed.
        #[arg(long, default_value = "mixed")]
        kind: String,
        #[arg(long, default_value_t = 100)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        horizon: usize,
        #[arg(long, default_value_t = 10)]
        history_len: usize,
    },
    /// Write the interactive pair index of a scenario file.
    MinePairs {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample goal targets for every mined pair.
    SampleTargets {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, default_value_t = 4)]
        preset: usize,
        #[arg(long, default_value_t = 5.0)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write best-mode-displacement statistics for all presets.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train the marginal predictor.
    TrainMarginal {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenes: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune the whole model starting from a marginal checkpoint.
    TrainJoint {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenes: Option<PathBuf>,
        /// Marginal checkpoint; defaults to marginal.ckpt next to --out.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict joint modes for the first mined pair of every scenario.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenes: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cartesian-product baseline from the marginal predictor.
        #[arg(long)]
        marginal: bool,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Score predictions against ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Also write the report here; it is always printed.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render scenarios and predictions as SVG.
    Plot {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Only this scenario; otherwise every scenario is drawn.
        #[arg(long)]
        scenario: Option<String>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn worker_count() -> usize {
    let cap = std::env::var("PROSPECTNET_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0);
    let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    cap.map_or(avail, |c| c.min(avail))
}

/// Maps `f` over `items` on a worker pool; results keep input order.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let workers = worker_count().min(items.len()).max(1);
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| scope.spawn(|| c.iter().map(&f).collect::<Result<Vec<R>>>())).collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().map_err(|_| anyhow!("worker thread panicked"))??);
        }
        Ok(out)
    })
}

fn git_revision() -> String {
    std::process::Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    args: Vec<String>,
    seed: Option<u64>,
    config: Option<String>,
    git_revision: String,
    version: &'static str,
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_manifest(out: &Path, command: &str, seed: Option<u64>, cfg: Option<&RunConfig>) -> Result<()> {
    let m = Manifest {
        command,
        args: std::env::args().collect(),
        seed,
        config: cfg.map(RunConfig::to_text),
        git_revision: git_revision(),
        version: env!("CARGO_PKG_VERSION"),
    };
    let path = manifest_path(out);
    std::fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    info!("seed {}", cfg.train.seed);
    Ok(cfg)
}

fn scenes_path(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.data.scenes.clone()).ok_or_else(|| anyhow!("no scenario file: pass --scenes or set [data] scenes"))
}

fn load_scenes(path: &Path) -> Result<Vec<Scenario>> {
    read_scenarios(path).with_context(|| format!("reading scenarios {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<ParameterStore> {
    if !path.exists() {
        bail!("checkpoint not found: expected {}", path.display());
    }
    ParameterStore::read_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

/// Loads a checkpoint into a fresh model, requiring every parameter accepted
/// by `needed` to be present with the right shape.
fn restore(model: &mut Model, path: &Path, needed: impl Fn(&str) -> bool) -> Result<()> {
    let store = load_checkpoint(path)?;
    for (name, p) in model.store.iter() {
        if !needed(name) {
            continue;
        }
        match store.get(name) {
            Ok(t) if t.shape() == p.value.shape() => {}
            Ok(_) => bail!("checkpoint {} has a different shape for {name}; check the model config", path.display()),
            Err(_) => bail!("checkpoint {} lacks parameter {name}", path.display()),
        }
    }
    model.load(&store);
    Ok(())
}

fn train_config(cfg: &RunConfig, steps: usize) -> TrainConfig {
    let t = &cfg.train;
    TrainConfig { steps, lr: t.lr, batch: t.batch, seed: t.seed, log_every: t.log_every }
}

fn synth_kinds(kind: &str) -> Result<Vec<ScenarioKind>> {
    if kind == "mixed" {
        Ok(ScenarioKind::ALL.to_vec())
    } else {
        Ok(vec![kind.parse()?])
    }
}

#[derive(Serialize)]
struct PairRow<'a> {
    scenario_id: &'a str,
    agent_a: AgentId,
    agent_b: AgentId,
    min_distance: f64,
}

#[derive(Serialize)]
struct TargetRow<'a> {
    scenario_id: &'a str,
    agent: AgentId,
    preset: usize,
    /// Agent-frame origin (world) and heading; targets are in this frame.
    origin: [f64; 2],
    heading: f64,
    targets: &'a [[f64; 2]],
    warning: Option<&'a str>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { kind, count, seed, out, horizon, history_len } => {
            let kinds = synth_kinds(&kind)?;
            let synth = SynthConfig { horizon, history_len, ..SynthConfig::default() };
            let jobs: Vec<(ScenarioKind, u64)> =
                (0..count).map(|i| (kinds[(i % kinds.len() as u64) as usize], seed.wrapping_add(i))).collect();
            let scenes = par_map(&jobs, |&(k, s)| Ok(generate_synthetic(k, s, &synth)?))?;
            write_scenarios(&out, &scenes)?;
            write_manifest(&out, "gen-data", Some(seed), None)?;
            info!("wrote {} scenarios to {}", scenes.len(), out.display());
        }
        Command::MinePairs { scenes, threshold, out } => {
            let scenes = load_scenes(&scenes)?;
            let mut rows = Vec::new();
            for s in &scenes {
                for (a, b) in mine_interactive_pairs(s, threshold) {
                    let d = future_min_distance(s, a, b)?.expect("mined pairs overlap in time");
                    rows.push(PairRow { scenario_id: &s.id, agent_a: a, agent_b: b, min_distance: d });
                }
            }
            write_jsonl(&out, &rows)?;
            write_manifest(&out, "mine-pairs", None, None)?;
            info!("{} interactive pairs in {} scenarios", rows.len(), scenes.len());
        }
        Command::SampleTargets { scenes, preset, threshold, out, report } => {
            let params = TargetParams::preset(preset)?;
            let scenes = load_scenes(&scenes)?;
            let sets = par_map(&scenes, |s| {
                let Some(&(a, b)) = mine_interactive_pairs(s, threshold).first() else { return Ok(Vec::new()) };
                let mut v = Vec::new();
                for agent in [a, b] {
                    let frame = s.agent_frame(agent)?;
                    v.push((agent, frame.origin, frame.heading, targets_for_agent(s, agent, &params)?));
                }
                Ok(v)
            })?;
            let rows: Vec<TargetRow> = scenes
                .iter()
                .zip(&sets)
                .flat_map(|(s, v)| v.iter().map(move |row| (s.id.as_str(), row)))
                .map(|(id, (agent, origin, heading, t))| TargetRow {
                    scenario_id: id,
                    agent: *agent,
                    preset,
                    origin: *origin,
                    heading: *heading,
                    targets: &t.points,
                    warning: t.warning.as_deref(),
                })
                .collect();
            write_jsonl(&out, &rows)?;
            write_manifest(&out, "sample-targets", None, None)?;
            if let Some(path) = report {
                let all: Vec<TargetParams> = (1..=14).map(TargetParams::preset).collect::<Result<_, _>>()?;
                let rows = bmd_report(&scenes, &all, threshold)?;
                std::fs::write(&path, serde_json::to_string_pretty(&rows)? + "\n")?;
            }
        }
        Command::TrainMarginal { common, scenes, out } => {
            let cfg = load_config(&common)?;
            let scenes = load_scenes(&scenes_path(scenes, &cfg)?)?;
            let pairs = prepare_pairs(&scenes, &cfg.model, cfg.data.threshold)?;
            let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
            let log = train(&mut model, &pairs, &train_config(&cfg, cfg.train.marginal_steps), Stage::Marginal)?;
            model.store.write_checkpoint(&out)?;
            write_manifest(&out, "train-marginal", Some(cfg.train.seed), Some(&cfg))?;
            info!("final loss {:?}; checkpoint {}", log.losses.last(), out.display());
        }
        Command::TrainJoint { common, scenes, init, out } => {
            let cfg = load_config(&common)?;
            let init = init.unwrap_or_else(|| out.with_file_name("marginal.ckpt"));
            let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
            restore(&mut model, &init, Model::is_marginal_param)?;
            let scenes = load_scenes(&scenes_path(scenes, &cfg)?)?;
            let pairs = prepare_pairs(&scenes, &cfg.model, cfg.data.threshold)?;
            let log = train(&mut model, &pairs, &train_config(&cfg, cfg.train.joint_steps), Stage::Joint)?;
            model.store.write_checkpoint(&out)?;
            write_manifest(&out, "train-joint", Some(cfg.train.seed), Some(&cfg))?;
            info!("final loss {:?}; checkpoint {}", log.losses.last(), out.display());
        }
        Command::Predict { common, scenes, checkpoint, out, marginal, top_k } => {
            let mut cfg = load_config(&common)?;
            if let Some(k) = top_k {
                cfg.model.top_k = k;
                cfg.validate()?;
            }
            let mut model = Model::new(cfg.model.clone(), cfg.train.seed)?;
            if marginal {
                restore(&mut model, &checkpoint, Model::is_marginal_param)?;
            } else {
                restore(&mut model, &checkpoint, |_| true)?;
            }
            let scenes = load_scenes(&scenes_path(scenes, &cfg)?)?;
            let pairs = prepare_pairs(&scenes, &cfg.model, cfg.data.threshold)?;
            let records = par_map(&pairs, |p: &PairInputs| {
                let preds = if marginal { predict_marginal(&model, p)? } else { predict_joint(&model, p)? };
                Ok(PredictionRecord { scenario_id: p.scenario_id.clone(), agent_a: p.a.agent, agent_b: p.b.agent, pairs: preds })
            })?;
            write_predictions(&out, &records)?;
            write_manifest(&out, "predict", Some(cfg.train.seed), Some(&cfg))?;
            info!("wrote {} prediction records", records.len());
        }
        Command::Evaluate { common, scenes, predictions, out } => {
            let cfg = load_config(&common)?;
            let scenes = load_scenes(&scenes)?;
            let preds = read_predictions(&predictions).with_context(|| format!("reading {}", predictions.display()))?;
            let by_id: std::collections::HashMap<&str, &Scenario> = scenes.iter().map(|s| (s.id.as_str(), s)).collect();
            let records = par_map(&preds, |p| {
                let s = by_id.get(p.scenario_id.as_str()).ok_or_else(|| anyhow!("unknown scenario {}", p.scenario_id))?;
                Ok(EvalRecord::from_scenario(s, (p.agent_a, p.agent_b), p.pairs.clone())?)
            })?;
            let report = evaluate(&records, cfg.overlap_threshold)?;
            let text = serde_json::to_string_pretty(&report)?;
            println!("{text}");
            if let Some(path) = out {
                std::fs::write(&path, text + "\n")?;
                write_manifest(&path, "evaluate", None, Some(&cfg))?;
            }
        }
        Command::Plot { scenes, predictions, scenario, out } => {
            let scenes = load_scenes(&scenes)?;
            let preds = match predictions {
                Some(p) => read_predictions(&p)?,
                None => Vec::new(),
            };
            std::fs::create_dir_all(&out)?;
            let mut drawn = 0;
            for s in scenes.iter().filter(|s| scenario.as_ref().is_none_or(|id| &s.id == id)) {
                let rec = preds.iter().find(|r| r.scenario_id == s.id);
                let pair = mine_interactive_pairs(s, prospect_core::features::DEFAULT_THRESHOLD).first().copied();
                let path = out.join(format!("{}.svg", s.id));
                std::fs::write(&path, plot::render(s, rec, pair))?;
                drawn += 1;
            }
            if drawn == 0 {
                bail!("no scenario matched {}", scenario.unwrap_or_default());
            }
            info!("wrote {drawn} SVG files to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
