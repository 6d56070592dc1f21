//! File-producing entry points behind the command-line subcommands.
//!
//! Each function writes its CSV outputs plus a `manifest.toml` recording the
//! full configuration, the master seed, a digest of the library source and a
//! sha256 of every file it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::autograd::{GradCheckOptions, GradCheckReport};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evalsuite::{
    data_size_report, data_size_text, robustness_sweep, topographic_similarity, AbsentModel, ConceptSet,
    EvalContext, EvalReport, SweepModel, TopSim, DATA_SIZE_HEADER, EVAL_HEADER,
};
use crate::marsim::{simulate, SimRow, SIM_HEADER};
use crate::output::{read_csv, write_atomic, write_csv};
use crate::par::Execution;
use crate::rng::stream;
use crate::trainer::{convergence_epoch, pipeline_gradient_check, train_with, Convergence, TrainHistory, World};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const SPLIT_FILE: &str = "split.txt";
pub const MANIFEST_FILE: &str = "manifest.toml";

pub const HISTORY_HEADER: [&str; 4] = ["epoch", "mean_loss", "mean_acc", "temperature"];
pub const TIMING_HEADER: [&str; 2] = ["epoch", "seconds"];

const SOURCES: &[&str] = &[
    include_str!("agents.rs"),
    include_str!("autograd/gradcheck.rs"),
    include_str!("autograd/mod.rs"),
    include_str!("autograd/params.rs"),
    include_str!("autograd/relax.rs"),
    include_str!("autograd/tape.rs"),
    include_str!("autograd/tensor.rs"),
    include_str!("channel.rs"),
    include_str!("checkpoint.rs"),
    include_str!("config.rs"),
    include_str!("error.rs"),
    include_str!("evalsuite.rs"),
    include_str!("lib.rs"),
    include_str!("marsim.rs"),
    include_str!("output.rs"),
    include_str!("par.rs"),
    include_str!("rng.rs"),
    include_str!("run.rs"),
    include_str!("trainer.rs"),
    include_str!("world.rs"),
];

/// sha256 over the library sources this binary was built from.
pub fn code_digest() -> String {
    let mut h = Sha256::new();
    for s in SOURCES {
        h.update((s.len() as u64).to_le_bytes());
        h.update(s.as_bytes());
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub command: String,
    pub code_version: String,
    pub code_digest: String,
    pub master_seed: u64,
    /// Output file name to sha256.
    pub outputs: BTreeMap<String, String>,
    /// Scalar results worth reading without opening the CSVs.
    pub summary: BTreeMap<String, String>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            code_digest: code_digest(),
            master_seed: config.seed,
            outputs: BTreeMap::new(),
            summary: BTreeMap::new(),
            config: config.clone(),
        }
    }

    /// Records the digest of a file already written under `dir`.
    pub fn record(&mut self, dir: &Path, name: &str) -> Result<()> {
        self.outputs.insert(name.to_string(), file_digest(&dir.join(name))?);
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.summary.insert(key.to_string(), value.to_string());
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_acc: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
struct TimingRow {
    epoch: usize,
    seconds: f64,
}

pub fn read_history(dir: &Path) -> Result<Vec<HistoryRow>> {
    read_csv(&dir.join(HISTORY_FILE))
}

/// What a training run left behind.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub dir: PathBuf,
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    pub world: World,
    /// `None` for histories too short to judge.
    pub convergence: Option<Convergence>,
}

/// Trains one model and writes its checkpoint, history, timing, split
/// listing and manifest into `dir`.
pub fn run_train(cfg: &RunConfig, dir: &Path, exec: Execution) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let tc = cfg.train_config();
    let outcome = train_with(&tc, exec, |r| {
        log::info!(
            "seed {} eps {} epoch {:>3}: loss {:.4} acc {:.4} temp {:.3} ({:.2}s)",
            tc.seed,
            tc.train_epsilon,
            r.epoch,
            r.mean_loss,
            r.mean_acc,
            r.temperature,
            r.seconds
        )
    })
    .map_err(|e| e.context(format!("training seed {} eps {}", tc.seed, tc.train_epsilon)))?;

    let checkpoint = Checkpoint::new(tc.clone(), outcome.store)?;
    checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    let rows: Vec<HistoryRow> = outcome
        .history
        .records
        .iter()
        .map(|r| HistoryRow {
            epoch: r.epoch,
            mean_loss: r.mean_loss,
            mean_acc: r.mean_acc,
            temperature: r.temperature,
        })
        .collect();
    write_csv(&dir.join(HISTORY_FILE), &HISTORY_HEADER, &rows)?;
    let timing: Vec<TimingRow> = outcome
        .history
        .records
        .iter()
        .map(|r| TimingRow {
            epoch: r.epoch,
            seconds: r.seconds,
        })
        .collect();
    write_csv(&dir.join(TIMING_FILE), &TIMING_HEADER, &timing)?;
    write_atomic(&dir.join(SPLIT_FILE), outcome.world.split.to_listing().as_bytes())?;

    let convergence = convergence_epoch(&outcome.history.losses()).ok();
    let mut manifest = Manifest::new("train", cfg);
    for f in [CHECKPOINT_FILE, HISTORY_FILE, TIMING_FILE, SPLIT_FILE] {
        manifest.record(dir, f)?;
    }
    manifest.note("concept_census", outcome.world.census);
    manifest.note("concepts_inadmissible", outcome.world.inadmissible);
    manifest.note("concepts_seen", outcome.world.split.seen.len());
    manifest.note("concepts_unseen", outcome.world.split.unseen.len());
    if let Some(last) = outcome.history.last() {
        manifest.note("final_loss", last.mean_loss);
        manifest.note("final_acc", last.mean_acc);
    }
    manifest.note("convergence_epoch", describe_convergence(convergence.as_ref()));
    manifest.write(dir)?;

    Ok(TrainArtifacts {
        dir: dir.to_path_buf(),
        checkpoint,
        history: outcome.history,
        world: outcome.world,
        convergence,
    })
}

fn describe_convergence(c: Option<&Convergence>) -> String {
    match c {
        Some(Convergence::Converged { epoch, .. }) => epoch.to_string(),
        Some(Convergence::NotConverged { .. }) => "not converged".into(),
        None => "history too short".into(),
    }
}

/// Loads a checkpoint and checks it against the configured architecture.
pub fn load_checkpoint(cfg: &RunConfig, path: &Path) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.ensure_compatible(&cfg.agents())?;
    Ok(ckpt)
}

/// Evaluates one checkpoint on its seen and unseen concepts at every
/// configured test epsilon; writes `eval.csv`.
pub fn run_eval(cfg: &RunConfig, checkpoint: &Path, out: &Path, exec: Execution) -> Result<EvalReport> {
    cfg.validate()?;
    let ckpt = load_checkpoint(cfg, checkpoint)?;
    let model = SweepModel {
        train_epsilon: ckpt.config.train_epsilon,
        seed: ckpt.config.seed,
        checkpoint: Some(ckpt),
    };
    let report = robustness_sweep(
        std::slice::from_ref(&model),
        &cfg.agents(),
        &cfg.test_epsilons,
        &[ConceptSet::Seen, ConceptSet::Unseen],
        cfg.n_eval,
        exec,
    )?;
    write_csv(&out.join("eval.csv"), &EVAL_HEADER, &report.rows)?;
    let mut manifest = Manifest::new("eval", cfg);
    manifest.note("checkpoint", checkpoint.display());
    manifest.record(out, "eval.csv")?;
    manifest.write(out)?;
    Ok(report)
}

/// Directory of the sweep model for one grid point.
pub fn model_dir(models: &Path, train_epsilon: f64, seed: u64) -> PathBuf {
    models.join(format!("eps{train_epsilon}_seed{seed}"))
}

/// Run configuration of one sweep model.
pub fn model_config(cfg: &RunConfig, train_epsilon: f64, seed: u64) -> RunConfig {
    RunConfig {
        train_epsilon,
        seed,
        ..cfg.clone()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConvergenceRow {
    pub train_epsilon: f64,
    pub seed: u64,
    /// Empty when the run did not converge.
    pub convergence_epoch: Option<usize>,
    pub plateau: f64,
    pub final_loss: f64,
    pub final_acc: f64,
}

pub const CONVERGENCE_HEADER: [&str; 6] = [
    "train_epsilon",
    "seed",
    "convergence_epoch",
    "plateau",
    "final_loss",
    "final_acc",
];

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: EvalReport,
    pub convergence: Vec<ConvergenceRow>,
}

/// Trains (when `train_missing`) and evaluates every model of the
/// `sweep_train_epsilons x sweep_seeds` grid.
///
/// Models live in `models/eps<e>_seed<s>/`. A model whose checkpoint exists
/// and was trained with the same configuration and library code is reused.
/// Models that are
/// missing and not trained are listed in `absent.csv` and the sweep goes on.
/// Writes `sweep.csv`, `convergence.csv`, `absent.csv` and a manifest to `out`.
pub fn run_sweep(
    cfg: &RunConfig,
    out: &Path,
    models: &Path,
    train_missing: bool,
    exec: Execution,
) -> Result<SweepOutcome> {
    cfg.validate()?;
    let grid: Vec<(f64, u64)> = cfg
        .sweep_train_epsilons
        .iter()
        .flat_map(|&e| cfg.sweep_seeds.iter().map(move |&s| (e, s)))
        .collect();

    let loaded = exec.try_map(grid.clone(), |(e, s)| -> Result<Option<Checkpoint>> {
        let mcfg = model_config(cfg, e, s);
        let dir = model_dir(models, e, s);
        let path = dir.join(CHECKPOINT_FILE);
        if path.exists() {
            let ckpt = Checkpoint::load(&path)?;
            let same_code = Manifest::load(&dir).is_ok_and(|m| m.code_digest == code_digest());
            if ckpt.config == mcfg.train_config() && same_code && dir.join(HISTORY_FILE).exists() {
                log::info!("reusing {}", path.display());
                return Ok(Some(ckpt));
            }
            log::warn!("{} is stale (different configuration or code)", path.display());
        }
        if !train_missing {
            return Ok(None);
        }
        // cells already run in parallel; keep each run single-threaded
        Ok(Some(run_train(&mcfg, &dir, Execution::Sequential)?.checkpoint))
    })?;

    let sweep_models: Vec<SweepModel> = grid
        .iter()
        .zip(loaded)
        .map(|(&(e, s), checkpoint)| SweepModel {
            train_epsilon: e,
            seed: s,
            checkpoint,
        })
        .collect();
    let report = if sweep_models.iter().any(|m| m.checkpoint.is_some()) {
        robustness_sweep(
            &sweep_models,
            &cfg.agents(),
            &cfg.test_epsilons,
            &[ConceptSet::Seen, ConceptSet::Unseen],
            cfg.n_eval,
            exec,
        )?
    } else {
        EvalReport {
            rows: Vec::new(),
            absent: grid
                .iter()
                .map(|&(train_epsilon, seed)| AbsentModel { train_epsilon, seed })
                .collect(),
        }
    };

    let mut convergence = Vec::new();
    for m in sweep_models.iter().filter(|m| m.checkpoint.is_some()) {
        let history = read_history(&model_dir(models, m.train_epsilon, m.seed))?;
        let losses: Vec<f64> = history.iter().map(|r| r.mean_loss).collect();
        let c = convergence_epoch(&losses).ok();
        let last = history.last();
        convergence.push(ConvergenceRow {
            train_epsilon: m.train_epsilon,
            seed: m.seed,
            convergence_epoch: c.and_then(|c| c.epoch()),
            plateau: c.map_or(f64::NAN, |c| c.plateau()),
            final_loss: last.map_or(f64::NAN, |r| r.mean_loss),
            final_acc: last.map_or(f64::NAN, |r| r.mean_acc),
        });
    }

    write_csv(&out.join("sweep.csv"), &EVAL_HEADER, &report.rows)?;
    write_csv(&out.join("convergence.csv"), &CONVERGENCE_HEADER, &convergence)?;
    write_csv(&out.join("absent.csv"), &["train_epsilon", "seed"], &report.absent)?;
    let mut manifest = Manifest::new("sweep", cfg);
    manifest.note("models_dir", models.display());
    manifest.note("models_present", sweep_models.len() - report.absent.len());
    manifest.note("models_absent", report.absent.len());
    for f in ["sweep.csv", "convergence.csv", "absent.csv"] {
        manifest.record(out, f)?;
    }
    manifest.write(out)?;
    Ok(SweepOutcome { report, convergence })
}

/// Writes `sim.csv` (one row per transmission mode) and the data-size table
/// as `table1.csv` and `table1.txt`.
pub fn run_sim(cfg: &RunConfig, out: &Path) -> Result<Vec<SimRow>> {
    cfg.validate()?;
    let stream_cfg = cfg.task_stream()?;
    let link = cfg.link()?;
    let mut rows = Vec::new();
    for mode in cfg.transmission_modes() {
        let mut rng = stream(cfg.seed, &format!("sim/{}", mode.name()));
        let s = simulate(&stream_cfg, &mode, &link, &mut rng)?;
        rows.push(SimRow::new(&mode, &s));
    }
    let table = data_size_report(
        cfg.message_len as u64,
        cfg.vocab_size as u64,
        cfg.feature_vector_bytes,
        (cfg.frame_kb_min, cfg.frame_kb_max),
    )?;
    write_csv(&out.join("sim.csv"), &SIM_HEADER, &rows)?;
    write_csv(&out.join("table1.csv"), &DATA_SIZE_HEADER, &table)?;
    write_atomic(&out.join("table1.txt"), data_size_text(&table).as_bytes())?;
    let mut manifest = Manifest::new("sim", cfg);
    for f in ["sim.csv", "table1.csv", "table1.txt"] {
        manifest.record(out, f)?;
    }
    manifest.write(out)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TopSimRow {
    pub set: String,
    pub concepts: usize,
    pub pairs: usize,
    /// Empty when messages (or meanings) are all identical.
    pub correlation: Option<f64>,
    pub null_mean: f64,
    pub null_p95: f64,
    pub permutations: usize,
    pub exceeds_null: bool,
}

pub const TOPSIM_HEADER: [&str; 8] = [
    "set",
    "concepts",
    "pairs",
    "correlation",
    "null_mean",
    "null_p95",
    "permutations",
    "exceeds_null",
];

/// Topographic similarity of a checkpoint over its seen, unseen and all
/// concepts; writes `topsim.csv`.
pub fn run_topsim(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<Vec<TopSimRow>> {
    cfg.validate()?;
    let ckpt = load_checkpoint(cfg, checkpoint)?;
    let rows = topsim_rows(cfg, &ckpt)?;
    write_csv(&out.join("topsim.csv"), &TOPSIM_HEADER, &rows)?;
    let mut manifest = Manifest::new("topsim", cfg);
    manifest.note("checkpoint", checkpoint.display());
    manifest.record(out, "topsim.csv")?;
    manifest.write(out)?;
    Ok(rows)
}

pub fn topsim_rows(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<Vec<TopSimRow>> {
    let world = World::build(&ckpt.config)?;
    let ctx = EvalContext::new(&ckpt.store, &ckpt.config.agents, &ckpt.config.episode, &world.universe)?;
    let all: Vec<_> = world.split.seen.iter().chain(&world.split.unseen).cloned().collect();
    let mut rows = Vec::new();
    for (name, concepts) in [("seen", &world.split.seen), ("unseen", &world.split.unseen), ("all", &all)] {
        if concepts.len() < 2 {
            continue;
        }
        let t: TopSim = topographic_similarity(
            &ctx,
            concepts,
            cfg.topsim_max_pairs,
            cfg.topsim_permutations,
            ckpt.config.seed,
        )?;
        rows.push(TopSimRow {
            set: name.to_string(),
            concepts: concepts.len(),
            pairs: t.pairs,
            correlation: t.correlation,
            null_mean: t.null_mean,
            null_p95: t.null_p95,
            permutations: t.permutations,
            exceeds_null: t.exceeds_null(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GradCheckRow {
    pub parameter: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

pub const GRADCHECK_HEADER: [&str; 5] = ["parameter", "checked", "max_rel_error", "worst_index", "passed"];

/// Entries probed per parameter tensor by `run_gradcheck`.
pub const GRADCHECK_ENTRIES: usize = 48;
pub const GRADCHECK_EPISODES: usize = 4;

/// Finite-difference check of the relaxed pipeline at the configured
/// architecture; writes `gradcheck.csv`.
pub fn run_gradcheck(cfg: &RunConfig, out: &Path) -> Result<GradCheckReport> {
    cfg.validate()?;
    let opts = GradCheckOptions {
        max_entries: Some(GRADCHECK_ENTRIES),
        ..GradCheckOptions::default()
    };
    let (_, report) = pipeline_gradient_check(&cfg.train_config(), GRADCHECK_EPISODES, &opts)?;
    let rows: Vec<GradCheckRow> = report
        .entries
        .iter()
        .map(|e| GradCheckRow {
            parameter: e.name.clone(),
            checked: e.checked,
            max_rel_error: e.max_rel_error,
            worst_index: e.worst_index,
            passed: e.max_rel_error <= report.tolerance,
        })
        .collect();
    write_csv(&out.join("gradcheck.csv"), &GRADCHECK_HEADER, &rows)?;
    let mut manifest = Manifest::new("gradcheck", cfg);
    manifest.note("max_rel_error", report.max_rel_error());
    manifest.note("tolerance", report.tolerance);
    manifest.note("passed", report.passed());
    manifest.record(out, "gradcheck.csv")?;
    manifest.write(out)?;
    Ok(report)
}
