//! The subcommands as library functions.
//!
//! Every command writes into one run directory: the resolved config as
//! `config.json`, its own outputs, and an entry in `manifest.json` with the
//! SHA-256 digests of what it read and wrote. No output depends on the
//! thread count or the wall clock.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use slowmap::dataset::{split, Dataset, FORMAT_VERSION};
use slowmap::metrics::{
    level_set_grid, ortho_csv, orthogonality_errors, spectrum_export, GapSummary, GridSpec,
};
use slowmap::net::{make_autoencoder_dataset, EpochRecord, TrainHook, CHECKPOINT_FORMAT_VERSION};
use slowmap::prune::{first_layer_mask_grid, mask_grid_csv, render_sparsity_table, PruneEvent, PruneHook};
use slowmap::sde::TrajectoryMeta;
use slowmap::{
    affine_fit, error_stats, simulate_path, sparsity_report, train, AffineFit, Checkpoint, Error, ErrorStats,
    Network, ObservedPair, SeedSpec, SparsityReport,
};

use crate::config::ExperimentConfig;

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const DATASET_FILE: &str = "dataset.ndjson";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const TRAINING_FILE: &str = "training.json";
pub const METRICS_FILE: &str = "metrics.json";

/// A resolved config bound to its output directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

impl Run {
    /// Loads `path`, applies overrides, and picks the output directory:
    /// `--out`, else the config's `out`, else `runs/<name or system>`.
    pub fn prepare(
        path: &Path,
        seed: Option<u64>,
        out: Option<PathBuf>,
        overrides: &[String],
    ) -> anyhow::Result<Run> {
        let mut config = ExperimentConfig::load(path)?.with_overrides(overrides)?;
        if let Some(s) = seed {
            config.seed = s;
        }
        Run::new(config, out)
    }

    pub fn new(config: ExperimentConfig, out: Option<PathBuf>) -> anyhow::Result<Run> {
        let mut config = config.resolved()?;
        let out = out.or_else(|| config.out.take()).unwrap_or_else(|| {
            PathBuf::from("runs").join(config.name.clone().unwrap_or_else(|| config.system.name.clone()))
        });
        config.out = None;
        Ok(Run { config, out })
    }

    pub fn seed(&self) -> SeedSpec {
        SeedSpec::new(self.config.seed)
    }

    pub fn pair(&self) -> anyhow::Result<ObservedPair> {
        Ok(self.config.system.build()?)
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    pub fn label(&self) -> String {
        self.config.name.clone().unwrap_or_else(|| self.config.system.name.clone())
    }

    fn begin(&self) -> anyhow::Result<()> {
        fs::create_dir_all(&self.out).with_context(|| format!("cannot create {}", self.out.display()))?;
        write_file(&self.path(CONFIG_FILE), self.config.to_json()?.as_bytes())
    }

    fn record(&self, command: &str, inputs: &[&Path], outputs: &[&str]) -> anyhow::Result<()> {
        let path = self.path(MANIFEST_FILE);
        let mut manifest: Manifest = match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).context("corrupt manifest")?,
            Err(_) => Manifest::default(),
        };
        manifest.seed = self.config.seed;
        manifest.format_versions = BTreeMap::from([
            ("checkpoint".to_string(), CHECKPOINT_FORMAT_VERSION),
            ("dataset".to_string(), FORMAT_VERSION),
        ]);
        manifest.config_sha256 = file_digest(&self.path(CONFIG_FILE))?;
        let mut entry = CommandEntry::default();
        for p in inputs {
            entry.inputs.insert(display_name(p), file_digest(p)?);
        }
        for f in outputs {
            entry.outputs.insert(f.to_string(), file_digest(&self.path(f))?);
        }
        manifest.commands.insert(command.to_string(), entry);
        write_file(&path, (serde_json::to_string_pretty(&manifest)? + "\n").as_bytes())
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    config_sha256: String,
    format_versions: BTreeMap<String, u32>,
    commands: BTreeMap<String, CommandEntry>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct CommandEntry {
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

fn display_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into())
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(digest(&bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write_file(path, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

pub fn read_dataset(path: &Path) -> anyhow::Result<Dataset> {
    let f = fs::File::open(path).with_context(|| format!("cannot open dataset {}", path.display()))?;
    Ok(Dataset::read_ndjson(BufReader::new(f))?)
}

pub fn read_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    Ok(Checkpoint::from_json(&text)?)
}

// ------------------------------------------------------------- simulate

/// One observed trajectory of `n_steps + 1` states.
pub fn cmd_simulate(run: &Run) -> anyhow::Result<PathBuf> {
    run.begin()?;
    let pair = run.pair()?;
    let sim = &run.config.simulation;
    let sys = pair.simulator(sim.scheme)?;
    let dt = sim.dt.unwrap_or_else(|| sys.default_dt());
    let traj = simulate_path(&sys, &sim.x0, dt, sim.n_steps, &run.seed())?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    let path = run.path(TRAJECTORY_FILE);
    write_file(&path, &csv)?;
    let meta = TrajectoryMeta {
        system: pair.name().to_string(),
        dt,
        eps: pair.observed.eps(),
        n_steps: sim.n_steps,
        seed: run.seed(),
    };
    write_json(&run.path("trajectory.json"), &meta)?;
    run.record("simulate", &[], &[TRAJECTORY_FILE, "trajectory.json"])?;
    Ok(path)
}

// -------------------------------------------------------------- dataset

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub count: usize,
    pub train: usize,
    pub validation: usize,
    pub tau: Option<f64>,
    pub dt: f64,
    pub bursts: usize,
    pub gap: Option<GapSummary>,
}

pub fn cmd_dataset(run: &Run) -> anyhow::Result<PathBuf> {
    run.begin()?;
    let pair = run.pair()?;
    let ds = slowmap::dataset::build_dataset(&pair, &run.config.dataset_config(), &run.seed())?;
    let path = run.path(DATASET_FILE);
    write_file(&path, &ds.to_ndjson_bytes()?)?;

    let (tr, va) = if ds.is_empty() {
        (0, 0)
    } else {
        let (a, b) = split(&ds, run.config.dataset.split_fraction, &run.seed())?;
        (a.len(), b.len())
    };
    let gap = if ds.is_empty() { None } else { Some(spectrum_export(&ds, run.config.evaluation.gap_ratio)?.summary) };
    let summary = DatasetSummary {
        count: ds.len(),
        train: tr,
        validation: va,
        tau: ds.meta.tau,
        dt: ds.meta.dt,
        bursts: ds.meta.bursts,
        gap,
    };
    write_json(&run.path("dataset.json"), &summary)?;
    run.record("dataset", &[], &[DATASET_FILE, "dataset.json"])?;
    Ok(path)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub name: String,
    pub architecture: String,
    pub params: usize,
    pub seed: u64,
    pub autoencoder: bool,
    pub train_instances: usize,
    pub validation_instances: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub min_val_loss: f64,
    pub final_train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pruning: Option<PruningSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningSummary {
    pub target_sparsity: f64,
    pub target_reached_at: Option<usize>,
    pub events: Vec<PruneEvent>,
    pub report: SparsityReport,
}

fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_loss));
    }
    out
}

/// The training and validation parts of the run's dataset, as trained on.
pub fn training_sets(run: &Run, ds: &Dataset) -> anyhow::Result<(Dataset, Dataset)> {
    if ds.is_empty() {
        return Err(Error::Argument("dataset is empty".into()).into());
    }
    let (tr, va) = split(ds, run.config.dataset.split_fraction, &run.seed())?;
    if run.config.training()?.autoencoder {
        return Ok((make_autoencoder_dataset(&tr), make_autoencoder_dataset(&va)));
    }
    Ok((tr, va))
}

pub fn cmd_train(run: &Run, dataset: Option<&Path>) -> anyhow::Result<TrainingSummary> {
    let data_path = dataset.map_or_else(|| run.path(DATASET_FILE), Path::to_path_buf);
    let ds = read_dataset(&data_path)?;
    run.begin()?;
    let arch = run.config.architecture()?;
    let section = run.config.training()?.clone();
    let cfg = section.train_config();
    let (tr, va) = training_sets(run, &ds)?;
    let seed = run.seed();
    let net = Network::new(&arch, &seed);

    let mut prune = match &run.config.pruning {
        Some(p) => Some(PruneHook::new(p.resolve(&net, cfg.epochs)?)),
        None => None,
    };
    let mut hooks: Vec<&mut dyn TrainHook> = Vec::new();
    if let Some(h) = prune.as_mut() {
        hooks.push(h);
    }
    let outcome = train(net, &tr, &va, &cfg, &seed, &mut hooks)?;

    let pruning = prune.map(|h| PruningSummary {
        target_sparsity: h.schedule.target_sparsity,
        target_reached_at: h.target_reached_at,
        events: h.events,
        report: sparsity_report(&outcome.best),
    });
    let summary = TrainingSummary {
        name: run.label(),
        architecture: arch.to_string(),
        params: arch.param_count(),
        seed: run.config.seed,
        autoencoder: section.autoencoder,
        train_instances: tr.len(),
        validation_instances: va.len(),
        epochs_run: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        min_val_loss: outcome.best_val_loss,
        final_train_loss: outcome.history.last().map_or(f64::NAN, |r| r.train_loss),
        pruning,
    };

    let checkpoint = Checkpoint {
        network: outcome.best,
        training: json!({
            "config": section,
            "seed": run.config.seed,
            "dataset_sha256": file_digest(&data_path)?,
            "split_fraction": run.config.dataset.split_fraction,
            "best_epoch": outcome.best_epoch,
            "best_val_loss": outcome.best_val_loss,
        }),
    };
    write_file(&run.path(CHECKPOINT_FILE), checkpoint.to_json()?.as_bytes())?;
    write_file(&run.path(HISTORY_FILE), history_csv(&outcome.history).as_bytes())?;
    write_json(&run.path(TRAINING_FILE), &summary)?;
    let mut outputs = vec![CHECKPOINT_FILE, HISTORY_FILE, TRAINING_FILE];
    if let Some(p) = &summary.pruning {
        write_json(&run.path("sparsity.json"), &p.report)?;
        write_file(&run.path("masks.csv"), mask_grid_csv(&first_layer_mask_grid(&checkpoint.network)).as_bytes())?;
        outputs.extend(["sparsity.json", "masks.csv"]);
    }
    run.record("train", &[&data_path], &outputs)?;
    Ok(summary)
}

// ----------------------------------------------------------------- eval

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub model: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    /// Forces the affine fit against the true slow map.
    pub slow_map: bool,
    /// Forces a level-set grid, spanning the data when the config has none.
    pub grid: bool,
    /// Evaluates every instance instead of the held-out part.
    pub all: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub architecture: String,
    pub instances: usize,
    pub part: String,
    pub reconstruction_mse: f64,
    pub ortho: Option<ErrorStats>,
    pub ortho_raw: Option<ErrorStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ortho_skipped: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine_fit: Option<AffineFit>,
    pub gap: GapSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<SparsityReport>,
}

pub fn cmd_eval(run: &Run, opts: &EvalOptions) -> anyhow::Result<EvalSummary> {
    let model_path = opts.model.clone().unwrap_or_else(|| run.path(CHECKPOINT_FILE));
    let data_path = opts.dataset.clone().unwrap_or_else(|| run.path(DATASET_FILE));
    let net = read_checkpoint(&model_path)?.network;
    let ds = read_dataset(&data_path)?;
    if ds.is_empty() {
        return Err(Error::Argument("cannot evaluate on an empty dataset".into()).into());
    }
    run.begin()?;
    let pair = run.pair()?;
    let eval = &run.config.evaluation;
    let (part, data) = if opts.all { ("all", ds) } else { ("validation", split(&ds, run.config.dataset.split_fraction, &run.seed())?.1) };

    let autoencoder = run.config.training.as_ref().is_some_and(|t| t.autoencoder);
    let mse_set = if autoencoder { make_autoencoder_dataset(&data) } else { data.clone() };
    let reconstruction_mse = net.evaluate(&mse_set.instances)?;
    let mut outputs = vec![METRICS_FILE, "spectrum.csv"];

    let (ortho, ortho_raw, ortho_skipped) = if net.slow_dim() + pair.fast_dim() == pair.observed.dim() {
        let errs = orthogonality_errors(&net, &data.instances, pair.fast_dim())?;
        write_file(&run.path("ortho.csv"), ortho_csv(&errs).as_bytes())?;
        outputs.push("ortho.csv");
        let n: Vec<f64> = errs.iter().map(|e| e.normalized).collect();
        let r: Vec<f64> = errs.iter().map(|e| e.raw).collect();
        (Some(error_stats(&n)?), Some(error_stats(&r)?), None)
    } else {
        let why = format!("bottleneck width {} plus {} fast directions is not the state dimension", net.slow_dim(), pair.fast_dim());
        (None, None, Some(why))
    };

    let affine = if opts.slow_map || eval.slow_map {
        let encoded: Vec<Vec<f64>> = data.instances.iter().map(|i| net.encode(&i.x)).collect::<Result<_, _>>()?;
        let truth: Vec<Vec<f64>> = data.instances.iter().map(|i| pair.slow_map(&i.x)).collect::<Result<_, _>>()?;
        Some(affine_fit(&encoded, &truth)?)
    } else {
        None
    };

    let grid = match (&eval.grid, opts.grid) {
        (Some(g), _) => Some(g.clone()),
        (None, true) => Some(default_grid(&data)),
        (None, false) => None,
    };
    if let Some(g) = grid {
        let table = level_set_grid(&net, &g)?;
        write_file(&run.path("levelset.csv"), table.to_csv(net.slow_dim()).as_bytes())?;
        outputs.push("levelset.csv");
    }

    let spectrum = spectrum_export(&data, eval.gap_ratio)?;
    write_file(&run.path("spectrum.csv"), spectrum.to_csv().as_bytes())?;

    let has_masks = net.dense_layers().any(|(_, d)| d.pruned_count() > 0);
    let summary = EvalSummary {
        architecture: net.architecture_string(),
        instances: data.len(),
        part: part.to_string(),
        reconstruction_mse,
        ortho,
        ortho_raw,
        ortho_skipped,
        affine_fit: affine,
        gap: spectrum.summary,
        sparsity: has_masks.then(|| sparsity_report(&net)),
    };
    write_json(&run.path(METRICS_FILE), &summary)?;
    run.record("eval", &[&model_path, &data_path], &outputs)?;
    Ok(summary)
}

/// The first two coordinates over the data's bounding box, 101 × 101.
fn default_grid(ds: &Dataset) -> GridSpec {
    let range = |k: usize| {
        let lo = ds.instances.iter().map(|i| i.x[k]).fold(f64::INFINITY, f64::min);
        let hi = ds.instances.iter().map(|i| i.x[k]).fold(f64::NEG_INFINITY, f64::max);
        [lo, hi]
    };
    let d = ds.dim().unwrap_or(2);
    let base = (0..d)
        .map(|k| ds.instances.iter().map(|i| i.x[k]).sum::<f64>() / ds.len() as f64)
        .collect();
    GridSpec { axes: [0, 1], x_range: range(0), y_range: range(1), resolution: [101, 101], base }
}

// --------------------------------------------------------------- report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub training: TrainingSummary,
    pub metrics: Option<EvalSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub text: String,
}

/// Collects every run below `dir` and renders the architecture and sparsity
/// tables. Writes `report.txt` and `report.json` into `out`.
pub fn cmd_report(dir: &Path, out: &Path) -> anyhow::Result<Report> {
    let mut found = Vec::new();
    find_runs(dir, 0, &mut found)?;
    found.sort();
    if found.is_empty() {
        return Err(anyhow!("no runs found in {}", dir.display()));
    }
    let mut rows = Vec::new();
    for path in found {
        let training: TrainingSummary = serde_json::from_str(&fs::read_to_string(path.join(TRAINING_FILE))?)
            .with_context(|| format!("corrupt {}", path.join(TRAINING_FILE).display()))?;
        let metrics = match fs::read_to_string(path.join(METRICS_FILE)) {
            Ok(t) => Some(serde_json::from_str(&t).with_context(|| format!("corrupt metrics in {}", path.display()))?),
            Err(_) => None,
        };
        let run = path.strip_prefix(dir).unwrap_or(&path).display().to_string();
        rows.push(ReportRow { run: if run.is_empty() { ".".into() } else { run }, training, metrics });
    }
    let text = render_report(&rows);
    fs::create_dir_all(out)?;
    write_file(&out.join("report.txt"), text.as_bytes())?;
    let report = Report { rows, text };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

fn find_runs(dir: &Path, depth: usize, found: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    if !dir.is_dir() {
        return Err(anyhow!("{} is not a directory", dir.display()));
    }
    if dir.join(TRAINING_FILE).is_file() {
        found.push(dir.to_path_buf());
    }
    if depth >= 4 {
        return Ok(());
    }
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            find_runs(&p, depth + 1, found)?;
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.digits$}"))
}

pub fn render_report(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let w = rows.iter().map(|r| r.training.name.len()).max().unwrap_or(5).max(5);
    let wl = rows.iter().map(|r| r.training.architecture.len()).max().unwrap_or(11).max(11);
    out.push_str(&format!(
        "{:<w$}  {:<wl$}  {:>8}  {:>20}  {:>8}  {:>8}  {:>8}\n",
        "Model", "Layer sizes", "Epochs", "Min. validation loss", "E median", "E IQR", "R2"
    ));
    for r in rows {
        let t = &r.training;
        let m = r.metrics.as_ref();
        let med = m.and_then(|m| m.ortho).map(|s| s.median);
        let iqr = m.and_then(|m| m.ortho).map(|s| s.q3 - s.q1);
        let r2 = m.and_then(|m| m.affine_fit.as_ref()).map(|f| f.r2);
        out.push_str(&format!(
            "{:<w$}  {:<wl$}  {:>8}  {:>20.4}  {:>8}  {:>8}  {:>8}\n",
            t.name,
            t.architecture,
            t.epochs_run,
            t.min_val_loss,
            fmt_opt(med, 4),
            fmt_opt(iqr, 4),
            fmt_opt(r2, 4)
        ));
    }
    let pruned: Vec<(String, SparsityReport)> = rows
        .iter()
        .filter_map(|r| {
            let t = &r.training;
            t.pruning.as_ref().map(|p| (format!("{} ({})", t.name, t.architecture), p.report.clone()))
        })
        .collect();
    if !pruned.is_empty() {
        out.push('\n');
        out.push_str(&render_sparsity_table(&pruned));
    }
    out
}
