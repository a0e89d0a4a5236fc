//! Command-line operator surface.
//!
//! Subcommands: `synth`, `split`, `train`, `eval`, `ablate`, `gradcheck`,
//! `export-attn`. Settings resolve as command line > config file (JSON,
//! `--config`) > built-in defaults. All reports are JSON, all logs
//! JSON-lines, all artifacts written atomically.
//!
//! Exit codes: 0 success, 2 usage, 3 data/format, 4 numeric failure,
//! 5 stage-order violation.

use crate::datakit::{
    self, read_manifest, read_split, tracklet_split, write_split, DataError, Manifest,
    Normalization, SplitAssignment, SplitName, SplitUnit, SynthSpec,
};
use crate::hpnet::{ablation_mask, export_attention, HpNetConfig, NetError, Task, ABLATION_GRID};
use crate::metrics::{
    evaluate_attributes, evaluate_reid, extract_embeddings, write_embeddings, MetricsError,
    MetricsReport,
};
use crate::tensor::gradcheck::standard_suite;
use crate::tensor::TensorError;
use crate::trainer::{
    identity_labels, load_split, LoadedSet, StageHyper, TrainError, TrainLogRecord, TrainState,
};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_STAGE_ORDER: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

type Result<V> = std::result::Result<V, CliError>;

fn train_exit(e: &TrainError) -> i32 {
    match e {
        TrainError::Diverged { .. } => EXIT_NUMERIC,
        TrainError::StageOrder(_) => EXIT_STAGE_ORDER,
        TrainError::Tensor(_) => EXIT_NUMERIC,
        TrainError::Net(NetError::Config(_)) => EXIT_USAGE,
        TrainError::Format { .. } | TrainError::Data(_) | TrainError::Spec(_) => EXIT_DATA,
        TrainError::Net(_) => EXIT_DATA,
    }
}

pub fn exit_code(e: &CliError) -> i32 {
    match e {
        CliError::Usage(_) => EXIT_USAGE,
        CliError::Data(_) => EXIT_DATA,
        CliError::Train(t) => train_exit(t),
        CliError::Net(NetError::Config(_)) => EXIT_USAGE,
        CliError::Net(_) => EXIT_DATA,
        CliError::Metrics(MetricsError::Usage(_)) => EXIT_USAGE,
        CliError::Metrics(_) => EXIT_DATA,
        CliError::Tensor(_) | CliError::Numeric(_) => EXIT_NUMERIC,
    }
}

/// Everything a run needs; each field has a default and maps 1:1 onto the
/// JSON config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// 0 = library default thread count.
    pub threads: usize,
    pub net: HpNetConfig,
    pub stage1: StageHyper,
    pub stage2: StageHyper,
    pub stage3: StageHyper,
    pub eval_batch: usize,
    pub cmc_trials: usize,
    pub split_ratio: [u32; 3],
    pub split_unit: SplitUnit,
    pub normalization: Normalization,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            seed: 0,
            threads: 0,
            net: HpNetConfig::default(),
            stage1: StageHyper::default(),
            stage2: StageHyper::default(),
            stage3: StageHyper::default(),
            eval_batch: 32,
            cmc_trials: crate::metrics::DEFAULT_TRIALS,
            split_ratio: [8, 1, 1],
            split_unit: SplitUnit::Tracklet,
            normalization: Normalization::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(DataError::Io)?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Data(DataError::Parse {
                line: 0,
                msg: format!("bad config file {}: {e}", path.display()),
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Attributes,
    Reid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum UnitArg {
    Tracklet,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl SplitArg {
    fn name(self) -> SplitName {
        match self {
            SplitArg::Train => SplitName::Train,
            SplitArg::Val => SplitName::Val,
            SplitArg::Test => SplitName::Test,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "hydraplus", version, about = "Multi-branch attentive pedestrian analysis")]
struct Cli {
    /// JSON run-config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory for checkpoints, logs and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic dataset (images + manifest).
    Synth {
        /// JSON spec file; defaults to the built-in spec for --task.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = TaskArg::Attributes)]
        task: TaskArg,
        /// Dataset directory to create.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Assign tracklets (or identities) to train/val/test.
    Split {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Ratio as "a:b:c".
        #[arg(long)]
        ratio: Option<String>,
        #[arg(long, value_enum)]
        unit: Option<UnitArg>,
    },
    /// Run the stage-wise training pipeline.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// 1 | 2 | 3 | all
        #[arg(long, default_value = "all")]
        stage: String,
        /// Input checkpoint for stages 2/3 (defaults to the previous
        /// stage's output in --out).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Write the JSON report here as well as to stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also dump embeddings (binary + id sidecar) to this path.
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Retrain and evaluate every connectivity variant.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Named grid ("standard") or use --configs for a subset.
        #[arg(long, default_value = "standard")]
        grid: String,
        /// Comma-separated variant names overriding the grid.
        #[arg(long)]
        configs: Option<String>,
        /// Number of seeds (seed, seed+1, ...).
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Finite-difference checks over the differentiable primitives.
    Gradcheck {
        /// "all" or a comma-separated op-name subset.
        #[arg(long, default_value = "all")]
        ops: String,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
    /// Write per-channel attention heatmaps for one image.
    ExportAttn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
}

/// Parse argv, resolve config, dispatch. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap prints help/version through the same path
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if cfg.threads > 0 {
        // ignore the error when a pool already exists (tests, reentry)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global();
    }
    match cli.cmd {
        Cmd::Synth { spec, task, data } => cmd_synth(&cfg, spec, task, data, cli.seed.is_some()),
        Cmd::Split { data, ratio, unit } => cmd_split(&cfg, data, ratio, unit),
        Cmd::Train {
            data,
            stage,
            checkpoint,
        } => cmd_train(&cfg, data, &stage, checkpoint),
        Cmd::Eval {
            checkpoint,
            data,
            split,
            report,
            embeddings,
        } => cmd_eval(&cfg, &checkpoint, data, split, report, embeddings),
        Cmd::Ablate {
            data,
            grid,
            configs,
            seeds,
        } => cmd_ablate(&cfg, data, &grid, configs, seeds),
        Cmd::Gradcheck { ops, instances } => cmd_gradcheck(&cfg, &ops, instances),
        Cmd::ExportAttn { checkpoint, image } => cmd_export_attn(&cfg, &checkpoint, &image),
    }
}

fn data_dir(cfg: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| cfg.data_dir.clone())
}

fn cmd_synth(
    cfg: &RunConfig,
    spec_path: Option<PathBuf>,
    task: TaskArg,
    data: Option<PathBuf>,
    seed_flag: bool,
) -> Result<()> {
    let mut spec = match spec_path {
        Some(p) => {
            let text = std::fs::read_to_string(&p).map_err(DataError::Io)?;
            let spec: SynthSpec = serde_json::from_str(&text).map_err(|e| {
                CliError::Data(DataError::Parse {
                    line: 0,
                    msg: format!("bad synth spec {}: {e}", p.display()),
                })
            })?;
            // an explicit --seed still wins over the spec's own
            if seed_flag {
                let mut s = spec;
                s.seed = cfg.seed;
                s
            } else {
                spec
            }
        }
        None => match task {
            TaskArg::Attributes => SynthSpec::default_attributes_task(cfg.seed),
            TaskArg::Reid => SynthSpec::default_reid_task(cfg.seed),
        },
    };
    if seed_flag {
        spec.seed = cfg.seed;
    }
    let dir = data_dir(cfg, data);
    let manifest = datakit::generate_synthetic(&spec, &dir)?;
    println!(
        "{}",
        serde_json::json!({
            "data_dir": dir,
            "images": manifest.records.len(),
            "attributes": manifest.attributes,
            "seed": spec.seed,
        })
    );
    Ok(())
}

fn parse_ratio(s: &str) -> Result<[u32; 3]> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Usage(format!("ratio must be a:b:c, got {s:?}")));
    }
    let mut out = [0u32; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p
            .parse()
            .map_err(|_| CliError::Usage(format!("bad ratio part {p:?}")))?;
    }
    Ok(out)
}

fn cmd_split(
    cfg: &RunConfig,
    data: Option<PathBuf>,
    ratio: Option<String>,
    unit: Option<UnitArg>,
) -> Result<()> {
    let dir = data_dir(cfg, data);
    let manifest = read_manifest(&dir.join("manifest.jsonl"))?;
    let ratio = match ratio {
        Some(s) => parse_ratio(&s)?,
        None => cfg.split_ratio,
    };
    let unit = match unit {
        Some(UnitArg::Tracklet) => SplitUnit::Tracklet,
        Some(UnitArg::Identity) => SplitUnit::Identity,
        None => cfg.split_unit,
    };
    let split = tracklet_split(
        &manifest.records,
        manifest.num_attributes(),
        ratio,
        cfg.seed,
        unit,
    )?;
    let path = dir.join("split.json");
    write_split(&split, &path)?;
    let count = |n: SplitName| split.select(&manifest.records, n).len();
    println!(
        "{}",
        serde_json::json!({
            "split_file": path,
            "train": count(SplitName::Train),
            "val": count(SplitName::Val),
            "test": count(SplitName::Test),
            "seed": cfg.seed,
        })
    );
    Ok(())
}

struct Dataset {
    manifest: Manifest,
    split: SplitAssignment,
    dir: PathBuf,
}

fn open_dataset(cfg: &RunConfig, data: Option<PathBuf>) -> Result<Dataset> {
    let dir = data_dir(cfg, data);
    let manifest = read_manifest(&dir.join("manifest.jsonl"))?;
    let split = read_split(&dir.join("split.json"))?;
    Ok(Dataset {
        manifest,
        split,
        dir,
    })
}

fn load_set(cfg: &RunConfig, ds: &Dataset, name: SplitName, net: &HpNetConfig) -> Result<LoadedSet> {
    Ok(load_split(
        &ds.dir,
        &ds.manifest,
        &ds.split,
        name,
        net.input_height,
        net.input_width,
        cfg.normalization,
    )?)
}

/// Fit the network config to the dataset: attribute count from the
/// manifest, identity count from the training split.
fn fit_net_config(net: &mut HpNetConfig, ds: &Dataset, train: &LoadedSet) {
    net.num_attributes = ds.manifest.num_attributes();
    if net.task == Task::Reid {
        let (_, k) = identity_labels(&train.ids);
        net.num_identities = k;
    }
}

fn write_log(out_dir: &Path, logs: &[TrainLogRecord]) -> Result<()> {
    let mut text = String::new();
    for r in logs {
        text.push_str(&serde_json::to_string(r).expect("log record serializes"));
        text.push('\n');
    }
    datakit::atomic_write(&out_dir.join("train_log.jsonl"), text.as_bytes())?;
    Ok(())
}

/// Training prerequisite: a missing input checkpoint means the stages ran
/// out of order.
fn load_state(path: &Path) -> Result<TrainState> {
    if !path.exists() {
        return Err(CliError::Train(TrainError::StageOrder(format!(
            "missing prerequisite checkpoint {}",
            path.display()
        ))));
    }
    Ok(TrainState::load(path)?)
}

/// Evaluation/export input: a missing checkpoint is a plain data error.
fn open_checkpoint(path: &Path) -> Result<TrainState> {
    if !path.exists() {
        return Err(CliError::Data(DataError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("checkpoint not found: {}", path.display()),
        ))));
    }
    Ok(TrainState::load(path)?)
}

fn run_stage2_all(
    state: &mut TrainState,
    train: &LoadedSet,
    hyper: &StageHyper,
    seed: u64,
    logs: &mut Vec<TrainLogRecord>,
) -> Result<()> {
    if state.net.af.is_none() && state.net.config.active_modules().iter().any(|&b| b) {
        state.construct_afnet(seed)?;
    }
    for m in 0..3 {
        logs.extend(state.run_stage2(m, train, hyper, seed)?);
    }
    Ok(())
}

fn cmd_train(
    cfg: &RunConfig,
    data: Option<PathBuf>,
    stage: &str,
    checkpoint: Option<PathBuf>,
) -> Result<()> {
    let ds = open_dataset(cfg, data)?;
    let mut net_cfg = cfg.net.clone();
    let train = load_set(cfg, &ds, SplitName::Train, &net_cfg)?;
    fit_net_config(&mut net_cfg, &ds, &train);
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(DataError::Io)?;
    let mut logs = Vec::new();
    let final_path = match stage {
        "1" => {
            let mut state = TrainState::new(net_cfg, cfg.seed)?;
            logs.extend(state.run_stage1(&train, &cfg.stage1, cfg.seed)?);
            let p = out.join("stage1.ckpt");
            state.save(&p)?;
            p
        }
        "2" => {
            let input = checkpoint.unwrap_or_else(|| out.join("stage1.ckpt"));
            let mut state = load_state(&input)?;
            state.net.config.connectivity = net_cfg.connectivity;
            run_stage2_all(&mut state, &train, &cfg.stage2, cfg.seed, &mut logs)?;
            let p = out.join("stage2.ckpt");
            state.save(&p)?;
            p
        }
        "3" => {
            let input = checkpoint.unwrap_or_else(|| out.join("stage2.ckpt"));
            let mut state = load_state(&input)?;
            logs.extend(state.run_stage3(&train, &cfg.stage3, cfg.seed)?);
            let p = out.join("model.ckpt");
            state.save(&p)?;
            p
        }
        "all" => {
            let mut state = TrainState::new(net_cfg, cfg.seed)?;
            logs.extend(state.run_stage1(&train, &cfg.stage1, cfg.seed)?);
            state.save(&out.join("stage1.ckpt"))?;
            run_stage2_all(&mut state, &train, &cfg.stage2, cfg.seed, &mut logs)?;
            state.save(&out.join("stage2.ckpt"))?;
            logs.extend(state.run_stage3(&train, &cfg.stage3, cfg.seed)?);
            let p = out.join("model.ckpt");
            state.save(&p)?;
            p
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown stage {other:?}; expected 1, 2, 3 or all"
            )))
        }
    };
    write_log(out, &logs)?;
    println!(
        "{}",
        serde_json::json!({
            "checkpoint": final_path,
            "log": out.join("train_log.jsonl"),
            "epochs_logged": logs.len(),
            "seed": cfg.seed,
        })
    );
    Ok(())
}

fn evaluate(
    cfg: &RunConfig,
    state: &TrainState,
    set: &LoadedSet,
    seed: u64,
) -> Result<MetricsReport> {
    Ok(match state.net.config.task {
        Task::Attributes => evaluate_attributes(&state.net, set, cfg.eval_batch, seed)?,
        Task::Reid => evaluate_reid(&state.net, set, cfg.eval_batch, cfg.cmc_trials, seed)?,
    })
}

fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: Option<PathBuf>,
    split: SplitArg,
    report: Option<PathBuf>,
    embeddings: Option<PathBuf>,
) -> Result<()> {
    let ds = open_dataset(cfg, data)?;
    let state = open_checkpoint(checkpoint)?;
    let set = load_set(cfg, &ds, split.name(), &state.net.config)?;
    let rep = evaluate(cfg, &state, &set, cfg.seed)?;
    let json = serde_json::to_string_pretty(&rep).expect("report serializes");
    if let Some(p) = report {
        datakit::atomic_write(&p, json.as_bytes())?;
    }
    if let Some(p) = embeddings {
        let set = extract_embeddings(&state.net, &set, cfg.eval_batch)?;
        write_embeddings(&set, &p)?;
    }
    println!("{json}");
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationRow {
    config: String,
    metric: String,
    seeds: Vec<u64>,
    values: Vec<f64>,
    mean: f64,
}

fn cmd_ablate(
    cfg: &RunConfig,
    data: Option<PathBuf>,
    grid: &str,
    configs: Option<String>,
    seeds: u64,
) -> Result<()> {
    let names: Vec<String> = match configs {
        Some(csv) => csv.split(',').map(|s| s.trim().to_string()).collect(),
        None if grid == "standard" => ABLATION_GRID.iter().map(|s| s.to_string()).collect(),
        None => return Err(CliError::Usage(format!("unknown grid {grid:?}"))),
    };
    for n in &names {
        if ablation_mask(n).is_none() {
            return Err(CliError::Usage(format!("unknown ablation configuration {n:?}")));
        }
    }
    if seeds == 0 {
        return Err(CliError::Usage("need at least one seed".into()));
    }
    let ds = open_dataset(cfg, data)?;
    let mut net_cfg = cfg.net.clone();
    let train = load_set(cfg, &ds, SplitName::Train, &net_cfg)?;
    fit_net_config(&mut net_cfg, &ds, &train);
    let test = load_set(cfg, &ds, SplitName::Test, &net_cfg)?;
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(DataError::Io)?;

    let metric_name = match net_cfg.task {
        Task::Attributes => "mA",
        Task::Reid => "top1",
    };
    let seed_list: Vec<u64> = (0..seeds).map(|i| cfg.seed + i).collect();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for &seed in &seed_list {
        // the backbone stage is connectivity-independent: train once per
        // seed and branch every variant from it
        let mut base = TrainState::new(net_cfg.clone(), seed)?;
        let mut logs = base.run_stage1(&train, &cfg.stage1, seed)?;
        let stage1_path = out.join(format!("ablate_stage1_seed{seed}.ckpt"));
        base.save(&stage1_path)?;
        for (ci, name) in names.iter().enumerate() {
            let mut state = TrainState::load(&stage1_path)?;
            state.net.config.connectivity = ablation_mask(name).expect("validated above");
            run_stage2_all(&mut state, &train, &cfg.stage2, seed, &mut logs)?;
            logs.extend(state.run_stage3(&train, &cfg.stage3, seed)?);
            let rep = evaluate(cfg, &state, &test, seed)?;
            let v = match net_cfg.task {
                Task::Attributes => rep.m_a,
                Task::Reid => rep.cmc["1"],
            };
            values[ci].push(v);
        }
    }
    let rows: Vec<AblationRow> = names
        .iter()
        .zip(&values)
        .map(|(name, vals)| AblationRow {
            config: name.clone(),
            metric: metric_name.to_string(),
            seeds: seed_list.clone(),
            values: vals.clone(),
            mean: vals.iter().sum::<f64>() / vals.len() as f64,
        })
        .collect();
    let report = serde_json::json!({ "grid": grid, "rows": rows });
    let path = out.join("ablation.json");
    datakit::atomic_write(&path, serde_json::to_string_pretty(&report).unwrap().as_bytes())?;
    println!("config            mean {metric_name}");
    for r in &rows {
        println!("{:<17} {:.4}", r.config, r.mean);
    }
    println!("report: {}", path.display());
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig, ops: &str, instances: usize) -> Result<()> {
    let all = standard_suite(cfg.seed, instances)?;
    let checks: Vec<_> = if ops == "all" {
        all
    } else {
        let wanted: Vec<&str> = ops.split(',').map(str::trim).collect();
        for w in &wanted {
            if !all.iter().any(|c| c.op == *w) {
                return Err(CliError::Usage(format!("unknown op {w:?}")));
            }
        }
        all.into_iter().filter(|c| wanted.contains(&c.op.as_str())).collect()
    };
    for c in &checks {
        println!("{}", serde_json::to_string(c).expect("check serializes"));
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.op.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed for: {}",
            failed.join(", ")
        )))
    }
}

fn cmd_export_attn(cfg: &RunConfig, checkpoint: &Path, image: &Path) -> Result<()> {
    let state = open_checkpoint(checkpoint)?;
    let net_cfg = &state.net.config;
    let img = datakit::load_image(
        image,
        net_cfg.input_height,
        net_cfg.input_width,
        cfg.normalization,
    )?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(DataError::Io)?;
    let files = export_attention(&state.net, &img, &cfg.out_dir)?;
    println!(
        "{}",
        serde_json::json!({
            "count": files.len(),
            "files": files,
        })
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_parsing() {
        assert_eq!(parse_ratio("8:1:1").unwrap(), [8, 1, 1]);
        assert!(parse_ratio("8:1").is_err());
        assert!(parse_ratio("a:b:c").is_err());
    }

    #[test]
    fn config_defaults_and_file_and_flags_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        std::fs::write(&p, r#"{"seed": 7, "threads": 2}"#).unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.threads, 2);
        // untouched fields keep defaults
        assert_eq!(cfg.split_ratio, [8, 1, 1]);
        assert_eq!(cfg.net.attention_channels, 8);
    }

    #[test]
    fn unknown_stage_is_usage_error() {
        let cfg = RunConfig::default();
        let e = cmd_train(&cfg, Some(PathBuf::from("/nonexistent")), "9", None).unwrap_err();
        // dataset errors would also be fine, but the flag check comes first
        // only when the dataset opens; here the missing dataset wins
        assert!(matches!(e, CliError::Data(_) | CliError::Usage(_)));
    }

    #[test]
    fn exit_codes_map_error_classes() {
        assert_eq!(exit_code(&CliError::Usage("x".into())), 2);
        assert_eq!(
            exit_code(&CliError::Data(DataError::Decode("x".into()))),
            3
        );
        assert_eq!(
            exit_code(&CliError::Train(TrainError::Diverged {
                stage: "stage1".into(),
                epoch: 1
            })),
            4
        );
        assert_eq!(
            exit_code(&CliError::Train(TrainError::StageOrder("x".into()))),
            5
        );
        assert_eq!(
            exit_code(&CliError::Train(TrainError::Format {
                offset: 0,
                msg: "x".into()
            })),
            3
        );
    }
}
