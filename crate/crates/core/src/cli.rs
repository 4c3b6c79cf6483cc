//! Command-line surface: one binary with `train`, `eval`, `predict`,
//! `gradcheck`, `ablate`, and `synth` subcommands sharing a single config
//! and checkpoint code path.
//!
//! Configuration precedence, lowest to highest: built-in defaults, the
//! `STCGAT_SEED` environment variable (seed only), a `--config` key=value
//! file, explicit flags. Every command leaves a `config.resolved` artifact
//! recording the settings it actually ran with; feeding that file back via
//! `--config` reproduces the run bit for bit.
//!
//! Exit codes are a stable contract: 0 success, 1 failed check, 2 usage or
//! configuration problem, 3 numeric failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::data::{
    self, ingest, ingest_edges, predefined_adjacency, DataError, Format, MissingPolicy,
    NormStats, RawDataset, WindowSet,
};
use crate::eval::{self, EvalError};
use crate::model::{checkpoint, gradcheck, train, Model, ModelConfig, ModelError};
use crate::substrate::{Tape, Tensor};
use crate::synth::{self, SynthConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Error, Debug)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::File { .. } => EXIT_USAGE,
            CliError::Data(_) => EXIT_USAGE,
            CliError::Model(e) => model_exit_code(e),
            CliError::Eval(EvalError::AllMasked { .. }) => EXIT_NUMERIC,
            CliError::Eval(EvalError::Model(e)) => model_exit_code(e),
            CliError::Eval(_) => EXIT_USAGE,
        }
    }
}

fn model_exit_code(err: &ModelError) -> i32 {
    match err {
        ModelError::Diverged { .. } | ModelError::Stage { .. } | ModelError::Substrate(_) => {
            EXIT_NUMERIC
        }
        _ => EXIT_USAGE,
    }
}

/// Parses `std::env::args` and runs the selected command, returning the
/// process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version land here too; those print on stdout and
            // exit cleanly, anything else is a usage error.
            let code = if err.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(inner) = source {
                eprintln!("  caused by: {inner}");
                source = inner.source();
            }
            err.exit_code()
        }
    }
}

#[derive(Parser)]
#[command(
    name = "stcgat",
    version,
    about = "Spatio-temporal traffic forecasting on an adaptive graph"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus epoch log.
    Train(TrainArgs),
    /// Score a checkpoint (or the historical-average baseline) on a split.
    Eval(EvalArgs),
    /// Forecast the next window from exactly one input window.
    Predict(PredictArgs),
    /// Verify analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Train with ablation flags (sugar for `train --ablate ...`).
    Ablate(AblateArgs),
    /// Generate a synthetic dataset with a known generative process.
    Synth(SynthArgs),
}

/// Model hyperparameter flags shared by the commands that build models.
/// Unset flags fall back to the `--config` file, then `STCGAT_SEED` (seed
/// only), then the defaults.
#[derive(Args, Clone, Default)]
struct ModelFlags {
    /// Key=value file; later flags override its entries.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Input and forecast window length, in steps.
    #[arg(long)]
    window: Option<usize>,
    /// Node-embedding width.
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Recurrent state width per direction.
    #[arg(long)]
    hidden: Option<usize>,
    /// Attention heads per gate.
    #[arg(long)]
    heads: Option<usize>,
    /// Hidden width of the prediction head.
    #[arg(long)]
    head_hidden: Option<usize>,
    /// Convolution kernel size in the temporal stack.
    #[arg(long)]
    kernel: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Maximum training epochs.
    #[arg(long = "epochs")]
    max_epochs: Option<usize>,
    /// Early-stopping patience, in epochs.
    #[arg(long)]
    patience: Option<usize>,
    /// Ablations: no_node_embedding, no_resnet, no_reverse_gru, no_tcn.
    #[arg(long, value_delimiter = ',')]
    ablate: Vec<String>,
}

const ABLATION_FLAGS: [&str; 4] = ["no_node_embedding", "no_resnet", "no_reverse_gru", "no_tcn"];

impl ModelFlags {
    /// Builds the final config from `base` by layering environment, file,
    /// and flags in precedence order.
    fn resolve(&self, mut base: ModelConfig) -> Result<ModelConfig, CliError> {
        if let Ok(text) = std::env::var("STCGAT_SEED") {
            base.seed = text.trim().parse().map_err(|_| {
                CliError::Usage(format!("STCGAT_SEED must be an unsigned integer, got {text:?}"))
            })?;
        }
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::File {
                path: path.clone(),
                source,
            })?;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    CliError::Usage(format!(
                        "{}:{}: expected key=value, got {line:?}",
                        path.display(),
                        i + 1
                    ))
                })?;
                base.set(key.trim(), value.trim()).map_err(ModelError::from)?;
            }
        }
        if let Some(v) = self.seed {
            base.seed = v;
        }
        if let Some(v) = self.window {
            base.window = v;
        }
        if let Some(v) = self.embed_dim {
            base.embed_dim = v;
        }
        if let Some(v) = self.hidden {
            base.hidden = v;
        }
        if let Some(v) = self.heads {
            base.heads = v;
        }
        if let Some(v) = self.head_hidden {
            base.head_hidden = v;
        }
        if let Some(v) = self.kernel {
            base.kernel = v;
        }
        if let Some(v) = self.dropout {
            base.dropout = v;
        }
        if let Some(v) = self.lr {
            base.lr = v;
        }
        if let Some(v) = self.batch {
            base.batch = v;
        }
        if let Some(v) = self.max_epochs {
            base.max_epochs = v;
        }
        if let Some(v) = self.patience {
            base.patience = v;
        }
        for flag in &self.ablate {
            if !ABLATION_FLAGS.contains(&flag.as_str()) {
                return Err(CliError::Usage(format!(
                    "unknown ablation {flag:?}; expected one of {}",
                    ABLATION_FLAGS.join(", ")
                )));
            }
            base.set(flag, "true").map_err(ModelError::from)?;
        }
        base.validate().map_err(ModelError::from)?;
        Ok(base)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset: `.stds` binary, or CSV with the shaped header.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Edge list, required by the no_node_embedding ablation.
    #[arg(long, value_name = "PATH")]
    edges: Option<PathBuf>,
    /// Where the checkpoint, logs, and resolved config land.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
    /// Forward-fill missing readings instead of rejecting the file.
    #[arg(long)]
    fill_missing: bool,
    /// Stop after this many optimizer steps, mid-epoch if needed.
    #[arg(long)]
    step_limit: Option<usize>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct AblateArgs {
    /// Ablations to apply, comma separated.
    #[arg(value_delimiter = ',', required = true)]
    flags: Vec<String>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Edge list, required when the checkpoint was trained without node
    /// embeddings.
    #[arg(long, value_name = "PATH")]
    edges: Option<PathBuf>,
    /// Which chronological split to score.
    #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
    split: String,
    /// Score this reference instead of the model's forward pass.
    #[arg(long, value_parser = ["ha"])]
    baseline: Option<String>,
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    fill_missing: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Input window: a dataset file holding exactly one window of steps.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    #[arg(long, value_name = "PATH")]
    edges: Option<PathBuf>,
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    fill_missing: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Node count of the probe model (no dataset is read).
    #[arg(long)]
    nodes: Option<usize>,
    /// Seed for the probe input and target draw.
    #[arg(long)]
    probe_seed: Option<u64>,
    /// Test hook: corrupt this parameter's analytic gradient first.
    #[arg(long, value_name = "NAME")]
    corrupt_param: Option<String>,
    #[arg(long, value_name = "PATH")]
    edges: Option<PathBuf>,
    #[arg(long, value_name = "DIR", default_value = ".")]
    out_dir: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset path; the edge list and meta sidecar take the same
    /// stem with `.edges` / `.meta` extensions.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Key=value file of synthesis settings; flags override it.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Neighbor-coupling strength of the noise recursion.
    #[arg(long)]
    coupling: Option<f64>,
    /// Autoregressive memory of each node's noise.
    #[arg(long)]
    rho: Option<f64>,
    /// Innovation standard deviation.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Daily sinusoid amplitude.
    #[arg(long)]
    amp: Option<f64>,
    /// Geometric-graph connection radius on the unit square.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    unit_minutes: Option<u32>,
}

fn dispatch(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Train(args) => cmd_train(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::File {
        path: dir.to_path_buf(),
        source,
    })
}

fn missing_policy(fill: bool) -> MissingPolicy {
    if fill {
        MissingPolicy::ForwardFill
    } else {
        MissingPolicy::Reject
    }
}

/// Loads the edge list and builds the fixed adjacency when the config's
/// adaptive path is ablated; enforces that the flag and the file agree.
fn fixed_adjacency(
    config: &ModelConfig,
    edges: Option<&PathBuf>,
) -> Result<Option<Tensor<f64>>, CliError> {
    if !config.no_node_embedding {
        if edges.is_some() {
            eprintln!("note: --edges is unused without the no_node_embedding ablation");
        }
        return Ok(None);
    }
    let path = edges.ok_or_else(|| {
        CliError::Usage(
            "the no_node_embedding ablation replaces the learned adjacency with a \
             predefined graph; pass one with --edges"
                .to_string(),
        )
    })?;
    let list = ingest_edges(path, config.nodes)?;
    Ok(Some(predefined_adjacency(&list, config.nodes)?))
}

fn config_against_dataset(
    config: &ModelConfig,
    dataset: &RawDataset,
) -> Result<(), CliError> {
    if config.nodes != dataset.nodes() || config.features != dataset.features() {
        return Err(CliError::Usage(format!(
            "configuration is for {} nodes x {} features, dataset has {} x {}",
            config.nodes,
            config.features,
            dataset.nodes(),
            dataset.features()
        )));
    }
    Ok(())
}

// ── train ──

fn cmd_train(args: TrainArgs) -> Result<i32, CliError> {
    let mut dataset = ingest(
        &args.data,
        Format::infer(&args.data),
        missing_policy(args.fill_missing),
    )?;
    let mut base = ModelConfig::default_for(dataset.nodes());
    base.features = dataset.features();
    let config = args.model.resolve(base)?;
    config_against_dataset(&config, &dataset)?;

    ensure_out_dir(&args.out_dir)?;
    write_file(&args.out_dir.join("config.resolved"), &config.canonical_text())?;

    let (train_range, val_range, _test) = data::split(dataset.total_steps(), config.window)?;
    let stats = data::normalize(&mut dataset.readings, &train_range)?;
    let training =
        WindowSet::from_slice(&dataset.readings, &train_range, config.window)?.cast::<f32>();
    let validation =
        WindowSet::from_slice(&dataset.readings, &val_range, config.window)?.cast::<f32>();

    let adjacency = fixed_adjacency(&config, args.edges.as_ref())?;
    let (model, params) = Model::build::<f32>(&config, adjacency.as_ref())?;
    println!(
        "training on {} windows, validating on {} ({} parameter elements)",
        training.len(),
        validation.len(),
        params.total_elements()
    );

    let report = train::train(&model, params, &training, &validation, args.step_limit, |r| {
        println!(
            "epoch {:>3}  train {:.6}  val {:.6}  {:.1}s",
            r.epoch, r.train_loss, r.val_loss, r.wall_seconds
        );
    })?;

    let mut log = String::from("epoch,train_loss,val_loss,wall_seconds\n");
    for r in &report.epochs {
        writeln!(
            log,
            "{},{},{},{:.3}",
            r.epoch, r.train_loss, r.val_loss, r.wall_seconds
        )
        .expect("writing to a string");
    }
    write_file(&args.out_dir.join("epochs.csv"), &log)?;

    let checkpoint_path = args.out_dir.join("model.stcg");
    checkpoint::save(
        &checkpoint_path,
        &config,
        &stats.mean,
        &stats.std,
        &report.best_params,
    )?;
    println!(
        "best epoch {} (val {:.6}); {} steps{}; checkpoint {}",
        report.best_epoch,
        report.best_val_loss,
        report.steps_taken,
        if report.stopped_early {
            ", stopped early"
        } else {
            ""
        },
        checkpoint_path.display()
    );
    Ok(EXIT_OK)
}

fn cmd_ablate(args: AblateArgs) -> Result<i32, CliError> {
    let mut train = args.train;
    train.model.ablate.extend(args.flags);
    cmd_train(train)
}

// ── eval ──

fn cmd_eval(args: EvalArgs) -> Result<i32, CliError> {
    let loaded = checkpoint::load(&args.checkpoint)?;
    let config = loaded.config.clone();
    let mut dataset = ingest(
        &args.data,
        Format::infer(&args.data),
        missing_policy(args.fill_missing),
    )?;
    config_against_dataset(&config, &dataset)?;

    let stats = NormStats {
        mean: loaded.norm_mean.clone(),
        std: loaded.norm_std.clone(),
    };
    stats.apply(&mut dataset.readings)?;

    let (train_range, val_range, test_range) =
        data::split(dataset.total_steps(), config.window)?;
    let range = match args.split.as_str() {
        "train" => train_range,
        "val" => val_range,
        _ => test_range,
    };
    let windows =
        WindowSet::from_slice(&dataset.readings, &range, config.window)?.cast::<f32>();

    let report = if args.baseline.as_deref() == Some("ha") {
        eval::evaluate_ha(&windows, &stats)?
    } else {
        let adjacency = fixed_adjacency(&config, args.edges.as_ref())?;
        let (model, mut params) = Model::build::<f32>(&config, adjacency.as_ref())?;
        loaded.bind_into(&mut params)?;
        eval::evaluate(&model, &params, &windows, &stats)?
    };

    ensure_out_dir(&args.out_dir)?;
    write_file(&args.out_dir.join("config.resolved"), &config.canonical_text())?;
    write_file(&args.out_dir.join("metrics.csv"), &report.csv())?;
    let summary = report.summary(dataset.unit_minutes);
    write_file(&args.out_dir.join("summary.txt"), &summary)?;
    print!(
        "{} split, {} windows, {}\n{summary}",
        args.split,
        windows.len(),
        if args.baseline.is_some() {
            "historical-average baseline"
        } else {
            "model forward pass"
        }
    );
    Ok(EXIT_OK)
}

// ── predict ──

fn cmd_predict(args: PredictArgs) -> Result<i32, CliError> {
    let loaded = checkpoint::load(&args.checkpoint)?;
    let config = loaded.config.clone();
    let mut dataset = ingest(
        &args.data,
        Format::infer(&args.data),
        missing_policy(args.fill_missing),
    )?;
    config_against_dataset(&config, &dataset)?;
    if dataset.total_steps() != config.window {
        return Err(CliError::Usage(format!(
            "prediction needs exactly one {}-step window, the input has {} steps",
            config.window,
            dataset.total_steps()
        )));
    }

    let stats = NormStats {
        mean: loaded.norm_mean.clone(),
        std: loaded.norm_std.clone(),
    };
    stats.apply(&mut dataset.readings)?;

    let adjacency = fixed_adjacency(&config, args.edges.as_ref())?;
    let (model, mut params) = Model::build::<f32>(&config, adjacency.as_ref())?;
    loaded.bind_into(&mut params)?;

    let (n, t, f) = (config.nodes, config.window, config.features);
    let input = Tensor::<f32>::from_fn(&[1, n, t, f], |i| {
        dataset.readings.at(&[i[1], i[2], i[3]]) as f32
    });
    let mut tape = Tape::new();
    let vars = params.register_on(&mut tape).map_err(ModelError::from)?;
    let x = tape.leaf(input).map_err(ModelError::from)?;
    let y = model.forward(&mut tape, &vars, x, false)?;
    let pred = tape.value(y);

    let mut out = String::from("node,horizon");
    if f == 1 {
        out.push_str(",value\n");
    } else {
        for feat in 0..f {
            write!(out, ",value{feat}").expect("writing to a string");
        }
        out.push('\n');
    }
    for node in 0..n {
        for step in 0..t {
            write!(out, "{node},{}", step + 1).expect("writing to a string");
            for feat in 0..f {
                let raw = stats.denormalize(pred.at(&[0, node, step, feat]) as f64, feat);
                write!(out, ",{raw}").expect("writing to a string");
            }
            out.push('\n');
        }
    }
    ensure_out_dir(&args.out_dir)?;
    write_file(&args.out_dir.join("config.resolved"), &config.canonical_text())?;
    let out_path = args.out_dir.join("predictions.csv");
    write_file(&out_path, &out)?;
    println!("{} forecasts written to {}", n * t, out_path.display());
    Ok(EXIT_OK)
}

// ── gradcheck ──

fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32, CliError> {
    let mut base = gradcheck::tiny_config();
    if let Some(n) = args.nodes {
        base = {
            let mut cfg = gradcheck::tiny_config();
            cfg.nodes = n;
            cfg
        };
    }
    let config = args.model.resolve(base)?;
    let probe_seed = args.probe_seed.unwrap_or(gradcheck::PROBE_SEED);
    let adjacency = fixed_adjacency(&config, args.edges.as_ref())?;

    let report = gradcheck::run(
        &config,
        adjacency.as_ref(),
        probe_seed,
        args.corrupt_param.as_deref(),
    )?;

    let mut csv = String::from("parameter,elements,max_rel,passed\n");
    let name_width = report
        .params
        .iter()
        .map(|p| p.name.len())
        .max()
        .unwrap_or(0);
    for p in &report.params {
        println!(
            "{:<name_width$}  {:>6} elements  max rel {:>9.3e}  {}",
            p.name,
            p.elements,
            p.max_rel,
            if p.passed() { "ok" } else { "FAIL" }
        );
        writeln!(
            csv,
            "{},{},{:e},{}",
            p.name,
            p.elements,
            p.max_rel,
            p.passed()
        )
        .expect("writing to a string");
    }
    ensure_out_dir(&args.out_dir)?;
    write_file(&args.out_dir.join("config.resolved"), &config.canonical_text())?;
    write_file(&args.out_dir.join("gradcheck.csv"), &csv)?;

    if report.passed() {
        println!(
            "all {} elements within {:.0e}",
            report.elements,
            gradcheck::TOLERANCE
        );
        Ok(EXIT_OK)
    } else {
        let failures: Vec<&str> = report.failures().map(|p| p.name.as_str()).collect();
        eprintln!("gradient check failed: {}", failures.join(", "));
        Ok(EXIT_CHECK_FAILED)
    }
}

// ── synth ──

fn cmd_synth(args: SynthArgs) -> Result<i32, CliError> {
    let mut cfg = SynthConfig::new(10, 2000, 0);
    if let Ok(text) = std::env::var("STCGAT_SEED") {
        cfg.seed = text.trim().parse().map_err(|_| {
            CliError::Usage(format!("STCGAT_SEED must be an unsigned integer, got {text:?}"))
        })?;
    }
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::File {
            path: path.clone(),
            source,
        })?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    i + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
    }
    if let Some(v) = args.nodes {
        cfg.nodes = v;
    }
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.coupling {
        cfg.coupling = v;
    }
    if let Some(v) = args.rho {
        cfg.rho = v;
    }
    if let Some(v) = args.noise_sigma {
        cfg.noise_sigma = v;
    }
    if let Some(v) = args.amp {
        cfg.amp = v;
    }
    if let Some(v) = args.radius {
        cfg.radius = v;
    }
    if let Some(v) = args.unit_minutes {
        cfg.unit_minutes = v;
    }

    let paths = synth::write(&cfg, &args.out)?;
    let resolved = args
        .out
        .parent()
        .map(Path::to_path_buf)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    ensure_out_dir(&resolved)?;
    write_file(&resolved.join("config.resolved"), &cfg.canonical_text())?;
    println!(
        "wrote {} ({} nodes x {} steps), {}, {}",
        paths.dataset.display(),
        cfg.nodes,
        cfg.steps,
        paths.edges.display(),
        paths.meta.display()
    );
    Ok(EXIT_OK)
}
