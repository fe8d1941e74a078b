//! Command line front end for the vision-tactile grasping toolkit.
//!
//! One binary, six subcommands: synthesize labeled datasets, train and
//! evaluate the touch / slip classifiers, run closed-loop grasp episodes
//! against the simulator, benchmark the ablation variants, and dump tensor
//! files as viewable images. Every run is reproducible from its flags plus
//! a single `--seed`; metrics go to stdout as JSON lines and failures to
//! stderr as `error: <category>: <message>`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use grasp_control::detectors::{Detectors, ModelDetectors, OracleDetectors};
use grasp_control::scenario::{randomized_feasible_scene, run_episode, Scenario};
use grasp_control::{ControllerConfig, GraspError};
use tactile_core::{format, Tensor};
use tactile_models::slip::{
    build_variant, build_variant_toy, expected_parameter_count, SlipNet, SlipNetConfig, Variant,
};
use tactile_models::touch::{TouchNet, TouchNetConfig};
use tactile_models::train::{evaluate, fit, pool_to_resolution, EpochMetrics, TrainConfig};
use tactile_models::{checkpoint, ModelError};
use tactile_sim::dataset::{generate_slip_dataset, generate_touch_dataset, Preset};
use tactile_sim::{pgm, SimError};

#[derive(Parser)]
#[command(name = "tactile", version, about = "Synthetic tactile sensing: data, models, grasp episodes")]
struct Cli {
    /// JSON file supplying defaults for seed, preset, and training knobs.
    /// Explicit flags win over file values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Root seed; all randomness in a subcommand flows from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Scale preset: `toy` (default, minutes on one core) or `paper`.
    #[arg(long, global = true)]
    preset: Option<String>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a labeled synthetic dataset with a manifest.
    GenData {
        /// Which classifier the data feeds.
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Number of samples; labels alternate, so counts split evenly.
        #[arg(long)]
        count: usize,
        /// Output directory, created if missing.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train a classifier on a generated dataset and write a checkpoint.
    Train {
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Ablation variant for slip models; omit to train the preset's
        /// standard configuration.
        #[arg(long)]
        variant: Option<String>,
        /// Dataset directory produced by gen-data.
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
        /// Checkpoint path to write (tensor table plus JSON sidecar).
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long)]
        weight_decay: Option<f32>,
    },
    /// Evaluate a checkpoint on a dataset: accuracy and confusion matrix.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        dataset: PathBuf,
    },
    /// Run one closed-loop grasp episode and write its trace.
    Episode {
        /// `lift` or `fluid`.
        #[arg(long)]
        scenario: String,
        /// JSON-lines trace output path.
        #[arg(long, value_name = "PATH")]
        trace: PathBuf,
        /// `oracle` reads simulator ground truth; `model` runs checkpoints.
        #[arg(long, value_enum, default_value = "oracle")]
        detectors: DetectorsArg,
        /// Touch checkpoint, required with `--detectors model`.
        #[arg(long, value_name = "PATH")]
        touch_ckpt: Option<PathBuf>,
        /// Slip checkpoint, required with `--detectors model`.
        #[arg(long, value_name = "PATH")]
        slip_ckpt: Option<PathBuf>,
    },
    /// Time forward passes across the ablation grid at a reduced geometry.
    Bench {
        /// Single variant name; omit to sweep all eight.
        #[arg(long)]
        variant: Option<String>,
        /// Timed forward passes per variant (one untimed warmup first).
        #[arg(long, default_value_t = 3)]
        reps: usize,
    },
    /// Convert a stored tensor (image or clip) to grayscale PGM frames.
    ExportFrames {
        /// Tensor file, rank 3 `[C,H,W]` or rank 4 `[F,C,H,W]`.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        /// Output directory for `<stem>_<index>.pgm`.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Filename stem; defaults to the input file's stem.
        #[arg(long)]
        stem: Option<String>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Touch,
    Slip,
}

impl KindArg {
    fn name(self) -> &'static str {
        match self {
            KindArg::Touch => "touch",
            KindArg::Slip => "slip",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DetectorsArg {
    Oracle,
    Model,
}

/// One-line failure with a stable machine-parsable category.
struct CliError {
    category: &'static str,
    message: String,
}

impl CliError {
    fn new(category: &'static str, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into(),
        }
    }
}

fn model_err(e: ModelError) -> CliError {
    let category = match &e {
        ModelError::Geometry { .. } => "geometry-mismatch",
        ModelError::Config { .. } => "config-error",
        ModelError::UnknownVariant { .. } => "unknown-variant",
        ModelError::Checkpoint { .. } => "checkpoint-error",
        ModelError::Tensor(_) => "tensor-error",
        ModelError::Io(_) => "io-error",
    };
    CliError::new(category, e.to_string())
}

fn sim_err(e: SimError) -> CliError {
    let category = match &e {
        SimError::Invalid { .. } | SimError::NonFinite { .. } => "sim-error",
        SimError::Tensor(_) => "tensor-error",
        SimError::Io(_) => "io-error",
        SimError::Json(_) => "json-error",
    };
    CliError::new(category, e.to_string())
}

fn grasp_err(e: GraspError) -> CliError {
    match e {
        GraspError::Model(inner) => model_err(inner),
        GraspError::Sim(inner) => sim_err(inner),
        GraspError::Invalid { .. } => CliError::new("config-error", e.to_string()),
        GraspError::IllegalTransition { .. } => CliError::new("grasp-error", e.to_string()),
        GraspError::Io(_) => CliError::new("io-error", e.to_string()),
        GraspError::Json(_) => CliError::new("json-error", e.to_string()),
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::new("io-error", e.to_string())
}

/// Values that may come from a `--config` JSON file; any subset of fields.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    preset: Option<String>,
    epochs: Option<usize>,
    batch: Option<usize>,
    lr: Option<f32>,
    weight_decay: Option<f32>,
}

/// Fully resolved run settings: flag, else config file, else default.
struct Settings {
    seed: u64,
    preset: Preset,
    epochs: usize,
    batch: usize,
    lr: f32,
    weight_decay: f32,
}

fn resolve_settings(cli: &Cli) -> Result<Settings, CliError> {
    let file: FileConfig = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err)?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::new("config-error", format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };

    let preset_name = cli
        .preset
        .clone()
        .or(file.preset)
        .unwrap_or_else(|| "toy".to_string());
    let preset = Preset::from_name(&preset_name).ok_or_else(|| {
        CliError::new(
            "config-error",
            format!("unknown preset {preset_name:?}, expected toy or paper"),
        )
    })?;

    let defaults = TrainConfig::default();
    let (epochs, batch, lr, weight_decay) = match &cli.cmd {
        Cmd::Train {
            epochs,
            batch,
            lr,
            weight_decay,
            ..
        } => (*epochs, *batch, *lr, *weight_decay),
        _ => (None, None, None, None),
    };
    Ok(Settings {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        preset,
        epochs: epochs.or(file.epochs).unwrap_or(defaults.epochs),
        batch: batch.or(file.batch).unwrap_or(defaults.batch),
        lr: lr.or(file.lr).unwrap_or(defaults.lr),
        weight_decay: weight_decay
            .or(file.weight_decay)
            .unwrap_or(defaults.weight_decay),
    })
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let settings = match resolve_settings(&cli) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {}", e.category, e.message);
            return ExitCode::FAILURE;
        }
    };
    match dispatch(&cli.cmd, &settings) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.category, e.message);
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: &Cmd, settings: &Settings) -> Result<(), CliError> {
    match cmd {
        Cmd::GenData { kind, count, out } => cmd_gen_data(*kind, *count, out, settings),
        Cmd::Train {
            kind,
            variant,
            dataset,
            checkpoint,
            ..
        } => cmd_train(*kind, variant.as_deref(), dataset, checkpoint, settings),
        Cmd::Eval {
            checkpoint,
            dataset,
        } => cmd_eval(checkpoint, dataset),
        Cmd::Episode {
            scenario,
            trace,
            detectors,
            touch_ckpt,
            slip_ckpt,
        } => cmd_episode(
            scenario,
            trace,
            *detectors,
            touch_ckpt.as_deref(),
            slip_ckpt.as_deref(),
            settings,
        ),
        Cmd::Bench { variant, reps } => cmd_bench(variant.as_deref(), *reps, settings),
        Cmd::ExportFrames { input, out, stem } => cmd_export_frames(input, out, stem.as_deref()),
    }
}

fn cmd_gen_data(
    kind: KindArg,
    count: usize,
    out: &Path,
    settings: &Settings,
) -> Result<(), CliError> {
    let entries = match kind {
        KindArg::Touch => {
            generate_touch_dataset(out, count, settings.seed, settings.preset).map_err(sim_err)?
        }
        KindArg::Slip => {
            generate_slip_dataset(out, count, settings.seed, settings.preset).map_err(sim_err)?
        }
    };
    log::info!("wrote {} samples to {}", entries.len(), out.display());
    println!(
        "{}",
        json!({
            "event": "gen-data",
            "kind": kind.name(),
            "count": entries.len(),
            "out": out.display().to_string(),
            "seed": settings.seed,
            "preset": settings.preset.name(),
        })
    );
    Ok(())
}

/// Box-average every sample down to the model's input resolution. A no-op
/// when resolutions already agree; fails when they are incompatible.
fn pool_samples(
    samples: Vec<(Tensor, usize)>,
    image: usize,
) -> Result<Vec<(Tensor, usize)>, CliError> {
    samples
        .into_iter()
        .map(|(t, label)| Ok((pool_to_resolution(&t, image).map_err(model_err)?, label)))
        .collect()
}

#[derive(Serialize)]
struct EpochLine<'a> {
    event: &'static str,
    #[serde(flatten)]
    metrics: &'a EpochMetrics,
}

fn print_epoch(metrics: &EpochMetrics) {
    let line = EpochLine {
        event: "epoch",
        metrics,
    };
    println!("{}", serde_json::to_string(&line).expect("epoch metrics serialize"));
}

fn cmd_train(
    kind: KindArg,
    variant: Option<&str>,
    dataset: &Path,
    ckpt: &Path,
    settings: &Settings,
) -> Result<(), CliError> {
    if kind == KindArg::Touch && variant.is_some() {
        return Err(CliError::new(
            "config-error",
            "--variant applies to slip models only",
        ));
    }
    let train_cfg = TrainConfig {
        epochs: settings.epochs,
        batch: settings.batch,
        lr: settings.lr,
        weight_decay: settings.weight_decay,
        seed: settings.seed,
        ..TrainConfig::default()
    };

    let result = match kind {
        KindArg::Touch => {
            let cfg = match settings.preset {
                Preset::Toy => TouchNetConfig::toy(),
                Preset::Paper => TouchNetConfig::paper(),
            };
            let samples = tactile_sim::dataset::load_samples(dataset).map_err(sim_err)?;
            let data = pool_samples(samples, cfg.image)?;
            let mut model = TouchNet::new(cfg, settings.seed).map_err(model_err)?;
            let result = fit(&mut model, &data, &train_cfg, print_epoch).map_err(model_err)?;
            checkpoint::save_touch(ckpt, &mut model).map_err(model_err)?;
            result
        }
        KindArg::Slip => {
            let cfg = match (settings.preset, variant) {
                (Preset::Toy, None) => SlipNetConfig::toy(),
                (Preset::Toy, Some(name)) => build_variant_toy(name).map_err(model_err)?,
                (Preset::Paper, None) => SlipNetConfig::default(),
                (Preset::Paper, Some(name)) => build_variant(name).map_err(model_err)?,
            };
            let samples = tactile_sim::dataset::load_samples(dataset).map_err(sim_err)?;
            let data = pool_samples(samples, cfg.image)?;
            let mut model = SlipNet::new(cfg, settings.seed).map_err(model_err)?;
            let result = fit(&mut model, &data, &train_cfg, print_epoch).map_err(model_err)?;
            checkpoint::save_slip(ckpt, &mut model).map_err(model_err)?;
            result
        }
    };

    println!(
        "{}",
        json!({
            "event": "trained",
            "kind": kind.name(),
            "checkpoint": ckpt.display().to_string(),
            "epochs": result.epochs.len(),
            "best_epoch": result.best_epoch,
            "best_val_accuracy": result.best_val_accuracy,
        })
    );
    Ok(())
}

fn cmd_eval(ckpt: &Path, dataset: &Path) -> Result<(), CliError> {
    let model = checkpoint::load(ckpt).map_err(model_err)?;
    let samples = tactile_sim::dataset::load_samples(dataset).map_err(sim_err)?;
    let (evaluation, kind) = match model {
        checkpoint::LoadedModel::Touch(touch) => {
            let data = pool_samples(samples, touch.config().image)?;
            (evaluate(&touch, &data).map_err(model_err)?, "touch")
        }
        checkpoint::LoadedModel::Slip(slip) => {
            let data = pool_samples(samples, slip.config().image)?;
            (evaluate(&slip, &data).map_err(model_err)?, "slip")
        }
    };
    println!(
        "{}",
        json!({
            "event": "evaluation",
            "kind": kind,
            "accuracy": evaluation.accuracy,
            "confusion": evaluation.confusion,
            "total": evaluation.total,
        })
    );
    Ok(())
}

fn cmd_episode(
    scenario_name: &str,
    trace_path: &Path,
    detectors: DetectorsArg,
    touch_ckpt: Option<&Path>,
    slip_ckpt: Option<&Path>,
    settings: &Settings,
) -> Result<(), CliError> {
    let scenario = Scenario::from_name(scenario_name).ok_or_else(|| {
        CliError::new(
            "config-error",
            format!("unknown scenario {scenario_name:?}, expected lift or fluid"),
        )
    })?;
    let cfg = ControllerConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let scene = randomized_feasible_scene(&mut rng, &cfg);

    let mut detector_box: Box<dyn Detectors> = match detectors {
        DetectorsArg::Oracle => Box::new(OracleDetectors),
        DetectorsArg::Model => {
            let (touch, slip) = match (touch_ckpt, slip_ckpt) {
                (Some(t), Some(s)) => (t, s),
                _ => {
                    return Err(CliError::new(
                        "config-error",
                        "--detectors model needs --touch-ckpt and --slip-ckpt",
                    ))
                }
            };
            Box::new(ModelDetectors::from_checkpoints(touch, slip, settings.preset).map_err(grasp_err)?)
        }
    };

    let trace = run_episode(scene, detector_box.as_mut(), &cfg, &scenario, settings.preset)
        .map_err(grasp_err)?;
    trace.write_jsonl(trace_path).map_err(grasp_err)?;

    let summary = &trace.summary;
    println!(
        "{}",
        json!({
            "event": "episode",
            "scenario": scenario.name(),
            "trace": trace_path.display().to_string(),
            "outcome": summary.outcome,
            "fail_reason": summary.fail_reason,
            "duration": summary.duration,
            "final_hold_force": summary.final_hold_force,
            "regulating_phases": summary.regulating_phases,
        })
    );
    Ok(())
}

/// Geometry used for timing: tiny spatial extent, every variant's real
/// hidden width, head count, and depth. Latency differences then track the
/// (hidden, heads, blocks) triple rather than pixel count.
fn bench_config(name: &str) -> Result<tactile_models::slip::SlipNetConfig, CliError> {
    let full = build_variant(name).map_err(model_err)?;
    Ok(tactile_models::slip::SlipNetConfig {
        frames: 2,
        image: 16,
        patch: 8,
        ..full
    })
}

fn cmd_bench(variant: Option<&str>, reps: usize, settings: &Settings) -> Result<(), CliError> {
    if reps == 0 {
        return Err(CliError::new("config-error", "--reps must be at least 1"));
    }
    let names: Vec<&str> = match variant {
        Some(name) => vec![name],
        None => Variant::ALL.iter().map(|v| v.name()).collect(),
    };
    for name in names {
        let cfg = bench_config(name)?;
        let full = build_variant(name).map_err(model_err)?;
        let v = Variant::from_name(name).expect("validated by build_variant");
        let model = SlipNet::new(cfg.clone(), settings.seed).map_err(model_err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0xB0);
        let clip = Tensor::random_uniform(
            &[cfg.frames, cfg.channels, cfg.image, cfg.image],
            0.0,
            1.0,
            &mut rng,
        );

        model.forward_logits(&clip).map_err(model_err)?;
        let mut total_ms = 0.0f64;
        let mut min_ms = f64::INFINITY;
        for _ in 0..reps {
            let start = Instant::now();
            model.forward_logits(&clip).map_err(model_err)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            total_ms += ms;
            min_ms = min_ms.min(ms);
        }

        let (hidden, heads, blocks) = v.triple();
        println!(
            "{}",
            json!({
                "event": "bench",
                "variant": name,
                "hidden": hidden,
                "heads": heads,
                "blocks": blocks,
                "parameters_full": expected_parameter_count(&full),
                "reported_accuracy": v.reported_accuracy(),
                "top_reported": v.is_top_reported(),
                "reps": reps,
                "mean_ms": total_ms / reps as f64,
                "min_ms": min_ms,
            })
        );
    }
    Ok(())
}

fn cmd_export_frames(input: &Path, out: &Path, stem: Option<&str>) -> Result<(), CliError> {
    let tensor = format::load_tensor(input)
        .map_err(|e| CliError::new("tensor-error", format!("{}: {e}", input.display())))?;
    let stem = match stem {
        Some(s) => s.to_string(),
        None => input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "frame".to_string()),
    };
    let paths = pgm::export_frames(out, &stem, &tensor).map_err(sim_err)?;
    println!(
        "{}",
        json!({
            "event": "export-frames",
            "count": paths.len(),
            "out": out.display().to_string(),
            "stem": stem,
        })
    );
    Ok(())
}
