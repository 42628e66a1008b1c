//! Command-line interface for the vascular-segmentation stack.
//!
//! Subcommands: `generate` (synthetic dataset), `train` (single fold),
//! `evaluate` (checkpoint on a dataset), `ablate` (γ or component grids),
//! `report` (re-render figures from previously emitted CSVs).
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure. All runs are
//! single-threaded and seeded; identical invocations produce byte-identical
//! output files.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use msa_unet3p::data::{
    collate, generate_sample, kfold_split, DataError, GeneratorConfig, SegmentationSample,
};
use msa_unet3p::metrics::{
    acd_with, asd_with, evaluate_sample, DistanceBackend, Mask, MetricsError, MetricsReport,
};
use msa_unet3p::train::{
    component_ablation, gamma_ablation, sigmoid_probs, train_fold, TrainConfig,
};
use msa_unet3p::NetworkConfig;

use msa_unet3p_cli::checkpoint::{load_checkpoint, save_checkpoint};
use msa_unet3p_cli::dataset::{load_dataset, read_manifest, save_dataset};
use msa_unet3p_cli::qualitative::render_qualitative;
use msa_unet3p_cli::reports::{
    components_table_markdown, gamma_table_markdown, rerender_from_csvs, write_component_outputs,
    write_epoch_log_csv, write_gamma_outputs, write_json, write_sample_metrics_csv,
    write_summary_csv,
};
use msa_unet3p_cli::AppError;

#[derive(Parser)]
#[command(
    name = "msa-unet3p",
    version,
    about = "Vascular segmentation: synthetic data, training, evaluation, ablations, reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic vessel dataset (PNG images + masks).
    Generate(GenerateArgs),
    /// Train one cross-validation fold and write logs, metrics, checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset; optional oracle re-verification.
    Evaluate(EvaluateArgs),
    /// Run the γ or component ablation grid with paired folds.
    Ablate(AblateArgs),
    /// Re-render figures and tables from a previous output directory.
    Report(ReportArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    /// Full-size network (parameter count in the millions).
    Paper,
    /// Small network for desk-scale runs.
    Desk,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum AblateMode {
    Gamma,
    Components,
}

/// Optional JSON configuration file; see docs/config.md for the schema.
/// Each present section must be complete; command-line flags override
/// individual fields afterwards.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    network: Option<NetworkConfig>,
    train: Option<TrainConfig>,
    generator: Option<GeneratorConfig>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Output dataset directory (images/, masks/, manifest.json).
    #[arg(long)]
    out: PathBuf,
    /// Number of samples.
    #[arg(long, default_value_t = 60)]
    count: usize,
    /// Master seed for the generator.
    #[arg(long)]
    seed: Option<u64>,
    /// Square image size in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// Branches per vessel tree.
    #[arg(long)]
    branches: Option<usize>,
    /// Additive Gaussian noise sigma.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// JSON config file; its `generator` section seeds the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

/// Options shared by `train` and `ablate`.
#[derive(Args, Debug)]
struct ModelOpts {
    /// JSON config file (sections: network, train, generator).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Network preset when the config file has no `network` section.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Contrastive weight: 0 disables the contrastive path, 1 enables it.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
    gamma: Option<u8>,
    /// Component toggles, e.g. `spcl=0,cafm=1,msd=1`; unmentioned flags keep
    /// their current value. `--gamma` is applied after `--flags`.
    #[arg(long)]
    flags: Option<String>,
    /// Resize dataset images to this square size (default: manifest size).
    #[arg(long)]
    size: Option<usize>,
    /// Probability threshold for binarizing predictions.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Bit-reproducible single-threaded execution. This is always on; the
    /// flag is accepted for script compatibility.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory produced by `generate` (or matching its layout).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for logs, metrics, and the checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Number of cross-validation folds the dataset is split into.
    #[arg(long, default_value_t = 5)]
    kfold: usize,
    /// Which fold to hold out for validation.
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[command(flatten)]
    model: ModelOpts,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Checkpoint file written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory to evaluate on.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for metrics.csv and summary.csv.
    #[arg(long)]
    out: PathBuf,
    /// Optional config file; its `network` section must match the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Probability threshold for binarizing predictions.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Evaluation batch size.
    #[arg(long, default_value_t = 2)]
    batch_size: usize,
    /// Re-verify fast boundary distances against the brute-force oracle.
    #[arg(long)]
    oracle: bool,
    /// Write three-panel qualitative figures for the N lowest-Dice samples.
    #[arg(long, default_value_t = 0)]
    qualitative: usize,
    /// Resize dataset images to this square size (default: manifest size).
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long, value_enum)]
    mode: AblateMode,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of cross-validation folds per arm.
    #[arg(long, default_value_t = 5)]
    kfold: usize,
    #[command(flatten)]
    model: ModelOpts,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory holding CSVs from a previous `train`/`evaluate`/`ablate` run.
    #[arg(long)]
    from: PathBuf,
    /// Output directory (defaults to --from, overwriting the figures there).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, AppError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| AppError::usage(format!("invalid config {}: {e}", path.display())))
}

/// Parse `--flags spcl=0,cafm=1,msd=1` assignments onto a training config.
fn apply_flag_assignments(cfg: &mut TrainConfig, spec: &str) -> Result<(), AppError> {
    for part in spec.split(',').filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| AppError::usage(format!("--flags entry `{part}` is not name=0|1")))?;
        let on = match value.trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(AppError::usage(format!(
                    "--flags value `{other}` for `{key}` must be 0 or 1"
                )))
            }
        };
        match key.trim() {
            "spcl" => cfg.use_spcl = on,
            "cafm" => cfg.use_cafm = on,
            "msd" => cfg.use_msd = on,
            other => {
                return Err(AppError::usage(format!(
                    "--flags key `{other}` is not one of spcl, cafm, msd"
                )))
            }
        }
    }
    Ok(())
}

/// Resolve effective network + training configs from (config file, preset,
/// CLI overrides), in that precedence order.
fn resolve_configs(opts: &ModelOpts) -> Result<(NetworkConfig, TrainConfig, FileConfig), AppError> {
    let file = load_config(opts.config.as_deref())?;
    let mut net = match (&file.network, opts.preset) {
        (Some(n), _) => *n,
        (None, Some(PresetArg::Paper)) => NetworkConfig::paper(),
        (None, Some(PresetArg::Desk)) | (None, None) => NetworkConfig::desk(),
    };
    let mut train = file.train.clone().unwrap_or_default();
    if let Some(e) = opts.epochs {
        train.epochs = e;
    }
    if let Some(b) = opts.batch_size {
        train.batch_size = b;
    }
    if let Some(lr) = opts.lr {
        train.lr = lr;
    }
    if let Some(s) = opts.seed {
        train.seed = s;
    }
    if let Some(spec) = &opts.flags {
        apply_flag_assignments(&mut train, spec)?;
    }
    match opts.gamma {
        Some(0) => {
            train.use_spcl = false;
            train.loss_weights.gamma = 0.0;
        }
        Some(_) => {
            train.use_spcl = true;
            train.loss_weights.gamma = 1.0;
        }
        None => {}
    }
    net = train.apply_flags(&net);
    net.validate()?;
    train
        .validate()
        .map_err(|e| AppError::usage(format!("invalid training config: {e}")))?;
    Ok((net, train, file))
}

/// Dataset image size: `--size` override, else the generator manifest.
fn resolve_size(data: &Path, size_flag: Option<usize>) -> Result<usize, AppError> {
    if let Some(s) = size_flag {
        return Ok(s);
    }
    match read_manifest(data)? {
        Some(m) => Ok(m.generator.image_size),
        None => Err(AppError::usage(format!(
            "{} has no manifest.json; pass --size to set the image size",
            data.display()
        ))),
    }
}

/// Early shape check so mismatches fail with named fields instead of deep
/// inside a forward pass.
fn check_network_vs_size(net: &NetworkConfig, size: usize) -> Result<(), AppError> {
    let factor = net.scale_factor();
    if size % factor != 0 {
        return Err(AppError::usage(format!(
            "image size {size} is not divisible by scale factor {factor} (network depth {})",
            net.depth
        )));
    }
    if size / factor < 2 {
        return Err(AppError::usage(format!(
            "image size {size} is too small for network depth {}: deepest level would be {}x{}",
            net.depth,
            size / factor,
            size / factor
        )));
    }
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<(), AppError> {
    let file = load_config(args.config.as_deref())?;
    let mut gen = file.generator.unwrap_or_default();
    if let Some(s) = args.seed {
        gen.seed = s;
    }
    if let Some(s) = args.size {
        gen.image_size = s;
    }
    if let Some(b) = args.branches {
        gen.n_branches = b;
    }
    if let Some(n) = args.noise_sigma {
        gen.noise_sigma = n;
    }
    gen.validate()
        .map_err(|e| AppError::usage(format!("invalid generator config: {e}")))?;
    if args.count == 0 {
        return Err(AppError::usage("--count must be positive".to_string()));
    }
    if args.out.is_dir() && fs::read_dir(&args.out)?.next().is_some() && !args.force {
        return Err(AppError::runtime(format!(
            "output directory {} is not empty; pass --force to overwrite",
            args.out.display()
        )));
    }
    let mut samples = Vec::with_capacity(args.count);
    for i in 0..args.count {
        samples.push(generate_sample(&gen, i)?);
    }
    save_dataset(&args.out, &samples, &gen)?;
    let mean_fg: f64 =
        samples.iter().map(|s| s.foreground_fraction()).sum::<f64>() / samples.len() as f64;
    println!(
        "wrote {} samples ({}x{}) to {} (mean foreground fraction {:.4})",
        samples.len(),
        gen.image_size,
        gen.image_size,
        args.out.display(),
        mean_fg
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), AppError> {
    let (net, train_cfg, _file) = resolve_configs(&args.model)?;
    let size = resolve_size(&args.data, args.model.size)?;
    check_network_vs_size(&net, size)?;
    let samples = load_dataset(&args.data, size)?;
    if args.fold >= args.kfold {
        return Err(AppError::usage(format!(
            "--fold {} out of range for --kfold {}",
            args.fold, args.kfold
        )));
    }
    let folds = kfold_split(samples.len(), args.kfold, train_cfg.seed).map_err(|e| match e {
        DataError::BadFolds { .. } => AppError::usage(e.to_string()),
        other => AppError::from(other),
    })?;
    let (train_idx, val_idx) = &folds[args.fold];
    let train_set: Vec<&SegmentationSample> = train_idx.iter().map(|&i| &samples[i]).collect();
    let val_set: Vec<&SegmentationSample> = val_idx.iter().map(|&i| &samples[i]).collect();
    println!(
        "training fold {}/{}: {} train / {} val samples at {}x{}, {} epochs",
        args.fold,
        args.kfold,
        train_set.len(),
        val_set.len(),
        size,
        size,
        train_cfg.epochs
    );
    let mut outcome = train_fold(&net, &train_cfg, &train_set, &val_set)?;
    fs::create_dir_all(&args.out)?;
    let generator = read_manifest(&args.data)?.map(|m| m.generator);
    write_json(
        &args.out.join("config.json"),
        &FileConfig {
            network: Some(net),
            train: Some(train_cfg.clone()),
            generator,
        },
    )?;
    write_epoch_log_csv(&args.out.join("log.csv"), &outcome.record.epoch_logs)?;
    write_sample_metrics_csv(&args.out.join("metrics.csv"), &outcome.record.val_report)?;
    write_summary_csv(&args.out.join("summary.csv"), &outcome.record.val_report.aggregate())?;
    let ckpt = args.out.join("checkpoint.bin");
    save_checkpoint(&ckpt, &mut outcome.model, train_cfg.seed)?;
    outcome.record.checkpoint_path = Some("checkpoint.bin".to_string());
    write_json(&args.out.join("record.json"), &outcome.record)?;
    let agg = outcome.record.val_report.aggregate();
    println!(
        "best epoch {} | val dice {:.4} ± {:.4} | recall {:.4} | f1 {:.4}",
        outcome.record.best_epoch, agg.dice.mean, agg.dice.std, agg.recall.mean, agg.f1.mean
    );
    match (agg.asd.count, agg.acd.count) {
        (0, _) | (_, 0) => println!("boundary distances undefined on some samples; see metrics.csv"),
        _ => println!("val asd {:.4} | acd {:.4} (pixels)", agg.asd.mean, agg.acd.mean),
    }
    println!("outputs in {}", args.out.display());
    Ok(())
}

/// Compare a fast and brute-force distance; `None` means both undefined.
fn oracle_delta(
    fast: Result<f64, MetricsError>,
    brute: Result<f64, MetricsError>,
) -> Result<Option<f64>, AppError> {
    match (fast, brute) {
        (Ok(a), Ok(b)) => Ok(Some((a - b).abs())),
        (Err(MetricsError::UndefinedDistance { .. }), Err(MetricsError::UndefinedDistance { .. })) => {
            Ok(None)
        }
        (a, b) => Err(AppError::runtime(format!(
            "oracle disagreement on definedness: fast={a:?} brute={b:?}"
        ))),
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), AppError> {
    let (mut model, manifest) = load_checkpoint(&args.checkpoint)?;
    if let Some(cfg_path) = &args.config {
        let file = load_config(Some(cfg_path))?;
        if let Some(net) = file.network {
            let mismatches = network_mismatches(&net, &manifest.network);
            if !mismatches.is_empty() {
                return Err(AppError::runtime(format!(
                    "checkpoint {} disagrees with config {} on: {}",
                    args.checkpoint.display(),
                    cfg_path.display(),
                    mismatches.join(", ")
                )));
            }
        }
    }
    let size = resolve_size(&args.data, args.size)?;
    let factor = manifest.network.scale_factor();
    if size % factor != 0 {
        return Err(AppError::runtime(format!(
            "dataset image size {size} is not divisible by the checkpoint's scale factor {factor} \
             (network depth {})",
            manifest.network.depth
        )));
    }
    let samples = load_dataset(&args.data, size)?;
    if samples.is_empty() {
        return Err(AppError::runtime(format!(
            "no samples found in {}",
            args.data.display()
        )));
    }
    let batch = args.batch_size.max(1);
    let mut report = MetricsReport::default();
    let mut preds: Vec<Mask> = Vec::with_capacity(samples.len());
    let refs: Vec<&SegmentationSample> = samples.iter().collect();
    let mut index = 0usize;
    for chunk in refs.chunks(batch) {
        let (images, _) = collate(chunk);
        let out = model
            .forward(&images, false)
            .map_err(|e| AppError::runtime(format!("forward pass failed: {e}")))?;
        let probs = sigmoid_probs(&out.logits);
        for (b, s) in chunk.iter().enumerate() {
            let pred = Mask::from_probs(&probs, b, args.threshold);
            report.push(evaluate_sample(index, &pred, &s.mask)?);
            preds.push(pred);
            index += 1;
        }
    }
    if args.oracle {
        let mut max_delta = 0.0f64;
        let mut checked = 0usize;
        for (i, (pred, s)) in preds.iter().zip(&samples).enumerate() {
            for (name, fast, brute) in [
                (
                    "asd",
                    asd_with(pred, &s.mask, DistanceBackend::Fast),
                    asd_with(pred, &s.mask, DistanceBackend::BruteForce),
                ),
                (
                    "acd",
                    acd_with(pred, &s.mask, DistanceBackend::Fast),
                    acd_with(pred, &s.mask, DistanceBackend::BruteForce),
                ),
            ] {
                if let Some(delta) = oracle_delta(fast, brute)? {
                    checked += 1;
                    max_delta = max_delta.max(delta);
                    if delta > 1e-9 {
                        return Err(AppError::runtime(format!(
                            "oracle check failed: sample {} ({}) {name} differs by {delta:e} \
                             between fast and brute-force backends",
                            i, s.id
                        )));
                    }
                }
            }
        }
        println!("oracle check passed: {checked} distances verified, max |Δ| = {max_delta:e}");
    }
    fs::create_dir_all(&args.out)?;
    write_sample_metrics_csv(&args.out.join("metrics.csv"), &report)?;
    write_summary_csv(&args.out.join("summary.csv"), &report.aggregate())?;
    if args.qualitative > 0 {
        let dir = args.out.join("qualitative");
        fs::create_dir_all(&dir)?;
        let mut order: Vec<usize> = (0..report.samples.len()).collect();
        order.sort_by(|&a, &b| {
            report.samples[a]
                .dice
                .partial_cmp(&report.samples[b].dice)
                .unwrap()
                .then(a.cmp(&b))
        });
        for &i in order.iter().take(args.qualitative) {
            let s = &samples[i];
            let (panel, _) = render_qualitative(&s.image, &s.mask, &preds[i], 5)?;
            panel.save(dir.join(format!("{}.png", s.id)))?;
        }
        println!(
            "wrote {} qualitative panels to {}",
            args.qualitative.min(order.len()),
            dir.display()
        );
    }
    let agg = report.aggregate();
    println!(
        "evaluated {} samples | dice {:.4} ± {:.4} | recall {:.4} | f1 {:.4}",
        report.samples.len(),
        agg.dice.mean,
        agg.dice.std,
        agg.recall.mean,
        agg.f1.mean
    );
    if agg.asd.count > 0 {
        println!(
            "asd {:.4} ± {:.4} | acd {:.4} ± {:.4} over {} samples with defined boundaries",
            agg.asd.mean, agg.asd.std, agg.acd.mean, agg.acd.std, agg.asd.count
        );
    }
    println!("outputs in {}", args.out.display());
    Ok(())
}

/// Field-by-field comparison for mismatch errors that name what differs.
fn network_mismatches(a: &NetworkConfig, b: &NetworkConfig) -> Vec<String> {
    let mut out = Vec::new();
    let mut cmp = |name: &str, x: String, y: String| {
        if x != y {
            out.push(format!("{name} ({x} vs {y})"));
        }
    };
    cmp("depth", a.depth.to_string(), b.depth.to_string());
    cmp("base_channels", a.base_channels.to_string(), b.base_channels.to_string());
    cmp(
        "decoder_channels",
        a.decoder_channels.to_string(),
        b.decoder_channels.to_string(),
    );
    cmp("embedding_dim", a.embedding_dim.to_string(), b.embedding_dim.to_string());
    cmp("se_reduction", a.se_reduction.to_string(), b.se_reduction.to_string());
    cmp("input_channels", a.input_channels.to_string(), b.input_channels.to_string());
    cmp("use_msd", a.use_msd.to_string(), b.use_msd.to_string());
    cmp("use_cafm", a.use_cafm.to_string(), b.use_cafm.to_string());
    out
}

fn cmd_ablate(args: AblateArgs) -> Result<(), AppError> {
    let (net, train_cfg, _file) = resolve_configs(&args.model)?;
    let size = resolve_size(&args.data, args.model.size)?;
    check_network_vs_size(&net, size)?;
    let samples = load_dataset(&args.data, size)?;
    fs::create_dir_all(&args.out)?;
    match args.mode {
        AblateMode::Gamma => {
            println!(
                "γ ablation: {} samples, {} folds, {} epochs per arm",
                samples.len(),
                args.kfold,
                train_cfg.epochs
            );
            let ablation = gamma_ablation(&net, &train_cfg, &samples, args.kfold)?;
            write_gamma_outputs(&args.out, &ablation)?;
            print!("{}", gamma_table_markdown(&ablation.rows));
        }
        AblateMode::Components => {
            println!(
                "component ablation: {} samples, {} folds, {} epochs, 8 configurations",
                samples.len(),
                args.kfold,
                train_cfg.epochs
            );
            let ablation = component_ablation(&net, &train_cfg, &samples, args.kfold)?;
            write_component_outputs(&args.out, &ablation.rows)?;
            print!("{}", components_table_markdown(&ablation.rows));
        }
    }
    println!("outputs in {}", args.out.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), AppError> {
    let out = args.out.clone().unwrap_or_else(|| args.from.clone());
    fs::create_dir_all(&out)?;
    let mut wrote_any = false;
    let gamma_record = args.from.join("ablation_record.json");
    if gamma_record.is_file() {
        let text = fs::read_to_string(&gamma_record)?;
        let ablation: msa_unet3p::train::GammaAblation = serde_json::from_str(&text)
            .map_err(|e| AppError::runtime(format!("parse {}: {e}", gamma_record.display())))?;
        write_gamma_outputs(&out, &ablation)?;
        print!("{}", gamma_table_markdown(&ablation.rows));
        wrote_any = true;
    }
    let comp_record = args.from.join("components_record.json");
    if comp_record.is_file() {
        let text = fs::read_to_string(&comp_record)?;
        let rows: Vec<msa_unet3p::train::AblationRow> = serde_json::from_str(&text)
            .map_err(|e| AppError::runtime(format!("parse {}: {e}", comp_record.display())))?;
        write_component_outputs(&out, &rows)?;
        print!("{}", components_table_markdown(&rows));
        wrote_any = true;
    }
    if !wrote_any {
        // No full records: fall back to re-rendering figures from their CSVs.
        rerender_from_csvs(&args.from, &out)?;
    }
    println!("report written to {}", out.display());
    Ok(())
}
