//! Command-line surface for the imputation pipeline: mask generation,
//! training, imputation and cross-validated evaluation.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//! failure. Every command writes a run manifest before doing real work and
//! finalizes it with the outcome, so failed runs are never silent.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flowimpute::checkpoint::CheckpointChain;
use flowimpute::dataset::{
    generate_mcar_mask, kfold_split, load_csv, load_mask_csv, write_mask_csv, DataTable,
    InitMethod, RngStream,
};
use flowimpute::imputer::{completed_to_csv, impute_chain};
use flowimpute::trainer::{train, ScheduleMode, TrainConfig};
use flowimpute::{Error, ErrorKind};

use manifest::RunManifest;

// Stream ids used by the command layer; the trainer owns ids 2 through 7.
const STREAM_MASK: u64 = 1;
const STREAM_FOLDS: u64 = 8;
const STREAM_FOLD_BASE: u64 = 16;

#[derive(Parser)]
#[command(
    name = "flowimpute",
    version,
    about = "Missing-data imputation with an invertible coupling-layer flow"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a missing-completely-at-random mask for a CSV file.
    Genmask(GenmaskArgs),
    /// Train a model on incomplete data and save its checkpoint chain.
    Train(TrainArgs),
    /// Impute a CSV file using a saved checkpoint chain.
    Impute(ImputeArgs),
    /// Cross-validated evaluation on fully observed ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenmaskArgs {
    /// Input CSV whose shape the mask must match.
    #[arg(long)]
    input: PathBuf,
    /// Probability that each entry is missing.
    #[arg(long)]
    rate: f64,
    #[arg(long)]
    seed: u64,
    /// Guarantee at least one observed entry per row.
    #[arg(long)]
    guard: bool,
    /// Treat the first line of the input as a header.
    #[arg(long)]
    header: bool,
    /// Where to write the 0/1 mask CSV.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    /// Explicit 0/1 mask CSV (for complete inputs).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Synthesize an MCAR mask at this rate (for complete inputs).
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long)]
    seed: u64,
    /// `power-of-2` or `every-epoch`.
    #[arg(long, default_value = "power-of-2")]
    schedule: String,
    /// `marginal` or `nearest`.
    #[arg(long, default_value = "marginal")]
    init: String,
    #[arg(long, default_value_t = 6)]
    layers: usize,
    /// Hidden width of the coupling networks (default: max(n, 8)).
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    header: bool,
    #[arg(long)]
    outdir: PathBuf,
}

#[derive(Args)]
struct ImputeArgs {
    #[arg(long)]
    input: PathBuf,
    /// Directory holding a checkpoint chain (manifest plus array files).
    #[arg(long)]
    chain: PathBuf,
    #[arg(long)]
    header: bool,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Fully observed ground-truth CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    rate: f64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value = "power-of-2")]
    schedule: String,
    #[arg(long, default_value = "marginal")]
    init: String,
    #[arg(long, default_value_t = 6)]
    layers: usize,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    header: bool,
    #[arg(long)]
    outdir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as ClapKind;
            if matches!(e.kind(), ClapKind::DisplayHelp | ClapKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Genmask(args) => cmd_genmask(args),
        Command::Train(args) => cmd_train(args),
        Command::Impute(args) => cmd_impute(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            })
        }
    }
}

fn with_manifest(
    manifest: RunManifest,
    body: impl FnOnce(&mut RunManifest) -> Result<(), Error>,
) -> Result<(), Error> {
    let mut manifest = manifest;
    manifest.begin()?;
    match body(&mut manifest) {
        Ok(()) => {
            manifest.finish_ok()?;
            Ok(())
        }
        Err(e) => {
            manifest.finish_failed(&e.to_string());
            Err(e)
        }
    }
}

fn cmd_genmask(args: GenmaskArgs) -> Result<(), Error> {
    let mut manifest = RunManifest::new(
        PathBuf::from(format!("{}.manifest", args.output.display())),
        "genmask",
    );
    manifest.config("rate", args.rate);
    manifest.config("seed", args.seed);
    manifest.config("guard", args.guard);
    manifest.config("header", args.header);
    manifest.input(&args.input)?;
    manifest.output(&args.output);
    with_manifest(manifest, |_| {
        let table = load_csv(&args.input, args.header)?;
        let mut rng = RngStream::with_stream(args.seed, STREAM_MASK);
        let mask = generate_mcar_mask(
            (table.nrows(), table.ncols()),
            args.rate,
            &mut rng,
            args.guard,
        )?;
        write_mask_csv(&args.output, &mask)?;
        let realized = mask.iter().filter(|&&m| m).count() as f64 / mask.len().max(1) as f64;
        println!(
            "mask {}x{} written to {}; realized missing fraction {realized:.4}",
            mask.nrows(),
            mask.ncols(),
            args.output.display()
        );
        Ok(())
    })
}

/// Resolve the training table from the input file and the mask flags.
fn resolve_table(
    input: &Path,
    header: bool,
    mask: Option<&Path>,
    rate: Option<f64>,
    seed: u64,
) -> Result<DataTable, Error> {
    if mask.is_some() && rate.is_some() {
        return Err(Error::InvalidArgument(
            "pass either --mask or --rate, not both".to_string(),
        ));
    }
    let table = load_csv(input, header)?;
    if table.n_missing() > 0 {
        if mask.is_some() || rate.is_some() {
            return Err(Error::InvalidArgument(
                "the input already has missing cells; --mask/--rate only apply to complete inputs"
                    .to_string(),
            ));
        }
        return Ok(table);
    }
    match (mask, rate) {
        (Some(path), None) => {
            let m = load_mask_csv(path, (table.nrows(), table.ncols()))?;
            table.with_mask(m)
        }
        (None, Some(rate)) => {
            let mut rng = RngStream::with_stream(seed, STREAM_MASK);
            let m = generate_mcar_mask((table.nrows(), table.ncols()), rate, &mut rng, false)?;
            table.with_mask(m)
        }
        (None, None) => Err(Error::InvalidArgument(
            "the input is fully observed; pass --mask or --rate to define missingness".to_string(),
        )),
        (Some(_), Some(_)) => unreachable!("rejected above"),
    }
}

#[allow(clippy::too_many_arguments)]
fn build_config(
    epochs: usize,
    batch: usize,
    lr: f64,
    lambda: f64,
    seed: u64,
    schedule: &str,
    init: &str,
    layers: usize,
    hidden: Option<usize>,
) -> Result<TrainConfig, Error> {
    Ok(TrainConfig {
        learning_rate: lr,
        batch_size: batch,
        epochs,
        lambda,
        seed,
        schedule_mode: ScheduleMode::parse(schedule)?,
        initializer: InitMethod::parse(init)?,
        coupling_layers: layers,
        hidden_width: hidden,
        ..TrainConfig::default()
    })
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let config = build_config(
        args.epochs,
        args.batch,
        args.lr,
        args.lambda,
        args.seed,
        &args.schedule,
        &args.init,
        args.layers,
        args.hidden,
    )?;
    let mut manifest = RunManifest::new(args.outdir.join("run_manifest.txt"), "train");
    for (k, v) in config.echo(config.learning_rate) {
        manifest.config(&k, v);
    }
    manifest.config("header", args.header);
    if let Some(rate) = args.rate {
        manifest.config("rate", rate);
    }
    manifest.input(&args.input)?;
    if let Some(mask) = &args.mask {
        manifest.input(mask)?;
    }
    let chain_dir = args.outdir.join("chain");
    let log_path = args.outdir.join("training_log.csv");
    manifest.output(&chain_dir);
    manifest.output(&log_path);
    with_manifest(manifest, |_| {
        let table = resolve_table(
            &args.input,
            args.header,
            args.mask.as_deref(),
            args.rate,
            args.seed,
        )?;
        let (chain, log) = train(&table, &config)?;
        chain.save(&chain_dir)?;
        std::fs::write(&log_path, log.to_csv())?;
        let schedule_epochs: Vec<String> = chain
            .snapshots
            .iter()
            .map(|s| s.epoch.to_string())
            .collect();
        println!(
            "trained {} epochs on {}x{} ({} missing); {} snapshots at epochs [{}]",
            args.epochs,
            table.nrows(),
            table.ncols(),
            table.n_missing(),
            chain.len(),
            schedule_epochs.join(",")
        );
        match log.converged_epoch {
            Some(e) => println!("losses stabilized at epoch {e}"),
            None => println!("losses had not stabilized by the final epoch"),
        }
        Ok(())
    })
}

/// Raw cell tokens of a CSV file, echoed back verbatim for observed cells.
fn read_tokens(
    path: &Path,
    header: bool,
) -> Result<(Option<Vec<String>>, Vec<Vec<String>>), Error> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .from_path(path)?;
    let head = if header {
        Some(reader.headers()?.iter().map(|s| s.to_string()).collect())
    } else {
        None
    };
    let mut rows = Vec::new();
    for record in reader.records() {
        rows.push(record?.iter().map(|s| s.to_string()).collect());
    }
    Ok((head, rows))
}

fn cmd_impute(args: ImputeArgs) -> Result<(), Error> {
    let mut manifest = RunManifest::new(
        PathBuf::from(format!("{}.manifest", args.output.display())),
        "impute",
    );
    manifest.config("header", args.header);
    manifest.config("chain", args.chain.display());
    manifest.input(&args.input)?;
    manifest.output(&args.output);
    with_manifest(manifest, |_| {
        let chain = CheckpointChain::load(&args.chain)?;
        let table = load_csv(&args.input, args.header)?;
        let result = impute_chain(&table, &chain)?;
        let (head, tokens) = read_tokens(&args.input, args.header)?;
        let csv = completed_to_csv(&result.completed, result.mask(), &tokens, head.as_deref())?;
        std::fs::write(&args.output, csv)?;
        println!(
            "imputed {} entries into {}",
            result.n_imputed,
            args.output.display()
        );
        Ok(())
    })
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    if args.folds < 2 {
        return Err(Error::InvalidArgument(
            "evaluation needs at least 2 folds".to_string(),
        ));
    }
    let config_template = build_config(
        args.epochs,
        args.batch,
        args.lr,
        args.lambda,
        args.seed,
        &args.schedule,
        &args.init,
        args.layers,
        args.hidden,
    )?;
    let mut manifest = RunManifest::new(args.outdir.join("run_manifest.txt"), "eval");
    for (k, v) in config_template.echo(config_template.learning_rate) {
        manifest.config(&k, v);
    }
    manifest.config("rate", args.rate);
    manifest.config("folds", args.folds);
    manifest.config("header", args.header);
    manifest.input(&args.input)?;
    let metrics_path = args.outdir.join("metrics.csv");
    manifest.output(&metrics_path);
    with_manifest(manifest, |_| {
        let truth = load_csv(&args.input, args.header)?;
        if truth.n_missing() > 0 {
            return Err(Error::InvalidArgument(
                "evaluation input must be fully observed ground truth".to_string(),
            ));
        }
        let dataset_name = args
            .input
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "dataset".to_string());

        let mut fold_rng = RngStream::with_stream(args.seed, STREAM_FOLDS);
        let folds = kfold_split(truth.nrows(), args.folds, &mut fold_rng)?;

        let mut lines = vec![
            "dataset,missing_rate,fold,rmse_scaled,rmse_raw,n_imputed,rmse_scaled_std,rmse_raw_std"
                .to_string(),
        ];
        let mut scaled_all = Vec::new();
        let mut raw_all = Vec::new();
        let mut imputed_total = 0usize;
        for (f, test_rows) in folds.iter().enumerate() {
            let train_rows: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, rows)| rows.iter().copied())
                .collect();

            // Corrupt both splits at the evaluation rate, each from its own
            // stream; training then sees the deployment setting where the
            // training set itself has missing data.
            let train_truth = truth.select_rows(&train_rows)?;
            let test_truth = truth.select_rows(test_rows)?;
            let mut train_mask_rng =
                RngStream::with_stream(args.seed, STREAM_FOLD_BASE + 2 * f as u64);
            let train_mask = generate_mcar_mask(
                (train_truth.nrows(), train_truth.ncols()),
                args.rate,
                &mut train_mask_rng,
                true,
            )?;
            let mut test_mask_rng =
                RngStream::with_stream(args.seed, STREAM_FOLD_BASE + 2 * f as u64 + 1);
            let test_mask = generate_mcar_mask(
                (test_truth.nrows(), test_truth.ncols()),
                args.rate,
                &mut test_mask_rng,
                true,
            )?;

            let train_table = train_truth.with_mask(train_mask)?;
            let test_table = test_truth.clone().with_mask(test_mask)?;

            let (chain, log) = train(&train_table, &config_template)?;
            let fold_dir = args.outdir.join(format!("fold_{f}"));
            chain.save(&fold_dir.join("chain"))?;
            std::fs::write(fold_dir.join("training_log.csv"), log.to_csv())?;

            let mut result = impute_chain(&test_table, &chain)?;
            result.score_against(test_truth.values())?;
            let rmse_scaled = result.rmse_scaled.expect("scored");
            let rmse_raw = result.rmse_raw.expect("scored");
            lines.push(format!(
                "{dataset_name},{},{f},{rmse_scaled},{rmse_raw},{},,",
                args.rate, result.n_imputed
            ));
            scaled_all.push(rmse_scaled);
            raw_all.push(rmse_raw);
            imputed_total += result.n_imputed;
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let std = |v: &[f64]| {
            if v.len() < 2 {
                0.0
            } else {
                let m = mean(v);
                (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
            }
        };
        lines.push(format!(
            "{dataset_name},{},mean,{},{},{imputed_total},{},{}",
            args.rate,
            mean(&scaled_all),
            mean(&raw_all),
            std(&scaled_all),
            std(&raw_all)
        ));
        std::fs::create_dir_all(&args.outdir)?;
        std::fs::write(&metrics_path, lines.join("\n") + "\n")?;
        println!(
            "evaluated {} folds at missing rate {}: scaled rmse {:.4} ± {:.4}",
            args.folds,
            args.rate,
            mean(&scaled_all),
            std(&scaled_all)
        );
        Ok(())
    })
}
