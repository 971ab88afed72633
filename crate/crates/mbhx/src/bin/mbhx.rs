//! Batch command-line front end. Every command is a thin wrapper over the
//! library and is deterministic given its flags and input bytes.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O or format error,
//! 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mbhx::compositing::{extract_hand, recompose_onto, ImageBuffer};
use mbhx::error::{Error, Result};
use mbhx::gradcheck::{run_full_suite, FaultInjection};
use mbhx::io::{read_image, write_image};
use mbhx::network::{forward, ModelConfig, NetworkWeights};
use mbhx::synth::{generate_dataset, BackgroundSource, Split};
use mbhx::train::{evaluate, run_ablation, train, write_log, MetricsReport, MetricsRow, TrainConfig};

#[derive(Parser)]
#[command(
    name = "mbhx",
    about = "Motion-blurred hand extraction: synthesize data, train, evaluate, extract",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset split with exact ground truth.
    Synth(SynthArgs),
    /// Train one of the four ablation models.
    Train(TrainArgs),
    /// Predict alpha and foreground for one image and write the
    /// extracted hand.
    Extract(ExtractArgs),
    /// Evaluate a checkpoint's SAD/MSE on one split.
    Eval(EvalArgs),
    /// Train and evaluate all four models; emit the ablation report.
    Ablate(AblateArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    /// Samples to generate; defaults per split to 256 (train) or 64
    /// (val/test).
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    split: String,
    #[arg(long)]
    out: PathBuf,
    /// HxW, both divisible by 16.
    #[arg(long, default_value = "64x64")]
    extent: String,
    /// Also write lossless .tsr mirrors of every buffer.
    #[arg(long)]
    exact: bool,
    /// Directory of RGB PNG photos to crop backgrounds from
    /// (default: procedural backgrounds).
    #[arg(long)]
    backgrounds: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Ablation model: 1 = SE no / PL no, 2 = yes/no, 3 = no/yes,
    /// 4 = yes/yes.
    #[arg(long)]
    model: u8,
    /// Final checkpoint path; the training log goes to <out>.log.jsonl.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 80)]
    epochs: usize,
    #[arg(long, default_value_t = 3.5e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 4e-5)]
    weight_decay: f64,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 80)]
    checkpoint_every: usize,
    #[arg(long, default_value_t = 16)]
    base_channels: usize,
    /// Directory for periodic/best checkpoints and the log.
    #[arg(long)]
    artifacts: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Recompose the extracted hand onto this background too.
    #[arg(long)]
    new_bg: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Also write the single-row report as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 80)]
    epochs: usize,
    #[arg(long, default_value_t = 3.5e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 4e-5)]
    weight_decay: f64,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    base_channels: usize,
    /// Directory for per-model training artifacts.
    #[arg(long)]
    artifacts: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Self-test: corrupt one analytic gradient and require the suite to
    /// catch it.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

fn parse_extent(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s
        .split_once('x')
        .ok_or_else(|| Error::Config(format!("extent must look like 64x64, got {s:?}")))?;
    let parse = |v: &str| {
        v.parse::<usize>()
            .map_err(|_| Error::Config(format!("bad extent component {v:?}")))
    };
    let extent = (parse(h)?, parse(w)?);
    if extent.0 % 16 != 0 || extent.1 % 16 != 0 || extent.0 == 0 || extent.1 == 0 {
        return Err(Error::Config(format!(
            "extent {}x{} must be divisible by 16",
            extent.0, extent.1
        )));
    }
    Ok(extent)
}

fn train_config_from(
    epochs: usize,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    batch_size: usize,
    seed: u64,
    checkpoint_every: usize,
) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        momentum,
        weight_decay,
        epochs,
        batch_size,
        seed,
        checkpoint_every,
    }
}

fn dataset_extent(data: &std::path::Path) -> Result<(usize, usize)> {
    Ok(mbhx::io::Manifest::load(&data.join("manifest.json"))?.extent)
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let split: Split = args.split.parse()?;
    let extent = parse_extent(&args.extent)?;
    let count = args.count.unwrap_or_else(|| split.default_count());
    let background = match args.backgrounds {
        Some(dir) => BackgroundSource::Directory(dir),
        None => BackgroundSource::Procedural,
    };
    let manifest = generate_dataset(
        args.seed,
        count,
        split,
        &args.out,
        extent,
        args.exact,
        &background,
    )?;
    println!(
        "wrote {count} {split} samples at {}x{} under {} ({} splits in manifest)",
        extent.0,
        extent.1,
        args.out.display(),
        manifest.splits.len()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let grid = ModelConfig::for_model(args.model)?;
    let model_config = ModelConfig {
        base_channels: args.base_channels,
        input_extent: dataset_extent(&args.data)?,
        ..grid
    };
    let train_config = train_config_from(
        args.epochs,
        args.lr,
        args.momentum,
        args.weight_decay,
        args.batch_size,
        args.seed,
        args.checkpoint_every,
    );
    let outcome = train(&model_config, &train_config, &args.data, args.artifacts.as_deref())?;
    outcome.final_weights.save(
        &args.out,
        &serde_json::to_value(train_config)?,
        train_config.epochs as u32,
    )?;
    let log_path = args.out.with_extension("log.jsonl");
    write_log(&log_path, &outcome.log)?;
    let last = outcome.log.last().expect("at least one epoch");
    println!(
        "model {} trained for {} epochs: final L_o {:.5}, best val alpha SAD {:.2} at epoch {}",
        args.model, train_config.epochs, last.overall,
        outcome.log[outcome.best_epoch - 1].val_alpha_sad, outcome.best_epoch
    );
    println!("checkpoint: {}", args.out.display());
    println!("log: {}", log_path.display());
    Ok(())
}

fn run_extract(args: ExtractArgs) -> Result<()> {
    let (weights, _, _) = NetworkWeights::load(&args.ckpt)?;
    let image = read_image(&args.input)?;
    if image.channels() != 3 {
        return Err(Error::Format(format!(
            "{} must be an RGB image",
            args.input.display()
        )));
    }
    let (h, w) = image.extent();
    if h % 16 != 0 || w % 16 != 0 {
        return Err(Error::Config(format!(
            "input is {h}x{w}; extents must be divisible by 16 — pad or crop the image first (no silent resampling)"
        )));
    }
    let (alpha_t, fg_t) = forward(&weights, &image.to_tensor())?;
    let alpha = ImageBuffer::from_tensor(&alpha_t)?;
    let foreground = ImageBuffer::from_tensor(&fg_t)?;
    let hand = extract_hand(&alpha, &foreground)?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    write_image(&args.out_dir.join("alpha.png"), &alpha)?;
    write_image(&args.out_dir.join("foreground.png"), &foreground)?;
    write_image(&args.out_dir.join("extracted.png"), &hand)?;
    if let Some(bg_path) = &args.new_bg {
        let new_bg = read_image(bg_path)?;
        if new_bg.extent() != image.extent() {
            return Err(Error::Config(format!(
                "new background is {}x{} but the image is {h}x{w}",
                new_bg.height(),
                new_bg.width()
            )));
        }
        let recomposed = recompose_onto(&alpha, &foreground, &new_bg)?;
        write_image(&args.out_dir.join("recomposed.png"), &recomposed)?;
    }
    println!("wrote predictions under {}", args.out_dir.display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let (weights, _, _) = NetworkWeights::load(&args.ckpt)?;
    let split: Split = args.split.parse()?;
    let metrics = evaluate(&weights, &args.data, split)?;
    let config = weights.config();
    let report = MetricsReport {
        rows: vec![MetricsRow {
            model_id: config.model_id(),
            share_encoder: config.share_encoder,
            use_perceptual: config.use_perceptual,
            metrics,
        }],
    };
    print!("{}", report.render_text());
    let json = report.to_json()?;
    println!("{json}");
    if let Some(path) = &args.out {
        std::fs::write(path, &json).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn run_ablate(args: AblateArgs) -> Result<()> {
    let template = ModelConfig {
        base_channels: args.base_channels,
        input_extent: dataset_extent(&args.data)?,
        ..ModelConfig::default()
    };
    let train_config = train_config_from(
        args.epochs,
        args.lr,
        args.momentum,
        args.weight_decay,
        args.batch_size,
        args.seed,
        args.epochs,
    );
    let report = run_ablation(&template, &train_config, &args.data, args.artifacts.as_deref())?;
    print!("{}", report.render_text());
    std::fs::write(&args.out, report.to_json()?).map_err(|e| Error::io(&args.out, e))?;
    println!("report: {}", args.out.display());
    Ok(())
}

fn run_gradcheck(args: GradcheckArgs) -> Result<()> {
    let fault = args.inject_fault.then_some(FaultInjection::SignFlip);
    let report = run_full_suite(args.seed, fault)?;
    print!("{}", report.render());
    if report.all_passed() {
        println!("all gradient checks passed");
        Ok(())
    } else {
        Err(Error::Numeric("gradient checks failed".into()))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    mbhx::init_thread_pool_from_env();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap handles --help/--version as "errors" with exit 0.
            if err.use_stderr() {
                eprint!("{err}");
                return ExitCode::from(1);
            }
            print!("{err}");
            return ExitCode::SUCCESS;
        }
    };

    let result = match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Train(args) => run_train(args),
        Command::Extract(args) => run_extract(args),
        Command::Eval(args) => run_eval(args),
        Command::Ablate(args) => run_ablate(args),
        Command::Gradcheck(args) => run_gradcheck(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
