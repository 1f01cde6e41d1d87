//! Command-line front end: evaluation reports, bootstrap baselines, jet
//! image grids, toy data generation, format conversion, and pairwise
//! transport distances.
//!
//! All commands print machine-readable JSON on stdout and diagnostics on
//! stderr. Exit codes: 0 success, 2 input/validation failure, 3
//! numerical/solver failure, 4 i/o failure. `CLOUDJUDGE_THREADS` caps
//! the worker pool; output is independent of the cap.

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

use cloudjudge::covmmd::CovMmdProtocol;
use cloudjudge::efp::EfpConfig;
use cloudjudge::emd::{emd, EmdConfig, EmdError};
use cloudjudge::eval::{
    baseline_to_json, evaluate, report_to_json, value_to_json, EvalConfig, EvalError,
};
use cloudjudge::frechet::FrechetError;
use cloudjudge::io;
use cloudjudge::kinematics::{discretize, JetImage};
use cloudjudge::model::CloudSample;
use cloudjudge::toygen::{generate, ToyConfig};
use cloudjudge::w1::{baseline, W1Error, W1Protocol};

#[derive(Parser)]
#[command(name = "cloudjudge", version, about = "Score generative particle-cloud samples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full metric suite over a real and a generated sample.
    Evaluate(EvaluateArgs),
    /// Bootstrap real-vs-real baseline for the three W1 scores.
    Baseline(BaselineArgs),
    /// Render one jet (or the sample mean) as a CSV pixel grid.
    Render(RenderArgs),
    /// Generate a seeded toy sample.
    Toygen(ToygenArgs),
    /// Convert between the binary cloud format and CSV.
    Convert(ConvertArgs),
    /// Energy mover's distance between two clouds.
    Emd(EmdArgs),
}

#[derive(Args)]
struct ProtocolArgs {
    /// Seed for every protocol stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clouds drawn per W1 batch.
    #[arg(long = "w1-batch", default_value_t = 10_000)]
    w1_batch: usize,
    /// Number of W1 batches.
    #[arg(long = "w1-nbatches", default_value_t = 5)]
    w1_nbatches: usize,
    /// Clouds drawn per coverage/MMD batch.
    #[arg(long = "cov-subsample", default_value_t = 100)]
    cov_subsample: usize,
    /// Number of coverage/MMD batches.
    #[arg(long = "cov-nbatches", default_value_t = 10)]
    cov_nbatches: usize,
    /// Angular normalization radius of the transport distance.
    #[arg(long = "emd-radius", default_value_t = 0.8)]
    emd_radius: f64,
    /// Angular exponent of the energy-flow polynomials.
    #[arg(long = "efp-beta", default_value_t = 1.0)]
    efp_beta: f64,
    /// Clouds drawn per side for the Fréchet score.
    #[arg(long = "frechet-n", default_value_t = 50_000)]
    frechet_n: usize,
}

impl ProtocolArgs {
    fn to_eval_config(&self) -> EvalConfig {
        EvalConfig {
            w1: W1Protocol {
                batch_size: self.w1_batch,
                n_batches: self.w1_nbatches,
                rng_seed: self.seed,
            },
            cov: CovMmdProtocol {
                subsample: self.cov_subsample,
                n_batches: self.cov_nbatches,
                rng_seed: self.seed,
            },
            emd: EmdConfig { radius: self.emd_radius },
            efp: EfpConfig { beta: self.efp_beta, normalize_z: true },
            frechet_samples: self.frechet_n,
            frechet_enabled: true,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// Reference sample (binary cloud file).
    #[arg(long)]
    real: PathBuf,
    /// Generated sample (binary cloud file).
    #[arg(long)]
    gen: PathBuf,
    /// Activation file for the reference sample.
    #[arg(long = "acts-real")]
    acts_real: Option<PathBuf>,
    /// Activation file for the generated sample.
    #[arg(long = "acts-gen")]
    acts_gen: Option<PathBuf>,
    /// Skip the Fréchet score entirely.
    #[arg(long = "no-fpnd", default_value_t = false)]
    no_fpnd: bool,
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    /// Sample to bootstrap (binary cloud file).
    #[arg(long)]
    real: PathBuf,
    #[command(flatten)]
    protocol: ProtocolArgs,
    /// Also write the baseline JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    /// Sample to render (binary cloud file).
    #[arg(long)]
    input: PathBuf,
    /// Jet index, or "mean" for the pixel-wise sample mean.
    #[arg(long, default_value = "mean")]
    jet: String,
    #[arg(long, default_value_t = 24)]
    resolution: usize,
    #[arg(long = "half-width", default_value_t = 0.4)]
    half_width: f64,
    /// Output CSV grid path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ToygenArgs {
    /// Number of jets.
    #[arg(long = "n")]
    n_jets: usize,
    #[arg(long, default_value_t = 30)]
    max_particles: usize,
    #[arg(long = "split-prob", default_value_t = 0.8)]
    split_prob: f64,
    #[arg(long = "angle-scale", default_value_t = 0.1)]
    angle_scale: f64,
    #[arg(long, default_value_t = 1)]
    prongs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output binary cloud file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConvertArgs {
    /// Input file (binary cloud format or CSV, detected by content).
    #[arg(long)]
    input: PathBuf,
    /// Output file; the opposite format of the input.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmdArgs {
    /// First cloud file.
    #[arg(long)]
    a: PathBuf,
    /// Second cloud file.
    #[arg(long)]
    b: PathBuf,
    /// Jet index into the first file.
    #[arg(long = "index-a", default_value_t = 0)]
    index_a: usize,
    /// Jet index into the second file.
    #[arg(long = "index-b", default_value_t = 0)]
    index_b: usize,
    #[arg(long = "emd-radius", default_value_t = 0.8)]
    emd_radius: f64,
    /// Write the transport plan as CSV here.
    #[arg(long = "plan-out")]
    plan_out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Toy(#[from] cloudjudge::toygen::ToyError),
    #[error(transparent)]
    Emd(#[from] EmdError),
    #[error(transparent)]
    W1(#[from] W1Error),
    #[error("{0}")]
    Input(String),
}

impl CliError {
    /// 2 input/validation, 3 numerical/solver, 4 i/o.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(err) => match err {
                io::IoError::Io { source, .. } if source.kind() != std::io::ErrorKind::NotFound => {
                    4
                }
                _ => 2,
            },
            CliError::Input(_) | CliError::Toy(_) => 2,
            CliError::Emd(_) => 3,
            CliError::W1(w) => match w {
                W1Error::Efp(_) | W1Error::EmptySeries => 2,
                W1Error::DeterminismViolation => 3,
            },
            CliError::Eval(err) => match err {
                EvalError::W1(W1Error::DeterminismViolation) => 3,
                EvalError::W1(_) => 2,
                EvalError::Emd(_) => 3,
                EvalError::Frechet(f) => match f {
                    FrechetError::NumericalFailure { .. } => 3,
                    _ => 2,
                },
                EvalError::Efp(_) => 2,
                EvalError::Model(_) => 2,
            },
        }
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("CLOUDJUDGE_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Baseline(args) => cmd_baseline(args),
        Command::Render(args) => cmd_render(args),
        Command::Toygen(args) => cmd_toygen(args),
        Command::Convert(args) => cmd_convert(args),
        Command::Emd(args) => cmd_emd(args),
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let real = io::read_clouds(&args.real)?;
    let gen = io::read_clouds(&args.gen)?;
    let acts = match (&args.acts_real, &args.acts_gen) {
        (Some(r), Some(g)) => Some((io::read_activations(r)?, io::read_activations(g)?)),
        (None, None) => None,
        _ => {
            return Err(CliError::Input(
                "--acts-real and --acts-gen must be given together".to_string(),
            ))
        }
    };
    let mut cfg = args.protocol.to_eval_config();
    cfg.frechet_enabled = !args.no_fpnd;
    let (report, timings) = evaluate(&real, &gen, acts.as_ref().map(|(r, g)| (r, g)), &cfg)?;
    let rendered = report_to_json(&report, Some(&timings));
    if let Some(out) = &args.out {
        std::fs::write(out, &rendered)
            .map_err(|source| io::IoError::Io { path: out.display().to_string(), source })?;
    }
    println!("{rendered}");
    Ok(())
}

fn cmd_baseline(args: BaselineArgs) -> Result<(), CliError> {
    let real = io::read_clouds(&args.real)?;
    let cfg = args.protocol.to_eval_config();
    let mut warnings = Vec::new();
    if 2 * cfg.w1.batch_size > real.len() {
        warnings.push(format!(
            "baseline batch size {} clamped to len/2 = {}",
            cfg.w1.batch_size,
            real.len() / 2
        ));
    }
    let scores = baseline(&real, &cfg.w1, &cfg.efp)?;
    let rendered = baseline_to_json(&scores, &cfg, &warnings);
    if let Some(out) = &args.out {
        std::fs::write(out, &rendered)
            .map_err(|source| io::IoError::Io { path: out.display().to_string(), source })?;
    }
    println!("{rendered}");
    Ok(())
}

fn grid_to_csv(image: &JetImage) -> String {
    let mut out = String::new();
    for row in 0..image.resolution() {
        let line: Vec<String> =
            (0..image.resolution()).map(|col| format!("{:.8e}", image.pixel(row, col))).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn cmd_render(args: RenderArgs) -> Result<(), CliError> {
    if args.resolution < 1 {
        return Err(CliError::Input("resolution must be at least 1".to_string()));
    }
    if args.half_width.is_nan() || args.half_width <= 0.0 {
        return Err(CliError::Input("half-width must be positive".to_string()));
    }
    let sample = io::read_clouds(&args.input)?;
    let image = if args.jet == "mean" {
        let images: Vec<JetImage> = sample
            .clouds()
            .iter()
            .map(|c| discretize(c, args.resolution, args.half_width))
            .collect();
        JetImage::mean(&images).expect("non-empty sample renders")
    } else {
        let index: usize = args.jet.parse().map_err(|_| {
            CliError::Input(format!("jet must be an index or 'mean', got '{}'", args.jet))
        })?;
        if index >= sample.len() {
            return Err(CliError::Input(format!(
                "jet index {index} out of range for {} jets",
                sample.len()
            )));
        }
        discretize(&sample.clouds()[index], args.resolution, args.half_width)
    };
    std::fs::write(&args.out, grid_to_csv(&image))
        .map_err(|source| io::IoError::Io { path: args.out.display().to_string(), source })?;
    println!(
        "{}",
        value_to_json(json!({
            "out": args.out.display().to_string(),
            "resolution": args.resolution,
            "half_width": args.half_width,
            "jet": args.jet,
            "total_intensity": image.total(),
        }))
    );
    Ok(())
}

fn cmd_toygen(args: ToygenArgs) -> Result<(), CliError> {
    let cfg = ToyConfig {
        n_jets: args.n_jets,
        max_particles: args.max_particles,
        split_prob: args.split_prob,
        angle_scale: args.angle_scale,
        prongs: args.prongs,
        rng_seed: args.seed,
    };
    let sample = generate(&cfg)?;
    io::write_clouds(&sample, &args.out)?;
    println!(
        "{}",
        value_to_json(json!({
            "out": args.out.display().to_string(),
            "jets": sample.len(),
            "capacity": sample.capacity(),
            "seed": args.seed,
        }))
    );
    Ok(())
}

fn cmd_convert(args: ConvertArgs) -> Result<(), CliError> {
    let bytes = std::fs::read(&args.input)
        .map_err(|source| io::IoError::Io { path: args.input.display().to_string(), source })?;
    let (sample, to) = if bytes.starts_with(&io::CLOUD_MAGIC) {
        let sample = io::read_clouds_bytes(&bytes, &args.input.display().to_string())?;
        io::write_csv(&sample, &args.out)?;
        (sample, "csv")
    } else {
        let sample = io::read_csv(&args.input)?;
        io::write_clouds(&sample, &args.out)?;
        (sample, "binary")
    };
    println!(
        "{}",
        value_to_json(json!({
            "out": args.out.display().to_string(),
            "format": to,
            "jets": sample.len(),
        }))
    );
    Ok(())
}

fn cmd_emd(args: EmdArgs) -> Result<(), CliError> {
    let sample_a = io::read_clouds(&args.a)?;
    let sample_b = io::read_clouds(&args.b)?;
    let pick = |sample: &CloudSample, index: usize, side: &str| {
        if index >= sample.len() {
            Err(CliError::Input(format!(
                "index {index} out of range for side {side} with {} jets",
                sample.len()
            )))
        } else {
            Ok(sample.clouds()[index].clone())
        }
    };
    let a = pick(&sample_a, args.index_a, "a")?;
    let b = pick(&sample_b, args.index_b, "b")?;
    let (distance, plan) = emd(&a, &b, &EmdConfig { radius: args.emd_radius })?;
    if let Some(out) = &args.plan_out {
        let mut csv = String::new();
        for i in 0..plan.n_rows() {
            let line: Vec<String> =
                (0..plan.n_cols()).map(|j| format!("{:.8e}", plan.flow(i, j))).collect();
            csv.push_str(&line.join(","));
            csv.push('\n');
        }
        std::fs::write(out, csv)
            .map_err(|source| io::IoError::Io { path: out.display().to_string(), source })?;
    }
    println!(
        "{}",
        value_to_json(json!({
            "distance": distance,
            "radius": args.emd_radius,
            "created_total": plan.created_total,
            "destroyed_total": plan.destroyed_total,
        }))
    );
    Ok(())
}
