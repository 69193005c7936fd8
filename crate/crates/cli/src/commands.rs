//! Subcommand definitions and dispatch.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use otdenoise::align::{uot_distance, AlignmentConfig};
use otdenoise::error::{Error, Result};
use otdenoise::io::{
    format_f64, read_bank, read_dataset, read_matrix_text, read_vector_text, write_bank,
    write_dataset, write_history, write_matrix_text,
};
use otdenoise::matrix::Vector;
use otdenoise::ot::{dykstra_uot, sinkhorn_ot, TransportPlan, TransportProblem};
use otdenoise::refine::{
    class_features_from_bank, global_ot_pseudolabels, partition_dataset, refine,
    refinement_metrics, RefinementReport,
};
use otdenoise::synth::{
    gen_dataset, inject_asymmetric_noise, inject_symmetric_noise, NoiseKind, SynthConfig,
};
use otdenoise::train::{evaluate, train, TrainConfig};

#[derive(Parser)]
#[command(
    name = "otdenoise",
    about = "Noisy-label refinement with prompt alignment and optimal transport",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic embedding dataset with injected label noise.
    Gen(GenArgs),
    /// Train a prompt bank on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a trained bank on a test dataset.
    Eval(EvalArgs),
    /// Run one partition + OT refinement pass without training.
    Refine(RefineArgs),
    /// Solve a transport problem from delimited-text files.
    SolveOt(SolveOtArgs),
    /// Export the patch-to-prompt transport plan of one sample and class.
    ExportPlan(ExportPlanArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum NoiseKindArg {
    Symmetric,
    Asymmetric,
}

#[derive(Args)]
pub struct GenArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Samples per class.
    #[arg(long, default_value_t = 16)]
    shots: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 16)]
    patches: usize,
    /// Inter-class separation; also sets the jitter scale 1/separation.
    #[arg(long, default_value_t = 20.0)]
    separation: f64,
    /// Fraction of patches replaced by class-independent noise.
    #[arg(long, default_value_t = 0.125)]
    background_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    noise_rate: f64,
    #[arg(long, value_enum, default_value_t = NoiseKindArg::Symmetric)]
    noise_kind: NoiseKindArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
pub struct AlignmentFlags {
    /// Entropic regularization weight of the patch-to-prompt solver.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Transported mass (partial-matching degree).
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Stopping threshold on the column-scaling change.
    #[arg(long)]
    stop_delta: Option<f64>,
}

impl AlignmentFlags {
    fn apply(&self, mut cfg: AlignmentConfig) -> AlignmentConfig {
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.theta {
            cfg.theta = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.stop_delta {
            cfg.stop_delta = v;
        }
        cfg
    }
}

#[derive(Args)]
pub struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Output directory (bank.json, history.jsonl, report.json).
    #[arg(long)]
    out: PathBuf,
    /// JSON file with a TrainConfig; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    sup_epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Prompt views per class and direction.
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    lambda_i: Option<f64>,
    /// GCE exponent.
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Rebuild the denoised set before every mini-batch.
    #[arg(long)]
    refine_per_batch: bool,
    #[command(flatten)]
    alignment: AlignmentFlags,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Test dataset directory (must carry ground-truth labels).
    #[arg(long)]
    data: PathBuf,
    /// Trained bank file.
    #[arg(long)]
    bank: PathBuf,
    /// Report file (JSON); defaults to no file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    alignment: AlignmentFlags,
}

#[derive(Args)]
pub struct RefineArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    bank: PathBuf,
    /// Output directory for the refined dataset and report.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    alignment: AlignmentFlags,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SolveMode {
    Classical,
    Unbalanced,
}

#[derive(Args)]
pub struct SolveOtArgs {
    /// Cost matrix as delimited text (comma-separated rows, # comments).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    mode: SolveMode,
    /// Row marginal file (single row or column); uniform when absent.
    #[arg(long)]
    mu: Option<PathBuf>,
    /// Column marginal file; uniform (classical) or theta-scaled uniform
    /// (unbalanced) when absent.
    #[arg(long)]
    nu: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Total transported mass when --nu is absent (unbalanced mode).
    #[arg(long, default_value_t = 0.9)]
    theta: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Plan output file; stdout metadata is printed either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum PromptSide {
    Clean,
    Noisy,
}

#[derive(Args)]
pub struct ExportPlanArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    bank: PathBuf,
    /// Sample index within the dataset.
    #[arg(long)]
    sample: usize,
    /// Class index whose prompts to align against.
    #[arg(long)]
    class: usize,
    #[arg(long, value_enum, default_value_t = PromptSide::Clean)]
    prompts: PromptSide,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    alignment: AlignmentFlags,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => run_gen(args),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Refine(args) => run_refine(args),
        Command::SolveOt(args) => run_solve_ot(args),
        Command::ExportPlan(args) => run_export_plan(args),
    }
}

fn run_gen(args: GenArgs) -> Result<()> {
    let kind = match args.noise_kind {
        NoiseKindArg::Symmetric => NoiseKind::Symmetric,
        NoiseKindArg::Asymmetric => NoiseKind::Asymmetric,
    };
    let cfg = SynthConfig {
        num_classes: args.classes,
        shots: args.shots,
        dim: args.dim,
        patches: args.patches,
        separation: args.separation,
        background_fraction: args.background_fraction,
        noise_rate: args.noise_rate,
        noise_kind: kind,
        seed: args.seed,
    };
    let mut ds = gen_dataset(&cfg)?;
    let (labels, mask) = match kind {
        NoiseKind::Symmetric => {
            inject_symmetric_noise(&ds.labels, cfg.noise_rate, cfg.num_classes, cfg.seed)
        }
        NoiseKind::Asymmetric => {
            inject_asymmetric_noise(&ds.labels, cfg.noise_rate, cfg.num_classes, cfg.seed)
        }
    };
    ds.labels = labels;
    let flipped = mask.iter().filter(|m| **m).count();
    let provenance = format!(
        "synthetic: classes={} shots={} dim={} patches={} separation={} \
         background_fraction={} noise_rate={} noise_kind={:?} seed={} flipped={}",
        cfg.num_classes,
        cfg.shots,
        cfg.dim,
        cfg.patches,
        cfg.separation,
        cfg.background_fraction,
        cfg.noise_rate,
        cfg.noise_kind,
        cfg.seed,
        flipped
    );
    write_dataset(&ds, &args.out, &provenance)?;
    println!(
        "wrote {} samples ({} flipped) to {}",
        ds.len(),
        flipped,
        args.out.display()
    );
    Ok(())
}

fn load_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| Error::ParseError {
                message: format!("train config: {e}"),
            })?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.sup_epochs {
        cfg.sup_epochs = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = args.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.views {
        cfg.views = v;
    }
    if let Some(v) = args.lambda_i {
        cfg.lambda_i = v;
    }
    if let Some(v) = args.q {
        cfg.q = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if args.refine_per_batch {
        cfg.refine_per_batch = true;
    }
    cfg.alignment = args.alignment.apply(cfg.alignment);
    Ok(cfg)
}

fn write_report(report: &RefinementReport, path: &PathBuf) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::ValidationError {
        message: format!("report serialization failed: {e}"),
    })?;
    fs::write(path, json)?;
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let cfg = load_train_config(&args)?;
    let ds = read_dataset(&args.data)?;
    let (bank, history) = train(&ds, &cfg)?;
    fs::create_dir_all(&args.out)?;
    write_bank(&bank, &args.out.join("bank.json"))?;
    write_history(&history, &args.out.join("history.jsonl"))?;
    let report = history.final_refinement().cloned().unwrap_or(RefinementReport {
        noise_ratio_before: None,
        noise_ratio_after: None,
        correct_correction_rate: None,
        num_refined: 0,
        num_clean_kept: ds.len(),
    });
    write_report(&report, &args.out.join("report.json"))?;
    if let Some(last) = history.epochs.last() {
        println!(
            "trained {} epochs; final mean loss {}",
            history.epochs.len(),
            format_f64(last.mean_total)
        );
        if let Some(nr) = last.noise_ratio {
            println!("final noise ratio {}", format_f64(nr));
        }
    } else {
        println!("trained 0 epochs");
    }
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let ds = read_dataset(&args.data)?;
    let bank = read_bank(&args.bank)?;
    let cfg = args.alignment.apply(AlignmentConfig::default());
    let accuracy = evaluate(&bank, &ds, &cfg)?;
    println!("accuracy {}", format_f64(accuracy));
    if let Some(out) = &args.out {
        let json = serde_json::json!({
            "accuracy": accuracy,
            "num_samples": ds.len(),
        });
        fs::write(out, serde_json::to_string_pretty(&json).unwrap())?;
    }
    Ok(())
}

fn run_refine(args: RefineArgs) -> Result<()> {
    let ds = read_dataset(&args.data)?;
    let bank = read_bank(&args.bank)?;
    let cfg = args.alignment.apply(AlignmentConfig::default());
    let partition = partition_dataset(&ds, &bank, &cfg)?;
    let class_features = class_features_from_bank(&bank)?;
    let pseudo = global_ot_pseudolabels(&ds, &class_features, cfg.epsilon)?;
    let denoised = refine(&ds, &partition, &pseudo)?;
    let report = match &ds.truth {
        Some(truth) => refinement_metrics(&ds.labels, &denoised, truth)?,
        None => RefinementReport {
            noise_ratio_before: None,
            noise_ratio_after: None,
            correct_correction_rate: None,
            num_refined: denoised.refined_mask.iter().filter(|m| **m).count(),
            num_clean_kept: denoised.refined_mask.iter().filter(|m| !**m).count(),
        },
    };
    let mut refined_ds = ds.clone();
    refined_ds.labels = denoised.labels;
    fs::create_dir_all(&args.out)?;
    write_dataset(&refined_ds, &args.out, "refined by threshold-gated OT pseudo-labeling")?;
    write_report(&report, &args.out.join("report.json"))?;
    let mask_json =
        serde_json::to_string(&denoised.refined_mask).map_err(|e| Error::ValidationError {
            message: format!("mask serialization failed: {e}"),
        })?;
    fs::write(args.out.join("refined_mask.json"), mask_json)?;
    println!(
        "refined {} of {} samples ({} kept clean)",
        report.num_refined,
        ds.len(),
        report.num_clean_kept
    );
    Ok(())
}

fn run_solve_ot(args: SolveOtArgs) -> Result<()> {
    let cost = read_matrix_text(&args.input)?;
    let (m, n) = cost.shape();
    let mu = match &args.mu {
        Some(path) => read_vector_text(path)?,
        None => Vector::filled(m, 1.0 / m as f64),
    };
    let nu = match &args.nu {
        Some(path) => read_vector_text(path)?,
        None => match args.mode {
            SolveMode::Classical => Vector::filled(n, 1.0 / n as f64),
            SolveMode::Unbalanced => Vector::filled(n, args.theta / n as f64),
        },
    };
    let problem = TransportProblem::new(cost, mu, nu, args.epsilon)?;
    let plan: TransportPlan = match args.mode {
        SolveMode::Classical => sinkhorn_ot(&problem, args.max_iter, args.tol)?,
        SolveMode::Unbalanced => dykstra_uot(&problem, args.max_iter, args.tol)?,
    };
    println!("objective {}", format_f64(plan.objective));
    println!("iterations {}", plan.iterations);
    println!("converged {}", plan.converged);
    if let Some(out) = &args.out {
        let comments = vec![
            format!("objective {}", format_f64(plan.objective)),
            format!("iterations {}", plan.iterations),
            format!("converged {}", plan.converged),
        ];
        write_matrix_text(&plan.plan, out, &comments)?;
    }
    Ok(())
}

fn run_export_plan(args: ExportPlanArgs) -> Result<()> {
    let ds = read_dataset(&args.data)?;
    let bank = read_bank(&args.bank)?;
    let cfg = args.alignment.apply(AlignmentConfig::default());
    if args.sample >= ds.len() {
        return Err(Error::IndexMismatch {
            expected: ds.len(),
            got: args.sample,
        });
    }
    if args.class >= bank.num_classes {
        return Err(Error::LabelOutOfRange {
            label: args.class,
            num_classes: bank.num_classes,
        });
    }
    let prompts = match args.prompts {
        PromptSide::Clean => &bank.clean[args.class],
        PromptSide::Noisy => &bank.noisy[args.class],
    };
    let (distance, plan) = uot_distance(&ds.samples[args.sample], prompts, &cfg)?;
    let comments = vec![
        format!("sample {} class {}", args.sample, args.class),
        format!("distance {}", format_f64(distance)),
        format!("converged {}", plan.converged),
    ];
    match &args.out {
        Some(out) => write_matrix_text(&plan.plan, out, &comments)?,
        None => print!("{}", otdenoise::io::matrix_to_text(&plan.plan, &comments)),
    }
    Ok(())
}
