//! `downscale` command-line front end.
//!
//! Settings resolve in order: built-in defaults, `--config` file, `--set`
//! overrides, then subcommand flags. Exit codes: 0 success, 1 usage or
//! configuration error, 2 runtime failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::{
    evaluate, grad_suite, predict_diffusion, resolve_dataset, results_csv, sorted_pairs,
    train_srcnn, train_unet, Checkpoint, EvalRequest, RunConfig, FINAL_LOSS_WINDOW,
};
use crate::grids::{export_pgm, gen_synthetic_dataset, save_field, Split};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "downscale", version, about = "Conditional diffusion downscaling of precipitation fields")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset (fields plus manifest.tsv).
    GenData(GenDataArgs),
    /// Train the diffusion model or the SRCNN baseline.
    Train(TrainArgs),
    /// Draw one sample per eval pair from a diffusion checkpoint.
    Sample(SampleArgs),
    /// Score baselines and checkpoints on the eval split.
    Evaluate(EvaluateArgs),
    /// Run the finite-difference gradient suite.
    GradCheck,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    count: Option<usize>,
    /// Number of eval pairs; defaults to count / 8 when --count is given.
    #[arg(long)]
    eval_count: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Unet,
    Srcnn,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "unet")]
    model: ModelArg,
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Only the first N eval pairs (ordered by id).
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BaselineArg {
    Bilinear,
    None,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Diffusion checkpoint, or `none`.
    #[arg(long, value_name = "PATH|none")]
    checkpoint: Option<String>,
    #[arg(long, value_enum, default_value = "bilinear")]
    baseline: BaselineArg,
    #[arg(long, value_name = "PATH")]
    srcnn_checkpoint: Option<PathBuf>,
    /// Companion diffusion checkpoint trained without topography.
    #[arg(long, value_name = "PATH")]
    no_topo_checkpoint: Option<PathBuf>,
    /// Emit guidance on and off rows for every diffusion checkpoint.
    #[arg(long)]
    ablation: bool,
    /// Sweep the guidance weight over `eval.sweep`.
    #[arg(long)]
    sweep: bool,
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(Error),
    Runtime(Error),
}

fn resolve(common: &Common, flags: &[(&str, Option<String>)]) -> std::result::Result<RunConfig, Failure> {
    let build = || -> Result<RunConfig> {
        let mut cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&common.overrides)?;
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    };
    build().map_err(|e| match e {
        Error::Io { .. } => Failure::Runtime(e),
        other => Failure::Usage(other),
    })
}

fn path_flag(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn run_gen_data(common: &Common, a: &GenDataArgs) -> std::result::Result<(), Failure> {
    let eval = a.eval_count.or(a.count.map(|c| (c / 8).max(1)));
    let cfg = resolve(
        common,
        &[
            ("data.count", a.count.map(|v| v.to_string())),
            ("data.eval_count", eval.map(|v| v.to_string())),
            ("data.size", a.size.map(|v| v.to_string())),
        ],
    )?;
    let manifest = gen_synthetic_dataset(cfg.synthetic_spec(), &a.out).map_err(Failure::Runtime)?;
    println!(
        "wrote {} train + {} eval pairs to {}",
        manifest.split(Split::Train).count(),
        manifest.split(Split::Eval).count(),
        a.out.join("manifest.tsv").display()
    );
    Ok(())
}

fn run_train(common: &Common, a: &TrainArgs) -> std::result::Result<(), Failure> {
    let steps_key = match a.model {
        ModelArg::Unet => "train.steps",
        ModelArg::Srcnn => "srcnn.steps",
    };
    let cfg = resolve(
        common,
        &[
            ("data.manifest", path_flag(&a.manifest)),
            ("out_dir", path_flag(&a.out)),
            (steps_key, a.steps.map(|v| v.to_string())),
        ],
    )?;
    let total = match a.model {
        ModelArg::Unet => cfg.train_steps,
        ModelArg::Srcnn => cfg.srcnn_steps,
    };
    let every = (total / 20).max(1);
    let progress = |step: usize, loss: f64| {
        if step.is_multiple_of(every) || step == total {
            eprintln!("step {step}/{total} loss {loss:.5}");
        }
    };
    let out = match a.model {
        ModelArg::Unet => train_unet(&cfg, progress),
        ModelArg::Srcnn => train_srcnn(&cfg, progress),
    }
    .map_err(Failure::Runtime)?;
    println!(
        "final loss (mean of last {FINAL_LOSS_WINDOW} steps) {:.6}",
        out.final_loss()
    );
    println!("checkpoint {}", out.checkpoint_path.display());
    println!("loss log {}", out.log_path.display());
    Ok(())
}

fn run_sample(common: &Common, a: &SampleArgs) -> std::result::Result<(), Failure> {
    let cfg = resolve(
        common,
        &[
            ("data.manifest", path_flag(&a.manifest)),
            ("out_dir", path_flag(&a.out)),
        ],
    )?;
    let go = || -> Result<()> {
        let ck = Checkpoint::load(&a.checkpoint)?;
        let manifest = resolve_dataset(&cfg)?;
        let mut pairs = sorted_pairs(&manifest, Split::Eval)?;
        if let Some(n) = a.count {
            pairs.truncate(n.max(1));
        }
        let out = predict_diffusion(&ck, &pairs, &cfg, &cfg.guidance())?;
        let dir = cfg.out_dir.join("samples");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        for (p, field) in pairs.iter().zip(&out.fields) {
            save_field(field.grid(), dir.join(format!("{}.pfld", p.id)))?;
            let vmax = p.hr.values().iter().copied().fold(f32::MIN_POSITIVE, f32::max);
            export_pgm(field.grid(), dir.join(format!("{}.pgm", p.id)), vmax)?;
        }
        println!("wrote {} samples to {}", pairs.len(), dir.display());
        Ok(())
    };
    go().map_err(Failure::Runtime)
}

fn run_evaluate(common: &Common, a: &EvaluateArgs) -> std::result::Result<(), Failure> {
    let cfg = resolve(
        common,
        &[
            ("data.manifest", path_flag(&a.manifest)),
            ("out_dir", path_flag(&a.out)),
        ],
    )?;
    let go = || -> Result<()> {
        let load = |p: &PathBuf| Checkpoint::load(p);
        let unet = match a.checkpoint.as_deref() {
            None | Some("none") => None,
            Some(p) => Some(Checkpoint::load(p)?),
        };
        let request = EvalRequest {
            bilinear: a.baseline == BaselineArg::Bilinear,
            srcnn: a.srcnn_checkpoint.as_ref().map(load).transpose()?,
            unet,
            unet_no_topo: a.no_topo_checkpoint.as_ref().map(load).transpose()?,
            ablation: a.ablation,
            sweep: a.sweep,
        };
        let summary = evaluate(&cfg, &request)?;
        print!("{}", results_csv(&summary.reports));
        for row in &summary.sweep {
            println!(
                "sweep w={} lr_residual={:.6} rmse={:.6} n={}",
                row.w, row.lr_residual, row.rmse, row.n
            );
        }
        println!("results {}", summary.results_path.display());
        Ok(())
    };
    go().map_err(Failure::Runtime)
}

fn run_grad_check(common: &Common) -> std::result::Result<(), Failure> {
    let cfg = resolve(common, &[])?;
    let rows = grad_suite(cfg.seed).map_err(Failure::Runtime)?;
    for r in &rows {
        println!("{r}");
    }
    let failed = rows.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(Failure::Runtime(Error::Config(format!(
            "{failed} gradient checks exceeded tolerance"
        ))));
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command;
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::GenData(a) => run_gen_data(&cli.common, a),
        Command::Train(a) => run_train(&cli.common, a),
        Command::Sample(a) => run_sample(&cli.common, a),
        Command::Evaluate(a) => run_evaluate(&cli.common, a),
        Command::GradCheck => run_grad_check(&cli.common),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}
