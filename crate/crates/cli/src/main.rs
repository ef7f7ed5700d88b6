mod config;

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::ConfigFile;
use xmcnn::data::{generate_synthetic, load_model, save_model, Dataset, Record, SynthSpec, Task};
use xmcnn::eval::{
    class_relevance, cross_validate, embed_dataset, train_with, EvalConfig, EvalReport, ModelSource,
};
use xmcnn::relevance::read_triples;
use xmcnn::solver::{run_grad_check, Injection};
use xmcnn::{Error, Hyperparams, SolverConfig};

const GRAD_TOLERANCE: f64 = 1e-5;

#[derive(Parser)]
#[command(
    name = "xmcnn",
    version,
    about = "Cross-modal convolutional sequence embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-modality dataset.
    GenSynth(GenSynthArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Cross-validated cross-modal retrieval.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    GradCheck(GradCheckArgs),
    /// Write the embeddings of a dataset as dataset lines.
    Embed(EmbedArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long, default_value_t = 2)]
    modalities: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Samples per class and modality.
    #[arg(long, default_value_t = 20)]
    per_class: usize,
    /// Instance dimension, one value or one per modality.
    #[arg(long, value_delimiter = ',', default_values_t = [4, 6])]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    min_len: usize,
    #[arg(long, default_value_t = 8)]
    max_len: usize,
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone, Default)]
struct ModelFlags {
    /// `key = value` file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Filters per modality.
    #[arg(long)]
    u: Option<usize>,
    /// Window size, one value or one per modality.
    #[arg(long, value_delimiter = ',')]
    h: Option<Vec<usize>>,
    /// Replace negative relevance with zero.
    #[arg(long)]
    clamp_negative: bool,
    #[arg(long)]
    max_outer: Option<usize>,
    #[arg(long)]
    max_inner: Option<usize>,
    #[arg(long)]
    tol_lagrangian: Option<f64>,
    #[arg(long)]
    tol_residual: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Classes labelled +1; without it the file's labels are used.
    #[arg(long, value_delimiter = ',')]
    pos_class: Option<Vec<i64>>,
}

/// Flags and config file merged.
struct RunConfig {
    hyper: Hyperparams,
    solver: SolverConfig,
    task: Task,
    file: ConfigFile,
}

impl ModelFlags {
    fn resolve(&self) -> Result<RunConfig> {
        self.merge().map_err(usage)
    }

    fn merge(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        let hd = Hyperparams::default();
        let sd = SolverConfig::default();
        let hyper = Hyperparams {
            lambda1: pick(self.lambda1, file.get("lambda1")?, hd.lambda1),
            lambda2: pick(self.lambda2, file.get("lambda2")?, hd.lambda2),
            beta: pick(self.beta, file.get("beta")?, hd.beta),
            filters: pick(self.u, file.get("u")?, hd.filters),
            windows: pick(self.h.clone(), file.get_list("h")?, hd.windows),
            clamp_negative_relevance: self.clamp_negative
                || file
                    .get("clamp_negative_relevance")?
                    .unwrap_or(hd.clamp_negative_relevance),
        };
        let solver = SolverConfig {
            max_outer_iters: pick(self.max_outer, file.get("max_outer")?, sd.max_outer_iters),
            max_inner_iters: pick(self.max_inner, file.get("max_inner")?, sd.max_inner_iters),
            tol_lagrangian: pick(
                self.tol_lagrangian,
                file.get("tol_lagrangian")?,
                sd.tol_lagrangian,
            ),
            tol_residual: pick(
                self.tol_residual,
                file.get("tol_residual")?,
                sd.tol_residual,
            ),
            seed: pick(self.seed, file.get("seed")?, sd.seed),
            init_scale: pick(self.init_scale, file.get("init_scale")?, sd.init_scale),
            threads: pick(self.threads, file.get("threads")?, sd.threads),
        };
        solver.validate()?;
        hyper.validate(hyper.windows.len().max(1))?;
        let task = match pick(
            self.pos_class.clone(),
            file.get_list("pos_class")?,
            Vec::new(),
        ) {
            classes if classes.is_empty() => Task::FileLabels,
            classes => Task::Positive(classes.into_iter().collect()),
        };
        Ok(RunConfig {
            hyper,
            solver,
            task,
            file,
        })
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Relevance triples file; class relevance is used without it.
    #[arg(long)]
    relevance: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Write `iteration lagrangian residual` lines here.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Evaluate this model on every round instead of training per round.
    #[arg(long = "model", conflicts_with = "one_vs_rest")]
    model_file: Option<PathBuf>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    k_list: Option<Vec<usize>>,
    /// Also report mAP normalised by the number of relevant items.
    #[arg(long)]
    map_standard: bool,
    /// Train one binary task per class and report each plus their mean.
    #[arg(long)]
    one_vs_rest: bool,
    /// Per-query CSV output.
    #[arg(long)]
    per_query: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, hide = true)]
    inject_sign_error: bool,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "model")]
    model_file: PathBuf,
    /// Output path; standard output without it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: impl fmt::Display) -> anyhow::Error {
    UsageError(format!("{e:#}")).into()
}

#[derive(Debug)]
struct CheckFailed;

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("gradient check failed")
    }
}

impl std::error::Error for CheckFailed {}

fn gen_synth(args: GenSynthArgs) -> Result<()> {
    let spec = SynthSpec {
        modalities: args.modalities,
        classes: args.classes,
        per_class: args.per_class,
        dims: args.dims,
        seq_len: (args.min_len, args.max_len),
        separation: args.separation,
        noise: args.noise,
        seed: args.seed,
    };
    let ds = generate_synthetic(&spec).map_err(usage)?;
    ds.save(&args.out)?;
    println!("wrote {} records to {}", ds.len(), args.out.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let run = args.model.resolve()?;
    let ds = Dataset::load(&args.data)?;
    let relevance = match &args.relevance {
        Some(path) => read_triples(path, ds.len())?.with_modality_sizes(&ds.modality_sizes())?,
        None => class_relevance(&ds)?,
    };
    match train_with(&ds, &relevance, &run.task, &run.hyper, &run.solver) {
        Ok((model, report)) => {
            save_model(&model, &args.out)?;
            if let Some(path) = &args.trace {
                std::fs::write(path, report.trace_text())?;
            }
            let last = report.trace.last().expect("at least one outer iteration");
            println!(
                "iterations {} ({:?}) lagrangian {:e} residual {:e}",
                report.iterations, report.termination, last.lagrangian, last.residual
            );
            Ok(())
        }
        Err(Error::Diverged { iteration, trace }) => {
            let path = args.trace.clone().unwrap_or_else(|| {
                let mut p = args.out.clone().into_os_string();
                p.push(".trace");
                PathBuf::from(p)
            });
            let text: String = trace
                .iter()
                .map(|r| format!("{} {:e} {:e}\n", r.iteration, r.lagrangian, r.residual))
                .collect();
            std::fs::write(&path, text)?;
            Err(Error::Diverged { iteration, trace })
                .context(format!("trace written to {}", path.display()))
        }
        Err(e) => Err(e.into()),
    }
}

fn eval_config(args: &EvalArgs, run: &RunConfig) -> Result<EvalConfig> {
    let d = EvalConfig::default();
    Ok(EvalConfig {
        folds: pick(args.folds, run.file.get("folds").map_err(usage)?, d.folds),
        seed: run.solver.seed,
        k_list: pick(
            args.k_list.clone(),
            run.file.get_list("k_list").map_err(usage)?,
            d.k_list,
        ),
    })
}

fn write_report(report: &EvalReport, args: &EvalArgs, prefix: &str) -> Result<()> {
    for line in report.to_text(args.map_standard).lines() {
        if line.starts_with('#') {
            eprintln!("{line}");
        } else {
            println!("{prefix}{line}");
        }
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let run = args.model.resolve()?;
    let cfg = eval_config(&args, &run)?;
    let ds = Dataset::load(&args.data)?;
    if let Some(path) = &args.model_file {
        let model = load_model(path)?;
        let report = cross_validate(&ds, &ModelSource::Fixed(Box::new(model)), &cfg)?;
        write_report(&report, &args, "")?;
        if let Some(out) = &args.per_query {
            std::fs::write(out, report.queries_csv())?;
        }
        return Ok(());
    }
    let tasks: Vec<(String, Task)> = if args.one_vs_rest {
        ds.classes()
            .into_iter()
            .map(|c| (format!("class={c}\t"), Task::Positive(BTreeSet::from([c]))))
            .collect()
    } else {
        vec![(String::new(), run.task.clone())]
    };
    let mut csv = String::new();
    let mut maps = Vec::new();
    for (prefix, task) in tasks {
        let source = ModelSource::Train {
            hyper: run.hyper.clone(),
            config: run.solver.clone(),
            task,
        };
        let report = cross_validate(&ds, &source, &cfg)?;
        write_report(&report, &args, &prefix)?;
        maps.push(report.map());
        let body = report.queries_csv();
        if csv.is_empty() {
            csv = body;
        } else {
            csv.extend(body.lines().skip(1).map(|l| format!("{l}\n")));
        }
    }
    if args.one_vs_rest {
        println!(
            "class=mean\tmAP\tmean\t{:.6}",
            maps.iter().sum::<f64>() / maps.len() as f64
        );
    }
    if let Some(out) = &args.per_query {
        std::fs::write(out, csv)?;
    }
    Ok(())
}

fn grad_check(args: GradCheckArgs) -> Result<()> {
    let inject = args
        .inject_sign_error
        .then_some(Injection::FlipMultiplierSign);
    let report = run_grad_check(args.trials, args.seed, inject)?;
    for o in &report.outcomes {
        println!(
            "trial {:>3}  z {:.3e} at ({}, {})  filter {:.3e} at (modality {}, filter {}, coord {})",
            o.trial,
            o.z_error,
            o.z_worst.0,
            o.z_worst.1,
            o.filter_error,
            o.filter_worst.0 + 1,
            o.filter_worst.1,
            o.filter_worst.2
        );
    }
    if report.passed(GRAD_TOLERANCE) {
        println!(
            "PASS: {} trials within {GRAD_TOLERANCE:e}",
            report.outcomes.len()
        );
        return Ok(());
    }
    if let (Some(z), Some(f)) = (report.worst_z(), report.worst_filter()) {
        eprintln!(
            "FAIL: worst Z error {:.3e} (trial {}, coordinate ({}, {})); worst filter error {:.3e} (trial {}, modality {}, filter {}, coordinate {})",
            z.z_error, z.trial, z.z_worst.0, z.z_worst.1, f.filter_error, f.trial, f.filter_worst.0 + 1, f.filter_worst.1, f.filter_worst.2
        );
    }
    Err(CheckFailed.into())
}

fn embed(args: EmbedArgs) -> Result<()> {
    let ds = Dataset::load(&args.data)?;
    let model = load_model(&args.model_file)?;
    let values = embed_dataset(&ds, &model)?;
    let records = ds
        .records
        .iter()
        .zip(values)
        .map(|(r, z)| Record {
            modality: r.modality,
            class: r.class,
            label: r.label,
            seq: vec![z],
        })
        .collect();
    let out = Dataset::new(records, vec![model.hyper.filters; ds.modalities()])?;
    match &args.out {
        Some(path) => out.save(path)?,
        None => print!("{}", out.to_text()),
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.is::<UsageError>() {
        2
    } else if matches!(err.downcast_ref::<Error>(), Some(Error::Diverged { .. })) {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::GradCheck(a) => grad_check(a),
        Command::Embed(a) => embed(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !e.is::<CheckFailed>() {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
