//! Command-line front end: train models, attack checkpoints, and audit the
//! gradient-vanishing defense end to end.
//!
//! Dataset specs are compact strings (`blobs:256,dim=16,seed=101`,
//! `idx:images,labels`, `cifar:batch.bin`); relative dataset file paths are
//! resolved under `$SUPERFIT_DATA_DIR` when that variable is set. Epsilon-like
//! flags accept ratios (`8/255`) as well as decimals. Checkpoints record
//! their element type, so commands that read one pick f32/f64 automatically.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use superfit::attacks::{AttackConfig, AttackKind};
use superfit::checkpoint;
use superfit::data::{load_cifar, load_idx, make_blobs, BlobsConfig, DatasetSplit};
use superfit::element::Element;
use superfit::error::{Error, Result};
use superfit::eval::{evaluate_batched, logits_stats};
use superfit::gradcheck;
use superfit::models::{ArchSpec, Model};
use superfit::training::{train, Objective, TrainConfig};

// ---------------------------------------------------------------------------
// argument surface
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "superfit",
    version,
    about = "Logit-margin super-fitting lab: training, white-box attacks, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model; writes a checkpoint and a JSON-lines training log.
    Train(TrainArgs),
    /// Run one attack against a checkpoint and print its statistics.
    Attack(AttackArgs),
    /// Full protocol: clean accuracy, robust accuracy per attack, vanished
    /// fraction, and per-class logits means, as a JSON report.
    Eval(EvalArgs),
    /// Per-class mean logits of a checkpoint over a dataset, as CSV.
    LogitsStats(LogitsStatsArgs),
    /// Verify every gradient path against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct DataOpt {
    /// Dataset spec: `blobs:N[,k=K][,dim=D][,seed=S][,sep=F][,sigma=F]`,
    /// `idx:IMAGES,LABELS[,classes=K]`, or `cifar:FILE[,classes=K]`.
    #[arg(long)]
    data: String,
    /// Keep a deterministic subsample of at most N examples (0 = all).
    /// Defaults to 1280 for attack/eval/logits-stats and to 0 for train.
    #[arg(long)]
    subsample: Option<usize>,
    /// Seed for the subsample draw.
    #[arg(long, default_value_t = 0)]
    subsample_seed: u64,
}

#[derive(Args)]
struct AttackOpt {
    /// L-infinity budget; accepts `8/255` style ratios.
    #[arg(long, value_parser = parse_ratio, default_value = "8/255")]
    eps: f64,
    /// Per-iteration step; defaults to eps/10.
    #[arg(long, value_parser = parse_ratio)]
    step: Option<f64>,
    /// Iteration count for the iterative attacks.
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Independent restarts (PGD keeps the strongest result).
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    /// Start from the clean input instead of uniform noise in the ball.
    #[arg(long)]
    no_random_init: bool,
    /// Iterations of the A3 initialization walk.
    #[arg(long, default_value_t = 7)]
    a3_init_iters: usize,
    /// Step of the A3 initialization walk; defaults to eps/4.
    #[arg(long, value_parser = parse_ratio)]
    a3_init_step: Option<f64>,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl AttackOpt {
    fn config(&self) -> AttackConfig {
        AttackConfig {
            epsilon: self.eps,
            step_size: self.step.unwrap_or(self.eps / 10.0),
            iterations: self.iters,
            restarts: self.restarts,
            random_init: !self.no_random_init,
            a3_init_iterations: self.a3_init_iters,
            a3_init_step: self.a3_init_step,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Architecture id, e.g. `tiny_mlp:in=16,hidden=4096,classes=2` or
    /// `middle_cnn:in=1,size=28,classes=10,pad32=1`.
    #[arg(long)]
    arch: String,
    #[command(flatten)]
    data: DataOpt,
    /// ce | mucs | ce+mucs | distill | adv. Required unless --config is given.
    #[arg(long)]
    objective: Option<String>,
    /// Margin weight for ce+mucs (default 1).
    #[arg(long)]
    mucs_weight: Option<f64>,
    /// Softmax temperature for the distill objective (default 100).
    #[arg(long)]
    temperature: Option<f64>,
    /// Optimizer step budget.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Shuffling/objective seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Weight-initialization seed; defaults to --seed.
    #[arg(long)]
    init_seed: Option<u64>,
    /// Metrics cadence in steps (0 = final step only).
    #[arg(long)]
    eval_every: Option<usize>,
    /// Early stop once this vanished fraction is reached, or `none`.
    #[arg(long)]
    vanish_stop: Option<String>,
    /// TrainConfig JSON to start from; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Element type: f32 | f64.
    #[arg(long, default_value = "f32")]
    dtype: String,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Training-log path; defaults to OUT with extension `log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    /// Checkpoint to attack.
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    data: DataOpt,
    /// fgsm | bim | pgd | apgd | a3.
    #[arg(long)]
    kind: String,
    #[command(flatten)]
    attack: AttackOpt,
    /// Evaluation batch size.
    #[arg(long, default_value_t = 128)]
    batch: usize,
    /// Write the stats JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    data: DataOpt,
    /// Comma list of `kind[:iters]` entries, or `none`. Each attack draws
    /// its noise from --seed plus its list position.
    #[arg(long, default_value = "pgd:100,apgd:100,a3:100")]
    attacks: String,
    /// L-infinity budget shared by all listed attacks.
    #[arg(long, value_parser = parse_ratio, default_value = "8/255")]
    eps: f64,
    /// Shared step size; defaults to eps/10.
    #[arg(long, value_parser = parse_ratio)]
    step: Option<f64>,
    /// Base noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluation batch size.
    #[arg(long, default_value_t = 128)]
    batch: usize,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit the aligned human-readable table instead of JSON.
    #[arg(long)]
    text: bool,
}

#[derive(Args)]
struct LogitsStatsArgs {
    /// Checkpoint to inspect.
    #[arg(long)]
    ckpt: PathBuf,
    #[command(flatten)]
    data: DataOpt,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed for the random probe cases.
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Print every case instead of failures only.
    #[arg(long)]
    verbose: bool,
}

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------

/// Accepts plain decimals and `a/b` ratios, e.g. `8/255`.
fn parse_ratio(s: &str) -> std::result::Result<f64, String> {
    if let Some((num, den)) = s.split_once('/') {
        let n: f64 = num
            .trim()
            .parse()
            .map_err(|_| format!("bad numerator in {s:?}"))?;
        let d: f64 = den
            .trim()
            .parse()
            .map_err(|_| format!("bad denominator in {s:?}"))?;
        if d == 0.0 {
            return Err(format!("zero denominator in {s:?}"));
        }
        Ok(n / d)
    } else {
        s.trim()
            .parse()
            .map_err(|_| format!("not a number or a/b ratio: {s:?}"))
    }
}

/// Relative dataset paths are taken under $SUPERFIT_DATA_DIR when set.
fn resolve_data_path(p: &str) -> PathBuf {
    let path = PathBuf::from(p);
    if path.is_relative() {
        if let Ok(root) = std::env::var("SUPERFIT_DATA_DIR") {
            return PathBuf::from(root).join(path);
        }
    }
    path
}

fn parse_usize(what: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Usage(format!("{what} must be an integer, got {v:?}")))
}

fn parse_f64(what: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::Usage(format!("{what} must be a number, got {v:?}")))
}

fn load_data<T: Element>(opt: &DataOpt, default_subsample: usize) -> Result<DatasetSplit<T>> {
    let (kind, rest) = opt.data.split_once(':').ok_or_else(|| {
        Error::Usage(format!(
            "dataset spec needs a kind prefix (blobs:/idx:/cifar:), got {:?}",
            opt.data
        ))
    })?;
    let set = match kind {
        "blobs" => {
            let mut parts = rest.split(',');
            let n = parse_usize(
                "blob count",
                parts.next().filter(|s| !s.is_empty()).ok_or_else(|| {
                    Error::Usage("blobs spec starts with the example count".into())
                })?,
            )?;
            let mut cfg = BlobsConfig::new(n, 2, 16, 0);
            for part in parts {
                let (k, v) = part
                    .split_once('=')
                    .ok_or_else(|| Error::Usage(format!("expected key=value, got {part:?}")))?;
                match k {
                    "k" => cfg.classes = parse_usize("k", v)?,
                    "dim" => cfg.dim = parse_usize("dim", v)?,
                    "seed" => cfg.seed = parse_usize("seed", v)? as u64,
                    "sep" => cfg.separation = parse_f64("sep", v)?,
                    "sigma" => cfg.sigma = parse_f64("sigma", v)?,
                    other => {
                        return Err(Error::Usage(format!("unknown blobs field {other:?}")));
                    }
                }
            }
            make_blobs(&cfg)?
        }
        "idx" => {
            let mut parts = rest.split(',');
            let images = parts
                .next()
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::Usage("idx spec needs an images path".into()))?;
            let labels = parts
                .next()
                .ok_or_else(|| Error::Usage("idx spec needs a labels path".into()))?;
            let mut classes = 10;
            for part in parts {
                match part.split_once('=') {
                    Some(("classes", v)) => classes = parse_usize("classes", v)?,
                    _ => return Err(Error::Usage(format!("unknown idx field {part:?}"))),
                }
            }
            load_idx(resolve_data_path(images), resolve_data_path(labels), classes)?
        }
        "cifar" => {
            let mut parts = rest.split(',');
            let file = parts
                .next()
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::Usage("cifar spec needs a batch file path".into()))?;
            let mut classes = 10;
            for part in parts {
                match part.split_once('=') {
                    Some(("classes", v)) => classes = parse_usize("classes", v)?,
                    _ => return Err(Error::Usage(format!("unknown cifar field {part:?}"))),
                }
            }
            load_cifar(resolve_data_path(file), classes)?
        }
        other => {
            return Err(Error::Usage(format!(
                "unknown dataset kind {other:?} (expected blobs, idx, or cifar)"
            )));
        }
    };
    let limit = opt.subsample.unwrap_or(default_subsample);
    if limit == 0 || limit >= set.len() {
        Ok(set)
    } else {
        set.subsample(limit, opt.subsample_seed)
    }
}

fn load_model<T: Element>(path: &Path) -> Result<Model<T>> {
    Ok(checkpoint::load::<T>(path)?.model)
}

fn emit(text: &str, out: &Option<PathBuf>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

/// Runs `cmd` at the element type a checkpoint file declares.
macro_rules! dispatch_ckpt {
    ($ckpt:expr, $cmd:ident, $args:expr) => {{
        let bytes = std::fs::read($ckpt)?;
        match checkpoint::peek_dtype(&bytes)? {
            t if t == f32::DTYPE_TAG => $cmd::<f32>($args),
            t if t == f64::DTYPE_TAG => $cmd::<f64>($args),
            t => Err(Error::Format(format!("unknown element tag {t} in checkpoint"))),
        }
    }};
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn parse_objective(
    name: &str,
    mucs_weight: Option<f64>,
    temperature: Option<f64>,
    seed: u64,
) -> Result<Objective> {
    match name.to_ascii_lowercase().as_str() {
        "ce" => Ok(Objective::Ce),
        "mucs" => Ok(Objective::Mucs),
        "ce+mucs" | "cemucs" => Ok(Objective::CeMucs {
            weight: mucs_weight.unwrap_or(1.0),
        }),
        "distill" => Ok(Objective::Distill {
            temperature: temperature.unwrap_or(100.0),
        }),
        "adv" => Ok(Objective::adv_default(seed)),
        other => Err(Error::Usage(format!(
            "unknown objective {other:?} (expected ce, mucs, ce+mucs, distill, or adv)"
        ))),
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    match args.dtype.as_str() {
        "f32" => run_train::<f32>(args),
        "f64" => run_train::<f64>(args),
        other => Err(Error::Usage(format!(
            "dtype must be f32 or f64, got {other:?}"
        ))),
    }
}

fn run_train<T: Element>(args: &TrainArgs) -> Result<()> {
    let arch = ArchSpec::parse(&args.arch)?;
    let data = load_data::<T>(&args.data, 0)?;

    let mut cfg = match &args.config {
        Some(path) => serde_json::from_str::<TrainConfig>(&std::fs::read_to_string(path)?)?,
        None => TrainConfig::new(Objective::Ce, 0),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    match (&args.objective, &args.config) {
        (Some(name), _) => {
            cfg.objective = parse_objective(name, args.mucs_weight, args.temperature, cfg.seed)?;
        }
        (None, None) => {
            return Err(Error::Usage(
                "--objective is required unless --config supplies one".into(),
            ));
        }
        (None, Some(_)) => {}
    }
    if let Some(v) = args.iters {
        cfg.max_iterations = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.adam.learning_rate = v;
    }
    if let Some(v) = args.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = &args.vanish_stop {
        cfg.vanish_stop = match v.as_str() {
            "none" => None,
            s => Some(parse_f64("vanish-stop", s)?),
        };
    }
    cfg.validate()?;

    let init_seed = args.init_seed.unwrap_or(cfg.seed);
    let model = arch.build::<T>(init_seed)?;
    let (model, log) = train(model, &data, &cfg)?;

    checkpoint::save(&args.out, &model, None)?;
    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| args.out.with_extension("log.jsonl"));
    std::fs::write(&log_path, log.to_jsonl()?)?;

    if let Some(last) = log.records.last() {
        println!(
            "final: iteration {} loss {:.6} clean {:.4} vanished {:.4}",
            last.iteration, last.loss, last.clean_accuracy, last.vanished_fraction
        );
    }
    println!(
        "wrote {} ({}, {} params) and {}",
        args.out.display(),
        T::NAME,
        model.param_count(),
        log_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// attack / eval / logits-stats / gradcheck
// ---------------------------------------------------------------------------

fn cmd_attack(args: &AttackArgs) -> Result<()> {
    dispatch_ckpt!(&args.ckpt, run_attack_cmd, args)
}

fn run_attack_cmd<T: Element>(args: &AttackArgs) -> Result<()> {
    let model = load_model::<T>(&args.ckpt)?;
    let data = load_data::<T>(&args.data, 1280)?;
    let kind = AttackKind::parse(&args.kind)?;
    let report = evaluate_batched(&model, &data, &[(kind, args.attack.config())], args.batch)?;
    let outcome = &report.attacks[0];
    let stats = serde_json::json!({
        "model": report.model_id,
        "model_iteration": report.model_iteration,
        "dtype": report.dtype,
        "dataset": report.dataset,
        "n_examples": report.n_examples,
        "clean_accuracy": report.clean_accuracy,
        "vanished_fraction": report.vanished_fraction,
        "attack": outcome,
    });
    emit(&serde_json::to_string_pretty(&stats)?, &args.out)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    dispatch_ckpt!(&args.ckpt, run_eval, args)
}

fn parse_attack_list(args: &EvalArgs) -> Result<Vec<(AttackKind, AttackConfig)>> {
    if args.attacks == "none" || args.attacks.is_empty() {
        return Ok(Vec::new());
    }
    let mut list = Vec::new();
    for (index, item) in args.attacks.split(',').enumerate() {
        let (name, iters) = match item.split_once(':') {
            Some((n, i)) => (n, Some(parse_usize("attack iterations", i)?)),
            None => (item, None),
        };
        let kind = AttackKind::parse(name)?;
        let mut cfg = AttackConfig::standard(args.eps, args.seed + index as u64);
        if let Some(step) = args.step {
            cfg.step_size = step;
        }
        if let Some(iters) = iters {
            cfg.iterations = iters;
        }
        list.push((kind, cfg));
    }
    Ok(list)
}

fn run_eval<T: Element>(args: &EvalArgs) -> Result<()> {
    let model = load_model::<T>(&args.ckpt)?;
    let data = load_data::<T>(&args.data, 1280)?;
    let attacks = parse_attack_list(args)?;
    let report = evaluate_batched(&model, &data, &attacks, args.batch)?;
    let rendered = if args.text {
        report.to_text()
    } else {
        report.to_json()?
    };
    emit(&rendered, &args.out)
}

fn cmd_logits_stats(args: &LogitsStatsArgs) -> Result<()> {
    dispatch_ckpt!(&args.ckpt, run_logits_stats, args)
}

fn run_logits_stats<T: Element>(args: &LogitsStatsArgs) -> Result<()> {
    let model = load_model::<T>(&args.ckpt)?;
    let data = load_data::<T>(&args.data, 1280)?;
    emit(&logits_stats(&model, &data)?.to_csv(), &args.out)
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let report = gradcheck::run_suite(args.seed)?;
    if args.verbose {
        for case in &report.cases {
            println!("{:>12.3e}  {}", case.max_rel_err, case.name);
        }
    }
    let failures = report.failures();
    if failures.is_empty() {
        println!(
            "gradcheck: {} cases within tolerance (seed {})",
            report.cases.len(),
            args.seed
        );
        Ok(())
    } else {
        for f in &failures {
            eprintln!(
                "FAIL {}: max relative error {:.3e} exceeds {:.0e}",
                f.name, f.max_rel_err, f.tolerance
            );
        }
        Err(Error::Usage(format!(
            "{} of {} gradient checks failed",
            failures.len(),
            report.cases.len()
        )))
    }
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Attack(args) => cmd_attack(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::LogitsStats(args) => cmd_logits_stats(args),
        Cmd::Gradcheck(args) => cmd_gradcheck(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
