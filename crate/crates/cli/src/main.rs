//! `srforge`: generate corpora, train, predict, evaluate and inspect models.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use srforge_core::datagen::DataError;
use srforge_core::model::ModelError;
use srforge_core::nn::NnError;
use srforge_core::train::TrainError;

use config::UsageError;

#[derive(Parser, Debug)]
#[command(name = "srforge", version, about = "Symbolic regression with transformers")]
struct Cli {
    /// Flat `key = value` configuration file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads [default: 1].
    #[arg(long, global = true, env = "SRFORGE_THREADS")]
    threads: Option<usize>,
    /// Extra `key=value` override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample skeletons, realize datasets and write a corpus directory.
    Generate(GenerateArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Decode the expression of one table.
    Predict(PredictArgs),
    /// Run the evaluation protocol over a problem directory.
    Evaluate(EvaluateArgs),
    /// Closed-form and allocated parameter counts of the three encoders.
    CountParams(CountArgs),
    /// Tree edit distance between two pre-order token sequences.
    Ted(TedArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n_raw: Option<usize>,
    #[arg(long)]
    n_realizations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// `desk` (64/2/2, batch 64) or `paper` (256/4/8, batch 1024).
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    n_enc: Option<usize>,
    #[arg(long)]
    n_dec: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// mlp, att or mix.
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    label_smoothing: Option<f64>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    p_drop: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    warmup_steps: Option<u64>,
    #[arg(long)]
    lr_scale: Option<f64>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// Continue from `<out>/model.ckpt`.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Whitespace table: variable columns and the target column.
    #[arg(long)]
    input: Option<PathBuf>,
    /// `last` or a 1-based column number.
    #[arg(long)]
    target: Option<String>,
    /// Only greedy decoding (width 1) is supported.
    #[arg(long)]
    beam: Option<usize>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory with `easy/`, `medium/` and `hard/` subdirectories.
    #[arg(long)]
    problems: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Predict the ground truth itself instead of loading a model.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    n_obs: Option<usize>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct CountArgs {
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct TedArgs {
    pred: String,
    truth: String,
}

fn pair(key: &str, value: Option<impl ToString>) -> Option<(String, String)> {
    value.map(|v| (key.to_string(), v.to_string()))
}

fn path(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

impl ModelArgs {
    fn pairs(&self) -> Vec<Option<(String, String)>> {
        vec![
            pair("profile", self.profile.as_ref()),
            pair("d_model", self.d_model),
            pair("n_enc", self.n_enc),
            pair("n_dec", self.n_dec),
            pair("heads", self.heads),
        ]
    }
}

fn overrides(cli: &Cli) -> anyhow::Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for s in &cli.set {
        let mut parsed = config::parse_pairs(s)?;
        if parsed.len() != 1 {
            return Err(config::usage(format!("--set expects one key=value, got `{s}`")));
        }
        out.append(&mut parsed);
    }
    let flags = match &cli.command {
        Command::Generate(a) => vec![
            pair("out", path(&a.out)),
            pair("n_raw", a.n_raw),
            pair("n_realizations", a.n_realizations),
            pair("seed", a.seed),
        ],
        Command::Train(a) => {
            let mut v = vec![
                pair("corpus", path(&a.corpus)),
                pair("out", path(&a.out)),
                pair("encoder", a.encoder.as_ref()),
                pair("label_smoothing", a.label_smoothing),
                pair("p_drop", a.p_drop),
                pair("batch_size", a.batch_size),
                pair("epochs", a.epochs),
                pair("warmup_steps", a.warmup_steps),
                pair("lr_scale", a.lr_scale),
                pair("max_steps", a.max_steps),
                pair("resume", a.resume.then_some(true)),
                pair("seed", a.seed),
            ];
            v.extend(a.model.pairs());
            v
        }
        Command::Predict(a) => vec![
            pair("checkpoint", path(&a.checkpoint)),
            pair("input", path(&a.input)),
            pair("target", a.target.as_ref()),
            pair("beam", a.beam),
        ],
        Command::Evaluate(a) => vec![
            pair("checkpoint", path(&a.checkpoint)),
            pair("problems", path(&a.problems)),
            pair("out", path(&a.out)),
            pair("oracle", a.oracle.then_some(true)),
            pair("repeats", a.repeats),
            pair("n_obs", a.n_obs),
            pair("target", a.target.as_ref()),
            pair("seed", a.seed),
        ],
        Command::CountParams(a) => a.model.pairs(),
        Command::Ted(_) => Vec::new(),
    };
    out.extend(flags.into_iter().flatten());
    if let Some(t) = cli.threads {
        out.push(("threads".into(), t.to_string()));
    }
    Ok(out)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::Ted(a) = &cli.command {
        return commands::ted(&a.pred, &a.truth);
    }
    let pairs = overrides(&cli)?;
    let file = cli.config.as_deref();
    let cfg = match &cli.command {
        Command::Generate(_) => config::RunConfig::resolve("generate", commands::generate_defaults, file, pairs)?,
        Command::Train(_) => config::RunConfig::resolve("train", commands::train_defaults, file, pairs)?,
        Command::Predict(_) => config::RunConfig::resolve("predict", commands::predict_defaults, file, pairs)?,
        Command::Evaluate(_) => config::RunConfig::resolve("evaluate", commands::evaluate_defaults, file, pairs)?,
        Command::CountParams(_) => config::RunConfig::resolve("count-params", commands::count_defaults, file, pairs)?,
        Command::Ted(_) => unreachable!(),
    };
    log::info!("resolved configuration:\n{}", cfg.render().trim_end());
    let threads: usize = cfg.get("threads")?;
    if threads == 0 {
        return Err(config::usage("threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| config::usage(format!("thread pool: {e}")))?;
    match &cli.command {
        Command::Generate(_) => commands::generate(&cfg),
        Command::Train(_) => commands::train(&cfg),
        Command::Predict(_) => commands::predict(&cfg),
        Command::Evaluate(_) => commands::evaluate(&cfg),
        Command::CountParams(_) => commands::count_params(&cfg),
        Command::Ted(_) => unreachable!(),
    }
}

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::Config(_) => 1,
        ModelError::IncompleteDecode(_) => 3,
        ModelError::Nn(n) => nn_code(n),
        _ => 2,
    }
}

fn nn_code(e: &NnError) -> u8 {
    match e {
        NnError::Config(_) => 1,
        _ => 2,
    }
}

/// Exit code of an error: the first error in the chain with a known class.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return model_code(e);
        }
        if let Some(e) = cause.downcast_ref::<NnError>() {
            return nn_code(e);
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::Config(_) => 1,
                TrainError::NonFiniteLoss { .. } => 3,
                TrainError::Model(m) => model_code(m),
                TrainError::Nn(n) => nn_code(n),
                _ => 2,
            };
        }
        if let Some(DataError::InvalidConfig(_)) = cause.downcast_ref::<DataError>() {
            return 1;
        }
        if let Some(srforge_core::evalbench::EvalError::Model(m)) = cause.downcast_ref() {
            return model_code(m);
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
