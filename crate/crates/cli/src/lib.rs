//! Command-line front end: `train`, `predict` and `evaluate`.
//!
//! Exit codes: 0 success, 2 bad flags, 3 parse, validation or configuration
//! errors, 4 I/O errors.

pub mod model_file;

use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use plrank::booster::TrainTrace;
use plrank::listmle::{self, LinearModel};
use plrank::metrics::{evaluate, DegeneratePolicy, EvalReport};
use plrank::tree::SplitMode;
use plrank::{parse_dataset, train_with_validation, Dataset, Ensemble, Error, Loss, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Env var consulted when `--threads` is absent.
pub const THREADS_ENV: &str = "PLRANK_THREADS";

#[derive(Debug, Parser)]
#[command(name = "plrank", version, about = "Plackett-Luce boosted ranking")]
pub struct Cli {
    /// Worker threads (default: PLRANK_THREADS, else all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a ranking model.
    Train(TrainArgs),
    /// Score a LETOR file with a saved model.
    Predict(PredictArgs),
    /// Compute NDCG@K and ERR for a score file.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum LossArg {
    Plrank,
    Mart1,
    Mart2,
    Cmart1,
    ListmleLinear,
}

impl LossArg {
    fn tree_loss(self) -> Option<Loss> {
        match self {
            LossArg::Plrank => Some(Loss::PlRank),
            LossArg::Mart1 => Some(Loss::Mart1),
            LossArg::Mart2 => Some(Loss::Mart2),
            LossArg::Cmart1 => Some(Loss::CMart1),
            LossArg::ListmleLinear => None,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long, value_enum, default_value = "plrank")]
    pub loss: LossArg,
    #[arg(long, default_value_t = 1000)]
    pub trees: usize,
    #[arg(long, default_value_t = 30)]
    pub leaves: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub topk: usize,
    /// Ground-truth permutations sampled per query.
    #[arg(long, default_value_t = 1)]
    pub objectives: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long = "min-leaf", default_value_t = 1)]
    pub min_leaf: usize,
    /// Split on uniform bin edges instead of every midpoint (256 bins when
    /// given without a value).
    #[arg(long, num_args = 0..=1, default_missing_value = "256")]
    pub histogram_bins: Option<usize>,
    /// Optimizer iteration cap for `listmle-linear`.
    #[arg(long, default_value_t = 100)]
    pub iterations: usize,
    /// Background model whose scores the new trees start from.
    #[arg(long = "init-model")]
    pub init_model: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Reject documents with features the model was not trained on.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// One score per document, in file order.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,3,10")]
    pub ndcg: Vec<usize>,
    /// Also report ERR.
    #[arg(long)]
    pub err: bool,
    /// NDCG of queries whose documents all have grade 0: zero, one or skip.
    #[arg(long, default_value = "zero")]
    pub degenerate: String,
    /// Maximum grade for ERR (default: largest grade in the data).
    #[arg(long)]
    pub gmax: Option<u32>,
    /// Print `key=value` lines instead of a table.
    #[arg(long)]
    pub kv: bool,
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut (dyn Write + Send), stderr: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let target: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    let threads = match cli.threads {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => match v.trim().parse() {
                Ok(n) => n,
                Err(_) => {
                    let _ = writeln!(stderr, "error: {THREADS_ENV}=`{v}` is not a thread count");
                    return EXIT_USAGE;
                }
            },
            Err(_) => 0,
        },
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            let _ = writeln!(stderr, "error: cannot start thread pool: {e}");
            return EXIT_IO;
        }
    };
    let result = pool.install(|| match &cli.command {
        Command::Train(a) => cmd_train(a, stdout),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a, stdout),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Io(_) => EXIT_IO,
        Error::Parse { .. } | Error::Validation(_) | Error::Config(_) => EXIT_INPUT,
    }
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset, Error> {
    let file = File::open(path).map_err(|e| with_path(path, e.into()))?;
    parse_dataset(BufReader::new(file)).map_err(|e| with_path(path, e))
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| with_path(path, e.into()))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| with_path(path, e.into()))
}

pub fn load_ensemble(path: &Path) -> Result<Ensemble, Error> {
    model_file::read_model(&read_text(path)?).map_err(|e| with_path(path, e))
}

fn write_trace(out: &mut dyn Write, trace: &TrainTrace) -> Result<(), Error> {
    writeln!(out, "iter=0 objective={}", trace.initial_objective)?;
    write!(out, "{trace}")?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs, stdout: &mut dyn Write) -> Result<(), Error> {
    let dataset = load_dataset(&args.train)?;
    let valid = args.valid.as_deref().map(load_dataset).transpose()?;

    let Some(loss) = args.loss.tree_loss() else {
        if args.init_model.is_some() {
            return Err(Error::Config(
                "--init-model applies to tree ensembles only".into(),
            ));
        }
        let fit = listmle::train_linear(
            &dataset,
            args.topk,
            args.objectives,
            args.iterations,
            args.seed,
        )?;
        for (t, v) in fit.objectives.iter().enumerate() {
            writeln!(stdout, "iter={t} objective={v}")?;
        }
        if let Some(v) = &valid {
            let x = v.dense_matrix(v.max_feature_index)?;
            let scores = fit.model.predict_matrix(&x);
            let report = evaluate(
                v,
                &scores,
                &[args.topk],
                v.max_grade,
                DegeneratePolicy::Zero,
            )?;
            writeln!(
                stdout,
                "valid_ndcg@{}={}",
                args.topk, report.ndcg_at[&args.topk]
            )?;
        }
        return write_text(&args.out, &fit.model.to_text());
    };

    let split_mode = match args.histogram_bins {
        Some(bins) => SplitMode::Histogram { bins },
        None => SplitMode::Exact,
    };
    let init_model = args.init_model.as_deref().map(load_ensemble).transpose()?;
    let config = TrainConfig {
        loss,
        trees: args.trees,
        leaves: args.leaves,
        learning_rate: args.lr,
        top_k: args.topk,
        objectives: args.objectives,
        seed: args.seed,
        min_leaf_docs: args.min_leaf,
        split_mode,
        init_model,
    };
    let (ensemble, trace) = train_with_validation(&dataset, &config, valid.as_ref())?;
    write_trace(stdout, &trace)?;
    write_text(&args.out, &model_file::write_model(&ensemble))
}

enum AnyModel {
    Trees(Ensemble),
    Linear(LinearModel),
}

impl AnyModel {
    fn feature_count(&self) -> usize {
        match self {
            AnyModel::Trees(e) => e.meta.feature_count.max(e.max_feature()),
            AnyModel::Linear(l) => l.weights.len(),
        }
    }
}

fn load_any_model(path: &Path) -> Result<AnyModel, Error> {
    let text = read_text(path)?;
    let model = if model_file::is_ensemble(&text) {
        model_file::read_model(&text).map(AnyModel::Trees)
    } else {
        LinearModel::from_text(&text).map(AnyModel::Linear)
    };
    model.map_err(|e| with_path(path, e))
}

/// Scores every document of `dataset`, returned in file order.
pub fn predict_file_order(
    model_path: &Path,
    dataset: &Dataset,
    strict: bool,
) -> Result<Vec<f64>, Error> {
    let model = load_any_model(model_path)?;
    let m = model.feature_count();
    if strict && dataset.max_feature_index > m {
        return Err(Error::Validation(format!(
            "data uses feature {} but the model knows {m} features",
            dataset.max_feature_index
        )));
    }
    // unknown features are read but never consulted
    let x = dataset.dense_matrix(m.max(dataset.max_feature_index))?;
    let scores = match &model {
        AnyModel::Trees(e) => e.predict_matrix(&x)?,
        AnyModel::Linear(l) => l.predict_matrix(&x),
    };
    dataset.group_to_file_order(&scores)
}

pub fn cmd_predict(args: &PredictArgs) -> Result<(), Error> {
    let dataset = load_dataset(&args.data)?;
    let scores = predict_file_order(&args.model, &dataset, args.strict)?;
    let mut text = String::with_capacity(scores.len() * 24);
    for s in scores {
        text.push_str(&format!("{s:.16e}\n"));
    }
    write_text(&args.out, &text)
}

/// Parses one score per non-blank line.
pub fn parse_scores(text: &str) -> Result<Vec<f64>, Error> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("`{}` is not a score", l.trim()),
            })
        })
        .collect()
}

pub fn evaluate_files(args: &EvaluateArgs) -> Result<EvalReport, Error> {
    let dataset = load_dataset(&args.data)?;
    let scores = parse_scores(&read_text(&args.scores)?).map_err(|e| with_path(&args.scores, e))?;
    let policy: DegeneratePolicy = args.degenerate.parse()?;
    let scores = dataset.file_to_group_order(&scores)?;
    evaluate(
        &dataset,
        &scores,
        &args.ndcg,
        args.gmax.unwrap_or(dataset.max_grade),
        policy,
    )
}

pub fn cmd_evaluate(args: &EvaluateArgs, stdout: &mut dyn Write) -> Result<(), Error> {
    let report = evaluate_files(args)?;
    let rendered = if args.kv {
        report.to_key_values()
    } else {
        report.to_string()
    };
    for line in rendered.lines() {
        if !args.err && (line.starts_with("err=") || line.starts_with("ERR")) {
            continue;
        }
        writeln!(stdout, "{line}")?;
    }
    Ok(())
}
