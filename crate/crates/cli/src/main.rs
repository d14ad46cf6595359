use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use unbiased_softmax::data::{parse_sparse_file, preprocess, DataError, Dataset, IndexBase, PreprocessOptions};
use unbiased_softmax::harness::{
    bench, compare_formulations, evaluate, load_model, save_model, train, tune, write_records, write_records_file,
    EpochRecord, HarnessError, DEFAULT_GRID,
};
use unbiased_softmax::objective::Formulation;
use unbiased_softmax::optimizers::{Method, OptimizerConfig};

const EXIT_ALL_FAILED: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(name = "usoftmax", version, about = "Train softmax models with unbiased double-sum SGD methods")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and preprocess a dataset, print its summary as JSON.
    Ingest {
        #[command(flatten)]
        data: DataArgs,
        /// Write the summary here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pick eta0 from the grid on a subsample.
    Tune {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        method: Method,
        #[command(flatten)]
        opt: OptArgs,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Fraction of the examples used for tuning.
        #[arg(long, default_value_t = 0.1)]
        subsample: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One training run; writes per-epoch metrics as CSV.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        method: Method,
        #[arg(long, allow_hyphen_values = true)]
        eta0: f64,
        #[command(flatten)]
        opt: OptArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Save the final model.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Several methods with shared seeds into one CSV. Methods without an
    /// explicit --eta0 are tuned first.
    Bench {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        method: Vec<Method>,
        #[arg(long)]
        eta0: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[command(flatten)]
        opt: OptArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// U-max in both double-sum formulations over the grid.
    CompareFormulations {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[command(flatten)]
        opt: OptArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the JSON summary here instead of stdout.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Exact log-loss and error rate of a saved model.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Base::Zero)]
    index_base: Base,
    #[arg(long, default_value_t = 10_000)]
    max_features: usize,
    #[arg(long, default_value_t = 100_000)]
    max_examples: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Base {
    #[value(name = "0")]
    Zero,
    #[value(name = "1")]
    One,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct OptArgs {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.9)]
    decay: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    /// Classes per step; defaults to 1 for isgd and 5 otherwise.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    eval_points: usize,
    #[arg(long, default_value = "ours")]
    formulation: Formulation,
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    projection: OnOff,
    /// Upper bound on u_i used instead of the derived one.
    #[arg(long)]
    u_cap: Option<f64>,
    /// Write 0 for elapsed_sec so reruns give identical CSVs.
    #[arg(long)]
    deterministic: bool,
}

impl OptArgs {
    fn config(&self, method: Method, eta0: f64) -> OptimizerConfig {
        let mut c = OptimizerConfig::new(method, eta0);
        c.epochs = self.epochs;
        c.decay = self.decay;
        c.mu = self.mu;
        c.delta = self.delta;
        c.m = self.m.unwrap_or(method.default_m());
        c.seed = self.seed;
        c.eval_points = self.eval_points;
        c.formulation = self.formulation;
        c.projection = matches!(self.projection, OnOff::On);
        c.u_cap = self.u_cap;
        c
    }
}

#[derive(Debug)]
enum CliError {
    Harness(HarnessError),
    Io(PathBuf, std::io::Error),
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        CliError::Harness(e)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Harness(e.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Harness(e) => e.fmt(f),
            CliError::Io(path, e) => write!(f, "{}: {e}", path.display()),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(..) => EXIT_IO,
            CliError::Harness(e) => match e {
                HarnessError::AllFailed { .. } => EXIT_ALL_FAILED,
                HarnessError::Io { .. } | HarnessError::Csv(_) | HarnessError::BadModel(_) => EXIT_IO,
                HarnessError::Data(DataError::Io { .. }) => EXIT_IO,
                HarnessError::Config(_) | HarnessError::EmptyGrid | HarnessError::DimensionMismatch { .. } => {
                    EXIT_CONFIG
                }
                HarnessError::Data(_) => 1,
            },
        }
    }
}

fn load(args: &DataArgs) -> Result<Dataset, CliError> {
    let base = match args.index_base {
        Base::Zero => IndexBase::Zero,
        Base::One => IndexBase::One,
    };
    let raw = parse_sparse_file(&args.data, base)?;
    let name = args.data.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned());
    let opts = PreprocessOptions { max_features: args.max_features, max_examples: args.max_examples };
    Ok(preprocess(&name, &raw, opts)?)
}

/// Opens `path`, or stdout when it is `None`.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| CliError::Io(p.to_path_buf(), e))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<(), CliError> {
    let mut out = sink(path)?;
    let io_err = |e: std::io::Error| CliError::Io(path.map_or_else(|| "<stdout>".into(), Path::to_path_buf), e);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| io_err(e.into()))?;
    writeln!(out).and_then(|_| out.flush()).map_err(io_err)
}

fn write_csv(path: Option<&Path>, records: &[EpochRecord]) -> Result<(), CliError> {
    match path {
        Some(p) => write_records_file(p, records)?,
        None => write_records(std::io::stdout().lock(), records)?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { data, out } => {
            let ds = load(&data)?;
            write_json(out.as_deref(), &ds.summary())
        }
        Command::Tune { data, method, opt, grid, subsample, out } => {
            let ds = load(&data)?;
            let grid = grid.unwrap_or_else(|| DEFAULT_GRID.to_vec());
            let result = tune(&ds, &opt.config(method, grid.first().copied().unwrap_or(1.0)), &grid, subsample)?;
            write_json(out.as_deref(), &result)
        }
        Command::Train { data, method, eta0, opt, out, model_out } => {
            let ds = load(&data)?;
            let run = train(&ds, &opt.config(method, eta0), opt.deterministic)?;
            write_csv(out.as_deref(), &run.records)?;
            if let Some(path) = model_out {
                save_model(&path, &run.state)?;
            }
            if let Some(failure) = run.failure {
                eprintln!("run failed: {failure}");
            }
            Ok(())
        }
        Command::Bench { data, method, eta0, grid, opt, out } => {
            let ds = load(&data)?;
            let grid = grid.unwrap_or_else(|| DEFAULT_GRID.to_vec());
            let mut configs = Vec::with_capacity(method.len());
            for m in method {
                let rate = match eta0 {
                    Some(r) => r,
                    None => {
                        let t = tune(&ds, &opt.config(m, 1.0), &grid, 0.1)?;
                        eprintln!("{m}: tuned eta0 = {}", t.chosen_eta0);
                        t.chosen_eta0
                    }
                };
                configs.push(opt.config(m, rate));
            }
            let runs = bench(&ds, &configs, opt.deterministic)?;
            let records: Vec<EpochRecord> = runs.into_iter().flat_map(|r| r.records).collect();
            write_csv(out.as_deref(), &records)
        }
        Command::CompareFormulations { data, grid, opt, out, summary } => {
            let ds = load(&data)?;
            let grid = grid.unwrap_or_else(|| DEFAULT_GRID.to_vec());
            let (records, result) = compare_formulations(&ds, &opt.config(Method::Umax, 1.0), &grid, opt.deterministic)?;
            write_csv(out.as_deref(), &records)?;
            if out.is_none() && summary.is_none() {
                eprintln!("{}", serde_json::to_string(&result).expect("summary serializes"));
                return Ok(());
            }
            write_json(summary.as_deref(), &result)
        }
        Command::Evaluate { data, model } => {
            let ds = load(&data)?;
            let state = load_model(&model)?;
            write_json(None, &evaluate(&ds, &state)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
