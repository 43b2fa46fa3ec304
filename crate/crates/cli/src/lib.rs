//! Command-line front end: reads claim files, runs one estimator family per
//! subcommand and writes `<stem>_<subcommand>.csv` (plus `.json` or `.svg`)
//! into the output directory.
//!
//! Exit codes: 0 on success, 2 on a data or usage error, 3 when an iterative
//! fit does not converge.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub mod commands;
pub mod ingest;
pub mod output;
mod svg;

pub use ingest::{ClaimsFile, IngestionReport};

pub const SEED_ENV: &str = "TAILFORGE_SEED";
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] tailforge::Error),
}

impl CliError {
    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Model(e) if e.is_convergence() => 3,
            _ => 2,
        }
    }

    /// Machine-readable code used in JSON error documents.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Data(_) => "data_error",
            CliError::Io(_) => "io_error",
            CliError::Model(e) => match e {
                tailforge::Error::Domain(_) => "domain_error",
                tailforge::Error::InvalidInput(_) => "invalid_input",
                tailforge::Error::Degenerate(_) => "degenerate_sample",
                tailforge::Error::AllCensored { .. } => "all_censored",
                tailforge::Error::Solver(_) => "solver_error",
                tailforge::Error::Convergence { .. } => "convergence_error",
                tailforge::Error::InfiniteMean { .. } => "infinite_mean",
                tailforge::Error::Bandwidth { .. } => "bandwidth_error",
            },
        }
    }

    pub fn to_json(&self) -> String {
        let doc = serde_json::json!({
            "schema_version": output::SCHEMA_VERSION,
            "error": {
                "code": self.code(),
                "exit_code": self.exit_code(),
                "message": self.to_string(),
            }
        });
        serde_json::to_string(&doc).expect("error serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum OutputFormat {
    /// CSV table only.
    #[default]
    Csv,
    /// CSV table plus a JSON report.
    Json,
    /// CSV table plus an SVG rendering of plot data.
    Svg,
}

#[derive(Debug, Parser)]
#[command(name = "tailforge", version, about = "Tail modelling for (re)insurance claim data")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Output directory.
    #[arg(long, short = 'o', global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
    /// Random seed for simulation; the TAILFORGE_SEED environment variable
    /// takes precedence.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file stem; defaults to the input file stem.
    #[arg(long, global = true)]
    pub stem: Option<String>,
}

/// Input file and column mapping.
#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Delimited text file with one claim per row.
    pub input: PathBuf,
    /// Value column: header name, or 0-based index.
    #[arg(long, default_value = "0")]
    pub value_col: String,
    /// Censoring flag column (1 = censored, 0 = observed).
    #[arg(long)]
    pub flag_col: Option<String>,
    /// Read flags as 1 = observed, 0 = censored.
    #[arg(long)]
    pub invert_flags: bool,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// The file has no header row.
    #[arg(long)]
    pub no_header: bool,
}

impl InputArgs {
    pub fn claims_file(&self) -> Result<ClaimsFile, CliError> {
        if !self.delimiter.is_ascii() {
            return Err(CliError::data("delimiter must be a single ASCII character"));
        }
        Ok(ClaimsFile {
            delimiter: self.delimiter as u8,
            has_header: !self.no_header,
            value: self.value_col.clone(),
            flag: self.flag_col.clone(),
            invert_flags: self.invert_flags,
            covariate: None,
            second: None,
            second_flag: None,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct BivariateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Second-margin (expense) column.
    #[arg(long)]
    pub second_col: String,
    /// Censoring flag column of the second margin.
    #[arg(long)]
    pub second_flag_col: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QqKind {
    /// Pareto QQ plot; the censored version when flags are present.
    Pareto,
    /// Truncated Pareto QQ plot at the fit for `--k`.
    Truncated,
    /// Tempered QQ plot at the adaptive fit.
    Tempered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TemperMethod {
    /// Weighted least squares with adaptive (k, tau) selection.
    Adaptive,
    /// Three-parameter maximum likelihood at `--k`.
    Mle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scores {
    Expected,
    LogPosition,
}

impl From<Scores> for tailforge::tempering::QqScores {
    fn from(s: Scores) -> Self {
        match s {
            Scores::Expected => tailforge::tempering::QqScores::ExpectedExponential,
            Scores::LogPosition => tailforge::tempering::QqScores::LogPosition,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Criterion {
    Aic,
    Bic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PiRuleArg {
    Empirical,
    Plotting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    Empirical,
    KaplanMeier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Biquadratic,
    Epanechnikov,
    Triangular,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Beran,
    UncensoredOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimModel {
    Pareto,
    Truncated,
    Tempered,
    Gp,
    Me,
    Composite,
    Censored,
    Covariate,
    Independent,
    Comonotone,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hill estimates for every k.
    Hill {
        #[command(flatten)]
        input: InputArgs,
        /// Also report the estimate at this k.
        #[arg(long)]
        k: Option<usize>,
    },
    /// QQ plot points.
    Qqplot {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value_t = QqKind::Pareto)]
        kind: QqKind,
        /// Threshold rank for the truncated QQ plot.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Mean excess plot points (Kaplan–Meier based under censoring).
    Meplot {
        #[command(flatten)]
        input: InputArgs,
    },
    /// Truncated Pareto fits over a range of k.
    Truncfit {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 10)]
        k_min: usize,
        #[arg(long)]
        k_max: Option<usize>,
        /// Rank for the summary fit and quantiles.
        #[arg(long)]
        k: Option<usize>,
        /// Exceedance probabilities for extreme quantiles.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.01, 0.001])]
        p: Vec<f64>,
    },
    /// Truncation test p-values for every k.
    Trunctest {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Tempered Pareto fit.
    Temperfit {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value_t = TemperMethod::Adaptive)]
        method: TemperMethod,
        /// Rank for the MLE fit, or the largest rank for the adaptive search.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 10)]
        k_min: usize,
        /// Tempering grid; defaults to 0.1, 0.2, ..., 2.0.
        #[arg(long, value_delimiter = ',')]
        tau_grid: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = Scores::Expected)]
        scores: Scores,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.01, 0.001])]
        p: Vec<f64>,
    },
    /// Kaplan–Meier survival curve.
    Km {
        #[command(flatten)]
        input: InputArgs,
    },
    /// Censored Hill, Worms and censored moment estimates for every k.
    Censfit {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.01, 0.001])]
        p: Vec<f64>,
    },
    /// Mixed Erlang body spliced with a generalized Pareto tail.
    Splicefit {
        #[command(flatten)]
        input: InputArgs,
        /// Splice at the k-th largest observation.
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 10)]
        init_m: usize,
        #[arg(long)]
        spread: Option<u32>,
        #[arg(long, value_enum, default_value_t = Criterion::Aic)]
        criterion: Criterion,
        #[arg(long, value_enum, default_value_t = PiRuleArg::Empirical)]
        pi_rule: PiRuleArg,
        /// Lower truncation point of the data.
        #[arg(long, default_value_t = 0.0)]
        lower: f64,
    },
    /// Premiums, VaR and CTE of a fitted composite model.
    Premium {
        /// Composite model JSON written by `splicefit`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        retention: f64,
        /// Layer limit; `inf` for an unlimited layer.
        #[arg(long, default_value = "inf")]
        limit: String,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.95, 0.99, 0.995, 0.999])]
        levels: Vec<f64>,
    },
    /// Pickands dependence function of a censored bivariate sample.
    Pickands {
        #[command(flatten)]
        input: BivariateArgs,
        #[arg(long, default_value_t = 99)]
        grid: usize,
        /// Clamp estimates into the Pickands bounds.
        #[arg(long)]
        project: bool,
    },
    /// Reinsurer pure premium for a (loss, expense) sample.
    Bipremium {
        #[command(flatten)]
        input: BivariateArgs,
        #[arg(long)]
        retention: f64,
        #[arg(long, default_value = "inf")]
        limit: String,
        #[arg(long, value_enum, default_value_t = WeightingArg::Empirical)]
        weighting: WeightingArg,
    },
    /// Covariate-local tail index and quantile.
    Regress {
        #[command(flatten)]
        input: InputArgs,
        /// Covariate column.
        #[arg(long)]
        covariate_col: String,
        /// Covariate values at which to estimate.
        #[arg(long, value_delimiter = ',', required = true)]
        x0: Vec<f64>,
        /// Kernel bandwidth (no automatic choice).
        #[arg(long)]
        bandwidth: f64,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0.01)]
        p: f64,
        #[arg(long, value_enum, default_value_t = KernelArg::Biquadratic)]
        kernel: KernelArg,
        #[arg(long, value_enum, default_value_t = SchemeArg::Beran)]
        weights: SchemeArg,
    },
    /// Seeded sample from a named model.
    Simulate {
        #[arg(long, value_enum)]
        model: SimModel,
        #[arg(long)]
        n: usize,
        /// Tail index (Pareto, truncated, GP, censored, bivariate first margin).
        #[arg(long, default_value_t = 0.5)]
        xi: f64,
        /// Second tail index: censoring variable, second margin, or the
        /// covariate model index at x = 1.
        #[arg(long, default_value_t = 1.0)]
        xi2: f64,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Truncation point of the truncated Pareto.
        #[arg(long)]
        upper: Option<f64>,
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.01)]
        beta: f64,
        #[arg(long, default_value_t = 0.7)]
        tau: f64,
        /// GP threshold and scale.
        #[arg(long, default_value_t = 1.0)]
        threshold: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Mixed Erlang shapes, weights and rate.
        #[arg(long, value_delimiter = ',')]
        shapes: Option<Vec<u32>>,
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1.0)]
        rate: f64,
        /// Composite model JSON for `--model composite`.
        #[arg(long)]
        model_file: Option<PathBuf>,
    },
}

impl Cli {
    /// Parses an argument list whose first item is the program name.
    pub fn from_args<I, T>(args: I) -> Result<Self, CliError>
    where
        I: IntoIterator<Item = T>,
        T: Into<std::ffi::OsString> + Clone,
    {
        Cli::try_parse_from(args).map_err(|e| CliError::data(e.to_string()))
    }
}

/// Seed from the environment, then the flag, then the default.
pub fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| CliError::data(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(flag.unwrap_or(DEFAULT_SEED)),
    }
}

pub(crate) fn stem_of(path: &Path) -> String {
    path.file_stem().map_or_else(|| "output".into(), |s| s.to_string_lossy().into_owned())
}

/// What a run wrote and what it has to say.
#[derive(Debug, Clone, Default)]
pub struct Execution {
    pub written: Vec<PathBuf>,
    /// Ingestion description and warnings, for stderr.
    pub diagnostics: Vec<String>,
    /// `key: value` summary lines, for stdout (empty for JSON output).
    pub summary: Vec<String>,
}

/// Runs the parsed command line and writes its output files without printing.
pub fn execute(cli: &Cli) -> Result<Execution, CliError> {
    let (report, default_stem, extra) = commands::dispatch(&cli.command, &cli.global)?;
    let mut diagnostics = Vec::new();
    if let Some(ing) = &report.ingestion {
        diagnostics.extend(ing.warnings.iter().cloned());
        diagnostics.push(ing.describe());
    }
    diagnostics.extend(report.warnings.iter().cloned());
    let stem = cli.global.stem.clone().unwrap_or(default_stem);
    let mut written = output::emit(&report, &cli.global.out_dir, &stem, cli.global.format)?;
    for (suffix, contents) in extra {
        let p = cli.global.out_dir.join(format!("{stem}_{suffix}"));
        output::write_atomic(&p, &contents)?;
        written.push(p);
    }
    let summary = if cli.global.format == OutputFormat::Json {
        Vec::new()
    } else {
        report.summary.iter().map(|(k, v)| format!("{k}: {v}")).collect()
    };
    Ok(Execution { written, diagnostics, summary })
}

/// Runs the parsed command line, writing its outputs and printing diagnostics
/// and the summary. Returns the paths written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let ex = execute(cli)?;
    for line in &ex.diagnostics {
        eprintln!("{line}");
    }
    for line in &ex.summary {
        println!("{line}");
    }
    Ok(ex.written)
}
