use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pgee::simulation::study::Design;
use pgee::{CorrelationKind, Family, PenaltyFamily, SelectionRule};

#[derive(Debug, Parser)]
#[command(name = "pgee", version, about = "Penalized GEE for longitudinal data")]
pub struct Cli {
    /// Worker threads for cross-validation, bootstrap and replicate loops.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Destination file; stdout when omitted.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model; without --lambda the tuning parameters are chosen by cross-validation.
    Fit(FitArgs),
    /// Leave-one-subject-out cross-validation over a (λ, α) grid.
    Cv(CvArgs),
    /// Coefficient paths over a decreasing λ sequence at fixed α.
    Path(PathArgs),
    /// Draw one dataset from a simulation design.
    Simulate(SimulateArgs),
    /// Run a Monte-Carlo study.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Long-format CSV with one row per observation.
    #[arg(long)]
    pub input: PathBuf,

    #[arg(long, default_value = "subject")]
    pub subject_col: String,

    #[arg(long, default_value = "time")]
    pub time_col: String,

    #[arg(long, default_value = "y")]
    pub response_col: String,

    #[arg(long, default_value = "gaussian", value_parser = parse_from_str::<Family>)]
    pub family: Family,

    #[arg(long, default_value = "independence", value_parser = parse_from_str::<CorrelationKind>)]
    pub working: CorrelationKind,
}

#[derive(Debug, Clone, Args)]
pub struct PenaltyArgs {
    /// none, lasso, ridge, en, scad or scad_l2.
    #[arg(long, value_parser = parse_from_str::<PenaltyFamily>)]
    pub penalty: PenaltyFamily,

    /// SCAD shape parameter.
    #[arg(long)]
    pub a: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// A count of log-spaced values below λ_max, or a comma-separated list.
    #[arg(long, value_parser = parse_grid)]
    pub grid_lambdas: Option<GridSpec>,

    /// A count of evenly spaced values on [0, 1], or a comma-separated list.
    #[arg(long, value_parser = parse_grid)]
    pub grid_alphas: Option<GridSpec>,

    #[arg(long, default_value = "min", value_parser = parse_from_str::<SelectionRule>)]
    pub rule: SelectionRule,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub penalty: PenaltyArgs,

    #[arg(long)]
    pub lambda: Option<f64>,

    #[arg(long)]
    pub alpha: Option<f64>,

    #[arg(long, conflicts_with_all = ["lambda", "alpha"])]
    pub lambda1: Option<f64>,

    #[arg(long, conflicts_with_all = ["lambda", "alpha"])]
    pub lambda2: Option<f64>,

    #[command(flatten)]
    pub grid: GridArgs,

    /// Number of cluster-bootstrap replicates for standard errors.
    #[arg(long)]
    pub bootstrap: Option<usize>,

    #[arg(long, value_parser = parse_seed)]
    pub seed: Option<Seed>,
}

#[derive(Debug, Clone, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub penalty: PenaltyArgs,

    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PathArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub penalty: PenaltyArgs,

    #[arg(long)]
    pub alpha: Option<f64>,

    /// A count of log-spaced values below λ_max, or a comma-separated list.
    #[arg(long, value_parser = parse_grid)]
    pub grid_lambdas: Option<GridSpec>,

    /// SVG file with the ten largest coefficient paths.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_from_str::<Design>)]
    pub design: Design,

    /// Overrides the design's number of subjects.
    #[arg(long)]
    pub n: Option<usize>,

    #[arg(long, value_parser = parse_seed)]
    pub seed: Seed,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// JSON study configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[arg(long, value_parser = parse_from_str::<Design>)]
    pub design: Option<Design>,

    #[arg(long)]
    pub replicates: Option<usize>,

    /// Overrides the design's number of subjects.
    #[arg(long)]
    pub n: Option<usize>,

    /// Comma-separated penalty families.
    #[arg(long, value_delimiter = ',', value_parser = parse_from_str::<PenaltyFamily>)]
    pub penalties: Option<Vec<PenaltyFamily>>,

    #[arg(long, value_parser = parse_count)]
    pub grid_lambdas: Option<usize>,

    #[arg(long, value_parser = parse_grid)]
    pub grid_alphas: Option<GridSpec>,

    #[arg(long, value_parser = parse_from_str::<SelectionRule>)]
    pub rule: Option<SelectionRule>,

    #[arg(long, value_parser = parse_from_str::<CorrelationKind>)]
    pub working: Option<CorrelationKind>,

    #[arg(long)]
    pub a: Option<f64>,

    #[arg(long, value_parser = parse_seed)]
    pub seed: Seed,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    Count(usize),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Seed {
    Fixed(u64),
    Auto,
}

fn parse_from_str<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

fn parse_count(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(k) if k > 0 => Ok(k),
        _ => Err(format!("expected a positive count, got `{s}`")),
    }
}

fn parse_grid(s: &str) -> Result<GridSpec, String> {
    if s.contains(',') || s.contains('.') || s.contains('e') {
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad grid value `{v}`")))
            .collect::<Result<Vec<_>, _>>()
            .map(GridSpec::Values)
    } else {
        parse_count(s).map(GridSpec::Count)
    }
}

fn parse_seed(s: &str) -> Result<Seed, String> {
    if s.eq_ignore_ascii_case("auto") {
        Ok(Seed::Auto)
    } else {
        s.parse()
            .map(Seed::Fixed)
            .map_err(|_| format!("expected an unsigned integer or `auto`, got `{s}`"))
    }
}
