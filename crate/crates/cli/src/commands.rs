use std::fmt::Write as _;
use std::fs;

use anyhow::{anyhow, Context};
use pgee::simulation::bootstrap_se;
use pgee::simulation::study::{run_study, SimReport, StudyConfig};
use pgee::{
    fit_gee, fit_pgee, load_dataset, loso_cv_with_a, penalization_path, select_tuning, standardize_with, ColumnSchema,
    Control, Dataset, Family, Fit, Grid, Model, Penalty, PenaltyConfig, PenaltyFamily, PgeeError, ResponseScaling,
    ScalingInfo, SelectionRule, Surface, TuningGrid, DEFAULT_SCAD_A,
};
use serde::Serialize;

use crate::args::{BenchArgs, CvArgs, DataArgs, FitArgs, Format, GridArgs, GridSpec, PathArgs, Seed, SimulateArgs};
use crate::plot;
use crate::CliError;

type CmdResult = Result<Vec<u8>, CliError>;

fn core(e: PgeeError) -> CliError {
    if e.is_numerical() {
        CliError::Numerical(e.into())
    } else {
        CliError::Usage(e.into())
    }
}

fn resolve_seed(seed: Seed) -> u64 {
    match seed {
        Seed::Fixed(s) => s,
        Seed::Auto => {
            let s = rand::random();
            eprintln!("seed: {s}");
            s
        }
    }
}

/// Standardized data, its scaling and the model.
struct Prepared {
    data: Dataset,
    scaling: ScalingInfo<f64>,
    model: Model,
}

fn prepare(args: &DataArgs) -> Result<Prepared, CliError> {
    let schema = ColumnSchema {
        subject: args.subject_col.clone(),
        time: args.time_col.clone(),
        response: args.response_col.clone(),
        covariates: None,
    };
    let raw = load_dataset(&args.input, &schema)
        .map_err(|e| CliError::Usage(anyhow!(e).context(format!("reading {}", args.input.display()))))?;
    let response = match args.family {
        Family::Gaussian => ResponseScaling::Standardize,
        Family::Binomial => ResponseScaling::Keep,
    };
    let (data, scaling) = standardize_with(&raw, response).map_err(core)?;
    let model = Model::for_family(args.family).with_working(args.working);
    Ok(Prepared { data, scaling, model })
}

fn build_grid(p: &Prepared, family: PenaltyFamily, grid: &GridArgs) -> Result<Grid, CliError> {
    let alphas = match &grid.grid_alphas {
        None => TuningGrid::even_alphas(pgee::tuning::DEFAULT_ALPHA_STEPS),
        Some(GridSpec::Count(1)) => vec![1.0],
        Some(GridSpec::Count(k)) => TuningGrid::even_alphas(k - 1),
        Some(GridSpec::Values(v)) => v.clone(),
    };
    match &grid.grid_lambdas {
        None => TuningGrid::for_data(&p.data, &p.model, family, pgee::tuning::DEFAULT_N_LAMBDA, alphas),
        Some(GridSpec::Count(k)) => TuningGrid::for_data(&p.data, &p.model, family, *k, alphas),
        Some(GridSpec::Values(v)) => TuningGrid::new(v.clone(), alphas),
    }
    .map_err(core)
}

fn tune(p: &Prepared, family: PenaltyFamily, a: f64, grid: &GridArgs) -> Result<Surface, CliError> {
    if family == PenaltyFamily::None {
        return Err(CliError::Usage(anyhow!("penalty `none` has nothing to tune")));
    }
    let grid = build_grid(p, family, grid)?;
    loso_cv_with_a(&p.data, &p.model, family, &grid, a, &Control::default()).map_err(core)
}

#[derive(Serialize)]
struct CoefficientRow {
    covariate: String,
    /// Non-naive estimate on the standardized scale.
    standardized: f64,
    estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    se: Option<f64>,
}

#[derive(Serialize)]
struct FitReport {
    penalty: PenaltyFamily,
    lambda1: f64,
    lambda2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    intercept: f64,
    working_alpha: f64,
    iterations: usize,
    converged: bool,
    n_active: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap_replicates: Option<usize>,
    coefficients: Vec<CoefficientRow>,
}

pub fn fit(args: &FitArgs, format: Format) -> CmdResult {
    let prepared = prepare(&args.data)?;
    let family = args.penalty.penalty;
    let a = args.penalty.a.unwrap_or(DEFAULT_SCAD_A);
    let config = PenaltyConfig {
        penalty: family,
        lambda: args.lambda,
        alpha: args.alpha,
        lambda1: args.lambda1,
        lambda2: args.lambda2,
        a: args.penalty.a,
    };
    if args.bootstrap.is_some() && args.seed.is_none() {
        return Err(CliError::Usage(anyhow!(
            "--bootstrap needs --seed (an integer or `auto`)"
        )));
    }
    let (spec, tuned): (Penalty, Option<(f64, f64)>) = if config.is_tuned() {
        let spec = if family == PenaltyFamily::None {
            Penalty::none()
        } else {
            config.to_spec().map_err(core)?
        };
        (spec, None)
    } else {
        let surface = tune(&prepared, family, a, &args.grid)?;
        let (lambda, alpha) = select_tuning(&surface, args.grid.rule).map_err(core)?;
        let spec = Penalty::from_reparametrized(family, lambda, alpha, a).map_err(core)?;
        (spec, Some((lambda, alpha)))
    };
    let control = Control::default();
    let fit: Fit = if family == PenaltyFamily::None {
        fit_gee(&prepared.data, &prepared.model, &control)
    } else {
        fit_pgee(&prepared.data, &prepared.model, &spec, &control)
    }
    .map_err(core)?;
    if !fit.converged {
        return Err(CliError::Numerical(anyhow!(
            "solver did not converge within {} iterations",
            control.max_iterations
        )));
    }
    let se = match args.bootstrap {
        None => None,
        Some(b) => {
            let seed = resolve_seed(args.seed.expect("checked above"));
            Some(bootstrap_se(&prepared.data, &prepared.model, &spec, &control, b, seed).map_err(core)?)
        }
    };
    let original = prepared.scaling.coefficients_to_original(&fit.beta_nonnaive);
    let se_original = se.as_ref().map(|s| prepared.scaling.coefficients_to_original(s));
    let coefficients = prepared
        .data
        .covariate_names()
        .iter()
        .enumerate()
        .map(|(j, name)| CoefficientRow {
            covariate: name.clone(),
            standardized: fit.beta_nonnaive[j],
            estimate: original[j],
            se: se_original.as_ref().map(|s| s[j]),
        })
        .collect();
    let report = FitReport {
        penalty: family,
        lambda1: spec.lambda1,
        lambda2: spec.lambda2,
        lambda: tuned.map(|t| t.0).or(args.lambda),
        alpha: tuned.map(|t| t.1).or(args.alpha),
        intercept: prepared.scaling.original_intercept(&fit.beta_nonnaive),
        working_alpha: fit.model.correlation.alpha,
        iterations: fit.iterations,
        converged: fit.converged,
        n_active: fit.n_active(),
        bootstrap_replicates: args.bootstrap,
        coefficients,
    };
    render_fit(&report, format)
}

fn render_fit(r: &FitReport, format: Format) -> CmdResult {
    match format {
        Format::Json => json(r),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in &r.coefficients {
                w.serialize(row).map_err(|e| CliError::Usage(e.into()))?;
            }
            w.into_inner().map_err(|e| CliError::Usage(anyhow!(e.to_string())))
        }
        Format::Table => {
            let mut s = String::new();
            let _ = writeln!(s, "penalty     {}", r.penalty);
            if let (Some(l), Some(a)) = (r.lambda, r.alpha) {
                let _ = writeln!(s, "lambda      {l}");
                let _ = writeln!(s, "alpha       {a}");
            }
            let _ = writeln!(s, "lambda1     {}", r.lambda1);
            let _ = writeln!(s, "lambda2     {}", r.lambda2);
            let _ = writeln!(s, "iterations  {} (converged: {})", r.iterations, r.converged);
            let _ = writeln!(s, "active      {} of {}", r.n_active, r.coefficients.len());
            let _ = writeln!(s, "intercept   {:.6}", r.intercept);
            let _ = writeln!(s);
            let with_se = r.coefficients.iter().any(|c| c.se.is_some());
            let _ = write!(s, "{:<16} {:>14} {:>14}", "covariate", "standardized", "estimate");
            if with_se {
                let _ = write!(s, " {:>14}", "boot. se");
            }
            let _ = writeln!(s);
            for c in &r.coefficients {
                let _ = write!(s, "{:<16} {:>14.6} {:>14.6}", c.covariate, c.standardized, c.estimate);
                if let Some(se) = c.se {
                    let _ = write!(s, " {se:>14.6}");
                }
                let _ = writeln!(s);
            }
            Ok(s.into_bytes())
        }
    }
}

#[derive(Serialize)]
struct Choice {
    rule: &'static str,
    lambda: f64,
    alpha: f64,
}

fn choices(surface: &Surface) -> Result<Vec<Choice>, CliError> {
    [(SelectionRule::Min, "min"), (SelectionRule::OneSe, "one-se")]
        .into_iter()
        .map(|(rule, name)| {
            let (lambda, alpha) = select_tuning(surface, rule).map_err(core)?;
            Ok(Choice {
                rule: name,
                lambda,
                alpha,
            })
        })
        .collect()
}

pub fn cv(args: &CvArgs, format: Format) -> CmdResult {
    let prepared = prepare(&args.data)?;
    let a = args.penalty.a.unwrap_or(DEFAULT_SCAD_A);
    let surface = tune(&prepared, args.penalty.penalty, a, &args.grid)?;
    let chosen = choices(&surface)?;
    match format {
        Format::Json => {
            #[derive(Serialize)]
            struct Doc<'a> {
                surface: &'a Surface,
                selected: &'a [Choice],
            }
            json(&Doc {
                surface: &surface,
                selected: &chosen,
            })
        }
        Format::Csv => {
            for c in &chosen {
                eprintln!("{}: lambda={} alpha={}", c.rule, c.lambda, c.alpha);
            }
            let mut out = Vec::new();
            surface.write_csv(&mut out).map_err(core)?;
            Ok(out)
        }
        Format::Table => {
            let mut s = String::new();
            let _ = writeln!(
                s,
                "penalty {}: {} of {} grid points valid",
                surface.family,
                surface.n_valid(),
                surface.points.len()
            );
            for c in &chosen {
                let _ = writeln!(s, "{:<7} lambda {} alpha {}", c.rule, c.lambda, c.alpha);
            }
            let _ = writeln!(s);
            let _ = writeln!(
                s,
                "{:>12} {:>8} {:>14} {:>12} {:>6}",
                "lambda", "alpha", "pl_cv", "se_cv", "valid"
            );
            for (k, p) in surface.points.iter().enumerate() {
                let mark = if Some(k) == surface.min_index { " *" } else { "" };
                let _ = writeln!(
                    s,
                    "{:>12.6} {:>8.4} {:>14.6} {:>12.6} {:>6}{mark}",
                    p.lambda, p.alpha, p.pl_cv, p.se_cv, p.valid
                );
            }
            Ok(s.into_bytes())
        }
    }
}

pub fn path(args: &PathArgs, format: Format) -> CmdResult {
    let prepared = prepare(&args.data)?;
    let family = args.penalty.penalty;
    let a = args.penalty.a.unwrap_or(DEFAULT_SCAD_A);
    let alpha = match (family, args.alpha) {
        (_, Some(al)) => al,
        (PenaltyFamily::Lasso | PenaltyFamily::Scad, None) => 1.0,
        (PenaltyFamily::Ridge, None) => 0.0,
        (f, None) => return Err(CliError::Usage(anyhow!("penalty `{f}` needs --alpha for a path"))),
    };
    let lambdas = match &args.grid_lambdas {
        Some(GridSpec::Values(v)) => v.clone(),
        count => {
            let n = match count {
                Some(GridSpec::Count(k)) => *k,
                _ => pgee::tuning::DEFAULT_N_LAMBDA,
            };
            TuningGrid::for_data(&prepared.data, &prepared.model, family, n, vec![alpha])
                .map_err(core)?
                .lambda_values
        }
    };
    let result = penalization_path(
        &prepared.data,
        &prepared.model,
        family,
        alpha,
        &lambdas,
        a,
        &Control::default(),
    )
    .map_err(core)?;
    if let Some(file) = &args.plot {
        fs::write(file, plot::path_svg(&result, 10))
            .with_context(|| format!("writing {}", file.display()))
            .map_err(CliError::Usage)?;
    }
    match format {
        Format::Json => Ok(result.to_json().map_err(core)?.into_bytes()),
        Format::Csv => {
            let mut out = Vec::new();
            result.write_csv(&mut out).map_err(core)?;
            Ok(out)
        }
        Format::Table => {
            let mut s = String::new();
            let _ = writeln!(s, "penalty {} at alpha {}", family, alpha);
            let _ = write!(s, "{:>12} {:>6}", "lambda", "valid");
            for name in &result.covariate_names {
                let _ = write!(s, " {name:>10}");
            }
            let _ = writeln!(s);
            for (k, l) in result.lambdas.iter().enumerate() {
                let _ = write!(s, "{l:>12.6} {:>6}", result.valid[k]);
                for v in result.coefficients.column(k).iter() {
                    let _ = write!(s, " {v:>10.4}");
                }
                let _ = writeln!(s);
            }
            Ok(s.into_bytes())
        }
    }
}

pub fn simulate(args: &SimulateArgs, format: Format) -> CmdResult {
    if format == Format::Json {
        return Err(CliError::Usage(anyhow!(
            "simulate writes CSV; use --format csv or table"
        )));
    }
    let seed = resolve_seed(args.seed);
    let config = StudyConfig {
        n: args.n,
        ..StudyConfig::with_design(args.design)
    };
    let spec = config.design_spec().map_err(core)?;
    let data = spec.simulate(seed).map_err(core)?;
    let mut out = Vec::new();
    pgee::write_dataset(&data, &mut out, "y").map_err(core)?;
    Ok(out)
}

pub fn bench(args: &BenchArgs, format: Format) -> CmdResult {
    let mut config: StudyConfig = match &args.config {
        Some(file) => {
            let text = fs::read_to_string(file)
                .with_context(|| format!("reading {}", file.display()))
                .map_err(CliError::Usage)?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", file.display()))
                .map_err(CliError::Usage)?
        }
        None => StudyConfig::default(),
    };
    if let Some(d) = args.design {
        config.design = d;
    }
    if let Some(r) = args.replicates {
        config.replicates = r;
    }
    if args.n.is_some() {
        config.n = args.n;
    }
    if let Some(p) = &args.penalties {
        config.penalties = p.clone();
    }
    if let Some(k) = args.grid_lambdas {
        config.n_lambda = k;
    }
    match &args.grid_alphas {
        Some(GridSpec::Count(1)) => config.alphas = vec![1.0],
        Some(GridSpec::Count(k)) => config.alphas = TuningGrid::even_alphas(k - 1),
        Some(GridSpec::Values(v)) => config.alphas = v.clone(),
        None => {}
    }
    if let Some(r) = args.rule {
        config.rule = r;
    }
    if let Some(w) = args.working {
        config.working = w;
    }
    if let Some(a) = args.a {
        config.scad_a = a;
    }
    let seed = resolve_seed(args.seed);
    let report = run_study(&config, seed).map_err(core)?;
    for f in &report.failures {
        eprintln!("replicate {} ({}): {}", f.replicate, f.family, f.message);
    }
    render_report(&report, format)
}

fn render_report(report: &SimReport, format: Format) -> CmdResult {
    match format {
        Format::Json => Ok(report.to_json().map_err(core)?.into_bytes()),
        Format::Csv => {
            let mut out = Vec::new();
            report.write_csv(&mut out).map_err(core)?;
            Ok(out)
        }
        Format::Table => {
            let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            let mut s = String::new();
            let _ = writeln!(
                s,
                "design {}, {} replicates, seed {}",
                report.design.name(),
                report.replicates,
                report.seed
            );
            let _ = writeln!(
                s,
                "{:<8} {:>9} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7} {:>9}",
                "penalty", "ME", "se", "median", "lambda", "alpha", "CD", "ID", "rel.bias"
            );
            for f in &report.summaries {
                let _ = writeln!(
                    s,
                    "{:<8} {:>9.4} {:>9} {:>9.4} {:>9} {:>7} {:>7} {:>7} {:>9}{}",
                    f.family.name(),
                    f.me_mean,
                    opt(f.me_se),
                    f.me_median,
                    opt(f.median_lambda),
                    opt(f.median_alpha),
                    opt(f.cd),
                    opt(f.id),
                    opt(f.rel_bias),
                    if f.incomplete { "  (incomplete)" } else { "" }
                );
            }
            Ok(s.into_bytes())
        }
    }
}

fn json<S: Serialize>(value: &S) -> CmdResult {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Usage(e.into()))?;
    s.push('\n');
    Ok(s.into_bytes())
}
