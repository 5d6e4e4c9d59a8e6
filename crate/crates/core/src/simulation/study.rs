//! Monte-Carlo studies: simulate, standardize, tune by cross-validation,
//! fit and score every penalty family on each replicate.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationKind;
use crate::data::{standardize_with, Cluster, LongitudinalDataset, ResponseScaling};
use crate::error::{PgeeError, Result};
use crate::penalty::{PenaltyFamily, PenaltySpec, DEFAULT_SCAD_A};
use crate::simulation::generators::{
    simulate_binomial, simulate_cross_sectional, simulate_lagged, CrossSectionalConfig, LaggedConfig, Sigma1Convention,
};
use crate::simulation::metrics::{implied_beta, model_error, selection_metrics};
use crate::solver::{fit_gee, fit_pgee, ModelSpec, SolverControl};
use crate::tuning::{loso_cv_with_a, select_tuning, SelectionRule, TuningGrid, DEFAULT_ALPHA_STEPS, DEFAULT_N_LAMBDA};

/// Seed of the large sample defining the binomial pseudo-true coefficients.
pub const PSEUDO_TRUE_SEED: u64 = 20_140_101;

/// Preset designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Design {
    #[default]
    #[serde(rename = "table1")]
    Table1,
    #[serde(rename = "scenario1-n20")]
    Scenario1N20,
    #[serde(rename = "scenario1-n100")]
    Scenario1N100,
    #[serde(rename = "scenario2-n20")]
    Scenario2N20,
    #[serde(rename = "scenario2-n100")]
    Scenario2N100,
    #[serde(rename = "scenario1-binomial")]
    Scenario1Binomial,
    #[serde(rename = "scenario2-binomial")]
    Scenario2Binomial,
}

impl Design {
    pub const ALL: [Design; 7] = [
        Design::Table1,
        Design::Scenario1N20,
        Design::Scenario1N100,
        Design::Scenario2N20,
        Design::Scenario2N100,
        Design::Scenario1Binomial,
        Design::Scenario2Binomial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Design::Table1 => "table1",
            Design::Scenario1N20 => "scenario1-n20",
            Design::Scenario1N100 => "scenario1-n100",
            Design::Scenario2N20 => "scenario2-n20",
            Design::Scenario2N100 => "scenario2-n100",
            Design::Scenario1Binomial => "scenario1-binomial",
            Design::Scenario2Binomial => "scenario2-binomial",
        }
    }

    /// Scenario number and default subject count of the lagged designs.
    fn lagged(self) -> Option<(u8, usize)> {
        match self {
            Design::Table1 => None,
            Design::Scenario1N20 => Some((1, 20)),
            Design::Scenario1N100 | Design::Scenario1Binomial => Some((1, 100)),
            Design::Scenario2N20 => Some((2, 20)),
            Design::Scenario2N100 | Design::Scenario2Binomial => Some((2, 100)),
        }
    }

    pub fn is_binomial(self) -> bool {
        matches!(self, Design::Scenario1Binomial | Design::Scenario2Binomial)
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Design {
    type Err = PgeeError;

    fn from_str(s: &str) -> Result<Self> {
        Design::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| PgeeError::InvalidParameter(format!("unknown design `{s}`")))
    }
}

/// Study settings; every field has a default so configs may be partial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub design: Design,
    /// Overrides the preset subject count.
    pub n: Option<usize>,
    /// Overrides the preset cluster size.
    pub t: Option<usize>,
    pub sigma1: Sigma1Convention,
    /// Overrides the subject-effect standard deviation of lagged designs.
    pub subject_sd: Option<f64>,
    /// `none` stands for unpenalized GEE.
    pub penalties: Vec<PenaltyFamily>,
    pub replicates: usize,
    pub n_lambda: usize,
    pub alphas: Vec<f64>,
    pub rule: SelectionRule,
    pub working: CorrelationKind,
    pub scad_a: f64,
    pub zero_threshold: f64,
    pub convergence_c: f64,
    pub max_iterations: usize,
    /// Sample size of the binomial pseudo-true fit.
    pub pseudo_true_subjects: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let control = SolverControl::<f64>::default();
        Self {
            design: Design::Table1,
            n: None,
            t: None,
            sigma1: Sigma1Convention::Symmetrized,
            subject_sd: None,
            penalties: PenaltyFamily::ALL.to_vec(),
            replicates: 100,
            n_lambda: DEFAULT_N_LAMBDA,
            alphas: TuningGrid::even_alphas(DEFAULT_ALPHA_STEPS),
            rule: SelectionRule::Min,
            working: CorrelationKind::Independence,
            scad_a: DEFAULT_SCAD_A,
            zero_threshold: control.zero_threshold,
            convergence_c: control.convergence_c,
            max_iterations: control.max_iterations,
            pseudo_true_subjects: 20_000,
        }
    }
}

/// A materialized design.
#[derive(Debug, Clone, PartialEq)]
pub enum DesignSpec {
    CrossSectional(CrossSectionalConfig),
    Lagged(LaggedConfig),
    Binomial(LaggedConfig),
}

impl DesignSpec {
    pub fn simulate(&self, seed: u64) -> Result<LongitudinalDataset<f64>> {
        match self {
            DesignSpec::CrossSectional(c) => simulate_cross_sectional(c, seed),
            DesignSpec::Lagged(c) => simulate_lagged(c, seed),
            DesignSpec::Binomial(c) => simulate_binomial(c, seed),
        }
    }

    /// `E(X Xᵀ)` of the covariates.
    pub fn second_moment(&self) -> &DMatrix<f64> {
        match self {
            DesignSpec::CrossSectional(c) => &c.sigma,
            DesignSpec::Lagged(c) | DesignSpec::Binomial(c) => &c.sigma,
        }
    }
}

impl StudyConfig {
    pub fn with_design(design: Design) -> Self {
        Self {
            design,
            ..Self::default()
        }
    }

    pub fn control(&self) -> SolverControl<f64> {
        SolverControl {
            zero_threshold: self.zero_threshold,
            convergence_c: self.convergence_c,
            max_iterations: self.max_iterations,
            ..SolverControl::default()
        }
    }

    pub fn model(&self) -> ModelSpec<f64> {
        let base = if self.design.is_binomial() {
            ModelSpec::binomial()
        } else {
            ModelSpec::gaussian()
        };
        base.with_working(self.working)
    }

    pub fn design_spec(&self) -> Result<DesignSpec> {
        let spec = match self.design.lagged() {
            None => {
                let mut c = CrossSectionalConfig::default();
                c.n = self.n.unwrap_or(c.n);
                c.t = self.t.unwrap_or(c.t);
                c.validate()?;
                DesignSpec::CrossSectional(c)
            }
            Some((scenario, n)) => {
                let mut c = LaggedConfig::scenario(scenario, self.n.unwrap_or(n), self.sigma1)?;
                c.t = self.t.unwrap_or(c.t);
                c.subject_sd = self.subject_sd.unwrap_or(c.subject_sd);
                c.validate()?;
                if self.design.is_binomial() {
                    DesignSpec::Binomial(c)
                } else {
                    DesignSpec::Lagged(c)
                }
            }
        };
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(PgeeError::InvalidParameter(
                "a study needs at least one replicate".into(),
            ));
        }
        if self.penalties.is_empty() {
            return Err(PgeeError::InvalidParameter("a study needs at least one penalty".into()));
        }
        if self.n_lambda == 0 {
            return Err(PgeeError::InvalidParameter("the grid needs at least one λ".into()));
        }
        TuningGrid::new(vec![1.0], self.alphas.clone())?;
        self.control().validate()?;
        self.design_spec()?;
        Ok(())
    }
}

/// True coefficients of the fitted marginal model: the generating `β`,
/// the implied cross-sectional `β`, or for binary responses the
/// independence-logistic fit to a large sample.
pub fn true_beta(config: &StudyConfig, spec: &DesignSpec) -> Result<DVector<f64>> {
    match spec {
        DesignSpec::CrossSectional(c) => Ok(DVector::from_column_slice(&c.beta)),
        DesignSpec::Lagged(c) => implied_beta(&c.gamma1, &c.gamma2, &c.rho),
        DesignSpec::Binomial(c) => {
            let big = LaggedConfig {
                n: config.pseudo_true_subjects,
                ..c.clone()
            };
            let data = simulate_binomial(&big, PSEUDO_TRUE_SEED)?;
            let keep = signal_components(c);
            let clusters = data
                .clusters()
                .iter()
                .map(|cl| Cluster {
                    x: cl.x.select_columns(&keep),
                    ..cl.clone()
                })
                .collect();
            let names = keep.iter().map(|&j| data.covariate_names()[j].clone()).collect();
            let reduced = LongitudinalDataset::new(clusters, names)?;
            let fit = fit_gee(&reduced, &ModelSpec::binomial(), &SolverControl::default())?;
            if !fit.converged {
                return Err(PgeeError::InvalidData(
                    "pseudo-true logistic fit did not converge".into(),
                ));
            }
            let mut beta = DVector::zeros(c.p());
            for (k, &j) in keep.iter().enumerate() {
                beta[j] = fit.beta_naive[k];
            }
            Ok(beta)
        }
    }
}

/// Covariates whose `Σ`-connected component carries a nonzero `γ₁` or `γ₂`.
/// The remaining components are independent of the response, so their
/// pseudo-true coefficients are exactly zero.
fn signal_components(c: &LaggedConfig) -> Vec<usize> {
    let p = c.p();
    let mut component: Vec<usize> = (0..p).collect();
    for j in 0..p {
        for k in 0..j {
            if c.sigma[(j, k)] != 0.0 {
                let (a, b) = (component[j], component[k]);
                for v in component.iter_mut() {
                    if *v == a {
                        *v = b;
                    }
                }
            }
        }
    }
    let signal = |j: usize| c.gamma1[j] != 0.0 || c.gamma2[j] != 0.0;
    (0..p)
        .filter(|&j| (0..p).any(|k| component[k] == component[j] && signal(k)))
        .collect()
}

/// Seed of replicate `r`.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    rng.random()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub family: PenaltyFamily,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub model_error: f64,
    pub cd: Option<f64>,
    pub id: Option<f64>,
    pub rel_bias: Option<f64>,
    pub converged: bool,
    /// Non-naive estimate on the original covariate scale.
    pub beta_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub family: PenaltyFamily,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilySummary {
    pub family: PenaltyFamily,
    pub replicates: usize,
    pub me_mean: f64,
    /// Standard error of the mean; absent with a single replicate.
    pub me_se: Option<f64>,
    pub me_median: f64,
    pub cd: Option<f64>,
    pub id: Option<f64>,
    pub median_lambda: Option<f64>,
    pub median_alpha: Option<f64>,
    pub rel_bias: Option<f64>,
    /// Some replicates failed for this family.
    pub incomplete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub design: Design,
    pub seed: u64,
    pub replicates: usize,
    pub true_beta: Vec<f64>,
    pub summaries: Vec<FamilySummary>,
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<ReplicateFailure>,
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, k) = values.fold((0.0, 0usize), |(s, k), v| (s + v, k + 1));
    (k > 0).then(|| s / k as f64)
}

fn summarize(family: PenaltyFamily, records: &[&ReplicateRecord], incomplete: bool) -> FamilySummary {
    let k = records.len();
    let me: Vec<f64> = records.iter().map(|r| r.model_error).collect();
    let me_mean = mean_of(me.iter().copied()).unwrap_or(f64::NAN);
    let me_se = (k >= 2).then(|| {
        let ss: f64 = me.iter().map(|v| (v - me_mean) * (v - me_mean)).sum();
        (ss / (k - 1) as f64).sqrt() / (k as f64).sqrt()
    });
    FamilySummary {
        family,
        replicates: k,
        me_mean,
        me_se,
        me_median: median(&mut me.clone()).unwrap_or(f64::NAN),
        cd: mean_of(records.iter().filter_map(|r| r.cd)),
        id: mean_of(records.iter().filter_map(|r| r.id)),
        median_lambda: median(&mut records.iter().filter_map(|r| r.lambda).collect::<Vec<_>>()),
        median_alpha: median(&mut records.iter().filter_map(|r| r.alpha).collect::<Vec<_>>()),
        rel_bias: mean_of(records.iter().filter_map(|r| r.rel_bias)),
        incomplete,
    }
}

/// Selected `(λ, α)`.
type Tuning = (f64, f64);

/// Tunes (unless `family` is `none`) and fits one family on standardized data.
fn fit_family(
    config: &StudyConfig,
    data: &LongitudinalDataset<f64>,
    family: PenaltyFamily,
) -> Result<(Option<Tuning>, crate::solver::PgeeFit<f64>)> {
    let model = config.model();
    let control = config.control();
    if family == PenaltyFamily::None {
        return Ok((None, fit_pgee(data, &model, &PenaltySpec::none(), &control)?));
    }
    let grid = TuningGrid::for_data(data, &model, family, config.n_lambda, config.alphas.clone())?;
    let surface = loso_cv_with_a(data, &model, family, &grid, config.scad_a, &control)?;
    let (lambda, alpha) = select_tuning(&surface, config.rule)?;
    let penalty = PenaltySpec::from_reparametrized(family, lambda, alpha, config.scad_a)?;
    Ok((Some((lambda, alpha)), fit_pgee(data, &model, &penalty, &control)?))
}

type ReplicateOutput = (Vec<ReplicateRecord>, Vec<ReplicateFailure>);

fn run_replicate(
    config: &StudyConfig,
    spec: &DesignSpec,
    beta: &DVector<f64>,
    seed: u64,
    r: usize,
) -> Result<ReplicateOutput> {
    let raw = spec.simulate(replicate_seed(seed, r))?;
    let scaling = if config.design.is_binomial() {
        ResponseScaling::Keep
    } else {
        ResponseScaling::Standardize
    };
    let (data, info) = standardize_with(&raw, scaling).map_err(|e| PgeeError::Replicate {
        replicate: r,
        source: Box::new(e),
    })?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for &family in &config.penalties {
        match fit_family(config, &data, family) {
            Ok((tuning, fit)) => {
                let beta_hat = info.coefficients_to_original(&fit.beta_nonnaive);
                let (cd, id) = selection_metrics(&beta_hat, beta);
                records.push(ReplicateRecord {
                    replicate: r,
                    family,
                    lambda: tuning.map(|t| t.0),
                    alpha: tuning.map(|t| t.1),
                    model_error: model_error(&beta_hat, beta, spec.second_moment())?,
                    cd,
                    id,
                    rel_bias: (beta[0] != 0.0).then(|| (beta_hat[0] - beta[0]) / beta[0]),
                    converged: fit.converged,
                    beta_hat: beta_hat.iter().copied().collect(),
                });
            }
            Err(e) => failures.push(ReplicateFailure {
                replicate: r,
                family,
                message: e.to_string(),
            }),
        }
    }
    Ok((records, failures))
}

/// Runs `config.replicates` independent replicates; replicate `r` draws its
/// data from [`replicate_seed`]`(seed, r)`, so results do not depend on
/// scheduling.
pub fn run_study(config: &StudyConfig, seed: u64) -> Result<SimReport> {
    config.validate()?;
    let spec = config.design_spec()?;
    let beta = true_beta(config, &spec)?;
    let outputs: Vec<ReplicateOutput> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, &spec, &beta, seed, r))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (rec, fail) in outputs {
        records.extend(rec);
        failures.extend(fail);
    }
    let summaries = config
        .penalties
        .iter()
        .map(|&family| {
            let rows: Vec<&ReplicateRecord> = records.iter().filter(|r| r.family == family).collect();
            let incomplete = failures.iter().any(|f| f.family == family);
            summarize(family, &rows, incomplete)
        })
        .collect();
    Ok(SimReport {
        design: config.design,
        seed,
        replicates: config.replicates,
        true_beta: beta.iter().copied().collect(),
        summaries,
        records,
        failures,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SimReport {
    pub fn summary(&self, family: PenaltyFamily) -> Option<&FamilySummary> {
        self.summaries.iter().find(|s| s.family == family)
    }

    /// One row per penalty family, in table layout.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "penalty",
            "me",
            "me_se",
            "me_median",
            "lambda",
            "alpha",
            "cd",
            "id",
            "rel_bias",
            "replicates",
            "incomplete",
        ])?;
        for s in &self.summaries {
            w.write_record([
                s.family.name().to_string(),
                s.me_mean.to_string(),
                cell(s.me_se),
                s.me_median.to_string(),
                cell(s.median_lambda),
                cell(s.median_alpha),
                cell(s.cd),
                cell(s.id),
                cell(s.rel_bias),
                s.replicates.to_string(),
                s.incomplete.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| PgeeError::InvalidData(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(design: Design, replicates: usize) -> StudyConfig {
        StudyConfig {
            design,
            penalties: vec![PenaltyFamily::None, PenaltyFamily::Lasso, PenaltyFamily::ScadL2],
            replicates,
            n_lambda: 5,
            alphas: vec![0.0, 0.5, 1.0],
            ..StudyConfig::default()
        }
    }

    #[test]
    fn binomial_pseudo_truth_has_exact_zeros() {
        let config = StudyConfig {
            design: Design::Scenario1Binomial,
            pseudo_true_subjects: 3000,
            ..StudyConfig::default()
        };
        let beta = true_beta(&config, &config.design_spec().unwrap()).unwrap();
        assert_eq!(beta.len(), 20);
        assert!(beta.rows(0, 9).iter().all(|b| *b != 0.0));
        assert!(beta.rows(9, 11).iter().all(|b| *b == 0.0));
    }

    #[test]
    fn design_names_round_trip() {
        for d in Design::ALL {
            assert_eq!(d.name().parse::<Design>().unwrap(), d);
            assert_eq!(serde_json::to_string(&d).unwrap(), format!("\"{}\"", d.name()));
        }
        assert!("table3".parse::<Design>().is_err());
    }

    #[test]
    fn partial_config_uses_defaults() {
        let c: StudyConfig = serde_json::from_str(r#"{"design": "scenario2-n20", "replicates": 3}"#).unwrap();
        assert_eq!(c.design, Design::Scenario2N20);
        assert_eq!(c.replicates, 3);
        assert_eq!(c.alphas.len(), 15);
        assert!(serde_json::from_str::<StudyConfig>(r#"{"replicate": 3}"#).is_err());
        match c.design_spec().unwrap() {
            DesignSpec::Lagged(l) => assert_eq!((l.n, l.t), (20, 5)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_replicate_has_no_se() {
        let report = run_study(&quick(Design::Table1, 1), 3).unwrap();
        for s in &report.summaries {
            assert!(s.me_se.is_none());
            assert!(s.me_mean.is_finite());
            assert_eq!(s.replicates, 1);
        }
        let gee = report.summary(PenaltyFamily::None).unwrap();
        assert!(gee.median_lambda.is_none());
        assert!(report.summary(PenaltyFamily::Lasso).unwrap().median_alpha == Some(1.0));
    }

    #[test]
    fn study_is_reproducible_and_reports_render() {
        let cfg = quick(Design::Scenario2N20, 2);
        let a = run_study(&cfg, 17).unwrap();
        let b = run_study(&cfg, 17).unwrap();
        assert_eq!(a, b);
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("penalty,me,me_se,me_median,lambda,alpha,cd,id,rel_bias,replicates,incomplete\n"));
        assert_eq!(text.lines().count(), 4);
        assert!(a.to_json().unwrap().contains("\"records\""));
        for r in &a.records {
            for v in [r.cd, r.id].into_iter().flatten() {
                assert!((0.0..=1.0).contains(&v));
            }
            assert!(r.model_error >= 0.0);
        }
    }

    #[test]
    fn replicate_seeds_differ() {
        assert_ne!(replicate_seed(1, 0), replicate_seed(1, 1));
        assert_eq!(replicate_seed(1, 4), replicate_seed(1, 4));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
