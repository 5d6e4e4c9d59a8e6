//! Tuning-parameter selection: leave-one-subject-out cross-validation,
//! QGCV, one-SE model sets and penalization paths.
//!
//! Grids live in the `(λ, α)` parametrization with `λ₁ = λα` and
//! `λ₂ = λ(1-α)`. Cross-validated loss of a grid point is
//!
//! ```text
//! PL_CV = Σ_i (y_i - ŷ_i^[-i])ᵀ V_i⁻¹ (y_i - ŷ_i^[-i]) / T_i
//! ```
//!
//! where `ŷ_i^[-i]` are non-naive predictions from the fit without subject `i`.

use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{build_correlation, working_covariance, Family};
use crate::data::{ClusterView, LongitudinalDataset};
use crate::error::{PgeeError, Result};
use crate::penalty::{lqa_weights, PenaltyFamily, PenaltySpec, DEFAULT_SCAD_A};
use crate::scalar::Real;
use crate::solver::{
    checked_cholesky, gee_score, predict, ridge_solution, run_lqa, submatrix, GaussianStats, Init, ModelSpec, PgeeFit,
    Problem, SolverControl, WARM_START_RIDGE,
};

/// The default grid's top is `λ_max` times this margin.
pub const LAMBDA_MAX_MARGIN: f64 = 1.25;

/// `λ_min / λ_max` of the default grid.
pub const LAMBDA_MIN_RATIO: f64 = 1e-3;

pub const DEFAULT_N_LAMBDA: usize = 30;

/// `α ∈ {k/14}`.
pub const DEFAULT_ALPHA_STEPS: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningGrid<T: Real> {
    /// Strictly decreasing, positive.
    pub lambda_values: Vec<T>,
    /// Strictly increasing within `[0, 1]`.
    pub alpha_values: Vec<T>,
}

impl<T: Real> TuningGrid<T> {
    pub fn new(lambda_values: Vec<T>, alpha_values: Vec<T>) -> Result<Self> {
        let grid = Self {
            lambda_values,
            alpha_values,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_values.is_empty() || self.alpha_values.is_empty() {
            return Err(PgeeError::InvalidParameter("empty tuning grid".into()));
        }
        if self
            .lambda_values
            .iter()
            .any(|&l| !(l > T::zero()) || !l.is_finite_value())
        {
            return Err(PgeeError::InvalidParameter("grid λ values must be positive".into()));
        }
        if self.lambda_values.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(PgeeError::InvalidParameter(
                "grid λ values must be strictly decreasing".into(),
            ));
        }
        if self.alpha_values.iter().any(|&a| !(a >= T::zero() && a <= T::one())) {
            return Err(PgeeError::InvalidParameter("grid α values must lie in [0, 1]".into()));
        }
        if self.alpha_values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(PgeeError::InvalidParameter(
                "grid α values must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// `count` values from `top` down to `top · min_ratio`, evenly spaced in log scale.
    pub fn log_lambdas(top: T, min_ratio: T, count: usize) -> Vec<T> {
        if count == 1 {
            return vec![top];
        }
        let step = min_ratio.ln() / T::count(count - 1);
        (0..count).map(|k| top * (step * T::count(k)).exp()).collect()
    }

    /// `{k/steps : k = 0..=steps}`.
    pub fn even_alphas(steps: usize) -> Vec<T> {
        let steps = steps.max(1);
        (0..=steps).map(|k| T::count(k) / T::count(steps)).collect()
    }

    /// Data-driven grid: `n_lambda` log-spaced values below
    /// `1.25 · λ_max(α*)`, with `α*` the smallest positive `α` the family
    /// uses on `alphas` (1 for ridge).
    pub fn for_data(
        data: &LongitudinalDataset<T>,
        model: &ModelSpec<T>,
        family: PenaltyFamily,
        n_lambda: usize,
        alphas: Vec<T>,
    ) -> Result<Self> {
        if n_lambda == 0 {
            return Err(PgeeError::InvalidParameter("grid needs at least one λ".into()));
        }
        let used = family.alphas(&alphas);
        let alpha_ref = used
            .iter()
            .copied()
            .filter(|&a| a > T::zero())
            .fold(None, |m: Option<T>, a| Some(m.map_or(a, |m| m.min(a))))
            .unwrap_or(T::one());
        let top = lambda_max(data, model, alpha_ref)? * T::lit(LAMBDA_MAX_MARGIN);
        if !(top > T::zero()) {
            return Err(PgeeError::InvalidData(
                "zero score at the origin; λ_max undefined".into(),
            ));
        }
        Self::new(Self::log_lambdas(top, T::lit(LAMBDA_MIN_RATIO), n_lambda), alphas)
    }

    /// The default 30 × 15 grid.
    pub fn default_for(data: &LongitudinalDataset<T>, model: &ModelSpec<T>, family: PenaltyFamily) -> Result<Self> {
        Self::for_data(
            data,
            model,
            family,
            DEFAULT_N_LAMBDA,
            Self::even_alphas(DEFAULT_ALPHA_STEPS),
        )
    }

    /// The `(λ, α)` points a family visits, `α`-major with `λ` descending.
    pub fn points(&self, family: PenaltyFamily) -> Vec<(T, T)> {
        family
            .alphas(&self.alpha_values)
            .into_iter()
            .flat_map(|a| self.lambda_values.iter().map(move |&l| (l, a)))
            .collect()
    }
}

/// `max_j |S_j(0)| / (N · max(α, 0.01))`: the smallest `λ` at which the
/// L1 part alone keeps every coefficient at zero.
pub fn lambda_max<T: Real>(data: &LongitudinalDataset<T>, model: &ModelSpec<T>, alpha: T) -> Result<T> {
    let (s, _) = gee_score(&DVector::zeros(data.n_covariates()), data, model)?;
    Ok(s.amax() / (T::count(data.n_obs()) * alpha.max(T::lit(0.01))))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvPoint<T: Real> {
    pub lambda: T,
    pub alpha: T,
    pub pl_cv: T,
    pub se_cv: T,
    /// Folds that produced a converged fit.
    pub n_folds: usize,
    /// All folds converged.
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvSurface<T: Real> {
    pub family: PenaltyFamily,
    pub points: Vec<CvPoint<T>>,
    pub min_index: Option<usize>,
    /// Indices of the points within one SE of the minimum.
    pub one_se: Vec<usize>,
}

/// Orders by `(λ, α)`; the larger wins ties in the selection rules.
fn simpler<T: Real>(a: &CvPoint<T>, b: &CvPoint<T>) -> bool {
    a.lambda > b.lambda || (a.lambda == b.lambda && a.alpha > b.alpha)
}

impl<T: Real> CvSurface<T> {
    pub fn from_points(family: PenaltyFamily, points: Vec<CvPoint<T>>) -> Self {
        let mut min_index: Option<usize> = None;
        for (k, p) in points.iter().enumerate() {
            if !p.valid {
                continue;
            }
            min_index = match min_index {
                None => Some(k),
                Some(m) => {
                    let q = &points[m];
                    if p.pl_cv < q.pl_cv || (p.pl_cv == q.pl_cv && simpler(p, q)) {
                        Some(k)
                    } else {
                        Some(m)
                    }
                }
            };
        }
        let one_se = match min_index {
            None => Vec::new(),
            Some(m) => {
                let bound = points[m].pl_cv + points[m].se_cv;
                (0..points.len())
                    .filter(|&k| points[k].valid && points[k].pl_cv <= bound)
                    .collect()
            }
        };
        Self {
            family,
            points,
            min_index,
            one_se,
        }
    }

    pub fn n_valid(&self) -> usize {
        self.points.iter().filter(|p| p.valid).count()
    }

    /// CSV with header `lambda,alpha,pl_cv,se_cv,valid`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["lambda", "alpha", "pl_cv", "se_cv", "valid"])?;
        for p in &self.points {
            w.write_record([
                p.lambda.as_f64().to_string(),
                p.alpha.as_f64().to_string(),
                p.pl_cv.as_f64().to_string(),
                p.se_cv.as_f64().to_string(),
                p.valid.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String>
    where
        T: Serialize,
    {
        serde_json::to_string_pretty(self).map_err(|e| PgeeError::InvalidData(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    #[default]
    Min,
    OneSe,
}

impl FromStr for SelectionRule {
    type Err = PgeeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "min" => Ok(Self::Min),
            "one-se" | "one_se" | "onese" | "1se" => Ok(Self::OneSe),
            other => Err(PgeeError::InvalidParameter(format!("unknown selection rule `{other}`"))),
        }
    }
}

/// Chosen `(λ, α)`: the minimizer, or the largest `λ` (then largest `α`)
/// within one standard error of it.
pub fn select_tuning<T: Real>(surface: &CvSurface<T>, rule: SelectionRule) -> Result<(T, T)> {
    let m = surface.min_index.ok_or(PgeeError::EmptySurface)?;
    let k = match rule {
        SelectionRule::Min => m,
        SelectionRule::OneSe => surface
            .one_se
            .iter()
            .copied()
            .reduce(|a, b| {
                if simpler(&surface.points[b], &surface.points[a]) {
                    b
                } else {
                    a
                }
            })
            .unwrap_or(m),
    };
    Ok((surface.points[k].lambda, surface.points[k].alpha))
}

/// `(y - μ̂)ᵀ V⁻¹ (y - μ̂) / T` for one subject.
fn subject_loss<T: Real>(c: ClusterView<'_, T>, beta: &DVector<T>, model: &ModelSpec<T>) -> Result<T> {
    let mu = predict(beta, c.x, model.link);
    let r = c.y - &mu;
    let u = mu.map(|m| model.variance.variance(m).max(T::lit(1e-12)));
    let w = build_correlation(&model.correlation, c.size)?;
    let v = working_covariance(&u, &w)?;
    let chol = v.cholesky().ok_or(PgeeError::SingularCovariance)?;
    Ok(r.dot(&chol.solve(&r)) / T::count(c.size))
}

struct FoldResult<T> {
    loss: T,
    converged: bool,
}

/// Fits every grid point on one training problem and scores the held-out
/// subject.
fn fold_losses<T: Real>(
    train: &LongitudinalDataset<T>,
    stats: Option<GaussianStats<T>>,
    held_out: ClusterView<'_, T>,
    model: &ModelSpec<T>,
    specs: &[PenaltySpec<T>],
    control: &SolverControl<T>,
) -> Vec<Option<FoldResult<T>>> {
    let mut gaussian = stats.map(Problem::from_stats);
    specs
        .iter()
        .map(|spec| {
            let outcome = match gaussian.as_mut() {
                Some(problem) => run_lqa(problem, spec, control),
                None => Problem::new(train, model).and_then(|mut p| run_lqa(&mut p, spec, control)),
            }
            .ok()?;
            let mut fold_model = *model;
            if let Some(alpha) = outcome.alpha {
                fold_model.correlation.alpha = alpha;
            }
            let beta = &outcome.beta * spec.rescale_factor();
            let loss = subject_loss(held_out, &beta, &fold_model).ok()?;
            loss.is_finite_value().then_some(FoldResult {
                loss,
                converged: outcome.converged,
            })
        })
        .collect()
}

/// Cross-validates an explicit list of penalties.
pub fn loso_cv_specs<T: Real>(
    data: &LongitudinalDataset<T>,
    model: &ModelSpec<T>,
    specs: &[PenaltySpec<T>],
    control: &SolverControl<T>,
) -> Result<Vec<CvPoint<T>>> {
    model.validate()?;
    control.validate()?;
    for s in specs {
        s.validate()?;
    }
    let n = data.n_subjects();
    if n < 2 {
        return Err(PgeeError::InvalidData(
            "cross-validation needs at least two subjects".into(),
        ));
    }

    let fast = model.is_gaussian() && !model.estimates_alpha();
    let parts = if fast {
        Some(GaussianStats::per_cluster(data, model)?)
    } else {
        None
    };
    let total = parts.as_ref().map(|p| GaussianStats::total(p));

    let per_fold: Vec<Vec<Option<FoldResult<T>>>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let held_out = data.cluster_view(i)?;
            match (&parts, &total) {
                (Some(parts), Some(total)) => Ok(fold_losses(
                    data,
                    Some(total.minus(&parts[i])),
                    held_out,
                    model,
                    specs,
                    control,
                )),
                _ => {
                    let train = data.without_subject(i)?;
                    Ok(fold_losses(&train, None, held_out, model, specs, control))
                }
            }
        })
        .collect::<Result<_>>()?;

    let sqrt_n = T::count(n).sqrt();
    Ok(specs
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let (lambda, alpha) = spec_coordinates(spec);
            let losses: Vec<&FoldResult<T>> = per_fold.iter().filter_map(|f| f[k].as_ref()).collect();
            let n_ok = losses.iter().filter(|f| f.converged).count();
            let valid = n_ok == n;
            let pl_cv = losses.iter().fold(T::zero(), |a, f| a + f.loss);
            let se_cv = if losses.len() >= 2 {
                let m = pl_cv / T::count(losses.len());
                let ss = losses.iter().fold(T::zero(), |a, f| a + (f.loss - m) * (f.loss - m));
                (ss / T::count(losses.len() - 1)).sqrt() * sqrt_n
            } else {
                T::zero()
            };
            CvPoint {
                lambda,
                alpha,
                pl_cv: if losses.len() == n { pl_cv } else { T::lit(f64::NAN) },
                se_cv,
                n_folds: n_ok,
                valid,
            }
        })
        .collect())
}

/// `(λ, α)` of a penalty, for reporting.
fn spec_coordinates<T: Real>(spec: &PenaltySpec<T>) -> (T, T) {
    let lambda = spec.lambda1 + spec.lambda2;
    let alpha = if lambda > T::zero() {
        spec.lambda1 / lambda
    } else {
        T::one()
    };
    (lambda, alpha)
}

/// Leave-one-subject-out cross-validation of `family` over `grid`, with
/// the SCAD shape parameter `a`.
pub fn loso_cv_with_a<T: Real>(
    data: &LongitudinalDataset<T>,
    model: &ModelSpec<T>,
    family: PenaltyFamily,
    grid: &TuningGrid<T>,
    a: T,
    control: &SolverControl<T>,
) -> Result<CvSurface<T>> {
    grid.validate()?;
    if family == PenaltyFamily::None {
        return Err(PgeeError::InvalidParameter("penalty `none` has nothing to tune".into()));
    }
    let coords = grid.points(family);
    let specs = coords
        .iter()
        .map(|&(l, al)| PenaltySpec::from_reparametrized(family, l, al, a))
        .collect::<Result<Vec<_>>>()?;
    let mut points = loso_cv_specs(data, model, &specs, control)?;
    for (p, &(l, al)) in points.iter_mut().zip(&coords) {
        p.lambda = l;
        p.alpha = al;
    }
    let surface = CvSurface::from_points(family, points);
    let invalid = surface.points.len() - surface.n_valid();
    if invalid > 0 {
        log::info!(
            "{invalid} of {} grid points had non-converged folds",
            surface.points.len()
        );
    }
    Ok(surface)
}

/// Leave-one-subject-out cross-validation with the default SCAD `a`.
pub fn loso_cv<T: Real>(
    data: &LongitudinalDataset<T>,
    model: &ModelSpec<T>,
    family: PenaltyFamily,
    grid: &TuningGrid<T>,
    control: &SolverControl<T>,
) -> Result<CvSurface<T>> {
    loso_cv_with_a(data, model, family, grid, T::lit(DEFAULT_SCAD_A), control)
}

/// `p(λ, α) = tr[(H + NΣ)⁻¹ H]` over the nonzero coefficients, with `H`
/// the information and `Σ` the LQA weights at the naive solution.
pub fn effective_parameters<T: Real>(fit: &PgeeFit<T>, data: &LongitudinalDataset<T>) -> Result<T> {
    let active = &fit.active_set;
    if active.is_empty() {
        return Ok(T::zero());
    }
    let beta = &fit.beta_naive;
    let (_, k) = gee_score(beta, data, &fit.model)?;
    let h = k * T::count(data.n_subjects());
    let mask: Vec<bool> = beta.iter().map(|&b| b == T::zero()).collect();
    let (sigma, _) = lqa_weights(&fit.penalty, beta, &mask)?;
    let n = T::count(data.n_obs());
    let h_a = submatrix(&h, active);
    let mut m = h_a.clone();
    for (r, &j) in active.iter().enumerate() {
        m[(r, r)] += n * sigma[j];
    }
    let chol = checked_cholesky(&m).ok_or(PgeeError::SingularNewton(0))?;
    Ok(chol.solve(&h_a).trace())
}

/// Deviance residuals at the mean `mu`.
fn deviance_residual<T: Real>(family: Family, y: T, mu: T) -> T {
    match family {
        Family::Gaussian => y - mu,
        Family::Binomial => {
            let term = |a: T, b: T| if a > T::zero() { a * (a / b).ln() } else { T::zero() };
            let d = T::lit(2.0) * (term(y, mu) + term(T::one() - y, T::one() - mu));
            (y - mu).signum() * d.max(T::zero()).sqrt()
        }
    }
}

/// `PL_QGCV = Wdev / (n (1 - p(λ,α)/N_df))` with `Wdev = Σ r_iᵀR_i⁻¹r_i`
/// and `N_df = Σ T_i² / |R_i|`, `|R_i|` the sum of the entries of `R_i`.
/// Residuals use the non-naive fit and the fit's working correlation.
pub fn qgcv<T: Real>(fit: &PgeeFit<T>, data: &LongitudinalDataset<T>) -> Result<T> {
    let model = &fit.model;
    let mut wdev = T::zero();
    let mut n_df = T::zero();
    for c in data.clusters() {
        let mu = predict(&fit.beta_nonnaive, &c.x, model.link);
        let r = DVector::from_fn(c.len(), |t, _| deviance_residual(model.variance.family, c.y[t], mu[t]));
        let w = build_correlation(&model.correlation, c.len())?;
        let chol = w.clone().cholesky().ok_or(PgeeError::SingularCovariance)?;
        wdev += r.dot(&chol.solve(&r));
        n_df += T::count(c.len() * c.len()) / w.sum();
    }
    let p_eff = effective_parameters(fit, data)?;
    if !(p_eff < n_df) {
        return Err(PgeeError::TooComplex {
            p_eff: p_eff.as_f64(),
            n_df: n_df.as_f64(),
        });
    }
    Ok(wdev / (T::count(data.n_subjects()) * (T::one() - p_eff / n_df)))
}

/// Coefficient paths for a fixed `α`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathResult<T: Real> {
    pub family: PenaltyFamily,
    pub alpha: T,
    /// Descending.
    pub lambdas: Vec<T>,
    /// `p × |λ|` standardized non-naive coefficients; NaN in invalid columns.
    pub coefficients: DMatrix<T>,
    pub valid: Vec<bool>,
    pub converged: Vec<bool>,
    pub covariate_names: Vec<String>,
}

impl<T: Real> PathResult<T> {
    /// One row per `λ`: `lambda,valid,<covariates…>`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["lambda".to_string(), "valid".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for (k, l) in self.lambdas.iter().enumerate() {
            let mut row = vec![l.as_f64().to_string(), self.valid[k].to_string()];
            row.extend(self.coefficients.column(k).iter().map(|b| b.as_f64().to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let columns: Vec<serde_json::Value> = self
            .lambdas
            .iter()
            .enumerate()
            .map(|(k, l)| {
                serde_json::json!({
                    "lambda": l.as_f64(),
                    "valid": self.valid[k],
                    "converged": self.converged[k],
                    "coefficients": self.coefficients.column(k).iter().map(|b| b.as_f64()).collect::<Vec<_>>(),
                })
            })
            .collect();
        let doc = serde_json::json!({
            "family": self.family,
            "alpha": self.alpha.as_f64(),
            "covariates": self.covariate_names,
            "path": columns,
        });
        serde_json::to_string_pretty(&doc).map_err(|e| PgeeError::InvalidData(e.to_string()))
    }
}

/// Fits a decreasing `λ` sequence at fixed `α`, each fit warm-started from
/// the previous solution (zeroed coordinates restart from the ridge fit).
pub fn penalization_path<T: Real>(
    data: &LongitudinalDataset<T>,
    model: &ModelSpec<T>,
    family: PenaltyFamily,
    alpha: T,
    lambdas: &[T],
    a: T,
    control: &SolverControl<T>,
) -> Result<PathResult<T>> {
    model.validate()?;
    control.validate()?;
    if family == PenaltyFamily::None {
        return Err(PgeeError::InvalidParameter("penalty `none` has no path".into()));
    }
    if lambdas.is_empty() || lambdas.iter().any(|&l| !(l >= T::zero())) || lambdas.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(PgeeError::InvalidParameter(
            "path λ values must be non-negative and strictly decreasing".into(),
        ));
    }
    let p = data.n_covariates();
    let mut coefficients = DMatrix::from_element(p, lambdas.len(), T::lit(f64::NAN));
    let mut valid = vec![false; lambdas.len()];
    let mut converged = vec![false; lambdas.len()];
    let mut previous: Option<DVector<T>> = None;

    for (k, &lambda) in lambdas.iter().enumerate() {
        let spec = PenaltySpec::from_reparametrized(family, lambda, alpha, a)?;
        let attempt = (|| -> Result<_> {
            let mut problem = Problem::new(data, model)?;
            let ridge = ridge_solution(&mut problem, spec.lambda2.max(T::lit(WARM_START_RIDGE)), control)?;
            let start = match &previous {
                Some(prev) => prev.zip_map(&ridge, |b, r| if b == T::zero() { r } else { b }),
                None => ridge,
            };
            let mut problem = Problem::new(data, model)?;
            let ctl = SolverControl {
                init: Init::User(start),
                ..control.clone()
            };
            run_lqa(&mut problem, &spec, &ctl)
        })();
        match attempt {
            Ok(outcome) => {
                coefficients.set_column(k, &(&outcome.beta * spec.rescale_factor()));
                valid[k] = true;
                converged[k] = outcome.converged;
                previous = Some(outcome.beta);
            }
            Err(e) => log::warn!("path point λ = {lambda} failed: {e}"),
        }
    }
    Ok(PathResult {
        family,
        alpha,
        lambdas: lambdas.to_vec(),
        coefficients,
        valid,
        converged,
        covariate_names: data.covariate_names().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::{CorrelationKind, CorrelationSpec};
    use crate::data::Cluster;
    use crate::solver::{fit_gee, fit_pgee};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_data(seed: u64, n: usize, t: usize, p: usize) -> LongitudinalDataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let beta: Vec<f64> = (0..p).map(|j| if j < 2 { 1.0 } else { 0.0 }).collect();
        let clusters = (0..n)
            .map(|i| {
                let x = DMatrix::from_fn(t, p, |_, _| rng.sample(StandardNormal));
                let y = DVector::from_fn(t, |r, _| {
                    (0..p).map(|j| x[(r, j)] * beta[j]).sum::<f64>() + rng.sample::<f64, _>(StandardNormal)
                });
                Cluster {
                    id: i.to_string(),
                    times: (0..t).map(|k| k as f64).collect(),
                    y,
                    x,
                }
            })
            .collect();
        LongitudinalDataset::new(clusters, (0..p).map(|j| format!("x{j}")).collect()).unwrap()
    }

    fn point(lambda: f64, alpha: f64, pl: f64, se: f64) -> CvPoint<f64> {
        CvPoint {
            lambda,
            alpha,
            pl_cv: pl,
            se_cv: se,
            n_folds: 3,
            valid: true,
        }
    }

    #[test]
    fn grid_validation() {
        assert!(TuningGrid::new(vec![1.0, 0.5], vec![0.0, 1.0]).is_ok());
        assert!(TuningGrid::new(vec![0.5, 1.0], vec![1.0]).is_err());
        assert!(TuningGrid::new(vec![1.0, 1.0], vec![1.0]).is_err());
        assert!(TuningGrid::new(vec![1.0], vec![1.0, 0.5]).is_err());
        assert!(TuningGrid::new(vec![1.0], vec![1.5]).is_err());
        assert!(TuningGrid::<f64>::new(vec![], vec![1.0]).is_err());
    }

    #[test]
    fn default_alphas_are_fourteenths() {
        let a = TuningGrid::<f64>::even_alphas(14);
        assert_eq!(a.len(), 15);
        assert_eq!(a[9], 9.0 / 14.0);
        assert_eq!(a[14], 1.0);
    }

    #[test]
    fn log_lambdas_span_three_decades() {
        let l = TuningGrid::<f64>::log_lambdas(2.0, 1e-3, 30);
        assert_eq!(l.len(), 30);
        assert_eq!(l[0], 2.0);
        assert!((l[29] - 2e-3).abs() < 1e-15);
        let r: Vec<f64> = l.windows(2).map(|w| w[1] / w[0]).collect();
        assert!(r.iter().all(|&x| (x - r[0]).abs() < 1e-12));
    }

    #[test]
    fn default_grid_top_zeroes_lasso() {
        let d = random_data(1, 15, 4, 5);
        let model = ModelSpec::gaussian();
        let grid = TuningGrid::default_for(&d, &model, PenaltyFamily::Lasso).unwrap();
        assert_eq!(grid.lambda_values.len(), 30);
        let fit = fit_pgee(
            &d,
            &model,
            &PenaltySpec::lasso(grid.lambda_values[0]),
            &SolverControl::default(),
        )
        .unwrap();
        assert!(fit.active_set.is_empty());
        let (x, y) = d.pooled();
        let lm = (x.transpose() * y).amax() / d.n_obs() as f64;
        assert!((lambda_max(&d, &model, 1.0).unwrap() - lm).abs() < 1e-12);
        assert!((lambda_max(&d, &model, 0.5).unwrap() - 2.0 * lm).abs() < 1e-12);
        assert!((lambda_max(&d, &model, 0.0).unwrap() - 100.0 * lm).abs() < 1e-9);
    }

    #[test]
    fn grid_points_follow_family() {
        let grid = TuningGrid::new(vec![1.0, 0.1], vec![0.0, 0.5, 1.0]).unwrap();
        assert_eq!(grid.points(PenaltyFamily::Lasso), vec![(1.0, 1.0), (0.1, 1.0)]);
        assert_eq!(grid.points(PenaltyFamily::Ridge), vec![(1.0, 0.0), (0.1, 0.0)]);
        assert_eq!(grid.points(PenaltyFamily::ScadL2).len(), 6);
    }

    #[test]
    fn single_point_selected_by_both_rules() {
        let s = CvSurface::from_points(PenaltyFamily::Lasso, vec![point(0.3, 1.0, 2.0, 0.1)]);
        assert_eq!(select_tuning(&s, SelectionRule::Min).unwrap(), (0.3, 1.0));
        assert_eq!(select_tuning(&s, SelectionRule::OneSe).unwrap(), (0.3, 1.0));
    }

    #[test]
    fn flat_valley_one_se_takes_largest_lambda() {
        let pts = vec![
            point(1.0, 1.0, 5.0, 0.2),
            point(0.5, 1.0, 2.05, 0.2),
            point(0.25, 1.0, 2.0, 0.2),
            point(0.1, 1.0, 2.1, 0.2),
            point(0.5, 0.5, 2.1, 0.2),
        ];
        let s = CvSurface::from_points(PenaltyFamily::ElasticNet, pts);
        assert_eq!(s.min_index, Some(2));
        assert_eq!(s.one_se, vec![1, 2, 3, 4]);
        assert_eq!(select_tuning(&s, SelectionRule::OneSe).unwrap(), (0.5, 1.0));
    }

    #[test]
    fn min_ties_prefer_larger_lambda_then_alpha() {
        let pts = vec![
            point(0.1, 1.0, 1.0, 0.0),
            point(0.2, 0.5, 1.0, 0.0),
            point(0.2, 0.25, 1.0, 0.0),
        ];
        let s = CvSurface::from_points(PenaltyFamily::ElasticNet, pts.clone());
        assert_eq!(select_tuning(&s, SelectionRule::Min).unwrap(), (0.2, 0.5));
        let mut rev = pts;
        rev.reverse();
        let s = CvSurface::from_points(PenaltyFamily::ElasticNet, rev);
        assert_eq!(select_tuning(&s, SelectionRule::Min).unwrap(), (0.2, 0.5));
    }

    #[test]
    fn invalid_points_are_skipped() {
        let mut bad = point(1.0, 1.0, 0.0, 0.0);
        bad.valid = false;
        let s = CvSurface::from_points(PenaltyFamily::Lasso, vec![bad.clone(), point(0.5, 1.0, 3.0, 1.0)]);
        assert_eq!(s.min_index, Some(1));
        let empty = CvSurface::from_points(PenaltyFamily::Lasso, vec![bad]);
        assert!(matches!(
            select_tuning(&empty, SelectionRule::Min),
            Err(PgeeError::EmptySurface)
        ));
    }

    #[test]
    fn rule_parsing() {
        assert_eq!("one-se".parse::<SelectionRule>().unwrap(), SelectionRule::OneSe);
        assert_eq!("min".parse::<SelectionRule>().unwrap(), SelectionRule::Min);
        assert!("best".parse::<SelectionRule>().is_err());
    }

    #[test]
    fn null_model_cv_is_plug_in() {
        let d = random_data(2, 6, 3, 3);
        let specs = [PenaltySpec::lasso(1e6)];
        let pts = loso_cv_specs(&d, &ModelSpec::gaussian(), &specs, &SolverControl::default()).unwrap();
        let expected: f64 = d.clusters().iter().map(|c| c.y.norm_squared() / c.len() as f64).sum();
        assert_eq!(pts[0].pl_cv, expected);
        assert!(pts[0].valid);
        let losses: Vec<f64> = d
            .clusters()
            .iter()
            .map(|c| c.y.norm_squared() / c.len() as f64)
            .collect();
        let m = expected / 6.0;
        let sd = (losses.iter().map(|l| (l - m) * (l - m)).sum::<f64>() / 5.0).sqrt();
        assert!((pts[0].se_cv - sd * 6f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn duplicated_noiseless_subjects_have_zero_cv() {
        let d = random_data(3, 5, 4, 3);
        let beta = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let mut clusters = Vec::new();
        for c in d.clusters() {
            for k in 0..2 {
                clusters.push(Cluster {
                    id: format!("{}-{k}", c.id),
                    y: &c.x * &beta,
                    ..c.clone()
                });
            }
        }
        let d = LongitudinalDataset::new(clusters, d.covariate_names().to_vec()).unwrap();
        let pts = loso_cv_specs(
            &d,
            &ModelSpec::gaussian(),
            &[PenaltySpec::none()],
            &SolverControl::default(),
        )
        .unwrap();
        assert!(pts[0].pl_cv < 1e-8);
    }

    /// Independent fold loop: refit without each subject and score it with
    /// an explicitly inverted working covariance.
    fn brute_force_cv(d: &LongitudinalDataset<f64>, model: &ModelSpec<f64>, spec: &PenaltySpec<f64>) -> f64 {
        let mut total = 0.0;
        for i in 0..d.n_subjects() {
            let train = d.without_subject(i).unwrap();
            let fit = fit_pgee(&train, model, spec, &SolverControl::default()).unwrap();
            let c = &d.clusters()[i];
            let r = &c.y - &c.x * &fit.beta_nonnaive;
            let a = fit.model.correlation.alpha;
            let t = c.len();
            let v = DMatrix::from_fn(t, t, |j, k| if j == k { 1.0 } else { a });
            total += (r.transpose() * v.try_inverse().unwrap() * &r)[(0, 0)] / t as f64;
        }
        total
    }

    #[test]
    fn cv_matches_brute_force_fold_loop() {
        let d = random_data(4, 8, 3, 4);
        let specs = [PenaltySpec::lasso(0.05), PenaltySpec::scad_l2(0.1, 0.2)];
        for model in [
            ModelSpec::gaussian(),
            ModelSpec::gaussian().with_working(CorrelationKind::Exchangeable),
        ] {
            let pts = loso_cv_specs(&d, &model, &specs, &SolverControl::default()).unwrap();
            for (p, spec) in pts.iter().zip(&specs) {
                assert!(p.valid);
                assert!((p.pl_cv - brute_force_cv(&d, &model, spec)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn loso_cv_needs_two_subjects() {
        let d = random_data(5, 1, 3, 2);
        assert!(loso_cv_specs(
            &d,
            &ModelSpec::gaussian(),
            &[PenaltySpec::lasso(0.1)],
            &SolverControl::default()
        )
        .is_err());
    }

    #[test]
    fn cv_surface_csv_layout() {
        let s = CvSurface::from_points(PenaltyFamily::Lasso, vec![point(0.5, 1.0, 2.0, 0.25)]);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "lambda,alpha,pl_cv,se_cv,valid\n0.5,1,2,0.25,true\n"
        );
        assert!(s.to_json().unwrap().contains("\"min_index\": 0"));
    }

    #[test]
    fn effective_parameters_special_cases() {
        let d = random_data(6, 10, 4, 5);
        let model = ModelSpec::gaussian();
        let fit = fit_pgee(&d, &model, &PenaltySpec::none(), &SolverControl::default()).unwrap();
        assert!((effective_parameters(&fit, &d).unwrap() - 5.0).abs() < 1e-12);
        let zero = fit_pgee(&d, &model, &PenaltySpec::lasso(1e3), &SolverControl::default()).unwrap();
        assert_eq!(effective_parameters(&zero, &d).unwrap(), 0.0);
    }

    #[test]
    fn ridge_effective_parameters_on_orthonormal_design() {
        // Pooled X with XᵀX = N·I: columns of a scaled 8×2 Hadamard-like design.
        let xs = [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
        let clusters = (0..2)
            .map(|i| Cluster {
                id: i.to_string(),
                times: vec![0.0, 1.0, 2.0, 3.0],
                y: DVector::from_vec(vec![0.3 + i as f64, -0.1, 0.7, 0.2]),
                x: DMatrix::from_fn(4, 2, |r, c| xs[r][c]),
            })
            .collect();
        let d = LongitudinalDataset::new(clusters, vec!["a".into(), "b".into()]).unwrap();
        let l2 = 0.35;
        let fit = fit_pgee(
            &d,
            &ModelSpec::gaussian(),
            &PenaltySpec::ridge(l2),
            &SolverControl::default(),
        )
        .unwrap();
        let pe = effective_parameters(&fit, &d).unwrap();
        assert!((pe - 2.0 / (1.0 + 2.0 * l2)).abs() < 1e-12);
    }

    #[test]
    fn qgcv_exchangeable_degrees_of_freedom() {
        let d = random_data(7, 4, 2, 1);
        let mut fit = fit_gee(&d, &ModelSpec::gaussian(), &SolverControl::default()).unwrap();
        fit.model.correlation = CorrelationSpec::exchangeable(0.5);
        // N_df = 4 · 4/3; p_eff = tr[(H)⁻¹H] = 1 regardless of the working R.
        let w = nalgebra::dmatrix![1.0, 0.5; 0.5, 1.0].try_inverse().unwrap();
        let mut wdev = 0.0;
        for c in d.clusters() {
            let r = &c.y - &c.x * &fit.beta_nonnaive;
            wdev += (r.transpose() * &w * &r)[(0, 0)];
        }
        let expected = wdev / (4.0 * (1.0 - 1.0 / (16.0 / 3.0)));
        assert!((qgcv(&fit, &d).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn qgcv_rejects_too_complex() {
        let d = random_data(8, 1, 3, 3);
        let fit = fit_gee(&d, &ModelSpec::gaussian(), &SolverControl::default());
        assert!(fit.is_err());
        let d = random_data(8, 1, 4, 3);
        let mut fit = fit_gee(&d, &ModelSpec::gaussian(), &SolverControl::default()).unwrap();
        // A near-singular R inflates |R_i| until N_df falls below p.
        fit.model.correlation = CorrelationSpec::exchangeable(0.9);
        assert!(matches!(qgcv(&fit, &d), Err(PgeeError::TooComplex { .. })));
    }

    #[test]
    fn binomial_deviance_residuals() {
        let r = deviance_residual(Family::Binomial, 1.0, 0.8);
        assert!((r - (-2.0 * 0.8f64.ln()).sqrt()).abs() < 1e-15);
        let r = deviance_residual(Family::Binomial, 0.0, 0.8);
        assert!((r + (-2.0 * 0.2f64.ln()).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn path_top_zero_and_tail_matches_gee() {
        let d = random_data(9, 20, 4, 5);
        let model = ModelSpec::gaussian();
        let grid = TuningGrid::default_for(&d, &model, PenaltyFamily::Lasso).unwrap();
        let mut lambdas = grid.lambda_values.clone();
        lambdas.push(1e-9);
        let path = penalization_path(
            &d,
            &model,
            PenaltyFamily::Lasso,
            1.0,
            &lambdas,
            3.7,
            &SolverControl::default(),
        )
        .unwrap();
        assert!(path.valid.iter().all(|&v| v));
        assert!(path.coefficients.column(0).iter().all(|&b| b == 0.0));
        let gee = fit_gee(&d, &model, &SolverControl::default()).unwrap();
        let last = path.coefficients.column(lambdas.len() - 1);
        assert!((last - &gee.beta_naive).amax() < 1e-4);
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("lambda,valid,x0,x1,x2,x3,x4\n"));
        assert_eq!(text.lines().count(), lambdas.len() + 1);
        assert!(path.to_json().unwrap().contains("\"family\": \"lasso\""));
    }

    #[test]
    fn path_rejects_increasing_lambdas() {
        let d = random_data(10, 5, 3, 2);
        assert!(penalization_path(
            &d,
            &ModelSpec::gaussian(),
            PenaltyFamily::Lasso,
            1.0,
            &[0.1, 0.2],
            3.7,
            &SolverControl::default()
        )
        .is_err());
    }
}
