//! GEE and penalized GEE estimation.
//!
//! The penalized estimating equation
//!
//! ```text
//! S(β) - N·Ṗ(β) = 0,    S(β) = Σ_i D_iᵀ V_i⁻¹ (y_i - μ_i)
//! ```
//!
//! is solved by the local quadratic approximation (LQA): at every
//! iteration coefficients closer to zero than `zero_threshold` are removed
//! for good, the penalty gradient is linearized as `Σ(β_t) β` with
//! `Σ = diag{P'(|β_j|)/|β_j|}`, and the surviving coordinates take the
//! Newton-type step
//!
//! ```text
//! β_{t+1} = β_t + (H + NΣ)⁻¹ (S(β_t) - NΣβ_t),    H = Σ_i D_iᵀ V_i⁻¹ D_i
//! ```
//!
//! until `‖β_{t+1} - β_t‖₂ < c`. `H` is the expected information, i.e.
//! `-∂S/∂β` in the gaussian case.
//!
//! For a gaussian model with a fixed working covariance the score is
//! linear in `β`, so the problem collapses to the sufficient statistics
//! `G = Σ X_iᵀV_i⁻¹X_i` and `b = Σ X_iᵀV_i⁻¹y_i`. Cross-validation uses the
//! same statistics with one subject's contribution subtracted.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::correlation::{
    build_correlation, estimate_alpha, estimate_dispersion, working_covariance, CorrelationKind, CorrelationSpec,
    Family, VarianceModel,
};
use crate::data::{ClusterView, LongitudinalDataset};
use crate::error::{PgeeError, Result};
use crate::penalty::{lqa_weights, penalty_value, PenaltySpec};
use crate::scalar::Real;

/// Smallest ridge used for the warm start.
pub const WARM_START_RIDGE: f64 = 1e-3;

/// Bound on `|η|` under the logit link so that `μ(1-μ)` stays positive.
const MAX_LOGIT: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    #[default]
    Identity,
    Logit,
}

impl Link {
    /// `g⁻¹(η)` and `dμ/dη`.
    #[inline]
    fn inverse<T: Real>(self, eta: T) -> (T, T) {
        match self {
            Link::Identity => (eta, T::one()),
            Link::Logit => {
                let bound = T::lit(MAX_LOGIT);
                let e = eta.max(-bound).min(bound);
                let mu = T::one() / (T::one() + (-e).exp());
                (mu, mu * (T::one() - mu))
            }
        }
    }
}

/// Link, variance function and working correlation of the marginal model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec<T: Real> {
    pub link: Link,
    pub variance: VarianceModel<T>,
    pub correlation: CorrelationSpec<T>,
    /// Re-estimate the correlation parameter by moments at every iteration
    /// (ignored under independence).
    pub estimate_correlation: bool,
}

impl<T: Real> ModelSpec<T> {
    /// Identity link, unit dispersion, working independence.
    pub fn gaussian() -> Self {
        Self {
            link: Link::Identity,
            variance: VarianceModel::gaussian(),
            correlation: CorrelationSpec::independence(),
            estimate_correlation: false,
        }
    }

    /// Logit link, Bernoulli variance, working independence.
    pub fn binomial() -> Self {
        Self {
            link: Link::Logit,
            variance: VarianceModel::binomial(),
            correlation: CorrelationSpec::independence(),
            estimate_correlation: false,
        }
    }

    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Gaussian => Self::gaussian(),
            Family::Binomial => Self::binomial(),
        }
    }

    /// Uses the given structure with a moment-estimated parameter.
    pub fn with_working(mut self, kind: CorrelationKind) -> Self {
        self.correlation = CorrelationSpec { kind, alpha: T::zero() };
        self.estimate_correlation = kind != CorrelationKind::Independence;
        self
    }

    /// Uses a fixed working correlation.
    pub fn with_correlation(mut self, correlation: CorrelationSpec<T>) -> Self {
        self.correlation = correlation;
        self.estimate_correlation = false;
        self
    }

    pub fn is_gaussian(&self) -> bool {
        self.variance.family == Family::Gaussian
    }

    pub(crate) fn estimates_alpha(&self) -> bool {
        self.estimate_correlation && self.correlation.kind != CorrelationKind::Independence
    }

    pub fn validate(&self) -> Result<()> {
        match (self.link, self.variance.family) {
            (Link::Identity, Family::Gaussian) | (Link::Logit, Family::Binomial) => {}
            (l, f) => {
                return Err(PgeeError::InvalidParameter(format!(
                    "link {l:?} is not paired with the {f} family"
                )))
            }
        }
        if !(self.variance.dispersion > T::zero()) {
            return Err(PgeeError::InvalidParameter("dispersion must be positive".into()));
        }
        Ok(())
    }
}

/// Starting value of the LQA iteration.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init<T: Real> {
    /// Ridge fit with `λ₂ = max(λ₂, 1e-3)`.
    #[default]
    RidgeWarmStart,
    /// All zeros; only valid without any penalty.
    Zeros,
    User(DVector<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverControl<T: Real> {
    pub zero_threshold: T,
    pub convergence_c: T,
    pub max_iterations: usize,
    pub init: Init<T>,
    pub ridge_jitter: T,
}

impl<T: Real> Default for SolverControl<T> {
    fn default() -> Self {
        Self {
            zero_threshold: T::lit(1e-4),
            convergence_c: T::lit(1e-6),
            max_iterations: 200,
            init: Init::RidgeWarmStart,
            ridge_jitter: T::lit(1e-8),
        }
    }
}

impl<T: Real> SolverControl<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.zero_threshold >= T::zero())
            || !(self.convergence_c > T::zero())
            || !(self.ridge_jitter >= T::zero())
            || self.max_iterations == 0
        {
            return Err(PgeeError::InvalidParameter(
                "solver control values must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Result of a (penalized) GEE fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PgeeFit<T: Real> {
    pub beta_naive: DVector<T>,
    /// `beta_naive · (1 + λ₂)`.
    pub beta_nonnaive: DVector<T>,
    /// Indices of the nonzero coefficients.
    pub active_set: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub threshold_used: T,
    /// `Q^P` after every iteration; empty unless the model is gaussian with
    /// a fixed, full-rank working problem.
    pub objective_trace: Vec<T>,
    /// Number of coordinates removed at each iteration's thresholding step.
    pub deletions: Vec<usize>,
    pub penalty: PenaltySpec<T>,
    /// Model snapshot, carrying the final correlation estimate.
    pub model: ModelSpec<T>,
    /// Mean squared Pearson residual over `N - p`.
    pub dispersion_estimate: T,
}

impl<T: Real> PgeeFit<T> {
    pub fn n_active(&self) -> usize {
        self.active_set.len()
    }
}

/// `μ_i = g⁻¹(X_i β)` and `D_i = ∂μ_i/∂β`.
pub fn mean_and_derivatives<T: Real>(beta: &DVector<T>, x: &DMatrix<T>, link: Link) -> (DVector<T>, DMatrix<T>) {
    let eta = x * beta;
    let mut mu = DVector::zeros(eta.len());
    let mut d = x.clone();
    for t in 0..eta.len() {
        let (m, dm) = link.inverse(eta[t]);
        mu[t] = m;
        if link != Link::Identity {
            d.row_mut(t).scale_mut(dm);
        }
    }
    (mu, d)
}

/// Fitted means `g⁻¹(Xβ)`.
pub fn predict<T: Real>(beta: &DVector<T>, x: &DMatrix<T>, link: Link) -> DVector<T> {
    (x * beta).map(|e| link.inverse(e).0)
}

/// Per-cluster contributions `D_iᵀV_i⁻¹(y_i - μ_i)` and `D_iᵀV_i⁻¹D_i`,
/// accumulated into `s` and `h`.
fn accumulate_cluster<T: Real>(
    beta: &DVector<T>,
    c: ClusterView<'_, T>,
    model: &ModelSpec<T>,
    s: &mut DVector<T>,
    h: &mut DMatrix<T>,
) -> Result<()> {
    let (mu, d) = mean_and_derivatives(beta, c.x, model.link);
    let r = c.y - &mu;
    let tiny = T::lit(1e-12);
    let u = mu.map(|m| model.variance.variance(m).max(tiny));
    if model.correlation.kind == CorrelationKind::Independence {
        for t in 0..c.size {
            let w = T::one() / u[t];
            let row = d.row(t);
            *s += row.transpose() * (r[t] * w);
            h.ger(w, &row.transpose(), &row.transpose(), T::one());
        }
    } else {
        let w = build_correlation(&model.correlation, c.size)?;
        let v = working_covariance(&u, &w)?;
        let chol = v.cholesky().ok_or(PgeeError::SingularCovariance)?;
        let vinv_d = chol.solve(&d);
        let vinv_r = chol.solve(&r);
        *s += d.transpose() * vinv_r;
        *h += d.transpose() * vinv_d;
    }
    Ok(())
}

/// `S(β)` and `H(β) = Σ D_iᵀV_i⁻¹D_i` over all subjects.
fn score_and_information<T: Real>(
    beta: &DVector<T>,
    data: &LongitudinalDataset<T>,
    model: &ModelSpec<T>,
) -> Result<(DVector<T>, DMatrix<T>)> {
    let p = data.n_covariates();
    if beta.len() != p {
        return Err(PgeeError::DimensionMismatch(format!(
            "{} coefficients for {p} covariates",
            beta.len()
        )));
    }
    let mut s = DVector::zeros(p);
    let mut h = DMatrix::zeros(p, p);
    for i in 0..data.n_subjects() {
        accumulate_cluster(beta, data.cluster_view(i)?, model, &mut s, &mut h)?;
    }
    Ok((s, h))
}

/// GEE score `S = Σ D_iᵀV_i⁻¹(y_i - μ_i)` and `K = (1/n) Σ D_iᵀV_i⁻¹D_i`
/// with the model's correlation parameter as given.
pub fn gee_score<T: Real>(
    beta: &DVector<T>,
    data: &LongitudinalDataset<T>,
    model: &ModelSpec<T>,
) -> Result<(DVector<T>, DMatrix<T>)> {
    model.validate()?;
    let (s, h) = score_and_information(beta, data, model)?;
    Ok((s, h / T::count(data.n_subjects())))
}

/// `S` and `H` under working independence from the pooled design.
fn pooled_independence_score<T: Real>(
    beta: &DVector<T>,
    x: &DMatrix<T>,
    y: &DVector<T>,
    model: &ModelSpec<T>,
) -> (DVector<T>, DMatrix<T>) {
    let eta = x * beta;
    let tiny = T::lit(1e-12);
    let mut r = DVector::zeros(eta.len());
    let mut root_w = DVector::zeros(eta.len());
    for k in 0..eta.len() {
        let (mu, dmu) = model.link.inverse(eta[k]);
        let v = model.variance.variance(mu).max(tiny);
        r[k] = (y[k] - mu) * dmu / v;
        root_w[k] = dmu / v.sqrt();
    }
    let mut xw = x.clone();
    for (k, mut row) in xw.row_iter_mut().enumerate() {
        row.scale_mut(root_w[k]);
    }
    (x.tr_mul(&r), xw.tr_mul(&xw))
}

/// Pearson residuals `(y - μ)/sqrt(v(μ))` with unit dispersion.
pub(crate) fn pearson_residuals<T: Real>(
    beta: &DVector<T>,
    data: &LongitudinalDataset<T>,
    model: &ModelSpec<T>,
) -> Vec<DVector<T>> {
    let unit = VarianceModel {
        family: model.variance.family,
        dispersion: T::one(),
    };
    data.clusters()
        .iter()
        .map(|c| {
            let mu = predict(beta, &c.x, model.link);
            DVector::from_fn(c.len(), |t, _| {
                (c.y[t] - mu[t]) / unit.variance(mu[t]).max(T::lit(1e-12)).sqrt()
            })
        })
        .collect()
}

/// Sufficient statistics of a gaussian model with fixed working covariance.
#[derive(Debug, Clone)]
pub(crate) struct GaussianStats<T: Real> {
    pub gram: DMatrix<T>,
    pub xty: DVector<T>,
    pub n_obs: usize,
}

impl<T: Real> GaussianStats<T> {
    /// Per-subject contributions `(X_iᵀV_i⁻¹X_i, X_iᵀV_i⁻¹y_i)`.
    pub fn per_cluster(data: &LongitudinalDataset<T>, model: &ModelSpec<T>) -> Result<Vec<Self>> {
        let phi = model.variance.dispersion;
        let mut factors: HashMap<usize, Cholesky<T, Dyn>> = HashMap::new();
        data.clusters()
            .iter()
            .map(|c| {
                let (vinv_x, vinv_y) = if model.correlation.kind == CorrelationKind::Independence {
                    (c.x.clone() / phi, c.y.clone() / phi)
                } else {
                    let t = c.len();
                    if let std::collections::hash_map::Entry::Vacant(slot) = factors.entry(t) {
                        let w = build_correlation(&model.correlation, t)? * phi;
                        slot.insert(w.cholesky().ok_or(PgeeError::SingularCovariance)?);
                    }
                    let chol = &factors[&t];
                    (chol.solve(&c.x), chol.solve(&c.y))
                };
                Ok(Self {
                    gram: c.x.transpose() * vinv_x,
                    xty: c.x.transpose() * vinv_y,
                    n_obs: c.len(),
                })
            })
            .collect()
    }

    pub fn total(parts: &[Self]) -> Self {
        let p = parts[0].xty.len();
        let mut acc = Self {
            gram: DMatrix::zeros(p, p),
            xty: DVector::zeros(p),
            n_obs: 0,
        };
        for s in parts {
            acc.gram += &s.gram;
            acc.xty += &s.xty;
            acc.n_obs += s.n_obs;
        }
        acc
    }

    pub fn minus(&self, other: &Self) -> Self {
        Self {
            gram: &self.gram - &other.gram,
            xty: &self.xty - &other.xty,
            n_obs: self.n_obs - other.n_obs,
        }
    }
}

/// The estimating-equation problem seen by the LQA loop.
pub(crate) enum Problem<'a, T: Real> {
    Gaussian {
        stats: GaussianStats<T>,
        /// Cholesky factor of `G`, when it is positive definite.
        gram_chol: Option<Cholesky<T, Dyn>>,
    },
    General {
        data: &'a LongitudinalDataset<T>,
        model: ModelSpec<T>,
        /// Pooled `(X, y)` under working independence.
        pooled: Option<(DMatrix<T>, DVector<T>)>,
    },
}

impl<'a, T: Real> Problem<'a, T> {
    pub fn new(data: &'a LongitudinalDataset<T>, model: &ModelSpec<T>) -> Result<Self> {
        if model.is_gaussian() && !model.estimates_alpha() {
            let parts = GaussianStats::per_cluster(data, model)?;
            Ok(Self::from_stats(GaussianStats::total(&parts)))
        } else {
            let pooled = (model.correlation.kind == CorrelationKind::Independence).then(|| data.pooled());
            Ok(Self::General {
                data,
                model: *model,
                pooled,
            })
        }
    }

    pub fn from_stats(stats: GaussianStats<T>) -> Self {
        let gram_chol = checked_cholesky(&stats.gram);
        Self::Gaussian { stats, gram_chol }
    }

    pub fn n_obs(&self) -> usize {
        match self {
            Self::Gaussian { stats, .. } => stats.n_obs,
            Self::General { data, .. } => data.n_obs(),
        }
    }

    pub fn p(&self) -> usize {
        match self {
            Self::Gaussian { stats, .. } => stats.xty.len(),
            Self::General { data, .. } => data.n_covariates(),
        }
    }

    /// Current correlation parameter (only moves in the general case).
    fn alpha(&self) -> Option<T> {
        match self {
            Self::Gaussian { .. } => None,
            Self::General { model, .. } => Some(model.correlation.alpha),
        }
    }

    /// Re-estimates `α` at `beta` when the model asks for it.
    fn refresh_correlation(&mut self, beta: &DVector<T>) -> Result<()> {
        if let Self::General { data, model, .. } = self {
            if model.estimates_alpha() {
                let res = pearson_residuals(beta, data, model);
                let phi = estimate_dispersion(&res, data.n_covariates());
                if phi > T::zero() {
                    model.correlation.alpha = estimate_alpha(&res, model.correlation.kind, phi)?;
                }
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, beta: &DVector<T>) -> Result<(DVector<T>, DMatrix<T>)> {
        match self {
            Self::Gaussian { stats, .. } => Ok((&stats.xty - &stats.gram * beta, stats.gram.clone())),
            Self::General {
                model,
                pooled: Some((x, y)),
                ..
            } => Ok(pooled_independence_score(beta, x, y, model)),
            Self::General { data, model, .. } => score_and_information(beta, data, model),
        }
    }

    /// `Q(β) = ½ SᵀH⁻¹S`, available for a full-rank gaussian problem.
    fn gls_objective(&self, beta: &DVector<T>) -> Option<T> {
        match self {
            Self::Gaussian {
                stats,
                gram_chol: Some(chol),
            } => {
                let s = &stats.xty - &stats.gram * beta;
                Some(s.dot(&chol.solve(&s)) * T::lit(0.5))
            }
            _ => None,
        }
    }
}

/// Cholesky that also rejects numerically singular matrices (smallest
/// pivot negligible against the largest).
pub(crate) fn checked_cholesky<T: Real>(m: &DMatrix<T>) -> Option<Cholesky<T, Dyn>> {
    let chol = m.clone().cholesky()?;
    let diag = chol.l_dirty().diagonal();
    let max = diag.iter().fold(T::zero(), |a, &v| a.max(v));
    let min = diag.iter().fold(max, |a, &v| a.min(v));
    if min * min > max * max * T::default_epsilon() * T::lit(16.0) {
        Some(chol)
    } else {
        None
    }
}

/// Solves `M x = rhs` for symmetric positive (semi)definite `M`, adding
/// `jitter · I` when the plain factorization breaks down.
fn solve_spd<T: Real>(m: &DMatrix<T>, rhs: &DVector<T>, jitter: T) -> Option<DVector<T>> {
    if let Some(chol) = checked_cholesky(m) {
        let x = chol.solve(rhs);
        if x.iter().all(|v| v.is_finite_value()) {
            return Some(x);
        }
    }
    let n = m.nrows();
    let jittered = m + DMatrix::identity(n, n) * jitter;
    let x = jittered.cholesky()?.solve(rhs);
    x.iter().all(|v| v.is_finite_value()).then_some(x)
}

pub(crate) fn submatrix<T: Real>(m: &DMatrix<T>, idx: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

/// Ridge fit by penalized Fisher scoring from zero.
pub(crate) fn ridge_solution<T: Real>(
    problem: &mut Problem<'_, T>,
    lambda2: T,
    control: &SolverControl<T>,
) -> Result<DVector<T>> {
    let p = problem.p();
    let n = T::count(problem.n_obs());
    let two_n_l2 = T::lit(2.0) * n * lambda2;
    let mut beta = DVector::zeros(p);
    for it in 0..control.max_iterations {
        problem.refresh_correlation(&beta)?;
        let (s, h) = problem.evaluate(&beta)?;
        let m = h + DMatrix::identity(p, p) * two_n_l2;
        let rhs = s - &beta * two_n_l2;
        let step = solve_spd(&m, &rhs, control.ridge_jitter).ok_or(PgeeError::SingularNewton(it))?;
        beta += &step;
        if step.norm() < control.convergence_c {
            break;
        }
    }
    Ok(beta)
}

/// Raw output of the LQA iteration.
#[derive(Debug, Clone)]
pub(crate) struct LqaOutcome<T: Real> {
    pub beta: DVector<T>,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<T>,
    pub deletions: Vec<usize>,
    pub alpha: Option<T>,
}

/// Runs the three-step LQA iteration.
pub(crate) fn run_lqa<T: Real>(
    problem: &mut Problem<'_, T>,
    penalty: &PenaltySpec<T>,
    control: &SolverControl<T>,
) -> Result<LqaOutcome<T>> {
    let p = problem.p();
    let n = T::count(problem.n_obs());
    let penalized = penalty.lambda1 > T::zero() || penalty.lambda2 > T::zero();

    let mut beta = match &control.init {
        Init::RidgeWarmStart => {
            let l2 = penalty.lambda2.max(T::lit(WARM_START_RIDGE));
            ridge_solution(problem, l2, control)?
        }
        Init::Zeros => {
            if penalized {
                return Err(PgeeError::InvalidParameter(
                    "a zero start is only valid without a penalty".into(),
                ));
            }
            DVector::zeros(p)
        }
        Init::User(b) => {
            if b.len() != p {
                return Err(PgeeError::DimensionMismatch(format!(
                    "initial vector of length {} for {p} covariates",
                    b.len()
                )));
            }
            b.clone()
        }
    };
    let skip_first_threshold = matches!(control.init, Init::Zeros);

    let mut mask = vec![false; p];
    let mut trace = Vec::new();
    let mut deletions = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..control.max_iterations {
        iterations = it + 1;

        // Step 1: drop coefficients that reached zero, permanently.
        let mut deleted = 0;
        if !(it == 0 && skip_first_threshold) {
            for j in 0..p {
                if !mask[j] && beta[j].abs() < control.zero_threshold {
                    mask[j] = true;
                    beta[j] = T::zero();
                    deleted += 1;
                }
            }
        }
        deletions.push(deleted);
        let active: Vec<usize> = (0..p).filter(|&j| !mask[j]).collect();
        if active.is_empty() {
            converged = true;
            if let Some(q) = problem.gls_objective(&beta) {
                trace.push(q + n * penalty_value(penalty, &beta));
            }
            break;
        }

        // Step 2: quadratic approximation of the penalty.
        problem.refresh_correlation(&beta)?;
        let (s, h) = problem.evaluate(&beta)?;
        let (sigma, u) = if penalized {
            lqa_weights(penalty, &beta, &mask)?
        } else {
            (DVector::zeros(p), DVector::zeros(p))
        };

        // Step 3: Newton-type update of the active coordinates.
        let mut m = submatrix(&h, &active);
        for (k, &j) in active.iter().enumerate() {
            m[(k, k)] += n * sigma[j];
        }
        let rhs = DVector::from_fn(active.len(), |k, _| s[active[k]] - n * u[active[k]]);
        let step = solve_spd(&m, &rhs, control.ridge_jitter).ok_or(PgeeError::SingularNewton(it))?;
        for (k, &j) in active.iter().enumerate() {
            beta[j] += step[k];
        }
        if !beta.iter().all(|v| v.is_finite_value()) {
            return Err(PgeeError::SingularNewton(it));
        }
        if let Some(q) = problem.gls_objective(&beta) {
            trace.push(q + n * penalty_value(penalty, &beta));
        }
        if step.norm() < control.convergence_c {
            converged = true;
            break;
        }
    }

    // Final thresholding so that the active set is exactly the nonzeros.
    for j in 0..p {
        if mask[j] || beta[j].abs() < control.zero_threshold {
            beta[j] = T::zero();
        }
    }

    Ok(LqaOutcome {
        beta,
        iterations,
        converged,
        objective_trace: trace,
        deletions,
        alpha: problem.alpha(),
    })
}

fn warn_if_unstandardized<T: Real>(data: &LongitudinalDataset<T>) {
    let (x, _) = data.pooled();
    let n = T::count(data.n_obs());
    for (j, col) in x.column_iter().enumerate() {
        let mean = col.sum() / n;
        let var = col.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
        if (var - T::one()).abs() > T::lit(1e-6) {
            log::warn!(
                "covariate `{}` has pooled variance {var}; penalties assume standardized columns",
                data.covariate_names()[j]
            );
            return;
        }
    }
}

fn assemble_fit<T: Real>(
    outcome: LqaOutcome<T>,
    data: &LongitudinalDataset<T>,
    model: &ModelSpec<T>,
    penalty: &PenaltySpec<T>,
    control: &SolverControl<T>,
) -> PgeeFit<T> {
    let mut model = *model;
    if let Some(alpha) = outcome.alpha {
        model.correlation.alpha = alpha;
    }
    let res = pearson_residuals(&outcome.beta, data, &model);
    let dispersion_estimate = estimate_dispersion(&res, data.n_covariates());
    let active_set = (0..outcome.beta.len())
        .filter(|&j| outcome.beta[j] != T::zero())
        .collect();
    PgeeFit {
        beta_nonnaive: &outcome.beta * penalty.rescale_factor(),
        beta_naive: outcome.beta,
        active_set,
        iterations: outcome.iterations,
        converged: outcome.converged,
        threshold_used: control.zero_threshold,
        objective_trace: outcome.objective_trace,
        deletions: outcome.deletions,
        penalty: *penalty,
        model,
        dispersion_estimate,
    }
}

/// Penalized GEE fit by the local quadratic approximation.
///
/// The data are expected to be standardized; a warning is logged
/// otherwise. Exceeding `max_iterations` returns the last iterate with
/// `converged = false`.
pub fn fit_pgee<T: Real>(
    data: &LongitudinalDataset<T>,
    model: &ModelSpec<T>,
    penalty: &PenaltySpec<T>,
    control: &SolverControl<T>,
) -> Result<PgeeFit<T>> {
    model.validate()?;
    penalty.validate()?;
    control.validate()?;
    warn_if_unstandardized(data);
    let mut problem = Problem::new(data, model)?;
    let outcome = run_lqa(&mut problem, penalty, control)?;
    Ok(assemble_fit(outcome, data, model, penalty, control))
}

/// Unpenalized GEE by Fisher scoring from zero, without thresholding.
///
/// Rank-deficient designs are rejected. A fit that fails to converge, or
/// whose information matrix degenerates on the way (separated binary
/// data), comes back with `converged = false`.
pub fn fit_gee<T: Real>(
    data: &LongitudinalDataset<T>,
    model: &ModelSpec<T>,
    control: &SolverControl<T>,
) -> Result<PgeeFit<T>> {
    model.validate()?;
    control.validate()?;
    let p = data.n_covariates();
    if p >= data.n_obs() {
        return Err(PgeeError::DesignSingular);
    }
    let (x, _) = data.pooled();
    if checked_cholesky(&(x.transpose() * &x)).is_none() {
        return Err(PgeeError::DesignSingular);
    }

    let mut problem = Problem::new(data, model)?;
    let mut beta = DVector::zeros(p);
    let mut converged = false;
    let mut iterations = 0;
    let mut trace = Vec::new();
    for it in 0..control.max_iterations {
        iterations = it + 1;
        problem.refresh_correlation(&beta)?;
        let (s, h) = problem.evaluate(&beta)?;
        let Some(step) = checked_cholesky(&h).map(|c| c.solve(&s)) else {
            break;
        };
        if !step.iter().all(|v| v.is_finite_value()) {
            break;
        }
        beta += &step;
        if let Some(q) = problem.gls_objective(&beta) {
            trace.push(q);
        }
        if step.norm() < control.convergence_c {
            converged = true;
            break;
        }
    }
    let outcome = LqaOutcome {
        beta,
        iterations,
        converged,
        objective_trace: trace,
        deletions: Vec::new(),
        alpha: problem.alpha(),
    };
    let mut fit = assemble_fit(outcome, data, model, &PenaltySpec::none(), control);
    fit.threshold_used = T::zero();
    Ok(fit)
}

/// Penalized generalized least-squares objective
/// `Q^P(β) = (1/2n) SᵀK⁻¹S + N·P(β)`, whose stationary points solve the
/// penalized estimating equation in the gaussian case.
pub fn pgls_objective<T: Real>(
    beta: &DVector<T>,
    data: &LongitudinalDataset<T>,
    model: &ModelSpec<T>,
    penalty: &PenaltySpec<T>,
) -> Result<T> {
    if !model.is_gaussian() || model.link != Link::Identity {
        return Err(PgeeError::GaussianOnly);
    }
    model.validate()?;
    let (s, k) = gee_score(beta, data, model)?;
    let n = T::count(data.n_subjects());
    let chol = checked_cholesky(&k).ok_or(PgeeError::DesignSingular)?;
    let q = s.dot(&chol.solve(&s)) / (T::lit(2.0) * n);
    Ok(q + T::count(data.n_obs()) * penalty_value(penalty, beta))
}
