//! Working correlation `W(α)`, working covariance
//! `V_i = U_i^{1/2} W(α) U_i^{1/2}` and moment estimators of `α` and `φ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PgeeError, Result};
use crate::scalar::Real;

/// Bound applied to moment estimates of `α`.
pub const ALPHA_CLAMP: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    #[default]
    Independence,
    Exchangeable,
    Ar1,
}

impl std::str::FromStr for CorrelationKind {
    type Err = PgeeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independence" | "identity" => Ok(Self::Independence),
            "exchangeable" => Ok(Self::Exchangeable),
            "ar1" | "ar(1)" => Ok(Self::Ar1),
            other => Err(PgeeError::InvalidParameter(format!(
                "unknown working correlation `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for CorrelationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Independence => "independence",
            Self::Exchangeable => "exchangeable",
            Self::Ar1 => "ar1",
        })
    }
}

/// Working correlation structure and its parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec<T: Real> {
    pub kind: CorrelationKind,
    /// Unused for independence.
    pub alpha: T,
}

impl<T: Real> CorrelationSpec<T> {
    pub fn independence() -> Self {
        Self {
            kind: CorrelationKind::Independence,
            alpha: T::zero(),
        }
    }

    pub fn exchangeable(alpha: T) -> Self {
        Self {
            kind: CorrelationKind::Exchangeable,
            alpha,
        }
    }

    pub fn ar1(alpha: T) -> Self {
        Self {
            kind: CorrelationKind::Ar1,
            alpha,
        }
    }

    /// Checks `α` for a cluster of size `t`.
    pub fn validate(&self, t: usize) -> Result<()> {
        let a = self.alpha;
        let ok = match self.kind {
            CorrelationKind::Independence => true,
            CorrelationKind::Ar1 => a > -T::one() && a < T::one(),
            CorrelationKind::Exchangeable => {
                let lower = if t >= 2 { -T::one() / T::count(t - 1) } else { -T::one() };
                a > lower.max(-T::one()) && a < T::one()
            }
        };
        if ok && a.is_finite_value() {
            Ok(())
        } else {
            Err(PgeeError::InvalidParameter(format!(
                "{} correlation parameter {} outside validity range for cluster size {t}",
                self.kind, a
            )))
        }
    }
}

/// Variance family of the marginal model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    Gaussian,
    Binomial,
}

impl std::str::FromStr for Family {
    type Err = PgeeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Self::Gaussian),
            "binomial" | "bernoulli" => Ok(Self::Binomial),
            other => Err(PgeeError::InvalidParameter(format!("unknown family `{other}`"))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gaussian => "gaussian",
            Self::Binomial => "binomial",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceModel<T: Real> {
    pub family: Family,
    pub dispersion: T,
}

impl<T: Real> VarianceModel<T> {
    pub fn gaussian() -> Self {
        Self {
            family: Family::Gaussian,
            dispersion: T::one(),
        }
    }

    pub fn binomial() -> Self {
        Self {
            family: Family::Binomial,
            dispersion: T::one(),
        }
    }

    /// `Var(Y | X)` at mean `mu`: `φ` for gaussian, `φ μ(1-μ)` for binomial.
    #[inline]
    pub fn variance(&self, mu: T) -> T {
        match self.family {
            Family::Gaussian => self.dispersion,
            Family::Binomial => self.dispersion * mu * (T::one() - mu),
        }
    }
}

/// `T × T` working correlation matrix.
pub fn build_correlation<T: Real>(spec: &CorrelationSpec<T>, t: usize) -> Result<DMatrix<T>> {
    if t == 0 {
        return Err(PgeeError::InvalidParameter("cluster size must be at least 1".into()));
    }
    spec.validate(t)?;
    let a = spec.alpha;
    Ok(match spec.kind {
        CorrelationKind::Independence => DMatrix::identity(t, t),
        CorrelationKind::Exchangeable => DMatrix::from_fn(t, t, |r, c| if r == c { T::one() } else { a }),
        CorrelationKind::Ar1 => DMatrix::from_fn(t, t, |r, c| a.powi(r.abs_diff(c) as i32)),
    })
}

/// `V_st = sqrt(u_s u_t) W_st`.
pub fn working_covariance<T: Real>(u: &DVector<T>, w: &DMatrix<T>) -> Result<DMatrix<T>> {
    let t = u.len();
    if w.nrows() != t || w.ncols() != t {
        return Err(PgeeError::DimensionMismatch(format!(
            "variance vector of length {t} with {}×{} correlation",
            w.nrows(),
            w.ncols()
        )));
    }
    if let Some(k) = u.iter().position(|&v| v <= T::zero() || !v.is_finite_value()) {
        return Err(PgeeError::InvalidParameter(format!(
            "variance entry {k} is not strictly positive"
        )));
    }
    let root = u.map(|v| v.sqrt());
    Ok(DMatrix::from_fn(t, t, |r, c| {
        if r == c {
            u[r] * w[(r, c)]
        } else {
            root[r] * root[c] * w[(r, c)]
        }
    }))
}

/// Unclamped moment estimate of `α` from per-subject Pearson residuals:
/// the mean of all distinct within-subject cross-products (exchangeable)
/// or of lag-1 products (AR(1)), divided by the dispersion.
pub fn moment_alpha<T: Real>(residuals: &[DVector<T>], kind: CorrelationKind, dispersion: T) -> Result<T> {
    let mut sum = T::zero();
    let mut pairs = 0usize;
    for r in residuals {
        let t = r.len();
        match kind {
            CorrelationKind::Independence => {
                return Err(PgeeError::InvalidParameter(
                    "independence has no correlation parameter".into(),
                ))
            }
            CorrelationKind::Exchangeable => {
                for s in 0..t {
                    for u in s + 1..t {
                        sum += r[s] * r[u];
                    }
                }
                pairs += t * t.saturating_sub(1) / 2;
            }
            CorrelationKind::Ar1 => {
                for s in 1..t {
                    sum += r[s - 1] * r[s];
                }
                pairs += t.saturating_sub(1);
            }
        }
    }
    if pairs == 0 {
        return Err(PgeeError::CorrelationNotEstimable);
    }
    Ok(sum / T::count(pairs) / dispersion)
}

/// Moment estimate of `α` clamped to `[-0.99, 0.99]`; for the exchangeable
/// structure it is also kept above `-1/(T_max - 1)`.
pub fn estimate_alpha<T: Real>(residuals: &[DVector<T>], kind: CorrelationKind, dispersion: T) -> Result<T> {
    let raw = moment_alpha(residuals, kind, dispersion)?;
    let bound = T::lit(ALPHA_CLAMP);
    let mut lower = -bound;
    if kind == CorrelationKind::Exchangeable {
        let t_max = residuals.iter().map(|r| r.len()).max().unwrap_or(2);
        if t_max > 2 {
            lower = lower.max(-T::one() / T::count(t_max - 1) + T::lit(0.01));
        }
    }
    Ok(raw.max(lower).min(bound))
}

/// Mean squared Pearson residual over `N - p` degrees of freedom.
pub fn estimate_dispersion<T: Real>(residuals: &[DVector<T>], p: usize) -> T {
    let n: usize = residuals.iter().map(|r| r.len()).sum();
    let ss = residuals.iter().fold(T::zero(), |acc, r| acc + r.norm_squared());
    let df = n.saturating_sub(p).max(1);
    ss / T::count(df)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn independence_is_identity() {
        let w = build_correlation(&CorrelationSpec::<f64>::independence(), 3).unwrap();
        assert_eq!(w, DMatrix::identity(3, 3));
    }

    #[test]
    fn ar1_entries() {
        let w = build_correlation(&CorrelationSpec::ar1(0.5), 3).unwrap();
        assert_eq!(w, dmatrix![1.0, 0.5, 0.25; 0.5, 1.0, 0.5; 0.25, 0.5, 1.0]);
    }

    #[test]
    fn exchangeable_entries() {
        let w = build_correlation(&CorrelationSpec::exchangeable(0.3), 2).unwrap();
        assert_eq!(w, dmatrix![1.0, 0.3; 0.3, 1.0]);
    }

    #[test]
    fn invalid_alpha_rejected() {
        assert!(build_correlation(&CorrelationSpec::ar1(1.0), 3).is_err());
        assert!(build_correlation(&CorrelationSpec::exchangeable(-0.6), 3).is_err());
        assert!(build_correlation(&CorrelationSpec::exchangeable(-0.4), 3).is_ok());
    }

    #[test]
    fn covariance_scaling() {
        let v = working_covariance(&DVector::from_vec(vec![4.0, 1.0]), &dmatrix![1.0, 0.5; 0.5, 1.0]).unwrap();
        assert_eq!(v, dmatrix![4.0, 1.0; 1.0, 1.0]);
        let v = working_covariance(&DVector::from_element(3, 1.0), &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(v, DMatrix::identity(3, 3));
        assert!(working_covariance(&DVector::from_vec(vec![0.0, 1.0]), &DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn independence_covariance_is_diagonal_exactly() {
        let u = DVector::from_vec(vec![0.3, 2.0, 7.5]);
        let w = build_correlation(&CorrelationSpec::independence(), 3).unwrap();
        assert_eq!(working_covariance(&u, &w).unwrap(), DMatrix::from_diagonal(&u));
    }

    #[test]
    fn ar1_inverse_is_tridiagonal() {
        for t in 2..=5 {
            let w = build_correlation(&CorrelationSpec::<f64>::ar1(0.6), t).unwrap();
            let inv = w.try_inverse().unwrap();
            for r in 0..t {
                for c in 0..t {
                    if r.abs_diff(c) > 1 {
                        assert!(inv[(r, c)].abs() < 1e-12, "t={t} ({r},{c}) = {}", inv[(r, c)]);
                    }
                }
            }
        }
    }

    #[test]
    fn perfectly_correlated_residuals_clamp() {
        let res = vec![
            DVector::from_vec(vec![1.0, 1.0, 1.0]),
            DVector::from_vec(vec![-1.0, -1.0, -1.0]),
        ];
        assert_relative_eq!(moment_alpha(&res, CorrelationKind::Exchangeable, 1.0).unwrap(), 1.0);
        assert_relative_eq!(estimate_alpha(&res, CorrelationKind::Exchangeable, 1.0).unwrap(), 0.99);
    }

    #[test]
    fn single_pair_lag_one() {
        let res = vec![DVector::from_vec(vec![1.0, 1.0])];
        assert_relative_eq!(moment_alpha(&res, CorrelationKind::Ar1, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn singleton_clusters_not_estimable() {
        let res = vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![0.3])];
        assert!(matches!(
            estimate_alpha(&res, CorrelationKind::Ar1, 1.0).unwrap_err(),
            PgeeError::CorrelationNotEstimable
        ));
    }

    #[test]
    fn independent_noise_gives_small_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let res: Vec<DVector<f64>> = (0..2000)
            .map(|_| DVector::from_fn(5, |_, _| rng.sample(StandardNormal)))
            .collect();
        for kind in [CorrelationKind::Exchangeable, CorrelationKind::Ar1] {
            let a = estimate_alpha(&res, kind, 1.0).unwrap();
            assert!(a.abs() < 0.05, "{kind}: {a}");
        }
    }

    #[test]
    fn works_in_single_precision() {
        let w = build_correlation(&CorrelationSpec::ar1(0.5f32), 3).unwrap();
        assert_eq!(w[(0, 2)], 0.25f32);
    }

    proptest! {
        #[test]
        fn correlation_symmetric_unit_diagonal(alpha in -0.95f64..0.95, t in 1usize..8, exch in any::<bool>()) {
            let spec = if exch { CorrelationSpec::exchangeable(alpha) } else { CorrelationSpec::ar1(alpha) };
            prop_assume!(spec.validate(t).is_ok());
            let w = build_correlation(&spec, t).unwrap();
            for r in 0..t {
                prop_assert!((w[(r, r)] - 1.0).abs() < 1e-14);
                for c in 0..t {
                    prop_assert!((w[(r, c)] - w[(c, r)]).abs() < 1e-14);
                }
            }
            prop_assert!(w.cholesky().is_some());
        }

        #[test]
        fn covariance_is_positive_definite(seed in any::<u64>(), t in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::<f64>::from_fn(t, t, |_, _| rng.sample(StandardNormal));
            let w0 = &a * a.transpose() + DMatrix::identity(t, t) * 0.1;
            let d = w0.diagonal().map(|v| 1.0 / v.sqrt());
            let w = DMatrix::from_fn(t, t, |r, c| w0[(r, c)] * d[r] * d[c]);
            let u = DVector::from_fn(t, |_, _| rng.random_range(0.1..5.0));
            let v = working_covariance(&u, &w).unwrap();
            prop_assert!(v.cholesky().is_some());
        }
    }
}
