//! Data generators for the cross-sectional and lagged-covariate designs.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Cluster, LongitudinalDataset};
use crate::error::{PgeeError, Result};

/// Number of covariates in the lagged designs.
pub const LAGGED_P: usize = 20;

/// Default cluster size of the lagged designs.
pub const LAGGED_T: usize = 5;

/// Configuration of `Y_it = X_itᵀβ + e_it` with AR(1) errors and
/// covariates drawn independently over time from `N(0, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSectionalConfig {
    pub n: usize,
    pub t: usize,
    pub beta: Vec<f64>,
    pub error_rho: f64,
    pub sigma: DMatrix<f64>,
}

impl Default for CrossSectionalConfig {
    fn default() -> Self {
        let mut sigma = DMatrix::identity(8, 8);
        sigma[(0, 1)] = 0.6;
        sigma[(1, 0)] = 0.6;
        sigma[(2, 3)] = 0.3;
        sigma[(3, 2)] = 0.3;
        Self {
            n: 20,
            t: 5,
            beta: vec![-1.0, -1.0, 1.0, 1.0, 0.5, 0.0, 0.0, 0.0],
            error_rho: 0.7,
            sigma,
        }
    }
}

impl CrossSectionalConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.beta.len();
        if self.n == 0 || self.t == 0 || p == 0 {
            return Err(PgeeError::InvalidParameter("n, T and p must be positive".into()));
        }
        if self.sigma.shape() != (p, p) {
            return Err(PgeeError::DimensionMismatch(format!("Σ is not {p}×{p}")));
        }
        if !(self.error_rho.abs() < 1.0) {
            return Err(PgeeError::InvalidParameter("|error_rho| must be below 1".into()));
        }
        covariance_root(&self.sigma, "Σ")?;
        Ok(())
    }
}

/// How the asymmetric printed `Σ₁` block is made symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sigma1Convention {
    /// Average of the two triangles: `corr(X₁, X₂) = 0.25`.
    #[default]
    Symmetrized,
    /// Upper triangle: `corr(X₁, X₂) = 0.2`.
    Upper,
    /// Lower triangle: `corr(X₁, X₂) = 0.3`.
    Lower,
}

impl Sigma1Convention {
    pub fn block(self) -> DMatrix<f64> {
        let s12 = match self {
            Self::Symmetrized => 0.25,
            Self::Upper => 0.2,
            Self::Lower => 0.3,
        };
        DMatrix::from_row_slice(3, 3, &[1.0, s12, 0.5, s12, 1.0, 0.4, 0.5, 0.4, 1.0])
    }

    /// `diag(Σ₁, Σ₁, Σ₁, I₁₁)`.
    pub fn sigma(self) -> DMatrix<f64> {
        let mut s = DMatrix::identity(LAGGED_P, LAGGED_P);
        let b = self.block();
        for k in 0..3 {
            s.view_mut((3 * k, 3 * k), (3, 3)).copy_from(&b);
        }
        s
    }
}

/// Configuration of
///
/// ```text
/// Y_it = X_itᵀγ₁ + X_{i,t-1}ᵀγ₂ + b_i + e_it,   X_{j,it} = ρ_j X_{j,i,t-1} + ε_{j,it}
/// ```
///
/// with stationary `X_it ~ N(0, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedConfig {
    pub n: usize,
    pub t: usize,
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub rho: Vec<f64>,
    pub sigma: DMatrix<f64>,
    /// Standard deviation of the subject effect `b_i`.
    pub subject_sd: f64,
    /// Standard deviation of `e_it` (unused for binary responses).
    pub error_sd: f64,
}

impl LaggedConfig {
    /// Scenario 1 or 2 with `n` subjects.
    pub fn scenario(scenario: u8, n: usize, convention: Sigma1Convention) -> Result<Self> {
        let (gamma, rho): (Vec<f64>, Vec<f64>) = match scenario {
            1 => {
                let mut g = vec![0.0; LAGGED_P];
                for j in 0..3 {
                    g[j] = 2.0;
                    g[3 + j] = 1.0;
                    g[6 + j] = 0.1;
                }
                (g, vec![0.5; LAGGED_P])
            }
            2 => {
                let mut g = vec![0.0; LAGGED_P];
                g[..6].fill(1.0);
                let mut r = vec![0.5; LAGGED_P];
                for j in 0..3 {
                    r[j] = 0.3;
                    r[3 + j] = 0.6;
                }
                (g, r)
            }
            other => return Err(PgeeError::InvalidParameter(format!("unknown scenario {other}"))),
        };
        Ok(Self {
            n,
            t: LAGGED_T,
            gamma1: gamma.clone(),
            gamma2: gamma,
            rho,
            sigma: convention.sigma(),
            subject_sd: 1.0,
            error_sd: 1.0,
        })
    }

    pub fn p(&self) -> usize {
        self.gamma1.len()
    }

    /// Innovation covariance `Σ - RΣR`, `R = diag(ρ)`.
    pub fn innovation_covariance(&self) -> DMatrix<f64> {
        let p = self.p();
        DMatrix::from_fn(p, p, |j, k| self.sigma[(j, k)] * (1.0 - self.rho[j] * self.rho[k]))
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if self.n == 0 || self.t == 0 || p == 0 {
            return Err(PgeeError::InvalidParameter("n, T and p must be positive".into()));
        }
        if self.gamma2.len() != p || self.rho.len() != p || self.sigma.shape() != (p, p) {
            return Err(PgeeError::DimensionMismatch(
                "γ₁, γ₂, ρ and Σ must share one dimension".into(),
            ));
        }
        if self.rho.iter().any(|r| !(r.abs() < 1.0)) {
            return Err(PgeeError::InvalidParameter("every |ρ_j| must be below 1".into()));
        }
        if !(self.subject_sd >= 0.0 && self.error_sd >= 0.0) {
            return Err(PgeeError::InvalidParameter(
                "standard deviations must be non-negative".into(),
            ));
        }
        covariance_root(&self.sigma, "Σ")?;
        covariance_root(&self.innovation_covariance(), "innovation covariance")?;
        Ok(())
    }
}

/// Lower Cholesky factor, rejecting asymmetric or non-PD matrices.
fn covariance_root(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if (m - m.transpose()).amax() > 1e-12 {
        return Err(PgeeError::InvalidParameter(format!("{what} is not symmetric")));
    }
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| PgeeError::InvalidParameter(format!("{what} is not positive definite")))
}

fn normal_vector(rng: &mut ChaCha8Rng, p: usize) -> DVector<f64> {
    DVector::from_fn(p, |_, _| rng.sample(StandardNormal))
}

fn names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

fn cluster(i: usize, x: DMatrix<f64>, y: DVector<f64>) -> Cluster<f64> {
    Cluster {
        id: (i + 1).to_string(),
        times: (1..=y.len()).map(|t| t as f64).collect(),
        y,
        x,
    }
}

pub fn simulate_cross_sectional(cfg: &CrossSectionalConfig, seed: u64) -> Result<LongitudinalDataset<f64>> {
    cfg.validate()?;
    let p = cfg.beta.len();
    let root = covariance_root(&cfg.sigma, "Σ")?;
    let beta = DVector::from_column_slice(&cfg.beta);
    let innovation_sd = (1.0 - cfg.error_rho * cfg.error_rho).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = (0..cfg.n)
        .map(|i| {
            let mut x = DMatrix::zeros(cfg.t, p);
            for t in 0..cfg.t {
                let row = &root * normal_vector(&mut rng, p);
                x.set_row(t, &row.transpose());
            }
            let mut y = &x * &beta;
            let mut e: f64 = rng.sample(StandardNormal);
            for t in 0..cfg.t {
                if t > 0 {
                    e = cfg.error_rho * e + innovation_sd * rng.sample::<f64, _>(StandardNormal);
                }
                y[t] += e;
            }
            cluster(i, x, y)
        })
        .collect();
    LongitudinalDataset::new(clusters, names(p))
}

/// Covariates `X_1..X_T` plus the linear predictor
/// `X_tᵀγ₁ + X_{t-1}ᵀγ₂ + b_i`, one subject at a time.
fn lagged_subjects(cfg: &LaggedConfig, seed: u64) -> Result<Vec<(DMatrix<f64>, DVector<f64>)>> {
    cfg.validate()?;
    let p = cfg.p();
    let root = covariance_root(&cfg.sigma, "Σ")?;
    let innovation_root = covariance_root(&cfg.innovation_covariance(), "innovation covariance")?;
    let g1 = DVector::from_column_slice(&cfg.gamma1);
    let g2 = DVector::from_column_slice(&cfg.gamma2);
    let rho = DVector::from_column_slice(&cfg.rho);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..cfg.n)
        .map(|_| {
            let b = cfg.subject_sd * rng.sample::<f64, _>(StandardNormal);
            let mut prev = &root * normal_vector(&mut rng, p);
            let mut x = DMatrix::zeros(cfg.t, p);
            let mut eta = DVector::zeros(cfg.t);
            for t in 0..cfg.t {
                let cur = rho.component_mul(&prev) + &innovation_root * normal_vector(&mut rng, p);
                eta[t] = cur.dot(&g1) + prev.dot(&g2) + b;
                x.set_row(t, &cur.transpose());
                prev = cur;
            }
            (x, eta)
        })
        .collect())
}

pub fn simulate_lagged(cfg: &LaggedConfig, seed: u64) -> Result<LongitudinalDataset<f64>> {
    let subjects = lagged_subjects(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let clusters = subjects
        .into_iter()
        .enumerate()
        .map(|(i, (x, eta))| {
            let y = eta.map(|m| m + cfg.error_sd * rng.sample::<f64, _>(StandardNormal));
            cluster(i, x, y)
        })
        .collect();
    LongitudinalDataset::new(clusters, names(cfg.p()))
}

/// Bernoulli responses with `logit p_it = X_itᵀγ₁ + X_{i,t-1}ᵀγ₂ + b_i`.
pub fn simulate_binomial(cfg: &LaggedConfig, seed: u64) -> Result<LongitudinalDataset<f64>> {
    let subjects = lagged_subjects(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let clusters = subjects
        .into_iter()
        .enumerate()
        .map(|(i, (x, eta))| {
            let y = eta.map(|m| f64::from(rng.random::<f64>() < 1.0 / (1.0 + (-m).exp())));
            cluster(i, x, y)
        })
        .collect();
    LongitudinalDataset::new(clusters, names(cfg.p()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pooled_corr(d: &LongitudinalDataset<f64>, a: usize, b: usize) -> f64 {
        let (x, _) = d.pooled();
        let n = x.nrows() as f64;
        let (ca, cb) = (x.column(a), x.column(b));
        let (ma, mb) = (ca.mean(), cb.mean());
        let cov = ca.iter().zip(cb.iter()).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / n;
        let va = ca.iter().map(|u| (u - ma) * (u - ma)).sum::<f64>() / n;
        let vb = cb.iter().map(|v| (v - mb) * (v - mb)).sum::<f64>() / n;
        cov / (va * vb).sqrt()
    }

    #[test]
    fn cross_sectional_moments() {
        let cfg = CrossSectionalConfig {
            n: 10_000,
            ..Default::default()
        };
        let d = simulate_cross_sectional(&cfg, 1).unwrap();
        assert!((pooled_corr(&d, 0, 1) - 0.6).abs() < 0.02);
        assert!((pooled_corr(&d, 2, 3) - 0.3).abs() < 0.02);
        let beta = DVector::from_column_slice(&cfg.beta);
        let (mut num, mut den) = (0.0, 0.0);
        for c in d.clusters() {
            let e = &c.y - &c.x * &beta;
            for t in 1..c.len() {
                num += e[t] * e[t - 1];
            }
            den += e.norm_squared() * (c.len() - 1) as f64 / c.len() as f64;
        }
        assert!((num / den - 0.7).abs() < 0.02);
    }

    #[test]
    fn generators_are_deterministic() {
        let cfg = CrossSectionalConfig::default();
        assert_eq!(
            simulate_cross_sectional(&cfg, 5).unwrap(),
            simulate_cross_sectional(&cfg, 5).unwrap()
        );
        assert_ne!(
            simulate_cross_sectional(&cfg, 5).unwrap(),
            simulate_cross_sectional(&cfg, 6).unwrap()
        );
        let lag = LaggedConfig::scenario(2, 10, Sigma1Convention::Symmetrized).unwrap();
        assert_eq!(simulate_lagged(&lag, 3).unwrap(), simulate_lagged(&lag, 3).unwrap());
        assert_eq!(simulate_binomial(&lag, 3).unwrap(), simulate_binomial(&lag, 3).unwrap());
    }

    #[test]
    fn presets_load_published_values() {
        let s1 = LaggedConfig::scenario(1, 20, Sigma1Convention::Symmetrized).unwrap();
        assert_eq!(&s1.gamma1[..10], &[2.0, 2.0, 2.0, 1.0, 1.0, 1.0, 0.1, 0.1, 0.1, 0.0]);
        assert_eq!(s1.gamma1, s1.gamma2);
        assert!(s1.rho.iter().all(|&r| r == 0.5));
        let s2 = LaggedConfig::scenario(2, 20, Sigma1Convention::Symmetrized).unwrap();
        assert_eq!(&s2.rho[..8], &[0.3, 0.3, 0.3, 0.6, 0.6, 0.6, 0.5, 0.5]);
        assert_eq!(&s2.gamma1[..7], &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
        assert!(LaggedConfig::scenario(3, 20, Sigma1Convention::Symmetrized).is_err());
        assert_eq!(Sigma1Convention::Upper.sigma()[(1, 0)], 0.2);
        assert_eq!(Sigma1Convention::Lower.sigma()[(4, 3)], 0.3);
        assert_eq!(Sigma1Convention::Symmetrized.sigma()[(7, 6)], 0.25);
        assert_eq!(Sigma1Convention::Symmetrized.sigma()[(9, 10)], 0.0);
    }

    #[test]
    fn lagged_covariates_are_stationary() {
        for scenario in [1, 2] {
            let cfg = LaggedConfig::scenario(scenario, 40_000, Sigma1Convention::Symmetrized).unwrap();
            let d = simulate_lagged(&cfg, 11).unwrap();
            let (x, _) = d.pooled();
            for j in 0..LAGGED_P {
                let col = x.column(j);
                let var = col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64;
                assert!((var - 1.0).abs() < 0.02, "scenario {scenario} column {j}: {var}");
            }
            assert!((pooled_corr(&d, 0, 2) - 0.5).abs() < 0.02);
            // Lag-1 autocorrelation of X_j is ρ_j.
            let mut num = 0.0;
            let mut den = 0.0;
            for c in d.clusters() {
                for t in 1..c.len() {
                    num += c.x[(t, 3)] * c.x[(t - 1, 3)];
                    den += c.x[(t - 1, 3)] * c.x[(t - 1, 3)];
                }
            }
            assert!((num / den - cfg.rho[3]).abs() < 0.02);
        }
    }

    #[test]
    fn binomial_null_model_is_fair_coin() {
        let mut cfg = LaggedConfig::scenario(1, 10_000, Sigma1Convention::Symmetrized).unwrap();
        cfg.gamma1 = vec![0.0; LAGGED_P];
        cfg.gamma2 = vec![0.0; LAGGED_P];
        cfg.subject_sd = 0.0;
        let d = simulate_binomial(&cfg, 4).unwrap();
        let (_, y) = d.pooled();
        assert!(y.iter().all(|&v| v == 0.0 || v == 1.0));
        assert!((y.mean() - 0.5).abs() < 0.01);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = CrossSectionalConfig::default();
        cfg.sigma[(0, 1)] = 1.5;
        cfg.sigma[(1, 0)] = 1.5;
        assert!(simulate_cross_sectional(&cfg, 1).is_err());
        let mut lag = LaggedConfig::scenario(1, 5, Sigma1Convention::Symmetrized).unwrap();
        lag.rho[0] = 1.0;
        assert!(simulate_lagged(&lag, 1).is_err());
        lag.rho[0] = 0.5;
        lag.gamma2.pop();
        assert!(simulate_lagged(&lag, 1).is_err());
    }
}
