//! Implied coefficients, model error and selection metrics.

use nalgebra::{DMatrix, DVector};

use crate::error::{PgeeError, Result};

/// `β_j = γ₁_j + ρ_j γ₂_j`.
pub fn implied_beta(gamma1: &[f64], gamma2: &[f64], rho: &[f64]) -> Result<DVector<f64>> {
    if gamma1.len() != gamma2.len() || gamma1.len() != rho.len() {
        return Err(PgeeError::DimensionMismatch("γ₁, γ₂ and ρ lengths differ".into()));
    }
    Ok(DVector::from_fn(gamma1.len(), |j, _| gamma1[j] + rho[j] * gamma2[j]))
}

/// `β = γ₁ + Σ⁻¹RΣγ₂`, the coefficient of `E(Y_t | X_t)` for stationary
/// covariates with cross-covariance `Σ` and `R = diag(ρ)`. Equals
/// [`implied_beta`] whenever `R` and `Σ` commute.
pub fn implied_beta_general(gamma1: &[f64], gamma2: &[f64], rho: &[f64], sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
    let p = gamma1.len();
    if gamma2.len() != p || rho.len() != p || sigma.shape() != (p, p) {
        return Err(PgeeError::DimensionMismatch("γ₁, γ₂, ρ and Σ dimensions differ".into()));
    }
    let g2 = DVector::from_column_slice(gamma2);
    let r_sigma_g = DVector::from_fn(p, |j, _| rho[j] * (sigma.row(j) * &g2)[0]);
    let chol = sigma.clone().cholesky().ok_or(PgeeError::SingularCovariance)?;
    Ok(DVector::from_column_slice(gamma1) + chol.solve(&r_sigma_g))
}

/// `(β̂ - β)ᵀ E(XXᵀ) (β̂ - β)`.
pub fn model_error(beta_hat: &DVector<f64>, beta_true: &DVector<f64>, second_moment: &DMatrix<f64>) -> Result<f64> {
    let p = beta_true.len();
    if beta_hat.len() != p || second_moment.shape() != (p, p) {
        return Err(PgeeError::DimensionMismatch(format!(
            "model error with {} estimates, {p} true values and a {}×{} moment matrix",
            beta_hat.len(),
            second_moment.nrows(),
            second_moment.ncols()
        )));
    }
    let d = beta_hat - beta_true;
    Ok(d.dot(&(second_moment * &d)))
}

/// Correct-deletion and incorrect-deletion ratios; `None` when the
/// denominator is empty.
pub fn selection_metrics(beta_hat: &DVector<f64>, beta_true: &DVector<f64>) -> (Option<f64>, Option<f64>) {
    let (mut zeros, mut kept_zero, mut nonzeros, mut lost) = (0usize, 0usize, 0usize, 0usize);
    for (h, t) in beta_hat.iter().zip(beta_true.iter()) {
        if *t == 0.0 {
            zeros += 1;
            kept_zero += usize::from(*h == 0.0);
        } else {
            nonzeros += 1;
            lost += usize::from(*h == 0.0);
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    (ratio(kept_zero, zeros), ratio(lost, nonzeros))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::generators::{LaggedConfig, Sigma1Convention};
    use proptest::prelude::*;

    #[test]
    fn implied_beta_examples() {
        let b = implied_beta(&[2.0], &[2.0], &[0.5]).unwrap();
        assert_eq!(b[0], 3.0);
        assert!(implied_beta(&[0.0; 4], &[0.0; 4], &[0.3; 4])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        assert!(implied_beta(&[1.0], &[1.0, 2.0], &[0.5]).is_err());
    }

    #[test]
    fn elementwise_and_general_forms_agree_on_presets() {
        for s in [1, 2] {
            for conv in [Sigma1Convention::Symmetrized, Sigma1Convention::Upper] {
                let c = LaggedConfig::scenario(s, 1, conv).unwrap();
                let a = implied_beta(&c.gamma1, &c.gamma2, &c.rho).unwrap();
                let b = implied_beta_general(&c.gamma1, &c.gamma2, &c.rho, &c.sigma).unwrap();
                assert!((a - b).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn general_form_couples_coordinates_when_rho_varies_within_a_block() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let a = implied_beta(&[0.0, 0.0], &[1.0, 0.0], &[0.2, 0.8]).unwrap();
        let b = implied_beta_general(&[0.0, 0.0], &[1.0, 0.0], &[0.2, 0.8], &sigma).unwrap();
        assert!((a - b).amax() > 0.1);
    }

    #[test]
    fn model_error_examples() {
        let p = 4;
        let b = DVector::from_vec(vec![1.0, -2.0, 0.0, 0.5]);
        assert_eq!(model_error(&b, &b, &DMatrix::identity(p, p)).unwrap(), 0.0);
        let mut e1 = b.clone();
        e1[0] += 1.0;
        assert_eq!(model_error(&e1, &b, &DMatrix::identity(p, p)).unwrap(), 1.0);
        let sigma = Sigma1Convention::Symmetrized.sigma();
        let mut d = DVector::zeros(20);
        d[0] = 1.0;
        d[1] = 1.0;
        let me = model_error(&d, &DVector::zeros(20), &sigma).unwrap();
        assert!((me - (2.0 + 2.0 * 0.25)).abs() < 1e-15);
        assert!(model_error(&b, &d, &sigma).is_err());
    }

    #[test]
    fn selection_metric_examples() {
        let truth = DVector::from_vec(vec![1.0, 0.0, 2.0, 0.0]);
        let exact = DVector::from_vec(vec![0.9, 0.0, 1.7, 0.0]);
        assert_eq!(selection_metrics(&exact, &truth), (Some(1.0), Some(0.0)));
        let dense = DVector::from_vec(vec![0.9, 0.1, 1.7, -0.2]);
        assert_eq!(selection_metrics(&dense, &truth), (Some(0.0), Some(0.0)));
        let all = DVector::from_vec(vec![1.0, 2.0]);
        let (cd, id) = selection_metrics(&DVector::from_vec(vec![0.0, 2.0]), &all);
        assert_eq!(cd, None);
        assert_eq!(id, Some(0.5));
    }

    proptest! {
        #[test]
        fn metrics_in_range(hat in proptest::collection::vec(-2i32..3, 6), truth in proptest::collection::vec(-2i32..3, 6)) {
            let h = DVector::from_iterator(6, hat.iter().map(|&v| v as f64));
            let t = DVector::from_iterator(6, truth.iter().map(|&v| v as f64));
            let (cd, id) = selection_metrics(&h, &t);
            for r in [cd, id].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&r));
            }
            let sigma = DMatrix::from_fn(6, 6, |r, c| 0.4f64.powi((r as i32 - c as i32).abs()));
            prop_assert!(model_error(&h, &t, &sigma).unwrap() >= 0.0);
        }
    }
}
