//! Cluster-bootstrap standard errors.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::LongitudinalDataset;
use crate::error::{PgeeError, Result};
use crate::penalty::PenaltySpec;
use crate::solver::{fit_pgee, ModelSpec, SolverControl};

/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

/// Resampling indices of bootstrap replicate `b`.
pub fn resample_indices(n: usize, seed: u64, b: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Standard deviation of the non-naive coefficients over `replicates`
/// refits on subjects drawn with replacement, at fixed tuning parameters.
pub fn bootstrap_se(
    data: &LongitudinalDataset<f64>,
    model: &ModelSpec<f64>,
    penalty: &PenaltySpec<f64>,
    control: &SolverControl<f64>,
    replicates: usize,
    seed: u64,
) -> Result<DVector<f64>> {
    if replicates < 2 {
        return Err(PgeeError::InvalidParameter(
            "the bootstrap needs at least two replicates".into(),
        ));
    }
    let n = data.n_subjects();
    let fits: Vec<Option<DVector<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let sample = data.subset(&resample_indices(n, seed, b as u64)).ok()?;
            let fit = fit_pgee(&sample, model, penalty, control).ok()?;
            fit.converged.then_some(fit.beta_nonnaive)
        })
        .collect();
    let ok: Vec<&DVector<f64>> = fits.iter().flatten().collect();
    let failed = replicates - ok.len();
    if failed as f64 > MAX_FAILURE_SHARE * replicates as f64 || ok.len() < 2 {
        return Err(PgeeError::BootstrapFailure {
            failed,
            total: replicates,
        });
    }
    if failed > 0 {
        log::warn!("{failed} of {replicates} bootstrap replicates failed and were dropped");
    }
    let m = ok.len() as f64;
    let mean = ok.iter().fold(DVector::zeros(data.n_covariates()), |a, b| a + *b) / m;
    let ss = ok.iter().fold(DVector::zeros(data.n_covariates()), |a, b| {
        a + (*b - &mean).map(|v| v * v)
    });
    Ok((ss / (m - 1.0)).map(f64::sqrt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Cluster;
    use nalgebra::DMatrix;
    use rand_distr::StandardNormal;

    #[test]
    fn identical_subjects_have_zero_se() {
        let c = Cluster {
            id: "a".into(),
            times: vec![0.0, 1.0, 2.0],
            y: DVector::from_vec(vec![1.0, -0.5, 0.2]),
            x: DMatrix::from_row_slice(3, 2, &[1.0, 0.3, -0.4, 1.0, 0.2, -0.8]),
        };
        let d = LongitudinalDataset::new(vec![c; 6], vec!["a".into(), "b".into()]).unwrap();
        let se = bootstrap_se(
            &d,
            &ModelSpec::gaussian(),
            &PenaltySpec::none(),
            &SolverControl::default(),
            20,
            1,
        )
        .unwrap();
        assert!(se.amax() < 1e-12);
    }

    #[test]
    fn seeded_bootstrap_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clusters = (0..15)
            .map(|i| {
                let x = DMatrix::from_fn(3, 2, |_, _| rng.sample(StandardNormal));
                let y = DVector::from_fn(3, |t, _| x[(t, 0)] + rng.sample::<f64, _>(StandardNormal));
                Cluster {
                    id: i.to_string(),
                    times: vec![0.0, 1.0, 2.0],
                    y,
                    x,
                }
            })
            .collect();
        let d = LongitudinalDataset::new(clusters, vec!["a".into(), "b".into()]).unwrap();
        let run = || {
            bootstrap_se(
                &d,
                &ModelSpec::gaussian(),
                &PenaltySpec::lasso(0.05),
                &SolverControl::default(),
                30,
                9,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
        assert!(bootstrap_se(
            &d,
            &ModelSpec::gaussian(),
            &PenaltySpec::none(),
            &SolverControl::default(),
            1,
            9
        )
        .is_err());
    }

    #[test]
    fn resampling_streams_differ() {
        assert_eq!(resample_indices(10, 1, 0), resample_indices(10, 1, 0));
        assert_ne!(resample_indices(10, 1, 0), resample_indices(10, 1, 1));
        assert!(resample_indices(10, 1, 5).iter().all(|&i| i < 10));
    }
}
