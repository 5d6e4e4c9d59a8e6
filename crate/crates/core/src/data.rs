//! Long-format longitudinal data: loading, validation, pooled
//! standardization and per-subject block access.
//!
//! A dataset is a sequence of subject blocks. Each block holds the
//! strictly increasing observation times of one subject, its response
//! vector `y_i` (length `T_i`) and its `T_i × p` covariate matrix `X_i`.
//! Datasets are immutable once built.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PgeeError, Result};
use crate::scalar::Real;

/// Column names used when reading a long-format CSV file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub subject: String,
    pub time: String,
    pub response: String,
    /// Covariate columns in order. `None` takes every remaining column.
    pub covariates: Option<Vec<String>>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            subject: "subject".into(),
            time: "time".into(),
            response: "y".into(),
            covariates: None,
        }
    }
}

/// One subject's block of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster<T: Real> {
    pub id: String,
    pub times: Vec<T>,
    pub y: DVector<T>,
    pub x: DMatrix<T>,
}

impl<T: Real> Cluster<T> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Read-only view of one subject block.
#[derive(Debug, Clone, Copy)]
pub struct ClusterView<'a, T: Real> {
    pub y: &'a DVector<T>,
    pub x: &'a DMatrix<T>,
    pub times: &'a [T],
    pub size: usize,
}

/// Clustered observations in per-subject blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset<T: Real> {
    clusters: Vec<Cluster<T>>,
    covariate_names: Vec<String>,
    n_obs: usize,
}

impl<T: Real> LongitudinalDataset<T> {
    /// Builds a dataset, checking the block invariants: at least one
    /// subject, a common column count `p >= 1`, `T_i >= 1`, strictly
    /// increasing finite times and finite values throughout.
    pub fn new(clusters: Vec<Cluster<T>>, covariate_names: Vec<String>) -> Result<Self> {
        let p = covariate_names.len();
        if p == 0 {
            return Err(PgeeError::InvalidData("at least one covariate is required".into()));
        }
        if clusters.is_empty() {
            return Err(PgeeError::InvalidData("no subjects".into()));
        }
        let mut n_obs = 0;
        for c in &clusters {
            let t = c.y.len();
            if t == 0 {
                return Err(PgeeError::InvalidData(format!(
                    "subject `{}` has no observations",
                    c.id
                )));
            }
            if c.x.nrows() != t || c.times.len() != t {
                return Err(PgeeError::DimensionMismatch(format!(
                    "subject `{}`: {} responses, {} covariate rows, {} times",
                    c.id,
                    t,
                    c.x.nrows(),
                    c.times.len()
                )));
            }
            if c.x.ncols() != p {
                return Err(PgeeError::DimensionMismatch(format!(
                    "subject `{}` has {} covariate columns, expected {p}",
                    c.id,
                    c.x.ncols()
                )));
            }
            if c.times.windows(2).any(|w| w[1] <= w[0]) {
                return Err(PgeeError::InvalidData(format!(
                    "times of subject `{}` are not strictly increasing",
                    c.id
                )));
            }
            let finite = c.times.iter().all(|v| v.is_finite_value())
                && c.y.iter().all(|v| v.is_finite_value())
                && c.x.iter().all(|v| v.is_finite_value());
            if !finite {
                return Err(PgeeError::InvalidData(format!(
                    "subject `{}` has non-finite values",
                    c.id
                )));
            }
            n_obs += t;
        }
        Ok(Self {
            clusters,
            covariate_names,
            n_obs,
        })
    }

    /// Number of subjects `n`.
    pub fn n_subjects(&self) -> usize {
        self.clusters.len()
    }

    /// Total number of observations `N = Σ T_i`.
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// Number of covariates `p`.
    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn clusters(&self) -> &[Cluster<T>] {
        &self.clusters
    }

    pub fn max_cluster_size(&self) -> usize {
        self.clusters.iter().map(Cluster::len).max().unwrap_or(0)
    }

    /// Contiguous block of subject `i`.
    pub fn cluster_view(&self, i: usize) -> Result<ClusterView<'_, T>> {
        let c = self.clusters.get(i).ok_or(PgeeError::SubjectOutOfRange {
            index: i,
            n: self.clusters.len(),
        })?;
        Ok(ClusterView {
            y: &c.y,
            x: &c.x,
            times: &c.times,
            size: c.len(),
        })
    }

    /// Stacks all subject blocks row-wise into the pooled `N × p` design
    /// and length-`N` response.
    pub fn pooled(&self) -> (DMatrix<T>, DVector<T>) {
        let p = self.n_covariates();
        let mut x = DMatrix::zeros(self.n_obs, p);
        let mut y = DVector::zeros(self.n_obs);
        let mut row = 0;
        for c in &self.clusters {
            let t = c.len();
            x.view_mut((row, 0), (t, p)).copy_from(&c.x);
            y.rows_mut(row, t).copy_from(&c.y);
            row += t;
        }
        (x, y)
    }

    /// New dataset made of the listed subjects, in the given order.
    /// Indices may repeat (bootstrap resamples).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut clusters = Vec::with_capacity(indices.len());
        for &i in indices {
            let c = self.clusters.get(i).ok_or(PgeeError::SubjectOutOfRange {
                index: i,
                n: self.clusters.len(),
            })?;
            clusters.push(c.clone());
        }
        Self::new(clusters, self.covariate_names.clone())
    }

    /// The dataset with subject `i` removed.
    pub fn without_subject(&self, i: usize) -> Result<Self> {
        if i >= self.n_subjects() {
            return Err(PgeeError::SubjectOutOfRange {
                index: i,
                n: self.n_subjects(),
            });
        }
        let keep: Vec<usize> = (0..self.n_subjects()).filter(|&k| k != i).collect();
        self.subset(&keep)
    }

    /// Converts the dataset to another scalar type.
    pub fn cast<U: Real>(&self) -> LongitudinalDataset<U> {
        let conv = |v: T| U::lit(v.as_f64());
        LongitudinalDataset {
            clusters: self
                .clusters
                .iter()
                .map(|c| Cluster {
                    id: c.id.clone(),
                    times: c.times.iter().map(|&t| conv(t)).collect(),
                    y: c.y.map(conv),
                    x: c.x.map(conv),
                })
                .collect(),
            covariate_names: self.covariate_names.clone(),
            n_obs: self.n_obs,
        }
    }

    fn map_values(&self, fy: impl Fn(T) -> T, fx: impl Fn(usize, T) -> T) -> Self {
        let clusters = self
            .clusters
            .iter()
            .map(|c| {
                let mut x = c.x.clone();
                for (j, mut col) in x.column_iter_mut().enumerate() {
                    col.apply(|v| *v = fx(j, *v));
                }
                Cluster {
                    id: c.id.clone(),
                    times: c.times.clone(),
                    y: c.y.map(&fy),
                    x,
                }
            })
            .collect();
        Self {
            clusters,
            covariate_names: self.covariate_names.clone(),
            n_obs: self.n_obs,
        }
    }
}

/// How the response is treated by [`standardize_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseScaling {
    /// Center and scale the response like the covariates.
    Standardize,
    /// Leave the response as is (binary responses).
    Keep,
}

/// Pooled location and scale of every column, divisor `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingInfo<T: Real> {
    pub x_mean: Vec<T>,
    pub x_sd: Vec<T>,
    pub y_mean: T,
    pub y_sd: T,
}

impl<T: Real> ScalingInfo<T> {
    /// Identity scaling for `p` covariates.
    pub fn identity(p: usize) -> Self {
        Self {
            x_mean: vec![T::zero(); p],
            x_sd: vec![T::one(); p],
            y_mean: T::zero(),
            y_sd: T::one(),
        }
    }

    pub fn apply(&self, d: &LongitudinalDataset<T>) -> LongitudinalDataset<T> {
        d.map_values(
            |y| (y - self.y_mean) / self.y_sd,
            |j, x| (x - self.x_mean[j]) / self.x_sd[j],
        )
    }

    pub fn destandardize(&self, d: &LongitudinalDataset<T>) -> LongitudinalDataset<T> {
        d.map_values(
            |y| y * self.y_sd + self.y_mean,
            |j, x| x * self.x_sd[j] + self.x_mean[j],
        )
    }

    /// Maps a coefficient vector fitted on the standardized scale back to
    /// the original one: `β_j = β_std,j · sd_y / sd_xj`.
    pub fn coefficients_to_original(&self, beta_std: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(
            beta_std.len(),
            beta_std.iter().zip(&self.x_sd).map(|(&b, &sd)| b * self.y_sd / sd),
        )
    }

    /// Intercept implied on the original scale by a centred fit.
    pub fn original_intercept(&self, beta_std: &DVector<T>) -> T {
        let beta = self.coefficients_to_original(beta_std);
        beta.iter()
            .zip(&self.x_mean)
            .fold(self.y_mean, |acc, (&b, &m)| acc - b * m)
    }
}

/// Standardizes covariates and response with pooled means and population
/// standard deviations.
pub fn standardize<T: Real>(d: &LongitudinalDataset<T>) -> Result<(LongitudinalDataset<T>, ScalingInfo<T>)> {
    standardize_with(d, ResponseScaling::Standardize)
}

pub fn standardize_with<T: Real>(
    d: &LongitudinalDataset<T>,
    response: ResponseScaling,
) -> Result<(LongitudinalDataset<T>, ScalingInfo<T>)> {
    let (x, y) = d.pooled();
    let mut info = ScalingInfo::identity(d.n_covariates());
    for (j, col) in x.column_iter().enumerate() {
        let (m, s) = pooled_moments(col.iter().copied());
        if is_constant(m, s) {
            return Err(PgeeError::ConstantColumn(d.covariate_names()[j].clone()));
        }
        info.x_mean[j] = m;
        info.x_sd[j] = s;
    }
    if response == ResponseScaling::Standardize {
        let (m, s) = pooled_moments(y.iter().copied());
        if is_constant(m, s) {
            return Err(PgeeError::ConstantColumn("response".into()));
        }
        info.y_mean = m;
        info.y_sd = s;
    }
    Ok((info.apply(d), info))
}

/// Mean and population standard deviation (divisor N).
fn pooled_moments<T: Real>(values: impl Iterator<Item = T> + Clone) -> (T, T) {
    let n = T::count(values.clone().count());
    let mean = values.clone().fold(T::zero(), |a, v| a + v) / n;
    let var = values.fold(T::zero(), |a, v| a + (v - mean) * (v - mean)) / n;
    (mean, var.sqrt())
}

fn is_constant<T: Real>(mean: T, sd: T) -> bool {
    sd <= T::default_epsilon() * T::lit(64.0) * (T::one() + mean.abs())
}

const MISSING_TOKENS: [&str; 6] = ["", "NA", "na", "NaN", "nan", "."];

fn parse_cell(raw: &str, column: &str, line: usize) -> Result<f64> {
    let s = raw.trim();
    if MISSING_TOKENS.contains(&s) || s.eq_ignore_ascii_case("null") {
        return Err(PgeeError::MissingValue {
            column: column.to_string(),
            line,
        });
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(PgeeError::NonNumeric {
            column: column.to_string(),
            value: s.to_string(),
            line,
        }),
    }
}

/// Loads a long-format CSV file (one row per observation).
pub fn load_dataset(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<LongitudinalDataset<f64>> {
    let file = std::fs::File::open(path)?;
    read_dataset(file, schema)
}

/// Reads long-format CSV from any reader. Rows are grouped by subject in
/// first-appearance order and sorted by time within each subject.
pub fn read_dataset<R: Read>(reader: R, schema: &ColumnSchema) -> Result<LongitudinalDataset<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let index_of = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PgeeError::MissingColumn(name.to_string()))
    };
    let subject_idx = index_of(&schema.subject)?;
    let time_idx = index_of(&schema.time)?;
    let y_idx = index_of(&schema.response)?;
    let covariate_idx: Vec<usize> = match &schema.covariates {
        Some(names) => names.iter().map(|n| index_of(n)).collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|&k| k != subject_idx && k != time_idx && k != y_idx)
            .collect(),
    };
    if covariate_idx.is_empty() {
        return Err(PgeeError::InvalidData("no covariate columns".into()));
    }
    let names: Vec<String> = covariate_idx.iter().map(|&k| headers[k].clone()).collect();

    // subject -> rows of (time, y, x)
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(f64, f64, Vec<f64>)>> = HashMap::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        let line = k + 2;
        let cell = |idx: usize| record.get(idx).unwrap_or("");
        let subject = cell(subject_idx).to_string();
        if subject.is_empty() {
            return Err(PgeeError::MissingValue {
                column: schema.subject.clone(),
                line,
            });
        }
        let time = parse_cell(cell(time_idx), &schema.time, line)?;
        let y = parse_cell(cell(y_idx), &schema.response, line)?;
        let x = covariate_idx
            .iter()
            .zip(&names)
            .map(|(&idx, name)| parse_cell(cell(idx), name, line))
            .collect::<Result<Vec<_>>>()?;
        rows.entry(subject.clone())
            .or_insert_with(|| {
                order.push(subject.clone());
                Vec::new()
            })
            .push((time, y, x));
    }

    let p = names.len();
    let mut clusters = Vec::with_capacity(order.len());
    for id in order {
        let mut obs = rows.remove(&id).unwrap_or_default();
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = obs.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(PgeeError::DuplicateObservation {
                subject: id,
                time: w[0].0,
            });
        }
        let t = obs.len();
        let times = obs.iter().map(|o| o.0).collect();
        let y = DVector::from_iterator(t, obs.iter().map(|o| o.1));
        let x = DMatrix::from_fn(t, p, |r, c| obs[r].2[c]);
        clusters.push(Cluster { id, times, y, x });
    }
    LongitudinalDataset::new(clusters, names)
}

/// Writes a dataset in long format with header
/// `subject,time,<response>,<covariates...>`.
pub fn write_dataset<W: Write>(d: &LongitudinalDataset<f64>, writer: W, response_name: &str) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["subject".to_string(), "time".to_string(), response_name.to_string()];
    header.extend(d.covariate_names().iter().cloned());
    wtr.write_record(&header)?;
    for c in d.clusters() {
        for r in 0..c.len() {
            let mut rec = vec![c.id.clone(), c.times[r].to_string(), c.y[r].to_string()];
            rec.extend(c.x.row(r).iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}
