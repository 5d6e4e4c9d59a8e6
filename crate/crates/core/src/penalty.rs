//! The penalty family `P(β) = λ₁ P_L1(β) + λ₂ Σ β_j²`, where the sparse
//! part is either the L1 norm or SCAD, together with the quantities the
//! local quadratic approximation needs.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{PgeeError, Result};
use crate::scalar::Real;

/// SCAD shape parameter used unless configured otherwise.
pub const DEFAULT_SCAD_A: f64 = 3.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PenaltyFamily {
    #[serde(rename = "none", alias = "gee")]
    None,
    #[serde(rename = "lasso")]
    Lasso,
    #[serde(rename = "ridge")]
    Ridge,
    #[serde(rename = "en", alias = "elastic_net")]
    ElasticNet,
    #[serde(rename = "scad")]
    Scad,
    #[serde(rename = "scad_l2")]
    ScadL2,
}

impl PenaltyFamily {
    pub const ALL: [PenaltyFamily; 6] = [
        Self::None,
        Self::Lasso,
        Self::Ridge,
        Self::ElasticNet,
        Self::Scad,
        Self::ScadL2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Lasso => "lasso",
            Self::Ridge => "ridge",
            Self::ElasticNet => "en",
            Self::Scad => "scad",
            Self::ScadL2 => "scad_l2",
        }
    }

    /// Whether the sparse part is SCAD rather than the L1 norm.
    pub fn is_scad(self) -> bool {
        matches!(self, Self::Scad | Self::ScadL2)
    }

    /// The `α` values this family can take in the `(λ, α)` parametrization,
    /// restricted from a full grid.
    pub fn alphas<T: Real>(self, full: &[T]) -> Vec<T> {
        match self {
            Self::None => Vec::new(),
            Self::Lasso | Self::Scad => vec![T::one()],
            Self::Ridge => vec![T::zero()],
            Self::ElasticNet | Self::ScadL2 => full.to_vec(),
        }
    }
}

impl std::fmt::Display for PenaltyFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PenaltyFamily {
    type Err = PgeeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "none" | "gee" => Ok(Self::None),
            "lasso" => Ok(Self::Lasso),
            "ridge" => Ok(Self::Ridge),
            "en" | "elastic_net" | "elasticnet" => Ok(Self::ElasticNet),
            "scad" => Ok(Self::Scad),
            "scad_l2" | "scadl2" => Ok(Self::ScadL2),
            other => Err(PgeeError::InvalidParameter(format!("unknown penalty `{other}`"))),
        }
    }
}

/// A penalty family with its tuning parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec<T: Real> {
    pub family: PenaltyFamily,
    pub lambda1: T,
    pub lambda2: T,
    /// SCAD shape, ignored by the L1 families.
    pub a: T,
}

impl<T: Real> PenaltySpec<T> {
    pub fn none() -> Self {
        Self::raw(PenaltyFamily::None, T::zero(), T::zero())
    }

    pub fn lasso(lambda1: T) -> Self {
        Self::raw(PenaltyFamily::Lasso, lambda1, T::zero())
    }

    pub fn ridge(lambda2: T) -> Self {
        Self::raw(PenaltyFamily::Ridge, T::zero(), lambda2)
    }

    pub fn elastic_net(lambda1: T, lambda2: T) -> Self {
        Self::raw(PenaltyFamily::ElasticNet, lambda1, lambda2)
    }

    pub fn scad(lambda1: T) -> Self {
        Self::raw(PenaltyFamily::Scad, lambda1, T::zero())
    }

    pub fn scad_l2(lambda1: T, lambda2: T) -> Self {
        Self::raw(PenaltyFamily::ScadL2, lambda1, lambda2)
    }

    pub fn with_a(mut self, a: T) -> Self {
        self.a = a;
        self
    }

    fn raw(family: PenaltyFamily, lambda1: T, lambda2: T) -> Self {
        Self {
            family,
            lambda1,
            lambda2,
            a: T::lit(DEFAULT_SCAD_A),
        }
    }

    /// Builds a validated spec from the `(λ, α)` parametrization.
    pub fn from_reparametrized(family: PenaltyFamily, lambda: T, alpha: T, a: T) -> Result<Self> {
        let (lambda1, lambda2) = reparametrize(lambda, alpha)?;
        let spec = Self {
            family,
            lambda1,
            lambda2,
            a,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PgeeError::InvalidParameter(msg));
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= T::zero()) || !v.is_finite_value() {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        let zero = T::zero();
        match self.family {
            PenaltyFamily::None if self.lambda1 != zero || self.lambda2 != zero => {
                bad("penalty `none` takes no tuning parameters".into())
            }
            PenaltyFamily::Lasso | PenaltyFamily::Scad if self.lambda2 != zero => {
                bad(format!("{} requires lambda2 = 0", self.family))
            }
            PenaltyFamily::Ridge if self.lambda1 != zero => bad("ridge requires lambda1 = 0".into()),
            f if f.is_scad() && !(self.a > T::lit(2.0)) => bad(format!("SCAD shape a must exceed 2, got {}", self.a)),
            _ => Ok(()),
        }
    }

    /// Whether the sparse part is active (so zero coefficients are singular
    /// points of the penalty).
    pub fn is_sparse(&self) -> bool {
        self.lambda1 > T::zero() && self.family != PenaltyFamily::Ridge
    }

    /// Factor turning the naive estimate into the non-naive one.
    pub fn rescale_factor(&self) -> T {
        T::one() + self.lambda2
    }
}

/// Closed-form SCAD penalty of a magnitude `theta`.
fn scad_value<T: Real>(theta: T, lambda: T, a: T) -> T {
    let two = T::lit(2.0);
    if theta <= lambda {
        lambda * theta
    } else if theta <= a * lambda {
        (two * a * lambda * theta - theta * theta - lambda * lambda) / (two * (a - T::one()))
    } else {
        lambda * lambda * (a + T::one()) / two
    }
}

fn scad_derivative<T: Real>(theta: T, lambda: T, a: T) -> T {
    if theta <= lambda {
        lambda
    } else {
        (a * lambda - theta).max(T::zero()) / (a - T::one())
    }
}

/// Penalty of a single coefficient magnitude.
pub fn scalar_penalty<T: Real>(spec: &PenaltySpec<T>, theta: T) -> T {
    let sparse = match spec.family {
        PenaltyFamily::Lasso | PenaltyFamily::ElasticNet => spec.lambda1 * theta,
        PenaltyFamily::Scad | PenaltyFamily::ScadL2 => scad_value(theta, spec.lambda1, spec.a),
        PenaltyFamily::None | PenaltyFamily::Ridge => T::zero(),
    };
    sparse + spec.lambda2 * theta * theta
}

/// `P(β)`, summed over coordinates.
pub fn penalty_value<T: Real>(spec: &PenaltySpec<T>, beta: &DVector<T>) -> T {
    beta.iter()
        .fold(T::zero(), |acc, &b| acc + scalar_penalty(spec, b.abs()))
}

/// `dP/dθ` at a magnitude `theta >= 0`.
pub fn penalty_derivative<T: Real>(spec: &PenaltySpec<T>, theta: T) -> Result<T> {
    if theta < T::zero() || !theta.is_finite_value() {
        return Err(PgeeError::InvalidParameter(format!(
            "penalty derivative needs a non-negative magnitude, got {theta}"
        )));
    }
    let sparse = match spec.family {
        PenaltyFamily::Lasso | PenaltyFamily::ElasticNet => spec.lambda1,
        PenaltyFamily::Scad | PenaltyFamily::ScadL2 => scad_derivative(theta, spec.lambda1, spec.a),
        PenaltyFamily::None | PenaltyFamily::Ridge => T::zero(),
    };
    Ok(sparse + T::lit(2.0) * spec.lambda2 * theta)
}

/// Local quadratic approximation at `beta_t`: the diagonal of
/// `Σ = diag{P'(|β_j|)/|β_j|}` and `U = Σ β_t`. Masked coordinates
/// contribute zero to both.
pub fn lqa_weights<T: Real>(
    spec: &PenaltySpec<T>,
    beta_t: &DVector<T>,
    zero_mask: &[bool],
) -> Result<(DVector<T>, DVector<T>)> {
    let p = beta_t.len();
    if zero_mask.len() != p {
        return Err(PgeeError::DimensionMismatch(format!(
            "mask of length {} for {p} coefficients",
            zero_mask.len()
        )));
    }
    let mut sigma = DVector::zeros(p);
    for j in 0..p {
        if zero_mask[j] {
            continue;
        }
        let theta = beta_t[j].abs();
        if theta == T::zero() {
            return Err(PgeeError::UnmaskedZero(j));
        }
        sigma[j] = penalty_derivative(spec, theta)? / theta;
    }
    let u = sigma.component_mul(beta_t);
    Ok((sigma, u))
}

/// `(λ, α) ↦ (λ₁, λ₂) = (λα, λ(1-α))`.
pub fn reparametrize<T: Real>(lambda: T, alpha: T) -> Result<(T, T)> {
    if !(lambda >= T::zero()) || !lambda.is_finite_value() {
        return Err(PgeeError::InvalidParameter(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(PgeeError::InvalidParameter(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    Ok((lambda * alpha, lambda * (T::one() - alpha)))
}

/// Whether the complete penalty is strictly convex: EN and ridge need
/// `λ₂ > 0`, SCAD_L2 needs `λ₂ > 1/(2(a-1))`.
pub fn convexity_check<T: Real>(spec: &PenaltySpec<T>) -> bool {
    match spec.family {
        PenaltyFamily::ElasticNet | PenaltyFamily::Ridge => spec.lambda2 > T::zero(),
        PenaltyFamily::ScadL2 => spec.lambda2 > T::one() / (T::lit(2.0) * (spec.a - T::one())),
        PenaltyFamily::None | PenaltyFamily::Lasso | PenaltyFamily::Scad => false,
    }
}

/// Serialized penalty settings, either `{"penalty", "lambda", "alpha", "a"}`
/// or with explicit `lambda1` / `lambda2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub penalty: PenaltyFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
}

impl PenaltyConfig {
    /// Whether any tuning parameter was given.
    pub fn is_tuned(&self) -> bool {
        self.penalty == PenaltyFamily::None || self.lambda.is_some() || self.lambda1.is_some() || self.lambda2.is_some()
    }

    pub fn to_spec<T: Real>(&self) -> Result<PenaltySpec<T>> {
        let a = T::lit(self.a.unwrap_or(DEFAULT_SCAD_A));
        let family = self.penalty;
        let spec = match (self.lambda, self.lambda1, self.lambda2) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                return Err(PgeeError::InvalidParameter(
                    "give either lambda/alpha or lambda1/lambda2, not both".into(),
                ))
            }
            (Some(lambda), None, None) => {
                let alpha = match (family, self.alpha) {
                    (_, Some(al)) => al,
                    (PenaltyFamily::Lasso | PenaltyFamily::Scad, None) => 1.0,
                    (PenaltyFamily::Ridge, None) => 0.0,
                    (PenaltyFamily::None, None) => 0.0,
                    (f, None) => return Err(PgeeError::InvalidParameter(format!("{f} needs alpha with lambda"))),
                };
                return PenaltySpec::from_reparametrized(family, T::lit(lambda), T::lit(alpha), a);
            }
            (None, l1, l2) => PenaltySpec {
                family,
                lambda1: T::lit(l1.unwrap_or(0.0)),
                lambda2: T::lit(l2.unwrap_or(0.0)),
                a,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}
