//! Token-embedding privatization mechanisms.
//!
//! * `normalized_polar`: discard the radius, release `u′ ~ vMF(e/‖e‖, κ = ε_u)`.
//!   Guarantee `(0, ε_u)` under the chordal metric.
//! * `full_polar`: release `r′·u′` with `r′ ~ Laplace(‖e‖, Δ_r/ε_r)` and the
//!   same vMF direction. Guarantee `(ε_r, ε_u)`.
//! * `isotropic_laplace`: release `e + Z`, density of `Z` proportional to
//!   `exp(−ε‖z‖₂)`. Guarantee `ε` under the Euclidean metric.
//!
//! All functions are pure in `(input, parameters, rng)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sphere::{self, Concentration, UnitVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    NormalizedPolar,
    FullPolar,
    IsotropicLaplace,
}

impl MechanismKind {
    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::NormalizedPolar => "normalized_polar",
            MechanismKind::FullPolar => "full_polar",
            MechanismKind::IsotropicLaplace => "isotropic_laplace",
        }
    }

    /// Metric under which the per-call ε is stated.
    pub fn metric(self) -> Metric {
        match self {
            MechanismKind::NormalizedPolar | MechanismKind::FullPolar => Metric::Chordal,
            MechanismKind::IsotropicLaplace => Metric::Euclidean,
        }
    }
}

impl std::fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized_polar" => Ok(Self::NormalizedPolar),
            "full_polar" => Ok(Self::FullPolar),
            "isotropic_laplace" => Ok(Self::IsotropicLaplace),
            other => Err(Error::InvalidConfig(format!("unknown mechanism {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// `‖u − u′‖₂` between unit directions.
    Chordal,
    /// `‖e − e′‖₂` between raw embeddings.
    Euclidean,
}

/// Mechanism selection. The angular (or isotropic) ε is not part of the
/// config: it comes per token from the budget allocator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub kind: MechanismKind,
    /// `ε_r`, used by `full_polar` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radial_epsilon: Option<f64>,
    /// `Δ_r`, used by `full_polar` only. There is no default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radial_sensitivity: Option<f64>,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        Self::normalized_polar()
    }
}

impl MechanismConfig {
    pub fn normalized_polar() -> Self {
        Self {
            kind: MechanismKind::NormalizedPolar,
            radial_epsilon: None,
            radial_sensitivity: None,
        }
    }

    pub fn isotropic_laplace() -> Self {
        Self {
            kind: MechanismKind::IsotropicLaplace,
            radial_epsilon: None,
            radial_sensitivity: None,
        }
    }

    pub fn full_polar(radial_epsilon: f64, radial_sensitivity: f64) -> Self {
        Self {
            kind: MechanismKind::FullPolar,
            radial_epsilon: Some(radial_epsilon),
            radial_sensitivity: Some(radial_sensitivity),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != MechanismKind::FullPolar {
            return Ok(());
        }
        match (self.radial_epsilon, self.radial_sensitivity) {
            (Some(eps), Some(delta)) if eps > 0.0 && delta > 0.0 && eps.is_finite() && delta.is_finite() => Ok(()),
            (eps, delta) => Err(Error::InvalidConfig(format!(
                "full_polar needs radial_epsilon > 0 and radial_sensitivity > 0, got {eps:?} and {delta:?}"
            ))),
        }
    }
}

/// Privacy parameters attached to one mechanism call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Guarantee {
    /// `None` when the mechanism has no separate radial component.
    pub radial_eps: Option<f64>,
    pub angular_eps: f64,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivatizedVector<T: Real> {
    pub components: Vec<T>,
    pub guarantee: Guarantee,
}

fn check_budget(epsilon: f64, allow_zero: bool) -> Result<()> {
    let ok = epsilon.is_finite() && if allow_zero { epsilon >= 0.0 } else { epsilon > 0.0 };
    if !ok {
        let bound = if allow_zero { ">= 0" } else { "> 0" };
        return Err(Error::InvalidParameter(format!(
            "epsilon must be finite and {bound}, got {epsilon}"
        )));
    }
    Ok(())
}

/// Direction-only vMF mechanism with `κ = ε_u`. `ε_u = 0` releases a uniform
/// direction.
pub fn privatize_normalized_polar<T: Real, R: Rng + ?Sized>(
    e: &[T],
    epsilon_u: f64,
    rng: &mut R,
) -> Result<PrivatizedVector<T>> {
    check_budget(epsilon_u, true)?;
    let mu = UnitVector::normalize(e)?;
    let y = sphere::sample_vmf(&mu, Concentration::new(epsilon_u)?, rng)?;
    Ok(PrivatizedVector {
        components: y.into_inner(),
        guarantee: Guarantee {
            radial_eps: Some(0.0),
            angular_eps: epsilon_u,
            metric: Metric::Chordal,
        },
    })
}

/// Laplace radius times vMF direction. The radius is drawn first, then the
/// direction, from the same stream; the two draws are independent.
pub fn privatize_full_polar<T: Real, R: Rng + ?Sized>(
    e: &[T],
    config: &MechanismConfig,
    epsilon_u: f64,
    rng: &mut R,
) -> Result<PrivatizedVector<T>> {
    if config.kind != MechanismKind::FullPolar {
        return Err(Error::InvalidConfig(format!(
            "privatize_full_polar called with kind {}",
            config.kind
        )));
    }
    config.validate()?;
    check_budget(epsilon_u, true)?;
    let (eps_r, delta_r) = (
        config.radial_epsilon.expect("validated"),
        config.radial_sensitivity.expect("validated"),
    );
    let mu = UnitVector::normalize(e)?;
    let r = crate::scalar::norm(e).to_f64_lossy();
    let scale = sphere::laplace_scale(delta_r, eps_r)?;
    let r_priv = sphere::sample_laplace_scalar(r, scale, rng)?;
    let u = sphere::sample_vmf(&mu, Concentration::new(epsilon_u)?, rng)?;
    let r_priv = T::of(r_priv);
    Ok(PrivatizedVector {
        components: u.as_slice().iter().map(|&x| r_priv * x).collect(),
        guarantee: Guarantee {
            radial_eps: Some(eps_r),
            angular_eps: epsilon_u,
            metric: Metric::Chordal,
        },
    })
}

/// `e` plus multivariate Laplace noise with rate `ε`.
pub fn privatize_isotropic_laplace<T: Real, R: Rng + ?Sized>(
    e: &[T],
    epsilon: f64,
    rng: &mut R,
) -> Result<PrivatizedVector<T>> {
    check_budget(epsilon, false)?;
    Ok(PrivatizedVector {
        components: sphere::sample_multivariate_laplace(e, epsilon, rng)?,
        guarantee: Guarantee {
            radial_eps: None,
            angular_eps: epsilon,
            metric: Metric::Euclidean,
        },
    })
}

/// Dispatches on `config.kind` with per-token budget `epsilon`.
pub fn privatize<T: Real, R: Rng + ?Sized>(
    e: &[T],
    config: &MechanismConfig,
    epsilon: f64,
    rng: &mut R,
) -> Result<PrivatizedVector<T>> {
    match config.kind {
        MechanismKind::NormalizedPolar => privatize_normalized_polar(e, epsilon, rng),
        MechanismKind::FullPolar => privatize_full_polar(e, config, epsilon, rng),
        MechanismKind::IsotropicLaplace => privatize_isotropic_laplace(e, epsilon, rng),
    }
}
