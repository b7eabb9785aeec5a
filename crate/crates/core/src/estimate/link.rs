use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Distribution of the latent error: standard logistic or standard normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Logit,
    Probit,
}

impl Link {
    /// F(z), overflow-safe.
    pub fn cdf(self, z: f64) -> f64 {
        match self {
            Link::Logit => logistic(z),
            Link::Probit => 0.5 * erfc(-z * FRAC_1_SQRT_2),
        }
    }

    /// F'(z).
    pub fn pdf(self, z: f64) -> f64 {
        match self {
            Link::Logit => {
                let p = logistic(z);
                p * logistic(-z)
            }
            Link::Probit => normal_pdf(z),
        }
    }

    /// F''(z).
    pub fn pdf_deriv(self, z: f64) -> f64 {
        match self {
            Link::Logit => {
                let p = logistic(z);
                let q = logistic(-z);
                p * q * (q - p)
            }
            Link::Probit => -z * normal_pdf(z),
        }
    }

    /// Log-likelihood contribution of one binary observation at index `eta`
    /// together with its first and second derivatives in `eta`.
    #[inline]
    pub fn obs_terms(self, y: u8, eta: f64) -> ObsTerms {
        match self {
            Link::Logit => {
                let p = logistic(eta);
                let ll = if y == 1 { -softplus(-eta) } else { -softplus(eta) };
                ObsTerms { loglik: ll, d1: f64::from(y) - p, d2: -p * logistic(-eta) }
            }
            Link::Probit => {
                let q = if y == 1 { 1.0 } else { -1.0 };
                let z = q * eta;
                let lambda = normal_hazard(z);
                ObsTerms { loglik: log_normal_cdf(z), d1: q * lambda, d2: -lambda * (z + lambda) }
            }
        }
    }
}

impl std::fmt::Display for Link {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Link::Logit => "logit",
            Link::Probit => "probit",
        })
    }
}

impl std::str::FromStr for Link {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logit" => Ok(Link::Logit),
            "probit" => Ok(Link::Probit),
            other => Err(format!("unknown link `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsTerms {
    pub loglik: f64,
    pub d1: f64,
    pub d2: f64,
}

#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// φ(z)/Φ(z), using the Mills-ratio expansion deep in the left tail.
fn normal_hazard(z: f64) -> f64 {
    if z > -30.0 {
        let cdf = 0.5 * erfc(-z * FRAC_1_SQRT_2);
        normal_pdf(z) / cdf
    } else {
        let x = -z;
        let x2 = x * x;
        // Mills ratio R(x) = (1 - Φ(x)) / φ(x) ≈ 1/x (1 - 1/x² + 3/x⁴ - 15/x⁶).
        let mills = (1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2)) / x;
        1.0 / mills
    }
}

fn log_normal_cdf(z: f64) -> f64 {
    if z > -30.0 {
        (0.5 * erfc(-z * FRAC_1_SQRT_2)).ln()
    } else {
        // log Φ(z) = log φ(z) - log(φ(z)/Φ(z))
        -0.5 * z * z - 0.5 * (2.0 * PI).ln() - normal_hazard(z).ln()
    }
}
