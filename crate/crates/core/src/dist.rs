//! Base distributions: sampling, log-densities and CDFs.
//!
//! Samplers come from `rand_distr` (the Gamma sampler is Marsaglia-Tsang with
//! the `U^(1/shape)` boost for shape < 1). Special functions come from
//! `statrs`.

use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::{beta, erf, gamma};

use crate::error::{param, Result};
use crate::rng::RandomStream;

/// Primitive laws used by priors, posteriors and kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DistSpec {
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
    InvGamma { shape: f64, scale: f64 },
    Normal { mean: f64, variance: f64 },
    Beta { a: f64, b: f64 },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(param(format!("{name} must be finite and > 0, got {v}")))
    }
}

impl DistSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DistSpec::Exponential { rate } => positive("rate", rate),
            DistSpec::Gamma { shape, rate } => positive("shape", shape).and(positive("rate", rate)),
            DistSpec::InvGamma { shape, scale } => positive("shape", shape).and(positive("scale", scale)),
            DistSpec::Normal { mean, variance } => {
                if !mean.is_finite() {
                    return Err(param(format!("mean must be finite, got {mean}")));
                }
                positive("variance", variance)
            }
            DistSpec::Beta { a, b } => positive("a", a).and(positive("b", b)),
        }
    }

    pub fn sample(&self, stream: &mut RandomStream) -> Result<f64> {
        self.validate()?;
        Ok(match *self {
            DistSpec::Exponential { rate } => sample_exp(stream) / rate,
            DistSpec::Gamma { shape, rate } => sample_gamma(stream, shape, rate),
            DistSpec::InvGamma { shape, scale } => sample_inv_gamma(stream, shape, scale),
            DistSpec::Normal { mean, variance } => mean + variance.sqrt() * sample_std_normal(stream),
            DistSpec::Beta { a, b } => sample_beta(stream, a, b),
        })
    }

    /// Natural-log density; `-inf` outside the support.
    pub fn log_pdf(&self, x: f64) -> Result<f64> {
        self.validate()?;
        Ok(match *self {
            DistSpec::Exponential { rate } => {
                if x < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    rate.ln() - rate * x
                }
            }
            DistSpec::Gamma { shape, rate } => gamma_log_pdf(x, shape, rate),
            DistSpec::InvGamma { shape, scale } => {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    shape * scale.ln() - gamma::ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
                }
            }
            DistSpec::Normal { mean, variance } => normal_log_pdf(x, mean, variance),
            DistSpec::Beta { a, b } => beta_log_pdf(x, a, b),
        })
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        self.validate()?;
        Ok(match *self {
            DistSpec::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            DistSpec::Gamma { shape, rate } => gamma_cdf(x, shape, rate),
            DistSpec::InvGamma { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma::gamma_ur(shape, scale / x)
                }
            }
            DistSpec::Normal { mean, variance } => normal_cdf((x - mean) / variance.sqrt()),
            DistSpec::Beta { a, b } => beta_cdf(x, a, b),
        })
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DistSpec::Exponential { rate } => 1.0 / rate,
            DistSpec::Gamma { shape, rate } => shape / rate,
            DistSpec::InvGamma { shape, scale } => {
                if shape > 1.0 {
                    scale / (shape - 1.0)
                } else {
                    f64::INFINITY
                }
            }
            DistSpec::Normal { mean, .. } => mean,
            DistSpec::Beta { a, b } => a / (a + b),
        }
    }
}

/// ln Γ(x) for x > 0.
pub fn log_gamma_fn(x: f64) -> f64 {
    gamma::ln_gamma(x)
}

#[inline]
pub(crate) fn sample_exp(stream: &mut RandomStream) -> f64 {
    Exp1.sample(stream)
}

#[inline]
pub(crate) fn sample_std_normal(stream: &mut RandomStream) -> f64 {
    StandardNormal.sample(stream)
}

/// Gamma variate with the given shape and rate. Callers guarantee validity.
#[inline]
pub(crate) fn sample_gamma(stream: &mut RandomStream, shape: f64, rate: f64) -> f64 {
    let g = rand_distr::Gamma::new(shape, 1.0 / rate).expect("gamma parameters validated by caller");
    g.sample(stream)
}

#[inline]
pub(crate) fn sample_inv_gamma(stream: &mut RandomStream, shape: f64, scale: f64) -> f64 {
    scale / sample_gamma(stream, shape, 1.0)
}

#[inline]
pub(crate) fn sample_beta(stream: &mut RandomStream, a: f64, b: f64) -> f64 {
    let d = rand_distr::Beta::new(a, b).expect("beta parameters validated by caller");
    d.sample(stream)
}

pub(crate) fn gamma_log_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    if x == 0.0 {
        return if shape < 1.0 {
            f64::INFINITY
        } else if shape == 1.0 {
            rate.ln()
        } else {
            f64::NEG_INFINITY
        };
    }
    shape * rate.ln() - gamma::ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

pub(crate) fn gamma_cdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x.is_infinite() {
        1.0
    } else {
        gamma::gamma_lr(shape, rate * x)
    }
}

pub(crate) fn normal_log_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let z = x - mean;
    -0.5 * (std::f64::consts::TAU * variance).ln() - 0.5 * z * z / variance
}

/// Standard normal CDF.
pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z / std::f64::consts::SQRT_2)
}

pub(crate) fn beta_log_pdf(x: f64, a: f64, b: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return f64::NEG_INFINITY;
    }
    let ln_b = gamma::ln_gamma(a) + gamma::ln_gamma(b) - gamma::ln_gamma(a + b);
    let left = if a == 1.0 { 0.0 } else { (a - 1.0) * x.ln() };
    let right = if b == 1.0 { 0.0 } else { (b - 1.0) * (-x).ln_1p() };
    left + right - ln_b
}

pub(crate) fn beta_cdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        beta::beta_reg(a, b, x)
    }
}
