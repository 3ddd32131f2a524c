//! Known "true" distributions used to generate data and score fits.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf_inv;

use crate::dist::{
    beta_cdf, beta_log_pdf, gamma_cdf, gamma_log_pdf, normal_cdf, sample_beta, sample_gamma, sample_std_normal,
};
use crate::error::{param, Error, Result};
use crate::rng::RandomStream;

/// A fully specified distribution with CDF, density, quantile and sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrueDist {
    /// Support `x > scale`.
    Pareto {
        shape: f64,
        scale: f64,
    },
    Gamma {
        shape: f64,
        scale: f64,
    },
    Weibull {
        shape: f64,
        scale: f64,
    },
    LogLogistic {
        shape: f64,
        scale: f64,
    },
    LogNormal {
        meanlog: f64,
        sdlog: f64,
    },
    /// Maximum-type Gumbel with CDF `exp(-exp(-(x - loc)/scale))`.
    Gumbel {
        loc: f64,
        scale: f64,
    },
    Normal {
        mean: f64,
        sd: f64,
    },
    Beta {
        a: f64,
        b: f64,
    },
    Exponential {
        rate: f64,
    },
    /// Point mass.
    Constant {
        value: f64,
    },
    Shifted {
        shift: f64,
        inner: Box<TrueDist>,
    },
    Mixture {
        weights: Vec<f64>,
        components: Vec<TrueDist>,
    },
}

fn std_normal_quantile(u: f64) -> f64 {
    std::f64::consts::SQRT_2 * erf_inv(2.0 * u - 1.0)
}

impl TrueDist {
    pub fn mixture(parts: Vec<(f64, TrueDist)>) -> Self {
        let (weights, components) = parts.into_iter().unzip();
        TrueDist::Mixture { weights, components }
    }

    pub fn shifted(shift: f64, inner: TrueDist) -> Self {
        TrueDist::Shifted {
            shift,
            inner: Box::new(inner),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        let ok = match self {
            TrueDist::Pareto { shape, scale }
            | TrueDist::Gamma { shape, scale }
            | TrueDist::Weibull { shape, scale }
            | TrueDist::LogLogistic { shape, scale } => pos(*shape) && pos(*scale),
            TrueDist::LogNormal { meanlog, sdlog } => meanlog.is_finite() && pos(*sdlog),
            TrueDist::Gumbel { loc, scale } => loc.is_finite() && pos(*scale),
            TrueDist::Normal { mean, sd } => mean.is_finite() && pos(*sd),
            TrueDist::Beta { a, b } => pos(*a) && pos(*b),
            TrueDist::Exponential { rate } => pos(*rate),
            TrueDist::Constant { value } => value.is_finite(),
            TrueDist::Shifted { shift, inner } => {
                inner.validate()?;
                shift.is_finite()
            }
            TrueDist::Mixture { weights, components } => {
                for c in components {
                    c.validate()?;
                }
                !weights.is_empty()
                    && weights.len() == components.len()
                    && weights.iter().all(|w| *w >= 0.0)
                    && (weights.iter().sum::<f64>() - 1.0).abs() < 1e-12
            }
        };
        if ok {
            Ok(())
        } else {
            Err(param(format!("invalid distribution {self:?}")))
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            TrueDist::Pareto { shape, scale } => {
                if x <= *scale {
                    0.0
                } else {
                    1.0 - (scale / x).powf(*shape)
                }
            }
            TrueDist::Gamma { shape, scale } => gamma_cdf(x, *shape, 1.0 / scale),
            TrueDist::Weibull { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-(x / scale).powf(*shape)).exp_m1()
                }
            }
            TrueDist::LogLogistic { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    1.0 / (1.0 + (x / scale).powf(-shape))
                }
            }
            TrueDist::LogNormal { meanlog, sdlog } => {
                if x <= 0.0 {
                    0.0
                } else {
                    normal_cdf((x.ln() - meanlog) / sdlog)
                }
            }
            TrueDist::Gumbel { loc, scale } => (-(-(x - loc) / scale).exp()).exp(),
            TrueDist::Normal { mean, sd } => normal_cdf((x - mean) / sd),
            TrueDist::Beta { a, b } => beta_cdf(x, *a, *b),
            TrueDist::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            TrueDist::Constant { value } => {
                if x >= *value {
                    1.0
                } else {
                    0.0
                }
            }
            TrueDist::Shifted { shift, inner } => inner.cdf(x - shift),
            TrueDist::Mixture { weights, components } => {
                let v: f64 = weights.iter().zip(components).map(|(w, c)| w * c.cdf(x)).sum();
                v.clamp(0.0, 1.0)
            }
        }
    }

    /// Density; zero at a point mass.
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            TrueDist::Pareto { shape, scale } => {
                if x <= *scale {
                    0.0
                } else {
                    shape * scale.powf(*shape) / x.powf(shape + 1.0)
                }
            }
            TrueDist::Gamma { shape, scale } => {
                if x < 0.0 {
                    0.0
                } else {
                    gamma_log_pdf(x, *shape, 1.0 / scale).exp()
                }
            }
            TrueDist::Weibull { shape, scale } => {
                if x < 0.0 {
                    0.0
                } else {
                    let z = x / scale;
                    shape / scale * z.powf(shape - 1.0) * (-z.powf(*shape)).exp()
                }
            }
            TrueDist::LogLogistic { shape, scale } => {
                if x <= 0.0 {
                    0.0
                } else {
                    let z = (x / scale).powf(*shape);
                    shape / x * z / (1.0 + z).powi(2)
                }
            }
            TrueDist::LogNormal { meanlog, sdlog } => {
                if x <= 0.0 {
                    0.0
                } else {
                    let z = (x.ln() - meanlog) / sdlog;
                    (-0.5 * z * z).exp() / (x * sdlog * std::f64::consts::TAU.sqrt())
                }
            }
            TrueDist::Gumbel { loc, scale } => {
                let z = (x - loc) / scale;
                (-z - (-z).exp()).exp() / scale
            }
            TrueDist::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                (-0.5 * z * z).exp() / (sd * std::f64::consts::TAU.sqrt())
            }
            TrueDist::Beta { a, b } => beta_log_pdf(x, *a, *b).exp(),
            TrueDist::Exponential { rate } => {
                if x < 0.0 {
                    0.0
                } else {
                    rate * (-rate * x).exp()
                }
            }
            TrueDist::Constant { .. } => 0.0,
            TrueDist::Shifted { shift, inner } => inner.pdf(x - shift),
            TrueDist::Mixture { weights, components } => {
                weights.iter().zip(components).map(|(w, c)| w * c.pdf(x)).sum()
            }
        }
    }

    /// Quantile function on (0, 1). Closed form where available, otherwise
    /// bisection on the CDF.
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        match self {
            TrueDist::Pareto { shape, scale } => scale * (1.0 - u).powf(-1.0 / shape),
            TrueDist::Weibull { shape, scale } => scale * (-(-u).ln_1p()).powf(1.0 / shape),
            TrueDist::LogLogistic { shape, scale } => scale * (u / (1.0 - u)).powf(1.0 / shape),
            TrueDist::LogNormal { meanlog, sdlog } => (meanlog + sdlog * std_normal_quantile(u)).exp(),
            TrueDist::Gumbel { loc, scale } => loc - scale * (-u.ln()).ln(),
            TrueDist::Normal { mean, sd } => mean + sd * std_normal_quantile(u),
            TrueDist::Exponential { rate } => -(-u).ln_1p() / rate,
            TrueDist::Constant { value } => *value,
            TrueDist::Shifted { shift, inner } => shift + inner.inverse_cdf(u),
            TrueDist::Gamma { .. } | TrueDist::Beta { .. } | TrueDist::Mixture { .. } => self.bisect(u),
        }
    }

    fn bisect(&self, u: f64) -> f64 {
        let (mut lo, mut hi) = match self {
            TrueDist::Beta { .. } => (0.0, 1.0),
            TrueDist::Gamma { .. } => (0.0, 1.0),
            _ => (-1.0, 1.0),
        };
        let lower_bounded = matches!(self, TrueDist::Beta { .. } | TrueDist::Gamma { .. });
        while self.cdf(hi) < u {
            lo = hi;
            hi = if hi > 0.0 { hi * 2.0 } else { 1.0 };
        }
        if !lower_bounded {
            while self.cdf(lo) > u {
                hi = lo;
                lo = if lo < 0.0 { lo * 2.0 } else { -1.0 };
            }
        }
        for _ in 0..200 {
            if hi - lo <= 1e-12 * hi.abs().max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn sample(&self, stream: &mut RandomStream) -> f64 {
        match self {
            TrueDist::Gamma { shape, scale } => sample_gamma(stream, *shape, 1.0 / scale),
            TrueDist::Beta { a, b } => sample_beta(stream, *a, *b),
            TrueDist::Normal { mean, sd } => mean + sd * sample_std_normal(stream),
            TrueDist::LogNormal { meanlog, sdlog } => (meanlog + sdlog * sample_std_normal(stream)).exp(),
            TrueDist::Shifted { shift, inner } => shift + inner.sample(stream),
            TrueDist::Mixture { weights, components } => {
                let mut u = stream.uniform();
                for (w, c) in weights.iter().zip(components) {
                    if u < *w {
                        return c.sample(stream);
                    }
                    u -= w;
                }
                components[components.len() - 1].sample(stream)
            }
            _ => self.inverse_cdf(stream.uniform()),
        }
    }

    pub fn sample_n(&self, n: usize, stream: &mut RandomStream) -> Vec<f64> {
        (0..n).map(|_| self.sample(stream)).collect()
    }
}

/// The seven generators of the density-estimation study, by id 1..=7.
pub fn example(id: u32) -> Result<TrueDist> {
    let ln = |m: f64| TrueDist::LogNormal { meanlog: m, sdlog: 0.1 };
    let gum = |l: f64, s: f64| TrueDist::Gumbel { loc: l, scale: s };
    let be = |a: f64, b: f64| TrueDist::Beta { a, b };
    Ok(match id {
        1 => TrueDist::Pareto { shape: 1.1, scale: 1.0 },
        2 => TrueDist::shifted(1.0, TrueDist::Gamma { shape: 0.5, scale: 1.0 }),
        3 => TrueDist::shifted(1.0, TrueDist::Weibull { shape: 0.5, scale: 1.0 }),
        4 => TrueDist::LogLogistic { shape: 0.5, scale: 1.0 },
        5 => TrueDist::mixture(vec![(0.3, ln(0.0)), (0.4, ln(1.0)), (0.3, ln(2.0))]),
        6 => TrueDist::mixture(vec![(0.3, gum(1.5, 0.1)), (0.4, gum(2.5, 0.3)), (0.3, gum(5.0, 0.5))]),
        7 => TrueDist::mixture(vec![
            (0.3, be(10.0, 90.0)),
            (0.4, be(20.0, 60.0)),
            (0.3, be(10.0, 10.0)),
        ]),
        _ => return Err(Error::UnknownExample(id.to_string())),
    })
}

/// The three-source generator of the active-component study.
pub fn k0_generator() -> TrueDist {
    TrueDist::mixture(vec![
        (0.3, TrueDist::Gumbel { loc: 1.0, scale: 0.1 }),
        (
            0.3,
            TrueDist::LogNormal {
                meanlog: 2.0,
                sdlog: 0.1,
            },
        ),
        (0.4, TrueDist::Normal { mean: 4.0, sd: 0.5 }),
    ])
}

/// Settings of one M/G/1 service example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mg1Setting {
    pub name: String,
    pub service: TrueDist,
    pub arrival_rate: f64,
    pub threshold: f64,
    /// Reported true threshold probability.
    pub mu_c: f64,
}

pub const MG1_NAMES: [&str; 5] = ["lognormal", "loglogistic", "shifted-gamma", "shifted-weibull", "beta"];

pub fn mg1_setting(name: &str) -> Result<Mg1Setting> {
    let (id, arrival_rate, threshold, mu_c) = match name {
        "lognormal" => (5, 0.2, 25.0, 0.0843),
        "loglogistic" => (4, 0.1, 20.0, 0.1123),
        "shifted-gamma" => (2, 0.5, 8.0, 0.1303),
        "shifted-weibull" => (3, 0.25, 40.0, 0.1198),
        "beta" => (7, 3.0, 3.0, 0.0837),
        _ => return Err(Error::UnknownExample(name.to_string())),
    };
    Ok(Mg1Setting {
        name: name.to_string(),
        service: example(id)?,
        arrival_rate,
        threshold,
        mu_c,
    })
}

/// Generator lookup by id (`1`..`7`), `k0`, an M/G/1 example name, or
/// `exp:<rate>`.
pub fn generate_truth(id: &str) -> Result<TrueDist> {
    if let Ok(n) = id.parse::<u32>() {
        return example(n);
    }
    if id == "k0" {
        return Ok(k0_generator());
    }
    if let Some(rate) = id.strip_prefix("exp:") {
        let rate: f64 = rate.parse().map_err(|_| Error::UnknownExample(id.to_string()))?;
        let d = TrueDist::Exponential { rate };
        d.validate()?;
        return Ok(d);
    }
    mg1_setting(id).map(|s| s.service)
}
