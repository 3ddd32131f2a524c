//! DPM input model: kernels, base measures, dispersion prior and datasets.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dist::{
    beta_cdf, gamma_cdf, normal_cdf, sample_beta, sample_exp, sample_gamma, sample_inv_gamma, sample_std_normal,
};
use crate::error::{param, Error, Result};
use crate::gibbs::mh_step;
use crate::rng::RandomStream;

/// Beta-kernel data at the endpoints are moved inward by this much.
pub const BETA_CLIP: f64 = 1e-9;
/// Gamma-kernel data equal to zero are replaced by this value.
pub const GAMMA_FLOOR: f64 = 1e-12;
/// M-H steps used to draw from the Beta-kernel base measure.
pub const BETA_BASE_WARMUP: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Gamma,
    Gaussian,
    Beta,
}

impl KernelKind {
    pub fn in_support(self, x: f64) -> bool {
        match self {
            KernelKind::Gamma => x >= 0.0 && x.is_finite(),
            KernelKind::Gaussian => x.is_finite(),
            KernelKind::Beta => (0.0..=1.0).contains(&x),
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Gamma => "gamma",
            KernelKind::Gaussian => "gauss",
            KernelKind::Beta => "beta",
        })
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gamma" => Ok(KernelKind::Gamma),
            "gauss" | "gaussian" | "normal" => Ok(KernelKind::Gaussian),
            "beta" => Ok(KernelKind::Beta),
            other => Err(Error::Config(format!(
                "unknown kernel `{other}` (expected gamma, gauss or beta)"
            ))),
        }
    }
}

/// Parameters of one mixture component.
///
/// The Gamma kernel is parameterized by shape and mean, so its density is
/// Gamma(shape, rate = shape / mean).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelParams {
    Gamma { shape: f64, mean: f64 },
    Gaussian { mean: f64, variance: f64 },
    Beta { a: f64, b: f64 },
}

impl KernelParams {
    pub fn kind(&self) -> KernelKind {
        match self {
            KernelParams::Gamma { .. } => KernelKind::Gamma,
            KernelParams::Gaussian { .. } => KernelKind::Gaussian,
            KernelParams::Beta { .. } => KernelKind::Beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            KernelParams::Gamma { shape, mean } => shape > 0.0 && mean > 0.0 && shape.is_finite() && mean.is_finite(),
            KernelParams::Gaussian { mean, variance } => mean.is_finite() && variance > 0.0 && variance.is_finite(),
            KernelParams::Beta { a, b } => a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(param(format!("invalid kernel parameters {self:?}")))
        }
    }

    /// Natural-log kernel density; `-inf` outside the support.
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            KernelParams::Gamma { shape, mean } => crate::dist::gamma_log_pdf(x, shape, shape / mean),
            KernelParams::Gaussian { mean, variance } => crate::dist::normal_log_pdf(x, mean, variance),
            KernelParams::Beta { a, b } => crate::dist::beta_log_pdf(x, a, b),
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            KernelParams::Gamma { shape, mean } => gamma_cdf(x, shape, shape / mean),
            KernelParams::Gaussian { mean, variance } => normal_cdf((x - mean) / variance.sqrt()),
            KernelParams::Beta { a, b } => beta_cdf(x, a, b),
        }
    }

    /// First and second raw moments.
    pub fn moments(&self) -> (f64, f64) {
        match *self {
            KernelParams::Gamma { shape, mean } => (mean, mean * mean * (shape + 1.0) / shape),
            KernelParams::Gaussian { mean, variance } => (mean, mean * mean + variance),
            KernelParams::Beta { a, b } => {
                let s = a + b;
                (a / s, a * (a + 1.0) / (s * (s + 1.0)))
            }
        }
    }

    pub fn sample(&self, stream: &mut RandomStream) -> f64 {
        match *self {
            KernelParams::Gamma { shape, mean } => sample_gamma(stream, shape, shape / mean),
            KernelParams::Gaussian { mean, variance } => mean + variance.sqrt() * sample_std_normal(stream),
            KernelParams::Beta { a, b } => sample_beta(stream, a, b),
        }
    }

    pub(crate) fn log_kernel(&self) -> LogKernel {
        match *self {
            KernelParams::Gamma { shape, mean } => {
                let rate = shape / mean;
                LogKernel {
                    kind: KernelKind::Gamma,
                    c: shape * rate.ln() - ln_gamma(shape),
                    p: shape - 1.0,
                    q: rate,
                }
            }
            KernelParams::Gaussian { mean, variance } => LogKernel {
                kind: KernelKind::Gaussian,
                c: -0.5 * (std::f64::consts::TAU * variance).ln(),
                p: mean,
                q: 0.5 / variance,
            },
            KernelParams::Beta { a, b } => LogKernel {
                kind: KernelKind::Beta,
                c: ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b),
                p: a - 1.0,
                q: b - 1.0,
            },
        }
    }
}

/// An observation with its logarithms precomputed.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Point {
    pub x: f64,
    pub lx: f64,
    pub l1x: f64,
}

impl Point {
    pub fn new(x: f64) -> Self {
        Self {
            x,
            lx: x.ln(),
            l1x: (-x).ln_1p(),
        }
    }
}

/// Kernel log-density with the normalizing constant precomputed.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogKernel {
    kind: KernelKind,
    c: f64,
    p: f64,
    q: f64,
}

impl LogKernel {
    /// Log-density at an in-support point.
    #[inline]
    pub fn eval(&self, pt: &Point) -> f64 {
        match self.kind {
            KernelKind::Gamma => self.c + self.p * pt.lx - self.q * pt.x,
            KernelKind::Gaussian => {
                let z = pt.x - self.p;
                self.c - self.q * z * z
            }
            KernelKind::Beta => self.c + self.p * pt.lx + self.q * pt.l1x,
        }
    }
}

/// Hyperparameters of the base measure G0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BaseHyper {
    /// V ~ Exponential(theta), u ~ InvGamma(r, s).
    Gamma { theta: f64, r: f64, s: f64 },
    /// sigma^2 ~ Scaled-Inv-chi^2(v0, sigma0^2), u | sigma^2 ~ N(u0, sigma^2 / m0).
    Gaussian { u0: f64, m0: f64, v0: f64, sigma0: f64 },
    /// log g0(a, b) = -lambda1 a - lambda2 b - lambda0 ln B(a, b) + const.
    Beta { lambda0: f64, lambda1: f64, lambda2: f64 },
}

impl BaseHyper {
    pub fn default_for(kind: KernelKind) -> Self {
        match kind {
            KernelKind::Gamma => BaseHyper::Gamma {
                theta: 0.01,
                r: 2.0,
                s: 2.0,
            },
            KernelKind::Gaussian => BaseHyper::Gaussian {
                u0: 0.0,
                m0: 0.01,
                v0: 1.5,
                sigma0: 1.0,
            },
            KernelKind::Beta => BaseHyper::Beta {
                lambda0: 1.0,
                lambda1: 0.01,
                lambda2: 0.01,
            },
        }
    }

    pub fn kind(&self) -> KernelKind {
        match self {
            BaseHyper::Gamma { .. } => KernelKind::Gamma,
            BaseHyper::Gaussian { .. } => KernelKind::Gaussian,
            BaseHyper::Beta { .. } => KernelKind::Beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        let ok = match *self {
            BaseHyper::Gamma { theta, r, s } => pos(theta) && pos(r) && pos(s),
            BaseHyper::Gaussian { u0, m0, v0, sigma0 } => u0.is_finite() && pos(m0) && pos(v0) && pos(sigma0),
            BaseHyper::Beta {
                lambda0,
                lambda1,
                lambda2,
            } => pos(lambda0) && pos(lambda1) && pos(lambda2),
        };
        if ok {
            Ok(())
        } else {
            Err(param(format!("invalid base-measure hyperparameters {self:?}")))
        }
    }
}

/// Gamma(a, b) prior on the dispersion, with `b` a rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaPrior {
    pub a: f64,
    pub b: f64,
}

impl Default for AlphaPrior {
    fn default() -> Self {
        Self { a: 1.0, b: 1.0 }
    }
}

impl AlphaPrior {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        let p = Self { a, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a > 0.0 && self.b > 0.0 && self.a.is_finite() && self.b.is_finite() {
            Ok(())
        } else {
            Err(param(format!(
                "alpha prior needs a > 0 and b > 0, got ({}, {})",
                self.a, self.b
            )))
        }
    }
}

/// Observations with the kernel they are modelled by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    values: Vec<f64>,
    kind: KernelKind,
    range: Option<(f64, f64)>,
}

impl Dataset {
    /// Validates support. Beta-kernel endpoints are clipped inward by
    /// [`BETA_CLIP`]; Gamma-kernel zeros are raised to [`GAMMA_FLOOR`].
    pub fn new(values: Vec<f64>, kind: KernelKind) -> Result<Self> {
        if values.is_empty() {
            return Err(param("dataset must contain at least one value"));
        }
        let mut values = values;
        for v in values.iter_mut() {
            if !kind.in_support(*v) {
                return Err(Error::Support { kind, value: *v });
            }
            match kind {
                KernelKind::Beta => *v = v.clamp(BETA_CLIP, 1.0 - BETA_CLIP),
                KernelKind::Gamma if *v == 0.0 => *v = GAMMA_FLOOR,
                _ => {}
            }
        }
        Ok(Self {
            values,
            kind,
            range: None,
        })
    }

    /// Beta-kernel dataset from raw values on `[a1, a2]`.
    pub fn from_range(raw: &[f64], a1: f64, a2: f64) -> Result<Self> {
        let unit = rescale_to_unit(raw, a1, a2)?;
        let mut d = Self::new(unit, KernelKind::Beta)?;
        d.range = Some((a1, a2));
        Ok(d)
    }

    /// Reads one value per line; blank lines and `#` comments are skipped.
    pub fn load(path: &Path, kind: KernelKind) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::new(parse_values(&text)?, kind)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn range(&self) -> Option<(f64, f64)> {
        self.range
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn points(&self) -> Vec<Point> {
        self.values.iter().map(|&x| Point::new(x)).collect()
    }
}

/// Parses the dataset text format.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let v: f64 = body.parse().map_err(|e| Error::Parse {
            line: n + 1,
            msg: format!("`{body}`: {e}"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line: n + 1,
                msg: format!("`{body}` is not finite"),
            });
        }
        out.push(v);
    }
    Ok(out)
}

/// Maps `[a1, a2]` onto `[0, 1]`.
pub fn rescale_to_unit(raw: &[f64], a1: f64, a2: f64) -> Result<Vec<f64>> {
    if !(a1 < a2) || !a1.is_finite() || !a2.is_finite() {
        return Err(param(format!("rescale range needs a1 < a2, got [{a1}, {a2}]")));
    }
    raw.iter()
        .map(|&x| {
            if (a1..=a2).contains(&x) {
                Ok((x - a1) / (a2 - a1))
            } else {
                Err(Error::Support {
                    kind: KernelKind::Beta,
                    value: x,
                })
            }
        })
        .collect()
}

/// Unnormalized log density of the Beta-kernel base measure.
pub(crate) fn beta_base_log(lambda0: f64, lambda1: f64, lambda2: f64, a: f64, b: f64) -> f64 {
    -lambda1 * a - lambda2 * b - lambda0 * (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b))
}

/// One draw from G0.
pub fn sample_base(hyper: &BaseHyper, stream: &mut RandomStream) -> Result<KernelParams> {
    hyper.validate()?;
    Ok(sample_base_unchecked(hyper, stream))
}

pub(crate) fn sample_base_unchecked(hyper: &BaseHyper, stream: &mut RandomStream) -> KernelParams {
    match *hyper {
        BaseHyper::Gamma { theta, r, s } => KernelParams::Gamma {
            shape: sample_exp(stream) / theta,
            mean: sample_inv_gamma(stream, r, s),
        },
        BaseHyper::Gaussian { u0, m0, v0, sigma0 } => {
            let variance = v0 * sigma0 * sigma0 * sample_inv_gamma(stream, 0.5 * v0, 0.5);
            KernelParams::Gaussian {
                mean: u0 + (variance / m0).sqrt() * sample_std_normal(stream),
                variance,
            }
        }
        BaseHyper::Beta {
            lambda0,
            lambda1,
            lambda2,
        } => {
            let (mut a, mut b) = (1.0, 1.0);
            for _ in 0..BETA_BASE_WARMUP {
                a = mh_step(|x| beta_base_log(lambda0, lambda1, lambda2, x, b), a, 2.0, stream).0;
                b = mh_step(|x| beta_base_log(lambda0, lambda1, lambda2, a, x), b, 2.0, stream).0;
            }
            KernelParams::Beta { a, b }
        }
    }
}

/// Kernel density `h(x | psi)`; zero outside the support.
pub fn kernel_density(psi: &KernelParams, x: f64) -> f64 {
    if psi.kind().in_support(x) {
        psi.density(x)
    } else {
        0.0
    }
}

/// Log of the Gaussian-kernel marginal `∫ h(x|psi) dG0(psi)`: a Student-t with
/// `v0` degrees of freedom, location `u0` and squared scale
/// `sigma0^2 (m0 + 1) / m0`.
pub fn gaussian_log_marginal(u0: f64, m0: f64, v0: f64, sigma0: f64, x: f64) -> f64 {
    let half = 0.5 * v0;
    let a = 0.5 * (v0 + 1.0);
    let b = 0.5 * (v0 * sigma0 * sigma0 + m0 * (x - u0).powi(2) / (m0 + 1.0));
    half * half.ln() - ln_gamma(half)
        + v0 * sigma0.ln()
        + 0.5 * (m0 / (std::f64::consts::TAU * (m0 + 1.0))).ln()
        + ln_gamma(a)
        - a * b.ln()
}

/// Sufficient statistics of the observations held by one component.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Suff {
    pub n: usize,
    pub sum: f64,
    pub sum_ln: f64,
    pub sum_ln1m: f64,
    /// Sum of squared deviations from the component mean.
    pub ss: f64,
}

impl Suff {
    pub fn from_points<'a>(pts: impl Iterator<Item = &'a Point> + Clone) -> Self {
        let mut s = Suff::default();
        for p in pts.clone() {
            s.n += 1;
            s.sum += p.x;
            s.sum_ln += p.lx;
            s.sum_ln1m += p.l1x;
        }
        let mean = s.sum / s.n as f64;
        s.ss = pts.map(|p| (p.x - mean).powi(2)).sum();
        s
    }
}

/// Exact draw from the Gaussian-kernel conditional posterior.
pub(crate) fn gaussian_posterior_draw(hyper: &BaseHyper, suff: &Suff, stream: &mut RandomStream) -> KernelParams {
    let BaseHyper::Gaussian { u0, m0, v0, sigma0 } = *hyper else {
        unreachable!("gaussian posterior requested for {hyper:?}")
    };
    let n = suff.n as f64;
    let xbar = if suff.n == 0 { u0 } else { suff.sum / n };
    let kn = m0 + n;
    let mun = (m0 * u0 + n * xbar) / kn;
    let nun = v0 + n;
    let scale = v0 * sigma0 * sigma0 + suff.ss + m0 * n * (xbar - u0).powi(2) / kn;
    let variance = scale * sample_inv_gamma(stream, 0.5 * nun, 0.5);
    KernelParams::Gaussian {
        mean: mun + (variance / kn).sqrt() * sample_std_normal(stream),
        variance,
    }
}

/// Exact draw of the Gamma-kernel mean given the shape.
pub(crate) fn gamma_mean_draw(r: f64, s: f64, shape: f64, suff: &Suff, stream: &mut RandomStream) -> f64 {
    sample_inv_gamma(stream, r + suff.n as f64 * shape, s + shape * suff.sum)
}

/// Log conditional posterior of the Gamma-kernel shape given the mean.
pub(crate) fn gamma_shape_log_post(theta: f64, mean: f64, suff: &Suff, v: f64) -> f64 {
    if !(v > 0.0) || !v.is_finite() {
        return f64::NEG_INFINITY;
    }
    let n = suff.n as f64;
    -theta * v + n * (v * (v / mean).ln() - ln_gamma(v)) + (v - 1.0) * suff.sum_ln - v / mean * suff.sum
}

/// Log conditional posteriors of the Beta-kernel shapes.
pub(crate) fn beta_a_log_post(lambda0: f64, lambda1: f64, b: f64, suff: &Suff, a: f64) -> f64 {
    if !(a > 0.0) || !a.is_finite() {
        return f64::NEG_INFINITY;
    }
    let w = lambda0 + suff.n as f64;
    a * (suff.sum_ln - lambda1) - w * (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b))
}

pub(crate) fn beta_b_log_post(lambda0: f64, lambda2: f64, a: f64, suff: &Suff, b: f64) -> f64 {
    if !(b > 0.0) || !b.is_finite() {
        return f64::NEG_INFINITY;
    }
    let w = lambda0 + suff.n as f64;
    b * (suff.sum_ln1m - lambda2) - w * (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b))
}
