//! Single-server FIFO queue with Poisson arrivals, simulated by the Lindley
//! recursion, plus closed-form mean-response oracles.

use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::dist::{sample_exp, sample_std_normal};
use crate::error::{param, Error, Result};
use crate::gibbs::PosteriorSample;
use crate::model::{sample_base_unchecked, BaseHyper, KernelParams};
use crate::rng::RandomStream;
use crate::truth::TrueDist;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueMetric {
    /// Fraction of customers whose time in system exceeds the threshold.
    ThresholdProb(f64),
    MeanTimeInSystem,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueConfig {
    pub arrival_rate: f64,
    pub warmup: usize,
    pub runlength: usize,
    pub metric: QueueMetric,
}

impl QueueConfig {
    /// Warmup and runlength of 1000 customers each.
    pub fn new(arrival_rate: f64, metric: QueueMetric) -> Self {
        Self {
            arrival_rate,
            warmup: 1000,
            runlength: 1000,
            metric,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.arrival_rate > 0.0) || !self.arrival_rate.is_finite() {
            return Err(param(format!("arrival rate must be > 0, got {}", self.arrival_rate)));
        }
        if self.runlength == 0 {
            return Err(param("runlength must be >= 1"));
        }
        if let QueueMetric::ThresholdProb(t) = self.metric {
            if !(t > 0.0) {
                return Err(param(format!("threshold must be > 0, got {t}")));
            }
        }
        Ok(())
    }
}

/// Something that emits nonnegative service times.
pub trait ServiceDraw {
    fn draw(&self, stream: &mut RandomStream) -> f64;
}

impl<F: Fn(&mut RandomStream) -> f64> ServiceDraw for F {
    fn draw(&self, stream: &mut RandomStream) -> f64 {
        self(stream)
    }
}

/// Where service times come from.
#[derive(Debug, Clone, Copy)]
pub enum ServiceSource<'a> {
    Posterior(&'a PosteriorSample),
    /// Uniform resampling of the given values.
    Empirical(&'a [f64]),
    True(&'a TrueDist),
}

#[derive(Debug, Clone)]
enum KernelSampler {
    Gamma(rand_distr::Gamma<f64>),
    Normal { mean: f64, sd: f64 },
    Beta(rand_distr::Beta<f64>),
}

impl KernelSampler {
    fn new(psi: &KernelParams) -> Self {
        match *psi {
            KernelParams::Gamma { shape, mean } => {
                KernelSampler::Gamma(rand_distr::Gamma::new(shape, mean / shape).expect("valid gamma kernel"))
            }
            KernelParams::Gaussian { mean, variance } => KernelSampler::Normal {
                mean,
                sd: variance.sqrt(),
            },
            KernelParams::Beta { a, b } => KernelSampler::Beta(rand_distr::Beta::new(a, b).expect("valid beta kernel")),
        }
    }

    #[inline]
    fn sample(&self, stream: &mut RandomStream) -> f64 {
        match self {
            KernelSampler::Gamma(g) => g.sample(stream),
            KernelSampler::Normal { mean, sd } => mean + sd * sample_std_normal(stream),
            KernelSampler::Beta(b) => b.sample(stream),
        }
    }
}

/// Variate generator for one posterior sample with per-atom samplers built
/// once. Gaussian-kernel draws are floored at zero.
#[derive(Debug, Clone)]
pub struct PosteriorSampler {
    atom_of_obs: Vec<u32>,
    samplers: Vec<KernelSampler>,
    p_base: f64,
    hyper: BaseHyper,
}

impl PosteriorSampler {
    pub fn new(s: &PosteriorSample) -> Self {
        let m = s.m() as f64;
        Self {
            atom_of_obs: s.labels.iter().map(|&c| c as u32).collect(),
            samplers: s.atoms.iter().map(KernelSampler::new).collect(),
            p_base: s.alpha / (m + s.alpha),
            hyper: s.hyper,
        }
    }
}

impl ServiceDraw for PosteriorSampler {
    #[inline]
    fn draw(&self, stream: &mut RandomStream) -> f64 {
        let u = stream.uniform();
        let x = if u < self.p_base {
            sample_base_unchecked(&self.hyper, stream).sample(stream)
        } else {
            // reuse u: conditional on u >= p_base it is uniform on the rest
            let v = (u - self.p_base) / (1.0 - self.p_base);
            let n = self.atom_of_obs.len();
            let i = ((v * n as f64) as usize).min(n - 1);
            self.samplers[self.atom_of_obs[i] as usize].sample(stream)
        };
        x.max(0.0)
    }
}

struct Empirical<'a>(&'a [f64]);

impl ServiceDraw for Empirical<'_> {
    #[inline]
    fn draw(&self, stream: &mut RandomStream) -> f64 {
        self.0[stream.index(self.0.len())]
    }
}

struct FromTruth<'a>(&'a TrueDist);

impl ServiceDraw for FromTruth<'_> {
    #[inline]
    fn draw(&self, stream: &mut RandomStream) -> f64 {
        self.0.sample(stream).max(0.0)
    }
}

/// One run of the queue from an empty system.
pub fn simulate_with<S: ServiceDraw + ?Sized>(service: &S, cfg: &QueueConfig, stream: &mut RandomStream) -> f64 {
    let inv_rate = 1.0 / cfg.arrival_rate;
    let total = cfg.warmup + cfg.runlength;
    let mut wait = 0.0f64;
    let mut acc = 0.0f64;
    let mut exceed = 0usize;
    let tau = match cfg.metric {
        QueueMetric::ThresholdProb(t) => t,
        QueueMetric::MeanTimeInSystem => f64::INFINITY,
    };
    for i in 0..total {
        let s = service.draw(stream);
        let t = wait + s;
        if i >= cfg.warmup {
            acc += t;
            exceed += (t > tau) as usize;
        }
        wait = (t - sample_exp(stream) * inv_rate).max(0.0);
    }
    match cfg.metric {
        QueueMetric::ThresholdProb(_) => exceed as f64 / cfg.runlength as f64,
        QueueMetric::MeanTimeInSystem => acc / cfg.runlength as f64,
    }
}

/// One run with service times from `src`.
pub fn simulate_queue(src: &ServiceSource, cfg: &QueueConfig, stream: &mut RandomStream) -> Result<f64> {
    cfg.validate()?;
    Ok(match src {
        ServiceSource::Posterior(s) => simulate_with(&PosteriorSampler::new(s), cfg, stream),
        ServiceSource::Empirical(v) => {
            if v.is_empty() {
                return Err(param("empirical source needs at least one value"));
            }
            if v.iter().any(|x| !(*x >= 0.0)) {
                return Err(param("service times must be nonnegative"));
            }
            simulate_with(&Empirical(v), cfg, stream)
        }
        ServiceSource::True(d) => simulate_with(&FromTruth(d), cfg, stream),
    })
}

/// M/M/1 mean time in system, `1/(μ - λ)`, or `+inf` when `λ >= μ`.
pub fn analytic_mm1_mean_time(lambda: f64, mu: f64) -> Result<f64> {
    if !(lambda > 0.0 && mu > 0.0) {
        return Err(param(format!("rates must be > 0, got λ={lambda}, μ={mu}")));
    }
    Ok(if lambda < mu {
        1.0 / (mu - lambda)
    } else {
        f64::INFINITY
    })
}

/// Pollaczek-Khinchine mean time in system from the first two raw moments of
/// the service time: `M1 + λ M2 / (2 (1 - λ M1))`, or `+inf` when `λ M1 >= 1`.
pub fn pk_mean_time(m1: f64, m2: f64, lambda: f64) -> Result<f64> {
    if !(m1 > 0.0) || !(lambda > 0.0) || m2.is_nan() {
        return Err(param(format!("need M1 > 0 and λ > 0, got M1={m1}, λ={lambda}")));
    }
    if m2 < m1 * m1 * (1.0 - 1e-12) {
        return Err(Error::Moments { m1, m2 });
    }
    let rho = lambda * m1;
    if rho >= 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok(m1 + lambda * m2 / (2.0 * (1.0 - rho)))
}

/// First two raw moments of a posterior sample: exact for the atoms, Monte
/// Carlo over `n_mc` G0 draws for the base-measure term.
pub fn posterior_moments(s: &PosteriorSample, n_mc: usize, stream: &mut RandomStream) -> Result<(f64, f64)> {
    if n_mc == 0 {
        return Err(param("n_mc must be >= 1"));
    }
    let denom = s.m() as f64 + s.alpha;
    let (mut m1, mut m2) = (0.0, 0.0);
    for (psi, &n) in s.atoms.iter().zip(&s.counts) {
        let (a, b) = psi.moments();
        let w = n as f64 / denom;
        m1 += w * a;
        m2 += w * b;
    }
    if s.alpha > 0.0 {
        let (mut g1, mut g2) = (0.0, 0.0);
        for _ in 0..n_mc {
            let (a, b) = sample_base_unchecked(&s.hyper, stream).moments();
            g1 += a;
            g2 += b;
        }
        let w = s.alpha / denom / n_mc as f64;
        m1 += w * g1;
        m2 += w * g2;
    }
    Ok((m1, m2))
}
