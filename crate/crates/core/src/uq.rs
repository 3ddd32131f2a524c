//! Propagation of posterior input models through the simulator: percentile
//! credible intervals, variance decomposition and the direct-bootstrap
//! baseline.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::gibbs::{FitConfig, PosteriorSample};
use crate::model::Dataset;
use crate::queue::{pk_mean_time, posterior_moments, simulate_with, PosteriorSampler, QueueConfig, QueueMetric};
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sided {
    TwoSided,
    /// `[lower, +inf)`.
    OneSidedLower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UQConfig {
    /// Number of posterior samples.
    pub b: usize,
    /// Replications per sample.
    pub n: usize,
    pub alpha_star: f64,
    pub sided: Sided,
    /// Switch to a one-sided interval when the unstable fraction exceeds
    /// this value; `None` never switches.
    pub one_sided_above: Option<f64>,
    /// G0 draws for the base-measure term of the moments.
    pub n_mc: usize,
}

impl Default for UQConfig {
    fn default() -> Self {
        Self {
            b: 1000,
            n: 100,
            alpha_star: 0.05,
            sided: Sided::TwoSided,
            one_sided_above: Some(0.025),
            n_mc: 1000,
        }
    }
}

impl UQConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b < 2 || self.n == 0 {
            return Err(Error::Config(format!(
                "need B >= 2 and n >= 1, got B={}, n={}",
                self.b, self.n
            )));
        }
        if !(self.alpha_star > 0.0 && self.alpha_star < 1.0) {
            return Err(Error::Config(format!(
                "alpha* must lie in (0, 1), got {}",
                self.alpha_star
            )));
        }
        if self.n_mc == 0 {
            return Err(Error::Config("n_mc must be >= 1".into()));
        }
        cri_indices(self.b, self.alpha_star, self.sided).map(|_| ())
    }
}

/// Serializes non-finite floats as the strings "inf", "-inf" and "nan".
mod float_text {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn decode<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("invalid float `{other}`"))),
            },
        }
    }

    fn text(v: f64) -> &'static str {
        if v.is_nan() {
            "nan"
        } else if v > 0.0 {
            "inf"
        } else {
            "-inf"
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(text(*v))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        decode(Repr::deserialize(d)?)
    }

    pub mod vec {
        use super::*;
        use serde::ser::SerializeSeq;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                if x.is_finite() {
                    seq.serialize_element(x)?;
                } else {
                    seq.serialize_element(text(*x))?;
                }
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?.into_iter().map(decode).collect()
        }
    }

    pub mod opt {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(x) => super::serialize(x, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<Repr>::deserialize(d)?.map(decode).transpose()
        }
    }
}

/// Outcome of one uncertainty-quantification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UQResult {
    /// Sample means, `+inf` for unstable samples.
    #[serde(with = "float_text::vec")]
    pub ybar: Vec<f64>,
    /// Sample variances; zero when `n = 1`.
    pub s2: Vec<f64>,
    pub n: usize,
    #[serde(with = "float_text")]
    pub lower: f64,
    #[serde(with = "float_text")]
    pub upper: f64,
    pub sided: Sided,
    /// Grand mean over finite sample means.
    pub point: f64,
    /// `None` when `n = 1`.
    #[serde(with = "float_text::opt")]
    pub sigma2_s: Option<f64>,
    pub sigma2_i: f64,
    #[serde(with = "float_text::opt")]
    pub ratio: Option<f64>,
    pub unstable_fraction: f64,
}

impl UQResult {
    pub fn cri(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub const CSV_HEADER: &'static str = "b,n,lower,upper,sided,point,sigma2_s,sigma2_i,ratio,unstable_fraction";

    /// One-row CSV summary with header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let f = |v: f64| {
            if v.is_finite() {
                v.to_string()
            } else if v.is_nan() {
                "nan".into()
            } else if v > 0.0 {
                "inf".into()
            } else {
                "-inf".into()
            }
        };
        let o = |v: Option<f64>| v.map(f).unwrap_or_default();
        writeln!(out, "{}", Self::CSV_HEADER)?;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            self.ybar.len(),
            self.n,
            f(self.lower),
            f(self.upper),
            match self.sided {
                Sided::TwoSided => "two",
                Sided::OneSidedLower => "lower",
            },
            f(self.point),
            o(self.sigma2_s),
            f(self.sigma2_i),
            o(self.ratio),
            self.unstable_fraction
        )?;
        Ok(())
    }
}

/// Ceiling with a relative guard against `0.05 * 1000 = 50.000000000000007`.
fn ceil_index(x: f64) -> usize {
    (x - 1e-9 * x.abs().max(1.0)).ceil() as usize
}

fn cri_indices(b: usize, alpha_star: f64, sided: Sided) -> Result<(usize, Option<usize>)> {
    let bf = b as f64;
    let (lo, hi) = match sided {
        Sided::TwoSided => (
            ceil_index(alpha_star / 2.0 * bf),
            Some(ceil_index((1.0 - alpha_star / 2.0) * bf)),
        ),
        Sided::OneSidedLower => (ceil_index(alpha_star * bf), None),
    };
    let tail = match sided {
        Sided::TwoSided => alpha_star / 2.0 * bf,
        Sided::OneSidedLower => alpha_star * bf,
    };
    if tail < 1.0 - 1e-9 || lo < 1 || hi.is_some_and(|h| h > b || h < lo) {
        return Err(Error::Config(format!("B={b} is too small for alpha*={alpha_star}")));
    }
    Ok((lo, hi))
}

/// Percentile interval from order statistics (1-based ceiling indices).
/// Infinite values sort last.
pub fn empirical_cri(ybar: &[f64], alpha_star: f64, sided: Sided) -> Result<(f64, f64)> {
    if ybar.len() < 2 {
        return Err(Error::Config("need at least two sample means".into()));
    }
    if ybar.iter().any(|v| v.is_nan()) {
        return Err(param("sample means must not be NaN"));
    }
    let (lo, hi) = cri_indices(ybar.len(), alpha_star, sided)?;
    let mut sorted = ybar.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((sorted[lo - 1], hi.map_or(f64::INFINITY, |h| sorted[h - 1])))
}

/// Variance decomposition estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub sigma2_s: f64,
    pub sigma2_i: f64,
    /// Entries dropped because the sample mean was infinite.
    pub excluded: usize,
}

impl Decomposition {
    pub fn ratio(&self) -> f64 {
        self.sigma2_i / self.sigma2_s
    }
}

/// `σ̂_S² = mean(S_b²/n_b)` and `σ̂_I² = mean((Ȳ_b - Ȳ̄)²)` over finite entries.
pub fn variance_decomposition(ybar: &[f64], s2: &[f64], n_per: &[usize]) -> Result<Decomposition> {
    if ybar.len() != s2.len() || ybar.len() != n_per.len() {
        return Err(param("ybar, s2 and n_per must have equal lengths"));
    }
    let keep: Vec<usize> = (0..ybar.len()).filter(|&b| ybar[b].is_finite()).collect();
    if keep.is_empty() {
        return Err(Error::UndefinedDecomposition);
    }
    let k = keep.len() as f64;
    let grand = keep.iter().map(|&b| ybar[b]).sum::<f64>() / k;
    let sigma2_s = keep.iter().map(|&b| s2[b] / n_per[b] as f64).sum::<f64>() / k;
    let sigma2_i = keep.iter().map(|&b| (ybar[b] - grand).powi(2)).sum::<f64>() / k;
    Ok(Decomposition {
        sigma2_s,
        sigma2_i,
        excluded: ybar.len() - keep.len(),
    })
}

/// Fraction of `mu_values` inside `[lower, upper]`.
pub fn probability_content(cri: (f64, f64), mu_values: &[f64]) -> Result<f64> {
    if mu_values.is_empty() {
        return Err(param("need at least one value"));
    }
    let inside = mu_values.iter().filter(|&&v| v >= cri.0 && v <= cri.1).count();
    Ok(inside as f64 / mu_values.len() as f64)
}

/// Hausdorff distance between two intervals.
pub fn hausdorff(a: (f64, f64), b: (f64, f64)) -> f64 {
    let d = |x: f64, y: f64| if x == y { 0.0 } else { (x - y).abs() };
    d(a.0, b.0).max(d(a.1, b.1))
}

/// Produces the replication outputs for one posterior sample.
pub trait SampleSimulator: Sync {
    /// `None` marks an unstable sample, whose mean response is `+inf`.
    fn replicate(&self, s: &PosteriorSample, n: usize, stream: &mut RandomStream) -> Option<Vec<f64>>;
}

/// Queue simulation driven by the posterior sample.
#[derive(Debug, Clone, Copy)]
pub struct QueueSimulator {
    pub queue: QueueConfig,
    pub n_mc: usize,
}

impl SampleSimulator for QueueSimulator {
    fn replicate(&self, s: &PosteriorSample, n: usize, stream: &mut RandomStream) -> Option<Vec<f64>> {
        if self.queue.metric == QueueMetric::MeanTimeInSystem {
            let (m1, _) = posterior_moments(s, self.n_mc, &mut stream.substream(u64::MAX)).ok()?;
            if self.queue.arrival_rate * m1 >= 1.0 {
                return None;
            }
        }
        let sampler = PosteriorSampler::new(s);
        Some((0..n).map(|_| simulate_with(&sampler, &self.queue, stream)).collect())
    }
}

/// Mean response of each sample from the Pollaczek-Khinchine formula, with
/// moments from [`posterior_moments`] on the same substreams the
/// [`QueueSimulator`] uses for its stability check.
pub fn pk_means(samples: &[PosteriorSample], lambda: f64, n_mc: usize, stream: &RandomStream) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .enumerate()
        .map(|(b, s)| {
            let (m1, m2) = posterior_moments(s, n_mc, &mut stream.substream(b as u64).substream(u64::MAX))?;
            pk_mean_time(m1, m2, lambda)
        })
        .collect()
}

/// Mean and unbiased variance, shifted by the first value so constant input
/// gives exactly zero variance.
fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let x0 = xs[0];
    let d = xs.iter().map(|x| x - x0).sum::<f64>() / n;
    let v = if xs.len() > 1 {
        xs.iter().map(|x| (x - x0 - d).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (x0 + d, v)
}

/// Assembles interval, point estimate and decomposition from sample means.
pub fn summarize(ybar: Vec<f64>, s2: Vec<f64>, cfg: &UQConfig) -> Result<UQResult> {
    let b = ybar.len();
    let unstable = ybar.iter().filter(|v| !v.is_finite()).count();
    let unstable_fraction = unstable as f64 / b as f64;
    let sided = match cfg.one_sided_above {
        Some(t) if unstable_fraction > t => Sided::OneSidedLower,
        _ => cfg.sided,
    };
    let (lower, upper) = empirical_cri(&ybar, cfg.alpha_star, sided)?;
    let dec = variance_decomposition(&ybar, &s2, &vec![cfg.n; b])?;
    let point = {
        let f: Vec<f64> = ybar.iter().copied().filter(|v| v.is_finite()).collect();
        f.iter().sum::<f64>() / f.len() as f64
    };
    let sigma2_s = (cfg.n > 1).then_some(dec.sigma2_s);
    Ok(UQResult {
        ybar,
        s2,
        n: cfg.n,
        lower,
        upper,
        sided,
        point,
        sigma2_s,
        sigma2_i: dec.sigma2_i,
        ratio: sigma2_s.map(|s| dec.sigma2_i / s),
        unstable_fraction,
    })
}

/// Runs `n` replications at each sample in parallel (sample `b` uses
/// substream `b`) and summarizes.
pub fn run_uq_with_samples<S: SampleSimulator>(
    samples: &[PosteriorSample],
    sim: &S,
    cfg: &UQConfig,
    stream: &RandomStream,
) -> Result<UQResult> {
    if samples.len() < 2 {
        return Err(Error::Config("need at least two posterior samples".into()));
    }
    let per: Vec<(f64, f64)> = samples
        .par_iter()
        .enumerate()
        .map(
            |(b, s)| match sim.replicate(s, cfg.n, &mut stream.substream(b as u64)) {
                Some(ys) => mean_var(&ys),
                None => (f64::INFINITY, 0.0),
            },
        )
        .collect();
    let (ybar, s2) = per.into_iter().unzip();
    summarize(ybar, s2, cfg)
}

/// Fits the DPM, draws `B` posterior samples and propagates them through the
/// queue.
pub fn run_uq(
    data: &Dataset,
    fit: &FitConfig,
    queue: &QueueConfig,
    cfg: &UQConfig,
    stream: &mut RandomStream,
) -> Result<UQResult> {
    cfg.validate()?;
    queue.validate()?;
    let mut fit = *fit;
    fit.chain.n_samples = cfg.b;
    let samples = fit.fit(data, stream)?;
    let root = RandomStream::new(stream.next_seed());
    run_uq_with_samples(
        &samples,
        &QueueSimulator {
            queue: *queue,
            n_mc: cfg.n_mc,
        },
        cfg,
        &root,
    )
}

/// Direct bootstrap: `B` resamples of the data, each driving `n` runs with
/// service times drawn uniformly from the resample.
pub fn run_bootstrap_uq(
    data: &[f64],
    queue: &QueueConfig,
    cfg: &UQConfig,
    stream: &mut RandomStream,
) -> Result<UQResult> {
    cfg.validate()?;
    queue.validate()?;
    if data.len() < 2 {
        return Err(param("bootstrap needs at least two observations"));
    }
    if data.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(param("service data must be finite and nonnegative"));
    }
    let root = RandomStream::new(stream.next_seed());
    let per: Vec<(f64, f64)> = (0..cfg.b)
        .into_par_iter()
        .map(|b| {
            let mut st = root.substream(b as u64);
            let resample: Vec<f64> = (0..data.len()).map(|_| data[st.index(data.len())]).collect();
            let mean = resample.iter().sum::<f64>() / resample.len() as f64;
            if queue.metric == QueueMetric::MeanTimeInSystem && queue.arrival_rate * mean >= 1.0 {
                return (f64::INFINITY, 0.0);
            }
            let draw = |s: &mut RandomStream| resample[s.index(resample.len())];
            let ys: Vec<f64> = (0..cfg.n).map(|_| simulate_with(&draw, queue, &mut st)).collect();
            mean_var(&ys)
        })
        .collect();
    let (ybar, s2) = per.into_iter().unzip();
    summarize(ybar, s2, cfg)
}
