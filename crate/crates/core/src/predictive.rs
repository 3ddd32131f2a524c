//! Densities, CDFs and variates of posterior samples and of the posterior
//! predictive distribution.
//!
//! A posterior sample is the mixture
//! `Σ_j n_j/(m+α) h(·|ψ_j) + α/(m+α) ∫ h(·|ψ) dG0(ψ)`, where the integral is
//! replaced by an average over `n_g` draws from G0.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::gibbs::PosteriorSample;
use crate::model::{sample_base_unchecked, KernelParams};
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveConfig {
    pub n_g: usize,
    /// Reuse one G0 set for every x. When false, each x gets its own set,
    /// drawn from a substream keyed by x.
    pub cache_g0: bool,
}

impl Default for PredictiveConfig {
    fn default() -> Self {
        Self {
            n_g: 1000,
            cache_g0: true,
        }
    }
}

impl PredictiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_g == 0 {
            return Err(param("n_g must be >= 1"));
        }
        Ok(())
    }
}

/// CDF tails below this are treated as exactly 0 or 1 on grids.
const TAIL: f64 = 1e-15;

/// Finite weighted mixture of kernels.
#[derive(Debug, Clone, Default)]
pub struct Mixture {
    weights: Vec<f64>,
    comps: Vec<KernelParams>,
}

impl Mixture {
    pub fn push(&mut self, w: f64, psi: KernelParams) {
        if w > 0.0 {
            self.weights.push(w);
            self.comps.push(psi);
        }
    }

    pub fn len(&self) -> usize {
        self.comps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comps.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn density(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.comps)
            .map(|(w, c)| if c.kind().in_support(x) { w * c.density(x) } else { 0.0 })
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let v: f64 = self.weights.iter().zip(&self.comps).map(|(w, c)| w * c.cdf(x)).sum();
        v.clamp(0.0, 1.0)
    }

    /// CDF at every point of an ascending grid.
    ///
    /// Each component is evaluated only between the grid points where its own
    /// CDF leaves `1e-15` and reaches `1 - 1e-15`; past that it contributes its
    /// full weight.
    pub fn cdf_sorted(&self, xs: &[f64]) -> Vec<f64> {
        debug_assert!(xs.windows(2).all(|w| w[0] <= w[1]));
        let n = xs.len();
        let mut out = vec![0.0; n];
        // diff[k] adds a full weight from grid index k onward
        let mut diff = vec![0.0; n + 1];
        for (&w, c) in self.weights.iter().zip(&self.comps) {
            let lo = xs.partition_point(|&x| c.cdf(x) < TAIL);
            let hi = lo + xs[lo..].partition_point(|&x| c.cdf(x) <= 1.0 - TAIL);
            for k in lo..hi {
                out[k] += w * c.cdf(xs[k]);
            }
            diff[hi] += w;
        }
        let mut acc = 0.0;
        for k in 0..n {
            acc += diff[k];
            out[k] = (out[k] + acc).clamp(0.0, 1.0);
        }
        out
    }

    /// Draws one variate.
    pub fn sample(&self, stream: &mut RandomStream) -> f64 {
        let mut u = stream.uniform() * self.total_weight();
        for (w, c) in self.weights.iter().zip(&self.comps) {
            if u < *w {
                return c.sample(stream);
            }
            u -= w;
        }
        self.comps[self.comps.len() - 1].sample(stream)
    }
}

fn g0_set(s: &PosteriorSample, n_g: usize, stream: &mut RandomStream) -> Vec<KernelParams> {
    (0..n_g).map(|_| sample_base_unchecked(&s.hyper, stream)).collect()
}

fn add_sample(mix: &mut Mixture, s: &PosteriorSample, scale: f64) {
    let denom = s.m() as f64 + s.alpha;
    for (psi, &n) in s.atoms.iter().zip(&s.counts) {
        mix.push(scale * n as f64 / denom, *psi);
    }
}

fn add_g0(mix: &mut Mixture, g0: &[KernelParams], weight: f64) {
    let w = weight / g0.len() as f64;
    for psi in g0 {
        mix.push(w, *psi);
    }
}

/// Density and CDF of one posterior sample.
#[derive(Debug, Clone)]
pub struct SampleEval {
    sample: PosteriorSample,
    cfg: PredictiveConfig,
    base: Mixture,
    cached: Mixture,
    root: RandomStream,
}

impl SampleEval {
    pub fn new(s: &PosteriorSample, cfg: &PredictiveConfig, stream: &mut RandomStream) -> Result<Self> {
        cfg.validate()?;
        let mut base = Mixture::default();
        add_sample(&mut base, s, 1.0);
        let root = RandomStream::new(stream.next_seed());
        let mut cached = base.clone();
        if cfg.cache_g0 && s.alpha > 0.0 {
            let g0 = g0_set(s, cfg.n_g, stream);
            add_g0(&mut cached, &g0, s.alpha / (s.m() as f64 + s.alpha));
        }
        Ok(Self {
            sample: s.clone(),
            cfg: *cfg,
            base,
            cached,
            root,
        })
    }

    fn mixture_at(&self, x: f64) -> std::borrow::Cow<'_, Mixture> {
        if self.cfg.cache_g0 || self.sample.alpha == 0.0 {
            std::borrow::Cow::Borrowed(&self.cached)
        } else {
            let mut st = self.root.substream(x.to_bits());
            let g0 = g0_set(&self.sample, self.cfg.n_g, &mut st);
            let mut mix = self.base.clone();
            add_g0(
                &mut mix,
                &g0,
                self.sample.alpha / (self.sample.m() as f64 + self.sample.alpha),
            );
            std::borrow::Cow::Owned(mix)
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        self.mixture_at(x).density(x)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.mixture_at(x).cdf(x)
    }
}

/// Density of one posterior sample at `x`.
pub fn sample_density(s: &PosteriorSample, x: f64, cfg: &PredictiveConfig, stream: &mut RandomStream) -> Result<f64> {
    Ok(SampleEval::new(s, cfg, stream)?.density(x))
}

/// CDF of one posterior sample at `x`.
pub fn sample_cdf(s: &PosteriorSample, x: f64, cfg: &PredictiveConfig, stream: &mut RandomStream) -> Result<f64> {
    Ok(SampleEval::new(s, cfg, stream)?.cdf(x))
}

/// Posterior predictive distribution: the average of the sample mixtures.
///
/// All samples share one set of `n_g` G0 draws, weighted by the average of
/// their `α/(m+α)`.
#[derive(Debug, Clone)]
pub struct Predictive {
    mix: Mixture,
}

impl Predictive {
    pub fn new(samples: &[PosteriorSample], cfg: &PredictiveConfig, stream: &mut RandomStream) -> Result<Self> {
        cfg.validate()?;
        let first = samples
            .first()
            .ok_or_else(|| param("predictive needs at least one sample"))?;
        if samples.iter().any(|s| s.hyper != first.hyper) {
            return Err(param("samples must share one base measure"));
        }
        let b = samples.len() as f64;
        let mut mix = Mixture::default();
        for s in samples {
            add_sample(&mut mix, s, 1.0 / b);
        }
        let g0_weight = samples.iter().map(|s| s.alpha / (s.m() as f64 + s.alpha)).sum::<f64>() / b;
        // consume the stream the same way as SampleEval so a single sample agrees
        let _ = stream.next_seed();
        if g0_weight > 0.0 {
            let g0 = g0_set(first, cfg.n_g, stream);
            add_g0(&mut mix, &g0, g0_weight);
        }
        Ok(Self { mix })
    }

    pub fn density(&self, x: f64) -> f64 {
        self.mix.density(x)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.mix.cdf(x)
    }

    pub fn cdf_sorted(&self, xs: &[f64]) -> Vec<f64> {
        self.mix.cdf_sorted(xs)
    }

    pub fn sample(&self, stream: &mut RandomStream) -> f64 {
        self.mix.sample(stream)
    }

    pub fn mixture(&self) -> &Mixture {
        &self.mix
    }
}

/// Predictive density at `x`.
pub fn predictive_density(
    samples: &[PosteriorSample],
    x: f64,
    cfg: &PredictiveConfig,
    stream: &mut RandomStream,
) -> Result<f64> {
    Ok(Predictive::new(samples, cfg, stream)?.density(x))
}

/// Predictive CDF at `x`.
pub fn predictive_cdf(
    samples: &[PosteriorSample],
    x: f64,
    cfg: &PredictiveConfig,
    stream: &mut RandomStream,
) -> Result<f64> {
    Ok(Predictive::new(samples, cfg, stream)?.cdf(x))
}

/// One input variate from a posterior sample.
pub fn draw_variate(s: &PosteriorSample, stream: &mut RandomStream) -> f64 {
    let m = s.m() as f64;
    if stream.uniform() * (m + s.alpha) < m {
        s.atoms[s.labels[stream.index(s.labels.len())]].sample(stream)
    } else {
        sample_base_unchecked(&s.hyper, stream).sample(stream)
    }
}

/// Writes `(x, value)` rows as CSV.
pub fn write_grid<W: Write>(xs: &[f64], values: &[f64], mut out: W) -> Result<()> {
    writeln!(out, "x,value")?;
    for (x, v) in xs.iter().zip(values) {
        writeln!(out, "{x},{v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BaseHyper, KernelKind};
    use crate::testutil::*;

    fn std_normal_sample(alpha: f64) -> PosteriorSample {
        PosteriorSample::from_atoms(
            vec![KernelParams::Gaussian {
                mean: 0.0,
                variance: 1.0,
            }],
            vec![1],
            alpha,
            BaseHyper::default_for(KernelKind::Gaussian),
        )
        .unwrap()
    }

    fn cfg() -> PredictiveConfig {
        PredictiveConfig::default()
    }

    #[test]
    fn zero_alpha_is_kernel_average() {
        let s = PosteriorSample::from_atoms(
            vec![
                KernelParams::Gamma { shape: 2.0, mean: 1.0 },
                KernelParams::Gamma { shape: 5.0, mean: 4.0 },
            ],
            vec![3, 1],
            0.0,
            BaseHyper::default_for(KernelKind::Gamma),
        )
        .unwrap();
        let x = 1.7;
        let expect = 0.75 * s.atoms[0].density(x) + 0.25 * s.atoms[1].density(x);
        let got = sample_density(&s, x, &cfg(), &mut RandomStream::new(1)).unwrap();
        assert!((got - expect).abs() < 1e-14);
    }

    #[test]
    fn standard_normal_examples() {
        let s = std_normal_sample(0.0);
        let mut st = RandomStream::new(2);
        let d = sample_density(&s, 0.0, &cfg(), &mut st).unwrap();
        assert!((d - 1.0 / std::f64::consts::TAU.sqrt()).abs() < 1e-14);
        assert!((sample_cdf(&s, 0.0, &cfg(), &mut st).unwrap() - 0.5).abs() < 1e-14);
        assert!((sample_cdf(&s, 40.0, &cfg(), &mut st).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn density_normalizes_with_g0_term() {
        let s = PosteriorSample::from_atoms(
            vec![KernelParams::Gamma { shape: 3.0, mean: 2.0 }],
            vec![10],
            2.0,
            BaseHyper::default_for(KernelKind::Gamma),
        )
        .unwrap();
        let ev = SampleEval::new(&s, &cfg(), &mut RandomStream::new(3)).unwrap();
        let total = integrate_half_line(&|x| ev.density(x), 0.0, 1e-8);
        assert!((total - 1.0).abs() < 0.02, "{total}");
    }

    #[test]
    fn cdf_monotone_on_grid() {
        for kind in [KernelKind::Gamma, KernelKind::Gaussian, KernelKind::Beta] {
            let atom = match kind {
                KernelKind::Gamma => KernelParams::Gamma { shape: 2.0, mean: 1.0 },
                KernelKind::Gaussian => KernelParams::Gaussian {
                    mean: 0.5,
                    variance: 0.2,
                },
                KernelKind::Beta => KernelParams::Beta { a: 2.0, b: 3.0 },
            };
            let s = PosteriorSample::from_atoms(vec![atom], vec![5], 1.0, BaseHyper::default_for(kind)).unwrap();
            let ev = SampleEval::new(
                &s,
                &PredictiveConfig {
                    n_g: 200,
                    cache_g0: true,
                },
                &mut RandomStream::new(4),
            )
            .unwrap();
            let mut prev = 0.0;
            for k in 0..1000 {
                let x = -2.0 + 6.0 * k as f64 / 999.0;
                let c = ev.cdf(x);
                assert!((0.0..=1.0).contains(&c) && c >= prev, "{kind:?} at {x}");
                assert!(ev.density(x) >= 0.0);
                prev = c;
            }
        }
    }

    #[test]
    fn cdf_sorted_matches_pointwise() {
        let s = PosteriorSample::from_atoms(
            vec![
                KernelParams::Gamma { shape: 80.0, mean: 1.0 },
                KernelParams::Gamma { shape: 0.6, mean: 3.0 },
            ],
            vec![4, 2],
            1.5,
            BaseHyper::default_for(KernelKind::Gamma),
        )
        .unwrap();
        let p = Predictive::new(&[s], &cfg(), &mut RandomStream::new(5)).unwrap();
        let xs: Vec<f64> = (1..=2000).map(|k| 0.005 * k as f64).collect();
        let fast = p.cdf_sorted(&xs);
        for (x, f) in xs.iter().zip(&fast) {
            assert!((p.cdf(*x) - f).abs() < 1e-12, "{x}");
        }
    }

    #[test]
    fn predictive_single_and_duplicate_samples() {
        let s = PosteriorSample::from_atoms(
            vec![KernelParams::Gaussian {
                mean: 1.0,
                variance: 0.5,
            }],
            vec![7],
            0.8,
            BaseHyper::default_for(KernelKind::Gaussian),
        )
        .unwrap();
        let st = RandomStream::new(6);
        for x in [-1.0, 0.3, 2.2] {
            let single = sample_density(&s, x, &cfg(), &mut st.clone()).unwrap();
            let pred = predictive_density(std::slice::from_ref(&s), x, &cfg(), &mut st.clone()).unwrap();
            assert!((single - pred).abs() < 1e-14);
            let two = predictive_density(&[s.clone(), s.clone()], x, &cfg(), &mut st.clone()).unwrap();
            assert!((two - single).abs() < 1e-14);
        }
    }

    #[test]
    fn predictive_is_permutation_invariant() {
        let hyper = BaseHyper::default_for(KernelKind::Gaussian);
        let a = PosteriorSample::from_atoms(
            vec![KernelParams::Gaussian {
                mean: 0.0,
                variance: 1.0,
            }],
            vec![3],
            0.5,
            hyper,
        )
        .unwrap();
        let b = PosteriorSample::from_atoms(
            vec![KernelParams::Gaussian {
                mean: 2.0,
                variance: 0.3,
            }],
            vec![3],
            1.5,
            hyper,
        )
        .unwrap();
        let st = RandomStream::new(7);
        let p1 = Predictive::new(&[a.clone(), b.clone()], &cfg(), &mut st.clone()).unwrap();
        let p2 = Predictive::new(&[b, a], &cfg(), &mut st.clone()).unwrap();
        for x in [-1.0, 0.5, 1.7, 3.0] {
            assert!((p1.density(x) - p2.density(x)).abs() < 1e-14);
            assert!((p1.cdf(x) - p2.cdf(x)).abs() < 1e-14);
        }
    }

    #[test]
    fn degenerate_variates_are_standard_normal() {
        let s = std_normal_sample(0.0);
        let mut st = RandomStream::new(8);
        let xs: Vec<f64> = (0..10_000).map(|_| draw_variate(&s, &mut st)).collect();
        let d = ks_statistic(&xs, crate::dist::normal_cdf);
        assert!(d < ks_critical_1pct(xs.len()));
    }

    #[test]
    fn beta_variates_in_unit_interval() {
        let s = PosteriorSample::from_atoms(
            vec![KernelParams::Beta { a: 2.0, b: 5.0 }],
            vec![4],
            1.0,
            BaseHyper::default_for(KernelKind::Beta),
        )
        .unwrap();
        let mut st = RandomStream::new(9);
        assert!((0..5000)
            .map(|_| draw_variate(&s, &mut st))
            .all(|x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn non_cached_mode_is_reproducible() {
        let s = PosteriorSample::from_atoms(
            vec![KernelParams::Gamma { shape: 2.0, mean: 1.0 }],
            vec![3],
            1.0,
            BaseHyper::default_for(KernelKind::Gamma),
        )
        .unwrap();
        let c = PredictiveConfig {
            n_g: 100,
            cache_g0: false,
        };
        let ev = SampleEval::new(&s, &c, &mut RandomStream::new(10)).unwrap();
        assert_eq!(ev.density(1.3), ev.density(1.3));
        assert!(ev.density(1.3) > 0.0);
    }

    #[test]
    fn grid_csv() {
        let mut buf = Vec::new();
        write_grid(&[0.0, 1.5], &[0.25, 0.5], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,value\n0,0.25\n1.5,0.5\n");
    }
}
