//! Gibbs sampler for the DPM posterior.
//!
//! Indicator updates follow Neal's Algorithm 8 with one auxiliary component
//! for the Gamma and Beta kernels and the closed-form marginal for the
//! Gaussian kernel. Component parameters are drawn exactly where conjugate and
//! otherwise by one Metropolis-Hastings step per parameter per sweep.

use std::io::Write;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dist::{sample_beta, sample_gamma};
use crate::error::{param, Result};
use crate::model::{
    beta_a_log_post, beta_b_log_post, gamma_mean_draw, gamma_shape_log_post, gaussian_log_marginal,
    gaussian_posterior_draw, sample_base_unchecked, AlphaPrior, BaseHyper, Dataset, KernelKind, KernelParams,
    LogKernel, Point, Suff,
};
use crate::predictive::PredictiveConfig;
use crate::rng::RandomStream;

/// M-H steps used to draw a component from a single-observation posterior.
pub const INIT_MH_STEPS: usize = 20;

/// One Metropolis-Hastings step with a Gamma(d, d/current) proposal.
///
/// Returns the new value and whether the proposal was accepted. A NaN target
/// value is treated as `-inf`.
pub fn mh_step<F: Fn(f64) -> f64>(target: F, current: f64, d: f64, stream: &mut RandomStream) -> (f64, bool) {
    let proposal = sample_gamma(stream, d, d / current);
    if !(proposal > 0.0) || !proposal.is_finite() {
        return (current, false);
    }
    let ratio = current / proposal;
    let log_q = (2.0 * d - 1.0) * ratio.ln() - d * (ratio - 1.0 / ratio);
    let log_a = target(proposal) - target(current) + log_q;
    if log_a.is_nan() {
        return (current, false);
    }
    if log_a >= 0.0 || stream.uniform().ln() < log_a {
        (proposal, true)
    } else {
        (current, false)
    }
}

/// Escobar-West update of the dispersion parameter.
pub fn update_alpha(alpha: f64, k0: usize, m: usize, prior: &AlphaPrior, stream: &mut RandomStream) -> f64 {
    let nu = sample_beta(stream, alpha + 1.0, m as f64);
    let rate = prior.b - nu.ln();
    let odds = (prior.a + k0 as f64 - 1.0) / (m as f64 * rate);
    let tau = odds / (1.0 + odds);
    let shape = if stream.uniform() < tau {
        prior.a + k0 as f64
    } else {
        prior.a + k0 as f64 - 1.0
    };
    sample_gamma(stream, shape, rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub burn_in: usize,
    pub thin: usize,
    pub n_samples: usize,
    pub mh_d: f64,
    pub record_trace: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            burn_in: 500,
            thin: 10,
            n_samples: 1000,
            mh_d: 2.0,
            record_trace: false,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.n_samples == 0 {
            return Err(param("chain needs thin >= 1 and n_samples >= 1"));
        }
        if !(self.mh_d > 0.0) || !self.mh_d.is_finite() {
            return Err(param(format!("mh_d must be > 0, got {}", self.mh_d)));
        }
        Ok(())
    }
}

/// Current Gibbs state. Labels are 0-based and compact.
#[derive(Debug, Clone)]
pub struct MixtureState {
    pub labels: Vec<usize>,
    pub params: Vec<KernelParams>,
    pub counts: Vec<usize>,
    pub alpha: f64,
    kernels: Vec<LogKernel>,
}

impl MixtureState {
    pub fn new(labels: Vec<usize>, params: Vec<KernelParams>, alpha: f64) -> Result<Self> {
        let mut counts = vec![0; params.len()];
        for &c in &labels {
            *counts
                .get_mut(c)
                .ok_or_else(|| param(format!("label {c} has no component")))? += 1;
        }
        if counts.contains(&0) {
            return Err(param("every component must hold at least one observation"));
        }
        let kernels = params.iter().map(KernelParams::log_kernel).collect();
        Ok(Self {
            labels,
            params,
            counts,
            alpha,
            kernels,
        })
    }

    pub fn k0(&self) -> usize {
        self.params.len()
    }

    /// Checks compact labels, active components and count consistency.
    pub fn check_invariants(&self) -> bool {
        let k = self.params.len();
        let mut counts = vec![0; k];
        for &c in &self.labels {
            if c >= k {
                return false;
            }
            counts[c] += 1;
        }
        counts == self.counts && !counts.contains(&0) && k <= self.labels.len() && self.kernels.len() == k
    }

    fn push(&mut self, psi: KernelParams) -> usize {
        self.params.push(psi);
        self.kernels.push(psi.log_kernel());
        self.counts.push(1);
        self.params.len() - 1
    }

    fn set(&mut self, j: usize, psi: KernelParams) {
        self.params[j] = psi;
        self.kernels[j] = psi.log_kernel();
    }

    /// Drops empty component `j`, relabelling the last component into its slot.
    fn remove(&mut self, j: usize) {
        let last = self.params.len() - 1;
        self.params.swap_remove(j);
        self.kernels.swap_remove(j);
        self.counts.swap_remove(j);
        if j != last {
            for c in self.labels.iter_mut() {
                if *c == last {
                    *c = j;
                }
            }
        }
    }

    fn members(&self, pts: &[Point]) -> Vec<Vec<Point>> {
        let mut out = vec![Vec::new(); self.params.len()];
        for (p, &c) in pts.iter().zip(&self.labels) {
            out[c].push(*p);
        }
        out
    }
}

/// Per-sweep acceptance tallies for the M-H steps.
#[derive(Debug, Clone, Copy, Default)]
pub struct Acceptance {
    pub proposed: usize,
    pub accepted: usize,
}

impl Acceptance {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as usize;
    }
}

/// Draws a component from the posterior given the points, starting from
/// `start` and running `steps` updates (exact for the Gaussian kernel).
fn component_from_points(
    hyper: &BaseHyper,
    pts: &[Point],
    start: Option<KernelParams>,
    steps: usize,
    d: f64,
    stream: &mut RandomStream,
) -> KernelParams {
    let suff = Suff::from_points(pts.iter());
    match *hyper {
        BaseHyper::Gaussian { .. } => gaussian_posterior_draw(hyper, &suff, stream),
        _ => {
            let mut psi = start.unwrap_or_else(|| match *hyper {
                BaseHyper::Gamma { .. } => KernelParams::Gamma {
                    shape: 1.0,
                    mean: (suff.sum / suff.n as f64).max(1e-6),
                },
                _ => KernelParams::Beta { a: 1.0, b: 1.0 },
            });
            let mut acc = Acceptance::default();
            for _ in 0..steps {
                psi = update_one(hyper, &suff, psi, d, &mut acc, stream);
            }
            psi
        }
    }
}

/// One conditional update of a Gamma or Beta component.
fn update_one(
    hyper: &BaseHyper,
    suff: &Suff,
    psi: KernelParams,
    d: f64,
    acc: &mut Acceptance,
    stream: &mut RandomStream,
) -> KernelParams {
    match (*hyper, psi) {
        (BaseHyper::Gamma { theta, r, s }, KernelParams::Gamma { shape, .. }) => {
            let mean = gamma_mean_draw(r, s, shape, suff, stream);
            let (shape, ok) = mh_step(|v| gamma_shape_log_post(theta, mean, suff, v), shape, d, stream);
            acc.record(ok);
            KernelParams::Gamma { shape, mean }
        }
        (
            BaseHyper::Beta {
                lambda0,
                lambda1,
                lambda2,
            },
            KernelParams::Beta { a, b },
        ) => {
            let (a, ok_a) = mh_step(|x| beta_a_log_post(lambda0, lambda1, b, suff, x), a, d, stream);
            acc.record(ok_a);
            let (b, ok_b) = mh_step(|x| beta_b_log_post(lambda0, lambda2, a, suff, x), b, d, stream);
            acc.record(ok_b);
            KernelParams::Beta { a, b }
        }
        (BaseHyper::Gaussian { .. }, _) => gaussian_posterior_draw(hyper, suff, stream),
        _ => unreachable!("kernel {psi:?} does not match base measure {hyper:?}"),
    }
}

fn check_inputs(data: &Dataset, hyper: &BaseHyper, prior: &AlphaPrior) -> Result<()> {
    hyper.validate()?;
    prior.validate()?;
    if hyper.kind() != data.kind() {
        return Err(param(format!(
            "dataset kernel {} does not match base measure {}",
            data.kind(),
            hyper.kind()
        )));
    }
    Ok(())
}

/// Initial state: one component per observation, each drawn from its
/// single-observation posterior.
pub fn init_state(
    data: &Dataset,
    hyper: &BaseHyper,
    prior: &AlphaPrior,
    mh_d: f64,
    stream: &mut RandomStream,
) -> Result<MixtureState> {
    check_inputs(data, hyper, prior)?;
    let alpha = sample_gamma(stream, prior.a, prior.b);
    let pts = data.points();
    let params = pts
        .iter()
        .map(|p| component_from_points(hyper, std::slice::from_ref(p), None, INIT_MH_STEPS, mh_d, stream))
        .collect();
    MixtureState::new((0..pts.len()).collect(), params, alpha)
}

/// Reassigns every observation in turn.
pub fn update_indicators(state: &mut MixtureState, data: &Dataset, hyper: &BaseHyper, stream: &mut RandomStream) {
    update_indicators_pts(state, &data.points(), hyper, stream)
}

fn update_indicators_pts(state: &mut MixtureState, pts: &[Point], hyper: &BaseHyper, stream: &mut RandomStream) {
    let m = pts.len();
    let mut logw: Vec<f64> = Vec::with_capacity(m + 1);
    let mut underflow = 0usize;
    for (i, pt) in pts.iter().enumerate() {
        let j = state.labels[i];
        state.counts[j] -= 1;
        let reuse = if state.counts[j] == 0 {
            let old = state.params[j];
            state.remove(j);
            Some(old)
        } else {
            None
        };

        let (log_new, aux) = match *hyper {
            BaseHyper::Gaussian { u0, m0, v0, sigma0 } => (gaussian_log_marginal(u0, m0, v0, sigma0, pt.x), None),
            _ => {
                let aux = reuse.unwrap_or_else(|| sample_base_unchecked(hyper, stream));
                (aux.log_kernel().eval(pt), Some(aux))
            }
        };

        logw.clear();
        let mut max = log_new;
        for lk in &state.kernels {
            let v = lk.eval(pt);
            max = max.max(v);
            logw.push(v);
        }

        let k = state.params.len();
        let choice = if !max.is_finite() || max.is_nan() {
            underflow += 1;
            k
        } else {
            let mut total = 0.0;
            for (w, &n) in logw.iter_mut().zip(&state.counts) {
                *w = n as f64 * (*w - max).exp();
                total += *w;
            }
            let w_new = state.alpha * (log_new - max).exp();
            total += w_new;
            if !(total > 0.0) || !total.is_finite() {
                underflow += 1;
                k
            } else {
                let mut u = stream.uniform() * total;
                let mut pick = k;
                for (idx, &w) in logw.iter().enumerate() {
                    if u < w {
                        pick = idx;
                        break;
                    }
                    u -= w;
                }
                pick
            }
        };

        if choice < k {
            state.labels[i] = choice;
            state.counts[choice] += 1;
        } else {
            let psi = match aux {
                Some(a) => a,
                None => component_from_points(hyper, std::slice::from_ref(pt), None, 0, 2.0, stream),
            };
            state.labels[i] = state.push(psi);
        }
    }
    if underflow > 0 {
        warn!("{underflow} indicator update(s) had no positive weight; assigned to a new component");
    }
}

/// Updates each active component's parameters given its members.
pub fn update_component_params(
    state: &mut MixtureState,
    data: &Dataset,
    hyper: &BaseHyper,
    mh_d: f64,
    stream: &mut RandomStream,
) -> Acceptance {
    update_params_pts(state, &data.points(), hyper, mh_d, stream)
}

fn update_params_pts(
    state: &mut MixtureState,
    pts: &[Point],
    hyper: &BaseHyper,
    mh_d: f64,
    stream: &mut RandomStream,
) -> Acceptance {
    let members = state.members(pts);
    let mut acc = Acceptance::default();
    for (j, group) in members.iter().enumerate() {
        let suff = Suff::from_points(group.iter());
        let psi = update_one(hyper, &suff, state.params[j], mh_d, &mut acc, stream);
        state.set(j, psi);
    }
    acc
}

/// One posterior draw of the input distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    /// Distinct component parameters.
    pub atoms: Vec<KernelParams>,
    /// Number of observations attached to each atom.
    pub counts: Vec<usize>,
    /// Component label of each observation.
    pub labels: Vec<usize>,
    pub alpha: f64,
    pub hyper: BaseHyper,
    /// M-H acceptance rate over the sweeps since the previous sample.
    pub acceptance: f64,
}

impl PosteriorSample {
    /// Builds a sample from atoms and their multiplicities. `alpha = 0` is
    /// allowed and removes the base-measure term.
    pub fn from_atoms(atoms: Vec<KernelParams>, counts: Vec<usize>, alpha: f64, hyper: BaseHyper) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != counts.len() || counts.contains(&0) {
            return Err(param("atoms and positive counts must be non-empty and of equal length"));
        }
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(param(format!("alpha must be >= 0, got {alpha}")));
        }
        for a in &atoms {
            a.validate()?;
            if a.kind() != hyper.kind() {
                return Err(param("atom kernel does not match base measure"));
            }
        }
        let labels = counts
            .iter()
            .enumerate()
            .flat_map(|(j, &n)| std::iter::repeat_n(j, n))
            .collect();
        Ok(Self {
            atoms,
            counts,
            labels,
            alpha,
            hyper,
            acceptance: f64::NAN,
        })
    }

    pub fn k0(&self) -> usize {
        self.atoms.len()
    }

    pub fn m(&self) -> usize {
        self.labels.len()
    }

    /// Parameters attached to each observation in data order.
    pub fn per_observation(&self) -> Vec<KernelParams> {
        self.labels.iter().map(|&c| self.atoms[c]).collect()
    }

    fn from_state(state: &MixtureState, hyper: &BaseHyper, acceptance: f64) -> Self {
        Self {
            atoms: state.params.clone(),
            counts: state.counts.clone(),
            labels: state.labels.clone(),
            alpha: state.alpha,
            hyper: *hyper,
            acceptance,
        }
    }
}

/// Per-sweep diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub k0: usize,
    pub alpha: f64,
    pub acceptance: f64,
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub samples: Vec<PosteriorSample>,
    pub trace: Vec<TraceRow>,
}

/// One full sweep: indicators, component parameters, dispersion.
pub fn sweep(
    state: &mut MixtureState,
    data: &Dataset,
    hyper: &BaseHyper,
    prior: &AlphaPrior,
    mh_d: f64,
    stream: &mut RandomStream,
) -> Acceptance {
    sweep_pts(state, &data.points(), hyper, prior, mh_d, stream)
}

fn sweep_pts(
    state: &mut MixtureState,
    pts: &[Point],
    hyper: &BaseHyper,
    prior: &AlphaPrior,
    mh_d: f64,
    stream: &mut RandomStream,
) -> Acceptance {
    update_indicators_pts(state, pts, hyper, stream);
    let acc = update_params_pts(state, pts, hyper, mh_d, stream);
    state.alpha = update_alpha(state.alpha, state.k0(), pts.len(), prior, stream);
    acc
}

/// Runs burn-in, then emits one sample every `thin` sweeps.
pub fn run_chain(
    data: &Dataset,
    hyper: &BaseHyper,
    prior: &AlphaPrior,
    config: &ChainConfig,
    stream: &mut RandomStream,
) -> Result<ChainOutput> {
    config.validate()?;
    let mut state = init_state(data, hyper, prior, config.mh_d, stream)?;
    let pts = data.points();
    let mut trace = Vec::new();
    let mut samples = Vec::with_capacity(config.n_samples);
    let total = config.burn_in + config.thin * config.n_samples;
    let mut window = Acceptance::default();
    for it in 1..=total {
        let acc = sweep_pts(&mut state, &pts, hyper, prior, config.mh_d, stream);
        window.proposed += acc.proposed;
        window.accepted += acc.accepted;
        debug_assert!(state.check_invariants());
        if config.record_trace {
            trace.push(TraceRow {
                iteration: it,
                k0: state.k0(),
                alpha: state.alpha,
                acceptance: acc.rate(),
            });
        }
        if it > config.burn_in && (it - config.burn_in).is_multiple_of(config.thin) {
            samples.push(PosteriorSample::from_state(&state, hyper, window.rate()));
            window = Acceptance::default();
        } else if it == config.burn_in {
            window = Acceptance::default();
        }
    }
    Ok(ChainOutput { samples, trace })
}

/// Writes the trace as CSV.
pub fn write_trace<W: Write>(trace: &[TraceRow], mut out: W) -> Result<()> {
    writeln!(out, "iteration,k0,alpha,acceptance")?;
    for r in trace {
        writeln!(out, "{},{},{},{}", r.iteration, r.k0, r.alpha, r.acceptance)?;
    }
    Ok(())
}

/// Everything needed to fit a DPM to a dataset and evaluate its predictive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub hyper: BaseHyper,
    pub prior: AlphaPrior,
    pub chain: ChainConfig,
    pub predictive: PredictiveConfig,
}

impl FitConfig {
    /// Default hyperparameters for `kind` with `n_samples` posterior draws.
    pub fn new(kind: KernelKind, n_samples: usize) -> Self {
        Self {
            hyper: BaseHyper::default_for(kind),
            prior: AlphaPrior::default(),
            chain: ChainConfig {
                n_samples,
                ..Default::default()
            },
            predictive: PredictiveConfig::default(),
        }
    }

    pub fn kind(&self) -> KernelKind {
        self.hyper.kind()
    }

    /// Runs the chain and returns its samples.
    pub fn fit(&self, data: &Dataset, stream: &mut RandomStream) -> Result<Vec<PosteriorSample>> {
        Ok(run_chain(data, &self.hyper, &self.prior, &self.chain, stream)?.samples)
    }
}
