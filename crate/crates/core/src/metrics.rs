//! Goodness-of-fit distances, cross-validated log-likelihood and the
//! marginal distribution of the number of active components.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::gibbs::{run_chain, FitConfig};
use crate::model::Dataset;
use crate::predictive::Predictive;
use crate::rng::RandomStream;
use crate::truth::TrueDist;

/// A fitted CDF that can be evaluated on an ascending grid.
pub trait CdfEval {
    fn cdf_sorted(&self, xs: &[f64]) -> Vec<f64>;
}

impl<F: Fn(f64) -> f64> CdfEval for F {
    fn cdf_sorted(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self(x)).collect()
    }
}

impl CdfEval for Predictive {
    fn cdf_sorted(&self, xs: &[f64]) -> Vec<f64> {
        Predictive::cdf_sorted(self, xs)
    }
}

/// Kolmogorov-Smirnov distance on the truth-quantile grid
/// `u = k/(grid_n+1)`, `k = 1..=grid_n`.
pub fn ks_distance(truth: &TrueDist, fitted: &impl CdfEval, grid_n: usize) -> Result<f64> {
    if grid_n < 100 {
        return Err(param(format!("grid_n must be >= 100, got {grid_n}")));
    }
    let us: Vec<f64> = (1..=grid_n).map(|k| k as f64 / (grid_n + 1) as f64).collect();
    let xs: Vec<f64> = us.iter().map(|&u| truth.inverse_cdf(u)).collect();
    let fhat = fitted.cdf_sorted(&xs);
    Ok(xs
        .iter()
        .zip(&fhat)
        .map(|(&x, f)| (truth.cdf(x) - f).abs())
        .fold(0.0, f64::max))
}

/// Anderson-Darling distance `sqrt(m ∫ (F - F̂)² / (F(1-F)) dF)`, computed in
/// `u = F(x)` by the midpoint rule on `(ε, 1-ε)` with `ε = 1/(10 quad_n)`.
pub fn ad_distance(truth: &TrueDist, fitted: &impl CdfEval, m: usize, quad_n: usize) -> Result<f64> {
    if quad_n < 100 {
        return Err(param(format!("quad_n must be >= 100, got {quad_n}")));
    }
    let eps = 1.0 / (10.0 * quad_n as f64);
    let du = (1.0 - 2.0 * eps) / quad_n as f64;
    let us: Vec<f64> = (0..quad_n).map(|k| eps + (k as f64 + 0.5) * du).collect();
    let xs: Vec<f64> = us.iter().map(|&u| truth.inverse_cdf(u)).collect();
    let fhat = fitted.cdf_sorted(&xs);
    let a2: f64 = us
        .iter()
        .zip(&fhat)
        .map(|(&u, f)| (u - f).powi(2) / (u * (1.0 - u)) * du)
        .sum::<f64>()
        * m as f64;
    Ok(a2.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Validation log-likelihood of each fold.
    pub per_fold: Vec<f64>,
    pub mean: f64,
}

/// Random balanced fold assignment.
pub fn assign_folds(m: usize, folds: usize, stream: &mut RandomStream) -> Vec<usize> {
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(stream);
    let mut fold = vec![0; m];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

/// Cross-validated predictive log-likelihood with given fold labels.
pub fn cv_loglik_with_folds(
    data: &Dataset,
    fold_of: &[usize],
    folds: usize,
    fit: &FitConfig,
    stream: &RandomStream,
) -> Result<CvResult> {
    let per_fold = (0..folds)
        .into_par_iter()
        .map(|k| {
            let mut st = stream.substream(k as u64);
            let (mut train, mut valid) = (Vec::new(), Vec::new());
            for (&x, &f) in data.values().iter().zip(fold_of) {
                if f == k {
                    valid.push(x)
                } else {
                    train.push(x)
                }
            }
            let train = Dataset::new(train, data.kind())?;
            let samples = fit.fit(&train, &mut st)?;
            let pred = Predictive::new(&samples, &fit.predictive, &mut st)?;
            valid
                .iter()
                .map(|&x| {
                    if data.kind().in_support(x) {
                        Ok(pred.density(x).ln())
                    } else {
                        Err(Error::Support {
                            kind: data.kind(),
                            value: x,
                        })
                    }
                })
                .sum::<Result<f64>>()
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_fold.iter().sum::<f64>() / folds as f64;
    Ok(CvResult { per_fold, mean })
}

/// Cross-validated predictive log-likelihood over random folds.
pub fn cv_loglik(data: &Dataset, folds: usize, fit: &FitConfig, stream: &mut RandomStream) -> Result<CvResult> {
    if folds < 2 || data.len() < folds {
        return Err(param(format!(
            "need folds >= 2 and m >= folds, got folds={folds}, m={}",
            data.len()
        )));
    }
    let fold_of = assign_folds(data.len(), folds, stream);
    let root = RandomStream::new(stream.next_seed());
    cv_loglik_with_folds(data, &fold_of, folds, fit, &root)
}

/// Pooled relative frequencies of K0 over macro-replications; entry `k-1`
/// holds the mass at `K0 = k`, for `k = 1..=m`.
pub fn marginal_k0(
    generator: &TrueDist,
    m: usize,
    n_macro: usize,
    b0: usize,
    fit: &FitConfig,
    stream: &mut RandomStream,
) -> Result<Vec<f64>> {
    if n_macro == 0 || b0 == 0 || m == 0 {
        return Err(param("marginal_k0 needs m, n_macro and b0 >= 1"));
    }
    let root = RandomStream::new(stream.next_seed());
    let mut chain = fit.chain;
    chain.n_samples = b0;
    let counts = (0..n_macro)
        .into_par_iter()
        .map(|r| {
            let mut st = root.substream(r as u64);
            let data = Dataset::new(generator.sample_n(m, &mut st), fit.kind())?;
            let out = run_chain(&data, &fit.hyper, &fit.prior, &chain, &mut st)?;
            let mut c = vec![0usize; m];
            for s in &out.samples {
                c[s.k0() - 1] += 1;
            }
            Ok(c)
        })
        .collect::<Result<Vec<Vec<usize>>>>()?;
    let total = (n_macro * b0) as f64;
    Ok((0..m)
        .map(|k| counts.iter().map(|c| c[k]).sum::<usize>() as f64 / total)
        .collect())
}
