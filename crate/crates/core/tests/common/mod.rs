//! Numerical oracles shared by unit and integration tests.
#![allow(dead_code)]

/// Adaptive Simpson quadrature on a finite interval.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    // split into panels first so narrow peaks are not skipped
    let panels = 64;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let lo = a + k as f64 * h;
            let hi = lo + h;
            let mid = 0.5 * (lo + hi);
            let (flo, fmid, fhi) = (f(lo), f(mid), f(hi));
            let whole = h / 6.0 * (flo + 4.0 * fmid + fhi);
            simpson(f, lo, hi, flo, fmid, fhi, whole, tol / panels as f64, 40)
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Integral over `[a, ∞)` through the map `x = a + t/(1-t)`.
///
/// Endpoints are nudged inward so integrable singularities at `a` are not
/// evaluated.
pub fn integrate_half_line(f: &dyn Fn(f64) -> f64, a: f64, tol: f64) -> f64 {
    let g = |t: f64| {
        let x = a + t / (1.0 - t);
        let v = f(x) / ((1.0 - t) * (1.0 - t));
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    // a singular endpoint is handled by an extra geometric refinement near 0
    let mut total = 0.0;
    let mut lo = 1e-14;
    let mut hi = 1e-12;
    while hi < 1e-3 {
        total += integrate(&g, lo, hi, tol * 1e-3);
        lo = hi;
        hi *= 10.0;
    }
    total + integrate(&g, lo, 1.0 - 1e-14, tol)
}

/// One-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.partial_cmp(q).unwrap());
    y.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / x.len() as f64 - j as f64 / y.len() as f64).abs());
    }
    d
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Asymptotic 1% critical value of the two-sample KS statistic.
pub fn ks_two_sample_critical_1pct(n: usize, m: usize) -> f64 {
    1.628 * ((n + m) as f64 / (n * m) as f64).sqrt()
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Geweke z-score between the first 10% and last 50% of a sequence, using
/// batch-means standard errors.
pub fn geweke_z(xs: &[f64]) -> f64 {
    let n = xs.len();
    let a = &xs[..n / 10];
    let b = &xs[n / 2..];
    let (ma, sa) = batch_mean_se(a);
    let (mb, sb) = batch_mean_se(b);
    (ma - mb) / (sa * sa + sb * sb).sqrt()
}

fn batch_mean_se(xs: &[f64]) -> (f64, f64) {
    let batches = 20;
    let size = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|k| xs[k * size..(k + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    mean_se(&means)
}

/// Pearson chi-square statistic for observed counts against expected
/// probabilities.
pub fn chi_square(observed: &[usize], probs: &[f64]) -> f64 {
    let n: usize = observed.iter().sum();
    observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum()
}

/// Upper 1% quantile of the chi-square distribution, Wilson-Hilferty.
pub fn chi_square_critical_1pct(df: usize) -> f64 {
    let k = df as f64;
    let z = 2.326_347_874;
    let c = 2.0 / (9.0 * k);
    k * (1.0 - c + z * c.sqrt()).powi(3)
}
