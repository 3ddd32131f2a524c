//! Macro-replicated experiment studies with CSV and provenance output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::FitConfig;
use crate::metrics::{ad_distance, cv_loglik, ks_distance};
use crate::model::{AlphaPrior, Dataset, KernelKind};
use crate::predictive::Predictive;
use crate::queue::{QueueConfig, QueueMetric};
use crate::rng::RandomStream;
use crate::truth::{generate_truth, mg1_setting, TrueDist};
use crate::uq::{
    pk_means, probability_content, run_bootstrap_uq, run_uq, run_uq_with_samples, QueueSimulator, UQConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    /// KS and AD distances of the posterior predictive.
    DensityTable,
    /// Marginal distribution of the number of active components.
    K0Table,
    /// M/G/1 credible intervals against the direct bootstrap.
    Mg1Table,
    /// M/M/1 mean response with probability content.
    Mm1Table,
    /// Density table over dispersion priors.
    Sensitivity,
    /// Cross-validated log-likelihood.
    CrossVal,
}

impl std::str::FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "density_table" | "density-eval" => Study::DensityTable,
            "k0_table" | "k0" => Study::K0Table,
            "mg1_table" | "uq" => Study::Mg1Table,
            "mm1_table" | "mm1" => Study::Mm1Table,
            "sensitivity" => Study::Sensitivity,
            "cross_val" | "cv" => Study::CrossVal,
            other => return Err(Error::Config(format!("unknown study `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dpm,
    Bootstrap,
}

/// Full description of one experiment. Every field has a default and can be
/// set from a `key=value` config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub study: Study,
    pub seed: u64,
    pub n_macro: usize,
    /// Posterior samples (and bootstrap resamples) for UQ studies.
    pub b: usize,
    /// Posterior samples for density, K0 and CV studies.
    pub b0: usize,
    /// Replications per sample.
    pub n: usize,
    pub m: Vec<usize>,
    /// Generator ids; empty selects the study default.
    pub examples: Vec<String>,
    /// Kernel; `None` selects the per-example default.
    pub kernel: Option<KernelKind>,
    pub alpha_star: f64,
    pub burn_in: usize,
    pub thin: usize,
    pub mh_d: f64,
    pub n_g: usize,
    pub grid_n: usize,
    pub quad_n: usize,
    pub folds: usize,
    pub alpha_priors: Vec<(f64, f64)>,
    /// Arrival rates of the M/M/1 study (service rate 1).
    pub lambdas: Vec<f64>,
    pub n_mc: usize,
    pub warmup: usize,
    pub runlength: usize,
    pub methods: Vec<Method>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            study: Study::DensityTable,
            seed: 1,
            n_macro: 50,
            b: 200,
            b0: 100,
            n: 100,
            m: vec![50, 500],
            examples: Vec::new(),
            kernel: None,
            alpha_star: 0.05,
            burn_in: 500,
            thin: 10,
            mh_d: 2.0,
            n_g: 1000,
            grid_n: 2000,
            quad_n: 2000,
            folds: 5,
            alpha_priors: vec![(0.5, 0.5), (1.0, 1.0), (4.0, 4.0), (2.0, 4.0)],
            lambdas: vec![0.5, 0.7, 0.9],
            n_mc: 1000,
            warmup: 1000,
            runlength: 1000,
            methods: vec![Method::Dpm, Method::Bootstrap],
        }
    }
}

fn list<T>(v: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(f).collect()
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

impl ExperimentSpec {
    pub fn for_study(study: Study) -> Self {
        Self {
            study,
            ..Default::default()
        }
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "study" => self.study = v.parse()?,
            "seed" => self.seed = num(key, v)?,
            "n_macro" | "scale_n" => self.n_macro = num(key, v)?,
            "b" => self.b = num(key, v)?,
            "b0" => self.b0 = num(key, v)?,
            "n" => self.n = num(key, v)?,
            "m" => self.m = list(v, |s| num(key, s))?,
            "examples" => self.examples = list(v, |s| Ok(s.to_string()))?,
            "kernel" => self.kernel = if v == "auto" { None } else { Some(v.parse()?) },
            "alpha_star" => self.alpha_star = num(key, v)?,
            "burn_in" => self.burn_in = num(key, v)?,
            "thin" => self.thin = num(key, v)?,
            "mh_d" => self.mh_d = num(key, v)?,
            "n_g" => self.n_g = num(key, v)?,
            "grid_n" => self.grid_n = num(key, v)?,
            "quad_n" => self.quad_n = num(key, v)?,
            "folds" => self.folds = num(key, v)?,
            "alpha_priors" => {
                self.alpha_priors = list(v, |s| {
                    let (a, b) = s
                        .split_once(':')
                        .ok_or_else(|| Error::Config(format!("alpha prior `{s}` must be a:b")))?;
                    Ok((num(key, a)?, num(key, b)?))
                })?
            }
            "lambdas" => self.lambdas = list(v, |s| num(key, s))?,
            "n_mc" => self.n_mc = num(key, v)?,
            "warmup" => self.warmup = num(key, v)?,
            "runlength" => self.runlength = num(key, v)?,
            "methods" => {
                self.methods = list(v, |s| match s {
                    "dpm" => Ok(Method::Dpm),
                    "bootstrap" => Ok(Method::Bootstrap),
                    other => Err(Error::Config(format!("unknown method `{other}`"))),
                })?
            }
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` file; blank lines and `#` comments are skipped.
    pub fn apply_config(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got `{body}`"),
            })?;
            self.set(k, v).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let scales = [
            ("n_macro", self.n_macro),
            ("b", self.b),
            ("b0", self.b0),
            ("n", self.n),
            ("thin", self.thin),
            ("n_g", self.n_g),
            ("n_mc", self.n_mc),
            ("runlength", self.runlength),
        ];
        for (k, v) in scales {
            if v == 0 {
                return Err(Error::Config(format!("`{k}` must be >= 1")));
            }
        }
        if self.m.is_empty() || self.m.contains(&0) {
            return Err(Error::Config("`m` must list sizes >= 1".into()));
        }
        if matches!(self.study, Study::Mg1Table | Study::Mm1Table) {
            self.uq_config().validate()?;
        }
        Ok(())
    }

    fn examples_or_default(&self) -> Vec<String> {
        if !self.examples.is_empty() {
            return self.examples.clone();
        }
        let d = match self.study {
            Study::K0Table => "k0",
            Study::Mg1Table => "lognormal",
            _ => "5",
        };
        vec![d.to_string()]
    }

    fn fit_config(&self, kind: KernelKind, n_samples: usize) -> FitConfig {
        let mut f = FitConfig::new(kind, n_samples);
        f.chain.burn_in = self.burn_in;
        f.chain.thin = self.thin;
        f.chain.mh_d = self.mh_d;
        f.predictive.n_g = self.n_g;
        f
    }

    fn uq_config(&self) -> UQConfig {
        UQConfig {
            b: self.b,
            n: self.n,
            alpha_star: self.alpha_star,
            n_mc: self.n_mc,
            ..Default::default()
        }
    }
}

/// Kernel used for a generator id when none is given: Gaussian for supports
/// on the whole line, Beta for the unit-interval example, Gamma otherwise.
pub fn default_kernel(example: &str) -> KernelKind {
    match example {
        "6" | "k0" => KernelKind::Gaussian,
        "7" => KernelKind::Beta,
        _ => KernelKind::Gamma,
    }
}

/// Mean and 95% half-width of one statistic over macro-replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub name: String,
    pub mean: f64,
    pub half_width: f64,
    pub count: usize,
}

impl StatSummary {
    pub fn from_values(name: &str, xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let half_width = if xs.len() > 1 && mean.is_finite() {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            1.96 * var.sqrt() / n.sqrt()
        } else {
            0.0
        };
        Self {
            name: name.to_string(),
            mean,
            half_width,
            count: xs.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub keys: Vec<(String, String)>,
    pub stats: Vec<StatSummary>,
}

impl SummaryRow {
    pub fn key(&self, k: &str) -> Option<&str> {
        self.keys.iter().find(|(n, _)| n == k).map(|(_, v)| v.as_str())
    }

    pub fn stat(&self, s: &str) -> Option<&StatSummary> {
        self.stats.iter().find(|x| x.name == s)
    }
}

/// Per-cell summaries of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroSummary {
    pub study: Study,
    pub rows: Vec<SummaryRow>,
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

impl MacroSummary {
    /// Table-shaped CSV: key columns, then `<stat>_mean,<stat>_hw` pairs and
    /// the macro-rep count.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let Some(first) = self.rows.first() else {
            return out;
        };
        let mut header: Vec<String> = first.keys.iter().map(|(k, _)| k.clone()).collect();
        for s in &first.stats {
            header.push(format!("{}_mean", s.name));
            header.push(format!("{}_hw", s.name));
        }
        header.push("n_macro".into());
        let _ = writeln!(out, "{}", header.join(","));
        for row in &self.rows {
            let mut cells: Vec<String> = row.keys.iter().map(|(_, v)| v.clone()).collect();
            for s in &row.stats {
                cells.push(fmt_num(s.mean));
                cells.push(fmt_num(s.half_width));
            }
            cells.push(row.stats.first().map_or(0, |s| s.count).to_string());
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

type CellFn = Box<dyn Fn(&mut RandomStream) -> Result<Vec<(String, f64)>> + Send + Sync>;

struct Cell {
    keys: Vec<(String, String)>,
    eval: CellFn,
}

fn key(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn density_cell(spec: &ExperimentSpec, ex: &str, m: usize, prior: Option<(f64, f64)>) -> Result<Cell> {
    let truth = generate_truth(ex)?;
    let kind = spec.kernel.unwrap_or_else(|| default_kernel(ex));
    let mut fit = spec.fit_config(kind, spec.b0);
    let mut keys = vec![key("example", ex), key("kernel", kind), key("m", m)];
    if let Some((a, b)) = prior {
        fit.prior = AlphaPrior::new(a, b)?;
        keys.insert(0, key("alpha_b", b));
        keys.insert(0, key("alpha_a", a));
    }
    let (grid_n, quad_n) = (spec.grid_n, spec.quad_n);
    Ok(Cell {
        keys,
        eval: Box::new(move |st| {
            let data = Dataset::new(truth.sample_n(m, st), kind)?;
            let samples = fit.fit(&data, st)?;
            let pred = Predictive::new(&samples, &fit.predictive, st)?;
            Ok(vec![
                ("D".into(), ks_distance(&truth, &pred, grid_n)?),
                ("A".into(), ad_distance(&truth, &pred, m, quad_n)?),
            ])
        }),
    })
}

/// Number of K0 mass points reported individually.
const K0_COLUMNS: usize = 10;

fn k0_cell(spec: &ExperimentSpec, ex: &str, m: usize) -> Result<Cell> {
    let truth = generate_truth(ex)?;
    let kind = spec.kernel.unwrap_or_else(|| default_kernel(ex));
    let fit = spec.fit_config(kind, spec.b0);
    Ok(Cell {
        keys: vec![key("example", ex), key("kernel", kind), key("m", m)],
        eval: Box::new(move |st| {
            let data = Dataset::new(truth.sample_n(m, st), kind)?;
            let samples = fit.fit(&data, st)?;
            let b0 = samples.len() as f64;
            let mut freq = vec![0.0; K0_COLUMNS + 1];
            for s in &samples {
                freq[(s.k0() - 1).min(K0_COLUMNS)] += 1.0 / b0;
            }
            Ok(freq
                .into_iter()
                .enumerate()
                .map(|(k, p)| {
                    let name = if k < K0_COLUMNS {
                        format!("p{}", k + 1)
                    } else {
                        format!("p_gt{K0_COLUMNS}")
                    };
                    (name, p)
                })
                .collect())
        }),
    })
}

fn mg1_cell(spec: &ExperimentSpec, ex: &str, m: usize) -> Result<Cell> {
    let setting = mg1_setting(ex)?;
    let kind = spec.kernel.unwrap_or(KernelKind::Gamma);
    let fit = spec.fit_config(kind, spec.b);
    let queue = QueueConfig {
        arrival_rate: setting.arrival_rate,
        warmup: spec.warmup,
        runlength: spec.runlength,
        metric: QueueMetric::ThresholdProb(setting.threshold),
    };
    let uq = spec.uq_config();
    let methods = spec.methods.clone();
    Ok(Cell {
        keys: vec![key("example", ex), key("m", m), key("n", spec.n), key("b", spec.b)],
        eval: Box::new(move |st| {
            let raw = setting.service.sample_n(m, st);
            let mut out = Vec::new();
            let covers = |lo: f64, hi: f64| (lo <= setting.mu_c && setting.mu_c <= hi) as u8 as f64;
            if methods.contains(&Method::Dpm) {
                let data = Dataset::new(raw.clone(), kind)?;
                let r = run_uq(&data, &fit, &queue, &uq, &mut st.substream(0))?;
                out.push(("err_dpm".into(), (r.point - setting.mu_c).abs()));
                out.push(("width_dpm".into(), r.width()));
                out.push(("cover_dpm".into(), covers(r.lower, r.upper)));
                out.push(("ratio_dpm".into(), r.ratio.unwrap_or(f64::NAN)));
            }
            if methods.contains(&Method::Bootstrap) {
                let r = run_bootstrap_uq(&raw, &queue, &uq, &mut st.substream(1))?;
                out.push(("err_emp".into(), (r.point - setting.mu_c).abs()));
                out.push(("width_emp".into(), r.width()));
                out.push(("cover_emp".into(), covers(r.lower, r.upper)));
            }
            Ok(out)
        }),
    })
}

fn mm1_cell(spec: &ExperimentSpec, lambda: f64, m: usize) -> Result<Cell> {
    let kind = spec.kernel.unwrap_or(KernelKind::Gamma);
    let fit = spec.fit_config(kind, spec.b);
    let queue = QueueConfig {
        arrival_rate: lambda,
        warmup: spec.warmup,
        runlength: spec.runlength,
        metric: QueueMetric::MeanTimeInSystem,
    };
    queue.validate()?;
    let uq = spec.uq_config();
    let truth = TrueDist::Exponential { rate: 1.0 };
    let mu_c = 1.0 / (1.0 - lambda);
    Ok(Cell {
        keys: vec![key("rho", lambda), key("m", m), key("n", spec.n), key("b", spec.b)],
        eval: Box::new(move |st| {
            let data = Dataset::new(truth.sample_n(m, st), kind)?;
            let samples = fit.fit(&data, st)?;
            let root = RandomStream::new(st.next_seed());
            let sim = QueueSimulator { queue, n_mc: uq.n_mc };
            let r = run_uq_with_samples(&samples, &sim, &uq, &root)?;
            let mus = pk_means(&samples, lambda, uq.n_mc, &root)?;
            Ok(vec![
                ("pc".into(), probability_content(r.cri(), &mus)?),
                ("err".into(), (r.point - mu_c).abs()),
                ("width".into(), r.width()),
                ("unstable".into(), r.unstable_fraction),
            ])
        }),
    })
}

fn cv_cell(spec: &ExperimentSpec, ex: &str, m: usize) -> Result<Cell> {
    let truth = generate_truth(ex)?;
    let kind = spec.kernel.unwrap_or_else(|| default_kernel(ex));
    let fit = spec.fit_config(kind, spec.b0);
    let folds = spec.folds;
    Ok(Cell {
        keys: vec![
            key("example", ex),
            key("kernel", kind),
            key("m", m),
            key("folds", folds),
        ],
        eval: Box::new(move |st| {
            let data = Dataset::new(truth.sample_n(m, st), kind)?;
            Ok(vec![("cv_loglik".into(), cv_loglik(&data, folds, &fit, st)?.mean)])
        }),
    })
}

fn cells(spec: &ExperimentSpec) -> Result<Vec<Cell>> {
    let mut out = Vec::new();
    let exs = spec.examples_or_default();
    match spec.study {
        Study::DensityTable => {
            for ex in &exs {
                for &m in &spec.m {
                    out.push(density_cell(spec, ex, m, None)?);
                }
            }
        }
        Study::Sensitivity => {
            for &p in &spec.alpha_priors {
                for ex in &exs {
                    for &m in &spec.m {
                        out.push(density_cell(spec, ex, m, Some(p))?);
                    }
                }
            }
        }
        Study::K0Table => {
            for ex in &exs {
                for &m in &spec.m {
                    out.push(k0_cell(spec, ex, m)?);
                }
            }
        }
        Study::Mg1Table => {
            for ex in &exs {
                for &m in &spec.m {
                    out.push(mg1_cell(spec, ex, m)?);
                }
            }
        }
        Study::Mm1Table => {
            for &l in &spec.lambdas {
                for &m in &spec.m {
                    out.push(mm1_cell(spec, l, m)?);
                }
            }
        }
        Study::CrossVal => {
            for ex in &exs {
                for &m in &spec.m {
                    out.push(cv_cell(spec, ex, m)?);
                }
            }
        }
    }
    Ok(out)
}

/// Runs every cell for `n_macro` macro-replications. Macro-rep `r` of cell
/// `c` uses substream `(seed, c, r)`, so results do not depend on scheduling.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<MacroSummary> {
    spec.validate()?;
    let cells = cells(spec)?;
    let root = RandomStream::new(spec.seed);
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.n_macro).map(move |r| (c, r)))
        .collect();
    let results = tasks
        .par_iter()
        .map(|&(c, r)| (cells[c].eval)(&mut root.substream(c as u64).substream(r as u64)))
        .collect::<Result<Vec<_>>>()?;
    let rows = cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let reps = &results[c * spec.n_macro..(c + 1) * spec.n_macro];
            let stats = reps[0]
                .iter()
                .enumerate()
                .map(|(j, (name, _))| {
                    let xs: Vec<f64> = reps.iter().map(|rep| rep[j].1).collect();
                    StatSummary::from_values(name, &xs)
                })
                .collect();
            SummaryRow {
                keys: cell.keys.clone(),
                stats,
            }
        })
        .collect();
    Ok(MacroSummary {
        study: spec.study,
        rows,
    })
}

/// Build and version information recorded next to every CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub git: String,
    pub seed: u64,
    pub n_macro: usize,
    pub b: usize,
    pub n: usize,
    pub m: Vec<usize>,
    pub spec: ExperimentSpec,
}

impl Provenance {
    pub fn new(spec: &ExperimentSpec) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            git: option_env!("DPMUQ_GIT_DESCRIBE").unwrap_or("unknown").into(),
            seed: spec.seed,
            n_macro: spec.n_macro,
            b: spec.b,
            n: spec.n,
            m: spec.m.clone(),
            spec: spec.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// `results.csv` -> `results.provenance.json`.
pub fn provenance_path(csv: &Path) -> PathBuf {
    csv.with_extension("provenance.json")
}

/// Runs the experiment and writes the CSV plus its provenance JSON.
pub fn run_and_write(spec: &ExperimentSpec, csv: &Path) -> Result<MacroSummary> {
    let summary = run_experiment(spec)?;
    std::fs::write(csv, summary.to_csv())?;
    std::fs::write(
        provenance_path(csv),
        serde_json::to_string_pretty(&Provenance::new(spec))?,
    )?;
    Ok(summary)
}
