use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use dpmuq::experiment::{run_and_write, ExperimentSpec, Method, Provenance, Study};
use dpmuq::gibbs::{run_chain, write_trace, FitConfig};
use dpmuq::model::{Dataset, KernelKind};
use dpmuq::{Error, RandomStream, Result};

#[derive(Parser)]
#[command(
    name = "dpmuq",
    version,
    about = "DPM input models and simulation uncertainty quantification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Gibbs sampler on a data file and dump the posterior samples.
    Fit(FitArgs),
    /// KS/AD distance table of the posterior predictive.
    DensityEval(Common),
    /// Distribution of the number of active components.
    K0(Common),
    /// M/G/1 credible intervals, DPM and bootstrap.
    Uq(Common),
    /// M/M/1 mean response time with probability content.
    Mm1(Common),
    /// M/G/1 bootstrap confidence intervals only.
    Bootstrap(Common),
    /// Cross-validated predictive log-likelihood.
    Cv(Common),
    /// Density table across dispersion priors.
    Sensitivity(Common),
    /// Re-run an experiment from its provenance JSON.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output CSV; provenance goes next to it as `.provenance.json`.
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of macro-replications.
    #[arg(long = "scale-N")]
    scale_n: Option<usize>,
    /// Posterior samples or bootstrap resamples.
    #[arg(long = "B")]
    b: Option<usize>,
    /// Simulation replications per sample.
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated sample sizes.
    #[arg(long)]
    m: Option<String>,
    /// gamma, gauss or beta.
    #[arg(long)]
    kernel: Option<KernelKind>,
    #[arg(long = "alpha-star")]
    alpha_star: Option<f64>,
    /// Comma-separated generator ids.
    #[arg(long)]
    examples: Option<String>,
    /// Extra key=value overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct FitArgs {
    /// Whitespace-separated observations; `#` starts a comment.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "gamma")]
    kernel: KernelKind,
    #[arg(long = "B", default_value_t = 100)]
    b: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "posterior.json")]
    out: PathBuf,
    /// Optional per-sweep trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long = "burn-in")]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
}

#[derive(Args)]
struct ReplayArgs {
    provenance: PathBuf,
    #[arg(long, default_value = "replay.csv")]
    out: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
}

fn build_spec(study: Study, c: &Common) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::for_study(study);
    if let Some(path) = &c.config {
        spec.apply_config(&std::fs::read_to_string(path)?)?;
    }
    spec.study = study;
    if let Some(v) = c.seed {
        spec.seed = v;
    }
    if let Some(v) = c.scale_n {
        spec.n_macro = v;
    }
    if let Some(v) = c.b {
        spec.b = v;
    }
    if let Some(v) = c.n {
        spec.n = v;
    }
    if let Some(v) = &c.m {
        spec.set("m", v)?;
    }
    if let Some(v) = c.kernel {
        spec.kernel = Some(v);
    }
    if let Some(v) = c.alpha_star {
        spec.alpha_star = v;
    }
    if let Some(v) = &c.examples {
        spec.set("examples", v)?;
    }
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        spec.set(k, v)?;
    }
    Ok(spec)
}

fn init_pool(jobs: Option<usize>) -> Result<()> {
    if let Some(j) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn run_study(spec: &ExperimentSpec, jobs: Option<usize>, out: &Path) -> Result<()> {
    init_pool(jobs)?;
    info!("running {:?} with seed {}", spec.study, spec.seed);
    let summary = run_and_write(spec, out)?;
    info!("wrote {} rows to {}", summary.rows.len(), out.display());
    Ok(())
}

fn fit(a: &FitArgs) -> Result<()> {
    let data = Dataset::load(&a.data, a.kernel)?;
    let mut cfg = FitConfig::new(a.kernel, a.b);
    if let Some(v) = a.burn_in {
        cfg.chain.burn_in = v;
    }
    if let Some(v) = a.thin {
        cfg.chain.thin = v;
    }
    cfg.chain.record_trace = a.trace.is_some();
    let out = run_chain(
        &data,
        &cfg.hyper,
        &cfg.prior,
        &cfg.chain,
        &mut RandomStream::new(a.seed),
    )?;
    serde_json::to_writer(BufWriter::new(File::create(&a.out)?), &out.samples)?;
    if let Some(path) = &a.trace {
        write_trace(&out.trace, BufWriter::new(File::create(path)?))?;
    }
    info!("wrote {} posterior samples to {}", out.samples.len(), a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let (study, common) = match &cli.command {
        Command::Fit(a) => return fit(a),
        Command::Replay(a) => {
            let p = Provenance::load(&a.provenance)?;
            return run_study(&p.spec, a.jobs, &a.out);
        }
        Command::DensityEval(c) => (Study::DensityTable, c),
        Command::K0(c) => (Study::K0Table, c),
        Command::Uq(c) => (Study::Mg1Table, c),
        Command::Mm1(c) => (Study::Mm1Table, c),
        Command::Cv(c) => (Study::CrossVal, c),
        Command::Sensitivity(c) => (Study::Sensitivity, c),
        Command::Bootstrap(c) => {
            let mut spec = build_spec(Study::Mg1Table, c)?;
            spec.methods = vec![Method::Bootstrap];
            return run_study(&spec, c.jobs, &c.out);
        }
    };
    let spec = build_spec(study, common)?;
    run_study(&spec, common.jobs, &common.out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
