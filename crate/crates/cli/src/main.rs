//! Command-line driver: generate experiment data, run samplers, and emit
//! diagnostics and reports.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure,
//! 3 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tmrf::distributions::NuPrior;
use tmrf::error::Error;
use tmrf::experiments::{
    build_problem, diagnose, load_generated, report, run_experiment, write_generated, write_run,
    PriorSpec, ProblemSpec, RunConfig, SamplerChoice,
};
use tmrf::gibbs::XSampler;

#[derive(Parser)]
#[command(
    name = "tmrf",
    about = "Bayesian linear inversion with Student's t Markov random field priors",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic data for one of the stock experiments.
    Generate {
        /// Experiment preset: deconv-sharp, deconv-smooth, or deblur.
        #[arg(long)]
        preset: String,
        /// Override the discretization size N (d = N in 1D, N^2 in 2D).
        #[arg(long)]
        size: Option<usize>,
        /// Seed for the synthetic noise.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also dump the dense forward matrix as A.csv (row-major, no header).
        #[arg(long)]
        dump_matrix: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a sampler on a generated data set and write chains + report files.
    Sample(SampleArgs),
    /// Compute diagnostics (ESS, R-hat, plot data) across one or more runs.
    Diagnose {
        /// Run directories produced by `sample`.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output directory for the diagnostics files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the scalar-parameter table of a stored run.
    Report {
        /// Run directory produced by `sample`.
        run: PathBuf,
    },
}

#[derive(Args)]
struct SampleArgs {
    /// Directory written by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the run.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = SamplerArg::Gibbs)]
    sampler: SamplerArg,
    #[arg(long, value_enum, default_value_t = PriorArg::StudentT)]
    prior: PriorArg,
    /// Prior on the degrees of freedom (t prior only).
    #[arg(long, value_enum, default_value_t = NuPriorArg::GammaGt1)]
    nu_prior: NuPriorArg,
    /// Kept samples per chain.
    #[arg(long, default_value_t = 20_000)]
    samples: usize,
    /// Burn-in (warm-up) iterations.
    #[arg(long, default_value_t = 2_000)]
    burnin: usize,
    /// Thinning lag (Gibbs).
    #[arg(long, default_value_t = 20)]
    thin: usize,
    /// Within-Gibbs RWM warm-up for the degrees of freedom.
    #[arg(long, default_value_t = 100)]
    nbar: usize,
    #[arg(long, default_value_t = 1)]
    chains: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Prior location of the differences.
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    /// x-block sampler (Gibbs): cholesky or cg.
    #[arg(long, value_enum)]
    x_sampler: Option<XSamplerArg>,
    /// Store the full w2 sample history (large for 2D runs).
    #[arg(long)]
    store_w2: Option<bool>,
    /// NUTS target acceptance.
    #[arg(long, default_value_t = 0.8)]
    target_accept: f64,
    /// NUTS maximum tree depth.
    #[arg(long, default_value_t = 10)]
    max_depth: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplerArg {
    Gibbs,
    Nuts,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    StudentT,
    Laplace,
    Cauchy,
}

#[derive(Clone, Copy, ValueEnum)]
enum NuPriorArg {
    /// Ga(2, 0.1), no threshold.
    Gamma,
    /// logN(1, 1).
    Lognormal,
    /// Ga(2, 0.1) thresholded at 1.
    GammaGt1,
    /// Ga(3, 0.1) thresholded at 1.
    Gamma3Gt1,
}

#[derive(Clone, Copy, ValueEnum)]
enum XSamplerArg {
    Cholesky,
    Cg,
}

impl From<NuPriorArg> for NuPrior {
    fn from(arg: NuPriorArg) -> Self {
        match arg {
            NuPriorArg::Gamma => NuPrior::gamma(),
            NuPriorArg::Lognormal => NuPrior::log_normal(),
            NuPriorArg::GammaGt1 => NuPrior::gamma_gt1(),
            NuPriorArg::Gamma3Gt1 => NuPrior::gamma3_gt1(),
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidParameter(_)
        | Error::DimensionMismatch(_)
        | Error::InvalidConfig(_) => 1,
        Error::NotPositiveDefinite { .. }
        | Error::CgDidNotConverge { .. }
        | Error::NonFinite(_) => 2,
        Error::SamplerAborted { source, .. } => exit_code_for(source),
        Error::Io { .. } => 3,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate {
            preset,
            size,
            seed,
            dump_matrix,
            out,
        } => {
            let spec = match size {
                Some(n) => ProblemSpec::preset_with_size(&preset, n)?,
                None => ProblemSpec::preset(&preset)?,
            }
            .with_seed(seed);
            let generated = build_problem(&spec)?;
            write_generated(&out, &generated, dump_matrix)?;
            println!(
                "generated {} (d = {}, m = {}) -> {}",
                spec.preset,
                generated.problem.d,
                generated.problem.m,
                out.display()
            );
            Ok(())
        }
        Command::Sample(args) => {
            let generated = load_generated(&args.data)?;
            let mut config = RunConfig::defaults_for(generated.spec.clone());
            config.sampler = match args.sampler {
                SamplerArg::Gibbs => SamplerChoice::Gibbs,
                SamplerArg::Nuts => SamplerChoice::Nuts,
            };
            config.prior = match args.prior {
                PriorArg::StudentT => PriorSpec::StudentT,
                PriorArg::Laplace => PriorSpec::Laplace,
                PriorArg::Cauchy => PriorSpec::Cauchy,
            };
            config.nu_prior = args.nu_prior.into();
            config.n_samples = args.samples;
            config.n_burnin = args.burnin;
            config.n_thin = args.thin;
            config.nbar_b = args.nbar;
            config.n_chains = args.chains;
            config.seed = args.seed;
            config.mu_location = args.mu;
            config.nuts_target_accept = args.target_accept;
            config.nuts_max_tree_depth = args.max_depth;
            if let Some(x_sampler) = args.x_sampler {
                config.x_sampler = match x_sampler {
                    XSamplerArg::Cholesky => XSampler::Cholesky,
                    XSamplerArg::Cg => XSampler::perturb_cg_default(),
                };
            }
            if let Some(store) = args.store_w2 {
                config.store_w2 = store;
            }
            config.validate()?;
            let output = run_experiment(&generated, &config)?;
            write_run(&args.out, &config, &output)?;
            println!("run written to {}", args.out.display());
            for row in &output.table {
                println!(
                    "{:<12} mean {:>13.6e}  std {:>13.6e}  n_eff {:>8.0}",
                    row.parameter, row.mean, row.std, row.n_eff
                );
            }
            if let Some(eps) = output.summary.eps_rel {
                println!("{:<12} {:>18.6e}", "eps_rel", eps);
            }
            Ok(())
        }
        Command::Diagnose { runs, out } => {
            diagnose(&runs, &out)?;
            println!("diagnostics written to {}", out.display());
            Ok(())
        }
        Command::Report { run: run_dir } => {
            print!("{}", report(&run_dir)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code_for(&err))
        }
    }
}
