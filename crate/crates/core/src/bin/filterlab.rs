use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use filterlab::harness::{self, FilterKind, InitNoise, NoiseKind, Scenario, ScenarioConfig};
use filterlab::nvmf;
use filterlab::specfun::RngStream;
use nalgebra::DMatrix;

#[derive(Parser)]
#[command(name = "filterlab", version, about = "Robust filtering benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo benchmark and write CSV results.
    Run(RunArgs),
    /// Fit the inverse-gamma mixing density to the outlier design.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON scenario file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    noise: Option<NoiseKind>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    updates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of kf,nvmf,pdaf,kfor.
    #[arg(long, value_delimiter = ',')]
    filters: Option<Vec<FilterKind>>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long = "max-iters")]
    max_iters: Option<usize>,
    #[arg(long = "fixed-iters")]
    fixed_iters: bool,
    #[arg(long = "k-star")]
    k_star: Option<usize>,
    #[arg(long, requires = "beta")]
    alpha: Option<f64>,
    #[arg(long, requires = "alpha")]
    beta: Option<f64>,
    /// Noise for the two initialization measurements: regime, inlier or gaussian.
    #[arg(long = "init-noise")]
    init_noise: Option<InitNoise>,
    /// Same as `--init-noise gaussian`.
    #[arg(long = "clean-init", conflicts_with = "init_noise")]
    clean_init: bool,
    /// Lost-track threshold as a multiple of the Kalman squared-error envelope.
    #[arg(long = "divergence-margin")]
    divergence_margin: Option<f64>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long = "r-out", default_value_t = 1e4)]
    r_out: f64,
    #[arg(long, default_value_t = 0.01)]
    rho: f64,
    #[arg(long = "r-regular", default_value_t = 100.0)]
    r_regular: f64,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run(args: RunArgs) -> filterlab::Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ScenarioConfig::from_json_file(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(v) = args.noise {
        cfg.noise = v;
    }
    if let Some(v) = args.trials {
        cfg.trials = v;
    }
    if let Some(v) = args.updates {
        cfg.updates = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.filters {
        cfg.filters = v;
    }
    if let Some(v) = args.epsilon {
        cfg.nvmf.epsilon = v;
    }
    if let Some(v) = args.max_iters {
        cfg.nvmf.max_iterations = v;
    }
    if args.fixed_iters {
        cfg.nvmf.fixed_iteration_mode = true;
    }
    if let Some(v) = args.k_star {
        cfg.k_star = v;
    }
    if args.alpha.is_some() {
        cfg.alpha = args.alpha;
        cfg.beta = args.beta;
    }
    if let Some(v) = args.init_noise {
        cfg.init_noise = v;
    }
    if args.clean_init {
        cfg.init_noise = InitNoise::Gaussian;
    }
    if let Some(v) = args.divergence_margin {
        cfg.divergence_margin = v;
    }

    let scenario = Scenario::new(cfg)?;
    let (summary, records) = harness::run_monte_carlo(&scenario)?;
    harness::emit_csv(&records, &summary, &args.out)?;
    if let Some(m) = scenario.mixing() {
        println!("alpha = {}, beta = {}", m.alpha(), m.beta());
    }
    println!("trials = {}, kept = {}", summary.n_trials, summary.n_eff);
    for f in &summary.filters {
        let k = scenario.config().k_star;
        println!(
            "{:>5}: steady-state NRMSE {:.4}, ANEES {:.4}, lost tracks {}",
            f.name,
            filterlab::metrics::steady_state_mean(&f.nrmse, k),
            filterlab::metrics::steady_state_mean(&f.anees, k),
            f.lost_tracks
        );
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> filterlab::Result<()> {
    let rbar = DMatrix::identity(args.dim, args.dim);
    let rng = RngStream::new(args.seed, u64::MAX);
    let cal = nvmf::calibrate_mixing(
        args.r_out,
        args.rho,
        args.r_regular,
        &rbar,
        args.dim,
        &nvmf::default_alpha_grid(),
        args.samples,
        &rng,
    )?;
    println!("alpha = {}", cal.mixing.alpha());
    println!("beta = {}", cal.mixing.beta());
    println!("residual = {:e}", cal.residual);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Calibrate(args) => calibrate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("filterlab: {e}");
            ExitCode::FAILURE
        }
    }
}
