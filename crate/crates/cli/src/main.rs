use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use levelset_mc::ensemble_io::{describe_ensemble, persist_ensemble};
use levelset_mc::runner::{run, RunConfig, Suite, SuiteReport};

/// Monte Carlo laboratory for surface measures on level sets of the
/// squared-L2 norm of Brownian motion.
#[derive(Parser)]
#[command(name = "levelset-mc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Density triangulation: kernel estimate vs Malliavin representation vs
    /// Laplace inversion.
    Density(RunArgs),
    /// Slab surface measures: ladder convergence, total mass, concentration.
    Surface(RunArgs),
    /// Integration-by-parts identity over the (X, h, r) grid.
    Ibp(RunArgs),
    /// Gradient-SDE suite: Girsanov weights and the reweighted density.
    Sde(RunArgs),
    /// Pathwise invariants: <Dg,u> = gamma, |Dgamma| <= 1, tails.
    Invariants(RunArgs),
    /// Every suite on one shared ensemble.
    All(RunArgs),
    /// Run a suite chosen by flag instead of subcommand.
    Run(SuiteArgs),
    /// Generate an ensemble and write it to a binary file.
    Gen(GenArgs),
    /// Print the header of an ensemble file.
    Describe { file: PathBuf },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Ensemble size M.
    #[arg(long)]
    paths: Option<usize>,
    /// Time steps N.
    #[arg(long)]
    steps: Option<usize>,
    /// State dimension n.
    #[arg(long)]
    dim: Option<usize>,
    /// Output directory for CSV tables.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Potential name: zero | cosine | inverse-quadratic.
    #[arg(long)]
    potential: Option<String>,
    /// Potential amplitude.
    #[arg(long)]
    potential_a: Option<f64>,
    /// Kernel bandwidth override (default: Silverman's rule).
    #[arg(long)]
    bandwidth: Option<f64>,
}

#[derive(Args)]
struct SuiteArgs {
    /// density | surface | ibp | sde | invariants | all
    #[arg(long)]
    suite: String,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct GenArgs {
    /// Destination file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    dim: usize,
    #[arg(long, default_value_t = 512)]
    steps: usize,
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    #[arg(long, default_value_t = 12345)]
    seed: u64,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(file) => RunConfig::load(file).with_context(|| format!("loading {file:?}"))?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.paths {
            config.paths = v;
        }
        if let Some(v) = self.steps {
            config.steps = v;
        }
        if let Some(v) = self.dim {
            config.dim = v;
        }
        if let Some(v) = &self.out {
            config.out = v.clone();
        }
        if let Some(v) = &self.potential {
            config.potential = v.clone();
        }
        if let Some(v) = self.potential_a {
            config.potential_a = v;
        }
        if let Some(v) = self.bandwidth {
            config.bandwidth = Some(v);
        }
        config.validate()?;
        Ok(config)
    }
}

fn print_reports(reports: &[SuiteReport]) -> bool {
    let mut all_ok = true;
    for rep in reports {
        let passed = rep.checks.iter().filter(|c| c.passed).count();
        println!("[{}] {}/{} checks passed", rep.suite, passed, rep.checks.len());
        for check in &rep.checks {
            if !check.passed {
                println!("  FAIL {}: {}", check.name, check.detail);
                all_ok = false;
            }
        }
        for file in &rep.files {
            println!("  wrote {}", file.display());
        }
    }
    all_ok
}

fn execute(suite: Suite, args: &RunArgs) -> Result<bool> {
    let config = args.config()?;
    let reports = run(&config, suite)?;
    Ok(print_reports(&reports))
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Density(a) => execute(Suite::Density, &a),
        Command::Surface(a) => execute(Suite::Surface, &a),
        Command::Ibp(a) => execute(Suite::Ibp, &a),
        Command::Sde(a) => execute(Suite::Sde, &a),
        Command::Invariants(a) => execute(Suite::Invariants, &a),
        Command::All(a) => execute(Suite::All, &a),
        Command::Run(s) => execute(s.suite.parse()?, &s.run),
        Command::Gen(g) => {
            let ensemble = levelset_mc::PathEnsemble::new(
                g.dim,
                levelset_mc::TimeGrid::new(g.steps)?,
                g.paths,
                levelset_mc::RngSpec::new(g.seed),
            )?;
            persist_ensemble(&ensemble, &g.out)?;
            println!(
                "wrote {} ({} paths, n={}, N={}, seed={})",
                g.out.display(),
                g.paths,
                g.dim,
                g.steps,
                g.seed
            );
            Ok(true)
        }
        Command::Describe { file } => {
            let h = describe_ensemble(&file)?;
            println!(
                "n={} N={} M={} seed={}",
                h.dim, h.steps, h.num_paths, h.master_seed
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
