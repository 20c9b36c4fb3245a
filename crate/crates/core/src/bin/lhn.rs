use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lhn::commands::{
    compare_cmd, data_dir, eval_cmd, fit_mle_cmd, gen_data, resolve, train_bbvi_cmd, train_cmd, CliError, Globals,
};
use lhn::trainer::Variant;

#[derive(Parser)]
#[command(name = "lhn", version, about = "Langevin-sampling hypernetworks for neural-ODE uncertainty")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, env = "LHN_CONFIG")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, env = "LHN_SEED")]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true, env = "LHN_OUT")]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "LHN_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    BllFixed,
    BllReopt,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::BllFixed => Variant::BllFixed,
            VariantArg::BllReopt => Variant::BllReopt,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured synthetic dataset.
    GenData,
    /// Fit the maximum-likelihood data model.
    FitMle,
    /// Train the Langevin hypernetwork.
    Train {
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Fit the MLE first instead of reading it from disk.
        #[arg(long)]
        with_mle: bool,
    },
    /// Fit the Gaussian BBVI baseline.
    TrainBbvi {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        with_mle: bool,
    },
    /// Metric and density tables for a report.
    Eval {
        /// Report directory.
        #[arg(long)]
        report: PathBuf,
        /// Dataset or report directory to compare against; defaults to the configured dataset.
        #[arg(long)]
        against: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        kde_points: usize,
    },
    /// Side-by-side W1 and weight statistics of several reports.
    Compare {
        #[arg(long, required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        against: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let g = Globals {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
    };
    // eval and compare fall back to the configured dataset
    let default_against = |g: &Globals| -> Result<PathBuf, CliError> {
        let r = resolve(g, |_| {})?;
        Ok(data_dir(&r))
    };
    match cli.command {
        Command::GenData => gen_data(&resolve(&g, |_| {})?).map(drop),
        Command::FitMle => fit_mle_cmd(&resolve(&g, |_| {})?).map(drop),
        Command::Train {
            variant,
            epochs,
            with_mle,
        } => train_cmd(&g, variant.map(Into::into), epochs, with_mle).map(drop),
        Command::TrainBbvi { epochs, with_mle } => train_bbvi_cmd(&g, epochs, with_mle).map(drop),
        Command::Eval {
            report,
            against,
            kde_points,
        } => {
            let against = match against {
                Some(a) => a,
                None => default_against(&g)?,
            };
            if kde_points < 2 {
                return Err(CliError::Config("--kde-points must be at least 2".into()));
            }
            eval_cmd(&report, &against, None, kde_points, &[]).map(drop)
        }
        Command::Compare { reports, against } => {
            let against = match against {
                Some(a) => a,
                None => default_against(&g)?,
            };
            let out = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
            compare_cmd(&reports, &against, &out).map(drop)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
