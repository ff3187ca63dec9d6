use std::path::PathBuf;
use std::process::ExitCode;

use adi_cli::commands::{self, CostReport, Run, SweepName};
use adi_cli::config::ExperimentConfig;
use adi_service::{serve, ServiceConfig};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

/// Adaptive domain inference experiments.
#[derive(Parser)]
#[command(name = "adi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            config.output.dir = out.clone();
        }
        Ok(config)
    }

    fn run(&self) -> Result<Run> {
        Run::new(self.load()?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the auxiliary pool and the target's private data.
    Synth(ConfigArgs),
    /// Fit the target model.
    Train(ConfigArgs),
    /// Run the hierarchy attack.
    Attack {
        #[command(flatten)]
        args: ConfigArgs,
        /// Query a running service instead of the local model.
        #[arg(long)]
        remote: Option<String>,
    },
    /// OTDD between extracted and private data over the run.
    Eval(ConfigArgs),
    /// Model inversion with and without auxiliary initialisation.
    Invert(ConfigArgs),
    /// Attack a model trained on encoded features.
    Mitigate(ConfigArgs),
    /// Every stage in sequence.
    Run(ConfigArgs),
    /// Access-cost comparison for a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
        /// Training epochs charged to the generative baseline.
        #[arg(long, default_value_t = 50)]
        gdi_epochs: u64,
    },
    /// Repeat the attack over a parameter grid.
    Sweep {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long, value_enum)]
        name: SweepName,
    },
    /// Serve a model over HTTP.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Classify requests per second, across all clients.
        #[arg(long)]
        rate_limit: Option<u32>,
        #[arg(long)]
        access_log: Option<PathBuf>,
    },
}

fn print_report(r: &CostReport) {
    println!(
        "GDI {} x {} = {} accesses",
        r.pool_samples, r.gdi_epochs, r.cost.gdi
    );
    println!("ADI {} x {} = {} accesses", r.batch_size, r.epochs, r.cost.adi);
    println!("ratio {:.1}", r.cost.ratio);
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => commands::synth(&a.run()?),
        Command::Train(a) => commands::train(&a.run()?),
        Command::Attack { args, remote } => {
            let result = commands::attack(&args.run()?, remote.as_deref())?;
            println!(
                "converged={} epochs={} accesses={}",
                result.converged, result.epochs_used, result.total_accesses
            );
            Ok(())
        }
        Command::Eval(a) => commands::eval(&a.run()?),
        Command::Invert(a) => commands::invert(&a.run()?),
        Command::Mitigate(a) => commands::mitigate(&a.run()?),
        Command::Run(a) => {
            let run = a.run()?;
            let report = commands::run_all(&run)?;
            print_report(&report);
            println!("outputs in {}", run.dir.display());
            Ok(())
        }
        Command::Report { run, gdi_epochs } => {
            print_report(&commands::report(&run, gdi_epochs)?);
            Ok(())
        }
        Command::Sweep { args, name } => {
            let path = commands::sweep(&args.load()?, name)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Serve {
            model,
            bind,
            rate_limit,
            access_log,
        } => {
            let mut config = ServiceConfig::new(bind, model);
            config.rate_limit = rate_limit;
            config.access_log = access_log;
            let handle = serve(&config).context("cannot start service")?;
            eprintln!("serving on {}", handle.endpoint());
            handle.wait();
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
