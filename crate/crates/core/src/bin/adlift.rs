use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adlift::config::RunConfig;
use adlift::data::{load_ads, load_visits, write_ads, write_visits};
use adlift::pipeline::run_pipeline;
use adlift::report::report_ad_window_quantiles;
use adlift::simulate::{simulate, SimScenario};
use adlift::{Error, Result};

#[derive(Parser)]
#[command(name = "adlift", about = "Immediate TV-ad lift from minute-level website visits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured pipeline stages.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Draw a synthetic data set with known lifts.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Directory for visits.csv, ads.csv and truth.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Visit quantiles around ad end times.
    Quantiles {
        #[arg(long)]
        visits: PathBuf,
        #[arg(long)]
        ads: PathBuf,
        #[arg(long, default_value_t = 15)]
        before: u32,
        #[arg(long, default_value_t = 45)]
        after: u32,
        /// Percentages, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [5.0, 25.0, 50.0, 75.0, 95.0])]
        quantiles: Vec<f64>,
        #[arg(long, default_value = "quantiles.csv")]
        out: PathBuf,
    },
    /// Print the version.
    Version,
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { config } => {
            let config = RunConfig::from_file(&config)?;
            let outcome = run_pipeline(&config)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            println!("smoother: {} h={}", outcome.smoother.kernel.name(), outcome.smoother.bandwidth);
            if let Some(family) = outcome.theta_family {
                println!("lifts from: {family}");
            }
            println!("wrote {} files to {}", outcome.artifacts.len() + 1, outcome.output_dir.display());
        }
        Command::Simulate { scenario, out } => {
            let scenario = SimScenario::from_toml_file(&scenario)?;
            let (series, ads, truth) = simulate(&scenario)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_visits(out.join("visits.csv"), &series)?;
            write_ads(out.join("ads.csv"), &series, &ads)?;
            truth.write_json(out.join("truth.json"))?;
            println!("simulated {} minutes and {} ads into {}", series.len(), ads.len(), out.display());
        }
        Command::Quantiles {
            visits,
            ads,
            before,
            after,
            quantiles,
            out,
        } => {
            let series = load_visits(&visits)?;
            let ads = load_ads(&ads, &series)?;
            report_ad_window_quantiles(&series, &ads, before, after, &quantiles)?.write_csv(&out)?;
        }
        Command::Version => println!("adlift {}", env!("CARGO_PKG_VERSION")),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
