use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use riskprem::latent::BaiNgSelection;
use riskprem::{BootstrapOverrides, EstimateMethod, LoadedConfig, Pipeline, PremiaTable, Result};

const AFTER_HELP: &str = "\
Environment:
  RISKPREM_API_KEY  API key sent as the X-API-Key header on HTTP source fetches.
  RUST_LOG          Log filter (default: info).

Exit status: 0 success, 1 configuration error, 2 data error, 3 numerical failure.";

/// Factor construction and risk-premia estimation for weekly crypto returns.
#[derive(Parser)]
#[command(name = "riskprem", version, after_help = AFTER_HELP)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(short, long, global = true, default_value = "riskprem.toml")]
    config: PathBuf,

    /// Serve every source from the cache; never touch the network.
    #[arg(long, global = true)]
    offline: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    ThreePass,
    FamaMacbeth,
    Both,
}

impl From<MethodArg> for EstimateMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::ThreePass => EstimateMethod::ThreePass,
            MethodArg::FamaMacbeth => EstimateMethod::FamaMacbeth,
            MethodArg::Both => EstimateMethod::Both,
        }
    }
}

#[derive(clap::Args, Clone, Copy)]
struct BootstrapArgs {
    /// Bootstrap replications.
    #[arg(long)]
    reps: Option<usize>,
    /// Block length in weeks.
    #[arg(long)]
    block: Option<usize>,
    /// RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl From<BootstrapArgs> for BootstrapOverrides {
    fn from(a: BootstrapArgs) -> Self {
        BootstrapOverrides {
            reps: a.reps,
            block_len: a.block,
            seed: a.seed,
            workers: a.workers,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fetch sources into the cache and write weekly data files.
    Ingest,
    /// Build factors, the estimation panel and descriptive statistics.
    BuildFactors,
    /// Choose the number of latent factors with the Bai-Ng criteria.
    SelectK {
        /// Largest K considered.
        #[arg(long)]
        kmax: Option<usize>,
    },
    /// Point estimates of the factor risk premia.
    Estimate {
        #[arg(long, value_enum, default_value = "both")]
        method: MethodArg,
    },
    /// Moving-block bootstrap p-values for the three-pass premia.
    Bootstrap(BootstrapArgs),
    /// Render the premia and descriptive tables from existing estimates.
    Report,
    /// Every stage in order.
    Run(BootstrapArgs),
}

fn print_ic_table(sel: &BaiNgSelection) {
    println!("{:>3} {:>14} {:>12} {:>12} {:>12}", "k", "V(k)", "ICp1", "ICp2", "ICp3");
    for row in &sel.table {
        let mark = if row.k == sel.k { " *" } else { "" };
        println!(
            "{:>3} {:>14.6} {:>12.6} {:>12.6} {:>12.6}{mark}",
            row.k, row.v, row.icp1, row.icp2, row.icp3
        );
    }
    println!("selected K = {} (ICp2)", sel.k);
}

fn print_table(table: &PremiaTable) {
    print!("{}", table.to_markdown());
}

fn run(cli: Cli) -> Result<()> {
    let cfg = LoadedConfig::load(&cli.config)?;
    let pipeline = Pipeline::new(cfg, cli.offline);
    match cli.command {
        Command::Ingest => {
            let s = pipeline.ingest()?;
            println!("ingested {} weeks for {} assets", s.weeks, s.universe);
        }
        Command::BuildFactors => {
            let s = pipeline.build_factors()?;
            println!(
                "built {} factors; estimation panel {} weeks x {} assets",
                s.factors.n_factors(),
                s.panel_weeks,
                s.panel_assets
            );
        }
        Command::SelectK { kmax } => print_ic_table(&pipeline.select_k(kmax)?),
        Command::Estimate { method } => print_table(&pipeline.estimate(method.into())?),
        Command::Bootstrap(args) => print_table(&pipeline.bootstrap(args.into())?),
        Command::Report => print_table(&pipeline.report()?),
        Command::Run(args) => print_table(&pipeline.run(args.into())?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
