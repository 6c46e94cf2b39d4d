use std::process::ExitCode;

use clap::{Parser, Subcommand};
use favs_cli::{
    cmd_decompose, cmd_gen_fixture, cmd_init_params, cmd_route_stats, cmd_run, CliError, CliResult, DecomposeArgs,
    GenFixtureArgs, InitParamsArgs, RouteStatsArgs, RunArgs, EXIT_VALIDATION,
};

/// Frequency-aware audio-visual segmentation reference tools.
#[derive(Debug, Parser)]
#[command(name = "favs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic audio-visual scene.
    GenFixture(GenFixtureArgs),
    /// Split a tensor's spectrum into bands and write heatmaps and energies.
    Decompose(DecomposeArgs),
    /// Write seeded model parameters for a config.
    InitParams(InitParamsArgs),
    /// Run the three-stage pipeline on a fixture.
    Run(RunArgs),
    /// Per-stage expert utilisation and routing entropy.
    RouteStats(RouteStatsArgs),
}

/// Sizes the global pool from `FAVS_THREADS`.
fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("FAVS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Validation(format!("FAVS_THREADS must be a positive integer, got {raw:?}")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Validation(format!("cannot size thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    log::debug!("FAVS_THREADS={n} ignored in a sequential build");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let mut stdout = std::io::stdout().lock();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::GenFixture(a) => cmd_gen_fixture(a, &mut stdout),
        Command::Decompose(a) => cmd_decompose(a, &mut stdout),
        Command::InitParams(a) => cmd_init_params(a, &mut stdout),
        Command::Run(a) => cmd_run(a, &mut stdout),
        Command::RouteStats(a) => cmd_route_stats(a, &mut stdout),
    });
    match result {
        Ok(r) => {
            for p in &r.artifacts {
                log::info!("wrote {}", p.display());
            }
            ExitCode::from(r.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
