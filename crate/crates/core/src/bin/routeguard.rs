use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use routeguard::experiment::{Pipeline, StageName};

#[derive(Parser)]
#[command(name = "routeguard", version, about = "Sensor allocation and attack-aware routing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's output.dir, relative to the config file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the TNTP network and trips files.
    Ingest(Common),
    /// Enumerate k shortest routes per OD pair.
    Routes(Common),
    /// Build the partition and zone attack types.
    Attacks(Common),
    /// Solve the best response to every attack type.
    BestResponses(Common),
    /// Cluster best responses and form pair sets.
    Cluster(Common),
    /// Build the pairwise difference matrix.
    Diffmatrix(Common),
    /// Solve the lexicographic allocation for every budget.
    Allocate(Common),
    /// Simulate attacks, sensing and post-sensing routing.
    Simulate(Common),
    /// Summarize evaluations and write the manifest.
    Report(Common),
    /// Run all stages in order, or a single one with --stage.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        stage: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (common, stage) = match cli.command {
        Command::Ingest(c) => (c, Some(StageName::Ingest)),
        Command::Routes(c) => (c, Some(StageName::Routes)),
        Command::Attacks(c) => (c, Some(StageName::Attacks)),
        Command::BestResponses(c) => (c, Some(StageName::BestResponses)),
        Command::Cluster(c) => (c, Some(StageName::Cluster)),
        Command::Diffmatrix(c) => (c, Some(StageName::Diffmatrix)),
        Command::Allocate(c) => (c, Some(StageName::Allocate)),
        Command::Simulate(c) => (c, Some(StageName::Simulate)),
        Command::Report(c) => (c, Some(StageName::Report)),
        Command::Run { common, stage } => match stage.map(|s| s.parse::<StageName>()).transpose() {
            Ok(s) => (common, s),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
    };
    if let Some(n) = common.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = Pipeline::from_file(&common.config, common.seed, common.out).and_then(|p| match stage {
        Some(s) => p.run_stage(s),
        None => p.run_all(),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
