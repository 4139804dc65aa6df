use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qkdrate::{execute, prepare, CliError, Command, RunConfig};

#[derive(Parser)]
#[command(name = "qkdrate", version, about = "Key rates of phase-postselected QKD with loose and precise phase-error bounds")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Key rate over the configured distance grid.
    Scan(Common),
    /// Loose vs precise: crossover distance, peak improvement and max-distance extension.
    Compare(Common),
    /// Scan with per-distance parameter optimisation switched on.
    Optimize(Common),
    /// Check the closed forms against the brute-force oracle.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// CSV output path (defaults to the config's `output`, else stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
}

fn run(cli: Cli) -> Result<String, CliError> {
    let (command, args) = match cli.command {
        Sub::Scan(a) => (Command::Scan, a),
        Sub::Compare(a) => (Command::Compare, a),
        Sub::Optimize(a) => (Command::Optimize, a),
        Sub::Verify(a) => (Command::Verify, a),
    };
    let config = prepare(command, RunConfig::load(&args.config)?, args.out.as_deref(), args.seed)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.jobs {
        if n == 0 {
            return Err(CliError::Validation("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Io(e.to_string()))?;
    pool.install(|| execute(command, &config)).map(|o| o.stdout)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(CliError::Oracle(report)) => {
            print!("{report}");
            eprintln!("qkdrate: oracle verification failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("qkdrate: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
