//! Batch front end for `qkdrate-core`: distance scans, loose-vs-precise comparisons,
//! per-distance parameter optimisation and the oracle verification suite.

pub mod config;
pub mod error;
pub mod optimize;
pub mod report;
pub mod scan;
pub mod verify;

use std::path::{Path, PathBuf};

use qkdrate_core::Mode;

pub use config::{ModeSelection, Protocol, RunConfig};
pub use error::CliError;
pub use report::CompareSummary;
pub use scan::{Runner, Scan, ScanRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Scan,
    Compare,
    Optimize,
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Scan => "scan",
            Command::Compare => "compare",
            Command::Optimize => "optimize",
            Command::Verify => "verify",
        }
    }
}

/// What a command produced: text for stdout and, for scans, the CSV written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub stdout: String,
    pub csv_path: Option<PathBuf>,
}

/// Apply command-line overrides and the command's own requirements to a loaded config.
pub fn prepare(command: Command, mut config: RunConfig, out: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(o) = out {
        config.output = Some(o.to_path_buf());
    }
    match command {
        Command::Compare => config.mode = ModeSelection::Both,
        Command::Optimize => config.optimize.enabled = true,
        Command::Scan | Command::Verify => {}
    }
    config.validate()?;
    Ok(config)
}

fn scan_csv(command: Command, config: &RunConfig, scan: &Scan) -> Result<String, CliError> {
    let mut meta = vec![
        ("command", command.name().to_owned()),
        ("seed", config.seed.to_string()),
    ];
    let mut echo = config.clone();
    echo.output = None;
    meta.push(("config", serde_json::to_string(&echo).map_err(|e| CliError::Io(e.to_string()))?));
    let mut buf = Vec::new();
    report::write_scan_csv(&mut buf, config.protocol, &meta, &scan.rows)?;
    Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
}

/// Run the scan and the maximum-distance searches behind `compare`.
pub fn compare(config: &RunConfig) -> Result<(Scan, CompareSummary), CliError> {
    let runner = Runner::new(config)?;
    let scan = runner.run()?;
    let (loose, at_loose) = runner.max_distance(&scan, Mode::Loose, None)?;
    // The precise rate at the loose maximum and its parameters is at least the loose rate.
    let known = loose.km.zip(at_loose);
    let (precise, _) = runner.max_distance(&scan, Mode::Precise, known)?;
    let summary = CompareSummary::new(config.protocol, &scan.rows, loose, precise);
    Ok((scan, summary))
}

/// Execute `command` on a prepared config; writes the CSV if the config names an output.
pub fn execute(command: Command, config: &RunConfig) -> Result<Outcome, CliError> {
    match command {
        Command::Verify => {
            let report = verify::run(&config.verify, config.seed);
            let text = report.render();
            if report.passed() {
                Ok(Outcome {
                    stdout: text,
                    csv_path: None,
                })
            } else {
                Err(CliError::Oracle(text))
            }
        }
        Command::Scan | Command::Optimize => {
            let scan = Runner::new(config)?.run()?;
            let csv = scan_csv(command, config, &scan)?;
            emit(config, csv, String::new())
        }
        Command::Compare => {
            let (scan, summary) = compare(config)?;
            let csv = scan_csv(command, config, &scan)?;
            emit(config, csv, summary.render())
        }
    }
}

fn emit(config: &RunConfig, csv: String, summary: String) -> Result<Outcome, CliError> {
    match &config.output {
        Some(path) => {
            std::fs::write(path, csv).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            Ok(Outcome {
                stdout: summary,
                csv_path: Some(path.clone()),
            })
        }
        None => Ok(Outcome {
            stdout: if summary.is_empty() { csv } else { format!("{csv}\n{summary}") },
            csv_path: None,
        }),
    }
}
