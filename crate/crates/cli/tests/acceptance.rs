//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use qkdrate::verify::{self, Check};
use qkdrate::{compare, CompareSummary, Protocol, RunConfig, Scan};

struct Outcome {
    passed: bool,
    detail: String,
}

fn timed<F: FnOnce() -> Outcome>(limit: Option<Duration>, f: F) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    o.detail.push_str(&format!(" time={:.2}s", took.as_secs_f64()));
    if let Some(limit) = limit {
        o.detail.push_str(&format!(" limit={}s", limit.as_secs()));
        o.passed &= took < limit;
    }
    o
}

fn checks(list: &[Check]) -> Outcome {
    let detail = list
        .iter()
        .map(|c| format!("{}={:.3e}<{:.0e}", c.name, c.max_residual, c.tolerance))
        .collect::<Vec<_>>()
        .join(" ");
    Outcome {
        passed: list.iter().all(Check::passed),
        detail,
    }
}

fn in_range(x: Option<f64>, lo: f64, hi: f64) -> bool {
    x.is_some_and(|v| (lo..=hi).contains(&v))
}

fn reproduction(s: &CompareSummary, crossover: (f64, f64), extension: (f64, f64)) -> Outcome {
    let passed = in_range(s.crossover_km, crossover.0, crossover.1) && in_range(s.extension_km, extension.0, extension.1);
    Outcome {
        passed,
        detail: format!(
            "crossover_km={:?} in [{}, {}] extension_km={:?} in [{}, {}]",
            s.crossover_km, crossover.0, crossover.1, s.extension_km, extension.0, extension.1
        ),
    }
}

fn run_compare(protocol: Protocol) -> (Scan, CompareSummary, Duration) {
    let start = Instant::now();
    let (scan, summary) = compare(&RunConfig::defaults(protocol)).expect("default compare runs");
    (scan, summary, start.elapsed())
}

fn binary(args: &[&str]) -> (Vec<u8>, Option<i32>) {
    let out = Command::new(env!("CARGO_BIN_EXE_qkdrate")).args(args).output().expect("binary runs");
    (out.stdout, out.status.code())
}

fn determinism(dir: &Path) -> Outcome {
    let configs = [
        ("sns", r#"{"protocol":"sns","scan":{"d_min":300,"d_max":440,"step":20}}"#),
        ("mp", r#"{"protocol":"mp","scan":{"d_min":200,"d_max":380,"step":60}}"#),
        (
            "verify",
            r#"{"protocol":"sns","verify":{"random_states":300,"delta_points":16,"pairing_rounds":200000,"aopp_bits":50000}}"#,
        ),
    ];
    let mut mismatches = Vec::new();
    let mut runs = 0;
    for (name, text) in configs {
        let cfg = dir.join(format!("{name}.json"));
        std::fs::write(&cfg, text).unwrap();
        let cfg = cfg.to_str().unwrap();
        let commands: &[&str] = if name == "verify" { &["verify"] } else { &["scan", "compare", "optimize"] };
        for &cmd in commands {
            let mut seen: Option<(Vec<u8>, Vec<u8>)> = None;
            for jobs in ["1", "4", "4"] {
                let csv = dir.join(format!("{name}-{cmd}-{jobs}.csv"));
                let mut args = vec![cmd, "--config", cfg, "--seed", "11", "--jobs", jobs];
                if cmd != "verify" {
                    args.extend(["--out", csv.to_str().unwrap()]);
                }
                let (stdout, code) = binary(&args);
                runs += 1;
                let file = std::fs::read(&csv).unwrap_or_default();
                if code != Some(0) {
                    mismatches.push(format!("{name}/{cmd} exit {code:?}"));
                }
                match &seen {
                    None => seen = Some((stdout, file)),
                    Some(first) if first != &(stdout, file) => mismatches.push(format!("{name}/{cmd} jobs={jobs}")),
                    Some(_) => {}
                }
            }
        }
    }
    Outcome {
        passed: mismatches.is_empty(),
        detail: format!("runs={runs} mismatches=[{}]", mismatches.join(", ")),
    }
}

fn main() -> ExitCode {
    let seed = 0;
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();

    results.push((
        1,
        "affine relation vs oracle",
        timed(Some(Duration::from_secs(30)), || checks(&[verify::affine_equivalence(10_000, 64, seed, false)])),
    ));
    results.push((
        2,
        "loose/precise round trip",
        timed(Some(Duration::from_secs(1)), || checks(&[verify::round_trip(100)])),
    ));
    results.push((3, "port chain", timed(None, || checks(&[verify::port_chain()]))));
    results.push((
        4,
        "bound validity",
        timed(None, || checks(&[verify::bound_validity(25, 18.0), verify::decoy_mixtures(1000, seed)])),
    ));

    let (sns_scan, sns, sns_time) = run_compare(Protocol::Sns);
    let (mp_scan, mp, mp_time) = run_compare(Protocol::Mp);

    let mut violations = 0;
    let mut detail = String::new();
    for (name, scan, s) in [("sns", &sns_scan, &sns), ("mp", &mp_scan, &mp)] {
        let direction = match (s.max_distance_loose.km, s.max_distance_precise.km) {
            (Some(l), Some(p)) => p >= l,
            _ => false,
        };
        violations += s.dominance_violations + usize::from(!direction);
        detail.push_str(&format!(
            "{name}: rows={} dominance_violations={} max_loose={:?} max_precise={:?} ",
            scan.rows.len(),
            s.dominance_violations,
            s.max_distance_loose.km,
            s.max_distance_precise.km
        ));
    }
    detail.push_str(&format!("violations={violations}"));
    results.push((
        5,
        "dominance and direction",
        Outcome {
            passed: violations == 0,
            detail,
        },
    ));

    let limit = Duration::from_secs(300);
    let mut o = reproduction(&sns, (300.0, 460.0), (1.0, 6.0));
    o.passed &= sns_time < limit;
    o.detail.push_str(&format!(" time={:.2}s limit=300s", sns_time.as_secs_f64()));
    results.push((6, "SNS reproduction", o));
    let mut o = reproduction(&mp, (100.0, 220.0), (0.5, 4.0));
    o.passed &= mp_time < limit;
    o.detail.push_str(&format!(" time={:.2}s limit=300s", mp_time.as_secs_f64()));
    results.push((7, "MP reproduction", o));

    results.push((
        8,
        "Monte Carlo agreement",
        timed(Some(Duration::from_secs(120)), || {
            checks(&[verify::pairing_mc(10_000_000, seed), verify::aopp_mc(1_000_000, 300.0, seed)])
        }),
    ));

    let dir = tempfile::tempdir().expect("temp dir");
    results.push((9, "determinism", timed(None, || determinism(dir.path()))));

    let mut failed = 0;
    for (n, name, o) in &results {
        failed += usize::from(!o.passed);
        println!("{} criterion {n} ({name}): {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{}/{} criteria pass", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
