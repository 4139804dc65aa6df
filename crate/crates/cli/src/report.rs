//! CSV output of scans and the loose-vs-precise comparison summary.
//!
//! Scan files start with `#` metadata lines (schema version first), then a header
//! row. Numbers are written with 17 significant digits so that reading a file back
//! reproduces every row exactly; absent values are empty fields.

use std::fmt::Write as _;
use std::io::{Read, Write};

use qkdrate_core::MaxDistance;

use crate::config::{Protocol, SCHEMA_VERSION};
use crate::error::CliError;
use crate::optimize::ProtocolParams;
use crate::scan::ScanRow;

/// Improvement that counts as significant for the crossover distance.
pub const CROSSOVER_RATIO: f64 = 1.10;

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn header(protocol: Protocol) -> Vec<String> {
    let mut h: Vec<String> = [
        "distance_km",
        "rate_loose",
        "rate_precise",
        "improvement_ratio",
        "e_ph_loose",
        "e_ph_precise",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for mode in ["loose", "precise"] {
        for name in ProtocolParams::snapshot_names(protocol) {
            h.push(format!("{mode}_{name}"));
        }
    }
    h.push("status".into());
    h
}

/// Write `rows` after the metadata lines `(key, value)`.
pub fn write_scan_csv<W: Write>(mut out: W, protocol: Protocol, metadata: &[(&str, String)], rows: &[ScanRow]) -> Result<(), CliError> {
    writeln!(out, "# schema_version={SCHEMA_VERSION}")?;
    writeln!(out, "# protocol={protocol}")?;
    for (k, v) in metadata {
        writeln!(out, "# {k}={v}")?;
    }
    let width = ProtocolParams::snapshot_names(protocol).len();
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header(protocol))?;
    for r in rows {
        let mut rec = vec![
            fmt_f64(r.distance_km),
            fmt_opt(r.rate_loose),
            fmt_opt(r.rate_precise),
            fmt_opt(r.improvement_ratio),
            fmt_opt(r.e_ph_loose),
            fmt_opt(r.e_ph_precise),
        ];
        for params in [&r.params_loose, &r.params_precise] {
            match params {
                Some(v) => rec.extend(v.iter().map(|&x| fmt_f64(x))),
                None => rec.extend(std::iter::repeat_n(String::new(), width)),
            }
        }
        rec.push(r.status.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a file written by [`write_scan_csv`].
pub fn read_scan_csv<R: Read>(input: R) -> Result<(Protocol, Vec<ScanRow>), CliError> {
    let mut text = String::new();
    let mut input = input;
    input.read_to_string(&mut text)?;
    let mut protocol = None;
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let Some((k, v)) = line[1..].trim().split_once('=') else { continue };
        match k {
            "schema_version" if v != SCHEMA_VERSION.to_string() => {
                return Err(CliError::Csv(format!("unsupported schema version {v}")));
            }
            "protocol" => {
                protocol = Some(match v {
                    "sns" => Protocol::Sns,
                    "mp" => Protocol::Mp,
                    other => return Err(CliError::Csv(format!("unknown protocol {other}"))),
                })
            }
            _ => {}
        }
    }
    let protocol = protocol.ok_or_else(|| CliError::Csv("missing protocol metadata".into()))?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let expected = header(protocol);
    let found: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    if found != expected {
        return Err(CliError::Csv(format!("header {found:?} does not match the {protocol} layout")));
    }
    let width = ProtocolParams::snapshot_names(protocol).len();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<Option<f64>, CliError> {
            let s = &rec[i];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| CliError::Csv(format!("bad number `{s}` in column {}", expected[i])))
            }
        };
        let params = |start: usize| -> Result<Option<Vec<f64>>, CliError> {
            let vals: Vec<Option<f64>> = (start..start + width).map(field).collect::<Result<_, _>>()?;
            Ok(vals.into_iter().collect())
        };
        rows.push(ScanRow {
            distance_km: field(0)?.ok_or_else(|| CliError::Csv("missing distance".into()))?,
            rate_loose: field(1)?,
            rate_precise: field(2)?,
            improvement_ratio: field(3)?,
            e_ph_loose: field(4)?,
            e_ph_precise: field(5)?,
            params_loose: params(6)?,
            params_precise: params(6 + width)?,
            status: rec[6 + 2 * width].to_owned(),
        });
    }
    Ok((protocol, rows))
}

/// Headline numbers of a loose-vs-precise comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareSummary {
    pub protocol: Protocol,
    pub rows: usize,
    /// First grid distance from which every row with a positive loose rate has
    /// an improvement of at least [`CROSSOVER_RATIO`].
    pub crossover_km: Option<f64>,
    /// Largest improvement ratio and its distance.
    pub peak_ratio: Option<(f64, f64)>,
    pub max_distance_loose: MaxDistance,
    pub max_distance_precise: MaxDistance,
    pub extension_km: Option<f64>,
    /// The precise search reached the distance ceiling, so the extension is not bounded.
    pub extension_unbounded: bool,
    /// Rows where the precise rate fell below the loose rate.
    pub dominance_violations: usize,
}

pub fn crossover(rows: &[ScanRow]) -> Option<f64> {
    let positive: Vec<&ScanRow> = rows.iter().filter(|r| r.rate_loose.is_some_and(|v| v > 0.0)).collect();
    let mut start = None;
    for r in positive.iter().rev() {
        if r.improvement_ratio.is_some_and(|x| x >= CROSSOVER_RATIO) {
            start = Some(r.distance_km);
        } else {
            break;
        }
    }
    start
}

pub fn peak_ratio(rows: &[ScanRow]) -> Option<(f64, f64)> {
    rows.iter()
        .filter_map(|r| r.improvement_ratio.map(|x| (x, r.distance_km)))
        .fold(None, |best: Option<(f64, f64)>, c| match best {
            Some(b) if b.0 >= c.0 => Some(b),
            _ => Some(c),
        })
}

pub fn dominance_violations(rows: &[ScanRow]) -> usize {
    rows.iter()
        .filter(|r| matches!((r.rate_loose, r.rate_precise), (Some(l), Some(p)) if p < l))
        .count()
}

impl CompareSummary {
    pub fn new(protocol: Protocol, rows: &[ScanRow], loose: MaxDistance, precise: MaxDistance) -> Self {
        let extension_unbounded = precise.ceiling_hit;
        let extension_km = match (loose.km, precise.km) {
            (Some(l), Some(p)) if !extension_unbounded => Some(p - l),
            _ => None,
        };
        Self {
            protocol,
            rows: rows.len(),
            crossover_km: crossover(rows),
            peak_ratio: peak_ratio(rows),
            max_distance_loose: loose,
            max_distance_precise: precise,
            extension_km,
            extension_unbounded,
            dominance_violations: dominance_violations(rows),
        }
    }

    pub fn render(&self) -> String {
        let opt = |x: Option<f64>, digits: usize| x.map(|v| format!("{v:.digits$}")).unwrap_or_else(|| "none".into());
        let mut s = String::new();
        let _ = writeln!(s, "protocol: {}", self.protocol);
        let _ = writeln!(s, "rows: {}", self.rows);
        let _ = writeln!(s, "crossover_km (ratio >= {CROSSOVER_RATIO:.2} beyond): {}", opt(self.crossover_km, 1));
        match self.peak_ratio {
            Some((r, d)) => {
                let _ = writeln!(s, "peak_ratio: {r:.6} at {d:.1} km");
            }
            None => {
                let _ = writeln!(s, "peak_ratio: none");
            }
        }
        for (name, m) in [("loose", &self.max_distance_loose), ("precise", &self.max_distance_precise)] {
            let _ = writeln!(
                s,
                "max_distance_{name}_km: {}{}",
                opt(m.km, 2),
                if m.ceiling_hit { " (ceiling)" } else { "" }
            );
        }
        let _ = writeln!(s, "extension_km: {}", opt(self.extension_km, 2));
        let _ = writeln!(s, "extension_unbounded: {}", self.extension_unbounded);
        let _ = writeln!(s, "dominance_violations: {}", self.dominance_violations);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(d: f64, l: f64, p: f64) -> ScanRow {
        ScanRow {
            distance_km: d,
            rate_loose: Some(l),
            rate_precise: Some(p),
            improvement_ratio: (l > 0.0).then(|| p / l),
            e_ph_loose: None,
            e_ph_precise: None,
            params_loose: None,
            params_precise: None,
            status: "ok".into(),
        }
    }

    #[test]
    fn crossover_requires_every_later_row() {
        let rows = vec![
            row(0.0, 1.0, 1.01),
            row(10.0, 1.0, 1.2),
            row(20.0, 1.0, 1.05),
            row(30.0, 1.0, 1.11),
            row(40.0, 1.0, 1.3),
            row(50.0, 0.0, 1e-9),
        ];
        assert_eq!(crossover(&rows), Some(30.0));
        assert_eq!(peak_ratio(&rows), Some((1.3, 40.0)));
        assert_eq!(dominance_violations(&rows), 0);
        assert_eq!(crossover(&rows[..3]), None);
    }

    #[test]
    fn extension_unbounded_at_ceiling() {
        let hit = MaxDistance {
            km: Some(1000.0),
            ceiling_hit: true,
        };
        let s = CompareSummary::new(Protocol::Sns, &[], hit, hit);
        assert!(s.extension_unbounded);
        assert_eq!(s.extension_km, None);
    }
}
