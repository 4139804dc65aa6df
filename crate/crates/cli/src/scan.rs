//! Distance scans in loose and precise mode, with optional per-distance optimisation.

use qkdrate_core::channel::ChannelParams;
use qkdrate_core::rate::{max_distance_by, DISTANCE_RESOLUTION_KM};
use qkdrate_core::{KeyRateResult, MaxDistance, Mode};
use rayon::prelude::*;

use crate::config::{ModeSelection, Protocol, RunConfig};
use crate::error::CliError;
use crate::optimize::{optimize, ProtocolParams, Variable};

/// One distance of a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub distance_km: f64,
    pub rate_loose: Option<f64>,
    pub rate_precise: Option<f64>,
    /// `rate_precise / rate_loose`, set only when both exist and `rate_loose > 0`.
    pub improvement_ratio: Option<f64>,
    pub e_ph_loose: Option<f64>,
    pub e_ph_precise: Option<f64>,
    /// Parameter values in the order of [`ProtocolParams::snapshot_names`].
    pub params_loose: Option<Vec<f64>>,
    pub params_precise: Option<Vec<f64>>,
    /// `ok`, or the engine flags of each mode.
    pub status: String,
}

/// A scan together with the full parameter points behind each row.
#[derive(Debug, Clone)]
pub struct Scan {
    pub protocol: Protocol,
    pub rows: Vec<ScanRow>,
    pub points: Vec<RowPoints>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RowPoints {
    pub loose: Option<ProtocolParams>,
    pub precise: Option<ProtocolParams>,
}

impl RowPoints {
    fn get(&self, mode: Mode) -> Option<ProtocolParams> {
        match mode {
            Mode::Loose => self.loose,
            Mode::Precise => self.precise,
        }
    }
}

struct Evaluated {
    params: ProtocolParams,
    result: KeyRateResult,
}

/// Everything that stays fixed while a scan runs.
pub struct Runner<'a> {
    config: &'a RunConfig,
    vars: Vec<Variable>,
    base: ProtocolParams,
}

impl<'a> Runner<'a> {
    pub fn new(config: &'a RunConfig) -> Result<Self, CliError> {
        config.validate()?;
        let vars = if config.optimize.enabled {
            Variable::parse_all(config.protocol, &config.optimize.variables)?
        } else {
            Vec::new()
        };
        let base = match config.protocol {
            Protocol::Sns => ProtocolParams::Sns(config.sns),
            Protocol::Mp => ProtocolParams::Mp(config.mp),
        };
        Ok(Self { config, vars, base })
    }

    fn channel(&self, d: f64) -> ChannelParams {
        self.config.channel.at_distance(d)
    }

    fn optimizing(&self) -> bool {
        self.config.optimize.enabled && !self.vars.is_empty()
    }

    fn modes(&self) -> &'static [Mode] {
        match self.config.mode {
            ModeSelection::Loose => &[Mode::Loose],
            ModeSelection::Precise => &[Mode::Precise],
            ModeSelection::Both => &[Mode::Loose, Mode::Precise],
        }
    }

    /// Best point at distance `d`, or the base parameters when optimisation is off.
    fn best(&self, starts: &[ProtocolParams], d: f64, mode: Mode, stream: u64) -> Result<Evaluated, CliError> {
        let channel = self.channel(d);
        if !self.optimizing() {
            return Ok(Evaluated {
                params: starts[0],
                result: starts[0].key_rate(&channel, mode)?,
            });
        }
        let opt = optimize(starts, &self.vars, &channel, mode, &self.config.optimize, self.config.seed, stream)?;
        Ok(Evaluated {
            params: opt.params,
            result: opt.result,
        })
    }

    /// Precise-mode starts always include the loose optimum at the same distance; the
    /// precise rate at that point is at least the loose rate.
    fn row(&self, index: usize, d: f64, prev: &RowPoints) -> Result<(ScanRow, RowPoints), CliError> {
        let mut points = RowPoints::default();
        let mut loose = None;
        let mut precise = None;
        for &mode in self.modes() {
            let mut starts = Vec::new();
            if mode == Mode::Precise {
                starts.extend(points.loose);
            }
            starts.push(prev.get(mode).unwrap_or(self.base));
            let stream = (index as u64) << 1 | (mode == Mode::Precise) as u64;
            let e = self.best(&starts, d, mode, stream)?;
            match mode {
                Mode::Loose => {
                    points.loose = Some(e.params);
                    loose = Some(e);
                }
                Mode::Precise => {
                    points.precise = Some(e.params);
                    precise = Some(e);
                }
            }
        }
        Ok((assemble_row(d, loose.as_ref(), precise.as_ref()), points))
    }

    pub fn run(&self) -> Result<Scan, CliError> {
        let distances = self.config.scan.distances();
        let results: Vec<(ScanRow, RowPoints)> = if self.optimizing() {
            // Each distance warm-starts from the previous optimum, so rows run in order;
            // the restarts inside each optimisation run in parallel.
            let mut out = Vec::with_capacity(distances.len());
            let mut prev = RowPoints::default();
            for (i, &d) in distances.iter().enumerate() {
                let (row, points) = self.row(i, d, &prev)?;
                prev = points;
                out.push((row, points));
            }
            out
        } else {
            distances
                .par_iter()
                .enumerate()
                .map(|(i, &d)| self.row(i, d, &RowPoints::default()))
                .collect::<Result<_, _>>()?
        };
        let (rows, points) = results.into_iter().unzip();
        Ok(Scan {
            protocol: self.config.protocol,
            rows,
            points,
        })
    }

    /// Largest distance with a positive rate in `mode`, refining between the last positive
    /// grid point and the next by bisection.
    ///
    /// With optimisation on, each bisection point is re-optimised from the parameters of
    /// the last positive point. `known_positive` is a distance already known to give a
    /// positive rate (used to start the precise search at the loose maximum). Also returns
    /// the parameters behind the reported distance.
    pub fn max_distance(
        &self,
        scan: &Scan,
        mode: Mode,
        known_positive: Option<(f64, ProtocolParams)>,
    ) -> Result<(MaxDistance, Option<ProtocolParams>), CliError> {
        let rate_of = |r: &ScanRow| match mode {
            Mode::Loose => r.rate_loose,
            Mode::Precise => r.rate_precise,
        };
        let last = scan.rows.iter().rposition(|r| rate_of(r).is_some_and(|v| v > 0.0));
        let mut lo = last.map(|i| (scan.rows[i].distance_km, scan.points[i].get(mode).unwrap_or(self.base)));
        if let Some((d, p)) = known_positive {
            if lo.is_none_or(|(l, _)| d > l) {
                lo = Some((d, p));
            }
        }
        let Some((lo_d, lo_p)) = lo else {
            let none = MaxDistance {
                km: None,
                ceiling_hit: false,
            };
            return Ok((none, None));
        };
        let next_grid = last
            .and_then(|i| scan.rows.get(i + 1))
            .map(|r| r.distance_km)
            .filter(|&h| h > lo_d);
        let hi_d = next_grid.unwrap_or(self.config.distance_ceiling_km);
        if lo_d >= hi_d {
            let at_ceiling = MaxDistance {
                km: Some(lo_d),
                ceiling_hit: true,
            };
            return Ok((at_ceiling, Some(lo_p)));
        }
        let mut warm = lo_p;
        let mut warm_d = lo_d;
        let mut calls = 0u64;
        let stream_base = (1u64 << 40) | ((mode == Mode::Precise) as u64) << 32;
        let result = max_distance_by(
            |d| {
                // Endpoints are already known from the scan.
                if d == lo_d {
                    return Ok(1.0);
                }
                if next_grid == Some(d) {
                    return Ok(0.0);
                }
                calls += 1;
                let e = self
                    .best(&[warm], d, mode, stream_base + calls)
                    .map_err(|e| qkdrate_core::QkdError::InvalidParam(e.to_string()))?;
                let r = e.result.rate_per_round;
                if r > 0.0 && d > warm_d {
                    warm = e.params;
                    warm_d = d;
                }
                Ok(r)
            },
            lo_d,
            hi_d,
            DISTANCE_RESOLUTION_KM,
        )?;
        Ok((result, Some(warm)))
    }
}

fn assemble_row(d: f64, loose: Option<&Evaluated>, precise: Option<&Evaluated>) -> ScanRow {
    let rate_loose = loose.map(|e| e.result.rate_per_round);
    let rate_precise = precise.map(|e| e.result.rate_per_round);
    let improvement_ratio = match (rate_loose, rate_precise) {
        (Some(l), Some(p)) if l > 0.0 => Some(p / l),
        _ => None,
    };
    let mut status = Vec::new();
    for (name, e) in [("loose", loose), ("precise", precise)] {
        if let Some(e) = e {
            let mut flags = e.result.flags.clone();
            flags.dedup();
            if !flags.is_empty() {
                status.push(format!("{name}:{}", flags.join("+")));
            }
        }
    }
    ScanRow {
        distance_km: d,
        rate_loose,
        rate_precise,
        improvement_ratio,
        e_ph_loose: loose.map(|e| e.result.e_ph_used),
        e_ph_precise: precise.map(|e| e.result.e_ph_used),
        params_loose: loose.map(|e| e.params.snapshot()),
        params_precise: precise.map(|e| e.params.snapshot()),
        status: if status.is_empty() { "ok".to_owned() } else { status.join(";") },
    }
}
