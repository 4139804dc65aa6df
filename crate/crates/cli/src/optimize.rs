//! Nelder–Mead search over protocol parameters in an unconstrained coordinate system.
//!
//! Probabilities and window widths go through a logit, intensities through a log,
//! and probability vectors through a softmax with the last component as reference.
//! Weak intensities are parametrised as a fraction of the strong one so that the
//! ordering constraint can never be violated.

use std::f64::consts::{FRAC_PI_2, PI};

use qkdrate_core::channel::ChannelParams;
use qkdrate_core::mp::{key_rate_mp, MpParams};
use qkdrate_core::sns::{key_rate, SnsParams};
use qkdrate_core::{KeyRateResult, Mode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{OptimizeConfig, Protocol};
use crate::error::CliError;

/// Objective assigned to parameter points the engines reject.
const REJECTED: f64 = f64::NEG_INFINITY;
/// Objective for points without any single-photon yield.
const NO_YIELD: f64 = -1.0;
/// Initial simplex edge in transformed coordinates.
const SIMPLEX_STEP: f64 = 0.4;
/// Half-width of the uniform perturbation used for random restarts.
const RESTART_SPREAD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variable {
    SendProb,
    SignalIntensity,
    DecoyWeak,
    DecoyStrong,
    ZWindowProb,
    DecoyProbs,
    SliceFullWidth,
    Mu,
    Nu,
    IntensityProbs,
    SliceWidth,
}

impl Variable {
    const SNS: [(&'static str, Variable); 7] = [
        ("send_prob", Variable::SendProb),
        ("signal_intensity", Variable::SignalIntensity),
        ("decoy_weak", Variable::DecoyWeak),
        ("decoy_strong", Variable::DecoyStrong),
        ("z_window_prob", Variable::ZWindowProb),
        ("decoy_probs", Variable::DecoyProbs),
        ("slice_full_width", Variable::SliceFullWidth),
    ];
    const MP: [(&'static str, Variable); 4] = [
        ("mu", Variable::Mu),
        ("nu", Variable::Nu),
        ("intensity_probs", Variable::IntensityProbs),
        ("slice_width", Variable::SliceWidth),
    ];

    pub fn parse(protocol: Protocol, name: &str) -> Result<Self, CliError> {
        let table: &[(&str, Variable)] = match protocol {
            Protocol::Sns => &Self::SNS,
            Protocol::Mp => &Self::MP,
        };
        table.iter().find(|(n, _)| *n == name).map(|&(_, v)| v).ok_or_else(|| {
            let known: Vec<&str> = table.iter().map(|(n, _)| *n).collect();
            CliError::Validation(format!("unknown {protocol} optimisation variable `{name}` (known: {})", known.join(", ")))
        })
    }

    pub fn parse_all(protocol: Protocol, names: &[String]) -> Result<Vec<Self>, CliError> {
        let mut out = Vec::with_capacity(names.len());
        for name in names {
            let v = Self::parse(protocol, name)?;
            if out.contains(&v) {
                return Err(CliError::Validation(format!("optimisation variable `{name}` listed twice")));
            }
            out.push(v);
        }
        Ok(out)
    }

    fn dims(self) -> usize {
        match self {
            Variable::DecoyProbs | Variable::IntensityProbs => 2,
            _ => 1,
        }
    }
}

/// Protocol parameters of one scan point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProtocolParams {
    Sns(SnsParams),
    Mp(MpParams),
}

pub const SNS_SNAPSHOT: [&str; 9] = [
    "send_prob",
    "signal_intensity",
    "decoy_weak",
    "decoy_strong",
    "z_window_prob",
    "p_vacuum",
    "p_weak",
    "p_strong",
    "slice_full_width",
];
pub const MP_SNAPSHOT: [&str; 6] = ["mu", "nu", "p_mu", "p_nu", "p_vac", "slice_width"];

impl ProtocolParams {
    pub fn key_rate(&self, channel: &ChannelParams, mode: Mode) -> qkdrate_core::Result<KeyRateResult> {
        match self {
            ProtocolParams::Sns(p) => key_rate(p, channel, mode),
            ProtocolParams::Mp(p) => key_rate_mp(p, channel, mode),
        }
    }

    pub fn snapshot_names(protocol: Protocol) -> &'static [&'static str] {
        match protocol {
            Protocol::Sns => &SNS_SNAPSHOT,
            Protocol::Mp => &MP_SNAPSHOT,
        }
    }

    /// Values in the order of [`ProtocolParams::snapshot_names`].
    pub fn snapshot(&self) -> Vec<f64> {
        match self {
            ProtocolParams::Sns(p) => vec![
                p.send_prob,
                p.signal_intensity,
                p.decoy_weak,
                p.decoy_strong,
                p.z_window_prob,
                p.decoy_probs[0],
                p.decoy_probs[1],
                p.decoy_probs[2],
                p.slice_full_width,
            ],
            ProtocolParams::Mp(p) => vec![p.mu, p.nu, p.p_mu, p.p_nu, p.p_vac, p.slice_width],
        }
    }

    fn encode(&self, vars: &[Variable]) -> Vec<f64> {
        let mut x = Vec::new();
        for &v in vars {
            match (v, self) {
                (Variable::SendProb, ProtocolParams::Sns(p)) => x.push(logit(p.send_prob)),
                (Variable::SignalIntensity, ProtocolParams::Sns(p)) => x.push(p.signal_intensity.ln()),
                (Variable::DecoyWeak, ProtocolParams::Sns(p)) => x.push(logit(p.decoy_weak / p.decoy_strong)),
                (Variable::DecoyStrong, ProtocolParams::Sns(p)) => x.push(p.decoy_strong.ln()),
                (Variable::ZWindowProb, ProtocolParams::Sns(p)) => x.push(logit(p.z_window_prob)),
                (Variable::DecoyProbs, ProtocolParams::Sns(p)) => x.extend(log_ratios(&p.decoy_probs)),
                (Variable::SliceFullWidth, ProtocolParams::Sns(p)) => x.push(logit(p.slice_full_width / PI)),
                (Variable::Mu, ProtocolParams::Mp(p)) => x.push(p.mu.ln()),
                (Variable::Nu, ProtocolParams::Mp(p)) => x.push(logit(p.nu / p.mu)),
                (Variable::IntensityProbs, ProtocolParams::Mp(p)) => x.extend(log_ratios(&p.probabilities())),
                (Variable::SliceWidth, ProtocolParams::Mp(p)) => x.push(logit(p.slice_width / FRAC_PI_2)),
                _ => unreachable!("variables are checked against the protocol when parsed"),
            }
        }
        x
    }

    fn decode(&self, vars: &[Variable], x: &[f64]) -> Self {
        let mut out = *self;
        let mut weak_fraction = None;
        let mut nu_fraction = None;
        let mut i = 0;
        for &v in vars {
            let c = &x[i..i + v.dims()];
            i += v.dims();
            match (v, &mut out) {
                (Variable::SendProb, ProtocolParams::Sns(p)) => p.send_prob = sigmoid(c[0]),
                (Variable::SignalIntensity, ProtocolParams::Sns(p)) => p.signal_intensity = c[0].exp(),
                (Variable::DecoyWeak, ProtocolParams::Sns(_)) => weak_fraction = Some(sigmoid(c[0])),
                (Variable::DecoyStrong, ProtocolParams::Sns(p)) => p.decoy_strong = c[0].exp(),
                (Variable::ZWindowProb, ProtocolParams::Sns(p)) => p.z_window_prob = sigmoid(c[0]),
                (Variable::DecoyProbs, ProtocolParams::Sns(p)) => p.decoy_probs = softmax(c),
                (Variable::SliceFullWidth, ProtocolParams::Sns(p)) => p.slice_full_width = PI * sigmoid(c[0]),
                (Variable::Mu, ProtocolParams::Mp(p)) => p.mu = c[0].exp(),
                (Variable::Nu, ProtocolParams::Mp(_)) => nu_fraction = Some(sigmoid(c[0])),
                (Variable::IntensityProbs, ProtocolParams::Mp(p)) => {
                    [p.p_mu, p.p_nu, p.p_vac] = softmax(c);
                }
                (Variable::SliceWidth, ProtocolParams::Mp(p)) => p.slice_width = FRAC_PI_2 * sigmoid(c[0]),
                _ => unreachable!("variables are checked against the protocol when parsed"),
            }
        }
        match &mut out {
            ProtocolParams::Sns(p) => {
                if let Some(f) = weak_fraction {
                    p.decoy_weak = f * p.decoy_strong;
                }
            }
            ProtocolParams::Mp(p) => {
                if let Some(f) = nu_fraction {
                    p.nu = f * p.mu;
                }
            }
        }
        out
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn log_ratios(p: &[f64; 3]) -> [f64; 2] {
    [(p[0] / p[2]).ln(), (p[1] / p[2]).ln()]
}

fn softmax(c: &[f64]) -> [f64; 3] {
    let m = c[0].max(c[1]).max(0.0);
    let e = [(c[0] - m).exp(), (c[1] - m).exp(), (-m).exp()];
    let s: f64 = e.iter().sum();
    [e[0] / s, e[1] / s, e[2] / s]
}

/// Quantity the optimiser maximises: the rate before its floor at zero, so that the
/// search still has a gradient to follow where no key is produced.
pub fn objective(result: &qkdrate_core::Result<KeyRateResult>) -> f64 {
    match result {
        Ok(r) => r.unfloored_rate().unwrap_or(NO_YIELD),
        Err(_) => REJECTED,
    }
}

/// Best point found by [`optimize`] together with its evaluated rate.
#[derive(Debug, Clone)]
pub struct Optimum {
    pub params: ProtocolParams,
    pub result: KeyRateResult,
    pub objective: f64,
    pub evaluations: usize,
}

/// Maximise the rate at one channel point.
///
/// One simplex run starts from each warm start and `restarts − 1` more from random
/// perturbations of the first one. Runs are independent and execute in parallel;
/// the winner is chosen in a fixed order, and a warm start itself wins over any run
/// that does not beat it, so the result never has a lower rate than the warm starts.
pub fn optimize(
    starts: &[ProtocolParams],
    vars: &[Variable],
    channel: &ChannelParams,
    mode: Mode,
    settings: &OptimizeConfig,
    seed: u64,
    stream: u64,
) -> Result<Optimum, CliError> {
    assert!(!starts.is_empty(), "optimize needs a warm start");
    let eval = |p: &ProtocolParams| p.key_rate(channel, mode);
    let mut initial: Vec<(ProtocolParams, Vec<f64>)> = starts.iter().map(|p| (*p, p.encode(vars))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let x0 = initial[0].1.clone();
    for _ in 1..settings.restarts {
        let x: Vec<f64> = x0.iter().map(|v| v + rng.random_range(-RESTART_SPREAD..RESTART_SPREAD)).collect();
        initial.push((starts[0], x));
    }

    let runs: Vec<(ProtocolParams, f64, usize)> = initial
        .par_iter()
        .map(|(base, x)| {
            let f = |x: &[f64]| -objective(&eval(&base.decode(vars, x)));
            let run = nelder_mead(f, x, SIMPLEX_STEP, settings.max_evals, settings.tolerance);
            (base.decode(vars, &run.x), -run.f, run.evaluations)
        })
        .collect();

    let mut best: Option<(ProtocolParams, f64)> = None;
    let mut evaluations = 0;
    for p in starts {
        let f = objective(&eval(p));
        evaluations += 1;
        if best.as_ref().is_none_or(|b| f > b.1) {
            best = Some((*p, f));
        }
    }
    for (p, f, n) in runs {
        evaluations += n;
        if best.as_ref().is_none_or(|b| f > b.1) {
            best = Some((p, f));
        }
    }
    let (params, objective) = best.expect("at least one start");
    let result = eval(&params)?;
    Ok(Optimum {
        params,
        result,
        objective,
        evaluations,
    })
}

#[derive(Debug, Clone)]
pub struct SimplexRun {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
}

/// Minimise `f` from `x0` with an axis-aligned initial simplex of edge `step`.
///
/// Stops after `max_evals` evaluations or when the spread of function values over the
/// simplex falls below `tolerance` relative to the best value.
pub fn nelder_mead(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], step: f64, max_evals: usize, tolerance: f64) -> SimplexRun {
    const ALPHA: f64 = 1.0;
    const GAMMA: f64 = 2.0;
    const RHO: f64 = 0.5;
    const SIGMA: f64 = 0.5;
    let n = x0.len();
    let mut evals = 0;
    let mut call = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    if n == 0 {
        let v = call(x0, &mut evals);
        return SimplexRun {
            x: Vec::new(),
            f: v,
            evaluations: evals,
        };
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), call(x0, &mut evals)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = call(&x, &mut evals);
        simplex.push((x, v));
    }
    let towards = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect() };

    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (lo, hi) = (simplex[0].1, simplex[n].1);
        // Equal values at the vertices only count once the simplex has also shrunk.
        let x_tol = tolerance.sqrt();
        let small = simplex[1..]
            .iter()
            .all(|(x, _)| x.iter().zip(&simplex[0].0).all(|(a, b)| (a - b).abs() <= x_tol * (1.0 + b.abs())));
        if lo.is_finite() && hi.is_finite() && hi - lo <= tolerance * lo.abs() && small {
            break;
        }
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let worst = simplex[n].0.clone();
        let reflected = towards(&centroid, &worst, -ALPHA);
        let fr = call(&reflected, &mut evals);
        if fr < simplex[0].1 {
            let expanded = towards(&centroid, &worst, -GAMMA);
            let fe = call(&expanded, &mut evals);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let (target, ft) = if fr < simplex[n].1 { (&reflected, fr) } else { (&worst, simplex[n].1) };
            let contracted = towards(&centroid, target, RHO);
            let fc = call(&contracted, &mut evals);
            if fc < ft {
                simplex[n] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let x = towards(&best, &entry.0, SIGMA);
                    let v = call(&x, &mut evals);
                    *entry = (x, v);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    SimplexRun { x, f, evaluations: evals }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_minimises_rosenbrock() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let run = nelder_mead(rosen, &[-1.2, 1.0], 0.5, 5000, 1e-14);
        assert!((run.x[0] - 1.0).abs() < 1e-4 && (run.x[1] - 1.0).abs() < 1e-4, "{:?}", run.x);
    }

    #[test]
    fn simplex_handles_rejected_region() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::INFINITY } else { (x[0] - 2.0).powi(2) };
        let run = nelder_mead(f, &[0.5], 0.4, 500, 1e-12);
        assert!((run.x[0] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn transforms_round_trip() {
        let sns = ProtocolParams::Sns(SnsParams::default());
        let vars: Vec<Variable> = Variable::SNS.iter().map(|&(_, v)| v).collect();
        let back = sns.decode(&vars, &sns.encode(&vars));
        for (a, b) in sns.snapshot().iter().zip(back.snapshot()) {
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
        let mp = ProtocolParams::Mp(MpParams::default());
        let vars: Vec<Variable> = Variable::MP.iter().map(|&(_, v)| v).collect();
        let back = mp.decode(&vars, &mp.encode(&vars));
        for (a, b) in mp.snapshot().iter().zip(back.snapshot()) {
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn decoded_points_respect_constraints() {
        let vars: Vec<Variable> = Variable::MP.iter().map(|&(_, v)| v).collect();
        let mp = ProtocolParams::Mp(MpParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-8.0..8.0)).collect();
            let ProtocolParams::Mp(p) = mp.decode(&vars, &x) else { unreachable!() };
            assert!(p.nu < p.mu);
            assert!((p.p_mu + p.p_nu + p.p_vac - 1.0).abs() < 1e-12);
            assert!(p.slice_width > 0.0 && p.slice_width < FRAC_PI_2);
        }
    }

    #[test]
    fn optimum_never_below_warm_start() {
        let channel = ChannelParams::sns_default().at_distance(300.0);
        let start = ProtocolParams::Sns(SnsParams::default());
        let vars = Variable::parse_all(Protocol::Sns, &["send_prob".into(), "signal_intensity".into()]).unwrap();
        let settings = OptimizeConfig {
            enabled: true,
            variables: vec![],
            restarts: 2,
            tolerance: 1e-6,
            max_evals: 60,
        };
        let base = start.key_rate(&channel, Mode::Loose).unwrap().rate_per_round;
        let opt = optimize(&[start], &vars, &channel, Mode::Loose, &settings, 1, 0).unwrap();
        assert!(opt.result.rate_per_round >= base);
        assert_eq!(opt.result.rate_per_round, opt.objective.max(0.0));
    }
}
