//! Linear-loss channel and threshold-detector click model.
//!
//! Both parties send (phase-randomised) coherent states over half of the total
//! distance to a middle node, where they interfere on a symmetric beamsplitter
//! followed by two threshold detectors L and R. A round is *effective* when
//! exactly one detector clicks. Misalignment is modelled as a click registered at
//! the other detector with a fixed probability.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, QkdError, Result};
use crate::mp::MpParams;
use crate::quad::gl64;
use crate::sns::SnsParams;

/// Fiber and detector parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub distance_km: f64,
    pub loss_coeff_db_per_km: f64,
    pub detector_efficiency: f64,
    pub dark_count: f64,
    pub misalign_x: f64,
    pub misalign_z: f64,
}

impl ChannelParams {
    /// Parameters used for the SNS-TFQKD simulations.
    pub fn sns_default() -> Self {
        Self {
            distance_km: 0.0,
            loss_coeff_db_per_km: 0.2,
            detector_efficiency: 0.30,
            dark_count: 1e-8,
            misalign_x: 0.05,
            misalign_z: 0.0,
        }
    }

    /// Parameters used for the MP-QKD simulations.
    pub fn mp_default() -> Self {
        Self {
            distance_km: 0.0,
            loss_coeff_db_per_km: 0.2,
            detector_efficiency: 0.70,
            dark_count: 1e-8,
            misalign_x: 0.05,
            misalign_z: 0.005,
        }
    }

    pub fn at_distance(mut self, distance_km: f64) -> Self {
        self.distance_km = distance_km;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance_km >= 0.0) || !self.distance_km.is_finite() {
            return Err(QkdError::Domain {
                name: "distance_km",
                value: self.distance_km,
                domain: "[0, ∞)",
            });
        }
        if !(self.loss_coeff_db_per_km >= 0.0) {
            return Err(QkdError::Domain {
                name: "loss_coeff_db_per_km",
                value: self.loss_coeff_db_per_km,
                domain: "[0, ∞)",
            });
        }
        check_probability("detector_efficiency", self.detector_efficiency)?;
        check_probability("dark_count", self.dark_count)?;
        check_probability("misalign_x", self.misalign_x)?;
        check_probability("misalign_z", self.misalign_z)?;
        Ok(())
    }
}

/// Per-arm transmittance including detector efficiency; each arm spans half the distance.
pub fn arm_transmittance(params: &ChannelParams) -> f64 {
    let arm_db = params.loss_coeff_db_per_km * params.distance_km / 2.0;
    params.detector_efficiency * 10f64.powf(-arm_db / 10.0)
}

/// Click probabilities of detectors L and R for coherent inputs `μ_a`, `μ_b`
/// with relative phase `θ`; L is the constructive port at `θ = 0`.
pub fn interference_click_probs(mu_a: f64, mu_b: f64, theta: f64, eta: f64, dark_count: f64) -> (f64, f64) {
    let (i_l, i_r) = port_intensities(mu_a, mu_b, theta, eta);
    let silent = 1.0 - dark_count;
    (1.0 - silent * (-i_l).exp(), 1.0 - silent * (-i_r).exp())
}

fn port_intensities(mu_a: f64, mu_b: f64, theta: f64, eta: f64) -> (f64, f64) {
    let cross = 2.0 * (mu_a * mu_b).sqrt() * theta.cos();
    (0.5 * eta * (mu_a + mu_b + cross), 0.5 * eta * (mu_a + mu_b - cross))
}

/// Probabilities that only L or only R registers a click, after misalignment.
pub fn single_click_probs(mu_a: f64, mu_b: f64, theta: f64, eta: f64, dark_count: f64, misalign: f64) -> (f64, f64) {
    let (p_l, p_r) = interference_click_probs(mu_a, mu_b, theta, eta, dark_count);
    let l_only = p_l * (1.0 - p_r);
    let r_only = p_r * (1.0 - p_l);
    (
        (1.0 - misalign) * l_only + misalign * r_only,
        (1.0 - misalign) * r_only + misalign * l_only,
    )
}

/// Effective-click probability with the relative phase uniformly random.
pub fn phase_averaged_gain(mu_a: f64, mu_b: f64, eta: f64, dark_count: f64) -> f64 {
    if mu_a == 0.0 || mu_b == 0.0 {
        let (l, r) = single_click_probs(mu_a, mu_b, 0.0, eta, dark_count, 0.0);
        return l + r;
    }
    // The integrand depends on θ only through cos θ.
    gl64().average(0.0, PI, |t| {
        let (l, r) = single_click_probs(mu_a, mu_b, t, eta, dark_count, 0.0);
        l + r
    })
}

/// Gain of one intensity setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyGain {
    pub mu_a: f64,
    pub mu_b: f64,
    pub gain: f64,
}

/// Modelled observables consumed by the decoy-state and key-rate layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickStatistics {
    /// Effective-click probability of a key-generation round (SNS) or of any round (MP).
    pub q_z: f64,
    /// Bit error rate of the raw key.
    pub e_z: f64,
    pub decoy_gains: Vec<DecoyGain>,
    /// Error-click probability of a postselected phase-test instance.
    pub t_delta: f64,
    /// Effective-click probability of the same postselected instances.
    pub postselected_gain: f64,
    /// Effective-click probability with both parties sending vacuum.
    pub s00: f64,
    /// Expected clicks at L and R among the postselected instances.
    pub n_l: f64,
    pub n_r: f64,
}

impl ClickStatistics {
    pub fn gain(&self, mu_a: f64, mu_b: f64) -> Option<f64> {
        self.decoy_gains
            .iter()
            .find(|g| g.mu_a == mu_a && g.mu_b == mu_b)
            .map(|g| g.gain)
    }

    pub fn all_probabilities(&self) -> impl Iterator<Item = f64> + '_ {
        [self.q_z, self.e_z, self.t_delta, self.postselected_gain, self.s00]
            .into_iter()
            .chain(self.decoy_gains.iter().map(|g| g.gain))
    }
}

/// Z-mode gains of the four send/not-send branches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnsBranchGains {
    pub vac_vac: f64,
    /// Alice sends, Bob does not.
    pub send_vac: f64,
    pub vac_send: f64,
    pub send_send: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnsStatistics {
    pub clicks: ClickStatistics,
    pub branches: SnsBranchGains,
    pub transmittance: f64,
}

/// Average over the in-phase window of the error and total single-click probabilities
/// for equal intensities on both sides.
fn window_error_and_gain(mu: f64, half_width: f64, eta: f64, channel: &ChannelParams) -> (f64, f64) {
    let rule = gl64();
    let err = rule.average(-half_width, half_width, |d| {
        single_click_probs(mu, mu, d, eta, channel.dark_count, channel.misalign_x).1
    });
    let gain = rule.average(-half_width, half_width, |d| {
        let (l, r) = single_click_probs(mu, mu, d, eta, channel.dark_count, channel.misalign_x);
        l + r
    });
    (err, gain)
}

pub fn sns_statistics(protocol: &SnsParams, channel: &ChannelParams) -> Result<SnsStatistics> {
    protocol.validate()?;
    channel.validate()?;
    let eta = arm_transmittance(channel);
    let pd = channel.dark_count;
    let p = protocol.send_prob;
    let mu_z = protocol.signal_intensity;
    let branches = SnsBranchGains {
        vac_vac: phase_averaged_gain(0.0, 0.0, eta, pd),
        send_vac: phase_averaged_gain(mu_z, 0.0, eta, pd),
        vac_send: phase_averaged_gain(0.0, mu_z, eta, pd),
        send_send: phase_averaged_gain(mu_z, mu_z, eta, pd),
    };
    let wrong = (1.0 - p).powi(2) * branches.vac_vac + p * p * branches.send_send;
    let right = p * (1.0 - p) * (branches.send_vac + branches.vac_send);
    let q_z = wrong + right;
    let e_z = if q_z > 0.0 { wrong / q_z } else { 0.0 };

    let mu1 = protocol.decoy_weak;
    let mu2 = protocol.decoy_strong;
    let mut decoy_gains = vec![DecoyGain {
        mu_a: 0.0,
        mu_b: 0.0,
        gain: branches.vac_vac,
    }];
    for mu in [mu1, mu2] {
        let g = phase_averaged_gain(mu, 0.0, eta, pd);
        decoy_gains.push(DecoyGain { mu_a: mu, mu_b: 0.0, gain: g });
        decoy_gains.push(DecoyGain { mu_a: 0.0, mu_b: mu, gain: g });
    }
    decoy_gains.push(DecoyGain {
        mu_a: mu1,
        mu_b: mu1,
        gain: phase_averaged_gain(mu1, mu1, eta, pd),
    });

    let (t_delta, postselected_gain) = window_error_and_gain(mu1, 0.5 * protocol.slice_full_width, eta, channel);
    let instances = protocol.postselected_instances();
    // In the in-phase window L is the correct port; the anti-phase window mirrors it.
    let per_port = 0.5 * instances * postselected_gain;
    Ok(SnsStatistics {
        clicks: ClickStatistics {
            q_z,
            e_z,
            decoy_gains,
            t_delta,
            postselected_gain,
            s00: branches.vac_vac,
            n_l: per_port,
            n_r: per_port,
        },
        branches,
        transmittance: eta,
    })
}

/// Index of an MP intensity setting in `[μ, ν, vacuum]` order.
pub const MP_SETTINGS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpStatistics {
    pub clicks: ClickStatistics,
    /// Phase-averaged single-click probability for each (Alice, Bob) setting,
    /// indexed in `[μ, ν, vacuum]` order.
    pub round_gains: [[f64; MP_SETTINGS]; MP_SETTINGS],
    /// Probability that both rounds of a postselected `ν`-`ν` phase-test pair click.
    pub x_pair_yield: f64,
    /// Raw Z-pair bit error before the Z misalignment floor.
    pub e_z_raw: f64,
    pub transmittance: f64,
}

pub fn mp_statistics(protocol: &MpParams, channel: &ChannelParams) -> Result<MpStatistics> {
    protocol.validate()?;
    channel.validate()?;
    let eta = arm_transmittance(channel);
    let pd = channel.dark_count;
    let intensities = protocol.intensities();
    let probs = protocol.probabilities();
    let mut round_gains = [[0.0; MP_SETTINGS]; MP_SETTINGS];
    for (i, &ma) in intensities.iter().enumerate() {
        for (j, &mb) in intensities.iter().enumerate() {
            round_gains[i][j] = phase_averaged_gain(ma, mb, eta, pd);
        }
    }
    let q: f64 = (0..MP_SETTINGS)
        .flat_map(|i| (0..MP_SETTINGS).map(move |j| (i, j)))
        .map(|(i, j)| probs[i] * probs[j] * round_gains[i][j])
        .sum();

    // Z pairs: one vacuum and one μ round per side.
    let (mu, vac) = (0, 2);
    let w = |i: usize, j: usize| probs[i] * probs[j] * round_gains[i][j];
    let right = w(vac, mu) * w(mu, vac);
    let wrong = w(vac, vac) * w(mu, mu);
    let e_z_raw = if right + wrong > 0.0 { wrong / (right + wrong) } else { 0.0 };
    let ez = channel.misalign_z;
    let e_z = e_z_raw * (1.0 - ez) + (1.0 - e_z_raw) * ez;

    let nu = protocol.nu;
    let (t_delta, x_pair_yield) = mp_pair_error(nu, protocol.slice_width, eta, channel);

    let mut decoy_gains = Vec::new();
    for (i, &ma) in intensities.iter().enumerate() {
        for (j, &mb) in intensities.iter().enumerate() {
            decoy_gains.push(DecoyGain {
                mu_a: ma,
                mu_b: mb,
                gain: round_gains[i][j],
            });
        }
    }
    let per_port = 0.5 * protocol.finite.total_rounds * q;
    Ok(MpStatistics {
        clicks: ClickStatistics {
            q_z: q,
            e_z,
            decoy_gains,
            t_delta,
            postselected_gain: x_pair_yield,
            s00: round_gains[vac][vac],
            n_l: per_port,
            n_r: per_port,
        },
        round_gains,
        x_pair_yield,
        e_z_raw,
        transmittance: eta,
    })
}

/// Pair-level error and both-click probabilities for `ν`-`ν` phase-test pairs whose
/// relative phase drift `d` between the two rounds is uniform in `[-w, w]`; the
/// first-round relative phase is uniform over the circle.
fn mp_pair_error(nu: f64, half_width: f64, eta: f64, channel: &ChannelParams) -> (f64, f64) {
    let rule = gl64();
    let single = |t: f64| single_click_probs(nu, nu, t, eta, channel.dark_count, channel.misalign_x);
    let mut err = 0.0;
    let mut both = 0.0;
    for (d, wd) in rule.mean_rule(-half_width, half_width) {
        for (t, wt) in rule.mean_rule(0.0, 2.0 * PI) {
            let (l1, r1) = single(t);
            let (l2, r2) = single(t + d);
            err += wd * wt * (l1 * r2 + r1 * l2);
            both += wd * wt * (l1 + r1) * (l2 + r2);
        }
    }
    (err, both)
}
