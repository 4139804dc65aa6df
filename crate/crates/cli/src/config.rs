//! JSON run configuration. Missing keys take the protocol's defaults; unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use qkdrate_core::channel::ChannelParams;
use qkdrate_core::mp::MpParams;
use qkdrate_core::sns::SnsParams;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Sns,
    Mp,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Sns => "sns",
            Protocol::Mp => "mp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSelection {
    Loose,
    Precise,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanRange {
    pub d_min: f64,
    pub d_max: f64,
    pub step: f64,
}

impl ScanRange {
    pub fn distances(&self) -> Vec<f64> {
        let n = ((self.d_max - self.d_min) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.d_min + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    pub enabled: bool,
    pub variables: Vec<String>,
    pub restarts: usize,
    /// Relative spread of simplex values at which a run stops; the vertices must also lie within `sqrt(tolerance)` of each other.
    pub tolerance: f64,
    pub max_evals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub random_states: usize,
    pub delta_points: usize,
    pub pairing_rounds: u64,
    pub aopp_bits: usize,
    /// Flip the sign of the `sin δ` term in the affine model under test.
    pub mutate_slice_sign: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            random_states: 10_000,
            delta_points: 64,
            pairing_rounds: 10_000_000,
            aopp_bits: 1_000_000,
            mutate_slice_sign: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub protocol: Protocol,
    pub channel: ChannelParams,
    pub sns: SnsParams,
    pub mp: MpParams,
    pub scan: ScanRange,
    pub mode: ModeSelection,
    pub optimize: OptimizeConfig,
    /// Upper end of the maximum-distance search.
    pub distance_ceiling_km: f64,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub verify: VerifyConfig,
}

impl RunConfig {
    pub fn defaults(protocol: Protocol) -> Self {
        let (channel, scan, variables) = match protocol {
            Protocol::Sns => (
                ChannelParams::sns_default(),
                ScanRange {
                    d_min: 0.0,
                    d_max: 460.0,
                    step: 10.0,
                },
                vec!["send_prob", "signal_intensity", "decoy_weak", "slice_full_width"],
            ),
            Protocol::Mp => (
                ChannelParams::mp_default(),
                ScanRange {
                    d_min: 0.0,
                    d_max: 400.0,
                    step: 10.0,
                },
                vec!["mu", "nu", "intensity_probs", "slice_width"],
            ),
        };
        Self {
            version: SCHEMA_VERSION,
            protocol,
            channel,
            sns: SnsParams::default(),
            mp: MpParams::default(),
            scan,
            mode: ModeSelection::Both,
            optimize: OptimizeConfig {
                enabled: true,
                variables: variables.into_iter().map(String::from).collect(),
                restarts: 3,
                tolerance: 1e-7,
                max_evals: 400,
            },
            distance_ceiling_km: 1000.0,
            seed: 0,
            output: None,
            verify: VerifyConfig::default(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, CliError> {
        let user: Value = serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        let Value::Object(map) = &user else {
            return Err(CliError::Validation("configuration must be a JSON object".into()));
        };
        let protocol = match map.get("protocol") {
            None => return Err(CliError::Validation("missing field `protocol`".into())),
            Some(v) => serde_json::from_value::<Protocol>(v.clone())
                .map_err(|_| CliError::Validation(format!("unknown protocol {v}; expected \"sns\" or \"mp\"")))?,
        };
        let mut merged = serde_json::to_value(Self::defaults(protocol)).expect("defaults serialise");
        merge(&mut merged, user);
        let config: Self = serde_json::from_value(merged).map_err(|e| CliError::Validation(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != SCHEMA_VERSION {
            return Err(CliError::Validation(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.version
            )));
        }
        let s = &self.scan;
        if !(s.d_min >= 0.0) || !(s.d_min <= s.d_max) {
            return Err(CliError::Validation(format!("scan requires 0 ≤ d_min ≤ d_max, got {} and {}", s.d_min, s.d_max)));
        }
        if !(s.step > 0.0) {
            return Err(CliError::Validation(format!("scan step must be positive, got {}", s.step)));
        }
        if !(self.distance_ceiling_km >= s.d_max) {
            return Err(CliError::Validation("distance_ceiling_km must be at least d_max".into()));
        }
        self.channel.validate().map_err(CliError::from)?;
        match self.protocol {
            Protocol::Sns => self.sns.validate()?,
            Protocol::Mp => self.mp.validate()?,
        }
        let o = &self.optimize;
        if o.enabled {
            if o.restarts == 0 || o.max_evals == 0 || !(o.tolerance > 0.0) {
                return Err(CliError::Validation("optimize needs restarts ≥ 1, max_evals ≥ 1 and tolerance > 0".into()));
            }
            crate::optimize::Variable::parse_all(self.protocol, &o.variables)?;
        }
        Ok(())
    }
}

/// Recursively overlay `patch` on `base`; objects merge key by key, everything else replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_sns_config_fills_protocol_defaults() {
        let c = RunConfig::from_json_str(r#"{"protocol": "sns"}"#).unwrap();
        assert_eq!(c.sns.finite.total_rounds, 1e12);
        assert_eq!(c.channel.dark_count, 1e-8);
        assert_eq!(c.channel.detector_efficiency, 0.3);
        assert_eq!(c.sns.finite.ec_inefficiency, 1.1);
        assert_eq!(c.channel.misalign_x, 0.05);
        assert_eq!(c.channel.loss_coeff_db_per_km, 0.2);
    }

    #[test]
    fn minimal_mp_config_fills_protocol_defaults() {
        let c = RunConfig::from_json_str(r#"{"protocol": "mp"}"#).unwrap();
        assert_eq!(c.mp.finite.total_rounds, 1e13);
        assert_eq!(c.mp.max_pair_interval, 100);
        assert_eq!(c.channel.detector_efficiency, 0.7);
        assert_eq!(c.channel.misalign_z, 0.005);
    }

    #[test]
    fn partial_nested_objects_merge() {
        let c = RunConfig::from_json_str(r#"{"protocol": "sns", "channel": {"dark_count": 1e-7}, "scan": {"step": 5}}"#).unwrap();
        assert_eq!(c.channel.dark_count, 1e-7);
        assert_eq!(c.channel.detector_efficiency, 0.3);
        assert_eq!(c.scan.step, 5.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        for bad in [
            r#"{"protocol": "sns", "scan": {"step": 0}}"#,
            r#"{"protocol": "bb84"}"#,
            r#"{"protocol": "sns", "chanel": {}}"#,
            r#"{"protocol": "sns", "channel": {"dark_cont": 1e-7}}"#,
            r#"{"protocol": "mp", "optimize": {"variables": ["send_prob"]}}"#,
            r#"{"protocol": "sns", "scan": {"d_min": 10, "d_max": 5}}"#,
            r#"{"protocol": "sns", "version": 2}"#,
        ] {
            assert!(matches!(RunConfig::from_json_str(bad), Err(CliError::Validation(_))), "{bad}");
        }
        assert!(matches!(RunConfig::from_json_str("{\"protocol\": "), Err(CliError::Parse(_))));
    }

    #[test]
    fn scan_grid() {
        let r = ScanRange { d_min: 5.0, d_max: 5.0, step: 1.0 };
        assert_eq!(r.distances(), vec![5.0]);
        let r = ScanRange { d_min: 0.0, d_max: 1.0, step: 0.1 };
        assert_eq!(r.distances().len(), 11);
    }
}
