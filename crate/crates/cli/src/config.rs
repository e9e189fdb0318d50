//! Run configuration files.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "seed": 7,
//!   "rounds": 100000,
//!   "protocol": { "n_a": 10, "loss_a_db": 1.0 },
//!   "schemes": ["efficient", "trad:1e-2"],
//!   "n_grid": "1e4:1e10:log",
//!   "epsilon": 1e-20,
//!   "beta": 0.95
//! }
//! ```
//!
//! Everything but `schema_version` and `seed` has a default. Channel defaults
//! are 10 mean photons, 1 dB loss and 0.01 SNU excess noise on both links.

use std::path::Path;

use serde::{Deserialize, Serialize};

use cvmdi::gaussian::ExcessNoiseConvention;
use cvmdi::keyrate::{Scheme, DEFAULT_BETA, DEFAULT_EPSILON};
use cvmdi::protocol::ProtocolParams;

use crate::Failure;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub rounds: Option<u64>,
    #[serde(default)]
    pub protocol: ChannelConfig,
    #[serde(default)]
    pub schemes: Option<Vec<String>>,
    #[serde(default)]
    pub n_grid: Option<String>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

/// Source and channel. Photon numbers in mean photons, loss in dB, excess noise in SNU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub n_a: f64,
    pub n_b: f64,
    pub loss_a_db: f64,
    pub loss_b_db: f64,
    pub xi_a: f64,
    pub xi_b: f64,
    pub gain_a: Option<f64>,
    pub gain_b: Option<f64>,
    pub excess_noise_convention: ExcessNoiseConvention,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            n_a: 10.0,
            n_b: 10.0,
            loss_a_db: 1.0,
            loss_b_db: 1.0,
            xi_a: 0.01,
            xi_b: 0.01,
            gain_a: None,
            gain_b: None,
            excess_noise_convention: ExcessNoiseConvention::Output,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Failure::Validation(format!("config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Failure::Validation(format!(
                "config: schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        if !(cfg.epsilon > 0.0 && cfg.epsilon < 1.0) {
            return Err(Failure::Validation(format!("config: epsilon must lie in (0, 1), got {}", cfg.epsilon)));
        }
        if !(cfg.beta > 0.0 && cfg.beta <= 1.0) {
            return Err(Failure::Validation(format!("config: beta must lie in (0, 1], got {}", cfg.beta)));
        }
        Ok(cfg)
    }

    /// Protocol parameters; `rounds` falls back to 2 for purely analytic uses.
    pub fn params(&self) -> Result<ProtocolParams, Failure> {
        let c = &self.protocol;
        let p = ProtocolParams {
            n_a: c.n_a,
            n_b: c.n_b,
            loss_a_db: c.loss_a_db,
            loss_b_db: c.loss_b_db,
            xi_a: c.xi_a,
            xi_b: c.xi_b,
            gain_a: c.gain_a,
            gain_b: c.gain_b,
            rounds: self.rounds.unwrap_or(2),
            seed: self.seed,
            excess_noise_convention: c.excess_noise_convention,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn schemes(&self) -> Result<Option<Vec<Scheme>>, Failure> {
        self.schemes.as_ref().map(|s| parse_schemes(&s.join(","))).transpose()
    }
}

pub fn parse_schemes(list: &str) -> Result<Vec<Scheme>, Failure> {
    list.split(',').map(|s| s.trim().parse::<Scheme>().map_err(Failure::from)).collect()
}

/// `LO:HI:log[:POINTS]` or a comma-separated list of values. Without `POINTS`
/// a log grid has 10 points per decade, endpoints included.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, Failure> {
    let bad = |why: &str| Failure::Validation(format!("grid '{spec}': {why}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(&format!("'{s}' is not a number")));
    let parts: Vec<&str> = spec.split(':').collect();
    let grid = match parts.as_slice() {
        [lo, hi, "log", rest @ ..] if rest.len() <= 1 => {
            let (lo, hi) = (num(lo)?, num(hi)?);
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(bad("need 0 < LO ≤ HI"));
            }
            let points = match rest {
                [p] => p.trim().parse::<usize>().map_err(|_| bad("POINTS must be a positive integer"))?,
                _ => ((hi / lo).log10() * 10.0).round() as usize + 1,
            };
            if points == 0 || (points == 1 && hi > lo) {
                return Err(bad("too few points"));
            }
            cvmdi::energy_test::log_grid(lo, hi, points)
        }
        [single] => single.split(',').map(num).collect::<Result<_, _>>()?,
        _ => return Err(bad("expected LO:HI:log[:POINTS] or a comma-separated list")),
    };
    if grid.iter().any(|n| !(*n >= 1.0 && n.is_finite())) {
        return Err(bad("block sizes must be finite and at least 1"));
    }
    Ok(grid)
}

/// Units echoed in every JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct Units {
    pub photon_number: &'static str,
    pub loss: &'static str,
    pub excess_noise: &'static str,
    pub quadratures: &'static str,
    pub rate: &'static str,
}

pub const UNITS: Units = Units {
    photon_number: "mean photons per mode",
    loss: "dB",
    excess_noise: "shot-noise units",
    quadratures: "q = (a + a†)/√2, vacuum variance 1/2",
    rate: "bits per channel use",
};

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_caption_defaults() {
        let cfg = RunConfig::parse(r#"{"schema_version": 1, "seed": 3}"#).unwrap();
        let p = cfg.params().unwrap();
        assert_eq!(p, ProtocolParams::symmetric(10.0, 1.0, 0.01, 2, 3));
        assert_eq!(cfg.epsilon, 1e-20);
        assert_eq!(cfg.beta, 0.95);
    }

    #[test]
    fn rejects_unknown_keys_missing_seed_and_wrong_version() {
        for text in [
            r#"{"schema_version": 1, "seed": 3, "sed": 4}"#,
            r#"{"schema_version": 1, "seed": 3, "protocol": {"loss": 2}}"#,
            r#"{"schema_version": 1}"#,
            r#"{"schema_version": 2, "seed": 3}"#,
            r#"{"schema_version": 1, "seed": 3, "epsilon": 0}"#,
        ] {
            assert!(matches!(RunConfig::parse(text), Err(Failure::Validation(_))), "{text}");
        }
    }

    #[test]
    fn grids() {
        let g = parse_grid("1e4:1e10:log").unwrap();
        assert_eq!(g.len(), 61);
        assert_eq!(g[0], 1e4);
        assert!((g[60] / 1e10 - 1.0).abs() < 1e-12);
        assert_eq!(parse_grid("1e6:1e8:log:3").unwrap().len(), 3);
        assert_eq!(parse_grid("100,1e6").unwrap(), vec![100.0, 1e6]);
        for bad in ["0:10:log", "10:1:log", "1e4:1e6:lin", "a,b", "1:10:log:0"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn scheme_lists() {
        let s = parse_schemes("efficient, trad:1e-2,trad:1e-3").unwrap();
        assert_eq!(s.len(), 3);
        assert!(parse_schemes("efficient,bogus").is_err());
    }
}
