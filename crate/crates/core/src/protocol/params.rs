use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::gaussian::{db_to_transmissivity, ExcessNoiseConvention};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Eb,
    Pm,
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Representation::Eb => "eb",
            Representation::Pm => "pm",
        })
    }
}

impl FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eb" => Ok(Representation::Eb),
            "pm" => Ok(Representation::Pm),
            _ => Err(Error::usage(format!("unknown representation '{s}' (expected eb or pm)"))),
        }
    }
}

/// Source, channel and post-processing parameters of one protocol run.
///
/// Photon numbers are mean photons per mode, losses are in dB, excess noise in
/// shot-noise units. `gain_a`/`gain_b` default to the values that cancel the
/// conditional mean of each party's mode given the relay output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolParams {
    pub n_a: f64,
    pub n_b: f64,
    pub loss_a_db: f64,
    pub loss_b_db: f64,
    pub xi_a: f64,
    pub xi_b: f64,
    #[serde(default)]
    pub gain_a: Option<f64>,
    #[serde(default)]
    pub gain_b: Option<f64>,
    pub rounds: u64,
    pub seed: u64,
    #[serde(default)]
    pub excess_noise_convention: ExcessNoiseConvention,
}

impl ProtocolParams {
    /// Symmetric links with the given per-link loss and excess noise.
    pub fn symmetric(mean_photons: f64, loss_db: f64, xi: f64, rounds: u64, seed: u64) -> Self {
        ProtocolParams {
            n_a: mean_photons,
            n_b: mean_photons,
            loss_a_db: loss_db,
            loss_b_db: loss_db,
            xi_a: xi,
            xi_b: xi,
            gain_a: None,
            gain_b: None,
            rounds,
            seed,
            excess_noise_convention: ExcessNoiseConvention::Output,
        }
    }

    pub fn with_gains(mut self, a: f64, b: f64) -> Self {
        self.gain_a = Some(a);
        self.gain_b = Some(b);
        self
    }

    pub fn with_rounds(mut self, rounds: u64) -> Self {
        self.rounds = rounds;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("n_a", self.n_a), ("n_b", self.n_b)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in
            [("loss_a_db", self.loss_a_db), ("loss_b_db", self.loss_b_db), ("xi_a", self.xi_a), ("xi_b", self.xi_b)]
        {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be non-negative, got {v}")));
            }
        }
        for g in [self.gain_a, self.gain_b].into_iter().flatten() {
            if !g.is_finite() {
                return Err(Error::domain("gains must be finite"));
            }
        }
        if self.rounds < 2 || !self.rounds.is_multiple_of(2) {
            return Err(Error::usage(format!("rounds must be even and at least 2, got {}", self.rounds)));
        }
        Ok(())
    }

    pub fn transmissivity_a(&self) -> f64 {
        db_to_transmissivity(self.loss_a_db)
    }

    pub fn transmissivity_b(&self) -> f64 {
        db_to_transmissivity(self.loss_b_db)
    }

    /// `√(N_A/(N_A+1))`
    pub fn scale_a(&self) -> f64 {
        (self.n_a / (self.n_a + 1.0)).sqrt()
    }

    pub fn scale_b(&self) -> f64 {
        (self.n_b / (self.n_b + 1.0)).sqrt()
    }
}
