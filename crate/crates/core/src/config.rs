//! Experiment configuration: every network and pipeline parameter, parsed
//! from and serialized to a flat `key=value` text format.
//!
//! Parsing is strict: unknown keys and out-of-range values are rejected
//! with the offending key named. Serialization is canonical (fixed key
//! order, shortest round-trip float formatting) so configs embed
//! byte-reproducibly in model files.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{BcpnnError, Result};
use crate::geometry::LayerGeometry;

/// How the recurrent layer is driven while iterating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriveMode {
    /// Initialize with the feedforward activity, then iterate on recurrent
    /// input only.
    ClampedInit,
    /// Add the feedforward support (times `drive_gain`) at every step.
    PersistentDrive,
}

impl fmt::Display for DriveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DriveMode::ClampedInit => "clamped-init",
            DriveMode::PersistentDrive => "persistent-drive",
        })
    }
}

impl FromStr for DriveMode {
    type Err = BcpnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clamped-init" => Ok(DriveMode::ClampedInit),
            "persistent-drive" => Ok(DriveMode::PersistentDrive),
            other => Err(BcpnnError::Config(format!(
                "drive_mode must be 'clamped-init' or 'persistent-drive', got '{other}'"
            ))),
        }
    }
}

/// All simulation and pipeline parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Hypercolumns in the input layer (one per pixel).
    pub h_input: usize,
    /// Minicolumns per input hypercolumn (complementary on/off pair).
    pub m_input: usize,
    /// Hypercolumns in the hidden layer.
    pub h_hidden: usize,
    /// Minicolumns per hidden hypercolumn.
    pub m_hidden: usize,
    /// Fraction of input hypercolumns feeding each hidden hypercolumn.
    pub p_conn: f64,
    /// Trace learning rate.
    pub alpha: f64,
    /// Attractor iteration cap.
    pub timesteps: usize,
    /// Feedforward training passes.
    pub epochs: usize,
    /// Number of leading passes followed by a rewiring step.
    pub rewire_epochs: usize,
    /// Fraction of each hidden hypercolumn's connections considered per
    /// rewiring step.
    pub swap_fraction: f64,
    /// Shuffle sample order per feedforward pass.
    pub shuffle: bool,
    /// Master seed; all randomness derives from it.
    pub seed: u64,
    pub drive_mode: DriveMode,
    /// Feedforward support gain in persistent-drive mode.
    pub drive_gain: f64,
    /// Attractor convergence tolerance (max-norm on activities).
    pub eps_conv: f64,
    /// Trace floor.
    pub eps_trace: f64,
    /// Recurrent training passes.
    pub recurrent_epochs: usize,
    /// Linear-probe SGD passes.
    pub probe_passes: usize,
    /// Linear-probe SGD step size.
    pub probe_step: f64,
    /// Independent probe trainings averaged in reports.
    pub probe_trials: usize,
    /// Base seed of the distorted benchmark.
    pub distortion_seed: u64,
    /// Images per (kind, level) cell of the distorted benchmark.
    pub distortion_samples_per_cell: usize,
    /// Test samples used by the similarity/prototype evaluations.
    pub eval_samples: usize,
    /// Cap on training samples per pass (0 = use all).
    pub train_limit: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            h_input: 784,
            m_input: 2,
            h_hidden: 100,
            m_hidden: 100,
            p_conn: 0.10,
            alpha: 0.0001,
            timesteps: 20,
            epochs: 3,
            rewire_epochs: 2,
            swap_fraction: 0.1,
            shuffle: true,
            seed: 42,
            drive_mode: DriveMode::ClampedInit,
            drive_gain: 1.0,
            eps_conv: 1e-6,
            eps_trace: 1e-8,
            recurrent_epochs: 1,
            probe_passes: 20,
            probe_step: 0.01,
            probe_trials: 5,
            distortion_seed: 7,
            distortion_samples_per_cell: 10,
            eval_samples: 1000,
            train_limit: 0,
        }
    }
}

macro_rules! config_keys {
    ($self:ident, $f:ident) => {
        $f!(h_input, usize);
        $f!(m_input, usize);
        $f!(h_hidden, usize);
        $f!(m_hidden, usize);
        $f!(p_conn, f64);
        $f!(alpha, f64);
        $f!(timesteps, usize);
        $f!(epochs, usize);
        $f!(rewire_epochs, usize);
        $f!(swap_fraction, f64);
        $f!(shuffle, bool);
        $f!(seed, u64);
        $f!(drive_mode, DriveMode);
        $f!(drive_gain, f64);
        $f!(eps_conv, f64);
        $f!(eps_trace, f64);
        $f!(recurrent_epochs, usize);
        $f!(probe_passes, usize);
        $f!(probe_step, f64);
        $f!(probe_trials, usize);
        $f!(distortion_seed, u64);
        $f!(distortion_samples_per_cell, usize);
        $f!(eval_samples, usize);
        $f!(train_limit, usize);
    };
}

impl ExperimentConfig {
    /// Parses `key=value` lines; `#` starts a comment. Missing keys keep
    /// their defaults; unknown or duplicate keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                BcpnnError::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if seen.contains(&key) {
                return Err(BcpnnError::Config(format!("duplicate key '{key}'")));
            }

            let mut matched = false;
            macro_rules! try_key {
                ($name:ident, $ty:ty) => {
                    if key == stringify!($name) {
                        cfg.$name = value.parse::<$ty>().map_err(|_| {
                            BcpnnError::Config(format!(
                                "key '{key}': cannot parse '{value}' as {}",
                                stringify!($ty)
                            ))
                        })?;
                        matched = true;
                    }
                };
            }
            config_keys!(cfg, try_key);
            if !matched {
                return Err(BcpnnError::Config(format!("unknown key '{key}'")));
            }
            seen.push(key);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BcpnnError::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical serialization; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        macro_rules! emit {
            ($name:ident, $ty:ty) => {
                out.push_str(&format!("{}={:?}\n", stringify!($name), self.$name));
            };
        }
        // Debug prints shortest round-trip floats; strip the quotes it puts
        // around our Display-based scalar types.
        macro_rules! emit_display {
            ($name:ident) => {
                out.push_str(&format!("{}={}\n", stringify!($name), self.$name));
            };
        }
        emit!(h_input, usize);
        emit!(m_input, usize);
        emit!(h_hidden, usize);
        emit!(m_hidden, usize);
        emit!(p_conn, f64);
        emit!(alpha, f64);
        emit!(timesteps, usize);
        emit!(epochs, usize);
        emit!(rewire_epochs, usize);
        emit!(swap_fraction, f64);
        emit!(shuffle, bool);
        emit!(seed, u64);
        emit_display!(drive_mode);
        emit!(drive_gain, f64);
        emit!(eps_conv, f64);
        emit!(eps_trace, f64);
        emit!(recurrent_epochs, usize);
        emit!(probe_passes, usize);
        emit!(probe_step, f64);
        emit!(probe_trials, usize);
        emit!(distortion_seed, u64);
        emit!(distortion_samples_per_cell, usize);
        emit!(eval_samples, usize);
        emit!(train_limit, usize);
        out
    }

    pub fn validate(&self) -> Result<()> {
        fn bad(key: &str, detail: String) -> BcpnnError {
            BcpnnError::Config(format!("key '{key}' out of range: {detail}"))
        }
        if self.h_input < 1 {
            return Err(bad("h_input", format!("{} < 1", self.h_input)));
        }
        if self.m_input != 2 {
            return Err(bad(
                "m_input",
                format!("{} (the complementary on/off code needs exactly 2)", self.m_input),
            ));
        }
        if self.h_hidden < 1 {
            return Err(bad("h_hidden", format!("{} < 1", self.h_hidden)));
        }
        if self.m_hidden < 2 {
            return Err(bad("m_hidden", format!("{} < 2", self.m_hidden)));
        }
        if !(self.p_conn > 0.0 && self.p_conn <= 1.0) {
            return Err(bad("p_conn", format!("{} not in (0, 1]", self.p_conn)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(bad("alpha", format!("{} not in (0, 1)", self.alpha)));
        }
        if self.timesteps < 1 {
            return Err(bad("timesteps", format!("{} < 1", self.timesteps)));
        }
        if !(0.0..=1.0).contains(&self.swap_fraction) {
            return Err(bad(
                "swap_fraction",
                format!("{} not in [0, 1]", self.swap_fraction),
            ));
        }
        if !(self.drive_gain >= 0.0 && self.drive_gain.is_finite()) {
            return Err(bad("drive_gain", format!("{} < 0", self.drive_gain)));
        }
        if !(self.eps_conv > 0.0 && self.eps_conv < 1.0) {
            return Err(bad("eps_conv", format!("{} not in (0, 1)", self.eps_conv)));
        }
        if !(self.eps_trace > 0.0 && self.eps_trace < 1e-3) {
            return Err(bad(
                "eps_trace",
                format!("{} not in (0, 1e-3)", self.eps_trace),
            ));
        }
        if self.recurrent_epochs < 1 {
            return Err(bad(
                "recurrent_epochs",
                format!("{} < 1", self.recurrent_epochs),
            ));
        }
        if self.probe_passes < 1 {
            return Err(bad("probe_passes", format!("{} < 1", self.probe_passes)));
        }
        if !(self.probe_step > 0.0 && self.probe_step < 10.0) {
            return Err(bad(
                "probe_step",
                format!("{} not in (0, 10)", self.probe_step),
            ));
        }
        if self.probe_trials < 1 {
            return Err(bad("probe_trials", format!("{} < 1", self.probe_trials)));
        }
        if self.distortion_samples_per_cell < 1 {
            return Err(bad(
                "distortion_samples_per_cell",
                format!("{} < 1", self.distortion_samples_per_cell),
            ));
        }
        if self.eval_samples < 2 {
            return Err(bad("eval_samples", format!("{} < 2", self.eval_samples)));
        }
        Ok(())
    }

    pub fn input_geometry(&self) -> LayerGeometry {
        LayerGeometry::new(self.h_input, self.m_input).expect("validated")
    }

    pub fn hidden_geometry(&self) -> LayerGeometry {
        LayerGeometry::new(self.h_hidden, self.m_hidden).expect("validated")
    }

    /// Desk-scale preset: hidden hypercolumns/minicolumns scale linearly,
    /// the per-pass sample budget quadratically (round(160000 * s^2),
    /// clamped by the dataset), so e.g. `s = 0.25` gives a 25x25 hidden
    /// layer trained on 10000 samples.
    pub fn apply_scale(&mut self, scale: f64) -> Result<()> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(BcpnnError::Config(format!(
                "scale must be in (0, 1], got {scale}"
            )));
        }
        if scale == 1.0 {
            return Ok(());
        }
        self.h_hidden = ((self.h_hidden as f64 * scale).round() as usize).max(1);
        self.m_hidden = ((self.m_hidden as f64 * scale).round() as usize).max(2);
        let budget = (160_000.0 * scale * scale).round() as usize;
        self.train_limit = if self.train_limit == 0 {
            budget
        } else {
            self.train_limit.min(budget)
        };
        // keep the recurrent traces' cumulative exposure at the full-scale
        // equivalent; with much fewer updates the uniform-init residue
        // dominates the joint estimates and washes out the attractors
        self.recurrent_epochs = self
            .recurrent_epochs
            .max(60_000usize.div_ceil(self.train_limit.max(1)));
        self.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let parsed = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn partial_configs_keep_defaults() {
        let cfg = ExperimentConfig::parse("alpha=0.001\nh_hidden=30\n# comment\n\n").unwrap();
        assert_eq!(cfg.alpha, 0.001);
        assert_eq!(cfg.h_hidden, 30);
        assert_eq!(cfg.m_hidden, 100);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = ExperimentConfig::parse("learning_rate=0.1").unwrap_err();
        assert!(err.to_string().contains("learning_rate"));
    }

    #[test]
    fn duplicate_key_is_rejected() {
        assert!(ExperimentConfig::parse("alpha=0.1\nalpha=0.2").is_err());
    }

    #[test]
    fn out_of_range_values_name_the_key() {
        for (text, key) in [
            ("alpha=1.5", "alpha"),
            ("p_conn=0", "p_conn"),
            ("m_input=3", "m_input"),
            ("eps_trace=0.5", "eps_trace"),
            ("eval_samples=1", "eval_samples"),
            ("drive_mode=off", "drive_mode"),
        ] {
            let err = ExperimentConfig::parse(text).unwrap_err();
            assert!(
                err.to_string().contains(key),
                "error for '{text}' does not name {key}: {err}"
            );
        }
    }

    #[test]
    fn desk_scale_quarter_preset() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_scale(0.25).unwrap();
        assert_eq!(cfg.h_hidden, 25);
        assert_eq!(cfg.m_hidden, 25);
        assert_eq!(cfg.train_limit, 10_000);
        // full scale leaves the config untouched
        let mut full = ExperimentConfig::default();
        full.apply_scale(1.0).unwrap();
        assert_eq!(full, ExperimentConfig::default());
    }

    #[test]
    fn scale_round_trips_through_text() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_scale(0.25).unwrap();
        let parsed = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(parsed, cfg);
    }
}
