//! Flat key=value run configuration shared by all CLI subcommands.
//!
//! The format is a plain text file of `section.key = value` lines with `#`
//! comment lines. Every key is known ahead of time; unknown or duplicate
//! keys are rejected. Each key can also be overridden by an environment
//! variable named `QSI_<KEY>` with dots mapped to underscores (for example
//! `QSI_SOURCE_MU` overrides `source.mu`).
//!
//! The shipped defaults reproduce the reference operating point: signal and
//! decoy intensities 0.68 and 0.18 with class probabilities 13/16, 2/16 and
//! 1/16, a 40 MHz source, 2e5 pulses per 200 Hz frame, and the measured
//! observables that the channel is calibrated against.

use crate::attack::ResendPolicy;
use crate::cgi::PatternMode;
use crate::decoy::{DecoyError, DecoyObservables, IntensityConfig};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

/// Errors from parsing, overriding, or resolving a run configuration.
#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Read(String),

    #[error("line {line}: expected 'key = value', got {text:?}")]
    Syntax { line: usize, text: String },

    #[error("unknown config key {0:?}")]
    UnknownKey(String),

    #[error("duplicate config key {0:?}")]
    DuplicateKey(String),

    #[error("bad value for {key}: {message}")]
    BadValue { key: String, message: String },

    #[error("channel.calibrate is false but {0} is not set")]
    MissingChannelKey(&'static str),

    #[error("unknown environment override {0:?}")]
    UnknownOverride(String),

    #[error(transparent)]
    Domain(#[from] DecoyError),
}

/// How bucket counts are produced by the imaging command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountMode {
    Analytic,
    MonteCarlo,
}

impl fmt::Display for CountMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CountMode::Analytic => "analytic",
            CountMode::MonteCarlo => "monte-carlo",
        })
    }
}

impl FromStr for CountMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "analytic" => Ok(CountMode::Analytic),
            "monte-carlo" => Ok(CountMode::MonteCarlo),
            other => Err(format!("expected analytic|monte-carlo, got {other:?}")),
        }
    }
}

/// Channel parameters either come from explicit keys or are calibrated
/// against the configured observables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelSpec {
    Calibrate,
    Explicit {
        transmittance: f64,
        background_yield: f64,
        misalignment: f64,
    },
}

/// The merged configuration for every subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source_mu: f64,
    pub source_nu: f64,
    pub source_p_signal: f64,
    pub source_p_decoy: f64,
    pub source_p_vacuum: f64,

    pub observables_q_mu: f64,
    pub observables_q_nu: f64,
    pub observables_y0: f64,
    pub observables_e_mu: f64,
    pub observables_e_nu: f64,

    pub channel_calibrate: bool,
    pub channel_transmittance: Option<f64>,
    pub channel_background_yield: Option<f64>,
    pub channel_misalignment: Option<f64>,

    pub sim_pulse_rate_hz: f64,
    pub sim_pulses_per_frame: u64,
    pub sim_frames: u64,
    pub sim_seed: u64,

    pub attack_enabled: bool,
    pub attack_fraction: f64,
    pub attack_resend: ResendPolicy,
    pub attack_n_max: u32,

    pub imaging_mode: PatternMode,
    pub imaging_grid_width: usize,
    pub imaging_grid_height: usize,
    pub imaging_patterns: usize,
    pub imaging_pattern_seed: u64,
    pub imaging_object: String,
    pub imaging_source: CountMode,
    pub imaging_kappa: f64,
    pub imaging_shot_noise: bool,
    pub imaging_leakage: f64,

    pub monitor_min_decoy_sifted: u64,

    pub output_dir: String,

    pub keyrate_f_ec: f64,
    pub keyrate_sifting_factor: f64,

    pub sweep_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            source_mu: 0.68,
            source_nu: 0.18,
            source_p_signal: 13.0 / 16.0,
            source_p_decoy: 2.0 / 16.0,
            source_p_vacuum: 1.0 / 16.0,

            observables_q_mu: 2.69e-4,
            observables_q_nu: 7.32e-5,
            observables_y0: 3.0e-6,
            observables_e_mu: 0.0213,
            observables_e_nu: 0.0399,

            channel_calibrate: true,
            channel_transmittance: None,
            channel_background_yield: None,
            channel_misalignment: None,

            sim_pulse_rate_hz: 40e6,
            sim_pulses_per_frame: 200_000,
            sim_frames: 400,
            sim_seed: 1,

            attack_enabled: false,
            attack_fraction: 1.0,
            attack_resend: ResendPolicy::Lossless,
            attack_n_max: 10,

            imaging_mode: PatternMode::RasterScan,
            imaging_grid_width: 20,
            imaging_grid_height: 20,
            imaging_patterns: 400,
            imaging_pattern_seed: 7,
            imaging_object: "assets/plus20.txt".to_string(),
            imaging_source: CountMode::MonteCarlo,
            imaging_kappa: 1000.0,
            imaging_shot_noise: false,
            imaging_leakage: 2.0,

            monitor_min_decoy_sifted: 100,

            output_dir: "out".to_string(),

            keyrate_f_ec: 1.16,
            keyrate_sifting_factor: 0.5,

            sweep_steps: 6,
        }
    }
}

fn bad_value(key: &str, message: impl fmt::Display) -> ConfigError {
    ConfigError::BadValue {
        key: key.to_string(),
        message: message.to_string(),
    }
}

fn parse_into<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| bad_value(key, e))
}

fn parse_resend(key: &str, value: &str) -> Result<ResendPolicy, ConfigError> {
    match value {
        "lossless" => Ok(ResendPolicy::Lossless),
        "always-detected" => Ok(ResendPolicy::AlwaysDetected),
        other => Err(bad_value(
            key,
            format!("expected lossless|always-detected, got {other:?}"),
        )),
    }
}

fn resend_name(policy: ResendPolicy) -> &'static str {
    match policy {
        ResendPolicy::Lossless => "lossless",
        ResendPolicy::AlwaysDetected => "always-detected",
    }
}

fn parse_pattern_mode(key: &str, value: &str) -> Result<PatternMode, ConfigError> {
    match value {
        "raster" => Ok(PatternMode::RasterScan),
        "random" => Ok(PatternMode::Random),
        other => Err(bad_value(
            key,
            format!("expected raster|random, got {other:?}"),
        )),
    }
}

fn pattern_mode_name(mode: PatternMode) -> &'static str {
    match mode {
        PatternMode::RasterScan => "raster",
        PatternMode::Random => "random",
    }
}

/// Every known key in canonical serialization order.
pub const KEYS: &[&str] = &[
    "source.mu",
    "source.nu",
    "source.p_signal",
    "source.p_decoy",
    "source.p_vacuum",
    "observables.q_mu",
    "observables.q_nu",
    "observables.y0",
    "observables.e_mu",
    "observables.e_nu",
    "channel.calibrate",
    "channel.transmittance",
    "channel.background_yield",
    "channel.misalignment",
    "sim.pulse_rate_hz",
    "sim.pulses_per_frame",
    "sim.frames",
    "sim.seed",
    "attack.enabled",
    "attack.fraction",
    "attack.resend",
    "attack.n_max",
    "imaging.mode",
    "imaging.grid_width",
    "imaging.grid_height",
    "imaging.patterns",
    "imaging.pattern_seed",
    "imaging.object",
    "imaging.source",
    "imaging.kappa",
    "imaging.shot_noise",
    "imaging.leakage",
    "monitor.min_decoy_sifted",
    "output.dir",
    "keyrate.f_ec",
    "keyrate.sifting_factor",
    "sweep.steps",
];

impl RunConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "source.mu" => self.source_mu = parse_into(key, value)?,
            "source.nu" => self.source_nu = parse_into(key, value)?,
            "source.p_signal" => self.source_p_signal = parse_into(key, value)?,
            "source.p_decoy" => self.source_p_decoy = parse_into(key, value)?,
            "source.p_vacuum" => self.source_p_vacuum = parse_into(key, value)?,
            "observables.q_mu" => self.observables_q_mu = parse_into(key, value)?,
            "observables.q_nu" => self.observables_q_nu = parse_into(key, value)?,
            "observables.y0" => self.observables_y0 = parse_into(key, value)?,
            "observables.e_mu" => self.observables_e_mu = parse_into(key, value)?,
            "observables.e_nu" => self.observables_e_nu = parse_into(key, value)?,
            "channel.calibrate" => self.channel_calibrate = parse_into(key, value)?,
            "channel.transmittance" => {
                self.channel_transmittance = Some(parse_into(key, value)?)
            }
            "channel.background_yield" => {
                self.channel_background_yield = Some(parse_into(key, value)?)
            }
            "channel.misalignment" => self.channel_misalignment = Some(parse_into(key, value)?),
            "sim.pulse_rate_hz" => self.sim_pulse_rate_hz = parse_into(key, value)?,
            "sim.pulses_per_frame" => self.sim_pulses_per_frame = parse_into(key, value)?,
            "sim.frames" => self.sim_frames = parse_into(key, value)?,
            "sim.seed" => self.sim_seed = parse_into(key, value)?,
            "attack.enabled" => self.attack_enabled = parse_into(key, value)?,
            "attack.fraction" => self.attack_fraction = parse_into(key, value)?,
            "attack.resend" => self.attack_resend = parse_resend(key, value)?,
            "attack.n_max" => self.attack_n_max = parse_into(key, value)?,
            "imaging.mode" => self.imaging_mode = parse_pattern_mode(key, value)?,
            "imaging.grid_width" => self.imaging_grid_width = parse_into(key, value)?,
            "imaging.grid_height" => self.imaging_grid_height = parse_into(key, value)?,
            "imaging.patterns" => self.imaging_patterns = parse_into(key, value)?,
            "imaging.pattern_seed" => self.imaging_pattern_seed = parse_into(key, value)?,
            "imaging.object" => self.imaging_object = value.to_string(),
            "imaging.source" => {
                self.imaging_source = value.parse().map_err(|e| bad_value(key, e))?
            }
            "imaging.kappa" => self.imaging_kappa = parse_into(key, value)?,
            "imaging.shot_noise" => self.imaging_shot_noise = parse_into(key, value)?,
            "imaging.leakage" => self.imaging_leakage = parse_into(key, value)?,
            "monitor.min_decoy_sifted" => {
                self.monitor_min_decoy_sifted = parse_into(key, value)?
            }
            "output.dir" => self.output_dir = value.to_string(),
            "keyrate.f_ec" => self.keyrate_f_ec = parse_into(key, value)?,
            "keyrate.sifting_factor" => self.keyrate_sifting_factor = parse_into(key, value)?,
            "sweep.steps" => self.sweep_steps = parse_into(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "source.mu" => self.source_mu.to_string(),
            "source.nu" => self.source_nu.to_string(),
            "source.p_signal" => self.source_p_signal.to_string(),
            "source.p_decoy" => self.source_p_decoy.to_string(),
            "source.p_vacuum" => self.source_p_vacuum.to_string(),
            "observables.q_mu" => self.observables_q_mu.to_string(),
            "observables.q_nu" => self.observables_q_nu.to_string(),
            "observables.y0" => self.observables_y0.to_string(),
            "observables.e_mu" => self.observables_e_mu.to_string(),
            "observables.e_nu" => self.observables_e_nu.to_string(),
            "channel.calibrate" => self.channel_calibrate.to_string(),
            "channel.transmittance" => self.channel_transmittance?.to_string(),
            "channel.background_yield" => self.channel_background_yield?.to_string(),
            "channel.misalignment" => self.channel_misalignment?.to_string(),
            "sim.pulse_rate_hz" => self.sim_pulse_rate_hz.to_string(),
            "sim.pulses_per_frame" => self.sim_pulses_per_frame.to_string(),
            "sim.frames" => self.sim_frames.to_string(),
            "sim.seed" => self.sim_seed.to_string(),
            "attack.enabled" => self.attack_enabled.to_string(),
            "attack.fraction" => self.attack_fraction.to_string(),
            "attack.resend" => resend_name(self.attack_resend).to_string(),
            "attack.n_max" => self.attack_n_max.to_string(),
            "imaging.mode" => pattern_mode_name(self.imaging_mode).to_string(),
            "imaging.grid_width" => self.imaging_grid_width.to_string(),
            "imaging.grid_height" => self.imaging_grid_height.to_string(),
            "imaging.patterns" => self.imaging_patterns.to_string(),
            "imaging.pattern_seed" => self.imaging_pattern_seed.to_string(),
            "imaging.object" => self.imaging_object.clone(),
            "imaging.source" => self.imaging_source.to_string(),
            "imaging.kappa" => self.imaging_kappa.to_string(),
            "imaging.shot_noise" => self.imaging_shot_noise.to_string(),
            "imaging.leakage" => self.imaging_leakage.to_string(),
            "monitor.min_decoy_sifted" => self.monitor_min_decoy_sifted.to_string(),
            "output.dir" => self.output_dir.clone(),
            "keyrate.f_ec" => self.keyrate_f_ec.to_string(),
            "keyrate.sifting_factor" => self.keyrate_sifting_factor.to_string(),
            "sweep.steps" => self.sweep_steps.to_string(),
            _ => return None,
        })
    }

    /// Parse a config text on top of the defaults. Unknown and duplicate
    /// keys are rejected; `#` lines and blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        let mut seen = Vec::new();
        for (index, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: index + 1,
                    text: raw.to_string(),
                });
            };
            let key = key.trim();
            let value = value.trim();
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey(key.to_string()));
            }
            if seen.contains(&key) {
                return Err(ConfigError::DuplicateKey(key.to_string()));
            }
            seen.push(key);
            config.set(key, value)?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical serialization: every set key, fixed order, `key = value`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            if let Some(value) = self.get(key) {
                out.push_str(&format!("{key} = {value}\n"));
            }
        }
        out
    }

    /// Apply `QSI_*` environment overrides from the given variable list.
    /// Every known key maps to `QSI_` plus the uppercased key with dots as
    /// underscores; unknown `QSI_`-prefixed names are rejected.
    pub fn apply_overrides<I>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let env_name =
            |key: &str| format!("QSI_{}", key.to_uppercase().replace('.', "_"));
        for (name, value) in vars {
            if !name.starts_with("QSI_") {
                continue;
            }
            let Some(key) = KEYS.iter().find(|key| env_name(key) == name) else {
                return Err(ConfigError::UnknownOverride(name));
            };
            self.set(key, value.trim())?;
        }
        Ok(())
    }

    /// Apply overrides from the process environment.
    pub fn apply_env_overrides(&mut self) -> Result<(), ConfigError> {
        self.apply_overrides(std::env::vars())
    }

    pub fn intensity(&self) -> Result<IntensityConfig, ConfigError> {
        Ok(IntensityConfig::new(
            self.source_mu,
            self.source_nu,
            [
                self.source_p_signal,
                self.source_p_decoy,
                self.source_p_vacuum,
            ],
        )?)
    }

    pub fn observables(&self) -> Result<DecoyObservables, ConfigError> {
        Ok(DecoyObservables::from_rates(
            self.observables_q_mu,
            self.observables_q_nu,
            self.observables_y0,
            self.observables_e_mu,
            self.observables_e_nu,
        )?)
    }

    pub fn channel_spec(&self) -> Result<ChannelSpec, ConfigError> {
        if self.channel_calibrate {
            return Ok(ChannelSpec::Calibrate);
        }
        Ok(ChannelSpec::Explicit {
            transmittance: self
                .channel_transmittance
                .ok_or(ConfigError::MissingChannelKey("channel.transmittance"))?,
            background_yield: self
                .channel_background_yield
                .ok_or(ConfigError::MissingChannelKey("channel.background_yield"))?,
            misalignment: self
                .channel_misalignment
                .ok_or(ConfigError::MissingChannelKey("channel.misalignment"))?,
        })
    }
}
