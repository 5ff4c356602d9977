//! Seeded Monte Carlo engine for pulse-by-pulse decoy-state BB84 sessions.
//!
//! The engine works at the outcome-statistics level: every optical element is
//! represented by the detection and error probabilities it induces. A session
//! is split into frames; each frame draws from an RNG substream derived from
//! the session seed and the frame index, so results are identical for any
//! batch scheduling and bit-identical across reruns with the same seed.
//!
//! Within a frame the pulses are independent and identically distributed, so
//! the engine samples the exact per-pulse outcome chain in aggregated form:
//! the frame's pulses are split over intensity classes, photon numbers,
//! detection, sifting, and errors by a cascade of exact binomial draws. This
//! is distribution-identical to looping over the pulses one at a time and
//! keeps full-length sessions cheap. The per-pulse operations
//! [`sample_pulse`], [`transmit`], and [`eve_intercept`] expose the same
//! chain one pulse at a time.

use crate::attack::{AttackProfile, ResendPolicy};
use crate::decoy::{
    yield_n, ChannelModel, ClassCounts, DecoyError, DecoyObservables, IntensityConfig,
    SessionCounts,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use thiserror::Error;

/// Photon numbers above this are lumped into the final stick-breaking bucket;
/// at source intensities <= 1 the mass beyond it is far below 1e-30.
const PHOTON_SPLIT_CAP: u32 = 100;

/// Errors from session simulation and channel calibration.
#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(&'static str),

    #[error(transparent)]
    Decoy(#[from] DecoyError),

    #[error("yield scale must supply one factor in [0, 1] per frame")]
    InvalidScale,

    #[error("calibration infeasible: {0}")]
    InfeasibleCalibration(String),

    #[error("calibration requires a defined signal QBER")]
    CalibrationNeedsQber,
}

/// Intensity class of an emitted pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntensityClass {
    Signal,
    Decoy,
    Vacuum,
}

/// Measurement basis; phase indices {0, 2} encode in Z and {1, 3} in X.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    Z,
    X,
}

/// One emitted pulse: its intensity class, the phase index k in {0..3}
/// mapping to relative phase k * pi/2, and the sampled photon number.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PulseState {
    pub class: IntensityClass,
    pub phase_index: u8,
    pub photon_number: u32,
}

impl PulseState {
    pub fn basis(&self) -> Basis {
        if self.phase_index.is_multiple_of(2) {
            Basis::Z
        } else {
            Basis::X
        }
    }
}

/// Outcome of one pulse at the receiver. `bit_error` is meaningful only when
/// the pulse was detected and the bases matched (`sifted`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionEvent {
    pub detected: bool,
    pub bob_basis: Basis,
    pub sifted: bool,
    pub bit_error: bool,
    pub class: IntensityClass,
}

/// Intercept-resend attack switched on for a fraction of the pulses.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub profile: AttackProfile,
    pub fraction: f64,
}

/// Full configuration of a simulated session.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub pulse_rate_hz: f64,
    pub pulses_per_frame: u64,
    pub source: IntensityConfig,
    pub channel: ChannelModel,
    pub attack: Option<AttackConfig>,
    pub rng_seed: u64,
}

impl SimulationConfig {
    fn validate(&self) -> Result<(), SimError> {
        if self.pulse_rate_hz.is_nan() || self.pulse_rate_hz <= 0.0 {
            return Err(SimError::InvalidConfig("pulse_rate_hz must be positive"));
        }
        if self.pulses_per_frame == 0 {
            return Err(SimError::InvalidConfig("pulses_per_frame must be >= 1"));
        }
        if let Some(attack) = &self.attack {
            if !attack.fraction.is_finite() || !(0.0..=1.0).contains(&attack.fraction) {
                return Err(SimError::InvalidConfig("attack fraction must be in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Observables plus the per-frame signal-class sifted counts that feed the
/// imaging reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionResult {
    pub observables: DecoyObservables,
    pub frame_counts: Vec<u64>,
}

fn sample_poisson(mean: f64, rng: &mut impl Rng) -> u32 {
    if mean == 0.0 {
        return 0;
    }
    let u: f64 = rng.gen();
    let mut pmf = (-mean).exp();
    let mut cumulative = pmf;
    let mut n = 0u32;
    while u > cumulative && n < 1000 {
        n += 1;
        pmf *= mean / f64::from(n);
        cumulative += pmf;
    }
    n
}

/// Draw one pulse: intensity class with the configured probabilities, phase
/// index uniform over {0..3}, photon number Poisson with the class mean.
pub fn sample_pulse(source: &IntensityConfig, rng: &mut impl Rng) -> PulseState {
    let [p_signal, p_decoy, _] = source.class_probabilities();
    let u: f64 = rng.gen();
    let (class, mean) = if u < p_signal {
        (IntensityClass::Signal, source.mu())
    } else if u < p_signal + p_decoy {
        (IntensityClass::Decoy, source.nu())
    } else {
        (IntensityClass::Vacuum, 0.0)
    };
    PulseState {
        class,
        phase_index: rng.gen_range(0..4),
        photon_number: sample_poisson(mean, rng),
    }
}

fn random_basis(rng: &mut impl Rng) -> Basis {
    if rng.gen::<bool>() {
        Basis::Z
    } else {
        Basis::X
    }
}

/// Probability that a sifted detection is in error when no attacker touched
/// the pulse: the detection is attributed to background (error 1/2) with
/// probability `Y_0 / Y_n`, otherwise to a signal photon (error `e_d`).
fn clean_flip_probability(channel: &ChannelModel, pulse_yield: f64) -> f64 {
    let p_background = if pulse_yield > 0.0 {
        (channel.background_yield() / pulse_yield).min(1.0)
    } else {
        1.0
    };
    0.5 * p_background + channel.misalignment_error() * (1.0 - p_background)
}

/// Send one pulse through the channel with no attacker in the line.
pub fn transmit(pulse: &PulseState, channel: &ChannelModel, rng: &mut impl Rng) -> DetectionEvent {
    let pulse_yield = yield_n(channel, pulse.photon_number);
    let detected = rng.gen::<f64>() < pulse_yield;
    let bob_basis = random_basis(rng);
    let sifted = detected && bob_basis == pulse.basis();
    let bit_error = sifted && rng.gen::<f64>() < clean_flip_probability(channel, pulse_yield);
    DetectionEvent {
        detected,
        bob_basis,
        sifted,
        bit_error,
        class: pulse.class,
    }
}

/// Intercept one pulse: the attacker learns the photon number, discriminates
/// the state with error floor `e_n`, and resends per the profile's policy.
/// Vacuum pulses are dropped, leaving only background at the receiver.
/// Misalignment is not added on attacked pulses; the resent state bypasses
/// the channel.
pub fn eve_intercept(
    pulse: &PulseState,
    profile: &AttackProfile,
    channel: &ChannelModel,
    rng: &mut impl Rng,
) -> DetectionEvent {
    let n = pulse.photon_number;
    let detect_probability = if n == 0 {
        channel.background_yield()
    } else {
        match profile.resend {
            ResendPolicy::Lossless => yield_n(channel, n),
            ResendPolicy::AlwaysDetected => 1.0,
        }
    };
    let detected = rng.gen::<f64>() < detect_probability;
    let bob_basis = random_basis(rng);
    let sifted = detected && bob_basis == pulse.basis();
    let flip = if n == 0 { 0.5 } else { profile.error_rate(n) };
    let bit_error = sifted && rng.gen::<f64>() < flip;
    DetectionEvent {
        detected,
        bob_basis,
        sifted,
        bit_error,
        class: pulse.class,
    }
}

fn binomial(count: u64, p: f64, rng: &mut impl Rng) -> u64 {
    if count == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        count
    } else {
        Binomial::new(count, p).expect("p in (0, 1)").sample(rng)
    }
}

/// Split `count` pulses over photon numbers by exact sequential binomial
/// conditioning on the Poisson distribution with the given mean.
fn split_photon_numbers(count: u64, mean: f64, rng: &mut impl Rng) -> Vec<(u32, u64)> {
    if mean == 0.0 || count == 0 {
        return vec![(0, count)];
    }
    let mut out = Vec::with_capacity(8);
    let mut remaining = count;
    let mut pmf = (-mean).exp();
    let mut tail = 1.0; // probability mass at photon numbers >= n
    let mut n = 0u32;
    while remaining > 0 {
        if n >= PHOTON_SPLIT_CAP || tail <= pmf {
            out.push((n, remaining));
            break;
        }
        let conditional = (pmf / tail).clamp(0.0, 1.0);
        let here = binomial(remaining, conditional, rng);
        if here > 0 {
            out.push((n, here));
        }
        remaining -= here;
        tail -= pmf;
        n += 1;
        pmf *= mean / f64::from(n);
    }
    out
}

struct FrameTally {
    counts: SessionCounts,
    signal_sifted: u64,
}

/// Outcome chain for the pulses of one (class, photon-number) cell.
#[allow(clippy::too_many_arguments)]
fn tally_cell(
    cell: &mut ClassCounts,
    pulses: u64,
    n: u32,
    scale: f64,
    channel: &ChannelModel,
    attack: Option<&AttackConfig>,
    rng: &mut impl Rng,
) {
    cell.sent += pulses;
    let attacked = match attack {
        Some(a) => binomial(pulses, a.fraction, rng),
        None => 0,
    };
    let clean = pulses - attacked;

    if clean > 0 {
        let pulse_yield = yield_n(channel, n);
        let detected = binomial(clean, scale * pulse_yield, rng);
        let sifted = binomial(detected, 0.5, rng);
        let errors = binomial(sifted, clean_flip_probability(channel, pulse_yield), rng);
        cell.detected += detected;
        cell.sifted += sifted;
        cell.errors += errors;
    }

    if attacked > 0 {
        let profile = &attack.expect("attacked pulses imply a profile").profile;
        let detect_probability = if n == 0 {
            scale * channel.background_yield()
        } else {
            match profile.resend {
                ResendPolicy::Lossless => scale * yield_n(channel, n),
                ResendPolicy::AlwaysDetected => 1.0,
            }
        };
        let flip = if n == 0 { 0.5 } else { profile.error_rate(n) };
        let detected = binomial(attacked, detect_probability, rng);
        let sifted = binomial(detected, 0.5, rng);
        let errors = binomial(sifted, flip, rng);
        cell.detected += detected;
        cell.sifted += sifted;
        cell.errors += errors;
    }
}

fn simulate_frame(cfg: &SimulationConfig, scale: f64, rng: &mut impl Rng) -> FrameTally {
    let [p_signal, p_decoy, _] = cfg.source.class_probabilities();
    let pulses = cfg.pulses_per_frame;

    let sent_signal = binomial(pulses, p_signal, rng);
    let rest = pulses - sent_signal;
    let decoy_conditional = if p_signal < 1.0 {
        (p_decoy / (1.0 - p_signal)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let sent_decoy = binomial(rest, decoy_conditional, rng);
    let sent_vacuum = rest - sent_decoy;

    let mut counts = SessionCounts::default();
    let attack = cfg.attack.as_ref();

    for (n, k) in split_photon_numbers(sent_signal, cfg.source.mu(), rng) {
        tally_cell(&mut counts.signal, k, n, scale, &cfg.channel, attack, rng);
    }
    for (n, k) in split_photon_numbers(sent_decoy, cfg.source.nu(), rng) {
        tally_cell(&mut counts.decoy, k, n, scale, &cfg.channel, attack, rng);
    }
    tally_cell(&mut counts.vacuum, sent_vacuum, 0, scale, &cfg.channel, attack, rng);

    FrameTally {
        signal_sifted: counts.signal.sifted,
        counts,
    }
}

fn frame_rng(seed: u64, frame: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(frame.wrapping_add(1));
    rng
}

fn run_frames(
    cfg: &SimulationConfig,
    n_frames: u64,
    yield_scale: Option<&[f64]>,
) -> Result<SessionResult, SimError> {
    cfg.validate()?;
    if n_frames == 0 {
        return Err(SimError::InvalidConfig("n_frames must be >= 1"));
    }
    if let Some(scale) = yield_scale {
        if scale.len() != n_frames as usize
            || scale.iter().any(|s| !s.is_finite() || !(0.0..=1.0).contains(s))
        {
            return Err(SimError::InvalidScale);
        }
    }

    let tallies: Vec<FrameTally> = (0..n_frames)
        .into_par_iter()
        .map(|frame| {
            let scale = yield_scale.map_or(1.0, |s| s[frame as usize]);
            let mut rng = frame_rng(cfg.rng_seed, frame);
            simulate_frame(cfg, scale, &mut rng)
        })
        .collect();

    let mut counts = SessionCounts::default();
    let mut frame_counts = Vec::with_capacity(tallies.len());
    for tally in &tallies {
        counts.merge(&tally.counts);
        frame_counts.push(tally.signal_sifted);
    }
    Ok(SessionResult {
        observables: DecoyObservables::from_counts(counts)?,
        frame_counts,
    })
}

/// Run `n_frames` frames of `cfg.pulses_per_frame` pulses each and accumulate
/// the decoy observables plus the per-frame signal-class sifted counts.
/// Deterministic given `cfg.rng_seed`, independent of batch scheduling.
pub fn run_session(cfg: &SimulationConfig, n_frames: u64) -> Result<SessionResult, SimError> {
    run_frames(cfg, n_frames, None)
}

/// Like [`run_session`], with every detection probability in frame `i`
/// multiplied by `yield_scale[i]`. This is how an object in the optical path
/// attenuates each pattern frame; the `AlwaysDetected` resend policy ignores
/// the scale by construction.
pub fn run_session_scaled(
    cfg: &SimulationConfig,
    yield_scale: &[f64],
) -> Result<SessionResult, SimError> {
    run_frames(cfg, yield_scale.len() as u64, Some(yield_scale))
}

/// Invert the yield and error model to match target observables: solves
/// `1 - exp(-eta mu) = (Q_mu - Y0) / (1 - Y0)` for the transmittance by
/// bisection to 1e-12 relative tolerance, then recovers the misalignment
/// error from `E_mu Q_mu = Y0 / 2 + e_d (Q_mu - Y0)`.
pub fn calibrate_channel(
    target: &DecoyObservables,
    cfg: &IntensityConfig,
) -> Result<ChannelModel, SimError> {
    let q_mu = target.q_mu();
    let y0 = target.y0();
    if q_mu < y0 {
        return Err(SimError::InfeasibleCalibration(format!(
            "target gain {q_mu} below background yield {y0}"
        )));
    }
    let rhs = (q_mu - y0) / (1.0 - y0);
    let mu = cfg.mu();
    let residual = |eta: f64| 1.0 - (-eta * mu).exp() - rhs;

    let eta = if rhs == 0.0 {
        0.0
    } else {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        if residual(hi) < 0.0 {
            return Err(SimError::InfeasibleCalibration(format!(
                "target gain {q_mu} unreachable at unit transmittance"
            )));
        }
        while hi - lo > 1e-12 * hi {
            let mid = 0.5 * (lo + hi);
            if residual(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };

    let e_mu = target.e_mu().ok_or(SimError::CalibrationNeedsQber)?;
    let denom = q_mu - y0;
    let e_d = if denom <= 0.0 {
        0.0
    } else {
        (e_mu * q_mu - 0.5 * y0) / denom
    };
    if !(0.0..=0.5).contains(&e_d) {
        return Err(SimError::InfeasibleCalibration(format!(
            "derived misalignment error {e_d} outside [0, 0.5]"
        )));
    }
    Ok(ChannelModel::new(eta, y0, e_d)?)
}
