//! Closed-form decoy-state mathematics for a weak+vacuum BB84 source.
//!
//! Everything here is a pure function of its inputs: Poisson photon-number
//! statistics, the independent-photon yield model, overall gains, the decoy
//! inequalities that make the weak+vacuum method work, and the analytical
//! lower bound on the decoy-class QBER that any intercept-resend attacker
//! must induce. The Monte Carlo engine and the security monitor both consume
//! these functions; none of them hold state.

use thiserror::Error;

/// Errors from decoy-state computations.
#[derive(Debug, Error, PartialEq)]
pub enum DecoyError {
    #[error("mean photon number must be finite and nonnegative, got {0}")]
    InvalidMean(f64),

    #[error("intensity pair must satisfy 0 < nu < mu <= 1, got mu={mu}, nu={nu}")]
    InvalidIntensityPair { mu: f64, nu: f64 },

    #[error("class probabilities must be nonnegative and sum to 1, got [{0}, {1}, {2}]")]
    InvalidClassProbabilities(f64, f64, f64),

    #[error("{name} = {value} outside {range}")]
    ParameterOutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("rates inconsistent with raw counts: {0}")]
    InconsistentCounts(&'static str),

    #[error("decoy gain is zero; the QBER lower bound is undefined")]
    UndefinedBound,

    #[error("P3(mu) and P3(nu) coincide; joint yield bound is degenerate")]
    DegenerateWeights,
}

/// Source intensities for the weak+vacuum decoy protocol: signal mean `mu`,
/// decoy mean `nu`, and the per-pulse class probabilities.
///
/// The constructor enforces `0 < nu < mu <= 1`, which is the validity
/// condition for the decoy inequalities used by the bounds below.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityConfig {
    mu: f64,
    nu: f64,
    p_signal: f64,
    p_decoy: f64,
    p_vacuum: f64,
}

impl IntensityConfig {
    pub fn new(mu: f64, nu: f64, probabilities: [f64; 3]) -> Result<Self, DecoyError> {
        if !(mu.is_finite() && nu.is_finite() && 0.0 < nu && nu < mu && mu <= 1.0) {
            return Err(DecoyError::InvalidIntensityPair { mu, nu });
        }
        let [p_signal, p_decoy, p_vacuum] = probabilities;
        let sum = p_signal + p_decoy + p_vacuum;
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(DecoyError::InvalidClassProbabilities(
                p_signal, p_decoy, p_vacuum,
            ));
        }
        Ok(Self {
            mu,
            nu,
            p_signal,
            p_decoy,
            p_vacuum,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Probabilities of emitting a (signal, decoy, vacuum) pulse.
    pub fn class_probabilities(&self) -> [f64; 3] {
        [self.p_signal, self.p_decoy, self.p_vacuum]
    }
}

/// Channel plus detector, reduced to the three numbers the yield model needs:
/// end-to-end single-photon detection probability `transmittance`, background
/// yield `background_yield` (dark counts and stray light), and the
/// probability `misalignment_error` that a detected signal photon lands in
/// the wrong detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelModel {
    transmittance: f64,
    background_yield: f64,
    misalignment_error: f64,
}

impl ChannelModel {
    pub fn new(
        transmittance: f64,
        background_yield: f64,
        misalignment_error: f64,
    ) -> Result<Self, DecoyError> {
        let check = |name: &'static str, value: f64, lo: f64, hi: f64, range: &'static str| {
            if !value.is_finite() || value < lo || value > hi {
                Err(DecoyError::ParameterOutOfRange { name, value, range })
            } else {
                Ok(())
            }
        };
        check("transmittance", transmittance, 0.0, 1.0, "[0, 1]")?;
        check("background_yield", background_yield, 0.0, 1.0, "[0, 1]")?;
        check(
            "misalignment_error",
            misalignment_error,
            0.0,
            0.5,
            "[0, 0.5]",
        )?;
        Ok(Self {
            transmittance,
            background_yield,
            misalignment_error,
        })
    }

    pub fn transmittance(&self) -> f64 {
        self.transmittance
    }

    pub fn background_yield(&self) -> f64 {
        self.background_yield
    }

    pub fn misalignment_error(&self) -> f64 {
        self.misalignment_error
    }
}

/// Raw per-class tallies from a protocol session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub sent: u64,
    pub detected: u64,
    pub sifted: u64,
    pub errors: u64,
}

impl ClassCounts {
    pub fn merge(&mut self, other: &ClassCounts) {
        self.sent += other.sent;
        self.detected += other.detected;
        self.sifted += other.sifted;
        self.errors += other.errors;
    }
}

/// Tallies for all three intensity classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SessionCounts {
    pub signal: ClassCounts,
    pub decoy: ClassCounts,
    pub vacuum: ClassCounts,
}

impl SessionCounts {
    pub fn merge(&mut self, other: &SessionCounts) {
        self.signal.merge(&other.signal);
        self.decoy.merge(&other.decoy);
        self.vacuum.merge(&other.vacuum);
    }
}

/// The accumulated decoy-state observables: gains, background yield, and
/// per-class QBERs, optionally backed by the raw counts they came from.
///
/// QBERs are `None` when a class produced no sifted detections, which the
/// security monitor treats as an inconclusive measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoyObservables {
    q_mu: f64,
    q_nu: f64,
    y0: f64,
    e_mu: Option<f64>,
    e_nu: Option<f64>,
    counts: Option<SessionCounts>,
}

impl DecoyObservables {
    /// Build observables from externally measured rates (no raw counts).
    pub fn from_rates(
        q_mu: f64,
        q_nu: f64,
        y0: f64,
        e_mu: f64,
        e_nu: f64,
    ) -> Result<Self, DecoyError> {
        for (name, value) in [
            ("q_mu", q_mu),
            ("q_nu", q_nu),
            ("y0", y0),
            ("e_mu", e_mu),
            ("e_nu", e_nu),
        ] {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(DecoyError::ParameterOutOfRange {
                    name,
                    value,
                    range: "[0, 1]",
                });
            }
        }
        Ok(Self {
            q_mu,
            q_nu,
            y0,
            e_mu: Some(e_mu),
            e_nu: Some(e_nu),
            counts: None,
        })
    }

    /// Derive rates from raw tallies. Gains are detections per sent pulse;
    /// QBERs are errors per sifted detection and undefined on empty classes.
    pub fn from_counts(counts: SessionCounts) -> Result<Self, DecoyError> {
        let rate = |c: &ClassCounts| -> Result<f64, DecoyError> {
            if c.detected > c.sent || c.sifted > c.detected || c.errors > c.sifted {
                return Err(DecoyError::InconsistentCounts(
                    "require errors <= sifted <= detected <= sent",
                ));
            }
            Ok(if c.sent == 0 {
                0.0
            } else {
                c.detected as f64 / c.sent as f64
            })
        };
        let qber = |c: &ClassCounts| (c.sifted > 0).then(|| c.errors as f64 / c.sifted as f64);
        Ok(Self {
            q_mu: rate(&counts.signal)?,
            q_nu: rate(&counts.decoy)?,
            y0: rate(&counts.vacuum)?,
            e_mu: qber(&counts.signal),
            e_nu: qber(&counts.decoy),
            counts: Some(counts),
        })
    }

    pub fn q_mu(&self) -> f64 {
        self.q_mu
    }

    pub fn q_nu(&self) -> f64 {
        self.q_nu
    }

    pub fn y0(&self) -> f64 {
        self.y0
    }

    pub fn e_mu(&self) -> Option<f64> {
        self.e_mu
    }

    pub fn e_nu(&self) -> Option<f64> {
        self.e_nu
    }

    pub fn counts(&self) -> Option<&SessionCounts> {
        self.counts.as_ref()
    }
}

/// A bound clamped to its physical range after evaluation. `clamped` records
/// whether the raw value fell outside, which happens when noisy Monte Carlo
/// observables push the closed forms slightly out of range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundValue {
    pub value: f64,
    pub clamped: bool,
}

/// Poisson probability of finding `n` photons in a pulse of mean `mean`.
///
/// Evaluated in log space so large `n` underflows gracefully to zero instead
/// of overflowing the factorial.
pub fn poisson_pmf(mean: f64, n: u32) -> Result<f64, DecoyError> {
    if !mean.is_finite() || mean < 0.0 {
        return Err(DecoyError::InvalidMean(mean));
    }
    if mean == 0.0 {
        return Ok(if n == 0 { 1.0 } else { 0.0 });
    }
    if n == 0 {
        return Ok((-mean).exp());
    }
    let ln_factorial: f64 = (1..=n).map(|k| f64::from(k).ln()).sum();
    Ok((f64::from(n) * mean.ln() - mean - ln_factorial).exp())
}

/// Yield of an `n`-photon pulse under the independent-photon model
/// `Y_n = 1 - (1 - eta)^n (1 - Y_0)`: a detection fires if any photon
/// survives the channel or the background fires.
pub fn yield_n(channel: &ChannelModel, n: u32) -> f64 {
    if n == 0 {
        return channel.background_yield;
    }
    let survive_none = (1.0 - channel.transmittance).powi(n as i32);
    (1.0 - survive_none * (1.0 - channel.background_yield)).clamp(0.0, 1.0)
}

/// Overall gain of a class with mean photon number `mean`: the Poisson
/// mixture of the per-photon-number yields, summed until the remaining
/// Poisson tail mass drops below 1e-15.
pub fn overall_gain(channel: &ChannelModel, mean: f64) -> Result<f64, DecoyError> {
    if !mean.is_finite() || mean < 0.0 {
        return Err(DecoyError::InvalidMean(mean));
    }
    let mut pmf = (-mean).exp();
    let mut cumulative = pmf;
    let mut gain = pmf * yield_n(channel, 0);
    let mut n = 0u32;
    while 1.0 - cumulative >= 1e-15 {
        n += 1;
        pmf *= mean / f64::from(n);
        cumulative += pmf;
        gain += pmf * yield_n(channel, n);
    }
    Ok(gain.clamp(0.0, 1.0))
}

/// Pass/fail record for the decoy inequalities behind the joint yield bound:
/// the Poisson ratio condition for every `n` in `3..=n_max`, plus the one-
/// and two-photon orderings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InequalityReport {
    pub n_max: u32,
    pub ratio_condition: bool,
    pub first_ratio_failure: Option<u32>,
    pub p1_ordered: bool,
    pub p2_ordered: bool,
}

impl InequalityReport {
    pub fn all_pass(&self) -> bool {
        self.ratio_condition && self.p1_ordered && self.p2_ordered
    }
}

/// Verify `P_n(mu)/P_n(nu) >= P_3(mu)/P_3(nu)` for `n = 3..=n_max` together
/// with `P_1(mu) > P_1(nu)` and `P_2(mu) > P_2(nu)`.
///
/// The ratio condition is checked in log space; direct PMF ratios underflow
/// well before `n = 100` at these intensities.
pub fn decoy_inequality_check(
    mu: f64,
    nu: f64,
    n_max: u32,
) -> Result<InequalityReport, DecoyError> {
    if !(mu.is_finite() && nu.is_finite() && 0.0 < nu && nu < mu && mu <= 1.0) {
        return Err(DecoyError::InvalidIntensityPair { mu, nu });
    }
    // ln [P_n(mu)/P_n(nu)] = (nu - mu) + n ln(mu/nu)
    let offset = nu - mu;
    let slope = mu.ln() - nu.ln();
    let ln_ratio_3 = offset + 3.0 * slope;
    let mut first_ratio_failure = None;
    for n in 3..=n_max.max(3) {
        let ln_ratio_n = offset + f64::from(n) * slope;
        if ln_ratio_n < ln_ratio_3 {
            first_ratio_failure = Some(n);
            break;
        }
    }
    let p1_ordered = poisson_pmf(mu, 1)? > poisson_pmf(nu, 1)?;
    let p2_ordered = poisson_pmf(mu, 2)? > poisson_pmf(nu, 2)?;
    Ok(InequalityReport {
        n_max,
        ratio_condition: first_ratio_failure.is_none(),
        first_ratio_failure,
        p1_ordered,
        p2_ordered,
    })
}

fn p3_weights(cfg: &IntensityConfig) -> Result<(f64, f64, f64, f64, f64), DecoyError> {
    let p3_mu = poisson_pmf(cfg.mu, 3)?;
    let p3_nu = poisson_pmf(cfg.nu, 3)?;
    let p0_mu = poisson_pmf(cfg.mu, 0)?;
    let p0_nu = poisson_pmf(cfg.nu, 0)?;
    let denom = p3_mu - p3_nu;
    if denom <= 0.0 {
        return Err(DecoyError::DegenerateWeights);
    }
    Ok((p3_mu, p3_nu, p0_mu, p0_nu, denom))
}

/// Lower bound on the joint one- and two-photon contribution
/// `P_1(nu) Y_1 + P_2(nu) Y_2`, derived from the measured gains and the
/// background yield. Clamped below at zero.
pub fn joint_yield_lower_bound(
    obs: &DecoyObservables,
    cfg: &IntensityConfig,
) -> Result<BoundValue, DecoyError> {
    let (p3_mu, p3_nu, p0_mu, p0_nu, denom) = p3_weights(cfg)?;
    let raw =
        (p3_mu * obs.q_nu - p3_nu * obs.q_mu - (p0_nu * p3_mu - p0_mu * p3_nu) * obs.y0) / denom;
    Ok(BoundValue {
        value: raw.max(0.0),
        clamped: raw < 0.0,
    })
}

/// Analytical lower bound on the decoy-class QBER under a full
/// intercept-resend attack: background errors at rate 1/2 plus the
/// two-photon error floor `e2` applied to the joint yield bound, divided by
/// the decoy gain. Clamped to `[0, 0.5]`.
pub fn qber_lower_bound(
    obs: &DecoyObservables,
    cfg: &IntensityConfig,
    e2: f64,
) -> Result<BoundValue, DecoyError> {
    if obs.q_nu <= 0.0 {
        return Err(DecoyError::UndefinedBound);
    }
    if !e2.is_finite() || !(0.0..=0.5).contains(&e2) {
        return Err(DecoyError::ParameterOutOfRange {
            name: "e2",
            value: e2,
            range: "[0, 0.5]",
        });
    }
    let (p3_mu, p3_nu, p0_mu, p0_nu, denom) = p3_weights(cfg)?;
    let gain_term = (p3_mu * obs.q_nu - p3_nu * obs.q_mu) / denom;
    let background_term = (p0_nu * p3_mu - p0_mu * p3_nu) / denom * obs.y0;
    let raw = (0.5 * p0_nu * obs.y0 + e2 * gain_term - e2 * background_term) / obs.q_nu;
    Ok(BoundValue {
        value: raw.clamp(0.0, 0.5),
        clamped: !(0.0..=0.5).contains(&raw),
    })
}
