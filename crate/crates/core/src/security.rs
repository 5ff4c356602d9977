//! Security monitor: compares the measured decoy QBER against the analytical
//! lower bound and estimates a secret key rate.
//!
//! The verdict applies a 3-sigma binomial margin around the measured QBER so
//! finite samples cannot produce a confident call either way: ambiguity is
//! reported as inconclusive rather than secure. Observables built from bare
//! rates (no counts) are treated as exact, with zero standard error.

use crate::decoy::{
    qber_lower_bound, BoundValue, DecoyError, DecoyObservables, IntensityConfig,
};
use std::fmt;
use thiserror::Error;

/// Errors from verdicts and key-rate estimation.
#[derive(Debug, Error, PartialEq)]
pub enum SecurityError {
    #[error(transparent)]
    Decoy(#[from] DecoyError),

    #[error("{name} = {value} outside {range}")]
    ParameterOutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("key rate requires defined QBERs for both signal and decoy classes")]
    UndefinedQber,
}

/// Outcome of the security comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Secure,
    Compromised,
    Inconclusive,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Secure => "secure",
            Decision::Compromised => "compromised",
            Decision::Inconclusive => "inconclusive",
        })
    }
}

/// Rates and fractions entering the key-rate estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyRateParams {
    pub pulse_rate_hz: f64,
    /// Probability that a pulse belongs to the signal class.
    pub signal_fraction: f64,
    /// Fraction of detections surviving basis reconciliation.
    pub sifting_factor: f64,
    /// Error-correction inefficiency relative to the Shannon limit.
    pub error_correction_efficiency: f64,
}

impl Default for KeyRateParams {
    fn default() -> Self {
        Self {
            pulse_rate_hz: 40e6,
            signal_fraction: 13.0 / 16.0,
            sifting_factor: 0.5,
            error_correction_efficiency: 1.16,
        }
    }
}

impl KeyRateParams {
    fn validate(&self) -> Result<(), SecurityError> {
        let check = |name: &'static str, value: f64, lo: f64, hi: f64, range: &'static str| {
            if !value.is_finite() || value < lo || value > hi {
                Err(SecurityError::ParameterOutOfRange { name, value, range })
            } else {
                Ok(())
            }
        };
        check("pulse_rate_hz", self.pulse_rate_hz, f64::MIN_POSITIVE, f64::MAX, "(0, inf)")?;
        check("signal_fraction", self.signal_fraction, 0.0, 1.0, "[0, 1]")?;
        check("sifting_factor", self.sifting_factor, 0.0, 1.0, "[0, 1]")?;
        check(
            "error_correction_efficiency",
            self.error_correction_efficiency,
            1.0,
            f64::MAX,
            "[1, inf)",
        )?;
        Ok(())
    }
}

/// The full security assessment of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct SecurityVerdict {
    pub measured_e_nu: Option<f64>,
    pub e_nu_standard_error: Option<f64>,
    pub bound: Option<BoundValue>,
    pub decision: Decision,
    pub key_rate_bps: f64,
    pub decoy_sifted: Option<u64>,
    pub decoy_errors: Option<u64>,
}

impl SecurityVerdict {
    fn display_opt<T: fmt::Display>(value: &Option<T>) -> String {
        value
            .as_ref()
            .map_or_else(|| "undefined".to_string(), |v| v.to_string())
    }

    /// Flat key=value rendering, one line per field, stable order.
    pub fn key_value_block(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("decision={}\n", self.decision));
        out.push_str(&format!(
            "measured_e_nu={}\n",
            Self::display_opt(&self.measured_e_nu)
        ));
        out.push_str(&format!(
            "e_nu_standard_error={}\n",
            Self::display_opt(&self.e_nu_standard_error)
        ));
        out.push_str(&format!(
            "bound_e_nu_l={}\n",
            Self::display_opt(&self.bound.map(|b| b.value))
        ));
        out.push_str(&format!(
            "bound_clamped={}\n",
            Self::display_opt(&self.bound.map(|b| b.clamped))
        ));
        out.push_str(&format!("key_rate_bps={}\n", self.key_rate_bps));
        out.push_str(&format!(
            "decoy_sifted={}\n",
            Self::display_opt(&self.decoy_sifted)
        ));
        out.push_str(&format!(
            "decoy_errors={}\n",
            Self::display_opt(&self.decoy_errors)
        ));
        out
    }

    pub fn csv_header() -> &'static str {
        "decision,measured_e_nu,e_nu_standard_error,bound_e_nu_l,key_rate_bps,decoy_sifted,decoy_errors"
    }

    /// One CSV row matching [`SecurityVerdict::csv_header`]; undefined fields
    /// are left empty.
    pub fn csv_row(&self) -> String {
        let opt = |s: &Option<String>| s.clone().unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.decision,
            opt(&self.measured_e_nu.map(|v| v.to_string())),
            opt(&self.e_nu_standard_error.map(|v| v.to_string())),
            opt(&self.bound.map(|b| b.value.to_string())),
            self.key_rate_bps,
            opt(&self.decoy_sifted.map(|v| v.to_string())),
            opt(&self.decoy_errors.map(|v| v.to_string())),
        )
    }
}

/// Binary entropy in bits; zero at the endpoints by continuity.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// Lower bound on the single-photon yield from the weak+vacuum decoy
/// estimates, and the matching gain and error-rate bound pieces.
fn single_photon_bounds(
    obs: &DecoyObservables,
    cfg: &IntensityConfig,
) -> Option<(f64, f64, f64)> {
    let mu = cfg.mu();
    let nu = cfg.nu();
    let e_nu = obs.e_nu()?;
    let y1_lower = mu / (mu * nu - nu * nu)
        * (obs.q_nu() * nu.exp()
            - obs.q_mu() * mu.exp() * (nu * nu) / (mu * mu)
            - (mu * mu - nu * nu) / (mu * mu) * obs.y0());
    if y1_lower <= 0.0 {
        return None;
    }
    let q1_lower = y1_lower * mu * (-mu).exp();
    let e1_upper =
        ((e_nu * obs.q_nu() * nu.exp() - 0.5 * obs.y0()) / (y1_lower * nu)).clamp(0.0, 1.0);
    Some((y1_lower, q1_lower, e1_upper))
}

/// Secret key rate in bits per second from the standard weak+vacuum decoy
/// bound: error-correction cost on the full signal gain, privacy
/// amplification paid only on the bounded single-photon fraction. Negative
/// rates floor at zero.
pub fn secret_key_rate(
    obs: &DecoyObservables,
    cfg: &IntensityConfig,
    params: &KeyRateParams,
) -> Result<f64, SecurityError> {
    params.validate()?;
    let e_mu = obs.e_mu().ok_or(SecurityError::UndefinedQber)?;
    if obs.e_nu().is_none() {
        return Err(SecurityError::UndefinedQber);
    }
    if e_mu >= 0.5 {
        return Ok(0.0);
    }
    let Some((_, q1_lower, e1_upper)) = single_photon_bounds(obs, cfg) else {
        return Ok(0.0);
    };
    let q = params.sifting_factor * params.signal_fraction;
    let error_correction =
        obs.q_mu() * params.error_correction_efficiency * binary_entropy(e_mu);
    let privacy = q1_lower * (1.0 - binary_entropy(e1_upper));
    let per_pulse = q * (privacy - error_correction);
    Ok((per_pulse * params.pulse_rate_hz).max(0.0))
}

/// Compare the measured decoy QBER against the analytical bound with a
/// 3-sigma binomial margin and attach the key-rate estimate.
///
/// Inconclusive when the decoy class has no sifted detections, fewer than
/// `min_decoy_sifted` of them, or when the margin straddles the bound.
pub fn verdict(
    obs: &DecoyObservables,
    cfg: &IntensityConfig,
    e2: f64,
    params: &KeyRateParams,
    min_decoy_sifted: u64,
) -> Result<SecurityVerdict, SecurityError> {
    let bound = match qber_lower_bound(obs, cfg, e2) {
        Ok(b) => Some(b),
        Err(DecoyError::UndefinedBound) => None,
        Err(e) => return Err(e.into()),
    };
    let key_rate_bps = match secret_key_rate(obs, cfg, params) {
        Ok(rate) => rate,
        Err(SecurityError::UndefinedQber) => 0.0,
        Err(e) => return Err(e),
    };

    let (decoy_sifted, decoy_errors) = match obs.counts() {
        Some(counts) => (Some(counts.decoy.sifted), Some(counts.decoy.errors)),
        None => (None, None),
    };
    let measured_e_nu = obs.e_nu();

    let standard_error = match (measured_e_nu, decoy_sifted) {
        (Some(e), Some(n)) if n > 0 => Some((e * (1.0 - e) / n as f64).sqrt()),
        (Some(_), None) => Some(0.0),
        _ => None,
    };

    let enough_samples = decoy_sifted.is_none_or(|n| n >= min_decoy_sifted);
    let decision = match (measured_e_nu, standard_error, bound) {
        (Some(e), Some(se), Some(bound)) if enough_samples => {
            if e + 3.0 * se < bound.value {
                Decision::Secure
            } else if e - 3.0 * se >= bound.value {
                Decision::Compromised
            } else {
                Decision::Inconclusive
            }
        }
        _ => Decision::Inconclusive,
    };

    Ok(SecurityVerdict {
        measured_e_nu,
        e_nu_standard_error: standard_error,
        bound,
        decision,
        key_rate_bps,
        decoy_sifted,
        decoy_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoy::{ClassCounts, SessionCounts};

    const E2_FLOOR: f64 = (2.0 - std::f64::consts::SQRT_2) / 4.0;
    const REFERENCE_KEY_RATE: f64 = 571.0;

    fn reference_observables() -> DecoyObservables {
        DecoyObservables::from_rates(2.69e-4, 7.32e-5, 3.0e-6, 0.0213, 0.0399).unwrap()
    }

    fn reference_source() -> IntensityConfig {
        IntensityConfig::new(0.68, 0.18, [13.0 / 16.0, 2.0 / 16.0, 1.0 / 16.0]).unwrap()
    }

    fn counted_observables(sifted: u64, errors: u64) -> DecoyObservables {
        // Reference-like gains with explicit decoy tallies.
        let decoy_sent = ((sifted * 2) as f64 / 7.32e-5) as u64;
        DecoyObservables::from_counts(SessionCounts {
            signal: ClassCounts {
                sent: 8_125_000_000,
                detected: 2_185_625,
                sifted: 1_092_812,
                errors: 23_277,
            },
            decoy: ClassCounts {
                sent: decoy_sent,
                detected: sifted * 2,
                sifted,
                errors,
            },
            vacuum: ClassCounts {
                sent: 625_000_000,
                detected: 1875,
                sifted: 937,
                errors: 468,
            },
        })
        .unwrap()
    }

    #[test]
    fn entropy_endpoints_and_midpoint() {
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert!((binary_entropy(0.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reference_observables_are_secure() {
        let verdict = verdict(
            &reference_observables(),
            &reference_source(),
            E2_FLOOR,
            &KeyRateParams::default(),
            100,
        )
        .unwrap();
        assert_eq!(verdict.decision, Decision::Secure);
        let bound = verdict.bound.unwrap();
        assert!((bound.value - 0.1451).abs() < 0.002);
        assert!(verdict.key_rate_bps > 0.0);
    }

    #[test]
    fn half_qber_with_large_counts_is_compromised() {
        let obs = counted_observables(1_000_000, 500_000);
        let verdict = verdict(
            &obs,
            &reference_source(),
            E2_FLOOR,
            &KeyRateParams::default(),
            100,
        )
        .unwrap();
        assert_eq!(verdict.decision, Decision::Compromised);
    }

    #[test]
    fn sparse_decoy_samples_are_inconclusive() {
        let obs = counted_observables(50, 2);
        let verdict = verdict(
            &obs,
            &reference_source(),
            E2_FLOOR,
            &KeyRateParams::default(),
            100,
        )
        .unwrap();
        assert_eq!(verdict.decision, Decision::Inconclusive);
    }

    #[test]
    fn missing_decoy_qber_is_inconclusive() {
        let obs = DecoyObservables::from_counts(SessionCounts {
            signal: ClassCounts {
                sent: 1000,
                detected: 10,
                sifted: 5,
                errors: 0,
            },
            decoy: ClassCounts {
                sent: 1000,
                detected: 0,
                sifted: 0,
                errors: 0,
            },
            vacuum: ClassCounts::default(),
        })
        .unwrap();
        let verdict = verdict(
            &obs,
            &reference_source(),
            E2_FLOOR,
            &KeyRateParams::default(),
            100,
        )
        .unwrap();
        assert_eq!(verdict.decision, Decision::Inconclusive);
    }

    // Raising the measured decoy QBER with everything else fixed never moves
    // the decision back toward secure.
    #[test]
    fn decision_is_monotone_in_the_measured_qber() {
        let rank = |d: Decision| match d {
            Decision::Secure => 0,
            Decision::Inconclusive => 1,
            Decision::Compromised => 2,
        };
        for sifted in [150u64, 1000, 100_000] {
            let mut previous = 0;
            for errors_permille in 0..=500 {
                let errors = sifted * errors_permille / 1000;
                let obs = counted_observables(sifted, errors);
                let v = verdict(
                    &obs,
                    &reference_source(),
                    E2_FLOOR,
                    &KeyRateParams::default(),
                    100,
                )
                .unwrap();
                let r = rank(v.decision);
                assert!(
                    r >= previous,
                    "decision regressed at sifted={sifted}, errors={errors}"
                );
                previous = r;
            }
        }
    }

    #[test]
    fn key_rate_is_within_a_factor_of_three_of_the_reference() {
        let rate = secret_key_rate(
            &reference_observables(),
            &reference_source(),
            &KeyRateParams::default(),
        )
        .unwrap();
        assert!(
            (REFERENCE_KEY_RATE / 3.0..=REFERENCE_KEY_RATE * 3.0).contains(&rate),
            "key rate {rate} bps vs reference {REFERENCE_KEY_RATE} bps"
        );
    }

    #[test]
    fn all_background_channel_distills_nothing() {
        let obs = DecoyObservables::from_rates(3e-6, 3e-6, 3e-6, 0.5, 0.5).unwrap();
        let rate = secret_key_rate(&obs, &reference_source(), &KeyRateParams::default()).unwrap();
        assert_eq!(rate, 0.0);
    }

    // Perfect channel: no errors anywhere, so the rate collapses to
    // q * Q_1^L * pulse_rate, which we re-derive by hand here.
    #[test]
    fn perfect_channel_rate_matches_hand_evaluation() {
        let mu = 0.68f64;
        let nu = 0.18f64;
        let q_mu = 1.0 - (-mu).exp();
        let q_nu = 1.0 - (-nu).exp();
        let obs = DecoyObservables::from_rates(q_mu, q_nu, 0.0, 0.0, 0.0).unwrap();
        let params = KeyRateParams::default();
        let rate = secret_key_rate(&obs, &reference_source(), &params).unwrap();

        let y1 = mu / (mu * nu - nu * nu)
            * (q_nu * nu.exp() - q_mu * mu.exp() * (nu / mu).powi(2));
        let q1 = y1 * mu * (-mu).exp();
        let expected = params.sifting_factor * params.signal_fraction * q1 * params.pulse_rate_hz;
        assert!(
            (rate - expected).abs() < 1e-9 * expected,
            "rate {rate} vs hand evaluation {expected}"
        );
    }

    #[test]
    fn rate_never_increases_with_either_qber() {
        let params = KeyRateParams::default();
        let cfg = reference_source();
        let mut previous = f64::INFINITY;
        for step in 0..50 {
            let e = step as f64 * 0.01;
            let obs = DecoyObservables::from_rates(2.69e-4, 7.32e-5, 3.0e-6, e, 0.0399).unwrap();
            let rate = secret_key_rate(&obs, &cfg, &params).unwrap();
            assert!(rate <= previous + 1e-12, "rate rose at e_mu={e}");
            previous = rate;
        }
        previous = f64::INFINITY;
        for step in 0..50 {
            let e = step as f64 * 0.01;
            let obs = DecoyObservables::from_rates(2.69e-4, 7.32e-5, 3.0e-6, 0.0213, e).unwrap();
            let rate = secret_key_rate(&obs, &cfg, &params).unwrap();
            assert!(rate <= previous + 1e-12, "rate rose at e_nu={e}");
            previous = rate;
        }
    }

    #[test]
    fn verdict_serializes_to_key_values_and_csv() {
        let verdict = verdict(
            &reference_observables(),
            &reference_source(),
            E2_FLOOR,
            &KeyRateParams::default(),
            100,
        )
        .unwrap();
        let block = verdict.key_value_block();
        assert!(block.contains("decision=secure"));
        assert!(block.contains("measured_e_nu=0.0399"));
        assert!(block.contains("decoy_sifted=undefined"));
        let row = verdict.csv_row();
        assert!(row.starts_with("secure,0.0399,0,"));
        assert_eq!(
            row.split(',').count(),
            SecurityVerdict::csv_header().split(',').count()
        );
    }
}
