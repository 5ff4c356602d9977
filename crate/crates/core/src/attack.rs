//! Minimum-error statistics for the intercept-resend eavesdropper.
//!
//! The attacker learns the photon number `n` of each pulse by a QND
//! measurement, applies a filter that reweights the four symmetric phase
//! states, and discriminates them with the square-root measurement. The error
//! rate of that chain depends on the state overlaps `c_j(n)` and the filter
//! weights `alpha_j`; minimizing it over the filter gives the per-photon-number
//! error floors `e_n` that the decoy bound builds on.

use thiserror::Error;

/// Errors from eavesdropper-statistics computations.
#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("overlap coefficients are defined for n >= 1; vacuum carries no state information")]
    VacuumPulse,

    #[error("filter weights must lie in [0, 1], got {0}")]
    WeightOutOfRange(f64),

    #[error("degenerate filter: every weighted coefficient is zero")]
    DegenerateFilter,
}

/// The four overlap coefficients `c_j(n)` of the filtered n-photon states.
///
/// They satisfy `sum_j c_j(n)^2 = 1` by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapCoefficients {
    n: u32,
    c: [f64; 4],
}

impl OverlapCoefficients {
    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn values(&self) -> [f64; 4] {
        self.c
    }
}

/// Filter weights `alpha_j`, taken real and nonnegative: the error rate
/// depends only on the magnitudes of the products `alpha_j c_j`, so phases
/// never help the attacker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterWeights {
    alpha: [f64; 4],
}

impl FilterWeights {
    pub fn new(alpha: [f64; 4]) -> Result<Self, AttackError> {
        for &a in &alpha {
            if !a.is_finite() || !(0.0..=1.0).contains(&a) {
                return Err(AttackError::WeightOutOfRange(a));
            }
        }
        Ok(Self { alpha })
    }

    pub fn values(&self) -> [f64; 4] {
        self.alpha
    }
}

/// How the attacker hands the identified state back to the receiver.
///
/// `Lossless` resends with the pulse's no-attack detection probability, so
/// the gains stay untouched and only the QBER betrays the attack.
/// `AlwaysDetected` forces a detection, which is useful for validating the
/// QBER bound at full statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResendPolicy {
    Lossless,
    AlwaysDetected,
}

/// Per-photon-number error floors for the attack, precomputed up to `n_max`.
/// Photon numbers above `n_max` are treated as error-free for the attacker,
/// which is the conservative choice for the defender.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackProfile {
    error_rates: Vec<f64>,
    pub resend: ResendPolicy,
}

impl AttackProfile {
    /// Minimize the filtered-SRM error rate for every `n` in `1..=n_max`.
    pub fn standard(n_max: u32, resend: ResendPolicy) -> Self {
        let error_rates = (1..=n_max)
            .map(|n| min_error_rate(n).expect("n >= 1").error_rate)
            .collect();
        Self {
            error_rates,
            resend,
        }
    }

    pub fn n_max(&self) -> u32 {
        self.error_rates.len() as u32
    }

    /// Error floor for an `n`-photon pulse; zero beyond the precomputed cap.
    pub fn error_rate(&self, n: u32) -> f64 {
        if n == 0 {
            return 0.0;
        }
        self.error_rates
            .get(n as usize - 1)
            .copied()
            .unwrap_or(0.0)
    }
}

/// Closed-form overlap coefficients of the four n-photon phase states:
/// `c_{0,2}(n) = sqrt(1/4 +- 2^-(1+n/2) cos(pi n / 4))` and
/// `c_{1,3}(n) = sqrt(1/4 +- 2^-(1+n/2) sin(pi n / 4))`.
pub fn overlap_coefficients(n: u32) -> Result<OverlapCoefficients, AttackError> {
    if n == 0 {
        return Err(AttackError::VacuumPulse);
    }
    let scale = 2f64.powf(-(1.0 + f64::from(n) / 2.0));
    let angle = std::f64::consts::FRAC_PI_4 * f64::from(n);
    let (sin, cos) = angle.sin_cos();
    let radicand = |sign: f64, trig: f64| (0.25 + sign * scale * trig).max(0.0).sqrt();
    Ok(OverlapCoefficients {
        n,
        c: [
            radicand(1.0, cos),
            radicand(1.0, sin),
            radicand(-1.0, cos),
            radicand(-1.0, sin),
        ],
    })
}

fn error_from_gamma(gamma: &[f64; 4]) -> f64 {
    let even = gamma[0].abs() + gamma[2].abs();
    let odd = gamma[1].abs() + gamma[3].abs();
    let norm: f64 = gamma.iter().map(|g| g * g).sum();
    0.5 - (even * odd) / (2.0 * norm)
}

/// Error rate of the filtered square-root measurement for the given overlap
/// coefficients and filter weights: `1/2 - (sum of cross products of the
/// weighted coefficients) / (2 sum of their squares)`.
pub fn srm_error_rate(
    coeffs: &OverlapCoefficients,
    weights: &FilterWeights,
) -> Result<f64, AttackError> {
    let mut gamma = [0.0; 4];
    for ((g, &alpha), &c) in gamma.iter_mut().zip(&weights.alpha).zip(&coeffs.c) {
        *g = alpha * c;
    }
    if gamma.iter().all(|g| *g == 0.0) {
        return Err(AttackError::DegenerateFilter);
    }
    Ok(error_from_gamma(&gamma))
}

/// A minimized error rate together with the filter weights that achieve it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinErrorRate {
    pub error_rate: f64,
    pub weights: FilterWeights,
}

/// Minimize [`srm_error_rate`] over the filter weights by deterministic
/// multi-start cyclic coordinate ascent.
///
/// Each one-dimensional subproblem has a closed-form optimum: maximizing
/// `(x + a) v / (x^2 + b)` over `x` gives `x = -a + sqrt(a^2 + b)`, projected
/// onto the admissible interval. Sixteen fixed starting points cover the box;
/// the first converged minimum within tolerance wins.
pub fn min_error_rate(n: u32) -> Result<MinErrorRate, AttackError> {
    let coeffs = overlap_coefficients(n)?;
    let c = coeffs.c;

    let mut best_error = f64::INFINITY;
    let mut best_gamma = [0.0; 4];

    for start in 0..16u32 {
        // Start grid {0.25, 1.0}^4 indexed by the bits of `start`.
        let mut gamma = [0.0; 4];
        for j in 0..4 {
            let alpha = if start & (1 << j) != 0 { 1.0 } else { 0.25 };
            gamma[j] = alpha * c[j];
        }
        if gamma.iter().all(|g| *g == 0.0) {
            continue;
        }

        let mut error = error_from_gamma(&gamma);
        for _ in 0..1000 {
            for j in 0..4 {
                if c[j] == 0.0 {
                    continue;
                }
                // Partner within the same (even/odd) pair and the squared
                // norm of the other three coordinates.
                let partner = gamma[j ^ 2];
                let rest: f64 = (0..4)
                    .filter(|&k| k != j)
                    .map(|k| gamma[k] * gamma[k])
                    .sum();
                let unconstrained = -partner + (partner * partner + rest).sqrt();
                gamma[j] = unconstrained.clamp(0.0, c[j]);
            }
            let new_error = error_from_gamma(&gamma);
            if (error - new_error).abs() < 1e-12 {
                error = new_error;
                break;
            }
            error = new_error;
        }

        if error < best_error {
            best_error = error;
            best_gamma = gamma;
        }
    }

    let mut alpha = [0.0; 4];
    for j in 0..4 {
        if c[j] > 0.0 {
            alpha[j] = (best_gamma[j] / c[j]).clamp(0.0, 1.0);
        }
    }
    Ok(MinErrorRate {
        error_rate: best_error.clamp(0.0, 0.5),
        weights: FilterWeights { alpha },
    })
}
