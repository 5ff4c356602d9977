//! Computational ghost imaging on a block grid: pattern generation, the
//! bucket-count forward model, correlation reconstruction, and SNR
//! measurement.
//!
//! The imaging side never sees individual photons. It works with the
//! per-pattern bucket counts `B_i`, either analytic expectations of the
//! object/pattern overlap or measured per-frame sifted counts from a
//! simulated session, and recovers the object by correlating the counts
//! with the known patterns.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson};
use rand::SeedableRng;
use thiserror::Error;

/// Errors from pattern generation, the forward model, and reconstruction.
#[derive(Debug, Error, PartialEq)]
pub enum CgiError {
    #[error("pattern grid must have nonzero dimensions")]
    EmptyGrid,

    #[error("need at least one pattern")]
    NoPatterns,

    #[error("raster-scan needs exactly width*height patterns, got {got} for a grid of {want}")]
    RasterCountMismatch { got: usize, want: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),

    #[error("object transmission values must be finite and lie in [0, 1]")]
    InvalidTransmission,

    #[error("{name} must be finite and nonnegative")]
    InvalidCountParameter { name: &'static str },

    #[error("reconstruction weights must be finite")]
    InvalidWeights,

    #[error("need at least two patterns to center the reconstruction")]
    TooFewPatterns,

    #[error("invalid region: {0}")]
    InvalidRegion(&'static str),
}

/// How the binary masks cover the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternMode {
    /// One block on per pattern, each block exactly once, pattern `i`
    /// lighting block `i` in row-major order.
    RasterScan,
    /// Every mask entry an independent fair coin.
    Random,
}

/// A set of binary illumination masks on a `width` x `height` block grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    width: usize,
    height: usize,
    mode: PatternMode,
    seed: Option<u64>,
    masks: Vec<Vec<u8>>,
}

impl PatternSet {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn mode(&self) -> PatternMode {
        self.mode
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Mask entries of pattern `i`, row-major, one 0/1 byte per block.
    pub fn mask(&self, i: usize) -> &[u8] {
        &self.masks[i]
    }

    pub fn masks(&self) -> &[Vec<u8>] {
        &self.masks
    }
}

/// Per-block transmission of the imaged object, row-major on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMask {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ObjectMask {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, CgiError> {
        if width == 0 || height == 0 {
            return Err(CgiError::EmptyGrid);
        }
        if values.len() != width * height {
            return Err(CgiError::DimensionMismatch(
                "object values must cover the grid",
            ));
        }
        if values
            .iter()
            .any(|t| !t.is_finite() || !(0.0..=1.0).contains(t))
        {
            return Err(CgiError::InvalidTransmission);
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Reconstructed image on the block grid, with the provenance metadata
/// needed to regenerate it.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub n_patterns: usize,
    pub mode: PatternMode,
    pub seed: Option<u64>,
}

/// SNR measurement: `signal_mean` is the bright/dark mean difference,
/// `background_variance` the variance of the dark region, and `snr_db` is
/// `10 log10(signal_mean^2 / background_variance)`. A zero-variance
/// background reports `infinite` with an infinity sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrReport {
    pub signal_mean: f64,
    pub background_variance: f64,
    pub snr_db: f64,
    pub infinite: bool,
}

/// Where bucket counts come from: the analytic overlap model with optional
/// shot noise, or measured per-frame sifted counts from a session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CountSource<'a> {
    Analytic { kappa: f64, shot_noise: bool },
    Measured { frame_counts: &'a [u64] },
}

/// Generate `n` binary masks. Raster-scan mode requires `n` to equal the
/// grid size and ignores the seed; random mode draws fair coins from a
/// generator seeded with `seed`, so the set is reproducible.
pub fn generate_patterns(
    mode: PatternMode,
    width: usize,
    height: usize,
    n: usize,
    seed: u64,
) -> Result<PatternSet, CgiError> {
    if width == 0 || height == 0 {
        return Err(CgiError::EmptyGrid);
    }
    if n == 0 {
        return Err(CgiError::NoPatterns);
    }
    let blocks = width * height;
    let (seed, masks) = match mode {
        PatternMode::RasterScan => {
            if n != blocks {
                return Err(CgiError::RasterCountMismatch {
                    got: n,
                    want: blocks,
                });
            }
            let masks = (0..n)
                .map(|i| {
                    let mut mask = vec![0u8; blocks];
                    mask[i] = 1;
                    mask
                })
                .collect();
            (None, masks)
        }
        PatternMode::Random => {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let masks = (0..n)
                .map(|_| (0..blocks).map(|_| u8::from(rng.gen::<bool>())).collect())
                .collect();
            (Some(seed), masks)
        }
    };
    Ok(PatternSet {
        width,
        height,
        mode,
        seed,
        masks,
    })
}

fn check_grids(object: &ObjectMask, patterns: &PatternSet) -> Result<(), CgiError> {
    if object.width != patterns.width || object.height != patterns.height {
        return Err(CgiError::DimensionMismatch(
            "object and patterns use different grids",
        ));
    }
    Ok(())
}

/// Fraction of each pattern's illuminated energy the object transmits:
/// `sum(T * I_i) / sum(I_i)`, zero for an all-off mask. This is the
/// per-frame detection-probability scale for a Monte Carlo imaging session.
pub fn energy_fractions(object: &ObjectMask, patterns: &PatternSet) -> Result<Vec<f64>, CgiError> {
    check_grids(object, patterns)?;
    Ok(patterns
        .masks
        .iter()
        .map(|mask| {
            let mut on = 0u64;
            let mut transmitted = 0.0;
            for (t, &m) in object.values.iter().zip(mask) {
                if m != 0 {
                    on += 1;
                    transmitted += t;
                }
            }
            if on == 0 {
                0.0
            } else {
                transmitted / on as f64
            }
        })
        .collect())
}

/// Noise-free expected analytic bucket values `kappa * sum(T * I_i) +
/// leakage`, before any rounding or shot noise. The forward model is linear
/// in the object transmission.
pub fn analytic_expectations(
    object: &ObjectMask,
    patterns: &PatternSet,
    kappa: f64,
    leakage: f64,
) -> Result<Vec<f64>, CgiError> {
    check_grids(object, patterns)?;
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(CgiError::InvalidCountParameter { name: "kappa" });
    }
    if !leakage.is_finite() || leakage < 0.0 {
        return Err(CgiError::InvalidCountParameter { name: "leakage" });
    }
    Ok(patterns
        .masks
        .iter()
        .map(|mask| {
            let overlap: f64 = object
                .values
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m != 0)
                .map(|(t, _)| *t)
                .sum();
            kappa * overlap + leakage
        })
        .collect())
}

fn poisson_count(mean: f64, rng: &mut impl Rng) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

/// Produce one bucket count per pattern.
///
/// Analytic mode evaluates the overlap model, adds the constant diffraction
/// `leakage`, and either rounds (noiseless) or draws Poisson shot noise.
/// Measured mode takes per-frame sifted counts from a session run with this
/// pattern set's [`energy_fractions`] and adds Poisson leakage counts on top.
pub fn bucket_counts(
    object: &ObjectMask,
    patterns: &PatternSet,
    source: CountSource,
    leakage: f64,
    rng: &mut impl Rng,
) -> Result<Vec<u64>, CgiError> {
    match source {
        CountSource::Analytic { kappa, shot_noise } => {
            let expectations = analytic_expectations(object, patterns, kappa, leakage)?;
            Ok(expectations
                .into_iter()
                .map(|mean| {
                    if shot_noise {
                        poisson_count(mean, rng)
                    } else {
                        mean.round() as u64
                    }
                })
                .collect())
        }
        CountSource::Measured { frame_counts } => {
            check_grids(object, patterns)?;
            if !leakage.is_finite() || leakage < 0.0 {
                return Err(CgiError::InvalidCountParameter { name: "leakage" });
            }
            if frame_counts.len() != patterns.len() {
                return Err(CgiError::DimensionMismatch(
                    "one frame count per pattern required",
                ));
            }
            Ok(frame_counts
                .iter()
                .map(|&c| c + poisson_count(leakage, rng))
                .collect())
        }
    }
}

/// Correlation reconstruction: `O(x,y) = (1/N) sum_i (B_i - <B>)
/// (I_i(x,y) - <I(x,y)>)`, with per-pixel pattern means. The centering makes
/// the output invariant under adding a constant to all weights and
/// equivariant under scaling them.
pub fn reconstruct(patterns: &PatternSet, weights: &[f64]) -> Result<ImageGrid, CgiError> {
    let n = patterns.len();
    if weights.len() != n {
        return Err(CgiError::DimensionMismatch(
            "one weight per pattern required",
        ));
    }
    if n < 2 {
        return Err(CgiError::TooFewPatterns);
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(CgiError::InvalidWeights);
    }

    let blocks = patterns.width * patterns.height;
    let mean_weight: f64 = weights.iter().sum::<f64>() / n as f64;
    let mut mean_mask = vec![0.0f64; blocks];
    for mask in &patterns.masks {
        for (m, &bit) in mean_mask.iter_mut().zip(mask) {
            *m += f64::from(bit);
        }
    }
    for m in &mut mean_mask {
        *m /= n as f64;
    }

    let mut values = vec![0.0f64; blocks];
    for (mask, &weight) in patterns.masks.iter().zip(weights) {
        let centered_weight = weight - mean_weight;
        for ((value, &bit), mean) in values.iter_mut().zip(mask).zip(&mean_mask) {
            *value += centered_weight * (f64::from(bit) - mean);
        }
    }
    for value in &mut values {
        *value /= n as f64;
    }

    Ok(ImageGrid {
        width: patterns.width,
        height: patterns.height,
        values,
        n_patterns: n,
        mode: patterns.mode,
        seed: patterns.seed,
    })
}

/// Bright/dark region masks derived from a ground-truth object: blocks with
/// transmission >= 0.5 count as signal, the rest as background.
pub fn default_regions(object: &ObjectMask) -> (Vec<bool>, Vec<bool>) {
    let signal: Vec<bool> = object.values.iter().map(|&t| t >= 0.5).collect();
    let background = signal.iter().map(|s| !s).collect();
    (signal, background)
}

/// Measure the SNR of a reconstruction given explicit bright and dark region
/// masks (one flag per block, disjoint, both nonempty).
pub fn snr_db(
    image: &ImageGrid,
    signal_region: &[bool],
    background_region: &[bool],
) -> Result<SnrReport, CgiError> {
    let blocks = image.width * image.height;
    if signal_region.len() != blocks || background_region.len() != blocks {
        return Err(CgiError::InvalidRegion("region masks must cover the grid"));
    }
    if signal_region
        .iter()
        .zip(background_region)
        .any(|(s, b)| *s && *b)
    {
        return Err(CgiError::InvalidRegion("regions must be disjoint"));
    }
    let collect = |region: &[bool]| -> Vec<f64> {
        image
            .values
            .iter()
            .zip(region)
            .filter(|(_, &keep)| keep)
            .map(|(v, _)| *v)
            .collect()
    };
    let signal = collect(signal_region);
    let background = collect(background_region);
    if signal.is_empty() || background.is_empty() {
        return Err(CgiError::InvalidRegion("regions must be nonempty"));
    }

    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let signal_mean = mean(&signal) - mean(&background);
    let background_mean = mean(&background);
    let background_variance = background
        .iter()
        .map(|v| (v - background_mean).powi(2))
        .sum::<f64>()
        / background.len() as f64;

    let (snr_db, infinite) = if background_variance == 0.0 {
        (f64::INFINITY, true)
    } else {
        (
            10.0 * (signal_mean * signal_mean / background_variance).log10(),
            false,
        )
    };
    Ok(SnrReport {
        signal_mean,
        background_variance,
        snr_db,
        infinite,
    })
}

/// Pearson correlation between two equal-length samples; `None` when either
/// side has zero variance.
pub fn pearson_correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return None;
    }
    Some(cov / (var_a * var_b).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// 20x20 "+" object: a four-block-wide horizontal and vertical bar.
    pub(crate) fn plus_object() -> ObjectMask {
        let (w, h) = (20, 20);
        let mut values = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let horizontal = (8..12).contains(&y) && (3..17).contains(&x);
                let vertical = (8..12).contains(&x) && (3..17).contains(&y);
                if horizontal || vertical {
                    values[y * w + x] = 1.0;
                }
            }
        }
        ObjectMask::new(w, h, values).unwrap()
    }

    fn rng() -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(0xc91)
    }

    #[test]
    fn raster_set_visits_every_block_once() {
        let patterns = generate_patterns(PatternMode::RasterScan, 20, 20, 400, 0).unwrap();
        assert_eq!(patterns.len(), 400);
        let mut per_block = vec![0u32; 400];
        for i in 0..patterns.len() {
            for (block, &bit) in patterns.mask(i).iter().enumerate() {
                per_block[block] += u32::from(bit);
            }
            let on: u32 = patterns.mask(i).iter().map(|&b| u32::from(b)).sum();
            assert_eq!(on, 1, "pattern {i} lights {on} blocks");
        }
        assert!(per_block.iter().all(|&c| c == 1));
    }

    #[test]
    fn raster_two_by_two_is_the_unit_masks_in_row_major_order() {
        let patterns = generate_patterns(PatternMode::RasterScan, 2, 2, 4, 0).unwrap();
        assert_eq!(patterns.mask(0), &[1, 0, 0, 0]);
        assert_eq!(patterns.mask(1), &[0, 1, 0, 0]);
        assert_eq!(patterns.mask(2), &[0, 0, 1, 0]);
        assert_eq!(patterns.mask(3), &[0, 0, 0, 1]);
    }

    #[test]
    fn raster_pattern_count_must_match_grid() {
        assert_eq!(
            generate_patterns(PatternMode::RasterScan, 20, 20, 399, 0),
            Err(CgiError::RasterCountMismatch {
                got: 399,
                want: 400
            })
        );
    }

    #[test]
    fn random_patterns_are_reproducible_fair_coins() {
        let a = generate_patterns(PatternMode::Random, 20, 20, 400, 99).unwrap();
        let b = generate_patterns(PatternMode::Random, 20, 20, 400, 99).unwrap();
        assert_eq!(a, b);
        let other = generate_patterns(PatternMode::Random, 20, 20, 400, 100).unwrap();
        assert_ne!(a, other);

        let total_on: u64 = a
            .masks()
            .iter()
            .flat_map(|m| m.iter())
            .map(|&b| u64::from(b))
            .sum();
        let entries = (400 * 400) as f64;
        let fraction = total_on as f64 / entries;
        let sigma = (0.25 / entries).sqrt();
        assert!(
            (fraction - 0.5).abs() < 5.0 * sigma,
            "on-fraction {fraction}"
        );
    }

    #[test]
    fn uniform_object_gives_equal_analytic_counts() {
        let object = ObjectMask::new(2, 2, vec![1.0; 4]).unwrap();
        let patterns = generate_patterns(PatternMode::RasterScan, 2, 2, 4, 0).unwrap();
        let counts = bucket_counts(
            &object,
            &patterns,
            CountSource::Analytic {
                kappa: 1000.0,
                shot_noise: false,
            },
            0.0,
            &mut rng(),
        )
        .unwrap();
        assert_eq!(counts, vec![1000; 4]);
    }

    #[test]
    fn delta_object_lights_exactly_its_own_pattern() {
        let mut values = vec![0.0; 400];
        values[123] = 1.0;
        let object = ObjectMask::new(20, 20, values).unwrap();
        let patterns = generate_patterns(PatternMode::RasterScan, 20, 20, 400, 0).unwrap();
        let counts = bucket_counts(
            &object,
            &patterns,
            CountSource::Analytic {
                kappa: 500.0,
                shot_noise: false,
            },
            0.0,
            &mut rng(),
        )
        .unwrap();
        for (i, &c) in counts.iter().enumerate() {
            assert_eq!(c, if i == 123 { 500 } else { 0 });
        }
    }

    #[test]
    fn analytic_model_is_linear_in_the_object() {
        let patterns = generate_patterns(PatternMode::Random, 4, 4, 32, 5).unwrap();
        let mut rng = rng();
        let t1: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..0.5)).collect();
        let t2: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..0.5)).collect();
        let sum: Vec<f64> = t1.iter().zip(&t2).map(|(a, b)| a + b).collect();
        let b1 = analytic_expectations(
            &ObjectMask::new(4, 4, t1).unwrap(),
            &patterns,
            300.0,
            0.0,
        )
        .unwrap();
        let b2 = analytic_expectations(
            &ObjectMask::new(4, 4, t2).unwrap(),
            &patterns,
            300.0,
            0.0,
        )
        .unwrap();
        let b_sum = analytic_expectations(
            &ObjectMask::new(4, 4, sum).unwrap(),
            &patterns,
            300.0,
            0.0,
        )
        .unwrap();
        for ((a, b), s) in b1.iter().zip(&b2).zip(&b_sum) {
            assert!((a + b - s).abs() < 1e-9, "{a} + {b} != {s}");
        }
    }

    #[test]
    fn equal_weights_reconstruct_to_zero() {
        let patterns = generate_patterns(PatternMode::Random, 5, 5, 50, 3).unwrap();
        let image = reconstruct(&patterns, &vec![17.0; 50]).unwrap();
        assert!(image.values.iter().all(|&v| v == 0.0));
    }

    // Hand expansion of the correlation sum for the 2x2 raster case with
    // B = kappa * delta_{ik}: the lit block gets 3 kappa / 16, every other
    // block -kappa / 16.
    #[test]
    fn raster_delta_weights_match_hand_expansion() {
        let patterns = generate_patterns(PatternMode::RasterScan, 2, 2, 4, 0).unwrap();
        let kappa = 100.0;
        for k in 0..4 {
            let mut weights = vec![0.0; 4];
            weights[k] = kappa;
            let image = reconstruct(&patterns, &weights).unwrap();
            for (block, &value) in image.values.iter().enumerate() {
                let expected = if block == k {
                    3.0 * kappa / 16.0
                } else {
                    -kappa / 16.0
                };
                assert!(
                    (value - expected).abs() < 1e-12,
                    "k={k} block={block}: {value} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn raster_delta_peaks_at_the_open_block() {
        let patterns = generate_patterns(PatternMode::RasterScan, 20, 20, 400, 0).unwrap();
        let mut weights = vec![0.0; 400];
        weights[217] = 913.0;
        let image = reconstruct(&patterns, &weights).unwrap();
        let argmax = image
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, 217);
    }

    #[test]
    fn noiseless_raster_reconstruction_correlates_with_the_object() {
        let object = plus_object();
        let patterns = generate_patterns(PatternMode::RasterScan, 20, 20, 400, 0).unwrap();
        let counts = bucket_counts(
            &object,
            &patterns,
            CountSource::Analytic {
                kappa: 1000.0,
                shot_noise: false,
            },
            0.0,
            &mut rng(),
        )
        .unwrap();
        let weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let image = reconstruct(&patterns, &weights).unwrap();
        let correlation = pearson_correlation(&image.values, object.values()).unwrap();
        assert!(correlation > 0.999, "correlation {correlation}");

        // Rank structure is preserved exactly: open blocks all sit above
        // every closed block.
        let min_open = image
            .values
            .iter()
            .zip(object.values())
            .filter(|(_, &t)| t > 0.5)
            .map(|(v, _)| *v)
            .fold(f64::INFINITY, f64::min);
        let max_closed = image
            .values
            .iter()
            .zip(object.values())
            .filter(|(_, &t)| t < 0.5)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(min_open > max_closed);
    }

    #[test]
    fn random_pattern_reconstruction_converges_with_pattern_count() {
        let object = plus_object();
        let mut mean_correlation = Vec::new();
        for n in [100usize, 400, 1600] {
            let mut total = 0.0;
            for seed in 0..20u64 {
                let patterns =
                    generate_patterns(PatternMode::Random, 20, 20, n, 1000 + seed).unwrap();
                let expectations =
                    analytic_expectations(&object, &patterns, 100.0, 0.0).unwrap();
                let image = reconstruct(&patterns, &expectations).unwrap();
                total += pearson_correlation(&image.values, object.values()).unwrap();
            }
            mean_correlation.push(total / 20.0);
        }
        assert!(
            mean_correlation[0] < mean_correlation[1]
                && mean_correlation[1] < mean_correlation[2],
            "correlations {mean_correlation:?}"
        );
    }

    proptest! {
        // Centering makes the reconstruction invariant under a constant
        // offset and equivariant under positive scaling of the weights.
        #[test]
        fn reconstruction_centering_properties(
            seed in 0u64..1000,
            offset in -1e3f64..1e3,
            scale in 0.01f64..100.0,
        ) {
            let patterns = generate_patterns(PatternMode::Random, 4, 4, 24, seed).unwrap();
            let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xabc);
            let weights: Vec<f64> = (0..24).map(|_| rng.gen_range(0.0..1e4)).collect();
            let base = reconstruct(&patterns, &weights).unwrap();

            let shifted: Vec<f64> = weights.iter().map(|w| w + offset).collect();
            let shifted_image = reconstruct(&patterns, &shifted).unwrap();
            let scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
            let scaled_image = reconstruct(&patterns, &scaled).unwrap();

            let magnitude = base
                .values
                .iter()
                .fold(0.0f64, |acc, v| acc.max(v.abs()))
                .max(1.0);
            for ((b, s), c) in base
                .values
                .iter()
                .zip(&shifted_image.values)
                .zip(&scaled_image.values)
            {
                prop_assert!((b - s).abs() <= 1e-9 * magnitude);
                prop_assert!((b * scale - c).abs() <= 1e-9 * magnitude * scale);
            }
        }
    }

    #[test]
    fn reconstruction_needs_two_patterns() {
        let patterns = generate_patterns(PatternMode::Random, 2, 2, 1, 0).unwrap();
        assert_eq!(
            reconstruct(&patterns, &[1.0]),
            Err(CgiError::TooFewPatterns)
        );
    }

    #[test]
    fn definitional_snr_is_exact() {
        // Background alternating +-1 around 0 (variance 1), signal at 10:
        // snr = 100 -> exactly 20 dB.
        let values = vec![10.0, 10.0, 1.0, -1.0, 1.0, -1.0];
        let image = ImageGrid {
            width: 3,
            height: 2,
            values,
            n_patterns: 6,
            mode: PatternMode::Random,
            seed: Some(0),
        };
        let signal = vec![true, true, false, false, false, false];
        let background = vec![false, false, true, true, true, true];
        let report = snr_db(&image, &signal, &background).unwrap();
        assert_eq!(report.snr_db, 20.0);
        assert!(!report.infinite);
    }

    #[test]
    fn zero_background_variance_is_flagged_infinite() {
        let patterns = generate_patterns(PatternMode::RasterScan, 2, 2, 4, 0).unwrap();
        let image = reconstruct(&patterns, &[100.0, 0.0, 0.0, 0.0]).unwrap();
        let signal = vec![true, false, false, false];
        let background = vec![false, true, true, true];
        let report = snr_db(&image, &signal, &background).unwrap();
        assert!(report.infinite);
        assert!(report.snr_db.is_infinite());
    }

    #[test]
    fn snr_rejects_bad_regions() {
        let image = ImageGrid {
            width: 2,
            height: 1,
            values: vec![1.0, 0.0],
            n_patterns: 2,
            mode: PatternMode::Random,
            seed: None,
        };
        assert!(snr_db(&image, &[true, true], &[false, true]).is_err());
        assert!(snr_db(&image, &[true, false], &[false, false]).is_err());
    }

    #[test]
    fn energy_fractions_follow_the_object() {
        let object = plus_object();
        let patterns = generate_patterns(PatternMode::RasterScan, 20, 20, 400, 0).unwrap();
        let fractions = energy_fractions(&object, &patterns).unwrap();
        assert_eq!(fractions.len(), 400);
        for (fraction, t) in fractions.iter().zip(object.values()) {
            assert_eq!(fraction, t);
        }
    }

    // Closed-form oracle for the Monte Carlo count source: an open raster
    // frame collects pulses * P(signal) * Q_mu * 1/2 sifted detections on
    // average; a closed frame collects none.
    #[test]
    fn monte_carlo_counts_match_the_closed_form_expectation() {
        use crate::decoy::{DecoyObservables, IntensityConfig};
        use crate::sim::{calibrate_channel, run_session_scaled, SimulationConfig};

        let object = plus_object();
        let patterns = generate_patterns(PatternMode::RasterScan, 20, 20, 400, 0).unwrap();
        let source =
            IntensityConfig::new(0.68, 0.18, [13.0 / 16.0, 2.0 / 16.0, 1.0 / 16.0]).unwrap();
        let reference =
            DecoyObservables::from_rates(2.69e-4, 7.32e-5, 3.0e-6, 0.0213, 0.0399).unwrap();
        let cfg = SimulationConfig {
            pulse_rate_hz: 40e6,
            pulses_per_frame: 200_000,
            source,
            channel: calibrate_channel(&reference, &source).unwrap(),
            attack: None,
            rng_seed: 0xcc1,
        };
        let scales = energy_fractions(&object, &patterns).unwrap();
        let session = run_session_scaled(&cfg, &scales).unwrap();
        let counts = bucket_counts(
            &object,
            &patterns,
            CountSource::Measured {
                frame_counts: &session.frame_counts,
            },
            0.0,
            &mut rng(),
        )
        .unwrap();

        let per_frame = 200_000.0 * (13.0 / 16.0) * 2.69e-4 * 0.5;
        let open_frames = object.values().iter().filter(|&&t| t > 0.5).count();
        let expected = per_frame * open_frames as f64;
        let total_open: u64 = counts
            .iter()
            .zip(object.values())
            .filter(|(_, &t)| t > 0.5)
            .map(|(c, _)| *c)
            .sum();
        let sigma = expected.sqrt();
        assert!(
            (total_open as f64 - expected).abs() < 5.0 * sigma,
            "open-frame counts {total_open} vs expected {expected} (sigma {sigma})"
        );
        let total_closed: u64 = counts
            .iter()
            .zip(object.values())
            .filter(|(_, &t)| t < 0.5)
            .map(|(c, _)| *c)
            .sum();
        assert_eq!(total_closed, 0, "closed frames scale to zero yield");
    }
}
