//! Training-time augmentations: raw-audio noise injection, additive Gaussian
//! image noise and random horizontal (time) shifts.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::audio::Waveform;
use crate::dsp::{SpectrogramImage, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::seed;

/// Density of `Normal(mean, sigma^2)` at `x`.
pub fn gaussian_pdf(x: f64, mean: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let var = sigma * sigma;
    let z = x - mean;
    Ok((-0.5 * z * z / var).exp() / (std::f64::consts::TAU * var).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianNoiseParams {
    pub mean: f64,
    pub variance: f64,
    pub seed: u64,
}

impl Default for GaussianNoiseParams {
    fn default() -> Self {
        Self {
            mean: 0.0,
            variance: 0.01,
            seed: 0,
        }
    }
}

/// `clamp(pixel + eta, 0, 1)`, `eta ~ Normal(mean, variance)` i.i.d.
pub fn add_gaussian_noise(
    img: &SpectrogramImage,
    p: &GaussianNoiseParams,
) -> Result<SpectrogramImage> {
    if !(p.variance > 0.0) {
        return Err(Error::invalid(format!(
            "noise variance must be positive, got {}",
            p.variance
        )));
    }
    let normal = Normal::new(p.mean, p.variance.sqrt())
        .map_err(|e| Error::invalid(format!("gaussian noise: {e}")))?;
    let mut rng = seed::rng(p.seed);
    let pixels = img
        .pixels()
        .iter()
        .map(|x| (x + normal.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    SpectrogramImage::new(pixels)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseInjectionParams {
    /// Noise half-width relative to the waveform peak.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for NoiseInjectionParams {
    fn default() -> Self {
        Self {
            alpha: 0.005,
            seed: 0,
        }
    }
}

/// One ulp from `x` toward `target`.
fn step_toward(x: f64, target: f64) -> f64 {
    if x < target {
        x.next_up()
    } else {
        x.next_down()
    }
}

/// `sample + u`, `u ~ Uniform(-alpha * peak, +alpha * peak)` i.i.d.
///
/// The realised perturbation `out - in` never exceeds `alpha * peak`, even
/// after floating-point rounding of the sum.
pub fn inject_noise(w: &Waveform, p: &NoiseInjectionParams) -> Result<Waveform> {
    if !(p.alpha >= 0.0 && p.alpha.is_finite()) {
        return Err(Error::invalid(format!(
            "noise fraction must be non-negative, got {}",
            p.alpha
        )));
    }
    let bound = p.alpha * w.peak();
    if bound == 0.0 {
        return Ok(w.clone());
    }
    let mut rng = seed::rng(p.seed);
    let samples = w
        .samples()
        .iter()
        .map(|&s| {
            let mut out = s + rng.random_range(-bound..=bound);
            while (out - s).abs() > bound {
                out = step_toward(out, s);
            }
            out
        })
        .collect();
    Waveform::new(samples, w.sample_rate())
}

/// Translates columns by `d` (positive = later in time); vacated columns
/// are zero.
pub fn shift_columns(img: &SpectrogramImage, d: i64) -> SpectrogramImage {
    let n = IMAGE_SIZE as i64;
    let mut pixels = vec![0.0; IMAGE_SIZE * IMAGE_SIZE];
    for row in 0..IMAGE_SIZE {
        for col in 0..n {
            let src = col - d;
            if (0..n).contains(&src) {
                pixels[row * IMAGE_SIZE + col as usize] = img.get(row, src as usize);
            }
        }
    }
    SpectrogramImage::new(pixels).expect("shift preserves range")
}

/// Shift drawn uniformly from `-floor(100 f)..=floor(100 f)`.
pub fn draw_shift(max_fraction: f64, seed: u64) -> Result<i64> {
    if !(0.0..1.0).contains(&max_fraction) {
        return Err(Error::invalid(format!(
            "max shift fraction must be in [0, 1), got {max_fraction}"
        )));
    }
    let m = (IMAGE_SIZE as f64 * max_fraction).floor() as i64;
    if m == 0 {
        return Ok(0);
    }
    Ok(seed::rng(seed).random_range(-m..=m))
}

pub fn width_shift(
    img: &SpectrogramImage,
    max_fraction: f64,
    seed: u64,
) -> Result<SpectrogramImage> {
    Ok(shift_columns(img, draw_shift(max_fraction, seed)?))
}

/// How many augmented copies of each training image the pipeline adds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPolicy {
    pub gaussian_copies: usize,
    pub gaussian_mean: f64,
    pub gaussian_variance: f64,
    pub shift_copies: usize,
    pub max_shift_fraction: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            gaussian_copies: 1,
            gaussian_mean: 0.0,
            gaussian_variance: 0.01,
            shift_copies: 0,
            max_shift_fraction: 0.1,
        }
    }
}

impl AugmentPolicy {
    pub fn none() -> Self {
        Self {
            gaussian_copies: 0,
            shift_copies: 0,
            ..Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{generate_cw, CwConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_image(seed: u64) -> SpectrogramImage {
        let mut rng = seed::rng(seed);
        SpectrogramImage::new((0..10_000).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn pdf_peak_and_symmetry() {
        let p = gaussian_pdf(0.0, 0.0, 1.0).unwrap();
        assert!((p - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert!((p - 0.398942).abs() < 1e-6);
        for d in [0.1, 0.7, 2.5] {
            assert_eq!(
                gaussian_pdf(3.0 + d, 3.0, 0.4).unwrap(),
                gaussian_pdf(3.0 - d, 3.0, 0.4).unwrap()
            );
        }
        assert!(gaussian_pdf(0.0, 0.0, 0.0).is_err());
        assert!(gaussian_pdf(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn pdf_integrates_to_one() {
        // composite Simpson over [M - 6σ, M + 6σ]
        let (m, s) = (0.3, 0.1);
        let n = 20_000;
        let (a, b) = (m - 6.0 * s, m + 6.0 * s);
        let h = (b - a) / n as f64;
        let mut acc = gaussian_pdf(a, m, s).unwrap() + gaussian_pdf(b, m, s).unwrap();
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * gaussian_pdf(a + i as f64 * h, m, s).unwrap();
        }
        assert!((acc * h / 3.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn vanishing_noise_is_identity() {
        let img = random_image(1);
        let p = GaussianNoiseParams {
            variance: f64::MIN_POSITIVE,
            ..GaussianNoiseParams::default()
        };
        let out = add_gaussian_noise(&img, &p).unwrap();
        for (a, b) in img.pixels().iter().zip(out.pixels()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn gaussian_noise_statistics_on_mid_gray() {
        let img = SpectrogramImage::filled(0.5).unwrap();
        let out = add_gaussian_noise(&img, &GaussianNoiseParams::default()).unwrap();
        let d: Vec<f64> = out.pixels().iter().map(|x| x - 0.5).collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((0.095..=0.105).contains(&sd), "sd {sd}");
        assert!(mean.abs() < 3.0 * 0.1 / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn gaussian_noise_is_seeded() {
        let img = random_image(2);
        let p = GaussianNoiseParams {
            seed: 9,
            ..GaussianNoiseParams::default()
        };
        assert_eq!(
            add_gaussian_noise(&img, &p).unwrap(),
            add_gaussian_noise(&img, &p).unwrap()
        );
        let q = GaussianNoiseParams { seed: 10, ..p };
        assert_ne!(
            add_gaussian_noise(&img, &p).unwrap(),
            add_gaussian_noise(&img, &q).unwrap()
        );
        assert!(add_gaussian_noise(&img, &GaussianNoiseParams { variance: 0.0, ..p }).is_err());
    }

    #[test]
    fn injection_identity_and_bound() {
        let w = generate_cw(&CwConfig {
            amplitude: 1.0,
            duration_s: 0.5,
            ..CwConfig::default()
        })
        .unwrap();
        let same = inject_noise(
            &w,
            &NoiseInjectionParams {
                alpha: 0.0,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(same, w);
        let peak = w.peak();
        let noisy = inject_noise(
            &w,
            &NoiseInjectionParams {
                alpha: 0.005,
                seed: 1,
            },
        )
        .unwrap();
        let max_d = w
            .samples()
            .iter()
            .zip(noisy.samples())
            .map(|(a, b)| (b - a).abs())
            .fold(0.0, f64::max);
        assert!(max_d <= 0.005 * peak);
        assert!(max_d > 0.004 * peak);
        assert!(inject_noise(
            &w,
            &NoiseInjectionParams {
                alpha: -1.0,
                seed: 1
            }
        )
        .is_err());
    }

    #[test]
    fn zero_shift_fraction_is_identity() {
        let img = random_image(3);
        assert_eq!(width_shift(&img, 0.0, 5).unwrap(), img);
        assert!(width_shift(&img, 1.0, 5).is_err());
    }

    #[test]
    fn shift_round_trip_with_clear_borders() {
        let mut px = random_image(4).into_pixels();
        for row in 0..100 {
            for col in (0..3).chain(97..100) {
                px[row * 100 + col] = 0.0;
            }
        }
        let img = SpectrogramImage::new(px).unwrap();
        assert_eq!(shift_columns(&shift_columns(&img, 3), -3), img);
    }

    #[test]
    fn shifts_stay_within_bound() {
        for seed in 0..200 {
            assert!(draw_shift(0.1, seed).unwrap().abs() <= 10);
        }
        let seen: std::collections::HashSet<_> =
            (0..500).map(|s| draw_shift(0.05, s).unwrap()).collect();
        assert_eq!(seen.len(), 11);
    }

    proptest! {
        #[test]
        fn column_sums_translate(seed in any::<u64>(), frac in 0.0f64..0.5) {
            let img = random_image(seed);
            let d = draw_shift(frac, seed).unwrap();
            let out = width_shift(&img, frac, seed).unwrap();
            let col_sum = |im: &SpectrogramImage, c: usize| (0..100).map(|r| im.get(r, c)).sum::<f64>();
            for c in 0..100i64 {
                let src = c - d;
                let expected = if (0..100).contains(&src) { col_sum(&img, src as usize) } else { 0.0 };
                prop_assert!((col_sum(&out, c as usize) - expected).abs() < 1e-12);
            }
        }

        #[test]
        fn augmentations_preserve_range(seed in any::<u64>(), var in 1e-4f64..1.0, mean in -0.5f64..0.5) {
            let img = random_image(seed);
            let out = add_gaussian_noise(&img, &GaussianNoiseParams { mean, variance: var, seed }).unwrap();
            prop_assert!(out.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}
