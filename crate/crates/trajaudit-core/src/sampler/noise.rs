//! Gaussian observation-noise injection for robustness experiments.
//!
//! A corrupted image is the convex mix `(1 - alpha) * I + alpha * eps` with
//! `eps` drawn iid from the standard normal. The output is deliberately not
//! clipped to `[0, 1]`; consumers that need a valid image range must clip
//! themselves.

use super::SamplerError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Dense row-major image: `data[(row * width + col) * channels + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageArray {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageArray {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self, SamplerError> {
        if data.len() != height * width * channels {
            return Err(SamplerError::InvalidImage(format!(
                "{}x{}x{} needs {} values, got {}",
                height,
                width,
                channels,
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }
}

/// Mix seeded standard-normal noise into an image.
///
/// `noise_level` 0 returns the input bit-identically; 1 returns the pure
/// noise draw. Deterministic for a fixed seed.
pub fn perturb_observation(
    image: &ImageArray,
    noise_level: f64,
    seed: u64,
) -> Result<ImageArray, SamplerError> {
    if !(0.0..=1.0).contains(&noise_level) {
        return Err(SamplerError::InvalidAlpha(noise_level));
    }
    for (i, &v) in image.data.iter().enumerate() {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(SamplerError::InvalidImage(format!(
                "value {v} at flat index {i} outside [0, 1]"
            )));
        }
    }
    if noise_level == 0.0 {
        return Ok(image.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 - noise_level;
    let data = image
        .data
        .iter()
        .map(|&v| {
            let eps: f64 = StandardNormal.sample(&mut rng);
            keep * v + noise_level * eps
        })
        .collect();
    Ok(ImageArray { height: image.height, width: image.width, channels: image.channels, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_and_variance(data: &[f64]) -> (f64, f64) {
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn zero_alpha_is_bit_identical() {
        let image = ImageArray::new(8, 8, 3, (0..192).map(|i| i as f64 / 191.0).collect()).unwrap();
        let out = perturb_observation(&image, 0.0, 42).unwrap();
        assert_eq!(out, image);
    }

    #[test]
    fn full_alpha_is_standard_normal() {
        let image = ImageArray::constant(600, 600, 3, 0.5);
        let out = perturb_observation(&image, 1.0, 7).unwrap();
        let (mean, var) = mean_and_variance(&out.data);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "variance {var}");
    }

    #[test]
    fn mild_alpha_statistics_match_the_mix() {
        // Monte-Carlo oracle for the mixing formula on a constant image:
        // mean (1-a)*0.5, variance a^2.
        let alpha = 0.05;
        let image = ImageArray::constant(600, 600, 3, 0.5);
        let out = perturb_observation(&image, alpha, 11).unwrap();
        let (mean, var) = mean_and_variance(&out.data);
        assert!((mean - 0.475).abs() / 0.475 < 0.05, "mean {mean}");
        assert!((var - 0.0025).abs() / 0.0025 < 0.05, "variance {var}");
    }

    #[test]
    fn deterministic_per_seed() {
        let image = ImageArray::constant(4, 4, 3, 0.25);
        let a = perturb_observation(&image, 0.3, 5).unwrap();
        let b = perturb_observation(&image, 0.3, 5).unwrap();
        let c = perturb_observation(&image, 0.3, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn output_is_not_clipped() {
        let image = ImageArray::constant(100, 100, 3, 1.0);
        let out = perturb_observation(&image, 0.5, 3).unwrap();
        assert!(out.data.iter().any(|&v| v > 1.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let image = ImageArray::constant(2, 2, 3, 0.5);
        assert!(matches!(
            perturb_observation(&image, 1.5, 0),
            Err(SamplerError::InvalidAlpha(_))
        ));
        let bad = ImageArray::new(1, 1, 3, vec![0.1, 2.0, 0.3]).unwrap();
        assert!(matches!(
            perturb_observation(&bad, 0.5, 0),
            Err(SamplerError::InvalidImage(_))
        ));
        assert!(ImageArray::new(2, 2, 3, vec![0.0; 5]).is_err());
    }
}
