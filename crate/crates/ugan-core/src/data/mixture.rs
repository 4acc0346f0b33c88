//! Synthetic 2-d Gaussian mixtures, the desk-scale mode-coverage testbed.

use super::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Real;
use rand_chacha::ChaCha8Rng;

/// Isotropic Gaussian mixture over the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub means: Vec<[f64; 2]>,
    /// Shared isotropic standard deviation.
    pub std: f64,
    pub weights: Vec<f64>,
}

impl MixtureSpec {
    /// Evenly weighted components on a circle, starting at angle 0.
    pub fn ring(modes: usize, radius: f64, std: f64) -> Self {
        let means = (0..modes)
            .map(|i| {
                let angle = 2.0 * std::f64::consts::PI * i as f64 / modes as f64;
                [radius * angle.cos(), radius * angle.sin()]
            })
            .collect();
        MixtureSpec {
            means,
            std,
            weights: vec![1.0 / modes as f64; modes],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if self.means.len() != self.weights.len() {
            return Err(Error::Config(format!(
                "{} means but {} weights",
                self.means.len(),
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|&w| w < 0.0 || w.is_nan()) {
            return Err(Error::Config("mixture weights must be nonnegative".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "mixture weights sum to {sum}, expected 1"
            )));
        }
        if self.std <= 0.0 || self.std.is_nan() {
            return Err(Error::Config(format!(
                "mixture std must be positive, got {}",
                self.std
            )));
        }
        Ok(())
    }
}

/// Draw n points: component by weight, then an isotropic Gaussian around its
/// mean. Labels carry the component index.
pub fn sample_mixture(spec: &MixtureSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Contract("sample_mixture needs n >= 1".into()));
    }
    if spec.means.len() > u8::MAX as usize + 1 {
        return Err(Error::Config("more than 256 mixture components".into()));
    }
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = f64::unit_uniform(rng);
        let mut acc = 0.0;
        let mut component = spec.means.len() - 1;
        for (i, &w) in spec.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                component = i;
                break;
            }
        }
        let mean = spec.means[component];
        let dx: f64 = f64::std_normal(rng);
        let dy: f64 = f64::std_normal(rng);
        points.push([mean[0] + spec.std * dx, mean[1] + spec.std * dy]);
        labels.push(component as u8);
    }
    Dataset::from_points(points, Some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn degenerate_std_collapses_to_the_mean() {
        let spec = MixtureSpec {
            means: vec![[0.0, 0.0]],
            std: 1e-9,
            weights: vec![1.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ds = sample_mixture(&spec, 500, &mut rng).unwrap();
        for p in ds.points().unwrap() {
            assert!(p[0].abs() < 1e-6 && p[1].abs() < 1e-6);
        }
    }

    #[test]
    fn ring_counts_follow_the_binomial_bound() {
        let spec = MixtureSpec::ring(8, 2.0, 0.02);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ds = sample_mixture(&spec, 8000, &mut rng).unwrap();
        let mut counts = [0usize; 8];
        for &l in ds.labels().unwrap() {
            counts[l as usize] += 1;
        }
        // binomial(8000, 1/8): std ~29.6, so +-120 is ~4 sigma
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as i64 - 1000).abs() <= 120,
                "component {i} count {c} outside 1000 +- 120"
            );
        }
    }

    #[test]
    fn zero_weight_component_is_never_drawn() {
        let spec = MixtureSpec {
            means: vec![[0.0, 0.0], [100.0, 100.0]],
            std: 0.1,
            weights: vec![1.0, 0.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds = sample_mixture(&spec, 2000, &mut rng).unwrap();
        assert!(ds.labels().unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn sampling_is_bitwise_reproducible() {
        let spec = MixtureSpec::ring(5, 1.0, 0.3);
        let a = sample_mixture(&spec, 100, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_mixture(&spec, 100, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for (pa, pb) in a.points().unwrap().iter().zip(b.points().unwrap()) {
            assert_eq!(pa[0].to_bits(), pb[0].to_bits());
            assert_eq!(pa[1].to_bits(), pb[1].to_bits());
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = MixtureSpec::ring(3, 1.0, 0.1);
        spec.weights[0] = 0.5;
        assert!(sample_mixture(&spec, 10, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let spec = MixtureSpec {
            means: vec![[0.0, 0.0]],
            std: 0.0,
            weights: vec![1.0],
        };
        assert!(spec.validate().is_err());
    }
}
