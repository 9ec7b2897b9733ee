//! Synthetic template-plus-noise dataset generator.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::DatasetG;
use crate::error::{Error, Result};
use crate::rng::{derive_stream, StreamPurpose};
use crate::scalar::Scalar;
use crate::tensor::TensorG;

/// Generate `num_classes * per_class` samples. Each class owns a fixed random
/// template image; samples are the template plus Gaussian pixel noise,
/// clamped to [0, 1]. Samples are ordered class-major, so sample
/// `c * per_class + s` carries label `c`.
pub fn synth_dataset<S: Scalar>(
    num_classes: usize,
    per_class: usize,
    input_shape: (usize, usize, usize),
    noise_sigma: f64,
    seed: u64,
) -> Result<DatasetG<S>> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument("num_classes must be at least 2".into()));
    }
    if per_class == 0 {
        return Err(Error::InvalidArgument("per_class must be at least 1".into()));
    }
    if !noise_sigma.is_finite() || noise_sigma < 0.0 {
        return Err(Error::InvalidArgument(format!("noise_sigma must be >= 0, got {noise_sigma}")));
    }
    let (c, h, w) = input_shape;
    let pixels = c * h * w;
    if pixels == 0 {
        return Err(Error::InvalidArgument("input shape has a zero dimension".into()));
    }

    let templates: Vec<Vec<f64>> = (0..num_classes)
        .map(|class| {
            let mut rng = derive_stream(seed, StreamPurpose::SynthTemplate, class as u64, 0);
            (0..pixels).map(|_| rng.gen_range(0.0..1.0)).collect()
        })
        .collect();

    let n = num_classes * per_class;
    let mut data = Vec::with_capacity(n * pixels);
    let mut labels = Vec::with_capacity(n);
    let noise = if noise_sigma > 0.0 {
        Some(Normal::new(0.0, noise_sigma).expect("sigma validated"))
    } else {
        None
    };
    for (class, template) in templates.iter().enumerate() {
        for sample in 0..per_class {
            match &noise {
                Some(dist) => {
                    let mut rng =
                        derive_stream(seed, StreamPurpose::SynthNoise, class as u64, sample as u64);
                    for &t in template {
                        let v = (t + dist.sample(&mut rng)).clamp(0.0, 1.0);
                        data.push(S::from_f64c(v));
                    }
                }
                None => data.extend(template.iter().map(|&t| S::from_f64c(t))),
            }
            labels.push(class);
        }
    }

    let images = TensorG::new(vec![n, c, h, w], data)?;
    DatasetG::new(images, labels, num_classes)
}

/// Templates used by the generator; exposed so evaluations can compare
/// against the noise-free class prototypes.
pub fn synth_templates(num_classes: usize, pixels: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..num_classes)
        .map(|class| {
            let mut rng = derive_stream(seed, StreamPurpose::SynthTemplate, class as u64, 0);
            (0..pixels).map(|_| rng.gen_range(0.0..1.0)).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_repeats_the_template() {
        let ds = synth_dataset::<f64>(3, 4, (1, 2, 2), 0.0, 5).unwrap();
        assert_eq!(ds.len(), 12);
        let px = 4;
        for class in 0..3 {
            let base = class * 4 * px;
            let first = &ds.images.data()[base..base + px];
            for s in 1..4 {
                let row = &ds.images.data()[base + s * px..base + (s + 1) * px];
                assert_eq!(first, row);
            }
        }
    }

    #[test]
    fn count_and_labels_are_class_major() {
        let ds = synth_dataset::<f64>(4, 3, (1, 2, 2), 0.1, 9).unwrap();
        assert_eq!(ds.len(), 12);
        assert_eq!(ds.labels, vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = synth_dataset::<f64>(3, 5, (1, 3, 3), 0.2, 17).unwrap();
        let b = synth_dataset::<f64>(3, 5, (1, 3, 3), 0.2, 17).unwrap();
        assert_eq!(a.images.data(), b.images.data());
    }

    #[test]
    fn low_noise_keeps_nearest_template_perfect() {
        let seed = 23;
        let ds = synth_dataset::<f64>(5, 20, (1, 4, 4), 0.05, seed).unwrap();
        let templates = synth_templates(5, 16, seed);
        let mut correct = 0;
        for (i, &label) in ds.labels.iter().enumerate() {
            let img = &ds.images.data()[i * 16..(i + 1) * 16];
            let nearest = templates
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let da: f64 = a.iter().zip(img.iter()).map(|(x, y)| (x - y).powi(2)).sum();
                    let db: f64 = b.iter().zip(img.iter()).map(|(x, y)| (x - y).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .map(|(c, _)| c)
                .unwrap();
            if nearest == label {
                correct += 1;
            }
        }
        assert_eq!(correct, ds.len(), "nearest-template must classify all samples");
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(synth_dataset::<f64>(1, 4, (1, 2, 2), 0.1, 0).is_err());
        assert!(synth_dataset::<f64>(3, 0, (1, 2, 2), 0.1, 0).is_err());
        assert!(synth_dataset::<f64>(3, 1, (0, 2, 2), 0.1, 0).is_err());
    }
}
