use crate::data::{LabeledDataset, Provenance};
use crate::error::Result;
use crate::rng::stream_rng;
use crate::tensor::Tensor;
use rand_distr::{Distribution, StandardNormal};

/// Procedural flat-feature dataset: one Gaussian cluster per class.
///
/// Class centers are drawn once at radius 3 so classes stay separable for
/// small spreads; every example is its center plus isotropic noise. The
/// same seed with different `split` values yields disjoint draws around
/// the same centers, which is how train and test splits are made.
pub fn gaussian_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
    split: u64,
    provenance: Provenance,
) -> Result<LabeledDataset> {
    let mut center_rng = stream_rng(seed, "blob-centers", 0);
    let mut centers = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut c: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut center_rng)).collect();
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
        for x in c.iter_mut() {
            *x *= 3.0 / norm;
        }
        centers.push(c);
    }
    let mut rng = stream_rng(seed, "blob-points", split);
    let n = classes * per_class;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for class in 0..classes {
        for _ in 0..per_class {
            for d in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push((centers[class][d] + spread * z) as f32);
            }
            labels.push(class);
        }
    }
    LabeledDataset::new(Tensor::from_vec(&[n, dim], features)?, labels, classes, provenance)
}

/// Procedural image dataset: each class is a distinct oriented sinusoidal
/// pattern plus pixel noise, in [0, 1]. Shape is `[n, 1, size, size]`.
/// `split` varies the pixel noise, not the patterns, so train and test
/// splits share classes.
pub fn patterned_images(
    classes: usize,
    per_class: usize,
    size: usize,
    noise: f64,
    seed: u64,
    split: u64,
    provenance: Provenance,
) -> Result<LabeledDataset> {
    let mut rng = stream_rng(seed, "pattern-noise", split);
    let n = classes * per_class;
    let mut features = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    for class in 0..classes {
        let theta = std::f64::consts::PI * class as f64 / classes as f64;
        let freq = 1.0 + class as f64 * 0.5;
        let (ct, st) = (theta.cos(), theta.sin());
        for _ in 0..per_class {
            for y in 0..size {
                for x in 0..size {
                    let u = (x as f64 * ct + y as f64 * st) / size as f64;
                    let base = 0.5 + 0.45 * (2.0 * std::f64::consts::PI * freq * u).sin();
                    let z: f64 = StandardNormal.sample(&mut rng);
                    features.push((base + noise * z).clamp(0.0, 1.0) as f32);
                }
            }
            labels.push(class);
        }
    }
    LabeledDataset::new(
        Tensor::from_vec(&[n, 1, size, size], features)?,
        labels,
        classes,
        provenance,
    )
}
