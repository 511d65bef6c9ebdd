//! Downstream utility evaluation.
//!
//! Models trained here consume only synthetic features, and accuracy is
//! measured only on data that is not the real training split. Neither step
//! touches a privacy accountant: everything past the sanitized releases is
//! post-processing.

use crate::data::{LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::nn::{loss_and_grad, predict, Arch, Network, SgdMomentum};
use crate::rng::stream_rng;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Downstream training settings. The learning rate drops by 10x at the
/// halfway epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub arch: Arch,
    pub conv_width: usize,
    pub mlp_hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch: usize,
    /// Pad-and-random-crop augmentation; applies only to image features.
    pub augment: bool,
    pub seed: u64,
}

impl EvalConfig {
    /// Defaults tuned for training on a small distilled set.
    pub fn new(arch: Arch) -> Self {
        EvalConfig {
            arch,
            conv_width: 128,
            mlp_hidden: vec![128, 128],
            epochs: 300,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch: 256,
            augment: true,
            seed: 0,
        }
    }
}

/// Trains a fresh classifier on a synthetic set. Refuses anything that is
/// not synthetic: downstream consumers live outside the privacy boundary
/// and must never see real features.
pub fn train_downstream(
    train: &LabeledDataset,
    cfg: &EvalConfig,
) -> Result<(Network, Vec<Tensor<f32>>)> {
    if train.provenance() != Provenance::Synthetic {
        return Err(Error::IsolationViolation(format!(
            "downstream training consumes synthetic data only, got {:?}",
            train.provenance()
        )));
    }
    if cfg.epochs == 0 || cfg.batch == 0 {
        return Err(Error::InvalidArgument("epochs and batch must be >= 1".into()));
    }
    let net = cfg.arch.build(train.feature_shape(), train.classes(), cfg.conv_width, &cfg.mlp_hidden)?;
    let mut params: Vec<Tensor<f32>> =
        net.init_params(&mut stream_rng(cfg.seed, "eval-init", 0));
    let mut opt =
        SgdMomentum::new(&net.param_shapes(), cfg.momentum as f32, cfg.weight_decay as f32);
    let mut shuffle_rng = stream_rng(cfg.seed, "eval-shuffle", 0);
    let mut aug_rng = stream_rng(cfg.seed, "eval-augment", 0);
    let augment = cfg.augment && train.feature_shape().len() == 3;

    let mut order: Vec<usize> = (0..train.n()).collect();
    for epoch in 0..cfg.epochs {
        let lr = if 2 * epoch >= cfg.epochs { cfg.lr * 0.1 } else { cfg.lr };
        order.shuffle(&mut shuffle_rng);
        for rows in order.chunks(cfg.batch) {
            let (mut bx, by) = train.batch(rows);
            if augment {
                crop_batch(&mut bx, 4, &mut aug_rng);
            }
            let (loss, grads) = loss_and_grad(&net, &params, &bx, &by)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(format!("downstream epoch {epoch}")));
            }
            opt.step(&mut params, &grads, lr as f32);
        }
    }
    Ok((net, params))
}

/// Fraction of examples whose argmax logit matches the label. Refuses the
/// real training split so held-out numbers cannot silently become training
/// numbers.
pub fn evaluate_accuracy(
    net: &Network,
    params: &[Tensor<f32>],
    data: &LabeledDataset,
) -> Result<f64> {
    if data.provenance() == Provenance::RealTrain {
        return Err(Error::IsolationViolation(
            "accuracy is measured on held-out or synthetic data, not the training split".into(),
        ));
    }
    let preds = predict(net, params, data.features())?;
    let correct = preds.iter().zip(data.labels()).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / data.n().max(1) as f64)
}

/// Accuracy of one architecture over repeated training runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchAccuracy {
    pub arch: Arch,
    pub mean: f64,
    /// Sample standard deviation; zero for a single repeat.
    pub std: f64,
    pub accuracies: Vec<f64>,
}

/// Utility table for one synthetic set across architectures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossArchReport {
    pub repeats: usize,
    pub rows: Vec<ArchAccuracy>,
}

/// Trains `repeats` fresh models per architecture on the synthetic set and
/// scores each on the test split.
pub fn cross_arch_report(
    synth: &LabeledDataset,
    test: &LabeledDataset,
    archs: &[Arch],
    repeats: usize,
    cfg: &EvalConfig,
) -> Result<CrossArchReport> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be >= 1".into()));
    }
    let mut rows = Vec::with_capacity(archs.len());
    for &arch in archs {
        let mut accuracies = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let mut run_cfg = cfg.clone();
            run_cfg.arch = arch;
            run_cfg.seed = cfg.seed.wrapping_add(r as u64);
            let (net, params) = train_downstream(synth, &run_cfg)?;
            accuracies.push(evaluate_accuracy(&net, &params, test)?);
        }
        let mean = accuracies.iter().sum::<f64>() / repeats as f64;
        let std = if repeats > 1 {
            (accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
                / (repeats - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        log::info!("{}: {:.4} +/- {:.4} over {repeats} repeats", arch.name(), mean, std);
        rows.push(ArchAccuracy { arch, mean, std, accuracies });
    }
    Ok(CrossArchReport { repeats, rows })
}

/// Zero-pads each image by `pad` on every side and crops back to the
/// original size at a per-example random offset.
fn crop_batch(x: &mut Tensor<f32>, pad: usize, rng: &mut impl Rng) {
    let shape = x.shape().to_vec();
    let [n, c, h, w] = match shape.as_slice() {
        [n, c, h, w] => [*n, *c, *h, *w],
        _ => return,
    };
    let data = x.as_mut_slice();
    let mut src = vec![0.0f32; c * h * w];
    for i in 0..n {
        let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let img = &mut data[i * c * h * w..(i + 1) * c * h * w];
        src.copy_from_slice(img);
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let sy = y as isize + dy;
                    let sx = xx as isize + dx;
                    let v = if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                        src[(ch * h + sy as usize) * w + sx as usize]
                    } else {
                        0.0
                    };
                    img[(ch * h + y) * w + xx] = v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gaussian_blobs;

    fn small_cfg() -> EvalConfig {
        let mut cfg = EvalConfig::new(Arch::Mlp);
        cfg.mlp_hidden = vec![16];
        cfg.epochs = 60;
        cfg.batch = 32;
        cfg.seed = 3;
        cfg
    }

    #[test]
    fn gates_reject_real_training_features() {
        let real = gaussian_blobs(2, 5, 4, 0.3, 1, 0, Provenance::RealTrain).unwrap();
        assert!(matches!(
            train_downstream(&real, &small_cfg()),
            Err(Error::IsolationViolation(_))
        ));
        let held_out = gaussian_blobs(2, 5, 4, 0.3, 1, 1, Provenance::RealTest).unwrap();
        assert!(matches!(
            train_downstream(&held_out, &small_cfg()),
            Err(Error::IsolationViolation(_))
        ));
        let synth = gaussian_blobs(2, 5, 4, 0.3, 1, 0, Provenance::Synthetic).unwrap();
        let (net, params) = train_downstream(&synth, &small_cfg()).unwrap();
        assert!(matches!(
            evaluate_accuracy(&net, &params, &real),
            Err(Error::IsolationViolation(_))
        ));
    }

    #[test]
    fn learns_separable_blobs() {
        // Clean clusters stand in for a distilled set; a held-out draw from
        // the same clusters must be classified nearly perfectly.
        let synth = gaussian_blobs(3, 20, 6, 0.2, 7, 0, Provenance::Synthetic).unwrap();
        let test = gaussian_blobs(3, 40, 6, 0.2, 7, 1, Provenance::RealTest).unwrap();
        let (net, params) = train_downstream(&synth, &small_cfg()).unwrap();
        let acc = evaluate_accuracy(&net, &params, &test).unwrap();
        assert!(acc > 0.95, "accuracy {acc}");
    }

    #[test]
    fn cross_arch_rows_cover_requested_archs() {
        let synth = gaussian_blobs(2, 10, 4, 0.2, 5, 0, Provenance::Synthetic).unwrap();
        let test = gaussian_blobs(2, 10, 4, 0.2, 5, 1, Provenance::RealTest).unwrap();
        let mut cfg = small_cfg();
        cfg.epochs = 10;
        let report = cross_arch_report(&synth, &test, &[Arch::Mlp], 3, &cfg).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].accuracies.len(), 3);
        let row = &report.rows[0];
        assert!((row.mean - row.accuracies.iter().sum::<f64>() / 3.0).abs() < 1e-12);
    }

    #[test]
    fn crop_preserves_shape_and_shifts_content() {
        let mut x = Tensor::from_vec(
            &[1, 1, 3, 3],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        )
        .unwrap();
        let before = x.clone();
        let mut rng = stream_rng(1, "eval-augment", 0);
        crop_batch(&mut x, 1, &mut rng);
        assert_eq!(x.shape(), before.shape());
        // Every surviving value comes from the source image.
        for &v in x.as_slice() {
            assert!(v == 0.0 || before.as_slice().contains(&v));
        }
        // Training determinism: the same stream gives the same crop.
        let mut y = before.clone();
        let mut rng2 = stream_rng(1, "eval-augment", 0);
        crop_batch(&mut y, 1, &mut rng2);
        assert_eq!(x.as_slice(), y.as_slice());
    }
}
