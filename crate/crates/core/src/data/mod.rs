//! Datasets, ingestion formats and sampling.
//!
//! Every dataset carries a provenance tag. Code that consumes datasets
//! asserts on the tag, so real training features cannot leak into
//! evaluation or cross stage boundaries unnoticed.

mod container;
mod csv;
mod idx;
mod pgm;
mod sampling;
mod toy;

pub use container::{read_container, write_container, CONTAINER_VERSION};
pub use csv::load_csv;
pub use idx::{load_idx_images, load_idx_labels, load_idx_pair};
pub use pgm::export_image_grid;
pub use sampling::poisson_batch;
pub use toy::{gaussian_blobs, patterned_images};

use crate::error::{Error, Result};
use crate::nn::gather_rows;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Where a dataset's feature values came from. Gates what the dataset may
/// be used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Raw training data; may only feed the sanitized-gradient pipeline.
    RealTrain,
    /// Held-out data; may feed evaluation but never training.
    RealTest,
    /// Distilled data; safe for any downstream use.
    Synthetic,
}

/// A labeled dataset with batched features `[n, ...shape]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Tensor<f32>,
    labels: Vec<usize>,
    classes: usize,
    provenance: Provenance,
    /// Stage partition this data belongs to, when split for continual
    /// training.
    partition: Option<usize>,
}

impl LabeledDataset {
    pub fn new(
        features: Tensor<f32>,
        labels: Vec<usize>,
        classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if features.shape().is_empty() || features.shape()[0] != labels.len() {
            return Err(Error::CountMismatch { images: features.shape()[0], labels: labels.len() });
        }
        if classes < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 classes, got {classes}")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label: bad, classes });
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(LabeledDataset { features, labels, classes, provenance, partition: None })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn features(&self) -> &Tensor<f32> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn partition(&self) -> Option<usize> {
        self.partition
    }

    /// Copies the selected rows into a batch tensor plus labels.
    pub fn batch(&self, rows: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let x = gather_rows(&self.features, rows);
        let y = rows.iter().map(|&r| self.labels[r]).collect();
        (x, y)
    }

    /// Rewrites every label through `f`, adjusting the class count.
    /// Provenance and partition carry over.
    pub fn map_labels(&self, classes: usize, f: impl Fn(usize) -> usize) -> Result<Self> {
        let labels: Vec<usize> = self.labels.iter().map(|&l| f(l)).collect();
        let mut out = LabeledDataset::new(self.features.clone(), labels, classes, self.provenance)?;
        out.partition = self.partition;
        Ok(out)
    }

    /// Stacks datasets row-wise. Shapes, class counts and provenance must
    /// all agree; partitions do not carry over.
    pub fn concat(parts: &[&LabeledDataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat needs at least one dataset".into()))?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for part in parts {
            if part.feature_shape() != first.feature_shape()
                || part.classes() != first.classes()
            {
                return Err(Error::ShapeMismatch {
                    what: "dataset concat".into(),
                    expected: first.feature_shape().to_vec(),
                    got: part.feature_shape().to_vec(),
                });
            }
            if part.provenance() != first.provenance() {
                return Err(Error::IsolationViolation(
                    "refusing to concatenate datasets of mixed provenance".into(),
                ));
            }
            features.extend_from_slice(part.features().as_slice());
            labels.extend_from_slice(part.labels());
        }
        let mut shape = vec![labels.len()];
        shape.extend_from_slice(first.feature_shape());
        LabeledDataset::new(
            Tensor::from_vec(&shape, features)?,
            labels,
            first.classes(),
            first.provenance(),
        )
    }

    /// Number of examples per class, indexed by label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Splits by class groups for staged training. Each group becomes one
    /// partition carrying its index as a tag; labels stay global.
    ///
    /// Groups must be disjoint and nonempty; classes outside every group are
    /// rejected so no example silently disappears.
    pub fn class_split(&self, groups: &[Vec<usize>]) -> Result<Vec<LabeledDataset>> {
        if groups.is_empty() {
            return Err(Error::InvalidArgument("need at least one class group".into()));
        }
        let mut owner = vec![usize::MAX; self.classes];
        for (gi, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::InvalidArgument(format!("class group {gi} is empty")));
            }
            for &c in group {
                if c >= self.classes {
                    return Err(Error::LabelOutOfRange { label: c, classes: self.classes });
                }
                if owner[c] != usize::MAX {
                    return Err(Error::InvalidArgument(format!(
                        "class {c} appears in groups {} and {gi}",
                        owner[c]
                    )));
                }
                owner[c] = gi;
            }
        }
        if let Some(unassigned) = owner.iter().position(|&o| o == usize::MAX) {
            return Err(Error::InvalidArgument(format!(
                "class {unassigned} belongs to no group"
            )));
        }
        let mut out = Vec::with_capacity(groups.len());
        for (gi, _) in groups.iter().enumerate() {
            let rows: Vec<usize> =
                (0..self.n()).filter(|&i| owner[self.labels[i]] == gi).collect();
            let (features, labels) = self.batch(&rows);
            let mut part = LabeledDataset::new(features, labels, self.classes, self.provenance)?;
            part.partition = Some(gi);
            out.push(part);
        }
        Ok(out)
    }
}

/// Per-channel affine normalization fitted on training data and replayed on
/// anything evaluated against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    /// Fits per-channel statistics. Features shaped `[n, c, h, w]` yield c
    /// channels; any other shape is treated as a single channel. Channels
    /// with vanishing spread keep std 1 so constant features stay finite.
    pub fn fit(features: &Tensor<f32>) -> Self {
        let shape = features.shape();
        let channels = if shape.len() == 4 { shape[1] } else { 1 };
        let mut mean = vec![0.0f64; channels];
        let mut sq = vec![0.0f64; channels];
        let mut count = vec![0u64; channels];
        let chw: usize = shape[1..].iter().product();
        let hw = chw / channels;
        for (i, &v) in features.as_slice().iter().enumerate() {
            let c = (i % chw) / hw;
            mean[c] += v as f64;
            sq[c] += (v as f64) * (v as f64);
            count[c] += 1;
        }
        let mut std = vec![1.0f64; channels];
        for c in 0..channels {
            mean[c] /= count[c] as f64;
            let var = sq[c] / count[c] as f64 - mean[c] * mean[c];
            std[c] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Normalization { mean, std }
    }

    pub fn apply(&self, features: &mut Tensor<f32>) {
        let shape = features.shape().to_vec();
        let channels = self.mean.len();
        let chw: usize = shape[1..].iter().product();
        let hw = chw / channels;
        for (i, v) in features.as_mut_slice().iter_mut().enumerate() {
            let c = (i % chw) / hw;
            *v = ((*v as f64 - self.mean[c]) / self.std[c]) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(labels: &[usize], classes: usize) -> LabeledDataset {
        let n = labels.len();
        let features =
            Tensor::from_vec(&[n, 2], (0..2 * n).map(|i| i as f32).collect()).unwrap();
        LabeledDataset::new(features, labels.to_vec(), classes, Provenance::RealTrain).unwrap()
    }

    #[test]
    fn rejects_label_out_of_range_and_count_mismatch() {
        let features = Tensor::from_vec(&[2, 2], vec![0.0; 4]).unwrap();
        assert!(matches!(
            LabeledDataset::new(features.clone(), vec![0, 2], 2, Provenance::RealTrain),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
        assert!(matches!(
            LabeledDataset::new(features, vec![0], 2, Provenance::RealTrain),
            Err(Error::CountMismatch { .. })
        ));
    }

    #[test]
    fn class_split_partitions_by_group() {
        let ds = toy(&[0, 1, 2, 3, 0, 2], 4);
        let parts = ds.class_split(&[vec![0, 1], vec![2, 3]]).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].labels(), &[0, 1, 0]);
        assert_eq!(parts[1].labels(), &[2, 3, 2]);
        assert_eq!(parts[0].partition(), Some(0));
        assert_eq!(parts[1].partition(), Some(1));
        // Global labels and feature rows stay aligned.
        assert_eq!(parts[1].features().as_slice()[0..2], [4.0, 5.0]);
    }

    #[test]
    fn class_split_rejects_overlap_and_gaps() {
        let ds = toy(&[0, 1, 2], 3);
        assert!(ds.class_split(&[vec![0, 1], vec![1, 2]]).is_err());
        assert!(ds.class_split(&[vec![0], vec![1]]).is_err());
        assert!(ds.class_split(&[vec![0], vec![1], vec![2]]).is_ok());
    }

    #[test]
    fn map_labels_remaps_to_local_space() {
        let ds = toy(&[2, 3, 2], 4);
        let local = ds.map_labels(2, |l| l - 2).unwrap();
        assert_eq!(local.labels(), &[0, 1, 0]);
        assert_eq!(local.classes(), 2);
    }

    #[test]
    fn normalization_zero_means_unit_std() {
        let features = Tensor::from_vec(
            &[2, 2, 1, 2],
            vec![0.0, 2.0, 10.0, 10.0, 4.0, 6.0, 10.0, 10.0],
        )
        .unwrap();
        let norm = Normalization::fit(&features);
        assert_eq!(norm.mean.len(), 2);
        assert!((norm.mean[0] - 3.0).abs() < 1e-9);
        // Channel 1 is constant: std stays 1 and values center at zero.
        assert_eq!(norm.std[1], 1.0);
        let mut f = features.clone();
        norm.apply(&mut f);
        let s = f.as_slice();
        let ch0: Vec<f32> = vec![s[0], s[1], s[4], s[5]];
        let mean: f32 = ch0.iter().sum::<f32>() / 4.0;
        let var: f32 = ch0.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-5);
        assert_eq!(s[2], 0.0);
    }

    #[test]
    fn concat_stacks_rows_and_guards_provenance() {
        let a = toy(&[0, 1], 2);
        let b = toy(&[1, 0], 2);
        let joined = LabeledDataset::concat(&[&a, &b]).unwrap();
        assert_eq!(joined.n(), 4);
        assert_eq!(joined.labels(), &[0, 1, 1, 0]);
        let mixed = LabeledDataset::new(
            b.features().clone(),
            b.labels().to_vec(),
            2,
            Provenance::Synthetic,
        )
        .unwrap();
        assert!(matches!(
            LabeledDataset::concat(&[&a, &mixed]),
            Err(Error::IsolationViolation(_))
        ));
    }

    #[test]
    fn batch_gathers_rows_with_labels() {
        let ds = toy(&[0, 1, 0], 2);
        let (x, y) = ds.batch(&[2, 0]);
        assert_eq!(x.shape(), &[2, 2]);
        assert_eq!(x.as_slice(), &[4.0, 5.0, 0.0, 1.0]);
        assert_eq!(y, vec![0, 0]);
    }
}
