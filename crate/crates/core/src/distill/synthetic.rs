use crate::data::{read_container, write_container, LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;

/// The learnable synthetic set: `classes * spc` feature rows plus a fixed
/// balanced label vector. Features are the optimization variable; labels
/// never change after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    features: Tensor<f32>,
    labels: Vec<usize>,
    classes: usize,
    spc: usize,
}

impl SyntheticSet {
    /// Standard-normal feature init with class-major balanced labels
    /// (spc copies of class 0, then class 1, and so on).
    pub fn init(
        feature_shape: &[usize],
        classes: usize,
        spc: usize,
        rng: &mut ChaCha20Rng,
    ) -> Result<Self> {
        if classes < 2 || spc == 0 {
            return Err(Error::InvalidArgument(format!(
                "synthetic set needs classes >= 2 and spc >= 1, got {classes}, {spc}"
            )));
        }
        let n = classes * spc;
        let mut shape = Vec::with_capacity(feature_shape.len() + 1);
        shape.push(n);
        shape.extend_from_slice(feature_shape);
        let numel: usize = shape.iter().product();
        if numel == 0 {
            return Err(Error::InvalidArgument("synthetic feature shape has a zero extent".into()));
        }
        let data: Vec<f32> = (0..numel).map(|_| StandardNormal.sample(rng)).collect();
        let features = Tensor::from_vec(&shape, data)?;
        let labels = (0..classes).flat_map(|c| std::iter::repeat(c).take(spc)).collect();
        Ok(SyntheticSet { features, labels, classes, spc })
    }

    /// Wraps already-materialized features; used when a generator produces
    /// the set. Labels must be balanced.
    pub fn from_features(features: Tensor<f32>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let ds = LabeledDataset::new(features, labels, classes, Provenance::Synthetic)?;
        let counts = ds.class_counts();
        let spc = counts[0];
        if spc == 0 || counts.iter().any(|&c| c != spc) {
            return Err(Error::InvalidArgument(format!(
                "synthetic labels must be balanced, got counts {counts:?}"
            )));
        }
        Ok(SyntheticSet {
            spc,
            classes: ds.classes(),
            labels: ds.labels().to_vec(),
            features: ds.features().clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn spc(&self) -> usize {
        self.spc
    }

    pub fn features(&self) -> &Tensor<f32> {
        &self.features
    }

    /// Features are the only mutable part; the label pattern is fixed.
    pub fn features_mut(&mut self) -> &mut Tensor<f32> {
        &mut self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Snapshot as a provenance-tagged dataset for downstream training.
    pub fn to_dataset(&self) -> Result<LabeledDataset> {
        LabeledDataset::new(
            self.features.clone(),
            self.labels.clone(),
            self.classes,
            Provenance::Synthetic,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_container(path, &self.to_dataset()?, self.spc as u32)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (ds, spc) = read_container(path)?;
        let set = SyntheticSet::from_features(
            ds.features().clone(),
            ds.labels().to_vec(),
            ds.classes(),
        )?;
        if set.spc != spc as usize {
            return Err(Error::InvalidArgument(format!(
                "container spc {spc} disagrees with label counts ({})",
                set.spc
            )));
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn init_builds_balanced_class_major_labels() {
        let mut rng = stream_rng(1, "synthetic-init", 0);
        let s = SyntheticSet::init(&[1, 4, 4], 3, 2, &mut rng).unwrap();
        assert_eq!(s.n(), 6);
        assert_eq!(s.labels(), &[0, 0, 1, 1, 2, 2]);
        assert_eq!(s.features().shape(), &[6, 1, 4, 4]);
        // Standard-normal init: sample variance near 1.
        let v: f64 = s
            .features()
            .as_slice()
            .iter()
            .map(|&x| (x as f64) * (x as f64))
            .sum::<f64>()
            / s.features().numel() as f64;
        assert!((v - 1.0).abs() < 0.4, "variance {v}");
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("set.psgset");
        let mut rng = stream_rng(2, "synthetic-init", 0);
        let s = SyntheticSet::init(&[2], 2, 3, &mut rng).unwrap();
        s.save(&p).unwrap();
        let back = SyntheticSet::load(&p).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_dataset().unwrap().provenance(), Provenance::Synthetic);
    }

    #[test]
    fn from_features_rejects_imbalance() {
        let f = Tensor::from_vec(&[3, 2], vec![0.0; 6]).unwrap();
        assert!(SyntheticSet::from_features(f, vec![0, 0, 1], 2).is_err());
    }
}
