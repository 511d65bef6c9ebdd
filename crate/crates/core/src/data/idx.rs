use crate::data::{LabeledDataset, Provenance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    let end = at + 4;
    if bytes.len() < end {
        return Err(Error::IdxTruncated { path: path.to_path_buf(), needed: end, got: bytes.len() });
    }
    Ok(u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]))
}

/// Reads an idx3-ubyte image file. Pixels are scaled from [0, 255] to
/// [0, 1]; the result is `[n, 1, rows, cols]`.
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::IdxMagic { path: path.to_path_buf(), expected: IMAGE_MAGIC, got: magic });
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let needed = 16 + n * rows * cols;
    if bytes.len() < needed {
        return Err(Error::IdxTruncated { path: path.to_path_buf(), needed, got: bytes.len() });
    }
    let data = bytes[16..needed].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::from_vec(&[n, 1, rows, cols], data)
}

/// Reads an idx1-ubyte label file.
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::IdxMagic { path: path.to_path_buf(), expected: LABEL_MAGIC, got: magic });
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let needed = 8 + n;
    if bytes.len() < needed {
        return Err(Error::IdxTruncated { path: path.to_path_buf(), needed, got: bytes.len() });
    }
    Ok(bytes[8..needed].iter().map(|&b| b as usize).collect())
}

/// Loads an image/label idx pair into a dataset. The class count is taken
/// as `max label + 1` unless a larger count is supplied.
pub fn load_idx_pair(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    classes: Option<usize>,
    provenance: Provenance,
) -> Result<LabeledDataset> {
    let features = load_idx_images(images)?;
    let labels = load_idx_labels(labels)?;
    if features.shape()[0] != labels.len() {
        return Err(Error::CountMismatch { images: features.shape()[0], labels: labels.len() });
    }
    let observed = labels.iter().max().map_or(0, |&m| m + 1);
    let classes = classes.unwrap_or(observed).max(observed).max(2);
    LabeledDataset::new(features, labels, classes, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx_images(path: &Path, n: u32, rows: u32, cols: u32, pixels: &[u8]) {
        let mut f = std::fs::File::create(path).unwrap();
        f.write_all(&IMAGE_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&n.to_be_bytes()).unwrap();
        f.write_all(&rows.to_be_bytes()).unwrap();
        f.write_all(&cols.to_be_bytes()).unwrap();
        f.write_all(pixels).unwrap();
    }

    fn write_idx_labels(path: &Path, labels: &[u8]) {
        let mut f = std::fs::File::create(path).unwrap();
        f.write_all(&LABEL_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
    }

    #[test]
    fn loads_pair_and_scales_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        write_idx_images(&img, 2, 2, 2, &[0, 255, 128, 64, 10, 20, 30, 40]);
        write_idx_labels(&lab, &[1, 0]);
        let ds = load_idx_pair(&img, &lab, None, Provenance::RealTrain).unwrap();
        assert_eq!(ds.feature_shape(), &[1, 2, 2]);
        assert_eq!(ds.labels(), &[1, 0]);
        let f = ds.features().as_slice();
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], 1.0);
        assert!((f[2] - 128.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn bad_magic_is_distinct_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        std::fs::write(&img, 0x12345678u32.to_be_bytes()).unwrap();
        match load_idx_images(&img) {
            Err(Error::IdxMagic { expected, got, .. }) => {
                assert_eq!(expected, IMAGE_MAGIC);
                assert_eq!(got, 0x12345678);
            }
            other => panic!("expected magic error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_distinct_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        // Header promises 2 images of 2x2 but only 3 pixels follow.
        write_idx_images(&img, 2, 2, 2, &[1, 2, 3]);
        match load_idx_images(&img) {
            Err(Error::IdxTruncated { needed, got, .. }) => {
                assert_eq!(needed, 16 + 8);
                assert_eq!(got, 16 + 3);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn count_mismatch_is_distinct_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        write_idx_images(&img, 1, 2, 2, &[0; 4]);
        write_idx_labels(&lab, &[0, 1]);
        assert!(matches!(
            load_idx_pair(&img, &lab, None, Provenance::RealTrain),
            Err(Error::CountMismatch { images: 1, labels: 2 })
        ));
    }

    #[test]
    fn missing_file_maps_to_io_error() {
        assert!(matches!(
            load_idx_images("/nonexistent/path"),
            Err(Error::Io { .. })
        ));
    }
}
