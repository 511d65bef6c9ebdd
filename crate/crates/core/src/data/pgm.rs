use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

/// Writes a batch of images `[n, c, h, w]` as one grid image, `cols` tiles
/// per row. One channel yields binary PGM (P5), three yield binary PPM
/// (P6). Pixel values are mapped linearly from the batch-wide min and max
/// to 0..=255 so exported sets stay comparable across tiles.
pub fn export_image_grid(
    path: impl AsRef<Path>,
    images: &Tensor<f32>,
    cols: usize,
) -> Result<()> {
    let path = path.as_ref();
    let shape = images.shape();
    if shape.len() != 4 {
        return Err(Error::ShapeMismatch {
            what: "image grid export".into(),
            expected: vec![0, 0, 0, 0],
            got: shape.to_vec(),
        });
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if !(c == 1 || c == 3) {
        return Err(Error::InvalidArgument(format!(
            "grid export handles 1 or 3 channels, got {c}"
        )));
    }
    if n == 0 || cols == 0 {
        return Err(Error::InvalidArgument("grid export needs images and cols >= 1".into()));
    }
    let data = images.as_slice();
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in data {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let denom = (hi - lo).max(1e-12);
    let quant = |v: f32| -> u8 { (((v - lo) / denom) * 255.0).round().clamp(0.0, 255.0) as u8 };

    let rows = n.div_ceil(cols);
    let (gw, gh) = (cols * w, rows * h);
    let mut pixels = vec![0u8; gw * gh * c];
    for img in 0..n {
        let (tile_r, tile_c) = (img / cols, img % cols);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = data[((img * c + ch) * h + y) * w + x];
                    let gy = tile_r * h + y;
                    let gx = tile_c * w + x;
                    pixels[(gy * gw + gx) * c + ch] = quant(v);
                }
            }
        }
    }
    let mut out = Vec::with_capacity(32 + pixels.len());
    let tag = if c == 1 { "P5" } else { "P6" };
    out.extend_from_slice(format!("{tag}\n{gw} {gh}\n255\n").as_bytes());
    out.extend_from_slice(&pixels);
    std::fs::write(path, out).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grayscale_grid_maps_min_max() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        let images = Tensor::from_vec(
            &[2, 1, 2, 2],
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0],
        )
        .unwrap();
        export_image_grid(&p, &images, 2).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header = b"P5\n4 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let px = &bytes[header.len()..];
        assert_eq!(px.len(), 8);
        // Row-major grid: first grid row holds top rows of both tiles.
        assert_eq!(px[0], 0);
        assert_eq!(px[2], ((4.0 / 8.0) * 255.0f32).round() as u8);
        assert_eq!(px[7], 255);
    }

    #[test]
    fn rgb_uses_ppm_and_ragged_grid_pads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.ppm");
        let images = Tensor::from_vec(&[3, 3, 1, 1], (0..9).map(|i| i as f32).collect()).unwrap();
        export_image_grid(&p, &images, 2).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header = b"P6\n2 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let px = &bytes[header.len()..];
        assert_eq!(px.len(), 12);
        // The fourth tile is padding and stays black.
        assert_eq!(&px[9..], &[0, 0, 0]);
    }

    #[test]
    fn rejects_bad_channel_counts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        let images = Tensor::zeros(&[1, 2, 2, 2]);
        assert!(export_image_grid(&p, &images, 1).is_err());
    }

    #[test]
    fn constant_images_stay_finite() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.pgm");
        let images = Tensor::from_vec(&[1, 1, 1, 2], vec![0.5, 0.5]).unwrap();
        export_image_grid(&p, &images, 1).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[0, 0]);
    }
}
