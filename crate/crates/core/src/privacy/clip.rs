use crate::error::{Error, Result};
use crate::tensor::{global_l2_norm, Tensor};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// Rescales one example's gradient in place so its global L2 norm (across
/// all parameter tensors jointly) is at most `clip`. Returns the norm before
/// clipping.
pub fn clip_gradients(grads: &mut [Tensor<f32>], clip: f64) -> Result<f64> {
    if !(clip > 0.0) || !clip.is_finite() {
        return Err(Error::InvalidArgument(format!("clip bound must be > 0, got {clip}")));
    }
    let norm = global_l2_norm(grads);
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient norm".into()));
    }
    if norm > clip {
        let scale = (clip / norm) as f32;
        for t in grads.iter_mut() {
            t.scale(scale);
        }
    }
    Ok(norm)
}

/// Differentially private mean gradient of one batch.
///
/// Clips every per-example gradient to `clip`, sums, adds one independent
/// N(0, (sigma*clip)^2) draw per coordinate, and divides by the nominal
/// batch size (not the realized one; with Poisson sampling the realized
/// count is itself data-dependent and must not be released).
///
/// `shapes` fixes the output layout so an empty batch still yields a
/// well-formed noise-only release. Accumulation runs in f64; the result is
/// rounded to f32 at the end.
pub fn sanitize_mean(
    per_example: &[Vec<Tensor<f32>>],
    shapes: &[Vec<usize>],
    clip: f64,
    sigma: f64,
    batch_nominal: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<Tensor<f32>>> {
    if batch_nominal == 0 {
        return Err(Error::InvalidArgument("nominal batch size must be >= 1".into()));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    if !(clip > 0.0) || !clip.is_finite() {
        return Err(Error::InvalidArgument(format!("clip bound must be > 0, got {clip}")));
    }

    let mut sums: Vec<Vec<f64>> =
        shapes.iter().map(|s| vec![0.0f64; s.iter().product()]).collect();

    for example in per_example {
        if example.len() != shapes.len() {
            return Err(Error::ShapeMismatch {
                what: "per-example gradient tensor count".into(),
                expected: vec![shapes.len()],
                got: vec![example.len()],
            });
        }
        let mut clipped = example.clone();
        for (t, s) in clipped.iter().zip(shapes.iter()) {
            if t.shape() != s.as_slice() {
                return Err(Error::ShapeMismatch {
                    what: "per-example gradient".into(),
                    expected: s.clone(),
                    got: t.shape().to_vec(),
                });
            }
        }
        clip_gradients(&mut clipped, clip)?;
        for (sum, t) in sums.iter_mut().zip(clipped.iter()) {
            for (acc, &g) in sum.iter_mut().zip(t.as_slice()) {
                *acc += g as f64;
            }
        }
    }

    // One noise draw per coordinate, in a fixed tensor-major order, so the
    // stream consumption is identical regardless of batch content.
    let noise_scale = sigma * clip;
    let inv_b = 1.0 / batch_nominal as f64;
    let mut out = Vec::with_capacity(shapes.len());
    for (shape, mut sum) in shapes.iter().zip(sums.into_iter()) {
        for acc in sum.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *acc = (*acc + noise_scale * z) * inv_b;
        }
        out.push(Tensor::from_vec(shape, sum.iter().map(|&x| x as f32).collect())?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn grads(parts: &[&[f32]]) -> Vec<Tensor<f32>> {
        parts.iter().map(|p| Tensor::from_vec(&[p.len()], p.to_vec()).unwrap()).collect()
    }

    #[test]
    fn clip_is_noop_below_bound() {
        let mut g = grads(&[&[0.3, 0.4]]);
        let before = g.clone();
        let norm = clip_gradients(&mut g, 1.0).unwrap();
        assert!((norm - 0.5).abs() < 1e-7);
        assert_eq!(g, before);
    }

    #[test]
    fn clip_rescales_to_bound_across_tensors() {
        // Norm spans both tensors: sqrt(3^2 + 4^2) = 5.
        let mut g = grads(&[&[3.0], &[4.0]]);
        let norm = clip_gradients(&mut g, 1.0).unwrap();
        assert!((norm - 5.0).abs() < 1e-6);
        let after = global_l2_norm(&g);
        assert!((after - 1.0).abs() < 1e-6, "post-clip norm {after}");
        assert!((g[0].as_slice()[0] - 0.6).abs() < 1e-6);
        assert!((g[1].as_slice()[0] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn clip_validates_bound() {
        let mut g = grads(&[&[1.0]]);
        assert!(clip_gradients(&mut g, 0.0).is_err());
        assert!(clip_gradients(&mut g, f64::NAN).is_err());
    }

    #[test]
    fn sigma_zero_gives_exact_clipped_mean() {
        let shapes = vec![vec![2usize]];
        let ex1 = grads(&[&[3.0, 4.0]]); // norm 5, clipped to norm 1
        let ex2 = grads(&[&[0.1, 0.0]]); // untouched
        let mut rng = stream_rng(7, "noise", 0);
        let out =
            sanitize_mean(&[ex1, ex2], &shapes, 1.0, 0.0, 2, &mut rng).unwrap();
        let got = out[0].as_slice();
        assert!((got[0] - (0.6 + 0.1) / 2.0).abs() < 1e-6);
        assert!((got[1] - 0.8 / 2.0).abs() < 1e-6);
    }

    #[test]
    fn empty_batch_releases_pure_noise() {
        let shapes = vec![vec![3usize]];
        let mut rng = stream_rng(7, "noise", 0);
        let out = sanitize_mean(&[], &shapes, 0.5, 2.0, 4, &mut rng).unwrap();
        assert_eq!(out[0].shape(), &[3]);
        // Nonzero with overwhelming probability under the fixed seed.
        assert!(out[0].as_slice().iter().any(|&x| x != 0.0));

        // Same seed reproduces the same release.
        let mut rng2 = stream_rng(7, "noise", 0);
        let out2 = sanitize_mean(&[], &shapes, 0.5, 2.0, 4, &mut rng2).unwrap();
        assert_eq!(out[0], out2[0]);
    }

    #[test]
    fn division_uses_nominal_batch_size() {
        let shapes = vec![vec![1usize]];
        let ex = grads(&[&[0.5]]);
        let mut rng = stream_rng(7, "noise", 0);
        // One realized example, nominal 10: mean must be 0.05, not 0.5.
        let out = sanitize_mean(&[ex], &shapes, 1.0, 0.0, 10, &mut rng).unwrap();
        assert!((out[0].as_slice()[0] - 0.05).abs() < 1e-7);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let shapes = vec![vec![2usize]];
        let bad = grads(&[&[1.0, 2.0, 3.0]]);
        let mut rng = stream_rng(7, "noise", 0);
        assert!(sanitize_mean(&[bad], &shapes, 1.0, 1.0, 1, &mut rng).is_err());
    }
}
