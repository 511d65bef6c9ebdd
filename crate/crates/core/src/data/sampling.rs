use crate::error::{Error, Result};
use rand::Rng;

/// Draws a Poisson-subsampled batch: each of the `n` indices is included
/// independently with probability `q`. The batch size is random; callers
/// that divide by a batch size must use the nominal one, not `len()`.
pub fn poisson_batch(n: usize, q: f64, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!(
            "sampling rate must lie in [0, 1], got {q}"
        )));
    }
    Ok((0..n).filter(|_| rng.random::<f64>() < q).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn degenerate_rates() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        assert!(poisson_batch(100, 0.0, &mut rng).unwrap().is_empty());
        let all = poisson_batch(100, 1.0, &mut rng).unwrap();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(poisson_batch(10, 1.5, &mut rng).is_err());
        assert!(poisson_batch(10, -0.1, &mut rng).is_err());
    }

    #[test]
    fn same_seed_same_batch() {
        let a = poisson_batch(1000, 0.3, &mut ChaCha20Rng::seed_from_u64(42)).unwrap();
        let b = poisson_batch(1000, 0.3, &mut ChaCha20Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
        let c = poisson_batch(1000, 0.3, &mut ChaCha20Rng::seed_from_u64(43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn batch_size_tracks_rate() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mut total = 0usize;
        for _ in 0..50 {
            total += poisson_batch(1000, 0.1, &mut rng).unwrap().len();
        }
        let mean = total as f64 / 50.0;
        // 50 draws of Binomial(1000, 0.1): mean 100, sd ~1.3.
        assert!((mean - 100.0).abs() < 10.0, "mean batch {mean}");
    }

    #[test]
    fn indices_sorted_and_unique() {
        let batch = poisson_batch(500, 0.5, &mut ChaCha20Rng::seed_from_u64(3)).unwrap();
        assert!(batch.windows(2).all(|w| w[0] < w[1]));
    }
}
