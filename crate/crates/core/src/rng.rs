use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Derives the 32-byte seed for a named substream of a master seed.
///
/// Streams are identified by `(master_seed, name, index)`; the tuple is
/// hashed so distinct names and indices give statistically independent
/// streams and inserting a new stream never shifts an existing one.
pub fn stream_seed(master_seed: u64, name: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update([0x1f]);
    h.update(name.as_bytes());
    h.update([0x1f]);
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    seed
}

/// Deterministic RNG for a named substream. See [`stream_seed`].
pub fn stream_rng(master_seed: u64, name: &str, index: u64) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(stream_seed(master_seed, name, index))
}

/// Hex form of a stream seed, recorded in run reports so a run's randomness
/// can be audited without rerunning the hash.
pub fn stream_seed_hex(master_seed: u64, name: &str, index: u64) -> String {
    stream_seed(master_seed, name, index).iter().map(|b| format!("{b:02x}")).collect()
}

/// Compact u64 substream seed, for nesting jobs that take a master seed of
/// their own.
pub fn derive_u64(master_seed: u64, name: &str, index: u64) -> u64 {
    let seed = stream_seed(master_seed, name, index);
    u64::from_le_bytes(seed[..8].try_into().unwrap())
}
