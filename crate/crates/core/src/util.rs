use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives an independent RNG stream from a seed and a list of labels.
///
/// The derivation only depends on its arguments, never on call order, so
/// concurrent callers see the same stream for the same key.
pub(crate) fn keyed_rng(seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `true` when `a` and `b` agree to within `rel` relative error (or both are tiny).
#[cfg(test)]
pub(crate) fn close(a: f64, b: f64, rel: f64) -> bool {
    let scale = a.abs().max(b.abs()).max(1e-300);
    (a - b).abs() <= rel * scale || (a - b).abs() < 1e-15
}
