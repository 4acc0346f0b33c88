//! Named, independently seeded random streams.
//!
//! Every source of randomness in a run (weight init, epoch shuffling, latent
//! draws, dropout masks, reparametrization noise) pulls from its own stream,
//! derived from the master seed plus a path of labels. Paired experiment arms
//! reuse the same paths for everything except generator init, which is what
//! lets them consume identical draws.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// The stream labels a training run uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamLabels {
    pub init: String,
    pub shuffle: String,
    pub latent: String,
    pub dropout: String,
    pub reparam: String,
}

impl Default for StreamLabels {
    fn default() -> Self {
        StreamLabels {
            init: "init".into(),
            shuffle: "shuffle".into(),
            latent: "latent".into(),
            dropout: "dropout".into(),
            reparam: "reparam".into(),
        }
    }
}

impl StreamLabels {
    pub fn all(&self) -> [&str; 5] {
        [
            &self.init,
            &self.shuffle,
            &self.latent,
            &self.dropout,
            &self.reparam,
        ]
    }

    pub fn distinct(&self) -> bool {
        let labels = self.all();
        for i in 0..labels.len() {
            for j in (i + 1)..labels.len() {
                if labels[i] == labels[j] {
                    return false;
                }
            }
        }
        true
    }
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over a byte string, used to fold path labels into the seed state.
#[inline]
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a ChaCha stream from a master seed and a label path such as
/// `["gan", "init", "disc"]`. Distinct paths give independent streams.
pub fn stream(master: u64, path: &[&str]) -> ChaCha8Rng {
    let mut state = master ^ 0x5851_f42d_4c95_7f2d;
    for label in path {
        state ^= fnv1a(label.as_bytes());
        // Stir so ("ab","c") and ("a","bc") cannot collide.
        state = splitmix64(&mut state);
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Per-replicate master seed for multi-seed experiments.
pub fn replicate_seed(master: u64, replicate: usize) -> u64 {
    let mut state = master ^ fnv1a(&(replicate as u64).to_le_bytes());
    splitmix64(&mut state)
}
