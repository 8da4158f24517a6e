//! Labeled seed derivation.
//!
//! Every random choice in the crate flows from a root `u64` through a chain of
//! string labels. A [`SketchSeed`] is the pair `(root, lineage)`; its key is the
//! SHA-256 digest of the root followed by each length-prefixed label, so two
//! seeds with equal `(root, lineage)` always produce the same hash functions
//! and generators, and seeds that differ in any label are unrelated.

use std::fmt;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Root plus ordered subseed labels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SketchSeed {
    root: u64,
    lineage: Vec<String>,
}

impl SketchSeed {
    pub fn new(root: u64) -> Self {
        Self {
            root,
            lineage: Vec::new(),
        }
    }

    /// Extends the lineage with one label.
    pub fn child(&self, label: impl fmt::Display) -> Self {
        let mut lineage = self.lineage.clone();
        lineage.push(label.to_string());
        Self {
            root: self.root,
            lineage,
        }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn lineage(&self) -> &[String] {
        &self.lineage
    }

    fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.root.to_le_bytes());
        for label in &self.lineage {
            hasher.update((label.len() as u64).to_le_bytes());
            hasher.update(label.as_bytes());
        }
        let out = hasher.finalize();
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(&out[..]);
        bytes
    }

    /// 64-bit key for the keyed hash functions.
    pub fn key(&self) -> u64 {
        let d = self.digest();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }

    /// Deterministic generator owned by whoever asked for it.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.digest())
    }
}

impl fmt::Display for SketchSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)?;
        for label in &self.lineage {
            write!(f, "/{label}")?;
        }
        Ok(())
    }
}

/// SplitMix64 finalizer.
#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Keyed hash of two words.
#[inline]
pub(crate) fn keyed_hash(key: u64, a: u64, b: u64) -> u64 {
    let inner = mix64(
        a.wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
            ^ 0x1656_67b1_9e37_79f9,
    );
    mix64(key.wrapping_add(inner))
}
