//! Seeds, PRG lanes, pairwise key agreement and Shamir sharing.

mod keys;
mod prg;
mod shamir;

pub use keys::{agree_pairwise_seed, derive_pair_seed, Dealer, DhGroup, KeyPair, Purpose};
pub use prg::{CoordinateStream, DomainTag, LaneReader, PrgStream, RETRY_REGION_WORDS};
pub use shamir::{
    join_limbs, split_limbs, EvaluationPoints, LagrangeBasis, ShamirScheme, Share, SharingPolynomials, SEED_LIMB_BITS,
};

use std::fmt;

use sha2::{Digest, Sha256};

pub const SEED_LEN: usize = 32;

/// A 32-byte seed: PRG key, pairwise secret or master key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Seed(pub [u8; SEED_LEN]);

impl Seed {
    pub fn from_bytes(bytes: [u8; SEED_LEN]) -> Self {
        Seed(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; SEED_LEN] {
        &self.0
    }

    /// Convenience for tests and configs: the u64 in the first 8 bytes (LE).
    pub fn from_u64(v: u64) -> Self {
        let mut b = [0u8; SEED_LEN];
        b[..8].copy_from_slice(&v.to_le_bytes());
        Seed(b)
    }

    /// Child seed bound to a label and a tuple of indices.
    pub fn derive(&self, label: &str, indices: &[u64]) -> Seed {
        let mut h = Sha256::new();
        h.update(b"sparse-secagg/derive/v1");
        h.update((label.len() as u32).to_le_bytes());
        h.update(label.as_bytes());
        h.update(self.0);
        h.update((indices.len() as u32).to_le_bytes());
        for i in indices {
            h.update(i.to_le_bytes());
        }
        Seed(h.finalize().into())
    }
}

impl fmt::Debug for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Seed(")?;
        for b in &self.0[..6] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "..)")
    }
}
