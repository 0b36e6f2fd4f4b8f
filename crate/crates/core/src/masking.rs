//! Expansion of seeds into additive masks, pairwise selection bits and the
//! per-user selection set.

use crate::crypto::{DomainTag, LaneReader, PrgStream, Seed};
use crate::error::{Error, Result};
use crate::field::{FieldElement, PrimeField, MAX_REJECTIONS};

/// 1 - (1 - alpha/(n-1))^(n-1): chance a coordinate is selected by a user.
pub fn selection_probability(alpha: f64, n: u32) -> f64 {
    assert!(n >= 2, "selection needs at least two users");
    let rate = (alpha / (n - 1) as f64).min(1.0);
    // ln_1p/exp_m1 keep precision when the rate is tiny and n is huge
    -(((n - 1) as f64) * (-rate).ln_1p()).exp_m1()
}

/// Word threshold for a Bernoulli(alpha/(n-1)) draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitThreshold {
    Always,
    Below(u64),
}

impl BitThreshold {
    pub fn new(alpha: f64, n: u32) -> Self {
        let rate = alpha / (n - 1) as f64;
        if rate >= 1.0 {
            BitThreshold::Always
        } else {
            // f64 -> u64 casts saturate and send NaN/negatives to 0
            BitThreshold::Below((rate * 18_446_744_073_709_551_616.0) as u64)
        }
    }

    #[inline]
    pub fn hit(self, word: u64) -> bool {
        match self {
            BitThreshold::Always => true,
            BitThreshold::Below(t) => word < t,
        }
    }
}

/// Bit vector of length `len`, stored as its sorted set positions.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct BitMask {
    len: usize,
    ones: Vec<u32>,
}

impl BitMask {
    pub fn from_ones(len: usize, mut ones: Vec<u32>) -> Self {
        ones.sort_unstable();
        ones.dedup();
        assert!(
            ones.last().is_none_or(|&l| (l as usize) < len),
            "bit index out of range"
        );
        BitMask { len, ones }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let ones = bits
            .iter()
            .enumerate()
            .filter_map(|(l, &b)| b.then_some(l as u32))
            .collect();
        BitMask { len: bits.len(), ones }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn ones(&self) -> &[u32] {
        &self.ones
    }

    pub fn count_ones(&self) -> usize {
        self.ones.len()
    }

    pub fn get(&self, l: usize) -> bool {
        self.ones.binary_search(&(l as u32)).is_ok()
    }

    pub fn to_bits(&self) -> Vec<bool> {
        let mut bits = vec![false; self.len];
        for &l in &self.ones {
            bits[l as usize] = true;
        }
        bits
    }

    /// Copy with bit `l` inverted.
    pub fn flipped(&self, l: usize) -> Self {
        let mut bits = self.to_bits();
        bits[l] = !bits[l];
        Self::from_bits(&bits)
    }
}

fn uniform_at(field: &PrimeField, lane: &mut LaneReader, l: u32) -> Result<FieldElement> {
    let (q, limit) = (field.modulus(), field.rejection_threshold());
    lane.draw(l as u64, |w| (w < limit).then(|| field.element(w % q)), MAX_REJECTIONS)
        .ok_or(Error::StreamExhausted(MAX_REJECTIONS))
}

/// Uniform field vector of length `d` from the seed's lane.
pub fn expand_additive_mask(
    field: &PrimeField,
    seed: &Seed,
    tag: DomainTag,
    round: u64,
    d: usize,
) -> Result<Vec<FieldElement>> {
    let mut lane = LaneReader::new(seed, tag, round);
    (0..d as u32).map(|l| uniform_at(field, &mut lane, l)).collect()
}

/// The same mask evaluated only at ascending `positions`.
pub fn additive_mask_at(
    field: &PrimeField,
    seed: &Seed,
    tag: DomainTag,
    round: u64,
    positions: &[u32],
) -> Result<Vec<FieldElement>> {
    let mut lane = LaneReader::new(seed, tag, round);
    positions.iter().map(|&l| uniform_at(field, &mut lane, l)).collect()
}

/// Bernoulli(alpha/(n-1)) bits, one Binary-lane word per coordinate.
pub fn expand_binary_mask(seed: &Seed, round: u64, d: usize, alpha: f64, n: u32) -> BitMask {
    let threshold = BitThreshold::new(alpha, n);
    if threshold == BitThreshold::Always {
        return BitMask {
            len: d,
            ones: (0..d as u32).collect(),
        };
    }
    let mut stream = PrgStream::new(seed, DomainTag::Binary, round);
    let mut words = vec![0u64; d.min(1 << 14)];
    let mut ones = Vec::new();
    let mut base = 0usize;
    while base < d {
        let chunk = &mut words[..(d - base).min(1 << 14)];
        stream.fill_words(chunk);
        ones.extend(
            chunk
                .iter()
                .enumerate()
                .filter(|(_, &w)| threshold.hit(w))
                .map(|(k, _)| (base + k) as u32),
        );
        base += chunk.len();
    }
    BitMask { len: d, ones }
}

/// A pair's shared masks: selection bits and the additive values at those bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairMask {
    pub bits: BitMask,
    /// r_ij at each position of `bits.ones()`.
    pub values: Vec<FieldElement>,
}

impl PairMask {
    pub fn expand(
        field: &PrimeField,
        additive_seed: &Seed,
        binary_seed: &Seed,
        round: u64,
        d: usize,
        alpha: f64,
        n: u32,
    ) -> Result<Self> {
        let bits = expand_binary_mask(binary_seed, round, d, alpha, n);
        let values = additive_mask_at(field, additive_seed, DomainTag::AdditivePairwise, round, bits.ones())?;
        Ok(PairMask { bits, values })
    }
}

/// Seeds a user holds for one round.
#[derive(Clone, Debug)]
pub struct PeerSeeds {
    pub peer: u32,
    pub additive: Seed,
    pub binary: Seed,
}

/// One user's masks for one round, stored sparsely.
#[derive(Clone, Debug)]
pub struct MaskSet {
    pub user: u32,
    /// Sorted selection set U_i.
    pub selection: Vec<u32>,
    /// r_i at each position of `selection`.
    pub private: Vec<FieldElement>,
    /// Pair masks sorted by peer.
    pub pairs: Vec<(u32, PairMask)>,
}

impl MaskSet {
    /// Assembles a mask set from already expanded pair masks.
    pub fn from_pairs(
        field: &PrimeField,
        user: u32,
        private_seed: &Seed,
        round: u64,
        mut pairs: Vec<(u32, PairMask)>,
    ) -> Result<Self> {
        pairs.sort_by_key(|(peer, _)| *peer);
        let mut selection: Vec<u32> = pairs.iter().flat_map(|(_, m)| m.bits.ones().iter().copied()).collect();
        selection.sort_unstable();
        selection.dedup();
        let private = additive_mask_at(field, private_seed, DomainTag::AdditivePrivate, round, &selection)?;
        Ok(MaskSet {
            user,
            selection,
            private,
            pairs,
        })
    }

    pub fn pair(&self, peer: u32) -> Option<&PairMask> {
        self.pairs
            .binary_search_by_key(&peer, |(p, _)| *p)
            .ok()
            .map(|k| &self.pairs[k].1)
    }

    /// Net mask added at each selected coordinate:
    /// r_i + sum_{j>i} b_ij r_ij - sum_{j<i} b_ij r_ij.
    pub fn net_mask(&self, field: &PrimeField) -> Vec<FieldElement> {
        let mut net = self.private.clone();
        for (peer, pm) in &self.pairs {
            let mut k = 0;
            for (&l, &r) in pm.bits.ones().iter().zip(&pm.values) {
                while self.selection[k] < l {
                    k += 1;
                }
                net[k] = if *peer > self.user {
                    field.add(net[k], r)
                } else {
                    field.sub(net[k], r)
                };
            }
        }
        net
    }
}

/// Expands every mask of `user` from its seeds.
#[allow(clippy::too_many_arguments)]
pub fn build_mask_set(
    field: &PrimeField,
    user: u32,
    peers: &[PeerSeeds],
    private_seed: &Seed,
    round: u64,
    d: usize,
    alpha: f64,
    n: u32,
) -> Result<MaskSet> {
    let pairs = peers
        .iter()
        .map(|p| {
            Ok((
                p.peer,
                PairMask::expand(field, &p.additive, &p.binary, round, d, alpha, n)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    MaskSet::from_pairs(field, user, private_seed, round, pairs)
}
