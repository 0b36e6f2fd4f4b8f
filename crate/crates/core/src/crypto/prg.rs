//! ChaCha20 keystreams split into lanes.
//!
//! A lane is `(seed, tag, round)`. The seed is the ChaCha20 key and
//! `tag << 56 | round` is the 64-bit nonce, so lanes never share keystream.
//! Inside a lane, 64-bit word `k` is keystream bytes `8k..8k+8` read little
//! endian. Coordinate `l` of a vector expansion owns main word `l`; the rare
//! rejected draw continues in a retry region far beyond any main word, at
//! [`RETRY_REGION_WORDS`] words per coordinate. This makes every coordinate
//! independently addressable, so sparse and dense expansion agree exactly.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::Seed;
use crate::field::WordSource;

/// Keystream word offset (in 32-bit units) where retry regions start: block 2^62.
const RETRY_BASE_U32: u128 = 1 << 66;

/// 64-bit words reserved per coordinate in the retry region.
pub const RETRY_REGION_WORDS: u128 = 128;

const MAX_ROUND: u64 = (1 << 56) - 1;

/// Forward gaps up to this many words are read through instead of seeking.
const SKIP_AHEAD_WORDS: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum DomainTag {
    AdditivePairwise = 1,
    AdditivePrivate = 2,
    Binary = 3,
    Quantizer = 4,
    Sharing = 5,
}

fn nonce(tag: DomainTag, round: u64) -> u64 {
    assert!(round <= MAX_ROUND, "round index {round} exceeds 56 bits");
    (tag as u64) << 56 | round
}

fn keyed(seed: &Seed, tag: DomainTag, round: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::from_seed(seed.0);
    rng.set_stream(nonce(tag, round));
    rng
}

/// Sequential reader over one lane.
#[derive(Clone, Debug)]
pub struct PrgStream {
    rng: ChaCha20Rng,
}

impl PrgStream {
    pub fn new(seed: &Seed, tag: DomainTag, round: u64) -> Self {
        PrgStream {
            rng: keyed(seed, tag, round),
        }
    }

    /// Stream positioned at 64-bit word `word` of the lane.
    pub fn at_word(seed: &Seed, tag: DomainTag, round: u64, word: u64) -> Self {
        let mut s = Self::new(seed, tag, round);
        s.seek_word(word);
        s
    }

    pub fn seek_word(&mut self, word: u64) {
        self.rng.set_word_pos(word as u128 * 2);
    }

    /// Position in 32-bit keystream words.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Next `n` keystream bytes. Output is consumed in 4-byte units, so an `n`
    /// that is not a multiple of four skips the tail of the final unit.
    pub fn bytes(&mut self, n: usize) -> Vec<u8> {
        let mut out = vec![0u8; n];
        self.rng.fill_bytes(&mut out);
        out
    }

    /// Fills `out` with the next 64-bit words; same values as repeated `next_word`.
    pub fn fill_words(&mut self, out: &mut [u64]) {
        self.rng.fill(out);
    }
}

impl WordSource for PrgStream {
    #[inline]
    fn next_word(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// The words owned by one coordinate: its main word, then its retry region.
#[derive(Clone, Debug)]
pub struct CoordinateStream {
    seed: Seed,
    tag: DomainTag,
    round: u64,
    coordinate: u64,
    state: CoordinateState,
}

#[derive(Clone, Debug)]
enum CoordinateState {
    Main,
    Retry(Box<ChaCha20Rng>),
}

impl CoordinateStream {
    pub fn new(seed: &Seed, tag: DomainTag, round: u64, coordinate: u64) -> Self {
        CoordinateStream {
            seed: *seed,
            tag,
            round,
            coordinate,
            state: CoordinateState::Main,
        }
    }

    fn retry_rng(&self) -> ChaCha20Rng {
        let mut rng = keyed(&self.seed, self.tag, self.round);
        rng.set_word_pos(RETRY_BASE_U32 + self.coordinate as u128 * RETRY_REGION_WORDS * 2);
        rng
    }
}

impl WordSource for CoordinateStream {
    fn next_word(&mut self) -> u64 {
        match &mut self.state {
            CoordinateState::Main => {
                let w = PrgStream::at_word(&self.seed, self.tag, self.round, self.coordinate).next_word();
                self.state = CoordinateState::Retry(Box::new(self.retry_rng()));
                w
            }
            CoordinateState::Retry(rng) => rng.next_u64(),
        }
    }
}

/// Reads main words at increasing coordinates, seeking only across gaps and
/// falling back to a coordinate's retry region when its main word is rejected.
/// Produces exactly the words a fresh [`CoordinateStream`] would.
#[derive(Clone, Debug)]
pub struct LaneReader {
    seed: Seed,
    tag: DomainTag,
    round: u64,
    main: PrgStream,
    next: u64,
}

impl LaneReader {
    pub fn new(seed: &Seed, tag: DomainTag, round: u64) -> Self {
        LaneReader {
            seed: *seed,
            tag,
            round,
            main: PrgStream::new(seed, tag, round),
            next: 0,
        }
    }

    /// Main word of `coordinate`. Coordinates must be visited in increasing order
    /// for sequential reads; going backwards costs a seek.
    #[inline]
    pub fn main_word(&mut self, coordinate: u64) -> u64 {
        if coordinate > self.next && coordinate - self.next <= SKIP_AHEAD_WORDS {
            for _ in self.next..coordinate {
                self.main.next_word();
            }
        } else if coordinate != self.next {
            self.main.seek_word(coordinate);
        }
        self.next = coordinate + 1;
        self.main.next_word()
    }

    /// Draw for `coordinate` with `accept` deciding on each candidate word.
    /// Rejected main words continue in the coordinate's retry region.
    pub fn draw<T>(
        &mut self,
        coordinate: u64,
        mut accept: impl FnMut(u64) -> Option<T>,
        max_tries: usize,
    ) -> Option<T> {
        let first = self.main_word(coordinate);
        if let Some(v) = accept(first) {
            return Some(v);
        }
        let mut retry = CoordinateStream::new(&self.seed, self.tag, self.round, coordinate);
        retry.next_word(); // main word, already consumed above
        for _ in 1..max_tries {
            if let Some(v) = accept(retry.next_word()) {
                return Some(v);
            }
        }
        None
    }
}
