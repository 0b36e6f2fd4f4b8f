//! Prime-field arithmetic over F_q, the signed embedding used for quantized
//! gradients, and exact uniform sampling of field elements from a word stream.
//!
//! Not constant time. The modulus is a runtime value so that the same build
//! can run with 2^31 - 1 (default) or any other odd prime below 2^62.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mersenne prime 2^31 - 1.
pub const DEFAULT_MODULUS: u64 = (1 << 31) - 1;

/// Largest modulus accepted; keeps `a + b` inside a u64 without wrapping.
pub const MAX_MODULUS: u64 = 1 << 62;

/// Rejections tolerated before a stream is declared broken.
pub const MAX_REJECTIONS: usize = 128;

/// A source of pseudorandom 64-bit words, each read as 8 little-endian bytes.
pub trait WordSource {
    fn next_word(&mut self) -> u64;
}

impl<I: Iterator<Item = u64>> WordSource for std::iter::Fuse<I> {
    fn next_word(&mut self) -> u64 {
        self.next().expect("word source exhausted")
    }
}

/// An element of F_q. Always reduced; only [`PrimeField`] constructs these.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FieldElement(u64);

impl FieldElement {
    pub const ZERO: FieldElement = FieldElement(0);

    #[inline]
    pub fn value(self) -> u64 {
        self.0
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A validated prime modulus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct FieldModulus(u64);

impl FieldModulus {
    pub fn new(q: u64) -> Result<Self> {
        if !(3..MAX_MODULUS).contains(&q) {
            return Err(Error::config("q", format!("modulus {q} outside [3, 2^62)")));
        }
        if q.is_multiple_of(2) || !is_prime(q) {
            return Err(Error::config("q", format!("{q} is not an odd prime")));
        }
        Ok(FieldModulus(q))
    }

    #[inline]
    pub fn get(self) -> u64 {
        self.0
    }
}

impl Default for FieldModulus {
    fn default() -> Self {
        FieldModulus(DEFAULT_MODULUS)
    }
}

impl TryFrom<u64> for FieldModulus {
    type Error = Error;
    fn try_from(q: u64) -> Result<Self> {
        FieldModulus::new(q)
    }
}

impl From<FieldModulus> for u64 {
    fn from(m: FieldModulus) -> u64 {
        m.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Reduction {
    /// q = 2^k - 1
    Mersenne(u32),
    Generic,
}

/// Arithmetic context for F_q.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrimeField {
    q: u64,
    reduction: Reduction,
    reject_at: u64,
}

impl PrimeField {
    pub fn new(modulus: FieldModulus) -> Self {
        let q = modulus.get();
        let reduction = if (q + 1).is_power_of_two() {
            Reduction::Mersenne((q + 1).trailing_zeros())
        } else {
            Reduction::Generic
        };
        // q never divides 2^64 (odd, > 1), so q * floor(2^64 / q) < 2^64.
        let reject_at = ((1u128 << 64) / q as u128 * q as u128) as u64;
        PrimeField {
            q,
            reduction,
            reject_at,
        }
    }

    pub fn with_modulus(q: u64) -> Result<Self> {
        Ok(Self::new(FieldModulus::new(q)?))
    }

    #[inline]
    pub fn modulus(&self) -> u64 {
        self.q
    }

    /// Largest magnitude representable under the sign map: (q - 1) / 2.
    #[inline]
    pub fn half(&self) -> u64 {
        self.q / 2
    }

    /// Words at or above this value are rejected by [`PrimeField::sample_uniform`].
    #[inline]
    pub fn rejection_threshold(&self) -> u64 {
        self.reject_at
    }

    #[inline]
    pub fn element(&self, v: u64) -> FieldElement {
        FieldElement(self.reduce(v))
    }

    #[inline]
    fn reduce(&self, v: u64) -> u64 {
        match self.reduction {
            Reduction::Mersenne(k) => fold_mersenne(v as u128, k, self.q),
            Reduction::Generic => v % self.q,
        }
    }

    #[inline]
    pub fn add(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        let s = a.0 + b.0;
        FieldElement(if s >= self.q { s - self.q } else { s })
    }

    #[inline]
    pub fn sub(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        FieldElement(if a.0 >= b.0 { a.0 - b.0 } else { a.0 + self.q - b.0 })
    }

    #[inline]
    pub fn neg(&self, a: FieldElement) -> FieldElement {
        if a.0 == 0 {
            a
        } else {
            FieldElement(self.q - a.0)
        }
    }

    #[inline]
    pub fn mul(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        FieldElement(self.reduce_wide(a.0 as u128 * b.0 as u128))
    }

    #[inline]
    fn reduce_wide(&self, x: u128) -> u64 {
        match self.reduction {
            Reduction::Mersenne(k) => {
                let q = self.q as u128;
                // two folds bring any product of reduced operands below 2q
                let x = (x & q) + (x >> k);
                let x = (x & q) + (x >> k);
                let x = x as u64;
                if x >= self.q {
                    x - self.q
                } else {
                    x
                }
            }
            Reduction::Generic => (x % self.q as u128) as u64,
        }
    }

    /// `out[l] = sum_k weights[k] * rows[k * out.len() + l]`, one reduction per output.
    pub fn weighted_rows(&self, weights: &[FieldElement], rows: &[FieldElement], out: &mut [FieldElement]) {
        let width = out.len();
        assert_eq!(rows.len(), weights.len() * width, "row block does not match weights");
        match self.reduction {
            Reduction::Mersenne(k) if k <= 31 && (weights.len() as u64) < 1 << 32 => match width {
                16 => mersenne_rows::<16>(self, k, weights, rows, out),
                32 => mersenne_rows::<32>(self, k, weights, rows, out),
                _ => {
                    for (l, o) in out.iter_mut().enumerate() {
                        let column: Vec<FieldElement> = rows.iter().skip(l).step_by(width).copied().collect();
                        let mut one = [FieldElement::ZERO];
                        mersenne_rows::<1>(self, k, weights, &column, &mut one);
                        *o = one[0];
                    }
                }
            },
            Reduction::Mersenne(k) => match width {
                16 => wide_mersenne_rows::<16>(self, k, weights, rows, out),
                _ => {
                    for (l, o) in out.iter_mut().enumerate() {
                        let column: Vec<FieldElement> = rows.iter().skip(l).step_by(width).copied().collect();
                        let mut one = [FieldElement::ZERO];
                        wide_mersenne_rows::<1>(self, k, weights, &column, &mut one);
                        *o = one[0];
                    }
                }
            },
            Reduction::Generic => {
                out.fill(FieldElement::ZERO);
                for (&w, row) in weights.iter().zip(rows.chunks_exact(width)) {
                    for (o, &c) in out.iter_mut().zip(row) {
                        *o = self.add(*o, self.mul(w, c));
                    }
                }
            }
        }
    }

    /// `out[l] = sum_k x^k * rows[k * out.len() + l]`, where `powers` holds
    /// 1, x, ..., x^(rows - 1). Small points modulo 2^61 - 1 skip the powers
    /// and use Horner's rule on 32-bit halves.
    pub fn evaluate_rows(
        &self,
        x: FieldElement,
        powers: &[FieldElement],
        rows: &[FieldElement],
        out: &mut [FieldElement],
    ) {
        match self.reduction {
            Reduction::Mersenne(61) if x.0 < 1 << 16 && out.len() == 16 => horner_61::<16>(self, x.0, rows, out),
            _ => self.weighted_rows(powers, rows, out),
        }
    }

    pub fn pow(&self, base: FieldElement, mut exp: u64) -> FieldElement {
        let mut acc = FieldElement(1 % self.q);
        let mut b = base;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, b);
            }
            b = self.mul(b, b);
            exp >>= 1;
        }
        acc
    }

    /// Multiplicative inverse via Fermat; zero maps to zero.
    pub fn inv(&self, a: FieldElement) -> FieldElement {
        self.pow(a, self.q - 2)
    }

    /// Order-independent sum with a single final reduction.
    pub fn sum<I>(&self, elements: I) -> FieldElement
    where
        I: IntoIterator<Item = FieldElement>,
    {
        let acc = elements.into_iter().fold(0u128, |acc, e| acc + e.0 as u128);
        FieldElement((acc % self.q as u128) as u64)
    }

    /// Sign map: non-negative values occupy [0, q/2), negative values (q/2, q).
    pub fn phi(&self, z: i64) -> Result<FieldElement> {
        let mag = z.unsigned_abs();
        if mag > self.half() {
            return Err(Error::MagnitudeOverflow {
                value: z as i128,
                half_modulus: self.half(),
            });
        }
        Ok(if z >= 0 {
            FieldElement(mag)
        } else {
            FieldElement(self.q - mag)
        })
    }

    /// Inverse of [`PrimeField::phi`].
    #[inline]
    pub fn phi_inv(&self, x: FieldElement) -> i64 {
        if x.0 <= self.half() {
            x.0 as i64
        } else {
            x.0 as i64 - self.q as i64
        }
    }

    /// Exactly uniform draw from F_q by rejection of the top partial block.
    pub fn sample_uniform<S: WordSource + ?Sized>(&self, stream: &mut S) -> Result<FieldElement> {
        for _ in 0..MAX_REJECTIONS {
            let w = stream.next_word();
            if w < self.reject_at {
                return Ok(FieldElement(self.reduce(w)));
            }
        }
        Err(Error::StreamExhausted(MAX_REJECTIONS))
    }
}

impl Default for PrimeField {
    fn default() -> Self {
        PrimeField::new(FieldModulus::default())
    }
}

/// Products of 31-bit operands are split into two 31-bit halves and summed
/// separately; the sums stay below 2^64 for fewer than 2^32 rows.
fn mersenne_rows<const W: usize>(
    field: &PrimeField,
    k: u32,
    weights: &[FieldElement],
    rows: &[FieldElement],
    out: &mut [FieldElement],
) {
    let q = field.q;
    let mut lo = [0u64; W];
    let mut hi = [0u64; W];
    for (&w, row) in weights.iter().zip(rows.chunks_exact(W)) {
        let w = w.0 as u32 as u64;
        let row: &[FieldElement; W] = row.try_into().expect("row width");
        for l in 0..W {
            let p = w * (row[l].0 as u32 as u64);
            lo[l] += p & q;
            hi[l] += p >> k;
        }
    }
    for l in 0..W {
        out[l] = field.element(lo[l] + hi[l]);
    }
}

/// Wider Mersenne primes: each product is folded once to below 2^(k+1) and
/// summed in 128 bits.
fn wide_mersenne_rows<const W: usize>(
    field: &PrimeField,
    k: u32,
    weights: &[FieldElement],
    rows: &[FieldElement],
    out: &mut [FieldElement],
) {
    let q = field.q as u128;
    let mut acc = [0u128; W];
    for (&w, row) in weights.iter().zip(rows.chunks_exact(W)) {
        let w = w.0 as u128;
        let row: &[FieldElement; W] = row.try_into().expect("row width");
        for l in 0..W {
            let p = w * row[l].0 as u128;
            acc[l] += (p & q) + (p >> k);
        }
    }
    for l in 0..W {
        out[l] = FieldElement(fold_mersenne(acc[l], k, field.q));
    }
}

/// Horner over q = 2^61 - 1 with x < 2^16. The accumulator stays below 2^62;
/// its high half times x is below 2^46, so x * acc needs no 128-bit product.
fn horner_61<const W: usize>(field: &PrimeField, x: u64, rows: &[FieldElement], out: &mut [FieldElement]) {
    const Q: u64 = (1 << 61) - 1;
    const LOW29: u64 = (1 << 29) - 1;
    let x = x as u32 as u64;
    let mut blocks = rows.chunks_exact(W).rev();
    let mut acc = [0u64; W];
    if let Some(top) = blocks.next() {
        for l in 0..W {
            acc[l] = top[l].0;
        }
    }
    for row in blocks {
        let row: &[FieldElement; W] = row.try_into().expect("row width");
        for l in 0..W {
            let hi = (acc[l] >> 32) as u32 as u64;
            let lo = acc[l] as u32 as u64;
            let t = hi * x;
            // t * 2^32 = (t mod 2^29) * 2^32 + (t >> 29) * 2^61
            let v = ((t & LOW29) << 32) + (t >> 29) + lo * x + row[l].0;
            acc[l] = (v & Q) + (v >> 61);
        }
    }
    for l in 0..W {
        out[l] = FieldElement(fold_mersenne(acc[l] as u128, 61, field.q));
    }
}

/// `x mod 2^k - 1` by repeated folding.
#[inline]
fn fold_mersenne(mut x: u128, k: u32, q: u64) -> u64 {
    let q128 = q as u128;
    while x >> k != 0 {
        x = (x & q128) + (x >> k);
    }
    let x = x as u64;
    if x == q {
        0
    } else {
        x
    }
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    (a as u128 * b as u128 % m as u128) as u64
}

fn pow_mod(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_mod(acc, b, m);
        }
        b = mul_mod(b, b, m);
        e >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin; the first twelve prime bases cover all of u64.
pub fn is_prime(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &p in &BASES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'witness: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}
