//! Shamir sharing of 32-byte seeds over F_q.
//!
//! A seed is cut into fixed-width limbs and each limb is the constant term of
//! its own random polynomial. Holder `h` (1-based) receives the evaluations at
//! `x = h`.

use std::collections::BTreeMap;

use super::{Seed, SEED_LEN};
use crate::error::{Error, Result};
use crate::field::{FieldElement, PrimeField, WordSource};

/// Limb width used for protocol seeds; fits any q > 2^16.
pub const SEED_LIMB_BITS: u32 = 16;

/// Little-endian limbs of `bits` width. `bits` must divide 64 and be at most 32.
pub fn split_limbs(seed: &Seed, bits: u32) -> Vec<u64> {
    assert!(matches!(bits, 8 | 16 | 32), "unsupported limb width {bits}");
    let per = (bits / 8) as usize;
    seed.as_bytes()
        .chunks(per)
        .map(|c| c.iter().rev().fold(0u64, |acc, &b| acc << 8 | b as u64))
        .collect()
}

/// Inverse of [`split_limbs`]; `None` if a limb does not fit its width.
pub fn join_limbs(limbs: &[u64], bits: u32) -> Option<Seed> {
    let per = (bits / 8) as usize;
    if limbs.len() * per != SEED_LEN {
        return None;
    }
    let mut out = [0u8; SEED_LEN];
    for (k, &limb) in limbs.iter().enumerate() {
        if limb >> bits != 0 {
            return None;
        }
        out[k * per..(k + 1) * per].copy_from_slice(&limb.to_le_bytes()[..per]);
    }
    Some(Seed(out))
}

/// One holder's evaluations, one per limb.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Share {
    pub holder: u32,
    pub limbs: Vec<FieldElement>,
}

impl Share {
    pub fn wire_len(&self) -> usize {
        4 + 2 + 8 * self.limbs.len()
    }

    /// holder (u32 LE) | limb count (u16 LE) | limbs (u64 LE each)
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.holder.to_le_bytes());
        out.extend_from_slice(&(self.limbs.len() as u16).to_le_bytes());
        for l in &self.limbs {
            out.extend_from_slice(&l.value().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], field: &PrimeField) -> Result<Share> {
        let header = bytes
            .get(..6)
            .ok_or_else(|| Error::Wire("share shorter than its header".into()))?;
        let holder = u32::from_le_bytes(header[..4].try_into().unwrap());
        let count = u16::from_le_bytes(header[4..6].try_into().unwrap()) as usize;
        let body = &bytes[6..];
        if body.len() != 8 * count {
            return Err(Error::Wire(format!(
                "share declares {count} limbs but carries {} bytes",
                body.len()
            )));
        }
        let limbs = body
            .chunks_exact(8)
            .map(|c| {
                let v = u64::from_le_bytes(c.try_into().unwrap());
                if v >= field.modulus() {
                    Err(Error::Wire(format!("limb {v} is not a field element")))
                } else {
                    Ok(field.element(v))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Share { holder, limbs })
    }
}

/// Lagrange coefficients for interpolation at zero from a fixed holder set.
/// Reusable across every secret shared with the same holders.
#[derive(Clone, Debug)]
pub struct LagrangeBasis {
    holders: Vec<u32>,
    weights: Vec<FieldElement>,
}

impl LagrangeBasis {
    pub fn at_zero(field: &PrimeField, holders: &[u32]) -> Self {
        let xs: Vec<FieldElement> = holders.iter().map(|&h| field.element(h as u64)).collect();
        let weights = xs
            .iter()
            .enumerate()
            .map(|(k, &xk)| {
                let mut num = field.element(1);
                let mut den = field.element(1);
                for (m, &xm) in xs.iter().enumerate() {
                    if m != k {
                        num = field.mul(num, xm);
                        den = field.mul(den, field.sub(xm, xk));
                    }
                }
                field.mul(num, field.inv(den))
            })
            .collect();
        LagrangeBasis {
            holders: holders.to_vec(),
            weights,
        }
    }

    pub fn holders(&self) -> &[u32] {
        &self.holders
    }

    /// Interpolates each limb at zero; `shares[k]` must come from `holders()[k]`.
    pub fn interpolate(&self, field: &PrimeField, shares: &[&Share]) -> Vec<FieldElement> {
        debug_assert_eq!(shares.len(), self.weights.len());
        let width = shares.first().map_or(0, |s| s.limbs.len());
        (0..width)
            .map(|l| {
                self.weights
                    .iter()
                    .zip(shares)
                    .fold(FieldElement::ZERO, |acc, (&w, s)| {
                        field.add(acc, field.mul(w, s.limbs[l]))
                    })
            })
            .collect()
    }
}

/// The random polynomials behind one sharing; evaluates shares on demand.
#[derive(Clone, Debug)]
pub struct SharingPolynomials {
    field: PrimeField,
    width: usize,
    /// `coefficients[k * width + limb]` multiplies x^k; row 0 holds the limbs.
    coefficients: Vec<FieldElement>,
}

impl SharingPolynomials {
    pub fn evaluate(&self, holder: u32) -> Share {
        self.evaluate_at(&EvaluationPoints::new(self.field, &[holder], self.degree()))
            .pop()
            .expect("one holder")
    }

    /// Shares for every holder in `points`, in the same order.
    pub fn evaluate_at(&self, points: &EvaluationPoints) -> Vec<Share> {
        let rows = self.degree() + 1;
        assert_eq!(points.rows, rows, "evaluation points built for another degree");
        points
            .holders
            .iter()
            .zip(points.powers.chunks_exact(rows))
            .map(|(&holder, powers)| {
                let mut limbs = vec![FieldElement::ZERO; self.width];
                let x = self.field.element(holder as u64);
                self.field.evaluate_rows(x, powers, &self.coefficients, &mut limbs);
                Share { holder, limbs }
            })
            .collect()
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() / self.width - 1
    }
}

/// Powers 1, x, ..., x^degree for a fixed list of holders, reusable across sharings.
#[derive(Clone, Debug)]
pub struct EvaluationPoints {
    holders: Vec<u32>,
    rows: usize,
    powers: Vec<FieldElement>,
}

impl EvaluationPoints {
    pub fn new(field: PrimeField, holders: &[u32], degree: usize) -> Self {
        let rows = degree + 1;
        let mut powers = Vec::with_capacity(holders.len() * rows);
        for &h in holders {
            let x = field.element(h as u64);
            let mut p = field.element(1);
            for _ in 0..rows {
                powers.push(p);
                p = field.mul(p, x);
            }
        }
        EvaluationPoints {
            holders: holders.to_vec(),
            rows,
            powers,
        }
    }

    pub fn holders(&self) -> &[u32] {
        &self.holders
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShamirScheme {
    field: PrimeField,
    parties: u32,
    degree: usize,
    limb_bits: u32,
}

impl ShamirScheme {
    pub fn new(field: PrimeField, parties: u32, degree: usize) -> Result<Self> {
        Self::with_limb_bits(field, parties, degree, SEED_LIMB_BITS)
    }

    pub fn with_limb_bits(field: PrimeField, parties: u32, degree: usize, limb_bits: u32) -> Result<Self> {
        if degree >= parties as usize {
            return Err(Error::DegreeTooLarge {
                degree,
                shares: parties as usize,
            });
        }
        if parties as u64 >= field.modulus() {
            return Err(Error::config(
                "shamir.parties",
                "must be smaller than the field modulus",
            ));
        }
        if !matches!(limb_bits, 8 | 16 | 32) || 1u64 << limb_bits > field.modulus() {
            return Err(Error::config(
                "shamir.limb_bits",
                "limbs must be 8, 16 or 32 bits and below q",
            ));
        }
        Ok(ShamirScheme {
            field,
            parties,
            degree,
            limb_bits,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn threshold(&self) -> usize {
        self.degree + 1
    }

    pub fn parties(&self) -> u32 {
        self.parties
    }

    pub fn limb_bits(&self) -> u32 {
        self.limb_bits
    }

    /// Draws the polynomials for `secret` from `randomness`.
    pub fn polynomials<S: WordSource + ?Sized>(&self, secret: &Seed, randomness: &mut S) -> Result<SharingPolynomials> {
        let limbs = split_limbs(secret, self.limb_bits);
        let width = limbs.len();
        let mut coefficients: Vec<FieldElement> = limbs.into_iter().map(|l| self.field.element(l)).collect();
        coefficients.reserve(width * self.degree);
        // Random coefficients are drawn limb by limb, x^1 upward.
        let mut random = vec![FieldElement::ZERO; width * self.degree];
        for limb in 0..width {
            for k in 0..self.degree {
                random[k * width + limb] = self.field.sample_uniform(randomness)?;
            }
        }
        coefficients.extend(random);
        Ok(SharingPolynomials {
            field: self.field,
            width,
            coefficients,
        })
    }

    /// Shares for holders 1..=parties.
    pub fn share<S: WordSource + ?Sized>(&self, secret: &Seed, randomness: &mut S) -> Result<Vec<Share>> {
        let poly = self.polynomials(secret, randomness)?;
        let holders: Vec<u32> = (1..=self.parties).collect();
        Ok(poly.evaluate_at(&EvaluationPoints::new(self.field, &holders, self.degree)))
    }

    /// Reconstructs from any `threshold()` or more shares. With spare shares,
    /// the lowest and highest qualifying holder subsets must agree.
    pub fn reconstruct(&self, shares: &[Share]) -> Result<Seed> {
        let mut by_holder: BTreeMap<u32, &Share> = BTreeMap::new();
        for s in shares {
            if s.holder == 0 || s.holder > self.parties {
                return Err(Error::Wire(format!("share holder {} out of range", s.holder)));
            }
            match by_holder.get(&s.holder) {
                Some(prev) if prev.limbs != s.limbs => return Err(Error::InconsistentShares),
                Some(_) => {}
                None => {
                    by_holder.insert(s.holder, s);
                }
            }
        }
        let k = self.threshold();
        if by_holder.len() < k {
            return Err(Error::InsufficientShares {
                have: by_holder.len(),
                need: k,
            });
        }
        let ordered: Vec<&Share> = by_holder.into_values().collect();
        let low = &ordered[..k];
        let secret = self.interpolate(low)?;
        if ordered.len() > k {
            let high = &ordered[ordered.len() - k..];
            if self.interpolate(high)? != secret {
                return Err(Error::InconsistentShares);
            }
        }
        Ok(secret)
    }

    /// Reconstruction with a precomputed basis; no redundancy check.
    pub fn reconstruct_with(&self, basis: &LagrangeBasis, shares: &[&Share]) -> Result<Seed> {
        if shares.len() < self.threshold() || basis.holders().len() != shares.len() {
            return Err(Error::InsufficientShares {
                have: shares.len(),
                need: self.threshold(),
            });
        }
        self.assemble(&basis.interpolate(&self.field, shares))
    }

    fn interpolate(&self, shares: &[&Share]) -> Result<Seed> {
        let holders: Vec<u32> = shares.iter().map(|s| s.holder).collect();
        let basis = LagrangeBasis::at_zero(&self.field, &holders);
        self.assemble(&basis.interpolate(&self.field, shares))
    }

    fn assemble(&self, limbs: &[FieldElement]) -> Result<Seed> {
        let raw: Vec<u64> = limbs.iter().map(|l| l.value()).collect();
        join_limbs(&raw, self.limb_bits).ok_or(Error::InconsistentShares)
    }
}
