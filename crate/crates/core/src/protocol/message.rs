//! Wire formats. All integers little endian.
//!
//! sparse: user (u32) | count (u32) | count locations (u32) | count values (u64)
//! dense:  user (u32) | count (u32) | count values (u64)

use crate::error::{Error, Result};
use crate::field::{FieldElement, PrimeField};

pub const HEADER_BYTES: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseMaskedGradient {
    pub user: u32,
    /// Strictly increasing coordinates.
    pub locations: Vec<u32>,
    pub values: Vec<FieldElement>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenseMaskedGradient {
    pub user: u32,
    pub values: Vec<FieldElement>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MaskedGradient {
    Sparse(SparseMaskedGradient),
    Dense(DenseMaskedGradient),
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn read_values(body: &[u8], field: &PrimeField) -> Result<Vec<FieldElement>> {
    body.chunks_exact(8)
        .map(|c| {
            let v = u64::from_le_bytes(c.try_into().unwrap());
            if v < field.modulus() {
                Ok(field.element(v))
            } else {
                Err(Error::Wire(format!("value {v} is not a field element")))
            }
        })
        .collect()
}

fn header(bytes: &[u8]) -> Result<(u32, usize)> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Wire("message shorter than its header".into()));
    }
    Ok((read_u32(bytes, 0), read_u32(bytes, 4) as usize))
}

impl SparseMaskedGradient {
    pub fn wire_len(&self) -> usize {
        HEADER_BYTES + 12 * self.locations.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.user.to_le_bytes());
        out.extend_from_slice(&(self.locations.len() as u32).to_le_bytes());
        for l in &self.locations {
            out.extend_from_slice(&l.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.value().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], field: &PrimeField) -> Result<Self> {
        let (user, count) = header(bytes)?;
        if bytes.len() != HEADER_BYTES + 12 * count {
            return Err(Error::Wire(format!(
                "sparse message with {count} entries has {} bytes",
                bytes.len()
            )));
        }
        let split = HEADER_BYTES + 4 * count;
        let locations: Vec<u32> = bytes[HEADER_BYTES..split]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if locations.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Wire("locations are not strictly increasing".into()));
        }
        let values = read_values(&bytes[split..], field)?;
        Ok(SparseMaskedGradient {
            user,
            locations,
            values,
        })
    }
}

impl DenseMaskedGradient {
    pub fn wire_len(&self) -> usize {
        HEADER_BYTES + 8 * self.values.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.user.to_le_bytes());
        out.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.value().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], field: &PrimeField) -> Result<Self> {
        let (user, count) = header(bytes)?;
        if bytes.len() != HEADER_BYTES + 8 * count {
            return Err(Error::Wire(format!(
                "dense message with {count} entries has {} bytes",
                bytes.len()
            )));
        }
        Ok(DenseMaskedGradient {
            user,
            values: read_values(&bytes[HEADER_BYTES..], field)?,
        })
    }
}

impl MaskedGradient {
    pub fn user(&self) -> u32 {
        match self {
            MaskedGradient::Sparse(m) => m.user,
            MaskedGradient::Dense(m) => m.user,
        }
    }

    pub fn wire_len(&self) -> usize {
        match self {
            MaskedGradient::Sparse(m) => m.wire_len(),
            MaskedGradient::Dense(m) => m.wire_len(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            MaskedGradient::Sparse(m) => m.to_bytes(),
            MaskedGradient::Dense(m) => m.to_bytes(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::DEFAULT_MODULUS;

    #[test]
    fn sparse_golden_bytes() {
        let f = PrimeField::with_modulus(DEFAULT_MODULUS).unwrap();
        let m = SparseMaskedGradient {
            user: 7,
            locations: vec![2, 258],
            values: vec![f.element(1), f.element(DEFAULT_MODULUS - 1)],
        };
        let b = m.to_bytes();
        assert_eq!(
            b,
            [
                7, 0, 0, 0, 2, 0, 0, 0, // user, count
                2, 0, 0, 0, 2, 1, 0, 0, // locations
                1, 0, 0, 0, 0, 0, 0, 0, //
                0xfe, 0xff, 0xff, 0x7f, 0, 0, 0, 0,
            ]
        );
        assert_eq!(b.len(), m.wire_len());
        assert_eq!(SparseMaskedGradient::from_bytes(&b, &f).unwrap(), m);
    }

    #[test]
    fn dense_golden_bytes() {
        let f = PrimeField::with_modulus(DEFAULT_MODULUS).unwrap();
        let m = DenseMaskedGradient {
            user: 1,
            values: vec![f.element(3)],
        };
        let b = m.to_bytes();
        assert_eq!(b, [1, 0, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(DenseMaskedGradient::from_bytes(&b, &f).unwrap(), m);
    }

    #[test]
    fn malformed_messages_are_rejected() {
        let f = PrimeField::with_modulus(DEFAULT_MODULUS).unwrap();
        assert!(SparseMaskedGradient::from_bytes(&[0; 7], &f).is_err());
        let m = SparseMaskedGradient {
            user: 0,
            locations: vec![5, 5],
            values: vec![f.element(0); 2],
        };
        assert!(SparseMaskedGradient::from_bytes(&m.to_bytes(), &f).is_err());
        let mut b = SparseMaskedGradient {
            locations: vec![5],
            values: vec![f.element(0)],
            ..m
        }
        .to_bytes();
        b[12..20].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(SparseMaskedGradient::from_bytes(&b, &f).is_err());
        assert!(DenseMaskedGradient::from_bytes(&[0, 0, 0, 0, 2, 0, 0, 0], &f).is_err());
    }
}
