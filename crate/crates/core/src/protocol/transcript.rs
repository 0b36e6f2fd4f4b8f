//! Round transcripts: a u32 message count, then each message as a u32 length
//! followed by its wire bytes (all little endian).

use std::io::{Read, Write};

use super::config::Mode;
use super::message::{DenseMaskedGradient, MaskedGradient, SparseMaskedGradient};
use crate::error::{Error, Result};
use crate::field::PrimeField;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Transcript {
    pub messages: Vec<Vec<u8>>,
}

impl Transcript {
    pub fn record(&mut self, msg: &MaskedGradient) {
        self.messages.push(msg.to_bytes());
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.messages.len() as u32).to_le_bytes())?;
        for m in &self.messages {
            w.write_all(&(m.len() as u32).to_le_bytes())?;
            w.write_all(m)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let count = u32::from_le_bytes(word) as usize;
        let mut messages = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            r.read_exact(&mut word)?;
            let mut m = vec![0u8; u32::from_le_bytes(word) as usize];
            r.read_exact(&mut m)?;
            messages.push(m);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Wire(format!("{} trailing bytes after transcript", rest.len())));
        }
        Ok(Transcript { messages })
    }

    /// Decodes every message under the given mode.
    pub fn replay(&self, mode: Mode, field: &PrimeField) -> Result<Vec<MaskedGradient>> {
        self.messages
            .iter()
            .map(|b| match mode {
                Mode::Sparse => SparseMaskedGradient::from_bytes(b, field).map(MaskedGradient::Sparse),
                Mode::Baseline => DenseMaskedGradient::from_bytes(b, field).map(MaskedGradient::Dense),
            })
            .collect()
    }
}
