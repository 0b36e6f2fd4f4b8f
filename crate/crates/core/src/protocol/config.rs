use serde::{Deserialize, Serialize};

use crate::crypto::ShamirScheme;
use crate::error::{Error, Result};
use crate::field::{FieldModulus, PrimeField};
use crate::masking::selection_probability;
use crate::quantizer::DEFAULT_LEVEL;

/// Which aggregation protocol a round runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Sparsified masked gradients: each user sends only its selection set.
    #[default]
    Sparse,
    /// Dense pairwise masking of the whole vector.
    Baseline,
}

/// How pairwise seeds are agreed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyAgreement {
    /// Seeds derived from the simulation master key.
    #[default]
    Dealer,
    /// Finite-field Diffie-Hellman between every pair.
    DiffieHellman,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    /// Cohort size N.
    #[serde(alias = "N")]
    pub users: u32,
    /// Model dimension d.
    #[serde(alias = "d")]
    pub dim: usize,
    pub alpha: f64,
    /// Assumed dropout rate.
    pub theta: f64,
    /// Fraction of users labelled adversarial.
    pub gamma: f64,
    pub q: FieldModulus,
    /// Quantization level c.
    #[serde(alias = "c")]
    pub level: u64,
    pub mode: Mode,
    pub key_agreement: KeyAgreement,
    /// Stress-test switch allowing alpha up to N - 1.
    pub allow_large_alpha: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            users: 10,
            dim: 100,
            alpha: 0.1,
            theta: 0.0,
            gamma: 0.0,
            q: FieldModulus::default(),
            level: DEFAULT_LEVEL,
            mode: Mode::Sparse,
            key_agreement: KeyAgreement::Dealer,
            allow_large_alpha: false,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users < 2 {
            return Err(Error::config("users", "need at least 2 users"));
        }
        if self.users as u64 >= self.q.get() {
            return Err(Error::config("users", "cohort size must be below q"));
        }
        if self.dim == 0 || self.dim > u32::MAX as usize {
            return Err(Error::config("dim", "must lie in [1, 2^32)"));
        }
        let alpha_max = if self.allow_large_alpha {
            (self.users - 1) as f64
        } else {
            1.0
        };
        if !(self.alpha > 0.0 && self.alpha <= alpha_max) {
            return Err(Error::config("alpha", format!("must lie in (0, {alpha_max}]")));
        }
        if !(0.0..0.5).contains(&self.theta) {
            return Err(Error::config("theta", "must lie in [0, 0.5)"));
        }
        if !(0.0..0.5).contains(&self.gamma) {
            return Err(Error::config("gamma", "must lie in [0, 0.5)"));
        }
        if self.level == 0 {
            return Err(Error::config("level", "quantization level must be at least 1"));
        }
        if self.q.get() <= 1 << 16 {
            return Err(Error::config("q", "must exceed 2^16 so 16-bit seed limbs fit"));
        }
        Ok(())
    }

    pub fn field(&self) -> PrimeField {
        PrimeField::new(self.q)
    }

    /// Shamir degree floor(N/2); any floor(N/2) + 1 survivors can unmask.
    pub fn shamir_degree(&self) -> usize {
        self.users as usize / 2
    }

    pub fn threshold(&self) -> usize {
        self.shamir_degree() + 1
    }

    pub fn shamir(&self) -> Result<ShamirScheme> {
        ShamirScheme::new(self.field(), self.users, self.shamir_degree())
    }

    /// Probability that a coordinate is in a user's message (1 in baseline mode).
    pub fn selection_probability(&self) -> f64 {
        match self.mode {
            Mode::Sparse => selection_probability(self.alpha, self.users),
            Mode::Baseline => 1.0,
        }
    }

    /// Expected participation of a coordinate, used to rescale gradients.
    pub fn participation(&self) -> f64 {
        self.selection_probability() * (1.0 - self.theta)
    }

    /// Number of users carrying the adversarial label.
    pub fn adversaries(&self) -> usize {
        (self.gamma * self.users as f64).floor() as usize
    }
}
