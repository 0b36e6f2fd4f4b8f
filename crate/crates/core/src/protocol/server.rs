//! Server side of a round: aggregation, seed recovery and unmasking.

use std::collections::{BTreeMap, HashMap};

use super::cohort::{SecretId, SeedId};
use super::config::{Mode, ProtocolConfig};
use super::message::MaskedGradient;
use crate::crypto::{DomainTag, LagrangeBasis, Purpose, Seed, ShamirScheme, Share};
use crate::error::{Error, Result};
use crate::field::{FieldElement, PrimeField};
use crate::masking::{additive_mask_at, expand_additive_mask, PairMask};

#[derive(Clone, Debug)]
pub struct ServerRoundState {
    config: ProtocolConfig,
    field: PrimeField,
    scheme: ShamirScheme,
    round: u64,
    received: BTreeMap<u32, MaskedGradient>,
    accumulator: Vec<FieldElement>,
    collected_shares: BTreeMap<SeedId, Vec<Share>>,
    recovered: BTreeMap<SeedId, Seed>,
    bases: HashMap<Vec<u32>, LagrangeBasis>,
}

impl ServerRoundState {
    pub fn new(config: &ProtocolConfig, round: u64) -> Result<Self> {
        config.validate()?;
        Ok(ServerRoundState {
            config: config.clone(),
            field: config.field(),
            scheme: config.shamir()?,
            round,
            received: BTreeMap::new(),
            accumulator: vec![FieldElement::ZERO; config.dim],
            collected_shares: BTreeMap::new(),
            recovered: BTreeMap::new(),
            bases: HashMap::new(),
        })
    }

    /// Adds a message into the accumulator.
    pub fn receive(&mut self, msg: MaskedGradient) -> Result<()> {
        let user = msg.user();
        if user >= self.config.users {
            return Err(Error::Wire(format!("user {user} is not in the cohort")));
        }
        if self.received.contains_key(&user) {
            return Err(Error::DuplicateUser(user));
        }
        let f = self.field;
        match (&msg, self.config.mode) {
            (MaskedGradient::Sparse(m), Mode::Sparse) => {
                if m.locations.len() != m.values.len() {
                    return Err(Error::Wire("location and value counts differ".into()));
                }
                if m.locations.windows(2).any(|w| w[0] >= w[1])
                    || m.locations.last().is_some_and(|&l| l as usize >= self.config.dim)
                {
                    return Err(Error::Wire("locations must be increasing and below d".into()));
                }
                for (&l, &v) in m.locations.iter().zip(&m.values) {
                    let a = &mut self.accumulator[l as usize];
                    *a = f.add(*a, v);
                }
            }
            (MaskedGradient::Dense(m), Mode::Baseline) => {
                if m.values.len() != self.config.dim {
                    return Err(Error::Wire("dense message length differs from d".into()));
                }
                for (a, &v) in self.accumulator.iter_mut().zip(&m.values) {
                    *a = f.add(*a, v);
                }
            }
            _ => return Err(Error::Wire("message kind does not match the protocol mode".into())),
        }
        self.received.insert(user, msg);
        Ok(())
    }

    /// Raw sum of everything received so far.
    pub fn accumulator(&self) -> &[FieldElement] {
        &self.accumulator
    }

    pub fn survivors(&self) -> Vec<u32> {
        self.received.keys().copied().collect()
    }

    pub fn dropped(&self) -> Vec<u32> {
        (0..self.config.users)
            .filter(|u| !self.received.contains_key(u))
            .collect()
    }

    pub fn check_quorum(&self) -> Result<()> {
        let survivors = self.received.len();
        let needed = self.config.threshold();
        if survivors < needed {
            return Err(Error::TooManyDropouts {
                survivors,
                cohort: self.config.users as usize,
                needed,
            });
        }
        Ok(())
    }

    /// Seeds the server must recover: private seeds of survivors and, for each
    /// dropped user, its pair seeds with every survivor.
    pub fn required_seeds(&self) -> Vec<SeedId> {
        let survivors = self.survivors();
        let mut ids: Vec<SeedId> = survivors
            .iter()
            .map(|&owner| SeedId {
                owner,
                secret: SecretId::Private,
            })
            .collect();
        let purposes: &[Purpose] = match self.config.mode {
            Mode::Sparse => &[Purpose::Additive, Purpose::Binary],
            Mode::Baseline => &[Purpose::Additive],
        };
        for owner in self.dropped() {
            for &peer in &survivors {
                for &purpose in purposes {
                    ids.push(SeedId {
                        owner,
                        secret: SecretId::Pair { peer, purpose },
                    });
                }
            }
        }
        ids
    }

    pub fn add_shares(&mut self, id: SeedId, shares: impl IntoIterator<Item = Share>) {
        self.collected_shares.entry(id).or_default().extend(shares);
    }

    pub fn collected_shares(&self, id: &SeedId) -> &[Share] {
        self.collected_shares.get(id).map_or(&[], |v| v.as_slice())
    }

    /// Reconstructs `id` from its collected shares and releases them.
    pub fn reconstruct(&mut self, id: SeedId) -> Result<Seed> {
        let shares = self.collected_shares.remove(&id).unwrap_or_default();
        let k = self.scheme.threshold();
        let seed = if shares.len() == k {
            let holders: Vec<u32> = shares.iter().map(|s| s.holder).collect();
            let scheme = self.scheme;
            let field = self.field;
            let basis = self
                .bases
                .entry(holders)
                .or_insert_with_key(|h| LagrangeBasis::at_zero(&field, h));
            let refs: Vec<&Share> = shares.iter().collect();
            match scheme.reconstruct_with(basis, &refs) {
                Ok(s) => s,
                // duplicate holders or other irregularities: take the checked path
                Err(_) => scheme.reconstruct(&shares)?,
            }
        } else {
            self.scheme.reconstruct(&shares)?
        };
        self.recovered.insert(id, seed);
        Ok(seed)
    }

    pub fn install_seed(&mut self, id: SeedId, seed: Seed) {
        self.recovered.insert(id, seed);
    }

    fn seed(&self, id: SeedId) -> Result<Seed> {
        self.recovered
            .get(&id)
            .copied()
            .ok_or_else(|| Error::InsufficientShares {
                have: self.collected_shares(&id).len(),
                need: self.scheme.threshold(),
            })
    }

    fn locations(&self, user: u32) -> Option<&[u32]> {
        match self.received.get(&user)? {
            MaskedGradient::Sparse(m) => Some(&m.locations),
            MaskedGradient::Dense(_) => None,
        }
    }

    /// Subtracts a survivor's private mask where it sent values.
    pub fn remove_private_mask(&mut self, user: u32, seed: &Seed) -> Result<()> {
        let f = self.field;
        match self.locations(user) {
            Some(locs) => {
                let locs = locs.to_vec();
                let r = additive_mask_at(&f, seed, DomainTag::AdditivePrivate, self.round, &locs)?;
                for (&l, v) in locs.iter().zip(r) {
                    let a = &mut self.accumulator[l as usize];
                    *a = f.sub(*a, v);
                }
            }
            None => {
                let r = expand_additive_mask(&f, seed, DomainTag::AdditivePrivate, self.round, self.config.dim)?;
                for (a, v) in self.accumulator.iter_mut().zip(r) {
                    *a = f.sub(*a, v);
                }
            }
        }
        Ok(())
    }

    /// Cancels what `survivor` added for its pair with `dropped`, at exactly
    /// the coordinates where their selection bit is set.
    pub fn remove_pair_mask(&mut self, dropped: u32, survivor: u32, mask: &PairMask) {
        let f = self.field;
        // the survivor added +r when its peer had the larger index
        let survivor_added = dropped > survivor;
        for (&l, &r) in mask.bits.ones().iter().zip(&mask.values) {
            let a = &mut self.accumulator[l as usize];
            *a = if survivor_added { f.sub(*a, r) } else { f.add(*a, r) };
        }
    }

    fn remove_dense_pair_mask(&mut self, dropped: u32, survivor: u32, seed: &Seed) -> Result<()> {
        let f = self.field;
        let r = expand_additive_mask(&f, seed, DomainTag::AdditivePairwise, self.round, self.config.dim)?;
        let survivor_added = dropped > survivor;
        for (a, v) in self.accumulator.iter_mut().zip(r) {
            *a = if survivor_added { f.sub(*a, v) } else { f.add(*a, v) };
        }
        Ok(())
    }

    /// Removes all masks using recovered seeds and returns the aggregate.
    pub fn recover_and_unmask(mut self) -> Result<Vec<FieldElement>> {
        self.check_quorum()?;
        let survivors = self.survivors();
        for &user in &survivors {
            let seed = self.seed(SeedId {
                owner: user,
                secret: SecretId::Private,
            })?;
            self.remove_private_mask(user, &seed)?;
        }
        for dropped in self.dropped() {
            for &survivor in &survivors {
                let pair = |purpose| SeedId {
                    owner: dropped,
                    secret: SecretId::Pair {
                        peer: survivor,
                        purpose,
                    },
                };
                let additive = self.seed(pair(Purpose::Additive))?;
                match self.config.mode {
                    Mode::Sparse => {
                        let binary = self.seed(pair(Purpose::Binary))?;
                        let mask = PairMask::expand(
                            &self.field,
                            &additive,
                            &binary,
                            self.round,
                            self.config.dim,
                            self.config.alpha,
                            self.config.users,
                        )?;
                        self.remove_pair_mask(dropped, survivor, &mask);
                    }
                    Mode::Baseline => self.remove_dense_pair_mask(dropped, survivor, &additive)?,
                }
            }
        }
        Ok(self.accumulator)
    }
}
