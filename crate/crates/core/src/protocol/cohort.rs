//! One-time setup: seeds for every user and pair, Shamir shares of those
//! seeds, and the adversarial labels used by the analysis.
//!
//! Shares are evaluated lazily. Each (owner, secret) pair has a fixed
//! polynomial drawn from the owner's sharing lane, so asking for a share at
//! any time returns the value an eager distribution at setup would have sent.

use rand::{seq::index, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{KeyAgreement, ProtocolConfig};
use crate::crypto::{
    agree_pairwise_seed, Dealer, DhGroup, DomainTag, EvaluationPoints, KeyPair, PrgStream, Purpose, Seed, ShamirScheme,
    Share,
};
use crate::error::Result;
use crate::field::PrimeField;

/// A seed a user secret-shares with the cohort.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SecretId {
    Private,
    Pair { peer: u32, purpose: Purpose },
}

impl SecretId {
    /// Sharing-lane index of this secret.
    fn lane(self) -> u64 {
        match self {
            SecretId::Private => 0,
            SecretId::Pair {
                peer,
                purpose: Purpose::Additive,
            } => 1 + 2 * peer as u64,
            SecretId::Pair {
                peer,
                purpose: Purpose::Binary,
            } => 2 + 2 * peer as u64,
        }
    }
}

/// A specific user's secret.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SeedId {
    pub owner: u32,
    pub secret: SecretId,
}

/// Every share a user distributed, grouped by secret.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareBundle {
    pub owner: u32,
    pub secrets: Vec<(SecretId, Vec<Share>)>,
}

impl ShareBundle {
    /// The shares held by user `holder` (evaluation point `holder + 1`).
    pub fn for_holder(&self, holder: u32) -> Vec<(SecretId, &Share)> {
        self.secrets
            .iter()
            .filter_map(|(id, shares)| shares.iter().find(|s| s.holder == holder + 1).map(|s| (*id, s)))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Cohort {
    config: ProtocolConfig,
    field: PrimeField,
    scheme: ShamirScheme,
    dealer: Dealer,
    /// [additive, binary] seeds, upper-triangular by (i < j).
    pairs: Vec<[Seed; 2]>,
    adversarial: Vec<bool>,
}

impl Cohort {
    pub fn setup(config: &ProtocolConfig, master: &Seed) -> Result<Self> {
        config.validate()?;
        let n = config.users;
        let dealer = Dealer::new(master);
        let mut pairs = Vec::with_capacity((n as usize * (n as usize - 1)) / 2);
        match config.key_agreement {
            KeyAgreement::Dealer => {
                for i in 0..n {
                    for j in i + 1..n {
                        pairs.push([
                            dealer.pair_seed(i, j, Purpose::Additive),
                            dealer.pair_seed(i, j, Purpose::Binary),
                        ]);
                    }
                }
            }
            KeyAgreement::DiffieHellman => {
                let group = DhGroup::default();
                let keys: Vec<KeyPair> = (0..n)
                    .map(|i| KeyPair::from_seed(&group, &dealer.key_seed(i)))
                    .collect();
                for i in 0..n {
                    for j in i + 1..n {
                        let mine = &keys[i as usize];
                        let theirs = keys[j as usize].public();
                        pairs.push([
                            agree_pairwise_seed(&group, mine, theirs, (i, j), Purpose::Additive)?,
                            agree_pairwise_seed(&group, mine, theirs, (i, j), Purpose::Binary)?,
                        ]);
                    }
                }
            }
        }
        let mut adversarial = vec![false; n as usize];
        let mut rng = ChaCha8Rng::from_seed(master.derive("adversaries", &[]).0);
        for k in index::sample(&mut rng, n as usize, config.adversaries()) {
            adversarial[k] = true;
        }
        Ok(Cohort {
            config: config.clone(),
            field: config.field(),
            scheme: config.shamir()?,
            dealer,
            pairs,
            adversarial,
        })
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn field(&self) -> &PrimeField {
        &self.field
    }

    pub fn scheme(&self) -> &ShamirScheme {
        &self.scheme
    }

    pub fn users(&self) -> u32 {
        self.config.users
    }

    fn pair_index(&self, i: u32, j: u32) -> usize {
        let (a, b) = (i.min(j) as usize, i.max(j) as usize);
        let n = self.config.users as usize;
        assert!(a != b && b < n, "invalid pair ({i}, {j})");
        a * (2 * n - a - 1) / 2 + (b - a - 1)
    }

    pub fn pair_seed(&self, i: u32, j: u32, purpose: Purpose) -> Seed {
        self.pairs[self.pair_index(i, j)][purpose as usize]
    }

    pub fn private_seed(&self, user: u32) -> Seed {
        self.dealer.private_seed(user)
    }

    pub fn quantizer_seed(&self, user: u32) -> Seed {
        self.dealer.quantizer_seed(user)
    }

    pub fn is_adversarial(&self, user: u32) -> bool {
        self.adversarial[user as usize]
    }

    pub fn adversarial(&self) -> &[bool] {
        &self.adversarial
    }

    pub fn secret(&self, id: SeedId) -> Seed {
        match id.secret {
            SecretId::Private => self.private_seed(id.owner),
            SecretId::Pair { peer, purpose } => self.pair_seed(id.owner, peer, purpose),
        }
    }

    /// Shares of `id` held by the given users.
    pub fn shares(&self, id: SeedId, holders: &[u32]) -> Result<Vec<Share>> {
        self.shares_at(id, &self.evaluation_points(holders))
    }

    /// Evaluation points for a holder set; user `u` holds the share at `u + 1`.
    pub fn evaluation_points(&self, holders: &[u32]) -> EvaluationPoints {
        let xs: Vec<u32> = holders.iter().map(|&h| h + 1).collect();
        EvaluationPoints::new(self.field, &xs, self.scheme.degree())
    }

    pub fn shares_at(&self, id: SeedId, points: &EvaluationPoints) -> Result<Vec<Share>> {
        let mut randomness = PrgStream::new(
            &self.dealer.sharing_seed(id.owner),
            DomainTag::Sharing,
            id.secret.lane(),
        );
        let poly = self.scheme.polynomials(&self.secret(id), &mut randomness)?;
        Ok(poly.evaluate_at(points))
    }

    /// Eager view of everything `owner` shares at setup.
    pub fn share_bundle(&self, owner: u32) -> Result<ShareBundle> {
        let everyone: Vec<u32> = (0..self.users()).collect();
        let mut ids = vec![SecretId::Private];
        for peer in (0..self.users()).filter(|&p| p != owner) {
            ids.push(SecretId::Pair {
                peer,
                purpose: Purpose::Additive,
            });
            ids.push(SecretId::Pair {
                peer,
                purpose: Purpose::Binary,
            });
        }
        let secrets = ids
            .into_iter()
            .map(|secret| Ok((secret, self.shares(SeedId { owner, secret }, &everyone)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ShareBundle { owner, secrets })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_indexing_covers_the_triangle() {
        let cfg = ProtocolConfig {
            users: 7,
            ..Default::default()
        };
        let c = Cohort::setup(&cfg, &Seed::from_u64(1)).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..7 {
            for j in i + 1..7 {
                assert!(seen.insert(c.pair_index(i, j)));
                assert_eq!(c.pair_index(i, j), c.pair_index(j, i));
            }
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), (0..21).collect::<Vec<_>>());
    }

    #[test]
    fn dh_mode_is_deterministic_and_distinct_from_dealer_mode() {
        let cfg = ProtocolConfig {
            users: 4,
            key_agreement: KeyAgreement::DiffieHellman,
            ..Default::default()
        };
        let a = Cohort::setup(&cfg, &Seed::from_u64(2)).unwrap();
        let b = Cohort::setup(&cfg, &Seed::from_u64(2)).unwrap();
        let dealer = Cohort::setup(
            &ProtocolConfig {
                key_agreement: KeyAgreement::Dealer,
                ..cfg
            },
            &Seed::from_u64(2),
        )
        .unwrap();
        assert_eq!(a.pair_seed(1, 3, Purpose::Binary), b.pair_seed(3, 1, Purpose::Binary));
        assert_ne!(
            a.pair_seed(1, 3, Purpose::Binary),
            dealer.pair_seed(1, 3, Purpose::Binary)
        );
    }

    #[test]
    fn adversarial_labels_have_the_configured_size() {
        let cfg = ProtocolConfig {
            users: 50,
            gamma: 0.2,
            ..Default::default()
        };
        let c = Cohort::setup(&cfg, &Seed::from_u64(3)).unwrap();
        assert_eq!(c.adversarial().iter().filter(|&&a| a).count(), 10);
    }

    #[test]
    fn lazy_shares_match_the_eager_bundle() {
        let cfg = ProtocolConfig {
            users: 5,
            ..Default::default()
        };
        let c = Cohort::setup(&cfg, &Seed::from_u64(4)).unwrap();
        let bundle = c.share_bundle(2).unwrap();
        assert_eq!(bundle.secrets.len(), 9);
        let id = SeedId {
            owner: 2,
            secret: SecretId::Pair {
                peer: 4,
                purpose: Purpose::Binary,
            },
        };
        let lazy = c.shares(id, &[0, 3]).unwrap();
        let held = bundle.for_holder(3);
        let (_, from_bundle) = held.iter().find(|(s, _)| *s == id.secret).unwrap();
        assert_eq!(&lazy[1], *from_bundle);
        let all = &bundle.secrets.iter().find(|(s, _)| *s == id.secret).unwrap().1;
        assert_eq!(c.scheme().reconstruct(all).unwrap(), c.pair_seed(2, 4, Purpose::Binary));
        assert_eq!(c.scheme().reconstruct(&lazy[..]).ok(), None);
    }
}
