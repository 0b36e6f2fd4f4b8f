//! Scaled stochastic rounding into F_q and back.

use crate::crypto::LaneReader;
use crate::error::{Error, Result};
use crate::field::{FieldElement, PrimeField, WordSource};

/// Default quantization level.
pub const DEFAULT_LEVEL: u64 = 1 << 10;

/// Uniform in [0, 1) from the top 53 bits of a word.
#[inline]
pub fn unit_uniform(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Stochastic rounding to the 1/c lattice, returned as the integer numerator.
#[inline]
pub fn stochastic_round(z: f64, level: u64, u: f64) -> i64 {
    let scaled = level as f64 * z;
    let floor = scaled.floor();
    let frac = scaled - floor;
    floor as i64 + i64::from(u < frac)
}

/// Per-user quantization parameters for one round.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantizationConfig {
    /// Quantization level c.
    pub level: u64,
    /// The user's aggregation weight.
    pub weight: f64,
    /// Expected participation p(1 - theta) of a coordinate.
    pub participation: f64,
    /// Bound on each raw gradient coordinate.
    pub clip: f64,
}

impl QuantizationConfig {
    pub fn scale(&self) -> f64 {
        self.weight / self.participation
    }

    pub fn validate(&self) -> Result<()> {
        if self.level == 0 {
            return Err(Error::config("c", "quantization level must be at least 1"));
        }
        if !(self.weight > 0.0 && self.weight <= 1.0) {
            return Err(Error::config("beta", "weights must lie in (0, 1]"));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::config("p(1-theta)", "participation must lie in (0, 1]"));
        }
        if !(self.clip.is_finite() && self.clip > 0.0) {
            return Err(Error::config("clip", "clip bound must be positive and finite"));
        }
        Ok(())
    }

    fn quantize_one(&self, field: &PrimeField, y: f64, word: u64) -> Result<FieldElement> {
        // NaN must fail too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(y.abs() <= self.clip) {
            return Err(Error::OverflowBudgetViolation {
                detail: format!("gradient coordinate {y} exceeds clip bound {}", self.clip),
            });
        }
        field.phi(stochastic_round(self.scale() * y, self.level, unit_uniform(word)))
    }
}

/// Quantizes every coordinate; coordinate `l` consumes word `l` of `lane`.
pub fn quantize_gradient(
    y: &[f64],
    cfg: &QuantizationConfig,
    field: &PrimeField,
    lane: &mut LaneReader,
) -> Result<Vec<FieldElement>> {
    y.iter()
        .enumerate()
        .map(|(l, &v)| cfg.quantize_one(field, v, lane.main_word(l as u64)))
        .collect()
}

/// Quantizes only at `positions`, matching [`quantize_gradient`] there.
pub fn quantize_at(
    y: &[f64],
    positions: &[u32],
    cfg: &QuantizationConfig,
    field: &PrimeField,
    lane: &mut LaneReader,
) -> Result<Vec<FieldElement>> {
    positions
        .iter()
        .map(|&l| cfg.quantize_one(field, y[l as usize], lane.main_word(l as u64)))
        .collect()
}

/// Quantizes one value from an arbitrary word source.
pub fn quantize_value<S: WordSource + ?Sized>(
    y: f64,
    cfg: &QuantizationConfig,
    field: &PrimeField,
    words: &mut S,
) -> Result<FieldElement> {
    cfg.quantize_one(field, y, words.next_word())
}

pub fn dequantize_aggregate(aggregate: &[FieldElement], level: u64, field: &PrimeField) -> Vec<f64> {
    let inv = 1.0 / level as f64;
    aggregate.iter().map(|&x| field.phi_inv(x) as f64 * inv).collect()
}

/// Worst-case aggregate magnitude: `n * (c * beta_max * clip / p_eff + 1)`.
pub fn overflow_budget(n: usize, level: u64, beta_max: f64, clip: f64, participation: f64) -> f64 {
    n as f64 * (level as f64 * beta_max * clip / participation + 1.0)
}

/// Fails unless the worst-case aggregate decodes unambiguously.
pub fn check_overflow_budget(
    n: usize,
    level: u64,
    beta_max: f64,
    clip: f64,
    participation: f64,
    field: &PrimeField,
) -> Result<()> {
    let budget = overflow_budget(n, level, beta_max, clip, participation);
    let limit = field.modulus() as f64 / 2.0;
    if budget < limit {
        Ok(())
    } else {
        Err(Error::OverflowBudgetViolation {
            detail: format!(
                "worst-case aggregate {budget:.1} is not below q/2 = {limit:.1} (margin {:.1})",
                limit - budget
            ),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{DomainTag, Seed};
    use crate::field::DEFAULT_MODULUS;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field() -> PrimeField {
        PrimeField::with_modulus(DEFAULT_MODULUS).unwrap()
    }

    fn unit(weight: f64, participation: f64, level: u64) -> QuantizationConfig {
        QuantizationConfig {
            level,
            weight,
            participation,
            clip: 100.0,
        }
    }

    #[test]
    fn rounding_examples() {
        for u in [0.0, 0.5, 0.999] {
            assert_eq!(stochastic_round(1.25, 4, u), 5);
        }
        // 0.3 with c = 1 rounds up iff u < 0.3
        assert_eq!(stochastic_round(0.3, 1, 0.29), 1);
        assert_eq!(stochastic_round(0.3, 1, 0.31), 0);
        // -0.4 with c = 2: floor(-0.8) = -1, frac 0.2
        assert_eq!(stochastic_round(-0.4, 2, 0.1), 0);
        assert_eq!(stochastic_round(-0.4, 2, 0.3), -1);
    }

    #[test]
    fn rounding_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = 100_000;
        let mean = (0..m)
            .map(|_| stochastic_round(0.3, 1, rng.random()) as f64)
            .sum::<f64>()
            / m as f64;
        assert!((mean - 0.3).abs() < 0.005, "{mean}");
        let ups = (0..m).filter(|_| stochastic_round(-0.4, 2, rng.random()) == 0).count();
        let f = ups as f64 / m as f64;
        assert!((f - 0.2).abs() < 4.0 * (0.2f64 * 0.8 / m as f64).sqrt(), "{f}");
    }

    #[test]
    fn unbiased_and_variance_bounded_on_a_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = 100_000;
        for level in [1u64, 3, 16] {
            for z in [-2.7, -1.0, -0.4, -0.01, 0.0, 0.3, 0.5, 1.26, 3.9] {
                let draws: Vec<f64> = (0..m)
                    .map(|_| stochastic_round(z, level, rng.random()) as f64 / level as f64)
                    .collect();
                let mean = draws.iter().sum::<f64>() / m as f64;
                let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
                let c = level as f64;
                assert!(
                    (mean - z).abs() <= 4.0 / c / (m as f64).sqrt(),
                    "z={z} c={level} mean={mean}"
                );
                assert!(var <= 1.0 / (4.0 * c * c) * 1.02 + 1e-12, "z={z} c={level} var={var}");
            }
        }
    }

    #[test]
    fn unit_uniform_range() {
        assert_eq!(unit_uniform(0), 0.0);
        assert!(unit_uniform(u64::MAX) < 1.0);
        assert_eq!(unit_uniform(1 << 63), 0.5);
    }

    #[test]
    fn quantize_examples() {
        let f = field();
        let mut lane = LaneReader::new(&Seed::from_u64(1), DomainTag::Quantizer, 0);
        let zeros = quantize_gradient(&[0.0; 5], &unit(1.0, 1.0, 10), &f, &mut lane).unwrap();
        assert!(zeros.iter().all(|x| x.value() == 0));
        let mut lane = LaneReader::new(&Seed::from_u64(1), DomainTag::Quantizer, 0);
        let v = quantize_gradient(&[2.0], &unit(1.0, 1.0, 10), &f, &mut lane).unwrap();
        assert_eq!(v[0].value(), 20);
        // 0.5 / 0.5 scaling, y = -1, c = 4: numerator -4
        let mut lane = LaneReader::new(&Seed::from_u64(1), DomainTag::Quantizer, 0);
        let v = quantize_gradient(&[-1.0], &unit(0.5, 0.5, 4), &f, &mut lane).unwrap();
        assert_eq!(v[0].value(), DEFAULT_MODULUS - 4);
        assert_eq!(dequantize_aggregate(&v, 4, &f), vec![-1.0]);
    }

    #[test]
    fn clip_violation_is_reported() {
        let f = field();
        let mut lane = LaneReader::new(&Seed::from_u64(1), DomainTag::Quantizer, 0);
        let cfg = QuantizationConfig {
            clip: 1.0,
            ..unit(1.0, 1.0, 4)
        };
        assert!(matches!(
            quantize_gradient(&[0.5, -1.5], &cfg, &f, &mut lane),
            Err(Error::OverflowBudgetViolation { .. })
        ));
        assert!(quantize_gradient(&[f64::NAN], &cfg, &f, &mut lane).is_err());
    }

    #[test]
    fn sparse_quantization_matches_dense() {
        let f = field();
        let seed = Seed::from_u64(9);
        let y: Vec<f64> = (0..50).map(|k| (k as f64 * 0.37).sin()).collect();
        let cfg = unit(0.3, 0.4, 1024);
        let dense = quantize_gradient(&y, &cfg, &f, &mut LaneReader::new(&seed, DomainTag::Quantizer, 4)).unwrap();
        let pos = [0u32, 3, 4, 17, 49];
        let sparse = quantize_at(&y, &pos, &cfg, &f, &mut LaneReader::new(&seed, DomainTag::Quantizer, 4)).unwrap();
        for (k, &p) in pos.iter().enumerate() {
            assert_eq!(sparse[k], dense[p as usize]);
        }
    }

    #[test]
    fn budget_example_and_tiny_field() {
        let f = field();
        assert!(check_overflow_budget(10, 1024, 0.1, 1.0, 0.1, &f).is_ok());
        assert!((overflow_budget(10, 1024, 0.1, 1.0, 0.1) - 10_250.0).abs() < 1e-6);
        let tiny = PrimeField::with_modulus(257).unwrap();
        assert!(check_overflow_budget(10, 1024, 0.1, 1.0, 0.1, &tiny).is_err());
    }

    #[test]
    fn budget_flips_at_the_analytic_threshold() {
        let f = field();
        let (c, beta, clip, pe) = (1024u64, 0.25, 2.0, 0.125);
        let per_user = c as f64 * beta * clip / pe + 1.0;
        let closed = (f.modulus() as f64 / 2.0 / per_user).ceil() as usize;
        let (mut lo, mut hi) = (1usize, 1usize << 40);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if check_overflow_budget(mid, c, beta, clip, pe, &f).is_err() {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        assert_eq!(lo, closed);
    }

    proptest! {
        #[test]
        fn lattice_points_round_trip(k in -1_000_000i64..1_000_000, shift in 0u32..12) {
            let f = field();
            let level = 1u64 << shift;
            let y = k as f64 / level as f64;
            let cfg = QuantizationConfig { level, weight: 1.0, participation: 1.0, clip: 1e9 };
            let mut lane = LaneReader::new(&Seed::from_u64(k as u64), DomainTag::Quantizer, 0);
            let v = quantize_gradient(&[y], &cfg, &f, &mut lane).unwrap();
            prop_assert_eq!(f.phi_inv(v[0]), k);
            prop_assert_eq!(dequantize_aggregate(&v, level, &f)[0], y);
        }
    }
}
