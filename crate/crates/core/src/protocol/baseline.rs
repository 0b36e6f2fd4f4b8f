//! Dense pairwise masking of the full vector, kept for byte-count comparison.

use super::cohort::Cohort;
use super::message::{DenseMaskedGradient, MaskedGradient};
use super::round::UserRound;
use crate::crypto::{DomainTag, LaneReader, Purpose};
use crate::error::Result;
use crate::masking::expand_additive_mask;
use crate::quantizer::{quantize_gradient, QuantizationConfig};

/// x_i = ybar_i + r_i + sum_{j>i} r_ij - sum_{j<i} r_ij over every coordinate.
pub fn prepare_dense_user(
    cohort: &Cohort,
    round: u64,
    gradient: &[f64],
    quantization: QuantizationConfig,
    user: u32,
) -> Result<UserRound> {
    let field = cohort.field();
    let d = cohort.config().dim;
    let mut lane = LaneReader::new(&cohort.quantizer_seed(user), DomainTag::Quantizer, round);
    let quantized = quantize_gradient(gradient, &quantization, field, &mut lane)?;
    let mut values = expand_additive_mask(field, &cohort.private_seed(user), DomainTag::AdditivePrivate, round, d)?;
    for (v, &y) in values.iter_mut().zip(&quantized) {
        *v = field.add(*v, y);
    }
    for peer in (0..cohort.users()).filter(|&j| j != user) {
        let seed = cohort.pair_seed(user, peer, Purpose::Additive);
        let r = expand_additive_mask(field, &seed, DomainTag::AdditivePairwise, round, d)?;
        for (v, m) in values.iter_mut().zip(r) {
            *v = if peer > user {
                field.add(*v, m)
            } else {
                field.sub(*v, m)
            };
        }
    }
    Ok(UserRound {
        user,
        locations: (0..d as u32).collect(),
        quantized,
        message: MaskedGradient::Dense(DenseMaskedGradient { user, values }),
    })
}
