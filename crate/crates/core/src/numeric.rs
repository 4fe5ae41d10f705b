//! Small numeric helpers shared by the combiners and the aggregator.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

/// Arithmetic mean of `values`, computed exactly and rounded once to the
/// nearest `f64`.
///
/// The result does not depend on the order of `values`, is monotone in every
/// input, and equals `x` when every value is `x`.
pub fn exact_mean(values: &[f64]) -> Option<f64> {
    let (&first, rest) = values.split_first()?;
    if rest.iter().all(|&v| v == first) {
        return Some(first);
    }
    if values.iter().any(|v| !v.is_finite()) {
        // Non-finite inputs have no exact mean; fall back to IEEE semantics.
        return Some(values.iter().sum::<f64>() / values.len() as f64);
    }

    let parts: Vec<(BigInt, i32)> = values.iter().map(|&v| decompose(v)).collect();
    let min_exp = parts.iter().map(|&(_, e)| e).min().unwrap_or(0);
    let mut numer = BigInt::zero();
    for (mantissa, exp) in parts {
        numer += mantissa << ((exp - min_exp) as usize);
    }
    let mut denom = BigInt::from(values.len());
    if min_exp < 0 {
        denom <<= (-min_exp) as usize;
    } else {
        numer <<= min_exp as usize;
    }
    BigRational::new_raw(numer, denom).to_f64()
}

/// Splits a finite `f64` into `mantissa * 2^exp` with an integer mantissa.
fn decompose(v: f64) -> (BigInt, i32) {
    let bits = v.to_bits();
    let negative = bits >> 63 != 0;
    let biased = ((bits >> 52) & 0x7ff) as i32;
    let fraction = bits & ((1u64 << 52) - 1);
    let (mantissa, exp) = if biased == 0 {
        (fraction, -1074)
    } else {
        (fraction | (1u64 << 52), biased - 1075)
    };
    let mantissa = BigInt::from(mantissa);
    (if negative { -mantissa } else { mantissa }, exp)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] >= v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Median of `values`: the middle element, or the exact mean of the two
/// middle elements for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        Some(sorted[mid])
    } else {
        exact_mean(&sorted[mid - 1..=mid])
    }
}
