//! Order-preserving encoding of reals into words.
//!
//! Structures compare keys as `u64`; an IEEE-754 double maps to a word whose
//! unsigned order matches the numeric order of the double. NaN is rejected.
//! `u64::MAX` is never produced and is used as an exclusive "+infinity" bound.

use crate::error::{Error, Result};

/// Encoded key: unsigned order equals numeric order.
pub type Key = u64;

/// Exclusive upper bound of the key domain.
pub const KEY_END: Key = u64::MAX;

pub fn encode(x: f64) -> Result<Key> {
    if x.is_nan() {
        return Err(Error::Precondition("NaN is not an ordered value".into()));
    }
    // -0.0 and 0.0 are the same real number.
    let x = if x == 0.0 { 0.0 } else { x };
    let bits = x.to_bits();
    Ok(if bits >> 63 == 1 { !bits } else { bits | (1 << 63) })
}

pub fn decode(k: Key) -> f64 {
    let bits = if k >> 63 == 1 { k & !(1 << 63) } else { !k };
    f64::from_bits(bits)
}

pub const NEG_INF: Key = 0x000F_FFFF_FFFF_FFFF;
pub const POS_INF: Key = 0xFFF0_0000_0000_0000;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn infinities() {
        assert_eq!(encode(f64::NEG_INFINITY).unwrap(), NEG_INF);
        assert_eq!(encode(f64::INFINITY).unwrap(), POS_INF);
        assert!(encode(f64::NAN).is_err());
        assert_eq!(encode(-0.0).unwrap(), encode(0.0).unwrap());
        const { assert!(POS_INF < KEY_END) };
    }

    proptest! {
        #[test]
        fn order_preserving(a in any::<f64>(), b in any::<f64>()) {
            prop_assume!(!a.is_nan() && !b.is_nan());
            let (ka, kb) = (encode(a).unwrap(), encode(b).unwrap());
            prop_assert_eq!(a.partial_cmp(&b).unwrap(), ka.cmp(&kb));
            if a != 0.0 {
                prop_assert_eq!(decode(ka).to_bits(), a.to_bits());
            }
        }
    }
}
