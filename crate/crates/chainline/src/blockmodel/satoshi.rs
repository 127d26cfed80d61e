//! Exact satoshi arithmetic.
//!
//! Amounts live on the chain as integer satoshis but come out of RPC as
//! decimal bitcoin numbers. Conversion is pure string/integer arithmetic;
//! no floating point is ever involved in the amount path.

use std::fmt;

use crate::error::{Error, Result};

/// Number of satoshis in one bitcoin.
pub const SAT_PER_BTC: u64 = 100_000_000;

/// An exact, non-negative amount in satoshi (1 satoshi = 10⁻⁸ bitcoin).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Satoshi(pub u64);

impl Satoshi {
    /// Renders the amount as a decimal bitcoin string with exactly eight
    /// fractional digits, the inverse of [`btc_to_satoshi`].
    pub fn to_btc_string(self) -> String {
        format!("{}.{:08}", self.0 / SAT_PER_BTC, self.0 % SAT_PER_BTC)
    }
}

impl fmt::Display for Satoshi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Converts a decimal bitcoin amount (as text) to exact satoshis.
///
/// Accepts a non-negative decimal with at most eight fractional digits.
/// Exponent notation is rejected: amounts from RPC are always plain
/// fixed-point decimals and anything else signals corrupted data.
pub fn btc_to_satoshi(text: &str) -> Result<Satoshi> {
    let bad = |why: &str| Error::Parse(format!("bad bitcoin amount {text:?}: {why}"));

    if text.is_empty() {
        return Err(bad("empty"));
    }
    if text.starts_with('-') || text.starts_with('+') {
        return Err(bad("sign not allowed"));
    }

    let (int_part, frac_part) = match text.split_once('.') {
        Some((i, f)) => (i, f),
        None => (text, ""),
    };
    if int_part.is_empty() {
        return Err(bad("missing integer part"));
    }
    if text.contains('.') && frac_part.is_empty() {
        return Err(bad("trailing decimal point"));
    }
    if frac_part.len() > 8 {
        return Err(bad("more than 8 fractional digits"));
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit())
        || !frac_part.bytes().all(|b| b.is_ascii_digit())
    {
        return Err(bad("not a plain decimal number"));
    }

    let whole: u64 = int_part
        .parse()
        .map_err(|_| bad("integer part out of range"))?;
    let mut frac: u64 = if frac_part.is_empty() {
        0
    } else {
        frac_part.parse().map_err(|_| bad("bad fraction"))?
    };
    // Scale the fraction up to 8 digits: "5" after the point means 0.5 BTC.
    for _ in frac_part.len()..8 {
        frac *= 10;
    }

    whole
        .checked_mul(SAT_PER_BTC)
        .and_then(|w| w.checked_add(frac))
        .map(Satoshi)
        .ok_or_else(|| bad("amount overflows"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_cases() {
        assert_eq!(btc_to_satoshi("0.00000001").unwrap(), Satoshi(1));
        assert_eq!(btc_to_satoshi("1.5").unwrap(), Satoshi(150_000_000));
        assert_eq!(btc_to_satoshi("0").unwrap(), Satoshi(0));
        assert_eq!(btc_to_satoshi("50.00000000").unwrap(), Satoshi(5_000_000_000));
        assert_eq!(
            btc_to_satoshi("21000000.00000000").unwrap(),
            Satoshi(2_100_000_000_000_000)
        );
    }

    #[test]
    fn rejects_malformed_amounts() {
        for bad in [
            "", "-1", "+1", "1.123456789", "1e-8", "1.2.3", "abc", ".5", "1.", "0x10",
            "99999999999999999999999999",
        ] {
            assert!(btc_to_satoshi(bad).is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn formatter_matches_rpc_style() {
        assert_eq!(Satoshi(1).to_btc_string(), "0.00000001");
        assert_eq!(Satoshi(5_000_000_000).to_btc_string(), "50.00000000");
        assert_eq!(Satoshi(0).to_btc_string(), "0.00000000");
    }

    proptest! {
        #[test]
        fn round_trip_identity(sat in 0u64..=1_000_000_000_000_000) {
            let text = Satoshi(sat).to_btc_string();
            prop_assert_eq!(btc_to_satoshi(&text).unwrap(), Satoshi(sat));
        }
    }
}
