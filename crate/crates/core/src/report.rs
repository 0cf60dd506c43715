//! Output formatting shared by the reports.

/// Decimal string with 12 significant digits.
pub fn fmt_prob(p: f64) -> String {
    if p == 0.0 || !p.is_finite() {
        return format!("{:.11}", if p.is_finite() { 0.0 } else { p });
    }
    let magnitude = p.abs().log10().floor() as i32;
    let decimals = (11 - magnitude).max(0) as usize;
    let s = format!("{p:.decimals$}");
    // Rounding may carry into a new leading digit (0.0999... -> 0.100...).
    let digits = s.chars().filter(|c| c.is_ascii_digit()).skip_while(|&c| c == '0').count();
    if digits > 12 && decimals > 0 {
        let d = decimals - 1;
        format!("{p:.d$}")
    } else {
        s
    }
}

/// Serde adapter writing `f64` probabilities as 12-significant-digit strings.
pub mod prob_str {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::fmt_prob(*p))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let s = String::deserialize(d)?;
        s.parse::<f64>().map_err(de::Error::custom)
    }

    /// Same, for optional values (`null` when absent).
    pub mod option {
        use serde::{de, Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(p: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match p {
                Some(v) => s.serialize_str(&super::super::fmt_prob(*v)),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<String>::deserialize(d)?
                .map(|s| s.parse::<f64>().map_err(de::Error::custom))
                .transpose()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig_digits(s: &str) -> usize {
        s.chars().filter(|c| c.is_ascii_digit()).skip_while(|&c| c == '0').count()
    }

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt_prob(0.25), "0.250000000000");
        assert_eq!(fmt_prob(1.0), "1.00000000000");
        assert_eq!(fmt_prob(0.0), "0.00000000000");
        assert_eq!(fmt_prob(0.0625), "0.0625000000000");
        assert_eq!(fmt_prob(1.0 / 3.0), "0.333333333333");
        for p in [0.1, 0.099999999999999, 0.123456789012345, 3e-7, 0.9999999999999] {
            assert_eq!(sig_digits(&fmt_prob(p)), 12, "{p} -> {}", fmt_prob(p));
        }
    }

    #[test]
    fn formatting_is_idempotent() {
        for p in [0.1234567890123456, 2.0f64.sqrt() / 10.0, 0.0701, 1e-5 / 3.0] {
            let once = fmt_prob(p);
            let twice = fmt_prob(once.parse().unwrap());
            assert_eq!(once, twice);
        }
    }
}
