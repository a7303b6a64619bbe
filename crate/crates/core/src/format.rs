//! Float formatting shared by every CSV and ledger writer.

use crate::error::{Error, Result};

/// 17 significant digits, enough for an exact `f64` round trip.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::Format(format!("bad number {s:?}: {e}")))
}

/// Serde adapter writing `±inf` as the strings `"inf"`/`"-inf"`, since JSON
/// has no infinite numbers.
pub mod json_level {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_infinite() {
            s.serialize_str(if *x > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*x)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => super::parse_f64(&t).map_err(serde::de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[derive(serde::Serialize, serde::Deserialize, PartialEq, Debug)]
    struct Level {
        #[serde(with = "json_level")]
        a: f64,
    }

    #[test]
    fn infinite_levels_survive_json() {
        for a in [2.5, f64::INFINITY] {
            let s = serde_json::to_string(&Level { a }).unwrap();
            assert_eq!(serde_json::from_str::<Level>(&s).unwrap(), Level { a });
        }
        assert_eq!(serde_json::to_string(&Level { a: f64::INFINITY }).unwrap(), r#"{"a":"inf"}"#);
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(x in proptest::num::f64::ANY) {
            let back = parse_f64(&fmt_f64(x)).unwrap();
            if x.is_nan() {
                prop_assert!(back.is_nan());
            } else {
                prop_assert_eq!(back.to_bits(), x.to_bits());
            }
        }
    }
}
