//! JSON has no infinity, so time constants that may be infinite
//! (no pure dephasing) are written as the string "inf".

use serde::{de, Deserialize, Deserializer, Serializer};

pub fn serialize<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
    if value.is_infinite() && *value > 0.0 {
        serializer.serialize_str("inf")
    } else {
        serializer.serialize_f64(*value)
    }
}

pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }
    match Repr::deserialize(deserializer)? {
        Repr::Num(v) => Ok(v),
        Repr::Text(s) if matches!(s.as_str(), "inf" | "infinity" | "Infinity") => Ok(f64::INFINITY),
        Repr::Text(s) => Err(de::Error::custom(format!("expected number or \"inf\", got {s:?}"))),
    }
}
