//! `a+bi` text form of complex numbers, used by configs and the CLI.
//!
//! Accepted: `1.5`, `2i`, `-i`, `0.05+0.2i`, `1.5-0i`, `1e-3+2e-1i`.
//! Output uses `num-complex`'s `Display`, which round-trips through
//! [`parse_complex`].

use std::str::FromStr;

use num_complex::Complex64 as C64;

pub fn parse_complex(text: &str) -> Result<C64, String> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return Err("empty complex literal".into());
    }
    C64::from_str(&s).map_err(|_| format!("`{text}` is not a complex literal of the form a+bi"))
}

pub fn format_complex(z: C64) -> String {
    z.to_string()
}

/// Serde adapter for a single `C64` as a string.
pub mod serde_one {
    use super::*;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(z: &C64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_complex(*z))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<C64, D::Error> {
        let text = String::deserialize(d)?;
        parse_complex(&text).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for `Vec<C64>` as a list of strings.
pub mod serde_list {
    use super::*;
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(zs: &[C64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(zs.len()))?;
        for z in zs {
            seq.serialize_element(&format_complex(*z))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<C64>, D::Error> {
        let texts = Vec::<String>::deserialize(d)?;
        texts
            .iter()
            .map(|t| parse_complex(t).map_err(serde::de::Error::custom))
            .collect()
    }
}

/// Serde adapter for `Option<C64>`; `None` is `null`.
pub mod serde_opt {
    use super::*;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(z: &Option<C64>, s: S) -> Result<S::Ok, S::Error> {
        match z {
            Some(z) => s.serialize_some(&format_complex(*z)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<C64>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|t| parse_complex(&t).map_err(serde::de::Error::custom))
            .transpose()
    }
}
