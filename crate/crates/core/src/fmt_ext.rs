//! Text forms for extended reals. JSON has no infinities, so `-inf` is written
//! as the string literal `"-inf"` there, and as the bare token `-inf` in CSV.

use serde::{Serialize, Serializer};

/// Serializes finite values as numbers and infinities as `"-inf"` / `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtF64(pub f64);

impl Serialize for ExtF64 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            serializer.serialize_f64(self.0)
        } else {
            serializer.serialize_str(&format_ext(self.0))
        }
    }
}

/// For `#[serde(serialize_with = ...)]` on plain `f64` fields.
pub fn ser_ext<S: Serializer>(x: &f64, serializer: S) -> Result<S::Ok, S::Error> {
    ExtF64(*x).serialize(serializer)
}

pub fn ser_ext_vec<S: Serializer>(xs: &[f64], serializer: S) -> Result<S::Ok, S::Error> {
    serializer.collect_seq(xs.iter().map(|x| ExtF64(*x)))
}

/// Shortest round-trip decimal, `-inf`, `inf` or `nan`.
pub fn format_ext(x: f64) -> String {
    if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else if x == f64::INFINITY {
        "inf".to_string()
    } else if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x}")
    }
}
