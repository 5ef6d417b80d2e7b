//! Repeated Rock-Paper-Scissors and Prisoner's Dilemma experiments:
//! stage games, equilibrium solving, rule and model-backed agents,
//! session orchestration, JSONL logging and the analysis pipeline.

pub mod agents;
pub mod analysis;
pub mod equilibrium;
pub mod error;
pub mod game;
pub mod gateway;
pub mod matrix;
pub mod persistence;
pub mod protocol;

pub use error::{DomainError, Error, Result};

/// Decimal places used for probabilities and percentages in logs and CSV.
pub const PROB_DECIMALS: usize = 6;
/// Decimal places used for test statistics and derived real-valued metrics.
pub const STAT_DECIMALS: usize = 9;

/// Formats a point value: integers without a fractional part, anything else
/// with `PROB_DECIMALS` places.
pub fn fmt_points(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{:.*}", PROB_DECIMALS, x)
    }
}

pub fn fmt_prob(x: f64) -> String {
    format!("{:.*}", PROB_DECIMALS, x)
}

pub fn fmt_stat(x: f64) -> String {
    format!("{:.*}", STAT_DECIMALS, x)
}

/// Serde helpers writing integral point values as JSON integers.
pub mod points {
    use serde::ser::SerializeTuple;
    use serde::{Deserialize, Deserializer, Serializer};

    fn put<S: SerializeTuple>(t: &mut S, x: f64) -> Result<(), S::Error> {
        if x.fract() == 0.0 && x.abs() < 1e15 {
            t.serialize_element(&(x as i64))
        } else {
            t.serialize_element(&x)
        }
    }

    pub fn serialize_pair<S: Serializer>(v: &(f64, f64), s: S) -> Result<S::Ok, S::Error> {
        let mut t = s.serialize_tuple(2)?;
        put(&mut t, v.0)?;
        put(&mut t, v.1)?;
        t.end()
    }

    pub fn deserialize_pair<'de, D: Deserializer<'de>>(d: D) -> Result<(f64, f64), D::Error> {
        <(f64, f64)>::deserialize(d)
    }

    pub mod pair {
        pub use super::deserialize_pair as deserialize;
        pub use super::serialize_pair as serialize;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_formatting() {
        assert_eq!(fmt_points(65.0), "65");
        assert_eq!(fmt_points(-3.0), "-3");
        assert_eq!(fmt_points(2.5), "2.500000");
        assert_eq!(fmt_prob(0.25), "0.250000");
        assert_eq!(fmt_stat(60.0), "60.000000000");
    }
}
