//! Menstrual-cycle outcome analysis with cyclic Fourier regression.
//!
//! Pipeline: [`ingest`] CSV tables, [`preprocess`] into a normalised
//! [`preprocess::CycleDataset`], fit with [`gam`], then derive bootstrap bands,
//! turning points, phase slopes, confounder estimates and strata. [`report`]
//! runs the whole chain; [`cli`] and [`service`] expose it.

pub mod bootstrap;
pub mod cli;
pub mod confound;
pub mod figures;
pub mod gam;
pub mod ingest;
pub mod ols;
pub mod phases;
pub mod preprocess;
pub mod report;
pub mod service;
pub mod stratify;

pub use ols::{Matrix, OlsError};

/// Serialises non-finite floats as the strings `"inf"`, `"-inf"` and `"nan"`.
pub(crate) mod serde_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
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
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("invalid float '{other}'"))),
            },
        }
    }
}
