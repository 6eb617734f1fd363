//! Hierarchical variational autoencoders for multichannel physiological
//! time series, trained with a soft dynamic-time-warping loss, plus
//! reconstruction-error based anomaly detection.

pub mod anomaly;
pub mod dataio;
pub mod error;
pub mod evalmetrics;
pub mod gradcore;
pub mod models;
pub mod softdtw;
pub mod training;

pub use error::{Error, Result};

/// Serializes a value as canonical JSON: object keys sorted, compact,
/// shortest round-trip float formatting.
pub fn canonical_json<T: serde::Serialize + ?Sized>(value: &T) -> Result<String> {
    // serde_json's Map is a BTreeMap, so going through Value sorts keys.
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string(&v)?)
}
