//! Model and hardware profiles, and the coarse-grained access trace derived from them.
//!
//! A [`ModelProfile`] is the stand-in for what a pre-runtime profiler would
//! record: parameters in declaration order, operators in forward execution
//! order (optionally tagged with the activation-checkpointing function that
//! encloses them), and the activation/buffer byte counts. A
//! [`HardwareProfile`] holds the bandwidth and optimizer-velocity tables
//! indexed by process count.
//!
//! Both are exchanged as JSON documents carrying `format_version: 1`.

mod coarsen;
mod hardware;
mod model;
mod synth;

pub use coarsen::{ac_buffer_size, coarsen_graph, AccessTrace};
pub use hardware::{load_hardware_profile, HardwareProfile, RateEntry};
pub use model::{load_model_profile, ModelProfile, OperatorNode, ParameterSpec, PrecisionSpec};
pub use synth::{synthesize_transformer_profile, TransformerShape};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Version written into, and required from, every JSON document this crate handles.
pub const FORMAT_VERSION: u64 = 1;

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    format_version: u64,
    #[serde(flatten)]
    body: &'a T,
}

pub(crate) fn to_versioned_json<T: Serialize>(body: &T) -> Result<String> {
    let doc = Versioned {
        format_version: FORMAT_VERSION,
        body,
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    Ok(text)
}

/// Parses `text`, checks `format_version` and decodes the rest into `T`.
pub(crate) fn from_versioned_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let mut value: serde_json::Value = serde_json::from_str(text)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::Parse("top-level value must be an object".into()))?;
    let version = obj
        .remove("format_version")
        .ok_or_else(|| Error::Parse("missing field `format_version`".into()))?;
    let found = version.as_u64().ok_or_else(|| {
        Error::Parse("field `format_version` must be a non-negative integer".into())
    })?;
    if found != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found,
            expected: FORMAT_VERSION,
        });
    }
    Ok(serde_json::from_value(value)?)
}
