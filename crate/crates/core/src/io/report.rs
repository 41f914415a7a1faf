use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RtfnError};

/// Per-run metrics file. Exactly one of `test_accuracy` and `rand_index`
/// is present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub dataset: String,
    pub seed: u64,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub test_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rand_index: Option<f64>,
    pub wall_time_s: f64,
}

impl RunMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: RunMetrics = serde_json::from_str(text).map_err(|e| RtfnError::data(format!("metrics JSON: {e}")))?;
        if m.test_accuracy.is_some() == m.rand_index.is_some() {
            return Err(RtfnError::data(
                "metrics JSON needs exactly one of test_accuracy and rand_index",
            ));
        }
        Ok(m)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| RtfnError::io(path, e))
}
