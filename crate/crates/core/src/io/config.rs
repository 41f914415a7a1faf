//! Run configuration files: flat `key = value` lines covering model and
//! training settings. Unknown keys are rejected.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::kv;
use crate::error::{Result, RtfnError};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Applies a configuration file's settings. `seed` sets both configs.
pub fn apply_config_text(text: &str, model: &mut ModelConfig, train: &mut TrainConfig) -> Result<()> {
    for e in kv::parse(text)? {
        let known_model = model.set(&e.key, &e.value).map_err(|err| at_line(err, e.line))?;
        let known_train = train.set(&e.key, &e.value).map_err(|err| at_line(err, e.line))?;
        if !known_model && !known_train {
            return Err(RtfnError::Config(format!("line {}: unknown key {}", e.line, e.key)));
        }
    }
    model.validate()?;
    train.validate()
}

pub fn apply_config_file(path: &Path, model: &mut ModelConfig, train: &mut TrainConfig) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| RtfnError::io(path, e))?;
    apply_config_text(&text, model, train).map_err(|e| match e {
        RtfnError::Config(m) => RtfnError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn at_line(err: RtfnError, line: usize) -> RtfnError {
    match err {
        RtfnError::Config(m) => RtfnError::Config(format!("line {line}: {m}")),
        other => other,
    }
}

/// Hex SHA-256 of the serialized model and training configuration.
pub fn config_hash(model: &ModelConfig, train: &TrainConfig) -> String {
    let mut h = Sha256::new();
    h.update(model.to_text().as_bytes());
    h.update(b"--\n");
    h.update(train.to_text().as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
