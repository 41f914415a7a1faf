use std::fmt::Write as _;

use crate::error::{Result, RtfnError};
use crate::io::kv::{self, bad_value, join};
use crate::layers::HeadSpec;

pub const DEFAULT_SEED: u64 = 0;

/// Which head sits on top of the fused features.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    /// Dropout and a dense layer producing class logits.
    Classify,
    /// Four-layer dense decoder reconstructing the input series.
    Reconstruct,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Classify => "classify",
            Task::Reconstruct => "reconstruct",
        }
    }

    fn parse(value: &str) -> Result<Self> {
        match value {
            "classify" => Ok(Task::Classify),
            "reconstruct" => Ok(Task::Reconstruct),
            _ => Err(bad_value("task", value, "classify or reconstruct")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub task: Task,
    pub input_length: usize,
    /// Classes for the classifier, or clusters for the autoencoder pipeline.
    pub num_classes: usize,
    /// Raw dataset labels in class-id order; may be empty.
    pub class_labels: Vec<String>,
    pub conv_heads: Vec<HeadSpec>,
    pub residual_channels: Vec<usize>,
    pub lstm_hidden: usize,
    pub use_attentional_lstm: bool,
    pub dropout_rate: f64,
    pub decoder_widths: Vec<usize>,
    pub scaled_attention: bool,
    /// One LSTM feeds query, key and value instead of three.
    pub shared_qkv: bool,
    pub seed: u64,
}

/// Keys fixed by the dataset rather than by a run configuration file.
const DATA_KEYS: [&str; 4] = ["task", "input_length", "num_classes", "class_labels"];

impl ModelConfig {
    pub fn new(task: Task, input_length: usize, num_classes: usize) -> Self {
        ModelConfig {
            task,
            input_length,
            num_classes,
            class_labels: Vec::new(),
            conv_heads: vec![
                HeadSpec { kernel: 3, filters: 32 },
                HeadSpec { kernel: 5, filters: 32 },
                HeadSpec { kernel: 8, filters: 32 },
            ],
            residual_channels: vec![128, 256, 128],
            lstm_hidden: 64,
            use_attentional_lstm: true,
            dropout_rate: 0.3,
            decoder_widths: default_decoder_widths(input_length),
            scaled_attention: false,
            shared_qkv: false,
            seed: DEFAULT_SEED,
        }
    }

    /// Width of the fused feature vector.
    pub fn feature_dim(&self) -> usize {
        let conv = self.residual_channels.last().copied().unwrap_or(0);
        if self.use_attentional_lstm {
            conv + self.lstm_hidden
        } else {
            conv
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(RtfnError::Config(msg));
        if self.input_length == 0 {
            return fail("input_length must be positive".into());
        }
        if self.num_classes == 0 {
            return fail("num_classes must be positive".into());
        }
        if !self.class_labels.is_empty() && self.class_labels.len() != self.num_classes {
            return fail(format!(
                "{} class labels for {} classes",
                self.class_labels.len(),
                self.num_classes
            ));
        }
        if let Some(l) = self
            .class_labels
            .iter()
            .find(|l| l.is_empty() || l.contains([',', '\n', '\r']))
        {
            return fail(format!("class label {l:?} cannot be stored"));
        }
        if self.conv_heads.is_empty() || self.conv_heads.iter().any(|h| h.kernel == 0 || h.filters == 0) {
            return fail("conv_heads needs at least one head with positive kernel and filters".into());
        }
        if self.residual_channels.is_empty() || self.residual_channels.contains(&0) {
            return fail("residual_channels needs at least one positive width".into());
        }
        if self.lstm_hidden == 0 {
            return fail("lstm_hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if self.decoder_widths.len() != 4 || self.decoder_widths.contains(&0) {
            return fail(format!(
                "decoder_widths needs four positive entries, got {:?}",
                self.decoder_widths
            ));
        }
        if self.decoder_widths[3] != self.input_length {
            return fail(format!(
                "last decoder width {} must equal input_length {}",
                self.decoder_widths[3], self.input_length
            ));
        }
        Ok(())
    }

    /// Applies one key from a run configuration file. Returns `false` when
    /// the key does not belong to the model.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        if DATA_KEYS.contains(&key) {
            return Err(RtfnError::Config(format!("{key} is taken from the dataset")));
        }
        self.set_any(key, value)
    }

    fn set_any(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "task" => self.task = Task::parse(value)?,
            "input_length" => self.input_length = kv::parse_usize(key, value)?,
            "num_classes" => self.num_classes = kv::parse_usize(key, value)?,
            "class_labels" => {
                self.class_labels = if value.is_empty() {
                    Vec::new()
                } else {
                    value.split(',').map(|s| s.trim().to_string()).collect()
                }
            }
            "conv_heads" => self.conv_heads = parse_heads(value)?,
            "residual_channels" => self.residual_channels = kv::parse_usize_list(key, value)?,
            "lstm_hidden" => self.lstm_hidden = kv::parse_usize(key, value)?,
            "use_attentional_lstm" => self.use_attentional_lstm = kv::parse_bool(key, value)?,
            "dropout_rate" => self.dropout_rate = kv::parse_f64(key, value)?,
            "decoder_widths" => self.decoder_widths = kv::parse_usize_list(key, value)?,
            "scaled_attention" => self.scaled_attention = kv::parse_bool(key, value)?,
            "shared_qkv" => self.shared_qkv = kv::parse_bool(key, value)?,
            "seed" => self.seed = kv::parse_u64(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Serialized form stored in checkpoints and hashed into run metrics.
    pub fn to_text(&self) -> String {
        let heads: Vec<String> = self
            .conv_heads
            .iter()
            .map(|h| format!("{}:{}", h.kernel, h.filters))
            .collect();
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("task", self.task.as_str().into());
        put("input_length", self.input_length.to_string());
        put("num_classes", self.num_classes.to_string());
        put("class_labels", self.class_labels.join(","));
        put("conv_heads", heads.join(","));
        put("residual_channels", join(&self.residual_channels));
        put("lstm_hidden", self.lstm_hidden.to_string());
        put("use_attentional_lstm", self.use_attentional_lstm.to_string());
        put("dropout_rate", self.dropout_rate.to_string());
        put("decoder_widths", join(&self.decoder_widths));
        put("scaled_attention", self.scaled_attention.to_string());
        put("shared_qkv", self.shared_qkv.to_string());
        put("seed", self.seed.to_string());
        s
    }

    /// Inverse of [`ModelConfig::to_text`]; every key must be present.
    pub fn from_text(text: &str) -> Result<Self> {
        let entries = kv::parse(text)?;
        let mut cfg = ModelConfig::new(Task::Classify, 1, 1);
        let required = [
            "task",
            "input_length",
            "num_classes",
            "conv_heads",
            "residual_channels",
            "lstm_hidden",
            "use_attentional_lstm",
            "dropout_rate",
            "decoder_widths",
            "scaled_attention",
            "shared_qkv",
            "seed",
        ];
        for key in required {
            if !entries.iter().any(|e| e.key == key) {
                return Err(RtfnError::Config(format!("model configuration lacks {key}")));
            }
        }
        for e in &entries {
            if !cfg.set_any(&e.key, &e.value)? {
                return Err(RtfnError::Config(format!(
                    "line {}: unknown model key {}",
                    e.line, e.key
                )));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `[128, 256, max(t/2, 64), t]`.
pub fn default_decoder_widths(input_length: usize) -> Vec<usize> {
    vec![128, 256, (input_length / 2).max(64), input_length]
}

fn parse_heads(value: &str) -> Result<Vec<HeadSpec>> {
    value
        .split(',')
        .map(|part| {
            let (k, f) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| bad_value("conv_heads", value, "kernel:filters pairs"))?;
            Ok(HeadSpec {
                kernel: kv::parse_usize("conv_heads", k.trim())?,
                filters: kv::parse_usize("conv_heads", f.trim())?,
            })
        })
        .collect()
}
