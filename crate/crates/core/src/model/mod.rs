//! The two-branch feature network, its classifier head and its decoder.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC};
pub use config::{default_decoder_widths, ModelConfig, Task, DEFAULT_SEED};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, RtfnError};
use crate::layers::{
    dropout, global_avg_pool, AttentionalLstm, Dense, MultiHeadConv, ResidualBlock, SelfAttention,
};
use crate::params::{ParamStore, Session};
use crate::tensor::{Graph, Tensor, Var};

/// Samples per forward pass when extracting features or predictions.
pub const INFERENCE_BATCH: usize = 16;

#[derive(Clone, Debug)]
pub enum Head {
    Classifier(Dense),
    Decoder([Dense; 4]),
}

/// Temporal convolution branch: multi-head conv, self-attention, a second
/// multi-head conv, then the residual stack.
#[derive(Clone, Debug)]
pub struct TemporalBranch {
    pub conv_a: MultiHeadConv,
    pub attention: SelfAttention,
    pub conv_b: MultiHeadConv,
    pub residual: Vec<ResidualBlock>,
}

#[derive(Clone, Debug)]
pub struct RtfnModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub temporal: TemporalBranch,
    pub alstm: Option<AttentionalLstm>,
    pub head: Head,
}

impl RtfnModel {
    /// Builds and initializes a model from `config.seed`. Temporal-branch
    /// parameters are drawn first, so toggling the attentional LSTM leaves
    /// them unchanged.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();

        let conv_a = MultiHeadConv::new(&mut store, "conv_a", 1, &config.conv_heads, &mut rng)?;
        let width = conv_a.out_channels();
        let attention = SelfAttention::new(&mut store, "attention", width, &mut rng)?;
        let conv_b = MultiHeadConv::new(&mut store, "conv_b", width, &config.conv_heads, &mut rng)?;
        let mut c_in = conv_b.out_channels();
        let mut residual = Vec::with_capacity(config.residual_channels.len());
        for (i, &c_out) in config.residual_channels.iter().enumerate() {
            residual.push(ResidualBlock::new(&mut store, &format!("res{i}"), c_in, c_out, &mut rng)?);
            c_in = c_out;
        }
        let temporal = TemporalBranch {
            conv_a,
            attention,
            conv_b,
            residual,
        };

        let alstm = if config.use_attentional_lstm {
            Some(AttentionalLstm::new(
                &mut store,
                "alstm",
                1,
                config.lstm_hidden,
                config.shared_qkv,
                config.scaled_attention,
                &mut rng,
            )?)
        } else {
            None
        };

        let f = config.feature_dim();
        let head = match config.task {
            Task::Classify => Head::Classifier(Dense::new(&mut store, "classifier", f, config.num_classes, &mut rng)?),
            Task::Reconstruct => {
                let w = &config.decoder_widths;
                Head::Decoder([
                    Dense::new(&mut store, "decoder0", f, w[0], &mut rng)?,
                    Dense::new(&mut store, "decoder1", w[0], w[1], &mut rng)?,
                    Dense::new(&mut store, "decoder2", w[1], w[2], &mut rng)?,
                    Dense::new(&mut store, "decoder3", w[2], w[3], &mut rng)?,
                ])
            }
        };
        Ok(RtfnModel {
            config,
            store,
            temporal,
            alstm,
            head,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    /// Fused features `b×F` for input `x: b×1×t`.
    pub fn rtfn_forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let shape = s.graph.value(x).shape().to_vec();
        let t = self.config.input_length;
        if shape.len() != 3 || shape[1] != 1 || shape[2] != t {
            return Err(RtfnError::Dimension(format!(
                "expected input b×1×{t} (input_length {t}), got {shape:?}"
            )));
        }
        let tb = &self.temporal;
        let mut h = tb.conv_a.forward(s, x)?;
        h = tb.attention.forward(s, h)?;
        h = tb.conv_b.forward(s, h)?;
        for block in &tb.residual {
            h = block.forward(s, h)?;
        }
        let pooled = global_avg_pool(s, h)?;
        let Some(alstm) = &self.alstm else {
            return Ok(pooled);
        };
        let seq = s.graph.reshape(x, &[shape[0], t, 1])?;
        let att = alstm.forward(s, seq)?;
        let summary = s.graph.mean(att, Some(1))?;
        s.graph.concat(&[pooled, summary], 1)
    }

    /// Class logits `b×C`: features, dropout, dense.
    pub fn logits(&self, s: &mut Session, x: Var) -> Result<Var> {
        let Head::Classifier(dense) = &self.head else {
            return Err(RtfnError::Contract("model has no classifier head".into()));
        };
        let z = self.rtfn_forward(s, x)?;
        let z = dropout(s, z, self.config.dropout_rate)?;
        dense.forward(s, z)
    }

    /// Decoder stack on features `z: b×F`, returning `b×t`.
    pub fn decode(&self, s: &mut Session, z: Var) -> Result<Var> {
        let Head::Decoder(layers) = &self.head else {
            return Err(RtfnError::Contract("model has no decoder".into()));
        };
        decode(s, layers, z)
    }

    /// Reconstruction `b×t` of `x: b×1×t`.
    pub fn reconstruct(&self, s: &mut Session, x: Var) -> Result<Var> {
        let z = self.rtfn_forward(s, x)?;
        self.decode(s, z)
    }

    /// Eval-mode features for a batch of series, `n×F`.
    pub fn features(&self, series: &[&[f64]]) -> Result<Tensor> {
        let rows = self.map_batches(series, |m, s, x| m.rtfn_forward(s, x))?;
        stack_rows(rows, series.len(), self.feature_dim())
    }

    /// Predicted class ids for a batch of series.
    pub fn classify(&self, series: &[&[f64]]) -> Result<Vec<usize>> {
        let rows = self.map_batches(series, |m, s, x| m.logits(s, x))?;
        let logits = stack_rows(rows, series.len(), self.config.num_classes)?;
        Ok(argmax_rows(&logits))
    }

    fn map_batches<F>(&self, series: &[&[f64]], f: F) -> Result<Vec<f64>>
    where
        F: Fn(&Self, &mut Session, Var) -> Result<Var>,
    {
        let mut out = Vec::new();
        for chunk in series.chunks(INFERENCE_BATCH) {
            let x = batch_tensor(chunk, self.config.input_length)?;
            let mut s = Session::eval(&self.store);
            let xv = s.graph.constant(x);
            let y = f(self, &mut s, xv)?;
            out.extend_from_slice(s.graph.value(y).data());
        }
        Ok(out)
    }
}

/// Packs equal-length series into a `b×1×t` tensor.
pub fn batch_tensor(series: &[&[f64]], t: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(series.len() * t);
    for (i, s) in series.iter().enumerate() {
        if s.len() != t {
            return Err(RtfnError::Dimension(format!(
                "series {i} has length {}, expected input_length {t}",
                s.len()
            )));
        }
        data.extend_from_slice(s);
    }
    Tensor::new(&[series.len(), 1, t], data)
}

fn stack_rows(data: Vec<f64>, n: usize, width: usize) -> Result<Tensor> {
    if n == 0 {
        return Err(RtfnError::data("no series to evaluate"));
    }
    Tensor::new(&[n, width], data)
}

/// Four dense layers with ReLU between them and a linear output.
pub fn decode(s: &mut Session, layers: &[Dense; 4], z: Var) -> Result<Var> {
    let mut h = z;
    for (i, layer) in layers.iter().enumerate() {
        h = layer.forward(s, h)?;
        if i + 1 < layers.len() {
            h = s.graph.relu(h);
        }
    }
    Ok(h)
}

/// Mean cross-entropy of row-softmaxed logits against class ids.
pub fn supervised_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    g.softmax_cross_entropy(logits, labels)
}

/// Mean squared difference over all entries.
pub fn reconstruction_loss(g: &mut Graph, x: Var, x_rec: Var) -> Result<Var> {
    if g.value(x).shape() != g.value(x_rec).shape() {
        return Err(RtfnError::Dimension(format!(
            "reconstruction shape {:?} does not match input {:?}",
            g.value(x_rec).shape(),
            g.value(x).shape()
        )));
    }
    let d = g.sub(x, x_rec)?;
    let sq = g.square(d);
    g.mean(sq, None)
}

/// Row-wise argmax of a `b×C` matrix; ties go to the lowest index.
pub fn argmax_rows(m: &Tensor) -> Vec<usize> {
    let c = *m.shape().last().unwrap_or(&1);
    m.data()
        .chunks(c.max(1))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
