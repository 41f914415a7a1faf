//! Network building blocks. Every layer owns only [`ParamId`]s; values live
//! in the [`ParamStore`](crate::ParamStore) and are bound per [`Session`].

mod attention;
mod conv;
mod dense;
mod lstm;
mod norm;

pub use attention::SelfAttention;
pub use conv::{ConvBn, HeadSpec, MultiHeadConv, ResidualBlock};
pub use dense::Dense;
pub use lstm::{attend, weigh_values, AttentionalLstm, Lstm, LstmGate};
pub use norm::BatchNorm;

use rand::Rng;

use crate::error::{Result, RtfnError};
use crate::params::{ParamId, Session};
use crate::tensor::{Tensor, Var};

/// Uniform init bound `sqrt(1/fan_in)`.
pub(crate) fn fan_in_bound(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt()
}

/// Inverted dropout: identity in eval mode, otherwise zeroes each entry with
/// probability `rate` and scales survivors by `1/(1-rate)`.
pub fn dropout(s: &mut Session, x: Var, rate: f64) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(RtfnError::Config(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    if !s.training() || rate == 0.0 {
        return Ok(x);
    }
    let shape = s.graph.value(x).shape().to_vec();
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - rate);
    let rng = s
        .rng()
        .ok_or_else(|| RtfnError::Contract("training-mode dropout needs a generator".into()))?;
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let m = s.graph.constant(Tensor::new(&shape, mask)?);
    s.graph.mul(x, m)
}

/// Mean over the time axis: `b×c×t -> b×c`.
pub fn global_avg_pool(s: &mut Session, x: Var) -> Result<Var> {
    let rank = s.graph.value(x).rank();
    if rank != 3 {
        return Err(RtfnError::Dimension(format!(
            "global_avg_pool expects b×c×t, got {:?}",
            s.graph.value(x).shape()
        )));
    }
    s.graph.mean(x, Some(2))
}

/// Shorthand used by layers when binding several parameters at once.
pub(crate) fn bind<const N: usize>(s: &mut Session, ids: [ParamId; N]) -> [Var; N] {
    ids.map(|id| s.param(id))
}
