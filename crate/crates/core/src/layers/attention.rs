use rand::Rng;

use super::{bind, fan_in_bound};
use crate::error::{Result, RtfnError};
use crate::params::{ParamId, ParamStore, Session};
use crate::tensor::Var;

/// Single-head self-attention over the time axis of `b×c×t` features,
/// applied residually.
///
/// Per batch item, with `x` as a `c×t` matrix: `Q = Pq·x`, `K = Pk·x`,
/// `V = Pv·x`, `A = softmax over keys of Kᵀ·Q` (each column sums to one) and
/// the output is `x + V·A`.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub channels: usize,
}

impl SelfAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = fan_in_bound(channels);
        let shape = [channels, channels];
        Ok(SelfAttention {
            query: store.add_uniform(format!("{prefix}.query"), &shape, bound, rng)?,
            key: store.add_uniform(format!("{prefix}.key"), &shape, bound, rng)?,
            value: store.add_uniform(format!("{prefix}.value"), &shape, bound, rng)?,
            channels,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let shape = s.graph.value(x).shape();
        if shape.len() != 3 || shape[1] != self.channels {
            return Err(RtfnError::Dimension(format!(
                "self-attention expects b×{}×t, got {shape:?}",
                self.channels
            )));
        }
        let [pq, pk, pv] = bind(s, [self.query, self.key, self.value]);
        let g = &mut s.graph;
        let q = g.matmul(pq, x)?;
        let k = g.matmul(pk, x)?;
        let v = g.matmul(pv, x)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(kt, q)?; // b×t×t, [i][j] = k_i·q_j
        // normalise over keys (axis 1) via the row softmax on the transpose
        let st = g.transpose(scores)?;
        let at = g.softmax(st);
        let attn = g.transpose(at)?;
        let attended = g.matmul(v, attn)?;
        g.add(x, attended)
    }
}
