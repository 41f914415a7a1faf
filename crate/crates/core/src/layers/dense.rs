use rand::Rng;

use super::fan_in_bound;
use crate::error::{Result, RtfnError};
use crate::params::{ParamId, ParamStore, Session};
use crate::tensor::{Tensor, Var};

/// Fully connected layer `x·W + b` on `batch × in` inputs.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add_uniform(
            format!("{prefix}.weight"),
            &[in_dim, out_dim],
            fan_in_bound(in_dim),
            rng,
        )?;
        let bias = store.add(format!("{prefix}.bias"), Tensor::zeros(&[out_dim]), true)?;
        Ok(Dense {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let shape = s.graph.value(x).shape();
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(RtfnError::Dimension(format!(
                "dense layer expects batch×{}, got {shape:?}",
                self.in_dim
            )));
        }
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        let h = s.graph.matmul(x, w)?;
        s.graph.add(h, b)
    }
}
