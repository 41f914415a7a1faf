use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{fan_in_bound, BatchNorm};
use crate::error::{Result, RtfnError};
use crate::params::{ParamId, ParamStore, Session};
use crate::tensor::{Padding, Var};

/// One head of a multi-head convolution block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub kernel: usize,
    pub filters: usize,
}

/// Same-padded convolution (no bias) followed by batch norm.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub kernel_weights: ParamId,
    pub bn: BatchNorm,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl ConvBn {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel == 0 || c_in == 0 || c_out == 0 {
            return Err(RtfnError::Config(format!(
                "{prefix}: conv needs positive sizes (c_in {c_in}, c_out {c_out}, kernel {kernel})"
            )));
        }
        let kernel_weights = store.add_uniform(
            format!("{prefix}.conv"),
            &[c_out, c_in, kernel],
            fan_in_bound(c_in * kernel),
            rng,
        )?;
        let bn = BatchNorm::new(store, &format!("{prefix}.bn"), c_out)?;
        Ok(ConvBn {
            kernel_weights,
            bn,
            c_in,
            c_out,
            kernel,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.param(self.kernel_weights);
        let h = s.graph.conv1d(x, w, Padding::Same)?;
        self.bn.forward(s, h)
    }
}

/// Parallel convolutions with different kernel sizes, each followed by
/// batch norm and ReLU, concatenated along the channel axis.
#[derive(Clone, Debug)]
pub struct MultiHeadConv {
    pub heads: Vec<ConvBn>,
}

impl MultiHeadConv {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        heads: &[HeadSpec],
        rng: &mut R,
    ) -> Result<Self> {
        if heads.is_empty() {
            return Err(RtfnError::Config(format!("{prefix}: no convolution heads")));
        }
        let heads = heads
            .iter()
            .enumerate()
            .map(|(i, h)| ConvBn::new(store, &format!("{prefix}.head{i}"), c_in, h.filters, h.kernel, rng))
            .collect::<Result<_>>()?;
        Ok(MultiHeadConv { heads })
    }

    pub fn out_channels(&self) -> usize {
        self.heads.iter().map(|h| h.c_out).sum()
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let h = head.forward(s, x)?;
            outs.push(s.graph.relu(h));
        }
        if outs.len() == 1 {
            return Ok(outs[0]);
        }
        s.graph.concat(&outs, 1)
    }
}

/// Kernel sizes of the three stacked convolutions in a residual block.
pub const RESIDUAL_KERNELS: [usize; 3] = [8, 5, 3];

/// conv(8)→BN→ReLU→conv(5)→BN→ReLU→conv(3)→BN, plus an identity or
/// 1×1-conv+BN shortcut, then ReLU.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub convs: [ConvBn; 3],
    pub shortcut: Option<ConvBn>,
}

impl ResidualBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let [k1, k2, k3] = RESIDUAL_KERNELS;
        let convs = [
            ConvBn::new(store, &format!("{prefix}.c1"), c_in, c_out, k1, rng)?,
            ConvBn::new(store, &format!("{prefix}.c2"), c_out, c_out, k2, rng)?,
            ConvBn::new(store, &format!("{prefix}.c3"), c_out, c_out, k3, rng)?,
        ];
        let shortcut = if c_in != c_out {
            Some(ConvBn::new(store, &format!("{prefix}.shortcut"), c_in, c_out, 1, rng)?)
        } else {
            None
        };
        Ok(ResidualBlock { convs, shortcut })
    }

    pub fn out_channels(&self) -> usize {
        self.convs[2].c_out
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let h = self.convs[0].forward(s, x)?;
        let h = s.graph.relu(h);
        let h = self.convs[1].forward(s, h)?;
        let h = s.graph.relu(h);
        let h = self.convs[2].forward(s, h)?;
        let short = match &self.shortcut {
            Some(sc) => sc.forward(s, x)?,
            None => x,
        };
        let sum = s.graph.add(h, short)?;
        Ok(s.graph.relu(sum))
    }
}
