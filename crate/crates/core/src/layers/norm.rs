use crate::error::Result;
use crate::params::{ParamId, ParamStore, Session, StatUpdate};
use crate::tensor::{Tensor, Var};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch normalisation with running statistics.
///
/// Training mode normalises with batch statistics and queues a running-stat
/// update on the session; eval mode uses the stored running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::ones(&[channels]), true)?,
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros(&[channels]), true)?,
            running_mean: store.add(
                format!("{prefix}.running_mean"),
                Tensor::zeros(&[channels]),
                false,
            )?,
            running_var: store.add(
                format!("{prefix}.running_var"),
                Tensor::ones(&[channels]),
                false,
            )?,
            channels,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        if s.training() {
            let (y, mean, var) = s.graph.batch_norm(x, gamma, beta, None, BN_EPS)?;
            s.record_stats(StatUpdate {
                mean: self.running_mean,
                var: self.running_var,
                batch_mean: mean,
                batch_var: var,
                momentum: BN_MOMENTUM,
            });
            Ok(y)
        } else {
            let store = s.store();
            let mean = store.value(self.running_mean).data().to_vec();
            let var = store.value(self.running_var).data().to_vec();
            let (y, _, _) = s.graph.batch_norm(x, gamma, beta, Some((&mean, &var)), BN_EPS)?;
            Ok(y)
        }
    }
}
