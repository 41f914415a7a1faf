//! The full finite-difference suite: every differentiable op and layer,
//! plus end-to-end checks through a small model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_inputs, check_model_params, check_params, jitter_params, random_tensor, weighted_sum};
use crate::error::Result;
use crate::layers::{
    attend, dropout, global_avg_pool, AttentionalLstm, Dense, HeadSpec, Lstm, MultiHeadConv, ResidualBlock,
    SelfAttention,
};
use crate::model::{reconstruction_loss, supervised_loss, ModelConfig, RtfnModel, Task};
use crate::params::ParamStore;
use crate::tensor::Padding;

pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
pub const INSTANCES: usize = 20;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub instances: usize,
    /// Worst relative error across instances.
    pub worst: f64,
    pub tolerance: f64,
    /// Set when an instance failed to evaluate at all.
    pub error: Option<String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.worst < self.tolerance
    }
}

type Instance = fn(&mut ChaCha8Rng, u64) -> Result<f64>;

struct Check {
    name: &'static str,
    tolerance: f64,
    run: Instance,
}

fn op(name: &'static str, run: Instance) -> Check {
    Check {
        name,
        tolerance: OP_TOLERANCE,
        run,
    }
}

fn composite(name: &'static str, run: Instance) -> Check {
    Check {
        name,
        tolerance: MODEL_TOLERANCE,
        run,
    }
}

fn checks() -> Vec<Check> {
    vec![
        op("matmul", |r, s| {
            let (m, k, n) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..5));
            let a = random_tensor(&[m, k], 1.0, r);
            let b = random_tensor(&[k, n], 1.0, r);
            check_inputs(&[a, b], |g, v| { let c = g.matmul(v[0], v[1])?; weighted_sum(g, c, s) }, usize::MAX, r)
        }),
        op("matmul_batched", |r, s| {
            let a = random_tensor(&[2, 3, 4], 1.0, r);
            let b = random_tensor(&[2, 4, 2], 1.0, r);
            let w = random_tensor(&[4, 3], 1.0, r);
            check_inputs(
                &[a, b, w],
                |g, v| {
                    let c = g.matmul(v[0], v[1])?;
                    let d = g.matmul(v[0], v[2])?;
                    let e = weighted_sum(g, c, s)?;
                    let f = weighted_sum(g, d, s + 1)?;
                    g.add(e, f)
                },
                usize::MAX,
                r,
            )
        }),
        op("elementwise_broadcast", |r, s| {
            let a = random_tensor(&[2, 3, 4], 1.0, r);
            let b = random_tensor(&[3, 4], 1.0, r);
            let c = random_tensor(&[4], 1.0, r);
            check_inputs(
                &[a, b, c],
                |g, v| {
                    let x = g.add(v[0], v[1])?;
                    let y = g.mul(x, v[2])?;
                    let z = g.sub(y, v[1])?;
                    let z = g.scale(z, 0.7);
                    weighted_sum(g, z, s)
                },
                usize::MAX,
                r,
            )
        }),
        op("unary", |r, s| {
            let x = random_tensor(&[3, 5], 2.0, r);
            check_inputs(
                &[x],
                |g, v| {
                    let a = g.sigmoid(v[0]);
                    let b = g.tanh(v[0]);
                    let c = g.square(v[0]);
                    let d = g.relu(v[0]);
                    let ab = g.mul(a, b)?;
                    let cd = g.add(c, d)?;
                    let out = g.add(ab, cd)?;
                    weighted_sum(g, out, s)
                },
                usize::MAX,
                r,
            )
        }),
        op("softmax", |r, s| {
            let x = random_tensor(&[2, 3, 5], 3.0, r);
            check_inputs(&[x], |g, v| { let y = g.softmax(v[0]); weighted_sum(g, y, s) }, usize::MAX, r)
        }),
        op("reductions", |r, s| {
            let x = random_tensor(&[2, 3, 4], 1.0, r);
            check_inputs(
                &[x],
                |g, v| {
                    let a = g.sum(v[0], Some(1))?;
                    let b = g.mean(v[0], Some(2))?;
                    let c = g.mean(v[0], None)?;
                    let a = weighted_sum(g, a, s)?;
                    let b = weighted_sum(g, b, s + 1)?;
                    let ab = g.add(a, b)?;
                    g.add(ab, c)
                },
                usize::MAX,
                r,
            )
        }),
        op("shape_ops", |r, s| {
            let x = random_tensor(&[2, 3, 4], 1.0, r);
            let y = random_tensor(&[2, 2, 4], 1.0, r);
            check_inputs(
                &[x, y],
                |g, v| {
                    let c = g.concat(&[v[0], v[1]], 1)?;
                    let t = g.transpose(c)?;
                    let sl = g.slice(t, 2, 1, 3)?;
                    let ix = g.index_axis(sl, 1, 2)?;
                    let st = g.stack(&[ix, ix], 0)?;
                    let rs = g.reshape(st, &[4, 3])?;
                    let a = weighted_sum(g, rs, s)?;
                    let b = weighted_sum(g, t, s + 1)?;
                    g.add(a, b)
                },
                usize::MAX,
                r,
            )
        }),
        op("conv1d", |r, s| {
            let k = r.random_range(1..6);
            let pad = if s % 2 == 0 { Padding::Same } else { Padding::Valid };
            let x = random_tensor(&[2, 3, 9], 1.0, r);
            let w = random_tensor(&[2, 3, k], 1.0, r);
            check_inputs(&[x, w], |g, v| { let y = g.conv1d(v[0], v[1], pad)?; weighted_sum(g, y, s) }, usize::MAX, r)
        }),
        op("batch_norm", |r, s| {
            let x = random_tensor(&[3, 2, 5], 2.0, r);
            let gamma = random_tensor(&[2], 1.0, r);
            let beta = random_tensor(&[2], 1.0, r);
            let fixed = s % 2 == 1;
            check_inputs(
                &[x, gamma, beta],
                |g, v| {
                    let stats = ([0.3, -0.2], [1.5, 0.7]);
                    let st = fixed.then_some((&stats.0[..], &stats.1[..]));
                    let (y, _, _) = g.batch_norm(v[0], v[1], v[2], st, 1e-5)?;
                    weighted_sum(g, y, s)
                },
                usize::MAX,
                r,
            )
        }),
        op("softmax_cross_entropy", |r, _| {
            let x = random_tensor(&[4, 3], 2.0, r);
            let labels: Vec<usize> = (0..4).map(|_| r.random_range(0..3)).collect();
            check_inputs(&[x], |g, v| supervised_loss(g, v[0], &labels), usize::MAX, r)
        }),
        op("attention", |r, s| {
            let q = random_tensor(&[2, 4, 3], 1.0, r);
            let k = random_tensor(&[2, 4, 3], 1.0, r);
            let v = random_tensor(&[2, 4, 3], 1.0, r);
            let scaled = s % 2 == 0;
            check_inputs(
                &[q, k, v],
                |g, x| {
                    let (out, _) = attend(g, x[0], x[1], x[2], scaled)?;
                    weighted_sum(g, out, s)
                },
                usize::MAX,
                r,
            )
        }),
        op("dense", |r, s| {
            let mut store = ParamStore::new();
            let layer = Dense::new(&mut store, "d", 4, 3, r)?;
            let x = random_tensor(&[5, 4], 1.0, r);
            check_params(&store, |sess| { let xv = sess.graph.constant(x.clone()); let y = layer.forward(sess, xv)?; weighted_sum(&mut sess.graph, y, s) }, usize::MAX, r)
        }),
        op("lstm", |r, s| {
            let mut store = ParamStore::new();
            let layer = Lstm::new(&mut store, "l", 2, 3, r)?;
            let x = random_tensor(&[2, 5, 2], 1.0, r);
            check_params(&store, |sess| { let xv = sess.graph.constant(x.clone()); let y = layer.forward(sess, xv, None, None)?; weighted_sum(&mut sess.graph, y, s) }, usize::MAX, r)
        }),
        op("attentional_lstm", |r, s| {
            let mut store = ParamStore::new();
            let layer = AttentionalLstm::new(&mut store, "a", 1, 3, s % 3 == 0, s % 2 == 0, r)?;
            let x = random_tensor(&[2, 5, 1], 1.0, r);
            check_params(&store, |sess| { let xv = sess.graph.constant(x.clone()); let y = layer.forward(sess, xv)?; weighted_sum(&mut sess.graph, y, s) }, 6, r)
        }),
        op("self_attention", |r, s| {
            let mut store = ParamStore::new();
            let layer = SelfAttention::new(&mut store, "sa", 3, r)?;
            let x = random_tensor(&[2, 3, 6], 1.0, r);
            check_params(&store, |sess| { let xv = sess.graph.constant(x.clone()); let y = layer.forward(sess, xv)?; weighted_sum(&mut sess.graph, y, s) }, usize::MAX, r)
        }),
        op("multi_head_conv", |r, s| {
            let mut store = ParamStore::new();
            let heads = [HeadSpec { kernel: 3, filters: 2 }, HeadSpec { kernel: 4, filters: 2 }];
            let layer = MultiHeadConv::new(&mut store, "mh", 2, &heads, r)?;
            let x = random_tensor(&[2, 2, 10], 1.0, r);
            check_params(&store, |sess| { let xv = sess.graph.constant(x.clone()); let y = layer.forward(sess, xv)?; weighted_sum(&mut sess.graph, y, s) }, 8, r)
        }),
        op("residual_block", |r, s| {
            let mut store = ParamStore::new();
            let c_out = if s % 2 == 0 { 3 } else { 2 };
            let layer = ResidualBlock::new(&mut store, "res", 2, c_out, r)?;
            let x = random_tensor(&[2, 2, 10], 1.0, r);
            check_params(&store, |sess| { let xv = sess.graph.constant(x.clone()); let y = layer.forward(sess, xv)?; weighted_sum(&mut sess.graph, y, s) }, 8, r)
        }),
        op("pool_and_dropout", |r, s| {
            let x = random_tensor(&[2, 3, 7], 1.0, r);
            let mask_seed = r.random::<u64>();
            check_inputs(
                &[x],
                |g, v| {
                    // dropout is a product with a fixed mask, reproduced here through a session
                    let store = ParamStore::new();
                    let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
                    let mut sess = crate::params::Session::train(&store, &mut mask_rng);
                    std::mem::swap(&mut sess.graph, g);
                    let d = dropout(&mut sess, v[0], 0.4)?;
                    let p = global_avg_pool(&mut sess, d)?;
                    std::mem::swap(&mut sess.graph, g);
                    weighted_sum(g, p, s)
                },
                usize::MAX,
                r,
            )
        }),
        op("decoder", |r, s| {
            let mut cfg = toy_config(Task::Reconstruct, 8);
            cfg.seed = r.random();
            let mut model = RtfnModel::new(cfg)?;
            jitter_params(&mut model.store, 0.1, r);
            let z = random_tensor(&[3, model.feature_dim()], 1.0, r);
            check_params(
                &model.store,
                |sess| {
                    let zv = sess.graph.constant(z.clone());
                    let y = model.decode(sess, zv)?;
                    weighted_sum(&mut sess.graph, y, s)
                },
                6,
                r,
            )
        }),
        composite("model_supervised", |r, _| {
            let mut cfg = toy_config(Task::Classify, 32);
            cfg.seed = r.random();
            let mut model = RtfnModel::new(cfg)?;
            jitter_params(&mut model.store, 0.1, r);
            let x = random_tensor(&[2, 1, 32], 1.5, r);
            let labels = [0, 1];
            check_model_params(
                &model.store,
                |sess| {
                    let xv = sess.graph.constant(x.clone());
                    let logits = model.logits(sess, xv)?;
                    supervised_loss(&mut sess.graph, logits, &labels)
                },
                3,
                r,
            )
        }),
        composite("model_reconstruction", |r, _| {
            let mut cfg = toy_config(Task::Reconstruct, 32);
            cfg.seed = r.random();
            let mut model = RtfnModel::new(cfg)?;
            jitter_params(&mut model.store, 0.1, r);
            let x = random_tensor(&[2, 1, 32], 1.5, r);
            let target = x.clone().reshape(&[2, 32])?;
            check_model_params(
                &model.store,
                |sess| {
                    let xv = sess.graph.constant(x.clone());
                    let tv = sess.graph.constant(target.clone());
                    let rec = model.reconstruct(sess, xv)?;
                    reconstruction_loss(&mut sess.graph, tv, rec)
                },
                3,
                r,
            )
        }),
    ]
}

/// Small model used by the end-to-end checks: every block present, widths
/// cut down, dropout off so the loss is deterministic.
pub fn toy_config(task: Task, input_length: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(task, input_length, 2);
    cfg.conv_heads = vec![HeadSpec { kernel: 3, filters: 2 }, HeadSpec { kernel: 5, filters: 2 }];
    cfg.residual_channels = vec![4, 3];
    cfg.lstm_hidden = 3;
    cfg.dropout_rate = 0.0;
    cfg.decoder_widths = vec![6, 5, 4, input_length];
    cfg
}

/// Runs every check for [`INSTANCES`] random instances each, reporting each
/// result as it completes.
pub fn run_suite(seed: u64, mut report: impl FnMut(&CheckResult)) -> Vec<CheckResult> {
    let mut results = Vec::new();
    for (i, check) in checks().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut worst: f64 = 0.0;
        let mut error = None;
        for inst in 0..INSTANCES {
            match (check.run)(&mut rng, inst as u64) {
                Ok(e) => worst = worst.max(e),
                Err(e) => {
                    error = Some(e.to_string());
                    break;
                }
            }
        }
        let res = CheckResult {
            name: check.name,
            instances: INSTANCES,
            worst,
            tolerance: check.tolerance,
            error,
        };
        report(&res);
        results.push(res);
    }
    results
}
