//! Central finite-difference checks of tape gradients.
//!
//! The checks only ever call forward passes to build the numerical
//! estimate, so they stay independent of the backward implementation they
//! validate. [`suite`] bundles the per-op and per-layer checks that the
//! `gradcheck` CLI subcommand runs.

pub mod suite;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::params::{ParamId, ParamStore, Session};
use crate::tensor::{Graph, Tensor, Var};

/// Default central-difference step for `f64`.
pub const STEP: f64 = 1e-5;

/// Steps tried in turn when the one-sided differences disagree, i.e. when a
/// ReLU kink lies within the stencil.
const KINK_STEPS: [f64; 3] = [STEP, 1e-6, 1e-7];

/// Central difference of `f` along one coordinate whose unperturbed value is
/// `f0`. `f(h)` evaluates the function with the coordinate shifted by `h`.
fn numeric_derivative(f0: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let mut central = 0.0;
    for h in KINK_STEPS {
        let (fp, fm) = (f(h)?, f(-h)?);
        central = (fp - fm) / (2.0 * h);
        let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
        if (fwd - bwd).abs() <= 1e-2 * fwd.abs().max(bwd.abs()).max(1e-3) {
            break;
        }
    }
    Ok(central)
}

/// Relative error between an analytic and a numeric gradient vector:
/// `‖a − n‖ / max(‖a‖, ‖n‖)`, or 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

fn pick_indices<R: Rng + ?Sized>(len: usize, max: usize, rng: &mut R) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, max).into_vec();
        v.sort_unstable();
        v
    }
}

/// Checks gradients with respect to graph leaves built from `inputs`.
///
/// `build` receives a fresh graph and one variable per input and must return
/// a scalar. At most `max_elems` coordinates per input are probed. Returns the
/// worst relative error over all inputs.
pub fn check_inputs<R, F>(inputs: &[Tensor], build: F, max_elems: usize, rng: &mut R) -> Result<f64>
where
    R: Rng + ?Sized,
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.variable(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).data().iter().sum())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let f0: f64 = g.value(out).data().iter().sum();

    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(&g, v);
        let idx = pick_indices(inputs[k].len(), max_elems, rng);
        let mut a = Vec::with_capacity(idx.len());
        let mut n = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = work[k].data()[i];
            let d = numeric_derivative(f0, |h| {
                work[k].data_mut()[i] = orig + h;
                let f = eval(&work);
                work[k].data_mut()[i] = orig;
                f
            })?;
            n.push(d);
            a.push(analytic.data()[i]);
        }
        worst = worst.max(relative_error(&a, &n));
    }
    Ok(worst)
}

/// Checks gradients of a session-based forward pass with respect to every
/// trainable parameter in `store`, returning the worst relative error of any
/// single parameter tensor.
///
/// `build` runs the forward pass inside the given session and returns the
/// scalar loss; it must be deterministic (training-mode batch norm is fine,
/// dropout is not).
pub fn check_params<R, F>(store: &ParamStore, build: F, max_elems: usize, rng: &mut R) -> Result<f64>
where
    R: Rng + ?Sized,
    F: Fn(&mut Session) -> Result<Var>,
{
    let blocks = param_gradients(store, build, max_elems, rng)?;
    Ok(blocks.iter().map(|(a, n)| relative_error(a, n)).fold(0.0, f64::max))
}

/// Like [`check_params`], but measures one relative error over the sampled
/// coordinates of all parameters together, i.e. over the model gradient as a
/// single vector.
///
/// Used for whole-model checks, where some parameter tensors (the query and
/// key LSTMs behind a near-uniform attention, say) carry gradients close to
/// the central-difference roundoff floor and a per-tensor ratio measures
/// that noise rather than the backward pass.
pub fn check_model_params<R, F>(store: &ParamStore, build: F, max_elems: usize, rng: &mut R) -> Result<f64>
where
    R: Rng + ?Sized,
    F: Fn(&mut Session) -> Result<Var>,
{
    let blocks = param_gradients(store, build, max_elems, rng)?;
    let (a, n): (Vec<f64>, Vec<f64>) = blocks
        .into_iter()
        .flat_map(|(a, n)| a.into_iter().zip(n))
        .unzip();
    Ok(relative_error(&a, &n))
}

/// Analytic and numeric gradients at sampled coordinates, one pair of
/// vectors per trainable parameter.
fn param_gradients<R, F>(store: &ParamStore, build: F, max_elems: usize, rng: &mut R) -> Result<Vec<(Vec<f64>, Vec<f64>)>>
where
    R: Rng + ?Sized,
    F: Fn(&mut Session) -> Result<Var>,
{
    let (f0, analytic): (f64, Vec<(ParamId, Tensor)>) = {
        let mut sess = Session::train_deterministic(store);
        let loss = build(&mut sess)?;
        (sess.graph.value(loss).data()[0], sess.backward(loss)?)
    };
    let mut work = store.clone();
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut sess = Session::train_deterministic(s);
        let loss = build(&mut sess)?;
        Ok(sess.graph.value(loss).data()[0])
    };
    let mut blocks = Vec::with_capacity(analytic.len());
    for (id, grad) in &analytic {
        let idx = pick_indices(grad.len(), max_elems, rng);
        let mut a = Vec::with_capacity(idx.len());
        let mut n = Vec::with_capacity(idx.len());
        for &i in &idx {
            let orig = work.value(*id).data()[i];
            let d = numeric_derivative(f0, |h| {
                work.value_mut(*id).data_mut()[i] = orig + h;
                let f = eval(&work);
                work.value_mut(*id).data_mut()[i] = orig;
                f
            })?;
            n.push(d);
            a.push(grad.data()[i]);
        }
        blocks.push((a, n));
    }
    Ok(blocks)
}

/// Random tensor with entries uniform in `[-scale, scale]`.
pub fn random_tensor<R: Rng + ?Sized>(shape: &[usize], scale: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect())
        .expect("valid shape")
}

/// Adds uniform noise in `[-scale, scale]` to every trainable parameter.
///
/// Zero-initialized biases can leave a ReLU input at exactly 0 (every unit
/// upstream dead for some row), where a central difference measures half the
/// slope. Jittering first moves every check off such kinks.
pub fn jitter_params<R: Rng + ?Sized>(store: &mut ParamStore, scale: f64, rng: &mut R) {
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    for id in ids {
        for v in store.value_mut(id).data_mut() {
            *v += rng.random_range(-scale..scale);
        }
    }
}

/// Fixed random projection used to turn a tensor output into a scalar loss
/// whose gradient is not uniform.
pub fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let w = random_tensor(g.value(x).shape(), 1.0, &mut rng);
    let wv = g.constant(w);
    let p = g.mul(x, wv)?;
    g.sum(p, None)
}
