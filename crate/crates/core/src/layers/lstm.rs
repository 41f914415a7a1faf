use rand::Rng;

use super::fan_in_bound;
use crate::error::{Result, RtfnError};
use crate::params::{ParamId, ParamStore, Session};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LstmGate {
    Input,
    Forget,
    Output,
    Candidate,
}

impl LstmGate {
    pub const ALL: [LstmGate; 4] = [
        LstmGate::Input,
        LstmGate::Forget,
        LstmGate::Output,
        LstmGate::Candidate,
    ];

    fn tag(self) -> &'static str {
        match self {
            LstmGate::Input => "i",
            LstmGate::Forget => "f",
            LstmGate::Output => "o",
            LstmGate::Candidate => "g",
        }
    }
}

/// Single-layer LSTM with separate per-gate weights (gate order i, f, o, g).
#[derive(Clone, Debug)]
pub struct Lstm {
    /// input→gate matrices, `input_dim × hidden`
    pub w: [ParamId; 4],
    /// hidden→gate matrices, `hidden × hidden`
    pub u: [ParamId; 4],
    pub b: [ParamId; 4],
    pub input_dim: usize,
    pub hidden: usize,
}

impl Lstm {
    /// Weights uniform in `±sqrt(1/fan_in)`; forget bias 1, other biases 0.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(RtfnError::Config(format!(
                "{prefix}: LSTM needs positive input ({input_dim}) and hidden ({hidden}) sizes"
            )));
        }
        let mut w = Vec::with_capacity(4);
        let mut u = Vec::with_capacity(4);
        let mut b = Vec::with_capacity(4);
        for gate in LstmGate::ALL {
            let t = gate.tag();
            w.push(store.add_uniform(
                format!("{prefix}.w_{t}"),
                &[input_dim, hidden],
                fan_in_bound(input_dim),
                rng,
            )?);
            u.push(store.add_uniform(
                format!("{prefix}.u_{t}"),
                &[hidden, hidden],
                fan_in_bound(hidden),
                rng,
            )?);
            let init = if gate == LstmGate::Forget { 1.0 } else { 0.0 };
            b.push(store.add(format!("{prefix}.b_{t}"), Tensor::filled(&[hidden], init), true)?);
        }
        let arr = |v: Vec<ParamId>| -> [ParamId; 4] { v.try_into().expect("four gates") };
        Ok(Lstm {
            w: arr(w),
            u: arr(u),
            b: arr(b),
            input_dim,
            hidden,
        })
    }

    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.w.iter().chain(&self.u).chain(&self.b).copied()
    }

    /// Runs the recurrence over `x: b×t×input_dim` and returns every hidden
    /// state as `b×t×hidden`. Missing initial states default to zero.
    pub fn forward(&self, s: &mut Session, x: Var, h0: Option<Var>, c0: Option<Var>) -> Result<Var> {
        let shape = s.graph.value(x).shape().to_vec();
        if shape.len() != 3 || shape[2] != self.input_dim {
            return Err(RtfnError::Dimension(format!(
                "LSTM expects b×t×{}, got {shape:?}",
                self.input_dim
            )));
        }
        let (batch, steps, h) = (shape[0], shape[1], self.hidden);
        let w: Vec<Var> = self.w.iter().map(|&id| s.param(id)).collect();
        let u: Vec<Var> = self.u.iter().map(|&id| s.param(id)).collect();
        let b: Vec<Var> = self.b.iter().map(|&id| s.param(id)).collect();
        let g = &mut s.graph;
        let w_all = g.concat(&w, 1)?;
        let u_all = g.concat(&u, 1)?;
        let b_all = g.concat(&b, 0)?;

        let zero_state = |g: &mut Graph| g.constant(Tensor::zeros(&[batch, h]));
        let mut hs = match h0 {
            Some(v) => v,
            None => zero_state(g),
        };
        let mut cs = match c0 {
            Some(v) => v,
            None => zero_state(g),
        };
        for v in [hs, cs] {
            if g.value(v).shape() != [batch, h] {
                return Err(RtfnError::Dimension(format!(
                    "LSTM initial state must be {batch}×{h}, got {:?}",
                    g.value(v).shape()
                )));
            }
        }
        let mut outputs = Vec::with_capacity(steps);
        for step in 0..steps {
            let xt = g.index_axis(x, 1, step)?;
            let xw = g.matmul(xt, w_all)?;
            let xw = g.add(xw, b_all)?;
            let rec = g.matmul(hs, u_all)?;
            let z = g.add(xw, rec)?;
            let zi = g.slice(z, 1, 0, h)?;
            let zf = g.slice(z, 1, h, h)?;
            let zo = g.slice(z, 1, 2 * h, h)?;
            let zg = g.slice(z, 1, 3 * h, h)?;
            let i = g.sigmoid(zi);
            let f = g.sigmoid(zf);
            let o = g.sigmoid(zo);
            let cand = g.tanh(zg);
            let keep = g.mul(f, cs)?;
            let write = g.mul(i, cand)?;
            cs = g.add(keep, write)?;
            let squashed = g.tanh(cs);
            hs = g.mul(o, squashed)?;
            outputs.push(hs);
        }
        g.stack(&outputs, 1)
    }
}

/// `softmax(f_Q · f_Kᵀ) · f_V`, optionally with the scores scaled by
/// `1/sqrt(d)`. Works on `t×d` matrices or `b×t×d` batches.
///
/// Returns `(output, attention_weights)`.
pub fn attend(g: &mut Graph, fq: Var, fk: Var, fv: Var, scaled: bool) -> Result<(Var, Var)> {
    let kt = g.transpose(fk)?;
    let mut scores = g.matmul(fq, kt)?;
    if scaled {
        let d = *g.value(fq).shape().last().expect("rank >= 2");
        scores = g.scale(scores, 1.0 / (d as f64).sqrt());
    }
    weigh_values(g, scores, fv)
}

/// `softmax(scores) · values` with the softmax taken over each row.
///
/// Returns `(output, attention_weights)`.
pub fn weigh_values(g: &mut Graph, scores: Var, values: Var) -> Result<(Var, Var)> {
    let weights = g.softmax(scores);
    let out = g.matmul(weights, values)?;
    Ok((out, weights))
}

/// Attention block whose query, key and value matrices are the hidden-state
/// sequences of LSTMs run over the same input.
#[derive(Clone, Debug)]
pub struct AttentionalLstm {
    pub query: Lstm,
    /// `None` when one LSTM feeds all three roles.
    pub key: Option<Lstm>,
    pub value: Option<Lstm>,
    pub scaled: bool,
    pub hidden: usize,
}

impl AttentionalLstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        shared: bool,
        scaled: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let query = Lstm::new(store, &format!("{prefix}.query"), input_dim, hidden, rng)?;
        let (key, value) = if shared {
            (None, None)
        } else {
            (
                Some(Lstm::new(store, &format!("{prefix}.key"), input_dim, hidden, rng)?),
                Some(Lstm::new(store, &format!("{prefix}.value"), input_dim, hidden, rng)?),
            )
        };
        Ok(AttentionalLstm {
            query,
            key,
            value,
            scaled,
            hidden,
        })
    }

    /// `x: b×t×input_dim` → `b×t×hidden`.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let fq = self.query.forward(s, x, None, None)?;
        let fk = match &self.key {
            Some(l) => l.forward(s, x, None, None)?,
            None => fq,
        };
        let fv = match &self.value {
            Some(l) => l.forward(s, x, None, None)?,
            None => fq,
        };
        let (out, _) = attend(&mut s.graph, fq, fk, fv, self.scaled)?;
        Ok(out)
    }
}
