//! Slice-level forward/backward kernels used by the graph ops.

use super::gemm;

/// Geometry of one 1-D convolution (cross-correlation, no kernel flip).
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len_in: usize,
    pub kernel: usize,
    pub pad_left: usize,
    pub len_out: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.c_in * self.kernel
    }

    /// Valid output range `[lo, hi)` for kernel tap `j`.
    fn tap_range(&self, j: usize) -> (usize, usize) {
        // output position o reads input o + j - pad_left
        let lo = self.pad_left.saturating_sub(j);
        let hi_unclamped = (self.len_in + self.pad_left).saturating_sub(j);
        (lo.min(self.len_out), hi_unclamped.min(self.len_out).max(lo.min(self.len_out)))
    }
}

fn im2col(g: &ConvGeom, x: &[f64], col: &mut [f64]) {
    let n = g.len_out;
    for ci in 0..g.c_in {
        let xrow = &x[ci * g.len_in..(ci + 1) * g.len_in];
        for j in 0..g.kernel {
            let row = &mut col[(ci * g.kernel + j) * n..(ci * g.kernel + j + 1) * n];
            let (lo, hi) = g.tap_range(j);
            row[..lo].fill(0.0);
            row[hi..].fill(0.0);
            if hi > lo {
                let src = lo + j - g.pad_left;
                row[lo..hi].copy_from_slice(&xrow[src..src + (hi - lo)]);
            }
        }
    }
}

fn col2im_add(g: &ConvGeom, col: &[f64], dx: &mut [f64]) {
    let n = g.len_out;
    for ci in 0..g.c_in {
        let dxrow = &mut dx[ci * g.len_in..(ci + 1) * g.len_in];
        for j in 0..g.kernel {
            let row = &col[(ci * g.kernel + j) * n..(ci * g.kernel + j + 1) * n];
            let (lo, hi) = g.tap_range(j);
            if hi > lo {
                let src = lo + j - g.pad_left;
                for (d, c) in dxrow[src..src + (hi - lo)].iter_mut().zip(&row[lo..hi]) {
                    *d += c;
                }
            }
        }
    }
}

pub(crate) fn conv1d_forward(g: &ConvGeom, x: &[f64], w: &[f64], out: &mut [f64]) {
    let rows = g.col_rows();
    let mut col = vec![0.0; rows * g.len_out];
    for b in 0..g.batch {
        let xb = &x[b * g.c_in * g.len_in..(b + 1) * g.c_in * g.len_in];
        im2col(g, xb, &mut col);
        let ob = &mut out[b * g.c_out * g.len_out..(b + 1) * g.c_out * g.len_out];
        gemm(
            g.c_out,
            rows,
            g.len_out,
            1.0,
            w,
            (rows, 1),
            &col,
            (g.len_out, 1),
            0.0,
            ob,
            (g.len_out, 1),
        );
    }
}

/// Accumulates input and/or kernel gradients of a convolution.
pub(crate) fn conv1d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    mut dx: Option<&mut [f64]>,
    mut dw: Option<&mut [f64]>,
) {
    let rows = g.col_rows();
    let mut col = vec![0.0; rows * g.len_out];
    for b in 0..g.batch {
        let db = &dout[b * g.c_out * g.len_out..(b + 1) * g.c_out * g.len_out];
        if let Some(dw) = dw.as_deref_mut() {
            let xb = &x[b * g.c_in * g.len_in..(b + 1) * g.c_in * g.len_in];
            im2col(g, xb, &mut col);
            // dW += dOut · colᵀ
            gemm(
                g.c_out,
                g.len_out,
                rows,
                1.0,
                db,
                (g.len_out, 1),
                &col,
                (1, g.len_out),
                1.0,
                dw,
                (rows, 1),
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            // dcol = Wᵀ · dOut
            gemm(
                rows,
                g.c_out,
                g.len_out,
                1.0,
                w,
                (1, rows),
                db,
                (g.len_out, 1),
                0.0,
                &mut col,
                (g.len_out, 1),
            );
            let dxb = &mut dx[b * g.c_in * g.len_in..(b + 1) * g.c_in * g.len_in];
            col2im_add(g, &col, dxb);
        }
    }
}

/// Numerically stable softmax over contiguous rows of length `n`.
pub(crate) fn softmax_rows(x: &[f64], n: usize, out: &mut [f64]) {
    for (xr, or) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let m = xr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = (v - m).exp();
            s += *o;
        }
        let inv = 1.0 / s;
        or.iter_mut().for_each(|o| *o *= inv);
    }
}

/// dx = y ⊙ (dy − ⟨dy, y⟩) per row.
pub(crate) fn softmax_rows_backward(y: &[f64], dy: &[f64], n: usize, dx: &mut [f64]) {
    for ((yr, dyr), dxr) in y
        .chunks_exact(n)
        .zip(dy.chunks_exact(n))
        .zip(dx.chunks_exact_mut(n))
    {
        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        for ((d, &yv), &g) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d += yv * (g - dot);
        }
    }
}

/// Layout of a batch-norm input: `(batch, channels, inner)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BnGeom {
    pub batch: usize,
    pub channels: usize,
    pub inner: usize,
}

impl BnGeom {
    fn count(&self) -> usize {
        self.batch * self.inner
    }

    fn for_channel(&self, c: usize, mut f: impl FnMut(usize)) {
        for b in 0..self.batch {
            let base = (b * self.channels + c) * self.inner;
            for i in base..base + self.inner {
                f(i);
            }
        }
    }
}

/// Per-channel batch statistics `(mean, biased variance)`.
pub(crate) fn channel_stats(g: &BnGeom, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = g.count() as f64;
    let mut mean = vec![0.0; g.channels];
    let mut var = vec![0.0; g.channels];
    for c in 0..g.channels {
        let mut s = 0.0;
        g.for_channel(c, |i| s += x[i]);
        let m = s / n;
        let mut v = 0.0;
        g.for_channel(c, |i| {
            let d = x[i] - m;
            v += d * d;
        });
        mean[c] = m;
        var[c] = v / n;
    }
    (mean, var)
}

/// Writes `x̂ = (x − mean)·inv_std` and `y = gamma·x̂ + beta`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_apply(
    g: &BnGeom,
    x: &[f64],
    mean: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    beta: &[f64],
    xhat: &mut [f64],
    y: &mut [f64],
) {
    for c in 0..g.channels {
        let (m, s, ga, be) = (mean[c], inv_std[c], gamma[c], beta[c]);
        g.for_channel(c, |i| {
            let h = (x[i] - m) * s;
            xhat[i] = h;
            y[i] = ga * h + be;
        });
    }
}

/// Gradients of batch norm. `batch_stats` selects whether mean/var were
/// computed from the batch (training) or fixed (evaluation).
#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_backward(
    g: &BnGeom,
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    dy: &[f64],
    batch_stats: bool,
    mut dx: Option<&mut [f64]>,
    mut dgamma: Option<&mut [f64]>,
    mut dbeta: Option<&mut [f64]>,
) {
    let n = g.count() as f64;
    for c in 0..g.channels {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        g.for_channel(c, |i| {
            sum_dy += dy[i];
            sum_dy_xhat += dy[i] * xhat[i];
        });
        if let Some(dg) = dgamma.as_deref_mut() {
            dg[c] += sum_dy_xhat;
        }
        if let Some(db) = dbeta.as_deref_mut() {
            db[c] += sum_dy;
        }
        if let Some(dx) = dx.as_deref_mut() {
            let k = gamma[c] * inv_std[c];
            if batch_stats {
                let (mdy, mdyx) = (sum_dy / n, sum_dy_xhat / n);
                g.for_channel(c, |i| dx[i] += k * (dy[i] - mdy - xhat[i] * mdyx));
            } else {
                g.for_channel(c, |i| dx[i] += k * dy[i]);
            }
        }
    }
}
