//! Dense numeric kernels on row-major `f64` matrices.
//!
//! Everything here is a pure function over immutable inputs: matrix
//! products, same-length 1-D convolution, a BLSTM sequence encoder,
//! multi-head attention, log-softmax, and the label-smoothing loss.
//! All probabilities stay in natural-log domain.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::TokenId;

/// Row-major dense matrix of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Mat> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                op: "Mat::from_vec",
                lhs: format!("{rows}x{cols}"),
                rhs: format!("len {}", data.len()),
            });
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Mat {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Mat {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    /// 1xN row vector.
    pub fn row_vector(data: Vec<f64>) -> Mat {
        Mat {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks the rows of `self` and `other` side by side.
    pub fn hconcat(&self, other: &Mat) -> Result<Mat> {
        if self.rows != other.rows {
            return Err(Error::DimMismatch {
                op: "hconcat",
                lhs: format!("{}x{}", self.rows, self.cols),
                rhs: format!("{}x{}", other.rows, other.cols),
            });
        }
        let mut out = Mat::zeros(self.rows, self.cols + other.cols);
        for r in 0..self.rows {
            out.row_mut(r)[..self.cols].copy_from_slice(self.row(r));
            out.row_mut(r)[self.cols..].copy_from_slice(other.row(r));
        }
        Ok(out)
    }
}

/// Sums `terms` in ascending value order.
///
/// The result depends only on the multiset of terms, so reordering the
/// biasing list cannot change even the low bits of attention outputs.
pub(crate) fn stable_sum(terms: &mut [f64]) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// out[i] = x[i] * w + bias
pub fn linear(x: &Mat, w: &Mat, bias: &[f64]) -> Result<Mat> {
    if x.cols != w.rows {
        return Err(Error::DimMismatch {
            op: "linear(x, w)",
            lhs: format!("x {}x{}", x.rows, x.cols),
            rhs: format!("w {}x{}", w.rows, w.cols),
        });
    }
    if bias.len() != w.cols {
        return Err(Error::DimMismatch {
            op: "linear(w, bias)",
            lhs: format!("w {}x{}", w.rows, w.cols),
            rhs: format!("bias len {}", bias.len()),
        });
    }
    let mut out = Mat::zeros(x.rows, w.cols);
    for i in 0..x.rows {
        let xi = x.row(i);
        let oi = out.row_mut(i);
        oi.copy_from_slice(bias);
        for (k, &xv) in xi.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wk = w.row(k);
            for j in 0..wk.len() {
                oi[j] += xv * wk[j];
            }
        }
    }
    Ok(out)
}

/// Same-length 1-D convolution over the row (time) axis.
///
/// `kernel` stacks `k` taps of shape `d x d` into a `(k*d) x d` matrix;
/// tap `j` multiplies the input row at offset `j - (k-1)/2`, with
/// symmetric zero padding outside the sequence. `k` must be odd.
pub fn conv1d(x: &Mat, kernel: &Mat, bias: &[f64], k: usize) -> Result<Mat> {
    if k % 2 == 0 {
        return Err(Error::Contract(format!("conv1d kernel size {k} must be odd")));
    }
    let d = x.cols;
    if kernel.rows != k * d || kernel.cols != d {
        return Err(Error::DimMismatch {
            op: "conv1d(x, kernel)",
            lhs: format!("x {}x{d}", x.rows),
            rhs: format!("kernel {}x{} (want {}x{d})", kernel.rows, kernel.cols, k * d),
        });
    }
    if bias.len() != d {
        return Err(Error::DimMismatch {
            op: "conv1d(kernel, bias)",
            lhs: format!("d {d}"),
            rhs: format!("bias len {}", bias.len()),
        });
    }
    let half = (k - 1) as isize / 2;
    let mut out = Mat::zeros(x.rows, d);
    for u in 0..x.rows as isize {
        let or = out.row_mut(u as usize);
        or.copy_from_slice(bias);
        for j in 0..k as isize {
            let src = u + j - half;
            if src < 0 || src >= x.rows as isize {
                continue;
            }
            let xi = x.row(src as usize);
            for (m, &xv) in xi.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let krow = kernel.row(j as usize * d + m);
                for c in 0..d {
                    or[c] += xv * krow[c];
                }
            }
        }
    }
    Ok(out)
}

/// Parameters of one LSTM direction, gate order `[input, forget, cell, output]`.
#[derive(Debug, Clone)]
pub struct LstmParams<'a> {
    /// `e x 4h`
    pub w_ih: &'a Mat,
    /// `h x 4h`
    pub w_hh: &'a Mat,
    /// `4h`
    pub bias: &'a [f64],
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Runs a single-layer LSTM over `xs` and returns the last (h, c) pair.
fn lstm_last(xs: &Mat, p: &LstmParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let hidden = p.w_hh.rows;
    if p.w_ih.cols != 4 * hidden || p.w_hh.cols != 4 * hidden || p.bias.len() != 4 * hidden {
        return Err(Error::DimMismatch {
            op: "lstm(w_ih, w_hh, bias)",
            lhs: format!("w_ih {}x{}", p.w_ih.rows, p.w_ih.cols),
            rhs: format!("w_hh {}x{}, bias {}", p.w_hh.rows, p.w_hh.cols, p.bias.len()),
        });
    }
    if xs.cols != p.w_ih.rows {
        return Err(Error::DimMismatch {
            op: "lstm(x, w_ih)",
            lhs: format!("x {}x{}", xs.rows, xs.cols),
            rhs: format!("w_ih {}x{}", p.w_ih.rows, p.w_ih.cols),
        });
    }
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut gates = vec![0.0; 4 * hidden];
    for t in 0..xs.rows {
        gates.copy_from_slice(p.bias);
        let xt = xs.row(t);
        for (k, &xv) in xt.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wr = p.w_ih.row(k);
            for g in 0..gates.len() {
                gates[g] += xv * wr[g];
            }
        }
        for (k, &hv) in h.iter().enumerate() {
            if hv == 0.0 {
                continue;
            }
            let wr = p.w_hh.row(k);
            for g in 0..gates.len() {
                gates[g] += hv * wr[g];
            }
        }
        for j in 0..hidden {
            let i_g = sigmoid(gates[j]);
            let f_g = sigmoid(gates[hidden + j]);
            let g_g = gates[2 * hidden + j].tanh();
            let o_g = sigmoid(gates[3 * hidden + j]);
            c[j] = f_g * c[j] + i_g * g_g;
            h[j] = o_g * c[j].tanh();
        }
    }
    Ok((h, c))
}

/// Bidirectional LSTM state concatenation: `[h_fwd, c_fwd, h_bwd, c_bwd]`
/// from the last step of each direction. Exposed so tests can inspect the
/// pre-linear halves.
pub fn blstm_concat_state(xs: &Mat, fwd: &LstmParams, bwd: &LstmParams) -> Result<Vec<f64>> {
    if xs.rows == 0 {
        return Err(Error::Contract("blstm input sequence is empty".into()));
    }
    let (hf, cf) = lstm_last(xs, fwd)?;
    let mut rev = Mat::zeros(xs.rows, xs.cols);
    for t in 0..xs.rows {
        rev.row_mut(t).copy_from_slice(xs.row(xs.rows - 1 - t));
    }
    let (hb, cb) = lstm_last(&rev, bwd)?;
    let mut out = Vec::with_capacity(2 * (hf.len() + cf.len()));
    out.extend(hf);
    out.extend(cf);
    out.extend(hb);
    out.extend(cb);
    Ok(out)
}

/// Encodes an embedded token sequence into a fixed `d_model` vector:
/// BLSTM last-step states concatenated, then a linear layer.
pub fn blstm_encode(
    xs: &Mat,
    fwd: &LstmParams,
    bwd: &LstmParams,
    out_w: &Mat,
    out_b: &[f64],
) -> Result<Vec<f64>> {
    let state = blstm_concat_state(xs, fwd, bwd)?;
    let projected = linear(&Mat::row_vector(state), out_w, out_b)?;
    Ok(projected.data)
}

/// Scaled dot-product attention with `heads` heads.
///
/// `q` rows attend over `kv` rows; the projection matrices are
/// `d_model x d_model` with per-head column slices of width
/// `d_model / heads`. Softmax is scaled by `sqrt(scale_dim)`.
/// Returns one `U x M` weight matrix per head and the `U x d_model`
/// concatenated context.
pub fn multi_head_attention(
    q: &Mat,
    kv: &Mat,
    w_q: &Mat,
    w_k: &Mat,
    w_v: &Mat,
    heads: usize,
    scale_dim: usize,
) -> Result<(Vec<Mat>, Mat)> {
    if kv.rows == 0 {
        return Err(Error::Contract(
            "attention needs at least one key/value row".into(),
        ));
    }
    let d_model = q.cols;
    if heads == 0 || d_model % heads != 0 {
        return Err(Error::Contract(format!(
            "head count {heads} must divide d_model {d_model}"
        )));
    }
    for (name, w) in [("w_q", w_q), ("w_k", w_k), ("w_v", w_v)] {
        if w.rows != d_model || w.cols != d_model {
            return Err(Error::DimMismatch {
                op: "multi_head_attention",
                lhs: format!("d_model {d_model}"),
                rhs: format!("{name} {}x{}", w.rows, w.cols),
            });
        }
    }
    if kv.cols != d_model {
        return Err(Error::DimMismatch {
            op: "multi_head_attention(q, kv)",
            lhs: format!("q {}x{}", q.rows, q.cols),
            rhs: format!("kv {}x{}", kv.rows, kv.cols),
        });
    }
    let d_head = d_model / heads;
    let scale = (scale_dim as f64).sqrt();
    let qp = linear(q, w_q, &vec![0.0; d_model])?;
    let kp = linear(kv, w_k, &vec![0.0; d_model])?;
    let vp = linear(kv, w_v, &vec![0.0; d_model])?;

    let mut alphas = Vec::with_capacity(heads);
    let mut ctx = Mat::zeros(q.rows, d_model);
    let mut terms = vec![0.0; kv.rows];
    for h in 0..heads {
        let lo = h * d_head;
        let hi = lo + d_head;
        let mut alpha = Mat::zeros(q.rows, kv.rows);
        for u in 0..q.rows {
            let qu = &qp.row(u)[lo..hi];
            let scores = alpha.row_mut(u);
            for m in 0..kv.rows {
                let km = &kp.row(m)[lo..hi];
                let mut dot: Vec<f64> = qu.iter().zip(km).map(|(a, b)| a * b).collect();
                scores[m] = stable_sum(&mut dot) / scale;
            }
            // Softmax over keys, summed in value order so that permuting
            // the key set permutes the weights without perturbing them.
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
            }
            terms.copy_from_slice(scores);
            let denom = stable_sum(&mut terms);
            for s in scores.iter_mut() {
                *s /= denom;
            }
            for (j, col) in (lo..hi).enumerate() {
                let mut prods: Vec<f64> =
                    (0..kv.rows).map(|m| alpha.row(u)[m] * vp.get(m, lo + j)).collect();
                ctx.set(u, col, stable_sum(&mut prods));
            }
        }
        alphas.push(alpha);
    }
    Ok((alphas, ctx))
}

/// log(sum(exp(row))) with the usual max shift.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// log(exp(a) + exp(b))
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Row-wise log-softmax; each output row exponentiates to a distribution.
pub fn log_softmax(x: &Mat) -> Mat {
    let mut out = x.clone();
    for r in 0..out.rows {
        let z = log_sum_exp(out.row(r));
        for v in out.row_mut(r) {
            *v -= z;
        }
    }
    out
}

/// Mean label-smoothing loss over rows of a log-distribution matrix.
///
/// Per row: `-[(1-eps) * logp[y] + eps/(V-1) * sum_{k != y} logp[k]]`.
pub fn label_smoothing_loss(logp: &Mat, targets: &[TokenId], eps: f64) -> Result<f64> {
    if targets.len() != logp.rows {
        return Err(Error::Contract(format!(
            "label_smoothing_loss: {} targets for {} rows",
            targets.len(),
            logp.rows
        )));
    }
    let v = logp.cols;
    let mut total = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        if y as usize >= v {
            return Err(Error::Contract(format!(
                "label_smoothing_loss: target {y} out of range for vocab {v}"
            )));
        }
        let row = logp.row(i);
        let target_lp = row[y as usize];
        let rest: f64 = row.iter().sum::<f64>() - target_lp;
        let off = if v > 1 { eps / (v as f64 - 1.0) } else { 0.0 };
        total += -((1.0 - eps) * target_lp + off * rest);
    }
    Ok(total / targets.len() as f64)
}

/// Loss mixing weights.
#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    /// CTC weight, in [0, 1]; the attention term gets `1 - lambda1`.
    pub lambda1: f64,
    /// Bias-loss weight, >= 0.
    pub lambda2: f64,
    /// Label-smoothing epsilon, in [0, 1).
    pub smoothing_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 0.3,
            lambda2: 0.2,
            smoothing_eps: 0.1,
        }
    }
}

/// `lambda1 * l_ctc + (1 - lambda1) * l_att + lambda2 * l_bias`
pub fn joint_loss(l_ctc: f64, l_att: f64, l_bias: f64, cfg: &LossConfig) -> f64 {
    cfg.lambda1 * l_ctc + (1.0 - cfg.lambda1) * l_att + cfg.lambda2 * l_bias
}

/// Model-geometry metadata carried alongside a weight bundle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleMeta {
    pub d_model: usize,
    /// Attention scaling dimension; usually `d_model / heads`.
    pub attn_dim: usize,
    pub heads: usize,
    pub vocab: usize,
    pub conv_kernel: usize,
}

impl BundleMeta {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Contract(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::Contract(format!(
                "conv kernel {} must be odd",
                self.conv_kernel
            )));
        }
        Ok(())
    }
}

/// Named parameter map plus geometry metadata.
///
/// Consumers fetch tensors by name and state the shape they need; a
/// missing name or wrong shape is reported against that name.
#[derive(Debug, Clone)]
pub struct WeightBundle {
    pub meta: BundleMeta,
    params: BTreeMap<String, Mat>,
}

impl WeightBundle {
    pub fn new(meta: BundleMeta) -> WeightBundle {
        WeightBundle {
            meta,
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Mat> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    /// Fetches `name` and checks it against the declared shape.
    pub fn get_shaped(&self, name: &str, rows: usize, cols: usize) -> Result<&Mat> {
        let m = self.get(name)?;
        if m.shape() != (rows, cols) {
            return Err(Error::DimMismatch {
                op: "weight bundle",
                lhs: format!("{name} is {}x{}", m.rows(), m.cols()),
                rhs: format!("expected {rows}x{cols}"),
            });
        }
        Ok(m)
    }

    /// Fetches a 1 x n vector parameter.
    pub fn get_vector(&self, name: &str, len: usize) -> Result<&[f64]> {
        Ok(self.get_shaped(name, 1, len)?.row(0))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }
}
