//! Dense f64 tensors with explicit forward and backward passes for every
//! operation the probe heads need. No autodiff tape: each composite keeps the
//! intermediates its backward needs in a small cache struct.
//!
//! All math runs in 64-bit floats. Banks store f32 and are upcast on load.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            });
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                detail: format!("zero-sized dimension in {shape:?}"),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn vector(data: Vec<f64>) -> Tensor {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Tensor {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Tensor {
            shape: vec![r, c],
            data: rows.concat(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Rows of a 2-d tensor.
    pub fn nrows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "nrows on non-2d tensor");
        self.shape[0]
    }

    /// Columns of a 2-d tensor.
    pub fn ncols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "ncols on non-2d tensor");
        self.shape[1]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.shape[1] + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(op))
        }
    }

    pub fn transpose(&self) -> Tensor {
        assert_eq!(self.shape.len(), 2, "transpose on non-2d tensor");
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    pub fn scale(&self, a: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * a).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add",
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add_scaled_assign(&mut self, other: &Tensor, a: f64) {
        assert_eq!(self.shape, other.shape, "add_scaled_assign shape mismatch");
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "dot shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

// Parameter tensors serialize as nested arrays of f64 so checkpoints are
// plain JSON; shape is recovered from the nesting on load.
impl Serialize for Tensor {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self.shape.len() {
            1 => self.data.serialize(serializer),
            2 => {
                let rows: Vec<&[f64]> = (0..self.shape[0]).map(|i| self.row(i)).collect();
                rows.serialize(serializer)
            }
            3 => {
                let (d1, d2, d3) = (self.shape[0], self.shape[1], self.shape[2]);
                let nested: Vec<Vec<&[f64]>> = (0..d1)
                    .map(|a| {
                        (0..d2)
                            .map(|b| {
                                let off = (a * d2 + b) * d3;
                                &self.data[off..off + d3]
                            })
                            .collect()
                    })
                    .collect();
                nested.serialize(serializer)
            }
            n => Err(serde::ser::Error::custom(format!(
                "unsupported tensor rank {n} for serialization"
            ))),
        }
    }
}

impl<'de> Deserialize<'de> for Tensor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Tensor, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Nested {
            D3(Vec<Vec<Vec<f64>>>),
            D2(Vec<Vec<f64>>),
            D1(Vec<f64>),
        }
        match Nested::deserialize(deserializer)? {
            Nested::D1(v) => {
                if v.is_empty() {
                    return Err(D::Error::custom("empty tensor"));
                }
                Ok(Tensor::vector(v))
            }
            Nested::D2(rows) => {
                let c = rows.first().map_or(0, |r| r.len());
                if c == 0 || rows.iter().any(|r| r.len() != c) {
                    return Err(D::Error::custom("ragged or empty 2-d tensor"));
                }
                Ok(Tensor::from_rows(&rows))
            }
            Nested::D3(v) => {
                let d1 = v.len();
                let d2 = v.first().map_or(0, |p| p.len());
                let d3 = v.first().and_then(|p| p.first()).map_or(0, |r| r.len());
                if d2 == 0 || d3 == 0 {
                    return Err(D::Error::custom("empty 3-d tensor"));
                }
                let mut data = Vec::with_capacity(d1 * d2 * d3);
                for plane in &v {
                    if plane.len() != d2 {
                        return Err(D::Error::custom("ragged 3-d tensor"));
                    }
                    for row in plane {
                        if row.len() != d3 {
                            return Err(D::Error::custom("ragged 3-d tensor"));
                        }
                        data.extend_from_slice(row);
                    }
                }
                Tensor::from_vec(&[d1, d2, d3], data).map_err(D::Error::custom)
            }
        }
    }
}

/// A parameter tensor paired with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Dual {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Dual {
    pub fn new(value: Tensor) -> Dual {
        let grad = Tensor::zeros(value.shape());
        Dual { value, grad }
    }

    pub fn zero_grad(&mut self) {
        for g in self.grad.data_mut() {
            *g = 0.0;
        }
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

impl Serialize for Dual {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.value.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Dual {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Dual, D::Error> {
        Ok(Dual::new(Tensor::deserialize(deserializer)?))
    }
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            detail: format!("{:?} x {:?}", a.shape(), b.shape()),
        });
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for p in 0..k {
            let aip = a.data()[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b.data()[p * n..(p + 1) * n];
            let orow = &mut out.data[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aip * brow[j];
            }
        }
    }
    out.check_finite("matmul")?;
    Ok(out)
}

/// Gradients of `matmul(a, b)` given the output cotangent.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor) {
    let da = matmul(grad_out, &b.transpose()).expect("matmul_backward da");
    let db = matmul(&a.transpose(), grad_out).expect("matmul_backward db");
    (da, db)
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

/// Softmax of a 1-d tensor, with max subtraction for stability.
pub fn softmax(v: &Tensor) -> Result<Tensor> {
    if v.numel() == 0 {
        return Err(Error::EmptyInput("softmax"));
    }
    Ok(Tensor {
        shape: v.shape.clone(),
        data: softmax_slice(v.data()),
    })
}

fn softmax_slice(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Backward of softmax given its output `y` and cotangent `dy`:
/// dx_i = y_i (dy_i - sum_j y_j dy_j).
pub fn softmax_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let inner: f64 = y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum();
    Tensor {
        shape: y.shape.clone(),
        data: y
            .data()
            .iter()
            .zip(dy.data())
            .map(|(yi, di)| yi * (di - inner))
            .collect(),
    }
}

/// Row-wise softmax of a 2-d tensor.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    if x.ndim() != 2 {
        return Err(Error::ShapeMismatch {
            op: "softmax_rows",
            detail: format!("{:?}", x.shape()),
        });
    }
    let (r, c) = (x.nrows(), x.ncols());
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        data.extend(softmax_slice(x.row(i)));
    }
    Ok(Tensor {
        shape: vec![r, c],
        data,
    })
}

pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let (r, c) = (y.nrows(), y.ncols());
    let mut out = Tensor::zeros(&[r, c]);
    for i in 0..r {
        let yr = y.row(i);
        let dr = dy.row(i);
        let inner: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
        for j in 0..c {
            out.data[i * c + j] = yr[j] * (dr[j] - inner);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// layer norm
// ---------------------------------------------------------------------------

pub const LAYERNORM_EPS: f64 = 1e-5;

pub struct LayerNormCache {
    /// Normalized rows before the affine map.
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

/// Per-row normalization over the feature axis (biased variance, eps 1e-5
/// inside the square root), then affine by gamma and beta.
pub fn layernorm_fwd(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
) -> Result<(Tensor, LayerNormCache)> {
    if x.ndim() != 2 || gamma.shape() != [x.ncols()] || beta.shape() != [x.ncols()] {
        return Err(Error::ShapeMismatch {
            op: "layernorm",
            detail: format!(
                "x {:?}, gamma {:?}, beta {:?}",
                x.shape(),
                gamma.shape(),
                beta.shape()
            ),
        });
    }
    let (r, f) = (x.nrows(), x.ncols());
    let mut xhat = Tensor::zeros(&[r, f]);
    let mut out = Tensor::zeros(&[r, f]);
    let mut inv_std = Vec::with_capacity(r);
    for i in 0..r {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / f as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / f as f64;
        let istd = 1.0 / (var + LAYERNORM_EPS).sqrt();
        inv_std.push(istd);
        for j in 0..f {
            let h = (row[j] - mean) * istd;
            xhat.data[i * f + j] = h;
            out.data[i * f + j] = gamma.data()[j] * h + beta.data()[j];
        }
    }
    out.check_finite("layernorm")?;
    Ok((out, LayerNormCache { xhat, inv_std }))
}

pub fn layernorm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    Ok(layernorm_fwd(x, gamma, beta)?.0)
}

/// Returns (dx, dgamma, dbeta).
pub fn layernorm_backward(
    cache: &LayerNormCache,
    gamma: &Tensor,
    dy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (r, f) = (cache.xhat.nrows(), cache.xhat.ncols());
    let mut dx = Tensor::zeros(&[r, f]);
    let mut dgamma = Tensor::zeros(&[f]);
    let mut dbeta = Tensor::zeros(&[f]);
    for i in 0..r {
        let xh = cache.xhat.row(i);
        let dr = dy.row(i);
        let istd = cache.inv_std[i];
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..f {
            let dxhat = dr[j] * gamma.data()[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xh[j];
            dgamma.data[j] += dr[j] * xh[j];
            dbeta.data[j] += dr[j];
        }
        let ff = f as f64;
        for j in 0..f {
            let dxhat = dr[j] * gamma.data()[j];
            dx.data[i * f + j] = istd / ff * (ff * dxhat - sum_dxhat - xh[j] * sum_dxhat_xhat);
        }
    }
    (dx, dgamma, dbeta)
}

// ---------------------------------------------------------------------------
// temporal interpolation
// ---------------------------------------------------------------------------

/// Source rows and blend weight for each output row of the endpoint-aligned
/// linear interpolation from `t_in` to `t_out` rows.
fn interp_stencil(t_in: usize, t_out: usize) -> Vec<(usize, usize, f64)> {
    (0..t_out)
        .map(|t| {
            if t_in == 1 || t_out == 1 {
                // Single source row replicated / single output reads coordinate 0.
                return (0, 0, 0.0);
            }
            let s = t as f64 * (t_in - 1) as f64 / (t_out - 1) as f64;
            let i0 = s.floor() as usize;
            let i0 = i0.min(t_in - 1);
            let i1 = (i0 + 1).min(t_in - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Piecewise-linear interpolation along the time axis with endpoint
/// alignment. Its backward is the exact transpose of this linear map.
pub fn interpolate_time(x: &Tensor, t_out: usize) -> Result<Tensor> {
    if x.ndim() != 2 {
        return Err(Error::ShapeMismatch {
            op: "interpolate_time",
            detail: format!("{:?}", x.shape()),
        });
    }
    if t_out < 1 {
        return Err(Error::OutOfRange {
            op: "interpolate_time",
            detail: "t_out < 1".into(),
        });
    }
    let f = x.ncols();
    let mut out = Tensor::zeros(&[t_out, f]);
    for (t, &(i0, i1, frac)) in interp_stencil(x.nrows(), t_out).iter().enumerate() {
        let r0 = x.row(i0);
        let r1 = x.row(i1);
        for j in 0..f {
            out.data[t * f + j] = (1.0 - frac) * r0[j] + frac * r1[j];
        }
    }
    Ok(out)
}

/// Transpose of the interpolation map: scatter-adds the output cotangent
/// back onto the `t_in` source rows.
pub fn interpolate_time_backward(t_in: usize, t_out: usize, dy: &Tensor) -> Tensor {
    let f = dy.ncols();
    let mut dx = Tensor::zeros(&[t_in, f]);
    for (t, &(i0, i1, frac)) in interp_stencil(t_in, t_out).iter().enumerate() {
        let dr = dy.row(t);
        for j in 0..f {
            dx.data[i0 * f + j] += (1.0 - frac) * dr[j];
            if frac != 0.0 {
                dx.data[i1 * f + j] += frac * dr[j];
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

/// Inverted dropout: survivors are scaled by 1/(1-p) at train time so eval
/// is a pure identity. Returns the keep mask when one was drawn.
pub fn dropout(
    x: &Tensor,
    p: f64,
    rng: &mut Rng,
    training: bool,
) -> Result<(Tensor, Option<Vec<bool>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidDropoutRate(p));
    }
    if !training || p == 0.0 {
        return Ok((x.clone(), None));
    }
    let scale = 1.0 / (1.0 - p);
    let mask: Vec<bool> = (0..x.numel()).map(|_| rng.uniform01() >= p).collect();
    let data = x
        .data()
        .iter()
        .zip(&mask)
        .map(|(&v, &keep)| if keep { v * scale } else { 0.0 })
        .collect();
    Ok((
        Tensor {
            shape: x.shape.clone(),
            data,
        },
        Some(mask),
    ))
}

pub fn dropout_backward(dy: &Tensor, mask: &[bool], p: f64) -> Tensor {
    let scale = 1.0 / (1.0 - p);
    Tensor {
        shape: dy.shape.clone(),
        data: dy
            .data()
            .iter()
            .zip(mask)
            .map(|(&d, &keep)| if keep { d * scale } else { 0.0 })
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// mean over time
// ---------------------------------------------------------------------------

/// Mean over the time (row) axis of a `T x F` tensor.
pub fn mean_rows(x: &Tensor) -> Tensor {
    let (t, f) = (x.nrows(), x.ncols());
    let mut out = Tensor::zeros(&[f]);
    for i in 0..t {
        for (j, v) in x.row(i).iter().enumerate() {
            out.data[j] += v;
        }
    }
    for v in &mut out.data {
        *v /= t as f64;
    }
    out
}

pub fn mean_rows_backward(t: usize, dy: &Tensor) -> Tensor {
    let f = dy.numel();
    let mut dx = Tensor::zeros(&[t, f]);
    for i in 0..t {
        for j in 0..f {
            dx.data[i * f + j] = dy.data()[j] / t as f64;
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// affine map x W + b (rows of x are samples/time steps)
// ---------------------------------------------------------------------------

pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut out = matmul(x, w)?;
    if b.shape() != [out.ncols()] {
        return Err(Error::ShapeMismatch {
            op: "affine",
            detail: format!("bias {:?} vs cols {}", b.shape(), out.ncols()),
        });
    }
    let c = out.ncols();
    for i in 0..out.nrows() {
        for j in 0..c {
            out.data[i * c + j] += b.data()[j];
        }
    }
    Ok(out)
}

/// Returns (dx, dw, db) where db is the column sum of dy.
pub fn affine_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (dx, dw) = matmul_backward(x, w, dy);
    let c = dy.ncols();
    let mut db = Tensor::zeros(&[c]);
    for i in 0..dy.nrows() {
        for j in 0..c {
            db.data[j] += dy.data()[i * c + j];
        }
    }
    (dx, dw, db)
}

// ---------------------------------------------------------------------------
// single-head self-attention
// ---------------------------------------------------------------------------

pub struct AttnParams<'a> {
    pub wq: &'a Tensor,
    pub bq: &'a Tensor,
    pub wk: &'a Tensor,
    pub bk: &'a Tensor,
    pub wv: &'a Tensor,
    pub bv: &'a Tensor,
    pub wo: &'a Tensor,
    pub bo: &'a Tensor,
}

pub struct AttnCache {
    pub x: Tensor,
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    /// Row-softmaxed attention matrix.
    pub attn: Tensor,
    pub ctx: Tensor,
}

pub struct AttnGrads {
    pub dx: Tensor,
    pub dwq: Tensor,
    pub dbq: Tensor,
    pub dwk: Tensor,
    pub dbk: Tensor,
    pub dwv: Tensor,
    pub dbv: Tensor,
    pub dwo: Tensor,
    pub dbo: Tensor,
}

/// Single-head scaled dot-product self-attention:
/// A = softmax_rows((XWq+bq)(XWk+bk)^T / sqrt(F)), out = (A (XWv+bv)) Wo + bo.
pub fn self_attention_fwd(x: &Tensor, p: &AttnParams) -> Result<(Tensor, AttnCache)> {
    let f = x.ncols();
    let q = affine(x, p.wq, p.bq)?;
    let k = affine(x, p.wk, p.bk)?;
    let v = affine(x, p.wv, p.bv)?;
    let scores = matmul(&q, &k.transpose())?.scale(1.0 / (f as f64).sqrt());
    let attn = softmax_rows(&scores)?;
    let ctx = matmul(&attn, &v)?;
    let out = affine(&ctx, p.wo, p.bo)?;
    out.check_finite("self_attention")?;
    Ok((
        out,
        AttnCache {
            x: x.clone(),
            q,
            k,
            v,
            attn,
            ctx,
        },
    ))
}

pub fn self_attention(x: &Tensor, p: &AttnParams) -> Result<Tensor> {
    Ok(self_attention_fwd(x, p)?.0)
}

pub fn self_attention_backward(cache: &AttnCache, p: &AttnParams, dy: &Tensor) -> AttnGrads {
    let f = cache.x.ncols();
    let scale = 1.0 / (f as f64).sqrt();

    let (dctx, dwo, dbo) = affine_backward(&cache.ctx, p.wo, dy);
    let (dattn, dv) = matmul_backward(&cache.attn, &cache.v, &dctx);
    let dscores = softmax_rows_backward(&cache.attn, &dattn).scale(scale);
    // scores = Q K^T: dQ = dS K, dK = dS^T Q.
    let dq = matmul(&dscores, &cache.k).expect("attention dq");
    let dk = matmul(&dscores.transpose(), &cache.q).expect("attention dk");

    let (dx_q, dwq, dbq) = affine_backward(&cache.x, p.wq, &dq);
    let (dx_k, dwk, dbk) = affine_backward(&cache.x, p.wk, &dk);
    let (dx_v, dwv, dbv) = affine_backward(&cache.x, p.wv, &dv);
    let mut dx = dx_q;
    dx.add_assign(&dx_k);
    dx.add_assign(&dx_v);

    AttnGrads {
        dx,
        dwq,
        dbq,
        dwk,
        dbk,
        dwv,
        dbv,
        dwo,
        dbo,
    }
}
