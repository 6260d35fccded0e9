//! Probe architectures over embedding banks.
//!
//! Two strategies: `last` heads directly on the final layer, `all` unifies
//! every layer to (T_max, F_max) via per-layer adapters (feature projection
//! then temporal interpolation), takes a softmax-weighted sum with learnable
//! layer scores, and feeds the head. Two heads: linear (time mean + affine)
//! and attention (self-attention block, residual, layer norm, two dropouts,
//! classifier).

use serde::{Deserialize, Serialize};

use crate::bank::{LayerKind, LayerSpec};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{
    affine, affine_backward, dropout, dropout_backward, interpolate_time,
    interpolate_time_backward, layernorm_backward, layernorm_fwd, mean_rows, mean_rows_backward,
    self_attention_backward, self_attention_fwd, softmax, softmax_backward, AttnCache, AttnParams,
    Dual, LayerNormCache, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Last,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Linear,
    Attention,
}

/// Reorders a conv activation (channel, height, width) into sequence form:
/// time axis = width, feature axis = channel x height (channel-major).
pub fn flatten_conv(x: &Tensor) -> Result<Tensor> {
    if x.ndim() != 3 {
        return Err(Error::ShapeMismatch {
            op: "flatten_conv",
            detail: format!("{:?}", x.shape()),
        });
    }
    let (d1, d2, d3) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[d3, d1 * d2]);
    for c in 0..d1 {
        for h in 0..d2 {
            for w in 0..d3 {
                let v = x.data()[(c * d2 + h) * d3 + w];
                out.data_mut()[w * (d1 * d2) + (c * d2 + h)] = v;
            }
        }
    }
    Ok(out)
}

/// Per-layer adapter: feature projection [f x F_max] plus bias, followed by
/// (parameter-free) temporal interpolation to T_max.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdapterParams {
    pub weight: Dual,
    pub bias: Dual,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearHeadParams {
    pub weight: Dual,
    pub bias: Dual,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionHeadParams {
    pub wq: Dual,
    pub bq: Dual,
    pub wk: Dual,
    pub bk: Dual,
    pub wv: Dual,
    pub bv: Dual,
    pub wo: Dual,
    pub bo: Dual,
    pub gamma: Dual,
    pub beta: Dual,
    pub weight: Dual,
    pub bias: Dual,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadParams {
    Linear(LinearHeadParams),
    Attention(AttentionHeadParams),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeModel {
    pub strategy: Strategy,
    pub head: HeadKind,
    pub layers: Vec<LayerSpec>,
    pub t_max: usize,
    pub f_max: usize,
    pub num_classes: usize,
    pub dropout_p: f64,
    /// One entry per used layer; None when the layer is already (T_max, F_max).
    pub adapters: Vec<Option<AdapterParams>>,
    pub layer_weights: Option<Dual>,
    pub params: HeadParams,
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::from_vec(&[rows, cols], data).expect("uniform_matrix")
}

/// Builds a probe with Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weight
/// matrices, zero biases, zero layer scores (uniform alpha), gamma=1, beta=0.
/// Draw order is fixed: adapter weights in layer order, then head matrices
/// in declaration order.
pub fn init_probe(
    specs: &[LayerSpec],
    strategy: Strategy,
    head: HeadKind,
    num_classes: usize,
    dropout_p: f64,
    rng: &mut Rng,
) -> Result<ProbeModel> {
    if specs.is_empty() {
        return Err(Error::InvalidSpec("probe needs at least one layer".into()));
    }
    if num_classes < 2 {
        return Err(Error::InvalidSpec("num_classes must be >= 2".into()));
    }
    if !(0.0..1.0).contains(&dropout_p) {
        return Err(Error::InvalidDropoutRate(dropout_p));
    }
    for spec in specs {
        spec.validate()?;
    }

    let used: Vec<&LayerSpec> = match strategy {
        Strategy::Last => vec![specs.last().unwrap()],
        Strategy::All => specs.iter().collect(),
    };
    let t_max = used.iter().map(|s| s.unified_shape().0).max().unwrap();
    let f_max = used.iter().map(|s| s.unified_shape().1).max().unwrap();

    let (adapters, layer_weights) = match strategy {
        Strategy::Last => (Vec::new(), None),
        Strategy::All => {
            let adapters = specs
                .iter()
                .map(|s| {
                    if s.unified_shape() == (t_max, f_max) {
                        None
                    } else {
                        let f = s.unified_shape().1;
                        Some(AdapterParams {
                            weight: Dual::new(uniform_matrix(f, f_max, rng)),
                            bias: Dual::new(Tensor::zeros(&[f_max])),
                        })
                    }
                })
                .collect();
            (adapters, Some(Dual::new(Tensor::zeros(&[specs.len()]))))
        }
    };

    let params = match head {
        HeadKind::Linear => HeadParams::Linear(LinearHeadParams {
            weight: Dual::new(uniform_matrix(f_max, num_classes, rng)),
            bias: Dual::new(Tensor::zeros(&[num_classes])),
        }),
        HeadKind::Attention => HeadParams::Attention(AttentionHeadParams {
            wq: Dual::new(uniform_matrix(f_max, f_max, rng)),
            bq: Dual::new(Tensor::zeros(&[f_max])),
            wk: Dual::new(uniform_matrix(f_max, f_max, rng)),
            bk: Dual::new(Tensor::zeros(&[f_max])),
            wv: Dual::new(uniform_matrix(f_max, f_max, rng)),
            bv: Dual::new(Tensor::zeros(&[f_max])),
            wo: Dual::new(uniform_matrix(f_max, f_max, rng)),
            bo: Dual::new(Tensor::zeros(&[f_max])),
            gamma: Dual::new(Tensor::filled(&[f_max], 1.0)),
            beta: Dual::new(Tensor::zeros(&[f_max])),
            weight: Dual::new(uniform_matrix(f_max, num_classes, rng)),
            bias: Dual::new(Tensor::zeros(&[num_classes])),
        }),
    };

    Ok(ProbeModel {
        strategy,
        head,
        layers: specs.to_vec(),
        t_max,
        f_max,
        num_classes,
        dropout_p,
        adapters,
        layer_weights,
        params,
    })
}

pub struct ForwardCache {
    /// Flattened (sequence-form) used layers.
    flat: Vec<Tensor>,
    adapted: Vec<Tensor>,
    alpha: Option<Tensor>,
    aggregated: Tensor,
    head: HeadCache,
}

impl ForwardCache {
    pub fn alpha(&self) -> Option<&Tensor> {
        self.alpha.as_ref()
    }

    pub fn aggregated(&self) -> &Tensor {
        &self.aggregated
    }
}

enum HeadCache {
    Linear {
        pooled: Tensor,
    },
    Attention {
        attn: AttnCache,
        mask1: Option<Vec<bool>>,
        ln: LayerNormCache,
        t: usize,
        mask2: Option<Vec<bool>>,
        /// Classifier input (pooled row after the second dropout).
        dropped: Tensor,
    },
}

/// logits[j] = b[j] + sum_k x[k] w[k][j] for a feature vector x.
fn vec_affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (f, c) = (w.shape()[0], w.shape()[1]);
    let mut out = b.clone();
    for k in 0..f {
        let xk = x.data()[k];
        for j in 0..c {
            out.data_mut()[j] += xk * w.get2(k, j);
        }
    }
    out
}

/// Returns (dx, dw, db) for `vec_affine`.
fn vec_affine_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (f, c) = (w.shape()[0], w.shape()[1]);
    let mut dx = Tensor::zeros(&[f]);
    let mut dw = Tensor::zeros(&[f, c]);
    for k in 0..f {
        let mut acc = 0.0;
        for j in 0..c {
            acc += w.get2(k, j) * dy.data()[j];
            dw.data_mut()[k * c + j] = x.data()[k] * dy.data()[j];
        }
        dx.data_mut()[k] = acc;
    }
    (dx, dw, db_from(dy))
}

fn db_from(dy: &Tensor) -> Tensor {
    dy.clone()
}

impl ProbeModel {
    /// Softmax-normalized layer weights (strategy `all` only).
    pub fn alpha(&self) -> Option<Tensor> {
        self.layer_weights
            .as_ref()
            .map(|w| softmax(&w.value).expect("alpha"))
    }

    fn flatten_used(&self, layers: &[Tensor]) -> Result<Vec<Tensor>> {
        if layers.len() != self.layers.len() {
            return Err(Error::ShapeMismatch {
                op: "forward",
                detail: format!(
                    "{} layers given, model expects {}",
                    layers.len(),
                    self.layers.len()
                ),
            });
        }
        let used: Vec<usize> = match self.strategy {
            Strategy::Last => vec![self.layers.len() - 1],
            Strategy::All => (0..self.layers.len()).collect(),
        };
        let mut flat = Vec::with_capacity(used.len());
        for &l in &used {
            let spec = &self.layers[l];
            if layers[l].shape() != spec.shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "forward",
                    detail: format!(
                        "layer {l}: {:?} vs registered {:?}",
                        layers[l].shape(),
                        spec.shape
                    ),
                });
            }
            flat.push(match spec.kind {
                LayerKind::Sequence => layers[l].clone(),
                LayerKind::Conv => flatten_conv(&layers[l])?,
            });
        }
        Ok(flat)
    }

    /// Full probe forward. Training mode draws dropout masks from `rng`;
    /// eval mode consumes no randomness.
    pub fn forward(
        &self,
        layers: &[Tensor],
        training: bool,
        rng: Option<&mut Rng>,
    ) -> Result<(Tensor, ForwardCache)> {
        let flat = self.flatten_used(layers)?;

        let (adapted, alpha, aggregated) = match self.strategy {
            Strategy::Last => {
                let h = flat[0].clone();
                (vec![h.clone()], None, h)
            }
            Strategy::All => {
                let mut adapted = Vec::with_capacity(flat.len());
                for (l, f) in flat.iter().enumerate() {
                    let a = match &self.adapters[l] {
                        None => f.clone(),
                        Some(ad) => {
                            let proj = affine(f, &ad.weight.value, &ad.bias.value)?;
                            interpolate_time(&proj, self.t_max)?
                        }
                    };
                    if a.shape() != [self.t_max, self.f_max] {
                        return Err(Error::ShapeMismatch {
                            op: "adapt_layer",
                            detail: format!(
                                "layer {l} adapted to {:?}, expected ({}, {})",
                                a.shape(),
                                self.t_max,
                                self.f_max
                            ),
                        });
                    }
                    adapted.push(a);
                }
                let alpha = self.alpha().expect("all-strategy has layer weights");
                let mut agg = Tensor::zeros(&[self.t_max, self.f_max]);
                for (a, &al) in adapted.iter().zip(alpha.data()) {
                    agg.add_scaled_assign(a, al);
                }
                (adapted, Some(alpha), agg)
            }
        };

        let (logits, head) = self.head_forward(&aggregated, training, rng)?;
        logits.check_finite("forward")?;
        Ok((
            logits,
            ForwardCache {
                flat,
                adapted,
                alpha,
                aggregated,
                head,
            },
        ))
    }

    fn head_forward(
        &self,
        h: &Tensor,
        training: bool,
        rng: Option<&mut Rng>,
    ) -> Result<(Tensor, HeadCache)> {
        match &self.params {
            HeadParams::Linear(p) => {
                let pooled = mean_rows(h);
                let logits = vec_affine(&pooled, &p.weight.value, &p.bias.value);
                Ok((logits, HeadCache::Linear { pooled }))
            }
            HeadParams::Attention(p) => {
                let need_rng = training && self.dropout_p > 0.0;
                let mut fallback = Rng::from_seed(0);
                let rng = match (need_rng, rng) {
                    (true, None) => {
                        return Err(Error::InvalidConfig(
                            "training forward with dropout needs an rng".into(),
                        ))
                    }
                    (_, Some(r)) => r,
                    (false, None) => &mut fallback, // never drawn from
                };
                let attn_params = AttnParams {
                    wq: &p.wq.value,
                    bq: &p.bq.value,
                    wk: &p.wk.value,
                    bk: &p.bk.value,
                    wv: &p.wv.value,
                    bv: &p.bv.value,
                    wo: &p.wo.value,
                    bo: &p.bo.value,
                };
                let (y, attn) = self_attention_fwd(h, &attn_params)?;
                let (d1, mask1) = dropout(&y, self.dropout_p, rng, training)?;
                let resid = h.add(&d1)?;
                let (z, ln) = layernorm_fwd(&resid, &p.gamma.value, &p.beta.value)?;
                let pooled = mean_rows(&z);
                let (dropped, mask2) = dropout(&pooled, self.dropout_p, rng, training)?;
                let logits = vec_affine(&dropped, &p.weight.value, &p.bias.value);
                Ok((
                    logits,
                    HeadCache::Attention {
                        attn,
                        mask1,
                        ln,
                        t: h.nrows(),
                        mask2,
                        dropped,
                    },
                ))
            }
        }
    }

    /// Accumulates parameter gradients for one sample given the logit
    /// cotangent. Input tensors receive no gradients (the bank is frozen).
    pub fn backward(&mut self, cache: &ForwardCache, dlogits: &Tensor) -> Result<()> {
        let dh = self.head_backward(cache, dlogits)?;

        if self.strategy == Strategy::Last {
            return Ok(());
        }

        let alpha = cache.alpha.as_ref().expect("all-strategy cache has alpha");
        let mut dalpha = Tensor::zeros(&[alpha.numel()]);
        for (l, a) in cache.adapted.iter().enumerate() {
            dalpha.data_mut()[l] = a.dot(&dh);
        }
        let dw = softmax_backward(alpha, &dalpha);
        self.layer_weights
            .as_mut()
            .expect("all-strategy has layer weights")
            .grad
            .add_assign(&dw);

        for l in 0..cache.adapted.len() {
            let Some(ad) = &mut self.adapters[l] else {
                continue;
            };
            let dadapted = dh.scale(alpha.data()[l]);
            let t_in = cache.flat[l].nrows();
            let dproj = interpolate_time_backward(t_in, self.t_max, &dadapted);
            let (_, dwl, dbl) = affine_backward(&cache.flat[l], &ad.weight.value, &dproj);
            ad.weight.grad.add_assign(&dwl);
            ad.bias.grad.add_assign(&dbl);
        }
        Ok(())
    }

    /// Head backward; returns the gradient wrt the head input.
    fn head_backward(&mut self, cache: &ForwardCache, dlogits: &Tensor) -> Result<Tensor> {
        match (&mut self.params, &cache.head) {
            (HeadParams::Linear(p), HeadCache::Linear { pooled }) => {
                let (dpooled, dw, db) = vec_affine_backward(pooled, &p.weight.value, dlogits);
                p.weight.grad.add_assign(&dw);
                p.bias.grad.add_assign(&db);
                Ok(mean_rows_backward(cache.aggregated.nrows(), &dpooled))
            }
            (
                HeadParams::Attention(p),
                HeadCache::Attention {
                    attn,
                    mask1,
                    ln,
                    t,
                    mask2,
                    dropped,
                },
            ) => {
                let (ddropped, dw, db) = vec_affine_backward(dropped, &p.weight.value, dlogits);
                p.weight.grad.add_assign(&dw);
                p.bias.grad.add_assign(&db);

                let dpooled = match mask2 {
                    Some(m) => dropout_backward(&ddropped, m, self.dropout_p),
                    None => ddropped,
                };
                let dz = mean_rows_backward(*t, &dpooled);
                let (dresid, dgamma, dbeta) = layernorm_backward(ln, &p.gamma.value, &dz);
                p.gamma.grad.add_assign(&dgamma);
                p.beta.grad.add_assign(&dbeta);

                let dy = match mask1 {
                    Some(m) => dropout_backward(&dresid, m, self.dropout_p),
                    None => dresid.clone(),
                };
                let grads = {
                    let attn_params = AttnParams {
                        wq: &p.wq.value,
                        bq: &p.bq.value,
                        wk: &p.wk.value,
                        bk: &p.bk.value,
                        wv: &p.wv.value,
                        bv: &p.bv.value,
                        wo: &p.wo.value,
                        bo: &p.bo.value,
                    };
                    self_attention_backward(attn, &attn_params, &dy)
                };
                p.wq.grad.add_assign(&grads.dwq);
                p.bq.grad.add_assign(&grads.dbq);
                p.wk.grad.add_assign(&grads.dwk);
                p.bk.grad.add_assign(&grads.dbk);
                p.wv.grad.add_assign(&grads.dwv);
                p.bv.grad.add_assign(&grads.dbv);
                p.wo.grad.add_assign(&grads.dwo);
                p.bo.grad.add_assign(&grads.dbo);

                // Residual: head input feeds both the attention block and the sum.
                let mut dh = dresid;
                dh.add_assign(&grads.dx);
                Ok(dh)
            }
            _ => unreachable!("head params and cache kinds always agree"),
        }
    }

    /// Trainable parameters in a fixed order: adapters (weight, bias) in
    /// layer order, layer weights, then head parameters in declaration order.
    pub fn params(&self) -> Vec<(&'static str, &Dual)> {
        let mut out: Vec<(&'static str, &Dual)> = Vec::new();
        for ad in self.adapters.iter().flatten() {
            out.push(("adapter.weight", &ad.weight));
            out.push(("adapter.bias", &ad.bias));
        }
        if let Some(w) = &self.layer_weights {
            out.push(("layer_weights", w));
        }
        match &self.params {
            HeadParams::Linear(p) => {
                out.push(("head.weight", &p.weight));
                out.push(("head.bias", &p.bias));
            }
            HeadParams::Attention(p) => {
                out.push(("head.wq", &p.wq));
                out.push(("head.bq", &p.bq));
                out.push(("head.wk", &p.wk));
                out.push(("head.bk", &p.bk));
                out.push(("head.wv", &p.wv));
                out.push(("head.bv", &p.bv));
                out.push(("head.wo", &p.wo));
                out.push(("head.bo", &p.bo));
                out.push(("head.gamma", &p.gamma));
                out.push(("head.beta", &p.beta));
                out.push(("head.weight", &p.weight));
                out.push(("head.bias", &p.bias));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Dual> {
        let mut out: Vec<&mut Dual> = Vec::new();
        for ad in self.adapters.iter_mut().flatten() {
            out.push(&mut ad.weight);
            out.push(&mut ad.bias);
        }
        if let Some(w) = &mut self.layer_weights {
            out.push(w);
        }
        match &mut self.params {
            HeadParams::Linear(p) => {
                out.push(&mut p.weight);
                out.push(&mut p.bias);
            }
            HeadParams::Attention(p) => {
                out.push(&mut p.wq);
                out.push(&mut p.bq);
                out.push(&mut p.wk);
                out.push(&mut p.bk);
                out.push(&mut p.wv);
                out.push(&mut p.bv);
                out.push(&mut p.wo);
                out.push(&mut p.bo);
                out.push(&mut p.gamma);
                out.push(&mut p.beta);
                out.push(&mut p.weight);
                out.push(&mut p.bias);
            }
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Exact count of trainable scalars.
    pub fn count_parameters(&self) -> usize {
        self.params().iter().map(|(_, d)| d.numel()).sum()
    }

    /// All parameter values flattened in params() order.
    pub fn param_vector(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|(_, d)| d.value.data().iter().copied())
            .collect()
    }

    pub fn grad_vector(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|(_, d)| d.grad.data().iter().copied())
            .collect()
    }

    pub fn set_param_vector(&mut self, values: &[f64]) {
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.value.numel();
            p.value.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        assert_eq!(off, values.len(), "param vector length mismatch");
    }
}
