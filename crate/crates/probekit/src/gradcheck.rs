//! Finite-difference verification of every backward pass.
//!
//! Central differences with step 1e-5 in f64; relative error is
//! |g_a - g_n| / max(1, |g_a|, |g_n|). Individual ops must stay under 1e-6,
//! full probe forward+loss composites under 1e-5.

use crate::bank::{LayerKind, LayerSpec};
use crate::error::{Error, Result};
use crate::model::{init_probe, HeadKind, Strategy};
use crate::rng::Rng;
use crate::tensor::{
    self, interpolate_time, interpolate_time_backward, layernorm_backward,
    layernorm_fwd, matmul, matmul_backward, mean_rows, mean_rows_backward, self_attention_backward,
    self_attention_fwd, softmax, softmax_backward, AttnParams, Tensor,
};
use crate::train::{bce_loss, ce_loss};

pub const FD_STEP: f64 = 1e-5;
pub const OP_THRESHOLD: f64 = 1e-6;
pub const PROBE_THRESHOLD: f64 = 1e-5;
const INSTANCES: usize = 20;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Max relative error between `analytic` and the central finite difference
/// of `f` at `point`, over all coordinates.
pub fn gradcheck<F>(mut f: F, point: &[f64], analytic: &[f64]) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    assert_eq!(point.len(), analytic.len());
    let mut xs = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..xs.len() {
        let orig = xs[i];
        xs[i] = orig + FD_STEP;
        let up = f(&xs)?;
        xs[i] = orig - FD_STEP;
        let down = f(&xs)?;
        xs[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite("gradcheck"));
        }
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct ComponentReport {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub threshold: f64,
}

impl ComponentReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.threshold
    }
}

fn rand_vec(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

fn check_matmul(rng: &mut Rng) -> Result<f64> {
    let (m, k, n) = (3, 4, 2);
    let a = Tensor::from_vec(&[m, k], rand_vec(m * k, rng))?;
    let b = Tensor::from_vec(&[k, n], rand_vec(k * n, rng))?;
    let u = Tensor::from_vec(&[m, n], rand_vec(m * n, rng))?;
    let (da, db) = matmul_backward(&a, &b, &u);
    let mut analytic = da.data().to_vec();
    analytic.extend_from_slice(db.data());
    let mut point = a.data().to_vec();
    point.extend_from_slice(b.data());
    gradcheck(
        |xs| {
            let a = Tensor::from_vec(&[m, k], xs[..m * k].to_vec())?;
            let b = Tensor::from_vec(&[k, n], xs[m * k..].to_vec())?;
            Ok(matmul(&a, &b)?.dot(&u))
        },
        &point,
        &analytic,
    )
}

fn check_softmax(rng: &mut Rng) -> Result<f64> {
    let v = Tensor::vector(rand_vec(5, rng));
    let u = Tensor::vector(rand_vec(5, rng));
    let y = softmax(&v)?;
    let analytic = softmax_backward(&y, &u);
    gradcheck(
        |xs| Ok(softmax(&Tensor::vector(xs.to_vec()))?.dot(&u)),
        v.data(),
        analytic.data(),
    )
}

fn check_layernorm(rng: &mut Rng) -> Result<f64> {
    let (t, f) = (2, 3);
    let x = Tensor::from_vec(&[t, f], rand_vec(t * f, rng))?;
    let gamma = Tensor::vector(rand_vec(f, rng));
    let beta = Tensor::vector(rand_vec(f, rng));
    let u = Tensor::from_vec(&[t, f], rand_vec(t * f, rng))?;
    let (_, cache) = layernorm_fwd(&x, &gamma, &beta)?;
    let (dx, dgamma, dbeta) = layernorm_backward(&cache, &gamma, &u);
    let mut analytic = dx.data().to_vec();
    analytic.extend_from_slice(dgamma.data());
    analytic.extend_from_slice(dbeta.data());
    let mut point = x.data().to_vec();
    point.extend_from_slice(gamma.data());
    point.extend_from_slice(beta.data());
    gradcheck(
        |xs| {
            let x = Tensor::from_vec(&[t, f], xs[..t * f].to_vec())?;
            let gamma = Tensor::vector(xs[t * f..t * f + f].to_vec());
            let beta = Tensor::vector(xs[t * f + f..].to_vec());
            Ok(tensor::layernorm(&x, &gamma, &beta)?.dot(&u))
        },
        &point,
        &analytic,
    )
}

fn check_interpolate(rng: &mut Rng) -> Result<f64> {
    let (t_in, t_out, f) = (4, 7, 3);
    let x = Tensor::from_vec(&[t_in, f], rand_vec(t_in * f, rng))?;
    let u = Tensor::from_vec(&[t_out, f], rand_vec(t_out * f, rng))?;
    let analytic = interpolate_time_backward(t_in, t_out, &u);
    gradcheck(
        |xs| {
            let x = Tensor::from_vec(&[t_in, f], xs.to_vec())?;
            Ok(interpolate_time(&x, t_out)?.dot(&u))
        },
        x.data(),
        analytic.data(),
    )
}

fn check_mean_rows(rng: &mut Rng) -> Result<f64> {
    let (t, f) = (5, 3);
    let x = Tensor::from_vec(&[t, f], rand_vec(t * f, rng))?;
    let u = Tensor::vector(rand_vec(f, rng));
    let analytic = mean_rows_backward(t, &u);
    gradcheck(
        |xs| Ok(mean_rows(&Tensor::from_vec(&[t, f], xs.to_vec())?).dot(&u)),
        x.data(),
        analytic.data(),
    )
}

fn check_self_attention(rng: &mut Rng) -> Result<f64> {
    let (t, f) = (3, 4);
    let x = Tensor::from_vec(&[t, f], rand_vec(t * f, rng))?;
    let mats: Vec<Tensor> = (0..4)
        .map(|_| Tensor::from_vec(&[f, f], rand_vec(f * f, rng)).unwrap())
        .collect();
    let biases: Vec<Tensor> = (0..4).map(|_| Tensor::vector(rand_vec(f, rng))).collect();
    let u = Tensor::from_vec(&[t, f], rand_vec(t * f, rng))?;

    let params = AttnParams {
        wq: &mats[0],
        bq: &biases[0],
        wk: &mats[1],
        bk: &biases[1],
        wv: &mats[2],
        bv: &biases[2],
        wo: &mats[3],
        bo: &biases[3],
    };
    let (_, cache) = self_attention_fwd(&x, &params)?;
    let grads = self_attention_backward(&cache, &params, &u);

    let mut point = x.data().to_vec();
    let mut analytic = grads.dx.data().to_vec();
    for (dm, dbias) in [
        (&grads.dwq, &grads.dbq),
        (&grads.dwk, &grads.dbk),
        (&grads.dwv, &grads.dbv),
        (&grads.dwo, &grads.dbo),
    ] {
        analytic.extend_from_slice(dm.data());
        analytic.extend_from_slice(dbias.data());
    }
    for i in 0..4 {
        point.extend_from_slice(mats[i].data());
        point.extend_from_slice(biases[i].data());
    }

    gradcheck(
        |xs| {
            let mut off = 0;
            let mut take = |n: usize| {
                let s = xs[off..off + n].to_vec();
                off += n;
                s
            };
            let x = Tensor::from_vec(&[t, f], take(t * f))?;
            let mut ms = Vec::new();
            let mut bs = Vec::new();
            for _ in 0..4 {
                ms.push(Tensor::from_vec(&[f, f], take(f * f))?);
                bs.push(Tensor::vector(take(f)));
            }
            let p = AttnParams {
                wq: &ms[0],
                bq: &bs[0],
                wk: &ms[1],
                bk: &bs[1],
                wv: &ms[2],
                bv: &bs[2],
                wo: &ms[3],
                bo: &bs[3],
            };
            Ok(tensor::self_attention(&x, &p)?.dot(&u))
        },
        &point,
        &analytic,
    )
}

fn check_layernorm_matmul(rng: &mut Rng) -> Result<f64> {
    // Composite from the op contract: layernorm(matmul(x, w)) wrt x and w.
    let (t, k, f) = (2, 3, 3);
    let x = Tensor::from_vec(&[t, k], rand_vec(t * k, rng))?;
    let w = Tensor::from_vec(&[k, f], rand_vec(k * f, rng))?;
    let gamma = Tensor::filled(&[f], 1.0);
    let beta = Tensor::zeros(&[f]);
    let u = Tensor::from_vec(&[t, f], rand_vec(t * f, rng))?;

    let prod = matmul(&x, &w)?;
    let (_, cache) = layernorm_fwd(&prod, &gamma, &beta)?;
    let (dprod, _, _) = layernorm_backward(&cache, &gamma, &u);
    let (dx, dw) = matmul_backward(&x, &w, &dprod);
    let mut analytic = dx.data().to_vec();
    analytic.extend_from_slice(dw.data());
    let mut point = x.data().to_vec();
    point.extend_from_slice(w.data());
    gradcheck(
        |xs| {
            let x = Tensor::from_vec(&[t, k], xs[..t * k].to_vec())?;
            let w = Tensor::from_vec(&[k, f], xs[t * k..].to_vec())?;
            Ok(tensor::layernorm(&matmul(&x, &w)?, &gamma, &beta)?.dot(&u))
        },
        &point,
        &analytic,
    )
}

fn check_ce_loss(rng: &mut Rng) -> Result<f64> {
    let logits = Tensor::vector(rand_vec(4, rng));
    let target = rng.gen_index(4);
    let (_, grad) = ce_loss(&logits, target)?;
    gradcheck(
        |xs| Ok(ce_loss(&Tensor::vector(xs.to_vec()), target)?.0),
        logits.data(),
        grad.data(),
    )
}

fn check_bce_loss(rng: &mut Rng) -> Result<f64> {
    let logits = Tensor::vector(rand_vec(4, rng));
    let targets: Vec<u8> = (0..4).map(|_| (rng.uniform01() < 0.5) as u8).collect();
    let (_, grad) = bce_loss(&logits, &targets)?;
    gradcheck(
        |xs| Ok(bce_loss(&Tensor::vector(xs.to_vec()), &targets)?.0),
        logits.data(),
        grad.data(),
    )
}

fn probe_layer_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec {
            name: "seq_small".into(),
            kind: LayerKind::Sequence,
            shape: vec![4, 3],
        },
        LayerSpec {
            name: "conv_block".into(),
            kind: LayerKind::Conv,
            shape: vec![2, 2, 5],
        },
        LayerSpec {
            name: "seq_last".into(),
            kind: LayerKind::Sequence,
            shape: vec![6, 5],
        },
    ]
}

/// End-to-end check: cross-entropy through a full probe wrt every
/// parameter group (eval-mode forward, so no dropout randomness).
fn check_probe(strategy: Strategy, head: HeadKind, rng: &mut Rng) -> Result<f64> {
    let specs = probe_layer_specs();
    let mut model = init_probe(&specs, strategy, head, 3, 0.0, rng)?;
    // Move layer weights off the uniform point so their gradient is generic.
    if let Some(w) = &mut model.layer_weights {
        for v in w.value.data_mut() {
            *v = rng.uniform(-0.5, 0.5);
        }
    }
    let layers: Vec<Tensor> = specs
        .iter()
        .map(|s| Tensor::from_vec(&s.shape, rand_vec(s.numel(), rng)).unwrap())
        .collect();
    let target = rng.gen_index(3);

    model.zero_grads();
    let (logits, cache) = model.forward(&layers, false, None)?;
    let (_, dlogits) = ce_loss(&logits, target)?;
    model.backward(&cache, &dlogits)?;
    let analytic = model.grad_vector();
    let point = model.param_vector();

    let mut scratch = model.clone();
    gradcheck(
        |xs| {
            scratch.set_param_vector(xs);
            let (logits, _) = scratch.forward(&layers, false, None)?;
            Ok(ce_loss(&logits, target)?.0)
        },
        &point,
        &analytic,
    )
}

fn worst<F: FnMut(&mut Rng) -> Result<f64>>(mut f: F, seed: u64) -> Result<f64> {
    let mut rng = Rng::from_seed(seed);
    let mut max = 0.0f64;
    for _ in 0..INSTANCES {
        max = max.max(f(&mut rng)?);
    }
    Ok(max)
}

/// Runs the whole finite-difference suite on fixed-seed random instances
/// and reports the worst relative error per component.
pub fn run_suite() -> Result<Vec<ComponentReport>> {
    let mut out = Vec::new();
    let mut push = |name: &'static str, err: f64, threshold: f64| {
        out.push(ComponentReport {
            name,
            max_rel_err: err,
            threshold,
        });
    };
    push("matmul", worst(check_matmul, 101)?, OP_THRESHOLD);
    push("softmax", worst(check_softmax, 102)?, OP_THRESHOLD);
    push("layernorm", worst(check_layernorm, 103)?, OP_THRESHOLD);
    push("interpolate_time", worst(check_interpolate, 104)?, OP_THRESHOLD);
    push("mean_rows", worst(check_mean_rows, 105)?, OP_THRESHOLD);
    push("self_attention", worst(check_self_attention, 106)?, OP_THRESHOLD);
    push("layernorm_matmul", worst(check_layernorm_matmul, 107)?, OP_THRESHOLD);
    push("ce_loss", worst(check_ce_loss, 108)?, OP_THRESHOLD);
    push("bce_loss", worst(check_bce_loss, 109)?, OP_THRESHOLD);
    push(
        "probe_last_linear",
        worst(|r| check_probe(Strategy::Last, HeadKind::Linear, r), 110)?,
        PROBE_THRESHOLD,
    );
    push(
        "probe_last_attention",
        worst(|r| check_probe(Strategy::Last, HeadKind::Attention, r), 111)?,
        PROBE_THRESHOLD,
    );
    push(
        "probe_all_linear",
        worst(|r| check_probe(Strategy::All, HeadKind::Linear, r), 112)?,
        PROBE_THRESHOLD,
    );
    push(
        "probe_all_attention",
        worst(|r| check_probe(Strategy::All, HeadKind::Attention, r), 113)?,
        PROBE_THRESHOLD,
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::affine_backward;

    #[test]
    fn quadratic_exactness() {
        // f(w) = w^2 at w = 3: analytic 6.
        let err = gradcheck(|xs| Ok(xs[0] * xs[0]), &[3.0], &[6.0]).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn suite_passes_all_thresholds() {
        for report in run_suite().unwrap() {
            assert!(
                report.passed(),
                "{}: {} >= {}",
                report.name,
                report.max_rel_err,
                report.threshold
            );
        }
    }

    #[test]
    fn sign_flipped_layernorm_gradient_is_caught() {
        let mut rng = Rng::from_seed(500);
        let x = Tensor::from_vec(&[2, 3], rand_vec(6, &mut rng)).unwrap();
        let gamma = Tensor::vector(rand_vec(3, &mut rng));
        let beta = Tensor::vector(rand_vec(3, &mut rng));
        let u = Tensor::from_vec(&[2, 3], rand_vec(6, &mut rng)).unwrap();
        let (_, cache) = layernorm_fwd(&x, &gamma, &beta).unwrap();
        let (dx, _, _) = layernorm_backward(&cache, &gamma, &u);
        let flipped: Vec<f64> = dx.data().iter().map(|v| -v).collect();
        let err = gradcheck(
            |xs| {
                let x = Tensor::from_vec(&[2, 3], xs.to_vec())?;
                Ok(tensor::layernorm(&x, &gamma, &beta)?.dot(&u))
            },
            x.data(),
            &flipped,
        )
        .unwrap();
        assert!(err > OP_THRESHOLD, "flipped gradient passed: {err}");
    }

    #[test]
    fn affine_backward_matches_fd() {
        let mut rng = Rng::from_seed(501);
        let (t, f, g) = (3, 4, 2);
        let x = Tensor::from_vec(&[t, f], rand_vec(t * f, &mut rng)).unwrap();
        let w = Tensor::from_vec(&[f, g], rand_vec(f * g, &mut rng)).unwrap();
        let b = Tensor::vector(rand_vec(g, &mut rng));
        let u = Tensor::from_vec(&[t, g], rand_vec(t * g, &mut rng)).unwrap();
        let (_, dw, db) = affine_backward(&x, &w, &u);
        let mut analytic = dw.data().to_vec();
        analytic.extend_from_slice(db.data());
        let mut point = w.data().to_vec();
        point.extend_from_slice(b.data());
        let err = gradcheck(
            |xs| {
                let w = Tensor::from_vec(&[f, g], xs[..f * g].to_vec())?;
                let b = Tensor::vector(xs[f * g..].to_vec());
                Ok(tensor::affine(&x, &w, &b)?.dot(&u))
            },
            &point,
            &analytic,
        )
        .unwrap();
        assert!(err < OP_THRESHOLD, "{err}");
    }
}
