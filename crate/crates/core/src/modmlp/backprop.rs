use crate::linalg::{gemm, MatMut, MatRef};
use crate::{Error, Result};

use super::{relu, ModelParams};

/// A set of `(a, b, c)` examples with `c = (a + b) mod p`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub c: Vec<usize>,
}

impl Batch {
    pub fn from_pairs(pairs: &[(usize, usize)], p: usize) -> Batch {
        let mut batch = Batch::default();
        for &(a, b) in pairs {
            batch.a.push(a);
            batch.b.push(b);
            batch.c.push((a + b) % p);
        }
        batch
    }

    pub fn from_triples(triples: &[(usize, usize, usize)]) -> Batch {
        let mut batch = Batch::default();
        for &(a, b, c) in triples {
            batch.a.push(a);
            batch.b.push(b);
            batch.c.push(c);
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    fn validate(&self, p: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::domain("empty batch"));
        }
        for i in 0..self.len() {
            let (a, b, c) = (self.a[i], self.b[i], self.c[i]);
            if a >= p || b >= p {
                return Err(Error::domain(format!("token out of range: ({a}, {b}) with p = {p}")));
            }
            if c != (a + b) % p {
                return Err(Error::domain(format!("label {c} != ({a} + {b}) mod {p}")));
            }
        }
        Ok(())
    }
}

/// Reusable activation buffers for one batch size.
#[derive(Debug, Default)]
pub struct Scratch {
    // p×h first-layer token projections and their gradients.
    proj_a: Vec<f64>,
    proj_b: Vec<f64>,
    // n×h
    h1: Vec<f64>,
    h2: Vec<f64>,
    dz: Vec<f64>,
    // n×p
    logits: Vec<f64>,
}

impl Scratch {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure(&mut self, n: usize, p: usize, h: usize) {
        let resize = |v: &mut Vec<f64>, len: usize| {
            if v.len() != len {
                v.resize(len, 0.0);
            }
        };
        resize(&mut self.proj_a, p * h);
        resize(&mut self.proj_b, p * h);
        resize(&mut self.h1, n * h);
        resize(&mut self.h2, n * h);
        resize(&mut self.dz, n * h);
        resize(&mut self.logits, n * p);
    }
}

/// Forward pass over a batch leaving activations in `s`; returns the mean
/// cross-entropy loss. `s.logits` ends up holding the softmax probabilities.
fn forward_batch(params: &ModelParams, batch: &Batch, s: &mut Scratch) -> f64 {
    let (p, d, h) = (params.p(), params.d(), params.hidden_width());
    let n = batch.len();
    s.ensure(n, p, h);
    let w1 = params.w1.as_slice();
    let e = params.embedding.view();
    gemm(1.0, e, MatRef::new(d, h, &w1[..d * h]), 0.0, MatMut::new(p, h, &mut s.proj_a));
    gemm(1.0, e, MatRef::new(d, h, &w1[d * h..]), 0.0, MatMut::new(p, h, &mut s.proj_b));

    for i in 0..n {
        let pa = &s.proj_a[batch.a[i] * h..][..h];
        let pb = &s.proj_b[batch.b[i] * h..][..h];
        let row = &mut s.h1[i * h..][..h];
        for k in 0..h {
            row[k] = relu(pa[k] + pb[k] + params.b1[k]);
        }
    }

    for i in 0..n {
        s.h2[i * h..][..h].copy_from_slice(&params.b2);
    }
    gemm(1.0, MatRef::new(n, h, &s.h1), params.w2.view(), 1.0, MatMut::new(n, h, &mut s.h2));
    for x in s.h2.iter_mut() {
        *x = relu(*x);
    }

    for i in 0..n {
        s.logits[i * p..][..p].copy_from_slice(&params.b3);
    }
    gemm(1.0, MatRef::new(n, h, &s.h2), params.w3.view(), 1.0, MatMut::new(n, p, &mut s.logits));

    // Neumaier-compensated sum keeps the mean exact to ~1 ulp for large batches.
    let (mut total, mut carry) = (0.0f64, 0.0f64);
    for i in 0..n {
        let row = &mut s.logits[i * p..][..p];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let shifted_target = row[batch.c[i]] - max;
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        // −log softmax[c] = log Σ exp(l − max) − (l_c − max)
        let term = sum.ln() - shifted_target;
        let t = total + term;
        carry += if total.abs() >= term.abs() { (total - t) + term } else { (term - t) + total };
        total = t;
        let inv = 1.0 / sum;
        for x in row.iter_mut() {
            *x *= inv;
        }
    }
    (total + carry) / n as f64
}

/// Mean cross-entropy over `batch` without gradients.
pub fn batch_loss(params: &ModelParams, batch: &Batch, s: &mut Scratch) -> Result<f64> {
    batch.validate(params.p())?;
    Ok(forward_batch(params, batch, s))
}

/// Mean cross-entropy loss and its exact gradient for every parameter.
pub fn loss_and_grads(params: &ModelParams, batch: &Batch) -> Result<(f64, ModelParams)> {
    batch.validate(params.p())?;
    let mut grads = params.zeros_like();
    let mut s = Scratch::new();
    let loss = loss_and_grads_into(params, batch, &mut s, &mut grads, true);
    Ok((loss, grads))
}

/// Allocation-free core of [`loss_and_grads`]. The batch must already be
/// valid. With `embedding_grad = false` the embedding gradient is left at zero.
pub(crate) fn loss_and_grads_into(
    params: &ModelParams,
    batch: &Batch,
    s: &mut Scratch,
    grads: &mut ModelParams,
    embedding_grad: bool,
) -> f64 {
    let (p, d, h) = (params.p(), params.d(), params.hidden_width());
    let n = batch.len();
    let loss = forward_batch(params, batch, s);

    // dL/dlogits = (softmax − onehot)/n, in place.
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let row = &mut s.logits[i * p..][..p];
        row[batch.c[i]] -= 1.0;
        for x in row.iter_mut() {
            *x *= inv_n;
        }
    }
    let g3 = MatRef::new(n, p, &s.logits);
    gemm(1.0, MatRef::new(n, h, &s.h2).t(), g3, 0.0, grads.w3.view_mut());
    column_sums(&s.logits, p, &mut grads.b3);

    // dz2 = (g3 · W3ᵀ) ⊙ [h2 > 0]
    gemm(1.0, g3, params.w3.view().t(), 0.0, MatMut::new(n, h, &mut s.dz));
    for (g, &a) in s.dz.iter_mut().zip(&s.h2) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
    gemm(1.0, MatRef::new(n, h, &s.h1).t(), MatRef::new(n, h, &s.dz), 0.0, grads.w2.view_mut());
    column_sums(&s.dz, h, &mut grads.b2);

    // dz1 = (dz2 · W2ᵀ) ⊙ [h1 > 0], stored in h2 (no longer needed).
    gemm(1.0, MatRef::new(n, h, &s.dz), params.w2.view().t(), 0.0, MatMut::new(n, h, &mut s.h2));
    for (g, &a) in s.h2.iter_mut().zip(&s.h1) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
    column_sums(&s.h2, h, &mut grads.b1);

    // Scatter dz1 rows to the token projections: dP_a, dP_b (p×h).
    s.proj_a.iter_mut().for_each(|x| *x = 0.0);
    s.proj_b.iter_mut().for_each(|x| *x = 0.0);
    for i in 0..n {
        let g = &s.h2[i * h..][..h];
        let ra = &mut s.proj_a[batch.a[i] * h..][..h];
        for k in 0..h {
            ra[k] += g[k];
        }
        let rb = &mut s.proj_b[batch.b[i] * h..][..h];
        for k in 0..h {
            rb[k] += g[k];
        }
    }
    let e = params.embedding.view();
    let (gw1_a, gw1_b) = grads.w1.as_mut_slice().split_at_mut(d * h);
    gemm(1.0, e.t(), MatRef::new(p, h, &s.proj_a), 0.0, MatMut::new(d, h, gw1_a));
    gemm(1.0, e.t(), MatRef::new(p, h, &s.proj_b), 0.0, MatMut::new(d, h, gw1_b));

    if embedding_grad {
        let w1 = params.w1.as_slice();
        let ge = grads.embedding.view_mut();
        gemm(1.0, MatRef::new(p, h, &s.proj_a), MatRef::new(d, h, &w1[..d * h]).t(), 0.0, ge);
        gemm(
            1.0,
            MatRef::new(p, h, &s.proj_b),
            MatRef::new(d, h, &w1[d * h..]).t(),
            1.0,
            grads.embedding.view_mut(),
        );
    } else {
        grads.embedding.as_mut_slice().iter_mut().for_each(|x| *x = 0.0);
    }
    loss
}

fn column_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for row in m.chunks_exact(cols) {
        for (o, x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modmlp::{forward, init_params, InitScheme, ModelConfig};
    use crate::rng::SplitMix64;

    fn all_pairs(p: usize) -> Batch {
        let pairs: Vec<(usize, usize)> = (0..p).flat_map(|a| (0..p).map(move |b| (a, b))).collect();
        Batch::from_pairs(&pairs, p)
    }

    /// Per-example loss straight from the single-input forward pass.
    fn reference_loss(params: &ModelParams, batch: &Batch) -> f64 {
        let mut total = 0.0;
        for i in 0..batch.len() {
            let l = forward(params, batch.a[i], batch.b[i]).unwrap();
            let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + l.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - l[batch.c[i]];
        }
        total / batch.len() as f64
    }

    #[test]
    fn zero_params_give_log_p() {
        let params = ModelParams::zeros(59, 4, 3);
        let (loss, _) = loss_and_grads(&params, &all_pairs(59)).unwrap();
        assert!((loss - 59f64.ln()).abs() < 1e-12);
        assert!((loss - 4.0775).abs() < 1e-4);
    }

    #[test]
    fn batched_loss_matches_single_forward() {
        let params = init_params(&ModelConfig::new(11, 6, 3).with_hidden_width(7)).unwrap();
        let batch = all_pairs(11);
        let (loss, _) = loss_and_grads(&params, &batch).unwrap();
        let want = reference_loss(&params, &batch);
        assert!((loss - want).abs() < 1e-10 * want.max(1.0), "{loss} vs {want}");
    }

    #[test]
    fn empty_batch_and_bad_labels_are_rejected() {
        let params = ModelParams::zeros(5, 2, 2);
        assert!(loss_and_grads(&params, &Batch::default()).unwrap_err().is_domain());
        let bad = Batch::from_triples(&[(1, 2, 4)]);
        assert!(loss_and_grads(&params, &bad).unwrap_err().is_domain());
    }

    #[test]
    fn unused_embedding_rows_get_zero_gradient() {
        let params = init_params(&ModelConfig::new(7, 4, 1).with_hidden_width(5)).unwrap();
        let batch = Batch::from_pairs(&[(0, 1), (1, 3), (3, 0)], 7);
        let (_, g) = loss_and_grads(&params, &batch).unwrap();
        for t in [2, 4, 5, 6] {
            assert!(g.embedding.row(t).iter().all(|&x| x == 0.0));
        }
        assert!(g.embedding.row(0).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = SplitMix64::new(99);
        let params = init_params(&ModelConfig::new(7, 4, 2).with_hidden_width(5).with_init(InitScheme::Unit)).unwrap();
        let mut params = params;
        // Shrink weights so logits are moderate and ReLU kinks are far away.
        for (_, t) in params.tensors_mut() {
            for x in t.iter_mut() {
                *x *= 0.5;
            }
        }
        let batch = all_pairs(7);
        let (_, g) = loss_and_grads(&params, &batch).unwrap();
        let step = 1e-5;
        for ti in 0..7 {
            let len = params.tensors()[ti].1.len();
            for _ in 0..6 {
                let j = rng.below(len as u64) as usize;
                let mut plus = params.clone();
                plus.tensors_mut()[ti].1[j] += step;
                let mut minus = params.clone();
                minus.tensors_mut()[ti].1[j] -= step;
                let fd = (reference_loss(&plus, &batch) - reference_loss(&minus, &batch)) / (2.0 * step);
                let an = g.tensors()[ti].1[j];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(err < 1e-4, "{}[{j}]: analytic {an} vs fd {fd}", crate::modmlp::TENSOR_NAMES[ti]);
            }
        }
    }
}
