//! Analytic gradients of the teacher-forced loss.
//!
//! With `m = p_mdl(t)`, pointer probability `pt = p_ptr(t)` (zero when `t`
//! is not valid), out-of-list mass `o` (zero when disabled) and raw gate
//! `g`, the probability of the target is
//!
//! ```text
//! P = m * (1 - g * (1 - o)) + g * pt
//! ```
//!
//! which is the interpolated output with the pointer renormalised over
//! in-list entries. Only `m` from the base model enters the loss, so a step
//! needs `p_mdl(t)` and nothing else from the frozen base.

use ndarray::{Array1, Array2, ArrayView1};

use super::params::TcpgenParams;
use super::step::{pointer, pointer_output, query, sigmoid};
use crate::error::{Error, Result};
use crate::textproc::PieceId;

/// One teacher-forced step.
#[derive(Clone, Debug)]
pub struct TrainStep<'a> {
    pub h_dec: ArrayView1<'a, f64>,
    pub valid: Vec<PieceId>,
    pub target: PieceId,
    pub p_mdl_target: f64,
}

impl<'a> TrainStep<'a> {
    pub fn from_distribution(h_dec: ArrayView1<'a, f64>, valid: Vec<PieceId>, p_mdl: &[f64], target: PieceId) -> Self {
        TrainStep {
            h_dec,
            valid,
            target,
            p_mdl_target: p_mdl[target.index()],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w: Array2<f64>,
    pub w1: Array1<f64>,
    pub w2: Array1<f64>,
    pub ool_embedding: Array1<f64>,
    /// Present only when the key/value table is trainable.
    pub embeddings: Option<Array2<f64>>,
}

impl Gradients {
    fn zeros(params: &TcpgenParams, embeddings: Option<(usize, usize)>) -> Self {
        let z = TcpgenParams::zeros(params.d_emb(), params.d_dec());
        Gradients {
            w: z.w,
            w1: z.w1,
            w2: z.w2,
            ool_embedding: z.ool_embedding,
            embeddings: embeddings.map(Array2::zeros),
        }
    }

    pub fn named(&self) -> [(&'static str, &[f64]); 4] {
        [
            ("W", self.w.as_slice().expect("standard layout")),
            ("W1", self.w1.as_slice().expect("standard layout")),
            ("W2", self.w2.as_slice().expect("standard layout")),
            ("ool_embedding", self.ool_embedding.as_slice().expect("standard layout")),
        ]
    }

    fn scale(&mut self, k: f64) {
        self.w *= k;
        self.w1 *= k;
        self.w2 *= k;
        self.ool_embedding *= k;
        if let Some(e) = self.embeddings.as_mut() {
            *e *= k;
        }
    }
}

struct Forward {
    q: Array1<f64>,
    probs: Vec<f64>,
    h_ptr: Array1<f64>,
    gate: f64,
    ool_mass: f64,
    ool_pos: Option<usize>,
    target_pos: Option<usize>,
    p_target: f64,
}

fn forward(params: &TcpgenParams, step: &TrainStep, embeddings: &Array2<f64>, ool: PieceId) -> Option<Forward> {
    if step.valid.is_empty() {
        return None;
    }
    let q = query(params, step.h_dec);
    let probs = pointer(params, &q, &step.valid, embeddings, ool);
    let h_ptr = pointer_output(params, &probs, &step.valid, embeddings, ool);
    let gate = sigmoid(params.w1.dot(&step.h_dec) + params.w2.dot(&h_ptr));
    let ool_pos = step.valid.iter().position(|&j| j == ool);
    let target_pos = if step.target == ool {
        None
    } else {
        step.valid.iter().position(|&j| j == step.target)
    };
    let ool_mass = ool_pos.map_or(0.0, |i| probs[i]);
    let pt = target_pos.map_or(0.0, |i| probs[i]);
    let m = step.p_mdl_target;
    let p_target = m * (1.0 - gate * (1.0 - ool_mass)) + gate * pt;
    Some(Forward {
        q,
        probs,
        h_ptr,
        gate,
        ool_mass,
        ool_pos,
        target_pos,
        p_target,
    })
}

/// Probability the biased output assigns to the target of `step`.
pub fn step_target_prob(params: &TcpgenParams, step: &TrainStep, embeddings: &Array2<f64>) -> f64 {
    let ool = PieceId((embeddings.nrows() - 1) as u32);
    forward(params, step, embeddings, ool).map_or(step.p_mdl_target, |f| f.p_target)
}

/// Mean over sequences of the summed negative log-likelihood.
pub fn batch_loss(params: &TcpgenParams, batch: &[Vec<TrainStep>], embeddings: &Array2<f64>) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for seq in batch {
        for (i, step) in seq.iter().enumerate() {
            let p = step_target_prob(params, step, embeddings);
            if p <= 0.0 {
                return Err(Error::ZeroProbability { step: i });
            }
            total -= p.ln();
        }
    }
    Ok(total / batch.len() as f64)
}

/// Loss and gradients of the mean sequence NLL over `batch`.
///
/// The frozen base contributes only constants; no gradient is produced for
/// `h_dec` or `p_mdl`. When `train_embeddings` is set, gradients for the
/// shared key/value rows are accumulated too.
pub fn backward(
    params: &TcpgenParams,
    batch: &[Vec<TrainStep>],
    embeddings: &Array2<f64>,
    train_embeddings: bool,
) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros(params, train_embeddings.then(|| embeddings.dim()));
    if batch.is_empty() {
        return Ok((0.0, grads));
    }
    let ool = PieceId((embeddings.nrows() - 1) as u32);
    let scale = params.scale();
    let mut loss = 0.0;
    let mut g_logit: Vec<f64> = Vec::new();
    let mut w2_dot_v: Vec<f64> = Vec::new();

    for seq in batch {
        for (i, step) in seq.iter().enumerate() {
            let m = step.p_mdl_target;
            let Some(f) = forward(params, step, embeddings, ool) else {
                if m <= 0.0 {
                    return Err(Error::ZeroProbability { step: i });
                }
                loss -= m.ln();
                continue;
            };
            if f.p_target <= 0.0 {
                return Err(Error::ZeroProbability { step: i });
            }
            loss -= f.p_target.ln();

            let d_p = -1.0 / f.p_target;
            let g = f.gate;
            let pt = f.target_pos.map_or(0.0, |k| f.probs[k]);
            let d_gate = d_p * (pt - m * (1.0 - f.ool_mass));
            let d_s = d_gate * g * (1.0 - g);

            // dL/dp_j for each valid entry
            w2_dot_v.clear();
            w2_dot_v.extend(step.valid.iter().map(|&j| {
                if j == ool {
                    params.w2.dot(&params.ool_embedding)
                } else {
                    params.w2.dot(&embeddings.row(j.index()))
                }
            }));
            g_logit.clear();
            g_logit.extend(w2_dot_v.iter().map(|&wv| d_s * wv));
            if let Some(k) = f.target_pos {
                g_logit[k] += d_p * g;
            }
            if let Some(k) = f.ool_pos {
                g_logit[k] += d_p * m * g;
            }
            // softmax backward, in place: dz_j = p_j (G_j - sum_k p_k G_k)
            let mean: f64 = f.probs.iter().zip(&g_logit).map(|(p, gl)| p * gl).sum();
            for (gl, &p) in g_logit.iter_mut().zip(&f.probs) {
                *gl = p * (*gl - mean);
            }

            let mut d_q = Array1::<f64>::zeros(params.d_emb());
            for (k, &j) in step.valid.iter().enumerate() {
                let dz = g_logit[k];
                if j == ool {
                    d_q.scaled_add(dz * scale, &params.ool_embedding);
                    grads.ool_embedding.scaled_add(dz * scale, &f.q);
                    grads.ool_embedding.scaled_add(d_s * f.probs[k], &params.w2);
                } else {
                    let row = embeddings.row(j.index());
                    d_q.scaled_add(dz * scale, &row);
                    if let Some(ge) = grads.embeddings.as_mut() {
                        let mut grow = ge.row_mut(j.index());
                        grow.scaled_add(dz * scale, &f.q);
                        grow.scaled_add(d_s * f.probs[k], &params.w2);
                    }
                }
            }
            grads.w1.scaled_add(d_s, &step.h_dec);
            grads.w2.scaled_add(d_s, &f.h_ptr);
            for (r, (&dq, &qv)) in d_q.iter().zip(&f.q).enumerate() {
                if qv > 0.0 {
                    grads.w.row_mut(r).scaled_add(dq, &step.h_dec);
                }
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv);
    for (name, values) in grads.named() {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(name));
        }
    }
    if let Some(e) = &grads.embeddings {
        if e.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient("embeddings"));
        }
    }
    Ok((loss * inv, grads))
}
