use ndarray::{Array1, Array2, ArrayView1};

use super::params::TcpgenParams;
use crate::error::{Error, Result};
use crate::textproc::PieceId;

/// Knobs for a single forward step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepOptions {
    /// Replace the effective generation probability with a fixed value.
    pub gate_override: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub q: Array1<f64>,
    /// Pointer distribution; index `V-1` holds the out-of-list mass.
    pub p_ptr: Vec<f64>,
    pub h_ptr: Array1<f64>,
    /// Raw sigmoid gate before out-of-list scaling.
    pub gate: f64,
    /// Effective generation probability used for interpolation.
    pub p_gen: f64,
    pub p_final: Vec<f64>,
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn query(params: &TcpgenParams, h_dec: ArrayView1<f64>) -> Array1<f64> {
    params.w.dot(&h_dec).mapv(|x| x.max(0.0))
}

/// Attention over the valid entries: returns their probabilities in the
/// order of `valid`. Keys come from `embeddings`, except `ool` which uses the
/// learned out-of-list embedding.
pub(crate) fn pointer(
    params: &TcpgenParams,
    q: &Array1<f64>,
    valid: &[PieceId],
    embeddings: &Array2<f64>,
    ool: PieceId,
) -> Vec<f64> {
    let scale = params.scale();
    let mut probs: Vec<f64> = valid
        .iter()
        .map(|&j| {
            let k = if j == ool {
                params.ool_embedding.view()
            } else {
                embeddings.row(j.index())
            };
            q.dot(&k) * scale
        })
        .collect();
    let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for z in probs.iter_mut() {
        *z = (*z - max).exp();
        total += *z;
    }
    probs.iter_mut().for_each(|p| *p /= total);
    probs
}

pub(crate) fn pointer_output(
    params: &TcpgenParams,
    probs: &[f64],
    valid: &[PieceId],
    embeddings: &Array2<f64>,
    ool: PieceId,
) -> Array1<f64> {
    let mut h = Array1::zeros(params.d_emb());
    for (&j, &p) in valid.iter().zip(probs) {
        let v = if j == ool {
            params.ool_embedding.view()
        } else {
            embeddings.row(j.index())
        };
        h.scaled_add(p, &v);
    }
    h
}

/// One biased decoding step.
///
/// `p_mdl` and the rows of `embeddings` are indexed by vocabulary id; the
/// last id is the out-of-list symbol. Out-of-list scaling is active exactly
/// when `valid` contains that id.
pub fn tcpgen_step(
    params: &TcpgenParams,
    h_dec: ArrayView1<f64>,
    valid: &[PieceId],
    embeddings: &Array2<f64>,
    p_mdl: &[f64],
    opts: StepOptions,
) -> Result<StepOutput> {
    let v = p_mdl.len();
    if v == 0 || embeddings.nrows() != v {
        return Err(Error::Shape(format!(
            "distribution has {v} entries, embedding table {} rows",
            embeddings.nrows()
        )));
    }
    if h_dec.len() != params.d_dec() || embeddings.ncols() != params.d_emb() {
        return Err(Error::Shape(format!(
            "h_dec {} / embeddings {} vs params {}x{}",
            h_dec.len(),
            embeddings.ncols(),
            params.d_emb(),
            params.d_dec()
        )));
    }
    if let Some(bad) = valid.iter().find(|j| j.index() >= v) {
        return Err(Error::Shape(format!("valid piece {bad} outside vocabulary")));
    }
    if h_dec.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("h_dec".into()));
    }
    if p_mdl.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("p_mdl".into()));
    }
    let ool = PieceId((v - 1) as u32);

    let q = query(params, h_dec);
    let mut p_ptr = vec![0.0; v];
    if valid.is_empty() {
        return Ok(StepOutput {
            q,
            p_ptr,
            h_ptr: Array1::zeros(params.d_emb()),
            gate: 0.0,
            p_gen: 0.0,
            p_final: p_mdl.to_vec(),
        });
    }
    let probs = pointer(params, &q, valid, embeddings, ool);
    for (&j, &p) in valid.iter().zip(&probs) {
        p_ptr[j.index()] = p;
    }
    let h_ptr = pointer_output(params, &probs, valid, embeddings, ool);
    let gate = sigmoid(params.w1.dot(&h_dec) + params.w2.dot(&h_ptr));
    let ool_mass = p_ptr[ool.index()];
    let p_gen = opts.gate_override.unwrap_or(gate * (1.0 - ool_mass));
    let renorm = if ool_mass < 1.0 { 1.0 / (1.0 - ool_mass) } else { 0.0 };

    let mut p_final: Vec<f64> = p_mdl.iter().map(|&m| m * (1.0 - p_gen)).collect();
    for (&j, &p) in valid.iter().zip(&probs) {
        if j != ool {
            p_final[j.index()] += p * renorm * p_gen;
        }
    }
    Ok(StepOutput {
        q,
        p_ptr,
        h_ptr,
        gate,
        p_gen,
        p_final,
    })
}

/// Teacher-forced negative log-likelihood, natural log.
pub fn sequence_nll(outputs: &[StepOutput], targets: &[PieceId]) -> Result<f64> {
    if outputs.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} outputs for {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    let mut nll = 0.0;
    for (step, (out, &t)) in outputs.iter().zip(targets).enumerate() {
        let p = out.p_final.get(t.index()).copied().unwrap_or(0.0);
        if p <= 0.0 {
            return Err(Error::ZeroProbability { step });
        }
        nll -= p.ln();
    }
    Ok(nll)
}
