//! Central finite-difference check of [`backward`] on random small problems.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::grad::{backward, batch_loss, TrainStep};
use super::params::TcpgenParams;
use crate::error::Result;
use crate::seed;
use crate::textproc::PieceId;

/// One teacher-forced step: `(h_dec, valid, target, p_mdl(target))`.
pub type OwnedStep = (Array1<f64>, Vec<PieceId>, PieceId, f64);

/// Owned data for one random problem.
pub struct Problem {
    pub params: TcpgenParams,
    pub embeddings: Array2<f64>,
    pub sequences: Vec<Vec<OwnedStep>>,
}

impl Problem {
    pub fn random(seed: u64) -> Self {
        let mut rng = seed::rng(seed, &[0x6c]);
        let d_emb = rng.random_range(2..=5);
        let d_dec = rng.random_range(2..=5);
        let v = rng.random_range(4..=8);
        let ool = v - 1;
        let mut normal = |scale: f64| scale * rng.sample::<f64, _>(StandardNormal);
        let mut params = TcpgenParams::zeros(d_emb, d_dec);
        params.w.iter_mut().for_each(|x| *x = normal(0.8));
        params.w1.iter_mut().for_each(|x| *x = normal(0.5));
        params.w2.iter_mut().for_each(|x| *x = normal(0.5));
        params.ool_embedding.iter_mut().for_each(|x| *x = normal(0.5));
        let embeddings = Array2::from_shape_simple_fn((v, d_emb), || normal(1.0));

        let n_seq = rng.random_range(1..=3);
        let sequences = (0..n_seq)
            .map(|_| {
                let len = rng.random_range(1..=4);
                (0..len)
                    .map(|_| {
                        let h = Array1::from_shape_simple_fn(d_dec, || 1.5 * rng.sample::<f64, _>(StandardNormal));
                        let mut valid: Vec<PieceId> = (0..ool)
                            .filter(|_| rng.random_bool(0.6))
                            .map(|j| PieceId(j as u32))
                            .collect();
                        if valid.is_empty() || rng.random_bool(0.7) {
                            valid.push(PieceId(ool as u32));
                        }
                        let target = PieceId(rng.random_range(0..ool) as u32);
                        let p = 0.05 + 0.9 * rng.random::<f64>();
                        (h, valid, target, p)
                    })
                    .collect()
            })
            .collect();
        Problem {
            params,
            embeddings,
            sequences,
        }
    }

    pub fn batch(&self) -> Vec<Vec<TrainStep<'_>>> {
        self.sequences
            .iter()
            .map(|seq| {
                seq.iter()
                    .map(|(h, valid, target, p)| TrainStep {
                        h_dec: h.view(),
                        valid: valid.clone(),
                        target: *target,
                        p_mdl_target: *p,
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub configs: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<String>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compare analytic gradients with central differences on `configs`
/// random problems. Entries whose gradient magnitude is at most `1e-8` on
/// both sides are skipped.
pub fn gradcheck(configs: usize, seed: u64, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let mut checked = 0;
    let mut max_rel = 0.0f64;
    let mut worst = None;
    for c in 0..configs {
        let problem = Problem::random(seed::derive(seed, &[c as u64]));
        let batch = problem.batch();
        let (_, grads) = backward(&problem.params, &batch, &problem.embeddings, false)?;
        let analytic: Vec<(&str, Vec<f64>)> = grads.named().iter().map(|(n, g)| (*n, g.to_vec())).collect();
        let mut p = problem.params.clone();
        for (t, (name, grad)) in analytic.iter().enumerate() {
            for (i, &a) in grad.iter().enumerate() {
                let orig = p.named()[t].1[i];
                p.named_mut()[t].1[i] = orig + step;
                let up = batch_loss(&p, &batch, &problem.embeddings)?;
                p.named_mut()[t].1[i] = orig - step;
                let down = batch_loss(&p, &batch, &problem.embeddings)?;
                p.named_mut()[t].1[i] = orig;
                let numeric = (up - down) / (2.0 * step);
                if a.abs().max(numeric.abs()) <= 1e-8 {
                    continue;
                }
                checked += 1;
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
                if rel > max_rel {
                    max_rel = rel;
                    worst = Some(format!("config {c} {name}[{i}]: analytic {a:e}, numeric {numeric:e}"));
                }
            }
        }
    }
    Ok(GradCheckReport {
        configs,
        checked,
        max_rel_error: max_rel,
        worst,
        tolerance,
        passed: max_rel < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_gradients_match_differences() {
        let r = gradcheck(10, 3, 1e-5, 1e-4).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.checked > 50);
    }
}
