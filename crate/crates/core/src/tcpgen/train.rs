//! Teacher-forced training of the biasing head with the base model frozen.
//!
//! Base-model outputs along each reference are computed once up front; only
//! the biasing lists (and therefore the trees and valid sets) change between
//! epochs.

use std::collections::HashMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::grad::{backward, batch_loss, TrainStep};
use super::optim::{Adam, TriStageSchedule};
use super::params::{Checkpoint, TcpgenParams};
use crate::basemodel::FrozenBase;
use crate::biaslists::{utterance_list, WordPool};
use crate::error::{Error, Result};
use crate::seed;
use crate::textproc::{Corpus, PieceId, Utterance};
use crate::trie::{PrefixTree, TrieCursor};

const STREAM_TRAIN_LIST: u64 = 11;
const STREAM_DEV_LIST: u64 = 12;
const STREAM_SHUFFLE: u64 = 13;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_frac: f64,
    pub hold_frac: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Distractors per training utterance, clamped to what the list offers.
    pub distractors: usize,
    pub ool: bool,
    pub train_embeddings: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            peak_lr: 1e-3,
            warmup_frac: 0.1,
            hold_frac: 0.4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            distractors: 100,
            ool: true,
            train_embeddings: false,
            seed: 17,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-utterance loss over the epoch's batches.
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
    /// Learning rate of the epoch's last update.
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub initial_train_loss: f64,
    pub initial_dev_loss: Option<f64>,
    pub epochs: Vec<EpochLog>,
}

/// Base-model outputs along one reference.
struct Teacher {
    id: String,
    words: Vec<String>,
    targets: Vec<PieceId>,
    h_dec: Array2<f64>,
    p_target: Vec<f64>,
}

fn teacher_force<B: FrozenBase>(base: &B, utt: &Utterance) -> Result<Teacher> {
    let vocab = base.vocab();
    let input = base.prepare(utt)?;
    let mut targets = Vec::new();
    for w in &utt.words {
        targets.extend(vocab.tokenize(w)?);
    }
    targets.push(vocab.eos());
    let mut h_dec = Array2::zeros((targets.len(), base.d_dec()));
    let mut p_target = Vec::with_capacity(targets.len());
    let mut state = base.init_state();
    let mut prev = vocab.bos();
    for (i, &t) in targets.iter().enumerate() {
        let r = base.step(&input, &state, prev)?;
        h_dec.row_mut(i).assign(&r.h_dec);
        p_target.push(r.p_mdl[t.index()]);
        state = r.next;
        prev = t;
    }
    Ok(Teacher {
        id: utt.id.clone(),
        words: utt.words.clone(),
        targets,
        h_dec,
        p_target,
    })
}

/// Walk the reference through the tree, recording the valid set seen
/// before each target.
fn valid_sets(trie: &PrefixTree, targets: &[PieceId], ool: bool) -> Vec<Vec<PieceId>> {
    let mut cursor = TrieCursor::Root;
    targets
        .iter()
        .map(|&t| {
            let valid = trie.valid_set(cursor, ool);
            cursor = trie.advance(cursor, t);
            valid
        })
        .collect()
}

struct ListMaker<'a, B: FrozenBase> {
    base: &'a B,
    pool: WordPool,
    cache: HashMap<String, Vec<PieceId>>,
    distractors: usize,
    ool: bool,
}

impl<B: FrozenBase> ListMaker<'_, B> {
    fn tree(&self, t: &Teacher, seed: u64) -> Result<PrefixTree> {
        let hits = crate::biaslists::reference_hits(&t.words, &self.pool).len();
        let n = self.distractors.min(self.pool.len() - hits);
        let list = utterance_list(&t.id, &t.words, &self.pool, n, seed)?;
        PrefixTree::build_cached(self.base.vocab(), &list.words, &self.cache)
    }

    fn steps<'t>(&self, t: &'t Teacher, seed: u64) -> Result<Vec<TrainStep<'t>>> {
        let trie = self.tree(t, seed)?;
        Ok(valid_sets(&trie, &t.targets, self.ool)
            .into_iter()
            .enumerate()
            .map(|(i, valid)| TrainStep {
                h_dec: t.h_dec.row(i),
                valid,
                target: t.targets[i],
                p_mdl_target: t.p_target[i],
            })
            .collect())
    }
}

fn mean_loss<B: FrozenBase>(
    maker: &ListMaker<B>,
    params: &TcpgenParams,
    embeddings: &Array2<f64>,
    teachers: &[Teacher],
    seed_of: impl Fn(&Teacher) -> u64,
) -> Result<f64> {
    let batch = teachers
        .iter()
        .map(|t| maker.steps(t, seed_of(t)))
        .collect::<Result<Vec<_>>>()?;
    batch_loss(params, &batch, embeddings)
}

/// Train `params` on `train` with per-utterance lists drawn from
/// `full_list`. Only the biasing head (and, when enabled, a copy of the
/// embedding table) is updated; `base` is never touched.
pub fn train<B: FrozenBase>(
    params: TcpgenParams,
    train: &Corpus,
    dev: Option<&Corpus>,
    base: &B,
    full_list: &[String],
    config: &TrainConfig,
) -> Result<(Checkpoint, TrainLog)> {
    if config.epochs == 0 {
        return Ok((Checkpoint { params, embeddings: None }, TrainLog::default()));
    }
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    params.check()?;
    let vocab = base.vocab();
    let mut embeddings = base.embeddings().clone();
    if params.d_emb() != embeddings.ncols() || params.d_dec() != base.d_dec() {
        return Err(Error::Shape("biasing head does not match the base model".into()));
    }

    let cache = full_list
        .iter()
        .map(|w| Ok((w.clone(), vocab.tokenize(w)?)))
        .collect::<Result<HashMap<_, _>>>()?;
    let maker = ListMaker {
        base,
        pool: WordPool::new(full_list),
        cache,
        distractors: config.distractors,
        ool: config.ool,
    };
    let teachers = train
        .utterances
        .iter()
        .map(|u| teacher_force(base, u))
        .collect::<Result<Vec<_>>>()?;
    let dev_teachers = match dev {
        Some(d) => Some(d.utterances.iter().map(|u| teacher_force(base, u)).collect::<Result<Vec<_>>>()?),
        None => None,
    };
    let train_seed = |epoch: usize| move |t: &Teacher| seed::derive(config.seed, &[STREAM_TRAIN_LIST, epoch as u64, seed::key_of(&t.id)]);
    let dev_seed = |t: &Teacher| seed::derive(config.seed, &[STREAM_DEV_LIST, seed::key_of(&t.id)]);

    let mut params = params;
    let mut log = TrainLog {
        initial_train_loss: mean_loss(&maker, &params, &embeddings, &teachers, train_seed(0))?,
        initial_dev_loss: match &dev_teachers {
            Some(d) if !d.is_empty() => Some(mean_loss(&maker, &params, &embeddings, d, dev_seed)?),
            _ => None,
        },
        epochs: Vec::with_capacity(config.epochs),
    };

    let per_epoch = teachers.len().div_ceil(config.batch_size);
    let schedule = TriStageSchedule {
        peak: config.peak_lr,
        total_steps: per_epoch * config.epochs,
        warmup_frac: config.warmup_frac,
        hold_frac: config.hold_frac,
    };
    let mut adam = Adam::new(config.beta1, config.beta2, config.eps);
    let mut global = 0usize;
    for epoch in 0..config.epochs {
        let seed_of = train_seed(epoch);
        let mut order: Vec<usize> = (0..teachers.len()).collect();
        order.shuffle(&mut seed::rng(config.seed, &[STREAM_SHUFFLE, epoch as u64]));
        let mut total = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| maker.steps(&teachers[i], seed_of(&teachers[i])))
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = match backward(&params, &batch, &embeddings, config.train_embeddings) {
                Ok(r) => r,
                Err(Error::ZeroProbability { .. }) => {
                    return Err(Error::Diverged {
                        epoch,
                        step: global,
                        loss: f64::INFINITY,
                    })
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step: global, loss });
            }
            total += loss * chunk.len() as f64;
            lr = schedule.lr(global);

            let grad_slices = grads.named();
            let mut grad_refs: Vec<&[f64]> = grad_slices.iter().map(|(_, g)| *g).collect();
            let mut tensors: Vec<&mut [f64]> = params.named_mut().into_iter().map(|(_, p)| p).collect();
            if let Some(ge) = &grads.embeddings {
                grad_refs.push(ge.as_slice().expect("standard layout"));
                tensors.push(embeddings.as_slice_mut().expect("standard layout"));
            }
            adam.update(&mut tensors, &grad_refs, lr);
            global += 1;
        }
        params.check().map_err(|_| Error::Diverged {
            epoch,
            step: global,
            loss: f64::NAN,
        })?;
        let dev_loss = match &dev_teachers {
            Some(d) if !d.is_empty() => Some(mean_loss(&maker, &params, &embeddings, d, dev_seed)?),
            _ => None,
        };
        log.epochs.push(EpochLog {
            epoch: epoch + 1,
            train_loss: total / teachers.len() as f64,
            dev_loss,
            lr,
        });
    }
    let embeddings = config.train_embeddings.then_some(embeddings);
    Ok((Checkpoint { params, embeddings }, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basemodel::tests::small_base;

    fn setup() -> (crate::basemodel::SyntheticBase, Corpus, Vec<String>) {
        let (base, corpus) = small_base(0.9, 0.5);
        let list = vec!["zorblat".to_string(), "mat".into(), "dog".into(), "cat".into()];
        (base, corpus, list)
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (base, corpus, list) = setup();
        let p = TcpgenParams::init(8, 6, 1);
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (ck, log) = train(p.clone(), &corpus, None, &base, &list, &cfg).unwrap();
        assert_eq!(ck.params, p);
        assert!(log.epochs.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let (base, corpus, list) = setup();
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 2,
            peak_lr: 0.05,
            distractors: 2,
            ..Default::default()
        };
        let p = TcpgenParams::init(8, 6, 1);
        let (a, log) = train(p.clone(), &corpus, Some(&corpus), &base, &list, &cfg).unwrap();
        let (b, _) = train(p, &corpus, Some(&corpus), &base, &list, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(log.epochs.len(), 40);
        assert!(log.epochs.last().unwrap().train_loss < log.initial_train_loss);
        assert!(log.epochs.last().unwrap().dev_loss.unwrap() < log.initial_dev_loss.unwrap());
        assert_eq!(log.epochs.last().unwrap().lr, cfg.peak_lr / 40.0);
    }

    #[test]
    fn embedding_training_returns_a_table() {
        let (base, corpus, list) = setup();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            distractors: 1,
            train_embeddings: true,
            ..Default::default()
        };
        let (ck, _) = train(TcpgenParams::init(8, 6, 1), &corpus, None, &base, &list, &cfg).unwrap();
        let e = ck.embeddings.unwrap();
        assert_eq!(e.dim(), base.embeddings().dim());
        assert_ne!(&e, base.embeddings());
    }
}
