//! Property tests for the module invariants.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use ctxbias::basemodel::{FrozenBase, SyntheticBase, SyntheticBaseConfig};
use ctxbias::biaslists::{error_based_list, utterance_list, WordPool};
use ctxbias::bigram::BigramTable;
use ctxbias::decoder::{beam_search, HypRecord, NBestRecord, SearchOptions};
use ctxbias::rescore::{rerank, LambdaPair};
use ctxbias::score::{align, score_corpus, ScoreOptions};
use ctxbias::synth::{self, SynthConfig, SynthData};
use ctxbias::tcpgen::{tcpgen_step, StepOptions, TcpgenParams};
use ctxbias::textproc::{Corpus, PieceId, Utterance};
use ctxbias::trie::{PrefixTree, TrieCursor};
use ndarray::{Array1, Array2};
use proptest::collection::vec;
use proptest::prelude::*;

struct Fixture {
    data: SynthData,
    base: SyntheticBase,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = SynthConfig {
            n_words: 300,
            n_lm_text: 2000,
            n_train: 100,
            n_dev: 10,
            n_test: 40,
            top_k: 50,
            vocab_size: 120,
            ..Default::default()
        };
        let data = synth::generate(&cfg, 8).unwrap();
        let base = SyntheticBase::new(
            data.vocab.clone(),
            SyntheticBaseConfig {
                d_dec: 8,
                acc_common: 0.8,
                acc_rare: 0.4,
                snr: 0.8,
                seed: 3,
                rare_words: data.rare_words.iter().cloned().collect(),
                ilm: data.ilm.clone(),
            },
        )
        .unwrap();
        Fixture { data, base }
    })
}

fn words_at(idx: &[usize]) -> Vec<String> {
    let lex = &fixture().data.lexicon;
    idx.iter().map(|&i| lex[i % lex.len()].clone()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trie_advance_is_total_and_replays_words(
        list in vec(0usize..300, 0..30),
        history in vec(0u32..1000, 0..25),
    ) {
        let vocab = &fixture().data.vocab;
        let list = words_at(&list);
        let tree = PrefixTree::build(vocab, &list).unwrap();
        for w in &list {
            let mut c = TrieCursor::Root;
            for &p in &vocab.tokenize(w).unwrap() {
                c = tree.advance(c, p);
            }
            match c {
                TrieCursor::Node(i) => prop_assert!(tree.node(i).is_word_end),
                other => prop_assert!(false, "{w} ended at {other:?}"),
            }
        }
        let mut c = TrieCursor::Root;
        for h in history {
            let p = PieceId(h % vocab.n_pieces() as u32);
            let next = tree.advance(c, p);
            prop_assert_eq!(next, tree.advance(c, p));
            if let TrieCursor::Node(i) = next {
                prop_assert!(i < tree.len());
            }
            c = next;
            let valid = tree.valid_set(c, true);
            prop_assert_eq!(*valid.last().unwrap(), vocab.ool());
            prop_assert!(valid[..valid.len() - 1].windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn tcpgen_step_conserves_mass_and_shrinks_the_gate(
        seed in any::<u64>(),
        v in 3usize..10,
        d_emb in 1usize..5,
        d_dec in 1usize..5,
        mask in vec(any::<bool>(), 10),
        with_ool in any::<bool>(),
        scale in 0.1f64..5.0,
    ) {
        let mut params = TcpgenParams::init(d_emb, d_dec, seed);
        params.w.mapv_inplace(|x| x * scale * 10.0);
        params.w1.mapv_inplace(|x| x * scale * 10.0);
        params.ool_embedding.mapv_inplace(|x| x + scale);
        let emb = Array2::from_shape_fn((v, d_emb), |(i, j)| ((i * 7 + j * 3) as f64 * 0.37).sin() * scale);
        let h = Array1::from_shape_fn(d_dec, |j| ((seed % 97) as f64 + j as f64).cos() * scale);
        let mut p_mdl: Vec<f64> = (0..v).map(|j| if j + 1 == v { 0.0 } else { 1.0 + j as f64 }).collect();
        let z: f64 = p_mdl.iter().sum();
        p_mdl.iter_mut().for_each(|x| *x /= z);
        let mut valid: Vec<PieceId> = (0..v - 1).filter(|&j| mask[j]).map(|j| PieceId(j as u32)).collect();
        if with_ool {
            valid.push(PieceId(v as u32 - 1));
        }
        let out = tcpgen_step(&params, h.view(), &valid, &emb, &p_mdl, StepOptions::default()).unwrap();
        prop_assert!((out.p_final.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        for (j, &p) in out.p_ptr.iter().enumerate() {
            if !valid.contains(&PieceId(j as u32)) {
                prop_assert_eq!(p, 0.0);
            }
        }
        prop_assert!(0.0 <= out.p_gen && out.p_gen <= 1.0);
        if with_ool {
            prop_assert!(out.p_gen <= out.gate && out.gate <= 1.0);
        }
        let zero = tcpgen_step(&params, h.view(), &valid, &emb, &p_mdl, StepOptions { gate_override: Some(0.0) }).unwrap();
        prop_assert_eq!(zero.p_final, p_mdl);
    }

    #[test]
    fn rerank_is_a_permutation(
        scores in vec((-20.0f64..0.0, -30.0f64..0.0, -30.0f64..0.0), 1..12),
        li in 0.0f64..=1.0,
        le in 0.0f64..=1.0,
    ) {
        let hyps: Vec<HypRecord> = scores
            .iter()
            .enumerate()
            .map(|(i, &(logp, ilm, ext))| HypRecord {
                text: format!("h{i}"),
                pieces: vec![i as u32],
                logp,
                gen_trace: None,
                ilm: Some(ilm),
                ext: Some(ext),
                total: None,
            })
            .collect();
        let mut sorted = hyps.clone();
        sorted.sort_by(|a, b| b.logp.total_cmp(&a.logp));
        let list = NBestRecord { id: "u".into(), hyps: sorted };
        let out = rerank(&list, LambdaPair::new(li, le).unwrap());
        let key = |l: &NBestRecord| {
            let mut t: Vec<String> = l.hyps.iter().map(|h| h.text.clone()).collect();
            t.sort();
            t
        };
        prop_assert_eq!(key(&out), key(&list));
        prop_assert!(out.hyps.windows(2).all(|w| w[0].total.unwrap() >= w[1].total.unwrap()));
        let same = rerank(&list, LambdaPair::new(0.0, 0.0).unwrap());
        let texts = |l: &NBestRecord| l.hyps.iter().map(|h| h.text.clone()).collect::<Vec<_>>();
        prop_assert_eq!(texts(&same), texts(&list));
    }

    #[test]
    fn utterance_lists_keep_hits_and_disjoint_distractors(
        reference in vec(0usize..300, 1..12),
        n in 0usize..60,
        seed in any::<u64>(),
    ) {
        let f = fixture();
        let pool = WordPool::new(&f.data.rare_words);
        let reference = words_at(&reference);
        let hits: Vec<&String> = reference.iter().filter(|w| pool.contains(w)).collect();
        let n = n.min(pool.len() - hits.iter().collect::<HashSet<_>>().len());
        let list = utterance_list("u", &reference, &pool, n, seed).unwrap();
        let distinct_hits: HashSet<&String> = hits.iter().copied().collect();
        let (head, tail) = list.words.split_at(distinct_hits.len());
        prop_assert_eq!(head.iter().collect::<HashSet<_>>(), distinct_hits);
        prop_assert!(head.iter().all(|w| pool.contains(w) && reference.contains(w)));
        prop_assert_eq!(tail.len(), n);
        prop_assert!(tail.iter().all(|w| pool.contains(w) && !reference.contains(w)));
        prop_assert_eq!(list.words.iter().collect::<HashSet<_>>().len(), list.words.len());
    }

    #[test]
    fn error_list_ignores_utterance_order(
        pairs in vec((vec(0usize..8, 1..6), vec(0usize..8, 0..6)), 1..10),
        rotate in 0usize..10,
    ) {
        let w = |v: &[usize]| v.iter().map(|i| format!("w{i}")).collect::<Vec<_>>();
        let mut aligned: Vec<_> = pairs.iter().map(|(r, h)| align(&w(r), &w(h))).collect();
        let before = error_based_list(&aligned).unwrap();
        let k = rotate % aligned.len();
        aligned.rotate_left(k);
        aligned.reverse();
        prop_assert_eq!(error_based_list(&aligned).unwrap(), before);
    }

    #[test]
    fn list_errors_never_exceed_all_errors(
        pairs in vec((vec(0usize..6, 1..8), vec(0usize..6, 0..8), vec(0usize..6, 0..3)), 1..8),
        empty in any::<bool>(),
    ) {
        let w = |v: &[usize]| v.iter().map(|i| format!("w{i}")).collect::<Vec<_>>();
        let refs = Corpus::new(
            pairs.iter().enumerate().map(|(i, (r, _, _))| Utterance::new(format!("u{i}"), &w(r).join(" "))).collect(),
        ).unwrap();
        let hyps: HashMap<String, Vec<String>> =
            pairs.iter().enumerate().map(|(i, (_, h, _))| (format!("u{i}"), w(h))).collect();
        let lists: HashMap<String, HashSet<String>> = pairs
            .iter()
            .enumerate()
            .map(|(i, (_, _, l))| (format!("u{i}"), if empty { HashSet::new() } else { w(l).into_iter().collect() }))
            .collect();
        let r = score_corpus(&refs, &hyps, Some(&lists), None, ScoreOptions::default()).unwrap();
        let rw = r.r_wer.unwrap();
        prop_assert!(rw.numerator <= r.subs + r.dels + r.ins);
        if empty {
            prop_assert_eq!(rw.rate, None);
            prop_assert!(!rw.infinite);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decoded_scores_replay_as_log_probabilities(utt in 0usize..40, beam in 1usize..6) {
        let f = fixture();
        let u = &f.data.test.utterances[utt];
        let input = f.base.prepare(u).unwrap();
        let opts = SearchOptions { beam, nbest: beam, max_len: 40, trace: false };
        let list = beam_search(&f.base, None, &input, &u.id, &opts).unwrap();
        for h in &list.hypotheses {
            let mut state = f.base.init_state();
            let mut prev = f.base.vocab().bos();
            let mut logp = 0.0;
            for &y in &h.pieces {
                let r = f.base.step(&input, &state, prev).unwrap();
                let next = logp + r.p_mdl[y.index()].ln();
                prop_assert!(next <= logp);
                logp = next;
                state = r.next;
                prev = y;
            }
            prop_assert_eq!(logp, h.logp);
        }
    }

    #[test]
    fn wider_beams_do_not_lower_the_best_score(utt in 0usize..40, beam in 1usize..8) {
        let f = fixture();
        let u = &f.data.test.utterances[utt];
        let input = f.base.prepare(u).unwrap();
        let run = |b: usize| {
            let opts = SearchOptions { beam: b, nbest: 1, max_len: 40, trace: false };
            beam_search(&f.base, None, &input, &u.id, &opts).unwrap().best().unwrap().logp
        };
        prop_assert!(run(beam + 1) >= run(beam), "beam {} -> {}", beam, beam + 1);
    }
}

#[test]
fn ilm_step_ignores_the_utterance() {
    let f = fixture();
    let utts = &f.data.train.utterances;
    for i in 0..100 {
        let (a, b) = (&utts[i % utts.len()], &utts[(i * 7 + 3) % utts.len()]);
        // the internal-LM step sees no utterance input at all; prepare both
        // to make sure the acoustic path does not leak state into it
        let _ = (f.base.prepare(a).unwrap(), f.base.prepare(b).unwrap());
        let prev = PieceId((i % f.data.vocab.n_pieces()) as u32);
        let state = ctxbias::basemodel::BaseState { position: i % 9 };
        let x = f.base.ilm_step(&state, prev).unwrap();
        let y = f.base.ilm_step(&state, prev).unwrap();
        assert_eq!(x, y);
        assert_eq!(x.p_mdl.as_slice(), f.base.config().ilm.row(prev));
    }
}

#[test]
fn bigram_rows_stay_distributions() {
    let f = fixture();
    let t: &BigramTable = &f.data.ilm;
    for p in 0..t.size() {
        let s: f64 = t.row(PieceId(p as u32)).iter().sum();
        assert!((s - 1.0).abs() < 1e-12 || s == 0.0);
    }
}
