//! Statistical behaviour of the synthetic base on the default benchmark.

use ctxbias::basemodel::{FrozenBase, SyntheticBase, SyntheticBaseConfig};
use ctxbias::decoder::{beam_search, SearchOptions};
use ctxbias::synth::{self, SynthConfig, SynthData};

fn base(data: &SynthData, acc_common: f64, acc_rare: f64) -> SyntheticBase {
    SyntheticBase::new(
        data.vocab.clone(),
        SyntheticBaseConfig {
            d_dec: 32,
            acc_common,
            acc_rare,
            snr: 0.8,
            seed: 17,
            rare_words: data.rare_words.iter().cloned().collect(),
            ilm: data.ilm.clone(),
        },
    )
    .unwrap()
}

/// Greedy piece accuracy on (rare, common) positions: `(correct, total)`.
fn greedy_accuracy(base: &SyntheticBase, data: &SynthData) -> ((u64, u64), (u64, u64)) {
    let opts = SearchOptions {
        beam: 1,
        nbest: 1,
        max_len: 64,
        trace: false,
    };
    let (mut rare, mut common) = ((0, 0), (0, 0));
    for u in &data.train.utterances {
        let input = base.prepare(u).unwrap();
        let hyp = beam_search(base, None, &input, &u.id, &opts).unwrap();
        let pieces = &hyp.best().unwrap().pieces;
        for (pos, (&got, &want)) in pieces.iter().zip(input.targets()).enumerate() {
            let slot = if input.is_rare(pos) { &mut rare } else { &mut common };
            slot.0 += u64::from(got == want);
            slot.1 += 1;
        }
    }
    (rare, common)
}

fn rate((k, n): (u64, u64)) -> f64 {
    k as f64 / n as f64
}

#[test]
fn greedy_accuracy_tracks_the_configured_targets() {
    let data = synth::generate(&SynthConfig::default(), 32).unwrap();
    let (rare, common) = greedy_accuracy(&base(&data, 0.9, 0.5), &data);
    assert!(rare.1 > 1000 && common.1 > 1000, "{rare:?} {common:?}");
    assert!((rate(rare) - 0.5).abs() <= 0.05, "rare accuracy {}", rate(rare));
    assert!((rate(common) - 0.9).abs() <= 0.03, "common accuracy {}", rate(common));
}

#[test]
fn equal_accuracies_make_rare_and_common_indistinguishable() {
    let data = synth::generate(&SynthConfig::default(), 32).unwrap();
    let (rare, common) = greedy_accuracy(&base(&data, 0.7, 0.7), &data);
    let (p1, p2) = (rate(rare), rate(common));
    let pooled = (rare.0 + common.0) as f64 / (rare.1 + common.1) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / rare.1 as f64 + 1.0 / common.1 as f64)).sqrt();
    let z = (p1 - p2) / se;
    assert!(z.abs() < 3.0, "z = {z}, rare {p1}, common {p2}");
}
