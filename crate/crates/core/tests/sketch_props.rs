use proptest::prelude::*;
use robust_stream::truth::FrequencyVector;
use robust_stream::{F2Params, LinearSketch, SketchSeed, StreamUpdate};

const DOMAIN: u32 = 200;

fn update() -> impl Strategy<Value = StreamUpdate> {
    (1..=DOMAIN, any::<bool>()).prop_map(|(item, ins)| {
        if ins {
            StreamUpdate::insert(item)
        } else {
            StreamUpdate::delete(item)
        }
    })
}

fn shape() -> impl Strategy<Value = F2Params> {
    (1usize..=40, 1usize..=6, 8u32..=32).prop_map(|(d1, d2, w)| F2Params::with_shape(d1, d2, w).unwrap())
}

fn fed(params: F2Params, seed: u64, stream: &[StreamUpdate]) -> LinearSketch {
    let mut s = LinearSketch::new(params, DOMAIN, SketchSeed::new(seed)).unwrap();
    for u in stream {
        s.update(*u).unwrap();
    }
    s
}

/// Counters from the frequency vector directly: `sum_i sign_j(i) f_i`,
/// reduced to `w`-bit two's complement.
fn oracle_counters(sketch: &LinearSketch, freq: &FrequencyVector) -> Vec<i64> {
    let w = sketch.params().width_bits();
    let modulus = 1i64 << w;
    (0..sketch.params().counters())
        .map(|j| {
            let raw: i64 = (1..=DOMAIN)
                .map(|i| sketch.sign(j, i) as i64 * freq.frequency(i))
                .sum();
            let r = raw.rem_euclid(modulus);
            if r >= modulus / 2 {
                r - modulus
            } else {
                r
            }
        })
        .collect()
}

fn oracle_estimate(counters: &[i64], d1: usize) -> f64 {
    let mut means: Vec<f64> = counters
        .chunks(d1)
        .map(|g| g.iter().map(|&c| (c * c) as f64).sum::<f64>() / d1 as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let n = means.len();
    if n % 2 == 1 {
        means[n / 2]
    } else {
        (means[n / 2 - 1] + means[n / 2]) / 2.0
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn merge_equals_concatenation(
        params in shape(),
        seed in any::<u64>(),
        a in prop::collection::vec(update(), 0..300),
        b in prop::collection::vec(update(), 0..300),
    ) {
        let whole: Vec<_> = a.iter().chain(&b).copied().collect();
        let merged = fed(params, seed, &a).merge(&fed(params, seed, &b)).unwrap();
        prop_assert_eq!(merged.vector_segment(), fed(params, seed, &whole).vector_segment());
    }

    #[test]
    fn same_seed_same_stream_same_segment(
        params in shape(),
        seed in any::<u64>(),
        stream in prop::collection::vec(update(), 0..300),
    ) {
        prop_assert_eq!(fed(params, seed, &stream).vector_segment(), fed(params, seed, &stream).vector_segment());
    }

    #[test]
    fn order_does_not_matter(
        params in shape(),
        seed in any::<u64>(),
        stream in prop::collection::vec(update(), 0..200),
    ) {
        let reversed: Vec<_> = stream.iter().rev().copied().collect();
        prop_assert_eq!(fed(params, seed, &stream), fed(params, seed, &reversed));
    }

    #[test]
    fn counters_and_estimate_match_direct_formula(
        params in shape(),
        seed in any::<u64>(),
        stream in prop::collection::vec(update(), 0..300),
    ) {
        let mut sketch = fed(params, seed, &stream);
        let mut freq = FrequencyVector::new(DOMAIN);
        stream.iter().for_each(|u| freq.apply(u));
        let expect = oracle_counters(&sketch, &freq);
        let got: Vec<i64> = sketch.counters().iter().map(|&c| c as i64).collect();
        prop_assert_eq!(&got, &expect);
        let z = sketch.estimate();
        prop_assert_eq!(z, oracle_estimate(&expect, params.group_size()));
    }

    #[test]
    fn bits_rebuild_the_state(
        params in shape(),
        seed in any::<u64>(),
        stream in prop::collection::vec(update(), 0..200),
    ) {
        let source = fed(params, seed, &stream);
        let mut target = LinearSketch::new(params, DOMAIN, SketchSeed::new(seed)).unwrap();
        for i in 0..params.vector_bits() {
            target.set_bit(i, source.bit(i).unwrap()).unwrap();
        }
        prop_assert_eq!(target, source);
    }

    #[test]
    fn queried_flag_does_not_touch_state(
        seed in any::<u64>(),
        stream in prop::collection::vec(update(), 0..100),
    ) {
        let params = F2Params::with_shape(16, 3, 32).unwrap();
        let flagged: Vec<_> = stream.iter().map(|u| u.queried()).collect();
        prop_assert_eq!(fed(params, seed, &stream), fed(params, seed, &flagged));
    }
}

#[test]
fn oblivious_accuracy_over_seeds() {
    let alpha = 0.25;
    let params = F2Params::for_accuracy(alpha).unwrap();
    let stream: Vec<StreamUpdate> = (0..2000u32)
        .map(|i| {
            let item = (i * 37) % DOMAIN + 1;
            if i % 5 == 4 {
                StreamUpdate::delete(item)
            } else {
                StreamUpdate::insert(item)
            }
        })
        .collect();
    let mut freq = FrequencyVector::new(DOMAIN);
    stream.iter().for_each(|u| freq.apply(u));
    let truth = freq.f2() as f64;
    let good = (0..1000u64)
        .filter(|&seed| {
            let z = fed(params, seed, &stream).estimate();
            (z - truth).abs() / truth <= alpha
        })
        .count();
    assert!(good >= 900, "{good} of 1000 seeds within alpha");
}
