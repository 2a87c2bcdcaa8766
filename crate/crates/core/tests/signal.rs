use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use eeglab_core::rng::stream;
use eeglab_core::signal::{
    apply_filter, contaminate_channel_axis, design_bandpass, design_notch, split_blank, trim_segment,
    zscore_per_channel, BlankContext, Phase, Recording, Segment, Trim,
};

fn noise(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream(seed, &[]);
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn recording(samples: Array2<f64>) -> Recording {
    Recording::new(samples, 1000.0, 0, 0).unwrap()
}

fn segment(samples: Array2<f64>) -> Segment {
    Segment {
        samples,
        class_label: Some(0),
        block_label: 0,
        blank_neighbors: None,
        subject_id: 0,
        session_id: 0,
        onset_ms: 0,
        image_id: None,
    }
}

fn close(a: &Array2<f64>, b: &Array2<f64>, rel: f64) -> bool {
    let scale = a.iter().chain(b.iter()).fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= rel * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn filtering_is_linear(seed in 0u64..1000, a in -5.0f64..5.0, b in -5.0f64..5.0, zero in any::<bool>()) {
        let spec = design_bandpass(55.0, 95.0, 1000.0).unwrap();
        let phase = if zero { Phase::Zero } else { Phase::Causal };
        let x = noise(3, 400, seed);
        let y = noise(3, 400, seed + 7919);
        let combo = recording(&x * a + &y * b);
        let lhs = apply_filter(&spec, &combo, phase).unwrap().samples;
        let fx = apply_filter(&spec, &recording(x), phase).unwrap().samples;
        let fy = apply_filter(&spec, &recording(y), phase).unwrap().samples;
        prop_assert!(close(&lhs, &(fx * a + fy * b), 1e-9));
    }

    #[test]
    fn causal_filtering_is_time_invariant(seed in 0u64..1000, shift in 1usize..100) {
        let spec = design_notch(50.0, 30.0, 1000.0).unwrap();
        let x = noise(2, 300, seed);
        let mut delayed = Array2::zeros((2, 300 + shift));
        delayed.slice_mut(ndarray::s![.., shift..]).assign(&x);
        let fx = apply_filter(&spec, &recording(x), Phase::Causal).unwrap().samples;
        let fd = apply_filter(&spec, &recording(delayed), Phase::Causal).unwrap().samples;
        prop_assert!(close(&fd.slice(ndarray::s![.., shift..]).to_owned(), &fx, 1e-9));
    }

    #[test]
    fn zscore_is_idempotent(seed in 0u64..1000, offset in -100.0f64..100.0, gain in 0.01f64..100.0) {
        let seg = segment(noise(4, 440, seed) * gain + offset);
        let (once, _) = zscore_per_channel(&seg);
        let (twice, degenerate) = zscore_per_channel(&once);
        prop_assert!(degenerate.is_empty());
        prop_assert!(close(&once.samples, &twice.samples, 1e-9));
    }

    #[test]
    fn channel_constant_offsets_are_rejected(seed in 0u64..200, offset in -50.0f64..50.0, t in 0usize..64) {
        let spec = design_bandpass(14.0, 70.0, 1000.0).unwrap();
        let x = noise(512, 64, seed);
        let mut shifted = x.clone();
        shifted.column_mut(t).mapv_inplace(|v| v + offset);
        let a = contaminate_channel_axis(&segment(x), &spec).unwrap().samples;
        let b = contaminate_channel_axis(&segment(shifted), &spec).unwrap().samples;
        // channel-axis DC is rejected once the filter transient has decayed,
        // which takes roughly 340 channel positions for this band
        for c in 384..512 {
            prop_assert!((a[(c, t)] - b[(c, t)]).abs() <= 1e-6, "channel {c}: {}", (a[(c, t)] - b[(c, t)]).abs());
        }
    }
}

#[test]
fn trim_and_split_are_pure() {
    let rec = recording(noise(3, 2300, 5));
    let ctx = BlankContext {
        prev_class: 1,
        next_class: 2,
        block_label: 0,
        onset_ms: 100,
    };
    let a = split_blank(&rec, 500, 100, Trim::default(), ctx).unwrap();
    let b = split_blank(&rec, 500, 100, Trim::default(), ctx).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 5);
    let t1 = trim_segment(rec.samples.view(), 20, 440).unwrap();
    let t2 = trim_segment(rec.samples.view(), 20, 440).unwrap();
    assert_eq!(t1, t2);
    assert_eq!(t1.column(0), rec.samples.column(20));
}
