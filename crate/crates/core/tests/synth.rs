use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use ndarray::Array2;

use eeglab_core::experiment::{analyze, Analysis, ExperimentConfig, ExperimentDesign, ModelConfig, SynthConfig};
use eeglab_core::models::{Family, LabelKind, TrainConfig};
use eeglab_core::pipeline::{synthesize_cohort, CohortSpec, Preprocessing};
use eeglab_core::regression::NearestClassMean;
use eeglab_core::signal::{Phase, Segment};
use eeglab_core::synth::{generate_schedule, make_splits, Design, NeuralModelParams, Ratios};

fn flatten(segs: &[&Segment]) -> Array2<f64> {
    let width = segs[0].samples.len();
    let mut x = Array2::zeros((segs.len(), width));
    for (mut row, s) in x.rows_mut().into_iter().zip(segs) {
        row.iter_mut().zip(s.samples.iter()).for_each(|(r, v)| *r = *v);
    }
    x
}

fn classes(segs: &[&Segment]) -> Vec<usize> {
    segs.iter().map(|s| s.class_label.unwrap() as usize).collect()
}

fn cohort(design: Design, classes: usize, ipc: usize, params: NeuralModelParams) -> CohortSpec {
    CohortSpec {
        design,
        n_classes: classes,
        images_per_class: ipc,
        sessions: 2,
        subjects: 1,
        channels: 8,
        sampling_rate: 1000.0,
        params,
        preprocessing: Preprocessing::standard((55.0, 95.0)),
        blanks: false,
    }
}

#[test]
fn schedule_durations_match_geometry() {
    for seed in 0..5 {
        let block = generate_schedule(Design::Block, 40, 50, 4, seed).unwrap();
        let stim: u64 = block.stimuli().map(|e| e.duration_ms).sum();
        assert_eq!(stim, block.stimuli().count() as u64 * 500);
        for s in 0..4 {
            let d = block.session_duration_ms(s);
            assert!((330_000..=350_000).contains(&d), "session {s}: {d} ms");
        }
        let rapid = generate_schedule(Design::Rapid, 40, 25, 1, seed).unwrap();
        let stim: u64 = rapid.stimuli().map(|e| e.duration_ms).sum();
        assert_eq!(stim, 1000 * 500);
    }
}

#[test]
fn rapid_blocks_mix_classes() {
    for seed in 0..20 {
        let sched = generate_schedule(Design::Rapid, 40, 25, 1, seed).unwrap();
        let mut per_block: BTreeMap<u32, BTreeSet<u16>> = BTreeMap::new();
        for e in sched.stimuli() {
            per_block.entry(e.block_index).or_default().insert(e.class_id.unwrap());
        }
        assert_eq!(per_block.len(), 20);
        assert!(per_block.values().all(|c| c.len() >= 2));
    }
}

#[test]
fn splits_keep_images_together_and_stratified() {
    let params = NeuralModelParams::noise_only(1.0, 0);
    let mut spec = cohort(Design::Block, 6, 13, params);
    spec.subjects = 3;
    spec.channels = 2;
    let segs = synthesize_cohort(&spec, 3).unwrap().stimuli;
    for seed in 0..10 {
        let split = make_splits(segs.clone(), Ratios::default(), seed).unwrap();
        let parts = [&split.train, &split.val, &split.test];
        let ids: Vec<BTreeSet<u32>> = parts.iter().map(|p| p.iter().map(|s| s.image_id.unwrap()).collect()).collect();
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(ids[i].is_disjoint(&ids[j]));
            }
        }
        for (part, ratio) in parts.iter().zip([0.8, 0.1, 0.1]) {
            let mut per_class: BTreeMap<u16, BTreeSet<u32>> = BTreeMap::new();
            for s in part.iter() {
                per_class.entry(s.class_label.unwrap()).or_default().insert(s.image_id.unwrap());
            }
            for (c, imgs) in per_class {
                let ideal = ratio * 13.0;
                assert!((imgs.len() as f64 - ideal).abs() <= 1.0, "class {c}: {} vs {ideal}", imgs.len());
            }
        }
        // every subject's copy of an image is in the same part
        assert_eq!(split.train.len() % 3, 0);
    }
}

#[test]
fn separable_signal_beats_chance_tenfold_with_nearest_mean() {
    let params = NeuralModelParams {
        evoked_amplitude: 2.0,
        ..NeuralModelParams::noise_only(1.0, 0)
    };
    let segs = synthesize_cohort(&cohort(Design::Block, 20, 10, params), 8).unwrap().stimuli;
    let split = make_splits(segs, Ratios::default(), 1).unwrap();
    let train: Vec<&Segment> = split.train.iter().collect();
    let test: Vec<&Segment> = split.test.iter().collect();
    let ncm = NearestClassMean::fit(flatten(&train).view(), &classes(&train)).unwrap();
    let acc = ncm.accuracy(flatten(&test).view(), &classes(&test));
    assert!(acc >= 10.0 / 20.0, "accuracy {acc}");
}

#[test]
fn vigilance_decrement_lowers_late_accuracy() {
    let mut early = 0.0;
    let mut late = 0.0;
    for seed in 1..=5 {
        let params = NeuralModelParams {
            evoked_amplitude: 0.6,
            vigilance_tau_s: Some(120.0),
            ..NeuralModelParams::noise_only(1.0, 0)
        };
        let segs = synthesize_cohort(&cohort(Design::Rapid, 10, 40, params), seed).unwrap().stimuli;
        let end = segs.iter().map(|s| s.onset_ms).max().unwrap() as f64;
        let split = make_splits(segs, Ratios { train: 0.6, val: 0.1, test: 0.3 }, seed).unwrap();
        let train: Vec<&Segment> = split.train.iter().collect();
        let ncm = NearestClassMean::fit(flatten(&train).view(), &classes(&train)).unwrap();
        let quartile = |q: usize| {
            let segs: Vec<&Segment> = split
                .test
                .iter()
                .filter(|s| ((s.onset_ms as f64 / end * 4.0) as usize).min(3) == q)
                .collect();
            ncm.accuracy(flatten(&segs).view(), &classes(&segs))
        };
        early += quartile(0) / 5.0;
        late += quartile(3) / 5.0;
    }
    assert!(late <= early, "first quartile {early}, last quartile {late}");
}

fn leakage_config(drift: f64, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        name: "drift".into(),
        design: ExperimentDesign::Block,
        band: None,
        notch: false,
        phase: Phase::Causal,
        contaminate: false,
        model: ModelConfig {
            family: Family::ChannelwiseCnn,
            head: None,
            encoder_dim: None,
            downsample: None,
        },
        labels: LabelKind::Block,
        analysis: Analysis::Pooled,
        synth: SynthConfig {
            n_classes: 8,
            images_per_class: 10,
            sessions: 2,
            subjects: 2,
            channels: 8,
            evoked_amplitude: 0.0,
            drift_amplitude: drift,
            drift_timescale_s: 20.0,
            ..SynthConfig::default()
        },
        train: TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        },
        seed: Some(seed),
        output: PathBuf::from("unused"),
        jobs: 1,
    }
}

#[test]
fn block_leakage_grows_with_drift() {
    let grid = [0.0, 5.0, 25.0];
    let means: Vec<f64> = grid
        .iter()
        .map(|&d| (1..=5).map(|s| analyze(&leakage_config(d, s)).unwrap().rows[0].accuracy).sum::<f64>() / 5.0)
        .collect();
    assert!(means.windows(2).all(|w| w[1] >= w[0]), "{means:?}");
}
