use std::path::PathBuf;

use proptest::prelude::*;

use eeglab_core::experiment::{analyze, Analysis, ExperimentConfig, ExperimentDesign, ModelConfig, SynthConfig};
use eeglab_core::models::{build, evaluate, softmax, train, Family, Head, LabelKind, ModelSpec, TrainConfig};
use eeglab_core::pipeline::{synthesize_cohort, CohortSpec, Preprocessing};
use eeglab_core::signal::Phase;
use eeglab_core::synth::{make_splits, Design, NeuralModelParams, Ratios};

proptest! {
    #[test]
    fn softmax_normalizes_and_ignores_shifts(
        logits in prop::collection::vec(-50.0f64..50.0, 2..64),
        shift in -1e3f64..1e3,
    ) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}

fn noisy_split(seed: u64) -> eeglab_core::synth::DatasetSplit {
    let spec = CohortSpec {
        design: Design::Block,
        n_classes: 4,
        images_per_class: 12,
        sessions: 1,
        subjects: 2,
        channels: 4,
        sampling_rate: 1000.0,
        params: NeuralModelParams {
            evoked_amplitude: 0.3,
            ..NeuralModelParams::noise_only(1.0, 0)
        },
        preprocessing: Preprocessing::standard((55.0, 95.0)),
        blanks: false,
    };
    make_splits(synthesize_cohort(&spec, seed).unwrap().stimuli, Ratios::default(), seed).unwrap()
}

fn small_spec() -> ModelSpec {
    ModelSpec {
        head: Head::Fc40,
        ..ModelSpec::new(Family::PooledCnn, 4, 440, 4)
    }
}

#[test]
fn reported_accuracy_comes_from_selected_checkpoint() {
    let mut saw_early_selection = false;
    for seed in 0..6 {
        let split = noisy_split(seed);
        let cfg = TrainConfig {
            epochs: 12,
            seed,
            ..TrainConfig::default()
        };
        let full = train(build(small_spec(), seed).unwrap(), &split, LabelKind::Class, &cfg).unwrap();
        assert_eq!(full.history.len(), 12);
        let best = full.history.iter().map(|r| r.val_acc).fold(f64::NEG_INFINITY, f64::max);
        let first_best = full.history.iter().position(|r| r.val_acc == best).unwrap();
        assert_eq!(full.selected_epoch, Some(first_best));

        // replaying the trajectory up to the selected epoch reproduces the
        // reported network exactly
        let cut = TrainConfig {
            epochs: first_best + 1,
            ..cfg.clone()
        };
        let replay = train(build(small_spec(), seed).unwrap(), &split, LabelKind::Class, &cut).unwrap();
        assert_eq!(replay.selected_epoch, Some(first_best));
        assert_eq!(full.network.params(), replay.network.params());
        assert_eq!(
            evaluate(&full.network, &split.test, LabelKind::Class).unwrap(),
            evaluate(&replay.network, &split.test, LabelKind::Class).unwrap()
        );
        saw_early_selection |= first_best + 1 < cfg.epochs;
    }
    assert!(saw_early_selection, "every run selected its last epoch");
}

#[test]
fn training_is_deterministic() {
    let split = noisy_split(3);
    let cfg = TrainConfig {
        epochs: 4,
        seed: 3,
        ..TrainConfig::default()
    };
    let a = train(build(small_spec(), 1).unwrap(), &split, LabelKind::Class, &cfg).unwrap();
    let b = train(build(small_spec(), 1).unwrap(), &split, LabelKind::Class, &cfg).unwrap();
    assert_eq!(a, b);
}

fn single_channel_drift(family: Family, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        name: "channel-drift".into(),
        design: ExperimentDesign::Block,
        band: None,
        notch: false,
        phase: Phase::Causal,
        contaminate: false,
        model: ModelConfig {
            family,
            head: None,
            encoder_dim: None,
            downsample: None,
        },
        labels: LabelKind::Block,
        analysis: Analysis::PerSubject,
        synth: SynthConfig {
            n_classes: 8,
            images_per_class: 10,
            sessions: 2,
            subjects: 1,
            channels: 8,
            evoked_amplitude: 0.0,
            drift_amplitude: 25.0,
            drift_timescale_s: 20.0,
            drift_channels: Some(vec![3]),
            ..SynthConfig::default()
        },
        train: TrainConfig {
            epochs: 15,
            ..TrainConfig::default()
        },
        seed: Some(seed),
        output: PathBuf::from("unused"),
        jobs: 1,
    }
}

#[test]
fn channelwise_cnn_picks_up_single_channel_drift() {
    let mean = |family| {
        (1..=5)
            .map(|s| analyze(&single_channel_drift(family, s)).unwrap().rows[0].accuracy)
            .sum::<f64>()
            / 5.0
    };
    let channelwise = mean(Family::ChannelwiseCnn);
    let pooled = mean(Family::PooledCnn);
    assert!(channelwise > pooled, "channelwise {channelwise}, pooled {pooled}");
}
