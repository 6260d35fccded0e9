//! Sanity checks that the training stack can solve the synthetic tasks when
//! the learning rate is not the bottleneck. These runs use a higher peak lr
//! than the default recipe; they demonstrate the optimizer, adapters, layer
//! weights, and both heads end-to-end.

use tempfile::tempdir;

use probekit::bank::{synth_bank, EmbeddingBank, LayerKind, LayerSpec, SynthSpec, TaskKind};
use probekit::metrics::evaluate;
use probekit::model::{init_probe, HeadKind, Strategy};
use probekit::rng::Rng;
use probekit::train::{train, RunState, TrainConfig};

fn seq(name: &str, t: usize, f: usize) -> LayerSpec {
    LayerSpec {
        name: name.into(),
        kind: LayerKind::Sequence,
        shape: vec![t, f],
    }
}

fn run(
    train_bank: &EmbeddingBank,
    test_bank: &EmbeddingBank,
    strategy: Strategy,
    head: HeadKind,
    cfg: TrainConfig,
) -> (f64, Option<Vec<f64>>) {
    let mut rng = Rng::from_seed(cfg.seed);
    let model = init_probe(
        &train_bank.manifest().layers,
        strategy,
        head,
        train_bank.manifest().num_classes,
        cfg.dropout_p,
        &mut rng,
    )
    .unwrap();
    let mut run = RunState::new(model, rng, cfg);
    train(train_bank, &mut run).unwrap();
    let rep = evaluate(test_bank, &run.model).unwrap();
    (rep.value, rep.layer_weights)
}

fn banks(dir: &std::path::Path, layers: Vec<LayerSpec>, informative: usize, window: [usize; 2], snr: f64) -> (EmbeddingBank, EmbeddingBank) {
    let train_spec = SynthSpec {
        layers,
        num_samples: 512,
        num_classes: 4,
        task: TaskKind::SingleLabel,
        informative_layer: informative,
        time_window: window,
        snr,
        seed: 7,
        noise_seed: None,
    };
    let test_spec = SynthSpec {
        num_samples: 256,
        noise_seed: Some(7777),
        ..train_spec.clone()
    };
    synth_bank(&train_spec, &dir.join("train")).unwrap();
    synth_bank(&test_spec, &dir.join("test")).unwrap();
    (
        EmbeddingBank::open(&dir.join("train")).unwrap(),
        EmbeddingBank::open(&dir.join("test")).unwrap(),
    )
}

#[test]
fn all_strategy_probe_finds_the_informative_layer_at_higher_lr() {
    let dir = tempdir().unwrap();
    let layers = vec![seq("b0", 16, 8), seq("b1", 16, 8), seq("b2", 16, 8)];
    let (train_bank, test_bank) = banks(dir.path(), layers, 1, [0, 16], 5.0);
    let cfg = TrainConfig {
        peak_lr: 1e-2,
        seed: 7,
        ..TrainConfig::default()
    };
    let (acc, alpha) = run(&train_bank, &test_bank, Strategy::All, HeadKind::Linear, cfg.clone());
    let alpha1 = alpha.unwrap()[1];
    assert!(acc >= 0.90, "all-strategy accuracy {acc}");
    assert!(alpha1 >= 0.5, "alpha on informative layer {alpha1}");

    let (acc_last, _) = run(&train_bank, &test_bank, Strategy::Last, HeadKind::Linear, cfg);
    assert!(acc_last <= 0.55, "last-layer accuracy {acc_last} should stay near chance");
}

#[test]
fn attention_head_beats_linear_on_time_local_signal_at_higher_lr() {
    let dir = tempdir().unwrap();
    let (train_bank, test_bank) = banks(dir.path(), vec![seq("b0", 32, 8)], 0, [2, 6], 3.0);
    let cfg = TrainConfig {
        peak_lr: 1e-2,
        seed: 7,
        ..TrainConfig::default()
    };
    let (acc_attn, _) = run(&train_bank, &test_bank, Strategy::Last, HeadKind::Attention, cfg.clone());
    let (acc_lin, _) = run(&train_bank, &test_bank, Strategy::Last, HeadKind::Linear, cfg);
    assert!(
        acc_attn - acc_lin >= 0.10,
        "attention {acc_attn} vs linear {acc_lin}"
    );
}
