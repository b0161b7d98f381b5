use orient_core::metrics::{EvalConfig, TpErrors};
use orient_core::synth::generate_dataset;
use orient_core::train::{self, TrainConfig};
use orient_core::{MethodKind, SceneConfig};

fn scene(frames: usize, front_signal: f64, feature_noise: f64) -> SceneConfig {
    SceneConfig {
        frames,
        actors_per_frame: 20,
        front_signal,
        feature_noise,
        ..SceneConfig::default()
    }
}

fn fit(scene: &SceneConfig, cfg: TrainConfig) -> Vec<TpErrors> {
    let data = generate_dataset(scene).unwrap();
    let out = train::train(&cfg, &data.train()).unwrap();
    train::evaluate(&out.params, &data.val(), &EvalConfig::default())
        .unwrap()
        .tp_errors
}

fn flip_aware(epochs: usize) -> TrainConfig {
    TrainConfig {
        method: MethodKind::FlipAware,
        epochs,
        hidden_width: 256,
        batch_size: 32,
        learning_rate: 0.003,
        ..TrainConfig::default()
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

#[test]
fn untrained_model_has_near_random_orientation() {
    for method in [MethodKind::SinCos, MethodKind::FlipAware] {
        let tps = fit(&scene(60, 0.6, 0.3), TrainConfig { method, epochs: 0, ..TrainConfig::default() });
        let foe = mean(tps.iter().map(|e| e.foe_deg));
        assert!((60.0..=120.0).contains(&foe), "{method:?}: mean FOE {foe}");
    }
}

#[test]
fn flip_aware_solves_separable_data() {
    let tps = fit(&scene(200, 1.0, 0.0), flip_aware(60));
    let foe = mean(tps.iter().map(|e| e.foe_deg));
    assert!(foe < 5.0, "mean FOE {foe}");
    assert!(tps.iter().all(|e| e.flip_prob.is_some_and(|p| p <= 0.5)));
}

#[test]
fn static_flip_probability_tracks_front_signal() {
    let static_mean = |fs: f64| {
        let tps = fit(&scene(100, fs, 0.0), flip_aware(30));
        mean(tps.iter().filter(|e| !e.moving).map(|e| e.flip_prob.unwrap()))
    };
    let (ambiguous, clear) = (static_mean(0.0), static_mean(1.0));
    assert!(ambiguous > 0.35, "front_signal 0: mean static flip_prob {ambiguous}");
    assert!(clear < 0.25, "front_signal 1: mean static flip_prob {clear}");
    assert!(ambiguous > clear + 0.15);
}
