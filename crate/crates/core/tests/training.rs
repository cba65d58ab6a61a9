//! Optimizer arithmetic and the training loop's control paths.

use imamba_core::config::ModelConfig;
use imamba_core::model::Model;
use imamba_core::nn::{Init, ParamSpecs, ParamStore};
use imamba_core::train::{evaluate, generate_toy, train, train_with, AdamW, AdamWConfig, TrainConfig};
use imamba_core::{Error, Tensor};

fn single_param(value: f64) -> ParamStore<f64> {
    let mut specs = ParamSpecs::new();
    specs.declare("w".into(), &[3], Init::Zeros);
    ParamStore::from_named(&specs, vec![("w".into(), Tensor::full(&[3], value).unwrap())]).unwrap()
}

#[test]
fn zero_gradient_step_is_pure_decay() {
    let cfg = AdamWConfig { lr: 0.01, weight_decay: 0.3, ..Default::default() };
    let mut params = single_param(2.0);
    let mut opt = AdamW::new(cfg, &params);
    let zero = vec![Tensor::zeros(&[3]).unwrap()];
    for k in 1..=5 {
        opt.step(&mut params, &zero, cfg.lr).unwrap();
        let want = 2.0 * (1.0 - cfg.lr * cfg.weight_decay).powi(k);
        assert!(params.tensors()[0].data().iter().all(|&v| (v - want).abs() < 1e-15), "step {k}");
    }
}

#[test]
fn first_step_moves_by_the_learning_rate() {
    // bias correction makes mhat / sqrt(vhat) = sign(g) on the first step
    let cfg = AdamWConfig { lr: 0.05, weight_decay: 0.0, eps: 0.0, ..Default::default() };
    let mut params = single_param(1.0);
    let mut opt = AdamW::new(cfg, &params);
    let g = vec![Tensor::new(&[3], vec![3.0, -0.2, 1e-3]).unwrap()];
    opt.step(&mut params, &g, cfg.lr).unwrap();
    let got = params.tensors()[0].data();
    for (v, want) in got.iter().zip([0.95, 1.05, 0.95]) {
        assert!((v - want).abs() < 1e-12, "{v} vs {want}");
    }
}

#[test]
fn mismatched_gradient_list_is_rejected() {
    let mut params = single_param(1.0);
    let mut opt = AdamW::new(AdamWConfig::default(), &params);
    assert!(opt.step(&mut params, &[], 1e-3).is_err());
}

#[test]
fn zero_learning_rate_leaves_the_model_unchanged() {
    let data = generate_toy(5, 64).unwrap();
    let mut model = Model::<f32>::new(ModelConfig::toy(4), 1).unwrap();
    let before = model.params.clone();
    let (loss0, _) = evaluate(&model, &data, 32).unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 16, optim: AdamWConfig { lr: 0.0, ..Default::default() }, ..Default::default() };
    let history = train(&mut model, &data, &cfg, |_, _| Ok(())).unwrap();
    assert_eq!(model.params, before);
    assert_eq!(evaluate(&model, &data, 32).unwrap().0, loss0);
    assert!((history[0].loss - history[1].loss).abs() < 1e-5 * loss0);
}

#[test]
fn non_finite_loss_stops_training() {
    let data = generate_toy(5, 8).unwrap();
    let mut model = Model::<f32>::new(ModelConfig::toy(4), 1).unwrap();
    let cfg = TrainConfig { epochs: 3, batch_size: 4, ..Default::default() };
    let mut calls = 0;
    let result = train_with(
        &mut model,
        &data,
        &cfg,
        |m, x, y| {
            calls += 1;
            let (loss, g, logits) = m.loss_and_grads(x, y)?;
            Ok((if calls == 2 { f32::NAN } else { loss }, g, logits))
        },
        |_, _| Ok(()),
    );
    assert!(matches!(result, Err(Error::Diverged(1))), "{result:?}");
}

#[test]
fn stops_once_the_target_accuracy_is_reached() {
    let data = generate_toy(5, 8).unwrap();
    let mut model = Model::<f32>::new(ModelConfig::toy(4), 1).unwrap();
    let cfg = TrainConfig { epochs: 10, batch_size: 4, stop_at_accuracy: Some(1.0), ..Default::default() };
    let history = train_with(
        &mut model,
        &data,
        &cfg,
        |m, x, y| {
            let (loss, g, _) = m.loss_and_grads(x, y)?;
            // logits that always name the true class
            let mut logits = Tensor::zeros(&[y.len(), 4])?;
            for (row, &label) in y.iter().enumerate() {
                logits.data_mut()[row * 4 + label] = 1.0;
            }
            Ok((loss, g, logits))
        },
        |_, _| Ok(()),
    )
    .unwrap();
    assert_eq!(history.len(), 1);
    assert_eq!(history[0].accuracy, 1.0);
    assert_eq!(history[0].steps, 2);
}

#[test]
fn epoch_callback_errors_propagate() {
    let data = generate_toy(5, 4).unwrap();
    let mut model = Model::<f32>::new(ModelConfig::toy(4), 1).unwrap();
    let cfg = TrainConfig { epochs: 5, batch_size: 4, ..Default::default() };
    let mut seen = 0;
    let result = train(&mut model, &data, &cfg, |stats, _| {
        seen = stats.epoch;
        if stats.epoch == 2 {
            Err(Error::Diverged(99))
        } else {
            Ok(())
        }
    });
    assert!(matches!(result, Err(Error::Diverged(99))));
    assert_eq!(seen, 2);
}

#[test]
fn short_run_reduces_the_loss() {
    let data = generate_toy(11, 256).unwrap();
    let mut model = Model::<f32>::new(ModelConfig::toy(4), 2).unwrap();
    let (before, _) = evaluate(&model, &data, 64).unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 32, warmup_steps: 2, ..Default::default() };
    train(&mut model, &data, &cfg, |_, _| Ok(())).unwrap();
    let (after, _) = evaluate(&model, &data, 64).unwrap();
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn training_is_reproducible() {
    let data = generate_toy(12, 32).unwrap();
    let cfg = TrainConfig { epochs: 1, batch_size: 8, ..Default::default() };
    let run = || {
        let mut model = Model::<f32>::new(ModelConfig::toy(4), 3).unwrap();
        let h = train(&mut model, &data, &cfg, |_, _| Ok(())).unwrap();
        (h, model.params)
    };
    assert_eq!(run(), run());
}
