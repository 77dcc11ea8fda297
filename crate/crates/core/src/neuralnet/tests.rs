use super::*;
use crate::dataio::{build_dataset, DatasetConfig, Denorm};
use crate::losses::{MsSsimConfig, Objective};
use rand::{Rng, SeedableRng};

fn tiny() -> UNetConfig {
    UNetConfig {
        base_channels: 4,
        stages: 1,
        in_size: 12,
        pad_to: 12,
        ..UNetConfig::default()
    }
}

fn random_batch(config: &UNetConfig, n: usize, seed: u64) -> Tensor4<f64> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let p = config.pad_to;
    Tensor4::from_vec([n, 1, p, p], (0..n * p * p).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn mag(values: Array2<f64>) -> ChannelMap {
    ChannelMap::new(values, ChannelKind::Magnitude, Some(Denorm { offset: 0.0, scale: 1.0 })).unwrap()
}

#[test]
fn default_output_shape_and_range() {
    let config = UNetConfig {
        base_channels: 4,
        ..UNetConfig::default()
    };
    let net = NetParams::<f32>::init(&config, 1).unwrap();
    let low = mag(Array2::from_shape_fn((29, 29), |(j, i)| ((j * 29 + i) % 7) as f64 / 7.0));
    let out = restore(&net, &[&low], 3).unwrap();
    assert_eq!(out[0].dim(), (86, 86));
    assert!(out[0].values.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn architecture_matches_the_stage_plan() {
    let net = NetParams::<f32>::init(&UNetConfig { base_channels: 8, ..UNetConfig::default() }, 0).unwrap();
    let shapes = net.stage_shapes();
    assert_eq!(shapes[0], ("enc1".to_string(), [8, 96, 96]));
    assert_eq!(shapes[6], ("enc4".to_string(), [64, 12, 12]));
    assert_eq!(shapes[8], ("bottleneck".to_string(), [128, 6, 6]));
    assert_eq!(shapes[10], ("concat4".to_string(), [128, 12, 12]));
    assert_eq!(shapes.last().unwrap(), &("head".to_string(), [1, 96, 96]));
    let find = |n: &str| net.params.iter().find(|p| p.name == n).unwrap().shape.clone();
    assert_eq!(find("enc1.conv1.weight"), vec![8, 1, 3, 3]);
    assert_eq!(find("enc3.conv2.weight"), vec![32, 32, 3, 3]);
    assert_eq!(find("up4.weight"), vec![128, 64, 2, 2]);
    assert_eq!(find("dec4.conv1.weight"), vec![64, 128, 3, 3]);
    assert_eq!(find("head.weight"), vec![1, 8, 1, 1]);
    // Each stage has two convolutions.
    let convs = net.params.iter().filter(|p| p.name.contains(".conv") && p.name.ends_with("weight")).count();
    assert_eq!(convs, 2 * (4 + 1 + 4));
}

#[test]
fn config_validation() {
    assert!(UNetConfig { pad_to: 90, ..UNetConfig::default() }.validate().is_err());
    assert!(UNetConfig { pad_to: 80, ..UNetConfig::default() }.validate().is_err());
    assert_eq!(UNetConfig::pad_for(86, 4), 96);
    assert_eq!(UNetConfig::pad_for(48, 4), 48);
}

#[test]
fn zero_weights_give_constant_output() {
    let mut net = NetParams::<f64>::init(&tiny(), 3).unwrap();
    for p in net.params.iter_mut().filter(|p| p.name.contains("conv") || p.name.starts_with("head")) {
        p.value.fill(0.0);
    }
    let y = forward_eval(&net, &random_batch(&tiny(), 2, 4)).unwrap();
    assert!(y.data.iter().all(|v| (*v - 0.5).abs() < 1e-15));
}

#[test]
fn eval_output_does_not_depend_on_batch_mates() {
    let config = tiny();
    let net = NetParams::<f64>::init(&config, 5).unwrap();
    let x = random_batch(&config, 3, 6);
    let y = forward_eval(&net, &x).unwrap();
    let single = Tensor4::from_vec([1, 1, 12, 12], x.sample(1).to_vec()).unwrap();
    assert_eq!(forward_eval(&net, &single).unwrap().sample(0), y.sample(1));
    let mut dup = x.clone();
    let s0 = x.sample(0).to_vec();
    dup.sample_mut(1).copy_from_slice(&s0);
    let yd = forward_eval(&net, &dup).unwrap();
    assert_eq!(yd.sample(0), yd.sample(1));
}

#[test]
fn upsampling_properties() {
    let c = mag(Array2::from_elem((29, 29), 0.3));
    assert!(upsample_input(&c, 3, 86).unwrap().values.iter().all(|v| (v - 0.3).abs() < 1e-15));
    let low = mag(Array2::from_shape_fn((29, 29), |(j, i)| ((j * 7 + i * 3) % 11) as f64 / 10.0));
    let up = upsample_input(&low, 3, 86).unwrap();
    for ((j, i), v) in low.values.indexed_iter() {
        assert_eq!(up.values[[3 * j, 3 * i]], *v);
    }
    let ramp = mag(Array2::from_shape_fn((16, 16), |(j, i)| 0.01 * (3 * i) as f64 + 0.005 * (3 * j) as f64));
    let up = upsample_input(&ramp, 3, 48).unwrap();
    for ((j, i), v) in up.values.indexed_iter() {
        assert!((v - (0.01 * i as f64 + 0.005 * j as f64)).abs() < 1e-6);
    }
    assert!(upsample_input(&ramp, 3, 86).is_err());
}

/// Linear readout `Σ r·y` so the audit sees every layer without loss kinks.
fn readout(y: &Tensor4<f64>, r: &[f64]) -> f64 {
    y.data.iter().zip(r).map(|(a, b)| a * b).sum()
}

fn gradient_audit(config: &UNetConfig) -> Vec<(String, f64)> {
    let mut net = NetParams::<f64>::init(config, 11).unwrap();
    for p in net.params.iter_mut().filter(|p| !p.name.ends_with(".weight")) {
        for (i, v) in p.value.iter_mut().enumerate() {
            *v += 0.1 * ((i as f64) * 1.3).sin();
        }
    }
    let x = random_batch(config, 2, 12);
    let r: Vec<f64> = (0..x.data.len()).map(|i| ((i * 31 % 17) as f64 / 8.0) - 1.0).collect();
    let (_, tape) = forward_train(&mut net, &x).unwrap();
    let dout = Tensor4::from_vec(x.shape, r.clone()).unwrap();
    let grads = backward(&net, &tape, &dout).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
    let mut worst = Vec::new();
    for pi in 0..net.params.len() {
        let mut err = 0.0f64;
        for _ in 0..3 {
            let i = rng.random_range(0..net.params[pi].value.len());
            let h = 1e-5;
            let orig = net.params[pi].value[i];
            let mut probe = net.clone();
            probe.params[pi].value[i] = orig + h;
            let up = readout(&forward_train(&mut probe, &x).unwrap().0, &r);
            probe.params[pi].value[i] = orig - h;
            let down = readout(&forward_train(&mut probe, &x).unwrap().0, &r);
            let fd = (up - down) / (2.0 * h);
            let an = grads[pi][i];
            err = err.max((fd - an).abs() / (fd.abs().max(an.abs()).max(1e-6)));
        }
        worst.push((net.params[pi].name.clone(), err));
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    for (name, err) in gradient_audit(&tiny()) {
        assert!(err < 1e-3, "{name}: {err}");
    }
    let two = UNetConfig {
        stages: 2,
        in_size: 14,
        pad_to: 16,
        ..tiny()
    };
    for (name, err) in gradient_audit(&two) {
        assert!(err < 1e-3, "two stages, {name}: {err}");
    }
}

#[test]
fn zero_upstream_gradient_gives_zero_gradients() {
    let config = tiny();
    let mut net = NetParams::<f64>::init(&config, 2).unwrap();
    let x = random_batch(&config, 2, 3);
    let (y, tape) = forward_train(&mut net, &x).unwrap();
    let objective = Objective {
        weights: crate::losses::LossWeights {
            beta_mag: 0.0,
            ..Default::default()
        },
        ..Objective::new(ChannelKind::Magnitude)
    };
    let mut dout = Tensor4::zeros(y.shape);
    for s in 0..2 {
        let pred = crop(y.sample(s), 12, 12);
        let l = objective.eval(&pred, &pred).unwrap();
        uncrop(&l.grad, 12, dout.sample_mut(s));
    }
    let grads = backward(&net, &tape, &dout).unwrap();
    assert!(grads.iter().flatten().all(|g| g.abs() < 1e-9));
}

#[test]
fn adam_first_step_is_lr_times_sign() {
    let config = TrainConfig::full(ChannelKind::Magnitude);
    let mut value = vec![1.0f64, 1.0, 1.0];
    let grad = vec![0.5, -3.0, 0.0];
    let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
    adam_update(&mut value, &grad, &mut m, &mut v, 1, 1e-3, &config);
    assert!((value[0] - (1.0 - 1e-3)).abs() < 1e-10);
    assert!((value[1] - (1.0 + 1e-3)).abs() < 1e-10);
    assert_eq!(value[2], 1.0);
    for t in 2..10 {
        adam_update(&mut value, &[0.0; 3], &mut [0.0; 3], &mut [0.0; 3], t, 1e-3, &config);
    }
    assert!((value[0] - (1.0 - 1e-3)).abs() < 1e-10);
}

#[test]
fn schedule_steps() {
    let m = TrainConfig::full(ChannelKind::Magnitude);
    let p = TrainConfig::full(ChannelKind::Phase);
    assert_eq!(lr_schedule(&m, 0), 1e-3);
    assert!((lr_schedule(&m, 50) - 1e-4).abs() < 1e-18);
    assert!((lr_schedule(&m, 100) - 1e-5).abs() < 1e-18);
    assert_eq!(lr_schedule(&p, 74), 1e-3);
    assert!((lr_schedule(&p, 75) - 1e-4).abs() < 1e-18);
    assert!(TrainConfig { decay_every: 400, ..m }.validate().is_err());
}

#[test]
fn params_round_trip_and_errors() {
    let config = UNetConfig {
        base_channels: 4,
        stages: 2,
        in_size: 16,
        pad_to: 16,
        ..UNetConfig::default()
    };
    let net = NetParams::<f32>::init(&config, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_params(&net, Some(ChannelKind::Phase), dir.path()).unwrap();
    let (back, kind) = load_params(dir.path(), Some(&config)).unwrap();
    assert_eq!(back, net);
    assert_eq!(kind, Some(ChannelKind::Phase));
    let wider = UNetConfig { base_channels: 8, ..config.clone() };
    assert!(matches!(load_params(dir.path(), Some(&wider)), Err(Error::Shape(_))));
    std::fs::write(dir.path().join("manifest.json"), "[1,").unwrap();
    assert!(matches!(load_params(dir.path(), None), Err(Error::Manifest { .. })));
}

#[test]
fn short_training_is_deterministic() {
    let ds = build_dataset(&DatasetConfig {
        n_scenes: 3,
        grid_n: 16,
        seed: 1,
        ..DatasetConfig::default()
    })
    .unwrap();
    let unet = UNetConfig {
        base_channels: 4,
        stages: 2,
        in_size: 16,
        pad_to: 16,
        ..UNetConfig::default()
    };
    let tc = TrainConfig {
        total_epochs: 3,
        decay_every: 2,
        batch_size: 4,
        seed: 4,
        ..TrainConfig::full(ChannelKind::Phase)
    };
    let objective = Objective {
        ms_ssim: MsSsimConfig::single_scale(),
        ..Objective::new(ChannelKind::Phase)
    };
    let a = train(&ds, &tc, &unet, &objective).unwrap();
    let b = train(&ds, &tc, &unet, &objective).unwrap();
    assert_eq!(a.history.epochs.len(), 3);
    assert_eq!(a.history, b.history);
    assert_eq!(a.params, b.params);
    assert!(a.history.to_csv().lines().count() == 4);
}
