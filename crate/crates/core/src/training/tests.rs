use super::*;
use crate::diffcore::GradCheck;
use crate::problems::gen_uniform;

fn tiny_cfg(kind: ProblemKind) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            layers: 1,
            dim: 16,
            heads: 4,
            ff_hidden: 16,
            ..ModelConfig::desk(kind)
        },
        n: 6,
        agents: [2, 3],
        depots: if kind.is_multi_depot() { [2, 3] } else { [1, 1] },
        batch_size: 4,
        epoch_size: 8,
        epochs: 2,
        k: 4,
        lr: 1e-3,
        lr_decay: 1.0,
        seed: 1,
        clip_grad: Some(1.0),
        validation: 4,
    }
}

#[test]
fn baseline_values() {
    assert_eq!(aps_baseline(&[2.0, 4.0]), 3.0);
    for v in [0.1, 1.0 / 3.0, 1.234_567_891] {
        assert_eq!(aps_baseline(&[v; 7]), v);
    }
}

#[test]
fn full_settings() {
    let c = TrainConfig::full(ProblemKind::Mtsp, 49);
    assert_eq!((c.batch_size, c.epochs, c.epoch_size, c.k), (256, 500, 256_000, 60));
    assert_eq!(c.lr_decay, 1.0);
    assert_eq!((c.model.layers, c.model.dim, c.model.heads), (6, 128, 8));
    assert!(c.check().is_ok());
    assert!(TrainConfig { k: 1, ..c.clone() }.check().is_err());
    assert!(TrainConfig { agents: [2, 60], ..c }.check().is_err());
}

#[test]
fn config_rejects_unknown_keys() {
    let mut v = serde_json::to_value(tiny_cfg(ProblemKind::Mtsp)).unwrap();
    assert!(serde_json::from_value::<TrainConfig>(v.clone()).is_ok());
    v["surprise"] = serde_json::json!(1);
    assert!(serde_json::from_value::<TrainConfig>(v).is_err());
}

#[test]
fn identical_rollouts_give_zero_gradient_and_no_update() {
    let cfg = tiny_cfg(ProblemKind::Mtsp);
    let mut model = Model::<f32>::new(cfg.model.clone(), 0).unwrap();
    // one customer per agent: every rollout yields the same objective
    let inst = gen_uniform(ProblemKind::Mtsp, 2, 1, 2, 3).unwrap();
    let batch = vec![(inst, instance_seed(0, 0, 0, 0))];
    let (grads, stats) = batch_gradients(&model, &batch, 5).unwrap();
    assert_eq!(stats.mean_obj, stats.mean_baseline);
    assert!(grads.iter().all(|(_, g)| g.data().iter().all(|&v| v == 0.0)));
    let before = model.store.clone();
    let mut adam = AdamState::new(&model.store, 0.1, 1.0);
    train_step(&mut model, &mut adam, &batch, 5, None).unwrap();
    for (a, b) in before.entries().iter().zip(model.store.entries()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
}

#[test]
fn surrogate_gradient_with_frozen_actions() {
    for kind in ProblemKind::ALL {
        let cfg = tiny_cfg(kind);
        let mut model = Model::<f64>::new(cfg.model.clone(), 2).unwrap();
        let d = if kind.is_multi_depot() { 2 } else { 1 };
        let inst = gen_uniform(kind, 6, d, 2, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let out = aps_loss(&mut g, &model, &inst, 4, &mut rng).unwrap();
        let adv: Vec<f64> = out.trajectories.iter().map(|t| t.objective - out.baseline).collect();
        let trajs = out.trajectories;
        let Model { store, .. } = &mut model;
        let mut store = store.clone();
        let err = GradCheck::new(1e-5)
            .sampled(4, 3)
            .run(&mut store, |g, s| {
                let m = Model::from_store(cfg.model.clone(), s)?;
                forced_surrogate(g, &m, &inst, &trajs, &adv)
            })
            .unwrap();
        assert!(err < 5e-3, "{kind}: {err}");
    }
}

#[test]
fn baseline_is_detached() {
    // the loss built from recorded actions with the same advantages gives
    // the same gradients as the sampled loss
    let cfg = tiny_cfg(ProblemKind::Mtsp);
    let model = Model::<f64>::new(cfg.model.clone(), 4).unwrap();
    let inst = gen_uniform(ProblemKind::Mtsp, 6, 1, 2, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut g = Graph::new();
    let out = aps_loss(&mut g, &model, &inst, 4, &mut rng).unwrap();
    g.backward(out.loss).unwrap();
    let a = g.param_grads().unwrap();
    let adv: Vec<f64> = out.trajectories.iter().map(|t| t.objective - out.baseline).collect();
    let mut g2 = Graph::new();
    let l2 = forced_surrogate(&mut g2, &model, &inst, &out.trajectories, &adv).unwrap();
    g2.backward(l2).unwrap();
    let b = g2.param_grads().unwrap();
    for ((_, x), (_, y)) in a.iter().zip(&b) {
        assert_eq!(x, y);
    }
}

#[test]
fn loss_sign_favours_better_rollouts() {
    let cfg = tiny_cfg(ProblemKind::Mtsp);
    let model = Model::<f64>::new(cfg.model.clone(), 4).unwrap();
    let inst = gen_uniform(ProblemKind::Mtsp, 6, 1, 2, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut g = Graph::new();
    let out = aps_loss(&mut g, &model, &inst, 4, &mut rng).unwrap();
    let best = out
        .trajectories
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective))
        .unwrap()
        .0;
    // d loss / d logp_best = (f_best - b) / K < 0: descending raises logp_best
    assert!(out.trajectories[best].objective < out.baseline);
}

#[test]
fn training_is_reproducible_and_logs_every_epoch() {
    let cfg = tiny_cfg(ProblemKind::Mtsp);
    let run = || {
        let mut model = Model::<f32>::new(cfg.model.clone(), cfg.seed).unwrap();
        let mut adam = AdamState::new(&model.store, cfg.lr, cfg.lr_decay);
        let mut seen = Vec::new();
        let log = train(&cfg, &mut model, &mut adam, 0, |m, _, _| {
            seen.push(m.epoch);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![0, 1]);
        (log, model.store)
    };
    let (a, sa) = run();
    let (b, sb) = run();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.mean_obj, x.mean_baseline, x.val_obj), (y.mean_obj, y.mean_baseline, y.val_obj));
        assert_eq!(x.lr, 1e-3);
    }
    for (x, y) in sa.entries().iter().zip(sb.entries()) {
        assert_eq!(x.value, y.value);
    }
}

#[test]
fn finetune_zero_epochs_keeps_weights_and_records_lr() {
    let mut cfg = tiny_cfg(ProblemKind::Mdvrp);
    let model = Model::<f32>::new(cfg.model.clone(), 0).unwrap();
    let ckpt = Checkpoint {
        config: cfg.model.clone(),
        epoch: 3,
        store: model.store.clone(),
        adam: None,
    };
    cfg.epochs = 0;
    cfg.lr = 1e-5;
    let (m, adam, log) = finetune(&cfg, ckpt.clone(), |_, _, _| Ok(())).unwrap();
    assert!(log.is_empty());
    assert_eq!(adam.lr, 1e-5);
    for (x, y) in m.store.entries().iter().zip(model.store.entries()) {
        assert_eq!(x.value, y.value);
    }
    cfg.epochs = 1;
    cfg.epoch_size = 4;
    let (_, _, log) = finetune(&cfg, ckpt, |_, _, _| Ok(())).unwrap();
    assert_eq!(log[0].lr, 1e-5);
}

#[test]
fn checkpoint_round_trip() {
    let cfg = tiny_cfg(ProblemKind::Fmdvrp);
    let mut model = Model::<f32>::new(cfg.model.clone(), 0).unwrap();
    let mut adam = AdamState::new(&model.store, cfg.lr, cfg.lr_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch: Vec<_> = (0..2)
        .map(|i| (cfg.sample_instance(&mut rng).unwrap(), instance_seed(0, 0, 0, i)))
        .collect();
    train_step(&mut model, &mut adam, &batch, 3, Some(1.0)).unwrap();
    let ckpt = Checkpoint {
        config: cfg.model.clone(),
        epoch: 1,
        store: model.store.clone(),
        adam: Some(adam.clone()),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &ckpt).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.epoch, 1);
    for (a, b) in back.store.entries().iter().zip(model.store.entries()) {
        assert_eq!(a.name, b.name);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value));
    }
    let ba = back.adam.unwrap();
    assert_eq!((ba.step, ba.first, ba.second), (adam.step, adam.first, adam.second));

    let restored = Model::from_store(back.config, &back.store).unwrap();
    let inst = gen_uniform(ProblemKind::Fmdvrp, 6, 2, 2, 9).unwrap();
    assert_eq!(infer(&restored, &inst, false, 2).unwrap(), infer(&model, &inst, false, 2).unwrap());
}

#[test]
fn checkpoint_errors() {
    let cfg = tiny_cfg(ProblemKind::Mtsp);
    let model = Model::<f32>::new(cfg.model.clone(), 0).unwrap();
    let ckpt = Checkpoint {
        config: cfg.model.clone(),
        epoch: 0,
        store: model.store.clone(),
        adam: None,
    };
    let bytes = ckpt.to_bytes().unwrap();

    let mut bad = bytes.clone();
    bad[8] = 9;
    let e = Checkpoint::from_bytes(&bad).unwrap_err().to_string();
    assert!(e.contains("version 9"), "{e}");

    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 1;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Checkpoint(_))));
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(Checkpoint::from_bytes(b"hello").is_err());

    let wide = ModelConfig { dim: 32, ..cfg.model.clone() };
    let e = ckpt.check_compatible(&wide).unwrap_err().to_string();
    assert!(e.contains("d=16") && e.contains("d=32"), "{e}");
}
