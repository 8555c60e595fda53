use pentrace_core::data::{generate_corpus, make_pair, GlyphClass, TrainingPair};
use pentrace_nn::checkpoint::{load_checkpoint, read_records, save_checkpoint, write_records, Record};
use pentrace_nn::model::init_params;
use pentrace_nn::trainer::{loss_csv, parse_config, per_sample_losses, EpochRecord};
use pentrace_nn::{evaluate_loss, train, CnnConfig, ModelConfig, NnError, ParameterStore, Seq2SeqConfig, TrainConfig};

fn pairs(seed: u64, per_class: usize, classes: &[GlyphClass]) -> Vec<TrainingPair> {
    generate_corpus(seed, per_class, classes)
        .iter()
        .map(|r| make_pair(r).unwrap())
        .collect()
}

fn mini() -> ModelConfig {
    ModelConfig {
        cnn: CnnConfig {
            channels: [4, 4, 8, 8, 8, 8],
        },
        seq: Seq2SeqConfig {
            enc_hidden: 8,
            dec_hidden: 8,
            ..Seq2SeqConfig::default()
        },
    }
}

fn quick(epochs: usize, batch_size: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn defaults() {
    let c = TrainConfig::default();
    assert_eq!((c.epochs, c.batch_size, c.lr, c.l2), (200, 32, 0.001, 1e-4));
    assert!(c.teacher_forcing);
}

#[test]
fn empty_dataset_is_rejected() {
    let data = pairs(1, 1, &[GlyphClass::Line]);
    assert!(matches!(
        train(&mini(), &[], None, &quick(1, 1), None),
        Err(NnError::EmptyDataset)
    ));
    assert!(matches!(
        train(&mini(), &data, Some(&[]), &quick(1, 1), None),
        Err(NnError::EmptyDataset)
    ));
    let store = init_params(&mini(), 0).unwrap();
    assert!(matches!(
        evaluate_loss(&store, &mini(), &[]),
        Err(NnError::EmptyDataset)
    ));
}

#[test]
fn invalid_configs_are_rejected() {
    let data = pairs(1, 1, &[GlyphClass::Line]);
    for cfg in [
        quick(0, 1),
        quick(1, 0),
        TrainConfig {
            lr: -1.0,
            ..quick(1, 1)
        },
    ] {
        assert!(matches!(
            train(&mini(), &data, None, &cfg, None),
            Err(NnError::Config(_))
        ));
    }
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let data = pairs(2, 2, &[GlyphClass::Curve, GlyphClass::Loop]);
    let cfg = TrainConfig { lr: 0.0, ..quick(3, 4) };
    let out = train(&mini(), &data, None, &cfg, None).unwrap();
    let fresh: ParameterStore<f32> = init_params(&mini(), cfg.seed).unwrap();
    for (a, b) in out.final_params.params().iter().zip(fresh.params()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
    // One full batch per epoch, so every step sees the same samples; only
    // the summation order changes with the shuffle.
    assert_eq!(out.step_losses.len(), 3);
    let first = out.step_losses[0];
    assert!(
        out.step_losses.iter().all(|l| (l - first).abs() <= 1e-6 * first),
        "{:?}",
        out.step_losses
    );
}

#[test]
fn same_seed_same_history() {
    let data = pairs(3, 2, &GlyphClass::ALL);
    let val = pairs(4, 1, &GlyphClass::ALL);
    let run = || train(&mini(), &data, Some(&val), &quick(3, 3), None).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.history, b.history);
    assert_eq!(a.step_losses, b.step_losses);
    assert_eq!(loss_csv(&a.history), loss_csv(&b.history));
    for (x, y) in a.final_params.params().iter().zip(b.final_params.params()) {
        assert_eq!(x.value, y.value);
    }
    let c = train(
        &mini(),
        &data,
        Some(&val),
        &TrainConfig { seed: 6, ..quick(3, 3) },
        None,
    )
    .unwrap();
    assert_ne!(a.step_losses, c.step_losses);
}

#[test]
fn history_and_best_epoch() {
    let data = pairs(5, 2, &GlyphClass::ALL);
    let val = pairs(6, 1, &GlyphClass::ALL);
    let out = train(&mini(), &data, Some(&val), &quick(4, 4), None).unwrap();
    assert_eq!(out.history.len(), 4);
    assert_eq!(out.step_losses.len(), 8);
    let best = out
        .history
        .iter()
        .min_by(|a, b| a.val_loss.unwrap().total_cmp(&b.val_loss.unwrap()))
        .unwrap();
    assert_eq!(out.best_epoch, best.epoch);
    assert_eq!(
        evaluate_loss(&out.params, &mini(), &val).unwrap(),
        best.val_loss.unwrap()
    );
}

#[test]
fn max_steps_stops_early() {
    let data = pairs(7, 3, &[GlyphClass::Line]);
    let cfg = TrainConfig {
        max_steps: Some(4),
        ..quick(10, 1)
    };
    let out = train(&mini(), &data, None, &cfg, None).unwrap();
    assert_eq!(out.step_losses.len(), 4);
    assert_eq!(out.history.len(), 2);
}

#[test]
fn loss_csv_format() {
    let h = [
        EpochRecord {
            epoch: 1,
            train_loss: 2.5,
            val_loss: Some(3.25),
        },
        EpochRecord {
            epoch: 2,
            train_loss: 1.0,
            val_loss: None,
        },
    ];
    assert_eq!(
        loss_csv(&h),
        "epoch,train_loss,val_loss\n1,2.500000,3.250000\n2,1.000000,\n"
    );
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let data = pairs(8, 2, &GlyphClass::ALL);
    let model = mini();
    let out = train(&model, &data, None, &quick(2, 4), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ppck");
    save_checkpoint(&path, &model, &out.final_params, Some(&out.adam)).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.config, model);
    for (a, b) in ck.params.params().iter().zip(out.final_params.params()) {
        assert_eq!((&a.name, &a.value, a.decay), (&b.name, &b.value, b.decay));
    }
    assert_eq!(ck.params.buffers(), out.final_params.buffers());
    assert_eq!(ck.adam.as_ref(), Some(&out.adam));
    let before = evaluate_loss(&out.final_params, &model, &data).unwrap();
    let after = evaluate_loss(&ck.params, &ck.config, &data).unwrap();
    assert_eq!(before.to_bits(), after.to_bits());

    save_checkpoint(&path, &model, &out.final_params, None).unwrap();
    assert!(load_checkpoint(&path).unwrap().adam.is_none());
}

#[test]
fn checkpoint_layout() {
    let records = vec![
        Record {
            name: "a".into(),
            dims: vec![2],
            data: vec![1.5, -2.0],
        },
        Record {
            name: "bb".into(),
            dims: vec![1, 1],
            data: vec![0.25],
        },
    ];
    let mut buf = Vec::new();
    write_records(&mut buf, &records).unwrap();
    let mut want = b"PPCK".to_vec();
    want.extend(1u16.to_le_bytes());
    want.extend(1u16.to_le_bytes());
    want.push(b'a');
    want.push(1);
    want.extend(2u32.to_le_bytes());
    want.extend(1.5f32.to_le_bytes());
    want.extend((-2.0f32).to_le_bytes());
    want.extend(2u16.to_le_bytes());
    want.extend(b"bb");
    want.push(2);
    want.extend(1u32.to_le_bytes());
    want.extend(1u32.to_le_bytes());
    want.extend(0.25f32.to_le_bytes());
    assert_eq!(buf, want);
    assert_eq!(read_records(buf.as_slice()).unwrap(), records);
}

#[test]
fn corrupt_checkpoints_are_errors() {
    assert!(matches!(read_records(&b"NOPE"[..]), Err(NnError::Checkpoint(_))));
    let model = mini();
    let store: ParameterStore<f32> = init_params(&model, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ppck");
    save_checkpoint(&path, &model, &store, None).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(load_checkpoint(&path).is_err());
    assert!(matches!(
        load_checkpoint(&dir.path().join("missing.ppck")),
        Err(NnError::Io(_))
    ));
}

#[test]
fn checkpoints_written_at_interval() {
    let data = pairs(9, 1, &GlyphClass::ALL);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_interval: 2,
        ..quick(5, 4)
    };
    train(&mini(), &data, None, &cfg, Some(dir.path())).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["epoch-0002.ppck", "epoch-0004.ppck"]);
}

#[test]
fn divergence_aborts_with_last_good_checkpoint() {
    let data = pairs(10, 1, &GlyphClass::ALL);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        lr: 1e30,
        ..quick(50, 4)
    };
    let err = train(&mini(), &data, None, &cfg, Some(dir.path())).unwrap_err();
    assert!(matches!(err, NnError::NonFiniteLoss { .. }), "{err}");
    let ck = load_checkpoint(&dir.path().join("last_good.ppck")).unwrap();
    assert!(ck
        .params
        .params()
        .iter()
        .all(|p| p.value.data.iter().all(|v| v.is_finite())));
}

#[test]
fn untrained_constant_predictor_has_closed_form_loss() {
    let data = pairs(11, 3, &GlyphClass::ALL);
    let model = mini();
    let mut store: ParameterStore<f32> = init_params(&model, 2).unwrap();
    store.get_mut("head.weight").unwrap().value.data.fill(0.0);
    let scale = model.seq.coord_scale;
    for bias in [[0.0f32, 0.0], [0.5, 0.25]] {
        store.get_mut("head.bias").unwrap().value.data = bias.to_vec();
        let (cx, cy) = (bias[0] as f64 * scale, bias[1] as f64 * scale);
        let want: f64 = data
            .iter()
            .map(|p| {
                p.target
                    .points()
                    .iter()
                    .map(|q| (q.x - cx).abs() + (q.y - cy).abs())
                    .sum::<f64>()
                    / 50.0
            })
            .sum::<f64>()
            / data.len() as f64;
        let got = evaluate_loss(&store, &model, &data).unwrap();
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    }
}

#[test]
fn per_sample_losses_do_not_depend_on_order() {
    let mut data = pairs(12, 10, &GlyphClass::ALL);
    let store: ParameterStore<f32> = init_params(&mini(), 3).unwrap();
    let a = per_sample_losses(&store, &mini(), &data).unwrap();
    data.reverse();
    let mut b = per_sample_losses(&store, &mini(), &data).unwrap();
    b.reverse();
    assert_eq!(a, b);
}

#[test]
fn memorizes_one_sample() {
    let data = pairs(13, 1, &[GlyphClass::Curve]);
    let model = ModelConfig::small();
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 1,
        ..TrainConfig::default()
    };
    let out = train(&model, &data, None, &cfg, None).unwrap();
    assert_eq!(out.step_losses.len(), 500);
    let last = *out.step_losses.last().unwrap();
    assert!(last < 0.5, "final training loss {last}");

    // Window-10 means fall at least 10×.
    let smooth: Vec<f64> = out
        .step_losses
        .chunks(10)
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect();
    assert!(smooth[0] >= 10.0 * smooth[smooth.len() - 1], "{smooth:?}");
}

#[test]
fn memorizes_one_sample_autoregressively() {
    // Teacher forcing fits the one-step-ahead task; scoring the model on its
    // own outputs needs free-running training and a decaying rate.
    let data = pairs(13, 1, &[GlyphClass::Curve]);
    let model = ModelConfig::small();
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 1,
        teacher_forcing: false,
        lr_final: Some(1e-5),
        ..TrainConfig::default()
    };
    let out = train(&model, &data, None, &cfg, None).unwrap();
    let eval = evaluate_loss(&out.final_params, &model, &data).unwrap();
    assert!(eval < 0.5, "autoregressive loss {eval}");
}

#[test]
fn cosine_schedule() {
    let constant = TrainConfig::default();
    assert_eq!(constant.lr_at(0, 100), 0.001);
    assert_eq!(constant.lr_at(99, 100), 0.001);
    let cfg = TrainConfig {
        lr: 0.01,
        lr_final: Some(0.001),
        ..TrainConfig::default()
    };
    assert!((cfg.lr_at(0, 101) - 0.01).abs() < 1e-15);
    assert!((cfg.lr_at(50, 101) - 0.0055).abs() < 1e-15);
    assert!((cfg.lr_at(25, 101) - (0.001 + 0.0045 * (1.0 + std::f64::consts::FRAC_1_SQRT_2))).abs() < 1e-15);
    assert!((cfg.lr_at(100, 101) - 0.001).abs() < 1e-15);
    assert!((cfg.lr_at(500, 101) - 0.001).abs() < 1e-15);
    let mut prev = f64::INFINITY;
    for k in 0..101 {
        let lr = cfg.lr_at(k, 101);
        assert!(lr <= prev && lr >= 0.001);
        prev = lr;
    }
    assert_eq!(cfg.lr_at(0, 1), 0.01);
}

#[test]
fn planned_steps_count_partial_batches() {
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        ..TrainConfig::default()
    };
    assert_eq!(cfg.planned_steps(10), 9);
    assert_eq!(cfg.planned_steps(8), 6);
    let capped = TrainConfig {
        max_steps: Some(5),
        ..cfg
    };
    assert_eq!(capped.planned_steps(10), 5);
    assert_eq!(
        TrainConfig {
            max_steps: Some(50),
            ..cfg
        }
        .planned_steps(10),
        9
    );
}

#[test]
fn annealed_run_ends_at_final_rate() {
    let data = pairs(3, 1, &GlyphClass::ALL);
    let cfg = TrainConfig {
        lr_final: Some(1e-5),
        ..quick(3, 2)
    };
    let out = train(&mini(), &data, None, &cfg, None).unwrap();
    assert_eq!(out.step_losses.len(), 6);
    assert!((out.adam.config.lr - 1e-5).abs() < 1e-18);
    assert!(train(
        &mini(),
        &data,
        None,
        &TrainConfig {
            lr_final: Some(-1.0),
            ..cfg
        },
        None
    )
    .is_err());
}

#[test]
fn config_file() {
    let text = "\
# training
epochs = 12
batch_size = 4   # small
lr = 0.002
l2 = 0
seed = 9
teacher_forcing = off
checkpoint_interval = 3
max_steps = 100
lr_final = 1e-5
model = small
enc_hidden = 32
channels = 4, 4, 8, 8, 16, 16
coord_scale = 1
";
    let (t, m) = parse_config(text).unwrap();
    assert_eq!((t.epochs, t.batch_size, t.lr, t.l2, t.seed), (12, 4, 0.002, 0.0, 9));
    assert!(!t.teacher_forcing);
    assert_eq!(
        (t.checkpoint_interval, t.max_steps, t.lr_final),
        (3, Some(100), Some(1e-5))
    );
    assert_eq!(m.cnn.channels, [4, 4, 8, 8, 16, 16]);
    assert_eq!((m.seq.enc_hidden, m.seq.dec_hidden, m.seq.coord_scale), (32, 64, 1.0));

    let (t, m) = parse_config("").unwrap();
    assert_eq!(t, TrainConfig::default());
    assert_eq!(m, ModelConfig::default());

    for bad in [
        "epochs = x",
        "nope = 1",
        "epochs 3",
        "epochs = 0",
        "channels = 1,2",
        "model = huge",
        "lr = -1",
    ] {
        assert!(matches!(parse_config(bad), Err(NnError::Config(_))), "{bad}");
    }
}
