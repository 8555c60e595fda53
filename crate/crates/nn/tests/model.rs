use pentrace_core::data::{generate_glyph, make_pair, GlyphClass, GlyphSpec};
use pentrace_core::{PenTrajectory, RasterImage};
use pentrace_nn::gradcheck::{check_gradients, GradCheck};
use pentrace_nn::model::{
    decode, encode, extract_feature_sequence, forward, image_batch, init_params, l1_loss, predict, target_inputs,
    trajectory_l1, Decoding,
};
use pentrace_nn::{CnnConfig, Graph, Mode, ModelConfig, ParameterStore, Seq2SeqConfig, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(d: usize, enc: usize, dec: usize, layers: usize) -> ModelConfig {
    ModelConfig {
        cnn: CnnConfig {
            channels: [2, 2, 3, 3, 4, d],
        },
        seq: Seq2SeqConfig {
            enc_hidden: enc,
            dec_hidden: dec,
            layers,
            ..Seq2SeqConfig::default()
        },
    }
}

fn glyph(class: GlyphClass, seed: u64) -> pentrace_core::data::TrainingPair {
    make_pair(&generate_glyph(&GlyphSpec::new(class, seed))).unwrap()
}

fn randomize(store: &mut ParameterStore<f64>, seed: u64, biases: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in store.params_mut() {
        if p.decay || biases {
            p.value.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    }
}

fn zero_all(store: &mut ParameterStore<f64>) {
    for p in store.params_mut() {
        p.value.data.iter_mut().for_each(|v| *v = 0.0);
    }
}

fn row(g: &mut Graph<'_, f64>, v: &[f64]) -> Var {
    g.input(Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()).unwrap()
}

#[test]
fn paper_parameter_count() {
    let conv = [(1, 32), (32, 64), (64, 128), (128, 128), (128, 256), (256, 256)]
        .iter()
        .map(|(i, o)| 9 * i * o + o)
        .sum::<usize>();
    assert_eq!(conv, 1_125_504);
    let bn = 2 * 128 + 2 * 128;
    let lstm = |d: usize, h: usize| 4 * h * (d + h + 1);
    let enc = 2 * lstm(256, 512) + 2 * lstm(1024, 512);
    assert_eq!(enc, 3_149_824 + 6_295_552);
    let bridge = 2 * 2 * (512 * 1024 + 512);
    let dec = lstm(2, 512) + lstm(512, 512);
    let head = 2 * 512 + 2;
    let total = conv + bn + enc + bridge + dec + head;
    assert_eq!(total, 15_825_538);

    let cfg = ModelConfig::default();
    assert_eq!(cfg.parameter_count(), total);
    let store: ParameterStore<f32> = init_params(&cfg, 0).unwrap();
    assert_eq!(store.num_parameters(), total);
}

#[test]
fn parameter_count_of_reduced_configs() {
    for cfg in [ModelConfig::small(), tiny(5, 3, 4, 1), tiny(4, 2, 3, 3)] {
        let store: ParameterStore<f32> = init_params(&cfg, 1).unwrap();
        assert_eq!(store.num_parameters(), cfg.parameter_count());
    }
}

#[test]
fn feature_sequence_shape() {
    let cfg = ModelConfig::default();
    let store: ParameterStore<f32> = init_params(&cfg, 0).unwrap();
    let mut g = Graph::new(&store, Mode::Eval, false);
    let img = glyph(GlyphClass::Curve, 3).image;
    let x = g.input(image_batch(&[&img]).unwrap()).unwrap();
    let xs = extract_feature_sequence(&mut g, &cfg, x).unwrap();
    assert_eq!(xs.len(), 16);
    for v in xs {
        assert_eq!(g.shape(v), [1, 256]);
    }
    assert_eq!(cfg.cnn.output_shape(64, 64), (256, 1, 16));
}

#[test]
fn blank_image_gives_zero_features() {
    let cfg = ModelConfig::small();
    let store: ParameterStore<f64> = init_params(&cfg, 2).unwrap();
    for mode in [Mode::Eval, Mode::Train] {
        let mut g = Graph::new(&store, mode, false);
        let x = g.input(image_batch(&[&RasterImage::new(64, 64)]).unwrap()).unwrap();
        for v in extract_feature_sequence(&mut g, &cfg, x).unwrap() {
            assert!(g.value(v).iter().all(|&f| f == 0.0));
        }
    }
}

#[test]
fn four_pixel_shift_moves_features_one_column() {
    let cfg = ModelConfig::small();
    let store: ParameterStore<f64> = init_params(&cfg, 3).unwrap();
    let features = |col: usize| {
        let mut img = RasterImage::new(64, 64);
        img.set(col, 30, true);
        img.set(col + 1, 30, true);
        img.set(col, 31, true);
        let mut g = Graph::new(&store, Mode::Eval, false);
        let x = g.input(image_batch(&[&img]).unwrap()).unwrap();
        let xs = extract_feature_sequence(&mut g, &cfg, x).unwrap();
        xs.iter().map(|v| g.value(*v).to_vec()).collect::<Vec<_>>()
    };
    let a = features(24);
    let b = features(28);
    assert!(a.iter().any(|c| c.iter().any(|&v| v != 0.0)));
    for j in 0..15 {
        assert_eq!(a[j], b[j + 1], "column {j}");
    }
}

#[test]
fn zero_weights_encode_to_zero() {
    let cfg = tiny(3, 2, 3, 2);
    let mut store: ParameterStore<f64> = init_params(&cfg, 4).unwrap();
    zero_all(&mut store);
    let mut g = Graph::new(&store, Mode::Eval, false);
    let xs: Vec<Var> = (0..4).map(|_| row(&mut g, &[0.0; 3])).collect();
    let state = encode(&mut g, &cfg, &xs).unwrap();
    assert_eq!(state.layers.len(), 2);
    for (h, c) in state.layers {
        assert_eq!(g.shape(h), [1, 3]);
        assert!(g.value(h).iter().chain(g.value(c)).all(|&v| v == 0.0));
    }
}

#[test]
fn reversing_input_swaps_directions() {
    // One layer, tied directions. A bridge reading only the forward half on X
    // must agree with one reading only the backward half on reversed X.
    let cfg = tiny(3, 2, 2, 1);
    let mut store: ParameterStore<f64> = init_params(&cfg, 5).unwrap();
    randomize(&mut store, 6, true);
    for part in ["w_ih", "w_hh", "bias"] {
        let fwd = store.get(&format!("enc.l1.fwd.{part}")).unwrap().value.clone();
        store.get_mut(&format!("enc.l1.bwd.{part}")).unwrap().value = fwd;
    }
    let select = |store: &ParameterStore<f64>, half: usize| {
        let mut s = store.clone();
        for part in ["h", "c"] {
            let w = &mut s.get_mut(&format!("bridge.l1.{part}.weight")).unwrap().value;
            let (rows, cols) = (w.shape[0], w.shape[1]);
            for r in 0..rows {
                for c in 0..cols {
                    w.data[r * cols + c] = if c / (cols / 2) == half && c % (cols / 2) == r {
                        1.0
                    } else {
                        0.0
                    };
                }
            }
            s.get_mut(&format!("bridge.l1.{part}.bias"))
                .unwrap()
                .value
                .data
                .fill(0.0);
        }
        s
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let seq: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let run = |s: &ParameterStore<f64>, reverse: bool| {
        let mut g = Graph::new(s, Mode::Eval, false);
        let mut xs: Vec<Var> = seq.iter().map(|v| row(&mut g, v)).collect();
        if reverse {
            xs.reverse();
        }
        let st = encode(&mut g, &cfg, &xs).unwrap();
        let (h, c) = st.layers[0];
        (g.value(h).to_vec(), g.value(c).to_vec())
    };
    let fwd_on_x = run(&select(&store, 0), false);
    let bwd_on_rev = run(&select(&store, 1), true);
    assert_eq!(fwd_on_x, bwd_on_rev);
    assert_ne!(fwd_on_x, run(&select(&store, 1), false));
}

/// Scalar LSTM over a sequence with weights read from the store.
fn lstm_unroll(store: &ParameterStore<f64>, prefix: &str, seq: &[Vec<f64>], hd: usize) -> Vec<Vec<f64>> {
    let w_ih = &store.get(&format!("{prefix}.w_ih")).unwrap().value;
    let w_hh = &store.get(&format!("{prefix}.w_hh")).unwrap().value.data;
    let bias = &store.get(&format!("{prefix}.bias")).unwrap().value.data;
    let d = w_ih.shape[1];
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
    let mut out = Vec::new();
    for x in seq {
        let pre = |r: usize, h: &[f64]| {
            bias[r]
                + (0..d).map(|k| w_ih.data[r * d + k] * x[k]).sum::<f64>()
                + (0..hd).map(|k| w_hh[r * hd + k] * h[k]).sum::<f64>()
        };
        let mut hn = vec![0.0; hd];
        for j in 0..hd {
            let i = sig(pre(j, &h));
            let f = sig(pre(hd + j, &h));
            let g = pre(2 * hd + j, &h).tanh();
            let o = sig(pre(3 * hd + j, &h));
            c[j] = f * c[j] + i * g;
            hn[j] = o * c[j].tanh();
        }
        h = hn;
        out.push(h.clone());
    }
    out
}

fn bridge(store: &ParameterStore<f64>, name: &str, v: &[f64]) -> Vec<f64> {
    let w = &store.get(&format!("{name}.weight")).unwrap().value;
    let b = &store.get(&format!("{name}.bias")).unwrap().value.data;
    let cols = w.shape[1];
    (0..w.shape[0])
        .map(|r| b[r] + (0..cols).map(|k| w.data[r * cols + k] * v[k]).sum::<f64>())
        .collect()
}

#[test]
fn encoder_matches_scalar_unroll() {
    let (d, eh, dh) = (3, 2, 3);
    let cfg = tiny(d, eh, dh, 2);
    let mut store: ParameterStore<f64> = init_params(&cfg, 8).unwrap();
    randomize(&mut store, 9, true);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let seq: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();

    let mut g = Graph::new(&store, Mode::Eval, false);
    let xs: Vec<Var> = seq.iter().map(|v| row(&mut g, v)).collect();
    let state = encode(&mut g, &cfg, &xs).unwrap();

    let mut layer_in = seq.clone();
    for l in 1..=2 {
        let fwd = lstm_unroll(&store, &format!("enc.l{l}.fwd"), &layer_in, eh);
        let rev: Vec<Vec<f64>> = layer_in.iter().rev().cloned().collect();
        let mut bwd = lstm_unroll(&store, &format!("enc.l{l}.bwd"), &rev, eh);
        bwd.reverse();
        let last = [fwd[fwd.len() - 1].clone(), bwd[0].clone()].concat();
        let h = bridge(&store, &format!("bridge.l{l}.h"), &last);
        let c = bridge(&store, &format!("bridge.l{l}.c"), &last);
        let (hv, cv) = state.layers[l - 1];
        for (got, want) in g.value(hv).iter().zip(&h).chain(g.value(cv).iter().zip(&c)) {
            assert!((got - want).abs() < 1e-5, "layer {l}: {got} vs {want}");
        }
        layer_in = fwd
            .iter()
            .zip(&bwd)
            .map(|(f, b)| [f.clone(), b.clone()].concat())
            .collect();
    }
}

#[test]
fn zero_weights_decode_to_output_bias() {
    for (scale, bias) in [(1.0, [7.0, 9.0]), (64.0, [7.0 / 64.0, 9.0 / 64.0])] {
        let mut cfg = tiny(3, 2, 3, 2);
        cfg.seq.coord_scale = scale;
        let mut store: ParameterStore<f64> = init_params(&cfg, 11).unwrap();
        zero_all(&mut store);
        store.get_mut("head.bias").unwrap().value.data = bias.to_vec();
        let trajs = predict(&store, &cfg, &[&glyph(GlyphClass::Loop, 1).image]).unwrap();
        assert_eq!(trajs[0].len(), 50);
        for p in trajs[0].points() {
            assert!((p.x - 7.0).abs() < 1e-12 && (p.y - 9.0).abs() < 1e-12, "{p:?}");
        }
    }
}

#[test]
fn any_input_gives_fifty_points() {
    let cfg = ModelConfig::small();
    let store: ParameterStore<f32> = init_params(&cfg, 12).unwrap();
    let imgs: Vec<RasterImage> = GlyphClass::ALL.iter().map(|c| glyph(*c, 4).image).collect();
    let blank = RasterImage::new(64, 64);
    let refs: Vec<&RasterImage> = imgs.iter().chain([&blank]).collect();
    let out = predict(&store, &cfg, &refs).unwrap();
    assert_eq!(out.len(), 5);
    assert!(out.iter().all(|t| t.len() == 50));
    assert!(predict(&store, &cfg, &[&RasterImage::new(32, 64)]).is_err());
}

fn loss_of(pred: &[(f64, f64)], target: &[(f64, f64)]) -> f64 {
    let store = ParameterStore::<f64>::new();
    let mut g = Graph::new(&store, Mode::Eval, false);
    let mut vars = |pts: &[(f64, f64)]| -> Vec<Var> { pts.iter().map(|p| row(&mut g, &[p.0, p.1])).collect() };
    let (p, t) = (vars(pred), vars(target));
    let l = l1_loss(&mut g, &p, &t).unwrap();
    g.value(l)[0]
}

#[test]
fn l1_loss_examples() {
    assert_eq!(loss_of(&[(0.0, 0.0)], &[(3.0, 4.0)]), 7.0);
    assert_eq!(loss_of(&[(0.0, 0.0), (1.0, 1.0)], &[(1.0, 0.0), (1.0, 3.0)]), 1.5);
    assert_eq!(loss_of(&[(2.5, 1.0), (4.0, 4.0)], &[(2.5, 1.0), (4.0, 4.0)]), 0.0);
    let a = PenTrajectory::from_pairs([(0.0, 0.0), (1.0, 1.0)]).unwrap();
    let b = PenTrajectory::from_pairs([(1.0, 0.0), (1.0, 3.0)]).unwrap();
    assert_eq!(trajectory_l1(&a, &b).unwrap(), 1.5);
}

/// Teacher-forced outputs for one image with the given target points.
fn teacher_forced(
    store: &ParameterStore<f32>,
    cfg: &ModelConfig,
    img: &RasterImage,
    target: &PenTrajectory,
) -> Vec<[f32; 2]> {
    let mut g = Graph::new(store, Mode::Eval, false);
    let out = forward(&mut g, cfg, &[img], Some(&[target]), true).unwrap();
    out.points.iter().map(|p| [g.value(*p)[0], g.value(*p)[1]]).collect()
}

#[test]
fn teacher_forced_outputs_ignore_later_targets() {
    let cfg = ModelConfig::small();
    let store: ParameterStore<f32> = init_params(&cfg, 13).unwrap();
    let sample = glyph(GlyphClass::Junctioned, 5);
    let base = teacher_forced(&store, &cfg, &sample.image, &sample.target);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut changed_next = 0;
    for _ in 0..20 {
        let k = rng.gen_range(0..49);
        let mut pts = sample.target.points().to_vec();
        pts[k].x += rng.gen_range(-10.0..10.0);
        pts[k].y += rng.gen_range(-10.0..10.0);
        let out = teacher_forced(&store, &cfg, &sample.image, &PenTrajectory::new(pts).unwrap());
        assert_eq!(out[..=k], base[..=k], "perturbing target {k}");
        changed_next += usize::from(out[k + 1] != base[k + 1]);
    }
    assert_eq!(changed_next, 20);
}

#[test]
fn teacher_forced_gradients_respect_causality() {
    let cfg = tiny(3, 3, 4, 2);
    let mut store: ParameterStore<f64> = init_params(&cfg, 15).unwrap();
    randomize(&mut store, 16, true);
    let sample = glyph(GlyphClass::Curve, 6);
    for t in [0, 1, 17, 49] {
        let mut g = Graph::new(&store, Mode::Eval, true);
        let x = g.input(image_batch(&[&sample.image]).unwrap()).unwrap();
        let xs = extract_feature_sequence(&mut g, &cfg, x).unwrap();
        let state = encode(&mut g, &cfg, &xs).unwrap();
        let targets = target_inputs(&mut g, &cfg, &[&sample.target], true).unwrap();
        let points = decode(&mut g, &cfg, &state, Decoding::TeacherForced(&targets)).unwrap();
        let loss = g.sum(points[t]).unwrap();
        let grads = g.backward(loss).unwrap();
        for (s, v) in targets.iter().enumerate() {
            let gv = grads.get(*v);
            let zero = gv.is_none_or(|d| d.iter().all(|&x| x == 0.0));
            if s >= t {
                assert!(zero, "output {t} depends on target {s}");
            } else if s + 1 == t {
                assert!(!zero, "output {t} ignores target {s}");
            }
        }
    }
}

fn fd_full(
    store: &ParameterStore<f64>,
    per_tensor: usize,
    seed: u64,
    build: &dyn Fn(&mut Graph<'_, f64>) -> Var,
) -> GradCheck {
    check_gradients(store, Mode::Train, per_tensor, seed, |g| Ok(build(g))).unwrap()
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let cfg = tiny(4, 3, 3, 2);
    let mut store: ParameterStore<f64> = init_params(&cfg, 17).unwrap();
    randomize(&mut store, 18, true);
    let samples = [glyph(GlyphClass::Loop, 7), glyph(GlyphClass::Junctioned, 8)];
    let images: Vec<&RasterImage> = samples.iter().map(|s| &s.image).collect();
    let targets: Vec<&PenTrajectory> = samples.iter().map(|s| &s.target).collect();
    let build = |g: &mut Graph<'_, f64>| forward(g, &cfg, &images, Some(&targets), true).unwrap().loss.unwrap();
    let r = fd_full(&store, 3, 19, &build);
    assert!(r.checked >= 100, "{}", r.checked);
    assert!(r.kinks * 20 <= r.checked, "{} kinks", r.kinks);
    assert!(r.max_rel_error < 1e-4, "max relative error {}", r.max_rel_error);
}

#[test]
fn recurrent_stack_gradient_matches_finite_differences() {
    // Smooth ops only: features in, a fixed projection of the outputs out.
    let cfg = tiny(4, 3, 3, 2);
    let mut store: ParameterStore<f64> = init_params(&cfg, 20).unwrap();
    randomize(&mut store, 21, true);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let seq: Vec<Vec<f64>> = (0..6)
        .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let target = glyph(GlyphClass::Curve, 9).target;
    let proj: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let build = |g: &mut Graph<'_, f64>| {
        let xs: Vec<Var> = seq
            .iter()
            .map(|v| g.input(Tensor::new(vec![2, 4], v.clone()).unwrap()).unwrap())
            .collect();
        let state = encode(g, &cfg, &xs).unwrap();
        let t = target_inputs(g, &cfg, &[&target, &target], false).unwrap();
        let pts = decode(g, &cfg, &state, Decoding::TeacherForced(&t)).unwrap();
        let mut total: Option<Var> = None;
        for (k, p) in pts.iter().enumerate() {
            let r = g
                .input(
                    Tensor::new(
                        vec![2, 2],
                        vec![proj[2 * k], proj[2 * k + 1], proj[2 * k + 1], proj[2 * k]],
                    )
                    .unwrap(),
                )
                .unwrap();
            let m = g.mul(*p, r).unwrap();
            let s = g.sum(m).unwrap();
            total = Some(match total {
                Some(a) => g.add(a, s).unwrap(),
                None => s,
            });
        }
        total.unwrap()
    };
    let r = fd_full(&store, 4, 23, &build);
    assert!(r.checked >= 100, "{}", r.checked);
    assert_eq!(r.kinks, 0);
    assert!(r.max_rel_error < 1e-5, "max relative error {}", r.max_rel_error);
}

#[test]
fn autoregressive_gradient_matches_finite_differences() {
    let cfg = tiny(4, 2, 3, 1);
    let mut store: ParameterStore<f64> = init_params(&cfg, 24).unwrap();
    randomize(&mut store, 25, true);
    let sample = glyph(GlyphClass::Line, 10);
    let build = |g: &mut Graph<'_, f64>| {
        forward(g, &cfg, &[&sample.image], Some(&[&sample.target]), false)
            .unwrap()
            .loss
            .unwrap()
    };
    let r = fd_full(&store, 3, 26, &build);
    assert!(r.kinks * 20 <= r.checked, "{} kinks", r.kinks);
    assert!(r.max_rel_error < 1e-4, "max relative error {}", r.max_rel_error);
}
