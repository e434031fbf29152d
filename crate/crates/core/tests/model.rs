
use tlf_core::harness::gradsuite::{model_checks, random};
use tlf_core::model::attention::{apply_spatial, mean_attention, spatial_attention};
use tlf_core::model::future::future_core;
use tlf_core::model::now::{measure_head, segment_head};
use tlf_core::model::*;
use tlf_tensor::{sigmoid, Conv2dSpec, Graph, Mode, Tensor, Var};

fn paper_scale() -> ModelConfig {
    ModelConfig {
        frame_size: 320,
        repr_size: 20,
        encoder_channels: vec![4, 4, 4, 4, 4],
        ..ModelConfig::default()
    }
}

#[test]
fn encoder_geometry() {
    let now = NowModel::init(ModelConfig::default(), 0).unwrap();
    let p = now.predict(&random(&[2, 64, 64, 3], 1).map(|v| v.abs())).unwrap();
    assert_eq!(p.repr.shape(), &[2, 8, 8, 4]);
    assert_eq!(p.probs.shape(), &[2, 64, 64, 4]);
    assert_eq!(p.measure.len(), 2);

    let cfg = paper_scale();
    let mut store = ParamStore::new();
    let mut g = Graph::new();
    let mut fw = Forward::initializing(&mut g, &mut store, 0);
    let x = fw.g.constant(Tensor::full(&[1, 320, 320, 3], 0.5));
    let r = tlf_core::model::now::encoder(&mut fw, &cfg, x).unwrap();
    assert_eq!(fw.g.shape(r), &[1, 20, 20, 4]);
    let m = measure_head(&mut fw, &cfg, r).unwrap();
    assert_eq!(fw.g.shape(m.features), &[1, 16, 16, 128]);
    assert_eq!(store.count("measure.out."), 32_769);
}

#[test]
fn bad_geometry_is_rejected() {
    let cfg = ModelConfig { frame_size: 60, ..ModelConfig::default() };
    assert!(NowModel::init(cfg, 0).is_err());
    let cfg = ModelConfig { repr_size: 4, encoder_channels: vec![8, 8, 8, 8, 8], ..ModelConfig::default() };
    assert!(NowModel::init(cfg, 0).is_err(), "4x4 cannot feed two valid 3x3 convs");
}

#[test]
fn infer_mode_is_deterministic() {
    let now = NowModel::init(ModelConfig::default(), 3).unwrap();
    let x = random(&[1, 64, 64, 3], 2).map(|v| v.abs());
    assert_eq!(now.predict(&x).unwrap(), now.predict(&x).unwrap());
    assert_eq!(NowModel::init(ModelConfig::default(), 3).unwrap(), now);
}

#[test]
fn segment_head_is_a_distribution() {
    let cfg = ModelConfig::default();
    let mut g = Graph::new();
    let mut logits = Tensor::zeros(&[1, 8, 8, 4]);
    for (i, v) in logits.data_mut().iter_mut().enumerate() {
        *v = if i % 4 == 1 { 9.0 } else { (i as f64 * 0.37).sin() };
    }
    let r = g.constant(logits);
    let p = segment_head(&mut g, &cfg, r).unwrap();
    let probs = g.value(p);
    assert_eq!(probs.shape(), &[1, 64, 64, 4]);
    for px in probs.data().chunks(4) {
        assert!((px.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(px.iter().all(|&v| v >= 0.0));
    }
    assert!(probs.argmax_axis(3).unwrap().iter().all(|&k| k == 1));
}

#[test]
fn measure_head_matches_composed_ops() {
    let cfg = ModelConfig::default();
    let now = NowModel::init(cfg.clone(), 7).unwrap();
    let s = &now.store;
    let repr = random(&[3, 8, 8, 4], 8);

    let mut g = Graph::new();
    let mut fw = Forward::new(&mut g, s, Mode::Infer, 0);
    let r = fw.g.constant(repr.clone());
    let out = measure_head(&mut fw, &cfg, r).unwrap();
    let got = g.value(out.value).clone();

    let mut g = Graph::new();
    let mut h = g.constant(repr);
    for i in 0..2 {
        let k = g.constant(s.get(&format!("measure.conv{i}.kernel")).unwrap().clone());
        let b = g.constant(s.get(&format!("measure.conv{i}.bias")).unwrap().clone());
        h = g.conv2d(h, k, b, Conv2dSpec::valid()).unwrap();
        let sc = g.constant(s.get(&format!("measure.bn{i}.scale")).unwrap().clone());
        let sh = g.constant(s.get(&format!("measure.bn{i}.shift")).unwrap().clone());
        let running = s.running(&format!("measure.bn{i}")).unwrap();
        h = g.batch_norm(h, sc, sh, Mode::Infer, running).unwrap().0;
        h = g.relu(h).unwrap();
    }
    let flat = g.reshape(h, &[3, 4 * 4 * 128]).unwrap();
    let w = g.constant(s.get("measure.out.weight").unwrap().clone());
    let b = g.constant(s.get("measure.out.bias").unwrap().clone());
    let y = g.dense(flat, w, b).unwrap();
    assert!(got.max_abs_diff(g.value(y)) < 1e-10);
}

#[test]
fn zero_features_give_the_bias() {
    let now = NowModel::init(ModelConfig::default(), 2).unwrap();
    let features = Tensor::zeros(&[1, 4, 4, 128]);
    let map = tlf_core::model::now::contribution_map(&now.store, &features, Mode::Infer).unwrap();
    assert!(map.data().iter().all(|&v| v == 0.0));
    assert!(tlf_core::model::now::contribution_map(&now.store, &features, Mode::Train).is_err());
}

#[test]
fn contributions_decompose_the_measure() {
    let mut now = NowModel::init(ModelConfig::default(), 11).unwrap();
    now.store.get_mut("measure.out.bias").unwrap().data_mut()[0] = 0.3;
    for i in 0..10 {
        let frames = random(&[10, 64, 64, 3], 100 + i).map(|v| v.abs());
        let (map, bias, measures) = now.contributions(&frames).unwrap();
        for (b, m) in measures.iter().enumerate() {
            let total: f64 = map.slice_outer(b, 1).unwrap().data().iter().sum();
            assert!((total + bias - m).abs() < 1e-6, "{} vs {m}", total + bias);
        }
    }
}

#[test]
fn perturbing_one_location_is_linear() {
    let now = NowModel::init(ModelConfig::default(), 12).unwrap();
    let w = now.store.get("measure.out.weight").unwrap().clone();
    let mut f = random(&[1, 4, 4, 128], 5).map(|v| v.abs());
    let base = tlf_core::model::now::contribution_map(&now.store, &f, Mode::Infer).unwrap();
    let loc = 6;
    let delta: Vec<f64> = (0..128).map(|c| 0.01 * c as f64).collect();
    for c in 0..128 {
        f.data_mut()[loc * 128 + c] += delta[c];
    }
    let after = tlf_core::model::now::contribution_map(&now.store, &f, Mode::Infer).unwrap();
    let expect: f64 = (0..128).map(|c| w.data()[loc * 128 + c] * delta[c]).sum();
    let change: f64 = after.data().iter().sum::<f64>() - base.data().iter().sum::<f64>();
    assert!((change - expect).abs() < 1e-12);
    assert_eq!(after.data()[5], base.data()[5]);
}

/// Standard LSTM on vectors, gate order input, forget, output, candidate.
fn lstm_oracle(wx: &[f64], wh: &[f64], b: &[f64], xs: &[Vec<f64>], f: usize) -> (Vec<f64>, Vec<f64>) {
    let n = xs[0].len();
    let (mut h, mut c) = (vec![0.0; f], vec![0.0; f]);
    for x in xs {
        let z: Vec<f64> = (0..4 * f)
            .map(|r| {
                b[r] + (0..n).map(|j| wx[r * n + j] * x[j]).sum::<f64>()
                    + (0..f).map(|j| wh[r * f + j] * h[j]).sum::<f64>()
            })
            .collect();
        for u in 0..f {
            let i = sigmoid(z[u]);
            let fg = sigmoid(z[f + u]);
            let o = sigmoid(z[2 * f + u]);
            let g = z[3 * f + u].tanh();
            c[u] = fg * c[u] + i * g;
            h[u] = o * c[u].tanh();
        }
    }
    (h, c)
}

#[test]
fn one_by_one_convlstm_is_an_lstm() {
    let (f, n) = (3, 2);
    let lstm = ConvLstm::new("cell", f, 1);
    let xs: Vec<Tensor> = (0..4).map(|k| random(&[1, 1, 1, n], 30 + k)).collect();
    let mut store = ParamStore::new();
    {
        let mut g = Graph::new();
        let mut fw = Forward::initializing(&mut g, &mut store, 1);
        let x = fw.g.constant(xs[0].clone());
        let s = ConvLstmState::zeros(&mut fw, 1, 1, 1, f);
        lstm.step(&mut fw, x, s).unwrap();
    }
    store.insert("cell.bias", random(&[4 * f], 40));
    let mut g = Graph::new();
    let mut fw = Forward::new(&mut g, &store, Mode::Infer, 0);
    let mut state = ConvLstmState::zeros(&mut fw, 1, 1, 1, f);
    for x in &xs {
        let x = fw.g.constant(x.clone());
        state = lstm.step(&mut fw, x, state).unwrap();
    }
    let (h, c) = lstm_oracle(
        store.get("cell.input.kernel").unwrap().data(),
        store.get("cell.recurrent.kernel").unwrap().data(),
        store.get("cell.bias").unwrap().data(),
        &xs.iter().map(|t| t.data().to_vec()).collect::<Vec<_>>(),
        f,
    );
    for u in 0..f {
        assert!((g.value(state.hidden).data()[u] - h[u]).abs() < 1e-12);
        assert!((g.value(state.cell).data()[u] - c[u]).abs() < 1e-12);
    }
}

#[test]
fn sequence_matches_stepping() {
    let lstm = ConvLstm::new("l", 4, 3);
    let xs: Vec<Tensor> = (0..3).map(|k| random(&[2, 5, 5, 3], 50 + k)).collect();
    let mut store = ParamStore::new();
    let mut g = Graph::new();
    let mut fw = Forward::initializing(&mut g, &mut store, 2);
    let vars: Vec<Var> = xs.iter().map(|t| fw.g.constant(t.clone())).collect();
    let hs = lstm.sequence(&mut fw, &vars).unwrap();
    let mut state = ConvLstmState::zeros(&mut fw, 2, 5, 5, 4);
    for (k, &x) in vars.iter().enumerate() {
        state = lstm.step(&mut fw, x, state).unwrap();
        let d = fw.g.value(state.hidden).max_abs_diff(fw.g.value(hs[k]));
        assert!(d < 1e-12);
        assert_eq!(fw.g.shape(hs[k]), &[2, 5, 5, 4]);
    }
    let forget = store.get("l.bias").unwrap().data()[4..8].to_vec();
    assert_eq!(forget, vec![1.0; 4]);
}

#[test]
fn zero_weights_keep_the_state_at_zero() {
    let lstm = ConvLstm::new("z", 2, 3);
    let mut store = ParamStore::new();
    store.insert("z.input.kernel", Tensor::zeros(&[8, 3, 3, 3]));
    store.insert("z.recurrent.kernel", Tensor::zeros(&[8, 2, 3, 3]));
    store.insert("z.bias", Tensor::zeros(&[8]));
    let mut g = Graph::new();
    let mut fw = Forward::new(&mut g, &store, Mode::Infer, 0);
    let mut state = ConvLstmState::zeros(&mut fw, 1, 4, 4, 2);
    for k in 0..3 {
        let x = fw.g.constant(random(&[1, 4, 4, 3], k));
        state = lstm.step(&mut fw, x, state).unwrap();
    }
    assert!(g.value(state.hidden).data().iter().all(|&v| v == 0.0));
    assert!(g.value(state.cell).data().iter().all(|&v| v == 0.0));
}

#[test]
fn state_shape_mismatch_is_an_error() {
    let lstm = ConvLstm::new("m", 2, 3);
    let mut store = ParamStore::new();
    let mut g = Graph::new();
    let mut fw = Forward::initializing(&mut g, &mut store, 0);
    let x = fw.g.constant(Tensor::zeros(&[1, 4, 4, 1]));
    let bad = ConvLstmState::zeros(&mut fw, 1, 5, 5, 2);
    assert!(lstm.step(&mut fw, x, bad).is_err());
}

fn reprs(fw: &mut Forward, t: usize, seed: u64) -> Vec<Var> {
    (0..t).map(|k| fw.g.constant(random(&[2, 8, 8, 4], seed + k as u64))).collect()
}

#[test]
fn attention_parameter_counts() {
    let now = NowModel::init(ModelConfig::default(), 0).unwrap();
    let small = ModelConfig { convlstm_filters: vec![8, 4, 4], ..ModelConfig::default() };
    let count = |variant| {
        let f = FutureModel::init(ModelConfig { attention: variant, ..small.clone() }, &now, 1).unwrap();
        (f.store.count("attention."), f.future_param_count())
    };
    let (conv, conv_total) = count(AttentionVariant::SpatialConv);
    // 5×5×6→64 conv, batch-norm scale and shift, dense 64→6
    assert_eq!(conv, 9_664 + 128 + 390);
    let (lstm, _) = count(AttentionVariant::SpatialConvLstm);
    assert_eq!(lstm, 416_256 + 128 + 390);
    let (mean, _) = count(AttentionVariant::Mean);
    assert_eq!(mean, 6 * 6 + 6);
    let (none, none_total) = count(AttentionVariant::None);
    assert_eq!(none, 0);
    assert!(none_total < conv_total);
}

#[test]
fn spatial_weights_are_normalized_and_replicated() {
    for variant in [AttentionVariant::SpatialConv, AttentionVariant::SpatialConvLstm] {
        let cfg = ModelConfig { attention: variant, attention_filters: 8, ..ModelConfig::default() };
        let mut store = ParamStore::new();
        let mut g = Graph::new();
        let mut fw = Forward::initializing(&mut g, &mut store, 4);
        let xs = reprs(&mut fw, 6, 60);
        let out = spatial_attention(&mut fw, &cfg, &xs).unwrap();
        let w = fw.g.value(out.weights.unwrap()).clone();
        assert_eq!(w.shape(), &[2, 8, 8, 6]);
        for px in w.data().chunks(6) {
            assert!((px.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        for (k, (&x, &a)) in xs.iter().zip(&out.attended).enumerate() {
            let (x, a) = (fw.g.value(x), fw.g.value(a));
            for (p, wp) in w.data().chunks(6).enumerate() {
                for ch in 0..4 {
                    let i = p * 4 + ch;
                    assert_eq!(a.data()[i], x.data()[i] * wp[k]);
                }
            }
        }
    }
}

#[test]
fn uniform_weights_divide_by_t() {
    let mut store = ParamStore::new();
    let mut g = Graph::new();
    let mut fw = Forward::initializing(&mut g, &mut store, 0);
    let xs = reprs(&mut fw, 6, 70);
    let w = fw.g.constant(Tensor::full(&[2, 8, 8, 6], 1.0 / 6.0));
    let out = apply_spatial(&mut fw, &xs, w).unwrap();
    for (&x, &a) in xs.iter().zip(&out) {
        let expect = fw.g.value(x).map(|v| v / 6.0);
        assert!(fw.g.value(a).max_abs_diff(&expect) < 1e-12);
    }
    let short = fw.g.constant(Tensor::full(&[2, 8, 8, 5], 0.2));
    assert!(apply_spatial(&mut fw, &xs, short).is_err());
}

/// softmax(W·means + b) from stored parameters.
fn mean_oracle(store: &ParamStore, xs: &[Tensor], cloud: usize) -> Vec<Vec<f64>> {
    let w = store.get("attention.dense.weight").unwrap();
    let b = store.get("attention.dense.bias").unwrap();
    let t = xs.len();
    (0..xs[0].shape()[0])
        .map(|item| {
            let means: Vec<f64> = xs
                .iter()
                .map(|x| {
                    let one = x.slice_outer(item, 1).unwrap();
                    let vals: Vec<f64> = one.data().chunks(4).map(|px| px[cloud]).collect();
                    vals.iter().sum::<f64>() / vals.len() as f64
                })
                .collect();
            let logits: Vec<f64> = (0..t)
                .map(|r| b.data()[r] + (0..t).map(|j| w.data()[r * t + j] * means[j]).sum::<f64>())
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect()
}

#[test]
fn mean_attention_properties() {
    let cfg = ModelConfig { attention: AttentionVariant::Mean, ..ModelConfig::default() };
    let mut store = ParamStore::new();
    {
        let mut g = Graph::new();
        let mut fw = Forward::initializing(&mut g, &mut store, 9);
        let xs = reprs(&mut fw, 6, 80);
        mean_attention(&mut fw, &cfg, &xs).unwrap();
    }
    let inputs: Vec<Tensor> = (0..6).map(|k| random(&[2, 8, 8, 4], 90 + k)).collect();
    for scale in [1.0, 2.0] {
        let scaled: Vec<Tensor> = inputs.iter().map(|t| t.map(|v| v * scale)).collect();
        let mut g = Graph::new();
        let mut fw = Forward::new(&mut g, &store, Mode::Infer, 0);
        let xs: Vec<Var> = scaled.iter().map(|t| fw.g.constant(t.clone())).collect();
        let out = mean_attention(&mut fw, &cfg, &xs).unwrap();
        let w = fw.g.value(out.weights.unwrap()).clone();
        let oracle = mean_oracle(&store, &scaled, 1);
        for (item, row) in w.data().chunks(6).enumerate() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for k in 0..6 {
                assert!((row[k] - oracle[item][k]).abs() < 1e-12);
            }
        }
        for (k, &a) in out.attended.iter().enumerate() {
            let a = fw.g.value(a);
            for item in 0..2 {
                let got = a.slice_outer(item, 1).unwrap();
                let expect = inputs[k].slice_outer(item, 1).unwrap().map(|v| scale * v * oracle[item][k]);
                assert!(got.max_abs_diff(&expect) < 1e-12);
            }
        }
    }

    let one = ModelConfig { look_back: 1, ..cfg };
    let mut store = ParamStore::new();
    let mut g = Graph::new();
    let mut fw = Forward::initializing(&mut g, &mut store, 1);
    let xs = reprs(&mut fw, 1, 5);
    let out = mean_attention(&mut fw, &one, &xs).unwrap();
    assert_eq!(fw.g.value(out.weights.unwrap()).data(), &[1.0, 1.0]);
}

#[test]
fn future_shapes_and_determinism() {
    let cfg = ModelConfig { convlstm_filters: vec![8, 4, 4], ..ModelConfig::default() };
    let now = NowModel::init(cfg.clone(), 0).unwrap();
    for variant in AttentionVariant::ALL {
        let c = ModelConfig { attention: variant, ..cfg.clone() };
        let f = FutureModel::init(c.clone(), &now, 5).unwrap();
        assert_eq!(f, FutureModel::init(c, &now, 5).unwrap());
        let frames: Vec<Tensor> = (0..6).map(|k| random(&[2, 64, 64, 3], k).map(|v| v.abs())).collect();
        let p = f.predict_frames(&frames).unwrap();
        assert_eq!(p.horizons(), 6);
        assert_eq!(p, f.predict_frames(&frames).unwrap());
        for k in 0..6 {
            assert_eq!(p.reprs[k].shape(), &[2, 8, 8, 4]);
            assert_eq!(p.probs[k].shape(), &[2, 64, 64, 4]);
            assert_eq!(p.measure[k].len(), 2);
            for px in p.probs[k].data().chunks(4) {
                assert!((px.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        assert!(f.predict_frames(&frames[..5]).is_err());
    }
}

#[test]
fn paper_scale_core_shape() {
    let cfg = ModelConfig { convlstm_filters: vec![2, 2, 2], ..paper_scale() };
    let mut store = ParamStore::new();
    let mut g = Graph::new();
    let mut fw = Forward::initializing(&mut g, &mut store, 0);
    let xs: Vec<Var> = (0..6).map(|_| fw.g.constant(Tensor::zeros(&[1, 20, 20, 4]))).collect();
    let y = future_core(&mut fw, &cfg, &xs).unwrap();
    assert_eq!(fw.g.shape(y), &[6, 20, 20, 4]);
    assert!(future_core(&mut fw, &cfg, &xs[..4]).is_err());
}

#[test]
fn zero_output_conv_predicts_zeros() {
    let cfg = ModelConfig { convlstm_filters: vec![8, 4, 4], ..ModelConfig::default() };
    let now = NowModel::init(cfg.clone(), 0).unwrap();
    let mut f = FutureModel::init(cfg, &now, 1).unwrap();
    f.store.insert("core.out.kernel", Tensor::zeros(&[4, 4, 5, 5]));
    f.store.insert("core.out.bias", Tensor::zeros(&[4]));
    let reprs: Vec<Tensor> = (0..6).map(|k| random(&[1, 8, 8, 4], k)).collect();
    let p = f.predict_reprs(&reprs).unwrap();
    assert!(p.reprs.iter().all(|r| r.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn constant_scene_with_oracle_weights_persists() {
    // An ideal now model for an all-sky scene and a future model whose
    // output stage reproduces the same representation.
    let cfg = ModelConfig { convlstm_filters: vec![8, 4, 4], ..ModelConfig::default() };
    let mut now = NowModel::init(cfg.clone(), 0).unwrap();
    let sky = Tensor::new(&[4], vec![6.0, 0.0, -1.0, -2.0]).unwrap();
    now.store.insert("encoder.repr.kernel", Tensor::zeros(&[4, 64, 1, 1]));
    now.store.insert("encoder.repr.bias", sky.clone());
    let mut f = FutureModel::init(cfg, &now, 1).unwrap();
    f.store.insert("core.out.kernel", Tensor::zeros(&[4, 4, 5, 5]));
    f.store.insert("core.out.bias", sky);
    let frame = Tensor::from_fn(&[1, 64, 64, 3], |i| [0.35, 0.55, 0.9][i % 3]);
    let now_mask = now.predict(&frame).unwrap().probs.argmax_axis(3).unwrap();
    let p = f.predict_frames(&vec![frame; 6]).unwrap();
    for probs in &p.probs {
        assert_eq!(probs.argmax_axis(3).unwrap(), now_mask);
    }
    assert!(now_mask.iter().all(|&k| k == 0));
}

#[test]
fn zero_autoregressive_update_is_persistence() {
    let cfg = ModelConfig::default();
    let now = NowModel::init(cfg.clone(), 0).unwrap();
    let ar = ArModel::init(cfg, &now, 1).unwrap();
    let frames: Vec<Tensor> = (0..6).map(|k| random(&[2, 64, 64, 3], 20 + k).map(|v| v.abs())).collect();
    let reprs: Vec<Tensor> = frames.iter().map(|f| now.encode(f).unwrap()).collect();
    let a = ar.predict_reprs(&reprs, 6).unwrap();
    let p = persistence_predict(&now, &frames[5], 6).unwrap();
    for k in 0..6 {
        assert!(a.probs[k].max_abs_diff(&p.probs[k]) < 1e-12);
        assert_eq!(a.reprs[k], p.reprs[k]);
        for (x, y) in a.measure[k].iter().zip(&p.measure[k]) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    assert!(ar.rollout(&reprs[..1], 6).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig { convlstm_filters: vec![4, 4, 4], ..ModelConfig::default() };
    let now = NowModel::init(cfg.clone(), 0).unwrap();
    let f = FutureModel::init(cfg, &now, 2).unwrap();
    let path = dir.path().join("future.ckpt");
    f.store.save(&path).unwrap();
    let back = ParamStore::load(&path).unwrap();
    assert_eq!(back, f.store);
    assert_eq!(back.encode(), f.store.encode());
}

#[test]
fn model_gradients() {
    for e in model_checks().unwrap() {
        assert!(e.report.passed(), "{}: {:#?}", e.name, e.report);
    }
}
