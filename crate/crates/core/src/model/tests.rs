use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataio::{gen_synthetic, split_dataset, SyntheticConfig};
use crate::encoder::encode_modality;

fn toy(use_mixhop: bool, use_ode: bool) -> (PreparedConversation, ModelParams) {
    toy_instance(use_mixhop, use_ode, 11).unwrap()
}

#[test]
fn probability_rows_are_distributions() {
    for (mix, ode) in [(false, false), (true, false), (false, true), (true, true)] {
        let (conv, params) = toy(mix, ode);
        let probs = forward(&conv, &params, Mode::Eval).unwrap();
        assert_eq!(probs.shape(), (3, 4));
        for i in 0..3 {
            assert!((probs.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(probs.row(i).iter().all(|&p| p >= 0.0));
        }
    }
}

#[test]
fn zero_output_layer_gives_uniform_rows() {
    let (conv, mut params) = toy(true, true);
    params.w_smax.fill(0.0);
    params.b_smax.fill(0.0);
    let probs = forward(&conv, &params, Mode::Eval).unwrap();
    assert!(probs.as_slice().iter().all(|&p| (p - 0.25).abs() < 1e-15));
}

#[test]
fn ablated_model_is_encoder_plus_head() {
    let (conv, params) = toy(false, false);
    let probs = forward(&conv, &params, Mode::Eval).unwrap();
    let outputs: Vec<Vec<Vec<f64>>> = (0..3).map(|m| encode_modality(&conv.modal[m], &params.encoders[m]).unwrap()).collect();
    for i in 0..3 {
        let s = params.speaker_table.embed_index(conv.speakers[i]).unwrap();
        let r: Vec<f64> = (0..4).map(|k| (0..3).map(|m| outputs[m][i][k] + s[k]).sum::<f64>() / 3.0).collect();
        let l: Vec<f64> = params.w_l.matvec(&r).iter().zip(params.b_l.as_slice()).map(|(a, b)| (a + b).max(0.0)).collect();
        let z: Vec<f64> = params.w_smax.matvec(&l).iter().zip(params.b_smax.as_slice()).map(|(a, b)| a + b).collect();
        let norm: f64 = z.iter().map(|v| v.exp()).sum();
        for c in 0..4 {
            assert!((probs[(i, c)] - z[c].exp() / norm).abs() < 1e-14);
        }
    }
}

#[test]
fn predict_label_examples() {
    assert_eq!(predict_label(&[0.1, 0.7, 0.2]).unwrap(), 1);
    assert_eq!(predict_label(&[0.5, 0.5]).unwrap(), 0);
    assert_eq!(predict_label(&[1.0 / 7.0; 7]).unwrap(), 0);
    assert!(predict_label(&[]).is_err());
}

#[test]
fn loss_examples() {
    let (_, params) = toy(false, false);
    let perfect = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    assert!(loss(&perfect, &[0, 1], &params, 0.0).unwrap() < 1e-9);
    let uniform = DenseMatrix::from_fn(3, 4, |_, _| 0.25);
    assert!((loss(&uniform, &[0, 1, 3], &params, 0.0).unwrap() - 4f64.ln()).abs() < 1e-12);
    assert!(matches!(loss(&uniform, &[0, 4, 1], &params, 0.0), Err(DgodeError::LabelOutOfRange { label: 4, classes: 4 })));
    // floored log
    let zero = DenseMatrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
    assert!((loss(&zero, &[0], &params, 0.0).unwrap() + 1e-12f64.ln()).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let probs = DenseMatrix::from_fn(5, 3, |_, _| rng.random_range(0.01..1.0));
    let labels = [0, 2, 1, 1, 0];
    let l2 = 0.01;
    let mut want = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        want -= probs[(i, y)].ln() / 5.0;
    }
    let mut decay = 0.0;
    for (_, kind, t) in params.tensors() {
        if kind == TensorKind::Weight {
            decay += t.as_slice().iter().map(|v| v * v).sum::<f64>();
        }
    }
    want += l2 * decay;
    assert!((loss(&probs, &labels, &params, l2).unwrap() - want).abs() < 1e-12);
}

#[test]
fn weight_decay_gradient_is_twice_l2_times_weight() {
    let (_, params) = toy(true, true);
    let mut grads = params.zeros_like();
    add_weight_decay(&params, 0.25, &mut grads);
    for ((_, kind, g), (_, _, w)) in grads.tensors().into_iter().zip(params.tensors()) {
        let want = if kind == TensorKind::Weight { w.scale(0.5) } else { DenseMatrix::zeros(w.rows(), w.cols()) };
        assert_eq!(g, &want);
    }
}

#[test]
fn gradients_match_finite_differences_for_all_ablations() {
    for (mix, ode) in [(false, false), (true, false), (false, true), (true, true)] {
        let (conv, params) = toy(mix, ode);
        for check in gradient_check(&[&conv], &params, 1e-3, 0.3, 1e-5).unwrap() {
            assert!(check.relative_error < GRADIENT_TOLERANCE, "mixhop={mix} ode={ode} {}: {:.3e}", check.name, check.relative_error);
        }
    }
}

#[test]
fn every_parameter_receives_gradient_in_full_model() {
    let (conv, params) = toy(true, true);
    let (_, grads) = batch_loss_and_grad(&[&conv], &params, 0.0, None).unwrap();
    for (name, _, g) in grads.tensors() {
        assert!(g.max_abs() > 0.0, "{name} has no gradient");
    }
}

#[test]
fn vanilla_gradients_match_finite_differences() {
    let (conv, mut params) = toy(false, false);
    params.config.variant = Variant::VanillaGcn { layers: 3 };
    for check in gradient_check(&[&conv], &params, 0.0, 0.0, 1e-5).unwrap() {
        assert!(check.relative_error < GRADIENT_TOLERANCE, "{}: {:.3e}", check.name, check.relative_error);
    }
}

#[test]
fn propagation_weight_spectrum_and_pullback() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let v = DenseMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
    let probe = DenseMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
    for map in [WeightMap::SpectralNorm, WeightMap::Saturating] {
        let pw = PropagationWeight::new(&v, map, 0.9, 1e-3);
        let eig = sym_eig(&pw.matrix).unwrap();
        assert!(eig.values[0] >= 1e-3 - 1e-12 && eig.values[3] <= 0.901 + 1e-12);
        if map == WeightMap::SpectralNorm {
            assert!((eig.values[3] - 0.901).abs() < 1e-12);
        }
        let analytic = pw.pullback(&probe);
        let h = 1e-6;
        for k in 0..16 {
            let mut plus = v.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = v.clone();
            minus.as_mut_slice()[k] -= h;
            let at = |x: &DenseMatrix| PropagationWeight::new(x, map, 0.9, 1e-3).matrix.inner(&probe);
            let fd = (at(&plus) - at(&minus)) / (2.0 * h);
            assert!((fd - analytic.as_slice()[k]).abs() < 1e-7, "{map:?}");
        }
    }
}

#[test]
fn adam_examples() {
    let cfg = TrainConfig { learning_rate: 0.05, ..Default::default() };
    let (_, params) = toy(true, true);
    let mut p = params.clone();
    let mut state = AdamState::new(&p);
    adam_step(&mut p, &params.zeros_like(), &mut state, &cfg);
    assert_eq!(p, params);

    let mut x = [1.0, -2.0];
    let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
    adam_update(&mut x, &[0.3, -4.0], &mut m, &mut v, 1, &cfg);
    assert!((x[0] - (1.0 - 0.05)).abs() < 1e-7 && (x[1] - (-2.0 + 0.05)).abs() < 1e-7);

    let mut x = [1.0];
    let (mut m, mut v) = ([0.0], [0.0]);
    for step in 1..=100 {
        let g = [2.0 * x[0]];
        adam_update(&mut x, &g, &mut m, &mut v, step, &cfg);
    }
    assert!(x[0].abs() < 1e-2, "{}", x[0]);
}

#[test]
fn adam_projects_gates() {
    let (_, params) = toy(true, true);
    let mut p = params.clone();
    let mut grads = params.zeros_like();
    grads.hop_gates.fill(1.0);
    let cfg = TrainConfig { learning_rate: 10.0, ..Default::default() };
    adam_step(&mut p, &grads, &mut AdamState::new(&params), &cfg);
    assert!(p.hop_gates.as_slice().iter().all(|&g| g == 0.0));
}

#[test]
fn metrics_examples() {
    let classes = vec!["a".to_string(), "b".to_string()];
    let r = MetricsReport::from_confusion(classes.clone(), vec![vec![1, 1], vec![0, 2]]).unwrap();
    assert!((r.per_class_f1[0] - 2.0 / 3.0).abs() < 1e-12);
    assert!((r.per_class_f1[1] - 0.8).abs() < 1e-12);
    assert_eq!(r.support, vec![2, 2]);
    assert!((r.weighted_f1 - 0.733333333333).abs() < 1e-9);
    assert!((r.accuracy - 0.75).abs() < 1e-12);

    let r = MetricsReport::from_predictions(classes, &[0, 1, 1], &[0, 1, 1]).unwrap();
    assert_eq!(r.per_class_f1, vec![1.0, 1.0]);
    assert_eq!(r.weighted_f1, 1.0);

    let three = vec!["a".into(), "b".into(), "c".into()];
    let r = MetricsReport::from_predictions(three, &[0, 1, 0], &[0, 1, 1]).unwrap();
    assert_eq!(r.per_class_f1[2], 0.0);
    assert_eq!(r.support[2], 0);
    let want = (2.0 * r.per_class_f1[0] + r.per_class_f1[1]) / 3.0;
    assert!((r.weighted_f1 - want).abs() < 1e-15);
}

#[test]
fn metrics_table_layout() {
    let classes = vec!["happy".to_string(), "sad".to_string()];
    let r = MetricsReport::from_confusion(classes, vec![vec![1, 1], vec![0, 2]]).unwrap();
    let text = format_metrics_table("DGODE", &r);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
    assert_eq!(header, vec!["Method", "happy", "sad", "W-F1"]);
    let row: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
    assert_eq!(row, vec!["DGODE", "66.7", "80.0", "73.3"]);
}

fn small_splits(seed: u64) -> (ModelConfig, Vec<PreparedConversation>, Vec<PreparedConversation>, Vec<String>) {
    let ds = gen_synthetic(&SyntheticConfig { conversations: 8, min_utterances: 3, max_utterances: 5, seed, ..Default::default() }).unwrap();
    let (tr, va, _) = split_dataset(&ds, [0.75, 0.25, 0.0], seed).unwrap();
    let mut cfg = ModelConfig::for_dataset(4, ds.dims, ds.speakers());
    cfg.gru_hidden = 4;
    cfg.node_dim = 4;
    cfg.head_hidden = 4;
    let tr = prepare_dataset(&tr, &cfg).unwrap();
    let va = prepare_dataset(&va, &cfg).unwrap();
    (cfg, tr, va, ds.classes)
}

#[test]
fn zero_epochs_leave_params_unchanged() {
    let (cfg, tr, va, classes) = small_splits(1);
    let params = ModelParams::init(cfg, 3).unwrap();
    let out = train(&tr, &va, &classes, params.clone(), &TrainConfig { epochs: 0, ..Default::default() }).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.best, params);
    assert_eq!(out.final_params, params);
    assert!(train(&[], &va, &classes, params, &TrainConfig::default()).is_err());
}

#[test]
fn training_is_deterministic_and_lowers_loss() {
    let (cfg, tr, va, classes) = small_splits(2);
    let tc = TrainConfig { epochs: 5, ..Default::default() };
    let a = train(&tr, &va, &classes, ModelParams::init(cfg.clone(), 4).unwrap(), &tc).unwrap();
    let b = train(&tr, &va, &classes, ModelParams::init(cfg, 4).unwrap(), &tc).unwrap();
    assert_eq!(serde_json::to_string(&a.log).unwrap(), serde_json::to_string(&b.log).unwrap());
    assert_eq!(a.final_params, b.final_params);
    assert!(a.log.last().unwrap().train_loss < a.log[0].train_loss);
}

#[test]
fn params_text_round_trip() {
    let (_, params) = toy(true, true);
    let text = params_to_text(&params);
    assert_eq!(params_from_text(&text).unwrap(), params);
    assert!(params_from_text("nonsense").is_err());
    let broken = text.replacen("tensor w_l", "tensor w_x", 1);
    assert!(matches!(params_from_text(&broken), Err(DgodeError::Parse { .. })));
}

#[test]
fn sweep_single_depth_gives_two_records() {
    let (cfg, tr, va, classes) = small_splits(3);
    let recs = depth_sweep([&tr, &va, &va], &classes, &cfg, &TrainConfig { epochs: 1, ..Default::default() }, &[4], 0).unwrap();
    assert_eq!(recs.len(), 2);
    assert_eq!((recs[0].method.as_str(), recs[0].depth), ("dgode", 4));
    assert_eq!((recs[1].method.as_str(), recs[1].depth), ("vanilla_gcn", 4));
}

#[test]
fn eval_mode_forward_is_deterministic() {
    let (conv, params) = toy(true, true);
    let a = forward(&conv, &params, Mode::Eval).unwrap();
    let b = forward(&conv, &params, Mode::Eval).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn softmax_is_shift_invariant_and_monotone(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = DenseMatrix::from_fn(3, 5, |_, _| rng.random_range(-5.0..5.0));
        let p = softmax_rows(&logits);
        let q = softmax_rows(&logits.map(|v| v + shift));
        prop_assert!(p.as_slice().iter().zip(q.as_slice()).all(|(a, b)| (a - b).abs() < 1e-12));
        for i in 0..3 {
            prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert_eq!(predict_label(p.row(i)).unwrap(), predict_label(logits.row(i)).unwrap());
        }
    }
}
