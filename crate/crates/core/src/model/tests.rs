use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geo_graph::Edge;
use crate::nn_core::gradcheck::check_parameters;
use crate::nn_core::transformer_conv::tests::dense_oracle;
use crate::nn_core::{uniform_tensor, Linear, TimeIndex};

const D_ATTR: usize = 3;

fn graph(edges: Vec<Edge>) -> GraphInput {
    let coords = vec![(25.6, 85.1), (25.62, 85.13), (25.58, 85.16)];
    let n = edges.len();
    GraphInput {
        coords,
        edges,
        binary_weights: vec![1.0; n],
        inverse_weights: (0..n).map(|k| 1.0 / (1.0 + k as f64)).collect(),
    }
}

fn full_graph() -> GraphInput {
    let mut edges = Vec::new();
    for s in 0..3 {
        for t in 0..3 {
            if s != t {
                edges.push(Edge { source: s, sink: t });
            }
        }
    }
    graph(edges)
}

fn sample(g: GraphInput, h: usize, f: usize, seed: u64) -> WindowSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = g.num_nodes();
    let m = g.edges.len();
    let calendar = (0..h + f)
        .map(|t| TimeIndex::new((7 + t) % 24, (2 + (7 + t) / 24) % 7, 5).unwrap())
        .collect();
    WindowSample {
        graph: Arc::new(g),
        start: 0,
        x: (0..h)
            .map(|t| Arc::new(uniform_tensor(&[l, D_ATTR], 1.0, seed + t as u64, "x")))
            .collect(),
        y_history: Tensor::matrix(h, l, (0..h * l).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        y_future: Tensor::matrix(f, l, (0..f * l).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        calendar,
        edge_attrs: (0..h)
            .map(|t| Arc::new(uniform_tensor(&[m, 5], 1.0, seed + 100 + t as u64, "e")))
            .collect(),
    }
}

fn model(variant: Variant, hidden: usize, h: usize, f: usize, seed: u64) -> ForecastModel {
    let cfg = ModelConfig::new(variant, D_ATTR, hidden, h, f);
    build_variant(&cfg, CoordNorm::fit(&full_graph().coords), seed).unwrap()
}

fn zero_params(m: &mut ForecastModel) {
    m.zero_grad();
}

#[test]
fn zero_parameters_predict_zero() {
    for v in Variant::ALL {
        let mut m = model(v, 4, 3, 2, 1);
        zero_params(&mut m);
        let s = sample(full_graph(), 3, 2, 2);
        let tr = m.forward_trace(&s).unwrap();
        assert!(tr.predictions.data().iter().all(|&p| p == 0.0), "{v}");
        assert!(tr.encoder_predictions.data().iter().all(|&p| p == 0.0));
    }
}

fn lin(l: &Linear, v: &[f64]) -> Vec<f64> {
    (0..l.output_dim())
        .map(|j| {
            l.bias.as_ref().map_or(0.0, |b| b.data()[j]) + (0..v.len()).map(|k| l.weight.get(j, k) * v[k]).sum::<f64>()
        })
        .collect()
}

fn scalar_gru(cell: &GruCell, h: &[f64], x: &[f64]) -> Vec<f64> {
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let hx: Vec<f64> = h.iter().chain(x).copied().collect();
    let z: Vec<f64> = lin(&cell.w_z, &hx).into_iter().map(sig).collect();
    let r: Vec<f64> = lin(&cell.w_r, &hx).into_iter().map(sig).collect();
    let mut rhx: Vec<f64> = h.iter().zip(&r).map(|(a, b)| a * b).collect();
    rhx.extend_from_slice(x);
    let ht = lin(&cell.w_h, &rhx);
    (0..h.len()).map(|j| (1.0 - z[j]) * h[j] + z[j] * ht[j].tanh()).collect()
}

fn scalar_mlp(m: &Mlp, x: &[f64]) -> Vec<f64> {
    let hidden: Vec<f64> = lin(&m.l1, x).into_iter().map(f64::tanh).collect();
    lin(&m.l2, &hidden)
}

#[test]
fn encoder_step_matches_composed_oracle() {
    let g = graph(vec![Edge { source: 0, sink: 1 }, Edge { source: 2, sink: 1 }]);
    let m = model(Variant::AgnnGru, 4, 3, 2, 5);
    let s = sample(g.clone(), 3, 2, 6);
    let p = m.encoder_input(&s, 0).unwrap();
    let h_prev = uniform_tensor(&[3, 4], 0.5, 9, "h");
    let (h, y, _) = m.encoder_step(&p, &g, Some(&*s.edge_attrs[0]), &h_prev).unwrap();
    let conv = match &m.graph {
        Some(GraphLayer::EdgeAttr(c)) => c,
        _ => unreachable!(),
    };
    let eta = dense_oracle(conv, &p, &g.edges, &s.edge_attrs[0]);
    for i in 0..3 {
        let zeta: Vec<f64> = p.row(i).iter().chain(&eta[i]).copied().collect();
        let hw = scalar_gru(&m.encoder_gru, h_prev.row(i), &zeta);
        let yw = scalar_mlp(&m.encoder_mlp, &hw);
        for (a, b) in h.row(i).iter().zip(&hw) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((y.data()[i] - yw[0]).abs() < 1e-12);
    }
}

#[test]
fn empty_edge_set_uses_root_projection() {
    let g = graph(vec![]);
    let m = model(Variant::AgnnGru, 4, 3, 2, 5);
    let mut s = sample(g.clone(), 3, 2, 6);
    s.edge_attrs = (0..3).map(|_| Arc::new(Tensor::zeros(&[0, 5]))).collect();
    let p = m.encoder_input(&s, 0).unwrap();
    let h0 = Tensor::zeros(&[3, 4]);
    let (h, _, _) = m.encoder_step(&p, &g, Some(&*s.edge_attrs[0]), &h0).unwrap();
    let conv = match &m.graph {
        Some(GraphLayer::EdgeAttr(c)) => c,
        _ => unreachable!(),
    };
    let root = conv.w1.forward(&p).unwrap();
    let zeta = Tensor::concat_cols(&[&p, &root]).unwrap();
    let (want, _) = m.encoder_gru.forward(&h0, &zeta).unwrap();
    assert_eq!(h, want);
}

#[test]
fn graph_none_zero_mlp_gives_zero_encoder_output() {
    let mut m = model(Variant::Gru, 4, 3, 2, 5);
    m.encoder_mlp.zero_grad();
    let s = sample(full_graph(), 3, 2, 1);
    let p = m.encoder_input(&s, 1).unwrap();
    let (_, y, _) = m.encoder_step(&p, &s.graph, None, &Tensor::zeros(&[3, 4])).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn missing_edge_attributes_rejected() {
    let m = model(Variant::GnnGru, 4, 3, 2, 5);
    let mut s = sample(full_graph(), 3, 2, 1);
    s.edge_attrs.clear();
    assert!(m.predict(&s).is_err());
    let p = m.encoder_input(&s, 0).unwrap();
    assert!(m.encoder_step(&p, &s.graph, None, &Tensor::zeros(&[3, 4])).is_err());
}

#[test]
fn decoder_step_matches_composed_oracle() {
    let m = model(Variant::AgnnGru, 4, 3, 2, 7);
    let hist: Vec<Tensor> = (0..3).map(|t| uniform_tensor(&[3, 4], 1.0, t, "enc")).collect();
    let xbar = uniform_tensor(&[3, 32], 1.0, 4, "xbar");
    let y_prev = uniform_tensor(&[3, 1], 1.0, 5, "y");
    let h_prev = uniform_tensor(&[3, 4], 1.0, 6, "h");
    let (h, y, _) = m.decoder_step(&xbar, &y_prev, &h_prev, &hist).unwrap();
    let att = m.attention.as_ref().unwrap();
    for i in 0..3 {
        let q: Vec<f64> = xbar.row(i).iter().chain(y_prev.row(i)).copied().collect();
        let hw = scalar_gru(&m.decoder_gru, h_prev.row(i), &q);
        let proj: Vec<f64> = (0..4).map(|b| (0..4).map(|a| hw[a] * att.w_a.get(a, b)).sum()).collect();
        let scores: Vec<f64> = hist.iter().map(|e| proj.iter().zip(e.row(i)).map(|(a, b)| a * b).sum()).collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        let w: Vec<f64> = scores.iter().map(|s| s.exp() / z).collect();
        let ctx: Vec<f64> = (0..4).map(|k| (0..3).map(|t| w[t] * hist[t].get(i, k)).sum()).collect();
        let cd: Vec<f64> = ctx.iter().chain(&hw).copied().collect();
        let pi: Vec<f64> = lin(&att.w_c, &cd).into_iter().map(f64::tanh).collect();
        let yw = scalar_mlp(&m.decoder_mlp, &pi);
        for (a, b) in h.row(i).iter().zip(&hw) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((y.data()[i] - yw[0]).abs() < 1e-12);
    }
}

#[test]
fn decoder_without_attention_ignores_history() {
    let m = model(Variant::GnnGru, 4, 3, 2, 7);
    let xbar = uniform_tensor(&[3, 32], 1.0, 4, "xbar");
    let y_prev = uniform_tensor(&[3, 1], 1.0, 5, "y");
    let h_prev = uniform_tensor(&[3, 4], 1.0, 6, "h");
    let a: Vec<Tensor> = (0..3).map(|t| uniform_tensor(&[3, 4], 1.0, t, "enc")).collect();
    let b: Vec<Tensor> = (0..5).map(|t| uniform_tensor(&[3, 4], 1.0, 50 + t, "enc")).collect();
    let ya = m.decoder_step(&xbar, &y_prev, &h_prev, &a).unwrap().1;
    let yb = m.decoder_step(&xbar, &y_prev, &h_prev, &b).unwrap().1;
    assert_eq!(ya, yb);
}

#[test]
fn forward_equals_hand_unrolled_steps() {
    for v in Variant::ALL {
        let m = model(v, 4, 3, 2, 11);
        let s = sample(full_graph(), 3, 2, 12);
        let pred = m.predict(&s).unwrap();
        assert_eq!(pred.shape(), &[2, 3]);

        let mut h = Tensor::zeros(&[3, 4]);
        let mut hist = Vec::new();
        let mut y = Tensor::zeros(&[3, 1]);
        for t in 0..3 {
            let p = m.encoder_input(&s, t).unwrap();
            let (h2, y2, _) = m.encoder_step(&p, &s.graph, Some(&*s.edge_attrs[t]), &h).unwrap();
            hist.push(h2.clone());
            h = h2;
            y = y2;
        }
        for t in 0..2 {
            let xbar = m.embed.forward(&s.graph.coords, s.calendar[3 + t]).unwrap();
            let (h2, y2, _) = m.decoder_step(&xbar, &y, &h, &hist).unwrap();
            assert_eq!(pred.row(t), y2.data(), "{v} step {t}");
            h = h2;
            y = y2;
        }
    }
}

#[test]
fn single_forecast_step() {
    let m = model(Variant::AgnnGru, 4, 3, 1, 2);
    let s = sample(full_graph(), 3, 1, 3);
    let tr = m.forward_trace(&s).unwrap();
    assert_eq!(tr.predictions.shape(), &[1, 3]);
    let xbar = m.embed.forward(&s.graph.coords, s.calendar[3]).unwrap();
    let (_, y, _) = m
        .decoder_step(&xbar, &tr.state.last_prediction, &tr.state.final_hidden, &tr.state.hidden_history)
        .unwrap();
    assert_eq!(tr.predictions.data(), y.data());
    assert_eq!(tr.state.hidden_history.len(), 3);
}

#[test]
fn future_targets_are_never_read() {
    let m = model(Variant::AgnnGru, 4, 3, 2, 2);
    let s = sample(full_graph(), 3, 2, 3);
    let mut s2 = s.clone();
    s2.y_future.fill(f64::NAN);
    assert_eq!(m.predict(&s).unwrap(), m.predict(&s2).unwrap());
}

#[test]
fn last_history_target_feeds_the_decoder() {
    let m = model(Variant::AgnnGru, 4, 3, 2, 2);
    let s = sample(full_graph(), 3, 2, 3);
    let mut s2 = s.clone();
    let v = s2.y_history.get(2, 1);
    s2.y_history.row_mut(2)[1] = v + 0.5;
    let a = m.predict(&s).unwrap();
    let b = m.predict(&s2).unwrap();
    assert_ne!(a.row(0)[1], b.row(0)[1]);
}

#[test]
fn variant_reduction() {
    let norm = CoordNorm::fit(&full_graph().coords);
    let s = sample(full_graph(), 3, 2, 9);
    let mut cfg = ModelConfig::new(Variant::AgnnGru, D_ATTR, 4, 3, 2);
    cfg.use_attention = false;
    let a = build_variant(&cfg, norm, 21).unwrap();
    let b = build_variant(&ModelConfig::new(Variant::GnnGru, D_ATTR, 4, 3, 2), norm, 21).unwrap();
    assert_eq!(a.predict(&s).unwrap(), b.predict(&s).unwrap());

    cfg.graph_mode = GraphMode::None;
    let a = build_variant(&cfg, norm, 21).unwrap();
    let b = build_variant(&ModelConfig::new(Variant::Gru, D_ATTR, 4, 3, 2), norm, 21).unwrap();
    assert_eq!(a.predict(&s).unwrap(), b.predict(&s).unwrap());
}

#[test]
fn parameter_accounting() {
    let gru = model(Variant::Gru, 16, 24, 12, 0);
    assert_eq!(gru.graph_parameter_count(), 0);
    let gnn = model(Variant::GnnGru, 16, 24, 12, 0);
    let agnn = model(Variant::AgnnGru, 16, 24, 12, 0);
    assert_eq!(gnn.attention_parameter_count(), 0);
    assert_eq!(
        agnn.num_parameters() - gnn.num_parameters(),
        agnn.attention_parameter_count()
    );

    // hidden 16, d_attr 9, embed 8, edge attrs 5, MLP hidden 16, biases on
    let cfg = ModelConfig::new(Variant::AgnnGru, 9, 16, 24, 12);
    let m = build_variant(&cfg, CoordNorm::default(), 0).unwrap();
    let (h, e, p) = (16, 8, 9 + 32 + 1);
    let linear = |i: usize, o: usize, b: bool| i * o + if b { o } else { 0 };
    let embed = 24 * e + 7 * e + 12 * e + linear(2, e, true);
    let conv = 2 * linear(p, h, true) + 2 * linear(p, h, true) + linear(5, h, false) + linear(5, h, false);
    let enc_gru = 3 * linear(h + p + h, h, true);
    let mlp = linear(h, h, true) + linear(h, 1, true);
    let dec_gru = 3 * linear(h + 33, h, true);
    let att = h * h + linear(2 * h, h, true);
    assert_eq!(m.num_parameters(), embed + conv + enc_gru + mlp + dec_gru + att + mlp);
    assert_eq!(m.graph_parameter_count(), conv);
    assert_eq!(m.attention_parameter_count(), att);
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for v in Variant::ALL {
        for aux in [false, true] {
            let mut m = model(v, 4, 3, 2, 31);
            m.config.aux_loss = aux;
            let s = sample(full_graph(), 3, 2, 32);
            let (_, grad) = m.loss_and_gradient(&s).unwrap();
            let rep = check_parameters(&mut m, &grad, |mm| mm.loss_and_gradient(&s).unwrap().0, 1e-5, 1e-7);
            assert!(rep.max_relative_error < 1e-3, "{v} aux={aux}: {rep:?}");
        }
    }
}

#[test]
fn permutation_consistency() {
    let perm = [2, 0, 1];
    for v in Variant::ALL {
        let m = model(v, 4, 3, 2, 41);
        let s = sample(full_graph(), 3, 2, 42);
        let sp = s.permuted(&perm).unwrap();
        let a = m.predict(&s).unwrap();
        let b = m.predict(&sp).unwrap();
        for r in 0..2 {
            for (old, &new) in perm.iter().enumerate() {
                let (x, y) = (a.get(r, old), b.get(r, new));
                assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{v}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn checkpoint_roundtrip() {
    let m = model(Variant::AgnnGru, 4, 3, 2, 51);
    let ck = m.to_checkpoint();
    let mut buf = Vec::new();
    ck.write_to(&mut buf).unwrap();
    let back = ForecastModel::from_checkpoint(&Checkpoint::read_from(&mut buf.as_slice()).unwrap()).unwrap();
    assert_eq!(back, m);

    let mut bad = ck.clone();
    bad.meta.insert("model.config_hash".into(), "00".into());
    assert!(ForecastModel::from_checkpoint(&bad).is_err());
}

#[test]
fn deterministic_forward() {
    let m = model(Variant::AgnnGru, 4, 3, 2, 61);
    let s = sample(full_graph(), 3, 2, 62);
    let a: Vec<u64> = m.predict(&s).unwrap().data().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u64> = m.predict(&s).unwrap().data().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
}
