use super::*;
use crate::ad::check::gradient_error;
use crate::geometry::Geometry;
use crate::graph::assemble;
use crate::grid::{build_grid, GridPreset};

fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
    Tensor::new(rows, cols, data.to_vec()).unwrap()
}

fn small(variant: Variant) -> ModelConfig {
    ModelConfig { channels: 8, layers: 2, heads: 2, n_global: 3, ..ModelConfig::new(variant) }
}

fn h_graph(variant: Variant, n_global: usize) -> (ElectronGraph, Vec<f64>, Vec<f64>) {
    let grid = build_grid(&Geometry::h2(1.4), &GridPreset::Coarse).unwrap();
    let base = GraphConfig { n_global, ..GraphConfig::default() };
    let graph = assemble(&grid, &variant.graph_config(&base)).unwrap();
    let n: Vec<f64> = grid.points.iter().map(|p| (-(p[0] * p[0] + p[1] * p[1] + (p[2] - 0.7).powi(2)).sqrt()).exp() / std::f64::consts::PI).collect();
    let z: Vec<f64> = (0..grid.len()).map(|i| 0.3 * (i as f64 * 0.37).sin()).collect();
    (graph, n, z)
}

fn path_messages() -> MessageGraph {
    // 0 - 1 - 2, local edges of length 1 and 2.
    MessageGraph {
        n_vertices: 3,
        src: vec![1, 0, 2, 1],
        dst: vec![0, 1, 1, 2],
        kind: vec![EdgeKind::Local; 4],
        distance: vec![1.0, 1.0, 2.0, 2.0],
    }
}

#[test]
fn attention_skip_identity() {
    let (graph, ..) = h_graph(Variant::ExphormerFull, 3);
    let cfg = small(Variant::ExphormerFull);
    let g = GraphInputs::new(&graph, &cfg).unwrap();
    let nv = g.n_grid + g.n_global;
    let c = 8;
    let mut tape = Tape::<f64>::new();
    let xdata: Vec<f64> = (0..nv * c).map(|i| (i as f64 * 0.1).cos()).collect();
    let x = tape.constant(t(nv, c, &xdata));
    let mut eye = vec![0.0; c * c];
    (0..c).for_each(|i| eye[i * c + i] = 1.0);
    let w1 = tape.constant(t(c, c, &eye));
    let zq = tape.constant(Tensor::zeros(c, 2 * c));
    let ze = tape.constant(Tensor::zeros(EDGE_FEATURES, 2 * c));
    let wo = tape.constant(t(2 * c, c, &vec![0.3; 2 * c * c]));
    let e = tape.constant(g.edge_features.clone());
    let w = AttentionWeights { w1, wq: zq, wk: zq, wv: zq, we: ze, wo };
    let y = attention_layer(&mut tape, x, &w, e, &g.attention).unwrap();
    assert_eq!(tape.value(y).data, xdata);
    assert_eq!(tape.shape(y), (nv, c));
}

#[test]
fn attention_isolated_vertex_is_skip_map() {
    let msgs = MessageGraph { n_vertices: 1, src: vec![], dst: vec![], kind: vec![], distance: vec![] };
    let cfg = ModelConfig { channels: 2, heads: 1, ..ModelConfig::new(Variant::Transformerconv) };
    let g = GraphInputs::from_messages(&msgs, 1, &cfg).unwrap();
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(1, 2, &[1.0, -2.0]));
    let w1 = tape.constant(t(2, 2, &[2.0, 1.0, 0.5, 3.0]));
    let any = tape.constant(t(2, 2, &[0.7, -0.2, 0.1, 0.4]));
    let we = tape.constant(t(4, 2, &[0.3; 8]));
    let e = tape.constant(g.edge_features.clone());
    let w = AttentionWeights { w1, wq: any, wk: any, wv: any, we, wo: any };
    let y = attention_layer(&mut tape, x, &w, e, &g.attention).unwrap();
    assert_eq!(tape.value(y).data, vec![1.0, -5.0]);
}

#[test]
fn attention_path_graph_by_hand() {
    let cfg = ModelConfig { channels: 1, heads: 1, ..ModelConfig::new(Variant::Transformerconv) };
    let g = GraphInputs::from_messages(&path_messages(), 3, &cfg).unwrap();
    let (w1, wq, wk, wv, wo) = (0.5, 1.2, -0.7, 2.0, 1.5);
    let we = [0.1, 0.0, 0.0, 0.3];
    let xs = [0.4, -1.0, 2.0];
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(3, 1, &xs));
    let s = |v: f64, tape: &mut Tape<f64>| tape.constant(t(1, 1, &[v]));
    let w = AttentionWeights { w1: s(w1, &mut tape), wq: s(wq, &mut tape), wk: s(wk, &mut tape), wv: s(wv, &mut tape), we: tape.constant(t(4, 1, &we)), wo: s(wo, &mut tape) };
    let e = tape.constant(g.edge_features.clone());
    let y = attention_layer(&mut tape, x, &w, e, &g.attention).unwrap();
    let got = tape.value(y).data.clone();

    let edge = |r: f64| we[0] + we[3] * r;
    let hand = |i: usize, nbrs: &[(usize, f64)]| {
        let q = wq * xs[i];
        let scores: Vec<f64> = nbrs.iter().map(|&(j, r)| q * (wk * xs[j] + edge(r))).collect();
        let m = scores.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        let agg: f64 = nbrs.iter().zip(&scores).map(|(&(j, r), s)| (s - m).exp() / z * (wv * xs[j] + edge(r))).sum();
        w1 * xs[i] + wo * agg
    };
    let want = [hand(0, &[(1, 1.0)]), hand(1, &[(0, 1.0), (2, 2.0)]), hand(2, &[(1, 2.0)])];
    for (a, b) in got.iter().zip(want) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
}

#[test]
fn gcn_isolated_vertex_and_path() {
    let mut tape = Tape::<f64>::new();
    let norm = GcnNorm::new(1, vec![], vec![], &[]).unwrap();
    let x = tape.constant(t(1, 2, &[3.0, -1.0]));
    let eye = tape.constant(t(2, 2, &[1.0, 0.0, 0.0, 1.0]));
    let zb = tape.constant(Tensor::zeros(1, 2));
    let y = gcn_layer(&mut tape, x, eye, zb, &norm).unwrap();
    assert_eq!(tape.value(y).data, vec![3.0, -1.0]);

    // Two vertices joined by an edge of length 4, weighted by 1/√r.
    let (a, b, w, c) = (0.6, -1.4, 2.5, 0.1);
    let norm = GcnNorm::new(2, vec![1, 0], vec![0, 1], &[0.5, 0.5]).unwrap();
    let x = tape.constant(t(2, 1, &[a, b]));
    let wv = tape.constant(t(1, 1, &[w]));
    let bv = tape.constant(t(1, 1, &[c]));
    let y = gcn_layer(&mut tape, x, wv, bv, &norm).unwrap();
    let got = &tape.value(y).data;
    assert!((got[0] - (w * (2.0 * a / 3.0 + b / 3.0) + c)).abs() < 1e-15);
    assert!((got[1] - (w * (a / 3.0 + 2.0 * b / 3.0) + c)).abs() < 1e-15);

    // Model-level normalization uses 1/√r for the distance variant.
    let cfg = ModelConfig { channels: 1, heads: 1, ..ModelConfig::new(Variant::GcnDistance) };
    let gi = GraphInputs::from_messages(&path_messages(), 3, &cfg).unwrap();
    let d1 = 1.0 + 1.0 + 1.0 / 2f64.sqrt();
    assert!((gi.gcn.self_coef[1] - 1.0 / d1).abs() < 1e-15);
    assert!((gi.gcn.coef[0] - 1.0 / (2.0 * d1).sqrt()).abs() < 1e-15);
}

#[test]
fn nnconv_identity_edge_network_sums_neighbours() {
    let c = 2;
    let m = Messages { n_vertices: 3, src: Arc::new(vec![1, 0, 2, 1]), dst: Arc::new(vec![0, 1, 1, 2]) };
    let mut tape = Tape::<f64>::new();
    let xs = [1.0, 2.0, -3.0, 0.5, 4.0, 1.5];
    let x = tape.constant(t(3, c, &xs));
    let feat = tape.constant(t(4, 4, &[0.2; 16]));
    let w = NnConvWeights {
        theta: tape.constant(Tensor::zeros(c, c)),
        g1_w: tape.constant(t(4, 3, &[0.3; 12])),
        g1_b: tape.constant(Tensor::zeros(1, 3)),
        g2_w: tape.constant(Tensor::zeros(3, c * c)),
        g2_b: tape.constant(t(1, c * c, &[1.0, 0.0, 0.0, 1.0])),
        b: tape.constant(Tensor::zeros(1, c)),
    };
    let y = nnconv_layer(&mut tape, x, &w, feat, &m).unwrap();
    assert_eq!(tape.value(y).data, vec![-3.0, 0.5, 5.0, 3.5, -3.0, 0.5]);
}

#[test]
fn zero_parameters_give_readout_bias() {
    for v in Variant::ALL {
        let cfg = small(v);
        let (graph, n, z) = h_graph(v, 3);
        let g = GraphInputs::new(&graph, &cfg).unwrap();
        let mut model = Model::init(cfg, 1).unwrap();
        for x in model.params.values_mut() {
            x.data.iter_mut().for_each(|a| *a = 0.0);
        }
        model.params.get_mut("readout.b").unwrap().data[0] = 0.37;
        let f = model.evaluate(&n, &z, &g).unwrap();
        assert_eq!(f.len(), g.n_grid);
        assert!(f.iter().all(|&x| x == 0.37), "{v:?}");
    }
}

#[test]
fn init_is_seeded_and_starts_at_zero_beta() {
    let a = Model::init(ModelConfig::new(Variant::ExphormerFull), 7).unwrap();
    let b = Model::init(ModelConfig::new(Variant::ExphormerFull), 7).unwrap();
    let c = Model::init(ModelConfig::new(Variant::ExphormerFull), 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.params.flat(), c.params.flat());
    assert_eq!(a.beta(), 0.0);
    assert!(a.params.get("readout.w").unwrap().data.iter().any(|&x| x != 0.0));
    let bound = 1.0 / 32f64.sqrt();
    assert!(a.params.get("layer0.wq").unwrap().data.iter().all(|x| x.abs() <= bound));
    assert_eq!(a.params.get("layer0.wq").unwrap().shape(), (32, 96));
    assert_eq!(a.params.get("layer0.wo").unwrap().shape(), (96, 32));
}

fn permuted(msgs: &MessageGraph, perm: &[usize]) -> MessageGraph {
    let mut m: Vec<(usize, usize, EdgeKind, f64)> = (0..msgs.n_messages()).map(|k| (perm[msgs.src[k]], perm[msgs.dst[k]], msgs.kind[k], msgs.distance[k])).collect();
    m.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
    MessageGraph {
        n_vertices: msgs.n_vertices,
        src: m.iter().map(|x| x.0).collect(),
        dst: m.iter().map(|x| x.1).collect(),
        kind: m.iter().map(|x| x.2).collect(),
        distance: m.iter().map(|x| x.3).collect(),
    }
}

#[test]
fn permutation_equivariance() {
    for v in [Variant::ExphormerFull, Variant::Gcn, Variant::Nnconv, Variant::NnLda] {
        let cfg = small(v);
        let (graph, n, z) = h_graph(v, 3);
        let model = Model::init(cfg.clone(), 3).unwrap();
        let g = GraphInputs::new(&graph, &cfg).unwrap();
        let f = model.evaluate(&n, &z, &g).unwrap();

        let ng = graph.n_grid;
        let nv = g.n_grid + g.n_global;
        // Grid vertices reversed, global vertices kept in place.
        let perm: Vec<usize> = (0..nv).map(|i| if i < ng { ng - 1 - i } else { i }).collect();
        let msgs = graph.messages().filter(|k| v.keeps(k));
        let msgs = MessageGraph { n_vertices: nv, ..msgs };
        let gp = GraphInputs::from_messages(&permuted(&msgs, &perm), ng, &cfg).unwrap();
        let mut np = vec![0.0; ng];
        let mut zp = vec![0.0; ng];
        for i in 0..ng {
            np[perm[i]] = n[i];
            zp[perm[i]] = z[i];
        }
        let fp = model.evaluate(&np, &zp, &gp).unwrap();
        for i in 0..ng {
            assert!((fp[perm[i]] - f[i]).abs() < 1e-12 * (1.0 + f[i].abs()), "{v:?} vertex {i}");
        }
    }
}

#[test]
fn density_gradient_matches_finite_differences() {
    for v in [Variant::ExphormerFull, Variant::GcnDistance, Variant::Nnconv, Variant::NnLda] {
        let cfg = small(v);
        let (graph, n, z) = h_graph(v, 3);
        let model = Model::init(cfg.clone(), 11).unwrap();
        let g = GraphInputs::new(&graph, &cfg).unwrap();
        for idx in [0usize, 137, 400] {
            let err = gradient_error(
                |tape, x| {
                    let p = model.params.bind(tape, false);
                    let mut col = n.clone();
                    let rest = tape.constant(Tensor::column(std::mem::take(&mut col)));
                    let onehot = tape.constant(Tensor::column((0..n.len()).map(|i| if i == idx { 1.0 } else { 0.0 }).collect()));
                    let xs = tape.matmul(onehot, x[0])?;
                    let nv = tape.add(rest, xs)?;
                    let zv = tape.constant(Tensor::column(z.clone()));
                    let f = model.forward(tape, &p, nv, zv, &g, None)?;
                    tape.sum(f)
                },
                &[t(1, 1, &[0.0])],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-5, "{v:?} point {idx}: {err}");
        }
    }
}

#[test]
fn parameter_gradients_match_finite_differences() {
    // Without ReLU kinks, so central differences are smooth.
    let cfg = ModelConfig { layer_norm: true, interlayer_activation: false, layers: 2, channels: 4, ..small(Variant::ExphormerFull) };
    let (graph, n, z) = h_graph(Variant::ExphormerFull, 3);
    let model = Model::init(cfg.clone(), 5).unwrap();
    let g = GraphInputs::new(&graph, &cfg).unwrap();
    let inputs: Vec<Tensor<f64>> = model.params.values().to_vec();
    let err = gradient_error(
        |tape, xs| {
            let p = Bound::new(model.params.names().to_vec(), xs.to_vec());
            let nv = tape.constant(Tensor::column(n.clone()));
            let zv = tape.constant(Tensor::column(z.clone()));
            let f = model.forward(tape, &p, nv, zv, &g, None)?;
            let sq = tape.mul(f, f)?;
            tape.sum(sq)
        },
        &inputs,
        // The summed output is large; 1e-5 is already rounding-dominated here.
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn layer_norm_normalizes_rows() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(2, 4, &[1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 5.0, 2.0]));
    let gain = tape.constant(t(1, 4, &[1.0; 4]));
    let bias = tape.constant(Tensor::zeros(1, 4));
    let y = layer_norm(&mut tape, x, gain, bias).unwrap();
    for r in 0..2 {
        let row = tape.value(y).row(r);
        let mean: f64 = row.iter().sum::<f64>() / 4.0;
        let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn dropout_is_seeded() {
    let cfg = ModelConfig { dropout: 0.5, ..small(Variant::ExphormerFull) };
    let (graph, n, z) = h_graph(Variant::ExphormerFull, 3);
    let model = Model::init(cfg.clone(), 5).unwrap();
    let g = GraphInputs::new(&graph, &cfg).unwrap();
    let run = |seed| {
        let mut tape = Tape::<f64>::new();
        let p = model.params.bind(&mut tape, false);
        let nv = tape.constant(Tensor::column(n.clone()));
        let zv = tape.constant(Tensor::column(z.clone()));
        let f = model.forward(&mut tape, &p, nv, zv, &g, seed).unwrap();
        tape.value(f).data.clone()
    };
    assert_eq!(run(Some(1)), run(Some(1)));
    assert_ne!(run(Some(1)), run(Some(2)));
    assert_eq!(run(None), model.evaluate(&n, &z, &g).unwrap());
}

#[test]
fn checkpoint_round_trip() {
    let model = Model::init(ModelConfig::new(Variant::ExphormerFull), 9).unwrap();
    let bytes = model.save(serde_json::json!({"epoch": 3})).unwrap();
    assert_eq!(bytes, model.save(serde_json::json!({"epoch": 3})).unwrap());
    let (back, extra) = Model::load(&bytes).unwrap();
    assert_eq!(back, model);
    assert_eq!(extra["epoch"], 3);
    assert!(Model::load(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Model::load(&bad), Err(Error::Parse(_))));
}

#[test]
fn variant_graph_settings() {
    let base = GraphConfig::default();
    for v in Variant::ALL {
        assert_eq!(Variant::parse(v.name()).unwrap(), v);
        let g = v.graph_config(&base);
        assert_eq!(g.expander_degree > 0, v.uses_expander());
        assert_eq!(g.n_global > 0, v.uses_globals());
    }
    assert!(Variant::parse("mace").is_err());
}

#[test]
fn mismatched_sizes_are_dimension_errors() {
    let cfg = small(Variant::ExphormerFull);
    let (graph, n, z) = h_graph(Variant::ExphormerFull, 3);
    let model = Model::init(cfg.clone(), 1).unwrap();
    let g = GraphInputs::new(&graph, &cfg).unwrap();
    assert!(matches!(model.evaluate(&n[..10], &z[..10], &g), Err(Error::Dimension { .. })));
    let (graph5, ..) = h_graph(Variant::ExphormerFull, 5);
    assert!(matches!(GraphInputs::new(&graph5, &cfg), Err(Error::Dimension { .. })));
}
