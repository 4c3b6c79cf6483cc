use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::substrate::Tensor;

fn leaf(tape: &mut Tape<f64>, shape: &[usize], data: &[f64]) -> Var {
    tape.leaf(Tensor::new(shape.to_vec(), data.to_vec()).unwrap())
        .unwrap()
}

fn dims(n: usize, fi: usize, fh: usize, q: usize, fo: usize, d: usize) -> LayerDims {
    LayerDims {
        nodes: n,
        input_width: fi,
        head_width: fh,
        heads: q,
        output_width: fo,
        embed_dim: d,
    }
}

fn leaky(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

// ── adaptive adjacency ──

#[test]
fn zero_embedding_gives_uniform_adjacency() {
    let mut tape = Tape::new();
    let e = leaf(&mut tape, &[3, 2], &[0.0; 6]);
    let adj = adaptive_adjacency(&mut tape, e).unwrap();
    let v = tape.value(adj).data();
    for &x in v {
        assert!((x - 1.0 / 3.0).abs() < 1e-15, "expected uniform, got {x}");
    }
}

#[test]
fn orthogonal_embedding_adjacency_matches_logistic_form() {
    // E = 2*I: E·Eᵀ = 4*I, relu unchanged, each row softmaxes [4, 0] (or [0, 4])
    // so the diagonal entry is 1/(1 + e^-4).
    let mut tape = Tape::new();
    let e = leaf(&mut tape, &[2, 2], &[2.0, 0.0, 0.0, 2.0]);
    let adj = adaptive_adjacency(&mut tape, e).unwrap();
    let p = 1.0 / (1.0 + (-4.0f64).exp());
    let v = tape.value(adj).data();
    assert!((v[0] - p).abs() < 1e-12);
    assert!((v[1] - (1.0 - p)).abs() < 1e-12);
    assert!((v[2] - (1.0 - p)).abs() < 1e-12);
    assert!((v[3] - p).abs() < 1e-12);
}

#[test]
fn single_node_adjacency_is_one() {
    let mut tape = Tape::new();
    let e = leaf(&mut tape, &[1, 4], &[0.3, -0.9, 2.0, 0.1]);
    let adj = adaptive_adjacency(&mut tape, e).unwrap();
    assert_eq!(tape.value(adj).data(), &[1.0]);
}

#[test]
fn adjacency_rows_are_distributions_for_random_embeddings() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for draw in 0..100 {
        let n = 2 + (draw % 7);
        let d = 1 + (draw % 5);
        let scale = 10.0 * rng.random::<f64>();
        let data: Vec<f64> = (0..n * d).map(|_| (rng.random::<f64>() - 0.5) * scale).collect();
        let mut tape = Tape::new();
        let e = leaf(&mut tape, &[n, d], &data);
        let adj = adaptive_adjacency(&mut tape, e).unwrap();
        let v = tape.value(adj).data();
        for r in 0..n {
            let row = &v[r * n..(r + 1) * n];
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "draw {draw} row {r} sums to {sum}");
            assert!(row.iter().all(|&x| x >= 0.0), "draw {draw} row {r} has a negative entry");
        }
    }
}

// ── per-node weights ──

#[test]
fn one_hot_embedding_selects_pool_slice() {
    let mut tape = Tape::new();
    let e = leaf(&mut tape, &[2, 3], &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let pool_data: Vec<f64> = (0..3 * 2 * 2).map(|v| v as f64).collect();
    let p = leaf(&mut tape, &[3, 2, 2], &pool_data);
    let w = per_node_weights(&mut tape, e, p).unwrap();
    assert_eq!(tape.value(w).shape(), &[2, 2, 2]);
    // Node 0 picks slice 1 of the pool, node 1 picks slice 2 — exactly.
    assert_eq!(&tape.value(w).data()[..4], &pool_data[4..8]);
    assert_eq!(&tape.value(w).data()[4..], &pool_data[8..12]);
}

#[test]
fn zero_embedding_gives_zero_weights() {
    let mut tape = Tape::new();
    let e = leaf(&mut tape, &[2, 3], &[0.0; 6]);
    let p = leaf(&mut tape, &[3, 2, 2], &[1.0; 12]);
    let w = per_node_weights(&mut tape, e, p).unwrap();
    assert!(tape.value(w).data().iter().all(|&v| v == 0.0));
}

#[test]
fn per_node_weights_match_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, d, fi, fo) = (3, 2, 2, 4);
    let e_data: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>() - 0.5).collect();
    let p_data: Vec<f64> = (0..d * fi * fo).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut tape = Tape::new();
    let e = leaf(&mut tape, &[n, d], &e_data);
    let p = leaf(&mut tape, &[d, fi, fo], &p_data);
    let w = per_node_weights(&mut tape, e, p).unwrap();
    for i in 0..n {
        for a in 0..fi {
            for b in 0..fo {
                let mut want = 0.0;
                for k in 0..d {
                    want += e_data[i * d + k] * p_data[(k * fi + a) * fo + b];
                }
                let got = tape.value(w).at(&[i, a, b]);
                assert!((got - want).abs() < 1e-12, "({i},{a},{b}): {got} vs {want}");
            }
        }
    }
}

// ── attention scores ──

#[test]
fn identical_rows_attend_uniformly() {
    let mut tape = Tape::new();
    let z = leaf(&mut tape, &[3, 2], &[0.7, -0.2, 0.7, -0.2, 0.7, -0.2]);
    let a = leaf(&mut tape, &[4], &[0.5, -1.0, 0.3, 0.9]);
    let alpha = attention_scores(&mut tape, z, a).unwrap();
    for &v in tape.value(alpha).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn single_node_attends_to_itself() {
    let mut tape = Tape::new();
    let z = leaf(&mut tape, &[1, 2], &[0.4, -1.1]);
    let a = leaf(&mut tape, &[4], &[1.0, 2.0, 3.0, 4.0]);
    let alpha = attention_scores(&mut tape, z, a).unwrap();
    assert_eq!(tape.value(alpha).data(), &[1.0]);
}

#[test]
fn scores_match_term_by_term_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (n, w) = (3, 2);
    let z_data: Vec<f64> = (0..n * w).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
    let a_data: Vec<f64> = (0..2 * w).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
    let mut tape = Tape::new();
    let z = leaf(&mut tape, &[n, w], &z_data);
    let a = leaf(&mut tape, &[2 * w], &a_data);
    let alpha = attention_scores(&mut tape, z, a).unwrap();

    // Straight-line recomputation: e_ij = leaky(a1·z_i + a2·z_j), row softmax.
    for i in 0..n {
        let mut row = vec![0.0f64; n];
        for (j, r) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in 0..w {
                s += a_data[k] * z_data[i * w + k] + a_data[w + k] * z_data[j * w + k];
            }
            *r = leaky(s);
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for j in 0..n {
            let want = exps[j] / sum;
            let got = tape.value(alpha).at(&[i, j]);
            assert!((got - want).abs() < 1e-12, "alpha[{i},{j}] {got} vs {want}");
        }
    }
}

#[test]
fn scores_reject_wrong_attention_width() {
    let mut tape = Tape::new();
    let z = leaf(&mut tape, &[2, 3], &[0.0; 6]);
    let a = leaf(&mut tape, &[4], &[0.0; 4]);
    let err = attention_scores(&mut tape, z, a).unwrap_err();
    assert!(matches!(err, SubstrateError::ShapeMismatch { .. }));
}

// ── aggregation ──

#[test]
fn uniform_weights_average_the_transformed_features() {
    let mut tape = Tape::new();
    let z = leaf(&mut tape, &[3, 2], &[1.0, -6.0, 2.0, 0.0, 3.0, 3.0]);
    let a = leaf(&mut tape, &[4], &[0.0; 4]); // zero scoring vector => uniform alpha
    let alpha = attention_scores(&mut tape, z, a).unwrap();
    let adj = leaf(&mut tape, &[3, 3], &[1.0 / 3.0; 9]);
    let out = head_aggregate(&mut tape, z, alpha, adj).unwrap();
    // Column means: (1+2+3)/3 = 2, (-6+0+3)/3 = -1 -> leaky => -0.2.
    for i in 0..3 {
        assert!((tape.value(out).at(&[i, 0]) - 2.0).abs() < 1e-15);
        assert!((tape.value(out).at(&[i, 1]) + 0.2).abs() < 1e-15);
    }
}

#[test]
fn combined_weights_rows_sum_to_one() {
    // Aggregating a constant-ones feature must return leaky(1) = 1 everywhere;
    // anything else means the fused weights are not a distribution.
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for draw in 0..100 {
        let n = 2 + (draw % 6);
        let mut tape = Tape::new();
        let e_data: Vec<f64> = (0..n * 3).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
        let e = leaf(&mut tape, &[n, 3], &e_data);
        let adj = adaptive_adjacency(&mut tape, e).unwrap();
        let z_scores: Vec<f64> = (0..n * 2).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let zs = leaf(&mut tape, &[n, 2], &z_scores);
        let a_data: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
        let a = leaf(&mut tape, &[4], &a_data);
        let alpha = attention_scores(&mut tape, zs, a).unwrap();
        let ones = leaf(&mut tape, &[n, 1], &vec![1.0; n]);
        let out = head_aggregate(&mut tape, ones, alpha, adj).unwrap();
        for &v in tape.value(out).data() {
            assert!((v - 1.0).abs() < 1e-12, "draw {draw}: row weight sum drifted, got {v}");
        }
    }
}

#[test]
fn identity_adjacency_keeps_nodes_isolated() {
    let mut params = ParamSet::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = dims(3, 2, 2, 2, 2, 4);
    let layer =
        GraphAttentionLayer::register(&mut params, &mut rng, "iso", d, false).unwrap();
    let mut tape = Tape::new();
    let vars = params.register_on(&mut tape).unwrap();
    let eye = leaf(
        &mut tape,
        &[3, 3],
        &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
    );
    let prep = layer.prepare(&mut tape, &vars, Some(eye)).unwrap();
    let x_data = [0.4, -0.8, 1.2, 0.3, -0.5, 0.9];
    let x = leaf(&mut tape, &[3, 2], &x_data);
    let y = layer_forward(&mut tape, &prep, x).unwrap();

    // With adjacency = I the fused weights renormalize to I, so every pass is
    // node-local: changing node 2's features must not move nodes 0 and 1.
    let mut poked = x_data;
    poked[4] += 3.0;
    poked[5] -= 2.0;
    let xp = leaf(&mut tape, &[3, 2], &poked);
    let yp = layer_forward(&mut tape, &prep, xp).unwrap();
    for node in 0..2 {
        for f in 0..2 {
            assert_eq!(
                tape.value(y).at(&[node, f]),
                tape.value(yp).at(&[node, f]),
                "node {node} moved despite identity adjacency"
            );
        }
    }
}

// ── full layer ──

fn build_layer(
    n: usize,
    fi: usize,
    fh: usize,
    q: usize,
    fo: usize,
    d: usize,
    seed: u64,
) -> (GraphAttentionLayer, ParamSet<f64>) {
    let mut params = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layer = GraphAttentionLayer::register(
        &mut params,
        &mut rng,
        "layer",
        dims(n, fi, fh, q, fo, d),
        true,
    )
    .unwrap();
    (layer, params)
}

fn forward_layer(
    layer: &GraphAttentionLayer,
    params: &ParamSet<f64>,
    x: &Tensor<f64>,
) -> (Tape<f64>, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars = params.register_on(&mut tape).unwrap();
    let prep = layer.prepare(&mut tape, &vars, None).unwrap();
    let xv = tape.leaf(x.clone()).unwrap();
    let y = layer_forward(&mut tape, &prep, xv).unwrap();
    (tape, vars, y)
}

#[test]
fn layer_output_shapes() {
    let (layer, params) = build_layer(4, 3, 5, 1, 2, 3, 0);
    let x = Tensor::from_fn(&[4, 3], |i| (i[0] + i[1]) as f64 * 0.1);
    let (tape, _, y) = forward_layer(&layer, &params, &x);
    assert_eq!(tape.value(y).shape(), &[4, 2]);

    let xb = Tensor::from_fn(&[2, 4, 3], |i| (i[0] * 7 + i[1] + i[2]) as f64 * 0.05);
    let (tape, _, yb) = forward_layer(&layer, &params, &xb);
    assert_eq!(tape.value(yb).shape(), &[2, 4, 2]);
}

#[test]
fn zero_input_gives_finite_zero_output() {
    let (layer, params) = build_layer(3, 2, 4, 2, 3, 2, 1);
    let x = Tensor::zeros(&[3, 2]);
    let (tape, _, y) = forward_layer(&layer, &params, &x);
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn parameter_count_matches_closed_form() {
    for adaptive in [true, false] {
        let mut params = ParamSet::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = dims(5, 3, 4, 2, 6, 3);
        GraphAttentionLayer::register(&mut params, &mut rng, "c", d, adaptive).unwrap();
        assert_eq!(
            params.total_elements(),
            d.parameter_count(adaptive),
            "adaptive={adaptive}"
        );
    }
}

#[test]
fn gradients_reach_every_parameter_and_match_finite_differences() {
    let (layer, params) = build_layer(3, 2, 3, 2, 2, 2, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let x = Tensor::from_fn(&[3, 2], |_| 2.0 * rng.random::<f64>() - 1.0);
    let probe = Tensor::from_fn(&[3, 2], |_| 2.0 * rng.random::<f64>() - 1.0);

    let loss_of = |p: &ParamSet<f64>| -> f64 {
        let (mut tape, _, y) = forward_layer(&layer, p, &x);
        let pv = tape.leaf(probe.clone()).unwrap();
        let weighted = tape.mul(y, pv).unwrap();
        let loss = tape.sum_all(weighted).unwrap();
        tape.value(loss).data()[0]
    };

    let mut tracked = params.clone();
    let (mut tape, vars, y) = forward_layer(&layer, &params, &x);
    let pv = tape.leaf(probe.clone()).unwrap();
    let weighted = tape.mul(y, pv).unwrap();
    let loss = tape.sum_all(weighted).unwrap();
    tape.backward(loss).unwrap();
    tracked.collect_grads(&tape, &vars);

    let h = 1e-5;
    for (pi, param) in tracked.iter().enumerate() {
        let mut max_mag = 0.0f64;
        for e in 0..param.value.numel() {
            let mut plus = params.clone();
            plus.get_mut(crate::substrate::ParamId(pi)).value.data_mut()[e] += h;
            let mut minus = params.clone();
            minus.get_mut(crate::substrate::ParamId(pi)).value.data_mut()[e] -= h;
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let analytic = param.grad.data()[e];
            let rel = (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-6);
            assert!(
                rel < 1e-4,
                "{} element {e}: numeric {numeric:.8e} vs analytic {analytic:.8e}",
                param.name
            );
            max_mag = max_mag.max(analytic.abs());
        }
        assert!(
            max_mag > 1e-12,
            "{} received no gradient at a generic input",
            param.name
        );
    }
}

#[test]
fn permuting_nodes_permutes_outputs() {
    let (layer, params) = build_layer(4, 3, 3, 2, 2, 3, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let x = Tensor::from_fn(&[4, 3], |_| 2.0 * rng.random::<f64>() - 1.0);
    let perm = [2usize, 0, 3, 1];

    let permute_rows =
        |t: &Tensor<f64>| Tensor::from_fn(t.shape(), |idx| t.at(&[perm[idx[0]], idx[1]]));

    let mut permuted = params.clone();
    for p in permuted.iter_mut() {
        if p.name.ends_with("embedding") {
            let orig = p.value.clone();
            p.value = Tensor::from_fn(orig.shape(), |idx| orig.at(&[perm[idx[0]], idx[1]]));
        }
    }

    let (tape_a, _, y_a) = forward_layer(&layer, &params, &x);
    let (tape_b, _, y_b) = forward_layer(&layer, &permuted, &permute_rows(&x));
    for i in 0..4 {
        for f in 0..2 {
            let a = tape_a.value(y_a).at(&[perm[i], f]);
            let b = tape_b.value(y_b).at(&[i, f]);
            assert!(
                (a - b).abs() < 1e-12,
                "node {i} feature {f}: {a} vs {b} after permutation"
            );
        }
    }
}
