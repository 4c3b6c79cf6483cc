//! Straight-line re-implementations of the layer math, shared by the module
//! tests as independent oracles. Everything here is explicit loops over
//! `Vec<Vec<f64>>` rows — no tape, no broadcasting — so a disagreement with
//! the real forward pass points at the graph code, not at a shared bug.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::attention::LEAKY_SLOPE;
use crate::substrate::{ParamSet, Tensor};

pub fn fill(params: &mut ParamSet<f64>, name: &str, value: f64) {
    let id = params
        .index_of(name)
        .unwrap_or_else(|| panic!("no parameter named {name}"));
    for v in params.get_mut(id).value.data_mut() {
        *v = value;
    }
}

pub fn tensor_of(params: &ParamSet<f64>, name: &str) -> Tensor<f64> {
    let id = params
        .index_of(name)
        .unwrap_or_else(|| panic!("no parameter named {name}"));
    params.get(id).value.clone()
}

pub struct GateTensors {
    pub emb: Tensor<f64>,
    pub pools: Vec<Tensor<f64>>,
    pub attns: Vec<Tensor<f64>>,
    pub out_emb: Tensor<f64>,
    pub out_pool: Tensor<f64>,
    pub out_attn: Tensor<f64>,
}

pub fn gate_tensors(params: &ParamSet<f64>, prefix: &str, heads: usize) -> GateTensors {
    GateTensors {
        emb: tensor_of(params, &format!("{prefix}.embedding")),
        pools: (0..heads)
            .map(|q| tensor_of(params, &format!("{prefix}.head{q}.pool")))
            .collect(),
        attns: (0..heads)
            .map(|q| tensor_of(params, &format!("{prefix}.head{q}.attn")))
            .collect(),
        out_emb: tensor_of(params, &format!("{prefix}.out.embedding")),
        out_pool: tensor_of(params, &format!("{prefix}.out.pool")),
        out_attn: tensor_of(params, &format!("{prefix}.out.attn")),
    }
}

/// All three gates of one recurrent cell plus its optional residual mix.
pub struct CellTensors {
    pub update: GateTensors,
    pub reset: GateTensors,
    pub candidate: GateTensors,
    pub mix: Option<(Tensor<f64>, Tensor<f64>)>,
}

pub fn cell_tensors(
    params: &ParamSet<f64>,
    prefix: &str,
    heads: usize,
    with_residual: bool,
) -> CellTensors {
    CellTensors {
        update: gate_tensors(params, &format!("{prefix}.update"), heads),
        reset: gate_tensors(params, &format!("{prefix}.reset"), heads),
        candidate: gate_tensors(params, &format!("{prefix}.candidate"), heads),
        mix: with_residual.then(|| {
            (
                tensor_of(params, &format!("{prefix}.mix_input")),
                tensor_of(params, &format!("{prefix}.mix_hidden")),
            )
        }),
    }
}

pub fn leaky(v: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

/// Sign-branched logistic, matching the tape's numerically stable form
/// branch for branch so oracles agree to the last bit where possible.
pub fn sig(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn naive_adjacency(emb: &Tensor<f64>) -> Vec<f64> {
    let (n, d) = (emb.shape()[0], emb.shape()[1]);
    let mut adj = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..d {
                s += emb.at(&[i, k]) * emb.at(&[j, k]);
            }
            adj[i * n + j] = s.max(0.0);
        }
    }
    for i in 0..n {
        softmax_in_place(&mut adj[i * n..(i + 1) * n]);
    }
    adj
}

/// One attention pass with explicit loops: per-node transform, scored and
/// renormalized mixing against the supplied adjacency, leaky output.
pub fn naive_pass(
    x: &[Vec<f64>],
    emb: &Tensor<f64>,
    pool: &Tensor<f64>,
    attn: &Tensor<f64>,
    adj: &[f64],
) -> Vec<Vec<f64>> {
    let n = x.len();
    let (d, fi, fo) = (pool.shape()[0], pool.shape()[1], pool.shape()[2]);
    let mut z = vec![vec![0.0; fo]; n];
    for i in 0..n {
        for a in 0..fi {
            for b in 0..fo {
                let mut w = 0.0;
                for k in 0..d {
                    w += emb.at(&[i, k]) * pool.at(&[k, a, b]);
                }
                z[i][b] += x[i][a] * w;
            }
        }
    }
    let mut alpha = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..fo {
                s += attn.at(&[k]) * z[i][k] + attn.at(&[fo + k]) * z[j][k];
            }
            alpha[i * n + j] = leaky(s);
        }
    }
    for i in 0..n {
        softmax_in_place(&mut alpha[i * n..(i + 1) * n]);
    }
    let mut out = vec![vec![0.0; fo]; n];
    for i in 0..n {
        let fused: Vec<f64> = (0..n).map(|j| adj[i * n + j] * alpha[i * n + j]).collect();
        let total: f64 = fused.iter().sum();
        for j in 0..n {
            let w = fused[j] / total;
            for k in 0..fo {
                out[i][k] += w * z[j][k];
            }
        }
        for k in 0..fo {
            out[i][k] = leaky(out[i][k]);
        }
    }
    out
}

pub fn naive_layer(x: &[Vec<f64>], g: &GateTensors) -> Vec<Vec<f64>> {
    let n = x.len();
    let adj = naive_adjacency(&g.emb);
    let mut cat: Vec<Vec<f64>> = vec![Vec::new(); n];
    for q in 0..g.pools.len() {
        let head = naive_pass(x, &g.emb, &g.pools[q], &g.attns[q], &adj);
        for i in 0..n {
            cat[i].extend(&head[i]);
        }
    }
    // The projection pass contracts against its own embedding but mixes over
    // the same learned graph.
    naive_pass(&cat, &g.out_emb, &g.out_pool, &g.out_attn, &adj)
}

pub fn naive_cell_step(
    x: &[Vec<f64>],
    h: &[Vec<f64>],
    update: &GateTensors,
    reset: &GateTensors,
    candidate: &GateTensors,
) -> Vec<Vec<f64>> {
    let n = x.len();
    let joint: Vec<Vec<f64>> = (0..n)
        .map(|i| x[i].iter().chain(&h[i]).copied().collect())
        .collect();
    let z: Vec<Vec<f64>> = naive_layer(&joint, update)
        .iter()
        .map(|r| r.iter().map(|&v| sig(v)).collect())
        .collect();
    let r: Vec<Vec<f64>> = naive_layer(&joint, reset)
        .iter()
        .map(|r| r.iter().map(|&v| sig(v)).collect())
        .collect();
    let gated_in: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            x[i].iter()
                .copied()
                .chain(r[i].iter().zip(&h[i]).map(|(&ri, &hi)| ri * hi))
                .collect()
        })
        .collect();
    let c: Vec<Vec<f64>> = naive_layer(&gated_in, candidate)
        .iter()
        .map(|r| r.iter().map(|&v| v.tanh()).collect())
        .collect();
    (0..n)
        .map(|i| {
            (0..h[i].len())
                .map(|k| z[i][k] * h[i][k] + (1.0 - z[i][k]) * c[i][k])
                .collect()
        })
        .collect()
}

/// Cell step followed by the residual remix (when present): the carried
/// state is relu(x·W_in + h_gated·W_hidden).
pub fn naive_residual_step(x: &[Vec<f64>], h: &[Vec<f64>], cell: &CellTensors) -> Vec<Vec<f64>> {
    let gated = naive_cell_step(x, h, &cell.update, &cell.reset, &cell.candidate);
    let Some((w_in, w_h)) = &cell.mix else {
        return gated;
    };
    let hidden = w_h.shape()[1];
    (0..x.len())
        .map(|i| {
            (0..hidden)
                .map(|b| {
                    let mut s = 0.0;
                    for (a, &xa) in x[i].iter().enumerate() {
                        s += xa * w_in.at(&[a, b]);
                    }
                    for (a, &ga) in gated[i].iter().enumerate() {
                        s += ga * w_h.at(&[a, b]);
                    }
                    s.max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Bidirectional unroll from zero states: `x[node][t]` feature rows in,
/// `[node][t][forward-state || backward-state]` out.
pub fn naive_encode(
    x: &[Vec<Vec<f64>>],
    fwd: &CellTensors,
    bwd: Option<&CellTensors>,
    hidden: usize,
) -> Vec<Vec<Vec<f64>>> {
    let n = x.len();
    let steps = x[0].len();
    let unroll = |cell: &CellTensors, order: Vec<usize>| -> Vec<Vec<Vec<f64>>> {
        let mut states = vec![vec![Vec::new(); steps]; n];
        let mut h = vec![vec![0.0; hidden]; n];
        for &t in &order {
            let x_t: Vec<Vec<f64>> = (0..n).map(|i| x[i][t].clone()).collect();
            h = naive_residual_step(&x_t, &h, cell);
            for i in 0..n {
                states[i][t] = h[i].clone();
            }
        }
        states
    };
    let forward = unroll(fwd, (0..steps).collect());
    let backward = bwd.map(|cell| unroll(cell, (0..steps).rev().collect()));
    (0..n)
        .map(|i| {
            (0..steps)
                .map(|t| {
                    let mut row = forward[i][t].clone();
                    if let Some(b) = &backward {
                        row.extend(&b[i][t]);
                    }
                    row
                })
                .collect()
        })
        .collect()
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, w: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..w).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect())
        .collect()
}

pub fn rows_to_tensor(rows: &[Vec<f64>]) -> Tensor<f64> {
    let data: Vec<f64> = rows.iter().flatten().copied().collect();
    Tensor::new(vec![rows.len(), rows[0].len()], data).unwrap()
}
