//! Graph attention with node-adaptive weights.
//!
//! The layer learns its own graph: a node embedding E produces both an
//! adaptive adjacency softmax(relu(E·Eᵀ)) and, through a weight pool
//! contraction E·W_p, a distinct transform matrix for every node. Attention
//! coefficients computed from the transformed features are fused with the
//! adjacency and renormalized, so aggregation weights stay a proper
//! distribution over neighbors. Q independent heads run in parallel; their
//! concatenated outputs pass through one further attention pass (its own
//! embedding and pool) that projects to the layer's output width.
//!
//! With the fixed-adjacency variant the learned graph is replaced by a
//! row-normalized matrix supplied by the caller and the per-node transforms
//! collapse to one shared matrix — attention vectors stay learnable.

use rand_chacha::ChaCha8Rng;

use crate::init;
use crate::substrate::{ParamId, ParamSet, Scalar, SubstrateError, Tape, Var};

/// Negative-side slope used by every attention activation.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerDims {
    pub nodes: usize,
    /// Feature width coming in.
    pub input_width: usize,
    /// Per-head width before concatenation.
    pub head_width: usize,
    pub heads: usize,
    /// Width after the projection pass.
    pub output_width: usize,
    /// Embedding dimension d of the node-adaptive pools.
    pub embed_dim: usize,
}

impl LayerDims {
    /// Closed-form number of scalar parameters this layer registers.
    pub fn parameter_count(&self, adaptive: bool) -> usize {
        let (n, fi, fh, q, fo, d) = (
            self.nodes,
            self.input_width,
            self.head_width,
            self.heads,
            self.output_width,
            self.embed_dim,
        );
        if adaptive {
            // embedding + Q*(pool + attn) + out embedding + out pool + out attn
            n * d + q * (d * fi * fh + 2 * fh) + n * d + d * (q * fh) * fo + 2 * fo
        } else {
            q * (fi * fh + 2 * fh) + (q * fh) * fo + 2 * fo
        }
    }
}

/// How node features are mapped to head space.
#[derive(Clone, Copy, Debug)]
pub enum Transform {
    /// Per-node matrices from an embedding-pool contraction.
    PerNode { pool: ParamId },
    /// One matrix shared by all nodes (fixed-adjacency variant).
    Shared { weight: ParamId },
}

#[derive(Clone, Debug)]
pub struct AttentionHead {
    pub transform: Transform,
    /// Scoring vector a of width 2 * head output.
    pub attn: ParamId,
}

#[derive(Clone, Debug)]
pub struct GraphAttentionLayer {
    pub dims: LayerDims,
    /// Present when the layer learns its own graph; `None` means a fixed
    /// adjacency is supplied to `prepare`.
    pub embedding: Option<ParamId>,
    pub heads: Vec<AttentionHead>,
    /// The projection pass contracts against its own embedding.
    pub out_embedding: Option<ParamId>,
    pub out_head: AttentionHead,
}

impl GraphAttentionLayer {
    /// Registers all parameters under `prefix`, drawing initial values in a
    /// fixed order: embedding, then each head's pool and attention vector,
    /// then the projection embedding, pool, and attention vector.
    pub fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        dims: LayerDims,
        adaptive: bool,
    ) -> Result<Self, SubstrateError> {
        let LayerDims {
            nodes,
            input_width,
            head_width,
            heads,
            output_width,
            embed_dim,
        } = dims;
        let embedding = if adaptive {
            Some(params.add(
                format!("{prefix}.embedding"),
                init::embedding(rng, &[nodes, embed_dim]),
            )?)
        } else {
            None
        };
        let mut head_list = Vec::with_capacity(heads);
        for q in 0..heads {
            let transform = if adaptive {
                Transform::PerNode {
                    pool: params.add(
                        format!("{prefix}.head{q}.pool"),
                        init::weight(rng, &[embed_dim, input_width, head_width], input_width),
                    )?,
                }
            } else {
                Transform::Shared {
                    weight: params.add(
                        format!("{prefix}.head{q}.weight"),
                        init::weight(rng, &[input_width, head_width], input_width),
                    )?,
                }
            };
            let attn = params.add(
                format!("{prefix}.head{q}.attn"),
                init::weight(rng, &[2 * head_width], 2 * head_width),
            )?;
            head_list.push(AttentionHead { transform, attn });
        }
        let concat_width = heads * head_width;
        let out_embedding = if adaptive {
            Some(params.add(
                format!("{prefix}.out.embedding"),
                init::embedding(rng, &[nodes, embed_dim]),
            )?)
        } else {
            None
        };
        let out_transform = if adaptive {
            Transform::PerNode {
                pool: params.add(
                    format!("{prefix}.out.pool"),
                    init::weight(rng, &[embed_dim, concat_width, output_width], concat_width),
                )?,
            }
        } else {
            Transform::Shared {
                weight: params.add(
                    format!("{prefix}.out.weight"),
                    init::weight(rng, &[concat_width, output_width], concat_width),
                )?,
            }
        };
        let out_attn = params.add(
            format!("{prefix}.out.attn"),
            init::weight(rng, &[2 * output_width], 2 * output_width),
        )?;
        Ok(GraphAttentionLayer {
            dims,
            embedding,
            heads: head_list,
            out_embedding,
            out_head: AttentionHead {
                transform: out_transform,
                attn: out_attn,
            },
        })
    }

    /// Materializes the per-forward invariants on the tape: the adjacency and
    /// every transform matrix. These do not depend on the input, so callers
    /// unrolling over time compute them once and reuse the vars each step.
    pub fn prepare<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        param_vars: &[Var],
        fixed_adjacency: Option<Var>,
    ) -> Result<PreparedLayer, SubstrateError> {
        let adj = match (self.embedding, fixed_adjacency) {
            (Some(emb), _) => adaptive_adjacency(tape, param_vars[emb.0])?,
            (None, Some(fixed)) => fixed,
            (None, None) => {
                return Err(SubstrateError::Contract {
                    op: "attention_prepare",
                    msg: "layer has no embedding and no fixed adjacency was supplied".to_string(),
                })
            }
        };
        let mut heads = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            heads.push((
                self.prepare_transform(tape, param_vars, head.transform, self.embedding)?,
                param_vars[head.attn.0],
            ));
        }
        let out = (
            self.prepare_transform(
                tape,
                param_vars,
                self.out_head.transform,
                self.out_embedding,
            )?,
            param_vars[self.out_head.attn.0],
        );
        Ok(PreparedLayer { adj, heads, out })
    }

    fn prepare_transform<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        param_vars: &[Var],
        transform: Transform,
        embedding: Option<ParamId>,
    ) -> Result<PreparedTransform, SubstrateError> {
        match transform {
            Transform::PerNode { pool } => {
                let emb = embedding.ok_or(SubstrateError::Contract {
                    op: "attention_prepare",
                    msg: "per-node transform without an embedding".to_string(),
                })?;
                Ok(PreparedTransform::PerNode(per_node_weights(
                    tape,
                    param_vars[emb.0],
                    param_vars[pool.0],
                )?))
            }
            Transform::Shared { weight } => Ok(PreparedTransform::Shared(param_vars[weight.0])),
        }
    }
}

/// Input-independent pieces of one layer, living on a tape.
pub struct PreparedLayer {
    pub adj: Var,
    heads: Vec<(PreparedTransform, Var)>,
    out: (PreparedTransform, Var),
}

#[derive(Clone, Copy)]
pub enum PreparedTransform {
    /// Stack of per-node matrices, `[N, F_in, F_out]`.
    PerNode(Var),
    /// One shared matrix, `[F_in, F_out]`.
    Shared(Var),
}

/// softmax(relu(E·Eᵀ)) — each row a distribution over learned neighbors.
pub fn adaptive_adjacency<T: Scalar>(
    tape: &mut Tape<T>,
    embedding: Var,
) -> Result<Var, SubstrateError> {
    let et = tape.swap_axes(embedding, 0, 1)?;
    let prod = tape.matmul(embedding, et)?;
    let rect = tape.relu(prod)?;
    tape.softmax_rows(rect)
}

/// Contraction E·W_p: `[N, d]` with `[d, F_in, F_out]` gives one transform
/// matrix per node, `[N, F_in, F_out]`.
pub fn per_node_weights<T: Scalar>(
    tape: &mut Tape<T>,
    embedding: Var,
    pool: Var,
) -> Result<Var, SubstrateError> {
    let ps = tape.value(pool).shape().to_vec();
    if ps.len() != 3 {
        return Err(SubstrateError::Contract {
            op: "per_node_weights",
            msg: format!("pool must be rank 3, got rank {}", ps.len()),
        });
    }
    let nodes = tape.value(embedding).shape()[0];
    let flat = tape.reshape(pool, &[ps[0], ps[1] * ps[2]])?;
    let mixed = tape.matmul(embedding, flat)?;
    tape.reshape(mixed, &[nodes, ps[1], ps[2]])
}

/// Applies a transform to features `[.., N, F_in]`, yielding `[.., N, F_out]`.
pub fn node_transform<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    transform: PreparedTransform,
) -> Result<Var, SubstrateError> {
    match transform {
        PreparedTransform::Shared(w) => tape.matmul(x, w),
        PreparedTransform::PerNode(w) => {
            // Row i of x multiplies matrix i of w: stage x as [.., N, 1, F_in]
            // so the matmul batches over nodes.
            let xs = tape.value(x).shape().to_vec();
            let mut staged = xs.clone();
            staged.insert(xs.len() - 1, 1);
            let xe = tape.reshape(x, &staged)?;
            let prod = tape.matmul(xe, w)?;
            let f_out = tape.value(w).shape()[2];
            let mut out_shape = xs;
            *out_shape.last_mut().unwrap() = f_out;
            tape.reshape(prod, &out_shape)
        }
    }
}

/// Pairwise scores softmaxed per row: alpha = softmax_rows(leaky(a·[z_i ∥ z_j])).
/// The concatenated form splits into a1·z_i + a2·z_j, computed as two
/// projections plus an outer sum.
pub fn attention_scores<T: Scalar>(
    tape: &mut Tape<T>,
    z: Var,
    attn: Var,
) -> Result<Var, SubstrateError> {
    let zs = tape.value(z).shape().to_vec();
    let width = *zs.last().unwrap();
    let a_shape = tape.value(attn).shape().to_vec();
    if a_shape != [2 * width] {
        return Err(SubstrateError::ShapeMismatch {
            op: "attention_scores",
            lhs: crate::substrate::fmt_shape(&zs),
            rhs: crate::substrate::fmt_shape(&a_shape),
        });
    }
    let rank = zs.len();
    let a1 = tape.slice(attn, 0, 0, width)?;
    let a1 = tape.reshape(a1, &[width, 1])?;
    let a2 = tape.slice(attn, 0, width, width)?;
    let a2 = tape.reshape(a2, &[width, 1])?;
    let u = tape.matmul(z, a1)?;
    let v = tape.matmul(z, a2)?;
    let vt = tape.swap_axes(v, rank - 2, rank - 1)?;
    let scores = tape.add(u, vt)?;
    let rect = tape.leaky_relu(scores, T::from_f64(LEAKY_SLOPE))?;
    tape.softmax_rows(rect)
}

/// Fuses attention with the adjacency, renormalizes rows, aggregates:
/// out_i = leaky( sum_j (adj_ij * alpha_ij / sum_k adj_ik * alpha_ik) * z_j ).
pub fn head_aggregate<T: Scalar>(
    tape: &mut Tape<T>,
    z: Var,
    alpha: Var,
    adjacency: Var,
) -> Result<Var, SubstrateError> {
    let rank = tape.value(alpha).shape().len();
    let fused = tape.mul(alpha, adjacency)?;
    let row_sums = tape.sum_axis(fused, rank - 1)?;
    let weights = tape.div(fused, row_sums)?;
    let agg = tape.matmul(weights, z)?;
    tape.leaky_relu(agg, T::from_f64(LEAKY_SLOPE))
}

/// Full layer: Q heads in parallel, concat, one projection pass. Input
/// `[.., N, F_in]`, output `[.., N, F_out]`. All passes share the layer
/// adjacency.
pub fn layer_forward<T: Scalar>(
    tape: &mut Tape<T>,
    prepared: &PreparedLayer,
    x: Var,
) -> Result<Var, SubstrateError> {
    let rank = tape.value(x).shape().len();
    let mut head_outputs = Vec::with_capacity(prepared.heads.len());
    for &(transform, attn) in &prepared.heads {
        let z = node_transform(tape, x, transform)?;
        let alpha = attention_scores(tape, z, attn)?;
        head_outputs.push(head_aggregate(tape, z, alpha, prepared.adj)?);
    }
    let combined = tape.concat(&head_outputs, rank - 1)?;
    let (out_transform, out_attn) = prepared.out;
    let z = node_transform(tape, combined, out_transform)?;
    let alpha = attention_scores(tape, z, out_attn)?;
    head_aggregate(tape, z, alpha, prepared.adj)
}

#[cfg(test)]
mod tests;
