//! Gated recurrence over graph-structured features.
//!
//! Each gate of the recurrent cell is a full graph attention layer applied to
//! the concatenation of the current input and the previous state, so spatial
//! mixing happens inside the temporal update:
//!
//!   z = sigmoid(attn_update([x_t ∥ h]))     — how much old state survives
//!   r = sigmoid(attn_reset([x_t ∥ h]))      — how much old state feeds the candidate
//!   c = tanh(attn_candidate([x_t ∥ r⊙h]))
//!   h_t = z ⊙ h + (1-z) ⊙ c
//!
//! A residual step then remixes the raw input back in, h'_t = relu(x_t·W_x +
//! h_t·W_h), and h'_t — not h_t — is the state carried to the next step. The
//! encoder runs one cell left-to-right and an independently parameterized
//! cell right-to-left and concatenates the two per-step outputs.

use rand_chacha::ChaCha8Rng;

use crate::attention::{layer_forward, GraphAttentionLayer, LayerDims, PreparedLayer};
use crate::init;
use crate::substrate::{ParamId, ParamSet, Scalar, SubstrateError, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GatedCell {
    pub update: GraphAttentionLayer,
    pub reset: GraphAttentionLayer,
    pub candidate: GraphAttentionLayer,
    pub hidden: usize,
}

/// The 1x1 feature-mixing convolutions of the residual step.
#[derive(Clone, Copy, Debug)]
pub struct ResidualMix {
    pub input_mix: ParamId,
    pub hidden_mix: ParamId,
}

#[derive(Clone, Debug)]
pub struct ResidualCell {
    pub cell: GatedCell,
    /// `None` when the residual step is ablated; the gated state then carries.
    pub mix: Option<ResidualMix>,
}

impl ResidualCell {
    #[allow(clippy::too_many_arguments)]
    pub fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        nodes: usize,
        input_width: usize,
        hidden: usize,
        heads: usize,
        embed_dim: usize,
        adaptive: bool,
        with_residual: bool,
    ) -> Result<Self, SubstrateError> {
        let gate_dims = LayerDims {
            nodes,
            input_width: input_width + hidden,
            head_width: hidden,
            heads,
            output_width: hidden,
            embed_dim,
        };
        let update = GraphAttentionLayer::register(
            params,
            rng,
            &format!("{prefix}.update"),
            gate_dims,
            adaptive,
        )?;
        let reset = GraphAttentionLayer::register(
            params,
            rng,
            &format!("{prefix}.reset"),
            gate_dims,
            adaptive,
        )?;
        let candidate = GraphAttentionLayer::register(
            params,
            rng,
            &format!("{prefix}.candidate"),
            gate_dims,
            adaptive,
        )?;
        let mix = if with_residual {
            Some(ResidualMix {
                input_mix: params.add(
                    format!("{prefix}.mix_input"),
                    init::weight(rng, &[input_width, hidden], input_width),
                )?,
                hidden_mix: params.add(
                    format!("{prefix}.mix_hidden"),
                    init::weight(rng, &[hidden, hidden], hidden),
                )?,
            })
        } else {
            None
        };
        Ok(ResidualCell {
            cell: GatedCell {
                update,
                reset,
                candidate,
                hidden,
            },
            mix,
        })
    }

    pub fn prepare<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        param_vars: &[Var],
        fixed_adjacency: Option<Var>,
    ) -> Result<PreparedCell, SubstrateError> {
        Ok(PreparedCell {
            update: self.cell.update.prepare(tape, param_vars, fixed_adjacency)?,
            reset: self.cell.reset.prepare(tape, param_vars, fixed_adjacency)?,
            candidate: self
                .cell
                .candidate
                .prepare(tape, param_vars, fixed_adjacency)?,
            mix: self
                .mix
                .map(|m| (param_vars[m.input_mix.0], param_vars[m.hidden_mix.0])),
            hidden: self.cell.hidden,
        })
    }

    pub fn parameter_count(&self, adaptive: bool) -> usize {
        let gates = 3 * self.cell.update.dims.parameter_count(adaptive);
        let mix = match self.mix {
            Some(_) => {
                let fi = self.cell.update.dims.input_width - self.cell.hidden;
                fi * self.cell.hidden + self.cell.hidden * self.cell.hidden
            }
            None => 0,
        };
        gates + mix
    }
}

/// Gate layers and mixing matrices staged on a tape. The attention layers'
/// adjacencies and transforms are computed once here and reused every step.
pub struct PreparedCell {
    update: PreparedLayer,
    reset: PreparedLayer,
    candidate: PreparedLayer,
    mix: Option<(Var, Var)>,
    hidden: usize,
}

/// One gated update without the residual remix.
pub fn cell_step<T: Scalar>(
    tape: &mut Tape<T>,
    cell: &PreparedCell,
    x_t: Var,
    h_prev: Var,
) -> Result<Var, SubstrateError> {
    let rank = tape.value(x_t).shape().len();
    let joint = tape.concat(&[x_t, h_prev], rank - 1)?;
    let z_pre = layer_forward(tape, &cell.update, joint)?;
    let z = tape.sigmoid(z_pre)?;
    let r_pre = layer_forward(tape, &cell.reset, joint)?;
    let r = tape.sigmoid(r_pre)?;
    let gated_prev = tape.mul(r, h_prev)?;
    let candidate_in = tape.concat(&[x_t, gated_prev], rank - 1)?;
    let c_pre = layer_forward(tape, &cell.candidate, candidate_in)?;
    let c = tape.tanh(c_pre)?;
    let keep = tape.mul(z, h_prev)?;
    let renew_gate = tape.affine(z, -T::one(), T::one())?;
    let renew = tape.mul(renew_gate, c)?;
    tape.add(keep, renew)
}

/// Gated update followed by the residual remix (or alone when ablated).
pub fn residual_step<T: Scalar>(
    tape: &mut Tape<T>,
    cell: &PreparedCell,
    x_t: Var,
    h_prev: Var,
) -> Result<Var, SubstrateError> {
    let h = cell_step(tape, cell, x_t, h_prev)?;
    match cell.mix {
        None => Ok(h),
        Some((w_in, w_hidden)) => {
            let from_input = tape.matmul(x_t, w_in)?;
            let from_state = tape.matmul(h, w_hidden)?;
            let mixed = tape.add(from_input, from_state)?;
            tape.relu(mixed)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub forward_cell: ResidualCell,
    pub backward_cell: Option<ResidualCell>,
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    pub fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        nodes: usize,
        input_width: usize,
        hidden: usize,
        heads: usize,
        embed_dim: usize,
        adaptive: bool,
        bidirectional: bool,
        with_residual: bool,
    ) -> Result<Self, SubstrateError> {
        // Forward parameters draw first so the forward half is unchanged when
        // the reverse pass is ablated under the same seed.
        let forward_cell = ResidualCell::register(
            params,
            rng,
            "fwd",
            nodes,
            input_width,
            hidden,
            heads,
            embed_dim,
            adaptive,
            with_residual,
        )?;
        let backward_cell = if bidirectional {
            Some(ResidualCell::register(
                params,
                rng,
                "bwd",
                nodes,
                input_width,
                hidden,
                heads,
                embed_dim,
                adaptive,
                with_residual,
            )?)
        } else {
            None
        };
        Ok(Encoder {
            forward_cell,
            backward_cell,
        })
    }

    pub fn prepare<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        param_vars: &[Var],
        fixed_adjacency: Option<Var>,
    ) -> Result<PreparedEncoder, SubstrateError> {
        Ok(PreparedEncoder {
            fwd: self.forward_cell.prepare(tape, param_vars, fixed_adjacency)?,
            bwd: self
                .backward_cell
                .as_ref()
                .map(|c| c.prepare(tape, param_vars, fixed_adjacency))
                .transpose()?,
        })
    }

    /// Feature width of `encode_sequence` output.
    pub fn output_width(&self) -> usize {
        let h = self.forward_cell.cell.hidden;
        if self.backward_cell.is_some() {
            2 * h
        } else {
            h
        }
    }
}

pub struct PreparedEncoder {
    fwd: PreparedCell,
    bwd: Option<PreparedCell>,
}

/// Unrolls the cell(s) over `x: [.., N, T, F]`, producing `[.., N, T, C]`
/// where C is the hidden width (doubled when bidirectional). Zero initial
/// state in both directions; step outputs are stacked in input time order.
pub fn encode_sequence<T: Scalar>(
    tape: &mut Tape<T>,
    prep: &PreparedEncoder,
    x: Var,
) -> Result<Var, SubstrateError> {
    let xs = tape.value(x).shape().to_vec();
    if xs.len() < 3 {
        return Err(SubstrateError::Contract {
            op: "encode_sequence",
            msg: format!(
                "input must be [.., nodes, time, features], got {}",
                crate::substrate::fmt_shape(&xs)
            ),
        });
    }
    let rank = xs.len();
    let time_axis = rank - 2;
    let steps = xs[time_axis];
    if steps == 0 {
        return Err(SubstrateError::Contract {
            op: "encode_sequence",
            msg: "empty time axis".to_string(),
        });
    }

    // [.., N, F] per step.
    let mut step_shape = xs.clone();
    step_shape.remove(time_axis);
    let state_feature_axis = step_shape.len() - 1;
    let mut slices = Vec::with_capacity(steps);
    for t in 0..steps {
        let s = tape.slice(x, time_axis, t, 1)?;
        slices.push(tape.reshape(s, &step_shape)?);
    }

    let mut state_shape = step_shape.clone();
    *state_shape.last_mut().unwrap() = prep.fwd.hidden;

    let h0 = tape.leaf(Tensor::zeros(&state_shape))?;
    let mut fwd_states = Vec::with_capacity(steps);
    let mut h = h0;
    for &x_t in &slices {
        h = residual_step(tape, &prep.fwd, x_t, h)?;
        fwd_states.push(h);
    }

    let bwd_states = match &prep.bwd {
        None => None,
        Some(bwd) => {
            let h0 = tape.leaf(Tensor::zeros(&state_shape))?;
            let mut states = vec![h0; steps];
            let mut h = h0;
            for t in (0..steps).rev() {
                h = residual_step(tape, bwd, slices[t], h)?;
                states[t] = h;
            }
            Some(states)
        }
    };

    // Stack per-step outputs back along a fresh time axis.
    let mut stacked_shape = step_shape.clone();
    stacked_shape.insert(time_axis, 1);
    let mut per_step = Vec::with_capacity(steps);
    for t in 0..steps {
        let combined = match &bwd_states {
            None => fwd_states[t],
            Some(bwd) => tape.concat(&[fwd_states[t], bwd[t]], state_feature_axis)?,
        };
        let mut shape = stacked_shape.clone();
        *shape.last_mut().unwrap() = tape.value(combined).shape().last().copied().unwrap();
        per_step.push(tape.reshape(combined, &shape)?);
    }
    tape.concat(&per_step, time_axis)
}
