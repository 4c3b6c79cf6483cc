//! Dilated causal convolution stack along the time axis.
//!
//! Each residual block runs two weight-normalized causal convolutions with
//! the same dilation,
//!
//!   F(x) = dropout(relu(conv2 ⊛_d dropout(relu(conv1 ⊛_d x))))
//!   out  = relu(x + F(x)),
//!
//! and the stack doubles the dilation per block so a short kernel still sees
//! the whole window: with kernel 2 and dilations 1,2,4,8 the receptive field
//! is 1 + 2·(1+2+4+8) = 31 steps. Channel width never changes, so the
//! residual connection is the identity. Causal left padding keeps the
//! sequence length fixed, and nothing at time t reads an input after t.

use rand_chacha::ChaCha8Rng;

use crate::init;
use crate::substrate::{ParamId, ParamSet, Scalar, SubstrateError, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
struct NormedConv {
    direction: ParamId,
    gain: ParamId,
}

impl NormedConv {
    fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        channels: usize,
        kernel: usize,
    ) -> Result<Self, SubstrateError> {
        let v: Tensor<T> = init::weight(rng, &[channels, channels, kernel], channels * kernel);
        // Unit gain at initialization: g starts at each output channel's
        // direction norm, so the reparameterized filter equals v itself.
        let g_data: Vec<T> = (0..channels)
            .map(|o| {
                let row = &v.data()[o * channels * kernel..(o + 1) * channels * kernel];
                let sq: f64 = row.iter().map(|&e| Scalar::to_f64(e).powi(2)).sum();
                T::from_f64(sq.sqrt())
            })
            .collect();
        let g = Tensor::new(vec![channels], g_data)?;
        Ok(NormedConv {
            direction: params.add(format!("{prefix}.v"), v)?,
            gain: params.add(format!("{prefix}.g"), g)?,
        })
    }

    fn apply<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        param_vars: &[Var],
        x: Var,
        dilation: usize,
    ) -> Result<Var, SubstrateError> {
        let w = tape.weight_norm(param_vars[self.direction.0], param_vars[self.gain.0])?;
        tape.dilated_conv1d(x, w, dilation)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TemporalBlock {
    conv1: NormedConv,
    conv2: NormedConv,
    pub dilation: usize,
}

impl TemporalBlock {
    /// `x` is channel-major: `[.., C, T]`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        param_vars: &[Var],
        x: Var,
        dropout: f64,
        training: bool,
    ) -> Result<Var, SubstrateError> {
        let a = self.conv1.apply(tape, param_vars, x, self.dilation)?;
        let a = tape.relu(a)?;
        let a = tape.dropout(a, dropout, training)?;
        let b = self.conv2.apply(tape, param_vars, a, self.dilation)?;
        let b = tape.relu(b)?;
        let b = tape.dropout(b, dropout, training)?;
        let sum = tape.add(x, b)?;
        tape.relu(sum)
    }
}

#[derive(Clone, Debug)]
pub struct TemporalStack {
    pub blocks: Vec<TemporalBlock>,
    pub channels: usize,
    pub kernel: usize,
    pub dropout: f64,
}

impl TemporalStack {
    pub fn register<T: Scalar>(
        params: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        channels: usize,
        kernel: usize,
        dilations: &[usize],
        dropout: f64,
    ) -> Result<Self, SubstrateError> {
        if channels == 0 || kernel == 0 || dilations.is_empty() {
            return Err(SubstrateError::Contract {
                op: "temporal_stack",
                msg: format!(
                    "need nonzero channels ({channels}), kernel ({kernel}), and at least one dilation"
                ),
            });
        }
        let mut blocks = Vec::with_capacity(dilations.len());
        for (i, &dilation) in dilations.iter().enumerate() {
            if dilation == 0 {
                return Err(SubstrateError::Contract {
                    op: "temporal_stack",
                    msg: format!("block {i} has dilation 0"),
                });
            }
            blocks.push(TemporalBlock {
                conv1: NormedConv::register(
                    params,
                    rng,
                    &format!("{prefix}.block{i}.conv1"),
                    channels,
                    kernel,
                )?,
                conv2: NormedConv::register(
                    params,
                    rng,
                    &format!("{prefix}.block{i}.conv2"),
                    channels,
                    kernel,
                )?,
                dilation,
            });
        }
        Ok(TemporalStack {
            blocks,
            channels,
            kernel,
            dropout,
        })
    }

    /// Earliest input step that can influence the last output step, plus one.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .blocks
            .iter()
            .map(|b| 2 * (self.kernel - 1) * b.dilation)
            .sum::<usize>()
    }

    pub fn parameter_count(&self) -> usize {
        self.blocks.len() * 2 * (self.channels * self.channels * self.kernel + self.channels)
    }

    /// Applies the stack to `h: [.., T, C]`, convolving along the time axis,
    /// and returns the same shape.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        param_vars: &[Var],
        h: Var,
        training: bool,
    ) -> Result<Var, SubstrateError> {
        let shape = tape.value(h).shape().to_vec();
        if shape.len() < 2 || shape[shape.len() - 1] != self.channels {
            return Err(SubstrateError::ShapeMismatch {
                op: "temporal_stack",
                lhs: crate::substrate::fmt_shape(&shape),
                rhs: format!("[.. x T x {}]", self.channels),
            });
        }
        let rank = shape.len();
        let mut x = tape.swap_axes(h, rank - 2, rank - 1)?;
        for block in &self.blocks {
            x = block.forward(tape, param_vars, x, self.dropout, training)?;
        }
        tape.swap_axes(x, rank - 2, rank - 1)
    }
}
