//! Reverse-mode automatic differentiation on a recording tape.
//!
//! Every operation appends a node holding its output value and the indices of
//! its inputs. `backward` replays the list in reverse, accumulating gradients
//! into per-node buffers — a value consumed by several later nodes receives
//! the sum of their contributions, which is what lets shared parameters (node
//! embeddings reused across time steps, weight pools reused across heads)
//! collect gradient from every use site.
//!
//! Evaluation order is fixed: nodes run in creation order forward and exact
//! reverse order backward, with plain sequential loops inside each kernel, so
//! identical inputs give bit-identical results on every run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{
    broadcast_shapes, broadcast_strides, fmt_shape, reduce_to_shape, strides_of, Odometer, Scalar,
    Tensor,
};
use super::SubstrateError;

/// Handle to a value on the tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Matmul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    Affine { x: Var, mul: T },
    Relu { x: Var },
    LeakyRelu { x: Var, slope: T },
    Sigmoid { x: Var },
    Tanh { x: Var },
    Abs { x: Var },
    SoftmaxRows { x: Var },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape { x: Var },
    SwapAxes { x: Var, a1: usize, a2: usize },
    SumAxis { x: Var },
    SumAll { x: Var },
    DilatedConv1d { x: Var, filt: Var, dilation: usize },
    WeightNorm { v: Var, g: Var },
    /// Mask entries are pre-scaled (0 or 1/(1-rate)); empty mask = identity.
    Dropout { x: Var, mask: Vec<T> },
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self::with_seed(0)
    }

    /// The seed drives nothing but dropout masks; tapes that never draw a
    /// mask behave identically regardless of it.
    pub fn with_seed(seed: u64) -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated by the last `backward` call; `None` when the
    /// value does not influence the loss (its gradient is identically zero).
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, op: &'static str, node: Node<T>) -> Result<Var, SubstrateError> {
        if !node.value.is_finite() {
            return Err(SubstrateError::NonFinite { op });
        }
        self.nodes.push(node);
        Ok(Var(self.nodes.len() - 1))
    }

    // ── leaves ──

    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var, SubstrateError> {
        self.push("leaf", Node { op: Op::Leaf, value })
    }

    // ── linear algebra ──

    /// Matrix product over the trailing two axes; leading axes broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, SubstrateError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sb.len() < 2 {
            return Err(SubstrateError::ShapeMismatch {
                op: "matmul",
                lhs: fmt_shape(&sa),
                rhs: fmt_shape(&sb),
            });
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let batch = broadcast_shapes(&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        if k != k2 || batch.is_none() {
            return Err(SubstrateError::ShapeMismatch {
                op: "matmul",
                lhs: fmt_shape(&sa),
                rhs: fmt_shape(&sb),
            });
        }
        let batch = batch.unwrap();
        let mut out_shape = batch.clone();
        out_shape.extend_from_slice(&[m, n]);
        let mut out = Tensor::zeros(&out_shape);

        let av = self.value(a).data();
        let bv = self.value(b).data();
        for (a_off, b_off, o_off) in BatchIter::new(&batch, &sa, &sb, m * k, k2 * n, m * n) {
            matmul_kernel(
                &av[a_off..a_off + m * k],
                &bv[b_off..b_off + k * n],
                &mut out.data_mut()[o_off..o_off + m * n],
                m,
                k,
                n,
            );
        }
        self.push(
            "matmul",
            Node {
                op: Op::Matmul { a, b },
                value: out,
            },
        )
    }

    // ── elementwise binary (broadcasting) ──

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, SubstrateError> {
        self.binary("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, SubstrateError> {
        self.binary("sub", a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, SubstrateError> {
        self.binary("mul", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, SubstrateError> {
        self.binary("div", a, b, |x, y| x / y, |a, b| Op::Div { a, b })
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: impl Fn(Var, Var) -> Op<T>,
    ) -> Result<Var, SubstrateError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape = broadcast_shapes(&sa, &sb).ok_or(SubstrateError::ShapeMismatch {
            op: name,
            lhs: fmt_shape(&sa),
            rhs: fmt_shape(&sb),
        })?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let numel: usize = out_shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        if sa == sb {
            for i in 0..numel {
                data.push(f(av[i], bv[i]));
            }
        } else if numel > 0 {
            let strides = vec![
                broadcast_strides(&sa, &out_shape),
                broadcast_strides(&sb, &out_shape),
            ];
            let mut odo = Odometer::new(&out_shape, strides);
            loop {
                data.push(f(av[odo.offsets()[0]], bv[odo.offsets()[1]]));
                if !odo.step() {
                    break;
                }
            }
        }
        self.push(
            name,
            Node {
                op: op(a, b),
                value: Tensor::new(out_shape, data)?,
            },
        )
    }

    /// `mul * x + add` with scalar coefficients.
    pub fn affine(&mut self, x: Var, mul: T, add: T) -> Result<Var, SubstrateError> {
        let value = self.value(x).map(|v| mul * v + add);
        self.push(
            "affine",
            Node {
                op: Op::Affine { x, mul },
                value,
            },
        )
    }

    // ── activations ──

    pub fn relu(&mut self, x: Var) -> Result<Var, SubstrateError> {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", Node { op: Op::Relu { x }, value })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var, SubstrateError> {
        let value = self
            .value(x)
            .map(|v| if v >= T::zero() { v } else { slope * v });
        self.push(
            "leaky_relu",
            Node {
                op: Op::LeakyRelu { x, slope },
                value,
            },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, SubstrateError> {
        // Branch on sign so neither exp overflows.
        let value = self.value(x).map(|v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        });
        self.push(
            "sigmoid",
            Node {
                op: Op::Sigmoid { x },
                value,
            },
        )
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, SubstrateError> {
        let value = self.value(x).map(|v| v.tanh());
        self.push("tanh", Node { op: Op::Tanh { x }, value })
    }

    pub fn abs(&mut self, x: Var) -> Result<Var, SubstrateError> {
        let value = self.value(x).map(|v| v.abs());
        self.push("abs", Node { op: Op::Abs { x }, value })
    }

    // ── softmax ──

    /// Softmax over the trailing axis, max-shifted for stability.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, SubstrateError> {
        let shape = self.shape(x);
        if shape.is_empty() || *shape.last().unwrap() == 0 {
            return Err(SubstrateError::Contract {
                op: "softmax_rows",
                msg: format!("needs a non-empty trailing axis, got {}", fmt_shape(&shape)),
            });
        }
        let cols = *shape.last().unwrap();
        let xv = self.value(x).data();
        let mut data = vec![T::zero(); xv.len()];
        for r in 0..xv.len() / cols {
            let row = &xv[r * cols..(r + 1) * cols];
            let mut max = row[0];
            for &v in row {
                if v > max {
                    max = v;
                }
            }
            let mut sum = T::zero();
            for (o, &v) in data[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in &mut data[r * cols..(r + 1) * cols] {
                *o /= sum;
            }
        }
        self.push(
            "softmax_rows",
            Node {
                op: Op::SoftmaxRows { x },
                value: Tensor::new(shape, data)?,
            },
        )
    }

    // ── shape manipulation ──

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, SubstrateError> {
        if xs.is_empty() {
            return Err(SubstrateError::Contract {
                op: "concat",
                msg: "needs at least one input".to_string(),
            });
        }
        let first = self.shape(xs[0]);
        if axis >= first.len() {
            return Err(SubstrateError::Contract {
                op: "concat",
                msg: format!("axis {axis} out of range for {}", fmt_shape(&first)),
            });
        }
        let mut axis_total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(ax, (a, b))| ax == axis || a == b);
            if !compatible {
                return Err(SubstrateError::ShapeMismatch {
                    op: "concat",
                    lhs: fmt_shape(&first),
                    rhs: fmt_shape(&s),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let mut out = Tensor::zeros(&out_shape);
        let out_strides = strides_of(&out_shape);
        let mut axis_base = 0;
        for &v in xs {
            let s = self.shape(v);
            let src = self.value(v).data();
            let base = axis_base * out_strides[axis];
            if s.iter().product::<usize>() > 0 {
                let mut odo = Odometer::new(&s, vec![out_strides.clone()]);
                let mut i = 0;
                loop {
                    out.data_mut()[base + odo.offsets()[0]] = src[i];
                    i += 1;
                    if !odo.step() {
                        break;
                    }
                }
            }
            axis_base += s[axis];
        }
        self.push(
            "concat",
            Node {
                op: Op::Concat { xs: xs.to_vec(), axis },
                value: out,
            },
        )
    }

    /// Contiguous range along one axis; rank is preserved.
    pub fn slice(
        &mut self,
        x: Var,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Var, SubstrateError> {
        let s = self.shape(x);
        if axis >= s.len() || start + len > s[axis] {
            return Err(SubstrateError::Contract {
                op: "slice",
                msg: format!(
                    "range {start}..{} on axis {axis} exceeds {}",
                    start + len,
                    fmt_shape(&s)
                ),
            });
        }
        let mut out_shape = s.clone();
        out_shape[axis] = len;
        let x_strides = strides_of(&s);
        let base = start * x_strides[axis];
        let src = self.value(x).data();
        let numel: usize = out_shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        if numel > 0 {
            let mut odo = Odometer::new(&out_shape, vec![x_strides]);
            loop {
                data.push(src[base + odo.offsets()[0]]);
                if !odo.step() {
                    break;
                }
            }
        }
        self.push(
            "slice",
            Node {
                op: Op::Slice { x, axis, start },
                value: Tensor::new(out_shape, data)?,
            },
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, SubstrateError> {
        let old = self.shape(x);
        if old.iter().product::<usize>() != shape.iter().product::<usize>() {
            return Err(SubstrateError::ShapeMismatch {
                op: "reshape",
                lhs: fmt_shape(&old),
                rhs: fmt_shape(shape),
            });
        }
        let value = Tensor::new(shape.to_vec(), self.value(x).data().to_vec())?;
        self.push("reshape", Node { op: Op::Reshape { x }, value })
    }

    pub fn swap_axes(&mut self, x: Var, a1: usize, a2: usize) -> Result<Var, SubstrateError> {
        let s = self.shape(x);
        if a1 >= s.len() || a2 >= s.len() {
            return Err(SubstrateError::Contract {
                op: "swap_axes",
                msg: format!("axes ({a1}, {a2}) out of range for {}", fmt_shape(&s)),
            });
        }
        let mut out_shape = s.clone();
        out_shape.swap(a1, a2);
        let value = permuted_copy(self.value(x), &out_shape, a1, a2);
        self.push(
            "swap_axes",
            Node {
                op: Op::SwapAxes { x, a1, a2 },
                value,
            },
        )
    }

    // ── reductions ──

    /// Sum along one axis, keeping it with extent 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var, SubstrateError> {
        let s = self.shape(x);
        if axis >= s.len() {
            return Err(SubstrateError::Contract {
                op: "sum_axis",
                msg: format!("axis {axis} out of range for {}", fmt_shape(&s)),
            });
        }
        let mut out_shape = s.clone();
        out_shape[axis] = 1;
        let mut out = Tensor::zeros(&out_shape);
        let strides = broadcast_strides(&out_shape, &s);
        let src = self.value(x).data();
        if !src.is_empty() {
            let mut odo = Odometer::new(&s, vec![strides]);
            let mut i = 0;
            loop {
                out.data_mut()[odo.offsets()[0]] += src[i];
                i += 1;
                if !odo.step() {
                    break;
                }
            }
        }
        self.push(
            "sum_axis",
            Node {
                op: Op::SumAxis { x },
                value: out,
            },
        )
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var, SubstrateError> {
        let mut acc = T::zero();
        for &v in self.value(x).data() {
            acc += v;
        }
        self.push(
            "sum_all",
            Node {
                op: Op::SumAll { x },
                value: Tensor::scalar(acc),
            },
        )
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var, SubstrateError> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(SubstrateError::Contract {
                op: "mean_all",
                msg: "mean of an empty tensor".to_string(),
            });
        }
        let s = self.sum_all(x)?;
        self.affine(s, T::from_f64(1.0 / n as f64), T::zero())
    }

    // ── temporal convolution ──

    /// Causal 1-D convolution over the trailing axis with left zero padding
    /// of (l-1)*dilation: out[.., o, s] = sum_{c,i} filt[o,c,i] * x[.., c, s - dilation*i].
    pub fn dilated_conv1d(
        &mut self,
        x: Var,
        filt: Var,
        dilation: usize,
    ) -> Result<Var, SubstrateError> {
        let sx = self.shape(x);
        let sf = self.shape(filt);
        if dilation == 0 {
            return Err(SubstrateError::Contract {
                op: "dilated_conv1d",
                msg: "dilation must be at least 1".to_string(),
            });
        }
        if sx.len() < 2 || sf.len() != 3 || sf[1] != sx[sx.len() - 2] {
            return Err(SubstrateError::ShapeMismatch {
                op: "dilated_conv1d",
                lhs: fmt_shape(&sx),
                rhs: fmt_shape(&sf),
            });
        }
        let (c_in, len) = (sx[sx.len() - 2], sx[sx.len() - 1]);
        let (c_out, l) = (sf[0], sf[2]);
        let mut out_shape = sx[..sx.len() - 2].to_vec();
        out_shape.extend_from_slice(&[c_out, len]);
        let mut out = Tensor::zeros(&out_shape);
        let batch: usize = sx[..sx.len() - 2].iter().product();
        let xv = self.value(x).data();
        let fv = self.value(filt).data();
        for b in 0..batch {
            let xb = &xv[b * c_in * len..(b + 1) * c_in * len];
            let ob = &mut out.data_mut()[b * c_out * len..(b + 1) * c_out * len];
            for o in 0..c_out {
                for c in 0..c_in {
                    for i in 0..l {
                        let w = fv[(o * c_in + c) * l + i];
                        let shift = dilation * i;
                        for s in shift..len {
                            ob[o * len + s] += w * xb[c * len + s - shift];
                        }
                    }
                }
            }
        }
        self.push(
            "dilated_conv1d",
            Node {
                op: Op::DilatedConv1d { x, filt, dilation },
                value: out,
            },
        )
    }

    /// Reparameterizes filters as w = g * v / ||v||, the norm taken per
    /// output channel (the leading axis of v).
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Result<Var, SubstrateError> {
        let sv = self.shape(v);
        let sg = self.shape(g);
        if sv.len() < 2 || sg.len() != 1 || sg[0] != sv[0] {
            return Err(SubstrateError::ShapeMismatch {
                op: "weight_norm",
                lhs: fmt_shape(&sv),
                rhs: fmt_shape(&sg),
            });
        }
        let rest: usize = sv[1..].iter().product();
        let vv = self.value(v).data();
        let gv = self.value(g).data();
        let mut data = vec![T::zero(); vv.len()];
        for o in 0..sv[0] {
            let chan = &vv[o * rest..(o + 1) * rest];
            let norm = channel_norm(chan);
            if norm == T::zero() {
                return Err(SubstrateError::Numeric {
                    op: "weight_norm",
                    msg: format!("channel {o} of v has zero norm"),
                });
            }
            let scale = gv[o] / norm;
            for (d, &x) in data[o * rest..(o + 1) * rest].iter_mut().zip(chan) {
                *d = scale * x;
            }
        }
        self.push(
            "weight_norm",
            Node {
                op: Op::WeightNorm { v, g },
                value: Tensor::new(sv, data)?,
            },
        )
    }

    /// Inverted dropout: kept entries are scaled by 1/(1-rate) so the
    /// expectation is unchanged; identity when not training or rate = 0.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool) -> Result<Var, SubstrateError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(SubstrateError::Contract {
                op: "dropout",
                msg: format!("rate {rate} outside [0, 1)"),
            });
        }
        let mask = if training && rate > 0.0 {
            let keep = T::from_f64(1.0 / (1.0 - rate));
            (0..self.value(x).numel())
                .map(|_| {
                    if self.rng.random::<f64>() < rate {
                        T::zero()
                    } else {
                        keep
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        let value = if mask.is_empty() {
            self.value(x).clone()
        } else {
            let mut t = self.value(x).clone();
            for (d, m) in t.data_mut().iter_mut().zip(&mask) {
                *d *= *m;
            }
            t
        };
        self.push(
            "dropout",
            Node {
                op: Op::Dropout { x, mask },
                value,
            },
        )
    }

    // ── reverse pass ──

    /// Propagates d(loss)/d(node) from a scalar loss back to every node.
    pub fn backward(&mut self, loss: Var) -> Result<(), SubstrateError> {
        if self.value(loss).numel() != 1 {
            return Err(SubstrateError::Contract {
                op: "backward",
                msg: format!(
                    "loss must be a scalar, got {}",
                    fmt_shape(self.value(loss).shape())
                ),
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let Some(g_out) = self.grads[id].take() else {
                continue;
            };
            // Split borrows: node values read-only, gradient buffers mutable.
            let (nodes, grads) = (&self.nodes, &mut self.grads);
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (ga, gb) = matmul_backward(
                        &g_out,
                        &nodes[a.0].value,
                        &nodes[b.0].value,
                    );
                    accumulate(grads, *a, ga);
                    accumulate(grads, *b, gb);
                }
                Op::Add { a, b } => {
                    accumulate(grads, *a, reduce_to_shape(&g_out, nodes[a.0].value.shape()));
                    accumulate(grads, *b, reduce_to_shape(&g_out, nodes[b.0].value.shape()));
                }
                Op::Sub { a, b } => {
                    accumulate(grads, *a, reduce_to_shape(&g_out, nodes[a.0].value.shape()));
                    let neg = g_out.map(|v| -v);
                    accumulate(grads, *b, reduce_to_shape(&neg, nodes[b.0].value.shape()));
                }
                Op::Mul { a, b } => {
                    let ga = broadcast_product(&g_out, &nodes[b.0].value, |g, o| g * o);
                    let gb = broadcast_product(&g_out, &nodes[a.0].value, |g, o| g * o);
                    accumulate(grads, *a, reduce_to_shape(&ga, nodes[a.0].value.shape()));
                    accumulate(grads, *b, reduce_to_shape(&gb, nodes[b.0].value.shape()));
                }
                Op::Div { a, b } => {
                    // out = a / b: da = g/b, db = -g*a/b^2
                    let ga = broadcast_product(&g_out, &nodes[b.0].value, |g, bv| g / bv);
                    let mut gb_full = broadcast_product(&g_out, &nodes[a.0].value, |g, av| g * av);
                    let bs = broadcast_strides(nodes[b.0].value.shape(), gb_full.shape());
                    let bd = nodes[b.0].value.data();
                    let shape = gb_full.shape().to_vec();
                    if gb_full.numel() > 0 {
                        let mut odo = Odometer::new(&shape, vec![bs]);
                        let mut i = 0;
                        loop {
                            let bv = bd[odo.offsets()[0]];
                            let cur = gb_full.data()[i];
                            gb_full.data_mut()[i] = -cur / (bv * bv);
                            i += 1;
                            if !odo.step() {
                                break;
                            }
                        }
                    }
                    accumulate(grads, *a, reduce_to_shape(&ga, nodes[a.0].value.shape()));
                    accumulate(grads, *b, reduce_to_shape(&gb_full, nodes[b.0].value.shape()));
                }
                Op::Affine { x, mul } => {
                    let m = *mul;
                    accumulate(grads, *x, g_out.map(|g| m * g));
                }
                Op::Relu { x } => {
                    let gx = apply_gate(&g_out, &nodes[x.0].value, |v| {
                        if v > T::zero() {
                            T::one()
                        } else {
                            T::zero()
                        }
                    });
                    accumulate(grads, *x, gx);
                }
                Op::LeakyRelu { x, slope } => {
                    let s = *slope;
                    let gx = apply_gate(&g_out, &nodes[x.0].value, |v| {
                        if v >= T::zero() {
                            T::one()
                        } else {
                            s
                        }
                    });
                    accumulate(grads, *x, gx);
                }
                Op::Sigmoid { x } => {
                    let gx = apply_gate(&g_out, &node.value, |y| y * (T::one() - y));
                    accumulate(grads, *x, gx);
                }
                Op::Tanh { x } => {
                    let gx = apply_gate(&g_out, &node.value, |y| T::one() - y * y);
                    accumulate(grads, *x, gx);
                }
                Op::Abs { x } => {
                    // Subgradient 0 at exactly 0.
                    let gx = apply_gate(&g_out, &nodes[x.0].value, |v| {
                        if v > T::zero() {
                            T::one()
                        } else if v < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        }
                    });
                    accumulate(grads, *x, gx);
                }
                Op::SoftmaxRows { x } => {
                    // dx_i = y_i * (g_i - sum_j g_j y_j) per row.
                    let y = &node.value;
                    let cols = *y.shape().last().unwrap();
                    let mut gx = Tensor::zeros(y.shape());
                    for r in 0..y.numel() / cols {
                        let ys = &y.data()[r * cols..(r + 1) * cols];
                        let gs = &g_out.data()[r * cols..(r + 1) * cols];
                        let mut dot = T::zero();
                        for (yv, gv) in ys.iter().zip(gs) {
                            dot += *yv * *gv;
                        }
                        for (o, (yv, gv)) in gx.data_mut()[r * cols..(r + 1) * cols]
                            .iter_mut()
                            .zip(ys.iter().zip(gs))
                        {
                            *o = *yv * (*gv - dot);
                        }
                    }
                    accumulate(grads, *x, gx);
                }
                Op::Concat { xs, axis } => {
                    let out_strides = strides_of(node.value.shape());
                    let mut axis_base = 0;
                    for &v in xs {
                        let s = nodes[v.0].value.shape().to_vec();
                        let mut gx = Tensor::zeros(&s);
                        let base = axis_base * out_strides[*axis];
                        if gx.numel() > 0 {
                            let mut odo = Odometer::new(&s, vec![out_strides.clone()]);
                            let mut i = 0;
                            loop {
                                gx.data_mut()[i] = g_out.data()[base + odo.offsets()[0]];
                                i += 1;
                                if !odo.step() {
                                    break;
                                }
                            }
                        }
                        axis_base += s[*axis];
                        accumulate(grads, v, gx);
                    }
                }
                Op::Slice { x, axis, start } => {
                    let xs = nodes[x.0].value.shape().to_vec();
                    let x_strides = strides_of(&xs);
                    let mut gx = Tensor::zeros(&xs);
                    let base = start * x_strides[*axis];
                    if node.value.numel() > 0 {
                        let mut odo = Odometer::new(node.value.shape(), vec![x_strides]);
                        let mut i = 0;
                        loop {
                            gx.data_mut()[base + odo.offsets()[0]] += g_out.data()[i];
                            i += 1;
                            if !odo.step() {
                                break;
                            }
                        }
                    }
                    accumulate(grads, *x, gx);
                }
                Op::Reshape { x } => {
                    let xs = nodes[x.0].value.shape().to_vec();
                    let gx = Tensor::new(xs, g_out.data().to_vec()).expect("same numel");
                    accumulate(grads, *x, gx);
                }
                Op::SwapAxes { x, a1, a2 } => {
                    let xs = nodes[x.0].value.shape().to_vec();
                    let gx = permuted_copy(&g_out, &xs, *a1, *a2);
                    accumulate(grads, *x, gx);
                }
                Op::SumAxis { x } => {
                    let xs = nodes[x.0].value.shape().to_vec();
                    let strides = broadcast_strides(node.value.shape(), &xs);
                    let mut gx = Tensor::zeros(&xs);
                    if gx.numel() > 0 {
                        let mut odo = Odometer::new(&xs, vec![strides]);
                        let mut i = 0;
                        loop {
                            gx.data_mut()[i] = g_out.data()[odo.offsets()[0]];
                            i += 1;
                            if !odo.step() {
                                break;
                            }
                        }
                    }
                    accumulate(grads, *x, gx);
                }
                Op::SumAll { x } => {
                    let g = g_out.data()[0];
                    let gx = Tensor::full(nodes[x.0].value.shape(), g);
                    accumulate(grads, *x, gx);
                }
                Op::DilatedConv1d { x, filt, dilation } => {
                    let (gx, gf) = conv_backward(
                        &g_out,
                        &nodes[x.0].value,
                        &nodes[filt.0].value,
                        *dilation,
                    );
                    accumulate(grads, *x, gx);
                    accumulate(grads, *filt, gf);
                }
                Op::WeightNorm { v, g } => {
                    let (gv, gg) = weight_norm_backward(&g_out, &nodes[v.0].value, &nodes[g.0].value);
                    accumulate(grads, *v, gv);
                    accumulate(grads, *g, gg);
                }
                Op::Dropout { x, mask } => {
                    let gx = if mask.is_empty() {
                        g_out.clone()
                    } else {
                        let mut t = g_out.clone();
                        for (d, m) in t.data_mut().iter_mut().zip(mask) {
                            *d *= *m;
                        }
                        t
                    };
                    accumulate(grads, *x, gx);
                }
            }
            // The buffer was taken to satisfy the borrow checker; put it back
            // so callers can read every node's gradient afterwards.
            self.grads[id] = Some(g_out);
        }
        Ok(())
    }

    fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, contribution: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(contribution.data()) {
                *a += *b;
            }
        }
        slot => *slot = Some(contribution),
    }
}

/// g combined with a broadcast-expanded companion tensor, elementwise.
fn broadcast_product<T: Scalar>(
    g: &Tensor<T>,
    other: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Tensor<T> {
    let mut out = Tensor::zeros(g.shape());
    if out.numel() == 0 {
        return out;
    }
    let strides = broadcast_strides(other.shape(), g.shape());
    let mut odo = Odometer::new(g.shape(), vec![strides]);
    let mut i = 0;
    loop {
        out.data_mut()[i] = f(g.data()[i], other.data()[odo.offsets()[0]]);
        i += 1;
        if !odo.step() {
            break;
        }
    }
    out
}

/// g scaled elementwise by a local derivative computed from a same-shape source.
fn apply_gate<T: Scalar>(g: &Tensor<T>, source: &Tensor<T>, deriv: impl Fn(T) -> T) -> Tensor<T> {
    let mut out = g.clone();
    for (o, &s) in out.data_mut().iter_mut().zip(source.data()) {
        *o *= deriv(s);
    }
    out
}

fn permuted_copy<T: Scalar>(x: &Tensor<T>, out_shape: &[usize], a1: usize, a2: usize) -> Tensor<T> {
    let mut x_strides = strides_of(x.shape());
    x_strides.swap(a1, a2);
    let mut out = Tensor::zeros(out_shape);
    if out.numel() == 0 {
        return out;
    }
    let mut odo = Odometer::new(out_shape, vec![x_strides]);
    let mut i = 0;
    loop {
        out.data_mut()[i] = x.data()[odo.offsets()[0]];
        i += 1;
        if !odo.step() {
            break;
        }
    }
    out
}

fn channel_norm<T: Scalar>(chan: &[T]) -> T {
    let mut acc = T::zero();
    for &v in chan {
        acc += v * v;
    }
    acc.sqrt()
}

fn matmul_kernel<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn matmul_backward<T: Scalar>(
    g: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let sa = a.shape();
    let sb = b.shape();
    let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
    let n = sb[sb.len() - 1];
    let batch = &g.shape()[..g.shape().len() - 2];
    let mut ga = Tensor::zeros(sa);
    let mut gb = Tensor::zeros(sb);
    for (a_off, b_off, o_off) in BatchIter::new(batch, sa, sb, m * k, k * n, m * n) {
        let gs = &g.data()[o_off..o_off + m * n];
        let as_ = &a.data()[a_off..a_off + m * k];
        let bs = &b.data()[b_off..b_off + k * n];
        // dA[i,p] += sum_j g[i,j] * b[p,j]
        {
            let gad = &mut ga.data_mut()[a_off..a_off + m * k];
            for i in 0..m {
                for p in 0..k {
                    let mut acc = T::zero();
                    let grow = &gs[i * n..(i + 1) * n];
                    let brow = &bs[p * n..(p + 1) * n];
                    for (gv, bv) in grow.iter().zip(brow) {
                        acc += *gv * *bv;
                    }
                    gad[i * k + p] += acc;
                }
            }
        }
        // dB[p,j] += sum_i a[i,p] * g[i,j]
        {
            let gbd = &mut gb.data_mut()[b_off..b_off + k * n];
            for i in 0..m {
                for p in 0..k {
                    let av = as_[i * k + p];
                    let grow = &gs[i * n..(i + 1) * n];
                    let brow = &mut gbd[p * n..(p + 1) * n];
                    for (o, gv) in brow.iter_mut().zip(grow) {
                        *o += av * *gv;
                    }
                }
            }
        }
    }
    (ga, gb)
}

fn conv_backward<T: Scalar>(
    g: &Tensor<T>,
    x: &Tensor<T>,
    filt: &Tensor<T>,
    dilation: usize,
) -> (Tensor<T>, Tensor<T>) {
    let sx = x.shape();
    let sf = filt.shape();
    let (c_in, len) = (sx[sx.len() - 2], sx[sx.len() - 1]);
    let (c_out, l) = (sf[0], sf[2]);
    let batch: usize = sx[..sx.len() - 2].iter().product();
    let mut gx = Tensor::zeros(sx);
    let mut gf = Tensor::zeros(sf);
    for b in 0..batch {
        let xb = &x.data()[b * c_in * len..(b + 1) * c_in * len];
        let gb = &g.data()[b * c_out * len..(b + 1) * c_out * len];
        let gxb = &mut gx.data_mut()[b * c_in * len..(b + 1) * c_in * len];
        for o in 0..c_out {
            for c in 0..c_in {
                for i in 0..l {
                    let shift = dilation * i;
                    let w = filt.data()[(o * c_in + c) * l + i];
                    let mut wacc = T::zero();
                    for s in shift..len {
                        let gv = gb[o * len + s];
                        gxb[c * len + s - shift] += w * gv;
                        wacc += gv * xb[c * len + s - shift];
                    }
                    gf.data_mut()[(o * c_in + c) * l + i] += wacc;
                }
            }
        }
    }
    (gx, gf)
}

fn weight_norm_backward<T: Scalar>(
    g_out: &Tensor<T>,
    v: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let c_out = v.shape()[0];
    let rest: usize = v.shape()[1..].iter().product();
    let mut gv = Tensor::zeros(v.shape());
    let mut gg = Tensor::zeros(g.shape());
    for o in 0..c_out {
        let chan = &v.data()[o * rest..(o + 1) * rest];
        let gos = &g_out.data()[o * rest..(o + 1) * rest];
        let norm = channel_norm(chan);
        let mut dot = T::zero(); // sum_r g_out[o,r] * v[o,r]
        for (gvv, vv) in gos.iter().zip(chan) {
            dot += *gvv * *vv;
        }
        gg.data_mut()[o] = dot / norm;
        let scale = g.data()[o] / norm;
        let corr = g.data()[o] * dot / (norm * norm * norm);
        for (out, (gvv, vv)) in gv.data_mut()[o * rest..(o + 1) * rest]
            .iter_mut()
            .zip(gos.iter().zip(chan))
        {
            *out = scale * *gvv - corr * *vv;
        }
    }
    (gv, gg)
}

/// Yields (a_offset, b_offset, out_offset) element offsets for every batch
/// index of a broadcast batched matmul, in row-major order.
struct BatchIter {
    odo: Option<Odometer>,
    a_mat: usize,
    b_mat: usize,
    o_mat: usize,
    done: bool,
}

impl BatchIter {
    fn new(
        batch: &[usize],
        sa: &[usize],
        sb: &[usize],
        a_mat: usize,
        b_mat: usize,
        o_mat: usize,
    ) -> Self {
        if batch.is_empty() {
            return BatchIter {
                odo: None,
                a_mat,
                b_mat,
                o_mat,
                done: false,
            };
        }
        // Strides in units of whole matrices.
        let to_mat = |s: &[usize]| -> Vec<usize> {
            let b = &s[..s.len() - 2];
            let elem = broadcast_strides(b, batch);
            // strides_of counts elements of the batch prefix; each batch
            // element is one matrix, so these are already matrix strides.
            elem
        };
        let a_strides = to_mat(sa);
        let b_strides = to_mat(sb);
        let o_strides = strides_of(batch);
        BatchIter {
            odo: Some(Odometer::new(batch, vec![a_strides, b_strides, o_strides])),
            a_mat,
            b_mat,
            o_mat,
            done: false,
        }
    }
}

impl Iterator for BatchIter {
    type Item = (usize, usize, usize);

    fn next(&mut self) -> Option<(usize, usize, usize)> {
        if self.done {
            return None;
        }
        match &mut self.odo {
            None => {
                self.done = true;
                Some((0, 0, 0))
            }
            Some(odo) => {
                if odo.is_empty() {
                    self.done = true;
                    return None;
                }
                let offs = odo.offsets();
                let item = (
                    offs[0] * self.a_mat,
                    offs[1] * self.b_mat,
                    offs[2] * self.o_mat,
                );
                if !odo.step() {
                    self.done = true;
                }
                Some(item)
            }
        }
    }
}
