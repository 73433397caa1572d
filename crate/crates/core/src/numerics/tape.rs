//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every primitive applied through it during the forward
//! pass. [`Tape::backward`] seeds the loss adjoint with 1 and replays the
//! record in reverse, accumulating adjoints for every node. Parameters bound
//! through [`Tape::param`] can then receive their gradients via
//! [`Tape::accumulate_param_grads`].
//!
//! Primitive evaluation without a tape is available through [`Prim::eval`]
//! and is pure.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::optim::ParamStore;
use crate::numerics::sparse::CsrMatrix;
use crate::numerics::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

/// The primitive operations the tape understands.
///
/// `SparseMatMul` multiplies by a fixed sparse operator (graph Laplacian,
/// selection map); the operator itself is constant and receives no adjoint.
#[derive(Clone, Debug)]
pub enum Prim {
    MatMul,
    Add,
    Subtract,
    Multiply,
    ScalarMultiply(f64),
    Sigmoid,
    Tanh,
    Exp,
    Log,
    ConcatLastAxis,
    Slice {
        axis: usize,
        start: usize,
        stop: usize,
    },
    Sum,
    Mean,
    Square,
    Clamp {
        lo: f64,
        hi: f64,
    },
    SparseMatMul(Rc<CsrMatrix>),
}

impl Prim {
    pub fn name(&self) -> &'static str {
        match self {
            Prim::MatMul => "matmul",
            Prim::Add => "add",
            Prim::Subtract => "subtract",
            Prim::Multiply => "elementwise-multiply",
            Prim::ScalarMultiply(_) => "scalar-multiply",
            Prim::Sigmoid => "sigmoid",
            Prim::Tanh => "tanh",
            Prim::Exp => "exp",
            Prim::Log => "log",
            Prim::ConcatLastAxis => "concat-last-axis",
            Prim::Slice { .. } => "slice",
            Prim::Sum => "sum",
            Prim::Mean => "mean",
            Prim::Square => "square",
            Prim::Clamp { .. } => "clamp",
            Prim::SparseMatMul(_) => "sparse-matmul",
        }
    }

    fn arity_err(&self, n: usize) -> Error {
        Error::ShapeMismatch {
            prim: self.name(),
            detail: format!("wrong number of inputs: {n}"),
        }
    }

    fn same_shape<'a>(&self, inputs: &[&'a Tensor]) -> Result<(&'a Tensor, &'a Tensor)> {
        if inputs.len() != 2 {
            return Err(self.arity_err(inputs.len()));
        }
        let (a, b) = (inputs[0], inputs[1]);
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                prim: self.name(),
                detail: format!("operand shapes {:?} vs {:?}", a.shape(), b.shape()),
            });
        }
        Ok((a, b))
    }

    fn unary<'a>(&self, inputs: &[&'a Tensor]) -> Result<&'a Tensor> {
        if inputs.len() != 1 {
            return Err(self.arity_err(inputs.len()));
        }
        Ok(inputs[0])
    }

    /// Evaluate the primitive on plain tensors, without recording anything.
    pub fn eval(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        match self {
            Prim::MatMul => {
                if inputs.len() != 2 {
                    return Err(self.arity_err(inputs.len()));
                }
                matmul(inputs[0], inputs[1])
            }
            Prim::Add => {
                let (a, b) = self.same_shape(inputs)?;
                let mut out = a.clone();
                out.add_assign(b);
                Ok(out)
            }
            Prim::Subtract => {
                let (a, b) = self.same_shape(inputs)?;
                let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
                Tensor::new(a.shape().to_vec(), data)
            }
            Prim::Multiply => {
                let (a, b) = self.same_shape(inputs)?;
                let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
                Tensor::new(a.shape().to_vec(), data)
            }
            Prim::ScalarMultiply(c) => Ok(self.unary(inputs)?.map(|x| c * x)),
            Prim::Sigmoid => Ok(self.unary(inputs)?.map(sigmoid)),
            Prim::Tanh => Ok(self.unary(inputs)?.map(f64::tanh)),
            Prim::Exp => Ok(self.unary(inputs)?.map(f64::exp)),
            Prim::Log => Ok(self.unary(inputs)?.map(f64::ln)),
            Prim::ConcatLastAxis => concat_last_axis(inputs),
            Prim::Slice { axis, start, stop } => slice_axis(self, inputs, *axis, *start, *stop),
            Prim::Sum => Ok(Tensor::scalar(self.unary(inputs)?.data().iter().sum())),
            Prim::Mean => {
                let x = self.unary(inputs)?;
                if x.numel() == 0 {
                    return Err(Error::ShapeMismatch {
                        prim: self.name(),
                        detail: "mean of empty tensor".into(),
                    });
                }
                let s: f64 = x.data().iter().sum();
                Ok(Tensor::scalar(s / x.numel() as f64))
            }
            Prim::Square => Ok(self.unary(inputs)?.map(|x| x * x)),
            Prim::Clamp { lo, hi } => Ok(self.unary(inputs)?.map(|x| x.clamp(*lo, *hi))),
            Prim::SparseMatMul(m) => {
                if inputs.len() != 1 {
                    return Err(self.arity_err(inputs.len()));
                }
                m.matmul_dense(inputs[0])
            }
        }
    }

    /// Adjoints of the inputs given the forward values and the output adjoint.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_out: &Tensor,
    ) -> Result<Vec<Tensor>> {
        let go = grad_out;
        let grads = match self {
            Prim::MatMul => vec![matmul_nt(go, inputs[1])?, matmul_tn(inputs[0], go)?],
            Prim::Add => vec![go.clone(), go.clone()],
            Prim::Subtract => vec![go.clone(), go.map(|g| -g)],
            Prim::Multiply => vec![
                ew(go, inputs[1], |g, b| g * b),
                ew(go, inputs[0], |g, a| g * a),
            ],
            Prim::ScalarMultiply(c) => vec![go.map(|g| c * g)],
            Prim::Sigmoid => vec![ew(go, output, |g, y| g * y * (1.0 - y))],
            Prim::Tanh => vec![ew(go, output, |g, y| g * (1.0 - y * y))],
            Prim::Exp => vec![ew(go, output, |g, y| g * y)],
            Prim::Log => vec![ew(go, inputs[0], |g, x| g / x)],
            Prim::ConcatLastAxis => concat_backward(inputs, go),
            Prim::Slice { axis, start, stop } => {
                vec![slice_backward(inputs[0], go, *axis, *start, *stop)]
            }
            Prim::Sum => vec![Tensor::full(inputs[0].shape(), go.item())],
            Prim::Mean => vec![Tensor::full(
                inputs[0].shape(),
                go.item() / inputs[0].numel() as f64,
            )],
            Prim::Square => vec![ew(go, inputs[0], |g, x| g * 2.0 * x)],
            Prim::Clamp { lo, hi } => vec![ew(go, inputs[0], |g, x| {
                if x > *lo && x < *hi {
                    g
                } else {
                    0.0
                }
            })],
            Prim::SparseMatMul(m) => vec![m.transpose_matmul_dense(go)?],
        };
        for g in &grads {
            if g.data().iter().any(|v| v.is_nan()) {
                return Err(Error::NanInBackward(self.name()));
            }
        }
        Ok(grads)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn ew(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("elementwise shapes verified in forward")
}

fn concat_last_axis(inputs: &[&Tensor]) -> Result<Tensor> {
    let prim = "concat-last-axis";
    if inputs.is_empty() {
        return Err(Error::ShapeMismatch {
            prim,
            detail: "no inputs".into(),
        });
    }
    let rank = inputs[0].rank();
    if rank == 0 {
        return Err(Error::ShapeMismatch {
            prim,
            detail: "cannot concat scalars".into(),
        });
    }
    let lead = &inputs[0].shape()[..rank - 1];
    for t in inputs {
        if t.rank() != rank || &t.shape()[..rank - 1] != lead {
            return Err(Error::ShapeMismatch {
                prim,
                detail: format!(
                    "leading dims disagree: {:?} vs {:?}",
                    inputs[0].shape(),
                    t.shape()
                ),
            });
        }
    }
    let outer: usize = lead.iter().product();
    let lasts: Vec<usize> = inputs.iter().map(|t| t.shape()[rank - 1]).collect();
    let total: usize = lasts.iter().sum();
    let mut data = Vec::with_capacity(outer * total);
    for o in 0..outer {
        for (t, &w) in inputs.iter().zip(&lasts) {
            data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::new(shape, data)
}

fn concat_backward(inputs: &[&Tensor], go: &Tensor) -> Vec<Tensor> {
    let rank = inputs[0].rank();
    let outer: usize = inputs[0].shape()[..rank - 1].iter().product();
    let lasts: Vec<usize> = inputs.iter().map(|t| t.shape()[rank - 1]).collect();
    let total: usize = lasts.iter().sum();
    let god = go.data();
    let mut grads: Vec<Tensor> = inputs.iter().map(|t| Tensor::zeros(t.shape())).collect();
    for o in 0..outer {
        let mut off = 0;
        for (g, &w) in grads.iter_mut().zip(&lasts) {
            let src = &god[o * total + off..o * total + off + w];
            g.data_mut()[o * w..(o + 1) * w].copy_from_slice(src);
            off += w;
        }
    }
    grads
}

fn slice_axis(
    prim: &Prim,
    inputs: &[&Tensor],
    axis: usize,
    start: usize,
    stop: usize,
) -> Result<Tensor> {
    if inputs.len() != 1 {
        return Err(prim.arity_err(inputs.len()));
    }
    let x = inputs[0];
    if axis >= x.rank() || start >= stop || stop > x.shape()[axis] {
        return Err(Error::ShapeMismatch {
            prim: prim.name(),
            detail: format!(
                "slice [{start}, {stop}) on axis {axis} of shape {:?}",
                x.shape()
            ),
        });
    }
    let dim = x.shape()[axis];
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let outer: usize = x.shape()[..axis].iter().product();
    let width = stop - start;
    let mut data = Vec::with_capacity(outer * width * inner);
    for o in 0..outer {
        let base = o * dim * inner;
        data.extend_from_slice(&x.data()[base + start * inner..base + stop * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = width;
    Tensor::new(shape, data)
}

fn slice_backward(x: &Tensor, go: &Tensor, axis: usize, start: usize, stop: usize) -> Tensor {
    let dim = x.shape()[axis];
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let outer: usize = x.shape()[..axis].iter().product();
    let width = stop - start;
    let mut grad = Tensor::zeros(x.shape());
    for o in 0..outer {
        let base = o * dim * inner;
        let src = &go.data()[o * width * inner..(o + 1) * width * inner];
        grad.data_mut()[base + start * inner..base + stop * inner].copy_from_slice(src);
    }
    grad
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorId(usize);

struct Node {
    value: Tensor,
    op: Option<(Prim, Vec<TensorId>)>,
}

/// Ordered record of executed primitives sufficient to replay adjoints in
/// reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    bound: Vec<(TensorId, usize)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a constant leaf. It receives an adjoint but is not tied to any
    /// parameter.
    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.push(value, None)
    }

    /// Bind a named parameter's current value as a leaf; its adjoint will be
    /// added to the parameter's gradient by [`accumulate_param_grads`](Self::accumulate_param_grads).
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<TensorId> {
        let idx = store.index_of(name).ok_or_else(|| {
            Error::InvalidArgument(format!("unknown parameter `{name}`"))
        })?;
        let id = self.push(store.get_by_index(idx).value.clone(), None);
        self.bound.push((id, idx));
        Ok(id)
    }

    /// Bind a parameter under a different shape with the same element count
    /// (row-major layouts are identical, so gradients flow to the same
    /// buffer).
    pub fn param_view(&mut self, store: &ParamStore, name: &str, shape: &[usize]) -> Result<TensorId> {
        let idx = store.index_of(name).ok_or_else(|| {
            Error::InvalidArgument(format!("unknown parameter `{name}`"))
        })?;
        let viewed = store.get_by_index(idx).value.reshaped(shape.to_vec())?;
        let id = self.push(viewed, None);
        self.bound.push((id, idx));
        Ok(id)
    }

    fn push(&mut self, value: Tensor, op: Option<(Prim, Vec<TensorId>)>) -> TensorId {
        self.nodes.push(Node { value, op });
        TensorId(self.nodes.len() - 1)
    }

    /// Evaluate `prim` on the given nodes and record the result.
    pub fn apply(&mut self, prim: Prim, inputs: &[TensorId]) -> Result<TensorId> {
        let tensors: Vec<&Tensor> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
        let value = prim.eval(&tensors)?;
        Ok(self.push(value, Some((prim, inputs.to_vec()))))
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Adjoint of a node, present after [`backward`](Self::backward) for
    /// every node the loss depends on.
    pub fn grad(&self, id: TensorId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Replay the tape in reverse from `loss`, filling adjoints.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(go) = self.grads[i].clone() else {
                continue;
            };
            let Some((prim, input_ids)) = self.nodes[i].op.clone() else {
                continue;
            };
            let inputs: Vec<&Tensor> = input_ids.iter().map(|id| &self.nodes[id.0].value).collect();
            let adjoints = prim.backward(&inputs, &self.nodes[i].value, &go)?;
            for (id, adj) in input_ids.iter().zip(adjoints) {
                match &mut self.grads[id.0] {
                    Some(g) => g.add_assign(&adj),
                    slot @ None => *slot = Some(adj),
                }
            }
        }
        Ok(())
    }

    /// Add adjoints of bound parameter leaves into the store's gradient
    /// buffers. Parameters the loss never touched keep their gradient as-is
    /// (zero if freshly cleared).
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for &(id, idx) in &self.bound {
            if let Some(adj) = self.grads.get(id.0).and_then(|g| g.as_ref()) {
                let grad = &mut store.get_by_index_mut(idx).gradient;
                debug_assert_eq!(grad.numel(), adj.numel());
                for (g, a) in grad.data_mut().iter_mut().zip(adj.data()) {
                    *g += a;
                }
            }
        }
    }

    /// Drop every recorded node and adjoint.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.bound.clear();
    }

    // Convenience wrappers used throughout the model code.

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.apply(Prim::Add, &[a, b])
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.apply(Prim::Subtract, &[a, b])
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.apply(Prim::Multiply, &[a, b])
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.apply(Prim::MatMul, &[a, b])
    }

    pub fn smul(&mut self, c: f64, a: TensorId) -> Result<TensorId> {
        self.apply(Prim::ScalarMultiply(c), &[a])
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId> {
        self.apply(Prim::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId> {
        self.apply(Prim::Tanh, &[a])
    }

    pub fn exp(&mut self, a: TensorId) -> Result<TensorId> {
        self.apply(Prim::Exp, &[a])
    }

    pub fn log(&mut self, a: TensorId) -> Result<TensorId> {
        self.apply(Prim::Log, &[a])
    }

    pub fn square(&mut self, a: TensorId) -> Result<TensorId> {
        self.apply(Prim::Square, &[a])
    }

    pub fn concat(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        self.apply(Prim::ConcatLastAxis, parts)
    }

    pub fn slice(&mut self, a: TensorId, axis: usize, start: usize, stop: usize) -> Result<TensorId> {
        self.apply(Prim::Slice { axis, start, stop }, &[a])
    }

    pub fn sum(&mut self, a: TensorId) -> Result<TensorId> {
        self.apply(Prim::Sum, &[a])
    }

    pub fn mean(&mut self, a: TensorId) -> Result<TensorId> {
        self.apply(Prim::Mean, &[a])
    }

    pub fn clamp(&mut self, a: TensorId, lo: f64, hi: f64) -> Result<TensorId> {
        self.apply(Prim::Clamp { lo, hi }, &[a])
    }

    pub fn spmm(&mut self, m: &Rc<CsrMatrix>, x: TensorId) -> Result<TensorId> {
        self.apply(Prim::SparseMatMul(Rc::clone(m)), &[x])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_tanh_at_zero() {
        let z = Tensor::scalar(0.0);
        let s = Prim::Sigmoid.eval(&[&z]).unwrap();
        let t = Prim::Tanh.eval(&[&z]).unwrap();
        assert_eq!(s.item(), 0.5);
        assert_eq!(t.item(), 0.0);
    }

    #[test]
    fn concat_feature_blocks() {
        let a = Tensor::zeros(&[4, 8]);
        let b = Tensor::zeros(&[4, 2]);
        let c = Tensor::zeros(&[4, 6]);
        let out = Prim::ConcatLastAxis.eval(&[&a, &b, &c]).unwrap();
        assert_eq!(out.shape(), &[4, 16]);
    }

    #[test]
    fn concat_rejects_mismatched_leading_dims() {
        let a = Tensor::zeros(&[4, 8]);
        let b = Tensor::zeros(&[3, 2]);
        let err = Prim::ConcatLastAxis.eval(&[&a, &b]).unwrap_err();
        assert!(err.to_string().contains("concat-last-axis"));
    }

    #[test]
    fn grad_of_sum_of_squares() {
        // loss = sum(x * x), x = (1, 2, 3) -> grad = (2, 4, 6)
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn sigmoid_adjoint_at_zero_is_quarter() {
        // loss = sigmoid(z) at z = 0 -> dloss/dz = 0.25
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let loss = tape.sigmoid(z).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(z).unwrap().item(), 0.25);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        let y = tape.add(x, x).unwrap();
        match tape.backward(y) {
            Err(Error::NonScalarLoss(shape)) => assert_eq!(shape, vec![2, 2]),
            other => panic!("expected NonScalarLoss, got {other:?}"),
        }
    }

    #[test]
    fn backward_nan_names_primitive() {
        // log at 0 gives grad 1/0 = inf, times 0 adjoint is NaN downstream;
        // easier: log of a negative number makes forward NaN, and the adjoint
        // 1/x stays finite. Drive a NaN adjoint via 0 * inf instead.
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let lg = tape.log(x).unwrap(); // -inf forward
        let zero = tape.constant(Tensor::scalar(0.0));
        let prod = tape.mul(lg, zero).unwrap(); // 0 * -inf = NaN forward, adjoint of lg is 0
        let loss = tape.sum(prod).unwrap();
        // adjoint of x through log: go(=0) / 0 -> NaN
        let err = tape.backward(loss).unwrap_err();
        match err {
            Error::NanInBackward(name) => assert_eq!(name, "log"),
            other => panic!("expected NanInBackward, got {other:?}"),
        }
    }

    #[test]
    fn slice_roundtrip_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]));
        let s = tape.slice(x, 1, 1, 3).unwrap();
        assert_eq!(tape.value(s).data(), &[2.0, 3.0, 5.0, 6.0]);
        let loss = tape.sum(s).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(
            tape.grad(x).unwrap().data(),
            &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0]
        );
    }

    #[test]
    fn clamp_blocks_gradient_outside_band() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3], vec![-1.0, 0.5, 2.0]).unwrap());
        let c = tape.clamp(x, 0.0, 1.0).unwrap();
        assert_eq!(tape.value(c).data(), &[0.0, 0.5, 1.0]);
        let loss = tape.sum(c).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn cleared_tape_is_empty() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(1.0));
        tape.sum(x).unwrap();
        assert!(!tape.is_empty());
        tape.clear();
        assert!(tape.is_empty());
    }
}
