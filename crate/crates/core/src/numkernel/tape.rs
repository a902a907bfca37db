use std::cell::RefCell;
use std::collections::BTreeMap;

use super::{Axis, KernelError, ParamStore, Scalar, Tensor};

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param(String),
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    Scale(usize, T),
    Offset(usize),
    Transpose(usize),
    ConcatRows(Vec<usize>),
    SumAxis(usize, Axis),
    SumAll(usize),
    Elu(usize),
    Logistic(usize),
    RowSoftmax(usize),
    Exp(usize),
    PairBce {
        probs: usize,
        target: Tensor<T>,
        pairs: usize,
    },
    PairBceLogits {
        logits: usize,
        target: Tensor<T>,
        pairs: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations for one forward pass so they can be differentiated.
///
/// Node ids increase in creation order, which is a topological order of the
/// computation graph.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

/// Clamp applied to probabilities inside the pairwise cross-entropy.
const PROB_FLOOR: f64 = 1e-12;

/// Logit at which the probability reaches `1 - PROB_FLOOR`.
fn logit_bound<T: Scalar>() -> T {
    T::lit(((1.0 - PROB_FLOOR) / PROB_FLOOR).ln())
}

fn logistic<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(
        &self,
        value: Tensor<T>,
        op: Op<T>,
        name: &'static str,
    ) -> Result<Var<'_, T>, KernelError> {
        value.ensure_finite(name)?;
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Hadamard(a, b) => {
                nodes[*a].requires_grad || nodes[*b].requires_grad
            }
            Op::ConcatRows(ids) => ids.iter().any(|&i| nodes[i].requires_grad),
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Transpose(a)
            | Op::SumAxis(a, _)
            | Op::SumAll(a)
            | Op::Elu(a)
            | Op::Logistic(a)
            | Op::RowSoftmax(a)
            | Op::Exp(a) => nodes[*a].requires_grad,
            Op::PairBce { probs, .. } => nodes[*probs].requires_grad,
            Op::PairBceLogits { logits, .. } => nodes[*logits].requires_grad,
        };
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// Records a value that is not differentiated.
    pub fn constant(&self, value: Tensor<T>) -> Result<Var<'_, T>, KernelError> {
        self.push(value, Op::Constant, "constant")
    }

    /// Records a learnable leaf whose gradient is reported under `name`.
    pub fn param(&self, name: &str, value: Tensor<T>) -> Result<Var<'_, T>, KernelError> {
        self.push(value, Op::Param(name.to_string()), "param")
    }

    /// Binds the named entry of `store` as a learnable leaf.
    pub fn bind(&self, store: &ParamStore<T>, name: &str) -> Result<Var<'_, T>, KernelError> {
        let value = store
            .get(name)
            .ok_or_else(|| KernelError::UnknownParam(name.to_string()))?;
        self.param(name, value.clone())
    }

    fn value_of(&self, id: usize) -> std::cell::Ref<'_, Tensor<T>> {
        std::cell::Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Reverse sweep from a 1x1 `loss`.
    ///
    /// Returns one gradient per entry of `store`; parameters the loss does not
    /// depend on receive zeros.
    pub fn backward(
        &self,
        loss: Var<'_, T>,
        store: &ParamStore<T>,
    ) -> Result<ParamStore<T>, KernelError> {
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.id].value.shape();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(KernelError::NotScalar(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::new(loss_shape.to_vec(), vec![T::one()])?);
        let mut by_name: BTreeMap<&str, Tensor<T>> = BTreeMap::new();

        fn acc<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: usize, g: Tensor<T>) {
            match &mut grads[id] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let needs = |i: usize| nodes[i].requires_grad;
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Constant => {}
                Op::Param(name) => match by_name.get_mut(name.as_str()) {
                    Some(existing) => existing.add_assign(&g),
                    None => {
                        by_name.insert(name, g);
                    }
                },
                Op::MatMul(a, b) => {
                    if needs(*a) {
                        acc(&mut grads, *a, g.matmul_nt(val(*b))?);
                    }
                    if needs(*b) {
                        acc(&mut grads, *b, val(*a).matmul_tn(&g)?);
                    }
                }
                Op::Add(a, b) => {
                    if needs(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if needs(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if needs(*b) {
                        acc(&mut grads, *b, g.scale(-T::one()));
                    }
                }
                Op::Hadamard(a, b) => {
                    if needs(*a) {
                        acc(&mut grads, *a, g.hadamard(val(*b))?);
                    }
                    if needs(*b) {
                        acc(&mut grads, *b, g.hadamard(val(*a))?);
                    }
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.scale(*s)),
                Op::Offset(a) => acc(&mut grads, *a, g),
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()?),
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut start = 0;
                    for &p in parts {
                        let rows = val(p).rows();
                        if needs(p) {
                            let slice = g.data()[start * cols..(start + rows) * cols].to_vec();
                            acc(&mut grads, p, Tensor::matrix(rows, cols, slice)?);
                        }
                        start += rows;
                    }
                }
                Op::SumAxis(a, axis) => {
                    let x = val(*a);
                    let spread = match axis {
                        Axis::Rows => Tensor::from_fn(x.rows(), x.cols(), |_, j| g.get(0, j)),
                        Axis::Cols => Tensor::from_fn(x.rows(), x.cols(), |i, _| g.get(i, 0)),
                    };
                    acc(&mut grads, *a, spread);
                }
                Op::SumAll(a) => {
                    let x = val(*a);
                    let upstream = g.data()[0];
                    acc(
                        &mut grads,
                        *a,
                        Tensor::new(x.shape().to_vec(), vec![upstream; x.len()])?,
                    );
                }
                Op::Elu(a) => {
                    let x = val(*a);
                    let local = x.map(|v| if v > T::zero() { T::one() } else { v.exp() });
                    acc(&mut grads, *a, g.hadamard(&local)?);
                }
                Op::Logistic(a) => {
                    let y = &node.value;
                    let local = y.map(|p| p * (T::one() - p));
                    acc(&mut grads, *a, g.hadamard(&local)?);
                }
                Op::RowSoftmax(a) => {
                    let y = &node.value;
                    let n = y.cols();
                    let mut out = Vec::with_capacity(y.len());
                    for i in 0..y.rows() {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let dot: T = yr.iter().zip(gr).map(|(&p, &d)| p * d).sum();
                        out.extend(yr.iter().zip(gr).map(|(&p, &d)| p * (d - dot)));
                    }
                    acc(&mut grads, *a, Tensor::matrix(y.rows(), n, out)?);
                }
                Op::Exp(a) => acc(&mut grads, *a, g.hadamard(&node.value)?),
                Op::PairBce {
                    probs,
                    target,
                    pairs,
                } => {
                    let p = val(*probs);
                    let n = p.rows();
                    let upstream = g.data()[0];
                    let floor = T::lit(PROB_FLOOR);
                    let denom = T::from_usize(*pairs).unwrap_or_else(T::one);
                    let local = Tensor::from_fn(n, n, |i, j| {
                        let v = p.get(i, j);
                        if j <= i || v < floor || v > T::one() - floor {
                            return T::zero();
                        }
                        let a = target.get(i, j);
                        upstream * (v - a) / (v * (T::one() - v)) / denom
                    });
                    acc(&mut grads, *probs, local);
                }
                Op::PairBceLogits {
                    logits,
                    target,
                    pairs,
                } => {
                    let x = val(*logits);
                    let n = x.rows();
                    let upstream = g.data()[0];
                    let bound = logit_bound::<T>();
                    let denom = T::from_usize(*pairs).unwrap_or_else(T::one);
                    let local = Tensor::from_fn(n, n, |i, j| {
                        let v = x.get(i, j);
                        if j <= i || v.abs() > bound {
                            return T::zero();
                        }
                        upstream * (logistic(v) - target.get(i, j)) / denom
                    });
                    acc(&mut grads, *logits, local);
                }
            }
        }

        let mut out = store.zeros_like();
        for (name, g) in by_name {
            g.ensure_finite("backward")?;
            let slot = out
                .get_mut(name)
                .ok_or_else(|| KernelError::UnknownParam(name.to_string()))?;
            if slot.shape() != g.shape() {
                return Err(KernelError::ShapeMismatch {
                    op: "backward",
                    left: slot.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            *slot = g;
        }
        Ok(out)
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.value_of(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_of(self.id).shape().to_vec()
    }

    /// The value of a 1x1 variable.
    pub fn item(&self) -> Result<T, KernelError> {
        self.tape.value_of(self.id).item()
    }

    fn unary(
        self,
        name: &'static str,
        f: impl FnOnce(&Tensor<T>) -> Result<Tensor<T>, KernelError>,
        op: Op<T>,
    ) -> Result<Var<'t, T>, KernelError> {
        let value = f(&self.tape.value_of(self.id))?;
        self.tape.push(value, op, name)
    }

    fn binary(
        self,
        other: Var<'t, T>,
        name: &'static str,
        f: impl FnOnce(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>, KernelError>,
        op: Op<T>,
    ) -> Result<Var<'t, T>, KernelError> {
        let value = {
            let a = self.tape.value_of(self.id);
            let b = self.tape.value_of(other.id);
            f(&a, &b)?
        };
        self.tape.push(value, op, name)
    }

    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>, KernelError> {
        self.binary(
            other,
            "matmul",
            |a, b| a.matmul(b),
            Op::MatMul(self.id, other.id),
        )
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>, KernelError> {
        self.binary(other, "add", |a, b| a.add(b), Op::Add(self.id, other.id))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>, KernelError> {
        self.binary(other, "sub", |a, b| a.sub(b), Op::Sub(self.id, other.id))
    }

    pub fn hadamard(self, other: Var<'t, T>) -> Result<Var<'t, T>, KernelError> {
        self.binary(
            other,
            "hadamard",
            |a, b| a.hadamard(b),
            Op::Hadamard(self.id, other.id),
        )
    }

    pub fn scale(self, s: T) -> Result<Var<'t, T>, KernelError> {
        self.unary("scale", |a| Ok(a.scale(s)), Op::Scale(self.id, s))
    }

    /// Adds `c` to every element.
    pub fn offset(self, c: T) -> Result<Var<'t, T>, KernelError> {
        self.unary("offset", |a| Ok(a.map(|v| v + c)), Op::Offset(self.id))
    }

    pub fn transpose(self) -> Result<Var<'t, T>, KernelError> {
        self.unary("transpose", |a| a.transpose(), Op::Transpose(self.id))
    }

    pub fn concat_rows(parts: &[Var<'t, T>]) -> Result<Var<'t, T>, KernelError> {
        let first = parts
            .first()
            .ok_or_else(|| KernelError::InvalidArgument("concat_rows of nothing".into()))?;
        let value = {
            let values: Vec<_> = parts.iter().map(|p| p.tape.value_of(p.id)).collect();
            let refs: Vec<&Tensor<T>> = values.iter().map(|v| &**v).collect();
            Tensor::concat_rows(&refs)?
        };
        first.tape.push(
            value,
            Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
            "concat_rows",
        )
    }

    pub fn sum_axis(self, axis: Axis) -> Result<Var<'t, T>, KernelError> {
        self.unary("sum_axis", |a| a.sum_axis(axis), Op::SumAxis(self.id, axis))
    }

    /// Sum of all elements as a 1x1 variable.
    pub fn sum(self) -> Result<Var<'t, T>, KernelError> {
        self.unary(
            "sum",
            |a| Ok(Tensor::scalar(a.sum_all())),
            Op::SumAll(self.id),
        )
    }

    pub fn elu(self) -> Result<Var<'t, T>, KernelError> {
        self.unary("elu", |a| Ok(a.elu()), Op::Elu(self.id))
    }

    pub fn logistic(self) -> Result<Var<'t, T>, KernelError> {
        self.unary("logistic", |a| Ok(a.logistic()), Op::Logistic(self.id))
    }

    pub fn row_softmax(self) -> Result<Var<'t, T>, KernelError> {
        self.unary("row_softmax", |a| a.row_softmax(), Op::RowSoftmax(self.id))
    }

    pub fn exp(self) -> Result<Var<'t, T>, KernelError> {
        self.unary("exp", |a| Ok(a.map(|v| v.exp())), Op::Exp(self.id))
    }

    /// Mean binary cross-entropy over the strict upper triangle of a square
    /// probability matrix against a 0/1 target. Probabilities are clamped to
    /// `[1e-12, 1 - 1e-12]`; an empty triangle gives 0.
    pub fn pair_bce(self, target: &Tensor<T>) -> Result<Var<'t, T>, KernelError> {
        let (value, pairs) = {
            let p = self.tape.value_of(self.id);
            if p.shape().len() != 2 || p.rows() != p.cols() || p.shape() != target.shape() {
                return Err(KernelError::ShapeMismatch {
                    op: "pair_bce",
                    left: p.shape().to_vec(),
                    right: target.shape().to_vec(),
                });
            }
            let n = p.rows();
            let pairs = pair_count(n);
            let floor = T::lit(PROB_FLOOR);
            let mut total = T::zero();
            for i in 0..n {
                for j in i + 1..n {
                    let v = p.get(i, j).max(floor).min(T::one() - floor);
                    let a = target.get(i, j);
                    total = total - (a * v.ln() + (T::one() - a) * (T::one() - v).ln());
                }
            }
            let mean = if pairs == 0 {
                T::zero()
            } else {
                total / T::from_usize(pairs).unwrap_or_else(T::one)
            };
            (Tensor::scalar(mean), pairs)
        };
        self.tape.push(
            value,
            Op::PairBce {
                probs: self.id,
                target: target.clone(),
                pairs,
            },
            "pair_bce",
        )
    }

    /// Same loss as [`Var::pair_bce`] applied to `logistic(self)`, computed
    /// from the logits so that saturated probabilities keep full precision.
    /// The probability clamp becomes a clamp of the logits.
    pub fn pair_bce_logits(self, target: &Tensor<T>) -> Result<Var<'t, T>, KernelError> {
        let (value, pairs) = {
            let x = self.tape.value_of(self.id);
            if x.shape().len() != 2 || x.rows() != x.cols() || x.shape() != target.shape() {
                return Err(KernelError::ShapeMismatch {
                    op: "pair_bce_logits",
                    left: x.shape().to_vec(),
                    right: target.shape().to_vec(),
                });
            }
            let n = x.rows();
            let pairs = pair_count(n);
            let bound = logit_bound::<T>();
            let mut total = T::zero();
            for i in 0..n {
                for j in i + 1..n {
                    let v = x.get(i, j).max(-bound).min(bound);
                    total = total + softplus(v) - target.get(i, j) * v;
                }
            }
            let mean = if pairs == 0 {
                T::zero()
            } else {
                total / T::from_usize(pairs).unwrap_or_else(T::one)
            };
            (Tensor::scalar(mean), pairs)
        };
        self.tape.push(
            value,
            Op::PairBceLogits {
                logits: self.id,
                target: target.clone(),
                pairs,
            },
            "pair_bce_logits",
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(entries: &[(&str, Tensor<f64>)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (name, t) in entries {
            s.insert(name, t.clone()).unwrap();
        }
        s
    }

    #[test]
    fn gradient_of_squared_norm() {
        let x = Tensor::matrix(3, 1, vec![1.0, -2.0, 0.5]).unwrap();
        let params = store(&[("x", x.clone())]);
        let tape = Tape::new();
        let xv = tape.bind(&params, "x").unwrap();
        let loss = xv.transpose().unwrap().matmul(xv).unwrap();
        let grads = tape.backward(loss, &params).unwrap();
        assert_eq!(grads.get("x").unwrap(), &x.scale(2.0));
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let params = store(&[("w", Tensor::ones(2, 2))]);
        let tape = Tape::new();
        let _w = tape.bind(&params, "w").unwrap();
        let loss = tape.constant(Tensor::scalar(3.0)).unwrap();
        let grads = tape.backward(loss, &params).unwrap();
        assert_eq!(grads.get("w").unwrap(), &Tensor::zeros(2, 2));
    }

    #[test]
    fn sum_gives_ones() {
        let params = store(&[
            ("w", Tensor::from_fn(2, 3, |i, j| (i * 3 + j) as f64)),
            ("unused", Tensor::ones(1, 1)),
        ]);
        let tape = Tape::new();
        let loss = tape.bind(&params, "w").unwrap().sum().unwrap();
        let grads = tape.backward(loss, &params).unwrap();
        assert_eq!(grads.get("w").unwrap(), &Tensor::ones(2, 3));
        assert_eq!(grads.get("unused").unwrap(), &Tensor::zeros(1, 1));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let params = store(&[("w", Tensor::ones(2, 2))]);
        let tape = Tape::new();
        let w = tape.bind(&params, "w").unwrap();
        assert!(matches!(
            tape.backward(w, &params),
            Err(KernelError::NotScalar(_))
        ));
    }

    #[test]
    fn non_finite_values_are_errors() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::scalar(1000.0)).unwrap();
        assert_eq!(x.exp().unwrap_err(), KernelError::NonFinite { op: "exp" });
    }

    #[test]
    fn logit_form_matches_probability_form() {
        let tape = Tape::<f64>::new();
        let x = Tensor::from_fn(5, 5, |i, j| (i as f64 - 2.0) * (j as f64 + 0.5) * 0.7);
        let target = Tensor::from_fn(5, 5, |i, j| ((i + 2 * j) % 3 == 0) as u8 as f64);
        let logits = tape.constant(x).unwrap();
        let a = logits.pair_bce_logits(&target).unwrap().item().unwrap();
        let b = logits
            .logistic()
            .unwrap()
            .pair_bce(&target)
            .unwrap()
            .item()
            .unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        let wide = tape.constant(Tensor::full(2, 2, 40.0)).unwrap();
        let clamped = wide
            .pair_bce_logits(&Tensor::zeros(2, 2))
            .unwrap()
            .item()
            .unwrap();
        assert!((clamped - (1e12f64).ln()).abs() < 1e-6);
    }

    #[test]
    fn pair_bce_closed_forms() {
        let tape = Tape::<f64>::new();
        let half = tape.constant(Tensor::full(4, 4, 0.5)).unwrap();
        let target = Tensor::from_fn(
            4,
            4,
            |i, j| if i + 1 == j || j + 1 == i { 1.0 } else { 0.0 },
        );
        let bce = half.pair_bce(&target).unwrap().item().unwrap();
        assert!((bce - 2f64.ln()).abs() < 1e-12);
        let single = tape.constant(Tensor::full(1, 1, 0.5)).unwrap();
        assert_eq!(
            single
                .pair_bce(&Tensor::zeros(1, 1))
                .unwrap()
                .item()
                .unwrap(),
            0.0
        );
    }

    #[test]
    fn reused_variable_accumulates() {
        let params = store(&[("x", Tensor::scalar(3.0))]);
        let tape = Tape::new();
        let x = tape.bind(&params, "x").unwrap();
        let loss = x.hadamard(x).unwrap().add(x).unwrap();
        let grads = tape.backward(loss, &params).unwrap();
        assert_eq!(grads.get("x").unwrap().data(), &[7.0]);
    }
}
