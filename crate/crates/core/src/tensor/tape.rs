use super::{finite, Tensor};
use crate::entropy::{self, KnnEstimator, SampleMatrix};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    /// Variance with divisor N.
    VarPopulation,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    BiasAdd(Var, Var),
    Tanh(Var),
    Relu(Var),
    Log(Var),
    Square(Var),
    Scale(Var, f64),
    Reduce {
        input: Var,
        red: Reduction,
        axis: Option<usize>,
    },
    Reshape(Var, Vec<usize>),
    Stack(Vec<Var>),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
    },
    KnnEntropy(Var, KnnEstimator),
    GaussianEntropy(Var),
}

/// Backward-pass state captured during forward evaluation.
#[derive(Debug, Clone, Default)]
enum Aux {
    #[default]
    None,
    Knn {
        samples: SampleMatrix,
        neighbors: Vec<usize>,
        radii: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    aux: Aux,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so parents
/// always precede children.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

/// Split a shape at `axis` into `(outer, len, inner)` extents.
fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn binary_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || b.is_scalar() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let n: usize = shape.iter().product();
    let at = |t: &Tensor, i: usize| if t.numel() == 1 { t.data()[0] } else { t.data()[i] };
    let data = (0..n).map(|i| f(at(a, i), at(b, i))).collect();
    Tensor::from_parts(shape, data)
}

/// Fold a broadcast gradient back onto an operand of `numel` elements.
fn unbroadcast(grad: Vec<f64>, numel: usize) -> Vec<f64> {
    if grad.len() == numel {
        grad
    } else {
        vec![grad.iter().sum()]
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
}

fn samples_of(t: &Tensor, op: &str) -> Result<SampleMatrix> {
    if t.rank() != 2 {
        return Err(Error::Domain(format!(
            "{op} expects an n x d sample matrix, got shape {:?}",
            t.shape()
        )));
    }
    SampleMatrix::new(t.shape()[0], t.shape()[1], t.data().to_vec())
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

    fn push(&mut self, op: Op, value: Tensor, aux: Aux) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            _ => self.parents(&op).iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            aux,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let (value, aux) = self.eval(&op)?;
        Ok(self.push(op, value, aux))
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let v = self.push(Op::Leaf, value, Aux::None);
        self.nodes[v.0].requires_grad = requires_grad;
        v
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated on `v` by the last [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.nodes[v.0].value.shape().to_vec(), g.clone()))
    }

    fn parents(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::BiasAdd(a, b) => {
                vec![*a, *b]
            }
            Op::Tanh(a)
            | Op::Relu(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::Scale(a, _)
            | Op::Reshape(a, _)
            | Op::KnnEntropy(a, _)
            | Op::GaussianEntropy(a) => vec![*a],
            Op::Reduce { input, .. } => vec![*input],
            Op::Stack(parts) => parts.clone(),
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }

    fn eval(&self, op: &Op) -> Result<(Tensor, Aux)> {
        let val = |v: &Var| &self.nodes[v.0].value;
        let out = match op {
            Op::Leaf => unreachable!("leaves are not re-evaluated"),
            Op::MatMul(a, b) => val(a).matmul(val(b))?,
            Op::Add(a, b) => {
                let shape = binary_shape("add", val(a), val(b))?;
                finite("add", zip_broadcast(val(a), val(b), shape, |x, y| x + y))?
            }
            Op::Sub(a, b) => {
                let shape = binary_shape("sub", val(a), val(b))?;
                finite("sub", zip_broadcast(val(a), val(b), shape, |x, y| x - y))?
            }
            Op::Mul(a, b) => {
                let shape = binary_shape("mul", val(a), val(b))?;
                finite("mul", zip_broadcast(val(a), val(b), shape, |x, y| x * y))?
            }
            Op::BiasAdd(x, b) => {
                let (x, b) = (val(x), val(b));
                let cols = *x.shape().last().unwrap_or(&1);
                if x.rank() != 2 || b.numel() != cols {
                    return Err(Error::Dimension {
                        op: "bias_add",
                        lhs: x.shape().to_vec(),
                        rhs: b.shape().to_vec(),
                    });
                }
                let data = x
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v + b.data()[i % cols])
                    .collect();
                finite("bias_add", Tensor::from_parts(x.shape().to_vec(), data))?
            }
            Op::Tanh(a) => map(val(a), f64::tanh),
            Op::Relu(a) => map(val(a), |v| if v > 0.0 { v } else { 0.0 }),
            Op::Log(a) => {
                if let Some(bad) = val(a).data().iter().find(|&&v| v <= 0.0) {
                    return Err(Error::Domain(format!("log of non-positive value {bad}")));
                }
                map(val(a), f64::ln)
            }
            Op::Square(a) => finite("square", map(val(a), |v| v * v))?,
            Op::Scale(a, c) => finite("scale", map(val(a), |v| v * c))?,
            Op::Reduce { input, red, axis } => reduce(val(input), *red, *axis)?,
            Op::Reshape(a, shape) => val(a).reshape(shape)?,
            Op::Stack(parts) => {
                let mut data = Vec::with_capacity(parts.len());
                for p in parts {
                    let t = val(p);
                    if !t.is_scalar() {
                        return Err(Error::Dimension {
                            op: "stack",
                            lhs: vec![1],
                            rhs: t.shape().to_vec(),
                        });
                    }
                    data.push(t.data()[0]);
                }
                if data.is_empty() {
                    return Err(Error::Domain("stack of zero scalars".into()));
                }
                Tensor::from_parts(vec![data.len()], data)
            }
            Op::SoftmaxCrossEntropy { logits, targets } => {
                let z = val(logits);
                if z.rank() != 2 || z.shape()[0] != targets.len() {
                    return Err(Error::Dimension {
                        op: "softmax_cross_entropy",
                        lhs: z.shape().to_vec(),
                        rhs: vec![targets.len()],
                    });
                }
                let c = z.shape()[1];
                if let Some(t) = targets.iter().find(|&&t| t >= c) {
                    return Err(Error::Domain(format!("class {t} out of range for {c} logits")));
                }
                let mut total = 0.0;
                for (i, &t) in targets.iter().enumerate() {
                    let row = z.row(i);
                    total += log_sum_exp(row) - row[t];
                }
                finite(
                    "softmax_cross_entropy",
                    Tensor::scalar(total / targets.len() as f64),
                )?
            }
            Op::KnnEntropy(a, est) => {
                let s = samples_of(val(a), "knn_entropy")?;
                let fit = est.fit(&s)?;
                let value = Tensor::scalar(fit.estimate.value);
                return Ok((
                    finite("knn_entropy", value)?,
                    Aux::Knn {
                        samples: fit.samples,
                        neighbors: fit.neighbors,
                        radii: fit.radii,
                    },
                ));
            }
            Op::GaussianEntropy(a) => {
                let s = samples_of(val(a), "gaussian_entropy")?;
                Tensor::scalar(entropy::gaussian_proxy_entropy(&s).value)
            }
        };
        Ok((out, Aux::None))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul(a, b))
    }

    /// `x[i, j] + b[j]` for a rank-2 `x` and a bias of matching width.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        self.record(Op::BiasAdd(x, b))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Relu(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Square(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.record(Op::Scale(a, c))
    }

    pub fn reduce(&mut self, red: Reduction, input: Var, axis: Option<usize>) -> Result<Var> {
        self.record(Op::Reduce { input, red, axis })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduction::Sum, a, None)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduction::Mean, a, None)
    }

    pub fn var_population(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduction::VarPopulation, a, None)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.record(Op::Reshape(a, shape.to_vec()))
    }

    /// Concatenate scalars into a rank-1 tensor.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        self.record(Op::Stack(parts.to_vec()))
    }

    /// Mean cross-entropy of row-wise softmax against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        self.record(Op::SoftmaxCrossEntropy {
            logits,
            targets: targets.to_vec(),
        })
    }

    /// kNN differential entropy of an `n x d` sample matrix. The backward
    /// pass holds neighbour assignments fixed.
    pub fn knn_entropy(&mut self, samples: Var, estimator: &KnnEstimator) -> Result<Var> {
        self.record(Op::KnnEntropy(samples, estimator.clone()))
    }

    /// Diagonal-Gaussian entropy proxy of an `n x d` sample matrix.
    pub fn gaussian_entropy(&mut self, samples: Var) -> Result<Var> {
        self.record(Op::GaussianEntropy(samples))
    }

    /// Replace a leaf's value. Shapes must match.
    pub fn set_leaf(&mut self, v: Var, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::Contract(format!("node {} is not a leaf", v.0)));
        }
        if node.value.shape() != value.shape() {
            return Err(Error::Dimension {
                op: "set_leaf",
                lhs: node.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        node.value = value;
        Ok(())
    }

    /// Re-run every recorded op from the current leaf values.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let (value, aux) = self.eval(&op)?;
            self.nodes[i].value = value;
            self.nodes[i].aux = aux;
        }
        Ok(())
    }

    pub fn reset_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    fn accumulate(&mut self, v: Var, g: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot => *slot = Some(g),
        }
    }

    /// Propagate d(root)/d(node) to every node reachable from `root`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        if self.backward_done {
            return Err(Error::Contract(
                "backward already ran on this tape; call reset_grads first".into(),
            ));
        }
        self.backward_done = true;
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].clone() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            self.backward_node(i, &op, g)?;
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, op: &Op, g: Vec<f64>) -> Result<()> {
        let val = |tape: &Tape, v: &Var| tape.nodes[v.0].value.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(self, a), val(self, b));
                let gt = Tensor::from_parts(self.nodes[i].value.shape().to_vec(), g);
                let ga = gt.matmul(&bv.transpose()?)?;
                let gb = av.transpose()?.matmul(&gt)?;
                self.accumulate(*a, ga.into_data());
                self.accumulate(*b, gb.into_data());
            }
            Op::Add(a, b) => {
                let (na, nb) = (self.nodes[a.0].value.numel(), self.nodes[b.0].value.numel());
                self.accumulate(*a, unbroadcast(g.clone(), na));
                self.accumulate(*b, unbroadcast(g, nb));
            }
            Op::Sub(a, b) => {
                let (na, nb) = (self.nodes[a.0].value.numel(), self.nodes[b.0].value.numel());
                self.accumulate(*a, unbroadcast(g.clone(), na));
                self.accumulate(*b, unbroadcast(g.iter().map(|v| -v).collect(), nb));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(self, a), val(self, b));
                let at = |t: &Tensor, k: usize| if t.numel() == 1 { t.data()[0] } else { t.data()[k] };
                let ga: Vec<f64> = g.iter().enumerate().map(|(k, gk)| gk * at(&bv, k)).collect();
                let gb: Vec<f64> = g.iter().enumerate().map(|(k, gk)| gk * at(&av, k)).collect();
                self.accumulate(*a, unbroadcast(ga, av.numel()));
                self.accumulate(*b, unbroadcast(gb, bv.numel()));
            }
            Op::BiasAdd(x, b) => {
                let cols = self.nodes[b.0].value.numel();
                let mut gb = vec![0.0; cols];
                for (k, gk) in g.iter().enumerate() {
                    gb[k % cols] += gk;
                }
                self.accumulate(*x, g);
                self.accumulate(*b, gb);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                let ga = g.iter().zip(y.data()).map(|(gk, yk)| gk * (1.0 - yk * yk)).collect();
                self.accumulate(*a, ga);
            }
            Op::Relu(a) => {
                let x = &self.nodes[a.0].value;
                let ga = g
                    .iter()
                    .zip(x.data())
                    .map(|(gk, &xk)| if xk > 0.0 { *gk } else { 0.0 })
                    .collect();
                self.accumulate(*a, ga);
            }
            Op::Log(a) => {
                let x = &self.nodes[a.0].value;
                let ga = g.iter().zip(x.data()).map(|(gk, xk)| gk / xk).collect();
                self.accumulate(*a, ga);
            }
            Op::Square(a) => {
                let x = &self.nodes[a.0].value;
                let ga = g.iter().zip(x.data()).map(|(gk, xk)| 2.0 * xk * gk).collect();
                self.accumulate(*a, ga);
            }
            Op::Scale(a, c) => {
                let ga = g.iter().map(|gk| gk * c).collect();
                self.accumulate(*a, ga);
            }
            Op::Reduce { input, red, axis } => {
                let x = val(self, input);
                let gx = reduce_backward(&x, *red, *axis, &g);
                self.accumulate(*input, gx);
            }
            Op::Reshape(a, _) => self.accumulate(*a, g),
            Op::Stack(parts) => {
                for (p, gk) in parts.iter().zip(g) {
                    self.accumulate(*p, vec![gk]);
                }
            }
            Op::SoftmaxCrossEntropy { logits, targets } => {
                let z = val(self, logits);
                let c = z.shape()[1];
                let m = targets.len() as f64;
                let mut gz = vec![0.0; z.numel()];
                for (r, &t) in targets.iter().enumerate() {
                    let row = z.row(r);
                    let lse = log_sum_exp(row);
                    for j in 0..c {
                        let p = (row[j] - lse).exp();
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        gz[r * c + j] = g[0] * (p - onehot) / m;
                    }
                }
                self.accumulate(*logits, gz);
            }
            Op::KnnEntropy(a, _) => {
                let Aux::Knn {
                    samples,
                    neighbors,
                    radii,
                } = &self.nodes[i].aux
                else {
                    return Err(Error::Contract("knn node lost its neighbour cache".into()));
                };
                let grad = entropy::knn_gradient_frozen(samples, neighbors, radii);
                let ga = grad.into_iter().map(|v| v * g[0]).collect();
                self.accumulate(*a, ga);
            }
            Op::GaussianEntropy(a) => {
                let s = samples_of(&self.nodes[a.0].value, "gaussian_entropy")?;
                let grad = entropy::gaussian_proxy_gradient(&s);
                let ga = grad.into_iter().map(|v| v * g[0]).collect();
                self.accumulate(*a, ga);
            }
        }
        Ok(())
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Population variance of a lane, shifted by its first element so that a
/// constant lane yields exactly zero.
fn lane_variance(vals: impl Iterator<Item = f64> + Clone, len: usize) -> f64 {
    let mut it = vals.clone();
    let first = it.next().unwrap_or(0.0);
    let mean = vals.clone().map(|v| v - first).sum::<f64>() / len as f64;
    vals.map(|v| {
        let d = v - first - mean;
        d * d
    })
    .sum::<f64>()
        / len as f64
}

fn reduce(x: &Tensor, red: Reduction, axis: Option<usize>) -> Result<Tensor> {
    let (outer, len, inner, out_shape) = match axis {
        None => (1, x.numel(), 1, Vec::new()),
        Some(ax) => {
            if ax >= x.rank() {
                return Err(Error::Domain(format!(
                    "reduction axis {ax} out of range for shape {:?}",
                    x.shape()
                )));
            }
            let (o, l, i) = lanes(x.shape(), ax);
            let mut s = x.shape().to_vec();
            s.remove(ax);
            (o, l, i, s)
        }
    };
    if len == 0 {
        return Err(Error::Domain("empty reduction axis".into()));
    }
    let data = x.data();
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let lane = (0..len).map(|l| data[(o * len + l) * inner + i]);
            let v = match red {
                Reduction::Sum => lane.sum(),
                Reduction::Mean => lane.sum::<f64>() / len as f64,
                Reduction::VarPopulation => lane_variance(lane, len),
            };
            out.push(v);
        }
    }
    finite("reduce", Tensor::from_parts(out_shape, out))
}

fn reduce_backward(x: &Tensor, red: Reduction, axis: Option<usize>, g: &[f64]) -> Vec<f64> {
    let (outer, len, inner) = match axis {
        None => (1, x.numel(), 1),
        Some(ax) => lanes(x.shape(), ax),
    };
    let data = x.data();
    let mut gx = vec![0.0; x.numel()];
    for o in 0..outer {
        for i in 0..inner {
            let go = g[o * inner + i];
            let idx = |l: usize| (o * len + l) * inner + i;
            match red {
                Reduction::Sum => (0..len).for_each(|l| gx[idx(l)] = go),
                Reduction::Mean => (0..len).for_each(|l| gx[idx(l)] = go / len as f64),
                Reduction::VarPopulation => {
                    let first = data[idx(0)];
                    let mean = (0..len).map(|l| data[idx(l)] - first).sum::<f64>() / len as f64;
                    for l in 0..len {
                        gx[idx(l)] = go * 2.0 * (data[idx(l)] - first - mean) / len as f64;
                    }
                }
            }
        }
    }
    gx
}
