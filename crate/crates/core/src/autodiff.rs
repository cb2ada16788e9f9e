//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and the indices of
//! its inputs. [`Tape::backward`] sweeps the tape in reverse and accumulates
//! adjoints; [`Tape::replay`] recomputes every node from the leaves.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<R> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, R),
    Reshape(Var),
    Gather(Var, Arc<[usize]>),
    Concat(Vec<Var>, usize),
    Gelu(Var),
    Tanh(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    MeanRows(Var),
}

#[derive(Clone, Debug)]
struct Node<R> {
    op: Op<R>,
    value: Tensor<R>,
}

/// Recorded computation graph (single writer).
#[derive(Clone, Debug, Default)]
pub struct Tape<R> {
    nodes: Vec<Node<R>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu<R: Real>(x: R) -> R {
    let c = R::from_f64(GELU_C);
    let a = R::from_f64(GELU_A);
    let half = R::from_f64(0.5);
    half * x * (R::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<R: Real>(x: R) -> R {
    let c = R::from_f64(GELU_C);
    let a = R::from_f64(GELU_A);
    let half = R::from_f64(0.5);
    let th = (c * (x + a * x * x * x)).tanh();
    let du = c * (R::one() + R::from_f64(3.0) * a * x * x);
    half * (R::one() + th) + half * x * (R::one() - th * th) * du
}

fn rows_cols<R: Real>(t: &Tensor<R>, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        &[m, n] => Ok((m, n)),
        other => Err(Error::Contract(format!(
            "{op} expects a matrix, got shape {other:?}"
        ))),
    }
}

/// Sum that does not depend on the order of `xs`: values are sorted first.
fn order_free_sum<R: Real>(xs: &mut [R]) -> R {
    xs.sort_by(|a, b| a.total_cmp(b));
    xs.iter().copied().sum()
}

fn eval<R: Real>(op: &Op<R>, nodes: &[Node<R>], out_shape: &[usize]) -> Result<Tensor<R>> {
    let v = |x: &Var| &nodes[x.0].value;
    Ok(match op {
        Op::Leaf => unreachable!("leaves carry their own value"),
        Op::MatMul(a, b) => v(a).matmul(v(b))?,
        Op::Transpose(a) => v(a).transpose()?,
        Op::AddRowBias(x, b) => {
            let (m, n) = rows_cols(v(x), "add_row_bias")?;
            let bias = v(b);
            if bias.len() != n {
                return Err(Error::shape("add_row_bias", v(x).shape(), bias.shape()));
            }
            let xd = v(x).data();
            Tensor::from_fn(&[m, n], |i| xd[i] + bias.data()[i % n])
        }
        Op::Add(a, b) | Op::Mul(a, b) => {
            if v(a).shape() != v(b).shape() {
                return Err(Error::shape("elementwise", v(a).shape(), v(b).shape()));
            }
            let (ad, bd) = (v(a).data(), v(b).data());
            let is_add = matches!(op, Op::Add(..));
            Tensor::from_fn(v(a).shape(), |i| {
                if is_add {
                    ad[i] + bd[i]
                } else {
                    ad[i] * bd[i]
                }
            })
        }
        Op::Scale(a, s) => v(a).map(|x| x * *s),
        Op::Reshape(a) => v(a).clone().reshape(out_shape)?,
        Op::Gather(a, index) => {
            let src = v(a).data();
            if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
                return Err(Error::Contract(format!(
                    "gather index {bad} out of range for {} elements",
                    src.len()
                )));
            }
            let data = index.iter().map(|&i| src[i]).collect();
            Tensor::new(out_shape.to_vec(), data)?
        }
        Op::Concat(xs, axis) => {
            let refs: Vec<&Tensor<R>> = xs.iter().map(v).collect();
            Tensor::concat(&refs, *axis)?
        }
        Op::Gelu(a) => v(a).map(gelu),
        Op::Tanh(a) => v(a).map(|x| x.tanh()),
        Op::LogSoftmaxRows(a) => {
            let (m, n) = rows_cols(v(a), "log_softmax_rows")?;
            let xd = v(a).data();
            let mut out = vec![R::zero(); m * n];
            for r in 0..m {
                let row = &xd[r * n..(r + 1) * n];
                let max = row
                    .iter()
                    .copied()
                    .fold(row[0], |m, x| if x > m { x } else { m });
                let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<R>().ln();
                for (o, &x) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                    *o = x - lse;
                }
            }
            Tensor::new(vec![m, n], out)?
        }
        Op::Sum(a) => Tensor::scalar(v(a).sum()),
        Op::MeanRows(a) => {
            let (m, n) = rows_cols(v(a), "mean_rows")?;
            let xd = v(a).data();
            let inv = R::one() / R::from_f64(m as f64);
            let mut col = vec![R::zero(); m];
            Tensor::from_fn(&[1, n], |j| {
                for (i, c) in col.iter_mut().enumerate() {
                    *c = xd[i * n + j];
                }
                order_free_sum(&mut col) * inv
            })
        }
    })
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<R>) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn is_leaf(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Leaf)
    }

    fn push(&mut self, op: Op<R>, shape: &[usize]) -> Result<Var> {
        let value = eval(&op, &self.nodes, shape)?;
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b), &[])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Transpose(a), &[])
    }

    /// `x[m×n] + b[n]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.push(Op::AddRowBias(x, b), &[])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b), &[])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b), &[])
    }

    pub fn scale(&mut self, a: Var, s: R) -> Result<Var> {
        self.push(Op::Scale(a, s), &[])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.push(Op::Reshape(a), shape)
    }

    /// `out[i] = a.data[index[i]]`, reshaped to `shape`. The adjoint
    /// scatter-adds, so repeated indices accumulate.
    pub fn gather(&mut self, a: Var, index: Arc<[usize]>, shape: &[usize]) -> Result<Var> {
        self.push(Op::Gather(a, index), shape)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        self.push(Op::Concat(xs.to_vec(), axis), &[])
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Gelu(a), &[])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Tanh(a), &[])
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.push(Op::LogSoftmaxRows(a), &[])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a), &[])
    }

    /// Column means of a matrix as `[1×n]`; the result is independent of
    /// row order, bit for bit.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        self.push(Op::MeanRows(a), &[])
    }

    /// Recomputes every non-leaf node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor<R>>> {
        let mut fresh: Vec<Node<R>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => eval(op, &fresh, node.value.shape())?,
            };
            fresh.push(Node {
                op: node.op.clone(),
                value,
            });
        }
        Ok(fresh.into_iter().map(|n| n.value).collect())
    }

    /// Reverse sweep from a scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients<R>> {
        let out = &self.nodes[output.0].value;
        if !out.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor<R>>> = vec![None; output.0 + 1];
        adj[output.0] = Some(Tensor::full(out.shape(), R::one()));

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let val = |v: &Var| &self.nodes[v.0].value;
            let mut acc = |v: Var, d: Tensor<R>| {
                match &mut adj[v.0] {
                    Some(t) => {
                        for (a, b) in t.data_mut().iter_mut().zip(d.data()) {
                            *a += *b;
                        }
                    }
                    slot @ None => *slot = Some(d),
                }
                Ok::<(), Error>(())
            };
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    acc(*a, g.matmul(&val(b).transpose()?)?)?;
                    acc(*b, val(a).transpose()?.matmul(&g)?)?;
                }
                Op::Transpose(a) => acc(*a, g.transpose()?)?,
                Op::AddRowBias(x, b) => {
                    let n = val(b).len();
                    let mut db = vec![R::zero(); n];
                    for (i, &v) in g.data().iter().enumerate() {
                        db[i % n] += v;
                    }
                    acc(*b, Tensor::new(val(b).shape().to_vec(), db)?)?;
                    acc(*x, g)?;
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone())?;
                    acc(*b, g)?;
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (val(a).data(), val(b).data());
                    let gd = g.data();
                    acc(*a, Tensor::from_fn(g.shape(), |i| gd[i] * bd[i]))?;
                    acc(*b, Tensor::from_fn(g.shape(), |i| gd[i] * ad[i]))?;
                }
                Op::Scale(a, s) => acc(*a, g.map(|x| x * *s))?,
                Op::Reshape(a) => acc(*a, g.reshape(val(a).shape())?)?,
                Op::Gather(a, index) => {
                    let mut d = Tensor::zeros(val(a).shape());
                    let dd = d.data_mut();
                    for (&i, &v) in index.iter().zip(g.data()) {
                        dd[i] += v;
                    }
                    acc(*a, d)?;
                }
                Op::Concat(xs, axis) => {
                    let sizes: Vec<usize> = xs.iter().map(|x| val(x).shape()[*axis]).collect();
                    for (x, piece) in xs.iter().zip(g.split(&sizes, *axis)?) {
                        acc(*x, piece)?;
                    }
                }
                Op::Gelu(a) => {
                    let xd = val(a).data();
                    let gd = g.data();
                    acc(*a, Tensor::from_fn(g.shape(), |i| gd[i] * gelu_grad(xd[i])))?;
                }
                Op::Tanh(a) => {
                    let yd = node.value.data();
                    let gd = g.data();
                    acc(
                        *a,
                        Tensor::from_fn(g.shape(), |i| gd[i] * (R::one() - yd[i] * yd[i])),
                    )?;
                }
                Op::LogSoftmaxRows(a) => {
                    let (m, n) = rows_cols(&node.value, "log_softmax_rows")?;
                    let yd = node.value.data();
                    let gd = g.data();
                    let mut d = vec![R::zero(); m * n];
                    for r in 0..m {
                        let s: R = gd[r * n..(r + 1) * n].iter().copied().sum();
                        for c in 0..n {
                            let i = r * n + c;
                            d[i] = gd[i] - yd[i].exp() * s;
                        }
                    }
                    acc(*a, Tensor::new(vec![m, n], d)?)?;
                }
                Op::Sum(a) => {
                    let s = g.item();
                    acc(*a, Tensor::full(val(a).shape(), s))?;
                }
                Op::MeanRows(a) => {
                    let (m, n) = rows_cols(val(a), "mean_rows")?;
                    let inv = R::one() / R::from_f64(m as f64);
                    let gd = g.data();
                    acc(*a, Tensor::from_fn(&[m, n], |i| gd[i % n] * inv))?;
                }
            }
        }
        Ok(Gradients { adj })
    }
}

/// Adjoints of every leaf reached from the output.
#[derive(Clone, Debug)]
pub struct Gradients<R> {
    adj: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    /// Gradient for `v`; `None` when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Tensor<R>> {
        self.adj.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zero-filled with `like`'s shape when unreached.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<R>) -> Tensor<R> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}
