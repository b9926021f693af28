//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation applied during a forward pass as a
//! node. Node ids are assigned in creation order, which is a topological
//! order, so [`Graph::backward`] only has to walk the tape once from the end.
//!
//! ```
//! use seqimit_core::autodiff::Graph;
//! use seqimit_core::tensor::Tensor;
//!
//! let g = Graph::new();
//! let x = g.leaf(Tensor::scalar(3.0));
//! let y = g.square(x);
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::{logsumexp_slice, matmul_acc, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Square(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Sum(Var),
    Mean(Var),
    Gather(Var, Vec<usize>),
    LogSoftmax(Var),
    LogSumExp(Var),
    Concat(Vec<Var>, usize),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recording tape for one forward/backward pass.
///
/// Operations take `&self`; the node list lives behind a `RefCell` so that
/// expressions such as `g.add(g.matmul(x, w), b)` compose naturally.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients {
    adj: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.adj.get(v.0).and_then(|a| a.as_ref())
    }

    /// Gradient of `v`, or zeros of the right shape if the loss does not
    /// depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn wrt_all(&self, vars: &[Var]) -> Vec<Tensor> {
        vars.iter().map(|&v| self.wrt(v)).collect()
    }
}

fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    if a == b {
        return true;
    }
    let nb: usize = b.iter().product();
    if nb == 1 {
        return true;
    }
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    /// Copy of the value held by `v`.
    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.with_value(v, |t| t.item())
    }

    /// Records a leaf (parameter or constant).
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&self, value: Tensor) -> Var {
        self.leaf(value)
    }

    fn binary(&self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
        if !broadcast_ok(ta.shape(), tb.shape()) {
            return Err(Error::Shape(format!(
                "{name}: cannot broadcast {:?} onto {:?}",
                tb.shape(),
                ta.shape()
            )));
        }
        let nb = tb.len();
        let (da, db) = (ta.data(), tb.data());
        let data = da
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, db[i % nb]))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    /// Elementwise sum; `b` may be a scalar or broadcast over leading axes.
    pub fn add(&self, a: Var, b: Var) -> Var {
        let out = self.binary(a, b, "add", |x, y| x + y).expect("add shape");
        self.push(out, Op::Add(a, b))
    }

    pub fn try_add(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let out = self.binary(a, b, "sub", |x, y| x - y).expect("sub shape");
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let out = self.binary(a, b, "mul", |x, y| x * y).expect("mul shape");
        self.push(out, Op::Mul(a, b))
    }

    /// Multiplication by a constant.
    pub fn scale(&self, a: Var, c: f64) -> Var {
        let out = self.with_value(a, |t| {
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * c).collect())
        });
        self.push(out.expect("scale"), Op::Scale(a, c))
    }

    pub fn try_matmul(&self, a: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (sa, sb) = (ta.shape(), tb.shape());
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(Error::Shape(format!("matmul {sa:?} x {sb:?}")));
            }
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let mut out = vec![0.0; m * n];
            matmul_acc(ta.data(), tb.data(), &mut out, m, k, n);
            Tensor::new(vec![m, n], out)?
        };
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        self.try_matmul(a, b).expect("matmul shape")
    }

    fn unary(&self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.with_value(a, |t| {
            Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
        });
        self.push(out.expect("unary"), op)
    }

    pub fn square(&self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self, a: Var) -> Var {
        let s = self.with_value(a, |t| t.data().iter().sum());
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Mean of all elements, as a scalar. The mean of an empty tensor is 0.
    pub fn mean(&self, a: Var) -> Var {
        let m = self.with_value(a, |t| {
            if t.is_empty() {
                0.0
            } else {
                t.data().iter().sum::<f64>() / t.len() as f64
            }
        });
        self.push(Tensor::scalar(m), Op::Mean(a))
    }

    /// Picks elements by flat index into `a`, laid out with `shape`.
    pub fn try_gather(&self, a: Var, index: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let ta = &nodes[a.0].value;
            let data = index
                .iter()
                .map(|&i| {
                    ta.data().get(i).copied().ok_or_else(|| {
                        Error::Shape(format!("gather index {i} out of range {}", ta.len()))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Tensor::new(shape, data)?
        };
        Ok(self.push(out, Op::Gather(a, index)))
    }

    pub fn gather(&self, a: Var, index: Vec<usize>) -> Var {
        let n = index.len();
        self.try_gather(a, index, vec![n]).expect("gather")
    }

    /// Rows of a `[R, C]` tensor, as `[rows.len(), C]`.
    pub fn select_rows(&self, a: Var, rows: &[usize]) -> Var {
        let c = self.with_value(a, |t| t.last_dim());
        let index = rows
            .iter()
            .flat_map(|&r| (r * c)..(r * c + c))
            .collect();
        self.try_gather(a, index, vec![rows.len(), c])
            .expect("select_rows")
    }

    pub fn try_log_softmax(&self, a: Var) -> Result<Var> {
        let out = self.with_value(a, |t| {
            let w = t.last_dim();
            if w == 0 || t.shape().is_empty() {
                return Err(Error::Shape("log_softmax over empty last axis".into()));
            }
            let mut data = vec![0.0; t.len()];
            for (src, dst) in t.data().chunks(w).zip(data.chunks_mut(w)) {
                let lse = logsumexp_slice(src);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s - lse;
                }
            }
            Tensor::new(t.shape().to_vec(), data)
        })?;
        Ok(self.push(out, Op::LogSoftmax(a)))
    }

    pub fn log_softmax(&self, a: Var) -> Var {
        self.try_log_softmax(a).expect("log_softmax")
    }

    /// Reduces the last axis with a max-stabilized log-sum-exp.
    pub fn try_logsumexp(&self, a: Var) -> Result<Var> {
        let out = self.with_value(a, |t| {
            let w = t.last_dim();
            if w == 0 || t.shape().is_empty() {
                return Err(Error::Shape("logsumexp over empty last axis".into()));
            }
            let data = t.data().chunks(w).map(logsumexp_slice).collect();
            Tensor::new(t.shape()[..t.shape().len() - 1].to_vec(), data)
        })?;
        Ok(self.push(out, Op::LogSumExp(a)))
    }

    pub fn logsumexp(&self, a: Var) -> Var {
        self.try_logsumexp(a).expect("logsumexp")
    }

    pub fn try_concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let first = parts
                .first()
                .map(|p| nodes[p.0].value.shape().to_vec())
                .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
            if axis >= first.len() {
                return Err(Error::Shape(format!("concat axis {axis} on {first:?}")));
            }
            let outer: usize = first[..axis].iter().product();
            let mut along = 0;
            for p in parts {
                let s = nodes[p.0].value.shape();
                if s.len() != first.len()
                    || s[..axis] != first[..axis]
                    || s[axis + 1..] != first[axis + 1..]
                {
                    return Err(Error::Shape(format!("concat {first:?} with {s:?}")));
                }
                along += s[axis];
            }
            let mut data = Vec::new();
            for o in 0..outer {
                for p in parts {
                    let t = &nodes[p.0].value;
                    let chunk = t.len() / outer.max(1);
                    data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            let mut shape = first;
            shape[axis] = along;
            Tensor::new(shape, data)?
        };
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis)))
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Var {
        self.try_concat(parts, axis).expect("concat")
    }

    pub fn reshape(&self, a: Var, shape: Vec<usize>) -> Var {
        let out = self.with_value(a, |t| t.reshaped(shape)).expect("reshape");
        self.push(out, Op::Reshape(a))
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Nodes are visited exactly once, from the newest to the oldest, so the
    /// result is bit-for-bit reproducible for an identical tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let shapes: Vec<Vec<usize>> = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        if !nodes[loss.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), 1.0));

        fn acc(adj: &mut [Option<Tensor>], v: Var, shape: &[usize], f: impl FnOnce(&mut [f64])) {
            let slot = adj[v.0].get_or_insert_with(|| Tensor::zeros(shape));
            f(slot.data_mut());
        }

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            let gd = g.data();
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    acc(&mut adj, *a, &shapes[a.0], |d| {
                        for (x, y) in d.iter_mut().zip(gd) {
                            *x += y;
                        }
                    });
                    let nb = nodes[b.0].value.len();
                    acc(&mut adj, *b, &shapes[b.0], |d| {
                        for (i, y) in gd.iter().enumerate() {
                            d[i % nb] += sign * y;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    let nb = tb.len();
                    acc(&mut adj, *a, &shapes[a.0], |d| {
                        for (i, x) in d.iter_mut().enumerate() {
                            *x += gd[i] * tb[i % nb];
                        }
                    });
                    acc(&mut adj, *b, &shapes[b.0], |d| {
                        for (i, y) in gd.iter().enumerate() {
                            d[i % nb] += y * ta[i];
                        }
                    });
                }
                Op::Scale(a, c) => acc(&mut adj, *a, &shapes[a.0], |d| {
                    for (x, y) in d.iter_mut().zip(gd) {
                        *x += c * y;
                    }
                }),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    // dA = G B^T
                    acc(&mut adj, *a, &shapes[a.0], |d| {
                        let bd = tb.data();
                        for i in 0..m {
                            let grow = &gd[i * n..(i + 1) * n];
                            for p in 0..k {
                                let brow = &bd[p * n..(p + 1) * n];
                                d[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    });
                    // dB = A^T G
                    acc(&mut adj, *b, &shapes[b.0], |d| {
                        let ad = ta.data();
                        for i in 0..m {
                            let grow = &gd[i * n..(i + 1) * n];
                            for p in 0..k {
                                let aip = ad[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                for (x, y) in d[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *x += aip * y;
                                }
                            }
                        }
                    });
                }
                Op::Square(a) => {
                    let ta = nodes[a.0].value.data();
                    acc(&mut adj, *a, &shapes[a.0], |d| {
                        for i in 0..d.len() {
                            d[i] += 2.0 * ta[i] * gd[i];
                        }
                    });
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    acc(&mut adj, *a, &shapes[a.0], |d| {
                        for i in 0..d.len() {
                            d[i] += (1.0 - y[i] * y[i]) * gd[i];
                        }
                    });
                }
                Op::Relu(a) => {
                    let x = nodes[a.0].value.data();
                    acc(&mut adj, *a, &shapes[a.0], |d| {
                        for i in 0..d.len() {
                            if x[i] > 0.0 {
                                d[i] += gd[i];
                            }
                        }
                    });
                }
                Op::Exp(a) => {
                    let y = node.value.data();
                    acc(&mut adj, *a, &shapes[a.0], |d| {
                        for i in 0..d.len() {
                            d[i] += y[i] * gd[i];
                        }
                    });
                }
                Op::Sum(a) => acc(&mut adj, *a, &shapes[a.0], |d| {
                    for x in d.iter_mut() {
                        *x += gd[0];
                    }
                }),
                Op::Mean(a) => acc(&mut adj, *a, &shapes[a.0], |d| {
                    let n = d.len().max(1) as f64;
                    for x in d.iter_mut() {
                        *x += gd[0] / n;
                    }
                }),
                Op::Gather(a, index) => acc(&mut adj, *a, &shapes[a.0], |d| {
                    for (&i, y) in index.iter().zip(gd) {
                        d[i] += y;
                    }
                }),
                Op::LogSoftmax(a) => {
                    let y = node.value.data();
                    let w = node.value.last_dim();
                    acc(&mut adj, *a, &shapes[a.0], |d| {
                        for r in 0..d.len() / w {
                            let row = r * w..(r + 1) * w;
                            let gsum: f64 = gd[row.clone()].iter().sum();
                            for i in row {
                                d[i] += gd[i] - y[i].exp() * gsum;
                            }
                        }
                    });
                }
                Op::LogSumExp(a) => {
                    let x = nodes[a.0].value.data();
                    let w = nodes[a.0].value.last_dim();
                    let y = node.value.data();
                    acc(&mut adj, *a, &shapes[a.0], |d| {
                        for r in 0..y.len() {
                            for i in r * w..(r + 1) * w {
                                d[i] += gd[r] * (x[i] - y[r]).exp();
                            }
                        }
                    });
                }
                Op::Concat(parts, axis) => {
                    let outer: usize = node.value.shape()[..*axis].iter().product();
                    let mut offset = 0;
                    let row_len = node.value.len() / outer.max(1);
                    for p in parts {
                        let chunk = nodes[p.0].value.len() / outer.max(1);
                        acc(&mut adj, *p, &shapes[p.0], |d| {
                            for o in 0..outer {
                                let src = &gd[o * row_len + offset..o * row_len + offset + chunk];
                                for (x, y) in d[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                    *x += y;
                                }
                            }
                        });
                        offset += chunk;
                    }
                }
                Op::Reshape(a) => acc(&mut adj, *a, &shapes[a.0], |d| {
                    for (x, y) in d.iter_mut().zip(gd) {
                        *x += y;
                    }
                }),
            }
            // Keep leaf adjoints around for the caller.
            if matches!(node.op, Op::Leaf) {
                adj[id] = Some(g);
            }
        }
        adj.resize(nodes.len(), None);
        Ok(Gradients { adj, shapes })
    }
}
