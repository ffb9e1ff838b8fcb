//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Operations append nodes to a [`Tape`] in evaluation order, so node
//! indices are already a topological order and [`Tape::backward`] is a
//! single reverse sweep. Parameters are borrowed, not copied.

use std::borrow::Cow;

use super::tensor::{self, matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Clamp applied to probabilities before taking logs in the BCE node.
pub const BCE_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Tensor),
    Silu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    MeanRows(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Bce { p: Var, target: f64 },
    AddN(Vec<Var>),
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Computation graph for one forward pass.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf borrowing `t` (a model parameter).
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf owning its value.
    pub fn param_owned(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMulNt(a, b), &[a, b]))
    }

    /// `x · Wᵀ (+ b)` for a weight stored as `[out, in]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul_nt(x, weight)?;
        match bias {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dimension {
                op: "add",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`c` vector to every row of an `r × c` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        let (r, c) = tx.dims2();
        if tr.len() != c {
            return Err(Error::Dimension {
                op: "add_row",
                left: tx.shape().to_vec(),
                right: tr.shape().to_vec(),
            });
        }
        let mut out = tx.clone();
        let rd = tr.data();
        let od = out.data_mut();
        for i in 0..r {
            for j in 0..c {
                od[i * c + j] += rd[j];
            }
        }
        Ok(self.push(out, Op::AddRow(x, row), &[x, row]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    /// Elementwise product with a fixed tensor (dropout masks).
    pub fn mul_const(&mut self, x: Var, mask: Tensor) -> Result<Var> {
        let tx = self.value(x);
        if tx.len() != mask.len() {
            return Err(Error::Dimension {
                op: "mul_const",
                left: tx.shape().to_vec(),
                right: mask.shape().to_vec(),
            });
        }
        let mut out = tx.clone();
        for (o, m) in out.data_mut().iter_mut().zip(mask.data()) {
            *o *= m;
        }
        Ok(self.push(out, Op::MulConst(x, mask), &[x]))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = tensor::swiglu_activation(self.value(x));
        self.push(out, Op::Silu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(tensor::sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = tensor::softmax_rows(self.value(x));
        self.push(out, Op::SoftmaxRows(x), &[x])
    }

    /// Per-row layer normalization with learnable gain and bias.
    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = tx.dims2();
        if c < 2 {
            return Err(Error::Degenerate(format!(
                "layer norm needs at least 2 features, got {c}"
            )));
        }
        let (g, b) = (self.value(gain), self.value(bias));
        if g.len() != c || b.len() != c {
            return Err(Error::Dimension {
                op: "layer_norm_rows",
                left: tx.shape().to_vec(),
                right: vec![g.len(), b.len()],
            });
        }
        let mut xhat = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let (row_hat, is) = tensor::standardize(tx.row(i), eps);
            for (j, h) in row_hat.iter().enumerate() {
                out.push(g.data()[j] * h + b.data()[j]);
            }
            xhat.extend(row_hat);
            inv_std.push(is);
        }
        let shape = tx.shape().to_vec();
        let out = Tensor::new(shape.clone(), out)?;
        let xhat = Tensor::new(shape, xhat)?;
        Ok(self.push(
            out,
            Op::LayerNormRows {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Mean over rows, producing a `1 × c` matrix.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let (r, c) = tx.dims2();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(tx.row(i)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        let out = Tensor::matrix(1, c, out).expect("mean_rows shape");
        self.push(out, Op::MeanRows(x), &[x])
    }

    /// Columns `[start, start + len)` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (r, c) = tx.dims2();
        if len == 0 || start + len > c {
            return Err(Error::Dimension {
                op: "slice_cols",
                left: tx.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&tx.row(i)[start..start + len]);
        }
        let out = Tensor::matrix(r, len, out)?;
        Ok(self.push(out, Op::SliceCols(x, start), &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts
            .first()
            .map(|p| self.value(*p).rows())
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        if parts.iter().any(|p| self.value(*p).rows() != r) {
            return Err(Error::Contract("concat_cols row counts differ".into()));
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(i));
            }
        }
        let out = Tensor::matrix(r, total, out)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Binary cross-entropy of a scalar probability against a soft target.
    pub fn bce(&mut self, p: Var, target: f64) -> Result<Var> {
        if !(0.0..=1.0).contains(&target) {
            return Err(Error::Contract(format!(
                "BCE target must lie in [0, 1], got {target}"
            )));
        }
        let tp = self.value(p);
        if tp.len() != 1 {
            return Err(Error::Contract("BCE expects a scalar probability".into()));
        }
        let loss = bce_value(tp.data()[0], target);
        Ok(self.push(Tensor::vector(vec![loss]), Op::Bce { p, target }, &[p]))
    }

    /// Sum of equally shaped nodes.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("sum of zero tensors".into()))?;
        let mut out = self.value(*first).clone();
        for p in &parts[1..] {
            let t = self.value(*p);
            if t.shape() != out.shape() {
                return Err(Error::Dimension {
                    op: "add_n",
                    left: out.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            out.add_assign(t);
        }
        Ok(self.push(out, Op::AddN(parts.to_vec()), parts))
    }

    /// Reverse sweep from a scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &dy, &mut grads)?;
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<'a>, dy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |v: Var, g: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                // C = A·B: dA = dC·Bᵀ, dB = Aᵀ·dC
                acc(*a, matmul_nt(dy, self.value(*b))?);
                acc(*b, matmul_tn(self.value(*a), dy)?);
            }
            Op::MatMulNt(a, b) => {
                // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                acc(*a, matmul(dy, self.value(*b))?);
                acc(*b, matmul_tn(dy, self.value(*a))?);
            }
            Op::Add(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.clone());
            }
            Op::AddRow(x, row) => {
                acc(*x, dy.clone());
                let (r, c) = dy.dims2();
                let mut g = vec![0.0; c];
                for i in 0..r {
                    for (gj, d) in g.iter_mut().zip(dy.row(i)) {
                        *gj += d;
                    }
                }
                let shape = self.value(*row).shape().to_vec();
                acc(*row, Tensor::new(shape, g)?);
            }
            Op::Scale(x, s) => acc(*x, dy.map(|v| v * s)),
            Op::MulConst(x, mask) => {
                let mut g = dy.clone();
                for (o, m) in g.data_mut().iter_mut().zip(mask.data()) {
                    *o *= m;
                }
                acc(*x, g);
            }
            Op::Silu(x) => {
                let mut g = dy.clone();
                for (o, xv) in g.data_mut().iter_mut().zip(self.value(*x).data()) {
                    *o *= tensor::silu_grad(*xv);
                }
                acc(*x, g);
            }
            Op::Sigmoid(x) => {
                let mut g = dy.clone();
                for (o, y) in g.data_mut().iter_mut().zip(node.value.data()) {
                    *o *= y * (1.0 - y);
                }
                acc(*x, g);
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let (r, c) = y.dims2();
                let mut g = vec![0.0; r * c];
                for i in 0..r {
                    let (yr, dr) = (y.row(i), dy.row(i));
                    let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        g[i * c + j] = yr[j] * (dr[j] - dot);
                    }
                }
                acc(*x, Tensor::new(y.shape().to_vec(), g)?);
            }
            Op::LayerNormRows {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (r, c) = xhat.dims2();
                let gv = self.value(*gain).data();
                let mut dx = vec![0.0; r * c];
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                for i in 0..r {
                    let (hr, dr) = (xhat.row(i), dy.row(i));
                    let mut mean_d = 0.0;
                    let mut mean_dh = 0.0;
                    for j in 0..c {
                        let dxh = dr[j] * gv[j];
                        mean_d += dxh;
                        mean_dh += dxh * hr[j];
                        dg[j] += dr[j] * hr[j];
                        db[j] += dr[j];
                    }
                    mean_d /= c as f64;
                    mean_dh /= c as f64;
                    for j in 0..c {
                        let dxh = dr[j] * gv[j];
                        dx[i * c + j] = inv_std[i] * (dxh - mean_d - hr[j] * mean_dh);
                    }
                }
                acc(*x, Tensor::new(xhat.shape().to_vec(), dx)?);
                acc(*gain, Tensor::new(self.value(*gain).shape().to_vec(), dg)?);
                acc(*bias, Tensor::new(self.value(*bias).shape().to_vec(), db)?);
            }
            Op::MeanRows(x) => {
                let tx = self.value(*x);
                let (r, c) = tx.dims2();
                let mut g = Vec::with_capacity(r * c);
                for _ in 0..r {
                    g.extend(dy.data().iter().map(|d| d / r as f64));
                }
                acc(*x, Tensor::new(tx.shape().to_vec(), g)?);
            }
            Op::SliceCols(x, start) => {
                let tx = self.value(*x);
                let (r, c) = tx.dims2();
                let len = dy.cols();
                let mut g = vec![0.0; r * c];
                for i in 0..r {
                    g[i * c + start..i * c + start + len].copy_from_slice(dy.row(i));
                }
                acc(*x, Tensor::new(tx.shape().to_vec(), g)?);
            }
            Op::ConcatCols(parts) => {
                let r = dy.rows();
                let mut offset = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    let mut g = Vec::with_capacity(r * c);
                    for i in 0..r {
                        g.extend_from_slice(&dy.row(i)[offset..offset + c]);
                    }
                    acc(*p, Tensor::new(self.value(*p).shape().to_vec(), g)?);
                    offset += c;
                }
            }
            Op::Bce { p, target } => {
                let pv = self.value(*p).data()[0];
                let d = if pv > BCE_EPS && pv < 1.0 - BCE_EPS {
                    -target / pv + (1.0 - target) / (1.0 - pv)
                } else {
                    0.0
                };
                let shape = self.value(*p).shape().to_vec();
                acc(*p, Tensor::new(shape, vec![d * dy.data()[0]])?);
            }
            Op::AddN(parts) => {
                for p in parts {
                    acc(*p, dy.clone());
                }
            }
        }
        Ok(())
    }
}

/// `-[y ln p + (1-y) ln(1-p)]` with `p` clamped to `[ε, 1-ε]`.
pub fn bce_value(p: f64, y: f64) -> f64 {
    let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
}
