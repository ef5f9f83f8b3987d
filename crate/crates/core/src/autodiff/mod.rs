//! Reverse-mode differentiation over a fixed operator set.
//!
//! A [`Tape`] records operator applications in execution order, which is a
//! topological order by construction. [`Tape::backward`] walks it once in
//! reverse, accumulating adjoints in a single fixed order so gradients are
//! bit-reproducible. Every operator output is checked for NaN/Inf.

mod attention;
pub mod check;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tensor::{gemm, MatView, Scalar, Tensor, TensorError};

/// Stable identity of a trainable parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamId(pub u64);

impl std::fmt::Display for ParamId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    AddRow { x: Var, bias: Var },
    Scale { x: Var, factor: T },
    Gelu { x: Var },
    Relu { x: Var },
    LayerNorm {
        x: Var,
        gain: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Embedding { table: Var, indices: Vec<usize> },
    Attention(Box<attention::Saved<T>>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Mse { pred: Var, target: Vec<T> },
    Sum { x: Var },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    param: Option<ParamId>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn finite<T: Scalar>(op: &'static str, t: Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(TensorError::NonFinite { op })
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(GELU_K);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(GELU_K);
    let half = T::of(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * k * x * x)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
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

    /// Constant input (no gradient is reported for it, but one is computed).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Trainable leaf; its gradient is reported under `id`.
    pub fn param(&mut self, id: ParamId, value: &Tensor<T>) -> Var {
        let v = self.push(value.clone(), Op::Leaf);
        self.nodes[v.0].param = Some(id);
        v
    }

    /// `A[..., k] x B[k, n] -> [..., n]`; leading axes of `A` are flattened into rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        let bv = self.value(b);
        let (bk, n) = bv.dims2().map_err(|_| TensorError::Shape {
            op: "matmul",
            lhs: av.shape().to_vec(),
            rhs: bv.shape().to_vec(),
        })?;
        let (rows, k) = av.last_axis();
        if av.rank() < 2 || k != bk {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().expect("rank >= 2") = n;
        let mut out = Tensor::zeros(&shape);
        gemm(
            MatView::row_major(av.data(), rows, k),
            MatView::row_major(bv.data(), k, n),
            out.data_mut(),
            0,
            n,
            false,
        );
        let out = finite("matmul", out)?;
        Ok(self.push(out, Op::MatMul { a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() != bv.shape() {
            return Err(TensorError::Shape {
                op: "add",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = av.clone();
        for (o, &y) in out.data_mut().iter_mut().zip(bv.data()) {
            *o = *o + y;
        }
        let out = finite("add", out)?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    /// Adds a bias vector along the last axis.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let (_, n) = xv.last_axis();
        if bv.rank() != 1 || bv.numel() != n {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o = *o + b;
            }
        }
        let out = finite("add_row", out)?;
        Ok(self.push(out, Op::AddRow { x, bias }))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var, TensorError> {
        let out = finite("scale", self.value(x).map(|v| v * factor))?;
        Ok(self.push(out, Op::Scale { x, factor }))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = finite("gelu", self.value(x).map(gelu))?;
        Ok(self.push(out, Op::Gelu { x }))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = finite("relu", self.value(x).map(|v| v.max(T::zero())))?;
        Ok(self.push(out, Op::Relu { x }))
    }

    /// Standardizes along the last axis and multiplies by `gain` (no bias).
    ///
    /// A row with zero variance standardizes to exactly 0, so the output is
    /// `0 * gain` there. A zero gain yields +0.0 bitwise.
    pub fn layer_norm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var, TensorError> {
        if eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(TensorError::Invalid(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let xv = self.value(x);
        let gv = self.value(gain);
        let (rows, n) = xv.last_axis();
        if gv.rank() != 1 || gv.numel() != n {
            return Err(TensorError::Shape {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let nf = T::of(n as f64);
        let eps = T::of(eps);
        let mut xhat = vec![T::zero(); rows * n];
        let mut rstd = vec![T::zero(); rows];
        let mut out = Tensor::zeros(xv.shape());
        let g = gv.data();
        for r in 0..rows {
            let row = &xv.data()[r * n..(r + 1) * n];
            let constant = row.iter().all(|&v| v == row[0]);
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = if constant {
                T::zero()
            } else {
                row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf
            };
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            let dst = &mut out.data_mut()[r * n..(r + 1) * n];
            for j in 0..n {
                let h = if constant { T::zero() } else { (row[j] - mean) * rs };
                xhat[r * n + j] = h;
                // `+ 0` folds -0.0 into +0.0
                dst[j] = h * g[j] + T::zero();
            }
        }
        let out = finite("layer_norm", out)?;
        Ok(self.push(out, Op::LayerNorm { x, gain, xhat, rstd }))
    }

    /// Gathers rows of `table[vocab, d]`; the output has shape `out_lead ++ [d]`.
    pub fn embedding(
        &mut self,
        table: Var,
        indices: &[usize],
        out_lead: &[usize],
    ) -> Result<Var, TensorError> {
        let tv = self.value(table);
        let (vocab, d) = tv.dims2()?;
        if out_lead.iter().product::<usize>() != indices.len() {
            return Err(TensorError::Invalid(format!(
                "embedding: {} indices do not fill shape {out_lead:?}",
                indices.len()
            )));
        }
        let mut shape = out_lead.to_vec();
        shape.push(d);
        let mut out = Tensor::zeros(&shape);
        for (i, &ix) in indices.iter().enumerate() {
            if ix >= vocab {
                return Err(TensorError::IndexOutOfRange {
                    op: "embedding",
                    index: ix,
                    extent: vocab,
                });
            }
            out.data_mut()[i * d..(i + 1) * d].copy_from_slice(&tv.data()[ix * d..(ix + 1) * d]);
        }
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Multi-head causal self-attention over `x[B, T, d]`.
    pub fn causal_attention(
        &mut self,
        x: Var,
        wq: Var,
        wk: Var,
        wv: Var,
        wo: Var,
        heads: usize,
    ) -> Result<Var, TensorError> {
        let (out, saved) = attention::forward(
            self.value(x),
            [self.value(wq), self.value(wk), self.value(wv), self.value(wo)],
            heads,
            [x, wq, wk, wv, wo],
        )?;
        let out = finite("causal_attention", out)?;
        Ok(self.push(out, Op::Attention(Box::new(saved))))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits[..., V]` (leading axes flattened).
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
    ) -> Result<Var, TensorError> {
        let lv = self.value(logits);
        let (rows, v) = lv.last_axis();
        if lv.rank() < 2 || rows != targets.len() {
            return Err(TensorError::Shape {
                op: "softmax_cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut probs = vec![T::zero(); rows * v];
        let mut total = 0.0f64;
        for r in 0..rows {
            let tgt = targets[r];
            if tgt >= v {
                return Err(TensorError::IndexOutOfRange {
                    op: "softmax_cross_entropy",
                    index: tgt,
                    extent: v,
                });
            }
            let row = &lv.data()[r * v..(r + 1) * v];
            let (amax, max) = row
                .iter()
                .enumerate()
                .fold((0, row[0]), |acc, (j, &x)| if x > acc.1 { (j, x) } else { acc });
            let mut rest = T::zero();
            for (j, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                probs[r * v + j] = e;
                if j != amax {
                    rest = rest + e;
                }
            }
            let denom = T::one() + rest;
            for p in &mut probs[r * v..(r + 1) * v] {
                *p = *p / denom;
            }
            // log-sum-exp = max + log1p(sum of the non-max terms)
            let lse = max + rest.ln_1p();
            total += (lse - row[tgt]).as_f64();
        }
        let loss = T::of(total / rows as f64);
        if !loss.is_finite() {
            return Err(TensorError::NonFinite {
                op: "softmax_cross_entropy",
            });
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var, TensorError> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(TensorError::Shape {
                op: "mse",
                lhs: pv.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let n = pv.numel() as f64;
        let s: f64 = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let d = (p - t).as_f64();
                d * d
            })
            .sum();
        let out = finite("mse", Tensor::scalar(T::of(s / n)))?;
        Ok(self.push(
            out,
            Op::Mse {
                pred,
                target: target.data().to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let out = finite("sum", Tensor::scalar(self.value(x).sum()))?;
        Ok(self.push(out, Op::Sum { x }))
    }

    /// Reverse pass from a scalar `loss`. May run once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if self.consumed {
            return Err(TensorError::BackwardTwice);
        }
        let lshape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NotScalar(lshape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&lshape, T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let mut params = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(id) = node.param {
                let g = grads[i]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                if !g.is_finite() {
                    return Err(TensorError::NonFinite { op: "backward" });
                }
                // A parameter registered twice gets the sum of both adjoints.
                params
                    .entry(id)
                    .and_modify(|acc: &mut Tensor<T>| {
                        for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a = *a + b;
                        }
                    })
                    .or_insert(g);
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn propagate(
        &self,
        i: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<(), TensorError> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (rows, k) = av.last_axis();
                let (_, n) = bv.dims2()?;
                let gv = MatView::row_major(g.data(), rows, n);
                // dA = dC B^T
                let ga = grad_slot(grads, *a, av.shape());
                gemm(gv, MatView::row_major(bv.data(), k, n).t(), ga.data_mut(), 0, k, true);
                // dB = A^T dC
                let gb = grad_slot(grads, *b, bv.shape());
                gemm(MatView::row_major(av.data(), rows, k).t(), gv, gb.data_mut(), 0, n, true);
            }
            Op::Add { a, b } => {
                accumulate(grad_slot(grads, *a, g.shape()), g.data());
                accumulate(grad_slot(grads, *b, g.shape()), g.data());
            }
            Op::AddRow { x, bias } => {
                accumulate(grad_slot(grads, *x, g.shape()), g.data());
                let n = self.value(*bias).numel();
                let gb = grad_slot(grads, *bias, &[n]);
                for row in g.data().chunks(n) {
                    for (a, &b) in gb.data_mut().iter_mut().zip(row) {
                        *a = *a + b;
                    }
                }
            }
            Op::Scale { x, factor } => {
                let gx = grad_slot(grads, *x, g.shape());
                for (a, &b) in gx.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + b * *factor;
                }
            }
            Op::Gelu { x } => {
                let xv = self.value(*x).data().to_vec();
                let gx = grad_slot(grads, *x, g.shape());
                for ((a, &b), &xi) in gx.data_mut().iter_mut().zip(g.data()).zip(&xv) {
                    *a = *a + b * gelu_grad(xi);
                }
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data().to_vec();
                let gx = grad_slot(grads, *x, g.shape());
                for ((a, &b), &xi) in gx.data_mut().iter_mut().zip(g.data()).zip(&xv) {
                    if xi > T::zero() {
                        *a = *a + b;
                    }
                }
            }
            Op::LayerNorm { x, gain, xhat, rstd } => {
                let gv = self.value(*gain).data().to_vec();
                let n = gv.len();
                let rows = rstd.len();
                let nf = T::of(n as f64);
                let mut dgain = vec![T::zero(); n];
                let mut dx = vec![T::zero(); rows * n];
                for r in 0..rows {
                    let go = &g.data()[r * n..(r + 1) * n];
                    let xh = &xhat[r * n..(r + 1) * n];
                    let mut mean_d = T::zero();
                    let mut mean_dx = T::zero();
                    for j in 0..n {
                        dgain[j] = dgain[j] + go[j] * xh[j];
                        let d = go[j] * gv[j];
                        mean_d = mean_d + d;
                        mean_dx = mean_dx + d * xh[j];
                    }
                    mean_d = mean_d / nf;
                    mean_dx = mean_dx / nf;
                    for j in 0..n {
                        let d = go[j] * gv[j];
                        dx[r * n + j] = rstd[r] * (d - mean_d - xh[j] * mean_dx);
                    }
                }
                accumulate(grad_slot(grads, *gain, &[n]), &dgain);
                accumulate(grad_slot(grads, *x, g.shape()), &dx);
            }
            Op::Embedding { table, indices } => {
                let shape = self.value(*table).shape().to_vec();
                let d = shape[1];
                let gt = grad_slot(grads, *table, &shape);
                for (i, &ix) in indices.iter().enumerate() {
                    let src = &g.data()[i * d..(i + 1) * d];
                    for (a, &b) in gt.data_mut()[ix * d..(ix + 1) * d].iter_mut().zip(src) {
                        *a = *a + b;
                    }
                }
            }
            Op::Attention(saved) => {
                attention::backward(self, saved, g, grads)?;
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let shape = self.value(*logits).shape().to_vec();
                let rows = targets.len();
                let v = probs.len() / rows;
                let scale = g.data()[0] / T::of(rows as f64);
                let gl = grad_slot(grads, *logits, &shape);
                let gd = gl.data_mut();
                for r in 0..rows {
                    for j in 0..v {
                        let onehot = if j == targets[r] { T::one() } else { T::zero() };
                        gd[r * v + j] = gd[r * v + j] + scale * (probs[r * v + j] - onehot);
                    }
                }
            }
            Op::Mse { pred, target } => {
                let pv = self.value(*pred).data().to_vec();
                let shape = self.value(*pred).shape().to_vec();
                let scale = g.data()[0] * T::of(2.0 / pv.len() as f64);
                let gp = grad_slot(grads, *pred, &shape);
                for ((a, &p), &t) in gp.data_mut().iter_mut().zip(&pv).zip(target) {
                    *a = *a + scale * (p - t);
                }
            }
            Op::Sum { x } => {
                let shape = self.value(*x).shape().to_vec();
                let s = g.data()[0];
                let gx = grad_slot(grads, *x, &shape);
                for a in gx.data_mut() {
                    *a = *a + s;
                }
            }
        }
        Ok(())
    }
}

fn grad_slot<'a, T: Scalar>(
    grads: &'a mut [Option<Tensor<T>>],
    v: Var,
    shape: &[usize],
) -> &'a mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

fn accumulate<T: Scalar>(dst: &mut Tensor<T>, src: &[T]) {
    for (a, &b) in dst.data_mut().iter_mut().zip(src) {
        *a = *a + b;
    }
}

/// Result of one backward pass.
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Adjoint of any recorded node (zeros if unreachable from the loss).
    pub fn wrt(&self, v: Var, tape: &Tape<T>) -> Tensor<T> {
        self.nodes[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    pub fn params(&self) -> &BTreeMap<ParamId, Tensor<T>> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<ParamId, Tensor<T>> {
        self.params
    }
}
