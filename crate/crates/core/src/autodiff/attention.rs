//! Fused multi-head causal self-attention with a hand-written adjoint.

use super::{grad_slot, Tape, Var};
use crate::tensor::{gemm, MatView, Scalar, Tensor, TensorError};

pub(super) struct Saved<T> {
    inputs: [Var; 5],
    batch: usize,
    seq: usize,
    width: usize,
    heads: usize,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// Row-stochastic attention weights, `[B, H, T, T]`, zero above the diagonal.
    probs: Vec<T>,
    /// Concatenated head outputs before the output projection, `[B*T, d]`.
    heads_out: Vec<T>,
}

fn head_view<T>(data: &[T], width: usize, seq: usize, head_dim: usize, b: usize, h: usize) -> MatView<'_, T> {
    MatView {
        data,
        offset: b * seq * width + h * head_dim,
        rows: seq,
        cols: head_dim,
        rs: width,
        cs: 1,
    }
}

fn project<T: Scalar>(x: &[T], w: &[T], rows: usize, width: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * width];
    gemm(
        MatView::row_major(x, rows, width),
        MatView::row_major(w, width, width),
        &mut out,
        0,
        width,
        false,
    );
    out
}

pub(super) fn forward<T: Scalar>(
    x: &Tensor<T>,
    weights: [&Tensor<T>; 4],
    heads: usize,
    inputs: [Var; 5],
) -> Result<(Tensor<T>, Saved<T>), TensorError> {
    let (batch, seq, width) = match x.shape() {
        [b, t, d] => (*b, *t, *d),
        other => {
            return Err(TensorError::Invalid(format!(
                "causal_attention expects [B, T, d], got {other:?}"
            )))
        }
    };
    if heads == 0 || width % heads != 0 {
        return Err(TensorError::Invalid(format!(
            "width {width} is not divisible by {heads} heads"
        )));
    }
    for w in weights {
        if w.shape() != [width, width] {
            return Err(TensorError::Shape {
                op: "causal_attention",
                lhs: x.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
    }
    let rows = batch * seq;
    let hd = width / heads;
    let scale = T::of(1.0 / (hd as f64).sqrt());
    let q = project(x.data(), weights[0].data(), rows, width);
    let k = project(x.data(), weights[1].data(), rows, width);
    let v = project(x.data(), weights[2].data(), rows, width);
    let mut probs = vec![T::zero(); batch * heads * seq * seq];
    let mut heads_out = vec![T::zero(); rows * width];
    let mut scores = vec![T::zero(); seq * seq];

    for b in 0..batch {
        for h in 0..heads {
            let qv = head_view(&q, width, seq, hd, b, h);
            let kv = head_view(&k, width, seq, hd, b, h);
            gemm(qv, kv.t(), &mut scores, 0, seq, false);
            let p = &mut probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
            for i in 0..seq {
                let row = &scores[i * seq..i * seq + i + 1];
                let max = row.iter().fold(T::neg_infinity(), |m, &s| m.max(s * scale));
                let mut z = T::zero();
                for j in 0..=i {
                    let e = (row[j] * scale - max).exp();
                    p[i * seq + j] = e;
                    z = z + e;
                }
                for j in 0..=i {
                    p[i * seq + j] = p[i * seq + j] / z;
                }
            }
            gemm(
                MatView::row_major(p, seq, seq),
                head_view(&v, width, seq, hd, b, h),
                &mut heads_out,
                b * seq * width + h * hd,
                width,
                false,
            );
        }
    }

    let mut out = Tensor::zeros(x.shape());
    gemm(
        MatView::row_major(&heads_out, rows, width),
        MatView::row_major(weights[3].data(), width, width),
        out.data_mut(),
        0,
        width,
        false,
    );
    Ok((
        out,
        Saved {
            inputs,
            batch,
            seq,
            width,
            heads,
            q,
            k,
            v,
            probs,
            heads_out,
        },
    ))
}

pub(super) fn backward<T: Scalar>(
    tape: &Tape<T>,
    s: &Saved<T>,
    g: &Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
) -> Result<(), TensorError> {
    let [x, wq, wk, wv, wo] = s.inputs;
    let (batch, seq, width, heads) = (s.batch, s.seq, s.width, s.heads);
    let rows = batch * seq;
    let hd = width / heads;
    let scale = T::of(1.0 / (hd as f64).sqrt());
    let gview = MatView::row_major(g.data(), rows, width);

    let wshape = [width, width];
    let gwo = grad_slot(grads, wo, &wshape);
    gemm(MatView::row_major(&s.heads_out, rows, width).t(), gview, gwo.data_mut(), 0, width, true);

    let mut d_heads = vec![T::zero(); rows * width];
    let wo_val = tape.value(wo).data();
    gemm(gview, MatView::row_major(wo_val, width, width).t(), &mut d_heads, 0, width, false);

    let mut dq = vec![T::zero(); rows * width];
    let mut dk = vec![T::zero(); rows * width];
    let mut dv = vec![T::zero(); rows * width];
    let mut dp = vec![T::zero(); seq * seq];

    for b in 0..batch {
        for h in 0..heads {
            let p = &s.probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
            let pview = MatView::row_major(p, seq, seq);
            let dov = head_view(&d_heads, width, seq, hd, b, h);
            let off = b * seq * width + h * hd;
            gemm(dov, head_view(&s.v, width, seq, hd, b, h).t(), &mut dp, 0, seq, false);
            gemm(pview.t(), dov, &mut dv, off, width, true);
            // softmax adjoint, scaled into the score domain
            for i in 0..seq {
                let dot = (0..=i).fold(T::zero(), |acc, j| acc + p[i * seq + j] * dp[i * seq + j]);
                for j in 0..seq {
                    dp[i * seq + j] = if j <= i {
                        p[i * seq + j] * (dp[i * seq + j] - dot) * scale
                    } else {
                        T::zero()
                    };
                }
            }
            let ds = MatView::row_major(&dp, seq, seq);
            gemm(ds, head_view(&s.k, width, seq, hd, b, h), &mut dq, off, width, true);
            gemm(ds.t(), head_view(&s.q, width, seq, hd, b, h), &mut dk, off, width, true);
        }
    }

    let xval = tape.value(x).data();
    let xt = MatView::row_major(xval, rows, width).t();
    for (w, d) in [(wq, &dq), (wk, &dk), (wv, &dv)] {
        let gw = grad_slot(grads, w, &wshape);
        gemm(xt, MatView::row_major(d, rows, width), gw.data_mut(), 0, width, true);
    }
    let xshape = tape.value(x).shape().to_vec();
    let wvals: Vec<Vec<T>> = [wq, wk, wv].iter().map(|&w| tape.value(w).data().to_vec()).collect();
    let gx = grad_slot(grads, x, &xshape);
    for (wval, d) in wvals.iter().zip([&dq, &dk, &dv]) {
        gemm(
            MatView::row_major(d, rows, width),
            MatView::row_major(wval, width, width).t(),
            gx.data_mut(),
            0,
            width,
            true,
        );
    }
    Ok(())
}
