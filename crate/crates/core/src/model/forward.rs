use super::*;
use crate::autodiff::{Tape, Var};

/// One mini-batch. Token batches are `batch` sequences of `seq` positions,
/// flattened row-major; `targets[i]` is the next token after `inputs[i]`.
#[derive(Debug, Clone)]
pub enum Batch<T> {
    Tokens {
        inputs: Vec<usize>,
        targets: Vec<usize>,
        batch: usize,
        seq: usize,
    },
    Regression {
        inputs: Tensor<T>,
        targets: Tensor<T>,
    },
}

impl<T: Scalar> Batch<T> {
    /// Tokens (or examples) processed by one step on this batch.
    pub fn tokens(&self) -> u64 {
        match self {
            Batch::Tokens { batch, seq, .. } => (*batch * *seq) as u64,
            Batch::Regression { inputs, .. } => inputs.last_axis().0 as u64,
        }
    }
}

/// Tape handles produced by a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub loss: Var,
    pub output: Var,
    /// Residual stream after the embedding and after each hidden block.
    pub boundaries: Vec<Var>,
}

impl<T: Scalar> Model<T> {
    pub fn forward(&self, tape: &mut Tape<T>, batch: &Batch<T>) -> Result<Forward, ModelError> {
        let cfg = &self.config;
        let leaf = |tape: &mut Tape<T>, p: &Parameter<T>| tape.param(p.id, &p.value);
        let mut boundaries = Vec::with_capacity(self.depth() + 1);
        match (cfg.family, batch) {
            (
                Family::TinyTransformer,
                Batch::Tokens {
                    inputs,
                    targets,
                    batch,
                    seq,
                },
            ) => {
                let (b, t) = (*batch, *seq);
                if inputs.len() != b * t || targets.len() != b * t || t == 0 {
                    return Err(ModelError::BatchMismatch(format!(
                        "{} inputs / {} targets for batch {b} x seq {t}",
                        inputs.len(),
                        targets.len()
                    )));
                }
                if t > cfg.context {
                    return Err(ModelError::BatchMismatch(format!(
                        "sequence length {t} exceeds context {}",
                        cfg.context
                    )));
                }
                let tok = leaf(tape, &self.embed[0]);
                let pos = leaf(tape, &self.embed[1]);
                let positions: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
                let te = tape.embedding(tok, inputs, &[b, t])?;
                let pe = tape.embedding(pos, &positions, &[b, t])?;
                let mut h = tape.add(te, pe)?;
                boundaries.push(h);
                for block in &self.blocks {
                    let w: Vec<Var> = block.iter().map(|p| leaf(tape, p)).collect();
                    let n1 = tape.layer_norm(h, w[TF_LN1], cfg.norm_eps)?;
                    let a = tape.causal_attention(
                        n1,
                        w[TF_WQ],
                        w[TF_WK],
                        w[TF_WV],
                        w[TF_WO],
                        cfg.n_heads(),
                    )?;
                    h = tape.add(h, a)?;
                    let n2 = tape.layer_norm(h, w[TF_LN2], cfg.norm_eps)?;
                    let f = self.mlp_branch(tape, n2, w[TF_FC], w[TF_PROJ])?;
                    h = tape.add(h, f)?;
                    boundaries.push(h);
                }
                let gain = leaf(tape, &self.head[0]);
                let readout = leaf(tape, &self.head[1]);
                let n = tape.layer_norm(h, gain, cfg.norm_eps)?;
                let logits = tape.matmul(n, readout)?;
                let loss = tape.softmax_cross_entropy(logits, targets)?;
                Ok(Forward {
                    loss,
                    output: logits,
                    boundaries,
                })
            }
            (Family::ResidualMlp, Batch::Regression { inputs, targets }) => {
                let (rows, n_in) = inputs.last_axis();
                let (trows, n_out) = targets.last_axis();
                if n_in != cfg.input_dim || n_out != cfg.output_dim || rows != trows {
                    return Err(ModelError::BatchMismatch(format!(
                        "inputs {:?} / targets {:?} for {} -> {}",
                        inputs.shape(),
                        targets.shape(),
                        cfg.input_dim,
                        cfg.output_dim
                    )));
                }
                let x = tape.constant(inputs.clone());
                let w_in = leaf(tape, &self.embed[0]);
                let b_in = leaf(tape, &self.embed[1]);
                let xw = tape.matmul(x, w_in)?;
                let mut h = tape.add_row(xw, b_in)?;
                boundaries.push(h);
                for block in &self.blocks {
                    let w: Vec<Var> = block.iter().map(|p| leaf(tape, p)).collect();
                    let n = tape.layer_norm(h, w[MLP_LN], cfg.norm_eps)?;
                    let f = self.mlp_branch(tape, n, w[MLP_FC], w[MLP_PROJ])?;
                    h = tape.add(h, f)?;
                    boundaries.push(h);
                }
                let w_out = leaf(tape, &self.head[0]);
                let b_out = leaf(tape, &self.head[1]);
                let hw = tape.matmul(h, w_out)?;
                let out = tape.add_row(hw, b_out)?;
                let loss = tape.mse(out, targets)?;
                Ok(Forward {
                    loss,
                    output: out,
                    boundaries,
                })
            }
            (family, _) => Err(ModelError::BatchMismatch(format!(
                "batch kind does not match model family {family:?}"
            ))),
        }
    }

    fn mlp_branch(&self, tape: &mut Tape<T>, x: Var, fc: Var, proj: Var) -> Result<Var, ModelError> {
        let u = tape.matmul(x, fc)?;
        let a = match self.config.activation {
            Activation::Gelu => tape.gelu(u)?,
            Activation::Relu => tape.relu(u)?,
        };
        Ok(tape.matmul(a, proj)?)
    }

    pub fn loss(&self, batch: &Batch<T>) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, batch)?;
        Ok(tape.value(fwd.loss).data()[0].as_f64())
    }

    /// Forward + backward; stores fresh gradients on every parameter and
    /// returns the loss.
    pub fn compute_grads(&mut self, batch: &Batch<T>) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, batch)?;
        let loss = tape.value(fwd.loss).data()[0].as_f64();
        let mut grads = tape.backward(fwd.loss)?.into_params();
        for p in self.parameters_mut() {
            match grads.remove(&p.id) {
                Some(g) => p.set_grad(g),
                None => p.zero_grad(),
            }
        }
        Ok(loss)
    }

    /// `r_l = ||A_l||_2 / sqrt(n_l)` at every block boundary, averaged over rows.
    pub fn activation_rms_profile(&self, batch: &Batch<T>) -> Result<ActivationProfile, ModelError> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, batch)?;
        let values = fwd
            .boundaries
            .iter()
            .map(|&v| {
                let t = tape.value(v);
                let (rows, n) = t.last_axis();
                let total: f64 = t
                    .data()
                    .chunks(n)
                    .map(|r| (r.iter().map(|x| x.as_f64().powi(2)).sum::<f64>() / n as f64).sqrt())
                    .sum();
                total / rows as f64
            })
            .collect();
        Ok(ActivationProfile { values })
    }

    /// Model outputs (logits or regression predictions) for a batch.
    pub fn predict(&self, batch: &Batch<T>) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, batch)?;
        Ok(tape.value(fwd.output).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{finite_difference_gradient, relative_error};

    fn token_batch(v: usize, b: usize, t: usize) -> Batch<f64> {
        let inputs: Vec<usize> = (0..b * t).map(|i| (i * 7 + 3) % v).collect();
        let targets: Vec<usize> = (0..b * t).map(|i| (i * 5 + 1) % v).collect();
        Batch::Tokens {
            inputs,
            targets,
            batch: b,
            seq: t,
        }
    }

    #[test]
    fn transformer_loss_near_log_vocab_at_init() {
        let m = Model::<f64>::build(&ModelConfig::transformer(2, 32, 16, 8)).unwrap();
        let loss = m.loss(&token_batch(16, 2, 8)).unwrap();
        assert!(loss.is_finite());
        assert!((loss - 16f64.ln()).abs() < 1.5, "{loss}");
    }

    #[test]
    fn sequence_longer_than_context_errors() {
        let m = Model::<f64>::build(&ModelConfig::transformer(1, 32, 16, 4)).unwrap();
        assert!(matches!(
            m.loss(&token_batch(16, 1, 8)),
            Err(ModelError::BatchMismatch(_))
        ));
    }

    #[test]
    fn family_mismatch_errors() {
        let m = Model::<f64>::build(&ModelConfig::mlp(1, 4, 8, 2)).unwrap();
        assert!(m.loss(&token_batch(16, 1, 2)).is_err());
    }

    #[test]
    fn mlp_readout_gradient_matches_finite_differences() {
        let cfg = ModelConfig::mlp(2, 4, 8, 3).with_seed(5);
        let mut m = Model::<f64>::build(&cfg).unwrap();
        let x = Tensor::from_f64(&[5, 4], &(0..20).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>()).unwrap();
        let y = Tensor::from_f64(&[5, 3], &(0..15).map(|i| (i as f64 * 0.11).cos()).collect::<Vec<_>>()).unwrap();
        let batch = Batch::Regression { inputs: x, targets: y };
        m.compute_grads(&batch).unwrap();
        for (bi, slot) in [(0usize, MLP_FC), (1, MLP_PROJ)] {
            let analytic = m.blocks()[bi][slot].grad().clone();
            let w0 = m.blocks()[bi][slot].value().clone();
            let mut probe = m.clone();
            let fd = finite_difference_gradient(
                |w| {
                    *probe.blocks_mut()[bi][slot].value_mut() = w.clone();
                    probe.loss(&batch).unwrap()
                },
                &w0,
                1e-6,
            );
            assert!(relative_error(&analytic, &fd) < 1e-6);
        }
    }

    #[test]
    fn activation_profile_has_depth_plus_one_entries() {
        let m = Model::<f64>::build(&ModelConfig::transformer(3, 32, 16, 8)).unwrap();
        let p = m.activation_rms_profile(&token_batch(16, 2, 8)).unwrap();
        assert_eq!(p.values.len(), 4);
        assert!(p.values.iter().all(|r| r.is_finite() && *r > 0.0));
    }
}
