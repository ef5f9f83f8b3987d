//! Synthetic and file-backed datasets with a fixed train/validation split
//! (the last 5% is held out).

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::model::Batch;
use crate::tensor::{Scalar, Tensor};

fn default_order() -> usize {
    1
}
fn default_logit_scale() -> f64 {
    2.0
}
fn default_hidden() -> usize {
    32
}
fn default_noise() -> f64 {
    0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DataSpec {
    /// Order-`order` Markov chain over `vocab` tokens; each context's next-token
    /// distribution is a softmax of Gaussian logits times `logit_scale`.
    Markov {
        vocab: usize,
        #[serde(default = "default_order")]
        order: usize,
        length: usize,
        #[serde(default = "default_logit_scale")]
        logit_scale: f64,
    },
    /// Raw bytes of a file as tokens (vocabulary 256).
    ByteLm { path: PathBuf },
    /// `y = tanh(x W1) W2 + noise` with a fixed random teacher.
    MlpRegression {
        input_dim: usize,
        output_dim: usize,
        samples: usize,
        teacher_seed: u64,
        #[serde(default = "default_hidden")]
        teacher_hidden: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
}

/// Number of held-out items for a stream of length `n`.
pub fn val_len(n: usize) -> usize {
    n / 20
}

#[derive(Debug, Clone)]
pub struct MarkovChain {
    pub vocab: usize,
    pub order: usize,
    /// Row-major `vocab^order x vocab` next-token probabilities.
    pub probs: Vec<f64>,
}

impl MarkovChain {
    pub fn random(vocab: usize, order: usize, logit_scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let contexts = vocab.pow(order as u32);
        let mut probs = Vec::with_capacity(contexts * vocab);
        for _ in 0..contexts {
            let logits: Vec<f64> = (0..vocab)
                .map(|_| logit_scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let max = logits.iter().cloned().fold(f64::MIN, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            probs.extend(exps.into_iter().map(|e| e / z));
        }
        MarkovChain { vocab, order, probs }
    }

    pub fn contexts(&self) -> usize {
        self.vocab.pow(self.order as u32)
    }

    fn next_context(&self, ctx: usize, token: usize) -> usize {
        if self.order == 0 {
            0
        } else {
            (ctx * self.vocab + token) % self.contexts()
        }
    }

    pub fn row(&self, ctx: usize) -> &[f64] {
        &self.probs[ctx * self.vocab..(ctx + 1) * self.vocab]
    }

    pub fn sample(&self, length: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut ctx = rng.random_range(0..self.contexts());
        let mut out = Vec::with_capacity(length);
        for _ in 0..length {
            let u: f64 = rng.random();
            let row = self.row(ctx);
            let mut acc = 0.0;
            let mut tok = self.vocab - 1;
            for (i, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    tok = i;
                    break;
                }
            }
            out.push(tok);
            ctx = self.next_context(ctx, tok);
        }
        out
    }

    /// Stationary distribution over contexts by power iteration.
    pub fn stationary(&self) -> Vec<f64> {
        let n = self.contexts();
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..10_000 {
            let mut next = vec![0.0; n];
            for (ctx, &mass) in pi.iter().enumerate() {
                for (tok, p) in self.row(ctx).iter().enumerate() {
                    next[self.next_context(ctx, tok)] += mass * p;
                }
            }
            let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if diff < 1e-14 {
                break;
            }
        }
        pi
    }

    /// Entropy rate in nats per token: `sum_s pi(s) H(P(.|s))`.
    pub fn entropy_rate(&self) -> f64 {
        self.stationary()
            .iter()
            .enumerate()
            .map(|(ctx, pi)| {
                let h: f64 = self.row(ctx).iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum();
                pi * h
            })
            .sum()
    }

    /// Mean negative log-likelihood of a stream under the chain (skipping the
    /// first `order` tokens, whose context is unknown).
    pub fn stream_nll(&self, stream: &[usize]) -> f64 {
        let mut ctx = 0usize;
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, &tok) in stream.iter().enumerate() {
            if i >= self.order {
                total -= self.row(ctx)[tok].ln();
                count += 1;
            }
            ctx = self.next_context(ctx, tok);
        }
        total / count.max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub enum Dataset {
    Tokens {
        vocab: usize,
        train: Vec<usize>,
        val: Vec<usize>,
        /// Entropy rate of the generating process, when known.
        entropy_rate: Option<f64>,
    },
    Regression {
        input_dim: usize,
        output_dim: usize,
        train_x: Vec<f64>,
        train_y: Vec<f64>,
        val_x: Vec<f64>,
        val_y: Vec<f64>,
    },
}

fn split<T: Clone>(data: &[T], row: usize) -> (Vec<T>, Vec<T>) {
    let n = data.len() / row;
    let cut = (n - val_len(n)) * row;
    (data[..cut].to_vec(), data[cut..].to_vec())
}

pub fn generate_dataset(spec: &DataSpec, seed: u64) -> Result<Dataset, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match spec {
        DataSpec::Markov {
            vocab,
            order,
            length,
            logit_scale,
        } => {
            if *vocab == 0 || *length == 0 {
                return Err(HarnessError::Data("markov data needs vocab > 0 and length > 0".into()));
            }
            if (*vocab as f64).powi(*order as i32) > 1e7 {
                return Err(HarnessError::Data(format!("{vocab}^{order} contexts is too many")));
            }
            let chain = MarkovChain::random(*vocab, *order, *logit_scale, &mut rng);
            let stream = chain.sample(*length, &mut rng);
            let (train, val) = split(&stream, 1);
            Ok(Dataset::Tokens {
                vocab: *vocab,
                train,
                val,
                entropy_rate: Some(chain.entropy_rate()),
            })
        }
        DataSpec::ByteLm { path } => {
            let bytes = std::fs::read(path).map_err(|source| HarnessError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if bytes.is_empty() {
                return Err(HarnessError::Data(format!("{} is empty", path.display())));
            }
            let stream: Vec<usize> = bytes.into_iter().map(usize::from).collect();
            let (train, val) = split(&stream, 1);
            Ok(Dataset::Tokens {
                vocab: 256,
                train,
                val,
                entropy_rate: None,
            })
        }
        DataSpec::MlpRegression {
            input_dim,
            output_dim,
            samples,
            teacher_seed,
            teacher_hidden,
            noise,
        } => {
            let (d_in, d_out, h) = (*input_dim, *output_dim, *teacher_hidden);
            if d_in == 0 || d_out == 0 || h == 0 || *samples == 0 {
                return Err(HarnessError::Data("regression dims and samples must be positive".into()));
            }
            let mut teacher = ChaCha8Rng::seed_from_u64(*teacher_seed);
            let gauss = |rng: &mut ChaCha8Rng, n: usize, s: f64| -> Vec<f64> {
                (0..n).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
            };
            let w1 = gauss(&mut teacher, d_in * h, 1.0 / (d_in as f64).sqrt());
            let w2 = gauss(&mut teacher, h * d_out, 1.0 / (h as f64).sqrt());
            let x = gauss(&mut rng, samples * d_in, 1.0);
            let mut y = vec![0.0; samples * d_out];
            for s in 0..*samples {
                let xs = &x[s * d_in..(s + 1) * d_in];
                let hid: Vec<f64> = (0..h)
                    .map(|j| (0..d_in).map(|i| xs[i] * w1[i * h + j]).sum::<f64>().tanh())
                    .collect();
                for o in 0..d_out {
                    let v: f64 = (0..h).map(|j| hid[j] * w2[j * d_out + o]).sum();
                    y[s * d_out + o] = v + noise * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let (train_x, val_x) = split(&x, d_in);
            let (train_y, val_y) = split(&y, d_out);
            Ok(Dataset::Regression {
                input_dim: d_in,
                output_dim: d_out,
                train_x,
                train_y,
                val_x,
                val_y,
            })
        }
    }
}

/// Draws training batches from a dataset with its own seeded generator.
#[derive(Debug, Clone)]
pub struct Sampler {
    rng: ChaCha8Rng,
    seq_len: usize,
}

impl Sampler {
    pub fn new(seed: u64, seq_len: usize) -> Self {
        Sampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seq_len,
        }
    }

    /// A batch of `size` tokens (`size / seq_len` random windows) or `size` samples.
    pub fn train_batch<T: Scalar>(&mut self, data: &Dataset, size: usize) -> Result<Batch<T>, HarnessError> {
        match data {
            Dataset::Tokens { train, .. } => {
                let seq = self.seq_len;
                if seq == 0 || !size.is_multiple_of(seq) || size == 0 {
                    return Err(HarnessError::Config(format!(
                        "batch size {size} must be a positive multiple of seq_len {seq}"
                    )));
                }
                if train.len() < seq + 1 {
                    return Err(HarnessError::Data(format!(
                        "training stream of {} tokens is shorter than one window",
                        train.len()
                    )));
                }
                let n = size / seq;
                let mut inputs = Vec::with_capacity(size);
                let mut targets = Vec::with_capacity(size);
                for _ in 0..n {
                    let start = self.rng.random_range(0..train.len() - seq);
                    inputs.extend_from_slice(&train[start..start + seq]);
                    targets.extend_from_slice(&train[start + 1..start + seq + 1]);
                }
                Ok(Batch::Tokens {
                    inputs,
                    targets,
                    batch: n,
                    seq,
                })
            }
            Dataset::Regression {
                input_dim,
                output_dim,
                train_x,
                train_y,
                ..
            } => {
                let rows = train_x.len() / input_dim;
                let picks: Vec<usize> = (0..size).map(|_| self.rng.random_range(0..rows)).collect();
                Ok(regression_batch(&picks, train_x, train_y, *input_dim, *output_dim))
            }
        }
    }
}

fn regression_batch<T: Scalar>(rows: &[usize], x: &[f64], y: &[f64], d_in: usize, d_out: usize) -> Batch<T> {
    let xs: Vec<T> = rows
        .iter()
        .flat_map(|&r| x[r * d_in..(r + 1) * d_in].iter().map(|&v| T::of(v)))
        .collect();
    let ys: Vec<T> = rows
        .iter()
        .flat_map(|&r| y[r * d_out..(r + 1) * d_out].iter().map(|&v| T::of(v)))
        .collect();
    Batch::Regression {
        inputs: Tensor::new(vec![rows.len(), d_in], xs).expect("rows match"),
        targets: Tensor::new(vec![rows.len(), d_out], ys).expect("rows match"),
    }
}

/// Frozen validation batches: consecutive non-overlapping windows (or rows)
/// from the start of the held-out slice, identical for every run on the same data.
pub fn validation_batches<T: Scalar>(
    data: &Dataset,
    batch_size: usize,
    count: usize,
    seq_len: usize,
) -> Result<Vec<Batch<T>>, HarnessError> {
    match data {
        Dataset::Tokens { val, .. } => {
            let seq = seq_len;
            let n = (batch_size / seq.max(1)).max(1);
            let windows = val.len().saturating_sub(1) / seq.max(1);
            if windows == 0 {
                return Err(HarnessError::Data("validation slice shorter than one window".into()));
            }
            let mut out = Vec::new();
            let mut w = 0;
            while out.len() < count && w < windows {
                let take = n.min(windows - w);
                let mut inputs = Vec::with_capacity(take * seq);
                let mut targets = Vec::with_capacity(take * seq);
                for k in w..w + take {
                    inputs.extend_from_slice(&val[k * seq..(k + 1) * seq]);
                    targets.extend_from_slice(&val[k * seq + 1..(k + 1) * seq + 1]);
                }
                out.push(Batch::Tokens {
                    inputs,
                    targets,
                    batch: take,
                    seq,
                });
                w += take;
            }
            Ok(out)
        }
        Dataset::Regression {
            input_dim,
            output_dim,
            val_x,
            val_y,
            ..
        } => {
            let rows = val_x.len() / input_dim;
            if rows == 0 {
                return Err(HarnessError::Data("empty validation slice".into()));
            }
            let n = batch_size.max(1);
            Ok((0..rows)
                .step_by(n)
                .take(count)
                .map(|start| {
                    let picks: Vec<usize> = (start..(start + n).min(rows)).collect();
                    regression_batch(&picks, val_x, val_y, *input_dim, *output_dim)
                })
                .collect())
        }
    }
}
