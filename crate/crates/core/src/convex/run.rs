use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{minimizer_oracle, sample_init, subgradient, ConvexProblem, TheoryError};
use crate::optim::ScheduleConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Mode {
    /// Exact full subgradient; the per-step inequalities hold deterministically.
    Full,
    /// Subgradient over `size` rows sampled without replacement each step.
    Minibatch { size: usize, seed: u64 },
}

/// How the extra parameters `x` are set at the expansion step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum Teleport {
    KeepZero,
    /// Fresh draw from the `x_0` initialization distribution; with the same
    /// seed as `x_0` it reproduces `x_0` exactly.
    RandomInit { seed: u64, scale: f64 },
    /// The `x` part of the joint minimizer.
    OracleXStar,
    Value { x: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub schedule: ScheduleConfig,
    /// Expansion step; `0` is fixed-size training, `T` never trains `x`.
    pub tau: u64,
    pub teleport: Teleport,
    pub mode: Mode,
    pub w0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRun {
    pub tau: u64,
    pub d_w: usize,
    /// `eta_{t+1}` used by the update at step `t`, for `t = 0..T`.
    pub etas: Vec<f64>,
    /// `W_0 ..= W_T`; `x = 0` before `tau`, and `W_tau` is post-teleport.
    pub iterates: Vec<Vec<f64>>,
    /// `L_t` for `t = 0..T`.
    pub losses: Vec<f64>,
    pub x_tau: Vec<f64>,
    pub mode: Mode,
}

impl TheoryRun {
    pub fn horizon(&self) -> u64 {
        self.etas.len() as u64
    }

    pub fn eta_sum(&self) -> f64 {
        self.etas.iter().sum()
    }

    pub fn eta_sq_sum(&self) -> f64 {
        self.etas.iter().map(|e| e * e).sum()
    }

    pub fn w_part(&self, t: usize) -> &[f64] {
        &self.iterates[t][..self.d_w]
    }

    pub fn deterministic(&self) -> bool {
        self.mode == Mode::Full
    }
}

fn teleport_value(problem: &ConvexProblem, rule: &Teleport) -> Result<Vec<f64>, TheoryError> {
    let d_x = problem.d_x();
    let x = match rule {
        Teleport::KeepZero => vec![0.0; d_x],
        Teleport::RandomInit { seed, scale } => sample_init(d_x, *scale, *seed),
        Teleport::OracleXStar => match problem.planted_solution() {
            Some(p) => p.x_star.clone(),
            None => minimizer_oracle(problem, false)?.point[problem.d_w()..].to_vec(),
        },
        Teleport::Value { x } => x.clone(),
    };
    if x.len() != d_x {
        return Err(TheoryError::Invalid(format!("teleport value has length {}, need {d_x}", x.len())));
    }
    Ok(x)
}

/// Projected subgradient steps on `w` (with `x` pinned to 0) for `t < tau`,
/// teleport of `x` at `t = tau`, then plain subgradient steps on `[w, x]`.
pub fn run_training(problem: &ConvexProblem, spec: &RunSpec) -> Result<TheoryRun, TheoryError> {
    spec.schedule
        .validate()
        .map_err(|e| TheoryError::Invalid(e.to_string()))?;
    let horizon = spec.schedule.horizon;
    if spec.tau > horizon {
        return Err(TheoryError::Invalid(format!("tau {} exceeds horizon {horizon}", spec.tau)));
    }
    let d_w = problem.d_w();
    if spec.w0.len() != d_w {
        return Err(TheoryError::Invalid(format!("w0 has length {}, need {d_w}", spec.w0.len())));
    }
    if let Mode::Minibatch { size, .. } = spec.mode {
        if size == 0 || size > problem.m() {
            return Err(TheoryError::Invalid(format!("minibatch size {size} for {} rows", problem.m())));
        }
    }
    let x_tau = teleport_value(problem, &spec.teleport)?;
    let mut rng = match spec.mode {
        Mode::Minibatch { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Mode::Full => None,
    };

    let mut w = super::embed_small(&spec.w0, problem.d_x());
    let cap = horizon as usize;
    let mut etas = Vec::with_capacity(cap);
    let mut iterates = Vec::with_capacity(cap + 1);
    let mut losses = Vec::with_capacity(cap);
    for t in 0..horizon {
        if t == spec.tau {
            w[d_w..].copy_from_slice(&x_tau);
        }
        losses.push(problem.loss(&w));
        let mut g = match (&spec.mode, rng.as_mut()) {
            (Mode::Minibatch { size, .. }, Some(rng)) => {
                let rows = index::sample(rng, problem.m(), *size).into_vec();
                problem.subgradient_rows(&w, &rows)
            }
            _ => subgradient(problem, &w),
        };
        if t < spec.tau {
            g[d_w..].iter_mut().for_each(|v| *v = 0.0);
        }
        let eta = spec.schedule.lr_at(t as f64);
        etas.push(eta);
        iterates.push(w.clone());
        w.iter_mut().zip(&g).for_each(|(w, g)| *w -= eta * g);
    }
    if spec.tau == horizon {
        w[d_w..].copy_from_slice(&x_tau);
    }
    iterates.push(w);
    Ok(TheoryRun {
        tau: spec.tau,
        d_w,
        etas,
        iterates,
        losses,
        x_tau,
        mode: spec.mode.clone(),
    })
}

/// `sum_t eta_{t+1} W_t / sum_t eta_{t+1}` over `t = 0..T`, with pre-expansion
/// iterates already embedded as `[w_t, 0]`.
pub fn weighted_average_iterate(run: &TheoryRun) -> Result<Vec<f64>, TheoryError> {
    let total = run.eta_sum();
    if !(total > 0.0) {
        return Err(TheoryError::Invalid("learning rates sum to zero".into()));
    }
    let d = run.iterates[0].len();
    let mut avg = vec![0.0; d];
    for (eta, w) in run.etas.iter().zip(&run.iterates) {
        avg.iter_mut().zip(w).for_each(|(a, w)| *a += eta * w);
    }
    avg.iter_mut().for_each(|a| *a /= total);
    Ok(avg)
}
