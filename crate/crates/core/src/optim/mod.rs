//! Muon-NSGD, AdamW and SGD with decoupled weight decay.
//!
//! Muon-NSGD routes every rank-2 tensor through the orthogonalized momentum
//! update `W <- (1 - lr*wd) W - lr * NS(m)` and every other tensor through
//! normalized momentum `W <- (1 - lr*wd) W - lr * m / ||m||_2`, with a single
//! shared learning rate. No gradient clipping is applied anywhere.

mod newton_schulz;
mod schedule;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::ParamId;
use crate::model::Parameter;
use crate::tensor::{Scalar, Tensor, TensorError};

pub use newton_schulz::{newton_schulz_orthogonalize, Orthogonalized, NS_COEFFS};
pub use schedule::{schedule_lr, schedule_mass, ScheduleConfig, ScheduleKind};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("step {step} is outside the schedule horizon {horizon}")]
    StepOutOfRange { step: u64, horizon: u64 },
    #[error("optimizer state for {id} does not match its parameter: {reason}")]
    StateMismatch { id: ParamId, reason: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    MuonNsgd,
    Adamw,
    Sgd,
}

fn default_wd() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.95
}
fn default_betas() -> (f64, f64) {
    (0.9, 0.95)
}
fn default_eps() -> f64 {
    1e-8
}
fn default_ns_steps() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub peak_lr: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    /// Momentum coefficient for Muon-NSGD and SGD.
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_ns_steps")]
    pub ns_steps: usize,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, peak_lr: f64) -> Self {
        OptimizerConfig {
            kind,
            peak_lr,
            weight_decay: default_wd(),
            momentum: default_momentum(),
            betas: default_betas(),
            eps: default_eps(),
            ns_steps: default_ns_steps(),
        }
    }

    pub fn muon_nsgd(peak_lr: f64) -> Self {
        Self::new(OptimizerKind::MuonNsgd, peak_lr)
    }

    pub fn adamw(peak_lr: f64) -> Self {
        Self::new(OptimizerKind::Adamw, peak_lr)
    }

    pub fn sgd(peak_lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, peak_lr)
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: String| Err(OptimError::InvalidConfig(m));
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad(format!("peak_lr must be positive, got {}", self.peak_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || !(self.eps > 0.0) {
            return bad("adam betas must be in [0, 1) and eps > 0".into());
        }
        Ok(())
    }
}

/// Peak learning rates used by the reference experiments for each
/// optimizer/schedule pairing.
pub fn default_peak_lr(kind: OptimizerKind, schedule: ScheduleKind) -> f64 {
    match (kind, schedule) {
        (OptimizerKind::MuonNsgd, ScheduleKind::Cosine) => 0.05,
        (OptimizerKind::MuonNsgd, _) => 0.01,
        (OptimizerKind::Adamw, ScheduleKind::Cosine) => 0.001,
        (OptimizerKind::Adamw, _) => 0.0005,
        (OptimizerKind::Sgd, _) => 0.01,
    }
}

/// Buffers for one parameter: momentum `m`, and for AdamW the second moment
/// `v` plus its own step counter (for bias correction).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState<T> {
    pub m: Tensor<T>,
    pub v: Option<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> ParamState<T> {
    pub fn zeros(kind: OptimizerKind, shape: &[usize]) -> Self {
        ParamState {
            m: Tensor::zeros(shape),
            v: (kind == OptimizerKind::Adamw).then(|| Tensor::zeros(shape)),
            step: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    kind: OptimizerKind,
    buffers: BTreeMap<ParamId, ParamState<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        OptimizerState {
            kind,
            buffers: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn get(&self, id: ParamId) -> Option<&ParamState<T>> {
        self.buffers.get(&id)
    }

    pub fn insert(&mut self, id: ParamId, st: ParamState<T>) {
        self.buffers.insert(id, st);
    }

    pub fn remove(&mut self, id: ParamId) -> Option<ParamState<T>> {
        self.buffers.remove(&id)
    }

    pub fn buffers(&self) -> &BTreeMap<ParamId, ParamState<T>> {
        &self.buffers
    }

    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }
}

/// Side information from one optimizer step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// Parameters whose momentum was exactly zero, so only decay was applied.
    pub degenerate: Vec<ParamId>,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self, OptimError> {
        config.validate()?;
        Ok(Optimizer { config })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn init_state<T: Scalar>(&self) -> OptimizerState<T> {
        OptimizerState::new(self.config.kind)
    }

    /// Applies one update with learning rate `lr` to every parameter, using the
    /// gradients currently stored on them. Missing state entries start at zero.
    pub fn step<'a, T: Scalar>(
        &self,
        params: impl IntoIterator<Item = &'a mut Parameter<T>>,
        state: &mut OptimizerState<T>,
        lr: f64,
    ) -> Result<StepReport, OptimError> {
        if state.kind != self.config.kind {
            return Err(OptimError::InvalidConfig(format!(
                "state was built for {:?}, optimizer is {:?}",
                state.kind, self.config.kind
            )));
        }
        let mut report = StepReport::default();
        for p in params {
            let id = p.id();
            let st = state
                .buffers
                .entry(id)
                .or_insert_with(|| ParamState::zeros(self.config.kind, p.value().shape()));
            if st.m.shape() != p.value().shape()
                || st.v.as_ref().is_some_and(|v| v.shape() != p.value().shape())
                || st.v.is_some() != (self.config.kind == OptimizerKind::Adamw)
            {
                return Err(OptimError::StateMismatch {
                    id,
                    reason: format!("buffer shape {:?} vs parameter {:?}", st.m.shape(), p.value().shape()),
                });
            }
            let grad = p.grad().clone();
            let degenerate = match self.config.kind {
                OptimizerKind::MuonNsgd => muon_nsgd_update(p.value_mut(), &grad, st, lr, &self.config)?,
                OptimizerKind::Adamw => {
                    adamw_update(p.value_mut(), &grad, st, lr, &self.config);
                    false
                }
                OptimizerKind::Sgd => {
                    sgd_update(p.value_mut(), &grad, st, lr, &self.config);
                    false
                }
            };
            if degenerate {
                report.degenerate.push(id);
            }
        }
        Ok(report)
    }
}

fn accumulate_momentum<T: Scalar>(m: &mut Tensor<T>, grad: &Tensor<T>, beta: f64) {
    let beta = T::of(beta);
    m.data_mut()
        .iter_mut()
        .zip(grad.data())
        .for_each(|(m, g)| *m = beta * *m + *g);
}

fn decay<T: Scalar>(w: &mut Tensor<T>, lr: f64, wd: f64) {
    if wd != 0.0 {
        let f = T::of(1.0 - lr * wd);
        w.data_mut().iter_mut().for_each(|x| *x = *x * f);
    }
}

/// One Muon-NSGD update of a single tensor. Returns `true` when the momentum
/// was zero and only weight decay was applied.
pub fn muon_nsgd_update<T: Scalar>(
    w: &mut Tensor<T>,
    grad: &Tensor<T>,
    st: &mut ParamState<T>,
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<bool, OptimError> {
    accumulate_momentum(&mut st.m, grad, cfg.momentum);
    st.step += 1;
    decay(w, lr, cfg.weight_decay);
    let direction = if w.rank() == 2 {
        let o = newton_schulz_orthogonalize(&st.m, cfg.ns_steps)?;
        if o.degenerate {
            return Ok(true);
        }
        o.value
    } else {
        let n = st.m.norm();
        if n == 0.0 {
            return Ok(true);
        }
        st.m.map(|x| T::of(x.as_f64() / n))
    };
    let lr = T::of(lr);
    w.data_mut()
        .iter_mut()
        .zip(direction.data())
        .for_each(|(x, d)| *x = *x - lr * *d);
    Ok(false)
}

pub fn sgd_update<T: Scalar>(
    w: &mut Tensor<T>,
    grad: &Tensor<T>,
    st: &mut ParamState<T>,
    lr: f64,
    cfg: &OptimizerConfig,
) {
    accumulate_momentum(&mut st.m, grad, cfg.momentum);
    st.step += 1;
    decay(w, lr, cfg.weight_decay);
    let lr = T::of(lr);
    w.data_mut()
        .iter_mut()
        .zip(st.m.data())
        .for_each(|(x, m)| *x = *x - lr * *m);
}

pub fn adamw_update<T: Scalar>(
    w: &mut Tensor<T>,
    grad: &Tensor<T>,
    st: &mut ParamState<T>,
    lr: f64,
    cfg: &OptimizerConfig,
) {
    let (b1, b2) = cfg.betas;
    st.step += 1;
    let c1 = 1.0 - b1.powi(st.step as i32);
    let c2 = 1.0 - b2.powi(st.step as i32);
    decay(w, lr, cfg.weight_decay);
    let v = st.v.get_or_insert_with(|| Tensor::zeros(grad.shape()));
    for (((x, m), v), g) in w
        .data_mut()
        .iter_mut()
        .zip(st.m.data_mut())
        .zip(v.data_mut())
        .zip(grad.data())
    {
        let g = g.as_f64();
        let mf = b1 * m.as_f64() + (1.0 - b1) * g;
        let vf = b2 * v.as_f64() + (1.0 - b2) * g * g;
        *m = T::of(mf);
        *v = T::of(vf);
        let upd = (mf / c1) / ((vf / c2).sqrt() + cfg.eps);
        *x = T::of(x.as_f64() - lr * upd);
    }
}
