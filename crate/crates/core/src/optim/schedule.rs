//! Warmup-stable-decay, cosine and constant learning-rate schedules.

use serde::{Deserialize, Serialize};

use super::OptimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Wsd,
    Cosine,
    Constant,
}

fn default_warmup() -> f64 {
    0.02
}
fn default_decay() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub peak_lr: f64,
    #[serde(default = "default_warmup")]
    pub warmup_frac: f64,
    /// Length of the final linear decay as a fraction of the horizon (WSD only).
    #[serde(default = "default_decay")]
    pub decay_frac: f64,
    /// Total number of steps `T`.
    pub horizon: u64,
}

impl ScheduleConfig {
    pub fn wsd(peak_lr: f64, warmup_frac: f64, decay_frac: f64, horizon: u64) -> Self {
        ScheduleConfig {
            kind: ScheduleKind::Wsd,
            peak_lr,
            warmup_frac,
            decay_frac,
            horizon,
        }
    }

    pub fn cosine(peak_lr: f64, warmup_frac: f64, horizon: u64) -> Self {
        ScheduleConfig {
            kind: ScheduleKind::Cosine,
            peak_lr,
            warmup_frac,
            decay_frac: 0.0,
            horizon,
        }
    }

    pub fn constant(peak_lr: f64, warmup_frac: f64, horizon: u64) -> Self {
        ScheduleConfig {
            kind: ScheduleKind::Constant,
            peak_lr,
            warmup_frac,
            decay_frac: 0.0,
            horizon,
        }
    }

    pub fn with_horizon(mut self, horizon: u64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: String| Err(OptimError::InvalidConfig(m));
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return bad(format!("peak_lr must be positive, got {}", self.peak_lr));
        }
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        let decay = if self.kind == ScheduleKind::Wsd { self.decay_frac } else { 0.0 };
        if !(0.0..=1.0).contains(&self.warmup_frac)
            || !(0.0..=1.0).contains(&decay)
            || self.warmup_frac + decay > 1.0 + 1e-12
        {
            return bad(format!(
                "need 0 <= warmup_frac + decay_frac <= 1, got {} + {}",
                self.warmup_frac, decay
            ));
        }
        Ok(())
    }

    fn warmup_steps(&self) -> f64 {
        self.warmup_frac * self.horizon as f64
    }

    fn decay_steps(&self) -> f64 {
        self.decay_frac * self.horizon as f64
    }

    /// Learning rate at continuous time `t` in `[0, T]`; piecewise linear/cosine
    /// and continuous across phase boundaries.
    pub fn lr_at(&self, t: f64) -> f64 {
        let big_t = self.horizon as f64;
        let w = self.warmup_steps();
        let peak = self.peak_lr;
        if t < w {
            return peak * t / w;
        }
        match self.kind {
            ScheduleKind::Constant => peak,
            ScheduleKind::Wsd => {
                let d = self.decay_steps();
                if d > 0.0 && t > big_t - d {
                    peak * ((big_t - t) / d).max(0.0)
                } else {
                    peak
                }
            }
            ScheduleKind::Cosine => {
                let span = big_t - w;
                if span <= 0.0 {
                    return 0.0;
                }
                let s = ((t - w) / span).clamp(0.0, 1.0);
                peak * 0.5 * (1.0 + (std::f64::consts::PI * s).cos())
            }
        }
    }

    /// `eta_t` for integer step `0 <= t < T`.
    pub fn lr(&self, t: u64) -> Result<f64, OptimError> {
        if t >= self.horizon {
            return Err(OptimError::StepOutOfRange {
                step: t,
                horizon: self.horizon,
            });
        }
        Ok(self.lr_at(t as f64))
    }

    /// `sum_{t < tau} eta_t / sum_{t < T} eta_t` over the discrete schedule.
    pub fn mass(&self, tau: u64) -> f64 {
        let tau = tau.min(self.horizon);
        let mut head = 0.0;
        let mut total = 0.0;
        for t in 0..self.horizon {
            let lr = self.lr_at(t as f64);
            if t < tau {
                head += lr;
            }
            total += lr;
        }
        if total == 0.0 {
            return if tau == self.horizon { 1.0 } else { 0.0 };
        }
        head / total
    }
}

pub fn schedule_lr(schedule: &ScheduleConfig, t: u64) -> Result<f64, OptimError> {
    schedule.lr(t)
}

pub fn schedule_mass(schedule: &ScheduleConfig, tau: u64) -> f64 {
    schedule.mass(tau)
}
