//! Mixing-time detection between a progressive and a fixed-size run, and the
//! expansion timing derived from it.

use serde::{Deserialize, Serialize};

use super::runlog::RunLog;
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingReport {
    pub tau: u64,
    pub mixed: bool,
    /// Steps after `tau`; `None` when the curves never mix.
    pub t_mix: Option<u64>,
    pub epsilon: f64,
    pub window: usize,
    /// Tokens the progressive run consumed between `tau` and `tau + t_mix`.
    pub tokens_to_mix: Option<u64>,
    /// `(L_prog - L_fixed) / L_fixed` at the last shared evaluation.
    pub final_rel_delta: f64,
}

impl MixingReport {
    pub fn summary(&self) -> String {
        match self.t_mix {
            Some(t) => format!(
                "MIXED at tau+{t} (tokens {}), eps {}, window {}, final rel. delta {:+.4}%",
                self.tokens_to_mix.unwrap_or(0),
                self.epsilon,
                self.window,
                100.0 * self.final_rel_delta
            ),
            None => format!(
                "NOT_MIXED after tau={}, eps {}, window {}, final rel. delta {:+.4}%",
                self.tau,
                self.epsilon,
                self.window,
                100.0 * self.final_rel_delta
            ),
        }
    }
}

fn trailing_mean(xs: &[f64], window: usize) -> Vec<f64> {
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Compares the validation curves of both runs on their shared evaluation
/// steps at or after `tau`.
pub fn detect_mixing(
    prog: &RunLog,
    fixed: &RunLog,
    tau: u64,
    epsilon: f64,
    window: usize,
) -> Result<MixingReport, HarnessError> {
    if window == 0 || !(epsilon > 0.0) {
        return Err(HarnessError::Config("mixing needs epsilon > 0 and window > 0".into()));
    }
    let fixed_curve: std::collections::BTreeMap<u64, f64> =
        fixed.val_curve().into_iter().map(|(s, _, v)| (s, v)).collect();
    let shared: Vec<(u64, u64, f64, f64)> = prog
        .val_curve()
        .into_iter()
        .filter(|(s, _, _)| *s >= tau)
        .filter_map(|(s, tok, v)| fixed_curve.get(&s).map(|&f| (s, tok, v, f)))
        .collect();
    if shared.len() < window {
        return Err(HarnessError::Data(format!(
            "only {} shared evaluations after tau={tau}; need at least {window}",
            shared.len()
        )));
    }
    let p = trailing_mean(&shared.iter().map(|x| x.2).collect::<Vec<_>>(), window);
    let f = trailing_mean(&shared.iter().map(|x| x.3).collect::<Vec<_>>(), window);
    let close: Vec<bool> = p.iter().zip(&f).map(|(a, b)| ((a - b) / b).abs() <= epsilon).collect();
    let first = (0..=close.len() - window).find(|&i| close[i..i + window].iter().all(|&c| c));
    let tokens_at_tau = prog
        .records
        .iter()
        .take_while(|r| r.step < tau)
        .last()
        .map_or(0, |r| r.tokens);
    let (last_p, last_f) = (shared.last().unwrap().2, shared.last().unwrap().3);
    Ok(MixingReport {
        tau,
        mixed: first.is_some(),
        t_mix: first.map(|i| shared[i].0 - tau),
        epsilon,
        window,
        tokens_to_mix: first.map(|i| shared[i].1.saturating_sub(tokens_at_tau)),
        final_rel_delta: (last_p - last_f) / last_f,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingAdvice {
    pub tau: u64,
    pub warning: Option<String>,
}

/// `stable_end - t_mix`, clamped to `warmup_end`.
pub fn plan_expansion_timing(warmup_end: u64, stable_end: u64, t_mix: u64) -> TimingAdvice {
    let stable_len = stable_end.saturating_sub(warmup_end);
    if t_mix >= stable_len {
        return TimingAdvice {
            tau: warmup_end,
            warning: Some(format!(
                "mixing time {t_mix} is not shorter than the stable phase ({stable_len} steps); expanding right after warmup"
            )),
        };
    }
    TimingAdvice {
        tau: stable_end - t_mix,
        warning: None,
    }
}
