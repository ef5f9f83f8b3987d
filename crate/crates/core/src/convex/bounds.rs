use serde::{Deserialize, Serialize};

use super::{
    dist2, minimizer_oracle, run_training, sample_init, weighted_average_iterate, ConvexProblem, Mode, RunSpec,
    Teleport, TheoryError, TheoryRun,
};
use crate::optim::ScheduleConfig;

/// Realized left-hand side and each right-hand-side term of a convergence bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `L(W_bar)`.
    pub lhs: f64,
    /// `sum_t eta_{t+1} L_t / sum_t eta_{t+1}`, the Jensen intermediate.
    pub weighted_loss: f64,
    pub minima_term: f64,
    pub lipschitz_term: f64,
    pub distance_term: f64,
    /// `-||W_T - W*||^2 / (2 sum eta)`, omitted from `rhs`.
    pub dropped_term: f64,
    pub rhs: f64,
    pub slack: f64,
    /// Minibatch runs: the bound is reported but not guaranteed.
    pub advisory: bool,
}

impl BoundReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.slack >= -tol && self.lhs <= self.weighted_loss + tol
    }
}

fn assemble(
    problem: &ConvexProblem,
    run: &TheoryRun,
    minima_term: f64,
    distance_sq: f64,
    w_star_full: &[f64],
) -> Result<BoundReport, TheoryError> {
    let total = run.eta_sum();
    let avg = weighted_average_iterate(run)?;
    let lhs = problem.loss(&avg);
    let weighted_loss = run.etas.iter().zip(&run.losses).map(|(e, l)| e * l).sum::<f64>() / total;
    let g = problem.lipschitz();
    let lipschitz_term = g * g * run.eta_sq_sum() / (2.0 * total);
    let distance_term = distance_sq / (2.0 * total);
    let last = run.iterates.last().expect("T + 1 iterates");
    let dropped_term = -dist2(last, w_star_full) / (2.0 * total);
    let rhs = minima_term + lipschitz_term + distance_term;
    Ok(BoundReport {
        lhs,
        weighted_loss,
        minima_term,
        lipschitz_term,
        distance_term,
        dropped_term,
        rhs,
        slack: rhs - lhs,
        advisory: !run.deterministic(),
    })
}

fn check_dims(problem: &ConvexProblem, run: &TheoryRun, w_star: Option<&[f64]>, big: &[f64]) -> Result<(), TheoryError> {
    if big.len() != problem.dim() || w_star.is_some_and(|w| w.len() != problem.d_w()) || run.d_w != problem.d_w() {
        return Err(TheoryError::Invalid("minimizer dimensions do not match the problem".into()));
    }
    Ok(())
}

/// Progressive-training bound:
/// `L(W_bar) <= [sum_{t<tau} eta L(w*) + sum_{t>=tau} eta L(W*)] / sum eta
///            + G^2 sum eta^2 / (2 sum eta)
///            + (||w_0-w*||^2 + ||W_tau-W*||^2 - ||w_tau-w*||^2) / (2 sum eta)`.
pub fn bound_progressive(
    problem: &ConvexProblem,
    run: &TheoryRun,
    w_star: &[f64],
    big_w_star: &[f64],
) -> Result<BoundReport, TheoryError> {
    check_dims(problem, run, Some(w_star), big_w_star)?;
    let tau = run.tau as usize;
    let total = run.eta_sum();
    let (lw, lbig) = (problem.small_loss(w_star), problem.loss(big_w_star));
    let head: f64 = run.etas[..tau].iter().sum();
    let tail: f64 = run.etas[tau..].iter().sum();
    let minima_term = (head * lw + tail * lbig) / total;
    let distance_sq = (dist2(run.w_part(0), w_star) - dist2(run.w_part(tau), w_star))
        + dist2(&run.iterates[tau], big_w_star);
    assemble(problem, run, minima_term, distance_sq, big_w_star)
}

/// Fixed-size bound: `L(W_bar) <= L(W*) + G^2 sum eta^2 / (2 sum eta) + ||W_0-W*||^2 / (2 sum eta)`.
pub fn bound_fixed(problem: &ConvexProblem, run: &TheoryRun, big_w_star: &[f64]) -> Result<BoundReport, TheoryError> {
    check_dims(problem, run, None, big_w_star)?;
    if run.tau != 0 {
        return Err(TheoryError::Invalid("fixed-size bound needs a run with tau = 0".into()));
    }
    let minima_term = problem.loss(big_w_star);
    let distance_sq = dist2(&run.iterates[0], big_w_star);
    assemble(problem, run, minima_term, distance_sq, big_w_star)
}

/// The two terms bounding `L(W_bar_prog) - L(W_bar_fixed)` for a decomposable minimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// `sum_{t<=tau} eta_t / sum_{t<=T} eta_t`.
    pub schedule_mass: f64,
    /// `schedule_mass * (L(w*) - L(W*))`.
    pub mass_term: f64,
    /// `(||x_tau - x*||^2 - ||x_0 - x*||^2) / (2 sum eta)`.
    pub init_term: f64,
    pub bound: f64,
    /// Difference of the two right-hand sides, which equals `bound` exactly in
    /// exact arithmetic.
    pub rhs_difference: f64,
    /// `L(W_bar_prog) - L(W_bar_fixed)` on the realized runs.
    pub realized: f64,
}

pub fn gap_bound(problem: &ConvexProblem, prog: &TheoryRun, fixed: &TheoryRun) -> Result<GapReport, TheoryError> {
    let planted = problem.planted_solution().ok_or(TheoryError::NotDecomposable)?;
    let big = problem.planted_joint().expect("planted");
    if prog.etas != fixed.etas || prog.w_part(0) != fixed.w_part(0) {
        return Err(TheoryError::Invalid(
            "gap needs runs sharing the schedule and the initial w_0".into(),
        ));
    }
    let total = prog.eta_sum();
    let tau = prog.tau as usize;
    let schedule_mass = prog.etas[..tau].iter().sum::<f64>() / total;
    let minima_gap = problem.small_loss(&planted.w_star) - problem.loss(&big);
    let mass_term = schedule_mass * minima_gap;
    let d_w = problem.d_w();
    let x0 = &fixed.iterates[0][d_w..];
    let init_term = (dist2(&prog.x_tau, &planted.x_star) - dist2(x0, &planted.x_star)) / (2.0 * total);
    let bp = bound_progressive(problem, prog, &planted.w_star, &big)?;
    let bf = bound_fixed(problem, fixed, &big)?;
    Ok(GapReport {
        schedule_mass,
        mass_term,
        init_term,
        bound: mass_term + init_term,
        rhs_difference: bp.rhs - bf.rhs,
        realized: bp.lhs - bf.lhs,
    })
}

/// Per-step inequality `||W_{t+1}-W*||^2 <= ||W_t-W*||^2 - 2 eta (L_t - L*) + eta^2 G^2`,
/// on `w` against `w*` before the expansion and on `W` against `W*` after.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerStepCheck {
    pub steps: usize,
    pub violations: usize,
    /// Smallest `rhs - lhs` over all steps.
    pub worst_margin: f64,
}

pub fn check_per_step(
    problem: &ConvexProblem,
    run: &TheoryRun,
    w_star: &[f64],
    big_w_star: &[f64],
) -> Result<PerStepCheck, TheoryError> {
    check_dims(problem, run, Some(w_star), big_w_star)?;
    let g2 = problem.lipschitz().powi(2);
    let (lw, lbig) = (problem.small_loss(w_star), problem.loss(big_w_star));
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for t in 0..run.etas.len() {
        let eta = run.etas[t];
        let (before, after, l_star) = if (t as u64) < run.tau {
            (dist2(run.w_part(t), w_star), dist2(run.w_part(t + 1), w_star), lw)
        } else {
            (dist2(&run.iterates[t], big_w_star), dist2(&run.iterates[t + 1], big_w_star), lbig)
        };
        let rhs = before - 2.0 * eta * (run.losses[t] - l_star) + eta * eta * g2;
        let margin = rhs - after;
        worst = worst.min(margin);
        if margin < -1e-12 * (1.0 + rhs.abs()) {
            violations += 1;
        }
    }
    Ok(PerStepCheck {
        steps: run.etas.len(),
        violations,
        worst_margin: worst,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeleportRule {
    KeepZero,
    #[default]
    RandomInit,
    OracleXStar,
}

fn default_init_scale() -> f64 {
    1.0
}

/// One randomized comparison of a progressive and a fixed-size run on a
/// planted problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub d_w: usize,
    pub d_x: usize,
    pub m: usize,
    pub schedule: ScheduleConfig,
    pub tau: u64,
    #[serde(default)]
    pub teleport: TeleportRule,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
}

fn default_mode() -> Mode {
    Mode::Full
}

impl TrialConfig {
    pub fn new(d_w: usize, d_x: usize, m: usize, schedule: ScheduleConfig, tau: u64) -> Self {
        TrialConfig {
            d_w,
            d_x,
            m,
            schedule,
            tau,
            teleport: TeleportRule::RandomInit,
            init_scale: 1.0,
            mode: Mode::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub seed: u64,
    pub tau: u64,
    pub horizon: u64,
    pub teleport: TeleportRule,
    pub lipschitz: f64,
    pub small_min: f64,
    pub large_min: f64,
    pub fixed: BoundReport,
    pub progressive: BoundReport,
    pub gap: GapReport,
    pub per_step_fixed: PerStepCheck,
    pub per_step_progressive: PerStepCheck,
}

impl TrialReport {
    pub fn bounds_hold(&self, tol: f64) -> bool {
        self.fixed.holds(tol)
            && self.progressive.holds(tol)
            && self.per_step_fixed.violations == 0
            && self.per_step_progressive.violations == 0
    }
}

/// Builds a planted problem from `seed`, certifies its planted minimizers with
/// the oracle, runs fixed-size and progressive training from a shared `w_0`,
/// and evaluates every bound.
///
/// The fixed-size run and the random-init teleport draw `x` from the same
/// distribution; the fixed run's `x_0` is reused for the gap term.
pub fn run_trial(cfg: &TrialConfig, seed: u64) -> Result<TrialReport, TheoryError> {
    let problem = ConvexProblem::planted(cfg.d_w, cfg.d_x, cfg.m, seed)?;
    let planted = problem.planted_solution().expect("planted").clone();
    let big = problem.planted_joint().expect("planted");
    let (small_min, large_min) = (problem.small_loss(&planted.w_star), problem.loss(&big));
    for (restrict, expected) in [(true, small_min), (false, large_min)] {
        let oracle = minimizer_oracle(&problem, restrict)?;
        if (oracle.loss - expected).abs() > 1e-9 * (1.0 + expected) {
            return Err(TheoryError::OracleFailure(format!(
                "oracle minimum {} disagrees with planted minimum {expected}",
                oracle.loss
            )));
        }
    }
    let base = seed.wrapping_mul(4);
    let w0 = sample_init(cfg.d_w, cfg.init_scale, base.wrapping_add(1));
    let x0_seed = base.wrapping_add(2);
    let fixed = run_training(
        &problem,
        &RunSpec {
            schedule: cfg.schedule,
            tau: 0,
            teleport: Teleport::RandomInit {
                seed: x0_seed,
                scale: cfg.init_scale,
            },
            mode: cfg.mode.clone(),
            w0: w0.clone(),
        },
    )?;
    let teleport = match cfg.teleport {
        TeleportRule::KeepZero => Teleport::KeepZero,
        TeleportRule::RandomInit => Teleport::RandomInit {
            seed: base.wrapping_add(3),
            scale: cfg.init_scale,
        },
        TeleportRule::OracleXStar => Teleport::OracleXStar,
    };
    let prog = run_training(
        &problem,
        &RunSpec {
            schedule: cfg.schedule,
            tau: cfg.tau,
            teleport,
            mode: cfg.mode.clone(),
            w0,
        },
    )?;
    Ok(TrialReport {
        seed,
        tau: cfg.tau,
        horizon: cfg.schedule.horizon,
        teleport: cfg.teleport,
        lipschitz: problem.lipschitz(),
        small_min,
        large_min,
        fixed: bound_fixed(&problem, &fixed, &big)?,
        progressive: bound_progressive(&problem, &prog, &planted.w_star, &big)?,
        gap: gap_bound(&problem, &prog, &fixed)?,
        per_step_fixed: check_per_step(&problem, &fixed, &planted.w_star, &big)?,
        per_step_progressive: check_per_step(&problem, &prog, &planted.w_star, &big)?,
    })
}
