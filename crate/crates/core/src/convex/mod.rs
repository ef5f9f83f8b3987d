//! Convex, G-Lipschitz least-absolute-deviation problems split into a small
//! block `w` and extra parameters `x`, used to check the progressive-training
//! convergence bounds on realized subgradient runs.
//!
//! `L([w, x]) = (1/m) sum_i |a_i.w + c_i.x - b_i|`.

mod bounds;
mod oracle;
mod run;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bounds::{
    bound_fixed, bound_progressive, check_per_step, gap_bound, run_trial, BoundReport, GapReport, PerStepCheck,
    TeleportRule, TrialConfig, TrialReport,
};
pub use oracle::{minimizer_oracle, Minimizer};
pub use run::{run_training, weighted_average_iterate, Mode, RunSpec, Teleport, TheoryRun};

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("invalid theory input: {0}")]
    Invalid(String),
    #[error("minimizer oracle failed: {0}")]
    OracleFailure(String),
    #[error("problem has no planted decomposable minimizer; the gap bound needs W* = [w*, x*]")]
    NotDecomposable,
}

/// Minimizers known by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Planted {
    pub w_star: Vec<f64>,
    pub x_star: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexProblem {
    d_w: usize,
    d_x: usize,
    /// Row-major `m x (d_w + d_x)`: row `i` is `(a_i, c_i)`.
    rows: Vec<f64>,
    b: Vec<f64>,
    planted: Option<Planted>,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Gaussian initialization `N(0, scale^2)` used for both `w_0` and `x_0`.
pub fn sample_init(d: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian(&mut rng, d).into_iter().map(|v| v * scale).collect()
}

impl ConvexProblem {
    pub fn new(d_w: usize, d_x: usize, rows: Vec<f64>, b: Vec<f64>) -> Result<Self, TheoryError> {
        let d = d_w + d_x;
        if d == 0 || b.is_empty() || rows.len() != b.len() * d {
            return Err(TheoryError::Invalid(format!(
                "{} row entries for {} rows of dimension {d}",
                rows.len(),
                b.len()
            )));
        }
        if rows.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(TheoryError::Invalid("non-finite problem data".into()));
        }
        Ok(ConvexProblem {
            d_w,
            d_x,
            rows,
            b,
            planted: None,
        })
    }

    /// Unstructured Gaussian problem.
    pub fn random(d_w: usize, d_x: usize, m: usize, seed: u64) -> Result<Self, TheoryError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = gaussian(&mut rng, m * (d_w + d_x));
        let b = gaussian(&mut rng, m);
        Self::new(d_w, d_x, rows, b)
    }

    /// Problem whose joint minimizer is `W* = [w*, x*]` with `w*` also
    /// minimizing the small problem `L([w, 0])`.
    ///
    /// Rows come in mirrored pairs `(a, c)` and `(a, -c)` with targets
    /// `a.w* +- c.x*`. Every residual vanishes at `W*`, and for `x = 0` each
    /// pair contributes `|a.(w - w*) - s| + |a.(w - w*) + s| >= 2|s|` with
    /// equality at `w = w*`.
    pub fn planted(d_w: usize, d_x: usize, m: usize, seed: u64) -> Result<Self, TheoryError> {
        if m == 0 || !m.is_multiple_of(2) {
            return Err(TheoryError::Invalid(format!("planted problems need an even m > 0, got {m}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_star = gaussian(&mut rng, d_w);
        let x_star = gaussian(&mut rng, d_x);
        let d = d_w + d_x;
        let mut rows = Vec::with_capacity(m * d);
        let mut b = Vec::with_capacity(m);
        for _ in 0..m / 2 {
            let a = gaussian(&mut rng, d_w);
            let c = gaussian(&mut rng, d_x);
            let (aw, cx) = (dot(&a, &w_star), dot(&c, &x_star));
            rows.extend(a.iter().chain(&c));
            b.push(aw + cx);
            rows.extend(a.iter().copied().chain(c.iter().map(|v| -v)));
            b.push(aw - cx);
        }
        let mut p = Self::new(d_w, d_x, rows, b)?;
        p.planted = Some(Planted { w_star, x_star });
        Ok(p)
    }

    pub fn d_w(&self) -> usize {
        self.d_w
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn dim(&self) -> usize {
        self.d_w + self.d_x
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.rows[i * d..(i + 1) * d]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.b[i]
    }

    pub fn planted_solution(&self) -> Option<&Planted> {
        self.planted.as_ref()
    }

    /// Joint minimizer `[w*, x*]` when planted.
    pub fn planted_joint(&self) -> Option<Vec<f64>> {
        self.planted
            .as_ref()
            .map(|p| p.w_star.iter().chain(&p.x_star).copied().collect())
    }

    /// `G = max_i ||(a_i, c_i)||_2`.
    pub fn lipschitz(&self) -> f64 {
        (0..self.m())
            .map(|i| dot(self.row(i), self.row(i)).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn residual(&self, i: usize, w: &[f64]) -> f64 {
        dot(self.row(i), w) - self.b[i]
    }

    pub fn loss(&self, w: &[f64]) -> f64 {
        assert_eq!(w.len(), self.dim(), "iterate dimension");
        (0..self.m()).map(|i| self.residual(i, w).abs()).sum::<f64>() / self.m() as f64
    }

    /// Loss of the small model: `L([w, 0])`.
    pub fn small_loss(&self, w: &[f64]) -> f64 {
        self.loss(&embed_small(w, self.d_x))
    }

    /// `(1/|S|) sum_{i in S} sign(r_i) (a_i, c_i)` with `sign(0) = 0`.
    pub fn subgradient_rows(&self, w: &[f64], rows: &[usize]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        for &i in rows {
            let r = self.residual(i, w);
            let s = if r > 0.0 {
                1.0
            } else if r < 0.0 {
                -1.0
            } else {
                0.0
            };
            if s != 0.0 {
                g.iter_mut().zip(self.row(i)).for_each(|(g, z)| *g += s * z);
            }
        }
        let n = rows.len() as f64;
        g.iter_mut().for_each(|v| *v /= n);
        g
    }
}

pub fn subgradient(problem: &ConvexProblem, w: &[f64]) -> Vec<f64> {
    let all: Vec<usize> = (0..problem.m()).collect();
    problem.subgradient_rows(w, &all)
}

/// `[w, 0]`.
pub fn embed_small(w: &[f64], d_x: usize) -> Vec<f64> {
    w.iter().copied().chain(std::iter::repeat_n(0.0, d_x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abs_shift(c: f64) -> ConvexProblem {
        ConvexProblem::new(1, 0, vec![1.0], vec![c]).unwrap()
    }

    #[test]
    fn one_dimensional_subgradients() {
        let p = abs_shift(3.0);
        assert_eq!(subgradient(&p, &[0.0]), vec![-1.0]);
        assert_eq!(subgradient(&p, &[3.0]), vec![0.0]);
        assert_eq!(p.loss(&[0.0]), 3.0);
    }

    #[test]
    fn subgradient_norm_bounded_by_g() {
        let p = ConvexProblem::random(4, 3, 20, 1).unwrap();
        let g = p.lipschitz();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let w: Vec<f64> = gaussian(&mut rng, 7).into_iter().map(|v| 3.0 * v).collect();
            let s = subgradient(&p, &w);
            assert!(dot(&s, &s).sqrt() <= g + 1e-12);
        }
    }

    #[test]
    fn planted_minimizers() {
        let p = ConvexProblem::planted(3, 2, 10, 5).unwrap();
        let joint = p.planted_joint().unwrap();
        assert!(p.loss(&joint) < 1e-12);
        let w_star = &p.planted_solution().unwrap().w_star;
        let base = p.small_loss(w_star);
        assert!(base > 0.0);
        // w* is a minimizer of the small problem: no nearby point does better.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let w: Vec<f64> = w_star
                .iter()
                .zip(gaussian(&mut rng, 3))
                .map(|(a, e)| a + 0.5 * e)
                .collect();
            assert!(p.small_loss(&w) >= base - 1e-12);
        }
    }

    #[test]
    fn small_loss_is_joint_loss_at_zero_x() {
        let p = ConvexProblem::planted(2, 3, 8, 0).unwrap();
        let w = [0.3, -1.0];
        assert_eq!(p.small_loss(&w), p.loss(&[0.3, -1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ConvexProblem::new(2, 0, vec![1.0], vec![1.0]).is_err());
        assert!(ConvexProblem::planted(2, 2, 5, 0).is_err());
    }
}
