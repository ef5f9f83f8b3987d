//! Exact minimizer of a least-absolute-deviation objective.
//!
//! A subgradient warm start picks an initial vertex (a basis of `d` rows with
//! zero residual); descent then moves along vertex edges with an exact line
//! search until the dual certificate `|u| <= 1` holds, where `u` solves
//! `Z_S^T u = -sum_{i not in S} sign(r_i) z_i`. Targets are perturbed by a tiny
//! deterministic amount during descent so every vertex is non-degenerate; the
//! certificate is then re-checked on the unperturbed problem.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dot, ConvexProblem, TheoryError};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimizer {
    pub point: Vec<f64>,
    pub loss: f64,
    /// Largest dual multiplier magnitude; at most 1 certifies optimality
    /// (0 when the loss is zero, which is optimal trivially).
    pub certificate: f64,
}

struct Lad {
    d: usize,
    rows: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl Lad {
    fn loss(&self, w: &[f64], b: &[f64]) -> f64 {
        self.rows.iter().zip(b).map(|(z, bi)| (dot(z, w) - bi).abs()).sum::<f64>() / b.len() as f64
    }

    fn scale(&self) -> f64 {
        self.b.iter().fold(1.0f64, |s, v| s.max(v.abs()))
    }

    fn basis_matrix(&self, basis: &[usize]) -> Vec<f64> {
        basis.iter().flat_map(|&i| self.rows[i].iter().copied()).collect()
    }

    fn transpose(&self, m: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut t = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                t[j * d + i] = m[i * d + j];
            }
        }
        t
    }

    fn warm_start(&self) -> Vec<f64> {
        let g = self.rows.iter().map(|z| dot(z, z).sqrt()).fold(0.0, f64::max).max(1e-300);
        let mut w = vec![0.0; self.d];
        let mut best = (self.loss(&w, &self.b), w.clone());
        let step0 = self.scale() / g;
        for k in 0..2000 {
            let mut grad = vec![0.0; self.d];
            for (z, bi) in self.rows.iter().zip(&self.b) {
                let r = dot(z, &w) - bi;
                let s = if r > 0.0 { 1.0 } else if r < 0.0 { -1.0 } else { 0.0 };
                grad.iter_mut().zip(z).for_each(|(g, zz)| *g += s * zz);
            }
            let gn = dot(&grad, &grad).sqrt();
            if gn == 0.0 {
                break;
            }
            let eta = step0 / ((k + 1) as f64).sqrt() / gn;
            w.iter_mut().zip(&grad).for_each(|(w, g)| *w -= eta * g);
            let f = self.loss(&w, &self.b);
            if f < best.0 {
                best = (f, w.clone());
            }
        }
        best.1
    }

    /// Greedy independent rows ordered by residual size at `w`.
    fn initial_basis(&self, w: &[f64]) -> Option<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        let res: Vec<f64> = self.rows.iter().zip(&self.b).map(|(z, b)| (dot(z, w) - b).abs()).collect();
        order.sort_by(|&i, &j| res[i].total_cmp(&res[j]).then(i.cmp(&j)));
        let mut ortho: Vec<Vec<f64>> = Vec::new();
        let mut basis = Vec::new();
        for i in order {
            let mut v = self.rows[i].clone();
            let n0 = dot(&v, &v).sqrt();
            for _ in 0..2 {
                for q in &ortho {
                    let c = dot(&v, q);
                    v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
                }
            }
            let n = dot(&v, &v).sqrt();
            if n0 > 0.0 && n > 1e-9 * n0 {
                v.iter_mut().for_each(|x| *x /= n);
                ortho.push(v);
                basis.push(i);
                if basis.len() == self.d {
                    return Some(basis);
                }
            }
        }
        None
    }

    fn solve_basis(&self, basis: &[usize], b: &[f64]) -> Option<Vec<f64>> {
        let rhs: Vec<f64> = basis.iter().map(|&i| b[i]).collect();
        linalg::solve(&self.basis_matrix(basis), &rhs, self.d)
    }

    /// Dual multipliers `u` for `basis` given signs of the other rows.
    fn multipliers(&self, basis: &[usize], signs: &[f64]) -> Option<Vec<f64>> {
        let mut g = vec![0.0; self.d];
        for (i, z) in self.rows.iter().enumerate() {
            if !basis.contains(&i) && signs[i] != 0.0 {
                g.iter_mut().zip(z).for_each(|(g, zz)| *g -= signs[i] * zz);
            }
        }
        linalg::solve(&self.transpose(&self.basis_matrix(basis)), &g, self.d)
    }

    fn descend(&self, mut basis: Vec<usize>, seed: u64) -> Result<Minimizer, String> {
        let m = self.rows.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = 1e-9 * self.scale();
        let bp: Vec<f64> = self.b.iter().map(|v| v + eps * rng.random_range(-1.0..1.0)).collect();
        let max_iter = 50 * m * self.d + 100;
        let mut converged = false;
        for _ in 0..max_iter {
            let w = self.solve_basis(&basis, &bp).ok_or("singular basis")?;
            let r: Vec<f64> = self.rows.iter().zip(&bp).map(|(z, b)| dot(z, &w) - b).collect();
            let signs: Vec<f64> = r.iter().map(|v| v.signum()).collect();
            let u = self.multipliers(&basis, &signs).ok_or("singular basis")?;
            let (j, uj) = u
                .iter()
                .copied()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .expect("d >= 1");
            if uj.abs() <= 1.0 + 1e-10 {
                converged = true;
                break;
            }
            let s = uj.signum();
            let mut e = vec![0.0; self.d];
            e[j] = s;
            let delta = linalg::solve(&self.basis_matrix(&basis), &e, self.d).ok_or("singular basis")?;
            let mut slope = 1.0 - uj.abs();
            let mut cands: Vec<(f64, usize, f64)> = Vec::new();
            for (i, (row, ri)) in self.rows.iter().zip(&r).enumerate() {
                if basis.contains(&i) {
                    continue;
                }
                let c = dot(row, &delta);
                if c == 0.0 {
                    continue;
                }
                let beta = -ri / c;
                if beta > 0.0 {
                    cands.push((beta, i, c));
                }
            }
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut entering = None;
            for (_, i, c) in cands {
                slope += 2.0 * c.abs();
                if slope >= 0.0 {
                    entering = Some(i);
                    break;
                }
            }
            basis[j] = entering.ok_or("objective unbounded along an edge")?;
        }
        if !converged {
            return Err("vertex descent did not converge".into());
        }
        // Re-check on the exact targets.
        let w = self.solve_basis(&basis, &self.b).ok_or("singular basis")?;
        let loss = self.loss(&w, &self.b);
        if loss <= 1e-14 * self.scale() {
            return Ok(Minimizer {
                point: w,
                loss,
                certificate: 0.0,
            });
        }
        let wp = self.solve_basis(&basis, &bp).ok_or("singular basis")?;
        let signs: Vec<f64> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let r = dot(z, &w) - self.b[i];
                if r.abs() > 1e-9 * (1.0 + self.b[i].abs()) {
                    r.signum()
                } else {
                    // Zero residual: any multiplier in [-1, 1] is admissible.
                    (dot(z, &wp) - bp[i]).signum()
                }
            })
            .collect();
        let u = self.multipliers(&basis, &signs).ok_or("singular basis")?;
        let certificate = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if certificate > 1.0 + 1e-8 {
            return Err(format!("dual certificate {certificate} exceeds 1"));
        }
        Ok(Minimizer {
            point: w,
            loss,
            certificate,
        })
    }
}

/// Global minimizer of `L([w, x])`, or of `L([w, 0])` over `w` alone when
/// `restrict_x_to_zero` is set (the returned point then has length `d_w`).
pub fn minimizer_oracle(problem: &ConvexProblem, restrict_x_to_zero: bool) -> Result<Minimizer, TheoryError> {
    let d = if restrict_x_to_zero { problem.d_w() } else { problem.dim() };
    let rows: Vec<Vec<f64>> = (0..problem.m()).map(|i| problem.row(i)[..d].to_vec()).collect();
    let b: Vec<f64> = (0..problem.m()).map(|i| problem.target(i)).collect();
    if d == 0 {
        return Ok(Minimizer {
            point: vec![],
            loss: b.iter().map(|v| v.abs()).sum::<f64>() / b.len() as f64,
            certificate: 0.0,
        });
    }
    let lad = Lad { d, rows, b };
    let warm = lad.warm_start();
    let mut last = String::from("no attempt");
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for attempt in 0..5u64 {
        let start: Vec<f64> = if attempt == 0 {
            warm.clone()
        } else {
            warm.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect()
        };
        let Some(basis) = lad.initial_basis(&start) else {
            return Err(TheoryError::OracleFailure(format!(
                "data rows span fewer than {d} dimensions"
            )));
        };
        match lad.descend(basis, attempt) {
            Ok(m) => return Ok(m),
            Err(e) => last = e,
        }
    }
    Err(TheoryError::OracleFailure(last))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive reference: the optimum is attained at a vertex, so try
    /// every `d`-subset of rows.
    fn enumerate(p: &ConvexProblem) -> f64 {
        let d = p.dim();
        let m = p.m();
        let mut best = f64::INFINITY;
        let mut idx: Vec<usize> = (0..d).collect();
        loop {
            let a: Vec<f64> = idx.iter().flat_map(|&i| p.row(i).to_vec()).collect();
            let rhs: Vec<f64> = idx.iter().map(|&i| p.target(i)).collect();
            if let Some(w) = linalg::solve(&a, &rhs, d) {
                best = best.min(p.loss(&w));
            }
            let mut k = d;
            while k > 0 && idx[k - 1] == m - d + k - 1 {
                k -= 1;
            }
            if k == 0 {
                return best;
            }
            idx[k - 1] += 1;
            for t in k..d {
                idx[t] = idx[t - 1] + 1;
            }
        }
    }

    #[test]
    fn absolute_value() {
        let p = ConvexProblem::new(1, 0, vec![1.0], vec![3.0]).unwrap();
        let m = minimizer_oracle(&p, false).unwrap();
        assert!((m.point[0] - 3.0).abs() < 1e-12 && m.loss < 1e-14);
    }

    #[test]
    fn flat_minimum() {
        let p = ConvexProblem::new(1, 0, vec![1.0, 1.0], vec![1.0, -1.0]).unwrap();
        let m = minimizer_oracle(&p, false).unwrap();
        assert!((m.loss - 1.0).abs() < 1e-12);
        assert!(m.point[0].abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn matches_exhaustive_enumeration() {
        for seed in 0..20 {
            let p = ConvexProblem::random(2, 2, 10, seed).unwrap();
            let m = minimizer_oracle(&p, false).unwrap();
            let reference = enumerate(&p);
            assert!((m.loss - reference).abs() < 1e-6, "seed {seed}: {} vs {reference}", m.loss);
            assert!(m.certificate <= 1.0 + 1e-8);
        }
    }

    #[test]
    fn planted_values_are_recovered() {
        let p = ConvexProblem::planted(8, 8, 64, 3).unwrap();
        let full = minimizer_oracle(&p, false).unwrap();
        assert!(full.loss < 1e-12);
        let small = minimizer_oracle(&p, true).unwrap();
        let w_star = &p.planted_solution().unwrap().w_star;
        assert!((small.loss - p.small_loss(w_star)).abs() < 1e-9);
    }

    #[test]
    fn rank_deficient_data_fails_loudly() {
        let p = ConvexProblem::new(2, 0, vec![1.0, 1.0, 2.0, 2.0], vec![1.0, 0.0]).unwrap();
        assert!(matches!(minimizer_oracle(&p, false), Err(TheoryError::OracleFailure(_))));
    }
}
