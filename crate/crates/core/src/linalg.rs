//! Small dense f64 helpers: spectral-norm estimation, semi-orthogonal sampling,
//! and square solves.

use rand::Rng;
use rand_distr::StandardNormal;

/// Top singular value of a row-major `rows x cols` matrix by power iteration
/// on `A^T A`, starting from a fixed deterministic vector.
pub fn spectral_norm(data: &[f64], rows: usize, cols: usize, steps: usize) -> f64 {
    assert_eq!(data.len(), rows * cols);
    // Slightly non-uniform start so it is not orthogonal to common structured inputs.
    let mut v: Vec<f64> = (0..cols).map(|j| 1.0 + 0.01 * (j as f64 + 1.0).sqrt()).collect();
    normalize(&mut v);
    let mut u = vec![0.0; rows];
    let mut sigma = 0.0;
    for _ in 0..steps.max(1) {
        for i in 0..rows {
            u[i] = (0..cols).map(|j| data[i * cols + j] * v[j]).sum();
        }
        let un = norm(&u);
        if un == 0.0 {
            return 0.0;
        }
        for j in 0..cols {
            v[j] = (0..rows).map(|i| data[i * cols + j] * u[i]).sum();
        }
        let vn = norm(&v);
        if vn == 0.0 {
            return 0.0;
        }
        sigma = vn / un;
        v.iter_mut().for_each(|x| *x /= vn);
    }
    sigma
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Row-major `rows x cols` matrix with orthonormal rows (if `rows <= cols`)
/// or orthonormal columns (otherwise), i.e. every singular value is 1.
pub fn semi_orthogonal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Vec<f64> {
    let (short, long) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    // Orthonormalize `short` Gaussian vectors of length `long`
    // (modified Gram-Schmidt, applied twice for stability).
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let n = norm(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for (s, b) in basis.iter().enumerate() {
        for (l, &x) in b.iter().enumerate() {
            if rows <= cols {
                out[s * cols + l] = x;
            } else {
                out[l * cols + s] = x;
            }
        }
    }
    out
}

/// Solves `A x = b` for square row-major `A` by Gaussian elimination with
/// partial pivoting. Returns `None` if `A` is numerically singular.
pub fn solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut rhs = b.to_vec();
    let scale = m.iter().fold(0.0f64, |s, x| s.max(x.abs())).max(1e-300);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))?;
        if m[piv * n + col].abs() <= 1e-12 * scale {
            return None;
        }
        if piv != col {
            for j in 0..n {
                m.swap(piv * n + j, col * n + j);
            }
            rhs.swap(piv, col);
        }
        for r in col + 1..n {
            let f = m[r * n + col] / m[col * n + col];
            if f != 0.0 {
                for j in col..n {
                    m[r * n + j] -= f * m[col * n + j];
                }
                rhs[r] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|j| m[r * n + j] * x[j]).sum();
        x[r] = (rhs[r] - s) / m[r * n + r];
    }
    Some(x)
}
