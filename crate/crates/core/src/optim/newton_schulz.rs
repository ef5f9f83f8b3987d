//! Quintic Newton-Schulz iteration pushing singular values towards 1.

use crate::tensor::{gemm, MatView, Scalar, Tensor, TensorError};

pub const NS_COEFFS: (f64, f64, f64) = (3.4445, -4.7750, 2.0315);

/// Result of orthogonalizing one matrix.
#[derive(Debug, Clone)]
pub struct Orthogonalized<T> {
    pub value: Tensor<T>,
    /// Set when the input had zero Frobenius norm; `value` is then all zeros.
    pub degenerate: bool,
}

/// `X <- aX + b(XX^T)X + c(XX^T)^2 X` from `X_0 = M / ||M||_F`.
///
/// Tall inputs are processed transposed so the Gram matrix uses the smaller side.
pub fn newton_schulz_orthogonalize<T: Scalar>(
    m: &Tensor<T>,
    steps: usize,
) -> Result<Orthogonalized<T>, TensorError> {
    let (rows, cols) = m.dims2()?;
    let fro = m.norm();
    if fro == 0.0 {
        return Ok(Orthogonalized {
            value: Tensor::zeros(m.shape()),
            degenerate: true,
        });
    }
    let tall = rows > cols;
    let (r, c) = if tall { (cols, rows) } else { (rows, cols) };
    let inv = T::of(1.0 / fro);
    let mut x: Vec<T> = if tall {
        m.transpose()?.into_data()
    } else {
        m.data().to_vec()
    };
    x.iter_mut().for_each(|v| *v = *v * inv);

    let (a, b, c2) = (T::of(NS_COEFFS.0), T::of(NS_COEFFS.1), T::of(NS_COEFFS.2));
    let mut gram = vec![T::zero(); r * r];
    let mut poly = vec![T::zero(); r * r];
    let mut next = vec![T::zero(); r * c];
    for _ in 0..steps {
        let xv = MatView::row_major(&x, r, c);
        gemm(xv, xv.t(), &mut gram, 0, r, false);
        let gv = MatView::row_major(&gram, r, r);
        gemm(gv, gv, &mut poly, 0, r, false);
        // poly <- b * gram + c * gram^2
        for (p, g) in poly.iter_mut().zip(&gram) {
            *p = b * *g + c2 * *p;
        }
        next.iter_mut().zip(&x).for_each(|(n, v)| *n = a * *v);
        gemm(MatView::row_major(&poly, r, r), xv, &mut next, 0, c, true);
        std::mem::swap(&mut x, &mut next);
    }
    let out = Tensor::new(vec![r, c], x)?;
    let value = if tall { out.transpose()? } else { out };
    Ok(Orthogonalized {
        value,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn from(rows: usize, cols: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(vec![rows, cols], data).unwrap()
    }

    #[test]
    fn zero_matrix_is_degenerate() {
        let z = Tensor::<f64>::zeros(&[3, 5]);
        let o = newton_schulz_orthogonalize(&z, 5).unwrap();
        assert!(o.degenerate);
        assert!(o.value.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn orthonormal_rows_map_near_one() {
        // 8x16 with orthonormal rows: normalized singular values are 1/sqrt(8).
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = linalg::semi_orthogonal(&mut rng, 8, 16);
        let o = newton_schulz_orthogonalize(&from(8, 16, q), 5).unwrap();
        let top = linalg::spectral_norm(&o.value.to_f64_vec(), 8, 16, 100);
        assert!((top - 1.0).abs() < 0.3, "{top}");
    }

    #[test]
    fn rejects_non_matrices() {
        let v = Tensor::<f64>::zeros(&[4]);
        assert!(newton_schulz_orthogonalize(&v, 5).is_err());
    }

    #[test]
    fn tall_matches_transposed_wide() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..6 * 3)
            .map(|_| rand::Rng::sample(&mut rng, rand_distr::StandardNormal))
            .collect();
        let tall = from(6, 3, data);
        let wide = tall.transpose().unwrap();
        let a = newton_schulz_orthogonalize(&tall, 5).unwrap().value;
        let b = newton_schulz_orthogonalize(&wide, 5).unwrap().value.transpose().unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_steps_is_frobenius_normalization() {
        let m = from(2, 2, vec![3.0, 0.0, 0.0, 4.0]);
        let o = newton_schulz_orthogonalize(&m, 0).unwrap();
        for (a, b) in o.value.data().iter().zip([0.6, 0.0, 0.0, 0.8]) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
