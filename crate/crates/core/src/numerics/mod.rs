//! Dense linear algebra: matrices, real eigendecompositions, and the
//! spectral matrix functions (integer power, exponential, clamped logarithm).

mod eigen;
mod matrix;

#[cfg(test)]
pub(crate) use eigen::scale_columns;
pub use eigen::{general_eig, invert, sym_eig, EigenSystem, DIAGONALIZABLE_TOL, SYMMETRY_TOL};
pub use matrix::DenseMatrix;

use crate::error::{DgodeError, Result};

/// Default lower clamp applied to eigenvalues before taking logarithms.
pub const DEFAULT_CLAMP_EPS: f64 = 1e-6;

/// `m^k` by binary exponentiation; `k = 0` gives the identity.
pub fn mat_pow_int(m: &DenseMatrix, k: u32) -> Result<DenseMatrix> {
    if !m.is_square() {
        return Err(DgodeError::Shape(format!("mat_pow_int needs a square matrix, got {}x{}", m.rows(), m.cols())));
    }
    let mut result = DenseMatrix::identity(m.rows());
    let mut base = m.clone();
    let mut k = k;
    while k > 0 {
        if k & 1 == 1 {
            result = result.dot(&base);
        }
        k >>= 1;
        if k > 0 {
            base = base.dot(&base);
        }
    }
    Ok(result)
}

/// `e^{m t}` through the eigendecomposition of `m`.
pub fn mat_exp(m: &DenseMatrix, t: f64) -> Result<DenseMatrix> {
    let eig = general_eig(m)?;
    Ok(eig.map(|v| (v * t).exp()))
}

/// Matrix logarithm with eigenvalues below `eps` raised to `eps` first.
pub fn mat_log_clamped(m: &DenseMatrix, eps: f64) -> Result<DenseMatrix> {
    if !(eps > 0.0) {
        return Err(DgodeError::Config(format!("clamp eps must be positive, got {eps}")));
    }
    let eig = general_eig(m)?;
    Ok(eig.map(|v| clamped_ln(v, eps)))
}

#[inline]
pub fn clamped_ln(v: f64, eps: f64) -> f64 {
    v.max(eps).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Symmetric matrix with prescribed spectrum and a random orthonormal basis.
    fn with_spectrum(values: &[f64], seed: u64) -> DenseMatrix {
        let n = values.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let basis = sym_eig(&(&g + &g.transpose())).unwrap().vectors;
        scale_columns(&basis, values).dot_t(&basis)
    }

    fn series_exp(m: &DenseMatrix, t: f64, terms: usize) -> DenseMatrix {
        let n = m.rows();
        let mt = m.scale(t);
        let mut term = DenseMatrix::identity(n);
        let mut sum = term.clone();
        for k in 1..=terms {
            term = term.dot(&mt).scale(1.0 / k as f64);
            sum += &term;
        }
        sum
    }

    #[test]
    fn pow_zero_and_scalar() {
        let m = DenseMatrix::from_fn(3, 3, |i, j| (i + j) as f64);
        assert_eq!(mat_pow_int(&m, 0).unwrap(), DenseMatrix::identity(3));
        let two = DenseMatrix::from_rows(&[vec![2.0]]).unwrap();
        assert_eq!(mat_pow_int(&two, 10).unwrap()[(0, 0)], 1024.0);
        assert!(mat_pow_int(&DenseMatrix::zeros(2, 3), 2).is_err());
    }

    #[test]
    fn pow_matches_eigen_route() {
        let m = with_spectrum(&[-0.9, 0.3, 0.7, 1.2], 5);
        let direct = mat_pow_int(&m, 5).unwrap();
        let eig = sym_eig(&m).unwrap().map(|v| v.powi(5));
        assert!(direct.relative_error(&eig) < 1e-8);
    }

    #[test]
    fn exp_special_cases() {
        assert_eq!(mat_exp(&DenseMatrix::zeros(3, 3), 7.5).unwrap(), DenseMatrix::identity(3));
        let e = mat_exp(&DenseMatrix::from_diag(&[1.0, 2.0]), 1.0).unwrap();
        assert!((e[(0, 0)] - 2.718281828459045).abs() < 1e-12);
        assert!((e[(1, 1)] - 7.38905609893065).abs() < 1e-12);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn exp_matches_power_series() {
        let m = with_spectrum(&[-1.3, -0.2, 0.4, 0.9], 11);
        let eig = mat_exp(&m, 0.5).unwrap();
        let series = series_exp(&m, 0.5, 30);
        assert!(eig.relative_error(&series) < 1e-9);
    }

    #[test]
    fn exp_rejects_rotation() {
        let rot = DenseMatrix::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        assert!(mat_exp(&rot, 1.0).is_err());
    }

    #[test]
    fn log_special_cases() {
        assert_eq!(mat_log_clamped(&DenseMatrix::identity(3), 1e-6).unwrap(), DenseMatrix::zeros(3, 3));
        let l = mat_log_clamped(&DenseMatrix::from_rows(&[vec![2.0]]).unwrap(), 1e-6).unwrap();
        assert!((l[(0, 0)] - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(mat_log_clamped(&DenseMatrix::identity(2), 0.0).is_err());
    }

    #[test]
    fn log_clamps_zero_eigenvalue() {
        let m = with_spectrum(&[0.0, 0.5, 1.0], 3);
        let log = mat_log_clamped(&m, 1e-6).unwrap();
        let spectrum = sym_eig(&log.symmetrized()).unwrap().values;
        assert!((spectrum[0] - (1e-6f64).ln()).abs() < 1e-8);
        assert!((spectrum[1] - 0.5f64.ln()).abs() < 1e-10);
        assert!(spectrum[2].abs() < 1e-10);
    }

    fn spectrum_strategy(lo: f64, hi: f64) -> impl Strategy<Value = (Vec<f64>, u64)> {
        (prop::collection::vec(lo..hi, 1..7), any::<u64>())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn exp_log_round_trip((values, seed) in spectrum_strategy(1e-6, 10.0)) {
            let m = with_spectrum(&values, seed);
            let back = mat_exp(&mat_log_clamped(&m, 1e-6).unwrap(), 1.0).unwrap();
            prop_assert!(back.relative_error(&m) < 1e-8);
        }

        #[test]
        fn exp_semigroup((values, seed) in spectrum_strategy(-2.0, 2.0), s in 0.0f64..2.0, t in 0.0f64..2.0) {
            let m = with_spectrum(&values, seed);
            let lhs = mat_exp(&m, s + t).unwrap();
            let rhs = mat_exp(&m, s).unwrap().dot(&mat_exp(&m, t).unwrap());
            prop_assert!(lhs.relative_error(&rhs) < 1e-8);
        }

        #[test]
        fn pow_equals_exp_of_log((values, seed) in spectrum_strategy(1e-3, 2.0), k in 0u32..8) {
            let m = with_spectrum(&values, seed);
            let lhs = mat_pow_int(&m, k).unwrap();
            let rhs = mat_exp(&mat_log_clamped(&m, 1e-6).unwrap(), k as f64).unwrap();
            prop_assert!(lhs.relative_error(&rhs) < 1e-7);
        }

        #[test]
        fn reconstruction_up_to_64((n, seed) in (1usize..65, any::<u64>())) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let m = &g + &g.transpose();
            let eig = sym_eig(&m).unwrap();
            prop_assert!(eig.reconstruction_error(&m) < 1e-9);
        }
    }
}
