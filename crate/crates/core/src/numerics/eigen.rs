//! Real eigendecompositions.
//!
//! Symmetric input goes through cyclic Jacobi rotations. Nonsymmetric input
//! is handled by a Hessenberg QR iteration for the eigenvalues followed by a
//! null-space solve per eigenvalue; anything with a complex or defective
//! spectrum is rejected.

use serde::{Deserialize, Serialize};

use super::DenseMatrix;
use crate::error::{DgodeError, Result};

/// Symmetry tolerance accepted by [`sym_eig`], relative to the largest entry.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Relative reconstruction error above which a spectrum is declared unusable.
pub const DIAGONALIZABLE_TOL: f64 = 1e-6;

const JACOBI_MAX_SWEEPS: usize = 100;

/// `source = vectors · diag(values) · inverse`, values ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenSystem {
    pub vectors: DenseMatrix,
    pub values: Vec<f64>,
    pub inverse: DenseMatrix,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `vectors · diag(f(values)) · inverse`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let scaled = scale_columns(&self.vectors, &self.values.iter().map(|&v| f(v)).collect::<Vec<_>>());
        scaled.dot(&self.inverse)
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        self.map(|v| v)
    }

    /// Change of basis into the eigenbasis: `inverse · m`.
    pub fn to_basis_left(&self, m: &DenseMatrix) -> DenseMatrix {
        self.inverse.dot(m)
    }

    /// Relative Frobenius reconstruction error against `source`.
    pub fn reconstruction_error(&self, source: &DenseMatrix) -> f64 {
        self.reconstruct().relative_error(source)
    }
}

/// Multiplies column `j` of `m` by `scale[j]`.
pub(crate) fn scale_columns(m: &DenseMatrix, scale: &[f64]) -> DenseMatrix {
    DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)] * scale[j])
}

fn check_square(m: &DenseMatrix) -> Result<()> {
    if !m.is_square() {
        return Err(DgodeError::Shape(format!("expected square matrix, got {}x{}", m.rows(), m.cols())));
    }
    Ok(())
}

fn is_symmetric(m: &DenseMatrix) -> bool {
    m.asymmetry() <= SYMMETRY_TOL * m.max_abs().max(1.0)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// The returned basis is orthonormal, so `inverse` is the transpose of
/// `vectors`.
pub fn sym_eig(m: &DenseMatrix) -> Result<EigenSystem> {
    check_square(m)?;
    if !is_symmetric(m) {
        return Err(DgodeError::NotSymmetric(m.asymmetry()));
    }
    let n = m.rows();
    let mut a = m.symmetrized();
    let mut v = DenseMatrix::identity(n);
    let scale = a.frobenius_norm();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= f64::EPSILON * scale * 1e-2 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[(p, p)], a[(q, q)]);
                // Rotation is a no-op in floating point.
                if apq.abs() < f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()) {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    let inverse = vectors.transpose();
    Ok(EigenSystem { vectors, values, inverse })
}

/// Eigendecomposition of a real-diagonalizable matrix with real spectrum.
///
/// Symmetric input is delegated to [`sym_eig`].
pub fn general_eig(m: &DenseMatrix) -> Result<EigenSystem> {
    check_square(m)?;
    if is_symmetric(m) {
        return sym_eig(m);
    }
    let n = m.rows();
    let mut values = hessenberg_qr_eigenvalues(m)?;
    values.sort_by(f64::total_cmp);

    let scale = m.max_abs().max(1.0);
    let cluster_tol = 1e-8 * scale;
    let mut vectors = DenseMatrix::zeros(n, n);
    let mut col = 0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[end] - values[start] <= cluster_tol {
            end += 1;
        }
        let multiplicity = end - start;
        let lambda = values[start..end].iter().sum::<f64>() / multiplicity as f64;
        let shifted = DenseMatrix::from_fn(n, n, |i, j| m[(i, j)] - if i == j { lambda } else { 0.0 });
        let basis = null_space(&shifted, 1e-7 * scale);
        if basis.len() < multiplicity {
            return Err(DgodeError::NotDiagonalizable(format!(
                "eigenvalue {lambda:.6} has algebraic multiplicity {multiplicity} but geometric multiplicity {}",
                basis.len()
            )));
        }
        for (k, vec) in basis.into_iter().take(multiplicity).enumerate() {
            for i in 0..n {
                vectors[(i, col)] = vec[i];
            }
            values[start + k] = lambda;
            col += 1;
        }
        start = end;
    }

    let inverse = invert(&vectors)
        .ok_or_else(|| DgodeError::NotDiagonalizable("eigenvector matrix is singular".into()))?;
    let eig = EigenSystem { vectors, values, inverse };
    let err = eig.reconstruction_error(m);
    if !(err <= DIAGONALIZABLE_TOL) {
        return Err(DgodeError::NotDiagonalizable(format!("reconstruction error {err:.3e}")));
    }
    Ok(eig)
}

/// Eigenvalues of a general real matrix via Householder reduction to upper
/// Hessenberg form and Wilkinson-shifted QR sweeps with Givens rotations.
fn hessenberg_qr_eigenvalues(m: &DenseMatrix) -> Result<Vec<f64>> {
    let n = m.rows();
    let mut h = m.clone();
    // Householder reduction.
    for k in 0..n.saturating_sub(2) {
        let x: Vec<f64> = ((k + 1)..n).map(|i| h[(i, k)]).collect();
        let alpha = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if alpha == 0.0 {
            continue;
        }
        let mut v = x.clone();
        v[0] += if x[0] >= 0.0 { alpha } else { -alpha };
        let vnorm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|t| *t /= vnorm);
        // H ← (I − 2vvᵀ) H (I − 2vvᵀ) on the trailing block.
        for j in 0..n {
            let dot: f64 = (0..v.len()).map(|i| v[i] * h[(k + 1 + i, j)]).sum();
            for i in 0..v.len() {
                h[(k + 1 + i, j)] -= 2.0 * v[i] * dot;
            }
        }
        for i in 0..n {
            let dot: f64 = (0..v.len()).map(|j| h[(i, k + 1 + j)] * v[j]).sum();
            for j in 0..v.len() {
                h[(i, k + 1 + j)] -= 2.0 * dot * v[j];
            }
        }
    }

    let mut eigenvalues = Vec::with_capacity(n);
    let mut hi = n;
    let mut iterations = 0usize;
    let max_iterations = 500 * n.max(1);
    let complex_err = || DgodeError::NotDiagonalizable("complex eigenvalue pair".into());
    while hi > 0 {
        if hi == 1 {
            eigenvalues.push(h[(0, 0)]);
            break;
        }
        let small = |h: &DenseMatrix, i: usize| {
            h[(i, i - 1)].abs() <= f64::EPSILON * (h[(i, i)].abs() + h[(i - 1, i - 1)].abs()).max(f64::MIN_POSITIVE)
        };
        if small(&h, hi - 1) {
            eigenvalues.push(h[(hi - 1, hi - 1)]);
            hi -= 1;
            iterations = 0;
            continue;
        }
        if hi == 2 || small(&h, hi - 2) {
            let (a, b, c, d) = (h[(hi - 2, hi - 2)], h[(hi - 2, hi - 1)], h[(hi - 1, hi - 2)], h[(hi - 1, hi - 1)]);
            let half_tr = 0.5 * (a + d);
            let disc = 0.25 * (a - d) * (a - d) + b * c;
            if disc < 0.0 {
                return Err(complex_err());
            }
            let root = disc.sqrt();
            eigenvalues.push(half_tr + root);
            eigenvalues.push(half_tr - root);
            hi -= 2;
            iterations = 0;
            continue;
        }
        iterations += 1;
        if iterations > max_iterations {
            return Err(DgodeError::NotDiagonalizable("QR iteration did not converge".into()));
        }
        // Wilkinson shift from the trailing 2x2 block.
        let (a, b, c, d) = (h[(hi - 2, hi - 2)], h[(hi - 2, hi - 1)], h[(hi - 1, hi - 2)], h[(hi - 1, hi - 1)]);
        let half_diff = 0.5 * (a - d);
        let disc = half_diff * half_diff + b * c;
        let mut shift = if disc >= 0.0 {
            let root = disc.sqrt();
            let (r1, r2) = (0.5 * (a + d) + root, 0.5 * (a + d) - root);
            if (r1 - d).abs() < (r2 - d).abs() {
                r1
            } else {
                r2
            }
        } else {
            d
        };
        if iterations % 11 == 0 {
            // exceptional shift
            shift += h[(hi - 1, hi - 2)].abs();
        }
        qr_sweep(&mut h, hi, shift);
    }
    Ok(eigenvalues)
}

/// One shifted QR step `H − μI = QR, H ← RQ + μI` on the leading `hi` block.
fn qr_sweep(h: &mut DenseMatrix, hi: usize, shift: f64) {
    let n = h.cols();
    for i in 0..hi {
        h[(i, i)] -= shift;
    }
    let mut rotations = Vec::with_capacity(hi - 1);
    for k in 0..hi - 1 {
        let (x, y) = (h[(k, k)], h[(k + 1, k)]);
        let r = x.hypot(y);
        let (c, s) = if r == 0.0 { (1.0, 0.0) } else { (x / r, y / r) };
        for j in k..n {
            let (a, b) = (h[(k, j)], h[(k + 1, j)]);
            h[(k, j)] = c * a + s * b;
            h[(k + 1, j)] = -s * a + c * b;
        }
        rotations.push((c, s));
    }
    for (k, &(c, s)) in rotations.iter().enumerate() {
        for i in 0..(k + 2).min(hi) {
            let (a, b) = (h[(i, k)], h[(i, k + 1)]);
            h[(i, k)] = c * a + s * b;
            h[(i, k + 1)] = -s * a + c * b;
        }
    }
    for i in 0..hi {
        h[(i, i)] += shift;
    }
}

/// Orthonormal-ish basis of the numerical null space via Gaussian elimination
/// with complete pivoting.
fn null_space(m: &DenseMatrix, tol: f64) -> Vec<Vec<f64>> {
    let n = m.rows();
    let mut a = m.clone();
    let mut col_perm: Vec<usize> = (0..n).collect();
    let mut rank = 0;
    for k in 0..n {
        let mut best = (k, k, 0.0f64);
        for i in k..n {
            for j in k..n {
                let v = a[(i, j)].abs();
                if v > best.2 {
                    best = (i, j, v);
                }
            }
        }
        if best.2 <= tol {
            break;
        }
        let (pi, pj, _) = best;
        for j in 0..n {
            let tmp = a[(k, j)];
            a[(k, j)] = a[(pi, j)];
            a[(pi, j)] = tmp;
        }
        for i in 0..n {
            let tmp = a[(i, k)];
            a[(i, k)] = a[(i, pj)];
            a[(i, pj)] = tmp;
        }
        col_perm.swap(k, pj);
        let pivot = a[(k, k)];
        for j in k..n {
            a[(k, j)] /= pivot;
        }
        for i in 0..n {
            if i != k {
                let f = a[(i, k)];
                if f != 0.0 {
                    for j in k..n {
                        a[(i, j)] -= f * a[(k, j)];
                    }
                }
            }
        }
        rank += 1;
    }
    let mut basis = Vec::new();
    for free in rank..n {
        let mut x = vec![0.0; n];
        x[col_perm[free]] = 1.0;
        for r in 0..rank {
            x[col_perm[r]] = -a[(r, free)];
        }
        // Gram-Schmidt against earlier vectors of the same eigenspace.
        for prev in &basis {
            let prev: &Vec<f64> = prev;
            let d: f64 = x.iter().zip(prev).map(|(a, b)| a * b).sum();
            x.iter_mut().zip(prev).for_each(|(a, b)| *a -= d * b);
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            x.iter_mut().for_each(|v| *v /= norm);
            basis.push(x);
        }
    }
    basis
}

/// Gauss-Jordan inverse with partial pivoting; `None` when singular.
pub fn invert(m: &DenseMatrix) -> Option<DenseMatrix> {
    let n = m.rows();
    let mut a = m.clone();
    let mut inv = DenseMatrix::identity(n);
    let scale = m.max_abs();
    for k in 0..n {
        let pivot_row = (k..n).max_by(|&i, &j| a[(i, k)].abs().total_cmp(&a[(j, k)].abs()))?;
        if a[(pivot_row, k)].abs() <= 1e-13 * scale {
            return None;
        }
        if pivot_row != k {
            for j in 0..n {
                let t = a[(k, j)];
                a[(k, j)] = a[(pivot_row, j)];
                a[(pivot_row, j)] = t;
                let t = inv[(k, j)];
                inv[(k, j)] = inv[(pivot_row, j)];
                inv[(pivot_row, j)] = t;
            }
        }
        let p = a[(k, k)];
        for j in 0..n {
            a[(k, j)] /= p;
            inv[(k, j)] /= p;
        }
        for i in 0..n {
            if i == k {
                continue;
            }
            let f = a[(i, k)];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                a[(i, j)] -= f * a[(k, j)];
                inv[(i, j)] -= f * inv[(k, j)];
            }
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        (&m + &m.transpose()).scale(0.5)
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let eig = sym_eig(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(eig.values, vec![1.0, 1.0, 1.0]);
        let gram = eig.vectors.t_dot(&eig.vectors);
        assert!(gram.relative_error(&DenseMatrix::identity(3)) < 1e-15);
    }

    #[test]
    fn swap_matrix_spectrum() {
        let m = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let eig = sym_eig(&m).unwrap();
        assert!((eig.values[0] + 1.0).abs() < 1e-14);
        assert!((eig.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn random_symmetric_reconstructs() {
        for (n, seed) in [(5, 1), (12, 2), (33, 3), (64, 4)] {
            let m = random_symmetric(n, seed);
            let eig = sym_eig(&m).unwrap();
            assert!(eig.reconstruction_error(&m) < 1e-9, "n={n}");
            let gram = eig.vectors.dot(&eig.inverse);
            assert!(gram.relative_error(&DenseMatrix::identity(n)) < 1e-9);
            assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn sym_eig_rejects_bad_input() {
        let rect = DenseMatrix::zeros(2, 3);
        assert!(matches!(sym_eig(&rect), Err(DgodeError::Shape(_))));
        let asym = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&asym), Err(DgodeError::NotSymmetric(_))));
    }

    #[test]
    fn general_eig_diagonal() {
        let eig = general_eig(&DenseMatrix::from_diag(&[2.0, 3.0])).unwrap();
        assert_eq!(eig.values, vec![2.0, 3.0]);
    }

    #[test]
    fn general_eig_gram_plus_identity_bounded_below() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = DenseMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let spd = &m.t_dot(&m) + &DenseMatrix::identity(4);
        let eig = general_eig(&spd).unwrap();
        assert!(eig.values.iter().all(|&v| v >= 1.0 - 1e-12));
        assert!(eig.reconstruction_error(&spd) < 1e-9);
    }

    #[test]
    fn general_eig_rejects_rotation() {
        let rot = DenseMatrix::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(general_eig(&rot), Err(DgodeError::NotDiagonalizable(_))));
    }

    #[test]
    fn general_eig_nonsymmetric_real_spectrum() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 1.0, 0.5], vec![0.0, 2.0, -1.0], vec![0.0, 0.0, 4.0]]).unwrap();
        let eig = general_eig(&m).unwrap();
        for (got, want) in eig.values.iter().zip([1.0, 2.0, 4.0]) {
            assert!((got - want).abs() < 1e-10);
        }
        assert!(eig.reconstruction_error(&m) < 1e-9);

        // Similarity transform of a diagonal matrix by a dense invertible basis.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let basis = &DenseMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0)) + &DenseMatrix::identity(5).scale(2.0);
        let inv = invert(&basis).unwrap();
        let d = DenseMatrix::from_diag(&[-1.5, 0.25, 0.5, 2.0, 3.0]);
        let m = basis.dot(&d).dot(&inv);
        let eig = general_eig(&m).unwrap();
        for (got, want) in eig.values.iter().zip([-1.5, 0.25, 0.5, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
        assert!(eig.reconstruction_error(&m) < 1e-9);
    }

    #[test]
    fn general_eig_rejects_defective() {
        let jordan = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(general_eig(&jordan), Err(DgodeError::NotDiagonalizable(_))));
    }

    #[test]
    fn repeated_eigenvalue_with_full_eigenspace() {
        let basis = DenseMatrix::from_rows(&[vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 2.0]]).unwrap();
        let inv = invert(&basis).unwrap();
        let m = basis.dot(&DenseMatrix::from_diag(&[2.0, 2.0, 5.0])).dot(&inv);
        let eig = general_eig(&m).unwrap();
        assert!(eig.reconstruction_error(&m) < 1e-9);
    }
}
