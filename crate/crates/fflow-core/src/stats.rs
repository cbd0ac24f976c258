//! Deterministic dense-matrix statistics: sample moments, PCA-based
//! pseudoinverse, symmetric finite differences.
//!
//! The numeric kernels are generic over [`Scalar`]; the domain types wrap
//! the `f64` aliases from the crate root. All operations are pure functions
//! of their inputs and safe for concurrent invocation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::{Matrix, Vector};

/// Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
const SYMMETRY_TOL: f64 = 1e-9;

/// N×d matrix of observations (rows are samples).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    data: Matrix,
}

impl SampleMatrix {
    /// Validate invariants: at least 2 rows, at least 1 column, finite entries.
    pub fn new(data: Matrix) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(Error::DegenerateSample {
                got: data.nrows(),
                need: 2,
            });
        }
        if data.ncols() < 1 {
            return Err(Error::InvalidParameter {
                name: "d",
                value: 0.0,
                expected: ">= 1",
            });
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::DegenerateInput(
                "sample matrix contains non-finite entries".into(),
            ));
        }
        Ok(Self { data })
    }

    /// Number of observations.
    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    /// Dimension of a single observation.
    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn into_inner(self) -> Matrix {
        self.data
    }
}

/// Sample mean and unbiased sample covariance.
#[derive(Debug, Clone)]
pub struct MomentPair {
    pub mean: Vector,
    pub cov: Matrix,
}

/// Mean and unbiased (n−1) covariance of `data`, generic over the scalar.
///
/// The covariance is computed from the centered data and symmetrized as
/// (M + Mᵀ)/2 so that the eigendecomposition downstream never sees
/// round-off asymmetry.
pub fn moments<T: Scalar>(data: &DMatrix<T>) -> Result<(DVector<T>, DMatrix<T>)> {
    let n = data.nrows();
    if n < 2 {
        return Err(Error::DegenerateSample { got: n, need: 2 });
    }
    let inv_n = T::one() / T::from_count(n);
    let mean: DVector<T> = DVector::from_fn(data.ncols(), |j, _| {
        let mut acc = T::zero();
        for i in 0..n {
            acc += data[(i, j)];
        }
        acc * inv_n
    });
    let mut centered = data.clone();
    for j in 0..centered.ncols() {
        let mj = mean[j];
        for i in 0..n {
            centered[(i, j)] -= mj;
        }
    }
    let denom = T::one() / T::from_count(n - 1);
    let mut cov = centered.tr_mul(&centered) * denom;
    symmetrize(&mut cov);
    Ok((mean, cov))
}

/// In-place (M + Mᵀ)/2.
pub fn symmetrize<T: Scalar>(m: &mut DMatrix<T>) {
    let half = T::from_f64(0.5).unwrap();
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let s = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

/// Sample mean and unbiased sample covariance of a validated sample.
pub fn sample_moments(s: &SampleMatrix) -> MomentPair {
    let (mean, cov) = moments(s.data()).expect("SampleMatrix guarantees n >= 2");
    MomentPair { mean, cov }
}

/// Moore-Penrose-style pseudoinverse through a principal component analysis.
///
/// Eigenvalues λᵢ ≥ rel_tol·λ_max are inverted, the rest are zeroed. An
/// all-zero (or negative-semidefinite) input yields the zero matrix, which
/// signals a zero-information subspace rather than an error.
pub fn pca_pseudoinverse<T: Scalar>(m: &DMatrix<T>, rel_tol: T) -> Result<DMatrix<T>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            context: "pca_pseudoinverse",
            left: m.nrows(),
            right: m.ncols(),
        });
    }
    if !(rel_tol > T::zero() && rel_tol < T::one()) {
        return Err(Error::InvalidParameter {
            name: "rel_tol",
            value: rel_tol.to_f64().unwrap_or(f64::NAN),
            expected: "in (0, 1)",
        });
    }
    let scale = m.iter().fold(T::zero(), |a, &x| a.max(x.abs()));
    if scale == T::zero() {
        return Ok(DMatrix::zeros(m.nrows(), m.ncols()));
    }
    let max_asym = (0..m.nrows())
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .fold(T::zero(), |a, (i, j)| a.max((m[(i, j)] - m[(j, i)]).abs()));
    if max_asym / scale > T::from_f64(SYMMETRY_TOL).unwrap() {
        return Err(Error::NotSymmetric {
            max_asym: (max_asym / scale).to_f64().unwrap_or(f64::NAN),
        });
    }

    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().fold(T::zero(), |a, &l| a.max(l));
    if lambda_max <= T::zero() {
        return Ok(DMatrix::zeros(m.nrows(), m.ncols()));
    }
    let cutoff = rel_tol * lambda_max;
    let inv = DVector::from_fn(eig.eigenvalues.len(), |i, _| {
        let l = eig.eigenvalues[i];
        if l >= cutoff {
            T::one() / l
        } else {
            T::zero()
        }
    });
    let scaled = &eig.eigenvectors * DMatrix::from_diagonal(&inv);
    let mut pinv = scaled * eig.eigenvectors.transpose();
    symmetrize(&mut pinv);
    Ok(pinv)
}

/// Symmetric finite difference (plus − minus) / (2·delta).
///
/// `delta_theta` is the offset of each input from the center point, so the
/// divisor is the full spacing between the two evaluation points.
pub fn central_difference<T: Scalar>(
    mean_plus: &DVector<T>,
    mean_minus: &DVector<T>,
    delta_theta: T,
) -> Result<DVector<T>> {
    if delta_theta <= T::zero() {
        return Err(Error::InvalidStep(delta_theta.to_f64().unwrap_or(f64::NAN)));
    }
    if mean_plus.len() != mean_minus.len() {
        return Err(Error::DimensionMismatch {
            context: "central_difference",
            left: mean_plus.len(),
            right: mean_minus.len(),
        });
    }
    let scale = T::one() / (T::from_f64(2.0).unwrap() * delta_theta);
    Ok((mean_plus - mean_minus) * scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Real;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn naive_moments(data: &Matrix) -> (Vector, Matrix) {
        let n = data.nrows();
        let d = data.ncols();
        let mut mean = Vector::zeros(d);
        for i in 0..n {
            mean += data.row(i).transpose();
        }
        mean /= n as Real;
        let mut cov = Matrix::zeros(d, d);
        for i in 0..n {
            let c = data.row(i).transpose() - &mean;
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as Real;
        (mean, cov)
    }

    #[test]
    fn two_point_sample() {
        let s = SampleMatrix::new(Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let m = sample_moments(&s);
        assert_eq!(m.mean, Vector::from_vec(vec![2.0, 3.0]));
        assert_eq!(m.cov, Matrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 2.0]));
    }

    #[test]
    fn constant_sample_has_zero_cov() {
        let s =
            SampleMatrix::new(Matrix::from_row_slice(3, 2, &[5.0, -1.0, 5.0, -1.0, 5.0, -1.0]))
                .unwrap();
        let m = sample_moments(&s);
        assert_eq!(m.cov, Matrix::zeros(2, 2));
    }

    #[test]
    fn single_row_is_degenerate() {
        let err = SampleMatrix::new(Matrix::from_row_slice(1, 2, &[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::DegenerateSample { got: 1, need: 2 }));
    }

    #[test]
    fn standard_normal_cov_near_identity() {
        let mut rng = crate::seed::rng(7, "stats-mc", 0);
        let n = 100_000;
        let d = 4;
        let data = Matrix::from_fn(n, d, |_, _| rng.sample::<Real, _>(StandardNormal));
        let m = sample_moments(&SampleMatrix::new(data).unwrap());
        for i in 0..d {
            for j in 0..d {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (m.cov[(i, j)] - expect).abs() < 0.05,
                    "cov[{i},{j}] = {}",
                    m.cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn pinv_identity() {
        let p = pca_pseudoinverse(&Matrix::identity(3, 3), 1e-10).unwrap();
        assert_relative_eq!(p, Matrix::identity(3, 3), epsilon = 1e-12);
    }

    #[test]
    fn pinv_rank_deficient_diagonal() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 0.0]));
        let p = pca_pseudoinverse(&m, 1e-10).unwrap();
        let expect = Matrix::from_diagonal(&Vector::from_vec(vec![0.5, 0.0]));
        assert_relative_eq!(p, expect, epsilon = 1e-12);
    }

    #[test]
    fn pinv_zero_matrix_is_zero_not_error() {
        let p = pca_pseudoinverse(&Matrix::zeros(4, 4), 1e-10).unwrap();
        assert_eq!(p, Matrix::zeros(4, 4));
    }

    #[test]
    fn pinv_rejects_asymmetric() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            pca_pseudoinverse(&m, 1e-10),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn pinv_satisfies_projection_identity() {
        // Random PSD matrix from AᵀA, d = 5.
        let mut rng = crate::seed::rng(11, "stats-pinv", 0);
        let a = Matrix::from_fn(5, 5, |_, _| rng.sample::<Real, _>(StandardNormal));
        let m = a.tr_mul(&a);
        let p = pca_pseudoinverse(&m, 1e-10).unwrap();
        let mpm = &m * &p * &m;
        assert_relative_eq!(mpm, m, epsilon = 1e-8 * m.amax());
    }

    #[test]
    fn pinv_matches_linear_solve_on_invertible() {
        let mut rng = crate::seed::rng(13, "stats-pinv", 1);
        let a = Matrix::from_fn(6, 6, |_, _| rng.sample::<Real, _>(StandardNormal));
        let m = a.tr_mul(&a) + Matrix::identity(6, 6); // well conditioned
        let p = pca_pseudoinverse(&m, 1e-10).unwrap();
        let b = Vector::from_fn(6, |i, _| (i as Real) - 2.5);
        let x_pinv = &p * &b;
        let x_solve = m.clone().lu().solve(&b).unwrap();
        assert_relative_eq!(x_pinv, x_solve, epsilon = 1e-8);
    }

    #[test]
    fn central_difference_examples() {
        let p = Vector::from_vec(vec![1.1]);
        let m = Vector::from_vec(vec![0.9]);
        let g = central_difference(&p, &m, 0.1).unwrap();
        assert_relative_eq!(g[0], 1.0, epsilon = 1e-14);

        let same = Vector::from_vec(vec![2.0, 3.0]);
        let g = central_difference(&same, &same, 0.5).unwrap();
        assert_eq!(g, Vector::zeros(2));
    }

    #[test]
    fn central_difference_exact_for_quadratic_mean() {
        // μ(θ) = θ²·1 at θ = 1: odd-order truncation terms cancel, so the
        // central difference equals the analytic derivative 2θ = 2 exactly.
        let d = 3;
        let mu = |theta: Real| Vector::from_element(d, theta * theta);
        let g = central_difference(&mu(1.1), &mu(0.9), 0.1).unwrap();
        for i in 0..d {
            assert_relative_eq!(g[i], 2.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn central_difference_rejects_bad_step() {
        let v = Vector::zeros(2);
        assert!(matches!(
            central_difference(&v, &v, 0.0),
            Err(Error::InvalidStep(_))
        ));
    }

    proptest! {
        #[test]
        fn moments_agree_with_naive_reference(rows in 2usize..40, cols in 1usize..6, seed in 0u64..1000) {
            let mut rng = crate::seed::rng(seed, "stats-prop", 0);
            let data = Matrix::from_fn(rows, cols, |_, _| rng.sample::<Real, _>(StandardNormal));
            let m = sample_moments(&SampleMatrix::new(data.clone()).unwrap());
            let (mean_ref, cov_ref) = naive_moments(&data);
            prop_assert!((&m.mean - &mean_ref).amax() <= 1e-12 * (1.0 + mean_ref.amax()));
            prop_assert!((&m.cov - &cov_ref).amax() <= 1e-12 * (1.0 + cov_ref.amax()));
        }

        #[test]
        fn central_difference_antisymmetric_and_affine_exact(
            len in 1usize..6,
            slope in -3.0f64..3.0,
            intercept in -2.0f64..2.0,
            theta in -1.0f64..1.0,
            delta in 1e-3f64..0.5,
        ) {
            let mu = |t: Real| Vector::from_fn(len, |i, _| intercept + slope * t * (i as Real + 1.0));
            let plus = mu(theta + delta);
            let minus = mu(theta - delta);
            let g = central_difference(&plus, &minus, delta).unwrap();
            let g_swapped = central_difference(&minus, &plus, delta).unwrap();
            prop_assert!((&g + &g_swapped).amax() <= 1e-12);
            for i in 0..len {
                let analytic = slope * (i as Real + 1.0);
                prop_assert!((g[i] - analytic).abs() <= 1e-9 * (1.0 + analytic.abs()));
            }
        }
    }
}
