//! Synthetic dataset generators and triplet construction.
//!
//! Three sample families are supported: a multivariate Gaussian whose mean
//! is proportional to the parameter (μ(θ) = θ·1, Σ = I), a zero-mean
//! Gaussian whose parameter is the standard deviation, and a correlated
//! log-normal family obtained by mixing the mean-task Gaussian with a fixed
//! random matrix and exponentiating componentwise. The log-normal transform
//! is bijective for an invertible mixing matrix, so the FI of the generated
//! data equals that of the underlying Gaussian.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lfi::TripletSample;
use crate::seed;
use crate::stats::SampleMatrix;
use crate::{Matrix, Real, Vector};

/// Per-θ blocks of samples on a sorted parameter grid.
#[derive(Debug, Clone)]
pub struct GridDataset {
    thetas: Vec<Real>,
    blocks: Vec<SampleMatrix>,
}

impl GridDataset {
    /// Validate: strictly increasing θ grid, equal dimension across blocks.
    pub fn new(thetas: Vec<Real>, blocks: Vec<SampleMatrix>) -> Result<Self> {
        if thetas.is_empty() || thetas.len() != blocks.len() {
            return Err(Error::DimensionMismatch {
                context: "grid thetas vs blocks",
                left: thetas.len(),
                right: blocks.len(),
            });
        }
        if !thetas.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter {
                name: "thetas",
                value: f64::NAN,
                expected: "strictly increasing",
            });
        }
        let d = blocks[0].d();
        if let Some(b) = blocks.iter().find(|b| b.d() != d) {
            return Err(Error::DimensionMismatch {
                context: "grid block dimensions",
                left: d,
                right: b.d(),
            });
        }
        Ok(Self { thetas, blocks })
    }

    pub fn thetas(&self) -> &[Real] {
        &self.thetas
    }

    pub fn blocks(&self) -> &[SampleMatrix] {
        &self.blocks
    }

    pub fn d(&self) -> usize {
        self.blocks[0].d()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn total_samples(&self) -> usize {
        self.blocks.iter().map(|b| b.n_samples()).sum()
    }

    /// Stratified train/validation split: within every per-θ block the row
    /// order is shuffled by a seeded permutation and the last `val_fraction`
    /// of rows becomes validation data.
    pub fn split(&self, val_fraction: Real, seed: u64) -> Result<(LabeledData, LabeledData)> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::InvalidParameter {
                name: "val_fraction",
                value: val_fraction,
                expected: "in [0, 1)",
            });
        }
        let d = self.d();
        let mut train_rows: Vec<(usize, usize)> = Vec::new(); // (block, row)
        let mut val_rows: Vec<(usize, usize)> = Vec::new();
        for (bi, block) in self.blocks.iter().enumerate() {
            let n = block.n_samples();
            let mut idx: Vec<usize> = (0..n).collect();
            let mut rng = seed::rng(seed, "split", bi as u64);
            // Fisher-Yates
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                idx.swap(i, j);
            }
            let n_val = ((n as Real) * val_fraction).floor() as usize;
            let n_train = n - n_val;
            for &r in &idx[..n_train] {
                train_rows.push((bi, r));
            }
            for &r in &idx[n_train..] {
                val_rows.push((bi, r));
            }
        }
        let gather = |rows: &[(usize, usize)]| -> LabeledData {
            let mut x = Matrix::zeros(rows.len(), d);
            let mut y = Vector::zeros(rows.len());
            for (out, &(bi, r)) in rows.iter().enumerate() {
                x.row_mut(out).copy_from(&self.blocks[bi].data().row(r));
                y[out] = self.thetas[bi];
            }
            LabeledData { x, y }
        };
        let train = gather(&train_rows);
        let val = gather(&val_rows);
        if train.x.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok((train, val))
    }
}

/// Flat (x, θ) pairs for supervised training.
#[derive(Debug, Clone)]
pub struct LabeledData {
    pub x: Matrix,
    pub y: Vector,
}

impl LabeledData {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn gaussian_matrix(n: usize, d: usize, rng: &mut impl Rng) -> Matrix {
    let entries: Vec<Real> = (0..n * d)
        .map(|_| rng.sample::<Real, _>(StandardNormal))
        .collect();
    Matrix::from_vec(n, d, entries)
}

/// Per-θ blocks of n i.i.d. draws from N(θ·1, I_d).
pub fn gen_gaussian_mean(
    grid: &[Real],
    n_per_theta: usize,
    d: usize,
    seed: u64,
) -> Result<GridDataset> {
    if d < 1 {
        return Err(Error::InvalidParameter {
            name: "d",
            value: d as f64,
            expected: ">= 1",
        });
    }
    let blocks: Vec<SampleMatrix> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &theta)| {
            let mut rng = seed::rng(seed, "block", i as u64);
            let mut m = gaussian_matrix(n_per_theta, d, &mut rng);
            m.add_scalar_mut(theta);
            SampleMatrix::new(m)
        })
        .collect::<Result<_>>()?;
    GridDataset::new(grid.to_vec(), blocks)
}

/// n i.i.d. draws from N(0, σ²·I_d).
pub fn gen_gaussian_std(n: usize, d: usize, sigma: Real, seed: u64) -> Result<SampleMatrix> {
    if sigma <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "sigma",
            value: sigma,
            expected: "> 0",
        });
    }
    let mut rng = seed::rng(seed, "std-block", 0);
    SampleMatrix::new(gaussian_matrix(n, d, &mut rng) * sigma)
}

/// Draw the fixed d×d mixing matrix with i.i.d. N(0, mix_std²) entries.
pub fn mixing_matrix(d: usize, mix_std: Real, matrix_seed: u64) -> Matrix {
    let mut rng = seed::rng(matrix_seed, "mixing", 0);
    gaussian_matrix(d, d, &mut rng) * mix_std
}

/// Correlated log-normal dataset with an explicitly supplied mixing matrix:
/// Gaussian mean-task blocks are multiplied by `m` and exponentiated
/// componentwise. The same `m` must be reused across splits and triplets.
pub fn gen_lognormal_with_matrix(
    grid: &[Real],
    n_per_theta: usize,
    d: usize,
    m: &Matrix,
    seed: u64,
) -> Result<GridDataset> {
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::DimensionMismatch {
            context: "mixing matrix shape",
            left: m.nrows(),
            right: d,
        });
    }
    let gaussian = gen_gaussian_mean(grid, n_per_theta, d, seed)?;
    let m_t = m.transpose();
    let blocks: Vec<SampleMatrix> = gaussian
        .blocks()
        .par_iter()
        .map(|b| {
            let mut out = b.data() * &m_t;
            for v in out.iter_mut() {
                *v = v.exp();
            }
            SampleMatrix::new(out)
        })
        .collect::<Result<_>>()?;
    GridDataset::new(grid.to_vec(), blocks)
}

/// Correlated log-normal dataset; the mixing matrix is derived from `seed`
/// alone (purpose-tagged), returned alongside the data so it can be
/// persisted with the dataset.
pub fn gen_lognormal(
    grid: &[Real],
    n_per_theta: usize,
    d: usize,
    mix_std: Real,
    seed: u64,
) -> Result<(GridDataset, Matrix)> {
    let m = mixing_matrix(d, mix_std, seed);
    let data = gen_lognormal_with_matrix(grid, n_per_theta, d, &m, seed)?;
    Ok((data, m))
}

/// Which family a triplet is drawn from.
#[derive(Debug, Clone)]
pub enum TripletGenerator {
    /// μ(θ) = θ·1, Σ = I; analytic FI = d.
    GaussianMean { d: usize },
    /// N(0, θ²·I); parameter is the standard deviation; analytic FI = 2d/θ².
    GaussianStd { d: usize },
    /// Mixed, exponentiated mean task; FI equals the underlying Gaussian's.
    LogNormal {
        d: usize,
        mix_std: Real,
        matrix_seed: u64,
    },
}

impl TripletGenerator {
    pub fn d(&self) -> usize {
        match *self {
            TripletGenerator::GaussianMean { d } => d,
            TripletGenerator::GaussianStd { d } => d,
            TripletGenerator::LogNormal { d, .. } => d,
        }
    }

    /// Analytic FI of the family at θ, where known.
    pub fn analytic_fi(&self, theta: Real) -> Option<Real> {
        match *self {
            TripletGenerator::GaussianMean { d } => Some(d as Real),
            TripletGenerator::GaussianStd { d } => Some(2.0 * d as Real / (theta * theta)),
            TripletGenerator::LogNormal { d, .. } => Some(d as Real),
        }
    }

    fn block(&self, theta: Real, n: usize, seed: u64) -> Result<SampleMatrix> {
        match *self {
            TripletGenerator::GaussianMean { d } => {
                let mut rng = seed::rng(seed, "triplet-block", 0);
                let mut m = gaussian_matrix(n, d, &mut rng);
                m.add_scalar_mut(theta);
                SampleMatrix::new(m)
            }
            TripletGenerator::GaussianStd { d } => {
                if theta <= 0.0 {
                    return Err(Error::InvalidParameter {
                        name: "sigma",
                        value: theta,
                        expected: "> 0",
                    });
                }
                let mut rng = seed::rng(seed, "triplet-block", 0);
                SampleMatrix::new(gaussian_matrix(n, d, &mut rng) * theta)
            }
            TripletGenerator::LogNormal {
                d,
                mix_std,
                matrix_seed,
            } => {
                let m = mixing_matrix(d, mix_std, matrix_seed);
                let mut rng = seed::rng(seed, "triplet-block", 0);
                let mut x = gaussian_matrix(n, d, &mut rng);
                x.add_scalar_mut(theta);
                let mut out = x * m.transpose();
                for v in out.iter_mut() {
                    *v = v.exp();
                }
                SampleMatrix::new(out)
            }
        }
    }
}

/// Three blocks at θ−Δθ, θ, θ+Δθ with n points each. The three offsets use
/// independent derived seed streams.
pub fn make_triplet(
    generator: &TripletGenerator,
    theta: Real,
    delta_theta: Real,
    n: usize,
    seed: u64,
) -> Result<TripletSample> {
    if delta_theta <= 0.0 {
        return Err(Error::InvalidStep(delta_theta));
    }
    let offsets = [theta - delta_theta, theta, theta + delta_theta];
    let mut blocks: Vec<SampleMatrix> = offsets
        .par_iter()
        .enumerate()
        .map(|(i, &t)| generator.block(t, n, seed::derive_seed(seed, "offset", i as u64)))
        .collect::<Result<_>>()?;
    let plus = blocks.pop().expect("three blocks");
    let center = blocks.pop().expect("three blocks");
    let minus = blocks.pop().expect("three blocks");
    TripletSample::new(minus, center, plus, theta, delta_theta)
}

/// Slice a finite-difference triplet out of a grid dataset: the blocks at
/// `center_index ± 1` become the plus/minus members (truncated to a common
/// row count), the block at `center_index` supplies the covariance, and Δθ
/// is the grid spacing, which must be uniform across the three points.
pub fn triplet_from_grid(ds: &GridDataset, center_index: usize) -> Result<TripletSample> {
    if center_index == 0 || center_index + 1 >= ds.n_blocks() {
        return Err(Error::InvalidParameter {
            name: "center_index",
            value: center_index as f64,
            expected: "an interior grid point",
        });
    }
    let thetas = ds.thetas();
    let step_lo = thetas[center_index] - thetas[center_index - 1];
    let step_hi = thetas[center_index + 1] - thetas[center_index];
    if (step_lo - step_hi).abs() > 1e-9 * step_lo.abs().max(step_hi.abs()) {
        return Err(Error::InvalidParameter {
            name: "grid spacing",
            value: step_hi - step_lo,
            expected: "uniform around the center point",
        });
    }
    let minus = &ds.blocks()[center_index - 1];
    let plus = &ds.blocks()[center_index + 1];
    let n = minus.n_samples().min(plus.n_samples());
    let take = |s: &SampleMatrix| SampleMatrix::new(s.data().rows(0, n).into_owned());
    TripletSample::new(
        take(minus)?,
        ds.blocks()[center_index].clone(),
        take(plus)?,
        thetas[center_index],
        step_lo,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lfi;

    #[test]
    fn mean_block_statistics() {
        let grid = [0.0, 1.0];
        let ds = gen_gaussian_mean(&grid, 100_000, 4, 3).unwrap();
        for (bi, expect) in [(0usize, 0.0), (1usize, 1.0)] {
            let m = crate::stats::sample_moments(&ds.blocks()[bi]);
            for j in 0..4 {
                assert!(
                    (m.mean[j] - expect).abs() < 0.02,
                    "block {bi} mean[{j}] = {}",
                    m.mean[j]
                );
            }
        }
    }

    #[test]
    fn std_block_statistics() {
        let s = gen_gaussian_std(100_000, 3, 1.7, 9).unwrap();
        let m = crate::stats::sample_moments(&s);
        for j in 0..3 {
            assert!(m.mean[j].abs() < 0.02);
            let std = m.cov[(j, j)].sqrt();
            assert!((std - 1.7).abs() < 0.017, "std[{j}] = {std}");
        }
    }

    #[test]
    fn generators_are_reproducible() {
        let a = gen_gaussian_mean(&[-0.5, 0.5], 100, 3, 42).unwrap();
        let b = gen_gaussian_mean(&[-0.5, 0.5], 100, 3, 42).unwrap();
        assert_eq!(a.blocks()[1].data(), b.blocks()[1].data());
        let (la, ma) = gen_lognormal(&[0.0], 50, 4, 0.1, 7).unwrap();
        let (lb, mb) = gen_lognormal(&[0.0], 50, 4, 0.1, 7).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(la.blocks()[0].data(), lb.blocks()[0].data());
    }

    #[test]
    fn lognormal_identity_matrix_marginal_mean() {
        // With M = I and θ = 0 each marginal is exp(Z), Z ~ N(0,1), whose
        // mean is e^{1/2}.
        let eye = Matrix::identity(5, 5);
        let ds = gen_lognormal_with_matrix(&[0.0], 200_000, 5, &eye, 11).unwrap();
        let m = crate::stats::sample_moments(&ds.blocks()[0]);
        let expect = (0.5f64).exp();
        for j in 0..5 {
            assert!(
                (m.mean[j] - expect).abs() < 0.03,
                "marginal mean {} vs {expect}",
                m.mean[j]
            );
        }
    }

    #[test]
    fn lognormal_outputs_strictly_positive() {
        let (ds, _) = gen_lognormal(&[-7.0, 0.0, 7.0], 500, 10, 0.1, 13).unwrap();
        for b in ds.blocks() {
            assert!(b.data().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn lognormal_pipeline_inverts() {
        // log then M⁻¹ recovers the Gaussian blocks.
        let d = 6;
        let m = mixing_matrix(d, 0.1, 99);
        let grid = [0.3];
        let ln = gen_lognormal_with_matrix(&grid, 400, d, &m, 21).unwrap();
        let gauss = gen_gaussian_mean(&grid, 400, d, 21).unwrap();
        let m_inv = m.clone().try_inverse().expect("mixing matrix invertible");
        let mut back = ln.blocks()[0].data().clone();
        for v in back.iter_mut() {
            *v = v.ln();
        }
        let back = back * m_inv.transpose();
        let diff = (&back - gauss.blocks()[0].data()).amax();
        assert!(diff < 1e-10, "max recovery error {diff}");
    }

    #[test]
    fn lognormal_preserves_fi_of_underlying_gaussian() {
        // Bijective transform: FI of the log-normal data equals the FI of
        // the pre-exponentiation Gaussian (= d), up to estimator noise.
        let d = 6;
        let gen = TripletGenerator::LogNormal {
            d,
            mix_std: 0.1,
            matrix_seed: 5,
        };
        let t = make_triplet(&gen, 0.0, 0.1, 60_000, 17).unwrap();
        let est = lfi::lfi_corrected(&t, 1e-10).unwrap();
        // The LFI is a lower bound; for this gentle mixing it should already
        // sit close to the analytic FI.
        assert!(
            est.value > 0.8 * d as Real && est.value < d as Real + 3.0 * est.abs_std(),
            "estimate {} vs analytic {}",
            est.value,
            d
        );
    }

    #[test]
    fn triplet_offsets_are_independent_blocks() {
        let gen = TripletGenerator::GaussianMean { d: 2 };
        let t = make_triplet(&gen, 0.0, 0.05, 100, 23).unwrap();
        assert_ne!(t.plus().data(), t.minus().data());
        assert_eq!(t.n_offset(), 100);
        assert_eq!(t.theta(), 0.0);
    }

    #[test]
    fn std_triplet_rejects_nonpositive_sigma() {
        let gen = TripletGenerator::GaussianStd { d: 2 };
        assert!(make_triplet(&gen, 0.05, 0.1, 50, 1).is_err());
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let grid = [-1.0, 0.0, 1.0];
        let ds = gen_gaussian_mean(&grid, 100, 3, 31).unwrap();
        let (train, val) = ds.split(0.2, 7).unwrap();
        assert_eq!(train.len(), 240);
        assert_eq!(val.len(), 60);
        // 20 validation rows per θ value
        for &theta in &grid {
            let v = val.y.iter().filter(|&&y| y == theta).count();
            assert_eq!(v, 20);
        }
        let (train2, _) = ds.split(0.2, 7).unwrap();
        assert_eq!(train.x, train2.x);
        let (train3, _) = ds.split(0.2, 8).unwrap();
        assert_ne!(train.x, train3.x);
    }

    #[test]
    fn triplet_from_grid_slices_adjacent_blocks() {
        let grid = [-0.1, 0.0, 0.1, 0.2];
        let ds = gen_gaussian_mean_for_test(&grid);
        let t = triplet_from_grid(&ds, 1).unwrap();
        assert_eq!(t.theta(), 0.0);
        assert!((t.delta_theta() - 0.1).abs() < 1e-12);
        assert_eq!(t.minus().data(), ds.blocks()[0].data());
        assert_eq!(t.plus().data(), ds.blocks()[2].data());
        assert!(triplet_from_grid(&ds, 0).is_err());
        assert!(triplet_from_grid(&ds, 3).is_err());
    }

    fn gen_gaussian_mean_for_test(grid: &[Real]) -> GridDataset {
        super::gen_gaussian_mean(grid, 30, 3, 5).unwrap()
    }

    #[test]
    fn analytic_fi_values() {
        assert_eq!(
            TripletGenerator::GaussianMean { d: 256 }.analytic_fi(0.3),
            Some(256.0)
        );
        assert_eq!(
            TripletGenerator::GaussianStd { d: 50 }.analytic_fi(1.0),
            Some(100.0)
        );
    }
}
