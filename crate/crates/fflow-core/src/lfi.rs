//! Linear Fisher information: plug-in estimator, bias-corrected estimator,
//! and the estimator's own error model.
//!
//! The estimate is J = (∂θμ)ᵀ Σ⁻¹ (∂θμ) with the covariance taken from the
//! center sample and the derivative from a symmetric finite difference of
//! the plus/minus sample means. With blocks at θ±Δθ the full spacing between
//! the differenced means is s = 2Δθ; the sampling bias of the plug-in
//! quadratic form is then exactly 2d/(N·s²), which the corrected estimator
//! subtracts, and the relative variance follows η(L) = (8/L)(1 + d/L) with
//! L = J·N·s².

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{self, SampleMatrix};
use crate::{Matrix, Real, Vector};

/// How an FI estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiMethod {
    Plugin,
    Corrected,
    Maximized,
}

/// An FI value with its estimated relative standard error and provenance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FiEstimate {
    /// Clamped estimate, max(raw_value, 0).
    pub value: Real,
    /// Pre-clamp value; may be negative after bias correction.
    pub raw_value: Real,
    /// Predicted relative standard error (η from the error model); 0 when no
    /// positive FI scale exists to evaluate the model at.
    pub rel_std: Real,
    pub method: FiMethod,
}

impl FiEstimate {
    fn new(raw_value: Real, rel_std: Real, method: FiMethod) -> Self {
        Self {
            value: raw_value.max(0.0),
            raw_value,
            rel_std,
            method,
        }
    }

    /// Absolute one-sigma error, value × rel_std.
    pub fn abs_std(&self) -> Real {
        self.value * self.rel_std
    }
}

/// Samples of the data at θ−Δθ, θ and θ+Δθ.
#[derive(Debug, Clone)]
pub struct TripletSample {
    minus: SampleMatrix,
    center: SampleMatrix,
    plus: SampleMatrix,
    theta: Real,
    delta_theta: Real,
}

impl TripletSample {
    /// Validate: shared dimension, equal plus/minus sample counts, Δθ > 0.
    pub fn new(
        minus: SampleMatrix,
        center: SampleMatrix,
        plus: SampleMatrix,
        theta: Real,
        delta_theta: Real,
    ) -> Result<Self> {
        if delta_theta <= 0.0 {
            return Err(Error::InvalidStep(delta_theta));
        }
        if minus.d() != center.d() || plus.d() != center.d() {
            return Err(Error::DimensionMismatch {
                context: "triplet member dimensions",
                left: minus.d(),
                right: plus.d(),
            });
        }
        if minus.n_samples() != plus.n_samples() {
            return Err(Error::DimensionMismatch {
                context: "triplet plus/minus sample counts",
                left: minus.n_samples(),
                right: plus.n_samples(),
            });
        }
        Ok(Self {
            minus,
            center,
            plus,
            theta,
            delta_theta,
        })
    }

    pub fn minus(&self) -> &SampleMatrix {
        &self.minus
    }

    pub fn center(&self) -> &SampleMatrix {
        &self.center
    }

    pub fn plus(&self) -> &SampleMatrix {
        &self.plus
    }

    pub fn theta(&self) -> Real {
        self.theta
    }

    pub fn delta_theta(&self) -> Real {
        self.delta_theta
    }

    /// Data dimension shared by the three members.
    pub fn d(&self) -> usize {
        self.center.d()
    }

    /// Per-offset sample size (plus and minus block row count).
    pub fn n_offset(&self) -> usize {
        self.plus.n_samples()
    }

    /// Full spacing between the plus and minus blocks, 2Δθ.
    pub fn spacing(&self) -> Real {
        2.0 * self.delta_theta
    }
}

/// Column means of a matrix of row observations.
pub(crate) fn column_means(data: &Matrix) -> Vector {
    let inv_n = 1.0 / data.nrows() as Real;
    Vector::from_fn(data.ncols(), |j, _| data.column(j).sum() * inv_n)
}

/// Plug-in quadratic form from precomputed moment pieces.
pub(crate) fn quadratic_form(grad: &Vector, cov_pinv: &Matrix) -> Real {
    (cov_pinv * grad).dot(grad)
}

/// Sampling bias of the plug-in quadratic form: 2d / (n · spacing²).
pub(crate) fn bias_term(d: usize, n_offset: usize, spacing: Real) -> Real {
    2.0 * d as Real / (n_offset as Real * spacing * spacing)
}

fn plugin_quadratic(t: &TripletSample, rel_tol: Real) -> Result<Real> {
    let moments = stats::sample_moments(t.center());
    let pinv = stats::pca_pseudoinverse(&moments.cov, rel_tol)?;
    let grad = stats::central_difference(
        &column_means(t.plus().data()),
        &column_means(t.minus().data()),
        t.delta_theta(),
    )?;
    Ok(quadratic_form(&grad, &pinv))
}

fn rel_std_or_zero(j_scale: Real, d: usize, n: usize, spacing: Real) -> Real {
    if j_scale > 0.0 {
        lfi_rel_std(j_scale, d, n, spacing).expect("positive scale")
    } else {
        0.0
    }
}

/// Plug-in LFI estimate of a triplet.
pub fn lfi_plugin(t: &TripletSample, rel_tol: Real) -> Result<FiEstimate> {
    let q = plugin_quadratic(t, rel_tol)?;
    let rel_std = rel_std_or_zero(q, t.d(), t.n_offset(), t.spacing());
    Ok(FiEstimate::new(q, rel_std, FiMethod::Plugin))
}

/// Bias-corrected LFI estimate of a triplet.
///
/// Subtracts the sampling bias 2d/(N·s²) of the plug-in quadratic form,
/// where N is the per-offset sample size and s the full plus-minus spacing.
/// Negative corrected values are clamped to 0 in `value` but preserved in
/// `raw_value`. The error model is evaluated at the corrected value itself,
/// falling back to the plug-in value when the corrected value is ≤ 0.
pub fn lfi_corrected(t: &TripletSample, rel_tol: Real) -> Result<FiEstimate> {
    let q = plugin_quadratic(t, rel_tol)?;
    let raw = q - bias_term(t.d(), t.n_offset(), t.spacing());
    let scale = if raw > 0.0 { raw } else { q };
    let rel_std = rel_std_or_zero(scale, t.d(), t.n_offset(), t.spacing());
    Ok(FiEstimate::new(raw, rel_std, FiMethod::Corrected))
}

/// Predicted relative standard error of the LFI estimator,
/// √η with η(L) = (8/L)(1 + d/L) and L = j · n · delta_theta².
///
/// `delta_theta` is squared as given; pipeline callers pass the full spacing
/// between the differenced sample means.
pub fn lfi_rel_std(j: Real, d: usize, n: usize, delta_theta: Real) -> Result<Real> {
    if j <= 0.0 {
        return Err(Error::UndefinedErrorModel(j));
    }
    if n < 2 {
        return Err(Error::DegenerateSample { got: n, need: 2 });
    }
    if delta_theta <= 0.0 {
        return Err(Error::InvalidStep(delta_theta));
    }
    let l = j * n as Real * delta_theta * delta_theta;
    let eta = (8.0 / l) * (1.0 + d as Real / l);
    Ok(eta.sqrt())
}

/// Smallest per-offset sample size for which the predicted relative standard
/// error at FI scale `j`, dimension `d` and spacing `s` stays below `target`.
pub fn required_n_sample(j: Real, d: usize, spacing: Real, target: Real) -> usize {
    // Solve (8/L)(1 + d/L) = target² for L, then N = L / (j s²).
    let t2 = target * target;
    let l_min = (4.0 + (16.0 + 8.0 * t2 * d as Real).sqrt()) / t2;
    (l_min / (j * spacing * spacing)).ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_block(n: usize, d: usize, mean: Real, seed: u64) -> SampleMatrix {
        let mut rng = crate::seed::rng(seed, "lfi-test", 0);
        SampleMatrix::new(Matrix::from_fn(n, d, |_, _| {
            mean + rng.sample::<Real, _>(StandardNormal)
        }))
        .unwrap()
    }

    fn mean_task_triplet(d: usize, n: usize, delta: Real, seed: u64) -> TripletSample {
        TripletSample::new(
            gaussian_block(n, d, -delta, seed.wrapping_mul(3).wrapping_add(1)),
            gaussian_block(n, d, 0.0, seed.wrapping_mul(3).wrapping_add(2)),
            gaussian_block(n, d, delta, seed.wrapping_mul(3).wrapping_add(3)),
            0.0,
            delta,
        )
        .unwrap()
    }

    #[test]
    fn one_dimensional_mean_task_recovers_unit_fi() {
        // μ(θ) = θ, σ² = 1: J = (∂θμ)²/σ² = 1.
        let t = mean_task_triplet(1, 200_000, 0.1, 5);
        let est = lfi_plugin(&t, 1e-10).unwrap();
        assert!(
            (est.value - 1.0).abs() < 3.0 * est.rel_std * 1.0_f64.max(est.value),
            "value = {}, rel_std = {}",
            est.value,
            est.rel_std
        );
    }

    #[test]
    fn identical_plus_minus_gives_zero() {
        let block = gaussian_block(500, 3, 0.0, 9);
        let t = TripletSample::new(block.clone(), block.clone(), block, 0.0, 0.05).unwrap();
        let est = lfi_plugin(&t, 1e-10).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.rel_std, 0.0);
    }

    #[test]
    fn mean_task_recovers_dimension() {
        // μ(θ) = θ·1, Σ = I: analytic J = d.
        let d = 32;
        let t = mean_task_triplet(d, 30_000, 0.05, 17);
        let est = lfi_corrected(&t, 1e-10).unwrap();
        let analytic = d as Real;
        assert!(
            (est.value - analytic).abs() < 3.0 * est.abs_std(),
            "value = {}, 3σ = {}",
            est.value,
            3.0 * est.abs_std()
        );
    }

    #[test]
    fn corrected_never_exceeds_plugin() {
        for seed in 0..5 {
            let t = mean_task_triplet(4, 500, 0.1, 100 + seed);
            let plugin = lfi_plugin(&t, 1e-10).unwrap();
            let corrected = lfi_corrected(&t, 1e-10).unwrap();
            assert!(corrected.value <= plugin.value);
            assert!(corrected.raw_value < plugin.raw_value);
        }
    }

    #[test]
    fn correction_vanishes_for_large_step() {
        let t = mean_task_triplet(2, 300, 1e6, 23);
        let plugin = lfi_plugin(&t, 1e-10).unwrap();
        let corrected = lfi_corrected(&t, 1e-10).unwrap();
        assert_relative_eq!(plugin.value, corrected.value, max_relative = 1e-9);
    }

    #[test]
    fn zero_information_bias_matches_analytic_term() {
        // All three blocks from the same distribution: the plug-in measures
        // pure sampling bias, 2d/(N·s²) with s the full spacing.
        let d = 32;
        let n = 5_000;
        let offset = 0.005; // s = 0.01
        let analytic_bias = bias_term(d, n, 2.0 * offset);
        let mut plugin_sum = 0.0;
        let mut corrected_sum = 0.0;
        let repeats = 12;
        for r in 0..repeats {
            let minus = gaussian_block(n, d, 0.0, 1000 + 3 * r);
            let center = gaussian_block(n, d, 0.0, 1001 + 3 * r);
            let plus = gaussian_block(n, d, 0.0, 1002 + 3 * r);
            let t = TripletSample::new(minus, center, plus, 0.0, offset).unwrap();
            plugin_sum += lfi_plugin(&t, 1e-10).unwrap().value;
            corrected_sum += lfi_corrected(&t, 1e-10).unwrap().raw_value;
        }
        let plugin_mean = plugin_sum / repeats as Real;
        let corrected_mean = corrected_sum / repeats as Real;
        assert!(
            (plugin_mean - analytic_bias).abs() < 0.25 * analytic_bias,
            "plugin mean {plugin_mean}, analytic bias {analytic_bias}"
        );
        assert!(
            corrected_mean.abs() < 0.25 * analytic_bias,
            "corrected mean {corrected_mean}"
        );
    }

    #[test]
    fn plugin_invariant_under_affine_transform() {
        // ĝ ↦ Aĝ and Σ̂ ↦ AΣ̂Aᵀ cancel exactly in the quadratic form when the
        // sample covariance has full rank.
        let d = 8;
        let n = 2_000;
        let t = mean_task_triplet(d, n, 0.1, 31);
        let mut rng = crate::seed::rng(31, "affine", 0);
        let a = Matrix::from_fn(d, d, |_, _| rng.sample::<Real, _>(StandardNormal))
            + Matrix::identity(d, d) * 3.0;
        let shift = Vector::from_fn(d, |i, _| i as Real);
        let transform = |s: &SampleMatrix| {
            let mut out = s.data() * a.transpose();
            for i in 0..out.nrows() {
                for j in 0..out.ncols() {
                    out[(i, j)] += shift[j];
                }
            }
            SampleMatrix::new(out).unwrap()
        };
        let tt = TripletSample::new(
            transform(t.minus()),
            transform(t.center()),
            transform(t.plus()),
            t.theta(),
            t.delta_theta(),
        )
        .unwrap();
        let orig = lfi_plugin(&t, 1e-10).unwrap();
        let mapped = lfi_plugin(&tt, 1e-10).unwrap();
        assert_relative_eq!(orig.value, mapped.value, max_relative = 1e-6);
    }

    #[test]
    fn rel_std_arithmetic_example() {
        // L = 100·100000·0.05² = 25000, η = (8/L)(1 + 50/L) ≈ 3.2064e-4.
        let r = lfi_rel_std(100.0, 50, 100_000, 0.05).unwrap();
        assert_relative_eq!(r, 3.2064e-4_f64.sqrt(), max_relative = 1e-4);
        assert_relative_eq!(r, 0.01791, max_relative = 1e-3);
    }

    #[test]
    fn rel_std_zero_dimension_limit() {
        let l: Real = 100.0 * 100_000.0 * 0.05 * 0.05;
        let r = lfi_rel_std(100.0, 0, 100_000, 0.05).unwrap();
        assert_relative_eq!(r, (8.0 / l).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn doubling_n_halves_eta_leading_term() {
        let eta = |n: usize| lfi_rel_std(50.0, 0, n, 0.1).unwrap().powi(2);
        let ratio = eta(2_000_000) / eta(1_000_000);
        assert_relative_eq!(ratio, 0.5, max_relative = 1e-9);
    }

    #[test]
    fn rel_std_rejects_nonpositive_fi() {
        assert!(matches!(
            lfi_rel_std(0.0, 4, 100, 0.1),
            Err(Error::UndefinedErrorModel(_))
        ));
    }

    #[test]
    fn required_n_sample_is_consistent() {
        let j = 10.0;
        let d = 100;
        let s = 0.06;
        let n = required_n_sample(j, d, s, 0.25);
        assert!(lfi_rel_std(j, d, n, s).unwrap() <= 0.25);
        assert!(lfi_rel_std(j, d, n / 2, s).unwrap() > 0.25);
    }

    #[test]
    fn triplet_rejects_mismatched_members() {
        let a = gaussian_block(100, 2, 0.0, 1);
        let b = gaussian_block(100, 3, 0.0, 2);
        let c = gaussian_block(100, 2, 0.0, 3);
        assert!(TripletSample::new(a, b, c, 0.0, 0.1).is_err());
    }
}
