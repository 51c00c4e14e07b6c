//! Closed-form Gaussian results used to check everything else.
//!
//! Covers exact Gaussian scores, entropy and KL divergence, the predicted
//! score slope at the regularized fixed point, and a deterministic solver for
//! the linear-score fixed point under isotropic normal noise.

use std::f64::consts::{E, PI};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;
use crate::score_model::ScoreMap;

/// Gaussian density with a symmetric positive-definite covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
}

impl GaussianDensity {
    pub fn new(mean: Vec<f64>, covariance: Array2<f64>) -> Result<Self> {
        let k = mean.len();
        if covariance.dim() != (k, k) {
            return Err(Error::DimensionMismatch { expected: k, got: covariance.nrows() });
        }
        for i in 0..k {
            for j in 0..i {
                let (a, b) = (covariance[[i, j]], covariance[[j, i]]);
                if (a - b).abs() > 1e-12 * (a.abs() + b.abs()).max(1.0) {
                    return Err(Error::InvalidParameter("covariance must be symmetric".into()));
                }
            }
        }
        Ok(Self { mean: Array1::from(mean), covariance })
    }

    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(Error::SingularCovariance);
        }
        let k = mean.len();
        Self::new(mean, Array2::eye(k) * variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Lower Cholesky factor of an SPD matrix.
fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let k = a.nrows();
    let mut l = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = (0..j).map(|p| l[[i, p]] * l[[j, p]]).sum();
            if i == j {
                let d = a[[i, i]] - s;
                if !(d > 0.0) {
                    return Err(Error::SingularCovariance);
                }
                l[[i, i]] = d.sqrt();
            } else {
                l[[i, j]] = (a[[i, j]] - s) / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ y = r`.
fn cholesky_solve(l: &Array2<f64>, r: &[f64]) -> Vec<f64> {
    let k = l.nrows();
    let mut z = vec![0.0; k];
    for i in 0..k {
        let s: f64 = (0..i).map(|p| l[[i, p]] * z[p]).sum();
        z[i] = (r[i] - s) / l[[i, i]];
    }
    let mut y = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|p| l[[p, i]] * y[p]).sum();
        y[i] = (z[i] - s) / l[[i, i]];
    }
    y
}

/// `∇ₓ log p(x) = −Σ⁻¹(x − μ)`.
pub fn gaussian_score(g: &GaussianDensity, x: &[f64]) -> Result<Vec<f64>> {
    GaussianScore::new(g.clone())?.eval(x, None)
}

/// Differential entropy in nats.
pub fn gaussian_entropy(g: &GaussianDensity) -> Result<f64> {
    let l = cholesky(&g.covariance)?;
    let log_det: f64 = 2.0 * l.diag().iter().map(|d| d.ln()).sum::<f64>();
    Ok(0.5 * g.dim() as f64 * (2.0 * PI * E).ln() + 0.5 * log_det)
}

/// `KL(Gauss(0, σ₁²I) ‖ Gauss(0, σ₂²I))` in `k` dimensions.
pub fn kl_isotropic(sigma1_sq: f64, sigma2_sq: f64, k: usize) -> Result<f64> {
    if !(sigma1_sq > 0.0 && sigma2_sq > 0.0) {
        return Err(Error::InvalidParameter("variances must be positive".into()));
    }
    let ratio = sigma1_sq / sigma2_sq;
    Ok(0.5 * k as f64 * (ratio - 1.0 - ratio.ln()))
}

/// Score map of a fixed Gaussian, usable wherever a learned model is.
#[derive(Debug, Clone)]
pub struct GaussianScore {
    density: GaussianDensity,
    chol: Array2<f64>,
}

impl GaussianScore {
    pub fn new(density: GaussianDensity) -> Result<Self> {
        let chol = cholesky(&density.covariance)?;
        Ok(Self { density, chol })
    }
}

impl ScoreMap for GaussianScore {
    fn dim(&self) -> usize {
        self.density.dim()
    }

    fn eval(&self, x: &[f64], _t: Option<f64>) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let centered: Vec<f64> = x.iter().zip(&self.density.mean).map(|(a, m)| a - m).collect();
        Ok(cholesky_solve(&self.chol, &centered).into_iter().map(|v| -v).collect())
    }

    fn vjp(&self, _x: &[f64], _t: Option<f64>, v: &[f64]) -> Result<Vec<f64>> {
        // The Jacobian −Σ⁻¹ is symmetric.
        Ok(cholesky_solve(&self.chol, v).into_iter().map(|c| -c).collect())
    }
}

/// Affine score map `x ↦ A x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScore {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
}

impl ScoreMap for LinearScore {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn eval(&self, x: &[f64], _t: Option<f64>) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok((self.a.dot(&Array1::from(x.to_vec())) + &self.b).to_vec())
    }

    fn vjp(&self, _x: &[f64], _t: Option<f64>, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.a.t().dot(&Array1::from(v.to_vec())).to_vec())
    }
}

/// Local tangent/normal split with isotropic Gaussian noise in the normal directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalSplit {
    pub n: usize,
    pub n_perp: usize,
    pub sigma_sq: f64,
    pub gamma: f64,
}

impl LocalSplit {
    pub fn new(n: usize, n_perp: usize, sigma_sq: f64, gamma: f64) -> Result<Self> {
        if n_perp == 0 || n_perp > n {
            return Err(Error::InvalidParameter(format!("need 0 < n_perp ≤ n, got {n_perp} of {n}")));
        }
        if !(sigma_sq > 0.0) || !(gamma >= 0.0) {
            return Err(Error::InvalidParameter("need sigma_sq > 0 and gamma ≥ 0".into()));
        }
        Ok(Self { n, n_perp, sigma_sq, gamma })
    }

    /// `σ² + (n/n⊥)γ`, the off-manifold variance at the regularized fixed point.
    pub fn learned_variance(&self) -> f64 {
        self.sigma_sq + self.n as f64 / self.n_perp as f64 * self.gamma
    }

    fn penalty_weight(&self) -> f64 {
        self.n as f64 / self.n_perp as f64 * self.gamma
    }
}

/// Predicted normal-direction score slope `1 / (σ² + (n/n⊥)γ)`.
pub fn fixed_point_slope(split: &LocalSplit) -> f64 {
    1.0 / split.learned_variance()
}

/// Regularized criterion for a linear normal-subspace score `A x + b`,
/// with the expectation over `Gauss(0, σ²I)` taken in closed form:
/// `‖b‖² + σ²‖A + I/σ²‖_F² + (n/n⊥)γ‖A‖_F²`.
pub fn fixed_point_objective(split: &LocalSplit, a: &Array2<f64>, b: &Array1<f64>) -> f64 {
    let k = split.n_perp;
    let shifted = a + &(Array2::<f64>::eye(k) / split.sigma_sq);
    b.dot(b) + split.sigma_sq * shifted.iter().map(|v| v * v).sum::<f64>()
        + split.penalty_weight() * a.iter().map(|v| v * v).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
    pub iterations: usize,
}

pub const FIXED_POINT_MAX_ITERS: usize = 1_000_000;

/// Minimizes [`fixed_point_objective`] by plain gradient descent from a
/// random SPD start.
///
/// The step is half the inverse Lipschitz constant of the gradient. Descent
/// stops once the strong-convexity bound guarantees `‖A − A*‖_F ≤ tol/10`
/// and `‖b‖ ≤ tol/10`.
pub fn solve_linear_fixed_point(split: &LocalSplit, tol: f64, seed: u64) -> Result<FixedPoint> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tol must be positive".into()));
    }
    let k = split.n_perp;
    let mut r = rng::stream(seed, 0);
    let m = Array2::from_shape_simple_fn((k, k), || r.sample::<f64, _>(StandardNormal));
    let mut a = m.dot(&m.t()) / k as f64 + Array2::<f64>::eye(k);
    let mut b = Array1::from_shape_simple_fn(k, || r.sample::<f64, _>(StandardNormal));

    let curvature_a = 2.0 * (split.sigma_sq + split.penalty_weight());
    let lipschitz = curvature_a.max(2.0);
    let step = 0.5 / lipschitz;
    let eye_over_var = Array2::<f64>::eye(k) / split.sigma_sq;
    let mut residual = f64::INFINITY;
    for it in 0..FIXED_POINT_MAX_ITERS {
        let grad_a = (&a + &eye_over_var) * (2.0 * split.sigma_sq) + &a * (2.0 * split.penalty_weight());
        let grad_b = &b * 2.0;
        let dist_a = grad_a.iter().map(|v| v * v).sum::<f64>().sqrt() / curvature_a;
        let dist_b = b.dot(&b).sqrt();
        residual = dist_a.max(dist_b);
        if residual <= 0.1 * tol {
            return Ok(FixedPoint { a, b, iterations: it });
        }
        a.scaled_add(-step, &grad_a);
        b.scaled_add(-step, &grad_b);
    }
    Err(Error::NoConvergence { iterations: FIXED_POINT_MAX_ITERS, residual })
}

/// Linear score `−D x` with slope `fixed_point_slope` on the last `n⊥`
/// (normal) coordinates and `tangent_scale` on the first `n − n⊥`.
pub fn build_anisotropic_oracle_score(split: &LocalSplit, tangent_scale: f64) -> Result<LinearScore> {
    let normal = fixed_point_slope(split);
    if !(tangent_scale >= 0.0) || tangent_scale >= normal {
        return Err(Error::InvalidParameter(format!(
            "tangent slope {tangent_scale} must be in [0, {normal})"
        )));
    }
    let n = split.n;
    let tangent = n - split.n_perp;
    let diag = Array1::from_shape_fn(n, |i| if i < tangent { -tangent_scale } else { -normal });
    Ok(LinearScore {
        a: Array2::from_diag(&diag),
        b: Array1::zeros(n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn score_examples() {
        let g = GaussianDensity::isotropic(vec![0.0; 3], 1.0).unwrap();
        assert_eq!(gaussian_score(&g, &[1.0, -2.0, 0.5]).unwrap(), vec![-1.0, 2.0, -0.5]);
        let g = GaussianDensity::isotropic(vec![0.0; 2], 4.0).unwrap();
        let s = gaussian_score(&g, &[2.0, 0.0]).unwrap();
        assert_relative_eq!(s[0], -0.5, max_relative = 1e-15);
        assert_eq!(s[1], 0.0);
        let singular = GaussianDensity::new(vec![0.0; 2], array![[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(gaussian_score(&singular, &[1.0, 0.0]), Err(Error::SingularCovariance)));
    }

    #[test]
    fn full_covariance_score_solves_system() {
        let cov = array![[2.0, 0.3], [0.3, 0.5]];
        let g = GaussianDensity::new(vec![1.0, -1.0], cov.clone()).unwrap();
        let x = [0.2, 0.7];
        let s = gaussian_score(&g, &x).unwrap();
        // Σ s = −(x − μ)
        let back = cov.dot(&Array1::from(s));
        assert_relative_eq!(back[0], -(0.2 - 1.0), max_relative = 1e-12);
        assert_relative_eq!(back[1], -(0.7 + 1.0), max_relative = 1e-12);
    }

    #[test]
    fn entropy_examples() {
        let h = gaussian_entropy(&GaussianDensity::isotropic(vec![0.0], 1.0).unwrap()).unwrap();
        assert_relative_eq!(h, 0.5 * (2.0 * PI * E).ln(), max_relative = 1e-15);
        assert!((h - 1.41894).abs() < 1e-5);
        let h2 = gaussian_entropy(&GaussianDensity::isotropic(vec![0.0], 4.0).unwrap()).unwrap();
        assert_relative_eq!(h2 - h, 2f64.ln(), max_relative = 1e-12);

        let lo = GaussianDensity::new(vec![0.0; 2], Array2::from_diag(&array![0.1, 2.0])).unwrap();
        let hi = GaussianDensity::new(vec![0.0; 2], Array2::from_diag(&array![0.2, 2.0])).unwrap();
        assert!(gaussian_entropy(&hi).unwrap() > gaussian_entropy(&lo).unwrap());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_isotropic(0.7, 0.7, 5).unwrap(), 0.0);
        assert_relative_eq!(kl_isotropic(1.0, 2.0, 1).unwrap(), 0.5 * (0.5 - 1.0 + 2f64.ln()), max_relative = 1e-15);
        assert!((kl_isotropic(1.0, 2.0, 1).unwrap() - 0.09657).abs() < 1e-5);
        let mut best = (f64::INFINITY, 0.0);
        for i in 1..400 {
            let s2 = i as f64 * 0.01;
            let v = kl_isotropic(1.3, s2, 8).unwrap();
            if v < best.0 {
                best = (v, s2);
            }
        }
        assert_relative_eq!(best.1, 1.3, epsilon = 1e-9);
        assert!(kl_isotropic(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn slope_examples() {
        let s = |n, p, v, g| fixed_point_slope(&LocalSplit::new(n, p, v, g).unwrap());
        assert_relative_eq!(s(4, 2, 0.04, 0.0), 25.0, max_relative = 1e-12);
        assert_relative_eq!(s(16, 16, 0.01, 0.01), 50.0, max_relative = 1e-12);
        assert_relative_eq!(s(2, 1, 0.01, 0.01), 1.0 / 0.03, max_relative = 1e-12);
        assert!(LocalSplit::new(2, 3, 0.01, 0.0).is_err());
        assert!(LocalSplit::new(2, 0, 0.01, 0.0).is_err());
    }

    #[test]
    fn closed_form_objective_matches_sampling() {
        let split = LocalSplit::new(6, 3, 0.04, 0.02).unwrap();
        let a = array![[-10.0, 1.0, 0.0], [0.5, -20.0, 2.0], [0.0, 0.0, -5.0]];
        let b = array![0.3, -0.1, 0.2];
        let exact = fixed_point_objective(&split, &a, &b);
        let mut r = rng::stream(3, 0);
        let draws = 200_000;
        let sd = split.sigma_sq.sqrt();
        let shifted = &a + &(Array2::<f64>::eye(3) / split.sigma_sq);
        let mut acc = 0.0;
        for _ in 0..draws {
            let x = Array1::from_shape_simple_fn(3, || sd * r.sample::<f64, _>(StandardNormal));
            let v = &b + &shifted.dot(&x);
            acc += v.dot(&v);
        }
        let mc = acc / draws as f64 + 2.0 * 0.02 * a.iter().map(|v| v * v).sum::<f64>();
        assert_relative_eq!(mc, exact, max_relative = 1e-2);
    }

    #[test]
    fn fixed_point_unregularized() {
        let split = LocalSplit::new(3, 3, 0.04, 0.0).unwrap();
        let fp = solve_linear_fixed_point(&split, 1e-8, 1).unwrap();
        let target = Array2::<f64>::eye(3) * (-1.0 / 0.04);
        let err = (&fp.a - &target).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err <= 1e-8 * 3.0);
        assert!(fp.b.dot(&fp.b).sqrt() <= 1e-8);
    }

    #[test]
    fn anisotropic_oracle() {
        let split = LocalSplit::new(4, 2, 0.01, 0.01).unwrap();
        let s = build_anisotropic_oracle_score(&split, 0.5).unwrap();
        let y = s.eval(&[1.0, 1.0, 1.0, 1.0], None).unwrap();
        assert_eq!(y[0], -0.5);
        assert_relative_eq!(y[3], -1.0 / 0.03, max_relative = 1e-12);
        assert!(build_anisotropic_oracle_score(&split, 40.0).is_err());
    }
}
