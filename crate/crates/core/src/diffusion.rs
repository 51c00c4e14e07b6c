//! Variance-preserving perturbation kernels and the denoising targets built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Continuous variance-preserving schedule with a linear `β(t)` and a floor on
/// the marginal variance near `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VPSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
    pub sigma_min_sq: f64,
}

impl Default for VPSchedule {
    fn default() -> Self {
        Self {
            beta_min: 0.1,
            beta_max: 20.0,
            sigma_min_sq: 0.01,
        }
    }
}

impl VPSchedule {
    /// `∫₀ᵗ β(s) ds`.
    pub fn integrated_beta(&self, t: f64) -> f64 {
        self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t
    }
}

/// Noise model used for training: a full diffusion schedule or a single fixed
/// noise scale with no time dependence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSchedule {
    Vp(VPSchedule),
    SingleScale { sigma: f64 },
}

impl NoiseSchedule {
    pub fn single(sigma: f64) -> Self {
        NoiseSchedule::SingleScale { sigma }
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self, NoiseSchedule::Vp(_))
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSchedule::Vp(s) => {
                if !(s.beta_min > 0.0 && s.beta_max >= s.beta_min && s.sigma_min_sq >= 0.0) {
                    return Err(Error::InvalidParameter(format!("invalid VP schedule {s:?}")));
                }
                if !(s.sigma_min_sq > 0.0) {
                    // σ₀ = 0 would make the denoising target singular at t = 0.
                    return Err(Error::InvalidParameter("sigma_min_sq must be positive".into()));
                }
            }
            NoiseSchedule::SingleScale { sigma } => {
                if !(sigma > 0.0) {
                    return Err(Error::InvalidParameter("sigma must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Mean coefficient `α_t` and marginal standard deviation `σ_t` of the
    /// perturbation kernel `Gauss(α_t x₀, σ_t² I)`.
    pub fn kernel_stats(&self, t: f64) -> Result<(f64, f64)> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidParameter(format!("time {t} outside [0, 1]")));
        }
        Ok(self.kernel_stats_unchecked(t))
    }

    pub(crate) fn kernel_stats_unchecked(&self, t: f64) -> (f64, f64) {
        match *self {
            NoiseSchedule::Vp(s) => {
                let b = s.integrated_beta(t);
                let alpha = (-0.5 * b).exp();
                // 1 - α² = 1 - exp(-B), accurate for small B.
                let var = (-(-b).exp_m1()).max(s.sigma_min_sq);
                (alpha, var.sqrt())
            }
            NoiseSchedule::SingleScale { sigma } => (1.0, sigma),
        }
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        self.kernel_stats(t).map(|(_, s)| s)
    }

    /// `x_t = α_t x₀ + σ_t · noise`.
    pub fn perturb(&self, x0: &[f64], t: f64, noise: &[f64]) -> Result<Vec<f64>> {
        check_len(x0.len(), noise.len())?;
        let (alpha, sigma) = self.kernel_stats(t)?;
        Ok(x0.iter().zip(noise).map(|(x, z)| alpha * x + sigma * z).collect())
    }

    /// Score of the perturbation kernel at `x_t`: `-(x_t - α_t x₀) / σ_t²`.
    pub fn dsm_target(&self, x0: &[f64], xt: &[f64], t: f64) -> Result<Vec<f64>> {
        check_len(x0.len(), xt.len())?;
        let (alpha, sigma) = self.kernel_stats(t)?;
        let var = sigma * sigma;
        Ok(x0.iter().zip(xt).map(|(x, y)| -(y - alpha * x) / var).collect())
    }

    /// Loss weight `λ(t) = σ_t²`.
    pub fn weight(&self, t: f64) -> Result<f64> {
        self.sigma(t).map(|s| s * s)
    }

    /// Noise-free evolution `α_t x₀`.
    pub fn decay(&self, x0: &[f64], t: f64) -> Result<Vec<f64>> {
        let (alpha, _) = self.kernel_stats(t)?;
        Ok(x0.iter().map(|x| alpha * x).collect())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::Vp(VPSchedule::default())
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;

    fn vp() -> NoiseSchedule {
        NoiseSchedule::default()
    }

    #[test]
    fn kernel_endpoints() {
        let (a0, s0) = vp().kernel_stats(0.0).unwrap();
        assert_eq!(a0, 1.0);
        assert_relative_eq!(s0 * s0, 0.01, max_relative = 1e-15);

        // ∫₀¹ β = (0.1 + 20) / 2 = 10.05
        let (a1, s1) = vp().kernel_stats(1.0).unwrap();
        assert_relative_eq!(a1, (-0.5f64 * 10.05).exp(), max_relative = 1e-14);
        assert!((a1 - 6.57e-3).abs() < 1e-4);
        assert_relative_eq!(s1 * s1, 1.0, epsilon = 1e-4);

        assert!(vp().sigma(0.3).unwrap() < vp().sigma(0.7).unwrap());
        assert!(vp().kernel_stats(1.5).is_err());
        assert!(vp().kernel_stats(-0.1).is_err());
    }

    #[test]
    fn variance_preservation_and_continuity() {
        let s = VPSchedule::default();
        let mut prev = vp().kernel_stats(0.0).unwrap();
        for i in 1..=10_000 {
            let t = i as f64 / 10_000.0;
            let (a, sd) = vp().kernel_stats(t).unwrap();
            let unfloored = 1.0 - a * a;
            if unfloored >= s.sigma_min_sq {
                assert!((a * a + sd * sd - 1.0).abs() <= 1e-12);
            } else {
                assert!(a * a + unfloored <= 1.0 + 1e-12);
            }
            assert!(sd >= prev.1);
            assert!((a - prev.0).abs() < 1e-2 && (sd - prev.1).abs() < 1e-2);
            prev = (a, sd);
        }
    }

    #[test]
    fn sigma_strictly_increasing_past_floor() {
        let ts: Vec<f64> = (1..100).map(|i| 0.1 + 0.9 * i as f64 / 100.0).collect();
        for w in ts.windows(2) {
            assert!(vp().sigma(w[0]).unwrap() < vp().sigma(w[1]).unwrap());
        }
    }

    #[test]
    fn perturb_and_decay() {
        let x0 = [1.0, -2.0, 0.5];
        assert_eq!(vp().perturb(&x0, 0.0, &[0.0; 3]).unwrap(), x0.to_vec());
        let (a, _) = vp().kernel_stats(0.4).unwrap();
        let d = vp().perturb(&x0, 0.4, &[0.0; 3]).unwrap();
        assert_eq!(d, x0.iter().map(|x| a * x).collect::<Vec<_>>());
        assert_eq!(vp().decay(&x0, 0.4).unwrap(), d);
        assert_eq!(vp().decay(&x0, 0.0).unwrap(), x0.to_vec());

        let x1 = vp().decay(&x0, 1.0).unwrap();
        let n0 = x0.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n1 = x1.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(n1 <= 7e-3 * n0);

        let scaled: Vec<f64> = x0.iter().map(|x| 3.0 * x).collect();
        let ds = vp().decay(&scaled, 0.6).unwrap();
        for (a, b) in ds.iter().zip(vp().decay(&x0, 0.6).unwrap()) {
            assert_relative_eq!(*a, 3.0 * b, max_relative = 1e-15);
        }
        assert!(vp().perturb(&x0, 0.5, &[0.0; 2]).is_err());
    }

    #[test]
    fn perturb_monte_carlo_variance() {
        let mut r = rng::stream(17, 0);
        let t = 0.35;
        let x0 = [0.7];
        let draws: Vec<f64> = (0..10_000)
            .map(|_| vp().perturb(&x0, t, &rng::gaussian_vec(&mut r, 1)).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        let s = vp().sigma(t).unwrap();
        assert!((var - s * s).abs() <= 0.05 * s * s, "{var} vs {}", s * s);
    }

    #[test]
    fn dsm_target_values() {
        let single = NoiseSchedule::single(0.1);
        let t = single.dsm_target(&[0.0], &[0.1], 0.3).unwrap();
        assert_relative_eq!(t[0], -10.0, max_relative = 1e-12);

        let x0 = [0.3, -0.2];
        let xt = vp().decay(&x0, 0.5).unwrap();
        assert_eq!(vp().dsm_target(&x0, &xt, 0.5).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn weight_behaviour() {
        assert_relative_eq!(vp().weight(0.0).unwrap(), 0.01, max_relative = 1e-15);
        let mut prev = 0.0;
        for i in 0..=20 {
            let w = vp().weight(i as f64 / 20.0).unwrap();
            assert!(w >= prev);
            prev = w;
        }
        // λ(t)·E‖target‖² = λ n / σ_t² = n for the kernel score.
        let n = 4.0;
        for i in 1..=9 {
            let t = i as f64 / 10.0;
            let s = vp().sigma(t).unwrap();
            let weighted = vp().weight(t).unwrap() * n / (s * s);
            assert_relative_eq!(weighted, n, max_relative = 1e-12);
        }
    }

    #[test]
    fn single_scale_is_time_free() {
        let s = NoiseSchedule::single(0.2);
        assert_eq!(s.kernel_stats(0.0).unwrap(), (1.0, 0.2));
        assert_eq!(s.kernel_stats(0.9).unwrap(), (1.0, 0.2));
        assert!(NoiseSchedule::single(0.0).validate().is_err());
    }
}
