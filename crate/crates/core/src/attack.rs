//! L2-bounded probes against a score map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::rng;
use crate::score_model::ScoreMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// L2 budget.
    pub epsilon: f64,
    pub iters: usize,
    pub step_size: f64,
    /// Seed of the fallback direction used where the score vanishes.
    pub seed: u64,
}

impl AttackConfig {
    /// `iters` steps of size `2ε / iters`.
    pub fn pgd(iters: usize, epsilon: f64) -> Self {
        Self {
            epsilon,
            iters,
            step_size: 2.0 * epsilon / iters as f64,
            seed: 0,
        }
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self::pgd(self.iters, epsilon).with_seed(self.seed)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.iters == 0 || !(self.step_size > 0.0) {
            return Err(Error::InvalidParameter("attack needs epsilon > 0, iters ≥ 1, step_size > 0".into()));
        }
        if self.step_size * (self.iters as f64) < self.epsilon * (1.0 - 1e-12) {
            return Err(Error::InvalidParameter("step_size · iters must reach epsilon".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub x_adv: Vec<f64>,
    /// Some step found a zero score and used the fallback direction.
    pub fallback: bool,
}

/// Projected ascent along the normalized `−s(x, t)`, kept inside the L2 ball of
/// radius `ε` around the starting point.
pub fn pgd_l2<S: ScoreMap + ?Sized>(score: &S, x: &[f64], t: Option<f64>, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    let n = score.dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x.len() });
    }
    let mut cur = x.to_vec();
    let mut fallback = false;
    let mut fallback_dir: Option<Vec<f64>> = None;
    for _ in 0..cfg.iters {
        let s = score.eval(&cur, t)?;
        let len = norm(&s);
        let dir: Vec<f64> = if len > 0.0 && len.is_finite() {
            s.iter().map(|v| -v / len).collect()
        } else {
            fallback = true;
            fallback_dir
                .get_or_insert_with(|| rng::unit_vec(&mut rng::stream(cfg.seed, 0x6661), n))
                .clone()
        };
        for (c, d) in cur.iter_mut().zip(&dir) {
            *c += cfg.step_size * d;
        }
        project(&mut cur, x, cfg.epsilon);
    }
    Ok(AttackResult { x_adv: cur, fallback })
}

fn project(cur: &mut [f64], center: &[f64], radius: f64) {
    let delta: Vec<f64> = cur.iter().zip(center).map(|(a, b)| a - b).collect();
    let len = norm(&delta);
    if len > radius {
        let k = radius / len;
        for ((c, d), x) in cur.iter_mut().zip(&delta).zip(center) {
            *c = x + k * d;
        }
    }
}

/// `x + ε u` with `u` uniform on the unit sphere.
pub fn random_l2(x: &[f64], epsilon: f64, seed: u64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    let u = rng::unit_vec(&mut rng::stream(seed, 0x7261), x.len());
    Ok(x.iter().zip(&u).map(|(a, b)| a + epsilon * b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dist;
    use crate::oracle::{GaussianDensity, GaussianScore};
    use crate::score_model::{OutputScale, ScoreModel};
    use proptest::prelude::*;

    fn gaussian(mu: Vec<f64>, var: f64) -> GaussianScore {
        GaussianScore::new(GaussianDensity::isotropic(mu, var).unwrap()).unwrap()
    }

    #[test]
    fn tiny_budget_keeps_point() {
        let g = gaussian(vec![0.0, 0.0], 1.0);
        let x = [0.3, -0.4];
        let r = pgd_l2(&g, &x, None, &AttackConfig::pgd(10, 1e-12)).unwrap();
        assert!(dist(&r.x_adv, &x) <= 1e-12);
    }

    #[test]
    fn radial_escape_from_gaussian_mode() {
        let mu = vec![1.0, -2.0, 0.5];
        let g = gaussian(mu.clone(), 0.04);
        let x = [1.3, -2.0, 0.9];
        let eps = 0.2;
        let r = pgd_l2(&g, &x, None, &AttackConfig::pgd(10, eps)).unwrap();
        assert!((dist(&r.x_adv, &mu) - (dist(&x, &mu) + eps)).abs() < 1e-12);
        assert!(!r.fallback);

        let one = pgd_l2(&g, &x, None, &AttackConfig::pgd(1, eps)).unwrap();
        assert!(dist(&r.x_adv, &mu) >= dist(&one.x_adv, &mu) - 1e-12);
    }

    #[test]
    fn zero_score_uses_fallback() {
        let m = ScoreModel::init(3, &[4], false, OutputScale::Unit, 0).unwrap();
        let x = [0.0; 3];
        let r = pgd_l2(&m, &x, None, &AttackConfig::pgd(10, 0.1).with_seed(3)).unwrap();
        assert!(r.fallback);
        assert!((dist(&r.x_adv, &x) - 0.1).abs() < 1e-12);
        let again = pgd_l2(&m, &x, None, &AttackConfig::pgd(10, 0.1).with_seed(3)).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn random_probe_properties() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let a = random_l2(&x, 0.3, 1).unwrap();
        let b = random_l2(&x, 0.3, 2).unwrap();
        assert!((dist(&a, &x) - 0.3).abs() <= 1e-12);
        assert_ne!(a, b);

        let draws = 10_000;
        let mut mean = [0.0; 4];
        for s in 0..draws {
            let y = random_l2(&x, 1.0, s).unwrap();
            for j in 0..4 {
                mean[j] += (y[j] - x[j]) / draws as f64;
            }
        }
        // Each coordinate of a uniform unit vector in 4-D has variance 1/4.
        let se = (0.25 / draws as f64).sqrt();
        for m in mean {
            assert!(m.abs() <= 3.0 * se, "{m}");
        }
        assert!(random_l2(&x, 0.0, 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn budget_always_respected(seed in 0u64..1000, eps in 1e-3f64..2.0, iters in 1usize..20,
                                   x in prop::collection::vec(-3.0f64..3.0, 3)) {
            let mut m = ScoreModel::init(3, &[8, 8], false, OutputScale::Unit, seed).unwrap();
            let range = m.last_layer_weight_range();
            let mut r = rng::stream(seed, 5);
            let w = rng::gaussian_vec(&mut r, range.len());
            m.params[range].copy_from_slice(&w);
            let cfg = AttackConfig::pgd(iters, eps).with_seed(seed);
            let out = pgd_l2(&m, &x, None, &cfg).unwrap();
            prop_assert!(dist(&out.x_adv, &x) <= eps + 1e-12);
            prop_assert_eq!(out, pgd_l2(&m, &x, None, &cfg).unwrap());
        }
    }
}
