#![allow(dead_code)]

pub mod gradient_checks;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use scoredim::rng;
use scoredim::score_model::{OutputScale, ScoreMap, ScoreModel};

/// MLP with every layer random, so the map is far from constant.
pub fn random_mlp(dim: usize, hidden: &[usize], time: bool, seed: u64) -> ScoreModel {
    let mut m = ScoreModel::init(dim, hidden, time, OutputScale::Unit, seed).unwrap();
    let mut r = rng::stream(seed, 77);
    let range = m.last_layer_weight_range();
    let fan_in = *hidden.last().unwrap_or(&dim) as f64;
    for w in &mut m.params[range] {
        let z: f64 = r.sample(StandardNormal);
        *w = z / fan_in.sqrt();
    }
    for p in m.params.iter_mut() {
        if *p == 0.0 {
            let z: f64 = r.sample(StandardNormal);
            *p = 0.1 * z;
        }
    }
    m
}

/// Jacobian assembled column by column from central differences.
pub fn fd_jacobian<S: ScoreMap>(s: &S, x: &[f64], t: Option<f64>, h: f64) -> DMatrix<f64> {
    let n = s.dim();
    let mut j = DMatrix::zeros(n, n);
    for c in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[c] += h;
        xm[c] -= h;
        let (fp, fm) = (s.eval(&xp, t).unwrap(), s.eval(&xm, t).unwrap());
        for r in 0..n {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
