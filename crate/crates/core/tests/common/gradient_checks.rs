//! Finite-difference probes of the hand-written derivatives; each returns the
//! worst relative error over the probes.

use ndarray::{Array1, Array2};
use rand::Rng;
use scoredim::diffusion::NoiseSchedule;
use scoredim::regularizer::{de_penalty_frozen, dsm_loss};
use scoredim::rng;
use scoredim::score_model::{OutputScale, ScoreMap, ScoreModel};

use super::{fd_jacobian, random_mlp, rel_err};

fn gaussian(r: &mut rng::StreamRng, n: usize) -> Vec<f64> {
    rng::gaussian_vec(r, n)
}

fn perturbed(m: &ScoreModel, d: &[f64], eps: f64) -> ScoreModel {
    let mut out = m.clone();
    for (p, v) in out.params.iter_mut().zip(d) {
        *p += eps * v;
    }
    out
}

pub fn linear_functional_worst(probes: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for probe in 0..probes {
        let seed = probe as u64;
        let time = probe % 2 == 0;
        let m = random_mlp(3, &[7, 5], time, seed);
        let mut r = rng::stream(seed, 1);
        let rows = 4;
        let x = Array2::from_shape_vec((rows, 3), gaussian(&mut r, rows * 3)).unwrap();
        let t = time.then(|| Array1::from_shape_simple_fn(rows, || r.random::<f64>()));
        let w = Array2::from_shape_vec((rows, 3), gaussian(&mut r, rows * 3)).unwrap();
        let loss = |m: &ScoreModel| (m.forward_batch(x.view(), t.as_ref().map(|t| t.view())).unwrap() * &w).sum();
        let (l, g) = m
            .grad_params(x.view(), t.as_ref().map(|t| t.view()), |out| ((out * &w).sum(), w.clone()))
            .unwrap();
        assert_eq!(l, loss(&m));
        let d = rng::unit_vec(&mut r, m.num_params());
        let eps = 1e-4;
        let fd = (loss(&perturbed(&m, &d, eps)) - loss(&perturbed(&m, &d, -eps))) / (2.0 * eps);
        let gd: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        worst = worst.max(rel_err(fd, gd));
    }
    worst
}

pub fn dsm_loss_worst(probes: usize) -> f64 {
    let schedules = [NoiseSchedule::single(0.3), NoiseSchedule::default()];
    let mut worst: f64 = 0.0;
    for probe in 0..probes {
        let seed = 1000 + probe as u64;
        let sched = schedules[probe % 2];
        let mut m = random_mlp(2, &[6, 6], sched.is_time_dependent(), seed);
        m.output_scale = OutputScale::InverseSigma(sched);
        m.prior_skip = probe % 4 < 2;
        let mut r = rng::stream(seed, 1);
        let x0 = Array2::from_shape_vec((5, 2), gaussian(&mut r, 10)).unwrap();
        let loss = |m: &ScoreModel| {
            let mut rr = rng::stream(seed, 2);
            dsm_loss(m, x0.view(), &sched, &mut rr, None).unwrap().dsm
        };
        let mut g = vec![0.0; m.num_params()];
        let mut rr = rng::stream(seed, 2);
        dsm_loss(&m, x0.view(), &sched, &mut rr, Some(&mut g)).unwrap();
        let d = rng::unit_vec(&mut r, m.num_params());
        let eps = 1e-4;
        let fd = (loss(&perturbed(&m, &d, eps)) - loss(&perturbed(&m, &d, -eps))) / (2.0 * eps);
        let gd: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        worst = worst.max(rel_err(fd, gd));
    }
    worst
}

pub fn frozen_penalty_worst(probes: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for probe in 0..probes {
        let seed = 2000 + probe as u64;
        let time = probe % 2 == 1;
        let m = random_mlp(3, &[8, 8], time, seed);
        let mut r = rng::stream(seed, 1);
        let x = gaussian(&mut r, 3);
        let t = time.then(|| r.random::<f64>());
        let u = rng::unit_vec(&mut r, 3);
        let (_, g) = de_penalty_frozen(&m, &x, t, &u, 0.01, 1e-3).unwrap();
        let pen = |m: &ScoreModel| de_penalty_frozen(m, &x, t, &u, 0.01, 1e-3).unwrap().0;
        let d = rng::unit_vec(&mut r, m.num_params());
        let eps = 1e-4;
        let fd = (pen(&perturbed(&m, &d, eps)) - pen(&perturbed(&m, &d, -eps))) / (2.0 * eps);
        let gd: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        worst = worst.max(rel_err(fd, gd));
    }
    worst
}

pub fn input_vjp_worst(probes: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for probe in 0..probes {
        let seed = 3000 + probe as u64;
        let time = probe % 2 == 0;
        let mut m = random_mlp(4, &[9, 9], time, seed);
        if probe % 3 == 0 {
            m.output_scale = OutputScale::InverseSigma(NoiseSchedule::default());
            m.prior_skip = true;
        }
        if !time && m.prior_skip {
            m.prior_skip = false;
        }
        let mut r = rng::stream(seed, 1);
        let x = gaussian(&mut r, 4);
        let t = time.then(|| r.random::<f64>());
        let j = fd_jacobian(&m, &x, t, 1e-4);
        let mut vj = nalgebra::DMatrix::zeros(4, 4);
        for row in 0..4 {
            let mut e = vec![0.0; 4];
            e[row] = 1.0;
            let g = m.vjp(&x, t, &e).unwrap();
            for c in 0..4 {
                vj[(row, c)] = g[c];
            }
        }
        worst = worst.max((&vj - &j).norm() / j.norm());
    }
    worst
}

pub fn adjointness_worst(probes: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for probe in 0..probes {
        let seed = 4000 + probe as u64;
        let m = random_mlp(5, &[10, 10], false, seed);
        let mut r = rng::stream(seed, 1);
        let x = gaussian(&mut r, 5);
        let u = gaussian(&mut r, 5);
        let v = gaussian(&mut r, 5);
        let h = 1e-4;
        let xp: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + h * b).collect();
        let xm: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a - h * b).collect();
        let (fp, fm) = (m.eval(&xp, None).unwrap(), m.eval(&xm, None).unwrap());
        let vjvp: f64 = v.iter().zip(fp.iter().zip(&fm)).map(|(vi, (a, b))| vi * (a - b) / (2.0 * h)).sum();
        let g = m.vjp(&x, None, &v).unwrap();
        let ujtv: f64 = u.iter().zip(&g).map(|(a, b)| a * b).sum();
        worst = worst.max(rel_err(vjvp, ujtv));
    }
    worst
}
