//! Dirichlet-energy regularization of a score map.
//!
//! The squared spectral norm of the score Jacobian is estimated by a power
//! iteration that alternates reverse-mode products `Jᵀv` with central
//! finite-difference products `J u`. The final input direction `u` is then
//! frozen and the penalty `nγ ‖(s(x + u h/2) − s(x − u h/2)) / h‖²` is
//! differentiated with respect to the parameters through the two forward
//! evaluations only.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::rng::{self, StreamRng};
use crate::score_model::{row_sq_norms, ForwardCache, ScoreMap, ScoreModel};

/// Outcome of a single-point Jacobian power iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerIteration {
    /// `‖J u‖²`, the estimate of the largest squared singular value.
    pub sq_spectral_norm: f64,
    /// Final unit input direction `u`.
    pub direction: Vec<f64>,
    /// The map looked locally constant (a zero vector came up while rescaling).
    pub degenerate: bool,
}

/// Power iteration on the Jacobian of `score` at `x` with `iters` rounds and
/// finite-difference step `h`.
pub fn jacobian_power_iteration<S: ScoreMap + ?Sized>(
    score: &S,
    x: &[f64],
    t: Option<f64>,
    iters: usize,
    h: f64,
    seed: u64,
) -> Result<PowerIteration> {
    check_power_args(iters, h)?;
    let n = score.dim();
    let mut r = rng::stream(seed, 0);
    let mut v = rng::gaussian_vec(&mut r, n);
    let mut u = vec![0.0; n];
    for _ in 0..iters {
        let nv = norm(&v);
        if nv == 0.0 {
            return Ok(degenerate(&mut r, n));
        }
        v.iter_mut().for_each(|c| *c /= nv);
        u = score.vjp(x, t, &v)?;
        let nu = norm(&u);
        if nu == 0.0 {
            return Ok(degenerate(&mut r, n));
        }
        u.iter_mut().for_each(|c| *c /= nu);
        v = central_difference(score, x, t, &u, h)?;
    }
    Ok(PowerIteration {
        sq_spectral_norm: dot(&v, &v),
        direction: u,
        degenerate: false,
    })
}

fn degenerate(r: &mut StreamRng, n: usize) -> PowerIteration {
    PowerIteration {
        sq_spectral_norm: 0.0,
        direction: rng::unit_vec(r, n),
        degenerate: true,
    }
}

fn check_power_args(iters: usize, h: f64) -> Result<()> {
    if iters == 0 {
        return Err(Error::InvalidParameter("power iteration needs at least one round".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidParameter("finite-difference step must be positive".into()));
    }
    Ok(())
}

/// `(s(x + u h/2) − s(x − u h/2)) / h`.
pub fn central_difference<S: ScoreMap + ?Sized>(
    score: &S,
    x: &[f64],
    t: Option<f64>,
    u: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let plus: Vec<f64> = x.iter().zip(u).map(|(a, b)| a + 0.5 * h * b).collect();
    let minus: Vec<f64> = x.iter().zip(u).map(|(a, b)| a - 0.5 * h * b).collect();
    let fp = score.eval(&plus, t)?;
    let fm = score.eval(&minus, t)?;
    Ok(fp.iter().zip(&fm).map(|(a, b)| (a - b) / h).collect())
}

/// Dirichlet-energy penalty `nγ‖J u‖²` at one point, `u` from a fresh power iteration.
pub fn de_penalty<S: ScoreMap + ?Sized>(
    score: &S,
    x: &[f64],
    t: Option<f64>,
    gamma: f64,
    iters: usize,
    h: f64,
    seed: u64,
) -> Result<f64> {
    if gamma == 0.0 {
        return Ok(0.0);
    }
    let pi = jacobian_power_iteration(score, x, t, iters, h, seed)?;
    Ok(score.dim() as f64 * gamma * pi.sq_spectral_norm)
}

/// Batched power iteration on a score network, reusing the forward pass at `x`.
#[derive(Debug)]
pub struct BatchPowerIteration {
    pub sq_spectral_norms: Array1<f64>,
    pub directions: Array2<f64>,
    /// Final finite-difference products `J u`, one row per point.
    pub jvp: Array2<f64>,
    /// Forward passes at `x ± u h/2` from the last round.
    pub plus: ForwardCache,
    pub minus: ForwardCache,
    pub degenerate: Vec<bool>,
}

pub fn power_iteration_batch(
    model: &ScoreModel,
    cache: &ForwardCache,
    x: ArrayView2<f64>,
    t: Option<ArrayView1<f64>>,
    iters: usize,
    h: f64,
    r: &mut StreamRng,
) -> Result<BatchPowerIteration> {
    check_power_args(iters, h)?;
    let (rows, n) = x.dim();
    let mut degenerate = vec![false; rows];
    let mut v = Array2::from_shape_simple_fn((rows, n), || r.sample::<f64, _>(StandardNormal));
    let mut u = Array2::zeros((rows, n));
    let mut last = None;
    for round in 0..iters {
        normalize_rows(&mut v, r, &mut degenerate);
        u = model.vjp_batch(cache, v.view())?;
        normalize_rows(&mut u, r, &mut degenerate);
        let step = &u * (0.5 * h);
        let xp = &x + &step;
        let xm = &x - &step;
        if round + 1 == iters {
            let plus = model.forward_cached(xp.view(), t)?;
            let minus = model.forward_cached(xm.view(), t)?;
            v = (&plus.output - &minus.output) / h;
            last = Some((plus, minus));
        } else {
            v = (model.forward_batch(xp.view(), t)? - model.forward_batch(xm.view(), t)?) / h;
        }
    }
    let (plus, minus) = last.expect("at least one round");
    Ok(BatchPowerIteration {
        sq_spectral_norms: row_sq_norms(&v),
        directions: u,
        jvp: v,
        plus,
        minus,
        degenerate,
    })
}

fn normalize_rows(a: &mut Array2<f64>, r: &mut StreamRng, flags: &mut [bool]) {
    let n = a.ncols();
    for (mut row, flag) in a.rows_mut().into_iter().zip(flags.iter_mut()) {
        let len = row.dot(&row).sqrt();
        if len > 0.0 && len.is_finite() {
            row /= len;
        } else {
            *flag = true;
            row.assign(&Array1::from(rng::unit_vec(r, n)));
        }
    }
}

/// Penalty `nγ‖(s(x + u h/2) − s(x − u h/2))/h‖²` for a frozen direction `u`,
/// with its parameter gradient.
pub fn de_penalty_frozen(
    model: &ScoreModel,
    x: &[f64],
    t: Option<f64>,
    direction: &[f64],
    gamma: f64,
    h: f64,
) -> Result<(f64, Vec<f64>)> {
    let n = model.dim();
    let row = |v: Vec<f64>| Array2::from_shape_vec((1, n), v).unwrap();
    let xp = row(x.iter().zip(direction).map(|(a, b)| a + 0.5 * h * b).collect());
    let xm = row(x.iter().zip(direction).map(|(a, b)| a - 0.5 * h * b).collect());
    let tv = t.map(|t| Array1::from_elem(1, t));
    let plus = model.forward_cached(xp.view(), tv.as_ref().map(|t| t.view()))?;
    let minus = model.forward_cached(xm.view(), tv.as_ref().map(|t| t.view()))?;
    let d = (&plus.output - &minus.output) / h;
    let scale = n as f64 * gamma;
    let penalty = scale * d.iter().map(|v| v * v).sum::<f64>();
    let g_out = &d * (2.0 * scale / h);
    let mut grads = vec![0.0; model.num_params()];
    model.backward(&plus, g_out.view(), Some(&mut grads), false)?;
    model.backward(&minus, (-g_out).view(), Some(&mut grads), false)?;
    Ok((penalty, grads))
}

/// Settings of the regularized objective that the loss needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings {
    pub gamma: f64,
    pub power_iters: usize,
    pub fd_step: f64,
}

/// Batch-mean loss split into its two parts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    /// `mean λ(t)‖s − target‖²`.
    pub dsm: f64,
    /// `mean λ(t)·nγ‖J u‖²`.
    pub de: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.dsm + self.de
    }
}

/// A drawn minibatch of perturbed points and their denoising targets.
struct Perturbed {
    xt: Array2<f64>,
    t: Option<Array1<f64>>,
    target: Array2<f64>,
    weight: Array1<f64>,
}

fn perturb_batch(model: &ScoreModel, x0: ArrayView2<f64>, schedule: &NoiseSchedule, r: &mut StreamRng) -> Result<Perturbed> {
    let (rows, n) = x0.dim();
    if rows == 0 {
        return Err(Error::Empty);
    }
    if n != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: n });
    }
    let times: Array1<f64> = if schedule.is_time_dependent() {
        Array1::from_shape_simple_fn(rows, || r.random::<f64>())
    } else {
        Array1::zeros(rows)
    };
    let noise = Array2::from_shape_simple_fn((rows, n), || r.sample::<f64, _>(StandardNormal));
    let mut xt = Array2::zeros((rows, n));
    let mut target = Array2::zeros((rows, n));
    let mut weight = Array1::zeros(rows);
    for i in 0..rows {
        let (alpha, sigma) = schedule.kernel_stats(times[i])?;
        let var = sigma * sigma;
        weight[i] = var;
        for j in 0..n {
            let y = alpha * x0[[i, j]] + sigma * noise[[i, j]];
            xt[[i, j]] = y;
            target[[i, j]] = -(y - alpha * x0[[i, j]]) / var;
        }
    }
    Ok(Perturbed {
        xt,
        t: model.time_conditioned.then_some(times),
        target,
        weight,
    })
}

/// Weighted denoising score matching without regularization.
pub fn dsm_loss(
    model: &ScoreModel,
    x0: ArrayView2<f64>,
    schedule: &NoiseSchedule,
    r: &mut StreamRng,
    grads: Option<&mut [f64]>,
) -> Result<LossTerms> {
    let batch = perturb_batch(model, x0, schedule, r)?;
    let cache = model.forward_cached(batch.xt.view(), batch.t.as_ref().map(|t| t.view()))?;
    let resid = &cache.output - &batch.target;
    let rows = resid.nrows() as f64;
    let dsm = (row_sq_norms(&resid) * &batch.weight).sum() / rows;
    if let Some(g) = grads {
        let coef = &batch.weight * (2.0 / rows);
        let d_out = &resid * &coef.insert_axis(Axis(1));
        model.backward(&cache, d_out.view(), Some(g), false)?;
    }
    Ok(LossTerms { dsm, de: 0.0 })
}

/// Weighted DSM plus the Dirichlet-energy penalty at every perturbed point.
///
/// Both terms carry the weight `λ(t)`, so at every noise level the pair keeps
/// the relative balance of the unweighted objective. Parameter gradients are
/// accumulated into `grads` when given.
pub fn regularized_dsm_loss(
    model: &ScoreModel,
    x0: ArrayView2<f64>,
    schedule: &NoiseSchedule,
    settings: &LossSettings,
    r: &mut StreamRng,
    grads: Option<&mut [f64]>,
) -> Result<LossTerms> {
    if settings.gamma == 0.0 {
        return dsm_loss(model, x0, schedule, r, grads);
    }
    if !(settings.gamma > 0.0) {
        return Err(Error::InvalidParameter("gamma must be nonnegative".into()));
    }
    let batch = perturb_batch(model, x0, schedule, r)?;
    let tv = batch.t.as_ref().map(|t| t.view());
    let cache = model.forward_cached(batch.xt.view(), tv)?;
    let resid = &cache.output - &batch.target;
    let rows = resid.nrows() as f64;
    let n = model.dim() as f64;
    let pi = power_iteration_batch(
        model,
        &cache,
        batch.xt.view(),
        tv,
        settings.power_iters,
        settings.fd_step,
        r,
    )?;
    let pen = &pi.sq_spectral_norms * (n * settings.gamma);
    let terms = LossTerms {
        dsm: (row_sq_norms(&resid) * &batch.weight).sum() / rows,
        de: (&pen * &batch.weight).sum() / rows,
    };
    if !terms.total().is_finite() {
        let worst = (0..resid.nrows())
            .find(|&i| !(pen[i].is_finite() && resid.row(i).iter().all(|v| v.is_finite())))
            .unwrap_or(0);
        return Err(Error::NonFinite(format!(
            "loss (t = {:?}, |x_t| = {:.3e}, penalty = {:.3e})",
            batch.t.as_ref().map(|t| t[worst]),
            batch.xt.row(worst).dot(&batch.xt.row(worst)).sqrt(),
            pen[worst]
        )));
    }
    if let Some(g) = grads {
        let coef = (&batch.weight * (2.0 / rows)).insert_axis(Axis(1));
        let d_out = &resid * &coef;
        model.backward(&cache, d_out.view(), Some(&mut *g), false)?;
        let mut d_pen = &pi.jvp * &coef * (n * settings.gamma / settings.fd_step);
        model.backward(&pi.plus, d_pen.view(), Some(&mut *g), false)?;
        d_pen.mapv_inplace(|v| -v);
        model.backward(&pi.minus, d_pen.view(), Some(&mut *g), false)?;
    }
    Ok(terms)
}

/// Mean power-iteration estimate of `‖ds‖²` over a set of points.
pub fn mean_sq_spectral_norm(
    model: &ScoreModel,
    points: ArrayView2<f64>,
    t: Option<f64>,
    iters: usize,
    h: f64,
    seed: u64,
) -> Result<f64> {
    let tv = t.map(|t| Array1::from_elem(points.nrows(), t));
    let cache = model.forward_cached(points, tv.as_ref().map(|t| t.view()))?;
    let mut r = rng::stream(seed, 0);
    let pi = power_iteration_batch(model, &cache, points, tv.as_ref().map(|t| t.view()), iters, h, &mut r)?;
    Ok(pi.sq_spectral_norms.mean().unwrap_or(0.0))
}
