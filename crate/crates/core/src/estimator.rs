//! Topological dimension from an adversarial probe of a learned score.
//!
//! A score trained with the Dirichlet-energy penalty behaves like
//! `−x / (σ² + (n/n⊥)γ)` in the normal directions of the data. The probe
//! measures that slope and the estimator inverts it for `n⊥`.

use std::io::Write;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{pgd_l2, AttackConfig};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::linalg::{dist, norm, sub};
use crate::rng;
use crate::score_model::ScoreMap;

/// Below this gap between `δ⁻¹` and `σ²` the estimate is taken as `n`.
pub const DIVISION_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TDFlags {
    pub division_guard: bool,
    pub negative_normal_var: bool,
    pub attack_fallback: bool,
}

impl TDFlags {
    pub fn labels(&self) -> String {
        let mut out = Vec::new();
        if self.division_guard {
            out.push("division_guard");
        }
        if self.negative_normal_var {
            out.push("negative_normal_var");
        }
        if self.attack_fallback {
            out.push("attack_fallback");
        }
        out.join("|")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TDEstimate {
    pub x: Vec<f64>,
    pub x_adv: Vec<f64>,
    /// Measured slope `‖s(x̃) − s(x)‖ / ‖x̃ − x‖`.
    pub delta: f64,
    pub n_hat: f64,
    pub n_hat_clamped: f64,
    pub flags: TDFlags,
}

/// Inverts a measured slope: `n̂ = n − nγ / (δ⁻¹ − σ²)`.
///
/// Returns `(raw, clamped, flags)`.
pub fn td_from_slope(n: usize, gamma: f64, sigma: f64, delta: f64) -> (f64, f64, TDFlags) {
    let nf = n as f64;
    let gap = 1.0 / delta - sigma * sigma;
    let mut flags = TDFlags::default();
    let raw = if gap.abs() < DIVISION_GUARD {
        flags.division_guard = true;
        nf
    } else {
        nf - nf * gamma / gap
    };
    let clamped = if gap < 0.0 {
        flags.negative_normal_var = true;
        nf
    } else {
        raw.clamp(0.0, nf)
    };
    (raw, clamped, flags)
}

/// Probes `score` at `x` with an L2 budget of `σ` and converts the measured
/// slope into a dimension estimate.
///
/// `gamma` and `sigma` must be the values the score was trained with.
pub fn estimate_td<S: ScoreMap + ?Sized>(
    score: &S,
    x: &[f64],
    t: Option<f64>,
    gamma: f64,
    sigma: f64,
    attack: &AttackConfig,
) -> Result<TDEstimate> {
    if !(sigma > 0.0) || !(gamma >= 0.0) {
        return Err(Error::InvalidParameter("need sigma > 0 and gamma ≥ 0".into()));
    }
    let n = score.dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x.len() });
    }
    let probe = pgd_l2(score, x, t, &attack.with_epsilon(sigma))?;
    let step = dist(&probe.x_adv, x);
    if step == 0.0 {
        return Err(Error::NullProbe);
    }
    let s0 = score.eval(x, t)?;
    let s1 = score.eval(&probe.x_adv, t)?;
    let delta = norm(&sub(&s1, &s0)) / step;
    if !delta.is_finite() {
        return Err(Error::NonFinite("score slope".into()));
    }
    let (n_hat, n_hat_clamped, mut flags) = td_from_slope(n, gamma, sigma, delta);
    flags.attack_fallback = probe.fallback;
    Ok(TDEstimate {
        x: x.to_vec(),
        x_adv: probe.x_adv,
        delta,
        n_hat,
        n_hat_clamped,
        flags,
    })
}

/// [`estimate_td`] over every row of `points`, in parallel. Each point gets
/// its own fallback seed derived from `attack.seed` and its index.
pub fn estimate_td_all<S: ScoreMap + ?Sized>(
    score: &S,
    points: &Array2<f64>,
    t: Option<f64>,
    gamma: f64,
    sigma: f64,
    attack: &AttackConfig,
) -> Result<Vec<TDEstimate>> {
    (0..points.nrows())
        .into_par_iter()
        .map(|i| {
            let x = points.row(i).to_vec();
            let cfg = attack.with_seed(rng::mix(attack.seed, i as u64));
            estimate_td(score, &x, t, gamma, sigma, &cfg)
        })
        .collect()
}

/// Estimates along the noise-free decay path `α_t x`, using the marginal
/// `σ_t` as the probe budget and in the inversion; `γ` is held fixed.
pub fn estimate_td_over_time<S: ScoreMap + ?Sized>(
    score: &S,
    x: &[f64],
    times: &[f64],
    gamma: f64,
    schedule: &NoiseSchedule,
    attack: &AttackConfig,
) -> Result<Vec<TDEstimate>> {
    if times.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidParameter("times must be sorted ascending".into()));
    }
    let conditioned = schedule.is_time_dependent();
    times
        .iter()
        .map(|&t| {
            let xt = schedule.decay(x, t)?;
            let sigma_t = schedule.sigma(t)?;
            estimate_td(score, &xt, conditioned.then_some(t), gamma, sigma_t, attack)
        })
        .collect()
}

/// Mean of `(n̂_clamped − truth)²`.
pub fn evaluate_mse(estimates: &[TDEstimate], truth: &[usize]) -> Result<f64> {
    let values: Vec<f64> = estimates.iter().map(|e| e.n_hat_clamped).collect();
    mse(&values, truth)
}

/// Same as [`evaluate_mse`] after rounding each estimate to the nearest integer.
pub fn evaluate_rounded_mse(estimates: &[TDEstimate], truth: &[usize]) -> Result<f64> {
    let values: Vec<f64> = estimates.iter().map(|e| e.n_hat_clamped.round()).collect();
    mse(&values, truth)
}

pub fn mse(values: &[f64], truth: &[usize]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    if values.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: values.len() });
    }
    let total: f64 = values.iter().zip(truth).map(|(v, &t)| (v - t as f64).powi(2)).sum();
    Ok(total / values.len() as f64)
}

/// One CSV row per estimate: index, coordinates, probe coordinates, slope,
/// raw and clamped estimate, rounded estimate, flags.
pub fn write_results_csv<W: Write>(mut w: W, estimates: &[TDEstimate], extra: &[(&str, String)]) -> Result<()> {
    let io = |e| Error::io("<results>", e);
    let n = estimates.first().map_or(0, |e| e.x.len());
    let mut header: Vec<String> = vec!["index".into()];
    header.extend((0..n).map(|j| format!("x{j}")));
    header.extend((0..n).map(|j| format!("adv{j}")));
    header.extend(["delta", "n_hat", "n_hat_clamped", "n_hat_rounded", "flags"].map(String::from));
    header.extend(extra.iter().map(|(k, _)| k.to_string()));
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for (i, e) in estimates.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(e.x.iter().map(|v| v.to_string()));
        row.extend(e.x_adv.iter().map(|v| v.to_string()));
        row.push(e.delta.to_string());
        row.push(e.n_hat.to_string());
        row.push(e.n_hat_clamped.to_string());
        row.push(e.n_hat_clamped.round().to_string());
        row.push(e.flags.labels());
        row.extend(extra.iter().map(|(_, v)| v.clone()));
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    Ok(())
}
