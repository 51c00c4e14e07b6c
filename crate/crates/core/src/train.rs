//! Minibatch training of a regularized score model.

use std::io::Write;
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::manifolds::ManifoldSample;
use crate::optim::AdamState;
use crate::regularizer::{regularized_dsm_loss, LossSettings, LossTerms};
use crate::rng;
use crate::score_model::{Checkpoint, OutputScale, ScoreModel};

/// Loss above which training is considered diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Dirichlet-energy strength `γ`.
    pub gamma: f64,
    pub schedule: NoiseSchedule,
    pub iterations: usize,
    pub batch_size: usize,
    /// Jacobian power-iteration rounds per loss evaluation.
    pub power_iters: usize,
    /// Finite-difference step of the Jacobian-vector products.
    pub fd_step: f64,
    pub base_lr: f64,
    pub final_lr: f64,
    pub hidden: Vec<usize>,
    /// Add the reference score `−x / (α_t² + σ_t²)` to the network output.
    pub prior_skip: bool,
    pub seed: u64,
    /// Emit a log row every this many iterations (and at the last one).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.01,
            schedule: NoiseSchedule::single(0.1),
            iterations: 20_000,
            batch_size: 64,
            power_iters: 5,
            fd_step: 1e-3,
            base_lr: 1e-3,
            final_lr: 1e-5,
            hidden: vec![256, 256, 256],
            prior_skip: false,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.gamma >= 0.0) {
            return bad("gamma must be nonnegative");
        }
        if self.power_iters == 0 {
            return bad("power_iters must be at least 1");
        }
        if !(self.fd_step > 0.0) {
            return bad("fd_step must be positive");
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return bad("batch_size and iterations must be positive");
        }
        if !(self.base_lr > 0.0 && self.final_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }

    pub fn loss_settings(&self) -> LossSettings {
        LossSettings {
            gamma: self.gamma,
            power_iters: self.power_iters,
            fd_step: self.fd_step,
        }
    }

    /// Freshly initialized model matching this configuration.
    pub fn init_model(&self, dim: usize) -> Result<ScoreModel> {
        let mut model = ScoreModel::init(
            dim,
            &self.hidden,
            self.schedule.is_time_dependent(),
            OutputScale::InverseSigma(self.schedule),
            rng::mix(self.seed, 0x1417),
        )?;
        model.prior_skip = self.prior_skip;
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub lr: f64,
    pub dsm_loss: f64,
    pub de_penalty: f64,
    pub wallclock: f64,
}

pub const LOG_HEADER: &str = "iteration,lr,dsm_loss,de_penalty,wallclock";

impl LogRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:.3}",
            self.iteration, self.lr, self.dsm_loss, self.de_penalty, self.wallclock
        )
    }
}

pub fn write_log<W: Write>(mut w: W, rows: &[LogRow]) -> Result<()> {
    let io = |e| Error::io("<training log>", e);
    writeln!(w, "{LOG_HEADER}").map_err(io)?;
    for r in rows {
        writeln!(w, "{}", r.csv()).map_err(io)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
}

impl TrainOutcome {
    pub fn model(&self) -> &ScoreModel {
        &self.checkpoint.model
    }
}

/// Trains a fresh model on the rows of `data`.
pub fn train(data: &ManifoldSample, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_resumable(&data.points, cfg, None, None)
}

/// Trains, optionally continuing from `resume` and optionally stopping after
/// `stop_at` completed iterations.
///
/// Each iteration draws its minibatch and noise from a stream indexed by the
/// iteration number, so a resumed run reproduces an uninterrupted one exactly.
pub fn train_resumable(
    points: &Array2<f64>,
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
    stop_at: Option<usize>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (count, dim) = points.dim();
    if count == 0 {
        return Err(Error::Empty);
    }
    let (mut model, mut opt, start) = match resume {
        Some(ck) => {
            if ck.schedule != cfg.schedule || ck.gamma != cfg.gamma || ck.model.dim() != dim {
                return Err(Error::ConfigMismatch(
                    "checkpoint schedule, gamma or dimension differs from the config".into(),
                ));
            }
            let opt = ck
                .optimizer
                .ok_or_else(|| Error::ConfigMismatch("checkpoint has no optimizer state".into()))?;
            (ck.model, opt, ck.iteration)
        }
        None => {
            let model = cfg.init_model(dim)?;
            let opt = AdamState::new(model.num_params(), cfg.base_lr, cfg.final_lr, cfg.iterations);
            (model, opt, 0)
        }
    };
    let end = stop_at.unwrap_or(cfg.iterations).min(cfg.iterations);
    let settings = cfg.loss_settings();
    let stream_seed = rng::mix(cfg.seed, 0x7261_696e);
    let clock = Instant::now();
    let mut log = Vec::new();
    let mut grads = vec![0.0; model.num_params()];
    let mut batch = Array2::zeros((cfg.batch_size, dim));

    let snapshot = |model: &ScoreModel, opt: &AdamState, iteration: usize| Checkpoint {
        model: model.clone(),
        schedule: cfg.schedule,
        gamma: cfg.gamma,
        iteration,
        optimizer: Some(opt.clone()),
    };

    for it in start..end {
        let mut r = rng::stream(stream_seed, it as u64);
        for mut row in batch.rows_mut() {
            row.assign(&points.row(r.random_range(0..count)));
        }
        grads.iter_mut().for_each(|g| *g = 0.0);
        let lr = opt.lr();
        let terms = regularized_dsm_loss(&model, batch.view(), &cfg.schedule, &settings, &mut r, Some(&mut grads))
            .and_then(|terms| {
                if terms.total() > DIVERGENCE_LOSS {
                    Err(Error::NonFinite(format!("loss {:.3e} above divergence threshold", terms.total())))
                } else {
                    Ok(terms)
                }
            })
            .and_then(|terms| opt.step(&mut model.params, &grads).map(|_| terms));
        let terms: LossTerms = match terms {
            Ok(t) => t,
            Err(e) => {
                return Err(Error::Divergence {
                    iteration: it,
                    detail: e.to_string(),
                    last_good: Some(Box::new(snapshot(&model, &opt, it))),
                })
            }
        };
        if (it + 1) % cfg.log_every.max(1) == 0 || it + 1 == cfg.iterations || it == 0 {
            log.push(LogRow {
                iteration: it + 1,
                lr,
                dsm_loss: terms.dsm,
                de_penalty: terms.de,
                wallclock: clock.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(TrainOutcome {
        checkpoint: snapshot(&model, &opt, end),
        log,
    })
}
