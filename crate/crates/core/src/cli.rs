//! Experiment driver behind the `scoredim` binary.
//!
//! Every subcommand resolves a [`RunConfig`] from an optional TOML file plus
//! command-line overrides, and stamps the config hash into each output row.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numerical
//! failure, 3 I/O or file-format error. `SCOREDIM_WORKERS` caps the number of
//! worker threads.

use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::AttackConfig;
use crate::baselines::{mind_ml, mle_levina_bickel, MleVariant};
use crate::diffusion::{NoiseSchedule, VPSchedule};
use crate::error::{Error, Result};
use crate::estimator::{estimate_td_all, estimate_td_over_time, evaluate_mse, evaluate_rounded_mse, write_results_csv, TDEstimate};
use crate::manifolds::{self, ManifoldSample};
use crate::score_model::Checkpoint;
use crate::train::{train_resumable, TrainConfig, LOG_HEADER};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "SCOREDIM_WORKERS";

/// A dimension estimator selectable in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    /// Adversarial probe of the regularized score map.
    ScoreMap,
    Mle(usize),
    Mind(usize),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::ScoreMap => write!(f, "sm"),
            Method::Mle(k) => write!(f, "mle_{k}"),
            Method::Mind(k) => write!(f, "mind_{k}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let bad = || Error::InvalidParameter(format!("unknown estimator {s:?} (expected sm, mle_K or mind_K)"));
        if lower == "sm" {
            return Ok(Method::ScoreMap);
        }
        let (kind, k) = lower.split_once('_').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        match kind {
            "mle" => Ok(Method::Mle(k)),
            "mind" => Ok(Method::Mind(k)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// Which synthetic dataset to build, and with what parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    /// `swirl`, `line_disk_ball`, `hyper_twin_peaks`, `gaussian` or `isolated_point`.
    pub name: String,
    pub count: usize,
    pub seed: u64,
    /// Gaussian noise added to swirl points.
    pub noise: f64,
    /// Intrinsic dimension of hyper twin peaks.
    pub intrinsic_dim: usize,
    /// Ambient dimension of the Gaussian and isolated-point datasets.
    pub ambient_dim: usize,
    /// Per-coordinate variance of the Gaussian dataset.
    pub variance: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            name: "swirl".into(),
            count: 1000,
            seed: 0,
            noise: 0.0,
            intrinsic_dim: 10,
            ambient_dim: 16,
            variance: 1.0,
        }
    }
}

impl DatasetSpec {
    pub fn generate(&self) -> Result<ManifoldSample> {
        match self.name.as_str() {
            "swirl" => manifolds::gen_swirl(self.count, self.noise, self.seed),
            "line_disk_ball" => manifolds::gen_line_disk_ball(self.count, self.seed),
            "hyper_twin_peaks" => manifolds::gen_hyper_twin_peaks(self.intrinsic_dim, self.count, self.seed),
            "gaussian" => manifolds::gen_isotropic_gaussian(self.ambient_dim, self.variance, self.count, self.seed),
            "isolated_point" => manifolds::gen_isolated_point(self.ambient_dim, self.count),
            other => Err(Error::InvalidParameter(format!("unknown dataset {other:?}"))),
        }
    }
}

/// Everything a run needs; reproducible from this value alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    /// Standardize every coordinate before training, estimating and baselines.
    pub normalize: bool,
    pub train: TrainConfig,
    /// PGD steps of the probe; its budget is always the noise scale.
    pub attack_iters: usize,
    pub estimators: Vec<Method>,
    pub mle_variant: MleVariant,
    pub trials: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            normalize: true,
            train: TrainConfig::default(),
            attack_iters: 10,
            estimators: vec![
                Method::Mle(10),
                Method::Mle(20),
                Method::Mind(10),
                Method::Mind(20),
                Method::ScoreMap,
            ],
            mle_variant: MleVariant::default(),
            trials: 1,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.attack_iters == 0 {
            return Err(Error::InvalidParameter("attack_iters must be positive".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be positive".into()));
        }
        Ok(())
    }

    pub fn attack(&self) -> AttackConfig {
        // The budget is replaced by σ (or σ_t) at every probe.
        AttackConfig::pgd(self.attack_iters, 1.0).with_seed(self.train.seed)
    }

    /// The dataset as the models see it: loaded rows, standardized if configured.
    pub fn prepare(&self, sample: &ManifoldSample) -> Result<ManifoldSample> {
        if self.normalize {
            Ok(manifolds::normalize(sample)?.0)
        } else {
            Ok(sample.clone())
        }
    }
}

/// Time at which a checkpoint is probed for a plain estimate.
fn probe_time(schedule: &NoiseSchedule) -> Option<f64> {
    schedule.is_time_dependent().then_some(0.0)
}

fn create_output(path: &Path, force: bool) -> Result<BufWriter<File>> {
    if path.exists() && !force {
        return Err(Error::WouldOverwrite(path.to_path_buf()));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub name: String,
    pub count: usize,
    pub ambient_dim: usize,
    pub mean_true_td: f64,
}

impl fmt::Display for GenerateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} points in R^{}, mean true dimension {:.3}",
            self.name, self.count, self.ambient_dim, self.mean_true_td
        )
    }
}

/// Writes the configured dataset to `out` (and optionally a CSV view).
pub fn cmd_generate(cfg: &RunConfig, out: &Path, csv: Option<&Path>, force: bool) -> Result<GenerateSummary> {
    let sample = cfg.dataset.generate()?;
    let mut w = create_output(out, force)?;
    sample.write_to(&mut w)?;
    finish(w, out)?;
    if let Some(csv) = csv {
        let mut w = create_output(csv, force)?;
        sample.write_csv(&mut w)?;
        finish(w, csv)?;
    }
    Ok(GenerateSummary {
        name: sample.name.clone(),
        count: sample.count(),
        ambient_dim: sample.ambient_dim(),
        mean_true_td: sample.true_td.iter().sum::<usize>() as f64 / sample.count() as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub iterations: usize,
    pub first_loss: f64,
    pub final_loss: f64,
    pub wallclock: f64,
}

impl fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "trained to iteration {}: loss {:.4} -> {:.4} in {:.1}s",
            self.iterations, self.first_loss, self.final_loss, self.wallclock
        )
    }
}

/// Path where the last good parameters go when training diverges.
pub fn last_good_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".last_good");
    PathBuf::from(name)
}

/// Trains on the dataset file at `data`, writing a checkpoint and a CSV log.
pub fn cmd_train(
    cfg: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    log: &Path,
    resume: Option<&Path>,
    stop_at: Option<usize>,
    force: bool,
) -> Result<TrainSummary> {
    cfg.validate()?;
    let sample = cfg.prepare(&manifolds::load_sample(data)?)?;
    let resume = resume.map(Checkpoint::load).transpose()?;
    for p in [checkpoint, log] {
        if p.exists() && !force {
            return Err(Error::WouldOverwrite(p.to_path_buf()));
        }
    }
    let outcome = match train_resumable(&sample.points, &cfg.train, resume, stop_at) {
        Ok(o) => o,
        Err(Error::Divergence { iteration, detail, last_good }) => {
            if let Some(ck) = &last_good {
                ck.save(last_good_path(checkpoint))?;
            }
            return Err(Error::Divergence { iteration, detail, last_good });
        }
        Err(e) => return Err(e),
    };
    outcome.checkpoint.save(checkpoint)?;
    let hash = cfg.hash();
    let mut w = create_output(log, true)?;
    let io = |e| Error::io(log, e);
    writeln!(w, "{LOG_HEADER},config_hash").map_err(io)?;
    for row in &outcome.log {
        writeln!(w, "{},{hash}", row.csv()).map_err(io)?;
    }
    finish(w, log)?;
    let total = |r: &crate::train::LogRow| r.dsm_loss + r.de_penalty;
    Ok(TrainSummary {
        iterations: outcome.checkpoint.iteration,
        first_loss: outcome.log.first().map_or(f64::NAN, total),
        final_loss: outcome.log.last().map_or(f64::NAN, total),
        wallclock: outcome.log.last().map_or(0.0, |r| r.wallclock),
    })
}

/// Errors unless the checkpoint was trained with the configured `γ` and noise
/// model on data of the given dimension.
pub fn check_checkpoint(ck: &Checkpoint, cfg: &RunConfig, dim: usize) -> Result<()> {
    if ck.gamma != cfg.train.gamma {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint gamma {} differs from configured {}",
            ck.gamma, cfg.train.gamma
        )));
    }
    if ck.schedule != cfg.train.schedule {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint noise model {:?} differs from configured {:?}",
            ck.schedule, cfg.train.schedule
        )));
    }
    if ck.model.dim() != dim {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint dimension {} differs from data dimension {dim}",
            ck.model.dim()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSummary {
    pub count: usize,
    pub mse: f64,
    pub rounded_mse: f64,
    pub flagged: usize,
}

impl fmt::Display for EstimateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} estimates: MSE {:.4} (rounded {:.4}), {} flagged",
            self.count, self.mse, self.rounded_mse, self.flagged
        )
    }
}

/// Probes every data point and writes one CSV row per estimate.
pub fn cmd_estimate(cfg: &RunConfig, data: &Path, checkpoint: &Path, out: &Path, force: bool) -> Result<EstimateSummary> {
    cfg.validate()?;
    let sample = cfg.prepare(&manifolds::load_sample(data)?)?;
    let ck = Checkpoint::load(checkpoint)?;
    check_checkpoint(&ck, cfg, sample.ambient_dim())?;
    let t = probe_time(&ck.schedule);
    let sigma = ck.schedule.sigma(t.unwrap_or(0.0))?;
    let est = estimate_td_all(&ck.model, &sample.points, t, ck.gamma, sigma, &cfg.attack())?;
    let mut w = create_output(out, force)?;
    let hash = cfg.hash();
    write_results_csv(&mut w, &est, &[("config_hash", hash)])?;
    finish(w, out)?;
    Ok(EstimateSummary {
        count: est.len(),
        mse: evaluate_mse(&est, &sample.true_td)?,
        rounded_mse: evaluate_rounded_mse(&est, &sample.true_td)?,
        flagged: est.iter().filter(|e| e.flags != Default::default()).count(),
    })
}

/// Estimates for selected points along their decay paths; one CSV row per
/// point and time.
pub fn cmd_estimate_over_time(
    cfg: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    times: &[f64],
    points: &[usize],
    out: &Path,
    force: bool,
) -> Result<Vec<(usize, Vec<TDEstimate>)>> {
    cfg.validate()?;
    let sample = cfg.prepare(&manifolds::load_sample(data)?)?;
    let ck = Checkpoint::load(checkpoint)?;
    check_checkpoint(&ck, cfg, sample.ambient_dim())?;
    if let Some(&bad) = points.iter().find(|&&i| i >= sample.count()) {
        return Err(Error::InvalidParameter(format!("point index {bad} out of range")));
    }
    let attack = cfg.attack();
    let series: Vec<(usize, Vec<TDEstimate>)> = points
        .par_iter()
        .map(|&i| {
            estimate_td_over_time(&ck.model, &sample.point(i), times, ck.gamma, &ck.schedule, &attack).map(|e| (i, e))
        })
        .collect::<Result<_>>()?;
    let mut w = create_output(out, force)?;
    let io = |e| Error::io(out, e);
    let n = sample.ambient_dim();
    let coords: Vec<String> = (0..n).map(|j| format!("x{j}")).collect();
    writeln!(w, "point,t,sigma_t,{},delta,n_hat,n_hat_clamped,flags,config_hash", coords.join(",")).map_err(io)?;
    let hash = cfg.hash();
    for (i, est) in &series {
        for (t, e) in times.iter().zip(est) {
            let xs: Vec<String> = e.x.iter().map(f64::to_string).collect();
            writeln!(
                w,
                "{i},{t},{},{},{},{},{},{},{hash}",
                ck.schedule.sigma(*t)?,
                xs.join(","),
                e.delta,
                e.n_hat,
                e.n_hat_clamped,
                e.flags.labels()
            )
            .map_err(io)?;
        }
    }
    finish(w, out)?;
    Ok(series)
}

/// Per-point estimates of a kNN method and their MSE against the truth.
/// MiND gives one global value, repeated for every point.
pub fn baseline_estimates(
    points: &ndarray::Array2<f64>,
    truth: &[usize],
    method: Method,
    variant: MleVariant,
) -> Result<(Vec<Option<f64>>, f64)> {
    match method {
        Method::Mle(k) => {
            let r = mle_levina_bickel(points, k, variant)?;
            let mse = r.mse(truth)?;
            Ok((r.per_point, mse))
        }
        Method::Mind(k) => {
            let r = mind_ml(points, k)?;
            let mse = r.mse(truth)?;
            Ok((vec![Some(r.d_hat as f64); points.nrows()], mse))
        }
        Method::ScoreMap => Err(Error::InvalidParameter("sm is not a kNN baseline".into())),
    }
}

/// Runs every configured kNN estimator; returns `(method, MSE)` pairs.
pub fn cmd_baseline(cfg: &RunConfig, data: &Path, out: &Path, force: bool) -> Result<Vec<(Method, f64)>> {
    let sample = cfg.prepare(&manifolds::load_sample(data)?)?;
    let methods: Vec<Method> = cfg.estimators.iter().copied().filter(|m| *m != Method::ScoreMap).collect();
    if methods.is_empty() {
        return Err(Error::InvalidParameter("no kNN estimator configured".into()));
    }
    let results = methods
        .iter()
        .map(|&m| baseline_estimates(&sample.points, &sample.true_td, m, cfg.mle_variant).map(|r| (m, r)))
        .collect::<Result<Vec<_>>>()?;
    let mut w = create_output(out, force)?;
    let io = |e| Error::io(out, e);
    let hash = cfg.hash();
    writeln!(w, "method,k,index,estimate,true_td,config_hash").map_err(io)?;
    for (m, (est, _)) in &results {
        let (name, k) = match m {
            Method::Mle(k) => ("mle", k),
            Method::Mind(k) => ("mind", k),
            Method::ScoreMap => unreachable!(),
        };
        for (i, (e, t)) in est.iter().zip(&sample.true_td).enumerate() {
            let v = e.map_or_else(|| "excluded".to_string(), |v| v.to_string());
            writeln!(w, "{name},{k},{i},{v},{t},{hash}").map_err(io)?;
        }
    }
    finish(w, out)?;
    Ok(results.into_iter().map(|(m, (_, mse))| (m, mse)).collect())
}

/// Benchmarks in the dimension-estimation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Benchmark {
    Swirl,
    /// Swirl with Gaussian noise of scale 0.01.
    SwirlNoisy,
    LineDiskBall,
    HyperTwinPeaks(usize),
}

impl Benchmark {
    pub const ALL: [Benchmark; 5] = [
        Benchmark::Swirl,
        Benchmark::SwirlNoisy,
        Benchmark::LineDiskBall,
        Benchmark::HyperTwinPeaks(10),
        Benchmark::HyperTwinPeaks(30),
    ];

    pub fn dataset(&self, count: usize, seed: u64) -> DatasetSpec {
        let base = DatasetSpec { count, seed, ..DatasetSpec::default() };
        match *self {
            Benchmark::Swirl => DatasetSpec { name: "swirl".into(), ..base },
            Benchmark::SwirlNoisy => DatasetSpec { name: "swirl".into(), noise: 0.01, ..base },
            Benchmark::LineDiskBall => DatasetSpec { name: "line_disk_ball".into(), ..base },
            Benchmark::HyperTwinPeaks(d) => DatasetSpec { name: "hyper_twin_peaks".into(), intrinsic_dim: d, ..base },
        }
    }

    /// Ground-truth dimension column as printed in the table.
    pub fn true_td_label(&self) -> String {
        match self {
            Benchmark::Swirl | Benchmark::SwirlNoisy => "1".into(),
            Benchmark::LineDiskBall => "1-3".into(),
            Benchmark::HyperTwinPeaks(d) => d.to_string(),
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Benchmark::Swirl => write!(f, "swirl"),
            Benchmark::SwirlNoisy => write!(f, "swirl_noisy"),
            Benchmark::LineDiskBall => write!(f, "line_disk_ball"),
            Benchmark::HyperTwinPeaks(d) => write!(f, "htp{d}"),
        }
    }
}

impl FromStr for Benchmark {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "swirl" => Ok(Benchmark::Swirl),
            "swirl_noisy" => Ok(Benchmark::SwirlNoisy),
            "line_disk_ball" => Ok(Benchmark::LineDiskBall),
            other => other
                .strip_prefix("htp")
                .and_then(|d| d.parse().ok())
                .filter(|&d: &usize| d > 0)
                .map(Benchmark::HyperTwinPeaks)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown benchmark {s:?}"))),
        }
    }
}

impl TryFrom<String> for Benchmark {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Benchmark> for String {
    fn from(b: Benchmark) -> String {
        b.to_string()
    }
}

/// Size presets for [`cmd_table3`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// 5 trials, 20000 iterations, three hidden layers of 256.
    Full,
    /// 2 trials, 5000 iterations, three hidden layers of 64.
    Reduced,
}

impl Preset {
    pub fn apply(&self, cfg: &mut RunConfig) {
        match self {
            Preset::Full => {
                cfg.trials = 5;
                cfg.train.iterations = 20_000;
                cfg.train.hidden = vec![256; 3];
            }
            Preset::Reduced => {
                cfg.trials = 2;
                cfg.train.iterations = 5_000;
                cfg.train.hidden = vec![64; 3];
            }
        }
    }
}

/// MSE of one method on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub benchmark: Benchmark,
    pub trial: usize,
    pub seed: u64,
    pub method: Method,
    pub mse: f64,
}

/// One table cell: a method's MSE averaged over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3Cell {
    pub benchmark: Benchmark,
    pub true_td: String,
    pub method: Method,
    pub mse_mean: f64,
    pub mse_per_trial: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3 {
    pub config_hash: String,
    pub trials: usize,
    pub cells: Vec<Table3Cell>,
}

impl Table3 {
    pub fn cell(&self, benchmark: Benchmark, method: Method) -> Option<&Table3Cell> {
        self.cells.iter().find(|c| c.benchmark == benchmark && c.method == method)
    }
}

impl fmt::Display for Table3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut methods: Vec<Method> = Vec::new();
        for c in &self.cells {
            if !methods.contains(&c.method) {
                methods.push(c.method);
            }
        }
        let heads: Vec<String> = methods.iter().map(|m| format!("{:>9}", m.to_string())).collect();
        writeln!(f, "{:<16}{:>6} {}", "benchmark", "TD", heads.join(" "))?;
        let mut seen: Vec<Benchmark> = Vec::new();
        for c in &self.cells {
            if seen.contains(&c.benchmark) {
                continue;
            }
            seen.push(c.benchmark);
            let vals: Vec<String> = methods
                .iter()
                .map(|&m| self.cell(c.benchmark, m).map_or(format!("{:>9}", "-"), |c| format!("{:>9.3}", c.mse_mean)))
                .collect();
            writeln!(f, "{:<16}{:>6} {}", c.benchmark.to_string(), c.true_td, vals.join(" "))?;
        }
        Ok(())
    }
}

/// Runs every configured method on one benchmark for one trial.
///
/// The dataset, training and probe seeds are the configured ones plus the
/// trial index.
pub fn run_trial(cfg: &RunConfig, benchmark: Benchmark, trial: usize) -> Result<Vec<TrialResult>> {
    let seed = cfg.dataset.seed + trial as u64;
    let sample = cfg.prepare(&benchmark.dataset(cfg.dataset.count, seed).generate()?)?;
    cfg.estimators
        .iter()
        .map(|&method| {
            let mse = match method {
                Method::ScoreMap => {
                    let mut train_cfg = cfg.train.clone();
                    train_cfg.seed = cfg.train.seed + trial as u64;
                    let ck = train_resumable(&sample.points, &train_cfg, None, None)?.checkpoint;
                    let t = probe_time(&ck.schedule);
                    let sigma = ck.schedule.sigma(t.unwrap_or(0.0))?;
                    let attack = cfg.attack().with_seed(train_cfg.seed);
                    let est = estimate_td_all(&ck.model, &sample.points, t, ck.gamma, sigma, &attack)?;
                    evaluate_mse(&est, &sample.true_td)?
                }
                m => baseline_estimates(&sample.points, &sample.true_td, m, cfg.mle_variant)?.1,
            };
            Ok(TrialResult { benchmark, trial, seed, method, mse })
        })
        .collect()
}

/// Every benchmark × trial × method, averaged into table cells.
pub fn run_table3(cfg: &RunConfig, benchmarks: &[Benchmark]) -> Result<(Table3, Vec<TrialResult>)> {
    cfg.validate()?;
    let jobs: Vec<(Benchmark, usize)> = benchmarks
        .iter()
        .flat_map(|&b| (0..cfg.trials).map(move |t| (b, t)))
        .collect();
    let rows: Vec<TrialResult> = jobs
        .into_par_iter()
        .map(|(b, t)| run_trial(cfg, b, t))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut cells = Vec::new();
    for &b in benchmarks {
        for &m in &cfg.estimators {
            let mine: Vec<&TrialResult> = rows.iter().filter(|r| r.benchmark == b && r.method == m).collect();
            let per: Vec<f64> = mine.iter().map(|r| r.mse).collect();
            cells.push(Table3Cell {
                benchmark: b,
                true_td: b.true_td_label(),
                method: m,
                mse_mean: per.iter().sum::<f64>() / per.len() as f64,
                mse_per_trial: per,
                seeds: mine.iter().map(|r| r.seed).collect(),
            });
        }
    }
    Ok((
        Table3 {
            config_hash: cfg.hash(),
            trials: cfg.trials,
            cells,
        },
        rows,
    ))
}

/// Runs the table and writes `table3.json` and `table3.csv` to the output directory.
pub fn cmd_table3(cfg: &RunConfig, benchmarks: &[Benchmark], force: bool) -> Result<Table3> {
    let json_path = cfg.output_dir.join("table3.json");
    let csv_path = cfg.output_dir.join("table3.csv");
    for p in [&json_path, &csv_path] {
        if p.exists() && !force {
            return Err(Error::WouldOverwrite(p.clone()));
        }
    }
    let (table, rows) = run_table3(cfg, benchmarks)?;
    let mut w = create_output(&json_path, true)?;
    serde_json::to_writer_pretty(&mut w, &table).map_err(|e| Error::io(&json_path, e.into()))?;
    finish(w, &json_path)?;
    let mut w = create_output(&csv_path, true)?;
    let io = |e| Error::io(&csv_path, e);
    writeln!(w, "benchmark,trial,seed,method,mse,config_hash").map_err(io)?;
    for r in &rows {
        writeln!(w, "{},{},{},{},{},{}", r.benchmark, r.trial, r.seed, r.method, r.mse, table.config_hash).map_err(io)?;
    }
    finish(w, &csv_path)?;
    Ok(table)
}

/// Exit code for an error: 1 usage/configuration, 2 numerical, 3 I/O.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::NonFinite(_)
        | Error::NonFiniteLayer { .. }
        | Error::NullProbe
        | Error::SingularCovariance
        | Error::NoConvergence { .. }
        | Error::Divergence { .. }
        | Error::AllPointsExcluded
        | Error::DegenerateCoordinate(_) => 2,
        Error::DimensionMismatch { .. }
        | Error::InvalidParameter(_)
        | Error::InsufficientPoints
        | Error::TooFewPoints { .. }
        | Error::Empty
        | Error::ConfigMismatch(_)
        | Error::WouldOverwrite(_) => 1,
    }
}

#[derive(Debug, Parser)]
#[command(name = "scoredim", version, about = "Dimension estimation from regularized score models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset file.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write a plain CSV view of the points.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Train a score model on a dataset file.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Training log CSV; defaults to `<checkpoint>.log.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many completed iterations; the learning-rate
        /// schedule still spans `--iterations`.
        #[arg(long)]
        stop_at: Option<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Estimate per-point dimension with a trained checkpoint.
    Estimate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Estimate along the decay path at these times instead.
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        /// Point indices used with `--times`.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        points: Vec<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Run the kNN baseline estimators on a dataset file.
    Baseline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Run the full benchmark table.
    Table3 {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "swirl,swirl_noisy,line_disk_ball,htp10,htp30")]
        benchmarks: Vec<Benchmark>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        force: bool,
    },
}

/// Flags mirroring [`RunConfig`]; each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Dataset seed; trial `i` uses this plus `i`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub intrinsic_dim: Option<usize>,
    #[arg(long)]
    pub ambient_dim: Option<usize>,
    #[arg(long)]
    pub variance: Option<f64>,
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Single noise scale (selects the single-scale noise model).
    #[arg(long, conflicts_with = "vp")]
    pub sigma: Option<f64>,
    /// Use the VP diffusion schedule with default parameters.
    #[arg(long)]
    pub vp: bool,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub power_iters: Option<usize>,
    #[arg(long)]
    pub fd_step: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub final_lr: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub prior_skip: bool,
    #[arg(long)]
    pub train_seed: Option<u64>,
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub attack_iters: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<Method>>,
    /// Use the `(k − 2)`-denominator MLE.
    #[arg(long)]
    pub mle_bias_corrected: bool,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        set!(c.dataset.name, self.dataset);
        set!(c.dataset.count, self.count);
        set!(c.dataset.seed, self.seed);
        set!(c.dataset.noise, self.noise);
        set!(c.dataset.intrinsic_dim, self.intrinsic_dim);
        set!(c.dataset.ambient_dim, self.ambient_dim);
        set!(c.dataset.variance, self.variance);
        if self.no_normalize {
            c.normalize = false;
        }
        set!(c.train.gamma, self.gamma);
        if let Some(sigma) = self.sigma {
            c.train.schedule = NoiseSchedule::single(sigma);
        }
        if self.vp {
            c.train.schedule = NoiseSchedule::Vp(VPSchedule::default());
        }
        set!(c.train.iterations, self.iterations);
        set!(c.train.batch_size, self.batch_size);
        set!(c.train.power_iters, self.power_iters);
        set!(c.train.fd_step, self.fd_step);
        set!(c.train.base_lr, self.lr);
        set!(c.train.final_lr, self.final_lr);
        set!(c.train.hidden, self.hidden);
        if self.prior_skip {
            c.train.prior_skip = true;
        }
        set!(c.train.seed, self.train_seed);
        set!(c.train.log_every, self.log_every);
        set!(c.attack_iters, self.attack_iters);
        set!(c.estimators, self.estimators);
        if self.mle_bias_corrected {
            c.mle_variant = MleVariant::MacKayGhahramani;
        }
        set!(c.trials, self.trials);
        set!(c.output_dir, self.output_dir);
        Ok(c)
    }
}

fn configure_workers() -> Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidParameter(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?;
        // A pool may already exist when called more than once in a process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { cfg, out, csv, force } => {
            let s = cmd_generate(&cfg.resolve()?, &out, csv.as_deref(), force)?;
            println!("{s}");
        }
        Command::Train { cfg, data, checkpoint, log, resume, stop_at, force } => {
            let log = log.unwrap_or_else(|| {
                let mut name = checkpoint.as_os_str().to_owned();
                name.push(".log.csv");
                PathBuf::from(name)
            });
            let s = cmd_train(&cfg.resolve()?, &data, &checkpoint, &log, resume.as_deref(), stop_at, force)?;
            println!("{s}");
        }
        Command::Estimate { cfg, data, checkpoint, out, times, points, force } => {
            let cfg = cfg.resolve()?;
            match times {
                Some(times) => {
                    let series = cmd_estimate_over_time(&cfg, &data, &checkpoint, &times, &points, &out, force)?;
                    for (i, est) in series {
                        let v: Vec<String> = est.iter().map(|e| format!("{:.2}", e.n_hat_clamped)).collect();
                        println!("point {i}: {}", v.join(" "));
                    }
                }
                None => println!("{}", cmd_estimate(&cfg, &data, &checkpoint, &out, force)?),
            }
        }
        Command::Baseline { cfg, data, out, force } => {
            for (m, mse) in cmd_baseline(&cfg.resolve()?, &data, &out, force)? {
                println!("{m}: MSE {mse:.4}");
            }
        }
        Command::Table3 { cfg, benchmarks, preset, force } => {
            let mut cfg = cfg.resolve()?;
            if let Some(p) = preset {
                p.apply(&mut cfg);
            }
            print!("{}", cmd_table3(&cfg, &benchmarks, force)?);
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_workers() {
        eprintln!("error: {e}");
        return exit_code(&e);
    }
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in [Method::ScoreMap, Method::Mle(10), Method::Mind(20)] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("knn_5".parse::<Method>().is_err());
        assert!("mle_x".parse::<Method>().is_err());
    }

    #[test]
    fn benchmark_names_round_trip() {
        for b in Benchmark::ALL {
            assert_eq!(b.to_string().parse::<Benchmark>().unwrap(), b);
        }
        assert!("htp0".parse::<Benchmark>().is_err());
    }

    #[test]
    fn config_toml_round_trip() {
        let mut c = RunConfig::default();
        c.train.schedule = NoiseSchedule::Vp(VPSchedule::default());
        c.estimators = vec![Method::ScoreMap, Method::Mind(10)];
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn partial_config_uses_defaults() {
        let c = RunConfig::from_toml("trials = 3\n[train]\ngamma = 0.05\n").unwrap();
        assert_eq!(c.trials, 3);
        assert_eq!(c.train.gamma, 0.05);
        assert_eq!(c.train.iterations, 20_000);
        assert!(RunConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.train.fd_step *= 2.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn overrides_apply() {
        let args = ConfigArgs {
            gamma: Some(0.0),
            sigma: Some(0.2),
            hidden: Some(vec![8, 8]),
            ..Default::default()
        };
        let c = args.resolve().unwrap();
        assert_eq!(c.train.gamma, 0.0);
        assert_eq!(c.train.schedule, NoiseSchedule::single(0.2));
        assert_eq!(c.train.hidden, vec![8, 8]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::InvalidParameter("x".into())), 1);
        assert_eq!(exit_code(&Error::NullProbe), 2);
        assert_eq!(exit_code(&Error::io("p", std::io::Error::other("x"))), 3);
    }

    #[test]
    fn unknown_dataset_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("d.txt");
        let code = run(["scoredim", "generate", "--dataset", "torus", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 1);
        assert_eq!(run(["scoredim", "frobnicate"]), 1);
    }
}
