//! Fully connected score network `s_θ(x, t)` with hand-written backpropagation.
//!
//! Parameters live in one flat vector. Layer `l` stores its weight matrix
//! (`out × in`, row-major) followed by its bias. Hidden layers use SiLU; the
//! last layer is linear and its output may be divided by the noise level
//! `σ_t` of a schedule.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::{hexfloat, rng};

/// Anything that maps `(x, t)` to a score vector and can pull a cotangent
/// back to the input.
pub trait ScoreMap: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], t: Option<f64>) -> Result<Vec<f64>>;

    /// `∇_x (v · s(x, t))`, i.e. `Jᵀ v`.
    fn vjp(&self, x: &[f64], t: Option<f64>, v: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        match s {
            "silu" => Some(Activation::Silu),
            _ => None,
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Multiplier applied to the network output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OutputScale {
    Unit,
    /// Divide by the marginal standard deviation `σ_t` of the schedule.
    InverseSigma(NoiseSchedule),
}

impl OutputScale {
    fn factor(&self, t: Option<f64>) -> f64 {
        match self {
            OutputScale::Unit => 1.0,
            OutputScale::InverseSigma(s) => 1.0 / s.kernel_stats_unchecked(t.unwrap_or(0.0)).1,
        }
    }

    /// `1 / (α_t² + σ_t²)`, the score slope of unit-variance data pushed
    /// through the schedule.
    fn reference_slope(&self, t: Option<f64>) -> f64 {
        match self {
            OutputScale::Unit => 1.0,
            OutputScale::InverseSigma(s) => {
                let (a, sd) = s.kernel_stats_unchecked(t.unwrap_or(0.0));
                1.0 / (a * a + sd * sd)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    /// Input width (ambient dim, plus one when time-conditioned), hidden widths, output width.
    pub layer_sizes: Vec<usize>,
    pub params: Vec<f64>,
    pub time_conditioned: bool,
    pub activation: Activation,
    pub output_scale: OutputScale,
    /// Add the reference score `−x / (α_t² + σ_t²)` to the network output.
    pub prior_skip: bool,
}

/// Activations retained by a batched forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to every layer; `inputs[0]` includes the time column.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
    scale: Array1<f64>,
    skip: Array1<f64>,
    pub output: Array2<f64>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

impl ScoreModel {
    /// Variance-scaled initialization with a zero last layer, so the initial score is zero.
    pub fn init(
        dim: usize,
        hidden: &[usize],
        time_conditioned: bool,
        output_scale: OutputScale,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 || hidden.contains(&0) {
            return Err(Error::InvalidParameter("layer sizes must be positive".into()));
        }
        let mut layer_sizes = vec![dim + usize::from(time_conditioned)];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(dim);
        let mut model = Self {
            params: vec![0.0; param_count(&layer_sizes)],
            layer_sizes,
            time_conditioned,
            activation: Activation::Silu,
            output_scale,
            prior_skip: false,
        };
        let mut r = rng::stream(seed, 0);
        let last = model.num_layers() - 1;
        for l in 0..last {
            let (off, fan_in, fan_out) = model.weight_span(l);
            let sd = (1.0 / fan_in as f64).sqrt();
            for w in &mut model.params[off..off + fan_in * fan_out] {
                let z: f64 = r.sample(StandardNormal);
                *w = sd * z;
            }
        }
        Ok(model)
    }

    /// Single affine layer `x ↦ A x + b` with no time input.
    pub fn linear(a: &Array2<f64>, b: &Array1<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: a.ncols().max(b.len()) });
        }
        let mut params: Vec<f64> = a.iter().copied().collect();
        params.extend(b.iter());
        Ok(Self {
            layer_sizes: vec![n, n],
            params,
            time_conditioned: false,
            activation: Activation::Silu,
            output_scale: OutputScale::Unit,
            prior_skip: false,
        })
    }

    pub fn dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// (offset, fan_in, fan_out) of layer `l`'s weight block. The bias follows it.
    fn weight_span(&self, l: usize) -> (usize, usize, usize) {
        let off = self.layer_sizes[..=l]
            .windows(2)
            .take(l)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        (off, self.layer_sizes[l], self.layer_sizes[l + 1])
    }

    fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (off, fan_in, fan_out) = self.weight_span(l);
        let w = ArrayView2::from_shape((fan_out, fan_in), &self.params[off..off + fan_in * fan_out]).unwrap();
        let b = ArrayView1::from(&self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out]);
        (w, b)
    }

    /// Mutable views of layer `l`'s weight and bias inside a gradient buffer shaped like `params`.
    fn layer_grad_mut<'a>(&self, grads: &'a mut [f64], l: usize) -> (ArrayViewMut2<'a, f64>, &'a mut [f64]) {
        let (off, fan_in, fan_out) = self.weight_span(l);
        let (w, rest) = grads[off..].split_at_mut(fan_in * fan_out);
        (
            ArrayViewMut2::from_shape((fan_out, fan_in), w).unwrap(),
            &mut rest[..fan_out],
        )
    }

    /// Mutable view of the last layer's weights.
    pub fn last_layer_weights_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let (off, fan_in, fan_out) = self.weight_span(self.num_layers() - 1);
        ArrayViewMut2::from_shape((fan_out, fan_in), &mut self.params[off..off + fan_in * fan_out]).unwrap()
    }

    /// Index range of the last layer's weights in `params`.
    pub fn last_layer_weight_range(&self) -> std::ops::Range<usize> {
        let (off, fan_in, fan_out) = self.weight_span(self.num_layers() - 1);
        off..off + fan_in * fan_out
    }

    fn check_inputs(&self, x: ArrayView2<f64>, t: Option<ArrayView1<f64>>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.ncols() });
        }
        match (self.time_conditioned, t) {
            (true, Some(t)) if t.len() != x.nrows() => {
                Err(Error::DimensionMismatch { expected: x.nrows(), got: t.len() })
            }
            (true, None) => Err(Error::InvalidParameter("time-conditioned model needs t".into())),
            (false, Some(_)) => Err(Error::InvalidParameter("model is not time-conditioned".into())),
            _ => Ok(()),
        }?;
        if !x.iter().all(|v| v.is_finite()) || !t.is_none_or(|t| t.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("model input".into()));
        }
        Ok(())
    }

    /// Batched forward pass keeping everything needed for backpropagation.
    pub fn forward_cached(&self, x: ArrayView2<f64>, t: Option<ArrayView1<f64>>) -> Result<ForwardCache> {
        self.check_inputs(x, t)?;
        let rows = x.nrows();
        let mut input = Array2::zeros((rows, self.layer_sizes[0]));
        input.slice_mut(s![.., ..self.dim()]).assign(&x);
        if let Some(t) = t {
            input.column_mut(self.dim()).assign(&t);
        }
        let scale = match t {
            Some(t) => t.mapv(|t| self.output_scale.factor(Some(t))),
            None => Array1::from_elem(rows, self.output_scale.factor(None)),
        };
        let skip = self.skip_coefficients(rows, t);

        let last = self.num_layers() - 1;
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut pre = Vec::with_capacity(last);
        let mut h = input;
        for l in 0..=last {
            let (w, b) = self.layer(l);
            let mut z = Array2::zeros((rows, w.nrows()));
            general_mat_mul(1.0, &h, &w.t(), 0.0, &mut z);
            z += &b;
            if !z.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteLayer { layer: l });
            }
            inputs.push(h);
            if l < last {
                h = z.mapv(silu);
                pre.push(z);
            } else {
                h = z;
            }
        }
        let mut output = h;
        Zip::from(output.rows_mut()).and(&scale).for_each(|mut row, &c| row *= c);
        if self.prior_skip {
            Zip::from(output.rows_mut())
                .and(x.rows())
                .and(&skip)
                .for_each(|mut row, xr, &c| row.scaled_add(-c, &xr));
        }
        Ok(ForwardCache { inputs, pre, scale, skip, output })
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>, t: Option<ArrayView1<f64>>) -> Result<Array2<f64>> {
        // Cheaper path: no activations retained.
        self.check_inputs(x, t)?;
        let rows = x.nrows();
        let mut h = Array2::zeros((rows, self.layer_sizes[0]));
        h.slice_mut(s![.., ..self.dim()]).assign(&x);
        if let Some(t) = t {
            h.column_mut(self.dim()).assign(&t);
        }
        let last = self.num_layers() - 1;
        for l in 0..=last {
            let (w, b) = self.layer(l);
            let mut z = Array2::zeros((rows, w.nrows()));
            general_mat_mul(1.0, &h, &w.t(), 0.0, &mut z);
            z += &b;
            if !z.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteLayer { layer: l });
            }
            if l < last {
                z.mapv_inplace(silu);
            }
            h = z;
        }
        match t {
            Some(t) => Zip::from(h.rows_mut())
                .and(&t)
                .for_each(|mut row, &t| row *= self.output_scale.factor(Some(t))),
            None => h *= self.output_scale.factor(None),
        }
        if self.prior_skip {
            let skip = self.skip_coefficients(rows, t);
            Zip::from(h.rows_mut())
                .and(x.rows())
                .and(&skip)
                .for_each(|mut row, xr, &c| row.scaled_add(-c, &xr));
        }
        Ok(h)
    }

    fn skip_coefficients(&self, rows: usize, t: Option<ArrayView1<f64>>) -> Array1<f64> {
        if !self.prior_skip {
            return Array1::zeros(rows);
        }
        match t {
            Some(t) => t.mapv(|t| self.output_scale.reference_slope(Some(t))),
            None => Array1::from_elem(rows, self.output_scale.reference_slope(None)),
        }
    }

    /// Backpropagates `d_out` (cotangent of the output) through a cached pass.
    ///
    /// Parameter gradients are accumulated into `grads` when given; the input
    /// cotangent (time column dropped) is returned when `want_input` is set.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_out: ArrayView2<f64>,
        mut grads: Option<&mut [f64]>,
        want_input: bool,
    ) -> Result<Option<Array2<f64>>> {
        if d_out.dim() != cache.output.dim() {
            return Err(Error::DimensionMismatch { expected: cache.output.ncols(), got: d_out.ncols() });
        }
        if let Some(g) = grads.as_deref() {
            if g.len() != self.params.len() {
                return Err(Error::DimensionMismatch { expected: self.params.len(), got: g.len() });
            }
        }
        let mut dz = d_out.to_owned();
        Zip::from(dz.rows_mut()).and(&cache.scale).for_each(|mut row, &c| row *= c);
        for l in (0..self.num_layers()).rev() {
            let (w, _) = self.layer(l);
            if let Some(g) = grads.as_deref_mut() {
                let (mut gw, gb) = self.layer_grad_mut(g, l);
                general_mat_mul(1.0, &dz.t(), &cache.inputs[l], 1.0, &mut gw);
                for (gb, col) in gb.iter_mut().zip(dz.columns()) {
                    *gb += col.sum();
                }
            }
            if l == 0 && !want_input {
                return Ok(None);
            }
            let mut dh = Array2::zeros((dz.nrows(), w.ncols()));
            general_mat_mul(1.0, &dz, &w, 0.0, &mut dh);
            if l > 0 {
                Zip::from(&mut dh).and(&cache.pre[l - 1]).for_each(|d, &z| *d *= silu_grad(z));
                if !dh.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFiniteLayer { layer: l - 1 });
                }
            }
            dz = dh;
        }
        let mut dx = dz.slice(s![.., ..self.dim()]).to_owned();
        if self.prior_skip {
            Zip::from(dx.rows_mut())
                .and(d_out.rows())
                .and(&cache.skip)
                .for_each(|mut row, v, &c| row.scaled_add(-c, &v));
        }
        Ok(Some(dx))
    }

    /// Row-wise `Jᵀ v` at the cached inputs.
    pub fn vjp_batch(&self, cache: &ForwardCache, v: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.backward(cache, v, None, true)?.unwrap())
    }

    pub fn forward(&self, x: &[f64], t: Option<f64>) -> Result<Vec<f64>> {
        let xv = ArrayView2::from_shape((1, x.len()), x).unwrap();
        let tv = t.map(|t| Array1::from_elem(1, t));
        Ok(self.forward_batch(xv, tv.as_ref().map(|t| t.view()))?.into_raw_vec_and_offset().0)
    }

    pub fn vjp_input(&self, x: &[f64], t: Option<f64>, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: v.len() });
        }
        let xv = ArrayView2::from_shape((1, x.len()), x).unwrap();
        let tv = t.map(|t| Array1::from_elem(1, t));
        let cache = self.forward_cached(xv, tv.as_ref().map(|t| t.view()))?;
        let vv = ArrayView2::from_shape((1, v.len()), v).unwrap();
        Ok(self.vjp_batch(&cache, vv)?.into_raw_vec_and_offset().0)
    }

    /// Gradient of a scalar loss of the batch outputs with respect to the parameters.
    ///
    /// `loss_fn` receives the outputs and returns the loss together with its
    /// gradient with respect to those outputs.
    pub fn grad_params<F>(&self, x: ArrayView2<f64>, t: Option<ArrayView1<f64>>, loss_fn: F) -> Result<(f64, Vec<f64>)>
    where
        F: FnOnce(&Array2<f64>) -> (f64, Array2<f64>),
    {
        let cache = self.forward_cached(x, t)?;
        let (loss, d_out) = loss_fn(&cache.output);
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads = vec![0.0; self.params.len()];
        self.backward(&cache, d_out.view(), Some(&mut grads), false)?;
        Ok((loss, grads))
    }

    /// Spectral norm of every weight matrix (via power iteration on `WᵀW`).
    pub fn layer_spectral_norms(&self) -> Vec<f64> {
        (0..self.num_layers())
            .map(|l| {
                let (w, _) = self.layer(l);
                let mut v = Array1::from_elem(w.ncols(), 1.0 / (w.ncols() as f64).sqrt());
                let mut s = 0.0;
                for _ in 0..500 {
                    let u = w.dot(&v);
                    let next = w.t().dot(&u);
                    let n = next.dot(&next).sqrt();
                    if n == 0.0 {
                        return 0.0;
                    }
                    s = n.sqrt();
                    v = next / n;
                }
                s
            })
            .collect()
    }
}

impl ScoreMap for ScoreModel {
    fn dim(&self) -> usize {
        ScoreModel::dim(self)
    }

    fn eval(&self, x: &[f64], t: Option<f64>) -> Result<Vec<f64>> {
        self.forward(x, t)
    }

    fn vjp(&self, x: &[f64], t: Option<f64>, v: &[f64]) -> Result<Vec<f64>> {
        self.vjp_input(x, t, v)
    }
}

fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Model plus the training settings it was fit with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ScoreModel,
    pub schedule: NoiseSchedule,
    pub gamma: f64,
    /// Completed training iterations.
    pub iteration: usize,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    /// Noise scale the estimator should use at `t = 0` (or the single scale).
    pub fn sigma(&self) -> f64 {
        self.schedule.kernel_stats_unchecked(0.0).1
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let m = &self.model;
        let mut out = String::new();
        let hx = hexfloat::format;
        writeln!(out, "scoredim-checkpoint 1").unwrap();
        let sizes: Vec<String> = m.layer_sizes.iter().map(usize::to_string).collect();
        writeln!(out, "layer_sizes {}", sizes.join(" ")).unwrap();
        writeln!(out, "time_conditioned {}", m.time_conditioned).unwrap();
        writeln!(out, "activation {}", m.activation.name()).unwrap();
        let scaled = matches!(m.output_scale, OutputScale::InverseSigma(_));
        writeln!(out, "output_scale {}", if scaled { "inverse_sigma" } else { "unit" }).unwrap();
        writeln!(out, "prior_skip {}", m.prior_skip).unwrap();
        match self.schedule {
            NoiseSchedule::Vp(s) => writeln!(
                out,
                "schedule vp {} {} {}",
                hx(s.beta_min),
                hx(s.beta_max),
                hx(s.sigma_min_sq)
            ),
            NoiseSchedule::SingleScale { sigma } => writeln!(out, "schedule single {}", hx(sigma)),
        }
        .unwrap();
        writeln!(out, "sigma {}", hx(self.sigma())).unwrap();
        writeln!(out, "gamma {}", hx(self.gamma)).unwrap();
        writeln!(out, "iteration {}", self.iteration).unwrap();
        writeln!(out, "params {}", m.params.len()).unwrap();
        for &p in &m.params {
            writeln!(out, "{}", hx(p)).unwrap();
        }
        if let Some(opt) = &self.optimizer {
            writeln!(
                out,
                "optimizer {} {} {} {} {} {} {}",
                opt.step,
                opt.total_steps,
                hx(opt.base_lr),
                hx(opt.final_lr),
                hx(opt.beta1),
                hx(opt.beta2),
                hx(opt.eps)
            )
            .unwrap();
            for (a, b) in opt.m.iter().zip(&opt.v) {
                writeln!(out, "{} {}", hx(*a), hx(*b)).unwrap();
            }
        }
        w.write_all(out.as_bytes()).map_err(|e| Error::io("<checkpoint>", e))
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let bad = |d: String| Error::format("checkpoint", d);
        let mut lines = BufReader::new(r).lines();
        let mut next = |what: &str| -> Result<String> {
            match lines.next() {
                Some(Ok(l)) => Ok(l),
                Some(Err(e)) => Err(Error::io("<checkpoint>", e)),
                None => Err(Error::format("checkpoint", format!("truncated before {what}"))),
            }
        };
        let mut keyed = |key: &str| -> Result<Vec<String>> {
            let line = next(key)?;
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(Error::format("checkpoint", format!("expected `{key}`, found {line:?}")));
            }
            Ok(it.map(str::to_string).collect())
        };
        let magic = keyed("scoredim-checkpoint")?;
        if magic != ["1"] {
            return Err(bad(format!("unsupported version {magic:?}")));
        }
        let layer_sizes = keyed("layer_sizes")?
            .iter()
            .map(|s| s.parse::<usize>().map_err(|_| bad(format!("bad layer size {s}"))))
            .collect::<Result<Vec<_>>>()?;
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(bad("need at least two positive layer sizes".into()));
        }
        let time_conditioned = match keyed("time_conditioned")?.as_slice() {
            [v] if v == "true" => true,
            [v] if v == "false" => false,
            other => return Err(bad(format!("bad time_conditioned {other:?}"))),
        };
        let activation = match keyed("activation")?.as_slice() {
            [v] => Activation::from_name(v).ok_or_else(|| bad(format!("unknown activation {v}")))?,
            other => return Err(bad(format!("bad activation {other:?}"))),
        };
        let scaled = match keyed("output_scale")?.as_slice() {
            [v] if v == "inverse_sigma" => true,
            [v] if v == "unit" => false,
            other => return Err(bad(format!("bad output_scale {other:?}"))),
        };
        let prior_skip = match keyed("prior_skip")?.as_slice() {
            [v] if v == "true" => true,
            [v] if v == "false" => false,
            other => return Err(bad(format!("bad prior_skip {other:?}"))),
        };
        let sched = keyed("schedule")?;
        let schedule = match sched.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
            ["vp", a, b, c] => NoiseSchedule::Vp(crate::diffusion::VPSchedule {
                beta_min: hexfloat::parse(a)?,
                beta_max: hexfloat::parse(b)?,
                sigma_min_sq: hexfloat::parse(c)?,
            }),
            ["single", s] => NoiseSchedule::SingleScale { sigma: hexfloat::parse(s)? },
            other => return Err(bad(format!("bad schedule {other:?}"))),
        };
        schedule.validate()?;
        let one = |v: Vec<String>, what: &str| -> Result<String> {
            match v.as_slice() {
                [x] => Ok(x.clone()),
                _ => Err(Error::format("checkpoint", format!("bad {what}"))),
            }
        };
        let _sigma = hexfloat::parse(&one(keyed("sigma")?, "sigma")?)?;
        let gamma = hexfloat::parse(&one(keyed("gamma")?, "gamma")?)?;
        let iteration: usize = one(keyed("iteration")?, "iteration")?
            .parse()
            .map_err(|_| bad("bad iteration".into()))?;
        let count: usize = one(keyed("params")?, "params")?
            .parse()
            .map_err(|_| bad("bad params count".into()))?;
        if count != param_count(&layer_sizes) {
            return Err(bad(format!(
                "{count} params do not match layer sizes {layer_sizes:?}"
            )));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            params.push(hexfloat::parse(next("params")?.trim())?);
        }
        let optimizer = match lines.next() {
            None => None,
            Some(line) => {
                let line = line.map_err(|e| Error::io("<checkpoint>", e))?;
                let f: Vec<&str> = line.split_whitespace().collect();
                if f.len() != 8 || f[0] != "optimizer" {
                    return Err(bad(format!("unexpected trailing line {line:?}")));
                }
                let step: usize = f[1].parse().map_err(|_| bad("bad optimizer step".into()))?;
                let total_steps: usize = f[2].parse().map_err(|_| bad("bad total steps".into()))?;
                let mut m = Vec::with_capacity(count);
                let mut v = Vec::with_capacity(count);
                for _ in 0..count {
                    let l = lines
                        .next()
                        .ok_or_else(|| bad("truncated optimizer state".into()))?
                        .map_err(|e| Error::io("<checkpoint>", e))?;
                    let (a, b) = l
                        .split_once(' ')
                        .ok_or_else(|| bad("bad optimizer moment line".into()))?;
                    m.push(hexfloat::parse(a)?);
                    v.push(hexfloat::parse(b)?);
                }
                Some(AdamState {
                    step,
                    total_steps,
                    base_lr: hexfloat::parse(f[3])?,
                    final_lr: hexfloat::parse(f[4])?,
                    beta1: hexfloat::parse(f[5])?,
                    beta2: hexfloat::parse(f[6])?,
                    eps: hexfloat::parse(f[7])?,
                    m,
                    v,
                })
            }
        };
        let model = ScoreModel {
            layer_sizes,
            params,
            time_conditioned,
            activation,
            output_scale: if scaled { OutputScale::InverseSigma(schedule) } else { OutputScale::Unit },
            prior_skip,
        };
        Ok(Checkpoint { model, schedule, gamma, iteration, optimizer })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file)
    }
}

/// Sum of squared entries per row.
pub(crate) fn row_sq_norms(a: &Array2<f64>) -> Array1<f64> {
    a.map_axis(Axis(1), |r| r.dot(&r))
}
