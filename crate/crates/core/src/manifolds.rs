//! Synthetic manifold datasets with per-point topological dimension labels.
//!
//! Every generator is a pure function of its parameters and seed. Each
//! random component (positions, noise, component membership) draws from its
//! own stream, so adding or reordering calls never perturbs another dataset.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::{hexfloat, rng};

/// A point cloud together with the true local dimension of every point.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldSample {
    pub name: String,
    /// One point per row.
    pub points: Array2<f64>,
    pub true_td: Vec<usize>,
    pub seed: u64,
}

impl ManifoldSample {
    pub fn new(name: impl Into<String>, points: Array2<f64>, true_td: Vec<usize>, seed: u64) -> Result<Self> {
        let sample = Self {
            name: name.into(),
            points,
            true_td,
            seed,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn ambient_dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn count(&self) -> usize {
        self.points.nrows()
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points.row(i).to_vec()
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.chars().any(char::is_whitespace) {
            return Err(Error::InvalidParameter(format!(
                "dataset name {:?} must be a non-empty token",
                self.name
            )));
        }
        if self.points.ncols() == 0 {
            return Err(Error::InvalidParameter("ambient dimension must be positive".into()));
        }
        if self.true_td.len() != self.points.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.points.nrows(),
                got: self.true_td.len(),
            });
        }
        if !self.points.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("dataset points".into()));
        }
        if let Some(&td) = self.true_td.iter().find(|&&td| td > self.ambient_dim()) {
            return Err(Error::InvalidParameter(format!(
                "true_td {td} exceeds ambient dimension {}",
                self.ambient_dim()
            )));
        }
        Ok(())
    }

    /// Writes the bit-exact text format.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<writer>", e);
        writeln!(w, "{} {} {} {}", self.name, self.ambient_dim(), self.count(), self.seed).map_err(io)?;
        let labels: Vec<String> = self.true_td.iter().map(usize::to_string).collect();
        writeln!(w, "{}", labels.join(" ")).map_err(io)?;
        for row in self.points.rows() {
            let fields: Vec<String> = row.iter().map(|&v| hexfloat::format(v)).collect();
            writeln!(w, "{}", fields.join(" ")).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let mut next_line = |what: &str| -> Result<String> {
            match lines.next() {
                Some(Ok(l)) => Ok(l),
                Some(Err(e)) => Err(Error::io("<reader>", e)),
                None => Err(Error::format("dataset", format!("truncated before {what}"))),
            }
        };
        let header = next_line("header")?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::format("dataset", "header must be `name ambient_dim count seed`"));
        }
        let parse_num = |s: &str, what: &str| -> Result<u64> {
            s.parse()
                .map_err(|_| Error::format("dataset", format!("bad {what} {s:?}")))
        };
        let name = fields[0].to_string();
        let dim = parse_num(fields[1], "ambient_dim")? as usize;
        let count = parse_num(fields[2], "count")? as usize;
        let seed = parse_num(fields[3], "seed")?;
        if dim == 0 {
            return Err(Error::format("dataset", "ambient_dim must be positive"));
        }

        let label_line = next_line("labels")?;
        let true_td = label_line
            .split_whitespace()
            .map(|s| parse_num(s, "label").map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        if true_td.len() != count {
            return Err(Error::format(
                "dataset",
                format!("expected {count} labels, found {}", true_td.len()),
            ));
        }

        let mut points = Array2::zeros((count, dim));
        for i in 0..count {
            let line = next_line("all points")?;
            let mut n = 0;
            for (j, tok) in line.split_whitespace().enumerate() {
                if j >= dim {
                    return Err(Error::format("dataset", format!("row {i} wider than ambient_dim {dim}")));
                }
                let v = hexfloat::parse(tok)?;
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("row {i}")));
                }
                points[[i, j]] = v;
                n += 1;
            }
            if n != dim {
                return Err(Error::format(
                    "dataset",
                    format!("row {i} has {n} values, header says {dim}"),
                ));
            }
        }
        ManifoldSample::new(name, points, true_td, seed)
    }

    /// Decimal CSV for plotting. Lossy.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<csv>", e);
        let mut header: Vec<String> = (0..self.ambient_dim()).map(|j| format!("x{j}")).collect();
        header.push("true_td".into());
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        for (row, td) in self.points.rows().into_iter().zip(&self.true_td) {
            let mut fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            fields.push(td.to_string());
            writeln!(w, "{}", fields.join(",")).map_err(io)?;
        }
        Ok(())
    }
}

pub fn save_sample(sample: &ManifoldSample, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    sample.write_to(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_sample(path: impl AsRef<Path>) -> Result<ManifoldSample> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ManifoldSample::read_from(file)
}

pub fn export_csv(sample: &ManifoldSample, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    sample.write_csv(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-coordinate mean and standard deviation of a normalized dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl NormalizationStats {
    pub fn apply(&self, points: &Array2<f64>) -> Array2<f64> {
        (points - &self.mean) / &self.std
    }

    pub fn invert(&self, points: &Array2<f64>) -> Array2<f64> {
        points * &self.std + &self.mean
    }
}

/// Shifts and scales every coordinate to zero mean and unit (population) variance.
pub fn normalize(sample: &ManifoldSample) -> Result<(ManifoldSample, NormalizationStats)> {
    let count = sample.count();
    if count < 2 {
        return Err(Error::InvalidParameter("normalization needs at least two points".into()));
    }
    let mean = sample.points.mean_axis(Axis(0)).ok_or(Error::Empty)?;
    let centered = &sample.points - &mean;
    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / count as f64;
    let mut std = Array1::zeros(sample.ambient_dim());
    for (j, &v) in var.iter().enumerate() {
        if !(v > 1e-24 * (1.0 + mean[j] * mean[j])) {
            return Err(Error::DegenerateCoordinate(j));
        }
        std[j] = v.sqrt();
    }
    let stats = NormalizationStats { mean, std };
    let mut out = sample.clone();
    out.points = centered / &stats.std;
    Ok((out, stats))
}

const SWIRL_PHI_MIN: f64 = PI / 2.0;
const SWIRL_PHI_MAX: f64 = 3.0 * PI;
/// Radius growth per radian; puts the outer end of the arm at radius 2.
pub const SWIRL_GROWTH: f64 = 2.0 / SWIRL_PHI_MAX;
/// Exponent applied to the uniform variate, concentrating points on the inner turns.
pub const SWIRL_DENSITY_POWER: i32 = 2;

/// Noise-free point on the swirl for a unit-interval parameter.
pub fn swirl_point(u: f64) -> [f64; 2] {
    let phi = SWIRL_PHI_MIN + (SWIRL_PHI_MAX - SWIRL_PHI_MIN) * u.powi(SWIRL_DENSITY_POWER);
    let r = SWIRL_GROWTH * phi;
    [r * phi.cos(), r * phi.sin()]
}

/// Archimedean spiral in the plane, sampled non-uniformly along its arm.
pub fn gen_swirl(count: usize, noise_scale: f64, seed: u64) -> Result<ManifoldSample> {
    if count == 0 {
        return Err(Error::InvalidParameter("count must be positive".into()));
    }
    if !(noise_scale >= 0.0) {
        return Err(Error::InvalidParameter("noise_scale must be nonnegative".into()));
    }
    let mut pos = rng::stream(seed, 0);
    let mut noise = rng::stream(seed, 1);
    let mut points = Array2::zeros((count, 2));
    for mut row in points.rows_mut() {
        let p = swirl_point(pos.random::<f64>());
        for j in 0..2 {
            let z: f64 = noise.sample(StandardNormal);
            row[j] = p[j] + noise_scale * z;
        }
    }
    let name = if noise_scale > 0.0 { "swirl_noisy" } else { "swirl" };
    ManifoldSample::new(name, points, vec![1; count], seed)
}

/// Segment, disk and ball in 3-D, translated apart along the first axis.
pub fn gen_line_disk_ball(count: usize, seed: u64) -> Result<ManifoldSample> {
    if count < 3 {
        return Err(Error::InsufficientPoints);
    }
    let base = count / 3;
    let sizes = [
        base + usize::from(!count.is_multiple_of(3)),
        base + usize::from(count % 3 > 1),
        base,
    ];
    let mut points = Array2::zeros((count, 3));
    let labels: Vec<usize> = sizes.iter().zip(1..).flat_map(|(&n, d)| std::iter::repeat_n(d, n)).collect();
    let mut row = 0;

    let mut line = rng::stream(seed, 0);
    for _ in 0..sizes[0] {
        points[[row, 0]] = -3.0 + (line.random::<f64>() - 0.5);
        row += 1;
    }

    let mut disk = rng::stream(seed, 1);
    for _ in 0..sizes[1] {
        let r = disk.random::<f64>().sqrt();
        let theta = 2.0 * PI * disk.random::<f64>();
        points[[row, 0]] = r * theta.cos();
        points[[row, 1]] = r * theta.sin();
        row += 1;
    }

    let mut ball = rng::stream(seed, 2);
    for _ in 0..sizes[2] {
        let dir = rng::unit_vec(&mut ball, 3);
        let r = ball.random::<f64>().cbrt();
        points[[row, 0]] = 3.0 + r * dir[0];
        points[[row, 1]] = r * dir[1];
        points[[row, 2]] = r * dir[2];
        row += 1;
    }
    ManifoldSample::new("line_disk_ball", points, labels, seed)
}

/// Which LineDiskBall component a point geometrically belongs to, if any.
pub fn line_disk_ball_region(p: &[f64]) -> Option<usize> {
    const TOL: f64 = 1e-12;
    let (x, y, z) = (p[0], p[1], p[2]);
    if y.abs() <= TOL && z.abs() <= TOL && (x + 3.0).abs() <= 0.5 + TOL {
        Some(1)
    } else if z.abs() <= TOL && (x * x + y * y).sqrt() <= 1.0 + TOL {
        Some(2)
    } else if ((x - 3.0).powi(2) + y * y + z * z).sqrt() <= 1.0 + TOL {
        Some(3)
    } else {
        None
    }
}

/// Height of the multi-peak surface over `u ∈ [-1, 1]^d`.
pub fn twin_peaks_height(u: &[f64]) -> f64 {
    let d = u.len();
    (0..d)
        .map(|i| (PI * u[i]).sin() * (PI * u[(i + 1) % d]).cos())
        .sum()
}

/// Graph of a smooth `d`-dimensional multi-peak surface in `d + 1` dimensions.
pub fn gen_hyper_twin_peaks(intrinsic_dim: usize, count: usize, seed: u64) -> Result<ManifoldSample> {
    if intrinsic_dim == 0 || count == 0 {
        return Err(Error::InvalidParameter("intrinsic_dim and count must be positive".into()));
    }
    let mut pos = rng::stream(seed, 0);
    let mut points = Array2::zeros((count, intrinsic_dim + 1));
    for mut row in points.rows_mut() {
        let u: Vec<f64> = (0..intrinsic_dim).map(|_| pos.random_range(-1.0..=1.0)).collect();
        row[intrinsic_dim] = twin_peaks_height(&u);
        for (j, v) in u.into_iter().enumerate() {
            row[j] = v;
        }
    }
    ManifoldSample::new(
        format!("hyper_twin_peaks_{intrinsic_dim}"),
        points,
        vec![intrinsic_dim; count],
        seed,
    )
}

/// I.i.d. draws from `Gauss(0, variance·I)`.
pub fn gen_isotropic_gaussian(dim: usize, variance: f64, count: usize, seed: u64) -> Result<ManifoldSample> {
    if !(variance > 0.0) {
        return Err(Error::InvalidParameter("variance must be positive".into()));
    }
    if dim == 0 || count == 0 {
        return Err(Error::InvalidParameter("dim and count must be positive".into()));
    }
    let mut rng = rng::stream(seed, 0);
    let sd = variance.sqrt();
    let points = Array2::from_shape_simple_fn((count, dim), || {
        let z: f64 = rng.sample(StandardNormal);
        sd * z
    });
    ManifoldSample::new(format!("gaussian_{dim}"), points, vec![dim; count], seed)
}

/// `count` copies of the origin in `dim` dimensions.
pub fn gen_isolated_point(dim: usize, count: usize) -> Result<ManifoldSample> {
    if dim == 0 || count == 0 {
        return Err(Error::InvalidParameter("dim and count must be positive".into()));
    }
    ManifoldSample::new(format!("isolated_point_{dim}"), Array2::zeros((count, dim)), vec![0; count], 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn swirl_shapes_and_labels() {
        let s = gen_swirl(1000, 0.0, 3).unwrap();
        assert_eq!(s.points.dim(), (1000, 2));
        assert!(s.true_td.iter().all(|&t| t == 1));
        let one = gen_swirl(1, 0.0, 3).unwrap();
        assert!(one.points.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn swirl_noise_mean_square_displacement() {
        let clean = gen_swirl(1000, 0.0, 11).unwrap();
        let noisy = gen_swirl(1000, 0.01, 11).unwrap();
        let msd = (&noisy.points - &clean.points).mapv(|v| v * v).sum() / 1000.0;
        let expected = 2.0 * 0.01f64.powi(2);
        assert!((msd - expected).abs() <= 0.1 * expected, "msd {msd}");
    }

    #[test]
    fn line_disk_ball_split_and_membership() {
        let s = gen_line_disk_ball(999, 5).unwrap();
        for label in 1..=3 {
            assert_eq!(s.true_td.iter().filter(|&&t| t == label).count(), 333);
        }
        let s = gen_line_disk_ball(1000, 5).unwrap();
        let counts: Vec<usize> = (1..=3)
            .map(|l| s.true_td.iter().filter(|&&t| t == l).count())
            .collect();
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        for i in 0..s.count() {
            assert_eq!(line_disk_ball_region(&s.point(i)), Some(s.true_td[i]));
        }
        assert!(matches!(gen_line_disk_ball(2, 0), Err(Error::InsufficientPoints)));
    }

    #[test]
    fn hyper_twin_peaks_dims() {
        for (d, n) in [(10, 1000), (30, 1000), (1, 100)] {
            let s = gen_hyper_twin_peaks(d, n, 1).unwrap();
            assert_eq!(s.ambient_dim(), d + 1);
            assert!(s.true_td.iter().all(|&t| t == d));
            for i in 0..5 {
                let p = s.point(i);
                assert_eq!(p[d], twin_peaks_height(&p[..d]));
            }
        }
    }

    #[test]
    fn isotropic_gaussian_moments() {
        let s = gen_isotropic_gaussian(8, 1.0, 4096, 2).unwrap();
        let mean = s.points.mean_axis(Axis(0)).unwrap();
        assert!(mean.dot(&mean).sqrt() <= 0.1);
        for v in s.points.var_axis(Axis(0), 0.0) {
            assert!((v - 1.0).abs() <= 0.1, "{v}");
        }
        let small = gen_isotropic_gaussian(16, 0.01, 1000, 2).unwrap();
        let avg_var = small.points.var_axis(Axis(0), 0.0).mean().unwrap();
        assert!((avg_var - 0.01).abs() <= 0.001, "{avg_var}");
        assert!(gen_isotropic_gaussian(2, 0.0, 10, 0).is_err());
    }

    #[test]
    fn isolated_point() {
        let s = gen_isolated_point(16, 64).unwrap();
        assert_eq!(s.points.dim(), (64, 16));
        assert!(s.points.iter().all(|&v| v == 0.0));
        assert!(s.true_td.iter().all(|&t| t == 0));
        assert_eq!(gen_isolated_point(2, 1).unwrap().count(), 1);
        assert!(matches!(normalize(&s), Err(Error::DegenerateCoordinate(0))));
    }

    #[test]
    fn normalization_properties() {
        let s = gen_swirl(500, 0.0, 9).unwrap();
        let (n1, stats) = normalize(&s).unwrap();
        for j in 0..2 {
            let col = n1.points.column(j);
            assert_abs_diff_eq!(col.mean().unwrap(), 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(col.var(0.0), 1.0, epsilon = 1e-9);
        }
        let back = stats.invert(&n1.points);
        for (a, b) in back.iter().zip(s.points.iter()) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
        }
        let (n2, stats2) = normalize(&n1).unwrap();
        for (a, b) in n2.points.iter().zip(n1.points.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        for (m, sd) in stats2.mean.iter().zip(stats2.std.iter()) {
            assert_abs_diff_eq!(*m, 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(*sd, 1.0, epsilon = 1e-9);
        }

        let mut affine = s.clone();
        affine.points.mapv_inplace(|v| 5.0 * v + 3.0);
        let (n3, _) = normalize(&affine).unwrap();
        for (a, b) in n3.points.iter().zip(n1.points.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn determinism() {
        assert_eq!(gen_swirl(200, 0.01, 4).unwrap(), gen_swirl(200, 0.01, 4).unwrap());
        assert_eq!(gen_line_disk_ball(200, 4).unwrap(), gen_line_disk_ball(200, 4).unwrap());
        assert_ne!(gen_swirl(200, 0.01, 4).unwrap().points, gen_swirl(200, 0.01, 5).unwrap().points);
    }

    #[test]
    fn file_round_trip_and_errors() {
        let s = gen_hyper_twin_peaks(3, 50, 8).unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let back = ManifoldSample::read_from(&buf[..]).unwrap();
        assert_eq!(back, s);

        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(ManifoldSample::read_from(truncated.as_bytes()).is_err());

        let wrong_dim = text.replacen("hyper_twin_peaks_3 4", "hyper_twin_peaks_3 5", 1);
        assert!(ManifoldSample::read_from(wrong_dim.as_bytes()).is_err());

        let bad_header = text.replacen("hyper_twin_peaks_3 4 50 8", "hyper_twin_peaks_3 4 50", 1);
        assert!(ManifoldSample::read_from(bad_header.as_bytes()).is_err());
    }
}
