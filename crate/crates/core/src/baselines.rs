//! Nearest-neighbor intrinsic dimension estimators: Levina–Bickel MLE and
//! MiND_MLk.

use std::cmp::Ordering;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact Euclidean kNN over a fixed point set, by brute force.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    points: Array2<f64>,
}

fn by_dist_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

impl KnnIndex {
    pub fn new(points: Array2<f64>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    fn nearest(&self, x: &[f64], k: usize, skip: Option<usize>) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> = self
            .points
            .rows()
            .into_iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != skip)
            .map(|(j, row)| {
                let d2: f64 = row.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2.sqrt(), j)
            })
            .collect();
        let k = k.min(all.len());
        if k < all.len() {
            all.select_nth_unstable_by(k, by_dist_then_index);
            all.truncate(k);
        }
        all.sort_by(by_dist_then_index);
        all
    }

    /// The `k` nearest stored points to an arbitrary query, as `(distance, index)`.
    pub fn query(&self, x: &[f64], k: usize) -> Result<Vec<(f64, usize)>> {
        if x.len() != self.points.ncols() {
            return Err(Error::DimensionMismatch { expected: self.points.ncols(), got: x.len() });
        }
        if k > self.len() {
            return Err(Error::TooFewPoints { k, count: self.len() });
        }
        Ok(self.nearest(x, k, None))
    }

    /// Ascending distances from stored point `i` to its `k` nearest other points.
    pub fn knn_distances(&self, i: usize, k: usize) -> Result<Vec<f64>> {
        if k >= self.len() {
            return Err(Error::TooFewPoints { k, count: self.len() });
        }
        let x = self.points.row(i).to_vec();
        Ok(self.nearest(&x, k, Some(i)).into_iter().map(|(d, _)| d).collect())
    }

    fn all_knn(&self, k: usize) -> Result<Vec<Vec<f64>>> {
        if k >= self.len() {
            return Err(Error::TooFewPoints { k, count: self.len() });
        }
        (0..self.len()).into_par_iter().map(|i| self.knn_distances(i, k)).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MleVariant {
    /// `(k − 1)` in the denominator of the averaged log-ratio.
    #[default]
    LevinaBickel,
    /// `(k − 2)` in the denominator, the bias-corrected form.
    MacKayGhahramani,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleResult {
    /// `None` for points with a zero neighbor distance.
    pub per_point: Vec<Option<f64>>,
    pub mean: f64,
    pub excluded: usize,
}

impl MleResult {
    /// MSE over points that received an estimate.
    pub fn mse(&self, truth: &[usize]) -> Result<f64> {
        if truth.len() != self.per_point.len() {
            return Err(Error::DimensionMismatch { expected: self.per_point.len(), got: truth.len() });
        }
        let pairs: Vec<(f64, usize)> = self.per_point.iter().zip(truth).filter_map(|(e, &t)| e.map(|v| (v, t))).collect();
        if pairs.is_empty() {
            return Err(Error::AllPointsExcluded);
        }
        Ok(pairs.iter().map(|(v, t)| (v - *t as f64).powi(2)).sum::<f64>() / pairs.len() as f64)
    }
}

/// Per-point MLE `[(1/(k−1)) Σ_{j<k} ln(T_k/T_j)]⁻¹`.
pub fn mle_levina_bickel(points: &Array2<f64>, k: usize, variant: MleVariant) -> Result<MleResult> {
    if k < 3 {
        return Err(Error::InvalidParameter(format!("MLE needs k ≥ 3, got {k}")));
    }
    let index = KnnIndex::new(points.clone());
    let denom = match variant {
        MleVariant::LevinaBickel => (k - 1) as f64,
        MleVariant::MacKayGhahramani => (k - 2) as f64,
    };
    let per_point: Vec<Option<f64>> = index
        .all_knn(k)?
        .into_iter()
        .map(|t| {
            if t[0] <= 0.0 {
                return None;
            }
            let tk = t[k - 1];
            let s: f64 = t[..k - 1].iter().map(|tj| (tk / tj).ln()).sum();
            (s > 0.0).then(|| denom / s)
        })
        .collect();
    let kept: Vec<f64> = per_point.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::AllPointsExcluded);
    }
    Ok(MleResult {
        mean: kept.iter().sum::<f64>() / kept.len() as f64,
        excluded: per_point.len() - kept.len(),
        per_point,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MindResult {
    pub d_hat: usize,
    /// `l(d)` for `d = 1..=D`.
    pub log_likelihood: Vec<f64>,
    pub excluded: usize,
}

impl MindResult {
    /// MSE of the single global estimate against every point's true dimension.
    pub fn mse(&self, truth: &[usize]) -> Result<f64> {
        if truth.is_empty() {
            return Err(Error::Empty);
        }
        Ok(truth.iter().map(|&t| (self.d_hat as f64 - t as f64).powi(2)).sum::<f64>() / truth.len() as f64)
    }
}

/// `l(d) = Σᵢ [ln(k d) + (d − 1) ln ρᵢ + (k − 1) ln(1 − ρᵢ^d)]` for the ratios
/// `ρᵢ = T₁/T_{k+1}`.
pub fn mind_log_likelihood(rhos: &[f64], k: usize, d: usize) -> f64 {
    let (kf, df) = (k as f64, d as f64);
    rhos.iter()
        .map(|&r| (kf * df).ln() + (df - 1.0) * r.ln() + (kf - 1.0) * (-r.powf(df)).ln_1p())
        .sum()
}

/// MiND_MLk: the integer `d ∈ 1..=D` maximizing [`mind_log_likelihood`].
///
/// Given the distance to the `(k+1)`-th neighbor, the other `k` neighbors
/// are i.i.d. and the ratio of the nearest to it has density
/// `k d ρ^{d−1} (1 − ρ^d)^{k−1}`, so `k + 1` neighbors are queried.
pub fn mind_ml(points: &Array2<f64>, k: usize) -> Result<MindResult> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("MiND needs k ≥ 2, got {k}")));
    }
    let ambient = points.ncols();
    let index = KnnIndex::new(points.clone());
    let all = index.all_knn(k + 1)?;
    let rhos: Vec<f64> = all
        .iter()
        .filter(|t| t[0] > 0.0 && t[k] > 0.0 && t[0] < t[k])
        .map(|t| t[0] / t[k])
        .collect();
    if rhos.is_empty() {
        return Err(Error::AllPointsExcluded);
    }
    let log_likelihood: Vec<f64> = (1..=ambient).map(|d| mind_log_likelihood(&rhos, k, d)).collect();
    let best = log_likelihood
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc })
        .0;
    Ok(MindResult {
        d_hat: best + 1,
        log_likelihood,
        excluded: all.len() - rhos.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifolds::gen_swirl;
    use crate::rng;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn uniform_cube(d: usize, count: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::stream(seed, 0);
        Array2::from_shape_simple_fn((count, d), || r.random::<f64>())
    }

    fn uniform_ball(d: usize, count: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::stream(seed, 0);
        let mut out = Array2::zeros((count, d));
        for mut row in out.rows_mut() {
            let g: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
            let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rad = r.random::<f64>().powf(1.0 / d as f64);
            for (o, v) in row.iter_mut().zip(g) {
                *o = rad * v / n;
            }
        }
        out
    }

    #[test]
    fn collinear_example() {
        let idx = KnnIndex::new(array![[0.0], [1.0], [3.0]]);
        assert_eq!(idx.knn_distances(1, 2).unwrap(), vec![1.0, 2.0]);
        assert!(matches!(idx.knn_distances(1, 3), Err(Error::TooFewPoints { .. })));
    }

    #[test]
    fn duplicates_allowed_in_search() {
        let idx = KnnIndex::new(array![[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(idx.knn_distances(0, 1).unwrap(), vec![0.0]);
    }

    #[test]
    fn ties_broken_by_index() {
        let idx = KnnIndex::new(array![[1.0], [-1.0], [1.0], [0.0]]);
        let q = idx.query(&[0.0], 4).unwrap();
        let order: Vec<usize> = q.iter().map(|p| p.1).collect();
        assert_eq!(order, vec![3, 0, 1, 2]);
    }

    #[test]
    fn matches_brute_force() {
        let pts = uniform_cube(3, 200, 9);
        let idx = KnnIndex::new(pts.clone());
        for i in 0..100 {
            let mut d: Vec<f64> = (0..200)
                .filter(|&j| j != i)
                .map(|j| {
                    let diff = &pts.row(i) - &pts.row(j);
                    diff.dot(&diff).sqrt()
                })
                .collect();
            d.sort_by(f64::total_cmp);
            assert_eq!(idx.knn_distances(i, 7).unwrap(), d[..7].to_vec());
        }
    }

    #[test]
    fn mle_segment_and_square() {
        let seg = uniform_cube(1, 1000, 1);
        let m = mle_levina_bickel(&seg, 10, MleVariant::LevinaBickel).unwrap().mean;
        assert!((0.8..=1.2).contains(&m), "{m}");
        let sq = uniform_cube(2, 1000, 2);
        let m = mle_levina_bickel(&sq, 20, MleVariant::LevinaBickel).unwrap().mean;
        assert!((1.8..=2.2).contains(&m), "{m}");
    }

    #[test]
    fn mle_flags_duplicates() {
        let mut pts = uniform_cube(2, 50, 3);
        let first = pts.row(0).to_owned();
        pts.row_mut(1).assign(&first);
        let r = mle_levina_bickel(&pts, 5, MleVariant::LevinaBickel).unwrap();
        assert!(r.per_point[0].is_none() && r.per_point[1].is_none());
        assert_eq!(r.excluded, 2);
        assert!(mle_levina_bickel(&pts, 2, MleVariant::LevinaBickel).is_err());
    }

    #[test]
    fn mle_variants_differ_by_constant_factor() {
        let pts = uniform_cube(2, 300, 4);
        let a = mle_levina_bickel(&pts, 10, MleVariant::LevinaBickel).unwrap();
        let b = mle_levina_bickel(&pts, 10, MleVariant::MacKayGhahramani).unwrap();
        for (x, y) in a.per_point.iter().zip(&b.per_point) {
            let (x, y) = (x.unwrap(), y.unwrap());
            assert!((y / x - 8.0 / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mle_monotone_in_dimension() {
        let mut prev = 0.0;
        for d in 1..=8 {
            let mean: f64 = (0..5)
                .map(|s| mle_levina_bickel(&uniform_cube(d, 1000, 100 + s), 10, MleVariant::LevinaBickel).unwrap().mean)
                .sum::<f64>()
                / 5.0;
            assert!(mean > prev, "d={d}: {mean} ≤ {prev}");
            prev = mean;
        }
    }

    #[test]
    fn mind_ball_is_three() {
        let hits = (0..5).filter(|&s| mind_ml(&uniform_ball(3, 1000, 40 + s), 10).unwrap().d_hat == 3).count();
        assert!(hits >= 4, "{hits}/5");
    }

    #[test]
    fn mind_swirl() {
        let clean = gen_swirl(1000, 0.0, 0).unwrap();
        let r = mind_ml(&clean.points, 20).unwrap();
        assert!(r.mse(&clean.true_td).unwrap() <= 0.2);
        let noisy = gen_swirl(1000, 0.01, 0).unwrap();
        let clean10 = mind_ml(&clean.points, 10).unwrap().mse(&clean.true_td).unwrap();
        let noisy10 = mind_ml(&noisy.points, 10).unwrap().mse(&noisy.true_td).unwrap();
        assert!(noisy10 > clean10, "{noisy10} vs {clean10}");
    }

    #[test]
    fn mle_swirl() {
        let clean = gen_swirl(1000, 0.0, 0).unwrap();
        let r = mle_levina_bickel(&clean.points, 20, MleVariant::LevinaBickel).unwrap();
        assert!(r.mse(&clean.true_td).unwrap() <= 0.3);
    }

    #[test]
    fn similarity_invariance() {
        let pts = uniform_cube(3, 300, 6);
        let (c, s) = (0.6f64, 0.8f64);
        let rot = array![[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        let moved = pts.dot(&rot.t()) * 3.7 + &array![1.0, -2.0, 5.0];
        let a = mle_levina_bickel(&pts, 10, MleVariant::LevinaBickel).unwrap();
        let b = mle_levina_bickel(&moved, 10, MleVariant::LevinaBickel).unwrap();
        for (x, y) in a.per_point.iter().zip(&b.per_point) {
            assert!((x.unwrap() - y.unwrap()).abs() <= 1e-9 * x.unwrap());
        }
        let (ma, mb) = (mind_ml(&pts, 10).unwrap(), mind_ml(&moved, 10).unwrap());
        assert_eq!(ma.d_hat, mb.d_hat);
        for (x, y) in ma.log_likelihood.iter().zip(&mb.log_likelihood) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn pure_scaling_is_exact() {
        let pts = uniform_cube(2, 200, 7);
        let a = mle_levina_bickel(&pts, 10, MleVariant::LevinaBickel).unwrap();
        let b = mle_levina_bickel(&(&pts * 4.0), 10, MleVariant::LevinaBickel).unwrap();
        for (x, y) in a.per_point.iter().zip(&b.per_point) {
            assert!((x.unwrap() - y.unwrap()).abs() <= 1e-12 * x.unwrap());
        }
    }
}
