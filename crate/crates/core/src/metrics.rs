//! Sample-quality and trajectory metrics.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct MmdResult {
    /// Unbiased estimate of the squared MMD.
    pub mmd2: f64,
    pub bandwidth: f64,
    pub n: usize,
    pub m: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance of the pooled rows of `x` and `y`.
pub fn median_distance(x: &Tensor, y: &Tensor) -> f64 {
    let rows: Vec<&[f64]> = (0..x.rows()).map(|r| x.row(r)).chain((0..y.rows()).map(|r| y.row(r))).collect();
    let mut d = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]));
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, &mut m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = m;
    if d.len() % 2 == 1 {
        upper.sqrt()
    } else {
        let lower = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower.sqrt() + upper.sqrt())
    }
}

/// Unbiased squared MMD with kernel `exp(-|a - b|^2 / (2 h^2))`. Without an
/// explicit bandwidth `h` is the median pairwise distance of the pooled
/// sample.
pub fn mmd2_rbf(x: &Tensor, y: &Tensor, bandwidth: Option<f64>) -> Result<MmdResult> {
    let (n, m) = (x.rows(), y.rows());
    if n < 2 || m < 2 {
        return Err(Error::Config(format!("MMD needs at least two samples on each side, got {n} and {m}")));
    }
    if x.cols() != y.cols() {
        return Err(Error::DimensionMismatch(format!("{} vs {} columns", x.cols(), y.cols())));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::Config(format!("bandwidth {h} must be > 0"))),
        None => {
            let h = median_distance(x, y);
            if !(h > 0.0) {
                return Err(Error::ZeroBandwidth);
            }
            h
        }
    };
    let g = -1.0 / (2.0 * h * h);
    let within = |a: &Tensor| {
        let k = a.rows();
        let mut s = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                s += (g * sq_dist(a.row(i), a.row(j))).exp();
            }
        }
        2.0 * s / (k * (k - 1)) as f64
    };
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..m {
            cross += (g * sq_dist(x.row(i), y.row(j))).exp();
        }
    }
    let mmd2 = within(x) + within(y) - 2.0 * cross / (n * m) as f64;
    Ok(MmdResult { mmd2, bandwidth: h, n, m })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryScores {
    pub mae: f64,
    pub rmse: f64,
    /// Mean per-column Pearson correlation, in percent.
    pub cc: f64,
}

pub fn trajectory_scores(pred: &Tensor, truth: &Tensor) -> Result<TrajectoryScores> {
    if pred.shape() != truth.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", pred.shape(), truth.shape())));
    }
    let (t, d) = truth.dims2();
    if t < 2 {
        return Err(Error::Config("trajectory scores need at least two rows".into()));
    }
    let n = pred.len() as f64;
    let mae = pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let rmse = (pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt();
    let mut cc = 0.0;
    for j in 0..d {
        let col = |x: &Tensor| (0..t).map(|r| x.get(r, j)).collect::<Vec<_>>();
        let (p, q) = (col(pred), col(truth));
        let (mp, mq) = (p.iter().sum::<f64>() / t as f64, q.iter().sum::<f64>() / t as f64);
        let cov: f64 = p.iter().zip(&q).map(|(a, b)| (a - mp) * (b - mq)).sum();
        let vp: f64 = p.iter().map(|a| (a - mp) * (a - mp)).sum();
        let vq: f64 = q.iter().map(|b| (b - mq) * (b - mq)).sum();
        if !(vp > 0.0 && vq > 0.0) {
            return Err(Error::Domain(format!("column {j} has zero variance; correlation is undefined")));
        }
        cc += cov / (vp * vq).sqrt();
    }
    Ok(TrajectoryScores {
        mae,
        rmse,
        cc: 100.0 * cc / d as f64,
    })
}
