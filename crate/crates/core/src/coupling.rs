//! Pairing of noise and data minibatches.
//!
//! `perm[i] = j` pairs `x0[i]` with `x1[j]`. The OT coupling solves the
//! square assignment problem on squared Euclidean costs exactly with the
//! shortest-augmenting-path form of the Kuhn-Munkres algorithm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest batch the exact solver accepts.
pub const MAX_OT_BATCH: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    Independent,
    Ot,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    pub perm: Vec<usize>,
    pub cost: f64,
    pub mode: CouplingMode,
}

fn check_batches(x0: &Tensor, x1: &Tensor) -> Result<()> {
    if x0.rows() != x1.rows() {
        return Err(Error::DimensionMismatch(format!(
            "batch sizes differ: {} vs {}",
            x0.rows(),
            x1.rows()
        )));
    }
    if x0.cols() != x1.cols() {
        return Err(Error::DimensionMismatch(format!(
            "sample dimensions differ: {} vs {}",
            x0.cols(),
            x1.cols()
        )));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Total squared Euclidean cost of pairing `x0[i]` with `x1[perm[i]]`.
pub fn transport_cost(x0: &Tensor, x1: &Tensor, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| sq_dist(x0.row(i), x1.row(j))).sum()
}

/// Identity pairing of two independently drawn batches.
pub fn independent_coupling(x0: &Tensor, x1: &Tensor) -> Result<Coupling> {
    check_batches(x0, x1)?;
    let perm: Vec<usize> = (0..x0.rows()).collect();
    Ok(Coupling {
        cost: transport_cost(x0, x1, &perm),
        perm,
        mode: CouplingMode::Independent,
    })
}

/// Exact minibatch optimal-transport pairing.
pub fn minibatch_ot(x0: &Tensor, x1: &Tensor) -> Result<Coupling> {
    check_batches(x0, x1)?;
    let n = x0.rows();
    if n > MAX_OT_BATCH {
        return Err(Error::Config(format!("OT batch {n} exceeds solver bound {MAX_OT_BATCH}")));
    }
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = sq_dist(x0.row(i), x1.row(j));
        }
    }
    let perm = assignment(&cost, n);
    Ok(Coupling {
        cost: transport_cost(x0, x1, &perm),
        perm,
        mode: CouplingMode::Ot,
    })
}

/// Minimum-cost perfect matching of an `n x n` row-major cost matrix.
/// Returns the column assigned to each row. Among equal candidates the
/// lowest column index is taken, so results are deterministic.
pub fn assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return vec![];
    }
    // 1-based arrays; column 0 is the virtual source.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = inf);
        used.iter_mut().for_each(|m| *m = false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = inf;
            let mut j1 = 0;
            let row = &cost[(i0 - 1) * n..i0 * n];
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[row_of[j] - 1] = j - 1;
    }
    perm
}
