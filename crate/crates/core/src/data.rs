//! Toy 2D distributions, chaotic attractor trajectories, standardization and
//! CSV persistence.
//!
//! Dataset files start with a `dim=<d>,name=<name>,rows=<M>` line followed by
//! one comma-separated sample per line. Trajectory files prefix every row
//! with its integer step index; a step of 0 starts a new trajectory.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut y = x.clone();
        for r in 0..y.rows() {
            for ((v, m), s) in y.row_mut(r).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        Ok(y)
    }

    pub fn invert(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut y = x.clone();
        for r in 0..y.rows() {
            for ((v, m), s) in y.row_mut(r).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = *v * s + m;
            }
        }
        Ok(y)
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.mean.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} columns, transform has {}",
                x.cols(),
                self.mean.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub dim: usize,
    /// `M x dim`.
    pub rows: Tensor,
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(name: &str, rows: Tensor) -> Result<Self> {
        if rows.shape().len() != 2 || rows.rows() == 0 || rows.cols() == 0 {
            return Err(Error::BadShape {
                shape: rows.shape().to_vec(),
                len: rows.len(),
            });
        }
        Ok(Self {
            name: name.to_string(),
            dim: rows.cols(),
            rows,
            standardization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Toy2d {
    EightGaussians,
    TwoMoons,
    Checkerboard,
}

impl Toy2d {
    pub fn name(self) -> &'static str {
        match self {
            Toy2d::EightGaussians => "eight_gaussians",
            Toy2d::TwoMoons => "two_moons",
            Toy2d::Checkerboard => "checkerboard",
        }
    }
}

impl FromStr for Toy2d {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eight_gaussians" => Ok(Toy2d::EightGaussians),
            "two_moons" => Ok(Toy2d::TwoMoons),
            "checkerboard" => Ok(Toy2d::Checkerboard),
            _ => Err(Error::Config(format!(
                "unknown toy distribution {s:?} (expected eight_gaussians, two_moons or checkerboard)"
            ))),
        }
    }
}

pub const EIGHT_GAUSSIANS_RADIUS: f64 = 2.0;
pub const EIGHT_GAUSSIANS_STD: f64 = 0.15;

/// Centers of the eight-Gaussian mixture.
pub fn eight_gaussian_centers() -> Vec<[f64; 2]> {
    (0..8)
        .map(|k| {
            let a = k as f64 * std::f64::consts::FRAC_PI_4;
            [EIGHT_GAUSSIANS_RADIUS * a.cos(), EIGHT_GAUSSIANS_RADIUS * a.sin()]
        })
        .collect()
}

fn toy_point(kind: Toy2d, rng: &mut Rng) -> [f64; 2] {
    match kind {
        Toy2d::EightGaussians => {
            let c = eight_gaussian_centers()[rng.below(8)];
            [
                c[0] + EIGHT_GAUSSIANS_STD * rng.normal(),
                c[1] + EIGHT_GAUSSIANS_STD * rng.normal(),
            ]
        }
        Toy2d::TwoMoons => {
            let a = std::f64::consts::PI * rng.uniform();
            let (x, y) = if rng.below(2) == 0 {
                (a.cos(), a.sin())
            } else {
                (1.0 - a.cos(), 0.5 - a.sin())
            };
            [x + 0.1 * rng.normal(), y + 0.1 * rng.normal()]
        }
        Toy2d::Checkerboard => {
            // Cells (i, j) of the board on [-2, 2]^2 with i + j even.
            let cell = rng.below(8);
            let i = cell / 2;
            let j = 2 * (cell % 2) + i % 2;
            [
                -2.0 + j as f64 + rng.uniform(),
                -2.0 + i as f64 + rng.uniform(),
            ]
        }
    }
}

pub fn gen_toy2d(kind: Toy2d, m: usize, rng: &mut Rng) -> Result<Dataset> {
    if m == 0 {
        return Err(Error::Config("dataset needs at least one row".into()));
    }
    let data: Vec<f64> = (0..m).flat_map(|_| toy_point(kind, rng)).collect();
    Dataset::new(kind.name(), Tensor::matrix(m, 2, data)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttractorKind {
    Lorenz,
    Rossler,
}

impl AttractorKind {
    pub fn name(self) -> &'static str {
        match self {
            AttractorKind::Lorenz => "lorenz",
            AttractorKind::Rossler => "rossler",
        }
    }

    pub fn default_params(self) -> Vec<f64> {
        match self {
            AttractorKind::Lorenz => vec![10.0, 28.0, 8.0 / 3.0],
            AttractorKind::Rossler => vec![0.2, 0.2, 5.7],
        }
    }

    fn rhs(self, p: &[f64], s: [f64; 3]) -> [f64; 3] {
        let [x, y, z] = s;
        match self {
            AttractorKind::Lorenz => [p[0] * (y - x), x * (p[1] - z) - y, x * y - p[2] * z],
            AttractorKind::Rossler => [-y - z, x + p[0] * y, p[1] + z * (x - p[2])],
        }
    }
}

impl FromStr for AttractorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lorenz" => Ok(AttractorKind::Lorenz),
            "rossler" => Ok(AttractorKind::Rossler),
            _ => Err(Error::Config(format!("unknown attractor {s:?} (expected lorenz or rossler)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttractorConfig {
    pub kind: AttractorKind,
    pub params: Vec<f64>,
    pub dt_int: f64,
    /// Total integrator steps, burn-in included.
    pub steps: usize,
    pub burn_in: usize,
    pub init: Vec<f64>,
}

impl AttractorConfig {
    pub fn new(kind: AttractorKind, steps: usize) -> Self {
        Self {
            kind,
            params: kind.default_params(),
            dt_int: 0.01,
            steps,
            burn_in: 1000,
            init: vec![1.0, 1.0, 1.0],
        }
    }
}

const ATTRACTOR_BOUND: f64 = 1e4;

/// One classical Runge-Kutta step.
pub fn rk4_step(kind: AttractorKind, params: &[f64], s: [f64; 3], dt: f64) -> [f64; 3] {
    let add = |a: [f64; 3], b: [f64; 3], h: f64| [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2]];
    let k1 = kind.rhs(params, s);
    let k2 = kind.rhs(params, add(s, k1, dt / 2.0));
    let k3 = kind.rhs(params, add(s, k2, dt / 2.0));
    let k4 = kind.rhs(params, add(s, k3, dt));
    let mut out = s;
    for i in 0..3 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// States after each of the `steps - burn_in` post-burn-in integrator
/// steps, as a `(steps - burn_in) x 3` tensor.
pub fn integrate_attractor(cfg: &AttractorConfig) -> Result<Tensor> {
    if !(cfg.dt_int > 0.0) || cfg.steps <= cfg.burn_in {
        return Err(Error::Config(format!(
            "need dt_int > 0 and steps > burn_in, got dt_int {} steps {} burn_in {}",
            cfg.dt_int, cfg.steps, cfg.burn_in
        )));
    }
    if cfg.params.len() != 3 || cfg.init.len() != 3 {
        return Err(Error::Config("attractors take three parameters and a 3D initial state".into()));
    }
    if cfg.init.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite initial state".into()));
    }
    let mut s = [cfg.init[0], cfg.init[1], cfg.init[2]];
    let mut out = Vec::with_capacity(3 * (cfg.steps - cfg.burn_in));
    for step in 0..cfg.steps {
        s = rk4_step(cfg.kind, &cfg.params, s, cfg.dt_int);
        let norm = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
        if !(norm <= ATTRACTOR_BOUND) {
            return Err(Error::AttractorDivergence { step });
        }
        if step >= cfg.burn_in {
            out.extend_from_slice(&s);
        }
    }
    Tensor::matrix(cfg.steps - cfg.burn_in, 3, out)
}

/// Every `every`-th row, starting with the first.
pub fn subsample(traj: &Tensor, every: usize) -> Result<Tensor> {
    if every == 0 {
        return Err(Error::Config("subsampling stride must be >= 1".into()));
    }
    let rows: Vec<Vec<f64>> = (0..traj.rows()).step_by(every).map(|r| traj.row(r).to_vec()).collect();
    Tensor::from_rows(&rows)
}

/// `count` trajectories of `states` states each, sampled every `every`
/// integrator steps after burn-in. Initial states are `(1, 1, 1)` plus
/// standard normal jitter so the trajectories decorrelate.
pub fn attractor_trajectories(kind: AttractorKind, count: usize, states: usize, every: usize, rng: &mut Rng) -> Result<Vec<Tensor>> {
    (0..count)
        .map(|_| {
            let mut cfg = AttractorConfig::new(kind, 0);
            cfg.steps = cfg.burn_in + states * every;
            cfg.init = vec![1.0 + rng.normal(), 1.0 + rng.normal(), 1.0 + rng.normal()];
            subsample(&integrate_attractor(&cfg)?, every)
        })
        .collect()
}

fn mean_and_scale(x: &Tensor) -> Result<Standardization> {
    let (m, d) = x.dims2();
    if m < 2 {
        return Err(Error::Domain("standardization needs at least two rows".into()));
    }
    let mut mean = vec![0.0; d];
    for r in 0..m {
        for (a, v) in mean.iter_mut().zip(x.row(r)) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let mut var = vec![0.0; d];
    for r in 0..m {
        for ((a, v), mu) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *a += (v - mu) * (v - mu);
        }
    }
    let mut scale = Vec::with_capacity(d);
    for (j, v) in var.into_iter().enumerate() {
        let s = (v / (m - 1) as f64).sqrt();
        if !(s > 0.0) {
            return Err(Error::Domain(format!("column {j} has zero variance")));
        }
        scale.push(s);
    }
    Ok(Standardization { mean, scale })
}

/// Zero-mean, unit-variance copy with the transform recorded.
pub fn standardize(ds: &Dataset) -> Result<Dataset> {
    let tr = mean_and_scale(&ds.rows)?;
    Ok(Dataset {
        name: ds.name.clone(),
        dim: ds.dim,
        rows: tr.apply(&ds.rows)?,
        standardization: Some(tr),
    })
}

/// Undo a recorded standardization.
pub fn destandardize(ds: &Dataset) -> Result<Dataset> {
    let tr = ds
        .standardization
        .as_ref()
        .ok_or_else(|| Error::Config("dataset carries no standardization".into()))?;
    Ok(Dataset {
        name: ds.name.clone(),
        dim: ds.dim,
        rows: tr.invert(&ds.rows)?,
        standardization: None,
    })
}

/// One transform fitted on all states of all trajectories.
pub fn standardize_trajectories(trajs: &[Tensor]) -> Result<(Vec<Tensor>, Standardization)> {
    let rows: Vec<Vec<f64>> = trajs.iter().flat_map(|t| t.to_rows()).collect();
    let tr = mean_and_scale(&Tensor::from_rows(&rows)?)?;
    let out = trajs.iter().map(|t| tr.apply(t)).collect::<Result<_>>()?;
    Ok((out, tr))
}

fn header(dim: usize, name: &str, rows: usize) -> String {
    format!("dim={dim},name={name},rows={rows}")
}

fn parse_header(line: &str) -> Result<(usize, String, usize)> {
    let mut dim = None;
    let mut name = None;
    let mut rows = None;
    for part in line.trim().split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad header field {part:?}")))?;
        let num = || v.parse::<usize>().map_err(|_| Error::Parse(format!("bad {k} value {v:?}")));
        match k {
            "dim" => dim = Some(num()?),
            "name" => name = Some(v.to_string()),
            "rows" => rows = Some(num()?),
            _ => return Err(Error::Parse(format!("unknown header field {k:?}"))),
        }
    }
    match (dim, name, rows) {
        (Some(d), Some(n), Some(r)) => Ok((d, n, r)),
        _ => Err(Error::Parse(format!("header {line:?} needs dim, name and rows"))),
    }
}

fn format_row(out: &mut String, prefix: Option<usize>, row: &[f64]) {
    if let Some(p) = prefix {
        let _ = write!(out, "{p},");
    }
    for (j, v) in row.iter().enumerate() {
        if j > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

fn parse_row(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split(',')
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {lineno}: bad number {f:?}")))
        })
        .collect()
}

/// Write a dataset; numbers are printed in shortest round-trip form.
pub fn write_dataset(ds: &Dataset, w: &mut impl Write) -> Result<()> {
    let mut s = header(ds.dim, &ds.name, ds.len());
    s.push('\n');
    for r in 0..ds.len() {
        format_row(&mut s, None, ds.rows.row(r));
    }
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_dataset(r: impl BufRead) -> Result<Dataset> {
    let mut lines = r.lines();
    let head = lines.next().ok_or_else(|| Error::Parse("empty dataset file".into()))??;
    let (dim, name, rows) = parse_header(&head)?;
    let mut data = Vec::with_capacity(rows * dim);
    let mut count = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_row(&line, i + 2)?;
        if row.len() != dim {
            return Err(Error::Parse(format!("line {}: {} values, expected {dim}", i + 2, row.len())));
        }
        data.extend(row);
        count += 1;
    }
    if count != rows {
        return Err(Error::Parse(format!("header says {rows} rows, found {count}")));
    }
    Dataset::new(&name, Tensor::matrix(rows, dim, data)?)
}

/// Write trajectories back to back; each restarts its step index at 0.
pub fn write_trajectories(name: &str, trajs: &[Tensor], w: &mut impl Write) -> Result<()> {
    let dim = trajs.first().map_or(0, |t| t.cols());
    if trajs.iter().any(|t| t.cols() != dim) {
        return Err(Error::DimensionMismatch("trajectories differ in dimension".into()));
    }
    let total: usize = trajs.iter().map(|t| t.rows()).sum();
    let mut s = header(dim, name, total);
    s.push('\n');
    for t in trajs {
        for r in 0..t.rows() {
            format_row(&mut s, Some(r), t.row(r));
        }
    }
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_trajectories(r: impl BufRead) -> Result<(String, Vec<Tensor>)> {
    let mut lines = r.lines();
    let head = lines.next().ok_or_else(|| Error::Parse("empty trajectory file".into()))??;
    let (dim, name, rows) = parse_header(&head)?;
    let mut trajs: Vec<Vec<f64>> = Vec::new();
    let mut count = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (step, rest) = line
            .split_once(',')
            .ok_or_else(|| Error::Parse(format!("line {}: missing step column", i + 2)))?;
        let step: usize = step
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad step {step:?}", i + 2)))?;
        let row = parse_row(rest, i + 2)?;
        if row.len() != dim {
            return Err(Error::Parse(format!("line {}: {} values, expected {dim}", i + 2, row.len())));
        }
        if step == 0 {
            trajs.push(Vec::new());
        }
        let cur = trajs
            .last_mut()
            .ok_or_else(|| Error::Parse("first trajectory row must have step 0".into()))?;
        if step != cur.len() / dim {
            return Err(Error::Parse(format!("line {}: step {step} out of sequence", i + 2)));
        }
        cur.extend(row);
        count += 1;
    }
    if count != rows {
        return Err(Error::Parse(format!("header says {rows} rows, found {count}")));
    }
    let trajs = trajs
        .into_iter()
        .map(|d| Tensor::matrix(d.len() / dim, dim, d))
        .collect::<Result<_>>()?;
    Ok((name, trajs))
}
