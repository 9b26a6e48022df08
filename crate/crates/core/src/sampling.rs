//! Drift assembly, Euler-Maruyama generation and likelihoods.
//!
//! The drift is
//! `w = g0 (x1_hat - x) / (1 - t) + ((2 g1 - sigma_t^2) / 2) est_1 + sum_k gk est_k`
//! with `gk = c[k] sigma_t^2`, and each step draws
//! `x + w dt + sigma_t sqrt(dt) z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{score_from_heads, HeadOutputs, IdffNet, MAX_ORDER};
use crate::paths::{sigma_schedule, PathConfig};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// `g0 = 1 - sum_k gk`.
    Normalized,
    /// `g0 = 1`.
    Unit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaSchedule {
    /// `c[k - 1]` multiplies `sigma_t^2` in the order-`k` coefficient.
    pub c: Vec<f64>,
    pub gamma0_mode: GammaMode,
}

impl GammaSchedule {
    pub fn new(c: Vec<f64>, gamma0_mode: GammaMode) -> Result<Self> {
        let g = Self { c, gamma0_mode };
        g.validate()?;
        Ok(g)
    }

    /// Normalized schedule with `c = [1.0, 0.5, 0.25]` truncated to `order`.
    pub fn default_for_order(order: usize) -> Self {
        Self {
            c: [1.0, 0.5, 0.25].into_iter().take(order).collect(),
            gamma0_mode: GammaMode::Normalized,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c.len() > MAX_ORDER {
            return Err(Error::Config(format!("{} gamma coefficients, at most {MAX_ORDER}", self.c.len())));
        }
        if self.c.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("gamma coefficients must be finite".into()));
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.c.len()
    }

    /// `gk` for `k >= 1`.
    pub fn gamma_k(&self, k: usize, sigma_t: f64) -> f64 {
        self.c[k - 1] * sigma_t * sigma_t
    }

    pub fn gamma0(&self, sigma_t: f64) -> f64 {
        match self.gamma0_mode {
            GammaMode::Unit => 1.0,
            GammaMode::Normalized => 1.0 - (1..=self.order()).map(|k| self.gamma_k(k, sigma_t)).sum::<f64>(),
        }
    }

    /// Coefficient of the order-1 estimate: `(2 g1 - sigma_t^2) / 2`, or 0
    /// without an order-1 term.
    pub fn score_coef(&self, sigma_t: f64) -> f64 {
        if self.order() == 0 {
            0.0
        } else {
            (2.0 * self.gamma_k(1, sigma_t) - sigma_t * sigma_t) / 2.0
        }
    }
}

/// Anything that produces head outputs for a batch at a shared time.
pub trait HeadModel {
    fn order(&self) -> usize;
    fn data_dim(&self) -> usize;
    fn heads(&self, xt: &Tensor, t: f64, n: Option<&[usize]>) -> Result<HeadOutputs>;
}

impl HeadModel for IdffNet {
    fn order(&self) -> usize {
        self.config().order
    }

    fn data_dim(&self) -> usize {
        self.config().data_dim
    }

    fn heads(&self, xt: &Tensor, t: f64, n: Option<&[usize]>) -> Result<HeadOutputs> {
        self.forward_batch(xt, &vec![t; xt.rows()], n)
    }
}

/// Combine head outputs into the drift at time `t`. Momentum terms are
/// skipped where `sigma_t == 0`; their coefficients vanish there.
pub fn drift_from_heads(xt: &Tensor, t: f64, heads: &HeadOutputs, gamma: &GammaSchedule, cfg: &PathConfig) -> Result<Tensor> {
    if t > cfg.t_max() * (1.0 + 1e-12) || t < 0.0 {
        return Err(Error::Singular(format!("drift evaluated at t = {t}, beyond {}", cfg.t_max())));
    }
    if gamma.order() > heads.n_hat.len() {
        return Err(Error::Config(format!(
            "gamma schedule of order {} needs at least that many heads, model has {}",
            gamma.order(),
            heads.n_hat.len()
        )));
    }
    let sigma = sigma_schedule(t, cfg)?;
    let g0 = gamma.gamma0(sigma);
    let inv = 1.0 / (1.0 - t);
    let mut w: Vec<f64> = heads
        .x1_hat
        .data()
        .iter()
        .zip(xt.data())
        .map(|(a, x)| g0 * (a - x) * inv)
        .collect();
    if sigma > 0.0 && gamma.order() > 0 {
        let est = score_from_heads(heads, sigma)?;
        for k in 1..=gamma.order() {
            let coef = if k == 1 {
                gamma.score_coef(sigma)
            } else {
                gamma.gamma_k(k, sigma)
            };
            if coef == 0.0 {
                continue;
            }
            for (w, e) in w.iter_mut().zip(est[k - 1].data()) {
                *w += coef * e;
            }
        }
    }
    Tensor::new(xt.shape().to_vec(), w)
}

/// Drift for a batch of states at a shared time.
pub fn assemble_drift(
    model: &impl HeadModel,
    xt: &Tensor,
    t: f64,
    n: Option<&[usize]>,
    gamma: &GammaSchedule,
    cfg: &PathConfig,
) -> Result<Tensor> {
    if gamma.order() > model.order() {
        return Err(Error::Config(format!(
            "gamma schedule of order {} exceeds model order {}",
            gamma.order(),
            model.order()
        )));
    }
    let heads = model.heads(xt, t, n)?;
    drift_from_heads(xt, t, &heads, gamma, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRun {
    pub nfe: usize,
    pub seed: u64,
    #[serde(default)]
    pub store_trajectory: bool,
    /// Skip the noise on the last step.
    #[serde(default)]
    pub final_step_deterministic: bool,
    /// Draw Gaussian increments. Off gives the drift-only ODE.
    #[serde(default = "yes")]
    pub stochastic: bool,
}

fn yes() -> bool {
    true
}

impl SampleRun {
    pub fn new(nfe: usize, seed: u64) -> Self {
        Self {
            nfe,
            seed,
            store_trajectory: false,
            final_step_deterministic: false,
            stochastic: true,
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.nfe as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.nfe == 0 {
            return Err(Error::Config("nfe must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    /// Final states, `B x d`.
    pub samples: Tensor,
    /// All `nfe + 1` states when requested.
    pub trajectory: Option<Vec<Tensor>>,
}

/// Run the sampler from given starting states with a caller-owned stream.
#[allow(clippy::too_many_arguments)]
pub fn generate_from(
    model: &impl HeadModel,
    gamma: &GammaSchedule,
    cfg: &PathConfig,
    run: &SampleRun,
    x0: Tensor,
    n: Option<&[usize]>,
    rng: &mut Rng,
) -> Result<Generated> {
    run.validate()?;
    let dt = run.dt();
    let mut x = x0;
    let mut traj = run.store_trajectory.then(|| vec![x.clone()]);
    for i in 0..run.nfe {
        let t = (i as f64 * dt).min(cfg.t_max());
        let w = assemble_drift(model, &x, t, n, gamma, cfg)?;
        let sigma = sigma_schedule(t, cfg)?;
        let last = i + 1 == run.nfe;
        let noisy = run.stochastic && sigma > 0.0 && !(last && run.final_step_deterministic);
        let scale = sigma * dt.sqrt();
        let data = x.data_mut();
        for (v, w) in data.iter_mut().zip(w.data()) {
            *v += w * dt;
        }
        if noisy {
            for v in data.iter_mut() {
                *v += scale * rng.normal();
            }
        }
        if !x.is_finite() {
            return Err(Error::SamplingNonFinite { step: i });
        }
        if let Some(tr) = traj.as_mut() {
            tr.push(x.clone());
        }
    }
    Ok(Generated {
        samples: x,
        trajectory: traj,
    })
}

/// `b` samples starting from `x0 ~ N(0, I)`.
pub fn generate(model: &impl HeadModel, gamma: &GammaSchedule, cfg: &PathConfig, run: &SampleRun, b: usize) -> Result<Generated> {
    if b == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let mut rng = Rng::new(run.seed);
    let d = model.data_dim();
    let x0 = Tensor::matrix(b, d, rng.normals(b * d))?;
    generate_from(model, gamma, cfg, run, x0, None, &mut rng)
}

/// Free-running sequence of `steps` states. Step 1 starts from `x_init` or
/// `N(0, I)`; later steps start from the previous state plus
/// `N(0, sigma0^2 I)`. A static model is run without step indices.
pub fn generate_timeseries(
    model: &IdffNet,
    gamma: &GammaSchedule,
    cfg: &PathConfig,
    run: &SampleRun,
    steps: usize,
    x_init: Option<&[f64]>,
) -> Result<Tensor> {
    let d = model.data_dim();
    if let Some(x) = x_init {
        if x.len() != d {
            return Err(Error::DimensionMismatch(format!("initial state has {} entries, model {d}", x.len())));
        }
    }
    if let Some(max) = model.config().max_steps {
        if steps > max {
            return Err(Error::Config(format!("{steps} steps requested, model knows {max}")));
        }
    }
    let timeseries = model.config().max_steps.is_some();
    let mut rng = Rng::new(run.seed);
    let mut out = Vec::with_capacity(steps * d);
    let mut prev: Option<Vec<f64>> = None;
    for n in 1..=steps {
        let start = match (&prev, x_init) {
            (None, Some(x)) => x.to_vec(),
            (None, None) => rng.normals(d),
            (Some(p), _) => p.iter().map(|v| v + cfg.sigma0 * rng.normal()).collect(),
        };
        let idx = [n];
        let n_arg = timeseries.then_some(&idx[..]);
        let g = generate_from(model, gamma, cfg, run, Tensor::matrix(1, d, start)?, n_arg, &mut rng)?;
        let x = g.samples.into_data();
        out.extend_from_slice(&x);
        prev = Some(x);
    }
    Tensor::matrix(steps, d, out)
}

/// One-step-ahead generation: row `i` is drawn given `prev[i]` at step
/// index `n[i]`.
pub fn predict_next(
    model: &IdffNet,
    gamma: &GammaSchedule,
    cfg: &PathConfig,
    run: &SampleRun,
    prev: &Tensor,
    n: &[usize],
) -> Result<Tensor> {
    let mut rng = Rng::new(run.seed);
    let noise = rng.normals(prev.len());
    let start: Vec<f64> = prev.data().iter().zip(noise).map(|(p, z)| p + cfg.sigma0 * z).collect();
    let x0 = Tensor::new(prev.shape().to_vec(), start)?;
    let n_arg = model.config().max_steps.is_some().then_some(n);
    Ok(generate_from(model, gamma, cfg, run, x0, n_arg, &mut rng)?.samples)
}

/// A time-dependent vector field acting row-wise on `B x d` batches.
pub trait DriftField {
    fn dim(&self) -> usize;
    fn drift(&self, x: &Tensor, t: f64) -> Result<Tensor>;
}

/// The sampling drift of a trained model, for likelihoods.
pub struct ModelDrift<'a, M: HeadModel> {
    pub model: &'a M,
    pub gamma: &'a GammaSchedule,
    pub path: &'a PathConfig,
    pub step: Option<usize>,
}

impl<M: HeadModel> DriftField for ModelDrift<'_, M> {
    fn dim(&self) -> usize {
        self.model.data_dim()
    }

    fn drift(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        match self.step {
            None => assemble_drift(self.model, x, t, None, self.gamma, self.path),
            Some(n) => {
                let n = vec![n; x.rows()];
                assemble_drift(self.model, x, t, Some(&n), self.gamma, self.path)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivMode {
    /// Central differences along every coordinate.
    ExactFd,
    /// Rademacher probes with finite-difference Jacobian-vector products.
    Hutchinson,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeGrid {
    Uniform,
    /// Geometric in `1 - t`, refining where the drift is stiff.
    Geometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LikelihoodConfig {
    pub nfe: usize,
    pub div: DivMode,
    pub probes: usize,
    /// Integration starts here and runs back to `t = 0`.
    pub t_end: f64,
    pub grid: TimeGrid,
    pub fd_step: f64,
}

impl LikelihoodConfig {
    pub fn new(nfe: usize, div: DivMode, path: &PathConfig) -> Self {
        Self {
            nfe,
            div,
            probes: 8,
            t_end: path.t_max(),
            grid: TimeGrid::Geometric,
            fd_step: 1e-4,
        }
    }

    /// Decreasing times from `t_end` to 0.
    pub fn times(&self) -> Vec<f64> {
        let n = self.nfe;
        let s0 = 1.0 - self.t_end;
        let mut ts: Vec<f64> = (0..=n)
            .map(|i| {
                let f = i as f64 / n as f64;
                match self.grid {
                    TimeGrid::Uniform => self.t_end * (1.0 - f),
                    TimeGrid::Geometric => 1.0 - s0 * (1.0 / s0).powf(f),
                }
            })
            .collect();
        ts[0] = self.t_end;
        ts[n] = 0.0;
        ts
    }

    fn validate(&self) -> Result<()> {
        if self.nfe < 10 {
            return Err(Error::Config(format!("likelihood nfe {} must be >= 10", self.nfe)));
        }
        if !(self.t_end > 0.0 && self.t_end <= 1.0) {
            return Err(Error::Config(format!("t_end {} must lie in (0, 1]", self.t_end)));
        }
        if self.grid == TimeGrid::Geometric && self.t_end >= 1.0 {
            return Err(Error::Config("geometric grid needs t_end < 1".into()));
        }
        if self.div == DivMode::Hutchinson && self.probes < 2 {
            return Err(Error::Config("hutchinson needs >= 2 probes".into()));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::Config("fd_step must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Likelihood {
    pub log_p: f64,
    /// Standard error over Hutchinson probes.
    pub std_err: Option<f64>,
    /// `log p0` at the end of the backward pass.
    pub log_p0: f64,
    /// Integrated divergence.
    pub divergence: f64,
}

const BLOW_UP: f64 = 1e6;

fn std_normal_logpdf(x: &[f64]) -> f64 {
    let d = x.len() as f64;
    -0.5 * d * (2.0 * std::f64::consts::PI).ln() - 0.5 * x.iter().map(|v| v * v).sum::<f64>()
}

/// Per-row divergence, or per-(row, probe) with Hutchinson.
fn divergence(field: &dyn DriftField, x: &Tensor, t: f64, cfg: &LikelihoodConfig, probes: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    let (b, d) = x.dims2();
    let h = cfg.fd_step;
    let shifted = |dir: &dyn Fn(usize, usize) -> f64, sign: f64| -> Result<Tensor> {
        let mut y = x.clone();
        for r in 0..b {
            for (j, v) in y.row_mut(r).iter_mut().enumerate() {
                *v += sign * h * dir(r, j);
            }
        }
        field.drift(&y, t)
    };
    match cfg.div {
        DivMode::ExactFd => {
            let mut div = vec![0.0; b];
            for j in 0..d {
                let e = |_: usize, k: usize| if k == j { 1.0 } else { 0.0 };
                let (p, m) = (shifted(&e, 1.0)?, shifted(&e, -1.0)?);
                for (r, v) in div.iter_mut().enumerate() {
                    *v += (p.get(r, j) - m.get(r, j)) / (2.0 * h);
                }
            }
            Ok(div.into_iter().map(|v| vec![v]).collect())
        }
        DivMode::Hutchinson => {
            let mut div = vec![Vec::with_capacity(probes.len()); b];
            for z in probes {
                let dir = |r: usize, k: usize| z.get(r, k);
                let (p, m) = (shifted(&dir, 1.0)?, shifted(&dir, -1.0)?);
                for (r, v) in div.iter_mut().enumerate() {
                    let jvp: f64 = (0..d).map(|k| z.get(r, k) * (p.get(r, k) - m.get(r, k))).sum();
                    v.push(jvp / (2.0 * h));
                }
            }
            Ok(div)
        }
    }
}

/// Log-density of every row of `x1` under the model, by integrating the
/// drift-only ODE backward to `t = 0` with the trapezoidal rule for the
/// divergence. Rows are independent.
pub fn log_likelihood_batch(field: &dyn DriftField, x1: &Tensor, cfg: &LikelihoodConfig, rng: &mut Rng) -> Result<Vec<Likelihood>> {
    cfg.validate()?;
    let (b, d) = x1.dims2();
    if d != field.dim() {
        return Err(Error::DimensionMismatch(format!("points have {d} entries, field {}", field.dim())));
    }
    if !x1.is_finite() {
        return Err(Error::Domain("non-finite evaluation point".into()));
    }
    let probes: Vec<Tensor> = match cfg.div {
        DivMode::ExactFd => vec![],
        DivMode::Hutchinson => (0..cfg.probes)
            .map(|_| Tensor::matrix(b, d, (0..b * d).map(|_| rng.rademacher()).collect()))
            .collect::<Result<_>>()?,
    };
    let ts = cfg.times();
    let mut x = x1.clone();
    let mut div = divergence(field, &x, ts[0], cfg, &probes)?;
    let mut acc = vec![vec![0.0; div[0].len()]; b];
    for step in 0..cfg.nfe {
        let (t, t_next) = (ts[step], ts[step + 1]);
        let h = t - t_next;
        let w = field.drift(&x, t)?;
        for (v, w) in x.data_mut().iter_mut().zip(w.data()) {
            *v -= h * w;
        }
        if x.data().iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP) {
            return Err(Error::LikelihoodBlowUp { step });
        }
        let next = divergence(field, &x, t_next, cfg, &probes)?;
        for ((a, d0), d1) in acc.iter_mut().zip(&div).zip(&next) {
            for ((a, u), v) in a.iter_mut().zip(d0).zip(d1) {
                *a += 0.5 * h * (u + v);
            }
        }
        if acc.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::LikelihoodBlowUp { step });
        }
        div = next;
    }
    Ok((0..b)
        .map(|r| {
            let log_p0 = std_normal_logpdf(x.row(r));
            let per = &acc[r];
            let n = per.len() as f64;
            let mean = per.iter().sum::<f64>() / n;
            let std_err = (per.len() > 1).then(|| {
                let var = per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            });
            Likelihood {
                log_p: log_p0 - mean,
                std_err,
                log_p0,
                divergence: mean,
            }
        })
        .collect())
}

/// Log-density of a single point.
pub fn log_likelihood(field: &dyn DriftField, x1: &[f64], cfg: &LikelihoodConfig, rng: &mut Rng) -> Result<Likelihood> {
    let x = Tensor::matrix(1, x1.len(), x1.to_vec())?;
    Ok(log_likelihood_batch(field, &x, cfg, rng)?.remove(0))
}
