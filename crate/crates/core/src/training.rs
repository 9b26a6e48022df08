//! The training objective and loops.
//!
//! Per sample the loss is `beta(t)^2 |x1_hat - x1|^2` plus, for each order
//! `k`, `|n_hat[k] - target_k|^2` with standardized targets `eps0`, the
//! all-ones vector and zero for `k = 1, 2, 3`. Terms are averaged over the
//! batch. The loss never sees a gamma schedule, so one trained model serves
//! every schedule at sampling time.

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coupling::{independent_coupling, minibatch_ot};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, IdffNet, ModelConfig, NetInputs, NetNodes};
use crate::optim::{adam_step, AdamState};
use crate::paths::{bridge_point, BridgeSample, PathConfig, DEFAULT_T_EPS};
use crate::rng::Rng;
use crate::sampling::GammaSchedule;
use crate::tensor::{Bindings, Graph, NodeId, Tensor};

/// Total loss above which training aborts.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeStrategy {
    Linear,
    Logarithmic,
    Beta,
    Cosine,
}

impl TimeStrategy {
    pub const ALL: [TimeStrategy; 4] = [
        TimeStrategy::Linear,
        TimeStrategy::Logarithmic,
        TimeStrategy::Beta,
        TimeStrategy::Cosine,
    ];

    /// Map a uniform draw `u` in `[0, 1]` to a training time.
    pub fn map(self, u: f64) -> f64 {
        match self {
            TimeStrategy::Linear => u,
            TimeStrategy::Logarithmic => (1.0 + (std::f64::consts::E - 1.0) * u).ln(),
            // Inverse CDF of Beta(2, 1), density 2t.
            TimeStrategy::Beta => u.sqrt(),
            TimeStrategy::Cosine => (std::f64::consts::FRAC_PI_2 * u).sin(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TimeStrategy::Linear => "linear",
            TimeStrategy::Logarithmic => "logarithmic",
            TimeStrategy::Beta => "beta",
            TimeStrategy::Cosine => "cosine",
        }
    }

    /// The map as a formula in the uniform draw `u`.
    pub fn formula(self) -> &'static str {
        match self {
            TimeStrategy::Linear => "t = u",
            TimeStrategy::Logarithmic => "t = ln(1 + (e - 1) u)",
            TimeStrategy::Beta => "t = sqrt(u)  (Beta(2, 1))",
            TimeStrategy::Cosine => "t = sin(pi u / 2)",
        }
    }
}

impl FromStr for TimeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TimeStrategy::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown time strategy {s:?} (expected linear, logarithmic, beta or cosine)")))
    }
}

pub fn sample_time(strategy: TimeStrategy, rng: &mut Rng) -> f64 {
    strategy.map(rng.uniform())
}

/// `beta(t) = 1 / (1 - t)`, defined up to the training clamp.
pub fn beta_weight(t: f64) -> Result<f64> {
    if !(t <= 1.0 - DEFAULT_T_EPS * (1.0 - 1e-9)) {
        return Err(Error::Singular(format!("beta weight at t = {t} beyond 1 - {DEFAULT_T_EPS}")));
    }
    Ok(1.0 / (1.0 - t))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iters: usize,
    pub lr: f64,
    pub use_ot: bool,
    pub time_strategy: TimeStrategy,
    /// Number of noise heads `K`.
    pub order: usize,
    pub seed: u64,
    pub path: PathConfig,
    pub hidden_dim: usize,
    pub depth: usize,
    pub time_embed_dim: usize,
    pub step_embed_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            iters: 8000,
            lr: 1e-3,
            use_ot: false,
            time_strategy: TimeStrategy::Linear,
            order: 1,
            seed: 0,
            path: PathConfig::default(),
            hidden_dim: 64,
            depth: 3,
            time_embed_dim: 16,
            step_embed_dim: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.path.validate()?;
        if self.batch_size == 0 || (self.use_ot && self.batch_size < 2) {
            return Err(Error::Config(format!("batch size {} too small", self.batch_size)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.lr)));
        }
        Ok(())
    }

    fn model_config(&self, data_dim: usize, max_steps: Option<usize>) -> ModelConfig {
        ModelConfig {
            data_dim,
            hidden_dim: self.hidden_dim,
            depth: self.depth,
            order: self.order,
            time_embed_dim: self.time_embed_dim,
            max_steps,
            step_embed_dim: self.step_embed_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub denoiser: f64,
    pub per_order: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub loss: LossBreakdown,
    /// Transport cost of the pairing used, and of the identity pairing.
    pub pair_cost: f64,
    pub identity_cost: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub trace: Vec<TraceRow>,
}

/// Loss graph over a fixed network structure.
struct LossGraph {
    g: Graph,
    denoiser: NodeId,
    orders: Vec<NodeId>,
    total: NodeId,
}

/// Per-batch loss inputs.
struct LossInputs {
    x1: Tensor,
    beta2: Tensor,
    targets: Vec<Tensor>,
}

impl LossGraph {
    fn new(net: &IdffNet, batch: usize, train: bool) -> Self {
        let mut g = Graph::new();
        let NetNodes { x1_hat, n_hat } = net.build_graph(&mut g, train);
        let inv_b = 1.0 / batch as f64;
        let x1 = g.input("x1", false);
        let beta2 = g.input("beta2", false);
        let diff = g.sub(x1_hat, x1);
        let sq = g.square(diff);
        let weighted = g.mul(sq, beta2);
        let s = g.sum(weighted);
        let denoiser = g.scale(s, inv_b);
        let mut total = denoiser;
        let mut orders = Vec::new();
        for (k, &h) in n_hat.iter().enumerate() {
            let target = g.input(&format!("target{}", k + 1), false);
            let diff = g.sub(h, target);
            let sq = g.square(diff);
            let s = g.sum(sq);
            let term = g.scale(s, inv_b);
            orders.push(term);
            total = g.add(total, term);
        }
        Self { g, denoiser, orders, total }
    }

    fn forward(&mut self, net: &IdffNet, inputs: &NetInputs, loss: &LossInputs) -> Result<LossBreakdown> {
        let mut b = Bindings::new();
        net.bind(inputs, &mut b);
        b.insert("x1", &loss.x1);
        b.insert("beta2", &loss.beta2);
        let names: Vec<String> = (1..=loss.targets.len()).map(|k| format!("target{k}")).collect();
        for (n, t) in names.iter().zip(&loss.targets) {
            b.insert(n.as_str(), t);
        }
        self.g.forward(&b, &[self.total])?;
        let v = |id: NodeId| self.g.value(id).map_or(f64::NAN, |t| t.item());
        Ok(LossBreakdown {
            total: v(self.total),
            denoiser: v(self.denoiser),
            per_order: self.orders.iter().map(|&id| v(id)).collect(),
        })
    }
}

fn loss_inputs(samples: &[BridgeSample], order: usize) -> Result<(Tensor, Vec<f64>, LossInputs)> {
    let b = samples.len();
    let d = samples[0].x1.len();
    let mut xt = Vec::with_capacity(b * d);
    let mut x1 = Vec::with_capacity(b * d);
    let mut eps = Vec::with_capacity(b * d);
    let mut ts = Vec::with_capacity(b);
    let mut beta2 = Vec::with_capacity(b);
    for s in samples {
        if s.x1.len() != d {
            return Err(Error::DimensionMismatch("samples differ in dimension".into()));
        }
        xt.extend_from_slice(&s.xt);
        x1.extend_from_slice(&s.x1);
        eps.extend_from_slice(&s.eps0);
        ts.push(s.t);
        let w = beta_weight(s.t)?;
        beta2.push(w * w);
    }
    let mut targets = Vec::with_capacity(order);
    if order >= 1 {
        targets.push(Tensor::matrix(b, d, eps)?);
    }
    if order >= 2 {
        targets.push(Tensor::full(&[b, d], 1.0));
    }
    for _ in 3..=order {
        targets.push(Tensor::zeros(&[b, d]));
    }
    Ok((
        Tensor::matrix(b, d, xt)?,
        ts,
        LossInputs {
            x1: Tensor::matrix(b, d, x1)?,
            beta2: Tensor::matrix(b, 1, beta2)?,
            targets,
        },
    ))
}

/// Loss of `model` on a batch of bridge samples.
pub fn idff_loss(samples: &[BridgeSample], model: &IdffNet, order: usize, n: Option<&[usize]>) -> Result<LossBreakdown> {
    if order != model.order() {
        return Err(Error::Config(format!("loss order {order} but model has {} heads", model.order())));
    }
    if samples.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let (xt, ts, li) = loss_inputs(samples, order)?;
    let inputs = model.inputs(xt, &ts, n)?;
    let mut lg = LossGraph::new(model, samples.len(), false);
    lg.forward(model, &inputs, &li)
}

/// Where the `(x0, x1, n)` triples of a batch come from.
trait PairSource {
    fn dim(&self) -> usize;
    fn max_steps(&self) -> Option<usize>;
    /// Draw a batch of `(x0, x1, n)`.
    fn draw(&self, b: usize, rng: &mut Rng) -> Result<(Tensor, Tensor, Option<Vec<usize>>)>;
}

struct StaticSource<'a> {
    rows: &'a Tensor,
}

impl PairSource for StaticSource<'_> {
    fn dim(&self) -> usize {
        self.rows.cols()
    }

    fn max_steps(&self) -> Option<usize> {
        None
    }

    fn draw(&self, b: usize, rng: &mut Rng) -> Result<(Tensor, Tensor, Option<Vec<usize>>)> {
        let d = self.dim();
        let m = self.rows.rows();
        let mut x1 = Vec::with_capacity(b * d);
        for _ in 0..b {
            x1.extend_from_slice(self.rows.row(rng.below(m)));
        }
        let x0 = rng.normals(b * d);
        Ok((Tensor::matrix(b, d, x0)?, Tensor::matrix(b, d, x1)?, None))
    }
}

struct SeriesSource<'a> {
    trajs: &'a [Tensor],
    steps: usize,
}

impl PairSource for SeriesSource<'_> {
    fn dim(&self) -> usize {
        self.trajs[0].cols()
    }

    fn max_steps(&self) -> Option<usize> {
        Some(self.steps)
    }

    fn draw(&self, b: usize, rng: &mut Rng) -> Result<(Tensor, Tensor, Option<Vec<usize>>)> {
        let d = self.dim();
        let picks: Vec<(usize, usize)> = (0..b)
            .map(|_| {
                let j = rng.below(self.trajs.len());
                (j, 1 + rng.below(self.steps))
            })
            .collect();
        let mut x0 = Vec::with_capacity(b * d);
        let mut x1 = Vec::with_capacity(b * d);
        for &(j, n) in &picks {
            x0.extend_from_slice(self.trajs[j].row(n - 1));
            x1.extend_from_slice(self.trajs[j].row(n));
        }
        let n = picks.into_iter().map(|(_, n)| n).collect();
        Ok((Tensor::matrix(b, d, x0)?, Tensor::matrix(b, d, x1)?, Some(n)))
    }
}

fn permute_rows(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&j| x.row(j).to_vec()).collect();
    Tensor::from_rows(&rows)
}

fn first_bad_t(net: &IdffNet, samples: &[BridgeSample], order: usize, n: Option<&[usize]>) -> f64 {
    for (i, s) in samples.iter().enumerate() {
        let ni = n.map(|n| [n[i]]);
        let bad = match idff_loss(std::slice::from_ref(s), net, order, ni.as_ref().map(|a| a.as_slice())) {
            Ok(l) => !l.total.is_finite(),
            Err(_) => true,
        };
        if bad {
            return s.t;
        }
    }
    samples.first().map_or(f64::NAN, |s| s.t)
}

fn train_loop(source: &dyn PairSource, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let mut net = IdffNet::init(cfg.model_config(source.dim(), source.max_steps()), &mut root.split(1))?;
    let mut rng = root.split(2);
    let mut adam = AdamState::new(cfg.lr);
    let names = net.param_names();
    let mut lg = LossGraph::new(&net, cfg.batch_size, true);
    let mut trace = Vec::with_capacity(cfg.iters);
    let b = cfg.batch_size;
    for iter in 0..cfg.iters {
        let (x0, x1, n) = source.draw(b, &mut rng)?;
        let identity = independent_coupling(&x0, &x1)?;
        let (x1, n, pair_cost) = if cfg.use_ot {
            let ot = minibatch_ot(&x0, &x1)?;
            let n = n.map(|n| ot.perm.iter().map(|&j| n[j]).collect::<Vec<_>>());
            (permute_rows(&x1, &ot.perm)?, n, ot.cost)
        } else {
            (x1, n, identity.cost)
        };
        let ts: Vec<f64> = (0..b).map(|_| cfg.path.clamp(sample_time(cfg.time_strategy, &mut rng))).collect();
        let d = source.dim();
        let samples = (0..b)
            .map(|i| bridge_point(x0.row(i), x1.row(i), ts[i], &cfg.path, rng.normals(d)))
            .collect::<Result<Vec<_>>>()?;
        let (xt, ts, li) = loss_inputs(&samples, cfg.order)?;
        let inputs = net.inputs(xt, &ts, n.as_deref())?;
        let loss = match lg.forward(&net, &inputs, &li) {
            Ok(l) => l,
            Err(Error::NonFinite { .. }) => {
                return Err(Error::NonFiniteLoss {
                    iter,
                    t: first_bad_t(&net, &samples, cfg.order, n.as_deref()),
                })
            }
            Err(e) => return Err(e),
        };
        if loss.total > DIVERGENCE_LIMIT {
            return Err(Error::Divergence { iter, loss: loss.total });
        }
        let mut grads = lg.g.backward(lg.total)?;
        let grads: Vec<Tensor> = names
            .iter()
            .map(|k| grads.take(k).expect("every parameter has a gradient"))
            .collect();
        let mut params = net.param_tensors();
        adam_step(&mut params, &grads, &mut adam)?;
        net.set_param_tensors(params)?;
        trace.push(TraceRow {
            iter,
            loss,
            pair_cost,
            identity_cost: identity.cost,
        });
    }
    log::info!("trained {} iterations", cfg.iters);
    Ok(TrainOutput {
        checkpoint: Checkpoint::new(&net, cfg.path, GammaSchedule::default_for_order(cfg.order)),
        trace,
    })
}

/// Train on i.i.d. rows of `data`, pairing each target with `N(0, I)` noise.
pub fn train_static(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    train_loop(&StaticSource { rows: &data.rows }, cfg)
}

/// Train on trajectories of `N + 1` states `x^0 .. x^N`. Step `n` pairs
/// `x^{n-1}` with `x^n` from the same trajectory. With `N == 1` the loop is
/// the static one on the `x^1` states: noise starts, no step index.
pub fn train_timeseries(trajs: &[Tensor], cfg: &TrainConfig) -> Result<TrainOutput> {
    let first = trajs.first().ok_or_else(|| Error::Config("no trajectories".into()))?;
    let len = first.rows();
    if len < 2 {
        return Err(Error::Config(format!("trajectories need at least two states, got {len}")));
    }
    if trajs.iter().any(|t| t.rows() != len || t.cols() != first.cols()) {
        return Err(Error::Config("trajectories must share length and dimension".into()));
    }
    if len == 2 {
        let rows: Vec<Vec<f64>> = trajs.iter().map(|t| t.row(1).to_vec()).collect();
        return train_loop(&StaticSource { rows: &Tensor::from_rows(&rows)? }, cfg);
    }
    train_loop(&SeriesSource { trajs, steps: len - 1 }, cfg)
}

/// `iter,total,denoiser,order1,...`, plus pairing costs when `with_costs`.
pub fn write_trace_csv(trace: &[TraceRow], with_costs: bool, w: &mut impl Write) -> Result<()> {
    let order = trace.first().map_or(0, |r| r.loss.per_order.len());
    let mut s = String::from("iter,total,denoiser");
    for k in 1..=order {
        s.push_str(&format!(",order{k}"));
    }
    if with_costs {
        s.push_str(",pair_cost,identity_cost");
    }
    s.push('\n');
    for r in trace {
        s.push_str(&format!("{},{},{}", r.iter, r.loss.total, r.loss.denoiser));
        for v in &r.loss.per_order {
            s.push_str(&format!(",{v}"));
        }
        if with_costs {
            s.push_str(&format!(",{},{}", r.pair_cost, r.identity_cost));
        }
        s.push('\n');
    }
    w.write_all(s.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::sample_bridge;

    fn small_cfg(order: usize, iters: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 32,
            iters,
            hidden_dim: 16,
            depth: 2,
            order,
            seed: 4,
            ..TrainConfig::default()
        }
    }

    fn gaussian_1d(m: usize, mean: f64, std: f64, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        let data = (0..m).map(|_| mean + std * rng.normal()).collect();
        Dataset::new("gauss", Tensor::matrix(m, 1, data).unwrap()).unwrap()
    }

    #[test]
    fn beta_examples() {
        assert_eq!(beta_weight(0.0).unwrap(), 1.0);
        assert_eq!(beta_weight(0.5).unwrap(), 2.0);
        assert!((beta_weight(0.9).unwrap() - 10.0).abs() < 1e-12);
        assert!(beta_weight(1.0 - 1e-3).is_ok());
        assert!(matches!(beta_weight(0.9995), Err(Error::Singular(_))));
    }

    #[test]
    fn strategy_maps() {
        assert_eq!(TimeStrategy::Linear.map(0.25), 0.25);
        assert_eq!(TimeStrategy::Cosine.map(1.0), 1.0);
        for s in TimeStrategy::ALL {
            assert!(s.map(0.0).abs() < 1e-15 && (s.map(1.0) - 1.0).abs() < 1e-15);
            assert_eq!(s.name().parse::<TimeStrategy>().unwrap(), s);
        }
        assert!("uniform".parse::<TimeStrategy>().is_err());
    }

    #[test]
    fn cosine_tail_probability() {
        let mut rng = Rng::new(3);
        let n = 100_000;
        let hits = (0..n).filter(|_| sample_time(TimeStrategy::Cosine, &mut rng) > 0.5).count();
        let expected = 1.0 - 2.0 / std::f64::consts::PI * 0.5f64.asin();
        assert!((hits as f64 / n as f64 - expected).abs() < 0.01);
    }

    fn zero_model(order: usize, dim: usize) -> IdffNet {
        IdffNet::init(ModelConfig::new(dim, 8, 1, order), &mut Rng::new(0)).unwrap()
    }

    #[test]
    fn zero_heads_on_unit_noise() {
        let path = PathConfig::default();
        let s = bridge_point(&[0.0, 0.0], &[1.0, 1.0], 0.5, &path, vec![1.0, 1.0]).unwrap();
        let l = idff_loss(&[s], &zero_model(1, 2), 1, None).unwrap();
        assert!((l.per_order[0] - 2.0).abs() < 1e-12);
        assert!((l.total - l.denoiser - l.per_order[0]).abs() <= 1e-9 * l.total);
    }

    #[test]
    fn perfect_heads_have_zero_loss() {
        // Output layer set so that x1_hat = x1 and n_hat[1] = eps0 for one
        // sample: zero trunk weights make the hidden layer a constant.
        let path = PathConfig::default();
        let s = bridge_point(&[0.2], &[1.0], 0.4, &path, vec![0.7]).unwrap();
        let mut net = zero_model(1, 1);
        let mut ps = net.param_tensors();
        let names = net.param_names();
        for (name, p) in names.iter().zip(ps.iter_mut()) {
            if name.starts_with("trunk") {
                p.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
            if name == "head.b" {
                let v = (s.x1[0] - s.xt[0]) / (1.0 - s.t);
                p.data_mut().copy_from_slice(&[v, s.eps0[0]]);
            }
        }
        net.set_param_tensors(ps).unwrap();
        let l = idff_loss(&[s], &net, 1, None).unwrap();
        assert!(l.denoiser < 1e-24 && l.per_order[0] < 1e-24);
    }

    #[test]
    fn untrained_order1_term_is_dimension() {
        let path = PathConfig::default();
        let mut rng = Rng::new(2);
        let samples: Vec<_> = (0..10_000)
            .map(|_| {
                let x0 = rng.normals(3);
                sample_bridge(&x0, &[1.0, 2.0, 3.0], 0.3, &path, &mut rng).unwrap()
            })
            .collect();
        let l = idff_loss(&samples, &zero_model(1, 3), 1, None).unwrap();
        assert!((l.per_order[0] - 3.0).abs() < 0.05 * 3.0);
    }

    #[test]
    fn order_mismatch_rejected() {
        let path = PathConfig::default();
        let s = bridge_point(&[0.0], &[1.0], 0.5, &path, vec![0.0]).unwrap();
        assert!(matches!(idff_loss(&[s], &zero_model(2, 1), 1, None), Err(Error::Config(_))));
    }

    #[test]
    fn zero_iterations_return_initialization() {
        let ds = gaussian_1d(64, 3.0, 0.1, 1);
        let cfg = small_cfg(1, 0);
        let out = train_static(&ds, &cfg).unwrap();
        let init = IdffNet::init(cfg.model_config(1, None), &mut Rng::new(cfg.seed).split(1)).unwrap();
        assert_eq!(out.checkpoint.net().unwrap(), init);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn traces_are_deterministic_and_decompose() {
        let ds = gaussian_1d(128, 3.0, 0.1, 1);
        let cfg = small_cfg(2, 30);
        let a = train_static(&ds, &cfg).unwrap();
        let b = train_static(&ds, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        for r in &a.trace {
            let sum = r.loss.denoiser + r.loss.per_order.iter().sum::<f64>();
            assert!((r.loss.total - sum).abs() <= 1e-9 * r.loss.total.abs());
            assert!(r.loss.denoiser >= 0.0 && r.loss.per_order.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn ot_pairing_never_costs_more() {
        let ds = gaussian_1d(128, 3.0, 0.1, 1);
        let mut cfg = small_cfg(1, 20);
        cfg.use_ot = true;
        let out = train_static(&ds, &cfg).unwrap();
        assert!(out.trace.iter().all(|r| r.pair_cost <= r.identity_cost + 1e-9));
    }

    #[test]
    fn single_step_series_matches_static() {
        let mut rng = Rng::new(8);
        let trajs: Vec<Tensor> = (0..50).map(|_| Tensor::matrix(2, 2, rng.normals(4)).unwrap()).collect();
        let rows: Vec<Vec<f64>> = trajs.iter().map(|t| t.row(1).to_vec()).collect();
        let ds = Dataset::new("x1", Tensor::from_rows(&rows).unwrap()).unwrap();
        let cfg = small_cfg(1, 15);
        let a = train_timeseries(&trajs, &cfg).unwrap();
        let b = train_static(&ds, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.checkpoint, b.checkpoint);
    }

    #[test]
    fn step_index_is_uniform() {
        let trajs: Vec<Tensor> = (0..3).map(|_| Tensor::zeros(&[11, 1])).collect();
        let src = SeriesSource { trajs: &trajs, steps: 10 };
        let mut rng = Rng::new(12);
        let mut counts = [0f64; 10];
        let draws = 100_000;
        let (_, _, n) = src.draw(draws, &mut rng).unwrap();
        for n in n.unwrap() {
            counts[n - 1] += 1.0;
        }
        let e = draws as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        // chi-square critical value for 9 degrees of freedom at p = 0.01.
        assert!(chi2 < 21.666, "{chi2}");
    }

    #[test]
    fn series_input_errors() {
        let cfg = small_cfg(1, 1);
        assert!(train_timeseries(&[], &cfg).is_err());
        assert!(train_timeseries(&[Tensor::zeros(&[1, 2])], &cfg).is_err());
        assert!(train_timeseries(&[Tensor::zeros(&[3, 2]), Tensor::zeros(&[4, 2])], &cfg).is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let ds = gaussian_1d(16, 0.0, 1.0, 1);
        let out = train_static(&ds, &small_cfg(2, 2)).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&out.trace, false, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,total,denoiser,order1,order2\n0,"));
        assert_eq!(text.lines().count(), 3);
    }
}
