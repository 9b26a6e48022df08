//! The network: an MLP trunk over `(x_t, embed(t), embed(n))` with one fused
//! output layer split into a denoiser head and `K` noise heads.
//!
//! Heads predict standardized quantities. The denoiser is parameterized as
//! `x1_hat = x_t + (1 - t) * h_0`, so a zero output layer gives the identity
//! and `h_0` is directly the velocity. The order-`k` head `n_hat[k]`
//! predicts `sigma_t^k` times the negated order-`k` log-density derivative:
//! the bridge noise `eps0` for `k = 1`, the all-ones diagonal for `k = 2`
//! and zero above.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::PathConfig;
use crate::rng::Rng;
use crate::sampling::GammaSchedule;
use crate::tensor::{Bindings, Graph, NodeId, Tensor};

/// Highest derivative order the heads support.
pub const MAX_ORDER: usize = 3;

/// Version tag written into every checkpoint.
pub const CHECKPOINT_FORMAT: &str = "idff-checkpoint/1";

const MAX_FREQ: f64 = 64.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub data_dim: usize,
    pub hidden_dim: usize,
    /// Number of hidden layers.
    pub depth: usize,
    /// Number of noise heads `K`.
    pub order: usize,
    /// Sinusoidal features for `t`; must be even.
    pub time_embed_dim: usize,
    /// Largest step index `N` in time-series mode.
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Width of the learned step-index embedding.
    #[serde(default = "default_step_embed_dim")]
    pub step_embed_dim: usize,
}

fn default_step_embed_dim() -> usize {
    8
}

impl ModelConfig {
    pub fn new(data_dim: usize, hidden_dim: usize, depth: usize, order: usize) -> Self {
        Self {
            data_dim,
            hidden_dim,
            depth,
            order,
            time_embed_dim: 16,
            max_steps: None,
            step_embed_dim: default_step_embed_dim(),
        }
    }

    pub fn with_steps(mut self, n: usize) -> Self {
        self.max_steps = Some(n);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.hidden_dim == 0 || self.depth == 0 || self.step_embed_dim == 0 {
            return Err(Error::Config("model dimensions must be >= 1".into()));
        }
        if self.order > MAX_ORDER {
            return Err(Error::Config(format!("order {} exceeds {MAX_ORDER}", self.order)));
        }
        if self.time_embed_dim == 0 || !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "time_embed_dim {} must be even and >= 2",
                self.time_embed_dim
            )));
        }
        if self.max_steps == Some(0) {
            return Err(Error::Config("max_steps must be >= 1".into()));
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.data_dim + self.time_embed_dim + self.max_steps.map_or(0, |_| self.step_embed_dim)
    }

    fn output_dim(&self) -> usize {
        self.data_dim * (self.order + 1)
    }
}

/// `[sin(w_j t), cos(w_j t)]` with `w_j` log-spaced over `[1, 64]`.
pub fn time_embedding(t: f64, dim: usize) -> Vec<f64> {
    let nf = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for j in 0..nf {
        let w = if nf == 1 {
            1.0
        } else {
            MAX_FREQ.powf(j as f64 / (nf - 1) as f64)
        };
        out.push((w * t).sin());
        out.push((w * t).cos());
    }
    out
}

/// Batched head outputs; every tensor is `B x data_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs {
    pub x1_hat: Tensor,
    pub n_hat: Vec<Tensor>,
}

/// Graph nodes of the network outputs.
#[derive(Clone, Debug)]
pub struct NetNodes {
    pub x1_hat: NodeId,
    pub n_hat: Vec<NodeId>,
}

/// Per-batch tensors the graph reads besides the parameters.
#[derive(Clone, Debug)]
pub struct NetInputs {
    xt: Tensor,
    temb: Tensor,
    skip: Tensor,
    onehot: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdffNet {
    cfg: ModelConfig,
    params: BTreeMap<String, Tensor>,
}

fn layer_dims(cfg: &ModelConfig) -> Vec<(usize, usize)> {
    let mut dims = vec![(cfg.input_dim(), cfg.hidden_dim)];
    for _ in 1..cfg.depth {
        dims.push((cfg.hidden_dim, cfg.hidden_dim));
    }
    dims
}

fn expected_shapes(cfg: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
    let mut shapes = BTreeMap::new();
    for (i, (fi, fo)) in layer_dims(cfg).into_iter().enumerate() {
        shapes.insert(format!("trunk.{i}.w"), vec![fi, fo]);
        shapes.insert(format!("trunk.{i}.b"), vec![fo]);
    }
    if let Some(n) = cfg.max_steps {
        shapes.insert("step_embed".into(), vec![n, cfg.step_embed_dim]);
    }
    shapes.insert("head.w".into(), vec![cfg.hidden_dim, cfg.output_dim()]);
    shapes.insert("head.b".into(), vec![cfg.output_dim()]);
    shapes
}

impl IdffNet {
    /// Random trunk, zero output layer. The output layer draws nothing from
    /// `rng`, so networks differing only in `order` share their trunk.
    pub fn init(cfg: ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut params = BTreeMap::new();
        for (i, (fi, fo)) in layer_dims(&cfg).into_iter().enumerate() {
            let std = (1.0 / fi as f64).sqrt();
            let w = rng.normals(fi * fo).into_iter().map(|v| v * std).collect();
            params.insert(format!("trunk.{i}.w"), Tensor::matrix(fi, fo, w)?);
            params.insert(format!("trunk.{i}.b"), Tensor::zeros(&[fo]));
        }
        if let Some(n) = cfg.max_steps {
            let e = rng.normals(n * cfg.step_embed_dim);
            params.insert("step_embed".into(), Tensor::matrix(n, cfg.step_embed_dim, e)?);
        }
        params.insert("head.w".into(), Tensor::zeros(&[cfg.hidden_dim, cfg.output_dim()]));
        params.insert("head.b".into(), Tensor::zeros(&[cfg.output_dim()]));
        Ok(Self { cfg, params })
    }

    /// Rebuild from stored parameters, checking names and shapes.
    pub fn from_params(cfg: ModelConfig, params: BTreeMap<String, Tensor>) -> Result<Self> {
        cfg.validate()?;
        let expected = expected_shapes(&cfg);
        if expected.len() != params.len() || expected.keys().any(|k| !params.contains_key(k)) {
            let have: Vec<_> = params.keys().collect();
            return Err(Error::Config(format!(
                "parameter names {have:?} do not match the model configuration"
            )));
        }
        for (name, shape) in &expected {
            if params[name].shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    params[name].shape()
                )));
            }
        }
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn order(&self) -> usize {
        self.cfg.order
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    /// Parameters in `param_names` order, for the optimizer.
    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.params.values().cloned().collect()
    }

    /// Replace parameters from tensors in `param_names` order.
    pub fn set_param_tensors(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Misaligned(format!(
                "{} tensors for {} parameters",
                values.len(),
                self.params.len()
            )));
        }
        for ((name, p), v) in self.params.iter_mut().zip(values) {
            if p.shape() != v.shape() {
                return Err(Error::Misaligned(format!("shape change for {name}")));
            }
            *p = v;
        }
        Ok(())
    }

    /// Add the network to `g`. Parameters become inputs named after
    /// themselves and are differentiable when `train` is set.
    pub fn build_graph(&self, g: &mut Graph, train: bool) -> NetNodes {
        let cfg = &self.cfg;
        let p: BTreeMap<&str, NodeId> = self.params.keys().map(|k| (k.as_str(), g.input(k, train))).collect();
        let xt = g.input("xt", false);
        let temb = g.input("temb", false);
        let skip = g.input("skip", false);
        let mut parts = vec![xt, temb];
        if cfg.max_steps.is_some() {
            let onehot = g.input("onehot", false);
            parts.push(g.matmul(onehot, p["step_embed"]));
        }
        let mut h = g.concat(&parts);
        for i in 0..cfg.depth {
            let a = g.affine(h, p[format!("trunk.{i}.w").as_str()], p[format!("trunk.{i}.b").as_str()]);
            h = g.silu(a);
        }
        let out = g.affine(h, p["head.w"], p["head.b"]);
        let d = cfg.data_dim;
        let v = g.slice(out, 0, d);
        let step = g.mul(v, skip);
        let x1_hat = g.add(xt, step);
        let n_hat = (1..=cfg.order).map(|k| g.slice(out, k * d, d)).collect();
        NetNodes { x1_hat, n_hat }
    }

    /// Assemble the non-parameter inputs for a batch.
    pub fn inputs(&self, xt: Tensor, t: &[f64], n: Option<&[usize]>) -> Result<NetInputs> {
        let cfg = &self.cfg;
        let (b, d) = xt.dims2();
        if d != cfg.data_dim || xt.shape().len() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "expected a B x {} batch, got {:?}",
                cfg.data_dim,
                xt.shape()
            )));
        }
        if t.len() != b {
            return Err(Error::DimensionMismatch(format!("{} times for {b} rows", t.len())));
        }
        if let Some(&bad) = t.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Domain(format!("t = {bad} outside [0, 1]")));
        }
        let onehot = match (cfg.max_steps, n) {
            (None, None) => None,
            (Some(max), Some(n)) => {
                if n.len() != b {
                    return Err(Error::DimensionMismatch(format!("{} step indices for {b} rows", n.len())));
                }
                let mut oh = vec![0.0; b * max];
                for (r, &k) in n.iter().enumerate() {
                    if k == 0 || k > max {
                        return Err(Error::Domain(format!("step index {k} outside 1..={max}")));
                    }
                    oh[r * max + k - 1] = 1.0;
                }
                Some(Tensor::matrix(b, max, oh)?)
            }
            (None, Some(_)) => return Err(Error::Config("step index given to a static model".into())),
            (Some(_), None) => return Err(Error::Config("time-series model needs a step index".into())),
        };
        let e = cfg.time_embed_dim;
        let temb: Vec<f64> = t.iter().flat_map(|&t| time_embedding(t, e)).collect();
        Ok(NetInputs {
            xt,
            temb: Tensor::matrix(b, e, temb)?,
            skip: Tensor::matrix(b, 1, t.iter().map(|t| 1.0 - t).collect())?,
            onehot,
        })
    }

    /// Bindings for a graph from [`IdffNet::build_graph`].
    pub fn bind<'a>(&'a self, inputs: &'a NetInputs, b: &mut Bindings<'a>) {
        for (k, v) in &self.params {
            b.insert(k.as_str(), v);
        }
        b.insert("xt", &inputs.xt);
        b.insert("temb", &inputs.temb);
        b.insert("skip", &inputs.skip);
        if let Some(oh) = &inputs.onehot {
            b.insert("onehot", oh);
        }
    }

    /// Heads for a batch of states `B x d` at per-row times `t`.
    pub fn forward_batch(&self, xt: &Tensor, t: &[f64], n: Option<&[usize]>) -> Result<HeadOutputs> {
        let inputs = self.inputs(xt.clone(), t, n)?;
        let mut g = Graph::new();
        let nodes = self.build_graph(&mut g, false);
        let mut b = Bindings::new();
        self.bind(&inputs, &mut b);
        let mut outs = vec![nodes.x1_hat];
        outs.extend(&nodes.n_hat);
        g.forward(&b, &outs)?;
        let get = |id: NodeId| g.value(id).cloned().expect("evaluated output");
        Ok(HeadOutputs {
            x1_hat: get(nodes.x1_hat),
            n_hat: nodes.n_hat.iter().map(|&id| get(id)).collect(),
        })
    }

    /// Heads for a single state.
    pub fn forward(&self, xt: &[f64], t: f64, n: Option<usize>) -> Result<HeadOutputs> {
        let x = Tensor::matrix(1, xt.len(), xt.to_vec())?;
        let n = n.map(|n| [n]);
        self.forward_batch(&x, &[t], n.as_ref().map(|n| n.as_slice()))
    }
}

/// Convert noise heads to derivative estimates: order `k` is
/// `-n_hat[k] / sigma_t^k`, elementwise (the order-2 estimate is the
/// Hessian diagonal).
pub fn score_from_heads(out: &HeadOutputs, sigma_t: f64) -> Result<Vec<Tensor>> {
    if !(sigma_t > 0.0) {
        return Err(Error::ZeroBandwidth);
    }
    Ok(out
        .n_hat
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let s = sigma_t.powi(i as i32 + 1);
            n.map(|v| -v / s)
        })
        .collect())
}

/// Serialized network plus the path and sampling defaults it was trained
/// with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub model: ModelConfig,
    pub path: PathConfig,
    pub gamma: GammaSchedule,
    pub params: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(net: &IdffNet, path: PathConfig, gamma: GammaSchedule) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            model: net.cfg.clone(),
            path,
            gamma,
            params: net.params.clone(),
        }
    }

    pub fn net(&self) -> Result<IdffNet> {
        IdffNet::from_params(self.model.clone(), self.params.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        match v.get("format").and_then(|f| f.as_str()) {
            Some(CHECKPOINT_FORMAT) => {}
            Some(other) => {
                return Err(Error::Config(format!(
                    "checkpoint format {other:?} is not supported (expected {CHECKPOINT_FORMAT:?})"
                )))
            }
            None => return Err(Error::Parse("checkpoint has no format field".into())),
        }
        let ck: Checkpoint = serde_json::from_value(v).map_err(|e| Error::Parse(e.to_string()))?;
        ck.path.validate()?;
        ck.gamma.validate()?;
        ck.net()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(order: usize, steps: Option<usize>) -> IdffNet {
        let mut cfg = ModelConfig::new(2, 16, 2, order);
        cfg.max_steps = steps;
        IdffNet::init(cfg, &mut Rng::new(3)).unwrap()
    }

    fn perturbed(mut n: IdffNet, seed: u64) -> IdffNet {
        let mut rng = Rng::new(seed);
        for p in n.params.values_mut() {
            for v in p.data_mut() {
                *v += 0.3 * rng.normal();
            }
        }
        n
    }

    #[test]
    fn zero_init_is_identity_denoiser() {
        let n = net(2, None);
        let out = n.forward(&[0.3, -1.2], 0.4, None).unwrap();
        assert_eq!(out.x1_hat.data(), &[0.3, -1.2]);
        assert_eq!(out.n_hat.len(), 2);
        assert!(out.n_hat.iter().all(|h| h.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn forward_is_deterministic() {
        let n = perturbed(net(1, None), 1);
        let a = n.forward(&[0.1, 0.2], 0.7, None).unwrap();
        let b = n.forward(&[0.1, 0.2], 0.7, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_rows_match_single_calls() {
        let n = perturbed(net(2, None), 5);
        let x = Tensor::from_rows(&[vec![0.1, 0.2], vec![-1.0, 0.5]]).unwrap();
        let batch = n.forward_batch(&x, &[0.2, 0.9], None).unwrap();
        let second = n.forward(&[-1.0, 0.5], 0.9, None).unwrap();
        for (a, b) in batch.x1_hat.row(1).iter().zip(second.x1_hat.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn step_index_changes_output() {
        let n = perturbed(net(1, Some(5)), 2);
        let a = n.forward(&[0.5, 0.5], 0.3, Some(1)).unwrap();
        let b = n.forward(&[0.5, 0.5], 0.3, Some(4)).unwrap();
        assert_ne!(a.x1_hat, b.x1_hat);
    }

    #[test]
    fn step_index_errors() {
        let ts = net(1, Some(3));
        assert!(matches!(ts.forward(&[0.0, 0.0], 0.5, None), Err(Error::Config(_))));
        assert!(matches!(ts.forward(&[0.0, 0.0], 0.5, Some(4)), Err(Error::Domain(_))));
        assert!(matches!(ts.forward(&[0.0, 0.0], 0.5, Some(0)), Err(Error::Domain(_))));
        let st = net(1, None);
        assert!(matches!(st.forward(&[0.0, 0.0], 0.5, Some(1)), Err(Error::Config(_))));
        assert!(matches!(st.forward(&[0.0], 0.5, None), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn time_embedding_separates_endpoints() {
        let (a, b) = (time_embedding(0.0, 16), time_embedding(1.0, 16));
        let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(d > 0.1);
        // Lipschitz with constant bounded by the largest frequency times sqrt(dim / 2).
        let (s, u) = (time_embedding(0.5, 16), time_embedding(0.5 + 1e-6, 16));
        let d: f64 = s.iter().zip(&u).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(d <= MAX_FREQ * 8f64.sqrt() * 1e-6);
    }

    #[test]
    fn score_conversion() {
        let eps = Tensor::matrix(1, 2, vec![0.4, -1.0]).unwrap();
        let out = HeadOutputs {
            x1_hat: Tensor::zeros(&[1, 2]),
            n_hat: vec![eps.clone(), Tensor::full(&[1, 2], 1.0)],
        };
        let est = score_from_heads(&out, 0.5).unwrap();
        assert_eq!(est[0].data(), &[-0.8, 2.0]);
        assert_eq!(est[1].data(), &[-4.0, -4.0]);
        let est = score_from_heads(&out, 1.0).unwrap();
        assert_eq!(est[1].data(), &[-1.0, -1.0]);
        assert!(matches!(score_from_heads(&out, 0.0), Err(Error::ZeroBandwidth)));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let n = perturbed(net(2, Some(3)), 9);
        let x = Tensor::from_rows(&[vec![0.3, -0.2], vec![1.1, 0.4], vec![-0.5, 0.9]]).unwrap();
        let t = [0.1, 0.5, 0.85];
        let steps = [1, 3, 2];
        let inputs = n.inputs(x, &t, Some(&steps)).unwrap();
        let mut g = Graph::new();
        let nodes = n.build_graph(&mut g, true);
        let sq: Vec<NodeId> = std::iter::once(nodes.x1_hat)
            .chain(nodes.n_hat.iter().copied())
            .map(|id| g.square(id))
            .collect();
        let cat = g.concat(&sq);
        let loss = g.sum(cat);
        let eval = |net: &IdffNet, g: &mut Graph| {
            let mut b = Bindings::new();
            net.bind(&inputs, &mut b);
            g.eval(&b, loss).unwrap().item()
        };
        eval(&n, &mut g);
        let grads = g.backward(loss).unwrap();
        let mut rng = Rng::new(4);
        for name in n.param_names() {
            let len = n.params[&name].len();
            for _ in 0..3 {
                let i = rng.below(len);
                let h = 1e-5;
                let mut plus = n.clone();
                plus.params.get_mut(&name).unwrap().data_mut()[i] += h;
                let mut minus = n.clone();
                minus.params.get_mut(&name).unwrap().data_mut()[i] -= h;
                let fd = (eval(&plus, &mut g) - eval(&minus, &mut g)) / (2.0 * h);
                let an = grads.get(&name).unwrap().data()[i];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(rel < 1e-4, "{name}[{i}]: fd {fd} vs analytic {an}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let n = perturbed(net(2, Some(4)), 11);
        let ck = Checkpoint::new(&n, PathConfig::default(), GammaSchedule::default_for_order(2));
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let bits = |c: &Checkpoint| -> Vec<u64> {
            c.params.values().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&back), bits(&ck));
        assert_eq!(back.net().unwrap(), n);
    }

    #[test]
    fn checkpoint_rejects_other_versions() {
        let n = net(0, None);
        let ck = Checkpoint::new(&n, PathConfig::default(), GammaSchedule::default_for_order(0));
        let json = ck.to_json().unwrap().replace(CHECKPOINT_FORMAT, "idff-checkpoint/0");
        assert!(matches!(Checkpoint::from_json(&json), Err(Error::Config(_))));
    }
}
