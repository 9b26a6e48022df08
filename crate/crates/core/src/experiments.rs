//! Scripted toy-scale studies: order comparison, coupling ablation, NFE
//! sweep, time-strategy ablation and the attractor time-series study.
//!
//! Every pipeline is deterministic given its config and seeds. Per seed the
//! training rows come from `Rng::new(seed).split(100)`, the held-out
//! reference from `split(101)`, attractor trajectories from `split(102)`;
//! the training loop uses `seed` itself and samplers use
//! `seed + SAMPLE_SEED_OFFSET`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{attractor_trajectories, gen_toy2d, standardize_trajectories, AttractorKind, Dataset, Toy2d};
use crate::error::{Error, Result};
use crate::metrics::{mmd2_rbf, trajectory_scores};
use crate::model::{Checkpoint, IdffNet};
use crate::plot::{Figure, Layer, PALETTE};
use crate::rng::Rng;
use crate::sampling::{generate, generate_timeseries, predict_next, GammaSchedule, SampleRun};
use crate::tensor::Tensor;
use crate::training::{train_static, train_timeseries, write_trace_csv, TimeStrategy, TraceRow, TrainConfig};

pub const SAMPLE_SEED_OFFSET: u64 = 1 << 32;

/// Stated at the top of every report.
pub const SUBSTITUTION_NOTE: &str = "desk-scale substitution: image FID is replaced by unbiased RBF MMD^2 \
(median-heuristic bandwidth) on 2D toy data, and molecular-dynamics CC by one-step-ahead CC on a \
chaotic attractor";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Shared budget; `order` and `use_ot` and `time_strategy` are
    /// overridden per arm where the study varies them.
    pub train: TrainConfig,
    pub dataset: Toy2d,
    pub train_rows: usize,
    /// Generated and held-out sample counts for MMD.
    pub eval_samples: usize,
    /// NFE for the order comparison.
    pub nfe: usize,
    /// NFE for the ablations and the attractor study.
    pub eval_nfe: usize,
    pub nfe_list: Vec<usize>,
    pub attractor: AttractorKind,
    /// Training trajectories; one more is held out.
    pub attractor_trajectories: usize,
    /// Transitions per trajectory (`N`); trajectories hold `N + 1` states.
    pub attractor_steps: usize,
    /// Integrator steps between stored states.
    pub attractor_stride: usize,
    pub free_run_steps: usize,
    /// Window for the loss-curve figures.
    pub plot_window: usize,
    /// Worker threads for independent arms. Results do not depend on it.
    pub threads: usize,
    /// Compare the held-out set against itself instead of training.
    pub self_test: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            dataset: Toy2d::EightGaussians,
            train_rows: 20000,
            eval_samples: 4096,
            nfe: 2,
            eval_nfe: 10,
            nfe_list: vec![2, 5, 6, 8, 10],
            attractor: AttractorKind::Lorenz,
            attractor_trajectories: 8,
            attractor_steps: 2000,
            attractor_stride: 5,
            free_run_steps: 2000,
            plot_window: 50,
            threads: 1,
            self_test: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.eval_samples < 2 || self.train_rows == 0 {
            return Err(Error::Config("need at least two evaluation samples and one training row".into()));
        }
        if self.nfe == 0 || self.eval_nfe == 0 || self.nfe_list.contains(&0) {
            return Err(Error::Config("nfe must be >= 1".into()));
        }
        if self.attractor_trajectories == 0 || self.attractor_steps < 2 || self.attractor_stride == 0 {
            return Err(Error::Config("attractor study needs trajectories, >= 2 steps and a stride".into()));
        }
        if self.free_run_steps > self.attractor_steps {
            return Err(Error::Config(format!(
                "free run of {} steps exceeds the {} trained step indices",
                self.free_run_steps, self.attractor_steps
            )));
        }
        if self.plot_window == 0 {
            return Err(Error::Config("plot window must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmRow {
    pub arm: String,
    pub seed: u64,
    /// Aligned with the report's metric keys; NaN when the arm failed.
    pub metrics: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub name: String,
    pub note: String,
    /// TOML snapshot of everything needed to rerun.
    pub config: String,
    pub metric_keys: Vec<String>,
    pub rows: Vec<ArmRow>,
    pub seeds: Vec<u64>,
    pub checks: Vec<Check>,
    pub wall_time: f64,
    /// `(file name, SVG)`.
    pub figures: Vec<(String, String)>,
    /// `(file name, CSV)`.
    pub traces: Vec<(String, String)>,
    /// `(arm, seed, checkpoint)`.
    pub checkpoints: Vec<(String, u64, Checkpoint)>,
}

impl ExperimentReport {
    /// Arm ids in first-appearance order.
    pub fn arms(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.arm) {
                out.push(r.arm.clone());
            }
        }
        out
    }

    /// Per-seed values of one metric for one arm, in seed order.
    pub fn values(&self, arm: &str, key: &str) -> Vec<f64> {
        let Some(j) = self.metric_keys.iter().position(|k| k == key) else {
            return Vec::new();
        };
        self.rows.iter().filter(|r| r.arm == arm).map(|r| r.metrics[j]).collect()
    }

    /// Median over seeds; NaN if any seed failed.
    pub fn median(&self, arm: &str, key: &str) -> f64 {
        median(&self.values(arm, key))
    }

    pub fn checkpoint(&self, arm: &str, seed: u64) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.0 == arm && c.1 == seed).map(|c| &c.2)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Metric table: one row per arm and seed, then one median row per arm.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# {}: {}\narm,seed,{},status\n", self.name, self.note, self.metric_keys.join(","));
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
        for r in &self.rows {
            let status = match &r.error {
                None => "ok".to_string(),
                Some(e) => format!("failed: {}", e.replace([',', '\n'], " ")),
            };
            s += &format!("{},{},{},{}\n", r.arm, r.seed, fmt(&r.metrics), status);
        }
        for arm in self.arms() {
            let med: Vec<f64> = self.metric_keys.iter().map(|k| self.median(&arm, k)).collect();
            s += &format!("{arm},median,{},summary\n", fmt(&med));
        }
        s
    }

    pub fn checks_csv(&self) -> String {
        let mut s = String::from("check,passed,detail\n");
        for c in &self.checks {
            s += &format!("{},{},{}\n", c.name, c.passed, c.detail.replace([',', '\n'], " "));
        }
        s
    }

    /// Write the report directory. Wall time goes to its own file so the
    /// CSVs stay byte-identical across reruns.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.csv"), self.to_csv())?;
        fs::write(dir.join("checks.csv"), self.checks_csv())?;
        fs::write(dir.join("config.toml"), &self.config)?;
        fs::write(dir.join("wall_time.txt"), format!("{:.3}\n", self.wall_time))?;
        for (name, svg) in &self.figures {
            fs::write(dir.join(name), svg)?;
        }
        for (name, csv) in &self.traces {
            fs::write(dir.join(name), csv)?;
        }
        for (arm, seed, ckpt) in &self.checkpoints {
            ckpt.save(&dir.join(format!("ckpt_{arm}_seed{seed}.json")))?;
        }
        Ok(())
    }
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() || v.iter().any(|x| x.is_nan()) {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Square root of the mean of per-group sample variances.
pub fn pooled_std(groups: &[Vec<f64>]) -> f64 {
    let vars: Vec<f64> = groups
        .iter()
        .map(|g| {
            let n = g.len() as f64;
            let m = g.iter().sum::<f64>() / n;
            g.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
        })
        .collect();
    (vars.iter().sum::<f64>() / vars.len() as f64).sqrt()
}

/// Map `f` over `items` on up to `threads` workers; output order follows
/// input order.
pub fn par_map<T: Send, R: Send>(items: Vec<T>, threads: usize, f: impl Fn(T) -> R + Sync) -> Vec<R> {
    let n = items.len();
    if threads <= 1 || n <= 1 {
        return items.into_iter().map(f).collect();
    }
    let slots: Vec<Mutex<Option<T>>> = items.into_iter().map(|t| Mutex::new(Some(t))).collect();
    let out: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..threads.min(n) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let item = slots[i].lock().unwrap().take().unwrap();
                let r = f(item);
                *out[i].lock().unwrap() = Some(r);
            });
        }
    });
    out.into_iter().map(|m| m.into_inner().unwrap().unwrap()).collect()
}

fn require_seeds(seeds: &[u64], min: usize) -> Result<()> {
    if seeds.len() < min {
        return Err(Error::Config(format!("need at least {min} seeds, got {}", seeds.len())));
    }
    Ok(())
}

/// Sampler settings for a schedule: order 0 runs the deterministic ODE.
pub fn sample_run(gamma: &GammaSchedule, nfe: usize, seed: u64) -> SampleRun {
    let mut run = SampleRun::new(nfe, seed.wrapping_add(SAMPLE_SEED_OFFSET));
    run.stochastic = gamma.order() > 0;
    run
}

/// Training rows and held-out reference for one seed.
pub fn toy_data(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Tensor)> {
    let root = Rng::new(seed);
    let train = gen_toy2d(cfg.dataset, cfg.train_rows, &mut root.split(100))?;
    let reference = gen_toy2d(cfg.dataset, cfg.eval_samples, &mut root.split(101))?.rows;
    Ok((train, reference))
}

/// MMD^2 of `eval_samples` fresh samples against `reference`.
pub fn sample_mmd(ckpt: &Checkpoint, nfe: usize, seed: u64, reference: &Tensor) -> Result<(f64, Tensor)> {
    let net = ckpt.net()?;
    let run = sample_run(&ckpt.gamma, nfe, seed);
    let samples = generate(&net, &ckpt.gamma, &ckpt.path, &run, reference.rows())?.samples;
    Ok((mmd2_rbf(&samples, reference, None)?.mmd2, samples))
}

fn final_loss(trace: &[TraceRow]) -> f64 {
    let tail = &trace[trace.len().saturating_sub(200)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().map(|r| r.loss.total).sum::<f64>() / tail.len() as f64
}

fn trace_csv(trace: &[TraceRow], with_costs: bool) -> Result<String> {
    let mut buf = Vec::new();
    write_trace_csv(trace, with_costs, &mut buf)?;
    Ok(String::from_utf8(buf).expect("trace CSV is ASCII"))
}

fn windowed_loss(trace: &[TraceRow], window: usize) -> Vec<(f64, f64)> {
    trace
        .chunks(window)
        .enumerate()
        .map(|(i, c)| ((i * window) as f64, c.iter().map(|r| r.loss.total).sum::<f64>() / c.len() as f64))
        .collect()
}

fn loss_figure(title: &str, curves: &[(String, Vec<(f64, f64)>)]) -> String {
    curves
        .iter()
        .enumerate()
        .fold(Figure::new(title, "iteration", "windowed mean loss"), |f, (i, (arm, pts))| {
            f.layer(Layer::lines(arm, PALETTE[i % PALETTE.len()], vec![pts.clone()]))
        })
        .render()
}

fn rows_2d(t: &Tensor) -> Vec<(f64, f64)> {
    (0..t.rows()).map(|r| (t.get(r, 0), t.get(r, 1))).collect()
}

/// Scatter of generated against reference points with a few sampler paths.
fn scatter_figure(title: &str, reference: &Tensor, samples: &Tensor, paths: &[Tensor]) -> String {
    let shown = |t: &Tensor| rows_2d(t).into_iter().take(1000).collect::<Vec<_>>();
    let mut lines = Vec::new();
    if let Some(first) = paths.first() {
        for chain in 0..first.rows() {
            lines.push(paths.iter().map(|s| (s.get(chain, 0), s.get(chain, 1))).collect());
        }
    }
    Figure::new(title, "x1", "x2")
        .layer(Layer::points("held-out", PALETTE[5], shown(reference)))
        .layer(Layer::points("generated", PALETTE[0], shown(samples)))
        .layer(Layer::lines("paths", PALETTE[3], lines))
        .render()
}

#[derive(Serialize)]
struct Snapshot<'a> {
    experiment: &'a str,
    seeds: &'a [u64],
    note: &'a str,
    config: &'a ExperimentConfig,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    arms: BTreeMap<String, String>,
}

fn snapshot(name: &str, seeds: &[u64], cfg: &ExperimentConfig, arms: BTreeMap<String, String>) -> Result<String> {
    toml::to_string(&Snapshot {
        experiment: name,
        seeds,
        note: SUBSTITUTION_NOTE,
        config: cfg,
        arms,
    })
    .map_err(|e| Error::Config(format!("config snapshot: {e}")))
}

/// One toy training arm.
struct ToyJob {
    arm: String,
    seed: u64,
    cfg: TrainConfig,
}

struct ToyOutcome {
    checkpoint: Checkpoint,
    trace: Vec<TraceRow>,
    mmd2: f64,
    samples: Tensor,
}

fn run_toy_job(job: &ToyJob, data: &Dataset, reference: &Tensor, nfe: usize) -> Result<ToyOutcome> {
    let out = train_static(data, &job.cfg)?;
    let (mmd2, samples) = sample_mmd(&out.checkpoint, nfe, job.seed, reference)?;
    Ok(ToyOutcome {
        checkpoint: out.checkpoint,
        trace: out.trace,
        mmd2,
        samples,
    })
}

/// Numerical failures mark the arm; anything else aborts the study.
fn arm_result<T>(r: Result<T>) -> Result<std::result::Result<T, String>> {
    match r {
        Ok(v) => Ok(Ok(v)),
        Err(e) if e.is_numerical() => Ok(Err(e.to_string())),
        Err(e) => Err(e),
    }
}

fn budgets_check(jobs: &[&TrainConfig]) -> Check {
    let same = jobs
        .windows(2)
        .all(|w| w[0].iters == w[1].iters && w[0].batch_size == w[1].batch_size && w[0].lr == w[1].lr);
    let b = jobs.first();
    Check {
        name: "identical_budgets".into(),
        passed: same,
        detail: b.map_or(String::new(), |c| format!("iters {} batch {} lr {}", c.iters, c.batch_size, c.lr)),
    }
}

/// Train a set of toy arms per seed and collect MMD rows.
struct ToyStudy {
    rows: Vec<ArmRow>,
    outcomes: Vec<(String, u64, ToyOutcome)>,
    budgets: Check,
}

fn toy_study(cfg: &ExperimentConfig, seeds: &[u64], arms: &[(String, TrainConfig)], nfe: usize) -> Result<ToyStudy> {
    let data: Vec<(Dataset, Tensor)> = seeds.iter().map(|&s| toy_data(cfg, s)).collect::<Result<_>>()?;
    let mut jobs = Vec::new();
    for (si, &seed) in seeds.iter().enumerate() {
        for (arm, tc) in arms {
            let cfg = TrainConfig { seed, ..tc.clone() };
            jobs.push((si, ToyJob { arm: arm.clone(), seed, cfg }));
        }
    }
    let budgets = budgets_check(&jobs.iter().map(|j| &j.1.cfg).collect::<Vec<_>>());
    let results = par_map(jobs.iter().collect(), cfg.threads, |(si, job)| {
        log::info!("arm {} seed {}", job.arm, job.seed);
        run_toy_job(job, &data[*si].0, &data[*si].1, nfe)
    });
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for ((_, job), r) in jobs.iter().zip(results) {
        match arm_result(r)? {
            Ok(o) => {
                rows.push(ArmRow {
                    arm: job.arm.clone(),
                    seed: job.seed,
                    metrics: vec![o.mmd2, final_loss(&o.trace)],
                    error: None,
                });
                outcomes.push((job.arm.clone(), job.seed, o));
            }
            Err(e) => rows.push(ArmRow {
                arm: job.arm.clone(),
                seed: job.seed,
                metrics: vec![f64::NAN; 2],
                error: Some(e),
            }),
        }
    }
    Ok(ToyStudy { rows, outcomes, budgets })
}

fn toy_keys() -> Vec<String> {
    vec!["mmd2".into(), "final_loss".into()]
}

fn self_test_report(name: &str, cfg: &ExperimentConfig, seeds: &[u64], start: Instant) -> Result<ExperimentReport> {
    let mut rows = Vec::new();
    for &seed in seeds {
        let (_, reference) = toy_data(cfg, seed)?;
        let m = mmd2_rbf(&reference, &reference, None)?.mmd2;
        rows.push(ArmRow {
            arm: "self_test".into(),
            seed,
            metrics: vec![m, f64::NAN],
            error: None,
        });
    }
    Ok(ExperimentReport {
        name: name.into(),
        note: SUBSTITUTION_NOTE.into(),
        config: snapshot(name, seeds, cfg, BTreeMap::new())?,
        metric_keys: toy_keys(),
        rows,
        seeds: seeds.to_vec(),
        checks: Vec::new(),
        wall_time: start.elapsed().as_secs_f64(),
        figures: Vec::new(),
        traces: Vec::new(),
        checkpoints: Vec::new(),
    })
}

/// Arms K = 0 (deterministic baseline), 1 and 2 on the toy dataset, MMD^2 at
/// `nfe`.
pub fn run_order_comparison(cfg: &ExperimentConfig, seeds: &[u64], nfe: usize) -> Result<ExperimentReport> {
    const NAME: &str = "order_comparison";
    let start = Instant::now();
    require_seeds(seeds, 3)?;
    cfg.validate()?;
    if cfg.self_test {
        return self_test_report(NAME, cfg, seeds, start);
    }
    let arms: Vec<(String, TrainConfig)> = (0..=2)
        .map(|k| {
            (
                format!("K{k}"),
                TrainConfig {
                    order: k,
                    ..cfg.train.clone()
                },
            )
        })
        .collect();
    let study = toy_study(cfg, seeds, &arms, nfe)?;
    let mut arm_notes = BTreeMap::new();
    arm_notes.insert("K0".into(), "order 0, drift-only ODE sampler".into());
    arm_notes.insert("K1".into(), "order 1, default gamma schedule, SDE sampler".into());
    arm_notes.insert("K2".into(), "order 2, default gamma schedule, SDE sampler".into());
    let mut cfg_snapshot = cfg.clone();
    cfg_snapshot.nfe = nfe;
    let mut report = ExperimentReport {
        name: NAME.into(),
        note: SUBSTITUTION_NOTE.into(),
        config: snapshot(NAME, seeds, &cfg_snapshot, arm_notes)?,
        metric_keys: toy_keys(),
        rows: study.rows,
        seeds: seeds.to_vec(),
        checks: vec![study.budgets],
        wall_time: 0.0,
        figures: Vec::new(),
        traces: Vec::new(),
        checkpoints: Vec::new(),
    };
    let (m0, m1, m2) = (report.median("K0", "mmd2"), report.median("K1", "mmd2"), report.median("K2", "mmd2"));
    report.checks.push(Check {
        name: "order_ranking".into(),
        passed: m2 <= m1 && m1 <= m0,
        detail: format!("median mmd2 K2 {m2:.6} K1 {m1:.6} K0 {m0:.6}"),
    });
    report.checks.push(Check {
        name: "k2_below_0.05".into(),
        passed: m2 < 0.05,
        detail: format!("median mmd2 K2 {m2:.6}"),
    });
    finish_toy(&mut report, cfg, seeds, study.outcomes, nfe, false)?;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Figures, traces and checkpoints shared by the toy studies.
fn finish_toy(
    report: &mut ExperimentReport,
    cfg: &ExperimentConfig,
    seeds: &[u64],
    outcomes: Vec<(String, u64, ToyOutcome)>,
    nfe: usize,
    with_costs: bool,
) -> Result<()> {
    let first = seeds[0];
    let (_, reference) = toy_data(cfg, first)?;
    let mut curves = Vec::new();
    for (arm, seed, o) in outcomes {
        report
            .traces
            .push((format!("trace_{arm}_seed{seed}.csv"), trace_csv(&o.trace, with_costs)?));
        if seed == first {
            let net = o.checkpoint.net()?;
            let mut run = sample_run(&o.checkpoint.gamma, nfe, seed);
            run.store_trajectory = true;
            let paths = generate(&net, &o.checkpoint.gamma, &o.checkpoint.path, &run, 24)?
                .trajectory
                .unwrap_or_default();
            let title = format!("{arm} at NFE {nfe}, seed {seed}");
            report
                .figures
                .push((format!("scatter_{arm}.svg"), scatter_figure(&title, &reference, &o.samples, &paths)));
            curves.push((arm.clone(), windowed_loss(&o.trace, cfg.plot_window)));
        }
        report.checkpoints.push((arm, seed, o.checkpoint));
    }
    if !curves.is_empty() {
        report
            .figures
            .push(("loss.svg".into(), loss_figure(&format!("{} loss, seed {first}", report.name), &curves)));
    }
    Ok(())
}

/// Identical models trained with and without minibatch OT pairing.
pub fn run_coupling_ablation(cfg: &ExperimentConfig, seeds: &[u64], iters: usize) -> Result<ExperimentReport> {
    const NAME: &str = "coupling_ablation";
    let start = Instant::now();
    require_seeds(seeds, 3)?;
    let mut cfg = cfg.clone();
    cfg.train.iters = iters;
    cfg.validate()?;
    if cfg.self_test {
        return self_test_report(NAME, &cfg, seeds, start);
    }
    let arms: Vec<(String, TrainConfig)> = [("independent", false), ("ot", true)]
        .into_iter()
        .map(|(a, ot)| {
            (
                a.to_string(),
                TrainConfig {
                    use_ot: ot,
                    ..cfg.train.clone()
                },
            )
        })
        .collect();
    let study = toy_study(&cfg, seeds, &arms, cfg.eval_nfe)?;
    let mut keys = toy_keys();
    keys.push("max_cost_excess".into());
    let mut rows = study.rows;
    for row in rows.iter_mut() {
        let excess = study
            .outcomes
            .iter()
            .find(|o| o.0 == row.arm && o.1 == row.seed)
            .map_or(f64::NAN, |o| {
                o.2.trace
                    .iter()
                    .map(|r| r.pair_cost - r.identity_cost)
                    .fold(f64::NEG_INFINITY, f64::max)
            });
        row.metrics.push(excess);
    }
    let mut report = ExperimentReport {
        name: NAME.into(),
        note: SUBSTITUTION_NOTE.into(),
        config: snapshot(NAME, seeds, &cfg, BTreeMap::new())?,
        metric_keys: keys,
        rows,
        seeds: seeds.to_vec(),
        checks: vec![study.budgets],
        wall_time: 0.0,
        figures: Vec::new(),
        traces: Vec::new(),
        checkpoints: Vec::new(),
    };
    let (ind, ot) = (report.values("independent", "mmd2"), report.values("ot", "mmd2"));
    let diff = (median(&ot) - median(&ind)).abs();
    let spread = pooled_std(&[ind, ot]);
    report.checks.push(Check {
        name: "comparable".into(),
        passed: diff <= spread,
        detail: format!("|median difference| {diff:.6} vs pooled std {spread:.6}"),
    });
    let excess = report.values("ot", "max_cost_excess");
    report.checks.push(Check {
        name: "ot_cost_le_identity".into(),
        passed: excess.iter().all(|&e| e <= 1e-9),
        detail: format!("largest OT minus identity cost {:e}", excess.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
    });
    finish_toy(&mut report, &cfg, seeds, study.outcomes, cfg.eval_nfe, true)?;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

/// MMD^2 of trained models across sampler step counts. Each `(seed, model)`
/// is evaluated against that seed's held-out set with that seed's sampler
/// stream, so repeated NFE entries give identical rows.
pub fn run_nfe_sweep(cfg: &ExperimentConfig, models: &[(u64, Checkpoint)], nfe_list: &[usize]) -> Result<ExperimentReport> {
    const NAME: &str = "nfe_sweep";
    let start = Instant::now();
    cfg.validate()?;
    if models.is_empty() || nfe_list.is_empty() || nfe_list.contains(&0) {
        return Err(Error::Config("need at least one model and NFE values >= 1".into()));
    }
    let mut jobs = Vec::new();
    for (seed, ckpt) in models {
        for &nfe in nfe_list {
            jobs.push((*seed, ckpt, nfe));
        }
    }
    let refs: BTreeMap<u64, Tensor> = models
        .iter()
        .map(|(s, _)| Ok((*s, toy_data(cfg, *s)?.1)))
        .collect::<Result<_>>()?;
    let results = par_map(jobs.clone(), cfg.threads, |(seed, ckpt, nfe)| sample_mmd(ckpt, nfe, seed, &refs[&seed]));
    let mut rows = Vec::new();
    for ((seed, _, nfe), r) in jobs.iter().zip(results) {
        let (metrics, error) = match arm_result(r)? {
            Ok((m, _)) => (vec![m], None),
            Err(e) => (vec![f64::NAN], Some(e)),
        };
        rows.push(ArmRow {
            arm: format!("nfe{nfe}"),
            seed: *seed,
            metrics,
            error,
        });
    }
    let mut c = cfg.clone();
    c.nfe_list = nfe_list.to_vec();
    let seeds: Vec<u64> = models.iter().map(|m| m.0).collect();
    let mut report = ExperimentReport {
        name: NAME.into(),
        note: SUBSTITUTION_NOTE.into(),
        config: snapshot(NAME, &seeds, &c, BTreeMap::new())?,
        metric_keys: vec!["mmd2".into()],
        rows,
        seeds,
        checks: Vec::new(),
        wall_time: 0.0,
        figures: Vec::new(),
        traces: Vec::new(),
        checkpoints: Vec::new(),
    };
    let (lo, hi) = (nfe_list.iter().min().unwrap(), nfe_list.iter().max().unwrap());
    let (a, b) = (report.median(&format!("nfe{lo}"), "mmd2"), report.median(&format!("nfe{hi}"), "mmd2"));
    report.checks.push(Check {
        name: "more_steps_no_worse".into(),
        passed: b <= a,
        detail: format!("median mmd2 at NFE {hi} {b:.6} vs NFE {lo} {a:.6}"),
    });
    let pts: Vec<(f64, f64)> = nfe_list
        .iter()
        .map(|&n| (n as f64, report.median(&format!("nfe{n}"), "mmd2")))
        .collect();
    report.figures.push((
        "nfe.svg".into(),
        Figure::new("median MMD^2 against NFE", "NFE", "MMD^2")
            .layer(Layer::lines("median", PALETTE[0], vec![pts.clone()]))
            .layer(Layer::points("", PALETTE[0], pts))
            .render(),
    ));
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

/// The four training-time maps under one budget, MMD^2 at `eval_nfe`.
pub fn run_time_strategy_ablation(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<ExperimentReport> {
    const NAME: &str = "time_strategy_ablation";
    let start = Instant::now();
    require_seeds(seeds, 3)?;
    cfg.validate()?;
    if cfg.self_test {
        return self_test_report(NAME, cfg, seeds, start);
    }
    let arms: Vec<(String, TrainConfig)> = TimeStrategy::ALL
        .iter()
        .map(|&s| {
            (
                s.name().to_string(),
                TrainConfig {
                    time_strategy: s,
                    ..cfg.train.clone()
                },
            )
        })
        .collect();
    let study = toy_study(cfg, seeds, &arms, cfg.eval_nfe)?;
    let formulas = TimeStrategy::ALL
        .iter()
        .map(|s| (s.name().to_string(), s.formula().to_string()))
        .collect();
    let mut report = ExperimentReport {
        name: NAME.into(),
        note: SUBSTITUTION_NOTE.into(),
        config: snapshot(NAME, seeds, cfg, formulas)?,
        metric_keys: toy_keys(),
        rows: study.rows,
        seeds: seeds.to_vec(),
        checks: vec![study.budgets],
        wall_time: 0.0,
        figures: Vec::new(),
        traces: Vec::new(),
        checkpoints: Vec::new(),
    };
    let worst = TimeStrategy::ALL
        .iter()
        .map(|s| report.median(s.name(), "mmd2"))
        .fold(f64::NEG_INFINITY, f64::max);
    report.checks.push(Check {
        name: "all_below_0.05".into(),
        passed: worst < 0.05,
        detail: format!("worst median mmd2 {worst:.6}"),
    });
    finish_toy(&mut report, cfg, seeds, study.outcomes, cfg.eval_nfe, false)?;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Standardized training trajectories and the held-out one, per seed.
pub fn attractor_data(cfg: &ExperimentConfig, kind: AttractorKind, seed: u64) -> Result<(Vec<Tensor>, Tensor)> {
    let mut rng = Rng::new(seed).split(102);
    let mut trajs = attractor_trajectories(
        kind,
        cfg.attractor_trajectories + 1,
        cfg.attractor_steps + 1,
        cfg.attractor_stride,
        &mut rng,
    )?;
    let held = trajs.pop().expect("at least one trajectory");
    let (train, st) = standardize_trajectories(&trajs)?;
    Ok((train, st.apply(&held)?))
}

/// Per-coordinate `(center, half width)` of the training states.
pub fn bounding_box(trajs: &[Tensor]) -> Vec<(f64, f64)> {
    let d = trajs[0].cols();
    (0..d)
        .map(|j| {
            let (lo, hi) = trajs
                .iter()
                .flat_map(|t| (0..t.rows()).map(move |r| t.get(r, j)))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            (0.5 * (lo + hi), 0.5 * (hi - lo))
        })
        .collect()
}

/// Largest `|x - center| / half_width` over all states and coordinates;
/// at most 1 inside the box.
pub fn box_ratio(x: &Tensor, bbox: &[(f64, f64)]) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..x.rows() {
        for (j, &(c, h)) in bbox.iter().enumerate() {
            let v = (x.get(r, j) - c).abs() / h;
            worst = if v.is_nan() { f64::INFINITY } else { worst.max(v) };
        }
    }
    worst
}

struct AttractorOutcome {
    metrics: Vec<f64>,
    trace: Vec<TraceRow>,
    pred: Tensor,
    free: Tensor,
}

fn attractor_arm(
    cfg: &ExperimentConfig,
    tc: &TrainConfig,
    train: &[Tensor],
    held: &Tensor,
    bbox: &[(f64, f64)],
) -> Result<AttractorOutcome> {
    let out = train_timeseries(train, tc)?;
    let net: IdffNet = out.checkpoint.net()?;
    let gamma = &out.checkpoint.gamma;
    let n = held.rows() - 1;
    let prev = Tensor::from_rows(&(0..n).map(|i| held.row(i).to_vec()).collect::<Vec<_>>())?;
    let truth = Tensor::from_rows(&(1..=n).map(|i| held.row(i).to_vec()).collect::<Vec<_>>())?;
    let idx: Vec<usize> = (1..=n).collect();
    let run = sample_run(gamma, cfg.eval_nfe, tc.seed);
    let pred = predict_next(&net, gamma, &tc.path, &run, &prev, &idx)?;
    let s = trajectory_scores(&pred, &truth)?;
    let free = generate_timeseries(&net, gamma, &tc.path, &run, cfg.free_run_steps, Some(held.row(0)))?;
    let ratio = box_ratio(&free, bbox);
    Ok(AttractorOutcome {
        metrics: vec![s.cc, s.mae, s.rmse, ratio, final_loss(&out.trace)],
        trace: out.trace,
        pred,
        free,
    })
}

/// Time-series models (K = 1, 2) on standardized attractor trajectories:
/// one-step-ahead scores on a held-out trajectory and free-running
/// boundedness. MAE and RMSE are in standardized units.
pub fn run_attractor_study(cfg: &ExperimentConfig, kind: AttractorKind, seeds: &[u64]) -> Result<ExperimentReport> {
    const NAME: &str = "attractor_study";
    let start = Instant::now();
    require_seeds(seeds, 2)?;
    let mut cfg = cfg.clone();
    cfg.attractor = kind;
    cfg.validate()?;
    let data: Vec<(Vec<Tensor>, Tensor)> = seeds.iter().map(|&s| attractor_data(&cfg, kind, s)).collect::<Result<_>>()?;
    let mut jobs = Vec::new();
    for (si, &seed) in seeds.iter().enumerate() {
        for k in [1usize, 2] {
            let tc = TrainConfig {
                order: k,
                seed,
                ..cfg.train.clone()
            };
            jobs.push((si, format!("K{k}"), tc));
        }
    }
    let budgets = budgets_check(&jobs.iter().map(|j| &j.2).collect::<Vec<_>>());
    let results = par_map(jobs.iter().collect(), cfg.threads, |(si, arm, tc)| {
        log::info!("attractor arm {arm} seed {}", tc.seed);
        let (train, held) = &data[*si];
        attractor_arm(&cfg, tc, train, held, &bounding_box(train))
    });
    let keys: Vec<String> = ["cc", "mae", "rmse", "free_run_box_ratio", "final_loss"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let mut figures = Vec::new();
    for ((si, arm, tc), r) in jobs.iter().zip(results) {
        match arm_result(r)? {
            Ok(o) => {
                rows.push(ArmRow {
                    arm: arm.clone(),
                    seed: tc.seed,
                    metrics: o.metrics,
                    error: None,
                });
                traces.push((format!("trace_{arm}_seed{}.csv", tc.seed), trace_csv(&o.trace, false)?));
                if *si == 0 {
                    figures.extend(attractor_figures(arm, &data[0].1, &o.pred, &o.free));
                }
            }
            Err(e) => rows.push(ArmRow {
                arm: arm.clone(),
                seed: tc.seed,
                metrics: vec![f64::NAN; keys.len()],
                error: Some(e),
            }),
        }
    }
    let mut report = ExperimentReport {
        name: NAME.into(),
        note: SUBSTITUTION_NOTE.into(),
        config: snapshot(NAME, seeds, &cfg, BTreeMap::new())?,
        metric_keys: keys,
        rows,
        seeds: seeds.to_vec(),
        checks: vec![budgets],
        wall_time: 0.0,
        figures,
        traces,
        checkpoints: Vec::new(),
    };
    let cc = report.median("K1", "cc");
    report.checks.push(Check {
        name: "k1_one_step_cc_90".into(),
        passed: cc >= 90.0,
        detail: format!("median one-step cc {cc:.3}%"),
    });
    let ratios = report.values("K1", "free_run_box_ratio");
    let worst = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    report.checks.push(Check {
        name: "k1_free_run_bounded".into(),
        passed: worst <= 1.5,
        detail: format!("largest free-run box ratio {worst:.4}"),
    });
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

fn attractor_figures(arm: &str, held: &Tensor, pred: &Tensor, free: &Tensor) -> Vec<(String, String)> {
    let proj = |t: &Tensor, skip: usize| (skip..t.rows()).map(|r| (t.get(r, 0), t.get(r, 2))).collect::<Vec<_>>();
    let phase = Figure::new(&format!("{arm} free run vs held-out, x-z plane"), "x", "z")
        .layer(Layer::lines("held-out", PALETTE[5], vec![proj(held, 0)]))
        .layer(Layer::lines("free run", PALETTE[1], vec![proj(free, 0)]))
        .render();
    let shown = 300.min(pred.rows());
    let series = |t: &Tensor, off: usize| (0..shown).map(|r| ((r + 1) as f64, t.get(r + off, 0))).collect::<Vec<_>>();
    let one_step = Figure::new(&format!("{arm} one-step-ahead, first coordinate"), "step", "x")
        .layer(Layer::lines("truth", PALETTE[5], vec![series(held, 1)]))
        .layer(Layer::lines("predicted", PALETTE[0], vec![series(pred, 0)]))
        .render();
    vec![
        (format!("phase_{arm}.svg"), phase),
        (format!("one_step_{arm}.svg"), one_step),
    ]
}
