//! `idff` command-line driver.
//!
//! Precedence: built-in defaults, then `--config <file.toml>`, then flags.
//! Exit codes: 0 success, 1 I/O or malformed input, 2 usage or invalid
//! configuration, 3 numerical abort.

mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use idff::data::{
    attractor_trajectories, gen_toy2d, read_dataset, read_trajectories, standardize, standardize_trajectories,
    write_dataset, write_trajectories, AttractorKind, Dataset, Toy2d,
};
use idff::experiments::{self, ExperimentReport};
use idff::metrics::{mmd2_rbf, trajectory_scores};
use idff::model::Checkpoint;
use idff::plot::{Figure, Layer, PALETTE};
use idff::rng::Rng;
use idff::sampling::{
    generate, generate_timeseries, log_likelihood_batch, DivMode, GammaMode, GammaSchedule, LikelihoodConfig,
    ModelDrift, SampleRun, TimeGrid,
};
use idff::tensor::Tensor;
use idff::training::{train_static, train_timeseries, write_trace_csv, TimeStrategy};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "idff", version, about = "Flow matching with momentum-augmented sampling")]
struct Cli {
    /// TOML run configuration; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for independent experiment arms.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a toy dataset or attractor trajectories.
    Datagen(DatagenArgs),
    /// Train a model and write its checkpoint and loss trace.
    Train(TrainArgs),
    /// Draw samples from a checkpoint.
    Sample(SampleArgs),
    /// Compare sample sets or trajectories.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Log-density of points under a checkpoint.
    Likelihood(LikelihoodArgs),
    /// Run a scripted study and write a report directory.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum DataName {
    #[value(name = "eight_gaussians")]
    EightGaussians,
    #[value(name = "two_moons")]
    TwoMoons,
    #[value(name = "checkerboard")]
    Checkerboard,
    #[value(name = "lorenz")]
    Lorenz,
    #[value(name = "rossler")]
    Rossler,
}

#[derive(Args, Serialize)]
struct DatagenArgs {
    #[arg(long, value_enum)]
    name: DataName,
    /// Rows for toy data.
    #[arg(long, default_value_t = 4096)]
    rows: usize,
    /// States per attractor trajectory.
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    trajectories: usize,
    /// Integrator steps between stored attractor states.
    #[arg(long, default_value_t = 5)]
    stride: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Zero-mean, unit-variance columns.
    #[arg(long)]
    standardize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Linear,
    Logarithmic,
    Beta,
    Cosine,
}

impl From<StrategyArg> for TimeStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Linear => TimeStrategy::Linear,
            StrategyArg::Logarithmic => TimeStrategy::Logarithmic,
            StrategyArg::Beta => TimeStrategy::Beta,
            StrategyArg::Cosine => TimeStrategy::Cosine,
        }
    }
}

#[derive(Args)]
struct TrainFlags {
    /// Number of noise heads.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    use_ot: bool,
    #[arg(long, value_enum)]
    time_strategy: Option<StrategyArg>,
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
}

impl TrainFlags {
    fn apply(&self, cfg: &mut RunConfig, seed: Option<u64>) {
        let t = &mut cfg.train;
        if let Some(k) = self.k {
            t.order = k;
        }
        if let Some(v) = self.iters {
            t.iters = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.lr {
            t.lr = v;
        }
        if self.use_ot {
            t.use_ot = true;
        }
        if let Some(v) = self.time_strategy {
            t.time_strategy = v.into();
        }
        if let Some(v) = self.sigma0 {
            t.path.sigma0 = v;
        }
        if let Some(v) = self.hidden_dim {
            t.hidden_dim = v;
        }
        if let Some(v) = self.depth {
            t.depth = v;
        }
        if let Some(s) = seed {
            t.seed = s;
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Loss trace CSV; defaults to `<out>.trace.csv`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Treat the data file as trajectories with a step column.
    #[arg(long)]
    timeseries: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum GammaModeArg {
    Normalized,
    Unit,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    nfe: Option<usize>,
    /// Number of samples.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    gamma1: Option<f64>,
    #[arg(long)]
    gamma2: Option<f64>,
    #[arg(long)]
    gamma3: Option<f64>,
    #[arg(long, value_enum)]
    gamma_mode: Option<GammaModeArg>,
    /// Drift-only ODE instead of the SDE.
    #[arg(long)]
    ode: bool,
    /// Skip the noise on the last step.
    #[arg(long)]
    final_deterministic: bool,
    /// Scatter plot of the samples.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Overlay sampler paths on the plot (implies `--svg <out>.svg`).
    #[arg(long)]
    traj: bool,
    /// Sequence length for time-series checkpoints.
    #[arg(long)]
    steps: Option<usize>,
    /// Initial state for time-series checkpoints, comma separated.
    #[arg(long)]
    x_init: Option<String>,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum EvalCommand {
    /// Unbiased RBF MMD^2 between two sample files.
    Mmd {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Kernel bandwidth; median heuristic when absent.
        #[arg(long)]
        bandwidth: Option<f64>,
        /// Write `metric,value,detail` rows here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// MAE, RMSE and correlation between aligned trajectories.
    Traj {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DivArg {
    #[value(name = "exact_fd")]
    ExactFd,
    #[value(name = "hutchinson")]
    Hutchinson,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridArg {
    Uniform,
    Geometric,
}

#[derive(Args)]
struct LikelihoodArgs {
    #[arg(long)]
    model: PathBuf,
    /// Evaluation point, comma separated; repeatable.
    #[arg(long, allow_hyphen_values = true)]
    x: Vec<String>,
    /// Dataset file of evaluation points.
    #[arg(long)]
    points: Option<PathBuf>,
    #[arg(long, value_enum)]
    div: Option<DivArg>,
    #[arg(long)]
    nfe: Option<usize>,
    #[arg(long)]
    probes: Option<usize>,
    #[arg(long, value_enum)]
    grid: Option<GridArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Step index for time-series checkpoints.
    #[arg(long)]
    step: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    OrderComparison,
    CouplingAblation,
    NfeSweep,
    TimeStrategy,
    Attractor,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttractorArg {
    Lorenz,
    Rossler,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(value_enum)]
    study: Study,
    /// Number of seeds, used as 0..n unless `--seed-list` is given.
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Report directory; defaults to `reports/<study>`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    nfe: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    nfe_list: Option<Vec<usize>>,
    /// Checkpoints for the NFE sweep, one per seed in order.
    #[arg(long)]
    model: Vec<PathBuf>,
    #[arg(long, value_enum)]
    attractor: Option<AttractorArg>,
    #[arg(long)]
    self_test: bool,
    #[command(flatten)]
    flags: TrainFlags,
}

/// Exit status for an error chain.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<idff::Error>() {
            return match err {
                err if err.is_numerical() => 3,
                idff::Error::Io(_) | idff::Error::Parse(_) => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 1;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IDFF_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Datagen(a) => {
            print_args("datagen", &a)?;
            datagen(a)
        }
        Command::Train(a) => {
            a.flags.apply(&mut cfg, a.seed);
            print_snapshot(&cfg);
            train(a, &cfg)
        }
        Command::Sample(a) => {
            apply_sample_flags(&a, &mut cfg);
            print_snapshot(&cfg);
            sample(a, &cfg)
        }
        Command::Eval(c) => {
            print_args("eval", &c)?;
            eval(c)
        }
        Command::Likelihood(a) => {
            let l = &mut cfg.likelihood;
            if let Some(d) = a.div {
                l.div = match d {
                    DivArg::ExactFd => DivMode::ExactFd,
                    DivArg::Hutchinson => DivMode::Hutchinson,
                };
            }
            if let Some(g) = a.grid {
                l.grid = match g {
                    GridArg::Uniform => TimeGrid::Uniform,
                    GridArg::Geometric => TimeGrid::Geometric,
                };
            }
            l.nfe = a.nfe.unwrap_or(l.nfe);
            l.probes = a.probes.unwrap_or(l.probes);
            l.seed = a.seed.unwrap_or(l.seed);
            print_snapshot(&cfg);
            likelihood(a, &cfg)
        }
        Command::Experiment(a) => {
            a.flags.apply(&mut cfg, None);
            let e = &mut cfg.experiment;
            if let Some(n) = a.nfe {
                e.nfe = n;
                e.eval_nfe = n;
            }
            if let Some(l) = &a.nfe_list {
                e.nfe_list = l.clone();
            }
            if let Some(k) = a.attractor {
                e.attractor = match k {
                    AttractorArg::Lorenz => AttractorKind::Lorenz,
                    AttractorArg::Rossler => AttractorKind::Rossler,
                };
            }
            e.self_test |= a.self_test;
            print_snapshot(&cfg);
            experiment(a, &cfg, cli.threads)
        }
    }
}

/// Snapshot for commands whose flags are their whole configuration.
fn print_args(section: &str, args: &impl Serialize) -> Result<()> {
    let table = std::collections::BTreeMap::from([(section, args)]);
    println!("# resolved config\n{}# end config", toml::to_string(&table)?);
    Ok(())
}

fn print_snapshot(cfg: &RunConfig) {
    println!("# resolved config\n{}# end config", cfg.snapshot());
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn parse_point(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| anyhow!(idff::Error::Config(format!("bad number {v:?} in {s:?}"))))
        })
        .collect()
}

fn datagen(a: DatagenArgs) -> Result<()> {
    let mut rng = Rng::new(a.seed);
    let toy = |k: Toy2d, rng: &mut Rng| -> Result<()> {
        let mut ds = gen_toy2d(k, a.rows, rng)?;
        if a.standardize {
            ds = standardize(&ds)?;
        }
        let mut w = create(&a.out)?;
        write_dataset(&ds, &mut w)?;
        w.flush()?;
        println!("wrote {} rows to {}", ds.len(), a.out.display());
        Ok(())
    };
    let kind = match a.name {
        DataName::EightGaussians => return toy(Toy2d::EightGaussians, &mut rng),
        DataName::TwoMoons => return toy(Toy2d::TwoMoons, &mut rng),
        DataName::Checkerboard => return toy(Toy2d::Checkerboard, &mut rng),
        DataName::Lorenz => AttractorKind::Lorenz,
        DataName::Rossler => AttractorKind::Rossler,
    };
    let mut trajs = attractor_trajectories(kind, a.trajectories, a.steps, a.stride, &mut rng)?;
    if a.standardize {
        trajs = standardize_trajectories(&trajs)?.0;
    }
    let mut w = create(&a.out)?;
    write_trajectories(kind.name(), &trajs, &mut w)?;
    w.flush()?;
    let rows: usize = trajs.iter().map(|t| t.rows()).sum();
    println!("wrote {} trajectories, {rows} rows to {}", trajs.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs, cfg: &RunConfig) -> Result<()> {
    let tc = &cfg.train;
    let out = if a.timeseries {
        let (_, trajs) = read_trajectories(open(&a.data)?).with_context(|| format!("reading {}", a.data.display()))?;
        train_timeseries(&trajs, tc)?
    } else {
        train_static(&load_dataset(&a.data)?, tc)?
    };
    out.checkpoint.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let trace_path = a.trace.unwrap_or_else(|| PathBuf::from(format!("{}.trace.csv", a.out.display())));
    let mut w = create(&trace_path)?;
    write_trace_csv(&out.trace, tc.use_ot, &mut w)?;
    w.flush()?;
    match out.trace.last() {
        Some(r) => {
            let orders: Vec<String> = r.loss.per_order.iter().map(|v| format!("{v:.6}")).collect();
            println!(
                "final loss: total {:.6} denoiser {:.6} orders [{}]",
                r.loss.total,
                r.loss.denoiser,
                orders.join(", ")
            );
        }
        None => println!("no iterations run; checkpoint holds the initialization"),
    }
    println!("wrote {} and {}", a.out.display(), trace_path.display());
    Ok(())
}

fn apply_sample_flags(a: &SampleArgs, cfg: &mut RunConfig) {
    let s = &mut cfg.sample;
    s.nfe = a.nfe.unwrap_or(s.nfe);
    s.n = a.n.unwrap_or(s.n);
    s.seed = a.seed.unwrap_or(s.seed);
    s.steps = a.steps.unwrap_or(s.steps);
    s.ode |= a.ode;
    s.final_step_deterministic |= a.final_deterministic;
    if let Some(m) = a.gamma_mode {
        s.gamma_mode = match m {
            GammaModeArg::Normalized => GammaMode::Normalized,
            GammaModeArg::Unit => GammaMode::Unit,
        };
    }
}

/// Checkpoint schedule, replaced by the config list, then per-order flags.
fn resolve_gamma(a: &SampleArgs, cfg: &RunConfig, ckpt: &Checkpoint) -> Result<GammaSchedule> {
    let mut c = if cfg.sample.gamma.is_empty() {
        ckpt.gamma.c.clone()
    } else {
        cfg.sample.gamma.clone()
    };
    for (k, v) in [(1, a.gamma1), (2, a.gamma2), (3, a.gamma3)] {
        if let Some(v) = v {
            if c.len() < k {
                c.resize(k, 0.0);
            }
            c[k - 1] = v;
        }
    }
    let order = ckpt.model.order;
    if c.len() > order {
        if c[order..].iter().any(|&v| v != 0.0) {
            return Err(idff::Error::Config(format!("gamma of order {} set but the model has {order} heads", c.len())).into());
        }
        c.truncate(order);
    }
    Ok(GammaSchedule::new(c, cfg.sample.gamma_mode)?)
}

fn sample(a: SampleArgs, cfg: &RunConfig) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    let net = ckpt.net()?;
    let gamma = resolve_gamma(&a, cfg, &ckpt)?;
    let s = &cfg.sample;
    let mut run = SampleRun::new(s.nfe, s.seed);
    run.final_step_deterministic = s.final_step_deterministic;
    run.stochastic = !s.ode;
    let svg = a.svg.clone().or_else(|| a.traj.then(|| PathBuf::from(format!("{}.svg", a.out.display()))));
    let (samples, paths) = if ckpt.model.max_steps.is_some() {
        let x_init = a.x_init.as_deref().map(parse_point).transpose()?;
        let seq = generate_timeseries(&net, &gamma, &ckpt.path, &run, s.steps, x_init.as_deref())?;
        (seq, Vec::new())
    } else {
        if a.x_init.is_some() {
            return Err(idff::Error::Config("--x-init needs a time-series checkpoint".into()).into());
        }
        let samples = generate(&net, &gamma, &ckpt.path, &run, s.n)?.samples;
        let paths = if a.traj {
            let mut r = run.clone();
            r.store_trajectory = true;
            generate(&net, &gamma, &ckpt.path, &r, s.n.min(32))?.trajectory.unwrap_or_default()
        } else {
            Vec::new()
        };
        (samples, paths)
    };
    let ds = Dataset::new("samples", samples)?;
    let mut w = create(&a.out)?;
    write_dataset(&ds, &mut w)?;
    w.flush()?;
    println!("wrote {} samples to {}", ds.len(), a.out.display());
    if let Some(p) = svg {
        let fig = sample_figure(&ds.rows, &paths, s.nfe);
        std::fs::write(&p, fig).with_context(|| format!("writing {}", p.display()))?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn sample_figure(samples: &Tensor, paths: &[Tensor], nfe: usize) -> String {
    let d = samples.cols();
    let y = if d > 1 { 1 } else { 0 };
    let pts = (0..samples.rows()).map(|r| (samples.get(r, 0), samples.get(r, y))).collect();
    let mut lines = Vec::new();
    if let Some(first) = paths.first() {
        for c in 0..first.rows() {
            lines.push(paths.iter().map(|s| (s.get(c, 0), s.get(c, y))).collect());
        }
    }
    Figure::new(&format!("samples at NFE {nfe}"), "x1", if d > 1 { "x2" } else { "x1" })
        .layer(Layer::points("samples", PALETTE[0], pts))
        .layer(Layer::lines("paths", PALETTE[3], lines))
        .render()
}

fn write_metrics(path: Option<&Path>, rows: &[(&str, f64, String)]) -> Result<()> {
    for (m, v, d) in rows {
        println!("{m} = {v} {d}");
    }
    if let Some(p) = path {
        let mut w = create(p)?;
        writeln!(w, "metric,value,detail")?;
        for (m, v, d) in rows {
            writeln!(w, "{m},{v},{d}")?;
        }
        w.flush()?;
    }
    Ok(())
}

fn eval(c: EvalCommand) -> Result<()> {
    match c {
        EvalCommand::Mmd { a, b, bandwidth, out } => {
            let (x, y) = (load_dataset(&a)?, load_dataset(&b)?);
            let r = mmd2_rbf(&x.rows, &y.rows, bandwidth)?;
            let detail = format!("n={} m={}", r.n, r.m);
            write_metrics(out.as_deref(), &[("mmd2", r.mmd2, detail), ("bandwidth", r.bandwidth, String::new())])
        }
        EvalCommand::Traj { pred, truth, out } => {
            let (p, t) = (load_dataset(&pred)?, load_dataset(&truth)?);
            let s = trajectory_scores(&p.rows, &t.rows)?;
            write_metrics(
                out.as_deref(),
                &[
                    ("mae", s.mae, String::new()),
                    ("rmse", s.rmse, String::new()),
                    ("cc", s.cc, "percent".into()),
                ],
            )
        }
    }
}

fn likelihood(a: LikelihoodArgs, cfg: &RunConfig) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    let net = ckpt.net()?;
    let mut rows: Vec<Vec<f64>> = a.x.iter().map(|s| parse_point(s)).collect::<Result<_>>()?;
    if let Some(p) = &a.points {
        let ds = load_dataset(p)?;
        rows.extend((0..ds.len()).map(|r| ds.rows.row(r).to_vec()));
    }
    if rows.is_empty() {
        return Err(idff::Error::Config("give evaluation points with --x or --points".into()).into());
    }
    let x = Tensor::from_rows(&rows).map_err(|_| idff::Error::DimensionMismatch("points differ in length".into()))?;
    let step = match (ckpt.model.max_steps, a.step) {
        (Some(_), None) => return Err(idff::Error::Config("time-series checkpoint needs --step".into()).into()),
        (None, Some(_)) => return Err(idff::Error::Config("--step needs a time-series checkpoint".into()).into()),
        (_, s) => s,
    };
    let field = ModelDrift {
        model: &net,
        gamma: &ckpt.gamma,
        path: &ckpt.path,
        step,
    };
    let l = &cfg.likelihood;
    let mut lc = LikelihoodConfig::new(l.nfe, l.div, &ckpt.path);
    lc.probes = l.probes;
    lc.grid = l.grid;
    let res = log_likelihood_batch(&field, &x, &lc, &mut Rng::new(l.seed))?;
    let d = x.cols();
    let mut csv = (0..d).map(|j| format!("x{}", j + 1)).collect::<Vec<_>>().join(",") + ",log_p,std_err\n";
    for (r, lk) in res.iter().enumerate() {
        let se = lk.std_err.map_or(String::new(), |s| format!("{s}"));
        let coords = x.row(r).iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",");
        println!("log p({coords}) = {}{}", lk.log_p, lk.std_err.map_or(String::new(), |s| format!(" +/- {s}")));
        csv += &format!("{coords},{},{se}\n", lk.log_p);
    }
    if let Some(p) = a.out {
        let mut w = create(&p)?;
        w.write_all(csv.as_bytes())?;
        w.flush()?;
    }
    Ok(())
}

fn experiment(a: ExperimentArgs, cfg: &RunConfig, threads: usize) -> Result<()> {
    let seeds: Vec<u64> = a.seed_list.clone().unwrap_or_else(|| (0..a.seeds as u64).collect());
    let ec = cfg.experiment_config(threads);
    let (name, report): (&str, ExperimentReport) = match a.study {
        Study::OrderComparison => ("order_comparison", experiments::run_order_comparison(&ec, &seeds, ec.nfe)?),
        Study::CouplingAblation => (
            "coupling_ablation",
            experiments::run_coupling_ablation(&ec, &seeds, ec.train.iters)?,
        ),
        Study::TimeStrategy => ("time_strategy_ablation", experiments::run_time_strategy_ablation(&ec, &seeds)?),
        Study::Attractor => ("attractor_study", experiments::run_attractor_study(&ec, ec.attractor, &seeds)?),
        Study::NfeSweep => {
            if a.model.is_empty() {
                return Err(idff::Error::Config("nfe-sweep needs --model checkpoints".into()).into());
            }
            if a.model.len() > seeds.len() {
                return Err(idff::Error::Config(format!("{} checkpoints but {} seeds", a.model.len(), seeds.len())).into());
            }
            let models = a
                .model
                .iter()
                .zip(&seeds)
                .map(|(p, &s)| Ok((s, load_checkpoint(p)?)))
                .collect::<Result<Vec<_>>>()?;
            ("nfe_sweep", experiments::run_nfe_sweep(&ec, &models, &ec.nfe_list)?)
        }
    };
    let dir = a.out.unwrap_or_else(|| Path::new("reports").join(name));
    report.write_dir(&dir).with_context(|| format!("writing {}", dir.display()))?;
    print!("{}", report.to_csv());
    for c in &report.checks {
        println!("check {}: {} ({})", c.name, if c.passed { "pass" } else { "fail" }, c.detail);
    }
    println!("wrote report to {} in {:.1}s", dir.display(), report.wall_time);
    Ok(())
}
