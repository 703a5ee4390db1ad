//! The five subcommands as library functions.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use slac_core::actor_critic::{IterationRecord, TrainState, Trainer};
use slac_core::evaluate::{
    critic_error, double_integrator_reference, double_integrator_sign_agreement, residual_stats, uniform_disk_points,
    ErrorStats, SignAgreement,
};
use slac_core::grid::io::{load_grid, save_grid};
use slac_core::grid::{grid_value_iteration, GridPolicy, GridValueFunction};
use slac_core::nn::io::{load_network, save_network};
use slac_core::nn::Network;
use slac_core::ocp::{control_lattice, ControlProblem, ProblemSpec};
use slac_core::policy::{NeuralPolicy, Policy};
use slac_core::raster::Raster;
use slac_core::rollout::{
    ensemble, switching_curve_points, switching_surface_raster, write_trajectory_csv, EnsembleSummary, Lattice2,
};
use slac_core::sl::{bellman_residual, kruzkov_inverse, Critic, NeuralCritic, ResidualStats};
use slac_core::{write_atomic, ExecMode};

use crate::config::{InitialStates, RunConfig};
use crate::error::{CliError, CliResult, Context};

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const FAILURE_FILE: &str = "failed_state.json";
pub const ACTOR_FILE: &str = "actor.json";
pub const CRITIC_FILE: &str = "critic.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const TRAIN_SUMMARY_FILE: &str = "train_summary.json";
pub const GRID_FILE: &str = "value.grid";
pub const GRID_REPORT_FILE: &str = "grid_report.json";
pub const EVALUATION_FILE: &str = "evaluation.json";

/// Stream of the rollout initial-state generator; training uses 1000+.
const ROLLOUT_STREAM: u64 = 1;
const EVALUATE_STREAM: u64 = 2;

/// Output directory when neither `--out` nor `out_dir` is given:
/// `$SLAC_OUT_DIR/<leaf>`, or `runs/<leaf>`.
pub fn default_out_dir(cfg: &RunConfig, leaf: &str) -> PathBuf {
    if let Some(d) = &cfg.out_dir {
        return d.clone();
    }
    let root = std::env::var_os("SLAC_OUT_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(leaf)
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).context(format!("writing {}", path.display()))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).context(format!("creating {}", dir.display()))
}

/// Coordinate names and units per problem, for export headers.
pub fn state_axes(spec: &ProblemSpec) -> Vec<(&'static str, &'static str)> {
    match spec {
        ProblemSpec::DoubleIntegrator(_) => vec![("position", "m"), ("velocity", "m/s")],
        ProblemSpec::Dubins(_) => vec![("x", "m"), ("y", "m"), ("heading", "rad")],
        ProblemSpec::Trace(_) => vec![
            ("q0", "1"),
            ("q1", "1"),
            ("q2", "1"),
            ("q3", "1"),
            ("w1", "rad/s"),
            ("w2", "rad/s"),
            ("w3", "rad/s"),
        ],
    }
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub mode: ExecMode,
    /// Continue from `checkpoint.json` in the output directory.
    pub resume: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub problem: String,
    pub iterations: usize,
    pub early_stopped: bool,
    pub last: Option<IterationRecord>,
}

#[derive(Serialize)]
struct TimingLine {
    k: usize,
    elapsed_s: f64,
}

fn append_lines(path: &Path) -> CliResult<File> {
    OpenOptions::new().create(true).append(true).open(path).context(format!("opening {}", path.display()))
}

fn metrics_text(history: &[IterationRecord]) -> CliResult<String> {
    let mut s = String::new();
    for r in history {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

fn save_networks(out: &Path, state: &TrainState) -> CliResult<()> {
    save_network(&out.join(ACTOR_FILE), &state.actor_avg).context("writing actor")?;
    save_network(&out.join(CRITIC_FILE), &state.critic_avg).context("writing critic")
}

/// Trains into `out`. A fresh run overwrites the logs of any earlier run
/// there; with `resume` the snapshot in `out` is used instead of `cfg`.
pub fn train(cfg: &RunConfig, out: &Path, opts: &TrainOptions) -> CliResult<TrainSummary> {
    ensure_dir(out)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    let (cfg, state) = if opts.resume {
        let mut snap = RunConfig::load(&out.join(CONFIG_FILE))?;
        // only the stopping rules may change on resume
        let mut same = snap.train.clone();
        same.iterations = cfg.train.iterations;
        same.checkpoint_every = cfg.train.checkpoint_every;
        same.early_stop = cfg.train.early_stop;
        if snap.problem != cfg.problem || snap.actor != cfg.actor || snap.critic != cfg.critic || same != cfg.train {
            return Err(CliError::config("--resume with a config that differs from the run's snapshot"));
        }
        snap.train = cfg.train.clone();
        let state = TrainState::load(&ckpt).context(format!("loading {}", ckpt.display()))?;
        (snap, state)
    } else {
        let p = cfg.build_problem()?;
        (cfg.clone(), TrainState::new(p.as_ref(), &cfg.train, &cfg.actor, &cfg.critic)?)
    };
    let p = cfg.build_problem()?;
    write_atomic(&out.join(CONFIG_FILE), cfg.to_toml()?.as_bytes())?;
    // metrics are rebuilt from the checkpoint so the log matches the state
    write_atomic(&out.join(METRICS_FILE), metrics_text(&state.history)?.as_bytes())?;
    if !opts.resume {
        write_atomic(&out.join(TIMING_FILE), b"")?;
        state.save(&ckpt)?;
    }
    let mut metrics = append_lines(&out.join(METRICS_FILE))?;
    let mut timing = append_lines(&out.join(TIMING_FILE))?;

    let every = cfg.train.checkpoint_every;
    let mut trainer = Trainer::new(p.as_ref(), cfg.train.clone(), state, opts.mode)?;
    let start = Instant::now();
    let result = trainer.run(|state, rec| {
        writeln!(metrics, "{}", serde_json::to_string(rec)?)?;
        let line = TimingLine {
            k: rec.k,
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        writeln!(timing, "{}", serde_json::to_string(&line)?)?;
        if rec.k % 50 == 0 {
            log::info!(
                "k {} actor {:.4e} critic {:.4e} residual {:.3e}",
                rec.k,
                rec.actor_loss,
                rec.critic_loss,
                rec.residual.mean_abs
            );
        }
        if every > 0 && state.iteration % every == 0 {
            state.save(&ckpt)?;
            save_networks(out, state).map_err(|e| slac_core::Error::Io(std::io::Error::other(e.to_string())))?;
        }
        Ok(())
    });
    if let Err(e) = result {
        let diag = out.join(FAILURE_FILE);
        if let Err(save_err) = trainer.state.save(&diag) {
            log::error!("could not write {}: {save_err}", diag.display());
        }
        return Err(CliError::Runtime(anyhow::Error::new(e).context(format!(
            "training failed at iteration {}; last checkpoint kept, state at failure in {}",
            trainer.state.iteration,
            diag.display()
        ))));
    }
    let state = trainer.state;
    state.save(&ckpt)?;
    save_networks(out, &state)?;
    let summary = TrainSummary {
        problem: p.name().to_string(),
        iterations: state.iteration,
        early_stopped: state.iteration < cfg.train.iterations,
        last: state.history.last().cloned(),
    };
    write_json(&out.join(TRAIN_SUMMARY_FILE), &summary)?;
    Ok(summary)
}

// ----------------------------------------------------------- grid-solve

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridReport {
    pub problem: String,
    pub nodes: usize,
    pub controls: usize,
    pub sweeps: usize,
    pub final_change: f64,
    pub converged: bool,
    pub max_increase: f64,
    pub pinned_nodes: usize,
    pub runtime_s: f64,
}

/// Solves the grid reference into `out/value.grid` and writes a report.
/// The config is snapshotted too when `out` has none, so the directory can
/// be passed to `export`.
pub fn grid_solve(cfg: &RunConfig, out: &Path, mode: ExecMode) -> CliResult<GridReport> {
    let g = cfg.grid.as_ref().ok_or_else(|| CliError::config("config has no [grid] section"))?;
    let p = cfg.build_problem()?;
    let op = cfg.grid_operator()?;
    let controls = control_lattice(p.as_ref(), g.controls_per_dim)?;
    ensure_dir(out)?;
    let start = Instant::now();
    let (gvf, rep) = grid_value_iteration(p.as_ref(), &g.axes, &controls, &op, g.tolerance, g.max_sweeps, mode)?;
    let runtime_s = start.elapsed().as_secs_f64();
    if !rep.converged {
        log::warn!("grid iteration stopped after {} sweeps with change {:e}", rep.sweeps, rep.final_change);
    }
    save_grid(&out.join(GRID_FILE), &gvf)?;
    if !out.join(CONFIG_FILE).exists() {
        write_atomic(&out.join(CONFIG_FILE), cfg.to_toml()?.as_bytes())?;
    }
    let report = GridReport {
        problem: p.name().to_string(),
        nodes: gvf.values.len(),
        controls: controls.len(),
        sweeps: rep.sweeps,
        final_change: rep.final_change,
        converged: rep.converged,
        max_increase: rep.max_increase,
        pinned_nodes: rep.pinned_nodes,
        runtime_s,
    };
    write_json(&out.join(GRID_REPORT_FILE), &report)?;
    Ok(report)
}

// ------------------------------------------------------------- run dirs

/// A trained run directory.
pub struct RunDir {
    pub path: PathBuf,
    pub config: RunConfig,
    pub problem: Arc<dyn ControlProblem>,
    pub actor: Option<Network>,
    pub critic: Option<Network>,
}

impl RunDir {
    /// Loads the config snapshot and whatever networks exist.
    pub fn open(path: &Path) -> CliResult<Self> {
        let cfg_path = path.join(CONFIG_FILE);
        if !cfg_path.exists() {
            return Err(CliError::runtime(format!("{} is not a run directory (no {CONFIG_FILE})", path.display())));
        }
        let config = RunConfig::load(&cfg_path)?;
        let problem = config.build_problem()?;
        let net = |name: &str| -> CliResult<Option<Network>> {
            let f = path.join(name);
            if f.exists() {
                Ok(Some(load_network(&f).context(format!("loading {}", f.display()))?))
            } else {
                Ok(None)
            }
        };
        Ok(Self {
            path: path.to_path_buf(),
            actor: net(ACTOR_FILE)?,
            critic: net(CRITIC_FILE)?,
            config,
            problem,
        })
    }

    pub fn actor(&self) -> CliResult<&Network> {
        self.actor.as_ref().ok_or_else(|| CliError::runtime(format!("missing {ACTOR_FILE} in {}", self.path.display())))
    }

    pub fn critic(&self) -> CliResult<&Network> {
        self.critic.as_ref().ok_or_else(|| CliError::runtime(format!("missing {CRITIC_FILE} in {}", self.path.display())))
    }

    /// Grid file: the explicit one, else `value.grid` in the run directory.
    fn grid(&self, explicit: Option<&Path>) -> CliResult<Option<GridValueFunction>> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => self.path.join(GRID_FILE),
        };
        if explicit.is_none() && !path.exists() {
            return Ok(None);
        }
        let g = load_grid(&path).context(format!("loading {}", path.display()))?;
        if g.axes.len() != self.problem.state_dim() {
            return Err(CliError::runtime(format!("{} does not match the problem dimension", path.display())));
        }
        Ok(Some(g))
    }
}

// ------------------------------------------------------------- evaluate

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Reference {
    /// Grid file if one is available, else the analytic value if the
    /// problem has one, else none.
    #[default]
    Auto,
    Analytic,
    Grid,
    /// The run's own critic; a pipeline self-check.
    Critic,
}

#[derive(Debug, Clone, Default)]
pub struct EvaluateOptions {
    pub mode: ExecMode,
    pub grid: Option<PathBuf>,
    pub reference: Reference,
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub problem: String,
    pub reference: String,
    pub test_points: usize,
    pub error: Option<ErrorStats>,
    pub residual: ResidualStats,
    pub sign_agreement: Option<SignAgreement>,
    pub warnings: Vec<String>,
}

/// Test states: uniform in the training disk for the double integrator,
/// else the training sampler on a dedicated stream.
fn test_points(run: &RunDir, n: usize) -> Array2<f64> {
    let seed = run.config.train.seed;
    match &run.config.problem {
        ProblemSpec::DoubleIntegrator(p) => uniform_disk_points(n, p.radius, seed),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(EVALUATE_STREAM);
            run.problem.sample_domain(&mut rng, n)
        }
    }
}

pub fn evaluate(run_dir: &Path, opts: &EvaluateOptions) -> CliResult<EvaluationReport> {
    let run = RunDir::open(run_dir)?;
    let p = run.problem.as_ref();
    let critic_net = run.critic()?;
    let actor_net = run.actor()?;
    let critic = NeuralCritic::new(critic_net, p)?;
    let is_di = matches!(run.config.problem, ProblemSpec::DoubleIntegrator(_));
    let n = opts.n.unwrap_or(run.config.evaluate.test_points);
    if n == 0 {
        return Err(CliError::config("--n must be positive for evaluate"));
    }
    let mut xs = test_points(&run, n);
    let mut warnings = Vec::new();

    let wanted_grid = matches!(opts.reference, Reference::Auto | Reference::Grid);
    let grid = if wanted_grid { run.grid(opts.grid.as_deref())? } else { None };
    let reference = match (opts.reference, &grid) {
        (Reference::Grid, None) => return Err(CliError::runtime("no grid file for --reference grid")),
        (Reference::Analytic, _) if !is_di => {
            return Err(CliError::config(format!("no analytic reference for {}", p.name())))
        }
        (Reference::Critic, _) => "critic",
        (Reference::Auto | Reference::Grid, Some(_)) => "grid",
        (Reference::Auto, None) if is_di => "analytic",
        (Reference::Analytic, _) => "analytic",
        (Reference::Auto, None) => {
            let w = format!("no grid file and no analytic reference for {}; residual-only report", p.name());
            log::warn!("{w}");
            warnings.push(w);
            "none"
        }
    };
    if let Some(g) = &grid {
        let keep: Vec<usize> = (0..xs.nrows()).filter(|&i| g.contains(&xs.row(i).to_vec())).collect();
        if keep.len() < xs.nrows() {
            let w = format!("{} of {} test points lie outside the grid and were dropped", xs.nrows() - keep.len(), xs.nrows());
            log::warn!("{w}");
            warnings.push(w);
            xs = xs.select(ndarray::Axis(0), &keep);
        }
        if xs.nrows() == 0 {
            return Err(CliError::runtime("no test points inside the grid"));
        }
    }
    let error = match reference {
        "critic" => Some(critic_error(&critic, &|x: &[f64]| critic.value(x), &xs, opts.mode)?),
        "grid" => {
            let g = grid.as_ref().unwrap();
            Some(critic_error(&critic, &|x: &[f64]| g.interpolate(x), &xs, opts.mode)?)
        }
        "analytic" => Some(critic_error(&critic, &double_integrator_reference, &xs, opts.mode)?),
        _ => None,
    };
    let residual = residual_stats(p, critic_net, actor_net, &xs, &run.config.train.operator())?;
    let sign_agreement = match &run.config.problem {
        ProblemSpec::DoubleIntegrator(d) => {
            let e = &run.config.evaluate;
            let policy = NeuralPolicy::new(actor_net, p)?;
            Some(double_integrator_sign_agreement(&policy, d.radius, e.sign_lattice, e.sign_margin, opts.mode))
        }
        _ => None,
    };
    let report = EvaluationReport {
        problem: p.name().to_string(),
        reference: reference.to_string(),
        test_points: xs.nrows(),
        error,
        residual,
        sign_agreement,
        warnings,
    };
    write_json(&run.path.join(EVALUATION_FILE), &report)?;
    Ok(report)
}

// -------------------------------------------------------------- rollout

#[derive(Debug, Clone, Default)]
pub struct RolloutOptions {
    pub mode: ExecMode,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub dt_override: Option<f64>,
    /// Steer with the grid table instead of the actor.
    pub grid: Option<PathBuf>,
    /// Defaults to `<run>/rollouts`.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutReport {
    pub problem: String,
    pub policy: String,
    pub seed: u64,
    pub dt: f64,
    pub t_max: f64,
    /// Largest `|u_i|` applied anywhere in the ensemble.
    pub max_abs_control: f64,
    pub initial_states: Vec<Vec<f64>>,
    pub summary: EnsembleSummary,
}

pub const ROLLOUT_SUMMARY_FILE: &str = "summary.json";

/// Initial states for `n` rollouts from `seed`.
pub fn initial_states(cfg: &RunConfig, p: &dyn ControlProblem, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ROLLOUT_STREAM);
    let mut xs = p.sample_domain(&mut rng, n);
    if let InitialStates::Annulus { r_min, r_max } = cfg.rollout.initial {
        for mut row in xs.rows_mut() {
            let r = rng.random_range(r_min * r_min..=r_max * r_max).sqrt();
            let phi = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            row[0] = r * phi.cos();
            row[1] = r * phi.sin();
        }
    }
    xs.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn rollout(run_dir: &Path, opts: &RolloutOptions) -> CliResult<RolloutReport> {
    let run = RunDir::open(run_dir)?;
    let p = run.problem.as_ref();
    let cfg = &run.config;
    let rcfg = cfg.rollout_config(opts.dt_override);
    rcfg.validate().context("rollout")?;
    let n = opts.n.unwrap_or(cfg.rollout.runs);
    let seed = opts.seed.unwrap_or(cfg.train.seed);
    let x0s = initial_states(cfg, p, n, seed);

    let grid = match &opts.grid {
        Some(path) => run.grid(Some(path))?,
        None => None,
    };
    let neural;
    let tabular;
    let (policy, policy_name): (&dyn Policy, &str) = match &grid {
        Some(g) => {
            tabular = GridPolicy { problem: p, table: g };
            (&tabular, "grid")
        }
        None => {
            neural = NeuralPolicy::new(run.actor()?, p)?;
            (&neural, "actor")
        }
    };
    let (trajs, summary) = ensemble(p, policy, &x0s, &rcfg, cfg.rollout.settle_tolerance, opts.mode)?;

    let out = opts.out.clone().unwrap_or_else(|| run.path.join("rollouts"));
    ensure_dir(&out)?;
    for entry in fs::read_dir(&out)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("");
        if name.starts_with("traj_") && name.ends_with(".csv") {
            fs::remove_file(&path)?;
        }
    }
    let axes = state_axes(&cfg.problem);
    let units: Vec<String> = axes.iter().enumerate().map(|(i, (name, unit))| format!("x{i}={name} [{unit}]")).collect();
    for (i, t) in trajs.iter().enumerate() {
        let meta = [
            ("problem", p.name().to_string()),
            ("policy", policy_name.to_string()),
            ("seed", seed.to_string()),
            ("run", i.to_string()),
            ("dt", rcfg.dt.to_string()),
            ("state", units.join(", ")),
        ];
        write_trajectory_csv(&out.join(format!("traj_{i:04}.csv")), p, t, &meta)?;
    }
    let max_abs_control = trajs
        .iter()
        .flat_map(|t| t.controls.iter().flatten())
        .fold(0.0f64, |m, u| m.max(u.abs()));
    let report = RolloutReport {
        problem: p.name().to_string(),
        policy: policy_name.to_string(),
        seed,
        dt: rcfg.dt,
        t_max: rcfg.t_max,
        max_abs_control,
        initial_states: x0s,
        summary,
    };
    write_json(&out.join(ROLLOUT_SUMMARY_FILE), &report)?;
    Ok(report)
}

// --------------------------------------------------------------- export

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Artifact {
    /// Transformed value over a 2D slice.
    ValueSlice,
    /// One actor control component over a 2D slice.
    SwitchingRaster,
    /// `W(x) - H(x, W, U(x))` over a 2D slice.
    ResidualMap,
}

impl Artifact {
    pub fn file_stem(self) -> &'static str {
        match self {
            Artifact::ValueSlice => "value_slice",
            Artifact::SwitchingRaster => "switching_raster",
            Artifact::ResidualMap => "residual_map",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExportOptions {
    pub mode: ExecMode,
    pub artifact: Artifact,
    /// Defaults per problem, see [`default_slice`].
    pub slice: Option<Lattice2>,
    pub component: usize,
    /// Value slices in cost-to-go units `-ln(1 - W) / mu`.
    pub cost_to_go: bool,
    /// Read values from a grid file instead of the critic.
    pub grid: Option<PathBuf>,
    /// Defaults to `<run>/exports/<artifact>.csv`.
    pub out: Option<PathBuf>,
}

/// The slice shown for each problem when none is given: the phase plane,
/// the `(x, heading)` plane at `y = 0`, and the `(w1, w2)` plane at rest
/// attitude.
pub fn default_slice(spec: &ProblemSpec) -> Lattice2 {
    use std::f64::consts::PI;
    match spec {
        ProblemSpec::DoubleIntegrator(p) => Lattice2 {
            free: [0, 1],
            fixed: vec![],
            x_range: [-p.radius, p.radius],
            y_range: [-p.radius, p.radius],
            resolution: [200, 200],
        },
        ProblemSpec::Dubins(_) => Lattice2 {
            free: [0, 2],
            fixed: vec![(1, 0.0)],
            x_range: [-2.0, 2.0],
            y_range: [-PI, PI],
            resolution: [200, 200],
        },
        ProblemSpec::Trace(p) => {
            let w = p.max_rate_sq.sqrt();
            Lattice2 {
                free: [4, 5],
                fixed: vec![(0, 1.0), (1, 0.0), (2, 0.0), (3, 0.0), (6, 0.0)],
                x_range: [-w, w],
                y_range: [-w, w],
                resolution: [200, 200],
            }
        }
    }
}

/// Writes the artifact and returns the files written.
pub fn export(run_dir: &Path, opts: &ExportOptions) -> CliResult<Vec<PathBuf>> {
    let run = RunDir::open(run_dir)?;
    let p = run.problem.as_ref();
    let cfg = &run.config;
    let slice = opts.slice.clone().unwrap_or_else(|| default_slice(&cfg.problem));
    slice.validate(p.state_dim()).context("slice")?;
    let mu = match &opts.grid {
        Some(_) => cfg.grid_operator().map(|o| o.mu).unwrap_or(cfg.train.mu),
        None => cfg.train.mu,
    };
    let untransform = |w: f64| if opts.cost_to_go { kruzkov_inverse(w).map(|v| v / mu).unwrap_or(f64::INFINITY) } else { w };
    let grid = match &opts.grid {
        Some(path) => run.grid(Some(path))?,
        None => None,
    };
    let mut source = "critic";
    let mut raster: Raster = match opts.artifact {
        Artifact::ValueSlice => {
            let label = if opts.cost_to_go { "cost_to_go" } else { "W" };
            match &grid {
                Some(g) => {
                    source = "grid";
                    slice.raster(p.state_dim(), label, opts.mode, |x| untransform(g.interpolate(x)))?
                }
                None => {
                    let c = NeuralCritic::new(run.critic()?, p)?;
                    slice.raster(p.state_dim(), label, opts.mode, |x| untransform(c.value(x)))?
                }
            }
        }
        Artifact::SwitchingRaster => match &grid {
            Some(g) => {
                source = "grid";
                switching_surface_raster(p, &GridPolicy { problem: p, table: g }, &slice, opts.component, opts.mode)?
            }
            None => {
                source = "actor";
                switching_surface_raster(p, &NeuralPolicy::new(run.actor()?, p)?, &slice, opts.component, opts.mode)?
            }
        },
        Artifact::ResidualMap => {
            if grid.is_some() {
                return Err(CliError::config("residual_map is computed from the trained networks; drop --grid"));
            }
            source = "critic+actor";
            let c = NeuralCritic::new(run.critic()?, p)?;
            let a = NeuralPolicy::new(run.actor()?, p)?;
            let op = cfg.train.operator();
            let dim = p.state_dim();
            slice.raster(dim, "residual", opts.mode, |x| {
                let row = Array2::from_shape_vec((1, dim), x.to_vec()).expect("one state row");
                bellman_residual(p, &c, &a, row.view(), &op).map(|r| r[0]).unwrap_or(f64::NAN)
            })?
        }
    };
    let axes = state_axes(&cfg.problem);
    let (xn, xu) = axes[slice.free[0]];
    let (yn, yu) = axes[slice.free[1]];
    raster.x_label = xn.to_string();
    raster.y_label = yn.to_string();
    let fixed: Vec<String> = slice.fixed.iter().map(|&(d, v)| format!("{}={v}", axes[d].0)).collect();
    let value_unit = match opts.artifact {
        Artifact::ValueSlice if opts.cost_to_go => "s",
        Artifact::SwitchingRaster => "control units",
        _ => "1",
    };
    let meta = [
        ("problem", p.name().to_string()),
        ("artifact", opts.artifact.file_stem().to_string()),
        ("source", source.to_string()),
        ("units", format!("{xn} {xu}, {yn} {yu}, {} {value_unit}", raster.value_label)),
        ("fixed", if fixed.is_empty() { "none".into() } else { fixed.join(", ") }),
        ("resolution", format!("{}x{}", slice.resolution[0], slice.resolution[1])),
    ];
    let out = opts
        .out
        .clone()
        .unwrap_or_else(|| run.path.join("exports").join(format!("{}.csv", opts.artifact.file_stem())));
    if let Some(dir) = out.parent() {
        ensure_dir(dir)?;
    }
    let meta_ref: Vec<(&str, String)> = meta.iter().map(|(k, v)| (*k, v.clone())).collect();
    raster.write_csv(&out, &meta_ref).context(format!("writing {}", out.display()))?;
    let mut written = vec![out.clone()];

    if opts.artifact == Artifact::SwitchingRaster && matches!(cfg.problem, ProblemSpec::DoubleIntegrator(_)) && slice.free == [0, 1] {
        let curve = out.with_file_name("switching_curve.csv");
        let mut s = String::from("# problem: double_integrator\n# units: position m, velocity m/s\nposition,velocity\n");
        for (x, y) in switching_curve_points(slice.y_range, slice.resolution[1]) {
            s.push_str(&format!("{x},{y}\n"));
        }
        write_atomic(&curve, s.as_bytes())?;
        written.push(curve);
    }
    Ok(written)
}

/// Parses `"a,b"` into two numbers.
pub fn parse_pair<T: std::str::FromStr>(s: &str) -> Result<[T; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(format!("expected two comma-separated values, got `{s}`"));
    }
    let one = |t: &str| t.parse::<T>().map_err(|_| format!("cannot parse `{t}`"));
    Ok([one(parts[0])?, one(parts[1])?])
}

/// Parses `"dim=value"`.
pub fn parse_fixed(s: &str) -> Result<(usize, f64), String> {
    let (d, v) = s.split_once('=').ok_or_else(|| format!("expected dim=value, got `{s}`"))?;
    Ok((
        d.trim().parse().map_err(|_| format!("bad dimension `{d}`"))?,
        v.trim().parse().map_err(|_| format!("bad value `{v}`"))?,
    ))
}
