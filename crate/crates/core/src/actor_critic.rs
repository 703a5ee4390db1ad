//! Alternating actor and critic fitting on fresh state samples.
//!
//! Each outer iteration `k` draws `X_dom` from the domain and `X_tgt` from
//! the target, then
//!
//! 1. takes `actor_steps` optimizer steps on `mean_{X_dom} H(x, W_avg, U(x))`
//!    with the averaged critic frozen,
//! 2. Polyak-averages the actor,
//! 3. computes targets `y = H(x, W_avg, U_avg(x))` once and takes
//!    `critic_steps` steps on `mean (W(x) - y)^2 + lambda mean_{X_tgt} W^2`,
//! 4. Polyak-averages the critic.
//!
//! Batches are split into fixed chunks of [`CHUNK_ROWS`] rows and reduced in
//! chunk order, so sequential and parallel execution give identical bits.

use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_chunks, ExecMode, CHUNK_ROWS};
use crate::fsutil::write_atomic;
use crate::nn::{
    polyak_average, sum_in_order, validate_topology, Activation, LayerSpec, Network, OptimizerConfig, OptimizerState,
    OutputBounds, WeightVector,
};
use crate::ocp::{features_batch, ControlProblem};
use crate::sl::{critic_output, critic_output_derivative, euler_raw, ResidualStats, SlOperatorConfig};

/// Hidden-layer layout of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub activation: Activation,
    /// Hidden layers after the first become residual blocks `x + L(x)`.
    #[serde(default)]
    pub residual: bool,
}

impl NetworkConfig {
    pub fn layers(&self, input: usize, output: usize) -> Result<Vec<LayerSpec>> {
        if self.hidden == 0 || self.depth == 0 {
            return Err(Error::Config("networks need at least one hidden layer of nonzero width".into()));
        }
        let mut layers = vec![LayerSpec::dense(input, self.hidden, self.activation)];
        for _ in 1..self.depth {
            layers.push(if self.residual {
                LayerSpec::residual(self.hidden, self.activation)
            } else {
                LayerSpec::dense(self.hidden, self.hidden, self.activation)
            });
        }
        layers.push(LayerSpec::dense(self.hidden, output, Activation::Identity));
        validate_topology(&layers)?;
        Ok(layers)
    }
}

/// Extra critic steps when the fit after `critic_steps` is still poor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticStepBoost {
    pub threshold: f64,
    /// Total steps become `multiplier * critic_steps`.
    pub multiplier: usize,
}

impl Default for CriticStepBoost {
    fn default() -> Self {
        Self {
            threshold: 1e-3,
            multiplier: 4,
        }
    }
}

/// Stop once the relative update norms of both averaged networks have a
/// trailing-window mean and variance below the tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_mean_tol")]
    pub mean_tol: f64,
    #[serde(default = "default_var_tol")]
    pub var_tol: f64,
}

fn default_window() -> usize {
    50
}
fn default_mean_tol() -> f64 {
    1e-4
}
fn default_var_tol() -> f64 {
    1e-6
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            window: default_window(),
            mean_tol: default_mean_tol(),
            var_tol: default_var_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dt: f64,
    #[serde(default = "one")]
    pub mu: f64,
    pub alpha: f64,
    pub n_domain: usize,
    pub n_target: usize,
    #[serde(default = "default_actor_steps")]
    pub actor_steps: usize,
    #[serde(default = "default_critic_steps")]
    pub critic_steps: usize,
    #[serde(default)]
    pub critic_step_boost: CriticStepBoost,
    pub actor_optimizer: OptimizerConfig,
    pub critic_optimizer: OptimizerConfig,
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub target_loss_weight: f64,
    #[serde(default)]
    pub early_stop: Option<EarlyStop>,
    /// Checkpoint interval in iterations; 0 writes only the final state.
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn one() -> f64 {
    1.0
}
fn default_actor_steps() -> usize {
    5
}
fn default_critic_steps() -> usize {
    20
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.operator().validate()?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        for (name, v) in [
            ("n_domain", self.n_domain),
            ("n_target", self.n_target),
            ("actor_steps", self.actor_steps),
            ("critic_steps", self.critic_steps),
            ("iterations", self.iterations),
            ("critic_step_boost.multiplier", self.critic_step_boost.multiplier),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.target_loss_weight > 0.0 && self.target_loss_weight.is_finite()) {
            return Err(Error::Config("target_loss_weight must be positive".into()));
        }
        if !(self.critic_step_boost.threshold >= 0.0) {
            return Err(Error::Config("critic_step_boost.threshold must be nonnegative".into()));
        }
        if let Some(es) = &self.early_stop {
            if es.window < 2 {
                return Err(Error::Config("early_stop.window must be at least 2".into()));
            }
        }
        self.actor_optimizer.validate()?;
        self.critic_optimizer.validate()?;
        Ok(())
    }

    pub fn operator(&self) -> SlOperatorConfig {
        SlOperatorConfig { dt: self.dt, mu: self.mu }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// Mean of `H` at the last actor step.
    pub actor_loss: f64,
    /// Post-fit critic loss, both terms.
    pub critic_loss: f64,
    /// Post-fit target term `mean W^2` over `X_tgt`.
    pub target_loss: f64,
    pub critic_steps: usize,
    /// `W_avg(x) - y(x)` on the domain batch before the critic stage.
    pub residual: ResidualStats,
    /// `|W_avg' - W_avg| / |W_avg|` for the actor and the critic.
    pub actor_update: f64,
    pub critic_update: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub iteration: usize,
    pub actor: Network,
    pub actor_avg: Network,
    pub critic: Network,
    pub critic_avg: Network,
    pub actor_opt: OptimizerState,
    pub critic_opt: OptimizerState,
    pub history: Vec<IterationRecord>,
}

fn derived_seed(seed: u64, stream: u64) -> u64 {
    use rand::RngCore;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Sampling rng of iteration `k`; needs no saved state on resume.
pub fn iteration_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1000 + k as u64);
    rng
}

/// Actor network with outputs squashed into the control box.
pub fn build_actor(p: &dyn ControlProblem, cfg: &NetworkConfig, seed: u64) -> Result<Network> {
    let layers = cfg.layers(p.feature_dim(), p.control_dim())?;
    let bounds = OutputBounds::new(p.control_lower().to_vec(), p.control_upper().to_vec())?;
    Network::initialized(layers, seed, Some(bounds))
}

/// Critic network with a zeroed output layer, so `W = 1/2` everywhere at
/// the start.
pub fn build_critic(p: &dyn ControlProblem, cfg: &NetworkConfig, seed: u64) -> Result<Network> {
    let layers = cfg.layers(p.feature_dim(), 1)?;
    let last = layers.last().unwrap().param_count();
    let mut net = Network::initialized(layers, seed, None)?;
    let mut w = net.weights().clone();
    let n = w.len();
    w.0[n - last..].fill(0.0);
    net.set_weights(w)?;
    Ok(net)
}

impl TrainState {
    pub fn new(p: &dyn ControlProblem, cfg: &TrainConfig, actor: &NetworkConfig, critic: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let actor = build_actor(p, actor, derived_seed(cfg.seed, 1))?;
        let critic = build_critic(p, critic, derived_seed(cfg.seed, 2))?;
        Ok(Self {
            iteration: 0,
            actor_opt: OptimizerState::new(cfg.actor_optimizer.clone(), actor.param_count()),
            critic_opt: OptimizerState::new(cfg.critic_optimizer.clone(), critic.param_count()),
            actor_avg: actor.clone(),
            critic_avg: critic.clone(),
            actor,
            critic,
            history: Vec::new(),
        })
    }
}

/// Per-row quantities of the one-step map `x -> x'` under controls `us`.
struct Successors {
    raw: Array2<f64>,
    next: Array2<f64>,
    gamma: Vec<f64>,
}

fn successors(p: &dyn ControlProblem, xs: ArrayView2<'_, f64>, us: ArrayView2<'_, f64>, op: &SlOperatorConfig) -> Successors {
    let (n, d) = xs.dim();
    let mut raw = Array2::zeros((n, d));
    let mut gamma = Vec::with_capacity(n);
    for ((x, u), mut r) in xs.rows().into_iter().zip(us.rows()).zip(raw.rows_mut()) {
        let (x, u) = (x.as_slice().unwrap(), u.as_slice().unwrap());
        euler_raw(p, x, u, op.dt, r.as_slice_mut().unwrap());
        gamma.push((-op.dt * op.mu * p.running_cost(x, u)).exp());
    }
    let mut next = raw.clone();
    for mut row in next.rows_mut() {
        p.project_state(row.as_slice_mut().unwrap());
    }
    Successors { raw, next, gamma }
}

/// Critic values at `xs` and, if asked, their state gradients.
fn critic_values(p: &dyn ControlProblem, critic: &Network, xs: ArrayView2<'_, f64>, with_grad: bool) -> (Vec<f64>, Option<Array2<f64>>) {
    let feats = features_batch(p, xs);
    if !with_grad {
        let s = critic.forward_plain(feats.view());
        return (s.column(0).iter().map(|&v| critic_output(v)).collect(), None);
    }
    let (s, tape) = critic.forward_tape(feats.view());
    let up = s.mapv(critic_output_derivative);
    let gf = critic.backward(&tape, up.view(), None);
    let mut gx = Array2::zeros(xs.dim());
    for ((x, g), mut out) in xs.rows().into_iter().zip(gf.rows()).zip(gx.rows_mut()) {
        p.features_vjp(x.as_slice().unwrap(), g.as_slice().unwrap(), out.as_slice_mut().unwrap());
    }
    (s.column(0).iter().map(|&v| critic_output(v)).collect(), Some(gx))
}

fn check_loss(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} = {v}")))
    }
}

/// Mean of `H(x, critic, actor(x))` over `xs` and its gradient in the actor
/// weights.
pub fn actor_loss_and_gradient(
    p: &dyn ControlProblem,
    actor: &Network,
    critic: &Network,
    xs: ArrayView2<'_, f64>,
    op: &SlOperatorConfig,
    mode: ExecMode,
) -> Result<(f64, Vec<f64>)> {
    let n = xs.nrows();
    if n == 0 {
        return Err(Error::Domain("empty actor batch".into()));
    }
    let (sd, cd) = (p.state_dim(), p.control_dim());
    let parts = map_chunks(mode, n, CHUNK_ROWS, |a, b| {
        let xa = xs.slice(s![a..b, ..]);
        let feats = features_batch(p, xa);
        let (us, tape) = actor.forward_tape(feats.view());
        let succ = successors(p, xa, us.view(), op);
        let (w, gw) = critic_values(p, critic, succ.next.view(), true);
        let mut gw = gw.unwrap();
        let mut up = Array2::zeros((b - a, cd));
        let mut jac = vec![0.0; sd * cd];
        let mut dl = vec![0.0; cd];
        let mut loss = 0.0;
        for i in 0..b - a {
            let x = xa.row(i);
            let x = x.as_slice().unwrap();
            let u = us.row(i);
            let u = u.as_slice().unwrap();
            let g = succ.gamma[i];
            loss += 1.0 + g * (w[i] - 1.0);
            let mut gv = gw.row_mut(i);
            let gv = gv.as_slice_mut().unwrap();
            p.project_vjp(succ.raw.row(i).as_slice().unwrap(), gv);
            p.control_jacobian(x, u, &mut jac);
            p.cost_control_gradient(x, u, &mut dl);
            for k in 0..cd {
                let through_state: f64 = (0..sd).map(|r| gv[r] * jac[r * cd + k]).sum();
                up[[i, k]] = (g * op.dt * through_state - op.dt * op.mu * g * (w[i] - 1.0) * dl[k]) / n as f64;
            }
        }
        let mut grad = vec![0.0; actor.param_count()];
        actor.backward(&tape, up.view(), Some(&mut grad));
        (loss, grad)
    });
    let loss = parts.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let grad = sum_in_order(actor.param_count(), parts.into_iter().map(|p| p.1).collect());
    Ok((check_loss("actor loss", loss)?, grad))
}

/// `y(x) = H(x, critic, actor(x))` and `critic(x)` over `xs`.
pub fn critic_targets(
    p: &dyn ControlProblem,
    actor: &Network,
    critic: &Network,
    xs: ArrayView2<'_, f64>,
    op: &SlOperatorConfig,
    mode: ExecMode,
) -> (Vec<f64>, Vec<f64>) {
    let parts = map_chunks(mode, xs.nrows(), CHUNK_ROWS, |a, b| {
        let xa = xs.slice(s![a..b, ..]);
        let us = actor.forward_plain(features_batch(p, xa).view());
        let succ = successors(p, xa, us.view(), op);
        let (w_next, _) = critic_values(p, critic, succ.next.view(), false);
        let (w_here, _) = critic_values(p, critic, xa, false);
        let y: Vec<f64> = w_next.iter().zip(&succ.gamma).map(|(w, g)| 1.0 + g * (w - 1.0)).collect();
        (y, w_here)
    });
    let mut y = Vec::with_capacity(xs.nrows());
    let mut here = Vec::with_capacity(xs.nrows());
    for (a, b) in parts {
        y.extend(a);
        here.extend(b);
    }
    (y, here)
}

/// Critic regression loss split into `(domain term, target term)`, and the
/// gradient of `domain + weight * target`.
pub fn critic_loss_and_gradient(
    critic: &Network,
    feats_domain: ArrayView2<'_, f64>,
    targets: &[f64],
    feats_target: ArrayView2<'_, f64>,
    target_weight: f64,
    mode: ExecMode,
) -> Result<(f64, f64, Vec<f64>)> {
    let np = critic.param_count();
    let part = |feats: ArrayView2<'_, f64>, y: Option<&[f64]>, scale: f64| {
        let n = feats.nrows();
        map_chunks(mode, n, CHUNK_ROWS, |a, b| {
            let (s, tape) = critic.forward_tape(feats.slice(s![a..b, ..]));
            let mut up = Array2::zeros((b - a, 1));
            let mut loss = 0.0;
            for i in 0..b - a {
                let w = critic_output(s[[i, 0]]);
                let r = w - y.map_or(0.0, |y| y[a + i]);
                loss += r * r;
                up[[i, 0]] = scale * 2.0 * r * critic_output_derivative(s[[i, 0]]) / n as f64;
            }
            let mut grad = vec![0.0; np];
            critic.backward(&tape, up.view(), Some(&mut grad));
            (loss / n as f64, grad)
        })
    };
    let dom = part(feats_domain, Some(targets), 1.0);
    let tgt = part(feats_target, None, target_weight);
    let l_dom: f64 = dom.iter().map(|p| p.0).sum();
    let l_tgt: f64 = tgt.iter().map(|p| p.0).sum();
    let grad = sum_in_order(np, dom.into_iter().chain(tgt).map(|p| p.1).collect());
    check_loss("critic loss", l_dom + l_tgt)?;
    Ok((l_dom, l_tgt, grad))
}

fn relative_change(old: &WeightVector, new: &WeightVector) -> f64 {
    let d: f64 = old.iter().zip(new.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    d / old.norm().max(f64::MIN_POSITIVE)
}

fn optimizer_step(net: &mut Network, opt: &mut OptimizerState, grad: &[f64]) -> Result<()> {
    let mut w = net.weights().clone();
    opt.step(&mut w, grad)?;
    net.set_weights(w)
}

/// Drives the outer loop over a [`TrainState`].
pub struct Trainer<'a> {
    pub problem: &'a dyn ControlProblem,
    pub config: TrainConfig,
    pub mode: ExecMode,
    pub state: TrainState,
}

impl<'a> Trainer<'a> {
    pub fn new(problem: &'a dyn ControlProblem, config: TrainConfig, state: TrainState, mode: ExecMode) -> Result<Self> {
        config.validate()?;
        if state.actor.input_dim() != problem.feature_dim() || state.actor.output_dim() != problem.control_dim() {
            return Err(Error::Topology("actor does not fit the problem".into()));
        }
        if state.critic.input_dim() != problem.feature_dim() || state.critic.output_dim() != 1 {
            return Err(Error::Topology("critic does not fit the problem".into()));
        }
        Ok(Self {
            problem,
            config,
            mode,
            state,
        })
    }

    /// Actor stage on `xs`; returns the loss at every step.
    pub fn actor_stage(&mut self, xs: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let op = self.config.operator();
        let mut trace = Vec::with_capacity(self.config.actor_steps);
        for _ in 0..self.config.actor_steps {
            let (loss, grad) =
                actor_loss_and_gradient(self.problem, &self.state.actor, &self.state.critic_avg, xs, &op, self.mode)?;
            optimizer_step(&mut self.state.actor, &mut self.state.actor_opt, &grad)?;
            trace.push(loss);
        }
        Ok(trace)
    }

    /// Critic stage; returns `(domain loss, target loss, steps taken,
    /// residual stats of the averaged critic)`.
    pub fn critic_stage(&mut self, xs: ArrayView2<'_, f64>, xt: ArrayView2<'_, f64>) -> Result<(f64, f64, usize, ResidualStats)> {
        let p = self.problem;
        let op = self.config.operator();
        let (y, here) = critic_targets(p, &self.state.actor_avg, &self.state.critic_avg, xs, &op, self.mode);
        let residuals: Vec<f64> = here.iter().zip(&y).map(|(w, y)| w - y).collect();
        let stats = ResidualStats::from_residuals(&residuals);
        let fd = features_batch(p, xs);
        let ft = features_batch(p, xt);
        let lam = self.config.target_loss_weight;
        let base = self.config.critic_steps;
        let boost = self.config.critic_step_boost;
        let mut steps = 0;
        let mut budget = base;
        loop {
            while steps < budget {
                let (_, _, grad) = critic_loss_and_gradient(&self.state.critic, fd.view(), &y, ft.view(), lam, self.mode)?;
                optimizer_step(&mut self.state.critic, &mut self.state.critic_opt, &grad)?;
                steps += 1;
            }
            let (ld, lt, _) = critic_loss_and_gradient(&self.state.critic, fd.view(), &y, ft.view(), lam, self.mode)?;
            let boosted_budget = base * boost.multiplier;
            if ld + lam * lt > boost.threshold && budget < boosted_budget {
                budget = boosted_budget;
                continue;
            }
            return Ok((ld, lt, steps, stats));
        }
    }

    /// One outer iteration.
    pub fn iterate(&mut self) -> Result<IterationRecord> {
        let k = self.state.iteration;
        let mut rng = iteration_rng(self.config.seed, k);
        let xs = self.problem.sample_domain(&mut rng, self.config.n_domain);
        let xt = self.problem.sample_target(&mut rng, self.config.n_target);
        let alpha = self.config.alpha;

        let actor_trace = self.actor_stage(xs.view())?;
        let prev = self.state.actor_avg.weights().clone();
        let avg = polyak_average(&prev, self.state.actor.weights(), alpha)?;
        let actor_update = relative_change(&prev, &avg);
        self.state.actor_avg.set_weights(avg)?;

        let (ld, lt, steps, residual) = self.critic_stage(xs.view(), xt.view())?;
        let prev = self.state.critic_avg.weights().clone();
        let avg = polyak_average(&prev, self.state.critic.weights(), alpha)?;
        let critic_update = relative_change(&prev, &avg);
        self.state.critic_avg.set_weights(avg)?;

        let rec = IterationRecord {
            k,
            actor_loss: *actor_trace.last().unwrap(),
            critic_loss: ld + self.config.target_loss_weight * lt,
            target_loss: lt,
            critic_steps: steps,
            residual,
            actor_update,
            critic_update,
        };
        if ![rec.actor_loss, rec.critic_loss].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("loss at iteration {k}")));
        }
        self.state.iteration += 1;
        self.state.history.push(rec.clone());
        Ok(rec)
    }

    /// Whether the early-stop rule fires on the current history.
    pub fn should_stop(&self) -> bool {
        let Some(es) = self.config.early_stop else {
            return false;
        };
        let h = &self.state.history;
        if h.len() < es.window {
            return false;
        }
        let tail = &h[h.len() - es.window..];
        [|r: &IterationRecord| r.actor_update, |r: &IterationRecord| r.critic_update]
            .iter()
            .all(|f| {
                let v: Vec<f64> = tail.iter().map(f).collect();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
                mean < es.mean_tol && var < es.var_tol
            })
    }

    /// Runs until `iterations` is reached or early stop fires. `observer`
    /// sees every record; returning an error aborts the run.
    pub fn run(&mut self, mut observer: impl FnMut(&TrainState, &IterationRecord) -> Result<()>) -> Result<()> {
        while self.state.iteration < self.config.iterations {
            let rec = self.iterate()?;
            observer(&self.state, &rec)?;
            if self.should_stop() {
                log::info!("early stop at iteration {}", self.state.iteration);
                break;
            }
        }
        Ok(())
    }
}

/// Runs [`Trainer`] from a fresh state and returns the final state.
pub fn train(
    p: &dyn ControlProblem,
    cfg: &TrainConfig,
    actor: &NetworkConfig,
    critic: &NetworkConfig,
    mode: ExecMode,
) -> Result<TrainState> {
    let state = TrainState::new(p, cfg, actor, critic)?;
    let mut t = Trainer::new(p, cfg.clone(), state, mode)?;
    t.run(|_, _| Ok(()))?;
    Ok(t.state)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    magic: String,
    version: u32,
    iteration: usize,
    actor: serde_json::Value,
    actor_avg: serde_json::Value,
    critic: serde_json::Value,
    critic_avg: serde_json::Value,
    actor_opt: OptimizerState,
    critic_opt: OptimizerState,
    history: Vec<IterationRecord>,
}

const CHECKPOINT_MAGIC: &str = "slac-checkpoint";

impl TrainState {
    pub fn to_json(&self) -> Result<String> {
        use crate::nn::io::to_json;
        let v = |n: &Network| -> Result<serde_json::Value> { Ok(serde_json::from_str(&to_json(n)?)?) };
        let file = CheckpointFile {
            magic: CHECKPOINT_MAGIC.into(),
            version: 1,
            iteration: self.iteration,
            actor: v(&self.actor)?,
            actor_avg: v(&self.actor_avg)?,
            critic: v(&self.critic)?,
            critic_avg: v(&self.critic_avg)?,
            actor_opt: self.actor_opt.clone(),
            critic_opt: self.critic_opt.clone(),
            history: self.history.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        use crate::nn::io::from_json;
        let file: CheckpointFile = serde_json::from_str(s)?;
        if file.magic != CHECKPOINT_MAGIC || file.version != 1 {
            return Err(Error::Format("not a version 1 training checkpoint".into()));
        }
        let net = |v: serde_json::Value| from_json(&v.to_string());
        let state = Self {
            iteration: file.iteration,
            actor: net(file.actor)?,
            actor_avg: net(file.actor_avg)?,
            critic: net(file.critic)?,
            critic_avg: net(file.critic_avg)?,
            actor_opt: file.actor_opt,
            critic_opt: file.critic_opt,
            history: file.history,
        };
        if state.history.len() != state.iteration {
            return Err(Error::Format("checkpoint history does not match its iteration count".into()));
        }
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
