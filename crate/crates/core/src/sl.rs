//! Semi-Lagrangian Bellman operator for the Kruzkov-transformed value.
//!
//! With `W = 1 - exp(-V)` and an Euler step of length `dt`, the discrete
//! dynamic programming principle becomes the fixed point
//!
//! ```text
//! W(x) = min_u H(x, W, u),   H(x, W, u) = 1 + g(x, u) (W(x + dt f(x, u)) - 1)
//! W(x) = 0 on the target,    g(x, u) = exp(-dt mu l(x, u))
//! ```
//!
//! `mu` in `(0, 1]` rescales the running cost so that long horizons do not
//! saturate `W` at 1 in floating point.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::nn::Network;
use crate::ocp::ControlProblem;
use crate::policy::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlOperatorConfig {
    pub dt: f64,
    #[serde(default = "one")]
    pub mu: f64,
}

fn one() -> f64 {
    1.0
}

impl SlOperatorConfig {
    pub fn new(dt: f64, mu: f64) -> Result<Self> {
        let cfg = Self { dt, mu };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(Error::Config(format!("mu must lie in (0, 1], got {}", self.mu)));
        }
        Ok(())
    }

    /// Largest discount factor, attained where `l = 1`.
    pub fn max_discount(&self) -> f64 {
        (-self.dt * self.mu).exp()
    }
}

/// `1 - exp(-v)`, with `+inf` mapped to 1.
pub fn kruzkov(v: f64) -> Result<f64> {
    if v.is_nan() || v < 0.0 {
        return Err(Error::Domain(format!("kruzkov transform of {v}")));
    }
    if v == f64::INFINITY {
        return Ok(1.0);
    }
    Ok(-(-v).exp_m1())
}

/// `-ln(1 - w)`; `w >= 1` gives `+inf`.
pub fn kruzkov_inverse(w: f64) -> Result<f64> {
    if w.is_nan() || w < 0.0 {
        return Err(Error::Domain(format!("inverse kruzkov transform of {w}")));
    }
    if w >= 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-(-w).ln_1p())
}

#[inline]
pub(crate) fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^s)` without overflow.
#[inline]
pub fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

/// Critic output map: the network emits a raw score `s`, and the transformed
/// value is `1 - exp(-softplus(s))`, which simplifies to the logistic
/// function of `s`. The untransformed value is `softplus(s)`.
#[inline]
pub fn critic_output(s: f64) -> f64 {
    sigmoid(s)
}

/// Derivative of [`critic_output`].
#[inline]
pub fn critic_output_derivative(s: f64) -> f64 {
    let v = sigmoid(s);
    v * (1.0 - v)
}

/// Euler successor before projection onto the state manifold.
pub(crate) fn euler_raw(p: &dyn ControlProblem, x: &[f64], u: &[f64], dt: f64, out: &mut [f64]) {
    p.dynamics(x, u, out);
    for (o, xi) in out.iter_mut().zip(x) {
        *o = xi + dt * *o;
    }
}

/// `project(x + dt f(x, u))`.
pub fn euler_step(p: &dyn ControlProblem, x: &[f64], u: &[f64], dt: f64) -> Result<Vec<f64>> {
    check_dim("state", p.state_dim(), x.len())?;
    check_dim("control", p.control_dim(), u.len())?;
    check_finite("state", x)?;
    check_finite("control", u)?;
    let mut out = vec![0.0; x.len()];
    euler_raw(p, x, u, dt, &mut out);
    p.project_state(&mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("Euler step from {x:?} with control {u:?}")));
    }
    Ok(out)
}

/// `exp(-dt mu l(x, u))`.
pub fn discount(p: &dyn ControlProblem, x: &[f64], u: &[f64], cfg: &SlOperatorConfig) -> Result<f64> {
    let l = crate::ocp::running_cost(p, x, u)?;
    Ok((-cfg.dt * cfg.mu * l).exp())
}

/// A transformed value function `x -> W(x)` in `[0, 1]`.
pub trait Critic: Sync {
    fn value(&self, x: &[f64]) -> f64;

    /// Value and its gradient with respect to the state.
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// A critic network evaluated on the problem's input embedding.
pub struct NeuralCritic<'a> {
    pub net: &'a Network,
    pub problem: &'a dyn ControlProblem,
}

impl<'a> NeuralCritic<'a> {
    pub fn new(net: &'a Network, problem: &'a dyn ControlProblem) -> Result<Self> {
        check_dim("critic input", problem.feature_dim(), net.input_dim())?;
        check_dim("critic output", 1, net.output_dim())?;
        Ok(Self { net, problem })
    }

    fn score(&self, x: &[f64]) -> f64 {
        let mut f = vec![0.0; self.problem.feature_dim()];
        self.problem.features(x, &mut f);
        let view = ArrayView2::from_shape((1, f.len()), &f).unwrap();
        self.net.forward_plain(view)[[0, 0]]
    }

    /// Untransformed value `softplus(s) / mu`.
    pub fn cost_to_go(&self, x: &[f64], mu: f64) -> f64 {
        softplus(self.score(x)) / mu
    }
}

impl Critic for NeuralCritic<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        critic_output(self.score(x))
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut f = vec![0.0; self.problem.feature_dim()];
        self.problem.features(x, &mut f);
        let view = ArrayView2::from_shape((1, f.len()), &f).unwrap();
        let (out, tape) = self.net.forward_tape(view);
        let s = out[[0, 0]];
        let up = ndarray::arr2(&[[critic_output_derivative(s)]]);
        let gf = self.net.backward(&tape, up.view(), None);
        self.problem.features_vjp(x, gf.row(0).as_slice().unwrap(), grad);
        critic_output(s)
    }
}

/// A critic given by closures, for analytic value functions.
pub struct FnCritic<V, G> {
    pub value: V,
    pub gradient: G,
}

impl<V, G> Critic for FnCritic<V, G>
where
    V: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64], &mut [f64]) + Sync,
{
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.gradient)(x, grad);
        (self.value)(x)
    }
}

/// `H(x, W, u) = 1 + g(x, u) (W(x') - 1)` with `x'` the Euler successor.
pub fn sl_operator(
    p: &dyn ControlProblem,
    critic: &dyn Critic,
    x: &[f64],
    u: &[f64],
    cfg: &SlOperatorConfig,
) -> Result<f64> {
    let next = euler_step(p, x, u, cfg.dt)?;
    let gamma = discount(p, x, u, cfg)?;
    Ok(1.0 + gamma * (critic.value(&next) - 1.0))
}

/// `dH/du` by the chain rule through the discount, the Euler step, and the
/// state projection.
pub fn sl_operator_control_gradient(
    p: &dyn ControlProblem,
    critic: &dyn Critic,
    x: &[f64],
    u: &[f64],
    cfg: &SlOperatorConfig,
) -> Result<Vec<f64>> {
    let (n, m) = (p.state_dim(), p.control_dim());
    check_dim("state", n, x.len())?;
    check_dim("control", m, u.len())?;
    check_finite("state", x)?;
    check_finite("control", u)?;
    let mut raw = vec![0.0; n];
    euler_raw(p, x, u, cfg.dt, &mut raw);
    let mut next = raw.clone();
    p.project_state(&mut next);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("Euler step from {x:?} with control {u:?}")));
    }
    let mut gv = vec![0.0; n];
    let w_next = critic.value_and_gradient(&next, &mut gv);
    p.project_vjp(&raw, &mut gv);
    let gamma = (-cfg.dt * cfg.mu * p.running_cost(x, u)).exp();
    let mut jac = vec![0.0; n * m];
    p.control_jacobian(x, u, &mut jac);
    let mut dl = vec![0.0; m];
    p.cost_control_gradient(x, u, &mut dl);
    Ok((0..m)
        .map(|k| {
            let through_state: f64 = (0..n).map(|i| gv[i] * jac[i * m + k]).sum();
            gamma * cfg.dt * through_state - cfg.dt * cfg.mu * gamma * (w_next - 1.0) * dl[k]
        })
        .collect())
}

/// Per-sample Bellman residual `W(x) - H(x, W, policy(x))`.
pub fn bellman_residual(
    p: &dyn ControlProblem,
    critic: &dyn Critic,
    policy: &dyn Policy,
    xs: ArrayView2<'_, f64>,
    cfg: &SlOperatorConfig,
) -> Result<Vec<f64>> {
    if xs.nrows() == 0 {
        return Err(Error::Domain("Bellman residual of an empty batch".into()));
    }
    check_dim("state", p.state_dim(), xs.ncols())?;
    xs.rows()
        .into_iter()
        .map(|row| {
            let x = row.to_vec();
            let u = policy.control(&x);
            Ok(critic.value(&x) - sl_operator(p, critic, &x, &u, cfg)?)
        })
        .collect()
}

/// Summary of a residual vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub mean_abs: f64,
    pub max_abs: f64,
    pub rms: f64,
}

impl ResidualStats {
    pub fn from_residuals(r: &[f64]) -> Self {
        let n = r.len().max(1) as f64;
        Self {
            mean_abs: r.iter().map(|v| v.abs()).sum::<f64>() / n,
            max_abs: r.iter().fold(0.0, |m, v| m.max(v.abs())),
            rms: (r.iter().map(|v| v * v).sum::<f64>() / n).sqrt(),
        }
    }
}
