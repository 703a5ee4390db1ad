//! Closed-loop simulation under a feedback law.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::exec::{map_items, ExecMode};
use crate::fsutil::write_atomic;
use crate::ocp::ControlProblem;
use crate::policy::Policy;
use crate::raster::Raster;
use crate::sl::euler_raw;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    TargetReached,
    MaxTimeExceeded,
    DomainExited,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutConfig {
    pub dt: f64,
    pub t_max: f64,
    /// Exit is flagged beyond `domain_margin` times the domain radius.
    #[serde(default = "default_margin")]
    pub domain_margin: f64,
    /// When false the run continues through the target to `t_max`, which is
    /// how settling is judged.
    #[serde(default = "default_true")]
    pub stop_at_target: bool,
}

fn default_margin() -> f64 {
    2.0
}
fn default_true() -> bool {
    true
}

impl RolloutConfig {
    pub fn new(dt: f64, t_max: f64) -> Self {
        Self {
            dt,
            t_max,
            domain_margin: default_margin(),
            stop_at_target: true,
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("rollout dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max.is_finite() && self.steps() >= 10) {
            return Err(Error::Config(format!(
                "t_max = {} allows fewer than 10 steps of {}",
                self.t_max, self.dt
            )));
        }
        if !(self.domain_margin > 0.0) {
            return Err(Error::Config("domain_margin must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// One fewer than `states`.
    pub controls: Vec<Vec<f64>>,
    /// Running cost accumulated up to each state.
    pub cumulative_cost: Vec<f64>,
    pub accumulated_cost: f64,
    /// Whether the target was entered at any time.
    pub reached_target: bool,
    pub exit_reason: ExitReason,
}

impl Trajectory {
    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// States in the trailing `fraction` of the run, at least one.
    pub fn trailing(&self, fraction: f64) -> &[Vec<f64>] {
        let n = self.states.len();
        let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
        &self.states[n - k..]
    }

    /// Delimited table `t, x..., u..., cost` with metadata lines.
    pub fn to_csv(&self, p: &dyn ControlProblem, metadata: &[(&str, String)]) -> String {
        let mut s = String::new();
        for (k, v) in metadata {
            let _ = writeln!(s, "# {k}: {v}");
        }
        let _ = writeln!(s, "# exit_reason: {:?}", self.exit_reason);
        let _ = writeln!(s, "# units: time s, cost running-cost integral");
        let mut header = vec!["t".to_string()];
        header.extend((0..p.state_dim()).map(|i| format!("x{i}")));
        header.extend((0..p.control_dim()).map(|i| format!("u{i}")));
        header.push("cost".into());
        let _ = writeln!(s, "{}", header.join(","));
        for (k, x) in self.states.iter().enumerate() {
            let mut row = vec![self.times[k].to_string()];
            row.extend(x.iter().map(f64::to_string));
            match self.controls.get(k) {
                Some(u) => row.extend(u.iter().map(f64::to_string)),
                None => row.extend(std::iter::repeat_n(String::new(), p.control_dim())),
            }
            row.push(self.cumulative_cost[k].to_string());
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }
}

/// Euler integration with zero-order-hold control. Dynamical outcomes are
/// reported through [`ExitReason`]; errors are reserved for bad inputs and
/// policies that leave the control box.
pub fn simulate(p: &dyn ControlProblem, policy: &dyn Policy, x0: &[f64], cfg: &RolloutConfig) -> Result<Trajectory> {
    cfg.validate()?;
    check_dim("initial state", p.state_dim(), x0.len())?;
    let mut x = x0.to_vec();
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x.clone()],
        controls: Vec::new(),
        cumulative_cost: vec![0.0],
        accumulated_cost: 0.0,
        reached_target: p.in_target(&x),
        exit_reason: ExitReason::MaxTimeExceeded,
    };
    if traj.reached_target && cfg.stop_at_target {
        traj.exit_reason = ExitReason::TargetReached;
        return Ok(traj);
    }
    let limit = cfg.domain_margin * p.domain_radius();
    let (lo, hi) = (p.control_lower(), p.control_upper());
    let mut next = vec![0.0; x.len()];
    for k in 1..=cfg.steps() {
        let u = policy.control(&x);
        check_dim("policy output", p.control_dim(), u.len())?;
        if let Some(i) = (0..u.len()).find(|&i| !(u[i] >= lo[i] - 1e-12 && u[i] <= hi[i] + 1e-12)) {
            return Err(Error::Domain(format!(
                "policy control {} = {} outside [{}, {}] at state {x:?}",
                i, u[i], lo[i], hi[i]
            )));
        }
        let cost = cfg.dt * p.running_cost(&x, &u);
        euler_raw(p, &x, &u, cfg.dt, &mut next);
        p.project_state(&mut next);
        traj.controls.push(u);
        if !(next.iter().all(|v| v.is_finite()) && cost.is_finite()) {
            traj.exit_reason = ExitReason::NumericalFailure;
            // the failed state is not recorded; drop its control
            traj.controls.pop();
            return Ok(traj);
        }
        traj.accumulated_cost += cost;
        std::mem::swap(&mut x, &mut next);
        traj.times.push(k as f64 * cfg.dt);
        traj.states.push(x.clone());
        traj.cumulative_cost.push(traj.accumulated_cost);
        if p.state_radius(&x) > limit {
            traj.exit_reason = ExitReason::DomainExited;
            return Ok(traj);
        }
        if p.in_target(&x) {
            traj.reached_target = true;
            if cfg.stop_at_target {
                traj.exit_reason = ExitReason::TargetReached;
                return Ok(traj);
            }
        }
    }
    if !cfg.stop_at_target && p.in_target(&x) {
        traj.exit_reason = ExitReason::TargetReached;
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlingSummary {
    pub tolerance: f64,
    /// Fraction of runs whose trailing attitude norm stays within tolerance.
    pub settled_fraction: f64,
    pub worst_attitude: f64,
    pub worst_rate: f64,
    /// Per run: largest trailing attitude and rate norms.
    pub per_run: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub runs: usize,
    pub successes: usize,
    pub success_fraction: f64,
    /// Among successful runs.
    pub cost_mean: Option<f64>,
    pub cost_max: Option<f64>,
    pub exit_counts: Vec<(ExitReason, usize)>,
    pub settling: Option<SettlingSummary>,
}

/// Fraction of the run counted as steady state.
pub const TRAILING_FRACTION: f64 = 0.1;

/// Simulates every initial state independently.
pub fn ensemble(
    p: &dyn ControlProblem,
    policy: &dyn Policy,
    x0s: &[Vec<f64>],
    cfg: &RolloutConfig,
    settle_tolerance: f64,
    mode: ExecMode,
) -> Result<(Vec<Trajectory>, EnsembleSummary)> {
    cfg.validate()?;
    let trajs = map_items(mode, x0s, |x0| simulate(p, policy, x0, cfg)).into_iter().collect::<Result<Vec<_>>>()?;
    let summary = summarize(p, &trajs, settle_tolerance);
    Ok((trajs, summary))
}

pub fn summarize(p: &dyn ControlProblem, trajs: &[Trajectory], settle_tolerance: f64) -> EnsembleSummary {
    let ok: Vec<&Trajectory> = trajs.iter().filter(|t| t.reached_target).collect();
    let costs: Vec<f64> = ok.iter().map(|t| t.accumulated_cost).collect();
    let exit_counts = [
        ExitReason::TargetReached,
        ExitReason::MaxTimeExceeded,
        ExitReason::DomainExited,
        ExitReason::NumericalFailure,
    ]
    .into_iter()
    .map(|r| (r, trajs.iter().filter(|t| t.exit_reason == r).count()))
    .collect();
    let settling = trajs.first().and_then(|t| p.settling_norms(&t.states[0])).map(|_| {
        let per_run: Vec<(f64, f64)> = trajs
            .iter()
            .map(|t| {
                t.trailing(TRAILING_FRACTION).iter().fold((0.0f64, 0.0f64), |(a, r), x| {
                    let (qa, qr) = p.settling_norms(x).unwrap();
                    (a.max(qa), r.max(qr))
                })
            })
            .collect();
        let settled = per_run.iter().filter(|v| v.0 <= settle_tolerance).count();
        SettlingSummary {
            tolerance: settle_tolerance,
            settled_fraction: settled as f64 / per_run.len() as f64,
            worst_attitude: per_run.iter().fold(0.0, |m, v| m.max(v.0)),
            worst_rate: per_run.iter().fold(0.0, |m, v| m.max(v.1)),
            per_run,
        }
    });
    EnsembleSummary {
        runs: trajs.len(),
        successes: ok.len(),
        success_fraction: if trajs.is_empty() { 0.0 } else { ok.len() as f64 / trajs.len() as f64 },
        cost_mean: (!costs.is_empty()).then(|| costs.iter().sum::<f64>() / costs.len() as f64),
        cost_max: costs.iter().copied().reduce(f64::max),
        exit_counts,
        settling,
    }
}

/// A rectangular lattice over two state coordinates, other coordinates
/// held fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lattice2 {
    pub free: [usize; 2],
    #[serde(default)]
    pub fixed: Vec<(usize, f64)>,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub resolution: [usize; 2],
}

impl Lattice2 {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let spec = crate::grid::SliceSpec {
            free: self.free,
            fixed: self.fixed.clone(),
            resolution: self.resolution,
        };
        spec.validate(dim)?;
        if !(self.x_range[0] < self.x_range[1] && self.y_range[0] < self.y_range[1]) {
            return Err(Error::Config("lattice ranges must be increasing".into()));
        }
        Ok(())
    }

    fn coords(range: [f64; 2], n: usize) -> Vec<f64> {
        (0..n).map(|i| range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64).collect()
    }

    pub fn xs(&self) -> Vec<f64> {
        Self::coords(self.x_range, self.resolution[0])
    }

    pub fn ys(&self) -> Vec<f64> {
        Self::coords(self.y_range, self.resolution[1])
    }

    pub fn state(&self, dim: usize, a: f64, b: f64) -> Vec<f64> {
        let mut x = vec![0.0; dim];
        for &(d, v) in &self.fixed {
            x[d] = v;
        }
        x[self.free[0]] = a;
        x[self.free[1]] = b;
        x
    }

    /// Evaluates `f` at every lattice point, rows over `y`.
    pub fn raster(&self, dim: usize, value_label: &str, mode: ExecMode, f: impl Fn(&[f64]) -> f64 + Sync) -> Result<Raster> {
        self.validate(dim)?;
        let xs = self.xs();
        let ys = self.ys();
        let points: Vec<(f64, f64)> = ys.iter().flat_map(|&b| xs.iter().map(move |&a| (a, b))).collect();
        let values = map_items(mode, &points, |&(a, b)| f(&self.state(dim, a, b)));
        Ok(Raster {
            x_label: format!("x{}", self.free[0]),
            y_label: format!("x{}", self.free[1]),
            value_label: value_label.into(),
            xs,
            ys,
            values,
        })
    }
}

/// Control component `component` of `policy` over a lattice.
pub fn switching_surface_raster(
    p: &dyn ControlProblem,
    policy: &dyn Policy,
    lattice: &Lattice2,
    component: usize,
    mode: ExecMode,
) -> Result<Raster> {
    if component >= p.control_dim() {
        return Err(Error::Config(format!("control component {component} out of range")));
    }
    lattice.raster(p.state_dim(), &format!("u{component}"), mode, |x| policy.control(x)[component])
}

/// Points `(x, y)` on the double-integrator switching curve for overlays.
pub fn switching_curve_points(y_range: [f64; 2], n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let y = y_range[0] + (y_range[1] - y_range[0]) * i as f64 / (n.max(2) - 1) as f64;
            (crate::grid::double_integrator_switching_curve(y), y)
        })
        .collect()
}

pub fn write_trajectory_csv(path: &Path, p: &dyn ControlProblem, t: &Trajectory, metadata: &[(&str, String)]) -> Result<()> {
    write_atomic(path, t.to_csv(p, metadata).as_bytes())
}
