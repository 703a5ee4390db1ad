//! Reference solutions on uniform grids.
//!
//! [`grid_value_iteration`] solves the transformed fixed point by Jacobi
//! sweeps over every node of a uniform tensor grid, reading the previous
//! table through multilinear interpolation. Successors that leave a
//! non-periodic axis are valued at 1 (never reaching the target), and nodes
//! whose cell touches the target are pinned to 0.

mod analytic;
pub mod io;

pub use analytic::{double_integrator_min_time, double_integrator_switching_curve};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::exec::{for_each_chunk_mut, ExecMode};
use crate::ocp::ControlProblem;
use crate::raster::Raster;
use crate::sl::{euler_raw, Critic, SlOperatorConfig};

/// One axis of a uniform grid.
///
/// A non-periodic axis has `nodes` points from `lo` to `hi` inclusive. A
/// periodic axis has `nodes` points from `lo` up to but excluding `hi`, and
/// wraps around.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
    #[serde(default)]
    pub periodic: bool,
}

impl GridAxis {
    pub fn new(lo: f64, hi: f64, nodes: usize) -> Self {
        Self {
            lo,
            hi,
            nodes,
            periodic: false,
        }
    }

    pub fn periodic(lo: f64, hi: f64, nodes: usize) -> Self {
        Self {
            lo,
            hi,
            nodes,
            periodic: true,
        }
    }

    pub fn spacing(&self) -> f64 {
        if self.periodic {
            (self.hi - self.lo) / self.nodes as f64
        } else {
            (self.hi - self.lo) / (self.nodes - 1) as f64
        }
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.spacing()
    }

    fn validate(&self) -> Result<()> {
        let min_nodes = if self.periodic { 3 } else { 2 };
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) || self.nodes < min_nodes {
            return Err(Error::Config(format!("invalid grid axis {self:?}")));
        }
        Ok(())
    }

    /// Lower cell index and fractional offset for coordinate `x`, or `None`
    /// outside a non-periodic axis.
    #[inline]
    fn locate(&self, x: f64) -> Option<(usize, usize, f64)> {
        let h = self.spacing();
        let t = (x - self.lo) / h;
        if self.periodic {
            let n = self.nodes as f64;
            let t = t.rem_euclid(n);
            let i0 = (t.floor() as usize).min(self.nodes - 1);
            let frac = t - i0 as f64;
            Some((i0, (i0 + 1) % self.nodes, frac))
        } else {
            let last = (self.nodes - 1) as f64;
            // tolerate round-off at the edges
            if !(t >= -1e-9 && t <= last + 1e-9) {
                return None;
            }
            let t = t.clamp(0.0, last);
            let i0 = (t.floor() as usize).min(self.nodes - 2);
            Some((i0, i0 + 1, t - i0 as f64))
        }
    }
}

/// A value table on a uniform grid, interpolated multilinearly.
#[derive(Debug, Clone, PartialEq)]
pub struct GridValueFunction {
    pub axes: Vec<GridAxis>,
    pub values: Vec<f64>,
    pub dt: f64,
    pub mu: f64,
    /// Control set the table was computed with.
    pub controls: Vec<Vec<f64>>,
}

/// Outcome of a grid solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSolveReport {
    pub sweeps: usize,
    pub final_change: f64,
    pub converged: bool,
    /// Sup-norm change of every sweep.
    pub changes: Vec<f64>,
    /// Largest pointwise increase seen in any sweep (0 for a monotone run).
    pub max_increase: f64,
    pub pinned_nodes: usize,
}

impl GridValueFunction {
    pub fn node_count(axes: &[GridAxis]) -> usize {
        axes.iter().map(|a| a.nodes).product()
    }

    fn strides(&self) -> Vec<usize> {
        strides(&self.axes)
    }

    /// Coordinates of node `flat`.
    pub fn node(&self, flat: usize) -> Vec<f64> {
        node_coords(&self.axes, flat)
    }

    pub fn value_at_node(&self, index: &[usize]) -> f64 {
        let st = self.strides();
        self.values[index.iter().zip(&st).map(|(i, s)| i * s).sum::<usize>()]
    }

    /// Multilinear interpolation; `None` outside a non-periodic axis.
    pub fn try_interpolate(&self, x: &[f64]) -> Option<f64> {
        interpolate(&self.axes, &self.strides(), &self.values, x)
    }

    /// Interpolated value with 1 outside the grid.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        self.try_interpolate(x).unwrap_or(1.0)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.axes.len() && self.axes.iter().zip(x).all(|(a, v)| a.periodic || a.locate(*v).is_some())
    }
}

fn strides(axes: &[GridAxis]) -> Vec<usize> {
    let mut st = vec![1; axes.len()];
    for d in (0..axes.len().saturating_sub(1)).rev() {
        st[d] = st[d + 1] * axes[d + 1].nodes;
    }
    st
}

fn node_coords(axes: &[GridAxis], mut flat: usize) -> Vec<f64> {
    let mut x = vec![0.0; axes.len()];
    for d in (0..axes.len()).rev() {
        let n = axes[d].nodes;
        x[d] = axes[d].coord(flat % n);
        flat /= n;
    }
    x
}

#[inline]
fn interpolate(axes: &[GridAxis], strides: &[usize], values: &[f64], x: &[f64]) -> Option<f64> {
    let d = axes.len();
    let mut lo = [0usize; 8];
    let mut hi = [0usize; 8];
    let mut fr = [0f64; 8];
    for k in 0..d {
        let (a, b, f) = axes[k].locate(x[k])?;
        lo[k] = a * strides[k];
        hi[k] = b * strides[k];
        fr[k] = f;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut idx = 0;
        for k in 0..d {
            if corner >> k & 1 == 1 {
                w *= fr[k];
                idx += hi[k];
            } else {
                w *= 1.0 - fr[k];
                idx += lo[k];
            }
        }
        if w != 0.0 {
            acc += w * values[idx];
        }
    }
    Some(acc)
}

impl Critic for GridValueFunction {
    fn value(&self, x: &[f64]) -> f64 {
        self.interpolate(x)
    }

    /// Gradient of the multilinear interpolant inside the containing cell.
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let st = self.strides();
        let d = self.axes.len();
        let mut cells = Vec::with_capacity(d);
        for k in 0..d {
            match self.axes[k].locate(x[k]) {
                Some(c) => cells.push(c),
                None => {
                    grad.fill(0.0);
                    return 1.0;
                }
            }
        }
        grad.fill(0.0);
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut idx = 0;
            let mut w = 1.0;
            for (k, &(a, b, f)) in cells.iter().enumerate() {
                if corner >> k & 1 == 1 {
                    idx += b * st[k];
                    w *= f;
                } else {
                    idx += a * st[k];
                    w *= 1.0 - f;
                }
            }
            let v = self.values[idx];
            acc += w * v;
            for (j, g) in grad.iter_mut().enumerate() {
                let mut dw = 1.0 / self.axes[j].spacing();
                for (k, &(_, _, f)) in cells.iter().enumerate() {
                    let on = corner >> k & 1 == 1;
                    if k == j {
                        if !on {
                            dw = -dw;
                        }
                    } else {
                        dw *= if on { f } else { 1.0 - f };
                    }
                }
                *g += dw * v;
            }
        }
        acc
    }
}

/// Checks axes and controls against the problem without solving.
pub fn validate_setup(p: &dyn ControlProblem, axes: &[GridAxis], controls: &[Vec<f64>]) -> Result<()> {
    check_dim("grid dimension", p.state_dim(), axes.len())?;
    if axes.len() > 3 {
        return Err(Error::Config("grid reference supports at most 3 dimensions".into()));
    }
    for (d, a) in axes.iter().enumerate() {
        a.validate()?;
        if a.periodic {
            match p.period(d) {
                Some(per) if ((a.hi - a.lo) - per).abs() < 1e-9 => {}
                _ => {
                    return Err(Error::Config(format!(
                        "axis {d} is periodic but does not span the problem's period"
                    )))
                }
            }
        }
    }
    if controls.len() < 2 {
        return Err(Error::Config("control set needs at least two samples".into()));
    }
    for u in controls {
        check_dim("control sample", p.control_dim(), u.len())?;
    }
    Ok(())
}

/// Pinned-node mask: nodes whose cell touches the target.
fn target_mask(p: &dyn ControlProblem, axes: &[GridAxis]) -> Vec<bool> {
    let half: Vec<f64> = axes.iter().map(|a| 0.5 * a.spacing()).collect();
    (0..GridValueFunction::node_count(axes))
        .map(|i| p.target_meets_cell(&node_coords(axes, i), &half))
        .collect()
}

/// Jacobi value iteration for the transformed fixed point, started from the
/// supersolution `W = 1`.
pub fn grid_value_iteration(
    p: &dyn ControlProblem,
    axes: &[GridAxis],
    controls: &[Vec<f64>],
    cfg: &SlOperatorConfig,
    tol: f64,
    max_sweeps: usize,
    mode: ExecMode,
) -> Result<(GridValueFunction, GridSolveReport)> {
    cfg.validate()?;
    validate_setup(p, axes, controls)?;
    if max_sweeps == 0 {
        return Err(Error::Config("max_sweeps must be at least 1".into()));
    }
    if !(tol >= 0.0) {
        return Err(Error::Config(format!("tolerance must be nonnegative, got {tol}")));
    }
    let n = GridValueFunction::node_count(axes);
    let pinned = target_mask(p, axes);
    let pinned_nodes = pinned.iter().filter(|&&b| b).count();
    if pinned_nodes == 0 {
        return Err(Error::Config("no grid node touches the target".into()));
    }
    let st = strides(axes);
    let sdim = p.state_dim();

    // Discount and successor per (node, control) do not change across sweeps.
    let stencil_len = controls.len() * (sdim + 1);
    let mut stencil = vec![0.0; n * stencil_len];
    for_each_chunk_mut(mode, &mut stencil, 1024 * stencil_len, |start, chunk| {
        let mut next = vec![0.0; sdim];
        for (j, node_chunk) in chunk.chunks_mut(stencil_len).enumerate() {
            let x = node_coords(axes, start / stencil_len + j);
            for (c, u) in controls.iter().enumerate() {
                euler_raw(p, &x, u, cfg.dt, &mut next);
                p.project_state(&mut next);
                let entry = &mut node_chunk[c * (sdim + 1)..(c + 1) * (sdim + 1)];
                entry[0] = (-cfg.dt * cfg.mu * p.running_cost(&x, u)).exp();
                entry[1..].copy_from_slice(&next);
            }
        }
    });

    let mut values: Vec<f64> = pinned.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect();
    let mut next = vec![0.0; n];
    let mut changes = Vec::new();
    let mut max_increase = 0.0f64;
    let mut converged = false;
    for _ in 0..max_sweeps {
        let prev = &values;
        for_each_chunk_mut(mode, &mut next, 4096, |start, out| {
            for (j, o) in out.iter_mut().enumerate() {
                let i = start + j;
                if pinned[i] {
                    *o = 0.0;
                    continue;
                }
                let entries = &stencil[i * stencil_len..(i + 1) * stencil_len];
                let mut best = f64::INFINITY;
                for e in entries.chunks(sdim + 1) {
                    let w = interpolate(axes, &st, prev, &e[1..]).unwrap_or(1.0);
                    let h = 1.0 + e[0] * (w - 1.0);
                    if h < best {
                        best = h;
                    }
                }
                *o = best;
            }
        });
        let mut change = 0.0f64;
        for (a, b) in next.iter().zip(values.iter()) {
            change = change.max((a - b).abs());
            max_increase = max_increase.max(a - b);
        }
        std::mem::swap(&mut values, &mut next);
        changes.push(change);
        if change <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "grid value iteration stopped after {max_sweeps} sweeps with change {:e}",
            changes.last().copied().unwrap_or(f64::NAN)
        );
    }
    let report = GridSolveReport {
        sweeps: changes.len(),
        final_change: *changes.last().unwrap(),
        converged,
        changes,
        max_increase,
        pinned_nodes,
    };
    Ok((
        GridValueFunction {
            axes: axes.to_vec(),
            values,
            dt: cfg.dt,
            mu: cfg.mu,
            controls: controls.to_vec(),
        },
        report,
    ))
}

/// Minimizing control of the one-step problem at `x` read off the table.
/// Ties (within 1e-12) go to the smallest control norm, then the
/// lexicographically smallest control.
pub fn grid_policy(p: &dyn ControlProblem, gvf: &GridValueFunction, x: &[f64], controls: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_dim("state", p.state_dim(), x.len())?;
    if !gvf.contains(x) {
        return Err(Error::Domain(format!("state {x:?} outside the grid")));
    }
    if controls.is_empty() {
        return Err(Error::Config("empty control set".into()));
    }
    let cfg = SlOperatorConfig {
        dt: gvf.dt,
        mu: gvf.mu,
    };
    let mut next = vec![0.0; x.len()];
    let mut scored: Vec<(f64, &Vec<f64>)> = controls
        .iter()
        .map(|u| {
            euler_raw(p, x, u, cfg.dt, &mut next);
            p.project_state(&mut next);
            let gamma = (-cfg.dt * cfg.mu * p.running_cost(x, u)).exp();
            (1.0 + gamma * (gvf.interpolate(&next) - 1.0), u)
        })
        .collect();
    let best = scored.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    scored.retain(|s| s.0 <= best + 1e-12);
    scored.sort_by(|a, b| control_order(a.1, b.1));
    Ok(scored[0].1.clone())
}

/// Feedback read off a grid table with its own control set. Unlike
/// [`grid_policy`] it accepts states off the grid, treating their
/// successors like any other out-of-grid point.
pub struct GridPolicy<'a> {
    pub problem: &'a dyn ControlProblem,
    pub table: &'a GridValueFunction,
}

impl crate::policy::Policy for GridPolicy<'_> {
    fn control(&self, x: &[f64]) -> Vec<f64> {
        let p = self.problem;
        let mut next = vec![0.0; x.len()];
        let mut best: Option<(f64, &Vec<f64>)> = None;
        for u in &self.table.controls {
            euler_raw(p, x, u, self.table.dt, &mut next);
            p.project_state(&mut next);
            let gamma = (-self.table.dt * self.table.mu * p.running_cost(x, u)).exp();
            let h = 1.0 + gamma * (self.table.interpolate(&next) - 1.0);
            let better = match best {
                None => true,
                Some((b, bu)) => h < b - 1e-12 || (h <= b + 1e-12 && control_order(u, bu).is_lt()),
            };
            if better {
                best = Some((h, u));
            }
        }
        best.map(|b| b.1.clone()).unwrap_or_else(|| vec![0.0; p.control_dim()])
    }
}

/// Smaller norm first, then lexicographic.
fn control_order(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    let norm = |u: &[f64]| u.iter().map(|v| v * v).sum::<f64>();
    norm(a)
        .total_cmp(&norm(b))
        .then_with(|| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
}

/// Which coordinates a 2D slice spans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSpec {
    /// The two free dimensions, in (horizontal, vertical) order.
    pub free: [usize; 2],
    /// Values of the remaining dimensions, as `(dim, value)`.
    #[serde(default)]
    pub fixed: Vec<(usize, f64)>,
    pub resolution: [usize; 2],
}

impl SliceSpec {
    /// Full state for a raster point.
    pub fn state(&self, dim: usize, a: f64, b: f64) -> Vec<f64> {
        let mut x = vec![0.0; dim];
        for &(d, v) in &self.fixed {
            x[d] = v;
        }
        x[self.free[0]] = a;
        x[self.free[1]] = b;
        x
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let mut seen = vec![false; dim];
        for d in self.free.iter().copied().chain(self.fixed.iter().map(|f| f.0)) {
            if d >= dim || seen[d] {
                return Err(Error::Config(format!("bad slice dimension {d} for a {dim}-dimensional state")));
            }
            seen[d] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config("slice must fix every non-free dimension".into()));
        }
        if self.resolution.iter().any(|&r| r < 2) {
            return Err(Error::Config("slice resolution must be at least 2".into()));
        }
        Ok(())
    }
}

/// Coordinates of `res` raster points along `axis`.
pub fn axis_samples(axis: &GridAxis, res: usize) -> Vec<f64> {
    if axis.periodic {
        (0..res).map(|i| axis.lo + (axis.hi - axis.lo) * i as f64 / res as f64).collect()
    } else {
        (0..res).map(|i| axis.lo + (axis.hi - axis.lo) * i as f64 / (res - 1) as f64).collect()
    }
}

/// Interpolated values over a 2D slice. With `untransformed` the raster holds
/// `-ln(1 - W) / mu` instead of `W`.
pub fn sample_grid_slice(gvf: &GridValueFunction, slice: &SliceSpec, untransformed: bool) -> Result<Raster> {
    let dim = gvf.axes.len();
    slice.validate(dim)?;
    let xs = axis_samples(&gvf.axes[slice.free[0]], slice.resolution[0]);
    let ys = axis_samples(&gvf.axes[slice.free[1]], slice.resolution[1]);
    let mut values = Vec::with_capacity(xs.len() * ys.len());
    for &b in &ys {
        for &a in &xs {
            let w = gvf.interpolate(&slice.state(dim, a, b));
            values.push(if untransformed {
                crate::sl::kruzkov_inverse(w.clamp(0.0, 1.0))? / gvf.mu
            } else {
                w
            });
        }
    }
    Ok(Raster {
        x_label: format!("x{}", slice.free[0]),
        y_label: format!("x{}", slice.free[1]),
        value_label: if untransformed { "cost_to_go".into() } else { "transformed_value".into() },
        xs,
        ys,
        values,
    })
}
