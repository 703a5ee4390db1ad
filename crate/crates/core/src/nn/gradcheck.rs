//! Central-difference checks of analytic gradients.
//!
//! Errors are relative to the size of the analytic gradient: a coordinate
//! error is divided by the sup-norm of the gradient, and a directional
//! error along a unit vector by its 2-norm.
//!
//! Piecewise-linear activations have kinks. When the two one-sided
//! differences of a stencil disagree by more than [`KINK_TOL`] of the
//! gradient scale, the stencil straddles a kink, central differences are no
//! oracle there, and the instance is skipped and counted as such. The same
//! happens when rounding noise in the differences (about `eps |f| / h`) is
//! that large relative to the gradient, as for gradients close to zero.

use ndarray::ArrayView2;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Network, WeightVector};
use crate::error::Result;
use crate::ocp::ControlProblem;
use crate::sl::{sl_operator, sl_operator_control_gradient, Critic, SlOperatorConfig};

/// An undetected kink biases a central difference by at most half this, relative.
pub const KINK_TOL: f64 = 1e-5;

/// Worst relative errors over a batch of instances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// Instances checked.
    pub instances: usize,
    /// Instances dropped because a stencil crossed a kink.
    pub skipped: usize,
    pub weight: f64,
    pub input: f64,
}

/// Central difference from `f(+h)`, `f(0)`, `f(-h)`, or `None` across a
/// kink or below the rounding floor.
fn central(fp: f64, f0: f64, fm: f64, h: f64, scale: f64) -> Option<f64> {
    let fwd = (fp - f0) / h;
    let bwd = (f0 - fm) / h;
    let noise = 2.0 * f64::EPSILON * fp.abs().max(f0.abs()).max(fm.abs()) / h;
    let limit = KINK_TOL * scale;
    ((fwd - bwd).abs() <= limit && 2.0 * noise <= limit).then(|| (fp - fm) / (2.0 * h))
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Relative error of `g` against `fd`, scaled by the larger sup-norm.
pub fn relative_error(g: &[f64], fd: &[f64]) -> f64 {
    let scale = sup(g).max(sup(fd));
    if scale == 0.0 {
        return 0.0;
    }
    g.iter().zip(fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks `weight_gradient` and `input_gradient` of `net` at every row of
/// `xs` with a random output cotangent. Per row the weight gradient is
/// checked along one random unit direction and at `coords` random
/// coordinates; the input gradient is checked in full.
pub fn check_network(net: &Network, xs: ArrayView2<'_, f64>, coords: usize, h: f64, rng: &mut dyn RngCore) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::default();
    let n = net.param_count();
    let w0 = net.weights().clone();
    let probe = |w: &WeightVector, x: &[f64], up: &[f64]| -> Result<f64> { Ok(dot(&net.with_weights(w.clone())?.forward(x)?, up)) };
    'rows: for row in xs.rows() {
        let x = row.to_vec();
        let up: Vec<f64> = (0..net.output_dim()).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let f0 = dot(&net.forward(&x)?, &up);
        let g = net.weight_gradient(&x, &up)?;
        let (gnorm, gsup) = (g.norm(), sup(&g));
        let mut worst_w = 0.0f64;

        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        let shifted = |s: f64| WeightVector(w0.iter().zip(&v).map(|(w, d)| w + s * d).collect());
        let Some(fd) = central(probe(&shifted(h), &x, &up)?, f0, probe(&shifted(-h), &x, &up)?, h, gnorm) else {
            report.skipped += 1;
            continue;
        };
        if gnorm > 0.0 {
            worst_w = worst_w.max((dot(&g, &v) - fd).abs() / gnorm);
        }

        for _ in 0..coords {
            let i = rng.random_range(0..n);
            let mut wp = w0.clone();
            let mut wm = w0.clone();
            wp[i] += h;
            wm[i] -= h;
            let Some(fd) = central(probe(&wp, &x, &up)?, f0, probe(&wm, &x, &up)?, h, gsup) else {
                report.skipped += 1;
                continue 'rows;
            };
            if gsup > 0.0 {
                worst_w = worst_w.max((g[i] - fd).abs() / gsup);
            }
        }

        let gi = net.input_gradient(&x, &up)?;
        let isup = sup(&gi);
        let mut fdi = Vec::with_capacity(x.len());
        for k in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            match central(dot(&net.forward(&xp)?, &up), f0, dot(&net.forward(&xm)?, &up), h, isup) {
                Some(d) => fdi.push(d),
                None => {
                    report.skipped += 1;
                    continue 'rows;
                }
            }
        }
        report.weight = report.weight.max(worst_w);
        report.input = report.input.max(relative_error(&gi, &fdi));
        report.instances += 1;
    }
    Ok(report)
}

/// Worst relative error of `sl_operator_control_gradient` over the pairs
/// `(xs[i], us[i])`, and the number of pairs checked (kinks skipped).
pub fn check_control_gradient(
    p: &dyn ControlProblem,
    critic: &dyn Critic,
    xs: ArrayView2<'_, f64>,
    us: ArrayView2<'_, f64>,
    cfg: &SlOperatorConfig,
    h: f64,
) -> Result<(f64, usize)> {
    let mut worst = 0.0f64;
    let mut checked = 0;
    'pairs: for (x, u) in xs.rows().into_iter().zip(us.rows()) {
        let (x, u) = (x.to_vec(), u.to_vec());
        let g = sl_operator_control_gradient(p, critic, &x, &u, cfg)?;
        let f0 = sl_operator(p, critic, &x, &u, cfg)?;
        let mut fd = Vec::with_capacity(u.len());
        for k in 0..u.len() {
            let mut up = u.clone();
            let mut um = u.clone();
            up[k] += h;
            um[k] -= h;
            let fp = sl_operator(p, critic, &x, &up, cfg)?;
            let fm = sl_operator(p, critic, &x, &um, cfg)?;
            match central(fp, f0, fm, h, sup(&g)) {
                Some(d) => fd.push(d),
                None => continue 'pairs,
            }
        }
        worst = worst.max(relative_error(&g, &fd));
        checked += 1;
    }
    Ok((worst, checked))
}
