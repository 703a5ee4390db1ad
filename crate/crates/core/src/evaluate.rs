//! Accuracy measures for trained networks.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_items, ExecMode};
use crate::grid::{double_integrator_min_time, double_integrator_switching_curve};
use crate::nn::Network;
use crate::ocp::ControlProblem;
use crate::policy::{NeuralPolicy, Policy};
use crate::sl::{bellman_residual, kruzkov, Critic, NeuralCritic, ResidualStats, SlOperatorConfig};

/// `n` points uniform in the centered disk of `radius`, from a fixed seed.
pub fn uniform_disk_points(n: usize, radius: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n, 2));
    let mut i = 0;
    while i < n {
        let x = rng.random_range(-radius..=radius);
        let y = rng.random_range(-radius..=radius);
        if x.hypot(y) <= radius {
            out[[i, 0]] = x;
            out[[i, 1]] = y;
            i += 1;
        }
    }
    out
}

/// Transformed double-integrator value `1 - exp(-t*)`.
pub fn double_integrator_reference(x: &[f64]) -> f64 {
    kruzkov(double_integrator_min_time(x[0], x[1])).unwrap_or(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub points: usize,
    pub mse: f64,
    pub max_abs: f64,
}

/// Error of `critic` against `reference` over the rows of `xs`.
pub fn critic_error(critic: &dyn Critic, reference: &(dyn Fn(&[f64]) -> f64 + Sync), xs: &Array2<f64>, mode: ExecMode) -> Result<ErrorStats> {
    if xs.nrows() == 0 {
        return Err(Error::Domain("no test points".into()));
    }
    let rows: Vec<Vec<f64>> = xs.rows().into_iter().map(|r| r.to_vec()).collect();
    let errs = map_items(mode, &rows, |x| critic.value(x) - reference(x));
    Ok(ErrorStats {
        points: errs.len(),
        mse: errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64,
        max_abs: errs.iter().fold(0.0, |m, e| m.max(e.abs())),
    })
}

/// Bellman residual of a trained pair on `xs`, with the actor as the
/// minimizer.
pub fn residual_stats(
    p: &dyn ControlProblem,
    critic: &Network,
    actor: &Network,
    xs: &Array2<f64>,
    op: &SlOperatorConfig,
) -> Result<ResidualStats> {
    let c = NeuralCritic::new(critic, p)?;
    let a = NeuralPolicy::new(actor, p)?;
    Ok(ResidualStats::from_residuals(&bellman_residual(p, &c, &a, xs.view(), op)?))
}

/// Distance from `(x, y)` to the double-integrator switching curve.
pub fn distance_to_switching_curve(x: f64, y: f64) -> f64 {
    // coarse scan then golden-section refinement on the best bracket
    let d2 = |t: f64| {
        let cx = double_integrator_switching_curve(t);
        (cx - x).powi(2) + (t - y).powi(2)
    };
    let span = 2.0 * (x.abs().sqrt() + y.abs()) + 1.0;
    let n = 400;
    let h = 2.0 * span / n as f64;
    let best = (0..=n).map(|i| -span + i as f64 * h).min_by(|a, b| d2(*a).total_cmp(&d2(*b))).unwrap();
    let (mut a, mut b) = (best - h, best + h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if d2(c) < d2(d) {
            b = d;
        } else {
            a = c;
        }
    }
    d2(0.5 * (a + b)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignAgreement {
    pub points: usize,
    pub agreeing: usize,
    pub fraction: f64,
}

/// Fraction of lattice points in the disk of `radius`, farther than `margin`
/// from the switching curve, where the sign of `policy` matches the
/// bang-bang law.
pub fn double_integrator_sign_agreement(policy: &dyn Policy, radius: f64, per_axis: usize, margin: f64, mode: ExecMode) -> SignAgreement {
    let coord = |i: usize| -radius + 2.0 * radius * i as f64 / (per_axis - 1) as f64;
    let pts: Vec<[f64; 2]> = (0..per_axis)
        .flat_map(|j| (0..per_axis).map(move |i| [coord(i), coord(j)]))
        .filter(|p| p[0].hypot(p[1]) <= radius && distance_to_switching_curve(p[0], p[1]) > margin)
        .collect();
    let agree = map_items(mode, &pts, |p| {
        let want = crate::policy::double_integrator_bang_bang(p)[0];
        let got = policy.control(p)[0];
        got.signum() == want.signum()
    });
    let agreeing = agree.iter().filter(|&&b| b).count();
    SignAgreement {
        points: pts.len(),
        agreeing,
        fraction: agreeing as f64 / pts.len().max(1) as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{double_integrator_bang_bang, FnPolicy};
    use crate::sl::FnCritic;

    #[test]
    fn disk_points() {
        let a = uniform_disk_points(3200, 5.0, 7);
        assert_eq!(a.nrows(), 3200);
        assert!(a.rows().into_iter().all(|r| r[0].hypot(r[1]) <= 5.0));
        assert_eq!(a, uniform_disk_points(3200, 5.0, 7));
    }

    #[test]
    fn exact_reference_has_zero_error() {
        let xs = uniform_disk_points(500, 5.0, 1);
        let c = FnCritic {
            value: double_integrator_reference,
            gradient: |_: &[f64], g: &mut [f64]| g.fill(0.0),
        };
        let e = critic_error(&c, &double_integrator_reference, &xs, ExecMode::Parallel).unwrap();
        assert_eq!(e.mse, 0.0);
    }

    #[test]
    fn curve_distance() {
        assert!(distance_to_switching_curve(0.0, 0.0) < 1e-9);
        assert!(distance_to_switching_curve(-0.5, 1.0) < 1e-9);
        // (1, 0): nearest point of x = -y|y|/2 is the origin-side branch
        let brute = (0..200_001)
            .map(|i| {
                let y = -3.0 + 6.0 * i as f64 / 200_000.0;
                (double_integrator_switching_curve(y) - 1.0).hypot(y)
            })
            .fold(f64::INFINITY, f64::min);
        assert!((distance_to_switching_curve(1.0, 0.0) - brute).abs() < 1e-6);
    }

    #[test]
    fn bang_bang_agrees_with_itself() {
        let s = double_integrator_sign_agreement(&FnPolicy(double_integrator_bang_bang), 5.0, 41, 0.2, ExecMode::Sequential);
        assert_eq!(s.fraction, 1.0);
        let flipped = double_integrator_sign_agreement(&FnPolicy(|x: &[f64]| vec![-double_integrator_bang_bang(x)[0]]), 5.0, 41, 0.2, ExecMode::Sequential);
        assert_eq!(flipped.agreeing, 0);
    }
}
