//! Free-terminal-time optimal control problems.
//!
//! A problem supplies dynamics `x' = f(x, u)`, a running cost `l(x, u) >= 1`,
//! a control box, a target set, and samplers for the computational domain
//! and the target. Costs are minimized until the state first enters the
//! target.

mod double_integrator;
mod dubins;
mod trace;

pub use double_integrator::{DoubleIntegrator, DoubleIntegratorParams};
pub use dubins::{Dubins, DubinsParams};
pub use trace::{euler_to_quaternion, quaternion_to_euler, TraceAttitude, TraceParams, TRACE_INERTIA};

use ndarray::Array2;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::fmt::Debug;
use std::sync::Arc;

use crate::error::{check_dim, check_finite, Error, Result};

/// Interface every control problem implements.
///
/// The methods here are unchecked: slices are assumed to have the right
/// lengths. The free functions in this module ([`dynamics`],
/// [`running_cost`], ...) validate their inputs first.
pub trait ControlProblem: Send + Sync + Debug {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn control_lower(&self) -> &[f64];
    fn control_upper(&self) -> &[f64];

    /// Upper bound `M` on the running cost over the domain and control box.
    fn cost_upper_bound(&self) -> f64;

    fn dynamics(&self, x: &[f64], u: &[f64], dx: &mut [f64]);
    fn running_cost(&self, x: &[f64], u: &[f64]) -> f64;

    /// `df/du`, row-major `state_dim x control_dim`.
    fn control_jacobian(&self, x: &[f64], u: &[f64], jac: &mut [f64]);

    /// `dl/du`.
    fn cost_control_gradient(&self, x: &[f64], u: &[f64], grad: &mut [f64]);

    fn in_target(&self, x: &[f64]) -> bool;

    /// Whether the target meets the axis-aligned box `center +- half`.
    /// Used to pin grid nodes whose cell touches the target.
    fn target_meets_cell(&self, center: &[f64], _half: &[f64]) -> bool {
        self.in_target(center)
    }

    /// `n` states drawn from the domain, none inside the target.
    fn sample_domain(&self, rng: &mut dyn RngCore, n: usize) -> Array2<f64>;

    /// `n` states drawn from the target set.
    fn sample_target(&self, rng: &mut dyn RngCore, n: usize) -> Array2<f64>;

    /// Maps a state back onto its manifold (angle wrap, unit quaternion).
    fn project_state(&self, _x: &mut [f64]) {}

    /// Replaces `g` with `J_P(x_raw)^T g`, where `J_P` is the Jacobian of
    /// [`ControlProblem::project_state`] at the unprojected state.
    fn project_vjp(&self, _x_raw: &[f64], _g: &mut [f64]) {}

    /// Width of the network input embedding.
    fn feature_dim(&self) -> usize {
        self.state_dim()
    }

    /// Network input embedding of a state.
    fn features(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }

    /// Pulls a feature cotangent back to a state cotangent.
    fn features_vjp(&self, _x: &[f64], g_feat: &[f64], g_x: &mut [f64]) {
        g_x.copy_from_slice(g_feat);
    }

    /// Size of the state in the units of [`ControlProblem::domain_radius`].
    fn state_radius(&self, x: &[f64]) -> f64;

    /// Radius of the computational domain, used for domain-exit detection.
    fn domain_radius(&self) -> f64;

    /// Period of coordinate `dim`, if it is an angle.
    fn period(&self, _dim: usize) -> Option<f64> {
        None
    }

    /// `(attitude, rate)` sup-norms used to judge settling, for problems
    /// where holding near the target matters more than arrival.
    fn settling_norms(&self, _x: &[f64]) -> Option<(f64, f64)> {
        None
    }
}

/// Problem selection as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ProblemSpec {
    DoubleIntegrator(DoubleIntegratorParams),
    Dubins(DubinsParams),
    Trace(TraceParams),
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Arc<dyn ControlProblem>> {
        Ok(match self {
            ProblemSpec::DoubleIntegrator(p) => Arc::new(DoubleIntegrator::new(p.clone())?),
            ProblemSpec::Dubins(p) => Arc::new(Dubins::new(p.clone())?),
            ProblemSpec::Trace(p) => Arc::new(TraceAttitude::new(p.clone())?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::DoubleIntegrator(_) => "double_integrator",
            ProblemSpec::Dubins(_) => "dubins",
            ProblemSpec::Trace(_) => "trace",
        }
    }
}

fn check_state(p: &dyn ControlProblem, x: &[f64]) -> Result<()> {
    check_dim("state", p.state_dim(), x.len())?;
    check_finite("state", x)
}

fn check_control(p: &dyn ControlProblem, u: &[f64]) -> Result<()> {
    check_dim("control", p.control_dim(), u.len())?;
    check_finite("control", u)
}

/// Whether `u` lies in the control box, with absolute slack `tol`.
pub fn control_admissible(p: &dyn ControlProblem, u: &[f64], tol: f64) -> bool {
    u.iter()
        .zip(p.control_lower().iter().zip(p.control_upper()))
        .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
}

pub fn dynamics(p: &dyn ControlProblem, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    check_state(p, x)?;
    check_control(p, u)?;
    let mut dx = vec![0.0; p.state_dim()];
    p.dynamics(x, u, &mut dx);
    Ok(dx)
}

pub fn running_cost(p: &dyn ControlProblem, x: &[f64], u: &[f64]) -> Result<f64> {
    check_state(p, x)?;
    check_control(p, u)?;
    Ok(p.running_cost(x, u))
}

pub fn control_jacobian(p: &dyn ControlProblem, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    check_state(p, x)?;
    check_control(p, u)?;
    let mut j = vec![0.0; p.state_dim() * p.control_dim()];
    p.control_jacobian(x, u, &mut j);
    Ok(j)
}

pub fn cost_control_gradient(p: &dyn ControlProblem, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    check_state(p, x)?;
    check_control(p, u)?;
    let mut g = vec![0.0; p.control_dim()];
    p.cost_control_gradient(x, u, &mut g);
    Ok(g)
}

pub fn in_target(p: &dyn ControlProblem, x: &[f64]) -> Result<bool> {
    check_dim("state", p.state_dim(), x.len())?;
    Ok(p.in_target(x))
}

/// Network input embedding for a batch of states.
pub fn features_batch(p: &dyn ControlProblem, xs: ndarray::ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros((xs.nrows(), p.feature_dim()));
    for (x, mut f) in xs.rows().into_iter().zip(out.rows_mut()) {
        p.features(x.as_slice().unwrap_or(&x.to_vec()), f.as_slice_mut().unwrap());
    }
    out
}

/// Uniform lattice over the control box with `per_dim` samples per axis.
pub fn control_lattice(p: &dyn ControlProblem, per_dim: usize) -> Result<Vec<Vec<f64>>> {
    if per_dim < 2 {
        return Err(Error::Config(format!(
            "control lattice needs at least 2 samples per dimension, got {per_dim}"
        )));
    }
    let m = p.control_dim();
    let axes: Vec<Vec<f64>> = (0..m)
        .map(|d| {
            let (lo, hi) = (p.control_lower()[d], p.control_upper()[d]);
            (0..per_dim)
                .map(|i| lo + (hi - lo) * i as f64 / (per_dim - 1) as f64)
                .collect()
        })
        .collect();
    let mut out = vec![Vec::with_capacity(m)];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |v| {
                    let mut u = prefix.clone();
                    u.push(*v);
                    u
                })
            })
            .collect();
    }
    Ok(out)
}

pub(crate) fn uniform(rng: &mut dyn RngCore, lo: f64, hi: f64) -> f64 {
    use rand::Rng;
    lo + (hi - lo) * rng.random::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn all_problems() -> Vec<Arc<dyn ControlProblem>> {
        vec![
            Arc::new(DoubleIntegrator::new(DoubleIntegratorParams::default()).unwrap()),
            Arc::new(Dubins::new(DubinsParams::default()).unwrap()),
            Arc::new(Dubins::new(DubinsParams {
                periodic_embedding: false,
                ..Default::default()
            })
            .unwrap()),
            Arc::new(TraceAttitude::new(TraceParams::default()).unwrap()),
        ]
    }

    fn random_control(p: &dyn ControlProblem, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..p.control_dim())
            .map(|d| uniform(rng, p.control_lower()[d], p.control_upper()[d]))
            .collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn control_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for p in all_problems() {
            let (n, m) = (p.state_dim(), p.control_dim());
            let xs = p.sample_domain(&mut rng, 100);
            for x in xs.rows() {
                let x = x.to_vec();
                let u = random_control(p.as_ref(), &mut rng);
                let jac = control_jacobian(p.as_ref(), &x, &u).unwrap();
                let grad = cost_control_gradient(p.as_ref(), &x, &u).unwrap();
                let h = 1e-6;
                for k in 0..m {
                    let mut up = u.clone();
                    let mut dn = u.clone();
                    up[k] += h;
                    dn[k] -= h;
                    let fp = dynamics(p.as_ref(), &x, &up).unwrap();
                    let fm = dynamics(p.as_ref(), &x, &dn).unwrap();
                    for i in 0..n {
                        let fd = (fp[i] - fm[i]) / (2.0 * h);
                        assert!(rel_err(fd, jac[i * m + k]) <= 1e-6, "{} df{i}/du{k}", p.name());
                    }
                    let lp = p.running_cost(&x, &up);
                    let lm = p.running_cost(&x, &dn);
                    assert!(rel_err((lp - lm) / (2.0 * h), grad[k]) <= 1e-6, "{} dl/du", p.name());
                }
            }
        }
    }

    #[test]
    fn running_cost_at_least_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for p in all_problems() {
            let xs = p.sample_domain(&mut rng, 100_000);
            for x in xs.rows() {
                let u = random_control(p.as_ref(), &mut rng);
                let l = p.running_cost(x.as_slice().unwrap(), &u);
                assert!(l >= 1.0 && l <= p.cost_upper_bound(), "{} l = {l}", p.name());
            }
        }
    }

    #[test]
    fn samplers_respect_membership() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in all_problems() {
            for x in p.sample_domain(&mut rng, 2000).rows() {
                assert!(!p.in_target(x.as_slice().unwrap()), "{}", p.name());
            }
            for x in p.sample_target(&mut rng, 200).rows() {
                assert!(p.in_target(x.as_slice().unwrap()), "{} {x}", p.name());
            }
        }
    }

    #[test]
    fn samplers_are_seeded() {
        for p in all_problems() {
            let a = p.sample_domain(&mut ChaCha8Rng::seed_from_u64(3), 10);
            let b = p.sample_domain(&mut ChaCha8Rng::seed_from_u64(3), 10);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn feature_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for p in all_problems() {
            let (n, k) = (p.state_dim(), p.feature_dim());
            for x in p.sample_domain(&mut rng, 20).rows() {
                let x = x.to_vec();
                let gf: Vec<f64> = (0..k).map(|i| (i as f64 * 0.37).sin()).collect();
                let mut gx = vec![0.0; n];
                p.features_vjp(&x, &gf, &mut gx);
                for i in 0..n {
                    let h = 1e-6;
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    let mut fp = vec![0.0; k];
                    let mut fm = vec![0.0; k];
                    p.features(&xp, &mut fp);
                    p.features(&xm, &mut fm);
                    let fd: f64 = (0..k).map(|j| gf[j] * (fp[j] - fm[j]) / (2.0 * h)).sum();
                    assert!(rel_err(fd, gx[i]) < 1e-6, "{}", p.name());
                }
            }
        }
    }

    #[test]
    fn checked_wrappers_reject_bad_input() {
        let p = DoubleIntegrator::new(Default::default()).unwrap();
        assert!(matches!(dynamics(&p, &[1.0], &[0.0]), Err(Error::Dimension { .. })));
        assert!(matches!(dynamics(&p, &[1.0, f64::NAN], &[0.0]), Err(Error::NonFinite(_))));
        assert!(running_cost(&p, &[1.0, 2.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn control_lattice_shapes() {
        let di = DoubleIntegrator::new(Default::default()).unwrap();
        assert_eq!(control_lattice(&di, 3).unwrap(), vec![vec![-1.0], vec![0.0], vec![1.0]]);
        let tr = TraceAttitude::new(Default::default()).unwrap();
        assert_eq!(control_lattice(&tr, 2).unwrap().len(), 8);
        assert!(control_lattice(&di, 1).is_err());
    }

    #[test]
    fn spec_parses_by_name() {
        let spec: ProblemSpec = toml::from_str("name = \"dubins\"\nouter_radius = 3.0\n").unwrap();
        match &spec {
            ProblemSpec::Dubins(d) => assert_eq!(d.outer_radius, 3.0),
            _ => panic!(),
        }
        assert_eq!(spec.build().unwrap().name(), "dubins");
        assert!(toml::from_str::<ProblemSpec>("name = \"dubins\"\nouter_radus = 3.0\n").is_err());
        assert!(toml::from_str::<ProblemSpec>("name = \"pendulum\"\n").is_err());
    }
}
