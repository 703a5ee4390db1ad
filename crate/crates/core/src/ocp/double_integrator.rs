use ndarray::Array2;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{uniform, ControlProblem};
use crate::error::{Error, Result};

/// Minimum-time double integrator `x' = y, y' = u`, `|u| <= 1`, steered to
/// the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DoubleIntegratorParams {
    /// Radius of the ball sampled for training.
    pub radius: f64,
    /// Distance from the origin counted as arrival during rollouts.
    pub target_tolerance: f64,
}

impl Default for DoubleIntegratorParams {
    fn default() -> Self {
        Self {
            radius: 5.0,
            target_tolerance: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DoubleIntegrator {
    params: DoubleIntegratorParams,
}

const LOWER: [f64; 1] = [-1.0];
const UPPER: [f64; 1] = [1.0];

impl DoubleIntegrator {
    pub fn new(params: DoubleIntegratorParams) -> Result<Self> {
        if !(params.radius > 0.0) || !(params.target_tolerance >= 0.0) || params.target_tolerance >= params.radius {
            return Err(Error::Config(format!("invalid double integrator parameters {params:?}")));
        }
        Ok(Self { params })
    }
}

impl ControlProblem for DoubleIntegrator {
    fn name(&self) -> &str {
        "double_integrator"
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn control_lower(&self) -> &[f64] {
        &LOWER
    }
    fn control_upper(&self) -> &[f64] {
        &UPPER
    }
    fn cost_upper_bound(&self) -> f64 {
        1.0
    }

    fn dynamics(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = u[0];
    }

    fn running_cost(&self, _x: &[f64], _u: &[f64]) -> f64 {
        1.0
    }

    fn control_jacobian(&self, _x: &[f64], _u: &[f64], jac: &mut [f64]) {
        jac[0] = 0.0;
        jac[1] = 1.0;
    }

    fn cost_control_gradient(&self, _x: &[f64], _u: &[f64], grad: &mut [f64]) {
        grad[0] = 0.0;
    }

    fn in_target(&self, x: &[f64]) -> bool {
        x[0].hypot(x[1]) <= self.params.target_tolerance
    }

    fn target_meets_cell(&self, center: &[f64], half: &[f64]) -> bool {
        (center[0].abs() <= half[0] && center[1].abs() <= half[1]) || self.in_target(center)
    }

    fn sample_domain(&self, rng: &mut dyn RngCore, n: usize) -> Array2<f64> {
        let r = self.params.radius;
        let mut out = Array2::zeros((n, 2));
        let mut i = 0;
        while i < n {
            let (a, b) = (uniform(rng, -r, r), uniform(rng, -r, r));
            if a.hypot(b) <= r && !self.in_target(&[a, b]) {
                out[[i, 0]] = a;
                out[[i, 1]] = b;
                i += 1;
            }
        }
        out
    }

    /// The target is the origin itself.
    fn sample_target(&self, _rng: &mut dyn RngCore, n: usize) -> Array2<f64> {
        Array2::zeros((n, 2))
    }

    fn features(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0] / self.params.radius;
        out[1] = x[1] / self.params.radius;
    }

    fn features_vjp(&self, _x: &[f64], g_feat: &[f64], g_x: &mut [f64]) {
        g_x[0] = g_feat[0] / self.params.radius;
        g_x[1] = g_feat[1] / self.params.radius;
    }

    fn state_radius(&self, x: &[f64]) -> f64 {
        x[0].hypot(x[1])
    }

    fn domain_radius(&self) -> f64 {
        self.params.radius
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::{dynamics, running_cost};
    use rand::SeedableRng;

    #[test]
    fn right_hand_side() {
        let p = DoubleIntegrator::new(Default::default()).unwrap();
        assert_eq!(dynamics(&p, &[1.0, 2.0], &[0.5]).unwrap(), vec![2.0, 0.5]);
        assert_eq!(running_cost(&p, &[3.0, -1.0], &[-0.2]).unwrap(), 1.0);
    }

    #[test]
    fn target_membership() {
        let p = DoubleIntegrator::new(Default::default()).unwrap();
        assert!(p.in_target(&[0.0, 0.0]));
        assert!(!p.in_target(&[0.1, 0.0]));
    }

    #[test]
    fn sampling() {
        let p = DoubleIntegrator::new(Default::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let xs = p.sample_domain(&mut rng, 1000);
        assert!(xs.rows().into_iter().all(|r| r[0].hypot(r[1]) <= 5.0 && (r[0], r[1]) != (0.0, 0.0)));
        assert_eq!(p.sample_target(&mut rng, 1), ndarray::arr2(&[[0.0, 0.0]]));
    }
}
