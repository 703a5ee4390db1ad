use ndarray::Array2;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{uniform, ControlProblem};
use crate::error::{Error, Result};

/// Control-regularized Dubins vehicle: `x' = cos t, y' = sin t, t' = u`,
/// `|u| <= 6`, cost `1 + u^2 / 2`, target disk of radius 0.1 around the
/// origin in the plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DubinsParams {
    pub target_radius: f64,
    /// Outer radius of the sampled annulus; the inner radius is the target.
    pub outer_radius: f64,
    pub max_turn_rate: f64,
    /// Feed `(x, y, cos t, sin t)` to the networks instead of `(x, y, t)`.
    pub periodic_embedding: bool,
}

impl Default for DubinsParams {
    fn default() -> Self {
        Self {
            target_radius: 0.1,
            outer_radius: 4.0,
            max_turn_rate: 6.0,
            periodic_embedding: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dubins {
    params: DubinsParams,
    lower: [f64; 1],
    upper: [f64; 1],
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(t: f64) -> f64 {
    let w = (t + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

impl Dubins {
    pub fn new(params: DubinsParams) -> Result<Self> {
        if !(params.target_radius > 0.0 && params.outer_radius > params.target_radius && params.max_turn_rate > 0.0) {
            return Err(Error::Config(format!("invalid dubins parameters {params:?}")));
        }
        Ok(Self {
            lower: [-params.max_turn_rate],
            upper: [params.max_turn_rate],
            params,
        })
    }
}

impl ControlProblem for Dubins {
    fn name(&self) -> &str {
        "dubins"
    }
    fn state_dim(&self) -> usize {
        3
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn control_lower(&self) -> &[f64] {
        &self.lower
    }
    fn control_upper(&self) -> &[f64] {
        &self.upper
    }
    fn cost_upper_bound(&self) -> f64 {
        1.0 + 0.5 * self.params.max_turn_rate.powi(2)
    }

    fn dynamics(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let (s, c) = x[2].sin_cos();
        dx[0] = c;
        dx[1] = s;
        dx[2] = u[0];
    }

    fn running_cost(&self, _x: &[f64], u: &[f64]) -> f64 {
        1.0 + 0.5 * u[0] * u[0]
    }

    fn control_jacobian(&self, _x: &[f64], _u: &[f64], jac: &mut [f64]) {
        jac[0] = 0.0;
        jac[1] = 0.0;
        jac[2] = 1.0;
    }

    fn cost_control_gradient(&self, _x: &[f64], u: &[f64], grad: &mut [f64]) {
        grad[0] = u[0];
    }

    fn in_target(&self, x: &[f64]) -> bool {
        x[0] * x[0] + x[1] * x[1] <= self.params.target_radius.powi(2)
    }

    fn target_meets_cell(&self, center: &[f64], half: &[f64]) -> bool {
        // distance from the origin to the cell's (x, y) rectangle
        let dx = (center[0].abs() - half[0]).max(0.0);
        let dy = (center[1].abs() - half[1]).max(0.0);
        dx * dx + dy * dy <= self.params.target_radius.powi(2)
    }

    fn sample_domain(&self, rng: &mut dyn RngCore, n: usize) -> Array2<f64> {
        let (r0, r1) = (self.params.target_radius, self.params.outer_radius);
        let mut out = Array2::zeros((n, 3));
        let mut i = 0;
        while i < n {
            let r = uniform(rng, r0 * r0, r1 * r1).sqrt();
            if r <= r0 {
                continue;
            }
            let phi = uniform(rng, -PI, PI);
            out[[i, 0]] = r * phi.cos();
            out[[i, 1]] = r * phi.sin();
            out[[i, 2]] = uniform(rng, -PI, PI);
            if self.in_target(&[out[[i, 0]], out[[i, 1]]]) {
                continue;
            }
            i += 1;
        }
        out
    }

    fn sample_target(&self, rng: &mut dyn RngCore, n: usize) -> Array2<f64> {
        let r0 = self.params.target_radius;
        let mut out = Array2::zeros((n, 3));
        for i in 0..n {
            let r = r0 * uniform(rng, 0.0, 1.0).sqrt();
            let phi = uniform(rng, -PI, PI);
            out[[i, 0]] = r * phi.cos();
            out[[i, 1]] = r * phi.sin();
            out[[i, 2]] = uniform(rng, -PI, PI);
        }
        out
    }

    fn project_state(&self, x: &mut [f64]) {
        x[2] = wrap_angle(x[2]);
    }

    fn feature_dim(&self) -> usize {
        if self.params.periodic_embedding {
            4
        } else {
            3
        }
    }

    fn features(&self, x: &[f64], out: &mut [f64]) {
        let r = self.params.outer_radius;
        out[0] = x[0] / r;
        out[1] = x[1] / r;
        if self.params.periodic_embedding {
            let (s, c) = x[2].sin_cos();
            out[2] = c;
            out[3] = s;
        } else {
            out[2] = x[2] / PI;
        }
    }

    fn features_vjp(&self, x: &[f64], g_feat: &[f64], g_x: &mut [f64]) {
        let r = self.params.outer_radius;
        g_x[0] = g_feat[0] / r;
        g_x[1] = g_feat[1] / r;
        if self.params.periodic_embedding {
            let (s, c) = x[2].sin_cos();
            g_x[2] = -s * g_feat[2] + c * g_feat[3];
        } else {
            g_x[2] = g_feat[2] / PI;
        }
    }

    fn state_radius(&self, x: &[f64]) -> f64 {
        x[0].hypot(x[1])
    }

    fn domain_radius(&self) -> f64 {
        self.params.outer_radius
    }

    fn period(&self, dim: usize) -> Option<f64> {
        (dim == 2).then_some(2.0 * PI)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::{dynamics, running_cost};

    #[test]
    fn right_hand_side_and_cost() {
        let p = Dubins::new(Default::default()).unwrap();
        assert_eq!(dynamics(&p, &[0.0, 0.0, 0.0], &[1.0]).unwrap(), vec![1.0, 0.0, 1.0]);
        assert_eq!(running_cost(&p, &[0.0, 0.0, 0.0], &[6.0]).unwrap(), 19.0);
        assert_eq!(running_cost(&p, &[0.0, 0.0, 0.0], &[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn target_membership() {
        let p = Dubins::new(Default::default()).unwrap();
        for t in [-3.0, 0.0, 2.5] {
            assert!(p.in_target(&[0.05, 0.0, t]));
        }
        assert!(!p.in_target(&[0.2, 0.0, 0.0]));
    }

    #[test]
    fn wrap_into_half_open_interval() {
        assert_eq!(wrap_angle(PI), -PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(-7.0) - (-7.0 + 2.0 * PI)).abs() < 1e-12);
        let mut x = [0.0, 0.0, 4.0];
        p().project_state(&mut x);
        assert!(x[2] >= -PI && x[2] < PI);
    }

    fn p() -> Dubins {
        Dubins::new(Default::default()).unwrap()
    }
}
