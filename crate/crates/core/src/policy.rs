//! Feedback laws `x -> u`.

use ndarray::ArrayView2;

use crate::error::{check_dim, Result};
use crate::nn::Network;
use crate::ocp::ControlProblem;

pub trait Policy: Sync {
    fn control(&self, x: &[f64]) -> Vec<f64>;
}

/// Actor network evaluated on the problem's input embedding.
pub struct NeuralPolicy<'a> {
    pub net: &'a Network,
    pub problem: &'a dyn ControlProblem,
}

impl<'a> NeuralPolicy<'a> {
    pub fn new(net: &'a Network, problem: &'a dyn ControlProblem) -> Result<Self> {
        check_dim("actor input", problem.feature_dim(), net.input_dim())?;
        check_dim("actor output", problem.control_dim(), net.output_dim())?;
        Ok(Self { net, problem })
    }
}

impl Policy for NeuralPolicy<'_> {
    fn control(&self, x: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; self.problem.feature_dim()];
        self.problem.features(x, &mut f);
        let view = ArrayView2::from_shape((1, f.len()), &f).unwrap();
        self.net.forward_plain(view).into_raw_vec_and_offset().0
    }
}

/// A policy given by a closure.
pub struct FnPolicy<F>(pub F);

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn control(&self, x: &[f64]) -> Vec<f64> {
        (self.0)(x)
    }
}

/// Time-optimal bang-bang law of the double integrator: `u = -1` right of
/// the switching curve `x = -y|y|/2`, `u = +1` left of it, and `-sign(y)`
/// on the curve.
pub fn double_integrator_bang_bang(x: &[f64]) -> Vec<f64> {
    let s = x[0] + 0.5 * x[1] * x[1].abs();
    let u = if s > 0.0 {
        -1.0
    } else if s < 0.0 {
        1.0
    } else if x[1] > 0.0 {
        -1.0
    } else if x[1] < 0.0 {
        1.0
    } else {
        0.0
    };
    vec![u]
}
