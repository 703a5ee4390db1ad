//! First-order optimizers and Polyak weight averaging.

use serde::{Deserialize, Serialize};

use super::WeightVector;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Adagrad,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    /// Defaults to 1e-8 for Adam and 1e-10 for Adagrad when absent.
    #[serde(default)]
    pub epsilon: Option<f64>,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: None,
        }
    }

    pub fn adagrad(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adagrad,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: None,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: None,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(match self.kind {
            OptimizerKind::Adagrad => 1e-10,
            _ => 1e-8,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon() > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step_count: u64,
    /// Adam first moment; empty for other kinds.
    pub first_moment: Vec<f64>,
    /// Adam second moment or Adagrad squared-gradient sum.
    pub second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, len: usize) -> Self {
        let (m, v) = match config.kind {
            OptimizerKind::Adam => (vec![0.0; len], vec![0.0; len]),
            OptimizerKind::Adagrad => (Vec::new(), vec![0.0; len]),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Self {
            config,
            step_count: 0,
            first_moment: m,
            second_moment: v,
        }
    }

    /// Applies one update in place. A gradient with non-finite entries is
    /// rejected and leaves both weights and state untouched; an update that
    /// overflows the weights is reported after the fact.
    pub fn step(&mut self, w: &mut WeightVector, g: &[f64]) -> Result<()> {
        check_dim("optimizer gradient", w.len(), g.len())?;
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {i} = {} at optimizer step {}",
                g[i], self.step_count
            )));
        }
        let lr = self.config.learning_rate;
        let eps = self.config.epsilon();
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (wi, gi) in w.iter_mut().zip(g) {
                    *wi -= lr * gi;
                }
            }
            OptimizerKind::Adagrad => {
                check_dim("optimizer state", w.len(), self.second_moment.len())?;
                for ((wi, gi), acc) in w.iter_mut().zip(g).zip(self.second_moment.iter_mut()) {
                    *acc += gi * gi;
                    *wi -= lr * gi / (acc.sqrt() + eps);
                }
            }
            OptimizerKind::Adam => {
                check_dim("optimizer state", w.len(), self.second_moment.len())?;
                let (b1, b2) = (self.config.beta1, self.config.beta2);
                let t = (self.step_count + 1) as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for (((wi, gi), m), v) in w
                    .iter_mut()
                    .zip(g)
                    .zip(self.first_moment.iter_mut())
                    .zip(self.second_moment.iter_mut())
                {
                    *m = b1 * *m + (1.0 - b1) * gi;
                    *v = b2 * *v + (1.0 - b2) * gi * gi;
                    let mhat = *m / c1;
                    let vhat = *v / c2;
                    *wi -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        self.step_count += 1;
        if !w.is_finite() {
            return Err(Error::NonFinite(format!("weights after optimizer step {}", self.step_count)));
        }
        Ok(())
    }
}

/// `alpha * w_new + (1 - alpha) * w_avg`.
///
/// `alpha = 0` means averaging is switched off and returns `w_new` unchanged;
/// the literal formula would freeze the average at its initial value.
pub fn polyak_average(w_avg: &WeightVector, w_new: &WeightVector, alpha: f64) -> Result<WeightVector> {
    check_dim("polyak average", w_avg.len(), w_new.len())?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("averaging coefficient {alpha} outside [0, 1]")));
    }
    if alpha == 0.0 || alpha == 1.0 {
        return Ok(w_new.clone());
    }
    Ok(WeightVector(
        w_avg
            .iter()
            .zip(w_new.iter())
            .map(|(a, n)| alpha * n + (1.0 - alpha) * a)
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_leaves_weights() {
        for cfg in [OptimizerConfig::adam(1e-3), OptimizerConfig::adagrad(1e-2), OptimizerConfig::sgd(0.1)] {
            let mut w = WeightVector(vec![0.5, -1.0, 2.0]);
            let before = w.clone();
            let mut st = OptimizerState::new(cfg, 3);
            st.step(&mut w, &[0.0; 3]).unwrap();
            assert_eq!(w, before);
            assert_eq!(st.step_count, 1);
        }
    }

    #[test]
    fn sgd_arithmetic() {
        let mut w = WeightVector(vec![1.0]);
        OptimizerState::new(OptimizerConfig::sgd(0.1), 1).step(&mut w, &[2.0]).unwrap();
        assert!((w[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let lr = 1e-3;
        let mut w = WeightVector(vec![0.0, 0.0, 0.0]);
        let g = [3.0, -0.02, 150.0];
        OptimizerState::new(OptimizerConfig::adam(lr), 3).step(&mut w, &g).unwrap();
        for (wi, gi) in w.iter().zip(g) {
            assert!((wi + lr * gi.signum()).abs() < 1e-9, "{wi}");
        }
    }

    #[test]
    fn adagrad_first_step_is_normalized() {
        let mut w = WeightVector(vec![0.0, 0.0]);
        OptimizerState::new(OptimizerConfig::adagrad(0.01), 2).step(&mut w, &[4.0, -1e-3]).unwrap();
        assert!((w[0] + 0.01).abs() < 1e-9);
        assert!((w[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut w = WeightVector(vec![1.0, 1.0]);
        let mut st = OptimizerState::new(OptimizerConfig::adam(0.1), 2);
        assert!(matches!(st.step(&mut w, &[1.0, f64::NAN]), Err(Error::NonFinite(_))));
        assert_eq!(w.0, vec![1.0, 1.0]);
        assert_eq!(st.step_count, 0);
        let mut st = OptimizerState::new(OptimizerConfig::sgd(1e300), 2);
        assert!(matches!(st.step(&mut w, &[1e10, 0.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn polyak_cases() {
        let a = WeightVector(vec![0.0]);
        let n = WeightVector(vec![1.0]);
        assert_eq!(polyak_average(&a, &n, 1.0).unwrap(), n);
        assert!((polyak_average(&a, &n, 0.1).unwrap()[0] - 0.1).abs() < 1e-15);
        assert_eq!(polyak_average(&a, &n, 0.0).unwrap(), n);
        assert!(polyak_average(&a, &WeightVector(vec![1.0, 2.0]), 0.5).is_err());
    }

    proptest! {
        #[test]
        fn polyak_contracts_toward_new(alpha in 0.001f64..=1.0, v in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..20)) {
            let avg = WeightVector(v.iter().map(|p| p.0).collect());
            let new = WeightVector(v.iter().map(|p| p.1).collect());
            let out = polyak_average(&avg, &new, alpha).unwrap();
            let d = |a: &WeightVector, b: &WeightVector| a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let lhs = d(&out, &new);
            let rhs = (1.0 - alpha) * d(&avg, &new);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs));
        }
    }
}
