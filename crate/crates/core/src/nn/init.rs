use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{validate_topology, Activation, LayerSpec, WeightVector};
use crate::error::Result;

/// Residual blocks start close to the identity map. A block initialized at
/// exactly zero never receives gradient through a ReLU (`relu'(0) = 0`), so
/// it gets a shrunken fan-in draw instead.
const RESIDUAL_SCALE: f64 = 0.1;

/// Fan-in scaled normal initialization with zero biases.
///
/// Tanh and identity layers use `std = 1/sqrt(fan_in)`, ReLU layers
/// `std = sqrt(2/fan_in)`.
pub fn init_weights(spec: &[LayerSpec], seed: u64) -> Result<WeightVector> {
    init_weights_scaled(spec, seed, 1.0)
}

/// As [`init_weights`] with every standard deviation multiplied by `scale`.
pub fn init_weights_scaled(spec: &[LayerSpec], seed: u64, scale: f64) -> Result<WeightVector> {
    let total = validate_topology(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Vec::with_capacity(total);
    for layer in spec {
        let fan_in = layer.in_width as f64;
        let mut std = match layer.activation {
            Activation::Relu => (2.0 / fan_in).sqrt(),
            Activation::Tanh | Activation::Identity => (1.0 / fan_in).sqrt(),
        };
        if layer.residual {
            std *= RESIDUAL_SCALE;
        }
        std *= scale;
        for _ in 0..layer.in_width * layer.out_width {
            let z: f64 = StandardNormal.sample(&mut rng);
            w.push(std * z);
        }
        w.extend(std::iter::repeat_n(0.0, layer.out_width));
    }
    Ok(WeightVector(w))
}
