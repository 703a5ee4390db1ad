//! Network checkpoint files.
//!
//! A checkpoint is a single JSON document:
//!
//! ```text
//! {
//!   "magic": "slac-network",
//!   "version": 1,
//!   "layers": [{"in_width": 2, "out_width": 128, "activation": "tanh", "residual": false}, ...],
//!   "output_bounds": {"lower": [-1.0], "upper": [1.0]} | null,
//!   "weights": [ ... ]
//! }
//! ```
//!
//! Weights are stored in the flat layer-major layout of [`Network`]. Floats
//! are written in shortest round-trip form, so loading reproduces the weights
//! bit for bit.

use serde::{Deserialize, Serialize};
use std::path::Path;

use super::{LayerSpec, Network, OutputBounds, WeightVector};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const NETWORK_MAGIC: &str = "slac-network";
pub const NETWORK_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    magic: String,
    version: u32,
    layers: Vec<LayerSpec>,
    output_bounds: Option<OutputBounds>,
    weights: WeightVector,
}

pub fn to_json(net: &Network) -> Result<String> {
    let file = NetworkFile {
        magic: NETWORK_MAGIC.into(),
        version: NETWORK_VERSION,
        layers: net.layers().to_vec(),
        output_bounds: net.output_bounds().cloned(),
        weights: net.weights().clone(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn from_json(text: &str) -> Result<Network> {
    let file: NetworkFile = serde_json::from_str(text)?;
    if file.magic != NETWORK_MAGIC {
        return Err(Error::Format(format!("not a network file (magic {:?})", file.magic)));
    }
    if file.version != NETWORK_VERSION {
        return Err(Error::Format(format!("unsupported network file version {}", file.version)));
    }
    Network::new(file.layers, file.weights, file.output_bounds)
}

pub fn save_network(path: &Path, net: &Network) -> Result<()> {
    write_atomic(path, to_json(net)?.as_bytes())
}

pub fn load_network(path: &Path) -> Result<Network> {
    from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{mlp_spec, Activation};

    #[test]
    fn round_trip_is_exact() {
        let bounds = OutputBounds::symmetric(6.0, 1).unwrap();
        let net = Network::initialized(mlp_spec(4, 8, 2, 1, Activation::Relu), 3, Some(bounds)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        save_network(&p, &net).unwrap();
        assert_eq!(load_network(&p).unwrap(), net);
    }

    #[test]
    fn rejects_wrong_magic() {
        let net = Network::initialized(mlp_spec(1, 2, 1, 1, Activation::Tanh), 0, None).unwrap();
        let text = to_json(&net).unwrap().replace(NETWORK_MAGIC, "other");
        assert!(matches!(from_json(&text), Err(Error::Format(_))));
    }
}
