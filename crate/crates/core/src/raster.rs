use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fsutil::write_atomic;

/// Values sampled on a 2D tensor raster, stored row by row (`ys` outer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    pub x_label: String,
    pub y_label: String,
    pub value_label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<f64>,
}

impl Raster {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.xs.len() + i]
    }

    /// CSV with `# key: value` metadata lines ahead of the header row.
    pub fn to_csv(&self, metadata: &[(&str, String)]) -> String {
        let mut s = String::new();
        for (k, v) in metadata {
            let _ = writeln!(s, "# {k}: {v}");
        }
        let _ = writeln!(s, "{},{},{}", self.x_label, self.y_label, self.value_label);
        for (j, y) in self.ys.iter().enumerate() {
            for (i, x) in self.xs.iter().enumerate() {
                let _ = writeln!(s, "{x},{y},{}", self.value(i, j));
            }
        }
        s
    }

    pub fn write_csv(&self, path: &Path, metadata: &[(&str, String)]) -> Result<()> {
        write_atomic(path, self.to_csv(metadata).as_bytes())
    }
}
