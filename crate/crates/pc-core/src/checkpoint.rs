//! Versioned checkpoint container for [`PCNetwork`].
//!
//! A single JSON document holding dims, row-major 64-bit weights, variances,
//! the prior, the activation tag, and a format-version integer.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{PcError, Result};
use crate::model::PCNetwork;
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    dims: Vec<usize>,
    activation: String,
    output_identity: bool,
    /// Row-major, one flat vector per Θ_ℓ (ℓ = 1..L).
    weights: Vec<Vec<f64>>,
    /// One variance diagonal per layer 0..=L.
    variances: Vec<Vec<f64>>,
    prior_mean: Vec<f64>,
}

/// Write the network to `path`.
pub fn save<F: Scalar>(net: &PCNetwork<F>, path: &Path) -> Result<()> {
    let top = net.top();
    let file = CheckpointFile {
        version: FORMAT_VERSION,
        dims: net.dims().to_vec(),
        activation: net.activation().tag().to_string(),
        output_identity: net.output_identity(),
        weights: (1..=top)
            .map(|l| net.weight(l).iter().map(|v| v.as_f64()).collect())
            .collect(),
        variances: (0..=top)
            .map(|l| net.variance(l).iter().map(|v| v.as_f64()).collect())
            .collect(),
        prior_mean: net.prior_mean().iter().map(|v| v.as_f64()).collect(),
    };
    let writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer(writer, &file)
        .map_err(|e| PcError::Checkpoint(format!("write failed: {e}")))
}

/// Read a network back from `path`.
pub fn load<F: Scalar>(path: &Path) -> Result<PCNetwork<F>> {
    let reader = BufReader::new(File::open(path)?);
    let file: CheckpointFile = serde_json::from_reader(reader)
        .map_err(|e| PcError::Checkpoint(format!("parse failed: {e}")))?;
    if file.version != FORMAT_VERSION {
        return Err(PcError::Checkpoint(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            file.version
        )));
    }
    let activation = Activation::from_tag(&file.activation)
        .ok_or_else(|| PcError::Checkpoint(format!("unknown activation {:?}", file.activation)))?;
    let mut net = PCNetwork::new(file.dims.clone(), activation)?;
    net.set_output_identity(file.output_identity);
    let top = net.top();
    if file.weights.len() != top || file.variances.len() != top + 1 {
        return Err(PcError::Checkpoint("layer count mismatch".into()));
    }
    for (l, flat) in file.weights.iter().enumerate() {
        let shape = (file.dims[l], file.dims[l + 1]);
        let w = Array2::from_shape_vec(shape, flat.iter().map(|&v| F::c(v)).collect())
            .map_err(|e| PcError::Checkpoint(format!("weight shape: {e}")))?;
        net.set_weight(l + 1, w)?;
    }
    for (l, var) in file.variances.iter().enumerate() {
        net.set_variance(l, Array1::from_iter(var.iter().map(|&v| F::c(v))))?;
    }
    net.set_prior_mean(Array1::from_iter(file.prior_mean.iter().map(|&v| F::c(v))))?;
    Ok(net)
}
