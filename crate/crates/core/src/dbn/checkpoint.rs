use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::layer::{LayerKind, RbmLayer};
use super::train::{DbnModel, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    kind: LayerKind,
    visible: usize,
    hidden: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    layers: Vec<LayerEntry>,
    train: Vec<TrainConfig>,
    seed: u64,
}

pub(crate) fn write_f32(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(|v| (v as f32).to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_f32(path: &Path, expected: usize) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::PayloadLength {
            expected: expected * 4,
            found: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Writes `manifest.json` plus `layer<i>_{W,b,c,z}.bin` (z for GB layers only)
/// as little-endian binary32, row-major.
pub fn save_dbn(model: &DbnModel, train: &[TrainConfig], seed: u64, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        layers: model
            .layers
            .iter()
            .map(|l| LayerEntry {
                kind: l.kind,
                visible: l.visible_dim(),
                hidden: l.hidden_dim(),
            })
            .collect(),
        train: train.to_vec(),
        seed,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    for (i, l) in model.layers.iter().enumerate() {
        write_f32(&dir.join(format!("layer{i}_W.bin")), l.weights.iter().copied())?;
        write_f32(&dir.join(format!("layer{i}_b.bin")), l.visible_bias.iter().copied())?;
        write_f32(&dir.join(format!("layer{i}_c.bin")), l.hidden_bias.iter().copied())?;
        if l.kind == LayerKind::GaussianBernoulli {
            write_f32(&dir.join(format!("layer{i}_z.bin")), l.log_sigma.iter().copied())?;
        }
    }
    Ok(())
}

pub fn load_dbn(dir: &Path) -> Result<DbnModel> {
    let path = dir.join("manifest.json");
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Header {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, entry) in manifest.layers.iter().enumerate() {
        let (v, h) = (entry.visible, entry.hidden);
        let weights = Array2::from_shape_vec((v, h), read_f32(&dir.join(format!("layer{i}_W.bin")), v * h)?)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let visible_bias = Array1::from(read_f32(&dir.join(format!("layer{i}_b.bin")), v)?);
        let hidden_bias = Array1::from(read_f32(&dir.join(format!("layer{i}_c.bin")), h)?);
        let log_sigma = match entry.kind {
            LayerKind::GaussianBernoulli => Array1::from(read_f32(&dir.join(format!("layer{i}_z.bin")), v)?),
            LayerKind::BernoulliBernoulli => Array1::zeros(v),
        };
        layers.push(RbmLayer {
            kind: entry.kind,
            weights,
            visible_bias,
            hidden_bias,
            log_sigma,
        });
    }
    DbnModel::new(layers)
}
