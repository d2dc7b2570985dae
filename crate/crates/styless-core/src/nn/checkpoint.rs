//! The SLCK checkpoint format.
//!
//! Layout: magic `SLCK`, u32 version, u32 header length, JSON header
//! (architecture descriptor + training metadata), then each parameter tensor
//! as little-endian f64 in layer order. Parameter bytes are exact, so a
//! load reproduces forward outputs bit-identically.

use super::{ArchName, Layer, LayerSpec, Model};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes: expected SLCK")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("malformed header: {0}")]
    BadHeader(#[from] serde_json::Error),
    #[error("parameter blob truncated")]
    Truncated,
    #[error("header is inconsistent: {0}")]
    Inconsistent(String),
}

/// Provenance of a trained checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub dataset_id: String,
    pub seed: u64,
    pub epochs: usize,
    pub final_accuracy: f64,
}

impl Default for TrainingMeta {
    fn default() -> Self {
        TrainingMeta {
            dataset_id: "untrained".into(),
            seed: 0,
            epochs: 0,
            final_accuracy: 0.0,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchName,
    layers: Vec<LayerSpec>,
    split_index: usize,
    num_classes: usize,
    input_shape: (usize, usize, usize),
    param_shapes: Vec<Vec<Vec<usize>>>,
    metadata: TrainingMeta,
}

pub fn save_checkpoint(model: &Model, meta: &TrainingMeta, path: &Path) -> Result<(), CheckpointError> {
    let header = Header {
        arch: model.arch(),
        layers: model.layers().iter().map(|l| l.spec).collect(),
        split_index: model.split_index(),
        num_classes: model.num_classes(),
        input_shape: model.input_shape(),
        param_shapes: model
            .layers()
            .iter()
            .map(|l| l.params.iter().map(|p| p.shape().to_vec()).collect())
            .collect(),
        metadata: meta.clone(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for layer in model.layers() {
        for param in &layer.params {
            for &v in param.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, TrainingMeta), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    r.read_exact(&mut u32buf)?;
    let header_len = u32::from_le_bytes(u32buf) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;

    if header.param_shapes.len() != header.layers.len() {
        return Err(CheckpointError::Inconsistent(
            "param shape table does not match layer count".into(),
        ));
    }

    let mut layers = Vec::with_capacity(header.layers.len());
    for (spec, shapes) in header.layers.iter().zip(&header.param_shapes) {
        let mut params = Vec::with_capacity(shapes.len());
        for shape in shapes {
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)
                .map_err(|_| CheckpointError::Truncated)?;
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            params.push(
                Tensor::new(data, shape.clone())
                    .map_err(|e| CheckpointError::Inconsistent(e.to_string()))?,
            );
        }
        layers.push(Layer {
            spec: *spec,
            params,
        });
    }

    let model = Model::from_parts(
        header.arch,
        layers,
        header.split_index,
        header.num_classes,
        header.input_shape,
    )
    .map_err(|e| CheckpointError::Inconsistent(e.to_string()))?;
    Ok((model, header.metadata))
}
