//! Trained-model container.
//!
//! Layout: `b"KDBS"`, `u32` format version, `u64` header length, a JSON
//! header, then the `f64` arrays listed in the header in order, all
//! little-endian. Feature maps are not stored; they are redrawn from the
//! kernel config (bandwidth and seed) saved in the header.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelConfig;
use crate::labels::LabelVector;
use crate::solver::Encoder;
use crate::trainer::{HistoryRecord, TrainConfig, TrainedModel};

pub const MAGIC: &[u8; 4] = b"KDBS";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 16;

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    input_dim: usize,
    kernel_i: KernelConfig,
    kernel_t: Option<KernelConfig>,
    history: Vec<HistoryRecord>,
    yhat: LabelVector,
    shat: LabelVector,
    rows: Vec<usize>,
    arrays: Vec<ArrayEntry>,
}

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

fn row(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(ndarray::Axis(0))
}

pub fn encode_model(model: &TrainedModel) -> Result<Vec<u8>> {
    let mut arrays: Vec<(&str, Array2<f64>)> = vec![
        ("theta_i", model.encoder_i.theta.clone()),
        ("offset_i", row(&model.encoder_i.offset)),
    ];
    if let Some(t) = &model.encoder_t {
        arrays.push(("theta_t", t.theta.clone()));
        arrays.push(("offset_t", row(&t.offset)));
    }
    arrays.push(("class_codes", model.class_codes.clone()));
    let header = Header {
        config: model.config,
        input_dim: model.encoder_i.input_dim,
        kernel_i: model.encoder_i.kernel,
        kernel_t: model.encoder_t.as_ref().map(|t| t.kernel),
        history: model.history.clone(),
        yhat: model.yhat.clone(),
        shat: model.shat.clone(),
        rows: model.rows.clone(),
        arrays: arrays
            .iter()
            .map(|(name, a)| ArrayEntry {
                name: name.to_string(),
                rows: a.nrows(),
                cols: a.ncols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|source| Error::Json {
        path: "<model header>".into(),
        source,
    })?;
    let payload: usize = arrays.iter().map(|(_, a)| a.len() * 8).sum();
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, a) in &arrays {
        for v in a.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<TrainedModel> {
    if bytes.len() < PREAMBLE {
        return Err(format_err(path, bytes.len(), "file ends inside the model header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(path, 0, "not a model file (missing KDBS magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = PREAMBLE as u64 + header_len;
    if (bytes.len() as u64) < header_end {
        return Err(format_err(
            path,
            bytes.len(),
            format!("header declares {header_len} bytes but the file ends first"),
        ));
    }
    let header_end = header_end as usize;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end]).map_err(|e| {
        format_err(path, PREAMBLE, format!("unreadable header: {e}"))
    })?;

    let mut offset = header_end;
    let mut arrays = std::collections::HashMap::new();
    for entry in &header.arrays {
        let len = entry.rows * entry.cols * 8;
        if bytes.len() < offset + len {
            return Err(format_err(
                path,
                bytes.len(),
                format!("array '{}' truncated", entry.name),
            ));
        }
        let values = bytes[offset..offset + len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        arrays.insert(
            entry.name.as_str(),
            Array2::from_shape_vec((entry.rows, entry.cols), values).expect("sized above"),
        );
        offset += len;
    }
    if offset != bytes.len() {
        return Err(format_err(path, offset, "unexpected trailing bytes"));
    }
    let mut take = |name: &str| {
        arrays
            .remove(name)
            .ok_or_else(|| format_err(path, PREAMBLE, format!("missing array '{name}'")))
    };
    let flat = |a: Array2<f64>| -> Array1<f64> {
        let len = a.len();
        a.into_shape_with_order(len).expect("row vector")
    };

    let encoder_i = Encoder {
        theta: take("theta_i")?,
        kernel: header.kernel_i,
        input_dim: header.input_dim,
        offset: flat(take("offset_i")?),
    };
    let encoder_t = match header.kernel_t {
        Some(kernel) => Some(Encoder {
            theta: take("theta_t")?,
            kernel,
            input_dim: header.input_dim,
            offset: flat(take("offset_t")?),
        }),
        None => None,
    };
    let class_codes = take("class_codes")?;
    if class_codes.ncols() != encoder_i.r() || encoder_i.offset.len() != encoder_i.r() {
        return Err(format_err(path, PREAMBLE, "array shapes disagree with each other"));
    }
    Ok(TrainedModel {
        config: header.config,
        encoder_i,
        encoder_t,
        class_codes,
        history: header.history,
        yhat: header.yhat,
        shat: header.shat,
        rows: header.rows,
    })
}

pub fn save_model(path: &Path, model: &TrainedModel) -> Result<()> {
    let bytes = encode_model(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}

/// Fails unless the model was trained on embeddings of width `d`.
pub fn check_input_dim(model: &TrainedModel, d: usize) -> Result<()> {
    if model.encoder_i.input_dim != d {
        return Err(Error::Shape(format!(
            "model was trained on {}-dimensional embeddings, data has {d}",
            model.encoder_i.input_dim
        )));
    }
    Ok(())
}
