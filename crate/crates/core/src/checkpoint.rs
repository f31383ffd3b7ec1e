//! Model checkpoint container.
//!
//! Layout: magic `FCKP`, u8 version (=1), u32 little-endian JSON header
//! length, the JSON header, then concatenated FTEN payloads. The header
//! carries the model config, the preprocessing parameters, and a
//! name/shape/offset table in parameter-name order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::PrepParams;
use crate::nn::{ModelConfig, ModelState};
use crate::tensor::{read_ften, write_ften, FtenError, Scalar, Tensor};

const MAGIC: &[u8; 4] = b"FCKP";
const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u8),
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("payload for {name}: {source}")]
    Payload {
        name: String,
        #[source]
        source: FtenError,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    /// Byte offset of this parameter's FTEN blob, relative to the end of
    /// the header.
    offset: u64,
    byte_len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prep: Option<PrepParams>,
    params: Vec<ParamRecord>,
}

/// A deserialized checkpoint: config, optional preprocessing parameters,
/// and the parameter state.
#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub model: ModelConfig,
    pub prep: Option<PrepParams>,
    pub state: ModelState<T>,
}

pub fn save_checkpoint<T: Scalar, W: Write>(
    w: &mut W,
    model: &ModelConfig,
    prep: Option<&PrepParams>,
    state: &ModelState<T>,
) -> Result<(), CheckpointError> {
    let mut payload = Vec::new();
    let mut params = Vec::with_capacity(state.len());
    for (name, tensor) in state.iter() {
        let offset = payload.len() as u64;
        write_ften(&mut payload, tensor).map_err(|source| CheckpointError::Payload {
            name: name.clone(),
            source,
        })?;
        params.push(ParamRecord {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            offset,
            byte_len: payload.len() as u64 - offset,
        });
    }
    let header = Header {
        model: model.clone(),
        prep: prep.cloned(),
        params,
    };
    let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&u32::try_from(json.len()).expect("header fits u32").to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&payload)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar, R: Read>(r: &mut R) -> Result<Checkpoint<T>, CheckpointError> {
    let mut head = [0u8; 9];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if head[4] != VERSION {
        return Err(CheckpointError::BadVersion(head[4]));
    }
    let json_len = u32::from_le_bytes(head[5..9].try_into().unwrap()) as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
    let mut state = ModelState::new();
    for rec in &header.params {
        let any = read_ften(r).map_err(|source| CheckpointError::Payload {
            name: rec.name.clone(),
            source,
        })?;
        if any.shape() != rec.shape.as_slice() {
            return Err(CheckpointError::BadHeader(format!(
                "{}: header shape {:?} != payload shape {:?}",
                rec.name,
                rec.shape,
                any.shape()
            )));
        }
        let tensor: Tensor<T> = any.into_exact().map_err(|source| CheckpointError::Payload {
            name: rec.name.clone(),
            source,
        })?;
        state.insert(rec.name.clone(), tensor);
    }
    Ok(Checkpoint {
        model: header.model,
        prep: header.prep,
        state,
    })
}

pub fn save_checkpoint_file<T: Scalar>(
    path: &Path,
    model: &ModelConfig,
    prep: Option<&PrepParams>,
    state: &ModelState<T>,
) -> Result<(), CheckpointError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_checkpoint(&mut f, model, prep, state)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint_file<T: Scalar>(path: &Path) -> Result<Checkpoint<T>, CheckpointError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    load_checkpoint(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;
    use crate::tensor::SeededRng;

    #[test]
    fn roundtrip_preserves_config_and_every_parameter() {
        let cfg = ModelConfig::tiny();
        let state = init_params::<f32>(&cfg, &mut SeededRng::new(1));
        let prep = PrepParams::small(8);
        let mut buf = Vec::new();
        save_checkpoint(&mut buf, &cfg, Some(&prep), &state).unwrap();
        let back: Checkpoint<f32> = load_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back.model, cfg);
        assert_eq!(back.prep, Some(prep));
        assert_eq!(back.state, state);
    }

    #[test]
    fn serialization_is_deterministic() {
        let cfg = ModelConfig::tiny();
        let state = init_params::<f32>(&cfg, &mut SeededRng::new(2));
        let mut a = Vec::new();
        let mut b = Vec::new();
        save_checkpoint(&mut a, &cfg, None, &state).unwrap();
        save_checkpoint(&mut b, &cfg, None, &state).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let buf = b"NOPE\x01\x00\x00\x00\x00".to_vec();
        assert!(matches!(
            load_checkpoint::<f32, _>(&mut buf.as_slice()),
            Err(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn dtype_mismatch_is_reported_with_parameter_name() {
        let cfg = ModelConfig::tiny();
        let state = init_params::<f32>(&cfg, &mut SeededRng::new(3));
        let mut buf = Vec::new();
        save_checkpoint(&mut buf, &cfg, None, &state).unwrap();
        let err = load_checkpoint::<f64, _>(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, CheckpointError::Payload { .. }));
    }
}
