//! Checkpoint container: magic `LEE1`, version, serialized model config,
//! provenance text, then named parameter blocks (name, shape, LE f32 data).

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use lee_tensor::ParamStore;
use thiserror::Error;

use super::{LeeModel, ModelConfig};

const MAGIC: &[u8; 4] = b"LEE1";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a LEE1 checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("bad model config: {0}")]
    BadConfig(String),
    #[error("parameter `{name}`: shape {got:?} does not match config-derived {want:?}")]
    ShapeMismatch { name: String, got: Vec<usize>, want: Vec<usize> },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("unexpected parameter `{0}`")]
    UnexpectedParam(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn save_checkpoint(path: &Path, model: &LeeModel, provenance: &str) -> Result<(), CheckpointError> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let cfg = model.cfg.to_text();
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(cfg.as_bytes())?;
    w.write_all(&(provenance.len() as u32).to_le_bytes())?;
    w.write_all(provenance.as_bytes())?;
    w.write_all(&(model.store.len() as u32).to_le_bytes())?;
    for (name, p) in model.store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(p.shape.len() as u32).to_le_bytes())?;
        for &d in &p.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &p.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_string(r: &mut impl Read) -> Result<String, CheckpointError> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| CheckpointError::BadConfig(e.to_string()))
}

/// Load a checkpoint, validating every parameter shape against the
/// config-derived expectation. Returns the model and the stored provenance.
pub fn load_checkpoint(path: &Path) -> Result<(LeeModel, String), CheckpointError> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let cfg_text = read_string(&mut r)?;
    let cfg = ModelConfig::from_text(&cfg_text).map_err(CheckpointError::BadConfig)?;
    let provenance = read_string(&mut r)?;
    let n_params = read_u32(&mut r)? as usize;
    let expected = LeeModel::expected_shapes(&cfg);
    let mut store = ParamStore::new();
    for _ in 0..n_params {
        let name = read_string(&mut r)?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let want = expected
            .get(&name)
            .ok_or_else(|| CheckpointError::UnexpectedParam(name.clone()))?;
        if want.shape != shape {
            return Err(CheckpointError::ShapeMismatch { name, got: shape, want: want.shape.clone() });
        }
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(&name, shape, data);
    }
    for name in expected.names() {
        if !store.contains(name) {
            return Err(CheckpointError::MissingParam(name.clone()));
        }
    }
    Ok((LeeModel { cfg, store }, provenance))
}
