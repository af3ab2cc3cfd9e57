//! Binary checkpoint format.
//!
//! Layout: magic `CTCKPT01`; a config block of u32 field count followed
//! by (name length u32 LE, UTF-8 name, u32 LE value) per field (dropout
//! is stored in basis points); then, until EOF, one record per tensor:
//! name length u32 LE + UTF-8 name, rank u32 LE, dims u32 LE each,
//! payload of 32-bit little-endian floats in row-major order. Loading
//! validates every shape against the config.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{ModelConfig, ModelError, Parameters, Scalar, TensorMut, TensorRef};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CTCKPT01";

fn config_fields(cfg: &ModelConfig) -> Vec<(&'static str, u32)> {
    vec![
        ("num_blocks", cfg.num_blocks as u32),
        ("d_model", cfg.d_model as u32),
        ("d_ff", cfg.d_ff as u32),
        ("d_kv", cfg.d_kv as u32),
        ("num_heads", cfg.num_heads as u32),
        ("vocab_size", cfg.vocab_size as u32),
        ("dropout_bp", (cfg.dropout * 10_000.0).round() as u32),
        ("max_len", cfg.max_len as u32),
        ("rel_pos_buckets", cfg.rel_pos_buckets as u32),
        ("rel_pos_max_distance", cfg.rel_pos_max_distance as u32),
    ]
}

fn config_from_fields(fields: &HashMap<String, u32>) -> Result<ModelConfig, String> {
    let get = |name: &str| -> Result<u32, String> {
        fields
            .get(name)
            .copied()
            .ok_or_else(|| format!("missing config field {name}"))
    };
    Ok(ModelConfig {
        num_blocks: get("num_blocks")? as usize,
        d_model: get("d_model")? as usize,
        d_ff: get("d_ff")? as usize,
        d_kv: get("d_kv")? as usize,
        num_heads: get("num_heads")? as usize,
        vocab_size: get("vocab_size")? as usize,
        dropout: get("dropout_bp")? as f32 / 10_000.0,
        max_len: get("max_len")? as usize,
        rel_pos_buckets: get("rel_pos_buckets")? as usize,
        rel_pos_max_distance: get("rel_pos_max_distance")? as usize,
    })
}

/// Write parameters (downcast to f32) with their config.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    cfg: &ModelConfig,
    params: &Parameters<T>,
) -> Result<(), ModelError> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let fields = config_fields(cfg);
    out.extend_from_slice(&(fields.len() as u32).to_le_bytes());
    for (name, value) in fields {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&value.to_le_bytes());
    }
    params.for_each(|name, tensor| {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        match tensor {
            TensorRef::Vector(v) => {
                out.extend_from_slice(&1u32.to_le_bytes());
                out.extend_from_slice(&(v.len() as u32).to_le_bytes());
                for &x in v.iter() {
                    out.extend_from_slice(&(x.to_f64() as f32).to_le_bytes());
                }
            }
            TensorRef::Matrix(m) => {
                out.extend_from_slice(&2u32.to_le_bytes());
                out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
                out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
                for &x in m.iter() {
                    out.extend_from_slice(&(x.to_f64() as f32).to_le_bytes());
                }
            }
        }
    });
    let io_err = |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&out).map_err(io_err)?;
    Ok(())
}

/// Read a checkpoint back as (config, f32 parameters).
pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, Parameters<f32>), ModelError> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |message: String| ModelError::BadCheckpoint {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("missing CTCKPT01 magic".to_string()));
    }
    let mut pos = 8usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], ModelError> {
        if *pos + n > bytes.len() {
            return Err(ModelError::BadCheckpoint {
                path: path.to_path_buf(),
                message: format!("truncated at byte {pos}"),
            });
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let read_u32 = |pos: &mut usize| -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
    };
    let read_name = |pos: &mut usize| -> Result<String, ModelError> {
        let len = read_u32(pos)? as usize;
        String::from_utf8(take(pos, len)?.to_vec())
            .map_err(|_| ModelError::BadCheckpoint {
                path: path.to_path_buf(),
                message: "name is not UTF-8".to_string(),
            })
    };

    let field_count = read_u32(&mut pos)?;
    let mut fields = HashMap::new();
    for _ in 0..field_count {
        let name = read_name(&mut pos)?;
        let value = read_u32(&mut pos)?;
        fields.insert(name, value);
    }
    let cfg = config_from_fields(&fields).map_err(bad)?;
    cfg.validate()?;

    #[derive(Debug)]
    enum Loaded {
        Vector(Array1<f32>),
        Matrix(Array2<f32>),
    }
    let mut tensors: HashMap<String, Loaded> = HashMap::new();
    while pos < bytes.len() {
        let name = read_name(&mut pos)?;
        let rank = read_u32(&mut pos)?;
        let tensor = match rank {
            1 => {
                let n = read_u32(&mut pos)? as usize;
                let raw = take(&mut pos, n * 4)?;
                Loaded::Vector(Array1::from_iter(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap())),
                ))
            }
            2 => {
                let r = read_u32(&mut pos)? as usize;
                let c = read_u32(&mut pos)? as usize;
                let raw = take(&mut pos, r * c * 4)?;
                let data: Vec<f32> = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Loaded::Matrix(
                    Array2::from_shape_vec((r, c), data)
                        .map_err(|e| bad(format!("tensor {name}: {e}")))?,
                )
            }
            r => return Err(bad(format!("tensor {name}: unsupported rank {r}"))),
        };
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(bad(format!("duplicate tensor {name}")));
        }
    }

    let mut params = Parameters::<f32>::zeros(&cfg);
    let mut missing = Vec::new();
    let mut shape_error: Option<String> = None;
    params.for_each_mut(|name, slot| match tensors.remove(&name) {
        None => missing.push(name),
        Some(loaded) => match (slot, loaded) {
            (TensorMut::Vector(v), Loaded::Vector(l)) => {
                if v.len() != l.len() {
                    shape_error =
                        Some(format!("{name}: expected {} values, found {}", v.len(), l.len()));
                } else {
                    v.assign(&l);
                }
            }
            (TensorMut::Matrix(m), Loaded::Matrix(l)) => {
                if m.dim() != l.dim() {
                    shape_error = Some(format!(
                        "{name}: expected {:?}, found {:?}",
                        m.dim(),
                        l.dim()
                    ));
                } else {
                    m.assign(&l);
                }
            }
            (TensorMut::Vector(_), Loaded::Matrix(_))
            | (TensorMut::Matrix(_), Loaded::Vector(_)) => {
                shape_error = Some(format!("{name}: rank mismatch"));
            }
        },
    });
    if let Some(message) = shape_error {
        return Err(bad(message));
    }
    if !missing.is_empty() {
        return Err(bad(format!("missing tensors: {}", missing.join(", "))));
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(bad(format!("unexpected tensor {extra}")));
    }
    Ok((cfg, params))
}

#[cfg(test)]
mod tests {
    use super::super::init_params;
    use super::*;

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let cfg = ModelConfig::tiny(32);
        let params = init_params::<f32>(&cfg, 11).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(f.path(), &cfg, &params).unwrap();
        let (loaded_cfg, loaded) = load_checkpoint(f.path()).unwrap();
        assert_eq!(loaded_cfg, cfg);
        assert_eq!(loaded, params);
        let bytes = fs::read(f.path()).unwrap();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
    }

    #[test]
    fn f64_params_round_trip_through_f32_storage() {
        let cfg = ModelConfig::tiny(32);
        let params = init_params::<f64>(&cfg, 12).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(f.path(), &cfg, &params).unwrap();
        let (_, loaded) = load_checkpoint(f.path()).unwrap();
        assert_eq!(loaded, params.convert::<f32>());
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), b"WRONGMAG").unwrap();
        assert!(matches!(
            load_checkpoint(f.path()),
            Err(ModelError::BadCheckpoint { .. })
        ));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let cfg = ModelConfig::tiny(32);
        let params = init_params::<f32>(&cfg, 13).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(f.path(), &cfg, &params).unwrap();
        let bytes = fs::read(f.path()).unwrap();
        fs::write(f.path(), &bytes[..bytes.len() - 7]).unwrap();
        assert!(load_checkpoint(f.path()).is_err());
    }
}
