//! Self-describing binary checkpoints: magic, format version, architecture
//! constants, then every parameter tensor as little-endian f64 in declared
//! order. Round trips are bit-exact.

use std::path::Path;

use crate::error::{Error, Result};

use super::{ArchConfig, ModelParams};

const MAGIC: &[u8; 8] = b"SESWCKPT";
const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    let a = params.arch;
    for v in [
        a.input_dim,
        a.hidden,
        a.num_layers,
        a.attn_dim,
        a.fc_hidden,
        a.classes,
    ] {
        bytes.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (_, tensor) in params.tensors() {
        let s = tensor.as_slice();
        bytes.extend_from_slice(&(s.len() as u64).to_le_bytes());
        for v in s {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::format(path, "checkpoint truncated"));
        }
        let out = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(out)
    };
    if take(&mut pos, 8)? != MAGIC {
        return Err(Error::format(path, "bad magic, not a checkpoint"));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let mut dims = [0usize; 6];
    for d in dims.iter_mut() {
        *d = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    }
    let arch = ArchConfig {
        input_dim: dims[0],
        hidden: dims[1],
        num_layers: dims[2],
        attn_dim: dims[3],
        fc_hidden: dims[4],
        classes: dims[5],
    };
    arch.validate()
        .map_err(|e| Error::format(path, format!("bad architecture header: {e}")))?;
    let mut params = ModelParams::init(arch, 0)
        .map_err(|e| Error::format(path, format!("bad architecture header: {e}")))?;
    for (name, mut tensor) in params.tensors_mut() {
        let expected = tensor.as_slice_mut().len();
        let stored = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
        if stored != expected {
            return Err(Error::format(
                path,
                format!("tensor {name}: stored length {stored}, expected {expected}"),
            ));
        }
        let raw = take(&mut pos, expected * 8)?;
        for (j, chunk) in raw.chunks_exact(8).enumerate() {
            tensor.as_slice_mut()[j] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after parameters"));
    }
    Ok(params)
}

/// Loads a checkpoint and rejects it when its architecture differs from the
/// expected one.
pub fn load_checkpoint_expecting(path: &Path, expected: ArchConfig) -> Result<ModelParams> {
    let params = load_checkpoint(path)?;
    if params.arch != expected {
        return Err(Error::format(
            path,
            format!(
                "architecture mismatch: checkpoint has {:?}, expected {:?}",
                params.arch, expected
            ),
        ));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureMatrix;
    use crate::model::forward;
    use ndarray::Array2;

    fn arch() -> ArchConfig {
        ArchConfig {
            input_dim: 6,
            hidden: 4,
            num_layers: 2,
            attn_dim: 4,
            fc_hidden: 4,
            classes: 2,
        }
    }

    #[test]
    fn round_trip_bit_exact_posteriors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = ModelParams::init(arch(), 17).unwrap();
        save_checkpoint(&path, &params).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(params, loaded);
        let feats = FeatureMatrix::new(Array2::from_shape_fn((4, 6), |(t, d)| {
            ((t * 7 + d) as f64 * 0.31).sin()
        }))
        .unwrap();
        let a = forward(&params, &feats).unwrap();
        let b = forward(&loaded, &feats).unwrap();
        assert_eq!(a.p0.to_bits(), b.p0.to_bits());
        assert_eq!(a.p1.to_bits(), b.p1.to_bits());
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = ModelParams::init(arch(), 1).unwrap();
        save_checkpoint(&path, &params).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn architecture_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = ModelParams::init(arch(), 2).unwrap();
        save_checkpoint(&path, &params).unwrap();
        let other = ArchConfig {
            hidden: 8,
            ..arch()
        };
        assert!(matches!(
            load_checkpoint_expecting(&path, other),
            Err(Error::Format { .. })
        ));
        assert!(load_checkpoint_expecting(&path, arch()).is_ok());
    }

    #[test]
    fn garbage_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
