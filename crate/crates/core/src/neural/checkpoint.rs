//! Binary checkpoint format for named parameter tensors.
//!
//! Layout (little-endian): magic `HUPACKPT`, version u16, tensor count u32,
//! then per tensor: name length u16 + UTF-8 name, rank u8, dims u32 each,
//! raw f32 data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::ParamLayout;

const MAGIC: &[u8; 8] = b"HUPACKPT";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u16),
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("checkpoint does not match model: {0}")]
    Incompatible(String),
}

/// Write the layout's tensors from a flat f32 parameter vector.
pub fn save_checkpoint(path: &Path, layout: &ParamLayout, params: &[f32]) -> Result<(), CheckpointError> {
    assert_eq!(params.len(), layout.total(), "params do not match layout");
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(layout.entries().len() as u32).to_le_bytes())?;
    for entry in layout.entries() {
        let name = entry.name.as_bytes();
        out.write_all(&(name.len() as u16).to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&[entry.shape.len() as u8])?;
        for dim in &entry.shape {
            out.write_all(&(*dim as u32).to_le_bytes())?;
        }
        for v in &params[entry.range()] {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Raw named tensors from a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Vec<usize>, Vec<f32>)>, CheckpointError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut buf2 = [0u8; 2];
    reader.read_exact(&mut buf2)?;
    let version = u16::from_le_bytes(buf2);
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let mut buf4 = [0u8; 4];
    reader.read_exact(&mut buf4)?;
    let count = u32::from_le_bytes(buf4);
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        reader.read_exact(&mut buf2)?;
        let name_len = u16::from_le_bytes(buf2) as usize;
        let mut name = vec![0u8; name_len];
        reader.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::BadName)?;
        let mut rank = [0u8; 1];
        reader.read_exact(&mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            reader.read_exact(&mut buf4)?;
            shape.push(u32::from_le_bytes(buf4) as usize);
        }
        let len: usize = shape.iter().product();
        let mut bytes = vec![0u8; len * 4];
        reader.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((name, shape, data));
    }
    Ok(tensors)
}

/// Load a checkpoint into a flat parameter vector, requiring every layout
/// entry to appear with a matching shape.
pub fn load_into(path: &Path, layout: &ParamLayout, params: &mut [f32]) -> Result<(), CheckpointError> {
    assert_eq!(params.len(), layout.total(), "params do not match layout");
    let tensors = load_checkpoint(path)?;
    for entry in layout.entries() {
        let found = tensors
            .iter()
            .find(|(name, _, _)| *name == entry.name)
            .ok_or_else(|| CheckpointError::Incompatible(format!("missing tensor {}", entry.name)))?;
        if found.1 != entry.shape {
            return Err(CheckpointError::Incompatible(format!(
                "tensor {} has shape {:?}, expected {:?}",
                entry.name, found.1, entry.shape
            )));
        }
        params[entry.range()].copy_from_slice(&found.2);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_layout() -> ParamLayout {
        let mut layout = ParamLayout::new();
        layout.push("layer.w", vec![2, 3]);
        layout.push("layer.b", vec![2]);
        layout
    }

    #[test]
    fn round_trip() {
        let layout = demo_layout();
        let params: Vec<f32> = (0..8).map(|i| i as f32 * 0.25 - 1.0).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &layout, &params).unwrap();

        let mut restored = vec![0.0f32; 8];
        load_into(&path, &layout, &mut restored).unwrap();
        assert_eq!(restored, params);

        let tensors = load_checkpoint(&path).unwrap();
        assert_eq!(tensors.len(), 2);
        assert_eq!(tensors[0].0, "layer.w");
        assert_eq!(tensors[0].1, vec![2, 3]);
    }

    #[test]
    fn rejects_wrong_magic_and_shape() {
        let layout = demo_layout();
        let params = vec![0.0f32; 8];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &layout, &params).unwrap();

        let mut incompatible = ParamLayout::new();
        incompatible.push("layer.w", vec![3, 3]);
        let mut buf = vec![0.0f32; 9];
        assert!(matches!(
            load_into(&path, &incompatible, &mut buf),
            Err(CheckpointError::Incompatible(_))
        ));

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'Z';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadMagic)));
    }
}
