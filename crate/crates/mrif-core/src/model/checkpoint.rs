//! Checkpoint serialization.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    b"MRIFCKP1"
//! u32      config JSON length, then the JSON bytes
//! u32      parameter count
//! per parameter (manifest):
//!   u32    name length, then UTF-8 name
//!   u32    rank, then u32 per dimension
//!   u64    byte offset into the value blob
//!   u32    element count
//! u64      blob length in bytes
//! blob     f32 little-endian values, parameters in manifest order
//! ```
//!
//! Values are stored as f32; the runtime computes in f64, so a save/load
//! round trip quantizes. Loading verifies the embedded config against the
//! freshly-laid-out parameter set and fails on any name or shape mismatch.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, ModelError, MrifModel};

const MAGIC: &[u8; 8] = b"MRIFCKP1";

impl MrifModel {
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;

        let config = serde_json::to_vec(&self.config)
            .map_err(|e| ModelError::BadCheckpoint(format!("config encode: {e}")))?;
        out.write_all(&(config.len() as u32).to_le_bytes())?;
        out.write_all(&config)?;

        out.write_all(&(self.params.len() as u32).to_le_bytes())?;
        let mut offset = 0u64;
        for p in self.params.iter() {
            out.write_all(&(p.name.len() as u32).to_le_bytes())?;
            out.write_all(p.name.as_bytes())?;
            out.write_all(&(p.shape.len() as u32).to_le_bytes())?;
            for &dim in &p.shape {
                out.write_all(&(dim as u32).to_le_bytes())?;
            }
            out.write_all(&offset.to_le_bytes())?;
            out.write_all(&(p.values.len() as u32).to_le_bytes())?;
            offset += 4 * p.values.len() as u64;
        }

        out.write_all(&offset.to_le_bytes())?;
        for p in self.params.iter() {
            for &v in &p.values {
                out.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mut input = BufReader::new(File::open(path)?);
        let bad = |msg: &str| ModelError::BadCheckpoint(msg.to_string());

        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("wrong magic bytes"));
        }

        let config_len = read_u32(&mut input)? as usize;
        let mut config_bytes = vec![0u8; config_len];
        input.read_exact(&mut config_bytes)?;
        let config: ModelConfig = serde_json::from_slice(&config_bytes)
            .map_err(|e| ModelError::BadCheckpoint(format!("config decode: {e}")))?;

        // lay out a fresh model from the embedded config, then fill it in
        let mut model = MrifModel::new(config, 0)?;

        let count = read_u32(&mut input)? as usize;
        if count != model.params.len() {
            return Err(ModelError::ConfigMismatch(format!(
                "checkpoint holds {count} parameters, config implies {}",
                model.params.len()
            )));
        }

        struct Entry {
            name: String,
            shape: Vec<usize>,
            offset: u64,
            count: usize,
        }
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut input)? as usize;
            let mut name = vec![0u8; name_len];
            input.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| bad("parameter name not UTF-8"))?;
            let rank = read_u32(&mut input)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut input)? as usize);
            }
            let offset = read_u64(&mut input)?;
            let count = read_u32(&mut input)? as usize;
            manifest.push(Entry {
                name,
                shape,
                offset,
                count,
            });
        }

        let blob_len = read_u64(&mut input)? as usize;
        let mut blob = vec![0u8; blob_len];
        input.read_exact(&mut blob)?;

        for (index, entry) in manifest.iter().enumerate() {
            let expected = model.params.entry_at(index);
            if expected.name != entry.name || expected.shape != entry.shape {
                return Err(ModelError::ConfigMismatch(format!(
                    "parameter {index}: checkpoint has {} {:?}, config implies {} {:?}",
                    entry.name, entry.shape, expected.name, expected.shape
                )));
            }
            let start = entry.offset as usize;
            let end = start + 4 * entry.count;
            if entry.count != expected.values.len() || end > blob.len() {
                return Err(bad("manifest offsets run past the value blob"));
            }
            let values = model.params.values_mut(index);
            for (slot, bytes) in values.iter_mut().zip(blob[start..end].chunks_exact(4)) {
                *slot = f32::from_le_bytes(bytes.try_into().unwrap()) as f64;
            }
        }
        Ok(model)
    }

    /// Guard for callers that already decided on a config: loading weights
    /// trained under a different architecture is an error.
    pub fn verify_config(&self, expected: &ModelConfig) -> Result<(), ModelError> {
        if &self.config != expected {
            return Err(ModelError::ConfigMismatch(format!(
                "checkpoint config {:?} differs from requested {:?}",
                self.config, expected
            )));
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, std::io::Error> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, std::io::Error> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
