//! `.gvt` checkpoints: one line of JSON manifest, a newline, then every
//! parameter as little-endian `f64` in manifest order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::ParamStore;
use super::EngineError;

pub const FORMAT: &str = "gafvit-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into the payload.
    pub offset: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub frozen: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    seed: u64,
    step: u64,
    config: serde_json::Value,
    params: Vec<ManifestEntry>,
}

/// A loaded checkpoint: the model config it was saved with and its
/// parameters.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub store: ParamStore,
}

fn bad(msg: impl Into<String>) -> EngineError {
    EngineError::Checkpoint(msg.into())
}

pub fn write_checkpoint(out: &mut impl Write, store: &ParamStore, config: &impl Serialize) -> Result<(), EngineError> {
    let config = serde_json::to_value(config).map_err(|e| bad(format!("config: {e}")))?;
    let mut offset = 0;
    let params = store
        .iter()
        .map(|(_, p)| {
            let entry = ManifestEntry {
                name: p.name.clone(),
                shape: [p.value.rows(), p.value.cols()],
                offset,
                frozen: p.frozen,
            };
            offset += p.value.len() * 8;
            entry
        })
        .collect();
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        seed: store.seed,
        step: store.step,
        config,
        params,
    };
    let line = serde_json::to_string(&manifest).map_err(|e| bad(e.to_string()))?;
    let mut buf = Vec::with_capacity(line.len() + 1 + offset);
    buf.extend_from_slice(line.as_bytes());
    buf.push(b'\n');
    for (_, p) in store.iter() {
        for v in p.value.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<Checkpoint, EngineError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing manifest line"))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| bad(format!("manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(bad(format!("unknown format `{}`", manifest.format)));
    }
    if manifest.version != VERSION {
        return Err(bad(format!("unsupported version {}", manifest.version)));
    }
    let payload = &bytes[nl + 1..];
    let mut store = ParamStore::new(manifest.seed);
    store.step = manifest.step;
    let mut expected = 0;
    for entry in &manifest.params {
        let [rows, cols] = entry.shape;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| bad(format!("`{}`: shape overflow", entry.name)))?;
        if entry.offset != expected {
            return Err(bad(format!(
                "`{}` at offset {}, expected {expected}",
                entry.name, entry.offset
            )));
        }
        let end = expected + n;
        if end > payload.len() {
            return Err(bad(format!(
                "payload truncated: `{}` needs bytes {expected}..{end}, have {}",
                entry.name,
                payload.len()
            )));
        }
        let data = payload[expected..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if store.id(&entry.name).is_some() {
            return Err(bad(format!("duplicate parameter `{}`", entry.name)));
        }
        let id = store.insert(entry.name.clone(), Matrix::from_vec(rows, cols, data));
        store.set_frozen(id, entry.frozen);
        expected = end;
    }
    if expected != payload.len() {
        return Err(bad(format!(
            "{} trailing payload bytes",
            payload.len() - expected
        )));
    }
    Ok(Checkpoint {
        config: manifest.config,
        store,
    })
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, config: &impl Serialize) -> Result<(), EngineError> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, store, config)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, EngineError> {
    let mut file = fs::File::open(path)?;
    read_checkpoint(&mut file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new(42);
        s.insert("a.w", Matrix::from_vec(2, 3, vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE, 0.0, -0.0]));
        let b = s.insert("a.b", Matrix::from_vec(1, 2, vec![1e-300, 7.0]));
        s.set_frozen(b, true);
        s.step = 17;
        s
    }

    fn bytes() -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &store(), &serde_json::json!({"k": 1})).unwrap();
        buf
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ck = read_checkpoint(&mut bytes().as_slice()).unwrap();
        let orig = store();
        assert_eq!(ck.store.seed, 42);
        assert_eq!(ck.store.step, 17);
        assert_eq!(ck.config, serde_json::json!({"k": 1}));
        assert_eq!(ck.store.len(), orig.len());
        for ((_, a), (_, b)) in ck.store.iter().zip(orig.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.frozen, b.frozen);
            let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
    }

    #[test]
    fn manifest_offsets_are_bytes() {
        let b = bytes();
        let nl = b.iter().position(|&c| c == b'\n').unwrap();
        let m: Manifest = serde_json::from_slice(&b[..nl]).unwrap();
        assert_eq!(m.params[0].offset, 0);
        assert_eq!(m.params[1].offset, 48);
        assert_eq!(b.len() - nl - 1, 64);
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let b = bytes();
        let cut = &b[..b.len() - 3];
        assert!(matches!(read_checkpoint(&mut &cut[..]), Err(EngineError::Checkpoint(_))));
        let mut extra = b.clone();
        extra.push(0);
        assert!(matches!(read_checkpoint(&mut extra.as_slice()), Err(EngineError::Checkpoint(_))));
        assert!(matches!(read_checkpoint(&mut &b"{}"[..]), Err(EngineError::Checkpoint(_))));
    }
}
