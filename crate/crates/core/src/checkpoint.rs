//! Binary checkpoints with a JSON sidecar manifest.
//!
//! Layout (little-endian): magic `KGRC`, version `u32`, kind `u8`, dim `u32`,
//! entity count `u64`, relation count `u64`, flags `u8` (bit 0: second entity
//! table present), then `f32` rows of the entity table, the optional second
//! entity table and the relation table (absent for MF).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::FileFormat;
use crate::error::{Error, Result};
use crate::model::{Block, EmbeddingModel, ModelKind};
use crate::train::TrainingConfig;

pub const MAGIC: [u8; 4] = *b"KGRC";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 8 + 8 + 1;
const FLAG_OBJECT_TABLE: u8 = 1;

/// Everything a checkpoint needs besides the parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Raw user id of each internal user.
    pub user_ids: Vec<u64>,
    /// Raw item id of each internal item.
    pub item_ids: Vec<u64>,
    /// Dataset name used in reports.
    #[serde(default)]
    pub dataset: Option<String>,
    /// Where the training data came from, so the same split can be rebuilt.
    #[serde(default)]
    pub data_path: Option<PathBuf>,
    #[serde(default)]
    pub data_format: Option<FileFormat>,
    #[serde(default)]
    pub valid_fraction: Option<f64>,
    #[serde(default)]
    pub split_seed: Option<u64>,
    #[serde(default)]
    pub training: Option<TrainingConfig>,
    #[serde(default)]
    pub validation_recall: Option<f64>,
    #[serde(default)]
    pub best_epoch: Option<usize>,
}

/// `<checkpoint>.manifest.json`.
pub fn manifest_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Writes `bytes` to `path` through a temp file in the same directory and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn encode(model: &EmbeddingModel) -> Vec<u8> {
    let kind = model.kind();
    let tables: Vec<&[f64]> = Block::ALL.iter().filter_map(|&b| model.block(b)).collect();
    let floats: usize = tables.iter().map(|t| t.len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * floats);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind.code());
    out.extend_from_slice(&(model.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(model.num_entities() as u64).to_le_bytes());
    out.extend_from_slice(&(model.num_relations() as u64).to_le_bytes());
    out.push(if kind.has_object_table() {
        FLAG_OBJECT_TABLE
    } else {
        0
    });
    for t in tables {
        for &v in t {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingModel> {
    if bytes.len() < 4 {
        return Err(Error::CorruptCheckpoint(
            "file shorter than the magic number".into(),
        ));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::CorruptCheckpoint(format!(
            "header needs {HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let kind = ModelKind::from_code(bytes[8])
        .ok_or_else(|| Error::CorruptCheckpoint(format!("unknown model kind code {}", bytes[8])))?;
    let dim = u32_at(9) as usize;
    let num_entities =
        usize::try_from(u64_at(13)).map_err(|_| Error::CorruptCheckpoint("entity count".into()))?;
    let num_relations = usize::try_from(u64_at(21))
        .map_err(|_| Error::CorruptCheckpoint("relation count".into()))?;
    let flags = bytes[29];
    if (flags & FLAG_OBJECT_TABLE != 0) != kind.has_object_table()
        || flags & !FLAG_OBJECT_TABLE != 0
    {
        return Err(Error::CorruptCheckpoint(format!(
            "flags {flags:#04x} do not fit model kind {kind}"
        )));
    }
    let width = kind.width(dim);
    let ent = num_entities
        .checked_mul(width)
        .ok_or_else(|| Error::CorruptCheckpoint("table size overflows".into()))?;
    let rel = if kind.has_relation_table() {
        num_relations.saturating_mul(width)
    } else {
        0
    };
    let obj = if kind.has_object_table() { ent } else { 0 };
    let expected = ent
        .saturating_add(obj)
        .saturating_add(rel)
        .saturating_mul(4);
    let found = bytes.len() - HEADER_LEN;
    if expected != found {
        return Err(Error::PayloadLengthMismatch {
            expected: expected as u64,
            found: found as u64,
        });
    }
    let mut floats = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))));
    let mut take = |n: usize| -> Vec<f64> { floats.by_ref().take(n).collect() };
    let entity = take(ent);
    let entity_obj = kind.has_object_table().then(|| take(obj));
    let relation = kind.has_relation_table().then(|| take(rel));
    EmbeddingModel::from_parts(
        kind,
        dim,
        num_entities,
        num_relations,
        entity,
        entity_obj,
        relation,
    )
    .map_err(|e| Error::CorruptCheckpoint(e.to_string()))
}

/// Writes the checkpoint and its manifest, each atomically.
pub fn save_checkpoint(model: &EmbeddingModel, manifest: &Manifest, path: &Path) -> Result<()> {
    write_atomic(path, &encode(model))?;
    let mut json = serde_json::to_vec_pretty(manifest)?;
    json.push(b'\n');
    write_atomic(&manifest_path(path), &json)
}

pub fn load_checkpoint(path: &Path) -> Result<(EmbeddingModel, Manifest)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let model = decode(&bytes)?;
    let mpath = manifest_path(path);
    let text = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, InitSpec};

    #[test]
    fn distmult_size_arithmetic() {
        let m = init_model(ModelKind::DistMult, 4, 6, 1, InitSpec::default_for(4, 1)).unwrap();
        let bytes = encode(&m);
        assert_eq!(bytes.len() - HEADER_LEN, 112);
        assert_eq!(bytes[29], 0);
    }

    #[test]
    fn cp_sets_flag() {
        let m = init_model(ModelKind::CP, 2, 3, 1, InitSpec::default_for(2, 1)).unwrap();
        let bytes = encode(&m);
        assert_eq!(bytes[29] & 1, 1);
        assert_eq!(bytes.len() - HEADER_LEN, 4 * (3 * 2 * 2 + 2));
    }

    #[test]
    fn round_trip_every_kind() {
        for kind in ModelKind::ALL {
            let m = init_model(kind, 3, 5, 1, InitSpec::default_for(3, 9)).unwrap();
            let back = decode(&encode(&m)).unwrap();
            assert_eq!((back.kind(), back.dim(), back.num_entities()), (kind, 3, 5));
            for s in 0..5 {
                for o in 0..5 {
                    let a = m.score_triple(s, 0, o).unwrap();
                    let b = back.score_triple(s, 0, o).unwrap();
                    assert!(
                        (a - b).abs() <= 1e-6 * a.abs().max(1e-3),
                        "{kind}: {a} vs {b}"
                    );
                }
            }
            assert_eq!(encode(&back), encode(&m));
        }
    }

    #[test]
    fn corruption_errors() {
        let m = init_model(ModelKind::MF, 2, 3, 1, InitSpec::default_for(2, 1)).unwrap();
        let bytes = encode(&m);
        let err = decode(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(err.to_string().contains("payload length mismatch"));
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&bad), Err(Error::BadMagic(_))));
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(matches!(decode(&v2), Err(Error::UnsupportedVersion(2))));
    }

    #[test]
    fn save_and_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = init_model(ModelKind::ComplEx, 2, 4, 1, InitSpec::default_for(2, 1)).unwrap();
        let manifest = Manifest {
            user_ids: vec![10, 11],
            item_ids: vec![7, 8],
            ..Manifest::default()
        };
        save_checkpoint(&m, &manifest, &path).unwrap();
        let (back, man) = load_checkpoint(&path).unwrap();
        assert_eq!(man, manifest);
        assert_eq!(back.kind(), ModelKind::ComplEx);
        assert!(manifest_path(&path).ends_with("m.ckpt.manifest.json"));
    }
}
