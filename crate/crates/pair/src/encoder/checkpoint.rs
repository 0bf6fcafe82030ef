//! Checkpoint file format: magic "PAIRCKPT", u32 version, u32 JSON
//! metadata length, UTF-8 JSON metadata, then parameter blobs as
//! little-endian f32 in declared field order (embedding, w1, b1, w2, b2;
//! twice for the split configuration, query set first).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderDims, EncoderModel, EncoderParams};
use crate::error::{PairError, Result};

pub const MAGIC: &[u8; 8] = b"PAIRCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub dims: EncoderDims,
    pub hash_seed: u64,
    pub shared: bool,
    /// Training stage tag ("pretrain", "finetune", ...); free-form.
    #[serde(default)]
    pub stage: String,
    /// Echo of the training config that produced this checkpoint.
    #[serde(default)]
    pub config: serde_json::Value,
}

fn write_blob(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn write_params(out: &mut Vec<u8>, p: &EncoderParams) {
    write_blob(out, &p.embedding);
    write_blob(out, &p.w1);
    write_blob(out, &p.b1);
    write_blob(out, &p.w2);
    write_blob(out, &p.b2);
}

struct BlobReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BlobReader<'a> {
    fn take(&mut self, n: usize) -> Result<Vec<f64>> {
        let need = n * 4;
        if self.pos + need > self.bytes.len() {
            return Err(PairError::BadCheckpoint("truncated parameter blob".into()));
        }
        let out = self.bytes[self.pos..self.pos + need]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        self.pos += need;
        Ok(out)
    }
}

fn read_params(reader: &mut BlobReader, dims: EncoderDims, hash_seed: u64) -> Result<EncoderParams> {
    Ok(EncoderParams {
        dims,
        hash_seed,
        embedding: reader.take(dims.v * dims.d_emb)?,
        w1: reader.take(dims.d_emb * dims.d_h)?,
        b1: reader.take(dims.d_h)?,
        w2: reader.take(dims.d_h * dims.d)?,
        b2: reader.take(dims.d)?,
    })
}

pub fn serialize(model: &EncoderModel, stage: &str, config: serde_json::Value) -> Vec<u8> {
    let meta = CheckpointMeta {
        dims: model.dims(),
        hash_seed: model.hash_seed(),
        shared: model.is_shared(),
        stage: stage.to_string(),
        config,
    };
    let meta_json = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_json);
    match model {
        EncoderModel::Shared(p) => write_params(&mut out, p),
        EncoderModel::Split { query, passage } => {
            write_params(&mut out, query);
            write_params(&mut out, passage);
        }
    }
    out
}

pub fn deserialize(bytes: &[u8]) -> Result<(EncoderModel, CheckpointMeta)> {
    if bytes.len() < 16 {
        return Err(PairError::BadCheckpoint("file too short".into()));
    }
    if &bytes[0..8] != MAGIC {
        return Err(PairError::BadCheckpoint("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]);
    if version != VERSION {
        return Err(PairError::BadCheckpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let meta_len = u32::from_le_bytes([bytes[12], bytes[13], bytes[14], bytes[15]]) as usize;
    if 16 + meta_len > bytes.len() {
        return Err(PairError::BadCheckpoint("truncated metadata".into()));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[16..16 + meta_len])
        .map_err(|e| PairError::BadCheckpoint(format!("metadata: {e}")))?;
    meta.dims.validate()?;
    let mut reader = BlobReader {
        bytes,
        pos: 16 + meta_len,
    };
    let model = if meta.shared {
        EncoderModel::Shared(read_params(&mut reader, meta.dims, meta.hash_seed)?)
    } else {
        EncoderModel::Split {
            query: read_params(&mut reader, meta.dims, meta.hash_seed)?,
            passage: read_params(&mut reader, meta.dims, meta.hash_seed)?,
        }
    };
    if reader.pos != bytes.len() {
        return Err(PairError::BadCheckpoint("trailing bytes".into()));
    }
    Ok((model, meta))
}

pub fn save_checkpoint(
    path: &Path,
    model: &EncoderModel,
    stage: &str,
    config: serde_json::Value,
) -> Result<()> {
    let bytes = serialize(model, stage, config);
    std::fs::write(path, bytes).map_err(|e| PairError::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<(EncoderModel, CheckpointMeta)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| PairError::io(path.display().to_string(), e))?;
    deserialize(&bytes)
}

/// Short content fingerprint of a serialized checkpoint, used to bind
/// embedding stores to the checkpoint that produced them.
pub fn fingerprint(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(16);
    for b in &digest[..8] {
        use std::fmt::Write;
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Write encodings as `<id>\t<float>...` TSV.
pub fn export_embeddings<W: Write>(
    mut out: W,
    rows: impl Iterator<Item = (String, Vec<f64>)>,
) -> Result<()> {
    for (id, vec) in rows {
        let mut line = id;
        for v in vec {
            line.push('\t');
            line.push_str(&format!("{v}"));
        }
        line.push('\n');
        out.write_all(line.as_bytes())
            .map_err(|e| PairError::io("<export>".to_string(), e))?;
    }
    Ok(())
}
