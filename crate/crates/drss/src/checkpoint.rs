//! Single-file checkpoints: a JSON manifest followed by the raw parameter
//! arrays as little-endian `f64`.
//!
//! ```text
//! b"DRSSCKPT" | version: u32 LE | manifest length: u64 LE | manifest | payload
//! ```
//!
//! Files are written to a temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use drss_core::data::{EmbeddingTable, Vocabulary};
use drss_core::model::{Model, ModelConfig};
use drss_core::omega::Omega;
use drss_core::trainer::{EvalMetrics, TrainConfig};
use drss_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{DrssError, Result};
use crate::io::write_atomic;

const MAGIC: &[u8; 8] = b"DRSSCKPT";
const VERSION: u32 = 1;
const DTYPE: &str = "f64-le";
const HEADER: usize = 8 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in values.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dtype: String,
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub vocab: Vec<String>,
    pub embeddings_trainable: bool,
    pub epoch: usize,
    pub dev: Option<EvalMetrics>,
    pub omega: Option<Omega>,
    pub arrays: Vec<ArrayEntry>,
    pub payload_values: usize,
    pub payload_fnv1a: u64,
}

/// Everything needed to resume evaluation of a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f64>,
    pub omega: Option<Omega>,
    pub train: Option<TrainConfig>,
    pub epoch: usize,
    pub dev: Option<EvalMetrics>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut payload = Vec::new();
    let mut arrays = Vec::new();
    let mut offset = 0;
    for (_, p) in ckpt.model.params.iter() {
        arrays.push(ArrayEntry { name: p.name.clone(), shape: p.value.shape().to_vec(), offset });
        for v in p.value.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        offset += p.value.len();
    }
    let manifest = Manifest {
        dtype: DTYPE.into(),
        model: ckpt.model.config.clone(),
        train: ckpt.train.clone(),
        vocab: ckpt.model.vocab.tokens().to_vec(),
        embeddings_trainable: ckpt.model.embeddings_trainable,
        epoch: ckpt.epoch,
        dev: ckpt.dev,
        omega: ckpt.omega,
        arrays,
        payload_values: offset,
        payload_fnv1a: fnv1a(&payload),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| DrssError::checkpoint(path, e.to_string()))?;
    write_atomic(path, |w| {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        w.write_all(&payload)
    })
}

pub fn read_manifest(path: &Path) -> Result<(Manifest, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| DrssError::io(path, e))?;
    let bad = |m: String| DrssError::checkpoint(path, m);
    if bytes.len() < HEADER {
        return Err(bad(format!("truncated: {} bytes, header needs {HEADER}", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("field `version`: {version}, this build reads {VERSION}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[HEADER..];
    if len > body.len() {
        return Err(bad(format!("truncated: manifest needs {len} bytes, {} remain", body.len())));
    }
    let manifest: Manifest = serde_json::from_slice(&body[..len]).map_err(|e| bad(format!("manifest: {e}")))?;
    if manifest.dtype != DTYPE {
        return Err(bad(format!("field `dtype`: `{}`, expected `{DTYPE}`", manifest.dtype)));
    }
    let payload = body[len..].to_vec();
    let expected = manifest.payload_values * 8;
    if payload.len() != expected {
        return Err(bad(format!("truncated or padded payload: {} bytes, manifest declares {expected}", payload.len())));
    }
    if fnv1a(&payload) != manifest.payload_fnv1a {
        return Err(bad("field `payload_fnv1a`: checksum mismatch".into()));
    }
    Ok((manifest, payload))
}

/// Loads and validates a checkpoint. Nothing is returned unless every array
/// matches the layout implied by the stored configuration.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let (manifest, payload) = read_manifest(path)?;
    let bad = |m: String| DrssError::checkpoint(path, m);
    manifest.model.validate().map_err(|e| bad(format!("field `model`: {e}")))?;
    let vocab = Vocabulary::from_tokens(manifest.vocab.clone()).map_err(|e| bad(format!("field `vocab`: {e}")))?;
    let mut table = EmbeddingTable::empty(manifest.model.hcnn.l, 0);
    table.extend(vocab.tokens()[2..].iter().map(String::as_str));
    let mut model = Model::new(manifest.model.clone(), &table, 0).map_err(|e| bad(format!("field `model`: {e}")))?;
    model.embeddings_trainable = manifest.embeddings_trainable;
    if manifest.arrays.len() != model.params.len() {
        return Err(bad(format!("field `arrays`: {} entries, the configuration needs {}", manifest.arrays.len(), model.params.len())));
    }
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let name = model.params.name(id).to_string();
        let entry = manifest.arrays.iter().find(|a| a.name == name).ok_or_else(|| bad(format!("field `arrays`: missing `{name}`")))?;
        let want = model.params.get(id).shape().to_vec();
        if entry.shape != want {
            return Err(bad(format!("array `{name}`: shape {:?}, expected {want:?}", entry.shape)));
        }
        let n: usize = want.iter().product();
        if entry.offset + n > manifest.payload_values {
            return Err(bad(format!("array `{name}`: extends past the payload")));
        }
        let data: Vec<f64> = payload[entry.offset * 8..(entry.offset + n) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        *model.params.get_mut(id) = Tensor::from_vec(&want, data)?;
    }
    if let Some(o) = &manifest.omega {
        o.validate().map_err(|e| bad(format!("field `omega`: {e}")))?;
    }
    Ok(Checkpoint { model, omega: manifest.omega, train: manifest.train, epoch: manifest.epoch, dev: manifest.dev })
}

#[cfg(test)]
mod tests {
    use super::*;
    use drss_core::hcnn::HcnnConfig;
    use drss_core::model::Variant;

    fn sample() -> Checkpoint {
        let mut t = EmbeddingTable::empty(4, 9);
        t.extend(["x", "y", "z"]);
        let model = Model::new(ModelConfig::new(Variant::DrssAdv, HcnnConfig::new(8, 4, 3), 2), &t, 11).unwrap();
        Checkpoint {
            model,
            omega: Some(Omega::quarter_identity()),
            train: Some(TrainConfig::default()),
            epoch: 3,
            dev: Some(EvalMetrics { accuracy: 0.75, auc: Some(0.8125), n: 8 }),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let c = sample();
        save_checkpoint(&p, &c).unwrap();
        let back = load_checkpoint(&p).unwrap();
        for ((_, a), (_, b)) in c.model.params.iter().zip(back.model.params.iter()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.value), bits(&b.value));
        }
        assert_eq!(back, c);
    }

    #[test]
    fn awkward_floats_survive_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let mut c = sample();
        let mut m = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] = 0.1 / (1.0 + (i + j) as f64) + if i == j { 0.15 + 1e-17 * i as f64 } else { 0.0 };
            }
        }
        m[0][0] = 1.0 - m[1][1] - m[2][2] - m[3][3];
        c.omega = Some(Omega { matrix: m });
        c.dev = Some(EvalMetrics { accuracy: 2.0 / 3.0, auc: Some(0.1 + 0.2), n: 3 });
        save_checkpoint(&p, &c).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back.omega, c.omega);
        assert_eq!(back.dev, c.dev);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&p, &sample()).unwrap();
        let bytes = fs::read(&p).unwrap();
        for cut in [5, HEADER + 10, bytes.len() - 3] {
            fs::write(&p, &bytes[..cut]).unwrap();
            let err = load_checkpoint(&p).unwrap_err().to_string();
            assert!(err.contains("truncated"), "{cut}: {err}");
        }
    }

    #[test]
    fn shape_mismatch_names_the_array() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&p, &sample()).unwrap();
        let (mut manifest, payload) = read_manifest(&p).unwrap();
        manifest.arrays[1].shape = vec![1, 2, 3];
        let json = serde_json::to_vec(&manifest).unwrap();
        let mut bytes = MAGIC.to_vec();
        bytes.extend(VERSION.to_le_bytes());
        bytes.extend((json.len() as u64).to_le_bytes());
        bytes.extend(json);
        bytes.extend(payload);
        fs::write(&p, bytes).unwrap();
        let err = load_checkpoint(&p).unwrap_err().to_string();
        assert!(err.contains(&manifest.arrays[1].name), "{err}");
    }
}
