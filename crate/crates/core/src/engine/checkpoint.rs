use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::params::ParameterSet;

/// Hex SHA-256 of the JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serialises");
    hex::encode(Sha256::digest(json))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub epoch: usize,
    pub val_loss: f64,
    pub seed: u64,
    /// SHA-256 of the parameter archive.
    pub digest: String,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ParameterSet,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(params: ParameterSet, config_hash: String, epoch: usize, val_loss: f64, seed: u64) -> Self {
        let digest = params.digest();
        Self {
            params,
            meta: CheckpointMeta {
                config_hash,
                epoch,
                val_loss,
                seed,
                digest,
            },
        }
    }

    /// Writes `<stem>.bin` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).at(dir)?;
        let bin = dir.join(format!("{stem}.bin"));
        self.params.save(&bin)?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, serde_json::to_vec_pretty(&self.meta)?).at(&json)?;
        Ok(bin)
    }

    /// Loads `<stem>.bin` (or the `.bin` path itself) and verifies the digest
    /// against the sidecar.
    pub fn load(path: &Path) -> Result<Self> {
        let bin = path.with_extension("bin");
        let json = path.with_extension("json");
        if !bin.exists() {
            return Err(Error::MissingCheckpoint(bin.display().to_string()));
        }
        let meta: CheckpointMeta = serde_json::from_slice(&std::fs::read(&json).at(&json)?)?;
        let params = ParameterSet::load(&bin)?;
        if params.digest() != meta.digest {
            return Err(Error::CorruptArchive {
                path: bin,
                reason: "digest does not match sidecar".into(),
            });
        }
        Ok(Self { params, meta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn round_trip_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = ParameterSet::new();
        p.insert_weight("encoder.a", Tensor::from_vec(&[2], vec![1.5, -2.0]).unwrap());
        let ck = Checkpoint::new(p, config_hash(&"cfg"), 3, 0.25, 7);
        let path = ck.save(dir.path(), "best").unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.meta, ck.meta);
        assert_eq!(back.params.digest(), ck.params.digest());

        let json = dir.path().join("best.json");
        let mut meta = ck.meta.clone();
        meta.digest = "00".repeat(32);
        std::fs::write(&json, serde_json::to_vec(&meta).unwrap()).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::CorruptArchive { .. })));
        assert!(matches!(
            Checkpoint::load(&dir.path().join("nope.bin")),
            Err(Error::MissingCheckpoint(_))
        ));
    }
}
