//! Versioned binary checkpoint format.
//!
//! Layout: magic `MPFO`, format version (u32 LE), a length-prefixed JSON
//! metadata block echoing the run configuration, then each layer in fixed
//! order (encoder, decoder, head) as activation tag, frozen flag, row and
//! column counts, and raw little-endian 64-bit floats. Saving the same
//! state twice produces byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::model::MultipofoModel;
use crate::multiscale::ScaleSpec;
use crate::nn::{Activation, DenseLayer, Matrix};

pub const MAGIC: &[u8; 4] = b"MPFO";
pub const FORMAT_VERSION: u32 = 1;

/// Everything a consumer needs besides the weights: the scale table, the
/// per-circuit scalers, and run identification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub l_max: usize,
    pub n_scales: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub horizon: usize,
    pub frozen_encoder: bool,
    pub frozen_encoder_hash: Option<String>,
    pub scales: Vec<ScaleSpec>,
    pub scalers: BTreeMap<String, Scaler>,
    pub step_minutes: i64,
    pub seed: u64,
    pub config_hash: String,
}

/// A trained (or fresh) model plus the metadata needed to apply it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MultipofoModel,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| {
            Error::Checkpoint(format!("cannot read checkpoint {}: {e}", path.display()))
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta_json = serde_json::to_vec(&self.meta)
            .map_err(|e| Error::Checkpoint(format!("cannot serialize metadata: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta_json);
        let layers: Vec<&DenseLayer> = self
            .model
            .encoder()
            .iter()
            .chain(self.model.decoder().iter())
            .chain(std::iter::once(self.model.head()))
            .collect();
        out.extend_from_slice(&(layers.len() as u64).to_le_bytes());
        for layer in layers {
            out.push(layer.activation().tag());
            out.push(layer.frozen() as u8);
            out.extend_from_slice(&(layer.out_dim() as u64).to_le_bytes());
            out.extend_from_slice(&(layer.in_dim() as u64).to_le_bytes());
            layer.extend_le_bytes(&mut out);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(
                "bad magic bytes; not a checkpoint file".to_string(),
            ));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format version {version}; this build reads version {FORMAT_VERSION}"
            )));
        }
        let meta_len = cur.take_u64()? as usize;
        let meta_json = cur.take(meta_len)?;
        let meta: CheckpointMeta = serde_json::from_slice(meta_json)
            .map_err(|e| Error::Checkpoint(format!("corrupt metadata block: {e}")))?;
        let layer_count = cur.take_u64()? as usize;
        if layer_count != 7 {
            return Err(Error::Checkpoint(format!(
                "expected 7 layers, found {layer_count}"
            )));
        }
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let activation = Activation::from_tag(cur.take(1)?[0])?;
            let frozen = cur.take(1)?[0] != 0;
            let rows = cur.take_u64()? as usize;
            let cols = cur.take_u64()? as usize;
            let mut weights = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                weights.push(cur.take_f64()?);
            }
            let mut bias = Vec::with_capacity(rows);
            for _ in 0..rows {
                bias.push(cur.take_f64()?);
            }
            let mut layer =
                DenseLayer::new(Matrix::from_vec(rows, cols, weights)?, bias, activation)?;
            layer.set_frozen(frozen);
            layers.push(layer);
        }
        if cur.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last layer",
                bytes.len() - cur.pos
            )));
        }
        let mut it = layers.into_iter();
        let encoder: Vec<DenseLayer> = it.by_ref().take(3).collect();
        let decoder: Vec<DenseLayer> = it.by_ref().take(3).collect();
        let head = it.next().expect("layer count checked above");
        let model = MultipofoModel::from_parts(
            encoder,
            decoder,
            head,
            meta.l_max,
            meta.n_scales,
            meta.frozen_encoder,
            meta.frozen_encoder_hash.clone(),
        )?;
        if model.latent_dim() != meta.latent_dim || model.horizon() != meta.horizon {
            return Err(Error::Checkpoint(
                "layer dimensions disagree with checkpoint metadata".to_string(),
            ));
        }
        Ok(Checkpoint { model, meta })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated checkpoint file: needed {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn take_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn take_f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::multiscale::{ScaleName, ScaleSpec};
    use crate::nn::seed_rng;

    fn checkpoint() -> Checkpoint {
        let cfg = ModelConfig {
            hidden: vec![8, 6],
            latent_dim: 4,
            horizon: 1,
        };
        let mut rng = seed_rng(21);
        let mut model = MultipofoModel::new(12, 2, &cfg, &mut rng).unwrap();
        model.freeze_encoder();
        let mut scalers = BTreeMap::new();
        scalers.insert(
            "c1".to_string(),
            Scaler {
                min: 10.0,
                max: 250.0,
                fitted_on: "train".to_string(),
            },
        );
        let meta = CheckpointMeta {
            l_max: 12,
            n_scales: 2,
            latent_dim: 4,
            hidden: vec![8, 6],
            horizon: 1,
            frozen_encoder: true,
            frozen_encoder_hash: model.frozen_encoder_hash().map(str::to_string),
            scales: vec![
                ScaleSpec {
                    name: ScaleName::Daily,
                    window_len: 6,
                    stride: 6,
                    one_hot_index: 0,
                },
                ScaleSpec {
                    name: ScaleName::Weekly,
                    window_len: 12,
                    stride: 12,
                    one_hot_index: 1,
                },
            ],
            scalers,
            step_minutes: 30,
            seed: 21,
            config_hash: "abc123".to_string(),
        };
        Checkpoint { model, meta }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ck = checkpoint();
        let bytes1 = ck.to_bytes().unwrap();
        let loaded = Checkpoint::from_bytes(&bytes1).unwrap();
        let bytes2 = loaded.to_bytes().unwrap();
        assert_eq!(bytes1, bytes2);
        assert_eq!(loaded, ck);
    }

    #[test]
    fn loaded_model_predicts_identically() {
        let ck = checkpoint();
        let loaded = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        let input: Vec<f64> = (0..14).map(|i| (i as f64) * 0.07).collect();
        let a = ck.model.forecast(&input).unwrap();
        let b = loaded.model.forecast(&input).unwrap();
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn truncated_file_reports_corruption() {
        let bytes = checkpoint().to_bytes().unwrap();
        for cut in [3, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            let msg = err.to_string();
            assert!(
                msg.contains("truncated") || msg.contains("corrupt") || msg.contains("magic"),
                "cut at {cut}: {msg}"
            );
        }
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let mut bytes = checkpoint().to_bytes().unwrap();
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong_magic)
            .unwrap_err()
            .to_string()
            .contains("magic"));
        bytes[4] = 99; // version field
        assert!(Checkpoint::from_bytes(&bytes)
            .unwrap_err()
            .to_string()
            .contains("version"));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = checkpoint().to_bytes().unwrap();
        bytes.push(0);
        assert!(Checkpoint::from_bytes(&bytes)
            .unwrap_err()
            .to_string()
            .contains("trailing"));
    }

    #[test]
    fn save_and_load_round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.mpofo");
        let ck = checkpoint();
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ck);
    }
}
