//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, one byte giving the value
//! width (4 or 8), `u64` header length, a JSON header (config, vocabulary,
//! block names and shapes, provenance), then every block's values in
//! row-major order as little-endian floats. All integers are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::Parameters;
use super::vocab::Vocabulary;
use super::{ModelConfig, ModelError};
use crate::autodiff::{Array, Real};

const MAGIC: &[u8; 8] = b"XFITCKPT";
const VERSION: u32 = 1;

/// Where a set of weights came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Upstream method, or `None` for a fresh initialization.
    pub method: Option<String>,
    pub partition: Option<String>,
    pub meta_step: u64,
    pub validation_score: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocabulary,
    blocks: Vec<(String, Vec<usize>)>,
    provenance: Provenance,
}

/// Weights plus everything needed to use them.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: Parameters<T>,
    pub provenance: Provenance,
}

impl<T: Real> PartialEq for Checkpoint<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.vocab == other.vocab
            && self.params == other.params
            && self.provenance == other.provenance
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let header = Header {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            blocks: self
                .params
                .iter()
                .map(|(n, a)| (n.to_string(), a.shape().to_vec()))
                .collect(),
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| ModelError::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(21 + json.len() + self.params.total_count() * T::WIDTH);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::WIDTH as u8);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for a in self.params.arrays() {
            for &v in a.data() {
                v.to_le(&mut out);
            }
        }
        Ok(out)
    }

    /// Parses a checkpoint, converting values to `T` if they were stored at
    /// another precision.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |msg: &str| ModelError::Format(msg.to_string());
        if bytes.len() < 21 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(ModelError::Format(format!("unsupported checkpoint version {version}")));
        }
        let width = bytes[12] as usize;
        let header_len = u64::from_le_bytes(bytes[13..21].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(21..).ok_or_else(|| bad("truncated header"))?;
        if body.len() < header_len {
            return Err(bad("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..header_len]).map_err(|e| ModelError::Format(e.to_string()))?;
        header.config.validate()?;
        let mut values = &body[header_len..];
        let mut arrays = Vec::with_capacity(header.blocks.len());
        for (name, shape) in &header.blocks {
            let n: usize = shape.iter().product();
            let need = n * width;
            if values.len() < need {
                return Err(ModelError::Format(format!("truncated values in block {name}")));
            }
            let data: Vec<T> = match width {
                4 => values[..need]
                    .chunks_exact(4)
                    .map(|c| T::from_f64_lossy(<f32 as Real>::from_le(c) as f64))
                    .collect(),
                8 => values[..need]
                    .chunks_exact(8)
                    .map(|c| T::from_f64_lossy(<f64 as Real>::from_le(c)))
                    .collect(),
                w => return Err(ModelError::Format(format!("unsupported value width {w}"))),
            };
            arrays.push(Array::new(shape.clone(), data)?);
            values = &values[need..];
        }
        if !values.is_empty() {
            return Err(bad("trailing bytes after parameter values"));
        }
        let params = Parameters::from_blocks(&header.config, arrays)?;
        if params.names().iter().zip(&header.blocks).any(|(a, (b, _))| a != b) {
            return Err(bad("block names do not match the configuration"));
        }
        Ok(Self {
            config: header.config,
            vocab: header.vocab,
            params,
            provenance: header.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Tokenization};

    fn sample<T: Real>() -> Checkpoint<T> {
        let vocab = Vocabulary::build(&["abc"], Tokenization::Char, 16).unwrap();
        let config = ModelConfig {
            vocab_size: vocab.len(),
            embed_dim: 4,
            hidden_dim: 4,
            encoder_layers: 1,
            decoder_layers: 1,
            heads: 1,
            max_input_len: 6,
            max_output_len: 4,
            init_seed: 9,
        };
        Checkpoint {
            params: init_params(&config).unwrap(),
            config,
            vocab,
            provenance: Provenance {
                method: Some("maml".into()),
                partition: Some("random".into()),
                meta_step: 12,
                validation_score: Some(0.25),
            },
        }
    }

    #[test]
    fn exact_round_trip_f32() {
        let c = sample::<f32>();
        assert_eq!(Checkpoint::<f32>::from_bytes(&c.to_bytes().unwrap()).unwrap(), c);
    }

    #[test]
    fn exact_round_trip_f64_on_disk() {
        let c = sample::<f64>();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ckpt");
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::<f64>::load(&path).unwrap(), c);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample::<f32>().to_bytes().unwrap();
        assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::<f32>::from_bytes(b"garbage").is_err());
    }
}
