//! Checkpoint files.
//!
//! Layout:
//!
//! ```text
//! EPICONV-CKPT\n
//! u64 LE   header length in bytes
//! [header] JSON: format version, architecture, job, class names,
//!          feature statistics, training metadata, parameter names/shapes
//! per parameter, in header order:
//!   u64 LE element count
//!   f64 LE values
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::Architecture;
use crate::data::{FeatureStats, Job};
use crate::error::{Error, Result};
use crate::model::{LayerSpec, Model, Param};
use crate::tensor::Tensor;
use crate::training::TrainConfig;

pub const MAGIC: &[u8] = b"EPICONV-CKPT\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub architecture: Architecture,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub seed: u64,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub job: Job,
    pub class_names: Vec<String>,
    pub feature_stats: Option<FeatureStats>,
    pub training: Option<TrainingMetadata>,
}

#[derive(Serialize, Deserialize)]
struct ArchitectureHeader {
    layers: Vec<LayerSpec>,
    num_classes: usize,
    input_length: usize,
}

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    architecture: ArchitectureHeader,
    job: Job,
    class_names: Vec<String>,
    feature_stats: Option<FeatureStats>,
    training: Option<TrainingMetadata>,
    params: Vec<ParamHeader>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt(format!("truncated file while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format_version: FORMAT_VERSION,
            architecture: ArchitectureHeader {
                layers: self.model.specs().to_vec(),
                num_classes: self.model.num_classes(),
                input_length: self.model.input_length(),
            },
            job: self.job,
            class_names: self.class_names.clone(),
            feature_stats: self.feature_stats.clone(),
            training: self.training.clone(),
            params: self
                .model
                .params()
                .iter()
                .map(|p| ParamHeader {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec_pretty(&header).expect("header serialises");
        let mut out =
            Vec::with_capacity(MAGIC.len() + 8 + json.len() + self.model.parameter_count() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.model.params() {
            out.extend_from_slice(&(p.value.len() as u64).to_le_bytes());
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut cur = Cursor { buf, pos: 0 };
        if cur.take(MAGIC.len(), "magic").ok() != Some(MAGIC) {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let header_len = cur.u64("header length")?;
        let header_len =
            usize::try_from(header_len).map_err(|_| corrupt("header length overflows"))?;
        let raw = cur.take(header_len, "header")?;
        let value: serde_json::Value = serde_json::from_slice(raw)
            .map_err(|e| corrupt(format!("header is not valid JSON: {e}")))?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| corrupt("header lacks format_version"))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(Error::UnsupportedVersion(
                u32::try_from(version).unwrap_or(u32::MAX),
            ));
        }
        let header: Header =
            serde_json::from_value(value).map_err(|e| corrupt(format!("malformed header: {e}")))?;

        let mut params = Vec::with_capacity(header.params.len());
        for ph in header.params {
            let count = cur.u64(&ph.name)?;
            let expected: usize = ph.shape.iter().product();
            if count != expected as u64 {
                return Err(corrupt(format!(
                    "{} declares shape {:?} but stores {count} values",
                    ph.name, ph.shape
                )));
            }
            let bytes = cur.take(expected.saturating_mul(8), &ph.name)?;
            let data = bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            let value = Tensor::from_vec(&ph.shape, data)
                .map_err(|e| corrupt(format!("{}: {e}", ph.name)))?;
            params.push(Param {
                name: ph.name,
                value,
            });
        }
        if cur.pos != buf.len() {
            return Err(corrupt(format!(
                "{} trailing bytes after weights",
                buf.len() - cur.pos
            )));
        }
        let arch = header.architecture;
        let model = Model::from_parts(arch.layers, arch.num_classes, arch.input_length, params)
            .map_err(|e| corrupt(format!("weights do not match architecture: {e}")))?;
        if header.class_names.len() != model.num_classes()
            || header.job.num_classes() != model.num_classes()
        {
            return Err(corrupt(format!(
                "job {} with classes {:?} does not match a {}-class model",
                header.job,
                header.class_names,
                model.num_classes()
            )));
        }
        if let Some(stats) = &header.feature_stats {
            if stats.mean.len() != model.input_length() || stats.std.len() != model.input_length() {
                return Err(corrupt("feature statistics do not match the input length"));
            }
        }
        Ok(Self {
            model,
            job: header.job,
            class_names: header.class_names,
            feature_stats: header.feature_stats,
            training: header.training,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_proposed_model;
    use crate::tensor::rng_normal;
    use proptest::prelude::*;

    fn sample_checkpoint(seed: u64) -> Checkpoint {
        let mut model = build_proposed_model(5, 32, seed).unwrap();
        let n = model.params().len();
        model.params_mut()[n - 2].value = rng_normal(seed, &[5, 64], 0.0, 0.3).unwrap();
        Checkpoint {
            model,
            job: Job::FiveClass,
            class_names: Job::FiveClass.class_names(),
            feature_stats: Some(FeatureStats {
                mean: rng_normal(seed + 1, &[32], 0.0, 10.0).unwrap().into_data(),
                std: rng_normal(seed + 2, &[32], 5.0, 1.0).unwrap().into_data(),
            }),
            training: Some(TrainingMetadata {
                architecture: Architecture::Proposed,
                best_epoch: 3,
                best_val_loss: 0.123_456_789_012_345_67,
                seed,
                config: TrainConfig::new(Job::FiveClass, seed),
            }),
        }
    }

    fn with_version(bytes: &[u8], version: u32) -> Vec<u8> {
        let len =
            u64::from_le_bytes(bytes[MAGIC.len()..MAGIC.len() + 8].try_into().unwrap()) as usize;
        let start = MAGIC.len() + 8;
        let mut header: serde_json::Value =
            serde_json::from_slice(&bytes[start..start + len]).unwrap();
        header["format_version"] = version.into();
        let json = serde_json::to_vec(&header).unwrap();
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&bytes[start + len..]);
        out
    }

    #[test]
    fn round_trip_predictions_are_identical() {
        let ckpt = sample_checkpoint(4);
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        assert_eq!(back, ckpt);
        let x = rng_normal(9, &[1, 32], 0.0, 1.0).unwrap();
        assert_eq!(
            back.model.logits(&x).unwrap(),
            ckpt.model.logits(&x).unwrap()
        );
    }

    #[test]
    fn truncation_and_garbage_are_clean_errors() {
        let bytes = sample_checkpoint(1).to_bytes();
        for cut in [
            0,
            5,
            MAGIC.len() + 4,
            MAGIC.len() + 20,
            bytes.len() / 2,
            bytes.len() - 1,
        ] {
            assert!(
                matches!(
                    Checkpoint::from_bytes(&bytes[..cut]),
                    Err(Error::Checkpoint(_))
                ),
                "cut {cut}"
            );
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn unknown_version_is_rejected() {
        let bytes = sample_checkpoint(1).to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&with_version(&bytes, 2)),
            Err(Error::UnsupportedVersion(2))
        ));
        assert!(Checkpoint::from_bytes(&with_version(&bytes, 1)).is_ok());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ckpt = sample_checkpoint(2);
        save_checkpoint(&ckpt, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
        assert!(matches!(
            load_checkpoint(dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn weights_survive_bit_exactly(seed in any::<u64>(), scale in -1e300f64..1e300) {
            let mut ckpt = sample_checkpoint(seed % 1000);
            ckpt.model.params_mut()[0].value.data_mut()[0] = scale;
            ckpt.model.params_mut()[1].value.data_mut()[0] = f64::MIN_POSITIVE / 3.0;
            let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
            for (a, b) in ckpt.model.params().iter().zip(back.model.params()) {
                let bits_a: Vec<u64> = a.value.data().iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u64> = b.value.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
            }
        }
    }
}
