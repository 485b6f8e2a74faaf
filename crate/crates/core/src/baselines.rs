//! Comparison models: a LeNet-style 1D CNN and the residual model with its
//! shortcuts removed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_proposed_model, output_dim, proposed_specs, LayerSpec, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    LeNet1D,
    SkiplessProposed,
}

pub fn lenet_specs(output_dim: usize) -> Vec<LayerSpec> {
    let conv = |channels| LayerSpec::Conv {
        channels,
        kernel_size: 5,
        stride: 1,
        padding: 0,
    };
    vec![
        conv(6),
        LayerSpec::AvgPool { size: 2 },
        conv(16),
        LayerSpec::AvgPool { size: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense {
            units: 120,
            relu: true,
        },
        LayerSpec::Dense {
            units: 84,
            relu: true,
        },
        LayerSpec::Dense {
            units: output_dim,
            relu: false,
        },
    ]
}

pub fn build_baseline(
    kind: BaselineKind,
    num_classes: usize,
    input_length: usize,
    seed: u64,
) -> Result<Model> {
    if input_length < 16 {
        return Err(Error::InvalidConfig(format!(
            "input length {input_length} is too short for the downsampling chain (need >= 16)"
        )));
    }
    let specs = match kind {
        BaselineKind::LeNet1D => lenet_specs(output_dim(num_classes)),
        BaselineKind::SkiplessProposed => proposed_specs(output_dim(num_classes), false),
    };
    Model::build(specs, num_classes, input_length, seed)
}

/// Every model the trainer can build by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Proposed,
    Skipless,
    LeNet,
}

impl Architecture {
    pub fn build(self, num_classes: usize, input_length: usize, seed: u64) -> Result<Model> {
        match self {
            Architecture::Proposed => build_proposed_model(num_classes, input_length, seed),
            Architecture::Skipless => build_baseline(
                BaselineKind::SkiplessProposed,
                num_classes,
                input_length,
                seed,
            ),
            Architecture::LeNet => {
                build_baseline(BaselineKind::LeNet1D, num_classes, input_length, seed)
            }
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "proposed" | "resnet" => Ok(Architecture::Proposed),
            "skipless" => Ok(Architecture::Skipless),
            "lenet" | "lenet1d" => Ok(Architecture::LeNet),
            other => Err(Error::InvalidParameter(format!(
                "unknown architecture '{other}' (expected proposed, skipless or lenet)"
            ))),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Proposed => "proposed",
            Architecture::Skipless => "skipless",
            Architecture::LeNet => "lenet",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::rng_normal;

    #[test]
    fn lenet_shapes() {
        let m = build_baseline(BaselineKind::LeNet1D, 5, 178, 3).unwrap();
        let x = rng_normal(1, &[1, 178], 0.0, 1.0).unwrap();
        assert_eq!(m.logits(&x).unwrap().shape(), &[5]);
        assert_eq!(m.shape_chain()[4], vec![16, 41]);
        assert_eq!(m.shape_chain()[5], vec![656]);
    }

    #[test]
    fn skipless_has_fewer_parameters() {
        let full = build_proposed_model(5, 178, 3).unwrap();
        let plain = build_baseline(BaselineKind::SkiplessProposed, 5, 178, 3).unwrap();
        assert!(plain.parameter_count() < full.parameter_count());
        assert!(plain.params().iter().all(|p| !p.name.contains("shortcut")));
    }

    #[test]
    fn baselines_are_deterministic() {
        for kind in [BaselineKind::LeNet1D, BaselineKind::SkiplessProposed] {
            assert_eq!(
                build_baseline(kind, 2, 178, 5).unwrap(),
                build_baseline(kind, 2, 178, 5).unwrap()
            );
        }
        assert!(build_baseline(BaselineKind::LeNet1D, 5, 8, 0).is_err());
        assert_eq!(
            "LeNet".parse::<Architecture>().unwrap(),
            Architecture::LeNet
        );
    }
}
