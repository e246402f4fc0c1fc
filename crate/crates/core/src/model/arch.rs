use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::autodiff::{initialize_weights, read_checkpoint, write_checkpoint, Tensor};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::scene::{DEPTH_BINS, MATERIAL_CLASSES};

/// Channel widths of the network. The encoder downsamples by 8, the decoders
/// upsample by 4, so the label maps are half the input resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub input_size: usize,
    pub stem: usize,
    pub mid: usize,
    /// Encoder output channels, split in half between the two decoders.
    pub features: usize,
    pub decoder: usize,
    pub cls_hidden: usize,
    pub reg_conv1: usize,
    pub reg_conv2: usize,
    pub reg_hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            input_size: 32,
            stem: 8,
            mid: 16,
            features: 32,
            decoder: 16,
            cls_hidden: 32,
            reg_conv1: 16,
            reg_conv2: 32,
            reg_hidden: 64,
        }
    }
}

/// Width of the residual encoding: a 4-entry one-hot difference for the
/// light type plus the intensity change.
pub const RESIDUAL_DIM: usize = 5;

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size < 8 || !self.input_size.is_multiple_of(8) {
            return Err(Error::validation(format!(
                "input size {} must be a positive multiple of 8",
                self.input_size
            )));
        }
        if self.features < 2 || !self.features.is_multiple_of(2) {
            return Err(Error::validation("encoder feature count must be even"));
        }
        let widths = [
            self.stem,
            self.mid,
            self.decoder,
            self.cls_hidden,
            self.reg_conv1,
            self.reg_conv2,
            self.reg_hidden,
        ];
        if widths.contains(&0) {
            return Err(Error::validation("layer widths must be positive"));
        }
        Ok(())
    }

    /// Side of the encoder feature map.
    pub fn feature_size(&self) -> usize {
        self.input_size / 8
    }

    /// Side of the depth and material logit maps.
    pub fn label_size(&self) -> usize {
        self.feature_size() * 4
    }

    fn as_values(&self) -> [usize; 9] {
        [
            self.input_size,
            self.stem,
            self.mid,
            self.features,
            self.decoder,
            self.cls_hidden,
            self.reg_conv1,
            self.reg_conv2,
            self.reg_hidden,
        ]
    }

    fn from_values(v: &[f32]) -> Result<Self> {
        if v.len() != 9 || v.iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
            return Err(Error::Checkpoint("malformed architecture record".into()));
        }
        let u = |i: usize| v[i] as usize;
        let arch = ArchConfig {
            input_size: u(0),
            stem: u(1),
            mid: u(2),
            features: u(3),
            decoder: u(4),
            cls_hidden: u(5),
            reg_conv1: u(6),
            reg_conv2: u(7),
            reg_hidden: u(8),
        };
        arch.validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(arch)
    }

    /// Name and shape of every trainable tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let half = self.features / 2;
        let flat = self.features * self.feature_size() * self.feature_size();
        let mut out = Vec::new();
        let mut conv = |name: &str, o: usize, c: usize, k: usize| {
            out.push((format!("{name}.w"), vec![o, c, k, k]));
            out.push((format!("{name}.b"), vec![o]));
        };
        conv("enc.stem", self.stem, 1, 3);
        conv("enc.down1", self.mid, self.stem, 3);
        conv("enc.down2", self.mid, self.mid, 3);
        conv("enc.res1", self.mid, self.mid, 3);
        conv("enc.res2", self.mid, self.mid, 3);
        conv("enc.down3", self.features, self.mid, 3);
        conv("dep.conv", self.decoder, half, 3);
        conv("dep.out", DEPTH_BINS, self.decoder, 1);
        conv("mat.conv", self.decoder, half, 3);
        conv("mat.out", MATERIAL_CLASSES, self.decoder, 1);
        conv("reg.conv1", self.reg_conv1, 6, 3);
        conv("reg.conv2", self.reg_conv2, self.reg_conv1, 3);
        let mut dense = |name: &str, i: usize, o: usize| {
            out.push((format!("{name}.w"), vec![i, o]));
            out.push((format!("{name}.b"), vec![o]));
        };
        dense("cls.fc1", flat, self.cls_hidden);
        dense("cls.fc2", self.cls_hidden, 1);
        dense("reg.fc1", self.reg_conv2, self.reg_hidden);
        dense("reg.fc2", self.reg_hidden, RESIDUAL_DIM);
        out
    }
}

/// Weights of the encoder, both decoders, the classifier and the
/// regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<f32>>,
}

const ARCH_RECORD: &str = "meta.arch";

impl ModelParams {
    /// Kaiming-normal weights, zero biases. Convolution kernels are
    /// `[out, in, k, k]` and dense matrices `[in, out]`.
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let (names, tensors) = arch
            .layout()
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape))| {
                let t = if name.ends_with(".b") {
                    Tensor::zeros(shape)
                } else {
                    let fan_in = if shape.len() == 4 {
                        shape[1..].iter().product()
                    } else {
                        shape[0]
                    };
                    initialize_weights(&shape, fan_in, derive_seed(seed, i as u64))
                };
                (name, t)
            })
            .unzip();
        Ok(ModelParams {
            arch,
            names,
            tensors,
        })
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub(crate) fn index(&self, name: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn save<W: Write>(&self, out: W) -> Result<()> {
        let mut records = vec![(
            ARCH_RECORD.to_string(),
            Tensor {
                shape: vec![9],
                data: self.arch.as_values().iter().map(|&v| v as f32).collect(),
            },
        )];
        records.extend(self.names.iter().cloned().zip(self.tensors.iter().cloned()));
        write_checkpoint(out, &records)
    }

    pub fn load<R: Read>(input: R) -> Result<Self> {
        let mut records = read_checkpoint(input)?;
        if records.first().map(|r| r.0.as_str()) != Some(ARCH_RECORD) {
            return Err(Error::Checkpoint("missing architecture record".into()));
        }
        let arch = ArchConfig::from_values(&records.remove(0).1.data)?;
        let layout = arch.layout();
        if layout.len() != records.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                layout.len(),
                records.len()
            )));
        }
        for ((name, shape), (found, t)) in layout.iter().zip(&records) {
            if name != found || *shape != t.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {found} {:?} does not match {name} {shape:?}",
                    t.shape
                )));
            }
        }
        let (names, tensors) = records.into_iter().unzip();
        Ok(ModelParams {
            arch,
            names,
            tensors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let p = ModelParams::init(ArchConfig::default(), 3).unwrap();
        let mut buf = Vec::new();
        p.save(&mut buf).unwrap();
        assert_eq!(ModelParams::load(&buf[..]).unwrap(), p);
    }

    #[test]
    fn mismatched_checkpoint_is_rejected() {
        let p = ModelParams::init(ArchConfig::default(), 3).unwrap();
        let mut records: Vec<(String, Tensor<f32>)> = p
            .names
            .iter()
            .cloned()
            .zip(p.tensors.iter().cloned())
            .collect();
        records.insert(
            0,
            (
                ARCH_RECORD.into(),
                Tensor {
                    shape: vec![9],
                    data: [32.0, 8.0, 16.0, 64.0, 16.0, 32.0, 8.0, 16.0, 32.0].to_vec(),
                },
            ),
        );
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &records).unwrap();
        assert!(matches!(
            ModelParams::load(&buf[..]),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn invalid_architectures() {
        let bad = ArchConfig {
            input_size: 20,
            ..ArchConfig::default()
        };
        assert!(bad.validate().is_err());
        let odd = ArchConfig {
            features: 15,
            ..ArchConfig::default()
        };
        assert!(odd.validate().is_err());
    }

    #[test]
    fn default_sizes() {
        let a = ArchConfig::default();
        assert_eq!(a.feature_size(), 4);
        assert_eq!(a.label_size(), 16);
        let p = ModelParams::init(a, 0).unwrap();
        assert!(p.count() > 10_000);
    }
}
