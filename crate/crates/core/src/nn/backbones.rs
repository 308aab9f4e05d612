//! Toy backbones named after the CNNs used for activity recognition.
//!
//! These are deliberately small. `mobilenet-toy` uses standard (not
//! depthwise) convolutions.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::LayerSpec;
use super::model::Model;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backbone {
    #[serde(rename = "tresnet-toy")]
    TResNetToy,
    #[serde(rename = "mobilenet-toy")]
    MobileNetToy,
    #[serde(rename = "calanet-toy")]
    CalaNetToy,
}

/// How a `[channels, length]` sensor window is fed to a backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputLayout {
    /// `[channels, length]`, convolved along time.
    Sequence,
    /// `[1, channels, length]`, a single-plane image.
    Image,
}

impl InputLayout {
    pub fn sample_shape(self, channels: usize, length: usize) -> Vec<usize> {
        match self {
            Self::Sequence => vec![channels, length],
            Self::Image => vec![1, channels, length],
        }
    }
}

impl Backbone {
    pub const ALL: [Backbone; 3] = [Self::TResNetToy, Self::MobileNetToy, Self::CalaNetToy];

    pub fn name(self) -> &'static str {
        match self {
            Self::TResNetToy => "tresnet-toy",
            Self::MobileNetToy => "mobilenet-toy",
            Self::CalaNetToy => "calanet-toy",
        }
    }

    pub fn layout(self) -> InputLayout {
        match self {
            Self::CalaNetToy => InputLayout::Sequence,
            Self::TResNetToy | Self::MobileNetToy => InputLayout::Image,
        }
    }

    pub fn layers(self, channels: usize, classes: usize) -> Vec<LayerSpec> {
        use LayerSpec::*;
        match self {
            Self::CalaNetToy => vec![
                LayerSpec::conv1d(channels, 8, 3),
                BatchNorm { channels: 8 },
                Relu,
                LayerSpec::conv1d(8, 16, 3),
                BatchNorm { channels: 16 },
                Relu,
                MaxPool { size: 2 },
                LayerSpec::conv1d(16, 32, 3),
                BatchNorm { channels: 32 },
                Relu,
                GlobalAvgPool,
                Dense {
                    in_features: 32,
                    out_features: classes,
                },
            ],
            Self::MobileNetToy => vec![
                LayerSpec::conv2d(1, 4, 3),
                BatchNorm { channels: 4 },
                Relu,
                LayerSpec::conv2d(4, 8, 3),
                BatchNorm { channels: 8 },
                Relu,
                MaxPool { size: 2 },
                LayerSpec::conv2d(8, 16, 3),
                BatchNorm { channels: 16 },
                Relu,
                GlobalAvgPool,
                Dense {
                    in_features: 16,
                    out_features: classes,
                },
            ],
            Self::TResNetToy => {
                let mut layers = vec![LayerSpec::conv2d(1, 8, 3), BatchNorm { channels: 8 }, Relu];
                for _ in 0..2 {
                    layers.extend([
                        SkipSave,
                        LayerSpec::conv2d(8, 8, 3),
                        BatchNorm { channels: 8 },
                        Relu,
                        LayerSpec::conv2d(8, 8, 3),
                        BatchNorm { channels: 8 },
                        SkipAdd,
                        Relu,
                    ]);
                }
                layers.extend([
                    GlobalAvgPool,
                    Dense {
                        in_features: 8,
                        out_features: classes,
                    },
                ]);
                layers
            }
        }
    }

    pub fn build<R: Rng + ?Sized>(
        self,
        channels: usize,
        length: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Model> {
        Model::new(
            self.layout().sample_shape(channels, length),
            self.layers(channels, classes),
            rng,
        )
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown backbone {s:?}")))
    }
}
