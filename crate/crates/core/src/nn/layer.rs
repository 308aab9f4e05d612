use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

/// One node of a sequential layer graph.
///
/// `SkipSave`/`SkipAdd` bracket a residual block: the activation entering
/// `SkipSave` is added to the activation reaching the matching `SkipAdd`.
/// Brackets nest like parentheses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    /// Non-overlapping max pooling along the last (time) axis.
    MaxPool {
        size: usize,
    },
    GlobalAvgPool,
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Flatten,
    SkipSave,
    SkipAdd,
}

impl LayerSpec {
    /// Stride 1, "same" padding, with bias.
    pub fn conv1d(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self::Conv1d {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
            bias: true,
        }
    }

    /// Stride 1, "same" padding, with bias.
    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
            bias: true,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Conv1d { .. } => "conv1d",
            Self::Conv2d { .. } => "conv2d",
            Self::BatchNorm { .. } => "batchnorm",
            Self::Relu => "relu",
            Self::MaxPool { .. } => "maxpool",
            Self::GlobalAvgPool => "global-avg-pool",
            Self::Dense { .. } => "dense",
            Self::Flatten => "flatten",
            Self::SkipSave => "skip-save",
            Self::SkipAdd => "skip-add",
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, Self::Conv1d { .. } | Self::Conv2d { .. })
    }

    /// Shape of the weight tensor, for layers that own one.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            Self::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some(vec![out_channels, in_channels, kernel]),
            Self::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some(vec![out_channels, in_channels, kernel, kernel]),
            Self::Dense {
                in_features,
                out_features,
            } => Some(vec![out_features, in_features]),
            _ => None,
        }
    }

    pub fn has_bias(&self) -> bool {
        match self {
            Self::Conv1d { bias, .. } | Self::Conv2d { bias, .. } => *bias,
            Self::Dense { .. } => true,
            _ => false,
        }
    }

    /// `(stride, padding)` for convolutions.
    pub fn conv_params(&self) -> Option<(usize, usize)> {
        match *self {
            Self::Conv1d {
                stride, padding, ..
            }
            | Self::Conv2d {
                stride, padding, ..
            } => Some((stride, padding)),
            _ => None,
        }
    }

    /// Per-sample output shape given a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            Self::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => match *input {
                [c, l] if c == in_channels => {
                    Ok(vec![out_channels, conv_extent(l, kernel, stride, padding)?])
                }
                _ => shape_err(format!("conv1d expects [{in_channels}, L], got {input:?}")),
            },
            Self::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => match *input {
                [c, h, w] if c == in_channels => Ok(vec![
                    out_channels,
                    conv_extent(h, kernel, stride, padding)?,
                    conv_extent(w, kernel, stride, padding)?,
                ]),
                _ => shape_err(format!(
                    "conv2d expects [{in_channels}, H, W], got {input:?}"
                )),
            },
            Self::BatchNorm { channels } => match input.first() {
                Some(&c) if c == channels => Ok(input.to_vec()),
                _ => shape_err(format!(
                    "batchnorm expects {channels} channels, got {input:?}"
                )),
            },
            Self::Relu | Self::SkipSave | Self::SkipAdd => Ok(input.to_vec()),
            Self::MaxPool { size } => {
                let last = *input.last().expect("non-empty shape");
                if size == 0 || input.len() < 2 || last < size {
                    return shape_err(format!("maxpool of size {size} cannot pool {input:?}"));
                }
                let mut out = input.to_vec();
                *out.last_mut().unwrap() = last / size;
                Ok(out)
            }
            Self::GlobalAvgPool => {
                if input.len() < 2 {
                    return shape_err(format!("global-avg-pool needs spatial axes, got {input:?}"));
                }
                Ok(vec![input[0]])
            }
            Self::Flatten => Ok(vec![input.iter().product()]),
            Self::Dense {
                in_features,
                out_features,
            } => match *input {
                [n] if n == in_features => Ok(vec![out_features]),
                _ => shape_err(format!("dense expects [{in_features}], got {input:?}")),
            },
        }
    }
}

fn conv_extent(n: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 || n + 2 * padding < k {
        return shape_err(format!(
            "conv window {k} (stride {stride}, padding {padding}) does not fit extent {n}"
        ));
    }
    Ok((n + 2 * padding - k) / stride + 1)
}
