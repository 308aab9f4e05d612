//! Synthetic domain shifts applied to whole datasets.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::data::WindowDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A label-preserving transformation of every window.
///
/// String form (CLI): `none`, `rotation:DEG[:AXIS]` with AXIS one of
/// `x`/`y`/`z`, `permute:I,J,…`, `gain-offset:GAIN,OFFSET`,
/// `user-style:MAGNITUDE[:SEED]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ShiftSpec {
    None,
    /// Rotate every consecutive channel triplet (sensor axes) by `degrees`
    /// about a unit axis.
    Rotation {
        degrees: f64,
        axis: [f64; 3],
    },
    /// Output channel `i` takes input channel `perm[i]`.
    ChannelPermutation {
        perm: Vec<usize>,
    },
    /// `x' = gain · x + offset` on every channel.
    GainOffset {
        gain: f64,
        offset: f64,
    },
    /// Seeded per-channel gains and offsets plus weak cross-channel mixing,
    /// all scaled by `magnitude`.
    UserStyle {
        magnitude: f64,
        seed: u64,
    },
}

impl ShiftSpec {
    pub fn rotation_z(degrees: f64) -> Self {
        Self::Rotation {
            degrees,
            axis: [0.0, 0.0, 1.0],
        }
    }

    /// Channel-mixing matrix `[C, C]` and per-channel offsets, so that
    /// `x' = M x + o` for every time step.
    fn affine(&self, channels: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut m = vec![0.0; channels * channels];
        for i in 0..channels {
            m[i * channels + i] = 1.0;
        }
        let mut o = vec![0.0; channels];
        match self {
            Self::None => {}
            Self::Rotation { degrees, axis } => {
                if !channels.is_multiple_of(3) {
                    return Err(Error::InvalidArgument(format!(
                        "rotation needs channel triplets, dataset has {channels} channels"
                    )));
                }
                let r = rotation_matrix(*degrees, *axis)?;
                for t in 0..channels / 3 {
                    for i in 0..3 {
                        for j in 0..3 {
                            m[(3 * t + i) * channels + 3 * t + j] = r[i][j];
                        }
                    }
                }
            }
            Self::ChannelPermutation { perm } => {
                let mut seen = vec![false; channels];
                if perm.len() != channels
                    || perm
                        .iter()
                        .any(|&p| p >= channels || std::mem::replace(&mut seen[p], true))
                {
                    return Err(Error::InvalidArgument(format!(
                        "{perm:?} is not a permutation of {channels} channels"
                    )));
                }
                m.iter_mut().for_each(|v| *v = 0.0);
                for (i, &p) in perm.iter().enumerate() {
                    m[i * channels + p] = 1.0;
                }
            }
            Self::GainOffset { gain, offset } => {
                for i in 0..channels {
                    m[i * channels + i] = *gain;
                    o[i] = *offset;
                }
            }
            Self::UserStyle { magnitude, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
                for i in 0..channels {
                    for j in 0..channels {
                        let e = if i == j { draw() } else { 0.5 * draw() };
                        m[i * channels + j] += magnitude * e;
                    }
                    o[i] = magnitude * draw();
                }
            }
        }
        Ok((m, o))
    }
}

fn rotation_matrix(degrees: f64, axis: [f64; 3]) -> Result<[[f64; 3]; 3]> {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::InvalidArgument(
            "rotation axis must be non-zero".into(),
        ));
    }
    let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
    let (s, c) = degrees.to_radians().sin_cos();
    let t = 1.0 - c;
    Ok([
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ])
}

/// Transformed copy of `d`; labels and shape are preserved.
pub fn apply_shift(d: &WindowDataset, s: &ShiftSpec) -> Result<WindowDataset> {
    if matches!(s, ShiftSpec::None) {
        return Ok(d.clone());
    }
    let channels = d.channels();
    let (m, o) = s.affine(channels)?;
    let per_channel: usize = d.window_shape()[1..].iter().product();
    let src = d.windows.data();
    let mut out = vec![0.0; src.len()];
    for n in 0..d.len() {
        let base = n * channels * per_channel;
        for i in 0..channels {
            let dst = &mut out[base + i * per_channel..base + (i + 1) * per_channel];
            dst.iter_mut().for_each(|v| *v = o[i]);
            for j in 0..channels {
                let w = m[i * channels + j];
                if w == 0.0 {
                    continue;
                }
                let row = &src[base + j * per_channel..base + (j + 1) * per_channel];
                for (v, &x) in dst.iter_mut().zip(row) {
                    *v += w * x;
                }
            }
        }
    }
    WindowDataset::new(
        Tensor::new(d.windows.shape().to_vec(), out)?,
        d.labels.clone(),
        d.class_count,
        format!("{}+{s}", d.domain_tag),
    )
}

impl fmt::Display for ShiftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::None => write!(f, "none"),
            Self::Rotation { degrees, axis } => match axis {
                [1.0, 0.0, 0.0] => write!(f, "rotation:{degrees}:x"),
                [0.0, 1.0, 0.0] => write!(f, "rotation:{degrees}:y"),
                [0.0, 0.0, 1.0] => write!(f, "rotation:{degrees}"),
                a => write!(f, "rotation:{degrees}:{},{},{}", a[0], a[1], a[2]),
            },
            Self::ChannelPermutation { perm } => {
                let p: Vec<String> = perm.iter().map(ToString::to_string).collect();
                write!(f, "permute:{}", p.join(","))
            }
            Self::GainOffset { gain, offset } => write!(f, "gain-offset:{gain},{offset}"),
            Self::UserStyle { magnitude, seed } => write!(f, "user-style:{magnitude}:{seed}"),
        }
    }
}

impl TryFrom<String> for ShiftSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ShiftSpec> for String {
    fn from(s: ShiftSpec) -> String {
        s.to_string()
    }
}

impl FromStr for ShiftSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("cannot parse shift {s:?}"));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        match (kind, args.as_slice()) {
            ("none", []) => Ok(Self::None),
            ("rotation", [deg]) => Ok(Self::rotation_z(num(deg)?)),
            ("rotation", [deg, axis]) => {
                let axis = match *axis {
                    "x" => [1.0, 0.0, 0.0],
                    "y" => [0.0, 1.0, 0.0],
                    "z" => [0.0, 0.0, 1.0],
                    other => {
                        let v = other.split(',').map(num).collect::<Result<Vec<_>>>()?;
                        <[f64; 3]>::try_from(v).map_err(|_| bad())?
                    }
                };
                Ok(Self::Rotation {
                    degrees: num(deg)?,
                    axis,
                })
            }
            ("permute", [list]) => Ok(Self::ChannelPermutation {
                perm: list
                    .split(',')
                    .map(|t| t.trim().parse::<usize>().map_err(|_| bad()))
                    .collect::<Result<_>>()?,
            }),
            ("gain-offset", [pair]) => match pair.split(',').collect::<Vec<_>>().as_slice() {
                [g, o] => Ok(Self::GainOffset {
                    gain: num(g)?,
                    offset: num(o)?,
                }),
                _ => Err(bad()),
            },
            ("user-style", [mag]) => Ok(Self::UserStyle {
                magnitude: num(mag)?,
                seed: 0,
            }),
            ("user-style", [mag, seed]) => Ok(Self::UserStyle {
                magnitude: num(mag)?,
                seed: seed.trim().parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}
