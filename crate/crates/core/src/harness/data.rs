//! Windowed sensor datasets: synthetic generation, splitting, batching, and
//! on-disk storage.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Labelled windows `[N, channels, length]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    pub windows: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub domain_tag: String,
}

impl WindowDataset {
    pub fn new(
        windows: Tensor,
        labels: Vec<usize>,
        class_count: usize,
        domain_tag: impl Into<String>,
    ) -> Result<Self> {
        if windows.order() < 2 {
            return shape_err(format!(
                "windows must be [N, ...], got {:?}",
                windows.shape()
            ));
        }
        let n = windows.shape()[0];
        if labels.len() != n {
            return shape_err(format!("{} labels for {n} windows", labels.len()));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: class_count,
            });
        }
        Ok(Self {
            windows,
            labels,
            class_count,
            domain_tag: domain_tag.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-window shape, e.g. `[channels, length]`.
    pub fn window_shape(&self) -> &[usize] {
        &self.windows.shape()[1..]
    }

    pub fn channels(&self) -> usize {
        self.window_shape()[0]
    }

    pub fn window(&self, i: usize) -> &[f64] {
        let n: usize = self.window_shape().iter().product();
        &self.windows.data()[i * n..(i + 1) * n]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Gather `indices` into a batch shaped `[b, sample_shape…]`.
    pub fn batch(&self, indices: &[usize], sample_shape: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let per: usize = self.window_shape().iter().product();
        if per != sample_shape.iter().product::<usize>() {
            return shape_err(format!(
                "windows {:?} cannot feed a model expecting {sample_shape:?}",
                self.window_shape()
            ));
        }
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.window(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(sample_shape);
        Ok((Tensor::new(shape, data)?, labels))
    }

    /// Subset in the order given.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let (windows, labels) = self.batch(indices, self.window_shape())?;
        Self::new(windows, labels, self.class_count, self.domain_tag.clone())
    }
}

/// Stratified split: within every class, a seeded shuffle sends
/// `round(train_fraction · count)` windows to the first set.
pub fn split_indices(
    d: &WindowDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} not in [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..d.class_count {
        let mut idx: Vec<usize> = (0..d.len()).filter(|&i| d.labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let k = (train_fraction * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Per-class signal family. Class `c` has a gravity-like offset vector that
/// rotates with `c` in the plane of the first two channels of every channel
/// triplet, plus an oscillation with class-specific frequency and channel
/// phase coupling.
#[derive(Debug, Clone)]
struct ClassFamily {
    offset: Vec<f64>,
    amplitude: Vec<f64>,
    phase: Vec<f64>,
    cycles: f64,
}

const OFFSET_STEP_DEG: f64 = 60.0;
const NOISE_STD: f64 = 0.25;

fn class_family(c: usize, channels: usize) -> ClassFamily {
    let angle = (c as f64 * OFFSET_STEP_DEG).to_radians();
    let tilt = 0.3 * ((c % 3) as f64 - 1.0);
    let mut offset = vec![0.0; channels];
    let mut amplitude = vec![0.0; channels];
    let mut phase = vec![0.0; channels];
    for ch in 0..channels {
        offset[ch] = match ch % 3 {
            0 => angle.cos(),
            1 => angle.sin(),
            _ => tilt,
        } / (1 + ch / 3) as f64;
        amplitude[ch] = 0.4 + 0.3 * (((c + 2 * ch) % 4) as f64) / 3.0;
        phase[ch] = (c as f64 + 1.0) * ch as f64 * PI / 3.0;
    }
    ClassFamily {
        offset,
        amplitude,
        phase,
        cycles: 1.0 + (c / 2) as f64 + 0.5 * (c % 2) as f64,
    }
}

/// Balanced synthetic dataset: `n_per_class` windows of `[channels, length]`
/// for each class, in class-interleaved order. Deterministic per seed; the
/// class families themselves do not depend on the seed.
pub fn gen_synthetic(
    classes: usize,
    channels: usize,
    length: usize,
    n_per_class: usize,
    seed: u64,
) -> Result<WindowDataset> {
    if classes == 0 || channels == 0 || length == 0 || n_per_class == 0 {
        return Err(Error::InvalidArgument(
            "all dataset sizes must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let families: Vec<ClassFamily> = (0..classes).map(|c| class_family(c, channels)).collect();
    let n = classes * n_per_class;
    let mut data = Vec::with_capacity(n * channels * length);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n_per_class {
        for (c, fam) in families.iter().enumerate() {
            let theta = rng.random_range(0.0..2.0 * PI);
            let gain = rng.random_range(0.8..1.2);
            let cycles = fam.cycles * rng.random_range(0.9..1.1);
            for ch in 0..channels {
                for t in 0..length {
                    let arg = 2.0 * PI * cycles * t as f64 / length as f64 + theta + fam.phase[ch];
                    let v = fam.offset[ch]
                        + gain * fam.amplitude[ch] * arg.sin()
                        + noise.sample(&mut rng);
                    data.push(v);
                }
            }
            labels.push(c);
        }
    }
    WindowDataset::new(
        Tensor::new(vec![n, channels, length], data)?,
        labels,
        classes,
        format!("synthetic-{seed}"),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    format_version: u32,
    shape: Vec<usize>,
    class_count: usize,
    domain_tag: String,
    windows_file: String,
    labels_file: String,
}

const DATASET_VERSION: u32 = 1;
const META_FILE: &str = "meta.json";
const WINDOWS_FILE: &str = "windows.bin";
const LABELS_FILE: &str = "labels.bin";

/// Write `meta.json`, `windows.bin` (little-endian f64) and `labels.bin`
/// (little-endian u32).
pub fn save_dataset(d: &WindowDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let meta = DatasetMeta {
        format_version: DATASET_VERSION,
        shape: d.windows.shape().to_vec(),
        class_count: d.class_count,
        domain_tag: d.domain_tag.clone(),
        windows_file: WINDOWS_FILE.into(),
        labels_file: LABELS_FILE.into(),
    };
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    fs::write(dir.join(META_FILE), text)?;
    let windows: Vec<u8> = d
        .windows
        .data()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    fs::write(dir.join(WINDOWS_FILE), windows)?;
    let labels: Vec<u8> = d
        .labels
        .iter()
        .flat_map(|&l| (l as u32).to_le_bytes())
        .collect();
    fs::write(dir.join(LABELS_FILE), labels)?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<WindowDataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let meta: DatasetMeta =
        serde_json::from_str(&fs::read_to_string(&meta_path)?).map_err(|e| Error::Format {
            path: meta_path.clone(),
            msg: e.to_string(),
        })?;
    if meta.format_version != DATASET_VERSION {
        return Err(Error::Version {
            found: meta.format_version,
            expected: DATASET_VERSION,
        });
    }
    let wpath = dir.join(&meta.windows_file);
    let wbytes = fs::read(&wpath)?;
    let total: usize = meta.shape.iter().product();
    if wbytes.len() != total * 8 {
        return Err(Error::Format {
            path: wpath,
            msg: format!("expected {} bytes, found {}", total * 8, wbytes.len()),
        });
    }
    let windows: Vec<f64> = wbytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let lpath = dir.join(&meta.labels_file);
    let lbytes = fs::read(&lpath)?;
    let n = meta.shape.first().copied().unwrap_or(0);
    if lbytes.len() != n * 4 {
        return Err(Error::Format {
            path: lpath,
            msg: format!("expected {} bytes, found {}", n * 4, lbytes.len()),
        });
    }
    let labels: Vec<usize> = lbytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    WindowDataset::new(
        Tensor::new(meta.shape, windows)?,
        labels,
        meta.class_count,
        meta.domain_tag,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let a = gen_synthetic(4, 3, 32, 50, 7).unwrap();
        let b = gen_synthetic(4, 3, 32, 50, 7).unwrap();
        assert!(a.windows.bit_eq(&b.windows));
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.len(), 200);
        assert_eq!(a.class_counts(), vec![50; 4]);
        let c = gen_synthetic(4, 3, 32, 50, 8).unwrap();
        assert!(!a.windows.bit_eq(&c.windows));
    }

    #[test]
    fn rejects_zero_sizes() {
        assert!(gen_synthetic(0, 3, 32, 5, 1).is_err());
        assert!(gen_synthetic(2, 3, 32, 0, 1).is_err());
    }

    #[test]
    fn stratified_split() {
        let d = gen_synthetic(4, 3, 16, 25, 1).unwrap();
        let (train, test) = split_indices(&d, 0.8, 3).unwrap();
        assert_eq!(train.len() + test.len(), 100);
        assert_eq!(train.len(), 4 * 20);
        let tr = d.subset(&train).unwrap();
        assert_eq!(tr.class_counts(), vec![20; 4]);
        assert!(train.iter().all(|i| !test.contains(i)));
    }

    #[test]
    fn dataset_round_trip() {
        let d = gen_synthetic(3, 3, 8, 4, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert!(back.windows.bit_eq(&d.windows));
        assert_eq!(back.labels, d.labels);
        assert_eq!(back.domain_tag, d.domain_tag);

        let wpath = dir.path().join(WINDOWS_FILE);
        let bytes = fs::read(&wpath).unwrap();
        fs::write(&wpath, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::Format { .. })
        ));
    }
}
