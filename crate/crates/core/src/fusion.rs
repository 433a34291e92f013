//! Hand-object interaction probability from pose, hand-mask and object-mask
//! cues.
//!
//! Deterministic cue features (pooled grids plus scalar descriptors) feed a
//! one-hidden-layer classifier with a logistic output. Each cue can be
//! ablated, zeroing its feature block, to measure how much it contributes.
//! Gradients are analytic; `loss_and_grad` is checked against finite
//! differences in the tests.

use crate::heatmap::{self, HeatmapStack};
use crate::raster::{MaskRaster, MaskRole, RasterError};
use crate::rng::Stream;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::Path;
use thiserror::Error;

/// Side length of the per-cue mean-pooled grid.
pub const POOLED_GRID: usize = 8;

/// Scalar descriptors appended after the three pooled grids: hand area,
/// object area, hand-object overlap, object-to-hand distance, pose peak
/// mean, pose spread radius.
pub const SCALAR_COUNT: usize = 6;

pub const FEATURE_LEN: usize = 3 * POOLED_GRID * POOLED_GRID + SCALAR_COUNT;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("feature length {got} does not match the model ({expected})")]
    FeatureLenMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("training set must contain both classes")]
    SingleClassDataset,
    #[error("model file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub pose: bool,
    pub hand: bool,
    pub object: bool,
}

/// Fixed-length cue feature vector. Ablated cue blocks are exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CueFeatures {
    pub values: Vec<f64>,
    pub ablate: AblationFlags,
}

/// Extract the fusion features from one frame's cue rasters.
///
/// The two masks must share dimensions (the common hand crop); the pose
/// stack keeps its own grid. Overlap is `|hand AND object| / max(1, |object|)`.
pub fn extract_features(
    pose: &HeatmapStack,
    hand: &MaskRaster,
    object: &MaskRaster,
    ablate: AblationFlags,
) -> Result<CueFeatures, FusionError> {
    crate::raster::require_same_dims_mask(hand, object)?;

    let mut values = vec![0.0f64; FEATURE_LEN];
    let grid = POOLED_GRID * POOLED_GRID;

    if !ablate.pose {
        // Channels collapse to a per-pixel presence map before pooling.
        let presence = |x: u32, y: u32| -> f64 {
            (0..pose.channels())
                .map(|c| pose.get(c, x, y))
                .fold(0.0f32, f32::max) as f64
        };
        pool_mean(&mut values[0..grid], presence, pose.width(), pose.height());
    }
    if !ablate.hand {
        pool_mean(
            &mut values[grid..2 * grid],
            |x, y| hand.get(x, y) as u8 as f64,
            hand.width,
            hand.height,
        );
    }
    if !ablate.object {
        pool_mean(
            &mut values[2 * grid..3 * grid],
            |x, y| object.get(x, y) as u8 as f64,
            object.width,
            object.height,
        );
    }

    let total = (hand.width * hand.height).max(1) as f64;
    let hand_area = hand.count_ones();
    let object_area = object.count_ones();
    let overlap = hand
        .data
        .iter()
        .zip(&object.data)
        .filter(|(h, o)| **h != 0 && **o != 0)
        .count();

    let scalars = &mut values[3 * grid..];
    if !ablate.hand {
        scalars[0] = hand_area as f64 / total;
    }
    if !ablate.object {
        scalars[1] = object_area as f64 / total;
    }
    if !ablate.hand && !ablate.object {
        scalars[2] = overlap as f64 / object_area.max(1) as f64;
        scalars[3] = object_to_hand_distance(hand, object);
    }
    if !ablate.pose {
        let (peak_mean, spread) = pose_peak_stats(pose);
        scalars[4] = peak_mean;
        scalars[5] = spread;
    }

    Ok(CueFeatures { values, ablate })
}

/// Mean pooling onto the 8x8 grid with integer cell boundaries.
fn pool_mean(out: &mut [f64], get: impl Fn(u32, u32) -> f64, width: u32, height: u32) {
    let n = POOLED_GRID as u32;
    for gy in 0..n {
        for gx in 0..n {
            let x_lo = gx * width / n;
            let x_hi = (gx + 1) * width / n;
            let y_lo = gy * height / n;
            let y_hi = (gy + 1) * height / n;
            let count = ((x_hi - x_lo) * (y_hi - y_lo)).max(1) as f64;
            let mut sum = 0.0;
            for y in y_lo..y_hi {
                for x in x_lo..x_hi {
                    sum += get(x, y);
                }
            }
            out[(gy * n + gx) as usize] = sum / count;
        }
    }
}

/// Mean grid distance from object pixels to the nearest hand pixel,
/// normalized by the raster diagonal. 0 for an empty object, 1 for an
/// empty hand.
fn object_to_hand_distance(hand: &MaskRaster, object: &MaskRaster) -> f64 {
    let object_area = object.count_ones();
    if object_area == 0 {
        return 0.0;
    }
    if hand.count_ones() == 0 {
        return 1.0;
    }
    // Multi-source BFS from all hand pixels, 8-connected.
    let (w, h) = (hand.width as i64, hand.height as i64);
    let mut dist = vec![u32::MAX; (w * h) as usize];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if hand.get(x as u32, y as u32) {
                dist[(y * w + x) as usize] = 0;
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        let d = dist[(y * w + x) as usize];
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let idx = (ny * w + nx) as usize;
                if dist[idx] == u32::MAX {
                    dist[idx] = d + 1;
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    let diagonal = ((w * w + h * h) as f64).sqrt();
    let sum: f64 = object
        .data
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0)
        .map(|(i, _)| dist[i] as f64)
        .sum();
    (sum / object_area as f64) / diagonal
}

/// Mean per-channel peak value, and the mean distance of channel argmax
/// positions from their centroid normalized by the grid diagonal.
fn pose_peak_stats(pose: &HeatmapStack) -> (f64, f64) {
    let mut peaks = Vec::new();
    let mut positions = Vec::new();
    for c in 0..pose.channels() {
        if let Ok((x, y, conf)) = heatmap::decode_peak(pose, c) {
            peaks.push(conf);
            positions.push((x as f64, y as f64));
        } else {
            peaks.push(0.0);
        }
    }
    if peaks.is_empty() {
        return (0.0, 0.0);
    }
    let peak_mean = peaks.iter().sum::<f64>() / peaks.len() as f64;
    if positions.is_empty() {
        return (peak_mean, 0.0);
    }
    let n = positions.len() as f64;
    let cu = positions.iter().map(|p| p.0).sum::<f64>() / n;
    let cv = positions.iter().map(|p| p.1).sum::<f64>() / n;
    let spread = positions
        .iter()
        .map(|p| ((p.0 - cu).powi(2) + (p.1 - cv).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let diagonal = ((pose.width().pow(2) + pose.height().pow(2)) as f64).sqrt();
    (peak_mean, spread / diagonal)
}

/// One hidden tanh layer into a logistic output.
///
/// `w1` is hidden x feature_len, row-major. Serializes as `model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub hidden: u32,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub feature_len: u32,
    pub ablate: AblationFlags,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl FusionModel {
    fn forward(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let hidden = self.hidden as usize;
        let feat = self.feature_len as usize;
        let mut h = vec![0.0; hidden];
        for (i, hi) in h.iter_mut().enumerate() {
            let mut a = self.b1[i];
            let row = &self.w1[i * feat..(i + 1) * feat];
            for (w, xv) in row.iter().zip(x) {
                a += w * xv;
            }
            *hi = a.tanh();
        }
        let mut z = self.b2;
        for (w, hv) in self.w2.iter().zip(&h) {
            z += w * hv;
        }
        (h, z)
    }
}

/// Interaction probability in `(0, 1)`.
pub fn predict(model: &FusionModel, features: &CueFeatures) -> Result<f64, FusionError> {
    if features.values.len() != model.feature_len as usize {
        return Err(FusionError::FeatureLenMismatch {
            got: features.values.len(),
            expected: model.feature_len as usize,
        });
    }
    let (_, z) = model.forward(&features.values);
    Ok(sigmoid(z))
}

/// Default decision threshold on the interaction probability.
pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct FusionGradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Mean binary cross-entropy and its analytic gradient over a batch.
pub fn loss_and_grad(
    model: &FusionModel,
    batch: &[(CueFeatures, bool)],
) -> Result<(f64, FusionGradients), FusionError> {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let hidden = model.hidden as usize;
    let feat = model.feature_len as usize;
    let mut grads = FusionGradients {
        w1: vec![0.0; hidden * feat],
        b1: vec![0.0; hidden],
        w2: vec![0.0; hidden],
        b2: 0.0,
    };
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;

    for (features, label) in batch {
        if features.values.len() != feat {
            return Err(FusionError::FeatureLenMismatch {
                got: features.values.len(),
                expected: feat,
            });
        }
        let x = &features.values;
        let y = *label as u8 as f64;
        let (h, z) = model.forward(x);
        // BCE via the logit: softplus(z) - y z is stable for any z.
        loss += scale * (softplus(z) - y * z);

        let dz = scale * (sigmoid(z) - y);
        grads.b2 += dz;
        for (i, &hi) in h.iter().enumerate() {
            grads.w2[i] += dz * hi;
            let da = dz * model.w2[i] * (1.0 - hi * hi);
            grads.b1[i] += da;
            let row = &mut grads.w1[i * feat..(i + 1) * feat];
            for (g, xv) in row.iter_mut().zip(x) {
                *g += da * xv;
            }
        }
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub hidden: u32,
    pub seed: u64,
    pub ablate: AblationFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-2,
            epochs: 500,
            hidden: 16,
            seed: 0,
            ablate: AblationFlags::default(),
        }
    }
}

/// Full-batch gradient descent. Deterministic in the seed; the returned
/// trace holds the loss at the start of each epoch.
pub fn train(
    dataset: &[(CueFeatures, bool)],
    config: &TrainConfig,
) -> Result<(FusionModel, Vec<f64>), FusionError> {
    let positives = dataset.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == dataset.len() {
        return Err(FusionError::SingleClassDataset);
    }

    let hidden = config.hidden.max(1) as usize;
    let feat = FEATURE_LEN;
    let mut stream = Stream::new(config.seed, 0, 0);
    let a1 = 1.0 / (feat as f64).sqrt();
    let a2 = 1.0 / (hidden as f64).sqrt();
    let mut model = FusionModel {
        hidden: hidden as u32,
        w1: (0..hidden * feat).map(|_| stream.uniform(-a1, a1)).collect(),
        b1: vec![0.0; hidden],
        w2: (0..hidden).map(|_| stream.uniform(-a2, a2)).collect(),
        b2: 0.0,
        feature_len: feat as u32,
        ablate: config.ablate,
    };

    let mut trace = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let (loss, grads) = loss_and_grad(&model, dataset)?;
        trace.push(loss);
        for (w, g) in model.w1.iter_mut().zip(&grads.w1) {
            *w -= config.lr * g;
        }
        for (b, g) in model.b1.iter_mut().zip(&grads.b1) {
            *b -= config.lr * g;
        }
        for (w, g) in model.w2.iter_mut().zip(&grads.w2) {
            *w -= config.lr * g;
        }
        model.b2 -= config.lr * grads.b2;
    }
    Ok((model, trace))
}

/// Fraction of samples whose thresholded prediction matches the label.
pub fn accuracy(
    model: &FusionModel,
    dataset: &[(CueFeatures, bool)],
    threshold: f64,
) -> Result<f64, FusionError> {
    let mut correct = 0usize;
    for (features, label) in dataset {
        let p = predict(model, features)?;
        if (p >= threshold) == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len().max(1) as f64)
}

pub fn save_model(path: &Path, model: &FusionModel) -> Result<(), FusionError> {
    let mut buf = serde_json::to_vec_pretty(model)?;
    buf.push(b'\n');
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<FusionModel, FusionError> {
    let data = std::fs::read(path)?;
    Ok(serde_json::from_slice(&data)?)
}

// Quadruple directories: per-frame pose HMAP, hand PGM, object PGM, plus an
// optional label, indexed by manifest.json.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub frame: u64,
    pub pose: String,
    pub hand: String,
    pub object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

pub fn save_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), FusionError> {
    let mut buf = serde_json::to_vec_pretty(entries)?;
    buf.push(b'\n');
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, FusionError> {
    let data = std::fs::read(path)?;
    Ok(serde_json::from_slice(&data)?)
}

/// Write per-frame quadruples into `dir` and return the manifest entries.
pub fn write_quadruple_dir<'a>(
    dir: &Path,
    frames: impl Iterator<Item = (u64, &'a HeatmapStack, &'a MaskRaster, &'a MaskRaster, Option<bool>)>,
) -> Result<Vec<ManifestEntry>, FusionError> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (frame, pose, hand, object, label) in frames {
        let pose_name = format!("frame_{frame:06}_pose.hmap");
        let hand_name = format!("frame_{frame:06}_hand.pgm");
        let object_name = format!("frame_{frame:06}_object.pgm");
        heatmap::save_hmap(&dir.join(&pose_name), pose).map_err(io_of_heatmap)?;
        crate::raster::save_pgm(&dir.join(&hand_name), hand)?;
        crate::raster::save_pgm(&dir.join(&object_name), object)?;
        entries.push(ManifestEntry {
            frame,
            pose: pose_name,
            hand: hand_name,
            object: object_name,
            label: label.map(|b| b as u8),
        });
    }
    save_manifest(&dir.join("manifest.json"), &entries)?;
    Ok(entries)
}

fn io_of_heatmap(err: heatmap::HeatmapError) -> FusionError {
    match err {
        heatmap::HeatmapError::Io(e) => FusionError::Io(e),
        other => FusionError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            other.to_string(),
        )),
    }
}

/// Load a quadruple directory as feature/label pairs.
pub fn load_labeled_features(
    dir: &Path,
    ablate: AblationFlags,
) -> Result<Vec<(CueFeatures, bool)>, FusionError> {
    let entries = load_manifest(&dir.join("manifest.json"))?;
    let mut out = Vec::with_capacity(entries.len());
    for entry in &entries {
        let pose = heatmap::load_hmap(&dir.join(&entry.pose)).map_err(io_of_heatmap)?;
        let hand = crate::raster::load_pgm(&dir.join(&entry.hand), MaskRole::Hand)?;
        let object = crate::raster::load_pgm(&dir.join(&entry.object), MaskRole::Object)?;
        let label = entry.label.ok_or_else(|| {
            FusionError::Io(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("frame {} has no label", entry.frame),
            ))
        })? != 0;
        out.push((extract_features(&pose, &hand, &object, ablate)?, label));
    }
    Ok(out)
}
