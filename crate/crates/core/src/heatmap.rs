//! Keypoint heatmap encoding/decoding and ROI geometry.
//!
//! Heatmaps are non-negative f32 channel stacks, row-major within a channel,
//! channels consecutive. Pose heatmaps default to 32x32 per joint; the hand
//! localization target lives on a fixed 48x28 grid where a whole hand is one
//! keypoint.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

/// Pose heatmap side length per joint channel.
pub const POSE_HEATMAP_SIZE: u32 = 32;

/// Hand localization grid, (width, height).
pub const LOCALIZATION_GRID: (u32, u32) = (48, 28);

/// Localization Gaussian sigma in grid pixels, independent of box size.
pub const LOCALIZATION_SIGMA: f64 = 1.5;

#[derive(Debug, Error)]
pub enum HeatmapError {
    #[error("heatmap channel is all zeros, no peak to decode")]
    EmptyHeatmap,
    #[error("channel {channel} out of range ({channels} channels)")]
    ChannelOutOfRange { channel: u32, channels: u32 },
    #[error("crop side {side} exceeds frame {width}x{height}")]
    SideExceedsFrame { side: u32, width: u32, height: u32 },
    #[error("heatmap io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed HMAP container: {0}")]
    BadFormat(String),
}

/// H x W x C stack of non-negative values.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    width: u32,
    height: u32,
    channels: u32,
    data: Vec<f32>,
}

impl HeatmapStack {
    pub fn zeros(width: u32, height: u32, channels: u32) -> Self {
        HeatmapStack {
            width,
            height,
            channels,
            data: vec![0.0; (width * height * channels) as usize],
        }
    }

    pub fn from_data(width: u32, height: u32, channels: u32, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), (width * height * channels) as usize);
        HeatmapStack {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, channel: u32, x: u32, y: u32) -> f32 {
        self.data[(channel * self.width * self.height + y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, channel: u32, x: u32, y: u32, value: f32) {
        self.data[(channel * self.width * self.height + y * self.width + x) as usize] = value;
    }

    pub fn channel(&self, channel: u32) -> &[f32] {
        let plane = (self.width * self.height) as usize;
        &self.data[channel as usize * plane..(channel as usize + 1) * plane]
    }

    /// Scale one channel in place; used by tests exercising argmax invariance.
    pub fn scale_channel(&mut self, channel: u32, factor: f32) {
        let plane = (self.width * self.height) as usize;
        for v in &mut self.data[channel as usize * plane..(channel as usize + 1) * plane] {
            *v *= factor;
        }
    }
}

/// Encode keypoints as one Gaussian channel each.
///
/// Channel `c` holds `exp(-((x-u_c)^2 + (y-v_c)^2) / (2 sigma^2))`; the peak
/// value is 1 at the keypoint's nearest grid pixel. Off-grid keypoints
/// produce truncated Gaussians.
pub fn encode_gaussian(keypoints: &[(f64, f64)], dims: (u32, u32), sigma: f64) -> HeatmapStack {
    assert!(sigma > 0.0, "sigma must be positive");
    let (width, height) = dims;
    let mut stack = HeatmapStack::zeros(width, height, keypoints.len() as u32);
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (c, &(u, v)) in keypoints.iter().enumerate() {
        for y in 0..height {
            for x in 0..width {
                let d2 = (x as f64 - u).powi(2) + (y as f64 - v).powi(2);
                stack.set(c as u32, x, y, (-d2 * inv).exp() as f32);
            }
        }
    }
    stack
}

/// Argmax decode of one channel. Ties break to the smallest row, then column.
///
/// Returns `(x, y, confidence)` with the confidence clamped to `[0, 1]`.
pub fn decode_peak(stack: &HeatmapStack, channel: u32) -> Result<(u32, u32, f64), HeatmapError> {
    if channel >= stack.channels {
        return Err(HeatmapError::ChannelOutOfRange {
            channel,
            channels: stack.channels,
        });
    }
    let mut best = 0.0f32;
    let mut pos = (0u32, 0u32);
    for y in 0..stack.height {
        for x in 0..stack.width {
            let v = stack.get(channel, x, y);
            if v > best {
                best = v;
                pos = (x, y);
            }
        }
    }
    if best == 0.0 {
        return Err(HeatmapError::EmptyHeatmap);
    }
    Ok((pos.0, pos.1, (best as f64).clamp(0.0, 1.0)))
}

/// Which hand a box or locator channel belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HandSide {
    Left,
    Right,
}

/// Axis-aligned box in full-frame pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.width / 2.0, self.y + self.height / 2.0)
    }
}

/// Build the 48x28 hand-localization target: one channel per hand side,
/// a fixed-sigma Gaussian at each box centre regardless of box size.
/// Multiple boxes of one class combine by per-pixel maximum.
pub fn localization_target(
    hand_boxes: &[(BoundingBox, HandSide)],
    frame_dims: (u32, u32),
) -> HeatmapStack {
    let (gw, gh) = LOCALIZATION_GRID;
    let mut stack = HeatmapStack::zeros(gw, gh, 2);
    let sx = gw as f64 / frame_dims.0 as f64;
    let sy = gh as f64 / frame_dims.1 as f64;
    let inv = 1.0 / (2.0 * LOCALIZATION_SIGMA * LOCALIZATION_SIGMA);
    for (bbox, side) in hand_boxes {
        let (cu, cv) = bbox.center();
        let (gu, gv) = (cu * sx, cv * sy);
        let c = match side {
            HandSide::Left => 0,
            HandSide::Right => 1,
        };
        for y in 0..gh {
            for x in 0..gw {
                let d2 = (x as f64 - gu).powi(2) + (y as f64 - gv).powi(2);
                let g = (-d2 * inv).exp() as f32;
                if g > stack.get(c, x, y) {
                    stack.set(c, x, y, g);
                }
            }
        }
    }
    stack
}

/// Square crop around a point, shifted (never shrunk) to stay inside the
/// frame. `clamped` records whether a shift happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoiBox {
    pub x0: u32,
    pub y0: u32,
    pub side: u32,
    pub clamped: bool,
}

impl RoiBox {
    pub fn center(&self) -> (f64, f64) {
        (
            self.x0 as f64 + self.side as f64 / 2.0,
            self.y0 as f64 + self.side as f64 / 2.0,
        )
    }
}

pub fn roi_crop(
    frame_dims: (u32, u32),
    center: (f64, f64),
    side: u32,
) -> Result<RoiBox, HeatmapError> {
    assert!(side > 0, "crop side must be positive");
    let (width, height) = frame_dims;
    if side > width.min(height) {
        return Err(HeatmapError::SideExceedsFrame {
            side,
            width,
            height,
        });
    }
    let place = |c: f64, limit: u32| -> (u32, bool) {
        let ideal = (c - side as f64 / 2.0).round() as i64;
        let clamped_pos = ideal.clamp(0, (limit - side) as i64);
        (clamped_pos as u32, clamped_pos != ideal)
    };
    let (x0, cx) = place(center.0, width);
    let (y0, cy) = place(center.1, height);
    Ok(RoiBox {
        x0,
        y0,
        side,
        clamped: cx || cy,
    })
}

// HMAP container: magic "HMAP", u32 LE width/height/channels, then
// width*height*channels f32 LE values, row-major within channel.

pub fn write_hmap<W: Write>(mut writer: W, stack: &HeatmapStack) -> Result<(), HeatmapError> {
    writer.write_all(b"HMAP")?;
    writer.write_all(&stack.width.to_le_bytes())?;
    writer.write_all(&stack.height.to_le_bytes())?;
    writer.write_all(&stack.channels.to_le_bytes())?;
    for v in &stack.data {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_hmap<R: Read>(mut reader: R) -> Result<HeatmapStack, HeatmapError> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != b"HMAP" {
        return Err(HeatmapError::BadFormat(format!(
            "bad magic {:?}, expected \"HMAP\"",
            magic
        )));
    }
    let mut word = [0u8; 4];
    let mut read_u32 = |r: &mut R| -> Result<u32, HeatmapError> {
        r.read_exact(&mut word)?;
        Ok(u32::from_le_bytes(word))
    };
    let width = read_u32(&mut reader)?;
    let height = read_u32(&mut reader)?;
    let channels = read_u32(&mut reader)?;
    let count = width as usize * height as usize * channels as usize;
    let mut bytes = vec![0u8; count * 4];
    reader.read_exact(&mut bytes)?;
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(HeatmapError::BadFormat(
            "heatmap values must be finite and non-negative".into(),
        ));
    }
    Ok(HeatmapStack::from_data(width, height, channels, data))
}

pub fn save_hmap(path: &Path, stack: &HeatmapStack) -> Result<(), HeatmapError> {
    let mut buf = Vec::new();
    write_hmap(&mut buf, stack)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_hmap(path: &Path) -> Result<HeatmapStack, HeatmapError> {
    let data = std::fs::read(path)?;
    read_hmap(data.as_slice())
}
