//! Training-data augmentation: chroma keying, background compositing,
//! artificial occlusions over hand joints, and photometric/affine jitter.
//!
//! Every operation is a pure function of its inputs and a [`Stream`], so an
//! augmentation run is reproducible byte for byte under one seed and frames
//! can be processed in parallel.

use crate::raster::{ImageRaster, MaskRaster, MaskRole, RasterError};
use crate::rng::Stream;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// HSV hue window marking green-screen pixels, degrees.
    pub green_h_range: (f64, f64),
    pub green_s_min: f64,
    pub green_v_min: f64,
    pub occlusion_lines: usize,
    pub occlusion_circles: usize,
    pub line_width_px: (f64, f64),
    pub circle_radius_px: (f64, f64),
    pub contrast_range: (f64, f64),
    pub brightness_range: (f64, f64),
    pub max_rotation_deg: f64,
    pub scale_range: (f64, f64),
    /// Translation bound as a fraction of the image dimensions.
    pub max_translation_frac: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            green_h_range: (90.0, 150.0),
            green_s_min: 0.35,
            green_v_min: 0.2,
            occlusion_lines: 3,
            occlusion_circles: 2,
            line_width_px: (2.0, 6.0),
            circle_radius_px: (4.0, 12.0),
            contrast_range: (0.8, 1.2),
            brightness_range: (-30.0, 30.0),
            max_rotation_deg: 15.0,
            scale_range: (0.9, 1.1),
            max_translation_frac: 0.05,
            seed: 0,
        }
    }
}

/// Standard hexcone RGB -> HSV on unit-range channels.
/// Returns (hue degrees in [0, 360), saturation, value).
pub fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let r = rgb[0] as f64 / 255.0;
    let g = rgb[1] as f64 / 255.0;
    let b = rgb[2] as f64 / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let value = max;
    let saturation = if max > 0.0 { delta / max } else { 0.0 };
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / delta).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (hue, saturation, value)
}

/// Mask of green-screen pixels: hue inside the window, saturation and value
/// above their floors. 1 marks background.
pub fn chroma_key_mask(img: &ImageRaster, cfg: &AugmentConfig) -> MaskRaster {
    let mut mask = MaskRaster::zeros(img.width, img.height, MaskRole::Key);
    for y in 0..img.height {
        for x in 0..img.width {
            let (h, s, v) = rgb_to_hsv(img.get(x, y));
            let green = h >= cfg.green_h_range.0
                && h <= cfg.green_h_range.1
                && s >= cfg.green_s_min
                && v >= cfg.green_v_min;
            mask.set(x, y, green);
        }
    }
    mask
}

/// Replace keyed pixels with the background; everything else stays
/// byte-identical to the input.
pub fn composite_background(
    img: &ImageRaster,
    key: &MaskRaster,
    background: &ImageRaster,
) -> Result<ImageRaster, RasterError> {
    if !img.same_dims(background) {
        return Err(RasterError::DimensionMismatch {
            a_width: img.width,
            a_height: img.height,
            b_width: background.width,
            b_height: background.height,
        });
    }
    if img.width != key.width || img.height != key.height {
        return Err(RasterError::DimensionMismatch {
            a_width: img.width,
            a_height: img.height,
            b_width: key.width,
            b_height: key.height,
        });
    }
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            if key.get(x, y) {
                out.set(x, y, background.get(x, y));
            }
        }
    }
    Ok(out)
}

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let ab = (b.0 - a.0, b.1 - a.1);
    let ap = (p.0 - a.0, p.1 - a.1);
    let len2 = ab.0 * ab.0 + ab.1 * ab.1;
    let t = if len2 > 0.0 {
        ((ap.0 * ab.0 + ap.1 * ab.1) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let cx = a.0 + t * ab.0;
    let cy = a.1 + t * ab.1;
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

fn paint_disc(img: &mut ImageRaster, center: (f64, f64), radius: f64, color: [u8; 3]) {
    let x_lo = ((center.0 - radius).floor().max(0.0)) as u32;
    let x_hi = ((center.0 + radius).ceil().min(img.width as f64 - 1.0)) as u32;
    let y_lo = ((center.1 - radius).floor().max(0.0)) as u32;
    let y_hi = ((center.1 + radius).ceil().min(img.height as f64 - 1.0)) as u32;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let d2 = (x as f64 - center.0).powi(2) + (y as f64 - center.1).powi(2);
            if d2 <= radius * radius {
                img.set(x, y, color);
            }
        }
    }
}

fn paint_segment(img: &mut ImageRaster, a: (f64, f64), b: (f64, f64), width: f64, color: [u8; 3]) {
    let half = width / 2.0;
    let x_lo = ((a.0.min(b.0) - half).floor().max(0.0)) as u32;
    let x_hi = ((a.0.max(b.0) + half).ceil().min(img.width as f64 - 1.0)) as u32;
    let y_lo = ((a.1.min(b.1) - half).floor().max(0.0)) as u32;
    let y_hi = ((a.1.max(b.1) + half).ceil().min(img.height as f64 - 1.0)) as u32;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            if dist_to_segment((x as f64, y as f64), a, b) <= half {
                img.set(x, y, color);
            }
        }
    }
}

/// Simulated object occlusion: random joint-to-joint line linkages plus
/// filled circles over the hand's bounding box, each in a uniform random
/// color. Joints outside the frame are skipped. Deterministic per stream.
pub fn draw_occlusions(
    img: &ImageRaster,
    joints: &[(f64, f64)],
    cfg: &AugmentConfig,
    stream: &mut Stream,
) -> ImageRaster {
    let mut out = img.clone();
    let in_frame: Vec<(f64, f64)> = joints
        .iter()
        .copied()
        .filter(|&(u, v)| u >= 0.0 && u < img.width as f64 && v >= 0.0 && v < img.height as f64)
        .collect();

    if in_frame.len() >= 2 {
        for _ in 0..cfg.occlusion_lines {
            let i = stream.below(in_frame.len());
            let mut j = stream.below(in_frame.len() - 1);
            if j >= i {
                j += 1;
            }
            let width = stream.uniform(cfg.line_width_px.0, cfg.line_width_px.1);
            let color = [stream.next_u8(), stream.next_u8(), stream.next_u8()];
            paint_segment(&mut out, in_frame[i], in_frame[j], width, color);
        }
    }

    if !in_frame.is_empty() {
        let min_u = in_frame.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let max_u = in_frame.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let min_v = in_frame.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max_v = in_frame.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        for _ in 0..cfg.occlusion_circles {
            let center = (stream.uniform(min_u, max_u), stream.uniform(min_v, max_v));
            let radius = stream.uniform(cfg.circle_radius_px.0, cfg.circle_radius_px.1);
            let color = [stream.next_u8(), stream.next_u8(), stream.next_u8()];
            paint_disc(&mut out, center, radius, color);
        }
    }

    out
}

/// 2x3 affine transform in pixel coordinates, `dst = M * [u, v, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2 {
    pub m: [[f64; 3]; 2],
}

impl Affine2 {
    pub fn identity() -> Self {
        Affine2 {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn apply(&self, u: f64, v: f64) -> (f64, f64) {
        (
            self.m[0][0] * u + self.m[0][1] * v + self.m[0][2],
            self.m[1][0] * u + self.m[1][1] * v + self.m[1][2],
        )
    }

    pub fn inverse(&self) -> Affine2 {
        let det = self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0];
        let inv = [
            [self.m[1][1] / det, -self.m[0][1] / det],
            [-self.m[1][0] / det, self.m[0][0] / det],
        ];
        Affine2 {
            m: [
                [
                    inv[0][0],
                    inv[0][1],
                    -(inv[0][0] * self.m[0][2] + inv[0][1] * self.m[1][2]),
                ],
                [
                    inv[1][0],
                    inv[1][1],
                    -(inv[1][0] * self.m[0][2] + inv[1][1] * self.m[1][2]),
                ],
            ],
        }
    }

    /// Rotation and uniform scale about `center`, then translation.
    pub fn similarity(center: (f64, f64), angle_rad: f64, scale: f64, t: (f64, f64)) -> Affine2 {
        let (sin, cos) = angle_rad.sin_cos();
        let (a, b) = (scale * cos, scale * sin);
        Affine2 {
            m: [
                [a, -b, center.0 + t.0 - (a * center.0 - b * center.1)],
                [b, a, center.1 + t.1 - (b * center.0 + a * center.1)],
            ],
        }
    }
}

/// Bilinear sample with edge-clamp padding.
fn sample_bilinear(img: &ImageRaster, u: f64, v: f64) -> [u8; 3] {
    let u = u.clamp(0.0, img.width as f64 - 1.0);
    let v = v.clamp(0.0, img.height as f64 - 1.0);
    let x0 = u.floor() as u32;
    let y0 = v.floor() as u32;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let p00 = img.get(x0, y0);
    let p10 = img.get(x1, y0);
    let p01 = img.get(x0, y1);
    let p11 = img.get(x1, y1);
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bot = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        out[c] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Resample to new dimensions, bilinear. Used to fit backgrounds to frames.
pub fn resize_bilinear(img: &ImageRaster, width: u32, height: u32) -> ImageRaster {
    let mut out = ImageRaster::filled(width, height, [0, 0, 0]);
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    for y in 0..height {
        for x in 0..width {
            out.set(x, y, sample_bilinear(img, x as f64 * sx, y as f64 * sy));
        }
    }
    out
}

/// Random contrast/brightness followed by a random similarity warp.
///
/// Returns the jittered image and the applied forward affine so keypoint
/// labels can be mapped into the output frame with [`Affine2::apply`].
/// Draw order: contrast, brightness, rotation, scale, translation.
pub fn photometric_warp(
    img: &ImageRaster,
    cfg: &AugmentConfig,
    stream: &mut Stream,
) -> (ImageRaster, Affine2) {
    let alpha = stream.uniform(cfg.contrast_range.0, cfg.contrast_range.1);
    let beta = stream.uniform(cfg.brightness_range.0, cfg.brightness_range.1);
    let angle = stream
        .uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg)
        .to_radians();
    let scale = stream.uniform(cfg.scale_range.0, cfg.scale_range.1);
    let t = (
        stream.uniform(-1.0, 1.0) * cfg.max_translation_frac * img.width as f64,
        stream.uniform(-1.0, 1.0) * cfg.max_translation_frac * img.height as f64,
    );

    let mut adjusted = img.clone();
    for v in &mut adjusted.data {
        *v = (alpha * *v as f64 + beta).round().clamp(0.0, 255.0) as u8;
    }

    let center = (
        (img.width as f64 - 1.0) / 2.0,
        (img.height as f64 - 1.0) / 2.0,
    );
    let affine = Affine2::similarity(center, angle, scale, t);
    if affine == Affine2::identity() {
        return (adjusted, affine);
    }

    let inverse = affine.inverse();
    let mut out = ImageRaster::filled(img.width, img.height, [0, 0, 0]);
    for y in 0..img.height {
        for x in 0..img.width {
            let (su, sv) = inverse.apply(x as f64, y as f64);
            out.set(x, y, sample_bilinear(&adjusted, su, sv));
        }
    }
    (out, affine)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap;

    fn jitter_free(cfg: &mut AugmentConfig) {
        cfg.contrast_range = (1.0, 1.0);
        cfg.brightness_range = (0.0, 0.0);
        cfg.max_rotation_deg = 0.0;
        cfg.scale_range = (1.0, 1.0);
        cfg.max_translation_frac = 0.0;
    }

    #[test]
    fn pure_green_frame_is_fully_keyed() {
        let img = ImageRaster::filled(16, 16, [0, 255, 0]);
        let cfg = AugmentConfig::default();
        let mask = chroma_key_mask(&img, &cfg);
        assert_eq!(mask.count_ones(), 256);
    }

    #[test]
    fn pure_red_frame_is_not_keyed() {
        let img = ImageRaster::filled(16, 16, [255, 0, 0]);
        let mask = chroma_key_mask(&img, &AugmentConfig::default());
        assert_eq!(mask.count_ones(), 0);
    }

    #[test]
    fn half_green_half_skin_matches_per_pixel_oracle() {
        let mut img = ImageRaster::filled(32, 16, [40, 200, 60]);
        for y in 0..16 {
            for x in 16..32 {
                img.set(x, y, [224, 172, 105]);
            }
        }
        // A couple of borderline pixels.
        img.set(0, 0, [100, 120, 100]);
        img.set(1, 0, [0, 60, 0]);
        let cfg = AugmentConfig::default();
        let mask = chroma_key_mask(&img, &cfg);

        // Independent per-pixel recomputation via a different HSV formulation.
        let oracle_hsv = |rgb: [u8; 3]| -> (f64, f64, f64) {
            let (r, g, b) = (
                rgb[0] as f64 / 255.0,
                rgb[1] as f64 / 255.0,
                rgb[2] as f64 / 255.0,
            );
            let max = r.max(g.max(b));
            let min = r.min(g.min(b));
            let c = max - min;
            let h6 = if c == 0.0 {
                0.0
            } else if max == r {
                let mut h = (g - b) / c;
                if h < 0.0 {
                    h += 6.0;
                }
                h
            } else if max == g {
                (b - r) / c + 2.0
            } else {
                (r - g) / c + 4.0
            };
            (h6 * 60.0, if max == 0.0 { 0.0 } else { c / max }, max)
        };
        for y in 0..img.height {
            for x in 0..img.width {
                let (h, s, v) = oracle_hsv(img.get(x, y));
                let expected = (cfg.green_h_range.0..=cfg.green_h_range.1).contains(&h)
                    && s >= cfg.green_s_min
                    && v >= cfg.green_v_min;
                assert_eq!(mask.get(x, y), expected, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn fully_keyed_composite_equals_background() {
        let img = ImageRaster::filled(8, 8, [0, 255, 0]);
        let bg = ImageRaster::filled(8, 8, [12, 34, 56]);
        let key = chroma_key_mask(&img, &AugmentConfig::default());
        let out = composite_background(&img, &key, &bg).unwrap();
        assert_eq!(out, bg);
    }

    #[test]
    fn empty_key_composite_is_identity() {
        let img = ImageRaster::filled(8, 8, [200, 30, 40]);
        let bg = ImageRaster::filled(8, 8, [1, 2, 3]);
        let key = MaskRaster::zeros(8, 8, MaskRole::Key);
        let out = composite_background(&img, &key, &bg).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn checkerboard_composite_matches_pixel_select_oracle() {
        let img = ImageRaster::filled(10, 10, [5, 6, 7]);
        let bg = ImageRaster::filled(10, 10, [100, 101, 102]);
        let mut key = MaskRaster::zeros(10, 10, MaskRole::Key);
        for y in 0..10 {
            for x in 0..10 {
                key.set(x, y, (x + y) % 2 == 0);
            }
        }
        let out = composite_background(&img, &key, &bg).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                let expect = if key.get(x, y) {
                    bg.get(x, y)
                } else {
                    img.get(x, y)
                };
                assert_eq!(out.get(x, y), expect);
            }
        }
    }

    #[test]
    fn composite_rejects_mismatched_background() {
        let img = ImageRaster::filled(8, 8, [0, 0, 0]);
        let bg = ImageRaster::filled(4, 8, [0, 0, 0]);
        let key = MaskRaster::zeros(8, 8, MaskRole::Key);
        assert!(matches!(
            composite_background(&img, &key, &bg),
            Err(RasterError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_counts_leave_the_image_untouched() {
        let img = ImageRaster::filled(32, 32, [9, 9, 9]);
        let mut cfg = AugmentConfig::default();
        cfg.occlusion_lines = 0;
        cfg.occlusion_circles = 0;
        let joints = [(4.0, 4.0), (20.0, 25.0)];
        let out = draw_occlusions(&img, &joints, &cfg, &mut Stream::new(1, 0, 0));
        assert_eq!(out, img);
    }

    #[test]
    fn same_stream_key_draws_identical_occlusions() {
        let img = ImageRaster::filled(64, 64, [30, 30, 30]);
        let cfg = AugmentConfig::default();
        let joints: Vec<(f64, f64)> = (0..8).map(|i| (8.0 * i as f64, 5.0 * i as f64)).collect();
        let a = draw_occlusions(&img, &joints, &cfg, &mut Stream::new(9, 4, 1));
        let b = draw_occlusions(&img, &joints, &cfg, &mut Stream::new(9, 4, 1));
        assert_eq!(a, b);
        let c = draw_occlusions(&img, &joints, &cfg, &mut Stream::new(9, 5, 1));
        assert_ne!(a, c, "different frames should differ");
    }

    #[test]
    fn painted_line_pixels_stay_near_some_joint_segment() {
        let img = ImageRaster::filled(96, 96, [0, 0, 0]);
        let mut cfg = AugmentConfig::default();
        cfg.occlusion_circles = 0;
        cfg.occlusion_lines = 5;
        let joints: Vec<(f64, f64)> =
            vec![(10.0, 10.0), (80.0, 20.0), (45.0, 70.0), (20.0, 60.0)];
        let out = draw_occlusions(&img, &joints, &cfg, &mut Stream::new(12, 0, 0));
        let max_half = cfg.line_width_px.1 / 2.0 + 0.75;
        for y in 0..96 {
            for x in 0..96 {
                if out.get(x, y) != img.get(x, y) {
                    let p = (x as f64, y as f64);
                    let near_any = joints.iter().enumerate().any(|(i, &a)| {
                        joints[i + 1..]
                            .iter()
                            .any(|&b| dist_to_segment(p, a, b) <= max_half)
                    });
                    assert!(near_any, "painted pixel ({x},{y}) far from all segments");
                }
            }
        }
    }

    #[test]
    fn identity_jitter_is_byte_exact_and_returns_identity() {
        let mut img = ImageRaster::filled(24, 18, [10, 20, 30]);
        img.set(5, 5, [250, 1, 128]);
        let mut cfg = AugmentConfig::default();
        jitter_free(&mut cfg);
        let (out, affine) = photometric_warp(&img, &cfg, &mut Stream::new(0, 0, 2));
        assert_eq!(out, img);
        assert_eq!(affine, Affine2::identity());
    }

    #[test]
    fn saturating_brightness_whitens_everything() {
        let img = ImageRaster::filled(8, 8, [13, 77, 200]);
        let mut cfg = AugmentConfig::default();
        jitter_free(&mut cfg);
        cfg.brightness_range = (255.0, 255.0);
        let (out, _) = photometric_warp(&img, &cfg, &mut Stream::new(0, 0, 2));
        assert!(out.data.iter().all(|&v| v == 255));
    }

    #[test]
    fn keypoints_follow_the_returned_affine() {
        // Render a gaussian blob at a keypoint, warp, and check the blob's
        // argmax lands where the affine says the keypoint went.
        let keypoint = (40.0, 25.0);
        let stack = heatmap::encode_gaussian(&[keypoint], (96, 64), 3.0);
        let mut img = ImageRaster::filled(96, 64, [0, 0, 0]);
        for y in 0..64 {
            for x in 0..96 {
                let v = (stack.get(0, x, y) * 255.0).round() as u8;
                img.set(x, y, [v, v, v]);
            }
        }
        let mut cfg = AugmentConfig::default();
        cfg.contrast_range = (1.0, 1.0);
        cfg.brightness_range = (0.0, 0.0);
        for trial in 0..10 {
            let mut stream = Stream::new(77, trial, 2);
            let (warped, affine) = photometric_warp(&img, &cfg, &mut stream);
            let expected = affine.apply(keypoint.0, keypoint.1);
            let mut best = 0u8;
            let mut pos = (0u32, 0u32);
            for y in 0..64u32 {
                for x in 0..96u32 {
                    if warped.get(x, y)[0] > best {
                        best = warped.get(x, y)[0];
                        pos = (x, y);
                    }
                }
            }
            let du = pos.0 as f64 - expected.0;
            let dv = pos.1 as f64 - expected.1;
            let err = (du * du + dv * dv).sqrt();
            assert!(err <= 0.75, "trial {trial}: peak off by {err} px");
        }
    }

    #[test]
    fn affine_inverse_round_trips() {
        let affine = Affine2::similarity((31.5, 23.5), 0.3, 1.07, (2.5, -4.0));
        let inv = affine.inverse();
        let (u, v) = affine.apply(10.0, 20.0);
        let (bu, bv) = inv.apply(u, v);
        assert!((bu - 10.0).abs() < 1e-12 && (bv - 20.0).abs() < 1e-12);
    }

    #[test]
    fn resize_preserves_constant_images() {
        let img = ImageRaster::filled(17, 11, [42, 99, 7]);
        let out = resize_bilinear(&img, 64, 48);
        assert!(out.data.chunks(3).all(|p| p == [42, 99, 7]));
    }
}
