//! Deterministic synthetic capture rig.
//!
//! Generates ground-truth hand joints, cameras looking at them, and noisy 2D
//! detections in the pipeline file formats, including the paired
//! (with-object / object-removed) frame protocol: even frame ids are the
//! clean object-removed captures, odd ids the with-object captures sharing
//! bitwise-equal joints. The rig is the oracle for every geometric test.
//!
//! The hand is a connected joint chain confined to a 10 cm ball at the world
//! origin; with cameras at 0.5 m or more and VGA-scale intrinsics this keeps
//! every joint inside every image.

use crate::calib::CubeSpec;
use crate::camera::{CameraModel, Intrinsics, Pose6D};
use crate::heatmap::{self, BoundingBox, HeatmapStack, POSE_HEATMAP_SIZE};
use crate::pose3d::{CubeCornerView, FrameDetections, Joints3D, ViewDetections};
use crate::raster::{MaskRaster, MaskRole};
use crate::rng::Stream;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Radius of the ball containing all hand joints, meters.
const HAND_BALL_RADIUS: f64 = 0.10;

/// Joint-to-joint step length range of the hand chain, meters.
const CHAIN_STEP: (f64, f64) = (0.01, 0.02);

#[derive(Debug, Clone)]
pub struct SceneParams {
    pub seed: u64,
    pub n_cams: usize,
    pub n_frames: usize,
    pub joint_count: usize,
    pub intrinsics: Intrinsics,
    /// Camera distance range from the hand, meters.
    pub radius_range: (f64, f64),
    pub cube: CubeSpec,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            seed: 0,
            n_cams: 3,
            n_frames: 10,
            joint_count: 21,
            intrinsics: Intrinsics {
                fx: 500.0,
                fy: 500.0,
                cx: 320.0,
                cy: 240.0,
                width: 640,
                height: 480,
            },
            radius_range: (0.5, 0.8),
            cube: CubeSpec { edge_m: 0.08 },
        }
    }
}

/// One logical capture: a with-object frame and its object-removed twin
/// sharing the same ground-truth joints.
#[derive(Debug, Clone)]
pub struct SynthFrame {
    /// Frame id of the object-removed capture (even).
    pub frame_without: u64,
    /// Frame id of the with-object capture (odd).
    pub frame_with: u64,
    pub joints: Joints3D,
    /// Per camera: bounding box of the projected joints.
    pub boxes: Vec<(String, BoundingBox)>,
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub params: SceneParams,
    pub cameras: Vec<CameraModel>,
    pub frames: Vec<SynthFrame>,
}

/// Gaussian point on the sphere of the given radius.
pub fn random_point_on_sphere(stream: &mut Stream, radius: f64) -> Vector3<f64> {
    loop {
        let v = Vector3::new(stream.gaussian(), stream.gaussian(), stream.gaussian());
        let norm = v.norm();
        if norm > 1e-6 {
            return v * (radius / norm);
        }
    }
}

/// World-to-camera pose for a camera at `center` whose principal axis
/// points at the world origin.
pub fn look_at_pose(center: &Vector3<f64>) -> Pose6D {
    let forward = (-center).normalize();
    let hint = if forward.x.abs() < 0.9 {
        Vector3::new(1.0, 0.0, 0.0)
    } else {
        Vector3::new(0.0, 1.0, 0.0)
    };
    let right = hint.cross(&forward).normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let translation = -(rotation * center);
    Pose6D::new(rotation, translation).expect("look-at rotation is orthonormal")
}

// Stream op tags; keep them distinct per sampling purpose.
const OP_CAMERAS: u64 = 1;
const OP_CHAIN: u64 = 2;
const OP_DETECTIONS: u64 = 100;

pub fn generate_scene(params: &SceneParams) -> SynthScene {
    assert!(params.n_cams >= 2, "a rig needs at least two cameras");
    let mut cam_stream = Stream::new(params.seed, 0, OP_CAMERAS);
    let cameras: Vec<CameraModel> = (0..params.n_cams)
        .map(|i| {
            let radius = cam_stream.uniform(params.radius_range.0, params.radius_range.1);
            let center = random_point_on_sphere(&mut cam_stream, radius);
            CameraModel::new(format!("cam{i}"), params.intrinsics, look_at_pose(&center))
                .expect("synthetic camera is valid")
        })
        .collect();

    let frames = (0..params.n_frames as u64)
        .map(|i| {
            let joints = sample_hand_chain(params, i);
            let boxes = cameras
                .iter()
                .map(|cam| (cam.id.clone(), projected_bbox(cam, &joints)))
                .collect();
            SynthFrame {
                frame_without: 2 * i,
                frame_with: 2 * i + 1,
                joints,
                boxes,
            }
        })
        .collect();

    SynthScene {
        params: params.clone(),
        cameras,
        frames,
    }
}

/// Connected joint chain inside the hand ball, deterministic per frame.
fn sample_hand_chain(params: &SceneParams, frame: u64) -> Joints3D {
    let mut stream = Stream::new(params.seed, frame, OP_CHAIN);
    let mut joints = Vec::with_capacity(params.joint_count);
    let start_radius = stream.uniform(0.0, 0.03);
    joints.push(random_point_on_sphere(&mut stream, start_radius));
    while joints.len() < params.joint_count {
        let prev = *joints.last().unwrap();
        let candidate = loop {
            let step_len = stream.uniform(CHAIN_STEP.0, CHAIN_STEP.1);
            let step = random_point_on_sphere(&mut stream, step_len);
            let candidate = prev + step;
            if candidate.norm() <= HAND_BALL_RADIUS {
                break candidate;
            }
        };
        joints.push(candidate);
    }
    Joints3D(joints)
}

fn projected_bbox(cam: &CameraModel, joints: &Joints3D) -> BoundingBox {
    let mut min_u = f64::INFINITY;
    let mut min_v = f64::INFINITY;
    let mut max_u = f64::NEG_INFINITY;
    let mut max_v = f64::NEG_INFINITY;
    for p in &joints.0 {
        let (u, v, _) = cam.project(p).expect("hand ball is in front of the rig");
        min_u = min_u.min(u);
        min_v = min_v.min(v);
        max_u = max_u.max(u);
        max_v = max_v.max(v);
    }
    BoundingBox {
        x: min_u,
        y: min_v,
        width: max_u - min_u,
        height: max_v - min_v,
    }
}

/// Pixel noise and visibility-loss model for rendered detections.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_px: f64,
    /// Per-joint dropout probability on object-removed frames.
    pub dropout_without: f64,
    /// Per-joint dropout on with-object frames; at least `dropout_without`.
    pub dropout_with: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            sigma_px: 0.0,
            dropout_without: 0.0,
            dropout_with: 0.0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) {
        assert!(self.sigma_px >= 0.0);
        assert!((0.0..1.0).contains(&self.dropout_without));
        assert!((0.0..1.0).contains(&self.dropout_with));
        assert!(
            self.dropout_with >= self.dropout_without,
            "with-object frames cannot be easier than object-removed ones"
        );
    }
}

/// Render noisy detections for every frame of the scene, object-removed and
/// with-object captures interleaved by frame id. Cube corner observations
/// ride along on every frame for online calibration.
///
/// Dropped joints get confidence 0; detected joints get
/// `exp(-err^2 / (2 (3 sigma)^2))` with `err` the realized pixel error,
/// or 1 when sigma is 0.
pub fn render_detections(scene: &SynthScene, noise: &NoiseModel) -> Vec<FrameDetections> {
    noise.validate();
    let mut out = Vec::with_capacity(scene.frames.len() * 2);
    for frame in &scene.frames {
        out.push(render_frame(scene, frame, frame.frame_without, noise.sigma_px, noise.dropout_without, noise));
        out.push(render_frame(scene, frame, frame.frame_with, noise.sigma_px, noise.dropout_with, noise));
    }
    out
}

fn render_frame(
    scene: &SynthScene,
    frame: &SynthFrame,
    frame_id: u64,
    sigma: f64,
    dropout: f64,
    noise: &NoiseModel,
) -> FrameDetections {
    let conf_scale = 2.0 * (3.0 * sigma) * (3.0 * sigma);
    let views = scene
        .cameras
        .iter()
        .enumerate()
        .map(|(view_idx, cam)| {
            let mut stream = Stream::new(scene.params.seed, frame_id, OP_DETECTIONS + view_idx as u64);
            let joints = frame
                .joints
                .0
                .iter()
                .map(|p| {
                    let (u, v, _) = cam.project(p).expect("joint in front of camera");
                    let nu = sigma * stream.gaussian();
                    let nv = sigma * stream.gaussian();
                    let dropped = stream.next_bool(dropout);
                    if dropped {
                        (u + nu, v + nv, 0.0)
                    } else {
                        let confidence = if sigma == 0.0 {
                            1.0
                        } else {
                            (-(nu * nu + nv * nv) / conf_scale).exp()
                        };
                        (u + nu, v + nv, confidence)
                    }
                })
                .collect();
            ViewDetections {
                camera: cam.id.clone(),
                joints,
            }
        })
        .collect();

    let cube_corners = scene
        .cameras
        .iter()
        .enumerate()
        .map(|(view_idx, cam)| {
            let mut stream =
                Stream::new(scene.params.seed, frame_id, OP_DETECTIONS + 1000 + view_idx as u64);
            let corners = scene
                .params
                .cube
                .corners()
                .iter()
                .enumerate()
                .map(|(i, corner)| {
                    let (u, v, _) = cam.project(corner).expect("cube in front of camera");
                    let nu = noise.sigma_px * stream.gaussian();
                    let nv = noise.sigma_px * stream.gaussian();
                    let confidence = if noise.sigma_px == 0.0 {
                        1.0
                    } else {
                        (-(nu * nu + nv * nv) / conf_scale).exp()
                    };
                    (i, u + nu, v + nv, confidence)
                })
                .collect();
            CubeCornerView {
                camera: cam.id.clone(),
                corners,
            }
        })
        .collect();

    FrameDetections {
        frame: frame_id,
        views,
        cube_corners,
    }
}

/// Ground-truth joints file record, one per frame id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    pub frame: u64,
    pub joints3d: Vec<(f64, f64, f64)>,
}

pub fn ground_truth_frames(scene: &SynthScene) -> Vec<GroundTruthFrame> {
    let mut out = Vec::with_capacity(scene.frames.len() * 2);
    for frame in &scene.frames {
        let joints: Vec<(f64, f64, f64)> =
            frame.joints.0.iter().map(|p| (p.x, p.y, p.z)).collect();
        out.push(GroundTruthFrame {
            frame: frame.frame_without,
            joints3d: joints.clone(),
        });
        out.push(GroundTruthFrame {
            frame: frame.frame_with,
            joints3d: joints,
        });
    }
    out
}

// Synthetic cue suite for the interaction head: hand and object masks drawn
// directly as 2D discs, pose heatmaps placed inside the hand. Only the
// object mask differs between classes, so the object cue carries the label.

#[derive(Debug, Clone)]
pub struct FusionSample {
    pub frame: u64,
    pub pose: HeatmapStack,
    pub hand: MaskRaster,
    pub object: MaskRaster,
    pub interacting: bool,
}

const OP_FUSION: u64 = 5000;

pub fn generate_fusion_suite(seed: u64, count: usize, dims: (u32, u32)) -> Vec<FusionSample> {
    (0..count as u64)
        .map(|i| {
            let mut stream = Stream::new(seed, i, OP_FUSION);
            let interacting = i % 2 == 0;
            let (w, h) = dims;
            let min_dim = w.min(h) as f64;

            let hand_center = (
                w as f64 * stream.uniform(0.45, 0.55),
                h as f64 * stream.uniform(0.45, 0.55),
            );
            let hand_radius = min_dim * stream.uniform(0.18, 0.25);
            let hand = disc_mask(dims, hand_center, hand_radius, MaskRole::Hand);

            // Joints cluster inside the hand; identical distribution for
            // both classes so pose and hand cues carry no label signal.
            let scale_x = POSE_HEATMAP_SIZE as f64 / w as f64;
            let scale_y = POSE_HEATMAP_SIZE as f64 / h as f64;
            let keypoints: Vec<(f64, f64)> = (0..21)
                .map(|_| {
                    let angle = stream.uniform(0.0, std::f64::consts::TAU);
                    let r = hand_radius * 0.8 * stream.next_f64().sqrt();
                    (
                        (hand_center.0 + r * angle.cos()) * scale_x,
                        (hand_center.1 + r * angle.sin()) * scale_y,
                    )
                })
                .collect();
            let mut pose = heatmap::encode_gaussian(
                &keypoints,
                (POSE_HEATMAP_SIZE, POSE_HEATMAP_SIZE),
                1.5,
            );
            for c in 0..pose.channels() {
                pose.scale_channel(c, stream.uniform(0.7, 1.0) as f32);
            }

            let object_radius = min_dim * stream.uniform(0.10, 0.15);
            let object = if interacting {
                let angle = stream.uniform(0.0, std::f64::consts::TAU);
                let offset = hand_radius * 0.3;
                disc_mask(
                    dims,
                    (
                        hand_center.0 + offset * angle.cos(),
                        hand_center.1 + offset * angle.sin(),
                    ),
                    object_radius,
                    MaskRole::Object,
                )
            } else if stream.next_bool(0.1) {
                // Occasionally no object at all.
                MaskRaster::zeros(w, h, MaskRole::Object)
            } else {
                // Disc in a frame corner, disjoint from the hand.
                let corner = stream.below(4);
                let margin = min_dim * 0.12;
                let cx = if corner & 1 == 0 { margin } else { w as f64 - margin };
                let cy = if corner & 2 == 0 { margin } else { h as f64 - margin };
                disc_mask(dims, (cx, cy), object_radius, MaskRole::Object)
            };

            FusionSample {
                frame: i,
                pose,
                hand,
                object,
                interacting,
            }
        })
        .collect()
}

fn disc_mask(dims: (u32, u32), center: (f64, f64), radius: f64, role: MaskRole) -> MaskRaster {
    let mut mask = MaskRaster::zeros(dims.0, dims.1, role);
    let r2 = radius * radius;
    for y in 0..dims.1 {
        for x in 0..dims.0 {
            let d2 = (x as f64 - center.0).powi(2) + (y as f64 - center.1).powi(2);
            if d2 <= r2 {
                mask.set(x, y, true);
            }
        }
    }
    mask
}
