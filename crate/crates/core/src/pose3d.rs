//! Multi-view 3D hand-joint triangulation and pairwise label transfer.
//!
//! Each joint is solved independently: the 3D point minimizing the
//! confidence-weighted squared reprojection error over all views that saw
//! it. Residuals are `confidence * (observed - projected)` per pixel
//! coordinate, so the solver's sum of squares realizes the weighted loss
//! with a per-joint, per-view weight. Frames whose total loss clears the
//! gate become annotations; their joints re-project into every view as
//! transferred 2D labels.

use crate::camera::{CameraModel, MIN_DEPTH_M};
use crate::lm::{self, LmError, LmOptions, LmProblem};
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Default joint count; the convention of the 2D detectors the rig ingests.
pub const DEFAULT_JOINT_COUNT: usize = 21;

/// Default gate threshold, expressed as allowed RMS pixel error per visible
/// joint observation. Squared and scaled by the observation count before
/// comparison against the squared-loss value.
pub const DEFAULT_GATE_RMS_PX: f64 = 3.0;

#[derive(Debug, Error)]
pub enum Pose3dError {
    #[error("triangulation needs at least 2 views with usable joints, got {got}")]
    InsufficientViews { got: usize },
    #[error("initializing rays for joint {joint} are parallel")]
    DegenerateRays { joint: usize },
    #[error("detection references unknown camera '{0}'")]
    UnknownCamera(String),
    #[error("detection has {got} joints, expected {expected}")]
    JointCountMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Solver(#[from] LmError),
}

/// One joint as seen by one view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointObservation {
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
}

/// Per-view 2D joint detections with confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection2D {
    pub camera: String,
    pub joints: Vec<JointObservation>,
}

/// Optimized 3D joint set in the world frame, meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Joints3D(pub Vec<Vector3<f64>>);

impl Joints3D {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct JointFit {
    /// False when fewer than two views saw the joint; the point is then the
    /// initializer (or the origin) and contributes nothing to the loss.
    pub triangulated: bool,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct TriangulationReport {
    pub joints: Vec<JointFit>,
    /// Total weighted squared reprojection loss over triangulated joints.
    pub loss: f64,
    /// Number of (joint, view) observations with positive confidence.
    pub observation_count: usize,
}

struct JointProblem<'a> {
    observations: Vec<(&'a CameraModel, JointObservation)>,
}

impl LmProblem for JointProblem<'_> {
    fn residuals(&self, params: &DVector<f64>) -> DVector<f64> {
        let p = Vector3::new(params[0], params[1], params[2]);
        let mut r = DVector::zeros(2 * self.observations.len());
        for (i, (cam, obs)) in self.observations.iter().enumerate() {
            let q = cam.pose.transform(&p);
            let u = cam.intrinsics.fx * q.x / q.z + cam.intrinsics.cx;
            let v = cam.intrinsics.fy * q.y / q.z + cam.intrinsics.cy;
            r[2 * i] = obs.confidence * (obs.u - u);
            r[2 * i + 1] = obs.confidence * (obs.v - v);
        }
        r
    }

    fn jacobian(&self, params: &DVector<f64>) -> Option<DMatrix<f64>> {
        let p = Vector3::new(params[0], params[1], params[2]);
        let mut jac = DMatrix::zeros(2 * self.observations.len(), 3);
        for (i, (cam, obs)) in self.observations.iter().enumerate() {
            let rot = &cam.pose.rotation;
            let q = cam.pose.transform(&p);
            let inv_z = 1.0 / q.z;
            for col in 0..3 {
                let dq = Vector3::new(rot[(0, col)], rot[(1, col)], rot[(2, col)]);
                let du = cam.intrinsics.fx * (dq.x * inv_z - q.x * dq.z * inv_z * inv_z);
                let dv = cam.intrinsics.fy * (dq.y * inv_z - q.y * dq.z * inv_z * inv_z);
                jac[(2 * i, col)] = -obs.confidence * du;
                jac[(2 * i + 1, col)] = -obs.confidence * dv;
            }
        }
        Some(jac)
    }
}

/// Triangulate all joints of one frame.
///
/// Joints seen with positive confidence by fewer than two views are flagged
/// rather than failing the frame; the whole call errors only when no joint
/// is triangulable. `init` overrides the two-view linear initializer.
pub fn triangulate(
    detections: &[Detection2D],
    cameras: &[CameraModel],
    init: Option<&Joints3D>,
) -> Result<(Joints3D, TriangulationReport), Pose3dError> {
    if detections.len() < 2 {
        return Err(Pose3dError::InsufficientViews {
            got: detections.len(),
        });
    }
    let joint_count = detections[0].joints.len();
    for det in detections {
        if det.joints.len() != joint_count {
            return Err(Pose3dError::JointCountMismatch {
                got: det.joints.len(),
                expected: joint_count,
            });
        }
    }
    let cams: Vec<&CameraModel> = detections
        .iter()
        .map(|det| {
            cameras
                .iter()
                .find(|c| c.id == det.camera)
                .ok_or_else(|| Pose3dError::UnknownCamera(det.camera.clone()))
        })
        .collect::<Result<_, _>>()?;

    let opts = LmOptions::default();
    let mut points = Vec::with_capacity(joint_count);
    let mut fits = Vec::with_capacity(joint_count);
    let mut loss = 0.0;
    let mut observation_count = 0;
    let mut usable_joints = 0;

    for joint in 0..joint_count {
        let observations: Vec<(&CameraModel, JointObservation)> = detections
            .iter()
            .zip(&cams)
            .filter(|(det, _)| det.joints[joint].confidence > 0.0)
            .map(|(det, cam)| (*cam, det.joints[joint]))
            .collect();
        observation_count += observations.len();

        if observations.len() < 2 {
            points.push(init.map_or(Vector3::zeros(), |j| j.0[joint]));
            fits.push(JointFit {
                triangulated: false,
                cost: 0.0,
                iterations: 0,
                converged: false,
            });
            continue;
        }
        usable_joints += 1;

        let x0 = match init {
            Some(joints) => joints.0[joint],
            None => two_view_midpoint(&observations, joint)?,
        };
        let problem = JointProblem { observations };
        let report = lm::solve(
            &problem,
            DVector::from_column_slice(&[x0.x, x0.y, x0.z]),
            &opts,
        )?;
        loss += report.cost;
        points.push(Vector3::new(
            report.params[0],
            report.params[1],
            report.params[2],
        ));
        fits.push(JointFit {
            triangulated: true,
            cost: report.cost,
            iterations: report.iterations,
            converged: report.converged,
        });
    }

    if usable_joints == 0 {
        return Err(Pose3dError::InsufficientViews { got: 1 });
    }

    Ok((
        Joints3D(points),
        TriangulationReport {
            joints: fits,
            loss,
            observation_count,
        },
    ))
}

/// Midpoint of the closest points of the rays from the two
/// highest-confidence views through their observed pixels.
fn two_view_midpoint(
    observations: &[(&CameraModel, JointObservation)],
    joint: usize,
) -> Result<Vector3<f64>, Pose3dError> {
    let mut order: Vec<usize> = (0..observations.len()).collect();
    order.sort_by(|&a, &b| {
        observations[b]
            .1
            .confidence
            .total_cmp(&observations[a].1.confidence)
    });
    let (cam_a, obs_a) = &observations[order[0]];
    let (cam_b, obs_b) = &observations[order[1]];
    let o1 = cam_a.center();
    let o2 = cam_b.center();
    let d1 = cam_a.pixel_ray(obs_a.u, obs_a.v);
    let d2 = cam_b.pixel_ray(obs_b.u, obs_b.v);
    if d1.cross(&d2).norm() < 1e-9 {
        return Err(Pose3dError::DegenerateRays { joint });
    }
    let r = o2 - o1;
    let c = d1.dot(&d2);
    let a = d1.dot(&r);
    let b = d2.dot(&r);
    let denom = 1.0 - c * c;
    let s = (a - c * b) / denom;
    let t = (c * a - b) / denom;
    Ok(((o1 + d1 * s) + (o2 + d2 * t)) / 2.0)
}

/// Validity gate: strictly below the threshold.
pub fn gate_annotation(loss: f64, threshold: f64) -> bool {
    loss < threshold
}

/// Squared-loss gate threshold for `n_observations` visible (joint, view)
/// pairs at an allowed per-observation RMS of `rms_px`.
pub fn gate_threshold(rms_px: f64, n_observations: usize) -> f64 {
    rms_px * rms_px * n_observations as f64
}

/// Per-view 2D labels obtained by projecting optimized 3D joints.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewLabels {
    pub camera: String,
    /// `(u, v, visible)` per joint. Not visible when the joint is behind
    /// the camera or projects outside the image.
    pub labels: Vec<(f64, f64, bool)>,
}

pub fn transfer_labels(joints: &Joints3D, cameras: &[CameraModel]) -> Vec<ViewLabels> {
    cameras
        .iter()
        .map(|cam| ViewLabels {
            camera: cam.id.clone(),
            labels: joints
                .0
                .iter()
                .map(|p| match cam.project(p) {
                    Ok((u, v, depth)) => (u, v, depth > MIN_DEPTH_M && cam.in_bounds(u, v)),
                    Err(_) => (0.0, 0.0, false),
                })
                .collect(),
        })
        .collect()
}

/// One annotated frame: 3D joints, gate decision, and transferred labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub frame: u64,
    pub valid: bool,
    pub loss: f64,
    pub joints3d: Vec<(f64, f64, f64)>,
    pub labels2d: BTreeMap<String, Vec<(f64, f64, bool)>>,
}

// detections.json: an array of per-frame records.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewDetections {
    pub camera: String,
    pub joints: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CubeCornerView {
    pub camera: String,
    /// `(corner index, u, v, confidence)` per observed corner.
    pub corners: Vec<(usize, f64, f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame: u64,
    pub views: Vec<ViewDetections>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cube_corners: Vec<CubeCornerView>,
}

impl FrameDetections {
    pub fn to_detections(&self) -> Vec<Detection2D> {
        self.views
            .iter()
            .map(|v| Detection2D {
                camera: v.camera.clone(),
                joints: v
                    .joints
                    .iter()
                    .map(|&(u, v, confidence)| JointObservation { u, v, confidence })
                    .collect(),
            })
            .collect()
    }
}

pub fn save_detections(path: &std::path::Path, frames: &[FrameDetections]) -> std::io::Result<()> {
    let mut buf = serde_json::to_vec_pretty(frames).expect("serializable");
    buf.push(b'\n');
    std::fs::write(path, buf)
}

pub fn load_detections(path: &std::path::Path) -> Result<Vec<FrameDetections>, std::io::Error> {
    let data = std::fs::read(path)?;
    serde_json::from_slice(&data).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

pub fn save_annotations(
    path: &std::path::Path,
    records: &[AnnotationRecord],
) -> std::io::Result<()> {
    let mut buf = serde_json::to_vec_pretty(records).expect("serializable");
    buf.push(b'\n');
    std::fs::write(path, buf)
}

pub fn load_annotations(path: &std::path::Path) -> Result<Vec<AnnotationRecord>, std::io::Error> {
    let data = std::fs::read(path)?;
    serde_json::from_slice(&data).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::numeric_jacobian;
    use crate::rng::Stream;
    use crate::synth::{look_at_pose, random_point_on_sphere};
    use crate::camera::Intrinsics;

    fn vga() -> Intrinsics {
        Intrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }

    fn three_camera_rig(seed: u64) -> Vec<CameraModel> {
        let mut stream = Stream::new(seed, 0, 0);
        (0..3)
            .map(|i| {
                let center = random_point_on_sphere(&mut stream, 0.6);
                CameraModel::new(format!("cam{i}"), vga(), look_at_pose(&center)).unwrap()
            })
            .collect()
    }

    fn random_joints(stream: &mut Stream, count: usize) -> Joints3D {
        Joints3D(
            (0..count)
                .map(|_| {
                    Vector3::new(
                        stream.uniform(-0.08, 0.08),
                        stream.uniform(-0.08, 0.08),
                        stream.uniform(-0.08, 0.08),
                    )
                })
                .collect(),
        )
    }

    fn exact_detections(cameras: &[CameraModel], joints: &Joints3D) -> Vec<Detection2D> {
        cameras
            .iter()
            .map(|cam| Detection2D {
                camera: cam.id.clone(),
                joints: joints
                    .0
                    .iter()
                    .map(|p| {
                        let (u, v, _) = cam.project(p).unwrap();
                        JointObservation {
                            u,
                            v,
                            confidence: 1.0,
                        }
                    })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn exact_projections_recover_joints() {
        let cameras = three_camera_rig(1);
        let joints = random_joints(&mut Stream::new(1, 1, 0), 21);
        let detections = exact_detections(&cameras, &joints);
        let (recovered, report) = triangulate(&detections, &cameras, None).unwrap();
        for (a, b) in recovered.0.iter().zip(&joints.0) {
            assert!((a - b).norm() < 1e-6, "joint error {}", (a - b).norm());
        }
        assert!(report.loss < 1e-12, "loss {}", report.loss);
    }

    #[test]
    fn zero_confidence_view_is_equivalent_to_dropping_it() {
        let cameras = three_camera_rig(2);
        let joints = random_joints(&mut Stream::new(2, 1, 0), 8);
        let mut detections = exact_detections(&cameras, &joints);
        // Perturb the doomed view's pixels to prove the weights remove it.
        for j in &mut detections[2].joints {
            j.u += 17.0;
            j.confidence = 0.0;
        }
        let (with_zero, _) = triangulate(&detections, &cameras, None).unwrap();
        let (without, _) =
            triangulate(&detections[..2], &cameras[..2], None).unwrap();
        for (a, b) in with_zero.0.iter().zip(&without.0) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn single_view_joints_error_out() {
        let cameras = three_camera_rig(3);
        let joints = random_joints(&mut Stream::new(3, 1, 0), 5);
        let mut detections = exact_detections(&cameras, &joints);
        for det in detections.iter_mut().skip(1) {
            for j in &mut det.joints {
                j.confidence = 0.0;
            }
        }
        assert!(matches!(
            triangulate(&detections, &cameras, None),
            Err(Pose3dError::InsufficientViews { .. })
        ));
    }

    #[test]
    fn fewer_than_two_views_error_out() {
        let cameras = three_camera_rig(4);
        let joints = random_joints(&mut Stream::new(4, 1, 0), 5);
        let detections = exact_detections(&cameras, &joints);
        assert!(matches!(
            triangulate(&detections[..1], &cameras, None),
            Err(Pose3dError::InsufficientViews { got: 1 })
        ));
    }

    #[test]
    fn analytic_jacobian_matches_numeric_on_projection_residuals() {
        let cameras = three_camera_rig(5);
        let joints = random_joints(&mut Stream::new(5, 1, 0), 1);
        let detections = exact_detections(&cameras, &joints);
        let observations: Vec<(&CameraModel, JointObservation)> = detections
            .iter()
            .zip(&cameras)
            .map(|(d, c)| (c, d.joints[0]))
            .collect();
        let problem = JointProblem { observations };
        let x = DVector::from_column_slice(&[0.01, -0.02, 0.03]);
        let analytic = problem.jacobian(&x).unwrap();
        let numeric = numeric_jacobian(&problem, &x, 1e-6).unwrap();
        for i in 0..analytic.nrows() {
            for j in 0..3 {
                let denom = analytic[(i, j)].abs().max(1.0);
                let rel = (analytic[(i, j)] - numeric[(i, j)]).abs() / denom;
                assert!(rel < 1e-5, "({i},{j}): rel err {rel}");
            }
        }
    }

    #[test]
    fn solver_with_analytic_jacobian_matches_numeric_only_run() {
        struct NumericOnly<'a>(JointProblem<'a>);
        impl LmProblem for NumericOnly<'_> {
            fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
                self.0.residuals(p)
            }
        }

        let cameras = three_camera_rig(6);
        let joints = random_joints(&mut Stream::new(6, 1, 0), 1);
        let mut detections = exact_detections(&cameras, &joints);
        let mut noise = Stream::new(6, 2, 0);
        for det in &mut detections {
            for j in &mut det.joints {
                j.u += 0.5 * noise.gaussian();
                j.v += 0.5 * noise.gaussian();
            }
        }
        let observations: Vec<(&CameraModel, JointObservation)> = detections
            .iter()
            .zip(&cameras)
            .map(|(d, c)| (c, d.joints[0]))
            .collect();
        let x0 = DVector::from_column_slice(&[0.0, 0.0, 0.0]);
        let analytic_run = lm::solve(
            &JointProblem {
                observations: observations.clone(),
            },
            x0.clone(),
            &LmOptions::default(),
        )
        .unwrap();
        let numeric_run = lm::solve(
            &NumericOnly(JointProblem { observations }),
            x0,
            &LmOptions::default(),
        )
        .unwrap();
        assert!((analytic_run.params - numeric_run.params).norm() < 1e-6);
    }

    #[test]
    fn weighted_loss_gradient_vanishes_at_the_solution() {
        // Exact pixels with uneven weights: the optimum is the true point
        // and the first-order optimality check is meaningful at 1e-6.
        let cameras = three_camera_rig(7);
        let joints = random_joints(&mut Stream::new(7, 1, 0), 1);
        let mut detections = exact_detections(&cameras, &joints);
        let mut noise = Stream::new(7, 2, 0);
        for det in &mut detections {
            for j in &mut det.joints {
                j.confidence = noise.uniform(0.4, 1.0);
            }
        }
        let (solution, _) = triangulate(&detections, &cameras, None).unwrap();
        let observations: Vec<(&CameraModel, JointObservation)> = detections
            .iter()
            .zip(&cameras)
            .map(|(d, c)| (c, d.joints[0]))
            .collect();
        let problem = JointProblem { observations };
        let x = DVector::from_column_slice(&[solution.0[0].x, solution.0[0].y, solution.0[0].z]);
        let jac = numeric_jacobian(&problem, &x, 1e-7).unwrap();
        let gradient = 2.0 * jac.transpose() * problem.residuals(&x);
        assert!(gradient.norm() < 1e-6, "gradient norm {}", gradient.norm());
    }

    #[test]
    fn extra_exact_view_does_not_hurt_median_error() {
        let mut errors_three = Vec::new();
        let mut errors_four = Vec::new();
        for trial in 0..100 {
            let mut rig_stream = Stream::new(800 + trial, 0, 0);
            let cameras: Vec<CameraModel> = (0..4)
                .map(|i| {
                    let center = random_point_on_sphere(&mut rig_stream, 0.6);
                    CameraModel::new(format!("cam{i}"), vga(), look_at_pose(&center)).unwrap()
                })
                .collect();
            let joints = random_joints(&mut Stream::new(900 + trial, 0, 0), 1);
            let mut detections = exact_detections(&cameras, &joints);
            let mut noise = Stream::new(1000 + trial, 0, 0);
            // Views 0..3 noisy, view 3 stays exact.
            for det in detections.iter_mut().take(3) {
                for j in &mut det.joints {
                    j.u += noise.gaussian();
                    j.v += noise.gaussian();
                }
            }
            let (three, _) = triangulate(&detections[..3], &cameras[..3], None).unwrap();
            let (four, _) = triangulate(&detections, &cameras, None).unwrap();
            errors_three.push((three.0[0] - joints.0[0]).norm());
            errors_four.push((four.0[0] - joints.0[0]).norm());
        }
        errors_three.sort_by(f64::total_cmp);
        errors_four.sort_by(f64::total_cmp);
        let median_three = errors_three[50];
        let median_four = errors_four[50];
        assert!(
            median_four <= median_three,
            "median with exact 4th view {median_four} > {median_three}"
        );
    }

    #[test]
    fn joint_permutation_permutes_outputs() {
        let cameras = three_camera_rig(8);
        let joints = random_joints(&mut Stream::new(8, 1, 0), 6);
        let mut detections = exact_detections(&cameras, &joints);
        let mut noise = Stream::new(8, 2, 0);
        for det in &mut detections {
            for j in &mut det.joints {
                j.u += 0.3 * noise.gaussian();
                j.v += 0.3 * noise.gaussian();
            }
        }
        let (direct, _) = triangulate(&detections, &cameras, None).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let permuted: Vec<Detection2D> = detections
            .iter()
            .map(|d| Detection2D {
                camera: d.camera.clone(),
                joints: perm.iter().map(|&i| d.joints[i]).collect(),
            })
            .collect();
        let (out, _) = triangulate(&permuted, &cameras, None).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(out.0[k], direct.0[i]);
        }
    }

    #[test]
    fn gate_is_strict() {
        assert!(gate_annotation(0.0, 1.0));
        assert!(!gate_annotation(1.0, 1.0));
        assert!(!gate_annotation(2.0, 1.0));
    }

    #[test]
    fn gate_sweep_matches_recount() {
        let mut stream = Stream::new(9, 0, 0);
        let losses: Vec<f64> = (0..100).map(|_| stream.uniform(0.0, 10.0)).collect();
        for threshold in [0.0, 0.5, 2.0, 5.0, 9.99, 10.0] {
            let gated = losses
                .iter()
                .filter(|&&l| gate_annotation(l, threshold))
                .count();
            let recount = losses.iter().filter(|&&l| l < threshold).count();
            assert_eq!(gated, recount);
        }
    }

    #[test]
    fn transfer_round_trips_noiseless_detections() {
        let cameras = three_camera_rig(10);
        let joints = random_joints(&mut Stream::new(10, 1, 0), 21);
        let detections = exact_detections(&cameras, &joints);
        let (recovered, _) = triangulate(&detections, &cameras, None).unwrap();
        let labels = transfer_labels(&recovered, &cameras);
        for (view, det) in labels.iter().zip(&detections) {
            for (&(u, v, visible), obs) in view.labels.iter().zip(&det.joints) {
                assert!(visible);
                assert!((u - obs.u).abs() < 1e-6 && (v - obs.v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn joint_behind_camera_is_invisible() {
        let cameras = three_camera_rig(11);
        // 2 m along the first camera's backward axis is behind it.
        let center = cameras[0].center();
        let behind = center + (center - Vector3::zeros()).normalize() * 2.0;
        let labels = transfer_labels(&Joints3D(vec![behind]), &cameras);
        assert!(!labels[0].labels[0].2);
    }
}
