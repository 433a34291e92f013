//! Camera pose estimation from calibration-cube corner observations.
//!
//! The cube defines the world frame: origin at its centre, axes along its
//! faces. Given pixel observations of known cube corners and the camera
//! intrinsics, [`estimate_camera_pose`] recovers the world-to-camera rigid
//! transform by confidence-weighted reprojection minimization, restarted
//! from several random orientations.

use crate::camera::{orthonormalize, random_rotation, Intrinsics, Pose6D};
use crate::lm::{self, LmError, LmOptions, LmProblem, LmReport};
use crate::rng::Stream;
use nalgebra::{DVector, Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("need at least 4 distinct weighted corner observations, got {got}")]
    InsufficientCorrespondences { got: usize },
    #[error("recovered pose places observed corner {corner} behind the camera")]
    BehindCamera { corner: usize },
    #[error("no restart converged within solver tolerances")]
    NoConvergence,
    #[error(transparent)]
    Solver(#[from] LmError),
    #[error("cube file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cube file parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Calibration cube geometry. Corners live in the cube (world) frame.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CubeSpec {
    pub edge_m: f64,
}

impl CubeSpec {
    /// The 8 corners, all sign combinations of `edge/2` per axis.
    /// Index bit layout: bit0 = x, bit1 = y, bit2 = z.
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let h = self.edge_m / 2.0;
        let mut out = [Vector3::zeros(); 8];
        for (i, corner) in out.iter_mut().enumerate() {
            *corner = Vector3::new(
                if i & 1 == 0 { -h } else { h },
                if i & 2 == 0 { -h } else { h },
                if i & 4 == 0 { -h } else { h },
            );
        }
        out
    }
}

/// One detected cube corner in an image.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CornerObservation {
    pub corner: usize,
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone)]
pub struct PoseEstimate {
    pub pose: Pose6D,
    pub report: LmReport,
    /// Unweighted RMS reprojection error over the observations, in pixels.
    pub rms_px: f64,
}

/// Residuals of one restart: rotation is `exp(w) * r_base` with `w` the
/// axis-angle parameter block, translation is the raw parameter block.
struct CubePoseProblem<'a> {
    intrinsics: &'a Intrinsics,
    corners: [Vector3<f64>; 8],
    observations: &'a [CornerObservation],
    r_base: Matrix3<f64>,
}

impl CubePoseProblem<'_> {
    fn rotation_at(&self, params: &DVector<f64>) -> Matrix3<f64> {
        let w = Vector3::new(params[0], params[1], params[2]);
        Rotation3::new(w).into_inner() * self.r_base
    }
}

impl LmProblem for CubePoseProblem<'_> {
    fn residuals(&self, params: &DVector<f64>) -> DVector<f64> {
        let rot = self.rotation_at(params);
        let t = Vector3::new(params[3], params[4], params[5]);
        let mut r = DVector::zeros(2 * self.observations.len());
        for (i, obs) in self.observations.iter().enumerate() {
            let p = rot * self.corners[obs.corner] + t;
            // Raw pinhole algebra: a vanishing or negative depth yields a
            // huge or non-finite residual, which the solver rejects.
            let u = self.intrinsics.fx * p.x / p.z + self.intrinsics.cx;
            let v = self.intrinsics.fy * p.y / p.z + self.intrinsics.cy;
            r[2 * i] = obs.confidence * (obs.u - u);
            r[2 * i + 1] = obs.confidence * (obs.v - v);
        }
        r
    }
}

const RESTART_SEED: u64 = 0x0CA1_1B0A_7E50;
const RECENTER_ROUNDS: usize = 4;
const RECENTER_TOL: f64 = 1e-10;

/// Recover the camera's 6D pose in the cube frame.
///
/// Runs `restarts` independent optimizations from uniformly sampled initial
/// rotations (deterministic seed order) and returns the lowest-cost result;
/// ties go to the lowest restart index. The returned rotation is
/// re-orthonormalized after the solve.
pub fn estimate_camera_pose(
    intrinsics: &Intrinsics,
    cube: &CubeSpec,
    observations: &[CornerObservation],
    restarts: usize,
) -> Result<PoseEstimate, CalibError> {
    let weighted: Vec<CornerObservation> = observations
        .iter()
        .filter(|o| o.confidence > 0.0 && o.corner < 8)
        .copied()
        .collect();
    let mut seen = [false; 8];
    for obs in &weighted {
        seen[obs.corner] = true;
    }
    let distinct = seen.iter().filter(|s| **s).count();
    if distinct < 4 {
        return Err(CalibError::InsufficientCorrespondences { got: distinct });
    }

    let corners = cube.corners();
    let t_init = initial_translation(intrinsics, cube, &weighted);
    let opts = LmOptions::default();

    let mut best: Option<(f64, Matrix3<f64>, Vector3<f64>, LmReport)> = None;
    for restart in 0..restarts.max(1) {
        let mut stream = Stream::new(RESTART_SEED, restart as u64, 0);
        let mut r_base = random_rotation(&mut stream);
        let mut t_base = t_init;
        let mut last: Option<LmReport> = None;
        let mut total_iterations = 0;

        // Re-centre the axis-angle parameterization: fold the solved local
        // rotation into the base and re-solve from w = 0 until the update
        // vanishes. Keeps the parameter block far from the angle singularity.
        for _ in 0..RECENTER_ROUNDS {
            let problem = CubePoseProblem {
                intrinsics,
                corners,
                observations: &weighted,
                r_base,
            };
            let mut x0 = DVector::zeros(6);
            x0[3] = t_base.x;
            x0[4] = t_base.y;
            x0[5] = t_base.z;
            let report = match lm::solve(&problem, x0, &opts) {
                Ok(r) => r,
                Err(LmError::SingularNormalEquations) => break,
                Err(e) => return Err(e.into()),
            };
            total_iterations += report.iterations;
            let w = Vector3::new(report.params[0], report.params[1], report.params[2]);
            r_base = orthonormalize(&(Rotation3::new(w).into_inner() * r_base));
            t_base = Vector3::new(report.params[3], report.params[4], report.params[5]);
            let done = w.norm() < RECENTER_TOL;
            last = Some(report);
            if done {
                break;
            }
        }

        if let Some(mut report) = last {
            report.iterations = total_iterations;
            let better = match &best {
                Some((cost, ..)) => report.cost < *cost,
                None => true,
            };
            if better {
                best = Some((report.cost, r_base, t_base, report));
            }
        }
    }

    let (_, rotation, translation, report) = best.ok_or(CalibError::NoConvergence)?;
    if !report.converged {
        return Err(CalibError::NoConvergence);
    }

    // Depth check on every observed corner under the recovered pose.
    for obs in &weighted {
        let z = (rotation * corners[obs.corner] + translation).z;
        if z <= crate::camera::MIN_DEPTH_M {
            return Err(CalibError::BehindCamera { corner: obs.corner });
        }
    }

    let pose = Pose6D::new(rotation, translation).expect("orthonormalized rotation");
    let rms_px = reprojection_rms(intrinsics, &pose, cube, &weighted);
    Ok(PoseEstimate {
        pose,
        report,
        rms_px,
    })
}

/// Unweighted RMS pixel error of cube corners under a pose.
pub fn reprojection_rms(
    intrinsics: &Intrinsics,
    pose: &Pose6D,
    cube: &CubeSpec,
    observations: &[CornerObservation],
) -> f64 {
    let corners = cube.corners();
    let mut sum = 0.0;
    for obs in observations {
        let p = pose.transform(&corners[obs.corner]);
        let u = intrinsics.fx * p.x / p.z + intrinsics.cx;
        let v = intrinsics.fy * p.y / p.z + intrinsics.cy;
        sum += (obs.u - u).powi(2) + (obs.v - v).powi(2);
    }
    (sum / observations.len().max(1) as f64).sqrt()
}

/// Translation initializer: back-project the pixel centroid of the observed
/// corners at `depth = edge * fx / spread`, with spread the mean pixel
/// distance of the observations from their centroid.
fn initial_translation(
    intrinsics: &Intrinsics,
    cube: &CubeSpec,
    observations: &[CornerObservation],
) -> Vector3<f64> {
    let n = observations.len() as f64;
    let cu = observations.iter().map(|o| o.u).sum::<f64>() / n;
    let cv = observations.iter().map(|o| o.v).sum::<f64>() / n;
    let spread = observations
        .iter()
        .map(|o| ((o.u - cu).powi(2) + (o.v - cv).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let depth = if spread > 1e-6 {
        cube.edge_m * intrinsics.fx / spread
    } else {
        1.0
    };
    let dir = Vector3::new(
        (cu - intrinsics.cx) / intrinsics.fx,
        (cv - intrinsics.cy) / intrinsics.fy,
        1.0,
    );
    dir.normalize() * depth
}

pub fn load_cube(path: &std::path::Path) -> Result<CubeSpec, CalibError> {
    let data = std::fs::read(path)?;
    Ok(serde_json::from_slice(&data)?)
}
