//! Pinhole camera model and rigid poses.
//!
//! The world frame is the calibration-cube frame: origin at the cube centre,
//! axes aligned to the cube faces. All extrinsics map world points into the
//! camera frame; translations are in meters, pixel coordinates have the
//! origin at the top-left corner.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

/// Tolerance for the rotation orthonormality check, `max|R^T R - I|`.
pub const ROTATION_TOL: f64 = 1e-9;

/// Points closer to the image plane than this are treated as having no depth.
pub const MIN_DEPTH_M: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point has non-positive depth in the camera frame (z = {z})")]
    NonPositiveDepth { z: f64 },
    #[error("rotation is not a proper orthonormal matrix (deviation {deviation})")]
    InvalidRotation { deviation: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("camera file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("camera file parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("camera file field error: {0}")]
    Schema(String),
}

/// Pinhole intrinsics plus sensor size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(0.0 <= self.cx && self.cx < self.width as f64)
            || !(0.0 <= self.cy && self.cy < self.height as f64)
        {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Rigid transform taking world (cube-frame) points into a camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose6D {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose6D {
    /// Build a pose, rejecting rotations that are not proper orthonormal.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let deviation = orthonormality_deviation(&rotation);
        if deviation >= ROTATION_TOL || rotation.determinant() < 0.0 {
            return Err(GeometryError::InvalidRotation { deviation });
        }
        Ok(Pose6D {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Pose6D {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn transform(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// Inverse rigid transform: `(R, t)^-1 = (R^T, -R^T t)`.
    pub fn inverse(&self) -> Pose6D {
        let rt = self.rotation.transpose();
        Pose6D {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Composition `self ∘ other`: apply `other`, then `self`.
    pub fn compose(&self, other: &Pose6D) -> Pose6D {
        Pose6D {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// `max|R^T R - I|` over all entries.
pub fn orthonormality_deviation(rotation: &Matrix3<f64>) -> f64 {
    let gram = rotation.transpose() * rotation - Matrix3::identity();
    gram.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Project a general 3x3 matrix onto SO(3) via SVD (nearest rotation).
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd with u");
    let vt = svd.v_t.expect("svd with v_t");
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        // Flip the axis of the smallest singular value.
        let mut u_fixed = u;
        u_fixed.column_mut(2).neg_mut();
        r = u_fixed * vt;
    }
    r
}

/// Uniform random rotation: normalized quaternion of four gaussians.
pub fn random_rotation(stream: &mut crate::rng::Stream) -> Matrix3<f64> {
    use nalgebra::{Quaternion, UnitQuaternion};
    let q = Quaternion::new(
        stream.gaussian(),
        stream.gaussian(),
        stream.gaussian(),
        stream.gaussian(),
    );
    UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .into_inner()
}

/// One view of the rig: intrinsics plus world-to-camera extrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub id: String,
    pub intrinsics: Intrinsics,
    pub pose: Pose6D,
}

impl CameraModel {
    pub fn new(id: impl Into<String>, intrinsics: Intrinsics, pose: Pose6D) -> Result<Self, GeometryError> {
        intrinsics.validate()?;
        // Re-validate the rotation so models built from raw matrices are checked.
        let pose = Pose6D::new(pose.rotation, pose.translation)?;
        Ok(CameraModel {
            id: id.into(),
            intrinsics,
            pose,
        })
    }

    /// Install a camera's 6D pose relative to the cube centre as extrinsics.
    ///
    /// The pose maps cube-frame points into this camera's frame, so the
    /// extrinsics are the pose itself; the constructor exists to gate the
    /// rotation and intrinsics invariants in one place.
    pub fn from_cube_pose(
        id: impl Into<String>,
        intrinsics: Intrinsics,
        pose: Pose6D,
    ) -> Result<Self, GeometryError> {
        Self::new(id, intrinsics, pose)
    }

    /// Project a world point to pixels. Returns `(u, v, depth)`.
    ///
    /// Points outside the image bounds still project; visibility is the
    /// caller's decision. Points at or behind the camera plane error.
    pub fn project(&self, point: &Vector3<f64>) -> Result<(f64, f64, f64), GeometryError> {
        let p = self.pose.transform(point);
        if p.z <= MIN_DEPTH_M {
            return Err(GeometryError::NonPositiveDepth { z: p.z });
        }
        let u = self.intrinsics.fx * p.x / p.z + self.intrinsics.cx;
        let v = self.intrinsics.fy * p.y / p.z + self.intrinsics.cy;
        Ok((u, v, p.z))
    }

    /// True when `(u, v)` lies inside `[0, width) x [0, height)`.
    pub fn in_bounds(&self, u: f64, v: f64) -> bool {
        u >= 0.0
            && u < self.intrinsics.width as f64
            && v >= 0.0
            && v < self.intrinsics.height as f64
    }

    /// Camera centre in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.pose.rotation.transpose() * self.pose.translation)
    }

    /// World-frame direction of the ray through pixel `(u, v)`, unit length.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let dir_cam = Vector3::new(
            (u - self.intrinsics.cx) / self.intrinsics.fx,
            (v - self.intrinsics.cy) / self.intrinsics.fy,
            1.0,
        );
        (self.pose.rotation.transpose() * dir_cam).normalize()
    }
}

// cameras.json: {"cameras":[{"id","fx","fy","cx","cy","width","height",
//                            "rotation":[9 row-major],"translation":[3]}]}

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    id: String,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    rotation: [f64; 9],
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct CamerasFile {
    cameras: Vec<CameraRecord>,
}

impl From<&CameraModel> for CameraRecord {
    fn from(cam: &CameraModel) -> Self {
        let r = &cam.pose.rotation;
        CameraRecord {
            id: cam.id.clone(),
            fx: cam.intrinsics.fx,
            fy: cam.intrinsics.fy,
            cx: cam.intrinsics.cx,
            cy: cam.intrinsics.cy,
            width: cam.intrinsics.width,
            height: cam.intrinsics.height,
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [
                cam.pose.translation.x,
                cam.pose.translation.y,
                cam.pose.translation.z,
            ],
        }
    }
}

impl TryFrom<CameraRecord> for CameraModel {
    type Error = GeometryError;

    fn try_from(rec: CameraRecord) -> Result<Self, GeometryError> {
        let m = &rec.rotation;
        let rotation = Matrix3::new(m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8]);
        let translation = Vector3::new(rec.translation[0], rec.translation[1], rec.translation[2]);
        CameraModel::new(
            rec.id,
            Intrinsics {
                fx: rec.fx,
                fy: rec.fy,
                cx: rec.cx,
                cy: rec.cy,
                width: rec.width,
                height: rec.height,
            },
            Pose6D::new(rotation, translation)?,
        )
    }
}

pub fn write_cameras<W: Write>(writer: W, cameras: &[CameraModel]) -> Result<(), GeometryError> {
    let file = CamerasFile {
        cameras: cameras.iter().map(CameraRecord::from).collect(),
    };
    serde_json::to_writer_pretty(writer, &file)?;
    Ok(())
}

pub fn read_cameras<R: Read>(reader: R) -> Result<Vec<CameraModel>, GeometryError> {
    let file: CamerasFile = serde_json::from_reader(reader)?;
    file.cameras.into_iter().map(CameraModel::try_from).collect()
}

pub fn save_cameras(path: &Path, cameras: &[CameraModel]) -> Result<(), GeometryError> {
    let mut buf = Vec::new();
    write_cameras(&mut buf, cameras)?;
    buf.push(b'\n');
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_cameras(path: &Path) -> Result<Vec<CameraModel>, GeometryError> {
    let data = std::fs::read(path)?;
    read_cameras(data.as_slice())
}
