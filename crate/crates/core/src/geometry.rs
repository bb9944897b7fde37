//! Rigid transforms, camera intrinsics, trajectories and depth unprojection.
//!
//! All internal math runs in pixels and `f64`. A [`Pose`] always holds a
//! proper rotation: constructors validate or project onto SO(3), so the
//! operations here never see a reflection or a skewed basis.

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{is_valid_depth, ColorRaster, DepthRaster};

/// Orthonormality tolerance for [`Pose::new`], measured as the Frobenius norm of `RᵀR − I`.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Number of chained products after which rotations are re-projected onto SO(3).
pub const REORTHONORMALIZE_EVERY: usize = 16;

/// How intrinsics were expressed when they were read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntrinsicsConvention {
    Pixel,
    Normalized,
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default = "pixel_convention")]
    pub source_convention: IntrinsicsConvention,
}

fn pixel_convention() -> IntrinsicsConvention {
    IntrinsicsConvention::Pixel
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            source_convention: IntrinsicsConvention::Pixel,
        };
        k.validate()?;
        Ok(k)
    }

    /// Converts resolution-independent intrinsics (fractions of width and height) to pixels.
    pub fn from_normalized(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let (w, h) = (width as f64, height as f64);
        let k = Self {
            fx: fx * w,
            fy: fy * h,
            cx: cx * w,
            cy: cy * h,
            width,
            height,
            source_convention: IntrinsicsConvention::Normalized,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "focal lengths must be finite and positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("raster dimensions must be >= 1".into()));
        }
        if self.cx < 0.0 || self.cx >= self.width as f64 || self.cy < 0.0 || self.cy >= self.height as f64 {
            return Err(Error::InvalidInput(format!(
                "principal point ({}, {}) outside {}x{} raster",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// A rigid transform `x ↦ R x + T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    /// Builds a pose, rejecting rotations that are not orthonormal with determinant one.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation, ORTHONORMAL_TOL)?;
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite translation".into()));
        }
        Ok(Self { rotation, translation })
    }

    /// Builds a pose from a rotation known only to limited precision (for example six
    /// printed decimals). Rotations within `tol` of SO(3) are projected onto it.
    pub fn from_approx(rotation: Matrix3<f64>, translation: Vector3<f64>, tol: f64) -> Result<Self> {
        check_rotation(&rotation, tol)?;
        Self::new(nearest_rotation(&rotation), translation)
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>, translation: Vector3<f64>) -> Result<Self> {
        Self::new(*q.to_rotation_matrix().matrix(), translation)
    }

    pub(crate) fn new_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Row-major rotation entries.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    /// Same translation, rotation replaced by its nearest orthonormal matrix.
    pub fn orthonormalized(&self) -> Pose {
        Pose {
            rotation: nearest_rotation(&self.rotation),
            translation: self.translation,
        }
    }

    /// Largest absolute deviation of the homogeneous matrix from identity.
    pub fn deviation_from_identity(&self) -> f64 {
        (self.to_homogeneous() - Matrix4::identity()).amax()
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        self.deviation_from_identity() < tol
    }
}

/// Frobenius norm of `RᵀR − I`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

fn check_rotation(r: &Matrix3<f64>, tol: f64) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidPose("non-finite rotation".into()));
    }
    let ortho = orthonormality_error(r);
    if ortho > tol {
        return Err(Error::InvalidPose(format!(
            "rotation is not orthonormal (|RᵀR - I| = {ortho:e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > tol {
        return Err(Error::InvalidPose(format!("rotation determinant is {det}")));
    }
    Ok(())
}

/// Polar projection onto SO(3): `U Vᵀ` from the SVD, with the sign fixed so `det = +1`.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return *m;
    };
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        let mut col = u.column_mut(2);
        col *= -1.0;
        r = u * v_t;
    }
    r
}

/// Geodesic angle of a rotation in radians, `arccos((tr R − 1) / 2)`.
///
/// Evaluated as `atan2(sin, cos)` with the sine taken from the skew part, which stays
/// accurate near 0 and π where `acos` loses half its digits. A bitwise-symmetric input
/// such as `A Aᵀ` gives exactly 0 or π.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    (skew.norm() / 2.0).atan2((r.trace() - 1.0) / 2.0)
}

pub fn invert_pose(p: &Pose) -> Pose {
    p.inverse()
}

/// Composes `poses[0] ∘ poses[1] ∘ …`, re-projecting the running rotation onto SO(3)
/// every [`REORTHONORMALIZE_EVERY`] products.
pub fn compose_chain(poses: &[Pose]) -> Pose {
    let mut acc = Pose::identity();
    for (i, p) in poses.iter().enumerate() {
        acc = acc.compose(p);
        if (i + 1) % REORTHONORMALIZE_EVERY == 0 {
            acc = acc.orthonormalized();
        }
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseConvention {
    WorldToCamera,
    CameraToWorld,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleSpace {
    Relative,
    Metric,
}

/// An ordered list of camera poses sharing one convention and one scale space.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub convention: PoseConvention,
    pub scale_space: ScaleSpace,
    pub frame_indices: Option<Vec<i64>>,
}

/// Tolerance under which the first pose counts as identity.
pub const CANONICAL_TOL: f64 = 1e-9;

impl Trajectory {
    pub fn new(poses: Vec<Pose>, convention: PoseConvention, scale_space: ScaleSpace) -> Self {
        Self {
            poses,
            convention,
            scale_space,
            frame_indices: None,
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn is_canonical(&self) -> bool {
        self.poses.first().is_some_and(|p| p.is_identity(CANONICAL_TOL))
    }

    /// Inverts every pose and flips the convention tag.
    pub fn inverted(&self) -> Trajectory {
        Trajectory {
            poses: self.poses.iter().map(Pose::inverse).collect(),
            convention: match self.convention {
                PoseConvention::WorldToCamera => PoseConvention::CameraToWorld,
                PoseConvention::CameraToWorld => PoseConvention::WorldToCamera,
            },
            scale_space: self.scale_space,
            frame_indices: self.frame_indices.clone(),
        }
    }

    pub fn to_camera_to_world(&self) -> Trajectory {
        match self.convention {
            PoseConvention::CameraToWorld => self.clone(),
            PoseConvention::WorldToCamera => self.inverted(),
        }
    }

    pub fn to_world_to_camera(&self) -> Trajectory {
        match self.convention {
            PoseConvention::WorldToCamera => self.clone(),
            PoseConvention::CameraToWorld => self.inverted(),
        }
    }
}

/// Re-expresses a camera-to-world trajectory relative to its first frame:
/// `pose[i] ← pose[0]⁻¹ ∘ pose[i]`.
pub fn canonicalize(t: &Trajectory) -> Result<Trajectory> {
    let first = t.poses.first().ok_or(Error::EmptyInput("trajectory has no poses"))?;
    if t.convention != PoseConvention::CameraToWorld {
        return Err(Error::InvalidInput(
            "canonicalization expects a camera_to_world trajectory".into(),
        ));
    }
    let first_inv = first.inverse();
    let mut poses = Vec::with_capacity(t.poses.len());
    poses.push(Pose::identity());
    poses.extend(t.poses[1..].iter().map(|p| first_inv.compose(p)));
    Ok(Trajectory {
        poses,
        convention: t.convention,
        scale_space: t.scale_space,
        frame_indices: t.frame_indices.clone(),
    })
}

/// Multiplies every translation by `alpha` and tags the result metric.
pub fn apply_scale(t: &Trajectory, alpha: f64) -> Result<Trajectory> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::InvalidScale(alpha));
    }
    Ok(Trajectory {
        poses: t
            .poses
            .iter()
            .map(|p| Pose::new_unchecked(p.rotation, p.translation * alpha))
            .collect(),
        convention: t.convention,
        scale_space: ScaleSpace::Metric,
        frame_indices: t.frame_indices.clone(),
    })
}

/// Quaternion dot products below this magnitude mark rotations 180° apart.
const ANTIPODAL_DOT: f64 = 1e-9;

/// Shortest-arc spherical interpolation. `None` when the rotations are 180° apart.
fn slerp(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, s: f64) -> Option<UnitQuaternion<f64>> {
    let qa = a.quaternion().coords;
    let mut qb = b.quaternion().coords;
    let mut dot = qa.dot(&qb);
    if dot.abs() < ANTIPODAL_DOT {
        return None;
    }
    if dot < 0.0 {
        qb = -qb;
        dot = -dot;
    }
    let coords = if dot > 1.0 - 1e-12 {
        qa * (1.0 - s) + qb * s
    } else {
        let theta = dot.min(1.0).acos();
        let sin_theta = theta.sin();
        qa * (((1.0 - s) * theta).sin() / sin_theta) + qb * ((s * theta).sin() / sin_theta)
    };
    Some(UnitQuaternion::from_quaternion(Quaternion::from(coords)))
}

/// Expands keyframes into `n_frames` poses with uniform parameter spacing.
///
/// Keyframes sit at uniform positions on `[0, 1]`. Within a segment the rotation
/// follows a shortest-arc slerp and the translation a linear blend. The first and
/// last outputs are copies of the first and last keyframes.
pub fn interpolate_keyframes(keys: &Trajectory, n_frames: usize) -> Result<Trajectory> {
    let k = keys.poses.len();
    if k < 2 {
        return Err(Error::InvalidInput(format!(
            "interpolation needs at least 2 keyframes, got {k}"
        )));
    }
    if n_frames < k {
        return Err(Error::InvalidInput(format!(
            "cannot interpolate {k} keyframes into {n_frames} frames"
        )));
    }
    let quats: Vec<_> = keys.poses.iter().map(Pose::quaternion).collect();
    // Fail fast on ambiguous segments, even those no output sample lands in.
    for i in 0..k - 1 {
        if slerp(&quats[i], &quats[i + 1], 0.5).is_none() {
            return Err(Error::AmbiguousRotation(i, i + 1));
        }
    }

    let segments = (k - 1) as f64;
    let mut poses = Vec::with_capacity(n_frames);
    for j in 0..n_frames {
        if j == 0 {
            poses.push(keys.poses[0]);
            continue;
        }
        if j == n_frames - 1 {
            poses.push(keys.poses[k - 1]);
            continue;
        }
        let x = j as f64 / (n_frames - 1) as f64 * segments;
        let seg = (x.floor() as usize).min(k - 2);
        let s = x - seg as f64;
        let (a, b) = (&keys.poses[seg], &keys.poses[seg + 1]);
        if s == 0.0 {
            poses.push(*a);
            continue;
        }
        let q = slerp(&quats[seg], &quats[seg + 1], s).ok_or(Error::AmbiguousRotation(seg, seg + 1))?;
        let t = a.translation * (1.0 - s) + b.translation * s;
        poses.push(Pose::new_unchecked(*q.to_rotation_matrix().matrix(), t));
    }
    Ok(Trajectory {
        poses,
        convention: keys.convention,
        scale_space: keys.scale_space,
        frame_indices: None,
    })
}

/// Which frame a point cloud's coordinates live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudFrame {
    Camera,
    World,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vector3<f64>>,
    pub colors: Option<Vec<[f64; 3]>>,
    /// Linear index `v * width + u` of the pixel each point came from.
    pub source_pixel: Option<Vec<usize>>,
    pub frame: CloudFrame,
}

impl PointCloud {
    pub fn new(positions: Vec<Vector3<f64>>, colors: Option<Vec<[f64; 3]>>, frame: CloudFrame) -> Result<Self> {
        if positions.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidInput("point positions must be finite".into()));
        }
        if let Some(c) = &colors {
            if c.len() != positions.len() {
                return Err(Error::Shape(format!(
                    "{} colors for {} points",
                    c.len(),
                    positions.len()
                )));
            }
            if c.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidInput("point colors must lie in [0, 1]".into()));
            }
        }
        Ok(Self {
            positions,
            colors,
            source_pixel: None,
            frame,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Every `stride`-th point such that at most `max_points` remain.
    pub fn downsample(&self, max_points: usize) -> PointCloud {
        let n = self.positions.len();
        if max_points == 0 {
            return PointCloud {
                positions: vec![],
                colors: self.colors.as_ref().map(|_| vec![]),
                source_pixel: self.source_pixel.as_ref().map(|_| vec![]),
                frame: self.frame,
            };
        }
        let stride = n.div_ceil(max_points).max(1);
        let pick = |i: usize| i.is_multiple_of(stride);
        PointCloud {
            positions: self
                .positions
                .iter()
                .enumerate()
                .filter(|(i, _)| pick(*i))
                .map(|(_, p)| *p)
                .collect(),
            colors: self.colors.as_ref().map(|c| {
                c.iter()
                    .enumerate()
                    .filter(|(i, _)| pick(*i))
                    .map(|(_, c)| *c)
                    .collect()
            }),
            source_pixel: self.source_pixel.as_ref().map(|s| {
                s.iter()
                    .enumerate()
                    .filter(|(i, _)| pick(*i))
                    .map(|(_, s)| *s)
                    .collect()
            }),
            frame: self.frame,
        }
    }
}

/// Lifts every valid depth pixel to `D(u,v) · K⁻¹ · (u, v, 1)ᵀ` in the camera frame.
///
/// Pixel `(u, v)` is used at its integer coordinates. Invalid depths produce no point.
pub fn unproject(depth: &DepthRaster, k: &CameraIntrinsics, colors: Option<&ColorRaster>) -> Result<PointCloud> {
    if depth.width() != k.width || depth.height() != k.height {
        return Err(Error::Shape(format!(
            "depth raster {}x{} does not match intrinsics {}x{}",
            depth.width(),
            depth.height(),
            k.width,
            k.height
        )));
    }
    if let Some(c) = colors {
        if c.width() != depth.width() || c.height() != depth.height() {
            return Err(Error::Shape(format!(
                "color raster {}x{} does not match depth {}x{}",
                c.width(),
                c.height(),
                depth.width(),
                depth.height()
            )));
        }
    }
    let mut positions = Vec::new();
    let mut rgb = colors.map(|_| Vec::new());
    let mut source = Vec::new();
    for v in 0..depth.height() {
        for u in 0..depth.width() {
            let d = depth.get(u, v) as f64;
            if !is_valid_depth(d) {
                continue;
            }
            positions.push(Vector3::new(
                d * (u as f64 - k.cx) / k.fx,
                d * (v as f64 - k.cy) / k.fy,
                d,
            ));
            if let (Some(out), Some(c)) = (rgb.as_mut(), colors) {
                out.push(c.get(u, v));
            }
            source.push(v * depth.width() + u);
        }
    }
    Ok(PointCloud {
        positions,
        colors: rgb,
        source_pixel: Some(source),
        frame: CloudFrame::Camera,
    })
}
