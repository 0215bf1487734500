//! Pinhole camera model, rigid transforms and flow factorization.
//!
//! Conventions: right-handed camera frame looking along +Z, x to the right,
//! y down, image origin at the top-left corner and pixel centers on integer
//! coordinates. Depth is the Z coordinate along the optical axis, not the
//! ray length.
//!
//! A [`RigidTransform`] used for ego flow maps *current* camera coordinates
//! into the camera coordinates of the *prior* frame. Ego flow at pixel `p` is
//! `p - p'`, where `p'` is where the same 3D point projected in the prior
//! frame.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

/// Grid on which every materialized flow value lies (px).
///
/// Sums and differences of values on this grid are exact in f64 as long as
/// magnitudes stay below [`MAX_VALID_FLOW`], which makes `ego + obj == raw`
/// hold bit for bit.
pub const FLOW_QUANTUM: f64 = 1.0 / (1u64 << 24) as f64;

/// Coarser grid used when flows are exported to float32 files.
pub const FILE_FLOW_QUANTUM: f64 = 1.0 / (1u64 << 12) as f64;

/// Flow components larger than this (px per frame) are marked invalid.
pub const MAX_VALID_FLOW: f64 = 1024.0;

/// Default depth assigned to pixels with no surface hit.
pub const DEFAULT_FAR_PLANE: f64 = 100.0;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("time interval must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal with det +1 (deviation {0:e})")]
    NotARotation(f64),
    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("time interval mismatch: {0} vs {1}")]
    DtMismatch(f64, f64),
    #[error("invalid depth value {value} at pixel index {index}")]
    InvalidDepth { index: usize, value: f32 },
    #[error("buffer has {got} entries, expected {expected}")]
    BadLength { expected: usize, got: usize },
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub focal: f64,
    pub principal_x: f64,
    pub principal_y: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(
        focal: f64,
        principal_x: f64,
        principal_y: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        if !(focal.is_finite() && focal > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal must be positive, got {focal}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics(
                "image size must be non-zero".into(),
            ));
        }
        if !(0.0..width as f64).contains(&principal_x) || !(0.0..height as f64).contains(&principal_y)
        {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({principal_x}, {principal_y}) outside {width}x{height}"
            )));
        }
        Ok(Self {
            focal,
            principal_x,
            principal_y,
            width,
            height,
        })
    }

    /// Intrinsics for a centered principal point and a horizontal field of view.
    pub fn from_hfov(width: usize, height: usize, hfov_rad: f64) -> Result<Self, GeometryError> {
        if !(hfov_rad > 0.0 && hfov_rad < std::f64::consts::PI) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "horizontal fov {hfov_rad} rad out of range"
            )));
        }
        let focal = (width as f64 / 2.0) / (hfov_rad / 2.0).tan();
        Self::new(
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Proper rigid motion `P -> R P + T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = (rotation.determinant() - 1.0).abs();
        let dev = ortho.max(det);
        if !dev.is_finite() || dev > ORTHONORMAL_TOL || !translation.iter().all(|t| t.is_finite()) {
            return Err(GeometryError::NotARotation(dev));
        }
        Ok(Self {
            rotation,
            translation,
        })
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

    /// Rotation by `angle` about the camera's vertical (+Y, pointing down)
    /// axis. With this convention `yaw(90°)` maps the optical axis (0,0,1)
    /// onto (1,0,0).
    pub fn yaw(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            rotation: Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation about an arbitrary axis (Rodrigues), followed by translation.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = match nalgebra::Unit::try_new(axis, 1e-12) {
            Some(unit) => *nalgebra::Rotation3::from_axis_angle(&unit, angle).matrix(),
            None => Matrix3::identity(),
        };
        Self {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
}

impl PixelCoord {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Per-pixel Z depth. `+inf` marks pixels where nothing was hit.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthField {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DepthField {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, GeometryError> {
        if data.len() != width * height {
            return Err(GeometryError::BadLength {
                expected: width * height,
                got: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, &z)| !(z > 0.0) || z.is_nan() || z == f32::NEG_INFINITY)
        {
            return Err(GeometryError::InvalidDepth { index, value });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, z: f32) -> Result<Self, GeometryError> {
        Self::new(width, height, vec![z; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn is_hit(&self, x: usize, y: usize) -> bool {
        self.get(x, y).is_finite()
    }
}

/// Dense 2-vector field of per-frame-interval displacements (px), together
/// with the frame interval `dt` (s) and a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    dt: f64,
    data: Vec<[f64; 2]>,
    valid: Vec<bool>,
}

/// Snap a flow component onto [`FLOW_QUANTUM`].
pub fn quantize_flow(v: f64) -> f64 {
    quantize_to(v, FLOW_QUANTUM)
}

pub fn quantize_to(v: f64, quantum: f64) -> f64 {
    (v / quantum).round() * quantum
}

impl FlowField {
    /// Build a field from raw values. Values are stored as given.
    pub fn new(
        width: usize,
        height: usize,
        dt: f64,
        data: Vec<[f64; 2]>,
        valid: Vec<bool>,
    ) -> Result<Self, GeometryError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(GeometryError::NonPositiveDt(dt));
        }
        let n = width * height;
        if data.len() != n {
            return Err(GeometryError::BadLength {
                expected: n,
                got: data.len(),
            });
        }
        if valid.len() != n {
            return Err(GeometryError::BadLength {
                expected: n,
                got: valid.len(),
            });
        }
        Ok(Self {
            width,
            height,
            dt,
            data,
            valid,
        })
    }

    pub fn zeros(width: usize, height: usize, dt: f64) -> Result<Self, GeometryError> {
        Self::new(
            width,
            height,
            dt,
            vec![[0.0; 2]; width * height],
            vec![true; width * height],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn data(&self) -> &[[f64; 2]] {
        &self.data
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 2] {
        self.data[y * self.width + x]
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    /// Flow in px/s (displacement divided by `dt`).
    pub fn per_second(&self) -> Vec<[f64; 2]> {
        self.data
            .iter()
            .map(|[u, v]| [u / self.dt, v / self.dt])
            .collect()
    }

    /// Largest component magnitude over valid pixels.
    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .zip(&self.valid)
            .filter(|(_, &ok)| ok)
            .map(|([u, v], _)| u.abs().max(v.abs()))
            .fold(0.0, f64::max)
    }

    /// Copy of this field with every component snapped to `quantum`.
    pub fn quantized(&self, quantum: f64) -> FlowField {
        FlowField {
            data: self
                .data
                .iter()
                .map(|[u, v]| [quantize_to(*u, quantum), quantize_to(*v, quantum)])
                .collect(),
            ..self.clone()
        }
    }

    /// Per-pixel sum, the inverse of [`factorize`].
    pub fn add(&self, other: &FlowField) -> Result<FlowField, GeometryError> {
        self.check_compatible(other)?;
        Ok(FlowField {
            width: self.width,
            height: self.height,
            dt: self.dt,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| [a[0] + b[0], a[1] + b[1]])
                .collect(),
            valid: self
                .valid
                .iter()
                .zip(&other.valid)
                .map(|(a, b)| *a && *b)
                .collect(),
        })
    }

    fn check_compatible(&self, other: &FlowField) -> Result<(), GeometryError> {
        if self.width != other.width || self.height != other.height {
            return Err(GeometryError::DimensionMismatch {
                expected_w: self.width,
                expected_h: self.height,
                got_w: other.width,
                got_h: other.height,
            });
        }
        if self.dt != other.dt {
            return Err(GeometryError::DtMismatch(self.dt, other.dt));
        }
        Ok(())
    }
}

/// Pixel plus Z depth to camera coordinates.
pub fn backproject(p: PixelCoord, z: f64, k: &Intrinsics) -> Result<Vector3<f64>, GeometryError> {
    if !(z > 0.0) {
        return Err(GeometryError::NonPositiveDepth(z));
    }
    Ok(Vector3::new(
        z / k.focal * (p.x - k.principal_x),
        z / k.focal * (p.y - k.principal_y),
        z,
    ))
}

/// Camera coordinates to pixel coordinates.
pub fn project(point: &Vector3<f64>, k: &Intrinsics) -> Result<PixelCoord, GeometryError> {
    if !(point.z > 0.0) {
        return Err(GeometryError::BehindCamera(point.z));
    }
    Ok(PixelCoord {
        x: k.focal * point.x / point.z + k.principal_x,
        y: k.focal * point.y / point.z + k.principal_y,
    })
}

pub fn transform_point(point: &Vector3<f64>, m: &RigidTransform) -> Vector3<f64> {
    m.rotation * point + m.translation
}

/// Ego displacement `p - p'` over one frame interval (px).
pub fn ego_displacement_at(
    p: PixelCoord,
    z: f64,
    m: &RigidTransform,
    k: &Intrinsics,
) -> Result<[f64; 2], GeometryError> {
    let current = backproject(p, z, k)?;
    let prior = transform_point(&current, m);
    let q = project(&prior, k)?;
    Ok([quantize_flow(p.x - q.x), quantize_flow(p.y - q.y)])
}

/// Ego flow in px/s: the ego displacement divided by `dt`.
pub fn ego_flow_at(
    p: PixelCoord,
    z: f64,
    m: &RigidTransform,
    k: &Intrinsics,
    dt: f64,
) -> Result<[f64; 2], GeometryError> {
    if !(dt > 0.0) {
        return Err(GeometryError::NonPositiveDt(dt));
    }
    let [u, v] = ego_displacement_at(p, z, m, k)?;
    Ok([u / dt, v / dt])
}

/// Ego flow for every pixel of a depth map. No-hit pixels use `far_plane`
/// depth and are flagged invalid; pixels reprojecting behind the prior
/// camera get zero flow and are flagged invalid.
pub fn ego_flow_field(
    depth: &DepthField,
    m: &RigidTransform,
    k: &Intrinsics,
    dt: f64,
    far_plane: f64,
) -> Result<FlowField, GeometryError> {
    if depth.width != k.width || depth.height != k.height {
        return Err(GeometryError::DimensionMismatch {
            expected_w: k.width,
            expected_h: k.height,
            got_w: depth.width,
            got_h: depth.height,
        });
    }
    if !(dt > 0.0) {
        return Err(GeometryError::NonPositiveDt(dt));
    }
    let w = depth.width;
    let rows: Vec<Vec<([f64; 2], bool)>> = (0..depth.height)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let z = depth.data[y * w + x];
                    let hit = z.is_finite();
                    let z = if hit { f64::from(z) } else { far_plane };
                    let p = PixelCoord::new(x as f64, y as f64);
                    match ego_displacement_at(p, z, m, k) {
                        Ok([u, v]) if u.abs() < MAX_VALID_FLOW && v.abs() < MAX_VALID_FLOW => {
                            ([quantize_flow(u), quantize_flow(v)], hit)
                        }
                        _ => ([0.0, 0.0], false),
                    }
                })
                .collect()
        })
        .collect();
    let (data, valid) = rows.into_iter().flatten().unzip();
    FlowField::new(w, depth.height, dt, data, valid)
}

/// Object flow `raw - ego`. The validity mask is the intersection of both
/// inputs' masks.
pub fn factorize(raw: &FlowField, ego: &FlowField) -> Result<FlowField, GeometryError> {
    raw.check_compatible(ego)?;
    Ok(FlowField {
        width: raw.width,
        height: raw.height,
        dt: raw.dt,
        data: raw
            .data
            .iter()
            .zip(&ego.data)
            .map(|(r, e)| [r[0] - e[0], r[1] - e[1]])
            .collect(),
        valid: raw
            .valid
            .iter()
            .zip(&ego.valid)
            .map(|(a, b)| *a && *b)
            .collect(),
    })
}
