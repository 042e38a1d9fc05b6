//! Rigid-pose algebra and range geometry.
//!
//! A [`Pose`] is the egomotion of one scan relative to the start of its
//! sequence. Mapping a point of a source scan into the coordinates of a
//! reference scan is `inverse(E_ref) * E_src * p`.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};

/// Tolerance for the orthonormality and determinant checks on rotation blocks.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

/// Upper bound (exclusive) of the close range, meters.
pub const CLOSE_LIMIT: f64 = 20.0;
/// Upper bound (exclusive) of the medium range, meters.
pub const MEDIUM_LIMIT: f64 = 50.0;

/// Rigid homogeneous transform. Immutable; every constructor validates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Rotation about +z by `yaw` radians followed by translation `t`.
    pub fn from_yaw(yaw: f64, t: [f64; 3]) -> Self {
        Self::from_euler(0.0, 0.0, yaw, t)
    }

    /// Roll/pitch/yaw (radians, applied as Rz·Ry·Rx) plus translation.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, t: [f64; 3]) -> Self {
        Pose {
            rotation: *Rotation3::from_euler_angles(roll, pitch, yaw).matrix(),
            translation: Vector3::from(t),
        }
    }

    /// Builds a pose from a row-major 3×3 rotation and a translation,
    /// rejecting rotation blocks that are not orthonormal within
    /// [`ORTHONORMAL_TOL`].
    pub fn from_parts(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        if rotation.iter().flatten().chain(&translation).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pose"));
        }
        let r = Matrix3::from_fn(|i, j| rotation[i][j]);
        let deviation = orthonormality_deviation(&r);
        if deviation > ORTHONORMAL_TOL {
            return Err(Error::OrthonormalityViolation {
                line: None,
                deviation,
            });
        }
        Ok(Pose {
            rotation: r,
            translation: Vector3::from(translation),
        })
    }

    /// Builds a pose from a full row-major 4×4 matrix.
    pub fn from_matrix(m: [[f64; 4]; 4]) -> Result<Self> {
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::NotHomogeneous(m[3]));
        }
        let rotation = [
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ];
        Self::from_parts(rotation, [m[0][3], m[1][3], m[2][3]])
    }

    /// Row-major 4×4 homogeneous matrix.
    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let r = &self.rotation;
        std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)]))
    }

    pub fn translation_vector(&self) -> [f64; 3] {
        [self.translation[0], self.translation[1], self.translation[2]]
    }

    /// L2 distance between the translation parts of two poses.
    pub fn translation_distance(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Matrix product `self · other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Rigid inverse `(Rᵀ, −Rᵀt)`.
    pub fn invert(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        let v = self.rotation * Vector3::new(p.x, p.y, p.z) + self.translation;
        Point3 {
            x: v[0],
            y: v[1],
            z: v[2],
            intensity: p.intensity,
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

/// `‖RᵀR − I‖∞` combined with `|det R − 1|`, whichever is larger.
fn orthonormality_deviation(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let max_entry = gram.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    max_entry.max((r.determinant() - 1.0).abs())
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn invert(p: &Pose) -> Pose {
    p.invert()
}

/// Transform taking source-scan coordinates to reference-scan coordinates:
/// `inverse(e_ref) · e_src`.
pub fn relative_to_reference(e_ref: &Pose, e_src: &Pose) -> Pose {
    e_ref.invert().compose(e_src)
}

pub fn transform_point(t: &Pose, p: &Point3) -> Point3 {
    t.transform_point(p)
}

/// A LiDAR return. Coordinates are meters; intensity is passed through untouched.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f32,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 {
            x,
            y,
            z,
            intensity: 0.0,
        }
    }

    pub fn with_intensity(x: f64, y: f64, z: f64, intensity: f32) -> Self {
        Point3 { x, y, z, intensity }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn radius(&self) -> f64 {
        radius(self)
    }
}

/// Euclidean distance from the sensor origin.
pub fn radius(p: &Point3) -> f64 {
    (p.x * p.x + p.y * p.y + p.z * p.z).sqrt()
}

/// Range partition used for reporting: close `[0, 20)`, medium `[20, 50)`,
/// far `[50, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RangeBucket {
    Close,
    Medium,
    Far,
}

impl RangeBucket {
    pub const ALL: [RangeBucket; 3] = [RangeBucket::Close, RangeBucket::Medium, RangeBucket::Far];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            RangeBucket::Close => "close",
            RangeBucket::Medium => "medium",
            RangeBucket::Far => "far",
        }
    }
}

pub fn bucket_of(r: f64) -> RangeBucket {
    if r < CLOSE_LIMIT {
        RangeBucket::Close
    } else if r < MEDIUM_LIMIT {
        RangeBucket::Medium
    } else {
        RangeBucket::Far
    }
}
