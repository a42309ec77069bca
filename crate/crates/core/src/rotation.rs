//! Unit quaternions (scalar first), the hemisphere convention and the
//! geodesic structure of the rotation group seen through the 3-sphere.
//!
//! A quaternion `q` and its antipode `-q` encode the same rotation. Every
//! distance here is defined on that quotient, so all results are invariant
//! to sign flips of either argument.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Tolerance on the norm of a raw 4-vector accepted as a unit quaternion.
pub const UNIT_TOLERANCE: f64 = 1e-6;
/// Vector-part norm below which a rotation axis is undefined.
pub const AXIS_EPSILON: f64 = 1e-6;
/// Cap on `|2<q,q'>^2 - 1|` used by the loss derivative.
pub const LOSS_GRAD_CAP: f64 = 1.0 - 1e-7;

/// A rotation as a unit quaternion `(q1, q2, q3, q4) = q1 + q2 i + q3 j + q4 k`.
///
/// Serializes as a plain 4-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct UnitQuaternion([f64; 4]);

impl TryFrom<[f64; 4]> for UnitQuaternion {
    type Error = Error;

    /// Accepts vectors whose norm is within [`UNIT_TOLERANCE`] of one and
    /// renormalizes them. Vectors already unit to rounding are kept as
    /// given, so stored quaternions read back bit-identically.
    fn try_from(q: [f64; 4]) -> Result<Self> {
        let norm = norm4(&q);
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidQuaternion { norm });
        }
        if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Ok(Self(q));
        }
        Ok(Self(scale4(&q, 1.0 / norm)))
    }
}

impl From<UnitQuaternion> for [f64; 4] {
    fn from(q: UnitQuaternion) -> Self {
        q.0
    }
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion([1.0, 0.0, 0.0, 0.0]);

    /// Normalizes an arbitrary non-zero 4-vector.
    pub fn normalize(raw: [f64; 4]) -> Result<Self> {
        let norm = norm4(&raw);
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::InvalidQuaternion { norm });
        }
        Ok(Self(scale4(&raw, 1.0 / norm)))
    }

    /// Rotation by `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        let n = norm3(&axis);
        if n < AXIS_EPSILON {
            return Err(Error::DegenerateAxis { norm: n });
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let k = s / n;
        Ok(Self([c, axis[0] * k, axis[1] * k, axis[2] * k]))
    }

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        Self([c, s, 0.0, 0.0])
    }

    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        Self([c, 0.0, s, 0.0])
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        Self([c, 0.0, 0.0, s])
    }

    pub fn as_array(&self) -> &[f64; 4] {
        &self.0
    }

    pub fn to_array(self) -> [f64; 4] {
        self.0
    }

    pub fn scalar(&self) -> f64 {
        self.0[0]
    }

    pub fn vector(&self) -> Vec3 {
        [self.0[1], self.0[2], self.0[3]]
    }

    pub fn neg(&self) -> Self {
        Self(scale4(&self.0, -1.0))
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot4(&self.0, &other.0)
    }

    /// Representative with `q1 >= 0`. When `q1` is exactly zero the first
    /// non-zero vector component is made positive.
    pub fn to_hemisphere(&self) -> Self {
        let q = &self.0;
        let flip = if q[0] != 0.0 {
            q[0] < 0.0
        } else {
            q[1..].iter().find(|c| **c != 0.0).is_some_and(|c| *c < 0.0)
        };
        if flip {
            self.neg()
        } else {
            *self
        }
    }

    pub fn is_hemisphere(&self) -> bool {
        self.to_hemisphere() == *self
    }

    /// Hamilton product `self * rhs`: applying `rhs` first, then `self`.
    pub fn multiply(&self, rhs: &Self) -> Self {
        let [a1, b1, c1, d1] = self.0;
        let [a2, b2, c2, d2] = rhs.0;
        Self([
            a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
            a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
            a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
            a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
        ])
        .renormalized()
    }

    pub fn conjugate(&self) -> Self {
        let [w, x, y, z] = self.0;
        Self([w, -x, -y, -z])
    }

    pub fn rotate_point(&self, p: &Vec3) -> Vec3 {
        mat_vec(&self.to_matrix(), p)
    }

    pub fn to_matrix(&self) -> Mat3 {
        let [w, x, y, z] = self.0;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }

    /// Quaternion (hemisphere form) of a proper rotation matrix.
    pub fn from_matrix(r: &Mat3) -> Result<Self> {
        let rtr = mat_mul(&transpose(r), r);
        for (i, row) in rtr.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                if !v.is_finite() || (v - expect).abs() > 1e-6 {
                    return Err(Error::InvalidRotation(format!(
                        "R^T R deviates from identity at ({i},{j}): {v}"
                    )));
                }
            }
        }
        let det = det3(r);
        if (det - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidRotation(format!("determinant {det}")));
        }
        // Shepperd: pivot on the largest of the four diagonal combinations.
        let tr = r[0][0] + r[1][1] + r[2][2];
        let q = if tr >= r[0][0] && tr >= r[1][1] && tr >= r[2][2] {
            let s = 2.0 * (1.0 + tr).sqrt();
            [
                0.25 * s,
                (r[2][1] - r[1][2]) / s,
                (r[0][2] - r[2][0]) / s,
                (r[1][0] - r[0][1]) / s,
            ]
        } else if r[0][0] >= r[1][1] && r[0][0] >= r[2][2] {
            let s = 2.0 * (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt();
            [
                (r[2][1] - r[1][2]) / s,
                0.25 * s,
                (r[0][1] + r[1][0]) / s,
                (r[0][2] + r[2][0]) / s,
            ]
        } else if r[1][1] >= r[2][2] {
            let s = 2.0 * (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt();
            [
                (r[0][2] - r[2][0]) / s,
                (r[0][1] + r[1][0]) / s,
                0.25 * s,
                (r[1][2] + r[2][1]) / s,
            ]
        } else {
            let s = 2.0 * (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt();
            [
                (r[1][0] - r[0][1]) / s,
                (r[0][2] + r[2][0]) / s,
                (r[1][2] + r[2][1]) / s,
                0.25 * s,
            ]
        };
        Ok(Self::normalize(q)?.to_hemisphere())
    }

    fn renormalized(self) -> Self {
        let n = norm4(&self.0);
        Self(scale4(&self.0, 1.0 / n))
    }
}

/// Unit rotation axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 3]", try_from = "[f64; 3]")]
pub struct RotationAxis(Vec3);

impl RotationAxis {
    pub fn new(v: Vec3) -> Result<Self> {
        let n = norm3(&v);
        if !n.is_finite() || n < AXIS_EPSILON {
            return Err(Error::DegenerateAxis { norm: n });
        }
        Ok(Self([v[0] / n, v[1] / n, v[2] / n]))
    }

    pub fn as_array(&self) -> &Vec3 {
        &self.0
    }

    pub fn to_array(self) -> Vec3 {
        self.0
    }
}

impl TryFrom<[f64; 3]> for RotationAxis {
    type Error = Error;
    fn try_from(v: [f64; 3]) -> Result<Self> {
        Self::new(v)
    }
}

impl From<RotationAxis> for [f64; 3] {
    fn from(a: RotationAxis) -> Self {
        a.0
    }
}

/// Tangent vector at a base quaternion, in the body-fixed chart
/// `q = base * exp(v)`. Its norm equals the geodesic distance in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentVector(pub Vec3);

impl TangentVector {
    pub const ZERO: TangentVector = TangentVector([0.0; 3]);

    pub fn norm(&self) -> f64 {
        norm3(&self.0)
    }
}

pub fn to_hemisphere(q: &UnitQuaternion) -> UnitQuaternion {
    q.to_hemisphere()
}

/// Angle between two rotations: `arccos(2<q,q'>^2 - 1)`, in `[0, pi]`.
///
/// Evaluated as `2 atan2(|v|, |w|)` of the relative quaternion, which agrees
/// with the arccos form and is exactly zero for coincident inputs.
pub fn rotation_loss(q: &UnitQuaternion, q_gt: &UnitQuaternion) -> f64 {
    relative_angle(q.as_array(), q_gt.as_array())
}

fn relative_angle(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let w = dot4(a, b);
    let v = [
        a[0] * b[1] - a[1] * b[0] - (a[2] * b[3] - a[3] * b[2]),
        a[0] * b[2] - a[2] * b[0] - (a[3] * b[1] - a[1] * b[3]),
        a[0] * b[3] - a[3] * b[0] - (a[1] * b[2] - a[2] * b[1]),
    ];
    2.0 * norm3(&v).atan2(w.abs())
}

/// Rotation loss on raw unit 4-vectors together with its gradient with
/// respect to `q`. The derivative of `arccos` is evaluated with its argument
/// capped at [`LOSS_GRAD_CAP`] so it stays bounded at coincidence.
pub fn rotation_loss_with_grad(q: &[f64; 4], q_gt: &[f64; 4]) -> (f64, [f64; 4]) {
    let d = dot4(q, q_gt);
    let c = 2.0 * d * d - 1.0;
    let loss = c.clamp(-1.0, 1.0).acos();
    let cc = c.clamp(-LOSS_GRAD_CAP, LOSS_GRAD_CAP);
    let dl_dc = -1.0 / (1.0 - cc * cc).sqrt();
    let k = dl_dc * 4.0 * d;
    (loss, scale4(q_gt, k))
}

/// Geodesic distance on the antipodal quotient, `arccos |<q1,q2>|`, in `[0, pi/2]`.
pub fn quat_distance(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    0.5 * relative_angle(a.as_array(), b.as_array())
}

/// Unit axis of the quaternion's vector part.
pub fn rotation_axis(q: &UnitQuaternion) -> Result<RotationAxis> {
    RotationAxis::new(q.vector())
}

pub fn multiply(a: &UnitQuaternion, b: &UnitQuaternion) -> UnitQuaternion {
    a.multiply(b)
}

pub fn conjugate(q: &UnitQuaternion) -> UnitQuaternion {
    q.conjugate()
}

pub fn rotate_point(q: &UnitQuaternion, p: &Vec3) -> Vec3 {
    q.rotate_point(p)
}

pub fn to_matrix(q: &UnitQuaternion) -> Mat3 {
    q.to_matrix()
}

pub fn from_matrix(r: &Mat3) -> Result<UnitQuaternion> {
    UnitQuaternion::from_matrix(r)
}

/// Logarithm at `base`. Fails when `q` sits on the antipodal boundary
/// (distance within 1e-9 of pi/2), where the direction is undefined.
pub fn log_map(base: &UnitQuaternion, q: &UnitQuaternion) -> Result<TangentVector> {
    let distance = quat_distance(base, q);
    if (distance - std::f64::consts::FRAC_PI_2).abs() < 1e-9 {
        return Err(Error::IllConditionedLog { distance });
    }
    Ok(log_map_unchecked(base, q))
}

/// [`log_map`] without the boundary check; at the boundary it returns some
/// tangent vector of the right length.
pub(crate) fn log_map_unchecked(base: &UnitQuaternion, q: &UnitQuaternion) -> TangentVector {
    let aligned = if base.dot(q) < 0.0 { q.neg() } else { *q };
    let rel = base.conjugate().multiply(&aligned);
    let w = rel.scalar().clamp(-1.0, 1.0);
    let v = rel.vector();
    let s = norm3(&v);
    if s < 1e-15 {
        return TangentVector::ZERO;
    }
    let theta = s.atan2(w);
    let k = theta / s;
    TangentVector([v[0] * k, v[1] * k, v[2] * k])
}

/// Exponential at `base`; the result is returned in hemisphere form.
pub fn exp_map(base: &UnitQuaternion, v: &TangentVector) -> UnitQuaternion {
    let theta = v.norm();
    if theta < 1e-300 {
        return base.to_hemisphere();
    }
    let (s, c) = theta.sin_cos();
    let k = s / theta;
    let rel = UnitQuaternion([c, v.0[0] * k, v.0[1] * k, v.0[2] * k]);
    base.multiply(&rel).to_hemisphere()
}

pub(crate) fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

pub(crate) fn norm4(a: &[f64; 4]) -> f64 {
    dot4(a, a).sqrt()
}

fn scale4(a: &[f64; 4], k: f64) -> [f64; 4] {
    [a[0] * k, a[1] * k, a[2] * k, a[3] * k]
}

pub fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm3(a: &Vec3) -> f64 {
    dot3(a, a).sqrt()
}

pub fn cross3(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn sub3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add3(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [dot3(&m[0], v), dot3(&m[1], v), dot3(&m[2], v)]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

pub fn transpose(m: &Mat3) -> Mat3 {
    [
        [m[0][0], m[1][0], m[2][0]],
        [m[0][1], m[1][1], m[2][1]],
        [m[0][2], m[1][2], m[2][2]],
    ]
}

fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}
