//! Synthetic objects with known symmetry structure and a rendering-free
//! observation model.
//!
//! Two poses produce the same observation exactly when they belong to the
//! same symmetry set. The observation is the rotation matrix of a canonical
//! member of the set plus normalized depth, so a regressor sees the same
//! input for every pose it cannot tell apart.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{cross3, dot3, mat_vec, norm3, sub3, transpose, UnitQuaternion, Vec3};

pub const OBSERVATION_WIDTH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Cube,
    Cup,
    Cylinder,
}

impl std::str::FromStr for ObjectKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cube" => Ok(Self::Cube),
            "cup" => Ok(Self::Cup),
            "cylinder" => Ok(Self::Cylinder),
            other => Err(Error::Config(format!("unknown object '{other}'"))),
        }
    }
}

impl std::fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cube => "cube",
            Self::Cup => "cup",
            Self::Cylinder => "cylinder",
        })
    }
}

/// How poses of an object become indistinguishable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    /// Finite rotation group acting on the right (object frame); contains identity.
    FiniteGroup { elements: Vec<UnitQuaternion> },
    /// Rotations about `axis` are indistinguishable while the feature
    /// direction `feature` points away from the camera: hidden iff
    /// `(R feature) . z_cam > tau`.
    ViewConditionalArc { axis: Vec3, feature: Vec3, tau: f64 },
    /// Every rotation about `axis` is indistinguishable.
    Revolution { axis: Vec3 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyObject {
    pub id: ObjectKind,
    pub model_points: Vec<Vec3>,
    pub diameter: f64,
    pub symmetry: Symmetry,
}

impl ToyObject {
    pub fn new(kind: ObjectKind) -> Self {
        match kind {
            ObjectKind::Cube => Self::cube(),
            ObjectKind::Cup => Self::cup(),
            ObjectKind::Cylinder => Self::cylinder(),
        }
    }

    /// 0.1 m cube: 8 corners, 12 edge midpoints, 6 face centers. Four-fold
    /// symmetry about the object z axis.
    pub fn cube() -> Self {
        let h = 0.05;
        let mut pts = Vec::with_capacity(26);
        for &x in &[-h, h] {
            for &y in &[-h, h] {
                for &z in &[-h, h] {
                    pts.push([x, y, z]);
                }
            }
        }
        for axis in 0..3 {
            for &a in &[-h, h] {
                for &b in &[-h, h] {
                    let mut p = [0.0; 3];
                    let others: Vec<usize> = (0..3).filter(|&k| k != axis).collect();
                    p[others[0]] = a;
                    p[others[1]] = b;
                    pts.push(p);
                }
            }
        }
        for axis in 0..3 {
            for &a in &[-h, h] {
                let mut p = [0.0; 3];
                p[axis] = a;
                pts.push(p);
            }
        }
        let elements = (0..4)
            .map(|k| UnitQuaternion::rot_z(k as f64 * FRAC_PI_2))
            .collect();
        Self::with_points(ObjectKind::Cube, pts, Symmetry::FiniteGroup { elements })
    }

    /// Cylinder body (radius 0.04 m, height 0.12 m, 64 points) with one handle
    /// point at 1.5 radii along +x.
    pub fn cup() -> Self {
        let mut pts = cylinder_points(0.04, 0.12, 16, 4);
        pts.push([0.06, 0.0, 0.0]);
        Self::with_points(
            ObjectKind::Cup,
            pts,
            Symmetry::ViewConditionalArc {
                axis: [0.0, 0.0, 1.0],
                feature: [1.0, 0.0, 0.0],
                tau: 0.3,
            },
        )
    }

    /// Cup body without a handle, densely sampled so any rotation about the
    /// axis maps the point set to within a few millimeters of itself.
    pub fn cylinder() -> Self {
        Self::with_points(
            ObjectKind::Cylinder,
            cylinder_points(0.04, 0.12, 64, 4),
            Symmetry::Revolution {
                axis: [0.0, 0.0, 1.0],
            },
        )
    }

    pub fn with_points(id: ObjectKind, model_points: Vec<Vec3>, symmetry: Symmetry) -> Self {
        let diameter = max_pairwise_distance(&model_points);
        Self {
            id,
            model_points,
            diameter,
            symmetry,
        }
    }

    /// Object-frame symmetry axis, if the object has one.
    pub fn symmetry_axis(&self) -> Option<Vec3> {
        match &self.symmetry {
            Symmetry::FiniteGroup { elements } => elements
                .iter()
                .find_map(|g| crate::rotation::rotation_axis(g).ok())
                .map(|a| a.to_array()),
            Symmetry::ViewConditionalArc { axis, .. } | Symmetry::Revolution { axis } => {
                Some(*axis)
            }
        }
    }
}

fn cylinder_points(radius: f64, height: f64, around: usize, rings: usize) -> Vec<Vec3> {
    let mut pts = Vec::with_capacity(around * rings);
    for r in 0..rings {
        let z = -height / 2.0 + height * r as f64 / (rings - 1) as f64;
        for k in 0..around {
            let t = TAU * k as f64 / around as f64;
            pts.push([radius * t.cos(), radius * t.sin(), z]);
        }
    }
    pts
}

fn max_pairwise_distance(points: &[Vec3]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max(norm3(&sub3(a, b)));
        }
    }
    best
}

/// The set of poses equivalent to a given one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetrySet {
    Finite(Vec<UnitQuaternion>),
    /// `{ base * rot(axis, t) : |t - center| < half_width }`; a half width of
    /// pi is the full circle.
    Arc {
        base: UnitQuaternion,
        axis: Vec3,
        center: f64,
        half_width: f64,
    },
}

impl SymmetrySet {
    pub fn is_ambiguous(&self) -> bool {
        match self {
            SymmetrySet::Finite(v) => v.len() > 1,
            SymmetrySet::Arc { .. } => true,
        }
    }

    pub fn arc_member(base: &UnitQuaternion, axis: &Vec3, t: f64) -> UnitQuaternion {
        let r = UnitQuaternion::from_axis_angle(*axis, t).expect("unit symmetry axis");
        base.multiply(&r)
    }

    /// Up to `n` representative members (all of them for finite sets).
    pub fn members(&self, n: usize) -> Vec<UnitQuaternion> {
        match self {
            SymmetrySet::Finite(v) => v.clone(),
            SymmetrySet::Arc {
                base,
                axis,
                center,
                half_width,
            } => (0..n)
                .map(|k| {
                    let f = (k as f64 + 0.5) / n as f64 * 2.0 - 1.0;
                    Self::arc_member(base, axis, center + f * half_width)
                })
                .collect(),
        }
    }

    /// Whether `q` belongs to the set (within `tol` radians of geodesic distance).
    pub fn contains(&self, q: &UnitQuaternion, tol: f64) -> bool {
        match self {
            SymmetrySet::Finite(v) => v
                .iter()
                .any(|m| crate::rotation::quat_distance(m, q) <= tol),
            SymmetrySet::Arc {
                base,
                axis,
                center,
                half_width,
            } => {
                // Angle of q relative to base about axis, if it is a pure axial rotation.
                let rel = base.conjugate().multiply(q);
                let v = rel.vector();
                let along = dot3(&v, axis);
                let off = norm3(&sub3(&v, &[along * axis[0], along * axis[1], along * axis[2]]));
                if off > tol {
                    return false;
                }
                let t = 2.0 * along.atan2(rel.scalar());
                let d = wrap_angle(t - center).abs();
                d <= half_width + tol
            }
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % TAU;
    if a > PI {
        a -= TAU;
    } else if a < -PI {
        a += TAU;
    }
    a
}

/// Angle parameters `(rho, phi)` with `(rot(axis, t) feature) . w = rho cos(t - phi)`
/// where `w = R^T z_cam` is the camera's viewing direction in the object frame.
fn feature_phase(pose: &UnitQuaternion, axis: &Vec3, feature: &Vec3) -> (f64, f64) {
    let w = mat_vec(&transpose(&pose.to_matrix()), &[0.0, 0.0, 1.0]);
    let side = cross3(axis, feature);
    let c = dot3(feature, &w);
    let s = dot3(&side, &w);
    let rho = c.hypot(s);
    let phi = if rho < 1e-12 { 0.0 } else { s.atan2(c) };
    (rho, phi)
}

/// Poses indistinguishable from `pose` for this object.
pub fn symmetry_set(obj: &ToyObject, pose: &UnitQuaternion) -> SymmetrySet {
    match &obj.symmetry {
        Symmetry::FiniteGroup { elements } => {
            SymmetrySet::Finite(elements.iter().map(|g| pose.multiply(g)).collect())
        }
        Symmetry::ViewConditionalArc { axis, feature, tau } => {
            let (rho, phi) = feature_phase(pose, axis, feature);
            // the feature is hidden at the pose itself (t = 0)
            if rho * (-phi).cos() > *tau {
                let half_width = if *tau <= -rho { PI } else { (tau / rho).clamp(-1.0, 1.0).acos() };
                SymmetrySet::Arc {
                    base: *pose,
                    axis: *axis,
                    center: phi,
                    half_width,
                }
            } else {
                SymmetrySet::Finite(vec![*pose])
            }
        }
        Symmetry::Revolution { axis } => {
            let side = orthogonal_to(axis);
            let (_, phi) = feature_phase(pose, axis, &side);
            SymmetrySet::Arc {
                base: *pose,
                axis: *axis,
                center: phi,
                half_width: PI,
            }
        }
    }
}

fn orthogonal_to(a: &Vec3) -> Vec3 {
    let helper = if a[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let c = cross3(a, &helper);
    let n = norm3(&c);
    let o = cross3(&[c[0] / n, c[1] / n, c[2] / n], a);
    let n = norm3(&o);
    [o[0] / n, o[1] / n, o[2] / n]
}

/// Canonical representative of a symmetry set: for finite sets the member
/// whose hemisphere quaternion is lexicographically largest, for arcs the
/// member at the arc's center (feature pointing furthest from the camera).
pub fn canonical_member(set: &SymmetrySet) -> UnitQuaternion {
    match set {
        SymmetrySet::Finite(members) => members
            .iter()
            .map(|m| m.to_hemisphere())
            .fold(None::<UnitQuaternion>, |best, m| match best {
                Some(b) if lex_ge(b.as_array(), m.as_array()) => Some(b),
                _ => Some(m),
            })
            .expect("non-empty symmetry set"),
        SymmetrySet::Arc {
            base, axis, center, ..
        } => SymmetrySet::arc_member(base, axis, *center).to_hemisphere(),
    }
}

fn lex_ge(a: &[f64; 4], b: &[f64; 4]) -> bool {
    for k in 0..4 {
        if a[k] != b[k] {
            return a[k] > b[k];
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationConfig {
    /// Depths are normalized to `[0, 1]` over this range, meters.
    pub depth_range: [f64; 2],
    /// Standard deviation of additive Gaussian noise per entry.
    pub noise_sigma: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            depth_range: [0.5, 2.0],
            noise_sigma: 0.01,
        }
    }
}

/// Encodes the canonical member's rotation matrix (row-major) and the
/// normalized depth, plus seeded Gaussian noise.
pub fn canonical_observation(
    obj: &ToyObject,
    pose: &UnitQuaternion,
    depth: f64,
    cfg: &ObservationConfig,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    observation_with_rng(obj, pose, depth, cfg, &mut rng)
}

fn observation_with_rng(
    obj: &ToyObject,
    pose: &UnitQuaternion,
    depth: f64,
    cfg: &ObservationConfig,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let canon = canonical_member(&symmetry_set(obj, pose));
    let m = canon.to_matrix();
    let [lo, hi] = cfg.depth_range;
    let mut obs: Vec<f64> = m.iter().flatten().copied().collect();
    obs.push((depth - lo) / (hi - lo));
    if cfg.noise_sigma > 0.0 {
        for v in &mut obs {
            let n: f64 = rng.sample(StandardNormal);
            *v += cfg.noise_sigma * n;
        }
    }
    obs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for PinholeCamera {
    fn default() -> Self {
        Self {
            fx: 572.4114,
            fy: 573.57043,
            cx: 325.2611,
            cy: 242.04899,
        }
    }
}

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::Config(format!("focal lengths must be positive ({fx}, {fy})")));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Translation of the point seen at pixel `(u, v)` at depth `z`.
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Result<Vec3> {
        if !(z > 0.0) {
            return Err(Error::NonPositiveDepth(z));
        }
        Ok([(u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z])
    }

    /// `(u, v, z)` of a camera-frame point.
    pub fn project(&self, t: &Vec3) -> [f64; 3] {
        [
            self.fx * t[0] / t[2] + self.cx,
            self.fy * t[1] / t[2] + self.cy,
            t[2],
        ]
    }
}

pub fn backproject(camera: &PinholeCamera, u: f64, v: f64, z: f64) -> Result<Vec3> {
    camera.backproject(u, v, z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySample {
    pub object: ObjectKind,
    pub observation: Vec<f64>,
    pub gt_rotation: UnitQuaternion,
    pub gt_depth: f64,
    pub bbox_center: [f64; 2],
    pub intrinsics: PinholeCamera,
    pub ambiguous_gt: bool,
    pub gt_axis_camera: Option<Vec3>,
}

impl ToySample {
    pub fn gt_translation(&self) -> Vec3 {
        self.intrinsics
            .backproject(self.bbox_center[0], self.bbox_center[1], self.gt_depth)
            .expect("dataset depths are positive")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub observation: ObservationConfig,
    /// Image size `(width, height)`; box centers are drawn at least
    /// `margin` pixels from the border.
    pub image_size: [f64; 2],
    pub margin: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            observation: ObservationConfig::default(),
            image_size: [640.0, 480.0],
            margin: 80.0,
        }
    }
}

/// Uniform rotation (Shoemake's subgroup algorithm), hemisphere form.
pub fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let u3: f64 = rng.gen();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = [
        b * (TAU * u3).cos(),
        a * (TAU * u2).sin(),
        a * (TAU * u2).cos(),
        b * (TAU * u3).sin(),
    ];
    UnitQuaternion::normalize(q)
        .expect("unit by construction")
        .to_hemisphere()
}

/// Generates one sample from its own `(seed, index)` random stream.
pub fn sample_one(
    obj: &ToyObject,
    camera: &PinholeCamera,
    spec: &DatasetSpec,
    seed: u64,
    index: u64,
) -> ToySample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let pose = random_rotation(&mut rng);
    let [lo, hi] = spec.observation.depth_range;
    let depth = rng.gen_range(lo..hi);
    let [w, h] = spec.image_size;
    let u = rng.gen_range(spec.margin..w - spec.margin);
    let v = rng.gen_range(spec.margin..h - spec.margin);
    let set = symmetry_set(obj, &pose);
    let gt = match &set {
        SymmetrySet::Finite(members) => members[rng.gen_range(0..members.len())],
        SymmetrySet::Arc {
            base,
            axis,
            center,
            half_width,
        } => {
            let t = center + rng.gen_range(-1.0..1.0) * half_width;
            SymmetrySet::arc_member(base, axis, t)
        }
    }
    .to_hemisphere();
    let ambiguous_gt = set.is_ambiguous();
    let gt_axis_camera = if ambiguous_gt {
        obj.symmetry_axis().map(|a| mat_vec(&pose.to_matrix(), &a))
    } else {
        None
    };
    let observation = observation_with_rng(obj, &pose, depth, &spec.observation, &mut rng);
    ToySample {
        object: obj.id,
        observation,
        gt_rotation: gt,
        gt_depth: depth,
        bbox_center: [u, v],
        intrinsics: *camera,
        ambiguous_gt,
        gt_axis_camera,
    }
}

pub fn sample_dataset(
    obj: &ToyObject,
    n: usize,
    camera: &PinholeCamera,
    spec: &DatasetSpec,
    seed: u64,
) -> Vec<ToySample> {
    (0..n as u64)
        .map(|i| sample_one(obj, camera, spec, seed, i))
        .collect()
}
