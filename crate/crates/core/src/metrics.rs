//! Pose and ambiguity metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{add3, norm3, rotation_loss, sub3, UnitQuaternion, Vec3};

/// Fraction of the object diameter under which a pose counts as correct.
pub const PASS_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub rotation: UnitQuaternion,
    pub translation: Vec3,
}

impl PoseEstimate {
    pub fn new(rotation: UnitQuaternion, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn transform(&self, x: &Vec3) -> Vec3 {
        add3(&self.rotation.rotate_point(x), &self.translation)
    }
}

fn check_points(points: &[Vec3]) -> Result<()> {
    if points.is_empty() {
        Err(Error::EmptyInput("model points"))
    } else {
        Ok(())
    }
}

pub fn add_error(points: &[Vec3], est: &PoseEstimate, gt: &PoseEstimate) -> Result<f64> {
    check_points(points)?;
    let sum: f64 = points
        .iter()
        .map(|x| norm3(&sub3(&est.transform(x), &gt.transform(x))))
        .sum();
    Ok(sum / points.len() as f64)
}

pub fn add_pass(points: &[Vec3], est: &PoseEstimate, gt: &PoseEstimate, diameter: f64) -> Result<bool> {
    Ok(add_error(points, est, gt)? < PASS_FRACTION * diameter)
}

/// Mean distance from each ground-truth point to the closest estimated point.
pub fn adi_error(points: &[Vec3], est: &PoseEstimate, gt: &PoseEstimate) -> Result<f64> {
    check_points(points)?;
    let moved: Vec<Vec3> = points.iter().map(|x| est.transform(x)).collect();
    let sum: f64 = points
        .iter()
        .map(|x| {
            let g = gt.transform(x);
            moved
                .iter()
                .map(|e| norm3(&sub3(&g, e)))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(sum / points.len() as f64)
}

pub fn adi_pass(points: &[Vec3], est: &PoseEstimate, gt: &PoseEstimate, diameter: f64) -> Result<bool> {
    Ok(adi_error(points, est, gt)? < PASS_FRACTION * diameter)
}

pub fn rotation_error_deg(est: &UnitQuaternion, gt: &UnitQuaternion) -> f64 {
    rotation_loss(est, gt).to_degrees()
}

pub fn translation_error_mm(est: &Vec3, gt: &Vec3) -> f64 {
    norm3(&sub3(est, gt)) * 1000.0
}

/// Per-sample evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub add_err: f64,
    pub adi_err: f64,
    pub add_pass: bool,
    pub adi_pass: bool,
    pub rot_err_deg: f64,
    pub trans_err_mm: f64,
    pub ambiguous_pred: bool,
    pub ambiguous_gt: bool,
    pub axis_dev_deg: Option<f64>,
    pub confidence_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityScores {
    pub acc_unambiguous: Option<f64>,
    pub acc_ambiguous: Option<f64>,
    pub mean_axis_dev: Option<f64>,
}

/// Classification accuracy per ground-truth stratum and the mean axis
/// deviation over correctly detected ambiguous views. Empty strata are absent.
pub fn ambiguity_scores(records: &[EvalRecord]) -> Result<AmbiguityScores> {
    if records.is_empty() {
        return Err(Error::EmptyInput("records"));
    }
    let (mut unamb, mut unamb_ok, mut amb, mut amb_ok) = (0usize, 0usize, 0usize, 0usize);
    let mut devs = Vec::new();
    for r in records {
        if r.ambiguous_gt {
            amb += 1;
            if r.ambiguous_pred {
                amb_ok += 1;
                if let Some(d) = r.axis_dev_deg {
                    devs.push(d);
                }
            }
        } else {
            unamb += 1;
            if !r.ambiguous_pred {
                unamb_ok += 1;
            }
        }
    }
    let ratio = |ok: usize, n: usize| (n > 0).then(|| ok as f64 / n as f64);
    Ok(AmbiguityScores {
        acc_unambiguous: ratio(unamb_ok, unamb),
        acc_ambiguous: ratio(amb_ok, amb),
        mean_axis_dev: (!devs.is_empty()).then(|| devs.iter().sum::<f64>() / devs.len() as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub count: usize,
    pub add_acc: f64,
    pub adi_acc: f64,
    pub mean_add_err: f64,
    pub mean_adi_err: f64,
    pub mean_rot_err_deg: f64,
    pub mean_trans_err_mm: f64,
    pub ambiguity: AmbiguityScores,
}

pub fn aggregate(records: &[EvalRecord]) -> Result<Aggregates> {
    let ambiguity = ambiguity_scores(records)?;
    let n = records.len() as f64;
    let mean = |f: &dyn Fn(&EvalRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    Ok(Aggregates {
        count: records.len(),
        add_acc: mean(&|r| r.add_pass as u8 as f64),
        adi_acc: mean(&|r| r.adi_pass as u8 as f64),
        mean_add_err: mean(&|r| r.add_err),
        mean_adi_err: mean(&|r| r.adi_err),
        mean_rot_err_deg: mean(&|r| r.rot_err_deg),
        mean_trans_err_mm: mean(&|r| r.trans_err_mm),
        ambiguity,
    })
}
