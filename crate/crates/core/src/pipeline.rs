//! Per-detection inference: ambiguity test, clustering of ambiguous
//! hypothesis sets, robust fusion of rotation and depth, back-projection.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use serde::{Deserialize, Serialize};

use crate::ambiguity::{analyze, AmbiguityReport, AmbiguityRule, SingularIndex, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::metrics::PoseEstimate;
use crate::model::HypothesisSet;
use crate::robust::{dispersion, mean_shift, median_scalar, weiszfeld_median, ClusterSet};
use crate::rotation::UnitQuaternion;
use crate::toy::{ObjectKind, PinholeCamera};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRule {
    #[default]
    LargestMembership,
    LowestDispersion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub pca_threshold: f64,
    pub singular_index: SingularIndex,
    pub meanshift_bandwidth: f64,
    pub weiszfeld_tol: f64,
    pub weiszfeld_max_iter: usize,
    pub cluster_selection_rule: SelectionRule,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            pca_threshold: DEFAULT_THRESHOLD,
            singular_index: SingularIndex::Second,
            meanshift_bandwidth: FRAC_PI_4,
            weiszfeld_tol: 1e-10,
            weiszfeld_max_iter: 200,
            cluster_selection_rule: SelectionRule::LargestMembership,
        }
    }
}

impl InferenceConfig {
    pub fn for_object(kind: ObjectKind) -> Self {
        let meanshift_bandwidth = match kind {
            ObjectKind::Cube | ObjectKind::Cup => FRAC_PI_4,
            ObjectKind::Cylinder => FRAC_PI_2,
        };
        Self {
            meanshift_bandwidth,
            ..Self::default()
        }
    }

    pub fn rule(&self) -> AmbiguityRule {
        AmbiguityRule {
            threshold: self.pca_threshold,
            singular_index: self.singular_index,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.meanshift_bandwidth > 0.0) {
            return Err(Error::InvalidBandwidth(self.meanshift_bandwidth));
        }
        if !(self.pca_threshold > 0.0) {
            return Err(Error::Config(format!(
                "pca_threshold must be positive, got {}",
                self.pca_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub pose: PoseEstimate,
    pub depth: f64,
    pub ambiguity: AmbiguityReport,
    pub clusters: Option<ClusterSet>,
    /// Fused pose of every cluster, in cluster order.
    pub cluster_poses: Vec<PoseEstimate>,
    /// Dispersion of every cluster's rotations, radians.
    pub cluster_sigmas: Vec<f64>,
    pub selected_cluster: Option<usize>,
    pub selection_rule: SelectionRule,
    pub confidence_sigma: f64,
}

/// Picks a cluster: most members, or smallest dispersion. Ties go to the
/// lowest index.
pub fn select_cluster(counts: &[usize], sigmas: &[f64], rule: SelectionRule) -> Result<usize> {
    if counts.is_empty() {
        return Err(Error::EmptyInput("clusters"));
    }
    let mut best = 0;
    for i in 1..counts.len() {
        let better = match rule {
            SelectionRule::LargestMembership => counts[i] > counts[best],
            SelectionRule::LowestDispersion => sigmas[i] < sigmas[best],
        };
        if better {
            best = i;
        }
    }
    Ok(best)
}

fn fuse(
    rotations: &[UnitQuaternion],
    depths: &[f64],
    camera: &PinholeCamera,
    bbox_center: [f64; 2],
    config: &InferenceConfig,
) -> Result<(PoseEstimate, f64)> {
    let rotation = weiszfeld_median(rotations, config.weiszfeld_tol, config.weiszfeld_max_iter)?.rotation;
    let depth = median_scalar(depths)?;
    let translation = camera.backproject(bbox_center[0], bbox_center[1], depth)?;
    Ok((PoseEstimate::new(rotation, translation), depth))
}

pub fn infer(
    hyps: &HypothesisSet,
    camera: &PinholeCamera,
    bbox_center: [f64; 2],
    config: &InferenceConfig,
) -> Result<InferenceResult> {
    if hyps.len() < 2 {
        return Err(Error::InsufficientHypotheses {
            needed: 2,
            got: hyps.len(),
        });
    }
    config.validate()?;
    let rotations: Vec<UnitQuaternion> = hyps.rotations.iter().map(|q| q.to_hemisphere()).collect();
    let ambiguity = analyze(&rotations, config.rule())?;
    let confidence_sigma = dispersion(&rotations)?.sigma;

    if !ambiguity.ambiguous {
        let (pose, depth) = fuse(&rotations, &hyps.depths, camera, bbox_center, config)?;
        return Ok(InferenceResult {
            pose,
            depth,
            ambiguity,
            clusters: None,
            cluster_poses: Vec::new(),
            cluster_sigmas: Vec::new(),
            selected_cluster: None,
            selection_rule: config.cluster_selection_rule,
            confidence_sigma,
        });
    }

    let clusters = mean_shift(&rotations, config.meanshift_bandwidth)?;
    let mut poses = Vec::with_capacity(clusters.len());
    let mut depths_fused = Vec::with_capacity(clusters.len());
    let mut sigmas = Vec::with_capacity(clusters.len());
    for c in 0..clusters.len() {
        let members = clusters.members(c);
        assert!(!members.is_empty(), "mean shift produced an empty cluster");
        let rs: Vec<UnitQuaternion> = members.iter().map(|&i| rotations[i]).collect();
        let ds: Vec<f64> = members.iter().map(|&i| hyps.depths[i]).collect();
        let (pose, depth) = fuse(&rs, &ds, camera, bbox_center, config)?;
        poses.push(pose);
        depths_fused.push(depth);
        sigmas.push(dispersion(&rs)?.sigma);
    }
    let selected = select_cluster(&clusters.member_counts, &sigmas, config.cluster_selection_rule)?;
    Ok(InferenceResult {
        pose: poses[selected],
        depth: depths_fused[selected],
        ambiguity,
        clusters: Some(clusters),
        cluster_poses: poses,
        cluster_sigmas: sigmas,
        selected_cluster: Some(selected),
        selection_rule: config.cluster_selection_rule,
        confidence_sigma,
    })
}
