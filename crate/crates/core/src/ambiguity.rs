//! Ambiguity detection by PCA over hypothesis quaternions and estimation of
//! the view-dependent ambiguity axis from the hypotheses' rotation axes.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{dot3, RotationAxis, UnitQuaternion, AXIS_EPSILON};

/// Default threshold on the second singular value, calibrated for 30 hypotheses.
/// Singular values of the centered matrix grow like `sqrt(M)` for a fixed
/// angular spread, so other hypothesis counts need a rescaled threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const CALIBRATION_COUNT: usize = 30;

/// Which singular value of the centered hypothesis matrix is thresholded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularIndex {
    First,
    #[default]
    Second,
}

impl SingularIndex {
    fn index(self) -> usize {
        match self {
            SingularIndex::First => 0,
            SingularIndex::Second => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityRule {
    pub threshold: f64,
    pub singular_index: SingularIndex,
}

impl Default for AmbiguityRule {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            singular_index: SingularIndex::Second,
        }
    }
}

impl AmbiguityRule {
    /// Threshold rescaled by `sqrt(m / 30)` for a different hypothesis count.
    pub fn scaled_for(self, m: usize) -> Self {
        Self {
            threshold: self.threshold * (m as f64 / CALIBRATION_COUNT as f64).sqrt(),
            ..self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityReport {
    /// Singular values of the centered M x 4 matrix, descending.
    pub singular_values: [f64; 4],
    pub ambiguous: bool,
    pub axis: Option<RotationAxis>,
    /// Smallest singular value of the stacked-axes system (0 when not estimated).
    pub axis_residual: f64,
    pub degenerate_axis: bool,
}

/// Singular values (descending) of the column-centered matrix of
/// hemisphere-aligned hypotheses.
pub fn centered_singular_values(quats: &[UnitQuaternion]) -> Result<[f64; 4]> {
    if quats.len() < 2 {
        return Err(Error::InsufficientHypotheses {
            needed: 2,
            got: quats.len(),
        });
    }
    let rows: Vec<[f64; 4]> = quats.iter().map(|q| q.to_hemisphere().to_array()).collect();
    let n = rows.len() as f64;
    let mut mean = [0.0; 4];
    for r in &rows {
        for k in 0..4 {
            mean[k] += r[k];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let x = DMatrix::from_fn(rows.len(), 4, |i, j| rows[i][j] - mean[j]);
    let mut sv: Vec<f64> = x.singular_values().iter().copied().collect();
    sv.resize(4, 0.0);
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok([sv[0], sv[1], sv[2], sv[3]])
}

/// PCA ambiguity test with the default rule (second singular value against `threshold`).
pub fn detect_ambiguity(quats: &[UnitQuaternion], threshold: f64) -> Result<(bool, [f64; 4])> {
    detect_with_rule(
        quats,
        AmbiguityRule {
            threshold,
            singular_index: SingularIndex::Second,
        },
    )
}

pub fn detect_with_rule(quats: &[UnitQuaternion], rule: AmbiguityRule) -> Result<(bool, [f64; 4])> {
    let sv = centered_singular_values(quats)?;
    Ok((sv[rule.singular_index.index()] > rule.threshold, sv))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisEstimate {
    pub axis: RotationAxis,
    pub residual: f64,
    pub degenerate: bool,
}

/// Least-squares normal `s` of the hypotheses' rotation axes: the right
/// singular vector of `A^T` (axes as rows) with the smallest singular value.
///
/// Near-identity hypotheses have no axis and are skipped. The estimate is
/// flagged degenerate when the null space is two-dimensional, i.e. the axes
/// are nearly collinear.
pub fn estimate_axis(quats: &[UnitQuaternion]) -> Result<AxisEstimate> {
    let axes: Vec<[f64; 3]> = quats
        .iter()
        .filter_map(|q| {
            let v = q.vector();
            let n = dot3(&v, &v).sqrt();
            (n > AXIS_EPSILON).then(|| [v[0] / n, v[1] / n, v[2] / n])
        })
        .collect();
    if axes.len() < 3 {
        return Err(Error::InsufficientAxes(axes.len()));
    }
    let at = DMatrix::from_fn(axes.len(), 3, |i, j| axes[i][j]);
    let svd = at.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Config("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let smallest = order[0];
    let second = svd.singular_values[order[1]];
    let largest = svd.singular_values[order[2]];
    let row = v_t.row(smallest);
    let axis = RotationAxis::new([row[0], row[1], row[2]])?;
    Ok(AxisEstimate {
        axis,
        residual: svd.singular_values[smallest],
        degenerate: second < 1e-3 * largest,
    })
}

/// Angle between undirected axes, degrees in `[0, 90]`.
pub fn axis_deviation(estimated: &RotationAxis, ground_truth: &RotationAxis) -> f64 {
    dot3(estimated.as_array(), ground_truth.as_array())
        .abs()
        .clamp(0.0, 1.0)
        .acos()
        .to_degrees()
}

/// Full report: detection, then axis estimation when ambiguous.
pub fn analyze(quats: &[UnitQuaternion], rule: AmbiguityRule) -> Result<AmbiguityReport> {
    let (ambiguous, singular_values) = detect_with_rule(quats, rule)?;
    let mut report = AmbiguityReport {
        singular_values,
        ambiguous,
        axis: None,
        axis_residual: 0.0,
        degenerate_axis: false,
    };
    if ambiguous {
        match estimate_axis(quats) {
            Ok(est) => {
                report.axis_residual = est.residual;
                report.degenerate_axis = est.degenerate;
                if !est.degenerate {
                    report.axis = Some(est.axis);
                }
            }
            Err(Error::InsufficientAxes(_)) => report.degenerate_axis = true,
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}
