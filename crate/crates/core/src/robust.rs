//! Robust averaging and clustering of rotations on the quaternion hypersphere.
//!
//! All distances are [`quat_distance`], i.e. geodesic distance on the
//! antipodal quotient. Sums are always accumulated in input order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::{exp_map, log_map_unchecked, quat_distance, TangentVector, UnitQuaternion};

/// Distance below which a data point is treated as coinciding with the
/// Weiszfeld iterate and dropped from that step.
const COINCIDENCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianEstimate {
    pub rotation: UnitQuaternion,
    pub converged: bool,
    pub iterations: usize,
}

/// Geodesic L1 median by the Weiszfeld iteration in tangent spaces.
///
/// Each step moves along the weighted tangent average with weights
/// `1/d_i`, halving the step whenever the objective would increase, so the
/// sum of distances never grows between iterates.
pub fn weiszfeld_median(
    quats: &[UnitQuaternion],
    tol: f64,
    max_iter: usize,
) -> Result<MedianEstimate> {
    weiszfeld_traced(quats, tol, max_iter, |_| {})
}

/// [`weiszfeld_median`] reporting the objective value after every accepted iterate.
pub fn weiszfeld_traced(
    quats: &[UnitQuaternion],
    tol: f64,
    max_iter: usize,
    mut trace: impl FnMut(f64),
) -> Result<MedianEstimate> {
    let first = quats.first().ok_or(Error::EmptyInput("weiszfeld_median"))?;
    if quats.len() == 1 {
        return Ok(MedianEstimate {
            rotation: first.to_hemisphere(),
            converged: true,
            iterations: 0,
        });
    }
    // Start from the input point with the smallest objective: the median of
    // a majority cluster is then reached without crossing the minority.
    let mut current = quats
        .iter()
        .map(|q| (l1_objective(quats, q), q))
        .fold(None::<(f64, &UnitQuaternion)>, |best, (f, q)| match best {
            Some((bf, _)) if bf <= f => best,
            _ => Some((f, q)),
        })
        .map(|(_, q)| q.to_hemisphere())
        .unwrap_or(*first);
    let mut objective = l1_objective(quats, &current);
    trace(objective);

    for iter in 0..max_iter {
        let mut num = [0.0; 3];
        let mut den = 0.0;
        for q in quats {
            let v = log_map_unchecked(&current, q);
            let d = v.norm();
            if d < COINCIDENCE {
                continue;
            }
            for k in 0..3 {
                num[k] += v.0[k] / d;
            }
            den += 1.0 / d;
        }
        if den == 0.0 {
            return Ok(MedianEstimate {
                rotation: current,
                converged: true,
                iterations: iter,
            });
        }
        let mut step = [num[0] / den, num[1] / den, num[2] / den];
        let mut accepted = None;
        for _ in 0..40 {
            let candidate = exp_map(&current, &TangentVector(step));
            let f = l1_objective(quats, &candidate);
            if f <= objective {
                accepted = Some((candidate, f));
                break;
            }
            step = [step[0] * 0.5, step[1] * 0.5, step[2] * 0.5];
        }
        let step_norm = TangentVector(step).norm();
        match accepted {
            Some((candidate, f)) => {
                current = candidate;
                objective = f;
                trace(objective);
            }
            None => {
                return Ok(MedianEstimate {
                    rotation: current,
                    converged: true,
                    iterations: iter + 1,
                })
            }
        }
        if step_norm < tol {
            return Ok(MedianEstimate {
                rotation: current,
                converged: true,
                iterations: iter + 1,
            });
        }
    }
    Ok(MedianEstimate {
        rotation: current,
        converged: false,
        iterations: max_iter,
    })
}

/// Sum of geodesic distances from `q` to every input.
pub fn l1_objective(quats: &[UnitQuaternion], q: &UnitQuaternion) -> f64 {
    quats.iter().map(|p| quat_distance(p, q)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KarcherEstimate {
    pub mean: UnitQuaternion,
    pub converged: bool,
    /// Some input lies at least pi/4 from the chordal mean, so uniqueness
    /// of the mean is not guaranteed.
    pub wide_spread: bool,
    pub iterations: usize,
}

/// Sign-aligned, normalized Euclidean average of the inputs.
pub fn chordal_mean(quats: &[UnitQuaternion]) -> Result<UnitQuaternion> {
    let first = quats.first().ok_or(Error::EmptyInput("chordal_mean"))?;
    let mut acc = [0.0; 4];
    for q in quats {
        let s = if q.dot(first) < 0.0 { -1.0 } else { 1.0 };
        for (a, c) in acc.iter_mut().zip(q.as_array()) {
            *a += s * c;
        }
    }
    UnitQuaternion::normalize(acc)
        .map(|q| q.to_hemisphere())
        .or_else(|_| Ok(first.to_hemisphere()))
}

/// Riemannian center of mass (minimizer of the sum of squared geodesic
/// distances) by fixed-point tangent averaging from the chordal mean.
pub fn karcher_mean(quats: &[UnitQuaternion], tol: f64, max_iter: usize) -> Result<KarcherEstimate> {
    let mut current = chordal_mean(quats)?;
    let wide_spread = quats
        .iter()
        .any(|q| quat_distance(q, &current) >= std::f64::consts::FRAC_PI_4);
    let n = quats.len() as f64;
    for iter in 0..max_iter {
        let mut g = [0.0; 3];
        for q in quats {
            let v = log_map_unchecked(&current, q);
            for k in 0..3 {
                g[k] += v.0[k];
            }
        }
        let step = TangentVector([g[0] / n, g[1] / n, g[2] / n]);
        if step.norm() < tol {
            return Ok(KarcherEstimate {
                mean: current,
                converged: true,
                wide_spread,
                iterations: iter,
            });
        }
        current = exp_map(&current, &step);
    }
    Ok(KarcherEstimate {
        mean: current,
        converged: false,
        wide_spread,
        iterations: max_iter,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionStats {
    pub karcher_mean: UnitQuaternion,
    /// Root-mean-square geodesic distance to the Karcher mean, radians.
    pub sigma: f64,
}

pub fn dispersion(quats: &[UnitQuaternion]) -> Result<DispersionStats> {
    let mean = karcher_mean(quats, 1e-12, 200)?.mean;
    let ss: f64 = quats
        .iter()
        .map(|q| {
            let d = quat_distance(q, &mean);
            d * d
        })
        .sum();
    Ok(DispersionStats {
        karcher_mean: mean,
        sigma: (ss / quats.len() as f64).sqrt(),
    })
}

/// Modes found by mean shift and the partition of the inputs among them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub modes: Vec<UnitQuaternion>,
    pub assignments: Vec<usize>,
    #[serde(rename = "counts")]
    pub member_counts: Vec<usize>,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Indices of the inputs assigned to `cluster`.
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Flat-kernel mean shift with a Weiszfeld update.
///
/// `bandwidth` is a rotation angle (twice the quaternion distance). Every
/// input seeds a trajectory; the iterate is replaced by the geodesic median
/// of the inputs within `bandwidth` until it moves less than
/// `bandwidth / 100`. Converged modes are merged greedily (best supported
/// first) when closer than `bandwidth / 2`, and each input is assigned to
/// its nearest surviving mode.
pub fn mean_shift(quats: &[UnitQuaternion], bandwidth: f64) -> Result<ClusterSet> {
    if quats.is_empty() {
        return Err(Error::EmptyInput("mean_shift"));
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidBandwidth(bandwidth));
    }
    // all comparisons below are in quaternion distance
    let radius = bandwidth / 2.0;
    let stop = radius / 100.0;
    let mut converged: Vec<(usize, UnitQuaternion)> = Vec::with_capacity(quats.len());
    let mut window = Vec::with_capacity(quats.len());
    for seed in quats {
        let mut mode = seed.to_hemisphere();
        for _ in 0..100 {
            window.clear();
            window.extend(
                quats
                    .iter()
                    .filter(|q| quat_distance(q, &mode) <= radius)
                    .copied(),
            );
            if window.is_empty() {
                break;
            }
            let next = weiszfeld_median(&window, stop * 1e-3, 200)?.rotation;
            let shift = quat_distance(&next, &mode);
            mode = next;
            if shift < stop {
                break;
            }
        }
        let support = quats
            .iter()
            .filter(|q| quat_distance(q, &mode) <= radius)
            .count();
        converged.push((support, mode));
    }

    converged.sort_by(|(sa, qa), (sb, qb)| {
        sb.cmp(sa).then_with(|| {
            let (a, b) = (qa.as_array(), qb.as_array());
            b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let mut kept: Vec<UnitQuaternion> = Vec::new();
    for (_, mode) in converged {
        if kept.iter().all(|k| quat_distance(k, &mode) >= radius / 2.0) {
            kept.push(mode);
        }
    }

    let nearest: Vec<usize> = quats
        .iter()
        .map(|q| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, m) in kept.iter().enumerate() {
                let d = quat_distance(q, m);
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            best
        })
        .collect();
    let mut counts = vec![0usize; kept.len()];
    for &c in &nearest {
        counts[c] += 1;
    }
    // Drop modes that attracted no input and compact the labels.
    let mut relabel = vec![usize::MAX; kept.len()];
    let mut modes = Vec::new();
    let mut member_counts = Vec::new();
    for (i, m) in kept.into_iter().enumerate() {
        if counts[i] > 0 {
            relabel[i] = modes.len();
            modes.push(m);
            member_counts.push(counts[i]);
        }
    }
    let assignments = nearest.into_iter().map(|c| relabel[c]).collect();
    Ok(ClusterSet {
        modes,
        assignments,
        member_counts,
    })
}

/// Median with the lower-median convention for even lengths.
pub fn median_scalar(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("median_scalar"));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    Ok(v[(v.len() - 1) / 2])
}
