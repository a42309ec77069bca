//! Finite-difference oracle for the regressor's analytic gradient.

use posekit::model::{meta_loss, pose_loss, RegressorModel, OUTPUTS_PER_HEAD};
use posekit::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

fn loss_at(model: &RegressorModel, x: &[f64], gt: (&UnitQuaternion, f64), eps: f64, mask: &[bool]) -> f64 {
    let hyps = model.forward(x).unwrap();
    meta_loss(&hyps, gt, eps, 3.0, mask).unwrap().0
}

fn random_unit(rng: &mut impl Rng) -> UnitQuaternion {
    let v: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    UnitQuaternion::normalize(v).unwrap()
}

/// Hidden pre-activations from a plain re-implementation of the dense layers.
fn hidden_preactivations(model: &RegressorModel, x: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    let mut cur = x.to_vec();
    let mut off = 0;
    let sizes = &model.layer_sizes;
    for l in 0..sizes.len() - 1 {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let mut z = vec![0.0; n_out];
        for o in 0..n_out {
            z[o] = model.params[off + n_in * n_out + o];
            for i in 0..n_in {
                z[o] += model.params[off + o * n_in + i] * cur[i];
            }
        }
        off += n_in * n_out + n_out;
        if l + 1 < sizes.len() - 1 {
            out.extend_from_slice(&z);
            cur = z.iter().map(|&v| if v > 0.0 { v } else { 0.01 * v }).collect();
        }
    }
    out
}

/// True when the loss is smooth within a margin of the finite-difference
/// stencil: no activation kink, no winner change, no smooth-L1 branch switch,
/// and raw rotation outputs far enough from zero that normalization is tame.
fn smooth_here(model: &RegressorModel, x: &[f64], gt: (&UnitQuaternion, f64), mask: &[bool]) -> bool {
    let margin = 1e-3;
    if hidden_preactivations(model, x).iter().any(|z| z.abs() < margin) {
        return false;
    }
    let raw = model.forward_raw(x).unwrap();
    let tiny = raw
        .chunks(OUTPUTS_PER_HEAD)
        .any(|h| h[..4].iter().map(|v| v * v).sum::<f64>().sqrt() < 0.05);
    if tiny {
        return false;
    }
    let hyps = model.forward(x).unwrap();
    let mut active: Vec<f64> = (0..model.m)
        .filter(|&j| mask[j])
        .map(|j| pose_loss((&hyps.rotations[j], hyps.depths[j]), gt, 3.0))
        .collect();
    active.sort_by(f64::total_cmp);
    if active.len() > 1 && active[1] - active[0] < margin {
        return false;
    }
    hyps.depths.iter().all(|d| ((d - gt.1).abs() - 1.0).abs() > margin)
}

/// Worst relative error between the analytic gradient and central
/// differences over `count` random small models where the loss is smooth.
pub fn worst_relative_error(count: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut model_seed = 0u64;
    while checked < count {
        model_seed += 1;
        let m = rng.gen_range(1..5);
        let hidden = [rng.gen_range(2..7), rng.gen_range(2..7)];
        let input = rng.gen_range(2..6);
        let model = RegressorModel::new(input, &hidden, m, model_seed).unwrap();
        assert_eq!(*model.layer_sizes.last().unwrap(), m * OUTPUTS_PER_HEAD);
        let x: Vec<f64> = (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gt = random_unit(&mut rng);
        let depth = rng.gen_range(-1.5..1.5);
        let eps_max = if m > 1 { (m - 1) as f64 / m as f64 } else { 0.0 };
        let eps = rng.gen_range(0.0..0.1f64).min(0.9 * eps_max);
        let mut mask: Vec<bool> = (0..m).map(|_| rng.gen_bool(0.7)).collect();
        mask[0] = true;
        if !smooth_here(&model, &x, (&gt, depth), &mask) {
            continue;
        }
        let g = model.loss_and_grad(&x, (&gt, depth), eps, 3.0, &mask).unwrap();
        assert!((g.loss - loss_at(&model, &x, (&gt, depth), eps, &mask)).abs() < 1e-9);

        let mut num = vec![0.0; model.params.len()];
        for i in 0..model.params.len() {
            let mut p = model.clone();
            p.params[i] += STEP;
            let up = loss_at(&p, &x, (&gt, depth), eps, &mask);
            p.params[i] -= 2.0 * STEP;
            let down = loss_at(&p, &x, (&gt, depth), eps, &mask);
            num[i] = (up - down) / (2.0 * STEP);
        }
        let diff: f64 = num.iter().zip(&g.grad).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
        worst = worst.max(diff / scale);
        checked += 1;
    }
    worst
}
