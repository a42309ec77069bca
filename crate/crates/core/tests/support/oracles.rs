//! Independent numerical oracles shared by the integration tests.

use std::f64::consts::PI;

use nalgebra::Matrix4;
use posekit::rotation::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn random_tangent(rng: &mut impl Rng, radius: f64) -> TangentVector {
    loop {
        let v = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        if norm3(&v) <= 1.0 {
            return TangentVector([v[0] * radius, v[1] * radius, v[2] * radius]);
        }
    }
}

pub fn random_quat(rng: &mut impl Rng) -> UnitQuaternion {
    loop {
        let a = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        if let Ok(q) = UnitQuaternion::normalize(a) {
            if a.iter().map(|x| x * x).sum::<f64>() > 0.05 {
                return q;
            }
        }
    }
}

/// A tight cluster plus a few scattered outliers.
pub fn cloud(seed: u64, n: usize, outliers: usize) -> (UnitQuaternion, Vec<UnitQuaternion>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = random_quat(&mut rng);
    let mut qs: Vec<UnitQuaternion> = (0..n)
        .map(|_| exp_map(&base, &random_tangent(&mut rng, 0.3)))
        .collect();
    for _ in 0..outliers {
        qs.push(exp_map(&base, &random_tangent(&mut rng, 1.0)));
    }
    (base, qs)
}

/// Coarse-to-fine grid search of `objective` over tangent vectors at `base`.
pub fn grid_minimum(base: &UnitQuaternion, objective: impl Fn(&UnitQuaternion) -> f64) -> UnitQuaternion {
    const STEPS: i32 = 10;
    let mut center = [0.0; 3];
    let mut half = 0.6;
    for _ in 0..7 {
        let mut best = (f64::INFINITY, center);
        for i in -STEPS..=STEPS {
            for j in -STEPS..=STEPS {
                for k in -STEPS..=STEPS {
                    let s = half / STEPS as f64;
                    let v = [
                        center[0] + i as f64 * s,
                        center[1] + j as f64 * s,
                        center[2] + k as f64 * s,
                    ];
                    let f = objective(&exp_map(base, &TangentVector(v)));
                    if f < best.0 {
                        best = (f, v);
                    }
                }
            }
        }
        center = best.1;
        half *= 0.25;
    }
    exp_map(base, &TangentVector(center))
}

/// Monte Carlo estimate of `log F(Z)` with uniform points on the 3-sphere.
pub fn log_norm_mc(z: &[f64; 4], n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    for _ in 0..n {
        let g: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let r2: f64 = g.iter().map(|x| x * x).sum();
        let e: f64 = (0..4).map(|i| z[i] * g[i] * g[i] / r2).sum();
        sum += e.exp();
    }
    (2.0 * PI * PI * sum / n as f64).ln()
}

pub fn random_orientation(seed: u64) -> [[f64; 4]; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Matrix4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    let q = m.qr().q();
    std::array::from_fn(|j| std::array::from_fn(|i| q[(i, j)]))
}
