//! Antipodally symmetric Bingham distributions on the unit 3-sphere:
//! normalization, maximum-likelihood fitting, rejection sampling and
//! equatorial plot export.
//!
//! The density is `p(q) = exp(q^T V Z V^T q) / F(Z)` with
//! `Z = diag(l1 <= l2 <= l3 <= l4 = 0)`.
//!
//! `F(Z)` is evaluated by writing `q = (sin(psi) u, cos(psi))` with `u` on
//! the 2-sphere. The `psi` integral has a closed form in exponentially
//! scaled modified Bessel functions, which leaves a smooth integrand on the
//! 2-sphere that is summed over a Fibonacci lattice.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::UnitQuaternion;

pub const DEFAULT_QUADRATURE_NODES: usize = 200_000;
/// Most negative concentration the fit will report.
pub const CONCENTRATION_FLOOR: f64 = -900.0;
/// Relative moment residual at which the fit stops.
pub const FIT_TOLERANCE: f64 = 1e-3;

/// Fitted or user-specified Bingham parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinghamParams {
    /// Columns of `V` as four unit 4-vectors, ordered by ascending
    /// concentration; the last one is the mode.
    pub orientation: [[f64; 4]; 4],
    /// `(l1, l2, l3, 0)`, ascending.
    pub concentrations: [f64; 4],
    /// Cached `log F(Z)`.
    pub log_norm: f64,
    /// Some concentration hit [`CONCENTRATION_FLOOR`].
    #[serde(default)]
    pub saturated: bool,
}

impl BinghamParams {
    pub fn new(orientation: [[f64; 4]; 4], concentrations: [f64; 4]) -> Result<Self> {
        let log_norm = log_norm_constant(&concentrations)?;
        let v = Matrix4::from_fn(|i, j| orientation[j][i]);
        let err = (v.transpose() * v - Matrix4::identity()).abs().max();
        if err > 1e-9 {
            return Err(Error::Config(format!(
                "orientation is not orthonormal (error {err:e})"
            )));
        }
        Ok(Self {
            orientation,
            concentrations,
            log_norm,
            saturated: false,
        })
    }

    /// Uniform distribution on the sphere.
    pub fn uniform() -> Self {
        let mut orientation = [[0.0; 4]; 4];
        for (i, col) in orientation.iter_mut().enumerate() {
            col[i] = 1.0;
        }
        Self {
            orientation,
            concentrations: [0.0; 4],
            log_norm: (2.0 * PI * PI).ln(),
            saturated: false,
        }
    }

    /// Isotropic concentration `lambda` around `mode`.
    pub fn around(mode: &UnitQuaternion, lambda: f64) -> Result<Self> {
        let basis = complete_basis(mode.as_array());
        Self::new(basis, [lambda, lambda, lambda, 0.0])
    }

    pub fn mode(&self) -> [f64; 4] {
        self.orientation[3]
    }

    fn exponent(&self, q: &[f64; 4]) -> f64 {
        self.orientation
            .iter()
            .zip(self.concentrations)
            .map(|(v, l)| {
                let p = dot4(v, q);
                l * p * p
            })
            .sum()
    }
}

/// Orthonormal basis whose last column is `mode`.
fn complete_basis(mode: &[f64; 4]) -> [[f64; 4]; 4] {
    let mut cols: Vec<[f64; 4]> = vec![*mode];
    for k in 0..4 {
        let mut e = [0.0; 4];
        e[k] = 1.0;
        for c in &cols {
            let d = dot4(&e, c);
            for i in 0..4 {
                e[i] -= d * c[i];
            }
        }
        let n = dot4(&e, &e).sqrt();
        if n > 1e-6 && cols.len() < 4 {
            cols.push([e[0] / n, e[1] / n, e[2] / n, e[3] / n]);
        }
    }
    [cols[1], cols[2], cols[3], cols[0]]
}

fn check_concentrations(z: &[f64; 4]) -> Result<()> {
    let ordered = z[0] <= z[1] && z[1] <= z[2] && z[2] <= z[3];
    if !ordered || z[3] != 0.0 || z.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidConcentration(*z));
    }
    Ok(())
}

/// `log F(Z)` with the default node count.
pub fn log_norm_constant(z: &[f64; 4]) -> Result<f64> {
    log_norm_constant_with(z, DEFAULT_QUADRATURE_NODES)
}

pub fn log_norm_constant_with(z: &[f64; 4], nodes: usize) -> Result<f64> {
    check_concentrations(z)?;
    let lattice = SphereLattice::new(nodes);
    Ok(lattice.moments([z[0], z[1], z[2]], false).f.ln())
}

/// Radial integrals `J_m(x) = int_0^pi sin^(2m)(psi) exp(-2 x sin^2(psi)) dpsi`
/// for `m = 1, 2, 3` and `x >= 0`.
pub fn radial_integrals(x: f64) -> [f64; 3] {
    // Cosine-series weights of ((1 - cos t) / 2)^m over I_0..I_3.
    const W: [[f64; 4]; 3] = [
        [0.5, -0.5, 0.0, 0.0],
        [0.375, -0.5, 0.125, 0.0],
        [0.3125, -0.46875, 0.1875, -0.03125],
    ];
    let mut out = [0.0; 3];
    if x < 30.0 {
        let ie = scaled_bessel_series(x);
        for (m, w) in W.iter().enumerate() {
            out[m] = PI * (0..4).map(|n| w[n] * ie[n]).sum::<f64>();
        }
    } else {
        // Large-argument expansion, combined term by term so the exact
        // cancellation of the leading orders happens on the coefficients.
        let pref = PI / (2.0 * PI * x).sqrt();
        let mut term = [1.0f64; 4];
        let mut acc = [0.0f64; 3];
        for k in 0..30usize {
            if k > 0 {
                let j = (2 * k - 1) as f64;
                for (n, t) in term.iter_mut().enumerate() {
                    let mu = 4.0 * (n * n) as f64;
                    *t *= -(mu - j * j) / (k as f64 * 8.0 * x);
                }
            }
            for (m, w) in W.iter().enumerate() {
                acc[m] += (0..4).map(|n| w[n] * term[n]).sum::<f64>();
            }
            if term.iter().all(|t| t.abs() < 1e-18) {
                break;
            }
        }
        for m in 0..3 {
            out[m] = pref * acc[m];
        }
    }
    out
}

/// `exp(-x) I_n(x)` for `n = 0..=3` by the power series (all terms positive).
fn scaled_bessel_series(x: f64) -> [f64; 4] {
    let h = 0.5 * x;
    let h2 = h * h;
    let mut out = [0.0; 4];
    let mut lead = 1.0; // h^n / n!
    for (n, o) in out.iter_mut().enumerate() {
        if n > 0 {
            lead *= h / n as f64;
        }
        let mut term = lead;
        let mut sum = term;
        let mut k = 1.0;
        while term > sum * 1e-17 {
            term *= h2 / (k * (k + n as f64));
            sum += term;
            k += 1.0;
        }
        *o = sum * (-x).exp();
    }
    out
}

/// Fibonacci lattice on the 2-sphere, stored as squared coordinates.
struct SphereLattice {
    squares: Vec<[f64; 3]>,
}

struct Moments {
    f: f64,
    /// `E[q_j^2]` for the three concentrated coordinates.
    second: [f64; 3],
    /// `E[q_j^2 q_k^2]`.
    fourth: [[f64; 3]; 3],
}

impl SphereLattice {
    fn new(nodes: usize) -> Self {
        let n = nodes.max(16);
        let golden = PI * (3.0 - 5f64.sqrt());
        let squares = (0..n)
            .map(|i| {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
                let r2 = (1.0 - z * z).max(0.0);
                let (s, c) = (golden * i as f64).sin_cos();
                [r2 * c * c, r2 * s * s, z * z]
            })
            .collect();
        Self { squares }
    }

    fn moments(&self, l: [f64; 3], with_fourth: bool) -> Moments {
        let mut f = 0.0;
        let mut s2 = [0.0; 3];
        let mut s4 = [[0.0; 3]; 3];
        for u in &self.squares {
            let x = -0.5 * (l[0] * u[0] + l[1] * u[1] + l[2] * u[2]);
            let j = radial_integrals(x.max(0.0));
            f += j[0];
            for a in 0..3 {
                s2[a] += u[a] * j[1];
                if with_fourth {
                    for b in a..3 {
                        s4[a][b] += u[a] * u[b] * j[2];
                    }
                }
            }
        }
        let scale = 4.0 * PI / self.squares.len() as f64;
        let mut fourth = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in a..3 {
                fourth[a][b] = s4[a][b] / f;
                fourth[b][a] = fourth[a][b];
            }
        }
        Moments {
            f: f * scale,
            second: [s2[0] / f, s2[1] / f, s2[2] / f],
            fourth,
        }
    }
}

/// Log density; exactly symmetric under `q -> -q`.
pub fn log_density(params: &BinghamParams, q: &UnitQuaternion) -> f64 {
    params.exponent(q.as_array()) - params.log_norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub quadrature_nodes: usize,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            quadrature_nodes: DEFAULT_QUADRATURE_NODES,
            max_iter: 100,
        }
    }
}

/// Scatter matrix `(1/N) sum q q^T`.
pub fn scatter_matrix(quats: &[UnitQuaternion]) -> Matrix4<f64> {
    let mut s = Matrix4::zeros();
    for q in quats {
        let a = q.as_array();
        for i in 0..4 {
            for j in 0..4 {
                s[(i, j)] += a[i] * a[j];
            }
        }
    }
    s / quats.len().max(1) as f64
}

pub fn fit(quats: &[UnitQuaternion]) -> Result<BinghamParams> {
    fit_with(quats, FitOptions::default())
}

/// Maximum-likelihood fit.
///
/// The orientation is the eigenbasis of the scatter matrix (ascending
/// eigenvalues). The concentrations solve `E[q_j^2] = e_j` for the three
/// smallest eigenvalues; this is the stationary point of the concave
/// log-likelihood, found by box-constrained Newton steps with backtracking.
pub fn fit_with(quats: &[UnitQuaternion], opts: FitOptions) -> Result<BinghamParams> {
    if quats.len() < 5 {
        return Err(Error::InsufficientHypotheses {
            needed: 5,
            got: quats.len(),
        });
    }
    let scatter = scatter_matrix(quats);
    let eig = SymmetricEigen::new(scatter);
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut orientation = [[0.0; 4]; 4];
    let mut e = [0.0; 4];
    for (slot, &k) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(k);
        orientation[slot] = [col[0], col[1], col[2], col[3]];
        e[slot] = eig.eigenvalues[k].max(0.0);
    }

    let lattice = SphereLattice::new(opts.quadrature_nodes);
    let mut saturated = false;
    let mut fixed = [false; 3];
    let mut lambda = [0.0; 3];
    for j in 0..3 {
        if e[j] < 1e-12 {
            lambda[j] = CONCENTRATION_FLOOR;
            fixed[j] = true;
            saturated = true;
        } else {
            lambda[j] = (-0.5 / e[j] + 2.0).clamp(CONCENTRATION_FLOOR, 0.0);
        }
    }
    let target = [e[0], e[1], e[2]];
    let objective =
        |l: &[f64; 3], m: &Moments| (0..3).map(|j| l[j] * target[j]).sum::<f64>() - m.f.ln();

    let mut m = lattice.moments(lambda, true);
    for _ in 0..opts.max_iter {
        let residual = (0..3)
            .filter(|&j| !fixed[j])
            .map(|j| ((m.second[j] - target[j]) / target[j]).abs())
            .fold(0.0, f64::max);
        if residual < FIT_TOLERANCE {
            break;
        }
        // Free set: coordinates not pinned against a bound by their gradient.
        let grad: Vec<f64> = (0..3).map(|j| target[j] - m.second[j]).collect();
        let free: Vec<usize> = (0..3)
            .filter(|&j| {
                !fixed[j]
                    && !(lambda[j] <= CONCENTRATION_FLOOR && grad[j] < 0.0)
                    && !(lambda[j] >= 0.0 && grad[j] > 0.0)
            })
            .collect();
        if free.is_empty() {
            break;
        }
        let mut h = Matrix3::<f64>::identity();
        let mut g = Vector3::<f64>::zeros();
        for (a, &ja) in free.iter().enumerate() {
            g[a] = grad[ja];
            for (b, &jb) in free.iter().enumerate() {
                h[(a, b)] = m.fourth[ja][jb] - m.second[ja] * m.second[jb];
            }
        }
        let k = free.len();
        let sub_h = h.view((0, 0), (k, k)).clone_owned();
        let sub_g = g.rows(0, k).clone_owned();
        let step = sub_h
            .cholesky()
            .map(|c| c.solve(&sub_g))
            .unwrap_or_else(|| sub_g.clone() * 1e-3);

        let current = objective(&lambda, &m);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..50 {
            let mut trial = lambda;
            for (a, &j) in free.iter().enumerate() {
                trial[j] = (lambda[j] + t * step[a]).clamp(CONCENTRATION_FLOOR, 0.0);
            }
            let tm = lattice.moments(trial, true);
            if objective(&trial, &tm) >= current {
                moved = trial != lambda;
                lambda = trial;
                m = tm;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }

    // Concentrations must stay ordered; ties from noise are resolved by sorting
    // together with their directions.
    let mut pairs: Vec<(f64, [f64; 4])> = (0..3).map(|j| (lambda[j], orientation[j])).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (j, (l, v)) in pairs.into_iter().enumerate() {
        lambda[j] = l;
        orientation[j] = v;
    }
    saturated |= lambda.iter().any(|&l| l <= CONCENTRATION_FLOOR);
    let concentrations = [lambda[0], lambda[1], lambda[2], 0.0];
    Ok(BinghamParams {
        orientation,
        concentrations,
        log_norm: lattice.moments(lambda, false).f.ln(),
        saturated,
    })
}

/// Bingham rejection sampler with an angular central Gaussian envelope.
pub fn sample(params: &BinghamParams, n: usize, seed: u64) -> Vec<UnitQuaternion> {
    let a: [f64; 4] = params.concentrations.map(|l| -l);
    let b = envelope_parameter(&a);
    let omega: [f64; 4] = a.map(|ai| 1.0 + 2.0 * ai / b);
    let log_bound = -(4.0 - b) / 2.0 + 2.0 * (4.0 / b).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut y = [0.0; 4];
        for i in 0..4 {
            let z: f64 = rng.sample(StandardNormal);
            y[i] = z / omega[i].sqrt();
        }
        let norm = dot4(&y, &y).sqrt();
        if norm < 1e-300 {
            continue;
        }
        let y = y.map(|c| c / norm);
        let quad_a: f64 = (0..4).map(|i| a[i] * y[i] * y[i]).sum();
        let quad_o: f64 = (0..4).map(|i| omega[i] * y[i] * y[i]).sum();
        // accept with probability exp(-y'Ay) / (M* (y'Oy)^-2)
        let log_ratio = -quad_a - log_bound + 2.0 * quad_o.ln();
        let u: f64 = rng.gen();
        if u.ln() < log_ratio {
            let mut q = [0.0; 4];
            for (col, yi) in params.orientation.iter().zip(y) {
                for i in 0..4 {
                    q[i] += col[i] * yi;
                }
            }
            if let Ok(q) = UnitQuaternion::normalize(q) {
                out.push(q);
            }
        }
    }
    out
}

/// Root of `sum_i 1 / (b + 2 a_i) = 1` on `(0, 4]`.
fn envelope_parameter(a: &[f64; 4]) -> f64 {
    let f = |b: f64| a.iter().map(|ai| 1.0 / (b + 2.0 * ai)).sum::<f64>() - 1.0;
    let (mut lo, mut hi) = (1e-12, 4.0);
    if f(hi) >= 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Plot data for an external viewer: sample points and a density grid on
/// the 2-sphere obtained by dropping the most concentrated direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotDataset {
    pub mode: [f64; 4],
    /// Direction removed by the projection (first orientation column).
    pub dropped_axis: [f64; 4],
    pub points: Vec<[f64; 3]>,
    pub grid: DensityGrid,
}

/// Densities on a `res x 2res` latitude-longitude grid (row-major, polar
/// angle by rows). The grid direction `d` maps to the quaternion
/// `d0 v1 + d1 v2 + d2 v3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub res: usize,
    pub values: Vec<f64>,
}

/// Projects quaternions onto the 3-space orthogonal to the most
/// concentrated direction and normalizes onto the unit 2-sphere.
pub fn project_equatorial(params: &BinghamParams, quats: &[UnitQuaternion], res: usize) -> PlotDataset {
    let basis = [
        params.orientation[1],
        params.orientation[2],
        params.orientation[3],
    ];
    let points = quats
        .iter()
        .filter_map(|q| {
            let p = basis.map(|b| dot4(&b, q.as_array()));
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            (n > 1e-12).then(|| p.map(|c| c / n))
        })
        .collect();
    let res = res.max(1);
    let mut values = Vec::with_capacity(2 * res * res);
    for r in 0..res {
        let theta = PI * (r as f64 + 0.5) / res as f64;
        for c in 0..2 * res {
            let phi = PI * (c as f64 + 0.5) / res as f64;
            let d = [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
            let mut q = [0.0; 4];
            for (b, dk) in basis.iter().zip(d) {
                for i in 0..4 {
                    q[i] += b[i] * dk;
                }
            }
            values.push((params.exponent(&q) - params.log_norm).exp());
        }
    }
    PlotDataset {
        mode: params.mode(),
        dropped_axis: params.orientation[0],
        points,
        grid: DensityGrid { res, values },
    }
}

impl PlotDataset {
    /// One `x,y,z` row per projected point.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,z\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p[0], p[1], p[2]));
        }
        s
    }
}

fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}
