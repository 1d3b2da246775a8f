//! Independent dense oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sesync::geometry::{exp_so, Rotation};
use sesync::graph::{MeasurementGraph, PoseEstimate, PoseMeasurement};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rotation(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let k = d * (d - 1) / 2;
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
    exp_so(&w)
}

/// Random connected instance: a random spanning tree plus `extra` chords,
/// measurements generated from random ground truth with the given noise.
pub fn random_instance(
    n: usize,
    d: usize,
    extra: usize,
    sigma_r: f64,
    sigma_t: f64,
    seed: u64,
) -> (MeasurementGraph, PoseEstimate) {
    let mut rng = rng(seed);
    let rots: Vec<Rotation> = (0..n)
        .map(|_| Rotation::from_matrix(random_rotation(d, &mut rng), 1e-10).unwrap())
        .collect();
    let trans: Vec<DVector<f64>> = (0..n)
        .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-5.0..5.0)))
        .collect();
    let mut pairs = Vec::new();
    for j in 1..n {
        pairs.push((rng.random_range(0..j), j));
    }
    for _ in 0..extra {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j {
            pairs.push((i, j));
        }
    }
    let nr = Normal::new(0.0, sigma_r).unwrap();
    let nt = Normal::new(0.0, sigma_t).unwrap();
    let edges = pairs
        .into_iter()
        .map(|(i, j)| {
            let (i, j) = if rng.random_bool(0.5) { (i, j) } else { (j, i) };
            let ri = rots[i].matrix();
            let rel = ri.transpose() * rots[j].matrix();
            let w: Vec<f64> = (0..d * (d - 1) / 2).map(|_| nr.sample(&mut rng)).collect();
            let rot = Rotation::nearest(&(rel * exp_so(&w)));
            let t = ri.transpose() * (&trans[j] - &trans[i]) + DVector::from_fn(d, |_, _| nt.sample(&mut rng));
            let tau = rng.random_range(0.5..2.0);
            let kappa = rng.random_range(0.5..2.0);
            PoseMeasurement::new(i, j, t, rot, tau, kappa).unwrap()
        })
        .collect();
    let g = MeasurementGraph::new(n, d, edges).unwrap();
    (g, PoseEstimate::new(rots, trans).unwrap())
}

/// Row-wise quadratic form of the maximum-likelihood cost on one row
/// `x = (t-row ∈ Rⁿ, R-row ∈ R^{dn})`, evaluated straight from the
/// measurement definitions.
fn row_cost(g: &MeasurementGraph, x: &[f64]) -> f64 {
    let n = g.num_poses();
    let d = g.dim();
    let mut c = 0.0;
    for e in g.edges() {
        let (i, j) = (e.tail, e.head);
        let ri = &x[n + d * i..n + d * i + d];
        let rj = &x[n + d * j..n + d * j + d];
        let rm = e.rot.matrix();
        for b in 0..d {
            let pred: f64 = (0..d).map(|a| ri[a] * rm[(a, b)]).sum();
            c += e.kappa * (rj[b] - pred).powi(2);
        }
        let pred: f64 = (0..d).map(|a| ri[a] * e.t[a]).sum();
        c += e.tau * (x[j] - x[i] - pred).powi(2);
    }
    c
}

/// Dense `M` with `cost(t, R) = tr(X M Xᵀ)`, `X = (t_1 ⋯ t_n, R_1 ⋯ R_n)`,
/// obtained by polarization of the cost.
pub fn dense_full_matrix(g: &MeasurementGraph) -> DMatrix<f64> {
    let n = g.num_poses();
    let size = n + g.dim() * n;
    let mut diag = vec![0.0; size];
    let mut e = vec![0.0; size];
    for a in 0..size {
        e[a] = 1.0;
        diag[a] = row_cost(g, &e);
        e[a] = 0.0;
    }
    let mut m = DMatrix::zeros(size, size);
    for a in 0..size {
        m[(a, a)] = diag[a];
        for b in a + 1..size {
            e[a] = 1.0;
            e[b] = 1.0;
            let v = 0.5 * (row_cost(g, &e) - diag[a] - diag[b]);
            e[a] = 0.0;
            e[b] = 0.0;
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    m
}

/// Moore–Penrose pseudoinverse of a symmetric PSD matrix.
pub fn pinv_sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let tol = 1e-10 * eig.eigenvalues.amax().max(1.0);
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > tol {
            let v = eig.eigenvectors.column(k);
            out += (v * v.transpose()) / l;
        }
    }
    out
}

/// Dense `Q̃`: Schur complement of the translational block of the full cost
/// matrix, using a pseudoinverse.
pub fn dense_q(g: &MeasurementGraph) -> DMatrix<f64> {
    let n = g.num_poses();
    let dn = g.dim() * n;
    let m = dense_full_matrix(g);
    let mtt = m.view((0, 0), (n, n)).into_owned();
    let mtr = m.view((0, n), (n, dn)).into_owned();
    let mrr = m.view((n, n), (dn, dn)).into_owned();
    let q = mrr - mtr.transpose() * pinv_sym(&mtt) * mtr;
    (&q + q.transpose()) * 0.5
}

/// Dense certificate matrix `S = Q̃ − BlockDiag(sym(Y_iᵀ (YQ̃)_i))`.
pub fn dense_s(q: &DMatrix<f64>, y: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let yq = y * q;
    let mut s = q.clone();
    for i in 0..q.nrows() / d {
        let b = y.columns(d * i, d).transpose() * yq.columns(d * i, d);
        let sym = (&b + b.transpose()) * 0.5;
        let mut blk = s.view_mut((d * i, d * i), (d, d));
        blk -= sym;
    }
    s
}

pub fn dense_min_eig(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone()).eigenvalues.min()
}

/// Gradient of the full cost with respect to every translation, computed
/// edge by edge.
pub fn translation_gradient(g: &MeasurementGraph, x: &PoseEstimate) -> Vec<DVector<f64>> {
    let mut grad = vec![DVector::zeros(g.dim()); g.num_poses()];
    for e in g.edges() {
        let (i, j) = (e.tail, e.head);
        let r = &x.translations[j] - &x.translations[i] - x.rotations[i].matrix() * &e.t;
        grad[j] += &r * (2.0 * e.tau);
        grad[i] -= &r * (2.0 * e.tau);
    }
    grad
}

/// Brute-force global minimum of the translation-eliminated cost for d = 2,
/// n = 3: block 0 fixed at the identity (gauge), the other two angles
/// gridded at `step`, then Newton-refined from the best grid point.
pub fn brute_force_planar_three(q: &DMatrix<f64>, step: f64) -> f64 {
    assert_eq!(q.nrows(), 6);
    // F = tr(R Q Rᵀ) with R rows (c, −s, …) and (s, c, …) = uᵀ P u for
    // u = (c0, s0, c1, s1, c2, s2).
    let mut a = DMatrix::zeros(6, 6);
    let mut b = DMatrix::zeros(6, 6);
    for i in 0..3 {
        a[(2 * i, 2 * i)] = 1.0;
        a[(2 * i + 1, 2 * i + 1)] = -1.0;
        b[(2 * i, 2 * i + 1)] = 1.0;
        b[(2 * i + 1, 2 * i)] = 1.0;
    }
    let p = a.transpose() * q * &a + b.transpose() * q * &b;
    let eval = |t1: f64, t2: f64| {
        let u = DVector::from_row_slice(&[1.0, 0.0, t1.cos(), t1.sin(), t2.cos(), t2.sin()]);
        u.dot(&(&p * &u))
    };

    let steps = (2.0 * std::f64::consts::PI / step).ceil() as usize;
    let trig: Vec<(f64, f64)> = (0..steps).map(|k| (k as f64 * step).sin_cos()).collect();
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for (k1, &(s1, c1)) in trig.iter().enumerate() {
        // Terms independent of angle 2, and the coefficients of (c2, s2).
        let u1 = [1.0, 0.0, c1, s1];
        let mut base = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                base += u1[i] * p[(i, j)] * u1[j];
            }
        }
        let lin_c: f64 = 2.0 * (0..4).map(|i| u1[i] * p[(i, 4)]).sum::<f64>();
        let lin_s: f64 = 2.0 * (0..4).map(|i| u1[i] * p[(i, 5)]).sum::<f64>();
        for &(s2, c2) in &trig {
            let f = base + lin_c * c2 + lin_s * s2 + p[(4, 4)] * c2 * c2 + 2.0 * p[(4, 5)] * c2 * s2 + p[(5, 5)] * s2 * s2;
            if f < best.0 {
                best = (f, k1 as f64 * step, 0.0);
                best.2 = s2.atan2(c2);
            }
        }
    }

    // Newton refinement on the two free angles.
    let (mut t1, mut t2) = (best.1, best.2);
    for _ in 0..50 {
        let u = DVector::from_row_slice(&[1.0, 0.0, t1.cos(), t1.sin(), t2.cos(), t2.sin()]);
        let pu = &p * &u;
        let mut du = [DVector::zeros(6), DVector::zeros(6)];
        du[0][2] = -t1.sin();
        du[0][3] = t1.cos();
        du[1][4] = -t2.sin();
        du[1][5] = t2.cos();
        let g = [2.0 * pu.dot(&du[0]), 2.0 * pu.dot(&du[1])];
        let mut h = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                h[i][j] = 2.0 * du[i].dot(&(&p * &du[j]));
            }
        }
        // Second derivative of u along each angle is −(c, s).
        h[0][0] -= 2.0 * (pu[2] * t1.cos() + pu[3] * t1.sin());
        h[1][1] -= 2.0 * (pu[4] * t2.cos() + pu[5] * t2.sin());
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let d1 = (h[1][1] * g[0] - h[0][1] * g[1]) / det;
        let d2 = (h[0][0] * g[1] - h[1][0] * g[0]) / det;
        let (n1, n2) = (t1 - d1, t2 - d2);
        if eval(n1, n2) > eval(t1, t2) {
            break;
        }
        t1 = n1;
        t2 = n2;
        if d1.abs() + d2.abs() < 1e-15 {
            break;
        }
    }
    eval(t1, t2).min(best.0)
}
