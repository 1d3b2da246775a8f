//! Synthetic cube-world instances, chordal initialization, and evaluation
//! metrics.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;

use crate::data_matrices::{evaluate_full_cost, DataMatrixSet};
use crate::error::{Error, Result};
use crate::geometry::{exp_so, rotation_angle, Rotation};
use crate::graph::{MeasurementGraph, PoseEstimate, PoseMeasurement};
use crate::sparse::{CscMatrix, SparseCholesky};
use crate::stiefel::StiefelPoint;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CubeConfig {
    /// Poses per lattice edge.
    pub s: usize,
    /// Loop-closure probability for each candidate pair.
    pub p_lc: f64,
    /// Rotational noise standard deviation (rad).
    pub sigma_r: f64,
    /// Translational noise standard deviation (m).
    pub sigma_t: f64,
    pub seed: u64,
    /// 3 for the cube, 2 for the planar grid variant.
    pub dim: usize,
    /// Loop-closure candidates are lattice pairs within this Manhattan
    /// distance that are not consecutive on the trajectory.
    pub lc_radius: usize,
}

impl Default for CubeConfig {
    fn default() -> Self {
        CubeConfig {
            s: 10,
            p_lc: 0.1,
            sigma_r: 0.1,
            sigma_t: 0.5,
            seed: 0,
            dim: 3,
            lc_radius: 1,
        }
    }
}

impl CubeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s < 2 {
            return Err(Error::Config(format!("side length must be at least 2, got {}", self.s)));
        }
        if !(0.0..=1.0).contains(&self.p_lc) {
            return Err(Error::Config(format!("p_lc must lie in [0, 1], got {}", self.p_lc)));
        }
        if !(self.sigma_r >= 0.0 && self.sigma_t >= 0.0 && self.sigma_r.is_finite() && self.sigma_t.is_finite()) {
            return Err(Error::Config("noise levels must be finite and non-negative".into()));
        }
        if !(self.dim == 2 || self.dim == 3) {
            return Err(Error::Config(format!("dim must be 2 or 3, got {}", self.dim)));
        }
        if self.lc_radius == 0 {
            return Err(Error::Config("lc_radius must be positive".into()));
        }
        Ok(())
    }
}

/// Lattice points in boustrophedon order: consecutive points differ by one
/// unit step along a single axis.
pub fn boustrophedon_path(s: usize, dim: usize) -> Vec<Vec<usize>> {
    let mut layer = Vec::with_capacity(s * s);
    for y in 0..s {
        for k in 0..s {
            let x = if y % 2 == 0 { k } else { s - 1 - k };
            layer.push((x, y));
        }
    }
    if dim == 2 {
        return layer.into_iter().map(|(x, y)| vec![x, y]).collect();
    }
    let mut path = Vec::with_capacity(s * s * s);
    for z in 0..s {
        let ordered: Box<dyn Iterator<Item = &(usize, usize)>> =
            if z % 2 == 0 { Box::new(layer.iter()) } else { Box::new(layer.iter().rev()) };
        path.extend(ordered.map(|&(x, y)| vec![x, y, z]));
    }
    path
}

fn random_rotation(d: usize, rng: &mut ChaCha8Rng) -> Rotation {
    if d == 2 {
        Rotation::from_angle(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
    } else {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        Rotation::from_quaternion(q[0], q[1], q[2], q[3]).expect("nonzero Gaussian quaternion").0
    }
}

fn noisy_measurement(
    i: usize,
    j: usize,
    truth: &PoseEstimate,
    cfg: &CubeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PoseMeasurement> {
    let d = cfg.dim;
    let ri = truth.rotations[i].matrix();
    let rel_r = ri.transpose() * truth.rotations[j].matrix();
    let rel_t = ri.transpose() * (&truth.translations[j] - &truth.translations[i]);
    let nt = Normal::new(0.0, cfg.sigma_t).expect("finite sigma");
    let nr = Normal::new(0.0, cfg.sigma_r).expect("finite sigma");
    let t = rel_t + DVector::from_fn(d, |_, _| nt.sample(rng));
    let omega: Vec<f64> = (0..d * (d - 1) / 2).map(|_| nr.sample(rng)).collect();
    let rot = Rotation::nearest(&(rel_r * exp_so(&omega)));
    let weight = |sigma: f64| if sigma > 0.0 { 1.0 / (sigma * sigma) } else { 1.0 };
    PoseMeasurement::new(i, j, t, rot, weight(cfg.sigma_t), weight(cfg.sigma_r))
}

/// Generates a cube-world (or planar grid) instance and its ground truth.
/// The trajectory visits every lattice point in boustrophedon order with unit
/// spacing; ground-truth orientations are uniformly random. Odometry links
/// consecutive poses; every lattice pair within `lc_radius` that is not
/// consecutive on the path becomes a loop closure with probability `p_lc`.
pub fn generate_cube(cfg: &CubeConfig) -> Result<(MeasurementGraph, PoseEstimate)> {
    cfg.validate()?;
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let path = boustrophedon_path(cfg.s, d);
    let n = path.len();

    let rotations = (0..n).map(|_| random_rotation(d, &mut rng)).collect();
    let translations = path
        .iter()
        .map(|p| DVector::from_iterator(d, p.iter().map(|&c| c as f64)))
        .collect();
    let truth = PoseEstimate::new(rotations, translations)?;

    let mut edges = Vec::new();
    for i in 0..n - 1 {
        edges.push(noisy_measurement(i, i + 1, &truth, cfg, &mut rng)?);
    }
    for i in 0..n {
        for j in i + 2..n {
            let dist: usize = path[i].iter().zip(&path[j]).map(|(a, b)| a.abs_diff(*b)).sum();
            if dist <= cfg.lc_radius && rng.random_bool(cfg.p_lc) {
                edges.push(noisy_measurement(i, j, &truth, cfg, &mut rng)?);
            }
        }
    }
    let graph = MeasurementGraph::new(n, d, edges)?;
    Ok((graph, truth))
}

/// Number of loop-closure candidates of a generated instance.
pub fn loop_closure_candidates(s: usize, dim: usize, lc_radius: usize) -> usize {
    let path = boustrophedon_path(s, dim);
    let n = path.len();
    (0..n)
        .flat_map(|i| (i + 2..n).map(move |j| (i, j)))
        .filter(|&(i, j)| path[i].iter().zip(&path[j]).map(|(a, b)| a.abs_diff(*b)).sum::<usize>() <= lc_radius)
        .count()
}

/// Chordal initialization: minimizes `tr(L(G^ρ) RᵀR)` over unconstrained
/// `d × dn` matrices with block 0 fixed to the identity, projects every block
/// to SO(d), and pads with zero rows to rank `r`.
pub fn chordal_initialization(mats: &DataMatrixSet, r: usize) -> Result<StiefelPoint> {
    let d = mats.dim();
    let dn = mats.size();
    let mut reduced = Vec::new();
    let mut coupling = Vec::new();
    for (i, j, v) in mats.l_rho.triplets() {
        if i >= d && j >= d {
            reduced.push((i - d, j - d, v));
        } else if i >= d && j < d {
            coupling.push((i - d, j, v));
        }
    }
    let mut r_blocks = DMatrix::zeros(d, dn);
    r_blocks.columns_mut(0, d).copy_from(&DMatrix::identity(d, d));
    if dn > d {
        let lrr = CscMatrix::from_triplets(dn - d, dn - d, &reduced);
        let chol = SparseCholesky::factor(&lrr)?;
        // Columns of −L_{r0}: one right-hand side per coordinate.
        let mut rhs = DMatrix::zeros(dn - d, d);
        for (i, j, v) in coupling {
            rhs[(i, j)] -= v;
        }
        for c in 0..d {
            let mut col: Vec<f64> = rhs.column(c).iter().copied().collect();
            chol.solve_in_place(&mut col);
            for (k, x) in col.into_iter().enumerate() {
                // X = R_restᵀ, so entry (k, c) of X is R[c, d + k].
                r_blocks[(c, d + k)] = x;
            }
        }
    }
    for i in 1..mats.num_poses() {
        let proj = Rotation::nearest(&r_blocks.columns(d * i, d).into_owned());
        r_blocks.columns_mut(d * i, d).copy_from(proj.matrix());
    }
    StiefelPoint::from_rotations(&r_blocks, r)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub objective_value: f64,
    /// Mean geodesic rotation error (rad).
    pub rotation_error_mean: f64,
    /// Root-mean-square translation error (m).
    pub translation_rmse: f64,
}

/// Errors of `est` against `truth`; `est` should already be gauge-aligned.
pub fn evaluate_metrics(g: &MeasurementGraph, est: &PoseEstimate, truth: &PoseEstimate) -> Result<Metrics> {
    if est.len() != truth.len() || est.dim() != truth.dim() {
        return Err(Error::Dimension("estimate and ground truth differ in size".into()));
    }
    let n = est.len() as f64;
    let rot: f64 = est
        .rotations
        .iter()
        .zip(&truth.rotations)
        .map(|(a, b)| rotation_angle(&(a.matrix().transpose() * b.matrix())))
        .sum();
    let trans: f64 = est
        .translations
        .iter()
        .zip(&truth.translations)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok(Metrics {
        objective_value: evaluate_full_cost(g, est)?,
        rotation_error_mean: rot / n,
        translation_rmse: (trans / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_steps_are_unit() {
        for dim in [2, 3] {
            let p = boustrophedon_path(4, dim);
            assert_eq!(p.len(), 4usize.pow(dim as u32));
            for w in p.windows(2) {
                let dist: usize = w[0].iter().zip(&w[1]).map(|(a, b)| a.abs_diff(*b)).sum();
                assert_eq!(dist, 1);
            }
        }
    }

    #[test]
    fn odometry_only_chain() {
        let cfg = CubeConfig { s: 2, p_lc: 0.0, ..Default::default() };
        let (g, truth) = generate_cube(&cfg).unwrap();
        assert_eq!(g.num_poses(), 8);
        assert_eq!(g.num_measurements(), 7);
        assert_eq!(truth.len(), 8);
    }

    #[test]
    fn all_candidates_at_full_probability() {
        let cfg = CubeConfig { s: 3, p_lc: 1.0, ..Default::default() };
        let (g, _) = generate_cube(&cfg).unwrap();
        assert_eq!(g.num_measurements(), 26 + loop_closure_candidates(3, 3, 1));
        // Lattice has 3·s²(s−1) unit-distance pairs, s³ − 1 of them on the path.
        assert_eq!(loop_closure_candidates(3, 3, 1), 54 - 26);
    }

    #[test]
    fn zero_noise_ground_truth_has_zero_cost() {
        let cfg = CubeConfig { s: 3, sigma_r: 0.0, sigma_t: 0.0, ..Default::default() };
        let (g, truth) = generate_cube(&cfg).unwrap();
        assert!(evaluate_full_cost(&g, &truth).unwrap() < 1e-20);
    }

    #[test]
    fn single_edge_chordal_is_exact() {
        let rot = Rotation::from_angle(0.7);
        let m = PoseMeasurement::new(0, 1, DVector::from_row_slice(&[1.0, 2.0]), rot.clone(), 1.0, 3.0).unwrap();
        let g = MeasurementGraph::new(2, 2, vec![m]).unwrap();
        let mats = DataMatrixSet::build(&g).unwrap();
        let y = chordal_initialization(&mats, 2).unwrap();
        assert!((y.matrix().columns(2, 2) - rot.matrix()).amax() < 1e-14);
    }

    #[test]
    fn generator_is_deterministic() {
        let cfg = CubeConfig { s: 3, seed: 9, ..Default::default() };
        let (a, _) = generate_cube(&cfg).unwrap();
        let (b, _) = generate_cube(&cfg).unwrap();
        assert_eq!(a.edges(), b.edges());
    }
}
