mod common;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use sesync::data_matrices::DataMatrixSet;
use sesync::experiments::{generate_cube, CubeConfig};
use sesync::objective::Objective;
use sesync::rtr::{cauchy_decrease, solve_rtr, truncated_cg, RtrConfig, RtrStatus, TcgStop};
use sesync::stiefel::{inner, project_tangent, random_point, StiefelPoint};

fn instance(seed: u64) -> DataMatrixSet {
    let (g, _) = common::random_instance(6, 2, 4, 0.2, 0.3, seed);
    DataMatrixSet::build(&g).unwrap()
}

#[test]
fn zero_gradient_gives_zero_step() {
    let mats = instance(1);
    let obj = Objective::new(&mats);
    let y = random_point(6, 2, 3, 0).unwrap();
    let zero = DMatrix::zeros(3, 12);
    let res = truncated_cg(&obj, &y, &zero, 1.0, &RtrConfig::default());
    assert_eq!(res.step.amax(), 0.0);
    assert_eq!(res.iterations, 0);
}

/// Dense matrix of the Riemannian Hessian restricted to the tangent space,
/// in an orthonormal tangent basis built by projecting coordinate matrices.
fn tangent_basis_and_hessian(obj: &Objective<'_>, y: &StiefelPoint) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    let (r, cols) = (y.rank(), y.matrix().ncols());
    let mut basis: Vec<DMatrix<f64>> = Vec::new();
    for k in 0..r * cols {
        let mut e = DMatrix::zeros(r, cols);
        e[k] = 1.0;
        let mut v = project_tangent(y, &e).unwrap();
        for b in &basis {
            let c = inner(b, &v);
            v -= b * c;
        }
        let n = v.norm();
        if n > 1e-8 {
            basis.push(v / n);
        }
    }
    let m = basis.len();
    let h = DMatrix::from_fn(m, m, |i, j| inner(&basis[i], &obj.hessian_vector_product(y, &basis[j])));
    (basis, h)
}

#[test]
fn interior_step_matches_dense_newton_step() {
    let mats = instance(2);
    let obj = Objective::new(&mats);
    // Near a minimizer the Hessian is positive definite on the tangent space
    // modulo the gauge directions, so perturb a solved point slightly.
    let cfg = RtrConfig { grad_tol: Some(1e-10), ..Default::default() };
    let sol = solve_rtr(&obj, random_point(6, 2, 2, 3).unwrap(), &cfg).unwrap().point;
    let mut rng = common::rng(5);
    let noise = DMatrix::from_fn(2, 12, |_, _| rng.random_range(-1e-2..1e-2));
    let y = sesync::stiefel::retract(&sol, &project_tangent(&sol, &noise).unwrap()).unwrap();
    let grad = obj.riemannian_gradient(&y);

    let (basis, h) = tangent_basis_and_hessian(&obj, &y);
    let g = DVector::from_fn(basis.len(), |i, _| inner(&basis[i], &grad));
    let eig = h.clone().symmetric_eigen();
    // Pseudo-solve: the gauge direction has (near) zero curvature and the
    // gradient has no component along it.
    let mut coeff = DVector::zeros(basis.len());
    for k in 0..basis.len() {
        let l = eig.eigenvalues[k];
        if l > 1e-8 * eig.eigenvalues.amax() {
            let v = eig.eigenvectors.column(k);
            coeff -= v * (v.dot(&g) / l);
        }
    }
    let newton = basis.iter().enumerate().fold(DMatrix::zeros(2, 12), |acc, (i, b)| acc + b * coeff[i]);

    let tcg = RtrConfig { tcg_kappa: 1e-12, tcg_theta: 1.0, max_inner: Some(500), ..Default::default() };
    let res = truncated_cg(&obj, &y, &grad, 1e3, &tcg);
    assert_eq!(res.stop, TcgStop::InnerTol);
    assert!((&res.step - &newton).norm() <= 1e-6 * newton.norm(), "{:e}", (&res.step - &newton).norm());
}

#[test]
fn tiny_radius_hits_boundary_with_cauchy_decrease() {
    let mats = instance(3);
    let obj = Objective::new(&mats);
    let y = random_point(6, 2, 3, 1).unwrap();
    let grad = obj.riemannian_gradient(&y);
    let delta = 1e-6 * grad.norm();
    let res = truncated_cg(&obj, &y, &grad, delta, &RtrConfig::default());
    assert!(matches!(res.stop, TcgStop::Boundary | TcgStop::NegativeCurvature));
    assert!((res.step.norm() - delta).abs() <= 1e-9 * delta);
    // The first CG direction is the steepest-descent direction.
    let cos = -inner(&res.step, &grad) / (res.step.norm() * grad.norm());
    assert!(cos > 1.0 - 1e-9);
    let cauchy = cauchy_decrease(&obj, &y, &grad, delta);
    assert!(res.model_decrease(&grad) >= cauchy * (1.0 - 1e-9));
}

#[test]
fn tcg_decrease_dominates_cauchy_point() {
    for seed in 0..10 {
        let mats = instance(10 + seed);
        let obj = Objective::new(&mats);
        let y = random_point(6, 2, 4, seed).unwrap();
        let grad = obj.riemannian_gradient(&y);
        for delta in [1e-3, 1e-1, 1.0, 10.0] {
            let res = truncated_cg(&obj, &y, &grad, delta, &RtrConfig::default());
            assert!(res.step.norm() <= delta * (1.0 + 1e-9));
            let cauchy = cauchy_decrease(&obj, &y, &grad, delta);
            assert!(res.model_decrease(&grad) >= cauchy * (1.0 - 1e-9) - 1e-14);
        }
    }
}

#[test]
fn zero_noise_cube_reaches_zero_cost() {
    for dim in [2, 3] {
        let cfg = CubeConfig { s: 3, sigma_r: 0.0, sigma_t: 0.0, dim, seed: 7, ..Default::default() };
        let (g, _) = generate_cube(&cfg).unwrap();
        let mats = DataMatrixSet::build(&g).unwrap();
        let obj = Objective::new(&mats);
        let y0 = random_point(g.num_poses(), dim, dim + 2, 0).unwrap();
        let rtr = RtrConfig { grad_tol: Some(1e-9), rel_func_tol: 0.0, max_outer: 1000, ..Default::default() };
        let out = solve_rtr(&obj, y0, &rtr).unwrap();
        assert!(out.cost <= 1e-8, "dim {dim}: cost {:e}", out.cost);
    }
}

#[test]
fn accepted_costs_are_monotone() {
    for seed in 0..5 {
        let (g, _) = common::random_instance(20, 3, 15, 0.3, 0.5, 60 + seed);
        let mats = DataMatrixSet::build(&g).unwrap();
        let obj = Objective::new(&mats);
        let out = solve_rtr(&obj, random_point(20, 3, 5, seed).unwrap(), &RtrConfig::default()).unwrap();
        let costs = out.trace.accepted_costs();
        for w in costs.windows(2) {
            assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
        }
        assert!(out.point.orthonormality_error() <= 1e-10);
    }
}

#[test]
fn preconditioned_solver_reaches_same_cost() {
    let (g, _) = common::random_instance(20, 3, 15, 0.1, 0.2, 77);
    let mats = DataMatrixSet::build(&g).unwrap();
    let cfg = RtrConfig { grad_tol: Some(1e-8), ..Default::default() };
    let plain = solve_rtr(&Objective::new(&mats), random_point(20, 3, 5, 1).unwrap(), &cfg).unwrap();
    let pre = solve_rtr(&Objective::new(&mats).with_block_jacobi(), random_point(20, 3, 5, 1).unwrap(), &cfg).unwrap();
    assert!((plain.cost - pre.cost).abs() <= 1e-6 * plain.cost.max(1.0));
}

#[test]
fn critical_point_stops_immediately() {
    let mats = instance(4);
    let obj = Objective::new(&mats);
    let tight = RtrConfig { grad_tol: Some(1e-10), ..Default::default() };
    let sol = solve_rtr(&obj, random_point(6, 2, 3, 2).unwrap(), &tight).unwrap();
    let loose = RtrConfig { grad_tol: Some(1e-6), ..Default::default() };
    let again = solve_rtr(&obj, sol.point, &loose).unwrap();
    assert_eq!(again.status, RtrStatus::GradientTolerance);
    assert!(again.trace.records.iter().filter(|r| r.accepted).count() <= 1);
}
