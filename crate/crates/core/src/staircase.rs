//! The Riemannian Staircase, its optimality certificate, and saddle escape.
//!
//! At a first-order critical `Y` with multipliers `Λ_i = sym(Y_iᵀ (YQ̃)_i)`,
//! the certificate matrix is `S = Q̃ − BlockDiag(Λ)`. If `S ⪰ 0` then `YᵀY`
//! solves the semidefinite relaxation; since `tr(Λ) = F(Y)`, the matrix
//! `Λ + λ_min(S) I` is always dual feasible, so `F(Y) + dn·min(0, λ_min(S))`
//! is a lower bound on the relaxation (and hence on the maximum-likelihood
//! cost) at any `Y`.

use std::time::Instant;

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data_matrices::DataMatrixSet;
use crate::error::{Error, Result};
use crate::lanczos::{largest_eigenpair, LanczosConfig};
use crate::objective::Objective;
use crate::rounding::{round_solution, Rounded};
use crate::rtr::{solve_rtr, RtrConfig, RtrStatus, SolveTrace};
use crate::stiefel::{retract, StiefelPoint};

#[derive(Clone, Debug, PartialEq)]
pub struct StaircaseConfig {
    /// Initial rank; `None` means 5 for d = 3 and 4 for d = 2.
    pub r0: Option<usize>,
    /// Maximum rank; `None` means `d + 6`.
    pub r_max: Option<usize>,
    /// Absolute eigenvalue tolerance; `None` means `eig_tol_rel` times the
    /// mean diagonal of the cost matrix.
    pub eig_tol: Option<f64>,
    pub eig_tol_rel: f64,
    /// Relative duality-gap tolerance.
    pub gap_tol: f64,
    /// `Y` is rank deficient when `σ_min ≤ rank_tol · σ_max`.
    pub rank_tol: f64,
    pub lanczos: LanczosConfig,
    /// Step halvings allowed in the escape line search.
    pub max_halvings: usize,
}

impl Default for StaircaseConfig {
    fn default() -> Self {
        StaircaseConfig {
            r0: None,
            r_max: None,
            eig_tol: None,
            eig_tol_rel: 1e-5,
            gap_tol: 1e-6,
            rank_tol: 1e-6,
            lanczos: LanczosConfig::default(),
            max_halvings: 30,
        }
    }
}

impl StaircaseConfig {
    /// Resolved `(r0, r_max)` for dimension `d` and `n` poses.
    pub fn ranks(&self, d: usize, n: usize) -> Result<(usize, usize)> {
        let default_r0 = if d == 2 { 4 } else { 5 };
        let r_max = self.r_max.unwrap_or(d + 6).min((d * n).max(d + 1));
        let r0 = self.r0.unwrap_or(default_r0.min(r_max));
        if r0 <= d || r0 > r_max {
            return Err(Error::Config(format!(
                "staircase ranks must satisfy d < r0 <= r_max (d {d}, r0 {r0}, r_max {r_max})"
            )));
        }
        Ok((r0, r_max))
    }

    pub fn eig_tol_for(&self, mats: &DataMatrixSet) -> f64 {
        self.eig_tol.unwrap_or(self.eig_tol_rel * mats.diagonal_scale())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gap_tol > 0.0 && self.rank_tol > 0.0 && self.eig_tol_rel > 0.0) {
            return Err(Error::Config("staircase tolerances must be positive".into()));
        }
        if let Some(t) = self.eig_tol {
            if !(t > 0.0) {
                return Err(Error::Config("eig_tol must be positive".into()));
            }
        }
        self.lanczos.validate()
    }
}

/// Evidence of (or against) global optimality of a rounded estimate.
#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    /// Minimum eigenvalue of `S(Y)`.
    pub lambda_min: f64,
    #[serde(skip)]
    pub eigvec: DVector<f64>,
    /// `F(Y) = tr(Q̃ YᵀY)`.
    pub sdp_value: f64,
    /// Cost of the rounded rotations with optimal translations.
    pub rounded_value: f64,
    /// `(rounded_value − sdp_value) / max(1, |sdp_value|)`.
    pub rel_gap: f64,
    /// Dual lower bound `F(Y) + dn·min(0, λ_min)`. Staircase results report
    /// the largest bound over all levels.
    pub lower_bound: f64,
    #[serde(rename = "certified")]
    pub is_certified: bool,
    pub grad_norm: f64,
    pub eig_tol: f64,
    pub rank: usize,
    pub rank_deficient: bool,
    pub eig_converged: bool,
}

/// `S v` for a dn-vector `v`, given `Λ` from the objective cache.
pub fn certificate_matrix_apply(mats: &DataMatrixSet, lambda: &[DMatrix<f64>], v: &DVector<f64>) -> DVector<f64> {
    let d = mats.dim();
    let row = DMatrix::from_row_slice(1, v.len(), v.as_slice());
    let mut out = DVector::from_column_slice(mats.apply_q_unchecked(&row).as_slice());
    for (i, l) in lambda.iter().enumerate() {
        let blk = l * v.rows(d * i, d);
        let mut seg = out.rows_mut(d * i, d);
        seg -= blk;
    }
    out
}

#[derive(Clone, Debug)]
pub struct MinEig {
    pub value: f64,
    pub vector: DVector<f64>,
    pub converged: bool,
    pub matvecs: usize,
}

/// Minimum eigenpair of `S(Y)` via Lanczos on `σI − S`, with `σ` an upper
/// bound on `λ_max(S)`.
pub fn min_eig(obj: &Objective<'_>, y: &StiefelPoint, cfg: &LanczosConfig) -> Result<MinEig> {
    let mats = obj.data();
    let lambda = obj.multipliers(y);
    let lam_norm = lambda
        .iter()
        .map(crate::data_matrices::block_norm_inf)
        .fold(0.0, f64::max);
    let sigma = mats.spectral_bound() + lam_norm;
    let op = |v: &DVector<f64>| v * sigma - certificate_matrix_apply(mats, &lambda, v);
    let pair = largest_eigenpair(mats.size(), op, sigma, cfg)?;
    if !pair.converged {
        warn!("min_eig: Lanczos stopped with residual {:.3e}", pair.residual);
    }
    Ok(MinEig {
        value: sigma - pair.value,
        vector: pair.vector,
        converged: pair.converged,
        matvecs: pair.matvecs,
    })
}

fn numerical_rank(y: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = y.singular_values();
    let max = sv.max();
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Certifies `y` (rounding included). `grad_norm` and `rank` describe `y`.
pub fn certify_point(obj: &Objective<'_>, y: &StiefelPoint, cfg: &StaircaseConfig) -> Result<(Certificate, Rounded, MinEig)> {
    cfg.validate()?;
    let mats = obj.data();
    let eig_tol = cfg.eig_tol_for(mats);
    let sdp_value = obj.cost(y);
    let grad_norm = obj.riemannian_gradient(y).norm();
    let eig = min_eig(obj, y, &cfg.lanczos)?;
    let rounded = round_solution(y, Some(mats));
    let rounded_value = mats.apply_q_unchecked(&rounded.rotations).dot(&rounded.rotations);
    let rel_gap = (rounded_value - sdp_value) / sdp_value.abs().max(1.0);
    let is_certified = eig.converged && eig.value >= -eig_tol && rel_gap <= cfg.gap_tol;
    let rank = y.rank();
    let cert = Certificate {
        lambda_min: eig.value,
        eigvec: eig.vector.clone(),
        sdp_value,
        rounded_value,
        rel_gap,
        lower_bound: sdp_value + mats.size() as f64 * eig.value.min(0.0),
        is_certified,
        grad_norm,
        eig_tol,
        rank,
        rank_deficient: numerical_rank(y.matrix(), cfg.rank_tol) < rank,
        eig_converged: eig.converged,
    };
    Ok((cert, rounded, eig))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EscapeStatus {
    /// Cost decreased and the gradient is above tolerance.
    Escaped,
    /// Cost decreased, but the gradient stayed below tolerance at every
    /// trial step.
    SmallGradient,
    /// No step decreased the cost.
    NoDecrease,
}

/// Lifts `y` to rank `r + 1` and steps along the negative-curvature direction
/// `eigvec` placed in the new row, halving the step until the cost strictly
/// decreases (preferring a point whose gradient exceeds `grad_tol`).
pub fn lift_and_escape(
    obj: &Objective<'_>,
    y: &StiefelPoint,
    eigvec: &DVector<f64>,
    grad_tol: f64,
    max_halvings: usize,
) -> Result<(StiefelPoint, EscapeStatus)> {
    let lifted = y.lift();
    let f0 = obj.cost(&lifted);
    let r = lifted.rank();
    let mut dir = DMatrix::zeros(r, eigvec.len());
    let unit = eigvec / eigvec.norm();
    dir.row_mut(r - 1).copy_from(&unit.transpose());

    let mut t = lifted.matrix().norm();
    let mut fallback = None;
    for _ in 0..=max_halvings {
        if let Ok(cand) = retract(&lifted, &(&dir * t)) {
            let f = obj.cost(&cand);
            if f < f0 {
                if obj.riemannian_gradient(&cand).norm() > grad_tol {
                    debug!("escape: step {t:.3e}, cost {f0:.6e} -> {f:.6e}");
                    return Ok((cand, EscapeStatus::Escaped));
                }
                if fallback.is_none() {
                    fallback = Some(cand);
                }
            }
        }
        t *= 0.5;
    }
    Ok(match fallback {
        Some(p) => (p, EscapeStatus::SmallGradient),
        None => (lifted, EscapeStatus::NoDecrease),
    })
}

/// Summary of one staircase level.
#[derive(Clone, Debug, Serialize)]
pub struct LevelRecord {
    pub rank: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub rtr_status: RtrStatus,
    pub rtr_iterations: usize,
    pub lambda_min: f64,
    pub eig_converged: bool,
    pub eig_matvecs: usize,
    pub rounded_value: f64,
    pub certified: bool,
    pub rank_deficient: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub escape: Option<EscapeStatus>,
    /// Optimization time at this level, including any escape step.
    pub solve_time_s: f64,
    pub certify_time_s: f64,
    #[serde(skip)]
    pub trace: SolveTrace,
}

#[derive(Clone, Debug)]
pub struct StaircaseOutput {
    pub point: StiefelPoint,
    pub certificate: Certificate,
    pub rounded: Rounded,
    pub levels: Vec<LevelRecord>,
}

/// Solves at rank `r0`, certifies, and climbs one rank per failed
/// certificate along the escape direction, until certified, `S(Y) ⪰ 0`
/// (relaxation solved but not exact), the escape fails, or `r_max` is
/// reached. Returns the level with the lowest rounded cost.
pub fn riemannian_staircase(
    obj: &Objective<'_>,
    y0: StiefelPoint,
    rtr_cfg: &RtrConfig,
    cfg: &StaircaseConfig,
) -> Result<StaircaseOutput> {
    cfg.validate()?;
    rtr_cfg.validate()?;
    let mats = obj.data();
    let (_, r_max) = cfg.ranks(mats.dim(), mats.num_poses())?;
    if y0.rank() > r_max {
        return Err(Error::Config(format!("initial rank {} exceeds r_max {r_max}", y0.rank())));
    }
    let grad_tol = rtr_cfg.grad_tol_for(mats.size());
    let eig_tol = cfg.eig_tol_for(mats);

    let mut y = y0;
    let mut levels = Vec::new();
    let mut best: Option<(StiefelPoint, Certificate, Rounded)> = None;
    let mut lower_bound = f64::NEG_INFINITY;
    loop {
        let start = Instant::now();
        let out = solve_rtr(obj, y, rtr_cfg)?;
        let mut solve_time_s = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let (cert, rounded, eig) = certify_point(obj, &out.point, cfg)?;
        let certify_time_s = start.elapsed().as_secs_f64();
        lower_bound = lower_bound.max(cert.lower_bound);
        info!(
            "staircase r = {}: F = {:.9e}, |grad| = {:.2e}, lambda_min = {:.3e}, gap = {:.2e}",
            out.point.rank(),
            cert.sdp_value,
            cert.grad_norm,
            cert.lambda_min,
            cert.rel_gap
        );
        let mut record = LevelRecord {
            rank: out.point.rank(),
            cost: out.cost,
            grad_norm: out.grad_norm,
            rtr_status: out.status,
            rtr_iterations: out.trace.records.len(),
            lambda_min: cert.lambda_min,
            eig_converged: cert.eig_converged,
            eig_matvecs: eig.matvecs,
            rounded_value: cert.rounded_value,
            certified: cert.is_certified,
            rank_deficient: cert.rank_deficient,
            escape: None,
            solve_time_s: 0.0,
            certify_time_s,
            trace: out.trace,
        };

        let improves = best.as_ref().is_none_or(|(_, c, _)| {
            cert.is_certified && !c.is_certified || cert.rounded_value < c.rounded_value && !c.is_certified
        });
        let stop = cert.is_certified
            || (cert.eig_converged && cert.lambda_min >= -eig_tol)
            || out.point.rank() >= r_max;
        let point = out.point;
        let start = Instant::now();
        let next = if stop {
            None
        } else {
            let (p, status) = lift_and_escape(obj, &point, &eig.vector, grad_tol, cfg.max_halvings)?;
            record.escape = Some(status);
            if status == EscapeStatus::NoDecrease {
                warn!("staircase: escape from rank {} found no descent", point.rank());
                None
            } else {
                Some(p)
            }
        };
        solve_time_s += start.elapsed().as_secs_f64();
        record.solve_time_s = solve_time_s;
        levels.push(record);
        if improves {
            best = Some((point, cert, rounded));
        }
        match next {
            Some(p) => y = p,
            None => break,
        }
    }
    let (point, mut certificate, rounded) = best.expect("at least one level");
    certificate.lower_bound = lower_bound;
    Ok(StaircaseOutput { point, certificate, rounded, levels })
}
