//! Truncated-Newton Riemannian trust-region method.
//!
//! The outer loop is the classic trust-region acceptance/radius scheme; each
//! subproblem is solved approximately by Steihaug–Toint truncated conjugate
//! gradients in the tangent space at the current iterate, stopping on negative
//! curvature, on the trust-region boundary, or once the residual satisfies
//! `‖r‖ ≤ ‖g‖ min(‖g‖^θ, κ)`.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::stiefel::{inner, retract, StiefelPoint, TangentVector};

#[derive(Clone, Debug, PartialEq)]
pub struct RtrConfig {
    /// Gradient-norm stopping tolerance; `None` means `1e-6 √(dn)`.
    pub grad_tol: Option<f64>,
    /// Stop once an accepted step decreases the cost by less than this
    /// fraction.
    pub rel_func_tol: f64,
    pub max_outer: usize,
    /// Initial radius; `None` means `‖Y₀‖ / 8`.
    pub delta0: Option<f64>,
    /// Radius cap; `None` means `‖Y₀‖`.
    pub delta_max: Option<f64>,
    pub eta1: f64,
    pub eta2: f64,
    pub tcg_theta: f64,
    pub tcg_kappa: f64,
    /// Inner iteration cap; `None` means `dn`.
    pub max_inner: Option<usize>,
    /// Regularization of the ratio denominator, relative to `|F|`.
    pub rho_eps: f64,
}

impl Default for RtrConfig {
    fn default() -> Self {
        RtrConfig {
            grad_tol: None,
            rel_func_tol: 1e-9,
            max_outer: 300,
            delta0: None,
            delta_max: None,
            eta1: 0.05,
            eta2: 0.7,
            tcg_theta: 1.0,
            tcg_kappa: 0.1,
            max_inner: None,
            rho_eps: 1e3 * f64::EPSILON,
        }
    }
}

impl RtrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.eta1 && self.eta1 < self.eta2 && self.eta2 < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < eta1 < eta2 < 1, got eta1 = {}, eta2 = {}",
                self.eta1, self.eta2
            )));
        }
        let positive = |x: Option<f64>| x.is_none_or(|v| v > 0.0);
        if !(positive(self.grad_tol)
            && positive(self.delta0)
            && positive(self.delta_max)
            && self.rel_func_tol >= 0.0
            && self.tcg_kappa > 0.0
            && self.tcg_theta >= 0.0)
        {
            return Err(Error::Config("tolerances and radii must be positive".into()));
        }
        Ok(())
    }

    /// Gradient tolerance for a problem with `dn` columns.
    pub fn grad_tol_for(&self, dn: usize) -> f64 {
        self.grad_tol.unwrap_or(1e-6 * (dn as f64).sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TcgStop {
    NegativeCurvature,
    Boundary,
    InnerTol,
    MaxInner,
}

#[derive(Clone, Debug)]
pub struct TcgResult {
    pub step: TangentVector,
    /// `Hess F(Y)[step]`, accumulated alongside the step.
    pub hess_step: TangentVector,
    pub stop: TcgStop,
    pub iterations: usize,
}

impl TcgResult {
    /// Decrease `−(⟨g, η⟩ + ½⟨η, Hη⟩)` of the quadratic model.
    pub fn model_decrease(&self, grad: &TangentVector) -> f64 {
        -(inner(grad, &self.step) + 0.5 * inner(&self.step, &self.hess_step))
    }
}

/// Steihaug–Toint truncated CG on the trust-region subproblem
/// `min ⟨g, η⟩ + ½⟨η, Hess F(Y)[η]⟩, ‖η‖ ≤ Δ`. With a preconditioner the
/// radius is measured in the preconditioner's metric.
pub fn truncated_cg(
    obj: &Objective<'_>,
    y: &StiefelPoint,
    grad: &TangentVector,
    delta: f64,
    cfg: &RtrConfig,
) -> TcgResult {
    let max_inner = cfg.max_inner.unwrap_or(y.matrix().ncols()).max(1);
    let mut eta = TangentVector::zeros(grad.nrows(), grad.ncols());
    let mut h_eta = eta.clone();
    let mut r = grad.clone();
    let r0 = r.norm();
    if r0 == 0.0 {
        return TcgResult { step: eta, hess_step: h_eta, stop: TcgStop::InnerTol, iterations: 0 };
    }
    let target = r0 * r0.powf(cfg.tcg_theta).min(cfg.tcg_kappa);

    let mut z = obj.precondition(y, &r);
    let mut z_r = inner(&z, &r);
    let mut d_pd = z_r;
    let mut e_pe = 0.0;
    let mut e_pd = 0.0;
    let mut dir = -&z;
    let delta2 = delta * delta;

    for j in 0..max_inner {
        let h_dir = obj.hessian_vector_product(y, &dir);
        let d_hd = inner(&dir, &h_dir);
        let alpha = z_r / d_hd;
        let e_pe_new = e_pe + 2.0 * alpha * e_pd + alpha * alpha * d_pd;

        if d_hd <= 0.0 || e_pe_new >= delta2 || !alpha.is_finite() {
            // Follow the direction to the boundary.
            let tau = (-e_pd + (e_pd * e_pd + d_pd * (delta2 - e_pe)).max(0.0).sqrt()) / d_pd;
            eta += &dir * tau;
            h_eta += &h_dir * tau;
            let stop = if d_hd <= 0.0 { TcgStop::NegativeCurvature } else { TcgStop::Boundary };
            return TcgResult { step: eta, hess_step: h_eta, stop, iterations: j + 1 };
        }

        e_pe = e_pe_new;
        eta += &dir * alpha;
        h_eta += &h_dir * alpha;
        r += &h_dir * alpha;

        if r.norm() <= target {
            return TcgResult { step: eta, hess_step: h_eta, stop: TcgStop::InnerTol, iterations: j + 1 };
        }

        z = obj.precondition(y, &r);
        let z_r_old = z_r;
        z_r = inner(&z, &r);
        let beta = z_r / z_r_old;
        dir = &dir * beta - &z;
        e_pd = beta * (e_pd + alpha * d_pd);
        d_pd = z_r + beta * beta * d_pd;
    }
    TcgResult { step: eta, hess_step: h_eta, stop: TcgStop::MaxInner, iterations: max_inner }
}

/// Model decrease at the Cauchy point (unpreconditioned), the baseline any
/// accepted truncated-CG step must match.
pub fn cauchy_decrease(obj: &Objective<'_>, y: &StiefelPoint, grad: &TangentVector, delta: f64) -> f64 {
    let gn = grad.norm();
    if gn == 0.0 {
        return 0.0;
    }
    let hg = obj.hessian_vector_product(y, grad);
    let ghg = inner(grad, &hg);
    let t_boundary = delta / gn;
    let t = if ghg <= 0.0 { t_boundary } else { (gn * gn / ghg).min(t_boundary) };
    t * gn * gn - 0.5 * t * t * ghg
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RtrStatus {
    GradientTolerance,
    RelativeDecrease,
    MaxIterations,
    /// The radius collapsed below round-off without an acceptable step.
    RadiusCollapsed,
}

/// One outer iteration.
#[derive(Clone, Debug, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub delta: f64,
    pub rho: f64,
    pub inner_iters: usize,
    pub time_s: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, Default)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
}

impl SolveTrace {
    /// Costs at the start of each iteration that followed an accepted step,
    /// plus the initial cost.
    pub fn accepted_costs(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut prev_accepted = true;
        for r in &self.records {
            if prev_accepted {
                out.push(r.cost);
            }
            prev_accepted = r.accepted;
        }
        out
    }

    /// Writes `iteration,cost,gradnorm,delta,rho,inner_iters,time_s`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_trace_csv(w, std::iter::once((None, self)))
    }
}

#[derive(Serialize)]
struct CsvRow {
    #[serde(skip_serializing_if = "Option::is_none")]
    level: Option<usize>,
    iteration: usize,
    cost: f64,
    gradnorm: f64,
    delta: f64,
    rho: f64,
    inner_iters: usize,
    time_s: f64,
}

/// Writes one or more traces, optionally tagged with a staircase rank.
pub(crate) fn write_trace_csv<'a, W: Write>(
    w: W,
    traces: impl IntoIterator<Item = (Option<usize>, &'a SolveTrace)>,
) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for (level, trace) in traces {
        for r in &trace.records {
            wr.serialize(CsvRow {
                level,
                iteration: r.iteration,
                cost: r.cost,
                gradnorm: r.grad_norm,
                delta: r.delta,
                rho: r.rho,
                inner_iters: r.inner_iters,
                time_s: r.time_s,
            })?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct RtrOutput {
    pub point: StiefelPoint,
    pub cost: f64,
    pub grad_norm: f64,
    pub status: RtrStatus,
    pub trace: SolveTrace,
}

/// Runs the trust-region method from `y0` until the gradient norm or relative
/// decrease tolerance is met or the iteration cap is reached.
pub fn solve_rtr(obj: &Objective<'_>, y0: StiefelPoint, cfg: &RtrConfig) -> Result<RtrOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let dn = y0.matrix().ncols();
    let grad_tol = cfg.grad_tol_for(dn);
    let y0_norm = y0.matrix().norm();
    let delta_max = cfg.delta_max.unwrap_or(y0_norm);
    let mut delta = cfg.delta0.unwrap_or(y0_norm / 8.0).min(delta_max);
    let delta_floor = delta * 1e-14;

    let mut y = y0;
    let mut cost = obj.cost(&y);
    let mut grad = obj.riemannian_gradient(&y);
    let mut trace = SolveTrace::default();
    let mut status = RtrStatus::MaxIterations;

    for k in 0..cfg.max_outer {
        let grad_norm = grad.norm();
        if grad_norm <= grad_tol {
            status = RtrStatus::GradientTolerance;
            break;
        }
        if delta < delta_floor {
            status = RtrStatus::RadiusCollapsed;
            break;
        }
        let tcg = truncated_cg(obj, &y, &grad, delta, cfg);
        let model_dec = tcg.model_decrease(&grad);
        let (candidate, new_cost) = match retract(&y, &tcg.step) {
            Ok(c) => {
                let f = obj.cost(&c);
                (Some(c), f)
            }
            Err(_) => (None, f64::INFINITY),
        };
        let denom = model_dec.max(cfg.rho_eps * cost.abs());
        let rho = if denom > 0.0 { (cost - new_cost) / denom } else { f64::NEG_INFINITY };

        let hit_boundary = matches!(tcg.stop, TcgStop::Boundary | TcgStop::NegativeCurvature);
        if rho < cfg.eta1 || !rho.is_finite() {
            delta *= 0.25;
        } else if rho > cfg.eta2 && hit_boundary {
            delta = (2.0 * delta).min(delta_max);
        }
        let accepted = rho >= cfg.eta1 && new_cost < cost && candidate.is_some();

        trace.records.push(TraceRecord {
            iteration: k,
            cost,
            grad_norm,
            delta,
            rho,
            inner_iters: tcg.iterations,
            time_s: start.elapsed().as_secs_f64(),
            accepted,
        });

        if accepted {
            let rel = (cost - new_cost) / cost.abs().max(f64::MIN_POSITIVE);
            y = candidate.unwrap();
            cost = new_cost;
            grad = obj.riemannian_gradient(&y);
            if rel < cfg.rel_func_tol {
                status = RtrStatus::RelativeDecrease;
                break;
            }
        }
    }

    let grad_norm = grad.norm();
    if status == RtrStatus::MaxIterations && grad_norm <= grad_tol {
        status = RtrStatus::GradientTolerance;
    }
    Ok(RtrOutput { point: y, cost, grad_norm, status, trace })
}
