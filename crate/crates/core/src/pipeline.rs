//! End-to-end SE-Sync: build the data matrices, run the Riemannian
//! Staircase, round, recover translations, and report a certificate. Also
//! certification of external candidates and parallel benchmark sweeps.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::warn;
use serde::Serialize;

use crate::data_matrices::{evaluate_full_cost, DataMatrixSet};
use crate::error::{Error, Result};
use crate::experiments::{chordal_initialization, evaluate_metrics, generate_cube, CubeConfig, Metrics};
use crate::geometry::Rotation;
use crate::graph::{MeasurementGraph, PoseEstimate};
use crate::objective::Objective;
use crate::rounding::align_gauge;
use crate::rtr::{write_trace_csv, RtrConfig};
use crate::staircase::{certify_point, riemannian_staircase, Certificate, LevelRecord, StaircaseConfig};
use crate::stiefel::{random_point, StiefelPoint};

/// Version of the serialized result layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    Random,
    Chordal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub init: Initialization,
    pub seed: u64,
    pub rtr: RtrConfig,
    pub staircase: StaircaseConfig,
    /// Block-Jacobi preconditioning of the inner CG solves.
    pub preconditioner: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            init: Initialization::Random,
            seed: 0,
            rtr: RtrConfig::default(),
            staircase: StaircaseConfig::default(),
            preconditioner: false,
        }
    }
}

/// The resolved configuration, as recorded in results.
#[derive(Clone, Debug, Serialize)]
pub struct ConfigEcho {
    pub init: Initialization,
    pub seed: u64,
    pub r0: usize,
    pub r_max: usize,
    pub grad_tol: f64,
    pub rel_func_tol: f64,
    pub max_outer: usize,
    pub eig_tol: f64,
    pub gap_tol: f64,
    pub preconditioner: bool,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Timings {
    pub build: f64,
    pub solve: f64,
    pub certify: f64,
    pub round: f64,
    pub total: f64,
}

/// One pose of the output trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct PoseRecord {
    pub id: i64,
    pub translation: Vec<f64>,
    /// Row-major `d × d` rotation matrix.
    pub rotation: Vec<f64>,
}

fn pose_records(est: &PoseEstimate, ids: &[i64]) -> Vec<PoseRecord> {
    est.rotations
        .iter()
        .zip(&est.translations)
        .zip(ids)
        .map(|((r, t), &id)| PoseRecord {
            id,
            translation: t.iter().copied().collect(),
            rotation: r.matrix().transpose().iter().copied().collect(),
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveResult {
    pub schema_version: u32,
    pub num_poses: usize,
    pub num_measurements: usize,
    pub dim: usize,
    /// Full maximum-likelihood cost of the returned estimate.
    pub objective_value: f64,
    pub certificate: Certificate,
    pub levels: Vec<LevelRecord>,
    pub timings: Timings,
    pub config: ConfigEcho,
    pub seed: u64,
    pub poses: Vec<PoseRecord>,
    #[serde(skip)]
    pub estimate: PoseEstimate,
}

impl SolveResult {
    pub fn is_certified(&self) -> bool {
        self.certificate.is_certified
    }

    /// Writes every staircase level's optimizer trace as one CSV table.
    pub fn write_trace<W: Write>(&self, w: W) -> Result<()> {
        write_trace_csv(w, self.levels.iter().map(|l| (Some(l.rank), &l.trace)))
    }
}

/// Staircase solution together with the result record.
#[derive(Clone, Debug)]
pub struct SolveOutput {
    pub result: SolveResult,
    pub point: StiefelPoint,
}

fn initial_point(mats: &DataMatrixSet, cfg: &SolverConfig, r0: usize) -> Result<StiefelPoint> {
    match cfg.init {
        Initialization::Random => random_point(mats.num_poses(), mats.dim(), r0, cfg.seed),
        Initialization::Chordal => chordal_initialization(mats, r0),
    }
}

/// Solves the instance with already-built data matrices.
pub fn solve_with_matrices(g: &MeasurementGraph, mats: &DataMatrixSet, cfg: &SolverConfig) -> Result<SolveOutput> {
    let start = Instant::now();
    let (r0, r_max) = cfg.staircase.ranks(g.dim(), g.num_poses())?;
    let mut obj = Objective::new(mats);
    if cfg.preconditioner {
        obj = obj.with_block_jacobi();
    }
    let y0 = initial_point(mats, cfg, r0)?;
    let stair = riemannian_staircase(&obj, y0, &cfg.rtr, &cfg.staircase)?;

    let t_round = Instant::now();
    let translations = mats.recover_translations(&stair.rounded.rotations)?;
    let estimate = PoseEstimate::from_blocks(&stair.rounded.rotations, &translations)?;
    let objective_value = evaluate_full_cost(g, &estimate)?;
    let round = t_round.elapsed().as_secs_f64();

    let solve: f64 = stair.levels.iter().map(|l| l.solve_time_s).sum();
    let certify: f64 = stair.levels.iter().map(|l| l.certify_time_s).sum();
    let timings = Timings { build: 0.0, solve, certify, round, total: start.elapsed().as_secs_f64() };
    let config = ConfigEcho {
        init: cfg.init,
        seed: cfg.seed,
        r0,
        r_max,
        grad_tol: cfg.rtr.grad_tol_for(mats.size()),
        rel_func_tol: cfg.rtr.rel_func_tol,
        max_outer: cfg.rtr.max_outer,
        eig_tol: stair.certificate.eig_tol,
        gap_tol: cfg.staircase.gap_tol,
        preconditioner: cfg.preconditioner,
    };
    let result = SolveResult {
        schema_version: SCHEMA_VERSION,
        num_poses: g.num_poses(),
        num_measurements: g.num_measurements(),
        dim: g.dim(),
        objective_value,
        certificate: stair.certificate,
        levels: stair.levels,
        timings,
        config,
        seed: cfg.seed,
        poses: pose_records(&estimate, g.original_ids()),
        estimate,
    };
    Ok(SolveOutput { result, point: stair.point })
}

/// Runs the full pipeline on `g`.
pub fn solve(g: &MeasurementGraph, cfg: &SolverConfig) -> Result<SolveOutput> {
    let start = Instant::now();
    let mats = DataMatrixSet::build(g)?;
    let build = start.elapsed().as_secs_f64();
    let mut out = solve_with_matrices(g, &mats, cfg)?;
    out.result.timings.build = build;
    out.result.timings.total += build;
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct CertifyReport {
    pub schema_version: u32,
    pub certificate: Certificate,
    /// Full cost of the candidate with its own translations.
    pub candidate_value: f64,
    /// Some candidate rotation was not in SO(d) and was projected.
    pub projected: bool,
}

/// Certifies an externally supplied estimate: its rotations are embedded at
/// rank `d`, and the certificate is evaluated there. Non-rotation blocks are
/// projected to SO(d) with a warning.
pub fn certify_estimate(g: &MeasurementGraph, candidate: &PoseEstimate, cfg: &StaircaseConfig) -> Result<CertifyReport> {
    if candidate.len() != g.num_poses() || candidate.dim() != g.dim() {
        return Err(Error::Dimension(format!(
            "candidate has {} poses of dimension {}, graph has {} of dimension {}",
            candidate.len(),
            candidate.dim(),
            g.num_poses(),
            g.dim()
        )));
    }
    let mut projected = false;
    let rotations = candidate
        .rotations
        .iter()
        .map(|r| match Rotation::from_matrix(r.matrix().clone(), 1e-8) {
            Ok(ok) => ok,
            Err(_) => {
                projected = true;
                Rotation::nearest(r.matrix())
            }
        })
        .collect();
    if projected {
        warn!("candidate contains non-rotation blocks; projected to SO(d)");
    }
    let feasible = PoseEstimate::new(rotations, candidate.translations.clone())?;
    let mats = DataMatrixSet::build(g)?;
    let obj = Objective::new(&mats);
    let y = StiefelPoint::from_rotations(&feasible.rotation_blocks(), g.dim())?;
    let (certificate, _, _) = certify_point(&obj, &y, cfg)?;
    Ok(CertifyReport {
        schema_version: SCHEMA_VERSION,
        certificate,
        candidate_value: evaluate_full_cost(g, &feasible)?,
        projected,
    })
}

/// One benchmark trial: a generated instance and the solver settings.
#[derive(Clone, Debug)]
pub struct TrialSpec {
    pub index: usize,
    /// Name and value of the swept parameter, for reporting.
    pub param: String,
    pub value: f64,
    pub cube: CubeConfig,
    pub solver: SolverConfig,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialRow {
    pub trial: usize,
    pub param: String,
    pub value: f64,
    pub s: usize,
    pub dim: usize,
    pub p_lc: f64,
    pub sigma_r: f64,
    pub sigma_t: f64,
    pub seed: u64,
    pub num_poses: usize,
    pub num_measurements: usize,
    pub objective: f64,
    pub sdp_value: f64,
    pub lower_bound: f64,
    pub rel_gap: f64,
    pub lambda_min: f64,
    pub certified: bool,
    pub levels: usize,
    pub final_rank: usize,
    pub rotation_error_mean: f64,
    pub translation_rmse: f64,
    pub time_s: f64,
    pub error: String,
}

fn failed_row(spec: &TrialSpec, err: &Error, time_s: f64) -> TrialRow {
    TrialRow {
        trial: spec.index,
        param: spec.param.clone(),
        value: spec.value,
        s: spec.cube.s,
        dim: spec.cube.dim,
        p_lc: spec.cube.p_lc,
        sigma_r: spec.cube.sigma_r,
        sigma_t: spec.cube.sigma_t,
        seed: spec.cube.seed,
        num_poses: 0,
        num_measurements: 0,
        objective: f64::NAN,
        sdp_value: f64::NAN,
        lower_bound: f64::NAN,
        rel_gap: f64::NAN,
        lambda_min: f64::NAN,
        certified: false,
        levels: 0,
        final_rank: 0,
        rotation_error_mean: f64::NAN,
        translation_rmse: f64::NAN,
        time_s,
        error: err.to_string(),
    }
}

/// Generates and solves one instance, evaluating errors against the
/// gauge-aligned ground truth. Failures are reported in the row.
pub fn run_trial(spec: &TrialSpec) -> TrialRow {
    let start = Instant::now();
    let outcome = (|| -> Result<(MeasurementGraph, SolveOutput, Metrics)> {
        let (g, truth) = generate_cube(&spec.cube)?;
        let out = solve(&g, &spec.solver)?;
        let aligned = align_gauge(&out.result.estimate, &truth);
        let metrics = evaluate_metrics(&g, &aligned, &truth)?;
        Ok((g, out, metrics))
    })();
    let time_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok((g, out, metrics)) => {
            let c = &out.result.certificate;
            TrialRow {
                trial: spec.index,
                param: spec.param.clone(),
                value: spec.value,
                s: spec.cube.s,
                dim: spec.cube.dim,
                p_lc: spec.cube.p_lc,
                sigma_r: spec.cube.sigma_r,
                sigma_t: spec.cube.sigma_t,
                seed: spec.cube.seed,
                num_poses: g.num_poses(),
                num_measurements: g.num_measurements(),
                objective: out.result.objective_value,
                sdp_value: c.sdp_value,
                lower_bound: c.lower_bound,
                rel_gap: c.rel_gap,
                lambda_min: c.lambda_min,
                certified: c.is_certified,
                levels: out.result.levels.len(),
                final_rank: out.point.rank(),
                rotation_error_mean: metrics.rotation_error_mean,
                translation_rmse: metrics.translation_rmse,
                time_s,
                error: String::new(),
            }
        }
        Err(e) => failed_row(spec, &e, time_s),
    }
}

/// Runs trials on `jobs` worker threads. Rows come back in trial order.
pub fn run_benchmark(specs: &[TrialSpec], jobs: usize) -> Vec<TrialRow> {
    let next = AtomicUsize::new(0);
    let rows = Mutex::new(Vec::with_capacity(specs.len()));
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(specs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(spec) = specs.get(i) else { break };
                let row = run_trial(spec);
                rows.lock().expect("benchmark worker panicked").push(row);
            });
        }
    });
    let mut rows = rows.into_inner().expect("benchmark worker panicked");
    rows.sort_by_key(|r| r.trial);
    rows
}

/// Aggregate statistics of the trials sharing one parameter value.
#[derive(Clone, Debug, Serialize)]
pub struct SweepSummary {
    pub param: String,
    pub value: f64,
    pub trials: usize,
    pub failures: usize,
    pub certified: usize,
    pub certification_rate: f64,
    pub mean_objective: f64,
    pub mean_time_s: f64,
}

/// Groups rows by parameter value (in first-appearance order).
pub fn summarize(rows: &[TrialRow]) -> Vec<SweepSummary> {
    let mut groups: Vec<(String, f64, Vec<&TrialRow>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|(p, v, _)| *p == r.param && *v == r.value) {
            Some(g) => g.2.push(r),
            None => groups.push((r.param.clone(), r.value, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(param, value, rs)| {
            let ok: Vec<_> = rs.iter().filter(|r| r.error.is_empty()).collect();
            let certified = ok.iter().filter(|r| r.certified).count();
            let mean = |f: &dyn Fn(&TrialRow) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            SweepSummary {
                trials: rs.len(),
                failures: rs.len() - ok.len(),
                certified,
                certification_rate: certified as f64 / rs.len() as f64,
                mean_objective: mean(&|r| r.objective),
                mean_time_s: mean(&|r| r.time_s),
                param,
                value,
            }
        })
        .collect()
}

/// Writes benchmark rows as CSV with a header.
pub fn write_rows_csv<W: Write>(w: W, rows: &[TrialRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
