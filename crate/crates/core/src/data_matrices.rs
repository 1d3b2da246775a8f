//! Sparse data matrices of an SE(d) synchronization instance and the implicit
//! operator `Y ↦ Y Q̃` for the translation-eliminated cost matrix
//!
//! ```text
//! Q̃ = L(G^ρ) + Tᵀ Ω^½ Π Ω^½ T,
//! Π = I − Ω^½ Āᵀ (Ā Ω Āᵀ)⁻¹ Ā Ω^½,
//! ```
//!
//! where `Ā` is the incidence matrix of the measurement graph with node 0's
//! row removed. `Ā Ω Āᵀ` is the reduced translational Laplacian, so a single
//! sparse Cholesky factor serves both the projection `Π` and translation
//! recovery.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::{MeasurementGraph, PoseEstimate};
use crate::sparse::{CscMatrix, SparseCholesky};

#[derive(Clone, Debug)]
pub struct DataMatrixSet {
    d: usize,
    n: usize,
    m: usize,
    tails: Vec<usize>,
    heads: Vec<usize>,
    /// Translation measurement of each edge, stacked as the columns of a
    /// `d × m` matrix.
    t_meas: DMatrix<f64>,
    /// Translational Laplacian `L(W^τ)`, `n × n`.
    pub l_tau: CscMatrix,
    /// Rotational connection Laplacian `L(G^ρ)`, `dn × dn`.
    pub l_rho: CscMatrix,
    /// Cross-term matrix `V = A Ω T`, `n × dn`.
    pub v: CscMatrix,
    /// `m × dn` matrix whose row `e = (i, j)` holds `−t̃_ijᵀ` in block `i`.
    pub t: CscMatrix,
    /// Diagonal of `Ω` (the translational precisions τ_e).
    pub omega: Vec<f64>,
    /// Reduced incidence matrix `Ā`, `(n−1) × m` (node 0's row dropped).
    pub a_reduced: CscMatrix,
    /// Cholesky factor of `Ā Ω Āᵀ`.
    pub chol: SparseCholesky,
}

impl DataMatrixSet {
    pub fn build(g: &MeasurementGraph) -> Result<Self> {
        build_data_matrices(g)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_poses(&self) -> usize {
        self.n
    }

    pub fn num_measurements(&self) -> usize {
        self.m
    }

    /// Side length `dn` of `Q̃`.
    pub fn size(&self) -> usize {
        self.d * self.n
    }

    /// `Y Q̃` for any `Y` with `dn` columns, computed with sparse products and
    /// two triangular solves per row of `Y`.
    pub fn apply_q(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if y.ncols() != self.size() {
            return Err(Error::Dimension(format!(
                "apply_q expects {} columns, got {}",
                self.size(),
                y.ncols()
            )));
        }
        Ok(self.apply_q_unchecked(y))
    }

    pub(crate) fn apply_q_unchecked(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = self.l_rho.left_mul(y);
        // W = Y Tᵀ Ω  (r × m)
        let mut w = self.t.left_mul_transpose(y);
        scale_columns(&mut w, &self.omega);
        // W ← W Π' where Π' applies the projection in Ω-weighted coordinates.
        let b = self.a_reduced.left_mul_transpose(&w);
        let c = self.chol.solve_rows(&b);
        let mut correction = self.a_reduced.left_mul(&c);
        scale_columns(&mut correction, &self.omega);
        w -= correction;
        out += self.t.left_mul(&w);
        out
    }

    /// Applies the orthogonal projection `Π` to a vector indexed by edges.
    pub fn apply_pi(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.m);
        let sqrt_omega: Vec<f64> = self.omega.iter().map(|x| x.sqrt()).collect();
        let scaled: Vec<f64> = w.iter().zip(&sqrt_omega).map(|(a, s)| a * s).collect();
        let mut b = self.a_reduced.mul_vec(&scaled);
        self.chol.solve_in_place(&mut b);
        let back = self.a_reduced.transpose().mul_vec(&b);
        w.iter()
            .zip(back)
            .zip(&sqrt_omega)
            .map(|((wi, bi), s)| wi - s * bi)
            .collect()
    }

    /// `tr(Q̃ YᵀY)` for any conformal `Y`.
    pub fn quadratic_form(&self, y: &DMatrix<f64>) -> Result<f64> {
        Ok(self.apply_q(y)?.dot(y))
    }

    /// Translations minimizing the full cost for fixed rotations `R`
    /// (`d × dn`), with the gauge fixed by `t_0 = 0`. Returned as the columns
    /// of a `d × n` matrix.
    pub fn recover_translations(&self, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if r.nrows() != self.d || r.ncols() != self.size() {
            return Err(Error::Dimension(format!(
                "rotation block matrix must be {}x{}, got {}x{}",
                self.d,
                self.size(),
                r.nrows(),
                r.ncols()
            )));
        }
        // t L(W^τ) = −R Vᵀ, restricted to nodes 1..n with t_0 = 0.
        let rhs = -self.v.left_mul_transpose(r);
        let reduced = rhs.columns(1, self.n - 1).into_owned();
        let sol = self.chol.solve_rows(&reduced);
        let mut t = DMatrix::zeros(self.d, self.n);
        t.columns_mut(1, self.n - 1).copy_from(&sol);
        Ok(t)
    }

    /// `d × d` diagonal blocks of `Tᵀ Ω T`, i.e. `Σ_{e=(i,·)} τ_e t̃_e t̃_eᵀ`
    /// per node `i`. Since `Π ⪯ I` these bound the translational part of the
    /// diagonal blocks of `Q̃` from above.
    pub fn translational_diagonal_blocks(&self) -> Vec<DMatrix<f64>> {
        let mut blocks = vec![DMatrix::zeros(self.d, self.d); self.n];
        for e in 0..self.m {
            let t = self.t_meas.column(e);
            blocks[self.tails[e]] += (t * t.transpose()) * self.omega[e];
        }
        blocks
    }

    /// Rotational degree `Σ_k κ_ik` of each node (the diagonal of `L(G^ρ)`'s
    /// blocks).
    pub fn rotational_degrees(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.l_rho.get(self.d * i, self.d * i)).collect()
    }

    /// Mean of the diagonal of `L(G^ρ) + Tᵀ Ω T`, an upper bound on the mean
    /// diagonal of `Q̃`. Used to make tolerances scale-free.
    pub fn diagonal_scale(&self) -> f64 {
        let rot: f64 = self.rotational_degrees().iter().sum::<f64>() * self.d as f64;
        let trans: f64 = (0..self.m)
            .map(|e| self.omega[e] * self.t_meas.column(e).norm_squared())
            .sum();
        (rot + trans) / self.size() as f64
    }

    /// Upper bound on the spectral radius of `Q̃`:
    /// `‖L(G^ρ)‖_∞ + max_i ‖(TᵀΩT)_ii‖_∞` (the second term bounds
    /// `λ_max(Tᵀ Ω^½ Π Ω^½ T)` because `Π ⪯ I` and `TᵀΩT` is block diagonal).
    pub fn spectral_bound(&self) -> f64 {
        let trans = self
            .translational_diagonal_blocks()
            .iter()
            .map(block_norm_inf)
            .fold(0.0, f64::max);
        self.l_rho.norm_inf() + trans
    }

    /// Diagonal of the Cholesky factor of the reduced weighted Laplacian, a
    /// diagnostic for the conditioning of the translational solve.
    pub fn cholesky_diagonal(&self) -> Vec<f64> {
        self.chol.l_diagonal()
    }

    /// Writes every matrix in Matrix Market format into `dir`.
    pub fn dump_matrix_market(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let write = |name: &str, m: &CscMatrix| -> Result<()> {
            let f = BufWriter::new(File::create(dir.join(name))?);
            m.write_matrix_market(f)?;
            Ok(())
        };
        write("l_tau.mtx", &self.l_tau)?;
        write("l_rho.mtx", &self.l_rho)?;
        write("v.mtx", &self.v)?;
        write("t.mtx", &self.t)?;
        write("a_reduced.mtx", &self.a_reduced)?;
        write("chol_l.mtx", self.chol.factor_l())?;
        let omega: Vec<_> = self.omega.iter().enumerate().map(|(e, &w)| (e, e, w)).collect();
        write("omega.mtx", &CscMatrix::from_triplets(self.m, self.m, &omega))?;
        let mut f = BufWriter::new(File::create(dir.join("chol_perm.txt"))?);
        for p in self.chol.permutation() {
            writeln!(f, "{}", p + 1)?;
        }
        Ok(())
    }
}

pub(crate) fn block_norm_inf(b: &DMatrix<f64>) -> f64 {
    b.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn scale_columns(m: &mut DMatrix<f64>, s: &[f64]) {
    for (mut c, &w) in m.column_iter_mut().zip(s) {
        c *= w;
    }
}

/// Assembles every sparse matrix of the instance and factors the reduced
/// translational Laplacian.
pub fn build_data_matrices(g: &MeasurementGraph) -> Result<DataMatrixSet> {
    let d = g.dim();
    let n = g.num_poses();
    let m = g.num_measurements();
    let edges = g.edges();

    let mut lt = Vec::with_capacity(4 * m);
    let mut lr = Vec::with_capacity(2 * d * m + 2 * d * d * m);
    let mut vt = Vec::with_capacity(2 * d * m);
    let mut tt = Vec::with_capacity(d * m);
    let mut at = Vec::with_capacity(2 * m);
    let mut t_meas = DMatrix::zeros(d, m);
    let mut omega = Vec::with_capacity(m);
    let mut tails = Vec::with_capacity(m);
    let mut heads = Vec::with_capacity(m);

    for (e, meas) in edges.iter().enumerate() {
        let (i, j) = (meas.tail, meas.head);
        let (tau, kappa) = (meas.tau, meas.kappa);
        tails.push(i);
        heads.push(j);
        omega.push(tau);
        t_meas.set_column(e, &meas.t);

        lt.extend([(i, i, tau), (j, j, tau), (i, j, -tau), (j, i, -tau)]);

        for k in 0..d {
            lr.push((d * i + k, d * i + k, kappa));
            lr.push((d * j + k, d * j + k, kappa));
        }
        let rm = meas.rot.matrix();
        for a in 0..d {
            for b in 0..d {
                // (i, j) block −κ R̃_ij and (j, i) block −κ R̃_ijᵀ.
                lr.push((d * i + a, d * j + b, -kappa * rm[(a, b)]));
                lr.push((d * j + b, d * i + a, -kappa * rm[(a, b)]));
            }
        }

        for k in 0..d {
            let tk = meas.t[k];
            tt.push((e, d * i + k, -tk));
            // V = A Ω T with A_ie = −1, A_je = +1.
            vt.push((i, d * i + k, tau * tk));
            vt.push((j, d * i + k, -tau * tk));
        }

        if i > 0 {
            at.push((i - 1, e, -1.0));
        }
        if j > 0 {
            at.push((j - 1, e, 1.0));
        }
    }

    let l_tau = CscMatrix::from_triplets(n, n, &lt);
    let l_rho = CscMatrix::from_triplets(d * n, d * n, &lr);
    let v = CscMatrix::from_triplets(n, d * n, &vt);
    let t = CscMatrix::from_triplets(m, d * n, &tt);
    let a_reduced = CscMatrix::from_triplets(n - 1, m, &at);

    // Ā Ω Āᵀ is L(W^τ) with node 0's row and column removed.
    let reduced: Vec<_> = l_tau
        .triplets()
        .filter(|&(r, c, _)| r > 0 && c > 0)
        .map(|(r, c, v)| (r - 1, c - 1, v))
        .collect();
    let chol = SparseCholesky::factor(&CscMatrix::from_triplets(n - 1, n - 1, &reduced))?;

    Ok(DataMatrixSet {
        d,
        n,
        m,
        tails,
        heads,
        t_meas,
        l_tau,
        l_rho,
        v,
        t,
        omega,
        a_reduced,
        chol,
    })
}

impl DataMatrixSet {
    /// Tail and head of edge `e`.
    pub fn edge_endpoints(&self, e: usize) -> (usize, usize) {
        (self.tails[e], self.heads[e])
    }
}

/// Value of the maximum-likelihood cost
/// `Σ_e κ_e ‖R_j − R_i R̃_ij‖²_F + τ_e ‖t_j − t_i − R_i t̃_ij‖²`.
pub fn evaluate_full_cost(g: &MeasurementGraph, x: &PoseEstimate) -> Result<f64> {
    if x.len() != g.num_poses() || x.dim() != g.dim() {
        return Err(Error::Dimension(format!(
            "estimate has {} poses of dimension {}, graph has {} of dimension {}",
            x.len(),
            x.dim(),
            g.num_poses(),
            g.dim()
        )));
    }
    let mut total = 0.0;
    for e in g.edges() {
        let ri = x.rotations[e.tail].matrix();
        let rj = x.rotations[e.head].matrix();
        let rot_res = rj - ri * e.rot.matrix();
        let tr_res: DVector<f64> = &x.translations[e.head] - &x.translations[e.tail] - ri * &e.t;
        total += e.kappa * rot_res.norm_squared() + e.tau * tr_res.norm_squared();
    }
    Ok(total)
}
