//! Geometry of the product manifold St(d, r)ⁿ, represented as `r × dn`
//! matrices `Y = (Y_1 ⋯ Y_n)` whose `r × d` blocks have orthonormal columns.
//! The metric is the Euclidean one inherited from the ambient space,
//! `⟨U, V⟩ = tr(Uᵀ V)`.

use nalgebra::{DMatrix, DMatrixView};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Tangent vectors share the ambient representation of the point they are
/// attached to.
pub type TangentVector = DMatrix<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct StiefelPoint {
    y: DMatrix<f64>,
    d: usize,
}

impl StiefelPoint {
    /// Wraps `y`, checking that every block is orthonormal to within `tol`.
    pub fn new(y: DMatrix<f64>, d: usize, tol: f64) -> Result<Self> {
        if d == 0 || !y.ncols().is_multiple_of(d) || y.nrows() < d {
            return Err(Error::Dimension(format!(
                "cannot view a {}x{} matrix as St({d}, r)^n",
                y.nrows(),
                y.ncols()
            )));
        }
        let p = StiefelPoint { y, d };
        let err = p.orthonormality_error();
        if err > tol {
            return Err(Error::Dimension(format!(
                "blocks are not orthonormal (error {err:.3e})"
            )));
        }
        Ok(p)
    }

    /// Embeds rotations `R` (`d × dn`) at rank `r ≥ d` by appending zero rows.
    pub fn from_rotations(r_blocks: &DMatrix<f64>, r: usize) -> Result<Self> {
        let d = r_blocks.nrows();
        if r < d {
            return Err(Error::Dimension(format!("rank {r} is below d = {d}")));
        }
        let mut y = DMatrix::zeros(r, r_blocks.ncols());
        y.rows_mut(0, d).copy_from(r_blocks);
        StiefelPoint::new(y, d, 1e-8)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.y
    }

    pub fn rank(&self) -> usize {
        self.y.nrows()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_blocks(&self) -> usize {
        self.y.ncols() / self.d
    }

    pub fn block(&self, i: usize) -> DMatrixView<'_, f64> {
        self.y.columns(self.d * i, self.d)
    }

    /// `max_i ‖Y_iᵀ Y_i − I‖_max`.
    pub fn orthonormality_error(&self) -> f64 {
        let eye = DMatrix::<f64>::identity(self.d, self.d);
        (0..self.num_blocks())
            .map(|i| {
                let b = self.block(i);
                (b.transpose() * b - &eye).amax()
            })
            .fold(0.0, f64::max)
    }

    /// The same point at rank `r + 1`, padded with a zero row.
    pub fn lift(&self) -> StiefelPoint {
        let mut y = DMatrix::zeros(self.rank() + 1, self.y.ncols());
        y.rows_mut(0, self.rank()).copy_from(&self.y);
        StiefelPoint { y, d: self.d }
    }
}

/// Symmetrized `d × d` diagonal blocks of a `dn × dn` matrix:
/// `(M_ii + M_iiᵀ) / 2`.
pub fn sym_block_diag(m: &DMatrix<f64>, d: usize) -> Result<Vec<DMatrix<f64>>> {
    if !m.is_square() || !m.nrows().is_multiple_of(d) {
        return Err(Error::Dimension(format!(
            "sym_block_diag needs a square matrix with side divisible by {d}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok((0..m.nrows() / d)
        .map(|i| {
            let b = m.view((d * i, d * i), (d, d));
            (b + b.transpose()) * 0.5
        })
        .collect())
}

/// Symmetrized diagonal blocks of `Yᵀ X`, computed blockwise as
/// `sym(Y_iᵀ X_i)` without forming the `dn × dn` product.
pub fn sym_block_diag_product(y: &DMatrix<f64>, x: &DMatrix<f64>, d: usize) -> Vec<DMatrix<f64>> {
    assert_eq!(y.shape(), x.shape(), "sym_block_diag_product: shape mismatch");
    (0..y.ncols() / d)
        .map(|i| {
            let b = y.columns(d * i, d).transpose() * x.columns(d * i, d);
            (&b + b.transpose()) * 0.5
        })
        .collect()
}

/// Right-multiplies each `r × d` block of `x` by the corresponding block of
/// `blocks`: `(X_1 B_1 ⋯ X_n B_n)`.
pub fn block_right_multiply(x: &DMatrix<f64>, blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let d = blocks.first().map_or(1, |b| b.nrows());
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for (i, b) in blocks.iter().enumerate() {
        out.columns_mut(d * i, d).copy_from(&(x.columns(d * i, d) * b));
    }
    out
}

/// Orthogonal projection onto the tangent space at `Y`:
/// `X − Y SymBlockDiag(Yᵀ X)`.
pub fn project_tangent(y: &StiefelPoint, x: &DMatrix<f64>) -> Result<TangentVector> {
    if x.shape() != y.y.shape() {
        return Err(Error::Dimension(format!(
            "project_tangent: point is {:?}, vector is {:?}",
            y.y.shape(),
            x.shape()
        )));
    }
    Ok(project_unchecked(y, x))
}

pub(crate) fn project_unchecked(y: &StiefelPoint, x: &DMatrix<f64>) -> TangentVector {
    let d = y.d;
    let mut out = x.clone();
    for i in 0..y.num_blocks() {
        let yi = y.y.columns(d * i, d);
        let s = yi.transpose() * x.columns(d * i, d);
        let sym = (&s + s.transpose()) * 0.5;
        let mut oi = out.columns_mut(d * i, d);
        oi -= yi * sym;
    }
    out
}

/// Frobenius inner product.
pub fn inner(u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    u.dot(v)
}

/// Q factor of the thin QR decomposition with a positive diagonal in R.
/// Returns `None` when the input is numerically rank deficient.
pub(crate) fn qf(m: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let scale = m.norm().max(1.0);
    let qr = m.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..q.ncols() {
        let rjj = r[(j, j)];
        if !(rjj.abs() > 1e-12 * scale) {
            return None;
        }
        if rjj < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Some(q)
}

/// QR retraction, applied blockwise: `Y_i' = qf(Y_i + V_i)`.
pub fn retract(y: &StiefelPoint, v: &TangentVector) -> Result<StiefelPoint> {
    if v.shape() != y.y.shape() {
        return Err(Error::Dimension(format!(
            "retract: point is {:?}, step is {:?}",
            y.y.shape(),
            v.shape()
        )));
    }
    let d = y.d;
    let mut out = DMatrix::zeros(y.rank(), y.y.ncols());
    for i in 0..y.num_blocks() {
        let moved = y.y.columns(d * i, d) + v.columns(d * i, d);
        let q = qf(moved).ok_or(Error::RankDeficient { block: i })?;
        out.columns_mut(d * i, d).copy_from(&q);
    }
    Ok(StiefelPoint { y: out, d })
}

/// A point with independent Haar-distributed blocks: each block is the
/// sign-corrected Q factor of an `r × d` standard Gaussian matrix.
pub fn random_point(n: usize, d: usize, r: usize, seed: u64) -> Result<StiefelPoint> {
    if r < d {
        return Err(Error::Dimension(format!("rank {r} is below d = {d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = DMatrix::zeros(r, d * n);
    for i in 0..n {
        loop {
            let g = DMatrix::from_fn(r, d, |_, _| StandardNormal.sample(&mut rng));
            if let Some(q) = qf(g) {
                y.columns_mut(d * i, d).copy_from(&q);
                break;
            }
        }
    }
    Ok(StiefelPoint { y, d })
}
