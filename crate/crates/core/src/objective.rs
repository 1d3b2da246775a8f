//! The rank-restricted objective `F(Y) = tr(Q̃ YᵀY)` on St(d, r)ⁿ and its
//! derivatives:
//!
//! ```text
//! ∇F(Y)        = 2 Y Q̃
//! grad F(Y)    = proj_Y(2 Y Q̃)
//! Hess F(Y)[V] = proj_Y(2 V Q̃ − V SymBlockDiag(Yᵀ ∇F(Y)))
//! ```

use std::cell::RefCell;
use std::rc::Rc;

use nalgebra::DMatrix;

use crate::data_matrices::DataMatrixSet;
use crate::stiefel::{block_right_multiply, project_unchecked, sym_block_diag_product, StiefelPoint, TangentVector};

/// Quantities that depend only on the current iterate.
#[derive(Debug)]
struct Cached {
    y: DMatrix<f64>,
    yq: Rc<DMatrix<f64>>,
    /// `SymBlockDiag(Yᵀ Y Q̃)`, i.e. half of the multiplier blocks in the
    /// Hessian formula.
    lambda: Rc<Vec<DMatrix<f64>>>,
}

#[derive(Clone, Debug)]
pub enum Preconditioner {
    Identity,
    /// Inverses of the `d × d` blocks `Σ_k κ_ik I + (TᵀΩT)_ii`.
    BlockJacobi(Vec<DMatrix<f64>>),
}

/// Cost/derivative oracle over a [`DataMatrixSet`]. Holds a one-entry cache
/// keyed on `Y`, so a handle is meant for a single solver thread.
#[derive(Debug)]
pub struct Objective<'a> {
    mats: &'a DataMatrixSet,
    cache: RefCell<Option<Cached>>,
    precond: Preconditioner,
}

impl<'a> Objective<'a> {
    pub fn new(mats: &'a DataMatrixSet) -> Self {
        Objective {
            mats,
            cache: RefCell::new(None),
            precond: Preconditioner::Identity,
        }
    }

    /// Enables the block-Jacobi preconditioner. Blocks that fail to factor
    /// fall back to the identity.
    pub fn with_block_jacobi(mut self) -> Self {
        let d = self.mats.dim();
        let deg = self.mats.rotational_degrees();
        let blocks = self
            .mats
            .translational_diagonal_blocks()
            .into_iter()
            .zip(deg)
            .map(|(tb, k)| {
                let p = tb + DMatrix::<f64>::identity(d, d) * k;
                let scale = p.amax();
                match p.cholesky() {
                    Some(ch) if scale > 0.0 && ch.l().diagonal().min() > 1e-8 * scale.sqrt() => ch.inverse(),
                    _ => DMatrix::identity(d, d),
                }
            })
            .collect();
        self.precond = Preconditioner::BlockJacobi(blocks);
        self
    }

    pub fn data(&self) -> &'a DataMatrixSet {
        self.mats
    }

    pub fn preconditioner(&self) -> &Preconditioner {
        &self.precond
    }

    fn cached(&self, y: &DMatrix<f64>) -> (Rc<DMatrix<f64>>, Rc<Vec<DMatrix<f64>>>) {
        if let Some(c) = self.cache.borrow().as_ref() {
            if c.y == *y {
                return (c.yq.clone(), c.lambda.clone());
            }
        }
        let yq = Rc::new(self.mats.apply_q_unchecked(y));
        let lambda = Rc::new(sym_block_diag_product(y, &yq, self.mats.dim()));
        *self.cache.borrow_mut() = Some(Cached {
            y: y.clone(),
            yq: yq.clone(),
            lambda: lambda.clone(),
        });
        (yq, lambda)
    }

    /// `Y Q̃`, shared with the gradient through the cache.
    pub fn y_times_q(&self, y: &StiefelPoint) -> Rc<DMatrix<f64>> {
        self.cached(y.matrix()).0
    }

    /// Symmetric blocks `Λ_i = sym((Y Q̃)_iᵀ Y_i)`, the Lagrange multipliers
    /// of the block-orthonormality constraints at a critical point.
    pub fn multipliers(&self, y: &StiefelPoint) -> Rc<Vec<DMatrix<f64>>> {
        self.cached(y.matrix()).1
    }

    pub fn cost(&self, y: &StiefelPoint) -> f64 {
        let yq = self.cached(y.matrix()).0;
        yq.dot(y.matrix())
    }

    pub fn euclidean_gradient(&self, y: &StiefelPoint) -> DMatrix<f64> {
        &*self.cached(y.matrix()).0 * 2.0
    }

    pub fn riemannian_gradient(&self, y: &StiefelPoint) -> TangentVector {
        project_unchecked(y, &self.euclidean_gradient(y))
    }

    pub fn hessian_vector_product(&self, y: &StiefelPoint, v: &TangentVector) -> TangentVector {
        let (_, lambda) = self.cached(y.matrix());
        let vq = self.mats.apply_q_unchecked(v);
        let ambient = (vq - block_right_multiply(v, &lambda)) * 2.0;
        project_unchecked(y, &ambient)
    }

    /// Applies the preconditioner, `proj_Y(V_i P_i⁻¹)` blockwise, which is
    /// symmetric positive definite on the tangent space.
    pub fn precondition(&self, y: &StiefelPoint, v: &TangentVector) -> TangentVector {
        match &self.precond {
            Preconditioner::Identity => v.clone(),
            Preconditioner::BlockJacobi(blocks) => project_unchecked(y, &block_right_multiply(v, blocks)),
        }
    }
}
