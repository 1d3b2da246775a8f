//! Small-matrix rotation utilities shared by the parser, rounding and the
//! synthetic generator. Rotations are stored as dynamically sized `d × d`
//! matrices so that planar and spatial problems share one code path.

use nalgebra::{DMatrix, Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOL: f64 = 1e-10;

/// An element of SO(d), d ∈ {2, 3}.
#[derive(Clone, Debug, PartialEq)]
pub struct Rotation(DMatrix<f64>);

impl Rotation {
    pub fn identity(d: usize) -> Self {
        Rotation(DMatrix::identity(d, d))
    }

    /// Validates orthonormality and orientation to within `tol`.
    pub fn from_matrix(m: DMatrix<f64>, tol: f64) -> Result<Self> {
        if !m.is_square() || !(m.nrows() == 2 || m.nrows() == 3) {
            return Err(Error::Dimension(format!(
                "rotation must be 2x2 or 3x3, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let d = m.nrows();
        let orth = (m.transpose() * &m - DMatrix::<f64>::identity(d, d)).amax();
        let det = m.determinant();
        if orth > tol || (det - 1.0).abs() > tol {
            return Err(Error::InvalidMeasurement(format!(
                "not a rotation: orthogonality error {orth:.3e}, det {det:.6}"
            )));
        }
        Ok(Rotation(m))
    }

    /// Projects an arbitrary square matrix onto SO(d).
    pub fn nearest(m: &DMatrix<f64>) -> Self {
        Rotation(nearest_rotation(m))
    }

    /// Planar rotation by `theta` radians.
    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Rotation(DMatrix::from_row_slice(2, 2, &[c, -s, s, c]))
    }

    /// Spatial rotation from a quaternion given as (qx, qy, qz, qw).
    /// The quaternion is normalized; the returned flag is true when its norm
    /// deviated from one by more than 1e-6.
    pub fn from_quaternion(qx: f64, qy: f64, qz: f64, qw: f64) -> Result<(Self, bool)> {
        let q = Quaternion::new(qw, qx, qy, qz);
        let norm = q.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidMeasurement("zero quaternion".into()));
        }
        let uq = UnitQuaternion::from_quaternion(q);
        let r: Matrix3<f64> = uq.to_rotation_matrix().into_inner();
        Ok((
            Rotation(DMatrix::from_iterator(3, 3, r.iter().copied())),
            (norm - 1.0).abs() > 1e-6,
        ))
    }

    /// Quaternion (qx, qy, qz, qw) with qw ≥ 0. Planar rotations are embedded
    /// as rotations about the z axis.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let m3 = self.to_matrix3();
        let uq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m3));
        let q = uq.into_inner();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.i, s * q.j, s * q.k, s * q.w]
    }

    /// Planar heading angle (only meaningful for d = 2).
    pub fn angle_2d(&self) -> f64 {
        self.0[(1, 0)].atan2(self.0[(0, 0)])
    }

    fn to_matrix3(&self) -> Matrix3<f64> {
        let mut m = Matrix3::identity();
        let d = self.dim();
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = self.0[(i, j)];
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(&self.0 * &other.0)
    }

    /// Geodesic distance to the identity, in radians.
    pub fn angle(&self) -> f64 {
        rotation_angle(&self.0)
    }
}

/// Nearest element of SO(d) in Frobenius norm:
/// `U diag(1, …, 1, det(U Vᵀ)) Vᵀ` from the SVD `M = U Σ Vᵀ`.
pub fn nearest_rotation(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut uv = &u * &v_t;
    if uv.determinant() < 0.0 {
        // nalgebra orders singular values in decreasing order, so the last
        // column of U pairs with the smallest singular value.
        let mut u = u;
        for i in 0..d {
            u[(i, d - 1)] = -u[(i, d - 1)];
        }
        uv = &u * &v_t;
    }
    uv
}

/// Angle of the rotation `R`, computed as `2 asin(‖R − I‖_F / √8)` which is
/// valid for both d = 2 and d = 3 and well conditioned near zero.
pub fn rotation_angle(r: &DMatrix<f64>) -> f64 {
    let d = r.nrows();
    let dist = (r - DMatrix::<f64>::identity(d, d)).norm();
    2.0 * (dist / 8f64.sqrt()).min(1.0).asin()
}

/// Matrix exponential of the skew-symmetric matrix with coordinates `omega`
/// (one entry for d = 2, three for d = 3).
pub fn exp_so(omega: &[f64]) -> DMatrix<f64> {
    match omega.len() {
        1 => Rotation::from_angle(omega[0]).into_matrix(),
        3 => {
            let r = Rotation3::from_scaled_axis(Vector3::new(omega[0], omega[1], omega[2]));
            DMatrix::from_iterator(3, 3, r.matrix().iter().copied())
        }
        k => panic!("exp_so expects 1 or 3 coordinates, got {k}"),
    }
}
