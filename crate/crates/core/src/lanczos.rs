//! Thick-restart Lanczos for the largest eigenpair of a symmetric operator
//! given only through matrix-vector products.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LanczosConfig {
    /// Maximum Krylov basis size per restart cycle.
    pub krylov_dim: usize,
    /// Ritz vectors kept across a restart.
    pub keep: usize,
    /// Cap on operator applications.
    pub max_matvecs: usize,
    /// Residual tolerance, relative to the operator scale supplied by the
    /// caller.
    pub tol: f64,
    /// Seed of the random start vector.
    pub seed: u64,
}

impl Default for LanczosConfig {
    fn default() -> Self {
        LanczosConfig {
            krylov_dim: 80,
            keep: 20,
            max_matvecs: 20_000,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl LanczosConfig {
    pub fn validate(&self) -> Result<()> {
        if self.krylov_dim < 3 || self.keep == 0 || self.keep + 2 > self.krylov_dim {
            return Err(Error::Config(format!(
                "lanczos: need 1 <= keep <= krylov_dim - 2 (keep {}, krylov_dim {})",
                self.keep, self.krylov_dim
            )));
        }
        if !(self.tol > 0.0) || self.max_matvecs == 0 {
            return Err(Error::Config("lanczos: tol and max_matvecs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub value: f64,
    /// Unit-norm eigenvector estimate.
    pub vector: DVector<f64>,
    /// `‖A x − θ x‖`.
    pub residual: f64,
    pub converged: bool,
    pub matvecs: usize,
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let v: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    let norm = v.norm();
    v / norm
}

/// Removes the components of `w` along the first `k` columns of `basis`
/// (classical Gram–Schmidt, two passes), returning the coefficients.
fn orthogonalize(basis: &DMatrix<f64>, k: usize, w: &mut DVector<f64>) -> DVector<f64> {
    let mut coeffs = DVector::zeros(k);
    if k == 0 {
        return coeffs;
    }
    let q = basis.columns(0, k);
    for _ in 0..2 {
        let c = q.tr_mul(w);
        *w -= q * &c;
        coeffs += c;
    }
    coeffs
}

/// Largest eigenpair of the symmetric operator `op` on `Rⁿ`. Converged when
/// the Ritz residual is at most `cfg.tol * scale`.
pub fn largest_eigenpair<F>(n: usize, op: F, scale: f64, cfg: &LanczosConfig) -> Result<EigenPair>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Dimension("lanczos: empty operator".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = cfg.krylov_dim.min(n);
    let keep = cfg.keep.min(m.saturating_sub(2));
    let tol = cfg.tol * scale.abs().max(f64::MIN_POSITIVE);

    let mut basis = DMatrix::zeros(n, m + 1);
    basis.set_column(0, &random_unit(n, &mut rng));
    // Column j holds the coefficients of A v_j in the basis.
    let mut h = DMatrix::zeros(m + 1, m);
    let mut start = 0;
    let mut matvecs = 0;
    let mut best: Option<EigenPair> = None;

    loop {
        let mut size = m;
        for j in start..m {
            let mut w = op(&basis.column(j).into_owned());
            matvecs += 1;
            let w_norm = w.norm();
            let c = orthogonalize(&basis, j + 1, &mut w);
            h.view_mut((0, j), (j + 1, 1)).copy_from(&c);
            let beta = w.norm();
            if beta > 1e-12 * w_norm.max(f64::MIN_POSITIVE) {
                h[(j + 1, j)] = beta;
                basis.set_column(j + 1, &(w / beta));
                continue;
            }
            // Invariant subspace: continue with a fresh orthogonal direction.
            h[(j + 1, j)] = 0.0;
            if j + 1 == n {
                size = j + 1;
                break;
            }
            let mut fresh = random_unit(n, &mut rng);
            orthogonalize(&basis, j + 1, &mut fresh);
            let norm = fresh.norm();
            basis.set_column(j + 1, &(fresh / norm));
        }

        let hm = h.view((0, 0), (size, size));
        let sym = (hm + hm.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..size).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let beta_last = if size < h.nrows() { h[(size, size - 1)] } else { 0.0 };
        let residual_of = |idx: usize| (beta_last * eig.eigenvectors[(size - 1, idx)]).abs();

        let top = order[0];
        let ritz = basis.columns(0, size) * eig.eigenvectors.column(top);
        let candidate = EigenPair {
            value: eig.eigenvalues[top],
            vector: &ritz / ritz.norm(),
            residual: residual_of(top),
            converged: residual_of(top) <= tol,
            matvecs,
        };
        let done = candidate.converged || size == n || matvecs >= cfg.max_matvecs;
        if best.as_ref().is_none_or(|b| candidate.residual <= b.residual) || done {
            best = Some(candidate);
        }
        if done {
            let mut out = best.unwrap();
            out.matvecs = matvecs;
            // Recompute the residual explicitly for the returned vector.
            let ax = op(&out.vector);
            out.value = out.vector.dot(&ax);
            out.residual = (ax - &out.vector * out.value).norm();
            out.converged = out.residual <= 2.0 * tol || size == n;
            return Ok(out);
        }

        // Thick restart: keep the leading Ritz vectors; the old residual
        // direction becomes the next basis vector.
        let u = DMatrix::from_fn(size, keep, |i, k| eig.eigenvectors[(i, order[k])]);
        let kept = basis.columns(0, size) * &u;
        let next = basis.column(size).into_owned();
        basis.fill(0.0);
        basis.columns_mut(0, keep).copy_from(&kept);
        basis.set_column(keep, &next);
        h.fill(0.0);
        for (k, &idx) in order.iter().take(keep).enumerate() {
            h[(k, k)] = eig.eigenvalues[idx];
            h[(keep, k)] = beta_last * eig.eigenvectors[(size - 1, idx)];
        }
        start = keep;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_op(d: Vec<f64>) -> impl Fn(&DVector<f64>) -> DVector<f64> {
        move |x| DVector::from_fn(x.len(), |i, _| d[i] * x[i])
    }

    #[test]
    fn small_operator_is_solved_exactly() {
        let op = diag_op(vec![1.0, 5.0, -2.0, 3.0]);
        let cfg = LanczosConfig::default();
        let e = largest_eigenpair(4, op, 5.0, &cfg).unwrap();
        assert!((e.value - 5.0).abs() < 1e-12);
        assert!(e.converged);
        assert!((e.vector[1].abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn restarts_converge_on_large_diagonal() {
        let n = 600;
        let d: Vec<f64> = (0..n).map(|i| (i as f64) / n as f64).collect();
        let cfg = LanczosConfig { krylov_dim: 30, keep: 10, ..Default::default() };
        let e = largest_eigenpair(n, diag_op(d.clone()), 1.0, &cfg).unwrap();
        assert!(e.converged, "residual {}", e.residual);
        assert!((e.value - d[n - 1]).abs() < 1e-9);
        assert!(e.matvecs > 30);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = LanczosConfig { krylov_dim: 5, keep: 4, ..Default::default() };
        assert!(largest_eigenpair(10, diag_op(vec![0.0; 10]), 1.0, &cfg).is_err());
    }
}
