//! Rounding a low-rank factor `Y ∈ St(d, r)ⁿ` to a feasible `R̂ ∈ SO(d)ⁿ`, and
//! global gauge alignment of pose estimates for evaluation.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data_matrices::DataMatrixSet;
use crate::geometry::{nearest_rotation, Rotation};
use crate::graph::PoseEstimate;
use crate::stiefel::StiefelPoint;

#[derive(Clone, Debug)]
pub struct Rounded {
    /// Rotations `(R̂_1 ⋯ R̂_n)`, `d × dn`.
    pub rotations: DMatrix<f64>,
    /// Number of blocks with positive determinant before the orientation fix.
    pub positive_blocks: usize,
    /// Whether `Diag(1, …, 1, −1)` was applied.
    pub flipped: bool,
    /// The d-th singular value of `Y` was numerically zero.
    pub degenerate: bool,
}

/// Rank-d truncated SVD `Y ≈ U_d Ξ_d V_dᵀ`, take `Ξ_d V_dᵀ`, fix the
/// orientation by majority vote on block determinants, and project every
/// block to the nearest rotation.
///
/// When the vote ties (n even, exactly n/2 positive) and `data` is given, the
/// orientation with the lower cost is kept.
pub fn round_solution(y: &StiefelPoint, data: Option<&DataMatrixSet>) -> Rounded {
    let d = y.dim();
    let n = y.num_blocks();
    let ym = y.matrix();

    // Ξ_d V_dᵀ = U_dᵀ Y, with U_d the leading eigenvectors of Y Yᵀ.
    let eig = SymmetricEigen::new(ym * ym.transpose());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut ud = DMatrix::zeros(ym.nrows(), d);
    for (k, &idx) in order.iter().take(d).enumerate() {
        let mut col = eig.eigenvectors.column(idx).into_owned();
        // Deterministic sign: largest-magnitude entry positive.
        if col[col.iamax()] < 0.0 {
            col.neg_mut();
        }
        ud.set_column(k, &col);
    }
    let sigma_1 = eig.eigenvalues[order[0]].max(0.0).sqrt();
    let sigma_d = eig.eigenvalues[order[d - 1]].max(0.0).sqrt();
    let degenerate = sigma_d <= 1e-12 * sigma_1.max(f64::MIN_POSITIVE);
    if degenerate {
        warn!("rounding: rank of Y is below d (sigma_d = {sigma_d:.3e})");
    }
    let r_bar = ud.transpose() * ym;

    let positive_blocks = (0..n)
        .filter(|&i| r_bar.columns(d * i, d).determinant() > 0.0)
        .count();
    let flip = |m: &DMatrix<f64>| {
        let mut f = m.clone();
        f.row_mut(d - 1).neg_mut();
        f
    };
    let project = |m: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(d, d * n);
        for i in 0..n {
            out.columns_mut(d * i, d)
                .copy_from(&nearest_rotation(&m.columns(d * i, d).into_owned()));
        }
        out
    };

    let majority = n.div_ceil(2);
    let (rotations, flipped) = if positive_blocks < majority {
        (project(&flip(&r_bar)), true)
    } else if n.is_multiple_of(2) && positive_blocks == n / 2 && data.is_some() {
        let mats = data.unwrap();
        let keep = project(&r_bar);
        let other = project(&flip(&r_bar));
        let f_keep = mats.apply_q_unchecked(&keep).dot(&keep);
        let f_other = mats.apply_q_unchecked(&other).dot(&other);
        if f_other < f_keep {
            (other, true)
        } else {
            (keep, false)
        }
    } else {
        (project(&r_bar), false)
    };

    Rounded {
        rotations,
        positive_blocks,
        flipped,
        degenerate,
    }
}

/// Rigid transform `x ↦ g x` applied to every pose.
fn transform(est: &PoseEstimate, rg: &DMatrix<f64>, tg: &DVector<f64>) -> PoseEstimate {
    PoseEstimate {
        rotations: est
            .rotations
            .iter()
            .map(|r| Rotation::nearest(&(rg * r.matrix())))
            .collect(),
        translations: est.translations.iter().map(|t| rg * t + tg).collect(),
    }
}

/// Applies the global SE(d) transform that best aligns `est`'s translations
/// with `reference`'s in the least-squares sense (closed-form Procrustes).
/// When the translations do not determine the rotation (e.g. collinear
/// points), the rotation blocks are included in the alignment.
pub fn align_gauge(est: &PoseEstimate, reference: &PoseEstimate) -> PoseEstimate {
    assert_eq!(est.len(), reference.len(), "align_gauge: pose counts differ");
    let d = est.dim();
    let n = est.len() as f64;
    let mean = |p: &PoseEstimate| p.translations.iter().fold(DVector::zeros(d), |acc, t| acc + t) / n;
    let c_est = mean(est);
    let c_ref = mean(reference);
    let mut h = DMatrix::zeros(d, d);
    for (a, b) in est.translations.iter().zip(&reference.translations) {
        h += (b - &c_ref) * (a - &c_est).transpose();
    }
    let sv = h.singular_values();
    let well_posed = d >= 2 && sv[0] > 0.0 && sv[d - 2] > 1e-9 * sv[0];
    if !well_posed {
        for (a, b) in est.rotations.iter().zip(&reference.rotations) {
            h += b.matrix() * a.matrix().transpose();
        }
    }
    let rg = nearest_rotation(&h);
    let tg = &c_ref - &rg * &c_est;
    transform(est, &rg, &tg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::exp_so;
    use crate::stiefel::random_point;

    #[test]
    fn relative_rotations_are_preserved() {
        let mut r = DMatrix::zeros(3, 6);
        r.columns_mut(0, 3).copy_from(&exp_so(&[0.2, -0.4, 0.9]));
        r.columns_mut(3, 3).copy_from(&exp_so(&[-1.0, 0.3, 0.5]));
        let y = StiefelPoint::from_rotations(&r, 5).unwrap();
        let out = round_solution(&y, None);
        let rel = |m: &DMatrix<f64>| m.columns(0, 3).transpose() * m.columns(3, 3);
        assert!((rel(&out.rotations) - rel(&r)).amax() < 1e-12);
    }

    #[test]
    fn orientation_vote_flips_minority() {
        // Two reflections and one rotation: the vote must flip.
        let refl = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let mut y = DMatrix::zeros(2, 6);
        y.columns_mut(0, 2).copy_from(&refl);
        y.columns_mut(2, 2).copy_from(&refl);
        y.columns_mut(4, 2).copy_from(&DMatrix::identity(2, 2));
        let p = StiefelPoint::new(y, 2, 1e-12).unwrap();
        let out = round_solution(&p, None);
        assert!(out.flipped);
        assert_eq!(out.positive_blocks, 1);
        for i in 0..3 {
            let b = out.rotations.columns(2 * i, 2).into_owned();
            assert!((b.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn output_is_always_feasible() {
        let y = random_point(10, 3, 5, 3).unwrap();
        let out = round_solution(&y, None);
        for i in 0..10 {
            let b = out.rotations.columns(3 * i, 3).into_owned();
            assert!((b.transpose() * &b - DMatrix::identity(3, 3)).amax() < 1e-12);
            assert!((b.determinant() - 1.0).abs() < 1e-12);
        }
    }

    fn random_estimate(n: usize, seed: u64) -> PoseEstimate {
        let rots = (0..n)
            .map(|i| Rotation::from_matrix(exp_so(&[0.1 * i as f64, seed as f64 * 0.3, -0.2]), 1e-12).unwrap())
            .collect();
        let trans = (0..n)
            .map(|i| DVector::from_row_slice(&[i as f64, (i * i) as f64 * 0.1, (seed as f64 + i as f64).sin()]))
            .collect();
        PoseEstimate::new(rots, trans).unwrap()
    }

    #[test]
    fn alignment_undoes_a_global_transform() {
        let reference = random_estimate(6, 1);
        let rg = exp_so(&[0.7, -1.2, 0.4]);
        let tg = DVector::from_row_slice(&[3.0, -1.0, 2.0]);
        let moved = transform(&reference, &rg, &tg);
        let aligned = align_gauge(&moved, &reference);
        for i in 0..6 {
            assert!((aligned.translations[i].clone() - &reference.translations[i]).amax() < 1e-9);
            assert!((aligned.rotations[i].matrix() - reference.rotations[i].matrix()).amax() < 1e-9);
        }
    }

    #[test]
    fn alignment_to_self_is_identity() {
        let reference = random_estimate(5, 2);
        let aligned = align_gauge(&reference, &reference);
        for i in 0..5 {
            assert!((aligned.translations[i].clone() - &reference.translations[i]).amax() < 1e-12);
        }
    }
}
