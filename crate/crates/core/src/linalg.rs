//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

/// Canonical skew matrix `[[0, I], [-I, 0]]` of size `2r x 2r`.
pub fn canonical_skew(r: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * r, 2 * r);
    for a in 0..r {
        j[(a, r + a)] = 1.0;
        j[(r + a, a)] = -1.0;
    }
    j
}

pub fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return DVector::zeros(0);
    }
    a.clone().svd(false, false).singular_values
}

/// Condition number measured against unit scale: `max(sigma_max, 1) / sigma_min`.
///
/// A plain `sigma_max / sigma_min` is identically 1 for a nonzero `1 x 1`
/// matrix, which hides a vanishing shooting derivative in one dimension.
pub fn normalized_condition(a: &DMatrix<f64>) -> f64 {
    let s = singular_values(a);
    if s.is_empty() {
        return f64::INFINITY;
    }
    let smax = s.max();
    let smin = s.min();
    if smin <= 0.0 || !smin.is_finite() {
        f64::INFINITY
    } else {
        smax.max(1.0) / smin
    }
}

/// Numerical rank with cutoff `rel_cutoff * sigma_max`.
pub fn rank(a: &DMatrix<f64>, rel_cutoff: f64) -> usize {
    let s = singular_values(a);
    if s.is_empty() {
        return 0;
    }
    let smax = s.max();
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel_cutoff * smax).count()
}

/// Minimal-norm least-squares solution of `a x = b` via SVD, truncating
/// singular values below `rel_cutoff * sigma_max`.
///
/// Returns the solution and the residual norm `|a x - b|`.
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>, rel_cutoff: f64) -> (DVector<f64>, f64) {
    let n = a.ncols();
    if a.nrows() == 0 || n == 0 {
        return (DVector::zeros(n), b.norm());
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let s = &svd.singular_values;
    let smax = s.max();
    let mut x = DVector::zeros(n);
    if smax > 0.0 {
        for i in 0..s.len() {
            if s[i] > rel_cutoff * smax {
                let coeff = u.column(i).dot(b) / s[i];
                x += vt.row(i).transpose() * coeff;
            }
        }
    }
    let resid = (a * &x - b).norm();
    (x, resid)
}

/// Orthonormal basis (as columns) of the kernel of `a`, singular values
/// below `tol * max(sigma_max, 1)` counted as zero.
pub fn null_space(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = a.ncols();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // Pad to square so the SVD returns a full V.
    let mut padded = DMatrix::zeros(a.nrows().max(n), n);
    padded.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let s = svd.singular_values;
    let scale = s.max().max(1.0);
    let cols: Vec<DVector<f64>> =
        (0..s.len()).filter(|&i| s[i] <= tol * scale).map(|i| vt.row(i).transpose()).collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Orthonormal basis of `{ y : y^T a = 0 }`.
pub fn left_null_space(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    null_space(&a.transpose(), tol)
}

fn orthonormal_columns(a: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let s = svd.singular_values;
    let smax = s.max();
    let cols: Vec<DVector<f64>> =
        (0..s.len()).filter(|&i| s[i] > rel_cutoff * smax).map(|i| u.column(i).into_owned()).collect();
    DMatrix::from_columns(&cols)
}

/// Principal angles (radians, ascending) between the column spans of `a` and `b`.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let qa = orthonormal_columns(a, 1e-10);
    let qb = orthonormal_columns(b, 1e-10);
    if qa.ncols() == 0 || qb.ncols() == 0 {
        return Vec::new();
    }
    let m = qa.transpose() * qb;
    let mut angles: Vec<f64> = singular_values(&m).iter().map(|c| c.clamp(-1.0, 1.0).acos()).collect();
    angles.sort_by(f64::total_cmp);
    angles
}

/// Least-squares slope of `log(y)` against `log(x)`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lstsq_prefers_minimal_norm() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0]);
        let (x, r) = lstsq_min_norm(&a, &b, 1e-12);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
        assert!(r < 1e-14);
    }

    #[test]
    fn lstsq_reports_inconsistency() {
        let a = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 0.0]);
        let (x, r) = lstsq_min_norm(&a, &b, 1e-12);
        assert!(x[0].abs() < 1e-14);
        assert!((r - 1.0).abs() < 1e-14);
    }

    #[test]
    fn null_space_of_rank_one() {
        let a = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 2.0]);
        let k = null_space(&a, 1e-12);
        assert_eq!(k.ncols(), 2);
        assert!((a * k).norm() < 1e-14);
    }

    #[test]
    fn condition_sees_scalar_degeneracy() {
        assert_eq!(normalized_condition(&DMatrix::from_element(1, 1, 0.0)), f64::INFINITY);
        assert!((normalized_condition(&DMatrix::from_element(1, 1, 0.5)) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn angles_between_equal_spans_vanish() {
        let a = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let b = DMatrix::from_column_slice(3, 2, &[1.0, 1.0, 0.0, 1.0, -1.0, 0.0]);
        assert!(principal_angles(&a, &b).iter().all(|t| *t < 1e-7));
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 0.5, 0.25, 0.125];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v * v).collect();
        assert!((loglog_slope(&x, &y) - 2.0).abs() < 1e-12);
    }
}
