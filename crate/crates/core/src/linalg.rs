//! Thin bridge between `ndarray` storage and the `nalgebra` decompositions.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

pub(crate) fn to_dmatrix(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Thin SVD with singular values sorted in descending order.
/// Returns `(U, s, V)` with `a = U diag(s) Vᵀ`.
pub(crate) fn thin_svd(a: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>)> {
    let m = to_dmatrix(a);
    let svd = m.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::invalid("SVD failed to produce U"))?;
    let vt = svd
        .v_t
        .ok_or_else(|| Error::invalid("SVD failed to produce Vᵀ"))?;
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
    let r = order.len();
    let uu = Array2::from_shape_fn((u.nrows(), r), |(i, k)| u[(i, order[k])]);
    let vv = Array2::from_shape_fn((vt.ncols(), r), |(j, k)| vt[(order[k], j)]);
    let ss = Array1::from_iter(order.iter().map(|&k| s[k]));
    Ok((uu, ss, vv))
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
pub(crate) fn sym_eigen(a: ArrayView2<'_, f64>) -> (Array1<f64>, Array2<f64>) {
    let m = to_dmatrix(a);
    let sym = (&m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues;
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]).then(i.cmp(&j)));
    let n = order.len();
    let vecs = Array2::from_shape_fn((m.nrows(), n), |(i, k)| eig.eigenvectors[(i, order[k])]);
    (Array1::from_iter(order.iter().map(|&k| vals[k])), vecs)
}

/// Solves `a x = b` after checking the 2-norm condition number of `a`.
pub(crate) fn solve_guarded(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    max_cond: f64,
) -> Result<Array2<f64>> {
    let am = to_dmatrix(a);
    let sv = am.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= max_cond) {
        return Err(Error::Singular(cond));
    }
    let lu = am.lu();
    let x = lu
        .solve(&to_dmatrix(b))
        .ok_or(Error::Singular(f64::INFINITY))?;
    Ok(from_dmatrix(&x))
}

pub(crate) fn column_means(x: ArrayView2<'_, f64>) -> Array1<f64> {
    if x.nrows() == 0 {
        return Array1::zeros(x.ncols());
    }
    x.mean_axis(Axis(0)).expect("non-empty")
}

pub(crate) fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

pub(crate) fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Pearson correlation with sample moments. Returns `None` when either
/// vector has zero variance.
pub(crate) fn pearson(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn svd_sorted_and_reconstructs() {
        let a = array![[3.0, 1.0], [1.0, 3.0], [0.0, 1.0]];
        let (u, s, v) = thin_svd(a.view()).unwrap();
        assert!(s[0] >= s[1]);
        let rec = u.dot(&Array2::from_diag(&s)).dot(&v.t());
        for (x, y) in rec.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_system_is_refused() {
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        let b = array![[1.0], [2.0]];
        assert!(matches!(
            solve_guarded(a.view(), b.view(), 1e12),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn pearson_constant_is_none() {
        let a = array![1.0, 1.0, 1.0];
        let b = array![1.0, 2.0, 3.0];
        assert!(pearson(a.view(), b.view()).is_none());
        assert!((pearson(b.view(), b.view()).unwrap() - 1.0).abs() < 1e-15);
    }
}
