//! SIMPLS partial least squares and the PLS-DA class encoding.
//!
//! The fit deflates the cross-product matrix `S = XᵀY` against an orthonormal
//! basis of the X-loadings, so X-scores come out mutually orthogonal and the
//! weights `R` satisfy `T = X R` directly on the centered data.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::linalg::{norm, solve_guarded, sym_eigen};
use crate::preprocess::ScaleModel;

/// Largest condition number accepted for `PᵀW` when forming coefficients.
pub const MAX_CONDITION: f64 = 1e12;

/// Relative size of the remaining cross-product below which no further
/// latent variables are extracted.
const EXHAUSTED: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsModel {
    x_scale: ScaleModel,
    y_scale: ScaleModel,
    /// vars × a; `T = X_scaled · W`.
    #[serde(with = "codec::array2")]
    weights: Array2<f64>,
    /// vars × a.
    #[serde(with = "codec::array2")]
    x_loadings: Array2<f64>,
    /// responses × a.
    #[serde(with = "codec::array2")]
    y_loadings: Array2<f64>,
    /// n × a, unit-norm columns.
    #[serde(with = "codec::array2")]
    x_scores: Array2<f64>,
    /// n × a.
    #[serde(with = "codec::array2")]
    y_scores: Array2<f64>,
    /// vars × responses, scaled space.
    #[serde(with = "codec::array2")]
    coefficients: Array2<f64>,
    requested: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlsOptions {
    /// Autoscale X and Y before fitting. When false the data are only
    /// centered.
    pub autoscale: bool,
}

impl Default for PlsOptions {
    fn default() -> Self {
        Self { autoscale: true }
    }
}

impl PlsModel {
    /// Latent variables actually extracted; can be below the requested count
    /// when the cross-product is exhausted early.
    pub fn n_components(&self) -> usize {
        self.weights.ncols()
    }

    pub fn requested_components(&self) -> usize {
        self.requested
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn x_loadings(&self) -> &Array2<f64> {
        &self.x_loadings
    }

    pub fn y_loadings(&self) -> &Array2<f64> {
        &self.y_loadings
    }

    pub fn x_scores(&self) -> &Array2<f64> {
        &self.x_scores
    }

    pub fn y_scores(&self) -> &Array2<f64> {
        &self.y_scores
    }

    pub fn x_scale(&self) -> &ScaleModel {
        &self.x_scale
    }

    pub fn y_scale(&self) -> &ScaleModel {
        &self.y_scale
    }

    /// Coefficients in scaled space, `b = W (PᵀW)⁻¹ Qᵀ`, recomputed from the
    /// stored factors.
    pub fn regression_coefficients(&self) -> Result<Array2<f64>> {
        coefficients_from_factors(&self.weights, &self.x_loadings, &self.y_loadings)
    }

    /// Coefficients and intercept in the original units of X and Y.
    pub fn original_coefficients(&self) -> (Array2<f64>, Array1<f64>) {
        let xs = self.x_scale.stds();
        let ys = self.y_scale.stds();
        let b = Array2::from_shape_fn(self.coefficients.dim(), |(j, k)| {
            self.coefficients[[j, k]] * ys[k] / xs[j]
        });
        let intercept = self.y_scale.means() - &self.x_scale.means().dot(&b);
        (b, intercept)
    }

    pub fn predict(&self, x_new: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let xs = self.x_scale.apply(x_new).map_err(|_| Error::Dimension {
            context: "PLS predictors",
            expected: self.x_scale.bands(),
            found: x_new.ncols(),
        })?;
        let ys = xs.dot(&self.coefficients);
        self.y_scale.invert(ys.view())
    }

    /// Training predictions rebuilt from the factors, `T Qᵀ`, de-scaled.
    pub fn factor_predictions(&self) -> Result<Array2<f64>> {
        let ys = self.x_scores.dot(&self.y_loadings.t());
        self.y_scale.invert(ys.view())
    }
}

fn coefficients_from_factors(
    w: &Array2<f64>,
    p: &Array2<f64>,
    q: &Array2<f64>,
) -> Result<Array2<f64>> {
    if w.ncols() == 0 {
        return Ok(Array2::zeros((w.nrows(), q.nrows())));
    }
    let ptw = p.t().dot(w);
    let inv_qt = solve_guarded(ptw.view(), q.t(), MAX_CONDITION)?;
    Ok(w.dot(&inv_qt))
}

/// Dominant direction of the cross-product `s` (vars × responses).
fn dominant_direction(s: &Array2<f64>) -> Array1<f64> {
    if s.ncols() == 1 {
        return s.column(0).to_owned();
    }
    let sts = s.t().dot(s);
    let (_, vecs) = sym_eigen(sts.view());
    s.dot(&vecs.column(0))
}

/// Fits `a` SIMPLS latent variables (autoscaling X and Y).
pub fn fit_simpls(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, a: usize) -> Result<PlsModel> {
    fit_simpls_with(x, y, a, PlsOptions::default())
}

pub fn fit_simpls_with(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    a: usize,
    opts: PlsOptions,
) -> Result<PlsModel> {
    let (n, vars) = x.dim();
    if y.nrows() != n {
        return Err(Error::Dimension {
            context: "PLS X/Y rows",
            expected: n,
            found: y.nrows(),
        });
    }
    if n < 2 || y.ncols() == 0 {
        return Err(Error::invalid("PLS needs at least 2 rows and 1 response"));
    }
    let max_a = (n - 1).min(vars);
    if a == 0 || a > max_a {
        return Err(Error::invalid(format!(
            "{a} latent variables outside 1..={max_a}"
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PLS input".into()));
    }
    let y_fit = ScaleModel::fit(y)?;
    if let Some(k) = y_fit.degenerate().iter().position(|&d| d) {
        return Err(Error::invalid(format!("response column {k} has zero variance")));
    }
    let (x_scale, y_scale) = if opts.autoscale {
        (ScaleModel::fit(x)?, y_fit)
    } else {
        (ScaleModel::centering(x)?, ScaleModel::centering(y)?)
    };
    let x0 = x_scale.apply(x)?;
    let y0 = y_scale.apply(y)?;
    let m = y0.ncols();

    let mut s_mat = x0.t().dot(&y0);
    let s_norm0 = s_mat.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut r_cols: Vec<Array1<f64>> = Vec::with_capacity(a);
    let mut t_cols: Vec<Array1<f64>> = Vec::with_capacity(a);
    let mut p_cols: Vec<Array1<f64>> = Vec::with_capacity(a);
    let mut q_cols: Vec<Array1<f64>> = Vec::with_capacity(a);
    let mut u_cols: Vec<Array1<f64>> = Vec::with_capacity(a);
    let mut v_cols: Vec<Array1<f64>> = Vec::with_capacity(a);

    for _ in 0..a {
        let s_norm = s_mat.iter().map(|v| v * v).sum::<f64>().sqrt();
        if s_norm0 == 0.0 || s_norm <= EXHAUSTED * s_norm0 {
            break;
        }
        let mut r = dominant_direction(&s_mat);
        let mut t = x0.dot(&r);
        let tn = norm(t.view());
        if !(tn > 0.0) || tn <= EXHAUSTED * norm(r.view()) {
            break;
        }
        t /= tn;
        r /= tn;
        let p = x0.t().dot(&t);
        let q = y0.t().dot(&t);
        let mut u = y0.dot(&q);
        let mut v = p.clone();
        for (vj, tj) in v_cols.iter().zip(&t_cols) {
            let c = vj.dot(&p);
            v.scaled_add(-c, vj);
            let cu = tj.dot(&u);
            u.scaled_add(-cu, tj);
        }
        // second pass keeps the basis orthonormal to working precision
        for vj in &v_cols {
            let c = vj.dot(&v);
            v.scaled_add(-c, vj);
        }
        let vn = norm(v.view());
        if !(vn > 0.0) {
            break;
        }
        v /= vn;
        let vts = v.dot(&s_mat);
        for i in 0..vars {
            for k in 0..m {
                s_mat[[i, k]] -= v[i] * vts[k];
            }
        }
        r_cols.push(r);
        t_cols.push(t);
        p_cols.push(p);
        q_cols.push(q);
        u_cols.push(u);
        v_cols.push(v);
    }
    if r_cols.len() < a {
        log::debug!(
            "SIMPLS stopped after {} of {a} latent variables (cross-product exhausted)",
            r_cols.len()
        );
    }

    let stack = |cols: &[Array1<f64>], rows: usize| -> Array2<f64> {
        let mut out = Array2::zeros((rows, cols.len()));
        for (j, c) in cols.iter().enumerate() {
            out.column_mut(j).assign(c);
        }
        out
    };
    let weights = stack(&r_cols, vars);
    let x_loadings = stack(&p_cols, vars);
    let y_loadings = stack(&q_cols, m);
    let x_scores = stack(&t_cols, n);
    let y_scores = stack(&u_cols, n);
    let coefficients = coefficients_from_factors(&weights, &x_loadings, &y_loadings)?;
    Ok(PlsModel {
        x_scale,
        y_scale,
        weights,
        x_loadings,
        y_loadings,
        x_scores,
        y_scores,
        coefficients,
        requested: a,
    })
}

pub fn regression_coefficients(model: &PlsModel) -> Result<Array2<f64>> {
    model.regression_coefficients()
}

pub fn predict(model: &PlsModel, x_new: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    model.predict(x_new)
}

/// Pooled coefficient of determination `1 − RSS/TSS` over all response
/// columns. `NaN` when the responses are constant.
pub fn r_squared(y: ArrayView2<'_, f64>, y_hat: ArrayView2<'_, f64>) -> f64 {
    let means = y.mean_axis(Axis(0));
    let Some(means) = means else {
        return f64::NAN;
    };
    let mut rss = 0.0;
    let mut tss = 0.0;
    for (row, hat) in y.axis_iter(Axis(0)).zip(y_hat.axis_iter(Axis(0))) {
        for k in 0..row.len() {
            rss += (row[k] - hat[k]).powi(2);
            tss += (row[k] - means[k]).powi(2);
        }
    }
    1.0 - rss / tss
}

/// Univariate convenience wrapper around [`r_squared`].
pub fn r_squared_1d(y: ArrayView1<'_, f64>, y_hat: ArrayView1<'_, f64>) -> f64 {
    r_squared(
        y.insert_axis(Axis(1)).view(),
        y_hat.insert_axis(Axis(1)).view(),
    )
}

/// One-hot class indicators for PLS-DA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaEncoding {
    classes: Vec<u8>,
    #[serde(with = "codec::array2")]
    indicators: Array2<f64>,
}

impl DaEncoding {
    /// Sorted distinct classes; column `j` of the indicators is `classes[j]`.
    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn indicators(&self) -> &Array2<f64> {
        &self.indicators
    }

    pub fn decode(&self, y_hat: ArrayView2<'_, f64>) -> Result<Vec<u8>> {
        decode_da(&self.classes, y_hat)
    }
}

pub fn encode_da(labels: &[u8]) -> Result<DaEncoding> {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass(classes.len()));
    }
    let mut indicators = Array2::zeros((labels.len(), classes.len()));
    for (i, l) in labels.iter().enumerate() {
        let j = classes.binary_search(l).expect("class present");
        indicators[[i, j]] = 1.0;
    }
    Ok(DaEncoding {
        classes,
        indicators,
    })
}

/// Row-wise argmax over predicted indicators; ties go to the lowest class
/// column.
pub fn decode_da(classes: &[u8], y_hat: ArrayView2<'_, f64>) -> Result<Vec<u8>> {
    if y_hat.ncols() != classes.len() {
        return Err(Error::Dimension {
            context: "PLS-DA indicator columns",
            expected: classes.len(),
            found: y_hat.ncols(),
        });
    }
    Ok(y_hat
        .axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            classes[best]
        })
        .collect())
}
