//! Kernel PLS in dual form.
//!
//! This is SIMPLS written entirely in terms of the centered Gram matrix. With
//! `X₀` the (implicit) centered feature matrix, the cross-product
//! `S = X₀ᵀ M` is tracked through its dual factor `M` (initially the centered
//! responses), weights are `r = X₀ᵀ α`, scores `t = K α`, and the
//! orthonormal loading basis is `v = X₀ᵀ β`. Predictions need only the cross
//! kernel to the training points: `Ŷ = K_c(new, train) · D + ȳ`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{gram_matrix, kernel_matrix, KernelCentering, KernelSpec};
use crate::codec;
use crate::error::{Error, Result};
use crate::linalg::{norm, sym_eigen};
use crate::pls::{decode_da, encode_da, r_squared};

const EXHAUSTED: f64 = 1e-12;

/// Latent factors of a dual SIMPLS fit on a centered Gram matrix.
pub(crate) struct DualFactors {
    /// n × a, `r = X₀ᵀ α`.
    pub alphas: Array2<f64>,
    /// m × a.
    pub y_loadings: Array2<f64>,
}

impl DualFactors {
    pub fn n_components(&self) -> usize {
        self.alphas.ncols()
    }

    /// Dual coefficients using the first `a` components.
    pub fn coefficients(&self, a: usize) -> Array2<f64> {
        let a = a.min(self.n_components());
        self.alphas
            .slice(s![.., ..a])
            .dot(&self.y_loadings.slice(s![.., ..a]).t())
    }
}

/// Dual SIMPLS on centered `kc` against centered responses `y0`.
pub(crate) fn dual_simpls(kc: &Array2<f64>, y0: &Array2<f64>, a: usize) -> DualFactors {
    let n = kc.nrows();
    let m = y0.ncols();
    let mut dual_s = y0.clone();
    let mut alphas: Vec<Array1<f64>> = Vec::with_capacity(a);
    let mut qs: Vec<Array1<f64>> = Vec::with_capacity(a);
    let mut betas: Vec<Array1<f64>> = Vec::with_capacity(a);
    let mut kbetas: Vec<Array1<f64>> = Vec::with_capacity(a);
    let mut c0 = None;

    for _ in 0..a {
        let km = kc.dot(&dual_s);
        // SᵀS in dual form
        let sts = dual_s.t().dot(&km);
        let tr = sts.diag().sum();
        let c0v = *c0.get_or_insert(tr);
        if !(c0v > 0.0) || !(tr > EXHAUSTED * c0v) {
            break;
        }
        let mut alpha = if m == 1 {
            dual_s.column(0).to_owned()
        } else {
            let (_, vecs) = sym_eigen(sts.view());
            dual_s.dot(&vecs.column(0))
        };
        let mut t = kc.dot(&alpha);
        let tn = norm(t.view());
        if !(tn > 0.0) {
            break;
        }
        t /= tn;
        alpha /= tn;
        let q = y0.t().dot(&t);

        let kt = kc.dot(&t);
        let mut beta = t.clone();
        for (bj, kbj) in betas.iter().zip(&kbetas) {
            beta.scaled_add(-kbj.dot(&t), bj);
        }
        let mut kbeta = kc.dot(&beta);
        for (bj, kbj) in betas.iter().zip(&kbetas) {
            let c = kbj.dot(&beta);
            beta.scaled_add(-c, bj);
            kbeta.scaled_add(-c, kbj);
        }
        let vn2 = beta.dot(&kbeta);
        if !(vn2 > EXHAUSTED * kt.dot(&t).abs().max(f64::MIN_POSITIVE)) {
            break;
        }
        let vn = vn2.sqrt();
        beta /= vn;
        kbeta /= vn;
        // M ← M − β (βᵀ K M)
        let proj = kbeta.dot(&dual_s);
        for i in 0..n {
            for k in 0..m {
                dual_s[[i, k]] -= beta[i] * proj[k];
            }
        }
        alphas.push(alpha);
        qs.push(q);
        betas.push(beta);
        kbetas.push(kbeta);
    }
    let stack = |cols: &[Array1<f64>], rows: usize| {
        let mut out = Array2::zeros((rows, cols.len()));
        for (j, c) in cols.iter().enumerate() {
            out.column_mut(j).assign(c);
        }
        out
    };
    DualFactors {
        alphas: stack(&alphas, n),
        y_loadings: stack(&qs, m),
    }
}

/// Kernel PLS regression model on arbitrary real responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelPlsRegression {
    kernel: KernelSpec,
    #[serde(with = "codec::array2")]
    support: Array2<f64>,
    centering: KernelCentering,
    #[serde(with = "codec::array2")]
    dual_coefficients: Array2<f64>,
    #[serde(with = "codec::array1")]
    y_means: Array1<f64>,
    n_components: usize,
    training_r2: f64,
}

impl KernelPlsRegression {
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn support(&self) -> &Array2<f64> {
        &self.support
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn dual_coefficients(&self) -> &Array2<f64> {
        &self.dual_coefficients
    }

    pub fn y_means(&self) -> &Array1<f64> {
        &self.y_means
    }

    pub fn centering(&self) -> &KernelCentering {
        &self.centering
    }

    pub fn training_r2(&self) -> f64 {
        self.training_r2
    }

    pub fn predict(&self, x_new: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x_new.ncols() != self.support.ncols() {
            return Err(Error::Dimension {
                context: "kernel PLS inputs",
                expected: self.support.ncols(),
                found: x_new.ncols(),
            });
        }
        let k = kernel_matrix(&self.kernel, x_new, self.support.view())?;
        let kc = self.centering.center(&k)?;
        let mut y = kc.dot(&self.dual_coefficients);
        for mut row in y.axis_iter_mut(Axis(0)) {
            row += &self.y_means;
        }
        Ok(y)
    }
}

fn check_a(n: usize, a: usize) -> Result<()> {
    if a == 0 || a + 1 > n {
        return Err(Error::invalid(format!(
            "{a} latent variables outside 1..={} for {n} training rows",
            n.saturating_sub(1)
        )));
    }
    Ok(())
}

fn degenerate(kc: &Array2<f64>, k: &Array2<f64>) -> bool {
    let scale = k.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let spread = kc.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    !(spread > 1e-12 * scale.max(f64::MIN_POSITIVE))
}

pub fn fit_kernel_pls_regression(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    spec: &KernelSpec,
    a: usize,
) -> Result<KernelPlsRegression> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::Dimension {
            context: "kernel PLS X/Y rows",
            expected: n,
            found: y.nrows(),
        });
    }
    check_a(n, a)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel PLS input".into()));
    }
    let k = gram_matrix(spec, x)?;
    let centering = KernelCentering::fit(&k)?;
    let kc = centering.center(&k)?;
    if degenerate(&kc, &k) {
        return Err(Error::invalid(
            "degenerate kernel: all training rows look identical",
        ));
    }
    let y_means = y.mean_axis(Axis(0)).expect("n >= 2");
    let y0 = &y - &y_means;
    let factors = dual_simpls(&kc, &y0, a);
    if factors.n_components() == 0 {
        return Err(Error::invalid("kernel carries no covariance with the responses"));
    }
    let dual_coefficients = factors.coefficients(a);
    let fitted = kc.dot(&dual_coefficients) + &y_means;
    Ok(KernelPlsRegression {
        kernel: *spec,
        support: x.to_owned(),
        centering,
        training_r2: r_squared(y, fitted.view()),
        dual_coefficients,
        y_means,
        n_components: factors.n_components(),
    })
}

/// Kernel PLS-DA classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelPlsModel {
    regression: KernelPlsRegression,
    classes: Vec<u8>,
}

impl KernelPlsModel {
    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn kernel(&self) -> &KernelSpec {
        self.regression.kernel()
    }

    pub fn n_components(&self) -> usize {
        self.regression.n_components()
    }

    pub fn regression(&self) -> &KernelPlsRegression {
        &self.regression
    }

    pub fn bands(&self) -> usize {
        self.regression.support.ncols()
    }

    /// Predicted class per row plus the raw indicator scores.
    pub fn classify(&self, x_new: ArrayView2<'_, f64>) -> Result<(Vec<u8>, Array2<f64>)> {
        let scores = self.regression.predict(x_new)?;
        Ok((decode_da(&self.classes, scores.view())?, scores))
    }

    /// Pooled R² of the indicator predictions on the training rows.
    pub fn training_r2(&self) -> f64 {
        self.regression.training_r2
    }
}

pub fn fit_kernel_pls(
    x: ArrayView2<'_, f64>,
    labels: &[u8],
    spec: &KernelSpec,
    a: usize,
) -> Result<KernelPlsModel> {
    let enc = encode_da(labels)?;
    let regression = fit_kernel_pls_regression(x, enc.indicators().view(), spec, a)?;
    Ok(KernelPlsModel {
        regression,
        classes: enc.classes().to_vec(),
    })
}

pub fn classify(model: &KernelPlsModel, x_new: ArrayView2<'_, f64>) -> Result<(Vec<u8>, Array2<f64>)> {
    model.classify(x_new)
}
