//! PCA on autoscaled spectra, correlation of component scores with a two-class
//! indicator, and reconstruction from a chosen subset of components.
//!
//! Loadings come from a thin SVD of the centered matrix. Each loading column
//! is signed so that its largest-magnitude entry is positive.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::linalg::{column_means, norm, pearson, thin_svd};

/// Upper bound on the default number of retained components.
pub const DEFAULT_MAX_COMPONENTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// bands × k, orthonormal columns.
    #[serde(with = "codec::array2")]
    loadings: Array2<f64>,
    #[serde(with = "codec::array1")]
    singular_values: Array1<f64>,
    #[serde(with = "codec::array1")]
    explained_variance_ratio: Array1<f64>,
    n_samples: usize,
}

/// Default component count: `min(rows − 1, bands, 20)`.
pub fn default_components(rows: usize, bands: usize) -> usize {
    rows.saturating_sub(1).min(bands).min(DEFAULT_MAX_COMPONENTS)
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn bands(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn loadings(&self) -> &Array2<f64> {
        &self.loadings
    }

    pub fn singular_values(&self) -> &Array1<f64> {
        &self.singular_values
    }

    pub fn explained_variance_ratio(&self) -> &Array1<f64> {
        &self.explained_variance_ratio
    }

    /// Score variance of each component (`s² / (n − 1)`).
    pub fn explained_variance(&self) -> Array1<f64> {
        let d = (self.n_samples.max(2) - 1) as f64;
        self.singular_values.mapv(|s| s * s / d)
    }

    /// Scores of new (already scaled) rows: `X_new · P`.
    pub fn project(&self, x_new: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x_new.ncols() != self.bands() {
            return Err(Error::Dimension {
                context: "PCA projection bands",
                expected: self.bands(),
                found: x_new.ncols(),
            });
        }
        Ok(x_new.dot(&self.loadings))
    }

    /// `T[:, sel] · P[:, sel]ᵀ`, still in scaled space.
    pub fn reconstruct(
        &self,
        scores: ArrayView2<'_, f64>,
        selection: &ComponentSelection,
    ) -> Result<Array2<f64>> {
        let sel = &selection.selected;
        if sel.is_empty() {
            return Err(Error::invalid("empty component selection"));
        }
        if scores.ncols() != self.k() {
            return Err(Error::Dimension {
                context: "PCA scores",
                expected: self.k(),
                found: scores.ncols(),
            });
        }
        if let Some(&i) = sel.iter().find(|&&i| i >= self.k()) {
            return Err(Error::invalid(format!(
                "component {} out of range (model has {})",
                i + 1,
                self.k()
            )));
        }
        let t = scores.select(Axis(1), sel);
        let p = self.loadings.select(Axis(1), sel);
        Ok(t.dot(&p.t()))
    }

    /// Model restricted to the first `k` components.
    pub fn truncate(&self, k: usize) -> PcaModel {
        let k = k.min(self.k());
        PcaModel {
            loadings: self.loadings.slice(s![.., ..k]).to_owned(),
            singular_values: self.singular_values.slice(s![..k]).to_owned(),
            explained_variance_ratio: self.explained_variance_ratio.slice(s![..k]).to_owned(),
            n_samples: self.n_samples,
        }
    }
}

/// Fits `k` components to a centered matrix. Returns the model and the
/// training scores `T = X·P`.
pub fn fit_pca(x: ArrayView2<'_, f64>, k: usize) -> Result<(PcaModel, Array2<f64>)> {
    let (n, bands) = x.dim();
    if n < 2 {
        return Err(Error::invalid("PCA needs at least 2 rows"));
    }
    let max_k = (n - 1).min(bands);
    if k == 0 || k > max_k {
        return Err(Error::invalid(format!(
            "k = {k} outside 1..={max_k} for a {n}x{bands} matrix"
        )));
    }
    let mean_norm = norm(column_means(x).view());
    if mean_norm >= 1e-6 {
        return Err(Error::invalid(format!(
            "PCA input is not centered (column-mean norm {mean_norm:.3e})"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCA input".into()));
    }

    let (_, sv, v) = thin_svd(x)?;
    let total: f64 = x.iter().map(|v| v * v).sum();
    let mut loadings = v.slice(s![.., ..k]).to_owned();
    for mut col in loadings.axis_iter_mut(Axis(1)) {
        let mut best = 0usize;
        for (i, val) in col.iter().enumerate() {
            if val.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
    let singular_values = sv.slice(s![..k]).to_owned();
    let explained_variance_ratio = if total > 0.0 {
        singular_values.mapv(|s| s * s / total)
    } else {
        Array1::zeros(k)
    };
    let model = PcaModel {
        loadings,
        singular_values,
        explained_variance_ratio,
        n_samples: n,
    };
    let scores = x.dot(&model.loadings);
    Ok((model, scores))
}

pub fn project(model: &PcaModel, x_new: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    model.project(x_new)
}

pub fn reconstruct(
    model: &PcaModel,
    scores: ArrayView2<'_, f64>,
    selection: &ComponentSelection,
) -> Result<Array2<f64>> {
    model.reconstruct(scores, selection)
}

/// Absolute Pearson correlation of each score column with `y`. A score column
/// with zero variance gets 0.
pub fn correlate_scores(scores: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
    if scores.nrows() != y.len() {
        return Err(Error::Dimension {
            context: "score/indicator rows",
            expected: scores.nrows(),
            found: y.len(),
        });
    }
    if y.len() < 2 {
        return Err(Error::invalid("need at least 2 labeled rows"));
    }
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if ymin == ymax {
        return Err(Error::SingleClass(1));
    }
    Ok(scores
        .axis_iter(Axis(1))
        .map(|t| pearson(t, y).map_or(0.0, f64::abs))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    TopN(usize),
    Threshold(f64),
}

impl Default for SelectionRule {
    fn default() -> Self {
        SelectionRule::TopN(2)
    }
}

/// Components chosen for reconstruction (0-based indices, ordered by
/// decreasing |ρ|, ties to the lower index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSelection {
    pub selected: Vec<usize>,
    pub correlations: Vec<f64>,
    pub rule: SelectionRule,
}

impl ComponentSelection {
    /// 1-based component numbers, as usually reported.
    pub fn one_based(&self) -> Vec<usize> {
        self.selected.iter().map(|i| i + 1).collect()
    }
}

pub fn select_components(correlations: &[f64], rule: SelectionRule) -> Result<ComponentSelection> {
    let mut order: Vec<usize> = (0..correlations.len()).collect();
    order.sort_by(|&a, &b| {
        correlations[b]
            .total_cmp(&correlations[a])
            .then(a.cmp(&b))
    });
    let selected: Vec<usize> = match rule {
        SelectionRule::TopN(n) => {
            if n == 0 {
                return Err(Error::invalid("top-n rule needs n >= 1"));
            }
            order.into_iter().take(n).collect()
        }
        SelectionRule::Threshold(t) => {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::invalid("threshold must lie in (0, 1)"));
            }
            order.into_iter().filter(|&i| correlations[i] >= t).collect()
        }
    };
    if selected.is_empty() {
        return Err(Error::invalid("no component passes the selection rule"));
    }
    Ok(ComponentSelection {
        selected,
        correlations: correlations.to_vec(),
        rule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigen;
    use ndarray::{array, Array};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn centered_random(n: usize, p: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0));
        let m = x.mean_axis(Axis(0)).unwrap();
        x -= &m;
        x
    }

    #[test]
    fn rank_one_has_all_variance_in_first_component() {
        let v = array![1.0, -2.0, 0.5];
        let coef = array![-1.5, -0.5, 0.5, 1.5];
        let x = Array2::from_shape_fn((4, 3), |(i, j)| coef[i] * v[j]);
        let (m, t) = fit_pca(x.view(), 1).unwrap();
        assert!((m.explained_variance_ratio()[0] - 1.0).abs() < 1e-10);
        let sel = select_components(&[1.0], SelectionRule::TopN(1)).unwrap();
        let rec = m.reconstruct(t.view(), &sel).unwrap();
        for (a, b) in rec.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        // sign convention: -2 is the largest magnitude entry of v, so flipped
        assert!(m.loadings()[[1, 0]] > 0.0);
    }

    #[test]
    fn full_rank_reconstructs_exactly() {
        let x = centered_random(12, 5, 1);
        let (m, t) = fit_pca(x.view(), 5).unwrap();
        let sel = select_components(&[0.1; 5], SelectionRule::TopN(5)).unwrap();
        let rec = m.reconstruct(t.view(), &sel).unwrap();
        for (a, b) in rec.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
        let ptp = m.loadings().t().dot(m.loadings());
        for ((i, j), v) in ptp.indexed_iter() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-8);
        }
    }

    #[test]
    fn matches_covariance_eigen_oracle() {
        let x = centered_random(50, 10, 7);
        let (m, _) = fit_pca(x.view(), 10).unwrap();
        let cov = x.t().dot(&x) / 49.0;
        let (vals, _) = sym_eigen(cov.view());
        let got = m.explained_variance();
        for i in 0..10 {
            assert!((got[i] - vals[i]).abs() < 1e-8, "{i}: {} vs {}", got[i], vals[i]);
        }
        let ratios = m.explained_variance_ratio();
        assert!(ratios.windows(2).into_iter().all(|w| w[0] >= w[1]));
        assert!(ratios.sum() <= 1.0 + 1e-8);
    }

    #[test]
    fn rejects_uncentered_or_oversized() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 7.0]];
        assert!(fit_pca(x.view(), 1).is_err());
        let xc = centered_random(3, 4, 2);
        assert!(fit_pca(xc.view(), 3).is_err());
        assert!(fit_pca(xc.view(), 0).is_err());
        assert!(fit_pca(xc.view(), 2).is_ok());
    }

    #[test]
    fn projection_examples() {
        let x = centered_random(20, 6, 3);
        let (m, t) = fit_pca(x.view(), 4).unwrap();
        let again = m.project(x.view()).unwrap();
        for (a, b) in again.iter().zip(t.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
        let zero = Array2::zeros((1, 6));
        assert!(m.project(zero.view()).unwrap().iter().all(|&v| v == 0.0));
        // linear combinations of training rows project to the same combination of scores
        let comb = array![[2.0, -1.0], [0.5, 0.5]];
        let rows = x.slice(s![0..2, ..]);
        let mixed = comb.dot(&rows);
        let want = comb.dot(&t.slice(s![0..2, ..]));
        let got = m.project(mixed.view()).unwrap();
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(m.project(Array2::zeros((1, 5)).view()).is_err());
    }

    #[test]
    fn correlation_examples() {
        let y = array![0.0, 1.0, 1.0, 0.0, 1.0];
        let t = Array2::from_shape_fn((5, 2), |(i, j)| if j == 0 { 2.0 * y[i] + 3.0 } else { -y[i] });
        let r = correlate_scores(t.view(), y.view()).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-12 && (r[1] - 1.0).abs() < 1e-12);
        assert!(correlate_scores(t.view(), Array1::ones(5).view()).is_err());
    }

    #[test]
    fn uncorrelated_scores_have_small_rho() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let y = Array1::from_iter((0..n).map(|i| (i % 2) as f64));
        let t = Array2::from_shape_fn((n, 1), |_| rng.random_range(-1.0..1.0));
        let r = correlate_scores(t.view(), y.view()).unwrap();
        assert!(r[0] < 0.05);
    }

    #[test]
    fn selection_rules() {
        let rho = [0.1, 0.9, 0.8];
        let top = select_components(&rho, SelectionRule::TopN(2)).unwrap();
        assert_eq!(top.one_based(), vec![2, 3]);
        let thr = select_components(&rho, SelectionRule::Threshold(0.5)).unwrap();
        assert_eq!(thr.one_based(), vec![2, 3]);
        assert!(select_components(&rho, SelectionRule::Threshold(0.95)).is_err());
        let tie = select_components(&[0.5, 0.5, 0.2], SelectionRule::TopN(1)).unwrap();
        assert_eq!(tie.selected, vec![0]);
    }

    #[test]
    fn empty_or_out_of_range_selection() {
        let x = centered_random(10, 4, 5);
        let (m, t) = fit_pca(x.view(), 2).unwrap();
        let empty = ComponentSelection {
            selected: vec![],
            correlations: vec![],
            rule: SelectionRule::TopN(1),
        };
        assert!(m.reconstruct(t.view(), &empty).is_err());
        let oob = ComponentSelection {
            selected: vec![2],
            ..empty
        };
        assert!(m.reconstruct(t.view(), &oob).is_err());
    }
}
