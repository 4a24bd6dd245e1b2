//! Stationary kernels, feature-space centering, kernel PLS-DA and the Kernel
//! Flows optimizer that tunes the kernel lengthscale.

mod flows;
mod kpls;

pub use flows::{
    kf_gradient, kf_loss, kf_optimize, median_pairwise_distance, r2_by_latent_count, KfBatch,
    KfConfig, KfOutcome, KfTraceRow,
};
pub use kpls::{classify, fit_kernel_pls, fit_kernel_pls_regression, KernelPlsModel, KernelPlsRegression};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use ndarray::parallel::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    Laplacian,
    /// Matérn with ν = 5/2.
    Matern52,
    Cauchy,
    /// Plain inner product. Used to check kernel PLS against linear SIMPLS;
    /// ignores the lengthscale.
    #[doc(hidden)]
    Linear,
}

impl KernelFamily {
    pub const STATIONARY: [KernelFamily; 4] = [
        KernelFamily::Gaussian,
        KernelFamily::Laplacian,
        KernelFamily::Matern52,
        KernelFamily::Cauchy,
    ];

    /// Kernel value at squared distance `r2` for unit variance.
    pub fn profile(self, r2: f64, lengthscale: f64) -> f64 {
        let l = lengthscale;
        match self {
            KernelFamily::Gaussian => (-r2 / (2.0 * l * l)).exp(),
            KernelFamily::Laplacian => (-r2.sqrt() / l).exp(),
            KernelFamily::Matern52 => {
                let s = 5f64.sqrt() * r2.sqrt() / l;
                (1.0 + s + 5.0 * r2 / (3.0 * l * l)) * (-s).exp()
            }
            KernelFamily::Cauchy => 1.0 / (1.0 + r2 / (l * l)),
            KernelFamily::Linear => unreachable!("linear kernel has no distance profile"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscale: f64,
    #[serde(default = "unit")]
    pub variance: f64,
}

fn unit() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn new(family: KernelFamily, lengthscale: f64) -> Self {
        Self {
            family,
            lengthscale,
            variance: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::invalid(format!(
                "kernel lengthscale must be positive, got {}",
                self.lengthscale
            )));
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::invalid(format!(
                "kernel variance must be positive, got {}",
                self.variance
            )));
        }
        Ok(())
    }

    pub fn with_lengthscale(self, lengthscale: f64) -> Self {
        Self {
            lengthscale,
            ..self
        }
    }

    /// Kernel matrix from precomputed squared distances.
    pub(crate) fn from_sq_dists(&self, d2: &Array2<f64>) -> Array2<f64> {
        let (fam, l, v) = (self.family, self.lengthscale, self.variance);
        d2.mapv(|r2| v * fam.profile(r2, l))
    }
}

/// Squared Euclidean distances between the rows of `a` and `b`.
pub(crate) fn sq_dists(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let na: Array1<f64> = a.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
    let nb: Array1<f64> = b.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
    let mut d = a.dot(&b.t());
    d.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (na[i] + nb[j] - 2.0 * *v).max(0.0);
            }
        });
    d
}

/// Squared distances among the rows of `a`: exactly symmetric with a zero
/// diagonal.
pub(crate) fn sq_dists_self(a: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut d = sq_dists(a, a);
    let n = d.nrows();
    for i in 0..n {
        d[[i, i]] = 0.0;
        for j in 0..i {
            let v = 0.5 * (d[[i, j]] + d[[j, i]]);
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// `k(aᵢ, bⱼ)` for every row pair.
pub fn kernel_matrix(
    spec: &KernelSpec,
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    spec.validate()?;
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension {
            context: "kernel inputs",
            expected: a.ncols(),
            found: b.ncols(),
        });
    }
    if spec.family == KernelFamily::Linear {
        return Ok(a.dot(&b.t()) * spec.variance);
    }
    Ok(spec.from_sq_dists(&sq_dists(a, b)))
}

/// Symmetric training Gram matrix; the diagonal equals the variance exactly
/// for stationary families.
pub fn gram_matrix(spec: &KernelSpec, a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    spec.validate()?;
    if spec.family == KernelFamily::Linear {
        let k = a.dot(&a.t()) * spec.variance;
        return Ok(symmetrize(k));
    }
    Ok(spec.from_sq_dists(&sq_dists_self(a)))
}

fn symmetrize(mut k: Array2<f64>) -> Array2<f64> {
    let n = k.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (k[[i, j]] + k[[j, i]]);
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

/// Training-kernel statistics for centering in feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelCentering {
    #[serde(with = "codec::array1")]
    col_means: Array1<f64>,
    grand_mean: f64,
}

impl KernelCentering {
    pub fn fit(k_train: &Array2<f64>) -> Result<Self> {
        if k_train.nrows() != k_train.ncols() || k_train.nrows() == 0 {
            return Err(Error::invalid("training kernel must be square and non-empty"));
        }
        let col_means = k_train.mean_axis(Axis(0)).expect("non-empty");
        let grand_mean = col_means.mean().expect("non-empty");
        Ok(Self {
            col_means,
            grand_mean,
        })
    }

    pub fn n_train(&self) -> usize {
        self.col_means.len()
    }

    /// `K − 1K/n − K1/n + 1K1/n²` for a kernel between new points (rows) and
    /// the training points (columns). Applied to the training kernel itself
    /// this is the usual double centering.
    pub fn center(&self, k: &Array2<f64>) -> Result<Array2<f64>> {
        if k.ncols() != self.n_train() {
            return Err(Error::Dimension {
                context: "kernel centering columns",
                expected: self.n_train(),
                found: k.ncols(),
            });
        }
        let mut out = k.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            let rm = row.mean().expect("non-empty");
            for (j, v) in row.iter_mut().enumerate() {
                *v += self.grand_mean - self.col_means[j] - rm;
            }
        }
        Ok(out)
    }
}

pub fn center_kernel(k: &Array2<f64>, stats: &KernelCentering) -> Result<Array2<f64>> {
    stats.center(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigen;
    use ndarray::{array, Array};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_is_the_variance() {
        let x = array![[0.3, -1.2], [4.0, 2.0], [0.0, 0.0]];
        for fam in KernelFamily::STATIONARY {
            let spec = KernelSpec {
                family: fam,
                lengthscale: 0.7,
                variance: 2.5,
            };
            let k = gram_matrix(&spec, x.view()).unwrap();
            for i in 0..3 {
                assert_eq!(k[[i, i]], 2.5);
            }
        }
    }

    #[test]
    fn gaussian_at_unit_distance() {
        let a = array![[0.0, 0.0]];
        let b = array![[1.0, 0.0]];
        let k = kernel_matrix(&KernelSpec::new(KernelFamily::Gaussian, 1.0), a.view(), b.view()).unwrap();
        assert!((k[[0, 0]] - (-0.5f64).exp()).abs() < 1e-15);
        let m = kernel_matrix(&KernelSpec::new(KernelFamily::Matern52, 2.0), a.view(), b.view()).unwrap();
        let s = 5f64.sqrt() / 2.0;
        assert!((m[[0, 0]] - (1.0 + s + 5.0 / 12.0) * (-s).exp()).abs() < 1e-15);
        let c = kernel_matrix(&KernelSpec::new(KernelFamily::Cauchy, 2.0), a.view(), b.view()).unwrap();
        assert!((c[[0, 0]] - 0.8).abs() < 1e-15);
        let l = kernel_matrix(&KernelSpec::new(KernelFamily::Laplacian, 0.5), a.view(), b.view()).unwrap();
        assert!((l[[0, 0]] - (-2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        let a = array![[0.0]];
        for l in [0.0, -1.0, f64::NAN] {
            assert!(kernel_matrix(&KernelSpec::new(KernelFamily::Gaussian, l), a.view(), a.view()).is_err());
        }
        let b = array![[0.0, 1.0]];
        assert!(kernel_matrix(&KernelSpec::new(KernelFamily::Gaussian, 1.0), a.view(), b.view()).is_err());
    }

    #[test]
    fn gram_matrices_are_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array::from_shape_fn((30, 4), |_| rng.random_range(-2.0..2.0));
        for fam in KernelFamily::STATIONARY {
            let k = gram_matrix(&KernelSpec::new(fam, 1.3), x.view()).unwrap();
            let (vals, _) = sym_eigen(k.view());
            assert!(vals[vals.len() - 1] >= -1e-8, "{fam:?}");
        }
    }

    #[test]
    fn centering_zeroes_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array::from_shape_fn((12, 3), |_| rng.random_range(-1.0..1.0));
        let k = gram_matrix(&KernelSpec::new(KernelFamily::Gaussian, 0.8), x.view()).unwrap();
        let stats = KernelCentering::fit(&k).unwrap();
        let kc = stats.center(&k).unwrap();
        for m in kc.mean_axis(Axis(0)).unwrap().iter().chain(kc.mean_axis(Axis(1)).unwrap().iter()) {
            assert!(m.abs() < 1e-10);
        }
        let single = array![[1.0]];
        let s1 = KernelCentering::fit(&single).unwrap();
        assert_eq!(s1.center(&single).unwrap(), array![[0.0]]);
        assert!(stats.center(&Array2::zeros((1, 3))).is_err());
    }

    #[test]
    fn cross_centering_matches_explicit_features() {
        // k(a, b) = (a·b)² on 2-d inputs has the explicit map
        // φ(x) = (x₀², √2 x₀x₁, x₁²)
        let phi = |x: &[f64]| vec![x[0] * x[0], 2f64.sqrt() * x[0] * x[1], x[1] * x[1]];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let train = Array::from_shape_fn((8, 2), |_| rng.random_range(-1.0..1.0));
        let test = Array::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0));
        let poly = |a: &Array2<f64>, b: &Array2<f64>| a.dot(&b.t()).mapv(|v| v * v);
        let k = poly(&train, &train);
        let kt = poly(&test, &train);
        let stats = KernelCentering::fit(&k).unwrap();
        let got = stats.center(&kt).unwrap();

        let f_train = Array2::from_shape_fn((8, 3), |(i, j)| phi(train.row(i).as_slice().unwrap())[j]);
        let f_test = Array2::from_shape_fn((3, 3), |(i, j)| phi(test.row(i).as_slice().unwrap())[j]);
        let mean = f_train.mean_axis(Axis(0)).unwrap();
        let want = (&f_test - &mean).dot(&(&f_train - &mean).t());
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
