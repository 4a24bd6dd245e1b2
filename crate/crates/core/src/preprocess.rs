//! Per-band autoscaling: subtract the band mean, divide by the band's sample
//! standard deviation (n − 1 denominator).

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};

/// Standard deviations below this are treated as zero.
pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleModel {
    #[serde(with = "codec::array1")]
    means: Array1<f64>,
    #[serde(with = "codec::array1")]
    stds: Array1<f64>,
    /// Columns whose std fell below `epsilon`; their stored std is 1.
    degenerate: Vec<bool>,
    epsilon: f64,
}

impl ScaleModel {
    pub fn fit(x: ArrayView2<'_, f64>) -> Result<Self> {
        Self::fit_with_epsilon(x, DEFAULT_EPSILON)
    }

    pub fn fit_with_epsilon(x: ArrayView2<'_, f64>, epsilon: f64) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::invalid(format!(
                "autoscaling needs at least 2 rows, got {n}"
            )));
        }
        let means = x.mean_axis(Axis(0)).expect("n >= 2");
        let mut stds = Array1::zeros(x.ncols());
        let mut degenerate = vec![false; x.ncols()];
        for (j, col) in x.axis_iter(Axis(1)).enumerate() {
            let m = means[j];
            let ss: f64 = col.iter().map(|v| (v - m) * (v - m)).sum();
            let sd = (ss / (n - 1) as f64).sqrt();
            if sd < epsilon {
                stds[j] = 1.0;
                degenerate[j] = true;
            } else {
                stds[j] = sd;
            }
        }
        Ok(Self {
            means,
            stds,
            degenerate,
            epsilon,
        })
    }

    /// Centering only: fitted means, unit stds.
    pub fn centering(x: ArrayView2<'_, f64>) -> Result<Self> {
        let mut m = Self::fit(x)?;
        m.stds.fill(1.0);
        m.degenerate.fill(false);
        Ok(m)
    }

    /// Model that leaves data unchanged.
    pub fn identity(bands: usize) -> Self {
        Self {
            means: Array1::zeros(bands),
            stds: Array1::ones(bands),
            degenerate: vec![false; bands],
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn bands(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &Array1<f64> {
        &self.means
    }

    pub fn stds(&self) -> &Array1<f64> {
        &self.stds
    }

    pub fn degenerate(&self) -> &[bool] {
        &self.degenerate
    }

    fn check(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.bands() {
            return Err(Error::Dimension {
                context: "scale model bands",
                expected: self.bands(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check(&x)?;
        let mut out = x.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            row -= &self.means;
            row /= &self.stds;
        }
        Ok(out)
    }

    pub fn invert(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check(&x)?;
        let mut out = x.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            row *= &self.stds;
            row += &self.means;
        }
        Ok(out)
    }

    /// Same model restricted to a subset of bands.
    pub fn select(&self, bands: &[usize]) -> ScaleModel {
        ScaleModel {
            means: bands.iter().map(|&b| self.means[b]).collect(),
            stds: bands.iter().map(|&b| self.stds[b]).collect(),
            degenerate: bands.iter().map(|&b| self.degenerate[b]).collect(),
            epsilon: self.epsilon,
        }
    }
}

pub fn fit_scale(x: ArrayView2<'_, f64>) -> Result<ScaleModel> {
    ScaleModel::fit(x)
}

pub fn apply_scale(model: &ScaleModel, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    model.apply(x)
}

pub fn invert_scale(model: &ScaleModel, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    model.invert(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_by_hand() {
        let x = array![[0.0, 2.0], [2.0, 4.0]];
        let m = fit_scale(x.view()).unwrap();
        assert_eq!(m.means().to_vec(), vec![1.0, 3.0]);
        for s in m.stds() {
            assert!((s - 2f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_column_is_flagged() {
        let x = array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]];
        let m = fit_scale(x.view()).unwrap();
        assert_eq!(m.degenerate(), &[false, true]);
        assert_eq!(m.stds()[1], 1.0);
        let z = m.apply(x.view()).unwrap();
        assert!(z.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn already_standard_columns() {
        let x = array![[-1.0, 1.0], [0.0, 0.0], [1.0, -1.0]];
        let m = fit_scale(x.view()).unwrap();
        for j in 0..2 {
            assert!(m.means()[j].abs() < 1e-12);
            assert!((m.stds()[j] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn self_application_standardizes() {
        let x = array![[1.0, 10.0], [4.0, 20.0], [7.0, 60.0], [0.5, -3.0]];
        let m = fit_scale(x.view()).unwrap();
        let z = m.apply(x.view()).unwrap();
        let again = fit_scale(z.view()).unwrap();
        for j in 0..2 {
            assert!(again.means()[j].abs() < 1e-12);
            assert!((again.stds()[j] - 1.0).abs() < 1e-12);
        }
        let mean_row = m.means().clone().insert_axis(Axis(0));
        assert!(m.apply(mean_row.view()).unwrap().iter().all(|&v| v == 0.0));
        let zero = Array2::zeros((1, 2));
        assert_eq!(m.invert(zero.view()).unwrap(), mean_row);
    }

    #[test]
    fn errors() {
        assert!(fit_scale(array![[1.0, 2.0]].view()).is_err());
        let m = ScaleModel::identity(3);
        assert!(m.apply(array![[1.0, 2.0]].view()).is_err());
        assert!(m.invert(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn new_data_uses_stored_statistics() {
        let calib = array![[0.0, 1.0], [2.0, 3.0], [4.0, 8.0]];
        let other = array![[10.0, 1.0], [11.0, 7.0], [15.0, 2.0]];
        let m = fit_scale(calib.view()).unwrap();
        let stored = m.apply(other.view()).unwrap();
        let own = fit_scale(other.view()).unwrap().apply(other.view()).unwrap();
        assert!(stored.iter().zip(own.iter()).any(|(a, b)| (a - b).abs() > 1e-6));
    }

    proptest! {
        #[test]
        fn apply_invert_roundtrip(
            rows in 2usize..8,
            cols in 1usize..6,
            seed in proptest::collection::vec(-1e3f64..1e3, 48),
        ) {
            let x = Array2::from_shape_fn((rows, cols), |(i, j)| seed[(i * cols + j) % seed.len()] * (1.0 + i as f64));
            let m = fit_scale(x.view()).unwrap();
            let back = m.invert(m.apply(x.view()).unwrap().view()).unwrap();
            for (a, b) in back.iter().zip(x.iter()) {
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
            let fwd = m.apply(m.invert(x.view()).unwrap().view()).unwrap();
            for (a, b) in fwd.iter().zip(x.iter()) {
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
        }
    }
}
