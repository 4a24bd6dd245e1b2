use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label value reserved for pixels without ground truth.
pub const UNLABELED: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interleave {
    Bsq,
    Bil,
    Bip,
}

impl Interleave {
    pub fn as_str(self) -> &'static str {
        match self {
            Interleave::Bsq => "bsq",
            Interleave::Bil => "bil",
            Interleave::Bip => "bip",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bsq" => Some(Interleave::Bsq),
            "bil" => Some(Interleave::Bil),
            "bip" => Some(Interleave::Bip),
            _ => None,
        }
    }
}

/// Reflectance cube indexed `(row, col, band)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    data: Array3<f64>,
    wavelengths_nm: Vec<f64>,
    interleave: Interleave,
}

pub(crate) fn check_wavelengths(wl: &[f64], bands: usize) -> Result<()> {
    if wl.len() != bands {
        return Err(Error::Dimension {
            context: "wavelength list",
            expected: bands,
            found: wl.len(),
        });
    }
    if wl.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("wavelength list".into()));
    }
    if wl.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("wavelengths must be strictly increasing"));
    }
    Ok(())
}

impl HyperCube {
    pub fn new(data: Array3<f64>, wavelengths_nm: Vec<f64>) -> Result<Self> {
        let (rows, cols, bands) = data.dim();
        if rows == 0 || cols == 0 || bands == 0 {
            return Err(Error::invalid(format!(
                "cube dimensions must be positive, got {rows}x{cols}x{bands}"
            )));
        }
        check_wavelengths(&wavelengths_nm, bands)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cube data".into()));
        }
        Ok(Self {
            data,
            wavelengths_nm,
            interleave: Interleave::Bsq,
        })
    }

    pub fn with_interleave(mut self, interleave: Interleave) -> Self {
        self.interleave = interleave;
        self
    }

    pub fn rows(&self) -> usize {
        self.data.dim().0
    }

    pub fn cols(&self) -> usize {
        self.data.dim().1
    }

    pub fn bands(&self) -> usize {
        self.data.dim().2
    }

    pub fn wavelengths_nm(&self) -> &[f64] {
        &self.wavelengths_nm
    }

    /// Interleave the cube was read from (or will be written as by default).
    pub fn interleave(&self) -> Interleave {
        self.interleave
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> ArrayView1<'_, f64> {
        self.data.slice(ndarray::s![row, col, ..])
    }

    /// Cube restricted to the given bands, kept in ascending band order
    /// whatever the order of `bands`. Duplicates are dropped.
    pub fn select_bands(&self, bands: &[usize]) -> Result<HyperCube> {
        let mut bands = bands.to_vec();
        bands.sort_unstable();
        bands.dedup();
        if bands.is_empty() {
            return Err(Error::invalid("empty band list"));
        }
        if let Some(&b) = bands.iter().find(|&&b| b >= self.bands()) {
            return Err(Error::invalid(format!("band index {b} out of range")));
        }
        let data = Array3::from_shape_fn((self.rows(), self.cols(), bands.len()), |(r, c, k)| {
            self.data[[r, c, bands[k]]]
        });
        let wl = bands.iter().map(|&b| self.wavelengths_nm[b]).collect();
        HyperCube::new(data, wl)
    }

    /// Pixel spectra as matrix rows in row-major scan order, optionally
    /// filtered to pixels whose mask label is in `keep_labels`.
    pub fn flatten(
        &self,
        mask: Option<&LabelMask>,
        keep_labels: Option<&BTreeSet<u8>>,
    ) -> Result<(Array2<f64>, Vec<(usize, usize)>)> {
        if keep_labels.is_some() && mask.is_none() {
            return Err(Error::invalid("keep_labels requires a label mask"));
        }
        if let Some(m) = mask {
            m.check_matches(self)?;
        }
        let mut index = Vec::with_capacity(self.rows() * self.cols());
        for r in 0..self.rows() {
            for c in 0..self.cols() {
                let keep = match (mask, keep_labels) {
                    (Some(m), Some(keep)) => keep.contains(&m.get(r, c)),
                    _ => true,
                };
                if keep {
                    index.push((r, c));
                }
            }
        }
        let x = Array2::from_shape_fn((index.len(), self.bands()), |(i, b)| {
            let (r, c) = index[i];
            self.data[[r, c, b]]
        });
        Ok((x, index))
    }

    /// Index of the band whose center is nearest to `target_nm`; ties go to the
    /// lower index.
    pub fn nm_to_band(&self, target_nm: f64) -> Result<usize> {
        nearest_band(&self.wavelengths_nm, target_nm)
    }
}

pub(crate) fn nearest_band(wl: &[f64], target_nm: f64) -> Result<usize> {
    let n = wl.len();
    if n == 0 || !target_nm.is_finite() {
        return Err(Error::invalid("no bands or non-finite target"));
    }
    let (lo_slack, hi_slack) = if n == 1 {
        (0.0, 0.0)
    } else {
        ((wl[1] - wl[0]) / 2.0, (wl[n - 1] - wl[n - 2]) / 2.0)
    };
    if target_nm < wl[0] - lo_slack || target_nm > wl[n - 1] + hi_slack {
        return Err(Error::invalid(format!(
            "{target_nm} nm outside [{}, {}] nm",
            wl[0],
            wl[n - 1]
        )));
    }
    // first index with wl >= target
    let hi = wl.partition_point(|&w| w < target_nm);
    if hi == 0 {
        return Ok(0);
    }
    if hi == n {
        return Ok(n - 1);
    }
    let lo = hi - 1;
    if target_nm - wl[lo] <= wl[hi] - target_nm {
        Ok(lo)
    } else {
        Ok(hi)
    }
}

/// Inverse of [`HyperCube::flatten`]: scatters matrix rows back to pixel
/// positions. Pixels not named in `index` are zero.
pub fn unflatten(
    x: &Array2<f64>,
    index: &[(usize, usize)],
    rows: usize,
    cols: usize,
    wavelengths_nm: Vec<f64>,
) -> Result<HyperCube> {
    if x.nrows() != index.len() {
        return Err(Error::Dimension {
            context: "unflatten index",
            expected: x.nrows(),
            found: index.len(),
        });
    }
    let mut data = Array3::zeros((rows, cols, x.ncols()));
    for (i, &(r, c)) in index.iter().enumerate() {
        if r >= rows || c >= cols {
            return Err(Error::invalid(format!("pixel ({r}, {c}) outside {rows}x{cols}")));
        }
        data.slice_mut(ndarray::s![r, c, ..]).assign(&x.row(i));
    }
    HyperCube::new(data, wavelengths_nm)
}

/// Per-pixel class labels with a name for each used label value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    labels: Array2<u8>,
    palette: BTreeMap<u8, String>,
}

impl LabelMask {
    pub fn new(labels: Array2<u8>, palette: BTreeMap<u8, String>) -> Result<Self> {
        if labels.nrows() == 0 || labels.ncols() == 0 {
            return Err(Error::invalid("empty label mask"));
        }
        if let Some(l) = labels
            .iter()
            .find(|&&l| l != UNLABELED && !palette.contains_key(&l))
        {
            return Err(Error::invalid(format!("label {l} has no palette entry")));
        }
        Ok(Self { labels, palette })
    }

    /// Mask where every label in use gets a generic name unless it is one of
    /// the conventional bee/mite labels.
    pub fn with_default_palette(labels: Array2<u8>) -> Result<Self> {
        let mut palette = BTreeMap::new();
        for &l in labels.iter() {
            if l != UNLABELED {
                palette
                    .entry(l)
                    .or_insert_with(|| default_class_name(l).to_string());
            }
        }
        Self::new(labels, palette)
    }

    pub fn rows(&self) -> usize {
        self.labels.nrows()
    }

    pub fn cols(&self) -> usize {
        self.labels.ncols()
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[[row, col]]
    }

    pub fn labels(&self) -> &Array2<u8> {
        &self.labels
    }

    pub fn palette(&self) -> &BTreeMap<u8, String> {
        &self.palette
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub(crate) fn check_matches(&self, cube: &HyperCube) -> Result<()> {
        if self.rows() != cube.rows() || self.cols() != cube.cols() {
            return Err(Error::invalid(format!(
                "mask is {}x{} but cube is {}x{}",
                self.rows(),
                self.cols(),
                cube.rows(),
                cube.cols()
            )));
        }
        Ok(())
    }
}

pub fn default_class_name(label: u8) -> &'static str {
    match label {
        0 => "background",
        1 => "bee-body",
        2 => "bee-wing",
        3 => "mite",
        UNLABELED => "unlabeled",
        _ => "class",
    }
}
