//! Synthetic scenes: piecewise-linear class spectra painted into blobs, with
//! Gaussian pixel noise and optional illumination effects.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::cube::{default_class_name, HyperCube, LabelMask, UNLABELED};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WavelengthGrid {
    pub start_nm: f64,
    pub end_nm: f64,
    pub bands: usize,
}

impl WavelengthGrid {
    pub fn centers(&self) -> Vec<f64> {
        if self.bands == 1 {
            return vec![self.start_nm];
        }
        let step = (self.end_nm - self.start_nm) / (self.bands - 1) as f64;
        (0..self.bands)
            .map(|i| self.start_nm + step * i as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Material {
    pub name: String,
    pub label: u8,
    /// Class name for the mask palette; defaults to the conventional name of
    /// `label`.
    #[serde(default)]
    pub class: Option<String>,
    /// `(nm, reflectance)` knots, interpolated linearly and held constant
    /// outside the first and last knot.
    pub knots: Vec<(f64, f64)>,
    /// Standard deviation of a per-pixel multiplicative gain.
    #[serde(default)]
    pub gain_sigma: f64,
    /// Set to false to leave this material's pixels unlabeled in the mask.
    #[serde(default = "yes")]
    pub labeled: bool,
}

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

impl Material {
    pub fn template(&self, wavelengths: &[f64]) -> Vec<f64> {
        wavelengths.iter().map(|&w| interpolate(&self.knots, w)).collect()
    }
}

fn interpolate(knots: &[(f64, f64)], x: f64) -> f64 {
    let n = knots.len();
    if x <= knots[0].0 {
        return knots[0].1;
    }
    if x >= knots[n - 1].0 {
        return knots[n - 1].1;
    }
    let i = knots.partition_point(|k| k.0 <= x);
    let (x0, y0) = knots[i - 1];
    let (x1, y1) = knots[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum Blob {
    Rect {
        material: String,
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    Disk {
        material: String,
        row: f64,
        col: f64,
        radius: f64,
    },
}

impl Blob {
    fn material(&self) -> &str {
        match self {
            Blob::Rect { material, .. } | Blob::Disk { material, .. } => material,
        }
    }

    fn contains(&self, r: usize, c: usize) -> bool {
        match *self {
            Blob::Rect {
                row,
                col,
                height,
                width,
                ..
            } => r >= row && r < row + height && c >= col && c < col + width,
            Blob::Disk {
                row, col, radius, ..
            } => {
                let dr = r as f64 - row;
                let dc = c as f64 - col;
                dr * dr + dc * dc <= radius * radius
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ShadowAxis {
    Rows,
    Cols,
}

/// Multiplicative illumination ramp from `from` at the first row/column to
/// `to` at the last.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Shadow {
    pub axis: ShadowAxis,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub rows: usize,
    pub cols: usize,
    pub wavelengths: WavelengthGrid,
    pub materials: Vec<Material>,
    /// Material filling every pixel not covered by a blob.
    pub background: String,
    #[serde(default)]
    pub blobs: Vec<Blob>,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Global brightness multiplier.
    #[serde(default = "one")]
    pub illumination: f64,
    #[serde(default)]
    pub shadow: Option<Shadow>,
    /// When true, later blobs paint over earlier ones. When false,
    /// overlapping blobs with different labels are rejected.
    #[serde(default)]
    pub occlusion: bool,
}

impl SceneSpec {
    fn validate(&self) -> Result<HashMap<&str, usize>> {
        if self.rows == 0 || self.cols == 0 || self.wavelengths.bands == 0 {
            return Err(Error::invalid("scene dimensions must be positive"));
        }
        if self.wavelengths.bands > 1 && self.wavelengths.end_nm <= self.wavelengths.start_nm {
            return Err(Error::invalid("wavelength grid must be increasing"));
        }
        if !(self.noise_sigma >= 0.0) || !(self.illumination > 0.0) {
            return Err(Error::invalid("noise_sigma must be >= 0 and illumination > 0"));
        }
        let mut by_name = HashMap::new();
        for (i, m) in self.materials.iter().enumerate() {
            if m.knots.is_empty() {
                return Err(Error::invalid(format!("material {} has no knots", m.name)));
            }
            if m.knots.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::invalid(format!(
                    "material {} knots must be strictly increasing in nm",
                    m.name
                )));
            }
            if m.label == UNLABELED {
                return Err(Error::invalid("label 255 is reserved for unlabeled pixels"));
            }
            if by_name.insert(m.name.as_str(), i).is_some() {
                return Err(Error::invalid(format!("duplicate material {}", m.name)));
            }
        }
        for name in std::iter::once(self.background.as_str()).chain(self.blobs.iter().map(Blob::material)) {
            if !by_name.contains_key(name) {
                return Err(Error::invalid(format!("unknown material {name}")));
            }
        }
        Ok(by_name)
    }

    /// Material index for every pixel.
    fn paint(&self, by_name: &HashMap<&str, usize>) -> Result<Array2<usize>> {
        let bg = by_name[self.background.as_str()];
        let mut owner = Array2::from_elem((self.rows, self.cols), bg);
        let mut painted = Array2::from_elem((self.rows, self.cols), false);
        for blob in &self.blobs {
            let m = by_name[blob.material()];
            for r in 0..self.rows {
                for c in 0..self.cols {
                    if !blob.contains(r, c) {
                        continue;
                    }
                    if painted[[r, c]]
                        && !self.occlusion
                        && self.materials[owner[[r, c]]].label != self.materials[m].label
                    {
                        return Err(Error::invalid(format!(
                            "blobs of {} and {} overlap at ({r}, {c}) without occlusion order",
                            self.materials[owner[[r, c]]].name, self.materials[m].name
                        )));
                    }
                    owner[[r, c]] = m;
                    painted[[r, c]] = true;
                }
            }
        }
        Ok(owner)
    }
}

/// Renders `spec` into a cube and its ground-truth mask. Deterministic in
/// `seed`.
pub fn synth_scene(spec: &SceneSpec, seed: u64) -> Result<(HyperCube, LabelMask)> {
    let by_name = spec.validate()?;
    let owner = spec.paint(&by_name)?;
    let wl = spec.wavelengths.centers();
    let templates: Vec<Vec<f64>> = spec.materials.iter().map(|m| m.template(&wl)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let bands = wl.len();
    let mut data = Array3::zeros((spec.rows, spec.cols, bands));
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let m = owner[[r, c]];
            let mat = &spec.materials[m];
            let mut gain = spec.illumination * shadow_factor(spec, r, c);
            if mat.gain_sigma > 0.0 {
                gain *= 1.0 + mat.gain_sigma * std_normal.sample(&mut rng);
            }
            for (b, t) in templates[m].iter().enumerate() {
                let noise = if spec.noise_sigma > 0.0 {
                    spec.noise_sigma * std_normal.sample(&mut rng)
                } else {
                    0.0
                };
                data[[r, c, b]] = t * gain + noise;
            }
        }
    }

    let labels = owner.mapv(|m| {
        let mat = &spec.materials[m];
        if mat.labeled {
            mat.label
        } else {
            UNLABELED
        }
    });
    let mut palette = BTreeMap::new();
    for m in &spec.materials {
        if m.labeled {
            palette.entry(m.label).or_insert_with(|| {
                m.class
                    .clone()
                    .unwrap_or_else(|| default_class_name(m.label).to_string())
            });
        }
    }
    Ok((HyperCube::new(data, wl)?, LabelMask::new(labels, palette)?))
}

fn shadow_factor(spec: &SceneSpec, r: usize, c: usize) -> f64 {
    match &spec.shadow {
        None => 1.0,
        Some(s) => {
            let (pos, len) = match s.axis {
                ShadowAxis::Rows => (r, spec.rows),
                ShadowAxis::Cols => (c, spec.cols),
            };
            let f = if len > 1 { pos as f64 / (len - 1) as f64 } else { 0.0 };
            s.from + (s.to - s.from) * f
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sq_dist;

    fn material(name: &str, label: u8, knots: &[(f64, f64)]) -> Material {
        Material {
            name: name.into(),
            label,
            class: None,
            knots: knots.to_vec(),
            gain_sigma: 0.0,
            labeled: true,
        }
    }

    fn spec(noise: f64) -> SceneSpec {
        SceneSpec {
            rows: 6,
            cols: 8,
            wavelengths: WavelengthGrid {
                start_nm: 400.0,
                end_nm: 1000.0,
                bands: 7,
            },
            materials: vec![
                material("bg", 0, &[(400.0, 0.2), (1000.0, 0.3)]),
                material("mite", 3, &[(400.0, 0.05), (700.0, 0.4), (1000.0, 0.6)]),
            ],
            background: "bg".into(),
            blobs: vec![Blob::Rect {
                material: "mite".into(),
                row: 1,
                col: 2,
                height: 2,
                width: 3,
            }],
            noise_sigma: noise,
            illumination: 1.0,
            shadow: None,
            occlusion: false,
        }
    }

    #[test]
    fn noiseless_single_class_equals_template() {
        let mut s = spec(0.0);
        s.blobs.clear();
        let (cube, mask) = synth_scene(&s, 1).unwrap();
        let t = s.materials[0].template(cube.wavelengths_nm());
        for r in 0..cube.rows() {
            for c in 0..cube.cols() {
                assert_eq!(cube.pixel(r, c).to_vec(), t);
            }
        }
        assert_eq!(mask.count(0), 48);
    }

    #[test]
    fn disjoint_templates_separate_every_pair() {
        let (cube, mask) = synth_scene(&spec(0.0), 3).unwrap();
        assert_eq!(mask.count(3), 6);
        let (x, idx) = cube.flatten(None, None).unwrap();
        for i in 0..x.nrows() {
            for j in 0..x.nrows() {
                let (a, b) = (idx[i], idx[j]);
                if mask.get(a.0, a.1) != mask.get(b.0, b.1) {
                    assert!(sq_dist(x.row(i), x.row(j)) > 0.0);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_cube() {
        let s = spec(0.01);
        let (a, _) = synth_scene(&s, 42).unwrap();
        let (b, _) = synth_scene(&s, 42).unwrap();
        let (c, _) = synth_scene(&s, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn overlapping_blobs_need_occlusion_order() {
        let mut s = spec(0.0);
        s.materials.push(material("bee", 1, &[(400.0, 0.5)]));
        s.blobs.push(Blob::Disk {
            material: "bee".into(),
            row: 2.0,
            col: 3.0,
            radius: 1.0,
        });
        assert!(synth_scene(&s, 0).is_err());
        s.occlusion = true;
        let (_, mask) = synth_scene(&s, 0).unwrap();
        assert_eq!(mask.get(2, 3), 1);
    }

    #[test]
    fn shadow_ramp_scales_spectra() {
        let mut s = spec(0.0);
        s.blobs.clear();
        s.shadow = Some(Shadow {
            axis: ShadowAxis::Cols,
            from: 1.0,
            to: 0.5,
        });
        let (cube, _) = synth_scene(&s, 0).unwrap();
        let ratio = cube.data()[[0, 7, 3]] / cube.data()[[0, 0, 3]];
        assert!((ratio - 0.5).abs() < 1e-12);
    }

    #[test]
    fn interpolation_is_piecewise_linear() {
        let k = [(400.0, 0.0), (500.0, 1.0), (700.0, 0.0)];
        assert_eq!(interpolate(&k, 350.0), 0.0);
        assert_eq!(interpolate(&k, 450.0), 0.5);
        assert_eq!(interpolate(&k, 600.0), 0.5);
        assert_eq!(interpolate(&k, 800.0), 0.0);
    }
}
