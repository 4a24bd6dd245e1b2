//! Run configuration, read from JSON. Unknown keys are rejected at every
//! level so that typos fail loudly instead of silently using a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::{
    EscalationConfig, PixelClass, DEFAULT_K_MAX, DEFAULT_MAX_ITER, DEFAULT_RESTARTS, DEFAULT_TOL,
};
use crate::error::{Error, Result};
use crate::kernel::{KernelFamily, KfConfig};
use crate::pca::SelectionRule;
use crate::specdata::UNLABELED;
use crate::wavesel::{DEFAULT_INIT, DEFAULT_LV_CAP, DEFAULT_TAIL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Workflow {
    #[default]
    Kmeans,
    Kfpls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandSelection {
    #[default]
    None,
    R2,
    Covproc,
}

/// Which mask labels count as mite, bee and other. Labels not listed are
/// treated as unlabeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassRoles {
    pub mite: Vec<u8>,
    pub bee: Vec<u8>,
    #[serde(default)]
    pub other: Vec<u8>,
}

impl Default for ClassRoles {
    fn default() -> Self {
        Self {
            mite: vec![3],
            bee: vec![1, 2],
            other: vec![0],
        }
    }
}

impl ClassRoles {
    pub fn role(&self, label: u8) -> Option<PixelClass> {
        if label == UNLABELED {
            None
        } else if self.mite.contains(&label) {
            Some(PixelClass::Mite)
        } else if self.bee.contains(&label) {
            Some(PixelClass::Bee)
        } else if self.other.contains(&label) {
            Some(PixelClass::Other)
        } else {
            None
        }
    }

    fn validate(&self) -> Result<()> {
        if self.mite.is_empty() || self.bee.is_empty() {
            return Err(Error::invalid("classes.mite and classes.bee must be non-empty"));
        }
        let all: Vec<u8> = self.mite.iter().chain(&self.bee).chain(&self.other).copied().collect();
        for (i, a) in all.iter().enumerate() {
            if *a == UNLABELED {
                return Err(Error::invalid("label 255 is reserved for unlabeled pixels"));
            }
            if all[..i].contains(a) {
                return Err(Error::invalid(format!("label {a} is assigned to two classes")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaConfig {
    /// Components to compute; defaults to `min(20, rows − 1, bands)`.
    pub max_components: Option<usize>,
    pub rule: SelectionRule,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self {
            max_components: None,
            rule: SelectionRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub k0: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k0: 2,
            k_max: DEFAULT_K_MAX,
            restarts: DEFAULT_RESTARTS,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

impl ClusterConfig {
    pub fn escalation(&self, seed: u64) -> EscalationConfig {
        EscalationConfig {
            k0: self.k0,
            k_max: self.k_max,
            seed,
            restarts: self.restarts,
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KfplsConfig {
    pub family: KernelFamily,
    /// Starting lengthscale; defaults to the median pairwise distance of the
    /// training pixels.
    pub lengthscale: Option<f64>,
    pub pixels_per_class: usize,
    pub a_grid: Vec<usize>,
    pub optimizer: KfConfig,
}

impl Default for KfplsConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::Matern52,
            lengthscale: None,
            pixels_per_class: 300,
            a_grid: (1..=10).collect(),
            optimizer: KfConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    /// Bands removed from the end of the spectrum before selection.
    pub tail: usize,
    /// Bands seeded by correlation before forward selection.
    pub init: usize,
    pub lv_cap: usize,
    /// Forward-selection size limit; defaults to every usable band.
    pub target: Option<usize>,
    pub rounds: usize,
    /// 1-based COVPROC round order used to build the band list; defaults to
    /// `1..=rounds`.
    pub order: Option<Vec<usize>>,
    /// Stop as soon as supervised clustering on the selected bands passes.
    pub stop_by_clustering: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            tail: DEFAULT_TAIL,
            init: DEFAULT_INIT,
            lv_cap: DEFAULT_LV_CAP,
            target: None,
            rounds: 4,
            order: None,
            stop_by_clustering: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Calibration cube header for `fit` and `select-bands`, or the cube to
    /// classify for `apply`.
    pub cube: Option<PathBuf>,
    /// Calibration label mask, or the ground truth for `apply`.
    pub mask: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub workflow: Workflow,
    pub band_selection: BandSelection,
    pub classes: ClassRoles,
    pub pca: PcaConfig,
    pub cluster: ClusterConfig,
    pub kfpls: KfplsConfig,
    pub selection: SelectionConfig,
}

impl RunConfig {
    /// Parses a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::invalid(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.cube, &mut cfg.mask, &mut cfg.model, &mut cfg.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.classes.validate()?;
        if self.cluster.k0 < 2 || self.cluster.k0 > self.cluster.k_max {
            return Err(Error::invalid("cluster.k0 must satisfy 2 <= k0 <= k_max"));
        }
        if self.cluster.restarts == 0 || self.cluster.max_iter == 0 {
            return Err(Error::invalid("cluster.restarts and cluster.max_iter must be >= 1"));
        }
        if let Some(0) = self.pca.max_components {
            return Err(Error::invalid("pca.max_components must be >= 1"));
        }
        if let SelectionRule::TopN(0) = self.pca.rule {
            return Err(Error::invalid("pca.rule top_n must be >= 1"));
        }
        if let SelectionRule::Threshold(t) = self.pca.rule {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::invalid("pca.rule threshold must lie in (0, 1)"));
            }
        }
        self.kfpls.optimizer.validate()?;
        if self.kfpls.family == KernelFamily::Linear {
            return Err(Error::invalid("kfpls.family must be a stationary kernel"));
        }
        if self.kfpls.pixels_per_class < 2 {
            return Err(Error::invalid("kfpls.pixels_per_class must be >= 2"));
        }
        if self.kfpls.a_grid.is_empty() || self.kfpls.a_grid.contains(&0) {
            return Err(Error::invalid("kfpls.a_grid must hold positive counts"));
        }
        if let Some(l) = self.kfpls.lengthscale {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::invalid("kfpls.lengthscale must be positive"));
            }
        }
        if self.selection.lv_cap == 0 || self.selection.rounds == 0 {
            return Err(Error::invalid("selection.lv_cap and selection.rounds must be >= 1"));
        }
        if let Some(order) = &self.selection.order {
            if order.is_empty() || order.iter().any(|&r| r == 0 || r > self.selection.rounds) {
                return Err(Error::invalid(format!(
                    "selection.order must list rounds within 1..={}",
                    self.selection.rounds
                )));
            }
        }
        Ok(())
    }
}
