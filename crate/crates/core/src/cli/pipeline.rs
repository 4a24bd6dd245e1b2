//! The fit / apply / band-selection workflows on in-memory data, and the
//! persisted pipeline model.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{BandSelection, ClassRoles, RunConfig, Workflow};
use crate::cluster::{fit_supervised, ClusterDiagnostics, ClusterModel, PixelClass};
use crate::error::{Error, Result};
use crate::kernel::{
    fit_kernel_pls, kf_optimize, median_pairwise_distance, KernelPlsModel, KernelSpec, KfOutcome,
};
use crate::pca::{
    correlate_scores, default_components, fit_pca, select_components, ComponentSelection, PcaModel,
};
use crate::preprocess::ScaleModel;
use crate::specdata::{HyperCube, LabelMask};
use crate::wavesel::{
    covproc_select, exclude_tail, init_by_correlation, r2_forward_select_until, reorder_rounds,
    SelectionReport,
};

pub const FORMAT_VERSION: u32 = 1;

/// Output label codes of `apply` masks.
pub const OUT_OTHER: u8 = 0;
pub const OUT_BEE: u8 = 1;
pub const OUT_MITE: u8 = 2;

pub fn output_code(class: PixelClass) -> u8 {
    match class {
        PixelClass::Other => OUT_OTHER,
        PixelClass::Bee => OUT_BEE,
        PixelClass::Mite => OUT_MITE,
    }
}

pub fn output_palette() -> BTreeMap<u8, String> {
    BTreeMap::from([
        (OUT_OTHER, "other".to_string()),
        (OUT_BEE, "bee".to_string()),
        (OUT_MITE, "mite".to_string()),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "workflow", rename_all = "lowercase")]
pub enum Classifier {
    Kmeans {
        cluster: ClusterModel,
    },
    Kfpls {
        kpls: KernelPlsModel,
        a_star: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineModel {
    pub format_version: u32,
    /// Band count of the calibration cube.
    pub bands: usize,
    pub wavelengths_nm: Vec<f64>,
    /// Bands the model works on in ascending order, when a subset was
    /// selected.
    pub selected_bands: Option<Vec<usize>>,
    pub selection: Option<SelectionReport>,
    pub classes: ClassRoles,
    pub scale: ScaleModel,
    pub pca: PcaModel,
    pub components: ComponentSelection,
    pub classifier: Classifier,
}

impl PipelineModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Model(format!("unreadable model: {e}")))?;
        match v.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(ver) if ver == u64::from(FORMAT_VERSION) => {}
            Some(ver) => {
                return Err(Error::Model(format!(
                    "format version {ver} is not supported (expected {FORMAT_VERSION})"
                )))
            }
            None => return Err(Error::Model("missing format_version".into())),
        }
        let m: PipelineModel =
            serde_json::from_value(v).map_err(|e| Error::Model(format!("malformed model: {e}")))?;
        m.check()?;
        Ok(m)
    }

    /// Bands the scale/PCA stages expect.
    pub fn working_bands(&self) -> usize {
        self.selected_bands.as_ref().map_or(self.bands, Vec::len)
    }

    fn check(&self) -> Result<()> {
        let wb = self.working_bands();
        let dim = |context, found| {
            if found == wb {
                Ok(())
            } else {
                Err(Error::Dimension {
                    context,
                    expected: wb,
                    found,
                })
            }
        };
        if self.wavelengths_nm.len() != self.bands {
            return Err(Error::Model("wavelength count differs from band count".into()));
        }
        if let Some(sel) = &self.selected_bands {
            if sel.iter().any(|&b| b >= self.bands) {
                return Err(Error::Model("selected band outside the cube".into()));
            }
        }
        dim("model scale bands", self.scale.bands())?;
        dim("model PCA bands", self.pca.bands())?;
        if self.components.selected.iter().any(|&c| c >= self.pca.k()) {
            return Err(Error::Model("selected component outside the PCA model".into()));
        }
        match &self.classifier {
            Classifier::Kmeans { cluster } => dim("model centroid bands", cluster.bands()),
            Classifier::Kfpls { kpls, .. } => dim("model kernel support bands", kpls.bands()),
        }
    }

    /// Restricts a cube to the model's working bands. Accepts either the full
    /// calibration band count or an already reduced cube.
    pub fn prepare_cube(&self, cube: &HyperCube) -> Result<HyperCube> {
        match &self.selected_bands {
            Some(sel) if cube.bands() == self.bands => cube.select_bands(sel),
            Some(sel) if cube.bands() == sel.len() => Ok(cube.clone()),
            None if cube.bands() == self.bands => Ok(cube.clone()),
            _ => Err(Error::Dimension {
                context: "cube bands",
                expected: self.bands,
                found: cube.bands(),
            }),
        }
    }
}

/// Per-pixel role of every pixel in row-major order.
pub fn pixel_roles(mask: &LabelMask, classes: &ClassRoles) -> Vec<Option<PixelClass>> {
    mask.labels().iter().map(|&l| classes.role(l)).collect()
}

fn require_roles(roles: &[Option<PixelClass>]) -> Result<()> {
    let count = |c| roles.iter().filter(|r| **r == Some(c)).count();
    if count(PixelClass::Mite) == 0 {
        return Err(Error::invalid("the label mask has no mite pixels"));
    }
    if count(PixelClass::Bee) == 0 {
        return Err(Error::invalid("the label mask has no bee pixels"));
    }
    Ok(())
}

/// Autoscaled spectra, PCA, component selection and reconstruction of every
/// pixel.
pub struct Projection {
    pub scale: ScaleModel,
    pub pca: PcaModel,
    pub components: ComponentSelection,
    pub scaled: Array2<f64>,
    pub reconstructed: Array2<f64>,
}

pub fn project_and_reconstruct(
    x: ArrayView2<'_, f64>,
    roles: &[Option<PixelClass>],
    cfg: &RunConfig,
) -> Result<Projection> {
    let (n, bands) = x.dim();
    let scale = ScaleModel::fit(x)?;
    let scaled = scale.apply(x)?;
    let k = cfg
        .pca
        .max_components
        .unwrap_or_else(|| default_components(n, bands))
        .min(default_components(n, bands).max(1));
    let (pca, scores) = fit_pca(scaled.view(), k)?;
    let rows: Vec<usize> = (0..n)
        .filter(|&i| matches!(roles[i], Some(PixelClass::Mite | PixelClass::Bee)))
        .collect();
    let y: Array1<f64> = rows
        .iter()
        .map(|&i| f64::from(u8::from(roles[i] == Some(PixelClass::Mite))))
        .collect();
    let correlations = correlate_scores(scores.select(Axis(0), &rows).view(), y.view())?;
    let components = select_components(&correlations, cfg.pca.rule)?;
    let reconstructed = pca.reconstruct(scores.view(), &components)?;
    Ok(Projection {
        scale,
        pca,
        components,
        scaled,
        reconstructed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub workflow: Workflow,
    pub pixels: usize,
    pub bands: usize,
    pub explained_variance_ratio: Vec<f64>,
    pub correlations: Vec<f64>,
    /// 1-based.
    pub selected_components: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster: Option<ClusterDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDiagnostics {
    pub spec: KernelSpec,
    pub initial_lengthscale: f64,
    pub a_star: usize,
    pub r2_by_a: Vec<(usize, f64)>,
    pub training_pixels: usize,
    pub final_mean_rho: f64,
}

pub struct FitOutput {
    pub model: PipelineModel,
    pub diagnostics: FitDiagnostics,
    /// Kernel Flows run, for trace export.
    pub kf: Option<KfOutcome>,
}

/// Failed fit that still has diagnostics worth writing.
pub struct FitFailure {
    pub error: Error,
    pub diagnostics: Option<FitDiagnostics>,
}

impl From<Error> for FitFailure {
    fn from(error: Error) -> Self {
        FitFailure {
            error,
            diagnostics: None,
        }
    }
}

/// Draws up to `per_class` pixels of every labeled class, in a seeded random
/// order. Returns row indices and their labels.
pub fn sample_per_class(labels: &[u8], per_class: usize, seed: u64) -> (Vec<usize>, Vec<u8>) {
    let mut by_label: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for idx in by_label.values_mut() {
        idx.shuffle(&mut rng);
        idx.truncate(per_class);
        idx.sort_unstable();
        rows.extend_from_slice(idx);
    }
    rows.sort_unstable();
    let out_labels = rows.iter().map(|&i| labels[i]).collect();
    (rows, out_labels)
}

pub fn fit_pipeline(
    cube: &HyperCube,
    mask: &LabelMask,
    cfg: &RunConfig,
) -> std::result::Result<FitOutput, FitFailure> {
    cfg.validate()?;
    let roles = pixel_roles(mask, &cfg.classes);
    if mask.rows() != cube.rows() || mask.cols() != cube.cols() {
        return Err(Error::invalid(format!(
            "mask is {}x{} but the cube is {}x{}",
            mask.rows(),
            mask.cols(),
            cube.rows(),
            cube.cols()
        ))
        .into());
    }
    require_roles(&roles)?;

    let (selection, work) = match cfg.band_selection {
        BandSelection::None => (None, cube.clone()),
        _ => {
            let (report, passed) = select_bands(cube, mask, cfg)?;
            if !passed && cfg.selection.stop_by_clustering {
                log::warn!("clustering never passed during band selection; using every selected band");
            }
            let sub = cube.select_bands(&report.selected)?;
            (Some(report), sub)
        }
    };
    let (x, _) = work.flatten(None, None)?;
    let proj = project_and_reconstruct(x.view(), &roles, cfg)?;
    let mut diagnostics = FitDiagnostics {
        workflow: cfg.workflow,
        pixels: x.nrows(),
        bands: x.ncols(),
        explained_variance_ratio: proj.pca.explained_variance_ratio().to_vec(),
        correlations: proj.components.correlations.clone(),
        selected_components: proj.components.one_based(),
        cluster: None,
        kernel: None,
        selection: selection.clone(),
    };
    log::info!(
        "PCA: {} components, selected {:?}",
        proj.pca.k(),
        proj.components.one_based()
    );

    let mut kf = None;
    let classifier = match cfg.workflow {
        Workflow::Kmeans => {
            match fit_supervised(proj.reconstructed.view(), &roles, &cfg.cluster.escalation(cfg.seed)) {
                Ok((cluster, diag)) => {
                    diagnostics.cluster = Some(diag);
                    Classifier::Kmeans { cluster }
                }
                Err(Error::Escalation { k_max, diagnostics: d }) => {
                    diagnostics.cluster = Some((*d).clone());
                    return Err(FitFailure {
                        error: Error::Escalation { k_max, diagnostics: d },
                        diagnostics: Some(diagnostics),
                    });
                }
                Err(e) => return Err(e.into()),
            }
        }
        Workflow::Kfpls => {
            let flat: Vec<u8> = mask.labels().iter().copied().collect();
            let labeled: Vec<usize> = (0..roles.len()).filter(|&i| roles[i].is_some()).collect();
            let labels: Vec<u8> = labeled.iter().map(|&i| flat[i]).collect();
            let (pos, train_labels) = sample_per_class(&labels, cfg.kfpls.pixels_per_class, cfg.seed);
            let rows: Vec<usize> = pos.iter().map(|&p| labeled[p]).collect();
            let xt = proj.scaled.select(Axis(0), &rows);
            let l0 = match cfg.kfpls.lengthscale {
                Some(l) => l,
                None => median_pairwise_distance(xt.view())?,
            };
            let spec0 = KernelSpec::new(cfg.kfpls.family, l0);
            let opt = crate::kernel::KfConfig {
                seed: cfg.seed,
                ..cfg.kfpls.optimizer.clone()
            };
            let outcome = kf_optimize(xt.view(), &train_labels, &spec0, &opt, &cfg.kfpls.a_grid)?;
            log::info!(
                "Kernel Flows: lengthscale {:.4} -> {:.4}, a* = {}",
                l0,
                outcome.spec.lengthscale,
                outcome.a_star
            );
            let kpls = fit_kernel_pls(xt.view(), &train_labels, &outcome.spec, outcome.a_star)?;
            diagnostics.kernel = Some(KernelDiagnostics {
                spec: outcome.spec,
                initial_lengthscale: l0,
                a_star: outcome.a_star,
                r2_by_a: outcome.r2_by_a.clone(),
                training_pixels: rows.len(),
                final_mean_rho: outcome.trace.last().map_or(f64::NAN, |r| r.mean_rho),
            });
            let a_star = outcome.a_star;
            kf = Some(outcome);
            Classifier::Kfpls { kpls, a_star }
        }
    };

    let model = PipelineModel {
        format_version: FORMAT_VERSION,
        bands: cube.bands(),
        wavelengths_nm: cube.wavelengths_nm().to_vec(),
        selected_bands: selection.as_ref().map(|s| {
            let mut b = s.selected.clone();
            b.sort_unstable();
            b
        }),
        selection,
        classes: cfg.classes.clone(),
        scale: proj.scale,
        pca: proj.pca,
        components: proj.components,
        classifier,
    };
    model.check()?;
    Ok(FitOutput {
        model,
        diagnostics,
        kf,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub other: usize,
    pub bee: usize,
    pub mite: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub truth_mite_pixels: usize,
    pub detected_mite_pixels: usize,
    pub mite_recall: f64,
    /// Labeled non-mite pixels classified as mite.
    pub false_alarm_pixels: usize,
}

pub struct ApplyOutput {
    pub classes: Vec<PixelClass>,
    pub mask: LabelMask,
    pub counts: Counts,
}

pub fn apply_pipeline(model: &PipelineModel, cube: &HyperCube) -> Result<ApplyOutput> {
    let work = model.prepare_cube(cube)?;
    let (x, _) = work.flatten(None, None)?;
    let z = model.scale.apply(x.view())?;
    let classes: Vec<PixelClass> = match &model.classifier {
        Classifier::Kmeans { cluster } => {
            let t = model.pca.project(z.view())?;
            let r = model.pca.reconstruct(t.view(), &model.components)?;
            cluster.assign(r.view())?.1
        }
        Classifier::Kfpls { kpls, .. } => {
            let (labels, _) = kpls.classify(z.view())?;
            labels
                .iter()
                .map(|&l| model.classes.role(l).unwrap_or(PixelClass::Other))
                .collect()
        }
    };
    let codes = Array2::from_shape_fn((cube.rows(), cube.cols()), |(r, c)| {
        output_code(classes[r * cube.cols() + c])
    });
    let count = |k| classes.iter().filter(|&&c| c == k).count();
    let counts = Counts {
        other: count(PixelClass::Other),
        bee: count(PixelClass::Bee),
        mite: count(PixelClass::Mite),
    };
    Ok(ApplyOutput {
        mask: LabelMask::new(codes, output_palette())?,
        classes,
        counts,
    })
}

pub fn evaluate(classes: &[PixelClass], truth: &LabelMask, roles: &ClassRoles) -> Result<Evaluation> {
    if truth.rows() * truth.cols() != classes.len() {
        return Err(Error::Dimension {
            context: "truth mask pixels",
            expected: classes.len(),
            found: truth.rows() * truth.cols(),
        });
    }
    let mut truth_mites = 0;
    let mut detected = 0;
    let mut false_alarms = 0;
    for (&label, &pred) in truth.labels().iter().zip(classes) {
        match roles.role(label) {
            Some(PixelClass::Mite) => {
                truth_mites += 1;
                if pred == PixelClass::Mite {
                    detected += 1;
                }
            }
            Some(_) if pred == PixelClass::Mite => false_alarms += 1,
            _ => {}
        }
    }
    Ok(Evaluation {
        truth_mite_pixels: truth_mites,
        detected_mite_pixels: detected,
        mite_recall: if truth_mites > 0 {
            detected as f64 / truth_mites as f64
        } else {
            f64::NAN
        },
        false_alarm_pixels: false_alarms,
    })
}

/// Whether the k-means workflow on `bands` of the cube passes the
/// supervised escalation.
pub fn clustering_passes(
    cube: &HyperCube,
    roles: &[Option<PixelClass>],
    bands: &[usize],
    cfg: &RunConfig,
) -> bool {
    let attempt = || -> Result<bool> {
        let sub = cube.select_bands(bands)?;
        let (x, _) = sub.flatten(None, None)?;
        let proj = project_and_reconstruct(x.view(), roles, cfg)?;
        match fit_supervised(proj.reconstructed.view(), roles, &cfg.cluster.escalation(cfg.seed)) {
            Ok(_) => Ok(true),
            Err(Error::Escalation { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    };
    match attempt() {
        Ok(p) => {
            log::info!("clustering on {} bands: {}", bands.len(), if p { "passed" } else { "failed" });
            p
        }
        Err(e) => {
            log::debug!("clustering on {} bands not possible: {e}", bands.len());
            false
        }
    }
}

/// Runs the configured band selector on bee and mite pixels. The flag tells
/// whether the clustering stop test passed.
pub fn select_bands(cube: &HyperCube, mask: &LabelMask, cfg: &RunConfig) -> Result<(SelectionReport, bool)> {
    cfg.validate()?;
    let roles = pixel_roles(mask, &cfg.classes);
    require_roles(&roles)?;
    let (x_all, _) = cube.flatten(None, None)?;
    let rows: Vec<usize> = (0..roles.len())
        .filter(|&i| matches!(roles[i], Some(PixelClass::Mite | PixelClass::Bee)))
        .collect();
    let x = x_all.select(Axis(0), &rows);
    let y: Array1<f64> = rows
        .iter()
        .map(|&i| f64::from(u8::from(roles[i] == Some(PixelClass::Mite))))
        .collect();
    let sc = &cfg.selection;
    let excluded = exclude_tail(cube.bands(), sc.tail)?;
    let usable = cube.bands() - excluded.len();
    let stop_enabled = sc.stop_by_clustering;
    let mut passed = false;

    let report = match cfg.band_selection {
        BandSelection::None => {
            return Err(Error::invalid("band_selection must be r2 or covproc"));
        }
        BandSelection::R2 => {
            let init = if sc.init > 0 {
                init_by_correlation(x.view(), y.view(), sc.init.min(usable.saturating_sub(1)), &excluded)?
            } else {
                Vec::new()
            };
            let target = sc.target.unwrap_or(usable).min(usable).max(init.len());
            r2_forward_select_until(x.view(), y.view(), target, &init, sc.lv_cap, &excluded, |s| {
                if stop_enabled && clustering_passes(cube, &roles, s, cfg) {
                    passed = true;
                }
                passed
            })?
        }
        BandSelection::Covproc => {
            let mut report = covproc_select(x.view(), y.view(), sc.rounds, &excluded)?;
            let order: Vec<usize> = sc
                .order
                .clone()
                .unwrap_or_else(|| report.rounds.iter().map(|r| r.round).collect());
            let list = reorder_rounds(&report, &order)?;
            let mut chosen = list.clone();
            if stop_enabled {
                for p in 1..=list.len() {
                    if clustering_passes(cube, &roles, &list[..p], cfg) {
                        chosen.truncate(p);
                        passed = true;
                        break;
                    }
                }
            }
            report.stopped_early = chosen.len() < list.len();
            report.selected = chosen;
            report
        }
    };
    let report = report.with_wavelengths(cube.wavelengths_nm())?;
    log::info!("selected bands {:?}", report.selected);
    Ok((report, passed))
}
