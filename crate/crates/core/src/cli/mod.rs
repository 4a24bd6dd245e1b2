//! The `spectral-sift` command line: `fit`, `apply`, `select-bands`,
//! `synth` and `inspect`.
//!
//! Logs go to stderr. Each command prints one JSON document to stdout
//! (`inspect` prints text unless `--json` is given). Exit codes: 0 success,
//! 1 usage or input error, 2 model-quality failure.

pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::{Error, Result};
use crate::specdata::{
    data_path_for, legend_json, read_envi, read_mask_envi, read_pgm, synth_scene, write_envi,
    write_mask_envi, write_pgm, DataType, HyperCube, Interleave, LabelMask, SceneSpec,
};
pub use config::RunConfig;
pub use pipeline::{apply_pipeline, fit_pipeline, select_bands, PipelineModel};
use pipeline::{evaluate, Classifier, FitFailure};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_QUALITY: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "spectral-sift", version, about = "Hyperspectral bee/mite discrimination")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a pipeline model on a labeled calibration cube.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Calibration cube header.
        #[arg(long)]
        cube: Option<PathBuf>,
        /// Calibration label mask (ENVI header or PGM).
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Classify a cube with a fitted model.
    Apply {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        cube: Option<PathBuf>,
        /// Ground-truth mask; adds recall and false-alarm counts to the output.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run wavelength selection on a labeled calibration cube.
    SelectBands {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cube: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Overrides `band_selection` in the config.
        #[arg(long, value_parser = ["r2", "covproc"])]
        method: Option<String>,
    },
    /// Render a synthetic scene from a scene description (given by --config).
    Synth {
        #[command(flatten)]
        common: Common,
        /// Base name of the written files.
        #[arg(long, default_value = "scene")]
        name: String,
    },
    /// Summarise a model file.
    Inspect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

/// Command failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Escalation { .. } => EXIT_QUALITY,
            _ => EXIT_INPUT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = std::result::Result<String, Failure>;

/// Parses `args` (program name first), runs the command, prints its stdout
/// document and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(stdout) => {
            println!("{stdout}");
            EXIT_OK
        }
        Err(f) => {
            log::error!("{}", f.message);
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::Fit { common, cube, mask } => {
            let cfg = resolve(&common, cube, mask, None)?;
            cmd_fit(&cfg)
        }
        Command::Apply {
            common,
            model,
            cube,
            truth,
        } => {
            let cfg = resolve(&common, cube, truth, model)?;
            cmd_apply(&cfg)
        }
        Command::SelectBands {
            common,
            cube,
            mask,
            method,
        } => {
            let mut cfg = resolve(&common, cube, mask, None)?;
            match method.as_deref() {
                Some("r2") => cfg.band_selection = config::BandSelection::R2,
                Some("covproc") => cfg.band_selection = config::BandSelection::Covproc,
                _ => {}
            }
            cmd_select_bands(&cfg)
        }
        Command::Synth { common, name } => {
            let spec_path = common
                .config
                .clone()
                .ok_or_else(|| usage("synth needs --config pointing at a scene description"))?;
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
            cmd_synth(&spec_path, common.seed.unwrap_or(0), &out, &name)
        }
        Command::Inspect {
            common,
            model,
            json,
        } => {
            let cfg = resolve(&common, None, None, model)?;
            let path = cfg
                .model
                .clone()
                .ok_or_else(|| usage("inspect needs --model"))?;
            cmd_inspect(&path, json)
        }
    }
}

fn usage(msg: &str) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: msg.to_string(),
    }
}

/// Config file (if any) with command-line overrides applied.
fn resolve(
    common: &Common,
    cube: Option<PathBuf>,
    mask: Option<PathBuf>,
    model: Option<PathBuf>,
) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.out.is_some() {
        cfg.out = common.out.clone();
    }
    if cube.is_some() {
        cfg.cube = cube;
    }
    if mask.is_some() {
        cfg.mask = mask;
    }
    if model.is_some() {
        cfg.model = model;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn need<'a>(p: &'a Option<PathBuf>, what: &str) -> std::result::Result<&'a Path, Failure> {
    p.as_deref()
        .ok_or_else(|| usage(&format!("missing {what} (flag or config key)")))
}

fn out_dir(cfg: &RunConfig) -> std::result::Result<PathBuf, Failure> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

pub fn load_cube(header: &Path) -> Result<HyperCube> {
    read_envi(header, &data_path_for(header))
}

/// Reads a PGM (by extension) or an ENVI label mask.
pub fn load_mask(path: &Path) -> Result<LabelMask> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        read_pgm(path)
    } else {
        read_mask_envi(path, &data_path_for(path))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Mask as 8-bit ENVI plus PGM, with a legend sidecar.
fn write_mask_set(mask: &LabelMask, dir: &Path, name: &str) -> Result<()> {
    write_mask_envi(
        mask,
        &dir.join(format!("{name}.hdr")),
        &dir.join(format!("{name}.img")),
    )?;
    write_pgm(mask, &dir.join(format!("{name}.pgm")))?;
    write_json(&dir.join(format!("{name}_legend.json")), &legend_json(mask))
}

pub fn cmd_fit(cfg: &RunConfig) -> CmdResult {
    let cube = load_cube(need(&cfg.cube, "calibration cube")?)?;
    let mask = load_mask(need(&cfg.mask, "calibration mask")?)?;
    let dir = out_dir(cfg)?;
    match fit_pipeline(&cube, &mask, cfg) {
        Ok(out) => {
            let model_path = dir.join("model.json");
            write_text(&model_path, &(out.model.to_json()? + "\n"))?;
            write_json(&dir.join("diagnostics.json"), &out.diagnostics)?;
            if let Some(kf) = &out.kf {
                write_text(&dir.join("kf_trace.csv"), &kf.trace_csv())?;
            }
            if let Some(sel) = &out.model.selection {
                write_json(&dir.join("selection.json"), sel)?;
            }
            let k = match &out.model.classifier {
                Classifier::Kmeans { cluster } => Some(cluster.k()),
                Classifier::Kfpls { .. } => None,
            };
            Ok(json!({
                "command": "fit",
                "model": model_path,
                "workflow": out.diagnostics.workflow,
                "selected_components": out.diagnostics.selected_components,
                "k": k,
                "a_star": out.diagnostics.kernel.as_ref().map(|d| d.a_star),
                "lengthscale": out.diagnostics.kernel.as_ref().map(|d| d.spec.lengthscale),
                "selected_bands": out.model.selected_bands,
            })
            .to_string())
        }
        Err(FitFailure { error, diagnostics }) => {
            if let Some(d) = diagnostics {
                write_json(&dir.join("diagnostics.json"), &d)?;
            }
            Err(error.into())
        }
    }
}

pub fn load_model(path: &Path) -> Result<PipelineModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PipelineModel::from_json(&text)
}

pub fn cmd_apply(cfg: &RunConfig) -> CmdResult {
    let model = load_model(need(&cfg.model, "model file")?)?;
    let cube = load_cube(need(&cfg.cube, "cube")?)?;
    let dir = out_dir(cfg)?;
    let out = apply_pipeline(&model, &cube)?;
    write_mask_set(&out.mask, &dir, "mask")?;
    let evaluation = match &cfg.mask {
        Some(p) => {
            let truth = load_mask(p)?;
            if truth.rows() != cube.rows() || truth.cols() != cube.cols() {
                return Err(Error::invalid("truth mask size differs from the cube").into());
            }
            Some(evaluate(&out.classes, &truth, &model.classes)?)
        }
        None => None,
    };
    let result = json!({
        "command": "apply",
        "counts": out.counts,
        "evaluation": evaluation,
    });
    write_json(&dir.join("counts.json"), &result)?;
    Ok(result.to_string())
}

pub fn cmd_select_bands(cfg: &RunConfig) -> CmdResult {
    if cfg.band_selection == config::BandSelection::None {
        return Err(usage("select-bands needs band_selection r2 or covproc (or --method)"));
    }
    let cube = load_cube(need(&cfg.cube, "calibration cube")?)?;
    let mask = load_mask(need(&cfg.mask, "calibration mask")?)?;
    let dir = out_dir(cfg)?;
    let (report, passed) = select_bands(&cube, &mask, cfg)?;
    write_json(&dir.join("selection.json"), &report)?;
    let summary = json!({
        "command": "select-bands",
        "method": report.method,
        "selected": report.selected,
        "selected_nm": report.selected_nm,
        "clustering_passed": passed,
    });
    if cfg.selection.stop_by_clustering && !passed {
        return Err(Failure {
            code: EXIT_QUALITY,
            message: format!(
                "supervised clustering never passed on the selected bands ({summary})"
            ),
        });
    }
    Ok(summary.to_string())
}

pub fn cmd_synth(spec_path: &Path, seed: u64, out: &Path, name: &str) -> CmdResult {
    let text = fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let spec: SceneSpec = serde_json::from_str(&text)
        .map_err(|e| Error::invalid(format!("scene {}: {e}", spec_path.display())))?;
    let (cube, mask) = synth_scene(&spec, seed)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let hdr = out.join(format!("{name}.hdr"));
    write_envi(
        &cube,
        &hdr,
        &out.join(format!("{name}.img")),
        Interleave::Bsq,
        DataType::F64,
    )?;
    let mask_name = format!("{name}_mask");
    write_mask_set(&mask, out, &mask_name)?;
    let counts: serde_json::Map<String, serde_json::Value> = mask
        .palette()
        .iter()
        .map(|(&l, n)| (n.clone(), json!(mask.count(l))))
        .collect();
    Ok(json!({
        "command": "synth",
        "cube": hdr,
        "mask": out.join(format!("{mask_name}.hdr")),
        "rows": cube.rows(),
        "cols": cube.cols(),
        "bands": cube.bands(),
        "label_counts": counts,
    })
    .to_string())
}

pub fn inspect_json(model: &PipelineModel) -> serde_json::Value {
    let evr = model.pca.explained_variance_ratio();
    let mut cumulative = 0.0;
    let table: Vec<serde_json::Value> = evr
        .iter()
        .enumerate()
        .map(|(i, r)| {
            cumulative += r;
            json!({"component": i + 1, "ratio": r, "cumulative": cumulative})
        })
        .collect();
    let selected_nm = model
        .selected_bands
        .as_ref()
        .map(|s| s.iter().map(|&b| model.wavelengths_nm[b]).collect::<Vec<_>>());
    let classifier = match &model.classifier {
        Classifier::Kmeans { cluster } => json!({
            "workflow": "kmeans",
            "k": cluster.k(),
            "cluster_classes": cluster.class_of_cluster(),
        }),
        Classifier::Kfpls { kpls, a_star } => json!({
            "workflow": "kfpls",
            "kernel": kpls.kernel(),
            "a": a_star,
            "classes": kpls.classes(),
            "training_pixels": kpls.regression().support().nrows(),
        }),
    };
    json!({
        "format_version": model.format_version,
        "bands": model.bands,
        "explained_variance": table,
        "selected_components": model.components.one_based(),
        "correlations": model.components.correlations,
        "classifier": classifier,
        "selected_bands": model.selected_bands,
        "selected_nm": selected_nm,
    })
}

pub fn inspect_text(model: &PipelineModel) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "model format {}", model.format_version);
    let _ = writeln!(
        s,
        "bands: {} ({:.2}-{:.2} nm)",
        model.bands,
        model.wavelengths_nm.first().copied().unwrap_or(f64::NAN),
        model.wavelengths_nm.last().copied().unwrap_or(f64::NAN)
    );
    let _ = writeln!(s, "\n  PC   explained   cumulative   |rho|");
    let mut cum = 0.0;
    for (i, r) in model.pca.explained_variance_ratio().iter().enumerate() {
        cum += r;
        let mark = if model.components.selected.contains(&i) { " *" } else { "" };
        let _ = writeln!(
            s,
            "{:>4}   {:>8.4}%   {:>9.4}%   {:.4}{mark}",
            i + 1,
            100.0 * r,
            100.0 * cum,
            model.components.correlations[i]
        );
    }
    let _ = writeln!(s, "\nselected PCs: {:?}", model.components.one_based());
    match &model.classifier {
        Classifier::Kmeans { cluster } => {
            let _ = writeln!(s, "workflow: kmeans, k = {}", cluster.k());
            let classes: Vec<String> = cluster
                .class_of_cluster()
                .iter()
                .map(|c| format!("{c:?}").to_lowercase())
                .collect();
            let _ = writeln!(s, "cluster classes: {}", classes.join(", "));
        }
        Classifier::Kfpls { kpls, a_star } => {
            let k = kpls.kernel();
            let _ = writeln!(
                s,
                "workflow: kfpls, kernel {:?}, lengthscale {:.6}, variance {}, latent variables {a_star}",
                k.family, k.lengthscale, k.variance
            );
        }
    }
    match &model.selected_bands {
        Some(sel) => {
            let nm: Vec<String> = sel
                .iter()
                .map(|&b| format!("{:.2}", model.wavelengths_nm[b]))
                .collect();
            let _ = writeln!(s, "selected bands (nm): {}", nm.join(", "));
        }
        None => {
            let _ = writeln!(s, "selected bands: all");
        }
    }
    s
}

pub fn cmd_inspect(path: &Path, as_json: bool) -> CmdResult {
    if path.as_os_str().is_empty() {
        return Err(usage("empty model path"));
    }
    let model = load_model(path)?;
    Ok(if as_json {
        serde_json::to_string_pretty(&inspect_json(&model)).map_err(Error::from)?
    } else {
        inspect_text(&model).trim_end().to_string()
    })
}
