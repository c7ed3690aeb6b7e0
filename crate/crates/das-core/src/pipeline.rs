//! End-to-end runs behind the command-line interface: scene generation,
//! architecture search, final training, evaluation, and whole-map
//! classification. Each step reads and writes the on-disk formats, so any
//! two runs with the same inputs and config produce identical files.

use std::io::Write;
use std::path::Path;

use crate::config::Config;
use crate::data::{
    default_covariances, extract_patches, read_pct, read_plb, split_dataset, synth_generate,
    write_pct, write_plb, CoherencyImage, LabelMap, Split, Standardizer,
};
use crate::error::{DasError, Result};
use crate::metrics::Metrics;
use crate::model::{build_model, read_model, write_model, Dataset, EpochRecord, InputBatch, Model};
use crate::search::{read_architecture, repeat_search, write_architecture, DerivedArchitecture, RepeatOutcome};

/// Patch extent used throughout: every classifier sees 15x15 neighborhoods.
pub const PATCH_SIZE: usize = 15;

/// Scene-generation settings (the `gen` command).
#[derive(Debug, Clone)]
pub struct GenSettings {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub looks: usize,
    pub region_size: usize,
    pub seed: u64,
}

impl Default for GenSettings {
    fn default() -> Self {
        GenSettings {
            classes: 5,
            height: 128,
            width: 128,
            looks: 8,
            region_size: 32,
            seed: 0,
        }
    }
}

/// Draw a synthetic coherency scene and write the image/label pair.
pub fn run_gen(s: &GenSettings, image_out: &Path, labels_out: &Path) -> Result<()> {
    let covs = default_covariances(s.classes)?;
    let (image, labels) = synth_generate(&covs, s.height, s.width, s.looks, s.region_size, s.seed)?;
    write_pct(image_out, &image)?;
    write_plb(labels_out, &labels)?;
    Ok(())
}

/// A scene's labeled pixels, patch-extracted and split. Datasets are kept
/// raw; `standardizer` holds the transform fitted on the training split
/// (identity when standardization is off).
#[derive(Debug)]
pub struct SceneSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub class_count: usize,
    pub standardizer: Standardizer,
}

pub fn prepare_splits(
    image: &CoherencyImage,
    labels: &LabelMap,
    channels: usize,
    patch_size: usize,
    cfg: &Config,
) -> Result<SceneSplits> {
    let mut patches = extract_patches(image, labels, patch_size)?;
    split_dataset(
        &mut patches,
        cfg.per_class_train,
        cfg.per_class_val,
        cfg.per_class_test,
        cfg.seed,
    )?;
    let train = Dataset::from_patches(&patches, Split::Train, channels)?;
    let val = Dataset::from_patches(&patches, Split::Val, channels)?;
    let test = Dataset::from_patches(&patches, Split::Test, channels)?;
    let standardizer = if cfg.standardize {
        match &train.x {
            InputBatch::Real(t) => Standardizer::fit_real(t)?,
            InputBatch::Complex(c) => Standardizer::fit_complex(c)?,
        }
    } else {
        Standardizer::identity(channels)
    };
    Ok(SceneSplits {
        train,
        val,
        test,
        class_count: patches.class_count,
        standardizer,
    })
}

pub fn load_scene(
    image_path: &Path,
    labels_path: &Path,
    channels: usize,
    patch_size: usize,
    cfg: &Config,
) -> Result<SceneSplits> {
    let image = read_pct(image_path)?;
    let labels = read_plb(labels_path)?;
    prepare_splits(&image, &labels, channels, patch_size, cfg)
}

/// Repeated two-phase search on a prepared scene; the winner is picked by
/// validation accuracy after a short retrain of each run's architecture.
pub fn search_on_scene(
    scene: &SceneSplits,
    cfg: &Config,
    log: Option<&mut (dyn Write + '_)>,
) -> Result<RepeatOutcome> {
    if scene.val.is_empty() {
        return Err(DasError::Config(
            "search ranks runs by validation accuracy; per_class_val must be at least 1".into(),
        ));
    }
    let space = cfg.space(scene.class_count)?;
    let train = scene.train.standardized(&scene.standardizer)?;
    let val = scene.val.standardized(&scene.standardizer)?;
    repeat_search(
        &space,
        &train,
        &val,
        &cfg.search_config(),
        cfg.repeats,
        cfg.epochs_select,
        log,
    )
}

pub fn run_search(
    cfg: &Config,
    image_path: &Path,
    labels_path: &Path,
    arch_out: &Path,
    log: Option<&mut (dyn Write + '_)>,
) -> Result<RepeatOutcome> {
    let scene = load_scene(image_path, labels_path, cfg.input_channels(), PATCH_SIZE, cfg)?;
    let outcome = search_on_scene(&scene, cfg, log)?;
    write_architecture(arch_out, &outcome.best)?;
    Ok(outcome)
}

/// Final-training outcome: per-epoch records plus held-out metrics.
#[derive(Debug)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub val: Option<Metrics>,
    pub test: Metrics,
}

/// Train a fresh model of `arch` on a prepared scene and score it. The
/// fitted standardizer travels inside the model, so the datasets stay raw.
pub fn train_on_scene(
    arch: &DerivedArchitecture,
    scene: &SceneSplits,
    cfg: &Config,
    log: Option<&mut (dyn Write + '_)>,
) -> Result<(Model, TrainReport)> {
    if arch.class_count != scene.class_count {
        return Err(DasError::Argument(format!(
            "architecture expects {} classes but the scene has {}",
            arch.class_count, scene.class_count
        )));
    }
    if arch.complex_mode != scene.train.x.is_complex() {
        return Err(DasError::Argument(format!(
            "architecture is {} but the input batches are {}",
            if arch.complex_mode { "complex" } else { "real" },
            if scene.train.x.is_complex() { "complex" } else { "real" },
        )));
    }
    let mut model = build_model(arch, scene.train.x.channels(), scene.train.x.patch_size(), cfg.seed)?;
    model.standardizer = scene.standardizer.clone();
    let val = if scene.val.is_empty() { None } else { Some(&scene.val) };
    let records = model.fit(&scene.train, val, &cfg.train_config(cfg.epochs_retrain), log)?;
    let val_metrics = match val {
        Some(v) => Some(model.evaluate(v)?),
        None => None,
    };
    let test = model.evaluate(&scene.test)?;
    Ok((model, TrainReport { records, val: val_metrics, test }))
}

pub fn run_train(
    cfg: &Config,
    arch_path: &Path,
    image_path: &Path,
    labels_path: &Path,
    model_out: &Path,
    log: Option<&mut (dyn Write + '_)>,
) -> Result<TrainReport> {
    let arch = read_architecture(arch_path)?;
    if arch.complex_mode != cfg.complex {
        return Err(DasError::Config(format!(
            "architecture file says complex={} but the config says complex={}",
            arch.complex_mode as u8, cfg.complex as u8
        )));
    }
    let scene = load_scene(image_path, labels_path, cfg.input_channels(), PATCH_SIZE, cfg)?;
    let (model, report) = train_on_scene(&arch, &scene, cfg, log)?;
    write_model(model_out, &model)?;
    Ok(report)
}

/// Score a stored model on the test split of a scene, re-deriving the split
/// from the config's counts and seed.
pub fn run_eval(
    cfg: &Config,
    model_path: &Path,
    image_path: &Path,
    labels_path: &Path,
) -> Result<Metrics> {
    let model = read_model(model_path)?;
    let scene = load_scene(
        image_path,
        labels_path,
        model.input_channels,
        model.patch_size,
        cfg,
    )?;
    if model.arch.class_count != scene.class_count {
        return Err(DasError::Argument(format!(
            "model expects {} classes but the scene has {}",
            model.arch.class_count, scene.class_count
        )));
    }
    model.evaluate(&scene.test)
}

/// Classify every pixel of a scene and write the predicted label map.
pub fn run_map(model_path: &Path, image_path: &Path, map_out: &Path) -> Result<()> {
    let model = read_model(model_path)?;
    let image = read_pct(image_path)?;
    let map = model.classify_map(&image)?;
    write_plb(map_out, &map)
}
