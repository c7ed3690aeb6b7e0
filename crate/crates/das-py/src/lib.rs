//! Python bindings for the architecture-search library: synthetic scene
//! generation, the stock search space, the two-phase search, final training,
//! and the sparsemax projection, mirroring what the command-line front end
//! drives.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use das_core::config::Config;
use das_core::data::{
    default_covariances, read_pct, read_plb, synth_generate, write_pct, write_plb, CoherencyImage,
    LabelMap,
};
use das_core::pipeline::{prepare_splits, search_on_scene, train_on_scene, PATCH_SIZE};
use das_core::search::{read_architecture, write_architecture, Activation, DerivedArchitecture};
use das_core::space::SearchSpaceSpec;
use das_core::{sparsemax as sm, DasError};

fn to_py(e: DasError) -> PyErr {
    match e {
        DasError::Divergence { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Euclidean projection of a score vector onto the probability simplex.
#[pyfunction]
fn sparsemax(z: Vec<f64>) -> PyResult<Vec<f64>> {
    sm::sparsemax(&z).map_err(to_py)
}

/// A coherency image with its pixel labels.
#[pyclass]
struct Scene {
    image: CoherencyImage,
    labels: LabelMap,
}

#[pymethods]
impl Scene {
    /// Draw a multi-look Wishart scene over square class regions.
    #[staticmethod]
    #[pyo3(signature = (classes=5, height=128, width=128, looks=8, region_size=32, seed=0))]
    fn synthesize(
        classes: usize,
        height: usize,
        width: usize,
        looks: usize,
        region_size: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let covs = default_covariances(classes).map_err(to_py)?;
        let (image, labels) =
            synth_generate(&covs, height, width, looks, region_size, seed).map_err(to_py)?;
        Ok(Self { image, labels })
    }

    #[staticmethod]
    fn load(image_path: PathBuf, labels_path: PathBuf) -> PyResult<Self> {
        let image = read_pct(&image_path).map_err(to_py)?;
        let labels = read_plb(&labels_path).map_err(to_py)?;
        Ok(Self { image, labels })
    }

    fn save(&self, image_path: PathBuf, labels_path: PathBuf) -> PyResult<()> {
        write_pct(&image_path, &self.image).map_err(to_py)?;
        write_plb(&labels_path, &self.labels).map_err(to_py)
    }

    #[getter]
    fn height(&self) -> usize {
        self.image.height
    }

    #[getter]
    fn width(&self) -> usize {
        self.image.width
    }

    #[getter]
    fn classes(&self) -> u16 {
        self.labels.max_label()
    }

    /// Labels in row-major order; 0 marks unlabeled pixels.
    fn labels(&self) -> Vec<u16> {
        self.labels.labels.clone()
    }

    /// One complex plane (0..6) as row-major (re, im) pairs.
    fn plane(&self, idx: usize) -> PyResult<Vec<(f64, f64)>> {
        if idx >= 6 {
            return Err(PyValueError::new_err(format!("plane {idx} out of range")));
        }
        let (h, w) = (self.image.height, self.image.width);
        Ok((0..h * w)
            .map(|p| {
                let v = self.image.at(idx, p / w, p % w);
                (v.re, v.im)
            })
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Scene({}x{}, {} classes)",
            self.image.height,
            self.image.width,
            self.labels.max_label()
        )
    }
}

/// Per-layer kernel and depth candidates.
#[pyclass]
struct SearchSpace {
    inner: SearchSpaceSpec,
}

#[pymethods]
impl SearchSpace {
    /// The stock five-layer space, 589824 architectures at five classes.
    #[staticmethod]
    #[pyo3(signature = (classes=5))]
    fn stock(classes: usize) -> PyResult<Self> {
        Ok(Self {
            inner: SearchSpaceSpec::default_space(classes).map_err(to_py)?,
        })
    }

    #[getter]
    fn layer_count(&self) -> usize {
        self.inner.layers.len()
    }

    fn total_architectures(&self) -> u64 {
        self.inner.total_architectures()
    }

    fn kernel_sizes(&self, layer: usize) -> PyResult<Vec<(usize, usize)>> {
        self.layer(layer).map(|l| l.kernel_sizes.clone())
    }

    fn depths(&self, layer: usize) -> PyResult<Vec<usize>> {
        self.layer(layer).map(|l| l.depths.clone())
    }

    fn __repr__(&self) -> String {
        format!(
            "SearchSpace({} layers, {} architectures)",
            self.inner.layers.len(),
            self.inner.total_architectures()
        )
    }
}

impl SearchSpace {
    fn layer(&self, layer: usize) -> PyResult<&das_core::space::LayerCandidates> {
        self.inner
            .layers
            .get(layer)
            .ok_or_else(|| PyValueError::new_err(format!("layer {layer} out of range")))
    }
}

/// Search and training settings; fields mirror the configuration file keys.
#[pyclass(name = "Config")]
struct PyConfig {
    inner: Config,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: Config::default(),
        }
    }

    /// Parse the TOML configuration format the command-line front end reads.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Config::parse(text).map_err(to_py)?,
        })
    }

    #[getter]
    fn get_epochs_alpha(&self) -> usize {
        self.inner.epochs_alpha
    }

    #[setter]
    fn set_epochs_alpha(&mut self, v: usize) {
        self.inner.epochs_alpha = v;
    }

    #[getter]
    fn get_epochs_beta(&self) -> usize {
        self.inner.epochs_beta
    }

    #[setter]
    fn set_epochs_beta(&mut self, v: usize) {
        self.inner.epochs_beta = v;
    }

    #[getter]
    fn get_epochs_retrain(&self) -> usize {
        self.inner.epochs_retrain
    }

    #[setter]
    fn set_epochs_retrain(&mut self, v: usize) {
        self.inner.epochs_retrain = v;
    }

    #[getter]
    fn get_epochs_select(&self) -> usize {
        self.inner.epochs_select
    }

    #[setter]
    fn set_epochs_select(&mut self, v: usize) {
        self.inner.epochs_select = v;
    }

    #[getter]
    fn get_batch_size(&self) -> usize {
        self.inner.batch_size
    }

    #[setter]
    fn set_batch_size(&mut self, v: usize) {
        self.inner.batch_size = v;
    }

    #[getter]
    fn get_learning_rate(&self) -> f64 {
        self.inner.learning_rate
    }

    #[setter]
    fn set_learning_rate(&mut self, v: f64) {
        self.inner.learning_rate = v;
    }

    #[getter]
    fn get_gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[setter]
    fn set_gamma(&mut self, v: f64) {
        self.inner.gamma = v;
    }

    #[getter]
    fn get_channels(&self) -> usize {
        self.inner.channels
    }

    #[setter]
    fn set_channels(&mut self, v: usize) {
        self.inner.channels = v;
    }

    #[getter]
    fn get_per_class_train(&self) -> usize {
        self.inner.per_class_train
    }

    #[setter]
    fn set_per_class_train(&mut self, v: usize) {
        self.inner.per_class_train = v;
    }

    #[getter]
    fn get_per_class_val(&self) -> usize {
        self.inner.per_class_val
    }

    #[setter]
    fn set_per_class_val(&mut self, v: usize) {
        self.inner.per_class_val = v;
    }

    #[getter]
    fn get_standardize(&self) -> bool {
        self.inner.standardize
    }

    #[setter]
    fn set_standardize(&mut self, v: bool) {
        self.inner.standardize = v;
    }

    #[getter]
    fn get_seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    #[getter]
    fn get_repeats(&self) -> usize {
        self.inner.repeats
    }

    #[setter]
    fn set_repeats(&mut self, v: usize) {
        self.inner.repeats = v;
    }

    #[getter]
    fn get_complex(&self) -> bool {
        self.inner.complex
    }

    /// Complex mode consumes the six raw planes, real mode the twelve
    /// derived channels; the channel count follows the switch.
    #[setter]
    fn set_complex(&mut self, v: bool) {
        self.inner.complex = v;
        self.inner.channels = if v { 6 } else { 12 };
    }

    #[getter]
    fn get_activation(&self) -> &'static str {
        match self.inner.activation {
            Activation::Sparsemax => "sparsemax",
            Activation::Softmax => "softmax",
        }
    }

    #[setter]
    fn set_activation(&mut self, v: &str) -> PyResult<()> {
        self.inner.activation = Activation::parse(v).map_err(to_py)?;
        Ok(())
    }
}

/// A derived architecture: one kernel size and one depth per layer.
#[pyclass]
#[derive(Clone)]
struct Architecture {
    inner: DerivedArchitecture,
}

#[pymethods]
impl Architecture {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_architecture(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_architecture(&path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn kernels(&self) -> Vec<(usize, usize)> {
        self.inner.kernels.to_vec()
    }

    #[getter]
    fn depths(&self) -> Vec<usize> {
        self.inner.depths.to_vec()
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.inner.class_count
    }

    #[getter]
    fn complex_mode(&self) -> bool {
        self.inner.complex_mode
    }

    fn summary(&self) -> String {
        self.inner.summary()
    }

    fn __repr__(&self) -> String {
        format!("Architecture({})", self.inner.summary())
    }
}

/// Classification quality on one split.
#[pyclass]
#[derive(Clone)]
struct Metrics {
    #[pyo3(get)]
    oa: f64,
    #[pyo3(get)]
    aa: f64,
    #[pyo3(get)]
    kappa: f64,
    #[pyo3(get)]
    per_class: Vec<f64>,
}

impl Metrics {
    fn from_core(m: &das_core::metrics::Metrics) -> Self {
        Self {
            oa: m.oa,
            aa: m.aa,
            kappa: m.kappa,
            per_class: m.per_class.clone(),
        }
    }
}

#[pymethods]
impl Metrics {
    fn __repr__(&self) -> String {
        format!(
            "Metrics(oa={:.4}, aa={:.4}, kappa={:.4})",
            self.oa, self.aa, self.kappa
        )
    }
}

/// Run the two-phase search on a scene. Returns the architecture picked
/// across repeats and each repeat's selection accuracy (None for repeats
/// that diverged).
#[pyfunction]
fn search(py: Python<'_>, scene: &Scene, config: &PyConfig) -> PyResult<(Architecture, Vec<Option<f64>>)> {
    let cfg = config.inner.clone();
    let (image, labels) = (scene.image.clone(), scene.labels.clone());
    let (best, oas) = py.allow_threads(move || -> das_core::Result<_> {
        let splits = prepare_splits(&image, &labels, cfg.channels, PATCH_SIZE, &cfg)?;
        let outcome = search_on_scene(&splits, &cfg, None)?;
        let oas: Vec<Option<f64>> = outcome.records.iter().map(|r| r.val_oa).collect();
        Ok((outcome.best, oas))
    }).map_err(to_py)?;
    Ok((Architecture { inner: best }, oas))
}

/// Train a fresh network of the given architecture on a scene and score it.
/// Returns test metrics and, when a validation split exists, its metrics.
#[pyfunction]
fn train(
    py: Python<'_>,
    architecture: &Architecture,
    scene: &Scene,
    config: &PyConfig,
) -> PyResult<(Metrics, Option<Metrics>)> {
    let cfg = config.inner.clone();
    let arch = architecture.inner.clone();
    let (image, labels) = (scene.image.clone(), scene.labels.clone());
    let report = py.allow_threads(move || -> das_core::Result<_> {
        let splits = prepare_splits(&image, &labels, cfg.channels, PATCH_SIZE, &cfg)?;
        let (_, report) = train_on_scene(&arch, &splits, &cfg, None)?;
        Ok(report)
    }).map_err(to_py)?;
    Ok((
        Metrics::from_core(&report.test),
        report.val.as_ref().map(Metrics::from_core),
    ))
}

#[pymodule]
fn das_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PATCH_SIZE", PATCH_SIZE)?;
    m.add_class::<Scene>()?;
    m.add_class::<SearchSpace>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<Architecture>()?;
    m.add_class::<Metrics>()?;
    m.add_function(wrap_pyfunction!(sparsemax, m)?)?;
    m.add_function(wrap_pyfunction!(search, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
