//! Run configuration: a flat text file of `key = value` lines shared by the
//! search, train, and eval commands.
//!
//! `#` starts a comment, blank lines are skipped, and a later assignment to
//! the same key overrides an earlier one. Every key has a default, so an
//! empty file is a valid configuration; unknown keys are a hard error.

use std::path::Path;

use crate::error::{DasError, Result};
use crate::model::TrainConfig;
use crate::search::{Activation, SearchConfig};
use crate::space::{LayerCandidates, SearchSpaceSpec, LAYERS};

/// Everything a run reads from its config file.
///
/// `kernels` and `depths` hold per-layer candidate-list overrides; `None`
/// keeps the stock lists of [`SearchSpaceSpec::default_space`].
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub epochs_alpha: usize,
    pub epochs_beta: usize,
    pub epochs_retrain: usize,
    pub epochs_select: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub activation: Activation,
    pub complex: bool,
    pub channels: usize,
    pub per_class_train: usize,
    pub per_class_val: usize,
    /// `None` means "rest": everything not drawn for train/val becomes test.
    pub per_class_test: Option<usize>,
    pub standardize: bool,
    pub seed: u64,
    pub repeats: usize,
    pub kernels: [Option<Vec<(usize, usize)>>; LAYERS],
    pub depths: [Option<Vec<usize>>; LAYERS],
}

impl Default for Config {
    fn default() -> Self {
        Config {
            epochs_alpha: 200,
            epochs_beta: 200,
            epochs_retrain: 500,
            epochs_select: 50,
            batch_size: 64,
            learning_rate: 1e-4,
            gamma: 1e-3,
            activation: Activation::Sparsemax,
            complex: false,
            channels: 12,
            per_class_train: 300,
            per_class_val: 100,
            per_class_test: None,
            standardize: true,
            seed: 0,
            repeats: 10,
            kernels: std::array::from_fn(|_| None),
            depths: std::array::from_fn(|_| None),
        }
    }
}

fn bad(line: usize, msg: impl Into<String>) -> DasError {
    DasError::Config(format!("line {line}: {}", msg.into()))
}

fn parse_usize(line: usize, key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| bad(line, format!("{key} wants a non-negative integer, got {value:?}")))
}

fn parse_f64(line: usize, key: &str, value: &str) -> Result<f64> {
    let v: f64 = value
        .parse()
        .map_err(|_| bad(line, format!("{key} wants a number, got {value:?}")))?;
    if !v.is_finite() {
        return Err(bad(line, format!("{key} must be finite, got {value}")));
    }
    Ok(v)
}

fn parse_flag(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(bad(line, format!("{key} wants 0 or 1, got {value:?}"))),
    }
}

fn parse_kernel_list(line: usize, key: &str, value: &str) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for item in value.split(',') {
        let item = item.trim();
        let (h, w) = item
            .split_once('x')
            .ok_or_else(|| bad(line, format!("{key}: kernel {item:?} is not of the form HxW")))?;
        let h = h
            .parse()
            .map_err(|_| bad(line, format!("{key}: bad kernel height in {item:?}")))?;
        let w = w
            .parse()
            .map_err(|_| bad(line, format!("{key}: bad kernel width in {item:?}")))?;
        out.push((h, w));
    }
    Ok(out)
}

fn parse_depth_list(line: usize, key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|item| {
            let item = item.trim();
            item.parse()
                .map_err(|_| bad(line, format!("{key}: bad depth {item:?}")))
        })
        .collect()
}

/// `layer<i>.kernels` / `layer<i>.depths` -> (layer index, is-kernel-list).
fn layer_key(key: &str) -> Option<(usize, bool)> {
    let rest = key.strip_prefix("layer")?;
    let (idx, field) = rest.split_once('.')?;
    let i: usize = idx.parse().ok()?;
    if !(1..=LAYERS).contains(&i) {
        return None;
    }
    match field {
        "kernels" => Some((i - 1, true)),
        "depths" => Some((i - 1, false)),
        _ => None,
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        for (n, raw) in text.lines().enumerate() {
            let n = n + 1;
            let line = match raw.split_once('#') {
                Some((before, _)) => before,
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(n, format!("expected key = value, got {line:?}")))?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "epochs_alpha" => cfg.epochs_alpha = parse_usize(n, key, value)?,
                "epochs_beta" => cfg.epochs_beta = parse_usize(n, key, value)?,
                "epochs_retrain" => cfg.epochs_retrain = parse_usize(n, key, value)?,
                "epochs_select" => cfg.epochs_select = parse_usize(n, key, value)?,
                "batch_size" => {
                    cfg.batch_size = parse_usize(n, key, value)?;
                    if cfg.batch_size == 0 {
                        return Err(bad(n, "batch_size must be at least 1"));
                    }
                }
                "learning_rate" => {
                    cfg.learning_rate = parse_f64(n, key, value)?;
                    if cfg.learning_rate <= 0.0 {
                        return Err(bad(n, "learning_rate must be positive"));
                    }
                }
                "gamma" => {
                    cfg.gamma = parse_f64(n, key, value)?;
                    if cfg.gamma < 0.0 {
                        return Err(bad(n, "gamma must be non-negative"));
                    }
                }
                "activation" => {
                    cfg.activation = Activation::parse(value)
                        .map_err(|_| bad(n, format!("activation wants sparsemax or softmax, got {value:?}")))?;
                }
                "complex" => cfg.complex = parse_flag(n, key, value)?,
                "channels" => {
                    cfg.channels = parse_usize(n, key, value)?;
                    if ![12, 9, 6].contains(&cfg.channels) {
                        return Err(bad(n, format!("channels wants 12, 9, or 6, got {value}")));
                    }
                }
                "per_class_train" => {
                    cfg.per_class_train = parse_usize(n, key, value)?;
                    if cfg.per_class_train == 0 {
                        return Err(bad(n, "per_class_train must be at least 1"));
                    }
                }
                "per_class_val" => cfg.per_class_val = parse_usize(n, key, value)?,
                "per_class_test" => {
                    cfg.per_class_test = if value == "rest" {
                        None
                    } else {
                        Some(parse_usize(n, key, value)?)
                    };
                }
                "standardize" => cfg.standardize = parse_flag(n, key, value)?,
                "seed" => {
                    cfg.seed = value
                        .parse()
                        .map_err(|_| bad(n, format!("seed wants a non-negative integer, got {value:?}")))?;
                }
                "repeats" => {
                    cfg.repeats = parse_usize(n, key, value)?;
                    if cfg.repeats == 0 {
                        return Err(bad(n, "repeats must be at least 1"));
                    }
                }
                _ => match layer_key(key) {
                    Some((l, true)) => cfg.kernels[l] = Some(parse_kernel_list(n, key, value)?),
                    Some((l, false)) => cfg.depths[l] = Some(parse_depth_list(n, key, value)?),
                    None => return Err(bad(n, format!("unknown key {key:?}"))),
                },
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::parse(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.complex && self.channels != 6 {
            return Err(DasError::Config(format!(
                "complex = 1 reads the 6 complex planes directly; set channels = 6, not {}",
                self.channels
            )));
        }
        if !self.complex && self.channels == 6 {
            return Err(DasError::Config(
                "channels = 6 is the complex-input layout; set complex = 1 or pick 12 or 9".into(),
            ));
        }
        Ok(())
    }

    /// Channel count of the network input: complex planes count once.
    pub fn input_channels(&self) -> usize {
        self.channels
    }

    /// Candidate space for `class_count` classes, stock lists where no
    /// override was given.
    pub fn space(&self, class_count: usize) -> Result<SearchSpaceSpec> {
        let stock = SearchSpaceSpec::default_space(class_count)?;
        let mut layers = Vec::with_capacity(LAYERS);
        for l in 0..LAYERS {
            let kernels = match &self.kernels[l] {
                Some(list) => list.clone(),
                None => stock.layers[l].kernel_sizes.clone(),
            };
            let depths = match &self.depths[l] {
                Some(list) => list.clone(),
                None => stock.layers[l].depths.clone(),
            };
            layers.push(LayerCandidates::new(kernels, depths)?);
        }
        SearchSpaceSpec::new(layers, class_count)
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            epochs_alpha: self.epochs_alpha,
            epochs_beta: self.epochs_beta,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            gamma: self.gamma,
            activation: self.activation,
            complex_mode: self.complex,
            seed: self.seed,
        }
    }

    pub fn train_config(&self, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            select_best: true,
        }
    }
}
