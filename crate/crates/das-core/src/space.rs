//! Candidate search space over the fixed five-layer topology and the kernel
//! transforms that let one shared convolution stand in for a weighted mixture
//! of candidates.
//!
//! Kernel-size candidates are realized by zero-padding each bank to the
//! layer's spatial maxima; depth candidates are realized by masking the input
//! channels of the following layer, so every layer physically emits its
//! maximal channel count while searching.

use crate::error::{DasError, Result};
use crate::tensor::{Tape, Tensor};

/// Candidate lists for one trainable layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCandidates {
    pub kernel_sizes: Vec<(usize, usize)>,
    pub depths: Vec<usize>,
    pub h_max: usize,
    pub w_max: usize,
    pub c_max: usize,
}

impl LayerCandidates {
    pub fn new(kernel_sizes: Vec<(usize, usize)>, depths: Vec<usize>) -> Result<Self> {
        if kernel_sizes.is_empty() || depths.is_empty() {
            return Err(DasError::Argument(
                "candidate lists must be non-empty".into(),
            ));
        }
        for &(h, w) in &kernel_sizes {
            if h == 0 || w == 0 {
                return Err(DasError::Argument(format!(
                    "kernel candidate {h}x{w} has a zero extent"
                )));
            }
        }
        for &d in &depths {
            if d == 0 {
                return Err(DasError::Argument("depth candidate of zero".into()));
            }
        }
        for (i, a) in kernel_sizes.iter().enumerate() {
            if kernel_sizes[..i].contains(a) {
                return Err(DasError::Argument(format!(
                    "duplicate kernel candidate {}x{}",
                    a.0, a.1
                )));
            }
        }
        for (i, d) in depths.iter().enumerate() {
            if depths[..i].contains(d) {
                return Err(DasError::Argument(format!("duplicate depth candidate {d}")));
            }
        }
        let h_max = kernel_sizes.iter().map(|k| k.0).max().unwrap();
        let w_max = kernel_sizes.iter().map(|k| k.1).max().unwrap();
        let c_max = *depths.iter().max().unwrap();
        Ok(Self {
            kernel_sizes,
            depths,
            h_max,
            w_max,
            c_max,
        })
    }

    pub fn fixed(kernel: (usize, usize), depth: usize) -> Self {
        Self::new(vec![kernel], vec![depth]).unwrap()
    }
}

/// The full space: three convolutional layers followed by two fully connected
/// layers (1x1 kernels), the last sized by the class count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchSpaceSpec {
    pub layers: Vec<LayerCandidates>,
    pub class_count: usize,
}

pub const LAYERS: usize = 5;
pub const CONV_LAYERS: usize = 3;

impl SearchSpaceSpec {
    pub fn new(layers: Vec<LayerCandidates>, class_count: usize) -> Result<Self> {
        if layers.len() != LAYERS {
            return Err(DasError::Argument(format!(
                "expected {LAYERS} trainable layers, got {}",
                layers.len()
            )));
        }
        if class_count < 2 {
            return Err(DasError::Argument(format!(
                "need at least 2 classes, got {class_count}"
            )));
        }
        for l in [3, 4] {
            if layers[l].kernel_sizes != [(1, 1)] {
                return Err(DasError::Argument(format!(
                    "layer {} is fully connected and must have the single kernel 1x1",
                    l + 1
                )));
            }
        }
        if layers[4].depths != [class_count] {
            return Err(DasError::Argument(format!(
                "the final layer's only depth must equal the class count {class_count}"
            )));
        }
        Ok(Self {
            layers,
            class_count,
        })
    }

    /// Stock candidate lists: 1/2/3/5 kernel extents for the first two conv
    /// layers, 1/2/3 for the third, conv depths 8..64, first FC width
    /// 128..1024.
    pub fn default_space(class_count: usize) -> Result<Self> {
        let ext = |sizes: &[usize]| -> Vec<(usize, usize)> {
            let mut v = Vec::new();
            for &h in sizes {
                for &w in sizes {
                    v.push((h, w));
                }
            }
            v
        };
        let conv_depths = vec![8, 16, 32, 64];
        let layers = vec![
            LayerCandidates::new(ext(&[1, 2, 3, 5]), conv_depths.clone())?,
            LayerCandidates::new(ext(&[1, 2, 3, 5]), conv_depths.clone())?,
            LayerCandidates::new(ext(&[1, 2, 3]), conv_depths)?,
            LayerCandidates::new(vec![(1, 1)], vec![128, 256, 512, 1024])?,
            LayerCandidates::new(vec![(1, 1)], vec![class_count])?,
        ];
        Self::new(layers, class_count)
    }

    /// Number of distinct concrete architectures (saturating on overflow).
    pub fn total_architectures(&self) -> u64 {
        self.layers.iter().fold(1u64, |acc, l| {
            acc.saturating_mul(l.kernel_sizes.len() as u64)
                .saturating_mul(l.depths.len() as u64)
        })
    }
}

/// Soft input-channel gate: mask[c] = sum_j weights[j] * [c < depths[j]].
pub fn channel_mask(depths: &[usize], weights: &[f64], c_max: usize) -> Result<Vec<f64>> {
    if depths.len() != weights.len() {
        return Err(DasError::Argument(format!(
            "{} depths against {} weights",
            depths.len(),
            weights.len()
        )));
    }
    for &d in depths {
        if d > c_max {
            return Err(DasError::Argument(format!(
                "depth {d} exceeds the channel budget {c_max}"
            )));
        }
    }
    let mut mask = vec![0.0; c_max];
    for (&d, &w) in depths.iter().zip(weights) {
        for c in mask.iter_mut().take(d) {
            *c += w;
        }
    }
    Ok(mask)
}

/// Indicator matrix [c_max * positions, m]: column j is the depth-j channel
/// indicator with each channel entry repeated `positions` times, so
/// matrix * weights is the channel mask expanded over flattened spatial
/// positions. positions = 1 gives the plain per-channel mask.
pub fn depth_indicator_matrix(depths: &[usize], c_max: usize, positions: usize) -> Result<Tensor> {
    for &d in depths {
        if d > c_max {
            return Err(DasError::Argument(format!(
                "depth {d} exceeds the channel budget {c_max}"
            )));
        }
    }
    let m = depths.len();
    let rows = c_max * positions;
    let mut data = vec![0.0; rows * m];
    for (j, &d) in depths.iter().enumerate() {
        for c in 0..d {
            for p in 0..positions {
                data[(c * positions + p) * m + j] = 1.0;
            }
        }
    }
    Tensor::new(&[rows, m], data)
}

/// Single effective kernel sum_i alpha[i] * pad(bank_i); exactly one
/// convolution then runs per layer per step. Differentiable in both the banks
/// and the weights.
pub fn mixed_kernel(
    tape: &mut Tape,
    banks: &[Tensor],
    alpha: &Tensor,
    h_max: usize,
    w_max: usize,
) -> Result<Tensor> {
    if banks.is_empty() || banks.len() != alpha.len() {
        return Err(DasError::Argument(format!(
            "{} banks against {} mixing weights",
            banks.len(),
            alpha.len()
        )));
    }
    let padded: Vec<Tensor> = banks
        .iter()
        .map(|b| tape.pad_kernel(b, h_max, w_max))
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor> = padded.iter().collect();
    tape.weighted_sum(alpha, &refs)
}

/// The slow double sum over every (kernel, depth) candidate pair:
/// sum_ij alpha[i] * beta[j] * conv(x, banks[i][j]). Kept as the certification
/// oracle for the single-convolution path; runs without gradient tracking.
pub fn mixed_forward_reference(
    x: &Tensor,
    banks: &[Vec<Tensor>],
    alpha: &[f64],
    beta: &[f64],
    bias: &Tensor,
) -> Result<Tensor> {
    if banks.len() != alpha.len() {
        return Err(DasError::Argument(format!(
            "{} bank rows against {} kernel weights",
            banks.len(),
            alpha.len()
        )));
    }
    let mut tape = Tape::no_grad();
    let mut acc: Option<Tensor> = None;
    for (row, &aw) in banks.iter().zip(alpha) {
        if row.len() != beta.len() {
            return Err(DasError::Argument(format!(
                "{} banks in a row against {} depth weights",
                row.len(),
                beta.len()
            )));
        }
        for (bank, &bw) in row.iter().zip(beta) {
            let y = tape.conv2d_same(x, bank, bias)?;
            let term = tape.scale(&y, aw * bw);
            acc = Some(match acc {
                None => term,
                Some(a) => tape.add(&a, &term)?,
            });
        }
    }
    acc.ok_or_else(|| DasError::Argument("empty bank grid".into()))
}
