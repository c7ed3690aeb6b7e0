//! One-shot differentiable search over kernel sizes and channel depths.
//!
//! A single over-parameterized network is trained in two alternating phases.
//! The kernel phase keeps one weight bank per kernel-size candidate and mixes
//! the banks through a simplex projection of trainable scores, while depth
//! candidates enter as a fixed uniform input-channel mask. The depth phase
//! freezes the winning kernel sizes, re-initializes one bank per layer, and
//! tracks the depth scores through indicator mask views instead. Either way a
//! layer runs exactly one convolution per step, so candidate counts add
//! rather than multiply.

use crate::complex::{self, ComplexTensor};
use crate::error::{DasError, Result};
use crate::fileio;
use crate::model::{self, Dataset, InputBatch, TrainConfig};
use crate::sparsemax;
use crate::space::{channel_mask, depth_indicator_matrix, mixed_kernel, SearchSpaceSpec, LAYERS};
use crate::tensor::{AdamState, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

/// One concrete network: a kernel size and depth per layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivedArchitecture {
    pub kernels: [(usize, usize); LAYERS],
    pub depths: [usize; LAYERS],
    pub class_count: usize,
    pub complex_mode: bool,
}

impl DerivedArchitecture {
    /// Canonical text form; identical fields always produce identical bytes.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for l in 0..LAYERS {
            let (h, w) = self.kernels[l];
            s.push_str(&format!("layer{}.kernel={}x{}\n", l + 1, h, w));
            s.push_str(&format!("layer{}.depth={}\n", l + 1, self.depths[l]));
        }
        s.push_str(&format!("classes={}\n", self.class_count));
        s.push_str(&format!("complex={}\n", u8::from(self.complex_mode)));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        parse_arch(text).map_err(|(_, msg)| DasError::Argument(msg))
    }

    /// Short one-line form for logs: "3x3/16,5x5/32,...".
    pub fn summary(&self) -> String {
        let parts: Vec<String> = (0..LAYERS)
            .map(|l| format!("{}x{}/{}", self.kernels[l].0, self.kernels[l].1, self.depths[l]))
            .collect();
        if self.complex_mode {
            format!("{},complex", parts.join(","))
        } else {
            parts.join(",")
        }
    }

    /// Every choice must come from the candidate lists of `spec`.
    pub fn validate_against(&self, spec: &SearchSpaceSpec) -> Result<()> {
        if self.class_count != spec.class_count {
            return Err(DasError::Argument(format!(
                "architecture has {} classes, space has {}",
                self.class_count, spec.class_count
            )));
        }
        for l in 0..LAYERS {
            let cand = &spec.layers[l];
            if !cand.kernel_sizes.contains(&self.kernels[l]) {
                return Err(DasError::Argument(format!(
                    "layer {} kernel {}x{} is not a candidate",
                    l + 1,
                    self.kernels[l].0,
                    self.kernels[l].1
                )));
            }
            if !cand.depths.contains(&self.depths[l]) {
                return Err(DasError::Argument(format!(
                    "layer {} depth {} is not a candidate",
                    l + 1,
                    self.depths[l]
                )));
            }
        }
        Ok(())
    }
}

pub fn write_architecture(path: &Path, arch: &DerivedArchitecture) -> Result<()> {
    std::fs::write(path, arch.to_text())?;
    Ok(())
}

pub fn read_architecture(path: &Path) -> Result<DerivedArchitecture> {
    let text = std::fs::read_to_string(path)?;
    parse_arch(&text).map_err(|(offset, msg)| fileio::format_err(path, offset, msg))
}

/// Line-based parser; returns (byte offset, message) on failure.
fn parse_arch(text: &str) -> std::result::Result<DerivedArchitecture, (u64, String)> {
    let mut kernels: [Option<(usize, usize)>; LAYERS] = [None; LAYERS];
    let mut depths: [Option<usize>; LAYERS] = [None; LAYERS];
    let mut classes: Option<usize> = None;
    let mut complex_flag: Option<bool> = None;
    let mut offset = 0u64;
    for (ln, raw_line) in text.split('\n').enumerate() {
        let line_offset = offset;
        offset += raw_line.len() as u64 + 1;
        let fail = |msg: String| (line_offset, format!("line {}: {}", ln + 1, msg));
        let line = raw_line.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| fail("expected key=value".into()))?;
        if key == "classes" {
            if classes.is_some() {
                return Err(fail("duplicate key classes".into()));
            }
            let c: usize = value
                .parse()
                .map_err(|_| fail(format!("invalid class count {value:?}")))?;
            classes = Some(c);
        } else if key == "complex" {
            if complex_flag.is_some() {
                return Err(fail("duplicate key complex".into()));
            }
            complex_flag = Some(match value {
                "0" => false,
                "1" => true,
                _ => return Err(fail(format!("complex must be 0 or 1, got {value:?}"))),
            });
        } else if let Some(rest) = key.strip_prefix("layer") {
            let (idx_str, field) = rest
                .split_once('.')
                .ok_or_else(|| fail(format!("unknown key {key:?}")))?;
            let idx: usize = idx_str
                .parse()
                .map_err(|_| fail(format!("invalid layer index {idx_str:?}")))?;
            if idx < 1 || idx > LAYERS {
                return Err(fail(format!("layer index must be 1..{LAYERS}, got {idx}")));
            }
            match field {
                "kernel" => {
                    if kernels[idx - 1].is_some() {
                        return Err(fail(format!("duplicate key {key}")));
                    }
                    let (hs, ws) = value
                        .split_once('x')
                        .ok_or_else(|| fail(format!("kernel must look like 3x3, got {value:?}")))?;
                    let h: usize = hs
                        .parse()
                        .map_err(|_| fail(format!("invalid kernel height {hs:?}")))?;
                    let w: usize = ws
                        .parse()
                        .map_err(|_| fail(format!("invalid kernel width {ws:?}")))?;
                    if h == 0 || w == 0 {
                        return Err(fail(format!("kernel {h}x{w} has a zero extent")));
                    }
                    kernels[idx - 1] = Some((h, w));
                }
                "depth" => {
                    if depths[idx - 1].is_some() {
                        return Err(fail(format!("duplicate key {key}")));
                    }
                    let d: usize = value
                        .parse()
                        .map_err(|_| fail(format!("invalid depth {value:?}")))?;
                    if d == 0 {
                        return Err(fail("depth must be at least 1".into()));
                    }
                    depths[idx - 1] = Some(d);
                }
                _ => return Err(fail(format!("unknown key {key:?}"))),
            }
        } else {
            return Err(fail(format!("unknown key {key:?}")));
        }
    }
    let end = text.len() as u64;
    let missing = |what: String| (end, format!("missing key {what}"));
    let classes = classes.ok_or_else(|| missing("classes".into()))?;
    let complex_mode = complex_flag.ok_or_else(|| missing("complex".into()))?;
    let mut k = [(0usize, 0usize); LAYERS];
    let mut d = [0usize; LAYERS];
    for l in 0..LAYERS {
        k[l] = kernels[l].ok_or_else(|| missing(format!("layer{}.kernel", l + 1)))?;
        d[l] = depths[l].ok_or_else(|| missing(format!("layer{}.depth", l + 1)))?;
    }
    if classes < 2 {
        return Err((end, format!("need at least 2 classes, got {classes}")));
    }
    for l in [3, 4] {
        if k[l] != (1, 1) {
            return Err((
                end,
                format!("layer{} is fully connected and must use kernel 1x1", l + 1),
            ));
        }
    }
    if d[LAYERS - 1] != classes {
        return Err((
            end,
            format!(
                "layer{} depth {} must equal the class count {}",
                LAYERS,
                d[LAYERS - 1],
                classes
            ),
        ));
    }
    Ok(DerivedArchitecture {
        kernels: k,
        depths: d,
        class_count: classes,
        complex_mode,
    })
}

/// Raw (unprojected) architecture scores, one vector per layer. Layers with a
/// single candidate carry the vector [0.0].
#[derive(Debug, Clone, PartialEq)]
pub struct ArchParams {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sparsemax,
    Softmax,
}

impl Activation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sparsemax" => Ok(Activation::Sparsemax),
            "softmax" => Ok(Activation::Softmax),
            _ => Err(DasError::Config(format!(
                "activation must be sparsemax or softmax, got {s:?}"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Sparsemax => "sparsemax",
            Activation::Softmax => "softmax",
        }
    }

    fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            Activation::Sparsemax => sparsemax::sparsemax(z),
            Activation::Softmax => sparsemax::softmax(z),
        }
    }

    fn apply_on(&self, tape: &mut Tape, z: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Sparsemax => tape.sparsemax(z),
            Activation::Softmax => tape.softmax(z),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub epochs_alpha: usize,
    pub epochs_beta: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub activation: Activation,
    pub complex_mode: bool,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            epochs_alpha: 200,
            epochs_beta: 200,
            batch_size: 64,
            learning_rate: 1e-4,
            gamma: 1e-3,
            activation: Activation::Sparsemax,
            complex_mode: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Kernel,
    Depth,
}

impl Phase {
    pub fn tag(&self) -> &'static str {
        match self {
            Phase::Kernel => "a",
            Phase::Depth => "b",
        }
    }
}

/// How a layer's input channels are gated by the previous layer's depth
/// choice.
enum MaskPlan {
    /// First layer: the input is never masked.
    Open,
    /// Constant mask vector.
    Fixed(Tensor),
    /// mask = indicator * activation(params[raw]); raw points at the previous
    /// layer's depth scores.
    Tracked { indicator: Tensor, raw: usize },
}

struct LayerPlan {
    banks_re: Vec<usize>,
    banks_im: Vec<usize>,
    bias_re: usize,
    bias_im: Option<usize>,
    kernel_raw: Option<usize>,
    depth_raw: Option<usize>,
    sizes: Vec<(usize, usize)>,
    h_max: usize,
    w_max: usize,
    mask: MaskPlan,
}

/// The shared-weight network searched in one phase. All trainable state lives
/// in `params`; the layer plans only hold indices into it.
pub struct Supernet {
    phase: Phase,
    complex_mode: bool,
    activation: Activation,
    input_channels: usize,
    patch_size: usize,
    params: Vec<Tensor>,
    layers: Vec<LayerPlan>,
}

fn expand_mask(mask: &[f64], positions: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(mask.len() * positions);
    for &v in mask {
        for _ in 0..positions {
            out.push(v);
        }
    }
    out
}

impl Supernet {
    /// Kernel-size phase: every candidate gets its own bank, depths are
    /// averaged uniformly into fixed input masks.
    pub fn kernel_phase(
        spec: &SearchSpaceSpec,
        input_channels: usize,
        patch_size: usize,
        complex_mode: bool,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        Self::build(
            spec,
            input_channels,
            patch_size,
            complex_mode,
            activation,
            Phase::Kernel,
            None,
            seed,
        )
    }

    /// Depth phase: kernel sizes are frozen to `chosen`, fresh single banks
    /// are drawn, and depth scores are tracked through mask views.
    pub fn depth_phase(
        spec: &SearchSpaceSpec,
        input_channels: usize,
        patch_size: usize,
        complex_mode: bool,
        activation: Activation,
        chosen: &[(usize, usize); LAYERS],
        seed: u64,
    ) -> Result<Self> {
        Self::build(
            spec,
            input_channels,
            patch_size,
            complex_mode,
            activation,
            Phase::Depth,
            Some(chosen),
            seed,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        spec: &SearchSpaceSpec,
        input_channels: usize,
        patch_size: usize,
        complex_mode: bool,
        activation: Activation,
        phase: Phase,
        chosen: Option<&[(usize, usize); LAYERS]>,
        seed: u64,
    ) -> Result<Self> {
        if input_channels == 0 {
            return Err(DasError::Argument("input channel count of zero".into()));
        }
        let s2 = (patch_size / 2) / 2;
        if s2 == 0 {
            return Err(DasError::Argument(format!(
                "patch size {patch_size} leaves no spatial cells after two poolings"
            )));
        }
        let flat = s2 * s2;
        if let Some(ch) = chosen {
            for (l, k) in ch.iter().enumerate() {
                if !spec.layers[l].kernel_sizes.contains(k) {
                    return Err(DasError::Argument(format!(
                        "layer {} kernel {}x{} is not a candidate",
                        l + 1,
                        k.0,
                        k.1
                    )));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(match phase {
            Phase::Kernel => 101,
            Phase::Depth => 102,
        });

        let mut params: Vec<Tensor> = Vec::new();
        let mut layers: Vec<LayerPlan> = Vec::new();
        let mut cin = input_channels;
        for l in 0..LAYERS {
            let cand = &spec.layers[l];
            let cout = cand.c_max;
            let sizes: Vec<(usize, usize)> = match (phase, chosen) {
                (Phase::Kernel, _) => cand.kernel_sizes.clone(),
                (Phase::Depth, Some(ch)) => vec![ch[l]],
                (Phase::Depth, None) => {
                    return Err(DasError::State(
                        "depth phase requires chosen kernel sizes".into(),
                    ))
                }
            };
            let this_in = if l == 3 { cin * flat } else { cin };
            let h_max = sizes.iter().map(|k| k.0).max().unwrap();
            let w_max = sizes.iter().map(|k| k.1).max().unwrap();
            let mut banks_re = Vec::with_capacity(sizes.len());
            let mut banks_im = Vec::new();
            for &(kh, kw) in &sizes {
                let shape = [cout, this_in, kh, kw];
                let fan_in = this_in * kh * kw;
                let fan_out = cout * kh * kw;
                if complex_mode {
                    let k = ComplexTensor::glorot(&shape, fan_in, fan_out, &mut rng);
                    banks_re.push(params.len());
                    params.push(k.re);
                    banks_im.push(params.len());
                    params.push(k.im);
                } else {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    banks_re.push(params.len());
                    params.push(Tensor::uniform(&shape, -bound, bound, &mut rng));
                }
            }
            let bias_re = params.len();
            params.push(Tensor::zeros(&[cout]));
            let bias_im = if complex_mode {
                let i = params.len();
                params.push(Tensor::zeros(&[cout]));
                Some(i)
            } else {
                None
            };
            let kernel_raw = if phase == Phase::Kernel && sizes.len() > 1 {
                let i = params.len();
                params.push(Tensor::zeros(&[sizes.len()]));
                Some(i)
            } else {
                None
            };
            let depth_raw = if phase == Phase::Depth && cand.depths.len() > 1 {
                let i = params.len();
                params.push(Tensor::zeros(&[cand.depths.len()]));
                Some(i)
            } else {
                None
            };
            layers.push(LayerPlan {
                banks_re,
                banks_im,
                bias_re,
                bias_im,
                kernel_raw,
                depth_raw,
                sizes,
                h_max,
                w_max,
                mask: MaskPlan::Open,
            });
            cin = cout;
        }

        // Input masks realize the previous layer's depth candidates.
        for l in 1..LAYERS {
            let prev = &spec.layers[l - 1];
            let positions = if l == 3 { flat } else { 1 };
            let mask = match phase {
                Phase::Kernel => {
                    let m = prev.depths.len();
                    let uniform = vec![1.0 / m as f64; m];
                    let mv = channel_mask(&prev.depths, &uniform, prev.c_max)?;
                    MaskPlan::Fixed(Tensor::new(
                        &[prev.c_max * positions],
                        expand_mask(&mv, positions),
                    )?)
                }
                Phase::Depth => match layers[l - 1].depth_raw {
                    None => {
                        let mv = channel_mask(&prev.depths, &[1.0], prev.c_max)?;
                        MaskPlan::Fixed(Tensor::new(
                            &[prev.c_max * positions],
                            expand_mask(&mv, positions),
                        )?)
                    }
                    Some(raw) => MaskPlan::Tracked {
                        indicator: depth_indicator_matrix(&prev.depths, prev.c_max, positions)?,
                        raw,
                    },
                },
            };
            layers[l].mask = mask;
        }

        Ok(Supernet {
            phase,
            complex_mode,
            activation,
            input_channels,
            patch_size,
            params,
            layers,
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn total_parameters(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Kernel weight banks per layer (a complex bank counts once).
    pub fn bank_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|p| p.banks_re.len()).collect()
    }

    /// Kernel sizes realized by each layer's banks, in bank order.
    pub fn bank_kernel_sizes(&self) -> Vec<Vec<(usize, usize)>> {
        self.layers.iter().map(|p| p.sizes.clone()).collect()
    }

    /// Depth settings realized for each layer's output through tracked mask
    /// views on the consuming layer; 1 where the depth is not searched.
    pub fn mask_view_counts(&self) -> Vec<usize> {
        (0..LAYERS)
            .map(|l| match self.layers.get(l + 1).map(|p| &p.mask) {
                Some(MaskPlan::Tracked { indicator, .. }) => indicator.shape()[1],
                _ => 1,
            })
            .collect()
    }

    /// Register every trainable tensor on `tape`, in declaration order.
    pub fn register(&self, tape: &mut Tape) -> Vec<Tensor> {
        self.params.iter().map(|p| tape.param(p)).collect()
    }

    /// Current projected mixing weights per layer (the searched list of this
    /// phase); single-candidate layers report [1.0].
    pub fn mixing_weights(&self) -> Result<Vec<Vec<f64>>> {
        self.layers
            .iter()
            .map(|plan| {
                let raw = match self.phase {
                    Phase::Kernel => plan.kernel_raw,
                    Phase::Depth => plan.depth_raw,
                };
                match raw {
                    None => Ok(vec![1.0]),
                    Some(i) => self.activation.apply(self.params[i].data()),
                }
            })
            .collect()
    }

    /// Raw score vectors of the searched list, [0.0] for single candidates.
    pub fn searched_raw(&self) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .map(|plan| {
                let raw = match self.phase {
                    Phase::Kernel => plan.kernel_raw,
                    Phase::Depth => plan.depth_raw,
                };
                match raw {
                    None => vec![0.0],
                    Some(i) => self.params[i].data().to_vec(),
                }
            })
            .collect()
    }

    fn raw_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|p| [p.kernel_raw, p.depth_raw])
            .flatten()
            .collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4
            || shape[1] != self.input_channels
            || shape[2] != self.patch_size
            || shape[3] != self.patch_size
        {
            return Err(DasError::Dimension(format!(
                "expected input [N, {}, {}, {}], got {:?}",
                self.input_channels, self.patch_size, self.patch_size, shape
            )));
        }
        if shape[0] == 0 {
            return Err(DasError::Argument("empty batch".into()));
        }
        Ok(())
    }

    /// Input-channel mask for one layer, or None for the first.
    fn input_mask(&self, tape: &mut Tape, reg: &[Tensor], plan: &LayerPlan) -> Result<Option<Tensor>> {
        match &plan.mask {
            MaskPlan::Open => Ok(None),
            MaskPlan::Fixed(m) => Ok(Some(m.clone())),
            MaskPlan::Tracked { indicator, raw } => {
                let w = self.activation.apply_on(tape, &reg[*raw])?;
                Ok(Some(tape.linear_map(indicator, &w)?))
            }
        }
    }

    /// Mixing weights of the kernel banks, or None for a single bank.
    fn bank_weights(&self, tape: &mut Tape, reg: &[Tensor], plan: &LayerPlan) -> Result<Option<Tensor>> {
        match plan.kernel_raw {
            Some(i) if plan.banks_re.len() > 1 => {
                Ok(Some(self.activation.apply_on(tape, &reg[i])?))
            }
            _ => Ok(None),
        }
    }

    fn mix_banks(
        &self,
        tape: &mut Tape,
        reg: &[Tensor],
        bank_idx: &[usize],
        weights: Option<&Tensor>,
        plan: &LayerPlan,
    ) -> Result<Tensor> {
        match weights {
            None => Ok(reg[bank_idx[0]].clone()),
            Some(w) => {
                let banks: Vec<Tensor> = bank_idx.iter().map(|&i| reg[i].clone()).collect();
                mixed_kernel(tape, &banks, w, plan.h_max, plan.w_max)
            }
        }
    }

    fn forward_real(&self, tape: &mut Tape, reg: &[Tensor], x: &Tensor) -> Result<Tensor> {
        let n = x.shape()[0];
        let mut cur = x.detach();
        for (l, plan) in self.layers.iter().enumerate() {
            let weights = self.bank_weights(tape, reg, plan)?;
            let mut kernel = self.mix_banks(tape, reg, &plan.banks_re, weights.as_ref(), plan)?;
            if let Some(m) = self.input_mask(tape, reg, plan)? {
                kernel = tape.channel_scale(&kernel, &m)?;
            }
            let y = tape.conv2d_same(&cur, &kernel, &reg[plan.bias_re])?;
            cur = match l {
                0 | 1 => {
                    let a = tape.relu(&y);
                    tape.maxpool2x2(&a)?
                }
                2 => {
                    let a = tape.relu(&y);
                    let c = a.shape()[1] * a.shape()[2] * a.shape()[3];
                    tape.reshape(&a, &[n, c, 1, 1])?
                }
                3 => tape.relu(&y),
                _ => y,
            };
        }
        tape.flatten(&cur)
    }

    fn forward_complex(&self, tape: &mut Tape, reg: &[Tensor], x: &ComplexTensor) -> Result<Tensor> {
        let n = x.shape()[0];
        let mut cur = ComplexTensor {
            re: x.re.detach(),
            im: x.im.detach(),
        };
        for (l, plan) in self.layers.iter().enumerate() {
            let weights = self.bank_weights(tape, reg, plan)?;
            let mut kre = self.mix_banks(tape, reg, &plan.banks_re, weights.as_ref(), plan)?;
            let mut kim = self.mix_banks(tape, reg, &plan.banks_im, weights.as_ref(), plan)?;
            if let Some(m) = self.input_mask(tape, reg, plan)? {
                kre = tape.channel_scale(&kre, &m)?;
                kim = tape.channel_scale(&kim, &m)?;
            }
            let kernel = ComplexTensor { re: kre, im: kim };
            let bias = ComplexTensor {
                re: reg[plan.bias_re].clone(),
                im: reg[plan.bias_im.expect("complex bias")].clone(),
            };
            let y = complex::cconv2d_same(tape, &cur, &kernel, &bias)?;
            cur = match l {
                0 | 1 => {
                    let a = complex::crelu(tape, &y);
                    complex::cmaxpool2x2(tape, &a)?
                }
                2 => {
                    let a = complex::crelu(tape, &y);
                    let c = a.shape()[1] * a.shape()[2] * a.shape()[3];
                    ComplexTensor {
                        re: tape.reshape(&a.re, &[n, c, 1, 1])?,
                        im: tape.reshape(&a.im, &[n, c, 1, 1])?,
                    }
                }
                3 => complex::crelu(tape, &y),
                _ => y,
            };
        }
        let amp = complex::camplitude(tape, &cur)?;
        tape.flatten(&amp)
    }

    /// Class scores [N, classes] for a batch, using `reg` (the tensors
    /// returned by [`Supernet::register`]) as the trainable leaves.
    pub fn forward(&self, tape: &mut Tape, reg: &[Tensor], x: &InputBatch) -> Result<Tensor> {
        if reg.len() != self.params.len() {
            return Err(DasError::State(format!(
                "{} registered tensors for {} parameters",
                reg.len(),
                self.params.len()
            )));
        }
        self.check_input(x.shape())?;
        match (x, self.complex_mode) {
            (InputBatch::Real(t), false) => self.forward_real(tape, reg, t),
            (InputBatch::Complex(c), true) => self.forward_complex(tape, reg, c),
            _ => Err(DasError::Argument(
                "input mode does not match the network mode".into(),
            )),
        }
    }

    /// Cross-entropy plus gamma times the L1 norm of each raw score vector.
    pub fn loss(
        &self,
        tape: &mut Tape,
        reg: &[Tensor],
        x: &InputBatch,
        labels: &[usize],
        gamma: f64,
    ) -> Result<Tensor> {
        let logits = self.forward(tape, reg, x)?;
        let mut total = tape.cross_entropy_softmax(&logits, labels)?;
        if gamma != 0.0 {
            for i in self.raw_indices() {
                let l1 = tape.l1norm(&reg[i]);
                let term = tape.scale(&l1, gamma);
                total = tape.add(&total, &term)?;
            }
        }
        Ok(total)
    }
}

/// One optimization phase: joint Adam updates of weights and scores over
/// shuffled minibatches. Writes one log line per epoch when `log` is given.
fn run_phase(
    net: &mut Supernet,
    x: &InputBatch,
    labels: &[usize],
    cfg: &SearchConfig,
    epochs: usize,
    mut log: Option<&mut (dyn Write + '_)>,
) -> Result<()> {
    let n = x.len();
    if n == 0 {
        return Err(DasError::Argument("empty search dataset".into()));
    }
    if labels.len() != n {
        return Err(DasError::Argument(format!(
            "{} labels for {} samples",
            labels.len(),
            n
        )));
    }
    if cfg.batch_size == 0 {
        return Err(DasError::Argument("batch size of zero".into()));
    }
    if !cfg.learning_rate.is_finite() || !cfg.gamma.is_finite() {
        return Err(DasError::Argument(
            "learning rate and gamma must be finite".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(match net.phase {
        Phase::Kernel => 201,
        Phase::Depth => 202,
    });
    let mut adam = AdamState::for_params(&net.params);
    let mut idx: Vec<usize> = (0..n).collect();
    for e in 0..epochs {
        idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in idx.chunks(cfg.batch_size).enumerate() {
            let xb = x.select(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let reg = net.register(&mut tape);
            let loss = net.loss(&mut tape, &reg, &xb, &yb, cfg.gamma)?;
            let value = loss.data()[0];
            if !value.is_finite() {
                return Err(DasError::Divergence {
                    phase: net.phase.tag().into(),
                    epoch: e + 1,
                    batch: b + 1,
                });
            }
            loss_sum += value * chunk.len() as f64;
            let mut grads = tape.backward(&loss)?;
            let grad_vecs: Vec<Vec<f64>> = reg
                .iter()
                .zip(&net.params)
                .map(|(r, p)| grads.take(r).unwrap_or_else(|| vec![0.0; p.len()]))
                .collect();
            // overflowing gradients would poison the parameters as NaN
            if grad_vecs.iter().flatten().any(|v| !v.is_finite()) {
                return Err(DasError::Divergence {
                    phase: net.phase.tag().into(),
                    epoch: e + 1,
                    batch: b + 1,
                });
            }
            let grad_refs: Vec<&[f64]> = grad_vecs.iter().map(|g| g.as_slice()).collect();
            adam.step(&mut net.params, &grad_refs, cfg.learning_rate)?;
        }
        if let Some(w) = log.as_deref_mut() {
            let mut line = format!(
                "epoch={} phase={} loss={:.6}",
                e + 1,
                net.phase.tag(),
                loss_sum / n as f64
            );
            for (l, ws) in net.mixing_weights()?.iter().enumerate() {
                let joined: Vec<String> = ws.iter().map(|v| format!("{v:.6}")).collect();
                line.push_str(&format!(" layer{}.weights={}", l + 1, joined.join(",")));
            }
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_dataset(x: &InputBatch, labels: &[usize], class_count: usize) -> Result<()> {
    if x.len() == 0 {
        return Err(DasError::Argument("empty search dataset".into()));
    }
    if labels.len() != x.len() {
        return Err(DasError::Argument(format!(
            "{} labels for {} samples",
            labels.len(),
            x.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
        return Err(DasError::Argument(format!(
            "label {bad} outside {class_count} classes"
        )));
    }
    Ok(())
}

/// Full two-phase search. Trains kernel scores first, freezes the top-1
/// kernel sizes, then trains depth scores with fresh weights, and returns the
/// raw scores of both phases together with the derived network.
pub fn run_das(
    spec: &SearchSpaceSpec,
    x: &InputBatch,
    labels: &[usize],
    cfg: &SearchConfig,
    mut log: Option<&mut (dyn Write + '_)>,
) -> Result<(ArchParams, DerivedArchitecture)> {
    check_dataset(x, labels, spec.class_count)?;
    let mut net_a = Supernet::kernel_phase(
        spec,
        x.channels(),
        x.patch_size(),
        cfg.complex_mode,
        cfg.activation,
        cfg.seed,
    )?;
    run_phase(&mut net_a, x, labels, cfg, cfg.epochs_alpha, log.as_deref_mut())?;
    let alpha = net_a.searched_raw();
    // The projection is monotone, so the top-1 candidate is the raw argmax.
    let mut chosen = [(0usize, 0usize); LAYERS];
    for l in 0..LAYERS {
        chosen[l] = spec.layers[l].kernel_sizes[argmax(&alpha[l])];
    }
    let mut net_b = Supernet::depth_phase(
        spec,
        x.channels(),
        x.patch_size(),
        cfg.complex_mode,
        cfg.activation,
        &chosen,
        cfg.seed,
    )?;
    run_phase(&mut net_b, x, labels, cfg, cfg.epochs_beta, log.as_deref_mut())?;
    let beta = net_b.searched_raw();
    let params = ArchParams { alpha, beta };
    let arch = derive_architecture(&params, spec, cfg.complex_mode, 1)?;
    Ok((params, arch))
}

/// Hard selection from raw scores: per layer the top-1 candidate under the
/// simplex projection, first index on ties. Only k = 1 is supported.
pub fn derive_architecture(
    params: &ArchParams,
    spec: &SearchSpaceSpec,
    complex_mode: bool,
    k: usize,
) -> Result<DerivedArchitecture> {
    if k != 1 {
        return Err(DasError::Unsupported(format!(
            "architecture derivation supports k=1 only, got k={k}"
        )));
    }
    if params.alpha.len() != LAYERS || params.beta.len() != LAYERS {
        return Err(DasError::Argument(format!(
            "expected {LAYERS} score vectors per list, got {} and {}",
            params.alpha.len(),
            params.beta.len()
        )));
    }
    let mut kernels = [(0usize, 0usize); LAYERS];
    let mut depths = [0usize; LAYERS];
    for l in 0..LAYERS {
        let cand = &spec.layers[l];
        if params.alpha[l].len() != cand.kernel_sizes.len() {
            return Err(DasError::Argument(format!(
                "layer {} has {} kernel scores for {} candidates",
                l + 1,
                params.alpha[l].len(),
                cand.kernel_sizes.len()
            )));
        }
        if params.beta[l].len() != cand.depths.len() {
            return Err(DasError::Argument(format!(
                "layer {} has {} depth scores for {} candidates",
                l + 1,
                params.beta[l].len(),
                cand.depths.len()
            )));
        }
        let pa = sparsemax::sparsemax(&params.alpha[l])?;
        let pb = sparsemax::sparsemax(&params.beta[l])?;
        kernels[l] = cand.kernel_sizes[argmax(&pa)];
        depths[l] = cand.depths[argmax(&pb)];
    }
    Ok(DerivedArchitecture {
        kernels,
        depths,
        class_count: spec.class_count,
        complex_mode,
    })
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub arch: Option<DerivedArchitecture>,
    pub val_oa: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RepeatOutcome {
    pub best_run: usize,
    pub best: DerivedArchitecture,
    pub records: Vec<RunRecord>,
}

fn single_run(
    spec: &SearchSpaceSpec,
    train: &Dataset,
    val: &Dataset,
    cfg: &SearchConfig,
    select_epochs: usize,
) -> Result<(DerivedArchitecture, f64)> {
    let (_, arch) = run_das(spec, &train.x, &train.labels, cfg, None)?;
    let mut m = model::build_model(&arch, train.x.channels(), train.x.patch_size(), cfg.seed)?;
    m.fit(
        train,
        Some(val),
        &TrainConfig {
            epochs: select_epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            seed: cfg.seed,
            select_best: true,
        },
        None,
    )?;
    let metrics = m.evaluate(val)?;
    Ok((arch, metrics.oa))
}

/// Run the search `repeats` times with seeds cfg.seed, cfg.seed+1, ... Each
/// derived network is briefly retrained and scored on the validation split;
/// the best score wins, earliest run on ties. Failed runs are recorded and
/// skipped; only if every run fails does the last error propagate.
pub fn repeat_search(
    spec: &SearchSpaceSpec,
    train: &Dataset,
    val: &Dataset,
    cfg: &SearchConfig,
    repeats: usize,
    select_epochs: usize,
    mut log: Option<&mut (dyn Write + '_)>,
) -> Result<RepeatOutcome> {
    if repeats == 0 {
        return Err(DasError::Argument("need at least one search run".into()));
    }
    let mut records = Vec::with_capacity(repeats);
    let mut last_err: Option<DasError> = None;
    for r in 0..repeats {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = cfg.seed.wrapping_add(r as u64);
        match single_run(spec, train, val, &run_cfg, select_epochs) {
            Ok((arch, oa)) => {
                if let Some(w) = log.as_deref_mut() {
                    writeln!(
                        w,
                        "run={} seed={} val_oa={:.4} arch={}",
                        r + 1,
                        run_cfg.seed,
                        oa,
                        arch.summary()
                    )?;
                }
                records.push(RunRecord {
                    run: r + 1,
                    seed: run_cfg.seed,
                    arch: Some(arch),
                    val_oa: Some(oa),
                    error: None,
                });
            }
            Err(e) => {
                if let Some(w) = log.as_deref_mut() {
                    writeln!(w, "run={} seed={} error={}", r + 1, run_cfg.seed, e)?;
                }
                records.push(RunRecord {
                    run: r + 1,
                    seed: run_cfg.seed,
                    arch: None,
                    val_oa: None,
                    error: Some(e.to_string()),
                });
                last_err = Some(e);
            }
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, rec) in records.iter().enumerate() {
        if let Some(oa) = rec.val_oa {
            if best.map_or(true, |(_, b)| oa > b) {
                best = Some((i, oa));
            }
        }
    }
    match best {
        Some((i, _)) => Ok(RepeatOutcome {
            best_run: records[i].run,
            best: records[i].arch.clone().expect("scored run has an architecture"),
            records,
        }),
        None => Err(last_err.expect("no successes implies an error")),
    }
}
