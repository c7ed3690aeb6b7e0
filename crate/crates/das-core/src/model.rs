//! Concrete classifier assembly, training, evaluation, and serialization.
//!
//! A [`Model`] realizes one derived architecture with exactly the chosen
//! kernel sizes and depths: conv / pool, conv / pool, conv, then two fully
//! connected layers written as 1x1 convolutions on a 1x1 grid. Complex models
//! mirror the stack on real/imaginary pairs and classify on the final
//! amplitude. The model carries its own input standardization, so callers
//! always feed raw patches.

use crate::complex::{self, ComplexTensor};
use crate::data::{
    patch_at, patches_to_complex, patches_to_real, CoherencyImage, LabelMap, PatchDataset, Split,
    Standardizer,
};
use crate::error::{DasError, Result};
use crate::fileio::{format_err, Cursor};
use crate::metrics::{ConfusionMatrix, Metrics};
use crate::search::DerivedArchitecture;
use crate::space::LAYERS;
use crate::tensor::{AdamState, Tape, Tensor};
use byteorder::{LittleEndian, WriteBytesExt};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

/// Batch of input patches in either number mode, shaped [N, C, p, p].
#[derive(Debug, Clone)]
pub enum InputBatch {
    Real(Tensor),
    Complex(ComplexTensor),
}

impl InputBatch {
    pub fn shape(&self) -> &[usize] {
        match self {
            InputBatch::Real(t) => t.shape(),
            InputBatch::Complex(c) => c.re.shape(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.shape()[1]
    }

    pub fn patch_size(&self) -> usize {
        self.shape()[2]
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, InputBatch::Complex(_))
    }

    pub fn select(&self, idx: &[usize]) -> InputBatch {
        match self {
            InputBatch::Real(t) => InputBatch::Real(t.select_rows(idx)),
            InputBatch::Complex(c) => InputBatch::Complex(c.select_rows(idx)),
        }
    }

    /// Apply a fitted standardizer, keeping the number mode.
    pub fn standardize(&self, s: &Standardizer) -> Result<InputBatch> {
        Ok(match self {
            InputBatch::Real(t) => InputBatch::Real(s.apply_real(t)?),
            InputBatch::Complex(c) => InputBatch::Complex(s.apply_complex(c)?),
        })
    }
}

/// Input batch with one 0-based class label per row.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: InputBatch,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(x: InputBatch, labels: Vec<usize>) -> Result<Self> {
        let s = x.shape();
        if s.len() != 4 || s[2] != s[3] {
            return Err(DasError::Dimension(format!(
                "dataset input must be [N, C, p, p], got {s:?}"
            )));
        }
        if labels.len() != s[0] {
            return Err(DasError::Argument(format!(
                "{} labels for {} samples",
                labels.len(),
                s[0]
            )));
        }
        Ok(Dataset { x, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Materialize one split of a patch dataset in the input layout chosen by
    /// `channels`: 12 or 9 build real tensors, 6 builds the complex pair.
    pub fn from_patches(ds: &PatchDataset, split: Split, channels: usize) -> Result<Dataset> {
        let idx = ds.indices(split);
        let labels = ds.labels_at(&idx);
        let x = match channels {
            6 => InputBatch::Complex(ds.complex_batch(&idx)?),
            12 | 9 => InputBatch::Real(ds.real_batch(&idx, channels)?),
            c => {
                return Err(DasError::Argument(format!(
                    "input channels must be 12, 9, or 6, got {c}"
                )))
            }
        };
        Dataset::new(x, labels)
    }

    pub fn standardized(&self, s: &Standardizer) -> Result<Dataset> {
        Ok(Dataset {
            x: self.x.standardize(s)?,
            labels: self.labels.clone(),
        })
    }
}

/// Kernel shapes [cout, cin, kh, kw] for every layer of `arch`; the third
/// layer's output is flattened, so the first fully connected layer consumes
/// depth times remaining spatial cells.
fn layer_kernel_shapes(
    arch: &DerivedArchitecture,
    input_channels: usize,
    patch_size: usize,
) -> Result<Vec<[usize; 4]>> {
    let s2 = (patch_size / 2) / 2;
    if s2 == 0 {
        return Err(DasError::Argument(format!(
            "patch size {patch_size} leaves no spatial cells after two poolings"
        )));
    }
    let mut shapes = Vec::with_capacity(LAYERS);
    let mut cin = input_channels;
    for l in 0..LAYERS {
        let (kh, kw) = arch.kernels[l];
        let this_in = if l == 3 { cin * s2 * s2 } else { cin };
        shapes.push([arch.depths[l], this_in, kh, kw]);
        cin = arch.depths[l];
    }
    Ok(shapes)
}

fn check_architecture(arch: &DerivedArchitecture) -> Result<()> {
    if arch.class_count < 2 {
        return Err(DasError::Argument(format!(
            "need at least 2 classes, got {}",
            arch.class_count
        )));
    }
    for l in 0..LAYERS {
        let (h, w) = arch.kernels[l];
        if h == 0 || w == 0 || arch.depths[l] == 0 {
            return Err(DasError::Argument(format!(
                "layer {} has a zero extent or depth",
                l + 1
            )));
        }
    }
    for l in [3, 4] {
        if arch.kernels[l] != (1, 1) {
            return Err(DasError::Argument(format!(
                "layer {} is fully connected and must use kernel 1x1",
                l + 1
            )));
        }
    }
    if arch.depths[LAYERS - 1] != arch.class_count {
        return Err(DasError::Argument(format!(
            "final depth {} must equal the class count {}",
            arch.depths[LAYERS - 1],
            arch.class_count
        )));
    }
    Ok(())
}

/// One trained (or trainable) network. Parameters are stored kernel, bias per
/// layer; complex models store real kernel, imaginary kernel, real bias,
/// imaginary bias.
#[derive(Debug, Clone)]
pub struct Model {
    pub arch: DerivedArchitecture,
    pub input_channels: usize,
    pub patch_size: usize,
    pub standardizer: Standardizer,
    params: Vec<Tensor>,
}

/// Fresh model with Glorot-uniform kernels and zero biases, drawn from a
/// deterministic stream of `seed`.
pub fn build_model(
    arch: &DerivedArchitecture,
    input_channels: usize,
    patch_size: usize,
    seed: u64,
) -> Result<Model> {
    check_architecture(arch)?;
    if input_channels == 0 {
        return Err(DasError::Argument("input channel count of zero".into()));
    }
    let shapes = layer_kernel_shapes(arch, input_channels, patch_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(LAYERS * if arch.complex_mode { 4 } else { 2 });
    for shape in &shapes {
        let [cout, cin, kh, kw] = *shape;
        let fan_in = cin * kh * kw;
        let fan_out = cout * kh * kw;
        if arch.complex_mode {
            let k = ComplexTensor::glorot(shape, fan_in, fan_out, &mut rng);
            params.push(k.re);
            params.push(k.im);
            params.push(Tensor::zeros(&[cout]));
            params.push(Tensor::zeros(&[cout]));
        } else {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.push(Tensor::uniform(shape, -bound, bound, &mut rng));
            params.push(Tensor::zeros(&[cout]));
        }
    }
    Ok(Model {
        arch: arch.clone(),
        input_channels,
        patch_size,
        standardizer: Standardizer::identity(input_channels),
        params,
    })
}

/// Model around caller-supplied parameter tensors. Shapes must match what
/// `build_model` would allocate for the same architecture.
pub fn with_params(
    arch: &DerivedArchitecture,
    input_channels: usize,
    patch_size: usize,
    standardizer: Standardizer,
    params: Vec<Tensor>,
) -> Result<Model> {
    check_architecture(arch)?;
    if standardizer.mean.len() != input_channels || standardizer.scale.len() != input_channels {
        return Err(DasError::Dimension(format!(
            "standardizer covers {} channels, model expects {}",
            standardizer.mean.len(),
            input_channels
        )));
    }
    let shapes = layer_kernel_shapes(arch, input_channels, patch_size)?;
    let per_layer = if arch.complex_mode { 4 } else { 2 };
    if params.len() != LAYERS * per_layer {
        return Err(DasError::Dimension(format!(
            "expected {} parameter tensors, got {}",
            LAYERS * per_layer,
            params.len()
        )));
    }
    for (l, shape) in shapes.iter().enumerate() {
        let cout = shape[0];
        for (slot, p) in params[l * per_layer..(l + 1) * per_layer].iter().enumerate() {
            let want: &[usize] = if slot < per_layer / 2 { shape } else { &[cout] };
            if p.shape() != want {
                return Err(DasError::Dimension(format!(
                    "layer {} parameter {slot} has shape {:?}, expected {want:?}",
                    l + 1,
                    p.shape()
                )));
            }
        }
    }
    Ok(Model {
        arch: arch.clone(),
        input_channels,
        patch_size,
        standardizer,
        params,
    })
}

impl Model {
    pub fn param_tensors(&self) -> &[Tensor] {
        &self.params
    }

    /// Total trainable scalars across all kernels and biases.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, x: &InputBatch) -> Result<()> {
        let s = x.shape();
        if s.len() != 4
            || s[1] != self.input_channels
            || s[2] != self.patch_size
            || s[3] != self.patch_size
        {
            return Err(DasError::Dimension(format!(
                "expected input [N, {}, {}, {}], got {s:?}",
                self.input_channels, self.patch_size, self.patch_size
            )));
        }
        if s[0] == 0 {
            return Err(DasError::Argument("empty batch".into()));
        }
        if x.is_complex() != self.arch.complex_mode {
            return Err(DasError::Argument(
                "input mode does not match the model mode".into(),
            ));
        }
        Ok(())
    }

    fn forward_real(&self, tape: &mut Tape, params: &[Tensor], x: &Tensor) -> Result<Tensor> {
        let n = x.shape()[0];
        let mut cur = x.detach();
        for l in 0..LAYERS {
            let k = &params[2 * l];
            let b = &params[2 * l + 1];
            let y = tape.conv2d_same(&cur, k, b)?;
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

    fn forward_complex(
        &self,
        tape: &mut Tape,
        params: &[Tensor],
        x: &ComplexTensor,
    ) -> Result<Tensor> {
        let n = x.shape()[0];
        let mut cur = ComplexTensor {
            re: x.re.detach(),
            im: x.im.detach(),
        };
        for l in 0..LAYERS {
            let kernel = ComplexTensor {
                re: params[4 * l].clone(),
                im: params[4 * l + 1].clone(),
            };
            let bias = ComplexTensor {
                re: params[4 * l + 2].clone(),
                im: params[4 * l + 3].clone(),
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

    /// Class scores [N, classes] using an explicit parameter list (the
    /// tensors registered on `tape` during training). Standardization is
    /// applied to the raw input first.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        params: &[Tensor],
        x: &InputBatch,
    ) -> Result<Tensor> {
        self.check_input(x)?;
        if params.len() != self.params.len() {
            return Err(DasError::State(format!(
                "{} parameter tensors supplied, model holds {}",
                params.len(),
                self.params.len()
            )));
        }
        let xs = x.standardize(&self.standardizer)?;
        match xs {
            InputBatch::Real(t) => self.forward_real(tape, params, &t),
            InputBatch::Complex(c) => self.forward_complex(tape, params, &c),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: &InputBatch) -> Result<Tensor> {
        self.forward_with(tape, &self.params.clone(), x)
    }

    /// Predicted 0-based classes, lowest index on tied scores. Runs in
    /// fixed-size chunks so arbitrarily large batches stay in memory.
    pub fn predict(&self, x: &InputBatch) -> Result<Vec<usize>> {
        let n = x.len();
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + PREDICT_CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let xb = x.select(&idx);
            let mut tape = Tape::no_grad();
            let logits = self.forward(&mut tape, &xb)?;
            if !logits.all_finite() {
                return Err(DasError::State(
                    "non-finite class scores during prediction".into(),
                ));
            }
            let k = logits.shape()[1];
            let data = logits.data();
            for row in 0..(end - start) {
                let r = &data[row * k..(row + 1) * k];
                let mut best = 0;
                for (i, &v) in r.iter().enumerate().skip(1) {
                    if v > r[best] {
                        best = i;
                    }
                }
                out.push(best);
            }
            start = end;
        }
        Ok(out)
    }

    /// Confusion-matrix metrics of the model on a labeled dataset.
    pub fn evaluate(&self, data: &Dataset) -> Result<Metrics> {
        if data.is_empty() {
            return Err(DasError::Argument("empty evaluation dataset".into()));
        }
        let preds = self.predict(&data.x)?;
        let mut cm = ConfusionMatrix::new(self.arch.class_count)?;
        for (&p, &t) in preds.iter().zip(&data.labels) {
            cm.accumulate(t, p)?;
        }
        cm.compute()
    }

    /// Label every pixel of a scene: mirror-padded patches around each pixel
    /// are classified in chunks, and predictions become 1-based map labels.
    pub fn classify_map(&self, image: &CoherencyImage) -> Result<LabelMap> {
        let p = self.patch_size;
        let (h, w) = (image.height, image.width);
        let mut labels = vec![0u16; h * w];
        if self.arch.class_count > u16::MAX as usize {
            return Err(DasError::Argument(format!(
                "{} classes exceed the label map range",
                self.arch.class_count
            )));
        }
        let mut pixel = 0;
        while pixel < h * w {
            let end = (pixel + PREDICT_CHUNK).min(h * w);
            let patches: Vec<Vec<Complex64>> = (pixel..end)
                .map(|q| patch_at(image, q / w, q % w, p))
                .collect();
            let xb = if self.arch.complex_mode {
                InputBatch::Complex(patches_to_complex(&patches, p)?)
            } else {
                InputBatch::Real(patches_to_real(&patches, p, self.input_channels)?)
            };
            let preds = self.predict(&xb)?;
            for (q, &c) in (pixel..end).zip(&preds) {
                labels[q] = c as u16 + 1;
            }
            pixel = end;
        }
        LabelMap::new(h, w, labels)
    }

    /// Minibatch Adam training on the cross-entropy loss. With a validation
    /// split and `select_best`, the weights that scored the highest
    /// validation overall accuracy (earliest epoch on ties) are restored at
    /// the end; otherwise the final weights stand.
    pub fn fit(
        &mut self,
        train: &Dataset,
        val: Option<&Dataset>,
        cfg: &TrainConfig,
        mut log: Option<&mut (dyn Write + '_)>,
    ) -> Result<Vec<EpochRecord>> {
        if train.is_empty() {
            return Err(DasError::Argument("empty training dataset".into()));
        }
        if cfg.batch_size == 0 {
            return Err(DasError::Argument("batch size of zero".into()));
        }
        if !cfg.learning_rate.is_finite() {
            return Err(DasError::Argument("learning rate must be finite".into()));
        }
        if let Some(&bad) = train
            .labels
            .iter()
            .find(|&&l| l >= self.arch.class_count)
        {
            return Err(DasError::Argument(format!(
                "label {bad} outside {} classes",
                self.arch.class_count
            )));
        }
        let n = train.len();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let mut adam = AdamState::for_params(&self.params);
        let mut idx: Vec<usize> = (0..n).collect();
        let mut records = Vec::with_capacity(cfg.epochs);
        let mut best: Option<(f64, Vec<Tensor>)> = None;
        for e in 0..cfg.epochs {
            idx.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for (b, chunk) in idx.chunks(cfg.batch_size).enumerate() {
                let xb = train.x.select(chunk);
                let yb: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
                let mut tape = Tape::new();
                let reg: Vec<Tensor> = self.params.iter().map(|p| tape.param(p)).collect();
                let logits = self.forward_with(&mut tape, &reg, &xb)?;
                let loss = tape.cross_entropy_softmax(&logits, &yb)?;
                let value = loss.data()[0];
                if !value.is_finite() {
                    return Err(DasError::Divergence {
                        phase: "train".into(),
                        epoch: e + 1,
                        batch: b + 1,
                    });
                }
                loss_sum += value * chunk.len() as f64;
                let mut grads = tape.backward(&loss)?;
                let grad_vecs: Vec<Vec<f64>> = reg
                    .iter()
                    .zip(&self.params)
                    .map(|(r, p)| grads.take(r).unwrap_or_else(|| vec![0.0; p.len()]))
                    .collect();
                // overflowing gradients would poison the parameters as NaN
                if grad_vecs.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(DasError::Divergence {
                        phase: "train".into(),
                        epoch: e + 1,
                        batch: b + 1,
                    });
                }
                let grad_refs: Vec<&[f64]> = grad_vecs.iter().map(|g| g.as_slice()).collect();
                adam.step(&mut self.params, &grad_refs, cfg.learning_rate)?;
            }
            let train_loss = loss_sum / n as f64;
            let val_oa = match val {
                Some(v) => Some(self.evaluate(v)?.oa),
                None => None,
            };
            if let (Some(oa), true) = (val_oa, cfg.select_best) {
                if best.as_ref().map_or(true, |(b, _)| oa > *b) {
                    best = Some((oa, self.params.clone()));
                }
            }
            if let Some(w) = log.as_deref_mut() {
                match val_oa {
                    Some(oa) => writeln!(w, "epoch={} loss={:.6} val_oa={:.4}", e + 1, train_loss, oa)?,
                    None => writeln!(w, "epoch={} loss={:.6}", e + 1, train_loss)?,
                }
            }
            records.push(EpochRecord {
                epoch: e + 1,
                train_loss,
                val_oa,
            });
        }
        if let Some((_, params)) = best {
            self.params = params;
        }
        Ok(records)
    }
}

const PREDICT_CHUNK: usize = 256;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub select_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 64,
            learning_rate: 1e-4,
            seed: 0,
            select_best: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_oa: Option<f64>,
}

const DASM_MAGIC: &[u8; 4] = b"DASM";
const DASM_VERSION: u32 = 1;
const MAX_TENSOR_RANK: u32 = 8;
const MAX_TENSOR_ELEMENTS: u64 = 1 << 26;
const MAX_TEXT_BYTES: u32 = 1 << 16;

fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    w.write_u32::<LittleEndian>(t.shape().len() as u32)?;
    for &d in t.shape() {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    for &v in t.data() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_tensor(cur: &mut Cursor) -> Result<Tensor> {
    let rank = cur.u32("tensor rank")?;
    if rank == 0 || rank > MAX_TENSOR_RANK {
        return Err(cur.err(format!("tensor rank {rank} out of range")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut elements = 1u64;
    for _ in 0..rank {
        let d = cur.u32("tensor dimension")? as u64;
        elements = elements.saturating_mul(d.max(1)).min(u64::MAX);
        if d == 0 {
            return Err(cur.err("tensor dimension of zero"));
        }
        shape.push(d as usize);
    }
    if elements > MAX_TENSOR_ELEMENTS {
        return Err(cur.err(format!("tensor holds {elements} elements")));
    }
    let mut data = Vec::with_capacity(elements as usize);
    for _ in 0..elements {
        let v = cur.f64("tensor value")?;
        if !v.is_finite() {
            return Err(cur.err("non-finite tensor value"));
        }
        data.push(v);
    }
    Tensor::new(&shape, data)
}

/// Model file: magic "DASM"; u32 version; u8 complex flag; u32 patch size;
/// length-prefixed architecture text; u32 tensor count; then each tensor as
/// u32 rank, u32 dimensions, f64 values. Tensors appear as standardizer mean,
/// standardizer scale, then parameters in declaration order.
pub fn write_model(path: &Path, model: &Model) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(DASM_MAGIC)?;
    w.write_u32::<LittleEndian>(DASM_VERSION)?;
    w.write_u8(u8::from(model.arch.complex_mode))?;
    w.write_u32::<LittleEndian>(model.patch_size as u32)?;
    let text = model.arch.to_text();
    w.write_u32::<LittleEndian>(text.len() as u32)?;
    w.write_all(text.as_bytes())?;
    let c = model.input_channels;
    let mean = Tensor::new(&[c], model.standardizer.mean.clone())?;
    let scale = Tensor::new(&[c], model.standardizer.scale.clone())?;
    w.write_u32::<LittleEndian>((2 + model.params.len()) as u32)?;
    write_tensor(&mut w, &mean)?;
    write_tensor(&mut w, &scale)?;
    for t in &model.params {
        write_tensor(&mut w, t)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path)?;
    let mut cur = Cursor::new(&bytes, path);
    let magic = cur.take(4, "magic")?;
    if magic != DASM_MAGIC {
        return Err(format_err(path, 0, "bad magic, expected DASM"));
    }
    let version = cur.u32("version")?;
    if version != DASM_VERSION {
        return Err(format_err(
            path,
            4,
            format!("unsupported version {version}, expected {DASM_VERSION}"),
        ));
    }
    let complex_flag = match cur.u8("complex flag")? {
        0 => false,
        1 => true,
        v => return Err(format_err(path, 8, format!("complex flag must be 0 or 1, got {v}"))),
    };
    let patch_size = cur.u32("patch size")? as usize;
    let text_len = cur.u32("architecture text length")?;
    if text_len > MAX_TEXT_BYTES {
        return Err(cur.err(format!("architecture text of {text_len} bytes")));
    }
    let text_offset = cur.pos as u64;
    let text_bytes = cur.take(text_len as usize, "architecture text")?;
    let text = std::str::from_utf8(text_bytes)
        .map_err(|_| format_err(path, text_offset, "architecture text is not valid UTF-8"))?;
    let arch = DerivedArchitecture::from_text(text)
        .map_err(|e| format_err(path, text_offset, format!("bad architecture text: {e}")))?;
    if arch.complex_mode != complex_flag {
        return Err(format_err(
            path,
            8,
            "complex flag disagrees with the architecture text",
        ));
    }
    let count = cur.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        tensors.push(read_tensor(&mut cur)?);
    }
    cur.done()?;

    let per_layer = if arch.complex_mode { 4 } else { 2 };
    let expected = 2 + LAYERS * per_layer;
    if count != expected {
        return Err(format_err(
            path,
            bytes.len() as u64,
            format!("expected {expected} tensors, found {count}"),
        ));
    }
    if tensors[0].shape().len() != 1 || tensors[0].shape() != tensors[1].shape() {
        return Err(format_err(
            path,
            bytes.len() as u64,
            "standardizer tensors must be equal-length vectors",
        ));
    }
    if tensors[1].data().iter().any(|&v| v <= 0.0) {
        return Err(format_err(
            path,
            bytes.len() as u64,
            "standardizer scale must be positive",
        ));
    }
    let mean = tensors[0].data().to_vec();
    let scale = tensors[1].data().to_vec();
    let input_channels = mean.len();
    let shapes = layer_kernel_shapes(&arch, input_channels, patch_size)
        .map_err(|e| format_err(path, bytes.len() as u64, e.to_string()))?;
    let mut expected_shapes: Vec<Vec<usize>> = Vec::with_capacity(LAYERS * per_layer);
    for shape in &shapes {
        let cout = shape[0];
        if arch.complex_mode {
            expected_shapes.push(shape.to_vec());
            expected_shapes.push(shape.to_vec());
            expected_shapes.push(vec![cout]);
            expected_shapes.push(vec![cout]);
        } else {
            expected_shapes.push(shape.to_vec());
            expected_shapes.push(vec![cout]);
        }
    }
    let params: Vec<Tensor> = tensors.split_off(2);
    for (i, (t, want)) in params.iter().zip(&expected_shapes).enumerate() {
        if t.shape() != want.as_slice() {
            return Err(format_err(
                path,
                bytes.len() as u64,
                format!(
                    "parameter tensor {i} has shape {:?}, expected {want:?}",
                    t.shape()
                ),
            ));
        }
    }
    Ok(Model {
        arch,
        input_channels,
        patch_size,
        standardizer: Standardizer { mean, scale },
        params,
    })
}
