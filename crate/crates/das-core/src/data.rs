//! Coherency-matrix data handling: the image and label containers with their
//! file formats, a multi-look synthetic scene generator with per-class
//! Hermitian covariances, patch extraction with mirror padding, per-class
//! splitting, and channel conversion to the real or complex network inputs.
//!
//! Patches are materialized on demand from the owning image, so datasets stay
//! small in memory even when every pixel of a scene is labeled.

use crate::complex::ComplexTensor;
use crate::error::{DasError, Result};
use crate::tensor::Tensor;
use crate::fileio::{format_err, Cursor};
use byteorder::{LittleEndian, WriteBytesExt};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::Write;
use std::path::Path;

pub const PLANES: usize = 6;

/// Upper-triangle channel order of the 3x3 Hermitian matrix.
pub const PLANE_NAMES: [&str; PLANES] = ["T11", "T12", "T13", "T22", "T23", "T33"];
const DIAG_PLANES: [usize; 3] = [0, 3, 5];
const OFFDIAG_PLANES: [usize; 3] = [1, 2, 4];

pub type Cov = [[Complex64; 3]; 3];

/// Six complex planes, each height x width, in `PLANE_NAMES` order.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherencyImage {
    pub height: usize,
    pub width: usize,
    planes: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u16>,
}

impl CoherencyImage {
    pub fn new(height: usize, width: usize, planes: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(DasError::Argument("empty image dimensions".into()));
        }
        if planes.len() != PLANES * height * width {
            return Err(DasError::Argument(format!(
                "{} plane values for {height}x{width}",
                planes.len()
            )));
        }
        Ok(Self {
            height,
            width,
            planes,
        })
    }

    pub fn at(&self, plane: usize, i: usize, j: usize) -> Complex64 {
        self.planes[(plane * self.height + i) * self.width + j]
    }

    pub fn planes(&self) -> &[Complex64] {
        &self.planes
    }
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(DasError::Argument(format!(
                "{} labels for {height}x{width}",
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn at(&self, i: usize, j: usize) -> u16 {
        self.labels[i * self.width + j]
    }

    /// Largest label present (0 when fully unlabeled).
    pub fn max_label(&self) -> u16 {
        self.labels.iter().copied().max().unwrap_or(0)
    }
}

/// T = (1/L) sum_k k k^H over the supplied scattering vectors.
pub fn coherency_from_scattering(samples: &[[Complex64; 3]]) -> Result<Cov> {
    if samples.is_empty() {
        return Err(DasError::Argument(
            "coherency average needs at least one look".into(),
        ));
    }
    let mut t = [[Complex64::new(0.0, 0.0); 3]; 3];
    for k in samples {
        for r in 0..3 {
            for c in 0..3 {
                t[r][c] += k[r] * k[c].conj();
            }
        }
    }
    let inv = 1.0 / samples.len() as f64;
    for row in t.iter_mut() {
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    Ok(t)
}

/// Smallest eigenvalue of a Hermitian 3x3, via cyclic Jacobi on the real
/// symmetric embedding [[X, -Y], [Y, X]].
fn min_eigenvalue(cov: &Cov) -> f64 {
    let mut a = [[0.0f64; 6]; 6];
    for r in 0..3 {
        for c in 0..3 {
            a[r][c] = cov[r][c].re;
            a[r + 3][c + 3] = cov[r][c].re;
            a[r][c + 3] = -cov[r][c].im;
            a[r + 3][c] = cov[r][c].im;
        }
    }
    for _ in 0..50 {
        let mut off = 0.0;
        for p in 0..6 {
            for q in (p + 1)..6 {
                off += a[p][q] * a[p][q];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..6 {
            for q in (p + 1)..6 {
                if a[p][q].abs() < 1e-18 {
                    continue;
                }
                let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..6 {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..6 {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..6).map(|i| a[i][i]).fold(f64::INFINITY, f64::min)
}

/// Hermitian within 1e-9 and eigenvalues >= -1e-10.
pub fn validate_covariance(cov: &Cov) -> Result<()> {
    for r in 0..3 {
        for c in 0..3 {
            let d = cov[r][c] - cov[c][r].conj();
            if d.norm() > 1e-9 {
                return Err(DasError::Argument(format!(
                    "covariance is not Hermitian at ({r},{c})"
                )));
            }
        }
    }
    let min = min_eigenvalue(cov);
    if min < -1e-10 {
        return Err(DasError::Argument(format!(
            "covariance has negative eigenvalue {min:.3e}"
        )));
    }
    Ok(())
}

/// Lower-triangular L with C = L L^H; zero pivots (rank deficiency) produce
/// zero columns rather than failing.
fn cholesky3(cov: &Cov) -> [[Complex64; 3]; 3] {
    let mut l = [[Complex64::new(0.0, 0.0); 3]; 3];
    for j in 0..3 {
        let mut d = cov[j][j].re;
        for k in 0..j {
            d -= l[j][k].norm_sqr();
        }
        if d <= 1e-14 {
            continue;
        }
        let pivot = d.sqrt();
        l[j][j] = Complex64::new(pivot, 0.0);
        for i in (j + 1)..3 {
            let mut v = cov[i][j];
            for k in 0..j {
                v -= l[i][k] * l[j][k].conj();
            }
            l[i][j] = v / pivot;
        }
    }
    l
}

fn upper_triangle(t: &Cov) -> [Complex64; PLANES] {
    [t[0][0], t[0][1], t[0][2], t[1][1], t[1][2], t[2][2]]
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Built-in class covariances: power triples and inter-channel correlations
/// vary smoothly with the class index, every matrix provably positive
/// definite (correlation magnitudes keep rho^2 + sigma^2 < 1).
pub fn default_covariances(classes: usize) -> Result<Vec<Cov>> {
    if classes < 2 {
        return Err(DasError::Argument(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    let mut out = Vec::with_capacity(classes);
    for cls in 0..classes {
        let t = cls as f64 / classes as f64;
        let tau = std::f64::consts::TAU;
        let p1 = 1.0 + 0.6 * (tau * t).sin();
        let p2 = 1.0 + 0.6 * (tau * (t + 1.0 / 3.0)).sin();
        let p3 = 1.0 + 0.6 * (tau * (t + 2.0 / 3.0)).sin();
        let rho = 0.4 + 0.3 * t;
        let phi = tau * t;
        let sigma = 0.3;
        let psi = std::f64::consts::PI * t + 1.0;
        let r12 = Complex64::from_polar(rho, phi);
        let r23 = Complex64::from_polar(sigma, psi);
        let s = [p1.sqrt(), p2.sqrt(), p3.sqrt()];
        let zero = Complex64::new(0.0, 0.0);
        let mut cov = [
            [Complex64::new(p1, 0.0), r12 * s[0] * s[1], zero],
            [zero, Complex64::new(p2, 0.0), r23 * s[1] * s[2]],
            [zero, zero, Complex64::new(p3, 0.0)],
        ];
        cov[1][0] = cov[0][1].conj();
        cov[2][1] = cov[1][2].conj();
        cov[2][0] = cov[0][2].conj();
        validate_covariance(&cov)?;
        out.push(cov);
    }
    Ok(out)
}

/// Block-tiled multi-look scene: the image is cut into region x region
/// blocks, each assigned a class by a seeded balanced shuffle, and every
/// pixel averages `looks` scattering vectors drawn from the circular complex
/// Gaussian with its class covariance. Values are rounded to 32-bit float
/// precision so a written scene reads back identical to the one in memory.
pub fn synth_generate(
    covariances: &[Cov],
    height: usize,
    width: usize,
    looks: usize,
    region_size: usize,
    seed: u64,
) -> Result<(CoherencyImage, LabelMap)> {
    if covariances.len() < 2 {
        return Err(DasError::Argument(format!(
            "need at least 2 classes, got {}",
            covariances.len()
        )));
    }
    if height == 0 || width == 0 || looks == 0 || region_size == 0 {
        return Err(DasError::Argument(
            "scene dimensions, looks, and region size must be positive".into(),
        ));
    }
    for cov in covariances {
        validate_covariance(cov)?;
    }
    let factors: Vec<[[Complex64; 3]; 3]> = covariances.iter().map(cholesky3).collect();

    let classes = covariances.len();
    let blocks_y = height.div_ceil(region_size);
    let blocks_x = width.div_ceil(region_size);
    let mut assignment: Vec<usize> = (0..blocks_y * blocks_x).map(|b| b % classes).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..assignment.len()).rev() {
        let j = rng.gen_range(0..=i);
        assignment.swap(i, j);
    }

    let half = Normal::new(0.0, 0.5f64.sqrt()).unwrap();
    let mut planes = vec![Complex64::new(0.0, 0.0); PLANES * height * width];
    let mut labels = vec![0u16; height * width];
    let mut k_buf = vec![[Complex64::new(0.0, 0.0); 3]; looks];
    for i in 0..height {
        for j in 0..width {
            let block = (i / region_size) * blocks_x + (j / region_size);
            let cls = assignment[block];
            let l = &factors[cls];
            for k in k_buf.iter_mut() {
                let z: Vec<Complex64> = (0..3)
                    .map(|_| {
                        let re = half.sample(&mut rng);
                        let im = half.sample(&mut rng);
                        Complex64::new(re, im)
                    })
                    .collect();
                for r in 0..3 {
                    k[r] = l[r][0] * z[0] + l[r][1] * z[1] + l[r][2] * z[2];
                }
            }
            let t = coherency_from_scattering(&k_buf)?;
            for (p, v) in upper_triangle(&t).iter().enumerate() {
                let im = if DIAG_PLANES.contains(&p) { 0.0 } else { round_f32(v.im) };
                planes[(p * height + i) * width + j] = Complex64::new(round_f32(v.re), im);
            }
            labels[i * width + j] = (cls + 1) as u16;
        }
    }
    Ok((
        CoherencyImage::new(height, width, planes)?,
        LabelMap::new(height, width, labels)?,
    ))
}

/// Symmetric (edge-repeating) reflection of an out-of-range coordinate.
pub fn mirror_index(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// The 6-plane patch centered at (ci, cj), mirror-padded at borders, laid out
/// [plane, row, col].
pub fn patch_at(image: &CoherencyImage, ci: usize, cj: usize, patch: usize) -> Vec<Complex64> {
    let r = (patch / 2) as isize;
    let mut out = Vec::with_capacity(PLANES * patch * patch);
    for p in 0..PLANES {
        for di in -r..=r {
            let si = mirror_index(ci as isize + di, image.height);
            for dj in -r..=r {
                let sj = mirror_index(cj as isize + dj, image.width);
                out.push(image.at(p, si, sj));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Unsplit,
    Train,
    Val,
    Test,
}

/// One entry per labeled pixel; patch tensors are built on request.
#[derive(Debug, Clone)]
pub struct PatchDataset {
    pub image: CoherencyImage,
    pub patch_size: usize,
    pub centers: Vec<(usize, usize)>,
    pub labels: Vec<usize>,
    pub tags: Vec<Split>,
    pub class_count: usize,
}

/// One patch per labeled pixel in row-major scan order; the center label
/// (1-based in the map) becomes the 0-based class.
pub fn extract_patches(
    image: &CoherencyImage,
    labels: &LabelMap,
    patch_size: usize,
) -> Result<PatchDataset> {
    if patch_size % 2 == 0 || patch_size == 0 {
        return Err(DasError::Argument(format!(
            "patch size must be odd, got {patch_size}"
        )));
    }
    if labels.height != image.height || labels.width != image.width {
        return Err(DasError::Argument(format!(
            "label map {}x{} does not match image {}x{}",
            labels.height, labels.width, image.height, image.width
        )));
    }
    let mut centers = Vec::new();
    let mut classes = Vec::new();
    for i in 0..image.height {
        for j in 0..image.width {
            let l = labels.at(i, j);
            if l > 0 {
                centers.push((i, j));
                classes.push((l - 1) as usize);
            }
        }
    }
    let class_count = classes.iter().map(|&c| c + 1).max().unwrap_or(0);
    let tags = vec![Split::Unsplit; centers.len()];
    Ok(PatchDataset {
        image: image.clone(),
        patch_size,
        centers,
        labels: classes,
        tags,
        class_count,
    })
}

impl PatchDataset {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.tags[i] == split).collect()
    }

    pub fn labels_at(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    fn complex_patch(&self, i: usize) -> Vec<Complex64> {
        let (ci, cj) = self.centers[i];
        patch_at(&self.image, ci, cj, self.patch_size)
    }

    /// Real input tensor [N, channels, p, p]; see `patches_to_real`.
    pub fn real_batch(&self, idx: &[usize], channels: usize) -> Result<Tensor> {
        let patches: Vec<Vec<Complex64>> = idx.iter().map(|&i| self.complex_patch(i)).collect();
        patches_to_real(&patches, self.patch_size, channels)
    }

    /// Complex input [N, 6, p, p] as a real/imaginary tensor pair.
    pub fn complex_batch(&self, idx: &[usize]) -> Result<ComplexTensor> {
        let patches: Vec<Vec<Complex64>> = idx.iter().map(|&i| self.complex_patch(i)).collect();
        patches_to_complex(&patches, self.patch_size)
    }
}

/// Layout [N, channels, p, p]: 12 channels = all real parts then all
/// imaginary parts in plane order; 9 drops the identically zero diagonal
/// imaginaries and keeps T12, T13, T23 imaginaries as channels 6..8.
pub fn patches_to_real(
    patches: &[Vec<Complex64>],
    patch_size: usize,
    channels: usize,
) -> Result<Tensor> {
    if channels != 12 && channels != 9 {
        return Err(DasError::Argument(format!(
            "real input wants 12 or 9 channels, got {channels}"
        )));
    }
    let pp = patch_size * patch_size;
    let mut data = vec![0.0f64; patches.len() * channels * pp];
    for (n, patch) in patches.iter().enumerate() {
        if patch.len() != PLANES * pp {
            return Err(DasError::Argument(format!(
                "patch holds {} values, expected {}",
                patch.len(),
                PLANES * pp
            )));
        }
        let base = n * channels * pp;
        for p in 0..PLANES {
            for t in 0..pp {
                data[base + p * pp + t] = patch[p * pp + t].re;
            }
        }
        if channels == 12 {
            for p in 0..PLANES {
                for t in 0..pp {
                    data[base + (PLANES + p) * pp + t] = patch[p * pp + t].im;
                }
            }
        } else {
            for (slot, &p) in OFFDIAG_PLANES.iter().enumerate() {
                for t in 0..pp {
                    data[base + (PLANES + slot) * pp + t] = patch[p * pp + t].im;
                }
            }
        }
    }
    Tensor::new(&[patches.len(), channels, patch_size, patch_size], data)
}

pub fn patches_to_complex(patches: &[Vec<Complex64>], patch_size: usize) -> Result<ComplexTensor> {
    let pp = patch_size * patch_size;
    let mut re = vec![0.0f64; patches.len() * PLANES * pp];
    let mut im = vec![0.0f64; patches.len() * PLANES * pp];
    for (n, patch) in patches.iter().enumerate() {
        if patch.len() != PLANES * pp {
            return Err(DasError::Argument(format!(
                "patch holds {} values, expected {}",
                patch.len(),
                PLANES * pp
            )));
        }
        let base = n * PLANES * pp;
        for (t, v) in patch.iter().enumerate() {
            re[base + t] = v.re;
            im[base + t] = v.im;
        }
    }
    let shape = [patches.len(), PLANES, patch_size, patch_size];
    ComplexTensor::new(Tensor::new(&shape, re)?, Tensor::new(&shape, im)?)
}

/// Seeded per-class sampling without replacement: `train` then `val` then
/// `test` indices per class (test = None takes the rest). Classes draw from
/// independent seeded streams, so changing the requested counts for one class
/// run never reshuffles another.
pub fn split_dataset(
    ds: &mut PatchDataset,
    per_class_train: usize,
    per_class_val: usize,
    per_class_test: Option<usize>,
    seed: u64,
) -> Result<()> {
    for tag in ds.tags.iter_mut() {
        *tag = Split::Unsplit;
    }
    for cls in 0..ds.class_count {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == cls).collect();
        let need = per_class_train + per_class_val + per_class_test.unwrap_or(0);
        if members.len() < need.max(per_class_train + per_class_val) {
            return Err(DasError::Argument(format!(
                "class {} has {} samples, need {}",
                cls + 1,
                members.len(),
                need
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(cls as u64 + 1);
        for i in (1..members.len()).rev() {
            let j = rng.gen_range(0..=i);
            members.swap(i, j);
        }
        let test_take = per_class_test.unwrap_or(members.len() - per_class_train - per_class_val);
        for (pos, &m) in members.iter().enumerate() {
            ds.tags[m] = if pos < per_class_train {
                Split::Train
            } else if pos < per_class_train + per_class_val {
                Split::Val
            } else if pos < per_class_train + per_class_val + test_take {
                Split::Test
            } else {
                Split::Unsplit
            };
        }
    }
    Ok(())
}

/// Per-channel affine normalization fitted on the training split. Real mode
/// centers and scales; complex mode only scales (per-channel root mean square
/// over both parts), preserving phase structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            scale: vec![1.0; channels],
        }
    }

    pub fn fit_real(x: &Tensor) -> Result<Self> {
        let s = x.shape();
        if s.len() != 4 || s[0] == 0 {
            return Err(DasError::Argument(format!(
                "standardizer wants a non-empty [N,C,H,W] tensor, got {s:?}"
            )));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let data = x.data();
        let count = (n * hw) as f64;
        let mut mean = vec![0.0; c];
        let mut scale = vec![0.0; c];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for t in 0..hw {
                    mean[ci] += data[base + t];
                }
            }
        }
        for m in mean.iter_mut() {
            *m /= count;
        }
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for t in 0..hw {
                    let d = data[base + t] - mean[ci];
                    scale[ci] += d * d;
                }
            }
        }
        for s in scale.iter_mut() {
            *s = (*s / count).sqrt();
            // constant channels (zero imaginary planes) pass through unscaled
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Ok(Self { mean, scale })
    }

    pub fn fit_complex(x: &ComplexTensor) -> Result<Self> {
        let s = x.shape().to_vec();
        if s.len() != 4 || s[0] == 0 {
            return Err(DasError::Argument(format!(
                "standardizer wants a non-empty [N,C,H,W] tensor, got {s:?}"
            )));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let (re, im) = (x.re.data(), x.im.data());
        let count = (n * hw) as f64;
        let mut scale = vec![0.0; c];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for t in 0..hw {
                    scale[ci] += re[base + t] * re[base + t] + im[base + t] * im[base + t];
                }
            }
        }
        for s in scale.iter_mut() {
            *s = (*s / count).sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Ok(Self {
            mean: vec![0.0; c],
            scale,
        })
    }

    fn apply_parts(&self, data: &[f64], c: usize, hw: usize, center: bool) -> Vec<f64> {
        let mut out = vec![0.0; data.len()];
        let n = data.len() / (c * hw);
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                let m = if center { self.mean[ci] } else { 0.0 };
                let s = self.scale[ci];
                for t in 0..hw {
                    out[base + t] = (data[base + t] - m) / s;
                }
            }
        }
        out
    }

    pub fn apply_real(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.mean.len() {
            return Err(DasError::Argument(format!(
                "standardizer over {} channels applied to {s:?}",
                self.mean.len()
            )));
        }
        let out = self.apply_parts(x.data(), s[1], s[2] * s[3], true);
        Tensor::new(s, out)
    }

    pub fn apply_complex(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        let s = x.shape().to_vec();
        if s.len() != 4 || s[1] != self.mean.len() {
            return Err(DasError::Argument(format!(
                "standardizer over {} channels applied to {s:?}",
                self.mean.len()
            )));
        }
        let hw = s[2] * s[3];
        let re = self.apply_parts(x.re.data(), s[1], hw, false);
        let im = self.apply_parts(x.im.data(), s[1], hw, false);
        ComplexTensor::new(Tensor::new(&s, re)?, Tensor::new(&s, im)?)
    }
}

const PCT_MAGIC: &[u8; 4] = b"PCT1";
const PLB_MAGIC: &[u8; 4] = b"PLB1";

/// Scene file: magic "PCT1"; u32 height, width, channel count (6); then
/// row-major pixels, each as 6 channels of f32 real, f32 imaginary.
pub fn write_pct(path: &Path, image: &CoherencyImage) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(PCT_MAGIC)?;
    w.write_u32::<LittleEndian>(image.height as u32)?;
    w.write_u32::<LittleEndian>(image.width as u32)?;
    w.write_u32::<LittleEndian>(PLANES as u32)?;
    for i in 0..image.height {
        for j in 0..image.width {
            for p in 0..PLANES {
                let v = image.at(p, i, j);
                w.write_f32::<LittleEndian>(v.re as f32)?;
                w.write_f32::<LittleEndian>(v.im as f32)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_pct(path: &Path) -> Result<CoherencyImage> {
    let bytes = std::fs::read(path)?;
    let mut cur = Cursor::new(&bytes, path);
    let magic = cur.take(4, "magic")?;
    if magic != PCT_MAGIC {
        return Err(format_err(path, 0, "bad magic, expected PCT1"));
    }
    let height = cur.u32("height")? as u64;
    let width = cur.u32("width")? as u64;
    let channels = cur.u32("channel count")?;
    if channels as usize != PLANES {
        return Err(format_err(
            path,
            12,
            format!("expected {PLANES} channels, found {channels}"),
        ));
    }
    if height == 0 || width == 0 {
        return Err(format_err(path, 4, "empty image dimensions"));
    }
    let pixels = height
        .checked_mul(width)
        .filter(|&n| n <= (usize::MAX as u64) / (PLANES as u64 * 8))
        .ok_or_else(|| format_err(path, 4, "image dimensions overflow"))?;
    let want = pixels * PLANES as u64 * 8;
    let have = (bytes.len() - cur.pos) as u64;
    if have != want {
        return Err(format_err(
            path,
            cur.pos as u64,
            format!("payload holds {have} bytes, header promises {want}"),
        ));
    }
    let (height, width) = (height as usize, width as usize);
    let mut planes = vec![Complex64::new(0.0, 0.0); PLANES * height * width];
    for i in 0..height {
        for j in 0..width {
            for p in 0..PLANES {
                let off = cur.pos as u64;
                let re = cur.f32("pixel value")? as f64;
                let im = cur.f32("pixel value")? as f64;
                if DIAG_PLANES.contains(&p) {
                    if im != 0.0 {
                        return Err(format_err(
                            path,
                            off + 4,
                            format!("diagonal {} has nonzero imaginary part", PLANE_NAMES[p]),
                        ));
                    }
                    if re < 0.0 {
                        return Err(format_err(
                            path,
                            off,
                            format!("diagonal {} is negative", PLANE_NAMES[p]),
                        ));
                    }
                }
                planes[(p * height + i) * width + j] = Complex64::new(re, im);
            }
        }
    }
    CoherencyImage::new(height, width, planes)
}

/// Label file: magic "PLB1"; u32 height, width; row-major u16 labels,
/// 0 = unlabeled.
pub fn write_plb(path: &Path, labels: &LabelMap) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(PLB_MAGIC)?;
    w.write_u32::<LittleEndian>(labels.height as u32)?;
    w.write_u32::<LittleEndian>(labels.width as u32)?;
    for &l in &labels.labels {
        w.write_u16::<LittleEndian>(l)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_plb(path: &Path) -> Result<LabelMap> {
    let bytes = std::fs::read(path)?;
    let mut cur = Cursor::new(&bytes, path);
    let magic = cur.take(4, "magic")?;
    if magic != PLB_MAGIC {
        return Err(format_err(path, 0, "bad magic, expected PLB1"));
    }
    let height = cur.u32("height")? as u64;
    let width = cur.u32("width")? as u64;
    let pixels = height
        .checked_mul(width)
        .filter(|&n| n <= (usize::MAX as u64) / 2)
        .ok_or_else(|| format_err(path, 4, "label dimensions overflow"))?;
    let want = pixels * 2;
    let have = (bytes.len() - cur.pos) as u64;
    if have != want {
        return Err(format_err(
            path,
            cur.pos as u64,
            format!("payload holds {have} bytes, header promises {want}"),
        ));
    }
    let mut labels = Vec::with_capacity(pixels as usize);
    for _ in 0..pixels {
        labels.push(cur.u16("label")?);
    }
    LabelMap::new(height as usize, width as usize, labels)
}
