//! Low-level convolution and pooling kernels: im2col lowering plus one dgemm.
//!
//! 'Same' zero padding, stride 1. The padded origin is floor(k/2) per axis,
//! which keeps a kernel embedded in a larger spatial grid (extra zeros split
//! floor-down on top/left for odd maxima) exactly equivalent to the original.
//!
//! The im2col matrices reach tens of megabytes at supernet widths, so the
//! lowering runs through per-thread scratch buffers instead of fresh
//! allocations, and the backward pass re-lowers the saved input rather than
//! keeping the forward matrix alive on the tape.

use std::cell::RefCell;

thread_local! {
    static SCRATCH: RefCell<Scratch> = RefCell::new(Scratch::default());
}

#[derive(Default)]
pub(crate) struct Scratch {
    pub(crate) col: Vec<f64>,
    pub(crate) mat: Vec<f64>,
    pub(crate) dcol: Vec<f64>,
}

/// Run `f` with this thread's shared lowering buffers. Not reentrant: `f`
/// must not convolve again through the tape.
pub(crate) fn with_scratch<R>(f: impl FnOnce(&mut Scratch) -> R) -> R {
    SCRATCH.with(|s| f(&mut s.borrow_mut()))
}

/// Shapes for one convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvDims {
    pub fn cols_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    pub fn cols_cols(&self) -> usize {
        self.n * self.h * self.w
    }
}

/// Row-major dgemm: c[m,n] = a[m,k] * b[k,n] (+ c when accumulate).
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// col[(ci,u,v), (n,i,j)] = x[n, ci, i+u-kh/2, j+v-kw/2], zero outside.
pub(crate) fn im2col(x: &[f64], d: &ConvDims, col: &mut Vec<f64>) {
    let (h, w) = (d.h, d.w);
    let (pt, pl) = ((d.kh / 2) as isize, (d.kw / 2) as isize);
    let cols = d.cols_cols();
    col.clear();
    col.resize(d.cols_rows() * cols, 0.0);
    let plane = h * w;
    for ci in 0..d.cin {
        for u in 0..d.kh {
            for v in 0..d.kw {
                let row = (ci * d.kh + u) * d.kw + v;
                let dst = &mut col[row * cols..(row + 1) * cols];
                let di = u as isize - pt;
                let dj = v as isize - pl;
                for n in 0..d.n {
                    let src_plane = &x[(n * d.cin + ci) * plane..(n * d.cin + ci + 1) * plane];
                    let out_base = n * plane;
                    for i in 0..h {
                        let si = i as isize + di;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        let src_row = &src_plane[si as usize * w..(si as usize + 1) * w];
                        let dst_row = &mut dst[out_base + i * w..out_base + (i + 1) * w];
                        // output j reads input j + dj
                        let (j0, j1) = if dj >= 0 {
                            (0usize, (w as isize - dj).max(0) as usize)
                        } else {
                            ((-dj) as usize, w)
                        };
                        for j in j0..j1 {
                            dst_row[j] = src_row[(j as isize + dj) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add transpose of `im2col`: dx[...] += dcol[(ci,u,v), (n,i,j)].
pub(crate) fn col2im(dcol: &[f64], d: &ConvDims, dx: &mut [f64]) {
    let (h, w) = (d.h, d.w);
    let (pt, pl) = ((d.kh / 2) as isize, (d.kw / 2) as isize);
    let cols = d.cols_cols();
    let plane = h * w;
    for ci in 0..d.cin {
        for u in 0..d.kh {
            for v in 0..d.kw {
                let row = (ci * d.kh + u) * d.kw + v;
                let src = &dcol[row * cols..(row + 1) * cols];
                let di = u as isize - pt;
                let dj = v as isize - pl;
                for n in 0..d.n {
                    let dst_plane =
                        &mut dx[(n * d.cin + ci) * plane..(n * d.cin + ci + 1) * plane];
                    let src_base = n * plane;
                    for i in 0..h {
                        let si = i as isize + di;
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        let src_row = &src[src_base + i * w..src_base + (i + 1) * w];
                        let dst_row =
                            &mut dst_plane[si as usize * w..(si as usize + 1) * w];
                        let (j0, j1) = if dj >= 0 {
                            (0usize, (w as isize - dj).max(0) as usize)
                        } else {
                            ((-dj) as usize, w)
                        };
                        for j in j0..j1 {
                            dst_row[(j as isize + dj) as usize] += src_row[j];
                        }
                    }
                }
            }
        }
    }
}

/// y = kernel * col + bias, permuted from [cout, n*h*w] into [n, cout, h, w].
/// `ymat` is scratch for the pre-permutation product.
pub(crate) fn conv_forward(
    kernel: &[f64],
    bias: &[f64],
    col: &[f64],
    d: &ConvDims,
    y: &mut Vec<f64>,
    ymat: &mut Vec<f64>,
) {
    let kp = d.cols_rows();
    let cols = d.cols_cols();
    ymat.clear();
    ymat.resize(d.cout * cols, 0.0);
    gemm(
        d.cout, kp, cols, kernel, kp as isize, 1, col, cols as isize, 1, ymat, false,
    );
    let plane = d.h * d.w;
    y.clear();
    y.resize(d.n * d.cout * plane, 0.0);
    for n in 0..d.n {
        for co in 0..d.cout {
            let src = &ymat[co * cols + n * plane..co * cols + (n + 1) * plane];
            let dst = &mut y[(n * d.cout + co) * plane..(n * d.cout + co + 1) * plane];
            let b = bias[co];
            for (o, s) in dst.iter_mut().zip(src) {
                *o = s + b;
            }
        }
    }
}

/// Permute upstream [n, cout, h, w] into the matrix layout [cout, n*h*w].
pub(crate) fn permute_upstream(dy: &[f64], d: &ConvDims, dymat: &mut Vec<f64>) {
    let plane = d.h * d.w;
    let cols = d.cols_cols();
    dymat.clear();
    dymat.resize(d.cout * cols, 0.0);
    for n in 0..d.n {
        for co in 0..d.cout {
            let src = &dy[(n * d.cout + co) * plane..(n * d.cout + co + 1) * plane];
            let dst = &mut dymat[co * cols + n * plane..co * cols + (n + 1) * plane];
            dst.copy_from_slice(src);
        }
    }
}

/// 2x2 max pooling over the last two axes, floor semantics on odd extents.
/// Returns flat argmax positions into the input; ties pick the first window
/// element in row-major scan order.
pub(crate) fn maxpool_indices(
    x: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> (Vec<f64>, Vec<u32>) {
    let ho = h / 2;
    let wo = w / 2;
    let mut out = vec![0.0f64; n * c * ho * wo];
    let mut idx = vec![0u32; n * c * ho * wo];
    let plane = h * w;
    let oplane = ho * wo;
    for nc in 0..n * c {
        let src = &x[nc * plane..(nc + 1) * plane];
        for i in 0..ho {
            for j in 0..wo {
                let mut best_pos = (2 * i) * w + 2 * j;
                let mut best = src[best_pos];
                for (di, dj) in [(0usize, 1usize), (1, 0), (1, 1)] {
                    let pos = (2 * i + di) * w + (2 * j + dj);
                    if src[pos] > best {
                        best = src[pos];
                        best_pos = pos;
                    }
                }
                out[nc * oplane + i * wo + j] = best;
                idx[nc * oplane + i * wo + j] = (nc * plane + best_pos) as u32;
            }
        }
    }
    (out, idx)
}
