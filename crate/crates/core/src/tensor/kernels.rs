//! Raw slice kernels behind the differentiable ops.
//!
//! Convolutions lower to matrix products through `im2col`/`col2im`. Batch
//! items are processed independently (optionally in parallel) and any
//! cross-item reduction happens afterwards in item order, so results do not
//! depend on the thread count.

use rayon::prelude::*;

use super::Scalar;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c[m×n] += aᵀ · b` where `a` is stored `k×m` and `b` is `k×n`.
pub fn gemm_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == T::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += api * bv;
            }
        }
    }
}

/// `c[m×n] += a · bᵀ` where `a` is `m×k` and `b` is stored `n×k`.
pub fn gemm_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            c[i * n + j] += acc;
        }
    }
}

/// Geometry of a 2-D sliding window over one `channels×height×width` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Visits every (column-row, output-position, source-index) triple that
    /// lands inside the image.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let positions = self.positions();
        for c in 0..self.channels {
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let row = (c * self.kernel_h + ky) * self.kernel_w + kx;
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        let src_row = (c * self.height + iy as usize) * self.width;
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= self.width as isize {
                                continue;
                            }
                            f(row * positions + oy * self.out_w + ox, row, src_row + ix as usize);
                        }
                    }
                }
            }
        }
    }

    /// Unfolds an image into a `rows × positions` matrix.
    pub fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        debug_assert_eq!(image.len(), self.image_len());
        cols.iter_mut().for_each(|v| *v = T::zero());
        self.for_each_tap(|dst, _, src| cols[dst] = image[src]);
    }

    /// Adjoint of [`Window::im2col`]: scatters-and-adds columns into an image.
    pub fn col2im<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        debug_assert_eq!(image.len(), self.image_len());
        self.for_each_tap(|dst, _, src| image[src] += cols[dst]);
    }
}

/// Cross-correlation of a batch. `kernel` is `out_channels × window.rows()`.
pub fn conv2d_forward<T: Scalar>(
    input: &[T],
    kernel: &[T],
    batch: usize,
    out_channels: usize,
    w: &Window,
) -> Vec<T> {
    let in_len = w.image_len();
    let out_len = out_channels * w.positions();
    let mut out = vec![T::zero(); batch * out_len];
    out.par_chunks_mut(out_len)
        .zip(input.par_chunks(in_len))
        .for_each(|(o, x)| {
            let mut cols = vec![T::zero(); w.rows() * w.positions()];
            w.im2col(x, &mut cols);
            gemm_nn(kernel, &cols, o, out_channels, w.rows(), w.positions());
        });
    out
}

/// Gradients of [`conv2d_forward`] with respect to input and kernel.
pub fn conv2d_backward<T: Scalar>(
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    batch: usize,
    out_channels: usize,
    w: &Window,
    need_input: bool,
    need_kernel: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let in_len = w.image_len();
    let out_len = out_channels * w.positions();
    let k_len = out_channels * w.rows();
    let per_item: Vec<(Vec<T>, Vec<T>)> = (0..batch)
        .into_par_iter()
        .map(|n| {
            let x = &input[n * in_len..(n + 1) * in_len];
            let g = &grad_out[n * out_len..(n + 1) * out_len];
            let mut dx = Vec::new();
            let mut dk = Vec::new();
            if need_input {
                let mut dcols = vec![T::zero(); w.rows() * w.positions()];
                gemm_tn(kernel, g, &mut dcols, w.rows(), out_channels, w.positions());
                dx = vec![T::zero(); in_len];
                w.col2im(&dcols, &mut dx);
            }
            if need_kernel {
                let mut cols = vec![T::zero(); w.rows() * w.positions()];
                w.im2col(x, &mut cols);
                dk = vec![T::zero(); k_len];
                gemm_nt(g, &cols, &mut dk, out_channels, w.positions(), w.rows());
            }
            (dx, dk)
        })
        .collect();
    reduce_items(per_item, in_len, k_len, need_input, need_kernel)
}

/// Transposed convolution of a batch: the adjoint of a convolution with
/// window `w`. Each input item is `in_channels × out_h × out_w`, `kernel` is
/// `in_channels × w.rows()`, and each output item has the window's image shape.
pub fn deconv2d_forward<T: Scalar>(
    input: &[T],
    kernel: &[T],
    batch: usize,
    in_channels: usize,
    w: &Window,
) -> Vec<T> {
    let in_len = in_channels * w.positions();
    let out_len = w.image_len();
    let mut out = vec![T::zero(); batch * out_len];
    out.par_chunks_mut(out_len)
        .zip(input.par_chunks(in_len))
        .for_each(|(o, y)| {
            let mut cols = vec![T::zero(); w.rows() * w.positions()];
            gemm_tn(kernel, y, &mut cols, w.rows(), in_channels, w.positions());
            w.col2im(&cols, o);
        });
    out
}

pub fn deconv2d_backward<T: Scalar>(
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    batch: usize,
    in_channels: usize,
    w: &Window,
    need_input: bool,
    need_kernel: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let in_len = in_channels * w.positions();
    let out_len = w.image_len();
    let k_len = in_channels * w.rows();
    let per_item: Vec<(Vec<T>, Vec<T>)> = (0..batch)
        .into_par_iter()
        .map(|n| {
            let y = &input[n * in_len..(n + 1) * in_len];
            let g = &grad_out[n * out_len..(n + 1) * out_len];
            let mut gcols = vec![T::zero(); w.rows() * w.positions()];
            w.im2col(g, &mut gcols);
            let mut dy = Vec::new();
            let mut dk = Vec::new();
            if need_input {
                dy = vec![T::zero(); in_len];
                gemm_nn(kernel, &gcols, &mut dy, in_channels, w.rows(), w.positions());
            }
            if need_kernel {
                dk = vec![T::zero(); k_len];
                gemm_nt(y, &gcols, &mut dk, in_channels, w.positions(), w.rows());
            }
            (dy, dk)
        })
        .collect();
    reduce_items(per_item, in_len, k_len, need_input, need_kernel)
}

fn reduce_items<T: Scalar>(
    per_item: Vec<(Vec<T>, Vec<T>)>,
    in_len: usize,
    k_len: usize,
    need_input: bool,
    need_kernel: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let batch = per_item.len();
    let mut dx = need_input.then(|| Vec::with_capacity(batch * in_len));
    let mut dk = need_kernel.then(|| vec![T::zero(); k_len]);
    for (x, k) in per_item {
        if let Some(dx) = dx.as_mut() {
            dx.extend_from_slice(&x);
        }
        if let Some(dk) = dk.as_mut() {
            for (a, b) in dk.iter_mut().zip(&k) {
                *a += *b;
            }
        }
    }
    (dx, dk)
}
