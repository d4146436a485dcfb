//! Raw slice kernels behind the graph ops.

use crate::exec;
use crate::Real;

/// `op(a)·op(b)` where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// With `ta` the buffer `a` holds a `k×m` matrix, likewise `tb` means `b` is `n×k`.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, ta: bool, tb: bool) -> Vec<T> {
    assert_eq!(a.len(), m * k, "matmul lhs size");
    assert_eq!(b.len(), k * n, "matmul rhs size");
    let mut c = vec![T::zero(); m * n];
    if m == 0 || n == 0 {
        return c;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: sizes were asserted above and `c` is a fresh buffer.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            T::zero(),
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

/// Geometry of a 2-D convolution over channel-last images `[n, h, w, c]`.
///
/// `im2col` lays out patches as rows `[n·ho·wo, k·k·c]` with column order
/// `(ki, kj, channel)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    /// `None` when the kernel does not fit or the stride is zero.
    pub fn new(n: usize, h: usize, w: usize, c: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || k == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        Some(Self {
            n,
            h,
            w,
            c,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        })
    }

    pub fn with_batch(self, n: usize) -> Self {
        Self { n, ..self }
    }

    pub fn image_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn patch_len(&self) -> usize {
        self.k * self.k * self.c
    }

    pub fn positions(&self) -> usize {
        self.ho * self.wo
    }

    fn source(&self, o: usize, kk: usize, limit: usize) -> Option<usize> {
        let pos = o * self.stride + kk;
        if pos < self.pad || pos - self.pad >= limit {
            None
        } else {
            Some(pos - self.pad)
        }
    }
}

pub fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    assert_eq!(x.len(), g.n * g.image_len(), "im2col input size");
    let per_sample = g.positions() * g.patch_len();
    let mut cols = vec![T::zero(); g.n * per_sample];
    exec::for_each_chunk_mut(&mut cols, per_sample, |s, out| {
        let img = &x[s * g.image_len()..(s + 1) * g.image_len()];
        for oi in 0..g.ho {
            for oj in 0..g.wo {
                let row = &mut out[(oi * g.wo + oj) * g.patch_len()..][..g.patch_len()];
                for ki in 0..g.k {
                    let Some(ii) = g.source(oi, ki, g.h) else { continue };
                    for kj in 0..g.k {
                        let Some(jj) = g.source(oj, kj, g.w) else { continue };
                        let src = &img[(ii * g.w + jj) * g.c..][..g.c];
                        row[(ki * g.k + kj) * g.c..][..g.c].copy_from_slice(src);
                    }
                }
            }
        }
    });
    cols
}

/// Adjoint of [`im2col`]: scatter-add patches back into images.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let per_sample = g.positions() * g.patch_len();
    assert_eq!(cols.len(), g.n * per_sample, "col2im input size");
    let mut x = vec![T::zero(); g.n * g.image_len()];
    exec::for_each_chunk_mut(&mut x, g.image_len(), |s, img| {
        let src = &cols[s * per_sample..(s + 1) * per_sample];
        for oi in 0..g.ho {
            for oj in 0..g.wo {
                let row = &src[(oi * g.wo + oj) * g.patch_len()..][..g.patch_len()];
                for ki in 0..g.k {
                    let Some(ii) = g.source(oi, ki, g.h) else { continue };
                    for kj in 0..g.k {
                        let Some(jj) = g.source(oj, kj, g.w) else { continue };
                        let dst = &mut img[(ii * g.w + jj) * g.c..][..g.c];
                        for (d, &v) in dst.iter_mut().zip(&row[(ki * g.k + kj) * g.c..][..g.c]) {
                            *d += v;
                        }
                    }
                }
            }
        }
    });
    x
}

/// Row-wise log-softmax over the last axis of width `f`.
pub fn log_softmax<T: Real>(x: &[T], f: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (src, dst) in x.chunks(f).zip(out.chunks_mut(f)) {
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + src.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = v - lse;
        }
    }
    out
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}
