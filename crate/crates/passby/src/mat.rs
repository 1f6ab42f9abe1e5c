//! Dense row-major matrices and the small set of vectorizable kernels the
//! regression trainer runs on.
//!
//! Everything here is written so LLVM can keep the inner loops in SIMD
//! registers: fixed-size accumulator tiles, `chunks_exact` iteration and
//! explicit `mul_add`. Build with `-C target-cpu=native` (the workspace
//! `.cargo/config.toml` does) or the fused multiply-adds fall back to libm.

/// Floating-point scalar the numeric kernels are generic over.
///
/// Implemented for `f32` (training) and `f64` (oracles, gradient checks).
pub trait Scalar:
    Copy
    + PartialOrd
    + Default
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn mul_add(self, a: Self, b: Self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn max(self, other: Self) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline(always)]
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn mul_add(self, a: Self, b: Self) -> Self {
                <$t>::mul_add(self, a, b)
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline(always)]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline(always)]
            fn max(self, other: Self) -> Self {
                <$t>::max(self, other)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::ZERO; rows * cols],
        }
    }

    /// Builds a matrix from a flat row-major buffer.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer length mismatch");
        Mat { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn fill(&mut self, value: T) {
        self.data.fill(value);
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.cols)
    }

    /// Writes the transpose of `self` into `dst` (shape checked).
    pub fn transpose_into(&self, dst: &mut Mat<T>) {
        assert_eq!(self.rows, dst.cols);
        assert_eq!(self.cols, dst.rows);
        const B: usize = 32;
        for i0 in (0..self.rows).step_by(B) {
            let i1 = (i0 + B).min(self.rows);
            for j0 in (0..self.cols).step_by(B) {
                let j1 = (j0 + B).min(self.cols);
                for i in i0..i1 {
                    let src = self.row(i);
                    for j in j0..j1 {
                        dst.data[j * dst.cols + i] = src[j];
                    }
                }
            }
        }
    }
}

impl<T: Scalar> std::ops::Index<(usize, usize)> for Mat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T: Scalar> std::ops::IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

const MR: usize = 4;
const NR: usize = 16;

/// `c += a * b`, all row-major. The workhorse of the trainer.
///
/// Column tiles of B are packed contiguously, then four A rows at a time
/// stream the tile with row-local accumulators. That shape keeps the
/// accumulators in registers; letting the compiler vectorize across rows
/// instead degenerates into stack gather/scatter traffic.
pub fn gemm<T: Scalar>(c: &mut Mat<T>, a: &Mat<T>, b: &Mat<T>) {
    assert_eq!(a.cols, b.rows, "gemm: inner dimensions differ");
    assert_eq!(c.rows, a.rows, "gemm: output rows");
    assert_eq!(c.cols, b.cols, "gemm: output cols");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || k == 0 || n == 0 {
        return;
    }

    let mut btile = vec![T::ZERO; k * NR];
    let mut j0 = 0;
    while j0 < n {
        let nr = NR.min(n - j0);
        for kk in 0..k {
            let src = &b.data[kk * n + j0..kk * n + j0 + nr];
            let dst = &mut btile[kk * NR..kk * NR + NR];
            dst[..nr].copy_from_slice(src);
            for t in dst[nr..].iter_mut() {
                *t = T::ZERO;
            }
        }

        let mut acc = [[T::ZERO; NR]; MR];
        let mut i0 = 0;
        while i0 + MR <= m {
            kernel4(
                &a.data[i0 * k..(i0 + 1) * k],
                &a.data[(i0 + 1) * k..(i0 + 2) * k],
                &a.data[(i0 + 2) * k..(i0 + 3) * k],
                &a.data[(i0 + 3) * k..(i0 + 4) * k],
                &btile,
                &mut acc,
            );
            for (r, row_acc) in acc.iter().enumerate() {
                let crow = &mut c.data[(i0 + r) * n + j0..(i0 + r) * n + j0 + nr];
                for (cv, av) in crow.iter_mut().zip(row_acc) {
                    *cv += *av;
                }
            }
            i0 += MR;
        }
        while i0 < m {
            kernel1(&a.data[i0 * k..(i0 + 1) * k], &btile, &mut acc[0]);
            let crow = &mut c.data[i0 * n + j0..i0 * n + j0 + nr];
            for (cv, av) in crow.iter_mut().zip(&acc[0]) {
                *cv += *av;
            }
            i0 += 1;
        }
        j0 += NR;
    }
}

/// Four A rows against one packed B tile; accumulators live in separate
/// locals so each stays a flat register-resident vector.
fn kernel4<T: Scalar>(a0: &[T], a1: &[T], a2: &[T], a3: &[T], btile: &[T], out: &mut [[T; NR]; MR]) {
    let mut c0 = [T::ZERO; NR];
    let mut c1 = [T::ZERO; NR];
    let mut c2 = [T::ZERO; NR];
    let mut c3 = [T::ZERO; NR];
    for (kk, bk) in btile.chunks_exact(NR).enumerate() {
        let bk: &[T; NR] = bk.try_into().unwrap();
        let (x0, x1, x2, x3) = (a0[kk], a1[kk], a2[kk], a3[kk]);
        for t in 0..NR {
            c0[t] = x0.mul_add(bk[t], c0[t]);
        }
        for t in 0..NR {
            c1[t] = x1.mul_add(bk[t], c1[t]);
        }
        for t in 0..NR {
            c2[t] = x2.mul_add(bk[t], c2[t]);
        }
        for t in 0..NR {
            c3[t] = x3.mul_add(bk[t], c3[t]);
        }
    }
    out[0] = c0;
    out[1] = c1;
    out[2] = c2;
    out[3] = c3;
}

fn kernel1<T: Scalar>(a: &[T], btile: &[T], out: &mut [T; NR]) {
    let mut acc = [T::ZERO; NR];
    for (av, bk) in a.iter().zip(btile.chunks_exact(NR)) {
        let bk: &[T; NR] = bk.try_into().unwrap();
        for t in 0..NR {
            acc[t] = av.mul_add(bk[t], acc[t]);
        }
    }
    *out = acc;
}

/// Dot product with eight independent accumulator lanes.
pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    assert_eq!(x.len(), y.len(), "dot: length mismatch");
    let mut lanes = [T::ZERO; 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let mut tail = T::ZERO;
    for (xv, yv) in xc.remainder().iter().zip(yc.remainder()) {
        tail = xv.mul_add(*yv, tail);
    }
    for (xv, yv) in x.chunks_exact(8).zip(y.chunks_exact(8)) {
        let xa: &[T; 8] = xv.try_into().unwrap();
        let ya: &[T; 8] = yv.try_into().unwrap();
        for l in 0..8 {
            lanes[l] = xa[l].mul_add(ya[l], lanes[l]);
        }
    }
    let s0 = (lanes[0] + lanes[4]) + (lanes[1] + lanes[5]);
    let s1 = (lanes[2] + lanes[6]) + (lanes[3] + lanes[7]);
    (s0 + s1) + tail
}

/// `y += alpha * x`.
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    assert_eq!(x.len(), y.len(), "axpy: length mismatch");
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv = alpha.mul_add(*xv, *yv);
    }
}
