//! Dense rank-4 tensors in `(batch, channels, height, width)` layout.
//!
//! Everything the network touches is a [`Tensor`]. The element type is
//! generic so the same kernels run in `f32` for training and in `f64` for
//! finite-difference verification.

use num_traits::Float;

/// Element types the numerical kernels accept.
///
/// Adds GEMM dispatch and exact `f64` round-tripping on top of
/// [`num_traits::Float`].
pub trait Scalar:
    Float + num_traits::NumAssign + Send + Sync + std::fmt::Debug + std::fmt::Display + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `C <- alpha * A(m,k) * B(k,n) + beta * C(m,n)` with arbitrary strides.
    ///
    /// # Safety
    /// Pointers must cover every element addressed by the given shapes and
    /// strides, and `C` must not alias `A` or `B`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Dense `(n, c, h, w)` array, row-major with `w` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            data: vec![T::zero(); shape.iter().product()],
            shape,
        }
    }

    pub fn full(shape: [usize; 4], value: T) -> Self {
        Self {
            data: vec![value; shape.iter().product()],
            shape,
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: T) {
        let i = self.offset(n, c, y, x);
        self.data[i] = v;
    }

    #[inline]
    fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(n < self.shape[0] && c < self.shape[1] && y < self.shape[2] && x < self.shape[3]);
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    /// Contiguous `(c, h, w)` slice of one batch element.
    pub fn sample(&self, n: usize) -> &[T] {
        let stride = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[n * stride..(n + 1) * stride]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let stride = self.shape[1] * self.shape[2] * self.shape[3];
        &mut self.data[n * stride..(n + 1) * stride]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "shape mismatch in add_assign");
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in self.data.iter_mut() {
            *v *= s;
        }
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(parts: &[&Self]) -> Self {
        assert!(!parts.is_empty());
        let [n, _, h, w] = parts[0].shape;
        let total_c: usize = parts.iter().map(|p| p.channels()).sum();
        for p in parts {
            assert_eq!(p.batch(), n);
            assert_eq!(p.height(), h);
            assert_eq!(p.width(), w);
        }
        let mut out = Self::zeros([n, total_c, h, w]);
        let plane = h * w;
        for b in 0..n {
            let mut c_off = 0;
            for p in parts {
                let pc = p.channels();
                let src = p.sample(b);
                let dst = out.sample_mut(b);
                dst[c_off * plane..(c_off + pc) * plane].copy_from_slice(src);
                c_off += pc;
            }
        }
        out
    }

    /// Concatenate along the batch axis.
    pub fn concat_batch(parts: &[&Self]) -> Self {
        assert!(!parts.is_empty());
        let [_, c, h, w] = parts[0].shape;
        let total_n: usize = parts.iter().map(|p| p.batch()).sum();
        let mut data = Vec::with_capacity(total_n * c * h * w);
        for p in parts {
            assert_eq!([p.channels(), p.height(), p.width()], [c, h, w]);
            data.extend_from_slice(&p.data);
        }
        Self { shape: [total_n, c, h, w], data }
    }

    /// Split the channel axis into chunks of the given widths; inverse of
    /// [`Tensor::concat_channels`].
    pub fn split_channels(&self, widths: &[usize]) -> Vec<Self> {
        assert_eq!(widths.iter().sum::<usize>(), self.channels());
        let [n, _, h, w] = self.shape;
        let plane = h * w;
        let mut out: Vec<Self> = widths.iter().map(|&c| Self::zeros([n, c, h, w])).collect();
        for b in 0..n {
            let src = self.sample(b);
            let mut c_off = 0;
            for (part, &c) in out.iter_mut().zip(widths.iter()) {
                part.sample_mut(b).copy_from_slice(&src[c_off * plane..(c_off + c) * plane]);
                c_off += c;
            }
        }
        out
    }

    /// Lossless element cast through `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}
