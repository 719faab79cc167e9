//! Dense row-major tensors, the scalar trait they are generic over, and the
//! seeded random source used by every stochastic routine in the crate.

use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{arg, shape, Error, Result};

/// Storage precision of a tensor or model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        })
    }
}

impl FromStr for DType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            other => Err(arg(format!("unknown dtype `{other}` (expected f32 or f64)"))),
        }
    }
}

/// Real scalar a [`Tensor`] can hold.
pub trait Real: Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static {
    const DTYPE: DType;

    /// `c <- alpha * a * b + beta * c` for strided `m x k` times `k x n` operands.
    ///
    /// # Safety
    /// Every index reachable through the given extents and strides must be in
    /// bounds for the respective buffer, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
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

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;

    /// The next representable value towards `+inf` / `-inf`.
    fn next_up(self) -> Self;

    fn next_down(self) -> Self;

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Real")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f64 {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }

    fn next_up(self) -> f64 {
        f64::next_up(self)
    }

    fn next_down(self) -> f64 {
        f64::next_down(self)
    }
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> f32 {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }

    fn next_up(self) -> f32 {
        f32::next_up(self)
    }

    fn next_down(self) -> f32 {
        f32::next_down(self)
    }
}

/// Strided view of a matrix operand for [`gemm`].
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Row-major `rows x cols` matrix.
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major `rows x cols` matrix stored in `data`.
    pub fn transposed(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows: cols,
            cols: rows,
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn max_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
        }
    }
}

/// `out <- a * b + beta * out`, with `out` row-major `a.rows x b.cols`.
pub fn gemm<T: Real>(a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, out: &mut [T]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(out.len() >= m * n, "gemm output buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out[..m * n].iter_mut().for_each(|v| *v = *v * beta);
        return;
    }
    assert!(
        a.max_index() < a.data.len() && b.max_index() < b.data.len(),
        "gemm operand bounds"
    );
    // SAFETY: bounds of all three operands were checked above and `out` is a
    // distinct mutable borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dense n-dimensional array in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Real = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("dtype", &T::DTYPE)
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(shape_err("tensor needs at least one dimension"));
    }
    if shape.contains(&0) {
        return Err(shape_err(format!("zero extent in shape {shape:?}")));
    }
    Ok(shape.iter().product())
}

fn shape_err(msg: impl Into<String>) -> Error {
    shape(msg)
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(shape_err(format!(
                "shape {shape:?} holds {len} elements but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    /// A rank-1 tensor. Panics on an empty vector.
    pub fn vector(data: Vec<T>) -> Self {
        assert!(!data.is_empty(), "empty vector");
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Reinterprets the same buffer under a new shape.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(shape_err(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(shape_err(format!("index {index:?} for shape {:?}", self.shape)));
        }
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return Err(shape_err(format!("index {index:?} out of bounds for {:?}", self.shape)));
            }
            off = off * d + i;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: T) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    fn zip_with(&self, other: &Self, what: &str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(shape_err(format!("{what}: {:?} vs {:?}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.len() != other.len() {
            return Err(shape_err(format!("dot: {:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(dot(&self.data, &other.data))
    }

    pub fn norm_l2(&self) -> T {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn norm_linf(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }

    /// Rows `[start, start + count)` of a tensor whose leading axis indexes samples.
    pub fn rows(&self, start: usize, count: usize) -> Result<Self> {
        let n = self.shape[0];
        if count == 0 || start + count > n {
            return Err(shape_err(format!("rows {start}..{} of {n}", start + count)));
        }
        let per = self.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = count;
        Ok(Tensor {
            shape,
            data: self.data[start * per..(start + count) * per].to_vec(),
        })
    }

    /// Product `self * rhs` of two rank-2 tensors.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.rank() != 2 || rhs.rank() != 2 || self.shape[1] != rhs.shape[0] {
            return Err(shape_err(format!("matmul: {:?} x {:?}", self.shape, rhs.shape)));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], rhs.shape[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(
            MatRef::new(&self.data, m, k),
            MatRef::new(&rhs.data, k, n),
            T::zero(),
            &mut out,
        );
        Tensor::new(vec![m, n], out)
    }
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `W x` for `W` of shape `[l, m]` and `x` of shape `[m]`.
pub fn matvec<T: Real>(w: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    if w.rank() != 2 || x.rank() != 1 || w.shape[1] != x.shape[0] {
        return Err(shape_err(format!("matvec: {:?} x {:?}", w.shape, x.shape)));
    }
    let cols = w.shape[1];
    let out = w.data.chunks_exact(cols).map(|row| dot(row, &x.data)).collect();
    Ok(Tensor::vector(out))
}

/// `[l, m]` matrix with i.i.d. `N(0, variance)` entries.
pub fn gaussian_matrix(rows: usize, cols: usize, variance: f64, rng: &mut Rng) -> Result<Tensor> {
    if rows == 0 || cols == 0 {
        return Err(arg(format!(
            "gaussian_matrix needs positive dimensions, got {rows}x{cols}"
        )));
    }
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(arg(format!("variance must be positive, got {variance}")));
    }
    let std = variance.sqrt();
    let data = (0..rows * cols).map(|_| std * rng.standard_normal()).collect();
    Tensor::new(vec![rows, cols], data)
}

/// Tensor with i.i.d. `Uniform[lo, hi)` entries.
pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(lo < hi) {
        return Err(arg(format!("empty uniform range [{lo}, {hi})")));
    }
    let len = check_shape(shape)?;
    let data = (0..len).map(|_| rng.uniform(lo, hi)).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Seeded, single-owner random source.
///
/// Parallel Monte Carlo code never shares one of these: each trial builds its
/// own from `base_seed + trial_index` via [`Rng::for_trial`].
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn for_trial(base_seed: u64, index: u64) -> Self {
        Rng::new(base_seed.wrapping_add(index))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.random::<f64>() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniformly distributed point on the unit sphere in `R^m`.
    pub fn unit_vector(&mut self, m: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..m).map(|_| self.standard_normal()).collect();
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::Rng;
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn naive_matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; rows];
        for i in 0..rows {
            for j in 0..cols {
                out[i] += w[i * cols + j] * x[j];
            }
        }
        out
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = Rng::new(7);
        let mut sum = 0.0;
        let mut sq = 0.0;
        let mut count = 0usize;
        while count < 1_000_000 {
            let t = gaussian_matrix(4, 3, 0.25, &mut rng).unwrap();
            assert_eq!(t.shape(), &[4, 3]);
            for &v in t.data() {
                sum += v;
                sq += v * v;
            }
            count += 12;
        }
        let mean = sum / count as f64;
        let var = sq / count as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 0.25).abs() < 0.05 * 0.25, "variance {var}");
    }

    #[test]
    fn gaussian_rejects_bad_arguments() {
        let mut rng = Rng::new(0);
        assert!(matches!(gaussian_matrix(1, 1, 0.0, &mut rng), Err(Error::Argument(_))));
        assert!(matches!(gaussian_matrix(0, 3, 1.0, &mut rng), Err(Error::Argument(_))));
    }

    #[test]
    fn gaussian_is_deterministic() {
        let a = gaussian_matrix(5, 9, 0.3, &mut Rng::new(42)).unwrap();
        let b = gaussian_matrix(5, 9, 0.3, &mut Rng::new(42)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn column_norms_concentrate() {
        let l = 4096;
        let m = 4;
        let mut inside = 0;
        let mut total = 0;
        for seed in 0..100 {
            let w = gaussian_matrix(l, m, 1.0 / l as f64, &mut Rng::new(seed)).unwrap();
            for j in 0..m {
                let sq: f64 = (0..l).map(|i| w.data()[i * m + j].powi(2)).sum();
                total += 1;
                if (0.8..=1.2).contains(&sq) {
                    inside += 1;
                }
            }
        }
        assert!(inside as f64 / total as f64 >= 0.99);
    }

    #[test]
    fn matvec_small_cases() {
        let id = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::vector(vec![3.0, -1.0]);
        assert_eq!(matvec(&id, &x).unwrap().data(), &[3.0, -1.0]);

        let w = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ones = Tensor::vector(vec![1.0, 1.0]);
        assert_eq!(matvec(&w, &ones).unwrap().data(), &[3.0, 7.0]);

        let bad = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert!(matches!(matvec(&w, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn matvec_matches_loop_oracle() {
        let mut rng = Rng::new(3);
        let w = gaussian_matrix(64, 64, 1.0, &mut rng).unwrap();
        let x = Tensor::vector((0..64).map(|_| rng.standard_normal()).collect());
        let expected = naive_matvec(w.data(), 64, 64, x.data());
        let got = matvec(&w, &x).unwrap();
        for (g, e) in got.data().iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_matches_loop_oracle() {
        let mut rng = Rng::new(11);
        let a = gaussian_matrix(17, 23, 1.0, &mut rng).unwrap();
        let b = gaussian_matrix(23, 9, 1.0, &mut rng).unwrap();
        let c = a.matmul(&b).unwrap();
        for j in 0..9 {
            let col: Vec<f64> = (0..23).map(|i| b.data()[i * 9 + j]).collect();
            let expected = naive_matvec(a.data(), 17, 23, &col);
            for i in 0..17 {
                assert_abs_diff_eq!(c.data()[i * 9 + j], expected[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gemm_transposed_operand() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let mut out = [0.0; 4];
        // a * a^T
        gemm(MatRef::new(&a, 2, 3), MatRef::transposed(&a, 2, 3), 0.0, &mut out);
        assert_eq!(out, [14.0, 32.0, 32.0, 77.0]);
    }

    #[test]
    fn reshape_keeps_data() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = t.clone().reshape(&[3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(&[4, 2]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0]).is_err());
    }

    #[test]
    fn dtype_roundtrip() {
        assert_eq!("f32".parse::<DType>().unwrap(), DType::F32);
        assert_eq!(DType::F64.to_string(), "f64");
        assert!("f16".parse::<DType>().is_err());
    }

    proptest! {
        #[test]
        fn matvec_is_homogeneous(seed in 0u64..1000, c in -10.0f64..10.0) {
            let mut rng = Rng::new(seed);
            let w = gaussian_matrix(8, 5, 1.0, &mut rng).unwrap();
            let x = Tensor::vector((0..5).map(|_| rng.standard_normal()).collect());
            let lhs = matvec(&w, &x.scale(c)).unwrap();
            let rhs = matvec(&w, &x).unwrap().scale(c);
            for (a, b) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs())));
            }
        }
    }
}
