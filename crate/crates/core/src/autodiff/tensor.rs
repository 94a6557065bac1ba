use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array. Operations on the tape accept rank 0, 1 and 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::BadTensor { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::BadTensor { shape: vec![rows.len(), cols], len: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The (rows, cols) view used by every tape operation.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        dims2(&self.shape)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn at(&self, row: usize, col: usize) -> T {
        let (_, cols) = self.dims2().expect("rank <= 2");
        self.data[row * cols + col]
    }

    pub fn row(&self, row: usize) -> &[T] {
        let (_, cols) = self.dims2().expect("rank <= 2");
        &self.data[row * cols..(row + 1) * cols]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (a, b)| acc.max((*a - *b).abs()))
    }

    pub fn norm_sq(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v * v)
    }

    /// `self + c * other` for equal shapes.
    pub fn add_scaled(&self, other: &Self, c: T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add_scaled",
                shapes: vec![self.shape.clone(), other.shape.clone()],
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + c * b).collect();
        Ok(Self { shape: self.shape.clone(), data })
    }

    pub fn accumulate(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }
}

pub(crate) fn dims2(shape: &[usize]) -> Option<(usize, usize)> {
    match *shape {
        [] => Some((1, 1)),
        [n] => Some((1, n)),
        [r, c] => Some((r, c)),
        _ => None,
    }
}

fn bcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

/// Result shape of an elementwise op between two broadcast-compatible tensors.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a == b {
        return Some(a.to_vec());
    }
    let (ar, ac) = dims2(a)?;
    let (br, bc) = dims2(b)?;
    let r = bcast_dim(ar, br)?;
    let c = bcast_dim(ac, bc)?;
    match a.len().max(b.len()) {
        0 => Some(Vec::new()),
        1 if r == 1 => Some(vec![c]),
        1 => None,
        _ => Some(vec![r, c]),
    }
}

pub(crate) fn binary<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    out_shape: &[usize],
    f: impl Fn(T, T) -> T,
) -> Tensor<T> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Tensor { shape: out_shape.to_vec(), data };
    }
    let (r, c) = dims2(out_shape).expect("validated shape");
    let (ar, ac) = dims2(&a.shape).expect("validated shape");
    let (br, bc) = dims2(&b.shape).expect("validated shape");
    let (ars, acs) = (if ar == 1 { 0 } else { ac }, usize::from(ac != 1));
    let (brs, bcs) = (if br == 1 { 0 } else { bc }, usize::from(bc != 1));
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            data.push(f(a.data[i * ars + j * acs], b.data[i * brs + j * bcs]));
        }
    }
    Tensor { shape: out_shape.to_vec(), data }
}

/// Reduce a gradient of a broadcast result back onto `shape`.
pub(crate) fn sum_to<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape == shape {
        return g.clone();
    }
    let (r, c) = dims2(&g.shape).expect("validated shape");
    let (tr, tc) = dims2(shape).expect("validated shape");
    let mut out = vec![T::zero(); tr * tc];
    for i in 0..r {
        let oi = if tr == 1 { 0 } else { i };
        for j in 0..c {
            let oj = if tc == 1 { 0 } else { j };
            out[oi * tc + oj] = out[oi * tc + oj] + g.data[i * c + j];
        }
    }
    Tensor { shape: shape.to_vec(), data: out }
}

pub(crate) fn broadcast_to<T: Scalar>(x: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if x.shape == shape {
        return x.clone();
    }
    let (r, c) = dims2(shape).expect("validated shape");
    let (xr, xc) = dims2(&x.shape).expect("validated shape");
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        let si = if xr == 1 { 0 } else { i };
        for j in 0..c {
            let sj = if xc == 1 { 0 } else { j };
            data.push(x.data[si * xc + sj]);
        }
    }
    Tensor { shape: shape.to_vec(), data }
}

/// `op(a) * op(b)` for 2-D tensors, with optional transposition of either side.
pub(crate) fn matmul<T: Scalar>(a: &Tensor<T>, ta: bool, b: &Tensor<T>, tb: bool) -> Tensor<T> {
    let (ar, ac) = dims2(&a.shape).expect("validated shape");
    let (br, bc) = dims2(&b.shape).expect("validated shape");
    let (m, k, rsa, csa) = if ta { (ac, ar, 1, ac as isize) } else { (ar, ac, ac as isize, 1) };
    let (n, rsb, csb) = if tb { (br, 1, bc as isize) } else { (bc, bc as isize, 1) };
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, k, n, T::one(), &a.data, rsa, csa, &b.data, rsb, csb, T::zero(), &mut out, n as isize, 1);
    Tensor { shape: vec![m, n], data: out }
}

pub(crate) fn transpose<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (x.shape[0], x.shape[1]);
    let mut data = Vec::with_capacity(r * c);
    for j in 0..c {
        for i in 0..r {
            data.push(x.data[i * c + j]);
        }
    }
    Tensor { shape: vec![c, r], data }
}

/// Columns `start..end` along the last axis.
pub(crate) fn slice_last<T: Scalar>(x: &Tensor<T>, start: usize, end: usize) -> Tensor<T> {
    let (r, c) = dims2(&x.shape).expect("validated shape");
    let w = end - start;
    let mut data = Vec::with_capacity(r * w);
    for i in 0..r {
        data.extend_from_slice(&x.data[i * c + start..i * c + end]);
    }
    let mut shape = x.shape.clone();
    *shape.last_mut().expect("rank >= 1") = w;
    Tensor { shape, data }
}

pub(crate) fn concat_last<T: Scalar>(parts: &[&Tensor<T>], out_shape: &[usize]) -> Tensor<T> {
    let (r, c) = dims2(out_shape).expect("validated shape");
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        for p in parts {
            let (_, pc) = dims2(&p.shape).expect("validated shape");
            data.extend_from_slice(&p.data[i * pc..(i + 1) * pc]);
        }
    }
    Tensor { shape: out_shape.to_vec(), data }
}

/// Gradient of `slice_last`: embed `g` into zeros of `shape`.
pub(crate) fn pad_last<T: Scalar>(g: &Tensor<T>, shape: &[usize], start: usize) -> Tensor<T> {
    let (r, c) = dims2(shape).expect("validated shape");
    let (_, w) = dims2(&g.shape).expect("validated shape");
    let mut data = vec![T::zero(); r * c];
    for i in 0..r {
        data[i * c + start..i * c + start + w].copy_from_slice(&g.data[i * w..(i + 1) * w]);
    }
    Tensor { shape: shape.to_vec(), data }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[3, 4], &[4]), Some(vec![3, 4]));
        assert_eq!(broadcast_shape(&[3, 4], &[3, 1]), Some(vec![3, 4]));
        assert_eq!(broadcast_shape(&[3, 4], &[]), Some(vec![3, 4]));
        assert_eq!(broadcast_shape(&[3], &[3]), Some(vec![3]));
        assert_eq!(broadcast_shape(&[3, 4], &[3]), None);
        assert_eq!(broadcast_shape(&[2, 2, 2], &[2, 2, 2]), Some(vec![2, 2, 2]));
    }

    #[test]
    fn sum_to_inverts_broadcast_counts() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let b = broadcast_to(&x, &[3, 2]);
        assert_eq!(b.data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let s = sum_to(&b, &[2]);
        assert_eq!(s.data(), &[3.0, 6.0]);
        let col = sum_to(&b, &[3, 1]);
        assert_eq!(col.data(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn matmul_transposes() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::matrix(2, 3, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let abt = matmul(&a, false, &b, true);
        assert_eq!(abt.shape(), &[2, 2]);
        assert_eq!(abt.data(), &[4.0, 2.0, 10.0, 5.0]);
        let atb = matmul(&a, true, &b, false);
        assert_eq!(atb.shape(), &[3, 3]);
        assert_eq!(atb.data(), &[1.0, 4.0, 1.0, 2.0, 5.0, 2.0, 3.0, 6.0, 3.0]);
    }

    #[test]
    fn slice_pad_concat() {
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = slice_last(&x, 1, 3);
        assert_eq!(s.data(), &[2.0, 3.0, 5.0, 6.0]);
        let p = pad_last(&s, &[2, 3], 1);
        assert_eq!(p.data(), &[0.0, 2.0, 3.0, 0.0, 5.0, 6.0]);
        let left = slice_last(&x, 0, 1);
        let c = concat_last(&[&left, &s], &[2, 3]);
        assert_eq!(c, x);
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
