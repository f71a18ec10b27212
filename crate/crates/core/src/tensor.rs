//! Dense row-major tensor.

use std::fmt::{self, Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign};

use crate::error::{shape_err, Result};
use crate::rng::Rng;

/// Real scalar usable in tensors. Implemented for `f32` (training) and `f64`
/// (gradient checks).
pub trait Scalar:
    Float + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: &[usize], data: Vec<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(shape_err!("dims {dims:?} contain a zero extent"));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(shape_err!(
                "dims {dims:?} hold {n} elements but data has {}",
                data.len()
            ));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: &[usize], v: T) -> Self {
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn from_f64(dims: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| T::of(v)).collect())
    }

    /// Samples i.i.d. standard normal entries.
    pub fn randn(dims: &[usize], rng: &mut Rng) -> Self {
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            data: (0..n).map(|_| T::of(rng.normal())).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
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

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != self.data.len() {
            return Err(shape_err!(
                "cannot reshape {:?} into {dims:?}",
                self.dims
            ));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.dims == other.dims
    }

    pub fn expect_dims(&self, dims: &[usize], what: &str) -> Result<()> {
        if self.dims != dims {
            return Err(shape_err!(
                "{what}: expected dims {dims:?}, got {:?}",
                self.dims
            ));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if !self.same_dims(other) {
            return Err(shape_err!(
                "add: {:?} vs {:?}",
                self.dims,
                other.dims
            ));
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, &b)| *a += b);
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The `i`-th slice along the leading axis.
    pub fn slice_outer(&self, i: usize) -> Result<Self> {
        let (&n, rest) = self
            .dims
            .split_first()
            .ok_or_else(|| shape_err!("cannot slice a rank-0 tensor"))?;
        if i >= n {
            return Err(shape_err!("slice {i} out of range for leading dim {n}"));
        }
        if rest.is_empty() {
            return Ok(Self {
                dims: vec![1],
                data: vec![self.data[i]],
            });
        }
        let step: usize = rest.iter().product();
        Ok(Self {
            dims: rest.to_vec(),
            data: self.data[i * step..(i + 1) * step].to_vec(),
        })
    }

    /// Stacks equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| shape_err!("cannot stack an empty list"))?;
        let mut dims = vec![items.len()];
        dims.extend_from_slice(&first.dims);
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if !t.same_dims(first) {
                return Err(shape_err!(
                    "stack: {:?} vs {:?}",
                    t.dims,
                    first.dims
                ));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Self { dims, data })
    }

    /// Splits along the leading axis; inverse of [`Tensor::stack`].
    pub fn unstack(&self) -> Result<Vec<Self>> {
        let n = *self
            .dims
            .first()
            .ok_or_else(|| shape_err!("cannot unstack a rank-0 tensor"))?;
        (0..n).map(|i| self.slice_outer(i)).collect()
    }

    /// Concatenates along the leading axis.
    pub fn concat_outer(items: &[&Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| shape_err!("cannot concatenate an empty list"))?;
        let rest = &first.dims[1..];
        let mut lead = 0;
        let mut data = Vec::new();
        for t in items {
            if &t.dims[1..] != rest {
                return Err(shape_err!(
                    "concat: {:?} vs {:?}",
                    t.dims,
                    first.dims
                ));
            }
            lead += t.dims[0];
            data.extend_from_slice(&t.data);
        }
        let mut dims = vec![lead];
        dims.extend_from_slice(rest);
        Ok(Self { dims, data })
    }

    /// Rows `start..end` along the leading axis.
    pub fn narrow_outer(&self, start: usize, end: usize) -> Result<Self> {
        let n = self.dims[0];
        if start >= end || end > n {
            return Err(shape_err!("narrow {start}..{end} out of range for {n}"));
        }
        let step: usize = self.dims[1..].iter().product();
        let mut dims = self.dims.clone();
        dims[0] = end - start;
        Ok(Self {
            dims,
            data: self.data[start * step..end * step].to_vec(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}[", self.dims)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:?}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}
