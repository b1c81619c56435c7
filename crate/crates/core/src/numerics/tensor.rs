use crate::error::{Error, Result};

use super::Scalar;

/// Dense row-major n-dimensional array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: &[usize], value: T) -> Self {
        let len = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if dims.contains(&0) {
            return Err(Error::Config(format!("tensor extents must be positive: {dims:?}")));
        }
        if len != data.len() {
            return Err(Error::dim("tensor length", len, data.len()));
        }
        Ok(Tensor { dims: dims.to_vec(), data })
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: (0..len).map(&mut f).collect(),
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
        let len: usize = dims.iter().product();
        if len != self.data.len() {
            return Err(Error::dim("reshape length", self.data.len(), len));
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn dot(&self, other: &Self) -> T {
        self.data.iter().zip(&other.data).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Fails unless the tensor is 4-D.
    pub fn nchw(&self) -> Result<[usize; 4]> {
        match self.dims[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::dim("rank", 4, self.rank())),
        }
    }

    /// Batch slice `i` along the leading axis.
    pub fn item(&self, i: usize) -> &[T] {
        let stride = self.data.len() / self.dims[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    /// Concatenate along axis 1 (channels / features) of same-batch tensors.
    pub fn concat_axis1(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Config("empty concat".into()))?;
        let n = first.dims[0];
        let tail = &first.dims[2..];
        let mut channels = 0;
        for p in parts {
            if p.dims[0] != n {
                return Err(Error::dim("concat batch axis", n, p.dims[0]));
            }
            if &p.dims[2..] != tail {
                return Err(Error::dim("concat spatial axes", tail.iter().product(), p.dims[2..].iter().product()));
            }
            channels += p.dims[1];
        }
        let mut dims = vec![n, channels];
        dims.extend_from_slice(tail);
        let mut data = Vec::with_capacity(dims.iter().product());
        for i in 0..n {
            for p in parts {
                data.extend_from_slice(p.item(i));
            }
        }
        Ok(Tensor { dims, data })
    }

    /// Inverse of [`Tensor::concat_axis1`]: split axis 1 into chunks of the given sizes.
    pub fn split_axis1(&self, sizes: &[usize]) -> Result<Vec<Self>> {
        let n = self.dims[0];
        let total: usize = sizes.iter().sum();
        if total != self.dims[1] {
            return Err(Error::dim("split channel axis", self.dims[1], total));
        }
        let inner: usize = self.dims[2..].iter().product();
        let mut out: Vec<Tensor<T>> = sizes
            .iter()
            .map(|&c| {
                let mut dims = vec![n, c];
                dims.extend_from_slice(&self.dims[2..]);
                Tensor {
                    data: Vec::with_capacity(dims.iter().product()),
                    dims,
                }
            })
            .collect();
        for i in 0..n {
            let row = self.item(i);
            let mut offset = 0;
            for (part, &c) in out.iter_mut().zip(sizes) {
                part.data.extend_from_slice(&row[offset..offset + c * inner]);
                offset += c * inner;
            }
        }
        Ok(out)
    }

    /// Stack along the batch axis; all trailing extents must agree.
    pub fn concat_axis0(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Config("empty concat".into()))?;
        let tail = &first.dims[1..];
        let mut n = 0;
        for p in parts {
            if &p.dims[1..] != tail {
                return Err(Error::dim("stack trailing axes", tail.iter().product(), p.dims[1..].iter().product()));
            }
            n += p.dims[0];
        }
        let mut dims = vec![n];
        dims.extend_from_slice(tail);
        let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        Ok(Tensor { dims, data })
    }

    /// Split the batch axis into chunks of the given sizes.
    pub fn split_axis0(&self, sizes: &[usize]) -> Result<Vec<Self>> {
        let total: usize = sizes.iter().sum();
        if total != self.dims[0] {
            return Err(Error::dim("split batch axis", self.dims[0], total));
        }
        let stride = self.data.len() / self.dims[0];
        let mut offset = 0;
        Ok(sizes
            .iter()
            .map(|&k| {
                let mut dims = self.dims.clone();
                dims[0] = k;
                let data = self.data[offset * stride..(offset + k) * stride].to_vec();
                offset += k;
                Tensor { dims, data }
            })
            .collect())
    }

    /// Order-sensitive FNV-1a over the raw bits; used to compare parameter sets.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.data {
            let bits = v.as_f64().to_bits();
            for b in bits.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_length_mismatch() {
        let err = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 6, actual: 5, .. }));
    }

    #[test]
    fn concat_then_split_restores_parts() {
        let a = Tensor::<f64>::from_fn(&[2, 1, 2, 2], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[2, 3, 2, 2], |i| -(i as f64));
        let c = Tensor::concat_axis1(&[&a, &b]).unwrap();
        assert_eq!(c.dims(), &[2, 4, 2, 2]);
        assert_eq!(&c.item(1)[..4], a.item(1));
        let parts = c.split_axis1(&[1, 3]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn stack_then_split_batch() {
        let a = Tensor::<f32>::from_fn(&[1, 2, 3], |i| i as f32);
        let b = Tensor::<f32>::from_fn(&[2, 2, 3], |i| 10.0 + i as f32);
        let c = Tensor::concat_axis0(&[&a, &b]).unwrap();
        assert_eq!(c.dims(), &[3, 2, 3]);
        let parts = c.split_axis0(&[1, 2]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
        assert!(c.split_axis0(&[1, 1]).is_err());
    }
}
