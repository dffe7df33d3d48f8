use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage precision tag.
///
/// Values are always held as `f64` in memory. A tensor tagged `F32` keeps
/// every element rounded to the nearest `f32`, so it behaves exactly like a
/// 32-bit buffer while sharing one code path with 64-bit mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    #[inline]
    pub fn round(self, x: f64) -> f64 {
        match self {
            DType::F32 => x as f32 as f64,
            DType::F64 => x,
        }
    }

    /// Wider of the two precisions.
    pub fn promote(self, other: DType) -> DType {
        if self == DType::F64 || other == DType::F64 {
            DType::F64
        } else {
            DType::F32
        }
    }
}

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
    dtype: DType,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>, dtype: DType) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Dimension(format!(
                "dims must be non-empty and positive, got {dims:?}"
            )));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        let mut t = Tensor { dims, data, dtype };
        t.round_in_place();
        Ok(t)
    }

    pub fn zeros(dims: &[usize], dtype: DType) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
            dtype,
        }
    }

    pub fn filled(dims: &[usize], value: f64, dtype: DType) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![dtype.round(value); n],
            dtype,
        }
    }

    pub fn vector(data: Vec<f64>, dtype: DType) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n], data, dtype)
    }

    /// 2-D tensor from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], dtype: DType) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::Dimension("no rows".into()));
        };
        let cols = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data, dtype)
    }

    pub fn identity(n: usize, dtype: DType) -> Self {
        let mut t = Tensor::zeros(&[n, n], dtype);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Stack equal-shape tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::Dimension("cannot stack zero tensors".into()));
        };
        let mut dims = vec![parts.len()];
        dims.extend_from_slice(&first.dims);
        let mut dtype = first.dtype;
        let mut data = Vec::with_capacity(parts.len() * first.len());
        for p in parts {
            if p.dims != first.dims {
                return Err(Error::Dimension(format!(
                    "stack of mismatched shapes {:?} vs {:?}",
                    first.dims, p.dims
                )));
            }
            dtype = dtype.promote(p.dtype);
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { dims, data, dtype })
    }

    /// Concatenate 2-D tensors along rows.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::Dimension("cannot concatenate zero tensors".into()));
        };
        let cols = first.cols()?;
        let mut rows = 0;
        let mut dtype = first.dtype;
        let mut data = Vec::new();
        for p in parts {
            if p.rank() != 2 || p.dims[1] != cols {
                return Err(Error::Dimension(format!(
                    "concat_rows needs [_, {cols}] operands, got {:?}",
                    p.dims
                )));
            }
            rows += p.dims[0];
            dtype = dtype.promote(p.dtype);
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            dims: vec![rows, cols],
            data,
            dtype,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        self.dtype
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Mutate the buffer in place; values are re-rounded to the dtype afterwards.
    pub fn map_in_place(&mut self, mut f: impl FnMut(f64) -> f64) {
        let dt = self.dtype;
        for v in &mut self.data {
            *v = dt.round(f(*v));
        }
    }

    pub fn to_dtype(&self, dtype: DType) -> Tensor {
        let mut t = Tensor {
            dims: self.dims.clone(),
            data: self.data.clone(),
            dtype,
        };
        t.round_in_place();
        t
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        Tensor::new(dims.to_vec(), self.data.clone(), self.dtype)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Number of rows of a 2-D tensor.
    pub fn rows(&self) -> Result<usize> {
        self.expect_rank(2)?;
        Ok(self.dims[0])
    }

    pub fn cols(&self) -> Result<usize> {
        self.expect_rank(2)?;
        Ok(self.dims[1])
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.dims[self.rank() - 1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let cols = self.dims[self.rank() - 1];
        &mut self.data[i * cols..(i + 1) * cols]
    }

    /// Flat view of the `i`-th sub-array along the leading axis.
    pub fn outer(&self, i: usize) -> &[f64] {
        let stride = self.data.len() / self.dims[0];
        &self.data[i * stride..(i + 1) * stride]
    }

    /// The `i`-th sub-array along the leading axis as its own tensor.
    pub fn slice_outer(&self, i: usize) -> Tensor {
        let dims = if self.rank() == 1 {
            vec![1]
        } else {
            self.dims[1..].to_vec()
        };
        Tensor {
            dims,
            data: self.outer(i).to_vec(),
            dtype: self.dtype,
        }
    }

    /// Gather sub-arrays along the leading axis.
    pub fn gather_outer(&self, indices: &[usize]) -> Result<Tensor> {
        if indices.is_empty() {
            return Err(Error::Dimension("gather of zero indices".into()));
        }
        let n = self.dims[0];
        let mut data = Vec::with_capacity(indices.len() * self.len() / n);
        for &i in indices {
            if i >= n {
                return Err(Error::Dimension(format!("index {i} out of range {n}")));
            }
            data.extend_from_slice(self.outer(i));
        }
        let mut dims = self.dims.clone();
        dims[0] = indices.len();
        Ok(Tensor {
            dims,
            data,
            dtype: self.dtype,
        })
    }

    pub(crate) fn expect_rank(&self, rank: usize) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::Dimension(format!(
                "expected rank {rank}, got dims {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    pub(crate) fn from_parts(dims: Vec<usize>, data: Vec<f64>, dtype: DType) -> Tensor {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        let mut t = Tensor { dims, data, dtype };
        t.round_in_place();
        t
    }

    fn round_in_place(&mut self) {
        if self.dtype == DType::F32 {
            for v in &mut self.data {
                *v = *v as f32 as f64;
            }
        }
    }
}
