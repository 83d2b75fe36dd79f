//! Dense row-major value carriers for heatmaps, masks, attention maps and gradients.

use std::fmt;

/// On-disk element type. Values are always held as `f64` in memory; `F32`
/// tensors only ever contain values that are exactly representable in `f32`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn itemsize(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn descr(self) -> &'static str {
        match self {
            DType::F32 => "<f4",
            DType::F64 => "<f8",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ShapeError {
    #[error("shape entry is zero in {0:?}")]
    ZeroDim(Vec<usize>),
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
}

fn check_shape(shape: &[usize], len: usize) -> Result<(), ShapeError> {
    if shape.contains(&0) {
        return Err(ShapeError::ZeroDim(shape.to_vec()));
    }
    if shape.iter().product::<usize>() != len {
        return Err(ShapeError::LengthMismatch {
            shape: shape.to_vec(),
            len,
        });
    }
    Ok(())
}

/// A rows × cols matrix.
#[derive(Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    dtype: DType,
}

impl Tensor2 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ShapeError> {
        check_shape(&[rows, cols], data.len())?;
        Ok(Self {
            rows,
            cols,
            data,
            dtype: DType::F64,
        })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self, ShapeError> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ShapeError> {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, data)
    }

    /// Re-tags the tensor as 32-bit, rounding every value to the nearest `f32`.
    pub fn into_f32(mut self) -> Self {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
        self.dtype = DType::F32;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
            dtype: DType::F64,
        }
    }
}

impl fmt::Debug for Tensor2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor2")
            .field("shape", &(self.rows, self.cols))
            .field("dtype", &self.dtype)
            .field("data", &self.data)
            .finish()
    }
}

/// A stack of square-or-not matrices, heads × rows × cols.
#[derive(Clone, PartialEq)]
pub struct Tensor3 {
    heads: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    dtype: DType,
}

impl Tensor3 {
    pub fn new(heads: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ShapeError> {
        check_shape(&[heads, rows, cols], data.len())?;
        Ok(Self {
            heads,
            rows,
            cols,
            data,
            dtype: DType::F64,
        })
    }

    pub fn into_f32(mut self) -> Self {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
        self.dtype = DType::F32;
        self
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.heads, self.rows, self.cols)
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, h: usize, r: usize, c: usize) -> f64 {
        self.data[(h * self.rows + r) * self.cols + c]
    }

    /// The `h`-th matrix as a flat row-major slice.
    pub fn head(&self, h: usize) -> &[f64] {
        let len = self.rows * self.cols;
        &self.data[h * len..(h + 1) * len]
    }
}

impl fmt::Debug for Tensor3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor3")
            .field("shape", &(self.heads, self.rows, self.cols))
            .field("dtype", &self.dtype)
            .field("data", &self.data)
            .finish()
    }
}

/// Either rank a tensor file may hold.
#[derive(Clone, Debug, PartialEq)]
pub enum Tensor {
    D2(Tensor2),
    D3(Tensor3),
}

impl Tensor {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            Tensor::D2(t) => vec![t.rows, t.cols],
            Tensor::D3(t) => vec![t.heads, t.rows, t.cols],
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            Tensor::D2(t) => t.dtype,
            Tensor::D3(t) => t.dtype,
        }
    }

    pub fn data(&self) -> &[f64] {
        match self {
            Tensor::D2(t) => &t.data,
            Tensor::D3(t) => &t.data,
        }
    }

    /// Bit-level equality, including dtype and shape.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
            && self.dtype() == other.dtype()
            && self
                .data()
                .iter()
                .zip(other.data())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub(crate) fn from_parts(
        shape: &[usize],
        dtype: DType,
        data: Vec<f64>,
    ) -> Result<Self, ShapeError> {
        check_shape(shape, data.len())?;
        Ok(match *shape {
            [rows, cols] => Tensor::D2(Tensor2 {
                rows,
                cols,
                data,
                dtype,
            }),
            [heads, rows, cols] => Tensor::D3(Tensor3 {
                heads,
                rows,
                cols,
                data,
                dtype,
            }),
            _ => unreachable!("rank checked by caller"),
        })
    }
}

impl From<Tensor2> for Tensor {
    fn from(t: Tensor2) -> Self {
        Tensor::D2(t)
    }
}

impl From<Tensor3> for Tensor {
    fn from(t: Tensor3) -> Self {
        Tensor::D3(t)
    }
}
