//! Block geometry and the value grids moved between the pixel and DCT domains.

use std::fmt;

use crate::error::BlockError;

/// Largest coefficient magnitude an 8-bit baseline block can carry.
pub const MAX_COEFFICIENT: i32 = 2048;

/// Shape of a block. Only the standard 8×8 JPEG block and the 1×2 toy block
/// are supported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub rows: usize,
    pub cols: usize,
}

impl Dims {
    pub const STANDARD: Dims = Dims { rows: 8, cols: 8 };
    pub const TOY: Dims = Dims { rows: 1, cols: 2 };

    pub fn new(rows: usize, cols: usize) -> Result<Self, BlockError> {
        let dims = Dims { rows, cols };
        if dims == Self::STANDARD || dims == Self::TOY {
            Ok(dims)
        } else {
            Err(BlockError::UnsupportedDims { rows, cols })
        }
    }

    /// Number of values in a block of this shape.
    pub const fn len(self) -> usize {
        self.rows * self.cols
    }

    pub const fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn is_toy(self) -> bool {
        self == Self::TOY
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// Row-major grid of values with a fixed supported shape.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Block<T> {
    dims: Dims,
    values: Vec<T>,
}

/// Integer pixel block; the `u8` storage enforces the [0, 255] range.
pub type PixelBlock = Block<u8>;
/// Quantized DCT coefficients as stored in a JPEG file.
pub type QuantizedBlock = Block<i32>;
/// Real-valued grid: unquantized coefficients or pre-rounding pixels.
pub type FloatBlock = Block<f64>;
/// Unquantized DCT coefficients.
pub type FloatCoeffBlock = FloatBlock;

impl<T> Block<T> {
    pub fn new(dims: Dims, values: Vec<T>) -> Result<Self, BlockError> {
        Dims::new(dims.rows, dims.cols)?;
        if values.len() != dims.len() {
            return Err(BlockError::Length {
                expected: dims.len(),
                found: values.len(),
            });
        }
        Ok(Block { dims, values })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.values[row * self.dims.cols + col]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Block<U> {
        Block {
            dims: self.dims,
            values: self.values.iter().map(f).collect(),
        }
    }

    /// Combines two blocks of identical shape element-wise.
    pub fn zip_map<U, V>(
        &self,
        other: &Block<U>,
        mut f: impl FnMut(&T, &U) -> V,
    ) -> Result<Block<V>, BlockError> {
        ensure_dims(self.dims, other.dims)?;
        Ok(Block {
            dims: self.dims,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| f(a, b))
                .collect(),
        })
    }
}

impl<T: Clone> Block<T> {
    pub fn filled(dims: Dims, value: T) -> Result<Self, BlockError> {
        Block::new(dims, vec![value; dims.len()])
    }
}

impl Block<f64> {
    /// Largest absolute element.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Block<i32> {
    /// Checks the 8-bit baseline coefficient range.
    pub fn check_range(&self) -> Result<(), BlockError> {
        match self.values.iter().find(|v| v.abs() > MAX_COEFFICIENT) {
            Some(&value) => Err(BlockError::CoefficientRange { value }),
            None => Ok(()),
        }
    }
}

pub(crate) fn ensure_dims(expected: Dims, found: Dims) -> Result<(), BlockError> {
    if expected == found {
        Ok(())
    } else {
        Err(BlockError::DimsMismatch { expected, found })
    }
}

/// Quantization steps, one per coefficient.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QuantTable(Block<u16>);

/// Standard luminance table, ITU-T T.81 Annex K.
pub const STD_LUMINANCE_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

impl QuantTable {
    pub fn new(dims: Dims, steps: Vec<u16>) -> Result<Self, BlockError> {
        if let Some(pos) = steps.iter().position(|&s| s == 0) {
            return Err(BlockError::ZeroStep { index: pos });
        }
        Ok(QuantTable(Block::new(dims, steps)?))
    }

    /// All steps equal to one (quality 100).
    pub fn unit(dims: Dims) -> Self {
        QuantTable(Block::filled(dims, 1).expect("supported dims"))
    }

    /// libjpeg's `jpeg_quality_scaling` applied to the standard luminance
    /// table, forced to baseline (steps clamped to [1, 255]).
    pub fn from_quality(quality: u8) -> Result<Self, BlockError> {
        if !(1..=100).contains(&quality) {
            return Err(BlockError::Quality(quality));
        }
        let q = u32::from(quality);
        let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
        let steps = STD_LUMINANCE_TABLE
            .iter()
            .map(|&base| ((u32::from(base) * scale + 50) / 100).clamp(1, 255) as u16)
            .collect();
        QuantTable::new(Dims::STANDARD, steps)
    }

    pub fn dims(&self) -> Dims {
        self.0.dims()
    }

    pub fn steps(&self) -> &[u16] {
        self.0.values()
    }

    pub fn as_block(&self) -> &Block<u16> {
        &self.0
    }

    pub fn max_step(&self) -> u16 {
        self.steps().iter().copied().max().unwrap_or(1)
    }

    /// True when every step equals one.
    pub fn is_unit(&self) -> bool {
        self.steps().iter().all(|&s| s == 1)
    }
}
