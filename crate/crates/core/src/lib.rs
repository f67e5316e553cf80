//! Block compatibility analysis for JPEG steganalysis.
//!
//! A quantized DCT block is *compatible* with a pipeline when some 8-bit
//! pixel block compresses to it. Modifying quantized coefficients after
//! compression tends to produce incompatible blocks; this crate finds
//! antecedents, decides feasibility, estimates how often incompatibility
//! appears, and turns that into a detector.

pub mod block;
pub mod codec;
pub mod dct;
pub mod detect;
pub mod error;
pub mod format;
pub mod ilp;
pub mod islow;
pub mod jpeg;
pub mod search;
pub mod stats;

pub use block::{Block, Dims, FloatBlock, PixelBlock, QuantTable, QuantizedBlock};
pub use codec::{compress, decompress, forward_dct, DctVariant, PipelineSpec};
pub use error::*;
