//! The JPEG block pipeline: forward transform, quantization, decompression
//! and the three rounding errors that link them.
//!
//! Compression is `c = [f_DCT(x) / Q]`; decompression is
//! `x' = clip([f_IDCT(Q c)], 0, 255)`. Both directions round half away from
//! zero. Decompression always uses the floating-point inverse transform,
//! whichever forward transform produced the coefficients.

use std::collections::HashMap;
use std::fmt;

use sha2::{Digest, Sha256};

use crate::block::{ensure_dims, Block, Dims, FloatBlock, PixelBlock, QuantTable, QuantizedBlock};
use crate::dct::DctBasis;
use crate::error::CodecError;
use crate::islow::fdct_islow;

const LEVEL_SHIFT: f64 = 128.0;

/// Rounds to the nearest integer; exact halves go away from zero.
#[inline]
pub fn round_half_away(v: f64) -> i64 {
    // f64::round already rounds half away from zero.
    v.round() as i64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DctVariant {
    /// Orthonormal DCT evaluated in double precision.
    Naive,
    /// libjpeg's integer `islow` transform (8×8 only).
    Islow,
}

impl DctVariant {
    pub fn name(self) -> &'static str {
        match self {
            DctVariant::Naive => "naive",
            DctVariant::Islow => "islow",
        }
    }
}

impl fmt::Display for DctVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DctVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(DctVariant::Naive),
            "islow" => Ok(DctVariant::Islow),
            other => Err(format!("unknown DCT variant `{other}` (expected naive or islow)")),
        }
    }
}

/// The compressor under test.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PipelineSpec {
    variant: DctVariant,
    level_shift: bool,
    quant: QuantTable,
}

impl PipelineSpec {
    pub fn new(variant: DctVariant, level_shift: bool, quant: QuantTable) -> Result<Self, CodecError> {
        if variant == DctVariant::Islow && quant.dims() != Dims::STANDARD {
            return Err(CodecError::IslowDims);
        }
        Ok(PipelineSpec {
            variant,
            level_shift,
            quant,
        })
    }

    /// 8×8, level shift on, all steps one.
    pub fn standard(variant: DctVariant) -> Self {
        PipelineSpec::new(variant, true, QuantTable::unit(Dims::STANDARD)).expect("8x8 is valid")
    }

    /// 1×2 toy pipeline without level shift.
    pub fn toy(steps: [u16; 2]) -> Result<Self, CodecError> {
        PipelineSpec::new(DctVariant::Naive, false, QuantTable::new(Dims::TOY, steps.to_vec())?)
    }

    pub fn variant(&self) -> DctVariant {
        self.variant
    }

    pub fn level_shift(&self) -> bool {
        self.level_shift
    }

    pub fn quant(&self) -> &QuantTable {
        &self.quant
    }

    pub fn dims(&self) -> Dims {
        self.quant.dims()
    }

    /// Level-shift offset added after the inverse transform (0 or 128).
    pub fn shift(&self) -> f64 {
        if self.level_shift {
            LEVEL_SHIFT
        } else {
            0.0
        }
    }

    /// Stable identifier used to match likelihood tables against the
    /// pipeline that produced them, e.g. `naive-ls-8x8-q1` or
    /// `islow-ls-8x8-q3f1a…` (digest of the table when it is not all ones).
    pub fn id(&self) -> String {
        let q = if self.quant.is_unit() {
            "q1".to_string()
        } else {
            let mut h = Sha256::new();
            for s in self.quant.steps() {
                h.update(s.to_le_bytes());
            }
            let digest = h.finalize();
            let hex: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
            format!("q{hex}")
        };
        format!(
            "{}-{}-{}-{}",
            self.variant,
            if self.level_shift { "ls" } else { "nols" },
            self.dims(),
            q
        )
    }
}

/// Output of [`decompress`].
#[derive(Clone, Debug, PartialEq)]
pub struct Decompressed {
    /// Rounded and clipped pixels `x'`.
    pub pixels: PixelBlock,
    /// Real-valued pixels `y` before rounding (level shift included).
    pub y: FloatBlock,
    /// Rounded pixels before clipping; may leave [0, 255].
    pub unclipped: Block<i32>,
    /// True when some rounded value fell outside [0, 255].
    pub clipped: bool,
}

impl Decompressed {
    /// Spatial rounding error `e = x' - y`.
    pub fn spatial_error(&self) -> FloatBlock {
        self.pixels
            .zip_map(&self.y, |&p, &y| f64::from(p) - y)
            .expect("same dims")
    }
}

/// Forward transform in coefficient units (islow output is divided by 8).
pub fn forward_dct(x: &PixelBlock, spec: &PipelineSpec) -> Result<FloatBlock, CodecError> {
    ensure_dims(spec.dims(), x.dims())?;
    let values = match spec.variant {
        DctVariant::Naive => {
            let shift = spec.shift();
            let input: Vec<f64> = x.values().iter().map(|&p| f64::from(p) - shift).collect();
            DctBasis::get(x.dims()).forward(&input)
        }
        DctVariant::Islow => islow_raw(x, spec.level_shift)
            .iter()
            .map(|&v| f64::from(v) / 8.0)
            .collect(),
    };
    Ok(Block::new(x.dims(), values)?)
}

/// Raw `jpeg_fdct_islow` output (scaled by 8).
pub fn islow_raw(x: &PixelBlock, level_shift: bool) -> [i32; 64] {
    let shift = if level_shift { 128 } else { 0 };
    let mut data = [0i32; 64];
    for (d, &p) in data.iter_mut().zip(x.values()) {
        *d = i32::from(p) - shift;
    }
    fdct_islow(&mut data);
    data
}

/// `c = [f_DCT(x) / Q]`.
pub fn compress(x: &PixelBlock, spec: &PipelineSpec) -> Result<QuantizedBlock, CodecError> {
    let d = forward_dct(x, spec)?;
    Ok(quantize(&d, spec.quant()))
}

pub(crate) fn quantize(d: &FloatBlock, quant: &QuantTable) -> QuantizedBlock {
    d.zip_map(quant.as_block(), |&v, &q| round_half_away(v / f64::from(q)) as i32)
        .expect("same dims")
}

pub fn decompress(c: &QuantizedBlock, spec: &PipelineSpec) -> Result<Decompressed, CodecError> {
    ensure_dims(spec.dims(), c.dims())?;
    let dequant: Vec<f64> = c
        .values()
        .iter()
        .zip(spec.quant().steps())
        .map(|(&v, &q)| f64::from(v) * f64::from(q))
        .collect();
    let shift = spec.shift();
    let y: Vec<f64> = DctBasis::get(c.dims())
        .inverse(&dequant)
        .into_iter()
        .map(|v| v + shift)
        .collect();
    let unclipped: Vec<i32> = y.iter().map(|&v| round_half_away(v) as i32).collect();
    let clipped = unclipped.iter().any(|&v| !(0..=255).contains(&v));
    let pixels = unclipped.iter().map(|&v| v.clamp(0, 255) as u8).collect();
    let dims = c.dims();
    Ok(Decompressed {
        pixels: Block::new(dims, pixels)?,
        y: Block::new(dims, y)?,
        unclipped: Block::new(dims, unclipped)?,
        clipped,
    })
}

/// The three rounding errors of one compression round trip.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorTriple {
    /// DCT rounding error `u = c - d/Q`.
    pub u: FloatBlock,
    /// Spatial rounding error `e = x' - y`.
    pub e: FloatBlock,
    /// Compression error `k = x' - x`.
    pub k: Block<i32>,
    /// Decompression clipped at least one pixel.
    pub clipped: bool,
}

impl ErrorTriple {
    /// `max |k - e - f_IDCT(u Q)|`; zero up to rounding for the naive
    /// transform on unclipped blocks.
    pub fn identity_residual(&self, spec: &PipelineSpec) -> f64 {
        let uq: Vec<f64> = self
            .u
            .values()
            .iter()
            .zip(spec.quant().steps())
            .map(|(&u, &q)| u * f64::from(q))
            .collect();
        let back = DctBasis::get(self.u.dims()).inverse(&uq);
        self.k
            .values()
            .iter()
            .zip(self.e.values())
            .zip(back)
            .map(|((&k, &e), b)| (f64::from(k) - e - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn compute_errors(x: &PixelBlock, spec: &PipelineSpec) -> Result<ErrorTriple, CodecError> {
    let d = forward_dct(x, spec)?;
    let c = quantize(&d, spec.quant());
    let dec = decompress(&c, spec)?;
    let u = c
        .values()
        .iter()
        .zip(d.values())
        .zip(spec.quant().steps())
        .map(|((&c, &d), &q)| f64::from(c) - d / f64::from(q))
        .collect();
    let k = dec
        .pixels
        .values()
        .iter()
        .zip(x.values())
        .map(|(&a, &b)| i32::from(a) - i32::from(b))
        .collect();
    let triple = ErrorTriple {
        u: Block::new(x.dims(), u)?,
        e: dec.spatial_error(),
        k: Block::new(x.dims(), k)?,
        clipped: dec.clipped,
    };
    debug_assert!(
        spec.variant() != DctVariant::Naive || triple.clipped || triple.identity_residual(spec) < 1e-9,
        "error identity violated"
    );
    Ok(triple)
}

/// Exhaustive image of the toy compressor over all 65 536 pixel pairs.
#[derive(Clone, Debug)]
pub struct ToyAtlas {
    counts: HashMap<(i32, i32), u32>,
    dc_range: (i32, i32),
    ac_range: (i32, i32),
}

impl ToyAtlas {
    /// Number of pixel pairs compressing to `c`.
    pub fn antecedents(&self, c: &QuantizedBlock) -> u32 {
        let v = c.values();
        self.counts.get(&(v[0], v[1])).copied().unwrap_or(0)
    }

    pub fn is_compatible(&self, c: &QuantizedBlock) -> bool {
        self.antecedents(c) > 0
    }

    pub fn reachable(&self) -> usize {
        self.counts.len()
    }

    /// Inclusive coefficient ranges `(dc, ac)` of the reachable set.
    pub fn bounding_box(&self) -> ((i32, i32), (i32, i32)) {
        (self.dc_range, self.ac_range)
    }

    pub fn box_size(&self) -> usize {
        let w = (self.dc_range.1 - self.dc_range.0 + 1) as usize;
        let h = (self.ac_range.1 - self.ac_range.0 + 1) as usize;
        w * h
    }

    /// Every block of the bounding box, DC-major.
    pub fn box_blocks(&self) -> impl Iterator<Item = QuantizedBlock> + '_ {
        let (dc, ac) = (self.dc_range, self.ac_range);
        (dc.0..=dc.1).flat_map(move |a| {
            (ac.0..=ac.1).map(move |b| Block::new(Dims::TOY, vec![a, b]).expect("toy dims"))
        })
    }

    pub fn counts(&self) -> &HashMap<(i32, i32), u32> {
        &self.counts
    }
}

pub fn toy_enumerate(spec: &PipelineSpec) -> Result<ToyAtlas, CodecError> {
    if spec.dims() != Dims::TOY {
        return Err(CodecError::NotToy(spec.dims()));
    }
    let mut counts = HashMap::new();
    let (mut dc, mut ac) = ((i32::MAX, i32::MIN), (i32::MAX, i32::MIN));
    for a in 0..=255u8 {
        for b in 0..=255u8 {
            let x = Block::new(Dims::TOY, vec![a, b])?;
            let c = compress(&x, spec)?;
            let v = c.values();
            *counts.entry((v[0], v[1])).or_insert(0) += 1;
            dc = (dc.0.min(v[0]), dc.1.max(v[0]));
            ac = (ac.0.min(v[1]), ac.1.max(v[1]));
        }
    }
    Ok(ToyAtlas {
        counts,
        dc_range: dc,
        ac_range: ac,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_pixels(a: u8, b: u8) -> PixelBlock {
        Block::new(Dims::TOY, vec![a, b]).unwrap()
    }

    fn toy_coeffs(a: i32, b: i32) -> QuantizedBlock {
        Block::new(Dims::TOY, vec![a, b]).unwrap()
    }

    #[test]
    fn rounding_goes_away_from_zero() {
        assert_eq!(round_half_away(0.5), 1);
        assert_eq!(round_half_away(1.4), 1);
        assert_eq!(round_half_away(-0.5), -1);
        assert_eq!(round_half_away(-1.5), -2);
        assert_eq!(round_half_away(2.5), 3);
        assert_eq!(round_half_away(-0.49), 0);
    }

    #[test]
    fn level_shift_zeroes_mid_grey() {
        for variant in [DctVariant::Naive, DctVariant::Islow] {
            let spec = PipelineSpec::standard(variant);
            let x = Block::filled(Dims::STANDARD, 128u8).unwrap();
            let d = forward_dct(&x, &spec).unwrap();
            assert!(d.values().iter().all(|&v| v.abs() < 1e-12));
            let x = Block::filled(Dims::STANDARD, 129u8).unwrap();
            let d = forward_dct(&x, &spec).unwrap();
            assert!((d.values()[0] - 8.0).abs() < 1e-12);
            assert!(d.values()[1..].iter().all(|&v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn toy_forward_values() {
        let spec = PipelineSpec::toy([1, 1]).unwrap();
        let d = forward_dct(&toy_pixels(0, 255), &spec).unwrap();
        assert!((d.values()[0] - 180.312).abs() < 1e-3);
        assert!((d.values()[1] + 180.312).abs() < 1e-3);
    }

    #[test]
    fn toy_compress_values() {
        let x = toy_pixels(0, 255);
        let c = compress(&x, &PipelineSpec::toy([1, 1]).unwrap()).unwrap();
        assert_eq!(c.values(), &[180, -180]);
        let c = compress(&x, &PipelineSpec::toy([1, 2]).unwrap()).unwrap();
        assert_eq!(c.values(), &[180, -90]);
    }

    #[test]
    fn zero_block_decompresses_to_mid_grey() {
        let spec = PipelineSpec::standard(DctVariant::Naive);
        let c = Block::filled(Dims::STANDARD, 0i32).unwrap();
        let dec = decompress(&c, &spec).unwrap();
        assert!(dec.pixels.values().iter().all(|&p| p == 128));
        assert!(dec.y.values().iter().all(|&y| y == 128.0));
        assert!(!dec.clipped);
    }

    #[test]
    fn toy_decompress_rounds_and_clips() {
        let spec = PipelineSpec::toy([1, 1]).unwrap();
        let dec = decompress(&toy_coeffs(180, -180), &spec).unwrap();
        assert!(dec.y.values()[0].abs() < 1e-9);
        assert!((dec.y.values()[1] - 360.0 / 2f64.sqrt()).abs() < 1e-9);
        assert_eq!(dec.pixels.values(), &[0, 255]);
        assert!(!dec.clipped);
        // One step further on the DC pushes the first pixel below zero.
        let dec = decompress(&toy_coeffs(179, -181), &spec).unwrap();
        assert_eq!(dec.unclipped.values()[0], -1);
        assert!(dec.clipped);
        assert_eq!(dec.pixels.values()[0], 0);
    }

    #[test]
    fn errors_vanish_on_mid_grey() {
        let spec = PipelineSpec::standard(DctVariant::Naive);
        let x = Block::filled(Dims::STANDARD, 128u8).unwrap();
        let t = compute_errors(&x, &spec).unwrap();
        assert!(t.u.max_abs() == 0.0 && t.e.max_abs() == 0.0);
        assert!(t.k.values().iter().all(|&k| k == 0));
    }

    #[test]
    fn clipped_flag_on_toy_modification() {
        let spec = PipelineSpec::toy([1, 1]).unwrap();
        let t = compute_errors(&toy_pixels(0, 255), &spec).unwrap();
        assert!(!t.clipped);
        assert!(t.identity_residual(&spec) < 1e-9);
    }

    #[test]
    fn dims_mismatch_reported() {
        let spec = PipelineSpec::standard(DctVariant::Naive);
        assert!(matches!(
            compress(&toy_pixels(1, 2), &spec),
            Err(CodecError::Block(crate::error::BlockError::DimsMismatch { .. }))
        ));
        assert!(matches!(
            PipelineSpec::new(DctVariant::Islow, false, QuantTable::unit(Dims::TOY)),
            Err(CodecError::IslowDims)
        ));
    }

    #[test]
    fn toy_atlas_has_holes() {
        let atlas = toy_enumerate(&PipelineSpec::toy([1, 1]).unwrap()).unwrap();
        assert!(atlas.is_compatible(&toy_coeffs(180, -180)));
        assert!(atlas.reachable() < atlas.box_size());
        assert_eq!(atlas.counts().values().map(|&n| n as usize).sum::<usize>(), 65536);
        assert!(toy_enumerate(&PipelineSpec::standard(DctVariant::Naive)).is_err());
    }

    #[test]
    fn coarser_steps_leave_fewer_holes() {
        // Holes among targets whose decompression stays inside the pixel
        // range, where clipping plays no part.
        let holes = |steps: [u16; 2]| {
            let spec = PipelineSpec::toy(steps).unwrap();
            let atlas = toy_enumerate(&spec).unwrap();
            atlas
                .box_blocks()
                .filter(|c| !decompress(c, &spec).unwrap().clipped)
                .filter(|c| !atlas.is_compatible(c))
                .count()
        };
        let fine = holes([1, 1]);
        let coarse = holes([1, 2]);
        assert!(fine > 0);
        assert!(coarse < fine, "coarse {coarse} vs fine {fine}");
    }

    #[test]
    fn spec_ids_distinguish_pipelines() {
        let naive = PipelineSpec::standard(DctVariant::Naive);
        let islow = PipelineSpec::standard(DctVariant::Islow);
        assert_eq!(naive.id(), "naive-ls-8x8-q1");
        assert_ne!(naive.id(), islow.id());
        let q99 = PipelineSpec::new(DctVariant::Naive, true, QuantTable::from_quality(99).unwrap()).unwrap();
        assert!(q99.id().starts_with("naive-ls-8x8-q") && q99.id() != naive.id());
    }
}
