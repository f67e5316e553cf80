//! Baseline JPEG reader that stops at the quantized coefficients.
//!
//! Handles sequential Huffman-coded frames (SOF0, and SOF1 at 8-bit
//! precision), interleaved and single-component scans, and restart markers.
//! Only the first frame component (luminance) is kept; other scans are
//! skipped. Everything else is rejected with a typed error rather than
//! decoded approximately.

use crate::block::{Block, Dims, QuantTable, QuantizedBlock};
use crate::error::JpegError;

/// `ZIGZAG[k]` is the natural-order index of the k-th coefficient in the
/// stream.
pub const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27,
    20, 13, 6, 7, 14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58,
    59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
];

#[derive(Clone, Debug, PartialEq)]
pub struct JpegImage {
    /// Luminance blocks in raster order, natural (row-major) coefficient order.
    pub blocks: Vec<QuantizedBlock>,
    /// `partial[i]` is set when block `i` extends past the image edge and so
    /// contains encoder padding.
    pub partial: Vec<bool>,
    pub quant: QuantTable,
    pub width: u32,
    pub height: u32,
    pub precision: u8,
    pub blocks_wide: usize,
    pub blocks_high: usize,
    pub components: usize,
}

impl JpegImage {
    /// Indices of blocks lying entirely inside the image.
    pub fn full_blocks(&self) -> impl Iterator<Item = usize> + '_ {
        self.partial.iter().enumerate().filter(|(_, &p)| !p).map(|(i, _)| i)
    }
}

pub fn quant_table_is_unit(q: &QuantTable) -> bool {
    q.is_unit()
}

fn parse_err(offset: usize, message: impl Into<String>) -> JpegError {
    JpegError::ParseError {
        offset,
        message: message.into(),
    }
}

fn unsupported(what: impl Into<String>) -> JpegError {
    JpegError::UnsupportedFormat(what.into())
}

#[derive(Clone)]
struct Huffman {
    /// Largest code of each length, or -1.
    maxcode: [i32; 17],
    /// `values` index of the first code of each length, minus that code.
    delta: [i32; 17],
    values: Vec<u8>,
}

impl Huffman {
    fn build(counts: &[u8; 16], values: Vec<u8>, offset: usize) -> Result<Self, JpegError> {
        let mut maxcode = [-1i32; 17];
        let mut delta = [0i32; 17];
        let mut code = 0i32;
        let mut k = 0i32;
        for len in 1..=16 {
            let n = i32::from(counts[len - 1]);
            if n > 0 {
                delta[len] = k - code;
                code += n;
                k += n;
                if code > (1 << len) {
                    return Err(parse_err(offset, "Huffman table overruns its code space"));
                }
                maxcode[len] = code - 1;
            }
            code <<= 1;
        }
        Ok(Huffman {
            maxcode,
            delta,
            values,
        })
    }
}

struct Component {
    id: u8,
    h: usize,
    v: usize,
    tq: usize,
}

struct Frame {
    width: u32,
    height: u32,
    precision: u8,
    comps: Vec<Component>,
    hmax: usize,
    vmax: usize,
}

struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
    acc: u64,
    nbits: u32,
    /// Set once a marker has been reached; no further bytes are consumed.
    at_marker: bool,
}

impl<'a> BitReader<'a> {
    fn new(data: &'a [u8], pos: usize) -> Self {
        BitReader {
            data,
            pos,
            acc: 0,
            nbits: 0,
            at_marker: false,
        }
    }

    fn fill(&mut self, need: u32) -> Result<(), JpegError> {
        while self.nbits < need {
            if self.at_marker {
                return Err(parse_err(self.pos, "entropy-coded data ends inside a block"));
            }
            let Some(&b) = self.data.get(self.pos) else {
                return Err(parse_err(self.pos, "truncated entropy-coded segment"));
            };
            if b == 0xFF {
                match self.data.get(self.pos + 1) {
                    None => return Err(parse_err(self.pos, "truncated entropy-coded segment")),
                    Some(0x00) => self.pos += 2,
                    Some(_) => {
                        self.at_marker = true;
                        continue;
                    }
                }
            } else {
                self.pos += 1;
            }
            self.acc = (self.acc << 8) | u64::from(b);
            self.nbits += 8;
        }
        Ok(())
    }

    fn bits(&mut self, n: u32) -> Result<u32, JpegError> {
        if n == 0 {
            return Ok(0);
        }
        self.fill(n)?;
        self.nbits -= n;
        Ok(((self.acc >> self.nbits) & ((1 << n) - 1)) as u32)
    }

    fn decode(&mut self, table: &Huffman) -> Result<u8, JpegError> {
        let mut code = 0i32;
        for len in 1..=16 {
            code = (code << 1) | self.bits(1)? as i32;
            if code <= table.maxcode[len] {
                let idx = (code + table.delta[len]) as usize;
                return table
                    .values
                    .get(idx)
                    .copied()
                    .ok_or_else(|| parse_err(self.pos, "Huffman code outside table"));
            }
        }
        Err(parse_err(self.pos, "invalid Huffman code"))
    }

    fn receive_extend(&mut self, s: u8) -> Result<i32, JpegError> {
        if s > 15 {
            return Err(parse_err(self.pos, format!("magnitude category {s} too large")));
        }
        let s = u32::from(s);
        let v = self.bits(s)? as i32;
        Ok(if s > 0 && v < (1 << (s - 1)) { v - (1 << s) + 1 } else { v })
    }

    /// Discards buffered bits and consumes the expected restart marker.
    fn restart(&mut self, expected: u8) -> Result<(), JpegError> {
        self.acc = 0;
        self.nbits = 0;
        self.at_marker = false;
        match (self.data.get(self.pos), self.data.get(self.pos + 1)) {
            (Some(0xFF), Some(&m)) if m == 0xD0 + expected => {
                self.pos += 2;
                Ok(())
            }
            (Some(0xFF), Some(0xD0..=0xD7)) => Err(unsupported("restart-interval corruption (out-of-sequence RST marker)")),
            (None, _) | (_, None) => Err(parse_err(self.pos, "truncated before restart marker")),
            _ => Err(unsupported("restart-interval corruption (missing RST marker)")),
        }
    }
}

struct Parser<'a> {
    data: &'a [u8],
    pos: usize,
    qt: [Option<QuantTable>; 4],
    dc: [Option<Huffman>; 4],
    ac: [Option<Huffman>; 4],
    restart_interval: usize,
    frame: Option<Frame>,
    luma: Option<(Vec<[i32; 64]>, QuantTable)>,
}

impl<'a> Parser<'a> {
    fn u8(&mut self) -> Result<u8, JpegError> {
        let b = *self.data.get(self.pos).ok_or_else(|| parse_err(self.pos, "unexpected end of data"))?;
        self.pos += 1;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16, JpegError> {
        Ok(u16::from(self.u8()?) << 8 | u16::from(self.u8()?))
    }

    /// Returns the segment payload and advances past it.
    fn segment(&mut self) -> Result<(usize, &'a [u8]), JpegError> {
        let start = self.pos;
        let len = usize::from(self.u16()?);
        if len < 2 || start + len > self.data.len() {
            return Err(parse_err(start, "segment length runs past end of data"));
        }
        self.pos = start + len;
        Ok((start + 2, &self.data[start + 2..start + len]))
    }

    fn next_marker(&mut self) -> Result<u8, JpegError> {
        if self.u8()? != 0xFF {
            return Err(parse_err(self.pos - 1, "expected a marker"));
        }
        let mut m = self.u8()?;
        while m == 0xFF {
            m = self.u8()?;
        }
        Ok(m)
    }

    fn dqt(&mut self) -> Result<(), JpegError> {
        let (off, body) = self.segment()?;
        let mut i = 0;
        while i < body.len() {
            let pq = body[i] >> 4;
            let tq = usize::from(body[i] & 15);
            i += 1;
            if tq > 3 || pq > 1 {
                return Err(parse_err(off + i, "bad quantization table header"));
            }
            let width = if pq == 0 { 1 } else { 2 };
            if i + 64 * width > body.len() {
                return Err(parse_err(off + i, "quantization table truncated"));
            }
            let mut steps = vec![0u16; 64];
            for k in 0..64 {
                steps[ZIGZAG[k]] = if pq == 0 {
                    u16::from(body[i + k])
                } else {
                    u16::from(body[i + 2 * k]) << 8 | u16::from(body[i + 2 * k + 1])
                };
            }
            i += 64 * width;
            let table = QuantTable::new(Dims::STANDARD, steps).map_err(|e| parse_err(off, e.to_string()))?;
            self.qt[tq] = Some(table);
        }
        Ok(())
    }

    fn dht(&mut self) -> Result<(), JpegError> {
        let (off, body) = self.segment()?;
        let mut i = 0;
        while i < body.len() {
            if i + 17 > body.len() {
                return Err(parse_err(off + i, "Huffman table header truncated"));
            }
            let class = body[i] >> 4;
            let th = usize::from(body[i] & 15);
            if class > 1 || th > 3 {
                return Err(parse_err(off + i, "bad Huffman table header"));
            }
            let mut counts = [0u8; 16];
            counts.copy_from_slice(&body[i + 1..i + 17]);
            let total: usize = counts.iter().map(|&c| usize::from(c)).sum();
            i += 17;
            if total > 256 || i + total > body.len() {
                return Err(parse_err(off + i, "Huffman table overrun"));
            }
            let table = Huffman::build(&counts, body[i..i + total].to_vec(), off + i)?;
            i += total;
            if class == 0 {
                self.dc[th] = Some(table);
            } else {
                self.ac[th] = Some(table);
            }
        }
        Ok(())
    }

    fn sof(&mut self) -> Result<(), JpegError> {
        let (off, body) = self.segment()?;
        if self.frame.is_some() {
            return Err(parse_err(off, "second frame header"));
        }
        if body.len() < 6 {
            return Err(parse_err(off, "frame header truncated"));
        }
        let precision = body[0];
        if precision != 8 {
            return Err(unsupported(format!("{precision}-bit sample precision")));
        }
        let height = u32::from(u16::from_be_bytes([body[1], body[2]]));
        let width = u32::from(u16::from_be_bytes([body[3], body[4]]));
        let n = usize::from(body[5]);
        if height == 0 {
            return Err(unsupported("height defined by DNL marker"));
        }
        if width == 0 || n == 0 || body.len() != 6 + 3 * n {
            return Err(parse_err(off, "malformed frame header"));
        }
        let mut comps = Vec::with_capacity(n);
        for c in 0..n {
            let b = &body[6 + 3 * c..9 + 3 * c];
            let (h, v) = (usize::from(b[1] >> 4), usize::from(b[1] & 15));
            if !(1..=4).contains(&h) || !(1..=4).contains(&v) || b[2] > 3 {
                return Err(parse_err(off, "bad component sampling or table index"));
            }
            comps.push(Component {
                id: b[0],
                h,
                v,
                tq: usize::from(b[2]),
            });
        }
        let hmax = comps.iter().map(|c| c.h).max().unwrap();
        let vmax = comps.iter().map(|c| c.v).max().unwrap();
        self.frame = Some(Frame {
            width,
            height,
            precision,
            comps,
            hmax,
            vmax,
        });
        Ok(())
    }

    /// Block grid `(wide, high)` of component `c` (no MCU padding).
    fn comp_blocks(frame: &Frame, c: usize) -> (usize, usize) {
        let comp = &frame.comps[c];
        let w = (frame.width as usize * comp.h).div_ceil(frame.hmax);
        let h = (frame.height as usize * comp.v).div_ceil(frame.vmax);
        (w.div_ceil(8), h.div_ceil(8))
    }

    fn sos(&mut self) -> Result<(), JpegError> {
        let (off, body) = self.segment()?;
        let frame = self.frame.as_ref().ok_or_else(|| parse_err(off, "scan before frame header"))?;
        let ns = usize::from(*body.first().ok_or_else(|| parse_err(off, "empty scan header"))?);
        if ns == 0 || ns > 4 || body.len() != 4 + 2 * ns {
            return Err(parse_err(off, "malformed scan header"));
        }
        let mut scan = Vec::with_capacity(ns);
        for s in 0..ns {
            let id = body[1 + 2 * s];
            let c = frame
                .comps
                .iter()
                .position(|c| c.id == id)
                .ok_or_else(|| parse_err(off, format!("scan references unknown component {id}")))?;
            let (td, ta) = (usize::from(body[2 + 2 * s] >> 4), usize::from(body[2 + 2 * s] & 15));
            if td > 3 || ta > 3 {
                return Err(parse_err(off, "bad Huffman table selector"));
            }
            scan.push((c, td, ta));
        }
        let (ss, se, ahl) = (body[1 + 2 * ns], body[2 + 2 * ns], body[3 + 2 * ns]);
        if ss != 0 || se != 63 || ahl != 0 {
            return Err(unsupported("spectral selection or successive approximation"));
        }

        if !scan.iter().any(|&(c, _, _)| c == 0) || self.luma.is_some() {
            return self.skip_entropy_data();
        }

        let tables: Vec<(&Huffman, &Huffman)> = scan
            .iter()
            .map(|&(_, td, ta)| match (&self.dc[td], &self.ac[ta]) {
                (Some(d), Some(a)) => Ok((d, a)),
                _ => Err(parse_err(off, "scan uses an undefined Huffman table")),
            })
            .collect::<Result<_, _>>()?;
        let quant = self.qt[frame.comps[0].tq]
            .clone()
            .ok_or_else(|| parse_err(off, "luminance quantization table not defined"))?;

        let (lw, lh) = Self::comp_blocks(frame, 0);
        let interleaved = ns > 1;
        let (mcus_x, mcus_y) = if interleaved {
            (
                (frame.width as usize).div_ceil(8 * frame.hmax),
                (frame.height as usize).div_ceil(8 * frame.vmax),
            )
        } else {
            (lw, lh)
        };
        let mut luma = vec![[0i32; 64]; lw * lh];
        let mut pred = vec![0i32; ns];
        let mut reader = BitReader::new(self.data, self.pos);
        let total = mcus_x * mcus_y;
        let mut next_rst = 0u8;
        let mut coef = [0i32; 64];

        for mcu in 0..total {
            if self.restart_interval > 0 && mcu > 0 && mcu % self.restart_interval == 0 {
                reader.restart(next_rst)?;
                next_rst = (next_rst + 1) & 7;
                pred.iter_mut().for_each(|p| *p = 0);
            }
            let (mx, my) = (mcu % mcus_x, mcu / mcus_x);
            for (s, &(c, _, _)) in scan.iter().enumerate() {
                let (bh, bv) = if interleaved {
                    (frame.comps[c].h, frame.comps[c].v)
                } else {
                    (1, 1)
                };
                for by in 0..bv {
                    for bx in 0..bh {
                        let (dc, ac) = tables[s];
                        coef.fill(0);
                        let t = reader.decode(dc)?;
                        pred[s] += reader.receive_extend(t)?;
                        coef[0] = pred[s];
                        let mut k = 1;
                        while k < 64 {
                            let rs = reader.decode(ac)?;
                            let (r, sz) = (usize::from(rs >> 4), rs & 15);
                            if sz == 0 {
                                if r == 15 {
                                    k += 16;
                                    continue;
                                }
                                break;
                            }
                            k += r;
                            if k > 63 {
                                return Err(parse_err(reader.pos, "AC run past end of block"));
                            }
                            coef[ZIGZAG[k]] = reader.receive_extend(sz)?;
                            k += 1;
                        }
                        if k > 64 {
                            return Err(parse_err(reader.pos, "AC run past end of block"));
                        }
                        if c == 0 {
                            let (x, y) = (mx * bh + bx, my * bv + by);
                            if x < lw && y < lh {
                                luma[y * lw + x] = coef;
                            }
                        }
                    }
                }
            }
        }
        self.pos = reader.pos;
        self.luma = Some((luma, quant));
        Ok(())
    }

    /// Advances past entropy-coded bytes up to the next non-RST marker.
    fn skip_entropy_data(&mut self) -> Result<(), JpegError> {
        loop {
            match (self.data.get(self.pos), self.data.get(self.pos + 1)) {
                (Some(0xFF), Some(0x00 | 0xD0..=0xD7)) => self.pos += 2,
                (Some(0xFF), Some(_)) => return Ok(()),
                (Some(_), _) => self.pos += 1,
                (None, _) => return Err(parse_err(self.pos, "truncated entropy-coded segment")),
            }
        }
    }
}

pub fn parse_jpeg(bytes: &[u8]) -> Result<JpegImage, JpegError> {
    if bytes.len() < 2 || bytes[0] != 0xFF || bytes[1] != 0xD8 {
        return Err(parse_err(0, "missing SOI marker"));
    }
    let mut p = Parser {
        data: bytes,
        pos: 2,
        qt: Default::default(),
        dc: Default::default(),
        ac: Default::default(),
        restart_interval: 0,
        frame: None,
        luma: None,
    };
    loop {
        let at = p.pos;
        let m = p.next_marker()?;
        match m {
            0xD9 => break,
            0xC0 | 0xC1 => p.sof()?,
            0xC2 | 0xC6 | 0xCA | 0xCE => return Err(unsupported("progressive coding")),
            0xC3 | 0xC7 | 0xCB | 0xCF => return Err(unsupported("lossless coding")),
            0xC5 => return Err(unsupported("hierarchical coding")),
            0xC9 | 0xCC | 0xCD => return Err(unsupported("arithmetic coding")),
            0xC4 => p.dht()?,
            0xDB => p.dqt()?,
            0xDD => {
                let (off, body) = p.segment()?;
                if body.len() != 2 {
                    return Err(parse_err(off, "malformed DRI segment"));
                }
                p.restart_interval = usize::from(u16::from_be_bytes([body[0], body[1]]));
            }
            0xDA => p.sos()?,
            0xE0..=0xEF | 0xFE | 0xDC => {
                p.segment()?;
            }
            0xDE | 0xDF => return Err(unsupported("hierarchical coding")),
            0xD0..=0xD7 => return Err(unsupported("restart-interval corruption (RST outside scan)")),
            0xD8 => return Err(parse_err(at, "unexpected SOI marker")),
            0xF0..=0xFD => {
                p.segment()?;
            }
            other => return Err(parse_err(at, format!("invalid marker 0xFF{other:02X}"))),
        }
    }
    let frame = p.frame.ok_or_else(|| parse_err(p.pos, "no frame header before EOI"))?;
    let (luma, quant) = p
        .luma
        .ok_or_else(|| parse_err(p.pos, "no luminance scan before EOI"))?;
    let (lw, lh) = Parser::comp_blocks(&frame, 0);
    let comp = &frame.comps[0];
    let cw = (frame.width as usize * comp.h).div_ceil(frame.hmax);
    let ch = (frame.height as usize * comp.v).div_ceil(frame.vmax);
    let mut blocks = Vec::with_capacity(luma.len());
    let mut partial = Vec::with_capacity(luma.len());
    for (i, coef) in luma.into_iter().enumerate() {
        let (x, y) = (i % lw, i / lw);
        let block = Block::new(Dims::STANDARD, coef.to_vec()).expect("64 coefficients");
        block
            .check_range()
            .map_err(|e| parse_err(0, format!("block {i}: {e}")))?;
        blocks.push(block);
        partial.push((x + 1) * 8 > cw || (y + 1) * 8 > ch);
    }
    Ok(JpegImage {
        blocks,
        partial,
        quant,
        width: frame.width,
        height: frame.height,
        precision: frame.precision,
        blocks_wide: lw,
        blocks_high: lh,
        components: frame.comps.len(),
    })
}
