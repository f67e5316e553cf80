//! Block serialization.
//!
//! Text: optional `#` comment lines, a `rows cols` header, then one line of
//! `cols` whitespace-separated integers per block row, blocks back to back
//! (blank lines between blocks are ignored).
//!
//! Binary (`BCFX`): the four ASCII bytes `BCFX`, a version byte (1), the row
//! and column counts as one byte each, one reserved zero byte, the block
//! count as little-endian `u32`, then every block as `rows*cols`
//! little-endian `i32` values in row-major order.

use std::fmt::{Display, Write as _};

use crate::block::{Block, Dims, PixelBlock, QuantTable, QuantizedBlock};
use crate::error::FormatError;

const MAGIC: &[u8; 4] = b"BCFX";
const VERSION: u8 = 1;

fn text_err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Text {
        line,
        message: message.into(),
    }
}

/// Parses the text format into raw integer blocks.
pub fn parse_text(text: &str) -> Result<(Dims, Vec<Vec<i64>>), FormatError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines.next().ok_or_else(|| text_err(1, "missing `rows cols` header"))?;
    let mut fields = header.split_whitespace();
    let parse_dim = |f: Option<&str>| -> Result<usize, FormatError> {
        f.ok_or_else(|| text_err(hline, "header needs two integers"))?
            .parse()
            .map_err(|_| text_err(hline, "header needs two integers"))
    };
    let rows = parse_dim(fields.next())?;
    let cols = parse_dim(fields.next())?;
    if fields.next().is_some() {
        return Err(text_err(hline, "header needs exactly two integers"));
    }
    let dims = Dims::new(rows, cols)?;

    let mut blocks = Vec::new();
    let mut current = Vec::with_capacity(dims.len());
    let mut last_line = hline;
    for (lineno, line) in lines {
        last_line = lineno;
        let before = current.len();
        for tok in line.split_whitespace() {
            let v: i64 = tok
                .parse()
                .map_err(|_| text_err(lineno, format!("not an integer: `{tok}`")))?;
            current.push(v);
        }
        if current.len() - before != cols {
            return Err(text_err(lineno, format!("expected {cols} values per row")));
        }
        if current.len() == dims.len() {
            blocks.push(std::mem::replace(&mut current, Vec::with_capacity(dims.len())));
        }
    }
    if !current.is_empty() {
        return Err(text_err(last_line, "incomplete trailing block"));
    }
    Ok((dims, blocks))
}

pub fn read_quantized_text(text: &str) -> Result<Vec<QuantizedBlock>, FormatError> {
    let (dims, raw) = parse_text(text)?;
    raw.into_iter()
        .map(|vals| {
            let vals = vals
                .into_iter()
                .map(|v| i32::try_from(v).map_err(|_| text_err(0, format!("coefficient {v} overflows"))))
                .collect::<Result<Vec<_>, _>>()?;
            let block = Block::new(dims, vals)?;
            block.check_range()?;
            Ok(block)
        })
        .collect()
}

pub fn read_pixel_text(text: &str) -> Result<Vec<PixelBlock>, FormatError> {
    let (dims, raw) = parse_text(text)?;
    raw.into_iter()
        .map(|vals| {
            let vals = vals
                .into_iter()
                .map(|v| u8::try_from(v).map_err(|_| text_err(0, format!("pixel {v} outside [0, 255]"))))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Block::new(dims, vals)?)
        })
        .collect()
}

/// Reads exactly one quantization table.
pub fn read_quant_table_text(text: &str) -> Result<QuantTable, FormatError> {
    let (dims, raw) = parse_text(text)?;
    if raw.len() != 1 {
        return Err(text_err(0, format!("expected one table, found {}", raw.len())));
    }
    let steps = raw[0]
        .iter()
        .map(|&v| u16::try_from(v).map_err(|_| text_err(0, format!("step {v} out of range"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(QuantTable::new(dims, steps)?)
}

/// Writes blocks in the text format. All blocks must share one shape.
pub fn write_text<T: Display>(blocks: &[Block<T>]) -> String {
    let mut out = String::new();
    let Some(first) = blocks.first() else {
        return out;
    };
    let dims = first.dims();
    writeln!(out, "{} {}", dims.rows, dims.cols).unwrap();
    for (b, block) in blocks.iter().enumerate() {
        assert_eq!(block.dims(), dims, "mixed block shapes");
        if b > 0 {
            out.push('\n');
        }
        for row in block.values().chunks(dims.cols) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(" ")).unwrap();
        }
    }
    out
}

pub fn write_quant_table_text(table: &QuantTable) -> String {
    write_text(std::slice::from_ref(table.as_block()))
}

pub fn encode_binary(blocks: &[Block<i32>]) -> Result<Vec<u8>, FormatError> {
    let dims = blocks.first().map(Block::dims).unwrap_or(Dims::STANDARD);
    let count = u32::try_from(blocks.len()).map_err(|_| FormatError::Binary("too many blocks".into()))?;
    let mut out = Vec::with_capacity(12 + blocks.len() * dims.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, dims.rows as u8, dims.cols as u8, 0]);
    out.extend_from_slice(&count.to_le_bytes());
    for block in blocks {
        if block.dims() != dims {
            return Err(FormatError::Binary("mixed block shapes".into()));
        }
        for v in block.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_binary(bytes: &[u8]) -> Result<Vec<Block<i32>>, FormatError> {
    let bad = |m: &str| FormatError::Binary(m.to_string());
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("missing BCFX header"));
    }
    if bytes[4] != VERSION {
        return Err(FormatError::Binary(format!("unsupported version {}", bytes[4])));
    }
    let dims = Dims::new(usize::from(bytes[5]), usize::from(bytes[6]))?;
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != count * dims.len() * 4 {
        return Err(FormatError::Binary(format!(
            "body holds {} bytes, header promises {} blocks",
            body.len(),
            count
        )));
    }
    body.chunks_exact(dims.len() * 4)
        .map(|chunk| {
            let vals = chunk
                .chunks_exact(4)
                .map(|b| i32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            Ok(Block::new(dims, vals)?)
        })
        .collect()
}
