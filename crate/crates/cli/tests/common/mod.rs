//! Test helpers: a minimal grayscale baseline JPEG writer and a runner for
//! the binary.

#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use blockcompat::jpeg::ZIGZAG;
use blockcompat::QuantizedBlock;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blockcompat"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Data rows of a TSV report (preamble and header dropped).
pub fn rows(report: &str) -> Vec<Vec<String>> {
    report
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect()
}

struct Bits {
    out: Vec<u8>,
    acc: u8,
    n: u8,
}

impl Bits {
    fn put(&mut self, value: u32, len: u32) {
        for i in (0..len).rev() {
            self.acc = (self.acc << 1) | ((value >> i) & 1) as u8;
            self.n += 1;
            if self.n == 8 {
                self.out.push(self.acc);
                if self.acc == 0xFF {
                    self.out.push(0);
                }
                self.acc = 0;
                self.n = 0;
            }
        }
    }

    fn finish(mut self) -> Vec<u8> {
        while self.n != 0 {
            self.put(1, 1);
        }
        self.out
    }
}

fn category(v: i32) -> u32 {
    32 - v.unsigned_abs().leading_zeros()
}

fn magnitude(v: i32, s: u32) -> u32 {
    if v >= 0 {
        v as u32
    } else {
        (v + (1 << s) - 1) as u32
    }
}

/// Flat Huffman tables: every symbol gets a code of one fixed length, so
/// the code of symbol `i` is just `i`.
fn ac_symbols() -> Vec<u8> {
    let mut s = vec![0x00, 0xF0];
    for run in 0..16u8 {
        for size in 1..=10u8 {
            s.push(run << 4 | size);
        }
    }
    s
}

fn dht(out: &mut Vec<u8>, class_id: u8, len: usize, symbols: &[u8]) {
    let mut counts = [0u8; 16];
    counts[len - 1] = symbols.len() as u8;
    let body = 1 + 16 + symbols.len();
    out.extend([0xFF, 0xC4]);
    out.extend(((body + 2) as u16).to_be_bytes());
    out.push(class_id);
    out.extend(counts);
    out.extend(symbols);
}

/// Baseline single-component JPEG with an all-ones quantization table,
/// holding `blocks` (natural order) laid out `wide` blocks per row.
pub fn write_gray_jpeg(path: &Path, blocks: &[QuantizedBlock], wide: usize) {
    assert_eq!(blocks.len() % wide, 0);
    let (w, h) = ((wide * 8) as u16, (blocks.len() / wide * 8) as u16);
    let mut out = vec![0xFF, 0xD8];
    out.extend([0xFF, 0xDB, 0, 67, 0]);
    out.extend([1u8; 64]);
    out.extend([0xFF, 0xC0, 0, 11, 8]);
    out.extend(h.to_be_bytes());
    out.extend(w.to_be_bytes());
    out.extend([1, 1, 0x11, 0]);
    let dc_syms: Vec<u8> = (0..12).collect();
    let ac_syms = ac_symbols();
    dht(&mut out, 0x00, 4, &dc_syms);
    dht(&mut out, 0x10, 8, &ac_syms);
    out.extend([0xFF, 0xDA, 0, 8, 1, 1, 0x00, 0, 63, 0]);

    let ac_code = |sym: u8| ac_syms.iter().position(|&s| s == sym).unwrap() as u32;
    let mut bits = Bits { out: Vec::new(), acc: 0, n: 0 };
    let mut pred = 0;
    for b in blocks {
        let v = b.values();
        let diff = v[0] - pred;
        pred = v[0];
        let s = category(diff);
        bits.put(s, 4);
        bits.put(magnitude(diff, s), s);
        let mut run = 0;
        for &natural in &ZIGZAG[1..] {
            let c = v[natural];
            if c == 0 {
                run += 1;
                continue;
            }
            while run >= 16 {
                bits.put(ac_code(0xF0), 8);
                run -= 16;
            }
            let s = category(c);
            assert!(s <= 10, "AC coefficient {c} out of baseline range");
            bits.put(ac_code((run << 4) as u8 | s as u8), 8);
            bits.put(magnitude(c, s), s);
            run = 0;
        }
        if run > 0 {
            bits.put(ac_code(0x00), 8);
        }
    }
    out.extend(bits.finish());
    out.extend([0xFF, 0xD9]);
    std::fs::write(path, out).unwrap();
}
