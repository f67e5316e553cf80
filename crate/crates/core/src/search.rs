//! Best-first search for a pixel antecedent of a quantized block.
//!
//! Starting from the decompressed block, candidates are expanded by ±1
//! changes to a single pixel and ordered by the infinity-norm distance to
//! the target in the quantized DCT domain (`g`), then by the mass outside a
//! 0.49 box (`g'`), then by insertion order. A candidate is only ever
//! reported after an exact recompression check.
//!
//! With the Naive transform, every antecedent lies within
//! `b_p = 0.5 · Σ_k |A_kp| Q_k` of the real-valued decompression in each
//! pixel, so moves leaving that box (widened to contain the starting
//! point) are skipped. This never hides an antecedent and keeps drained
//! searches small. The Islow transform is only approximately orthonormal,
//! so it searches the full `[0, 255]` range.
//!
//! Expect a noticeably higher unsolved ratio with Islow: its integer
//! arithmetic produces many candidates with identical `g`, and only the
//! tie-breaking metric separates them.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::hash::{BuildHasherDefault, Hasher};
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::{ensure_dims, Block, PixelBlock, QuantizedBlock};
use crate::codec::{compress, decompress, forward_dct, DctVariant, PipelineSpec};
use crate::islow::fdct_islow;
use crate::dct::DctBasis;
use crate::error::SearchError;

/// Per-coefficient slack below which `g'` ignores a residual.
pub const G_PRIME_BOX: f64 = 0.49;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchBudget {
    max_iterations: u64,
}

impl SearchBudget {
    pub fn new(max_iterations: u64) -> Result<Self, SearchError> {
        if max_iterations == 0 {
            return Err(SearchError::ZeroBudget);
        }
        Ok(SearchBudget { max_iterations })
    }

    pub fn max_iterations(self) -> u64 {
        self.max_iterations
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SearchOutcome {
    Compatible {
        antecedent: PixelBlock,
        iterations: u64,
        /// `g` of the antecedent; below 1/2 except on exact half-way ties.
        final_metric: f64,
    },
    Exhausted {
        iterations: u64,
        best_metric: f64,
        /// The whole reachable region was enumerated; for small blocks this
        /// proves incompatibility.
        queue_drained: bool,
    },
}

impl SearchOutcome {
    pub fn is_compatible(&self) -> bool {
        matches!(self, SearchOutcome::Compatible { .. })
    }

    pub fn iterations(&self) -> u64 {
        match self {
            SearchOutcome::Compatible { iterations, .. } | SearchOutcome::Exhausted { iterations, .. } => {
                *iterations
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchOptions {
    /// Skip moves leaving the antecedent box (Naive only).
    pub prune_to_box: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { prune_to_box: true }
    }
}

fn residuals(candidate: &PixelBlock, target: &QuantizedBlock, spec: &PipelineSpec) -> Result<Vec<f64>, SearchError> {
    ensure_dims(spec.dims(), target.dims())?;
    let d = forward_dct(candidate, spec)?;
    Ok(target
        .values()
        .iter()
        .zip(d.values())
        .zip(spec.quant().steps())
        .map(|((&c, &d), &q)| f64::from(c) - d / f64::from(q))
        .collect())
}

/// `‖c − f_DCT(x̃)/Q‖∞`
pub fn metric_g(candidate: &PixelBlock, target: &QuantizedBlock, spec: &PipelineSpec) -> Result<f64, SearchError> {
    Ok(residuals(candidate, target, spec)?.iter().fold(0.0, |m, r| m.max(r.abs())))
}

/// `Σ max(|c − f_DCT(x̃)/Q| − 0.49, 0)`
pub fn metric_g_prime(
    candidate: &PixelBlock,
    target: &QuantizedBlock,
    spec: &PipelineSpec,
) -> Result<f64, SearchError> {
    Ok(residuals(candidate, target, spec)?
        .iter()
        .map(|r| (r.abs() - G_PRIME_BOX).max(0.0))
        .sum())
}

/// Per-pixel inclusive ranges that must contain every antecedent of
/// `target` (Naive transform). A range with `lo > hi` means no antecedent
/// exists.
pub fn antecedent_box(target: &QuantizedBlock, spec: &PipelineSpec) -> Result<Vec<(i32, i32)>, SearchError> {
    ensure_dims(spec.dims(), target.dims())?;
    let dec = decompress(target, spec)?;
    let basis = DctBasis::get(spec.dims());
    let n = spec.dims().len();
    let m = basis.matrix();
    let steps = spec.quant().steps();
    Ok((0..n)
        .map(|p| {
            let b: f64 = (0..n).map(|k| m[k * n + p].abs() * f64::from(steps[k])).sum::<f64>() * 0.5 + 1e-9;
            let y = dec.y.values()[p];
            (((y - b).ceil() as i32).max(0), ((y + b).floor() as i32).min(255))
        })
        .collect())
}

pub fn search_antecedent(
    target: &QuantizedBlock,
    spec: &PipelineSpec,
    budget: SearchBudget,
) -> Result<SearchOutcome, SearchError> {
    search_antecedent_with(target, spec, budget, SearchOptions::default(), None)
}

/// Basis scaled by 2^40 and rounded: accumulating it against integer pixel
/// offsets stays exact in `f64`, so incremental updates match a full
/// recomputation bit for bit.
const FIX_SCALE: f64 = (1u64 << 40) as f64;

struct NaiveKernel {
    /// `cols[p * n + k] = round(A[k][p] · 2^40)`
    cols: Vec<f64>,
    /// `2^-40 / Q_k`
    scale: Vec<f64>,
}

impl NaiveKernel {
    fn new(spec: &PipelineSpec) -> Self {
        let n = spec.dims().len();
        let m = DctBasis::get(spec.dims()).matrix();
        let mut cols = vec![0.0; n * n];
        for k in 0..n {
            for p in 0..n {
                cols[p * n + k] = (m[k * n + p] * FIX_SCALE).round();
            }
        }
        let scale = spec.quant().steps().iter().map(|&q| 1.0 / FIX_SCALE / f64::from(q)).collect();
        NaiveKernel { cols, scale }
    }

    #[cfg(test)]
    fn accumulate(&self, pixels: &[u8], shift: f64, out: &mut [f64]) {
        let n = out.len();
        out.fill(0.0);
        for (p, &x) in pixels.iter().enumerate() {
            let v = f64::from(x) - shift;
            for (o, &a) in out.iter_mut().zip(&self.cols[p * n..(p + 1) * n]) {
                *o += a * v;
            }
        }
    }
}

fn zobrist() -> &'static [u128] {
    static TABLE: OnceLock<Vec<u128>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_b10c);
        (0..64 * 256).map(|_| rng.gen()).collect()
    })
}

/// Visited-set key: exact packing for blocks of up to 16 pixels, 128-bit
/// Zobrist hashing otherwise.
#[derive(Clone, Copy)]
enum Keying {
    Packed,
    Zobrist,
}

impl Keying {
    fn full(self, pixels: &[u8]) -> u128 {
        match self {
            Keying::Packed => pixels.iter().enumerate().fold(0, |k, (p, &v)| k | u128::from(v) << (8 * p)),
            Keying::Zobrist => {
                let z = zobrist();
                pixels.iter().enumerate().fold(0, |k, (p, &v)| k ^ z[p * 256 + usize::from(v)])
            }
        }
    }

    fn update(self, key: u128, p: usize, old: u8, new: u8) -> u128 {
        match self {
            Keying::Packed => (key & !(0xFFu128 << (8 * p))) | u128::from(new) << (8 * p),
            Keying::Zobrist => {
                let z = zobrist();
                key ^ z[p * 256 + usize::from(old)] ^ z[p * 256 + usize::from(new)]
            }
        }
    }
}

#[derive(Default)]
struct KeyHasher(u64);

impl Hasher for KeyHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, _: &[u8]) {
        unreachable!("only u128 keys are hashed")
    }

    fn write_u128(&mut self, v: u128) {
        self.0 = ((v as u64) ^ ((v >> 64) as u64)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    }
}

type VisitedSet = HashSet<u128, BuildHasherDefault<KeyHasher>>;

/// Expanded candidate.
struct Node<const N: usize> {
    pixels: [u8; N],
    /// Fixed-point DCT accumulator (Naive only).
    acc: [f64; N],
    key: u128,
}

const NO_MOVE: u16 = u16::MAX;

/// Frontier entry; the candidate is `parent` with `mv` applied
/// (`pixel << 1 | down`).
struct Entry {
    g: f64,
    g2: f64,
    seq: u32,
    parent: u32,
    mv: u16,
    /// `g` is only a lower bound and `g2` is zero; see `Engine::resolve`.
    bound_only: bool,
}

fn decode_move(mv: u16) -> (usize, bool) {
    (usize::from(mv >> 1), mv & 1 == 1)
}

/// Coefficients used for the cheap lower bound on a child's `g`.
const LAZY_K: usize = 8;

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // Reversed so the max-heap pops the smallest (g, g', seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .g
            .total_cmp(&self.g)
            .then(other.g2.total_cmp(&self.g2))
            .then(other.seq.cmp(&self.seq))
    }
}

/// Entries kept heap-ordered before the upper half is spilled.
const HOT_CAP: usize = 1 << 15;

/// Priority queue split at a threshold on `g`: entries at or below it live
/// in a binary heap, the rest wait unsorted. Most children never reach the
/// front, so they cost an append instead of a sift. Pops come out in
/// exactly the order of a single heap, since `(g, g', seq)` is a total order
/// and everything cold has a larger `g` than anything hot.
struct Frontier {
    hot: BinaryHeap<Entry>,
    cold: Vec<Entry>,
    threshold: f64,
    cap: usize,
}

impl Frontier {
    fn new() -> Self {
        Frontier {
            hot: BinaryHeap::new(),
            cold: Vec::new(),
            threshold: f64::INFINITY,
            cap: HOT_CAP,
        }
    }

    fn push(&mut self, e: Entry) {
        if e.g > self.threshold {
            self.cold.push(e);
            return;
        }
        self.hot.push(e);
        if self.hot.len() > self.cap {
            self.spill();
        }
    }

    /// Lowers the threshold to the median hot `g` and moves everything
    /// above it out of the heap.
    fn spill(&mut self) {
        let mut v = std::mem::take(&mut self.hot).into_vec();
        let mid = v.len() / 2;
        // `Entry`'s order is reversed: ascending `g` is descending `Ord`.
        v.select_nth_unstable_by(mid, |a, b| b.cmp(a));
        let t = v[mid].g;
        let before = self.cold.len();
        self.cold.extend(v.extract_if(.., |e| e.g > t));
        if self.cold.len() == before {
            // All ties: let the heap grow instead.
            self.cap *= 2;
        } else {
            self.threshold = t;
        }
        self.hot = BinaryHeap::from(v);
    }

    /// Raises the threshold when the heap runs dry.
    fn refill(&mut self) {
        if !self.hot.is_empty() || self.cold.is_empty() {
            return;
        }
        let k = (HOT_CAP / 2).min(self.cold.len() - 1);
        self.cold.select_nth_unstable_by(k, |a, b| a.g.total_cmp(&b.g));
        let t = self.cold[k].g;
        self.hot.extend(self.cold.extract_if(.., |e| e.g <= t));
        self.threshold = t;
    }

    fn pop(&mut self) -> Option<Entry> {
        self.refill();
        self.hot.pop()
    }

    fn peek(&mut self) -> Option<&Entry> {
        self.refill();
        self.hot.peek()
    }

    fn is_empty(&self) -> bool {
        self.hot.is_empty() && self.cold.is_empty()
    }
}

/// Accepts candidates whose fast metric is at most this far above 1/2 for
/// the exact recompression check.
const ACCEPT_SLACK: f64 = 1e-7;

/// `(g, g')` from residuals, accumulated in eight fixed lanes so the loops
/// vectorize while the summation order stays fixed.
#[inline(always)]
fn lane_metrics<const N: usize>(residual: impl Fn(usize) -> f64) -> (f64, f64) {
    let mut r = [0.0f64; N];
    for (k, v) in r.iter_mut().enumerate() {
        *v = residual(k).abs();
    }
    let mut gmax = [0.0f64; 8];
    let mut gsum = [0.0f64; 8];
    let mut chunks = r.chunks_exact(8);
    for chunk in &mut chunks {
        for l in 0..8 {
            let a = chunk[l];
            gmax[l] = if a > gmax[l] { a } else { gmax[l] };
            let over = a - G_PRIME_BOX;
            gsum[l] += if over > 0.0 { over } else { 0.0 };
        }
    }
    for (l, &a) in chunks.remainder().iter().enumerate() {
        gmax[l] = if a > gmax[l] { a } else { gmax[l] };
        let over = a - G_PRIME_BOX;
        gsum[l] += if over > 0.0 { over } else { 0.0 };
    }
    let g = gmax.iter().fold(0.0f64, |m, &v| if v > m { v } else { m });
    let g2 = ((gsum[0] + gsum[1]) + (gsum[2] + gsum[3])) + ((gsum[4] + gsum[5]) + (gsum[6] + gsum[7]));
    (g, g2)
}

struct Engine<'a, const N: usize> {
    target: &'a QuantizedBlock,
    spec: &'a PipelineSpec,
    c: [f64; N],
    /// Naive: fixed-point basis columns and `2^-40 / Q`.
    naive: Option<(Vec<[f64; N]>, [f64; N])>,
    steps: [f64; N],
    ranges: [(u8, u8); N],
    keying: Keying,
    /// Defer full metric evaluation of children (Naive 8×8).
    lazy: bool,
}

impl<'a, const N: usize> Engine<'a, N> {
    fn new(target: &'a QuantizedBlock, spec: &'a PipelineSpec, start: &[u8], options: SearchOptions) -> Result<Self, SearchError> {
        let naive = (spec.variant() == DctVariant::Naive).then(|| {
            let kernel = NaiveKernel::new(spec);
            let cols = kernel.cols.chunks_exact(N).map(|c| c.try_into().expect("N columns")).collect();
            (cols, kernel.scale.try_into().expect("N steps"))
        });
        let mut ranges = [(0u8, 255u8); N];
        if naive.is_some() && options.prune_to_box {
            for (p, (lo, hi)) in antecedent_box(target, spec)?.into_iter().enumerate() {
                let x = i32::from(start[p]);
                ranges[p] = (lo.min(x) as u8, hi.max(x) as u8);
            }
        }
        Ok(Engine {
            target,
            spec,
            c: std::array::from_fn(|k| f64::from(target.values()[k])),
            naive,
            steps: std::array::from_fn(|k| f64::from(spec.quant().steps()[k])),
            ranges,
            keying: if N <= 16 { Keying::Packed } else { Keying::Zobrist },
            lazy: N > LAZY_K,
        })
    }

    fn islow_metrics(&self, pixels: &[u8; N]) -> (f64, f64) {
        let mut data = [0i32; 64];
        let shift = if self.spec.level_shift() { 128 } else { 0 };
        for (d, &p) in data.iter_mut().zip(pixels) {
            *d = i32::from(p) - shift;
        }
        fdct_islow(&mut data);
        lane_metrics::<N>(|k| self.c[k] - f64::from(data[k]) / 8.0 / self.steps[k])
    }

    /// Metrics of `node` with `delta` (a signed basis column, or zeros)
    /// added to its accumulator.
    #[inline(always)]
    fn naive_metrics(&self, acc: &[f64; N], col: &[f64; N], sign: f64, scale: &[f64; N]) -> (f64, f64) {
        lane_metrics::<N>(|k| self.c[k] - (acc[k] + sign * col[k]) * scale[k])
    }

    fn accepts(&self, pixels: &[u8; N], g: f64) -> Option<PixelBlock> {
        if g >= 0.5 + ACCEPT_SLACK {
            return None;
        }
        let block = Block::new(self.spec.dims(), pixels.to_vec()).expect("dims checked");
        // Recompression is the acceptance test: a residual of exactly 1/2
        // still rounds onto the target when it points away from zero.
        (compress(&block, self.spec).ok()? == *self.target).then_some(block)
    }

    fn compatible(&self, antecedent: PixelBlock, iterations: u64) -> SearchOutcome {
        let final_metric = metric_g(&antecedent, self.target, self.spec).expect("dims checked");
        assert_eq!(&compress(&antecedent, self.spec).expect("dims checked"), self.target);
        SearchOutcome::Compatible {
            antecedent,
            iterations,
            final_metric,
        }
    }

    /// Indices of the `LAZY_K` largest residual magnitudes of a node.
    fn top_residuals(&self, acc: &[f64; N], scale: &[f64; N]) -> [usize; LAZY_K] {
        let mut mags: [(f64, usize); N] = std::array::from_fn(|k| ((self.c[k] - acc[k] * scale[k]).abs(), k));
        mags.select_nth_unstable_by(LAZY_K - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        std::array::from_fn(|i| mags[i].1)
    }

    fn run(&self, start: [u8; N], budget: SearchBudget, cancel: Option<&AtomicBool>) -> SearchOutcome {
        let zeros = [0.0f64; N];
        let mut acc = [0.0f64; N];
        let (g0, g20) = match &self.naive {
            Some((cols, scale)) => {
                for (p, &x) in start.iter().enumerate() {
                    let v = f64::from(x) - self.spec.shift();
                    for k in 0..N {
                        acc[k] += cols[p][k] * v;
                    }
                }
                self.naive_metrics(&acc, &zeros, 0.0, scale)
            }
            None => self.islow_metrics(&start),
        };
        if let Some(found) = self.accepts(&start, g0) {
            return self.compatible(found, 0);
        }

        let root = Node {
            key: self.keying.full(&start),
            pixels: start,
            acc,
        };
        let mut visited = VisitedSet::default();
        visited.insert(root.key);
        let mut arena = vec![root];
        let mut heap = Frontier::new();
        heap.push(Entry {
            g: g0,
            g2: g20,
            seq: 0,
            parent: 0,
            mv: NO_MOVE,
            bound_only: false,
        });
        let mut seq: u32 = 1;
        let mut best = g0;
        let mut iterations = 0u64;

        while iterations < budget.max_iterations {
            if iterations % 256 == 0 && cancel.is_some_and(|c| c.load(AtomicOrdering::Relaxed)) {
                break;
            }
            let Some(entry) = heap.pop() else { break };
            if entry.bound_only {
                let exact = self.resolve(&arena, entry);
                best = best.min(exact.g);
                heap.push(exact);
                continue;
            }

            let idx = if entry.mv == NO_MOVE {
                entry.parent as usize
            } else {
                let parent = &arena[entry.parent as usize];
                let (p, down) = decode_move(entry.mv);
                let mut pixels = parent.pixels;
                let old = pixels[p];
                pixels[p] = if down { old - 1 } else { old + 1 };
                let key = self.keying.update(parent.key, p, old, pixels[p]);
                // A later copy of a candidate reached through another parent;
                // the first copy has the same metrics and an earlier `seq`.
                if !visited.insert(key) {
                    continue;
                }
                let mut acc = parent.acc;
                if let Some((cols, _)) = &self.naive {
                    let sign = if down { -1.0 } else { 1.0 };
                    for k in 0..N {
                        acc[k] += sign * cols[p][k];
                    }
                }
                arena.push(Node { pixels, acc, key });
                arena.len() - 1
            };
            iterations += 1;
            let node = &arena[idx];
            let top = match &self.naive {
                Some((_, scale)) if self.lazy => Some(self.top_residuals(&node.acc, scale)),
                _ => None,
            };

            for p in 0..N {
                let (lo, hi) = self.ranges[p];
                let old = node.pixels[p];
                for down in [false, true] {
                    let new = match (down, old) {
                        (false, v) if v < hi => v + 1,
                        (true, v) if v > lo => v - 1,
                        _ => continue,
                    };
                    if visited.contains(&self.keying.update(node.key, p, old, new)) {
                        continue;
                    }
                    let mv = (p as u16) << 1 | u16::from(down);
                    let sign = if down { -1.0 } else { 1.0 };

                    // A partial maximum is a lower bound on g. When it already
                    // rules the child out as a solution, defer the full
                    // evaluation until the child reaches the front of the queue.
                    if let (Some(top), Some((cols, scale))) = (&top, &self.naive) {
                        let col = &cols[p];
                        let lb = top.iter().fold(0.0f64, |m, &k| {
                            let a = (self.c[k] - (node.acc[k] + sign * col[k]) * scale[k]).abs();
                            if a > m {
                                a
                            } else {
                                m
                            }
                        });
                        if lb >= 0.5 + ACCEPT_SLACK {
                            heap.push(Entry {
                                g: lb,
                                g2: 0.0,
                                seq,
                                parent: idx as u32,
                                mv,
                                bound_only: true,
                            });
                            seq += 1;
                            continue;
                        }
                    }

                    let mut pixels = node.pixels;
                    pixels[p] = new;
                    let (g, g2) = match &self.naive {
                        Some((cols, scale)) => self.naive_metrics(&node.acc, &cols[p], sign, scale),
                        None => self.islow_metrics(&pixels),
                    };
                    best = best.min(g);
                    if let Some(found) = self.accepts(&pixels, g) {
                        return self.compatible(found, iterations);
                    }
                    heap.push(Entry {
                        g,
                        g2,
                        seq,
                        parent: idx as u32,
                        mv,
                        bound_only: false,
                    });
                    seq += 1;
                }
            }
        }

        // Every deferred entry's true g is at least its bound, so once the
        // front of the queue is exact it holds the smallest unexpanded g.
        // Copies of expanded candidates at the front are dropped, so an
        // empty queue still means the reachable region was exhausted.
        while let Some(front) = heap.peek() {
            if front.bound_only {
                let entry = heap.pop().expect("peeked");
                heap.push(self.resolve(&arena, entry));
            } else if front.mv != NO_MOVE && visited.contains(&self.child_key(&arena, front)) {
                heap.pop();
            } else {
                break;
            }
        }
        if let Some(front) = heap.peek() {
            best = best.min(front.g);
        }

        SearchOutcome::Exhausted {
            iterations,
            best_metric: best,
            queue_drained: heap.is_empty(),
        }
    }

    fn child_key(&self, arena: &[Node<N>], entry: &Entry) -> u128 {
        let parent = &arena[entry.parent as usize];
        let (p, down) = decode_move(entry.mv);
        let old = parent.pixels[p];
        self.keying.update(parent.key, p, old, if down { old - 1 } else { old + 1 })
    }

    /// Replaces a deferred entry's bound by its exact metrics.
    fn resolve(&self, arena: &[Node<N>], entry: Entry) -> Entry {
        let (cols, scale) = self.naive.as_ref().expect("only Naive defers");
        let parent = &arena[entry.parent as usize];
        let (p, down) = decode_move(entry.mv);
        let (g, g2) = self.naive_metrics(&parent.acc, &cols[p], if down { -1.0 } else { 1.0 }, scale);
        Entry {
            g,
            g2,
            bound_only: false,
            ..entry
        }
    }
}

/// Full-control entry point. `cancel`, when set by another thread, stops
/// the search at the next checkpoint with an unsolved outcome.
pub fn search_antecedent_with(
    target: &QuantizedBlock,
    spec: &PipelineSpec,
    budget: SearchBudget,
    options: SearchOptions,
    cancel: Option<&AtomicBool>,
) -> Result<SearchOutcome, SearchError> {
    ensure_dims(spec.dims(), target.dims())?;
    let start = decompress(target, spec)?.pixels;
    fn go<const N: usize>(
        target: &QuantizedBlock,
        spec: &PipelineSpec,
        start: &[u8],
        budget: SearchBudget,
        options: SearchOptions,
        cancel: Option<&AtomicBool>,
    ) -> Result<SearchOutcome, SearchError> {
        let engine = Engine::<N>::new(target, spec, start, options)?;
        Ok(engine.run(start.try_into().expect("N pixels"), budget, cancel))
    }
    match start.len() {
        2 => go::<2>(target, spec, start.values(), budget, options, cancel),
        64 => go::<64>(target, spec, start.values(), budget, options, cancel),
        _ => unreachable!("Dims admits only 1x2 and 8x8"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::{Dims, QuantTable};
    use crate::codec::toy_enumerate;
    use rand::Rng;

    fn toy(a: i32, b: i32) -> QuantizedBlock {
        Block::new(Dims::TOY, vec![a, b]).unwrap()
    }

    fn random_pixels(rng: &mut ChaCha8Rng) -> PixelBlock {
        Block::new(Dims::STANDARD, (0..64).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn toy_metrics_by_hand() {
        let spec = PipelineSpec::toy([1, 1]).unwrap();
        let x = Block::new(Dims::TOY, vec![0u8, 255]).unwrap();
        let t = toy(181, -180);
        // forward (0, 255) = (180.312…, −180.312…)
        let d = 255.0 / 2f64.sqrt();
        assert!((metric_g(&x, &t, &spec).unwrap() - (181.0 - d)).abs() < 1e-12);
        let g2 = (181.0 - d - 0.49) + (d - 180.0 - 0.49f64).max(0.0);
        assert!((metric_g_prime(&x, &t, &spec).unwrap() - g2).abs() < 1e-12);
        assert!((metric_g(&x, &t, &spec).unwrap() - 0.688).abs() < 1e-3);
        assert!((g2 - 0.198).abs() < 1e-3);
    }

    #[test]
    fn zero_target_solved_at_start() {
        let spec = PipelineSpec::standard(DctVariant::Naive);
        let t = Block::filled(Dims::STANDARD, 0).unwrap();
        let x = Block::filled(Dims::STANDARD, 128u8).unwrap();
        assert_eq!(metric_g(&x, &t, &spec).unwrap(), 0.0);
        match search_antecedent(&t, &spec, SearchBudget::new(1).unwrap()).unwrap() {
            SearchOutcome::Compatible { antecedent, iterations, .. } => {
                assert_eq!(iterations, 0);
                assert_eq!(antecedent, x);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_zero_budget_and_wrong_dims() {
        assert_eq!(SearchBudget::new(0), Err(SearchError::ZeroBudget));
        let spec = PipelineSpec::standard(DctVariant::Naive);
        assert!(search_antecedent(&toy(0, 0), &spec, SearchBudget::new(5).unwrap()).is_err());
    }

    #[test]
    fn fixed_point_accumulator_matches_float_transform() {
        let spec = PipelineSpec::standard(DctVariant::Naive);
        let kernel = NaiveKernel::new(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = random_pixels(&mut rng);
            let mut acc = vec![0.0; 64];
            kernel.accumulate(x.values(), 128.0, &mut acc);
            let d = forward_dct(&x, &spec).unwrap();
            for k in 0..64 {
                assert!((acc[k] / FIX_SCALE - d.values()[k]).abs() < 1e-6);
                assert_eq!(acc[k].fract(), 0.0);
            }
        }
    }

    #[test]
    fn box_contains_every_toy_antecedent() {
        let spec = PipelineSpec::toy([1, 2]).unwrap();
        for a in (0..=255u8).step_by(7) {
            for b in (0..=255u8).step_by(5) {
                let x = Block::new(Dims::TOY, vec![a, b]).unwrap();
                let c = compress(&x, &spec).unwrap();
                let bx = antecedent_box(&c, &spec).unwrap();
                for (p, &(lo, hi)) in bx.iter().enumerate() {
                    let v = i32::from(x.values()[p]);
                    assert!(lo <= v && v <= hi);
                }
            }
        }
    }

    #[test]
    fn toy_drain_proves_incompatibility() {
        let spec = PipelineSpec::toy([1, 1]).unwrap();
        let atlas = toy_enumerate(&spec).unwrap();
        let budget = SearchBudget::new(1_000_000).unwrap();
        let mut checked = 0;
        for c in atlas.box_blocks().step_by(97) {
            let out = search_antecedent(&c, &spec, budget).unwrap();
            match out {
                SearchOutcome::Compatible { ref antecedent, .. } => {
                    assert!(atlas.is_compatible(&c));
                    assert_eq!(compress(antecedent, &spec).unwrap(), c);
                }
                SearchOutcome::Exhausted { queue_drained, .. } => {
                    assert!(queue_drained);
                    assert!(!atlas.is_compatible(&c), "{c:?}");
                }
            }
            checked += 1;
        }
        assert!(checked > 1000);
    }

    #[test]
    fn unpruned_toy_drain_agrees() {
        let spec = PipelineSpec::toy([1, 1]).unwrap();
        let atlas = toy_enumerate(&spec).unwrap();
        let budget = SearchBudget::new(100_000).unwrap();
        let opts = SearchOptions { prune_to_box: false };
        for c in [toy(181, -180), toy(180, -180), toy(10, 3), toy(11, 3)] {
            let out = search_antecedent_with(&c, &spec, budget, opts, None).unwrap();
            assert_eq!(out.is_compatible(), atlas.is_compatible(&c), "{c:?}");
        }
    }

    #[test]
    fn random_covers_are_solved() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for variant in [DctVariant::Naive, DctVariant::Islow] {
            let spec = PipelineSpec::standard(variant);
            let mut solved = 0;
            for _ in 0..20 {
                let c = compress(&random_pixels(&mut rng), &spec).unwrap();
                if let SearchOutcome::Compatible { antecedent, final_metric, .. } =
                    search_antecedent(&c, &spec, SearchBudget::new(2_000).unwrap()).unwrap()
                {
                    assert_eq!(compress(&antecedent, &spec).unwrap(), c);
                    assert!(final_metric <= 0.5);
                    solved += 1;
                }
            }
            assert!(solved >= 15, "{variant}: {solved}/20");
        }
    }

    #[test]
    fn deterministic_and_cancellable() {
        let spec = PipelineSpec::standard(DctVariant::Naive);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut c = compress(&random_pixels(&mut rng), &spec).unwrap();
        c.values_mut()[9] += 1;
        c.values_mut()[40] -= 1;
        let budget = SearchBudget::new(300).unwrap();
        let a = search_antecedent(&c, &spec, budget).unwrap();
        let b = search_antecedent(&c, &spec, budget).unwrap();
        assert_eq!(a, b);

        let stop = AtomicBool::new(true);
        let out = search_antecedent_with(&c, &spec, budget, SearchOptions::default(), Some(&stop)).unwrap();
        if !a.is_compatible() || a.iterations() > 0 {
            assert!(matches!(out, SearchOutcome::Exhausted { queue_drained: false, iterations: 0, .. }));
        }
    }

    #[test]
    fn deferred_evaluation_matches_eager() {
        let spec = PipelineSpec::standard(DctVariant::Naive);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let budget = SearchBudget::new(400).unwrap();
        for i in 0..12 {
            let mut c = compress(&random_pixels(&mut rng), &spec).unwrap();
            for _ in 0..i % 3 {
                let k = rng.gen_range(0..64);
                c.values_mut()[k] += if rng.gen() { 1 } else { -1 };
            }
            let start = decompress(&c, &spec).unwrap().pixels;
            let start: [u8; 64] = start.values().try_into().unwrap();
            let mut engine = Engine::<64>::new(&c, &spec, &start, SearchOptions::default()).unwrap();
            assert!(engine.lazy);
            let lazy = engine.run(start, budget, None);
            engine.lazy = false;
            let eager = engine.run(start, budget, None);
            assert_eq!(lazy, eager, "block {i}");
        }
    }

    /// Textbook best-first search: one heap, duplicates dropped when
    /// generated, metrics recomputed from scratch for every candidate.
    fn reference_run<const N: usize>(engine: &Engine<'_, N>, start: [u8; N], budget: u64) -> SearchOutcome {
        use std::cmp::Reverse;
        let metrics = |px: &[u8; N]| match &engine.naive {
            Some((cols, scale)) => {
                let mut acc = [0.0f64; N];
                for p in 0..N {
                    let v = f64::from(px[p]) - engine.spec.shift();
                    for k in 0..N {
                        acc[k] += cols[p][k] * v;
                    }
                }
                engine.naive_metrics(&acc, &[0.0; N], 0.0, scale)
            }
            None => engine.islow_metrics(px),
        };
        let (g0, g20) = metrics(&start);
        if let Some(found) = engine.accepts(&start, g0) {
            return engine.compatible(found, 0);
        }
        let mut visited = HashSet::new();
        visited.insert(start);
        let mut nodes = vec![start];
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((g0.to_bits(), g20.to_bits(), 0usize)));
        let mut best = g0;
        let mut iterations = 0;
        while iterations < budget {
            let Some(Reverse((_, _, i))) = heap.pop() else { break };
            iterations += 1;
            let px = nodes[i];
            for p in 0..N {
                let (lo, hi) = engine.ranges[p];
                for (delta, ok) in [(1i16, px[p] < hi), (-1, px[p] > lo)] {
                    if !ok {
                        continue;
                    }
                    let mut child = px;
                    child[p] = (i16::from(px[p]) + delta) as u8;
                    if !visited.insert(child) {
                        continue;
                    }
                    let (g, g2) = metrics(&child);
                    best = best.min(g);
                    if let Some(found) = engine.accepts(&child, g) {
                        return engine.compatible(found, iterations);
                    }
                    nodes.push(child);
                    heap.push(Reverse((g.to_bits(), g2.to_bits(), nodes.len() - 1)));
                }
            }
        }
        SearchOutcome::Exhausted {
            iterations,
            best_metric: best,
            queue_drained: heap.is_empty(),
        }
    }

    fn start_of<const N: usize>(c: &QuantizedBlock, spec: &PipelineSpec) -> [u8; N] {
        decompress(c, spec).unwrap().pixels.values().try_into().unwrap()
    }

    #[test]
    fn matches_reference_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for variant in [DctVariant::Naive, DctVariant::Islow] {
            let spec = PipelineSpec::standard(variant);
            let (blocks, budget) = if variant == DctVariant::Naive { (10, 250) } else { (3, 60) };
            for i in 0..blocks {
                let mut c = compress(&random_pixels(&mut rng), &spec).unwrap();
                for _ in 0..i % 4 {
                    let k = rng.gen_range(0..64);
                    c.values_mut()[k] += if rng.gen() { 1 } else { -1 };
                }
                let start = start_of::<64>(&c, &spec);
                let engine = Engine::<64>::new(&c, &spec, &start, SearchOptions::default()).unwrap();
                let fast = engine.run(start, SearchBudget::new(budget).unwrap(), None);
                assert_eq!(fast, reference_run(&engine, start, budget), "{variant} block {i}");
            }
        }
        let spec = PipelineSpec::toy([1, 1]).unwrap();
        let atlas = toy_enumerate(&spec).unwrap();
        for c in atlas.box_blocks().step_by(331) {
            let start = start_of::<2>(&c, &spec);
            for opts in [SearchOptions::default(), SearchOptions { prune_to_box: false }] {
                let engine = Engine::<2>::new(&c, &spec, &start, opts).unwrap();
                let fast = engine.run(start, SearchBudget::new(100_000).unwrap(), None);
                assert_eq!(fast, reference_run(&engine, start, 100_000), "{:?}", c.values());
            }
        }
    }

    #[test]
    fn frontier_pops_in_heap_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut frontier = Frontier::new();
        let mut heap = BinaryHeap::new();
        let entry = |seq: u32, g: f64, g2: f64| Entry { g, g2, seq, parent: 0, mv: 0, bound_only: false };
        let mut seq = 0;
        for round in 0..40 {
            for _ in 0..rng.gen_range(0..5000) {
                // Coarse values so that ties on g and g' are common.
                let (g, g2) = (f64::from(rng.gen_range(0..50u8)) / 8.0, f64::from(rng.gen_range(0..3u8)));
                frontier.push(entry(seq, g, g2));
                heap.push(entry(seq, g, g2));
                seq += 1;
            }
            for _ in 0..rng.gen_range(0..4000) {
                let (a, b) = (frontier.pop(), heap.pop());
                assert_eq!(a.map(|e| e.seq), b.map(|e| e.seq), "round {round}");
            }
        }
        while let Some(b) = heap.pop() {
            assert_eq!(frontier.pop().unwrap().seq, b.seq);
        }
        assert!(frontier.is_empty());
    }

    #[test]
    fn qf_table_search_stays_sound() {
        let spec = PipelineSpec::new(DctVariant::Naive, true, QuantTable::from_quality(95).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let c = compress(&random_pixels(&mut rng), &spec).unwrap();
            if let SearchOutcome::Compatible { antecedent, .. } =
                search_antecedent(&c, &spec, SearchBudget::new(500).unwrap()).unwrap()
            {
                assert_eq!(compress(&antecedent, &spec).unwrap(), c);
            }
        }
    }
}
