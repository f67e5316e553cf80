//! Monte Carlo experiments on block incompatibility: unsolved ratios as a
//! function of the number of modifications, per-position heatmaps, spatial
//! error variance, and the embedding/outcome simulators used by the
//! detector.
//!
//! Randomness is ChaCha8. Every block gets its own generator,
//! `ChaCha8Rng::seed_from_u64(seed)` with `set_stream(index)`, so results do
//! not depend on how work is scheduled across threads.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::block::{Block, Dims, FloatBlock, PixelBlock, QuantizedBlock};
use crate::codec::{compress, decompress, PipelineSpec};
use crate::error::{FormatError, StatsError};
use crate::search::{search_antecedent, SearchBudget};

pub const DEFAULT_M_MAX: usize = 5;

/// Generator for one unit of work.
pub fn block_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Independent sub-seed for a named purpose, so that e.g. modification
/// draws and outcome draws never share a stream.
pub fn derive_seed(seed: u64, domain: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ domain.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Where cover pixel blocks come from.
#[derive(Clone, Debug, PartialEq)]
pub enum CoverSource {
    /// Independent uniform pixels.
    Uniform { seed: u64 },
    /// A random plane plus Gaussian-like noise: closer to natural image
    /// content than uniform noise.
    Smooth { seed: u64 },
    /// A fixed list, e.g. the 8×8 tiles of grayscale images.
    Blocks(Vec<PixelBlock>),
}

impl CoverSource {
    /// Block number `index`; `None` past the end of a finite source.
    pub fn block(&self, index: u64) -> Option<PixelBlock> {
        let pixels = match self {
            CoverSource::Uniform { seed } => {
                let mut rng = block_rng(*seed, index);
                (0..64).map(|_| rng.gen()).collect()
            }
            CoverSource::Smooth { seed } => smooth_block(&mut block_rng(*seed, index)),
            CoverSource::Blocks(blocks) => return blocks.get(usize::try_from(index).ok()?).cloned(),
        };
        Some(Block::new(Dims::STANDARD, pixels).expect("64 pixels"))
    }

    pub fn len(&self) -> Option<u64> {
        match self {
            CoverSource::Blocks(b) => Some(b.len() as u64),
            _ => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }

    /// Full 8×8 tiles of an image file, converted to 8-bit luma.
    pub fn from_image(path: &Path) -> Result<Self, StatsError> {
        let img = image::open(path)
            .map_err(|e| StatsError::Format(FormatError::Binary(format!("{}: {e}", path.display()))))?
            .to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let raw = img.as_raw();
        let mut blocks = Vec::new();
        for by in 0..h / 8 {
            for bx in 0..w / 8 {
                let vals = (0..64).map(|p| raw[(by * 8 + p / 8) * w + bx * 8 + p % 8]).collect();
                blocks.push(Block::new(Dims::STANDARD, vals)?);
            }
        }
        Ok(CoverSource::Blocks(blocks))
    }

    /// Short description for report headers.
    pub fn describe(&self) -> String {
        match self {
            CoverSource::Uniform { seed } => format!("uniform:{seed}"),
            CoverSource::Smooth { seed } => format!("smooth:{seed}"),
            CoverSource::Blocks(b) => format!("blocks:{}", b.len()),
        }
    }
}

fn smooth_block(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let base: f64 = rng.gen_range(40.0..215.0);
    let gx: f64 = rng.gen_range(-4.0..4.0);
    let gy: f64 = rng.gen_range(-4.0..4.0);
    let sigma: f64 = rng.gen_range(0.5..6.0);
    (0..64)
        .map(|p| {
            let (i, j) = ((p / 8) as f64, (p % 8) as f64);
            // Irwin–Hall(12) − 6 has unit variance.
            let noise: f64 = (0..12).map(|_| rng.gen::<f64>()).sum::<f64>() - 6.0;
            (base + gx * j + gy * i + sigma * noise).round().clamp(0.0, 255.0) as u8
        })
        .collect()
}

/// A cover block whose compression decompresses without clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverBlock {
    pub index: u64,
    pub pixels: PixelBlock,
    pub coefficients: QuantizedBlock,
}

/// The first `count` non-clipped covers at or after `start`.
pub fn collect_covers(
    source: &CoverSource,
    spec: &PipelineSpec,
    start: u64,
    count: usize,
) -> Result<Vec<CoverBlock>, StatsError> {
    let mut out = Vec::with_capacity(count);
    let mut index = start;
    while out.len() < count {
        let Some(pixels) = source.block(index) else {
            return Err(StatsError::InsufficientBlocks {
                needed: count,
                available: out.len(),
            });
        };
        let coefficients = compress(&pixels, spec)?;
        if !decompress(&coefficients, spec)?.clipped {
            out.push(CoverBlock {
                index,
                pixels,
                coefficients,
            });
        }
        index += 1;
    }
    Ok(out)
}

/// `m` distinct coefficients, chosen uniformly, each moved by ±1.
pub fn apply_modifications(c: &QuantizedBlock, m: usize, rng_seed: u64) -> Result<QuantizedBlock, StatsError> {
    modify_with(c, m, &mut ChaCha8Rng::seed_from_u64(rng_seed))
}

pub fn modify_with(c: &QuantizedBlock, m: usize, rng: &mut impl Rng) -> Result<QuantizedBlock, StatsError> {
    if m > c.len() {
        return Err(StatsError::ModificationCount(m));
    }
    let mut out = c.clone();
    for pos in index::sample(rng, c.len(), m) {
        out.values_mut()[pos] += if rng.gen::<bool>() { 1 } else { -1 };
    }
    Ok(out)
}

/// Population variance of a spatial rounding error grid.
pub fn block_variance(e: &FloatBlock) -> f64 {
    let v = e.values();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub m: usize,
    pub samples: u64,
    pub unsolved: u64,
}

impl TableRow {
    pub fn ratio(&self) -> f64 {
        self.unsolved as f64 / self.samples as f64
    }
}

/// Empirical `P(unsolved | m)` for one pipeline and search budget.
#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodTable {
    pub pipeline_id: String,
    pub dims: Dims,
    pub budget: u64,
    pub seed: u64,
    pub source: String,
    /// One row per `m = 0..=m_max`, in order.
    pub rows: Vec<TableRow>,
}

const TABLE_MAGIC: &str = "# blockcompat likelihood table v1";

impl LikelihoodTable {
    /// A table from given ratios (each row counted as `samples` draws).
    pub fn from_ratios(pipeline_id: &str, budget: u64, ratios: &[f64], samples: u64) -> Result<Self, StatsError> {
        if ratios.is_empty() {
            return Err(StatsError::Table("no rows".into()));
        }
        let rows = ratios
            .iter()
            .enumerate()
            .map(|(m, &p)| {
                if !(0.0..=1.0).contains(&p) {
                    return Err(StatsError::Probability(p));
                }
                Ok(TableRow {
                    m,
                    samples,
                    unsolved: (p * samples as f64).round() as u64,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(LikelihoodTable {
            pipeline_id: pipeline_id.to_string(),
            dims: Dims::STANDARD,
            budget,
            seed: 0,
            source: "given".into(),
            rows,
        })
    }

    pub fn m_max(&self) -> usize {
        self.rows.len() - 1
    }

    /// `P(t = 1 | m)`; counts above `m_max` use the last row.
    pub fn p_unsolved(&self, m: usize) -> f64 {
        self.rows[m.min(self.m_max())].ratio()
    }

    /// Like [`p_unsolved`](Self::p_unsolved) but kept inside
    /// `[1/(n+1), 1 - 1/(n+1)]` so that logarithms stay finite.
    pub fn p_unsolved_guarded(&self, m: usize) -> f64 {
        let row = &self.rows[m.min(self.m_max())];
        let floor = 1.0 / (row.samples as f64 + 1.0);
        row.ratio().clamp(floor, 1.0 - floor)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{TABLE_MAGIC}");
        let _ = writeln!(s, "pipeline {}", self.pipeline_id);
        let _ = writeln!(s, "dims {}", self.dims);
        let _ = writeln!(s, "budget {}", self.budget);
        let _ = writeln!(s, "m_max {}", self.m_max());
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "source {}", self.source);
        let _ = writeln!(s, "zero_guard laplace 1/(samples+1)");
        let _ = writeln!(s, "m\tsamples\tunsolved\tratio");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{}\t{}\t{:.6}", r.m, r.samples, r.unsolved, r.ratio());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, StatsError> {
        let bad = |msg: String| StatsError::Table(msg);
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some(TABLE_MAGIC) {
            return Err(bad("missing header line".into()));
        }
        let mut field = |name: &str| -> Result<String, StatsError> {
            let line = lines.next().ok_or_else(|| bad(format!("missing `{name}`")))?;
            line.strip_prefix(name)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected `{name}`, found `{line}`")))
        };
        let num = |v: String, name: &str| v.parse::<u64>().map_err(|_| bad(format!("bad {name} `{v}`")));
        let pipeline_id = field("pipeline")?;
        let dims = match field("dims")?.as_str() {
            "8x8" => Dims::STANDARD,
            "1x2" => Dims::TOY,
            other => return Err(bad(format!("bad dims `{other}`"))),
        };
        let budget = num(field("budget")?, "budget")?;
        let m_max = num(field("m_max")?, "m_max")? as usize;
        let seed = num(field("seed")?, "seed")?;
        let source = field("source")?;
        field("zero_guard")?;
        if lines.next() != Some("m\tsamples\tunsolved\tratio") {
            return Err(bad("missing column header".into()));
        }
        let mut rows = Vec::new();
        for line in lines {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad(format!("bad row `{line}`")));
            }
            let m = num(cols[0].into(), "m")? as usize;
            let samples = num(cols[1].into(), "samples")?;
            let unsolved = num(cols[2].into(), "unsolved")?;
            if m != rows.len() || samples == 0 || unsolved > samples {
                return Err(bad(format!("inconsistent row `{line}`")));
            }
            rows.push(TableRow { m, samples, unsolved });
        }
        if rows.len() != m_max + 1 {
            return Err(bad(format!("expected {} rows, found {}", m_max + 1, rows.len())));
        }
        Ok(LikelihoodTable {
            pipeline_id,
            dims,
            budget,
            seed,
            source,
            rows,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TableConfig {
    pub budget: SearchBudget,
    pub m_max: usize,
    pub samples_per_m: usize,
    pub seed: u64,
}

/// One search of the table experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub m: usize,
    pub cover_index: u64,
    pub solved: bool,
    /// Iterations used (the full budget when unsolved).
    pub iterations: u64,
    /// Variance of the spatial rounding error of the modified block.
    pub variance: f64,
}

/// Unsolved ratio if the search had stopped after each checkpoint budget.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceTrace {
    pub m: usize,
    pub points: Vec<(u64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LikelihoodBuild {
    pub table: LikelihoodTable,
    pub traces: Vec<ConvergenceTrace>,
    pub records: Vec<SampleRecord>,
}

/// 1, 2, 5, 10, 20, 50, … up to and including `budget`.
pub fn checkpoints(budget: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut decade = 1u64;
    'outer: loop {
        for f in [1, 2, 5] {
            let b = decade * f;
            if b >= budget {
                break 'outer;
            }
            out.push(b);
        }
        decade *= 10;
    }
    out.push(budget);
    out
}

/// Each `m` gets its own consecutive run of fresh covers from `source`.
pub fn build_likelihood_table(
    source: &CoverSource,
    spec: &PipelineSpec,
    config: TableConfig,
) -> Result<LikelihoodBuild, StatsError> {
    if config.samples_per_m == 0 {
        return Err(StatsError::NoSamples);
    }
    if config.m_max > spec.dims().len() {
        return Err(StatsError::ModificationCount(config.m_max));
    }
    let total = (config.m_max + 1) * config.samples_per_m;
    let covers = collect_covers(source, spec, 0, total).map_err(|e| match e {
        StatsError::InsufficientBlocks { available, .. } => StatsError::InsufficientBlocks { needed: total, available },
        other => other,
    })?;
    let mod_seed = derive_seed(config.seed, 1);
    let jobs: Vec<(usize, &CoverBlock)> = covers
        .iter()
        .enumerate()
        .map(|(i, c)| (i / config.samples_per_m, c))
        .collect();
    let records = jobs
        .par_iter()
        .enumerate()
        .map(|(i, &(m, cover))| {
            let mut rng = block_rng(mod_seed, i as u64);
            let target = modify_with(&cover.coefficients, m, &mut rng)?;
            let variance = block_variance(&decompress(&target, spec)?.spatial_error());
            let out = search_antecedent(&target, spec, config.budget)?;
            Ok(SampleRecord {
                m,
                cover_index: cover.index,
                solved: out.is_compatible(),
                iterations: if out.is_compatible() { out.iterations() } else { config.budget.max_iterations() },
                variance,
            })
        })
        .collect::<Result<Vec<_>, StatsError>>()?;

    let marks = checkpoints(config.budget.max_iterations());
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for m in 0..=config.m_max {
        let group: Vec<&SampleRecord> = records.iter().filter(|r| r.m == m).collect();
        let n = group.len() as u64;
        let unsolved = group.iter().filter(|r| !r.solved).count() as u64;
        rows.push(TableRow { m, samples: n, unsolved });
        let points = marks
            .iter()
            .map(|&b| {
                let open = group.iter().filter(|r| !r.solved || r.iterations > b).count();
                (b, open as f64 / n as f64)
            })
            .collect();
        traces.push(ConvergenceTrace { m, points });
    }
    let table = LikelihoodTable {
        pipeline_id: spec.id(),
        dims: spec.dims(),
        budget: config.budget.max_iterations(),
        seed: config.seed,
        source: source.describe(),
        rows,
    };
    Ok(LikelihoodBuild { table, traces, records })
}

/// Chi-square homogeneity test of unsolved counts across positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Uniformity {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Tests whether `unsolved[i] / trials[i]` is the same for every `i`
/// (2 × k contingency table).
pub fn uniformity_test(unsolved: &[u64], trials: &[u64]) -> Uniformity {
    let total_u: u64 = unsolved.iter().sum();
    let total_n: u64 = trials.iter().sum();
    let p = total_u as f64 / total_n as f64;
    let mut statistic = 0.0;
    if p > 0.0 && p < 1.0 {
        for (&u, &n) in unsolved.iter().zip(trials) {
            let n = n as f64;
            let (eu, es) = (n * p, n * (1.0 - p));
            let u = u as f64;
            statistic += (u - eu).powi(2) / eu + ((n - u) - es).powi(2) / es;
        }
    }
    let dof = unsolved.len().saturating_sub(1).max(1);
    let p_value = ChiSquared::new(dof as f64).expect("positive dof").sf(statistic);
    Uniformity { statistic, dof, p_value }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    /// Unsolved ratio per coefficient position, both signs pooled.
    pub ratios: Vec<f64>,
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
    /// Trials per position and sign.
    pub trials_per_sign: u64,
    pub uniformity: Uniformity,
    pub uniformity_plus: Uniformity,
    pub uniformity_minus: Uniformity,
}

/// Single ±1 modifications at every position of `samples` covers.
pub fn position_heatmap(
    source: &CoverSource,
    spec: &PipelineSpec,
    budget: SearchBudget,
    samples: usize,
    seed: u64,
) -> Result<Heatmap, StatsError> {
    if samples == 0 {
        return Err(StatsError::NoSamples);
    }
    let n = spec.dims().len();
    // Covers are picked at a seed-dependent offset so that different seeds
    // see different blocks of an infinite source.
    let start = match source.len() {
        Some(_) => 0,
        None => derive_seed(seed, 2) >> 24,
    };
    let covers = collect_covers(source, spec, start, samples)?;
    let jobs: Vec<(usize, usize, i32)> = (0..samples)
        .flat_map(|b| (0..n).flat_map(move |p| [(b, p, 1), (b, p, -1)]))
        .collect();
    let unsolved: Vec<bool> = jobs
        .par_iter()
        .map(|&(b, p, d)| {
            let mut c = covers[b].coefficients.clone();
            c.values_mut()[p] += d;
            Ok(!search_antecedent(&c, spec, budget)?.is_compatible())
        })
        .collect::<Result<_, StatsError>>()?;

    let mut plus = vec![0u64; n];
    let mut minus = vec![0u64; n];
    for (&(_, p, d), &u) in jobs.iter().zip(&unsolved) {
        if u {
            if d > 0 {
                plus[p] += 1
            } else {
                minus[p] += 1
            }
        }
    }
    let s = samples as u64;
    let both: Vec<u64> = plus.iter().zip(&minus).map(|(a, b)| a + b).collect();
    let ratio = |v: &[u64], t: u64| v.iter().map(|&u| u as f64 / t as f64).collect::<Vec<_>>();
    Ok(Heatmap {
        ratios: ratio(&both, 2 * s),
        plus: ratio(&plus, s),
        minus: ratio(&minus, s),
        trials_per_sign: s,
        uniformity: uniformity_test(&both, &vec![2 * s; n]),
        uniformity_plus: uniformity_test(&plus, &vec![s; n]),
        uniformity_minus: uniformity_test(&minus, &vec![s; n]),
    })
}

/// Per-coefficient modification probabilities of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct PMap(Vec<f64>);

impl PMap {
    pub fn new(q: Vec<f64>) -> Result<Self, StatsError> {
        if q.len() != 64 {
            return Err(StatsError::Table(format!("p-map needs 64 values, got {}", q.len())));
        }
        if let Some(&bad) = q.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(StatsError::Probability(bad));
        }
        Ok(PMap(q))
    }

    pub fn uniform(p: f64) -> Result<Self, StatsError> {
        PMap::new(vec![p; 64])
    }

    pub fn q(&self) -> &[f64] {
        &self.0
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }
}

/// One p-map per non-empty, non-comment line, 64 whitespace-separated
/// reals each.
pub fn read_pmaps(text: &str) -> Result<Vec<PMap>, StatsError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let q = l
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| StatsError::Table(format!("p-map line {}: {e}", i + 1)))?;
            PMap::new(q)
        })
        .collect()
}

pub fn write_pmaps(pmaps: &[PMap]) -> String {
    let mut s = String::new();
    for p in pmaps {
        let row: Vec<String> = p.q().iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

/// Per-block counts for LSBM at `payload_bpp`: each of the 64 coefficients
/// changes independently with probability `payload_bpp / 2`.
pub fn simulate_lsbm_counts(n_blocks: usize, payload_bpp: f64, seed: u64) -> Result<Vec<usize>, StatsError> {
    if !(0.0..=1.0).contains(&payload_bpp) {
        return Err(StatsError::Payload(payload_bpp));
    }
    let dist = Binomial::new(64, payload_bpp / 2.0).expect("probability in range");
    Ok((0..n_blocks)
        .map(|i| dist.sample(&mut block_rng(seed, i as u64)) as usize)
        .collect())
}

/// Per-block counts with coefficient `i` of block `b` changing with
/// probability `pmaps[b].q()[i]`.
pub fn simulate_pmap_counts(pmaps: &[PMap], seed: u64) -> Vec<usize> {
    pmaps
        .iter()
        .enumerate()
        .map(|(b, pmap)| {
            let mut rng = block_rng(seed, b as u64);
            pmap.q().iter().filter(|&&q| rng.gen_bool(q)).count()
        })
        .collect()
}

/// `t_i = 1` iff `r_i ≤ P(t = 1 | m_i)` with `r_i` uniform on `(0, 1]`.
pub fn simulate_outcomes(m: &[usize], table: &LikelihoodTable, seed: u64) -> Vec<bool> {
    m.iter()
        .enumerate()
        .map(|(i, &mi)| {
            let r = 1.0 - block_rng(seed, i as u64).gen::<f64>();
            r <= table.p_unsolved(mi)
        })
        .collect()
}
