//! Image-level detection from per-block solved/unsolved outcomes.
//!
//! A block is unsolved with probability `P(t = 1 | m)` read from a
//! likelihood table. Under the cover hypothesis `m = 0`; under the stego
//! hypothesis `m` follows a prior. Blocks are treated as independent, so
//! the log-likelihood ratio is a sum of per-block terms.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::block::QuantizedBlock;
use crate::codec::{decompress, PipelineSpec};
use crate::error::DetectError;
use crate::stats::{block_variance, derive_seed, simulate_lsbm_counts, simulate_outcomes, simulate_pmap_counts, LikelihoodTable, PMap};

/// Number of coefficients per block, hence the largest `m`.
const COEFFS: usize = 64;

/// Distribution of the number of modified coefficients in a stego block.
#[derive(Clone, Debug, PartialEq)]
pub enum Prior {
    /// Uniform on `1..=64`; `P(0) = 0`.
    Uniform,
    /// Sum of 64 independent Bernoulli(q_i).
    PoissonBinomial(PMap),
    /// Arbitrary pmf over `0..=64` (shorter vectors are zero-padded).
    Custom(Vec<f64>),
}

impl Prior {
    pub fn pmf(&self) -> Result<Vec<f64>, DetectError> {
        let pmf = match self {
            Prior::Uniform => {
                let mut p = vec![1.0 / COEFFS as f64; COEFFS + 1];
                p[0] = 0.0;
                p
            }
            Prior::PoissonBinomial(q) => poisson_binomial_pmf(q),
            Prior::Custom(p) => {
                if p.len() > COEFFS + 1 || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(DetectError::Prior("pmf entries must lie in [0, 1], at most 65 of them".into()));
                }
                let mut p = p.clone();
                p.resize(COEFFS + 1, 0.0);
                p
            }
        };
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(DetectError::Prior(format!("pmf sums to {total}")));
        }
        Ok(pmf)
    }

    pub fn id(&self) -> &'static str {
        match self {
            Prior::Uniform => "uniform",
            Prior::PoissonBinomial(_) => "poisson-binomial",
            Prior::Custom(_) => "custom",
        }
    }
}

/// Exact pmf of a sum of independent Bernoulli variables, by
/// convolving one coefficient at a time.
pub fn poisson_binomial_pmf(q: &PMap) -> Vec<f64> {
    bernoulli_sum_pmf(q.q())
}

fn bernoulli_sum_pmf(q: &[f64]) -> Vec<f64> {
    let mut pmf = vec![0.0; q.len() + 1];
    pmf[0] = 1.0;
    for (i, &p) in q.iter().enumerate() {
        for k in (1..=i + 1).rev() {
            pmf[k] = pmf[k] * (1.0 - p) + pmf[k - 1] * p;
        }
        pmf[0] *= 1.0 - p;
    }
    pmf
}

/// Priors for the blocks entering one test.
#[derive(Clone, Copy, Debug)]
pub enum Priors<'a> {
    Shared(&'a Prior),
    PerBlock(&'a [Prior]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionScore {
    /// Finite: table entries are kept away from 0 and 1 (see
    /// [`LikelihoodTable::p_unsolved_guarded`]).
    pub log_lr: f64,
    pub n_blocks_used: usize,
    pub strategy_id: String,
}

/// `(log(a / p0), log((1 - a) / (1 - p0)))` where `p0 = P(t = 1 | 0)` and
/// `a = Σ_m P(t = 1 | m) P(m)`.
fn block_terms(pmf: &[f64], table: &LikelihoodTable) -> (f64, f64) {
    let p0 = table.p_unsolved_guarded(0);
    let a: f64 = pmf.iter().enumerate().map(|(m, &pm)| pm * table.p_unsolved_guarded(m)).sum();
    ((a / p0).ln(), ((1.0 - a) / (1.0 - p0)).ln())
}

pub fn check_pipeline(table: &LikelihoodTable, spec: &PipelineSpec) -> Result<(), DetectError> {
    if table.pipeline_id != spec.id() {
        return Err(DetectError::PipelineMismatch {
            table: table.pipeline_id.clone(),
            analysis: spec.id(),
        });
    }
    Ok(())
}

/// Log-likelihood ratio of stego versus cover for outcomes `t`
/// (`true` = unsolved).
pub fn log_lrt(
    t: &[bool],
    table: &LikelihoodTable,
    spec: &PipelineSpec,
    priors: Priors<'_>,
) -> Result<DetectionScore, DetectError> {
    check_pipeline(table, spec)?;
    log_lrt_unchecked(t, table, priors, "all")
}

fn log_lrt_unchecked(t: &[bool], table: &LikelihoodTable, priors: Priors<'_>, strategy: &str) -> Result<DetectionScore, DetectError> {
    let log_lr = match priors {
        Priors::Shared(prior) => {
            // Count-based, so equal counts give bit-identical scores.
            let (up, down) = block_terms(&prior.pmf()?, table);
            let unsolved = t.iter().filter(|&&t| t).count();
            unsolved as f64 * up + (t.len() - unsolved) as f64 * down
        }
        Priors::PerBlock(ps) => {
            if ps.len() != t.len() {
                return Err(DetectError::PriorCount {
                    outcomes: t.len(),
                    priors: ps.len(),
                });
            }
            let mut sum = 0.0;
            for (&ti, prior) in t.iter().zip(ps) {
                let (up, down) = block_terms(&prior.pmf()?, table);
                sum += if ti { up } else { down };
            }
            sum
        }
    };
    Ok(DetectionScore {
        log_lr,
        n_blocks_used: t.len(),
        strategy_id: strategy.to_string(),
    })
}

/// Probability that at least one block is incompatible:
/// `1 - Π_i (1 - p[m_i])`, with `m_i` beyond the table clamped to its end.
pub fn zero_fa_probability(m: &[usize], p_incompatible: &[f64]) -> Result<f64, DetectError> {
    if p_incompatible.is_empty() {
        return Err(DetectError::Empty);
    }
    if let Some(&bad) = p_incompatible.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(DetectError::Probability(bad));
    }
    let last = p_incompatible.len() - 1;
    let survive: f64 = m.iter().map(|&mi| 1.0 - p_incompatible[mi.min(last)]).product();
    Ok(1.0 - survive)
}

#[derive(Clone, Debug)]
pub enum Strategy<'a> {
    Random { seed: u64 },
    VarianceDescending,
    ScaDescending(&'a [PMap]),
}

impl Strategy<'_> {
    pub fn id(&self) -> &'static str {
        match self {
            Strategy::Random { .. } => "random",
            Strategy::VarianceDescending => "variance",
            Strategy::ScaDescending(_) => "sca",
        }
    }
}

/// Indices sorted by `keys` descending; equal keys keep ascending index.
pub fn rank_descending(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]));
    idx
}

fn take_fraction(mut order: Vec<usize>, fraction: f64) -> Result<Vec<usize>, DetectError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DetectError::Fraction(fraction));
    }
    let n = ((fraction * order.len() as f64).ceil() as usize).clamp(1, order.len());
    order.truncate(n);
    Ok(order)
}

/// The first `ceil(fraction · N)` block indices in strategy order.
pub fn select_blocks(
    blocks: &[QuantizedBlock],
    spec: &PipelineSpec,
    strategy: &Strategy<'_>,
    fraction: f64,
) -> Result<Vec<usize>, DetectError> {
    if blocks.is_empty() {
        return Err(DetectError::Empty);
    }
    let order = match strategy {
        Strategy::Random { seed } => random_order(blocks.len(), *seed),
        Strategy::VarianceDescending => {
            let keys = blocks
                .iter()
                .map(|c| decompress(c, spec).map(|d| block_variance(&d.spatial_error())))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| DetectError::Prior(e.to_string()))?;
            rank_descending(&keys)
        }
        Strategy::ScaDescending(pmaps) => sca_order(pmaps, blocks.len())?,
    };
    take_fraction(order, fraction)
}

fn random_order(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

fn sca_order(pmaps: &[PMap], n: usize) -> Result<Vec<usize>, DetectError> {
    if pmaps.len() != n {
        return Err(DetectError::MissingPmaps {
            needed: n,
            found: pmaps.len(),
        });
    }
    Ok(rank_descending(&pmaps.iter().map(PMap::mean).collect::<Vec<_>>()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub p_fa: f64,
    pub power: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    /// Thresholds from `+inf` down to the smallest score; `p_fa` is
    /// non-decreasing along the curve.
    pub points: Vec<RocPoint>,
    pub p_e: f64,
}

impl RocCurve {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("threshold\tp_fa\tpower\n");
        for p in &self.points {
            let _ = writeln!(s, "{}\t{:.6}\t{:.6}", p.threshold, p.p_fa, p.power);
        }
        s
    }
}

/// Scores at or above the threshold are called stego.
pub fn roc_and_pe(cover_scores: &[f64], stego_scores: &[f64]) -> Result<RocCurve, DetectError> {
    if cover_scores.is_empty() || stego_scores.is_empty() {
        return Err(DetectError::EmptyScores);
    }
    let mut cover = cover_scores.to_vec();
    let mut stego = stego_scores.to_vec();
    cover.sort_by(|a, b| b.total_cmp(a));
    stego.sort_by(|a, b| b.total_cmp(a));
    let mut thresholds: Vec<f64> = cover.iter().chain(&stego).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup_by(|a, b| a.total_cmp(b).is_eq());

    let (nc, ns) = (cover.len() as f64, stego.len() as f64);
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        p_fa: 0.0,
        power: 0.0,
    }];
    let mut p_e = 0.5;
    let (mut ic, mut is) = (0, 0);
    for th in thresholds {
        while ic < cover.len() && cover[ic].total_cmp(&th).is_ge() {
            ic += 1;
        }
        while is < stego.len() && stego[is].total_cmp(&th).is_ge() {
            is += 1;
        }
        let p_fa = ic as f64 / nc;
        let power = is as f64 / ns;
        let p_md = (stego.len() - is) as f64 / ns;
        p_e = f64::min(p_e, (p_fa + p_md) / 2.0);
        points.push(RocPoint { threshold: th, p_fa, power });
    }
    Ok(RocCurve { points, p_e })
}

/// How stego images are simulated.
#[derive(Clone, Debug)]
pub enum Embedding<'a> {
    /// Per-coefficient change probability `payload / 2`, uniform prior.
    Lsbm { payload_bpp: f64 },
    /// Known per-block p-maps (the same for every simulated image),
    /// Poisson-binomial prior per block.
    PMaps(&'a [PMap]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    Random,
    Sca,
}

#[derive(Clone, Debug)]
pub struct SimulationConfig {
    pub images: usize,
    pub blocks_per_image: usize,
    pub selection: Selection,
    pub fraction: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationResult {
    pub cover_scores: Vec<f64>,
    pub stego_scores: Vec<f64>,
    pub roc: RocCurve,
    /// Mean over stego images of the zero-false-alarm detection
    /// probability, using the table's unsolved ratios as `p_m` for `m ≥ 1`
    /// (an upper bound) and `p_0 = 0`.
    pub zero_fa_power: f64,
    pub n_blocks_used: usize,
}

/// Cover and stego populations of simulated outcome vectors, scored with
/// the LRT after block selection. Image `i` draws everything from seeds
/// derived from `(seed, i)`, so results do not depend on thread count.
pub fn simulate_detection(
    table: &LikelihoodTable,
    embedding: &Embedding<'_>,
    config: &SimulationConfig,
) -> Result<SimulationResult, DetectError> {
    let n = match embedding {
        Embedding::Lsbm { payload_bpp } => {
            if !(0.0..=1.0).contains(payload_bpp) {
                return Err(DetectError::Probability(*payload_bpp));
            }
            config.blocks_per_image
        }
        Embedding::PMaps(p) => p.len(),
    };
    if n == 0 || config.images == 0 {
        return Err(DetectError::Empty);
    }
    let priors: Vec<Prior> = match embedding {
        Embedding::Lsbm { .. } => vec![Prior::Uniform],
        Embedding::PMaps(p) => p.iter().cloned().map(Prior::PoissonBinomial).collect(),
    };
    let fixed_order = match (config.selection, embedding) {
        (Selection::Sca, Embedding::PMaps(p)) => Some(sca_order(p, n)?),
        (Selection::Sca, Embedding::Lsbm { .. }) => {
            return Err(DetectError::MissingPmaps { needed: n, found: 0 })
        }
        (Selection::Random, _) => None,
    };
    let strategy = match config.selection {
        Selection::Random => "random",
        Selection::Sca => "sca",
    };
    take_fraction((0..n).collect(), config.fraction)?;
    let mut p_table: Vec<f64> = table.rows.iter().map(|r| r.ratio()).collect();
    p_table[0] = 0.0;

    let per_image = (0..config.images)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(config.seed, i as u64);
            let m = match embedding {
                Embedding::Lsbm { payload_bpp } => simulate_lsbm_counts(n, *payload_bpp, derive_seed(s, 1))
                    .map_err(|e| DetectError::Prior(e.to_string()))?,
                Embedding::PMaps(p) => simulate_pmap_counts(p, derive_seed(s, 1)),
            };
            let t_cover = simulate_outcomes(&vec![0; n], table, derive_seed(s, 2));
            let t_stego = simulate_outcomes(&m, table, derive_seed(s, 3));
            let order = match &fixed_order {
                Some(o) => o.clone(),
                None => random_order(n, derive_seed(s, 4)),
            };
            let chosen = take_fraction(order, config.fraction)?;
            let score = |t: &[bool]| -> Result<DetectionScore, DetectError> {
                let sel: Vec<bool> = chosen.iter().map(|&b| t[b]).collect();
                if priors.len() == 1 {
                    log_lrt_unchecked(&sel, table, Priors::Shared(&priors[0]), strategy)
                } else {
                    let ps: Vec<Prior> = chosen.iter().map(|&b| priors[b].clone()).collect();
                    log_lrt_unchecked(&sel, table, Priors::PerBlock(&ps), strategy)
                }
            };
            let cover = score(&t_cover)?;
            let stego = score(&t_stego)?;
            let zfa = zero_fa_probability(&m, &p_table)?;
            Ok((cover.log_lr, stego.log_lr, zfa, cover.n_blocks_used))
        })
        .collect::<Result<Vec<_>, DetectError>>()?;

    let cover_scores: Vec<f64> = per_image.iter().map(|r| r.0).collect();
    let stego_scores: Vec<f64> = per_image.iter().map(|r| r.1).collect();
    let zero_fa_power = per_image.iter().map(|r| r.2).sum::<f64>() / per_image.len() as f64;
    let roc = roc_and_pe(&cover_scores, &stego_scores)?;
    Ok(SimulationResult {
        cover_scores,
        stego_scores,
        roc,
        zero_fa_power,
        n_blocks_used: per_image[0].3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::{Block, Dims};
    use crate::codec::DctVariant;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    fn spec() -> PipelineSpec {
        PipelineSpec::standard(DctVariant::Naive)
    }

    fn table(ratios: &[f64]) -> LikelihoodTable {
        LikelihoodTable::from_ratios(&spec().id(), 1000, ratios, 1000).unwrap()
    }

    #[test]
    fn pmf_degenerate_cases() {
        let zero = poisson_binomial_pmf(&PMap::uniform(0.0).unwrap());
        assert_eq!(zero[0], 1.0);
        assert!(zero[1..].iter().all(|&p| p == 0.0));
        let one = poisson_binomial_pmf(&PMap::uniform(1.0).unwrap());
        assert_eq!(one[64], 1.0);

        let p: f64 = 0.3;
        let pmf = poisson_binomial_pmf(&PMap::uniform(p).unwrap());
        let mut binom = 1.0f64; // C(64, k)
        for (k, &v) in pmf.iter().enumerate() {
            let want = binom * p.powi(k as i32) * (1.0 - p).powi(64 - k as i32);
            assert!((v - want).abs() < 1e-12, "k={k}");
            binom = binom * (64 - k) as f64 / (k + 1) as f64;
        }
        assert!((pmf[0] - 0.7f64.powi(64)).abs() < 1e-20);
    }

    #[test]
    fn pmf_matches_enumeration() {
        let q = [0.1, 0.5, 0.9, 0.33, 0.0, 1.0, 0.25, 0.7, 0.05, 0.6];
        let mut brute = [0.0; 11];
        for mask in 0u32..1 << q.len() {
            let prob: f64 = q
                .iter()
                .enumerate()
                .map(|(i, &p)| if mask >> i & 1 == 1 { p } else { 1.0 - p })
                .product();
            brute[mask.count_ones() as usize] += prob;
        }
        let pmf = bernoulli_sum_pmf(&q);
        for k in 0..=10 {
            assert!((pmf[k] - brute[k]).abs() < 1e-15, "k={k}");
        }
    }

    proptest! {
        #[test]
        fn pmf_sums_to_one(q in proptest::collection::vec(0.0f64..=1.0, 64)) {
            let pmf = poisson_binomial_pmf(&PMap::new(q).unwrap());
            prop_assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(pmf.iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn lrt_is_additive(a in proptest::collection::vec(any::<bool>(), 0..40),
                           b in proptest::collection::vec(any::<bool>(), 0..40)) {
            let t = table(&[0.01, 0.2, 0.4, 0.5, 0.6, 0.7]);
            let maps: Vec<Prior> = (0..a.len() + b.len())
                .map(|i| Prior::PoissonBinomial(PMap::uniform((i % 7) as f64 / 10.0).unwrap()))
                .collect();
            let whole: Vec<bool> = a.iter().chain(&b).copied().collect();
            let f = |t_: &[bool], ps: &[Prior]| log_lrt(t_, &t, &spec(), Priors::PerBlock(ps)).unwrap().log_lr;
            let split = f(&a, &maps[..a.len()]) + f(&b, &maps[a.len()..]);
            prop_assert!((f(&whole, &maps) - split).abs() < 1e-9);
            let g = |t_: &[bool]| log_lrt(t_, &t, &spec(), Priors::Shared(&Prior::Uniform)).unwrap().log_lr;
            prop_assert!((g(&whole) - (g(&a) + g(&b))).abs() < 1e-9);
        }

        #[test]
        fn zero_fa_is_monotone(m in proptest::collection::vec(0usize..8, 1..20), i in 0usize..20) {
            let p = [0.0, 0.03, 0.08, 0.15, 0.22, 0.3];
            let base = zero_fa_probability(&m, &p).unwrap();
            let mut more = m.clone();
            let i = i % m.len();
            more[i] += 1;
            prop_assert!(zero_fa_probability(&more, &p).unwrap() >= base);
        }

        #[test]
        fn pe_invariant_under_increasing_maps(
            c in proptest::collection::vec(-50.0f64..50.0, 1..30),
            s in proptest::collection::vec(-50.0f64..50.0, 1..30),
        ) {
            let f = |v: &[f64]| v.iter().map(|x| (x / 10.0).exp() * 3.0 + 1.0).collect::<Vec<_>>();
            let a = roc_and_pe(&c, &s).unwrap().p_e;
            let b = roc_and_pe(&f(&c), &f(&s)).unwrap().p_e;
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn flat_table_gives_zero_score() {
        let t = table(&[0.2; 6]);
        for outcome in [vec![true, false, true], vec![false; 5]] {
            let s = log_lrt(&outcome, &t, &spec(), Priors::Shared(&Prior::Uniform)).unwrap();
            assert!(s.log_lr.abs() < 1e-12);
        }
    }

    #[test]
    fn single_block_by_hand() {
        let t = table(&[0.005, 0.03, 0.08, 0.15, 0.22, 0.30]);
        let prior = Prior::Custom(vec![0.0, 0.2, 0.2, 0.2, 0.2, 0.2]);
        let s = log_lrt(&[true], &t, &spec(), Priors::Shared(&prior)).unwrap();
        let want = (0.156f64).ln() - (0.005f64).ln();
        assert!((s.log_lr - want).abs() < 1e-12);
        assert!((s.log_lr - 3.44).abs() < 0.005);
    }

    #[test]
    fn all_solved_favours_cover() {
        let t = table(&[0.01, 0.2, 0.4, 0.5, 0.6, 0.7]);
        let s = log_lrt(&[false; 20], &t, &spec(), Priors::Shared(&Prior::Uniform)).unwrap();
        assert!(s.log_lr < 0.0);
    }

    #[test]
    fn ten_blocks_give_eleven_scores() {
        let t = table(&[0.01, 0.2, 0.4, 0.5, 0.6, 0.7]);
        let mut scores: Vec<f64> = (0u32..1 << 10)
            .map(|mask| {
                let o: Vec<bool> = (0..10).map(|i| mask >> i & 1 == 1).collect();
                log_lrt(&o, &t, &spec(), Priors::Shared(&Prior::Uniform)).unwrap().log_lr
            })
            .collect();
        scores.sort_by(f64::total_cmp);
        scores.dedup();
        assert_eq!(scores.len(), 11);
    }

    #[test]
    fn mismatched_pipeline_is_refused() {
        let t = LikelihoodTable::from_ratios("islow-ls-8x8-q1", 10, &[0.1, 0.2], 10).unwrap();
        assert!(matches!(
            log_lrt(&[true], &t, &spec(), Priors::Shared(&Prior::Uniform)),
            Err(DetectError::PipelineMismatch { .. })
        ));
    }

    #[test]
    fn uniform_prior_shape() {
        let pmf = Prior::Uniform.pmf().unwrap();
        assert_eq!(pmf.len(), 65);
        assert_eq!(pmf[0], 0.0);
        assert!(pmf[1..].iter().all(|&p| p == 1.0 / 64.0));
        assert!(Prior::Custom(vec![0.5, 0.6]).pmf().is_err());
    }

    #[test]
    fn zero_fa_examples() {
        let p = [0.0, 0.03, 0.0, 0.15];
        assert!((zero_fa_probability(&[3, 1], &p).unwrap() - (1.0 - 0.85 * 0.97)).abs() < 1e-12);
        assert_eq!(zero_fa_probability(&[1, 2, 3], &[0.0; 4]).unwrap(), 0.0);
        assert_eq!(zero_fa_probability(&[0, 1], &[0.2, 1.0]).unwrap(), 1.0);
        assert!(zero_fa_probability(&[1], &[0.0, 1.5]).is_err());
    }

    #[test]
    fn roc_examples() {
        assert_eq!(roc_and_pe(&[0.0, 1.0], &[2.0, 3.0]).unwrap().p_e, 0.0);
        assert_eq!(roc_and_pe(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().p_e, 0.5);
        let roc = roc_and_pe(&[0.0, 1.0], &[0.5, 2.0]).unwrap();
        assert_eq!(roc.p_e, 0.25);
        assert_eq!(roc.points.len(), 5);
        assert!(roc.points.windows(2).all(|w| w[0].p_fa <= w[1].p_fa && w[0].power <= w[1].power));
        assert!(roc_and_pe(&[], &[1.0]).is_err());
    }

    fn blocks_with_variances() -> (Vec<QuantizedBlock>, Vec<f64>) {
        let spec = spec();
        let blocks: Vec<QuantizedBlock> = (0..6)
            .map(|i| Block::new(Dims::STANDARD, (0..64).map(|k| ((k * 7 + i * 13) % 9) - 4).collect()).unwrap())
            .collect();
        let v = blocks
            .iter()
            .map(|c| block_variance(&decompress(c, &spec).unwrap().spatial_error()))
            .collect();
        (blocks, v)
    }

    #[test]
    fn selection_orders() {
        let (blocks, v) = blocks_with_variances();
        let s = spec();
        let all = select_blocks(&blocks, &s, &Strategy::VarianceDescending, 1.0).unwrap();
        assert!(all.windows(2).all(|w| v[w[0]] >= v[w[1]]));
        let mut perm = select_blocks(&blocks, &s, &Strategy::Random { seed: 4 }, 1.0).unwrap();
        perm.sort_unstable();
        assert_eq!(perm, (0..6).collect::<Vec<_>>());
        assert_eq!(select_blocks(&blocks, &s, &Strategy::VarianceDescending, 0.5).unwrap().len(), 3);
        assert_eq!(select_blocks(&blocks, &s, &Strategy::VarianceDescending, 0.01).unwrap().len(), 1);

        let maps = vec![PMap::uniform(0.1).unwrap(), PMap::uniform(0.4).unwrap()];
        let two = &blocks[..2];
        assert_eq!(select_blocks(two, &s, &Strategy::ScaDescending(&maps), 0.5).unwrap(), vec![1]);
        assert!(matches!(
            select_blocks(&blocks, &s, &Strategy::ScaDescending(&maps), 0.5),
            Err(DetectError::MissingPmaps { needed: 6, found: 2 })
        ));
        assert!(select_blocks(&[], &s, &Strategy::VarianceDescending, 0.5).is_err());
        assert!(select_blocks(&blocks, &s, &Strategy::VarianceDescending, 0.0).is_err());
    }

    #[test]
    fn ties_keep_index_order() {
        assert_eq!(rank_descending(&[0.06, 0.08, 0.06, 0.08]), vec![1, 3, 0, 2]);
        assert_eq!(rank_descending(&[0.08, 0.06]), vec![0, 1]);
    }

    #[test]
    fn simulation_is_reproducible_and_sane() {
        let t = table(&[0.01, 0.3, 0.5, 0.6, 0.65, 0.7]);
        let config = SimulationConfig {
            images: 200,
            blocks_per_image: 256,
            selection: Selection::Random,
            fraction: 1.0,
            seed: 9,
        };
        let zero = simulate_detection(&t, &Embedding::Lsbm { payload_bpp: 0.0 }, &config).unwrap();
        assert!((zero.roc.p_e - 0.5).abs() < 0.1, "{}", zero.roc.p_e);
        assert_eq!(zero.zero_fa_power, 0.0);
        let a = simulate_detection(&t, &Embedding::Lsbm { payload_bpp: 0.01 }, &config).unwrap();
        assert_eq!(a, simulate_detection(&t, &Embedding::Lsbm { payload_bpp: 0.01 }, &config).unwrap());
        assert!(a.roc.p_e < zero.roc.p_e);
        assert!(a.zero_fa_power > 0.0);

        let maps = vec![PMap::uniform(0.002).unwrap(); 256];
        let sca = SimulationConfig { selection: Selection::Sca, ..config };
        assert!(simulate_detection(&t, &Embedding::PMaps(&maps), &sca).is_ok());
        assert!(simulate_detection(&t, &Embedding::Lsbm { payload_bpp: 0.01 }, &sca).is_err());
    }
}
