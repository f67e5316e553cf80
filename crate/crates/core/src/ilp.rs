//! Incompatibility as an integer feasibility problem.
//!
//! Write the unknown antecedent as `x = x_ref - k` with `x_ref` the rounded
//! decompression. Because the Naive transform is linear and orthonormal,
//! `x` recompresses to the target exactly when every coefficient of
//! `A (k - e)` lies within half a quantization step, where
//! `e = x_ref - y` is the spatial rounding error. Searching integer `k`
//! under those `2n` two-sided constraints decides compatibility.
//!
//! The reference is taken *before* clipping, so clipped targets get a
//! model too: `e` stays within ±0.5 and the pixel range becomes a bound on
//! `k` instead.

use std::fmt::Write as _;

use crate::block::{Block, PixelBlock, QuantTable, QuantizedBlock};
use crate::codec::{compress, decompress, DctVariant, PipelineSpec};
use crate::dct::DctBasis;
use crate::error::IlpError;

/// Slack allowed on every constraint, in quantized units.
pub const TOLERANCE: f64 = 1e-9;

const POCS_ROUNDS: usize = 60;
const PROPAGATION_PASSES: usize = 16;

#[derive(Clone, Debug)]
pub struct FeasibilityModel {
    spec: PipelineSpec,
    target: QuantizedBlock,
    /// Rounded, unclipped decompression.
    reference: Vec<i32>,
    /// `reference - y`.
    e: Vec<f64>,
    /// Row-major `n × n`, rows indexed by coefficient.
    dct_matrix: Vec<f64>,
    /// Per-coefficient bounds on `(A k)_i`: `d_i ∓ Q_i/2` with `d = A e`.
    row_lo: Vec<f64>,
    row_hi: Vec<f64>,
    /// Bounds on `k` from the pixel range and the rounding box.
    k_lo: Vec<i32>,
    k_hi: Vec<i32>,
}

impl FeasibilityModel {
    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }

    pub fn e(&self) -> &[f64] {
        &self.e
    }

    pub fn reference(&self) -> &[i32] {
        &self.reference
    }

    pub fn dct_matrix(&self) -> &[f64] {
        &self.dct_matrix
    }

    pub fn quant(&self) -> &QuantTable {
        self.spec.quant()
    }

    pub fn bound(&self) -> f64 {
        0.5
    }

    pub fn target(&self) -> &QuantizedBlock {
        &self.target
    }

    /// Variable bounds `(lo, hi)` before any branching.
    pub fn k_bounds(&self) -> (&[i32], &[i32]) {
        (&self.k_lo, &self.k_hi)
    }

    /// `max |A Aᵀ - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.len();
        let a = &self.dct_matrix;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|p| a[i * n + p] * a[j * n + p]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
        worst
    }

    /// Scaled constraint values `(A (k - e))_i / Q_i`.
    pub fn scaled_residuals(&self, k: &[i32]) -> Vec<f64> {
        let n = self.len();
        let diff: Vec<f64> = k.iter().zip(&self.e).map(|(&k, &e)| f64::from(k) - e).collect();
        (0..n)
            .map(|i| {
                let row = &self.dct_matrix[i * n..(i + 1) * n];
                let v: f64 = row.iter().zip(&diff).map(|(a, d)| a * d).sum();
                v / f64::from(self.quant().steps()[i])
            })
            .collect()
    }

    /// Smallest slack `0.5 - |r_i|` over all constraints.
    pub fn min_slack(&self, k: &[i32]) -> f64 {
        self.scaled_residuals(k)
            .iter()
            .map(|r| self.bound() - r.abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// `x_ref - k`, or `None` outside the pixel range.
    pub fn antecedent(&self, k: &[i32]) -> Option<PixelBlock> {
        let pixels = self
            .reference
            .iter()
            .zip(k)
            .map(|(&r, &k)| u8::try_from(r - k).ok())
            .collect::<Option<Vec<u8>>>()?;
        Some(Block::new(self.target.dims(), pixels).expect("model dims"))
    }

    fn certify(&self, k: &[i32]) -> Option<PixelBlock> {
        if self.min_slack(k) < -TOLERANCE {
            return None;
        }
        let x = self.antecedent(k)?;
        (compress(&x, &self.spec).ok()? == self.target).then_some(x)
    }
}

pub fn build_model(target: &QuantizedBlock, spec: &PipelineSpec) -> Result<FeasibilityModel, IlpError> {
    if spec.variant() != DctVariant::Naive {
        return Err(IlpError::UnsupportedVariant);
    }
    let dec = decompress(target, spec)?;
    let n = target.len();
    let reference = dec.unclipped.values().to_vec();
    let e: Vec<f64> = reference.iter().zip(dec.y.values()).map(|(&r, &y)| f64::from(r) - y).collect();
    let a = DctBasis::get(target.dims()).matrix().to_vec();
    let q: Vec<f64> = spec.quant().steps().iter().map(|&q| f64::from(q)).collect();

    let mut row_lo = Vec::with_capacity(n);
    let mut row_hi = Vec::with_capacity(n);
    for i in 0..n {
        let d: f64 = (0..n).map(|p| a[i * n + p] * e[p]).sum();
        let half = q[i] * (0.5 + TOLERANCE);
        row_lo.push(d - half);
        row_hi.push(d + half);
    }

    // k - e = Aᵀ (Q u) with |u| ≤ 1/2 bounds each k_p by the column sums.
    let mut k_lo = Vec::with_capacity(n);
    let mut k_hi = Vec::with_capacity(n);
    for p in 0..n {
        let b: f64 = 0.5 * (0..n).map(|i| a[i * n + p].abs() * q[i]).sum::<f64>() + TOLERANCE;
        let lo = (e[p] - b).ceil() as i32;
        let hi = (e[p] + b).floor() as i32;
        k_lo.push(lo.max(reference[p] - 255));
        k_hi.push(hi.min(reference[p]));
    }

    Ok(FeasibilityModel {
        spec: spec.clone(),
        target: target.clone(),
        reference,
        e,
        dct_matrix: a,
        row_lo,
        row_hi,
        k_lo,
        k_hi,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum FeasibilityOutcome {
    Feasible { k: Vec<i32>, antecedent: PixelBlock },
    /// Every branch was pruned by a certified argument.
    Infeasible { nodes_explored: u64 },
    /// `best_bound` is the smallest relaxation gap (Euclidean distance
    /// between the variable box and the constraint set) among the open
    /// nodes; zero means some open node still has a fractional solution.
    BudgetExceeded { nodes_explored: u64, best_bound: f64 },
}

impl FeasibilityOutcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self, FeasibilityOutcome::Feasible { .. })
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, FeasibilityOutcome::Infeasible { .. })
    }
}

struct Node {
    lo: Vec<i32>,
    hi: Vec<i32>,
    /// Relaxation gap of the parent.
    gap: f64,
}

enum Relaxation {
    /// Certified empty.
    Empty,
    /// Approximate closest point in the variable box, and its distance to
    /// the constraint set.
    Point(Vec<f64>, f64),
}

struct Solver<'a> {
    m: &'a FeasibilityModel,
    n: usize,
}

impl Solver<'_> {
    fn row(&self, i: usize) -> &[f64] {
        &self.m.dct_matrix[i * self.n..(i + 1) * self.n]
    }

    /// Tightens the box against each constraint row in turn. Returns false
    /// when some row cannot be met.
    fn propagate(&self, lo: &mut [i32], hi: &mut [i32]) -> bool {
        for _ in 0..PROPAGATION_PASSES {
            let mut changed = false;
            for i in 0..self.n {
                let row = self.row(i);
                let (mut smin, mut smax) = (0.0, 0.0);
                for p in 0..self.n {
                    let (a, b) = (row[p] * f64::from(lo[p]), row[p] * f64::from(hi[p]));
                    smin += a.min(b);
                    smax += a.max(b);
                }
                let (rlo, rhi) = (self.m.row_lo[i], self.m.row_hi[i]);
                if smin > rhi + TOLERANCE || smax < rlo - TOLERANCE {
                    return false;
                }
                for p in 0..self.n {
                    let a = row[p];
                    if a.abs() < 1e-12 || lo[p] == hi[p] {
                        continue;
                    }
                    let (x, y) = (a * f64::from(lo[p]), a * f64::from(hi[p]));
                    let rest_min = smin - x.min(y);
                    let rest_max = smax - x.max(y);
                    let (vlo, vhi) = ((rlo - rest_max) / a, (rhi - rest_min) / a);
                    let (vlo, vhi) = if a > 0.0 { (vlo, vhi) } else { (vhi, vlo) };
                    let nlo = (vlo - TOLERANCE).ceil();
                    let nhi = (vhi + TOLERANCE).floor();
                    if nlo > f64::from(lo[p]) {
                        lo[p] = nlo as i32;
                        changed = true;
                    }
                    if nhi < f64::from(hi[p]) {
                        hi[p] = nhi as i32;
                        changed = true;
                    }
                    if lo[p] > hi[p] {
                        return false;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        true
    }

    fn project_constraints(&self, k: &[f64]) -> Vec<f64> {
        let n = self.n;
        let z: Vec<f64> = (0..n)
            .map(|i| {
                let v: f64 = self.row(i).iter().zip(k).map(|(a, k)| a * k).sum();
                v.clamp(self.m.row_lo[i], self.m.row_hi[i])
            })
            .collect();
        (0..n)
            .map(|p| (0..n).map(|i| self.m.dct_matrix[i * n + p] * z[i]).sum())
            .collect()
    }

    /// Alternating projections between the box and the rotated constraint
    /// box. When they stay apart, the gap direction is tested as a
    /// separating hyperplane; only a strict separation prunes.
    fn relax(&self, lo: &[i32], hi: &[i32]) -> Relaxation {
        let n = self.n;
        let clamp = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .enumerate()
                .map(|(p, &x)| x.clamp(f64::from(lo[p]), f64::from(hi[p])))
                .collect()
        };
        let mut a = clamp(&self.m.e);
        let mut gap = f64::INFINITY;
        for _ in 0..POCS_ROUNDS {
            let b = self.project_constraints(&a);
            let next = clamp(&b);
            gap = b.iter().zip(&next).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            a = next;
            if gap < 1e-7 {
                return Relaxation::Point(a, gap);
            }
        }
        let b = self.project_constraints(&a);
        let v: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        // min over the box of v·x versus max over the constraint set of v·x
        let box_min: f64 = (0..n)
            .map(|p| (v[p] * f64::from(lo[p])).min(v[p] * f64::from(hi[p])))
            .sum();
        let set_max: f64 = (0..n)
            .map(|i| {
                let w: f64 = self.row(i).iter().zip(&v).map(|(a, v)| a * v).sum();
                (w * self.m.row_lo[i]).max(w * self.m.row_hi[i])
            })
            .sum();
        let scale = v.iter().map(|x| x.abs()).sum::<f64>() * 256.0;
        if box_min > set_max + 1e-9 * scale.max(1.0) {
            Relaxation::Empty
        } else {
            Relaxation::Point(a, gap)
        }
    }

    fn solve(&self, node_budget: u64) -> FeasibilityOutcome {
        let mut stack = vec![Node {
            lo: self.m.k_lo.clone(),
            hi: self.m.k_hi.clone(),
            gap: 0.0,
        }];
        let mut nodes = 0u64;
        while let Some(Node { mut lo, mut hi, gap }) = stack.pop() {
            if nodes == node_budget {
                stack.push(Node { lo, hi, gap });
                let best_bound = stack.iter().map(|n| n.gap).fold(f64::INFINITY, f64::min);
                return FeasibilityOutcome::BudgetExceeded {
                    nodes_explored: nodes,
                    best_bound,
                };
            }
            nodes += 1;
            if lo.iter().zip(&hi).any(|(l, h)| l > h) || !self.propagate(&mut lo, &mut hi) {
                continue;
            }
            if lo == hi {
                if let Some(antecedent) = self.m.certify(&lo) {
                    return FeasibilityOutcome::Feasible { k: lo, antecedent };
                }
                continue;
            }
            let (point, gap) = match self.relax(&lo, &hi) {
                Relaxation::Empty => continue,
                Relaxation::Point(p, g) => (p, g),
            };
            let rounded: Vec<i32> = point
                .iter()
                .enumerate()
                .map(|(p, &x)| (x.round() as i32).clamp(lo[p], hi[p]))
                .collect();
            if let Some(antecedent) = self.m.certify(&rounded) {
                return FeasibilityOutcome::Feasible { k: rounded, antecedent };
            }

            // Most fractional free variable; widest range when the point is
            // integral.
            let free = (0..self.n).filter(|&p| lo[p] < hi[p]);
            let frac = |p: usize| {
                let f = point[p] - point[p].floor();
                f.min(1.0 - f)
            };
            let pick = free
                .max_by(|&a, &b| {
                    frac(a)
                        .total_cmp(&frac(b))
                        .then((hi[a] - lo[a]).cmp(&(hi[b] - lo[b])))
                        .then(b.cmp(&a))
                })
                .expect("some variable is free");
            let split = if frac(pick) > 1e-9 {
                point[pick].floor() as i32
            } else {
                lo[pick] + (hi[pick] - lo[pick]) / 2
            }
            .clamp(lo[pick], hi[pick] - 1);

            let mut down_hi = hi.clone();
            down_hi[pick] = split;
            let mut up_lo = lo.clone();
            up_lo[pick] = split + 1;
            let down = Node { lo: lo.clone(), hi: down_hi, gap };
            let up = Node { lo: up_lo, hi, gap };
            // Explore the side nearer the relaxation point first.
            if point[pick] - f64::from(split) > 0.5 {
                stack.push(down);
                stack.push(up);
            } else {
                stack.push(up);
                stack.push(down);
            }
        }
        FeasibilityOutcome::Infeasible { nodes_explored: nodes }
    }
}

pub fn solve_feasibility(model: &FeasibilityModel, node_budget: u64) -> Result<FeasibilityOutcome, IlpError> {
    if node_budget == 0 {
        return Err(IlpError::ZeroBudget);
    }
    Ok(Solver { m: model, n: model.len() }.solve(node_budget))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelFormat {
    LpText,
}

/// CPLEX LP text with integer variables `k_p`, rows `lo_i`/`hi_i` holding
/// the two sides of `|(A (k - e))_i / Q_i| ≤ 1/2`, and the variable box.
/// Numbers use shortest round-trip formatting.
pub fn export_model(model: &FeasibilityModel, format: ModelFormat) -> Vec<u8> {
    let ModelFormat::LpText = format;
    let n = model.len();
    let mut out = String::new();
    let _ = writeln!(out, "\\ block feasibility model, pipeline {}", model.spec.id());
    let _ = writeln!(out, "Minimize\n obj: 0 k_0\nSubject To");
    for i in 0..n {
        let q = f64::from(model.quant().steps()[i]);
        let mut lhs = String::new();
        for p in 0..n {
            let c = model.dct_matrix[i * n + p] / q;
            if c == 0.0 {
                continue;
            }
            let sign = if c < 0.0 { '-' } else { '+' };
            let _ = write!(lhs, " {sign} {} k_{p}", c.abs());
        }
        let d: f64 = (0..n).map(|p| model.dct_matrix[i * n + p] * model.e[p]).sum::<f64>() / q;
        let _ = writeln!(out, " lo_{i}:{lhs} >= {}", d - 0.5);
        let _ = writeln!(out, " hi_{i}:{lhs} <= {}", d + 0.5);
    }
    let _ = writeln!(out, "Bounds");
    for p in 0..n {
        let _ = writeln!(out, " {} <= k_{p} <= {}", model.k_lo[p], model.k_hi[p]);
    }
    let _ = writeln!(out, "General");
    let names: Vec<String> = (0..n).map(|p| format!("k_{p}")).collect();
    let _ = writeln!(out, " {}\nEnd", names.join(" "));
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::Dims;
    use crate::codec::toy_enumerate;

    fn toy(a: i32, b: i32) -> QuantizedBlock {
        Block::new(Dims::TOY, vec![a, b]).unwrap()
    }

    #[test]
    fn zero_block_is_feasible_at_the_origin() {
        let spec = PipelineSpec::standard(DctVariant::Naive);
        let model = build_model(&Block::filled(Dims::STANDARD, 0).unwrap(), &spec).unwrap();
        assert!(model.e().iter().all(|&e| e == 0.0));
        assert!(model.orthonormality_error() < 1e-9);
        assert!(model.min_slack(&[0; 64]) >= 0.5 - 1e-12);
        match solve_feasibility(&model, 1).unwrap() {
            FeasibilityOutcome::Feasible { k, antecedent } => {
                assert_eq!(k, vec![0; 64]);
                assert!(antecedent.values().iter().all(|&x| x == 128));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn islow_and_zero_budget_are_rejected() {
        let spec = PipelineSpec::standard(DctVariant::Islow);
        let c = Block::filled(Dims::STANDARD, 0).unwrap();
        assert_eq!(build_model(&c, &spec).unwrap_err(), IlpError::UnsupportedVariant);
        let model = build_model(&c, &PipelineSpec::standard(DctVariant::Naive)).unwrap();
        assert_eq!(solve_feasibility(&model, 0).unwrap_err(), IlpError::ZeroBudget);
    }

    #[test]
    fn toy_constraints_by_hand() {
        let spec = PipelineSpec::toy([1, 1]).unwrap();
        let model = build_model(&toy(181, -180), &spec).unwrap();
        // y = IDCT(181, -180) = (1/√2, 361/√2) = (0.7071, 255.2655)
        let s = 2f64.sqrt();
        let y = [1.0 / s, 361.0 / s];
        assert_eq!(model.reference(), &[1, 255]);
        assert!((model.e()[0] - (1.0 - y[0])).abs() < 1e-12);
        assert!((model.e()[1] - (255.0 - y[1])).abs() < 1e-12);
        // k = 0: A(-e) = (181, -180) - forward(1, 255)
        let r = model.scaled_residuals(&[0, 0]);
        assert!((r[0] - (181.0 - 256.0 / s)).abs() < 1e-9);
        assert!((r[1] - (-180.0 + 254.0 / s)).abs() < 1e-9);
        assert!((r[0] + 0.019).abs() < 1e-3 && (r[1] + 0.395).abs() < 1e-3);
        // k = 1 moves pixel 0 to 0: forward(0, 255) - c has |r_0| = 0.688
        let r = model.scaled_residuals(&[1, 0]);
        assert!((r[0].abs() - 0.688).abs() < 1e-3);
        assert!(model.min_slack(&[1, 0]) < 0.0);
        assert!(solve_feasibility(&model, 10).unwrap().is_feasible());
    }

    #[test]
    fn toy_verdicts_match_enumeration() {
        let spec = PipelineSpec::toy([1, 1]).unwrap();
        let atlas = toy_enumerate(&spec).unwrap();
        for c in atlas.box_blocks().step_by(37) {
            let model = build_model(&c, &spec).unwrap();
            let out = solve_feasibility(&model, 10_000).unwrap();
            assert_eq!(out.is_feasible(), atlas.is_compatible(&c), "{:?}: {out:?}", c.values());
            assert!(out.is_feasible() || out.is_infeasible());
            if let FeasibilityOutcome::Feasible { k, antecedent } = out {
                assert_eq!(compress(&antecedent, &spec).unwrap(), c);
                assert!(model.min_slack(&k) >= -TOLERANCE);
            }
        }
    }

    #[test]
    fn coarse_toy_tables_agree_too() {
        for steps in [[3, 2], [7, 5]] {
            let spec = PipelineSpec::toy(steps).unwrap();
            let atlas = toy_enumerate(&spec).unwrap();
            for c in atlas.box_blocks().step_by(5) {
                let out = solve_feasibility(&build_model(&c, &spec).unwrap(), 10_000).unwrap();
                assert_eq!(out.is_feasible(), atlas.is_compatible(&c), "{steps:?} {:?}", c.values());
            }
        }
    }

    #[test]
    fn export_structure() {
        let spec = PipelineSpec::toy([1, 1]).unwrap();
        let text = String::from_utf8(export_model(&build_model(&toy(3, 1), &spec).unwrap(), ModelFormat::LpText)).unwrap();
        assert_eq!(text.matches(" lo_").count(), 2);
        assert_eq!(text.matches(" hi_").count(), 2);
        assert!(text.contains("General\n k_0 k_1\nEnd"));
    }
}
