//! Block structures, weighted mixed norms and weighted s-term approximations.
//!
//! A vector of length `N` is split into `B` contiguous blocks of sizes `d_1..d_B`.
//! Every block carries a weight `ω_b ≥ 1`; sparsity is measured as the sum of
//! squared weights over the nonzero blocks, and the mixed norm is
//!
//! ```text
//! ‖x‖_{q,p}^{(ω)} = ( Σ_b ω_b^{2-p} ‖x[b]‖_q^p )^{1/p}
//! ```
//!
//! Block indices are zero-based.

use std::collections::BTreeSet;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest block count accepted by [`best_approximation_bruteforce`].
pub const BRUTE_FORCE_MAX_BLOCKS: usize = 20;

/// Partition of `0..N` into contiguous blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct BlockStructure {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockStructure {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Structure("block structure needs at least one block".into()));
        }
        if let Some(b) = sizes.iter().position(|&d| d == 0) {
            return Err(Error::Structure(format!("block {b} has size 0")));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        for &d in &sizes {
            offsets.push(offsets.last().unwrap() + d);
        }
        Ok(Self { sizes, offsets })
    }

    /// `blocks` blocks of equal size `size`.
    pub fn uniform(blocks: usize, size: usize) -> Result<Self> {
        Self::new(vec![size; blocks])
    }

    /// One block per coordinate; the classical (non-block) setting.
    pub fn scalar(n: usize) -> Result<Self> {
        Self::uniform(n, 1)
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    /// Total dimension `N`.
    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn size(&self, b: usize) -> usize {
        self.sizes[b]
    }

    pub fn range(&self, b: usize) -> Range<usize> {
        self.offsets[b]..self.offsets[b + 1]
    }

    pub fn min_size(&self) -> usize {
        *self.sizes.iter().min().unwrap()
    }

    /// The same partition with every block inflated by a factor `k`.
    ///
    /// Row-major vectorization of a matrix with `k` columns whose rows are grouped by
    /// `self` yields exactly this structure.
    pub fn scaled(&self, k: usize) -> Result<Self> {
        Self::new(self.sizes.iter().map(|d| d * k).collect())
    }

    /// Coordinates covered by the blocks in `support`, ascending.
    pub fn expand(&self, support: &BlockSupport) -> Vec<usize> {
        support.iter().flat_map(|b| self.range(b)).collect()
    }
}

impl TryFrom<Vec<usize>> for BlockStructure {
    type Error = Error;
    fn try_from(sizes: Vec<usize>) -> Result<Self> {
        Self::new(sizes)
    }
}

impl From<BlockStructure> for Vec<usize> {
    fn from(s: BlockStructure) -> Self {
        s.sizes
    }
}

/// Block weights `ω_b ≥ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightSequence(Vec<f64>);

impl WeightSequence {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((b, w)) = values
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w >= 1.0))
        {
            return Err(Error::Domain(format!("weight ω[{b}] = {w} must be finite and ≥ 1")));
        }
        Ok(Self(values))
    }

    pub fn ones(blocks: usize) -> Self {
        Self(vec![1.0; blocks])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, b: usize) -> f64 {
        self.0[b]
    }

    /// `‖ω‖_∞²`.
    pub fn max_sq(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, w| m.max(w * w))
    }

    pub fn check_against(&self, structure: &BlockStructure) -> Result<()> {
        if self.len() != structure.num_blocks() {
            return Err(Error::Structure(format!(
                "{} weights for {} blocks",
                self.len(),
                structure.num_blocks()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for WeightSequence {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<WeightSequence> for Vec<f64> {
    fn from(w: WeightSequence) -> Self {
        w.0
    }
}

/// Flat vector together with the block structure it is read through.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    data: Vec<f64>,
    structure: Arc<BlockStructure>,
}

impl BlockVector {
    pub fn new(data: Vec<f64>, structure: Arc<BlockStructure>) -> Result<Self> {
        if data.len() != structure.dim() {
            return Err(Error::Structure(format!(
                "vector of length {} for a structure of dimension {}",
                data.len(),
                structure.dim()
            )));
        }
        Ok(Self { data, structure })
    }

    pub fn zeros(structure: Arc<BlockStructure>) -> Self {
        Self {
            data: vec![0.0; structure.dim()],
            structure,
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn structure(&self) -> &Arc<BlockStructure> {
        &self.structure
    }

    pub fn block(&self, b: usize) -> &[f64] {
        &self.data[self.structure.range(b)]
    }

    /// `‖x[b]‖_q` for every block; `q = ∞` gives the max norm.
    pub fn block_norms(&self, q: f64) -> Vec<f64> {
        (0..self.structure.num_blocks())
            .map(|b| lq_norm(self.block(b), q))
            .collect()
    }

    /// `x[S]`: `x` on the blocks of `support`, zero elsewhere.
    pub fn restrict(&self, support: &BlockSupport) -> BlockVector {
        let mut out = BlockVector::zeros(self.structure.clone());
        for b in support.iter() {
            let r = self.structure.range(b);
            out.data[r.clone()].copy_from_slice(&self.data[r]);
        }
        out
    }

    /// Block support `{b : x[b] ≠ 0}` using exact comparison with zero.
    pub fn block_support(&self) -> BlockSupport {
        BlockSupport(
            (0..self.structure.num_blocks())
                .filter(|&b| self.block(b).iter().any(|&v| v != 0.0))
                .collect(),
        )
    }

    pub fn sub(&self, other: &BlockVector) -> Result<BlockVector> {
        if self.structure != other.structure {
            return Err(Error::Structure("vectors use different block structures".into()));
        }
        Ok(BlockVector {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
            structure: self.structure.clone(),
        })
    }
}

/// Set of block indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockSupport(BTreeSet<usize>);

impl BlockSupport {
    pub fn new(indices: impl IntoIterator<Item = usize>, num_blocks: usize) -> Result<Self> {
        let mut set = BTreeSet::new();
        for b in indices {
            if b >= num_blocks {
                return Err(Error::Structure(format!("block index {b} out of range 0..{num_blocks}")));
            }
            if !set.insert(b) {
                return Err(Error::Structure(format!("duplicate block index {b}")));
            }
        }
        Ok(Self(set))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, b: usize) -> bool {
        self.0.contains(&b)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn is_disjoint(&self, other: &BlockSupport) -> bool {
        self.0.is_disjoint(&other.0)
    }

    /// `ω(S) = Σ_{b∈S} ω_b²`, summed in ascending block order.
    pub fn weighted_cardinality(&self, weights: &WeightSequence) -> f64 {
        weighted_cardinality_of(self.iter(), weights)
    }
}

impl FromIterator<usize> for BlockSupport {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

fn weighted_cardinality_of(indices: impl Iterator<Item = usize>, weights: &WeightSequence) -> f64 {
    indices.map(|b| weights.get(b) * weights.get(b)).sum()
}

pub(crate) fn lq_norm(v: &[f64], q: f64) -> f64 {
    if q == 2.0 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    } else if q == 1.0 {
        v.iter().map(|x| x.abs()).sum()
    } else if q.is_infinite() {
        v.iter().fold(0.0, |m, x| m.max(x.abs()))
    } else {
        v.iter().map(|x| x.abs().powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

fn check_exponents(q: f64, p: f64) -> Result<()> {
    if !(q >= 1.0) {
        return Err(Error::Domain(format!("inner exponent q = {q} must be ≥ 1")));
    }
    if !(p > 0.0) || p.is_infinite() {
        return Err(Error::Domain(format!("outer exponent p = {p} must be finite and > 0")));
    }
    Ok(())
}

/// Per-block terms `ω_b^{2-p} ‖x[b]‖_q^p`.
fn norm_terms(x: &BlockVector, weights: &WeightSequence, q: f64, p: f64) -> Vec<f64> {
    x.block_norms(q)
        .iter()
        .zip(weights.values())
        .map(|(n, w)| w.powf(2.0 - p) * n.powf(p))
        .collect()
}

/// Mixed norm of the blocks not in `keep`. Every norm in this module goes through
/// here so that competing approximations are compared bit-for-bit consistently.
fn residual_norm(terms: &[f64], keep: impl Fn(usize) -> bool, p: f64) -> f64 {
    let sum: f64 = terms
        .iter()
        .enumerate()
        .filter(|(b, _)| !keep(*b))
        .map(|(_, t)| *t)
        .sum();
    sum.powf(1.0 / p)
}

/// `‖x‖_{q,p}^{(ω)} = (Σ_b ω_b^{2-p} ‖x[b]‖_q^p)^{1/p}`.
pub fn weighted_block_norm(x: &BlockVector, weights: &WeightSequence, q: f64, p: f64) -> Result<f64> {
    weights.check_against(x.structure())?;
    check_exponents(q, p)?;
    Ok(residual_norm(&norm_terms(x, weights, q, p), |_| false, p))
}

/// `‖x‖_0^{(ω)} = Σ_{b : x[b] ≠ 0} ω_b²`.
pub fn weighted_sparsity(x: &BlockVector, weights: &WeightSequence) -> Result<f64> {
    weights.check_against(x.structure())?;
    Ok(x.block_support().weighted_cardinality(weights))
}

/// Blocks ordered by non-increasing `‖x[b]‖₂ / ω_b`, ties broken by block index.
pub fn weighted_rearrangement(x: &BlockVector, weights: &WeightSequence) -> Vec<usize> {
    let ratios: Vec<f64> = x
        .block_norms(2.0)
        .iter()
        .zip(weights.values())
        .map(|(n, w)| n / w)
        .collect();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| ratios[b].total_cmp(&ratios[a]));
    order
}

/// Quasi-best weighted s-term approximation.
///
/// Walks the weighted rearrangement and keeps the longest prefix whose weighted
/// cardinality stays within `s`. Zero blocks are never kept.
pub fn quasi_best_approximation(
    x: &BlockVector,
    weights: &WeightSequence,
    s: f64,
) -> Result<(BlockSupport, BlockVector)> {
    weights.check_against(x.structure())?;
    if !(s >= weights.max_sq()) {
        return Err(Error::Domain(format!(
            "sparsity s = {s} below ‖ω‖_∞² = {}",
            weights.max_sq()
        )));
    }
    let support = quasi_best_support(x, weights, s);
    let approx = x.restrict(&support);
    Ok((support, approx))
}

fn quasi_best_support(x: &BlockVector, weights: &WeightSequence, s: f64) -> BlockSupport {
    let norms = x.block_norms(2.0);
    let mut kept = BTreeSet::new();
    for b in weighted_rearrangement(x, weights) {
        if norms[b] == 0.0 {
            break;
        }
        kept.insert(b);
        if weighted_cardinality_of(kept.iter().copied(), weights) > s {
            kept.remove(&b);
            break;
        }
    }
    BlockSupport(kept)
}

/// `σ̃_s(x)_{q,p}^{(ω)} = ‖x − x̃[S]‖_{q,p}^{(ω)}` for the quasi-best support `S`.
pub fn quasi_best_error(x: &BlockVector, weights: &WeightSequence, s: f64, q: f64, p: f64) -> Result<f64> {
    let (support, _) = quasi_best_approximation(x, weights, s)?;
    check_exponents(q, p)?;
    Ok(residual_norm(&norm_terms(x, weights, q, p), |b| support.contains(b), p))
}

/// Exact `σ_s(x)_{q,p}^{(ω)}` by enumerating every block subset of weighted
/// cardinality at most `s`. Desk-scale oracle, refused above
/// [`BRUTE_FORCE_MAX_BLOCKS`] blocks.
pub fn best_approximation_bruteforce(
    x: &BlockVector,
    weights: &WeightSequence,
    s: f64,
    q: f64,
    p: f64,
) -> Result<f64> {
    Ok(best_support_bruteforce(x, weights, s, q, p)?.1)
}

/// Like [`best_approximation_bruteforce`] but also returns a minimizing support.
pub fn best_support_bruteforce(
    x: &BlockVector,
    weights: &WeightSequence,
    s: f64,
    q: f64,
    p: f64,
) -> Result<(BlockSupport, f64)> {
    weights.check_against(x.structure())?;
    check_exponents(q, p)?;
    let nb = x.structure().num_blocks();
    if nb > BRUTE_FORCE_MAX_BLOCKS {
        return Err(Error::Guard {
            what: "blocks for brute-force best approximation",
            count: nb as u64,
            limit: BRUTE_FORCE_MAX_BLOCKS as u64,
        });
    }
    let terms = norm_terms(x, weights, q, p);
    let mut best = (0u32, residual_norm(&terms, |_| false, p));
    for mask in 1u32..(1u32 << nb) {
        let members = (0..nb).filter(|b| mask & (1 << b) != 0);
        if weighted_cardinality_of(members, weights) > s {
            continue;
        }
        let err = residual_norm(&terms, |b| mask & (1 << b) != 0, p);
        if err < best.1 {
            best = (mask, err);
        }
    }
    let support = (0..nb).filter(|b| best.0 & (1 << b) != 0).collect();
    Ok((support, best.1))
}

/// Weighted Stechkin bound `(s − ‖ω‖_∞²)^{1/p − 1/q} ‖x‖_{2,q}^{(ω)}`, valid for
/// `q < p ≤ 2` and `s > ‖ω‖_∞²`; it dominates `σ̃_s(x)_{2,p}^{(ω)}`.
pub fn stechkin_bound(x: &BlockVector, weights: &WeightSequence, s: f64, p: f64, q: f64) -> Result<f64> {
    weights.check_against(x.structure())?;
    if !(q > 0.0 && q < p && p <= 2.0) {
        return Err(Error::Domain(format!("need 0 < q < p ≤ 2, got q = {q}, p = {p}")));
    }
    let gap = s - weights.max_sq();
    if !(gap > 0.0) {
        return Err(Error::Domain(format!(
            "Stechkin bound degenerates: s = {s} ≤ ‖ω‖_∞² = {}",
            weights.max_sq()
        )));
    }
    let terms = norm_terms(x, weights, 2.0, q);
    let norm = residual_norm(&terms, |_| false, q);
    Ok(gap.powf(1.0 / p - 1.0 / q) * norm)
}
