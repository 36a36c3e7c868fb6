//! Multi-indices, tensorized Chebyshev polynomials and the active index set.
//!
//! Dimensions are one-based (`j ≥ 1`), matching the persisted text format where a
//! multi-index is written as sorted `j:ν_j` pairs. Parameter vectors are ordinary
//! zero-based slices, so `y[j - 1]` is the coordinate of dimension `j`.

use std::cmp::Ordering;
use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::block_model::WeightSequence;
use crate::error::{Error, Result};

/// Finitely supported multi-index. Only strictly positive entries are stored.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    entries: Vec<(usize, u32)>,
}

impl MultiIndex {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Builds from `(dimension, degree)` pairs; zero degrees are dropped.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, u32)>) -> Result<Self> {
        let mut entries: Vec<(usize, u32)> = pairs.into_iter().filter(|&(_, k)| k > 0).collect();
        entries.sort_unstable();
        if let Some(&(j, _)) = entries.iter().find(|(j, _)| *j == 0) {
            return Err(Error::Domain(format!("dimension index {j} must be ≥ 1")));
        }
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Structure("repeated dimension in multi-index".into()));
        }
        Ok(Self { entries })
    }

    /// From a dense vector `(ν_1, ν_2, ...)`.
    pub fn from_dense(nu: &[u32]) -> Self {
        Self {
            entries: nu
                .iter()
                .enumerate()
                .filter(|(_, &k)| k > 0)
                .map(|(i, &k)| (i + 1, k))
                .collect(),
        }
    }

    /// Unit multi-index `e_j` scaled by `k`.
    pub fn unit(j: usize, k: u32) -> Self {
        Self::from_pairs([(j, k)]).expect("valid unit index")
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// `‖ν‖₀`, the support size.
    pub fn support_size(&self) -> usize {
        self.entries.len()
    }

    pub fn degree(&self, j: usize) -> u32 {
        self.entries
            .binary_search_by_key(&j, |&(d, _)| d)
            .map(|i| self.entries[i].1)
            .unwrap_or(0)
    }

    /// Total degree `|ν| = Σ ν_j`.
    pub fn total_degree(&self) -> u32 {
        self.entries.iter().map(|&(_, k)| k).sum()
    }

    pub fn max_dimension(&self) -> usize {
        self.entries.last().map_or(0, |&(j, _)| j)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.entries.iter().copied()
    }

    /// Coordinatewise `self ≤ other`.
    pub fn le(&self, other: &MultiIndex) -> bool {
        self.entries.iter().all(|&(j, k)| other.degree(j) >= k)
    }

    /// All multi-indices obtained by lowering one coordinate by one.
    pub fn predecessors(&self) -> impl Iterator<Item = MultiIndex> + '_ {
        self.entries.iter().map(move |&(j, k)| {
            let mut nu = self.clone();
            let pos = nu.entries.iter().position(|&(d, _)| d == j).unwrap();
            if k == 1 {
                nu.entries.remove(pos);
            } else {
                nu.entries[pos].1 = k - 1;
            }
            nu
        })
    }
}

/// Lexicographic order on the dense representation `(ν_1, ν_2, ...)`.
impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        let mut a = self.entries.iter().peekable();
        let mut b = other.entries.iter().peekable();
        loop {
            match (a.peek(), b.peek()) {
                (None, None) => return Ordering::Equal,
                (Some(_), None) => return Ordering::Greater,
                (None, Some(_)) => return Ordering::Less,
                (Some(&&(ja, ka)), Some(&&(jb, kb))) => {
                    // The side whose next nonzero sits at an earlier dimension is larger there.
                    match ja.cmp(&jb) {
                        Ordering::Less => return Ordering::Greater,
                        Ordering::Greater => return Ordering::Less,
                        Ordering::Equal => match ka.cmp(&kb) {
                            Ordering::Equal => {
                                a.next();
                                b.next();
                            }
                            ord => return ord,
                        },
                    }
                }
            }
        }
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.entries.is_empty() {
            return f.write_str("0");
        }
        for (i, (j, k)) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{j}:{k}")?;
        }
        Ok(())
    }
}

impl FromStr for MultiIndex {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let line = line.trim();
        if line == "0" {
            return Ok(Self::zero());
        }
        let pairs = line
            .split_whitespace()
            .map(|tok| {
                let (j, k) = tok
                    .split_once(':')
                    .ok_or_else(|| Error::Parse(format!("expected `j:k`, got `{tok}`")))?;
                let j: usize = j.parse().map_err(|_| Error::Parse(format!("bad dimension `{j}`")))?;
                let k: u32 = k.parse().map_err(|_| Error::Parse(format!("bad degree `{k}`")))?;
                if k == 0 {
                    return Err(Error::Parse(format!("zero degree stored in `{tok}`")));
                }
                Ok((j, k))
            })
            .collect::<Result<Vec<_>>>()?;
        if pairs.is_empty() {
            return Err(Error::Parse("empty multi-index line".into()));
        }
        if pairs.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Parse(format!("pairs not sorted by dimension: `{line}`")));
        }
        Self::from_pairs(pairs)
    }
}

/// Coordinate weights `v_j`, one per parameter dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum WeightRule {
    /// `v_j = β` for `j ≤ d` and `v_j = ∞` beyond; `d = None` means no cutoff.
    Constant { beta: f64, d: Option<usize> },
    /// `v_j = c·j^α`.
    Polynomial { c: f64, alpha: f64 },
    /// Explicit `v_1, v_2, ...`; `v_j = ∞` past the end.
    Sequence { values: Vec<f64> },
}

impl WeightRule {
    pub fn constant(beta: f64, d: usize) -> Result<Self> {
        let r = WeightRule::Constant { beta, d: Some(d) };
        r.validate()?;
        Ok(r)
    }

    pub fn polynomial(c: f64, alpha: f64) -> Result<Self> {
        let r = WeightRule::Polynomial { c, alpha };
        r.validate()?;
        Ok(r)
    }

    pub fn sequence(values: Vec<f64>) -> Result<Self> {
        let r = WeightRule::Sequence { values };
        r.validate()?;
        Ok(r)
    }

    /// The rule `v ≡ 1`, used for plain (unweighted) summability checks.
    pub fn unit() -> Self {
        WeightRule::Constant { beta: 1.0, d: None }
    }

    /// All `v_j ≥ 1`. Unit weights are accepted here; enumeration refuses them when
    /// they would admit infinitely many indices.
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            WeightRule::Constant { beta, .. } => *beta >= 1.0 && beta.is_finite(),
            WeightRule::Polynomial { c, alpha } => *c >= 1.0 && *alpha >= 0.0 && c.is_finite() && alpha.is_finite(),
            WeightRule::Sequence { values } => values.iter().all(|v| *v >= 1.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("weight rule {self:?} needs every v_j ≥ 1")))
        }
    }

    /// `v_j` for one-based `j`; `+∞` marks a dimension that can never be active.
    pub fn value(&self, j: usize) -> f64 {
        debug_assert!(j >= 1);
        match self {
            WeightRule::Constant { beta, d } => match d {
                Some(d) if j > *d => f64::INFINITY,
                _ => *beta,
            },
            WeightRule::Polynomial { c, alpha } => c * (j as f64).powf(*alpha),
            WeightRule::Sequence { values } => values.get(j - 1).copied().unwrap_or(f64::INFINITY),
        }
    }

    /// Last dimension with a finite weight, if the rule has one.
    pub fn finite_horizon(&self) -> Option<usize> {
        match self {
            WeightRule::Constant { d, .. } => *d,
            WeightRule::Polynomial { .. } => None,
            WeightRule::Sequence { values } => Some(values.len()),
        }
    }
}

/// `T_j(t) = √2 cos(j arccos t)` for `j ≥ 1`, `T_0 ≡ 1`.
pub fn chebyshev_eval(j: u32, t: f64) -> Result<f64> {
    if !(t.abs() <= 1.0) {
        return Err(Error::Domain(format!("Chebyshev argument {t} outside [-1, 1]")));
    }
    if j == 0 {
        return Ok(1.0);
    }
    Ok(SQRT_2 * (f64::from(j) * t.acos()).cos())
}

/// `T_ν(y) = Π_{j ∈ supp ν} T_{ν_j}(y_j)`.
pub fn tensor_chebyshev_eval(nu: &MultiIndex, y: &[f64]) -> Result<f64> {
    let mut prod = 1.0;
    for (j, k) in nu.iter() {
        let t = *y.get(j - 1).ok_or_else(|| {
            Error::Structure(format!("parameter vector of length {} lacks dimension {j}", y.len()))
        })?;
        prod *= chebyshev_eval(k, t)?;
    }
    Ok(prod)
}

/// `ω_ν = 2^{‖ν‖₀/2} Π_{j ∈ supp ν} v_j^{ν_j}`; `+∞` when some `v_j` on the support is infinite.
pub fn omega_weight(nu: &MultiIndex, rule: &WeightRule) -> f64 {
    let mut w = 2f64.powf(nu.support_size() as f64 / 2.0);
    for (j, k) in nu.iter() {
        w *= rule.value(j).powi(k as i32);
    }
    w
}

/// Sorted, downward closed set of multi-indices `Λ = {ν : ω_ν² ≤ s/2, supp ν ⊆ 1..τ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSet {
    members: Vec<MultiIndex>,
    tau: usize,
    s: f64,
}

impl IndexSet {
    /// Wraps an explicit list; members are sorted and deduplicated.
    pub fn from_members(mut members: Vec<MultiIndex>, tau: usize, s: f64) -> Result<Self> {
        members.sort();
        members.dedup();
        if let Some(nu) = members.iter().find(|nu| nu.max_dimension() > tau) {
            return Err(Error::Structure(format!("multi-index {nu} exceeds dimension bound {tau}")));
        }
        Ok(Self { members, tau, s })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[MultiIndex] {
        &self.members
    }

    pub fn iter(&self) -> impl Iterator<Item = &MultiIndex> {
        self.members.iter()
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn sparsity(&self) -> f64 {
        self.s
    }

    pub fn position(&self, nu: &MultiIndex) -> Option<usize> {
        self.members.binary_search(nu).ok()
    }

    pub fn contains(&self, nu: &MultiIndex) -> bool {
        self.position(nu).is_some()
    }

    pub fn is_downward_closed(&self) -> bool {
        self.members
            .iter()
            .all(|nu| nu.predecessors().all(|mu| self.contains(&mu)))
    }

    /// Block weights `ω_ν` in member order.
    pub fn weights(&self, rule: &WeightRule) -> Result<WeightSequence> {
        WeightSequence::new(self.members.iter().map(|nu| omega_weight(nu, rule)).collect())
    }

    /// One line per member; comment lines start with `#`.
    pub fn to_text(&self) -> String {
        let mut out = format!("# tau={} s={}\n", self.tau, self.s);
        for nu in &self.members {
            out.push_str(&nu.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tau = None;
        let mut s = f64::NAN;
        let mut members = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                for tok in comment.split_whitespace() {
                    if let Some(v) = tok.strip_prefix("tau=") {
                        tau = Some(v.parse().map_err(|_| Error::Parse(format!("bad tau `{v}`")))?);
                    } else if let Some(v) = tok.strip_prefix("s=") {
                        s = v.parse().map_err(|_| Error::Parse(format!("bad s `{v}`")))?;
                    }
                }
                continue;
            }
            members.push(line.parse::<MultiIndex>()?);
        }
        let tau = tau.unwrap_or_else(|| members.iter().map(MultiIndex::max_dimension).max().unwrap_or(0));
        Self::from_members(members, tau, s)
    }
}

/// Relative slack in the membership test `ω_ν² ≤ s/2`, so that indices sitting
/// exactly on the boundary (such as `β = √2`) are not lost to rounding.
pub const LAMBDA_RTOL: f64 = 1e-12;

/// Enumerates `Λ = {ν : ω_ν² ≤ s/2}` over dimensions `1..=τ`.
///
/// Depth-first over dimensions; each branch stops as soon as `ω²` exceeds `s/2`,
/// which is sound because every `v_j ≥ 1` makes `ω` monotone in each coordinate.
pub fn enumerate_lambda(rule: &WeightRule, s: f64, tau: usize) -> Result<IndexSet> {
    rule.validate()?;
    if !(s >= 2.0) {
        return Err(Error::Domain(format!("sparsity s = {s} must be ≥ 2 so that ν = 0 qualifies")));
    }
    if tau == 0 {
        return Err(Error::Domain("dimension bound τ must be ≥ 1".into()));
    }
    let limit = s / 2.0 * (1.0 + LAMBDA_RTOL);
    let mut members = Vec::new();
    let mut current = Vec::new();
    walk(rule, limit, 1, tau, 1.0, &mut current, &mut members)?;
    IndexSet::from_members(members, tau, s)
}

fn walk(
    rule: &WeightRule,
    limit: f64,
    j: usize,
    tau: usize,
    omega_sq: f64,
    current: &mut Vec<(usize, u32)>,
    out: &mut Vec<MultiIndex>,
) -> Result<()> {
    if j > tau {
        out.push(MultiIndex {
            entries: current.clone(),
        });
        return Ok(());
    }
    walk(rule, limit, j + 1, tau, omega_sq, current, out)?;
    let v = rule.value(j);
    let v_sq = v * v;
    // entering the support costs a factor 2, every degree a factor v_j²
    let mut w = omega_sq * 2.0 * v_sq;
    let mut k = 1u32;
    while w <= limit {
        if v_sq <= 1.0 {
            return Err(Error::Domain(format!(
                "weight v_{j} = {v} admits unbounded degrees below ω² ≤ {limit}; index set would be infinite"
            )));
        }
        current.push((j, k));
        walk(rule, limit, j + 1, tau, w, current, out)?;
        current.pop();
        w *= v_sq;
        k += 1;
    }
    Ok(())
}

/// Constants of the polynomial-weight cardinality bound `N ≤ C s^{γ ln s}`.
///
/// The defaults were calibrated by enumerating `Λ` over `c ∈ {1.1, 1.25, 1.5, 2, 3}`,
/// `α ∈ {0.5, 1, 1.5, 2, 3}` and `s ∈ [2, 4096]` and taking the smallest pair that
/// dominates every grid point (see the `polynomial_bound_dominates_grid` test).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolynomialBoundConstants {
    pub c: f64,
    pub gamma: f64,
}

impl Default for PolynomialBoundConstants {
    fn default() -> Self {
        Self { c: 2.2, gamma: 0.2 }
    }
}

/// Closed-form upper bound on `|Λ|`.
///
/// Constant weights `β` on `d` dimensions:
///
/// ```text
/// (log_{β²}(β² s/2))^d                           if d ≤ log_{2β²}(s/2)
/// ((1 + 1/log₂ β²) e d)^{log_{2β²}(s/2)}         otherwise
/// ```
///
/// Polynomial weights use `C s^{γ ln s}` with the given constants. Explicit
/// sequences get the box bound `Π_j (1 + k_j)` where `k_j` is the largest degree
/// admissible in dimension `j` alone.
pub fn cardinality_bound(rule: &WeightRule, s: f64, poly: PolynomialBoundConstants) -> f64 {
    match rule {
        WeightRule::Constant { beta, d } => {
            let Some(d) = d else {
                return f64::INFINITY;
            };
            let b2 = beta * beta;
            if b2 <= 1.0 {
                return f64::INFINITY;
            }
            let d = *d as f64;
            let half = s / 2.0;
            let e_star = half.ln() / (2.0 * b2).ln();
            if d <= e_star {
                ((b2 * half).ln() / b2.ln()).powf(d)
            } else {
                ((1.0 + 1.0 / b2.log2()) * std::f64::consts::E * d).powf(e_star)
            }
        }
        WeightRule::Polynomial { .. } => poly.c * s.powf(poly.gamma * s.ln()),
        WeightRule::Sequence { values } => {
            let half = s / 2.0;
            values
                .iter()
                .map(|v| {
                    let v2 = v * v;
                    if 2.0 * v2 > half {
                        1.0
                    } else if v2 <= 1.0 {
                        f64::INFINITY
                    } else {
                        // 2 v² ^k ≤ s/2
                        1.0 + ((half / 2.0).ln() / v2.ln()).floor()
                    }
                })
                .product()
        }
    }
}

/// `m` i.i.d. draws from the tensorized arcsine measure on `[-1, 1]^τ`.
///
/// Each coordinate is `cos(πU)` with `U` uniform, so the stream is reproducible
/// for a fixed seed.
pub fn sample_measure(m: usize, tau: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_measure_with(&mut rng, m, tau)
}

pub fn sample_measure_with<R: Rng>(rng: &mut R, m: usize, tau: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| (0..tau).map(|_| (PI * rng.random::<f64>()).cos()).collect())
        .collect()
}

/// Gauss–Chebyshev nodes for the normalized arcsine measure; every weight is `1/n`.
/// Exact for polynomials of degree up to `2n − 1`.
pub fn gauss_chebyshev_nodes(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|k| ((2 * k - 1) as f64 * PI / (2 * n) as f64).cos())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cheb_recurrence(j: u32, t: f64) -> f64 {
        // classical T_j via three-term recurrence, then normalized
        if j == 0 {
            return 1.0;
        }
        let (mut a, mut b) = (1.0, t);
        for _ in 1..j {
            let c = 2.0 * t * b - a;
            a = b;
            b = c;
        }
        SQRT_2 * b
    }

    #[test]
    fn chebyshev_examples() {
        assert_eq!(chebyshev_eval(0, 0.3).unwrap(), 1.0);
        assert!((chebyshev_eval(1, 1.0).unwrap() - SQRT_2).abs() < 1e-15);
        let v = chebyshev_eval(2, 0.0).unwrap();
        assert!((v + SQRT_2).abs() < 1e-15);
        assert!((v - cheb_recurrence(2, 0.0)).abs() < 1e-15);
        assert!(matches!(chebyshev_eval(1, 1.5), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn chebyshev_matches_recurrence(j in 0u32..12, t in -1.0f64..=1.0) {
            let a = chebyshev_eval(j, t).unwrap();
            prop_assert!((a - cheb_recurrence(j, t)).abs() < 1e-11);
            prop_assert!(a.abs() <= SQRT_2 + 1e-15);
        }

        #[test]
        fn text_roundtrip(dense in prop::collection::vec(0u32..4, 0..6)) {
            let nu = MultiIndex::from_dense(&dense);
            let back: MultiIndex = nu.to_string().parse().unwrap();
            prop_assert_eq!(back, nu);
        }
    }

    #[test]
    fn tensor_examples() {
        assert_eq!(tensor_chebyshev_eval(&MultiIndex::zero(), &[0.2, -0.7]).unwrap(), 1.0);
        assert!((tensor_chebyshev_eval(&MultiIndex::unit(1, 1), &[1.0]).unwrap() - SQRT_2).abs() < 1e-15);
        let nu = MultiIndex::from_dense(&[1, 2]);
        assert!((tensor_chebyshev_eval(&nu, &[1.0, 0.0]).unwrap() + 2.0).abs() < 1e-14);
        assert!(matches!(
            tensor_chebyshev_eval(&MultiIndex::unit(3, 1), &[0.0, 0.0]),
            Err(Error::Structure(_))
        ));
    }

    #[test]
    fn omega_examples() {
        let v = WeightRule::sequence(vec![1.5, 2.0]).unwrap();
        assert_eq!(omega_weight(&MultiIndex::zero(), &v), 1.0);
        assert!((omega_weight(&MultiIndex::unit(1, 1), &v) - SQRT_2 * 1.5).abs() < 1e-14);
        assert!((omega_weight(&MultiIndex::from_dense(&[2, 1]), &v) - 9.0).abs() < 1e-12);
        assert!(omega_weight(&MultiIndex::unit(3, 1), &v).is_infinite());
    }

    #[test]
    fn lambda_example() {
        let v = WeightRule::sequence(vec![1.5, 2.0]).unwrap();
        let lam = enumerate_lambda(&v, 16.0, 2).unwrap();
        let want = [
            MultiIndex::zero(),
            MultiIndex::from_dense(&[0, 1]),
            MultiIndex::from_dense(&[1, 0]),
        ];
        assert_eq!(lam.members(), &want[..]);
        assert_eq!(enumerate_lambda(&v, 2.0, 2).unwrap().len(), 1);
    }

    #[test]
    fn lambda_matches_exhaustive_box() {
        let rules = [
            WeightRule::polynomial(1.2, 1.0).unwrap(),
            WeightRule::constant(1.3, 3).unwrap(),
            WeightRule::sequence(vec![1.1, 1.4, 2.5]).unwrap(),
        ];
        for rule in &rules {
            for &s in &[2.0, 5.0, 16.0, 40.0, 90.0] {
                let lam = enumerate_lambda(rule, s, 3).unwrap();
                let mut brute = Vec::new();
                for a in 0..30u32 {
                    for b in 0..30u32 {
                        for c in 0..30u32 {
                            let nu = MultiIndex::from_dense(&[a, b, c]);
                            let w = omega_weight(&nu, rule);
                            if w * w <= s / 2.0 * (1.0 + LAMBDA_RTOL) {
                                brute.push(nu);
                            }
                        }
                    }
                }
                brute.sort();
                assert_eq!(lam.members(), &brute[..], "rule {rule:?} s {s}");
                assert!(lam.is_downward_closed());
            }
        }
    }

    #[test]
    fn lambda_refuses_unit_weights() {
        assert!(matches!(
            enumerate_lambda(&WeightRule::unit(), 8.0, 2),
            Err(Error::Domain(_))
        ));
        // below s = 4 no dimension can enter, so unit weights are harmless
        assert_eq!(enumerate_lambda(&WeightRule::unit(), 3.0, 2).unwrap().len(), 1);
        assert!(enumerate_lambda(&WeightRule::polynomial(1.2, 1.0).unwrap(), 1.0, 2).is_err());
    }

    #[test]
    fn ordering_is_dense_lexicographic() {
        let mut v = [
            MultiIndex::from_dense(&[1, 0]),
            MultiIndex::from_dense(&[0, 2]),
            MultiIndex::zero(),
            MultiIndex::from_dense(&[0, 1]),
            MultiIndex::from_dense(&[1, 1]),
        ];
        v.sort();
        let dense: Vec<String> = v.iter().map(|m| m.to_string()).collect();
        assert_eq!(dense, vec!["0", "2:1", "2:2", "1:1", "1:1 2:1"]);
    }

    #[test]
    fn text_format() {
        let v = WeightRule::sequence(vec![1.5, 2.0]).unwrap();
        let lam = enumerate_lambda(&v, 16.0, 2).unwrap();
        let text = lam.to_text();
        assert_eq!(text, "# tau=2 s=16\n0\n2:1\n1:1\n");
        assert_eq!(IndexSet::from_text(&text).unwrap(), lam);
        assert!(IndexSet::from_text("2:1 1:1\n").is_err());
        assert!(IndexSet::from_text("1:0\n").is_err());
    }

    #[test]
    fn cardinality_bound_constant_example() {
        let rule = WeightRule::constant(SQRT_2, 2).unwrap();
        let lam = enumerate_lambda(&rule, 16.0, 2).unwrap();
        assert_eq!(lam.len(), 5);
        let bound = cardinality_bound(&rule, 16.0, Default::default());
        // d = 2 > log_4(8) = 1.5, second branch: (4e)^{1.5}
        let want = (4.0 * std::f64::consts::E).powf(1.5);
        assert!((bound - want).abs() < 1e-10);
        assert!(bound >= lam.len() as f64);
        assert!(cardinality_bound(&rule, 2.0, Default::default()) >= 1.0);
    }

    #[test]
    fn box_bound_for_sequences() {
        let rule = WeightRule::sequence(vec![1.2, 1.5, 3.0]).unwrap();
        for &s in &[2.0, 8.0, 30.0, 200.0] {
            let n = enumerate_lambda(&rule, s, 3).unwrap().len() as f64;
            assert!(n <= cardinality_bound(&rule, s, Default::default()));
        }
    }

    #[test]
    fn polynomial_bound_dominates_grid() {
        let consts = PolynomialBoundConstants::default();
        for &c in &[1.1, 1.25, 1.5, 2.0, 3.0] {
            for &alpha in &[0.5, 1.0, 1.5, 2.0, 3.0] {
                let rule = WeightRule::polynomial(c, alpha).unwrap();
                let mut s = 2.0;
                while s <= 4096.0 {
                    // dimensions with 2 v_j² > s/2 can never enter
                    let tau = ((s / (4.0 * c * c)).powf(1.0 / (2.0 * alpha))).floor().max(1.0) as usize;
                    let n = enumerate_lambda(&rule, s, tau).unwrap().len() as f64;
                    let bound = cardinality_bound(&rule, s, consts);
                    assert!(n <= bound, "c {c} α {alpha} s {s}: N {n} > {bound}");
                    s *= 2.0;
                }
            }
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let a = sample_measure(50, 3, 9);
        assert_eq!(a, sample_measure(50, 3, 9));
        assert_ne!(a, sample_measure(50, 3, 10));
        assert!(a.iter().flatten().all(|t| t.abs() <= 1.0));
    }

    #[test]
    fn sampled_moments_match_measure() {
        let m = 100_000;
        let ys = sample_measure(m, 1, 2024);
        let t1: Vec<f64> = ys.iter().map(|y| chebyshev_eval(1, y[0]).unwrap()).collect();
        let mean = t1.iter().sum::<f64>() / m as f64;
        let second = t1.iter().map(|v| v * v).sum::<f64>() / m as f64;
        let tol = 3.0 / (m as f64).sqrt() * SQRT_2;
        assert!(mean.abs() <= 3e-2 && mean.abs() <= tol.max(3e-2));
        assert!((second - 1.0).abs() <= 3e-2);
    }

    #[test]
    fn quadrature_orthonormality_1d() {
        let nodes = gauss_chebyshev_nodes(10);
        for i in 0..8u32 {
            for j in 0..8u32 {
                let g: f64 = nodes
                    .iter()
                    .map(|&t| chebyshev_eval(i, t).unwrap() * chebyshev_eval(j, t).unwrap())
                    .sum::<f64>()
                    / nodes.len() as f64;
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-13, "{i} {j} {g}");
            }
        }
    }
}
