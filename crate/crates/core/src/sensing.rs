//! Sampling matrices and exhaustive restricted-isometry estimates.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block_model::{BlockStructure, BlockSupport, BlockVector, WeightSequence};
use crate::error::{Error, Result};
use crate::multiindex::{tensor_chebyshev_eval, IndexSet};
use crate::Matrix;

/// Largest number of supports [`empirical_wbrip`] will enumerate.
pub const SUPPORT_GUARD: u64 = 1_000_000;

/// Above this many entries `A ⊗ I_d` is never formed explicitly.
pub const KRONECKER_ENTRY_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    OrthonormalSystem,
    Gaussian,
    Rademacher,
    Uniform,
    /// Loaded from a file or built by hand.
    External,
}

/// Sub-Gaussian ensembles with unit-variance entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    Gaussian,
    Rademacher,
    Uniform,
}

impl From<Ensemble> for Provenance {
    fn from(e: Ensemble) -> Self {
        match e {
            Ensemble::Gaussian => Provenance::Gaussian,
            Ensemble::Rademacher => Provenance::Rademacher,
            Ensemble::Uniform => Provenance::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    entries: Matrix,
    normalized: bool,
    provenance: Provenance,
}

impl SensingMatrix {
    pub fn new(entries: Matrix, normalized: bool, provenance: Provenance) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::Structure("sensing matrix must be at least 1×1".into()));
        }
        Ok(Self {
            entries,
            normalized,
            provenance,
        })
    }

    /// Wraps a matrix from outside the crate, treated as already normalized.
    pub fn external(entries: Matrix) -> Result<Self> {
        Self::new(entries, true, Provenance::External)
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn into_entries(self) -> Matrix {
        self.entries
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Applies the `1/√m` factor if it is not there yet.
    pub fn normalized(mut self) -> Self {
        if !self.normalized {
            self.entries /= (self.rows() as f64).sqrt();
            self.normalized = true;
        }
        self
    }

    /// `A ⊗ I_d`: block `b` of the result holds columns `b·d .. b·d + d`, matching the
    /// row-major vectorization of an `N × d` coefficient matrix.
    pub fn kron_identity(&self, d: usize) -> SensingMatrix {
        SensingMatrix {
            entries: self.entries.kronecker(&Matrix::identity(d, d)),
            normalized: self.normalized,
            provenance: self.provenance,
        }
    }
}

/// `A_{i,ν} = T_ν(y⁽ⁱ⁾)`, optionally divided by `√m`. Columns follow member order of `Λ`.
pub fn build_sampling_matrix(lambda: &IndexSet, samples: &[Vec<f64>], normalize: bool) -> Result<SensingMatrix> {
    if samples.is_empty() || lambda.is_empty() {
        return Err(Error::Structure("need at least one sample and one multi-index".into()));
    }
    if let Some(y) = samples.iter().find(|y| y.len() < lambda.tau()) {
        return Err(Error::Structure(format!(
            "sample of length {} does not cover dimensions 1..{}",
            y.len(),
            lambda.tau()
        )));
    }
    let m = samples.len();
    let mut a = Matrix::zeros(m, lambda.len());
    for (i, y) in samples.iter().enumerate() {
        for (k, nu) in lambda.iter().enumerate() {
            a[(i, k)] = tensor_chebyshev_eval(nu, y)?;
        }
    }
    let a = SensingMatrix::new(a, false, Provenance::OrthonormalSystem)?;
    Ok(if normalize { a.normalized() } else { a })
}

/// i.i.d. unit-variance entries divided by `√m`, filled row by row from a ChaCha8 stream.
pub fn random_matrix(kind: Ensemble, m: usize, n: usize, seed: u64) -> Result<SensingMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_matrix_with(&mut rng, kind, m, n)
}

pub fn random_matrix_with<R: Rng>(rng: &mut R, kind: Ensemble, m: usize, n: usize) -> Result<SensingMatrix> {
    if m == 0 || n == 0 {
        return Err(Error::Structure("random matrix needs m, N ≥ 1".into()));
    }
    let scale = 1.0 / (m as f64).sqrt();
    let sqrt3 = 3f64.sqrt();
    let mut a = Matrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let v: f64 = match kind {
                Ensemble::Gaussian => rng.sample(StandardNormal),
                Ensemble::Rademacher => {
                    if rng.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                }
                Ensemble::Uniform => rng.random_range(-sqrt3..sqrt3),
            };
            a[(i, j)] = v * scale;
        }
    }
    SensingMatrix::new(a, true, kind.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RipEstimate {
    pub delta: f64,
    pub s: f64,
    pub supports_checked: u64,
    pub worst_support: BlockSupport,
}

/// Every nonempty `S` with `ω(S) ≤ s`, each listed in ascending order.
fn admissible_supports(weights: &WeightSequence, s: f64) -> Result<Vec<Vec<usize>>> {
    let sq: Vec<f64> = weights.values().iter().map(|w| w * w).collect();
    let mut count = 0u64;
    count_supports(&sq, s, 0, 0.0, &mut count);
    if count > SUPPORT_GUARD {
        return Err(Error::Guard {
            what: "admissible supports",
            count,
            limit: SUPPORT_GUARD,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut current = Vec::new();
    collect_supports(&sq, s, 0, 0.0, &mut current, &mut out);
    Ok(out)
}

fn count_supports(sq: &[f64], s: f64, start: usize, used: f64, count: &mut u64) {
    for b in start..sq.len() {
        if *count > SUPPORT_GUARD {
            return;
        }
        let w = used + sq[b];
        if w <= s {
            *count += 1;
            count_supports(sq, s, b + 1, w, count);
        }
    }
}

fn collect_supports(sq: &[f64], s: f64, start: usize, used: f64, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    for b in start..sq.len() {
        let w = used + sq[b];
        if w <= s {
            current.push(b);
            out.push(current.clone());
            collect_supports(sq, s, b + 1, w, current, out);
            current.pop();
        }
    }
}

/// `max(λ_max − 1, 1 − λ_min)` of the Gram restricted to `cols`.
fn restricted_delta(gram: &Matrix, cols: &[usize], rows: usize) -> f64 {
    let k = cols.len();
    let sub = Matrix::from_fn(k, k, |i, j| gram[(cols[i], cols[j])]);
    let eig = SymmetricEigen::new(sub).eigenvalues;
    let lmax = eig.max();
    // more columns than rows: the restriction has a nontrivial kernel
    let lmin = if k > rows { 0.0 } else { eig.min() };
    (lmax - 1.0).max(1.0 - lmin)
}

/// Exact WBRIP constant over all supports with `ω(S) ≤ s`.
///
/// Each support contributes the extreme eigenvalues of `A_Sᵀ A_S`, with blocks
/// expanded to their columns. Supports are processed in parallel; ties in `δ`
/// resolve to the support enumerated first, so the result does not depend on
/// the thread count.
pub fn empirical_wbrip(a: &SensingMatrix, structure: &BlockStructure, weights: &WeightSequence, s: f64) -> Result<RipEstimate> {
    if structure.dim() != a.cols() {
        return Err(Error::Structure(format!(
            "structure covers {} columns, matrix has {}",
            structure.dim(),
            a.cols()
        )));
    }
    weights.check_against(structure)?;
    let supports = admissible_supports(weights, s)?;
    let a = a.entries();
    let gram = a.transpose() * a;
    let rows = a.nrows();
    let best = supports
        .par_iter()
        .enumerate()
        .map(|(i, sup)| {
            let cols: Vec<usize> = sup.iter().flat_map(|&b| structure.range(b)).collect();
            (restricted_delta(&gram, &cols, rows), i)
        })
        .reduce(
            || (f64::NEG_INFINITY, usize::MAX),
            |x, y| {
                if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) {
                    y
                } else {
                    x
                }
            },
        );
    let (delta, worst_support) = if supports.is_empty() {
        (0.0, BlockSupport::default())
    } else {
        (best.0, supports[best.1].iter().copied().collect())
    };
    Ok(RipEstimate {
        delta,
        s,
        supports_checked: supports.len() as u64,
        worst_support,
    })
}

/// `(δ of A with scalar weighted supports, δ of A ⊗ I_d with blocks of size d)`.
///
/// `weights` has one entry per column of `A`. The Kronecker product is formed
/// only when it stays below [`KRONECKER_ENTRY_LIMIT`] entries; otherwise the
/// Gram `AᵀA ⊗ I_d` restricted to each support has the same spectrum as the
/// scalar restriction, repeated `d` times, which is what is evaluated instead.
pub fn tensor_rip_equivalence(a: &SensingMatrix, d: usize, weights: &WeightSequence, s: f64) -> Result<(f64, f64)> {
    if d == 0 {
        return Err(Error::Domain("replication factor d must be ≥ 1".into()));
    }
    let n = a.cols();
    let scalar = empirical_wbrip(a, &BlockStructure::scalar(n)?, weights, s)?;
    let block = if a.rows() * d * n * d <= KRONECKER_ENTRY_LIMIT {
        let big = a.kron_identity(d);
        empirical_wbrip(&big, &BlockStructure::uniform(n, d)?, weights, s)?.delta
    } else {
        replicated_block_delta(a, d, weights, s)?
    };
    Ok((scalar.delta, block))
}

fn replicated_block_delta(a: &SensingMatrix, d: usize, weights: &WeightSequence, s: f64) -> Result<f64> {
    let supports = admissible_supports(weights, s)?;
    let m = a.entries();
    let gram = m.transpose() * m;
    let rows = a.rows() * d;
    Ok(supports
        .par_iter()
        .map(|sup| {
            // the spectrum of G_S ⊗ I_d equals that of G_S, except that the kernel
            // count compares k·d columns against m·d rows
            let k = sup.len();
            let sub = Matrix::from_fn(k, k, |i, j| gram[(sup[i], sup[j])]);
            let eig = SymmetricEigen::new(sub).eigenvalues;
            let lmin = if k * d > rows { 0.0 } else { eig.min() };
            (eig.max() - 1.0).max(1.0 - lmin)
        })
        .reduce(|| 0.0, f64::max))
}

/// `|⟨Au, Av⟩| / (‖u‖₂‖v‖₂)` for block-disjoint `u` and `v`.
pub fn pair_coherence(a: &SensingMatrix, u: &BlockVector, v: &BlockVector) -> Result<f64> {
    if u.structure() != v.structure() || u.structure().dim() != a.cols() {
        return Err(Error::Structure("u, v and A must share one block structure".into()));
    }
    let (su, sv) = (u.block_support(), v.block_support());
    if !su.is_disjoint(&sv) {
        return Err(Error::Domain("u and v must have disjoint block supports".into()));
    }
    let au = a.entries() * nalgebra::DVector::from_column_slice(u.data());
    let av = a.entries() * nalgebra::DVector::from_column_slice(v.data());
    let nu = u.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok(au.dot(&av).abs() / (nu * nv))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceCheck {
    pub worst_ratio: f64,
    pub delta_s_plus_t: f64,
    pub trials: usize,
}

impl CoherenceCheck {
    pub fn holds(&self, slack: f64) -> bool {
        self.worst_ratio <= self.delta_s_plus_t + slack
    }
}

/// Random pairs with `ω(supp u) ≤ s`, `ω(supp v) ≤ t`, disjoint supports and
/// Gaussian block entries, compared against the exhaustive `δ_{s+t}`.
#[allow(clippy::too_many_arguments)]
pub fn disjoint_coherence_check(
    a: &SensingMatrix,
    structure: &BlockStructure,
    weights: &WeightSequence,
    s: f64,
    t: f64,
    trials: usize,
    seed: u64,
) -> Result<CoherenceCheck> {
    let max_sq = weights.max_sq();
    if structure.num_blocks() < 2 {
        return Err(Error::Structure("need at least two blocks for disjoint pairs".into()));
    }
    if s < max_sq || t < max_sq {
        return Err(Error::Domain(format!("budgets s = {s}, t = {t} must be ≥ ‖ω‖∞² = {max_sq}")));
    }
    let delta = empirical_wbrip(a, structure, weights, s + t)?.delta;
    let structure = std::sync::Arc::new(structure.clone());
    let nb = structure.num_blocks();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let mut order: Vec<usize> = (0..nb).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
        // the first two blocks seed both supports; the rest join u, v or neither
        let (mut su, mut sv) = (vec![order[0]], vec![order[1]]);
        let (mut wu, mut wv) = (weights.get(order[0]).powi(2), weights.get(order[1]).powi(2));
        for &b in &order[2..] {
            let w2 = weights.get(b).powi(2);
            match rng.random_range(0..3) {
                0 if wu + w2 <= s => {
                    su.push(b);
                    wu += w2;
                }
                1 if wv + w2 <= t => {
                    sv.push(b);
                    wv += w2;
                }
                _ => {}
            }
        }
        let mut u = vec![0.0; structure.dim()];
        let mut v = vec![0.0; structure.dim()];
        for &b in &su {
            for i in structure.range(b) {
                u[i] = rng.sample(StandardNormal);
            }
        }
        for &b in &sv {
            for i in structure.range(b) {
                v[i] = rng.sample(StandardNormal);
            }
        }
        let u = BlockVector::new(u, structure.clone())?;
        let v = BlockVector::new(v, structure.clone())?;
        worst = worst.max(pair_coherence(a, &u, &v)?);
    }
    Ok(CoherenceCheck {
        worst_ratio: worst,
        delta_s_plus_t: delta,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiindex::{sample_measure, MultiIndex};
    use std::f64::consts::SQRT_2;
    use std::sync::Arc;

    fn gaussian(m: usize, n: usize, seed: u64) -> SensingMatrix {
        random_matrix(Ensemble::Gaussian, m, n, seed).unwrap()
    }

    #[test]
    fn sampling_matrix_examples() {
        let only_zero = IndexSet::from_members(vec![MultiIndex::zero()], 1, 2.0).unwrap();
        let samples = vec![vec![0.3], vec![-0.9], vec![0.0], vec![1.0]];
        let a = build_sampling_matrix(&only_zero, &samples, true).unwrap();
        assert!(a.entries().iter().all(|&v| (v - 0.5).abs() < 1e-15));

        let lam = IndexSet::from_members(vec![MultiIndex::zero(), MultiIndex::unit(1, 1)], 1, 4.0).unwrap();
        let a = build_sampling_matrix(&lam, &[vec![1.0], vec![0.0]], false).unwrap();
        let want = Matrix::from_row_slice(2, 2, &[1.0, SQRT_2, 1.0, 0.0]);
        assert!((a.entries() - want).amax() < 1e-15);

        assert!(matches!(
            build_sampling_matrix(&lam, &[vec![1.5]], false),
            Err(Error::Domain(_))
        ));
        assert!(matches!(build_sampling_matrix(&lam, &[vec![]], false), Err(Error::Structure(_))));
    }

    #[test]
    fn sampling_matrix_columns_are_normalized() {
        let lam = IndexSet::from_members(
            vec![
                MultiIndex::zero(),
                MultiIndex::unit(1, 1),
                MultiIndex::unit(2, 3),
                MultiIndex::from_dense(&[1, 1]),
            ],
            2,
            64.0,
        )
        .unwrap();
        let a = build_sampling_matrix(&lam, &sample_measure(10_000, 2, 5), true).unwrap();
        for col in a.entries().column_iter() {
            assert!((col.norm() - 1.0).abs() < 5e-2);
        }
    }

    #[test]
    fn random_ensembles() {
        for kind in [Ensemble::Gaussian, Ensemble::Rademacher, Ensemble::Uniform] {
            let a = random_matrix(kind, 10_000, 4, 3).unwrap();
            for col in a.entries().column_iter() {
                assert!((col.norm_squared() - 1.0).abs() < 0.05, "{kind:?}");
            }
            assert_eq!(a, random_matrix(kind, 10_000, 4, 3).unwrap());
            assert!(a.is_normalized());
        }
        let r = random_matrix(Ensemble::Rademacher, 25, 6, 1).unwrap();
        assert!(r.entries().iter().all(|&v| v == 0.2 || v == -0.2));
    }

    #[test]
    fn identity_is_exact_isometry() {
        let a = SensingMatrix::external(Matrix::identity(6, 6)).unwrap();
        let st = BlockStructure::uniform(3, 2).unwrap();
        let w = WeightSequence::new(vec![1.0, 1.5, 1.2]).unwrap();
        let est = empirical_wbrip(&a, &st, &w, 4.0).unwrap();
        assert!(est.delta.abs() < 1e-15);
        // every subset except the full one fits the budget
        assert_eq!(est.supports_checked, 6);
    }

    #[test]
    fn duplicate_columns_break_isometry() {
        let col = [0.6, 0.8, 0.0];
        let other = [0.0, 0.0, 1.0];
        let a = Matrix::from_fn(3, 3, |i, j| if j < 2 { col[i] } else { other[i] });
        let a = SensingMatrix::external(a).unwrap();
        let est = empirical_wbrip(&a, &BlockStructure::scalar(3).unwrap(), &WeightSequence::ones(3), 2.0).unwrap();
        assert!(est.delta >= 1.0 - 1e-12);
        assert!(est.worst_support.contains(0) && est.worst_support.contains(1));
    }

    #[test]
    fn guard_refuses_large_enumerations() {
        let a = gaussian(5, 40, 0);
        let err = empirical_wbrip(&a, &BlockStructure::scalar(40).unwrap(), &WeightSequence::ones(40), 10.0).unwrap_err();
        assert!(matches!(err, Error::Guard { .. }));
    }

    #[test]
    fn gaussian_success_rate_grows_with_m() {
        let threshold = 1.0 / (2.0 * SQRT_2 + 1.0);
        let st = BlockStructure::scalar(12).unwrap();
        let w = WeightSequence::ones(12);
        let rate = |m: usize| {
            (0..50)
                .filter(|&seed| empirical_wbrip(&gaussian(m, 12, seed), &st, &w, 3.0).unwrap().delta < threshold)
                .count()
        };
        let rates: Vec<usize> = [60, 150, 300, 600].into_iter().map(rate).collect();
        assert!(rates.windows(2).all(|r| r[0] <= r[1]), "{rates:?}");
        assert!(rates[3] >= 45, "{rates:?}");
    }

    #[test]
    fn delta_monotone_in_budget() {
        let a = gaussian(10, 9, 4);
        let st = BlockStructure::scalar(9).unwrap();
        let w = WeightSequence::new((0..9).map(|i| 1.0 + 0.1 * i as f64).collect()).unwrap();
        let mut prev = 0.0;
        for s in [1.5, 2.0, 3.0, 4.5, 6.0, 8.0] {
            let d = empirical_wbrip(&a, &st, &w, s).unwrap().delta;
            assert!(d >= prev);
            prev = d;
        }
    }

    #[test]
    fn delta_is_thread_independent() {
        let a = gaussian(12, 14, 8);
        let st = BlockStructure::scalar(14).unwrap();
        let w = WeightSequence::ones(14);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let x = one.install(|| empirical_wbrip(&a, &st, &w, 3.0).unwrap());
        let y = four.install(|| empirical_wbrip(&a, &st, &w, 3.0).unwrap());
        assert_eq!(x, y);
    }

    #[test]
    fn tensor_equivalence_small() {
        let a = gaussian(8, 12, 11);
        let w = WeightSequence::ones(12);
        let (s1, b1) = tensor_rip_equivalence(&a, 1, &w, 2.0).unwrap();
        assert_eq!(s1, b1);
        for d in 2..=4 {
            let (sd, bd) = tensor_rip_equivalence(&a, d, &w, 2.0).unwrap();
            assert!((sd - bd).abs() <= 1e-10);
            assert!((bd - b1).abs() <= 1e-10);
            assert!((replicated_block_delta(&a, d, &w, 2.0).unwrap() - bd).abs() <= 1e-10);
        }
    }

    #[test]
    fn kron_matches_frobenius() {
        let a = gaussian(5, 7, 2);
        let d = 3;
        let x = Matrix::from_fn(7, d, |i, j| ((i * 3 + j) as f64).sin());
        let xt = nalgebra::DVector::from_iterator(7 * d, (0..7).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| x[(i, j)]));
        let lhs = (a.kron_identity(d).entries() * xt).norm_squared();
        let rhs = (a.entries() * &x).norm_squared();
        assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
    }

    #[test]
    fn coherence_identity_and_overlap() {
        let st = Arc::new(BlockStructure::uniform(4, 2).unwrap());
        let w = WeightSequence::ones(4);
        let a = SensingMatrix::external(Matrix::identity(8, 8)).unwrap();
        let c = disjoint_coherence_check(&a, &st, &w, 1.0, 2.0, 50, 1).unwrap();
        assert_eq!(c.worst_ratio, 0.0);
        assert_eq!(c.delta_s_plus_t, 0.0);

        let u = BlockVector::new(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], st.clone()).unwrap();
        let v = BlockVector::new(vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], st.clone()).unwrap();
        assert!(matches!(pair_coherence(&a, &u, &v), Err(Error::Domain(_))));
    }

    #[test]
    fn coherence_below_delta() {
        let st = BlockStructure::uniform(6, 2).unwrap();
        let w = WeightSequence::new(vec![1.0, 1.2, 1.0, 1.1, 1.0, 1.3]).unwrap();
        for seed in 0..3 {
            let a = gaussian(20, 12, seed);
            let c = disjoint_coherence_check(&a, &st, &w, 2.0, 2.0, 300, seed).unwrap();
            assert!(c.holds(1e-10), "{c:?}");
            assert!(c.worst_ratio > 0.0);
        }
    }
}
