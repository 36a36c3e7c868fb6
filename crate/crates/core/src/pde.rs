//! One-dimensional affine-parametric diffusion on `(0, 1)`:
//!
//! ```text
//! −(a(x; y) u′)′ = f,   u(0) = u(1) = 0,   a(x; y) = ā(x) + Σ_j y_j ψ_j(x)
//! ```
//!
//! with `ψ_j(x) = c_ψ · decay(j) · sin(jπx)`, discretized by P1 elements on a
//! uniform mesh. Coordinates of discrete functions can be mapped to an
//! orthonormal basis of `H¹₀` so that Euclidean norms equal energy norms.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiindex::WeightRule;
use crate::Matrix;

/// Mean diffusion coefficient `ā`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeanField {
    Constant(f64),
    /// `values[k]` on the `k`-th interval cut out by the increasing `breakpoints`.
    Piecewise { breakpoints: Vec<f64>, values: Vec<f64> },
}

impl MeanField {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            MeanField::Constant(a) => *a,
            MeanField::Piecewise { breakpoints, values } => values[breakpoints.partition_point(|&b| b <= x)],
        }
    }

    pub fn ess_inf(&self) -> f64 {
        match self {
            MeanField::Constant(a) => *a,
            MeanField::Piecewise { values, .. } => values.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn ess_sup(&self) -> f64 {
        match self {
            MeanField::Constant(a) => *a,
            MeanField::Piecewise { values, .. } => values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    fn validate(&self) -> Result<()> {
        if let MeanField::Piecewise { breakpoints, values } = self {
            if values.len() != breakpoints.len() + 1 {
                return Err(Error::Structure(format!(
                    "{} breakpoints need {} values, got {}",
                    breakpoints.len(),
                    breakpoints.len() + 1,
                    values.len()
                )));
            }
            if breakpoints.windows(2).any(|w| w[0] >= w[1]) || breakpoints.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
                return Err(Error::Domain("breakpoints must increase strictly inside (0, 1)".into()));
            }
        }
        let inf = self.ess_inf();
        if !(inf > 0.0 && self.ess_sup().is_finite()) {
            return Err(Error::Ellipticity { value: inf, x: f64::NAN });
        }
        Ok(())
    }
}

/// Amplitude profile of the fluctuations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decay {
    /// `j^{−r}`
    Algebraic { r: f64 },
    /// `q^j`
    Geometric { q: f64 },
}

impl Decay {
    pub fn eval(&self, j: usize) -> f64 {
        match *self {
            Decay::Algebraic { r } => (j as f64).powf(-r),
            Decay::Geometric { q } => q.powi(j as i32),
        }
    }
}

fn default_j_max() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineDiffusion {
    pub mean: MeanField,
    /// `c_ψ`
    pub amplitude: f64,
    pub decay: Decay,
    /// Largest dimension evaluated term by term; beyond it tails are bounded analytically.
    #[serde(default = "default_j_max")]
    pub j_max: usize,
    /// Fluctuations vanish for `j > cutoff`.
    #[serde(default)]
    pub cutoff: Option<usize>,
}

impl AffineDiffusion {
    pub fn new(mean: MeanField, amplitude: f64, decay: Decay) -> Result<Self> {
        let op = Self {
            mean,
            amplitude,
            decay,
            j_max: default_j_max(),
            cutoff: None,
        };
        op.validate()?;
        Ok(op)
    }

    pub fn with_cutoff(mut self, cutoff: usize) -> Self {
        self.cutoff = Some(cutoff);
        self
    }

    pub fn with_j_max(mut self, j_max: usize) -> Self {
        self.j_max = j_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.mean.validate()?;
        if !self.amplitude.is_finite() {
            return Err(Error::Domain("fluctuation amplitude must be finite".into()));
        }
        match self.decay {
            Decay::Algebraic { r } if !(r > 0.0) => {
                return Err(Error::Domain(format!("algebraic decay exponent r = {r} must be > 0")))
            }
            Decay::Geometric { q } if !(q > 0.0 && q < 1.0) => {
                return Err(Error::Domain(format!("geometric ratio q = {q} must lie in (0, 1)")))
            }
            _ => {}
        }
        if self.j_max == 0 {
            return Err(Error::Domain("j_max must be ≥ 1".into()));
        }
        Ok(())
    }

    fn active(&self, j: usize) -> bool {
        self.cutoff.is_none_or(|c| j <= c)
    }

    /// `ψ_j(x)`.
    pub fn psi(&self, j: usize, x: f64) -> f64 {
        if !self.active(j) {
            return 0.0;
        }
        self.amplitude * self.decay.eval(j) * (j as f64 * PI * x).sin()
    }

    /// `sup_x |ψ_j(x)|`.
    pub fn psi_sup(&self, j: usize) -> f64 {
        if !self.active(j) {
            return 0.0;
        }
        self.amplitude.abs() * self.decay.eval(j)
    }

    /// `a(x; y_1..y_τ, 0, 0, ...)`.
    pub fn coefficient(&self, x: f64, y: &[f64], tau: usize) -> f64 {
        self.mean.eval(x) + (1..=tau).map(|j| y[j - 1] * self.psi(j, x)).sum::<f64>()
    }

    /// Worst-case lower bound on `a(x; y)` over the whole parameter box.
    pub fn coefficient_lower_bound(&self) -> f64 {
        self.mean.ess_inf() * (1.0 - self.b_tail(0))
    }

    /// `K = |c_ψ| / ess-inf ā`, so that `b_{0,j} = K·decay(j)` on active dimensions.
    fn b_scale(&self) -> f64 {
        self.amplitude.abs() / self.mean.ess_inf()
    }

    /// `Σ_{j > τ} b_{0,j}`: exact for geometric decay, term sums up to `j_max`
    /// plus an integral bound for algebraic decay.
    pub fn b_tail(&self, tau: usize) -> f64 {
        let k = self.b_scale();
        if k == 0.0 || self.cutoff.is_some_and(|c| tau >= c) {
            return 0.0;
        }
        match self.decay {
            Decay::Geometric { q } => {
                let upper = self.cutoff.map_or(0.0, |c| q.powi(c as i32 + 1));
                k * (q.powi(tau as i32 + 1) - upper) / (1.0 - q)
            }
            Decay::Algebraic { r } => {
                let stop = self.cutoff.map_or(self.j_max, |c| c.min(self.j_max));
                let head: f64 = (tau + 1..=stop).rev().map(|j| b0j_bound(self, j)).sum();
                let beyond = self.j_max.max(tau);
                if self.cutoff.is_some_and(|c| c <= beyond) {
                    head
                } else if r > 1.0 {
                    head + k * (beyond as f64).powf(1.0 - r) / (r - 1.0)
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// Uniform mesh with `n` interior nodes on `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FemMesh {
    pub n: usize,
}

impl FemMesh {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("mesh needs at least one interior node".into()));
        }
        Ok(Self { n })
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.n + 1) as f64
    }

    /// Interior node positions.
    pub fn nodes(&self) -> Vec<f64> {
        let h = self.h();
        (1..=self.n).map(|i| i as f64 * h).collect()
    }

    /// Element midpoints, `n + 1` of them.
    pub fn midpoints(&self) -> Vec<f64> {
        let h = self.h();
        (0..=self.n).map(|e| (e as f64 + 0.5) * h).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub y: Vec<f64>,
    /// Nodal values at the interior nodes.
    pub coefficients: Vec<f64>,
    /// Coordinates in an `H¹₀`-orthonormal basis.
    pub transformed: Vec<f64>,
}

/// Solves `A x = d` for the symmetric tridiagonal matrix with diagonal `diag`
/// and off-diagonal `off`.
fn thomas(diag: &[f64], off: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { off[0] / diag[0] } else { 0.0 };
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - off[i - 1] * c[i - 1];
        if i < n - 1 {
            c[i] = off[i] / m;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d
}

/// P1 solve with midpoint quadrature for both coefficient and load.
pub fn solve_snapshot(
    op: &AffineDiffusion,
    y: &[f64],
    tau: usize,
    mesh: &FemMesh,
    f: &dyn Fn(f64) -> f64,
) -> Result<Snapshot> {
    if y.len() < tau {
        return Err(Error::Structure(format!("parameter of length {} used with τ = {tau}", y.len())));
    }
    if let Some(t) = y[..tau].iter().find(|t| t.abs() > 1.0) {
        return Err(Error::Domain(format!("parameter {t} outside [-1, 1]")));
    }
    let coefficients = solve_nodal(op, y, tau, mesh, f)?;
    let transformed = HilbertMap::new(mesh).forward(&coefficients);
    Ok(Snapshot {
        y: y[..tau].to_vec(),
        coefficients,
        transformed,
    })
}

fn solve_nodal(op: &AffineDiffusion, y: &[f64], tau: usize, mesh: &FemMesh, f: &dyn Fn(f64) -> f64) -> Result<Vec<f64>> {
    let n = mesh.n;
    let h = mesh.h();
    let mids = mesh.midpoints();
    let mut a = Vec::with_capacity(n + 1);
    for &x in &mids {
        let v = op.coefficient(x, y, tau);
        if !(v > 0.0) {
            return Err(Error::Ellipticity { value: v, x });
        }
        a.push(v);
    }
    let fm: Vec<f64> = mids.iter().map(|&x| f(x)).collect();
    let diag: Vec<f64> = (0..n).map(|i| (a[i] + a[i + 1]) / h).collect();
    let off: Vec<f64> = (1..n).map(|i| -a[i] / h).collect();
    let rhs: Vec<f64> = (0..n).map(|i| (fm[i] + fm[i + 1]) * h / 2.0).collect();
    Ok(thomas(&diag, &off, &rhs))
}

/// Discrete load vector `F_i = ∫ f φ_i` under midpoint quadrature.
pub fn load_vector(mesh: &FemMesh, f: &dyn Fn(f64) -> f64) -> Vec<f64> {
    let h = mesh.h();
    let fm: Vec<f64> = mesh.midpoints().iter().map(|&x| f(x)).collect();
    (0..mesh.n).map(|i| (fm[i] + fm[i + 1]) * h / 2.0).collect()
}

/// Stacks snapshot coordinates as rows.
pub fn snapshot_matrix(snapshots: &[Snapshot], transformed: bool) -> Matrix {
    let cols = snapshots.first().map_or(0, |s| s.coefficients.len());
    Matrix::from_fn(snapshots.len(), cols, |i, j| {
        if transformed {
            snapshots[i].transformed[j]
        } else {
            snapshots[i].coefficients[j]
        }
    })
}

/// `b_{0,j} ≤ ‖ψ_j / ā‖_∞ ≤ sup|ψ_j| / ess-inf ā`.
pub fn b0j_bound(op: &AffineDiffusion, j: usize) -> f64 {
    op.psi_sup(j) / op.mean.ess_inf()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WueaReport {
    /// `Σ_j v_j^{(2−p)/p} b_{0,j}` including the tail bound.
    pub kappa: f64,
    pub passes: bool,
    /// `Σ_j v_j^{2−p} b_{0,j}^p` including the tail bound.
    pub lp_sum: f64,
    pub tail_bound: f64,
    pub diagnostic: Option<String>,
}

/// Weighted uniform ellipticity check for `p ∈ (0, 1]`.
///
/// Terms are summed up to `j_max`; the remainder is bounded in closed form
/// (integral bound for algebraic decay, ratio bound for geometric decay).
/// Weights that become infinite where fluctuations are still present make
/// the sum infinite, while `0·∞` counts as `0`.
pub fn check_wuea(op: &AffineDiffusion, v: &WeightRule, p: f64) -> Result<WueaReport> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(format!("summability exponent p = {p} must lie in (0, 1]")));
    }
    v.validate()?;
    let e = (2.0 - p) / p;
    let (kappa_head, kappa_tail) = weighted_sum(op, v, e, 1.0);
    let (lp_head, lp_tail) = weighted_sum(op, v, 2.0 - p, p);
    let kappa = kappa_head + kappa_tail;
    let lp_sum = lp_head + lp_tail;
    let diagnostic = if kappa.is_infinite() {
        Some("weighted sum diverges: weights grow faster than the fluctuations decay".to_string())
    } else if kappa >= 1.0 {
        Some(format!("κ = {kappa:.6} ≥ 1"))
    } else {
        None
    };
    Ok(WueaReport {
        kappa,
        passes: kappa < 1.0,
        lp_sum,
        tail_bound: kappa_tail,
        diagnostic,
    })
}

/// `(Σ_{j ≤ j_max} v_j^a b_j^b, bound on Σ_{j > j_max} v_j^a b_j^b)`.
fn weighted_sum(op: &AffineDiffusion, v: &WeightRule, a: f64, b: f64) -> (f64, f64) {
    let term = |j: usize| {
        let bj = b0j_bound(op, j);
        if bj == 0.0 {
            0.0
        } else {
            v.value(j).powf(a) * bj.powf(b)
        }
    };
    let jm = op.j_max;
    let head: f64 = (1..=jm).rev().map(term).sum();
    let k = op.b_scale();
    if k == 0.0 || op.cutoff.is_some_and(|c| c <= jm) {
        return (head, 0.0);
    }
    if let Some(h) = v.finite_horizon() {
        // weights are infinite past the horizon
        return match op.cutoff {
            Some(c) if c <= h => (head, (jm + 1..=c).rev().map(term).sum()),
            _ => (head, f64::INFINITY),
        };
    }
    let (c, alpha) = match v {
        WeightRule::Constant { beta, .. } => (*beta, 0.0),
        WeightRule::Polynomial { c, alpha } => (*c, *alpha),
        WeightRule::Sequence { .. } => unreachable!("sequences have a finite horizon"),
    };
    let coef = c.powf(a) * k.powf(b);
    let growth = alpha * a;
    let tail = match op.decay {
        Decay::Algebraic { r } => {
            let gamma = r * b - growth;
            if gamma > 1.0 {
                coef * (jm as f64).powf(1.0 - gamma) / (gamma - 1.0)
            } else {
                f64::INFINITY
            }
        }
        Decay::Geometric { q } => {
            let qb = q.powf(b);
            let j1 = (jm + 1) as f64;
            let ratio = qb * ((j1 + 1.0) / j1).powf(growth);
            if ratio < 1.0 {
                coef * j1.powf(growth) * qb.powf(j1) / (1.0 - ratio)
            } else {
                f64::INFINITY
            }
        }
    };
    (head, tail)
}

/// Smallest `τ` with `Σ_{j>τ} b_{0,j} ≤ εμ`, up to a relative slack of `1e-12`.
pub fn choose_truncation(op: &AffineDiffusion, eps: f64, mu: f64) -> Result<usize> {
    if !(eps > 0.0 && mu > 0.0) {
        return Err(Error::Domain(format!("need ε > 0 and μ > 0, got ε = {eps}, μ = {mu}")));
    }
    let target = eps * mu;
    let limit = target * (1.0 + 1e-12);
    let upper = op.cutoff.map_or(op.j_max, |c| c.min(op.j_max));
    for tau in 0..=upper {
        if op.b_tail(tau) <= limit {
            return Ok(tau);
        }
    }
    Err(Error::Truncation {
        achieved: op.b_tail(upper),
        target,
        j_max: op.j_max,
    })
}

/// Cholesky factor `G = L Lᵀ` of the `H¹₀` Gram matrix of the hat functions.
#[derive(Debug, Clone, PartialEq)]
pub struct HilbertMap {
    /// diagonal of `L`
    diag: Vec<f64>,
    /// subdiagonal of `L`
    sub: Vec<f64>,
}

impl HilbertMap {
    pub fn new(mesh: &FemMesh) -> Self {
        let h = mesh.h();
        let (g_d, g_o) = (2.0 / h, -1.0 / h);
        let mut diag = Vec::with_capacity(mesh.n);
        let mut sub = Vec::with_capacity(mesh.n.saturating_sub(1));
        diag.push(g_d.sqrt());
        for i in 1..mesh.n {
            let l = g_o / diag[i - 1];
            sub.push(l);
            diag.push((g_d - l * l).sqrt());
        }
        Self { diag, sub }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// `c ↦ Lᵀc`.
    pub fn forward(&self, c: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| self.diag[i] * c[i] + if i + 1 < n { self.sub[i] * c[i + 1] } else { 0.0 })
            .collect()
    }

    /// `w ↦ L⁻ᵀw`.
    pub fn inverse(&self, w: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut c = vec![0.0; n];
        for i in (0..n).rev() {
            let next = if i + 1 < n { self.sub[i] * c[i + 1] } else { 0.0 };
            c[i] = (w[i] - next) / self.diag[i];
        }
        c
    }

    /// `‖b‖_* = ‖L⁻¹b‖₂`, the dual norm of a load vector.
    pub fn dual_norm(&self, b: &[f64]) -> f64 {
        let n = self.dim();
        let mut z = vec![0.0; n];
        for i in 0..n {
            let prev = if i > 0 { self.sub[i - 1] * z[i - 1] } else { 0.0 };
            z[i] = (b[i] - prev) / self.diag[i];
        }
        z.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `Lᵀ` as a dense matrix.
    pub fn factor_transpose(&self) -> Matrix {
        let n = self.dim();
        Matrix::from_fn(n, n, |i, j| {
            if i == j {
                self.diag[i]
            } else if j == i + 1 {
                self.sub[i]
            } else {
                0.0
            }
        })
    }
}

/// `cᵀGc` for the `H¹₀` Gram matrix on `mesh`.
pub fn gram_norm_sq(mesh: &FemMesh, c: &[f64]) -> f64 {
    let h = mesh.h();
    let n = c.len();
    let mut s = 0.0;
    for i in 0..n {
        s += 2.0 / h * c[i] * c[i];
        if i + 1 < n {
            s -= 2.0 / h * c[i] * c[i + 1];
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_mean(amplitude: f64, decay: Decay) -> AffineDiffusion {
        AffineDiffusion::new(MeanField::Constant(1.0), amplitude, decay).unwrap()
    }

    fn one(_: f64) -> f64 {
        1.0
    }

    /// `|u − u_h|²_{H¹}` for `u = x(1−x)/2`, Simpson per element (exact here).
    fn h1_error_sq(mesh: &FemMesh, nodal: &[f64]) -> f64 {
        let h = mesh.h();
        let mut full = vec![0.0];
        full.extend_from_slice(nodal);
        full.push(0.0);
        (0..=mesh.n)
            .map(|e| {
                let slope = (full[e + 1] - full[e]) / h;
                let g = |x: f64| (0.5 - x - slope).powi(2);
                let (x0, x1) = (e as f64 * h, (e + 1) as f64 * h);
                h / 6.0 * (g(x0) + 4.0 * g((x0 + x1) / 2.0) + g(x1))
            })
            .sum()
    }

    #[test]
    fn constant_coefficient_is_nodally_exact() {
        let op = unit_mean(0.0, Decay::Algebraic { r: 3.0 });
        let mesh = FemMesh::new(255).unwrap();
        let snap = solve_snapshot(&op, &[], 0, &mesh, &one).unwrap();
        for (x, u) in mesh.nodes().iter().zip(&snap.coefficients) {
            assert!((u - x * (1.0 - x) / 2.0).abs() < 1e-13);
        }
        assert!((snap.coefficients[127] - 0.125).abs() < 1e-14);
    }

    #[test]
    fn zero_load_and_inert_truncation() {
        let op = unit_mean(0.1, Decay::Algebraic { r: 3.0 });
        let mesh = FemMesh::new(31).unwrap();
        let snap = solve_snapshot(&op, &[0.3, -0.2], 2, &mesh, &|_| 0.0).unwrap();
        assert!(snap.coefficients.iter().all(|&u| u == 0.0));
        let a = solve_snapshot(&op, &[0.0; 2], 2, &mesh, &one).unwrap();
        let b = solve_snapshot(&op, &[0.0; 9], 9, &mesh, &one).unwrap();
        assert_eq!(a.coefficients, b.coefficients);
    }

    #[test]
    fn ellipticity_violation() {
        let op = unit_mean(2.0, Decay::Algebraic { r: 1.0 });
        let mesh = FemMesh::new(15).unwrap();
        let err = solve_snapshot(&op, &[-1.0], 1, &mesh, &one).unwrap_err();
        assert!(matches!(err, Error::Ellipticity { value, .. } if value <= 0.0));
        assert!(matches!(solve_snapshot(&op, &[1.5], 1, &mesh, &one), Err(Error::Domain(_))));
        assert!(matches!(solve_snapshot(&op, &[0.5], 2, &mesh, &one), Err(Error::Structure(_))));
    }

    #[test]
    fn b0j_examples() {
        let op = unit_mean(0.1, Decay::Algebraic { r: 3.0 });
        for j in 1..50 {
            assert!((b0j_bound(&op, j) - 0.1 * (j as f64).powi(-3)).abs() < 1e-17);
            assert!(b0j_bound(&op, j + 1) <= b0j_bound(&op, j));
        }
        assert_eq!(b0j_bound(&unit_mean(0.0, Decay::Geometric { q: 0.5 }), 3), 0.0);
        let piece = AffineDiffusion::new(
            MeanField::Piecewise {
                breakpoints: vec![0.5],
                values: vec![2.0, 4.0],
            },
            0.5,
            Decay::Geometric { q: 0.5 },
        )
        .unwrap();
        assert!((b0j_bound(&piece, 1) - 0.125).abs() < 1e-15);
        assert_eq!(piece.mean.eval(0.25), 2.0);
        assert_eq!(piece.mean.eval(0.75), 4.0);
    }

    #[test]
    fn wuea_examples() {
        // ζ(3) = 1.2020569031595942
        let op = unit_mean(0.1, Decay::Algebraic { r: 3.0 });
        let rep = check_wuea(&op, &WeightRule::unit(), 1.0).unwrap();
        assert!((rep.kappa - 0.12020569031595942).abs() < 1e-7);
        assert!(rep.kappa >= 0.12020569031595942 - 1e-15);
        assert!(rep.passes);
        let zero = check_wuea(&unit_mean(0.0, Decay::Algebraic { r: 3.0 }), &WeightRule::unit(), 0.5).unwrap();
        assert_eq!(zero.kappa, 0.0);
        assert!(zero.passes);
        let big = check_wuea(&unit_mean(2.0, Decay::Algebraic { r: 3.0 }), &WeightRule::unit(), 0.5).unwrap();
        assert!(big.kappa >= 2.0 && !big.passes);
        assert!(check_wuea(&op, &WeightRule::unit(), 1.5).is_err());
    }

    #[test]
    fn wuea_tail_bounds_dominate_long_sums() {
        // the bound from a short evaluation window must cover a much longer explicit sum
        let cases = [
            (Decay::Algebraic { r: 3.0 }, WeightRule::polynomial(1.2, 0.5).unwrap(), 0.5),
            (Decay::Algebraic { r: 4.0 }, WeightRule::polynomial(1.1, 1.0).unwrap(), 0.75),
            (Decay::Geometric { q: 0.6 }, WeightRule::polynomial(1.3, 2.0).unwrap(), 0.5),
            (Decay::Geometric { q: 0.3 }, WeightRule::unit(), 1.0),
        ];
        for (decay, rule, p) in cases {
            let short = unit_mean(0.05, decay).with_j_max(20);
            let long = unit_mean(0.05, decay).with_j_max(200_000);
            let a = check_wuea(&short, &rule, p).unwrap();
            let b = check_wuea(&long, &rule, p).unwrap();
            assert!(a.kappa >= b.kappa * (1.0 - 1e-12), "{decay:?} {rule:?}: {} < {}", a.kappa, b.kappa);
            assert!(a.lp_sum >= b.lp_sum * (1.0 - 1e-12));
            assert!(a.kappa.is_finite());
        }
    }

    #[test]
    fn wuea_divergence_and_cutoffs() {
        let op = unit_mean(0.1, Decay::Algebraic { r: 1.5 });
        let rep = check_wuea(&op, &WeightRule::polynomial(1.0, 1.0).unwrap(), 0.5).unwrap();
        assert!(rep.kappa.is_infinite() && !rep.passes && rep.diagnostic.is_some());
        // infinite weights only matter where ψ_j ≠ 0
        let rule = WeightRule::constant(1.5, 3).unwrap();
        assert!(check_wuea(&op, &rule, 0.5).unwrap().kappa.is_infinite());
        let cut = op.clone().with_cutoff(3);
        assert!(check_wuea(&cut, &rule, 0.5).unwrap().kappa.is_finite());
    }

    #[test]
    fn truncation_examples() {
        let op = unit_mean(0.1, Decay::Geometric { q: 0.5 });
        assert_eq!(choose_truncation(&op, 0.0125, 1.0).unwrap(), 3);
        assert_eq!(choose_truncation(&op, 0.025, 0.5).unwrap(), 3);
        let cut = unit_mean(0.3, Decay::Algebraic { r: 1.0 }).with_cutoff(5);
        assert!(choose_truncation(&cut, 1e-9, 1.0).unwrap() <= 5);
        let alg = unit_mean(0.1, Decay::Algebraic { r: 3.0 });
        let mut prev = usize::MAX;
        for k in 0..12 {
            let tau = choose_truncation(&alg, 1e-6 * 2f64.powi(k), 1.0).unwrap();
            assert!(tau <= prev);
            prev = tau;
        }
        let slow = unit_mean(0.1, Decay::Algebraic { r: 1.0 });
        assert!(matches!(choose_truncation(&slow, 1e-3, 1.0), Err(Error::Truncation { .. })));
    }

    #[test]
    fn hilbert_map_examples() {
        let mesh = FemMesh::new(1).unwrap();
        let hm = HilbertMap::new(&mesh);
        assert_eq!(hm.forward(&[1.0]), vec![2.0]);
        assert_eq!(gram_norm_sq(&mesh, &[1.0]), 4.0);

        let mesh = FemMesh::new(40).unwrap();
        let hm = HilbertMap::new(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let c: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w = hm.forward(&c);
            let back = hm.inverse(&w);
            assert!(c.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-12));
            let g = gram_norm_sq(&mesh, &c);
            let e = w.iter().map(|v| v * v).sum::<f64>();
            assert!((g - e).abs() < 1e-12 * g.max(1.0));
        }
        let lt = hm.factor_transpose();
        let gram = lt.transpose() * &lt;
        let h = mesh.h();
        for i in 0..40 {
            assert!((gram[(i, i)] - 2.0 / h).abs() < 1e-10);
            if i + 1 < 40 {
                assert!((gram[(i, i + 1)] + 1.0 / h).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fem_converges_at_first_order() {
        let op = unit_mean(0.0, Decay::Algebraic { r: 3.0 });
        let errs: Vec<f64> = [7usize, 15, 31, 63, 127]
            .iter()
            .map(|&n| {
                let mesh = FemMesh::new(n).unwrap();
                let u = solve_snapshot(&op, &[], 0, &mesh, &one).unwrap();
                h1_error_sq(&mesh, &u.coefficients).sqrt()
            })
            .collect();
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!(rate >= 0.9, "{errs:?}");
        }
    }

    #[test]
    fn a_priori_bound_and_positivity() {
        let op = unit_mean(0.1, Decay::Algebraic { r: 3.0 });
        let mesh = FemMesh::new(63).unwrap();
        let hm = HilbertMap::new(&mesh);
        let kappa = check_wuea(&op, &WeightRule::unit(), 1.0).unwrap().kappa;
        let bound = hm.dual_norm(&load_vector(&mesh, &one)) / (op.mean.ess_inf() * (1.0 - kappa));
        let lower = op.coefficient_lower_bound();
        assert!(lower > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tau = 20;
        for _ in 0..200 {
            let y: Vec<f64> = (0..tau).map(|_| rng.random_range(-1.0..=1.0)).collect();
            for x in mesh.midpoints() {
                assert!(op.coefficient(x, &y, tau) >= lower - 1e-15);
            }
            let snap = solve_snapshot(&op, &y, tau, &mesh, &one).unwrap();
            let norm = snap.transformed.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= bound, "{norm} > {bound}");
        }
    }

    #[test]
    fn truncation_perturbation_is_controlled_by_tail() {
        let op = unit_mean(0.3, Decay::Algebraic { r: 2.0 });
        let mesh = FemMesh::new(63).unwrap();
        let hm = HilbertMap::new(&mesh);
        let fstar = hm.dual_norm(&load_vector(&mesh, &one));
        let amin = op.mean.ess_inf();
        let mu = op.coefficient_lower_bound();
        let constant = amin * fstar / (mu * mu);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let y: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let fine = solve_snapshot(&op, &y, 200, &mesh, &one).unwrap();
            for tau in [1usize, 2, 4, 8, 16] {
                let coarse = solve_snapshot(&op, &y, tau, &mesh, &one).unwrap();
                let diff: f64 = fine
                    .transformed
                    .iter()
                    .zip(&coarse.transformed)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(diff <= constant * op.b_tail(tau), "τ {tau}: {diff}");
            }
        }
    }

    #[test]
    fn operator_config_parses() {
        let op: AffineDiffusion = toml::from_str(
            "mean = 1.0\namplitude = 0.1\nj_max = 500\n[decay]\nkind = \"algebraic\"\nr = 3.0\n",
        )
        .unwrap();
        assert_eq!(op.decay, Decay::Algebraic { r: 3.0 });
        assert_eq!(op.j_max, 500);
        let op: AffineDiffusion = toml::from_str(
            "amplitude = 0.2\nmean = { breakpoints = [0.3], values = [1.0, 2.0] }\ndecay = { kind = \"geometric\", q = 0.5 }\n",
        )
        .unwrap();
        assert_eq!(op.mean.ess_inf(), 1.0);
        assert_eq!(op.cutoff, None);
    }
}
