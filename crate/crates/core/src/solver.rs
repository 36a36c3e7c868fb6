//! Weighted group basis pursuit denoising for matrix-valued unknowns.
//!
//! Solves
//!
//! ```text
//! min Σ_b ω_b ‖Z[b]‖_F   subject to   ‖AZ − Y‖_F ≤ η
//! ```
//!
//! where `Z[b]` is the group of rows of `Z` belonging to block `b`. With one
//! column this is the block BPDN program; with `J` columns the rows are jointly
//! sparse. The solver is ADMM on the splitting `f(Z) + ι_C(X)` with `X = Z`,
//! carried out in the singular basis of `A` so that an iteration costs
//! `O(rank(A)·N·J)` regardless of the number of measurements.

use std::f64::consts::SQRT_2;

use nalgebra::SVD;
use serde::{Deserialize, Serialize};

use crate::block_model::{best_approximation_bruteforce, weighted_block_norm, BlockStructure, BlockVector, WeightSequence};
use crate::error::{Error, Result};
use crate::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveSettings {
    pub max_iterations: usize,
    /// Relative bound on `(‖AZ − Y‖ − η)₊ / (1 + ‖Y‖)`.
    pub primal_tolerance: f64,
    /// Relative bound on the duality gap, `gap / (1 + objective)`.
    pub dual_tolerance: f64,
    /// Initial ADMM penalty; derived from the data when absent.
    pub rho: Option<f64>,
    pub adaptive_rho: bool,
    /// Iterations between duality-gap evaluations.
    pub check_every: usize,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            max_iterations: 100_000,
            primal_tolerance: 1e-8,
            dual_tolerance: 1e-8,
            rho: None,
            adaptive_rho: true,
            check_every: 10,
        }
    }
}

impl SolveSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.primal_tolerance > 0.0 && self.dual_tolerance > 0.0) {
            return Err(Error::Domain("solver tolerances must be positive".into()));
        }
        if self.max_iterations == 0 || self.check_every == 0 {
            return Err(Error::Domain("iteration counts must be positive".into()));
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(Error::Domain(format!("penalty ρ = {rho} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    NotConverged,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub z: Matrix,
    /// Dual variable `V` (same shape as `Y`), scaled to be dual feasible.
    pub dual: Matrix,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub objective: f64,
    /// `‖AZ − Y‖_F`.
    pub constraint_activity: f64,
    pub status: SolveStatus,
    /// Objective value after every iteration.
    pub objective_log: Vec<f64>,
}

/// Fixed-name summary written next to a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub constraint_activity: f64,
    pub objective: f64,
    pub status: SolveStatus,
}

impl SolveResult {
    pub fn diagnostics(&self) -> SolveDiagnostics {
        SolveDiagnostics {
            iterations: self.iterations,
            gap: self.gap,
            primal_residual: self.primal_residual,
            dual_residual: self.dual_residual,
            constraint_activity: self.constraint_activity,
            objective: self.objective,
            status: self.status,
        }
    }

    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// `row · max(0, 1 − t/‖row‖₂)`.
pub fn block_soft_threshold(row: &[f64], threshold: f64) -> Vec<f64> {
    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = if norm > threshold { 1.0 - threshold / norm } else { 0.0 };
    row.iter().map(|x| x * scale).collect()
}

/// Frobenius norm of each row group of `z`.
pub fn row_block_norms(z: &Matrix, structure: &BlockStructure) -> Vec<f64> {
    (0..structure.num_blocks())
        .map(|b| {
            structure
                .range(b)
                .map(|i| z.row(i).norm_squared())
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// `Σ_b ω_b ‖Z[b]‖_F`.
pub fn group_objective(z: &Matrix, structure: &BlockStructure, weights: &WeightSequence) -> f64 {
    row_block_norms(z, structure)
        .iter()
        .zip(weights.values())
        .map(|(n, w)| n * w)
        .sum()
}

/// Row-major flattening, so that row group `b` becomes one contiguous block.
pub fn to_block_vector(z: &Matrix, structure: &BlockStructure) -> Result<BlockVector> {
    let data: Vec<f64> = (0..z.nrows()).flat_map(|i| z.row(i).iter().copied().collect::<Vec<_>>()).collect();
    BlockVector::new(data, std::sync::Arc::new(structure.scaled(z.ncols())?))
}

fn check_shapes(a: &Matrix, y: &Matrix, structure: &BlockStructure, weights: &WeightSequence) -> Result<()> {
    if a.nrows() != y.nrows() {
        return Err(Error::Structure(format!("A has {} rows but Y has {}", a.nrows(), y.nrows())));
    }
    if structure.dim() != a.ncols() {
        return Err(Error::Structure(format!(
            "block structure covers {} rows of Z but A has {} columns",
            structure.dim(),
            a.ncols()
        )));
    }
    weights.check_against(structure)
}

/// `A = U Σ Vᵀ` restricted to the numerically nonzero singular values.
struct Reduced {
    u: Matrix,
    sigma: Vec<f64>,
    vt: Matrix,
    /// `UᵀY`
    c: Matrix,
    /// `Y − UUᵀY`
    perp: Matrix,
    /// distance from `Y` to the range of `A`
    dist: f64,
}

impl Reduced {
    fn new(a: &Matrix, y: &Matrix) -> Self {
        let svd = SVD::new(a.clone(), true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let smax = svd.singular_values.max();
        let cutoff = smax * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > cutoff)
            .collect();
        let u = u.select_columns(&keep);
        let vt = vt.select_rows(&keep);
        let sigma: Vec<f64> = keep.iter().map(|&i| svd.singular_values[i]).collect();
        let c = u.transpose() * y;
        let perp = y - &u * &c;
        let dist = perp.norm();
        Self {
            u,
            sigma,
            vt,
            c,
            perp,
            dist,
        }
    }

    fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `‖AZ − Y‖_F`
    fn residual_norm(&self, z: &Matrix) -> f64 {
        let mut p = &self.vt * z;
        for i in 0..self.rank() {
            let mut row = p.row_mut(i);
            row *= self.sigma[i];
            row -= self.c.row(i);
        }
        (p.norm_squared() + self.dist * self.dist).sqrt()
    }

    /// Euclidean projection of `z0` onto `{X : ‖AX − Y‖_F ≤ η}`.
    fn project(&self, z0: &Matrix, eta: f64) -> Matrix {
        let p = &self.vt * z0;
        let r = self.rank();
        let mut q = Matrix::zeros(r, z0.ncols());
        if eta <= self.dist {
            // ball degenerates to the affine set AX = P_range Y
            for i in 0..r {
                q.set_row(i, &(self.c.row(i) / self.sigma[i]));
            }
        } else {
            let e: Vec<f64> = (0..r)
                .map(|i| (p.row(i) * self.sigma[i] - self.c.row(i)).norm_squared())
                .collect();
            let target = eta * eta - self.dist * self.dist;
            let h = |lam: f64| -> (f64, f64) {
                let mut val = -target;
                let mut der = 0.0;
                for (ei, si) in e.iter().zip(&self.sigma) {
                    let s2 = si * si;
                    let den = 1.0 + lam * s2;
                    val += ei / (den * den);
                    der -= 2.0 * ei * s2 / (den * den * den);
                }
                (val, der)
            };
            if h(0.0).0 <= 0.0 {
                return z0.clone();
            }
            // h is convex and decreasing, so Newton from the left never overshoots
            let mut lam = 0.0;
            for _ in 0..200 {
                let (val, der) = h(lam);
                if val <= 1e-15 * target || der == 0.0 {
                    break;
                }
                let next = lam - val / der;
                if next <= lam * (1.0 + 1e-15) {
                    break;
                }
                lam = next;
            }
            for i in 0..r {
                let s = self.sigma[i];
                let row = (p.row(i) + self.c.row(i) * (lam * s)) / (1.0 + lam * s * s);
                q.set_row(i, &row);
            }
        }
        z0 + self.vt.transpose() * (q - p)
    }

    /// Dual candidate from the consensus multiplier `W`, scaled to satisfy
    /// `‖(AᵀV)[b]‖ ≤ ω_b`. Returned in the coordinates `V = U v`.
    fn dual_from(&self, w: &Matrix, structure: &BlockStructure, weights: &WeightSequence) -> Matrix {
        let wr = &self.vt * w;
        let mut v = wr.clone();
        for i in 0..self.rank() {
            let mut row = v.row_mut(i);
            row /= self.sigma[i];
        }
        let atv = self.vt.transpose() * wr;
        let scale = row_block_norms(&atv, structure)
            .iter()
            .zip(weights.values())
            .map(|(n, w)| n / w)
            .fold(0.0, f64::max);
        if scale > 1.0 {
            v /= scale;
        }
        v
    }

    /// `√(η² − dist²)`, the effective radius once the optimal component of
    /// the dual outside the range of `A` is accounted for.
    fn inner_radius(&self, eta: f64) -> f64 {
        (eta * eta - self.dist * self.dist).max(0.0).sqrt()
    }

    /// `max_W ⟨Uv + W, Y⟩ − η‖Uv + W‖` over `W ⊥ range A`.
    fn dual_value(&self, v: &Matrix, eta: f64) -> f64 {
        v.dot(&self.c) - self.inner_radius(eta) * v.norm()
    }

    /// `Uv` plus the maximizing component along `Y − UUᵀY`.
    fn full_dual(&self, v: &Matrix, eta: f64) -> Matrix {
        let mut out = &self.u * v;
        let inner = self.inner_radius(eta);
        if self.dist > 0.0 && inner > 0.0 {
            out += &self.perp * (v.norm() / inner);
        }
        out
    }
}

/// Solves the weighted group BPDN program from `Z = 0`, `U = 0`.
///
/// The penalty starts at `ω̄√B / ‖A⁺Y‖_F` unless fixed in the settings, which
/// makes every iterate scale linearly with `(Y, η)`. Stops when the duality gap
/// and the constraint violation both meet their relative tolerances.
pub fn solve_wg_bpdn(
    a: &Matrix,
    y: &Matrix,
    structure: &BlockStructure,
    weights: &WeightSequence,
    eta: f64,
    settings: &SolveSettings,
) -> Result<SolveResult> {
    check_shapes(a, y, structure, weights)?;
    settings.validate()?;
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::Domain(format!("noise radius η = {eta} must be finite and ≥ 0")));
    }
    let red = Reduced::new(a, y);
    let y_norm = y.norm();
    let feas_tol = settings.primal_tolerance * (1.0 + y_norm);
    if red.dist > eta + feas_tol {
        return Err(Error::Infeasible {
            distance: red.dist,
            radius: eta,
        });
    }

    let (n, j) = (a.ncols(), y.ncols());
    let nb = structure.num_blocks();
    let mut rho = settings.rho.unwrap_or_else(|| {
        let mut ls = red.c.clone();
        for i in 0..red.rank() {
            let mut row = ls.row_mut(i);
            row /= red.sigma[i];
        }
        let scale = ls.norm();
        let mean_w = weights.values().iter().sum::<f64>() / nb as f64;
        if scale > 0.0 {
            mean_w * (nb as f64).sqrt() / scale
        } else {
            1.0
        }
    });

    let mut z = Matrix::zeros(n, j);
    let mut u = Matrix::zeros(n, j);
    let mut x;
    let mut log = Vec::new();
    let mut status = SolveStatus::NotConverged;
    let (mut r_norm, mut s_norm) = (0.0, 0.0);
    let mut gap = f64::INFINITY;
    let mut iterations = 0;

    for k in 1..=settings.max_iterations {
        iterations = k;
        x = red.project(&(&z - &u), eta);
        let z_old = std::mem::replace(&mut z, &x + &u);
        for b in 0..nb {
            let t = weights.get(b) / rho;
            let rows = structure.range(b);
            let norm = rows.clone().map(|i| z.row(i).norm_squared()).sum::<f64>().sqrt();
            let scale = if norm > t { 1.0 - t / norm } else { 0.0 };
            for i in rows {
                let mut row = z.row_mut(i);
                row *= scale;
            }
        }
        u += &x - &z;
        r_norm = (&x - &z).norm();
        s_norm = rho * (&z - &z_old).norm();
        log.push(group_objective(&z, structure, weights));

        if k % settings.check_every == 0 || k == settings.max_iterations {
            let objective = *log.last().unwrap();
            let v = red.dual_from(&(&u * rho), structure, weights);
            gap = objective - red.dual_value(&v, eta);
            let infeas = (red.residual_norm(&z) - eta).max(0.0);
            if gap <= settings.dual_tolerance * (1.0 + objective.abs()) && infeas <= feas_tol {
                status = SolveStatus::Converged;
                break;
            }
            if settings.adaptive_rho {
                if r_norm > 10.0 * s_norm {
                    rho *= 2.0;
                    u /= 2.0;
                } else if s_norm > 10.0 * r_norm {
                    rho /= 2.0;
                    u *= 2.0;
                }
            }
        }
    }

    let v = red.dual_from(&(&u * rho), structure, weights);
    let objective = group_objective(&z, structure, weights);
    Ok(SolveResult {
        dual: red.full_dual(&v, eta),
        constraint_activity: red.residual_norm(&z),
        z,
        iterations,
        primal_residual: r_norm,
        dual_residual: s_norm,
        gap,
        objective,
        status,
        objective_log: log,
    })
}

/// Optimality residuals of a candidate `Z`, all expected to be near zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktCertificate {
    /// `max_b (‖(AᵀV)[b]‖/ω_b − 1)₊`
    pub dual_infeasibility: f64,
    /// `max_{b active} ‖(AᵀV)[b] − ω_b Z[b]/‖Z[b]‖‖ / ω_b`
    pub stationarity: f64,
    /// `‖V‖·|η − ‖R‖| / (1 + objective)`
    pub slackness: f64,
    /// `(‖R‖ − η)₊ / (1 + ‖Y‖)`
    pub primal_infeasibility: f64,
    /// Multiplier scale `‖V‖ / ‖R‖` when `V` is parallel to the residual.
    pub mu: f64,
    pub active_blocks: usize,
}

impl KktCertificate {
    pub fn max_residual(&self) -> f64 {
        self.dual_infeasibility
            .max(self.stationarity)
            .max(self.slackness)
            .max(self.primal_infeasibility)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_residual() <= tol
    }
}

/// Checks the optimality conditions of `Z` with the dual `V`.
///
/// Without a supplied dual one is reconstructed from `Z`: for `η > 0` as
/// `V = μR` with `μ ≥ 0` fitted by least squares on the active blocks, for
/// `η = 0` as the minimum-norm solution of `(AᵀV)[b] = ω_b Z[b]/‖Z[b]‖` on the
/// active blocks.
pub fn kkt_certificate(
    a: &Matrix,
    y: &Matrix,
    structure: &BlockStructure,
    weights: &WeightSequence,
    eta: f64,
    z: &Matrix,
    dual: Option<&Matrix>,
) -> Result<KktCertificate> {
    check_shapes(a, y, structure, weights)?;
    if z.shape() != (a.ncols(), y.ncols()) {
        return Err(Error::Structure("Z must be N × J".into()));
    }
    let r = y - a * z;
    let r_norm = r.norm();
    let norms = row_block_norms(z, structure);
    let active: Vec<usize> = (0..structure.num_blocks()).filter(|&b| norms[b] > 0.0).collect();

    // subgradient targets ω_b Z[b]/‖Z[b]‖ stacked over the active rows
    let active_rows: Vec<usize> = active.iter().flat_map(|&b| structure.range(b)).collect();
    let mut target = Matrix::zeros(active_rows.len(), z.ncols());
    let mut k = 0;
    for &b in &active {
        for i in structure.range(b) {
            target.set_row(k, &(z.row(i) * (weights.get(b) / norms[b])));
            k += 1;
        }
    }

    let (v, mu) = match dual {
        Some(v) => {
            if v.shape() != y.shape() {
                return Err(Error::Structure("dual must have the shape of Y".into()));
            }
            (v.clone(), if r_norm > 0.0 { v.norm() / r_norm } else { 0.0 })
        }
        None if active.is_empty() => (Matrix::zeros(y.nrows(), y.ncols()), 0.0),
        None if eta > 0.0 => {
            let g = a.select_columns(&active_rows).transpose() * &r;
            let denom = g.norm_squared();
            let mu = if denom > 0.0 { (g.dot(&target) / denom).max(0.0) } else { 0.0 };
            (&r * mu, mu)
        }
        None => {
            let ast = a.select_columns(&active_rows).transpose();
            let pinv = ast
                .pseudo_inverse(1e-12)
                .map_err(|e| Error::Domain(format!("pseudo-inverse failed: {e}")))?;
            let v = pinv * &target;
            let mu = if r_norm > 0.0 { v.norm() / r_norm } else { 0.0 };
            (v, mu)
        }
    };

    let atv = a.transpose() * &v;
    let atv_norms = row_block_norms(&atv, structure);
    let dual_infeasibility = atv_norms
        .iter()
        .zip(weights.values())
        .map(|(n, w)| (n / w - 1.0).max(0.0))
        .fold(0.0, f64::max);
    let mut stationarity: f64 = 0.0;
    let mut k = 0;
    for &b in &active {
        let mut sq = 0.0;
        for i in structure.range(b) {
            sq += (atv.row(i) - target.row(k)).norm_squared();
            k += 1;
        }
        stationarity = stationarity.max(sq.sqrt() / weights.get(b));
    }
    let objective = group_objective(z, structure, weights);
    Ok(KktCertificate {
        dual_infeasibility,
        stationarity,
        slackness: v.norm() * (eta - r_norm).abs() / (1.0 + objective),
        primal_infeasibility: (r_norm - eta).max(0.0) / (1.0 + y.norm()),
        mu,
        active_blocks: active.len(),
    })
}

/// Upper end of the admissible range `δ_{2s} < 1/(2√2 + 1)`.
pub const DELTA_MAX: f64 = 1.0 / (2.0 * SQRT_2 + 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConstants {
    pub c: f64,
    pub d: f64,
    pub rho: f64,
    pub tau: f64,
}

/// Constants `(c_δ, d_δ, ρ, τ)` of the recovery guarantee under `δ_{2s}`.
pub fn recovery_constants(delta: f64) -> Result<RecoveryConstants> {
    if !(0.0..DELTA_MAX).contains(&delta) {
        return Err(Error::Domain(format!(
            "δ_2s = {delta} violates 0 ≤ δ_2s < 1/(2√2+1) ≈ {DELTA_MAX:.6}"
        )));
    }
    let k = 2.0 * SQRT_2;
    let den = (1.0 - delta) * (1.0 - delta * (k + 1.0));
    Ok(RecoveryConstants {
        c: 2.0 * (1.0 + delta * (k - 3.0)).powi(2) / den,
        d: 2.0 * (3.0 + delta * (k - 3.0)) * (1.0 + delta).sqrt() / den,
        rho: k * delta / (1.0 - delta),
        tau: (1.0 + delta).sqrt() / (1.0 - delta),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundReport {
    pub sigma_s: f64,
    pub constants: RecoveryConstants,
    /// `‖X − Ẑ‖_{2,1}^{(ω)}`
    pub error_l21: f64,
    /// `c_δ σ_s + d_δ √s η`
    pub bound_l21: f64,
    /// `‖X − Ẑ‖_F`
    pub error_l2: f64,
    /// `c_δ σ_s / √s + d_δ η`
    pub bound_l2: f64,
}

impl ErrorBoundReport {
    pub fn margin_l21(&self) -> f64 {
        self.bound_l21 - self.error_l21
    }

    pub fn margin_l2(&self) -> f64 {
        self.bound_l2 - self.error_l2
    }

    /// Both margins are at least `−slack`.
    pub fn holds(&self, slack: f64) -> bool {
        self.margin_l21() >= -slack && self.margin_l2() >= -slack
    }
}

/// Evaluates both sides of the `ℓ_{2,1}` and `ℓ_2` recovery bounds, with
/// `σ_s(X)_{2,1}` from the exhaustive oracle.
#[allow(clippy::too_many_arguments)]
pub fn error_bound(
    z_hat: &Matrix,
    x_ref: &Matrix,
    structure: &BlockStructure,
    weights: &WeightSequence,
    s: f64,
    delta: f64,
    eta: f64,
) -> Result<ErrorBoundReport> {
    if z_hat.shape() != x_ref.shape() {
        return Err(Error::Structure("Ẑ and X must have the same shape".into()));
    }
    let constants = recovery_constants(delta)?;
    let x = to_block_vector(x_ref, structure)?;
    let diff = to_block_vector(&(x_ref - z_hat), structure)?;
    let sigma_s = best_approximation_bruteforce(&x, weights, s, 2.0, 1.0)?;
    Ok(ErrorBoundReport {
        sigma_s,
        constants,
        error_l21: weighted_block_norm(&diff, weights, 2.0, 1.0)?,
        bound_l21: constants.c * sigma_s + constants.d * s.sqrt() * eta,
        error_l2: (x_ref - z_hat).norm(),
        bound_l2: constants.c * sigma_s / s.sqrt() + constants.d * eta,
    })
}
