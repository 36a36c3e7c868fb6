//! End-to-end recovery of a parametric diffusion solution from random snapshots.
//!
//! [`Experiment::run`] chains ellipticity checks, truncation, index-set enumeration,
//! sampling, snapshot generation, weighted group BPDN and held-out error evaluation,
//! and returns a [`RecoveryReport`] alongside the recovered expansion.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block_model::BlockStructure;
use crate::error::{Error, Result, Stage, StageExt};
use crate::multiindex::{
    enumerate_lambda, gauss_chebyshev_nodes, omega_weight, sample_measure_with, tensor_chebyshev_eval, IndexSet,
    MultiIndex, WeightRule, LAMBDA_RTOL,
};
use crate::pde::{
    check_wuea, choose_truncation, load_vector, solve_snapshot, AffineDiffusion, FemMesh, HilbertMap, WueaReport,
};
use crate::sensing::{build_sampling_matrix, empirical_wbrip, Provenance, SensingMatrix};
use crate::solver::{
    recovery_constants, row_block_norms, solve_wg_bpdn, RecoveryConstants, SolveDiagnostics, SolveSettings,
    DELTA_MAX,
};
use crate::Matrix;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const SAMPLING_STREAM: u64 = 1;
pub const TESTING_STREAM: u64 = 2;
/// Largest tensor grid accepted by [`reference_expansion_by_quadrature`].
pub const QUADRATURE_POINT_LIMIT: usize = 1_000_000;

fn one() -> f64 {
    1.0
}

fn default_m_test() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub report: PathBuf,
    pub index_set: PathBuf,
    /// Nodal values of every recovered coefficient, one row per multi-index.
    pub coefficients: PathBuf,
    pub sweep: PathBuf,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self {
            report: "report.json".into(),
            index_set: "lambda.txt".into(),
            coefficients: "coefficients.csv".into(),
            sweep: "sweep.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub operator: AffineDiffusion,
    /// Weight sequence `v`.
    pub weights: WeightRule,
    pub p: f64,
    pub s: f64,
    /// Oversampling constant in `m = ⌈c₀ s ln³s ln N⌉`.
    #[serde(default = "one")]
    pub c0: f64,
    #[serde(default)]
    pub seed: u64,
    /// Number of interior mesh nodes.
    pub mesh_n: usize,
    /// Target accuracy per snapshot in the `H¹₀` norm.
    pub epsilon: f64,
    #[serde(default = "default_m_test")]
    pub m_test: usize,
    /// Constant right-hand side `f`.
    #[serde(default = "one")]
    pub load: f64,
    #[serde(default)]
    pub solver: SolveSettings,
    #[serde(default)]
    pub outputs: OutputPaths,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.operator.validate()?;
        self.weights.validate()?;
        self.solver.validate()?;
        let bad = |msg: String| Err(Error::Validation(msg));
        if !(self.p > 0.0 && self.p < 1.0) {
            return bad(format!("p = {} must lie in (0, 1)", self.p));
        }
        if !(self.s >= 2.0 && self.s.is_finite()) {
            return bad(format!("sparsity s = {} must be finite and at least 2", self.s));
        }
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return bad(format!("oversampling constant c0 = {} must be positive", self.c0));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("accuracy ε = {} must be positive", self.epsilon));
        }
        if self.mesh_n == 0 || self.m_test == 0 {
            return bad("mesh_n and m_test must be positive".into());
        }
        if !self.load.is_finite() {
            return bad("load must be finite".into());
        }
        Ok(())
    }
}

/// `⌈c₀ s ln³(s) ln(max(N, 2))⌉`, at least one.
pub fn sample_count(s: f64, c0: f64, n: usize) -> usize {
    let m = c0 * s * s.ln().powi(3) * (n.max(2) as f64).ln();
    (m.ceil() as usize).max(1)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Recovery parameters, drawn from the sampling stream of `seed`.
pub fn sampling_parameters(seed: u64, m: usize, tau: usize) -> Vec<Vec<f64>> {
    sample_measure_with(&mut stream_rng(seed, SAMPLING_STREAM), m, tau)
}

/// Held-out parameters, drawn from the testing stream of `seed`.
pub fn test_parameters(seed: u64, m_test: usize, tau: usize) -> Vec<Vec<f64>> {
    sample_measure_with(&mut stream_rng(seed, TESTING_STREAM), m_test, tau)
}

/// A function of the parameters with values in a Euclidean coordinate space.
pub trait ParametricField: Sync {
    fn evaluate(&self, y: &[f64]) -> Result<Vec<f64>>;
}

/// `Σ_ν T_ν(y) · row_ν`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialExpansion {
    indices: Vec<MultiIndex>,
    coefficients: Matrix,
}

impl PolynomialExpansion {
    pub fn new(indices: Vec<MultiIndex>, coefficients: Matrix) -> Result<Self> {
        if indices.len() != coefficients.nrows() {
            return Err(Error::Structure(format!(
                "{} multi-indices for {} coefficient rows",
                indices.len(),
                coefficients.nrows()
            )));
        }
        let mut sorted = indices.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Structure("repeated multi-index in expansion".into()));
        }
        Ok(Self { indices, coefficients })
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn coefficients(&self) -> &Matrix {
        &self.coefficients
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn row_norms(&self) -> Vec<f64> {
        self.coefficients.row_iter().map(|r| r.norm()).collect()
    }

    /// `(Σ_ν ‖u_ν‖^p)^{1/p}`.
    pub fn lp_norm(&self, p: f64) -> f64 {
        self.row_norms().iter().map(|r| r.powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

impl ParametricField for PolynomialExpansion {
    fn evaluate(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.coefficients.ncols()];
        for (i, nu) in self.indices.iter().enumerate() {
            let t = tensor_chebyshev_eval(nu, y)?;
            for (o, c) in out.iter_mut().zip(self.coefficients.row(i).iter()) {
                *o += t * c;
            }
        }
        Ok(out)
    }
}

/// Direct FEM solve of the truncated problem, in `H¹₀`-orthonormal coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FemReference {
    pub operator: AffineDiffusion,
    pub mesh: FemMesh,
    pub tau: usize,
    pub load: f64,
}

impl ParametricField for FemReference {
    fn evaluate(&self, y: &[f64]) -> Result<Vec<f64>> {
        let load = self.load;
        Ok(solve_snapshot(&self.operator, y, self.tau, &self.mesh, &|_| load)?.transformed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub m_test: usize,
    /// `max_y ‖u(y) − ũ(y)‖`
    pub linf: f64,
    /// `(mean_y ‖u(y) − ũ(y)‖²)^{1/2}`
    pub l2: f64,
    pub reference_linf: f64,
    pub reference_l2: f64,
    pub linf_rel: f64,
    pub l2_rel: f64,
    #[serde(default)]
    pub coefficient_frobenius: Option<f64>,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        a
    }
}

/// Monte Carlo Bochner errors of `approx` against `truth` at the given parameters.
pub fn monte_carlo_errors(
    approx: &dyn ParametricField,
    truth: &dyn ParametricField,
    params: &[Vec<f64>],
) -> Result<ErrorEstimate> {
    if params.is_empty() {
        return Err(Error::Domain("no test parameters".into()));
    }
    let pairs = params
        .par_iter()
        .map(|y| {
            let u = truth.evaluate(y)?;
            let v = approx.evaluate(y)?;
            if u.len() != v.len() {
                return Err(Error::Structure(format!("field sizes {} and {} differ", u.len(), v.len())));
            }
            let err = u.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let norm = u.iter().map(|a| a * a).sum::<f64>().sqrt();
            Ok((err, norm))
        })
        .collect::<Result<Vec<_>>>()?;
    let m = pairs.len() as f64;
    let linf = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
    let reference_linf = pairs.iter().map(|p| p.1).fold(0.0, f64::max);
    let l2 = (pairs.iter().map(|p| p.0 * p.0).sum::<f64>() / m).sqrt();
    let reference_l2 = (pairs.iter().map(|p| p.1 * p.1).sum::<f64>() / m).sqrt();
    Ok(ErrorEstimate {
        m_test: pairs.len(),
        linf,
        l2,
        reference_linf,
        reference_l2,
        linf_rel: ratio(linf, reference_linf),
        l2_rel: ratio(l2, reference_l2),
        coefficient_frobenius: None,
    })
}

/// Held-out errors of a recovered expansion against direct FEM solves at
/// `m_test` fresh parameters from the testing stream of `seed`.
pub fn evaluate_errors(
    approx: &PolynomialExpansion,
    reference: &FemReference,
    seed: u64,
    m_test: usize,
    reference_coefficients: Option<&PolynomialExpansion>,
) -> Result<ErrorEstimate> {
    let params = test_parameters(seed, m_test, reference.tau);
    let mut est = monte_carlo_errors(approx, reference, &params)?;
    if let Some(r) = reference_coefficients {
        est.coefficient_frobenius = Some(coefficient_errors(approx, r, None)?.frobenius);
    }
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientErrors {
    /// `(Σ_ν ‖a_ν − b_ν‖²)^{1/2}`
    pub frobenius: f64,
    /// `Σ_ν ω_ν ‖a_ν − b_ν‖`, when a weight rule is given.
    pub weighted_l21: Option<f64>,
}

/// Coefficient-side distances over the union of both index sets.
pub fn coefficient_errors(
    a: &PolynomialExpansion,
    b: &PolynomialExpansion,
    rule: Option<&WeightRule>,
) -> Result<CoefficientErrors> {
    let cols = a.coefficients.ncols();
    if b.coefficients.ncols() != cols {
        return Err(Error::Structure("expansions have different value dimensions".into()));
    }
    let mut diff: BTreeMap<&MultiIndex, Vec<f64>> = BTreeMap::new();
    for (i, nu) in a.indices.iter().enumerate() {
        diff.insert(nu, a.coefficients.row(i).iter().copied().collect());
    }
    for (i, nu) in b.indices.iter().enumerate() {
        let row = diff.entry(nu).or_insert_with(|| vec![0.0; cols]);
        for (d, v) in row.iter_mut().zip(b.coefficients.row(i).iter()) {
            *d -= v;
        }
    }
    let norms: Vec<(&MultiIndex, f64)> = diff
        .iter()
        .map(|(nu, d)| (*nu, d.iter().map(|x| x * x).sum::<f64>().sqrt()))
        .collect();
    Ok(CoefficientErrors {
        frobenius: norms.iter().map(|(_, r)| r * r).sum::<f64>().sqrt(),
        weighted_l21: rule.map(|rule| norms.iter().map(|(nu, r)| omega_weight(nu, rule) * r).sum()),
    })
}

/// Projects a field of `tau` parameters onto the given Chebyshev polynomials
/// with a tensor Gauss–Chebyshev rule of `nodes` points per dimension.
pub fn reference_expansion_by_quadrature(
    field: &dyn ParametricField,
    tau: usize,
    indices: &[MultiIndex],
    nodes: usize,
) -> Result<PolynomialExpansion> {
    if nodes == 0 {
        return Err(Error::Domain("quadrature needs at least one node".into()));
    }
    let total = u32::try_from(tau)
        .ok()
        .and_then(|t| nodes.checked_pow(t))
        .filter(|&t| t <= QUADRATURE_POINT_LIMIT)
        .ok_or(Error::Guard {
            what: "quadrature points",
            count: (nodes as f64).powi(tau as i32) as u64,
            limit: QUADRATURE_POINT_LIMIT as u64,
        })?;
    let grid = gauss_chebyshev_nodes(nodes);
    let point = |mut k: usize| {
        let mut y = vec![0.0; tau];
        for yj in y.iter_mut() {
            *yj = grid[k % nodes];
            k /= nodes;
        }
        y
    };
    let values = (0..total)
        .into_par_iter()
        .map(|k| {
            let y = point(k);
            field.evaluate(&y).map(|u| (y, u))
        })
        .collect::<Result<Vec<_>>>()?;
    let cols = values.first().map_or(0, |v| v.1.len());
    let weight = 1.0 / total as f64;
    let mut coefficients = Matrix::zeros(indices.len(), cols);
    for (y, u) in &values {
        for (i, nu) in indices.iter().enumerate() {
            let t = weight * tensor_chebyshev_eval(nu, y)?;
            for (c, v) in coefficients.row_mut(i).iter_mut().zip(u) {
                *c += t * v;
            }
        }
    }
    PolynomialExpansion::new(indices.to_vec(), coefficients)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedStreams {
    pub seed: u64,
    pub sampling_stream: u64,
    pub testing_stream: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonReport {
    pub configured: f64,
    /// Share of ε spent on truncating the parameter dimension.
    pub truncation_budget: f64,
    /// `Σ_{j>τ} b_{0,j}`
    pub truncation_tail: f64,
    /// A priori bound on `‖u − u^τ‖` implied by the tail.
    pub truncation_error_bound: f64,
    /// `‖(I − P_A) b‖` on the normalized system.
    pub least_squares_residual: f64,
    /// `max(configured, least_squares_residual)`
    pub effective: f64,
    /// Constraint radius on the normalized system.
    pub radius: f64,
    /// `2^{1/p−1} √5 s^{1/2−1/p} ‖ũ‖_p` from the recovered coefficients.
    pub implied_by_s: f64,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremBounds {
    pub delta_2s: f64,
    pub supports_checked: u64,
    pub below_threshold: bool,
    pub constants: Option<RecoveryConstants>,
    /// `d √s η`, the noise part of the `ℓ_{2,1}` bound.
    pub noise_term_l21: Option<f64>,
    /// `d η`, the noise part of the `ℓ₂` bound.
    pub noise_term_l2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveRow {
    pub index: String,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub threads: usize,
    pub snapshots_ms: f64,
    pub solve_ms: f64,
    pub evaluation_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub seeds: SeedStreams,
    pub wuea: WueaReport,
    pub mu: f64,
    pub tau: usize,
    pub n_lambda: usize,
    pub max_omega_sq: f64,
    pub m: usize,
    pub normalization: String,
    pub epsilon: EpsilonReport,
    pub solver: SolveDiagnostics,
    /// Set when the solver stopped before meeting its tolerances.
    pub degraded: bool,
    pub active_rows: Vec<ActiveRow>,
    pub errors: ErrorEstimate,
    pub theorem: Option<TheoremBounds>,
    /// Energy-norm discretization error at `y = 0` from one uniform refinement.
    pub fem_energy_error_estimate: f64,
    pub timings: Timings,
}

impl RecoveryReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

/// JSON pointers at which two reports differ, ignoring `timings`.
pub fn report_differences(a: &serde_json::Value, b: &serde_json::Value) -> Vec<String> {
    fn walk(a: &serde_json::Value, b: &serde_json::Value, path: &str, out: &mut Vec<String>) {
        use serde_json::Value;
        match (a, b) {
            (Value::Object(x), Value::Object(y)) => {
                let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
                keys.sort();
                keys.dedup();
                for k in keys {
                    if path.is_empty() && k == "timings" {
                        continue;
                    }
                    let p = format!("{path}/{k}");
                    match (x.get(k), y.get(k)) {
                        (Some(u), Some(v)) => walk(u, v, &p, out),
                        _ => out.push(p),
                    }
                }
            }
            (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
                for (i, (u, v)) in x.iter().zip(y).enumerate() {
                    walk(u, v, &format!("{path}/{i}"), out);
                }
            }
            _ if a != b => out.push(if path.is_empty() { "/".into() } else { path.into() }),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(a, b, "", &mut out);
    out
}

/// `‖(I − U Uᵀ) b‖_F` with `U` an orthonormal basis of the range of `a`.
fn least_squares_residual(a: &Matrix, b: &Matrix) -> f64 {
    let svd = a.clone().svd(true, false);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    let mut proj = Matrix::zeros(b.nrows(), b.ncols());
    for (k, &sv) in svd.singular_values.iter().enumerate() {
        if sv > tol {
            let uk = u.column(k);
            let coef = uk.transpose() * b;
            proj += uk * coef;
        }
    }
    (b - proj).norm()
}

fn theorem_bounds(a: &Matrix, weights: &crate::WeightSequence, s: f64, radius: f64) -> Result<Option<TheoremBounds>> {
    // δ depends on A only through AᵀA, so the triangular factor of a QR suffices.
    let compact = if a.nrows() > a.ncols() { a.clone().qr().r() } else { a.clone() };
    let sensing = SensingMatrix::new(compact, true, Provenance::OrthonormalSystem)?;
    let structure = BlockStructure::scalar(weights.len())?;
    let est = match empirical_wbrip(&sensing, &structure, weights, 2.0 * s) {
        Ok(est) => est,
        Err(Error::Guard { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let below = est.delta < DELTA_MAX;
    let constants = if below { Some(recovery_constants(est.delta)?) } else { None };
    Ok(Some(TheoremBounds {
        delta_2s: est.delta,
        supports_checked: est.supports_checked,
        below_threshold: below,
        noise_term_l21: constants.map(|c| c.d * s.sqrt() * radius),
        noise_term_l2: constants.map(|c| c.d * radius),
        constants,
    }))
}

/// `(4/3 (E_{h/2} − E_h))^{1/2}` with `E_h = F·U_h` the discrete energy at `y = 0`.
fn fem_energy_error_estimate(op: &AffineDiffusion, mesh: &FemMesh, load: f64) -> Result<f64> {
    let energy = |mesh: &FemMesh| -> Result<f64> {
        let f = |_: f64| load;
        let u = solve_snapshot(op, &[], 0, mesh, &f)?.coefficients;
        Ok(load_vector(mesh, &f).iter().zip(&u).map(|(a, b)| a * b).sum())
    };
    let coarse = energy(mesh)?;
    let fine = energy(&FemMesh::new(2 * mesh.n + 1)?)?;
    Ok((4.0 / 3.0 * (fine - coarse)).max(0.0).sqrt())
}

/// Result of one end-to-end run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: RecoveryReport,
    pub lambda: IndexSet,
    pub mesh: FemMesh,
    /// Recovered coefficients in `H¹₀`-orthonormal coordinates.
    pub expansion: PolynomialExpansion,
}

impl Experiment {
    pub fn run(config: &ExperimentConfig) -> Result<Self> {
        let start = Instant::now();
        config.validate().stage(Stage::Config)?;
        let op = &config.operator;
        let load = config.load;
        let mesh = FemMesh::new(config.mesh_n).stage(Stage::Config)?;

        let wuea = check_wuea(op, &config.weights, config.p).stage(Stage::Ellipticity)?;
        if !wuea.passes {
            let why = wuea.diagnostic.clone().unwrap_or_else(|| format!("κ = {}", wuea.kappa));
            return Err(Error::Validation(format!("weighted ellipticity fails: {why}")).at(Stage::Ellipticity));
        }
        if !wuea.lp_sum.is_finite() {
            return Err(Error::Validation(
                "fluctuations are not compressible: Σ v_j^(2−p) b_j^p diverges".into(),
            )
            .at(Stage::Ellipticity));
        }
        let mu = op.coefficient_lower_bound();
        if !(mu > 0.0) {
            return Err(Error::Validation(format!("coefficient lower bound μ = {mu} is not positive"))
                .at(Stage::Ellipticity));
        }

        let a_min = op.mean.ess_inf();
        let f_dual = HilbertMap::new(&mesh).dual_norm(&load_vector(&mesh, &|_| load));
        let truncation_budget = config.epsilon / 2.0;
        let tau = if f_dual == 0.0 {
            0
        } else {
            choose_truncation(op, truncation_budget * mu / (a_min * f_dual), mu).stage(Stage::Truncation)?
        };
        let truncation_tail = op.b_tail(tau);

        let lambda = if tau == 0 {
            IndexSet::from_members(vec![MultiIndex::zero()], 0, config.s)
        } else {
            enumerate_lambda(&config.weights, config.s, tau)
        }
        .stage(Stage::IndexSet)?;
        let weights = lambda.weights(&config.weights).stage(Stage::IndexSet)?;
        let n_lambda = lambda.len();
        let max_omega_sq = weights.max_sq();
        if config.s < 2.0 * max_omega_sq * (1.0 - LAMBDA_RTOL) {
            return Err(Error::Validation(format!("s = {} < 2·max ω² = {}", config.s, 2.0 * max_omega_sq))
                .at(Stage::IndexSet));
        }

        let m = sample_count(config.s, config.c0, n_lambda);
        let samples = sampling_parameters(config.seed, m, tau);
        let a = build_sampling_matrix(&lambda, &samples, true).stage(Stage::Sampling)?.into_entries();

        let t = Instant::now();
        let rows = samples
            .par_iter()
            .map(|y| solve_snapshot(op, y, tau, &mesh, &|_| load).map(|s| s.transformed))
            .collect::<Result<Vec<_>>>()
            .stage(Stage::Snapshots)?;
        let scale = (m as f64).sqrt();
        let b = Matrix::from_fn(m, mesh.n, |i, j| rows[i][j] / scale);
        let snapshots_ms = t.elapsed().as_secs_f64() * 1e3;

        let t = Instant::now();
        let ls = least_squares_residual(&a, &b);
        let effective = config.epsilon.max(ls);
        let radius = 2.0 * effective;
        let structure = BlockStructure::scalar(n_lambda).stage(Stage::Recovery)?;
        let solution = solve_wg_bpdn(&a, &b, &structure, &weights, radius, &config.solver).stage(Stage::Recovery)?;
        let theorem = theorem_bounds(&a, &weights, config.s, radius).stage(Stage::Recovery)?;
        let solve_ms = t.elapsed().as_secs_f64() * 1e3;

        let norms = row_block_norms(&solution.z, &structure);
        let peak = norms.iter().copied().fold(0.0, f64::max);
        let active_rows = lambda
            .iter()
            .zip(&norms)
            .filter(|(_, &r)| r > 1e-12 * peak)
            .map(|(nu, &norm)| ActiveRow {
                index: nu.to_string(),
                norm,
            })
            .collect();
        let expansion = PolynomialExpansion::new(lambda.members().to_vec(), solution.z.clone())?;

        let t = Instant::now();
        let reference = FemReference {
            operator: op.clone(),
            mesh,
            tau,
            load,
        };
        let errors = evaluate_errors(&expansion, &reference, config.seed, config.m_test, None)
            .stage(Stage::Evaluation)?;
        let fem = fem_energy_error_estimate(op, &mesh, load).stage(Stage::Evaluation)?;
        let evaluation_ms = t.elapsed().as_secs_f64() * 1e3;

        let p = config.p;
        let implied_by_s =
            2f64.powf(1.0 / p - 1.0) * 5f64.sqrt() * config.s.powf(0.5 - 1.0 / p) * expansion.lp_norm(p);
        let report = RecoveryReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config: config.clone(),
            seeds: SeedStreams {
                seed: config.seed,
                sampling_stream: SAMPLING_STREAM,
                testing_stream: TESTING_STREAM,
            },
            wuea,
            mu,
            tau,
            n_lambda,
            max_omega_sq,
            m,
            normalization: "rows of A and b divided by sqrt(m); constraint ||Az - b|| <= 2 eps_eff, \
                            i.e. 2 sqrt(m) eps_eff on the unnormalized system"
                .into(),
            epsilon: EpsilonReport {
                configured: config.epsilon,
                truncation_budget,
                truncation_tail,
                truncation_error_bound: a_min * f_dual / (mu * mu) * truncation_tail,
                least_squares_residual: ls,
                effective,
                radius,
                implied_by_s,
                consistent: implied_by_s <= effective,
            },
            solver: solution.diagnostics(),
            degraded: !solution.converged(),
            active_rows,
            errors,
            theorem,
            fem_energy_error_estimate: fem,
            timings: Timings {
                threads: rayon::current_num_threads(),
                snapshots_ms,
                solve_ms,
                evaluation_ms,
                total_ms: start.elapsed().as_secs_f64() * 1e3,
            },
        };
        Ok(Self {
            report,
            lambda,
            mesh,
            expansion,
        })
    }

    /// Recovered coefficients as nodal values, one row per multi-index.
    pub fn nodal_coefficients(&self) -> Matrix {
        let z = self.expansion.coefficients();
        let map = HilbertMap::new(&self.mesh);
        let rows: Vec<Vec<f64>> = z.row_iter().map(|r| map.inverse(&r.iter().copied().collect::<Vec<_>>())).collect();
        Matrix::from_fn(z.nrows(), z.ncols(), |i, j| rows[i][j])
    }

    /// Writes report, index set and nodal coefficients under `dir`.
    pub fn write_outputs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let out = &self.report.config.outputs;
        self.report.write_json(dir.join(&out.report))?;
        std::fs::write(dir.join(&out.index_set), self.lambda.to_text())?;
        crate::io::write_matrix_file(dir.join(&out.coefficients), &self.nodal_coefficients())
    }
}

/// Runs the full pipeline and returns its report.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RecoveryReport> {
    Experiment::run(config).map(|e| e.report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub s: f64,
    pub seed: u64,
    pub n_lambda: usize,
    pub m: usize,
    pub linf: f64,
    pub linf_rel: f64,
    pub l2: f64,
    pub l2_rel: f64,
    pub degraded: bool,
}

/// One run per `(s, seed)` pair, in that nesting order.
pub fn run_sweep(base: &ExperimentConfig, s_values: &[f64], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(s_values.len() * seeds.len());
    for &s in s_values {
        for &seed in seeds {
            let config = ExperimentConfig { s, seed, ..base.clone() };
            let r = run_experiment(&config)?;
            rows.push(SweepRow {
                s,
                seed,
                n_lambda: r.n_lambda,
                m: r.m,
                linf: r.errors.linf,
                linf_rel: r.errors.linf_rel,
                l2: r.errors.l2,
                l2_rel: r.errors.l2_rel,
                degraded: r.degraded,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    crate::io::write_records(path, rows)
}
