//! Benchmark problems, the Lorenz identification pipeline, error metrics,
//! and the experiment runner comparing a baseline regression against a
//! regularized or sparsity-aware candidate on each case.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::anova::{fit_anova_pgd, AnovaError};
use crate::fit::{
    fit, fit_s2pgd_dimension_scan, log_grid, Dataset, FitConfig, FitError, MasConfig, Method,
    Selection, SparseDims,
};
use crate::model::SeparatedModel;
use crate::sampling::{self, SamplingError};
use crate::solvers::{self, SolverError};

#[derive(Error, Debug)]
pub enum BenchError {
    #[error("unknown case '{0}'; valid ids: ex1_poly5d, ex2_triglog5d, lorenz_sindy, s2_ex1_cheb3d, s2_ex2_cheb5d, anova_2d")]
    UnknownCase(String),
    #[error("point outside the case domain: {0}")]
    DomainViolation(String),
    #[error("integration blew up at t = {0}")]
    NonFiniteBlowup(f64),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("reference vector has zero norm")]
    ZeroReferenceNorm,
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Anova(#[from] AnovaError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseId {
    Ex1Poly5d,
    Ex2Triglog5d,
    LorenzSindy,
    S2Ex1Cheb3d,
    S2Ex2Cheb5d,
    Anova2d,
}

impl CaseId {
    pub const ALL: [CaseId; 6] = [
        CaseId::Ex1Poly5d,
        CaseId::Ex2Triglog5d,
        CaseId::LorenzSindy,
        CaseId::S2Ex1Cheb3d,
        CaseId::S2Ex2Cheb5d,
        CaseId::Anova2d,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CaseId::Ex1Poly5d => "ex1_poly5d",
            CaseId::Ex2Triglog5d => "ex2_triglog5d",
            CaseId::LorenzSindy => "lorenz_sindy",
            CaseId::S2Ex1Cheb3d => "s2_ex1_cheb3d",
            CaseId::S2Ex2Cheb5d => "s2_ex2_cheb5d",
            CaseId::Anova2d => "anova_2d",
        }
    }

    /// Sampling box the case's designs are drawn from. `None` for the Lorenz
    /// case, whose data come from a trajectory rather than a box.
    ///
    /// Two boxes are narrowed relative to the nominal `[-1, 1]` cube so that
    /// every log argument stays positive and away from its singularity:
    /// `log(3 x_4 + 1.5)` in the five-dimensional trig/log cases requires
    /// `x_4 > -0.5`, and values near the pole would let a handful of corner
    /// samples dominate every least-squares objective.
    pub fn domain(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            CaseId::Ex1Poly5d => Some(vec![(-0.51, 0.51); 5]),
            CaseId::Ex2Triglog5d | CaseId::S2Ex2Cheb5d => Some(vec![
                (-1.0, 1.0),
                (-1.0, 1.0),
                (-1.0, 1.0),
                (-1.0 / 3.0, 1.0),
                (-1.0, 1.0),
            ]),
            CaseId::LorenzSindy => None,
            CaseId::S2Ex1Cheb3d => Some(vec![(-1.0, 1.0); 3]),
            // x >= 0 keeps x^1.75 real; y bounded away from 0.6 keeps the
            // log((y - 0.6)^4) term finite
            CaseId::Anova2d => Some(vec![(0.0, 1.0), (1.1, 2.1)]),
        }
    }
}

impl std::str::FromStr for CaseId {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, BenchError> {
        CaseId::ALL
            .iter()
            .find(|c| c.as_str() == s)
            .copied()
            .ok_or_else(|| BenchError::UnknownCase(s.to_string()))
    }
}

fn t5(x: f64) -> f64 {
    16.0 * x.powi(5) - 20.0 * x.powi(3) + 5.0 * x
}

fn t2(x: f64) -> f64 {
    2.0 * x * x - 1.0
}

fn t4(x: f64) -> f64 {
    8.0 * x.powi(4) - 8.0 * x * x + 1.0
}

/// Evaluates the analytic benchmark function of `id` at `point`. Log
/// arguments that are not strictly positive are reported as domain
/// violations rather than returning non-finite values.
pub fn eval_case_function(id: CaseId, point: &[f64]) -> Result<f64, BenchError> {
    let expect = |d: usize| -> Result<(), BenchError> {
        if point.len() != d {
            return Err(BenchError::Invalid(format!(
                "{} expects {d} coordinates, got {}",
                id.as_str(),
                point.len()
            )));
        }
        Ok(())
    };
    match id {
        CaseId::Ex1Poly5d => {
            expect(5)?;
            let (x1, x2, x3, x4, x5) = (point[0], point[1], point[2], point[3], point[4]);
            Ok((8.0 * x1.powi(3) - 6.0 * x1 - 0.5 * x2).powi(2)
                + (4.0 * x3.powi(3) - 3.0 * x3 - 0.25 * x4).powi(2)
                + 0.1 * (2.0 * x5 * x5 - 1.0))
        }
        CaseId::Ex2Triglog5d => {
            expect(5)?;
            let (x1, x2, x3, x4, x5) = (point[0], point[1], point[2], point[3], point[4]);
            let arg = 3.0 * x4 + 1.5;
            if arg <= 0.0 {
                return Err(BenchError::DomainViolation(format!(
                    "log argument 3*x4 + 1.5 = {arg} at x4 = {x4}"
                )));
            }
            Ok((x1 * x2).cos()
                * (((2.0 * x3).sin() - 3.14) * arg.ln() * x5.cos()
                    + x4.exp() * x3.cosh() * x5.sinh()))
        }
        CaseId::LorenzSindy => Err(BenchError::Invalid(
            "lorenz_sindy has no closed-form target; use the trajectory pipeline".into(),
        )),
        CaseId::S2Ex1Cheb3d => {
            expect(3)?;
            let (x1, x2, x3) = (point[0], point[1], point[2]);
            Ok(((2.0 * x1).sin() - 3.14) * t5(x2) + x3.exp() * x1.cosh())
        }
        CaseId::S2Ex2Cheb5d => {
            expect(5)?;
            let (x1, x2, x3, x4, x5) = (point[0], point[1], point[2], point[3], point[4]);
            let arg = 3.0 * x4 + 1.5;
            if arg <= 0.0 {
                return Err(BenchError::DomainViolation(format!(
                    "log argument 3*x4 + 1.5 = {arg} at x4 = {x4}"
                )));
            }
            Ok((t5(x1) + 2.0 * x1)
                * (t2(x2) + 2.0 * t4(x2))
                * (((2.0 * x3).sin() - 3.14) * arg.ln() * x5.cos()
                    + x4.exp() * x3.cosh() * x5.sinh()))
        }
        CaseId::Anova2d => {
            expect(2)?;
            let (x, y) = (point[0], point[1]);
            if x < 0.0 {
                return Err(BenchError::DomainViolation(format!("x^1.75 needs x >= 0, got {x}")));
            }
            let shifted = y - 0.6;
            if shifted == 0.0 {
                return Err(BenchError::DomainViolation("log((y - 0.6)^4) at y = 0.6".into()));
            }
            // reading the 10 log(y-0.6)^4 term as 10 * log((y - 0.6)^4)
            Ok(-2.0 * (3.0 * x.powf(1.75)).cos()
                + 10.0 * shifted.powi(4).ln()
                + 6.0 * x.cos() * (y - 0.3 * y * y))
        }
    }
}

/// Relative L2 error ||z - z_pred|| / ||z||.
pub fn relative_l2_error(z: &DVector<f64>, z_pred: &DVector<f64>) -> Result<f64, BenchError> {
    if z.len() != z_pred.len() {
        return Err(BenchError::Invalid(format!(
            "length mismatch: {} vs {}",
            z.len(),
            z_pred.len()
        )));
    }
    let n = z.norm();
    if n == 0.0 {
        return Err(BenchError::ZeroReferenceNorm);
    }
    Ok((z - z_pred).norm() / n)
}

#[derive(Debug, Clone, Copy)]
pub struct LorenzConfig {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub init: [f64; 3],
    pub dt: f64,
    pub horizon: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for LorenzConfig {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            init: [-8.0, 7.0, 27.0],
            dt: 1e-3,
            horizon: 20.0,
            samples: 102,
            seed: 0,
        }
    }
}

pub fn lorenz_rhs(state: [f64; 3], sigma: f64, rho: f64, beta: f64) -> [f64; 3] {
    let [x, y, z] = state;
    [sigma * (y - x), x * (rho - z) - y, x * y - beta * z]
}

/// Classical fourth-order Runge-Kutta on an autonomous system. Returns the
/// states at t = 0, dt, 2 dt, … up to the horizon (inclusive of the start;
/// a zero horizon yields just the initial state).
pub fn integrate_rk4<F>(
    rhs: F,
    y0: &[f64],
    dt: f64,
    horizon: f64,
) -> Result<Vec<Vec<f64>>, BenchError>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if dt <= 0.0 {
        return Err(BenchError::Invalid("dt must be positive".into()));
    }
    let steps = (horizon / dt).round().max(if horizon > 0.0 { 1.0 } else { 0.0 }) as usize;
    // land exactly on the horizon even when it is not a multiple of dt
    let dt = if steps > 0 { horizon / steps as f64 } else { dt };
    let mut states = Vec::with_capacity(steps + 1);
    let mut y = y0.to_vec();
    states.push(y.clone());
    let n = y.len();
    for step in 0..steps {
        let k1 = rhs(&y);
        let y2: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * dt * k1[i]).collect();
        let k2 = rhs(&y2);
        let y3: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * dt * k2[i]).collect();
        let k3 = rhs(&y3);
        let y4: Vec<f64> = (0..n).map(|i| y[i] + dt * k3[i]).collect();
        let k4 = rhs(&y4);
        for i in 0..n {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(BenchError::NonFiniteBlowup((step + 1) as f64 * dt));
        }
        states.push(y.clone());
    }
    Ok(states)
}

/// Lorenz trajectory with derivatives taken analytically from the right-hand
/// side at each state (no numerical differentiation).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<[f64; 3]>,
    pub derivs: Vec<[f64; 3]>,
}

pub fn integrate_lorenz(cfg: &LorenzConfig) -> Result<Trajectory, BenchError> {
    let rhs = |y: &[f64]| lorenz_rhs([y[0], y[1], y[2]], cfg.sigma, cfg.rho, cfg.beta).to_vec();
    let states = integrate_rk4(rhs, &cfg.init, cfg.dt, cfg.horizon)?;
    let states: Vec<[f64; 3]> = states.into_iter().map(|s| [s[0], s[1], s[2]]).collect();
    let times: Vec<f64> = (0..states.len()).map(|i| i as f64 * cfg.dt).collect();
    let derivs: Vec<[f64; 3]> =
        states.iter().map(|&s| lorenz_rhs(s, cfg.sigma, cfg.rho, cfg.beta)).collect();
    Ok(Trajectory { times, states, derivs })
}

pub const SINDY_FEATURE_NAMES: [&str; 8] = ["1", "x", "y", "z", "xy", "xz", "yz", "xyz"];

/// The eight multilinear monomials of (x, y, z).
pub fn sindy_feature_row(x: f64, y: f64, z: f64) -> [f64; 8] {
    [1.0, x, y, z, x * y, x * z, y * z, x * y * z]
}

/// Samples `n` trajectory indices without replacement and assembles the
/// multilinear feature matrix plus the three derivative target vectors.
pub fn build_sindy_dataset(
    traj: &Trajectory,
    n: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, [DVector<f64>; 3], Vec<usize>), BenchError> {
    if n > traj.states.len() {
        return Err(BenchError::Invalid(format!(
            "requested {n} samples but the trajectory has {} states",
            traj.states.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..traj.states.len()).collect();
    for i in (1..idx.len()).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx.truncate(n);
    idx.sort_unstable();
    let mut design = DMatrix::zeros(n, 8);
    let mut targets = [DVector::zeros(n), DVector::zeros(n), DVector::zeros(n)];
    for (row, &i) in idx.iter().enumerate() {
        let [x, y, z] = traj.states[i];
        for (col, v) in sindy_feature_row(x, y, z).iter().enumerate() {
            design[(row, col)] = *v;
        }
        for k in 0..3 {
            targets[k][row] = traj.derivs[i][k];
        }
    }
    Ok((design, targets, idx))
}

/// Result of the Lorenz identification: per target equation, the ridge
/// coefficients before thresholding, the refit coefficients after the
/// sequential thresholded least-squares filter, and the detected supports.
#[derive(Debug, Clone, Serialize)]
pub struct LorenzIdentification {
    pub pre_stls: Vec<Vec<f64>>,
    pub post_stls: Vec<Vec<f64>>,
    pub supports: Vec<Vec<usize>>,
    pub construction_error: f64,
    pub validation_error: f64,
}

/// Identifies the Lorenz dynamics from sampled trajectory data: ridge
/// regression on the construction split (the penalty picked on the
/// validation split), then STLS refit with `threshold`. `split` is the
/// construction fraction, normally 0.8.
pub fn run_lorenz_identification(
    cfg: &LorenzConfig,
    threshold: f64,
    split: f64,
) -> Result<LorenzIdentification, BenchError> {
    if !(0.0 < split && split < 1.0) {
        return Err(BenchError::Invalid("construction split must lie in (0, 1)".into()));
    }
    let traj = integrate_lorenz(cfg)?;
    let (design, targets, _) = build_sindy_dataset(&traj, cfg.samples, cfg.seed)?;
    let n = design.nrows();
    let n_con = ((n as f64 * split).round() as usize).clamp(1, n - 1);
    let con: Vec<usize> = (0..n_con).collect();
    let val: Vec<usize> = (n_con..n).collect();
    let take = |m: &DMatrix<f64>, rows: &[usize]| {
        DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
    };
    let takev = |v: &DVector<f64>, rows: &[usize]| {
        DVector::from_iterator(rows.len(), rows.iter().map(|&r| v[r]))
    };
    let dcon = take(&design, &con);
    let dval = take(&design, &val);

    let mut pre = Vec::new();
    let mut post = Vec::new();
    let mut supports = Vec::new();
    let mut con_sse = 0.0;
    let mut val_sse = 0.0;
    let mut con_norm = 0.0;
    let mut val_norm = 0.0;
    for t in &targets {
        let tcon = takev(t, &con);
        let tval = takev(t, &val);
        // pick the ridge penalty by validation error over a small grid
        let mut best = (f64::INFINITY, 0.0);
        for lambda in [0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2] {
            let a = solvers::solve_ridge(&dcon, &tcon, lambda)?;
            let err = (&tval - &dval * &a).norm_squared();
            if err < best.0 {
                best = (err, lambda);
            }
        }
        let a = solvers::solve_ridge(&dcon, &tcon, best.1)?;
        let (support, refit) = solvers::stls_refit(&dcon, &tcon, &a, threshold)?;
        con_sse += (&tcon - &dcon * &refit).norm_squared();
        val_sse += (&tval - &dval * &refit).norm_squared();
        con_norm += tcon.norm_squared();
        val_norm += tval.norm_squared();
        pre.push(a.iter().cloned().collect());
        post.push(refit.iter().cloned().collect());
        supports.push(support);
    }
    Ok(LorenzIdentification {
        pre_stls: pre,
        post_stls: post,
        supports,
        construction_error: (con_sse / con_norm).sqrt(),
        validation_error: (val_sse / val_norm).sqrt(),
    })
}

/// Simulates the identified multilinear system forward with RK4.
pub fn simulate_identified(
    coeffs: &[Vec<f64>],
    init: [f64; 3],
    dt: f64,
    horizon: f64,
) -> Result<Vec<Vec<f64>>, BenchError> {
    let c = coeffs.to_vec();
    let rhs = move |y: &[f64]| -> Vec<f64> {
        let row = sindy_feature_row(y[0], y[1], y[2]);
        (0..3)
            .map(|k| row.iter().zip(&c[k]).map(|(f, a)| f * a).sum())
            .collect()
    };
    integrate_rk4(rhs, &init, dt, horizon)
}

/// Comparison report for one benchmark case, aggregated over seeds.
#[derive(Debug, Clone, Serialize)]
pub struct CaseReport {
    pub case: String,
    pub seeds: Vec<u64>,
    pub baseline_err: Vec<f64>,
    pub candidate_err: Vec<f64>,
    /// Median error reduction of the candidate relative to the baseline, in
    /// percent.
    pub reduction_pct: f64,
    pub pass: bool,
    pub criterion: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalized_dim: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

impl CaseReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Runner knobs; `None` keeps each case's published protocol.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Override the test-set size (the five-dimensional cases default to
    /// their full published sizes, which can be slow in debug builds).
    pub test_points: Option<usize>,
}

fn median(xs: &[f64]) -> f64 {
    let mut s: Vec<f64> = xs.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    if s.is_empty() {
        return f64::NAN;
    }
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn eval_on(
    id: CaseId,
    points: &DMatrix<f64>,
) -> Result<DVector<f64>, BenchError> {
    let d = points.ncols();
    let mut out = DVector::zeros(points.nrows());
    for i in 0..points.nrows() {
        let p: Vec<f64> = (0..d).map(|k| points[(i, k)]).collect();
        out[i] = eval_case_function(id, &p)?;
    }
    Ok(out)
}

fn model_test_error(
    model: &SeparatedModel,
    points: &DMatrix<f64>,
    truth: &DVector<f64>,
) -> Result<f64, BenchError> {
    let pred = model
        .evaluate_batch(points)
        .map_err(|e| BenchError::Invalid(e.to_string()))?;
    relative_l2_error(truth, &pred)
}

fn spgd_baseline_config(seed: u64) -> FitConfig {
    FitConfig {
        method: Method::Spgd,
        mas: MasConfig { initial_degree: 1, max_degree: 4, ..Default::default() },
        max_modes: 15,
        tol_fp: 1e-4,
        max_fp_iters: 30,
        seed,
        ..Default::default()
    }
}

fn rspgd_candidate_config(alpha: f64, seed: u64) -> FitConfig {
    FitConfig {
        method: Method::Rspgd,
        mas: MasConfig { initial_degree: 1, max_degree: 4, ..Default::default() },
        max_modes: 15,
        tol_fp: 1e-4,
        max_fp_iters: 30,
        lambda_grid: log_grid(1e-8, 1e-1, 10),
        alpha: vec![alpha],
        selection: Selection::Split(0.2),
        seed,
        ..Default::default()
    }
}

/// Candidate configuration for the deterministic sparse-grid Chebyshev case:
/// start every mode at degree 3 in the unpenalized dimensions and always
/// escalate, so accepted modes carry accurate low-rank factors before
/// enrichment runs out of held-out improvement. Grid designs alias
/// high-degree basis functions, so mode quality has to come first.
fn s2pgd_ex1_config(sparse_degree: usize, chi: usize, d: usize, seed: u64) -> FitConfig {
    FitConfig {
        method: Method::S2pgd,
        mas: MasConfig { initial_degree: 3, max_degree: 4, stagnation_tol: 10.0, patience: 1 },
        max_modes: 8,
        tol_fp: 1e-5,
        max_fp_iters: 30,
        lambda_grid: log_grid(1e-2, 1.0, 13),
        selection: Selection::KFold(5),
        sparse_dims: Some(SparseDims::Auto),
        sparse_degree: Some(sparse_degree),
        chi_lim: Some(vec![chi; d]),
        patience_modes: 3,
        seed,
        ..Default::default()
    }
}

/// Candidate configuration for the five-dimensional Chebyshev case trained
/// on LHS data. The target is strongly corner-dominated, so single-start
/// alternating fits land in poor fixed points; multi-start plus a hard
/// in-solver sparsity cap and a held-out split keep the enrichment honest.
fn s2pgd_ex2_config(sparse_degree: usize, chi: usize, d: usize, seed: u64) -> FitConfig {
    FitConfig {
        method: Method::S2pgd,
        mas: MasConfig { initial_degree: 4, max_degree: 4, stagnation_tol: 0.1, patience: 1 },
        max_modes: 20,
        tol_fp: 1e-5,
        max_fp_iters: 50,
        lambda_grid: log_grid(1e-3, 1.0, 9),
        selection: Selection::Split(0.25),
        sparse_dims: Some(SparseDims::Auto),
        sparse_degree: Some(sparse_degree),
        chi_lim: Some(vec![chi; d]),
        chi_in_solver: true,
        patience_modes: 3,
        n_starts: 6,
        seed,
        ..Default::default()
    }
}

struct SeedOutcome {
    baseline: f64,
    candidate: f64,
    penalized_dim: Option<usize>,
    /// Baseline/candidate model pair, kept for slice plotting; `None` for
    /// cases without a separated-model comparison.
    models: Option<(SeparatedModel, SeparatedModel)>,
}

fn run_rspgd_case(
    id: CaseId,
    n_train: usize,
    n_test: usize,
    alpha: f64,
    seed: u64,
) -> Result<SeedOutcome, BenchError> {
    let domain = id.domain().expect("box-sampled case");
    let d = domain.len();
    let train = sampling::lhs(n_train, d, &domain, seed)?;
    let test = sampling::lhs(n_test, d, &domain, seed.wrapping_add(777_000))?;
    let truth_train = eval_on(id, &train.points)?;
    let truth_test = eval_on(id, &test.points)?;
    let data = Dataset::new(train.points, truth_train, domain)?;
    let (base, _) = fit(&data, &spgd_baseline_config(seed))?;
    let (cand, _) = fit(&data, &rspgd_candidate_config(alpha, seed))?;
    Ok(SeedOutcome {
        baseline: model_test_error(&base, &test.points, &truth_test)?,
        candidate: model_test_error(&cand, &test.points, &truth_test)?,
        penalized_dim: None,
        models: Some((base, cand)),
    })
}

fn run_s2pgd_case(
    id: CaseId,
    sparse_degree: usize,
    chi: usize,
    n_test: usize,
    seed: u64,
    lhs_train: Option<usize>,
) -> Result<SeedOutcome, BenchError> {
    let domain = id.domain().expect("box-sampled case");
    let d = domain.len();
    let train_points = match lhs_train {
        Some(n) => sampling::lhs(n, d, &domain, seed)?.points,
        None => sampling::smolyak_grid(d, 3, &domain)?.points,
    };
    let test = sampling::lhs(n_test, d, &domain, seed.wrapping_add(777_000))?;
    let truth_train = eval_on(id, &train_points)?;
    let truth_test = eval_on(id, &test.points)?;
    let data = Dataset::new(train_points, truth_train, domain)?;
    let (base, _) = fit(&data, &spgd_baseline_config(seed))?;
    let (cand, penalized_dim) = if lhs_train.is_none() {
        let cfg = s2pgd_ex1_config(sparse_degree, chi, d, seed);
        let (model, report, _) = fit_s2pgd_dimension_scan(&data, &cfg)?;
        (model, report.penalized_dim)
    } else {
        // a cheap screening scan picks the penalized dimension; the winner is
        // then refit with the full-effort configuration
        let full = s2pgd_ex2_config(sparse_degree, chi, d, seed);
        let mut screen = full.clone();
        screen.max_modes = 3;
        screen.n_starts = 2;
        screen.lambda_grid = log_grid(1e-3, 1.0, 5);
        let (_, _, dim) = fit_s2pgd_dimension_scan(&data, &screen)?;
        let mut cfg = full;
        cfg.sparse_dims = Some(SparseDims::Dims(vec![dim]));
        let (model, _) = fit(&data, &cfg)?;
        (model, Some(dim + 1))
    };
    Ok(SeedOutcome {
        baseline: model_test_error(&base, &test.points, &truth_test)?,
        candidate: model_test_error(&cand, &test.points, &truth_test)?,
        penalized_dim,
        models: Some((base, cand)),
    })
}

/// Fits the baseline and candidate models of a box-sampled regression case
/// for one seed, for slice plotting. Cases without a separated-model pair
/// (Lorenz, anchored-decomposition) yield `None`.
pub fn fit_case_models(
    id: CaseId,
    seed: u64,
) -> Result<Option<(SeparatedModel, SeparatedModel)>, BenchError> {
    let outcome = match id {
        CaseId::Ex1Poly5d => run_rspgd_case(id, 160, 10, 0.1, seed)?,
        CaseId::Ex2Triglog5d => run_rspgd_case(id, 290, 10, 0.5, seed)?,
        CaseId::S2Ex1Cheb3d => run_s2pgd_case(id, 8, 2, 10, seed, None)?,
        CaseId::S2Ex2Cheb5d => run_s2pgd_case(id, 6, 2, 10, seed, Some(290))?,
        CaseId::LorenzSindy | CaseId::Anova2d => return Ok(None),
    };
    Ok(outcome.models)
}

fn run_anova_case(n_test: usize, seed: u64) -> Result<SeedOutcome, BenchError> {
    let id = CaseId::Anova2d;
    let domain = id.domain().unwrap();
    let anchor: Vec<f64> =
        domain.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
    let plan = sampling::cross_plan(&anchor, &[10, 10], &domain)?;
    let coupling = sampling::lhs(4, 2, &domain, seed)?;
    let f = |p: &[f64]| eval_case_function(id, p).expect("anova_2d domain excludes singularities");
    let model = fit_anova_pgd(f, &plan, &coupling.points, 2)?;
    let test = sampling::lhs(n_test, 2, &domain, seed.wrapping_add(777_000))?;
    let truth = eval_on(id, &test.points)?;
    let pred = model.evaluate_batch(&test.points)?;
    let candidate = relative_l2_error(&truth, &pred)?;
    // baseline: plain greedy fit with the same 25-point budget (1 anchor +
    // 10 + 10 cross points + 4 coupling points) drawn as a single LHS design
    let train = sampling::lhs(25, 2, &domain, seed.wrapping_add(13))?;
    let truth_train = eval_on(id, &train.points)?;
    let data = Dataset::new(train.points, truth_train, domain)?;
    let (base, _) = fit(&data, &spgd_baseline_config(seed))?;
    Ok(SeedOutcome {
        baseline: model_test_error(&base, &test.points, &truth)?,
        candidate,
        penalized_dim: None,
        models: None,
    })
}

const LORENZ_TRUE_COEFFS: [(usize, usize, f64); 7] = [
    (0, 1, -10.0),
    (0, 2, 10.0),
    (1, 1, 28.0),
    (1, 2, -1.0),
    (1, 5, -1.0),
    (2, 4, 1.0),
    (2, 3, -8.0 / 3.0),
];

fn run_lorenz_case(seed: u64) -> Result<(SeedOutcome, bool), BenchError> {
    let cfg = LorenzConfig { seed, ..Default::default() };
    let ident = run_lorenz_identification(&cfg, 0.1, 0.8)?;
    let expected: [Vec<usize>; 3] = [vec![1, 2], vec![1, 2, 5], vec![3, 4]];
    let supports_ok = ident.supports == expected;
    let coeffs_ok = LORENZ_TRUE_COEFFS.iter().all(|&(eq, j, truth)| {
        (ident.post_stls[eq][j] - truth).abs() / truth.abs() <= 0.005
    });
    let err = ident.construction_error.max(ident.validation_error);
    let pass = supports_ok && coeffs_ok && err < 2e-4;
    // pre-STLS full ridge fit serves as the "baseline", the thresholded
    // refit as the "candidate"; both errors are combined relative errors
    Ok((
        SeedOutcome {
            baseline: ident.validation_error,
            candidate: err,
            penalized_dim: None,
            models: None,
        },
        pass,
    ))
}

/// Runs one benchmark case over the given seeds and aggregates the per-seed
/// baseline/candidate test errors into a pass/fail report. A failing seed is
/// recorded as a warning without aborting the sweep.
pub fn run_case(id: CaseId, seeds: &[u64], opts: RunOptions) -> Result<CaseReport, BenchError> {
    if seeds.is_empty() {
        return Err(BenchError::Invalid("at least one seed is required".into()));
    }
    let mut baseline = Vec::new();
    let mut candidate = Vec::new();
    let mut used_seeds = Vec::new();
    let mut warnings = Vec::new();
    let mut penalized_dims: Vec<usize> = Vec::new();
    let mut lorenz_all_pass = true;
    for &seed in seeds {
        let outcome = match id {
            CaseId::Ex1Poly5d => {
                run_rspgd_case(id, 160, opts.test_points.unwrap_or(54_000), 0.1, seed)
            }
            CaseId::Ex2Triglog5d => {
                run_rspgd_case(id, 290, opts.test_points.unwrap_or(2_000), 0.5, seed)
            }
            CaseId::S2Ex1Cheb3d => {
                run_s2pgd_case(id, 8, 2, opts.test_points.unwrap_or(5_000), seed, None)
            }
            CaseId::S2Ex2Cheb5d => {
                run_s2pgd_case(id, 6, 2, opts.test_points.unwrap_or(2_000), seed, Some(290))
            }
            CaseId::Anova2d => run_anova_case(opts.test_points.unwrap_or(2_000), seed),
            CaseId::LorenzSindy => run_lorenz_case(seed).map(|(o, p)| {
                lorenz_all_pass &= p;
                o
            }),
        };
        match outcome {
            Ok(o) => {
                baseline.push(o.baseline);
                candidate.push(o.candidate);
                used_seeds.push(seed);
                if let Some(p) = o.penalized_dim {
                    penalized_dims.push(p);
                }
            }
            Err(e) => warnings.push(format!("seed {seed} failed: {e}")),
        }
    }
    if used_seeds.is_empty() {
        return Err(BenchError::Invalid(format!(
            "every seed failed for {}: {warnings:?}",
            id.as_str()
        )));
    }
    let med_base = median(&baseline);
    let med_cand = median(&candidate);
    let reductions: Vec<f64> = baseline
        .iter()
        .zip(&candidate)
        .map(|(b, c)| if *b > 0.0 { 100.0 * (b - c) / b } else { 0.0 })
        .collect();
    let reduction_pct = median(&reductions);
    // majority vote across seeds
    let penalized_dim = {
        let mut counts: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
        for &p in &penalized_dims {
            *counts.entry(p).or_insert(0) += 1;
        }
        counts.into_iter().max_by_key(|&(_, c)| c).map(|(p, _)| p)
    };
    let (pass, target) = match id {
        CaseId::Ex1Poly5d => (reduction_pct >= 30.0, "median test-error reduction >= 30%".to_string()),
        CaseId::Ex2Triglog5d => (reduction_pct >= 25.0, "median test-error reduction >= 25%".to_string()),
        CaseId::S2Ex1Cheb3d => (
            med_cand <= 0.02 && med_base >= 0.50 && penalized_dim == Some(2),
            "candidate <= 2%, baseline >= 50%, penalized dimension 2".to_string(),
        ),
        CaseId::S2Ex2Cheb5d => (
            med_cand <= 0.10 && med_base >= 0.25 && penalized_dim == Some(1),
            "median candidate <= 10%, baseline >= 25%, penalized dimension 1".to_string(),
        ),
        CaseId::Anova2d => (
            med_cand <= 0.05 && med_base >= 2.0 * med_cand,
            "candidate <= 5% and baseline at least 2x worse".to_string(),
        ),
        CaseId::LorenzSindy => (
            lorenz_all_pass,
            "exact supports, coefficients within 0.5%, error < 0.02%".to_string(),
        ),
    };
    Ok(CaseReport {
        case: id.as_str().to_string(),
        seeds: used_seeds,
        baseline_err: baseline,
        candidate_err: candidate,
        reduction_pct,
        pass,
        criterion: target,
        penalized_dim,
        warnings,
    })
}

/// One-dimensional slice data for plotting: vary dimension `dim` over the
/// case box with the other coordinates fixed, emitting CSV rows
/// `x,f_true,f_spgd,f_candidate`.
pub fn slice_csv(
    id: CaseId,
    baseline: &SeparatedModel,
    candidate: &SeparatedModel,
    fixed: &[f64],
    dim: usize,
    n: usize,
) -> Result<String, BenchError> {
    let domain = id
        .domain()
        .ok_or_else(|| BenchError::Invalid("case has no sampling box".into()))?;
    if dim >= domain.len() || fixed.len() != domain.len() {
        return Err(BenchError::Invalid("slice dimension/point mismatch".into()));
    }
    let (lo, hi) = domain[dim];
    let mut out = String::from("x,f_true,f_spgd,f_candidate\n");
    for i in 0..n {
        let x = lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64;
        let mut p = fixed.to_vec();
        p[dim] = x;
        let t = eval_case_function(id, &p)?;
        let b = baseline.evaluate(&p).map_err(|e| BenchError::Invalid(e.to_string()))?;
        let c = candidate.evaluate(&p).map_err(|e| BenchError::Invalid(e.to_string()))?;
        out.push_str(&format!("{x},{t},{b},{c}\n"));
    }
    Ok(out)
}
