//! The greedy enrichment engine: direction-system assembly, the
//! alternating-direction fixed point, the modal adaptivity degree schedule,
//! and the three fitting strategies (s-PGD, rs-PGD, s²-PGD) with per-step
//! hyperparameter selection.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, BasisFamily, BasisSpec};
use crate::model::{Mode, ModelError, ModelMeta, SeparatedModel};
use crate::solvers::{self, PenalizedProblem, SolverError};

#[derive(Error, Debug)]
pub enum FitError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Training data: `n_t` sample points in `d` dimensions with scalar targets,
/// plus the domain box the model bases are defined on.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub points: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub domain: Vec<(f64, f64)>,
}

impl Dataset {
    pub fn new(
        points: DMatrix<f64>,
        targets: DVector<f64>,
        domain: Vec<(f64, f64)>,
    ) -> Result<Self, FitError> {
        if points.nrows() == 0 {
            return Err(FitError::InvalidDataset("dataset has no rows".into()));
        }
        if points.nrows() != targets.len() {
            return Err(FitError::InvalidDataset(format!(
                "{} points but {} targets",
                points.nrows(),
                targets.len()
            )));
        }
        if points.ncols() != domain.len() {
            return Err(FitError::InvalidDataset(format!(
                "points have {} columns but domain has {} intervals",
                points.ncols(),
                domain.len()
            )));
        }
        for (k, &(lo, hi)) in domain.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(FitError::InvalidDataset(format!(
                    "invalid domain interval [{lo}, {hi}] in dimension {k}"
                )));
            }
        }
        if points.iter().any(|v| !v.is_finite()) || targets.iter().any(|v| !v.is_finite()) {
            return Err(FitError::InvalidDataset("non-finite entries".into()));
        }
        Ok(Self { points, targets, domain })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dims(&self) -> usize {
        self.points.ncols()
    }

    /// Indices of rows lying outside the domain box. Legal, but callers may
    /// want to warn: extrapolation is computed, never clamped.
    pub fn rows_outside_domain(&self) -> Vec<usize> {
        (0..self.points.nrows())
            .filter(|&i| {
                (0..self.dims()).any(|k| {
                    let v = self.points[(i, k)];
                    v < self.domain[k].0 || v > self.domain[k].1
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Spgd,
    Rspgd,
    S2pgd,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Spgd => "spgd",
            Method::Rspgd => "rspgd",
            Method::S2pgd => "s2pgd",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "spgd" => Ok(Method::Spgd),
            "rspgd" => Ok(Method::Rspgd),
            "s2pgd" => Ok(Method::S2pgd),
            other => Err(format!("unknown method '{other}' (expected spgd|rspgd|s2pgd)")),
        }
    }
}

/// Modal adaptivity schedule: start modes at a low degree and raise it when
/// the training residual stagnates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MasConfig {
    pub initial_degree: usize,
    pub max_degree: usize,
    /// Relative residual improvement below which a mode counts as stagnant.
    pub stagnation_tol: f64,
    /// Number of consecutive stagnant modes before the degree is raised.
    pub patience: usize,
}

impl Default for MasConfig {
    fn default() -> Self {
        Self { initial_degree: 1, max_degree: 4, stagnation_tol: 0.05, patience: 1 }
    }
}

/// Hyperparameter selection policy for the penalty factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// k-fold cross-validation, pick the penalty minimizing CV error.
    KFold(usize),
    /// k-fold CV, pick the most penalized model within one standard error of
    /// the best.
    OneSeKFold(usize),
    /// Single held-out split with the given validation fraction.
    Split(f64),
}

impl Default for Selection {
    fn default() -> Self {
        Selection::KFold(5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparseDims {
    /// Scan all dimensions and keep the best-validating penalized model.
    Auto,
    /// Penalize exactly these dimensions (0-based).
    Dims(Vec<usize>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub method: Method,
    pub basis: BasisFamily,
    pub mas: MasConfig,
    pub max_modes: usize,
    /// Fixed-point tolerance on the relative coefficient change per sweep.
    pub tol_fp: f64,
    pub max_fp_iters: usize,
    /// Penalty grid relative to the per-enrichment `lambda_max`.
    pub lambda_grid: Vec<f64>,
    /// Elastic-Net mixing candidates; a single entry fixes alpha.
    pub alpha: Vec<f64>,
    pub selection: Selection,
    pub sparse_dims: Option<SparseDims>,
    /// Fixed basis degree used in penalized dimensions (s²-PGD); defaults to
    /// the MAS maximum.
    pub sparse_degree: Option<usize>,
    /// Per-dimension caps on the number of nonzero coefficients accepted in a
    /// penalized dimension; defaults to ceil(D_k / 2).
    pub chi_lim: Option<Vec<usize>>,
    pub stls_threshold: Option<f64>,
    /// Consecutive rejected enrichments before fitting stops.
    pub patience_modes: usize,
    /// Enforce the sparsity caps inside every penalized direction solve
    /// (hard top-chi threshold plus re-fit) instead of only filtering
    /// penalty candidates during selection.
    pub chi_in_solver: bool,
    /// Fixed-point starts per direction fit; the best in-sample start wins.
    pub n_starts: usize,
    pub seed: u64,
}

/// Geometric grid `lo..hi` with `n` points (inclusive).
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..n).map(|i| (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp()).collect()
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            method: Method::Spgd,
            basis: BasisFamily::Chebyshev,
            mas: MasConfig::default(),
            max_modes: 20,
            tol_fp: 1e-5,
            max_fp_iters: 100,
            lambda_grid: log_grid(1e-6, 1e2, 25),
            alpha: vec![0.5],
            selection: Selection::default(),
            sparse_dims: None,
            sparse_degree: None,
            chi_lim: None,
            stls_threshold: None,
            patience_modes: 2,
            chi_in_solver: false,
            n_starts: 1,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, dims: usize) -> Result<(), FitError> {
        if self.mas.initial_degree > self.mas.max_degree {
            return Err(FitError::InvalidConfig("initial degree exceeds max degree".into()));
        }
        if self.tol_fp <= 0.0 {
            return Err(FitError::InvalidConfig("tol_fp must be positive".into()));
        }
        if self.max_modes == 0 {
            return Err(FitError::InvalidConfig("max_modes must be at least 1".into()));
        }
        match self.selection {
            Selection::KFold(k) | Selection::OneSeKFold(k) if k < 2 => {
                return Err(FitError::InvalidConfig("k-fold requires k >= 2".into()));
            }
            Selection::Split(r) if !(0.0 < r && r < 1.0) => {
                return Err(FitError::InvalidConfig("split ratio must lie in (0, 1)".into()));
            }
            _ => {}
        }
        if self.alpha.is_empty() {
            return Err(FitError::InvalidConfig("alpha grid is empty".into()));
        }
        for &a in &self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(FitError::InvalidConfig(format!("alpha {a} outside [0, 1]")));
            }
        }
        if self.lambda_grid.is_empty() && self.method != Method::Spgd {
            return Err(FitError::InvalidConfig("lambda grid is empty".into()));
        }
        if let Some(SparseDims::Dims(dims_list)) = &self.sparse_dims {
            for &k in dims_list {
                if k >= dims {
                    return Err(FitError::InvalidConfig(format!(
                        "sparse dimension {k} out of range for d={dims}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-enrichment record in the fit report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeRecord {
    pub degrees: Vec<usize>,
    pub fp_iterations: usize,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub accepted: bool,
    /// Training relative error after this enrichment (on the fit rows).
    pub training_error: f64,
    /// Held-out relative error of the candidate under the selection policy.
    pub selection_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub method: String,
    pub rank: usize,
    pub training_error: f64,
    /// Held-out relative error after each accepted mode.
    pub selection_errors: Vec<f64>,
    pub mode_records: Vec<ModeRecord>,
    /// Per accepted mode, per dimension: indices of nonzero coefficients.
    pub supports: Vec<Vec<Vec<usize>>>,
    /// 1-based penalized dimension when chosen by a dimension scan.
    pub penalized_dim: Option<usize>,
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Degree schedule step: raise the degree (capped) when the last `patience`
/// accepted modes each improved the training residual by less than the
/// stagnation tolerance.
pub fn mas_next_degree(residual_history: &[f64], current_degree: usize, mas: &MasConfig) -> usize {
    let n = residual_history.len();
    if n < mas.patience + 1 {
        return current_degree;
    }
    for i in (n - mas.patience)..n {
        let prev = residual_history[i - 1];
        let cur = residual_history[i];
        let improvement = if prev > 0.0 { (prev - cur) / prev } else { 1.0 };
        if improvement >= mas.stagnation_tol {
            return current_degree;
        }
    }
    (current_degree + 1).min(mas.max_degree)
}

/// Direction solver used for one dimension inside the fixed point. Penalty
/// values are relative: each solve rescales them by its own
/// `lambda_max = 2 max_j |m_j' r|`, so the effective penalty tracks the
/// magnitude of the current direction system instead of being frozen at the
/// start of the enrichment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DirectionSolver {
    Ols,
    Ridge(f64),
    Lasso { lambda: f64, chi: Option<usize> },
    ElasticNet { lambda: f64, alpha: f64 },
}

fn lambda_scale(design: &DMatrix<f64>, residual: &DVector<f64>) -> f64 {
    let mut m = 0.0_f64;
    for j in 0..design.ncols() {
        m = m.max(design.column(j).dot(residual).abs());
    }
    if m > 0.0 {
        2.0 * m
    } else {
        1.0
    }
}

impl DirectionSolver {
    fn solve(&self, design: &DMatrix<f64>, residual: &DVector<f64>) -> Result<(DVector<f64>, bool), SolverError> {
        match *self {
            DirectionSolver::Ols => Ok((solvers::solve_ols(design, residual)?, true)),
            DirectionSolver::Ridge(l) => {
                Ok((solvers::solve_ridge(design, residual, l * lambda_scale(design, residual))?, true))
            }
            DirectionSolver::Lasso { lambda: l, chi } => {
                // lasso picks the support; OLS on that support removes the
                // shrinkage bias before the next direction update
                let s = solvers::solve_lasso(design, residual, l * lambda_scale(design, residual))?;
                let mut support: Vec<usize> = s
                    .coeffs
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, _)| j)
                    .collect();
                if support.is_empty() {
                    return Ok((s.coeffs, s.converged));
                }
                let mut coeffs = solvers::debias_on_support(design, residual, &support)?;
                if let Some(cap) = chi {
                    // hard sparsity cap: keep the cap largest de-biased
                    // coefficients and re-fit OLS on the survivors
                    if support.len() > cap && cap > 0 {
                        support.sort_by(|&a, &b| {
                            coeffs[b].abs().total_cmp(&coeffs[a].abs())
                        });
                        support.truncate(cap);
                        support.sort_unstable();
                        coeffs = solvers::debias_on_support(design, residual, &support)?;
                    }
                }
                Ok((coeffs, s.converged))
            }
            DirectionSolver::ElasticNet { lambda, alpha } => {
                let l = lambda * lambda_scale(design, residual);
                let s = solvers::solve_elastic_net(design, residual, l, alpha)?;
                Ok((s.coeffs, s.converged))
            }
        }
    }
}

/// Design matrix of the direction system for dimension `dim` of mode
/// `mode_index`: row `i` is the dimension-`dim` basis row at point `i`, scaled
/// by the product of the mode's other-dimension expansions at that point.
fn direction_design(
    model: &SeparatedModel,
    points: &DMatrix<f64>,
    mode_index: usize,
    dim: usize,
) -> Result<DMatrix<f64>, FitError> {
    let weights = model.partial_products(points, mode_index, dim)?;
    let degree = model.modes[mode_index].degrees[dim];
    let mut design = DMatrix::zeros(points.nrows(), degree + 1);
    for i in 0..points.nrows() {
        let row = model.specs[dim].eval_with_degree(points[(i, dim)], degree)?;
        for (j, v) in row.iter().enumerate() {
            design[(i, j)] = weights[i] * v;
        }
    }
    Ok(design)
}

/// Assembles the penalized problem for one direction update: the residual is
/// the data minus the model truncated before `mode_index`, and the design is
/// the weighted basis block for dimension `dim`.
pub fn assemble_direction_system(
    dataset: &Dataset,
    model: &SeparatedModel,
    mode_index: usize,
    dim: usize,
    lambda: f64,
    alpha: f64,
) -> Result<PenalizedProblem, FitError> {
    let residual = &dataset.targets - model.evaluate_batch_truncated(&dataset.points, mode_index)?;
    let design = direction_design(model, &dataset.points, mode_index, dim)?;
    Ok(PenalizedProblem::new(design, residual, lambda, alpha)?)
}

/// Outcome of one alternating-direction fixed point.
#[derive(Debug, Clone)]
pub struct AlsOutcome {
    pub mode: Mode,
    pub iterations: usize,
    /// Mode collapsed to zero even after a randomized restart.
    pub degenerate: bool,
    /// A coordinate-descent direction solve hit its iteration cap.
    pub solver_warning: bool,
}

fn ones_mode(degrees: &[usize]) -> Mode {
    Mode::new(degrees.to_vec(), degrees.iter().map(|&d| vec![1.0; d + 1]).collect())
}

fn mode_is_zero(mode: &Mode) -> bool {
    mode.coeffs.iter().any(|a| a.iter().all(|&v| v == 0.0))
}

/// Alternating-direction fixed point for a single new mode fitted against the
/// residual `r` at `points`, from the given starting coefficients. Cycles the
/// dimensions, solving each direction with its configured solver, until the
/// largest relative coefficient change in a sweep drops below `tol_fp` or
/// `max_iters` sweeps have run.
///
/// If the mode collapses to zero it is restarted once from seeded
/// uniform(-1, 1) values before being reported as degenerate.
pub fn als_from_init(
    init: Mode,
    points: &DMatrix<f64>,
    r: &DVector<f64>,
    specs: &[BasisSpec],
    degrees: &[usize],
    dir_solvers: &[DirectionSolver],
    tol_fp: f64,
    max_iters: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AlsOutcome, FitError> {
    let d = specs.len();
    let mut scratch = SeparatedModel::new(specs.to_vec(), ModelMeta::default());
    scratch.push_mode(init)?;
    let mut solver_warning = false;
    let mut iterations = 0;
    for attempt in 0..2 {
        if attempt == 1 {
            // randomized restart after a zero collapse: seeded uniform(-1, 1)
            let coeffs: Vec<Vec<f64>> = degrees
                .iter()
                .map(|&deg| (0..=deg).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            scratch.modes[0] = Mode::new(degrees.to_vec(), coeffs);
        }
        let mut iters = 0;
        while iters < max_iters {
            iters += 1;
            let mut max_change = 0.0_f64;
            for k in 0..d {
                let design = direction_design(&scratch, points, 0, k)?;
                let (new, converged) = dir_solvers[k].solve(&design, r)?;
                solver_warning |= !converged;
                let old = DVector::from_row_slice(&scratch.modes[0].coeffs[k]);
                let denom = old.norm().max(1e-12);
                max_change = max_change.max((&new - &old).norm() / denom);
                scratch.modes[0].coeffs[k] = new.iter().cloned().collect();
            }
            if max_change < tol_fp {
                break;
            }
        }
        iterations = iters;
        if !mode_is_zero(&scratch.modes[0]) {
            return Ok(AlsOutcome {
                mode: scratch.modes.pop().expect("scratch holds one mode"),
                iterations,
                degenerate: false,
                solver_warning,
            });
        }
        if max_iters == 0 {
            break;
        }
    }
    // zero the whole mode so the caller sees a clean no-op term
    let zero = Mode::new(
        degrees.to_vec(),
        degrees.iter().map(|&deg| vec![0.0; deg + 1]).collect(),
    );
    Ok(AlsOutcome { mode: zero, iterations, degenerate: max_iters > 0, solver_warning })
}

/// Alternating-direction fixed point started from all-ones coefficients.
pub fn als_fixed_point(
    points: &DMatrix<f64>,
    r: &DVector<f64>,
    specs: &[BasisSpec],
    degrees: &[usize],
    dir_solvers: &[DirectionSolver],
    tol_fp: f64,
    max_iters: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AlsOutcome, FitError> {
    als_from_init(ones_mode(degrees), points, r, specs, degrees, dir_solvers, tol_fp, max_iters, rng)
}

/// Multi-start alternating-direction fixed point: the first start uses
/// all-ones coefficients and the remaining `n_starts - 1` use seeded
/// uniform(-1, 1) draws; the start with the smallest in-sample residual wins.
/// Multiplicative models have many fixed points, and on strongly
/// corner-dominated targets the all-ones basin can be a poor one.
pub fn als_multi_start(
    n_starts: usize,
    points: &DMatrix<f64>,
    r: &DVector<f64>,
    specs: &[BasisSpec],
    degrees: &[usize],
    dir_solvers: &[DirectionSolver],
    tol_fp: f64,
    max_iters: usize,
    rng: &mut ChaCha8Rng,
) -> Result<AlsOutcome, FitError> {
    let mut best: Option<(f64, AlsOutcome)> = None;
    for start in 0..n_starts.max(1) {
        let init = if start == 0 {
            ones_mode(degrees)
        } else {
            Mode::new(
                degrees.to_vec(),
                degrees
                    .iter()
                    .map(|&deg| (0..=deg).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect(),
            )
        };
        let out =
            als_from_init(init, points, r, specs, degrees, dir_solvers, tol_fp, max_iters, rng)?;
        let sse = if out.degenerate {
            f64::INFINITY
        } else {
            let mut tmp = SeparatedModel::new(specs.to_vec(), ModelMeta::default());
            tmp.push_mode(out.mode.clone())?;
            (r - tmp.evaluate_batch(points)?).norm_squared()
        };
        if best.as_ref().map_or(true, |(b, _)| sse < *b) {
            best = Some((sse, out));
        }
    }
    Ok(best.expect("at least one start").1)
}

/// One row of the penalty-selection score table.
#[derive(Debug, Clone, Serialize)]
pub struct LambdaScore {
    pub lambda: f64,
    pub alpha: f64,
    /// Mean held-out SSE across splits.
    pub mean_error: f64,
    /// Standard error of the mean across splits.
    pub std_error: f64,
    /// Total held-out SSE summed over splits.
    pub total_sse: f64,
    /// Largest penalized-dimension support seen across splits, when tracked.
    pub max_support: Option<usize>,
}

/// Index of the minimum-mean-error row.
pub fn pick_min(scores: &[LambdaScore]) -> Option<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.mean_error.is_finite())
        .min_by(|a, b| a.1.mean_error.total_cmp(&b.1.mean_error))
        .map(|(i, _)| i)
}

/// One-standard-error rule: among rows whose mean error is within one
/// standard error of the best, the most penalized (largest lambda) wins.
/// Assumes rows sorted by ascending lambda.
pub fn pick_one_se(scores: &[LambdaScore]) -> Option<usize> {
    let best = pick_min(scores)?;
    let cutoff = scores[best].mean_error + scores[best].std_error;
    scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.mean_error <= cutoff)
        .max_by(|a, b| a.1.lambda.total_cmp(&b.1.lambda))
        .map(|(i, _)| i)
}

/// Evaluates each (lambda, alpha) candidate on every split with the supplied
/// closure (returning held-out SSE) and picks the winner under the policy.
/// A single-candidate grid is returned without evaluation.
pub fn select_lambda<F>(
    candidates: &[(f64, f64)],
    n_splits: usize,
    one_se: bool,
    mut eval: F,
) -> Result<(f64, f64, Vec<LambdaScore>), FitError>
where
    F: FnMut(usize, f64, f64) -> Result<f64, FitError>,
{
    if candidates.is_empty() {
        return Err(FitError::InvalidConfig("empty penalty candidate grid".into()));
    }
    if candidates.len() == 1 {
        return Ok((candidates[0].0, candidates[0].1, Vec::new()));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for &(lambda, alpha) in candidates {
        let mut errs = Vec::with_capacity(n_splits);
        for s in 0..n_splits {
            errs.push(eval(s, lambda, alpha)?);
        }
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>()
            / (errs.len().max(2) - 1) as f64;
        let se = (var / errs.len() as f64).sqrt();
        scores.push(LambdaScore {
            lambda,
            alpha,
            mean_error: mean,
            std_error: se,
            total_sse: errs.iter().sum(),
            max_support: None,
        });
    }
    let idx = if one_se { pick_one_se(&scores) } else { pick_min(&scores) }
        .ok_or_else(|| FitError::InvalidConfig("no finite penalty score".into()))?;
    Ok((scores[idx].lambda, scores[idx].alpha, scores))
}

struct Engine<'a> {
    data: &'a Dataset,
    cfg: &'a FitConfig,
    specs: Vec<BasisSpec>,
    sparse: Vec<bool>,
    chi_lim: Vec<usize>,
    rng: ChaCha8Rng,
    /// Rows the model coefficients are fitted on.
    fit_rows: Vec<usize>,
    /// (train, heldout) row-index pairs for penalty selection and acceptance.
    splits: Vec<(Vec<usize>, Vec<usize>)>,
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), m.ncols());
    for (i, &r) in rows.iter().enumerate() {
        for k in 0..m.ncols() {
            out[(i, k)] = m[(r, k)];
        }
    }
    out
}

fn select_vec(v: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_iterator(rows.len(), rows.iter().map(|&r| v[r]))
}

impl<'a> Engine<'a> {
    fn new(data: &'a Dataset, cfg: &'a FitConfig) -> Result<Self, FitError> {
        cfg.validate(data.dims())?;
        if data.len() < 2 {
            return Err(FitError::InvalidDataset("need at least 2 samples to fit".into()));
        }
        let d = data.dims();
        let sparse_degree = cfg.sparse_degree.unwrap_or(cfg.mas.max_degree);
        let mut sparse = vec![false; d];
        if cfg.method == Method::S2pgd {
            match &cfg.sparse_dims {
                Some(SparseDims::Dims(dims)) => {
                    for &k in dims {
                        sparse[k] = true;
                    }
                }
                Some(SparseDims::Auto) | None => {
                    return Err(FitError::InvalidConfig(
                        "s2pgd fit requires explicit sparse dimensions; use the dimension scan for auto".into(),
                    ));
                }
            }
        }
        let specs: Vec<BasisSpec> = (0..d)
            .map(|k| {
                let degree = if sparse[k] { sparse_degree } else { cfg.mas.max_degree };
                BasisSpec::new(cfg.basis, degree, data.domain[k].0, data.domain[k].1)
                    .map_err(|e| FitError::InvalidDataset(e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        let chi_lim = (0..d)
            .map(|k| {
                cfg.chi_lim
                    .as_ref()
                    .and_then(|v| v.get(k).copied())
                    .unwrap_or((specs[k].len() + 1) / 2)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = data.len();
        let mut shuffled: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            shuffled.swap(i, j);
        }
        let (fit_rows, splits) = match cfg.selection {
            Selection::Split(ratio) => {
                let n_val = ((n as f64 * ratio).round() as usize).clamp(1, n - 1);
                let val: Vec<usize> = shuffled[..n_val].to_vec();
                let train: Vec<usize> = shuffled[n_val..].to_vec();
                (train.clone(), vec![(train, val)])
            }
            Selection::KFold(k) | Selection::OneSeKFold(k) => {
                let k = k.min(n);
                let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
                for (i, &row) in shuffled.iter().enumerate() {
                    folds[i % k].push(row);
                }
                let splits = (0..k)
                    .map(|f| {
                        let heldout = folds[f].clone();
                        let train: Vec<usize> = (0..k)
                            .filter(|&g| g != f)
                            .flat_map(|g| folds[g].iter().copied())
                            .collect();
                        (train, heldout)
                    })
                    .collect();
                ((0..n).collect(), splits)
            }
        };
        Ok(Self { data, cfg, specs, sparse, chi_lim, rng, fit_rows, splits })
    }

    fn degrees_for(&self, degree: usize) -> Vec<usize> {
        let sparse_degree = self.cfg.sparse_degree.unwrap_or(self.cfg.mas.max_degree);
        (0..self.data.dims())
            .map(|k| if self.sparse[k] { sparse_degree } else { degree })
            .collect()
    }

    fn dir_solvers(&self, lambda: f64, alpha: f64) -> Vec<DirectionSolver> {
        match self.cfg.method {
            Method::Spgd => vec![DirectionSolver::Ols; self.data.dims()],
            Method::Rspgd => {
                let solver = if alpha == 0.0 {
                    DirectionSolver::Ridge(lambda)
                } else {
                    DirectionSolver::ElasticNet { lambda, alpha }
                };
                vec![solver; self.data.dims()]
            }
            Method::S2pgd => self
                .sparse
                .iter()
                .enumerate()
                .map(|(k, &s)| {
                    if s {
                        let chi = self.cfg.chi_in_solver.then_some(self.chi_lim[k]);
                        DirectionSolver::Lasso { lambda, chi }
                    } else {
                        DirectionSolver::Ols
                    }
                })
                .collect(),
        }
    }

    /// Fits one candidate mode against residuals `r` restricted to `rows`.
    /// For s²-PGD the penalized dimensions are de-biased by OLS on their
    /// detected support.
    fn fit_mode(
        &mut self,
        rows: &[usize],
        r: &DVector<f64>,
        degrees: &[usize],
        lambda: f64,
        alpha: f64,
    ) -> Result<AlsOutcome, FitError> {
        let points = select_rows(&self.data.points, rows);
        let sub_r = select_vec(r, rows);
        let dir_solvers = self.dir_solvers(lambda, alpha);
        // the lasso direction solver already de-biases on its detected
        // support, so the converged mode needs no extra post-processing
        als_multi_start(
            self.cfg.n_starts,
            &points,
            &sub_r,
            &self.specs,
            degrees,
            &dir_solvers,
            self.cfg.tol_fp,
            self.cfg.max_fp_iters,
            &mut self.rng,
        )
    }

    fn mode_values(&self, mode: &Mode, rows: &[usize]) -> Result<DVector<f64>, FitError> {
        let mut tmp = SeparatedModel::new(self.specs.clone(), ModelMeta::default());
        tmp.push_mode(mode.clone())?;
        Ok(tmp.evaluate_batch(&select_rows(&self.data.points, rows))?)
    }

    fn max_sparse_support(&self, mode: &Mode) -> usize {
        (0..self.data.dims())
            .filter(|&k| self.sparse[k])
            .map(|k| mode.coeffs[k].iter().filter(|&&v| v != 0.0).count())
            .max()
            .unwrap_or(0)
    }

    fn sparse_support_ok(&self, mode: &Mode) -> bool {
        (0..self.data.dims())
            .filter(|&k| self.sparse[k])
            .all(|k| mode.coeffs[k].iter().filter(|&&v| v != 0.0).count() <= self.chi_lim[k])
    }

    /// Scores the (lambda, alpha) grid for the current enrichment: each
    /// candidate is fitted on every split's train rows and scored by held-out
    /// SSE. For s²-PGD, candidates violating the sparsity cap are filtered
    /// before the winner is picked.
    fn choose_penalty(
        &mut self,
        r: &DVector<f64>,
        degrees: &[usize],
        warnings: &mut Vec<String>,
    ) -> Result<(f64, f64, f64), FitError> {
        let alphas = if self.cfg.method == Method::S2pgd { vec![1.0] } else { self.cfg.alpha.clone() };
        let mut candidates: Vec<(f64, f64)> = Vec::new();
        for &a in &alphas {
            for &g in &self.cfg.lambda_grid {
                candidates.push((g, a));
            }
        }
        candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
        let one_se = matches!(self.cfg.selection, Selection::OneSeKFold(_));
        let splits = self.splits.clone();
        let chi_filter = self.cfg.method == Method::S2pgd;

        let mut scores: Vec<LambdaScore> = Vec::with_capacity(candidates.len());
        if candidates.len() == 1 {
            let (l, a) = candidates[0];
            // single candidate: still need its held-out SSE for acceptance
            let mut total = 0.0;
            for (tr, va) in &splits {
                let out = self.fit_mode(tr, r, degrees, l, a)?;
                let pred = self.mode_values(&out.mode, va)?;
                total += (select_vec(r, va) - pred).norm_squared();
            }
            return Ok((l, a, total));
        }
        for &(lambda, alpha) in &candidates {
            let mut errs = Vec::with_capacity(splits.len());
            let mut max_support = 0usize;
            let mut chi_ok = true;
            for (tr, va) in &splits {
                let out = self.fit_mode(tr, r, degrees, lambda, alpha)?;
                let pred = self.mode_values(&out.mode, va)?;
                errs.push((select_vec(r, va) - pred).norm_squared());
                max_support = max_support.max(self.max_sparse_support(&out.mode));
                chi_ok &= self.sparse_support_ok(&out.mode);
            }
            // an all-zero penalized direction is not a usable candidate
            chi_ok &= max_support > 0;
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>()
                / (errs.len().max(2) - 1) as f64;
            scores.push(LambdaScore {
                lambda,
                alpha,
                mean_error: if chi_filter && !chi_ok { f64::INFINITY } else { mean },
                std_error: (var / errs.len() as f64).sqrt(),
                total_sse: errs.iter().sum(),
                max_support: Some(max_support),
            });
        }
        if chi_filter && scores.iter().all(|s| !s.mean_error.is_finite()) {
            // no candidate satisfies the sparsity cap; fall back unfiltered
            warnings.push("no penalty candidate met the sparsity cap; using best unfiltered".into());
            for s in &mut scores {
                s.mean_error = s.total_sse / splits.len() as f64;
            }
        }
        let idx = if one_se { pick_one_se(&scores) } else { pick_min(&scores) }
            .ok_or_else(|| FitError::InvalidConfig("no finite penalty score".into()))?;
        Ok((scores[idx].lambda, scores[idx].alpha, scores[idx].total_sse))
    }

    fn run(mut self) -> Result<(SeparatedModel, FitReport), FitError> {
        let meta = ModelMeta { method: self.cfg.method.as_str().to_string(), seed: self.cfg.seed };
        let mut model = SeparatedModel::new(self.specs.clone(), meta);
        let mut warnings: Vec<String> = Vec::new();
        let outside = self.data.rows_outside_domain();
        if !outside.is_empty() {
            warnings.push(format!("{} sample rows lie outside the domain box", outside.len()));
        }

        // residuals over all rows; updated after each accepted mode
        let mut r = self.data.targets.clone();
        let fit_targets = select_vec(&self.data.targets, &self.fit_rows);
        let train_norm = fit_targets.norm().max(f64::MIN_POSITIVE);
        let heldout_norm: f64 = {
            let s: f64 = self
                .splits
                .iter()
                .map(|(_, va)| select_vec(&self.data.targets, va).norm_squared())
                .sum();
            s.sqrt().max(f64::MIN_POSITIVE)
        };

        let mut degree = self.cfg.mas.initial_degree;
        let mut history: Vec<f64> = Vec::new();
        let mut selection_errors: Vec<f64> = Vec::new();
        let mut mode_records: Vec<ModeRecord> = Vec::new();
        let mut supports: Vec<Vec<Vec<usize>>> = Vec::new();
        let mut rejections = 0usize;
        let mut train_err = 1.0_f64;

        for _ in 0..self.cfg.max_modes {
            degree = mas_next_degree(&history, degree, &self.cfg.mas);
            let degrees = self.degrees_for(degree);

            let (lambda, alpha, cand_sse) = match self.cfg.method {
                Method::Spgd => (0.0, 0.0, f64::NAN),
                _ => self.choose_penalty(&r, &degrees, &mut warnings)?,
            };
            let fit_rows = self.fit_rows.clone();
            let outcome = self.fit_mode(&fit_rows, &r, &degrees, lambda, alpha)?;
            if outcome.solver_warning {
                warnings.push("a coordinate-descent solve hit its iteration cap".into());
            }

            let fit_pred = self.mode_values(&outcome.mode, &self.fit_rows)?;
            let new_train_err =
                (select_vec(&r, &self.fit_rows) - &fit_pred).norm() / train_norm;

            let (accepted, selection_error) = match self.cfg.method {
                Method::Spgd => {
                    let improved = new_train_err < train_err * (1.0 - 1e-12)
                        && !outcome.degenerate
                        && !mode_is_zero(&outcome.mode);
                    (improved, new_train_err)
                }
                _ => {
                    let zero_sse: f64 =
                        self.splits.iter().map(|(_, va)| select_vec(&r, va).norm_squared()).sum();
                    // the fitted mode is a fresh draw, not the per-split fits
                    // that produced cand_sse; require that it, too, improves
                    // the held-out residual so a bad draw cannot slip in
                    let mut mode_sse = 0.0;
                    for (_, va) in &self.splits.clone() {
                        let pred = self.mode_values(&outcome.mode, va)?;
                        mode_sse += (select_vec(&r, va) - pred).norm_squared();
                    }
                    let sel_err = cand_sse.sqrt() / heldout_norm;
                    (
                        cand_sse < zero_sse
                            && mode_sse < zero_sse
                            && !outcome.degenerate
                            && !mode_is_zero(&outcome.mode),
                        sel_err,
                    )
                }
            };

            mode_records.push(ModeRecord {
                degrees: degrees.clone(),
                fp_iterations: outcome.iterations,
                lambda: (self.cfg.method != Method::Spgd).then_some(lambda),
                alpha: (self.cfg.method == Method::Rspgd).then_some(alpha),
                accepted,
                training_error: new_train_err,
                selection_error,
            });

            if accepted {
                rejections = 0;
                supports.push(
                    outcome
                        .mode
                        .coeffs
                        .iter()
                        .map(|a| {
                            a.iter()
                                .enumerate()
                                .filter(|(_, &v)| v != 0.0)
                                .map(|(j, _)| j)
                                .collect()
                        })
                        .collect(),
                );
                let all_pred = self.mode_values(&outcome.mode, &(0..self.data.len()).collect::<Vec<_>>())?;
                r -= &all_pred;
                model.push_mode(outcome.mode)?;
                history.push(new_train_err);
                selection_errors.push(selection_error);
                train_err = new_train_err;
                if train_err < 1e-12 {
                    break;
                }
                // stagnating at the top degree means enrichment has nothing
                // left to add
                if degree == self.cfg.mas.max_degree && history.len() > self.cfg.patience_modes {
                    let n = history.len();
                    let stagnant = (n - self.cfg.patience_modes..n).all(|i| {
                        let prev = history[i - 1];
                        prev > 0.0 && (prev - history[i]) / prev < self.cfg.mas.stagnation_tol
                    });
                    if stagnant && self.cfg.method == Method::Spgd {
                        break;
                    }
                }
            } else {
                rejections += 1;
                if rejections >= self.cfg.patience_modes {
                    break;
                }
                // give the next attempt a richer basis before stopping
                degree = (degree + 1).min(self.cfg.mas.max_degree);
            }
        }

        if model.rank() == 0 {
            warnings.push("no mode was accepted; model has rank 0".into());
        }
        let report = FitReport {
            method: self.cfg.method.as_str().to_string(),
            rank: model.rank(),
            training_error: train_err,
            selection_errors,
            mode_records,
            supports,
            penalized_dim: None,
            warnings,
        };
        Ok((model, report))
    }
}

/// Greedy separated-representation fit of `dataset` under `config`.
pub fn fit(dataset: &Dataset, config: &FitConfig) -> Result<(SeparatedModel, FitReport), FitError> {
    Engine::new(dataset, config)?.run()
}

/// s²-PGD dimension scan: fits once per candidate penalized dimension,
/// filters candidates by the per-dimension sparsity cap, and keeps the model
/// with the best held-out error among the survivors. Returns the winning
/// model, its report (with `penalized_dim` set, 1-based), and the 0-based
/// penalized dimension.
pub fn fit_s2pgd_dimension_scan(
    dataset: &Dataset,
    config: &FitConfig,
) -> Result<(SeparatedModel, FitReport, usize), FitError> {
    if config.method != Method::S2pgd {
        return Err(FitError::InvalidConfig("dimension scan requires method s2pgd".into()));
    }
    let d = dataset.dims();
    let candidates: Vec<usize> = match &config.sparse_dims {
        Some(SparseDims::Dims(dims)) => dims.clone(),
        Some(SparseDims::Auto) | None => (0..d).collect(),
    };
    let mut results: Vec<(usize, SeparatedModel, FitReport, f64, bool)> = Vec::new();
    for &dim in &candidates {
        let mut cfg = config.clone();
        cfg.sparse_dims = Some(SparseDims::Dims(vec![dim]));
        let (model, report) = fit(dataset, &cfg)?;
        let val_err = report.selection_errors.last().copied().unwrap_or(f64::INFINITY);
        let sparse_degree = config.sparse_degree.unwrap_or(config.mas.max_degree);
        let chi = config
            .chi_lim
            .as_ref()
            .and_then(|v| v.get(dim).copied())
            .unwrap_or((sparse_degree + 2) / 2);
        let chi_ok = report
            .supports
            .iter()
            .all(|per_dim| per_dim.get(dim).map(|s| s.len() <= chi).unwrap_or(true));
        results.push((dim, model, report, val_err, chi_ok));
    }
    let pick = |rs: &[(usize, SeparatedModel, FitReport, f64, bool)], require_chi: bool| {
        rs.iter()
            .enumerate()
            .filter(|(_, r)| !require_chi || r.4)
            .min_by(|a, b| a.1 .3.total_cmp(&b.1 .3))
            .map(|(i, _)| i)
    };
    let (idx, fallback) = match pick(&results, true) {
        Some(i) => (i, false),
        None => (
            pick(&results, false)
                .ok_or_else(|| FitError::InvalidConfig("dimension scan produced no result".into()))?,
            true,
        ),
    };
    let (dim, model, mut report, _, _) = results.swap_remove(idx);
    report.penalized_dim = Some(dim + 1);
    if fallback {
        report
            .warnings
            .push("all scan candidates violated the sparsity cap; best unfiltered model returned".into());
    }
    Ok((model, report, dim))
}
