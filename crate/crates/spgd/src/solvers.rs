//! Penalized least-squares kernels used inside every alternating-direction
//! step: OLS (minimum-norm on rank-deficient systems), ridge, Lasso, Elastic
//! Net, and sequential thresholded least squares.
//!
//! Conventions: penalties apply to the unscaled sum of squares, with no
//! `1/(2n)` factor and no separate intercept; the constant basis function is
//! penalized like any other coefficient. Coordinate descent cycles the
//! coefficients in fixed order so results are deterministic given inputs.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Rank-detection tolerance relative to the largest singular value.
pub const RANK_TOL: f64 = 1e-10;
/// Default coordinate-descent convergence tolerance (max coefficient change).
pub const CD_TOL: f64 = 1e-8;
/// Default coordinate-descent iteration cap.
pub const CD_MAX_ITER: usize = 10_000;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SolverError {
    #[error("design or residual contains non-finite entries")]
    NonFiniteInput,
    #[error("design has {rows} rows but residual has {len} entries")]
    ShapeMismatch { rows: usize, len: usize },
    #[error("penalty factor must be non-negative, got {0}")]
    NegativeLambda(f64),
    #[error("alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("support is empty")]
    EmptySupport,
    #[error("support index {0} out of range for {1} columns")]
    SupportOutOfRange(usize, usize),
}

/// One penalized direction problem: `argmin_a ||r - M a||^2 + penalty(a)`.
#[derive(Debug, Clone)]
pub struct PenalizedProblem {
    pub design: DMatrix<f64>,
    pub residual: DVector<f64>,
    pub lambda: f64,
    pub alpha: f64,
}

impl PenalizedProblem {
    pub fn new(
        design: DMatrix<f64>,
        residual: DVector<f64>,
        lambda: f64,
        alpha: f64,
    ) -> Result<Self, SolverError> {
        validate(&design, &residual)?;
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(SolverError::NegativeLambda(lambda));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(SolverError::AlphaOutOfRange(alpha));
        }
        Ok(Self { design, residual, lambda, alpha })
    }
}

/// Solution of a coordinate-descent solve. `converged == false` means the
/// iteration cap was hit; the coefficients are still returned.
#[derive(Debug, Clone)]
pub struct CdSolution {
    pub coeffs: DVector<f64>,
    pub converged: bool,
    pub sweeps: usize,
}

fn validate(design: &DMatrix<f64>, residual: &DVector<f64>) -> Result<(), SolverError> {
    if design.nrows() != residual.len() {
        return Err(SolverError::ShapeMismatch { rows: design.nrows(), len: residual.len() });
    }
    if design.iter().any(|v| !v.is_finite()) || residual.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFiniteInput);
    }
    Ok(())
}

/// Ordinary least squares, `argmin_a ||r - M a||^2`. Rank-deficient systems
/// yield the minimum-norm solution via SVD with a relative rank cutoff.
pub fn solve_ols(design: &DMatrix<f64>, residual: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
    validate(design, residual)?;
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return Ok(DVector::zeros(design.ncols()));
    }
    let sol = svd
        .solve(residual, RANK_TOL * smax)
        .expect("svd solve with computed u/v cannot fail");
    Ok(sol)
}

/// Ridge regression, `a = (M^T M + lambda I)^{-1} M^T r`.
pub fn solve_ridge(
    design: &DMatrix<f64>,
    residual: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>, SolverError> {
    validate(design, residual)?;
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(SolverError::NegativeLambda(lambda));
    }
    if lambda == 0.0 {
        return solve_ols(design, residual);
    }
    let p = design.ncols();
    let mut gram = design.transpose() * design;
    for j in 0..p {
        gram[(j, j)] += lambda;
    }
    let rhs = design.transpose() * residual;
    match gram.clone().cholesky() {
        Some(chol) => Ok(chol.solve(&rhs)),
        // lambda > 0 makes this positive definite in exact arithmetic; fall
        // back to SVD if conditioning defeats the Cholesky anyway
        None => {
            let svd = gram.svd(true, true);
            Ok(svd.solve(&rhs, f64::EPSILON).expect("svd solve cannot fail"))
        }
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

#[cfg(debug_assertions)]
fn en_objective(design: &DMatrix<f64>, residual: &DVector<f64>, a: &DVector<f64>, l1: f64, l2: f64) -> f64 {
    let fit = residual - design * a;
    fit.norm_squared() + l2 * a.norm_squared() + l1 * a.iter().map(|v| v.abs()).sum::<f64>()
}

/// Cyclic coordinate descent for `||r - M a||^2 + l2 ||a||^2 + l1 ||a||_1`.
fn coordinate_descent(
    design: &DMatrix<f64>,
    residual: &DVector<f64>,
    l1: f64,
    l2: f64,
) -> CdSolution {
    let p = design.ncols();
    let col_sq: Vec<f64> = (0..p).map(|j| design.column(j).norm_squared()).collect();
    let mut a = DVector::zeros(p);
    let mut res = residual.clone();
    let mut converged = false;
    let mut sweeps = 0;
    #[cfg(debug_assertions)]
    let mut prev_obj = en_objective(design, residual, &a, l1, l2);
    while sweeps < CD_MAX_ITER {
        sweeps += 1;
        let mut max_change = 0.0_f64;
        for j in 0..p {
            if col_sq[j] + l2 == 0.0 {
                continue;
            }
            let old = a[j];
            let rho = design.column(j).dot(&res) + col_sq[j] * old;
            let new = soft_threshold(rho, l1 / 2.0) / (col_sq[j] + l2);
            if new != old {
                let delta = old - new;
                for i in 0..design.nrows() {
                    res[i] += delta * design[(i, j)];
                }
                a[j] = new;
            }
            max_change = max_change.max((new - old).abs());
        }
        #[cfg(debug_assertions)]
        {
            let obj = en_objective(design, residual, &a, l1, l2);
            debug_assert!(
                obj <= prev_obj + 1e-9 * (1.0 + prev_obj.abs()),
                "coordinate descent objective increased: {prev_obj} -> {obj}"
            );
            prev_obj = obj;
        }
        // tolerance relative to the coefficient scale: correlated columns
        // otherwise zigzag with tiny absolute steps for thousands of sweeps
        if max_change < CD_TOL * a.amax().max(1.0) {
            converged = true;
            break;
        }
    }
    CdSolution { coeffs: a, converged, sweeps }
}

/// Lasso, `argmin_a ||r - M a||^2 + lambda ||a||_1`.
pub fn solve_lasso(
    design: &DMatrix<f64>,
    residual: &DVector<f64>,
    lambda: f64,
) -> Result<CdSolution, SolverError> {
    validate(design, residual)?;
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(SolverError::NegativeLambda(lambda));
    }
    Ok(coordinate_descent(design, residual, lambda, 0.0))
}

/// Elastic Net, `argmin_a ||r - M a||^2 + lambda[(1-alpha)||a||^2 + alpha||a||_1]`.
pub fn solve_elastic_net(
    design: &DMatrix<f64>,
    residual: &DVector<f64>,
    lambda: f64,
    alpha: f64,
) -> Result<CdSolution, SolverError> {
    validate(design, residual)?;
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(SolverError::NegativeLambda(lambda));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(SolverError::AlphaOutOfRange(alpha));
    }
    Ok(coordinate_descent(design, residual, lambda * alpha, lambda * (1.0 - alpha)))
}

/// OLS restricted to the given columns; zeros elsewhere.
pub fn debias_on_support(
    design: &DMatrix<f64>,
    residual: &DVector<f64>,
    support: &[usize],
) -> Result<DVector<f64>, SolverError> {
    validate(design, residual)?;
    if support.is_empty() {
        return Err(SolverError::EmptySupport);
    }
    let p = design.ncols();
    for &j in support {
        if j >= p {
            return Err(SolverError::SupportOutOfRange(j, p));
        }
    }
    let sub = design.select_columns(support.iter());
    let coeffs = solve_ols(&sub, residual)?;
    let mut full = DVector::zeros(p);
    for (i, &j) in support.iter().enumerate() {
        full[j] = coeffs[i];
    }
    Ok(full)
}

/// Sequential thresholded least squares: zero every coefficient below
/// `threshold` in magnitude, re-solve OLS on the surviving columns, and repeat
/// until the support stabilizes. Returns the final support (ascending) and the
/// de-biased coefficients. An empty support yields all-zero coefficients.
pub fn stls_refit(
    design: &DMatrix<f64>,
    residual: &DVector<f64>,
    initial: &DVector<f64>,
    threshold: f64,
) -> Result<(Vec<usize>, DVector<f64>), SolverError> {
    validate(design, residual)?;
    let p = design.ncols();
    let mut coeffs = initial.clone();
    let mut support: Vec<usize> = (0..p).filter(|&j| coeffs[j].abs() >= threshold).collect();
    loop {
        if support.is_empty() {
            return Ok((support, DVector::zeros(p)));
        }
        coeffs = debias_on_support(design, residual, &support)?;
        let new_support: Vec<usize> =
            (0..p).filter(|&j| coeffs[j].abs() >= threshold).collect();
        if new_support == support {
            for j in 0..p {
                if !support.contains(&j) {
                    coeffs[j] = 0.0;
                }
            }
            return Ok((support, coeffs));
        }
        support = new_support;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: usize, cols: usize, vals: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, vals)
    }

    fn vec_(vals: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(vals)
    }

    /// Penalized objective, used as an independent check of solver output.
    fn objective(m: &DMatrix<f64>, r: &DVector<f64>, a: &DVector<f64>, l1: f64, l2: f64) -> f64 {
        (r - m * a).norm_squared() + l2 * a.norm_squared() + l1 * a.iter().map(|v| v.abs()).sum::<f64>()
    }

    #[test]
    fn ols_identity() {
        let a = solve_ols(&DMatrix::identity(2, 2), &vec_(&[3.0, 4.0])).unwrap();
        assert_eq!(a.as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn ols_single_column_is_mean() {
        let a = solve_ols(&mat(2, 1, &[1.0, 1.0]), &vec_(&[1.0, 3.0])).unwrap();
        assert_abs_diff_eq!(a[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn ols_exact_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
        let truth = vec_(&[1.0, -2.0]);
        let r = &m * &truth;
        let a = solve_ols(&m, &r).unwrap();
        assert_abs_diff_eq!((a - truth).norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn ols_rank_deficient_min_norm() {
        // duplicated column: min-norm splits the coefficient evenly
        let m = mat(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let r = vec_(&[2.0, 4.0, 6.0]);
        let a = solve_ols(&m, &r).unwrap();
        assert_abs_diff_eq!(a[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(a[1], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn ols_rejects_non_finite() {
        assert!(solve_ols(&mat(1, 1, &[f64::NAN]), &vec_(&[1.0])).is_err());
    }

    #[test]
    fn ridge_scalar() {
        let a = solve_ridge(&mat(1, 1, &[1.0]), &vec_(&[2.0]), 1.0).unwrap();
        assert_abs_diff_eq!(a[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn ridge_zero_lambda_matches_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = DMatrix::from_fn(8, 3, |_, _| rng.gen_range(-1.0..1.0));
        let r = DVector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0));
        let ridge = solve_ridge(&m, &r, 0.0).unwrap();
        let ols = solve_ols(&m, &r).unwrap();
        assert_abs_diff_eq!((ridge - ols).norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn ridge_huge_lambda_shrinks_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DMatrix::from_fn(6, 3, |_, _| rng.gen_range(-1.0..1.0));
        let r = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
        let a = solve_ridge(&m, &r, 1e12).unwrap();
        let mtr = m.transpose() * &r;
        assert!(a.norm() <= 1e-9 * mtr.norm());
    }

    #[test]
    fn ridge_shrinkage_monotone_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = DMatrix::from_fn(10, 4, |_, _| rng.gen_range(-1.0..1.0));
        let r = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
        let lambdas = [0.0, 0.01, 0.1, 1.0, 10.0, 100.0];
        let norms: Vec<f64> =
            lambdas.iter().map(|&l| solve_ridge(&m, &r, l).unwrap().norm()).collect();
        for w in norms.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "ridge norm not monotone: {norms:?}");
        }
    }

    #[test]
    fn lasso_scalar_stationarity() {
        // 2(a - 2) + sign(a) = 0 at lambda = 1 -> a = 1.5
        let s = solve_lasso(&mat(1, 1, &[1.0]), &vec_(&[2.0]), 1.0).unwrap();
        assert_abs_diff_eq!(s.coeffs[0], 1.5, epsilon = 1e-10);
        assert!(s.converged);
    }

    #[test]
    fn lasso_scalar_zeroed_beyond_subgradient_bound() {
        let s = solve_lasso(&mat(1, 1, &[1.0]), &vec_(&[2.0]), 4.0).unwrap();
        assert_eq!(s.coeffs[0], 0.0);
        let s = solve_lasso(&mat(1, 1, &[1.0]), &vec_(&[2.0]), 5.0).unwrap();
        assert_eq!(s.coeffs[0], 0.0);
    }

    /// Random matrix with orthonormal columns (QR of a random matrix).
    fn orthonormal_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
        let raw = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0));
        let qr = raw.qr();
        let q = qr.q();
        q.columns(0, p).into_owned()
    }

    #[test]
    fn lasso_orthonormal_design_soft_threshold_oracle() {
        // for orthonormal columns the exact solution is a_j = soft(m_j^T r, lambda/2)
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = orthonormal_design(&mut rng, 20, 5);
        let r = DVector::from_fn(20, |_, _| rng.gen_range(-2.0..2.0));
        let lambda = 0.7;
        let s = solve_lasso(&m, &r, lambda).unwrap();
        for j in 0..5 {
            let expected = soft_threshold(m.column(j).dot(&r), lambda / 2.0);
            assert_abs_diff_eq!(s.coeffs[j], expected, epsilon = 1e-6);
        }
    }

    #[test]
    fn lasso_kkt_conditions_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for lambda in [0.05, 0.5, 2.0] {
            let m = DMatrix::from_fn(15, 6, |_, _| rng.gen_range(-1.0..1.0));
            let r = DVector::from_fn(15, |_, _| rng.gen_range(-1.0..1.0));
            let s = solve_lasso(&m, &r, lambda).unwrap();
            let grad = m.transpose() * (&r - &m * &s.coeffs) * 2.0;
            for j in 0..6 {
                if s.coeffs[j] == 0.0 {
                    assert!(grad[j].abs() <= lambda + 1e-6, "KKT violated at inactive {j}");
                } else {
                    assert_abs_diff_eq!(grad[j], lambda * s.coeffs[j].signum(), epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn lasso_matches_grid_search_small_p() {
        // brute-force oracle: 1e-4 grid over coefficients for p <= 2
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = DMatrix::from_fn(8, 2, |_, _| rng.gen_range(-1.0..1.0));
        let r = DVector::from_fn(8, |_, _| rng.gen_range(-1.0..1.0));
        let lambda = 0.3;
        let s = solve_lasso(&m, &r, lambda).unwrap();
        // coarse grid over [-1, 1]^2 to locate the optimum, then a 1e-4 grid
        // around the coarse argmin
        let mut best = f64::INFINITY;
        let mut argmin = (0.0, 0.0);
        let steps = 400;
        for i in 0..=steps {
            for j in 0..=steps {
                let x = -1.0 + 2.0 * i as f64 / steps as f64;
                let y = -1.0 + 2.0 * j as f64 / steps as f64;
                let v = objective(&m, &r, &vec_(&[x, y]), lambda, 0.0);
                if v < best {
                    best = v;
                    argmin = (x, y);
                }
            }
        }
        for i in -60..=60 {
            for j in -60..=60 {
                let a = vec_(&[argmin.0 + i as f64 * 1e-4, argmin.1 + j as f64 * 1e-4]);
                best = best.min(objective(&m, &r, &a, lambda, 0.0));
            }
        }
        let got = objective(&m, &r, &s.coeffs, lambda, 0.0);
        assert!(got <= best + 2e-4, "objective {got} vs grid best {best}");
    }

    #[test]
    fn elastic_net_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = DMatrix::from_fn(12, 4, |_, _| rng.gen_range(-1.0..1.0));
        let r = DVector::from_fn(12, |_, _| rng.gen_range(-1.0..1.0));
        let lambda = 0.4;
        let en0 = solve_elastic_net(&m, &r, lambda, 0.0).unwrap();
        let ridge = solve_ridge(&m, &r, lambda).unwrap();
        assert_abs_diff_eq!((en0.coeffs - ridge).norm(), 0.0, epsilon = 1e-8);
        let en1 = solve_elastic_net(&m, &r, lambda, 1.0).unwrap();
        let lasso = solve_lasso(&m, &r, lambda).unwrap();
        assert_abs_diff_eq!((en1.coeffs - lasso.coeffs).norm(), 0.0, epsilon = 1e-8);
    }

    #[test]
    fn elastic_net_scalar_stationarity() {
        // 2(a - 2) + a + 0.5 sign(a) = 0 -> a = 7/6
        let s = solve_elastic_net(&mat(1, 1, &[1.0]), &vec_(&[2.0]), 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(s.coeffs[0], 7.0 / 6.0, epsilon = 1e-10);
    }

    #[test]
    fn elastic_net_rejects_bad_alpha() {
        assert!(solve_elastic_net(&mat(1, 1, &[1.0]), &vec_(&[1.0]), 1.0, 1.5).is_err());
    }

    #[test]
    fn debias_full_support_equals_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = DMatrix::from_fn(10, 3, |_, _| rng.gen_range(-1.0..1.0));
        let r = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
        let d = debias_on_support(&m, &r, &[0, 1, 2]).unwrap();
        let o = solve_ols(&m, &r).unwrap();
        assert_abs_diff_eq!((d - o).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn debias_orthonormal_recovers_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = orthonormal_design(&mut rng, 20, 5);
        let r = DVector::from_fn(20, |_, _| rng.gen_range(-2.0..2.0));
        let lambda = 1.0;
        let lasso = solve_lasso(&m, &r, lambda).unwrap();
        let support: Vec<usize> = (0..5).filter(|&j| lasso.coeffs[j] != 0.0).collect();
        if support.is_empty() {
            return;
        }
        let d = debias_on_support(&m, &r, &support).unwrap();
        for &j in &support {
            assert_abs_diff_eq!(d[j], m.column(j).dot(&r), epsilon = 1e-10);
        }
    }

    #[test]
    fn debias_empty_support_is_error() {
        let m = mat(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            debias_on_support(&m, &vec_(&[1.0, 2.0]), &[]),
            Err(SolverError::EmptySupport)
        ));
    }

    #[test]
    fn stls_keeps_large_coefficients() {
        // magnitudes mirror a ridge-identified dynamics row: two large, rest tiny
        let initial = vec_(&[-9.9997, 9.9996, 0.0, -1.3783e-05, 8.7112e-04, 0.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = DMatrix::from_fn(30, 8, |_, _| rng.gen_range(-1.0..1.0));
        let truth = vec_(&[-10.0, 10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let r = &m * &truth;
        let (support, coeffs) = stls_refit(&m, &r, &initial, 0.1).unwrap();
        assert_eq!(support, vec![0, 1]);
        assert_abs_diff_eq!(coeffs[0], -10.0, epsilon = 1e-8);
        assert_abs_diff_eq!(coeffs[1], 10.0, epsilon = 1e-8);
    }

    #[test]
    fn stls_all_below_threshold_gives_empty_support() {
        let m = mat(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let initial = vec_(&[0.01, -0.02]);
        let (support, coeffs) = stls_refit(&m, &vec_(&[1.0, 1.0]), &initial, 0.1).unwrap();
        assert!(support.is_empty());
        assert_eq!(coeffs.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn penalized_problem_validates() {
        let m = mat(1, 1, &[1.0]);
        assert!(PenalizedProblem::new(m.clone(), vec_(&[1.0]), -1.0, 0.5).is_err());
        assert!(PenalizedProblem::new(m.clone(), vec_(&[1.0]), 1.0, 2.0).is_err());
        assert!(PenalizedProblem::new(m, vec_(&[1.0, 2.0]), 1.0, 0.5).is_err());
    }
}
