//! Anchored ANOVA decomposition, Sobol sensitivity indices, and the combined
//! ANOVA-plus-coupling regression pipeline.
//!
//! The pipeline fixes an anchor point `c`, reads off the constant term
//! `f0 = f(c)`, interpolates the univariate corrections `f_i` with natural
//! cubic splines along the arms of a cross design, and fits the remaining
//! coupling residual with anchored product features
//! `(s_i - c_i)^m (s_j - c_j)^n` so that the correction vanishes on the cross
//! by construction.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::CrossPlan;
use crate::solvers::{self, SolverError};

#[derive(Error, Debug)]
pub enum AnovaError {
    #[error("anchor lies outside the domain in dimension {0}")]
    AnchorOutsideDomain(usize),
    #[error("duplicate knot {0} in dimension {1}")]
    DuplicateKnot(f64, usize),
    #[error("dimension {0} needs at least 2 distinct knots, got {1}")]
    TooFewKnots(usize, usize),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("model deserialization failed: {0}")]
    Deserialize(String),
}

/// Natural cubic spline interpolant through sorted knots. Evaluation outside
/// the knot range extrapolates linearly with the boundary slope.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Spline1D {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
    /// Second derivatives at the knots; rebuilt on deserialization.
    #[serde(skip)]
    second_derivs: Vec<f64>,
}

impl Spline1D {
    /// Builds the interpolant. Knot/value pairs are sorted internally;
    /// duplicate knots are an error.
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self, AnovaError> {
        if knots.len() != values.len() {
            return Err(AnovaError::Invalid(format!(
                "{} knots but {} values",
                knots.len(),
                values.len()
            )));
        }
        if knots.len() < 2 {
            return Err(AnovaError::TooFewKnots(0, knots.len()));
        }
        if knots.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(AnovaError::Invalid("non-finite knot or value".into()));
        }
        let mut pairs: Vec<(f64, f64)> = knots.into_iter().zip(values).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(AnovaError::DuplicateKnot(w[0].0, 0));
            }
        }
        let (knots, values): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let mut s = Self { knots, values, second_derivs: Vec::new() };
        s.rebuild();
        Ok(s)
    }

    /// Solves the natural-spline tridiagonal system for the knot second
    /// derivatives (Thomas algorithm).
    fn rebuild(&mut self) {
        let n = self.knots.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            let h: Vec<f64> = self.knots.windows(2).map(|w| w[1] - w[0]).collect();
            let sys = n - 2;
            let mut diag = vec![0.0; sys];
            let mut upper = vec![0.0; sys];
            let mut rhs = vec![0.0; sys];
            for i in 0..sys {
                diag[i] = (h[i] + h[i + 1]) / 3.0;
                upper[i] = h[i + 1] / 6.0;
                rhs[i] = (self.values[i + 2] - self.values[i + 1]) / h[i + 1]
                    - (self.values[i + 1] - self.values[i]) / h[i];
            }
            // forward sweep (lower[i] = h[i]/6 couples to the previous row)
            for i in 1..sys {
                let w = (h[i] / 6.0) / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[sys] = rhs[sys - 1] / diag[sys - 1];
            for i in (0..sys - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        self.second_derivs = m;
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.knots.len();
        let (lo, hi) = (self.knots[0], self.knots[n - 1]);
        if x <= lo {
            return self.values[0] + self.slope_at_segment(0, lo) * (x - lo);
        }
        if x >= hi {
            return self.values[n - 1] + self.slope_at_segment(n - 2, hi) * (x - hi);
        }
        let i = match self.knots.binary_search_by(|k| k.total_cmp(&x)) {
            Ok(j) => return self.values[j],
            Err(j) => j - 1,
        };
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - x) / h;
        let b = (x - self.knots[i]) / h;
        a * self.values[i]
            + b * self.values[i + 1]
            + ((a.powi(3) - a) * self.second_derivs[i] + (b.powi(3) - b) * self.second_derivs[i + 1])
                * h * h / 6.0
    }

    fn slope_at_segment(&self, i: usize, x: f64) -> f64 {
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - x) / h;
        let b = (x - self.knots[i]) / h;
        (self.values[i + 1] - self.values[i]) / h
            + h / 6.0
                * ((3.0 * b * b - 1.0) * self.second_derivs[i + 1]
                    - (3.0 * a * a - 1.0) * self.second_derivs[i])
    }
}

/// Anchored decomposition of a black-box function: each term is evaluated by
/// freezing every coordinate at the anchor except the term's own variables.
pub struct AnchoredDecomposition<'a> {
    pub anchor: Vec<f64>,
    pub order: usize,
    f: &'a dyn Fn(&[f64]) -> f64,
}

impl<'a> AnchoredDecomposition<'a> {
    /// `order` is 1 (univariate terms) or 2 (univariate plus pairwise).
    pub fn new(
        f: &'a dyn Fn(&[f64]) -> f64,
        anchor: Vec<f64>,
        domain: &[(f64, f64)],
        order: usize,
    ) -> Result<Self, AnovaError> {
        if !(1..=2).contains(&order) {
            return Err(AnovaError::Invalid(format!("order must be 1 or 2, got {order}")));
        }
        if anchor.len() != domain.len() {
            return Err(AnovaError::Invalid("anchor/domain dimension mismatch".into()));
        }
        for (k, (&a, &(lo, hi))) in anchor.iter().zip(domain).enumerate() {
            if a < lo || a > hi {
                return Err(AnovaError::AnchorOutsideDomain(k));
            }
        }
        Ok(Self { anchor, order, f })
    }

    pub fn f0(&self) -> f64 {
        (self.f)(&self.anchor)
    }

    /// f_i(s) = f(c | s_i) - f0
    pub fn univariate(&self, i: usize, s: f64) -> f64 {
        let mut p = self.anchor.clone();
        p[i] = s;
        (self.f)(&p) - self.f0()
    }

    /// f_{ij}(s_i, s_j) = f(c | s_i, s_j) - f_i - f_j - f0
    pub fn pairwise(&self, i: usize, j: usize, si: f64, sj: f64) -> f64 {
        let mut p = self.anchor.clone();
        p[i] = si;
        p[j] = sj;
        (self.f)(&p) - self.univariate(i, si) - self.univariate(j, sj) - self.f0()
    }

    /// Truncated reconstruction f0 + Σ f_i (+ Σ f_{ij} at order 2).
    pub fn eval_truncated(&self, point: &[f64]) -> f64 {
        let d = self.anchor.len();
        let mut v = self.f0();
        for i in 0..d {
            v += self.univariate(i, point[i]);
        }
        if self.order >= 2 {
            for i in 0..d {
                for j in (i + 1)..d {
                    v += self.pairwise(i, j, point[i], point[j]);
                }
            }
        }
        v
    }
}

/// Builds the order-1 or order-2 anchored decomposition of `f`.
pub fn anchored_decompose_exact<'a>(
    f: &'a dyn Fn(&[f64]) -> f64,
    anchor: &[f64],
    domain: &[(f64, f64)],
    order: usize,
) -> Result<AnchoredDecomposition<'a>, AnovaError> {
    AnchoredDecomposition::new(f, anchor.to_vec(), domain, order)
}

/// Monte Carlo estimate of E[a(s) b(s)] under the uniform measure on the box,
/// with the standard error of the estimate.
pub fn mc_inner_product<A, B>(
    a: A,
    b: B,
    domain: &[(f64, f64)],
    n: usize,
    seed: u64,
) -> (f64, f64)
where
    A: Fn(&[f64]) -> f64,
    B: Fn(&[f64]) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = domain.len();
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut p = vec![0.0; d];
    for _ in 0..n {
        for (k, &(lo, hi)) in domain.iter().enumerate() {
            p[k] = rng.gen_range(lo..hi);
        }
        let v = a(&p) * b(&p);
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / n as f64;
    let var = (sumsq / n as f64 - mean * mean).max(0.0);
    (mean, (var / n as f64).sqrt())
}

/// Sobol indices from term evaluators: S_n = Var(f_n) / Σ Var(f_m), each
/// variance estimated by seeded Monte Carlo on the box. Returns the indices
/// and a flag that is true when the total variance is (numerically) zero, in
/// which case all indices are zero.
pub fn sobol_indices(
    terms: &[&dyn Fn(&[f64]) -> f64],
    domain: &[(f64, f64)],
    n: usize,
    seed: u64,
) -> (Vec<f64>, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = domain.len();
    let mut sums = vec![0.0; terms.len()];
    let mut sumsqs = vec![0.0; terms.len()];
    let mut p = vec![0.0; d];
    for _ in 0..n {
        for (k, &(lo, hi)) in domain.iter().enumerate() {
            p[k] = rng.gen_range(lo..hi);
        }
        for (t, term) in terms.iter().enumerate() {
            let v = term(&p);
            sums[t] += v;
            sumsqs[t] += v * v;
        }
    }
    let vars: Vec<f64> = (0..terms.len())
        .map(|t| {
            let mean = sums[t] / n as f64;
            (sumsqs[t] / n as f64 - mean * mean).max(0.0)
        })
        .collect();
    let total: f64 = vars.iter().sum();
    if total <= f64::EPSILON {
        return (vec![0.0; terms.len()], true);
    }
    (vars.iter().map(|v| v / total).collect(), false)
}

/// Fits the d univariate spline components from cross-arm samples. For each
/// dimension, the knots are the arm coordinates plus the anchor coordinate
/// (value 0 there by the anchored property), and the values are
/// `f(c | s_j) - f0`.
pub fn fit_univariate_terms(
    anchor: &[f64],
    per_dim_coords: &[Vec<f64>],
    per_dim_values: &[Vec<f64>],
    f0: f64,
) -> Result<Vec<Spline1D>, AnovaError> {
    if per_dim_coords.len() != anchor.len() || per_dim_values.len() != anchor.len() {
        return Err(AnovaError::Invalid("per-dimension arrays must match anchor length".into()));
    }
    let mut splines = Vec::with_capacity(anchor.len());
    for (k, (coords, vals)) in per_dim_coords.iter().zip(per_dim_values).enumerate() {
        if coords.len() != vals.len() {
            return Err(AnovaError::Invalid(format!(
                "dimension {k}: {} coordinates but {} values",
                coords.len(),
                vals.len()
            )));
        }
        let mut knots = coords.clone();
        let mut values: Vec<f64> = vals.iter().map(|v| v - f0).collect();
        if !knots.contains(&anchor[k]) {
            knots.push(anchor[k]);
            values.push(0.0);
        }
        if knots.len() < 2 {
            return Err(AnovaError::TooFewKnots(k, knots.len()));
        }
        splines.push(Spline1D::new(knots, values).map_err(|e| match e {
            AnovaError::DuplicateKnot(x, _) => AnovaError::DuplicateKnot(x, k),
            other => other,
        })?);
    }
    Ok(splines)
}

/// Dense coupling model on anchored product features
/// `(s_i - c_i)^m (s_j - c_j)^n` for all pairs i < j and 1 <= m, n <= degree.
/// Every feature carries a factor that vanishes at the anchor coordinate of
/// each involved dimension, so the coupling is zero on the whole cross.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingModel {
    pub anchor: Vec<f64>,
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

impl CouplingModel {
    /// Feature index layout: pairs (i, j), i < j, in lexicographic order, and
    /// within a pair (m, n) row-major with m, n in 1..=degree.
    pub fn n_features(d: usize, degree: usize) -> usize {
        d * (d - 1) / 2 * degree * degree
    }

    pub fn feature_row(anchor: &[f64], degree: usize, point: &[f64]) -> Vec<f64> {
        let d = anchor.len();
        let mut row = Vec::with_capacity(Self::n_features(d, degree));
        for i in 0..d {
            for j in (i + 1)..d {
                let u = point[i] - anchor[i];
                let v = point[j] - anchor[j];
                for m in 1..=degree {
                    for n in 1..=degree {
                        row.push(u.powi(m as i32) * v.powi(n as i32));
                    }
                }
            }
        }
        row
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        Self::feature_row(&self.anchor, self.degree, point)
            .iter()
            .zip(&self.coeffs)
            .map(|(f, c)| f * c)
            .sum()
    }
}

/// Fits the coupling residual `f'(s) = f(s) - f0 - Σ f_i(s_i)` at the extra
/// sample points by least squares on anchored product features. When there
/// are fewer samples than coefficients the solve is ridge-regularized and a
/// warning is recorded.
pub fn fit_coupling_residual(
    points: &DMatrix<f64>,
    residuals: &DVector<f64>,
    anchor: &[f64],
    degree: usize,
    warnings: &mut Vec<String>,
) -> Result<CouplingModel, AnovaError> {
    let d = anchor.len();
    if points.ncols() != d {
        return Err(AnovaError::Invalid("coupling points/anchor dimension mismatch".into()));
    }
    let p = CouplingModel::n_features(d, degree);
    let n = points.nrows();
    let mut design = DMatrix::zeros(n, p);
    for i in 0..n {
        let pt: Vec<f64> = (0..d).map(|k| points[(i, k)]).collect();
        let row = CouplingModel::feature_row(anchor, degree, &pt);
        for (j, v) in row.iter().enumerate() {
            design[(i, j)] = *v;
        }
    }
    let coeffs = if n < p {
        warnings.push(format!(
            "coupling fit is underdetermined ({n} samples, {p} coefficients); using a ridge-regularized solve"
        ));
        solvers::solve_ridge(&design, residuals, 1e-8)?
    } else {
        solvers::solve_ols(&design, residuals)?
    };
    Ok(CouplingModel { anchor: anchor.to_vec(), degree, coeffs: coeffs.iter().cloned().collect() })
}

/// Composite anchored model: constant term, univariate splines, and an
/// optional pairwise coupling correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnovaModel {
    pub anchor: Vec<f64>,
    pub f0: f64,
    pub splines: Vec<Spline1D>,
    pub coupling: Option<CouplingModel>,
    pub sobol: Option<Vec<f64>>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl AnovaModel {
    pub fn dims(&self) -> usize {
        self.anchor.len()
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<f64, AnovaError> {
        if point.len() != self.anchor.len() {
            return Err(AnovaError::Invalid(format!(
                "point has {} entries, model expects {}",
                point.len(),
                self.anchor.len()
            )));
        }
        let mut v = self.f0;
        for (k, s) in self.splines.iter().enumerate() {
            v += s.eval(point[k]);
        }
        if let Some(c) = &self.coupling {
            v += c.eval(point);
        }
        Ok(v)
    }

    pub fn evaluate_batch(&self, points: &DMatrix<f64>) -> Result<DVector<f64>, AnovaError> {
        let d = self.anchor.len();
        let mut out = DVector::zeros(points.nrows());
        for i in 0..points.nrows() {
            let p: Vec<f64> = (0..d).map(|k| points[(i, k)]).collect();
            out[i] = self.evaluate(&p)?;
        }
        Ok(out)
    }

    /// Seeded Monte Carlo Sobol indices of the fitted terms (univariate
    /// splines, then the coupling as one term), stored on the model.
    pub fn compute_sobol(&mut self, domain: &[(f64, f64)], n: usize, seed: u64) -> &[f64] {
        let d = self.anchor.len();
        let mut terms: Vec<Box<dyn Fn(&[f64]) -> f64>> = Vec::new();
        for k in 0..d {
            let s = self.splines[k].clone();
            terms.push(Box::new(move |p: &[f64]| s.eval(p[k])));
        }
        if let Some(c) = self.coupling.clone() {
            terms.push(Box::new(move |p: &[f64]| c.eval(p)));
        }
        let refs: Vec<&dyn Fn(&[f64]) -> f64> = terms.iter().map(|b| b.as_ref()).collect();
        let (s, _flag) = sobol_indices(&refs, domain, n, seed);
        self.sobol = Some(s);
        self.sobol.as_deref().unwrap()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, AnovaError> {
        let mut m: AnovaModel =
            serde_json::from_str(s).map_err(|e| AnovaError::Deserialize(e.to_string()))?;
        for sp in &mut m.splines {
            if sp.knots.len() < 2 || sp.knots.len() != sp.values.len() {
                return Err(AnovaError::Deserialize("invalid spline knot data".into()));
            }
            sp.rebuild();
        }
        Ok(m)
    }
}

/// Full three-step pipeline: anchor constant from `f`, univariate splines on
/// the cross arms, and a coupling fit on the extra points. With `d = 1` the
/// result is a single spline and no coupling term.
pub fn fit_anova_pgd<F>(
    f: F,
    plan: &CrossPlan,
    coupling_points: &DMatrix<f64>,
    coupling_degree: usize,
) -> Result<AnovaModel, AnovaError>
where
    F: Fn(&[f64]) -> f64,
{
    let anchor = plan.anchor.clone();
    let d = anchor.len();
    let f0 = f(&anchor);
    let per_dim_values: Vec<Vec<f64>> = plan
        .per_dim_coords
        .iter()
        .enumerate()
        .map(|(k, coords)| {
            coords
                .iter()
                .map(|&s| {
                    let mut p = anchor.clone();
                    p[k] = s;
                    f(&p)
                })
                .collect()
        })
        .collect();
    let splines = fit_univariate_terms(&anchor, &plan.per_dim_coords, &per_dim_values, f0)?;
    let mut warnings = Vec::new();
    let coupling = if d >= 2 && coupling_points.nrows() > 0 {
        let mut residuals = DVector::zeros(coupling_points.nrows());
        for i in 0..coupling_points.nrows() {
            let p: Vec<f64> = (0..d).map(|k| coupling_points[(i, k)]).collect();
            let mut v = f(&p) - f0;
            for (k, s) in splines.iter().enumerate() {
                v -= s.eval(p[k]);
            }
            residuals[i] = v;
        }
        Some(fit_coupling_residual(
            coupling_points,
            &residuals,
            &anchor,
            coupling_degree,
            &mut warnings,
        )?)
    } else {
        None
    };
    Ok(AnovaModel { anchor, f0, splines, coupling, sobol: None, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling;
    use approx::assert_abs_diff_eq;

    const UNIT2: [(f64, f64); 2] = [(-1.0, 1.0), (-1.0, 1.0)];

    #[test]
    fn decompose_bilinear_at_origin() {
        let f = |p: &[f64]| p[0] + p[1] + p[0] * p[1];
        let dec = anchored_decompose_exact(&f, &[0.0, 0.0], &UNIT2, 2).unwrap();
        assert_eq!(dec.f0(), 0.0);
        assert_abs_diff_eq!(dec.univariate(0, 0.7), 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(dec.univariate(1, -0.4), -0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(dec.pairwise(0, 1, 0.7, -0.4), 0.7 * -0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(dec.eval_truncated(&[0.7, -0.4]), f(&[0.7, -0.4]), epsilon = 1e-15);
    }

    #[test]
    fn decompose_constant_function() {
        let f = |_: &[f64]| 5.0;
        let dec = anchored_decompose_exact(&f, &[0.2, -0.3], &UNIT2, 2).unwrap();
        assert_eq!(dec.f0(), 5.0);
        assert_eq!(dec.univariate(0, 0.9), 0.0);
        assert_eq!(dec.pairwise(0, 1, 0.9, 0.1), 0.0);
    }

    #[test]
    fn decompose_product_at_shifted_anchor() {
        // f = xy at c = (1,1): f0 = 1, f_x = x-1, f_y = y-1, f_xy = (x-1)(y-1)
        let f = |p: &[f64]| p[0] * p[1];
        let dom = [(0.0, 2.0), (0.0, 2.0)];
        let dec = anchored_decompose_exact(&f, &[1.0, 1.0], &dom, 2).unwrap();
        assert_eq!(dec.f0(), 1.0);
        for x in [0.1, 0.8, 1.9] {
            assert_abs_diff_eq!(dec.univariate(0, x), x - 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(dec.univariate(1, x), x - 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(
                dec.pairwise(0, 1, x, 0.3),
                (x - 1.0) * (0.3 - 1.0),
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn anchor_outside_domain_rejected() {
        let f = |p: &[f64]| p[0];
        assert!(matches!(
            anchored_decompose_exact(&f, &[2.0, 0.0], &UNIT2, 1),
            Err(AnovaError::AnchorOutsideDomain(0))
        ));
    }

    #[test]
    fn exact_terms_are_mc_orthogonal() {
        // exact ANOVA of f = x + y + xy on [-1,1]^2 has terms x, y, xy;
        // their pairwise MC inner products must vanish within 3 SE
        let tx = |p: &[f64]| p[0];
        let ty = |p: &[f64]| p[1];
        let txy = |p: &[f64]| p[0] * p[1];
        let pairs: [(&dyn Fn(&[f64]) -> f64, &dyn Fn(&[f64]) -> f64); 3] =
            [(&tx, &ty), (&tx, &txy), (&ty, &txy)];
        for (i, (a, b)) in pairs.iter().enumerate() {
            let (ip, se) = mc_inner_product(a, b, &UNIT2, 100_000, 42 + i as u64);
            assert!(ip.abs() <= 3.0 * se, "pair {i}: inner product {ip} exceeds 3*SE {se}");
        }
    }

    #[test]
    fn sobol_additive_symmetric() {
        let tx = |p: &[f64]| p[0];
        let ty = |p: &[f64]| p[1];
        let txy = |_: &[f64]| 0.0;
        let (s, flag) =
            sobol_indices(&[&tx, &ty, &txy], &UNIT2, 100_000, 7);
        assert!(!flag);
        assert_abs_diff_eq!(s[0], 0.5, epsilon = 0.02);
        assert_abs_diff_eq!(s[1], 0.5, epsilon = 0.02);
        assert_abs_diff_eq!(s[2], 0.0, epsilon = 0.01);
        assert_abs_diff_eq!(s.iter().sum::<f64>(), 1.0, epsilon = 0.02);
    }

    #[test]
    fn sobol_constant_flags_zero_variance() {
        let t = |_: &[f64]| 3.0;
        let (s, flag) = sobol_indices(&[&t], &UNIT2, 10_000, 1);
        assert!(flag);
        assert_eq!(s, vec![0.0]);
    }

    #[test]
    fn sobol_single_active_term() {
        let tx = |p: &[f64]| p[0];
        let tz = |_: &[f64]| 0.0;
        let (s, flag) = sobol_indices(&[&tx, &tz], &UNIT2, 50_000, 3);
        assert!(!flag);
        assert_abs_diff_eq!(s[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn spline_two_knots_is_linear() {
        let s = Spline1D::new(vec![0.0, 1.0], vec![1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(s.eval(0.5), 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s.eval(0.25), 1.5, epsilon = 1e-14);
        // linear extrapolation outside
        assert_abs_diff_eq!(s.eval(2.0), 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.eval(-1.0), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn spline_reproduces_collinear_data() {
        let knots: Vec<f64> = (0..7).map(|i| i as f64 * 0.5).collect();
        let values: Vec<f64> = knots.iter().map(|x| 2.0 * x - 1.0).collect();
        let s = Spline1D::new(knots.clone(), values).unwrap();
        for w in knots.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            assert_abs_diff_eq!(s.eval(mid), 2.0 * mid - 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn spline_interpolates_exactly_at_knots() {
        let knots = vec![0.0, 0.3, 0.55, 0.8, 1.0];
        let values = vec![1.0, -0.5, 2.0, 0.1, 0.9];
        let s = Spline1D::new(knots.clone(), values.clone()).unwrap();
        for (k, v) in knots.iter().zip(&values) {
            assert_abs_diff_eq!(s.eval(*k), *v, epsilon = 1e-13);
        }
    }

    #[test]
    fn spline_quadratic_interior_error_small() {
        // x^2 on [0,1] with 11 equispaced knots: midpoint error < 1e-3
        let knots: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let values: Vec<f64> = knots.iter().map(|x| x * x).collect();
        let s = Spline1D::new(knots, values).unwrap();
        let mut max_err = 0.0_f64;
        for i in 0..100 {
            let x = (i as f64 + 0.5) / 100.0;
            max_err = max_err.max((s.eval(x) - x * x).abs());
        }
        assert!(max_err < 1e-3, "max midpoint error {max_err}");
    }

    #[test]
    fn spline_duplicate_knots_rejected() {
        assert!(matches!(
            Spline1D::new(vec![0.0, 0.5, 0.5, 1.0], vec![0.0; 4]),
            Err(AnovaError::DuplicateKnot(_, _))
        ));
    }

    #[test]
    fn univariate_terms_anchor_value_is_zero() {
        let anchor = [0.5, 0.5];
        let coords = vec![vec![0.0, 0.25, 0.75, 1.0], vec![0.1, 0.9]];
        let f = |p: &[f64]| p[0].sin() + p[1] * p[1];
        let f0 = f(&anchor);
        let values: Vec<Vec<f64>> = coords
            .iter()
            .enumerate()
            .map(|(k, cs)| {
                cs.iter()
                    .map(|&s| {
                        let mut p = anchor.to_vec();
                        p[k] = s;
                        f(&p)
                    })
                    .collect()
            })
            .collect();
        let splines = fit_univariate_terms(&anchor, &coords, &values, f0).unwrap();
        for (k, s) in splines.iter().enumerate() {
            assert_abs_diff_eq!(s.eval(anchor[k]), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn coupling_recovers_bilinear_coefficient() {
        let anchor = [0.5, 0.5];
        let pts = DMatrix::from_row_slice(4, 2, &[0.1, 0.2, 0.9, 0.3, 0.2, 0.8, 0.7, 0.9]);
        let res = DVector::from_iterator(
            4,
            (0..4).map(|i| (pts[(i, 0)] - 0.5) * (pts[(i, 1)] - 0.5)),
        );
        let mut w = Vec::new();
        let cm = fit_coupling_residual(&pts, &res, &anchor, 1, &mut w).unwrap();
        assert!(w.is_empty());
        assert_abs_diff_eq!(cm.coeffs[0], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn coupling_zero_for_additive_residual() {
        // residual identically zero -> all coefficients zero
        let anchor = [0.0, 0.0];
        let pts = DMatrix::from_row_slice(6, 2, &[0.1, 0.2, -0.9, 0.3, 0.2, -0.8, 0.7, 0.9, -0.4, -0.6, 0.5, -0.1]);
        let res = DVector::zeros(6);
        let mut w = Vec::new();
        let cm = fit_coupling_residual(&pts, &res, &anchor, 2, &mut w).unwrap();
        assert!(cm.coeffs.iter().all(|c| c.abs() < 1e-8), "{:?}", cm.coeffs);
    }

    #[test]
    fn coupling_underdetermined_warns() {
        let anchor = [0.0, 0.0];
        let pts = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.9, 0.3]);
        let res = DVector::from_row_slice(&[0.5, -0.2]);
        let mut w = Vec::new();
        let _ = fit_coupling_residual(&pts, &res, &anchor, 2, &mut w).unwrap();
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn coupling_vanishes_on_cross() {
        let anchor = [0.3, -0.2, 0.1];
        let cm = CouplingModel { anchor: anchor.to_vec(), degree: 2, coeffs: vec![1.0; CouplingModel::n_features(3, 2)] };
        // any point equal to the anchor in all but one coordinate
        for k in 0..3 {
            let mut p = anchor.to_vec();
            p[k] = 0.77;
            assert_abs_diff_eq!(cm.eval(&p), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn pipeline_reproduces_f_on_cross_and_anchor() {
        let domain = vec![(0.0, 1.0), (0.0, 1.0)];
        let plan = sampling::cross_plan(&[0.5, 0.5], &[10, 10], &domain).unwrap();
        let f = |p: &[f64]| (3.0 * p[0]).cos() + p[1].exp() + p[0] * p[1];
        let extra = sampling::lhs(4, 2, &domain, 99).unwrap();
        let model = fit_anova_pgd(f, &plan, &extra.points, 2).unwrap();
        let cross_pts = plan.points();
        for i in 0..cross_pts.nrows() {
            let p = [cross_pts[(i, 0)], cross_pts[(i, 1)]];
            assert_abs_diff_eq!(model.evaluate(&p).unwrap(), f(&p), epsilon = 1e-9);
        }
    }

    #[test]
    fn pipeline_additive_function_has_tiny_coupling() {
        let domain = vec![(0.0, 1.0), (0.0, 1.0)];
        let plan = sampling::cross_plan(&[0.5, 0.5], &[12, 12], &domain).unwrap();
        let f = |p: &[f64]| p[0] * p[0] + (2.0 * p[1]).sin();
        let extra = sampling::lhs(6, 2, &domain, 4).unwrap();
        let model = fit_anova_pgd(f, &plan, &extra.points, 2).unwrap();
        let c = model.coupling.as_ref().unwrap();
        // residual on the extras is pure spline interpolation error, so the
        // coupling term only picks up that noise floor
        let test = sampling::lhs(100, 2, &domain, 5).unwrap();
        for i in 0..100 {
            let p = [test.points[(i, 0)], test.points[(i, 1)]];
            assert!(c.eval(&p).abs() < 5e-3, "coupling {} at {:?}", c.eval(&p), p);
        }
    }

    #[test]
    fn pipeline_1d_is_a_single_spline() {
        let domain = vec![(0.0, 1.0)];
        let plan = sampling::cross_plan(&[0.5], &[9], &domain).unwrap();
        let f = |p: &[f64]| (4.0 * p[0]).sin();
        let model = fit_anova_pgd(f, &plan, &DMatrix::zeros(0, 1), 2).unwrap();
        assert!(model.coupling.is_none());
        assert_eq!(model.splines.len(), 1);
        assert_abs_diff_eq!(model.evaluate(&[0.5]).unwrap(), f(&[0.5]), epsilon = 1e-12);
    }

    #[test]
    fn model_json_round_trip() {
        let domain = vec![(0.0, 1.0), (0.0, 1.0)];
        let plan = sampling::cross_plan(&[0.5, 0.5], &[5, 5], &domain).unwrap();
        let f = |p: &[f64]| p[0] * p[1] + p[0];
        let extra = sampling::lhs(4, 2, &domain, 2).unwrap();
        let mut model = fit_anova_pgd(f, &plan, &extra.points, 2).unwrap();
        model.compute_sobol(&domain, 10_000, 11);
        let restored = AnovaModel::from_json(&model.to_json()).unwrap();
        let test = sampling::lhs(50, 2, &domain, 6).unwrap();
        for i in 0..50 {
            let p = [test.points[(i, 0)], test.points[(i, 1)]];
            assert_eq!(model.evaluate(&p).unwrap(), restored.evaluate(&p).unwrap());
        }
        let parsed: serde_json::Value = serde_json::from_str(&model.to_json()).unwrap();
        for key in ["anchor", "f0", "splines", "coupling", "sobol"] {
            assert!(parsed.get(key).is_some(), "missing key {key}");
        }
    }

    #[test]
    fn model_sobol_sums_to_one() {
        let domain = vec![(0.0, 1.0), (0.0, 1.0)];
        let plan = sampling::cross_plan(&[0.5, 0.5], &[10, 10], &domain).unwrap();
        let f = |p: &[f64]| 2.0 * p[0] + 0.5 * p[1] + p[0] * p[1];
        let extra = sampling::lhs(4, 2, &domain, 3).unwrap();
        let mut model = fit_anova_pgd(f, &plan, &extra.points, 1).unwrap();
        let s = model.compute_sobol(&domain, 100_000, 13).to_vec();
        assert_abs_diff_eq!(s.iter().sum::<f64>(), 1.0, epsilon = 0.02);
        assert!(s[0] > s[1], "x should dominate: {s:?}");
    }
}
