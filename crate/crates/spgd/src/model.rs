//! The separated-representation model: a sum of rank-one products of
//! one-dimensional basis expansions.
//!
//! Each [`Mode`] stores one coefficient vector per dimension together with the
//! per-dimension degrees that were active when it was fitted; modes of different
//! degrees coexist in the same model. Evaluation of the model at a point is
//! `sum_m prod_k (N_m^k(s^k)^T a_m^k)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, BasisSpec};

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("mode has {got} coefficient blocks, model has {expected} dimensions")]
    ModeDimensionMismatch { got: usize, expected: usize },
    #[error("mode coefficients for dimension {dim} have length {got}, expected {expected}")]
    ModeCoeffLength { dim: usize, got: usize, expected: usize },
    #[error("mode coefficients contain non-finite values in dimension {0}")]
    NonFiniteCoeff(usize),
    #[error("point has {got} entries, model has {expected} dimensions")]
    PointDimensionMismatch { got: usize, expected: usize },
    #[error("mode index {index} out of range, model has {modes} modes")]
    ModeIndexOutOfRange { index: usize, modes: usize },
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("model deserialization failed: {0}")]
    Format(String),
}

/// One rank-one term of the separated sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    /// Per-dimension degrees active when this mode was fitted.
    pub degrees: Vec<usize>,
    /// Coefficient vector per dimension; entry `k` has length `degrees[k] + 1`.
    pub coeffs: Vec<Vec<f64>>,
}

impl Mode {
    pub fn new(degrees: Vec<usize>, coeffs: Vec<Vec<f64>>) -> Self {
        Self { degrees, coeffs }
    }

    fn validate(&self, d: usize) -> Result<(), ModelError> {
        if self.degrees.len() != d || self.coeffs.len() != d {
            return Err(ModelError::ModeDimensionMismatch { got: self.coeffs.len(), expected: d });
        }
        for (k, (deg, a)) in self.degrees.iter().zip(&self.coeffs).enumerate() {
            if a.len() != deg + 1 {
                return Err(ModelError::ModeCoeffLength { dim: k, got: a.len(), expected: deg + 1 });
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteCoeff(k));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub method: String,
    pub seed: u64,
}

impl Default for ModelMeta {
    fn default() -> Self {
        Self { method: "unspecified".to_string(), seed: 0 }
    }
}

/// Rank-`M` separated model. Immutable after fitting; evaluation is pure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparatedModel {
    pub d: usize,
    /// Family and domain per dimension. Each basis spec's own degree records the
    /// maximum allowed; individual modes carry their actual degrees.
    pub specs: Vec<BasisSpec>,
    pub modes: Vec<Mode>,
    pub meta: ModelMeta,
}

impl SeparatedModel {
    pub fn new(specs: Vec<BasisSpec>, meta: ModelMeta) -> Self {
        let d = specs.len();
        Self { d, specs, modes: Vec::new(), meta }
    }

    pub fn rank(&self) -> usize {
        self.modes.len()
    }

    /// Appends a rank-one term. Evaluation afterwards equals the old evaluation
    /// plus the new term at every point.
    pub fn push_mode(&mut self, mode: Mode) -> Result<(), ModelError> {
        mode.validate(self.d)?;
        self.modes.push(mode);
        Ok(())
    }

    /// Value of mode `m` at one point: the product over dimensions of the
    /// one-dimensional expansions.
    fn mode_value(&self, mode: &Mode, point: &[f64]) -> Result<f64, ModelError> {
        let mut prod = 1.0;
        for k in 0..self.d {
            let n = self.specs[k].eval_with_degree(point[k], mode.degrees[k])?;
            let psi: f64 = n.iter().zip(&mode.coeffs[k]).map(|(b, a)| b * a).sum();
            prod *= psi;
        }
        Ok(prod)
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<f64, ModelError> {
        if point.len() != self.d {
            return Err(ModelError::PointDimensionMismatch { got: point.len(), expected: self.d });
        }
        let mut sum = 0.0;
        for mode in &self.modes {
            sum += self.mode_value(mode, point)?;
        }
        Ok(sum)
    }

    /// Rowwise evaluation, in row order.
    pub fn evaluate_batch(&self, points: &DMatrix<f64>) -> Result<DVector<f64>, ModelError> {
        if points.ncols() != self.d && points.nrows() > 0 {
            return Err(ModelError::PointDimensionMismatch { got: points.ncols(), expected: self.d });
        }
        let mut out = DVector::zeros(points.nrows());
        let mut row = vec![0.0; self.d];
        for i in 0..points.nrows() {
            for k in 0..self.d {
                row[k] = points[(i, k)];
            }
            out[i] = self.evaluate(&row)?;
        }
        Ok(out)
    }

    /// Partial evaluation of mode `m` on all points is limited to the current
    /// rank; evaluation with only the first `upto` modes.
    pub fn evaluate_batch_truncated(
        &self,
        points: &DMatrix<f64>,
        upto: usize,
    ) -> Result<DVector<f64>, ModelError> {
        if points.ncols() != self.d && points.nrows() > 0 {
            return Err(ModelError::PointDimensionMismatch { got: points.ncols(), expected: self.d });
        }
        let mut out = DVector::zeros(points.nrows());
        let mut row = vec![0.0; self.d];
        for i in 0..points.nrows() {
            for k in 0..self.d {
                row[k] = points[(i, k)];
            }
            let mut sum = 0.0;
            for mode in self.modes.iter().take(upto) {
                sum += self.mode_value(mode, &row)?;
            }
            out[i] = sum;
        }
        Ok(out)
    }

    /// Per-point product of the one-dimensional expansions of mode `m` over all
    /// dimensions except `skip` (0-based). These are the scalar weights that
    /// multiply the design row when assembling a direction system.
    pub fn partial_products(
        &self,
        points: &DMatrix<f64>,
        mode_index: usize,
        skip: usize,
    ) -> Result<DVector<f64>, ModelError> {
        let mode = self
            .modes
            .get(mode_index)
            .ok_or(ModelError::ModeIndexOutOfRange { index: mode_index, modes: self.modes.len() })?;
        if skip >= self.d {
            return Err(ModelError::ModeIndexOutOfRange { index: skip, modes: self.d });
        }
        if points.ncols() != self.d && points.nrows() > 0 {
            return Err(ModelError::PointDimensionMismatch { got: points.ncols(), expected: self.d });
        }
        let mut out = DVector::from_element(points.nrows(), 1.0);
        for k in 0..self.d {
            if k == skip {
                continue;
            }
            for i in 0..points.nrows() {
                let n = self.specs[k].eval_with_degree(points[(i, k)], mode.degrees[k])?;
                let psi: f64 = n.iter().zip(&mode.coeffs[k]).map(|(b, a)| b * a).sum();
                out[i] *= psi;
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let model: SeparatedModel =
            serde_json::from_str(s).map_err(|e| ModelError::Format(e.to_string()))?;
        if model.specs.len() != model.d {
            return Err(ModelError::Format(format!(
                "model declares d={} but has {} specs",
                model.d,
                model.specs.len()
            )));
        }
        for mode in &model.modes {
            mode.validate(model.d).map_err(|e| ModelError::Format(e.to_string()))?;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisFamily;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn monomial_specs(d: usize, degree: usize) -> Vec<BasisSpec> {
        (0..d)
            .map(|_| BasisSpec::new(BasisFamily::Monomial, degree, -1.0, 1.0).unwrap())
            .collect()
    }

    fn xy_model() -> SeparatedModel {
        // f(x, y) = x * y via monomial degree-1 bases on [-1, 1]
        let mut m = SeparatedModel::new(monomial_specs(2, 1), ModelMeta::default());
        m.push_mode(Mode::new(vec![1, 1], vec![vec![0.0, 1.0], vec![0.0, 1.0]])).unwrap();
        m
    }

    #[test]
    fn empty_model_evaluates_to_zero() {
        let m = SeparatedModel::new(monomial_specs(2, 1), ModelMeta::default());
        assert_eq!(m.evaluate(&[0.3, -0.8]).unwrap(), 0.0);
    }

    #[test]
    fn rank_one_product() {
        let m = xy_model();
        assert_abs_diff_eq!(m.evaluate(&[0.5, 0.4]).unwrap(), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn modes_are_additive() {
        let mut m = xy_model();
        m.push_mode(Mode::new(vec![1, 1], vec![vec![0.0, 1.0], vec![0.0, 1.0]])).unwrap();
        assert_abs_diff_eq!(m.evaluate(&[0.5, 0.4]).unwrap(), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn batch_evaluation_rowwise() {
        let m = xy_model();
        let pts = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 0.0, 5.0, -1.0, 1.0]);
        let out = m.evaluate_batch(&pts).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 0.0, -1.0]);
    }

    #[test]
    fn batch_on_empty_matrix() {
        let m = xy_model();
        let pts = DMatrix::<f64>::zeros(0, 2);
        assert_eq!(m.evaluate_batch(&pts).unwrap().len(), 0);
    }

    #[test]
    fn batch_on_rank_zero_model() {
        let m = SeparatedModel::new(monomial_specs(2, 1), ModelMeta::default());
        let pts = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(m.evaluate_batch(&pts).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_mode_leaves_evaluation_unchanged() {
        let mut m = xy_model();
        let before = m.evaluate(&[0.3, 0.9]).unwrap();
        m.push_mode(Mode::new(vec![1, 1], vec![vec![0.0, 0.0], vec![0.0, 0.0]])).unwrap();
        assert_eq!(m.evaluate(&[0.3, 0.9]).unwrap(), before);
    }

    #[test]
    fn wrong_dimension_mode_rejected() {
        let mut m = xy_model();
        let bad = Mode::new(vec![1], vec![vec![0.0, 1.0]]);
        assert!(m.push_mode(bad).is_err());
    }

    #[test]
    fn partial_products_skip_dimension() {
        // a^2 = (1, 1), monomial degree 1 on [-4, 4], y = 3 -> 1 + 3/4 = 1.75
        let specs = vec![
            BasisSpec::new(BasisFamily::Monomial, 1, -4.0, 4.0).unwrap(),
            BasisSpec::new(BasisFamily::Monomial, 1, -4.0, 4.0).unwrap(),
        ];
        let mut m = SeparatedModel::new(specs, ModelMeta::default());
        m.push_mode(Mode::new(vec![1, 1], vec![vec![1.0, 1.0], vec![1.0, 1.0]])).unwrap();
        let pts = DMatrix::from_row_slice(1, 2, &[0.0, 3.0]);
        let w = m.partial_products(&pts, 0, 0).unwrap();
        assert_abs_diff_eq!(w[0], 1.75, epsilon = 1e-15);
    }

    #[test]
    fn partial_products_degenerate_1d_is_ones() {
        let specs = vec![BasisSpec::new(BasisFamily::Monomial, 1, -1.0, 1.0).unwrap()];
        let mut m = SeparatedModel::new(specs, ModelMeta::default());
        m.push_mode(Mode::new(vec![1], vec![vec![2.0, 3.0]])).unwrap();
        let pts = DMatrix::from_row_slice(2, 1, &[0.5, -0.5]);
        let w = m.partial_products(&pts, 0, 0).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn partial_products_zero_factor_gives_zeros() {
        let mut m = xy_model();
        m.modes[0].coeffs[1] = vec![0.0, 0.0];
        let pts = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.1, 0.2]);
        let w = m.partial_products(&pts, 0, 0).unwrap();
        assert_eq!(w.as_slice(), &[0.0, 0.0]);
    }

    fn random_model(rng: &mut ChaCha8Rng, d: usize, modes: usize, degree: usize) -> SeparatedModel {
        let mut m = SeparatedModel::new(monomial_specs(d, degree), ModelMeta::default());
        for _ in 0..modes {
            let coeffs: Vec<Vec<f64>> = (0..d)
                .map(|_| (0..=degree).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            m.push_mode(Mode::new(vec![degree; d], coeffs)).unwrap();
        }
        m
    }

    #[test]
    fn serialization_round_trip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_model(&mut rng, 3, 4, 3);
        let restored = SeparatedModel::from_json(&m.to_json()).unwrap();
        for _ in 0..100 {
            let p: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert_eq!(m.evaluate(&p).unwrap().to_bits(), restored.evaluate(&p).unwrap().to_bits());
        }
    }

    #[test]
    fn json_shape_matches_interface() {
        let m = xy_model();
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(v["d"], 2);
        assert_eq!(v["specs"][0]["family"], "monomial");
        assert_eq!(v["modes"][0]["degrees"][0], 1);
        assert!(v["meta"]["method"].is_string());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn linearity_in_modes(seed in 0u64..1000, d in 1usize..=5, m_a in 0usize..=4, m_b in 0usize..=4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let full = random_model(&mut rng, d, m_a + m_b, 2);
            let mut a_only = SeparatedModel::new(full.specs.clone(), ModelMeta::default());
            let mut b_only = a_only.clone();
            for (i, mode) in full.modes.iter().enumerate() {
                if i < m_a {
                    a_only.push_mode(mode.clone()).unwrap();
                } else {
                    b_only.push_mode(mode.clone()).unwrap();
                }
            }
            let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lhs = full.evaluate(&p).unwrap();
            let rhs = a_only.evaluate(&p).unwrap() + b_only.evaluate(&p).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn rank_one_factor_rescaling_invariance(seed in 0u64..1000, c in prop::sample::select(vec![0.5f64, -2.0, 3.5, 1e-3])) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_model(&mut rng, 2, 1, 2);
            let mut scaled = m.clone();
            for v in &mut scaled.modes[0].coeffs[0] {
                *v *= c;
            }
            for v in &mut scaled.modes[0].coeffs[1] {
                *v /= c;
            }
            let p: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = m.evaluate(&p).unwrap();
            let b = scaled.evaluate(&p).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }
}
