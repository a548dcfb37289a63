//! One-dimensional approximation bases.
//!
//! A [`BasisSpec`] pairs a polynomial family (Chebyshev first kind or plain
//! monomials) with a degree and a closed interval. Evaluation maps the input
//! affinely onto the reference interval `[-1, 1]` before applying the family
//! recurrence, so a "degree p" spec always yields `p + 1` basis values with the
//! constant function first.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum BasisError {
    #[error("invalid domain [{0}, {1}]: bounds must be finite with lo < hi")]
    InvalidDomain(f64, f64),
    #[error("evaluation point is not finite: {0}")]
    NonFiniteInput(f64),
    #[error("dimension index {index} out of range for {dims} dimensions")]
    DimensionOutOfRange { index: usize, dims: usize },
    #[error("point has {got} entries but {expected} dimensions are specified")]
    PointLengthMismatch { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisFamily {
    Chebyshev,
    Monomial,
}

/// One-dimensional basis: family, degree (D − 1, so `degree + 1` functions) and
/// the interval the inputs live on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: BasisFamily,
    pub degree: usize,
    pub lo: f64,
    pub hi: f64,
}

impl BasisSpec {
    pub fn new(family: BasisFamily, degree: usize, lo: f64, hi: f64) -> Result<Self, BasisError> {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(BasisError::InvalidDomain(lo, hi));
        }
        Ok(Self { family, degree, lo, hi })
    }

    /// Number of basis functions (degrees of freedom).
    pub fn len(&self) -> usize {
        self.degree + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Affine map from `[lo, hi]` onto the reference interval `[-1, 1]`.
    /// Inputs outside the interval are mapped, not clamped.
    pub fn map_to_reference(&self, s: f64) -> f64 {
        // midpoint form so the map is exactly the identity on [-1, 1]
        let mid = 0.5 * (self.lo + self.hi);
        let half = 0.5 * (self.hi - self.lo);
        (s - mid) / half
    }

    /// Evaluates all `degree + 1` basis functions at `s`.
    pub fn eval(&self, s: f64) -> Result<Vec<f64>, BasisError> {
        self.eval_with_degree(s, self.degree)
    }

    /// Evaluates the first `degree + 1` basis functions at `s`, ignoring the
    /// spec's own degree. Modes fitted under a modal-adaptivity schedule carry
    /// their own degrees, which may differ from the basis spec's maximum.
    pub fn eval_with_degree(&self, s: f64, degree: usize) -> Result<Vec<f64>, BasisError> {
        if !s.is_finite() {
            return Err(BasisError::NonFiniteInput(s));
        }
        let t = self.map_to_reference(s);
        let mut out = Vec::with_capacity(degree + 1);
        match self.family {
            BasisFamily::Chebyshev => {
                out.push(1.0);
                if degree >= 1 {
                    out.push(t);
                }
                for n in 2..=degree {
                    let next = 2.0 * t * out[n - 1] - out[n - 2];
                    out.push(next);
                }
            }
            BasisFamily::Monomial => {
                let mut p = 1.0;
                out.push(1.0);
                for _ in 1..=degree {
                    p *= t;
                    out.push(p);
                }
            }
        }
        Ok(out)
    }
}

/// Evaluates the basis of dimension `k` (0-based) at the `k`-th coordinate of
/// `point`. This is the row block entering the direction-system design matrix.
pub fn design_row(specs: &[BasisSpec], point: &[f64], k: usize) -> Result<Vec<f64>, BasisError> {
    if point.len() != specs.len() {
        return Err(BasisError::PointLengthMismatch { got: point.len(), expected: specs.len() });
    }
    let spec = specs
        .get(k)
        .ok_or(BasisError::DimensionOutOfRange { index: k, dims: specs.len() })?;
    spec.eval(point[k])
}
