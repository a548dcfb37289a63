//! Design-of-experiments generators: Latin hypercube, nested Clenshaw-Curtis
//! nodes, Smolyak sparse grids, and anchor-cross plans.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SamplingError {
    #[error("invalid box in dimension {dim}: [{lo}, {hi}]")]
    InvalidBox { dim: usize, lo: f64, hi: f64 },
    #[error("sample count must be at least 1")]
    EmptyPlan,
    #[error("anchor coordinate {0} lies outside the box in dimension {1}")]
    AnchorOutsideBox(f64, usize),
    #[error("box has {got} dimensions, expected {expected}")]
    BoxDimensionMismatch { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    Lhs,
    Smolyak,
    Cross,
    FullGrid,
}

/// A set of sample points with the provenance needed to regenerate it.
#[derive(Debug, Clone)]
pub struct SamplePlan {
    pub kind: PlanKind,
    pub points: DMatrix<f64>,
    pub seed: Option<u64>,
    pub level: Option<usize>,
    pub domain: Vec<(f64, f64)>,
}

/// Cross design centered at an anchor: per dimension, points that differ from
/// the anchor in that coordinate only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossPlan {
    pub anchor: Vec<f64>,
    /// Cross coordinates per dimension, anchor coordinate excluded.
    pub per_dim_coords: Vec<Vec<f64>>,
}

impl CrossPlan {
    /// All plan points: the anchor first, then the cross points dimension by
    /// dimension in coordinate order.
    pub fn points(&self) -> DMatrix<f64> {
        let d = self.anchor.len();
        let total = 1 + self.per_dim_coords.iter().map(Vec::len).sum::<usize>();
        let mut m = DMatrix::zeros(total, d);
        for k in 0..d {
            m[(0, k)] = self.anchor[k];
        }
        let mut row = 1;
        for (dim, coords) in self.per_dim_coords.iter().enumerate() {
            for &c in coords {
                for k in 0..d {
                    m[(row, k)] = if k == dim { c } else { self.anchor[k] };
                }
                row += 1;
            }
        }
        m
    }

    pub fn len(&self) -> usize {
        1 + self.per_dim_coords.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn validate_box(domain: &[(f64, f64)]) -> Result<(), SamplingError> {
    for (dim, &(lo, hi)) in domain.iter().enumerate() {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(SamplingError::InvalidBox { dim, lo, hi });
        }
    }
    Ok(())
}

/// Latin hypercube sample: in every dimension the `n` points occupy `n`
/// distinct equal-width strata, one point per stratum, uniform within each.
pub fn lhs(n: usize, d: usize, domain: &[(f64, f64)], seed: u64) -> Result<SamplePlan, SamplingError> {
    if n == 0 {
        return Err(SamplingError::EmptyPlan);
    }
    if domain.len() != d {
        return Err(SamplingError::BoxDimensionMismatch { got: domain.len(), expected: d });
    }
    validate_box(domain)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = DMatrix::zeros(n, d);
    let mut strata: Vec<usize> = (0..n).collect();
    for k in 0..d {
        // Fisher-Yates shuffle of the stratum assignment
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            strata.swap(i, j);
        }
        let (lo, hi) = domain[k];
        let width = (hi - lo) / n as f64;
        for (i, &s) in strata.iter().enumerate() {
            let u: f64 = rng.gen();
            points[(i, k)] = lo + (s as f64 + u) * width;
        }
    }
    Ok(SamplePlan { kind: PlanKind::Lhs, points, seed: Some(seed), level: None, domain: domain.to_vec() })
}

/// Nested Clenshaw-Curtis nodes on `[-1, 1]`: one node `{0}` at level 0, then
/// `2^l + 1` cosine-spaced nodes, ascending. Generated symmetrically so the
/// node sets nest bit-exactly across levels.
pub fn clenshaw_curtis_nodes(level: usize) -> Vec<f64> {
    if level == 0 {
        return vec![0.0];
    }
    let n = 1usize << level; // nodes are cos(j*pi/n), j = 0..=n
    let mut nodes = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let x = if 2 * j == n {
            0.0
        } else if 2 * j < n {
            // mirror of the positive half so x_{n-j} = -x_j exactly
            -(((j as f64) * std::f64::consts::PI) / n as f64).cos()
        } else {
            (((n - j) as f64) * std::f64::consts::PI / n as f64).cos()
        };
        nodes.push(x);
    }
    nodes
}

/// Isotropic Smolyak sparse grid: the union of tensor products of nested
/// Clenshaw-Curtis node sets over multi-indices with `|l|_1 <= level`,
/// deduplicated and affinely mapped onto the box. Points are emitted in
/// lexicographic order of their coordinates.
pub fn smolyak_grid(
    d: usize,
    level: usize,
    domain: &[(f64, f64)],
) -> Result<SamplePlan, SamplingError> {
    if domain.len() != d {
        return Err(SamplingError::BoxDimensionMismatch { got: domain.len(), expected: d });
    }
    validate_box(domain)?;
    let node_sets: Vec<Vec<f64>> = (0..=level).map(clenshaw_curtis_nodes).collect();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut multi_index = vec![0usize; d];
    loop {
        if multi_index.iter().sum::<usize>() <= level {
            // tensor product of the node sets selected by this multi-index
            let mut idx = vec![0usize; d];
            loop {
                let row: Vec<f64> = (0..d).map(|k| node_sets[multi_index[k]][idx[k]]).collect();
                rows.push(row);
                let mut k = 0;
                loop {
                    if k == d {
                        break;
                    }
                    idx[k] += 1;
                    if idx[k] < node_sets[multi_index[k]].len() {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == d {
                    break;
                }
            }
        }
        // advance the multi-index (odometer over 0..=level per entry)
        let mut k = 0;
        loop {
            if k == d {
                break;
            }
            multi_index[k] += 1;
            if multi_index[k] <= level {
                break;
            }
            multi_index[k] = 0;
            k += 1;
        }
        if k == d {
            break;
        }
    }
    rows.sort_by(|a, b| a.partial_cmp(b).expect("grid nodes are finite"));
    rows.dedup_by(|a, b| a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    let mut points = DMatrix::zeros(rows.len(), d);
    for (i, row) in rows.iter().enumerate() {
        for k in 0..d {
            let (lo, hi) = domain[k];
            // midpoint form keeps mapped nodes exactly symmetric about the center
            points[(i, k)] = 0.5 * (lo + hi) + row[k] * 0.5 * (hi - lo);
        }
    }
    Ok(SamplePlan {
        kind: PlanKind::Smolyak,
        points,
        seed: None,
        level: Some(level),
        domain: domain.to_vec(),
    })
}

/// Cross plan: per dimension `i`, `counts[i]` equispaced coordinates spanning
/// that dimension's interval (endpoints included), anchored at `anchor`. A
/// coordinate coinciding with the anchor's is dropped, since the anchor itself
/// is part of the plan.
pub fn cross_plan(
    anchor: &[f64],
    counts: &[usize],
    domain: &[(f64, f64)],
) -> Result<CrossPlan, SamplingError> {
    let d = anchor.len();
    if domain.len() != d {
        return Err(SamplingError::BoxDimensionMismatch { got: domain.len(), expected: d });
    }
    validate_box(domain)?;
    for (k, &c) in anchor.iter().enumerate() {
        let (lo, hi) = domain[k];
        if c < lo || c > hi {
            return Err(SamplingError::AnchorOutsideBox(c, k));
        }
    }
    let mut per_dim = Vec::with_capacity(d);
    for k in 0..d {
        let n = counts.get(k).copied().unwrap_or(0);
        let (lo, hi) = domain[k];
        let mut coords = Vec::with_capacity(n);
        for j in 0..n {
            let c = if n == 1 { (lo + hi) / 2.0 } else { lo + (hi - lo) * j as f64 / (n - 1) as f64 };
            if c != anchor[k] {
                coords.push(c);
            }
        }
        per_dim.push(coords);
    }
    Ok(CrossPlan { anchor: anchor.to_vec(), per_dim_coords: per_dim })
}
