//! Weighted empirical measures: finite clouds `sum_i w_i * delta_{z_i}`.
//!
//! Points are stored in a flat `Vec<f64>` (row-major, `dim` coordinates per
//! point) so that million-point one-dimensional clouds do not pay one heap
//! allocation per particle. Weights are kept normalized to total mass one;
//! constructors validate and renormalize, so downstream code can rely on
//! `sum w_i = 1` up to rounding.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("empirical measure needs at least one point")]
    Empty,
    #[error("point storage length {0} is not a multiple of dim {1}")]
    RaggedStorage(usize, usize),
    #[error("weight count {0} does not match point count {1}")]
    WeightMismatch(usize, usize),
    #[error("weights must be nonnegative and finite with positive total mass")]
    BadWeights,
    #[error("points must be finite")]
    NonFinitePoint,
}

/// A finite weighted point cloud on `R^dim` with total mass one.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Builds a measure from flat point storage and explicit weights.
    /// Weights are renormalized to sum to one.
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        if dim == 0 || points.is_empty() {
            return Err(MeasureError::Empty);
        }
        if points.len() % dim != 0 {
            return Err(MeasureError::RaggedStorage(points.len(), dim));
        }
        let n = points.len() / dim;
        if weights.len() != n {
            return Err(MeasureError::WeightMismatch(weights.len(), n));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(MeasureError::NonFinitePoint);
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(MeasureError::BadWeights);
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(MeasureError::BadWeights);
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(Self {
            dim,
            points,
            weights,
        })
    }

    /// Equal-weight cloud over the given flat point storage.
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self, MeasureError> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(MeasureError::Empty);
        }
        let n = points.len() / dim;
        let w = vec![1.0 / n as f64; n];
        Self::new(dim, points, w)
    }

    /// Point mass at `x`.
    pub fn dirac(x: &[f64]) -> Self {
        Self {
            dim: x.len(),
            points: x.to_vec(),
            weights: vec![1.0],
        }
    }

    /// Convenience constructor for one-dimensional clouds.
    pub fn from_scalars(points: Vec<f64>) -> Result<Self, MeasureError> {
        Self::uniform(1, points)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Flat point storage (`len() * dim()` values, row-major).
    pub fn flat_points(&self) -> &[f64] {
        &self.points
    }

    /// Integral of `f` against the measure.
    pub fn expect(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        (0..self.len()).map(|i| self.weights[i] * f(self.point(i))).sum()
    }

    /// Splits into the even-index and odd-index halves, each renormalized.
    ///
    /// Used for Monte Carlo noise floors: the bounded-Lipschitz distance
    /// between the two halves of one cloud estimates the statistical
    /// resolution attainable at this sample size. Requires at least two
    /// points.
    pub fn split_half(&self) -> (Self, Self) {
        assert!(self.len() >= 2, "split_half needs at least two points");
        let mut pa = Vec::with_capacity(self.points.len() / 2 + self.dim);
        let mut wa = Vec::with_capacity(self.len() / 2 + 1);
        let mut pb = Vec::with_capacity(self.points.len() / 2 + self.dim);
        let mut wb = Vec::with_capacity(self.len() / 2 + 1);
        for i in 0..self.len() {
            if i % 2 == 0 {
                pa.extend_from_slice(self.point(i));
                wa.push(self.weights[i]);
            } else {
                pb.extend_from_slice(self.point(i));
                wb.push(self.weights[i]);
            }
        }
        (
            Self::new(self.dim, pa, wa).expect("even half is a valid measure"),
            Self::new(self.dim, pb, wb).expect("odd half is a valid measure"),
        )
    }
}

/// Euclidean distance between two points of equal dimension.
pub fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_are_normalized() {
        let m = EmpiricalMeasure::new(1, vec![0.0, 1.0], vec![2.0, 6.0]).unwrap();
        assert!((m.weight(0) - 0.25).abs() < 1e-15);
        assert!((m.weight(1) - 0.75).abs() < 1e-15);
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dirac_is_a_single_unit_mass() {
        let d = EmpiricalMeasure::dirac(&[3.0]);
        assert_eq!(d.len(), 1);
        assert_eq!(d.weight(0), 1.0);
        assert_eq!(d.point(0), &[3.0]);
    }

    #[test]
    fn expectation_against_cloud() {
        let m = EmpiricalMeasure::from_scalars(vec![1.0, 2.0, 3.0]).unwrap();
        let mean = m.expect(|x| x[0]);
        assert!((mean - 2.0).abs() < 1e-15);
    }

    #[test]
    fn split_half_partitions_and_renormalizes() {
        let m = EmpiricalMeasure::from_scalars(vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let (a, b) = m.split_half();
        assert_eq!(a.len(), 3);
        assert_eq!(b.len(), 2);
        assert!((a.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((b.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(a.point(1), &[2.0]);
        assert_eq!(b.point(1), &[3.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(EmpiricalMeasure::new(1, vec![], vec![]).is_err());
        assert!(EmpiricalMeasure::new(2, vec![1.0, 2.0, 3.0], vec![1.0]).is_err());
        assert!(EmpiricalMeasure::new(1, vec![1.0], vec![-1.0]).is_err());
        assert!(EmpiricalMeasure::new(1, vec![f64::NAN], vec![1.0]).is_err());
    }
}
