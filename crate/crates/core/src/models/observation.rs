use nalgebra::{DMatrix, DVector};

use super::{Grid2D, ObservationVector, StateVector};
use crate::{Error, Result};

/// Observations as weighted combinations of state entries.
///
/// Each sensor owns a stencil of `(state index, weight)` pairs whose weights
/// sum to one: a single unit entry for a sensor sitting on a node, up to four
/// bilinear weights otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct PointObservationOperator {
    stencils: Vec<Vec<(usize, f64)>>,
    n_state: usize,
}

impl PointObservationOperator {
    pub fn new(stencils: Vec<Vec<(usize, f64)>>, n_state: usize) -> Result<Self> {
        if stencils.is_empty() {
            return Err(Error::invalid("stencils", "at least one sensor is required"));
        }
        for (s, stencil) in stencils.iter().enumerate() {
            if stencil.is_empty() {
                return Err(Error::invalid("stencils", format!("sensor {s} has an empty stencil")));
            }
            if let Some(&(idx, _)) = stencil.iter().find(|(idx, _)| *idx >= n_state) {
                return Err(Error::invalid(
                    "stencils",
                    format!("sensor {s} references state {idx} >= {n_state}"),
                ));
            }
            let total: f64 = stencil.iter().map(|(_, w)| w).sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(
                    "stencils",
                    format!("sensor {s} weights sum to {total}, not 1"),
                ));
            }
        }
        Ok(PointObservationOperator { stencils, n_state })
    }

    pub fn identity(n_state: usize) -> Self {
        PointObservationOperator {
            stencils: (0..n_state).map(|i| vec![(i, 1.0)]).collect(),
            n_state,
        }
    }

    pub fn from_indices(indices: &[usize], n_state: usize) -> Result<Self> {
        Self::new(indices.iter().map(|&i| vec![(i, 1.0)]).collect(), n_state)
    }

    /// Bilinear interpolation between cell centres of `grid` at each point.
    /// Points between the outermost centres and the wall use the nearest
    /// centre row/column.
    pub fn bilinear(grid: Grid2D, points: &[(f64, f64)]) -> Result<Self> {
        let mut stencils = Vec::with_capacity(points.len());
        for &(x, y) in points {
            if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                return Err(Error::invalid(
                    "points",
                    format!("sensor ({x}, {y}) lies outside the unit square"),
                ));
            }
            let (i0, tx) = bracket(x * grid.nx as f64 - 0.5, grid.nx);
            let (j0, ty) = bracket(y * grid.ny as f64 - 0.5, grid.ny);
            let corners = [
                (grid.index(i0, j0), (1.0 - tx) * (1.0 - ty)),
                (grid.index(i0 + 1, j0), tx * (1.0 - ty)),
                (grid.index(i0, j0 + 1), (1.0 - tx) * ty),
                (grid.index(i0 + 1, j0 + 1), tx * ty),
            ];
            stencils.push(corners.into_iter().filter(|&(_, w)| w != 0.0).collect());
        }
        Self::new(stencils, grid.len())
    }

    pub fn n_obs(&self) -> usize {
        self.stencils.len()
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    pub fn stencils(&self) -> &[Vec<(usize, f64)>] {
        &self.stencils
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.n_obs(),
            self.stencils
                .iter()
                .map(|s| s.iter().map(|&(i, w)| w * x[i]).sum::<f64>()),
        )
    }

    pub fn apply_adjoint(&self, d: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_state);
        for (s, stencil) in self.stencils.iter().enumerate() {
            for &(i, w) in stencil {
                out[i] += w * d[s];
            }
        }
        out
    }

    pub fn observe(&self, x: &StateVector) -> Result<ObservationVector> {
        if x.len() != self.n_state {
            return Err(Error::mismatch("observe state", self.n_state, x.len()));
        }
        Ok(ObservationVector {
            values: self.apply(&x.values),
            time: x.time,
        })
    }

    pub fn observe_adjoint(&self, d: &ObservationVector) -> Result<StateVector> {
        if d.values.len() != self.n_obs() {
            return Err(Error::mismatch("observe_adjoint data", self.n_obs(), d.values.len()));
        }
        Ok(StateVector {
            values: self.apply_adjoint(&d.values),
            time: d.time,
        })
    }

    pub fn dense_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_obs(), self.n_state);
        for (s, stencil) in self.stencils.iter().enumerate() {
            for &(i, w) in stencil {
                m[(s, i)] += w;
            }
        }
        m
    }
}

/// Lower node index and fractional offset along one axis with `n` centres.
fn bracket(f: f64, n: usize) -> (usize, f64) {
    let f = f.clamp(0.0, (n - 1) as f64);
    let i0 = (f.floor() as usize).min(n - 2);
    (i0, f - i0 as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_round_trips() {
        let op = PointObservationOperator::identity(4);
        let x = StateVector::new(DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
        let y = op.observe(&x).unwrap();
        assert_eq!(y.values, x.values);
        assert_eq!(op.observe_adjoint(&y).unwrap().values, x.values);
    }

    #[test]
    fn node_sensor_selects() {
        let op = PointObservationOperator::from_indices(&[2], 5).unwrap();
        let x = StateVector::new(DVector::from_vec(vec![0.0, 1.0, 7.5, 3.0, 4.0]));
        assert_eq!(op.observe(&x).unwrap().values[0], 7.5);

        let grid = Grid2D { nx: 4, ny: 4 };
        let (cx, cy) = grid.center(1, 2);
        let op = PointObservationOperator::bilinear(grid, &[(cx, cy)]).unwrap();
        assert_eq!(op.stencils()[0], vec![(grid.index(1, 2), 1.0)]);
    }

    #[test]
    fn midpoint_of_four_centres_averages() {
        let grid = Grid2D { nx: 4, ny: 4 };
        // Corner shared by cells (1,1), (2,1), (1,2), (2,2).
        let op = PointObservationOperator::bilinear(grid, &[(0.5, 0.5)]).unwrap();
        let x = DVector::from_fn(16, |k, _| k as f64 * 1.5 + 0.25);
        let expected = (x[grid.index(1, 1)] + x[grid.index(2, 1)] + x[grid.index(1, 2)] + x[grid.index(2, 2)]) / 4.0;
        assert!((op.apply(&x)[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn adjoint_identity_on_random_pairs() {
        let grid = Grid2D { nx: 7, ny: 5 };
        let mut rng = crate::Rng::seed_from_u64(4);
        let pts: Vec<(f64, f64)> = (0..6).map(|_| (rng.random(), rng.random())).collect();
        let op = PointObservationOperator::bilinear(grid, &pts).unwrap();
        for _ in 0..20 {
            let x = DVector::from_fn(35, |_, _| rng.random_range(-1.0..1.0));
            let d = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
            assert!((op.apply(&x).dot(&d) - x.dot(&op.apply_adjoint(&d))).abs() < 1e-12);
        }
        assert_eq!(op.apply_adjoint(&DVector::zeros(6)), DVector::zeros(35));
        assert!((op.dense_matrix() * DVector::from_element(35, 1.0)).iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn validation() {
        assert!(PointObservationOperator::from_indices(&[5], 5).is_err());
        assert!(PointObservationOperator::new(vec![vec![(0, 0.5)]], 2).is_err());
        assert!(PointObservationOperator::bilinear(Grid2D { nx: 4, ny: 4 }, &[(1.2, 0.5)]).is_err());
        let op = PointObservationOperator::identity(3);
        assert!(op.observe(&StateVector::new(DVector::zeros(2))).is_err());
    }
}
