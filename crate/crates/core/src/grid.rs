//! Uniform time partitions, piecewise-constant profiles on them, and the
//! inner product of the extended space (path flows × OD demands).
//!
//! Every profile is a step function with one value per cell, so integrals
//! and inner products are exact finite sums. The essential infimum of a step
//! function is the smallest cell value.

use crate::error::{Error, Result};

/// Uniform partition of `[t0, tf]` into `n` cells of equal width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    tf: f64,
    n: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, tf: f64, n: usize) -> Result<Self> {
        if !t0.is_finite() || !tf.is_finite() {
            return Err(Error::Grid(format!("non-finite horizon [{t0}, {tf}]")));
        }
        if tf <= t0 {
            return Err(Error::Grid(format!("tf = {tf} must exceed t0 = {t0}")));
        }
        if n == 0 {
            return Err(Error::Grid("cell count must be positive".into()));
        }
        Ok(Self { t0, tf, n })
    }

    /// Builds a grid from explicit cell boundaries, rejecting anything that is
    /// not a uniform partition (relative tolerance 1e-9 on the widths).
    pub fn from_boundaries(boundaries: &[f64]) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::Grid("need at least two boundaries".into()));
        }
        let n = boundaries.len() - 1;
        let grid = Self::new(boundaries[0], boundaries[n], n)?;
        let tol = 1e-9 * grid.width();
        for (j, b) in boundaries.iter().enumerate() {
            if (b - grid.boundary(j)).abs() > tol {
                return Err(Error::Grid(format!(
                    "non-uniform partition: boundary {j} is {b}, expected {}",
                    grid.boundary(j)
                )));
            }
        }
        Ok(grid)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn tf(&self) -> f64 {
        self.tf
    }

    pub fn cells(&self) -> usize {
        self.n
    }

    /// Cell width `(tf - t0) / n`.
    pub fn width(&self) -> f64 {
        (self.tf - self.t0) / self.n as f64
    }

    /// Boundary `t^j = t0 + j (tf - t0) / n`, for `j = 0..=n`.
    pub fn boundary(&self, j: usize) -> f64 {
        if j == self.n {
            self.tf
        } else {
            self.t0 + j as f64 * (self.tf - self.t0) / self.n as f64
        }
    }

    pub fn boundaries(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n).map(move |j| self.boundary(j))
    }

    pub fn cell(&self, j: usize) -> (f64, f64) {
        (self.boundary(j), self.boundary(j + 1))
    }

    /// Index of the cell containing `t` (right-closed on the last cell).
    pub fn cell_of(&self, t: f64) -> Option<usize> {
        if t < self.t0 || t > self.tf {
            return None;
        }
        let j = ((t - self.t0) / self.width()).floor() as usize;
        Some(j.min(self.n - 1))
    }
}

/// Step function on a [`TimeGrid`]: one finite value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl Profile {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cells() {
            return Err(Error::Profile(format!(
                "expected {} cell values, got {}",
                grid.cells(),
                values.len()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Profile(format!("cell {j} is not finite")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.cells()],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    /// Exact integral `Σ_j v_j Δt`.
    pub fn integrate(&self) -> f64 {
        let dt = self.grid.width();
        self.values.iter().map(|v| v * dt).sum()
    }

    /// Integral restricted to a subset of cells.
    pub fn integrate_cells(&self, cells: impl IntoIterator<Item = usize>) -> f64 {
        let dt = self.grid.width();
        cells.into_iter().map(|j| self.values[j] * dt).sum()
    }

    /// Mean value over `[t0, tf]`.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Essential infimum; for a step function this is the smallest cell value.
    pub fn essential_infimum(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `∫ self · other dt`.
    pub fn dot(&self, other: &Profile) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::Shape("profiles live on different grids".into()));
        }
        let dt = self.grid.width();
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b * dt)
            .sum())
    }
}

/// Element `(h, Q)` of the extended space: one profile per path and one real
/// per OD pair. Feasibility (nonnegativity and flow conservation) is checked
/// separately, since cost images `(Ψ, -Θ)` live in the same space.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedPoint {
    pub flows: Vec<Profile>,
    pub demand: Vec<f64>,
}

impl ExtendedPoint {
    pub fn new(flows: Vec<Profile>, demand: Vec<f64>) -> Self {
        Self { flows, demand }
    }

    /// The zero element with the given shape.
    pub fn zeros(grid: TimeGrid, paths: usize, ods: usize) -> Self {
        Self {
            flows: vec![Profile::zeros(grid); paths],
            demand: vec![0.0; ods],
        }
    }

    pub fn grid(&self) -> Option<&TimeGrid> {
        self.flows.first().map(Profile::grid)
    }

    /// Largest cell value over all paths.
    pub fn max_cell_flow(&self) -> f64 {
        self.flows
            .iter()
            .map(Profile::max_value)
            .fold(0.0, f64::max)
    }

    pub fn same_shape(&self, other: &ExtendedPoint) -> bool {
        self.demand.len() == other.demand.len()
            && self.flows.len() == other.flows.len()
            && self
                .flows
                .iter()
                .zip(&other.flows)
                .all(|(a, b)| a.grid() == b.grid())
    }

    /// `a·self + b·other`, componentwise.
    pub fn combine(&self, a: f64, other: &ExtendedPoint, b: f64) -> Result<ExtendedPoint> {
        if !self.same_shape(other) {
            return Err(Error::Shape(
                "cannot combine points of different shape".into(),
            ));
        }
        let flows = self
            .flows
            .iter()
            .zip(&other.flows)
            .map(|(x, y)| Profile {
                grid: x.grid,
                values: x
                    .values
                    .iter()
                    .zip(&y.values)
                    .map(|(u, v)| a * u + b * v)
                    .collect(),
            })
            .collect();
        let demand = self
            .demand
            .iter()
            .zip(&other.demand)
            .map(|(u, v)| a * u + b * v)
            .collect();
        Ok(ExtendedPoint { flows, demand })
    }
}

/// `⟨X, Y⟩_E = Σ_p ∫ ξ_p η_p dt + Σ_w u_w v_w`.
pub fn inner_product(x: &ExtendedPoint, y: &ExtendedPoint) -> Result<f64> {
    if x.flows.len() != y.flows.len() || x.demand.len() != y.demand.len() {
        return Err(Error::Shape(format!(
            "({} paths, {} ODs) vs ({} paths, {} ODs)",
            x.flows.len(),
            x.demand.len(),
            y.flows.len(),
            y.demand.len()
        )));
    }
    let mut acc = 0.0;
    for (a, b) in x.flows.iter().zip(&y.flows) {
        acc += a.dot(b)?;
    }
    acc += x
        .demand
        .iter()
        .zip(&y.demand)
        .map(|(u, v)| u * v)
        .sum::<f64>();
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(t0: f64, tf: f64, n: usize) -> TimeGrid {
        TimeGrid::new(t0, tf, n).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TimeGrid::new(1.0, 1.0, 4).is_err());
        assert!(TimeGrid::new(2.0, 1.0, 4).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
        assert!(TimeGrid::from_boundaries(&[0.0, 0.5, 2.0]).is_err());
        let g = TimeGrid::from_boundaries(&[0.0, 0.5, 1.0, 1.5]).unwrap();
        assert_eq!(g.cells(), 3);
        assert_eq!(g.width(), 0.5);
    }

    #[test]
    fn cells_have_identical_width() {
        let g = grid(0.3, 2.1, 7);
        for j in 0..7 {
            let (a, b) = g.cell(j);
            assert!((b - a - g.width()).abs() < 1e-15);
        }
        assert_eq!(g.boundary(7), 2.1);
        assert_eq!(g.cell_of(2.1), Some(6));
        assert_eq!(g.cell_of(0.3), Some(0));
        assert_eq!(g.cell_of(3.0), None);
    }

    #[test]
    fn profile_rejects_wrong_length_and_nan() {
        let g = grid(0.0, 1.0, 2);
        assert!(Profile::new(g, vec![1.0]).is_err());
        assert!(Profile::new(g, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn integrate_examples() {
        let p = Profile::new(grid(0.0, 1.0, 2), vec![3.0, 1.0]).unwrap();
        assert_eq!(p.integrate(), 2.0);
        assert_eq!(Profile::zeros(grid(0.0, 5.0, 3)).integrate(), 0.0);
        let p = Profile::new(grid(0.0, 2.0, 4), vec![1.0; 4]).unwrap();
        assert_eq!(p.integrate(), 2.0);
    }

    #[test]
    fn inner_product_examples() {
        let g = grid(0.0, 1.0, 1);
        let x = ExtendedPoint::new(vec![Profile::constant(g, 1.0)], vec![2.0]);
        assert_eq!(inner_product(&x, &x).unwrap(), 5.0);
        let zero = ExtendedPoint::zeros(g, 1, 1);
        assert_eq!(inner_product(&x, &zero).unwrap(), 0.0);

        let g2 = grid(0.0, 2.0, 2);
        let xi = ExtendedPoint::new(vec![Profile::new(g2, vec![1.0, -1.0]).unwrap()], vec![0.0]);
        let eta = ExtendedPoint::new(vec![Profile::new(g2, vec![1.0, 1.0]).unwrap()], vec![3.0]);
        assert_eq!(inner_product(&xi, &eta).unwrap(), 0.0);
    }

    #[test]
    fn inner_product_shape_mismatch() {
        let g = grid(0.0, 1.0, 2);
        let x = ExtendedPoint::zeros(g, 2, 1);
        let y = ExtendedPoint::zeros(g, 1, 1);
        assert!(matches!(inner_product(&x, &y), Err(Error::Shape(_))));
        let z = ExtendedPoint::zeros(grid(0.0, 1.0, 3), 2, 1);
        assert!(matches!(inner_product(&x, &z), Err(Error::Shape(_))));
    }

    #[test]
    fn essential_infimum_examples() {
        let g = grid(0.0, 3.0, 3);
        assert_eq!(
            Profile::new(g, vec![3.0, 1.0, 2.0])
                .unwrap()
                .essential_infimum(),
            1.0
        );
        assert_eq!(Profile::constant(g, 4.5).essential_infimum(), 4.5);
        assert_eq!(
            Profile::new(g, vec![10.0, 0.5, 10.0])
                .unwrap()
                .essential_infimum(),
            0.5
        );
    }

    fn point_strategy(paths: usize, n: usize, ods: usize) -> impl Strategy<Value = ExtendedPoint> {
        (
            prop::collection::vec(prop::collection::vec(-10.0..10.0f64, n), paths),
            prop::collection::vec(-10.0..10.0f64, ods),
        )
            .prop_map(move |(flows, demand)| {
                let g = TimeGrid::new(0.0, 2.0, n).unwrap();
                ExtendedPoint::new(
                    flows
                        .into_iter()
                        .map(|v| Profile::new(g, v).unwrap())
                        .collect(),
                    demand,
                )
            })
    }

    proptest! {
        #[test]
        fn cauchy_schwarz(x in point_strategy(3, 5, 2), y in point_strategy(3, 5, 2)) {
            let xy = inner_product(&x, &y).unwrap();
            let xx = inner_product(&x, &x).unwrap();
            let yy = inner_product(&y, &y).unwrap();
            prop_assert!(xy.abs() <= (xx * yy).sqrt() * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn bilinear(
            x in point_strategy(2, 4, 2),
            y in point_strategy(2, 4, 2),
            z in point_strategy(2, 4, 2),
            a in -5.0..5.0f64,
            b in -5.0..5.0f64,
        ) {
            let ax_by = x.combine(a, &y, b).unwrap();
            let lhs = inner_product(&ax_by, &z).unwrap();
            let rhs = a * inner_product(&x, &z).unwrap() + b * inner_product(&y, &z).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
            let lhs2 = inner_product(&z, &ax_by).unwrap();
            prop_assert!((lhs2 - lhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }

        #[test]
        fn integrate_is_additive(values in prop::collection::vec(0.0..100.0f64, 8), mask in prop::collection::vec(any::<bool>(), 8)) {
            let p = Profile::new(TimeGrid::new(0.0, 4.0, 8).unwrap(), values).unwrap();
            let a: Vec<usize> = (0..8).filter(|&j| mask[j]).collect();
            let b: Vec<usize> = (0..8).filter(|&j| !mask[j]).collect();
            let total = p.integrate_cells(a) + p.integrate_cells(b);
            prop_assert!((total - p.integrate()).abs() <= 1e-9 * (1.0 + total));
        }

        #[test]
        fn infimum_below_mean(values in prop::collection::vec(-50.0..50.0f64, 1..12)) {
            let n = values.len();
            let p = Profile::new(TimeGrid::new(0.0, 1.0, n).unwrap(), values).unwrap();
            prop_assert!(p.essential_infimum() <= p.mean() + 1e-12);
        }
    }
}
