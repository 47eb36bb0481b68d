//! Equilibrium residuals, computed from a point and its cost field alone.
//!
//! For each OD pair `w` with equilibrium cost `Θ_w = Θ_w[Q*]`:
//! - `r1 = Σ_p Σ_j h_{p,j} Δt · max(0, Ψ̄_{p,j} - Θ_w)`: flow on cells dearer
//!   than `Θ_w` (vehicle·time);
//! - `r2 = max(0, Θ_w - min_{p,j} Ψ̄_{p,j})`: a cell cheaper than `Θ_w` exists;
//! - `|v_w - Θ_w|` with `v_w` the grid minimum of the effective delays.
//!
//! For fixed-demand pairs the cost field carries `v_w` in place of `Θ_w`, so
//! the same quantities express the fixed-demand conditions.

use crate::cost::CostField;
use crate::error::{Error, Result};
use crate::grid::{inner_product, ExtendedPoint};
use crate::network::Network;

#[derive(Debug, Clone, PartialEq)]
pub struct OdResidual {
    pub od: usize,
    pub demand: f64,
    pub theta: f64,
    /// `v_w`: smallest cell-averaged effective delay over the pair's paths.
    pub min_cost: f64,
    pub complementarity: f64,
    pub optimality: f64,
    /// `|v_w - Θ_w|`; for a pair with zero volume only a cheaper cell counts.
    pub consistency: f64,
    /// Largest `|Ψ̄ - Θ_w|` over cells with flow above the used-cell threshold.
    pub max_used_deviation: f64,
}

impl OdResidual {
    pub fn relative_complementarity(&self) -> f64 {
        let scale = self.demand * self.theta;
        if scale > 0.0 {
            self.complementarity / scale
        } else {
            self.complementarity
        }
    }

    pub fn relative_optimality(&self) -> f64 {
        self.optimality / self.theta
    }

    pub fn relative_consistency(&self) -> f64 {
        self.consistency / self.theta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub ods: Vec<OdResidual>,
    pub flow_threshold: f64,
}

impl ResidualReport {
    pub fn max_complementarity(&self) -> f64 {
        self.ods
            .iter()
            .map(|r| r.complementarity)
            .fold(0.0, f64::max)
    }

    pub fn max_optimality(&self) -> f64 {
        self.ods.iter().map(|r| r.optimality).fold(0.0, f64::max)
    }

    /// `r1 ≤ ε·Q·Θ` and `r2 ≤ ε·Θ` for every OD pair.
    pub fn is_epsilon_due(&self, eps: f64) -> bool {
        self.ods
            .iter()
            .all(|r| r.complementarity <= eps * r.demand * r.theta && r.optimality <= eps * r.theta)
    }
}

/// Residuals of `x` against its own cost field. `flow_threshold` decides
/// which cells count as used; by default 1e-6 of the largest cell flow.
pub fn due_residuals(
    network: &Network,
    x: &ExtendedPoint,
    costs: &CostField,
    flow_threshold: Option<f64>,
) -> ResidualReport {
    let threshold = flow_threshold.unwrap_or_else(|| 1e-6 * x.max_cell_flow());
    let ods = network
        .ods()
        .iter()
        .enumerate()
        .map(|(w, od)| {
            let theta = costs.theta[w];
            let mut r1 = 0.0;
            let mut min_cost = f64::INFINITY;
            let mut used_dev: f64 = 0.0;
            for &p in &od.paths {
                let dt = x.flows[p].grid().width();
                for (h, c) in x.flows[p].values().iter().zip(costs.effective[p].values()) {
                    r1 += h * dt * (c - theta).max(0.0);
                    min_cost = min_cost.min(*c);
                    if *h > threshold {
                        used_dev = used_dev.max((c - theta).abs());
                    }
                }
            }
            let demand = x.demand[w];
            let consistency = if demand > 0.0 {
                (min_cost - theta).abs()
            } else {
                (theta - min_cost).max(0.0)
            };
            OdResidual {
                od: w,
                demand,
                theta,
                min_cost,
                complementarity: r1,
                optimality: (theta - min_cost).max(0.0),
                consistency,
                max_used_deviation: used_dev,
            }
        })
        .collect();
    ResidualReport {
        ods,
        flow_threshold: threshold,
    }
}

/// Left-hand side of the variational inequality at `x_star` for one probe:
/// `Σ_p ∫ Ψ̄_p (h_p - h*_p) dt - Σ_w Θ_w (Q_w - Q*_w)`.
pub fn vi_lhs(x_star: &ExtendedPoint, probe: &ExtendedPoint, costs: &CostField) -> Result<f64> {
    if !x_star.same_shape(probe) {
        return Err(Error::Shape("probe and point differ in shape".into()));
    }
    let image = ExtendedPoint::new(
        costs.effective.clone(),
        costs.theta.iter().map(|t| -t).collect(),
    );
    let diff = probe.combine(1.0, x_star, -1.0)?;
    inner_product(&image, &diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Profile, TimeGrid};

    fn setup(costs: Vec<f64>, flows: Vec<f64>, theta: f64) -> (Network, ExtendedPoint, CostField) {
        let grid = TimeGrid::new(0.0, costs.len() as f64, costs.len()).unwrap();
        let mut b = Network::builder(0.5);
        b.add_node("i").unwrap();
        b.add_node("j").unwrap();
        b.add_link("a", "i", "j", 0.1, 10.0).unwrap();
        b.add_od("ij", "i", "j").unwrap();
        b.add_path("p", "ij", &["a"]).unwrap();
        let net = b.build();
        let h = Profile::new(grid, flows).unwrap();
        let q = h.integrate();
        let x = ExtendedPoint::new(vec![h], vec![q]);
        let c = CostField::new(
            vec![Profile::new(grid, costs).unwrap()],
            vec![theta],
            vec![0],
        )
        .unwrap();
        (net, x, c)
    }

    #[test]
    fn exact_equilibrium_has_zero_residuals() {
        let (net, x, c) = setup(vec![12.0, 10.0, 10.0, 15.0], vec![0.0, 3.0, 4.0, 0.0], 10.0);
        let r = due_residuals(&net, &x, &c, None);
        let o = &r.ods[0];
        assert_eq!(
            (o.complementarity, o.optimality, o.consistency),
            (0.0, 0.0, 0.0)
        );
        assert!(r.is_epsilon_due(0.0));
    }

    #[test]
    fn empty_solution_rejected_when_theta_above_costs() {
        let (net, x, c) = setup(vec![12.0, 10.0], vec![0.0, 0.0], 60.0);
        let r = due_residuals(&net, &x, &c, None);
        assert_eq!(r.ods[0].optimality, 50.0);
        assert!(!r.is_epsilon_due(1e-3));
    }

    #[test]
    fn flow_on_dear_cell_counts() {
        let (net, x, c) = setup(vec![12.0, 10.0], vec![1.0, 2.0], 10.0);
        let r = due_residuals(&net, &x, &c, None);
        assert_eq!(r.ods[0].complementarity, 2.0);
        assert_eq!(r.ods[0].max_used_deviation, 2.0);
    }

    #[test]
    fn vi_lhs_identity_and_shape() {
        let (_, x, c) = setup(vec![12.0, 10.0], vec![1.0, 2.0], 10.0);
        assert_eq!(vi_lhs(&x, &x, &c).unwrap(), 0.0);
        let other = ExtendedPoint::zeros(TimeGrid::new(0.0, 1.0, 3).unwrap(), 1, 1);
        assert!(vi_lhs(&x, &other, &c).is_err());
    }
}
