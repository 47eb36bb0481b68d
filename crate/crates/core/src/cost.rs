//! Effective delay: travel delay plus a schedule-delay penalty on the
//! deviation of the arrival time from the desired arrival time.

use crate::dnl::LoadingResult;
use crate::error::{Error, Result};
use crate::grid::{Profile, TimeGrid};
use crate::network::Network;

/// Two-slope schedule penalty `f(x) = β·(-x)` for `x < 0`, `γ·x` for `x ≥ 0`,
/// where `x` is arrival time minus desired arrival time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulePenalty {
    early: f64,
    late: f64,
}

impl SchedulePenalty {
    /// Rejects negative or non-finite slopes. The condition `β < 1` is
    /// checked separately by [`SchedulePenalty::check_early_slope`].
    pub fn new(early: f64, late: f64) -> Result<Self> {
        if !(early >= 0.0 && early.is_finite()) {
            return Err(Error::Penalty(format!(
                "early slope {early} must be finite and >= 0"
            )));
        }
        if !(late >= 0.0 && late.is_finite()) {
            return Err(Error::Penalty(format!(
                "late slope {late} must be finite and >= 0"
            )));
        }
        Ok(Self { early, late })
    }

    /// No schedule penalty.
    pub fn none() -> Self {
        Self {
            early: 0.0,
            late: 0.0,
        }
    }

    pub fn early(&self) -> f64 {
        self.early
    }

    pub fn late(&self) -> f64 {
        self.late
    }

    pub fn eval(&self, deviation: f64) -> f64 {
        if deviation < 0.0 {
            -self.early * deviation
        } else {
            self.late * deviation
        }
    }

    /// Largest Δ with `f(x₂) - f(x₁) ≥ Δ (x₂ - x₁)` for all `x₁ < x₂`, which is
    /// `-β` for this family. Fails unless Δ > -1.
    pub fn check_early_slope(&self) -> Result<f64> {
        let delta = if self.early == 0.0 { 0.0 } else { -self.early };
        if delta <= -1.0 {
            return Err(Error::EarlySlope {
                beta: self.early,
                delta,
            });
        }
        Ok(delta)
    }
}

/// Cell-averaged effective delays and inverse-demand values: the image of
/// a point under the equilibrium mapping. `theta` holds `+Θ`; the sign of the
/// demand component is applied where inner products are formed.
#[derive(Debug, Clone, PartialEq)]
pub struct CostField {
    pub effective: Vec<Profile>,
    pub theta: Vec<f64>,
    path_od: Vec<usize>,
}

impl CostField {
    pub fn new(effective: Vec<Profile>, theta: Vec<f64>, path_od: Vec<usize>) -> Result<Self> {
        if effective.len() != path_od.len() {
            return Err(Error::Shape(format!(
                "{} effective-delay profiles for {} paths",
                effective.len(),
                path_od.len()
            )));
        }
        if let Some(&od) = path_od.iter().find(|&&od| od >= theta.len()) {
            return Err(Error::Shape(format!(
                "path refers to OD {od} of {}",
                theta.len()
            )));
        }
        Ok(Self {
            effective,
            theta,
            path_od,
        })
    }

    pub fn od_of(&self, path: usize) -> usize {
        self.path_od[path]
    }

    /// `Ψ̄_{p,j} - Θ_w[Q]` with `w` the OD pair of `p`.
    pub fn reduced_cost(&self, path: usize, cell: usize) -> f64 {
        self.effective[path].values()[cell] - self.theta[self.path_od[path]]
    }
}

/// `Ψ_p(t, h) = D_p(t, h) + f(t + D_p(t, h) - T_A)` at a single departure time.
pub fn effective_delay_at(
    loading: &LoadingResult,
    path: usize,
    t: f64,
    penalty: &SchedulePenalty,
    desired_arrival: f64,
) -> f64 {
    let arrival = loading.path_exit_time(path, t);
    (arrival - t) + penalty.eval(arrival - desired_arrival)
}

/// Cell averages of `Ψ_p` from its exact values at the cell endpoints.
/// Every value must be strictly positive; anything else points at a loading
/// bug and is reported as an invariant failure.
pub fn effective_delay(
    loading: &LoadingResult,
    network: &Network,
    penalty: &SchedulePenalty,
    grid: &TimeGrid,
) -> Result<Vec<Profile>> {
    let t_a = network.desired_arrival();
    (0..network.paths().len())
        .map(|p| {
            let at: Vec<f64> = grid
                .boundaries()
                .map(|t| effective_delay_at(loading, p, t, penalty, t_a))
                .collect();
            let values: Vec<f64> = at.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
            if let Some(j) = values.iter().position(|&v| !(v > 0.0)) {
                return Err(Error::Invariant(format!(
                    "effective delay {} on path {} cell {j} is not positive",
                    values[j],
                    network.paths()[p].id
                )));
            }
            Profile::new(*grid, values)
        })
        .collect()
}

/// Discrete `v_w(h)`: the smallest cell cost over all paths of OD pair `od`.
pub fn min_travel_cost(costs: &CostField, network: &Network, od: usize) -> Result<f64> {
    let paths = &network
        .ods()
        .get(od)
        .ok_or_else(|| Error::Structure(format!("no OD pair with index {od}")))?
        .paths;
    if paths.is_empty() {
        return Err(Error::Structure(format!(
            "OD pair {} has no paths",
            network.ods()[od].id
        )));
    }
    Ok(paths
        .iter()
        .map(|&p| costs.effective[p].essential_infimum())
        .fold(f64::INFINITY, f64::min))
}
