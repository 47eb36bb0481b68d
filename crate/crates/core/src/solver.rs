//! Fixed-point projection solver for the discretized equilibrium problem.
//!
//! A point is `(h, Q)` with `h` piecewise constant per path and `Q` the OD
//! volumes. The iteration works in the reduced parametrization: for elastic
//! pairs `Q` is always the volume induced by `h`, so substituting `Q(h)` into
//! the variational inequality leaves the operator `Ψ̄_{p,j} - Θ_w[Q(h)]` over
//! the cone `h ≥ 0`, and the projection is a componentwise clip at zero.
//! A pair whose volume would exceed its cap `U_w` is rescaled back onto the
//! cap. Fixed-demand pairs are projected onto `{h ≥ 0, Σ h Δt = Q_w}`.
//!
//! Convergence of this scheme is not guaranteed (path delay operators are
//! not monotone in general); non-convergence is reported, not hidden.

use std::time::{Duration, Instant};

use crate::cost::{self, CostField, SchedulePenalty};
use crate::demand::{DemandModel, OdDemand};
use crate::dnl::{self, LoadingResult};
use crate::error::{Error, Result};
use crate::grid::{ExtendedPoint, Profile, TimeGrid};
use crate::network::Network;
use crate::verify::{self, ResidualReport};

/// Everything that defines one equilibrium problem on one grid.
#[derive(Debug, Clone)]
pub struct Problem {
    network: Network,
    penalty: SchedulePenalty,
    demand: DemandModel,
    grid: TimeGrid,
    horizon_extension: Option<f64>,
}

impl Problem {
    /// Validates the network on `grid`, the early-slope condition on the penalty, and
    /// that the demand model covers every OD pair.
    pub fn new(
        network: Network,
        penalty: SchedulePenalty,
        demand: DemandModel,
        grid: TimeGrid,
    ) -> Result<Self> {
        let violations = network.validate(&grid);
        if !violations.is_empty() {
            let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(Error::Structure(msg.join("; ")));
        }
        penalty.check_early_slope()?;
        if demand.len() != network.ods().len() {
            return Err(Error::Shape(format!(
                "demand given for {} OD pairs, network has {}",
                demand.len(),
                network.ods().len()
            )));
        }
        for (w, od) in network.ods().iter().enumerate() {
            if demand.ids()[w] != od.id {
                return Err(Error::Structure(format!(
                    "demand entry {w} is for OD {}, expected {}",
                    demand.ids()[w],
                    od.id
                )));
            }
        }
        Ok(Self {
            network,
            penalty,
            demand,
            grid,
            horizon_extension: None,
        })
    }

    /// Fixes the loading horizon extension `H` (beyond `tf`).
    pub fn with_horizon_extension(mut self, extension: f64) -> Result<Self> {
        if !(extension > 0.0 && extension.is_finite()) {
            return Err(Error::Grid(format!(
                "horizon extension {extension} must be positive"
            )));
        }
        self.horizon_extension = Some(extension);
        Ok(self)
    }

    /// Same problem on a grid with `n` cells.
    pub fn with_cells(&self, n: usize) -> Result<Self> {
        let grid = TimeGrid::new(self.grid.t0(), self.grid.tf(), n)?;
        let mut out = Self::new(
            self.network.clone(),
            self.penalty,
            self.demand.clone(),
            grid,
        )?;
        out.horizon_extension = self.horizon_extension;
        Ok(out)
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn penalty(&self) -> &SchedulePenalty {
        &self.penalty
    }

    pub fn demand(&self) -> &DemandModel {
        &self.demand
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// `tf + H`, with `H` defaulting to `Σ U_w / min M_a + Σ τ_a`.
    pub fn horizon_end(&self) -> Result<f64> {
        let ext = match self.horizon_extension {
            Some(h) => h,
            None => {
                let total: f64 = self.demand.caps().iter().sum();
                dnl::default_horizon_extension(&self.network, total)?
            }
        };
        Ok(self.grid.tf() + ext)
    }

    /// `Σ_{p ∈ P_w} ∫ h_p`.
    pub fn od_volume(&self, flows: &[Profile], w: usize) -> f64 {
        self.network.ods()[w]
            .paths
            .iter()
            .map(|&p| flows[p].integrate())
            .sum()
    }

    /// Attaches OD volumes to path flows: induced volumes for elastic pairs,
    /// pinned volumes for fixed pairs. Induced volumes within 1e-12 relative
    /// above their cap are snapped to it.
    pub fn point_from_flows(&self, flows: Vec<Profile>) -> ExtendedPoint {
        let demand = (0..self.network.ods().len())
            .map(|w| match self.demand.od(w) {
                OdDemand::Fixed { volume } => *volume,
                OdDemand::Elastic(inv) => {
                    let q = self.od_volume(&flows, w);
                    if q > inv.cap() && q <= inv.cap() * (1.0 + 1e-12) {
                        inv.cap()
                    } else {
                        q
                    }
                }
            })
            .collect();
        ExtendedPoint::new(flows, demand)
    }

    /// Membership in the discretized feasible set: right shape, `h ≥ 0`,
    /// `0 ≤ Q_w ≤ U_w` and flow conservation within 1e-9 relative.
    pub fn check_feasible(&self, x: &ExtendedPoint) -> Result<()> {
        let paths = self.network.paths();
        if x.flows.len() != paths.len() || x.demand.len() != self.network.ods().len() {
            return Err(Error::Shape(format!(
                "point has {} paths and {} ODs, problem has {} and {}",
                x.flows.len(),
                x.demand.len(),
                paths.len(),
                self.network.ods().len()
            )));
        }
        if let Some(p) = x.flows.iter().position(|f| *f.grid() != self.grid) {
            return Err(Error::Shape(format!(
                "flow of path {} is on a different grid",
                paths[p].id
            )));
        }
        if let Some(p) = x.flows.iter().position(|f| !f.is_nonnegative()) {
            return Err(Error::Invariant(format!(
                "path {} has a negative flow",
                paths[p].id
            )));
        }
        for (w, od) in self.network.ods().iter().enumerate() {
            let q = x.demand[w];
            let cap = self.demand.od(w).cap();
            if !(q >= 0.0 && q <= cap * (1.0 + 1e-12)) {
                return Err(Error::DemandDomain {
                    od: od.id.clone(),
                    q,
                    cap,
                });
            }
            let vol = self.od_volume(&x.flows, w);
            if (vol - q).abs() > 1e-9 * q.abs().max(vol.abs()).max(1e-300) && (vol - q).abs() > 0.0
            {
                return Err(Error::Invariant(format!(
                    "OD {}: path flows carry {vol} vehicles but Q = {q}",
                    od.id
                )));
            }
        }
        Ok(())
    }

    /// Zero flow for elastic pairs; fixed volumes spread evenly over all
    /// cells of all their paths.
    pub fn initial_point(&self) -> ExtendedPoint {
        let span = self.grid.tf() - self.grid.t0();
        let mut flows = vec![Profile::zeros(self.grid); self.network.paths().len()];
        for (w, od) in self.network.ods().iter().enumerate() {
            if let OdDemand::Fixed { volume } = self.demand.od(w) {
                let rate = volume / (span * od.paths.len() as f64);
                for &p in &od.paths {
                    flows[p] = Profile::constant(self.grid, rate);
                }
            }
        }
        self.point_from_flows(flows)
    }

    /// `Σ_w Θ_w · U_w`, the natural magnitude of gap and VI values.
    pub fn problem_scale(&self, costs: &CostField) -> f64 {
        costs
            .theta
            .iter()
            .zip(self.demand.caps())
            .map(|(t, u)| t * u)
            .sum()
    }

    pub fn load(&self, flows: &[Profile]) -> Result<LoadingResult> {
        dnl::load(&self.network, flows, self.horizon_end()?)
    }
}

/// Loads `x`, then returns its cost field and the loading it came from.
pub fn evaluate(problem: &Problem, x: &ExtendedPoint) -> Result<(CostField, LoadingResult)> {
    let loading = problem.load(&x.flows)?;
    let effective =
        cost::effective_delay(&loading, &problem.network, &problem.penalty, &problem.grid)?;
    let mut theta = Vec::with_capacity(problem.network.ods().len());
    for (w, od) in problem.network.ods().iter().enumerate() {
        theta.push(match problem.demand.od(w) {
            OdDemand::Elastic(_) => problem.demand.theta_od(w, x.demand[w])?,
            // with the volume pinned, the equilibrium cost is the minimum cost
            OdDemand::Fixed { .. } => od
                .paths
                .iter()
                .map(|&p| effective[p].essential_infimum())
                .fold(f64::INFINITY, f64::min),
        });
    }
    let costs = CostField::new(effective, theta, problem.network.path_ods())?;
    Ok((costs, loading))
}

/// The equilibrium mapping: `(h, Q) ↦ (Ψ̄(h), Θ[Q])`. For fixed-demand pairs
/// the second component is the current minimum cost `v_w(h)`.
pub fn f_map(problem: &Problem, x: &ExtendedPoint) -> Result<CostField> {
    evaluate(problem, x).map(|(c, _)| c)
}

/// `Ψ̄_{p,j} - Θ_w[Q]`.
pub fn reduced_cost(costs: &CostField, path: usize, cell: usize) -> f64 {
    costs.reduced_cost(path, cell)
}

/// One projection step with step size `alpha`.
pub fn fixed_point_step(
    problem: &Problem,
    x: &ExtendedPoint,
    costs: &CostField,
    alpha: f64,
) -> ExtendedPoint {
    let dt = problem.grid.width();
    let mut flows = x.flows.clone();
    for (w, od) in problem.network.ods().iter().enumerate() {
        match problem.demand.od(w) {
            OdDemand::Elastic(inv) => {
                for &p in &od.paths {
                    for (j, h) in flows[p].values_mut().iter_mut().enumerate() {
                        *h = (*h - alpha * costs.reduced_cost(p, j)).max(0.0);
                    }
                }
                let q: f64 = od.paths.iter().map(|&p| flows[p].integrate()).sum();
                if q > inv.cap() {
                    let scale = inv.cap() / q;
                    for &p in &od.paths {
                        flows[p].values_mut().iter_mut().for_each(|h| *h *= scale);
                    }
                }
            }
            OdDemand::Fixed { volume } => {
                let mut y: Vec<f64> = Vec::new();
                for &p in &od.paths {
                    y.extend(
                        x.flows[p]
                            .values()
                            .iter()
                            .zip(costs.effective[p].values())
                            .map(|(h, c)| h - alpha * c),
                    );
                }
                let projected = project_capped_simplex(&y, volume / dt);
                for (k, &p) in od.paths.iter().enumerate() {
                    let n = problem.grid.cells();
                    flows[p]
                        .values_mut()
                        .copy_from_slice(&projected[k * n..(k + 1) * n]);
                }
            }
        }
    }
    problem.point_from_flows(flows)
}

/// Euclidean projection of `y` onto `{z ≥ 0, Σ z = total}`.
fn project_capped_simplex(y: &[f64], total: f64) -> Vec<f64> {
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut shift = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cum += u;
        let candidate = (cum - total) / (k + 1) as f64;
        if u - candidate > 0.0 {
            shift = candidate;
        }
    }
    y.iter().map(|&v| (v - shift).max(0.0)).collect()
}

/// Smallest reduced cost of OD pair `w` and where it is attained; ties go to
/// the lowest path index, then the earliest cell.
fn od_min_reduced_cost(problem: &Problem, costs: &CostField, w: usize) -> (f64, usize, usize) {
    let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
    for &p in &problem.network.ods()[w].paths {
        for j in 0..problem.grid.cells() {
            let r = costs.reduced_cost(p, j);
            if r < best.0 {
                best = (r, p, j);
            }
        }
    }
    best
}

/// `sup_{Y} ⟨F(X), X - Y⟩_E` over the capped feasible set, in closed form:
/// per OD pair, `Σ h Δt (Ψ̄ - Θ) - min(0, c_w)·U_w` with `c_w` the smallest
/// reduced cost. Nonnegative, and zero exactly at solutions.
pub fn compute_gap(problem: &Problem, x: &ExtendedPoint, costs: &CostField) -> f64 {
    let dt = problem.grid.width();
    let mut gap = 0.0;
    for (w, od) in problem.network.ods().iter().enumerate() {
        let mut term = 0.0;
        for &p in &od.paths {
            for (j, h) in x.flows[p].values().iter().enumerate() {
                term += h * dt * costs.reduced_cost(p, j);
            }
        }
        let (c, _, _) = od_min_reduced_cost(problem, costs, w);
        if !problem.demand.od(w).is_fixed() {
            term -= c.min(0.0) * problem.demand.od(w).cap();
        }
        gap += term;
    }
    gap
}

/// The feasible point attaining the supremum in [`compute_gap`]: each OD's
/// volume is placed in its cheapest (path, cell) at the cap if that reduced
/// cost is negative, and dropped otherwise. Fixed pairs keep their volume.
pub fn best_response(problem: &Problem, costs: &CostField) -> ExtendedPoint {
    let dt = problem.grid.width();
    let mut flows = vec![Profile::zeros(problem.grid); problem.network.paths().len()];
    for w in 0..problem.network.ods().len() {
        let (c, p, j) = od_min_reduced_cost(problem, costs, w);
        let volume = match problem.demand.od(w) {
            OdDemand::Fixed { volume } => *volume,
            OdDemand::Elastic(inv) if c < 0.0 => inv.cap(),
            OdDemand::Elastic(_) => 0.0,
        };
        if volume > 0.0 {
            flows[p].values_mut()[j] = volume / dt;
        }
    }
    problem.point_from_flows(flows)
}

/// `3·M^max / (Δ + 1)`: no equilibrium cell flow can exceed this.
pub fn cell_flow_bound(network: &Network, penalty: &SchedulePenalty) -> Result<f64> {
    let delta = penalty.check_early_slope()?;
    Ok(3.0 * network.max_exit_capacity()? / (delta + 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Step size α converting cost into flow.
    pub alpha: f64,
    /// Number of gap evaluations allowed.
    pub max_iters: usize,
    /// Stop once the gap is at or below this value.
    pub gap_tol: f64,
    /// Halve α after this many iterations without a new best gap.
    pub halve_after: Option<usize>,
    /// Used-cell threshold for residuals; `None` means 1e-6 · max cell flow.
    pub flow_threshold: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            max_iters: 10_000,
            gap_tol: 1e-9,
            halve_after: None,
            flow_threshold: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Structure(format!(
                "alpha = {} must be positive",
                self.alpha
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Structure("max_iters must be at least 1".into()));
        }
        if !(self.gap_tol >= 0.0) {
            return Err(Error::Structure(format!(
                "gap tolerance {} must be nonnegative",
                self.gap_tol
            )));
        }
        if self.halve_after == Some(0) {
            return Err(Error::Structure("halve_after must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub gap: f64,
    pub max_r1: f64,
    pub max_r2: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub point: ExtendedPoint,
    pub costs: CostField,
    pub history: Vec<IterationRecord>,
    pub residuals: ResidualReport,
    pub gap: f64,
    pub converged: bool,
    pub cell_flow_bound: f64,
    pub max_cell_flow: f64,
    /// Elastic pairs whose volume sits at the cap.
    pub cap_active: Vec<bool>,
    pub wall_time: Duration,
}

impl SolveReport {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }

    pub fn initial_gap(&self) -> f64 {
        self.history.first().map_or(0.0, |r| r.gap)
    }

    pub fn within_flow_bound(&self) -> bool {
        self.max_cell_flow <= self.cell_flow_bound
    }
}

/// Loading failure in the middle of a solve, with the iterate that caused it.
#[derive(Debug, Clone, thiserror::Error)]
#[error("solve aborted at iteration {iteration}: {source}")]
pub struct SolveError {
    pub source: Error,
    pub iteration: usize,
    pub last_iterate: Option<ExtendedPoint>,
}

impl From<Error> for SolveError {
    fn from(source: Error) -> Self {
        SolveError {
            source,
            iteration: 0,
            last_iterate: None,
        }
    }
}

/// Iterates [`fixed_point_step`] from `start` (default: [`Problem::initial_point`])
/// until the gap is at most `config.gap_tol` or `config.max_iters` gaps have
/// been evaluated.
pub fn solve(
    problem: &Problem,
    config: &SolverConfig,
    start: Option<ExtendedPoint>,
) -> Result<SolveReport, SolveError> {
    config.validate()?;
    let clock = Instant::now();
    let bound = cell_flow_bound(&problem.network, &problem.penalty)?;
    let mut x = start.unwrap_or_else(|| problem.initial_point());
    problem.check_feasible(&x)?;

    let mut alpha = config.alpha;
    let mut history = Vec::new();
    let mut best_gap = f64::INFINITY;
    let mut stalled = 0usize;
    let mut iter = 0usize;
    let (costs, gap, residuals, converged) = loop {
        let costs = f_map(problem, &x).map_err(|source| SolveError {
            source,
            iteration: iter,
            last_iterate: Some(x.clone()),
        })?;
        let gap = compute_gap(problem, &x, &costs);
        let residuals = verify::due_residuals(&problem.network, &x, &costs, config.flow_threshold);
        history.push(IterationRecord {
            iter,
            gap,
            max_r1: residuals.max_complementarity(),
            max_r2: residuals.max_optimality(),
            alpha,
        });
        if gap <= config.gap_tol {
            break (costs, gap, residuals, true);
        }
        if iter + 1 >= config.max_iters {
            break (costs, gap, residuals, false);
        }
        if gap < best_gap {
            best_gap = gap;
            stalled = 0;
        } else {
            stalled += 1;
            if config.halve_after.is_some_and(|k| stalled >= k) {
                alpha *= 0.5;
                stalled = 0;
            }
        }
        x = fixed_point_step(problem, &x, &costs, alpha);
        iter += 1;
        problem.check_feasible(&x).map_err(|source| SolveError {
            source,
            iteration: iter,
            last_iterate: Some(x.clone()),
        })?;
    };

    let cap_active = (0..problem.network.ods().len())
        .map(|w| match problem.demand.od(w) {
            OdDemand::Elastic(inv) => x.demand[w] >= inv.cap() * (1.0 - 1e-12),
            OdDemand::Fixed { .. } => false,
        })
        .collect();
    let max_cell_flow = x.max_cell_flow();
    Ok(SolveReport {
        point: x,
        costs,
        history,
        residuals,
        gap,
        converged,
        cell_flow_bound: bound,
        max_cell_flow,
        cap_active,
        wall_time: clock.elapsed(),
    })
}
