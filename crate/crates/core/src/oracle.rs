//! Derivative-free reference solver for tiny instances.
//!
//! Every cell flow is searched on a lattice over `[0, b]`, with `b` the
//! smaller of the equilibrium flow bound `3·M^max/(Δ+1)` and `U_w/Δt`, and
//! the lattice point with the smallest gap wins. The winner is refined by
//! pattern search on successively finer local lattices. Finally the
//! equilibrium equalities on the incumbent's used cells are solved by
//! Newton's method, and the result is kept only if it lowers the gap.
//! Nothing in here uses the projection step of the main solver.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::demand::OdDemand;
use crate::error::{Error, Result};
use crate::grid::{ExtendedPoint, Profile};
use crate::solver::{self, Problem};

/// A problem small enough for exhaustive search: at most 2 OD pairs,
/// 3 paths, 6 cells, and `|P|·n + |W| ≤ 20` unknowns.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    problem: Problem,
}

impl TinyInstance {
    pub fn new(problem: Problem) -> Result<Self> {
        let ods = problem.network().ods().len();
        let paths = problem.network().paths().len();
        let n = problem.grid().cells();
        if ods > 2 || paths > 3 || n > 6 || paths * n + ods > 20 {
            return Err(Error::Structure(format!(
                "instance too large for the oracle: {ods} OD pairs, {paths} paths, {n} cells"
            )));
        }
        Ok(Self { problem })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    /// Search dimension `|P|·n`.
    pub fn dimension(&self) -> usize {
        self.problem.network().paths().len() * self.problem.grid().cells()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    /// Lattice points per coordinate in the coarse sweep (at least 2).
    pub resolution: usize,
    /// Number of refinement levels after the coarse sweep.
    pub rounds: usize,
    /// Spacing divisor between refinement levels.
    pub shrink: f64,
    /// Local lattice half-width, in steps, during refinement.
    pub half_width: usize,
    /// Recentering passes allowed per refinement level.
    pub max_passes: usize,
    /// Active-set updates allowed in the final Newton polish (0 disables it).
    pub polish_passes: usize,
    /// Certified when the gap is below `certify_tol` times the problem scale.
    pub certify_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            resolution: 9,
            rounds: 10,
            shrink: 10.0,
            half_width: 2,
            max_passes: 200,
            polish_passes: 8,
            certify_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub point: ExtendedPoint,
    pub gap: f64,
    /// `Σ_w Θ_w·U_w` at the returned point.
    pub scale: f64,
    pub certified: bool,
    pub evaluations: usize,
}

struct Searcher<'a> {
    problem: &'a Problem,
    upper: Vec<f64>,
}

impl Searcher<'_> {
    /// Maps a flat cell vector to a feasible point, or `None` if it has none:
    /// fixed pairs are rescaled onto their volume and elastic pairs must stay
    /// under their cap.
    fn point(&self, z: &[f64]) -> Option<ExtendedPoint> {
        let grid = *self.problem.grid();
        let n = grid.cells();
        let mut flows: Vec<Profile> = z
            .chunks(n)
            .map(|c| Profile::new(grid, c.to_vec()).expect("finite lattice values"))
            .collect();
        for (w, od) in self.problem.network().ods().iter().enumerate() {
            let vol = self.problem.od_volume(&flows, w);
            match self.problem.demand().od(w) {
                OdDemand::Fixed { volume } => {
                    if vol <= 0.0 {
                        return None;
                    }
                    let s = volume / vol;
                    for &p in &od.paths {
                        flows[p].values_mut().iter_mut().for_each(|h| *h *= s);
                    }
                }
                OdDemand::Elastic(inv) => {
                    if vol > inv.cap() {
                        return None;
                    }
                }
            }
        }
        Some(self.problem.point_from_flows(flows))
    }

    fn gap(&self, z: &[f64]) -> f64 {
        let Some(x) = self.point(z) else {
            return f64::INFINITY;
        };
        match solver::f_map(self.problem, &x) {
            Ok(c) => solver::compute_gap(self.problem, &x, &c),
            Err(_) => f64::INFINITY,
        }
    }

    /// Best of `count` candidates, ties to the lower index.
    fn best_of<F>(&self, count: usize, candidate: F) -> (f64, usize)
    where
        F: Fn(usize) -> Option<Vec<f64>> + Sync,
    {
        (0..count)
            .into_par_iter()
            .map(|i| match candidate(i) {
                Some(z) => (self.gap(&z), i),
                None => (f64::INFINITY, i),
            })
            .reduce(
                || (f64::INFINITY, usize::MAX),
                |a, b| {
                    if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
                        b
                    } else {
                        a
                    }
                },
            )
    }
}

struct Incumbent {
    center: Vec<f64>,
    gap: f64,
    evaluations: usize,
}

impl Searcher<'_> {
    /// Pattern search from `inc` over local lattices of half-width
    /// `cfg.half_width` steps, recentering on every strict improvement and
    /// shrinking the step by `cfg.shrink` once a level stalls.
    fn refine(&self, inc: &mut Incumbent, mut step: Vec<f64>, cfg: &OracleConfig) -> Result<()> {
        let dim = step.len();
        let base = 2 * cfg.half_width + 1;
        let local = base
            .checked_pow(dim as u32)
            .ok_or_else(|| Error::Structure("refinement lattice too large".into()))?;
        let hw = cfg.half_width as f64;
        // clamping lets coordinates land exactly on the bounds of the box
        let offset = |c: &[f64], st: &[f64], i: usize| -> Vec<f64> {
            digits(i, base, dim)
                .zip(c.iter().zip(st).zip(&self.upper))
                .map(|(d, ((x, s), u))| (x + (d as f64 - hw) * s).clamp(0.0, *u))
                .collect()
        };
        for _level in 0..=cfg.rounds {
            for _pass in 0..cfg.max_passes {
                let (g, i) = self.best_of(local, |i| Some(offset(&inc.center, &step, i)));
                inc.evaluations += local;
                if g < inc.gap {
                    inc.gap = g;
                    inc.center = offset(&inc.center, &step, i);
                } else {
                    break;
                }
            }
            step.iter_mut().for_each(|s| *s /= cfg.shrink);
        }
        Ok(())
    }

    /// Residuals of the equilibrium equalities with only `active` cells
    /// carrying flow: `Ψ̄_s - θ_w` per active cell, where `θ_w` is `Θ_w(Q_w)`
    /// for elastic pairs and a free level `λ_w` for fixed pairs, plus
    /// `Σ h Δt - Q_w` per fixed pair. Unknowns are the active flows followed
    /// by one `λ_w` per fixed pair.
    fn active_residual(&self, active: &[usize], fixed: &[usize], u: &[f64]) -> Option<Vec<f64>> {
        let pb = self.problem;
        let grid = *pb.grid();
        let n = grid.cells();
        let mut flat = vec![0.0; self.upper.len()];
        for (k, &i) in active.iter().enumerate() {
            flat[i] = u[k];
        }
        let flows: Vec<Profile> = flat
            .chunks(n)
            .map(|c| Profile::new(grid, c.to_vec()))
            .collect::<Result<_>>()
            .ok()?;
        if flows.iter().any(|f| !f.is_nonnegative()) {
            return None;
        }
        let x = pb.point_from_flows(flows);
        let mut level = vec![0.0; pb.network().ods().len()];
        for (w, slot) in level.iter_mut().enumerate() {
            if let Some(k) = fixed.iter().position(|&f| f == w) {
                *slot = u[active.len() + k];
            } else {
                *slot = pb.demand().theta_od(w, x.demand[w]).ok()?;
            }
        }
        let (costs, _) = solver::evaluate(pb, &x).ok()?;
        let path_od = pb.network().path_ods();
        let mut r: Vec<f64> = active
            .iter()
            .map(|&i| costs.effective[i / n].values()[i % n] - level[path_od[i / n]])
            .collect();
        for &w in fixed {
            r.push(pb.od_volume(&x.flows, w) - x.demand[w]);
        }
        Some(r)
    }

    /// Damped Newton on [`Searcher::active_residual`] with a forward-difference
    /// Jacobian. Returns the final unknowns.
    fn newton(&self, active: &[usize], fixed: &[usize], mut u: Vec<f64>) -> Vec<f64> {
        let norm = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let Some(mut r) = self.active_residual(active, fixed, &u) else {
            return u;
        };
        let m = u.len();
        for _ in 0..50 {
            if norm(&r) < 1e-14 {
                break;
            }
            let mut jac = DMatrix::zeros(m, m);
            for k in 0..m {
                let h = 1e-7 * u[k].abs().max(1.0);
                let mut up = u.clone();
                up[k] += h;
                let Some(rp) = self.active_residual(active, fixed, &up).or_else(|| {
                    up[k] = u[k] - h;
                    self.active_residual(active, fixed, &up)
                        .map(|v| v.iter().map(|x| -x).collect())
                }) else {
                    return u;
                };
                let sign = if up[k] > u[k] { 1.0 } else { -1.0 };
                for i in 0..m {
                    jac[(i, k)] = if sign > 0.0 {
                        (rp[i] - r[i]) / h
                    } else {
                        (rp[i] + r[i]) / h
                    };
                }
            }
            let Some(delta) = jac.lu().solve(&-DVector::from_column_slice(&r)) else {
                return u;
            };
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial: Vec<f64> = u.iter().zip(delta.iter()).map(|(a, d)| a + t * d).collect();
                if let Some(rt) = self.active_residual(active, fixed, &trial) {
                    if norm(&rt) < norm(&r) {
                        u = trial;
                        r = rt;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        u
    }

    /// Solves the equalities on the incumbent's used cells, dropping cells
    /// whose flow would turn negative and adding unused cells priced below
    /// their pair's level, and keeps the outcome if its gap is lower.
    fn polish(&self, inc: &mut Incumbent, cfg: &OracleConfig) {
        let pb = self.problem;
        let n = pb.grid().cells();
        let Some(start) = self.point(&inc.center) else {
            return;
        };
        let mut flat: Vec<f64> = start
            .flows
            .iter()
            .flat_map(|f| f.values().to_vec())
            .collect();
        let peak = flat.iter().cloned().fold(0.0, f64::max);
        let mut active: Vec<usize> = (0..flat.len()).filter(|&i| flat[i] > 1e-6 * peak).collect();
        let fixed: Vec<usize> = (0..pb.network().ods().len())
            .filter(|&w| pb.demand().od(w).is_fixed())
            .collect();
        let Ok((costs, _)) = solver::evaluate(pb, &start) else {
            return;
        };
        for _ in 0..cfg.polish_passes {
            if active.is_empty() {
                break;
            }
            let mut u: Vec<f64> = active.iter().map(|&i| flat[i]).collect();
            u.extend(fixed.iter().map(|&w| costs.theta[w]));
            let u = self.newton(&active, &fixed, u);
            flat.iter_mut().for_each(|v| *v = 0.0);
            for (k, &i) in active.iter().enumerate() {
                flat[i] = u[k];
            }
            if let Some(k) = (0..active.len())
                .filter(|&k| u[k] < 0.0)
                .min_by(|&a, &b| u[a].total_cmp(&u[b]))
            {
                flat[active[k]] = 0.0;
                active.remove(k);
                continue;
            }
            // a used cell that stays dearer than its pair's level cannot carry flow
            let r = self
                .active_residual(&active, &fixed, &u)
                .unwrap_or_default();
            let tol = 1e-9 * costs.theta.iter().fold(1.0f64, |m, t| m.max(t.abs()));
            if let Some(k) = (0..active.len())
                .filter(|&k| r.get(k).is_some_and(|&v| v > tol))
                .max_by(|&a, &b| r[a].total_cmp(&r[b]))
            {
                flat[active[k]] = 0.0;
                active.remove(k);
                continue;
            }
            let clipped: Vec<f64> = flat
                .iter()
                .zip(&self.upper)
                .map(|(v, b)| v.min(*b))
                .collect();
            let g = self.gap(&clipped);
            inc.evaluations += 1;
            if g < inc.gap {
                inc.gap = g;
                inc.center = clipped.clone();
            }
            // an unused cell cheaper than its pair's level belongs in the set
            let Some(x) = self.point(&clipped) else {
                break;
            };
            let Ok((c, _)) = solver::evaluate(pb, &x) else {
                break;
            };
            let missing = (0..flat.len())
                .filter(|i| !active.contains(i))
                .map(|i| (c.reduced_cost(i / n, i % n), i))
                .filter(|(r, _)| *r < -1e-12 * c.theta[c.od_of(0)].abs().max(1.0))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            match missing {
                Some((_, i)) => {
                    active.push(i);
                    active.sort_unstable();
                }
                None => break,
            }
        }
    }
}

fn digits(mut i: usize, base: usize, dim: usize) -> impl Iterator<Item = usize> {
    (0..dim).map(move |_| {
        let d = i % base;
        i /= base;
        d
    })
}

/// Lattice search for the point of smallest gap.
pub fn brute_force_equilibrium(inst: &TinyInstance, cfg: &OracleConfig) -> Result<OracleResult> {
    if cfg.resolution < 2 || cfg.half_width == 0 || !(cfg.shrink > 1.0) {
        return Err(Error::Structure(
            "oracle needs resolution >= 2, half_width >= 1 and shrink > 1".into(),
        ));
    }
    let pb = inst.problem();
    let n = pb.grid().cells();
    let dt = pb.grid().width();
    let bound = solver::cell_flow_bound(pb.network(), pb.penalty())?;
    let path_od = pb.network().path_ods();
    let upper: Vec<f64> = path_od
        .iter()
        .flat_map(|&w| std::iter::repeat_n(bound.min(pb.demand().od(w).cap() / dt), n))
        .collect();
    let dim = upper.len();
    let search = Searcher { problem: pb, upper };
    let count = cfg
        .resolution
        .checked_pow(dim as u32)
        .ok_or_else(|| Error::Structure("coarse lattice too large".into()))?;

    let step: Vec<f64> = search
        .upper
        .iter()
        .map(|u| u / (cfg.resolution - 1) as f64)
        .collect();
    let (best_gap, idx) = search.best_of(count, |i| {
        Some(
            digits(i, cfg.resolution, dim)
                .zip(&step)
                .map(|(d, s)| d as f64 * s)
                .collect(),
        )
    });
    let mut evaluations = count;
    if !best_gap.is_finite() {
        return Err(Error::Invariant("no feasible lattice point".into()));
    }
    let center: Vec<f64> = digits(idx, cfg.resolution, dim)
        .zip(&step)
        .map(|(d, s)| d as f64 * s)
        .collect();

    let mut refined = Incumbent {
        center,
        gap: best_gap,
        evaluations: 0,
    };
    search.refine(&mut refined, step, cfg)?;
    search.polish(&mut refined, cfg);
    evaluations += refined.evaluations;
    let center = refined.center;

    let point = search
        .point(&center)
        .ok_or_else(|| Error::Invariant("refined point left the feasible set".into()))?;
    let costs = solver::f_map(pb, &point)?;
    let gap = solver::compute_gap(pb, &point, &costs);
    let scale = pb.problem_scale(&costs);
    Ok(OracleResult {
        point,
        gap,
        scale,
        certified: gap < cfg.certify_tol * scale,
        evaluations,
    })
}

/// Root of a continuous `f` on `[lo, hi]` by bisection, assuming a sign
/// change; stops when the bracket is narrower than `tol`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let (flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Invariant(format!(
            "no sign change on [{lo}, {hi}]: f = {flo}, {fhi}"
        )));
    }
    let neg_at_lo = flo < 0.0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm < 0.0) == neg_at_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Volume `Q ∈ [0, U]` with `Θ(Q) = v_min` for an elastic OD pair, found by
/// bisection. Returns 0 when even the first vehicle costs more than `Θ(0)`,
/// and `U` when the cap binds.
pub fn demand_for_cost(inv: &crate::demand::LinearInverseDemand, v_min: f64) -> Result<f64> {
    let g = |q: f64| inv.eval(q) - v_min;
    if g(0.0) <= 0.0 {
        return Ok(0.0);
    }
    if g(inv.cap()) >= 0.0 {
        return Ok(inv.cap());
    }
    bisect(g, 0.0, inv.cap(), 1e-13 * inv.cap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::SchedulePenalty;
    use crate::demand::{DemandModel, LinearInverseDemand};
    use crate::grid::TimeGrid;
    use crate::network::Network;

    fn tiny(n: usize, paths: usize) -> Problem {
        let mut b = Network::builder(2.0);
        b.add_node("i").unwrap();
        b.add_node("j").unwrap();
        b.add_od("ij", "i", "j").unwrap();
        for k in 0..paths {
            let id = format!("a{k}");
            b.add_link(&id, "i", "j", 1.0, 10.0).unwrap();
            b.add_path(&format!("p{k}"), "ij", &[id.as_str()]).unwrap();
        }
        let demand = DemandModel::new(vec![(
            "ij".into(),
            OdDemand::Elastic(LinearInverseDemand::new("ij", 5.0, 0.5, None).unwrap()),
        )])
        .unwrap();
        Problem::new(
            b.build(),
            SchedulePenalty::new(0.5, 2.0).unwrap(),
            demand,
            TimeGrid::new(0.0, 3.0, n).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn size_limits() {
        assert!(TinyInstance::new(tiny(6, 3)).is_ok());
        assert!(TinyInstance::new(tiny(7, 1)).is_err());
        assert!(TinyInstance::new(tiny(2, 4)).is_err());
    }

    #[test]
    fn bisection_finds_root() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
        assert!(bisect(|x| x + 1.0, 0.0, 1.0, 1e-9).is_err());
    }

    #[test]
    fn demand_for_cost_matches_closed_form() {
        let inv = LinearInverseDemand::new("w", 60.0, 0.5, None).unwrap();
        assert!((demand_for_cost(&inv, 40.0).unwrap() - 40.0).abs() < 1e-9);
        assert_eq!(demand_for_cost(&inv, 70.0).unwrap(), 0.0);
        assert_eq!(demand_for_cost(&inv, 1.0).unwrap(), inv.cap());
    }

    #[test]
    fn single_cell_instance_is_certified() {
        let inst = TinyInstance::new(tiny(1, 1)).unwrap();
        let res = brute_force_equilibrium(&inst, &OracleConfig::default()).unwrap();
        inst.problem().check_feasible(&res.point).unwrap();
        assert!(res.certified, "gap {} scale {}", res.gap, res.scale);
    }
}
