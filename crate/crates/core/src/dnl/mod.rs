//! Dynamic network loading with Vickrey point queues.
//!
//! Each link is traversed at free-flow time and then feeds a vertical queue
//! at its exit that discharges at capacity `M_a`. All cumulative curves are
//! kept as exact piecewise-linear functions; breakpoints come from cell
//! boundaries, free-flow shifts and queue regime changes. The exit time of a
//! vehicle entering link `a` at `s` is `s + τ_a + q_a(s + τ_a) / M_a`, and a
//! path's arrival time is the composition of its link exit times.
//!
//! Path flows are split at link exits in FIFO order: path `p`'s cumulative
//! count entering its next link at `e_a(s)` equals its count entering `a` at
//! `s`. Links are processed in topological order of the "is followed by"
//! relation when that relation is acyclic; otherwise sweeps repeat until the
//! curves stop changing, which causality (τ_a > 0) guarantees.

mod plf;

use std::cmp::Reverse;
use std::collections::BinaryHeap;

pub use plf::{merge_times, Plf};

use crate::error::{Error, Result};
use crate::grid::{Profile, TimeGrid};
use crate::network::Network;

/// Cumulative curves of one link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    pub link: usize,
    pub free_flow_time: f64,
    pub capacity: f64,
    /// Cumulative entrance count A(t).
    pub entrance: Plf,
    /// Cumulative exit count D(u).
    pub exit: Plf,
    /// Queue q(u) = A(u - τ) - D(u) at the link exit.
    pub queue: Plf,
}

impl LinkState {
    pub fn from_entrance(link: usize, free_flow_time: f64, capacity: f64, entrance: Plf) -> Self {
        let arrivals = entrance.shifted(free_flow_time);
        let exit = point_queue_exit(&arrivals, capacity);
        let queue = Plf::from_points(
            merge_times([
                arrivals.times().collect::<Vec<_>>(),
                exit.times().collect::<Vec<_>>(),
            ])
            .into_iter()
            .map(|u| (u, (arrivals.eval(u) - exit.eval(u)).max(0.0)))
            .collect(),
        );
        Self {
            link,
            free_flow_time,
            capacity,
            entrance,
            exit,
            queue,
        }
    }

    /// Clock time at which a vehicle entering at `s` leaves the link.
    pub fn exit_time(&self, s: f64) -> f64 {
        let u = s + self.free_flow_time;
        u + self.queue.eval(u) / self.capacity
    }

    /// Time the last vehicle leaves the link; `-inf` if none ever enters.
    pub fn clearance_time(&self) -> f64 {
        let total = self.exit.final_value();
        if total <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let tol = 1e-12 * total;
        self.exit
            .points()
            .iter()
            .find(|p| p.1 >= total - tol)
            .map_or(f64::NEG_INFINITY, |p| p.0)
    }
}

/// Exit curve of a point queue with capacity `cap` fed by the cumulative
/// arrival curve `arrivals` (already shifted by the free-flow time).
pub fn point_queue_exit(arrivals: &Plf, cap: f64) -> Plf {
    let pts = arrivals.points();
    let Some(&first) = pts.first() else {
        return Plf::zero();
    };
    let mut out = Vec::with_capacity(pts.len() + 4);
    out.push(first);
    let mut q = 0.0_f64;
    for w in pts.windows(2) {
        let (u0, y0) = w[0];
        let (u1, y1) = w[1];
        let du = u1 - u0;
        let dv = y1 - y0;
        if du <= 0.0 {
            q += dv;
            continue;
        }
        let r = dv / du;
        if q > 0.0 && r < cap {
            let t_clear = q / (cap - r);
            if t_clear < du {
                out.push((u0 + t_clear, y0 + r * t_clear));
                q = 0.0;
            } else {
                q = (q - (cap - r) * du).max(0.0);
            }
        } else if q > 0.0 || r > cap {
            q += (r - cap) * du;
        }
        out.push((u1, y1 - q));
    }
    if q > 0.0 {
        let &(u_end, y_end) = pts.last().unwrap();
        out.push((u_end + q / cap, y_end));
    }
    Plf::from_points(out)
}

/// Output of a loading run.
#[derive(Debug, Clone)]
pub struct LoadingResult {
    links: Vec<LinkState>,
    path_links: Vec<Vec<usize>>,
    /// Per path: cumulative count entering each of its links, then arriving
    /// at the destination.
    path_curves: Vec<Vec<Plf>>,
    horizon_end: f64,
}

impl LoadingResult {
    pub fn links(&self) -> &[LinkState] {
        &self.links
    }

    pub fn link(&self, a: usize) -> &LinkState {
        &self.links[a]
    }

    pub fn horizon_end(&self) -> f64 {
        self.horizon_end
    }

    /// Arrival time at the destination for a departure at `t` on `path`.
    pub fn path_exit_time(&self, path: usize, t: f64) -> f64 {
        self.path_links[path]
            .iter()
            .fold(t, |s, &a| self.links[a].exit_time(s))
    }

    /// `D_p(t, h)`.
    pub fn path_delay(&self, path: usize, t: f64) -> f64 {
        self.path_exit_time(path, t) - t
    }

    pub fn departures(&self, path: usize) -> &Plf {
        &self.path_curves[path][0]
    }

    pub fn arrivals(&self, path: usize) -> &Plf {
        self.path_curves[path].last().unwrap()
    }

    /// Cumulative count of `path` vehicles entering its `k`-th link.
    pub fn path_link_entries(&self, path: usize, k: usize) -> &Plf {
        &self.path_curves[path][k]
    }

    pub fn total_departed(&self) -> f64 {
        (0..self.path_curves.len())
            .map(|p| self.departures(p).final_value())
            .sum()
    }

    /// Vehicles that reached their destination by time `t`.
    pub fn total_arrived_by(&self, t: f64) -> f64 {
        (0..self.path_curves.len())
            .map(|p| self.arrivals(p).eval(t))
            .sum()
    }

    /// Time after which every link is empty.
    pub fn clearance_time(&self) -> f64 {
        self.links
            .iter()
            .map(LinkState::clearance_time)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Cell averages of `D_p` from its values at the two cell endpoints.
    pub fn path_delay_profiles(&self, grid: &TimeGrid) -> Vec<Profile> {
        (0..self.path_links.len())
            .map(|p| {
                let at: Vec<f64> = grid.boundaries().map(|t| self.path_delay(p, t)).collect();
                let values = at.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
                Profile::new(*grid, values).expect("delays are finite")
            })
            .collect()
    }
}

/// A dynamic network loading model. Only the point-queue model ships.
pub trait NetworkLoader: Sync {
    fn load(&self, network: &Network, flows: &[Profile], horizon_end: f64)
        -> Result<LoadingResult>;
}

/// Vickrey point-queue loader.
#[derive(Debug, Clone, Copy, Default)]
pub struct PointQueue;

impl NetworkLoader for PointQueue {
    fn load(
        &self,
        network: &Network,
        flows: &[Profile],
        horizon_end: f64,
    ) -> Result<LoadingResult> {
        load(network, flows, horizon_end)
    }
}

/// Default extension of the loading horizon beyond `tf`:
/// total volume over the smallest capacity, plus all free-flow times.
pub fn default_horizon_extension(network: &Network, total_volume: f64) -> Result<f64> {
    let min_cap = network.min_exit_capacity()?;
    let ff: f64 = network.links().iter().map(|l| l.free_flow_time).sum();
    Ok(total_volume / min_cap + ff)
}

/// Cumulative departure curve of a piecewise-constant path flow.
pub fn departure_curve(flow: &Profile) -> Plf {
    let grid = flow.grid();
    let dt = grid.width();
    let mut cum = 0.0;
    let mut pts = Vec::with_capacity(grid.cells() + 1);
    pts.push((grid.t0(), 0.0));
    for (j, v) in flow.values().iter().enumerate() {
        cum += v * dt;
        pts.push((grid.boundary(j + 1), cum));
    }
    Plf::from_points(pts)
}

/// Loads path flows onto the network with point queues and runs until every
/// vehicle has left, failing if that happens after `horizon_end`.
pub fn load(network: &Network, flows: &[Profile], horizon_end: f64) -> Result<LoadingResult> {
    let paths = network.paths();
    if flows.len() != paths.len() {
        return Err(Error::Shape(format!(
            "{} flow profiles for {} paths",
            flows.len(),
            paths.len()
        )));
    }
    let Some(grid) = flows.first().map(|f| *f.grid()) else {
        return Ok(LoadingResult {
            links: Vec::new(),
            path_links: Vec::new(),
            path_curves: Vec::new(),
            horizon_end,
        });
    };
    if flows.iter().any(|f| *f.grid() != grid) {
        return Err(Error::Shape("path flows on different grids".into()));
    }
    if let Some(p) = flows.iter().position(|f| !f.is_nonnegative()) {
        return Err(Error::Profile(format!(
            "path {} has a negative departure rate",
            paths[p].id
        )));
    }

    let links = network.links();
    let mut users: Vec<Vec<(usize, usize)>> = vec![Vec::new(); links.len()];
    for (p, path) in paths.iter().enumerate() {
        for (k, &a) in path.links.iter().enumerate() {
            users[a].push((p, k));
        }
    }

    let mut path_curves: Vec<Vec<Plf>> = paths
        .iter()
        .zip(flows)
        .map(|(path, flow)| {
            let mut curves = vec![Plf::zero(); path.links.len() + 1];
            curves[0] = departure_curve(flow);
            curves
        })
        .collect();

    let (order, acyclic) = link_order(network);
    let tau_min = links
        .iter()
        .map(|l| l.free_flow_time)
        .fold(f64::INFINITY, f64::min);
    let max_sweeps = if acyclic {
        1
    } else {
        ((horizon_end - grid.t0()) / tau_min).ceil() as usize + links.len() + 2
    };

    let mut states: Vec<LinkState> = links
        .iter()
        .enumerate()
        .map(|(a, l)| LinkState::from_entrance(a, l.free_flow_time, l.capacity, Plf::zero()))
        .collect();

    let mut sweeps = 0;
    loop {
        let mut changed = false;
        for &a in &order {
            let link = &links[a];
            let entrance = Plf::sum(users[a].iter().map(|&(p, k)| &path_curves[p][k]));
            let state = LinkState::from_entrance(a, link.free_flow_time, link.capacity, entrance);
            for &(p, k) in &users[a] {
                let next = propagate(&path_curves[p][k], &state);
                if next != path_curves[p][k + 1] {
                    path_curves[p][k + 1] = next;
                    changed = true;
                }
            }
            states[a] = state;
        }
        sweeps += 1;
        if acyclic || !changed {
            break;
        }
        if sweeps >= max_sweeps {
            return Err(Error::Invariant(format!(
                "loading did not settle after {sweeps} sweeps"
            )));
        }
    }

    let result = LoadingResult {
        links: states,
        path_links: paths.iter().map(|p| p.links.clone()).collect(),
        path_curves,
        horizon_end,
    };
    if result.clearance_time() > horizon_end {
        let residual = result.total_departed() - result.total_arrived_by(horizon_end);
        return Err(Error::HorizonOverflow {
            horizon_end,
            residual,
        });
    }
    Ok(result)
}

/// Cumulative count of one path leaving `state`'s link, given the count
/// entering it: `C_out(e(s)) = C_in(s)`.
fn propagate(entering: &Plf, state: &LinkState) -> Plf {
    if entering.is_empty() {
        return Plf::zero();
    }
    let tau = state.free_flow_time;
    let times = merge_times([
        entering.times().collect::<Vec<_>>(),
        state.queue.times().map(|u| u - tau).collect::<Vec<_>>(),
    ]);
    let (first, last) = (
        entering.first_time().unwrap(),
        entering.last_time().unwrap(),
    );
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(times.len());
    let mut last_t = f64::NEG_INFINITY;
    for s in times.into_iter().filter(|s| (first..=last).contains(s)) {
        let t = state.exit_time(s).max(last_t);
        last_t = t;
        pts.push((t, entering.eval(s)));
    }
    Plf::from_points(pts)
}

/// Links in an order where every link precedes its successors on all paths,
/// with ties broken by index. Returns `false` when no such order exists.
fn link_order(network: &Network) -> (Vec<usize>, bool) {
    let n = network.links().len();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for path in network.paths() {
        for w in path.links.windows(2) {
            if !succ[w[0]].contains(&w[1]) {
                succ[w[0]].push(w[1]);
                indeg[w[1]] += 1;
            }
        }
    }
    let mut heap: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&a| indeg[a] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(a)) = heap.pop() {
        order.push(a);
        for &b in &succ[a] {
            indeg[b] -= 1;
            if indeg[b] == 0 {
                heap.push(Reverse(b));
            }
        }
    }
    if order.len() == n {
        (order, true)
    } else {
        ((0..n).collect(), false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_link(tau: f64, cap: f64) -> Network {
        let mut b = Network::builder(100.0);
        b.add_node("i").unwrap();
        b.add_node("j").unwrap();
        b.add_link("a", "i", "j", tau, cap).unwrap();
        b.add_od("ij", "i", "j").unwrap();
        b.add_path("p", "ij", &["a"]).unwrap();
        b.build()
    }

    #[test]
    fn point_queue_builds_and_clears() {
        // arrivals at rate 2 on [5, 15], capacity 1
        let v = Plf::from_points(vec![(5.0, 0.0), (15.0, 20.0)]);
        let d = point_queue_exit(&v, 1.0);
        assert_eq!(d.points(), &[(5.0, 0.0), (15.0, 10.0), (25.0, 20.0)]);
    }

    #[test]
    fn queue_clears_mid_segment() {
        // rate 3 on [0,1], then rate 0.5 on [1,5], capacity 1
        let v = Plf::from_points(vec![(0.0, 0.0), (1.0, 3.0), (5.0, 5.0)]);
        let d = point_queue_exit(&v, 1.0);
        // queue 2 at t=1 drains at 0.5 → clears at t=5 exactly
        assert_eq!(d.eval(1.0), 1.0);
        assert!((d.eval(5.0) - 5.0).abs() < 1e-12);
        let v = Plf::from_points(vec![(0.0, 0.0), (1.0, 2.0), (5.0, 3.0)]);
        let d = point_queue_exit(&v, 1.0);
        // queue 1 at t=1 drains at 0.75 → clears at 1 + 4/3
        assert!((d.eval(1.0 + 4.0 / 3.0) - v.eval(1.0 + 4.0 / 3.0)).abs() < 1e-12);
        assert!(d.slopes().all(|s| s <= 1.0 + 1e-12));
    }

    #[test]
    fn free_flow_delay_without_inflow() {
        let net = single_link(5.0, 1.0);
        let grid = TimeGrid::new(0.0, 20.0, 4).unwrap();
        let res = load(&net, &[Profile::zeros(grid)], 100.0).unwrap();
        for t in [0.0, 3.0, 20.0] {
            assert_eq!(res.path_delay(0, t), 5.0);
        }
        for v in res.path_delay_profiles(&grid)[0].values() {
            assert_eq!(*v, 5.0);
        }
    }

    #[test]
    fn horizon_overflow_reports_residual() {
        let net = single_link(5.0, 1.0);
        let grid = TimeGrid::new(0.0, 20.0, 4).unwrap();
        let flow = Profile::new(grid, vec![2.0, 2.0, 0.0, 0.0]).unwrap();
        // 20 vehicles exit on [5, 25]; only 15 are out by t = 20
        match load(&net, &[flow], 20.0) {
            Err(Error::HorizonOverflow { residual, .. }) => assert!((residual - 5.0).abs() < 1e-12),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn rejects_negative_flow() {
        let net = single_link(5.0, 1.0);
        let grid = TimeGrid::new(0.0, 20.0, 2).unwrap();
        let flow = Profile::new(grid, vec![1.0, -1.0]).unwrap();
        assert!(load(&net, &[flow], 100.0).is_err());
    }

    #[test]
    fn cyclic_link_order_settles() {
        // p1 uses a then b, p2 uses b then a
        let mut bld = Network::builder(100.0);
        for n in ["x", "y"] {
            bld.add_node(n).unwrap();
        }
        bld.add_link("a", "x", "y", 1.0, 1.0).unwrap();
        bld.add_link("b", "y", "x", 1.5, 1.0).unwrap();
        bld.add_od("xx", "x", "x").unwrap();
        bld.add_od("yy", "y", "y").unwrap();
        bld.add_path("p1", "xx", &["a", "b"]).unwrap();
        bld.add_path("p2", "yy", &["b", "a"]).unwrap();
        let net = bld.build();
        assert!(!link_order(&net).1);
        let grid = TimeGrid::new(0.0, 6.0, 3).unwrap();
        let f1 = Profile::new(grid, vec![2.0, 0.5, 1.5]).unwrap();
        let f2 = Profile::new(grid, vec![0.5, 2.5, 0.0]).unwrap();
        let res = load(&net, &[f1, f2], 200.0).unwrap();
        assert!((res.total_departed() - res.total_arrived_by(200.0)).abs() < 1e-9);
        for l in res.links() {
            let d = &l.exit;
            assert!((d.final_value() - l.entrance.final_value()).abs() < 1e-9);
        }
    }
}
