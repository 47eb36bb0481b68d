#![allow(dead_code)]

use edue::cost::SchedulePenalty;
use edue::demand::{DemandModel, LinearInverseDemand, OdDemand};
use edue::grid::{Profile, TimeGrid};
use edue::network::Network;
use edue::solver::Problem;
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::TestRunner;

/// One OD pair `ij`; path `p{k}` uses link `a{k}` with `(τ, M)` from `links`.
pub fn parallel_network(t_a: f64, links: &[(f64, f64)]) -> Network {
    let mut b = Network::builder(t_a);
    b.add_node("i").unwrap();
    b.add_node("j").unwrap();
    b.add_od("ij", "i", "j").unwrap();
    for (k, &(tau, cap)) in links.iter().enumerate() {
        let id = format!("a{k}");
        b.add_link(&id, "i", "j", tau, cap).unwrap();
        b.add_path(&format!("p{k}"), "ij", &[id.as_str()]).unwrap();
    }
    b.build()
}

pub fn elastic(theta0: f64, theta1: f64) -> DemandModel {
    DemandModel::new(vec![(
        "ij".into(),
        OdDemand::Elastic(LinearInverseDemand::new("ij", theta0, theta1, None).unwrap()),
    )])
    .unwrap()
}

pub fn fixed(volume: f64) -> DemandModel {
    DemandModel::new(vec![("ij".into(), OdDemand::Fixed { volume })]).unwrap()
}

/// Minutes throughout: T_A = 70, β = 0.5, γ = 2, θ0 = 60, θ1 = 0.5.
pub fn minutes_problem(n: usize, t0: f64, tf: f64, links: &[(f64, f64)]) -> Problem {
    Problem::new(
        parallel_network(70.0, links),
        SchedulePenalty::new(0.5, 2.0).unwrap(),
        elastic(60.0, 0.5),
        TimeGrid::new(t0, tf, n).unwrap(),
    )
    .unwrap()
}

/// Single path with capacity far above any feasible departure rate and
/// free-flow time 10, so the smallest effective delay is 10 at departure 60.
pub fn uncongested(n: usize) -> Problem {
    minutes_problem(n, 0.0, 120.0, &[(10.0, 1e4)])
}

/// Single path, free-flow time 10, capacity 2 veh/min.
pub fn bottleneck(n: usize, t0: f64, tf: f64) -> Problem {
    minutes_problem(n, t0, tf, &[(10.0, 2.0)])
}

/// Two OD pairs sharing a bottleneck link `s`, each with its own access link.
pub fn shared_bottleneck(n: usize) -> Problem {
    let mut b = Network::builder(70.0);
    for node in ["x", "y", "m", "j"] {
        b.add_node(node).unwrap();
    }
    b.add_link("ax", "x", "m", 4.0, 1e3).unwrap();
    b.add_link("ay", "y", "m", 6.0, 1e3).unwrap();
    b.add_link("s", "m", "j", 6.0, 3.0).unwrap();
    b.add_od("xj", "x", "j").unwrap();
    b.add_od("yj", "y", "j").unwrap();
    b.add_path("px", "xj", &["ax", "s"]).unwrap();
    b.add_path("py", "yj", &["ay", "s"]).unwrap();
    let demand = DemandModel::new(vec![
        (
            "xj".into(),
            OdDemand::Elastic(LinearInverseDemand::new("xj", 50.0, 0.6, None).unwrap()),
        ),
        (
            "yj".into(),
            OdDemand::Elastic(LinearInverseDemand::new("yj", 40.0, 0.4, None).unwrap()),
        ),
    ])
    .unwrap();
    Problem::new(
        b.build(),
        SchedulePenalty::new(0.5, 2.0).unwrap(),
        demand,
        TimeGrid::new(40.0, 80.0, n).unwrap(),
    )
    .unwrap()
}

/// A random loading case: network, flows, and a horizon long enough to clear.
pub struct LoadingCase {
    pub network: Network,
    pub flows: Vec<Profile>,
    pub horizon_end: f64,
}

/// Random networks of three shapes (serial path, parallel paths, two paths
/// merging onto a shared link) with strictly positive random flows.
pub fn random_loading(runner: &mut TestRunner) -> LoadingCase {
    let mut draw = |s: std::ops::Range<f64>| s.new_tree(runner).unwrap().current();
    let shape = (draw(0.0..3.0) as usize).min(2);
    let n = 1 + draw(0.0..12.0) as usize;
    let t_a = 30.0;
    let mut b = Network::builder(t_a);
    for node in ["o", "m", "d", "o2"] {
        b.add_node(node).unwrap();
    }
    let mut link = |b: &mut edue::network::NetworkBuilder, id: &str, from: &str, to: &str| {
        let tau = draw(0.5..5.0);
        let cap = draw(0.5..5.0);
        b.add_link(id, from, to, tau, cap).unwrap();
    };
    match shape {
        0 => {
            link(&mut b, "a", "o", "m");
            link(&mut b, "b", "m", "d");
            link(&mut b, "c", "d", "o2");
            b.add_od("w", "o", "o2").unwrap();
            b.add_path("p", "w", &["a", "b", "c"]).unwrap();
        }
        1 => {
            link(&mut b, "a", "o", "d");
            link(&mut b, "b", "o", "m");
            link(&mut b, "c", "m", "d");
            b.add_od("w", "o", "d").unwrap();
            b.add_path("p", "w", &["a"]).unwrap();
            b.add_path("q", "w", &["b", "c"]).unwrap();
        }
        _ => {
            link(&mut b, "a", "o", "m");
            link(&mut b, "b", "o2", "m");
            link(&mut b, "c", "m", "d");
            b.add_od("w", "o", "d").unwrap();
            b.add_od("v", "o2", "d").unwrap();
            b.add_path("p", "w", &["a", "c"]).unwrap();
            b.add_path("q", "v", &["b", "c"]).unwrap();
        }
    }
    let network = b.build();
    let grid = TimeGrid::new(0.0, 20.0, n).unwrap();
    let flows: Vec<Profile> = (0..network.paths().len())
        .map(|_| Profile::new(grid, (0..n).map(|_| draw(0.1..5.0)).collect()).unwrap())
        .collect();
    let volume: f64 = flows.iter().map(Profile::integrate).sum();
    let min_cap = network.min_exit_capacity().unwrap();
    let ff: f64 = network.links().iter().map(|l| l.free_flow_time).sum();
    LoadingCase {
        network,
        flows,
        horizon_end: 20.0 + volume / min_cap + ff + 1.0,
    }
}

/// Newell's lower envelope for one point-queue link: cumulative exits
/// `D(u) = min_{s ≤ u} [A(s - τ) + M (u - s)]`, with `A` given by its
/// breakpoints. The minimum over `s` of a piecewise-linear expression is
/// attained at a breakpoint or at `s = u`.
pub fn newell_exit(entrance: &[(f64, f64)], tau: f64, cap: f64, u: f64) -> f64 {
    let a = |t: f64| piecewise_linear(entrance, t);
    let mut best = a(u - tau);
    for &(t, _) in entrance {
        let s = t + tau;
        if s <= u {
            best = best.min(a(t) + cap * (u - s));
        }
    }
    best
}

pub fn piecewise_linear(pts: &[(f64, f64)], t: f64) -> f64 {
    if pts.is_empty() || t <= pts[0].0 {
        return pts.first().map_or(0.0, |p| p.1);
    }
    for w in pts.windows(2) {
        let ((t0, y0), (t1, y1)) = (w[0], w[1]);
        if t <= t1 {
            return if t1 > t0 {
                y0 + (y1 - y0) * (t - t0) / (t1 - t0)
            } else {
                y1
            };
        }
    }
    pts.last().unwrap().1
}

/// Cumulative departures of a piecewise-constant profile at its cell boundaries.
pub fn cumulative_points(flow: &Profile) -> Vec<(f64, f64)> {
    let g = flow.grid();
    let mut pts = vec![(g.t0(), 0.0)];
    let mut cum = 0.0;
    for (j, v) in flow.values().iter().enumerate() {
        cum += v * g.width();
        pts.push((g.boundary(j + 1), cum));
    }
    pts
}

/// Exit time of the vehicle entering at `t` through a single link, found by
/// bisection on the Newell exit curve: the first `u` with `D(u) ≥ A(t)`.
pub fn newell_exit_time(entrance: &[(f64, f64)], tau: f64, cap: f64, t: f64) -> f64 {
    let target = piecewise_linear(entrance, t);
    let (mut lo, mut hi) = (t + tau, t + tau + target / cap + 1.0);
    if newell_exit(entrance, tau, cap, lo) >= target - 1e-12 {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if newell_exit(entrance, tau, cap, mid) >= target - 1e-12 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
