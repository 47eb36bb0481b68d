//! JSON scenario files: one self-describing document per experiment.
//!
//! Times are in hours, flows in vehicles per hour and demands in vehicles;
//! the `units` block must say so.

use std::collections::HashSet;
use std::fmt;
use std::path::Path as FsPath;

use serde::Deserialize;

use crate::cost::SchedulePenalty;
use crate::demand::{DemandModel, LinearInverseDemand, OdDemand};
use crate::grid::TimeGrid;
use crate::network::Network;
use crate::solver::{Problem, SolverConfig};

pub const TIME_UNIT: &str = "hours";
pub const FLOW_UNIT: &str = "vehicles/hour";
pub const DEMAND_UNIT: &str = "vehicles";

/// A problem with the input, located by file position or field path.
#[derive(Debug, Clone, PartialEq)]
pub struct InputError {
    pub location: String,
    pub message: String,
}

impl InputError {
    pub fn at(location: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            location: location.into(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

impl std::error::Error for InputError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub time: String,
    pub flow: String,
    pub demand: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    pub free_flow_time: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdSpec {
    pub id: String,
    pub origin: String,
    pub destination: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub id: String,
    pub od: String,
    pub links: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub nodes: Vec<String>,
    pub links: Vec<LinkSpec>,
    pub od_pairs: Vec<OdSpec>,
    pub paths: Vec<PathSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSpec {
    pub t0: f64,
    pub tf: f64,
    pub desired_arrival: f64,
    /// Loading time allowed beyond `tf`; derived from the demand caps if absent.
    #[serde(default)]
    pub extension: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySpec {
    pub early: f64,
    pub late: f64,
}

/// Either `theta0`/`theta1` (with an optional `cap`) or `fixed`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSpec {
    pub od: String,
    #[serde(default)]
    pub theta0: Option<f64>,
    #[serde(default)]
    pub theta1: Option<f64>,
    #[serde(default)]
    pub cap: Option<f64>,
    #[serde(default)]
    pub fixed: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub n: usize,
    pub alpha: f64,
    pub max_iters: usize,
    pub gap_tol: f64,
    #[serde(default)]
    pub halve_after: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub units: Units,
    pub network: NetworkSpec,
    pub horizon: HorizonSpec,
    pub penalty: PenaltySpec,
    pub demand: Vec<DemandSpec>,
    pub solver: SolverSpec,
}

impl Scenario {
    pub fn from_json(text: &str, source: &str) -> Result<Self, InputError> {
        serde_json::from_str(text).map_err(|e| {
            InputError::at(
                format!("{source}:{}:{}", e.line(), e.column()),
                strip_position(&e.to_string()),
            )
        })
    }

    pub fn read(path: &FsPath) -> Result<Self, InputError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InputError::at(path.display().to_string(), e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Validates every block and assembles the problem on an `n`-cell grid.
    pub fn problem(&self, n: usize) -> Result<Problem, InputError> {
        self.check_units()?;
        let network = self.network()?;
        let h = &self.horizon;
        let grid = TimeGrid::new(h.t0, h.tf, n).map_err(|e| InputError::at("horizon", e))?;
        let penalty = SchedulePenalty::new(self.penalty.early, self.penalty.late)
            .map_err(|e| InputError::at("penalty", e))?;
        penalty
            .check_early_slope()
            .map_err(|e| InputError::at("penalty.early", e))?;
        let demand = self.demand_model(&network)?;
        let problem = Problem::new(network, penalty, demand, grid)
            .map_err(|e| InputError::at("network", e))?;
        match h.extension {
            Some(ext) => problem
                .with_horizon_extension(ext)
                .map_err(|e| InputError::at("horizon.extension", e)),
            None => Ok(problem),
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            alpha: self.solver.alpha,
            max_iters: self.solver.max_iters,
            gap_tol: self.solver.gap_tol,
            halve_after: self.solver.halve_after,
            flow_threshold: None,
        }
    }

    fn check_units(&self) -> Result<(), InputError> {
        let u = &self.units;
        for (field, got, want) in [
            ("units.time", &u.time, TIME_UNIT),
            ("units.flow", &u.flow, FLOW_UNIT),
            ("units.demand", &u.demand, DEMAND_UNIT),
        ] {
            if got != want {
                return Err(InputError::at(
                    field,
                    format!("expected \"{want}\", found \"{got}\""),
                ));
            }
        }
        Ok(())
    }

    fn network(&self) -> Result<Network, InputError> {
        let spec = &self.network;
        let mut b = Network::builder(self.horizon.desired_arrival);
        for (i, node) in spec.nodes.iter().enumerate() {
            b.add_node(node)
                .map_err(|e| InputError::at(format!("network.nodes[{i}]"), e))?;
        }
        for (i, l) in spec.links.iter().enumerate() {
            let at = |field: &str| format!("network.links[{i}].{field}");
            if !(l.free_flow_time > 0.0 && l.free_flow_time.is_finite()) {
                return Err(InputError::at(
                    at("free_flow_time"),
                    format!("{} must be positive", l.free_flow_time),
                ));
            }
            if !(l.capacity > 0.0 && l.capacity.is_finite()) {
                return Err(InputError::at(
                    at("capacity"),
                    format!("{} must be positive", l.capacity),
                ));
            }
            b.add_link(&l.id, &l.from, &l.to, l.free_flow_time, l.capacity)
                .map_err(|e| InputError::at(format!("network.links[{i}]"), e))?;
        }
        for (i, od) in spec.od_pairs.iter().enumerate() {
            b.add_od(&od.id, &od.origin, &od.destination)
                .map_err(|e| InputError::at(format!("network.od_pairs[{i}]"), e))?;
        }
        for (i, p) in spec.paths.iter().enumerate() {
            let links: Vec<&str> = p.links.iter().map(String::as_str).collect();
            b.add_path(&p.id, &p.od, &links)
                .map_err(|e| InputError::at(format!("network.paths[{i}]"), e))?;
        }
        Ok(b.build())
    }

    fn demand_model(&self, network: &Network) -> Result<DemandModel, InputError> {
        let mut seen = HashSet::new();
        let mut by_od: Vec<Option<OdDemand>> = vec![None; network.ods().len()];
        for (i, d) in self.demand.iter().enumerate() {
            let at = |field: &str| format!("demand[{i}].{field}");
            let w = network
                .od_index(&d.od)
                .ok_or_else(|| InputError::at(at("od"), format!("unknown OD pair \"{}\"", d.od)))?;
            if !seen.insert(w) {
                return Err(InputError::at(
                    at("od"),
                    format!("OD pair \"{}\" listed twice", d.od),
                ));
            }
            let entry = match (d.fixed, d.theta0, d.theta1) {
                (Some(volume), None, None) if d.cap.is_none() => OdDemand::Fixed { volume },
                (Some(_), _, _) => {
                    return Err(InputError::at(
                        at("fixed"),
                        "a fixed volume excludes theta0, theta1 and cap",
                    ))
                }
                (None, Some(theta0), Some(theta1)) => OdDemand::Elastic(
                    LinearInverseDemand::new(&d.od, theta0, theta1, d.cap)
                        .map_err(|e| InputError::at(format!("demand[{i}]"), e))?,
                ),
                (None, None, _) => return Err(InputError::at(at("theta0"), "missing")),
                (None, _, None) => return Err(InputError::at(at("theta1"), "missing")),
            };
            by_od[w] = Some(entry);
        }
        let entries = network
            .ods()
            .iter()
            .zip(by_od)
            .map(|(od, d)| {
                d.map(|d| (od.id.clone(), d)).ok_or_else(|| {
                    InputError::at("demand", format!("no entry for OD pair \"{}\"", od.id))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        DemandModel::new(entries).map_err(|e| InputError::at("demand", e))
    }
}

/// serde_json appends " at line L column C"; the location is reported separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
  "units": {"time": "hours", "flow": "vehicles/hour", "demand": "vehicles"},
  "network": {
    "nodes": ["i", "j"],
    "links": [{"id": "a", "from": "i", "to": "j", "free_flow_time": 0.2, "capacity": 100}],
    "od_pairs": [{"id": "ij", "origin": "i", "destination": "j"}],
    "paths": [{"id": "p", "od": "ij", "links": ["a"]}]
  },
  "horizon": {"t0": 0, "tf": 2, "desired_arrival": 1.5},
  "penalty": {"early": 0.5, "late": 2},
  "demand": [{"od": "ij", "theta0": 1, "theta1": 0.005}],
  "solver": {"n": 8, "alpha": 10, "max_iters": 100, "gap_tol": 1e-6}
}"#;

    #[test]
    fn base_scenario_builds() {
        let sc = Scenario::from_json(BASE, "s.json").unwrap();
        let pb = sc.problem(sc.solver.n).unwrap();
        assert_eq!(pb.grid().cells(), 8);
        assert!((pb.demand().od(0).cap() - 190.0).abs() < 1e-9);
    }

    #[test]
    fn syntax_errors_carry_line_and_column() {
        let broken = BASE.replace("\"capacity\": 100", "\"capacity\": ");
        let err = Scenario::from_json(&broken, "s.json").unwrap_err();
        assert!(err.location.starts_with("s.json:5:"), "{err}");
    }

    #[test]
    fn missing_field_is_named() {
        let broken = BASE.replace(", \"capacity\": 100", "");
        let err = Scenario::from_json(&broken, "s.json").unwrap_err();
        assert!(err.message.contains("capacity"), "{err}");
    }

    #[test]
    fn field_paths_in_semantic_errors() {
        let bad = BASE.replace("\"capacity\": 100", "\"capacity\": -1");
        let err = Scenario::from_json(&bad, "s.json")
            .unwrap()
            .problem(8)
            .unwrap_err();
        assert_eq!(err.location, "network.links[0].capacity");

        let bad = BASE.replace("\"hours\"", "\"minutes\"");
        let err = Scenario::from_json(&bad, "s.json")
            .unwrap()
            .problem(8)
            .unwrap_err();
        assert_eq!(err.location, "units.time");

        let bad = BASE.replace("\"early\": 0.5", "\"early\": 1.5");
        let err = Scenario::from_json(&bad, "s.json")
            .unwrap()
            .problem(8)
            .unwrap_err();
        assert_eq!(err.location, "penalty.early");
        assert!(err.message.contains("too steep"));

        let bad = BASE.replace("\"od\": \"ij\", \"theta0\"", "\"od\": \"ji\", \"theta0\"");
        let err = Scenario::from_json(&bad, "s.json")
            .unwrap()
            .problem(8)
            .unwrap_err();
        assert_eq!(err.location, "demand[0].od");
    }

    #[test]
    fn fixed_demand_entry() {
        let fixed = BASE.replace("\"theta0\": 1, \"theta1\": 0.005", "\"fixed\": 50");
        let pb = Scenario::from_json(&fixed, "s.json")
            .unwrap()
            .problem(4)
            .unwrap();
        assert_eq!(pb.demand().od(0), &OdDemand::Fixed { volume: 50.0 });
        let both = BASE.replace("\"theta1\": 0.005", "\"theta1\": 0.005, \"fixed\": 3");
        let err = Scenario::from_json(&both, "s.json")
            .unwrap()
            .problem(4)
            .unwrap_err();
        assert_eq!(err.location, "demand[0].fixed");
    }
}
