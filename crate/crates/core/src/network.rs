//! Road network: nodes, links with free-flow time and exit capacity, OD
//! pairs, and explicitly enumerated paths.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: String,
    pub from: usize,
    pub to: usize,
    /// Free-flow traversal time τ_a.
    pub free_flow_time: f64,
    /// Exit capacity M_a (vehicles per unit time).
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdPair {
    pub id: String,
    pub origin: usize,
    pub destination: usize,
    /// Indices of the paths serving this pair, in insertion order.
    pub paths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub id: String,
    pub od: usize,
    pub links: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    nodes: Vec<String>,
    links: Vec<Link>,
    ods: Vec<OdPair>,
    paths: Vec<Path>,
    desired_arrival: f64,
}

/// A single reason a network cannot be used on a given horizon.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonpositiveCapacity { link: String },
    NonpositiveFreeFlowTime { link: String },
    DisconnectedPath { path: String, reason: String },
    RepeatedLink { path: String, link: String },
    EmptyPathSet { od: String },
    EmptyPath { path: String },
    ArrivalNotBeforeEnd { desired_arrival: f64, tf: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonpositiveCapacity { link } => {
                write!(f, "link {link}: nonpositive capacity")
            }
            Violation::NonpositiveFreeFlowTime { link } => {
                write!(f, "link {link}: nonpositive free-flow time")
            }
            Violation::DisconnectedPath { path, reason } => {
                write!(f, "path {path}: disconnected path ({reason})")
            }
            Violation::RepeatedLink { path, link } => {
                write!(f, "path {path}: link {link} repeated")
            }
            Violation::EmptyPathSet { od } => write!(f, "OD pair {od}: empty path set"),
            Violation::EmptyPath { path } => write!(f, "path {path}: no links"),
            Violation::ArrivalNotBeforeEnd {
                desired_arrival,
                tf,
            } => write!(
                f,
                "T_A must precede t_f (T_A = {desired_arrival}, t_f = {tf})"
            ),
        }
    }
}

impl Network {
    pub fn builder(desired_arrival: f64) -> NetworkBuilder {
        NetworkBuilder {
            net: Network {
                nodes: Vec::new(),
                links: Vec::new(),
                ods: Vec::new(),
                paths: Vec::new(),
                desired_arrival,
            },
            node_index: HashMap::new(),
            link_index: HashMap::new(),
            od_index: HashMap::new(),
        }
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn ods(&self) -> &[OdPair] {
        &self.ods
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn desired_arrival(&self) -> f64 {
        self.desired_arrival
    }

    /// OD index of every path.
    pub fn path_ods(&self) -> Vec<usize> {
        self.paths.iter().map(|p| p.od).collect()
    }

    pub fn free_flow_path_time(&self, path: usize) -> f64 {
        self.paths[path]
            .links
            .iter()
            .map(|&a| self.links[a].free_flow_time)
            .sum()
    }

    pub fn path_index(&self, id: &str) -> Option<usize> {
        self.paths.iter().position(|p| p.id == id)
    }

    pub fn od_index(&self, id: &str) -> Option<usize> {
        self.ods.iter().position(|o| o.id == id)
    }

    /// Lists every violation; an empty list means the network is usable on `grid`.
    pub fn validate(&self, grid: &TimeGrid) -> Vec<Violation> {
        let mut out = Vec::new();
        for link in &self.links {
            if !(link.capacity > 0.0 && link.capacity.is_finite()) {
                out.push(Violation::NonpositiveCapacity {
                    link: link.id.clone(),
                });
            }
            if !(link.free_flow_time > 0.0 && link.free_flow_time.is_finite()) {
                out.push(Violation::NonpositiveFreeFlowTime {
                    link: link.id.clone(),
                });
            }
        }
        for od in &self.ods {
            if od.paths.is_empty() {
                out.push(Violation::EmptyPathSet { od: od.id.clone() });
            }
        }
        for path in &self.paths {
            let od = &self.ods[path.od];
            let Some((&first, _)) = path.links.split_first() else {
                out.push(Violation::EmptyPath {
                    path: path.id.clone(),
                });
                continue;
            };
            if self.links[first].from != od.origin {
                out.push(Violation::DisconnectedPath {
                    path: path.id.clone(),
                    reason: format!("does not start at origin {}", self.nodes[od.origin]),
                });
            }
            for pair in path.links.windows(2) {
                let (a, b) = (&self.links[pair[0]], &self.links[pair[1]]);
                if a.to != b.from {
                    out.push(Violation::DisconnectedPath {
                        path: path.id.clone(),
                        reason: format!("link {} does not continue link {}", b.id, a.id),
                    });
                }
            }
            let last = *path.links.last().unwrap();
            if self.links[last].to != od.destination {
                out.push(Violation::DisconnectedPath {
                    path: path.id.clone(),
                    reason: format!("does not end at destination {}", self.nodes[od.destination]),
                });
            }
            let mut seen = vec![false; self.links.len()];
            for &a in &path.links {
                if std::mem::replace(&mut seen[a], true) {
                    out.push(Violation::RepeatedLink {
                        path: path.id.clone(),
                        link: self.links[a].id.clone(),
                    });
                }
            }
        }
        if !(self.desired_arrival < grid.tf()) {
            out.push(Violation::ArrivalNotBeforeEnd {
                desired_arrival: self.desired_arrival,
                tf: grid.tf(),
            });
        }
        out
    }

    /// `M^max = max_a M_a`.
    pub fn max_exit_capacity(&self) -> Result<f64> {
        self.links
            .iter()
            .map(|l| l.capacity)
            .reduce(f64::max)
            .ok_or_else(|| Error::Structure("network has no links".into()))
    }

    pub fn min_exit_capacity(&self) -> Result<f64> {
        self.links
            .iter()
            .map(|l| l.capacity)
            .reduce(f64::min)
            .ok_or_else(|| Error::Structure("network has no links".into()))
    }

    /// Same network with paths and OD pairs listed in a different order.
    /// `path_order[i]` is the old index of the new i-th path.
    pub fn relabeled(&self, path_order: &[usize], od_order: &[usize]) -> Result<Network> {
        let mut b = Network::builder(self.desired_arrival);
        for n in &self.nodes {
            b.add_node(n)?;
        }
        for l in &self.links {
            b.add_link(
                &l.id,
                &self.nodes[l.from],
                &self.nodes[l.to],
                l.free_flow_time,
                l.capacity,
            )?;
        }
        for &o in od_order {
            let od = &self.ods[o];
            b.add_od(&od.id, &self.nodes[od.origin], &self.nodes[od.destination])?;
        }
        for &p in path_order {
            let path = &self.paths[p];
            let links: Vec<&str> = path
                .links
                .iter()
                .map(|&a| self.links[a].id.as_str())
                .collect();
            b.add_path(&path.id, &self.ods[path.od].id, &links)?;
        }
        Ok(b.build())
    }
}

/// Incremental constructor resolving string ids to indices. Referencing an
/// unknown node, link or OD id is a structural error; numeric checks are left
/// to [`Network::validate`].
pub struct NetworkBuilder {
    net: Network,
    node_index: HashMap<String, usize>,
    link_index: HashMap<String, usize>,
    od_index: HashMap<String, usize>,
}

impl NetworkBuilder {
    pub fn add_node(&mut self, id: &str) -> Result<usize> {
        if self.node_index.contains_key(id) {
            return Err(Error::Structure(format!("duplicate node id {id}")));
        }
        let idx = self.net.nodes.len();
        self.net.nodes.push(id.to_string());
        self.node_index.insert(id.to_string(), idx);
        Ok(idx)
    }

    fn node(&self, id: &str) -> Result<usize> {
        self.node_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Structure(format!("unknown node id {id}")))
    }

    pub fn add_link(
        &mut self,
        id: &str,
        from: &str,
        to: &str,
        free_flow_time: f64,
        capacity: f64,
    ) -> Result<usize> {
        if self.link_index.contains_key(id) {
            return Err(Error::Structure(format!("duplicate link id {id}")));
        }
        let link = Link {
            id: id.to_string(),
            from: self.node(from)?,
            to: self.node(to)?,
            free_flow_time,
            capacity,
        };
        let idx = self.net.links.len();
        self.net.links.push(link);
        self.link_index.insert(id.to_string(), idx);
        Ok(idx)
    }

    pub fn add_od(&mut self, id: &str, origin: &str, destination: &str) -> Result<usize> {
        if self.od_index.contains_key(id) {
            return Err(Error::Structure(format!("duplicate OD id {id}")));
        }
        let od = OdPair {
            id: id.to_string(),
            origin: self.node(origin)?,
            destination: self.node(destination)?,
            paths: Vec::new(),
        };
        let idx = self.net.ods.len();
        self.net.ods.push(od);
        self.od_index.insert(id.to_string(), idx);
        Ok(idx)
    }

    pub fn add_path(&mut self, id: &str, od: &str, links: &[&str]) -> Result<usize> {
        if self.net.paths.iter().any(|p| p.id == id) {
            return Err(Error::Structure(format!("duplicate path id {id}")));
        }
        let od_idx = *self
            .od_index
            .get(od)
            .ok_or_else(|| Error::Structure(format!("path {id}: unknown OD id {od}")))?;
        let links = links
            .iter()
            .map(|l| {
                self.link_index
                    .get(*l)
                    .copied()
                    .ok_or_else(|| Error::Structure(format!("path {id}: unknown link id {l}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let idx = self.net.paths.len();
        self.net.paths.push(Path {
            id: id.to_string(),
            od: od_idx,
            links,
        });
        self.net.ods[od_idx].paths.push(idx);
        Ok(idx)
    }

    pub fn build(self) -> Network {
        self.net
    }
}
