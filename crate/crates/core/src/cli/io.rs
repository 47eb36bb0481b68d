//! CSV files read and written by the command-line tool.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a file
//! read back reproduces the in-memory values bit for bit.

use std::collections::HashMap;
use std::path::Path as FsPath;

use crate::cost::CostField;
use crate::dnl::{merge_times, LoadingResult};
use crate::grid::{ExtendedPoint, TimeGrid};
use crate::network::Network;
use crate::solver::IterationRecord;
use crate::verify::ResidualReport;

use super::scenario::InputError;

pub const FLOWS_HEADER: [&str; 5] = ["path_id", "cell_index", "t_start", "t_end", "flow"];
pub const COSTS_HEADER: [&str; 4] = ["path_id", "cell_index", "eff_delay", "reduced_cost"];
pub const GAP_HEADER: [&str; 5] = ["iter", "gap", "max_r1", "max_r2", "alpha"];
pub const RESIDUALS_HEADER: [&str; 11] = [
    "od_id",
    "demand",
    "theta",
    "min_cost",
    "r1",
    "r2",
    "consistency",
    "rel_r1",
    "rel_r2",
    "rel_consistency",
    "max_used_deviation",
];
pub const LINKS_HEADER: [&str; 5] = ["time", "link_id", "cum_in", "cum_out", "queue"];

fn write_rows<I>(path: &FsPath, header: &[&str], rows: I) -> Result<(), InputError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let fail = |e: &dyn std::fmt::Display| InputError::at(path.display().to_string(), e);
    let mut w = csv::Writer::from_path(path).map_err(|e| fail(&e))?;
    w.write_record(header).map_err(|e| fail(&e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| fail(&e))?;
    }
    w.flush().map_err(|e| fail(&e))
}

pub fn write_flows(path: &FsPath, network: &Network, x: &ExtendedPoint) -> Result<(), InputError> {
    let rows = network.paths().iter().zip(&x.flows).flat_map(|(p, f)| {
        let grid = *f.grid();
        f.values().iter().enumerate().map(move |(j, v)| {
            let (a, b) = grid.cell(j);
            vec![
                p.id.clone(),
                j.to_string(),
                a.to_string(),
                b.to_string(),
                v.to_string(),
            ]
        })
    });
    write_rows(path, &FLOWS_HEADER, rows)
}

pub fn write_costs(path: &FsPath, network: &Network, costs: &CostField) -> Result<(), InputError> {
    let rows = network.paths().iter().enumerate().flat_map(|(pi, p)| {
        costs.effective[pi]
            .values()
            .iter()
            .enumerate()
            .map(move |(j, c)| {
                vec![
                    p.id.clone(),
                    j.to_string(),
                    c.to_string(),
                    costs.reduced_cost(pi, j).to_string(),
                ]
            })
    });
    write_rows(path, &COSTS_HEADER, rows)
}

pub fn write_gap(path: &FsPath, history: &[IterationRecord]) -> Result<(), InputError> {
    let rows = history.iter().map(|r| {
        vec![
            r.iter.to_string(),
            r.gap.to_string(),
            r.max_r1.to_string(),
            r.max_r2.to_string(),
            r.alpha.to_string(),
        ]
    });
    write_rows(path, &GAP_HEADER, rows)
}

pub fn write_residuals(
    path: &FsPath,
    network: &Network,
    report: &ResidualReport,
) -> Result<(), InputError> {
    let rows = report.ods.iter().map(|r| {
        vec![
            network.ods()[r.od].id.clone(),
            r.demand.to_string(),
            r.theta.to_string(),
            r.min_cost.to_string(),
            r.complementarity.to_string(),
            r.optimality.to_string(),
            r.consistency.to_string(),
            r.relative_complementarity().to_string(),
            r.relative_optimality().to_string(),
            r.relative_consistency().to_string(),
            r.max_used_deviation.to_string(),
        ]
    });
    write_rows(path, &RESIDUALS_HEADER, rows)
}

/// Cumulative entrance and exit counts and the exit queue of every link, at
/// the union of their breakpoints.
pub fn write_link_curves(
    path: &FsPath,
    network: &Network,
    loading: &LoadingResult,
) -> Result<(), InputError> {
    let rows = loading.links().iter().flat_map(|l| {
        let id = network.links()[l.link].id.clone();
        merge_times([
            l.entrance.times().collect::<Vec<_>>(),
            l.exit.times().collect::<Vec<_>>(),
            l.queue.times().collect::<Vec<_>>(),
        ])
        .into_iter()
        .map(move |t| {
            vec![
                t.to_string(),
                id.clone(),
                l.entrance.eval(t).to_string(),
                l.exit.eval(t).to_string(),
                l.queue.eval(t).to_string(),
            ]
        })
    });
    write_rows(path, &LINKS_HEADER, rows)
}

/// Path flows as read from a flow file, before a grid is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTable {
    pub cells: usize,
    /// Indexed like the network's paths.
    pub values: Vec<Vec<f64>>,
}

/// Reads a flow file for `network` on the horizon `[t0, tf]`. The number of
/// cells is taken from the file; every path needs every cell exactly once,
/// and the cell times must match the uniform grid.
pub fn read_flows(
    path: &FsPath,
    network: &Network,
    t0: f64,
    tf: f64,
) -> Result<FlowTable, InputError> {
    let name = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| InputError::at(&name, e))?;
    let header = r.headers().map_err(|e| InputError::at(&name, e))?.clone();
    if header.iter().collect::<Vec<_>>() != FLOWS_HEADER {
        return Err(InputError::at(
            format!("{name}:1"),
            format!("expected header {}", FLOWS_HEADER.join(",")),
        ));
    }
    let paths: HashMap<&str, usize> = network
        .paths()
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.as_str(), i))
        .collect();
    let mut rows: Vec<(usize, usize, f64, f64, f64, u64)> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| InputError::at(&name, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let at = |col: &str| format!("{name}:{line}:{col}");
        let field = |i: usize| rec.get(i).unwrap_or("");
        let p = *paths.get(field(0)).ok_or_else(|| {
            InputError::at(at("path_id"), format!("unknown path \"{}\"", field(0)))
        })?;
        let j: usize = field(1)
            .parse()
            .map_err(|e| InputError::at(at("cell_index"), e))?;
        let num = |i: usize, col: &str| -> Result<f64, InputError> {
            let v: f64 = field(i).parse().map_err(|e| InputError::at(at(col), e))?;
            if !v.is_finite() {
                return Err(InputError::at(at(col), "not a finite number"));
            }
            Ok(v)
        };
        rows.push((
            p,
            j,
            num(2, "t_start")?,
            num(3, "t_end")?,
            num(4, "flow")?,
            line,
        ));
    }
    let cells = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
    if cells == 0 {
        return Err(InputError::at(&name, "no flow rows"));
    }
    let grid = TimeGrid::new(t0, tf, cells).map_err(|e| InputError::at(&name, e))?;
    let tol = 1e-9 * (tf - t0);
    let mut values: Vec<Vec<Option<f64>>> = vec![vec![None; cells]; network.paths().len()];
    for (p, j, a, b, v, line) in rows {
        let at = |col: &str| format!("{name}:{line}:{col}");
        let (ga, gb) = grid.cell(j);
        if (a - ga).abs() > tol || (b - gb).abs() > tol {
            return Err(InputError::at(
                at("t_start"),
                format!("cell {j} spans [{a}, {b}], grid has [{ga}, {gb}]"),
            ));
        }
        if values[p][j].replace(v).is_some() {
            return Err(InputError::at(
                at("cell_index"),
                format!("cell {j} repeated"),
            ));
        }
    }
    let values = values
        .into_iter()
        .enumerate()
        .map(|(p, cells)| {
            cells
                .into_iter()
                .enumerate()
                .map(|(j, v)| {
                    v.ok_or_else(|| {
                        InputError::at(
                            &name,
                            format!("path \"{}\" has no row for cell {j}", network.paths()[p].id),
                        )
                    })
                })
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FlowTable { cells, values })
}
