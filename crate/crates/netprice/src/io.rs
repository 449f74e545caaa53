//! Dataset file ingestion and emission.
//!
//! Edge list: whitespace-separated integer pairs, one per line; blank
//! lines and `#` comments are skipped. Node table: delimited text with a
//! header row; the protected column is named by the caller, an optional
//! `id` column carries external node ids, and every other column is a
//! numeric feature. External ids are remapped to dense 0-based indices
//! in node-table row order; the remap is recorded in the load report.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::scalar::Scalar;
use crate::table::NodeTable;

/// Plain-text summary of a dataset load.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub nodes: usize,
    pub edges: usize,
    pub edge_lines: usize,
    pub dropped_self_loops: usize,
    pub remapped_ids: bool,
}

impl LoadReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "nodes {}", self.nodes);
        let _ = writeln!(out, "edges {}", self.edges);
        let _ = writeln!(out, "edge_lines {}", self.edge_lines);
        let _ = writeln!(out, "dropped_self_loops {}", self.dropped_self_loops);
        let _ = writeln!(out, "remapped_ids {}", self.remapped_ids);
        out
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Raw edge pairs (external ids) from a whitespace-separated file.
pub fn read_edge_pairs(path: &Path) -> Result<Vec<(u64, u64)>> {
    let text = fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let a = it
            .next()
            .ok_or_else(|| parse_err(path, lineno + 1, "missing first endpoint"))?;
        let b = it
            .next()
            .ok_or_else(|| parse_err(path, lineno + 1, "missing second endpoint"))?;
        if it.next().is_some() {
            return Err(parse_err(path, lineno + 1, "expected exactly two columns"));
        }
        let a: u64 = a
            .parse()
            .map_err(|_| parse_err(path, lineno + 1, format!("bad node id '{a}'")))?;
        let b: u64 = b
            .parse()
            .map_err(|_| parse_err(path, lineno + 1, format!("bad node id '{b}'")))?;
        pairs.push((a, b));
    }
    Ok(pairs)
}

/// Node table plus the external-id column, if present.
pub struct LoadedTable<T> {
    pub table: NodeTable<T>,
    pub external_ids: Option<Vec<u64>>,
}

pub fn load_node_table<T: Scalar>(
    path: &Path,
    delimiter: char,
    protected_column: &str,
) -> Result<LoadedTable<T>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty node table"))?;
    let columns: Vec<&str> = header.split(delimiter).map(str::trim).collect();
    let protected_idx = columns
        .iter()
        .position(|&c| c == protected_column)
        .ok_or_else(|| {
            parse_err(
                path,
                1,
                format!("protected column '{protected_column}' not found in header"),
            )
        })?;
    let id_idx = columns.iter().position(|&c| c == "id");
    let feature_cols: Vec<(usize, String)> = columns
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != protected_idx && Some(i) != id_idx)
        .map(|(i, &c)| (i, c.to_string()))
        .collect();
    if feature_cols.is_empty() {
        return Err(parse_err(path, 1, "node table has no feature columns"));
    }

    let mut data: Vec<T> = Vec::new();
    let mut s: Vec<u8> = Vec::new();
    let mut ids: Vec<u64> = Vec::new();
    let mut rows = 0usize;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(delimiter).map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(parse_err(
                path,
                lineno + 1,
                format!("expected {} fields, found {}", columns.len(), fields.len()),
            ));
        }
        let sv = fields[protected_idx];
        match sv {
            "0" => s.push(0),
            "1" => s.push(1),
            other => {
                return Err(parse_err(
                    path,
                    lineno + 1,
                    format!("protected column must be binary, found '{other}'"),
                ))
            }
        }
        if let Some(idx) = id_idx {
            let id: u64 = fields[idx].parse().map_err(|_| {
                parse_err(path, lineno + 1, format!("bad id '{}'", fields[idx]))
            })?;
            ids.push(id);
        }
        for (col, name) in &feature_cols {
            let v: f64 = fields[*col].parse().map_err(|_| {
                parse_err(
                    path,
                    lineno + 1,
                    format!("bad numeric value '{}' in column '{name}'", fields[*col]),
                )
            })?;
            data.push(T::cast(v));
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(path, 1, "node table has no data rows"));
    }
    let names: Vec<String> = feature_cols.into_iter().map(|(_, n)| n).collect();
    let table = NodeTable::new(
        Tensor::from_vec(rows, names.len(), data)?,
        names,
        s,
        protected_column,
    )?;
    Ok(LoadedTable {
        table,
        external_ids: if id_idx.is_some() { Some(ids) } else { None },
    })
}

/// Load a dataset: node table first (it defines the node count and,
/// optionally, the external-id remap), then the edge list through the
/// same cleanup as [`Graph::build`].
pub fn load_dataset<T: Scalar>(
    edge_path: &Path,
    table_path: &Path,
    delimiter: char,
    protected_column: &str,
) -> Result<(Graph, NodeTable<T>, LoadReport)> {
    let loaded = load_node_table::<T>(table_path, delimiter, protected_column)?;
    let n = loaded.table.n();
    let pairs = read_edge_pairs(edge_path)?;
    let edge_lines = pairs.len();

    let to_index: Option<HashMap<u64, usize>> = loaded.external_ids.as_ref().map(|ids| {
        ids.iter()
            .enumerate()
            .map(|(idx, &id)| (id, idx))
            .collect()
    });
    let mut edges = Vec::with_capacity(pairs.len());
    let mut dropped_self_loops = 0usize;
    for (a, b) in pairs {
        let (i, j) = match &to_index {
            Some(map) => {
                let i = *map
                    .get(&a)
                    .ok_or_else(|| Error::Invalid(format!("edge references unknown node id {a}")))?;
                let j = *map
                    .get(&b)
                    .ok_or_else(|| Error::Invalid(format!("edge references unknown node id {b}")))?;
                (i, j)
            }
            None => (a as usize, b as usize),
        };
        if i == j {
            dropped_self_loops += 1;
            continue;
        }
        edges.push((i, j));
    }
    let graph = Graph::build(&edges, n)?;
    let report = LoadReport {
        nodes: n,
        edges: graph.edge_count(),
        edge_lines,
        dropped_self_loops,
        remapped_ids: to_index.is_some(),
    };
    Ok((graph, loaded.table, report))
}

/// Write an edge list in the format [`read_edge_pairs`] accepts.
pub fn write_edge_list(path: &Path, graph: &Graph) -> Result<()> {
    let mut out = String::new();
    for (i, j) in graph.edges() {
        let _ = writeln!(out, "{i} {j}");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Write a node table in the format [`load_node_table`] accepts.
pub fn write_node_table<T: Scalar>(path: &Path, table: &NodeTable<T>, delimiter: char) -> Result<()> {
    let mut out = String::new();
    let mut header: Vec<String> = table.feature_names().to_vec();
    header.push(table.protected_name().to_string());
    let _ = writeln!(out, "{}", header.join(&delimiter.to_string()));
    for i in 0..table.n() {
        let mut fields: Vec<String> = table
            .features()
            .row(i)
            .iter()
            .map(|v| format!("{}", v.as_f64()))
            .collect();
        fields.push(format!("{}", table.s()[i]));
        let _ = writeln!(out, "{}", fields.join(&delimiter.to_string()));
    }
    fs::write(path, out)?;
    Ok(())
}
