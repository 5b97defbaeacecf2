//! Fence graphs: one column of channel nodes per lag `t-D..t-1`, followed by
//! two current-time columns. Granger edges run from a lag column into the
//! first current-time column; structural edges stay inside the second.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::svar::SvarModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Column {
    /// `t - d`, `d >= 1`.
    Lag(usize),
    /// Current instant, target of Granger edges.
    Granger,
    /// Current instant, home of structural edges.
    Structural,
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Column::Lag(d) => write!(f, "t-{d}"),
            Column::Granger => f.write_str("t_granger"),
            Column::Structural => f.write_str("t_structural"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Structural,
    Granger,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeSign {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub column: Column,
    pub channel: String,
}

impl Node {
    pub fn id(&self) -> String {
        format!("{}:{}", self.column, self.channel)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// Index into `FenceGraph::nodes`.
    pub source: usize,
    pub target: usize,
    pub weight: f64,
    pub kind: EdgeKind,
    pub sign: EdgeSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FenceGraph {
    /// `[t-D, ..., t-1, t_granger, t_structural]`.
    pub columns: Vec<Column>,
    pub channels: Vec<String>,
    /// Column-major grid: node `col * C + ch`.
    pub nodes: Vec<Node>,
    /// Sorted by (source node, target node).
    pub edges: Vec<Edge>,
}

impl FenceGraph {
    pub fn node_index(&self, column: Column, channel: usize) -> usize {
        let col = self
            .columns
            .iter()
            .position(|&c| c == column)
            .expect("column belongs to this graph");
        col * self.channels.len() + channel
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| e.weight.abs())
            .fold(0.0, f64::max)
    }
}

/// Builds the fence graph of `model`, keeping factors with `|value| >= threshold`.
/// Exact zeros never become edges. Entry `[i][j]` (effect `i`, cause `j`)
/// becomes an edge from channel `j` to channel `i`.
pub fn build_fence_graph(model: &SvarModel, threshold: f64, use_corrected: bool) -> FenceGraph {
    let threshold = threshold.max(0.0);
    let c = model.n_channels();
    let d = model.order;
    let mut columns: Vec<Column> = (1..=d).rev().map(Column::Lag).collect();
    columns.push(Column::Granger);
    columns.push(Column::Structural);
    let nodes = columns
        .iter()
        .flat_map(|&column| {
            model.channels.iter().map(move |ch| Node {
                column,
                channel: ch.clone(),
            })
        })
        .collect();
    let mut graph = FenceGraph {
        columns,
        channels: model.channels.clone(),
        nodes,
        edges: Vec::new(),
    };

    let keep = |v: f64| v != 0.0 && v.abs() >= threshold;
    let sign = |v: f64| {
        if v > 0.0 {
            EdgeSign::Positive
        } else {
            EdgeSign::Negative
        }
    };
    let lags = if use_corrected {
        &model.lagged
    } else {
        &model.uncorrected_lagged
    };
    let mut edges = Vec::new();
    for (lag, m) in lags.iter().enumerate() {
        for i in 0..c {
            for j in 0..c {
                let v = m[(i, j)];
                if i != j && keep(v) {
                    edges.push(Edge {
                        source: graph.node_index(Column::Lag(lag + 1), j),
                        target: graph.node_index(Column::Granger, i),
                        weight: v,
                        kind: EdgeKind::Granger,
                        sign: sign(v),
                    });
                }
            }
        }
    }
    for i in 0..c {
        for j in 0..c {
            let v = model.s0.s0[(i, j)];
            if i != j && keep(v) {
                edges.push(Edge {
                    source: graph.node_index(Column::Structural, j),
                    target: graph.node_index(Column::Structural, i),
                    weight: v,
                    kind: EdgeKind::Structural,
                    sign: sign(v),
                });
            }
        }
    }
    edges.sort_by_key(|e| (e.source, e.target));
    graph.edges = edges;
    graph
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DotStyle {
    pub min_width: f64,
    pub max_width: f64,
}

impl Default for DotStyle {
    fn default() -> Self {
        Self {
            min_width: 0.5,
            max_width: 5.0,
        }
    }
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

impl FenceGraph {
    /// Graphviz digraph. Columns are rank groups laid out left to right;
    /// structural edges are blue, Granger edges green, negative factors dashed,
    /// and pen width scales linearly with `|weight|` up to `style.max_width`.
    pub fn to_dot(&self, style: &DotStyle) -> String {
        let max = self.max_abs_weight();
        let mut out = String::new();
        out.push_str("digraph fence_graph {\n");
        out.push_str("  rankdir=LR;\n");
        out.push_str("  newrank=true;\n");
        out.push_str("  node [shape=ellipse, fontsize=10];\n");
        let c = self.channels.len();
        for (k, column) in self.columns.iter().enumerate() {
            let _ = writeln!(out, "  subgraph col_{k} {{");
            out.push_str("    rank=same;\n");
            let _ = writeln!(out, "    label={};", quote(&column.to_string()));
            for node in &self.nodes[k * c..(k + 1) * c] {
                let _ = writeln!(
                    out,
                    "    {} [label={}];",
                    quote(&node.id()),
                    quote(&format!("{} ({})", node.channel, node.column))
                );
            }
            out.push_str("  }\n");
        }
        for e in &self.edges {
            let width = if max > 0.0 {
                style.min_width + (style.max_width - style.min_width) * e.weight.abs() / max
            } else {
                style.min_width
            };
            let color = match e.kind {
                EdgeKind::Structural => "blue",
                EdgeKind::Granger => "green",
            };
            let line = match e.sign {
                EdgeSign::Positive => "solid",
                EdgeSign::Negative => "dashed",
            };
            let _ = writeln!(
                out,
                "  {} -> {} [color={color}, style={line}, penwidth={width:.3}, tooltip=\"{:.6}\"];",
                quote(&self.nodes[e.source].id()),
                quote(&self.nodes[e.target].id()),
                e.weight
            );
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let file = GraphFile {
            columns: self.columns.iter().map(Column::to_string).collect(),
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeFile {
                    id: n.id(),
                    column: n.column.to_string(),
                    channel: n.channel.clone(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeFile {
                    src: self.nodes[e.source].id(),
                    dst: self.nodes[e.target].id(),
                    weight: e.weight,
                    kind: e.kind,
                    sign: e.sign,
                })
                .collect(),
        };
        let mut text =
            serde_json::to_string_pretty(&file).map_err(|e| Error::ModelParse(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct GraphFile {
    pub columns: Vec<String>,
    pub nodes: Vec<NodeFile>,
    pub edges: Vec<EdgeFile>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct NodeFile {
    pub id: String,
    pub column: String,
    pub channel: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct EdgeFile {
    pub src: String,
    pub dst: String,
    pub weight: f64,
    pub kind: EdgeKind,
    pub sign: EdgeSign,
}
