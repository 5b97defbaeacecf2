mod common;

use common::{model, random_stable_svar1};
use graphviz_rust::dot_structures::{Edge, EdgeTy, Graph, Stmt, Subgraph};
use micdt_core::{build_fence_graph, Column, DotStyle, EdgeKind, SvarModel};
use nalgebra::DMatrix;

fn count_stmts(stmts: &[Stmt], nodes: &mut usize, edges: &mut Vec<Edge>) {
    for s in stmts {
        match s {
            Stmt::Node(_) => *nodes += 1,
            Stmt::Edge(e) => edges.push(e.clone()),
            Stmt::Subgraph(Subgraph { stmts, .. }) => count_stmts(stmts, nodes, edges),
            _ => {}
        }
    }
}

fn parse(dot: &str) -> (usize, Vec<Edge>) {
    let g = graphviz_rust::parse(dot).expect("DOT parses");
    let Graph::DiGraph { stmts, .. } = g else {
        panic!("expected digraph")
    };
    let (mut nodes, mut edges) = (0, Vec::new());
    count_stmts(&stmts, &mut nodes, &mut edges);
    (nodes, edges)
}

fn order3_model() -> SvarModel {
    let base = random_stable_svar1(4, 300);
    let mut lagged = vec![base.lagged[0].clone()];
    lagged.push(DMatrix::from_fn(4, 4, |i, j| {
        if i == j {
            0.1
        } else {
            0.05 * (i as f64 - j as f64)
        }
    }));
    lagged.push(DMatrix::from_fn(4, 4, |i, j| {
        0.02 * ((i * 4 + j) as f64 - 7.0)
    }));
    model(base.s0.s0.clone(), base.s0.causal_order.clone(), lagged)
}

#[test]
fn order3_model_renders_parseable_twenty_node_grid() {
    let m = order3_model();
    let g = build_fence_graph(&m, 0.05, true);
    assert_eq!(g.nodes.len(), 20);
    let dot = g.to_dot(&DotStyle::default());
    let (nodes, edges) = parse(&dot);
    assert_eq!(nodes, 20);
    assert_eq!(edges.len(), g.edges.len());
    for e in &edges {
        assert!(matches!(e.ty, EdgeTy::Pair(_, _)));
    }
    assert_eq!(
        dot,
        build_fence_graph(&m, 0.05, true).to_dot(&DotStyle::default())
    );
}

#[test]
fn granger_edges_end_in_granger_column() {
    let g = build_fence_graph(&order3_model(), 0.0, true);
    let (c, d) = (4usize, 3usize);
    let mut granger = 0;
    for e in &g.edges {
        let (src, dst) = (&g.nodes[e.source], &g.nodes[e.target]);
        match e.kind {
            EdgeKind::Granger => {
                granger += 1;
                assert_eq!(dst.column, Column::Granger);
                assert!(matches!(src.column, Column::Lag(k) if (1..=d).contains(&k)));
            }
            EdgeKind::Structural => {
                assert_eq!(
                    (src.column, dst.column),
                    (Column::Structural, Column::Structural)
                );
                assert_ne!(src.channel, dst.channel);
            }
        }
    }
    assert!(granger > 0);
    let structural = g.edges.len() - granger;
    assert!(structural <= c * (c - 1) / 2);
    assert!(granger <= d * c * (c - 1));
}

#[test]
fn raising_threshold_never_adds_edges() {
    let m = order3_model();
    let key = |g: &micdt_core::FenceGraph| {
        g.edges
            .iter()
            .map(|e| (e.source, e.target))
            .collect::<std::collections::BTreeSet<_>>()
    };
    let mut prev = key(&build_fence_graph(&m, 0.0, true));
    for k in 1..=20 {
        let next = key(&build_fence_graph(&m, k as f64 * 0.05, true));
        assert!(next.is_subset(&prev));
        prev = next;
    }
    assert!(prev.is_empty());
}

#[test]
fn json_export_is_deterministic() {
    let m = order3_model();
    let a = build_fence_graph(&m, 0.05, false).to_json().unwrap();
    let b = build_fence_graph(&m, 0.05, false).to_json().unwrap();
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["columns"].as_array().unwrap().len(), 5);
    assert_eq!(v["nodes"].as_array().unwrap().len(), 20);
}
