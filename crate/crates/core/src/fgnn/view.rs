use crate::error::{Error, Result};
use crate::graphs::{BcsGraph, SessionGraph};
use crate::ingest::ItemIndex;

/// Message-passing view of one graph or a disjoint union of several.
///
/// Edges are stored in local node positions and sorted by destination, then
/// source, so the in-neighbourhood `N(i)` of every node is a contiguous run.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatchView {
    items: Vec<ItemIndex>,
    core_mask: Vec<bool>,
    graph_of_node: Vec<usize>,
    num_graphs: usize,
    edge_src: Vec<usize>,
    edge_dst: Vec<usize>,
    edge_weight: Vec<f64>,
    in_groups: Vec<Vec<usize>>,
}

impl GraphBatchView {
    /// Single graph from local `(src, dst, weight)` edges. Every node needs at
    /// least one in-edge.
    pub fn new(
        items: Vec<ItemIndex>,
        edges: &[(usize, usize, f64)],
        core_mask: Vec<bool>,
    ) -> Result<Self> {
        let n = items.len();
        if n == 0 {
            return Err(Error::Structural("graph without nodes".into()));
        }
        if core_mask.len() != n {
            return Err(Error::shape("graph_view", &[n], &[core_mask.len()]));
        }
        let mut sorted = edges.to_vec();
        sorted.sort_by_key(|&(s, d, _)| (d, s));
        sorted.dedup_by_key(|e| (e.0, e.1));
        if sorted.len() != edges.len() {
            return Err(Error::Structural("duplicate edge".into()));
        }
        let mut view = GraphBatchView {
            items,
            core_mask,
            graph_of_node: vec![0; n],
            num_graphs: 1,
            edge_src: Vec::with_capacity(sorted.len()),
            edge_dst: Vec::with_capacity(sorted.len()),
            edge_weight: Vec::with_capacity(sorted.len()),
            in_groups: vec![Vec::new(); n],
        };
        for (k, &(s, d, w)) in sorted.iter().enumerate() {
            if s >= n || d >= n {
                return Err(Error::Structural(format!(
                    "edge ({s}, {d}) outside {n} nodes"
                )));
            }
            if !w.is_finite() {
                return Err(Error::Structural(format!("edge ({s}, {d}) has weight {w}")));
            }
            view.edge_src.push(s);
            view.edge_dst.push(d);
            view.edge_weight.push(w);
            view.in_groups[d].push(k);
        }
        if let Some(i) = view.in_groups.iter().position(Vec::is_empty) {
            return Err(Error::Structural(format!("node {i} has no in-neighbours")));
        }
        Ok(view)
    }

    pub fn from_bcs(graph: &BcsGraph) -> Result<Self> {
        let edges: Vec<(usize, usize, f64)> = graph
            .edges
            .iter()
            .map(|&(s, d, w)| (s, d, w as f64))
            .collect();
        Self::new(graph.nodes.clone(), &edges, graph.core_mask.clone())
    }

    /// Session graph view; every node is core.
    pub fn from_session_graph(graph: &SessionGraph) -> Result<Self> {
        let pos = |item: ItemIndex| graph.nodes.iter().position(|&v| v == item).unwrap();
        let edges: Vec<(usize, usize, f64)> = graph
            .edges
            .iter()
            .map(|(&(s, d), &w)| (pos(s), pos(d), w as f64))
            .collect();
        Self::new(graph.nodes.clone(), &edges, vec![true; graph.nodes.len()])
    }

    /// Disjoint union. Graph `g` of the result is the `g`-th graph across the
    /// inputs in order.
    pub fn batch(views: &[GraphBatchView]) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Structural("empty batch".into()));
        }
        let mut out = GraphBatchView {
            items: Vec::new(),
            core_mask: Vec::new(),
            graph_of_node: Vec::new(),
            num_graphs: 0,
            edge_src: Vec::new(),
            edge_dst: Vec::new(),
            edge_weight: Vec::new(),
            in_groups: Vec::new(),
        };
        for v in views {
            let (node_off, edge_off) = (out.items.len(), out.edge_src.len());
            out.items.extend(&v.items);
            out.core_mask.extend(&v.core_mask);
            out.graph_of_node
                .extend(v.graph_of_node.iter().map(|g| g + out.num_graphs));
            out.edge_src.extend(v.edge_src.iter().map(|s| s + node_off));
            out.edge_dst.extend(v.edge_dst.iter().map(|d| d + node_off));
            out.edge_weight.extend(&v.edge_weight);
            out.in_groups.extend(
                v.in_groups
                    .iter()
                    .map(|g| g.iter().map(|e| e + edge_off).collect::<Vec<_>>()),
            );
            out.num_graphs += v.num_graphs;
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_graphs(&self) -> usize {
        self.num_graphs
    }

    pub fn num_edges(&self) -> usize {
        self.edge_src.len()
    }

    pub fn items(&self) -> &[ItemIndex] {
        &self.items
    }

    pub fn core_mask(&self) -> &[bool] {
        &self.core_mask
    }

    pub fn graph_of_node(&self) -> &[usize] {
        &self.graph_of_node
    }

    pub fn edge_src(&self) -> &[usize] {
        &self.edge_src
    }

    pub fn edge_dst(&self) -> &[usize] {
        &self.edge_dst
    }

    pub fn edge_weight(&self) -> &[f64] {
        &self.edge_weight
    }

    /// Edge ids entering each node, in source order.
    pub fn in_groups(&self) -> &[Vec<usize>] {
        &self.in_groups
    }

    /// `(source, weight)` pairs of `N(i)`.
    pub fn in_neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.in_groups[i]
            .iter()
            .map(move |&e| (self.edge_src[e], self.edge_weight[e]))
    }

    /// Per graph, the node positions a readout may attend to.
    pub fn readout_groups(&self, core_only: bool) -> Result<Vec<Vec<usize>>> {
        let mut groups = vec![Vec::new(); self.num_graphs];
        for (i, &g) in self.graph_of_node.iter().enumerate() {
            if !core_only || self.core_mask[i] {
                groups[g].push(i);
            }
        }
        if let Some(g) = groups.iter().position(Vec::is_empty) {
            return Err(Error::Contract(format!(
                "graph {g} has no eligible readout nodes"
            )));
        }
        Ok(groups)
    }
}
