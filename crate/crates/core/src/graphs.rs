//! Weighted directed item graphs: per-session graphs, the global graph over
//! all training sessions, and BCS-n subgraphs sampled from it.
//!
//! Edge weights count how often "u then v" occurs consecutively. Every node
//! carries a self-loop so attention neighbourhoods are never empty.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ItemIndex, Session};
use crate::rng;

/// Default number of neighbours drawn per node and hop.
pub const DEFAULT_SAMPLE_CAP: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionGraph {
    /// Distinct items in order of first appearance.
    pub nodes: Vec<ItemIndex>,
    pub edges: BTreeMap<(ItemIndex, ItemIndex), u64>,
}

fn consecutive_counts(items: &[ItemIndex]) -> BTreeMap<(ItemIndex, ItemIndex), u64> {
    let mut edges = BTreeMap::new();
    for pair in items.windows(2) {
        *edges.entry((pair[0], pair[1])).or_insert(0) += 1;
    }
    edges
}

fn distinct_in_order(items: &[ItemIndex]) -> Vec<ItemIndex> {
    let mut seen = std::collections::HashSet::new();
    items.iter().copied().filter(|i| seen.insert(*i)).collect()
}

pub fn build_session_graph(items: &[ItemIndex]) -> Result<SessionGraph> {
    if items.is_empty() {
        return Err(Error::Precondition(
            "session graph of an empty session".into(),
        ));
    }
    let nodes = distinct_in_order(items);
    let mut edges = consecutive_counts(items);
    for &n in &nodes {
        edges.entry((n, n)).or_insert(1);
    }
    Ok(SessionGraph { nodes, edges })
}

/// Union of all training session graphs with summed edge weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalGraph {
    present: Vec<bool>,
    out_adj: Vec<Vec<(ItemIndex, u64)>>,
    in_adj: Vec<Vec<(ItemIndex, u64)>>,
}

#[derive(Serialize, Deserialize)]
struct GlobalGraphFile {
    node_count: usize,
    edges: Vec<(ItemIndex, ItemIndex, u64)>,
}

impl GlobalGraph {
    /// Self-loop weight is the summed count of explicit repeats, at least 1.
    pub fn build(sessions: &[Session]) -> Self {
        let size = sessions
            .iter()
            .flat_map(|s| s.items.iter())
            .max()
            .map_or(0, |&m| m + 1);
        let mut edges: BTreeMap<(ItemIndex, ItemIndex), u64> = BTreeMap::new();
        let mut present = vec![false; size];
        for s in sessions {
            for &i in &s.items {
                present[i] = true;
            }
            for (k, w) in consecutive_counts(&s.items) {
                *edges.entry(k).or_insert(0) += w;
            }
        }
        for (i, _) in present.iter().enumerate().filter(|(_, p)| **p) {
            edges.entry((i, i)).or_insert(1);
        }
        Self::from_edges(size, edges.into_iter().map(|((s, d), w)| (s, d, w)))
    }

    fn from_edges(
        size: usize,
        edges: impl IntoIterator<Item = (ItemIndex, ItemIndex, u64)>,
    ) -> Self {
        let mut present = vec![false; size];
        let mut out_adj = vec![Vec::new(); size];
        let mut in_adj = vec![Vec::new(); size];
        for (s, d, w) in edges {
            present[s] = true;
            present[d] = true;
            out_adj[s].push((d, w));
            in_adj[d].push((s, w));
        }
        for adj in out_adj.iter_mut().chain(in_adj.iter_mut()) {
            adj.sort_unstable();
        }
        GlobalGraph {
            present,
            out_adj,
            in_adj,
        }
    }

    pub fn contains(&self, item: ItemIndex) -> bool {
        self.present.get(item).copied().unwrap_or(false)
    }

    /// Size of the item id space (one past the largest id).
    pub fn id_space(&self) -> usize {
        self.present.len()
    }

    pub fn node_count(&self) -> usize {
        self.present.iter().filter(|p| **p).count()
    }

    pub fn edge_count(&self) -> usize {
        self.out_adj.iter().map(Vec::len).sum()
    }

    pub fn weight(&self, src: ItemIndex, dst: ItemIndex) -> Option<u64> {
        let adj = self.out_adj.get(src)?;
        adj.binary_search_by_key(&dst, |&(d, _)| d)
            .ok()
            .map(|k| adj[k].1)
    }

    pub fn out_neighbors(&self, item: ItemIndex) -> &[(ItemIndex, u64)] {
        self.out_adj.get(item).map_or(&[], Vec::as_slice)
    }

    pub fn in_neighbors(&self, item: ItemIndex) -> &[(ItemIndex, u64)] {
        self.in_adj.get(item).map_or(&[], Vec::as_slice)
    }

    /// Edges as (src, dst, weight), sorted by (src, dst).
    pub fn edges(&self) -> impl Iterator<Item = (ItemIndex, ItemIndex, u64)> + '_ {
        self.out_adj
            .iter()
            .enumerate()
            .flat_map(|(s, adj)| adj.iter().map(move |&(d, w)| (s, d, w)))
    }

    /// Expansion candidates: in- and out-neighbours other than the node
    /// itself, with the weights of both directions summed, ordered by item.
    pub fn undirected_neighbors(&self, item: ItemIndex) -> Vec<(ItemIndex, u64)> {
        let mut merged: BTreeMap<ItemIndex, u64> = BTreeMap::new();
        for &(n, w) in self
            .out_neighbors(item)
            .iter()
            .chain(self.in_neighbors(item))
        {
            if n != item {
                *merged.entry(n).or_insert(0) += w;
            }
        }
        merged.into_iter().collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = GlobalGraphFile {
            node_count: self.id_space(),
            edges: self.edges().collect(),
        };
        Ok(serde_json::to_string(&file)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GlobalGraphFile = serde_json::from_str(text)?;
        if let Some(&(s, d, _)) = file
            .edges
            .iter()
            .find(|&&(s, d, _)| s >= file.node_count || d >= file.node_count)
        {
            return Err(Error::Format(format!(
                "edge ({s}, {d}) outside node count {}",
                file.node_count
            )));
        }
        Ok(Self::from_edges(file.node_count, file.edges))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

pub fn build_global_graph(sessions: &[Session]) -> GlobalGraph {
    GlobalGraph::build(sessions)
}

/// A session's own nodes plus sampled neighbours up to `hop` hops away, with
/// every global-graph edge among them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BcsGraph {
    /// Items of the session, in order of first appearance.
    pub core: Vec<ItemIndex>,
    /// Core items first, then sampled items in order of inclusion.
    pub nodes: Vec<ItemIndex>,
    /// (src, dst, weight) over positions in `nodes`, sorted by (src, dst).
    pub edges: Vec<(usize, usize, u64)>,
    pub hop: usize,
    pub core_mask: Vec<bool>,
}

/// Draws up to `k` distinct indices, each draw proportional to the weights of
/// the indices not drawn yet. Returns every index in order when `k` covers all.
pub fn weighted_sample_without_replacement<R: Rng>(
    weights: &[f64],
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    if weights.len() <= k {
        return (0..weights.len()).collect();
    }
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut total: f64 = weights.iter().sum();
    let mut picked = Vec::with_capacity(k);
    while picked.len() < k && !remaining.is_empty() {
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pos = remaining.len() - 1;
        for (p, &i) in remaining.iter().enumerate() {
            acc += weights[i];
            if target < acc {
                pos = p;
                break;
            }
        }
        let chosen = remaining.remove(pos);
        total -= weights[chosen];
        picked.push(chosen);
    }
    picked
}

/// Samples the BCS-`n_hops` graph of a session. Each (node, hop) pair draws
/// from its own random stream, so graphs at increasing hop counts under one
/// seed are nested.
pub fn sample_bcs(
    global: &GlobalGraph,
    session: &[ItemIndex],
    n_hops: usize,
    sample_cap: usize,
    seed: u64,
) -> Result<BcsGraph> {
    if sample_cap == 0 {
        return Err(Error::Precondition("sample cap must be at least 1".into()));
    }
    if session.is_empty() {
        return Err(Error::Precondition("BCS graph of an empty session".into()));
    }
    let core = distinct_in_order(session);
    if let Some(&missing) = core.iter().find(|&&i| !global.contains(i)) {
        return Err(Error::MissingNode(missing));
    }
    let mut nodes = core.clone();
    let mut position: HashMap<ItemIndex, usize> =
        nodes.iter().enumerate().map(|(p, &i)| (i, p)).collect();

    let mut frontier = core.clone();
    for hop in 1..=n_hops {
        let mut next = Vec::new();
        for &u in &frontier {
            let cands = global.undirected_neighbors(u);
            let weights: Vec<f64> = cands.iter().map(|&(_, w)| w as f64).collect();
            let mut stream = rng::stream(seed, &[u as u64, hop as u64]);
            for k in weighted_sample_without_replacement(&weights, sample_cap, &mut stream) {
                let v = cands[k].0;
                if let Entry::Vacant(e) = position.entry(v) {
                    e.insert(nodes.len());
                    nodes.push(v);
                    next.push(v);
                }
            }
        }
        frontier = next;
    }

    let mut edges = Vec::new();
    for (ps, &s) in nodes.iter().enumerate() {
        for &(d, w) in global.out_neighbors(s) {
            if let Some(&pd) = position.get(&d) {
                edges.push((ps, pd, w));
            }
        }
    }
    edges.sort_unstable();

    let core_mask = (0..nodes.len()).map(|p| p < core.len()).collect();
    Ok(BcsGraph {
        core,
        nodes,
        edges,
        hop: n_hops,
        core_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn sess(items: &[usize]) -> Session {
        Session::new(items.to_vec(), 0.0)
    }

    #[test]
    fn session_graph_with_revisit() {
        // a b c b d
        let g = build_session_graph(&[0, 1, 2, 1, 3]).unwrap();
        let expected: BTreeMap<_, _> = [
            ((0, 1), 1),
            ((1, 2), 1),
            ((2, 1), 1),
            ((1, 3), 1),
            ((0, 0), 1),
            ((1, 1), 1),
            ((2, 2), 1),
            ((3, 3), 1),
        ]
        .into_iter()
        .collect();
        assert_eq!(g.edges, expected);
        assert_eq!(g.nodes, vec![0, 1, 2, 3]);
    }

    #[test]
    fn session_graph_repeated_pair() {
        let g = build_session_graph(&[0, 1, 0, 1]).unwrap();
        assert_eq!(g.edges[&(0, 1)], 2);
        assert_eq!(g.edges[&(1, 0)], 1);
        assert_eq!(g.edges[&(0, 0)], 1);
        assert_eq!(g.edges[&(1, 1)], 1);
    }

    #[test]
    fn session_graph_single_item() {
        let g = build_session_graph(&[7]).unwrap();
        assert_eq!(g.nodes, vec![7]);
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[&(7, 7)], 1);
    }

    #[test]
    fn explicit_repeat_sets_self_loop() {
        let g = build_session_graph(&[4, 4, 4]).unwrap();
        assert_eq!(g.edges[&(4, 4)], 2);
    }

    #[test]
    fn global_graph_adds_weights() {
        let g = build_global_graph(&[sess(&[0, 1]), sess(&[0, 1])]);
        assert_eq!(g.weight(0, 1), Some(2));
        assert_eq!(g.weight(0, 0), Some(1));
    }

    #[test]
    fn global_graph_disjoint_components() {
        let g = build_global_graph(&[sess(&[0, 1]), sess(&[2, 3])]);
        for (s, d, _) in g.edges() {
            assert_eq!(s < 2, d < 2);
        }
        assert_eq!(g.node_count(), 4);
    }

    #[test]
    fn global_graph_hand_trace() {
        // [a b c], [b c d]
        let g = build_global_graph(&[sess(&[0, 1, 2]), sess(&[1, 2, 3])]);
        assert_eq!(g.weight(1, 2), Some(2));
        assert_eq!(g.weight(0, 1), Some(1));
        assert_eq!(g.weight(2, 3), Some(1));
        assert_eq!(g.edge_count(), 3 + 4);
    }

    #[test]
    fn global_graph_json_round_trip() {
        let g = build_global_graph(&[sess(&[0, 1, 2, 2]), sess(&[3, 1])]);
        let text = g.to_json().unwrap();
        assert!(text.starts_with("{\"node_count\":4,\"edges\":[[0,0,1],[0,1,1]"));
        assert_eq!(GlobalGraph::from_json(&text).unwrap(), g);
    }

    #[test]
    fn hop_zero_keeps_global_weights() {
        let g = build_global_graph(&[sess(&[0, 1, 2]), sess(&[0, 1]), sess(&[2, 3])]);
        let bcs = sample_bcs(&g, &[0, 1, 0], 0, 5, 1).unwrap();
        assert_eq!(bcs.nodes, vec![0, 1]);
        assert_eq!(bcs.core_mask, vec![true, true]);
        // 0->1 carries weight 2 from two sessions
        assert_eq!(bcs.edges, vec![(0, 0, 1), (0, 1, 2), (1, 1, 1)]);
    }

    #[test]
    fn small_neighbourhood_is_taken_whole() {
        let g = build_global_graph(&[sess(&[0, 1]), sess(&[2, 0])]);
        let bcs = sample_bcs(&g, &[0], 1, 5, 99).unwrap();
        assert_eq!(bcs.nodes, vec![0, 1, 2]);
        assert_eq!(bcs.core_mask, vec![true, false, false]);
    }

    #[test]
    fn unknown_item_is_an_error() {
        let g = build_global_graph(&[sess(&[0, 1])]);
        assert!(matches!(
            sample_bcs(&g, &[0, 5], 1, 5, 0),
            Err(Error::MissingNode(5))
        ));
    }

    #[test]
    fn weighted_draw_frequency() {
        // u=0 -> x=1 (weight 3), u -> y=2 (weight 1)
        let mut sessions = vec![sess(&[0, 1]); 3];
        sessions.push(sess(&[0, 2]));
        let g = build_global_graph(&sessions);
        let draws = 10_000;
        let hits = (0..draws)
            .filter(|&seed| {
                let bcs = sample_bcs(&g, &[0], 1, 1, seed).unwrap();
                bcs.nodes[1] == 1
            })
            .count();
        let freq = hits as f64 / draws as f64;
        assert!((freq - 0.75).abs() < 0.02, "{freq}");
    }

    #[test]
    fn sampler_without_replacement_never_repeats() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let picks = weighted_sample_without_replacement(&[1.0, 5.0, 0.5, 2.0, 2.0, 9.0], 4, &mut r);
        let mut sorted = picks.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
    }

    fn arb_sessions() -> impl Strategy<Value = Vec<Vec<usize>>> {
        prop::collection::vec(prop::collection::vec(0usize..30, 1..7), 1..25)
    }

    proptest! {
        #[test]
        fn single_session_global_equals_session_graph(items in prop::collection::vec(0usize..10, 1..12)) {
            let sg = build_session_graph(&items).unwrap();
            let g = build_global_graph(&[sess(&items)]);
            let global_edges: BTreeMap<_, _> = g.edges().map(|(s, d, w)| ((s, d), w)).collect();
            prop_assert_eq!(global_edges, sg.edges);
            let mut nodes = sg.nodes.clone();
            nodes.sort_unstable();
            let global_nodes: Vec<usize> = (0..g.id_space()).filter(|&i| g.contains(i)).collect();
            prop_assert_eq!(global_nodes, nodes);
        }

        #[test]
        fn bcs_is_nested_and_deterministic(sessions in arb_sessions(), pick in 0usize..25, seed in 0u64..1000, cap in 1usize..4) {
            let sessions: Vec<Session> = sessions.iter().map(|s| sess(s)).collect();
            let g = build_global_graph(&sessions);
            let s = &sessions[pick % sessions.len()].items;
            let mut prev: Option<BcsGraph> = None;
            for hops in 0..4 {
                let a = sample_bcs(&g, s, hops, cap, seed).unwrap();
                let b = sample_bcs(&g, s, hops, cap, seed).unwrap();
                prop_assert_eq!(&a, &b);
                if hops == 0 {
                    prop_assert_eq!(&a.nodes, &distinct_in_order(s));
                }
                if let Some(p) = prev {
                    prop_assert!(p.nodes.iter().all(|n| a.nodes.contains(n)));
                    prop_assert_eq!(&a.nodes[..p.nodes.len()], &p.nodes[..]);
                }
                for &(ps, pd, w) in &a.edges {
                    prop_assert_eq!(g.weight(a.nodes[ps], a.nodes[pd]), Some(w));
                }
                let core_count = a.core_mask.iter().filter(|m| **m).count();
                prop_assert_eq!(core_count, a.core.len());
                prop_assert!(a.core_mask[..a.core.len()].iter().all(|m| *m));
                prev = Some(a);
            }
        }
    }
}
