//! Directed communication graphs over agents.
//!
//! An edge `(j, i)` means that `j`'s features flow into `i`, so the
//! neighborhood `N(i)` is the set of sources of edges ending at `i`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::DenseMatrix;

pub type Edge = (usize, usize);

#[derive(Clone, Debug, PartialEq)]
pub struct CommGraph {
    n: usize,
    edges: BTreeSet<Edge>,
    edge_weights: Option<BTreeMap<Edge, f64>>,
    edge_features: Option<BTreeMap<Edge, Vec<f64>>>,
    node_features: DenseMatrix,
    self_loops: bool,
}

impl CommGraph {
    /// Builds a graph on `n` nodes. With `self_loops`, `(i, i)` is added for
    /// every node; without it, explicit self-edges are rejected.
    pub fn new(n: usize, edges: impl IntoIterator<Item = Edge>, self_loops: bool) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (j, i) in edges {
            check_node(j, n)?;
            check_node(i, n)?;
            if j == i && !self_loops {
                return Err(Error::contract(format!(
                    "self-edge ({i}, {i}) on a graph built without self-loops"
                )));
            }
            set.insert((j, i));
        }
        if self_loops {
            set.extend((0..n).map(|i| (i, i)));
        }
        Ok(Self {
            n,
            edges: set,
            edge_weights: None,
            edge_features: None,
            node_features: DenseMatrix::zeros(n, 0),
            self_loops,
        })
    }

    pub fn empty(n: usize, self_loops: bool) -> Self {
        Self::new(n, [], self_loops).expect("empty edge set is always valid")
    }

    pub fn complete(n: usize, self_loops: bool) -> Self {
        let edges = (0..n).flat_map(|j| (0..n).filter(move |&i| i != j).map(move |i| (j, i)));
        Self::new(n, edges, self_loops).expect("complete edge set is valid")
    }

    /// Attaches one weight per edge.
    pub fn with_weights(mut self, weights: BTreeMap<Edge, f64>) -> Result<Self> {
        if weights.len() != self.edges.len() || !weights.keys().all(|e| self.edges.contains(e)) {
            return Err(Error::contract("edge weights must have exactly one entry per edge"));
        }
        if weights.values().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("edge weight".into()));
        }
        self.edge_weights = Some(weights);
        Ok(self)
    }

    /// Attaches one feature vector per edge; all vectors share a length.
    pub fn with_edge_features(mut self, features: BTreeMap<Edge, Vec<f64>>) -> Result<Self> {
        if features.len() != self.edges.len() || !features.keys().all(|e| self.edges.contains(e)) {
            return Err(Error::contract("edge features must have exactly one entry per edge"));
        }
        let mut dims = features.values().map(Vec::len);
        if let Some(d) = dims.next() {
            if dims.any(|x| x != d) {
                return Err(Error::contract("edge feature vectors differ in length"));
            }
        }
        self.edge_features = Some(features);
        Ok(self)
    }

    pub fn with_node_features(mut self, x: DenseMatrix) -> Result<Self> {
        if x.rows() != self.n {
            return Err(Error::Dimension {
                op: "node_features",
                lhs: (self.n, x.cols()),
                rhs: x.shape(),
            });
        }
        self.node_features = x;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn has_self_loops(&self) -> bool {
        self.self_loops
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.edges.iter().copied()
    }

    pub fn contains_edge(&self, j: usize, i: usize) -> bool {
        self.edges.contains(&(j, i))
    }

    pub fn edge_weights(&self) -> Option<&BTreeMap<Edge, f64>> {
        self.edge_weights.as_ref()
    }

    pub fn edge_features(&self) -> Option<&BTreeMap<Edge, Vec<f64>>> {
        self.edge_features.as_ref()
    }

    /// Length of each edge feature vector, or 0 without edge features.
    pub fn edge_feature_dim(&self) -> usize {
        self.edge_features
            .as_ref()
            .and_then(|f| f.values().next().map(Vec::len))
            .unwrap_or(0)
    }

    pub fn node_features(&self) -> &DenseMatrix {
        &self.node_features
    }

    /// Weight of edge `(j, i)`; unweighted graphs report 1.
    pub fn weight(&self, j: usize, i: usize) -> f64 {
        self.edge_weights
            .as_ref()
            .and_then(|w| w.get(&(j, i)).copied())
            .unwrap_or(1.0)
    }

    pub fn neighbors(&self, i: usize) -> Result<Vec<usize>> {
        check_node(i, self.n)?;
        Ok(self.in_neighbors(i).collect())
    }

    fn in_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        // Edges are sorted by source first, so a filtered scan is needed.
        self.edges.iter().filter(move |e| e.1 == i).map(|e| e.0)
    }

    pub fn degree(&self, i: usize) -> Result<usize> {
        check_node(i, self.n)?;
        Ok(self.in_neighbors(i).count())
    }

    /// In-degrees of all nodes.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(_, i) in &self.edges {
            deg[i] += 1;
        }
        deg
    }

    /// Neighborhood lists for every node, in ascending source order.
    pub fn neighborhoods(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.n];
        for &(j, i) in &self.edges {
            nb[i].push(j);
        }
        nb
    }

    /// Fewest edges on a directed path `src -> dst`, or `None` if unreachable.
    pub fn hop_distance(&self, src: usize, dst: usize) -> Result<Option<usize>> {
        check_node(src, self.n)?;
        check_node(dst, self.n)?;
        Ok(self.hop_distances_from(src)[dst])
    }

    /// BFS distances from `src` along edge direction.
    pub fn hop_distances_from(&self, src: usize) -> Vec<Option<usize>> {
        let mut out = vec![Vec::new(); self.n];
        for &(j, i) in &self.edges {
            out[j].push(i);
        }
        let mut dist = vec![None; self.n];
        if src >= self.n {
            return dist;
        }
        dist[src] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for &v in &out[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Subgraph on `keep`, reindexed in ascending id order. The returned
    /// remap lists, for every new id, the original id.
    pub fn induced_subgraph(&self, keep: &BTreeSet<usize>) -> Result<(CommGraph, Vec<usize>)> {
        for &k in keep {
            check_node(k, self.n)?;
        }
        let remap: Vec<usize> = keep.iter().copied().collect();
        let mut new_id = vec![usize::MAX; self.n];
        for (new, &old) in remap.iter().enumerate() {
            new_id[old] = new;
        }
        let kept: Vec<(Edge, Edge)> = self
            .edges
            .iter()
            .filter(|(j, i)| keep.contains(j) && keep.contains(i))
            .map(|&(j, i)| ((j, i), (new_id[j], new_id[i])))
            .collect();
        let mut g = CommGraph {
            n: remap.len(),
            edges: kept.iter().map(|(_, e)| *e).collect(),
            edge_weights: None,
            edge_features: None,
            node_features: self.node_features.select_rows(&remap)?,
            self_loops: self.self_loops,
        };
        if let Some(w) = &self.edge_weights {
            g.edge_weights = Some(kept.iter().map(|(old, new)| (*new, w[old])).collect());
        }
        if let Some(f) = &self.edge_features {
            g.edge_features = Some(kept.iter().map(|(old, new)| (*new, f[old].clone())).collect());
        }
        Ok((g, remap))
    }

    /// Relabels nodes: old node `k` becomes `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<CommGraph> {
        if perm.len() != self.n || perm.iter().collect::<BTreeSet<_>>().len() != self.n {
            return Err(Error::contract("permutation must be a bijection on the node set"));
        }
        check_all(perm, self.n)?;
        let mut inverse = vec![0; self.n];
        for (old, &new) in perm.iter().enumerate() {
            inverse[new] = old;
        }
        let map_edge = |(j, i): Edge| (perm[j], perm[i]);
        Ok(CommGraph {
            n: self.n,
            edges: self.edges.iter().map(|e| map_edge(*e)).collect(),
            edge_weights: self
                .edge_weights
                .as_ref()
                .map(|w| w.iter().map(|(e, v)| (map_edge(*e), *v)).collect()),
            edge_features: self
                .edge_features
                .as_ref()
                .map(|f| f.iter().map(|(e, v)| (map_edge(*e), v.clone())).collect()),
            node_features: self.node_features.select_rows(&inverse)?,
            self_loops: self.self_loops,
        })
    }

    /// `A[j][i] = 1` iff `(j, i)` is an edge.
    pub fn adjacency(&self) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(self.n, self.n);
        for &(j, i) in &self.edges {
            a.set(j, i, 1.0);
        }
        a
    }

    /// True when every edge has its reverse, with equal weight if weighted.
    pub fn is_symmetric(&self) -> bool {
        self.edges.iter().all(|&(j, i)| {
            self.edges.contains(&(i, j)) && (self.weight(j, i) - self.weight(i, j)).abs() == 0.0
        })
    }

    /// Parses the plain-text fixture format: a node count on the first
    /// non-comment line, then `j i [weight]` per edge. `#` starts a comment.
    /// A `self_loops` line toggles the self-loop flag.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let parse_err = |line: usize, detail: &str| Error::Parse {
            what: "edge list",
            detail: format!("line {line}: {detail}"),
        };
        let mut n = None;
        let mut self_loops = false;
        let mut edges = Vec::new();
        let mut weights = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if n.is_none() {
                let count = fields[0]
                    .parse::<usize>()
                    .map_err(|_| parse_err(lineno + 1, "expected node count"))?;
                n = Some(count);
                continue;
            }
            if fields == ["self_loops"] {
                self_loops = true;
                continue;
            }
            if !(2..=3).contains(&fields.len()) {
                return Err(parse_err(lineno + 1, "expected `j i [weight]`"));
            }
            let j = fields[0].parse::<usize>().map_err(|_| parse_err(lineno + 1, "bad source"))?;
            let i = fields[1].parse::<usize>().map_err(|_| parse_err(lineno + 1, "bad target"))?;
            if let Some(w) = fields.get(2) {
                let w = w.parse::<f64>().map_err(|_| parse_err(lineno + 1, "bad weight"))?;
                weights.insert((j, i), w);
            }
            edges.push((j, i));
        }
        let n = n.ok_or_else(|| parse_err(0, "missing node count"))?;
        let g = CommGraph::new(n, edges, self_loops)?;
        if weights.is_empty() {
            return Ok(g);
        }
        let mut full = BTreeMap::new();
        for e in g.edges() {
            let w = match weights.get(&e) {
                Some(w) => *w,
                None if e.0 == e.1 => 1.0,
                None => return Err(parse_err(0, "either every edge or none carries a weight")),
            };
            full.insert(e, w);
        }
        g.with_weights(full)
    }

    pub fn load_edge_list(path: &Path) -> Result<Self> {
        Self::parse_edge_list(&std::fs::read_to_string(path)?)
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{}\n", self.n);
        if self.self_loops {
            out.push_str("self_loops\n");
        }
        for &(j, i) in &self.edges {
            if j == i && self.self_loops {
                continue;
            }
            match &self.edge_weights {
                Some(w) => writeln!(out, "{j} {i} {}", w[&(j, i)]),
                None => writeln!(out, "{j} {i}"),
            }
            .expect("writing to a String cannot fail");
        }
        out
    }
}

fn check_node(i: usize, n: usize) -> Result<()> {
    if i >= n {
        return Err(Error::Index {
            what: "graph nodes",
            index: i,
            len: n,
        });
    }
    Ok(())
}

fn check_all(ids: &[usize], n: usize) -> Result<()> {
    ids.iter().try_for_each(|&i| check_node(i, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FIG1: &str = include_str!("../../../fixtures/fig1.edges");

    fn fig1() -> CommGraph {
        CommGraph::parse_edge_list(FIG1).unwrap()
    }

    #[test]
    fn fig1_neighbors_and_degree() {
        let g = fig1();
        assert_eq!(g.neighbors(1).unwrap(), vec![2, 3, 4]);
        assert_eq!(g.degree(1).unwrap(), 3);
        assert_eq!(g.hop_distance(5, 1).unwrap(), Some(2));
    }

    #[test]
    fn self_loops_join_the_neighborhood() {
        let plain = fig1();
        let looped = CommGraph::new(plain.n(), plain.edges(), true).unwrap();
        assert_eq!(looped.neighbors(1).unwrap(), vec![1, 2, 3, 4]);
        assert!(CommGraph::new(2, [(0, 0)], false).is_err());
    }

    #[test]
    fn empty_and_isolated() {
        let g = CommGraph::empty(3, false);
        assert!(g.neighbors(0).unwrap().is_empty());
        assert_eq!(g.degree(2).unwrap(), 0);
        let looped = CommGraph::empty(3, true);
        assert_eq!(looped.degree(2).unwrap(), 1);
        assert!(matches!(g.neighbors(3), Err(Error::Index { .. })));
    }

    #[test]
    fn hop_distance_cases() {
        let g = fig1();
        assert_eq!(g.hop_distance(3, 3).unwrap(), Some(0));
        assert_eq!(g.hop_distance(1, 5).unwrap(), None);
        assert!(g.hop_distance(0, 9).is_err());
    }

    #[test]
    fn induced_subgraph_cases() {
        let g = fig1();
        let all: BTreeSet<usize> = (0..g.n()).collect();
        let (copy, remap) = g.induced_subgraph(&all).unwrap();
        assert_eq!(remap, (0..g.n()).collect::<Vec<_>>());
        assert_eq!(copy.adjacency(), g.adjacency());

        let (sub, remap) = g.induced_subgraph(&BTreeSet::from([1, 2])).unwrap();
        assert_eq!(remap, vec![1, 2]);
        assert_eq!(sub.edges().collect::<Vec<_>>(), vec![(1, 0)]);

        let (none, remap) = g.induced_subgraph(&BTreeSet::new()).unwrap();
        assert_eq!(none.n(), 0);
        assert!(remap.is_empty());

        assert!(g.induced_subgraph(&BTreeSet::from([42])).is_err());
    }

    #[test]
    fn weights_and_features_are_carried_over() {
        let g = CommGraph::new(3, [(0, 1), (1, 2), (2, 0)], false)
            .unwrap()
            .with_weights(BTreeMap::from([((0, 1), 0.5), ((1, 2), 2.0), ((2, 0), 3.0)]))
            .unwrap()
            .with_edge_features(BTreeMap::from([
                ((0, 1), vec![1.0]),
                ((1, 2), vec![2.0]),
                ((2, 0), vec![3.0]),
            ]))
            .unwrap();
        let (sub, _) = g.induced_subgraph(&BTreeSet::from([1, 2])).unwrap();
        assert_eq!(sub.weight(0, 1), 2.0);
        assert_eq!(sub.edge_features().unwrap()[&(0, 1)], vec![2.0]);
        assert!(CommGraph::new(2, [(0, 1)], false)
            .unwrap()
            .with_weights(BTreeMap::new())
            .is_err());
    }

    #[test]
    fn edge_list_round_trip() {
        let g = CommGraph::new(4, [(0, 1), (2, 1), (3, 0)], true).unwrap();
        let back = CommGraph::parse_edge_list(&g.to_edge_list()).unwrap();
        assert_eq!(back, g);
        assert!(CommGraph::parse_edge_list("3\n0 1 x\n").is_err());
        assert!(CommGraph::parse_edge_list("").is_err());
    }

    fn arb_graph() -> impl Strategy<Value = CommGraph> {
        (1usize..9).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), 0..3 * n).prop_map(move |pairs| {
                CommGraph::new(n, pairs.into_iter().filter(|(a, b)| a != b), false).unwrap()
            })
        })
    }

    fn arb_graph_and_perm() -> impl Strategy<Value = (CommGraph, Vec<usize>)> {
        arb_graph().prop_flat_map(|g| {
            let n = g.n();
            (Just(g), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
        })
    }

    proptest! {
        #[test]
        fn queries_commute_with_permutation((g, perm) in arb_graph_and_perm()) {
            let pg = g.permuted(&perm).unwrap();
            for i in 0..g.n() {
                let mut expected: Vec<usize> = g.neighbors(i).unwrap().iter().map(|&j| perm[j]).collect();
                expected.sort();
                prop_assert_eq!(pg.neighbors(perm[i]).unwrap(), expected);
                prop_assert_eq!(pg.degree(perm[i]).unwrap(), g.degree(i).unwrap());
                for j in 0..g.n() {
                    prop_assert_eq!(pg.hop_distance(perm[j], perm[i]).unwrap(), g.hop_distance(j, i).unwrap());
                }
            }
        }

        #[test]
        fn hop_distance_triangle_inequality(g in arb_graph()) {
            let n = g.n();
            let d: Vec<Vec<Option<usize>>> = (0..n).map(|s| g.hop_distances_from(s)).collect();
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        if let (Some(ab), Some(bc)) = (d[a][b], d[b][c]) {
                            let ac = d[a][c];
                            prop_assert!(ac.is_some_and(|ac| ac <= ab + bc));
                        }
                    }
                }
            }
        }

        #[test]
        fn full_induced_subgraph_preserves_adjacency(g in arb_graph()) {
            let keep: BTreeSet<usize> = (0..g.n()).collect();
            let (sub, remap) = g.induced_subgraph(&keep).unwrap();
            prop_assert_eq!(remap, (0..g.n()).collect::<Vec<_>>());
            prop_assert_eq!(sub.adjacency(), g.adjacency());
        }
    }
}
