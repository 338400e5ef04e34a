//! Undirected graphs, spanning forests and maximal-acyclic-subgraph edge weights.
//!
//! A maximal acyclic subgraph of `G` is a spanning forest: one spanning tree per
//! connected component. A distribution over those forests is only ever consumed
//! through its edge marginals, so it is stored as a [`MasWeights`] vector.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

/// Disjoint-set forest with union by size and path halving.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when `a` and `b` were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Immutable simple undirected graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n_vertices: usize,
    edges: Vec<(usize, usize)>,
    component_id: Vec<usize>,
    n_components: usize,
    // (neighbour, edge index), sorted by neighbour
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl Graph {
    /// Builds a graph from raw pairs. Self-loops are dropped, orientation is
    /// ignored and duplicates are merged; the stored edges are sorted `(u, v)`
    /// pairs with `u < v`.
    pub fn new(n_vertices: usize, raw_edges: &[(usize, usize)]) -> Result<Self> {
        let mut edges = Vec::with_capacity(raw_edges.len());
        for &(a, b) in raw_edges {
            if a >= n_vertices || b >= n_vertices {
                return input(format!(
                    "edge ({a}, {b}) out of range for {n_vertices} vertices"
                ));
            }
            if a != b {
                edges.push((a.min(b), a.max(b)));
            }
        }
        edges.sort_unstable();
        edges.dedup();

        let mut adjacency = vec![Vec::new(); n_vertices];
        let mut uf = UnionFind::new(n_vertices);
        for (idx, &(u, v)) in edges.iter().enumerate() {
            adjacency[u].push((v, idx));
            adjacency[v].push((u, idx));
            uf.union(u, v);
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }

        let mut label = vec![usize::MAX; n_vertices];
        let mut component_id = vec![0; n_vertices];
        let mut n_components = 0;
        for v in 0..n_vertices {
            let root = uf.find(v);
            if label[root] == usize::MAX {
                label[root] = n_components;
                n_components += 1;
            }
            component_id[v] = label[root];
        }

        Ok(Self {
            n_vertices,
            edges,
            component_id,
            n_components,
            adjacency,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn component_id(&self, v: usize) -> usize {
        self.component_id[v]
    }

    pub fn component_ids(&self) -> &[usize] {
        &self.component_id
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    /// Number of edges in every maximal acyclic subgraph.
    pub fn forest_size(&self) -> usize {
        self.n_vertices - self.n_components
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    /// `(neighbour, edge index)` pairs sorted by neighbour.
    pub fn incident(&self, v: usize) -> &[(usize, usize)] {
        &self.adjacency[v]
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[v].iter().map(|&(u, _)| u)
    }

    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        let adj = self.adjacency.get(a)?;
        adj.binary_search_by_key(&b, |&(u, _)| u)
            .ok()
            .map(|pos| adj[pos].1)
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edge_index(a, b).is_some()
    }

    /// Vertex lists of each component, indexed by component id.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_components];
        for (v, &c) in self.component_id.iter().enumerate() {
            out[c].push(v);
        }
        out
    }
}

/// Which extreme spanning forest Kruskal's algorithm should return.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Min,
    Max,
}

impl Sense {
    pub fn opposite(self) -> Self {
        match self {
            Sense::Min => Sense::Max,
            Sense::Max => Sense::Min,
        }
    }
}

impl std::str::FromStr for Sense {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(Sense::Min),
            "max" => Ok(Sense::Max),
            other => input(format!("unknown sense '{other}' (expected min or max)")),
        }
    }
}

impl std::fmt::Display for Sense {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sense::Min => "min",
            Sense::Max => "max",
        })
    }
}

/// A maximal acyclic subgraph: one spanning tree per connected component.
#[derive(Clone, Debug, PartialEq)]
pub struct SpanningForest {
    n_vertices: usize,
    edge_indices: Vec<usize>,
    // (neighbour, graph edge index)
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl SpanningForest {
    /// Validates that `edge_indices` is acyclic and spans every component of `g`.
    pub fn from_edge_indices(g: &Graph, mut edge_indices: Vec<usize>) -> Result<Self> {
        edge_indices.sort_unstable();
        edge_indices.dedup();
        let mut uf = UnionFind::new(g.n_vertices());
        for &e in &edge_indices {
            let Some(&(u, v)) = g.edges().get(e) else {
                return input(format!("edge index {e} out of range"));
            };
            if !uf.union(u, v) {
                return input(format!("edge {e} ({u}, {v}) closes a cycle"));
            }
        }
        if edge_indices.len() != g.forest_size() {
            return input(format!(
                "forest has {} edges, a maximal acyclic subgraph needs {}",
                edge_indices.len(),
                g.forest_size()
            ));
        }
        Ok(Self::from_valid(g, edge_indices))
    }

    fn from_valid(g: &Graph, edge_indices: Vec<usize>) -> Self {
        let mut adjacency = vec![Vec::new(); g.n_vertices()];
        for &e in &edge_indices {
            let (u, v) = g.edges()[e];
            adjacency[u].push((v, e));
            adjacency[v].push((u, e));
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        Self {
            n_vertices: g.n_vertices(),
            edge_indices,
            adjacency,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    /// Sorted indices into the parent graph's edge list.
    pub fn edge_indices(&self) -> &[usize] {
        &self.edge_indices
    }

    pub fn contains(&self, edge: usize) -> bool {
        self.edge_indices.binary_search(&edge).is_ok()
    }

    /// `(neighbour, graph edge index)` pairs in the forest.
    pub fn incident(&self, v: usize) -> &[(usize, usize)] {
        &self.adjacency[v]
    }

    /// Number of edges in which the two forests differ, divided by two.
    pub fn edit_distance(&self, other: &SpanningForest) -> usize {
        let shared = self
            .edge_indices
            .iter()
            .filter(|e| other.contains(**e))
            .count();
        self.edge_indices.len() - shared
    }
}

/// Per-edge appearance probabilities of a distribution over maximal acyclic subgraphs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MasWeights {
    weights: Vec<f64>,
}

impl MasWeights {
    /// Wraps raw weights after checking the spanning-tree-polytope invariants
    /// that are cheap to verify: range and coordinate sum.
    pub fn new(g: &Graph, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != g.n_edges() {
            return input(format!(
                "{} weights for {} edges",
                weights.len(),
                g.n_edges()
            ));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return input(format!("weight {w} outside [0, 1]"));
        }
        let sum: f64 = weights.iter().sum();
        let expected = g.forest_size() as f64;
        if (sum - expected).abs() > 1e-6 * expected.max(1.0) {
            return input(format!("weights sum to {sum}, expected {expected}"));
        }
        Ok(Self { weights })
    }

    /// All-zero weights. Not a point of the polytope; used by the plain VAE objective.
    pub fn zeros(n_edges: usize) -> Self {
        Self {
            weights: vec![0.0; n_edges],
        }
    }

    /// Indicator vector of `forest`.
    pub fn indicator(g: &Graph, forest: &SpanningForest) -> Self {
        let mut weights = vec![0.0; g.n_edges()];
        for &e in forest.edge_indices() {
            weights[e] = 1.0;
        }
        Self { weights }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Returns the forest when every weight is exactly 0 or 1 and the support is
    /// a maximal acyclic subgraph.
    pub fn as_forest(&self, g: &Graph) -> Option<SpanningForest> {
        if self.weights.iter().any(|&w| w != 0.0 && w != 1.0) {
            return None;
        }
        let support = (0..self.weights.len())
            .filter(|&e| self.weights[e] == 1.0)
            .collect();
        SpanningForest::from_edge_indices(g, support).ok()
    }

    /// Sum of absolute coordinate differences.
    pub fn l1_distance(&self, other: &MasWeights) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// Kruskal's algorithm over every component. Ties are broken by ascending edge
/// index; `Sense::Max` negates the costs.
pub fn min_spanning_forest(g: &Graph, edge_costs: &[f64], sense: Sense) -> Result<SpanningForest> {
    if edge_costs.len() != g.n_edges() {
        return input(format!(
            "{} costs for {} edges",
            edge_costs.len(),
            g.n_edges()
        ));
    }
    if edge_costs.iter().any(|c| c.is_nan()) {
        return input("edge cost is NaN");
    }
    let key = |e: usize| match sense {
        Sense::Min => edge_costs[e],
        Sense::Max => -edge_costs[e],
    };
    let mut order: Vec<usize> = (0..g.n_edges()).collect();
    // stable sort keeps index order among equal costs
    order.sort_by(|&a, &b| key(a).total_cmp(&key(b)));

    let mut uf = UnionFind::new(g.n_vertices());
    let mut chosen = Vec::with_capacity(g.forest_size());
    for e in order {
        let (u, v) = g.edges()[e];
        if uf.union(u, v) {
            chosen.push(e);
            if chosen.len() == g.forest_size() {
                break;
            }
        }
    }
    chosen.sort_unstable();
    Ok(SpanningForest::from_valid(g, chosen))
}

/// Fraction of maximal acyclic subgraphs containing each edge, i.e. the
/// effective resistance between the endpoints within their component.
pub fn uniform_mas_weights(g: &Graph) -> MasWeights {
    let mut weights = vec![0.0; g.n_edges()];
    let mut local = vec![usize::MAX; g.n_vertices()];
    for comp in g.components() {
        if comp.len() < 2 {
            continue;
        }
        for (k, &v) in comp.iter().enumerate() {
            local[v] = k;
        }
        let m = comp.len();
        let mut lap = DMatrix::<f64>::zeros(m, m);
        for &v in &comp {
            for &(u, _) in g.incident(v) {
                lap[(local[v], local[u])] -= 1.0;
                lap[(local[v], local[v])] += 1.0;
            }
        }
        let eig = SymmetricEigen::new(lap);
        let scale = eig.eigenvalues.amax().max(1.0);
        let mut pinv = DMatrix::<f64>::zeros(m, m);
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            if lambda > 1e-9 * scale {
                let vec = eig.eigenvectors.column(k);
                pinv += (vec * vec.transpose()) / lambda;
            }
        }
        for &v in &comp {
            for &(u, e) in g.incident(v) {
                if v < u {
                    let (a, b) = (local[v], local[u]);
                    let r = pinv[(a, a)] + pinv[(b, b)] - 2.0 * pinv[(a, b)];
                    weights[e] = r.clamp(0.0, 1.0);
                }
            }
        }
    }
    MasWeights { weights }
}

/// Exhaustive list of every maximal acyclic subgraph of `g`, found by edge
/// inclusion/exclusion with cycle pruning. Fails once more than `cap` forests
/// have been produced.
pub fn enumerate_spanning_forests(g: &Graph, cap: usize) -> Result<Vec<SpanningForest>> {
    struct Search<'a> {
        g: &'a Graph,
        cap: usize,
        chosen: Vec<usize>,
        out: Vec<Vec<usize>>,
    }

    impl Search<'_> {
        fn visit(&mut self, next: usize, uf: &UnionFind) -> Result<()> {
            let needed = self.g.forest_size();
            if self.chosen.len() == needed {
                if self.out.len() == self.cap {
                    return Err(Error::OracleScale(format!(
                        "more than {} spanning forests",
                        self.cap
                    )));
                }
                self.out.push(self.chosen.clone());
                return Ok(());
            }
            if self.chosen.len() + (self.g.n_edges() - next) < needed {
                return Ok(());
            }
            let (u, v) = self.g.edges()[next];
            let mut with = uf.clone();
            if with.union(u, v) {
                self.chosen.push(next);
                self.visit(next + 1, &with)?;
                self.chosen.pop();
            }
            self.visit(next + 1, uf)
        }
    }

    let mut search = Search {
        g,
        cap,
        chosen: Vec::new(),
        out: Vec::new(),
    };
    search.visit(0, &UnionFind::new(g.n_vertices()))?;
    Ok(search
        .out
        .into_iter()
        .map(|edges| SpanningForest::from_valid(g, edges))
        .collect())
}

/// `w' = (1 - alpha) w + alpha 1[e in target]`.
pub fn soft_update(w: &MasWeights, target: &SpanningForest, alpha: f64) -> Result<MasWeights> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return input(format!("alpha {alpha} outside (0, 1]"));
    }
    let mut weights: Vec<f64> = w.weights.iter().map(|x| (1.0 - alpha) * x).collect();
    for &e in target.edge_indices() {
        match weights.get_mut(e) {
            Some(x) => *x += alpha,
            None => return input(format!("forest edge {e} out of range")),
        }
    }
    for x in &mut weights {
        *x = x.clamp(0.0, 1.0);
    }
    Ok(MasWeights { weights })
}

/// Indicator weights of the Kruskal forest under i.i.d. uniform random costs.
pub fn random_mas_init(g: &Graph, seed: u64) -> MasWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let costs: Vec<f64> = (0..g.n_edges()).map(|_| rng.random::<f64>()).collect();
    let forest = min_spanning_forest(g, &costs, Sense::Min).expect("costs aligned with edges");
    MasWeights::indicator(g, &forest)
}

/// The unique forest path from `i` to `j`, or `None` across components.
pub fn path_between(f: &SpanningForest, i: usize, j: usize) -> Option<Vec<usize>> {
    if i >= f.n_vertices || j >= f.n_vertices {
        return None;
    }
    if i == j {
        return Some(vec![i]);
    }
    let mut parent = vec![usize::MAX; f.n_vertices];
    parent[i] = i;
    let mut queue = VecDeque::from([i]);
    while let Some(v) = queue.pop_front() {
        if v == j {
            break;
        }
        for &(u, _) in f.incident(v) {
            if parent[u] == usize::MAX {
                parent[u] = v;
                queue.push_back(u);
            }
        }
    }
    if parent[j] == usize::MAX {
        return None;
    }
    let mut path = vec![j];
    let mut cur = j;
    while cur != i {
        cur = parent[cur];
        path.push(cur);
    }
    path.reverse();
    Some(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Graph {
        Graph::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn build_dedups_and_drops_loops() {
        let g = Graph::new(3, &[(0, 1), (1, 0), (1, 1), (1, 2)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.n_components(), 1);
    }

    #[test]
    fn build_counts_components() {
        let g = Graph::new(4, &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(g.n_components(), 2);
        assert_ne!(g.component_id(0), g.component_id(2));
        assert_eq!(g.component_id(2), g.component_id(3));

        let single = Graph::new(1, &[]).unwrap();
        assert_eq!((single.n_components(), single.n_edges()), (1, 0));
    }

    #[test]
    fn build_rejects_out_of_range() {
        assert!(matches!(Graph::new(2, &[(0, 2)]), Err(Error::Input(_))));
    }

    #[test]
    fn kruskal_unique_minimum() {
        let g = triangle();
        // edges sorted: (0,1), (0,2), (1,2)
        let f = min_spanning_forest(&g, &[1.0, 2.0, 3.0], Sense::Min).unwrap();
        assert_eq!(f.edge_indices(), &[0, 1]);
        let f = min_spanning_forest(&g, &[1.0, 2.0, 3.0], Sense::Max).unwrap();
        assert_eq!(f.edge_indices(), &[1, 2]);
    }

    #[test]
    fn kruskal_ties_follow_index_order() {
        let g = Graph::new(4, &[(0, 1), (1, 2), (0, 2), (2, 3)]).unwrap();
        // (0,1), (0,2), (1,2), (2,3): three cost-1 edges form the triangle
        let f = min_spanning_forest(&g, &[1.0, 1.0, 1.0, 3.0], Sense::Min).unwrap();
        assert_eq!(f.edge_indices(), &[0, 1, 3]);
        let g = triangle();
        let f = min_spanning_forest(&g, &[1.0, 1.0, 3.0], Sense::Min).unwrap();
        assert_eq!(f.edge_indices(), &[0, 1]);
    }

    #[test]
    fn kruskal_length_mismatch() {
        assert!(min_spanning_forest(&triangle(), &[1.0], Sense::Min).is_err());
    }

    #[test]
    fn uniform_weights_known_graphs() {
        for w in uniform_mas_weights(&triangle()).as_slice() {
            assert!((w - 2.0 / 3.0).abs() < 1e-12);
        }
        let cycle = Graph::new(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        for w in uniform_mas_weights(&cycle).as_slice() {
            assert!((w - 0.75).abs() < 1e-12);
        }
        let tree = Graph::new(5, &[(0, 1), (1, 2), (1, 3), (3, 4)]).unwrap();
        for w in uniform_mas_weights(&tree).as_slice() {
            assert!((w - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_spanning_forests(&triangle(), 100).unwrap().len(), 3);
        let cycle = Graph::new(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        assert_eq!(enumerate_spanning_forests(&cycle, 100).unwrap().len(), 4);
        let k4: Vec<_> = (0..4)
            .flat_map(|a| (a + 1..4).map(move |b| (a, b)))
            .collect();
        let k4 = Graph::new(4, &k4).unwrap();
        assert_eq!(enumerate_spanning_forests(&k4, 100).unwrap().len(), 16);
        assert!(matches!(
            enumerate_spanning_forests(&k4, 15),
            Err(Error::OracleScale(_))
        ));
    }

    #[test]
    fn soft_update_formula() {
        let g = triangle();
        let w = MasWeights::new(&g, vec![1.0, 1.0, 0.0]).unwrap();
        let target = SpanningForest::from_edge_indices(&g, vec![1, 2]).unwrap();
        let next = soft_update(&w, &target, 0.1).unwrap();
        assert!((next.as_slice()[0] - 0.9).abs() < 1e-15);
        assert!((next.sum() - 2.0).abs() < 1e-12);
        let full = soft_update(&w, &target, 1.0).unwrap();
        assert_eq!(full, MasWeights::indicator(&g, &target));
        assert!(soft_update(&w, &target, 0.0).is_err());
        assert!(soft_update(&w, &target, 1.5).is_err());
    }

    #[test]
    fn random_init_properties() {
        let tree = Graph::new(4, &[(0, 1), (1, 2), (1, 3)]).unwrap();
        for seed in 0..5 {
            assert!(random_mas_init(&tree, seed).as_slice().iter().all(|&w| w == 1.0));
        }
        for seed in 0..5 {
            let w = random_mas_init(&triangle(), seed);
            assert_eq!(w.as_slice().iter().filter(|&&x| x == 1.0).count(), 2);
            assert_eq!(w, random_mas_init(&triangle(), seed));
        }
    }

    #[test]
    fn paths() {
        let g = Graph::new(5, &[(0, 1), (1, 2), (3, 4)]).unwrap();
        let f = SpanningForest::from_edge_indices(&g, vec![0, 1, 2]).unwrap();
        assert_eq!(path_between(&f, 2, 2), Some(vec![2]));
        assert_eq!(path_between(&f, 0, 2), Some(vec![0, 1, 2]));
        assert_eq!(path_between(&f, 2, 0), Some(vec![2, 1, 0]));
        assert_eq!(path_between(&f, 0, 4), None);
    }

    #[test]
    fn forest_validation() {
        let g = triangle();
        assert!(SpanningForest::from_edge_indices(&g, vec![0]).is_err());
        assert!(SpanningForest::from_edge_indices(&g, vec![0, 1, 2]).is_err());
        let w = MasWeights::new(&g, vec![2.0 / 3.0; 3]).unwrap();
        assert!(w.as_forest(&g).is_none());
        let w = MasWeights::new(&g, vec![1.0, 0.0, 1.0]).unwrap();
        assert_eq!(w.as_forest(&g).unwrap().edge_indices(), &[0, 2]);
    }
}
