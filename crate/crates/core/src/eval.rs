//! Heldout edge splits and the normalized cumulative reciprocal rank.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bp_refine::RefinedMarginals;
use crate::dataset::permutation;
use crate::error::{input, Result};
use crate::gaussian::{expected_sq_distance, PairGaussian};
use crate::graph::{Graph, SpanningForest};
use crate::neural::{ModelParams, Posteriors};
use crate::trainer::Mode;

/// Training graph plus heldout edges.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train_graph: Graph,
    pub test_edges: Vec<(usize, usize)>,
    /// Heldout edges incident to each vertex.
    pub heldout_counts: Vec<usize>,
}

impl SplitDataset {
    /// Rebuilds a split from its test edges; they must all be edges of `full`.
    pub fn from_test_edges(full: &Graph, mut test_edges: Vec<(usize, usize)>) -> Result<Self> {
        for e in &mut test_edges {
            *e = (e.0.min(e.1), e.0.max(e.1));
            if !full.has_edge(e.0, e.1) {
                return input(format!("heldout pair {:?} is not an edge", e));
            }
        }
        test_edges.sort_unstable();
        test_edges.dedup();
        let train: Vec<(usize, usize)> = full
            .edges()
            .iter()
            .copied()
            .filter(|e| test_edges.binary_search(e).is_err())
            .collect();
        let mut heldout_counts = vec![0; full.n_vertices()];
        for &(a, b) in &test_edges {
            heldout_counts[a] += 1;
            heldout_counts[b] += 1;
        }
        Ok(Self {
            train_graph: Graph::new(full.n_vertices(), &train)?,
            test_edges,
            heldout_counts,
        })
    }
}

/// Heldout quota of a vertex of degree `deg`.
pub fn heldout_quota(deg: usize) -> usize {
    (deg / 20).max(1)
}

/// Visits vertices in random order and moves up to `heldout_quota(degree)`
/// still-unclaimed incident edges to the test set. An edge counts toward both
/// endpoints' quotas and is only available while both are below quota.
pub fn split_edges(g: &Graph, seed: u64) -> SplitDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut claimed = vec![false; g.n_edges()];
    let mut counts = vec![0usize; g.n_vertices()];
    for v in permutation(g.n_vertices(), &mut rng) {
        let quota = heldout_quota(g.degree(v));
        let mut incident: Vec<usize> = g.incident(v).iter().map(|&(_, e)| e).collect();
        incident.shuffle(&mut rng);
        for e in incident {
            if counts[v] >= quota {
                break;
            }
            let (a, b) = g.edges()[e];
            let other = if a == v { b } else { a };
            if !claimed[e] && counts[other] < heldout_quota(g.degree(other)) {
                claimed[e] = true;
                counts[a] += 1;
                counts[b] += 1;
            }
        }
    }
    let test_edges: Vec<(usize, usize)> = (0..g.n_edges())
        .filter(|&e| claimed[e])
        .map(|e| g.edges()[e])
        .collect();
    SplitDataset::from_test_edges(g, test_edges).expect("test edges come from the graph")
}

/// Dense symmetric table of pairwise distances; missing entries are NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceTable {
    n: usize,
    data: Vec<f64>,
}

const MATRIX_MAGIC: &[u8; 8] = b"ACVAEMAT";

impl DistanceTable {
    pub fn missing(n: usize) -> Self {
        Self {
            n,
            data: vec![f64::NAN; n * n],
        }
    }

    /// Full table from a symmetric distance function; the diagonal is zero.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut t = Self::missing(n);
        for i in 0..n {
            t.data[i * n + i] = 0.0;
            for j in i + 1..n {
                t.set(i, j, f(i, j));
            }
        }
        t
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let x = self.data[i * self.n + j];
        (!x.is_nan()).then_some(x)
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.n + j] = value;
        self.data[j * self.n + i] = value;
    }

    /// Sets `(i, j)` only.
    pub fn set_directed(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.n + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Magic, rows and cols as little-endian u64, then row-major little-endian f64.
    pub fn write_binary<W: Write>(&self, out: W) -> Result<()> {
        write_matrix(out, self.n, self.n, &self.data)
    }

    pub fn read_binary<R: Read>(mut src: R) -> Result<Self> {
        let (rows, cols, data) = read_matrix(&mut src)?;
        if rows != cols {
            return input(format!("distance table must be square, got {rows}x{cols}"));
        }
        Ok(Self { n: rows, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_binary(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Writes any row-major matrix in the distance-table binary format.
pub fn write_matrix<W: Write>(mut out: W, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    if data.len() != rows * cols {
        return input(format!("{} values for a {rows}x{cols} matrix", data.len()));
    }
    out.write_all(MATRIX_MAGIC)?;
    out.write_all(&(rows as u64).to_le_bytes())?;
    out.write_all(&(cols as u64).to_le_bytes())?;
    for x in data {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_matrix<R: Read>(src: &mut R) -> Result<(usize, usize, Vec<f64>)> {
    let mut magic = [0u8; 8];
    src.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return input("not a matrix file");
    }
    let mut word = [0u8; 8];
    src.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    src.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        src.read_exact(&mut word)?;
        data.push(f64::from_le_bytes(word));
    }
    Ok((rows, cols, data))
}

/// Per-vertex ranking scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    /// `None` for vertices without target edges.
    pub crr: Vec<Option<f64>>,
    pub ncrr: Vec<Option<f64>>,
    pub candidates: Vec<usize>,
    pub targets: Vec<usize>,
    pub mean_ncrr: f64,
}

impl RankingReport {
    pub fn n_ranked(&self) -> usize {
        self.ncrr.iter().flatten().count()
    }
}

/// `sum_{r=1}^{t} 1/r`, the largest achievable CRR with `t` targets.
pub fn ideal_crr(t: usize) -> f64 {
    (1..=t).map(|r| 1.0 / r as f64).sum()
}

/// Ranks `targets` (undirected pairs, each counted at both endpoints) among the
/// candidates of every vertex: all vertices except itself and its neighbours in
/// `excluded`. Ties count against the target.
pub fn rank_targets(
    dist: &DistanceTable,
    targets: &[(usize, usize)],
    excluded: &Graph,
) -> Result<RankingReport> {
    let n = dist.n();
    if excluded.n_vertices() != n {
        return input(format!(
            "distance table has {n} vertices, graph has {}",
            excluded.n_vertices()
        ));
    }
    let mut per_vertex: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in targets {
        if a >= n || b >= n || a == b {
            return input(format!("target pair ({a}, {b}) invalid"));
        }
        per_vertex[a].push(b);
        per_vertex[b].push(a);
    }
    let mut report = RankingReport {
        crr: vec![None; n],
        ncrr: vec![None; n],
        candidates: vec![0; n],
        targets: per_vertex.iter().map(Vec::len).collect(),
        mean_ncrr: 0.0,
    };
    let mut total = 0.0;
    let mut counted = 0usize;
    let mut allowed = vec![true; n];
    for i in 0..n {
        if per_vertex[i].is_empty() {
            continue;
        }
        allowed[i] = false;
        for k in excluded.neighbors(i) {
            allowed[k] = false;
        }
        let mut cand = Vec::with_capacity(n);
        for (k, _) in allowed.iter().enumerate().filter(|(_, &a)| a) {
            match dist.get(i, k) {
                Some(x) => cand.push(x),
                None => return input(format!("missing distance ({i}, {k})")),
            }
        }
        let mut crr = 0.0;
        for &j in &per_vertex[i] {
            if !allowed[j] {
                return input(format!("target ({i}, {j}) is excluded from candidates"));
            }
            let dj = dist.get(i, j).expect("candidate distances checked");
            let rank = cand.iter().filter(|&&x| x <= dj).count();
            crr += 1.0 / rank as f64;
        }
        let ncrr = crr / ideal_crr(per_vertex[i].len());
        report.crr[i] = Some(crr);
        report.ncrr[i] = Some(ncrr);
        report.candidates[i] = cand.len();
        total += ncrr;
        counted += 1;
        allowed[i] = true;
        for k in excluded.neighbors(i) {
            allowed[k] = true;
        }
    }
    report.mean_ncrr = if counted == 0 { 0.0 } else { total / counted as f64 };
    Ok(report)
}

/// Test NCRR: heldout edges ranked among non-train-neighbours.
pub fn ncrr(dist: &DistanceTable, split: &SplitDataset) -> Result<RankingReport> {
    rank_targets(dist, &split.test_edges, &split.train_graph)
}

/// Train NCRR: train edges ranked among all other vertices.
pub fn train_ncrr(dist: &DistanceTable, train_graph: &Graph) -> Result<RankingReport> {
    let empty = Graph::new(train_graph.n_vertices(), &[])?;
    rank_targets(dist, train_graph.edges(), &empty)
}

/// Independent-pair distances from singleton posteriors.
pub fn independent_distances(post: &Posteriors<'_>) -> DistanceTable {
    let q = post.singletons();
    DistanceTable::from_fn(q.len(), |i, j| {
        expected_sq_distance(&PairGaussian::independent(&q[i], &q[j]))
    })
}

/// Learned pairwise posteriors on `edges`, independent pairs elsewhere.
pub fn edge_pair_distances(post: &Posteriors<'_>, g: &Graph, edges: &[usize]) -> DistanceTable {
    let mut t = independent_distances(post);
    for &e in edges {
        let (i, j) = g.edges()[e];
        t.set(i, j, expected_sq_distance(&post.pair(i, j)));
    }
    t
}

/// Ranking distances for a trained model. `forest` is required for the
/// adaptive modes; with `refine == false` they fall back to learned pairs on
/// forest edges and independent pairs elsewhere.
pub fn distances_for_mode(
    mode: Mode,
    params: &ModelParams,
    rows: &[Vec<(usize, f64)>],
    train_graph: &Graph,
    forest: Option<&SpanningForest>,
    refine: bool,
) -> Result<DistanceTable> {
    match mode {
        Mode::Vae | Mode::CvaeInd => Ok(independent_distances(&Posteriors::compute(params, rows, false))),
        Mode::CvaeCorr => {
            let post = Posteriors::compute(params, rows, true);
            let all: Vec<usize> = (0..train_graph.n_edges()).collect();
            Ok(edge_pair_distances(&post, train_graph, &all))
        }
        Mode::AcvaeSaddle | Mode::AcvaeEb => {
            let Some(forest) = forest else {
                return input("adaptive modes need a forest for ranking distances");
            };
            let post = Posteriors::compute(params, rows, true);
            if refine {
                let rm = RefinedMarginals::from_posteriors(&post, train_graph, forest)?;
                Ok(rm.all_pairs_distances(None, None))
            } else {
                Ok(edge_pair_distances(&post, train_graph, forest.edge_indices()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star(leaves: usize) -> Graph {
        let edges: Vec<(usize, usize)> = (1..=leaves).map(|v| (0, v)).collect();
        Graph::new(leaves + 1, &edges).unwrap()
    }

    #[test]
    fn star_center_quota() {
        let g = star(40);
        for seed in 0..20 {
            let s = split_edges(&g, seed);
            assert_eq!(s.heldout_counts[0], 2);
            assert_eq!(s.test_edges.len(), 2);
        }
    }

    #[test]
    fn split_partitions_and_is_deterministic() {
        let mut edges = Vec::new();
        for a in 0..30 {
            for b in a + 1..30 {
                if (a * 7 + b * 3) % 5 == 0 {
                    edges.push((a, b));
                }
            }
        }
        let g = Graph::new(30, &edges).unwrap();
        let s = split_edges(&g, 11);
        assert_eq!(s, split_edges(&g, 11));
        for &(a, b) in &s.test_edges {
            assert!(!s.train_graph.has_edge(a, b));
        }
        assert_eq!(s.test_edges.len() + s.train_graph.n_edges(), g.n_edges());
        for v in 0..30 {
            if g.degree(v) > 0 {
                assert!(s.heldout_counts[v] >= 1);
            }
        }
    }

    #[test]
    fn perfect_rankings() {
        let g = Graph::new(5, &[]).unwrap();
        let dist = DistanceTable::from_fn(5, |i, j| (i as f64 - j as f64).abs());
        let r = rank_targets(&dist, &[(0, 1)], &g).unwrap();
        assert_eq!(r.crr[0], Some(1.0));
        assert_eq!(r.ncrr[0], Some(1.0));
        // vertex 2: targets 1 and 3 tie at rank 2 each
        let r = rank_targets(&dist, &[(2, 1), (2, 3)], &g).unwrap();
        assert_eq!(r.crr[2], Some(1.0));
        let r = rank_targets(&dist, &[(2, 1), (2, 4)], &g).unwrap();
        assert_eq!(r.crr[2], Some(0.75));
    }

    #[test]
    fn missing_distance_rejected() {
        let g = Graph::new(3, &[]).unwrap();
        let mut dist = DistanceTable::missing(3);
        dist.set(0, 1, 1.0);
        assert!(rank_targets(&dist, &[(0, 1)], &g).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let dist = DistanceTable::from_fn(4, |i, j| (i * 10 + j) as f64 / 3.0);
        let mut buf = Vec::new();
        dist.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 16 * 8);
        let back = DistanceTable::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                   dist.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }
}
