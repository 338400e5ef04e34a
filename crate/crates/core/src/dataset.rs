//! Datasets, on-disk formats and the planted-partition generator.
//!
//! Edge lists are UTF-8 text, one tab-separated `u<TAB>v` pair per line, `#`
//! starting a comment. A line holding a single id declares a vertex without
//! adding an edge, which keeps isolated vertices and index order stable on
//! round trips. External ids are mapped to dense indices in order of first
//! appearance.
//!
//! Features are either sparse triplets `node<TAB>index<TAB>value` (an optional
//! `# dim=D` comment fixes the dimension) or a dense CSV whose header starts
//! with `node` followed by one column per feature.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::graph::Graph;

/// Nonnegative sparse feature rows, column indices ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    dim: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl Features {
    pub fn new(dim: usize, mut rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        if dim == 0 {
            return input("feature dimension must be at least 1");
        }
        for (r, row) in rows.iter_mut().enumerate() {
            row.retain(|&(_, v)| v != 0.0);
            row.sort_by_key(|&(k, _)| k);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return input(format!("row {r} repeats feature index {}", w[0].0));
                }
            }
            if let Some(&(k, v)) = row.iter().find(|&&(k, v)| k >= dim || !(v >= 0.0)) {
                return input(format!("row {r} has invalid entry ({k}, {v})"));
            }
        }
        Ok(Self { dim, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub graph: Graph,
    pub features: Features,
    pub vertex_ids: Vec<String>,
}

impl Dataset {
    pub fn new(graph: Graph, features: Features, vertex_ids: Vec<String>) -> Result<Self> {
        if features.n_rows() != graph.n_vertices() || vertex_ids.len() != graph.n_vertices() {
            return input(format!(
                "{} feature rows and {} ids for {} vertices",
                features.n_rows(),
                vertex_ids.len(),
                graph.n_vertices()
            ));
        }
        Ok(Self {
            graph,
            features,
            vertex_ids,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.graph.n_vertices()
    }

    /// Same vertices and features over a different edge set.
    pub fn with_graph(&self, graph: Graph) -> Result<Self> {
        Self::new(graph, self.features.clone(), self.vertex_ids.clone())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EdgeListOptions {
    /// Keep `u - v` only when both `u v` and `v u` lines are present.
    pub bidirectional_only: bool,
}

/// Parsed edge list before graph construction.
#[derive(Clone, Debug, Default)]
pub struct EdgeList {
    pub vertex_ids: Vec<String>,
    pub edges: Vec<(usize, usize)>,
}

fn parse_err<T>(path: &Path, line: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    })
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Reads an edge list, optionally seeding the id map with a known vertex order.
pub fn read_edge_list(path: &Path, known: Option<&[String]>, opts: EdgeListOptions) -> Result<EdgeList> {
    let text = fs::read_to_string(path)?;
    let mut ids: Vec<String> = known.map(<[String]>::to_vec).unwrap_or_default();
    let mut index: HashMap<String, usize> =
        ids.iter().enumerate().map(|(k, id)| (id.clone(), k)).collect();
    let fixed = known.is_some();
    let mut directed = Vec::new();
    for (line, content) in content_lines(&text) {
        let fields: Vec<&str> = content.split('\t').map(str::trim).collect();
        let mut lookup = |id: &str| -> Result<usize> {
            if let Some(&k) = index.get(id) {
                return Ok(k);
            }
            if fixed {
                return parse_err(path, line, format!("unknown vertex id '{id}'"));
            }
            index.insert(id.to_string(), ids.len());
            ids.push(id.to_string());
            Ok(ids.len() - 1)
        };
        match fields.as_slice() {
            [v] => {
                lookup(v)?;
            }
            [u, v] => {
                let (a, b) = (lookup(u)?, lookup(v)?);
                directed.push((a, b));
            }
            _ => return parse_err(path, line, format!("expected 1 or 2 fields, got {}", fields.len())),
        }
    }
    let edges = if opts.bidirectional_only {
        let seen: HashSet<(usize, usize)> = directed.iter().copied().collect();
        directed
            .into_iter()
            .filter(|&(a, b)| a < b && seen.contains(&(b, a)))
            .collect()
    } else {
        directed
    };
    Ok(EdgeList {
        vertex_ids: ids,
        edges,
    })
}

/// Reads features for the given vertex order.
pub fn read_features(path: &Path, vertex_ids: &[String]) -> Result<Features> {
    let text = fs::read_to_string(path)?;
    let index: HashMap<&str, usize> = vertex_ids
        .iter()
        .enumerate()
        .map(|(k, id)| (id.as_str(), k))
        .collect();
    let mut rows = vec![Vec::new(); vertex_ids.len()];
    let mut declared_dim = None;
    for (k, l) in text.lines().enumerate() {
        if let Some(rest) = l.trim().strip_prefix("# dim=") {
            match rest.trim().parse::<usize>() {
                Ok(d) => declared_dim = Some(d),
                Err(_) => return parse_err(path, k + 1, format!("bad dimension '{rest}'")),
            }
        }
    }
    let mut lines = content_lines(&text).peekable();
    let dense = lines
        .peek()
        .map(|(_, l)| l.starts_with("node,"))
        .unwrap_or(false);
    let dim;
    if dense {
        let (_, header) = lines.next().expect("peeked");
        dim = header.split(',').count() - 1;
        for (line, content) in lines {
            let fields: Vec<&str> = content.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return parse_err(path, line, format!("expected {} columns", dim + 1));
            }
            let Some(&v) = index.get(fields[0]) else {
                return parse_err(path, line, format!("unknown vertex id '{}'", fields[0]));
            };
            for (c, f) in fields[1..].iter().enumerate() {
                let x: f64 = f
                    .parse()
                    .or_else(|_| parse_err(path, line, format!("bad value '{f}'")))?;
                if x != 0.0 {
                    rows[v].push((c, x));
                }
            }
        }
    } else {
        let mut max_index = 0;
        for (line, content) in lines {
            let fields: Vec<&str> = content.split('\t').map(str::trim).collect();
            let [node, col, val] = fields.as_slice() else {
                return parse_err(path, line, format!("expected 3 fields, got {}", fields.len()));
            };
            let Some(&v) = index.get(node) else {
                return parse_err(path, line, format!("unknown vertex id '{node}'"));
            };
            let c: usize = col
                .parse()
                .or_else(|_| parse_err(path, line, format!("bad index '{col}'")))?;
            let x: f64 = val
                .parse()
                .or_else(|_| parse_err(path, line, format!("bad value '{val}'")))?;
            if !(x >= 0.0) {
                return parse_err(path, line, format!("negative or invalid value {x}"));
            }
            max_index = max_index.max(c + 1);
            rows[v].push((c, x));
        }
        dim = declared_dim.unwrap_or(max_index).max(max_index);
    }
    Features::new(dim, rows)
}

/// Loads an edge list and its features.
pub fn load_dataset(edge_path: &Path, feature_path: &Path) -> Result<Dataset> {
    load_dataset_with(edge_path, feature_path, EdgeListOptions::default())
}

pub fn load_dataset_with(edge_path: &Path, feature_path: &Path, opts: EdgeListOptions) -> Result<Dataset> {
    let list = read_edge_list(edge_path, None, opts)?;
    let graph = Graph::new(list.vertex_ids.len(), &list.edges)?;
    let features = read_features(feature_path, &list.vertex_ids)?;
    Dataset::new(graph, features, list.vertex_ids)
}

/// Writes every vertex declaration followed by the edges.
pub fn format_edge_list(vertex_ids: &[String], edges: &[(usize, usize)]) -> String {
    let mut out = String::new();
    for id in vertex_ids {
        out.push_str(id);
        out.push('\n');
    }
    for &(u, v) in edges {
        let _ = writeln!(out, "{}\t{}", vertex_ids[u], vertex_ids[v]);
    }
    out
}

pub fn format_features(vertex_ids: &[String], features: &Features) -> String {
    let mut out = format!("# dim={}\n", features.dim());
    for (v, row) in features.rows().iter().enumerate() {
        for &(c, x) in row {
            let _ = writeln!(out, "{}\t{c}\t{x}", vertex_ids[v]);
        }
    }
    out
}

pub fn save_dataset(ds: &Dataset, edge_path: &Path, feature_path: &Path) -> Result<()> {
    fs::write(edge_path, format_edge_list(&ds.vertex_ids, ds.graph.edges()))?;
    fs::write(feature_path, format_features(&ds.vertex_ids, &ds.features))?;
    Ok(())
}

/// Planted-partition graph with cluster-topic bag-of-words features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_vertices: usize,
    pub n_clusters: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    pub vocab: usize,
    /// Words drawn per vertex.
    pub doc_length: usize,
    /// Mixing weight of the cluster topic against the uniform background.
    pub topic_strength: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_vertices: 300,
            n_clusters: 6,
            p_intra: 0.08,
            p_inter: 0.001,
            vocab: 120,
            doc_length: 20,
            topic_strength: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_vertices == 0 || self.n_clusters == 0 || self.vocab == 0 || self.doc_length == 0 {
            return input("synthetic counts must be positive");
        }
        for p in [self.p_intra, self.p_inter, self.topic_strength] {
            if !(0.0..=1.0).contains(&p) {
                return input(format!("probability {p} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn cluster_of(&self, v: usize) -> usize {
        v % self.n_clusters
    }
}

/// Cluster `k` owns a contiguous block of the vocabulary; each vertex draws
/// `doc_length` words from `strength * topic_k + (1 - strength) * uniform`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_vertices;
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if spec.cluster_of(u) == spec.cluster_of(v) {
                spec.p_intra
            } else {
                spec.p_inter
            };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let graph = Graph::new(n, &edges)?;

    let block = (spec.vocab / spec.n_clusters).max(1);
    let rows = (0..n)
        .map(|v| {
            let c = spec.cluster_of(v);
            let lo = (c * block) % spec.vocab;
            let mut counts = vec![0.0; spec.vocab];
            for _ in 0..spec.doc_length {
                let w = if rng.random::<f64>() < spec.topic_strength {
                    lo + rng.random_range(0..block.min(spec.vocab - lo))
                } else {
                    rng.random_range(0..spec.vocab)
                };
                counts[w] += 1.0;
            }
            counts
                .into_iter()
                .enumerate()
                .filter(|&(_, x)| x > 0.0)
                .collect()
        })
        .collect();
    let features = Features::new(spec.vocab, rows)?;
    let ids = (0..n).map(|v| format!("v{v}")).collect();
    Dataset::new(graph, features, ids)
}

/// TF-IDF reweighting: `tf * ln(N / df)` with term frequency normalized per row.
pub fn tfidf(features: &Features) -> Features {
    let n = features.n_rows() as f64;
    let mut df = vec![0usize; features.dim()];
    for row in features.rows() {
        for &(c, _) in row {
            df[c] += 1;
        }
    }
    let rows = features
        .rows()
        .iter()
        .map(|row| {
            let total: f64 = row.iter().map(|(_, x)| x).sum();
            row.iter()
                .map(|&(c, x)| (c, x / total * (n / df[c] as f64).ln()))
                .filter(|&(_, x)| x > 0.0)
                .collect()
        })
        .collect();
    Features::new(features.dim(), rows).expect("tf-idf keeps entries valid")
}

/// Shuffled copy of `0..n`, used by samplers across the crate.
pub fn permutation<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
        let dot: f64 = a
            .iter()
            .filter_map(|&(i, x)| b.iter().find(|&&(j, _)| j == i).map(|&(_, y)| x * y))
            .sum();
        let na: f64 = a.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn small_edge_file() {
        let dir = tempfile::tempdir().unwrap();
        let e = dir.path().join("e.tsv");
        let f = dir.path().join("f.tsv");
        fs::write(&e, "a\tb\nb\ta\n# comment\na\tb\n").unwrap();
        fs::write(&f, "a\t0\t1\nb\t2\t3.5\n").unwrap();
        let ds = load_dataset(&e, &f).unwrap();
        assert_eq!(ds.n_vertices(), 2);
        assert_eq!(ds.graph.n_edges(), 1);
        assert_eq!(ds.features.dim(), 3);
        assert_eq!(ds.features.row(1), &[(2, 3.5)]);
    }

    #[test]
    fn unknown_feature_node_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let e = dir.path().join("e.tsv");
        let f = dir.path().join("f.tsv");
        fs::write(&e, "a\tb\n").unwrap();
        fs::write(&f, "a\t0\t1\nzzz\t1\t1\n").unwrap();
        match load_dataset(&e, &f) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("zzz"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_edge_line() {
        let dir = tempfile::tempdir().unwrap();
        let e = dir.path().join("e.tsv");
        let f = dir.path().join("f.tsv");
        fs::write(&e, "a\tb\nx\ty\tz\n").unwrap();
        fs::write(&f, "").unwrap();
        assert!(matches!(load_dataset(&e, &f), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn dense_csv_features() {
        let dir = tempfile::tempdir().unwrap();
        let e = dir.path().join("e.tsv");
        let f = dir.path().join("f.csv");
        fs::write(&e, "a\tb\n").unwrap();
        fs::write(&f, "node,w0,w1\nb,0,2\na,1.5,0\n").unwrap();
        let ds = load_dataset(&e, &f).unwrap();
        assert_eq!(ds.features.dim(), 2);
        assert_eq!(ds.features.row(0), &[(0, 1.5)]);
        assert_eq!(ds.features.row(1), &[(1, 2.0)]);
    }

    #[test]
    fn bidirectional_filter() {
        let dir = tempfile::tempdir().unwrap();
        let e = dir.path().join("e.tsv");
        fs::write(&e, "a\tb\nb\ta\nb\tc\n").unwrap();
        let opts = EdgeListOptions {
            bidirectional_only: true,
        };
        let list = read_edge_list(&e, None, opts).unwrap();
        assert_eq!(list.vertex_ids.len(), 3);
        assert_eq!(list.edges, vec![(0, 1)]);
    }

    #[test]
    fn save_load_round_trip() {
        let ds = generate_synthetic(&SyntheticSpec {
            n_vertices: 40,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let e = dir.path().join("e.tsv");
        let f = dir.path().join("f.tsv");
        save_dataset(&ds, &e, &f).unwrap();
        assert_eq!(load_dataset(&e, &f).unwrap(), ds);
    }

    #[test]
    fn synthetic_disconnected_clusters() {
        let spec = SyntheticSpec {
            n_vertices: 60,
            n_clusters: 4,
            p_intra: 0.6,
            p_inter: 0.0,
            seed: 3,
            ..SyntheticSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        assert_eq!(ds.graph.n_components(), 4);
        assert_eq!(ds, generate_synthetic(&spec).unwrap());
    }

    #[test]
    fn synthetic_features_follow_clusters() {
        let spec = SyntheticSpec {
            topic_strength: 0.7,
            doc_length: 40,
            ..SyntheticSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let (mut intra, mut inter) = ((0.0, 0), (0.0, 0));
        for u in 0..100 {
            for v in u + 1..100 {
                let c = cosine(ds.features.row(u), ds.features.row(v));
                if spec.cluster_of(u) == spec.cluster_of(v) {
                    intra = (intra.0 + c, intra.1 + 1);
                } else {
                    inter = (inter.0 + c, inter.1 + 1);
                }
            }
        }
        assert!(intra.0 / intra.1 as f64 > inter.0 / inter.1 as f64 + 0.1);
    }

    #[test]
    fn tfidf_downweights_common_words() {
        let f = Features::new(2, vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0)]]).unwrap();
        let t = tfidf(&f);
        assert_eq!(t.row(1), &[] as &[(usize, f64)]);
        assert_eq!(t.row(0).len(), 1);
        assert!((t.row(0)[0].1 - 0.5 * 2f64.ln()).abs() < 1e-15);
    }
}
