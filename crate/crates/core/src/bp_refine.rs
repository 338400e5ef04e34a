//! Exact pairwise marginals between arbitrary vertices of a tree-structured
//! posterior, obtained by integrating out the interior of the connecting path.

use crate::error::{input, Error, Result};
use crate::eval::DistanceTable;
use crate::gaussian::{
    chain_step, compose_path, expected_sq_distance, expected_sq_distance_dim, Bivariate,
    DiagGaussian, PairGaussian,
};
use crate::graph::{path_between, Graph, MasWeights, SpanningForest};
use crate::neural::Posteriors;

const CONSISTENCY_TOL: f64 = 1e-6;

/// Singleton posteriors plus the learned pair posterior of every forest edge.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinedMarginals {
    forest: SpanningForest,
    endpoints: Vec<(usize, usize)>,
    singletons: Vec<DiagGaussian>,
    // indexed by graph edge, `Some` exactly on forest edges
    edge_pairs: Vec<Option<PairGaussian>>,
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= CONSISTENCY_TOL)
}

impl RefinedMarginals {
    /// `edge_pairs` holds `(graph edge index, pair)` for every forest edge,
    /// oriented like the graph's edge list.
    pub fn new(
        g: &Graph,
        forest: SpanningForest,
        singletons: Vec<DiagGaussian>,
        edge_pairs: Vec<(usize, PairGaussian)>,
    ) -> Result<Self> {
        if singletons.len() != g.n_vertices() || forest.n_vertices() != g.n_vertices() {
            return input("singletons, forest and graph disagree on the vertex count");
        }
        let mut slots = vec![None; g.n_edges()];
        for (e, pair) in edge_pairs {
            if !forest.contains(e) {
                return input(format!("edge {e} is not in the forest"));
            }
            let (i, j) = g.edges()[e];
            let (qi, qj) = (&singletons[i], &singletons[j]);
            if !(close(&pair.mean_i, &qi.mean)
                && close(&pair.std_i, &qi.std)
                && close(&pair.mean_j, &qj.mean)
                && close(&pair.std_j, &qj.std))
            {
                return Err(Error::Consistency(format!(
                    "pair posterior of edge {e} disagrees with its vertex marginals"
                )));
            }
            slots[e] = Some(pair);
        }
        if let Some(&e) = forest.edge_indices().iter().find(|&&e| slots[e].is_none()) {
            return input(format!("forest edge {e} has no pair posterior"));
        }
        Ok(Self {
            forest,
            endpoints: g.edges().to_vec(),
            singletons,
            edge_pairs: slots,
        })
    }

    pub fn from_posteriors(post: &Posteriors<'_>, g: &Graph, forest: &SpanningForest) -> Result<Self> {
        let pairs = forest
            .edge_indices()
            .iter()
            .map(|&e| {
                let (i, j) = g.edges()[e];
                (e, post.pair(i, j))
            })
            .collect();
        Self::new(g, forest.clone(), post.singletons().to_vec(), pairs)
    }

    /// Refinement is only defined on a single forest, so `w` must be a 0/1
    /// indicator.
    pub fn from_weights(post: &Posteriors<'_>, g: &Graph, w: &MasWeights) -> Result<Self> {
        match w.as_forest(g) {
            Some(forest) => Self::from_posteriors(post, g, &forest),
            None => input("refinement needs rounded weights (the indicator of one forest)"),
        }
    }

    pub fn forest(&self) -> &SpanningForest {
        &self.forest
    }

    pub fn singleton(&self, v: usize) -> &DiagGaussian {
        &self.singletons[v]
    }

    /// Pair posterior of forest edge `e` oriented from `from`.
    fn oriented(&self, e: usize, from: usize) -> PairGaussian {
        let pair = self.edge_pairs[e].as_ref().expect("forest edge");
        if self.endpoints[e].0 == from {
            pair.clone()
        } else {
            pair.swapped()
        }
    }

    /// Refined pair distribution of `(z_i, z_j)`: composition along the forest
    /// path, or the independent pair across components.
    pub fn refine_pair(&self, i: usize, j: usize) -> Result<PairGaussian> {
        let n = self.singletons.len();
        if i >= n || j >= n {
            return input(format!("vertex pair ({i}, {j}) out of range"));
        }
        if i == j {
            return input("refinement needs two distinct vertices");
        }
        let Some(path) = path_between(&self.forest, i, j) else {
            return Ok(PairGaussian::independent(&self.singletons[i], &self.singletons[j]));
        };
        let marginals: Vec<DiagGaussian> = path.iter().map(|&v| self.singletons[v].clone()).collect();
        let pairs: Vec<PairGaussian> = path
            .windows(2)
            .map(|w| {
                let e = self
                    .forest
                    .incident(w[0])
                    .iter()
                    .find(|&&(u, _)| u == w[1])
                    .expect("path follows forest edges")
                    .1;
                self.oriented(e, w[0])
            })
            .collect();
        compose_path(&marginals, &pairs)
    }

    fn distance_with_rho(&self, s: usize, v: usize, rho: &[f64]) -> f64 {
        let (qs, qv) = (&self.singletons[s], &self.singletons[v]);
        (0..qs.dim())
            .map(|k| {
                expected_sq_distance_dim(Bivariate {
                    mean_i: qs.mean[k],
                    mean_j: qv.mean[k],
                    std_i: qs.std[k],
                    std_j: qv.std[k],
                    rho: rho[k],
                })
            })
            .sum()
    }

    /// Expected squared distances from each source to each candidate (all
    /// vertices when `None`), one depth-first traversal per source carrying
    /// the composed correlation. Entry `(s, v)` equals
    /// `expected_sq_distance(refine_pair(s, v))` bitwise.
    pub fn all_pairs_distances(
        &self,
        sources: Option<&[usize]>,
        candidates: Option<&[usize]>,
    ) -> DistanceTable {
        let n = self.singletons.len();
        let all: Vec<usize> = (0..n).collect();
        let sources = sources.unwrap_or(&all);
        let mut wanted = vec![candidates.is_none(); n];
        for &c in candidates.unwrap_or(&[]) {
            wanted[c] = true;
        }
        let d = self.singletons.first().map_or(0, DiagGaussian::dim);
        let mut table = DistanceTable::missing(n);
        let mut reached = vec![false; n];
        let mut stack: Vec<(usize, Vec<f64>)> = Vec::new();
        for &s in sources {
            reached.iter_mut().for_each(|r| *r = false);
            reached[s] = true;
            table.set_directed(s, s, 0.0);
            stack.push((s, vec![1.0; d]));
            while let Some((u, acc)) = stack.pop() {
                for &(v, e) in self.forest.incident(u) {
                    if reached[v] {
                        continue;
                    }
                    reached[v] = true;
                    let edge = self.oriented(e, u);
                    let rho: Vec<f64> = acc.iter().zip(&edge.rho).map(|(&a, &r)| chain_step(a, r)).collect();
                    if wanted[v] {
                        table.set_directed(s, v, self.distance_with_rho(s, v, &rho));
                    }
                    stack.push((v, rho));
                }
            }
            for v in 0..n {
                if wanted[v] && !reached[v] {
                    let pair = PairGaussian::independent(&self.singletons[s], &self.singletons[v]);
                    table.set_directed(s, v, expected_sq_distance(&pair));
                }
            }
        }
        table
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(m: &[f64], s: &[f64]) -> DiagGaussian {
        DiagGaussian::new(m.to_vec(), s.to_vec()).unwrap()
    }

    fn chain() -> (Graph, RefinedMarginals) {
        let g = Graph::new(4, &[(0, 1), (1, 2)]).unwrap();
        let forest = SpanningForest::from_edge_indices(&g, vec![0, 1]).unwrap();
        let q = vec![
            diag(&[0.1, -0.3], &[0.9, 1.2]),
            diag(&[0.5, 0.2], &[0.7, 0.4]),
            diag(&[-1.0, 0.0], &[1.1, 0.6]),
            diag(&[2.0, 1.0], &[0.3, 0.3]),
        ];
        let pairs = vec![
            (0, PairGaussian::new(&q[0], &q[1], vec![0.6, -0.2]).unwrap()),
            (1, PairGaussian::new(&q[1], &q[2], vec![0.8, 0.5]).unwrap()),
        ];
        let rm = RefinedMarginals::new(&g, forest, q, pairs).unwrap();
        (g, rm)
    }

    #[test]
    fn edges_unchanged_and_cross_component_independent() {
        let (_, rm) = chain();
        let p = rm.refine_pair(0, 1).unwrap();
        assert_eq!(p.rho, vec![0.6, -0.2]);
        assert_eq!(rm.refine_pair(1, 0).unwrap(), p.swapped());
        let far = rm.refine_pair(0, 3).unwrap();
        assert_eq!(far.rho, vec![0.0, 0.0]);
        assert_eq!(far.marginal_j(), *rm.singleton(3));
        assert!(rm.refine_pair(2, 2).is_err());
    }

    #[test]
    fn chain_composition_and_singletons() {
        let (_, rm) = chain();
        let p = rm.refine_pair(0, 2).unwrap();
        assert_eq!(p.rho, vec![0.6 * 0.8, -0.2 * 0.5]);
        assert_eq!(p.marginal_i(), *rm.singleton(0));
        assert_eq!(p.marginal_j(), *rm.singleton(2));
    }

    #[test]
    fn table_matches_per_pair_and_is_symmetric() {
        let (_, rm) = chain();
        let t = rm.all_pairs_distances(None, None);
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    continue;
                }
                let direct = expected_sq_distance(&rm.refine_pair(i, j).unwrap());
                assert_eq!(t.get(i, j).unwrap().to_bits(), direct.to_bits());
                assert!((t.get(i, j).unwrap() - t.get(j, i).unwrap()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_inconsistent_edge_and_fractional_weights() {
        let g = Graph::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let forest = SpanningForest::from_edge_indices(&g, vec![0, 1]).unwrap();
        let q = vec![DiagGaussian::standard(1); 3];
        let bad = PairGaussian::new(&diag(&[0.5], &[1.0]), &q[1], vec![0.1]).unwrap();
        let good = PairGaussian::independent(&q[1], &q[2]);
        assert!(matches!(
            RefinedMarginals::new(&g, forest.clone(), q.clone(), vec![(0, bad), (1, good.clone())]),
            Err(Error::Consistency(_))
        ));
        assert!(RefinedMarginals::new(&g, forest, q, vec![(1, good)]).is_err());

        let arch = crate::neural::Architecture {
            input_dim: 2,
            latent_dim: 1,
            h1: 2,
            h2: 2,
        };
        let params = crate::neural::ModelParams::init(arch, 0);
        let rows = vec![vec![(0, 1.0)], vec![(1, 1.0)], vec![]];
        let post = Posteriors::compute(&params, &rows, true);
        let w = crate::graph::uniform_mas_weights(&g);
        assert!(RefinedMarginals::from_weights(&post, &g, &w).is_err());
    }
}
