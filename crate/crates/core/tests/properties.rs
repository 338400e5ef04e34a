use acvae_core::bp_refine::RefinedMarginals;
use acvae_core::eval::{independent_distances, rank_targets, DistanceTable};
use acvae_core::gaussian::{DiagGaussian, PairGaussian};
use acvae_core::graph::{
    min_spanning_forest, random_mas_init, soft_update, uniform_mas_weights, Graph, Sense,
    SpanningForest,
};
use acvae_core::neural::{Architecture, ModelParams, Posteriors};
use acvae_core::objective::{batch_objective, full_objective, BatchSpec, LossSettings, NoiseStream};
use proptest::prelude::*;

fn graph_strategy(max_n: usize) -> impl Strategy<Value = Graph> {
    (2..=max_n).prop_flat_map(|n| {
        proptest::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |bits| {
            let mut edges = Vec::new();
            let mut k = 0;
            for a in 0..n {
                for b in a + 1..n {
                    if bits[k] {
                        edges.push((a, b));
                    }
                    k += 1;
                }
            }
            Graph::new(n, &edges).unwrap()
        })
    })
}

fn tree_from_parents(parents: &[usize]) -> Graph {
    // vertex k + 1 attaches to some vertex in 0..=k
    let edges: Vec<(usize, usize)> = parents
        .iter()
        .enumerate()
        .map(|(k, &p)| (p % (k + 1), k + 1))
        .collect();
    Graph::new(parents.len() + 1, &edges).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn soft_updates_keep_forest_size(
        g in graph_strategy(9),
        seed in any::<u64>(),
        steps in proptest::collection::vec((proptest::collection::vec(-5.0f64..5.0, 36), 0.001f64..=1.0, any::<bool>()), 1..20),
    ) {
        let target = g.forest_size() as f64;
        let mut w = random_mas_init(&g, seed);
        for (costs, alpha, max) in steps {
            let sense = if max { Sense::Max } else { Sense::Min };
            let forest = min_spanning_forest(&g, &costs[..g.n_edges()], sense).unwrap();
            let next = soft_update(&w, &forest, alpha).unwrap();
            // the update is the convex combination of w and the forest indicator
            for e in 0..g.n_edges() {
                let ind = if forest.contains(e) { 1.0 } else { 0.0 };
                prop_assert_eq!(next.as_slice()[e], (1.0 - alpha) * w.as_slice()[e] + alpha * ind);
                prop_assert!((0.0..=1.0).contains(&next.as_slice()[e]));
            }
            prop_assert!((next.sum() - target).abs() <= 1e-12 * target.max(1.0));
            w = next;
        }
    }

    #[test]
    fn ncrr_invariant_under_monotone_transforms(
        n in 4usize..12,
        seed in any::<u64>(),
        scale in 0.1f64..10.0,
        shift in -3.0f64..3.0,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut table = DistanceTable::missing(n);
        for i in 0..n {
            for j in i + 1..n {
                table.set(i, j, rng.random_range(0.0..4.0));
            }
        }
        let train = Graph::new(n, &[(0, 1)]).unwrap();
        let targets = vec![(0, 2), (1, 3), (2, 3)];
        let transformed = DistanceTable::from_fn(n, |i, j| {
            let x = table.get(i, j).unwrap_or(0.0);
            (scale * x + shift).exp()
        });
        let a = rank_targets(&table, &targets, &train).unwrap();
        let b = rank_targets(&transformed, &targets, &train).unwrap();
        prop_assert_eq!(a.crr, b.crr);
        prop_assert!(a.mean_ncrr > 0.0 && a.mean_ncrr <= 1.0);
    }

    #[test]
    fn refined_distances_are_symmetric(
        parents in proptest::collection::vec(any::<usize>(), 1..11),
        params in proptest::collection::vec((-2.0f64..2.0, 0.2f64..2.0, -0.98f64..0.98), 12),
    ) {
        let g = tree_from_parents(&parents);
        let n = g.n_vertices();
        let q: Vec<DiagGaussian> = (0..n)
            .map(|v| DiagGaussian::new(vec![params[v].0], vec![params[v].1]).unwrap())
            .collect();
        let pairs = g
            .edges()
            .iter()
            .enumerate()
            .map(|(e, &(i, j))| (e, PairGaussian::new(&q[i], &q[j], vec![params[e].2]).unwrap()))
            .collect();
        let forest = SpanningForest::from_edge_indices(&g, (0..g.n_edges()).collect()).unwrap();
        let rm = RefinedMarginals::new(&g, forest, q, pairs).unwrap();
        let t = rm.all_pairs_distances(None, None);
        for i in 0..n {
            prop_assert_eq!(t.get(i, i), Some(0.0));
            for j in 0..n {
                let (a, b) = (t.get(i, j).unwrap(), t.get(j, i).unwrap());
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
                prop_assert!(a >= -1e-12);
            }
        }
    }

    #[test]
    fn minibatches_average_to_full_objective(
        g in graph_strategy(10),
        seed in any::<u64>(),
        chunks in 1usize..4,
    ) {
        use rand::SeedableRng;
        let n = g.n_vertices();
        let dim = 5;
        let rows: Vec<Vec<(usize, f64)>> = (0..n).map(|v| vec![(v % dim, 1.0 + (v % 3) as f64)]).collect();
        let arch = Architecture { input_dim: dim, latent_dim: 2, h1: 4, h2: 3 };
        let params = ModelParams::init(arch, seed);
        let w = uniform_mas_weights(&g);
        let settings = LossSettings::default();
        let noise = NoiseStream::new(seed);
        let step = 3;
        let full = full_objective(&params, &rows, &g, &w, &settings, noise, step).unwrap();

        // equal-size vertex and edge chunks, paired up
        let k = chunks.min(n).min(g.n_edges().max(1));
        prop_assume!(n % k == 0 && g.n_edges() % k == 0 && g.n_edges() > 0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let order_v = acvae_core::dataset::permutation(n, &mut rng);
        let order_e = acvae_core::dataset::permutation(g.n_edges(), &mut rng);
        let (bv, be) = (n / k, g.n_edges() / k);
        let mut mean = 0.0;
        for c in 0..k {
            let batch = BatchSpec::new(
                &g,
                order_v[c * bv..(c + 1) * bv].to_vec(),
                order_e[c * be..(c + 1) * be].to_vec(),
                Vec::new(),
                step,
            )
            .unwrap();
            mean += batch_objective(&params, &rows, &g, &w, &settings, &batch, noise).unwrap().total / k as f64;
        }
        prop_assert!((mean - full.total).abs() <= 1e-9 * full.total.abs().max(1.0));
    }

    #[test]
    fn objective_is_affine_in_weights(g in graph_strategy(8), seed in any::<u64>(), gamma in 0.0f64..50.0) {
        prop_assume!(g.n_edges() > 0);
        let n = g.n_vertices();
        let rows: Vec<Vec<(usize, f64)>> = (0..n).map(|v| vec![(v % 4, 1.0), ((v * 3) % 4, 1.0)]).collect();
        let arch = Architecture { input_dim: 4, latent_dim: 2, h1: 4, h2: 3 };
        let params = ModelParams::init(arch, seed);
        let settings = LossSettings { gamma, ..LossSettings::default() };
        let noise = NoiseStream::new(seed);
        let a = random_mas_init(&g, seed);
        let b = random_mas_init(&g, seed.wrapping_add(1));
        let mid_w: Vec<f64> = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| 0.5 * (x + y)).collect();
        let mid = acvae_core::graph::MasWeights::new(&g, mid_w).unwrap();
        let total = |w| full_objective(&params, &rows, &g, w, &settings, noise, 0).unwrap().total;
        let (ta, tb, tm) = (total(&a), total(&b), total(&mid));
        prop_assert!((tm - 0.5 * (ta + tb)).abs() <= 1e-9 * tm.abs().max(1.0));
    }

    #[test]
    fn independent_distances_are_symmetric(seed in any::<u64>(), n in 2usize..10) {
        let arch = Architecture { input_dim: 4, latent_dim: 3, h1: 4, h2: 3 };
        let params = ModelParams::init(arch, seed);
        let rows: Vec<Vec<(usize, f64)>> = (0..n).map(|v| vec![(v % 4, 1.0), ((v + 1) % 4, 2.0)]).collect();
        let t = independent_distances(&Posteriors::compute(&params, &rows, false));
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(t.get(i, j), t.get(j, i));
            }
        }
    }
}
