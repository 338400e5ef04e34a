//! Slow reference computations for the fast paths: exhaustive enumeration,
//! Gauss-Hermite and trapezoid quadrature, Monte Carlo, brute-force ranking and
//! a straight-line transcription of the objective.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::bp_refine::RefinedMarginals;
use crate::error::{Error, Result};
use crate::eval::{rank_targets, DistanceTable};
use crate::gaussian::{
    compose_path, edge_mass, expected_sq_distance, kl_pair, kl_singleton, DiagGaussian,
    PairGaussian, PriorSpec,
};
use crate::graph::{
    enumerate_spanning_forests, min_spanning_forest, random_mas_init, soft_update,
    uniform_mas_weights, Graph, MasWeights, Sense, SpanningForest,
};
use crate::neural::{grad_check, softplus, Architecture, DenseNet, ModelParams, Posteriors, RHO_SCALE};
use crate::objective::{
    acvae_loss, edge_masses, full_objective, vae_elbo, BatchSpec, LossSettings, NoiseStream,
};
use crate::trainer::pi_update;

/// Outcome of one family of oracle comparisons.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed error, in the units of `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            cases: 0,
            failures: 0,
            worst: 0.0,
            tolerance,
        }
    }

    /// Records one comparison; NaN counts as a failure.
    pub fn record(&mut self, err: f64) {
        self.cases += 1;
        if err.is_nan() || err > self.tolerance {
            self.failures += 1;
        }
        if err.is_nan() || err > self.worst {
            self.worst = err;
        }
    }

    pub fn passed(&self) -> bool {
        self.cases > 0 && self.failures == 0
    }
}

// ---------------------------------------------------------------------------
// random fixtures

fn random_graph<R: Rng>(n: usize, p: f64, rng: &mut R) -> Graph {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    Graph::new(n, &edges).expect("indices in range")
}

fn random_diag<R: Rng>(d: usize, rng: &mut R) -> DiagGaussian {
    DiagGaussian {
        mean: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
        std: (0..d).map(|_| rng.random_range(0.3..2.0)).collect(),
    }
}

fn random_pair<R: Rng>(d: usize, rng: &mut R) -> PairGaussian {
    let (qi, qj) = (random_diag(d, rng), random_diag(d, rng));
    let rho = (0..d).map(|_| rng.random_range(-0.95..0.95)).collect();
    PairGaussian::new(&qi, &qj, rho).expect("valid draw")
}

/// Uniformly random labelled tree from a Prüfer sequence.
pub fn prufer_tree(n: usize, seq: &[usize]) -> Vec<(usize, usize)> {
    assert_eq!(seq.len(), n.saturating_sub(2));
    if n < 2 {
        return Vec::new();
    }
    let mut degree = vec![1usize; n];
    for &s in seq {
        degree[s] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for &s in seq {
        let leaf = (0..n).find(|&v| degree[v] == 1).expect("a leaf exists");
        edges.push((leaf, s));
        degree[leaf] -= 1;
        degree[s] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
    edges.push((rest[0], rest[1]));
    edges
}

/// Every rooted tree shape on `n` vertices as an edge list, by successor
/// enumeration of canonical level sequences (Beyer and Hedetniemi). Every
/// unlabelled tree appears at least once.
pub fn rooted_tree_shapes(n: usize) -> Vec<Vec<(usize, usize)>> {
    if n < 2 {
        return vec![Vec::new()];
    }
    let to_edges = |levels: &[usize]| {
        let mut last_at = vec![0usize; n];
        let mut edges = Vec::with_capacity(n - 1);
        for (v, &l) in levels.iter().enumerate().skip(1) {
            edges.push((last_at[l - 1], v));
            last_at[l] = v;
        }
        edges
    };
    let mut levels: Vec<usize> = (0..n).collect();
    let mut out = vec![to_edges(&levels)];
    loop {
        let Some(p) = (1..n).rev().find(|&i| levels[i] > 1) else {
            return out;
        };
        let q = (0..p).rev().find(|&i| levels[i] == levels[p] - 1).expect("parent level exists");
        for i in p..n {
            levels[i] = levels[i - (p - q)];
        }
        out.push(to_edges(&levels));
    }
}

/// Every Prüfer sequence of length `n - 2`.
pub fn all_prufer_sequences(n: usize) -> Vec<Vec<usize>> {
    let len = n.saturating_sub(2);
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..n).map(move |v| {
                    let mut t = s.clone();
                    t.push(v);
                    t
                })
            })
            .collect();
    }
    out
}

// ---------------------------------------------------------------------------
// spanning forests

/// Edge appearance frequencies over every maximal acyclic subgraph.
pub fn enumerated_marginals(g: &Graph, cap: usize) -> Result<Vec<f64>> {
    let forests = enumerate_spanning_forests(g, cap)?;
    let mut counts = vec![0usize; g.n_edges()];
    for f in &forests {
        for &e in f.edge_indices() {
            counts[e] += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / forests.len() as f64)
        .collect())
}

/// Forest with the extreme total cost among all enumerated forests.
pub fn enumerated_extreme(g: &Graph, costs: &[f64], sense: Sense, cap: usize) -> Result<SpanningForest> {
    let forests = enumerate_spanning_forests(g, cap)?;
    let total = |f: &SpanningForest| f.edge_indices().iter().map(|&e| costs[e]).sum::<f64>();
    let pick = forests.into_iter().reduce(|a, b| {
        let better = match sense {
            Sense::Min => total(&b) < total(&a),
            Sense::Max => total(&b) > total(&a),
        };
        if better {
            b
        } else {
            a
        }
    });
    pick.ok_or_else(|| Error::OracleScale("graph has no forest".into()))
}

const ENUMERATION_CAP: usize = 200_000;

/// Random graph with at most `max_n` vertices whose forests can be enumerated.
fn enumerable_graph<R: Rng>(min_n: usize, max_n: usize, rng: &mut R) -> Graph {
    loop {
        let n = rng.random_range(min_n..=max_n);
        let p = rng.random_range(0.2..0.6);
        let g = random_graph(n, p, rng);
        if g.n_edges() > 0 && enumerate_spanning_forests(&g, ENUMERATION_CAP).is_ok() {
            return g;
        }
    }
}

/// Uniform weights and Kruskal forests against exhaustive enumeration.
pub fn forest_suite(n_graphs: usize, seed: u64) -> Vec<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = CheckReport::new("uniform MAS weights vs enumeration", 1e-9);
    let mut min = CheckReport::new("min spanning forest vs enumeration", 0.0);
    let mut max = CheckReport::new("max spanning forest vs enumeration", 0.0);
    for _ in 0..n_graphs {
        let g = enumerable_graph(2, 10, &mut rng);
        let marg = enumerated_marginals(&g, ENUMERATION_CAP).expect("enumerable");
        let w = uniform_mas_weights(&g);
        let err = w
            .as_slice()
            .iter()
            .zip(&marg)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        uniform.record(err);
        let costs: Vec<f64> = (0..g.n_edges()).map(|_| rng.random::<f64>()).collect();
        for (sense, report) in [(Sense::Min, &mut min), (Sense::Max, &mut max)] {
            let fast = min_spanning_forest(&g, &costs, sense).expect("aligned costs");
            let slow = enumerated_extreme(&g, &costs, sense, ENUMERATION_CAP).expect("enumerable");
            report.record(fast.edit_distance(&slow) as f64);
        }
    }
    vec![uniform, min, max]
}

// ---------------------------------------------------------------------------
// Gaussian algebra

/// Probabilists' Gauss-Hermite rule (`E[f(u)]`, `u ~ N(0, 1)`) by Golub-Welsch.
pub fn gauss_hermite(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::<f64>::zeros(m, m);
    for k in 0..m.saturating_sub(1) {
        let b = ((k + 1) as f64).sqrt();
        jacobi[(k, k + 1)] = b;
        jacobi[(k + 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let nodes = eig.eigenvalues.iter().copied().collect();
    let weights = (0..m).map(|i| eig.eigenvectors[(0, i)].powi(2)).collect();
    (nodes, weights)
}

fn log_normal_1d(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * (2.0 * std::f64::consts::PI).ln() - std.ln() - 0.5 * z * z
}

fn log_bvn(x: Vector2<f64>, mean: Vector2<f64>, cov: Matrix2<f64>) -> f64 {
    let inv = cov.try_inverse().expect("positive definite");
    let r = x - mean;
    -(2.0 * std::f64::consts::PI).ln() - 0.5 * cov.determinant().ln() - 0.5 * (r.transpose() * inv * r)[0]
}

fn pair_cov(std_i: f64, std_j: f64, rho: f64) -> Matrix2<f64> {
    Matrix2::new(std_i * std_i, rho * std_i * std_j, rho * std_i * std_j, std_j * std_j)
}

fn prior_cov(tau: f64) -> Matrix2<f64> {
    Matrix2::new(1.0, tau, tau, 1.0)
}

/// `KL(q || N(0, I))` by Gauss-Hermite quadrature, one dimension at a time.
pub fn kl_singleton_quadrature(q: &DiagGaussian, nodes: usize) -> f64 {
    let (x, w) = gauss_hermite(nodes);
    (0..q.dim())
        .map(|k| {
            x.iter()
                .zip(&w)
                .map(|(&u, &wt)| {
                    let z = q.mean[k] + q.std[k] * u;
                    wt * (log_normal_1d(z, q.mean[k], q.std[k]) - log_normal_1d(z, 0.0, 1.0))
                })
                .sum::<f64>()
        })
        .sum()
}

/// `KL(q_ij || p_tau)` by tensor-product Gauss-Hermite quadrature in the
/// whitened coordinates of each dimension's bivariate normal.
pub fn kl_pair_quadrature(q: &PairGaussian, prior: PriorSpec, nodes: usize) -> f64 {
    let (x, w) = gauss_hermite(nodes);
    (0..q.dim())
        .map(|k| {
            let mean = Vector2::new(q.mean_i[k], q.mean_j[k]);
            let cov = pair_cov(q.std_i[k], q.std_j[k], q.rho[k]);
            let chol = cov.cholesky().expect("positive definite").l();
            let mut acc = 0.0;
            for (&u1, &w1) in x.iter().zip(&w) {
                for (&u2, &w2) in x.iter().zip(&w) {
                    let z = mean + chol * Vector2::new(u1, u2);
                    acc += w1 * w2 * (log_bvn(z, mean, cov) - log_bvn(z, Vector2::zeros(), prior_cov(prior.tau)));
                }
            }
            acc
        })
        .sum()
}

pub fn edge_mass_quadrature(q: &PairGaussian, prior: PriorSpec, nodes: usize) -> f64 {
    kl_pair_quadrature(q, prior, nodes)
        - kl_singleton_quadrature(&q.marginal_i(), nodes)
        - kl_singleton_quadrature(&q.marginal_j(), nodes)
}

/// Sample mean and standard error.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn sample_pair_dim<R: Rng>(q: &PairGaussian, k: usize, rng: &mut R) -> (f64, f64) {
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    let rho = q.rho[k];
    let zi = q.mean_i[k] + q.std_i[k] * a;
    let zj = q.mean_j[k] + q.std_j[k] * (rho * a + (1.0 - rho * rho).sqrt() * b);
    (zi, zj)
}

/// Monte Carlo estimates `(mean, standard error)` of the pair KL and of the
/// edge mass.
pub fn pair_monte_carlo<R: Rng>(q: &PairGaussian, prior: PriorSpec, n: usize, rng: &mut R) -> ((f64, f64), (f64, f64)) {
    let mut kl = Vec::with_capacity(n);
    let mut mass = Vec::with_capacity(n);
    for _ in 0..n {
        let (mut a, mut b) = (0.0, 0.0);
        for k in 0..q.dim() {
            let (zi, zj) = sample_pair_dim(q, k, rng);
            let z = Vector2::new(zi, zj);
            let mean = Vector2::new(q.mean_i[k], q.mean_j[k]);
            let lq = log_bvn(z, mean, pair_cov(q.std_i[k], q.std_j[k], q.rho[k]));
            let lp = log_bvn(z, Vector2::zeros(), prior_cov(prior.tau));
            let li = log_normal_1d(zi, q.mean_i[k], q.std_i[k]) - log_normal_1d(zi, 0.0, 1.0);
            let lj = log_normal_1d(zj, q.mean_j[k], q.std_j[k]) - log_normal_1d(zj, 0.0, 1.0);
            a += lq - lp;
            b += lq - lp - li - lj;
        }
        kl.push(a);
        mass.push(b);
    }
    (mean_se(&kl), mean_se(&mass))
}

pub fn singleton_monte_carlo<R: Rng>(q: &DiagGaussian, n: usize, rng: &mut R) -> (f64, f64) {
    let xs: Vec<f64> = (0..n)
        .map(|_| {
            (0..q.dim())
                .map(|k| {
                    let z = q.mean[k] + q.std[k] * rng.sample::<f64, _>(StandardNormal);
                    log_normal_1d(z, q.mean[k], q.std[k]) - log_normal_1d(z, 0.0, 1.0)
                })
                .sum()
        })
        .collect();
    mean_se(&xs)
}

/// Density of `(z_0, z_2)` in dimension `k` of the chain
/// `q01(z0, z1) q12(z1, z2) / q1(z1)`, integrating `z1` by the trapezoid rule.
pub fn chain_endpoint_density(q01: &PairGaussian, q12: &PairGaussian, k: usize, z0: f64, z2: f64) -> f64 {
    let (m1, s1) = (q01.mean_j[k], q01.std_j[k]);
    let n = 4001;
    let (lo, hi) = (m1 - 12.0 * s1, m1 + 12.0 * s1);
    let h = (hi - lo) / (n - 1) as f64;
    let c01 = pair_cov(q01.std_i[k], q01.std_j[k], q01.rho[k]);
    let c12 = pair_cov(q12.std_i[k], q12.std_j[k], q12.rho[k]);
    let mut acc = 0.0;
    for t in 0..n {
        let z1 = lo + h * t as f64;
        let log = log_bvn(Vector2::new(z0, z1), Vector2::new(q01.mean_i[k], m1), c01)
            + log_bvn(Vector2::new(z1, z2), Vector2::new(m1, q12.mean_j[k]), c12)
            - log_normal_1d(z1, m1, s1);
        let wt = if t == 0 || t == n - 1 { 0.5 } else { 1.0 };
        acc += wt * log.exp();
    }
    acc * h
}

fn random_chain<R: Rng>(d: usize, rng: &mut R) -> (Vec<DiagGaussian>, Vec<PairGaussian>) {
    let q: Vec<DiagGaussian> = (0..3).map(|_| random_diag(d, rng)).collect();
    let pairs = (0..2)
        .map(|l| {
            let rho = (0..d).map(|_| rng.random_range(-0.95..0.95)).collect();
            PairGaussian::new(&q[l], &q[l + 1], rho).expect("valid draw")
        })
        .collect();
    (q, pairs)
}

/// Largest relative density error of the composed 3-chain endpoint pair
/// against quadrature, over a few points around the mean.
pub fn chain_composition_error<R: Rng>(q: &[DiagGaussian], pairs: &[PairGaussian], rng: &mut R) -> f64 {
    let r = compose_path(q, pairs).expect("consistent chain");
    let mut worst: f64 = 0.0;
    for k in 0..r.dim() {
        for _ in 0..5 {
            let z0 = r.mean_i[k] + r.std_i[k] * rng.random_range(-1.5..1.5);
            let z2 = r.mean_j[k] + r.std_j[k] * rng.random_range(-1.5..1.5);
            let exact = log_bvn(
                Vector2::new(z0, z2),
                Vector2::new(r.mean_i[k], r.mean_j[k]),
                pair_cov(r.std_i[k], r.std_j[k], r.rho[k]),
            )
            .exp();
            let numeric = chain_endpoint_density(&pairs[0], &pairs[1], k, z0, z2);
            worst = worst.max((exact - numeric).abs() / numeric.abs().max(1e-300));
        }
    }
    worst
}

/// Monte Carlo estimate `(mean, standard error)` of the endpoint correlation in
/// dimension `k` of a 3-chain, sampling `z1 | z0` and `z2 | z1`.
pub fn chain_correlation_monte_carlo<R: Rng>(pairs: &[PairGaussian], k: usize, n: usize, rng: &mut R) -> (f64, f64) {
    let (a, b) = (&pairs[0], &pairs[1]);
    let mut z0s = Vec::with_capacity(n);
    let mut z2s = Vec::with_capacity(n);
    for _ in 0..n {
        let (z0, z1) = sample_pair_dim(a, k, rng);
        let u = (z1 - b.mean_i[k]) / b.std_i[k];
        let e: f64 = rng.sample(StandardNormal);
        let z2 = b.mean_j[k] + b.std_j[k] * (b.rho[k] * u + (1.0 - b.rho[k].powi(2)).sqrt() * e);
        z0s.push(z0);
        z2s.push(z2);
    }
    let (m0, _) = mean_se(&z0s);
    let (m2, _) = mean_se(&z2s);
    let cov: f64 = z0s.iter().zip(&z2s).map(|(x, y)| (x - m0) * (y - m2)).sum::<f64>() / n as f64;
    let v0: f64 = z0s.iter().map(|x| (x - m0).powi(2)).sum::<f64>() / n as f64;
    let v2: f64 = z2s.iter().map(|y| (y - m2).powi(2)).sum::<f64>() / n as f64;
    let r = cov / (v0 * v2).sqrt();
    (r, (1.0 - r * r) / (n as f64).sqrt())
}

/// Closed-form KLs, masses and path composition against quadrature and Monte
/// Carlo on `n_draws` random parameter sets each.
pub fn gaussian_suite(n_draws: usize, mc_samples: usize, seed: u64) -> Vec<CheckReport> {
    const QUAD_TOL: f64 = 1e-4;
    const NODES: usize = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut quad_single = CheckReport::new("singleton KL vs quadrature", QUAD_TOL);
    let mut quad_pair = CheckReport::new("pair KL vs quadrature", QUAD_TOL);
    let mut quad_mass = CheckReport::new("edge mass vs quadrature", QUAD_TOL);
    let mut quad_path = CheckReport::new("path composition vs quadrature", QUAD_TOL);
    let mut mc_single = CheckReport::new("singleton KL vs Monte Carlo (sigmas)", 3.0);
    let mut mc_pair = CheckReport::new("pair KL vs Monte Carlo (sigmas)", 3.0);
    let mut mc_mass = CheckReport::new("edge mass vs Monte Carlo (sigmas)", 3.0);
    let mut mc_path = CheckReport::new("path correlation vs Monte Carlo (sigmas)", 3.0);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    for _ in 0..n_draws {
        let d = rng.random_range(1..=3);
        let tau = rng.random_range(-0.99..0.99);
        let prior = PriorSpec::new(tau).expect("valid tau");
        let q = random_pair(d, &mut rng);
        let qi = q.marginal_i();

        let ks = kl_singleton(&qi).expect("valid");
        quad_single.record(rel(ks, kl_singleton_quadrature(&qi, NODES)));
        let kp = kl_pair(&q, prior).expect("valid");
        quad_pair.record(rel(kp, kl_pair_quadrature(&q, prior, NODES)));
        let m = edge_mass(&q, prior).expect("valid");
        quad_mass.record(rel(m, edge_mass_quadrature(&q, prior, NODES)));

        let (est, se) = singleton_monte_carlo(&qi, mc_samples, &mut rng);
        mc_single.record((ks - est).abs() / se);
        let ((kl_est, kl_se), (m_est, m_se)) = pair_monte_carlo(&q, prior, mc_samples, &mut rng);
        mc_pair.record((kp - kl_est).abs() / kl_se);
        mc_mass.record((m - m_est).abs() / m_se);

        let (chain_q, chain_pairs) = random_chain(d, &mut rng);
        quad_path.record(chain_composition_error(&chain_q, &chain_pairs, &mut rng));
        let composed = compose_path(&chain_q, &chain_pairs).expect("consistent chain");
        let k = rng.random_range(0..d);
        let (r_est, r_se) = chain_correlation_monte_carlo(&chain_pairs, k, mc_samples, &mut rng);
        mc_path.record((composed.rho[k] - r_est).abs() / r_se);
    }
    vec![
        quad_single, quad_pair, quad_mass, quad_path, mc_single, mc_pair, mc_mass, mc_path,
    ]
}

// ---------------------------------------------------------------------------
// gradients

/// Pulls encoder means towards zero and shrinks the deviations, so that
/// strongly correlated pairs have negative mass and the negative-sampling
/// branch is exercised.
fn concentrate_posteriors(params: &mut ModelParams, std_bias: f64) {
    let d = params.arch.latent_dim;
    let net = &mut params.encoder;
    let h = net.n_hidden;
    let w2 = net.n_in * h + h;
    for w in &mut net.params[w2..w2 + d * h] {
        *w *= 0.05;
    }
    let b2 = w2 + 2 * d * h;
    for k in 0..d {
        net.params[b2 + d + k] = std_bias;
    }
}

/// Ten-vertex fixture with cycles and random count features.
pub fn gradient_fixture(seed: u64) -> (ModelParams, Vec<Vec<(usize, f64)>>, Graph) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 10;
    let dim = 12;
    let g = loop {
        let g = random_graph(n, 0.35, &mut rng);
        if g.n_edges() >= 12 {
            break g;
        }
    };
    let rows = random_rows(n, dim, &mut rng);
    let arch = Architecture {
        input_dim: dim,
        latent_dim: 3,
        h1: 6,
        h2: 5,
    };
    let mut params = ModelParams::init(arch, seed);
    concentrate_posteriors(&mut params, -2.3);
    (params, rows, g)
}

/// Worst relative error of the analytic minibatch gradient against central
/// differences under frozen noise. Relative errors use `floor` as the smallest
/// denominator.
pub fn gradient_suite(n_params: usize, floor: f64, seed: u64) -> CheckReport {
    let (params, rows, g) = gradient_fixture(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = uniform_mas_weights(&g);
    let settings = LossSettings {
        gamma: 5.0,
        ..LossSettings::default()
    };
    let edges: Vec<usize> = (0..g.n_edges()).step_by(2).collect();
    let batch = BatchSpec::sample(&g, 6, edges, 10, 7, &mut rng);
    let noise = NoiseStream::new(seed);
    let loss = |p: &ModelParams| {
        let (l, grads) = acvae_loss(p, &rows, &g, &w, &settings, &batch, noise).expect("valid fixture");
        (l.total, grads)
    };
    let mut report = CheckReport::new("minibatch gradient vs central differences", 1e-4);
    // one sample per call so that every sampled parameter is recorded
    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0xd1ff);
    for _ in 0..n_params {
        report.record(grad_check(&params, loss, 1, pick.random(), floor));
    }
    report
}

// ---------------------------------------------------------------------------
// subgraph distribution updates

fn random_rows<R: Rng>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<(usize, f64)>> {
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = Vec::new();
        for k in 0..dim {
            if rng.random::<f64>() < 0.5 {
                row.push((k, rng.random_range(1..5) as f64));
            }
        }
        row.push((rng.random_range(0..dim), 1.0));
        row.sort_unstable_by_key(|e| e.0);
        row.dedup_by_key(|e| e.0);
        rows.push(row);
    }
    rows
}

/// One `alpha = 1` update with frozen posteriors lands on the enumerated
/// optimum; the weight sum is preserved over a long fuzz run.
pub fn pi_update_suite(n_graphs: usize, n_fuzz: usize, seed: u64) -> Vec<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut optimal = CheckReport::new("alpha=1 update vs enumerated optimal forest", 0.0);
    for _ in 0..n_graphs {
        let g = enumerable_graph(6, 10, &mut rng);
        let dim = 8;
        let rows = random_rows(g.n_vertices(), dim, &mut rng);
        let arch = Architecture {
            input_dim: dim,
            latent_dim: 3,
            h1: 6,
            h2: 5,
        };
        let params = ModelParams::init(arch, rng.random());
        let settings = LossSettings::default();
        let masses = edge_masses(&Posteriors::compute(&params, &rows, true), &g, settings.prior);
        let w0 = random_mas_init(&g, rng.random());
        for sense in [Sense::Min, Sense::Max] {
            let (w, _) = pi_update(&params, &rows, &g, &w0, &settings, sense, 1.0).expect("finite masses");
            let best = enumerated_extreme(&g, &masses, sense, ENUMERATION_CAP).expect("enumerable");
            let ok = w == MasWeights::indicator(&g, &best);
            optimal.record(if ok { 0.0 } else { 1.0 });
        }
    }

    let mut sums = CheckReport::new("weight sum and range after every update", 1e-12);
    let g = loop {
        let g = random_graph(10, 0.3, &mut rng);
        if g.n_components() > 1 && g.n_edges() > 10 {
            break g;
        }
    };
    let target = g.forest_size() as f64;
    let mut w = random_mas_init(&g, rng.random());
    for _ in 0..n_fuzz {
        let costs: Vec<f64> = (0..g.n_edges()).map(|_| rng.sample(StandardNormal)).collect();
        let sense = if rng.random::<bool>() { Sense::Min } else { Sense::Max };
        let alpha = 1.0 - rng.random::<f64>();
        let forest = min_spanning_forest(&g, &costs, sense).expect("aligned costs");
        w = soft_update(&w, &forest, alpha).expect("alpha in range");
        let in_range = w.as_slice().iter().all(|x| (0.0..=1.0).contains(x));
        sums.record(if in_range { (w.sum() - target).abs() } else { f64::INFINITY });
    }
    vec![optimal, sums]
}

// ---------------------------------------------------------------------------
// objective transcription

fn dense_forward(net: &DenseNet, x: &DVector<f64>) -> DVector<f64> {
    let (n_in, h, n_out) = (net.n_in, net.n_hidden, net.n_out);
    let p = &net.params;
    let w1 = DMatrix::from_fn(h, n_in, |j, i| p[i * h + j]);
    let b1 = DVector::from_fn(h, |j, _| p[n_in * h + j]);
    let off = n_in * h + h;
    let w2 = DMatrix::from_fn(n_out, h, |o, j| p[off + o * h + j]);
    let b2 = DVector::from_fn(n_out, |o, _| p[off + n_out * h + o]);
    let hidden = (w1 * x + b1).map(f64::tanh);
    w2 * hidden + b2
}

fn dense_row(row: &[(usize, f64)], dim: usize) -> DVector<f64> {
    let mut x = DVector::zeros(dim);
    for &(k, v) in row {
        x[k] = v;
    }
    x
}

fn gaussian_kl(mean_q: &DVector<f64>, cov_q: &DMatrix<f64>, mean_p: &DVector<f64>, cov_p: &DMatrix<f64>) -> f64 {
    let n = mean_q.len() as f64;
    let inv_p = cov_p.clone().try_inverse().expect("positive definite");
    let diff = mean_p - mean_q;
    0.5 * ((&inv_p * cov_q).trace() + (diff.transpose() * &inv_p * &diff)[0] - n
        + cov_p.determinant().ln()
        - cov_q.determinant().ln())
}

/// The adaptive objective written out term by term with dense linear algebra
/// and full covariance matrices, sharing only the noise stream and parameters
/// with the library path.
pub fn straight_line_objective(
    params: &ModelParams,
    rows: &[Vec<(usize, f64)>],
    g: &Graph,
    w: &[f64],
    tau: f64,
    gamma: f64,
    noise: NoiseStream,
    step: u64,
) -> f64 {
    let dim = params.arch.input_dim;
    let d = params.arch.latent_dim;
    let n = rows.len();
    let xs: Vec<DVector<f64>> = rows.iter().map(|r| dense_row(r, dim)).collect();
    let mut means = Vec::with_capacity(n);
    let mut stds = Vec::with_capacity(n);
    for x in &xs {
        let out = dense_forward(&params.encoder, x);
        means.push(DVector::from_fn(d, |k, _| out[k]));
        stds.push(DVector::from_fn(d, |k, _| softplus(out[d + k])));
    }
    let rho = |i: usize, j: usize| -> DVector<f64> {
        let mut xij = DVector::zeros(2 * dim);
        xij.rows_mut(0, dim).copy_from(&xs[i]);
        xij.rows_mut(dim, dim).copy_from(&xs[j]);
        let mut xji = DVector::zeros(2 * dim);
        xji.rows_mut(0, dim).copy_from(&xs[j]);
        xji.rows_mut(dim, dim).copy_from(&xs[i]);
        let a = dense_forward(&params.corr, &xij);
        let b = dense_forward(&params.corr, &xji);
        DVector::from_fn(d, |k, _| RHO_SCALE * (0.5 * (a[k] + b[k])).tanh())
    };
    let single_kl = |v: usize| {
        let cov = DMatrix::from_diagonal(&stds[v].map(|s| s * s));
        gaussian_kl(&means[v], &cov, &DVector::zeros(d), &DMatrix::identity(d, d))
    };
    // joint 2d-dimensional Gaussian of (z_i, z_j) against the joint prior
    let mass = |i: usize, j: usize| {
        let r = rho(i, j);
        let mut mean = DVector::zeros(2 * d);
        let mut cov = DMatrix::zeros(2 * d, 2 * d);
        let mut prior = DMatrix::identity(2 * d, 2 * d);
        for k in 0..d {
            mean[k] = means[i][k];
            mean[d + k] = means[j][k];
            cov[(k, k)] = stds[i][k].powi(2);
            cov[(d + k, d + k)] = stds[j][k].powi(2);
            let c = r[k] * stds[i][k] * stds[j][k];
            cov[(k, d + k)] = c;
            cov[(d + k, k)] = c;
            prior[(k, d + k)] = tau;
            prior[(d + k, k)] = tau;
        }
        gaussian_kl(&mean, &cov, &DVector::zeros(2 * d), &prior) - single_kl(i) - single_kl(j)
    };

    let mut total = 0.0;
    for v in 0..n {
        let eps = noise.normals(step, v, 0, d);
        let z = DVector::from_fn(d, |k, _| means[v][k] + stds[v][k] * eps[k]);
        let logits = dense_forward(&params.decoder, &z);
        let max = logits.max();
        let lse = max + logits.map(|l| (l - max).exp()).sum().ln();
        total += xs[v].dot(&logits.map(|l| l - lse));
        total -= single_kl(v);
    }
    for (e, &(i, j)) in g.edges().iter().enumerate() {
        if w[e] != 0.0 {
            total -= w[e] * mass(i, j);
        }
    }
    if gamma > 0.0 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for a in 0..n {
            for b in a + 1..n {
                if !g.has_edge(a, b) {
                    sum += (-mass(a, b)).max(0.0);
                    count += 1;
                }
            }
        }
        if count > 0 {
            total -= gamma * sum / count as f64;
        }
    }
    total
}

/// Six-vertex fixture with a cycle, a pendant path and an isolated vertex.
pub fn objective_fixture(seed: u64) -> (ModelParams, Vec<Vec<(usize, f64)>>, Graph) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Graph::new(6, &[(0, 1), (1, 2), (0, 2), (2, 3), (3, 4)]).expect("valid");
    let rows = random_rows(6, 8, &mut rng);
    let arch = Architecture {
        input_dim: 8,
        latent_dim: 3,
        h1: 5,
        h2: 4,
    };
    let mut params = ModelParams::init(arch, seed);
    concentrate_posteriors(&mut params, -2.3);
    (params, rows, g)
}

/// Library objective against the straight-line transcription, and the
/// degenerate case against the plain VAE bound.
pub fn objective_suite(seed: u64) -> Vec<CheckReport> {
    let (params, rows, g) = objective_fixture(seed);
    let noise = NoiseStream::new(seed);
    let mut transcription = CheckReport::new("full objective vs straight-line transcription", 1e-10);
    let mut degenerate = CheckReport::new("w=0, gamma=0 objective vs VAE bound (bitwise)", 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (k, gamma) in [0.0, 3.0, 50.0].into_iter().enumerate() {
        let weights = [
            uniform_mas_weights(&g),
            random_mas_init(&g, rng.random()),
            MasWeights::zeros(g.n_edges()),
        ];
        for w in &weights {
            let settings = LossSettings {
                gamma,
                ..LossSettings::default()
            };
            let fast = full_objective(&params, &rows, &g, w, &settings, noise, k as u64).expect("valid");
            let slow = straight_line_objective(&params, &rows, &g, w.as_slice(), settings.prior.tau, gamma, noise, k as u64);
            transcription.record((fast.total - slow).abs());
        }
    }
    for step in 0..3 {
        let settings = LossSettings::default();
        let w = MasWeights::zeros(g.n_edges());
        let acvae = full_objective(&params, &rows, &g, &w, &settings, noise, step).expect("valid");
        let vae = vae_elbo(&params, &rows, 1, noise, step).expect("valid");
        degenerate.record(if acvae.total.to_bits() == vae.total.to_bits() { 0.0 } else { 1.0 });
    }
    vec![transcription, degenerate]
}

// ---------------------------------------------------------------------------
// belief-propagation refinement

fn random_tree_marginals<R: Rng>(edges: &[(usize, usize)], n: usize, d: usize, rng: &mut R) -> (Graph, RefinedMarginals) {
    let g = Graph::new(n, edges).expect("valid tree");
    let forest = SpanningForest::from_edge_indices(&g, (0..g.n_edges()).collect()).expect("tree");
    let q: Vec<DiagGaussian> = (0..n).map(|_| random_diag(d, rng)).collect();
    let pairs = g
        .edges()
        .iter()
        .enumerate()
        .map(|(e, &(i, j))| {
            let rho = (0..d).map(|_| rng.random_range(-0.99..0.99)).collect();
            (e, PairGaussian::new(&q[i], &q[j], rho).expect("valid"))
        })
        .collect();
    let rm = RefinedMarginals::new(&g, forest, q, pairs).expect("consistent");
    (g, rm)
}

/// Number of `(i, j)` entries where the incremental table differs bitwise
/// from per-pair composition, plus the number of refined pairs whose endpoint
/// marginals differ from the singletons.
fn tree_mismatches(rm: &RefinedMarginals, n: usize) -> (usize, usize) {
    let table = rm.all_pairs_distances(None, None);
    let mut dist = 0;
    let mut marg = 0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let pair = rm.refine_pair(i, j).expect("distinct");
            let direct = expected_sq_distance(&pair);
            if table.get(i, j).map(f64::to_bits) != Some(direct.to_bits()) {
                dist += 1;
            }
            if pair.marginal_i() != *rm.singleton(i) || pair.marginal_j() != *rm.singleton(j) {
                marg += 1;
            }
        }
    }
    (dist, marg)
}

/// Exhaustive over labelled trees up to `exhaustive_max` vertices; every tree
/// shape (randomly labelled) and `random_per_size` random labelled trees for
/// each size up to `max_n`.
pub fn bp_suite(exhaustive_max: usize, max_n: usize, random_per_size: usize, seed: u64) -> Vec<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut incremental = CheckReport::new("incremental distances vs per-pair composition (bitwise)", 0.0);
    let mut singletons = CheckReport::new("refined endpoint marginals equal singletons (exact)", 0.0);
    let mut record = |rm: &RefinedMarginals, n: usize| {
        let (dist, marg) = tree_mismatches(rm, n);
        incremental.record(dist as f64);
        singletons.record(marg as f64);
    };
    for n in 2..=max_n {
        let mut trees: Vec<Vec<(usize, usize)>> = if n <= exhaustive_max {
            all_prufer_sequences(n).iter().map(|s| prufer_tree(n, s)).collect()
        } else {
            (0..random_per_size)
                .map(|_| {
                    let seq: Vec<usize> = (0..n - 2).map(|_| rng.random_range(0..n)).collect();
                    prufer_tree(n, &seq)
                })
                .collect()
        };
        for shape in rooted_tree_shapes(n) {
            let label = crate::dataset::permutation(n, &mut rng);
            trees.push(shape.iter().map(|&(a, b)| (label[a], label[b])).collect());
        }
        for edges in trees {
            let d = rng.random_range(1..=3);
            let (_, rm) = random_tree_marginals(&edges, n, d, &mut rng);
            record(&rm, n);
        }
    }
    let mut chain = CheckReport::new("3-chain refined pair vs quadrature", 1e-4);
    for _ in 0..20 {
        let d = rng.random_range(1..=3);
        let (_, rm) = random_tree_marginals(&[(0, 1), (1, 2)], 3, d, &mut rng);
        let q: Vec<DiagGaussian> = (0..3).map(|v| rm.singleton(v).clone()).collect();
        let pairs = vec![rm.refine_pair(0, 1).expect("edge"), rm.refine_pair(1, 2).expect("edge")];
        let r = rm.refine_pair(0, 2).expect("path");
        assert_eq!(r, compose_path(&q, &pairs).expect("consistent"));
        chain.record(chain_composition_error(&q, &pairs, &mut rng));
    }
    vec![incremental, singletons, chain]
}

// ---------------------------------------------------------------------------
// ranking

/// CRR of every vertex by sorting its candidates: a target's rank is the
/// 1-based position of the last candidate whose distance does not exceed it.
pub fn brute_force_crr(dist: &[Vec<f64>], train: &[(usize, usize)], test: &[(usize, usize)]) -> Vec<Option<f64>> {
    let n = dist.len();
    let adjacent = |a: usize, b: usize| train.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a));
    (0..n)
        .map(|i| {
            let targets: Vec<usize> = test
                .iter()
                .filter_map(|&(a, b)| match (a == i, b == i) {
                    (true, _) => Some(b),
                    (_, true) => Some(a),
                    _ => None,
                })
                .collect();
            if targets.is_empty() {
                return None;
            }
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&k| k != i && !adjacent(i, k))
                .map(|k| (dist[i][k], k))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0));
            let crr = targets
                .iter()
                .map(|&j| {
                    let dj = dist[i][j];
                    let last = cand.iter().rposition(|c| c.0 <= dj).expect("target is a candidate");
                    1.0 / (last + 1) as f64
                })
                .sum();
            Some(crr)
        })
        .collect()
}

/// Hand-placed 7-vertex instance with ties, a train-neighbour closer than the
/// targets, and a vertex with two heldout edges.
pub fn ranking_fixture() -> (Vec<Vec<f64>>, Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let upper = [
        (0, 1, 1.0), (0, 2, 2.0), (0, 3, 2.0), (0, 4, 0.5), (0, 5, 3.0), (0, 6, 4.0),
        (1, 2, 1.5), (1, 3, 2.5), (1, 4, 3.5), (1, 5, 0.7), (1, 6, 2.5),
        (2, 3, 0.2), (2, 4, 1.1), (2, 5, 1.1), (2, 6, 5.0),
        (3, 4, 2.2), (3, 5, 0.9), (3, 6, 1.3),
        (4, 5, 6.0), (4, 6, 0.4),
        (5, 6, 2.0),
    ];
    let mut dist = vec![vec![0.0; 7]; 7];
    for (a, b, x) in upper {
        dist[a][b] = x;
        dist[b][a] = x;
    }
    let train = vec![(0, 4), (2, 3), (4, 6), (1, 5)];
    let test = vec![(0, 1), (0, 2), (2, 5), (3, 6), (1, 6)];
    (dist, train, test)
}

/// Library NCRR against the brute-force ranking on the fixture, and perfect
/// rankings scoring exactly one.
pub fn ranking_suite() -> Vec<CheckReport> {
    let mut fixture = CheckReport::new("NCRR vs brute-force ranking on 7-vertex fixture", 0.0);
    let (dist, train, test) = ranking_fixture();
    let table = DistanceTable::from_fn(7, |i, j| dist[i][j]);
    let g = Graph::new(7, &train).expect("valid");
    let report = rank_targets(&table, &test, &g).expect("complete table");
    let oracle = brute_force_crr(&dist, &train, &test);
    for i in 0..7 {
        let same = match (report.crr[i], oracle[i]) {
            (Some(a), Some(b)) => a == b,
            (None, None) => true,
            _ => false,
        };
        fixture.record(if same { 0.0 } else { 1.0 });
    }

    let mut perfect = CheckReport::new("perfect rankings score NCRR = 1", 0.0);
    // targets placed strictly ahead of every other candidate
    for t in 1..=4usize {
        let n = 8;
        let g = Graph::new(n, &[]).expect("valid");
        let test: Vec<(usize, usize)> = (1..=t).map(|j| (0, j)).collect();
        let table = DistanceTable::from_fn(n, |i, j| if i == 0 { j as f64 } else { 10.0 + (i + j) as f64 });
        let r = rank_targets(&table, &test, &g).expect("complete table");
        perfect.record((r.ncrr[0].expect("has targets") - 1.0).abs());
    }
    vec![fixture, perfect]
}

/// Names accepted by [`run_suite`].
pub const SUITES: [&str; 7] = ["forest", "gaussian", "gradient", "pi", "objective", "bp", "ranking"];

/// Runs one named suite (or `all`) at acceptance sizes.
pub fn run_suite(name: &str, seed: u64) -> Result<Vec<CheckReport>> {
    Ok(match name {
        "forest" => forest_suite(60, seed),
        "gaussian" => gaussian_suite(50, 20_000, seed),
        "gradient" => vec![gradient_suite(200, 1e-3, seed)],
        "pi" => pi_update_suite(30, 200, seed),
        "objective" => objective_suite(seed),
        "bp" => bp_suite(6, 12, 100, seed),
        "ranking" => ranking_suite(),
        "all" => {
            let mut out = Vec::new();
            for s in SUITES {
                out.extend(run_suite(s, seed)?);
            }
            out
        }
        other => {
            return Err(Error::Input(format!(
                "unknown suite '{other}' (expected one of {} or all)",
                SUITES.join(", ")
            )))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prufer_counts_and_trees() {
        assert_eq!(all_prufer_sequences(5).len(), 125);
        for seq in all_prufer_sequences(5) {
            let edges = prufer_tree(5, &seq);
            let g = Graph::new(5, &edges).unwrap();
            assert_eq!(g.n_edges(), 4);
            assert_eq!(g.n_components(), 1);
        }
    }

    #[test]
    fn rooted_shape_counts() {
        // rooted unlabelled trees: OEIS A000081
        let counts: Vec<usize> = (1..=9).map(|n| rooted_tree_shapes(n).len()).collect();
        assert_eq!(counts, vec![1, 1, 2, 4, 9, 20, 48, 115, 286]);
        for edges in rooted_tree_shapes(7) {
            let g = Graph::new(7, &edges).unwrap();
            assert_eq!((g.n_edges(), g.n_components()), (6, 1));
        }
    }

    #[test]
    fn gauss_hermite_moments() {
        let (x, w) = gauss_hermite(10);
        let m = |p: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum::<f64>();
        assert!((m(0) - 1.0).abs() < 1e-12);
        assert!(m(1).abs() < 1e-12);
        assert!((m(2) - 1.0).abs() < 1e-12);
        assert!((m(4) - 3.0).abs() < 1e-10);
    }

    #[test]
    fn brute_force_fixture_values() {
        let (dist, train, test) = ranking_fixture();
        let crr = brute_force_crr(&dist, &train, &test);
        // vertex 0: candidates 1,2,3,5,6 at 1,2,2,3,4; targets 1 (rank 1) and 2 (rank 3, tied with 3)
        assert_eq!(crr[0], Some(1.0 + 1.0 / 3.0));
        assert_eq!(crr[4], None);
    }

    #[test]
    fn fixtures_activate_negative_sampling() {
        let (params, rows, g) = objective_fixture(3);
        let settings = LossSettings {
            gamma: 3.0,
            ..LossSettings::default()
        };
        let w = uniform_mas_weights(&g);
        let l = full_objective(&params, &rows, &g, &w, &settings, NoiseStream::new(3), 0).unwrap();
        assert!(l.negative_sampling > 0.0, "{l:?}");

        let (params, rows, g) = gradient_fixture(3);
        let post = Posteriors::compute(&params, &rows, true);
        let mut negative = 0;
        for a in 0..10 {
            for b in a + 1..10 {
                if !g.has_edge(a, b) && edge_mass(&post.pair(a, b), settings.prior).unwrap() < 0.0 {
                    negative += 1;
                }
            }
        }
        assert!(negative > 0);
    }

    #[test]
    fn small_suites_pass() {
        for r in ranking_suite() {
            assert!(r.passed(), "{r:?}");
        }
        for r in objective_suite(1) {
            assert!(r.passed(), "{r:?}");
        }
        for r in forest_suite(5, 2) {
            assert!(r.passed(), "{r:?}");
        }
    }
}
