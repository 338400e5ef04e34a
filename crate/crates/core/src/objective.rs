//! ELBO assembly for the VAE, CVAE and adaptive-prior objectives.
//!
//! Every objective here is an instance of
//!
//! ```text
//! total = sum_i ( E_q[log p(x_i | z_i)] - KL(q_i || p_i) )
//!       - sum_e w_e m_e
//!       - gamma * mean_{non-edges} max(0, -m_ab)
//! ```
//!
//! where `m_e` is the edge mass of the pairwise posterior. With `w = 0` and
//! `gamma = 0` it is the plain VAE bound. Minibatch estimates scale each term by
//! population over batch size, so they are unbiased for the full sums (and for
//! the non-edge mean).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::permutation;
use crate::error::{input, Result};
use crate::gaussian::{
    edge_mass_dim, edge_mass_dim_grad, kl_singleton_dim, kl_singleton_dim_grad, Bivariate,
    BivariateGrad, PriorSpec,
};
use crate::graph::{Graph, MasWeights};
use crate::neural::{concat, sigmoid, CorrProjection, CorrTrace, EncodeTrace, ModelGrads, ModelParams, RHO_SCALE};
use crate::gaussian::DiagGaussian;

/// The terms of one objective evaluation. `total` is maximized.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub singleton_kl: f64,
    pub pairwise_penalty: f64,
    pub negative_sampling: f64,
    pub total: f64,
}

/// Prior, negative-sampling weight and correlation model shared by all terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSettings {
    pub prior: PriorSpec,
    pub gamma: f64,
    /// When false the pairwise posteriors are independent (`rho = 0`).
    pub correlated: bool,
    /// Reparameterized samples per vertex for the reconstruction term.
    pub samples: usize,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            prior: PriorSpec::default(),
            gamma: 0.0,
            correlated: true,
            samples: 1,
        }
    }
}

/// Counter-based standard-normal noise keyed by `(seed, step, vertex, sample)`,
/// so any evaluation can be replayed exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseStream {
    pub seed: u64,
}

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn normals(&self, step: u64, vertex: usize, sample: usize, d: usize) -> Vec<f64> {
        let key = mix(mix(mix(self.seed) ^ step) ^ vertex as u64) ^ sample as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(key));
        (0..d).map(|_| rng.sample(StandardNormal)).collect()
    }
}

/// Index sets of one stochastic estimate and the factors that unbias it.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchSpec {
    pub vertices: Vec<usize>,
    pub edges: Vec<usize>,
    pub negatives: Vec<(usize, usize)>,
    pub vertex_scale: f64,
    pub edge_scale: f64,
    pub negative_scale: f64,
    /// Noise counter for this batch.
    pub step: u64,
}

/// Number of unordered non-adjacent distinct pairs.
pub fn n_non_edges(g: &Graph) -> usize {
    let n = g.n_vertices();
    n * n.saturating_sub(1) / 2 - g.n_edges()
}

fn all_non_edges(g: &Graph) -> Vec<(usize, usize)> {
    let n = g.n_vertices();
    let mut out = Vec::with_capacity(n_non_edges(g));
    for a in 0..n {
        for b in a + 1..n {
            if !g.has_edge(a, b) {
                out.push((a, b));
            }
        }
    }
    out
}

impl BatchSpec {
    /// Explicit batch; checks indices and that negatives are distinct,
    /// non-adjacent pairs. Scales follow from the population sizes.
    pub fn new(
        g: &Graph,
        vertices: Vec<usize>,
        edges: Vec<usize>,
        negatives: Vec<(usize, usize)>,
        step: u64,
    ) -> Result<Self> {
        if let Some(v) = vertices.iter().find(|&&v| v >= g.n_vertices()) {
            return input(format!("batch vertex {v} out of range"));
        }
        if let Some(e) = edges.iter().find(|&&e| e >= g.n_edges()) {
            return input(format!("batch edge {e} out of range"));
        }
        for &(a, b) in &negatives {
            if a == b || a >= g.n_vertices() || b >= g.n_vertices() || g.has_edge(a, b) {
                return input(format!("({a}, {b}) is not a valid non-edge"));
            }
        }
        let ratio = |pop: usize, size: usize| if size == 0 { 0.0 } else { pop as f64 / size as f64 };
        Ok(Self {
            vertex_scale: ratio(g.n_vertices(), vertices.len()),
            edge_scale: ratio(g.n_edges(), edges.len()),
            negative_scale: if negatives.is_empty() {
                0.0
            } else {
                1.0 / negatives.len() as f64
            },
            vertices,
            edges,
            negatives,
            step,
        })
    }

    /// Every vertex, every edge and every non-edge.
    pub fn full(g: &Graph, step: u64) -> Self {
        Self::new(
            g,
            (0..g.n_vertices()).collect(),
            (0..g.n_edges()).collect(),
            all_non_edges(g),
            step,
        )
        .expect("full population is a valid batch")
    }

    /// `b1` vertices without replacement, the given edges, and `n_neg` uniformly
    /// drawn non-edges (fewer if the graph is nearly complete).
    pub fn sample<R: Rng>(
        g: &Graph,
        b1: usize,
        edges: Vec<usize>,
        n_neg: usize,
        step: u64,
        rng: &mut R,
    ) -> Self {
        let n = g.n_vertices();
        let mut vertices = permutation(n, rng);
        vertices.truncate(b1.min(n));
        let mut negatives = Vec::with_capacity(n_neg);
        if n >= 2 && n_non_edges(g) > 0 {
            let mut attempts = 0;
            while negatives.len() < n_neg && attempts < 100 * n_neg.max(1) {
                attempts += 1;
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                if a != b && !g.has_edge(a, b) {
                    negatives.push((a.min(b), a.max(b)));
                }
            }
        }
        Self::new(g, vertices, edges, negatives, step).expect("sampled indices are valid")
    }
}

/// Upstream gradients for one vertex's `(mean, std)`.
struct VertexGrad {
    mean: Vec<f64>,
    std: Vec<f64>,
}

/// Encoder activations and accumulated upstream gradients of the vertices
/// touched by a batch, so each encoder backward pass runs once per vertex.
struct Workspace<'a> {
    params: &'a ModelParams,
    rows: &'a [Vec<(usize, f64)>],
    tau: f64,
    traces: Vec<Option<EncodeTrace>>,
    grads: Vec<Option<VertexGrad>>,
    projections: Vec<Option<CorrProjection>>,
}

impl<'a> Workspace<'a> {
    fn touch(&mut self, v: usize) -> &DiagGaussian {
        if self.traces[v].is_none() {
            self.traces[v] = Some(self.params.encode_trace(&self.rows[v]));
            let d = self.params.latent_dim();
            self.grads[v] = Some(VertexGrad {
                mean: vec![0.0; d],
                std: vec![0.0; d],
            });
        }
        &self.traces[v].as_ref().expect("just filled").q
    }

    fn grad(&mut self, v: usize) -> &mut VertexGrad {
        self.grads[v].as_mut().expect("vertex touched first")
    }

    fn projection(&mut self, v: usize) -> &CorrProjection {
        if self.projections[v].is_none() {
            self.projections[v] = Some(self.params.corr_projection(&self.rows[v]));
        }
        self.projections[v].as_ref().expect("just filled")
    }

    fn corr(&mut self, correlated: bool, i: usize, j: usize) -> Option<CorrTrace> {
        if !correlated {
            return None;
        }
        self.projection(i);
        self.projection(j);
        let (pi, pj) = (&self.projections[i], &self.projections[j]);
        Some(self.params.corr_from_projections(
            pi.as_ref().expect("filled"),
            pj.as_ref().expect("filled"),
        ))
    }

    fn bivariate(&mut self, i: usize, j: usize, corr: Option<&CorrTrace>) -> Vec<Bivariate> {
        let qi = self.touch(i).clone();
        let qj = self.touch(j);
        (0..qi.dim())
            .map(|k| Bivariate {
                mean_i: qi.mean[k],
                mean_j: qj.mean[k],
                std_i: qi.std[k],
                std_j: qj.std[k],
                rho: corr.map_or(0.0, |c| c.rho[k]),
            })
            .collect()
    }

    /// Adds `coef * d(mass)/d(params)` for the pair, where `mass` is the summed
    /// per-dimension edge mass.
    fn push_mass_grad(
        &mut self,
        i: usize,
        j: usize,
        dims: &[Bivariate],
        corr: Option<&CorrTrace>,
        coef: f64,
        grads: &mut ModelGrads,
    ) {
        let g: Vec<BivariateGrad> = dims.iter().map(|&q| edge_mass_dim_grad(q, self.tau)).collect();
        let gi = self.grad(i);
        for (k, gk) in g.iter().enumerate() {
            gi.mean[k] += coef * gk.mean_i;
            gi.std[k] += coef * gk.std_i;
        }
        let gj = self.grad(j);
        for (k, gk) in g.iter().enumerate() {
            gj.mean[k] += coef * gk.mean_j;
            gj.std[k] += coef * gk.std_j;
        }
        if let Some(corr) = corr {
            // rho = RHO_SCALE tanh(r), r = (out_ij + out_ji) / 2
            let d_out: Vec<f64> = g
                .iter()
                .zip(&corr.raw_mean)
                .map(|(gk, &r)| {
                    let t = r.tanh();
                    0.5 * coef * gk.rho * RHO_SCALE * (1.0 - t * t)
                })
                .collect();
            let dim = self.params.input_dim();
            let (xi, xj) = (&self.rows[i], &self.rows[j]);
            let net = &self.params.corr;
            net.backward(&concat(xi, xj, dim), &corr.forward_ij, &d_out, &mut grads.corr, None);
            net.backward(&concat(xj, xi, dim), &corr.forward_ji, &d_out, &mut grads.corr, None);
        }
    }
}

fn check_inputs(
    params: &ModelParams,
    rows: &[Vec<(usize, f64)>],
    g: &Graph,
    w: &MasWeights,
    settings: &LossSettings,
    batch: &BatchSpec,
) -> Result<()> {
    if rows.len() != g.n_vertices() {
        return input(format!(
            "{} feature rows for {} vertices",
            rows.len(),
            g.n_vertices()
        ));
    }
    if w.len() != g.n_edges() {
        return input(format!("{} weights for {} edges", w.len(), g.n_edges()));
    }
    if !(settings.gamma >= 0.0) {
        return input(format!("gamma {} must be nonnegative", settings.gamma));
    }
    if settings.samples == 0 {
        return input("at least one reparameterization sample is required");
    }
    PriorSpec::new(settings.prior.tau)?;
    if batch.vertices.is_empty() {
        return input("empty vertex batch");
    }
    if batch.edges.is_empty() && w.as_slice().iter().any(|&x| x != 0.0) {
        return input("empty edge batch with nonzero edge weights");
    }
    if batch.negatives.is_empty() && settings.gamma > 0.0 && n_non_edges(g) > 0 {
        return input("empty negative batch with positive gamma");
    }
    if let Some(&(k, _)) = rows
        .iter()
        .flatten()
        .find(|&&(k, _)| k >= params.input_dim())
    {
        return input(format!("feature index {k} exceeds model input dimension"));
    }
    Ok(())
}

/// Minibatch estimate of the objective and, optionally, its gradient
/// (ascent direction) with respect to every network parameter.
fn evaluate(
    params: &ModelParams,
    rows: &[Vec<(usize, f64)>],
    g: &Graph,
    w: &MasWeights,
    settings: &LossSettings,
    batch: &BatchSpec,
    noise: NoiseStream,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<ModelGrads>)> {
    check_inputs(params, rows, g, w, settings, batch)?;
    let d = params.latent_dim();
    let tau = settings.prior.tau;
    let mut grads = ModelGrads::zeros_like(params);
    let mut ws = Workspace {
        params,
        rows,
        tau,
        traces: vec![None; g.n_vertices()],
        grads: (0..g.n_vertices()).map(|_| None).collect(),
        projections: vec![None; g.n_vertices()],
    };
    let mut out = LossBreakdown::default();

    // reconstruction and singleton KL
    let per_sample = 1.0 / settings.samples as f64;
    for &v in &batch.vertices {
        let q = ws.touch(v).clone();
        for s in 0..settings.samples {
            let eps = noise.normals(batch.step, v, s, d);
            let z: Vec<f64> = (0..d).map(|k| q.mean[k] + q.std[k] * eps[k]).collect();
            let scale = batch.vertex_scale * per_sample;
            let (ll, d_z) = params.decode_backward(&z, &rows[v], scale, &mut grads.decoder);
            out.reconstruction += scale * ll;
            let gv = ws.grad(v);
            for k in 0..d {
                gv.mean[k] += d_z[k];
                gv.std[k] += d_z[k] * eps[k];
            }
        }
        let kl: f64 = (0..d).map(|k| kl_singleton_dim(q.mean[k], q.std[k])).sum();
        out.singleton_kl += batch.vertex_scale * kl;
        let gv = ws.grad(v);
        for k in 0..d {
            let (dm, ds) = kl_singleton_dim_grad(q.mean[k], q.std[k]);
            gv.mean[k] -= batch.vertex_scale * dm;
            gv.std[k] -= batch.vertex_scale * ds;
        }
    }

    // weighted edge masses
    for &e in &batch.edges {
        let weight = w.as_slice()[e];
        if weight == 0.0 {
            continue;
        }
        let (i, j) = g.edges()[e];
        let corr = ws.corr(settings.correlated, i, j);
        let dims = ws.bivariate(i, j, corr.as_ref());
        let mass: f64 = dims.iter().map(|&q| edge_mass_dim(q, tau)).sum();
        let coef = batch.edge_scale * weight;
        out.pairwise_penalty += coef * mass;
        if want_grad {
            ws.push_mass_grad(i, j, &dims, corr.as_ref(), -coef, &mut grads);
        }
    }

    // negative sampling on non-edges
    if settings.gamma > 0.0 {
        for &(a, b) in &batch.negatives {
            let corr = ws.corr(settings.correlated, a, b);
            let dims = ws.bivariate(a, b, corr.as_ref());
            let mass: f64 = dims.iter().map(|&q| edge_mass_dim(q, tau)).sum();
            if mass < 0.0 {
                let coef = settings.gamma * batch.negative_scale;
                out.negative_sampling -= coef * mass;
                if want_grad {
                    ws.push_mass_grad(a, b, &dims, corr.as_ref(), coef, &mut grads);
                }
            }
        }
    }

    out.total = out.reconstruction - out.singleton_kl - out.pairwise_penalty - out.negative_sampling;

    if !want_grad {
        return Ok((out, None));
    }
    for v in 0..g.n_vertices() {
        let (Some(trace), Some(gv)) = (&ws.traces[v], &ws.grads[v]) else {
            continue;
        };
        let d_out: Vec<f64> = gv
            .mean
            .iter()
            .copied()
            .chain(
                gv.std
                    .iter()
                    .zip(&trace.fwd.out[d..])
                    .map(|(gs, &raw)| gs * sigmoid(raw)),
            )
            .collect();
        params
            .encoder
            .backward(&rows[v], &trace.fwd, &d_out, &mut grads.encoder, None);
    }
    Ok((out, Some(grads)))
}

/// Stochastic estimate of the adaptive-prior objective on `batch` with its
/// gradient.
#[allow(clippy::too_many_arguments)]
pub fn acvae_loss(
    params: &ModelParams,
    rows: &[Vec<(usize, f64)>],
    g: &Graph,
    w: &MasWeights,
    settings: &LossSettings,
    batch: &BatchSpec,
    noise: NoiseStream,
) -> Result<(LossBreakdown, ModelGrads)> {
    let (loss, grads) = evaluate(params, rows, g, w, settings, batch, noise, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

/// Loss only, no gradient.
#[allow(clippy::too_many_arguments)]
pub fn batch_objective(
    params: &ModelParams,
    rows: &[Vec<(usize, f64)>],
    g: &Graph,
    w: &MasWeights,
    settings: &LossSettings,
    batch: &BatchSpec,
    noise: NoiseStream,
) -> Result<LossBreakdown> {
    Ok(evaluate(params, rows, g, w, settings, batch, noise, false)?.0)
}

/// The plain VAE bound `sum_i E_q[log p(x_i | z_i)] - KL(q_i || N(0, I))`
/// over all vertices, with the same noise as [`full_objective`].
pub fn vae_elbo(
    params: &ModelParams,
    rows: &[Vec<(usize, f64)>],
    samples: usize,
    noise: NoiseStream,
    step: u64,
) -> Result<LossBreakdown> {
    if samples == 0 {
        return input("at least one reparameterization sample is required");
    }
    let d = params.latent_dim();
    let mut reconstruction = 0.0;
    let mut singleton_kl = 0.0;
    for (v, x) in rows.iter().enumerate() {
        let q = params.encode(x)?;
        for s in 0..samples {
            let eps = noise.normals(step, v, s, d);
            let z: Vec<f64> = (0..d).map(|k| q.mean[k] + q.std[k] * eps[k]).collect();
            reconstruction += (1.0 / samples as f64) * params.decode_log_likelihood(&z, x)?.value;
        }
        singleton_kl += (0..d).map(|k| kl_singleton_dim(q.mean[k], q.std[k])).sum::<f64>();
    }
    Ok(LossBreakdown {
        reconstruction,
        singleton_kl,
        pairwise_penalty: 0.0,
        negative_sampling: 0.0,
        total: reconstruction - singleton_kl,
    })
}

/// Exact (unsubsampled) objective. Noise uses counter `step`.
pub fn full_objective(
    params: &ModelParams,
    rows: &[Vec<(usize, f64)>],
    g: &Graph,
    w: &MasWeights,
    settings: &LossSettings,
    noise: NoiseStream,
    step: u64,
) -> Result<LossBreakdown> {
    let mut batch = BatchSpec::full(g, step);
    if w.as_slice().iter().all(|&x| x == 0.0) {
        batch.edges.clear();
    }
    if settings.gamma == 0.0 {
        batch.negatives.clear();
    }
    batch_objective(params, rows, g, w, settings, &batch, noise)
}

/// Baseline CVAE objectives: uniform MAS weights with either learned
/// correlations (`cvae_corr`) or independent pairs (`cvae_ind`).
pub fn cvae_loss(
    params: &ModelParams,
    rows: &[Vec<(usize, f64)>],
    g: &Graph,
    uniform_weights: &MasWeights,
    settings: &LossSettings,
    correlated: bool,
    noise: NoiseStream,
    step: u64,
) -> Result<LossBreakdown> {
    let settings = LossSettings {
        correlated,
        ..*settings
    };
    full_objective(params, rows, g, uniform_weights, &settings, noise, step)
}

/// Edge mass of every edge at the current parameters, in edge order.
pub fn edge_masses(
    posteriors: &crate::neural::Posteriors<'_>,
    g: &Graph,
    prior: PriorSpec,
) -> Vec<f64> {
    g.edges()
        .iter()
        .map(|&(i, j)| {
            let pair = posteriors.pair(i, j);
            (0..pair.dim())
                .map(|k| edge_mass_dim(pair.dim_params(k), prior.tau))
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::uniform_mas_weights;
    use crate::neural::Architecture;

    fn fixture() -> (ModelParams, Vec<Vec<(usize, f64)>>, Graph) {
        let arch = Architecture {
            input_dim: 8,
            latent_dim: 3,
            h1: 6,
            h2: 5,
        };
        let rows = vec![
            vec![(0, 2.0), (3, 1.0)],
            vec![(1, 1.0), (2, 1.0), (7, 3.0)],
            vec![(4, 2.0)],
            vec![(0, 1.0), (5, 1.0), (6, 1.0)],
            vec![(2, 4.0)],
            vec![(3, 1.0), (7, 1.0)],
        ];
        let g = Graph::new(6, &[(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5), (5, 3)]).unwrap();
        (ModelParams::init(arch, 17), rows, g)
    }

    #[test]
    fn zero_weights_reduce_to_vae() {
        let (p, rows, g) = fixture();
        let settings = LossSettings::default();
        let noise = NoiseStream::new(4);
        let vae = full_objective(&p, &rows, &g, &MasWeights::zeros(g.n_edges()), &settings, noise, 0)
            .unwrap();
        assert_eq!(vae.pairwise_penalty, 0.0);
        assert_eq!(vae.negative_sampling, 0.0);
        assert_eq!(vae.total, vae.reconstruction - vae.singleton_kl);
    }

    #[test]
    fn prior_matching_posteriors_have_no_kl() {
        let (p, rows, g) = fixture();
        let mut p0 = ModelParams::zeros(p.arch);
        // raw std = softplus^{-1}(1) so std is exactly one
        let d = p0.latent_dim();
        let b2 = p0.encoder.params.len() - 2 * d;
        for k in d..2 * d {
            p0.encoder.params[b2 + k] = (1f64.exp() - 1.0).ln();
        }
        let settings = LossSettings {
            prior: PriorSpec::new(0.0).unwrap(),
            ..LossSettings::default()
        };
        let w = uniform_mas_weights(&g);
        let out = full_objective(&p0, &rows, &g, &w, &settings, NoiseStream::new(1), 0).unwrap();
        assert!(out.singleton_kl.abs() < 1e-12);
        assert!(out.pairwise_penalty.abs() < 1e-12);
        let _ = p;
    }

    #[test]
    fn affine_in_weights() {
        let (p, rows, g) = fixture();
        let settings = LossSettings {
            gamma: 10.0,
            ..LossSettings::default()
        };
        let noise = NoiseStream::new(9);
        let a = crate::graph::random_mas_init(&g, 1);
        let b = uniform_mas_weights(&g);
        let mid = MasWeights::new(
            &g,
            a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| 0.5 * (x + y)).collect(),
        )
        .unwrap();
        let f = |w: &MasWeights| full_objective(&p, &rows, &g, w, &settings, noise, 3).unwrap().total;
        assert!((f(&mid) - 0.5 * (f(&a) + f(&b))).abs() < 1e-9);
    }

    #[test]
    fn penalty_is_weighted_edge_mass() {
        let (p, rows, g) = fixture();
        let settings = LossSettings::default();
        let noise = NoiseStream::new(2);
        let w = uniform_mas_weights(&g);
        let post = crate::neural::Posteriors::compute(&p, &rows, true);
        let masses = edge_masses(&post, &g, settings.prior);
        let f = |w: &MasWeights| full_objective(&p, &rows, &g, w, &settings, noise, 0).unwrap().total;
        let expected: f64 = w.as_slice().iter().zip(&masses).map(|(a, b)| a * b).sum();
        assert!(((f(&MasWeights::zeros(g.n_edges())) - f(&w)) - expected).abs() < 1e-9);
    }

    #[test]
    fn empty_batches_rejected() {
        let (p, rows, g) = fixture();
        let w = uniform_mas_weights(&g);
        let batch = BatchSpec::new(&g, vec![], vec![0], vec![], 0).unwrap();
        assert!(acvae_loss(&p, &rows, &g, &w, &LossSettings::default(), &batch, NoiseStream::new(0)).is_err());
        assert!(BatchSpec::new(&g, vec![0], vec![], vec![(0, 1)], 0).is_err());
    }

    #[test]
    fn independent_pairs_vanish_at_zero_tau() {
        let (p, rows, g) = fixture();
        let settings = LossSettings {
            prior: PriorSpec::new(0.0).unwrap(),
            correlated: false,
            ..LossSettings::default()
        };
        let w = uniform_mas_weights(&g);
        let out = full_objective(&p, &rows, &g, &w, &settings, NoiseStream::new(0), 0).unwrap();
        assert!(out.pairwise_penalty.abs() < 1e-12);
    }
}
