//! Two-layer feedforward networks with hand-derived gradients, and Adam.
//!
//! Three networks make up a model:
//!
//! * `encoder`: features -> tanh hidden -> `(mean, raw_std)`, `std = softplus(raw_std)`
//! * `corr`: concatenated `(x_i, x_j)` -> tanh hidden -> `raw_rho`,
//!   `rho = 0.999 tanh((raw(x_i, x_j) + raw(x_j, x_i)) / 2)`
//! * `decoder`: latent -> tanh hidden -> vocabulary logits
//!
//! Inputs are sparse `(index, value)` lists so bag-of-words features stay cheap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::gaussian::{DiagGaussian, PairGaussian};

/// Bound applied to learned correlations.
pub const RHO_SCALE: f64 = 0.999;

/// Sparse vector entries `(index, value)`.
pub type Sparse = [(usize, f64)];

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `input -> tanh(W1 x + b1) -> W2 h + b2`, parameters stored flat as
/// `[W1^T (n_in x n_hidden) | b1 | W2 (n_out x n_hidden) | b2]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub params: Vec<f64>,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub hidden: Vec<f64>,
    pub out: Vec<f64>,
}

impl DenseNet {
    pub fn n_params(n_in: usize, n_hidden: usize, n_out: usize) -> usize {
        n_in * n_hidden + n_hidden + n_out * n_hidden + n_out
    }

    pub fn zeros(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_hidden,
            n_out,
            params: vec![0.0; Self::n_params(n_in, n_hidden, n_out)],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(n_in: usize, n_hidden: usize, n_out: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(n_in, n_hidden, n_out);
        let a1 = (6.0 / (n_in + n_hidden) as f64).sqrt();
        let a2 = (6.0 / (n_hidden + n_out) as f64).sqrt();
        let (w1, rest) = net.params.split_at_mut(n_in * n_hidden);
        for w in w1 {
            *w = rng.random_range(-a1..a1);
        }
        let w2 = &mut rest[n_hidden..n_hidden + n_out * n_hidden];
        for w in w2 {
            *w = rng.random_range(-a2..a2);
        }
        net
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.n_in * self.n_hidden;
        let w2 = b1 + self.n_hidden;
        let b2 = w2 + self.n_out * self.n_hidden;
        (b1, w2, b2)
    }

    /// Hidden pre-activation contribution of a sparse input, without bias.
    pub fn project(&self, x: &Sparse) -> Vec<f64> {
        let h = self.n_hidden;
        let mut pre = vec![0.0; h];
        for &(i, v) in x {
            let row = &self.params[i * h..(i + 1) * h];
            for (p, w) in pre.iter_mut().zip(row) {
                *p += w * v;
            }
        }
        pre
    }

    /// Finishes a forward pass from a hidden pre-activation without bias.
    pub fn forward_from_projection(&self, mut pre: Vec<f64>) -> Forward {
        let (b1, w2, b2) = self.offsets();
        let h = self.n_hidden;
        for (p, b) in pre.iter_mut().zip(&self.params[b1..b1 + h]) {
            *p = (*p + b).tanh();
        }
        let hidden = pre;
        let out = (0..self.n_out)
            .map(|o| {
                let row = &self.params[w2 + o * h..w2 + (o + 1) * h];
                row.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>() + self.params[b2 + o]
            })
            .collect();
        Forward { hidden, out }
    }

    pub fn forward(&self, x: &Sparse) -> Forward {
        self.forward_from_projection(self.project(x))
    }

    /// Accumulates parameter gradients for `d_out` into `grad`; when `d_x` is
    /// given, writes the input gradient at the indices present in `x`.
    pub fn backward(
        &self,
        x: &Sparse,
        fwd: &Forward,
        d_out: &[f64],
        grad: &mut [f64],
        d_x: Option<&mut [f64]>,
    ) {
        let (b1, w2, b2) = self.offsets();
        let h = self.n_hidden;
        let mut d_pre = vec![0.0; h];
        for (o, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[b2 + o] += g;
            let row = w2 + o * h;
            for k in 0..h {
                grad[row + k] += g * fwd.hidden[k];
                d_pre[k] += g * self.params[row + k];
            }
        }
        for (d, a) in d_pre.iter_mut().zip(&fwd.hidden) {
            *d *= 1.0 - a * a;
        }
        for k in 0..h {
            grad[b1 + k] += d_pre[k];
        }
        for &(i, v) in x {
            let row = &mut grad[i * h..(i + 1) * h];
            for (g, d) in row.iter_mut().zip(&d_pre) {
                *g += d * v;
            }
        }
        if let Some(d_x) = d_x {
            for &(i, _) in x {
                let row = &self.params[i * h..(i + 1) * h];
                d_x[i] = row.iter().zip(&d_pre).map(|(w, d)| w * d).sum();
            }
        }
    }
}

/// Network sizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub h1: usize,
    pub h2: usize,
}

/// Variational (`encoder`, `corr`) and generative (`decoder`) parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Architecture,
    pub encoder: DenseNet,
    pub corr: DenseNet,
    pub decoder: DenseNet,
}

/// Gradient buffers shaped like [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub encoder: Vec<f64>,
    pub corr: Vec<f64>,
    pub decoder: Vec<f64>,
}

impl ModelGrads {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Self {
            encoder: vec![0.0; p.encoder.params.len()],
            corr: vec![0.0; p.corr.params.len()],
            decoder: vec![0.0; p.decoder.params.len()],
        }
    }

    pub fn parts(&self) -> [&[f64]; 3] {
        [&self.encoder, &self.corr, &self.decoder]
    }

    pub fn parts_mut(&mut self) -> [&mut Vec<f64>; 3] {
        [&mut self.encoder, &mut self.corr, &mut self.decoder]
    }

    pub fn len(&self) -> usize {
        self.encoder.len() + self.corr.len() + self.decoder.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Entry `k` of the concatenation `encoder | corr | decoder`.
    pub fn get(&self, mut k: usize) -> f64 {
        for part in self.parts() {
            if k < part.len() {
                return part[k];
            }
            k -= part.len();
        }
        panic!("gradient index out of range");
    }

    pub fn set(&mut self, mut k: usize, value: f64) {
        for part in self.parts_mut() {
            if k < part.len() {
                part[k] = value;
                return;
            }
            k -= part.len();
        }
        panic!("gradient index out of range");
    }

    pub fn scale(&mut self, c: f64) {
        for part in self.parts_mut() {
            part.iter_mut().for_each(|g| *g *= c);
        }
    }
}

/// Forward activations of a single encoder call, kept for backprop.
#[derive(Clone, Debug)]
pub struct EncodeTrace {
    pub fwd: Forward,
    pub q: DiagGaussian,
}

/// Forward activations of one ordered correlation-net call.
#[derive(Clone, Debug)]
pub struct CorrTrace {
    pub forward_ij: Forward,
    pub forward_ji: Forward,
    pub raw_mean: Vec<f64>,
    pub rho: Vec<f64>,
}

/// Per-vertex first-layer terms of the correlation network.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrProjection {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// Concatenation `(x_i, x_j)` for the correlation network.
pub fn concat(x_i: &Sparse, x_j: &Sparse, input_dim: usize) -> Vec<(usize, f64)> {
    x_i.iter()
        .copied()
        .chain(x_j.iter().map(|&(k, v)| (k + input_dim, v)))
        .collect()
}

pub fn dense_to_sparse(z: &[f64]) -> Vec<(usize, f64)> {
    z.iter().copied().enumerate().collect()
}

impl ModelParams {
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = arch.latent_dim;
        Self {
            arch,
            encoder: DenseNet::init(arch.input_dim, arch.h1, 2 * d, &mut rng),
            corr: DenseNet::init(2 * arch.input_dim, arch.h2, d, &mut rng),
            decoder: DenseNet::init(d, arch.h1, arch.input_dim, &mut rng),
        }
    }

    pub fn zeros(arch: Architecture) -> Self {
        let d = arch.latent_dim;
        Self {
            arch,
            encoder: DenseNet::zeros(arch.input_dim, arch.h1, 2 * d),
            corr: DenseNet::zeros(2 * arch.input_dim, arch.h2, d),
            decoder: DenseNet::zeros(d, arch.h1, arch.input_dim),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn n_params(&self) -> usize {
        self.encoder.params.len() + self.corr.params.len() + self.decoder.params.len()
    }

    fn parts_mut(&mut self) -> [&mut Vec<f64>; 3] {
        [
            &mut self.encoder.params,
            &mut self.corr.params,
            &mut self.decoder.params,
        ]
    }

    fn slot(&mut self, mut k: usize) -> &mut f64 {
        for part in self.parts_mut() {
            if k < part.len() {
                return &mut part[k];
            }
            k -= part.len();
        }
        panic!("parameter index out of range");
    }

    /// Entry `k` of the concatenation `encoder | corr | decoder`.
    pub fn get(&self, k: usize) -> f64 {
        let mut copy_k = k;
        for part in [
            &self.encoder.params,
            &self.corr.params,
            &self.decoder.params,
        ] {
            if copy_k < part.len() {
                return part[copy_k];
            }
            copy_k -= part.len();
        }
        panic!("parameter index {k} out of range");
    }

    pub fn set(&mut self, k: usize, value: f64) {
        *self.slot(k) = value;
    }

    fn check_input(&self, x: &Sparse) -> Result<()> {
        match x.iter().find(|(i, _)| *i >= self.input_dim()) {
            Some((i, _)) => input(format!(
                "feature index {i} out of range for input dimension {}",
                self.input_dim()
            )),
            None => Ok(()),
        }
    }

    pub fn encode_trace(&self, x: &Sparse) -> EncodeTrace {
        let fwd = self.encoder.forward(x);
        let d = self.latent_dim();
        let q = DiagGaussian {
            mean: fwd.out[..d].to_vec(),
            std: fwd.out[d..].iter().map(|&r| softplus(r)).collect(),
        };
        EncodeTrace { fwd, q }
    }

    /// Singleton variational posterior `q(z_i | x_i)`.
    pub fn encode(&self, x: &Sparse) -> Result<DiagGaussian> {
        self.check_input(x)?;
        Ok(self.encode_trace(x).q)
    }

    /// First-layer contributions of `x` in the first and second input slots of
    /// the correlation network.
    pub fn corr_projection(&self, x: &Sparse) -> CorrProjection {
        let dim = self.input_dim();
        let shifted: Vec<(usize, f64)> = x.iter().map(|&(k, v)| (k + dim, v)).collect();
        CorrProjection {
            first: self.corr.project(x),
            second: self.corr.project(&shifted),
        }
    }

    pub fn corr_from_projections(&self, pi: &CorrProjection, pj: &CorrProjection) -> CorrTrace {
        let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>();
        let forward_ij = self.corr.forward_from_projection(add(&pi.first, &pj.second));
        let forward_ji = self.corr.forward_from_projection(add(&pj.first, &pi.second));
        let raw_mean: Vec<f64> = forward_ij
            .out
            .iter()
            .zip(&forward_ji.out)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        let rho = raw_mean.iter().map(|&r| RHO_SCALE * r.tanh()).collect();
        CorrTrace {
            forward_ij,
            forward_ji,
            raw_mean,
            rho,
        }
    }

    pub fn corr_trace(&self, x_i: &Sparse, x_j: &Sparse) -> CorrTrace {
        self.corr_from_projections(&self.corr_projection(x_i), &self.corr_projection(x_j))
    }

    /// Pairwise variational posterior `q(z_i, z_j | x_i, x_j)`; its marginals
    /// are exactly `encode(x_i)` and `encode(x_j)`.
    pub fn encode_pair(&self, x_i: &Sparse, x_j: &Sparse) -> Result<PairGaussian> {
        self.check_input(x_i)?;
        self.check_input(x_j)?;
        let qi = self.encode_trace(x_i).q;
        let qj = self.encode_trace(x_j).q;
        let rho = self.corr_trace(x_i, x_j).rho;
        Ok(PairGaussian {
            mean_i: qi.mean,
            mean_j: qj.mean,
            std_i: qi.std,
            std_j: qj.std,
            rho,
        })
    }

    pub fn decoder_logits(&self, z: &[f64]) -> Vec<f64> {
        self.decoder.forward(&dense_to_sparse(z)).out
    }

    /// `sum_w x_w log softmax(decoder(z))_w`. An all-zero `x` scores 0 and sets
    /// `empty`.
    pub fn decode_log_likelihood(&self, z: &[f64], x: &Sparse) -> Result<LogLikelihood> {
        if z.len() != self.latent_dim() {
            return input(format!(
                "latent vector has {} dims, expected {}",
                z.len(),
                self.latent_dim()
            ));
        }
        self.check_input(x)?;
        if x.iter().any(|(_, v)| *v < 0.0) {
            return input("negative count in feature vector");
        }
        let logits = self.decoder_logits(z);
        Ok(log_likelihood_from_logits(&logits, x))
    }

    /// Log-likelihood of `x` at `z`. Gradients of `scale * ll` are accumulated
    /// into the decoder buffer `grad` and returned for `z`.
    pub fn decode_backward(
        &self,
        z: &[f64],
        x: &Sparse,
        scale: f64,
        grad: &mut [f64],
    ) -> (f64, Vec<f64>) {
        let zs = dense_to_sparse(z);
        let fwd = self.decoder.forward(&zs);
        let ll = log_likelihood_from_logits(&fwd.out, x).value;
        let total: f64 = x.iter().map(|(_, v)| v).sum();
        let probs = softmax(&fwd.out);
        let mut d_out: Vec<f64> = probs.iter().map(|p| -scale * total * p).collect();
        for &(w, v) in x {
            d_out[w] += scale * v;
        }
        let mut d_z = vec![0.0; z.len()];
        self.decoder.backward(&zs, &fwd, &d_out, grad, Some(&mut d_z));
        (ll, d_z)
    }
}

/// Singleton posteriors of every vertex, with cached correlation-net
/// projections so that any pair is `O(h2 d)`.
#[derive(Clone, Debug)]
pub struct Posteriors<'a> {
    params: &'a ModelParams,
    q: Vec<DiagGaussian>,
    proj: Vec<CorrProjection>,
    correlated: bool,
}

impl<'a> Posteriors<'a> {
    /// With `correlated == false` every pair is independent.
    pub fn compute(params: &'a ModelParams, rows: &[Vec<(usize, f64)>], correlated: bool) -> Self {
        let q = rows.iter().map(|x| params.encode_trace(x).q).collect();
        let proj = if correlated {
            rows.iter().map(|x| params.corr_projection(x)).collect()
        } else {
            Vec::new()
        };
        Self {
            params,
            q,
            proj,
            correlated,
        }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn singleton(&self, i: usize) -> &DiagGaussian {
        &self.q[i]
    }

    pub fn singletons(&self) -> &[DiagGaussian] {
        &self.q
    }

    pub fn rho(&self, i: usize, j: usize) -> Vec<f64> {
        if self.correlated {
            self.params
                .corr_from_projections(&self.proj[i], &self.proj[j])
                .rho
        } else {
            vec![0.0; self.params.latent_dim()]
        }
    }

    pub fn pair(&self, i: usize, j: usize) -> PairGaussian {
        let (qi, qj) = (&self.q[i], &self.q[j]);
        PairGaussian {
            mean_i: qi.mean.clone(),
            mean_j: qj.mean.clone(),
            std_i: qi.std.clone(),
            std_j: qj.std.clone(),
            rho: self.rho(i, j),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    pub empty: bool,
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

fn log_likelihood_from_logits(logits: &[f64], x: &Sparse) -> LogLikelihood {
    if x.iter().all(|(_, v)| *v == 0.0) {
        return LogLikelihood {
            value: 0.0,
            empty: true,
        };
    }
    let lsm = log_softmax(logits);
    LogLikelihood {
        value: x.iter().map(|&(w, v)| v * lsm[w]).sum(),
        empty: false,
    }
}

/// Adam with bias correction. `step` minimizes: pass the gradient of the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: ModelGrads,
    v: ModelGrads,
}

impl AdamState {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: ModelGrads::zeros_like(params),
            v: ModelGrads::zeros_like(params),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelGrads) -> Result<()> {
        for (name, part) in ["encoder", "corr", "decoder"].iter().zip(grads.parts()) {
            if let Some(k) = part.iter().position(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient {} at {name}[{k}] (adam step {})",
                    part[k], self.step
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let targets = [
            &mut params.encoder.params,
            &mut params.corr.params,
            &mut params.decoder.params,
        ];
        for (((p, g), m), v) in targets
            .into_iter()
            .zip(grads.parts())
            .zip(self.m.parts_mut())
            .zip(self.v.parts_mut())
        {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Largest relative disagreement between analytic and central-difference
/// gradients over `n_samples` randomly chosen parameters. Relative error is
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check<F>(params: &ModelParams, loss: F, n_samples: usize, seed: u64, floor: f64) -> f64
where
    F: Fn(&ModelParams) -> (f64, ModelGrads),
{
    const H: f64 = 1e-4;
    let (_, analytic) = loss(params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..n_samples {
        let k = rng.random_range(0..params.n_params());
        let orig = params.get(k);
        probe.set(k, orig + H);
        let up = loss(&probe).0;
        probe.set(k, orig - H);
        let down = loss(&probe).0;
        probe.set(k, orig);
        let numeric = (up - down) / (2.0 * H);
        let a = analytic.get(k);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}
