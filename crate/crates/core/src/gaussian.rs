//! Closed-form algebra for diagonal and per-dimension bivariate Gaussians.
//!
//! Pairwise distributions factorize over latent dimensions: dimension `k` of a
//! [`PairGaussian`] is the bivariate normal with means `(mean_i[k], mean_j[k])`,
//! standard deviations `(std_i[k], std_j[k])` and correlation `rho[k]`. The
//! pairwise prior is the same shape with zero means, unit deviations and
//! correlation `tau` in every dimension.

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

/// Floor applied to arguments of `ln` and to divisors.
pub const FLOOR: f64 = 1e-12;

const CONSISTENCY_TOL: f64 = 1e-6;

fn ln_floor(x: f64) -> f64 {
    x.max(FLOOR).ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        let g = Self { mean, std };
        g.validate()?;
        Ok(g)
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return input(format!(
                "mean has {} dims, std has {}",
                self.mean.len(),
                self.std.len()
            ));
        }
        if let Some(s) = self.std.iter().find(|s| !(**s > 0.0)) {
            return input(format!("standard deviation {s} is not positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairGaussian {
    pub mean_i: Vec<f64>,
    pub mean_j: Vec<f64>,
    pub std_i: Vec<f64>,
    pub std_j: Vec<f64>,
    pub rho: Vec<f64>,
}

impl PairGaussian {
    pub fn new(qi: &DiagGaussian, qj: &DiagGaussian, rho: Vec<f64>) -> Result<Self> {
        let pair = Self {
            mean_i: qi.mean.clone(),
            mean_j: qj.mean.clone(),
            std_i: qi.std.clone(),
            std_j: qj.std.clone(),
            rho,
        };
        pair.validate()?;
        Ok(pair)
    }

    /// Product of the two marginals.
    pub fn independent(qi: &DiagGaussian, qj: &DiagGaussian) -> Self {
        Self {
            mean_i: qi.mean.clone(),
            mean_j: qj.mean.clone(),
            std_i: qi.std.clone(),
            std_j: qj.std.clone(),
            rho: vec![0.0; qi.dim()],
        }
    }

    /// The pairwise prior written as a pair distribution.
    pub fn prior(d: usize, prior: PriorSpec) -> Self {
        Self {
            mean_i: vec![0.0; d],
            mean_j: vec![0.0; d],
            std_i: vec![1.0; d],
            std_j: vec![1.0; d],
            rho: vec![prior.tau; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.rho.len()
    }

    pub fn marginal_i(&self) -> DiagGaussian {
        DiagGaussian {
            mean: self.mean_i.clone(),
            std: self.std_i.clone(),
        }
    }

    pub fn marginal_j(&self) -> DiagGaussian {
        DiagGaussian {
            mean: self.mean_j.clone(),
            std: self.std_j.clone(),
        }
    }

    /// Exchanges the roles of `i` and `j`.
    pub fn swapped(&self) -> Self {
        Self {
            mean_i: self.mean_j.clone(),
            mean_j: self.mean_i.clone(),
            std_i: self.std_j.clone(),
            std_j: self.std_i.clone(),
            rho: self.rho.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.rho.len();
        if [&self.mean_i, &self.mean_j, &self.std_i, &self.std_j]
            .iter()
            .any(|v| v.len() != d)
        {
            return input("pair gaussian fields have mismatched dimensions");
        }
        if let Some(s) = self.std_i.iter().chain(&self.std_j).find(|s| !(**s > 0.0)) {
            return input(format!("standard deviation {s} is not positive"));
        }
        if let Some(r) = self.rho.iter().find(|r| !(r.abs() < 1.0)) {
            return input(format!("correlation {r} outside (-1, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub tau: f64,
}

impl PriorSpec {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau.abs() < 1.0) {
            return input(format!("prior correlation {tau} outside (-1, 1)"));
        }
        Ok(Self { tau })
    }
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { tau: 0.99 }
    }
}

/// KL of one dimension of `N(mean, std^2)` to `N(0, 1)`.
#[inline]
pub fn kl_singleton_dim(mean: f64, std: f64) -> f64 {
    0.5 * (std * std + mean * mean - 1.0 - 2.0 * ln_floor(std))
}

/// Partial derivatives of [`kl_singleton_dim`] with respect to `(mean, std)`.
#[inline]
pub fn kl_singleton_dim_grad(mean: f64, std: f64) -> (f64, f64) {
    (mean, std - 1.0 / std.max(FLOOR))
}

/// Per-dimension parameters of a bivariate normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bivariate {
    pub mean_i: f64,
    pub mean_j: f64,
    pub std_i: f64,
    pub std_j: f64,
    pub rho: f64,
}

/// Gradient of a scalar with respect to the fields of a [`Bivariate`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BivariateGrad {
    pub mean_i: f64,
    pub mean_j: f64,
    pub std_i: f64,
    pub std_j: f64,
    pub rho: f64,
}

impl PairGaussian {
    pub fn dim_params(&self, k: usize) -> Bivariate {
        Bivariate {
            mean_i: self.mean_i[k],
            mean_j: self.mean_j[k],
            std_i: self.std_i[k],
            std_j: self.std_j[k],
            rho: self.rho[k],
        }
    }
}

/// KL of a bivariate normal to `N(0, [[1, tau], [tau, 1]])`.
#[inline]
pub fn kl_pair_dim(q: Bivariate, tau: f64) -> f64 {
    let s = 1.0 / (1.0 - tau * tau).max(FLOOR);
    let quad = q.std_i * q.std_i + q.std_j * q.std_j - 2.0 * tau * q.rho * q.std_i * q.std_j
        + q.mean_i * q.mean_i
        + q.mean_j * q.mean_j
        - 2.0 * tau * q.mean_i * q.mean_j;
    0.5 * (s * quad - 2.0 + ln_floor(1.0 - tau * tau)
        - 2.0 * ln_floor(q.std_i)
        - 2.0 * ln_floor(q.std_j)
        - ln_floor(1.0 - q.rho * q.rho))
}

#[inline]
pub fn kl_pair_dim_grad(q: Bivariate, tau: f64) -> BivariateGrad {
    let s = 1.0 / (1.0 - tau * tau).max(FLOOR);
    BivariateGrad {
        mean_i: s * (q.mean_i - tau * q.mean_j),
        mean_j: s * (q.mean_j - tau * q.mean_i),
        std_i: s * (q.std_i - tau * q.rho * q.std_j) - 1.0 / q.std_i.max(FLOOR),
        std_j: s * (q.std_j - tau * q.rho * q.std_i) - 1.0 / q.std_j.max(FLOOR),
        rho: -s * tau * q.std_i * q.std_j + q.rho / (1.0 - q.rho * q.rho).max(FLOOR),
    }
}

/// Edge mass of one dimension: pairwise KL minus both singleton KLs.
#[inline]
pub fn edge_mass_dim(q: Bivariate, tau: f64) -> f64 {
    kl_pair_dim(q, tau) - kl_singleton_dim(q.mean_i, q.std_i) - kl_singleton_dim(q.mean_j, q.std_j)
}

#[inline]
pub fn edge_mass_dim_grad(q: Bivariate, tau: f64) -> BivariateGrad {
    let mut g = kl_pair_dim_grad(q, tau);
    let (dmi, dsi) = kl_singleton_dim_grad(q.mean_i, q.std_i);
    let (dmj, dsj) = kl_singleton_dim_grad(q.mean_j, q.std_j);
    g.mean_i -= dmi;
    g.std_i -= dsi;
    g.mean_j -= dmj;
    g.std_j -= dsj;
    g
}

/// `KL(q || N(0, I))`.
pub fn kl_singleton(q: &DiagGaussian) -> Result<f64> {
    q.validate()?;
    Ok(q.mean
        .iter()
        .zip(&q.std)
        .map(|(&m, &s)| kl_singleton_dim(m, s))
        .sum())
}

/// KL of the factorized pair distribution to the `tau`-correlated prior.
pub fn kl_pair(q: &PairGaussian, prior: PriorSpec) -> Result<f64> {
    q.validate()?;
    PriorSpec::new(prior.tau)?;
    Ok((0..q.dim()).map(|k| kl_pair_dim(q.dim_params(k), prior.tau)).sum())
}

/// `KL(q_ij || p_ij) - KL(q_i || p_i) - KL(q_j || p_j)`; negative when the pair
/// is closer to the correlated prior than its independent counterpart.
pub fn edge_mass(q: &PairGaussian, prior: PriorSpec) -> Result<f64> {
    let pair = kl_pair(q, prior)?;
    Ok(pair - kl_singleton(&q.marginal_i())? - kl_singleton(&q.marginal_j())?)
}

#[inline]
pub fn expected_sq_distance_dim(q: Bivariate) -> f64 {
    let diff = q.mean_i - q.mean_j;
    diff * diff + q.std_i * q.std_i + q.std_j * q.std_j - 2.0 * q.rho * q.std_i * q.std_j
}

/// `E ||z_i - z_j||^2` under the pair distribution.
pub fn expected_sq_distance(q: &PairGaussian) -> f64 {
    (0..q.dim()).map(|k| expected_sq_distance_dim(q.dim_params(k))).sum()
}

/// One conditional-Gaussian step along a chain: given the correlation of the
/// chain's source with vertex `u` and the correlation of the edge `(u, v)`,
/// returns the correlation of the source with `v`. For a Gaussian Markov chain
/// `E[z_v | z_u] = m_v + rho_uv s_v / s_u (z_u - m_u)`, so the source-to-`v`
/// covariance is the source-to-`u` covariance times `rho_uv s_v / s_u` and the
/// standard deviations cancel in the correlation.
#[inline]
pub fn chain_step(rho_source_u: f64, rho_uv: f64) -> f64 {
    rho_source_u * rho_uv
}

fn check_consistent(a: &[f64], b: &[f64], what: &str, l: usize) -> Result<()> {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > CONSISTENCY_TOL {
            return Err(Error::Consistency(format!(
                "{what} of edge {l} differs from vertex marginal ({x} vs {y})"
            )));
        }
    }
    Ok(())
}

/// Endpoint pair distribution of the chain
/// `prod_l q(z_l, z_{l+1}) / prod_{interior} q(z_l)` after integrating out the
/// interior vertices. `edge_pairs[l]` must be oriented from `marginals[l]` to
/// `marginals[l + 1]`.
pub fn compose_path(marginals: &[DiagGaussian], edge_pairs: &[PairGaussian]) -> Result<PairGaussian> {
    if edge_pairs.is_empty() || marginals.len() != edge_pairs.len() + 1 {
        return input(format!(
            "{} vertex marginals for {} edges",
            marginals.len(),
            edge_pairs.len()
        ));
    }
    let d = marginals[0].dim();
    for (l, e) in edge_pairs.iter().enumerate() {
        if e.dim() != d || marginals[l + 1].dim() != d {
            return input("path elements have mismatched dimensions");
        }
        check_consistent(&e.mean_i, &marginals[l].mean, "mean_i", l)?;
        check_consistent(&e.std_i, &marginals[l].std, "std_i", l)?;
        check_consistent(&e.mean_j, &marginals[l + 1].mean, "mean_j", l)?;
        check_consistent(&e.std_j, &marginals[l + 1].std, "std_j", l)?;
    }
    if edge_pairs.len() == 1 {
        return Ok(edge_pairs[0].clone());
    }
    let mut rho = vec![1.0; d];
    for e in edge_pairs {
        for (r, &edge_rho) in rho.iter_mut().zip(&e.rho) {
            *r = chain_step(*r, edge_rho);
        }
    }
    let last = &marginals[marginals.len() - 1];
    Ok(PairGaussian {
        mean_i: marginals[0].mean.clone(),
        mean_j: last.mean.clone(),
        std_i: marginals[0].std.clone(),
        std_j: last.std.clone(),
        rho,
    })
}
