//! Alternating optimization of the networks and the subgraph distribution,
//! plus the baseline training modes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{permutation, Dataset};
use crate::error::{input, Error, Result};
use crate::eval::{distances_for_mode, independent_distances, rank_targets, train_ncrr};
use crate::gaussian::PriorSpec;
use crate::graph::{
    min_spanning_forest, random_mas_init, soft_update, uniform_mas_weights, Graph, MasWeights,
    Sense, SpanningForest,
};
use crate::neural::{AdamState, Architecture, ModelParams, Posteriors};
use crate::objective::{
    acvae_loss, edge_masses, full_objective, BatchSpec, LossBreakdown, LossSettings, NoiseStream,
};

/// Training variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Vae,
    CvaeInd,
    CvaeCorr,
    AcvaeSaddle,
    AcvaeEb,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Vae,
        Mode::CvaeInd,
        Mode::CvaeCorr,
        Mode::AcvaeSaddle,
        Mode::AcvaeEb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Vae => "vae",
            Mode::CvaeInd => "cvae_ind",
            Mode::CvaeCorr => "cvae_corr",
            Mode::AcvaeSaddle => "acvae_saddle",
            Mode::AcvaeEb => "acvae_eb",
        }
    }

    /// Whether pairwise posteriors carry learned correlations.
    pub fn correlated(self) -> bool {
        matches!(self, Mode::CvaeCorr | Mode::AcvaeSaddle | Mode::AcvaeEb)
    }

    /// Whether the subgraph distribution is learned.
    pub fn adaptive(self) -> bool {
        matches!(self, Mode::AcvaeSaddle | Mode::AcvaeEb)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown mode '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub latent_dim: usize,
    pub h1: usize,
    pub h2: usize,
    pub tau: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub lr: f64,
    pub b1: usize,
    pub b2: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub seed: u64,
    /// Forest sense of the saddle-point update; empirical Bayes uses the
    /// opposite. Defaults to `min`.
    pub mst_sense: Option<Sense>,
    pub samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::AcvaeSaddle,
            latent_dim: 10,
            h1: 30,
            h2: 30,
            tau: 0.99,
            gamma: 100.0,
            alpha: 0.1,
            lr: 1e-3,
            b1: 64,
            b2: 256,
            epochs: 100,
            eval_every: 10,
            seed: 0,
            mst_sense: None,
            samples: 1,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Input(format!("invalid value '{value}' for {key}")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 15] = [
        "mode",
        "latent_dim",
        "h1",
        "h2",
        "tau",
        "gamma",
        "alpha",
        "lr",
        "b1",
        "b2",
        "epochs",
        "eval_every",
        "seed",
        "mst_sense",
        "samples",
    ];

    pub fn validate(&self) -> Result<()> {
        PriorSpec::new(self.tau)?;
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return input(format!("alpha {} outside (0, 1]", self.alpha));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return input(format!("gamma {} must be finite and nonnegative", self.gamma));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return input(format!("learning rate {} must be positive", self.lr));
        }
        let counts = [
            ("latent_dim", self.latent_dim),
            ("h1", self.h1),
            ("h2", self.h2),
            ("b1", self.b1),
            ("b2", self.b2),
            ("epochs", self.epochs),
            ("eval_every", self.eval_every),
            ("samples", self.samples),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return input(format!("{name} must be positive"));
        }
        Ok(())
    }

    /// Sets one field from its textual `key = value` form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "mode" => self.mode = value.parse()?,
            "latent_dim" | "d" => self.latent_dim = parse_value(key, value)?,
            "h1" => self.h1 = parse_value(key, value)?,
            "h2" => self.h2 = parse_value(key, value)?,
            "tau" => self.tau = parse_value(key, value)?,
            "gamma" => self.gamma = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "b1" => self.b1 = parse_value(key, value)?,
            "b2" => self.b2 = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "mst_sense" => {
                self.mst_sense = match value {
                    "" | "default" => None,
                    s => Some(s.parse()?),
                }
            }
            "samples" => self.samples = parse_value(key, value)?,
            other => return input(format!("unknown config key '{other}'")),
        }
        Ok(())
    }

    /// Applies a flat `key = value` file on top of `self`. Blank lines and
    /// `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: "config".into(),
                    line: n + 1,
                    msg: format!("expected key = value, got '{line}'"),
                });
            };
            self.set(k, v).map_err(|e| Error::Parse {
                path: "config".into(),
                line: n + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let sense = self.mst_sense.map_or("default".to_string(), |s| s.to_string());
        format!(
            "mode = {}\nlatent_dim = {}\nh1 = {}\nh2 = {}\ntau = {}\ngamma = {}\nalpha = {}\nlr = {}\nb1 = {}\nb2 = {}\nepochs = {}\neval_every = {}\nseed = {}\nmst_sense = {}\nsamples = {}\n",
            self.mode, self.latent_dim, self.h1, self.h2, self.tau, self.gamma, self.alpha,
            self.lr, self.b1, self.b2, self.epochs, self.eval_every, self.seed, sense, self.samples
        )
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            latent_dim: self.latent_dim,
            h1: self.h1,
            h2: self.h2,
        }
    }

    /// Forest sense of this configuration's update.
    pub fn sense(&self) -> Sense {
        let saddle = self.mst_sense.unwrap_or(Sense::Min);
        match self.mode {
            Mode::AcvaeEb => saddle.opposite(),
            _ => saddle,
        }
    }

    pub fn loss_settings(&self) -> LossSettings {
        LossSettings {
            prior: PriorSpec { tau: self.tau },
            gamma: if self.mode == Mode::Vae { 0.0 } else { self.gamma },
            correlated: self.mode.correlated(),
            samples: self.samples,
        }
    }
}

/// The best evaluation so far under the checkpoint rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub epoch: usize,
    pub train_objective: f64,
    pub train_ncrr: f64,
    pub test_ncrr: Option<f64>,
    pub params: ModelParams,
    pub forest: Option<Vec<usize>>,
}

/// Accepts `candidate` only if both its train objective and train NCRR
/// strictly improve on the stored best. The first evaluation is always
/// accepted.
pub fn checkpoint_rule(best: &mut Option<BestRecord>, candidate: BestRecord) -> bool {
    let accept = match best {
        None => true,
        Some(b) => {
            candidate.train_objective > b.train_objective && candidate.train_ncrr > b.train_ncrr
        }
    };
    if accept {
        *best = Some(candidate);
    }
    accept
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: AdamState,
    pub w: MasWeights,
    /// Forest chosen by the latest update (adaptive modes only).
    pub forest: Option<SpanningForest>,
    pub step: u64,
    pub epoch: usize,
    pub best: Option<BestRecord>,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub step: u64,
    pub mode: Mode,
    pub loss: LossBreakdown,
    pub train_ncrr: f64,
    pub test_ncrr: Option<f64>,
    pub w_sum: f64,
    /// Edges changed between the two latest forests.
    pub forest_edit_distance: Option<usize>,
    pub accepted: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub config: TrainConfig,
    pub state: TrainState,
    pub log: Vec<MetricRecord>,
    /// Weights before the final rounding to the last forest.
    pub pre_rounding_weights: MasWeights,
    /// Full objective at the final parameters and pre-rounding weights.
    pub final_objective: LossBreakdown,
    /// Set when training stopped on a non-finite loss or gradient.
    pub aborted: Option<String>,
}

impl TrainOutcome {
    /// Test NCRR of the accepted checkpoint.
    pub fn best_test_ncrr(&self) -> Option<f64> {
        self.state.best.as_ref().and_then(|b| b.test_ncrr)
    }
}

/// Noise counter used for evaluations of the full objective.
pub const EVAL_NOISE_STEP: u64 = u64::MAX;

fn seed_for(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt
}

/// Edge masses at the current parameters, forest selection and soft update.
pub fn pi_update(
    params: &ModelParams,
    rows: &[Vec<(usize, f64)>],
    g: &Graph,
    w: &MasWeights,
    settings: &LossSettings,
    sense: Sense,
    alpha: f64,
) -> Result<(MasWeights, SpanningForest)> {
    let post = Posteriors::compute(params, rows, settings.correlated);
    let masses = edge_masses(&post, g, settings.prior);
    if let Some(e) = masses.iter().position(|m| !m.is_finite()) {
        return Err(Error::Training(format!("edge mass of edge {e} is not finite")));
    }
    let forest = min_spanning_forest(g, &masses, sense)?;
    Ok((soft_update(w, &forest, alpha)?, forest))
}

struct Evaluation {
    loss: LossBreakdown,
    train_ncrr: f64,
    test_ncrr: Option<f64>,
}

fn evaluate(
    cfg: &TrainConfig,
    data: &Dataset,
    heldout: &[(usize, usize)],
    state: &TrainState,
    noise: NoiseStream,
) -> Result<Evaluation> {
    let g = &data.graph;
    let rows = data.features.rows();
    let loss = full_objective(&state.params, rows, g, &state.w, &cfg.loss_settings(), noise, EVAL_NOISE_STEP)?;
    // Pair posteriors of training edges would rank those same edges
    // trivially, so train NCRR uses the singleton embeddings alone.
    let singleton = independent_distances(&Posteriors::compute(&state.params, rows, false));
    let train = train_ncrr(&singleton, g)?.mean_ncrr;
    let test = if heldout.is_empty() {
        None
    } else {
        let dist = distances_for_mode(cfg.mode, &state.params, rows, g, state.forest.as_ref(), true)?;
        Some(rank_targets(&dist, heldout, g)?.mean_ncrr)
    };
    Ok(Evaluation {
        loss,
        train_ncrr: train,
        test_ncrr: test,
    })
}

/// Trains on `data` (whose graph is the training graph). `heldout` edges are
/// only used to report test NCRR.
pub fn train(cfg: &TrainConfig, data: &Dataset, heldout: &[(usize, usize)]) -> Result<TrainOutcome> {
    cfg.validate()?;
    let g = &data.graph;
    let rows = data.features.rows();
    let n = g.n_vertices();
    if n == 0 {
        return input("cannot train on an empty graph");
    }
    let settings = cfg.loss_settings();
    let sense = cfg.sense();
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(cfg.seed, 1));
    let noise = NoiseStream::new(seed_for(cfg.seed, 2));
    let params = ModelParams::init(cfg.architecture(data.features.dim()), seed_for(cfg.seed, 3));
    let w = match cfg.mode {
        Mode::Vae => MasWeights::zeros(g.n_edges()),
        Mode::CvaeInd | Mode::CvaeCorr => uniform_mas_weights(g),
        Mode::AcvaeSaddle | Mode::AcvaeEb => random_mas_init(g, seed_for(cfg.seed, 4)),
    };
    let forest = if cfg.mode.adaptive() { w.as_forest(g) } else { None };
    let mut state = TrainState {
        adam: AdamState::new(&params, cfg.lr),
        params,
        w,
        forest,
        step: 0,
        epoch: 0,
        best: None,
    };
    let mut log = Vec::new();
    let mut aborted = None;
    let edge_batches = cfg.mode != Mode::Vae && g.n_edges() > 0;

    'epochs: for epoch in 1..=cfg.epochs {
        let batches: Vec<BatchSpec> = if edge_batches {
            permutation(g.n_edges(), &mut rng)
                .chunks(cfg.b2)
                .enumerate()
                .map(|(k, chunk)| {
                    BatchSpec::sample(g, cfg.b1, chunk.to_vec(), cfg.b2, state.step + k as u64, &mut rng)
                })
                .collect()
        } else {
            permutation(n, &mut rng)
                .chunks(cfg.b1)
                .enumerate()
                .map(|(k, chunk)| {
                    BatchSpec::new(g, chunk.to_vec(), Vec::new(), Vec::new(), state.step + k as u64)
                        .expect("vertex indices are in range")
                })
                .collect()
        };
        for batch in &batches {
            let (loss, mut grads) = acvae_loss(&state.params, rows, g, &state.w, &settings, batch, noise)?;
            if !loss.total.is_finite() {
                aborted = Some(format!(
                    "non-finite loss at epoch {epoch}, step {}: {loss:?}",
                    state.step
                ));
                break 'epochs;
            }
            grads.scale(-1.0);
            let mut next = state.params.clone();
            if let Err(e) = state.adam.step(&mut next, &grads) {
                aborted = Some(format!("epoch {epoch}, step {}: {e}", state.step));
                break 'epochs;
            }
            state.params = next;
            state.step += 1;
        }
        state.epoch = epoch;

        let mut edit = None;
        if cfg.mode.adaptive() {
            match pi_update(&state.params, rows, g, &state.w, &settings, sense, cfg.alpha) {
                Ok((w, forest)) => {
                    edit = state.forest.as_ref().map(|f| f.edit_distance(&forest));
                    state.w = w;
                    state.forest = Some(forest);
                }
                Err(e) => {
                    aborted = Some(format!("epoch {epoch}: {e}"));
                    break;
                }
            }
        }

        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let ev = evaluate(cfg, data, heldout, &state, noise)?;
            if !ev.loss.total.is_finite() {
                aborted = Some(format!("non-finite objective at epoch {epoch}: {:?}", ev.loss));
                break;
            }
            let accepted = checkpoint_rule(
                &mut state.best,
                BestRecord {
                    epoch,
                    train_objective: ev.loss.total,
                    train_ncrr: ev.train_ncrr,
                    test_ncrr: ev.test_ncrr,
                    params: state.params.clone(),
                    forest: state.forest.as_ref().map(|f| f.edge_indices().to_vec()),
                },
            );
            log.push(MetricRecord {
                epoch,
                step: state.step,
                mode: cfg.mode,
                loss: ev.loss,
                train_ncrr: ev.train_ncrr,
                test_ncrr: ev.test_ncrr,
                w_sum: state.w.sum(),
                forest_edit_distance: edit,
                accepted,
            });
        }
    }

    let pre_rounding_weights = state.w.clone();
    let final_objective = full_objective(
        &state.params,
        rows,
        g,
        &pre_rounding_weights,
        &settings,
        noise,
        EVAL_NOISE_STEP,
    )?;
    if let Some(forest) = &state.forest {
        state.w = MasWeights::indicator(g, forest);
    }
    Ok(TrainOutcome {
        config: cfg.clone(),
        state,
        log,
        pre_rounding_weights,
        final_objective,
        aborted,
    })
}

/// Everything needed to evaluate or export a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub weights: MasWeights,
    pub pre_rounding_weights: MasWeights,
    pub forest: Option<Vec<usize>>,
    pub best: Option<BestRecord>,
    pub final_objective: LossBreakdown,
    pub aborted: Option<String>,
}

impl Checkpoint {
    pub fn from_outcome(out: &TrainOutcome) -> Self {
        Self {
            config: out.config.clone(),
            params: out.state.params.clone(),
            weights: out.state.w.clone(),
            pre_rounding_weights: out.pre_rounding_weights.clone(),
            forest: out.state.forest.as_ref().map(|f| f.edge_indices().to_vec()),
            best: out.state.best.clone(),
            final_objective: out.final_objective,
            aborted: out.aborted.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Parameters and forest of the accepted checkpoint, or of the final state
    /// when nothing was accepted.
    pub fn selected(&self) -> (&ModelParams, Option<&[usize]>) {
        match &self.best {
            Some(b) => (&b.params, b.forest.as_deref()),
            None => (&self.params, self.forest.as_deref()),
        }
    }
}

/// Writes the log as one JSON object per line.
pub fn write_metrics_log(path: &Path, log: &[MetricRecord]) -> Result<()> {
    let mut text = String::new();
    for rec in log {
        text.push_str(&serde_json::to_string(rec)?);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}
