//! Class training: one head per sampled linear system, shared trunk, Adam with
//! a stepwise exponential learning-rate decay and fresh uniform collocation
//! points every iteration.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{loss_and_gradient, HeadProblem, MultiHeadNet, TrunkSpec};
use crate::ode::DuffingParams;
use crate::reduction::FirstOrderSystem;

/// RNG streams derived from the run seed.
pub const STREAM_PARAMETERS: u64 = 0;
pub const STREAM_INIT: u64 = 1;
pub const STREAM_COLLOCATION: u64 = 2;
pub const STREAM_INSTANCES: u64 = 3;

/// Seeded generator on one of the run's independent streams.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Closed sampling interval `[lo, hi]` (half-open in practice; a point when `lo == hi`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.lo + (self.hi - self.lo) * rng.random::<f64>()
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo > self.hi {
            return Err(Error::InvalidConfig(format!(
                "range {name} = [{}, {}] is invalid",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Sampling ranges for Duffing instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParameterRanges {
    pub gamma: Range,
    pub omega: Range,
    pub alpha: Range,
    pub delta: Range,
    pub x0: Range,
}

impl Default for ParameterRanges {
    fn default() -> Self {
        Self {
            gamma: Range::new(0.5, 3.0),
            omega: Range::new(0.5, 3.0),
            alpha: Range::new(0.5, 4.5),
            delta: Range::new(0.5, 4.5),
            x0: Range::new(-3.0, 3.0),
        }
    }
}

impl ParameterRanges {
    pub fn validate(&self) -> Result<()> {
        self.gamma.validate("gamma")?;
        self.omega.validate("omega")?;
        self.alpha.validate("alpha")?;
        self.delta.validate("delta")?;
        self.x0.validate("x0")
    }

    /// One instance; draw order is gamma, omega, alpha, delta, x0.
    pub fn sample<R: Rng + ?Sized>(&self, beta: f64, rng: &mut R) -> DuffingParams {
        let gamma = self.gamma.sample(rng);
        let omega = self.omega.sample(rng);
        let alpha = self.alpha.sample(rng);
        let delta = self.delta.sample(rng);
        let x0 = self.x0.sample(rng);
        DuffingParams {
            delta,
            alpha,
            beta,
            gamma,
            omega,
            x0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of heads `K`.
    pub heads: usize,
    pub iterations: usize,
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    /// Collocation points per iteration.
    pub collocation_n: usize,
    pub t_lo: f64,
    pub t_hi: f64,
    pub seed: u64,
    pub parameter_ranges: ParameterRanges,
    pub layer_widths: Vec<usize>,
    /// Columns of the hidden state; the last layer width must be `2 * hidden_columns`.
    pub hidden_columns: usize,
    /// Record per-iteration losses every `log_every` iterations in the log output.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            heads: 10,
            iterations: 5000,
            lr0: 2e-4,
            decay_factor: 0.96,
            decay_every: 100,
            collocation_n: 200,
            t_lo: 0.0,
            t_hi: 5.0,
            seed: 0,
            parameter_ranges: ParameterRanges::default(),
            layer_widths: vec![256, 256, 256, 512],
            hidden_columns: 256,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 {
            return Err(Error::InvalidConfig("need at least one head".into()));
        }
        if !(self.lr0 > 0.0) {
            return Err(Error::InvalidConfig(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decay_factor must be in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.decay_every == 0 {
            return Err(Error::InvalidConfig("decay_every must be positive".into()));
        }
        if self.collocation_n == 0 {
            return Err(Error::InvalidConfig("collocation_n must be at least 1".into()));
        }
        if !(self.t_lo < self.t_hi) {
            return Err(Error::InvalidConfig(format!(
                "domain ({}, {}) is empty",
                self.t_lo, self.t_hi
            )));
        }
        self.parameter_ranges.validate()?;
        self.trunk_spec().map(|_| ())
    }

    /// Trunk shape for a second-order class (`m = 2`).
    pub fn trunk_spec(&self) -> Result<TrunkSpec> {
        TrunkSpec::new(self.layer_widths.clone(), 2, self.hidden_columns)
    }

    /// `lr0 * decay_factor ^ floor(iteration / decay_every)`.
    pub fn learning_rate(&self, iteration: usize) -> f64 {
        self.lr0 * self.decay_factor.powi((iteration / self.decay_every) as i32)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// `K` linear training instances (`beta = 0`), `x'(0) = 0`.
pub fn sample_parameter_sets(config: &TrainConfig) -> Vec<DuffingParams> {
    let mut rng = stream_rng(config.seed, STREAM_PARAMETERS);
    (0..config.heads)
        .map(|_| config.parameter_ranges.sample(0.0, &mut rng))
        .collect()
}

/// `N` i.i.d. uniform times in the training domain.
pub fn sample_collocation<R: Rng + ?Sized>(config: &TrainConfig, rng: &mut R) -> Vec<f64> {
    let range = Range::new(config.t_lo, config.t_hi);
    (0..config.collocation_n).map(|_| range.sample(rng)).collect()
}

/// Linear head problem for each parameter set: `B u' + A u = [0, gamma cos(omega t)]`, `u(0) = [x0, 0]`.
pub fn duffing_head_problems(sets: &[DuffingParams]) -> Result<Vec<HeadProblem>> {
    sets.iter()
        .map(|p| {
            let ode = p.linear_part().to_ode()?;
            Ok(HeadProblem {
                system: FirstOrderSystem::from_ode(&ode)?,
                forcing: ode.forcing,
            })
        })
        .collect()
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: i32,
}

impl Adam {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    /// One update with learning rate `lr`. Rejects non-finite gradients
    /// without touching the parameters.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::DimensionMismatch {
                expected: self.first.len(),
                actual: grads.len(),
                context: "optimizer parameter groups",
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || g.len() != self.first[i].len() {
                return Err(Error::DimensionMismatch {
                    expected: self.first[i].len(),
                    actual: g.len(),
                    context: "optimizer parameter group size",
                });
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    path: format!("group {i} index {j}"),
                });
            }
        }
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Loss after one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub total: f64,
    pub per_head: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainStatus {
    Completed,
    Diverged { iteration: usize, loss: f64 },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: MultiHeadNet,
    pub history: Vec<LossRecord>,
    pub status: TrainStatus,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.history.last().map(|r| r.total)
    }

    pub fn final_per_head(&self) -> Option<&[f64]> {
        self.history.last().map(|r| r.per_head.as_slice())
    }
}

/// Loss above which training is aborted.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Runs `config.iterations` Adam steps. Record `i` holds the loss evaluated on
/// the batch used for update `i`, before the update.
pub fn train(mut net: MultiHeadNet, problems: &[HeadProblem], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if problems.len() != net.heads.len() {
        return Err(Error::DimensionMismatch {
            expected: net.heads.len(),
            actual: problems.len(),
            context: "training systems",
        });
    }
    let shapes: Vec<usize> = net.param_slices_mut().iter().map(|s| s.len()).collect();
    let mut adam = Adam::new(&shapes);
    let mut rng = stream_rng(config.seed, STREAM_COLLOCATION);
    let mut history = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let ts = sample_collocation(config, &mut rng);
        let (report, grads) = loss_and_gradient(&net.spec, &net.trunk, &net.heads, problems, &ts)?;
        let record = LossRecord {
            iteration,
            total: report.total,
            per_head: report.per_head,
        };
        let diverged = !record.total.is_finite() || record.total > DIVERGENCE_LOSS;
        let loss = record.total;
        history.push(record);
        if diverged {
            log::error!("training diverged at iteration {iteration}: loss {loss:e}");
            return Ok(TrainOutcome {
                net,
                history,
                status: TrainStatus::Diverged { iteration, loss },
            });
        }
        if config.log_every > 0 && iteration % config.log_every == 0 {
            log::info!(
                "iter {iteration:5}  loss {loss:.3e}  lr {:.3e}",
                config.learning_rate(iteration)
            );
        }
        adam.step(net.param_slices_mut(), &grads.slices(), config.learning_rate(iteration))?;
    }
    Ok(TrainOutcome {
        net,
        history,
        status: TrainStatus::Completed,
    })
}

/// Samples the Duffing training instances, initializes the network and trains it.
pub fn train_duffing_class(config: &TrainConfig) -> Result<(Vec<DuffingParams>, TrainOutcome)> {
    config.validate()?;
    let sets = sample_parameter_sets(config);
    let problems = duffing_head_problems(&sets)?;
    let net = MultiHeadNet::init(
        config.trunk_spec()?,
        config.heads,
        &mut stream_rng(config.seed, STREAM_INIT),
    )?;
    let outcome = train(net, &problems, config)?;
    Ok((sets, outcome))
}

/// Per-head loss on a fixed uniform grid of `n` points over the training domain.
pub fn per_head_grid_losses(net: &MultiHeadNet, problems: &[HeadProblem], config: &TrainConfig, n: usize) -> Result<Vec<f64>> {
    let grid = uniform_grid(config.t_lo, config.t_hi, n);
    Ok(loss_and_gradient(&net.spec, &net.trunk, &net.heads, problems, &grid)?.0.per_head)
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}
