//! The end-to-end training loop: interaction, update scheduling, metric
//! computation, checkpoint assembly, and frozen-parameter evaluation.
//!
//! Per interaction step the loop observes `s`, samples a raw action from the
//! task policy, queries the twin cost critics for a conservative cost
//! estimate, scales the action through the regulator, executes the scaled
//! action, and stores `(s, a~, r, c, s')`. Per gradient step it updates the
//! reward critics, the actor, the cost critics, and the regulator, then
//! Polyak-averages every target network. With the regulator disabled the loop
//! degrades to the plain base agent: scaling is identity and the safety
//! components are never updated.
//!
//! The loop is IO-free; metrics rows, debug traces, and checkpoints stream
//! through a [`RunSink`] owned by the caller.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::agent::{ReplayBuffer, SacAgent, TaskAgent, Td3Agent, Transition};
use crate::agent::{SacParams, Td3Params};
use crate::checkpoint::{Checkpoint, Section};
use crate::env::{Cstr, CstrParams, Environment, NoiseSpec, NoiseWrapper, PointMass, PointMassParams};
use crate::math;
use crate::rng::{self, stream, stream_rng};
use crate::safety::{CostCriticPair, Regulator, ScalingSource, ScalingVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    PointMass,
    Cstr,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PointMass => "point_mass",
            EnvKind::Cstr => "cstr",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "point_mass" => Ok(EnvKind::PointMass),
            "cstr" => Ok(EnvKind::Cstr),
            other => Err(Error::Config(format!("unknown environment '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    Sac,
    Td3,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Sac => "sac",
            AgentKind::Td3 => "td3",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "sac" => Ok(AgentKind::Sac),
            "td3" => Ok(AgentKind::Td3),
            other => Err(Error::Config(format!("unknown agent '{other}'"))),
        }
    }
}

/// Every hyperparameter of a run. The flat key=value codec below mirrors the
/// field names exactly; `render_flat` -> parse -> `render_flat` is identical.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: EnvKind,
    pub agent: AgentKind,
    pub regulator_enabled: bool,
    pub scalar_mode: bool,
    pub beta: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub tau: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_cost_critic: f64,
    pub lr_regulator: f64,
    pub lr_alpha: f64,
    pub alpha: f64,
    pub auto_alpha: bool,
    pub td3_exploration_noise: f64,
    pub td3_smoothing_noise: f64,
    pub td3_noise_clip: f64,
    pub td3_policy_delay: u64,
    pub hidden_sizes: Vec<usize>,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub updates_per_step: u64,
    pub noise_sigma: f64,
    pub noise_on_observations: bool,
    pub noise_on_actions: bool,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub trace: bool,
    pub point_mass: PointMassParams,
    pub cstr: CstrParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::PointMass,
            agent: AgentKind::Sac,
            regulator_enabled: true,
            scalar_mode: false,
            beta: 10.0,
            lambda: 0.0015,
            epsilon: 1e-6,
            gamma: 0.99,
            tau: 0.005,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            lr_cost_critic: 3e-4,
            lr_regulator: 3e-4,
            lr_alpha: 3e-4,
            alpha: 0.2,
            auto_alpha: false,
            td3_exploration_noise: 0.1,
            td3_smoothing_noise: 0.2,
            td3_noise_clip: 0.5,
            td3_policy_delay: 2,
            hidden_sizes: vec![256, 256],
            batch_size: 256,
            buffer_capacity: 1_000_000,
            warmup_steps: 1000,
            total_steps: 100_000,
            updates_per_step: 1,
            noise_sigma: 0.0,
            noise_on_observations: true,
            noise_on_actions: true,
            seed: 0,
            checkpoint_every: 10_000,
            trace: false,
            point_mass: PointMassParams::default(),
            cstr: CstrParams::default(),
        }
    }
}

fn parse_value<T: core::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("malformed value '{value}' for key '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(Error::Config(format!("malformed value '{other}' for key '{key}' (expected true/false)"))),
    }
}

fn parse_sizes(key: &str, value: &str) -> Result<Vec<usize>> {
    let sizes: Result<Vec<usize>> = value
        .split(',')
        .map(|part| parse_value::<usize>(key, part))
        .collect();
    let sizes = sizes?;
    if sizes.is_empty() || sizes.iter().any(|&s| s == 0) {
        return Err(Error::Config(format!("key '{key}' needs positive comma-separated sizes")));
    }
    Ok(sizes)
}

fn fmt_sizes(sizes: &[usize]) -> String {
    let mut out = String::new();
    for (i, s) in sizes.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&s.to_string());
    }
    out
}

/// Declares the key <-> field mapping once; `get`, `set`, and `keys` stay in
/// lockstep automatically.
macro_rules! config_keys {
    ($( $key:literal => $kind:ident $($path:ident).+ ; )+) => {
        impl TrainConfig {
            pub const KEYS: &'static [&'static str] = &[ $( $key ),+ ];

            /// Canonical string value for one key.
            pub fn get_key(&self, key: &str) -> Result<String> {
                match key {
                    $( $key => Ok(config_keys!(@fmt $kind self.$($path).+)), )+
                    other => Err(Error::Config(format!("unknown key '{other}'"))),
                }
            }

            /// Parse and assign one key=value pair.
            pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( $key => { self.$($path).+ = config_keys!(@parse $kind key, value); } )+
                    other => return Err(Error::Config(format!("unknown key '{other}'"))),
                }
                Ok(())
            }
        }
    };
    (@fmt f64 $($field:tt)+) => { format!("{:?}", $($field)+) };
    (@fmt int $($field:tt)+) => { format!("{}", $($field)+) };
    (@fmt bool $($field:tt)+) => { format!("{}", $($field)+) };
    (@fmt sizes $($field:tt)+) => { fmt_sizes(&$($field)+) };
    (@fmt env $($field:tt)+) => { $($field)+.name().to_string() };
    (@fmt agent $($field:tt)+) => { $($field)+.name().to_string() };
    (@parse f64 $key:ident, $value:ident) => { parse_value::<f64>($key, $value)? };
    (@parse int $key:ident, $value:ident) => { parse_value($key, $value)? };
    (@parse bool $key:ident, $value:ident) => { parse_bool($key, $value)? };
    (@parse sizes $key:ident, $value:ident) => { parse_sizes($key, $value)? };
    (@parse env $key:ident, $value:ident) => { EnvKind::from_name($value.trim())? };
    (@parse agent $key:ident, $value:ident) => { AgentKind::from_name($value.trim())? };
}

config_keys! {
    "env" => env env;
    "agent" => agent agent;
    "regulator_enabled" => bool regulator_enabled;
    "scalar_mode" => bool scalar_mode;
    "beta" => f64 beta;
    "lambda" => f64 lambda;
    "epsilon" => f64 epsilon;
    "gamma" => f64 gamma;
    "tau" => f64 tau;
    "lr_actor" => f64 lr_actor;
    "lr_critic" => f64 lr_critic;
    "lr_cost_critic" => f64 lr_cost_critic;
    "lr_regulator" => f64 lr_regulator;
    "lr_alpha" => f64 lr_alpha;
    "alpha" => f64 alpha;
    "auto_alpha" => bool auto_alpha;
    "td3_exploration_noise" => f64 td3_exploration_noise;
    "td3_smoothing_noise" => f64 td3_smoothing_noise;
    "td3_noise_clip" => f64 td3_noise_clip;
    "td3_policy_delay" => int td3_policy_delay;
    "hidden_sizes" => sizes hidden_sizes;
    "batch_size" => int batch_size;
    "buffer_capacity" => int buffer_capacity;
    "warmup_steps" => int warmup_steps;
    "total_steps" => int total_steps;
    "updates_per_step" => int updates_per_step;
    "noise_sigma" => f64 noise_sigma;
    "noise_on_observations" => bool noise_on_observations;
    "noise_on_actions" => bool noise_on_actions;
    "seed" => int seed;
    "checkpoint_every" => int checkpoint_every;
    "trace" => bool trace;
    "pm_dt" => f64 point_mass.dt;
    "pm_gain" => f64 point_mass.gain;
    "pm_drag" => f64 point_mass.drag;
    "pm_speed_limit" => f64 point_mass.speed_limit;
    "pm_horizon" => int point_mass.horizon;
    "pm_reset_jitter" => f64 point_mass.reset_jitter;
    "cstr_flow_rate" => f64 cstr.flow_rate;
    "cstr_feed_concentration" => f64 cstr.feed_concentration;
    "cstr_feed_temperature" => f64 cstr.feed_temperature;
    "cstr_rate_constant" => f64 cstr.rate_constant;
    "cstr_activation_temperature" => f64 cstr.activation_temperature;
    "cstr_heat_rise" => f64 cstr.heat_rise;
    "cstr_cooling_rate" => f64 cstr.cooling_rate;
    "cstr_coolant_mid" => f64 cstr.coolant_mid;
    "cstr_coolant_span" => f64 cstr.coolant_span;
    "cstr_temperature_limit" => f64 cstr.temperature_limit;
    "cstr_setpoint" => f64 cstr.setpoint;
    "cstr_dt" => f64 cstr.dt;
    "cstr_substeps" => int cstr.substeps;
    "cstr_horizon" => int cstr.horizon;
    "cstr_reset_concentration" => f64 cstr.reset_concentration;
    "cstr_reset_temperature" => f64 cstr.reset_temperature;
    "cstr_reset_jitter" => f64 cstr.reset_jitter;
}

impl TrainConfig {
    /// Full key=value snapshot, one pair per line, in declaration order.
    pub fn render_flat(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            out.push_str(key);
            out.push('=');
            out.push_str(&self.get_key(key).expect("every declared key formats"));
            out.push('\n');
        }
        out
    }

    /// Parse flat key=value text over `self`. Lines are trimmed; `#` starts a
    /// comment; unknown keys and malformed values are rejected with their line
    /// number.
    pub fn apply_flat_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            self.set_key(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn from_flat_text(text: &str) -> Result<Self> {
        let mut config = Self::default();
        config.apply_flat_text(text)?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("beta", self.beta),
            ("lambda", self.lambda),
            ("epsilon", self.epsilon),
            ("lr_actor", self.lr_actor),
            ("lr_critic", self.lr_critic),
            ("lr_cost_critic", self.lr_cost_critic),
            ("lr_regulator", self.lr_regulator),
            ("lr_alpha", self.lr_alpha),
            ("alpha", self.alpha),
            ("pm_dt", self.point_mass.dt),
            ("cstr_dt", self.cstr.dt),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0,1), got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0,1], got {}", self.tau)));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::Config(format!("noise_sigma must be nonnegative, got {}", self.noise_sigma)));
        }
        let counts = [
            ("batch_size", self.batch_size as u64),
            ("buffer_capacity", self.buffer_capacity as u64),
            ("total_steps", self.total_steps),
            ("updates_per_step", self.updates_per_step),
            ("td3_policy_delay", self.td3_policy_delay),
            ("pm_horizon", self.point_mass.horizon),
            ("cstr_horizon", self.cstr.horizon),
            ("cstr_substeps", self.cstr.substeps as u64),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden_sizes.is_empty() {
            return Err(Error::Config("hidden_sizes must not be empty".into()));
        }
        if !(0.0..=1.0).contains(&self.point_mass.drag) {
            return Err(Error::Config(format!("pm_drag must lie in [0,1], got {}", self.point_mass.drag)));
        }
        Ok(())
    }
}

/// Per-episode training telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub episode: u64,
    pub ep_return: f64,
    pub ep_cost: f64,
    pub cum_cost: f64,
    pub rc_ratio: f64,
    pub ret_over_logcost: f64,
    pub mean_rho: f64,
    /// Per-dimension mean scaling over the episode.
    pub rho_per_dim: Vec<f64>,
    pub actor_loss: f64,
    pub rcritic_loss: f64,
    pub ccritic_loss: f64,
    pub reg_loss: f64,
}

/// One acting-time record for the debug trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub observation: Vec<f64>,
    pub raw_action: Vec<f64>,
    pub cost_estimate: f64,
    pub rho: Vec<f64>,
    pub scaled_action: Vec<f64>,
}

/// Receives run outputs as they are produced; file formats live in the std
/// companion crate.
pub trait RunSink {
    fn on_metrics(&mut self, row: &MetricsRow) -> Result<()>;
    fn on_checkpoint(&mut self, step: u64, checkpoint: &Checkpoint) -> Result<()>;
    fn on_trace(&mut self, row: &TraceRow) -> Result<()> {
        let _ = row;
        Ok(())
    }
}

/// In-memory sink for tests and sweeps.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub rows: Vec<MetricsRow>,
    pub checkpoints: Vec<(u64, Checkpoint)>,
    pub traces: Vec<TraceRow>,
}

impl RunSink for MemorySink {
    fn on_metrics(&mut self, row: &MetricsRow) -> Result<()> {
        self.rows.push(row.clone());
        Ok(())
    }

    fn on_checkpoint(&mut self, step: u64, checkpoint: &Checkpoint) -> Result<()> {
        self.checkpoints.push((step, checkpoint.clone()));
        Ok(())
    }

    fn on_trace(&mut self, row: &TraceRow) -> Result<()> {
        self.traces.push(row.clone());
        Ok(())
    }
}

/// Result of a completed training run.
pub struct TrainOutcome {
    pub steps: u64,
    pub episodes: u64,
    pub final_metrics: Option<MetricsRow>,
    pub checkpoint: Checkpoint,
}

/// RC ratio and return-over-log-cost with documented floors for the zero-cost
/// case: divide by `max(cost, 1)` and by `ln(e + cost)` respectively.
pub fn compute_rc(total_return: f64, cumulative_cost: f64) -> (f64, f64) {
    debug_assert!(cumulative_cost >= 0.0);
    let rc_ratio = total_return / cumulative_cost.max(1.0);
    let ret_over_logcost = total_return / math::ln(core::f64::consts::E + cumulative_cost);
    (rc_ratio, ret_over_logcost)
}

pub fn build_env(config: &TrainConfig, seed: u64) -> Result<Box<dyn Environment>> {
    let env_rng = stream_rng(seed, stream::ENV);
    let inner: Box<dyn Environment> = match config.env {
        EnvKind::PointMass => Box::new(PointMass::new(config.point_mass.clone(), env_rng)),
        EnvKind::Cstr => Box::new(Cstr::new(config.cstr.clone(), env_rng)),
    };
    if config.noise_sigma > 0.0 {
        let spec = NoiseSpec {
            sigma: config.noise_sigma,
            apply_to_observations: config.noise_on_observations,
            apply_to_actions: config.noise_on_actions,
        };
        Ok(Box::new(NoiseWrapper::new(inner, spec, stream_rng(seed, stream::NOISE))?))
    } else {
        Ok(inner)
    }
}

fn build_agent(config: &TrainConfig, obs_dim: usize, action_dim: usize) -> Result<TaskAgent> {
    let mut init_rng = stream_rng(config.seed, stream::INIT);
    match config.agent {
        AgentKind::Sac => {
            let params = SacParams {
                gamma: config.gamma,
                alpha: config.alpha,
                auto_alpha: config.auto_alpha,
                target_entropy: None,
                lr_actor: config.lr_actor,
                lr_critic: config.lr_critic,
                lr_alpha: config.lr_alpha,
            };
            Ok(TaskAgent::Sac(SacAgent::new(obs_dim, action_dim, &config.hidden_sizes, params, &mut init_rng)?))
        }
        AgentKind::Td3 => {
            let params = Td3Params {
                gamma: config.gamma,
                exploration_noise: config.td3_exploration_noise,
                smoothing_noise: config.td3_smoothing_noise,
                noise_clip: config.td3_noise_clip,
                policy_delay: config.td3_policy_delay,
                lr_actor: config.lr_actor,
                lr_critic: config.lr_critic,
            };
            Ok(TaskAgent::Td3(Td3Agent::new(obs_dim, action_dim, &config.hidden_sizes, params, &mut init_rng)?))
        }
    }
}

/// Build the safety components. Their init draws come from a separate stream
/// offset so the agent's initialization is identical with and without them.
fn build_safety(config: &TrainConfig, obs_dim: usize, action_dim: usize) -> Result<(CostCriticPair, Regulator)> {
    let mut init_rng = stream_rng(config.seed, stream::INIT + 100);
    let pair = CostCriticPair::new(
        obs_dim,
        action_dim,
        &config.hidden_sizes,
        config.gamma,
        config.lr_cost_critic,
        &mut init_rng,
    )?;
    let regulator = Regulator::new(
        obs_dim,
        action_dim,
        &config.hidden_sizes,
        config.scalar_mode,
        config.lr_regulator,
        &mut init_rng,
    )?;
    Ok((pair, regulator))
}

struct EpisodeStats {
    ep_return: f64,
    ep_cost: f64,
    steps: u64,
    rho_sums: Vec<f64>,
    actor_loss_sum: f64,
    rcritic_loss_sum: f64,
    ccritic_loss_sum: f64,
    reg_loss_sum: f64,
    update_count: u64,
}

impl EpisodeStats {
    fn new(action_dim: usize) -> Self {
        Self {
            ep_return: 0.0,
            ep_cost: 0.0,
            steps: 0,
            rho_sums: vec![0.0; action_dim],
            actor_loss_sum: 0.0,
            rcritic_loss_sum: 0.0,
            ccritic_loss_sum: 0.0,
            reg_loss_sum: 0.0,
            update_count: 0,
        }
    }

    fn mean_loss(sum: f64, count: u64) -> f64 {
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }
}

/// Run the training loop, streaming outputs into `sink`.
pub fn train(config: &TrainConfig, sink: &mut dyn RunSink) -> Result<TrainOutcome> {
    config.validate()?;
    let mut env = build_env(config, config.seed)?;
    let obs_dim = env.observation_dim();
    let action_dim = env.action_dim();

    let mut agent = build_agent(config, obs_dim, action_dim)?;
    let (mut cost_critics, mut regulator) = build_safety(config, obs_dim, action_dim)?;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity, stream_rng(config.seed, stream::BUFFER))?;
    let mut policy_rng = stream_rng(config.seed, stream::POLICY);

    let mut observation = env.reset();
    let mut episode: u64 = 0;
    let mut cum_cost = 0.0;
    let mut stats = EpisodeStats::new(action_dim);
    let mut last_row: Option<MetricsRow> = None;

    let decorate = |step: u64| {
        move |e: Error| match e {
            Error::Numeric(msg) => Error::Numeric(format!("step {step}: {msg}")),
            other => other,
        }
    };

    for step in 1..=config.total_steps {
        // --- interaction ---
        let raw_action: Vec<f64> = if step <= config.warmup_steps {
            (0..action_dim).map(|_| rng::uniform_symmetric(&mut policy_rng, 1.0)).collect()
        } else {
            agent.sample_action(&observation, &mut policy_rng, false).map_err(decorate(step))?.0
        };

        let (rho, scaled_action, cost_estimate) = if config.regulator_enabled {
            let c_hat = cost_critics.predict(&observation, &raw_action, false).map_err(decorate(step))?;
            regulator.observe_cost(c_hat);
            let (rho, scaled) = regulator.scale(&observation, &raw_action, c_hat).map_err(decorate(step))?;
            (rho, scaled, c_hat)
        } else {
            (ScalingVector::ones(action_dim), raw_action.clone(), 0.0)
        };

        let result = env.step(&scaled_action).map_err(decorate(step))?;
        if config.trace {
            sink.on_trace(&TraceRow {
                step,
                observation: observation.clone(),
                raw_action: raw_action.clone(),
                cost_estimate,
                rho: rho.as_slice().to_vec(),
                scaled_action: scaled_action.clone(),
            })?;
        }

        stats.ep_return += result.reward;
        stats.ep_cost += result.cost;
        cum_cost += result.cost;
        stats.steps += 1;
        for (sum, r) in stats.rho_sums.iter_mut().zip(rho.iter()) {
            *sum += r;
        }

        buffer.push(Transition {
            observation: core::mem::replace(&mut observation, result.observation),
            scaled_action,
            reward: result.reward,
            cost: result.cost,
            next_observation: observation.clone(),
            done: result.terminated,
        });

        // --- gradient phase ---
        if step > config.warmup_steps {
            for _ in 0..config.updates_per_step {
                let indices = buffer.sample_indices(config.batch_size);
                let batch: Vec<&Transition> = indices.iter().map(|&i| buffer.get(i)).collect();

                let rcritic_loss = {
                    let scaling = if config.regulator_enabled {
                        ScalingSource::Regulated { critics: &cost_critics, regulator: &regulator }
                    } else {
                        ScalingSource::Disabled
                    };
                    let rl = agent.critic_update(&batch, &scaling, &mut policy_rng).map_err(decorate(step))?;
                    let al = agent.actor_update(&batch, &scaling, &mut policy_rng).map_err(decorate(step))?;
                    stats.actor_loss_sum += al;
                    rl
                };
                stats.rcritic_loss_sum += rcritic_loss;

                if config.regulator_enabled {
                    let cl = cost_critics
                        .update(&batch, &regulator, &agent, &mut policy_rng)
                        .map_err(decorate(step))?;
                    let states: Vec<&[f64]> = batch.iter().map(|t| t.observation.as_slice()).collect();
                    let gl = regulator
                        .update(
                            &states,
                            &cost_critics,
                            &agent,
                            config.beta,
                            config.lambda,
                            config.epsilon,
                            &mut policy_rng,
                        )
                        .map_err(decorate(step))?;
                    stats.ccritic_loss_sum += cl;
                    stats.reg_loss_sum += gl;
                }

                agent.sync_targets(config.tau)?;
                if config.regulator_enabled {
                    cost_critics.sync_targets(config.tau)?;
                }
                stats.update_count += 1;
            }
        }

        // --- episode bookkeeping ---
        if result.terminated || result.truncated {
            episode += 1;
            let (rc_ratio, ret_over_logcost) = compute_rc(stats.ep_return, cum_cost);
            let n = stats.steps.max(1) as f64;
            let rho_per_dim: Vec<f64> = stats.rho_sums.iter().map(|s| s / n).collect();
            let mean_rho = rho_per_dim.iter().sum::<f64>() / action_dim.max(1) as f64;
            let row = MetricsRow {
                step,
                episode,
                ep_return: stats.ep_return,
                ep_cost: stats.ep_cost,
                cum_cost,
                rc_ratio,
                ret_over_logcost,
                mean_rho,
                rho_per_dim,
                actor_loss: EpisodeStats::mean_loss(stats.actor_loss_sum, stats.update_count),
                rcritic_loss: EpisodeStats::mean_loss(stats.rcritic_loss_sum, stats.update_count),
                ccritic_loss: EpisodeStats::mean_loss(stats.ccritic_loss_sum, stats.update_count),
                reg_loss: EpisodeStats::mean_loss(stats.reg_loss_sum, stats.update_count),
            };
            sink.on_metrics(&row)?;
            last_row = Some(row);
            stats = EpisodeStats::new(action_dim);
            observation = env.reset();
        }

        if (config.checkpoint_every > 0 && step % config.checkpoint_every == 0) || step == config.total_steps {
            let ckpt = build_checkpoint(config, step, episode, &agent, &cost_critics, &regulator);
            sink.on_checkpoint(step, &ckpt)?;
        }
    }

    let checkpoint = build_checkpoint(config, config.total_steps, episode, &agent, &cost_critics, &regulator);
    Ok(TrainOutcome {
        steps: config.total_steps,
        episodes: episode,
        final_metrics: last_row,
        checkpoint,
    })
}

/// Assemble the full run state into a checkpoint container.
pub fn build_checkpoint(
    config: &TrainConfig,
    step: u64,
    episode: u64,
    agent: &TaskAgent,
    cost_critics: &CostCriticPair,
    regulator: &Regulator,
) -> Checkpoint {
    let mut ckpt = Checkpoint::new();
    ckpt.push("config", Section::Text(config.render_flat()));
    ckpt.push("meta", Section::Ints(vec![step, episode]));
    match agent {
        TaskAgent::Sac(sac) => {
            for (name, net) in sac.networks() {
                ckpt.push(&format!("agent.{name}"), Section::Network(net.clone()));
            }
            for (name, opt) in sac.optimizer_states() {
                ckpt.push(&format!("agent.{name}"), Section::from_adam(opt));
            }
            let (alpha, log_alpha, alpha_opt) = sac.alpha_state();
            ckpt.push(
                "agent.alpha",
                Section::Floats(vec![alpha, log_alpha, alpha_opt.m, alpha_opt.v]),
            );
            ckpt.push("agent.alpha.steps", Section::Ints(vec![alpha_opt.step]));
        }
        TaskAgent::Td3(td3) => {
            for (name, net) in td3.networks() {
                ckpt.push(&format!("agent.{name}"), Section::Network(net.clone()));
            }
            for (name, opt) in td3.optimizer_states() {
                ckpt.push(&format!("agent.{name}"), Section::from_adam(opt));
            }
            ckpt.push("agent.critic_updates", Section::Ints(vec![td3.critic_update_count()]));
        }
    }
    let (q1, q2, t1, t2) = cost_critics.networks();
    ckpt.push("cost.q1", Section::Network(q1.clone()));
    ckpt.push("cost.q2", Section::Network(q2.clone()));
    ckpt.push("cost.q1.target", Section::Network(t1.clone()));
    ckpt.push("cost.q2.target", Section::Network(t2.clone()));
    let (o1, o2) = cost_critics.optimizer_states();
    ckpt.push("cost.q1.opt", Section::from_adam(o1));
    ckpt.push("cost.q2.opt", Section::from_adam(o2));
    ckpt.push("regulator.net", Section::Network(regulator.network().clone()));
    ckpt.push("regulator.opt", Section::from_adam(regulator.optimizer_state()));
    ckpt.push("regulator.state", Section::Floats(vec![regulator.cost_norm_mean()]));
    ckpt
}

/// Everything restored from a checkpoint.
pub struct RestoredRun {
    pub config: TrainConfig,
    pub step: u64,
    pub episode: u64,
    pub agent: TaskAgent,
    pub cost_critics: CostCriticPair,
    pub regulator: Regulator,
}

/// Rebuild agent, safety components, and config from a checkpoint, validating
/// dimensions against the configured environment.
pub fn restore(ckpt: &Checkpoint) -> Result<RestoredRun> {
    let config = TrainConfig::from_flat_text(ckpt.text("config")?)?;
    config.validate()?;
    let meta = ckpt.ints("meta")?;
    if meta.len() != 2 {
        return Err(Error::Checkpoint("meta section must hold step and episode".into()));
    }
    let (step, episode) = (meta[0], meta[1]);

    let probe_env = build_env(&config, config.seed)?;
    let obs_dim = probe_env.observation_dim();
    let action_dim = probe_env.action_dim();
    drop(probe_env);

    let agent = match config.agent {
        AgentKind::Sac => {
            let actor = ckpt.network("agent.actor")?.clone();
            let q1 = ckpt.network("agent.q1")?.clone();
            let q2 = ckpt.network("agent.q2")?.clone();
            let t1 = ckpt.network("agent.q1.target")?.clone();
            let t2 = ckpt.network("agent.q2.target")?.clone();
            let opt_actor = ckpt.adam("agent.actor.opt", &actor)?;
            let opt_q1 = ckpt.adam("agent.q1.opt", &q1)?;
            let opt_q2 = ckpt.adam("agent.q2.opt", &q2)?;
            let alpha_state = ckpt.floats("agent.alpha")?;
            if alpha_state.len() != 4 {
                return Err(Error::Checkpoint("agent.alpha must hold four values".into()));
            }
            let alpha_steps = ckpt.ints("agent.alpha.steps")?;
            let params = SacParams {
                gamma: config.gamma,
                alpha: config.alpha,
                auto_alpha: config.auto_alpha,
                target_entropy: None,
                lr_actor: config.lr_actor,
                lr_critic: config.lr_critic,
                lr_alpha: config.lr_alpha,
            };
            let alpha_opt = crate::agent::ScalarAdam {
                m: alpha_state[2],
                v: alpha_state[3],
                step: alpha_steps.first().copied().unwrap_or(0),
            };
            TaskAgent::Sac(SacAgent::from_parts(
                obs_dim,
                action_dim,
                params,
                actor,
                q1,
                q2,
                t1,
                t2,
                opt_actor,
                opt_q1,
                opt_q2,
                alpha_state[0],
                alpha_state[1],
                alpha_opt,
            )?)
        }
        AgentKind::Td3 => {
            let actor = ckpt.network("agent.actor")?.clone();
            let actor_target = ckpt.network("agent.actor.target")?.clone();
            let q1 = ckpt.network("agent.q1")?.clone();
            let q2 = ckpt.network("agent.q2")?.clone();
            let t1 = ckpt.network("agent.q1.target")?.clone();
            let t2 = ckpt.network("agent.q2.target")?.clone();
            let opt_actor = ckpt.adam("agent.actor.opt", &actor)?;
            let opt_q1 = ckpt.adam("agent.q1.opt", &q1)?;
            let opt_q2 = ckpt.adam("agent.q2.opt", &q2)?;
            let critic_updates = ckpt.ints("agent.critic_updates")?.first().copied().unwrap_or(0);
            let params = Td3Params {
                gamma: config.gamma,
                exploration_noise: config.td3_exploration_noise,
                smoothing_noise: config.td3_smoothing_noise,
                noise_clip: config.td3_noise_clip,
                policy_delay: config.td3_policy_delay,
                lr_actor: config.lr_actor,
                lr_critic: config.lr_critic,
            };
            TaskAgent::Td3(Td3Agent::from_parts(
                obs_dim,
                action_dim,
                params,
                actor,
                actor_target,
                q1,
                q2,
                t1,
                t2,
                opt_actor,
                opt_q1,
                opt_q2,
                critic_updates,
            )?)
        }
    };

    let q1 = ckpt.network("cost.q1")?.clone();
    let q2 = ckpt.network("cost.q2")?.clone();
    let t1 = ckpt.network("cost.q1.target")?.clone();
    let t2 = ckpt.network("cost.q2.target")?.clone();
    if q1.input_dim() != obs_dim + action_dim {
        return Err(Error::Config(format!(
            "checkpoint cost-critic input width {} does not match environment ({} + {})",
            q1.input_dim(),
            obs_dim,
            action_dim
        )));
    }
    let o1 = ckpt.adam("cost.q1.opt", &q1)?;
    let o2 = ckpt.adam("cost.q2.opt", &q2)?;
    let cost_critics =
        CostCriticPair::from_parts(q1, q2, t1, t2, o1, o2, config.gamma, config.lr_cost_critic)?;

    let reg_net = ckpt.network("regulator.net")?.clone();
    if reg_net.input_dim() != obs_dim + action_dim + 1 {
        return Err(Error::Config(format!(
            "checkpoint regulator input width {} does not match environment",
            reg_net.input_dim()
        )));
    }
    let reg_opt = ckpt.adam("regulator.opt", &reg_net)?;
    let reg_state = ckpt.floats("regulator.state")?;
    let regulator = Regulator::from_parts(
        reg_net,
        reg_opt,
        action_dim,
        config.scalar_mode,
        reg_state.first().copied().unwrap_or(0.0),
        config.lr_regulator,
    )?;

    Ok(RestoredRun { config, step, episode, agent, cost_critics, regulator })
}

/// Summary statistics over frozen-parameter evaluation rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub episodes: u64,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_cost: f64,
    pub std_cost: f64,
    /// Fraction of steps with positive cost.
    pub violation_rate: f64,
}

/// Roll out a restored checkpoint with frozen parameters. The regulator is
/// active exactly as during training (including its frozen input normalizer);
/// the noise wrapper applies if the training config used one.
pub fn evaluate(ckpt: &Checkpoint, episodes: u64, deterministic: bool, seed: u64) -> Result<EvalSummary> {
    let run = restore(ckpt)?;
    if episodes == 0 {
        return Ok(EvalSummary {
            episodes: 0,
            mean_return: 0.0,
            std_return: 0.0,
            mean_cost: 0.0,
            std_cost: 0.0,
            violation_rate: 0.0,
        });
    }
    let mut env = build_env(&run.config, seed)?;
    let mut rng = stream_rng(seed, stream::EVAL);
    let mut returns = Vec::with_capacity(episodes as usize);
    let mut costs = Vec::with_capacity(episodes as usize);
    let mut violations: u64 = 0;
    let mut total_steps: u64 = 0;

    for _ in 0..episodes {
        let mut observation = env.reset();
        let mut ep_return = 0.0;
        let mut ep_cost = 0.0;
        loop {
            let (raw_action, _) = run.agent.sample_action(&observation, &mut rng, deterministic)?;
            let executed = if run.config.regulator_enabled {
                let c_hat = run.cost_critics.predict(&observation, &raw_action, false)?;
                run.regulator.scale(&observation, &raw_action, c_hat)?.1
            } else {
                raw_action
            };
            let result = env.step(&executed)?;
            ep_return += result.reward;
            ep_cost += result.cost;
            total_steps += 1;
            if result.cost > 0.0 {
                violations += 1;
            }
            observation = result.observation;
            if result.terminated || result.truncated {
                break;
            }
        }
        returns.push(ep_return);
        costs.push(ep_cost);
    }

    let mean_std = |xs: &[f64]| {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        (mean, math::sqrt(var))
    };
    let (mean_return, std_return) = mean_std(&returns);
    let (mean_cost, std_cost) = mean_std(&costs);
    Ok(EvalSummary {
        episodes,
        mean_return,
        std_return,
        mean_cost,
        std_cost,
        violation_rate: violations as f64 / total_steps.max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro_config() -> TrainConfig {
        TrainConfig {
            hidden_sizes: vec![8, 8],
            batch_size: 8,
            buffer_capacity: 4096,
            warmup_steps: 20,
            total_steps: 120,
            checkpoint_every: 50,
            point_mass: PointMassParams { horizon: 25, ..PointMassParams::default() },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn compute_rc_paper_checkpoint_row() {
        let (rc, _) = compute_rc(2571.0, 412.0);
        assert!((rc - 6.240).abs() < 1e-3, "rc={rc}");
    }

    #[test]
    fn compute_rc_zero_return_and_zero_cost_floors() {
        let (rc, rolc) = compute_rc(0.0, 123.0);
        assert_eq!(rc, 0.0);
        assert_eq!(rolc, 0.0);

        let (rc, rolc) = compute_rc(100.0, 0.0);
        assert_eq!(rc, 100.0);
        assert!((rolc - 100.0).abs() < 1e-12, "ln(e) floor");
    }

    #[test]
    fn flat_codec_round_trips_and_rejects_unknown_keys() {
        let mut config = TrainConfig::default();
        config.lambda = 1e-5;
        config.hidden_sizes = vec![32, 16];
        config.env = EnvKind::Cstr;
        let text = config.render_flat();
        let back = TrainConfig::from_flat_text(&text).unwrap();
        assert_eq!(config, back);
        assert_eq!(text, back.render_flat());

        let mut other = TrainConfig::default();
        let err = other.apply_flat_text("nonsense_key=1\n").unwrap_err();
        assert!(matches!(err, Error::Config(msg) if msg.contains("nonsense_key")));
        let err = other.apply_flat_text("gamma=fast\n").unwrap_err();
        assert!(matches!(err, Error::Config(msg) if msg.contains("gamma")));
    }

    #[test]
    fn flat_codec_ignores_comments_and_blanks() {
        let mut config = TrainConfig::default();
        config
            .apply_flat_text("# comment\n\n  seed = 9 \ntotal_steps=5\n")
            .unwrap();
        assert_eq!(config.seed, 9);
        assert_eq!(config.total_steps, 5);
    }

    #[test]
    fn validation_rejects_out_of_range_values() {
        let mut config = TrainConfig::default();
        config.gamma = 1.0;
        assert!(config.validate().is_err());
        let mut config = TrainConfig::default();
        config.tau = 0.0;
        assert!(config.validate().is_err());
        let mut config = TrainConfig::default();
        config.lambda = -1.0;
        assert!(config.validate().is_err());
        let mut config = TrainConfig::default();
        config.total_steps = 0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn warmup_gate_blocks_all_updates() {
        let mut config = micro_config();
        config.total_steps = 15; // below warmup_steps = 20
        let mut sink = MemorySink::default();
        let outcome = train(&config, &mut sink).unwrap();
        assert_eq!(outcome.steps, 15);
        // No updates happened: every logged loss is exactly zero.
        for row in &sink.rows {
            assert_eq!(row.actor_loss, 0.0);
            assert_eq!(row.rcritic_loss, 0.0);
        }
        // And the checkpointed critics still match a fresh initialization.
        let run = restore(&outcome.checkpoint).unwrap();
        let (fresh_pair, fresh_reg) = build_safety(&config, 4, 2).unwrap();
        assert_eq!(
            run.cost_critics.networks().0.params_flat(),
            fresh_pair.networks().0.params_flat()
        );
        assert_eq!(run.regulator.network().params_flat(), fresh_reg.network().params_flat());
    }

    #[test]
    fn metrics_are_deterministic_and_cum_cost_nondecreasing() {
        let config = micro_config();
        let mut a = MemorySink::default();
        let mut b = MemorySink::default();
        train(&config, &mut a).unwrap();
        train(&config, &mut b).unwrap();
        assert_eq!(a.rows, b.rows);
        assert!(!a.rows.is_empty());
        let mut prev = 0.0;
        for row in &a.rows {
            assert!(row.cum_cost >= prev);
            prev = row.cum_cost;
            assert!(row.mean_rho > 0.0 && row.mean_rho < 1.0);
        }
    }

    #[test]
    fn disabled_regulator_never_touches_safety_parameters() {
        let mut config = micro_config();
        config.regulator_enabled = false;
        let mut sink = MemorySink::default();
        let outcome = train(&config, &mut sink).unwrap();
        let run = restore(&outcome.checkpoint).unwrap();
        let (fresh_pair, fresh_reg) = build_safety(&config, 4, 2).unwrap();
        assert_eq!(
            run.cost_critics.networks().0.params_flat(),
            fresh_pair.networks().0.params_flat()
        );
        assert_eq!(
            run.cost_critics.networks().2.params_flat(),
            fresh_pair.networks().2.params_flat()
        );
        assert_eq!(run.regulator.network().params_flat(), fresh_reg.network().params_flat());
        for row in &sink.rows {
            assert_eq!(row.mean_rho, 1.0, "identity scaling when disabled");
            assert_eq!(row.ccritic_loss, 0.0);
            assert_eq!(row.reg_loss, 0.0);
        }
    }

    #[test]
    fn trace_rows_reproduce_the_executed_action() {
        let mut config = micro_config();
        config.trace = true;
        config.total_steps = 60;
        let mut sink = MemorySink::default();
        let outcome = train(&config, &mut sink).unwrap();
        assert_eq!(sink.traces.len(), 60);
        // Executed action equals rho ⊙ a recomputed from the logged pieces.
        for row in &sink.traces {
            for i in 0..row.raw_action.len() {
                let expect = row.rho[i] * row.raw_action[i];
                assert!((row.scaled_action[i] - expect).abs() < 1e-15);
            }
        }
        let _ = outcome;
    }

    #[test]
    fn checkpoints_emitted_on_cadence_and_at_termination() {
        let mut config = micro_config();
        config.total_steps = 120;
        config.checkpoint_every = 50;
        let mut sink = MemorySink::default();
        train(&config, &mut sink).unwrap();
        let steps: Vec<u64> = sink.checkpoints.iter().map(|(s, _)| *s).collect();
        assert_eq!(steps, vec![50, 100, 120]);
    }

    #[test]
    fn checkpoint_restore_round_trips_bitwise() {
        let config = micro_config();
        let mut sink = MemorySink::default();
        let outcome = train(&config, &mut sink).unwrap();
        let bytes = outcome.checkpoint.encode();
        let decoded = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(outcome.checkpoint, decoded);

        let run = restore(&decoded).unwrap();
        let rebuilt = build_checkpoint(&run.config, run.step, run.episode, &run.agent, &run.cost_critics, &run.regulator);
        assert_eq!(bytes, rebuilt.encode(), "restore -> rebuild must be lossless");
    }

    #[test]
    fn evaluate_zero_episodes_is_empty_and_deterministic_repeats() {
        let config = micro_config();
        let mut sink = MemorySink::default();
        let outcome = train(&config, &mut sink).unwrap();
        let empty = evaluate(&outcome.checkpoint, 0, true, 7).unwrap();
        assert_eq!(empty.episodes, 0);
        assert_eq!(empty.mean_return, 0.0);

        let a = evaluate(&outcome.checkpoint, 3, true, 7).unwrap();
        let b = evaluate(&outcome.checkpoint, 3, true, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cum_cost_equals_sum_of_episode_costs() {
        let config = micro_config();
        let mut sink = MemorySink::default();
        train(&config, &mut sink).unwrap();
        let mut running = 0.0;
        for row in &sink.rows {
            running += row.ep_cost;
            assert_eq!(row.cum_cost, running, "cumulative cost must be the exact running sum");
        }
    }

    #[test]
    fn td3_runs_end_to_end() {
        let mut config = micro_config();
        config.agent = AgentKind::Td3;
        let mut sink = MemorySink::default();
        let outcome = train(&config, &mut sink).unwrap();
        assert!(outcome.episodes > 0);
        let run = restore(&outcome.checkpoint).unwrap();
        assert!(matches!(run.agent, TaskAgent::Td3(_)));
    }

    #[test]
    fn cstr_micro_run_completes() {
        let mut config = micro_config();
        config.env = EnvKind::Cstr;
        config.cstr.horizon = 25;
        let mut sink = MemorySink::default();
        let outcome = train(&config, &mut sink).unwrap();
        assert!(outcome.episodes > 0);
        assert!(sink.rows.iter().all(|r| r.ep_return.is_finite()));
    }
}
