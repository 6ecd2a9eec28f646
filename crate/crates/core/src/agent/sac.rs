//! Soft actor-critic over regulated actions.
//!
//! The actor outputs a mean and log-std per action dimension; samples are
//! squashed through tanh with the exact change-of-variables correction in the
//! log-probability. Critic and actor objectives follow the usual twin-critic
//! scheme except that every Q query uses the scaled action `rho ⊙ a`, with the
//! scaling factors treated as constants so no gradient reaches the regulator
//! or the cost critics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::math;
use crate::nn::{adam_step, polyak_update, Activation, AdamState, DenseNetwork, ForwardCache, Gradients};
use crate::rng::{standard_normal, StreamRng};
use crate::safety::ScalingSource;
use crate::{Error, Result};

use super::Transition;

const LOG_STD_MIN: f64 = -20.0;
const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_TWO_PI: f64 = 0.918938533204672742;

/// Hyperparameters of the SAC agent.
#[derive(Debug, Clone)]
pub struct SacParams {
    pub gamma: f64,
    pub alpha: f64,
    pub auto_alpha: bool,
    /// Target entropy for automatic temperature tuning; defaults to `-d`.
    pub target_entropy: Option<f64>,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
}

impl Default for SacParams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha: 0.2,
            auto_alpha: false,
            target_entropy: None,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            lr_alpha: 3e-4,
        }
    }
}

/// Scalar Adam accumulator for the entropy temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarAdam {
    pub m: f64,
    pub v: f64,
    pub step: u64,
}

impl ScalarAdam {
    pub fn new() -> Self {
        Self { m: 0.0, v: 0.0, step: 0 }
    }

    fn step(&mut self, gradient: f64, lr: f64) -> f64 {
        self.step += 1;
        self.m = 0.9 * self.m + 0.1 * gradient;
        self.v = 0.999 * self.v + 0.001 * gradient * gradient;
        let m_hat = self.m / (1.0 - math::powf(0.9, self.step as f64));
        let v_hat = self.v / (1.0 - math::powf(0.999, self.step as f64));
        -lr * m_hat / (math::sqrt(v_hat) + 1e-8)
    }
}

impl Default for ScalarAdam {
    fn default() -> Self {
        Self::new()
    }
}

pub struct SacAgent {
    actor: DenseNetwork,
    q1: DenseNetwork,
    q2: DenseNetwork,
    target_q1: DenseNetwork,
    target_q2: DenseNetwork,
    opt_actor: AdamState,
    opt_q1: AdamState,
    opt_q2: AdamState,
    alpha: f64,
    log_alpha: f64,
    alpha_opt: ScalarAdam,
    params: SacParams,
    target_entropy: f64,
    obs_dim: usize,
    action_dim: usize,
    act_scratch: RefCell<ForwardCache>,
}

struct SquashedSample {
    pre_squash: Vec<f64>,
    action: Vec<f64>,
    log_prob: f64,
}

/// Stable `log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (core::f64::consts::LN_2 - u - math::softplus(-2.0 * u))
}

impl SacAgent {
    pub fn new(
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        params: SacParams,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend_from_slice(hidden);
        actor_sizes.push(2 * action_dim);
        let actor = DenseNetwork::new(&actor_sizes, Activation::Relu, Activation::Identity, rng)?;

        let mut critic_sizes = vec![obs_dim + action_dim];
        critic_sizes.extend_from_slice(hidden);
        critic_sizes.push(1);
        let q1 = DenseNetwork::new(&critic_sizes, Activation::Relu, Activation::Identity, rng)?;
        let q2 = DenseNetwork::new(&critic_sizes, Activation::Relu, Activation::Identity, rng)?;
        let target_q1 = q1.clone();
        let target_q2 = q2.clone();

        let opt_actor = AdamState::new(&actor);
        let opt_q1 = AdamState::new(&q1);
        let opt_q2 = AdamState::new(&q2);
        let target_entropy = params.target_entropy.unwrap_or(-(action_dim as f64));
        let alpha = params.alpha;
        if alpha <= 0.0 {
            return Err(Error::Config(format!("entropy temperature {alpha} must be positive")));
        }
        Ok(Self {
            actor,
            q1,
            q2,
            target_q1,
            target_q2,
            opt_actor,
            opt_q1,
            opt_q2,
            alpha,
            log_alpha: math::ln(alpha),
            alpha_opt: ScalarAdam::new(),
            params,
            target_entropy,
            obs_dim,
            action_dim,
            act_scratch: RefCell::default(),
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn networks(&self) -> [(&'static str, &DenseNetwork); 5] {
        [
            ("actor", &self.actor),
            ("q1", &self.q1),
            ("q2", &self.q2),
            ("q1.target", &self.target_q1),
            ("q2.target", &self.target_q2),
        ]
    }

    pub fn optimizer_states(&self) -> [(&'static str, &AdamState); 3] {
        [
            ("actor.opt", &self.opt_actor),
            ("q1.opt", &self.opt_q1),
            ("q2.opt", &self.opt_q2),
        ]
    }

    pub fn alpha_state(&self) -> (f64, f64, ScalarAdam) {
        (self.alpha, self.log_alpha, self.alpha_opt)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        obs_dim: usize,
        action_dim: usize,
        params: SacParams,
        actor: DenseNetwork,
        q1: DenseNetwork,
        q2: DenseNetwork,
        target_q1: DenseNetwork,
        target_q2: DenseNetwork,
        opt_actor: AdamState,
        opt_q1: AdamState,
        opt_q2: AdamState,
        alpha: f64,
        log_alpha: f64,
        alpha_opt: ScalarAdam,
    ) -> Result<Self> {
        if actor.input_dim() != obs_dim || actor.output_dim() != 2 * action_dim {
            return Err(Error::Checkpoint("actor dimensions do not match the environment".into()));
        }
        if q1.input_dim() != obs_dim + action_dim {
            return Err(Error::Checkpoint("critic dimensions do not match the environment".into()));
        }
        let target_entropy = params.target_entropy.unwrap_or(-(action_dim as f64));
        Ok(Self {
            actor,
            q1,
            q2,
            target_q1,
            target_q2,
            opt_actor,
            opt_q1,
            opt_q2,
            alpha,
            log_alpha,
            alpha_opt,
            params,
            target_entropy,
            obs_dim,
            action_dim,
            act_scratch: RefCell::default(),
        })
    }

    fn split_head<'o>(&self, out: &'o [f64]) -> (&'o [f64], &'o [f64]) {
        out.split_at(self.action_dim)
    }

    fn sample_from_head(
        &self,
        means: &[f64],
        raw_log_stds: &[f64],
        rng: &mut StreamRng,
    ) -> SquashedSample {
        let d = self.action_dim;
        let mut pre_squash = Vec::with_capacity(d);
        let mut action = Vec::with_capacity(d);
        let mut log_prob = 0.0;
        for i in 0..d {
            let l = raw_log_stds[i].clamp(LOG_STD_MIN, LOG_STD_MAX);
            let std = math::exp(l);
            let eps = standard_normal(rng);
            let u = means[i] + std * eps;
            let a = Activation::Tanh.apply(u);
            log_prob += -0.5 * eps * eps - l - HALF_LN_TWO_PI - log_one_minus_tanh_sq(u);
            pre_squash.push(u);
            action.push(a);
        }
        SquashedSample { pre_squash, action, log_prob }
    }

    /// Sample an action: a squash-corrected Gaussian draw, or `tanh(mean)`
    /// when deterministic.
    pub fn sample_action(
        &self,
        observation: &[f64],
        rng: &mut StreamRng,
        deterministic: bool,
    ) -> Result<(Vec<f64>, Option<f64>)> {
        let scratch = &mut *self.act_scratch.borrow_mut();
        self.actor.forward_into(observation, scratch)?;
        let out = scratch.output();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite actor output".into()));
        }
        let (means, raw_log_stds) = self.split_head(out);
        if deterministic {
            let action = means.iter().map(|&m| Activation::Tanh.apply(m)).collect();
            return Ok((action, None));
        }
        let sample = self.sample_from_head(means, raw_log_stds, rng);
        Ok((sample.action, Some(sample.log_prob)))
    }

    /// Regress both critics toward
    /// `r + gamma (1-done) [min_targets(s', rho' ⊙ a') - alpha log pi(a'|s')]`.
    pub fn critic_update(
        &mut self,
        batch: &[&Transition],
        scaling: &ScalingSource<'_>,
        rng: &mut StreamRng,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Config("empty minibatch".into()));
        }
        let mut scratch = ForwardCache::new();
        let mut targets = Vec::with_capacity(batch.len());
        for (i, tr) in batch.iter().enumerate() {
            let y = if tr.done {
                tr.reward
            } else {
                let out = self.actor.forward_value(&tr.next_observation, &mut scratch)?;
                let (means, raw_log_stds) = self.split_head(&out);
                let sample = self.sample_from_head(means, raw_log_stds, rng);
                let rho = scaling.rho_for_target(&tr.next_observation, &sample.action)?;
                let scaled = rho.apply(&sample.action);
                let mut input = tr.next_observation.clone();
                input.extend_from_slice(&scaled);
                let q1 = self.target_q1.forward_value(&input, &mut scratch)?[0];
                let q2 = self.target_q2.forward_value(&input, &mut scratch)?[0];
                tr.reward + self.params.gamma * (q1.min(q2) - self.alpha * sample.log_prob)
            };
            if !y.is_finite() {
                return Err(Error::Numeric(format!("non-finite critic target for transition {i}")));
            }
            targets.push(y);
        }

        let n = batch.len() as f64;
        let mut total_loss = 0.0;
        for (net, opt) in [(&mut self.q1, &mut self.opt_q1), (&mut self.q2, &mut self.opt_q2)] {
            let mut grads = Gradients::zeros_like(net);
            for (tr, &y) in batch.iter().zip(targets.iter()) {
                let mut input = tr.observation.clone();
                input.extend_from_slice(&tr.scaled_action);
                net.forward_into(&input, &mut scratch)?;
                let diff = scratch.output()[0] - y;
                total_loss += diff * diff / n;
                net.backward_accumulate(&scratch, &[2.0 * diff / n], &mut grads)?;
            }
            adam_step(net, &grads, opt, self.params.lr_critic)?;
        }
        Ok(total_loss / 2.0)
    }

    /// Minimize `alpha log pi(a|s) - min_twin Q(s, rho ⊙ a)` over fresh
    /// samples; gradients reach only the actor.
    pub fn actor_update(
        &mut self,
        batch: &[&Transition],
        scaling: &ScalingSource<'_>,
        rng: &mut StreamRng,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Config("empty minibatch".into()));
        }
        let n = batch.len() as f64;
        let d = self.action_dim;
        let mut grads = Gradients::zeros_like(&self.actor);
        let mut actor_cache = ForwardCache::new();
        let mut q_cache1 = ForwardCache::new();
        let mut q_cache2 = ForwardCache::new();
        let mut total_loss = 0.0;
        let mut log_prob_sum = 0.0;
        let mut input_grad: Vec<f64> = Vec::new();

        for tr in batch {
            let s = &tr.observation;
            self.actor.forward_into(s, &mut actor_cache)?;
            let out = actor_cache.output().to_vec();
            let (means, raw_log_stds) = out.split_at(d);
            let sample = self.sample_from_head(means, raw_log_stds, rng);
            log_prob_sum += sample.log_prob;

            let rho = scaling.rho_for_online(s, &sample.action)?;
            let scaled = rho.apply(&sample.action);
            let mut input = s.clone();
            input.extend_from_slice(&scaled);
            self.q1.forward_into(&input, &mut q_cache1)?;
            self.q2.forward_into(&input, &mut q_cache2)?;
            let (q1v, q2v) = (q_cache1.output()[0], q_cache2.output()[0]);
            let (q_min, min_net, min_cache) = if q1v <= q2v {
                (q1v, &self.q1, &q_cache1)
            } else {
                (q2v, &self.q2, &q_cache2)
            };

            let loss = self.alpha * sample.log_prob - q_min;
            if !loss.is_finite() {
                return Err(Error::Numeric("non-finite actor loss".into()));
            }
            total_loss += loss / n;

            // d(q_min)/d(input) with critic parameters frozen.
            min_net.backward_to_input(min_cache, &[1.0], &mut input_grad)?;
            let q_action_grad = &input_grad[s.len()..];

            let mut head_grad = vec![0.0; 2 * d];
            for i in 0..d {
                let a = sample.action[i];
                let u = sample.pre_squash[i];
                // -q_min/n through the scaled action; alpha log_pi/n through
                // the squash correction. Both funnel into the pre-squash u.
                let da = -(rho[i] * q_action_grad[i]) / n;
                let du = da * (1.0 - a * a) + (self.alpha / n) * 2.0 * a;
                head_grad[i] = du;
                let raw_l = raw_log_stds[i];
                if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw_l) {
                    head_grad[d + i] = -(self.alpha / n) + du * (u - means[i]);
                }
            }
            self.actor.backward_accumulate(&actor_cache, &head_grad, &mut grads)?;
        }
        adam_step(&mut self.actor, &grads, &mut self.opt_actor, self.params.lr_actor)?;

        if self.params.auto_alpha {
            let mean_log_prob = log_prob_sum / n;
            let grad = -self.alpha * (mean_log_prob + self.target_entropy);
            self.log_alpha += self.alpha_opt.step(grad, self.params.lr_alpha);
            self.alpha = math::exp(self.log_alpha.clamp(-20.0, 5.0));
        }
        Ok(total_loss)
    }

    pub fn sync_targets(&mut self, tau: f64) -> Result<()> {
        polyak_update(&mut self.target_q1, &self.q1, tau)?;
        polyak_update(&mut self.target_q2, &self.q2, tau)
    }
}
