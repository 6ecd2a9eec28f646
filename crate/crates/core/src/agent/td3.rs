//! Twin-delayed deterministic policy gradient over regulated actions.
//!
//! Deterministic tanh actor, twin critics with clipped double-Q targets,
//! target-policy smoothing, and delayed actor updates. As with SAC, every Q
//! query uses the scaled action with the scaling factors held constant.

use alloc::format;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::nn::{adam_step, polyak_update, Activation, AdamState, DenseNetwork, ForwardCache, Gradients};
use crate::rng::{standard_normal, StreamRng};
use crate::safety::ScalingSource;
use crate::{Error, Result};

use super::Transition;

/// Hyperparameters of the TD3 agent.
#[derive(Debug, Clone)]
pub struct Td3Params {
    pub gamma: f64,
    pub exploration_noise: f64,
    pub smoothing_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: u64,
    pub lr_actor: f64,
    pub lr_critic: f64,
}

impl Default for Td3Params {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            exploration_noise: 0.1,
            smoothing_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
        }
    }
}

pub struct Td3Agent {
    actor: DenseNetwork,
    actor_target: DenseNetwork,
    q1: DenseNetwork,
    q2: DenseNetwork,
    target_q1: DenseNetwork,
    target_q2: DenseNetwork,
    opt_actor: AdamState,
    opt_q1: AdamState,
    opt_q2: AdamState,
    params: Td3Params,
    critic_updates: u64,
    last_actor_loss: f64,
    obs_dim: usize,
    action_dim: usize,
    act_scratch: RefCell<ForwardCache>,
}

impl Td3Agent {
    pub fn new(
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        params: Td3Params,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        if params.policy_delay == 0 {
            return Err(Error::Config("policy delay must be at least 1".into()));
        }
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend_from_slice(hidden);
        actor_sizes.push(action_dim);
        let actor = DenseNetwork::new(&actor_sizes, Activation::Relu, Activation::Tanh, rng)?;
        let actor_target = actor.clone();

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
        Ok(Self {
            actor,
            actor_target,
            q1,
            q2,
            target_q1,
            target_q2,
            opt_actor,
            opt_q1,
            opt_q2,
            params,
            critic_updates: 0,
            last_actor_loss: 0.0,
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

    pub fn critic_update_count(&self) -> u64 {
        self.critic_updates
    }

    pub fn networks(&self) -> [(&'static str, &DenseNetwork); 6] {
        [
            ("actor", &self.actor),
            ("actor.target", &self.actor_target),
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

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        obs_dim: usize,
        action_dim: usize,
        params: Td3Params,
        actor: DenseNetwork,
        actor_target: DenseNetwork,
        q1: DenseNetwork,
        q2: DenseNetwork,
        target_q1: DenseNetwork,
        target_q2: DenseNetwork,
        opt_actor: AdamState,
        opt_q1: AdamState,
        opt_q2: AdamState,
        critic_updates: u64,
    ) -> Result<Self> {
        if actor.input_dim() != obs_dim || actor.output_dim() != action_dim {
            return Err(Error::Checkpoint("actor dimensions do not match the environment".into()));
        }
        if q1.input_dim() != obs_dim + action_dim {
            return Err(Error::Checkpoint("critic dimensions do not match the environment".into()));
        }
        Ok(Self {
            actor,
            actor_target,
            q1,
            q2,
            target_q1,
            target_q2,
            opt_actor,
            opt_q1,
            opt_q2,
            params,
            critic_updates,
            last_actor_loss: 0.0,
            obs_dim,
            action_dim,
            act_scratch: RefCell::default(),
        })
    }

    /// Deterministic actor output, plus clipped Gaussian exploration noise
    /// when exploring. Log-probabilities are not defined for TD3.
    pub fn sample_action(
        &self,
        observation: &[f64],
        rng: &mut StreamRng,
        deterministic: bool,
    ) -> Result<(Vec<f64>, Option<f64>)> {
        let mut action = {
            let scratch = &mut *self.act_scratch.borrow_mut();
            self.actor.forward_value(observation, scratch)?
        };
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numeric("non-finite actor output".into()));
        }
        if !deterministic {
            for a in action.iter_mut() {
                *a = (*a + self.params.exploration_noise * standard_normal(rng)).clamp(-1.0, 1.0);
            }
        }
        Ok((action, None))
    }

    /// Clipped double-Q backup with target-policy smoothing; the smoothing
    /// noise perturbs the raw next action before regulator scaling.
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
                let mut next_action = self.actor_target.forward_value(&tr.next_observation, &mut scratch)?;
                for a in next_action.iter_mut() {
                    let noise = (self.params.smoothing_noise * standard_normal(rng))
                        .clamp(-self.params.noise_clip, self.params.noise_clip);
                    *a = (*a + noise).clamp(-1.0, 1.0);
                }
                let rho = scaling.rho_for_target(&tr.next_observation, &next_action)?;
                let scaled = rho.apply(&next_action);
                let mut input = tr.next_observation.clone();
                input.extend_from_slice(&scaled);
                let q1 = self.target_q1.forward_value(&input, &mut scratch)?[0];
                let q2 = self.target_q2.forward_value(&input, &mut scratch)?[0];
                tr.reward + self.params.gamma * q1.min(q2)
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
        self.critic_updates += 1;
        Ok(total_loss / 2.0)
    }

    /// Maximize `Q1(s, rho ⊙ pi(s))`; runs only every `policy_delay` critic
    /// updates, otherwise reports the previous loss without touching
    /// parameters.
    pub fn actor_update(
        &mut self,
        batch: &[&Transition],
        scaling: &ScalingSource<'_>,
        rng: &mut StreamRng,
    ) -> Result<f64> {
        let _ = rng;
        if batch.is_empty() {
            return Err(Error::Config("empty minibatch".into()));
        }
        if self.critic_updates % self.params.policy_delay != 0 {
            return Ok(self.last_actor_loss);
        }
        let n = batch.len() as f64;
        let mut grads = Gradients::zeros_like(&self.actor);
        let mut actor_cache = ForwardCache::new();
        let mut q_cache = ForwardCache::new();
        let mut total_loss = 0.0;
        let mut input_grad: Vec<f64> = Vec::new();
        for tr in batch {
            let s = &tr.observation;
            self.actor.forward_into(s, &mut actor_cache)?;
            let action = actor_cache.output().to_vec();
            let rho = scaling.rho_for_online(s, &action)?;
            let scaled = rho.apply(&action);
            let mut input = s.clone();
            input.extend_from_slice(&scaled);
            self.q1.forward_into(&input, &mut q_cache)?;
            let q = q_cache.output()[0];
            if !q.is_finite() {
                return Err(Error::Numeric("non-finite actor loss".into()));
            }
            total_loss -= q / n;

            self.q1.backward_to_input(&q_cache, &[1.0], &mut input_grad)?;
            let action_grad: Vec<f64> = (0..self.action_dim)
                .map(|i| -(rho[i] * input_grad[s.len() + i]) / n)
                .collect();
            self.actor.backward_accumulate(&actor_cache, &action_grad, &mut grads)?;
        }
        adam_step(&mut self.actor, &grads, &mut self.opt_actor, self.params.lr_actor)?;
        self.last_actor_loss = total_loss;
        Ok(total_loss)
    }

    pub fn sync_targets(&mut self, tau: f64) -> Result<()> {
        polyak_update(&mut self.actor_target, &self.actor, tau)?;
        polyak_update(&mut self.target_q1, &self.q1, tau)?;
        polyak_update(&mut self.target_q2, &self.q2, tau)
    }
}
