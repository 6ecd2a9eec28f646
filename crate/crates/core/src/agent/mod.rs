//! Replay buffer and the two interchangeable off-policy task agents.
//!
//! Stored transitions carry only the executed (scaled) action; the raw policy
//! sample is never persisted, so nothing downstream can accidentally learn
//! from an action the environment never saw.

mod sac;
mod td3;

pub use sac::{SacAgent, SacParams, ScalarAdam};
pub use td3::{Td3Agent, Td3Params};

use alloc::vec::Vec;

use rand::Rng;

use crate::rng::StreamRng;
use crate::safety::Policy;
use crate::{Error, Result};

/// One stored interaction record.
///
/// `done` marks true termination only; horizon truncation keeps it false so
/// targets bootstrap through episode boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    /// The executed action, i.e. the regulator-scaled policy sample.
    pub scaled_action: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub next_observation: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring buffer with uniform with-replacement sampling.
#[derive(Debug)]
pub struct ReplayBuffer {
    entries: Vec<Transition>,
    capacity: usize,
    write_head: usize,
    rng: StreamRng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, rng: StreamRng) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay buffer capacity must be positive".into()));
        }
        Ok(Self {
            entries: Vec::new(),
            capacity,
            write_head: 0,
            rng,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, transition: Transition) {
        if self.entries.len() < self.capacity {
            self.entries.push(transition);
        } else {
            self.entries[self.write_head] = transition;
        }
        self.write_head = (self.write_head + 1) % self.capacity;
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.entries[index]
    }

    pub fn sample_indices(&mut self, count: usize) -> Vec<usize> {
        let len = self.entries.len();
        (0..count).map(|_| self.rng.gen_range(0..len)).collect()
    }

    /// Borrow a minibatch by sampled index.
    pub fn sample(&mut self, count: usize) -> Vec<&Transition> {
        let indices = self.sample_indices(count);
        indices.into_iter().map(|i| &self.entries[i]).collect()
    }
}

/// Either task agent, dispatched by the training loop.
pub enum TaskAgent {
    Sac(SacAgent),
    Td3(Td3Agent),
}

impl TaskAgent {
    pub fn action_dim(&self) -> usize {
        match self {
            TaskAgent::Sac(a) => a.action_dim(),
            TaskAgent::Td3(a) => a.action_dim(),
        }
    }

    pub fn sample_action(
        &self,
        observation: &[f64],
        rng: &mut StreamRng,
        deterministic: bool,
    ) -> Result<(Vec<f64>, Option<f64>)> {
        match self {
            TaskAgent::Sac(a) => a.sample_action(observation, rng, deterministic),
            TaskAgent::Td3(a) => a.sample_action(observation, rng, deterministic),
        }
    }

    pub fn critic_update(
        &mut self,
        batch: &[&Transition],
        scaling: &crate::safety::ScalingSource<'_>,
        rng: &mut StreamRng,
    ) -> Result<f64> {
        match self {
            TaskAgent::Sac(a) => a.critic_update(batch, scaling, rng),
            TaskAgent::Td3(a) => a.critic_update(batch, scaling, rng),
        }
    }

    pub fn actor_update(
        &mut self,
        batch: &[&Transition],
        scaling: &crate::safety::ScalingSource<'_>,
        rng: &mut StreamRng,
    ) -> Result<f64> {
        match self {
            TaskAgent::Sac(a) => a.actor_update(batch, scaling, rng),
            TaskAgent::Td3(a) => a.actor_update(batch, scaling, rng),
        }
    }

    pub fn sync_targets(&mut self, tau: f64) -> Result<()> {
        match self {
            TaskAgent::Sac(a) => a.sync_targets(tau),
            TaskAgent::Td3(a) => a.sync_targets(tau),
        }
    }
}

impl Policy for TaskAgent {
    fn action_dim(&self) -> usize {
        TaskAgent::action_dim(self)
    }

    fn sample_fresh(&self, observation: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
        match self {
            TaskAgent::Sac(a) => Ok(a.sample_action(observation, rng, false)?.0),
            TaskAgent::Td3(a) => Ok(a.sample_action(observation, rng, true)?.0),
        }
    }

    fn sample_successor(&self, observation: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
        self.sample_fresh(observation, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, stream_rng};
    use alloc::vec;

    fn transition(tag: f64) -> Transition {
        Transition {
            observation: vec![tag, 0.0],
            scaled_action: vec![0.1 * tag],
            reward: tag,
            cost: 0.0,
            next_observation: vec![tag + 1.0, 0.0],
            done: false,
        }
    }

    #[test]
    fn push_grows_until_capacity_then_evicts_oldest() {
        let mut buf = ReplayBuffer::new(2, stream_rng(0, stream::BUFFER)).unwrap();
        buf.push(transition(1.0));
        assert_eq!(buf.len(), 1);
        buf.push(transition(2.0));
        buf.push(transition(3.0));
        assert_eq!(buf.len(), 2);
        let rewards: Vec<f64> = (0..buf.len()).map(|i| buf.get(i).reward).collect();
        assert!(rewards.contains(&3.0));
        assert!(!rewards.contains(&1.0), "oldest entry should be evicted");
    }

    #[test]
    fn sampled_entries_round_trip_field_for_field() {
        let mut buf = ReplayBuffer::new(8, stream_rng(1, stream::BUFFER)).unwrap();
        let originals: Vec<Transition> = (0..5).map(|i| transition(i as f64)).collect();
        for t in &originals {
            buf.push(t.clone());
        }
        for &i in buf.sample_indices(64).iter() {
            assert!(originals.contains(buf.get(i)));
        }
    }

    #[test]
    fn sampling_is_uniform_ish_over_entries() {
        let mut buf = ReplayBuffer::new(4, stream_rng(2, stream::BUFFER)).unwrap();
        for i in 0..4 {
            buf.push(transition(i as f64));
        }
        let mut counts = [0usize; 4];
        for idx in buf.sample_indices(40_000) {
            counts[idx] += 1;
        }
        for &c in &counts {
            assert!((c as f64 - 10_000.0).abs() < 500.0, "counts {counts:?}");
        }
    }
}
