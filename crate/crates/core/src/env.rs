//! Desk-scale safety-constrained environments with separate reward and cost
//! channels, plus a Gaussian noise wrapper for robustness protocols.
//!
//! Both tasks expose the same interface: `reset` draws from a documented reset
//! distribution using the environment's own rng stream, `step` consumes an
//! action in `[-1, 1]^d` and returns the next observation together with a
//! reward and a nonnegative cost. Episodes only ever truncate at the horizon;
//! `terminated` stays false so Bellman targets bootstrap through truncation.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math;
use crate::rng::{standard_normal, StreamRng};
use crate::{Error, Result};

/// One environment transition as seen by the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// Exactly the observation the agent will act on next.
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Nonnegative violation signal.
    pub cost: f64,
    pub terminated: bool,
    pub truncated: bool,
}

pub trait Environment {
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Draw an initial state and return its observation; resets step count.
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
}

fn check_action(action: &[f64], dim: usize) -> Result<()> {
    if action.len() != dim {
        return Err(Error::Config(format!(
            "action length {} does not match action dim {dim}",
            action.len()
        )));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::Numeric("non-finite action".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Velocity-constrained point mass
// ---------------------------------------------------------------------------

/// Parameters of the velocity-constrained point-mass task.
///
/// The unregulated optimum (full throttle) settles at speed
/// `gain * dt / drag = 2.0`, twice the speed limit, so maximizing forward
/// progress and staying safe are in genuine tension.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMassParams {
    pub dt: f64,
    pub gain: f64,
    pub drag: f64,
    pub speed_limit: f64,
    pub horizon: u64,
    /// Uniform jitter bound applied to each velocity coordinate at reset.
    pub reset_jitter: f64,
}

impl Default for PointMassParams {
    fn default() -> Self {
        Self {
            dt: 0.05,
            gain: 2.0,
            drag: 0.05,
            speed_limit: 1.0,
            horizon: 400,
            reset_jitter: 0.01,
        }
    }
}

/// 2-D point mass with drag; reward is forward progress, cost is the
/// indicator of the speed limit being exceeded.
#[derive(Debug, Clone)]
pub struct PointMass {
    params: PointMassParams,
    position: [f64; 2],
    velocity: [f64; 2],
    step_index: u64,
    rng: StreamRng,
}

impl PointMass {
    pub fn new(params: PointMassParams, rng: StreamRng) -> Self {
        Self {
            params,
            position: [0.0; 2],
            velocity: [0.0; 2],
            step_index: 0,
            rng,
        }
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.position[0], self.position[1], self.velocity[0], self.velocity[1]]
    }

    pub fn params(&self) -> &PointMassParams {
        &self.params
    }
}

impl Environment for PointMass {
    fn observation_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn reset(&mut self) -> Vec<f64> {
        self.position = [0.0; 2];
        let j = self.params.reset_jitter;
        for v in self.velocity.iter_mut() {
            *v = if j > 0.0 {
                (self.rng.gen::<f64>() * 2.0 - 1.0) * j
            } else {
                0.0
            };
        }
        self.step_index = 0;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        check_action(action, 2)?;
        let p = &self.params;
        for k in 0..2 {
            let a = action[k].clamp(-1.0, 1.0);
            self.velocity[k] = (1.0 - p.drag) * self.velocity[k] + p.gain * a * p.dt;
            self.position[k] += self.velocity[k] * p.dt;
        }
        let speed = math::sqrt(self.velocity[0] * self.velocity[0] + self.velocity[1] * self.velocity[1]);
        let reward = self.velocity[0] * p.dt;
        let cost = if speed > p.speed_limit { 1.0 } else { 0.0 };
        self.step_index += 1;
        Ok(StepResult {
            observation: self.observation(),
            reward,
            cost,
            terminated: false,
            truncated: self.step_index >= p.horizon,
        })
    }
}

// ---------------------------------------------------------------------------
// Continuous stirred-tank reactor
// ---------------------------------------------------------------------------

/// Parameters of the exothermic CSTR.
///
/// The defaults are the standard two-state benchmark set; the action commands
/// the coolant temperature through an affine map, the reward tracks a reactant
/// concentration setpoint, and the cost logs the magnitude of any excursion of
/// the reactor temperature above `temperature_limit` without ever terminating
/// the episode.
#[derive(Debug, Clone, PartialEq)]
pub struct CstrParams {
    /// Dilution rate q/V in 1/min.
    pub flow_rate: f64,
    /// Feed concentration C_Af in mol/L.
    pub feed_concentration: f64,
    /// Feed temperature T_f in K.
    pub feed_temperature: f64,
    /// Arrhenius pre-exponential factor k0 in 1/min.
    pub rate_constant: f64,
    /// Activation temperature E/R in K.
    pub activation_temperature: f64,
    /// Exotherm gain (-dH)/(rho Cp) in K L/mol.
    pub heat_rise: f64,
    /// Heat-transfer gain UA/(V rho Cp) in 1/min.
    pub cooling_rate: f64,
    /// Coolant command midpoint in K; action -1..1 maps affinely around it.
    pub coolant_mid: f64,
    /// Coolant span in K.
    pub coolant_span: f64,
    pub temperature_limit: f64,
    /// Reactant concentration setpoint for the tracking reward.
    pub setpoint: f64,
    /// Environment step size in minutes.
    pub dt: f64,
    /// Internal RK4 substeps per environment step (ignition transients are
    /// stiff; dt/substeps must stay inside the RK4 stability region).
    pub substeps: u32,
    pub horizon: u64,
    pub reset_concentration: f64,
    pub reset_temperature: f64,
    /// Uniform jitter applied at reset to concentration and temperature
    /// (scaled by the observation spans).
    pub reset_jitter: f64,
}

impl Default for CstrParams {
    fn default() -> Self {
        Self {
            flow_rate: 1.0,
            feed_concentration: 1.0,
            feed_temperature: 350.0,
            rate_constant: 7.2e10,
            activation_temperature: 8750.0,
            heat_rise: 209.2,
            cooling_rate: 3.0,
            coolant_mid: 300.0,
            coolant_span: 20.0,
            temperature_limit: 400.0,
            setpoint: 0.75,
            dt: 0.02,
            substeps: 20,
            horizon: 200,
            reset_concentration: 0.5,
            reset_temperature: 350.0,
            reset_jitter: 0.0,
        }
    }
}

/// Time derivatives (dC_A/dt, dT/dt) of the two-state exothermic CSTR at the
/// given state and coolant temperature.
pub fn cstr_derivatives(
    params: &CstrParams,
    concentration: f64,
    temperature: f64,
    coolant_temperature: f64,
) -> Result<(f64, f64)> {
    if !concentration.is_finite() || !temperature.is_finite() || temperature <= 0.0 {
        return Err(Error::Numeric(format!(
            "invalid reactor state (C_A={concentration}, T={temperature})"
        )));
    }
    let p = params;
    let rate = p.rate_constant * math::exp(-p.activation_temperature / temperature) * concentration;
    let d_conc = p.flow_rate * (p.feed_concentration - concentration) - rate;
    let d_temp = p.flow_rate * (p.feed_temperature - temperature)
        + p.heat_rise * rate
        + p.cooling_rate * (coolant_temperature - temperature);
    Ok((d_conc, d_temp))
}

/// One classical RK4 step of length `h` for the CSTR state.
pub fn cstr_rk4_step(
    params: &CstrParams,
    concentration: f64,
    temperature: f64,
    coolant_temperature: f64,
    h: f64,
) -> Result<(f64, f64)> {
    let f = |c: f64, t: f64| cstr_derivatives(params, c, t, coolant_temperature);
    let (k1c, k1t) = f(concentration, temperature)?;
    let (k2c, k2t) = f(concentration + 0.5 * h * k1c, temperature + 0.5 * h * k1t)?;
    let (k3c, k3t) = f(concentration + 0.5 * h * k2c, temperature + 0.5 * h * k2t)?;
    let (k4c, k4t) = f(concentration + h * k3c, temperature + h * k3t)?;
    Ok((
        concentration + h / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c),
        temperature + h / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t),
    ))
}

/// Exothermic reactor with coolant-temperature control.
#[derive(Debug, Clone)]
pub struct Cstr {
    params: CstrParams,
    concentration: f64,
    temperature: f64,
    step_index: u64,
    rng: StreamRng,
}

impl Cstr {
    pub fn new(params: CstrParams, rng: StreamRng) -> Self {
        let (c0, t0) = (params.reset_concentration, params.reset_temperature);
        Self {
            params,
            concentration: c0,
            temperature: t0,
            step_index: 0,
            rng,
        }
    }

    pub fn params(&self) -> &CstrParams {
        &self.params
    }

    pub fn state(&self) -> (f64, f64) {
        (self.concentration, self.temperature)
    }

    /// Observations are affinely normalized to roughly [-1, 1]: concentration
    /// around half the feed concentration, temperature around the feed
    /// temperature with a 50 K span.
    fn observation(&self) -> Vec<f64> {
        let half_feed = 0.5 * self.params.feed_concentration;
        vec![
            (self.concentration - half_feed) / half_feed,
            (self.temperature - self.params.feed_temperature) / 50.0,
        ]
    }

    pub fn coolant_for_action(&self, action: f64) -> f64 {
        self.params.coolant_mid + self.params.coolant_span * action.clamp(-1.0, 1.0)
    }
}

impl Environment for Cstr {
    fn observation_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn reset(&mut self) -> Vec<f64> {
        let p = &self.params;
        self.concentration = p.reset_concentration;
        self.temperature = p.reset_temperature;
        if p.reset_jitter > 0.0 {
            let half_feed = 0.5 * p.feed_concentration;
            self.concentration += (self.rng.gen::<f64>() * 2.0 - 1.0) * p.reset_jitter * half_feed;
            self.temperature += (self.rng.gen::<f64>() * 2.0 - 1.0) * p.reset_jitter * 50.0;
            self.concentration = self.concentration.max(0.0);
        }
        self.step_index = 0;
        self.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        check_action(action, 1)?;
        let coolant = self.coolant_for_action(action[0]);
        let h = self.params.dt / self.params.substeps as f64;
        let mut conc = self.concentration;
        let mut temp = self.temperature;
        for _ in 0..self.params.substeps {
            let (c, t) = cstr_rk4_step(&self.params, conc, temp, coolant, h)?;
            conc = c.max(0.0);
            temp = t;
        }
        if !conc.is_finite() || !temp.is_finite() || temp <= 0.0 {
            return Err(Error::Numeric(format!(
                "integration produced invalid state (C_A={conc}, T={temp}) at step {}",
                self.step_index
            )));
        }
        self.concentration = conc;
        self.temperature = temp;
        self.step_index += 1;

        let err = self.concentration - self.params.setpoint;
        let reward = -(err * err);
        let cost = (self.temperature - self.params.temperature_limit).max(0.0);
        Ok(StepResult {
            observation: self.observation(),
            reward,
            cost,
            terminated: false,
            truncated: self.step_index >= self.params.horizon,
        })
    }
}

// ---------------------------------------------------------------------------
// Gaussian noise wrapper
// ---------------------------------------------------------------------------

/// Noise injection settings for the robustness protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub apply_to_observations: bool,
    pub apply_to_actions: bool,
}

impl NoiseSpec {
    pub fn symmetric(sigma: f64) -> Self {
        Self {
            sigma,
            apply_to_observations: true,
            apply_to_actions: true,
        }
    }
}

/// Adds i.i.d. zero-mean Gaussian noise to each observation coordinate and to
/// each executed action coordinate before the dynamics. Rewards and costs come
/// from the inner environment's true state.
pub struct NoiseWrapper {
    inner: Box<dyn Environment>,
    spec: NoiseSpec,
    rng: StreamRng,
}

impl NoiseWrapper {
    pub fn new(inner: Box<dyn Environment>, spec: NoiseSpec, rng: StreamRng) -> Result<Self> {
        if spec.sigma < 0.0 || !spec.sigma.is_finite() {
            return Err(Error::Config(format!("noise sigma {} must be nonnegative", spec.sigma)));
        }
        Ok(Self { inner, spec, rng })
    }

    fn perturb(&mut self, values: &mut [f64]) {
        if self.spec.sigma == 0.0 {
            return;
        }
        for v in values.iter_mut() {
            *v += self.spec.sigma * standard_normal(&mut self.rng);
        }
    }
}

impl Environment for NoiseWrapper {
    fn observation_dim(&self) -> usize {
        self.inner.observation_dim()
    }

    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    fn reset(&mut self) -> Vec<f64> {
        let mut obs = self.inner.reset();
        if self.spec.apply_to_observations {
            self.perturb(&mut obs);
        }
        obs
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let mut executed = action.to_vec();
        if self.spec.apply_to_actions {
            self.perturb(&mut executed);
        }
        let mut result = self.inner.step(&executed)?;
        if self.spec.apply_to_observations {
            self.perturb(&mut result.observation);
        }
        Ok(result)
    }
}
