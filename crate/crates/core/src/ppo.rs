//! GAE, the clipped surrogate, the critic losses and the minibatch update loop.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeRef};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::hjb::{critical_point, hjb_loss_grad, HjbLoss, HjbSample, HjbTransition};
use crate::nn::{MlpParams, PolicyDistribution, StdSchedule, DEFAULT_HIDDEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionSource {
    Policy,
    HjbController,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// `[U_t; W_t]`
    pub obs: Vec<f64>,
    pub action: f64,
    pub reward: f64,
    pub log_prob_old: f64,
    pub value_old: f64,
    pub done: bool,
    pub source: ActionSource,
    /// Exploration scale the log-probability was taken under.
    pub scale: f64,
    /// `U_{t+1}`, needed by the HJB residual.
    pub next_u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub horizon: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    /// The policy scale is not learned, so the Gaussian entropy is constant
    /// in the parameters and this coefficient cannot change an update.
    pub entropy_coef: f64,
    pub normalize_advantages: bool,
    pub total_steps: usize,
    pub seeds: Vec<u64>,
    pub hidden: Vec<usize>,
    pub checkpoint_every: usize,
    pub std_init: f64,
    pub std_decrement: f64,
    pub std_every: usize,
    pub std_floor: f64,
    /// Start with a zero last layer (policy mean 0 everywhere).
    pub zero_policy_output: bool,
    /// Start with a zero last layer (`V ≡ 0`).
    pub zero_value_output: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let s = StdSchedule::default();
        Self {
            horizon: 1024,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            epochs: 10,
            minibatch: 64,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            entropy_coef: 0.0,
            normalize_advantages: true,
            total_steps: 1_000_000,
            seeds: (0..5).collect(),
            hidden: DEFAULT_HIDDEN.to_vec(),
            checkpoint_every: 50,
            std_init: s.init,
            std_decrement: s.decrement,
            std_every: s.every,
            std_floor: s.floor,
            zero_policy_output: false,
            zero_value_output: false,
        }
    }
}

impl TrainConfig {
    pub fn std_schedule(&self) -> StdSchedule {
        StdSchedule {
            init: self.std_init,
            decrement: self.std_decrement,
            every: self.std_every,
            floor: self.std_floor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_eps >= 0.0) {
            return bad("clip_eps must be non-negative");
        }
        if self.horizon == 0 || self.minibatch == 0 || self.epochs == 0 {
            return bad("horizon, minibatch and epochs must be positive");
        }
        if self.minibatch > self.horizon {
            return bad("minibatch must not exceed horizon");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden sizes must be non-empty and positive");
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive");
        }
        if !(self.std_floor > 0.0 && self.std_init >= self.std_floor && self.std_decrement >= 0.0) {
            return bad("std schedule needs 0 < std_floor <= std_init and std_decrement >= 0");
        }
        if self.std_every == 0 {
            return bad("std_every must be positive");
        }
        Ok(())
    }
}

/// Advantages and returns by generalized advantage estimation. `done_t`
/// cuts both the bootstrap and the recursion at `t`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::invalid(format!(
            "length mismatch: {n} rewards, {} values, {} dones",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

fn check_lengths(a: usize, b: usize, c: usize) -> Result<()> {
    if a != b || a != c || a == 0 {
        return Err(Error::invalid(format!("lengths must be equal and non-zero: {a}, {b}, {c}")));
    }
    Ok(())
}

/// `−mean(min(r·A, clip(r, 1−ε, 1+ε)·A))` with `r = exp(lp_new − lp_old)`.
/// On a tie the gradient flows through the clipped branch.
pub fn ppo_policy_loss(
    g: &mut Graph,
    log_probs_new: &[NodeRef],
    log_probs_old: &[f64],
    advantages: &[f64],
    eps: f64,
) -> Result<NodeRef> {
    check_lengths(log_probs_new.len(), log_probs_old.len(), advantages.len())?;
    let terms: Vec<NodeRef> = log_probs_new
        .iter()
        .zip(log_probs_old)
        .zip(advantages)
        .map(|((&lp, &old), &adv)| {
            let old = g.lift(old);
            let diff = g.sub(lp, old);
            let ratio = g.exp(diff);
            let plain = g.scale(ratio, adv);
            let clipped = g.clip(ratio, 1.0 - eps, 1.0 + eps);
            let clipped = g.scale(clipped, adv);
            g.min(clipped, plain)
        })
        .collect();
    let total = g.sum(&terms);
    Ok(g.scale(total, -1.0 / terms.len() as f64))
}

/// Mean squared error.
pub fn ppo_value_loss(g: &mut Graph, values_pred: &[NodeRef], returns: &[f64]) -> Result<NodeRef> {
    check_lengths(values_pred.len(), returns.len(), returns.len())?;
    let terms: Vec<NodeRef> = values_pred
        .iter()
        .zip(returns)
        .map(|(&v, &r)| {
            let r = g.lift(r);
            let d = g.sub(v, r);
            g.square(d)
        })
        .collect();
    let total = g.sum(&terms);
    Ok(g.scale(total, 1.0 / terms.len() as f64))
}

/// Bias-corrected adaptive-moment optimizer state for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Functional form of [`Adam::step`].
pub fn adam_update(params: &[f64], grads: &[f64], state: &mut Adam) -> Result<Vec<f64>> {
    let mut out = params.to_vec();
    state.step(&mut out, grads)?;
    Ok(out)
}

/// How the critic is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticLoss {
    /// Squared error against GAE returns.
    Mse,
    /// `MSE_f + MSE_u + MSE_n`.
    Hjb,
}

/// A full rollout ready for optimization.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub transitions: Vec<Transition>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    /// Runs GAE over the transitions; `bootstrap_value` is `V` of the state
    /// after the last transition.
    pub fn new(transitions: Vec<Transition>, bootstrap_value: f64, cfg: &TrainConfig) -> Result<Self> {
        let rewards: Vec<f64> = transitions.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = transitions.iter().map(|t| t.value_old).collect();
        let dones: Vec<bool> = transitions.iter().map(|t| t.done).collect();
        let (advantages, returns) =
            compute_gae(&rewards, &values, &dones, bootstrap_value, cfg.gamma, cfg.gae_lambda)?;
        Ok(Self {
            transitions,
            advantages,
            returns,
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Zero mean, unit variance (population), with a small floor on the scale.
pub fn normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    values.iter().map(|v| (v - mean) / std).collect()
}

/// Clipped-surrogate loss over a minibatch, with its policy gradient added to `grad`.
pub fn policy_loss_grad(
    policy: &MlpParams,
    batch: &[(&Transition, f64)],
    eps: f64,
    grad: &mut [f64],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("policy loss needs at least one sample"));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let (lo, hi) = (1.0 - eps, 1.0 + eps);
    let mut loss = 0.0;
    for (tr, adv) in batch {
        let trace = policy.trace(&tr.obs, &[])?;
        let mean = trace.output();
        let lp = PolicyDistribution::new(mean, tr.scale)?.log_prob(tr.action);
        let ratio = (lp - tr.log_prob_old).exp();
        let clipped_ratio = ratio.clamp(lo, hi);
        let (plain, clipped) = (ratio * adv, clipped_ratio * adv);
        // same branch and kink conventions as the graph form
        let d_ratio = if plain < clipped {
            *adv
        } else {
            let slope = f64::from(u8::from(ratio > lo)) - f64::from(u8::from(ratio > hi));
            adv * slope
        };
        loss -= plain.min(clipped) * inv_b;
        let d_mean = ratio * (tr.action - mean) / (tr.scale * tr.scale);
        let out_bar = -inv_b * d_ratio * d_mean;
        if out_bar != 0.0 {
            policy.backprop(&trace, out_bar, &[], grad);
        }
    }
    Ok(loss)
}

/// Squared-error critic loss over a minibatch, with its gradient added to `grad`.
pub fn value_loss_grad(value: &MlpParams, batch: &[(&[f64], f64)], grad: &mut [f64]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("value loss needs at least one sample"));
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (obs, ret) in batch {
        let trace = value.trace(obs, &[])?;
        let d = trace.output() - ret;
        loss += d * d * inv_b;
        value.backprop(&trace, 2.0 * d * inv_b, &[], grad);
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateMetrics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub hjb: HjbLoss,
    pub actor_steps: usize,
    pub critic_steps: usize,
}

/// Networks and their optimizers.
#[derive(Debug, Clone)]
pub struct Learner {
    pub policy: MlpParams,
    pub value: MlpParams,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
}

impl Learner {
    pub fn new(policy: MlpParams, value: MlpParams, cfg: &TrainConfig) -> Self {
        let actor_opt = Adam::new(policy.num_params(), cfg.actor_lr);
        let critic_opt = Adam::new(value.num_params(), cfg.critic_lr);
        Self {
            policy,
            value,
            actor_opt,
            critic_opt,
        }
    }
}

/// Shuffled-minibatch epochs over one rollout: the actor (if enabled) on the
/// clipped surrogate, the critic on the selected loss.
pub fn update_epochs<R: Rng + ?Sized>(
    batch: &RolloutBatch,
    learner: &mut Learner,
    cfg: &TrainConfig,
    env: &EnvConfig,
    critic: CriticLoss,
    update_actor: bool,
    rng: &mut R,
) -> Result<UpdateMetrics> {
    let n = batch.len();
    if n < cfg.minibatch {
        return Err(Error::invalid(format!(
            "buffer holds {n} transitions, fewer than one minibatch of {}",
            cfg.minibatch
        )));
    }
    let advantages = if cfg.normalize_advantages {
        normalize(&batch.advantages)
    } else {
        batch.advantages.clone()
    };
    let (hjb_samples, boundary) = match critic {
        CriticLoss::Hjb => {
            let nx = env.n_x;
            let samples = batch
                .transitions
                .iter()
                .map(|t| {
                    let tr = HjbTransition {
                        u: t.obs[..nx].to_vec(),
                        w: t.obs[nx..].to_vec(),
                        u_next: t.next_u.clone(),
                    };
                    HjbSample::new(&tr, env)
                })
                .collect::<Result<Vec<_>>>()?;
            let (u, w) = critical_point(env)?;
            (samples, u.into_iter().chain(w).collect())
        }
        CriticLoss::Mse => (Vec::new(), Vec::new()),
    };

    let mut metrics = UpdateMetrics::default();
    let mut n_batches = 0usize;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut p_grad = vec![0.0; learner.policy.num_params()];
    let mut v_grad = vec![0.0; learner.value.num_params()];
    for _ in 0..cfg.epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(cfg.minibatch) {
            n_batches += 1;
            if update_actor {
                p_grad.iter_mut().for_each(|g| *g = 0.0);
                let mb: Vec<(&Transition, f64)> =
                    chunk.iter().map(|&i| (&batch.transitions[i], advantages[i])).collect();
                metrics.policy_loss += policy_loss_grad(&learner.policy, &mb, cfg.clip_eps, &mut p_grad)?;
                learner.actor_opt.step(learner.policy.data_mut(), &p_grad)?;
                metrics.actor_steps += 1;
            }
            v_grad.iter_mut().for_each(|g| *g = 0.0);
            match critic {
                CriticLoss::Mse => {
                    let mb: Vec<(&[f64], f64)> = chunk
                        .iter()
                        .map(|&i| (batch.transitions[i].obs.as_slice(), batch.returns[i]))
                        .collect();
                    metrics.value_loss += value_loss_grad(&learner.value, &mb, &mut v_grad)?;
                }
                CriticLoss::Hjb => {
                    let mb: Vec<&HjbSample> = chunk.iter().map(|&i| &hjb_samples[i]).collect();
                    let loss = hjb_loss_grad(&learner.value, &mb, cfg.gamma, env.dt, &boundary, &mut v_grad)?;
                    metrics.value_loss += loss.total();
                    metrics.hjb.mse_f += loss.mse_f;
                    metrics.hjb.mse_u += loss.mse_u;
                    metrics.hjb.mse_n += loss.mse_n;
                }
            }
            learner.critic_opt.step(learner.value.data_mut(), &v_grad)?;
            metrics.critic_steps += 1;
        }
    }
    let k = n_batches as f64;
    metrics.policy_loss /= k;
    metrics.value_loss /= k;
    metrics.hjb.mse_f /= k;
    metrics.hjb.mse_u /= k;
    metrics.hjb.mse_n /= k;
    Ok(metrics)
}
