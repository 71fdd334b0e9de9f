//! Joint per-cluster transmit-power / local-update allocation against the
//! deterministic convergence-gap environment, optimized with PPO
//! (clipped-surrogate actor plus TD(0) critic, both trained by explicit
//! backprop).

use std::io::{Read, Write};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bound::{a_factor, gap, ConvergenceParams, Horizon};
use crate::error::{Error, Result};
use crate::rng;

mod net;

pub use net::{Adam, Mlp, Trace};

const LOG_STD_MIN: f64 = -5.0;
const LOG_STD_MAX: f64 = 2.0;
const CHECKPOINT_MAGIC: &[u8; 8] = b"CAMUPPO1";

/// Energy accounting constants for one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyModel {
    /// Uplink bandwidth per cluster leader, Hz.
    pub bandwidth_hz: Vec<f64>,
    /// Transmitted model size in bits (also the per-pass cycle multiplier).
    pub model_bits: f64,
    /// CPU cycles per unit work, per device.
    pub cycles_per_sample: Vec<f64>,
    /// CPU frequency per device, Hz.
    pub cpu_hz: Vec<f64>,
    /// Compute power draw, W.
    pub compute_power_w: f64,
    /// Per-round energy budget, J.
    pub e_total_j: f64,
    /// Sum-of-squared transmit power cap.
    pub p_max: f64,
}

impl EnergyModel {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !self.bandwidth_hz.iter().all(|&b| pos(b))
            || !pos(self.model_bits)
            || !self.cycles_per_sample.iter().all(|&c| pos(c))
            || !self.cpu_hz.iter().all(|&f| pos(f))
            || !pos(self.compute_power_w)
            || !pos(self.e_total_j)
            || !pos(self.p_max)
        {
            return Err(Error::InvalidParameter(
                "energy model fields must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Wall time of one local pass for device `k`: l_k * q / f_k.
    pub fn pass_time_s(&self, k: usize) -> f64 {
        self.cycles_per_sample[k] * self.model_bits / self.cpu_hz[k]
    }

    /// Capacity-driven extra passes per cluster: the slowest cluster sets
    /// the round deadline, and each cluster fits as many whole passes of its
    /// own slowest member as the deadline allows.
    pub fn capacity_extras(&self, members: &[Vec<usize>], n_max: u32) -> Vec<u32> {
        let slowest_per_cluster: Vec<f64> = members
            .iter()
            .map(|m| {
                m.iter()
                    .map(|&k| self.pass_time_s(k))
                    .fold(0.0f64, f64::max)
            })
            .collect();
        let deadline = slowest_per_cluster.iter().cloned().fold(0.0f64, f64::max);
        slowest_per_cluster
            .iter()
            .map(|&t| {
                if t <= 0.0 {
                    return 0;
                }
                let passes = (deadline / t).floor() as u32;
                passes.saturating_sub(1).min(n_max)
            })
            .collect()
    }
}

/// The decision variable: per-cluster transmit power and extra local passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationAction {
    pub powers: Vec<f64>,
    pub extra_updates: Vec<u32>,
}

impl AllocationAction {
    pub fn passes(&self) -> Vec<u32> {
        self.extra_updates.iter().map(|&n| 1 + n).collect()
    }

    pub fn power_sum_sq(&self) -> f64 {
        self.powers.iter().map(|p| p * p).sum()
    }
}

/// Feasible-action geometry: caps, the power budget, and the CAMU gate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionSpace {
    /// Per-cluster power squash ceiling.
    pub p_cap: f64,
    /// Sum-of-squares power budget.
    pub p_max: f64,
    /// Ceiling on extra passes.
    pub n_max: u32,
    /// CAMU gate: extras are forced to zero where false.
    pub camu_multi: Vec<bool>,
    /// When set, powers are pinned to this value (iteration-only baselines).
    pub frozen_power: Option<f64>,
}

impl ActionSpace {
    pub fn clusters(&self) -> usize {
        self.camu_multi.len()
    }

    pub fn raw_dim(&self) -> usize {
        2 * self.clusters()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Projects a raw policy sample onto the feasible action set.
///
/// Powers pass through `p_cap * sigmoid(raw)` and are rescaled by
/// `sqrt(P_max / sum p^2)` if the budget is exceeded; extras pass through
/// a rounded softplus, clamp to `n_max`, and the CAMU mask. Total function:
/// any finite raw vector yields a feasible action.
pub fn project_action(raw: &[f64], space: &ActionSpace) -> AllocationAction {
    let c = space.clusters();
    assert_eq!(raw.len(), space.raw_dim(), "raw action has wrong arity");
    let mut powers: Vec<f64> = match space.frozen_power {
        Some(p) => vec![p; c],
        None => raw[..c].iter().map(|&r| space.p_cap * sigmoid(r)).collect(),
    };
    let sum_sq: f64 = powers.iter().map(|p| p * p).sum();
    if sum_sq > space.p_max {
        let scale = (space.p_max / sum_sq).sqrt();
        for p in &mut powers {
            *p *= scale;
        }
    }
    let extra_updates = raw[c..]
        .iter()
        .zip(&space.camu_multi)
        .map(|(&r, &open)| {
            if !open {
                0
            } else {
                (softplus(r).round() as u32).min(space.n_max)
            }
        })
        .collect();
    AllocationAction {
        powers,
        extra_updates,
    }
}

/// Reward: negative gap with a hinged energy-overshoot penalty.
pub fn reward(gap_value: f64, energy_j: f64, alpha: f64, e_total_j: f64) -> f64 {
    -gap_value - alpha * (energy_j - e_total_j).max(0.0)
}

/// One-step TD advantage `A = r + discount * v_next - v_s`.
pub fn advantage(r: f64, v_s: f64, v_next: f64, discount: f64) -> f64 {
    r + discount * v_next - v_s
}

/// Per-round energy: transmission `p_c q / (B_c log2(1 + gamma_c))` plus
/// compute `N_c sum_k (l_k q / f_k) p_cmp`, where `gamma_c` is the leader
/// uplink SNR at power `p_c`. A vanishing SNR makes the transmission term
/// infinite; callers treat non-finite energy as infeasible.
pub fn energy_per_round(
    action: &AllocationAction,
    leader_gain_over_noise: &[f64],
    energy: &EnergyModel,
    members: &[Vec<usize>],
) -> f64 {
    let c = action.powers.len();
    assert_eq!(leader_gain_over_noise.len(), c);
    assert_eq!(members.len(), c);
    let mut total = 0.0;
    for i in 0..c {
        let p = action.powers[i];
        let snr = p * leader_gain_over_noise[i];
        let rate = energy.bandwidth_hz[i] * (1.0 + snr).log2();
        let tx = if rate > 0.0 {
            p * energy.model_bits / rate
        } else if p == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        let passes = (1 + action.extra_updates[i]) as f64;
        let compute: f64 = members[i]
            .iter()
            .map(|&k| energy.pass_time_s(k) * energy.compute_power_w)
            .sum::<f64>()
            * passes;
        total += tx + compute;
    }
    total
}

/// State fed to the policy: the previous round's allocation and outcomes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RlState {
    pub prev_powers: Vec<f64>,
    pub prev_n: Vec<f64>,
    pub prev_gap: f64,
    pub prev_energy: f64,
}

impl RlState {
    pub fn dim(clusters: usize) -> usize {
        2 * clusters + 2
    }
}

/// PPO hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub discount: f64,
    pub penalty_alpha: f64,
    pub epochs_per_update: usize,
    pub trajectories: usize,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub hidden: usize,
    /// Stand-in gap magnitude for non-convergent configurations.
    pub gap_floor: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            discount: 0.95,
            penalty_alpha: 10.0,
            epochs_per_update: 4,
            trajectories: 8,
            episodes: 30,
            steps_per_episode: 20,
            lr_actor: 3e-4,
            lr_critic: 1e-3,
            hidden: 64,
            gap_floor: 1e4,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "clip_eps {} outside (0, 1)",
                self.clip_eps
            )));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::InvalidParameter("discount outside (0, 1)".into()));
        }
        if self.penalty_alpha <= 0.0 {
            return Err(Error::InvalidParameter("penalty_alpha must be positive".into()));
        }
        if self.trajectories == 0 || self.episodes == 0 || self.steps_per_episode == 0 {
            return Err(Error::InvalidParameter(
                "episodes, trajectories, and steps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministic environment: action -> (gap, energy, reward).
#[derive(Debug, Clone)]
pub struct GapEnvironment {
    /// Bound constants; powers and N_c are overwritten per action.
    pub base: ConvergenceParams,
    pub space: ActionSpace,
    pub energy: EnergyModel,
    /// ||h_c||^2 / sigma_n0^2 for the leader energy SNR.
    pub leader_gain_over_noise: Vec<f64>,
    /// Device ids per cluster, for compute energy.
    pub members: Vec<Vec<usize>>,
    pub alpha: f64,
    pub gap_floor: f64,
    /// Reference allocation supplying the initial state.
    pub baseline: AllocationAction,
}

/// Outcome of evaluating one action.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepOutcome {
    /// None when the configuration does not converge (|A| >= 1).
    pub gap: Option<f64>,
    pub energy_j: f64,
    pub reward: f64,
    pub feasible: bool,
    pub a_factor: f64,
}

impl GapEnvironment {
    pub fn clusters(&self) -> usize {
        self.base.cluster_count()
    }

    fn params_for(&self, action: &AllocationAction) -> ConvergenceParams {
        let mut p = self.base.clone();
        p.powers = action.powers.clone();
        p.n_per_cluster = action.passes();
        p
    }

    pub fn evaluate(&self, action: &AllocationAction) -> StepOutcome {
        let params = self.params_for(action);
        let a = a_factor(&params);
        let energy_j = energy_per_round(action, &self.leader_gain_over_noise, &self.energy, &self.members);
        let gap_value = if a.abs() < 1.0 {
            Some(gap(&params, Horizon::Infinite).expect("|A| < 1"))
        } else {
            None
        };
        let effective_gap = gap_value.unwrap_or(self.gap_floor);
        let overshoot_base = if energy_j.is_finite() {
            energy_j
        } else {
            // unusable link: charge a full extra budget as the penalty
            self.energy.e_total_j * 2.0
        };
        let r = reward(effective_gap, overshoot_base, self.alpha, self.energy.e_total_j);
        StepOutcome {
            feasible: gap_value.is_some()
                && energy_j.is_finite()
                && energy_j <= self.energy.e_total_j
                && action.power_sum_sq() <= self.space.p_max + 1e-9,
            gap: gap_value,
            energy_j,
            reward: r,
            a_factor: a,
        }
    }

    pub fn initial_state(&self) -> RlState {
        let outcome = self.evaluate(&self.baseline);
        RlState {
            prev_powers: self.baseline.powers.clone(),
            prev_n: self
                .baseline
                .extra_updates
                .iter()
                .map(|&n| n as f64)
                .collect(),
            prev_gap: outcome.gap.unwrap_or(self.gap_floor),
            prev_energy: outcome.energy_j.min(self.energy.e_total_j * 10.0),
        }
    }

    /// Fixed normalization so the nets see O(1) inputs.
    fn state_vec(&self, s: &RlState, gap_scale: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(RlState::dim(self.clusters()));
        for &p in &s.prev_powers {
            v.push(p / self.space.p_cap);
        }
        for &n in &s.prev_n {
            v.push(n / (self.space.n_max.max(1) as f64));
        }
        v.push(s.prev_gap / gap_scale);
        v.push(s.prev_energy / self.energy.e_total_j);
        v
    }
}

/// Actor and critic with their optimizers.
#[derive(Debug, Clone)]
pub struct PolicyValueNets {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl PolicyValueNets {
    pub fn new(state_dim: usize, action_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut actor_stream = rng::stream(seed, &[rng::stage::PPO, 0]);
        let mut critic_stream = rng::stream(seed, &[rng::stage::PPO, 1]);
        Self {
            // actor emits per-dimension mean and log-std
            actor: Mlp::new(&[state_dim, hidden, hidden, 2 * action_dim], &mut actor_stream),
            critic: Mlp::new(&[state_dim, hidden, hidden, 1], &mut critic_stream),
        }
    }

    pub fn param_total(&self) -> usize {
        self.actor.param_count() + self.critic.param_count()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        self.actor.write_to(w)?;
        self.critic.write_to(w)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Serialize("bad ppo checkpoint magic".into()));
        }
        Ok(Self {
            actor: Mlp::read_from(r)?,
            critic: Mlp::read_from(r)?,
        })
    }
}

/// Splits the actor head into clamped (mean, log_std) views.
fn split_head(out: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let a = out.len() / 2;
    let means = out[..a].to_vec();
    let mut in_band = vec![true; a];
    let log_stds: Vec<f64> = out[a..]
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if !(LOG_STD_MIN..=LOG_STD_MAX).contains(&v) {
                in_band[i] = false;
            }
            v.clamp(LOG_STD_MIN, LOG_STD_MAX)
        })
        .collect();
    (means, log_stds, in_band)
}

fn log_prob(means: &[f64], log_stds: &[f64], action: &[f64]) -> f64 {
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
    means
        .iter()
        .zip(log_stds)
        .zip(action)
        .map(|((&m, &ls), &a)| {
            let inv_std = (-ls).exp();
            let z = (a - m) * inv_std;
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

/// d log_prob / d (mean_i, log_std_i); the log-std component is zeroed when
/// the raw head output sat outside the clamp band.
fn log_prob_grad(
    means: &[f64],
    log_stds: &[f64],
    in_band: &[bool],
    action: &[f64],
) -> Vec<f64> {
    let a = means.len();
    let mut grad = vec![0.0; 2 * a];
    for i in 0..a {
        let inv_var = (-2.0 * log_stds[i]).exp();
        let diff = action[i] - means[i];
        grad[i] = diff * inv_var;
        grad[a + i] = if in_band[i] {
            diff * diff * inv_var - 1.0
        } else {
            0.0
        };
    }
    grad
}

/// One recorded interaction.
#[derive(Debug, Clone)]
pub struct Step {
    pub state: Vec<f64>,
    pub next_state: Vec<f64>,
    pub raw_action: Vec<f64>,
    pub log_prob_old: f64,
    pub reward: f64,
    pub advantage: f64,
}

/// Update diagnostics for one `ppo_update` call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PpoDiagnostics {
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub actor_objective: f64,
    pub critic_loss: f64,
    pub aborted: bool,
}

/// Clipped-surrogate statistics and the loss gradient (negated objective)
/// for one actor pass over a batch. Returns `None` when a ratio or the
/// objective turns non-finite.
pub fn actor_surrogate_gradient(
    batch: &[Step],
    actor: &mut Mlp,
    clip_eps: f64,
) -> Option<(PpoDiagnostics, Vec<f64>)> {
    let inv_n = 1.0 / batch.len() as f64;
    actor.zero_grads();
    let mut mean_ratio = 0.0;
    let mut clipped = 0usize;
    let mut objective = 0.0;
    for step in batch {
        let trace = actor.forward_trace(&step.state);
        let (means, log_stds, in_band) = split_head(trace.output());
        let logp = log_prob(&means, &log_stds, &step.raw_action);
        let ratio = (logp - step.log_prob_old).exp();
        if !ratio.is_finite() {
            return None;
        }
        mean_ratio += ratio * inv_n;
        let adv = step.advantage;
        let unclipped = ratio * adv;
        let clipped_term = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv;
        objective += unclipped.min(clipped_term) * inv_n;
        if (ratio - 1.0).abs() > clip_eps {
            clipped += 1;
        }
        // gradient of min(rA, clip(r)A) wrt theta: zero when the clipped
        // branch is strictly smaller
        if unclipped <= clipped_term {
            let coeff = ratio * adv * inv_n;
            let head_grad: Vec<f64> = log_prob_grad(&means, &log_stds, &in_band, &step.raw_action)
                .into_iter()
                .map(|g| -g * coeff) // descend the negated objective
                .collect();
            actor.backward(&trace, &head_grad);
        }
    }
    if !objective.is_finite() {
        return None;
    }
    Some((
        PpoDiagnostics {
            mean_ratio,
            clip_fraction: clipped as f64 * inv_n,
            actor_objective: objective,
            critic_loss: 0.0,
            aborted: false,
        },
        actor.grads().to_vec(),
    ))
}

/// Clipped-surrogate PPO update over a batch.
///
/// For each of `epochs_per_update` epochs the actor ascends
/// `E[min(r A, clip(r, 1-eps, 1+eps) A)]` and the critic descends the MSE
/// against targets `r + discount * V(s')` frozen at the epoch start. A
/// non-finite loss aborts the update and restores the previous parameters.
pub fn ppo_update(
    batch: &[Step],
    nets: &mut PolicyValueNets,
    opt_actor: &mut Adam,
    opt_critic: &mut Adam,
    cfg: &PpoConfig,
) -> Result<PpoDiagnostics> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("ppo batch"));
    }
    let snapshot_actor = nets.actor.params().to_vec();
    let snapshot_critic = nets.critic.params().to_vec();
    let inv_n = 1.0 / batch.len() as f64;

    let mut diag = PpoDiagnostics {
        mean_ratio: 0.0,
        clip_fraction: 0.0,
        actor_objective: 0.0,
        critic_loss: 0.0,
        aborted: false,
    };

    for _epoch in 0..cfg.epochs_per_update {
        match actor_surrogate_gradient(batch, &mut nets.actor, cfg.clip_eps) {
            Some((stats, grads)) => {
                opt_actor.step(nets.actor.params_mut(), &grads);
                diag.mean_ratio = stats.mean_ratio;
                diag.clip_fraction = stats.clip_fraction;
                diag.actor_objective = stats.actor_objective;
            }
            None => {
                diag.aborted = true;
                break;
            }
        }

        // critic pass with frozen targets
        let targets: Vec<f64> = batch
            .iter()
            .map(|s| s.reward + cfg.discount * nets.critic.forward(&s.next_state)[0])
            .collect();
        nets.critic.zero_grads();
        let mut critic_loss = 0.0;
        for (step, &target) in batch.iter().zip(&targets) {
            let trace = nets.critic.forward_trace(&step.state);
            let v = trace.output()[0];
            let err = v - target;
            critic_loss += err * err * inv_n;
            nets.critic.backward(&trace, &[2.0 * err * inv_n]);
        }
        if !critic_loss.is_finite() {
            diag.aborted = true;
            break;
        }
        let grads = nets.critic.grads().to_vec();
        opt_critic.step(nets.critic.params_mut(), &grads);
        diag.critic_loss = critic_loss;
    }

    if diag.aborted {
        nets.actor.params_mut().copy_from_slice(&snapshot_actor);
        nets.critic.params_mut().copy_from_slice(&snapshot_critic);
    }
    Ok(diag)
}

/// Candidate allocation with its evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub action: AllocationAction,
    pub outcome: StepOutcome,
}

/// Result of a full optimization run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PpoRun {
    pub best: Candidate,
    /// False when no feasible action was ever seen; `best` is then the
    /// least-violating candidate.
    pub feasible: bool,
    pub episode_rewards: Vec<f64>,
    pub complexity: ComplexityReport,
    pub final_diagnostics: Option<PpoDiagnostics>,
}

/// Keeps the best candidate: feasible beats infeasible; among feasible the
/// lower gap wins; among infeasible the smaller budget violation wins.
struct BestTracker {
    best: Option<Candidate>,
    e_total: f64,
}

impl BestTracker {
    fn violation(&self, c: &Candidate) -> f64 {
        if c.outcome.gap.is_none() || !c.outcome.energy_j.is_finite() {
            return f64::INFINITY;
        }
        (c.outcome.energy_j - self.e_total).max(0.0)
    }

    fn consider(&mut self, cand: Candidate) {
        let better = match &self.best {
            None => true,
            Some(prev) => match (prev.outcome.feasible, cand.outcome.feasible) {
                (false, true) => true,
                (true, false) => false,
                (true, true) => {
                    cand.outcome.gap.unwrap_or(f64::INFINITY)
                        < prev.outcome.gap.unwrap_or(f64::INFINITY)
                }
                (false, false) => self.violation(&cand) < self.violation(prev),
            },
        };
        if better {
            self.best = Some(cand);
        }
    }
}

/// Runs the full PPO loop against the deterministic gap environment and
/// returns the best action seen plus the per-episode mean reward curve.
pub fn optimize(env: &GapEnvironment, cfg: &PpoConfig, seed: u64) -> Result<PpoRun> {
    cfg.validate()?;
    env.base.validate()?;
    env.energy.validate()?;
    let started = Instant::now();

    let clusters = env.clusters();
    let state_dim = RlState::dim(clusters);
    let action_dim = env.space.raw_dim();
    let mut nets = PolicyValueNets::new(state_dim, action_dim, cfg.hidden, seed);
    let mut opt_actor = Adam::new(cfg.lr_actor, nets.actor.param_count());
    let mut opt_critic = Adam::new(cfg.lr_critic, nets.critic.param_count());

    let init_state = env.initial_state();
    let gap_scale = init_state.prev_gap.abs().max(1e-12);
    let mut tracker = BestTracker {
        best: None,
        e_total: env.energy.e_total_j,
    };
    tracker.consider(Candidate {
        action: env.baseline.clone(),
        outcome: env.evaluate(&env.baseline),
    });

    let mut episode_rewards = Vec::with_capacity(cfg.episodes);
    let mut last_diag = None;

    for episode in 0..cfg.episodes {
        let mut batch = Vec::with_capacity(cfg.trajectories * cfg.steps_per_episode);
        let mut reward_sum = 0.0;
        for traj in 0..cfg.trajectories {
            let mut noise = rng::stream(
                seed,
                &[rng::stage::PPO, 2, episode as u64, traj as u64],
            );
            let mut state = init_state.clone();
            for _step in 0..cfg.steps_per_episode {
                let sv = env.state_vec(&state, gap_scale);
                let head = nets.actor.forward(&sv);
                let (means, log_stds, _) = split_head(&head);
                let raw: Vec<f64> = means
                    .iter()
                    .zip(&log_stds)
                    .map(|(&m, &ls)| {
                        let eps: f64 = sample_standard_normal(&mut noise);
                        m + ls.exp() * eps
                    })
                    .collect();
                let logp_old = log_prob(&means, &log_stds, &raw);
                let action = project_action(&raw, &env.space);
                let outcome = env.evaluate(&action);
                let step_reward = outcome.reward;
                reward_sum += step_reward;

                let next = RlState {
                    prev_powers: action.powers.clone(),
                    prev_n: action.extra_updates.iter().map(|&n| n as f64).collect(),
                    prev_gap: outcome.gap.unwrap_or(env.gap_floor),
                    prev_energy: if outcome.energy_j.is_finite() {
                        outcome.energy_j
                    } else {
                        env.energy.e_total_j * 10.0
                    },
                };
                let next_sv = env.state_vec(&next, gap_scale);
                let v_s = nets.critic.forward(&sv)[0];
                let v_next = nets.critic.forward(&next_sv)[0];
                let adv = advantage(step_reward, v_s, v_next, cfg.discount);

                tracker.consider(Candidate { action, outcome });
                batch.push(Step {
                    state: sv,
                    next_state: next_sv,
                    raw_action: raw,
                    log_prob_old: logp_old,
                    reward: step_reward,
                    advantage: adv,
                });
                state = next;
            }
        }
        episode_rewards.push(reward_sum / (cfg.trajectories * cfg.steps_per_episode) as f64);
        last_diag = Some(ppo_update(&batch, &mut nets, &mut opt_actor, &mut opt_critic, cfg)?);
    }

    let best = tracker.best.expect("baseline always considered");
    let feasible = best.outcome.feasible;
    let complexity = complexity_report(
        cfg,
        nets.param_total(),
        clusters,
        Some(started.elapsed().as_secs_f64()),
    );
    Ok(PpoRun {
        best,
        feasible,
        episode_rewards,
        complexity,
        final_diagnostics: last_diag,
    })
}

fn sample_standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::StandardNormal;
    rng.sample(StandardNormal)
}

/// Uniform random search over the same projected action space; the
/// comparison baseline for the optimizer.
pub fn random_search(env: &GapEnvironment, samples: usize, seed: u64) -> Candidate {
    let mut tracker = BestTracker {
        best: Some(Candidate {
            action: env.baseline.clone(),
            outcome: env.evaluate(&env.baseline),
        }),
        e_total: env.energy.e_total_j,
    };
    let mut stream = rng::stream(seed, &[rng::stage::PPO, 9]);
    for _ in 0..samples {
        let raw: Vec<f64> = (0..env.space.raw_dim())
            .map(|_| sample_standard_normal(&mut stream) * 2.0)
            .collect();
        let action = project_action(&raw, &env.space);
        let outcome = env.evaluate(&action);
        tracker.consider(Candidate { action, outcome });
    }
    tracker.best.expect("seeded with baseline")
}

/// Cost accounting per the stated complexity model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub param_total: usize,
    pub clusters: usize,
    /// W + C + K * N * W
    pub per_iteration_units: f64,
    /// E * T_RL * per_iteration_units
    pub total_units: f64,
    pub wall_time_s: Option<f64>,
}

pub fn complexity_report(
    cfg: &PpoConfig,
    param_total: usize,
    clusters: usize,
    wall_time_s: Option<f64>,
) -> ComplexityReport {
    let w = param_total as f64;
    let per_iteration_units =
        w + clusters as f64 + (cfg.epochs_per_update * cfg.trajectories) as f64 * w;
    ComplexityReport {
        param_total,
        clusters,
        per_iteration_units,
        total_units: (cfg.episodes * cfg.steps_per_episode) as f64 * per_iteration_units,
        wall_time_s,
    }
}
