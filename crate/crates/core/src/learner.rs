//! Outer training loops.
//!
//! Experience-based runs alternate one environment episode under the chosen
//! controller with model regression on the replay buffer and a policy
//! update. Imitation runs alternate one expert episode, model regression,
//! behavior cloning on the expert data only, and one evaluation episode.
//!
//! Every random draw comes from a stream derived from the run seed and a
//! fixed purpose index, so runs are a pure function of (config, seed) and
//! runs that differ only in algorithm see the same initial networks and the
//! same environment resets.

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::buffer::{finish_episode, ReplayBuffer, Transition};
use crate::diffnet::{Activation, AdamState, DynNet, RewardNet, MODEL_LEARNING_RATE};
use crate::env::{self, EnvId, EnvSpec};
use crate::error::{Error, Result};
use crate::hybrid_det::{self, EXPLORATION_DECAY};
use crate::hybrid_stoch::{SamplingMode, StochController};
use crate::policy::{
    BehaviorCloning, PolicyNet, PolicyUpdater, RewardWeightedRegression, RwrConfig, BC_LEARNING_RATE,
    POLICY_HIDDEN, RWR_DISCOUNT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Adjoint-based hybrid controller, experience-based policy updates.
    HybridDet,
    /// Sampling-based hybrid controller, experience-based policy updates.
    HybridStoch,
    /// Actions sampled from the policy alone; no models.
    PolicyOnly,
    /// Sampling controller around its own nominal sequence with a fixed
    /// spread; the policy is never consulted or trained.
    ModelOnly,
    /// Expert demonstrations, behavior cloning, evaluation with a hybrid
    /// controller.
    ImitationHybrid,
    /// Expert demonstrations, behavior cloning, evaluation with the policy
    /// mean.
    ImitationBc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::HybridDet,
        Algorithm::HybridStoch,
        Algorithm::PolicyOnly,
        Algorithm::ModelOnly,
        Algorithm::ImitationHybrid,
        Algorithm::ImitationBc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::HybridDet => "hybrid-det",
            Algorithm::HybridStoch => "hybrid-stoch",
            Algorithm::PolicyOnly => "policy-only",
            Algorithm::ModelOnly => "model-only",
            Algorithm::ImitationHybrid => "imitation-hybrid",
            Algorithm::ImitationBc => "imitation-bc",
        }
    }

    pub fn is_imitation(self) -> bool {
        matches!(self, Algorithm::ImitationHybrid | Algorithm::ImitationBc)
    }

    fn uses_models(self) -> bool {
        !matches!(self, Algorithm::PolicyOnly | Algorithm::ImitationBc)
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Algorithm::ALL.iter().map(|a| a.name()).collect();
                Error::InvalidArgument(format!("unknown algorithm `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Which hybrid controller an imitation run evaluates with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Deterministic,
    Stochastic,
}

/// Tunable settings. Defaults are the pendulum/cartpole settings: horizon
/// 5, episode length 200, 20 samples, temperature 0.1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparameters {
    /// Planning horizon `H` in environment steps.
    pub horizon: usize,
    /// Episode length `T`; overrides the environment default.
    pub episode_len: usize,
    /// Samples `K` per planning call.
    pub samples: usize,
    /// Temperature of the importance weights.
    pub temperature: f64,
    /// Exploration noise is `exploration_scale * decay^t * half_range * z`
    /// with `t` the number of environment interactions so far.
    pub exploration_decay: f64,
    pub exploration_scale: f64,
    /// Controller used to evaluate imitation runs.
    pub imitation_variant: Variant,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Adam steps on the dynamics and reward models after each episode.
    pub model_updates_per_episode: usize,
    pub model_learning_rate: f64,
    pub dynamics_hidden: usize,
    pub dynamics_activation: Activation,
    pub reward_hidden: usize,
    pub policy_hidden: usize,
    /// Starting value of the raw variance-head output.
    pub policy_init_variance: f64,
    /// Adam steps of reward-weighted regression after each episode.
    pub policy_updates_per_episode: usize,
    pub policy_learning_rate: f64,
    /// Softmax temperature over discounted returns. The large default makes
    /// the update close to plain regression onto the executed hybrid actions,
    /// which avoids favoring actions merely taken from good states.
    pub rwr_temperature: f64,
    pub bc_learning_rate: f64,
    /// Behavior-cloning epochs over the expert data per imitation round.
    pub bc_epochs_per_round: usize,
    /// Spread of the model-only sampler, as a fraction of the action
    /// half-range.
    pub model_only_std: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            horizon: 5,
            episode_len: 200,
            samples: 20,
            temperature: 0.1,
            exploration_decay: EXPLORATION_DECAY,
            exploration_scale: 2.0,
            imitation_variant: Variant::Deterministic,
            buffer_capacity: 100_000,
            batch_size: 128,
            model_updates_per_episode: 50,
            model_learning_rate: MODEL_LEARNING_RATE,
            dynamics_hidden: crate::diffnet::DYN_HIDDEN,
            dynamics_activation: Activation::Sin,
            reward_hidden: crate::diffnet::REWARD_HIDDEN,
            policy_hidden: POLICY_HIDDEN,
            policy_init_variance: 1.0,
            policy_updates_per_episode: 50,
            policy_learning_rate: MODEL_LEARNING_RATE,
            rwr_temperature: 1000.0,
            bc_learning_rate: BC_LEARNING_RATE,
            bc_epochs_per_round: 50,
            model_only_std: 0.5,
        }
    }
}

impl Hyperparameters {
    /// Checks every field, naming the first offending one.
    pub fn validate(&self) -> Result<()> {
        let positive_int = [
            ("horizon", self.horizon),
            ("episode_len", self.episode_len),
            ("samples", self.samples),
            ("buffer_capacity", self.buffer_capacity),
            ("batch_size", self.batch_size),
            ("dynamics_hidden", self.dynamics_hidden),
            ("reward_hidden", self.reward_hidden),
            ("policy_hidden", self.policy_hidden),
        ];
        for (name, value) in positive_int {
            if value == 0 {
                return Err(field_error(name, "must be at least 1"));
            }
        }
        let positive = [
            ("temperature", self.temperature),
            ("model_learning_rate", self.model_learning_rate),
            ("policy_learning_rate", self.policy_learning_rate),
            ("rwr_temperature", self.rwr_temperature),
            ("bc_learning_rate", self.bc_learning_rate),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(field_error(name, &format!("must be a positive finite number, got {value}")));
            }
        }
        let nonnegative = [
            ("exploration_scale", self.exploration_scale),
            ("policy_init_variance", self.policy_init_variance),
            ("model_only_std", self.model_only_std),
        ];
        for (name, value) in nonnegative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(field_error(name, &format!("must be a non-negative finite number, got {value}")));
            }
        }
        if !(self.exploration_decay > 0.0 && self.exploration_decay <= 1.0) {
            return Err(field_error(
                "exploration_decay",
                &format!("must lie in (0, 1], got {}", self.exploration_decay),
            ));
        }
        Ok(())
    }
}

fn field_error(name: &str, msg: &str) -> Error {
    Error::InvalidArgument(format!("hyperparameters.{name} {msg}"))
}

/// Everything one training run depends on besides its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub env: EnvId,
    pub algorithm: Algorithm,
    pub episodes: usize,
    pub hyper: Hyperparameters,
}

impl TrainConfig {
    pub fn new(env: EnvId, algorithm: Algorithm, episodes: usize) -> Self {
        TrainConfig {
            env,
            algorithm,
            episodes,
            hyper: Hyperparameters::default(),
        }
    }

    pub fn env_spec(&self) -> EnvSpec {
        let mut spec = EnvSpec::for_id(self.env);
        spec.episode_len = self.hyper.episode_len;
        spec
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.algorithm.is_imitation() && self.env != EnvId::Pendulum {
            return Err(Error::Unsupported {
                op: "imitation (scripted expert)",
                env: self.env.name().to_string(),
            });
        }
        Ok(())
    }
}

/// Per-episode record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub seed: u64,
    /// Return of the logged episode (the evaluation episode for imitation
    /// runs).
    pub cum_reward: f64,
    /// `rho' h Sigma h' rho` at each executed step (deterministic
    /// controller only; steps that fell back are skipped).
    pub insertion_gradients: Vec<f64>,
    /// `|a - mu(s)|` at each step where a hybrid controller acted.
    pub corrections: Vec<f64>,
    /// Mean dynamics negative log-likelihood over this episode's model
    /// updates; NaN when no update ran.
    pub model_loss: f64,
    pub reward_loss: f64,
    pub policy_loss: f64,
    pub steps: usize,
    pub fallback_steps: usize,
    /// The environment rejected an action and the episode was cut short.
    pub failed: bool,
    pub wall_ms: f64,
}

impl EpisodeLog {
    pub fn mean_insertion_gradient(&self) -> f64 {
        mean_or_nan(&self.insertion_gradients)
    }

    pub fn mean_correction(&self) -> f64 {
        mean_or_nan(&self.corrections)
    }
}

fn mean_or_nan(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Which data a policy update read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyDataSource {
    Replay,
    Expert,
}

pub struct RunArtifacts {
    pub logs: Vec<EpisodeLog>,
    pub dynamics: DynNet,
    pub reward: RewardNet,
    pub policy: PolicyNet,
    pub replay: ReplayBuffer,
    /// Empty for experience-based runs.
    pub demos: ReplayBuffer,
    /// One entry per policy update, in order.
    pub policy_updates: Vec<PolicyDataSource>,
    pub total_env_steps: u64,
}

const STREAM_INIT: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_MODEL: u64 = 2;
const STREAM_POLICY: u64 = 3;
const STREAM_CONTROL: u64 = 4;

fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

struct Learner {
    cfg: TrainConfig,
    spec: EnvSpec,
    seed: u64,
    dynamics: DynNet,
    reward: RewardNet,
    policy: PolicyNet,
    dyn_adam: AdamState,
    reward_adam: AdamState,
    replay: ReplayBuffer,
    demos: ReplayBuffer,
    env_rng: ChaCha8Rng,
    model_rng: ChaCha8Rng,
    policy_rng: ChaCha8Rng,
    control_rng: ChaCha8Rng,
    total_env_steps: u64,
    policy_updates: Vec<PolicyDataSource>,
}

/// How actions are chosen during one episode.
enum Actor {
    Det { explore: bool },
    Stoch(StochController),
    PolicySample,
    PolicyMean,
    Expert,
}

struct EpisodeOutcome {
    transitions: Vec<Transition>,
    cum_reward: f64,
    insertion_gradients: Vec<f64>,
    corrections: Vec<f64>,
    fallback_steps: usize,
    failed: bool,
}

impl Learner {
    fn new(cfg: &TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.env_spec();
        spec.validate()?;
        let h = &cfg.hyper;
        let (n, m) = (spec.state_dim, spec.action_dim);
        let mut init = stream(seed, STREAM_INIT);
        let dynamics = DynNet::new(n, m, h.dynamics_hidden, h.dynamics_activation, &mut init);
        let reward = RewardNet::new(n, m, h.reward_hidden, &mut init);
        let policy = PolicyNet::new(n, m, h.policy_hidden, &mut init).with_initial_variance(h.policy_init_variance);
        Ok(Learner {
            dyn_adam: AdamState::for_params(&dynamics, h.model_learning_rate),
            reward_adam: AdamState::for_params(&reward, h.model_learning_rate),
            dynamics,
            reward,
            policy,
            replay: ReplayBuffer::new(h.buffer_capacity),
            demos: ReplayBuffer::new(h.buffer_capacity),
            env_rng: stream(seed, STREAM_ENV),
            model_rng: stream(seed, STREAM_MODEL),
            policy_rng: stream(seed, STREAM_POLICY),
            control_rng: stream(seed, STREAM_CONTROL),
            total_env_steps: 0,
            policy_updates: Vec::new(),
            spec,
            seed,
            cfg: cfg.clone(),
        })
    }

    fn stoch_controller(&self, mode: SamplingMode) -> StochController {
        let h = &self.cfg.hyper;
        StochController::new(h.horizon, h.samples, h.temperature, self.spec.dt, self.spec.action_dim, mode)
    }

    fn run_episode(&mut self, actor: &mut Actor, episode: usize) -> Result<EpisodeOutcome> {
        let h = self.cfg.hyper.clone();
        let (mut state, mut obs) = env::reset(&self.spec, self.env_rng.next_u64());
        if let Actor::Stoch(c) = actor {
            c.reset();
        }
        let half_range = self.spec.action_half_range();
        let m = self.spec.action_dim;
        let mut out = EpisodeOutcome {
            transitions: Vec::with_capacity(self.spec.episode_len),
            cum_reward: 0.0,
            insertion_gradients: Vec::new(),
            corrections: Vec::new(),
            fallback_steps: 0,
            failed: false,
        };
        for step in 0..self.spec.episode_len {
            let action = match actor {
                Actor::Det { explore } => {
                    let z = DVector::from_fn(m, |_, _| self.control_rng.sample::<f64, _>(StandardNormal));
                    let eps = if *explore {
                        h.exploration_scale * h.exploration_decay.powf(self.total_env_steps as f64)
                    } else {
                        0.0
                    };
                    let noise = half_range.component_mul(&z) * eps;
                    let d = hybrid_det::plan_step(
                        &self.dynamics,
                        &self.reward,
                        &self.policy,
                        &obs,
                        h.horizon,
                        self.spec.dt,
                        &noise,
                    )?;
                    match d.insertion_gradient {
                        Some(g) => {
                            out.insertion_gradients.push(g);
                            out.corrections.push(d.correction_norm);
                        }
                        None => out.fallback_steps += 1,
                    }
                    d.action
                }
                Actor::Stoch(c) => {
                    let d = c.step(&self.dynamics, &self.reward, &self.policy, &obs, &mut self.control_rng)?;
                    if d.fallback {
                        out.fallback_steps += 1;
                    } else if !matches!(c.mode, SamplingMode::Nominal { .. }) {
                        out.corrections.push(d.correction_norm);
                    }
                    d.action
                }
                Actor::PolicySample => self.policy.sample(&obs, &mut self.control_rng)?,
                Actor::PolicyMean => self.policy.mean(&obs)?,
                Actor::Expert => env::expert_action(&state)?,
            };
            let applied = self.spec.clip_action(&action);
            let (next, r) = match state.step(&applied) {
                Ok(x) => x,
                Err(e) => {
                    log::warn!("seed {} episode {episode} step {step}: {e}", self.seed);
                    out.failed = true;
                    break;
                }
            };
            self.total_env_steps += 1;
            out.cum_reward += r;
            let mut t = Transition::new(obs, applied, r, next.clone());
            t.episode = episode;
            t.step = step;
            out.transitions.push(t);
            obs = next;
        }
        finish_episode(&mut out.transitions, RWR_DISCOUNT);
        Ok(out)
    }

    /// Adam steps on both models, each on a fresh batch from the replay
    /// buffer. Returns the mean dynamics and reward losses.
    fn train_models(&mut self) -> Result<(f64, f64)> {
        let h = &self.cfg.hyper;
        if self.replay.is_empty() || h.model_updates_per_episode == 0 {
            return Ok((f64::NAN, f64::NAN));
        }
        let (mut dyn_total, mut rew_total) = (0.0, 0.0);
        for _ in 0..h.model_updates_per_episode {
            let batch = self.replay.sample(h.batch_size, &mut self.model_rng)?;
            let (dl, dg) = self.dynamics.loss(&batch, self.spec.dt)?;
            self.dyn_adam.step(&mut self.dynamics, &dg)?;
            let (rl, rg) = self.reward.td_loss(&batch)?;
            self.reward_adam.step(&mut self.reward, &rg)?;
            dyn_total += dl;
            rew_total += rl;
        }
        let k = h.model_updates_per_episode as f64;
        Ok((dyn_total / k, rew_total / k))
    }

    fn log(&self, episode: usize, ep: EpisodeOutcome, losses: (f64, f64, f64), started: Instant) -> EpisodeLog {
        EpisodeLog {
            episode,
            seed: self.seed,
            cum_reward: ep.cum_reward,
            insertion_gradients: ep.insertion_gradients,
            corrections: ep.corrections,
            model_loss: losses.0,
            reward_loss: losses.1,
            policy_loss: losses.2,
            steps: ep.transitions.len(),
            fallback_steps: ep.fallback_steps,
            failed: ep.failed,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        }
    }

    fn into_artifacts(self, logs: Vec<EpisodeLog>) -> RunArtifacts {
        RunArtifacts {
            logs,
            dynamics: self.dynamics,
            reward: self.reward,
            policy: self.policy,
            replay: self.replay,
            demos: self.demos,
            policy_updates: self.policy_updates,
            total_env_steps: self.total_env_steps,
        }
    }
}

/// Experience-based training: hybrid-det, hybrid-stoch, policy-only or
/// model-only.
pub fn run_experience_training(cfg: &TrainConfig, seed: u64) -> Result<RunArtifacts> {
    if cfg.algorithm.is_imitation() {
        return Err(Error::InvalidArgument(format!(
            "{} is an imitation algorithm; use run_imitation_training",
            cfg.algorithm.name()
        )));
    }
    let mut l = Learner::new(cfg, seed)?;
    let h = cfg.hyper.clone();
    let mut actor = match cfg.algorithm {
        Algorithm::HybridDet => Actor::Det { explore: true },
        Algorithm::HybridStoch => Actor::Stoch(l.stoch_controller(SamplingMode::Policy)),
        Algorithm::ModelOnly => {
            let half = l.spec.action_half_range().max();
            Actor::Stoch(l.stoch_controller(SamplingMode::Nominal {
                std: h.model_only_std * half,
            }))
        }
        Algorithm::PolicyOnly => Actor::PolicySample,
        Algorithm::ImitationHybrid | Algorithm::ImitationBc => unreachable!(),
    };
    let mut updater = RewardWeightedRegression::new(
        &l.policy,
        h.policy_learning_rate,
        RwrConfig {
            batch_size: h.batch_size,
            steps: h.policy_updates_per_episode,
            temperature: h.rwr_temperature,
        },
    );
    let mut logs = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let started = Instant::now();
        let ep = l.run_episode(&mut actor, episode)?;
        l.replay.extend(ep.transitions.iter().cloned());
        let (model_loss, reward_loss) = if cfg.algorithm.uses_models() {
            l.train_models()?
        } else {
            (f64::NAN, f64::NAN)
        };
        let policy_loss = if cfg.algorithm == Algorithm::ModelOnly || h.policy_updates_per_episode == 0 {
            f64::NAN
        } else {
            l.policy_updates.push(PolicyDataSource::Replay);
            updater.update(&mut l.policy, &l.replay, &mut l.policy_rng)?
        };
        let entry = l.log(episode, ep, (model_loss, reward_loss, policy_loss), started);
        log::info!(
            "{} seed {} episode {episode}: reward {:.2}",
            cfg.algorithm.name(),
            seed,
            entry.cum_reward
        );
        logs.push(entry);
    }
    Ok(l.into_artifacts(logs))
}

/// Imitation training: per round, one expert episode into both buffers,
/// model regression on the replay buffer, behavior cloning on the expert
/// buffer only, then one evaluation episode (logged) whose transitions go to
/// the replay buffer.
pub fn run_imitation_training(cfg: &TrainConfig, seed: u64) -> Result<RunArtifacts> {
    if !cfg.algorithm.is_imitation() {
        return Err(Error::InvalidArgument(format!(
            "{} is not an imitation algorithm",
            cfg.algorithm.name()
        )));
    }
    let mut l = Learner::new(cfg, seed)?;
    let h = cfg.hyper.clone();
    let mut eval_actor = match (cfg.algorithm, h.imitation_variant) {
        (Algorithm::ImitationBc, _) => Actor::PolicyMean,
        (_, Variant::Deterministic) => Actor::Det { explore: false },
        (_, Variant::Stochastic) => Actor::Stoch(l.stoch_controller(SamplingMode::Policy)),
    };
    let mut bc = BehaviorCloning::new(&l.policy, h.bc_learning_rate, h.batch_size, h.bc_epochs_per_round);
    let mut logs = Vec::with_capacity(cfg.episodes);
    for round in 0..cfg.episodes {
        let started = Instant::now();
        let demo = l.run_episode(&mut Actor::Expert, round)?;
        l.demos.extend(demo.transitions.iter().cloned());
        l.replay.extend(demo.transitions);
        let (model_loss, reward_loss) = if cfg.algorithm.uses_models() {
            l.train_models()?
        } else {
            (f64::NAN, f64::NAN)
        };
        l.policy_updates.push(PolicyDataSource::Expert);
        let policy_loss = bc.update(&mut l.policy, &l.demos, &mut l.policy_rng)?;
        let eval = l.run_episode(&mut eval_actor, round)?;
        l.replay.extend(eval.transitions.iter().cloned());
        let entry = l.log(round, eval, (model_loss, reward_loss, policy_loss), started);
        log::info!(
            "{} seed {} round {round}: eval reward {:.2}",
            cfg.algorithm.name(),
            seed,
            entry.cum_reward
        );
        logs.push(entry);
    }
    Ok(l.into_artifacts(logs))
}

/// Dispatches on the configured algorithm.
pub fn run(cfg: &TrainConfig, seed: u64) -> Result<RunArtifacts> {
    if cfg.algorithm.is_imitation() {
        run_imitation_training(cfg, seed)
    } else {
        run_experience_training(cfg, seed)
    }
}

/// Closed-loop return of the scripted expert from the standard start.
pub fn expert_return(spec: &EnvSpec, seed: u64) -> Result<f64> {
    let (mut state, _) = env::reset(spec, seed);
    let mut total = 0.0;
    for _ in 0..spec.episode_len {
        let a = env::expert_action(&state)?;
        total += state.step(&a)?.1;
    }
    Ok(total)
}
