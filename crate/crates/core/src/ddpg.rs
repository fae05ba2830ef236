//! Deterministic-policy actor-critic learner with experience replay and
//! slowly tracking target networks.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{Activation, AgentNet, ByteReader, GradBuffer, Optimizer, OptimizerKind, OutputHead};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// (bottleneck position, slot) the sample was taken at; `(0, 0)` for
    /// single-agent learners.
    pub key: (usize, usize),
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

impl Transition {
    pub fn is_finite(&self) -> bool {
        self.reward.is_finite()
            && self
                .state
                .iter()
                .chain(&self.action)
                .chain(&self.next_state)
                .all(|v| v.is_finite())
    }
}

/// Serializable position of a ChaCha stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    seed: [u8; 32],
    stream: u64,
    word_pos: [u64; 2],
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        let pos = rng.get_word_pos();
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: [pos as u64, (pos >> 64) as u64],
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos[0] as u128 | ((self.word_pos[1] as u128) << 64));
        rng
    }
}

/// Fixed-capacity ring of transitions with a seeded uniform sampler.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

#[derive(Serialize, Deserialize)]
struct ReplayImage {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    rng: RngState,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::new(),
            next: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::NonFinite("transition"));
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample(&mut self, n: usize) -> Vec<&Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        let idx: Vec<usize> = (0..n).map(|_| self.rng.random_range(0..self.items.len())).collect();
        idx.into_iter().map(|i| &self.items[i]).collect()
    }

    fn image(&self) -> ReplayImage {
        ReplayImage {
            capacity: self.capacity,
            items: self.items.clone(),
            next: self.next,
            rng: RngState::capture(&self.rng),
        }
    }

    fn from_image(img: ReplayImage) -> Self {
        Self {
            capacity: img.capacity,
            items: img.items,
            next: img.next,
            rng: img.rng.restore(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpgConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Action bound `G`.
    pub action_bound: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub optimizer: OptimizerKind,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub gamma_rl: f64,
    pub tau_soft: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Exploration noise std; `None` means `0.1 * action_bound`.
    pub noise_std: Option<f64>,
    pub actor_final_init: f64,
    pub critic_final_init: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            state_dim: 3,
            action_dim: 1,
            action_bound: 1.5,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            optimizer: OptimizerKind::Sgd,
            lr_actor: 1e-3,
            lr_critic: 1e-2,
            gamma_rl: 0.99,
            tau_soft: 0.01,
            batch_size: 64,
            replay_capacity: 100_000,
            noise_std: None,
            actor_final_init: 1e-3,
            critic_final_init: 3e-3,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.state_dim == 0 || self.action_dim == 0 {
            return bad("state and action dimensions must be positive".into());
        }
        if !(self.action_bound > 0.0) {
            return bad(format!("action bound {} must be positive", self.action_bound));
        }
        if !(self.tau_soft > 0.0 && self.tau_soft <= 1.0) {
            return bad(format!("tau_soft = {} outside (0, 1]", self.tau_soft));
        }
        if !(0.0..1.0).contains(&self.gamma_rl) {
            return bad(format!("gamma_rl = {} outside [0, 1)", self.gamma_rl));
        }
        if !(self.lr_actor > 0.0 && self.lr_critic > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.batch_size == 0 || self.replay_capacity == 0 {
            return bad("batch size and replay capacity must be positive".into());
        }
        if let Some(s) = self.noise_std {
            if !(s >= 0.0) {
                return bad(format!("noise std {s} must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn noise(&self) -> f64 {
        self.noise_std.unwrap_or(0.1 * self.action_bound)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_objective: f64,
}

#[derive(Clone, Debug)]
pub struct DdpgLearner {
    cfg: DdpgConfig,
    pub actor: AgentNet,
    pub critic: AgentNet,
    pub actor_target: AgentNet,
    pub critic_target: AgentNet,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    noise_std: f64,
    noise_rng: ChaCha8Rng,
    pub replay: ReplayBuffer,
}

#[derive(Serialize, Deserialize)]
struct LearnerImage {
    cfg: DdpgConfig,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    noise_std: f64,
    noise_rng: RngState,
    replay: ReplayImage,
}

const LEARNER_MAGIC: &[u8; 4] = b"DDPG";
const LEARNER_VERSION: u32 = 1;

impl DdpgLearner {
    pub fn new(cfg: DdpgConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(seed);
        init.set_stream(1);
        let mut actor_sizes = vec![cfg.state_dim];
        actor_sizes.extend(&cfg.hidden);
        actor_sizes.push(cfg.action_dim);
        let mut critic_sizes = vec![cfg.state_dim + cfg.action_dim];
        critic_sizes.extend(&cfg.hidden);
        critic_sizes.push(1);

        let actor = AgentNet::new(
            &actor_sizes,
            cfg.activation,
            OutputHead::TanhScaled(cfg.action_bound),
            Some(cfg.actor_final_init),
            &mut init,
        );
        let critic = AgentNet::new(
            &critic_sizes,
            cfg.activation,
            OutputHead::Linear,
            Some(cfg.critic_final_init),
            &mut init,
        );
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
        noise_rng.set_stream(2);
        Ok(Self {
            actor_opt: Optimizer::new(cfg.optimizer, &actor),
            critic_opt: Optimizer::new(cfg.optimizer, &critic),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            noise_std: cfg.noise(),
            noise_rng,
            replay: ReplayBuffer::new(cfg.replay_capacity, seed ^ 0x5eed_5eed_5eed_5eed),
            cfg,
        })
    }

    pub fn config(&self) -> &DdpgConfig {
        &self.cfg
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Annealing hook for the exploration noise.
    pub fn set_noise_std(&mut self, std: f64) {
        self.noise_std = std.max(0.0);
    }

    /// Policy action for `state`; with `explore`, Gaussian noise is added and
    /// the result clamped to `[-G, G]`.
    pub fn act(&mut self, state: &[f64], explore: bool) -> Result<Vec<f64>> {
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        let mut a = self.actor.forward(state)?;
        if explore && self.noise_std > 0.0 {
            let normal = Normal::new(0.0, self.noise_std).expect("std is finite and positive");
            for v in &mut a {
                *v += normal.sample(&mut self.noise_rng);
            }
        }
        let g = self.cfg.action_bound;
        for v in &mut a {
            *v = v.clamp(-g, g);
        }
        Ok(a)
    }

    /// One critic regression step followed by one deterministic policy
    /// gradient step, both on `batch`.
    pub fn update(&mut self, batch: &[&Transition]) -> Result<UpdateStats> {
        if batch.is_empty() {
            return Err(Error::Precondition("empty batch".into()));
        }
        let n = batch.len() as f64;
        let sd = self.cfg.state_dim;
        let ad = self.cfg.action_dim;
        for t in batch {
            if t.state.len() != sd || t.next_state.len() != sd || t.action.len() != ad {
                return Err(Error::DimensionMismatch {
                    context: "transition",
                    expected: sd,
                    actual: t.state.len(),
                });
            }
        }

        let mut critic_grads = GradBuffer::zeros_like(&self.critic);
        let mut loss = 0.0;
        let mut input = Vec::with_capacity(sd + ad);
        for t in batch {
            let target = if t.done {
                t.reward
            } else {
                let a_next = self.actor_target.forward(&t.next_state)?;
                input.clear();
                input.extend_from_slice(&t.next_state);
                input.extend_from_slice(&a_next);
                t.reward + self.cfg.gamma_rl * self.critic_target.forward(&input)?[0]
            };
            input.clear();
            input.extend_from_slice(&t.state);
            input.extend_from_slice(&t.action);
            let cache = self.critic.forward_cached(&input)?;
            let err = cache.output()[0] - target;
            loss += err * err / n;
            self.critic.backward_into(&cache, &[2.0 * err / n], &mut critic_grads)?;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("critic loss"));
        }
        self.critic_opt
            .step(&mut self.critic, &critic_grads, self.cfg.lr_critic)?;

        let mut actor_grads = GradBuffer::zeros_like(&self.actor);
        let mut scratch = GradBuffer::zeros_like(&self.critic);
        let mut objective = 0.0;
        for t in batch {
            let a_cache = self.actor.forward_cached(&t.state)?;
            input.clear();
            input.extend_from_slice(&t.state);
            input.extend_from_slice(a_cache.output());
            let q_cache = self.critic.forward_cached(&input)?;
            objective += q_cache.output()[0] / n;
            let dq = self.critic.backward_into(&q_cache, &[1.0], &mut scratch)?;
            // ascend Q: descend -Q
            let upstream: Vec<f64> = dq[sd..].iter().map(|g| -g / n).collect();
            self.actor.backward_into(&a_cache, &upstream, &mut actor_grads)?;
        }
        if !objective.is_finite() {
            return Err(Error::NonFinite("actor objective"));
        }
        self.actor_opt.step(&mut self.actor, &actor_grads, self.cfg.lr_actor)?;

        Ok(UpdateStats {
            critic_loss: loss,
            actor_objective: objective,
        })
    }

    pub fn soft_update(&mut self) {
        self.actor_target.blend_from(&self.actor, self.cfg.tau_soft);
        self.critic_target.blend_from(&self.critic, self.cfg.tau_soft);
    }

    pub fn remember(&mut self, t: Transition) -> Result<()> {
        self.replay.push(t)
    }

    /// Samples a minibatch, updates both networks and the targets. Returns
    /// `None` until the replay holds at least one batch.
    pub fn train_step(&mut self) -> Result<Option<UpdateStats>> {
        if self.replay.len() < self.cfg.batch_size {
            return Ok(None);
        }
        let batch: Vec<Transition> = self.replay.sample(self.cfg.batch_size).into_iter().cloned().collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let stats = self.update(&refs)?;
        self.soft_update();
        Ok(Some(stats))
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite()
            && self.critic.is_finite()
            && self.actor_target.is_finite()
            && self.critic_target.is_finite()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(LEARNER_MAGIC);
        out.extend_from_slice(&LEARNER_VERSION.to_le_bytes());
        let image = LearnerImage {
            cfg: self.cfg.clone(),
            actor_opt: self.actor_opt.clone(),
            critic_opt: self.critic_opt.clone(),
            noise_std: self.noise_std,
            noise_rng: RngState::capture(&self.noise_rng),
            replay: self.replay.image(),
        };
        let sections = [
            self.actor.to_bytes(),
            self.critic.to_bytes(),
            self.actor_target.to_bytes(),
            self.critic_target.to_bytes(),
            serde_json::to_vec(&image)?,
        ];
        for s in sections {
            out.extend_from_slice(&(s.len() as u64).to_le_bytes());
            out.extend_from_slice(&s);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != LEARNER_MAGIC {
            return Err(Error::Checkpoint("bad learner magic".into()));
        }
        let version = r.u32()?;
        if version != LEARNER_VERSION {
            return Err(Error::Checkpoint(format!("unsupported learner version {version}")));
        }
        let mut section = || -> Result<&[u8]> {
            let len = r.u64()? as usize;
            r.take(len)
        };
        let actor = AgentNet::from_bytes(section()?)?;
        let critic = AgentNet::from_bytes(section()?)?;
        let actor_target = AgentNet::from_bytes(section()?)?;
        let critic_target = AgentNet::from_bytes(section()?)?;
        let image: LearnerImage = serde_json::from_slice(section()?)?;
        Ok(Self {
            cfg: image.cfg,
            actor,
            critic,
            actor_target,
            critic_target,
            actor_opt: image.actor_opt,
            critic_opt: image.critic_opt,
            noise_std: image.noise_std,
            noise_rng: image.noise_rng.restore(),
            replay: ReplayBuffer::from_image(image.replay),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_cfg() -> DdpgConfig {
        DdpgConfig {
            state_dim: 2,
            action_dim: 1,
            action_bound: 1.0,
            hidden: vec![16, 16],
            batch_size: 8,
            replay_capacity: 100,
            optimizer: OptimizerKind::Adam,
            ..DdpgConfig::default()
        }
    }

    fn transition(k: usize, done: bool, reward: f64) -> Transition {
        let x = k as f64 * 0.1;
        Transition {
            key: (0, k),
            state: vec![x, 1.0 - x],
            action: vec![(x * 3.0).sin() * 0.5],
            reward,
            next_state: vec![x + 0.1, 0.9 - x],
            done,
        }
    }

    #[test]
    fn fresh_actor_is_nearly_silent() {
        let mut l = DdpgLearner::new(small_cfg(), 1).unwrap();
        for k in 0..20 {
            let a = l.act(&transition(k, false, 0.0).state, false).unwrap()[0];
            assert!(a.abs() < 1e-2 * l.config().action_bound);
        }
    }

    #[test]
    fn exploration_stays_in_bounds_and_rejects_nan() {
        let mut cfg = small_cfg();
        cfg.noise_std = Some(5.0);
        let mut l = DdpgLearner::new(cfg, 2).unwrap();
        for _ in 0..1000 {
            let a = l.act(&[0.3, -0.2], true).unwrap()[0];
            assert!(a.abs() <= 1.0);
        }
        assert!(matches!(l.act(&[f64::NAN, 0.0], false), Err(Error::NonFinite(_))));
    }

    #[test]
    fn exploration_std_matches_config() {
        let mut l = DdpgLearner::new(
            DdpgConfig {
                state_dim: 2,
                ..small_cfg()
            },
            3,
        )
        .unwrap();
        let draws: Vec<f64> = (0..10_000).map(|_| l.act(&[0.1, 0.2], true).unwrap()[0]).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let want = l.config().noise();
        assert!((var.sqrt() - want).abs() < 0.2 * want, "std {} vs {want}", var.sqrt());
    }

    #[test]
    fn replay_ring_and_reproducible_sampling() {
        let mut a = ReplayBuffer::new(5, 42);
        let mut b = ReplayBuffer::new(5, 42);
        for k in 0..12 {
            a.push(transition(k, false, -1.0)).unwrap();
            b.push(transition(k, false, -1.0)).unwrap();
        }
        assert_eq!(a.len(), 5);
        let keys: Vec<_> = a.sample(20).iter().map(|t| t.key.1).collect();
        assert!(keys.iter().all(|k| (7..12).contains(k)));
        let keys_b: Vec<_> = b.sample(20).iter().map(|t| t.key.1).collect();
        assert_eq!(keys, keys_b);
        let mut bad = transition(0, false, 0.0);
        bad.reward = f64::INFINITY;
        assert!(a.push(bad).is_err());
    }

    #[test]
    fn zero_reward_terminal_batch_is_a_fixed_point() {
        let mut cfg = small_cfg();
        cfg.critic_final_init = 0.0;
        cfg.optimizer = OptimizerKind::Sgd;
        let mut l = DdpgLearner::new(cfg, 4).unwrap();
        // zero the critic so Q == 0 everywhere
        for layer in l.critic.layers_mut() {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
            layer.biases.iter_mut().for_each(|b| *b = 0.0);
        }
        let before = (l.actor.clone(), l.critic.clone());
        let batch: Vec<Transition> = (0..8).map(|k| transition(k, true, 0.0)).collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let stats = l.update(&refs).unwrap();
        assert!(stats.critic_loss.abs() < 1e-12);
        for (a, b) in l.actor.params().zip(before.0.params()) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in l.critic.params().zip(before.1.params()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn soft_update_rules() {
        let mut cfg = small_cfg();
        cfg.tau_soft = 1.0;
        let mut l = DdpgLearner::new(cfg, 5).unwrap();
        l.actor.layers_mut()[0].weights[0] += 0.5;
        l.soft_update();
        assert_eq!(l.actor_target, l.actor);
        assert_eq!(l.critic_target, l.critic);

        let mut l = DdpgLearner::new(small_cfg(), 6).unwrap();
        l.actor.layers_mut()[0].weights[0] = 1.0;
        l.actor_target.layers_mut()[0].weights[0] = 0.0;
        l.soft_update();
        assert_relative_eq!(l.actor_target.layers()[0].weights[0], 0.01);

        // frozen online net: the gap shrinks by (1 - tau) per step
        let gap0 = (l.actor_target.layers()[0].weights[0] - 1.0).abs();
        for _ in 0..100 {
            l.soft_update();
        }
        let gap = (l.actor_target.layers()[0].weights[0] - 1.0).abs();
        assert_relative_eq!(gap, gap0 * 0.99f64.powi(100), max_relative = 1e-9);
    }

    #[test]
    fn identical_learners_stay_identical() {
        let mut cfg = small_cfg();
        cfg.tau_soft = 1.0;
        let mut a = DdpgLearner::new(cfg.clone(), 7).unwrap();
        let mut b = DdpgLearner::new(cfg, 7).unwrap();
        let batch: Vec<Transition> = (0..8).map(|k| transition(k, k == 7, -(k as f64))).collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        for _ in 0..10 {
            a.update(&refs).unwrap();
            b.update(&refs).unwrap();
            a.soft_update();
            b.soft_update();
        }
        assert_eq!(a.actor.to_bytes(), b.actor.to_bytes());
        assert_eq!(a.critic_target.to_bytes(), b.critic_target.to_bytes());
        assert!(a.is_finite());
    }

    #[test]
    fn empty_batch_and_bad_dimensions() {
        let mut l = DdpgLearner::new(small_cfg(), 8).unwrap();
        assert!(l.update(&[]).is_err());
        let mut t = transition(0, false, 0.0);
        t.state.push(1.0);
        assert!(l.update(&[&t]).is_err());
    }

    #[test]
    fn checkpoint_resumes_bit_exactly() {
        let mut l = DdpgLearner::new(small_cfg(), 9).unwrap();
        for k in 0..30 {
            l.remember(transition(k, k % 10 == 9, -(k as f64) * 0.1)).unwrap();
        }
        for _ in 0..5 {
            l.train_step().unwrap();
            l.act(&[0.0, 0.0], true).unwrap();
        }
        let mut resumed = DdpgLearner::from_bytes(&l.to_bytes().unwrap()).unwrap();
        for _ in 0..5 {
            let a = l.act(&[0.2, 0.1], true).unwrap();
            let b = resumed.act(&[0.2, 0.1], true).unwrap();
            assert_eq!(a, b);
            assert_eq!(l.train_step().unwrap(), resumed.train_step().unwrap());
        }
        assert_eq!(l.to_bytes().unwrap(), resumed.to_bytes().unwrap());
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = DdpgConfig {
            tau_soft: 0.0,
            ..DdpgConfig::default()
        };
        assert!(DdpgLearner::new(cfg, 0).is_err());
        let cfg = DdpgConfig {
            gamma_rl: 1.0,
            ..DdpgConfig::default()
        };
        assert!(DdpgLearner::new(cfg, 0).is_err());
    }
}
