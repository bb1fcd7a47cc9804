//! Deep Q-learning: target computation, ε-greedy selection, the learner and checkpoints.

pub mod adam;
pub mod network;
pub mod replay;
pub mod training;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Action, ActionMask, NUM_ACTIONS};
use adam::Adam;
use network::{gradients, Input, LossKind, NetworkSpec, QNetwork, Sample};
use replay::ReplayBuffer;

/// Longest random hold attached to a randomly chosen DoNothing.
pub const RANDOM_LOCKOUT_MAX_S: u32 = 15;

/// Valid action with the largest Q-value; ties go to the lowest index.
pub fn masked_argmax(q: &[f64], mask: &ActionMask) -> Action {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&v, &ok)) in q.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.and_then(|(i, _)| Action::from_index(i)).unwrap_or(Action::DoNothing)
}

/// `r + γ · max over valid a′ of Q(s′, a′)`. There are no terminal states.
pub fn q_target(reward: f64, gamma: f64, next_q: &[f64], next_mask: &ActionMask) -> f64 {
    let best = next_q
        .iter()
        .zip(next_mask)
        .filter(|(_, &ok)| ok)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        reward
    } else {
        reward + gamma * best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Observe,
    Explore,
    Train,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsilonSchedule {
    pub initial: f64,
    pub final_epsilon: f64,
    pub observe_end_s: u64,
    pub explore_end_s: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { initial: 1.0, final_epsilon: 0.005, observe_end_s: 129_600, explore_end_s: 259_200 }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial <= 1.0 && self.initial >= self.final_epsilon && self.final_epsilon >= 0.0) {
            return Err(Error::Config("epsilon needs 1 ≥ initial ≥ final ≥ 0".into()));
        }
        if self.observe_end_s > self.explore_end_s {
            return Err(Error::Config("observation must end before exploration".into()));
        }
        Ok(())
    }

    pub fn stage_at(&self, t: u64) -> Stage {
        if t < self.observe_end_s {
            Stage::Observe
        } else if t < self.explore_end_s {
            Stage::Explore
        } else {
            Stage::Train
        }
    }
}

pub fn epsilon_at(t: u64, sched: &EpsilonSchedule) -> f64 {
    match sched.stage_at(t) {
        Stage::Observe => sched.initial,
        Stage::Train => sched.final_epsilon,
        Stage::Explore => {
            let span = (sched.explore_end_s - sched.observe_end_s) as f64;
            let frac = (t - sched.observe_end_s) as f64 / span;
            sched.initial + (sched.final_epsilon - sched.initial) * frac
        }
    }
}

/// ε-greedy choice. Returns the action and a lockout request in seconds,
/// non-zero only for a randomly drawn DoNothing before the training stage.
pub fn select_action<R: Rng + ?Sized>(q: &[f64], mask: &ActionMask, epsilon: f64, rng: &mut R, stage: Stage) -> (Action, u32) {
    select_action_with(|| Ok(q.to_vec()), mask, epsilon, rng, stage).expect("infallible Q source")
}

/// As [`select_action`], evaluating the Q-values only when the greedy branch is taken.
pub fn select_action_with<R: Rng + ?Sized>(
    q: impl FnOnce() -> Result<Vec<f64>>,
    mask: &ActionMask,
    epsilon: f64,
    rng: &mut R,
    stage: Stage,
) -> Result<(Action, u32)> {
    if rng.random::<f64>() < epsilon {
        let valid: Vec<Action> = Action::ALL.iter().copied().filter(|a| mask[a.index()]).collect();
        let action = match valid.len() {
            0 => Action::DoNothing,
            n => valid[rng.random_range(0..n)],
        };
        let lockout = if action == Action::DoNothing && stage != Stage::Train {
            rng.random_range(0..=RANDOM_LOCKOUT_MAX_S)
        } else {
            0
        };
        Ok((action, lockout))
    } else {
        Ok((masked_argmax(&q()?, mask), 0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub minibatch: usize,
    /// Simulated seconds between gradient steps.
    pub train_period_s: u64,
    pub replay_capacity: usize,
    /// Transitions stored before the first gradient step.
    pub warmup: usize,
    pub loss: LossKind,
    /// Multiplier applied to rewards before they enter the targets.
    pub reward_scale: f64,
    pub init_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.99,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            minibatch: 32,
            train_period_s: 4,
            replay_capacity: 100_000,
            warmup: 5_000,
            loss: LossKind::default(),
            reward_scale: 1.0,
            init_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("discount {} outside [0, 1)", self.gamma)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2)) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.minibatch == 0 || self.train_period_s == 0 || self.replay_capacity == 0 {
            return Err(Error::Config("minibatch, train period and replay capacity must be positive".into()));
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return Err(Error::Config("reward scale must be positive".into()));
        }
        if let LossKind::Huber { delta } = self.loss {
            if !(delta.is_finite() && delta > 0.0) {
                return Err(Error::Config("Huber delta must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Online network plus optimiser state.
#[derive(Debug, Clone)]
pub struct Learner {
    pub network: QNetwork,
    pub config: TrainConfig,
    adam: Adam,
    /// Gradient steps taken so far.
    pub steps: u64,
    /// Simulated seconds of experience behind the current parameters.
    pub seconds: u64,
}

impl Learner {
    pub fn new(spec: NetworkSpec, config: TrainConfig) -> Result<Learner> {
        config.validate()?;
        let network = QNetwork::initialized(spec, config.init_seed)?;
        Ok(Self::from_network(network, config))
    }

    pub fn from_network(network: QNetwork, config: TrainConfig) -> Learner {
        let adam = Adam::new(network.params().len(), config.learning_rate, config.adam_beta1, config.adam_beta2);
        Learner { network, config, adam, steps: 0, seconds: 0 }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.network, self.steps, self.seconds)
    }
}

/// One gradient step on a uniform minibatch. Returns `None` without touching
/// anything while the buffer holds fewer than the warm-up count.
pub fn train_step<R: Rng + ?Sized>(learner: &mut Learner, buffer: &ReplayBuffer, rng: &mut R) -> Result<Option<f64>> {
    let cfg = &learner.config;
    if buffer.is_empty() || buffer.len() < cfg.warmup {
        return Ok(None);
    }
    let batch = buffer.sample(cfg.minibatch, rng);
    let net = &learner.network;
    let mut targets = Vec::with_capacity(batch.len());
    let mut inputs: Vec<Vec<u32>> = Vec::with_capacity(batch.len());
    for t in &batch {
        let next_q = net.forward_stack(&t.next_state)?;
        targets.push(q_target(t.reward * cfg.reward_scale, cfg.gamma, &next_q, &t.next_mask));
        let mut idx = Vec::new();
        t.state.active_indices(&mut idx);
        inputs.push(idx);
    }
    let samples: Vec<Sample<'_>> = batch
        .iter()
        .zip(&inputs)
        .map(|(t, idx)| Sample { input: Input::Binary(idx), action: t.action.index() })
        .collect();
    let (loss, grad) = gradients(net, &samples, &targets, cfg.loss).map_err(|e| match e {
        Error::NonFiniteLoss { detail, .. } => Error::NonFiniteLoss { step: learner.steps, detail },
        other => other,
    })?;
    learner.adam.step(learner.network.params_mut(), &grad);
    learner.steps += 1;
    if learner.network.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFiniteLoss { step: learner.steps, detail: "parameters diverged".into() });
    }
    Ok(Some(loss))
}

pub const CHECKPOINT_FORMAT: &str = "deepsignal-q-network";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing network dump: architecture, parameters and progress counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: NetworkSpec,
    pub gradient_steps: u64,
    pub simulated_seconds: u64,
    pub actions: Vec<String>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(net: &QNetwork, gradient_steps: u64, simulated_seconds: u64) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: net.spec().clone(),
            gradient_steps,
            simulated_seconds,
            actions: Action::ALL.iter().map(|a| a.name().to_string()).collect(),
            params: net.params().to_vec(),
        }
    }

    pub fn network(&self) -> Result<QNetwork> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unrecognised checkpoint {} v{}", self.format, self.version)));
        }
        if self.spec.outputs != NUM_ACTIONS {
            return Err(Error::ShapeMismatch(format!("checkpoint has {} outputs", self.spec.outputs)));
        }
        QNetwork::from_params(self.spec.clone(), self.params.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(file)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{FrameStack, StateMatrix};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use replay::Transition;

    const ALL: ActionMask = [true; NUM_ACTIONS];

    #[test]
    fn q_target_examples() {
        assert_eq!(q_target(1.0, 0.0, &[3.0; 5], &ALL), 1.0);
        let mask = [true, false, false, false, false];
        assert_eq!(q_target(0.0, 0.5, &[4.0, 9.0, 9.0, 9.0, 9.0], &mask), 2.0);
        let mask = [false, true, true, true, true];
        assert_eq!(q_target(1.0, 1.0, &[9.0, 4.0, 1.0, -2.0, 0.0], &mask), 5.0);
    }

    #[test]
    fn epsilon_examples() {
        let s = EpsilonSchedule::default();
        assert_eq!(epsilon_at(0, &s), 1.0);
        assert_eq!(epsilon_at(129_599, &s), 1.0);
        assert_eq!(epsilon_at(259_200, &s), 0.005);
        assert_eq!(epsilon_at(10_000_000, &s), 0.005);
        assert!((epsilon_at(194_400, &s) - 0.5025).abs() < 1e-15);
    }

    #[test]
    fn argmax_ties_and_mask() {
        assert_eq!(masked_argmax(&[1.0, 3.0, 3.0, 0.0, 0.0], &ALL), Action::AdvanceRing1);
        let mask = [true, false, false, true, false];
        assert_eq!(masked_argmax(&[1.0, 3.0, 3.0, 0.0, 9.0], &mask), Action::DoNothing);
    }

    #[test]
    fn greedy_pick_has_no_lockout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = [5.0, 1.0, 1.0, 1.0, 1.0];
        for stage in [Stage::Observe, Stage::Explore, Stage::Train] {
            assert_eq!(select_action(&q, &ALL, 0.0, &mut rng, stage), (Action::DoNothing, 0));
        }
    }

    #[test]
    fn random_do_nothing_locks_out_only_before_training() {
        let mask = [true, false, false, false, false];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut seen = [false; 16];
        for _ in 0..2000 {
            let (a, l) = select_action(&[0.0; 5], &mask, 1.0, &mut rng, Stage::Explore);
            assert_eq!(a, Action::DoNothing);
            seen[l as usize] = true;
        }
        assert!(seen.iter().all(|s| *s));
        for _ in 0..100 {
            assert_eq!(select_action(&[0.0; 5], &mask, 1.0, &mut rng, Stage::Train).1, 0);
        }
    }

    fn tiny_transition() -> Transition {
        let mut m = StateMatrix::zeros(24);
        for i in 0..24 {
            m.set(i, i);
        }
        let stack = FrameStack::new(m);
        Transition {
            state: stack.clone(),
            action: Action::AdvanceBoth,
            reward: 1.0,
            next_state: stack,
            next_mask: ALL,
        }
    }

    #[test]
    fn zero_learning_rate_is_a_null_update() {
        let cfg = TrainConfig { learning_rate: 0.0, warmup: 1, minibatch: 4, ..Default::default() };
        let mut learner = Learner::new(NetworkSpec::small(), cfg).unwrap();
        let before = learner.network.params().to_vec();
        let mut buf = ReplayBuffer::new(8);
        buf.push(tiny_transition());
        let loss = train_step(&mut learner, &buf, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(loss.is_some());
        assert_eq!(learner.network.params(), &before[..]);
    }

    #[test]
    fn below_warmup_is_a_no_op() {
        let mut learner = Learner::new(NetworkSpec::small(), TrainConfig::default()).unwrap();
        let before = learner.network.params().to_vec();
        let mut buf = ReplayBuffer::new(8);
        buf.push(tiny_transition());
        assert_eq!(train_step(&mut learner, &buf, &mut ChaCha8Rng::seed_from_u64(0)).unwrap(), None);
        assert_eq!(learner.network.params(), &before[..]);
        assert_eq!(learner.steps, 0);
    }

    #[test]
    fn replay_evicts_oldest() {
        let mut buf = ReplayBuffer::new(3);
        for r in 0..5 {
            buf.push(Transition { reward: r as f64, ..tiny_transition() });
        }
        let rewards: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = QNetwork::initialized(NetworkSpec::small(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        Checkpoint::new(&net, 12, 3600).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.gradient_steps, 12);
        assert_eq!(back.network().unwrap(), net);
    }
}
