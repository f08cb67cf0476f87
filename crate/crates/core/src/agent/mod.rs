//! Dueling-DQN agent: action selection, reward, TD targets, replay, the target
//! network and the training loop.
//!
//! The state at step `t` is the graph readout over utterances `t-w ..= t`;
//! the action is an emotion index and the reward is `+r` for the gold label,
//! `-r` otherwise. One conversation is one episode.

mod heads;
mod network;

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use heads::{dueling_combine, DuelingHeads, DuelingOutput, HeadsCache};
pub use network::{NetworkConfig, QCache, QNetwork};

use crate::corpus::{Conversation, Utterance};
use crate::error::{Error, Result};
use crate::labels::N_CLASSES;
use crate::ndiff::{adam_step, softmax, AdamConfig, Mode, ParamStore, Params, Real};
use crate::rng::{Rng, SeedStreams};

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy: a uniform random action with probability ε, the greedy one otherwise.
pub fn select_action<T: PartialOrd + Copy>(q: &[T], epsilon: f64, rng: &mut Rng) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}

pub fn compute_reward(action: usize, gold: usize, r: f64) -> f64 {
    if action == gold {
        r
    } else {
        -r
    }
}

/// `R` at the end of an episode, `R + γ·max Q'(s')` otherwise.
pub fn td_target(reward: f64, next_q_target: &[f64], gamma: f64, terminal: bool) -> f64 {
    if terminal {
        return reward;
    }
    let max = next_q_target.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    reward + gamma * max
}

/// Utterances `t-w ..= t` of a conversation.
pub fn window_at(conv: &Conversation, t: usize, w: usize) -> Result<Vec<&Utterance>> {
    if t < w || t >= conv.len() {
        return Err(Error::InvalidConversation {
            conversation: conv.id.clone(),
            msg: format!("no window of size {w} ends at turn {t}"),
        });
    }
    Ok(conv.utterances[t - w..=t].iter().collect())
}

fn gold_index(u: &Utterance) -> Result<usize> {
    u.label.map(|l| l.index()).ok_or_else(|| Error::InvalidConversation {
        conversation: u.conversation_id.clone(),
        msg: format!("turn {} has no label", u.turn_index),
    })
}

/// A replay record. The window is stored by reference into the training
/// corpus and re-encoded when sampled; the next window is the one ending one
/// turn later, absent for terminal transitions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub conversation: usize,
    pub turn: usize,
    pub action: usize,
    pub reward: f64,
    pub terminal: bool,
}

impl Transition {
    pub fn next_turn(&self) -> Option<usize> {
        (!self.terminal).then_some(self.turn + 1)
    }
}

/// Fixed-capacity FIFO of transitions with uniform sampling (with replacement).
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
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

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

/// Frozen copy of the online parameters used for bootstrapped next-state values.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetNetwork {
    params: Params<f32>,
    syncs: u64,
}

impl TargetNetwork {
    pub fn new(online: &Params<f32>) -> Self {
        TargetNetwork {
            params: online.clone(),
            syncs: 0,
        }
    }

    pub fn params(&self) -> &Params<f32> {
        &self.params
    }

    pub fn syncs(&self) -> u64 {
        self.syncs
    }

    pub fn sync(&mut self, online: &Params<f32>) -> Result<()> {
        self.params.check_same_keys(online)?;
        for (name, t) in online.iter() {
            self.params.set(name, t.clone())?;
        }
        self.syncs += 1;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.params.to_le_bytes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub gamma: f64,
    /// Reward magnitude `r`.
    pub reward: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    pub sync_period: u64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of all environment steps over which ε decays linearly.
    pub epsilon_decay_fraction: f64,
    /// Number of conversations played; drawn from successive shuffled passes.
    pub episodes: usize,
    /// Run one optimizer step every this many environment steps.
    pub train_every: u64,
    pub log_every: u64,
    /// Supervised epochs before RL in staged mode; the encoder and graph are frozen afterwards.
    pub pretrain_epochs: usize,
}

impl TrainerConfig {
    pub fn paper() -> Self {
        TrainerConfig {
            gamma: 0.9,
            reward: 1.0,
            lr: 0.00015,
            weight_decay: 1e-4,
            clip_norm: None,
            sync_period: 100,
            batch_size: 32,
            replay_capacity: 10_000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.5,
            episodes: 1000,
            train_every: 1,
            log_every: 100,
            pretrain_epochs: 0,
        }
    }

    /// Small-corpus settings. The larger reward widens the gap between Q values
    /// so `softmax(Q)` is confident enough not to be overridden by DK revision.
    pub fn desk() -> Self {
        TrainerConfig {
            reward: 5.0,
            lr: 3e-3,
            episodes: 500,
            train_every: 2,
            ..TrainerConfig::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.reward >= 0.0) {
            return bad("reward magnitude must be non-negative");
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return bad("learning rate must be positive and weight decay non-negative");
        }
        if self.sync_period == 0 || self.batch_size == 0 || self.replay_capacity == 0 {
            return bad("sync period, batch size and replay capacity must be positive");
        }
        if self.train_every == 0 || self.log_every == 0 {
            return bad("train_every and log_every must be positive");
        }
        for e in [self.epsilon_start, self.epsilon_end, self.epsilon_decay_fraction] {
            if !(0.0..=1.0).contains(&e) {
                return bad("epsilon settings must lie in [0, 1]");
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            ..AdamConfig::default()
        }
    }

    /// ε before the `step`-th environment step of a run with `total` steps.
    pub fn epsilon(&self, step: u64, total: u64) -> f64 {
        let decay = ((total as f64 * self.epsilon_decay_fraction).floor() as u64).max(1);
        let frac = (step as f64 / decay as f64).min(1.0);
        self.epsilon_start * (1.0 - frac) + self.epsilon_end * frac
    }
}

/// One window scored against a fixed regression target.
#[derive(Debug, Clone)]
pub struct TdSample<'a> {
    pub window: Vec<&'a Utterance>,
    pub action: usize,
    pub q_expect: f64,
}

/// Mean squared TD error over the samples and its gradient w.r.t. `p`.
/// `q_expect` is a constant, so nothing flows into the target network.
pub fn td_loss_and_grads<T: Real>(
    net: &QNetwork,
    p: &Params<T>,
    samples: &[TdSample<'_>],
    mode: Mode,
    rng: &mut Rng,
) -> Result<(f64, Params<T>)> {
    if samples.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let n = samples.len() as f64;
    let mut grads = p.zeros_like();
    let mut loss = 0.0;
    for s in samples {
        let (out, cache) = net.forward(p, &s.window, mode, rng)?;
        let diff = out.q[s.action].as_f64() - s.q_expect;
        loss += diff * diff / n;
        let mut dq = vec![T::zero(); N_CLASSES];
        dq[s.action] = T::c(2.0 * diff / n);
        net.backward(p, &cache, &dq, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Mean cross-entropy of softmax(Q) against gold labels; used by the staged mode.
pub fn ce_loss_and_grads<T: Real>(
    net: &QNetwork,
    p: &Params<T>,
    samples: &[(Vec<&Utterance>, usize)],
    mode: Mode,
    rng: &mut Rng,
) -> Result<(f64, Params<T>)> {
    if samples.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let n = samples.len() as f64;
    let mut grads = p.zeros_like();
    let mut loss = 0.0;
    for (window, gold) in samples {
        let (out, cache) = net.forward(p, window, mode, rng)?;
        let probs = softmax(&out.q);
        loss -= probs[*gold].as_f64().max(1e-300).ln() / n;
        let dq: Vec<T> = probs
            .iter()
            .enumerate()
            .map(|(i, &pr)| {
                let y = if i == *gold { T::one() } else { T::zero() };
                (pr - y) * T::c(1.0 / n)
            })
            .collect();
        net.backward(p, &cache, &dq, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Greedy Q values (no dropout) for one window.
pub fn q_values<T: Real>(net: &QNetwork, p: &Params<T>, window: &[&Utterance]) -> Result<Vec<T>> {
    // eval mode never draws from the generator
    let mut rng = <Rng as rand::SeedableRng>::seed_from_u64(0);
    Ok(net.forward(p, window, Mode::Eval, &mut rng)?.0.q)
}

fn check_loss(loss: f64, grads: &Params<f32>, what: &str) -> Result<()> {
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite(format!(
            "{what} loss {loss}, gradient norm {}",
            grads.global_norm()
        )));
    }
    Ok(())
}

/// One DQN update on `batch`. Returns the batch loss.
pub fn train_step(
    net: &QNetwork,
    store: &mut ParamStore<f32>,
    target: &TargetNetwork,
    batch: &[Transition],
    corpus: &[Conversation],
    cfg: &TrainerConfig,
    dropout_rng: &mut Rng,
) -> Result<f64> {
    let w = net.window();
    let mut samples = Vec::with_capacity(batch.len());
    for tr in batch {
        let conv = corpus
            .get(tr.conversation)
            .ok_or_else(|| Error::Config(format!("transition refers to conversation {}", tr.conversation)))?;
        let q_expect = match tr.next_turn() {
            None => tr.reward,
            Some(next) => {
                let next_q = q_values(net, target.params(), &window_at(conv, next, w)?)?;
                let next_q: Vec<f64> = next_q.iter().map(|v| v.as_f64()).collect();
                td_target(tr.reward, &next_q, cfg.gamma, false)
            }
        };
        samples.push(TdSample {
            window: window_at(conv, tr.turn, w)?,
            action: tr.action,
            q_expect,
        });
    }
    let (loss, grads) = td_loss_and_grads(net, &store.params, &samples, Mode::Train, dropout_rng)?;
    check_loss(loss, &grads, "TD")?;
    adam_step(store, &grads, &cfg.adam())?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub episode: u64,
    pub epsilon: f64,
    /// Mean training loss since the previous row; `None` before the first update.
    pub loss: Option<f64>,
    pub running_accuracy: f64,
    pub target_syncs: u64,
}

pub const LOG_HEADER: &str = "step,episode,epsilon,loss,running_accuracy,target_syncs";

pub fn write_log<W: Write>(mut out: W, rows: &[LogRow]) -> std::io::Result<()> {
    writeln!(out, "{LOG_HEADER}")?;
    for r in rows {
        let loss = r.loss.map(|l| format!("{l:.8}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{:.6},{},{:.6},{}",
            r.step, r.episode, r.epsilon, loss, r.running_accuracy, r.target_syncs
        )?;
    }
    Ok(())
}

pub fn save_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    write_log(&mut out, rows).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub params: Params<f32>,
    pub log: Vec<LogRow>,
    pub steps: u64,
    pub target_syncs: u64,
    pub pretrain_losses: Vec<f64>,
}

const RUNNING_WINDOW: usize = 1000;

struct Running {
    hits: VecDeque<bool>,
    correct: usize,
}

impl Running {
    fn push(&mut self, hit: bool) {
        if self.hits.len() == RUNNING_WINDOW && self.hits.pop_front() == Some(true) {
            self.correct -= 1;
        }
        self.hits.push_back(hit);
        self.correct += hit as usize;
    }

    fn accuracy(&self) -> f64 {
        if self.hits.is_empty() {
            0.0
        } else {
            self.correct as f64 / self.hits.len() as f64
        }
    }
}

/// Indices of conversations that yield at least one labeled window.
pub fn usable_conversations(corpus: &[Conversation], w: usize) -> Vec<usize> {
    corpus
        .iter()
        .enumerate()
        .filter(|(_, c)| c.len() > w && c.is_labeled())
        .map(|(i, _)| i)
        .collect()
}

/// Episode order: successive seeded shuffles of the usable conversations.
pub fn episode_schedule(usable: &[usize], episodes: usize, rng: &mut Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(episodes);
    if usable.is_empty() {
        return out;
    }
    while out.len() < episodes {
        let mut pass = usable.to_vec();
        pass.shuffle(rng);
        out.extend(pass.into_iter().take(episodes - out.len()));
    }
    out
}

fn pretrain(
    net: &QNetwork,
    store: &mut ParamStore<f32>,
    corpus: &[Conversation],
    usable: &[usize],
    cfg: &TrainerConfig,
    seeds: &SeedStreams,
) -> Result<Vec<f64>> {
    let w = net.window();
    let mut windows = Vec::new();
    for &c in usable {
        for t in w..corpus[c].len() {
            windows.push((c, t));
        }
    }
    let mut order_rng = seeds.stream("pretrain");
    let mut dropout_rng = seeds.stream("pretrain-dropout");
    let mut losses = Vec::with_capacity(cfg.pretrain_epochs);
    for _ in 0..cfg.pretrain_epochs {
        windows.shuffle(&mut order_rng);
        let mut total = 0.0;
        for chunk in windows.chunks(cfg.batch_size) {
            let samples = chunk
                .iter()
                .map(|&(c, t)| Ok((window_at(&corpus[c], t, w)?, gold_index(&corpus[c].utterances[t])?)))
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = ce_loss_and_grads(net, &store.params, &samples, Mode::Train, &mut dropout_rng)?;
            check_loss(loss, &grads, "pretraining")?;
            adam_step(store, &grads, &cfg.adam())?;
            total += loss * chunk.len() as f64;
        }
        losses.push(total / windows.len() as f64);
    }
    store.set_frozen(&["encoder.", "graph."]);
    Ok(losses)
}

/// Plays `cfg.episodes` conversations, learning online from replay.
///
/// Streams used: `init`, `episodes`, `epsilon`, `replay`, `dropout`.
pub fn run_training(
    net: &QNetwork,
    corpus: &[Conversation],
    cfg: &TrainerConfig,
    seeds: &SeedStreams,
) -> Result<TrainingRun> {
    cfg.validate()?;
    let w = net.window();
    let init = net.init::<f32>(&mut seeds.stream("init"))?;
    if cfg.episodes == 0 {
        return Ok(TrainingRun {
            params: init,
            log: Vec::new(),
            steps: 0,
            target_syncs: 0,
            pretrain_losses: Vec::new(),
        });
    }
    let usable = usable_conversations(corpus, w);
    if usable.is_empty() {
        return Err(Error::NoUsableWindows { needed: w + 1 });
    }
    let mut store = ParamStore::new(init);
    let pretrain_losses = if cfg.pretrain_epochs > 0 {
        pretrain(net, &mut store, corpus, &usable, cfg, seeds)?
    } else {
        Vec::new()
    };

    let schedule = episode_schedule(&usable, cfg.episodes, &mut seeds.stream("episodes"));
    let total: u64 = schedule.iter().map(|&c| (corpus[c].len() - w) as u64).sum();
    let mut eps_rng = seeds.stream("epsilon");
    let mut replay_rng = seeds.stream("replay");
    let mut dropout_rng = seeds.stream("dropout");

    let mut target = TargetNetwork::new(&store.params);
    let mut replay = ReplayBuffer::new(cfg.replay_capacity)?;
    let mut running = Running {
        hits: VecDeque::with_capacity(RUNNING_WINDOW),
        correct: 0,
    };
    let mut log = Vec::new();
    let mut pending = (0.0, 0u64);
    let mut step = 0u64;
    let mut epsilon = cfg.epsilon_start;

    for (episode, &c) in schedule.iter().enumerate() {
        let conv = &corpus[c];
        for t in w..conv.len() {
            epsilon = cfg.epsilon(step, total);
            let window = window_at(conv, t, w)?;
            let q = q_values(net, &store.params, &window)?;
            let action = select_action(&q, epsilon, &mut eps_rng);
            let gold = gold_index(&conv.utterances[t])?;
            running.push(argmax(&q) == gold);
            replay.push(Transition {
                conversation: c,
                turn: t,
                action,
                reward: compute_reward(action, gold, cfg.reward),
                terminal: t + 1 == conv.len(),
            });
            step += 1;

            if replay.len() >= cfg.batch_size && step.is_multiple_of(cfg.train_every) {
                let batch = replay.sample(cfg.batch_size, &mut replay_rng);
                let loss = train_step(net, &mut store, &target, &batch, corpus, cfg, &mut dropout_rng)?;
                pending.0 += loss;
                pending.1 += 1;
            }
            if step.is_multiple_of(cfg.sync_period) {
                target.sync(&store.params)?;
            }
            if step.is_multiple_of(cfg.log_every) || step == total {
                log.push(LogRow {
                    step,
                    episode: episode as u64 + 1,
                    epsilon,
                    loss: (pending.1 > 0).then(|| pending.0 / pending.1 as f64),
                    running_accuracy: running.accuracy(),
                    target_syncs: target.syncs(),
                });
                pending = (0.0, 0);
            }
        }
    }
    log::info!(
        "trained {step} steps over {} episodes, final epsilon {epsilon:.3}, {} target syncs",
        schedule.len(),
        target.syncs()
    );
    Ok(TrainingRun {
        params: store.params,
        log,
        steps: step,
        target_syncs: target.syncs(),
        pretrain_losses,
    })
}
