//! Stateless Q-learning over criterion combinations and display-size moves.
//!
//! With no state, action values reduce to one estimate per action, updated
//! towards the immediate reward. An action is one of the 7 non-empty on/off
//! settings of (representativity, diversity, ambiguity) crossed with a display
//! size move of -1, 0 or +1.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selector::CriterionWeights;

pub const NUM_ACTIONS: usize = 21;

/// Criterion combinations in ablation-table row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Combo {
    Rep,
    Amb,
    Div,
    AmbRep,
    DivAmb,
    DivRep,
    All,
}

impl Combo {
    pub const ALL: [Combo; 7] = [
        Combo::Rep,
        Combo::Amb,
        Combo::Div,
        Combo::AmbRep,
        Combo::DivAmb,
        Combo::DivRep,
        Combo::All,
    ];

    /// (use_eta, use_alpha, use_beta)
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            Combo::Rep => (true, false, false),
            Combo::Amb => (false, false, true),
            Combo::Div => (false, true, false),
            Combo::AmbRep => (true, false, true),
            Combo::DivAmb => (false, true, true),
            Combo::DivRep => (true, true, false),
            Combo::All => (true, true, true),
        }
    }

    /// Active criteria get weight 1.
    pub fn weights(self) -> CriterionWeights {
        let (e, a, b) = self.flags();
        CriterionWeights {
            eta: f64::from(u8::from(e)),
            alpha: f64::from(u8::from(a)),
            beta: f64::from(u8::from(b)),
        }
    }

    pub fn index(self) -> usize {
        Combo::ALL.iter().position(|&c| c == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Combo::Rep => "rep",
            Combo::Amb => "amb",
            Combo::Div => "div",
            Combo::AmbRep => "amb+rep",
            Combo::DivAmb => "div+amb",
            Combo::DivRep => "div+rep",
            Combo::All => "all",
        }
    }
}

impl fmt::Display for Combo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Combo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Combo::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::param(format!("unknown criterion combination {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionConfig {
    pub index: usize,
    pub combo: Combo,
    /// -1 shrink, 0 freeze, +1 grow
    pub size_move: i8,
}

impl ActionConfig {
    pub fn weights(&self) -> CriterionWeights {
        self.combo.weights()
    }
}

/// `index = 3 * combo + (move + 1)`.
pub fn decode_action(index: usize) -> Result<ActionConfig> {
    if index >= NUM_ACTIONS {
        return Err(Error::param(format!(
            "action index {index} outside 0..{NUM_ACTIONS}"
        )));
    }
    Ok(ActionConfig {
        index,
        combo: Combo::ALL[index / 3],
        size_move: (index % 3) as i8 - 1,
    })
}

pub fn encode_action(combo: Combo, size_move: i8) -> usize {
    3 * combo.index() + (size_move.clamp(-1, 1) + 1) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LadderConfig {
    pub min: usize,
    pub max: usize,
    pub step: usize,
}

impl Default for LadderConfig {
    fn default() -> Self {
        Self {
            min: 4,
            max: 64,
            step: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeLadder {
    pub current: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub step: usize,
}

impl SizeLadder {
    pub fn new(initial: usize, cfg: &LadderConfig) -> Result<Self> {
        if cfg.step == 0 || cfg.min == 0 || cfg.min > cfg.max {
            return Err(Error::param(format!(
                "ladder needs 0 < min <= max and step > 0, got {cfg:?}"
            )));
        }
        if !(cfg.min..=cfg.max).contains(&initial) {
            return Err(Error::param(format!(
                "initial display size {initial} outside ladder [{}, {}]",
                cfg.min, cfg.max
            )));
        }
        Ok(Self {
            current: initial,
            min_size: cfg.min,
            max_size: cfg.max,
            step: cfg.step,
        })
    }

    pub fn apply(self, size_move: i8) -> Self {
        let current = match size_move.signum() {
            1 => self.current.saturating_add(self.step),
            -1 => self.current.saturating_sub(self.step),
            _ => self.current,
        }
        .clamp(self.min_size, self.max_size);
        Self { current, ..self }
    }
}

pub fn apply_size_move(ladder: SizeLadder, size_move: i8) -> SizeLadder {
    ladder.apply(size_move)
}

/// Adversarial error term plus `omega` times the relative display size.
pub fn compute_reward(
    error_rate: f64,
    display_size: usize,
    ladder: &SizeLadder,
    omega: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&error_rate) {
        return Err(Error::param(format!(
            "error rate {error_rate} outside [0, 1]"
        )));
    }
    if display_size > ladder.max_size {
        return Err(Error::param(format!(
            "display size {display_size} above ladder maximum {}",
            ladder.max_size
        )));
    }
    Ok(error_rate + omega * display_size as f64 / ladder.max_size as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    /// weight of the efficiency reward
    pub omega: f64,
    pub epsilon0: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub learning_rate: f64,
    /// Kept for completeness; the stateless update has no successor term.
    pub discount: f64,
    pub ladder: LadderConfig,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            omega: 0.5,
            epsilon0: 1.0,
            epsilon_decay: 0.9,
            epsilon_min: 0.1,
            learning_rate: 0.1,
            discount: 0.0,
            ladder: LadderConfig::default(),
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.omega >= 0.0 && self.omega.is_finite())
            || !unit(self.epsilon0)
            || !unit(self.epsilon_decay)
            || !unit(self.epsilon_min)
            || !(self.learning_rate > 0.0 && self.learning_rate <= 1.0)
            || !unit(self.discount)
        {
            return Err(Error::param(format!("invalid RL settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub q: Vec<f64>,
    pub counts: Vec<u64>,
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub learning_rate: f64,
}

impl QTable {
    pub fn new(cfg: &RlConfig) -> Self {
        Self {
            q: vec![0.0; NUM_ACTIONS],
            counts: vec![0; NUM_ACTIONS],
            epsilon: cfg.epsilon0,
            epsilon_decay: cfg.epsilon_decay,
            epsilon_min: cfg.epsilon_min,
            learning_rate: cfg.learning_rate,
        }
    }

    pub fn steps(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// argmax over `allowed`, ties to the lowest index.
    pub fn greedy_among(&self, allowed: &[usize]) -> usize {
        let mut best = allowed[0];
        for &a in &allowed[1..] {
            if self.q[a] > self.q[best] {
                best = a;
            }
        }
        best
    }

    pub fn greedy(&self) -> usize {
        let all: Vec<usize> = (0..NUM_ACTIONS).collect();
        self.greedy_among(&all)
    }

    /// Epsilon-greedy over `allowed` (ascending indices, non-empty).
    pub fn choose_among<R: Rng + ?Sized>(&self, allowed: &[usize], rng: &mut R) -> usize {
        if rng.random::<f64>() < self.epsilon {
            allowed[rng.random_range(0..allowed.len())]
        } else {
            self.greedy_among(allowed)
        }
    }

    pub fn choose<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let all: Vec<usize> = (0..NUM_ACTIONS).collect();
        self.choose_among(&all, rng)
    }

    /// `Q(a) += lr * (r - Q(a))`, then one epsilon decay step.
    pub fn update(&mut self, index: usize, reward: f64) -> Result<()> {
        if index >= NUM_ACTIONS {
            return Err(Error::param(format!("action index {index} out of range")));
        }
        if !reward.is_finite() {
            return Err(Error::param("reward must be finite"));
        }
        self.q[index] += self.learning_rate * (reward - self.q[index]);
        self.counts[index] += 1;
        self.epsilon = (self.epsilon * self.epsilon_decay).max(self.epsilon_min);
        Ok(())
    }
}

pub fn choose_action<R: Rng + ?Sized>(qtable: &QTable, rng: &mut R) -> usize {
    qtable.choose(rng)
}

pub fn update_q(mut qtable: QTable, index: usize, reward: f64) -> Result<QTable> {
    qtable.update(index, reward)?;
    Ok(qtable)
}
