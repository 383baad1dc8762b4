//! Fixed-capacity ring buffer of transitions with uniform sampling.

use rand::Rng as _;

use crate::autodiff::Tensor;
use crate::rng::Rng;
use crate::{Error, Result};

/// `(s, a, r, s′, done)`. `action` holds one entry per action dimension; the
/// discrete agent stores its action index as a single float. `done` marks a
/// true terminal, after which the target does not bootstrap.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Column-stacked sample.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_states: Tensor,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_transitions(ts: &[Transition]) -> Result<Self> {
        let states: Vec<&[f64]> = ts.iter().map(|t| t.state.as_slice()).collect();
        let actions: Vec<&[f64]> = ts.iter().map(|t| t.action.as_slice()).collect();
        let next: Vec<&[f64]> = ts.iter().map(|t| t.next_state.as_slice()).collect();
        Ok(Self {
            states: Tensor::from_rows(&states)?,
            actions: Tensor::from_rows(&actions)?,
            rewards: ts.iter().map(|t| t.reward).collect(),
            next_states: Tensor::from_rows(&next)?,
            dones: ts.iter().map(|t| t.done).collect(),
        })
    }

    /// Discrete actions as indices.
    pub fn action_indices(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.actions.get(i, 0) as usize).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    dones: Vec<bool>,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            obs_dim,
            act_dim,
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_states: Vec::new(),
            dones: Vec::new(),
            inserted: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total insertions, including overwritten ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.state.len() != self.obs_dim || t.next_state.len() != self.obs_dim || t.action.len() != self.act_dim {
            return Err(Error::Shape(format!(
                "transition widths ({}, {}, {}) for buffer ({}, {})",
                t.state.len(),
                t.action.len(),
                t.next_state.len(),
                self.obs_dim,
                self.act_dim
            )));
        }
        let finite = t.state.iter().chain(&t.action).chain(&t.next_state).all(|v| v.is_finite());
        if !finite || !t.reward.is_finite() {
            return Err(Error::NonFinite("transition".into()));
        }
        if self.len() < self.capacity {
            self.states.extend_from_slice(&t.state);
            self.actions.extend_from_slice(&t.action);
            self.rewards.push(t.reward);
            self.next_states.extend_from_slice(&t.next_state);
            self.dones.push(t.done);
        } else {
            let i = (self.inserted % self.capacity as u64) as usize;
            let (o, a) = (self.obs_dim, self.act_dim);
            self.states[i * o..(i + 1) * o].copy_from_slice(&t.state);
            self.actions[i * a..(i + 1) * a].copy_from_slice(&t.action);
            self.rewards[i] = t.reward;
            self.next_states[i * o..(i + 1) * o].copy_from_slice(&t.next_state);
            self.dones[i] = t.done;
        }
        self.inserted += 1;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Transition {
        let (o, a) = (self.obs_dim, self.act_dim);
        Transition {
            state: self.states[i * o..(i + 1) * o].to_vec(),
            action: self.actions[i * a..(i + 1) * a].to_vec(),
            reward: self.rewards[i],
            next_state: self.next_states[i * o..(i + 1) * o].to_vec(),
            done: self.dones[i],
        }
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Batch> {
        if self.len() < n || n == 0 {
            return Err(Error::InsufficientBuffer { size: self.len(), batch: n });
        }
        let (o, a) = (self.obs_dim, self.act_dim);
        let mut batch = Batch {
            states: Tensor::zeros(n, o),
            actions: Tensor::zeros(n, a),
            rewards: Vec::with_capacity(n),
            next_states: Tensor::zeros(n, o),
            dones: Vec::with_capacity(n),
        };
        let size = self.len();
        for r in 0..n {
            let i = rng.gen_range(0..size);
            batch.states.data_mut()[r * o..(r + 1) * o].copy_from_slice(&self.states[i * o..(i + 1) * o]);
            batch.actions.data_mut()[r * a..(r + 1) * a].copy_from_slice(&self.actions[i * a..(i + 1) * a]);
            batch.next_states.data_mut()[r * o..(r + 1) * o]
                .copy_from_slice(&self.next_states[i * o..(i + 1) * o]);
            batch.rewards.push(self.rewards[i]);
            batch.dones.push(self.dones[i]);
        }
        Ok(batch)
    }
}
