use mc_autodiff::Tensor;
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    /// True termination only; horizon timeouts are stored as `false`.
    pub done: bool,
}

/// A sampled minibatch in tensor form. `rewards` and `dones` are `(n, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Tensor,
    pub next_states: Tensor,
    pub dones: Tensor,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Result<Self> {
        if ts.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let rows = |f: &dyn Fn(&Transition) -> &[f64]| -> Result<Tensor> {
            let d = f(ts[0]).len();
            let data: Vec<f64> = ts.iter().flat_map(|t| f(t).iter().copied()).collect();
            Ok(Tensor::matrix(ts.len(), d, data)?)
        };
        Ok(Self {
            states: rows(&|t| &t.s)?,
            actions: rows(&|t| &t.a)?,
            next_states: rows(&|t| &t.s_next)?,
            rewards: Tensor::matrix(ts.len(), 1, ts.iter().map(|t| t.r).collect())?,
            dones: Tensor::matrix(
                ts.len(),
                1,
                ts.iter().map(|t| if t.done { 1.0 } else { 0.0 }).collect(),
            )?,
        })
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows in the order given by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let pick = |t: &Tensor| -> Result<Tensor> {
            let rows: Vec<&[f64]> = perm.iter().map(|&i| t.row(i)).collect();
            Ok(Tensor::from_rows(&rows)?)
        };
        Ok(Self {
            states: pick(&self.states)?,
            actions: pick(&self.actions)?,
            rewards: pick(&self.rewards)?,
            next_states: pick(&self.next_states)?,
            dones: pick(&self.dones)?,
        })
    }
}

/// Fixed-capacity FIFO store with uniform, with-replacement sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    storage: Vec<Transition>,
    /// Slot the next push overwrites once full.
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            state_dim,
            action_dim,
            storage: Vec::new(),
            head: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        for (context, expected, actual) in [
            ("transition state", self.state_dim, t.s.len()),
            ("transition next state", self.state_dim, t.s_next.len()),
            ("transition action", self.action_dim, t.a.len()),
        ] {
            if expected != actual {
                return Err(Error::Dim {
                    context,
                    expected,
                    actual,
                });
            }
        }
        if !t.r.is_finite() {
            return Err(Error::NonFiniteReward(t.r));
        }
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    /// Contents from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.storage.split_at(self.head);
        older.iter().chain(newer)
    }

    pub fn sample_indices(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if self.storage.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..n).map(|_| rng.random_range(0..self.storage.len())).collect())
    }

    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        let ts: Vec<&Transition> = indices.iter().map(|&i| &self.storage[i]).collect();
        Batch::from_transitions(&ts)
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Result<Batch> {
        let idx = self.sample_indices(n, rng)?;
        self.gather(&idx)
    }

    pub fn sample_transitions(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<&Transition>> {
        let idx = self.sample_indices(n, rng)?;
        Ok(idx.iter().map(|&i| &self.storage[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(i: usize) -> Transition {
        Transition {
            s: vec![i as f64],
            a: vec![-(i as f64)],
            r: i as f64 * 0.5,
            s_next: vec![i as f64 + 1.0],
            done: i % 2 == 0,
        }
    }

    #[test]
    fn push_to_empty_gives_size_one() {
        let mut b = ReplayBuffer::new(4, 1, 1);
        b.push(tr(0)).unwrap();
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn ring_keeps_newest() {
        let mut b = ReplayBuffer::new(2, 1, 1);
        for i in 1..=3 {
            b.push(tr(i)).unwrap();
        }
        let items: Vec<_> = b.iter().cloned().collect();
        assert_eq!(items, vec![tr(2), tr(3)]);
    }

    #[test]
    fn single_item_sampled_repeatedly() {
        let mut b = ReplayBuffer::new(8, 1, 1);
        b.push(tr(7)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let got = b.sample_transitions(4, &mut rng).unwrap();
        assert_eq!(got.len(), 4);
        assert!(got.iter().all(|t| **t == tr(7)));
        let batch = b.sample(4, &mut rng).unwrap();
        assert_eq!(batch.rewards.data(), &[3.5; 4]);
        assert_eq!(batch.dones.data(), &[0.0; 4]);
    }

    #[test]
    fn empty_buffer_errors() {
        let b = ReplayBuffer::new(8, 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(b.sample(1, &mut rng), Err(Error::EmptyBuffer)));
    }

    #[test]
    fn shape_and_reward_checks() {
        let mut b = ReplayBuffer::new(8, 2, 1);
        assert!(matches!(b.push(tr(0)), Err(Error::Dim { .. })));
        let mut b = ReplayBuffer::new(8, 1, 1);
        let mut t = tr(0);
        t.r = f64::NAN;
        assert!(matches!(b.push(t), Err(Error::NonFiniteReward(_))));
    }
}
