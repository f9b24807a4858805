use std::sync::Arc;

use rand::Rng;

use super::StateEncoding;
use crate::error::{Error, Result};

/// One `(s, a, r, s')` tuple; `next_state == None` marks a terminal step.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Arc<StateEncoding>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Option<Arc<StateEncoding>>,
}

impl Transition {
    pub fn terminal(&self) -> bool {
        self.next_state.is_none()
    }
}

/// Fixed-capacity ring; once full, each push replaces the oldest entry.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        Ok(ReplayBuffer { capacity, items: Vec::with_capacity(capacity.min(1 << 16)), next: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform batch without replacement.
    pub fn sample<R: Rng>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if batch == 0 || self.items.len() < batch {
            return Err(Error::contract(format!(
                "replay buffer holds {} transitions, batch needs {batch}",
                self.items.len()
            )));
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), batch).into_iter().map(|i| &self.items[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(reward: f64) -> Transition {
        let s = Arc::new(StateEncoding { res: 1, views: vec![0.0; 20] });
        Transition { state: s, action: 0, reward, next_state: None }
    }

    #[test]
    fn ring_drops_oldest() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for i in 0..5 {
            b.push(t(i as f64));
        }
        assert_eq!(b.len(), 3);
        let mut r: Vec<f64> = b.iter().map(|t| t.reward).collect();
        r.sort_by(f64::total_cmp);
        assert_eq!(r, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_needs_enough_items() {
        let mut b = ReplayBuffer::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        b.push(t(0.0));
        assert!(b.sample(2, &mut rng).is_err());
        b.push(t(1.0));
        let s = b.sample(2, &mut rng).unwrap();
        assert_ne!(s[0].reward, s[1].reward);
    }
}
