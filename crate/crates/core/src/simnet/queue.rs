// SPDX-License-Identifier: Apache-2.0

//! Event queue and timer table.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::hash::Hash;

use crate::types::Time;

/// Processing class at equal times: deliveries run before timers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Class {
    Deliver = 0,
    Timer = 1,
}

/// Min-queue ordered by `(time, class, sequence number)`. The sequence
/// number is assigned at scheduling, so equal keys pop in insertion order.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<(Time, Class, u64)>>,
    items: HashMap<u64, E>,
    seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self { heap: BinaryHeap::new(), items: HashMap::new(), seq: 0 }
    }
}

impl<E> EventQueue<E> {
    pub fn push(&mut self, at: Time, class: Class, event: E) -> u64 {
        self.seq += 1;
        self.heap.push(Reverse((at, class, self.seq)));
        self.items.insert(self.seq, event);
        self.seq
    }

    pub fn pop(&mut self) -> Option<(Time, u64, E)> {
        let Reverse((at, _, seq)) = self.heap.pop()?;
        let e = self.items.remove(&seq).expect("queued");
        Some((at, seq, e))
    }

    pub fn peek_time(&self) -> Option<Time> {
        self.heap.peek().map(|Reverse((t, _, _))| *t)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn clear(&mut self) {
        self.heap.clear();
        self.items.clear();
    }
}

/// Timers keyed by id. Setting an id again supersedes the earlier timer;
/// cancelling forgets it. A fired event is live only if its token matches.
#[derive(Debug)]
pub struct Timers<K> {
    live: HashMap<K, u64>,
}

impl<K> Default for Timers<K> {
    fn default() -> Self {
        Self { live: HashMap::new() }
    }
}

impl<K: Eq + Hash> Timers<K> {
    pub fn arm(&mut self, key: K, token: u64) {
        self.live.insert(key, token);
    }

    pub fn cancel(&mut self, key: &K) {
        self.live.remove(key);
    }

    /// Consumes the timer if `token` is its current arming.
    pub fn fire(&mut self, key: &K, token: u64) -> bool {
        if self.live.get(key) == Some(&token) {
            self.live.remove(key);
            true
        } else {
            false
        }
    }

    pub fn clear(&mut self) {
        self.live.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deliveries_before_timers_then_fifo() {
        let mut q = EventQueue::default();
        q.push(5, Class::Timer, "t1");
        q.push(5, Class::Deliver, "d1");
        q.push(3, Class::Timer, "t0");
        q.push(5, Class::Deliver, "d2");
        let order: Vec<_> = std::iter::from_fn(|| q.pop().map(|(_, _, e)| e)).collect();
        assert_eq!(order, ["t0", "d1", "d2", "t1"]);
    }

    #[test]
    fn rearming_supersedes_and_cancel_suppresses() {
        let mut q = EventQueue::default();
        let mut timers = Timers::default();
        let a = q.push(10, Class::Timer, "leader");
        timers.arm("leader", a);
        let b = q.push(20, Class::Timer, "leader");
        timers.arm("leader", b);
        let c = q.push(15, Class::Timer, "live");
        timers.arm("live", c);
        timers.cancel(&"live");
        let mut fired = Vec::new();
        while let Some((t, tok, key)) = q.pop() {
            if timers.fire(&key, tok) {
                fired.push((t, key));
            }
        }
        assert_eq!(fired, [(20, "leader")]);
    }
}
