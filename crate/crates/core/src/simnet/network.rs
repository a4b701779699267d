// SPDX-License-Identifier: Apache-2.0

//! Message delay models.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::{Round, Time};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NetworkModel {
    /// Every delay is drawn from `[min_delay, delta]`.
    Synchronous {
        delta: Time,
        #[serde(default = "one")]
        min_delay: Time,
    },
    /// Before `gst` a message may take until `gst + delta`; after it, at most `delta`.
    PartialSynchrony { gst: Time, delta: Time },
    /// Delays up to `cap`. The adversarial variant picks a different set of
    /// slow senders every round.
    Asynchronous {
        cap: Time,
        #[serde(default)]
        adversarial: bool,
    },
}

fn one() -> Time {
    1
}

impl NetworkModel {
    /// The bound the protocol may rely on, where one exists.
    pub fn delta(&self) -> Time {
        match *self {
            NetworkModel::Synchronous { delta, .. } | NetworkModel::PartialSynchrony { delta, .. } => delta,
            NetworkModel::Asynchronous { cap, .. } => cap,
        }
    }

    /// Delivery time for a message sent at `now`. `round` is the round of a
    /// block payload and `slow` marks senders the adversary delays.
    pub fn deliver_at(&self, rng: &mut ChaCha8Rng, now: Time, round: Option<Round>, slow: bool) -> Time {
        match *self {
            NetworkModel::Synchronous { delta, min_delay } => now + rng.gen_range(min_delay.min(delta)..=delta),
            NetworkModel::PartialSynchrony { gst, delta } => {
                if now >= gst {
                    now + rng.gen_range(1..=delta)
                } else {
                    rng.gen_range(now + 1..=gst + delta)
                }
            }
            NetworkModel::Asynchronous { cap, adversarial } => {
                if adversarial && round.is_some() && slow {
                    now + rng.gen_range(cap / 2..=cap).max(1)
                } else if adversarial {
                    now + rng.gen_range(1..=(cap / 4).max(1))
                } else {
                    now + rng.gen_range(1..=cap)
                }
            }
        }
    }

    /// Whether a logged `(sent, delivered)` pair respects the model.
    pub fn admits(&self, sent: Time, delivered: Time) -> bool {
        if delivered < sent {
            return false;
        }
        match *self {
            NetworkModel::Synchronous { delta, .. } => delivered - sent <= delta,
            NetworkModel::PartialSynchrony { gst, delta } => delivered <= sent.max(gst) + delta,
            NetworkModel::Asynchronous { cap, .. } => delivered - sent <= cap,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn samples_respect_bounds() {
        let models = [
            NetworkModel::Synchronous { delta: 50, min_delay: 1 },
            NetworkModel::Synchronous { delta: 50, min_delay: 50 },
            NetworkModel::PartialSynchrony { gst: 1_000, delta: 50 },
            NetworkModel::Asynchronous { cap: 400, adversarial: false },
            NetworkModel::Asynchronous { cap: 400, adversarial: true },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for m in models {
            for i in 0..2_000u64 {
                let now = i * 3;
                let at = m.deliver_at(&mut rng, now, Some(i % 7), i % 3 == 0);
                assert!(at > now && m.admits(now, at), "{m:?} {now} {at}");
            }
        }
    }

    #[test]
    fn fixed_delay_when_min_equals_delta() {
        let m = NetworkModel::Synchronous { delta: 50, min_delay: 50 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..100).all(|t| m.deliver_at(&mut rng, t, None, false) == t + 50));
    }

    #[test]
    fn pre_gst_messages_may_exceed_delta() {
        let m = NetworkModel::PartialSynchrony { gst: 10_000, delta: 50 };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let late = (0..100).filter(|_| m.deliver_at(&mut rng, 0, None, false) > 50).count();
        assert!(late > 90);
        assert!(!m.admits(9_000, 10_051));
        assert!(m.admits(9_000, 10_050));
        assert!(!m.admits(10_000, 10_051));
    }
}
