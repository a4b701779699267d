// SPDX-License-Identifier: Apache-2.0

//! The decision engine.
//!
//! Every round is the propose round of some wave: with wave length `w`, the
//! slots of round `r` belong to the decider with wave offset `r mod w`, and
//! their votes are the blocks of round `r + w - 1`. A slot is committed
//! directly when a strong quorum of decision blocks votes for its leader
//! block, skipped directly when a strong quorum does not, and otherwise
//! resolved through the first later slot that is not skipped (the anchor).

pub mod coin;
pub mod rules;
pub mod stake;
pub mod wave;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use coin::{Coin, CoinOutput, InsufficientShares};
pub use rules::{
    extend_commit_sequence, get_leader_blocks, leader_of, linearize_sub_dags, slot_leader, tally_votes, try_decide,
    try_direct_decide, try_indirect_decide, CoinUnavailable, CommitOutput, Linearizer, MissingDecisions, Rule, Tally,
};
pub use stake::{validate_stake_split, StakeViolation};
pub use wave::{MisalignedRound, WaveCoords, WavePosition};

use crate::block::{BlockRef, Digest};
use crate::dag::Dag;
use crate::types::{Committee, Round};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LeaderSlot {
    pub round: Round,
    pub rank: u64,
}

impl LeaderSlot {
    pub fn new(round: Round, rank: u64) -> Self {
        Self { round, rank }
    }

    pub fn next(self, leaders_per_round: u64) -> Self {
        if self.rank + 1 < leaders_per_round {
            Self { round: self.round, rank: self.rank + 1 }
        } else {
            Self { round: self.round + 1, rank: 0 }
        }
    }
}

impl fmt::Debug for LeaderSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}.{}", self.round, self.rank)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Verdict {
    Commit(BlockRef),
    Skip,
    Undecided,
}

impl Verdict {
    pub fn is_final(&self) -> bool {
        !matches!(self, Verdict::Undecided)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotDecision {
    pub slot: LeaderSlot,
    pub verdict: Verdict,
}

impl SlotDecision {
    /// `<round> <rank> <commit|skip|undecided> [<author> <digest>]`.
    pub fn trace_line(&self) -> String {
        let LeaderSlot { round, rank } = self.slot;
        match self.verdict {
            Verdict::Commit(b) => format!("{round} {rank} commit {} {}", b.author, b.digest),
            Verdict::Skip => format!("{round} {rank} skip"),
            Verdict::Undecided => format!("{round} {rank} undecided"),
        }
    }
}

/// Everything the decision rules need besides the DAG.
#[derive(Clone, Debug)]
pub struct Schedule {
    pub committee: Committee,
    pub leaders_per_round: u64,
    pub coin: Coin,
}

impl Schedule {
    pub fn new(committee: Committee, leaders_per_round: u64, coin: Coin) -> Self {
        assert!(
            (1..=committee.size() as u64).contains(&leaders_per_round),
            "leaders per round must be in 1..=n"
        );
        Self { committee, leaders_per_round, coin }
    }
}

/// A slot whose verdict became final.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecidedSlot {
    pub slot: LeaderSlot,
    pub verdict: Verdict,
    pub rule: Rule,
}

#[derive(Clone, Debug, Default)]
pub struct CommitDelta {
    /// Slots that became final during this update, in slot order.
    pub newly_final: Vec<DecidedSlot>,
    /// Slots appended to the commit sequence, in slot order.
    pub sequenced: Vec<DecidedSlot>,
    pub output: CommitOutput,
}

impl CommitDelta {
    pub fn is_empty(&self) -> bool {
        self.newly_final.is_empty() && self.sequenced.is_empty()
    }
}

/// Incremental per-node wrapper around the decision rules.
///
/// Final verdicts are cached; undecided slots are re-evaluated on every
/// update. Tallies are memoized per decision-round population.
#[derive(Debug)]
pub struct Committer {
    schedule: Schedule,
    finals: BTreeMap<LeaderSlot, (Verdict, Rule)>,
    next: LeaderSlot,
    linearizer: Linearizer,
    memo: HashMap<(Round, Digest, Option<Digest>), (usize, Tally)>,
}

impl Committer {
    pub fn new(schedule: Schedule) -> Self {
        Self {
            schedule,
            finals: BTreeMap::new(),
            next: LeaderSlot::new(1, 0),
            linearizer: Linearizer::new(),
            memo: HashMap::new(),
        }
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// First slot not yet appended to the commit sequence.
    pub fn next_slot(&self) -> LeaderSlot {
        self.next
    }

    pub fn verdict(&self, slot: LeaderSlot) -> Verdict {
        self.finals.get(&slot).map_or(Verdict::Undecided, |v| v.0)
    }

    pub fn finals(&self) -> impl Iterator<Item = DecidedSlot> + '_ {
        self.finals.iter().map(|(slot, (verdict, rule))| DecidedSlot { slot: *slot, verdict: *verdict, rule: *rule })
    }

    pub fn update(&mut self, dag: &Dag) -> CommitDelta {
        let mut delta = CommitDelta::default();
        let highest = dag.highest_round();
        if highest < self.next.round {
            return delta;
        }
        let schedule = &self.schedule;
        let memo = &mut self.memo;
        let mut tally = |dag: &Dag, leader: &BlockRef, anchor: Option<&BlockRef>| {
            let r = leader.round + schedule.committee.wave_length() - 1;
            let population = dag.round_refs(r).len();
            let key = (leader.round, leader.digest, anchor.map(|a| a.digest));
            match memo.get(&key) {
                Some((p, t)) if *p == population => *t,
                _ => {
                    let t = tally_votes(dag, &schedule.committee, leader, anchor);
                    memo.insert(key, (population, t));
                    t
                }
            }
        };
        let mut seq: VecDeque<SlotDecision> = VecDeque::new();
        for r in (self.next.round..=highest).rev() {
            for rank in (0..schedule.leaders_per_round).rev() {
                let slot = LeaderSlot::new(r, rank);
                if slot < self.next {
                    continue;
                }
                let verdict = match self.finals.get(&slot) {
                    Some((v, _)) => *v,
                    None => {
                        let mut rule = Rule::Direct;
                        let mut v = rules::direct_with(dag, slot, schedule, &mut tally);
                        if v == Verdict::Undecided {
                            rule = Rule::Indirect;
                            v = rules::indirect_with(dag, slot, seq.iter(), schedule, &mut tally);
                        }
                        if v.is_final() {
                            self.finals.insert(slot, (v, rule));
                            delta.newly_final.push(DecidedSlot { slot, verdict: v, rule });
                        }
                        v
                    }
                };
                seq.push_front(SlotDecision { slot, verdict });
            }
        }
        delta.newly_final.reverse();
        while let Some(&(verdict, rule)) = self.finals.get(&self.next) {
            delta.sequenced.push(DecidedSlot { slot: self.next, verdict, rule });
            if let Verdict::Commit(b) = verdict {
                delta.output.committed_leaders.push(b);
                delta.output.delivery_sequence.extend(self.linearizer.linearize(dag, &b));
            }
            self.next = self.next.next(self.schedule.leaders_per_round);
        }
        // Tallies below the sequenced prefix are never needed again.
        if !delta.sequenced.is_empty() {
            let floor = self.next.round;
            self.memo.retain(|k, _| k.0 >= floor);
        }
        delta
    }

    /// Re-evaluates every cached final verdict from scratch and returns the
    /// slots where a fresh evaluation reaches a different final verdict.
    pub fn audit(&self, dag: &Dag) -> Vec<LeaderSlot> {
        let fresh = try_decide(dag, 0, dag.highest_round(), &self.schedule);
        let fresh: BTreeMap<_, _> = fresh.into_iter().map(|d| (d.slot, d.verdict)).collect();
        self.finals
            .iter()
            .filter(|(slot, (v, _))| matches!(fresh.get(slot), Some(f) if f.is_final() && f != v))
            .map(|(slot, _)| *slot)
            .collect()
    }
}

#[cfg(test)]
mod tests;
