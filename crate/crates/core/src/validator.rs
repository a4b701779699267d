// SPDX-License-Identifier: Apache-2.0

//! Per-node consensus state machine.
//!
//! Inputs are block deliveries and timer expiries; outputs are action lists
//! for the host. The host delivers a block's missing ancestors before the
//! block itself.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::block::{validate_block, Block, BlockRef, CoinShare, Digest, Signer, Transaction, ValidityError};
use crate::committer::{CommitOutput, Committer, DecidedSlot, LeaderSlot, Rule, Schedule, Verdict};
use crate::dag::{Dag, InsertOutcome};
use crate::types::{Committee, Mode, Round, Time, ValidatorId};

/// Synthetic client load: fixed-size transactions at a fixed rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Load {
    pub tx_per_sec: u64,
    pub tx_size: usize,
}

impl Default for Load {
    fn default() -> Self {
        Self { tx_per_sec: 200, tx_size: 512 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ValidatorConfig {
    /// How long to wait for the previous round's leaders (partial synchrony only).
    pub leader_timeout: Time,
    pub load: Load,
    /// Authors never referenced as parents while enough others are available.
    pub withhold: BTreeSet<ValidatorId>,
    /// Rounds that must be complete (every member present) before moving past them.
    pub full_rounds: BTreeSet<Round>,
    /// Authors never referenced as parents from the given round.
    pub omit: BTreeMap<Round, BTreeSet<ValidatorId>>,
}

#[derive(Clone, Debug)]
pub enum Action {
    Broadcast(Arc<Block>),
    /// Arm the leader timer for `round`; replaces any earlier one.
    SetTimer { round: Round, at: Time },
    /// Slots that became final, for monitoring.
    CommitUpdate(Vec<DecidedSlot>),
    /// The block cannot be stored before these ancestors.
    RequestAncestors(Vec<BlockRef>),
}

/// A slot verdict as first reached by this node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub slot: LeaderSlot,
    pub commit: Option<BlockRef>,
    pub rule: Rule,
    /// Round of the block whose insertion produced the verdict.
    pub trigger_round: Round,
    /// Highest round stored at that moment.
    pub dag_round: Round,
    pub at: Time,
}

#[derive(Debug)]
pub struct Validator {
    me: ValidatorId,
    signer: Signer,
    config: ValidatorConfig,
    dag: Dag,
    committer: Committer,
    current_round: Round,
    timer_expired: Option<Round>,
    pending: Vec<Transaction>,
    tx_issued: u64,
    committed: CommitOutput,
    sequenced: Vec<DecidedSlot>,
    polled: (usize, usize),
    decisions: Vec<DecisionRecord>,
    invalid: Vec<(Digest, ValidityError)>,
    round_entries: Vec<(Round, Time)>,
}

impl Validator {
    pub fn new(me: ValidatorId, schedule: Schedule, config: ValidatorConfig) -> Self {
        let dag = Dag::new(&schedule.committee);
        Self {
            me,
            signer: Signer::new(me),
            config,
            dag,
            committer: Committer::new(schedule),
            current_round: 0,
            timer_expired: None,
            pending: Vec::new(),
            tx_issued: 0,
            committed: CommitOutput::default(),
            sequenced: Vec::new(),
            polled: (0, 0),
            decisions: Vec::new(),
            invalid: Vec::new(),
            round_entries: Vec::new(),
        }
    }

    pub fn id(&self) -> ValidatorId {
        self.me
    }

    pub(crate) fn signer(&self) -> &Signer {
        &self.signer
    }

    pub fn committee(&self) -> &Committee {
        &self.committer.schedule().committee
    }

    pub fn schedule(&self) -> &Schedule {
        self.committer.schedule()
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn into_dag(self) -> Dag {
        self.dag
    }

    pub fn current_round(&self) -> Round {
        self.current_round
    }

    pub fn decisions(&self) -> &[DecisionRecord] {
        &self.decisions
    }

    /// Slots in commit-sequence order.
    pub fn sequenced(&self) -> &[DecidedSlot] {
        &self.sequenced
    }

    pub fn committed(&self) -> &CommitOutput {
        &self.committed
    }

    pub fn invalid_blocks(&self) -> &[(Digest, ValidityError)] {
        &self.invalid
    }

    pub fn round_entries(&self) -> &[(Round, Time)] {
        &self.round_entries
    }

    pub fn committer(&self) -> &Committer {
        &self.committer
    }

    /// Joins the protocol by proposing the first round.
    pub fn start(&mut self, now: Time) -> Vec<Action> {
        let mut out = Vec::new();
        self.try_advance_round(now, &mut out);
        out
    }

    pub fn on_block(&mut self, b: Arc<Block>, now: Time) -> Vec<Action> {
        let mut out = Vec::new();
        if let Err(e) = validate_block(&b, self.committee()) {
            self.invalid.push((b.digest(), e));
            return out;
        }
        match self.dag.insert_block(b.clone()) {
            InsertOutcome::Inserted => {}
            InsertOutcome::Duplicate => return out,
            InsertOutcome::MissingAncestors(missing) => {
                out.push(Action::RequestAncestors(missing));
                return out;
            }
        }
        self.run_committer(b.round(), now, &mut out);
        self.try_advance_round(now, &mut out);
        out
    }

    pub fn on_timer(&mut self, round: Round, now: Time) -> Vec<Action> {
        let mut out = Vec::new();
        if round == self.current_round {
            self.timer_expired = Some(round);
            self.try_advance_round(now, &mut out);
        }
        out
    }

    /// New commit output since the previous poll.
    pub fn poll_commits(&mut self) -> CommitOutput {
        let (l, s) = self.polled;
        let out = CommitOutput {
            committed_leaders: self.committed.committed_leaders[l..].to_vec(),
            delivery_sequence: self.committed.delivery_sequence[s..].to_vec(),
        };
        self.polled = (self.committed.committed_leaders.len(), self.committed.delivery_sequence.len());
        out
    }

    fn run_committer(&mut self, trigger_round: Round, now: Time, out: &mut Vec<Action>) {
        let delta = self.committer.update(&self.dag);
        if delta.is_empty() {
            return;
        }
        let dag_round = self.dag.highest_round();
        for d in &delta.newly_final {
            let commit = match d.verdict {
                Verdict::Commit(b) => Some(b),
                _ => None,
            };
            self.decisions.push(DecisionRecord { slot: d.slot, commit, rule: d.rule, trigger_round, dag_round, at: now });
        }
        self.sequenced.extend_from_slice(&delta.sequenced);
        self.committed.committed_leaders.extend(delta.output.committed_leaders);
        self.committed.delivery_sequence.extend(delta.output.delivery_sequence);
        if !delta.newly_final.is_empty() {
            out.push(Action::CommitUpdate(delta.newly_final));
        }
    }

    fn leaders_present(&self, round: Round) -> bool {
        let schedule = self.committer.schedule();
        (0..schedule.leaders_per_round).all(|rank| {
            let leader = schedule.committee.member_at(round, rank);
            self.config.withhold.contains(&leader) || !self.dag.at_position(leader, round).is_empty()
        })
    }

    fn ready(&self) -> bool {
        let prev = self.current_round;
        let committee = self.committee();
        let authors = self.dag.round_authors(prev);
        let omitted = self.config.omit.get(&prev);
        let usable = authors
            .iter()
            .filter(|a| !self.config.withhold.contains(a) && !omitted.is_some_and(|o| o.contains(a)))
            .count();
        if usable < committee.strong_quorum() {
            return false;
        }
        if self.config.full_rounds.contains(&prev) && authors.len() < committee.size() {
            return false;
        }
        if prev == 0 || committee.mode() == Mode::Async {
            return true;
        }
        self.timer_expired == Some(prev) || self.leaders_present(prev)
    }

    /// Proposes the next block once the previous round allows it.
    pub fn try_advance_round(&mut self, now: Time, out: &mut Vec<Action>) {
        // A single-member committee is always ready; it advances once per call.
        let solo = self.committee().size() == 1;
        while self.ready() {
            let round = self.current_round + 1;
            let parents = self.select_parents(self.current_round);
            let transactions = self.drain_load(now);
            let coin_share = match self.committee().mode() {
                Mode::Async => Some(CoinShare { author: self.me, round }),
                Mode::PartialSync => None,
            };
            let b = Arc::new(Block::new(self.me, round, parents, transactions, coin_share, &self.signer));
            let inserted = self.dag.insert_block(b.clone());
            debug_assert_eq!(inserted, InsertOutcome::Inserted);
            self.current_round = round;
            self.timer_expired = None;
            self.round_entries.push((round, now));
            out.push(Action::Broadcast(b));
            if self.committee().mode() == Mode::PartialSync {
                out.push(Action::SetTimer { round, at: now + self.config.leader_timeout });
            }
            self.run_committer(round, now, out);
            if solo {
                break;
            }
        }
    }

    /// One block per available author of `round`, lowest digest for equivocators.
    fn select_parents(&self, round: Round) -> Vec<BlockRef> {
        let committee = self.committee();
        let mut authors = self.dag.round_authors(round);
        let kept = authors.iter().filter(|a| !self.config.withhold.contains(a)).count();
        if kept >= committee.strong_quorum() {
            authors.retain(|a| !self.config.withhold.contains(a));
        }
        if let Some(o) = self.config.omit.get(&round) {
            authors.retain(|a| !o.contains(a));
        }
        authors
            .into_iter()
            .map(|a| {
                let d = self.dag.at_position(a, round)[0];
                self.dag.get(&d).expect("indexed").reference()
            })
            .collect()
    }

    fn drain_load(&mut self, now: Time) -> Vec<Transaction> {
        let Load { tx_per_sec, tx_size } = self.config.load;
        let due = (now as u128 * tx_per_sec as u128 / 1_000_000) as u64;
        while self.tx_issued < due {
            let mut tx = vec![0u8; tx_size];
            let tag = [self.me.0.to_be_bytes().as_slice(), self.tx_issued.to_be_bytes().as_slice()].concat();
            let n = tag.len().min(tx_size);
            tx[..n].copy_from_slice(&tag[..n]);
            self.pending.push(tx);
            self.tx_issued += 1;
        }
        std::mem::take(&mut self.pending)
    }
}
