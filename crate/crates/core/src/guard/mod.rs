// SPDX-License-Identifier: Apache-2.0

//! Guard nodes: monitor the core DAG, blame validators that stall or fork
//! it, and agree on a blameset to remove.
//!
//! A guard enters round `r` once it holds blocks from a strong quorum of
//! round `r - 1` and then arms three timers: leader blame at `2Δ`, liveness
//! blame at `4Δ` and the end of the grace period at `6Δ`. A validator is
//! asleep in `r` until its first clean round-`r` block arrives; blocks
//! arriving after the grace period no longer count.

pub mod agreement;
pub mod blameset;
pub mod reconfig;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use agreement::{guard_fault_budget, Agreement, AgreementAction, DsMessage, Rejection};
pub use blameset::{
    guard_majority, is_valid_blameset, raw_supporters, resolve_equivocation, verify_blameset, BlameKind, BlameSet,
    BlameSetError, Evidence, EvidenceError, GuardKey, GuardTag, LBlame, Proof, VotePair,
};
pub use reconfig::{apply_reconfiguration, Reconfiguration};

use crate::block::{validate_block, Block, BlockRef};
use crate::committer::{Committer, DecidedSlot, LeaderSlot, Schedule, Verdict};
use crate::dag::{Dag, InsertOutcome};
use crate::types::{GuardId, Round, Time, ValidatorId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardConfig {
    pub delta: Time,
    pub guard_count: usize,
    /// Blame missing leaders and blocks that skip a live leader. Off when
    /// validators do not wait for leaders.
    pub leader_blames: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GuardTimer {
    Leader(Round),
    Live(Round),
    Grace(Round),
    Decide,
}

#[derive(Clone, Debug)]
pub enum GuardMsg {
    Block(Arc<Block>),
    Blame(LBlame),
    Recover(DsMessage),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GuardEvent {
    Entered(Round),
    Blamed { accused: ValidatorId, round: Round },
    LBlamed { accused: ValidatorId, round: Round },
    Conflict { slot: LeaderSlot },
    Detected(Arc<BlameSet>),
    /// The guard fixed its recovery input; `joined` when adopted from a peer.
    RecoveryStarted { value: Arc<BlameSet>, joined: bool },
    Rejected { proposer: GuardId, reason: Rejection },
    Agreed(Option<Arc<BlameSet>>),
}

#[derive(Clone, Debug)]
pub enum GuardOutput {
    /// To every other guard.
    Send(GuardMsg),
    /// Replaces any pending timer with the same id.
    SetTimer(GuardTimer, Time),
    RequestAncestors(Vec<BlockRef>),
    Event(GuardEvent),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Reason {
    Asleep,
    Leader,
    NonVote,
}

#[derive(Debug)]
pub struct Guard {
    key: GuardKey,
    config: GuardConfig,
    schedule: Schedule,
    dag: Dag,
    committer: Committer,
    round: Round,
    asleep: BTreeMap<Round, BTreeSet<ValidatorId>>,
    closed: BTreeSet<Round>,
    my_blames: BTreeMap<(ValidatorId, Round), Reason>,
    blames: BTreeMap<(ValidatorId, Round), BTreeMap<GuardId, LBlame>>,
    lblamed: BTreeMap<Round, BTreeSet<ValidatorId>>,
    committed: BTreeMap<LeaderSlot, Verdict>,
    pending: BTreeMap<LeaderSlot, (BlockRef, Option<BlockRef>)>,
    detected: BTreeSet<LeaderSlot>,
    recovery_input: Option<Arc<BlameSet>>,
    agreement: Agreement,
}

impl Guard {
    pub fn new(id: GuardId, schedule: Schedule, config: GuardConfig) -> Self {
        let key = GuardKey::new(id);
        Self {
            agreement: Agreement::new(key.clone(), config.guard_count, config.delta),
            key,
            config,
            dag: Dag::new(&schedule.committee),
            committer: Committer::new(schedule.clone()),
            schedule,
            round: 0,
            asleep: BTreeMap::new(),
            closed: BTreeSet::new(),
            my_blames: BTreeMap::new(),
            blames: BTreeMap::new(),
            lblamed: BTreeMap::new(),
            committed: BTreeMap::new(),
            pending: BTreeMap::new(),
            detected: BTreeSet::new(),
            recovery_input: None,
        }
    }

    pub fn id(&self) -> GuardId {
        self.key.id()
    }

    pub fn key(&self) -> &GuardKey {
        &self.key
    }

    pub fn config(&self) -> &GuardConfig {
        &self.config
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn round(&self) -> Round {
        self.round
    }

    pub fn asleep(&self, r: Round) -> BTreeSet<ValidatorId> {
        self.asleep.get(&r).cloned().unwrap_or_else(|| self.schedule.committee.members().iter().copied().collect())
    }

    pub fn lblamed(&self, r: Round) -> BTreeSet<ValidatorId> {
        self.lblamed.get(&r).cloned().unwrap_or_default()
    }

    pub fn committed(&self) -> &BTreeMap<LeaderSlot, Verdict> {
        &self.committed
    }

    pub fn recovery_input(&self) -> Option<&Arc<BlameSet>> {
        self.recovery_input.as_ref()
    }

    pub fn agreement(&self) -> &Agreement {
        &self.agreement
    }

    pub fn is_valid(&self, bs: &BlameSet) -> bool {
        is_valid_blameset(bs, &self.schedule, self.config.guard_count, &self.dag)
    }

    pub fn start(&mut self, now: Time) -> Vec<GuardOutput> {
        let mut out = Vec::new();
        self.try_enter(now, &mut out);
        out
    }

    pub fn on_message(&mut self, msg: &GuardMsg, now: Time) -> Vec<GuardOutput> {
        match msg {
            GuardMsg::Block(b) => self.on_block(b.clone(), now),
            GuardMsg::Blame(lb) => {
                let mut out = Vec::new();
                self.on_lblame(*lb, &mut out);
                out
            }
            GuardMsg::Recover(m) => self.on_recover(m, now),
        }
    }

    pub fn on_block(&mut self, b: Arc<Block>, now: Time) -> Vec<GuardOutput> {
        let mut out = Vec::new();
        if validate_block(&b, &self.schedule.committee).is_err() {
            return out;
        }
        match self.dag.insert_block(b.clone()) {
            InsertOutcome::Inserted => {}
            InsertOutcome::Duplicate => return out,
            InsertOutcome::MissingAncestors(missing) => {
                out.push(GuardOutput::RequestAncestors(missing));
                return out;
            }
        }
        out.push(GuardOutput::Send(GuardMsg::Block(b.clone())));
        let (author, round) = (b.author(), b.round());
        if !self.closed.contains(&round) && self.dag.at_position(author, round).len() == 1 {
            let members = self.schedule.committee.members().iter().copied();
            self.asleep.entry(round).or_insert_with(|| members.collect()).remove(&author);
        }
        let delta = self.committer.update(&self.dag);
        for d in delta.newly_final {
            self.record_verdict(d.slot, d.verdict, &mut out);
        }
        self.try_resolve(now, &mut out);
        self.try_enter(now, &mut out);
        out
    }

    /// Verdicts reported by a validator.
    pub fn on_commit_update(&mut self, update: &[DecidedSlot], now: Time) -> Vec<GuardOutput> {
        let mut out = Vec::new();
        for d in update {
            self.record_verdict(d.slot, d.verdict, &mut out);
        }
        self.try_resolve(now, &mut out);
        out
    }

    pub fn on_timer(&mut self, timer: GuardTimer, now: Time) -> Vec<GuardOutput> {
        let mut out = Vec::new();
        match timer {
            GuardTimer::Leader(r) => {
                if self.config.leader_blames && r >= 2 {
                    let asleep = self.asleep(r - 1);
                    for l in self.leaders(r - 1) {
                        if asleep.contains(&l) {
                            self.blame(l, r, Reason::Leader, &mut out);
                        }
                    }
                }
            }
            GuardTimer::Live(r) => {
                for v in self.asleep(r) {
                    self.blame(v, r, Reason::Asleep, &mut out);
                }
                if self.config.leader_blames && r >= 2 {
                    for v in self.non_voters(r) {
                        self.blame(v, r, Reason::NonVote, &mut out);
                    }
                }
            }
            GuardTimer::Grace(r) => {
                self.closed.insert(r);
                let members: BTreeSet<_> = self.lblamed(r).into_iter().filter(|v| self.would_blame(*v, r)).collect();
                if members.len() > self.schedule.committee.f() && self.recovery_input.is_none() {
                    let attestations = members
                        .iter()
                        .flat_map(|m| self.blames[&(*m, r)].values().copied())
                        .collect();
                    let bs = Arc::new(BlameSet { members, proof: Proof::Liveness { round: r, attestations } });
                    self.start_recovery(bs, now, &mut out);
                }
            }
            GuardTimer::Decide => {
                let dag = &self.dag;
                let (schedule, n_g) = (&self.schedule, self.config.guard_count);
                if let Some(outcome) =
                    self.agreement.on_deadline(now, |bs| is_valid_blameset(bs, schedule, n_g, dag))
                {
                    out.push(GuardOutput::Event(GuardEvent::Agreed(outcome.clone())));
                }
            }
        }
        out
    }

    fn leaders(&self, r: Round) -> Vec<ValidatorId> {
        (0..self.schedule.leaders_per_round).map(|rank| self.schedule.committee.member_at(r, rank)).collect()
    }

    /// Members whose only round-`r` block does not vote for a live, unique
    /// leader block of `r - 1`.
    fn non_voters(&self, r: Round) -> Vec<ValidatorId> {
        let asleep = self.asleep(r - 1);
        let live: Vec<BlockRef> = self
            .leaders(r - 1)
            .into_iter()
            .filter(|l| !asleep.contains(l))
            .filter_map(|l| match self.dag.at_position(l, r - 1) {
                [d] => Some(self.dag.get(d).expect("indexed").reference()),
                _ => None,
            })
            .collect();
        let mut out = Vec::new();
        for m in self.schedule.committee.members() {
            let [d] = self.dag.at_position(*m, r) else { continue };
            let b = self.dag.get(d).expect("indexed").reference();
            if live.iter().any(|l| !self.dag.is_vote(&b, l).unwrap_or(false)) {
                out.push(*m);
            }
        }
        out
    }

    fn would_blame(&self, v: ValidatorId, r: Round) -> bool {
        match self.my_blames.get(&(v, r)) {
            Some(Reason::Asleep) => self.asleep(r).contains(&v),
            Some(Reason::Leader) => self.asleep(r - 1).contains(&v),
            Some(Reason::NonVote) => true,
            None => false,
        }
    }

    fn blame(&mut self, v: ValidatorId, r: Round, reason: Reason, out: &mut Vec<GuardOutput>) {
        if self.my_blames.contains_key(&(v, r)) {
            return;
        }
        self.my_blames.insert((v, r), reason);
        let lb = LBlame::new(&self.key, v, r);
        out.push(GuardOutput::Event(GuardEvent::Blamed { accused: v, round: r }));
        out.push(GuardOutput::Send(GuardMsg::Blame(lb)));
        self.on_lblame(lb, out);
    }

    fn on_lblame(&mut self, lb: LBlame, out: &mut Vec<GuardOutput>) {
        if !lb.verifies() || lb.guard.0 as usize >= self.config.guard_count || !self.schedule.committee.contains(lb.accused)
        {
            return;
        }
        let by = self.blames.entry((lb.accused, lb.round)).or_default();
        by.insert(lb.guard, lb);
        if by.len() >= guard_majority(self.config.guard_count) && self.lblamed.entry(lb.round).or_default().insert(lb.accused)
        {
            out.push(GuardOutput::Event(GuardEvent::LBlamed { accused: lb.accused, round: lb.round }));
        }
    }

    fn try_enter(&mut self, now: Time, out: &mut Vec<GuardOutput>) {
        let quorum = self.schedule.committee.strong_quorum();
        while self.dag.round_authors(self.round).len() >= quorum {
            self.round += 1;
            let r = self.round;
            let delta = self.config.delta;
            out.push(GuardOutput::Event(GuardEvent::Entered(r)));
            out.push(GuardOutput::SetTimer(GuardTimer::Leader(r), now + 2 * delta));
            out.push(GuardOutput::SetTimer(GuardTimer::Live(r), now + 4 * delta));
            out.push(GuardOutput::SetTimer(GuardTimer::Grace(r), now + 6 * delta));
        }
    }

    fn record_verdict(&mut self, slot: LeaderSlot, verdict: Verdict, out: &mut Vec<GuardOutput>) {
        if !verdict.is_final() || self.detected.contains(&slot) || self.pending.contains_key(&slot) {
            return;
        }
        let prev = *self.committed.entry(slot).or_insert(verdict);
        let conflict = match (prev, verdict) {
            (a, b) if a == b => return,
            (Verdict::Commit(l), Verdict::Skip) | (Verdict::Skip, Verdict::Commit(l)) => (l, None),
            (Verdict::Commit(a), Verdict::Commit(b)) => (a.min(b), Some(a.max(b))),
            _ => return,
        };
        self.pending.insert(slot, conflict);
        out.push(GuardOutput::Event(GuardEvent::Conflict { slot }));
    }

    /// Turns pending conflicts into safety blamesets once the DAG holds
    /// enough evidence.
    fn try_resolve(&mut self, now: Time, out: &mut Vec<GuardOutput>) {
        if self.pending.is_empty() {
            return;
        }
        let need = self.schedule.committee.f() + 1;
        let mut found = Vec::new();
        for (slot, (leader, rival)) in &self.pending {
            let Some(bs) = resolve_equivocation(&self.dag, &self.schedule, *slot, leader, rival.as_ref()) else {
                continue;
            };
            if bs.members.len() >= need && self.is_valid(&bs) {
                found.push((*slot, Arc::new(bs)));
            }
        }
        for (slot, bs) in found {
            self.pending.remove(&slot);
            self.detected.insert(slot);
            out.push(GuardOutput::Event(GuardEvent::Detected(bs.clone())));
            if self.recovery_input.is_none() {
                self.start_recovery(bs, now, out);
            }
        }
    }

    fn start_recovery(&mut self, bs: Arc<BlameSet>, now: Time, out: &mut Vec<GuardOutput>) {
        self.recovery_input = Some(bs.clone());
        out.push(GuardOutput::Event(GuardEvent::RecoveryStarted { value: bs.clone(), joined: false }));
        let acts = self.agreement.propose(bs, now);
        Self::map_agreement(acts, out);
    }

    fn on_recover(&mut self, m: &DsMessage, now: Time) -> Vec<GuardOutput> {
        let mut out = Vec::new();
        let dag = &self.dag;
        let (schedule, n_g) = (&self.schedule, self.config.guard_count);
        match self.agreement.on_message(m, now, |bs| is_valid_blameset(bs, schedule, n_g, dag)) {
            Ok(acts) => {
                Self::map_agreement(acts, &mut out);
                if self.recovery_input.is_none() {
                    self.recovery_input = Some(m.value.clone());
                    out.push(GuardOutput::Event(GuardEvent::RecoveryStarted { value: m.value.clone(), joined: true }));
                    let acts = self.agreement.propose(m.value.clone(), now);
                    Self::map_agreement(acts, &mut out);
                }
            }
            Err(reason @ (Rejection::InvalidValue | Rejection::BadChain)) => {
                out.push(GuardOutput::Event(GuardEvent::Rejected { proposer: m.proposer, reason }));
            }
            Err(_) => {}
        }
        out
    }

    fn map_agreement(acts: Vec<AgreementAction>, out: &mut Vec<GuardOutput>) {
        for a in acts {
            out.push(match a {
                AgreementAction::Send(m) => GuardOutput::Send(GuardMsg::Recover(m)),
                AgreementAction::ArmDecision(at) => GuardOutput::SetTimer(GuardTimer::Decide, at),
            });
        }
    }
}
