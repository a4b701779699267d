// SPDX-License-Identifier: Apache-2.0

//! Deterministic discrete-event simulator hosting validators and guards.
//!
//! A run is a pure function of the scenario and the seed. Block deliveries
//! carry the block's missing ancestry with them: before a block is handed
//! to a node, every ancestor the node lacks is delivered from the sender's
//! DAG, oldest round first.

pub mod fault;
pub mod network;
pub mod queue;
pub mod record;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::{Block, BlockRef};
use crate::committer::{Coin, DecidedSlot, Schedule, Verdict};
use crate::dag::Dag;
use crate::guard::{
    apply_reconfiguration, BlameSet, Evidence, Guard, GuardConfig, GuardEvent, GuardMsg, GuardOutput, GuardTimer,
};
use crate::scenario::{ConfigError, Scenario};
use crate::types::{Committee, GuardId, Mode, Round, Time, ValidatorId};
use crate::validator::{Action, Validator, ValidatorConfig};

pub use fault::{Fault, GuardFault, SplitView};
pub use network::NetworkModel;
pub use queue::{Class, EventQueue, Timers};
pub use record::{
    run_checks, BlameSummary, Checks, GuardRecord, LogEntry, MsgClass, NodeId, RunRecord, ValidatorRecord,
};

#[derive(Clone, Debug)]
enum Payload {
    Block(Arc<Block>),
    Commit(Vec<DecidedSlot>),
    Guard(GuardMsg),
}

impl Payload {
    fn class(&self) -> MsgClass {
        match self {
            Payload::Block(_) | Payload::Guard(GuardMsg::Block(_)) => MsgClass::Block,
            Payload::Commit(_) => MsgClass::Commit,
            Payload::Guard(GuardMsg::Blame(_)) => MsgClass::Blame,
            Payload::Guard(GuardMsg::Recover(_)) => MsgClass::Recover,
        }
    }

    fn round(&self) -> Option<Round> {
        match self {
            Payload::Block(b) | Payload::Guard(GuardMsg::Block(b)) => Some(b.round()),
            _ => None,
        }
    }
}

#[derive(Debug)]
enum Event {
    Deliver { epoch: u32, from: NodeId, to: NodeId, payload: Payload },
    ValidatorTimer { epoch: u32, node: ValidatorId, round: Round },
    GuardTimer { epoch: u32, guard: GuardId, timer: GuardTimer },
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Behavior {
    Honest,
    Crash { after: Round },
    Equivocate,
    Withhold,
    SplitView,
}

struct Host {
    node: Validator,
    behavior: Behavior,
    /// Under adversarial control at any point of the run.
    corrupt: bool,
    crashed: bool,
    logged: usize,
}

impl Host {
    fn honest(&self) -> bool {
        !self.corrupt
    }
}

struct GuardHost {
    node: Guard,
    fault: Option<GuardFault>,
    outcome: Option<Option<Arc<BlameSet>>>,
    evidence: Vec<Evidence>,
}

impl GuardHost {
    fn honest(&self) -> bool {
        self.fault.is_none()
    }
}

/// One simulated run.
pub struct Sim {
    sc: Scenario,
    seed: u64,
    rng: ChaCha8Rng,
    now: Time,
    epoch: u32,
    target: Round,
    queue: EventQueue<Event>,
    vtimers: Timers<ValidatorId>,
    gtimers: Timers<(GuardId, GuardTimer)>,
    committee: Committee,
    hosts: BTreeMap<ValidatorId, Host>,
    guards: Vec<GuardHost>,
    guards_on: bool,
    split: Option<SplitView>,
    slow: HashMap<Round, BTreeSet<ValidatorId>>,
    log: Vec<LogEntry>,
    finished: Vec<ValidatorRecord>,
    reconfigure_due: Option<Arc<BlameSet>>,
}

/// End-of-run state of the final epoch's validators.
pub struct FinalState {
    pub schedule: Schedule,
    pub dags: BTreeMap<ValidatorId, Dag>,
}

/// Seed of the common coin in `epoch` of a run with `seed`.
pub fn coin_seed(seed: u64, epoch: u32) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Runs `scenario` with `seed` to completion.
pub fn run(scenario: &Scenario, seed: u64) -> Result<RunRecord, ConfigError> {
    Ok(Sim::new(scenario, seed)?.run())
}

impl Sim {
    pub fn new(scenario: &Scenario, seed: u64) -> Result<Self, ConfigError> {
        scenario.validate()?;
        let sc = scenario.clone();
        let committee = Committee::standard(sc.f, sc.mode);
        let split = sc.split_view.as_ref().map(|s| SplitView::new(&committee, s.round));
        let mut sim = Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            now: 0,
            epoch: 1,
            target: sc.rounds,
            queue: EventQueue::default(),
            vtimers: Timers::default(),
            gtimers: Timers::default(),
            committee,
            hosts: BTreeMap::new(),
            guards: Vec::new(),
            guards_on: sc.guards.is_some(),
            split,
            slow: HashMap::new(),
            log: Vec::new(),
            finished: Vec::new(),
            reconfigure_due: None,
            sc,
        };
        sim.build_validators();
        sim.build_guards();
        Ok(sim)
    }

    fn schedule(&self) -> Schedule {
        let l = self.sc.leaders_per_round.min(self.committee.size() as u64);
        Schedule::new(self.committee.clone(), l, Coin::new(coin_seed(self.seed, self.epoch)))
    }

    fn build_validators(&mut self) {
        let faults: BTreeMap<_, _> = self.sc.faults.iter().map(|e| (e.validator, e.fault.clone())).collect();
        let schedule = self.schedule();
        let corrupt = self.sc.corrupt();
        self.hosts.clear();
        for &id in self.committee.members() {
            let mut config = ValidatorConfig {
                leader_timeout: self.sc.leader_timeout(),
                load: self.sc.load,
                ..Default::default()
            };
            let mut behavior = match faults.get(&id) {
                None => Behavior::Honest,
                Some(Fault::Crash { after }) => Behavior::Crash { after: *after },
                Some(Fault::Equivocate) => Behavior::Equivocate,
                Some(Fault::WithholdVotes { targets }) => {
                    config.withhold = targets.iter().copied().filter(|t| self.committee.contains(*t)).collect();
                    Behavior::Withhold
                }
            };
            if let Some(sv) = self.split.as_ref().filter(|sv| sv.corrupt.contains(&id)) {
                sv.configure(id, &mut config);
                behavior = Behavior::SplitView;
            }
            let node = Validator::new(id, schedule.clone(), config);
            self.hosts.insert(id, Host { node, behavior, corrupt: corrupt.contains(&id), crashed: false, logged: 0 });
        }
    }

    fn build_guards(&mut self) {
        let Some(setup) = self.sc.guards.clone() else { return };
        let config = GuardConfig {
            delta: self.sc.guard_delta(),
            guard_count: setup.count,
            leader_blames: self.sc.mode == Mode::PartialSync,
        };
        let faults: BTreeMap<_, _> = setup.faults.iter().map(|e| (e.guard, e.behavior)).collect();
        let schedule = self.schedule();
        self.guards = (0..setup.count as u32)
            .map(|i| GuardHost {
                node: Guard::new(GuardId(i), schedule.clone(), config),
                fault: faults.get(&GuardId(i)).copied(),
                outcome: None,
                evidence: Vec::new(),
            })
            .collect();
    }

    pub fn run(self) -> RunRecord {
        self.run_with_state().0
    }

    /// Like [`Sim::run`], also returning the final DAGs.
    pub fn run_with_state(mut self) -> (RunRecord, FinalState) {
        self.start_epoch();
        if self.guards_on {
            for g in 0..self.guards.len() {
                if self.guards[g].fault != Some(GuardFault::Silent) {
                    let out = self.guards[g].node.start(self.now);
                    self.on_guard_outputs(g, out);
                }
            }
        }
        while !self.done() {
            match self.queue.peek_time() {
                Some(t) if t <= self.sc.horizon => {}
                _ => break,
            }
            let (t, token, event) = self.queue.pop().expect("peeked");
            self.now = t;
            self.handle(event, token);
            if let Some(bs) = self.reconfigure_due.take() {
                self.reconfigure(&bs);
            }
        }
        self.finish()
    }

    fn start_epoch(&mut self) {
        let ids: Vec<_> = self.hosts.keys().copied().collect();
        for id in ids {
            let now = self.now;
            let acts = self.host(id).node.start(now);
            self.on_actions(id, acts);
        }
    }

    fn host(&mut self, id: ValidatorId) -> &mut Host {
        self.hosts.get_mut(&id).expect("member")
    }

    fn done(&self) -> bool {
        let reached = self.hosts.values().filter(|h| h.honest()).all(|h| h.node.current_round() >= self.target);
        let agreeing = self.guards_on && self.guards.iter().any(|g| g.honest() && g.node.agreement().is_running());
        reached && !agreeing
    }

    fn handle(&mut self, event: Event, token: u64) {
        match event {
            Event::Deliver { epoch, from, to, payload } if epoch == self.epoch => self.deliver(from, to, payload),
            Event::ValidatorTimer { epoch, node, round } if epoch == self.epoch => {
                if self.vtimers.fire(&node, token) && !self.hosts[&node].crashed {
                    let now = self.now;
                    let acts = self.host(node).node.on_timer(round, now);
                    self.on_actions(node, acts);
                }
            }
            Event::GuardTimer { epoch, guard, timer } if epoch == self.epoch && self.guards_on => {
                if self.gtimers.fire(&(guard, timer), token) {
                    let g = guard.0 as usize;
                    let out = self.guards[g].node.on_timer(timer, self.now);
                    self.on_guard_outputs(g, out);
                }
            }
            _ => {}
        }
    }

    fn deliver(&mut self, from: NodeId, to: NodeId, payload: Payload) {
        match to {
            NodeId::Validator(v) => {
                if let Payload::Block(b) = payload {
                    self.deliver_to_validator(from, v, b);
                }
            }
            NodeId::Guard(g) => {
                let g = g.0 as usize;
                if !self.guards_on || self.guards[g].fault == Some(GuardFault::Silent) {
                    return;
                }
                match payload {
                    Payload::Block(b) | Payload::Guard(GuardMsg::Block(b)) => self.deliver_to_guard(from, g, b),
                    Payload::Commit(slots) => {
                        let out = self.guards[g].node.on_commit_update(&slots, self.now);
                        self.on_guard_outputs(g, out);
                    }
                    Payload::Guard(msg) => {
                        if let GuardMsg::Recover(m) = &msg {
                            for b in m.value.blocks() {
                                self.deliver_to_guard(from, g, b);
                            }
                        }
                        let out = self.guards[g].node.on_message(&msg, self.now);
                        self.on_guard_outputs(g, out);
                    }
                }
            }
        }
    }

    fn source_dag(&self, from: NodeId) -> &Dag {
        match from {
            NodeId::Validator(v) => self.hosts[&v].node.dag(),
            NodeId::Guard(g) => self.guards[g.0 as usize].node.dag(),
        }
    }

    fn deliver_to_validator(&mut self, from: NodeId, v: ValidatorId, b: Arc<Block>) {
        if self.hosts[&v].crashed {
            return;
        }
        let chain = with_ancestry(self.hosts[&v].node.dag(), self.source_dag(from), b);
        for blk in chain {
            if self.hosts[&v].crashed {
                return;
            }
            if self.hosts[&v].node.dag().contains(&blk.digest()) {
                continue;
            }
            self.log_delivery(NodeId::Validator(v), &blk);
            let now = self.now;
            let acts = self.host(v).node.on_block(blk, now);
            self.on_actions(v, acts);
        }
    }

    fn deliver_to_guard(&mut self, from: NodeId, g: usize, b: Arc<Block>) {
        let chain = with_ancestry(self.guards[g].node.dag(), self.source_dag(from), b);
        for blk in chain {
            if self.guards[g].node.dag().contains(&blk.digest()) {
                continue;
            }
            self.log_delivery(NodeId::Guard(GuardId(g as u32)), &blk);
            let out = self.guards[g].node.on_block(blk, self.now);
            self.on_guard_outputs(g, out);
        }
    }

    fn log_delivery(&mut self, to: NodeId, b: &Block) {
        self.log.push(LogEntry::Delivered {
            t: self.now,
            epoch: self.epoch,
            to,
            author: b.author(),
            digest: b.digest(),
        });
    }

    fn on_actions(&mut self, v: ValidatorId, acts: Vec<Action>) {
        for a in acts {
            match a {
                Action::Broadcast(b) => self.publish(v, b),
                Action::SetTimer { round, at } => {
                    let token = self.queue.push(at, Class::Timer, Event::ValidatorTimer { epoch: self.epoch, node: v, round });
                    self.vtimers.arm(v, token);
                }
                Action::CommitUpdate(slots) => {
                    if self.guards_on && self.hosts[&v].honest() {
                        for g in 0..self.guards.len() as u32 {
                            self.send(NodeId::Validator(v), NodeId::Guard(GuardId(g)), Payload::Commit(slots.clone()));
                        }
                    }
                }
                Action::RequestAncestors(_) => {}
            }
        }
        self.log_decisions(v);
    }

    fn log_decisions(&mut self, v: ValidatorId) {
        let (epoch, now) = (self.epoch, self.now);
        let host = self.hosts.get_mut(&v).expect("member");
        for d in &host.node.decisions()[host.logged..] {
            self.log.push(LogEntry::Decided {
                t: now,
                epoch,
                node: v,
                slot: d.slot,
                commit: d.commit,
                rule: d.rule,
                trigger_round: d.trigger_round,
                dag_round: d.dag_round,
            });
        }
        host.logged = host.node.decisions().len();
    }

    fn created(&mut self, b: &Block) {
        self.log.push(LogEntry::Created {
            t: self.now,
            epoch: self.epoch,
            author: b.author(),
            round: b.round(),
            digest: b.digest(),
        });
    }

    /// Sends a freshly proposed block according to the author's behavior.
    fn publish(&mut self, v: ValidatorId, b: Arc<Block>) {
        let behavior = self.hosts[&v].behavior.clone();
        if let Behavior::Crash { after } = behavior {
            if b.round() > after {
                self.host(v).crashed = true;
                return;
            }
        }
        self.created(&b);
        let me = NodeId::Validator(v);
        let others: Vec<ValidatorId> = self.committee.members().iter().copied().filter(|o| *o != v).collect();
        match behavior {
            Behavior::Equivocate => {
                let twin = Arc::new(fault::equivocating_twin(&b, self.hosts[&v].node.signer()));
                self.created(&twin);
                let half = others.len() / 2;
                for (i, o) in others.iter().enumerate() {
                    let blk = if i < half { &b } else { &twin };
                    self.send(me, NodeId::Validator(*o), Payload::Block(blk.clone()));
                }
                self.send_to_guards(me, &b);
                let now = self.now;
                let acts = self.host(v).node.on_block(twin, now);
                self.on_actions(v, acts);
            }
            Behavior::SplitView => {
                let sv = self.split.clone().expect("split view");
                let mut shown = b.clone();
                if b.round() == sv.round + 1 {
                    let dag = self.hosts[&v].node.dag();
                    let leader = dag.at_position(sv.leader, sv.round)[0];
                    let leader_ref = dag.get(&leader).expect("full round").reference();
                    shown = Arc::new(sv.voting_twin(&b, leader_ref, self.hosts[&v].node.signer()));
                    self.created(&shown);
                }
                for o in others {
                    let blk = if sv.side_a.contains(&o) { &shown } else { &b };
                    self.send(me, NodeId::Validator(o), Payload::Block(blk.clone()));
                }
            }
            _ => {
                for o in others {
                    self.send(me, NodeId::Validator(o), Payload::Block(b.clone()));
                }
                self.send_to_guards(me, &b);
            }
        }
    }

    fn send_to_guards(&mut self, from: NodeId, b: &Arc<Block>) {
        if self.guards_on {
            for g in 0..self.guards.len() as u32 {
                self.send(from, NodeId::Guard(GuardId(g)), Payload::Block(b.clone()));
            }
        }
    }

    fn is_slow(&mut self, from: NodeId, round: Option<Round>) -> bool {
        let (NodeId::Validator(v), Some(r)) = (from, round) else { return false };
        if !matches!(self.sc.network, NetworkModel::Asynchronous { adversarial: true, .. }) {
            return false;
        }
        let (seed, epoch) = (self.seed, self.epoch);
        let members = self.committee.members().to_vec();
        let k = (2 * self.committee.f()).min(members.len());
        self.slow
            .entry(r)
            .or_insert_with(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (r << 8) ^ epoch as u64 ^ 0x5157);
                sample(&mut rng, members.len(), k).into_iter().map(|i| members[i]).collect()
            })
            .contains(&v)
    }

    fn send(&mut self, from: NodeId, to: NodeId, payload: Payload) {
        let deliver_at = match (from, to) {
            (NodeId::Guard(_), NodeId::Guard(_)) => self.now + self.rng.gen_range(1..=self.sc.guard_delta()),
            _ => {
                let round = payload.round();
                let slow = self.is_slow(from, round);
                self.sc.network.deliver_at(&mut self.rng, self.now, round, slow)
            }
        };
        self.log.push(LogEntry::Sent {
            t: self.now,
            epoch: self.epoch,
            from,
            to,
            deliver_at,
            class: payload.class(),
        });
        self.queue.push(deliver_at, Class::Deliver, Event::Deliver { epoch: self.epoch, from, to, payload });
    }

    fn on_guard_outputs(&mut self, g: usize, out: Vec<GuardOutput>) {
        let id = GuardId(g as u32);
        for o in out {
            match o {
                GuardOutput::Send(msg) => {
                    let msg = match msg {
                        GuardMsg::Recover(m)
                            if self.guards[g].fault == Some(GuardFault::Bogus) && m.proposer == id && m.chain.len() == 1 =>
                        {
                            let honest: Vec<_> =
                                self.hosts.iter().filter(|(_, h)| h.honest()).map(|(id, _)| *id).collect();
                            GuardMsg::Recover(fault::bogus_proposal(&m, self.guards[g].node.key(), &honest, self.committee.f()))
                        }
                        other => other,
                    };
                    for h in 0..self.guards.len() as u32 {
                        if h != id.0 {
                            self.send(NodeId::Guard(id), NodeId::Guard(GuardId(h)), Payload::Guard(msg.clone()));
                        }
                    }
                }
                GuardOutput::SetTimer(timer, at) => {
                    let token = self.queue.push(at, Class::Timer, Event::GuardTimer { epoch: self.epoch, guard: id, timer });
                    self.gtimers.arm((id, timer), token);
                }
                GuardOutput::RequestAncestors(_) => {}
                GuardOutput::Event(e) => self.on_guard_event(g, e),
            }
        }
    }

    fn on_guard_event(&mut self, g: usize, e: GuardEvent) {
        let (t, guard) = (self.now, GuardId(g as u32));
        let entry = match e {
            GuardEvent::Entered(round) => LogEntry::GuardEntered { t, guard, round },
            GuardEvent::Blamed { accused, round } => LogEntry::Blame { t, guard, accused, round },
            GuardEvent::LBlamed { accused, round } => LogEntry::LBlamed { t, guard, accused, round },
            GuardEvent::Conflict { slot } => LogEntry::Conflict { t, guard, slot },
            GuardEvent::Detected(bs) => {
                let ev = Evidence::capture(&bs, self.guards[g].node.dag());
                self.guards[g].evidence.push(ev);
                LogEntry::Detected { t, guard, blameset: BlameSummary::of(&bs) }
            }
            GuardEvent::RecoveryStarted { value, joined } => {
                LogEntry::RecoveryStarted { t, guard, joined, blameset: BlameSummary::of(&value) }
            }
            GuardEvent::Rejected { proposer, .. } => LogEntry::Rejected { t, guard, proposer },
            GuardEvent::Agreed(outcome) => {
                if let Some(bs) = &outcome {
                    let ev = Evidence::capture(bs, self.guards[g].node.dag());
                    self.guards[g].evidence.push(ev);
                }
                let summary = outcome.as_deref().map(BlameSummary::of);
                self.guards[g].outcome = Some(outcome);
                self.check_agreement();
                LogEntry::Agreed { t, guard, blameset: summary }
            }
        };
        self.log.push(entry);
    }

    /// Schedules a reconfiguration once every honest guard output the same set.
    fn check_agreement(&mut self) {
        let mut outcomes = self.guards.iter().filter(|g| g.honest()).map(|g| g.outcome.as_ref());
        let Some(Some(Some(first))) = outcomes.next() else { return };
        let digest = first.digest();
        let first = first.clone();
        if outcomes.all(|o| matches!(o, Some(Some(bs)) if bs.digest() == digest)) {
            self.reconfigure_due = Some(first);
        }
    }

    fn reconfigure(&mut self, bs: &BlameSet) {
        let rc = apply_reconfiguration(bs, &self.committee);
        self.finish_epoch();
        self.log.push(LogEntry::Reconfigured {
            t: self.now,
            kind: rc.kind,
            removed: bs.members.iter().copied().collect(),
            committee: rc.committee.members().to_vec(),
            canonical: rc.canonical,
        });
        self.queue.clear();
        self.vtimers.clear();
        self.gtimers.clear();
        self.guards_on = false;
        self.split = None;
        self.slow.clear();
        self.epoch += 1;
        self.committee = rc.committee;
        self.target = self.sc.post_rounds;
        self.build_validators();
        self.start_epoch();
    }

    fn finish_epoch(&mut self) {
        for (id, h) in &self.hosts {
            let dag = h.node.dag();
            let sequence = h
                .node
                .sequenced()
                .iter()
                .map(|d| {
                    let commit = match d.verdict {
                        Verdict::Commit(b) => Some(b),
                        _ => None,
                    };
                    (d.slot, commit)
                })
                .collect();
            let delivered = &h.node.committed().delivery_sequence;
            let delivered_bytes =
                delivered.iter().filter_map(|r: &BlockRef| dag.get(&r.digest)).map(|b| b.payload_bytes()).sum();
            self.finished.push(ValidatorRecord {
                id: *id,
                epoch: self.epoch,
                honest: h.honest(),
                final_round: h.node.current_round(),
                sequence,
                delivered_blocks: delivered.len(),
                delivered_bytes,
            });
        }
    }

    fn finish(mut self) -> (RunRecord, FinalState) {
        self.finish_epoch();
        let schedule = self.schedule();
        let dags = std::mem::take(&mut self.hosts).into_iter().map(|(id, h)| (id, h.node.into_dag())).collect();
        let guard_delta = self.sc.guard_delta();
        let guard_network = NetworkModel::Synchronous { delta: guard_delta, min_delay: 1 };
        let checks = run_checks(&self.log, &self.finished, &self.sc.network, &guard_network);
        let guards = self
            .guards
            .into_iter()
            .map(|g| GuardRecord {
                id: g.node.id(),
                honest: g.fault.is_none(),
                final_round: g.node.round(),
                agreed: g.outcome.map(|o| o.as_deref().map(BlameSummary::of)),
                evidence: g.evidence,
            })
            .collect();
        let record = RunRecord {
            scenario: self.sc.name.clone(),
            seed: self.seed,
            f: self.sc.f,
            delta: self.sc.delta(),
            guard_delta,
            guard_count: self.sc.guards.as_ref().map_or(0, |g| g.count),
            network: self.sc.network,
            end_time: self.now,
            log: self.log,
            validators: self.finished,
            guards,
            checks,
        };
        (record, FinalState { schedule, dags })
    }
}

/// `b` preceded by every ancestor `target` lacks that `source` holds,
/// ordered by round.
fn with_ancestry(target: &Dag, source: &Dag, b: Arc<Block>) -> Vec<Arc<Block>> {
    let mut need = Vec::new();
    let mut seen = HashSet::new();
    let mut stack: Vec<BlockRef> = b.parents().to_vec();
    while let Some(p) = stack.pop() {
        if target.contains(&p.digest) || !seen.insert(p.digest) {
            continue;
        }
        let Some(blk) = source.get(&p.digest) else { continue };
        stack.extend_from_slice(blk.parents());
        need.push(blk.clone());
    }
    need.sort_by_key(|b| (b.round(), b.digest()));
    need.push(b);
    need
}
