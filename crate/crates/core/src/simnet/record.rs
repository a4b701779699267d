// SPDX-License-Identifier: Apache-2.0

//! Run records and the post-hoc checks over them.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::block::{BlockRef, Digest};
use crate::committer::{LeaderSlot, Rule};
use crate::guard::{BlameKind, BlameSet, Evidence, Proof};
use crate::types::{GuardId, Round, Time, ValidatorId};

use super::network::NetworkModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeId {
    Validator(ValidatorId),
    Guard(GuardId),
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Validator(v) => write!(f, "{v}"),
            NodeId::Guard(g) => write!(f, "{g}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MsgClass {
    Block,
    Commit,
    Blame,
    Recover,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlameSummary {
    pub kind: BlameKind,
    /// Blamed round for liveness sets, slot round for safety sets.
    pub round: Round,
    pub members: Vec<ValidatorId>,
    pub digest: Digest,
}

impl BlameSummary {
    pub fn of(bs: &BlameSet) -> Self {
        let round = match &bs.proof {
            Proof::Liveness { round, .. } => *round,
            Proof::Safety { slot, .. } => slot.round,
        };
        Self { kind: bs.kind(), round, members: bs.members.iter().copied().collect(), digest: bs.digest() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum LogEntry {
    Sent { t: Time, epoch: u32, from: NodeId, to: NodeId, deliver_at: Time, class: MsgClass },
    Created { t: Time, epoch: u32, author: ValidatorId, round: Round, digest: Digest },
    Delivered { t: Time, epoch: u32, to: NodeId, author: ValidatorId, digest: Digest },
    Decided {
        t: Time,
        epoch: u32,
        node: ValidatorId,
        slot: LeaderSlot,
        commit: Option<BlockRef>,
        rule: Rule,
        trigger_round: Round,
        dag_round: Round,
    },
    GuardEntered { t: Time, guard: GuardId, round: Round },
    Blame { t: Time, guard: GuardId, accused: ValidatorId, round: Round },
    LBlamed { t: Time, guard: GuardId, accused: ValidatorId, round: Round },
    Conflict { t: Time, guard: GuardId, slot: LeaderSlot },
    Detected { t: Time, guard: GuardId, blameset: BlameSummary },
    RecoveryStarted { t: Time, guard: GuardId, joined: bool, blameset: BlameSummary },
    Rejected { t: Time, guard: GuardId, proposer: GuardId },
    Agreed { t: Time, guard: GuardId, blameset: Option<BlameSummary> },
    Reconfigured { t: Time, kind: BlameKind, removed: Vec<ValidatorId>, committee: Vec<ValidatorId>, canonical: Option<BlockRef> },
}

impl LogEntry {
    pub fn time(&self) -> Time {
        match self {
            LogEntry::Sent { t, .. }
            | LogEntry::Created { t, .. }
            | LogEntry::Delivered { t, .. }
            | LogEntry::Decided { t, .. }
            | LogEntry::GuardEntered { t, .. }
            | LogEntry::Blame { t, .. }
            | LogEntry::LBlamed { t, .. }
            | LogEntry::Conflict { t, .. }
            | LogEntry::Detected { t, .. }
            | LogEntry::RecoveryStarted { t, .. }
            | LogEntry::Rejected { t, .. }
            | LogEntry::Agreed { t, .. }
            | LogEntry::Reconfigured { t, .. } => *t,
        }
    }
}

/// Final state of one validator in one epoch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatorRecord {
    pub id: ValidatorId,
    pub epoch: u32,
    pub honest: bool,
    pub final_round: Round,
    /// Commit sequence: each slot with its committed leader or `None` for a skip.
    pub sequence: Vec<(LeaderSlot, Option<BlockRef>)>,
    pub delivered_blocks: usize,
    pub delivered_bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardRecord {
    pub id: GuardId,
    pub honest: bool,
    pub final_round: Round,
    pub agreed: Option<Option<BlameSummary>>,
    /// Offline-checkable evidence for every blameset the guard assembled,
    /// detected or agreed on.
    pub evidence: Vec<Evidence>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checks {
    /// Sent entries whose delivery time the network model does not admit.
    pub model_violations: usize,
    /// Blocks by honest authors that reached a node without being created by them.
    pub forged_blocks: usize,
    /// Epoch and slot of the first disagreement between two honest sequences.
    pub prefix_violations: Vec<(u32, LeaderSlot)>,
    /// Slots committed by one honest validator and skipped by another.
    pub commit_skip_conflicts: Vec<(u32, LeaderSlot)>,
    /// Honest authors with two blocks in one round.
    pub honest_equivocations: usize,
}

impl Checks {
    pub fn safe(&self) -> bool {
        self.prefix_violations.is_empty() && self.commit_skip_conflicts.is_empty()
    }

    pub fn sound(&self) -> bool {
        self.model_violations == 0 && self.forged_blocks == 0 && self.honest_equivocations == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub seed: u64,
    pub f: usize,
    pub delta: Time,
    pub guard_delta: Time,
    pub guard_count: usize,
    pub network: NetworkModel,
    pub end_time: Time,
    pub log: Vec<LogEntry>,
    pub validators: Vec<ValidatorRecord>,
    pub guards: Vec<GuardRecord>,
    pub checks: Checks,
}

impl RunRecord {
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn honest_validators(&self, epoch: u32) -> impl Iterator<Item = &ValidatorRecord> {
        self.validators.iter().filter(move |v| v.honest && v.epoch == epoch)
    }

    pub fn honest_guards(&self) -> impl Iterator<Item = &GuardRecord> {
        self.guards.iter().filter(|g| g.honest)
    }

    pub fn honest_ids(&self, epoch: u32) -> BTreeSet<ValidatorId> {
        self.honest_validators(epoch).map(|v| v.id).collect()
    }

    /// Decided entries of honest validators in `epoch`.
    pub fn decisions(&self, epoch: u32) -> impl Iterator<Item = &LogEntry> {
        let honest = self.honest_ids(epoch);
        self.log.iter().filter(move |e| matches!(e, LogEntry::Decided { epoch: ep, node, .. } if *ep == epoch && honest.contains(node)))
    }

    pub fn reconfiguration(&self) -> Option<&LogEntry> {
        self.log.iter().find(|e| matches!(e, LogEntry::Reconfigured { .. }))
    }

    pub fn guard_entries<'a>(&'a self, pred: impl Fn(&LogEntry) -> bool + 'a) -> impl Iterator<Item = &'a LogEntry> {
        let honest: BTreeSet<_> = self.honest_guards().map(|g| g.id).collect();
        self.log.iter().filter(move |e| pred(e) && guard_of(e).is_some_and(|g| honest.contains(&g)))
    }
}

pub fn guard_of(e: &LogEntry) -> Option<GuardId> {
    match e {
        LogEntry::GuardEntered { guard, .. }
        | LogEntry::Blame { guard, .. }
        | LogEntry::LBlamed { guard, .. }
        | LogEntry::Conflict { guard, .. }
        | LogEntry::Detected { guard, .. }
        | LogEntry::RecoveryStarted { guard, .. }
        | LogEntry::Rejected { guard, .. }
        | LogEntry::Agreed { guard, .. } => Some(*guard),
        _ => None,
    }
}

/// Runs every post-hoc check. `guard_network` is the model for messages
/// between guards.
pub fn run_checks(
    log: &[LogEntry],
    validators: &[ValidatorRecord],
    network: &NetworkModel,
    guard_network: &NetworkModel,
) -> Checks {
    let honest: BTreeSet<(u32, ValidatorId)> =
        validators.iter().filter(|v| v.honest).map(|v| (v.epoch, v.id)).collect();
    let mut checks = Checks::default();
    let mut created: HashSet<(u32, ValidatorId, Digest)> = HashSet::new();
    let mut positions: BTreeMap<(u32, ValidatorId, Round), BTreeSet<Digest>> = BTreeMap::new();
    for e in log {
        match e {
            LogEntry::Sent { t, from, to, deliver_at, .. } => {
                let model = match (from, to) {
                    (NodeId::Guard(_), NodeId::Guard(_)) => guard_network,
                    _ => network,
                };
                if !model.admits(*t, *deliver_at) {
                    checks.model_violations += 1;
                }
            }
            LogEntry::Created { epoch, author, round, digest, .. } => {
                created.insert((*epoch, *author, *digest));
                if honest.contains(&(*epoch, *author)) {
                    positions.entry((*epoch, *author, *round)).or_default().insert(*digest);
                }
            }
            LogEntry::Delivered { epoch, author, digest, .. } => {
                if honest.contains(&(*epoch, *author)) && !created.contains(&(*epoch, *author, *digest)) {
                    checks.forged_blocks += 1;
                }
            }
            _ => {}
        }
    }
    checks.honest_equivocations = positions.values().filter(|s| s.len() > 1).count();

    let epochs: BTreeSet<u32> = validators.iter().map(|v| v.epoch).collect();
    for epoch in epochs {
        let seqs: Vec<&ValidatorRecord> = validators.iter().filter(|v| v.honest && v.epoch == epoch).collect();
        for (i, a) in seqs.iter().enumerate() {
            for b in &seqs[i + 1..] {
                if let Some((x, _)) = a.sequence.iter().zip(&b.sequence).find(|(x, y)| x != y) {
                    checks.prefix_violations.push((epoch, x.0));
                }
            }
        }
        let mut verdicts: BTreeMap<LeaderSlot, (bool, bool)> = BTreeMap::new();
        for e in log {
            if let LogEntry::Decided { epoch: ep, node, slot, commit, .. } = e {
                if *ep == epoch && honest.contains(&(epoch, *node)) {
                    let v = verdicts.entry(*slot).or_default();
                    if commit.is_some() {
                        v.0 = true;
                    } else {
                        v.1 = true;
                    }
                }
            }
        }
        checks
            .commit_skip_conflicts
            .extend(verdicts.into_iter().filter(|(_, (c, s))| *c && *s).map(|(slot, _)| (epoch, slot)));
    }
    checks
}
