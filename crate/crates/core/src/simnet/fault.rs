// SPDX-License-Identifier: Apache-2.0

//! Byzantine behaviors for validators and guards.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::block::{Block, Signer};
use crate::guard::{BlameSet, DsMessage, GuardKey, Proof};
use crate::types::{Committee, Round, ValidatorId};
use crate::validator::ValidatorConfig;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Fault {
    /// Stops after proposing `after`; later blocks are never sent.
    Crash { after: Round },
    /// Two blocks per round with different payloads, one to each half of
    /// the other validators.
    Equivocate,
    /// Never references the targets' blocks while a quorum remains without them.
    WithholdVotes { targets: Vec<ValidatorId> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuardFault {
    /// Never starts and drops everything.
    Silent,
    /// Proposes an unsupported blameset naming honest validators.
    Bogus,
}

/// Commit divergence driven by `3f` corrupt validators `v0 .. v3f-1`.
///
/// The leader of `round` is corrupt. In `round + 1` every corrupt validator
/// shows the honest majority `A` a block voting for that leader and shows the
/// remaining honest validator `B` one that does not. `A` commits directly.
/// The corrupt leader of `round + 2` then builds an anchor that links to only
/// `f + 1` honest votes, so `B` skips the leader indirectly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitView {
    pub round: Round,
    pub corrupt: BTreeSet<ValidatorId>,
    pub leader: ValidatorId,
    pub anchor: ValidatorId,
    pub side_a: BTreeSet<ValidatorId>,
    pub side_b: BTreeSet<ValidatorId>,
    /// Honest `round + 1` blocks the anchor leaves out.
    pub anchor_omits: BTreeSet<ValidatorId>,
}

impl SplitView {
    /// The schedule for `committee`; `round` must be led by `v0`.
    pub fn new(committee: &Committee, round: Round) -> Self {
        let f = committee.f();
        let members = committee.members();
        let corrupt: BTreeSet<_> = members[..3 * f].iter().copied().collect();
        let honest: Vec<_> = members[3 * f..].to_vec();
        let (a, b) = honest.split_at(honest.len() - 1);
        let anchor_omits = a[f..].iter().copied().collect();
        Self {
            round,
            corrupt,
            leader: committee.member_at(round, 0),
            anchor: committee.member_at(round + 2, 0),
            side_a: a.iter().copied().collect(),
            side_b: b.iter().copied().collect(),
            anchor_omits,
        }
    }

    /// Inner validator settings for a corrupt member.
    pub fn configure(&self, me: ValidatorId, config: &mut ValidatorConfig) {
        config.full_rounds.extend([self.round, self.round + 1]);
        config.omit.entry(self.round).or_default().insert(self.leader);
        if me == self.anchor {
            config.omit.entry(self.round + 1).or_default().extend(self.anchor_omits.iter().copied());
        }
    }

    /// The block shown to side `A`: `b` with the leader block added back.
    pub fn voting_twin(&self, b: &Block, leader_ref: crate::block::BlockRef, signer: &Signer) -> Block {
        let mut parents = b.parents().to_vec();
        parents.push(leader_ref);
        Block::new(b.author(), b.round(), parents, b.transactions().to_vec(), b.coin_share().copied(), signer)
    }
}

/// Same position and parents as `b` with one extra transaction.
pub fn equivocating_twin(b: &Block, signer: &Signer) -> Block {
    let mut txs = b.transactions().to_vec();
    txs.push(b"twin".to_vec());
    Block::new(b.author(), b.round(), b.parents().to_vec(), txs, b.coin_share().copied(), signer)
}

/// Replaces a bogus guard's own proposal with one for `f + 1` honest
/// validators and no attestations.
pub fn bogus_proposal(m: &DsMessage, key: &GuardKey, honest: &[ValidatorId], f: usize) -> DsMessage {
    let members: BTreeSet<_> = honest.iter().take(f + 1).copied().collect();
    let round = match &m.value.proof {
        Proof::Liveness { round, .. } => *round,
        Proof::Safety { slot, .. } => slot.round,
    };
    let value = Arc::new(BlameSet { members, proof: Proof::Liveness { round, attestations: Vec::new() } });
    let tag = key.sign(&DsMessage::signed_digest(m.proposer, m.epoch, &value.digest()));
    DsMessage { proposer: m.proposer, epoch: m.epoch, value, chain: vec![tag] }
}

/// Per-validator faults keyed by id.
pub type FaultPlan = BTreeMap<ValidatorId, Fault>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Mode;

    fn v(i: u32) -> ValidatorId {
        ValidatorId(i)
    }

    #[test]
    fn split_view_roles_for_f1() {
        let c = Committee::standard(1, Mode::PartialSync);
        let s = SplitView::new(&c, 12);
        assert_eq!(s.corrupt, [v(0), v(1), v(2)].into());
        assert_eq!(s.leader, v(0));
        assert_eq!(s.anchor, v(2));
        assert_eq!(s.side_a, [v(3), v(4)].into());
        assert_eq!(s.side_b, [v(5)].into());
        assert_eq!(s.anchor_omits, [v(4)].into());
        let mut cfg = ValidatorConfig::default();
        s.configure(v(2), &mut cfg);
        assert_eq!(cfg.full_rounds, [12, 13].into());
        assert_eq!(cfg.omit[&12], [v(0)].into());
        assert_eq!(cfg.omit[&13], [v(4)].into());
    }

    #[test]
    fn split_view_anchor_links_too_few_votes() {
        // Anchor parents: 3f non-voting corrupt blocks plus f + 1 honest
        // voters; a weak certificate needs 2f + 1.
        for f in 1..5 {
            let c = Committee::standard(f, Mode::PartialSync);
            let s = SplitView::new(&c, 0);
            let linked = s.side_a.len() - s.anchor_omits.len() + s.side_b.len();
            assert_eq!(linked, f + 1);
            assert!(linked < c.weak_quorum());
            assert_eq!(3 * f + linked, c.strong_quorum());
            assert!(s.corrupt.contains(&s.anchor));
        }
    }

    #[test]
    fn twins_share_position_but_not_digest() {
        let s = Signer::new(v(1));
        let b = Block::new(v(1), 3, vec![], vec![vec![1]], None, &s);
        let t = equivocating_twin(&b, &s);
        assert_eq!(t.reference().position(), b.reference().position());
        assert_ne!(t.digest(), b.digest());
    }
}
