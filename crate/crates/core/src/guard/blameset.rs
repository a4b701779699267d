// SPDX-License-Identifier: Apache-2.0

//! Blamesets: at least `f + 1` core validators with checkable misbehavior proofs.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::block::{validate_block, Block, BlockRef, CoinShare, Digest, Signer};
use crate::committer::rules::{decision_round, slot_leader};
use crate::committer::{LeaderSlot, Schedule};
use crate::dag::Dag;
use crate::types::{GuardId, Round, ValidatorId};

/// Guard-side counterpart of [`crate::block::AuthTag`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GuardTag {
    signer: GuardId,
    digest: Digest,
}

impl GuardTag {
    pub fn signer(&self) -> GuardId {
        self.signer
    }

    pub fn verifies(&self, signer: GuardId, digest: &Digest) -> bool {
        self.signer == signer && self.digest == *digest
    }
}

#[derive(Clone, Debug)]
pub struct GuardKey {
    id: GuardId,
}

impl GuardKey {
    pub fn new(id: GuardId) -> Self {
        Self { id }
    }

    pub fn id(&self) -> GuardId {
        self.id
    }

    pub fn sign(&self, digest: &Digest) -> GuardTag {
        GuardTag { signer: self.id, digest: *digest }
    }
}

/// A guard's signed claim that `accused` was not live in `round`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LBlame {
    pub guard: GuardId,
    pub accused: ValidatorId,
    pub round: Round,
    tag: GuardTag,
}

impl LBlame {
    pub fn new(key: &GuardKey, accused: ValidatorId, round: Round) -> Self {
        let tag = key.sign(&Self::digest(accused, round));
        Self { guard: key.id(), accused, round, tag }
    }

    fn digest(accused: ValidatorId, round: Round) -> Digest {
        let mut h = Sha256::new();
        h.update(b"lblame");
        h.update(accused.0.to_be_bytes());
        h.update(round.to_be_bytes());
        Digest(h.finalize().into())
    }

    pub fn verifies(&self) -> bool {
        self.tag.verifies(self.guard, &Self::digest(self.accused, self.round))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlameKind {
    Liveness,
    Safety,
}

/// Two decision-round blocks by one author that back opposite outcomes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VotePair {
    pub member: ValidatorId,
    /// Votes for the leader.
    pub support: Arc<Block>,
    /// Does not vote for the leader (skip conflict) or votes for the rival leader.
    pub other: Arc<Block>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Proof {
    Liveness {
        round: Round,
        attestations: Vec<LBlame>,
    },
    Safety {
        slot: LeaderSlot,
        leader: Arc<Block>,
        /// `None` when the conflict is commit against skip.
        rival: Option<Arc<Block>>,
        pairs: Vec<VotePair>,
        /// The conflicting leader that holds a strong certificate, if any.
        certified: Option<BlockRef>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlameSet {
    pub members: BTreeSet<ValidatorId>,
    pub proof: Proof,
}

impl BlameSet {
    pub fn kind(&self) -> BlameKind {
        match self.proof {
            Proof::Liveness { .. } => BlameKind::Liveness,
            Proof::Safety { .. } => BlameKind::Safety,
        }
    }

    /// Blocks the proof refers to; a receiver needs their ancestry to verify.
    pub fn blocks(&self) -> Vec<Arc<Block>> {
        match &self.proof {
            Proof::Liveness { .. } => Vec::new(),
            Proof::Safety { leader, rival, pairs, .. } => {
                let mut out = vec![leader.clone()];
                out.extend(rival.iter().cloned());
                for p in pairs {
                    out.push(p.support.clone());
                    out.push(p.other.clone());
                }
                out
            }
        }
    }

    /// Hash of the canonical encoding; equal sets have equal digests.
    pub fn digest(&self) -> Digest {
        let mut h = Sha256::new();
        h.update(b"blameset");
        for m in &self.members {
            h.update(m.0.to_be_bytes());
        }
        match &self.proof {
            Proof::Liveness { round, attestations } => {
                h.update([0u8]);
                h.update(round.to_be_bytes());
                let mut atts: Vec<_> = attestations.iter().map(|a| (a.guard, a.accused, a.round)).collect();
                atts.sort();
                for (g, v, r) in atts {
                    h.update(g.0.to_be_bytes());
                    h.update(v.0.to_be_bytes());
                    h.update(r.to_be_bytes());
                }
            }
            Proof::Safety { slot, leader, rival, pairs, certified } => {
                h.update([1u8]);
                h.update(slot.round.to_be_bytes());
                h.update(slot.rank.to_be_bytes());
                h.update(leader.digest().0);
                h.update(rival.as_ref().map_or([0u8; 32], |b| b.digest().0));
                h.update(certified.map_or([0u8; 32], |b| b.digest.0));
                for p in pairs {
                    h.update(p.member.0.to_be_bytes());
                    h.update(p.support.digest().0);
                    h.update(p.other.digest().0);
                }
            }
        }
        Digest(h.finalize().into())
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum BlameSetError {
    #[error("{size} members, need at least {need}")]
    TooSmall { size: usize, need: usize },
    #[error("{0} is not a committee member")]
    NotMember(ValidatorId),
    #[error("{0} lacks attestations from a strict majority of guards")]
    NoMajority(ValidatorId),
    #[error("attestation does not verify or names the wrong round")]
    BadAttestation,
    #[error("proof members do not match the set")]
    MemberMismatch,
    #[error("block in proof is invalid or unknown: {0:?}")]
    BadBlock(BlockRef),
    #[error("leader block is not the slot leader's block")]
    WrongLeader,
    #[error("pair for {0} does not show two conflicting votes")]
    BadPair(ValidatorId),
    #[error("claimed certificate does not hold")]
    BadCertificate,
}

/// Strict majority of `guard_count` equal-stake guards.
pub fn guard_majority(guard_count: usize) -> usize {
    guard_count / 2 + 1
}

pub fn is_valid_blameset(bs: &BlameSet, schedule: &Schedule, guard_count: usize, dag: &Dag) -> bool {
    verify_blameset(bs, schedule, guard_count, dag).is_ok()
}

/// Checks every proof element against `dag`, which must hold the ancestry
/// of the blocks in the proof.
pub fn verify_blameset(bs: &BlameSet, schedule: &Schedule, guard_count: usize, dag: &Dag) -> Result<(), BlameSetError> {
    let committee = &schedule.committee;
    let need = committee.f() + 1;
    if bs.members.len() < need {
        return Err(BlameSetError::TooSmall { size: bs.members.len(), need });
    }
    if let Some(m) = bs.members.iter().find(|m| !committee.contains(**m)) {
        return Err(BlameSetError::NotMember(*m));
    }
    match &bs.proof {
        Proof::Liveness { round, attestations } => {
            let mut by_member: BTreeMap<ValidatorId, BTreeSet<GuardId>> = BTreeMap::new();
            for a in attestations {
                if !a.verifies() || a.round != *round || a.guard.0 as usize >= guard_count {
                    return Err(BlameSetError::BadAttestation);
                }
                by_member.entry(a.accused).or_default().insert(a.guard);
            }
            for m in &bs.members {
                if by_member.get(m).map_or(0, BTreeSet::len) < guard_majority(guard_count) {
                    return Err(BlameSetError::NoMajority(*m));
                }
            }
            Ok(())
        }
        Proof::Safety { slot, leader, rival, pairs, certified } => {
            let known = |b: &Arc<Block>| {
                if validate_block(b, committee).is_ok() && dag.contains(&b.digest()) {
                    Ok(())
                } else {
                    Err(BlameSetError::BadBlock(b.reference()))
                }
            };
            known(leader)?;
            let expected = slot_leader(dag, *slot, schedule).map_err(|_| BlameSetError::WrongLeader)?;
            if leader.author() != expected || leader.round() != slot.round {
                return Err(BlameSetError::WrongLeader);
            }
            if let Some(r) = rival {
                known(r)?;
                if r.author() != leader.author() || r.round() != leader.round() || r.digest() == leader.digest() {
                    return Err(BlameSetError::WrongLeader);
                }
            }
            let pair_members: BTreeSet<_> = pairs.iter().map(|p| p.member).collect();
            if pair_members != bs.members || pair_members.len() != pairs.len() {
                return Err(BlameSetError::MemberMismatch);
            }
            let d = decision_round(*slot, committee);
            let l = leader.reference();
            for p in pairs {
                known(&p.support)?;
                known(&p.other)?;
                let same_position = [&p.support, &p.other].iter().all(|b| b.author() == p.member && b.round() == d);
                let votes = |b: &Arc<Block>, target: &BlockRef| dag.is_vote(&b.reference(), target).unwrap_or(false);
                let other_ok = match rival {
                    None => !votes(&p.other, &l),
                    Some(r) => votes(&p.other, &r.reference()),
                };
                if !same_position || p.support.digest() == p.other.digest() || !votes(&p.support, &l) || !other_ok {
                    return Err(BlameSetError::BadPair(p.member));
                }
            }
            if let Some(c) = certified {
                let candidates = [Some(l), rival.as_ref().map(|r| r.reference())];
                if !candidates.contains(&Some(*c)) || raw_supporters(dag, c, d).len() < committee.strong_quorum() {
                    return Err(BlameSetError::BadCertificate);
                }
            }
            Ok(())
        }
    }
}

/// Authors with at least one block in `decision_round` voting for `leader`.
pub fn raw_supporters(dag: &Dag, leader: &BlockRef, decision_round: Round) -> BTreeSet<ValidatorId> {
    dag.round_refs(decision_round)
        .iter()
        .filter(|b| dag.is_vote(b, leader).unwrap_or(false))
        .map(|b| b.author)
        .collect()
}

/// Finds the decision-round authors that backed both sides of a conflict on
/// `slot`: `leader` committed against a skip (`rival = None`) or against a
/// different committed block at the same position.
///
/// Returns the overlap and its proof; the caller decides whether it is large
/// enough.
pub fn resolve_equivocation(
    dag: &Dag,
    schedule: &Schedule,
    slot: LeaderSlot,
    leader: &BlockRef,
    rival: Option<&BlockRef>,
) -> Option<BlameSet> {
    let committee = &schedule.committee;
    let leader_block = dag.get(&leader.digest)?.clone();
    let rival_block = match rival {
        Some(r) => Some(dag.get(&r.digest)?.clone()),
        None => None,
    };
    let d = decision_round(slot, committee);
    let mut pairs = Vec::new();
    for author in dag.round_authors(d) {
        let blocks = dag.at_position(author, d);
        if blocks.len() < 2 {
            continue;
        }
        let refs: Vec<BlockRef> = blocks.iter().map(|x| dag.get(x).expect("indexed").reference()).collect();
        let support = refs.iter().find(|b| dag.is_vote(b, leader).unwrap_or(false));
        let other = refs.iter().find(|b| match rival {
            None => !dag.is_vote(b, leader).unwrap_or(true),
            Some(r) => dag.is_vote(b, r).unwrap_or(false),
        });
        if let (Some(s), Some(o)) = (support, other) {
            pairs.push(VotePair {
                member: author,
                support: dag.get(&s.digest).expect("indexed").clone(),
                other: dag.get(&o.digest).expect("indexed").clone(),
            });
        }
    }
    let certified = [Some(*leader), rival.copied()]
        .into_iter()
        .flatten()
        .find(|c| raw_supporters(dag, c, d).len() >= committee.strong_quorum());
    Some(BlameSet {
        members: pairs.iter().map(|p| p.member).collect(),
        proof: Proof::Safety { slot, leader: leader_block, rival: rival_block, pairs, certified },
    })
}

/// Serializable form of a block. Authentication tags are not carried; the
/// loader re-derives them from the recorded author.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub author: ValidatorId,
    pub round: Round,
    pub parents: Vec<BlockRef>,
    pub transactions: Vec<String>,
    pub coin_share: Option<CoinShare>,
    pub digest: Digest,
}

impl BlockRecord {
    pub fn of(b: &Block) -> Self {
        Self {
            author: b.author(),
            round: b.round(),
            parents: b.parents().to_vec(),
            transactions: b.transactions().iter().map(hex::encode).collect(),
            coin_share: b.coin_share().copied(),
            digest: b.digest(),
        }
    }

    pub fn to_block(&self) -> Result<Block, EvidenceError> {
        let txs = self
            .transactions
            .iter()
            .map(hex::decode)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| EvidenceError::Malformed("transaction hex".into()))?;
        let b = Block::new(self.author, self.round, self.parents.clone(), txs, self.coin_share, &Signer::new(self.author));
        if b.digest() != self.digest {
            return Err(EvidenceError::DigestMismatch(self.digest));
        }
        Ok(b)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attestation {
    pub guard: GuardId,
    pub accused: ValidatorId,
    pub round: Round,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub member: ValidatorId,
    pub support: Digest,
    pub other: Digest,
}

/// Offline-checkable blameset: kind, members and every proof element.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub kind: BlameKind,
    pub members: Vec<ValidatorId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<Round>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attestations: Vec<Attestation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<LeaderSlot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rival: Option<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certified: Option<BlockRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<PairRecord>,
    /// Every block from the slot's round up to the pairs, so votes can be re-traced.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blocks: Vec<BlockRecord>,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum EvidenceError {
    #[error("malformed evidence: {0}")]
    Malformed(String),
    #[error("block digest {0:?} does not match its contents")]
    DigestMismatch(Digest),
}

impl Evidence {
    /// Captures `bs` together with the slice of `dag` its votes run through.
    pub fn capture(bs: &BlameSet, dag: &Dag) -> Self {
        let members = bs.members.iter().copied().collect();
        match &bs.proof {
            Proof::Liveness { round, attestations } => {
                let mut attestations: Vec<_> = attestations
                    .iter()
                    .map(|a| Attestation { guard: a.guard, accused: a.accused, round: a.round })
                    .collect();
                attestations.sort_by_key(|a| (a.accused, a.guard));
                Evidence {
                    kind: BlameKind::Liveness,
                    members,
                    round: Some(*round),
                    attestations,
                    slot: None,
                    leader: None,
                    rival: None,
                    certified: None,
                    pairs: Vec::new(),
                    blocks: Vec::new(),
                }
            }
            Proof::Safety { slot, leader, rival, pairs, certified } => {
                let floor = slot.round;
                let mut seen = BTreeSet::new();
                let mut stack: Vec<Arc<Block>> = bs.blocks();
                let d = pairs.first().map_or(floor, |p| p.support.round());
                // Certificate blocks are part of the proof for the canonical choice.
                stack.extend(dag.round_blocks(d).cloned());
                let mut blocks = Vec::new();
                while let Some(b) = stack.pop() {
                    if !seen.insert(b.digest()) {
                        continue;
                    }
                    for p in b.parents() {
                        if p.round >= floor {
                            if let Some(pb) = dag.get(&p.digest) {
                                stack.push(pb.clone());
                            }
                        }
                    }
                    blocks.push(BlockRecord::of(&b));
                }
                blocks.sort_by_key(|b| (b.round, b.author, b.digest));
                Evidence {
                    kind: BlameKind::Safety,
                    members,
                    round: None,
                    attestations: Vec::new(),
                    slot: Some(*slot),
                    leader: Some(leader.digest()),
                    rival: rival.as_ref().map(|r| r.digest()),
                    certified: *certified,
                    pairs: pairs
                        .iter()
                        .map(|p| PairRecord { member: p.member, support: p.support.digest(), other: p.other.digest() })
                        .collect(),
                    blocks,
                }
            }
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn from_text(s: &str) -> Result<Self, EvidenceError> {
        serde_json::from_str(s).map_err(|e| EvidenceError::Malformed(e.to_string()))
    }

    /// Rebuilds the blameset and a DAG fragment to verify it against.
    pub fn restore(&self) -> Result<(BlameSet, Dag), EvidenceError> {
        let members: BTreeSet<_> = self.members.iter().copied().collect();
        match self.kind {
            BlameKind::Liveness => {
                let round = self.round.ok_or_else(|| EvidenceError::Malformed("missing round".into()))?;
                let attestations =
                    self.attestations.iter().map(|a| LBlame::new(&GuardKey::new(a.guard), a.accused, a.round)).collect();
                Ok((BlameSet { members, proof: Proof::Liveness { round, attestations } }, Dag::default()))
            }
            BlameKind::Safety => {
                let missing = |what: &str| EvidenceError::Malformed(format!("missing {what}"));
                let blocks = self.blocks.iter().map(|r| r.to_block().map(Arc::new)).collect::<Result<Vec<_>, _>>()?;
                let dag = Dag::from_fragment(blocks);
                let get = |d: &Digest| dag.get(d).cloned().ok_or_else(|| missing("block"));
                let leader = get(&self.leader.ok_or_else(|| missing("leader"))?)?;
                let rival = self.rival.as_ref().map(get).transpose()?;
                let pairs = self
                    .pairs
                    .iter()
                    .map(|p| Ok(VotePair { member: p.member, support: get(&p.support)?, other: get(&p.other)? }))
                    .collect::<Result<Vec<_>, EvidenceError>>()?;
                let slot = self.slot.ok_or_else(|| missing("slot"))?;
                let proof = Proof::Safety { slot, leader, rival, pairs, certified: self.certified };
                Ok((BlameSet { members, proof }, dag))
            }
        }
    }
}
