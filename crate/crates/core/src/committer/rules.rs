// SPDX-License-Identifier: Apache-2.0

//! Leader schedule, vote tallies and the direct and indirect decision rules.

use std::collections::{HashSet, VecDeque};
use std::sync::Arc;

use thiserror::Error;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::coin::CoinOutput;
use super::{LeaderSlot, Schedule, SlotDecision, Verdict};
use crate::block::{Block, BlockRef, Digest};
use crate::dag::Dag;
use crate::types::{Committee, Mode, Round, ValidatorId};

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
#[error("coin for slot {0:?} is not available yet")]
pub struct CoinUnavailable(pub LeaderSlot);

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
#[error("later decisions for slot {0:?} are incomplete")]
pub struct MissingDecisions(pub LeaderSlot);

/// How a final verdict was reached.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Direct,
    Indirect,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub supports: usize,
    pub non_supports: usize,
}

pub fn decision_round(slot: LeaderSlot, committee: &Committee) -> Round {
    slot.round + committee.wave_length() - 1
}

/// `members[(r + rank) mod n]` for propose round `r`. In async mode the
/// ranks of a wave are the prefix of a coin-seeded shuffle of the members,
/// so every rank holds a distinct, uniformly drawn leader.
pub fn leader_of(slot: LeaderSlot, committee: &Committee, coin: Option<CoinOutput>) -> Result<ValidatorId, CoinUnavailable> {
    match committee.mode() {
        Mode::PartialSync => Ok(committee.member_at(slot.round, slot.rank)),
        Mode::Async => {
            let word = coin.ok_or(CoinUnavailable(slot))?.0;
            Ok(committee.members()[shuffled_index(word, committee.size(), slot.rank)])
        }
    }
}

/// Entry `rank mod n` of a Fisher-Yates shuffle of `0..n` seeded by `word`.
fn shuffled_index(word: u64, n: usize, rank: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(word);
    let mut idx: Vec<usize> = (0..n).collect();
    let k = (rank % n as u64) as usize;
    for i in 0..=k {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx[k]
}

/// Leader of `slot` as seen from `dag` (which supplies coin shares in async mode).
pub fn slot_leader(dag: &Dag, slot: LeaderSlot, schedule: &Schedule) -> Result<ValidatorId, CoinUnavailable> {
    let committee = &schedule.committee;
    let coin = match committee.mode() {
        Mode::PartialSync => None,
        Mode::Async => {
            let r = decision_round(slot, committee);
            Some(schedule.coin.from_dag(dag, r, committee).map_err(|_| CoinUnavailable(slot))?)
        }
    };
    leader_of(slot, committee, coin)
}

/// Every stored propose-round block of the slot's leader, lowest digest first.
pub fn get_leader_blocks(dag: &Dag, slot: LeaderSlot, schedule: &Schedule) -> Result<Vec<Arc<Block>>, CoinUnavailable> {
    let leader = slot_leader(dag, slot, schedule)?;
    Ok(dag.at_position(leader, slot.round).iter().map(|d| dag.get(d).expect("indexed").clone()).collect())
}

/// Counts decision-round authors voting (or not) for `leader`.
///
/// Each author counts at most once; authors with several decision-round
/// blocks count on neither side. With an anchor, only decision blocks the
/// anchor links to are considered, so the count depends on the anchor's
/// history alone.
pub fn tally_votes(dag: &Dag, committee: &Committee, leader: &BlockRef, anchor: Option<&BlockRef>) -> Tally {
    let r = leader.round + committee.wave_length() - 1;
    let mut t = Tally::default();
    for author in dag.round_authors(r) {
        let mut blocks = dag
            .at_position(author, r)
            .iter()
            .map(|d| dag.get(d).expect("indexed").reference())
            .filter(|b| anchor.is_none_or(|a| dag.link(b, a).expect("stored")));
        let (Some(support), None) = (blocks.next(), blocks.next()) else { continue };
        if dag.is_vote(&support, leader).expect("stored") {
            t.supports += 1;
        } else {
            t.non_supports += 1;
        }
    }
    t
}

/// Distinct decision-round authors with a single block there.
fn clean_decision_authors(dag: &Dag, r: Round) -> usize {
    dag.round_authors(r).into_iter().filter(|a| dag.at_position(*a, r).len() == 1).count()
}

pub(crate) type TallyFn<'a> = dyn FnMut(&Dag, &BlockRef, Option<&BlockRef>) -> Tally + 'a;

pub(crate) fn direct_with(dag: &Dag, slot: LeaderSlot, schedule: &Schedule, tally: &mut TallyFn<'_>) -> Verdict {
    let committee = &schedule.committee;
    let Ok(candidates) = get_leader_blocks(dag, slot, schedule) else {
        return Verdict::Undecided;
    };
    let quorum = committee.strong_quorum();
    if candidates.is_empty() {
        // No stored block, so no stored decision block votes for the slot.
        return if clean_decision_authors(dag, decision_round(slot, committee)) >= quorum {
            Verdict::Skip
        } else {
            Verdict::Undecided
        };
    }
    // An equivocating leader's slot is skipped only once every candidate is.
    let mut all_skipped = true;
    for b in candidates {
        let t = tally(dag, &b.reference(), None);
        if t.non_supports >= quorum {
            continue;
        }
        all_skipped = false;
        if t.supports >= quorum {
            return Verdict::Commit(b.reference());
        }
    }
    if all_skipped {
        Verdict::Skip
    } else {
        Verdict::Undecided
    }
}

pub(crate) fn indirect_with<'s>(
    dag: &Dag,
    slot: LeaderSlot,
    later: impl IntoIterator<Item = &'s SlotDecision>,
    schedule: &Schedule,
    tally: &mut TallyFn<'_>,
) -> Verdict {
    let committee = &schedule.committee;
    let r_decision = decision_round(slot, committee);
    let anchor = later.into_iter().find(|s| s.slot.round > r_decision && s.verdict != Verdict::Skip);
    let Some(SlotDecision { verdict: Verdict::Commit(anchor), .. }) = anchor else {
        return Verdict::Undecided;
    };
    let Ok(candidates) = get_leader_blocks(dag, slot, schedule) else {
        return Verdict::Undecided;
    };
    for b in candidates {
        if tally(dag, &b.reference(), Some(anchor)).supports >= committee.weak_quorum() {
            return Verdict::Commit(b.reference());
        }
    }
    Verdict::Skip
}

fn plain_tally(committee: &Committee) -> impl FnMut(&Dag, &BlockRef, Option<&BlockRef>) -> Tally + '_ {
    move |dag, leader, anchor| tally_votes(dag, committee, leader, anchor)
}

pub fn try_direct_decide(dag: &Dag, slot: LeaderSlot, schedule: &Schedule) -> Verdict {
    direct_with(dag, slot, schedule, &mut plain_tally(&schedule.committee))
}

/// Indirect rule. `later` must list every slot after `slot` in ascending
/// order without gaps.
pub fn try_indirect_decide(
    dag: &Dag,
    slot: LeaderSlot,
    later: &[SlotDecision],
    schedule: &Schedule,
) -> Result<Verdict, MissingDecisions> {
    let l = schedule.leaders_per_round;
    let mut expected = slot.next(l);
    for s in later {
        if s.slot != expected {
            return Err(MissingDecisions(slot));
        }
        expected = expected.next(l);
    }
    Ok(indirect_with(dag, slot, later, schedule, &mut plain_tally(&schedule.committee)))
}

/// Decides every slot with round in `(r_committed, r_highest]`, highest
/// first, and returns the results in ascending slot order.
pub fn try_decide(dag: &Dag, r_committed: Round, r_highest: Round, schedule: &Schedule) -> Vec<SlotDecision> {
    let mut tally = plain_tally(&schedule.committee);
    let mut out: VecDeque<SlotDecision> = VecDeque::new();
    for r in (r_committed + 1..=r_highest).rev() {
        for rank in (0..schedule.leaders_per_round).rev() {
            let slot = LeaderSlot { round: r, rank };
            let mut verdict = direct_with(dag, slot, schedule, &mut tally);
            if verdict == Verdict::Undecided {
                verdict = indirect_with(dag, slot, out.iter(), schedule, &mut tally);
            }
            out.push_front(SlotDecision { slot, verdict });
        }
    }
    out.into()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CommitOutput {
    pub committed_leaders: Vec<BlockRef>,
    pub delivery_sequence: Vec<BlockRef>,
}

/// Emits causal histories in depth-first post-order, each block once.
#[derive(Clone, Debug, Default)]
pub struct Linearizer {
    delivered: HashSet<Digest>,
}

impl Linearizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Treats `blocks` as already delivered.
    pub fn with_delivered(blocks: impl IntoIterator<Item = Digest>) -> Self {
        Self { delivered: blocks.into_iter().collect() }
    }

    pub fn is_delivered(&self, d: &Digest) -> bool {
        self.delivered.contains(d)
    }

    /// Not-yet-delivered history of `leader`, parents in stored order, leader last.
    pub fn linearize(&mut self, dag: &Dag, leader: &BlockRef) -> Vec<BlockRef> {
        let mut out = Vec::new();
        if !self.delivered.insert(leader.digest) {
            return out;
        }
        let mut stack: Vec<(BlockRef, usize)> = vec![(*leader, 0)];
        while let Some((b, i)) = stack.pop() {
            let parents = dag.get(&b.digest).expect("causal history stored").parents();
            if let Some(p) = parents.get(i) {
                stack.push((b, i + 1));
                if self.delivered.insert(p.digest) {
                    stack.push((*p, 0));
                }
            } else {
                out.push(b);
            }
        }
        out
    }
}

pub fn linearize_sub_dags(leaders: &[BlockRef], dag: &Dag) -> Vec<BlockRef> {
    let mut lin = Linearizer::new();
    leaders.iter().flat_map(|l| lin.linearize(dag, l)).collect()
}

/// Commits leaders up to the first undecided slot and linearizes them.
pub fn extend_commit_sequence(dag: &Dag, decisions: &[SlotDecision]) -> CommitOutput {
    extend_commit_sequence_with(dag, decisions, &mut Linearizer::new())
}

pub fn extend_commit_sequence_with(dag: &Dag, decisions: &[SlotDecision], lin: &mut Linearizer) -> CommitOutput {
    let mut out = CommitOutput::default();
    for d in decisions {
        match d.verdict {
            Verdict::Undecided => break,
            Verdict::Skip => {}
            Verdict::Commit(b) => {
                out.committed_leaders.push(b);
                out.delivery_sequence.extend(lin.linearize(dag, &b));
            }
        }
    }
    out
}
