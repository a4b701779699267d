// SPDX-License-Identifier: Apache-2.0

//! Local block store with path and vote queries.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::block::{Block, BlockRef, Digest};
use crate::types::{Committee, Round, ValidatorId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    Duplicate,
    /// Parents that must be stored first. The DAG is unchanged.
    MissingAncestors(Vec<BlockRef>),
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum DagError {
    #[error("unknown block {0:?}")]
    UnknownBlock(BlockRef),
}

/// Blocks indexed by digest, by round and by `(author, round)`.
///
/// Every stored block has its full causal history stored. Several blocks at
/// one `(author, round)` mean the author equivocated.
#[derive(Debug, Default)]
pub struct Dag {
    blocks: HashMap<Digest, Arc<Block>>,
    by_round: Vec<Vec<BlockRef>>,
    // Digests kept sorted ascending.
    by_position: HashMap<(ValidatorId, Round), Vec<Digest>>,
    // VotedBlock results are a function of immutable ancestry, so they never go stale.
    vote_memo: RefCell<HashMap<(Digest, ValidatorId, Round), Option<BlockRef>>>,
}

impl Dag {
    /// A DAG holding one genesis block per committee member.
    pub fn new(committee: &Committee) -> Self {
        let mut dag = Self::default();
        for m in committee.members() {
            dag.insert_block(Arc::new(Block::genesis(*m)));
        }
        dag
    }

    /// Stores `b` if all its parents are present. Callers validate first.
    pub fn insert_block(&mut self, b: Arc<Block>) -> InsertOutcome {
        let digest = b.digest();
        if self.blocks.contains_key(&digest) {
            return InsertOutcome::Duplicate;
        }
        let missing: Vec<BlockRef> =
            b.parents().iter().filter(|p| !self.blocks.contains_key(&p.digest)).copied().collect();
        if !missing.is_empty() {
            return InsertOutcome::MissingAncestors(missing);
        }
        self.store(b);
        InsertOutcome::Inserted
    }

    /// A DAG over a slice of history whose older ancestry is not available.
    /// Path queries simply stop at the missing blocks.
    pub fn from_fragment(blocks: impl IntoIterator<Item = Arc<Block>>) -> Self {
        let mut blocks: Vec<_> = blocks.into_iter().collect();
        blocks.sort_by_key(|b| b.reference());
        let mut dag = Self::default();
        for b in blocks {
            dag.store(b);
        }
        dag
    }

    fn store(&mut self, b: Arc<Block>) {
        let digest = b.digest();
        if self.blocks.contains_key(&digest) {
            return;
        }
        let r = b.round() as usize;
        if self.by_round.len() <= r {
            self.by_round.resize_with(r + 1, Vec::new);
        }
        self.by_round[r].push(b.reference());
        let slot = self.by_position.entry((b.author(), b.round())).or_default();
        let at = slot.partition_point(|d| *d < digest);
        slot.insert(at, digest);
        self.blocks.insert(digest, b);
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        self.blocks.contains_key(digest)
    }

    pub fn get(&self, digest: &Digest) -> Option<&Arc<Block>> {
        self.blocks.get(digest)
    }

    fn fetch(&self, r: &BlockRef) -> Result<&Arc<Block>, DagError> {
        self.blocks.get(&r.digest).ok_or(DagError::UnknownBlock(*r))
    }

    pub fn highest_round(&self) -> Round {
        self.by_round.len().saturating_sub(1) as Round
    }

    /// Blocks of round `r` in insertion order.
    pub fn round_refs(&self, r: Round) -> &[BlockRef] {
        self.by_round.get(r as usize).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn round_blocks(&self, r: Round) -> impl Iterator<Item = &Arc<Block>> + '_ {
        self.round_refs(r).iter().map(move |x| &self.blocks[&x.digest])
    }

    /// Distinct authors with at least one block in round `r`.
    pub fn round_authors(&self, r: Round) -> BTreeSet<ValidatorId> {
        self.round_refs(r).iter().map(|x| x.author).collect()
    }

    /// Digests stored at `(author, round)`, ascending.
    pub fn at_position(&self, author: ValidatorId, round: Round) -> &[Digest] {
        self.by_position.get(&(author, round)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_equivocator(&self, author: ValidatorId, round: Round) -> bool {
        self.at_position(author, round).len() >= 2
    }

    /// The two lowest-digest blocks at `(author, round)`, if it holds two or more.
    pub fn equivocation_of(&self, author: ValidatorId, round: Round) -> Option<(Arc<Block>, Arc<Block>)> {
        match self.at_position(author, round) {
            [a, b, ..] => Some((self.blocks[a].clone(), self.blocks[b].clone())),
            _ => None,
        }
    }

    /// True iff a parent chain leads from `new` back to `old` (or they are equal).
    pub fn link(&self, old: &BlockRef, new: &BlockRef) -> Result<bool, DagError> {
        self.fetch(old)?;
        self.fetch(new)?;
        if old.digest == new.digest {
            return Ok(true);
        }
        if old.round >= new.round {
            return Ok(false);
        }
        let mut seen = HashSet::new();
        let mut stack = vec![new.digest];
        while let Some(d) = stack.pop() {
            let Some(b) = self.blocks.get(&d) else { continue };
            for p in b.parents() {
                if p.digest == old.digest {
                    return Ok(true);
                }
                if p.round > old.round && seen.insert(p.digest) {
                    stack.push(p.digest);
                }
            }
        }
        Ok(false)
    }

    /// Depth-first search from `b` for the first block at `(id, r)`, visiting
    /// parents in their stored order.
    pub fn voted_block(&self, b: &BlockRef, id: ValidatorId, r: Round) -> Result<Option<BlockRef>, DagError> {
        self.fetch(b)?;
        Ok(self.voted_block_inner(b, id, r))
    }

    fn voted_block_inner(&self, b: &BlockRef, id: ValidatorId, r: Round) -> Option<BlockRef> {
        if r >= b.round {
            return None;
        }
        let key = (b.digest, id, r);
        if let Some(hit) = self.vote_memo.borrow().get(&key) {
            return *hit;
        }
        let Some(block) = self.blocks.get(&b.digest) else { return None };
        let mut found = None;
        for p in block.parents() {
            if (p.author, p.round) == (id, r) {
                found = Some(*p);
                break;
            }
            if let Some(res) = self.voted_block_inner(p, id, r) {
                found = Some(res);
                break;
            }
        }
        self.vote_memo.borrow_mut().insert(key, found);
        found
    }

    /// True iff the DFS from `support` meets `leader` first among the blocks
    /// at the leader's `(author, round)`.
    pub fn is_vote(&self, support: &BlockRef, leader: &BlockRef) -> Result<bool, DagError> {
        self.fetch(leader)?;
        let hit = self.voted_block(support, leader.author, leader.round)?;
        Ok(hit.map(|h| h.digest) == Some(leader.digest))
    }

    /// One line per block, ordered by round, author, digest:
    /// `<digest> <author> <round> <parent digests, comma separated | ->`.
    pub fn dump(&self) -> String {
        let mut refs: Vec<&BlockRef> = self.by_round.iter().flatten().collect();
        refs.sort();
        let mut out = String::new();
        for r in refs {
            let b = &self.blocks[&r.digest];
            let parents = if b.parents().is_empty() {
                "-".to_string()
            } else {
                b.parents().iter().map(|p| p.digest.to_hex()).collect::<Vec<_>>().join(",")
            };
            let _ = writeln!(out, "{} {} {} {}", r.digest, r.author, r.round, parents);
        }
        out
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::block::Signer;
    use crate::types::Mode;

    pub(crate) fn v(i: u32) -> ValidatorId {
        ValidatorId(i)
    }

    /// Adds a block by `author` at `round` referencing the given parents.
    pub(crate) fn add(dag: &mut Dag, author: u32, round: Round, parents: &[BlockRef], tag: u8) -> BlockRef {
        let b = Block::new(v(author), round, parents.to_vec(), vec![vec![tag]], None, &Signer::new(v(author)));
        let r = b.reference();
        assert_eq!(dag.insert_block(Arc::new(b)), InsertOutcome::Inserted);
        r
    }

    /// Six validators; round 1 fully connected; round-2 proposals P0..P5 plus
    /// the equivocating P1'; round-3 votes where V0..V4 reference P0..P4 and
    /// V5 references P1', P2..P5.
    pub(crate) struct VoteFixture {
        pub dag: Dag,
        pub p: Vec<BlockRef>,
        pub p1_prime: BlockRef,
        pub votes: Vec<BlockRef>,
    }

    pub(crate) fn vote_fixture() -> VoteFixture {
        let c = Committee::standard(1, Mode::PartialSync);
        let mut dag = Dag::new(&c);
        let g: Vec<_> = dag.round_refs(0).to_vec();
        let r1: Vec<_> = (0..6).map(|a| add(&mut dag, a, 1, &g, 0)).collect();
        let p: Vec<_> = (0..6).map(|a| add(&mut dag, a, 2, &r1, 0)).collect();
        let p1_prime = add(&mut dag, 1, 2, &r1, 1);
        let mut votes = Vec::new();
        for a in 0..5 {
            votes.push(add(&mut dag, a, 3, &p[0..5], 0));
        }
        let v5_parents = [p1_prime, p[2], p[3], p[4], p[5]];
        votes.push(add(&mut dag, 5, 3, &v5_parents, 0));
        VoteFixture { dag, p, p1_prime, votes }
    }

    #[test]
    fn insert_is_idempotent() {
        let c = Committee::standard(1, Mode::PartialSync);
        let mut dag = Dag::new(&c);
        let g = dag.round_refs(0).to_vec();
        let b = Arc::new(Block::new(v(0), 1, g, vec![], None, &Signer::new(v(0))));
        assert_eq!(dag.insert_block(b.clone()), InsertOutcome::Inserted);
        let before = dag.dump();
        assert_eq!(dag.insert_block(b), InsertOutcome::Duplicate);
        assert_eq!(dag.dump(), before);
    }

    #[test]
    fn missing_parents_are_reported() {
        let c = Committee::standard(1, Mode::PartialSync);
        let mut full = Dag::new(&c);
        let g = full.round_refs(0).to_vec();
        let r1 = add(&mut full, 0, 1, &g, 0);
        let mut parents = g[1..].to_vec();
        parents.insert(0, r1);
        let child = Arc::new(Block::new(v(1), 2, parents, vec![], None, &Signer::new(v(1))));
        let mut dag = Dag::new(&c);
        assert_eq!(dag.insert_block(child), InsertOutcome::MissingAncestors(vec![r1]));
        assert_eq!(dag.len(), 6);
    }

    #[test]
    fn equivocation_detected() {
        let f = vote_fixture();
        let (a, b) = f.dag.equivocation_of(v(1), 2).expect("equivocation");
        let mut expected = [f.p[1].digest, f.p1_prime.digest];
        expected.sort();
        assert_eq!([a.digest(), b.digest()], expected);
        for author in [0, 2, 3, 4, 5] {
            assert!(f.dag.equivocation_of(v(author), 2).is_none());
        }
    }

    #[test]
    fn three_equivocations_report_lowest_two() {
        let c = Committee::standard(1, Mode::PartialSync);
        let mut dag = Dag::new(&c);
        let g = dag.round_refs(0).to_vec();
        let mut ds: Vec<_> = (0..3).map(|t| add(&mut dag, 2, 1, &g, t).digest).collect();
        ds.sort();
        let (a, b) = dag.equivocation_of(v(2), 1).unwrap();
        assert_eq!([a.digest(), b.digest()], [ds[0], ds[1]]);
    }

    #[test]
    fn link_cases() {
        let f = vote_fixture();
        let d = &f.dag;
        assert!(d.link(&f.p[0], &f.p[0]).unwrap());
        assert!(d.link(&f.p[0], &f.votes[0]).unwrap());
        assert!(!d.link(&f.votes[0], &f.p[0]).unwrap());
        assert!(!d.link(&f.p[5], &f.votes[0]).unwrap());
        let g0 = d.round_refs(0)[0];
        assert!(d.link(&g0, &f.votes[5]).unwrap());
    }

    #[test]
    fn unknown_blocks_error() {
        let f = vote_fixture();
        let ghost = BlockRef { author: v(0), round: 9, digest: Digest([7; 32]) };
        assert_eq!(f.dag.link(&ghost, &f.p[0]), Err(DagError::UnknownBlock(ghost)));
        assert_eq!(f.dag.is_vote(&f.p[0], &ghost), Err(DagError::UnknownBlock(ghost)));
    }

    #[test]
    fn fixture_votes() {
        let f = vote_fixture();
        let d = &f.dag;
        assert!(d.is_vote(&f.votes[0], &f.p[0]).unwrap());
        assert!(!d.is_vote(&f.votes[5], &f.p[0]).unwrap());
        assert!(d.is_vote(&f.votes[5], &f.p1_prime).unwrap());
        assert!(!d.is_vote(&f.votes[5], &f.p[1]).unwrap());
        assert!(d.is_vote(&f.votes[3], &f.p[1]).unwrap());
        assert!(!d.is_vote(&f.votes[3], &f.p1_prime).unwrap());
        assert!(d.is_vote(&f.votes[5], &f.p[5]).unwrap());
    }

    #[test]
    fn dfs_takes_first_path_through_equivocation() {
        // Support at round 3 reaches both P1 (via X) and P1' (via Y); Y is
        // listed first, so the DFS meets P1' first.
        let c = Committee::standard(1, Mode::PartialSync);
        let mut dag = Dag::new(&c);
        let g = dag.round_refs(0).to_vec();
        let p1 = add(&mut dag, 1, 1, &g, 0);
        let p1p = add(&mut dag, 1, 1, &g, 1);
        let others: Vec<_> = [0, 2, 3, 4].iter().map(|a| add(&mut dag, *a, 1, &g, 0)).collect();
        let mut x_parents = vec![p1];
        x_parents.extend(&others);
        let mut y_parents = vec![p1p];
        y_parents.extend(&others);
        let x = add(&mut dag, 2, 2, &x_parents, 0);
        let y = add(&mut dag, 3, 2, &y_parents, 0);
        let rest: Vec<_> = [0, 4, 5].iter().map(|a| add(&mut dag, *a, 2, &x_parents, 0)).collect();
        let mut s_parents = vec![y, x];
        s_parents.extend(&rest);
        let support = add(&mut dag, 0, 3, &s_parents, 0);
        assert!(dag.is_vote(&support, &p1p).unwrap());
        assert!(!dag.is_vote(&support, &p1).unwrap());
        assert!(dag.link(&p1, &support).unwrap());
        assert!(dag.link(&p1p, &support).unwrap());
    }

    #[test]
    fn vote_equals_link_for_adjacent_rounds() {
        let f = vote_fixture();
        let d = &f.dag;
        for r in 1..=3 {
            for lo in d.round_refs(r - 1) {
                for hi in d.round_refs(r) {
                    assert_eq!(d.is_vote(hi, lo).unwrap(), d.link(lo, hi).unwrap(), "{lo:?} {hi:?}");
                }
            }
        }
    }

    #[test]
    fn dump_is_sorted_and_complete() {
        let f = vote_fixture();
        let dump = f.dag.dump();
        assert_eq!(dump.lines().count(), f.dag.len());
        let first = dump.lines().next().unwrap();
        let fields: Vec<_> = first.split(' ').collect();
        assert_eq!(fields.len(), 4);
        assert_eq!(fields[2], "0");
        assert_eq!(fields[3], "-");
        let last = dump.lines().last().unwrap();
        assert!(last.split(' ').nth(2) == Some("3"));
    }
}
