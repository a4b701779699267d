// SPDX-License-Identifier: Apache-2.0

//! Property tests for the decision rules and committee arithmetic.

use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dagbft::block::{Block, BlockRef, Signer};
use dagbft::committer::{
    leader_of, validate_stake_split, Coin, CoinOutput, Committer, LeaderSlot, Schedule, Verdict,
};
use dagbft::dag::Dag;
use dagbft::types::{Committee, Mode, Round, ValidatorId};

/// Random history for `n = 6`: every author proposes each round with a
/// random quorum of parents; `equivocator` proposes two blocks per round.
fn random_history(rng: &mut ChaCha8Rng, rounds: Round, equivocator: Option<u32>) -> Vec<Arc<Block>> {
    let c = Committee::standard(1, Mode::PartialSync);
    let quorum = c.strong_quorum();
    let mut prev: BTreeMap<ValidatorId, Vec<BlockRef>> =
        c.members().iter().map(|m| (*m, vec![Block::genesis(*m).reference()])).collect();
    let mut out = Vec::new();
    for r in 1..=rounds {
        let mut next: BTreeMap<ValidatorId, Vec<BlockRef>> = BTreeMap::new();
        for &me in c.members() {
            let copies = if equivocator == Some(me.0) { 2 } else { 1 };
            for copy in 0..copies {
                let mut authors: Vec<ValidatorId> = c.members().iter().copied().filter(|a| *a != me).collect();
                let extra = rng.gen_range(quorum - 1..=authors.len());
                for i in 0..authors.len() {
                    let j = rng.gen_range(i..authors.len());
                    authors.swap(i, j);
                }
                authors.truncate(extra);
                authors.push(me);
                let parents: Vec<BlockRef> = authors
                    .iter()
                    .map(|a| {
                        let options = &prev[a];
                        options[rng.gen_range(0..options.len())]
                    })
                    .collect();
                let b = Arc::new(Block::new(me, r, parents, vec![vec![copy as u8]], None, &Signer::new(me)));
                next.entry(me).or_default().push(b.reference());
                out.push(b);
            }
        }
        prev = next;
    }
    out
}

/// Verdicts a node reaches when it sees a random causally closed part of
/// `history`, updating after every round.
fn view_verdicts(rng: &mut ChaCha8Rng, history: &[Arc<Block>], keep: f64, l: u64) -> BTreeMap<LeaderSlot, Verdict> {
    let c = Committee::standard(1, Mode::PartialSync);
    let mut dag = Dag::new(&c);
    let mut committer = Committer::new(Schedule::new(c, l, Coin::new(0)));
    let mut round = 1;
    for b in history {
        if b.round() != round {
            committer.update(&dag);
            round = b.round();
        }
        if rng.gen_bool(keep) && b.parents().iter().all(|p| dag.contains(&p.digest)) {
            dag.insert_block(b.clone());
        }
    }
    committer.update(&dag);
    assert!(committer.audit(&dag).is_empty(), "cached verdicts disagree with a fresh evaluation");
    committer.finals().map(|d| (d.slot, d.verdict)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn views_never_disagree_on_a_final_verdict(seed in any::<u64>(), equivocate in any::<bool>(), l in 1u64..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let history = random_history(&mut rng, 10, equivocate.then_some(2));
        let views: Vec<_> = [1.0, 0.95, 0.9, 0.85].iter().map(|k| view_verdicts(&mut rng, &history, *k, l)).collect();
        for a in &views {
            for b in &views {
                for (slot, va) in a {
                    if let Some(vb) = b.get(slot) {
                        prop_assert_eq!(va, vb, "slot {:?}", slot);
                    }
                }
            }
        }
    }

    #[test]
    fn stake_split_threshold(total in 2u64..=1_000_000_000_000) {
        // ceil(5(S-1)/6) in wide arithmetic.
        let required = ((5 * (total as u128 - 1) + 5) / 6) as u64;
        prop_assert!(validate_stake_split(total, required).is_ok());
        prop_assert!(validate_stake_split(total, required - 1).is_err());
        prop_assert!(6 * required as u128 >= 5 * (total as u128 - 1));
    }

    #[test]
    fn quorum_intersections(f in 1usize..200) {
        let c = Committee::standard(f, Mode::PartialSync);
        let n = c.size();
        prop_assert_eq!(n, 5 * f + 1);
        // Two strong quorums share an honest member even with 3f corrupt.
        prop_assert!(2 * c.strong_quorum() - n > 3 * f);
        // A strong and a weak quorum share f + 1 members.
        prop_assert_eq!(c.strong_quorum() + c.weak_quorum() - n, f + 1);
        prop_assert_eq!(c.coin_threshold(), f + 1);
    }

    #[test]
    fn reduced_committee_budget(f in 1usize..40, removed in 0usize..20) {
        let c = Committee::standard(f, Mode::PartialSync);
        let gone: Vec<ValidatorId> = c.members().iter().copied().take(removed.min(c.size() - 1)).collect();
        let r = c.without(&gone);
        prop_assert_eq!(r.size(), c.size() - gone.len());
        prop_assert!(5 * r.f() < r.size());
        prop_assert!(5 * (r.f() + 1) + 1 > r.size());
    }

    #[test]
    fn async_wave_leaders_are_distinct(word in any::<u64>(), f in 1usize..5) {
        let c = Committee::standard(f, Mode::Async);
        let leaders: std::collections::BTreeSet<_> = (0..c.size() as u64)
            .map(|rank| leader_of(LeaderSlot::new(7, rank), &c, Some(CoinOutput(word))).unwrap())
            .collect();
        prop_assert_eq!(leaders.len(), c.size());
    }
}
