// SPDX-License-Identifier: Apache-2.0

use std::sync::Arc;

use super::*;
use crate::block::{validate_block, Block, Signer};
use crate::dag::tests::{add, vote_fixture, v};
use crate::types::{Mode, ValidatorId};

fn psync_schedule(f: usize, leaders: u64) -> Schedule {
    Schedule::new(Committee::standard(f, Mode::PartialSync), leaders, Coin::new(0))
}

fn pick(round: &[BlockRef], authors: &[u32]) -> Vec<BlockRef> {
    authors.iter().map(|a| *round.iter().find(|b| b.author.0 == *a).expect("author present")).collect()
}

/// Six validators, two slots per round, R = 2. Slot labels: L0a/L0b at R,
/// L1a/L1b at R+1, L2a/L2b at R+2, L3a/L3b at R+3.
struct MixedFixture {
    dag: Dag,
    r: [Vec<BlockRef>; 6],
}

const R: Round = 2;

fn mixed_fixture() -> MixedFixture {
    let c = Committee::standard(1, Mode::PartialSync);
    let mut dag = Dag::new(&c);
    let g = dag.round_refs(0).to_vec();
    let r1: Vec<_> = (0..6).map(|a| add(&mut dag, a, 1, &g, 0)).collect();
    let r2: Vec<_> = (0..6).map(|a| add(&mut dag, a, R, &r1, 0)).collect();
    // R+1: v0, v1, v3 omit B(v2,R); v4, v5 omit B(v3,R); v2 references all.
    let r3_parents: [&[u32]; 6] =
        [&[0, 1, 3, 4, 5], &[0, 1, 3, 4, 5], &[0, 1, 2, 3, 4, 5], &[0, 1, 3, 4, 5], &[0, 1, 2, 4, 5], &[0, 1, 2, 4, 5]];
    let r3: Vec<_> = (0..6).map(|a| add(&mut dag, a, R + 1, &pick(&r2, r3_parents[a as usize]), 0)).collect();
    // R+2: v0, v1, v5 omit B(v4,R+1); v3 omits B(v5,R+1).
    let r4_parents: [&[u32]; 6] =
        [&[0, 1, 2, 3, 5], &[0, 1, 2, 3, 5], &[0, 1, 2, 3, 4, 5], &[0, 1, 2, 3, 4], &[0, 1, 2, 3, 4, 5], &[0, 1, 2, 3, 5]];
    let r4: Vec<_> = (0..6).map(|a| add(&mut dag, a, R + 2, &pick(&r3, r4_parents[a as usize]), 0)).collect();
    // R+3: v4 silent; everyone else omits B(v4,R+2).
    let r5: Vec<_> = [0, 1, 2, 3, 5].iter().map(|a| add(&mut dag, *a, R + 3, &pick(&r4, &[0, 1, 2, 3, 5]), 0)).collect();
    MixedFixture { dag, r: [g, r1, r2, r3, r4, r5] }
}

impl MixedFixture {
    fn b(&self, author: u32, round: Round) -> BlockRef {
        pick(&self.r[round as usize], &[author])[0]
    }
}

#[test]
fn mixed_blocks_are_valid() {
    let f = mixed_fixture();
    let c = Committee::standard(1, Mode::PartialSync);
    for r in 0..=R + 3 {
        for b in f.dag.round_blocks(r) {
            assert_eq!(validate_block(b, &c), Ok(()), "{b:?}");
        }
    }
}

#[test]
fn mixed_direct_rule() {
    let f = mixed_fixture();
    let s = psync_schedule(1, 2);
    assert_eq!(try_direct_decide(&f.dag, LeaderSlot::new(R + 2, 1), &s), Verdict::Commit(f.b(5, R + 2)));
    assert_eq!(try_direct_decide(&f.dag, LeaderSlot::new(R + 2, 0), &s), Verdict::Skip);
    assert_eq!(try_direct_decide(&f.dag, LeaderSlot::new(R + 1, 0), &s), Verdict::Commit(f.b(3, R + 1)));
    // L0b: 4 supports, 2 non-supports.
    let t = tally_votes(&f.dag, &s.committee, &f.b(3, R), None);
    assert_eq!(t, Tally { supports: 4, non_supports: 2 });
    assert_eq!(try_direct_decide(&f.dag, LeaderSlot::new(R, 1), &s), Verdict::Undecided);
    assert_eq!(try_direct_decide(&f.dag, LeaderSlot::new(R, 0), &s), Verdict::Undecided);
}

#[test]
fn mixed_indirect_rule() {
    let f = mixed_fixture();
    let s = psync_schedule(1, 2);
    let anchor = f.b(5, R + 2);
    let weak = tally_votes(&f.dag, &s.committee, &f.b(3, R), Some(&anchor));
    assert!(weak.supports >= 3);
    for voter in [0, 1, 2] {
        assert!(f.dag.is_vote(&f.b(voter, R + 1), &f.b(3, R)).unwrap());
        assert!(f.dag.link(&f.b(voter, R + 1), &anchor).unwrap());
    }
    let none = tally_votes(&f.dag, &s.committee, &f.b(2, R), Some(&anchor));
    assert!(none.supports < 3);

    let later: Vec<_> = try_decide(&f.dag, R, R + 3, &s).into_iter().skip(0).collect();
    assert_eq!(later[0].slot, LeaderSlot::new(R + 1, 0));
    let l0b = try_indirect_decide(&f.dag, LeaderSlot::new(R, 1), &later, &s).unwrap();
    assert_eq!(l0b, Verdict::Commit(f.b(3, R)));
    let mut from_l0b = vec![SlotDecision { slot: LeaderSlot::new(R, 1), verdict: l0b }];
    from_l0b.extend(later.iter().copied());
    let l0a = try_indirect_decide(&f.dag, LeaderSlot::new(R, 0), &from_l0b, &s).unwrap();
    assert_eq!(l0a, Verdict::Skip);
}

#[test]
fn mixed_try_decide() {
    let f = mixed_fixture();
    let s = psync_schedule(1, 2);
    let got: Vec<_> = try_decide(&f.dag, R - 1, R + 3, &s).iter().map(|d| d.verdict).collect();
    let expected = vec![
        Verdict::Skip,
        Verdict::Commit(f.b(3, R)),
        Verdict::Commit(f.b(3, R + 1)),
        Verdict::Undecided,
        Verdict::Skip,
        Verdict::Commit(f.b(5, R + 2)),
        Verdict::Undecided,
        Verdict::Undecided,
    ];
    assert_eq!(got, expected);
}

#[test]
fn mixed_commit_sequence() {
    let f = mixed_fixture();
    let s = psync_schedule(1, 2);
    let decisions = try_decide(&f.dag, R - 1, R + 3, &s);
    let history = (0..R).flat_map(|r| f.dag.round_refs(r).iter().map(|b| b.digest).collect::<Vec<_>>());
    let mut lin = Linearizer::with_delivered(history);
    let out = rules::extend_commit_sequence_with(&f.dag, &decisions, &mut lin);
    assert_eq!(out.committed_leaders, vec![f.b(3, R), f.b(3, R + 1)]);
    let expected = vec![f.b(3, R), f.b(0, R), f.b(1, R), f.b(4, R), f.b(5, R), f.b(3, R + 1)];
    assert_eq!(out.delivery_sequence, expected);
}

#[test]
fn mixed_trace() {
    let f = mixed_fixture();
    let s = psync_schedule(1, 2);
    let trace: Vec<_> = try_decide(&f.dag, R - 1, R + 3, &s).iter().map(SlotDecision::trace_line).collect();
    assert_eq!(trace[0], "2 0 skip");
    assert_eq!(trace[1], format!("2 1 commit v3 {}", f.b(3, R).digest));
    assert_eq!(trace[3], "3 1 undecided");
}

#[test]
fn mixed_incremental_committer_agrees() {
    let f = mixed_fixture();
    let mut c = Committer::new(psync_schedule(1, 2));
    let delta = c.update(&f.dag);
    let leaders: Vec<_> = delta.output.committed_leaders.iter().filter(|b| b.round >= R).copied().collect();
    assert_eq!(leaders, vec![f.b(3, R), f.b(3, R + 1)]);
    assert_eq!(c.next_slot(), LeaderSlot::new(R + 1, 1));
    assert!(c.update(&f.dag).is_empty());
    assert!(c.audit(&f.dag).is_empty());
}

#[test]
fn fixture_tallies() {
    let f = vote_fixture();
    let c = Committee::standard(1, Mode::PartialSync);
    assert_eq!(tally_votes(&f.dag, &c, &f.p[0], None), Tally { supports: 5, non_supports: 1 });
    assert_eq!(tally_votes(&f.dag, &c, &f.p[5], None), Tally { supports: 1, non_supports: 5 });
    assert_eq!(tally_votes(&f.dag, &c, &f.p[1], None), Tally { supports: 5, non_supports: 1 });
    assert_eq!(tally_votes(&f.dag, &c, &f.p1_prime, None), Tally { supports: 1, non_supports: 5 });
}

#[test]
fn no_decision_blocks_tally_zero() {
    let f = vote_fixture();
    let c = Committee::standard(1, Mode::PartialSync);
    assert_eq!(tally_votes(&f.dag, &c, &f.votes[0], None), Tally::default());
}

#[test]
fn decision_round_equivocators_count_on_neither_side() {
    let mut f = vote_fixture();
    let c = Committee::standard(1, Mode::PartialSync);
    // A second round-3 block by v0 that does not vote for P0.
    let parents = [f.p[1], f.p[2], f.p[3], f.p[4], f.p[5]];
    add(&mut f.dag, 0, 3, &parents, 9);
    assert_eq!(tally_votes(&f.dag, &c, &f.p[0], None), Tally { supports: 4, non_supports: 1 });
}

#[test]
fn leader_schedule() {
    let c = Committee::standard(1, Mode::PartialSync);
    assert_eq!(leader_of(LeaderSlot::new(4, 0), &c, None), Ok(v(4)));
    assert_eq!(leader_of(LeaderSlot::new(4, 1), &c, None), Ok(v(5)));
    assert_eq!(leader_of(LeaderSlot::new(6, 0), &c, None), Ok(v(0)));
    let a = Committee::standard(1, Mode::Async);
    for word in [0, 3, u64::MAX] {
        let ranks: std::collections::BTreeSet<_> =
            (0..6).map(|rank| leader_of(LeaderSlot::new(9, rank), &a, Some(CoinOutput(word))).unwrap()).collect();
        assert_eq!(ranks.len(), 6);
        let wrapped = leader_of(LeaderSlot::new(9, 7), &a, Some(CoinOutput(word)));
        assert_eq!(wrapped, leader_of(LeaderSlot::new(9, 1), &a, Some(CoinOutput(word))));
    }
    assert_eq!(leader_of(LeaderSlot::new(9, 1), &a, None), Err(CoinUnavailable(LeaderSlot::new(9, 1))));
}

#[test]
fn async_leader_pairs_are_uniform() {
    // Two ranks per wave should hit each of the 15 unordered pairs of six
    // members equally often. Chi-square with 14 degrees of freedom, 0.999
    // quantile 36.123.
    let a = Committee::standard(1, Mode::Async);
    let coin = Coin::new(5);
    let shares: Vec<_> = (0..2).map(|i| crate::block::CoinShare { author: v(i), round: 0 }).collect();
    let mut counts = std::collections::BTreeMap::new();
    let waves = 6000u64;
    for w in 0..waves {
        let r = 3 * w + 2;
        let s: Vec<_> = shares.iter().map(|x| crate::block::CoinShare { round: r, ..*x }).collect();
        let out = coin.combine_coin_shares(&s, r, &a).unwrap();
        let x = leader_of(LeaderSlot::new(r - 2, 0), &a, Some(out)).unwrap();
        let y = leader_of(LeaderSlot::new(r - 2, 1), &a, Some(out)).unwrap();
        assert_ne!(x, y);
        *counts.entry((x.min(y), x.max(y))).or_insert(0u64) += 1;
    }
    assert_eq!(counts.len(), 15);
    let expected = waves as f64 / 15.0;
    let chi2: f64 = counts.values().map(|&k| (k as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < 36.123, "chi2 = {chi2}");
}

#[test]
fn leader_blocks() {
    let f = vote_fixture();
    let s = psync_schedule(1, 2);
    // Round 2: rank 0 is v2, rank 1 is v3. Round 1 rank 1 is v2.
    let single = get_leader_blocks(&f.dag, LeaderSlot::new(2, 0), &s).unwrap();
    assert_eq!(single.len(), 1);
    // Slot (1, 0) belongs to v1; add nothing. Slot (2, x) with v1: use a
    // schedule where v1 leads round 2.
    let shifted = Schedule::new(Committee::new((0..6).map(|i| v((i + 5) % 6)).collect(), 1, Mode::PartialSync).unwrap(), 2, Coin::new(0));
    let both = get_leader_blocks(&f.dag, LeaderSlot::new(2, 0), &shifted).unwrap();
    assert_eq!(both.iter().map(|b| b.author()).collect::<Vec<_>>(), vec![v(1), v(1)]);
    assert!(both[0].digest() < both[1].digest());
    let empty = get_leader_blocks(&f.dag, LeaderSlot::new(7, 0), &s).unwrap();
    assert!(empty.is_empty());
}

#[test]
fn direct_rule_thresholds() {
    // Supports 4, non-supports 2 stays undecided for f = 1.
    let f = mixed_fixture();
    let s = psync_schedule(1, 2);
    assert_eq!(try_direct_decide(&f.dag, LeaderSlot::new(R, 1), &s), Verdict::Undecided);
    // the vote fixture: P0 has 5 supports.
    let f2 = vote_fixture();
    let one = psync_schedule(1, 1);
    let p0_slot = Schedule::new(Committee::new((0..6).map(|i| v((i + 4) % 6)).collect(), 1, Mode::PartialSync).unwrap(), 1, Coin::new(0));
    assert_eq!(try_direct_decide(&f2.dag, LeaderSlot::new(2, 0), &p0_slot), Verdict::Commit(f2.p[0]));
    let _ = one;
}

#[test]
fn missing_leader_is_skipped_with_a_strong_quorum() {
    // Nobody references v2's round-1 block because it never existed.
    let c = Committee::standard(1, Mode::PartialSync);
    let mut dag = Dag::new(&c);
    let g = dag.round_refs(0).to_vec();
    let r1: Vec<_> = [0, 1, 3, 4, 5].iter().map(|a| add(&mut dag, *a, 1, &g, 0)).collect();
    let s = psync_schedule(1, 1);
    // Slot (2, 0) belongs to v2 which never proposed at round 2 either.
    for a in [0, 1, 3, 4] {
        add(&mut dag, a, 2, &r1, 0);
    }
    assert_eq!(try_direct_decide(&dag, LeaderSlot::new(2, 0), &s), Verdict::Undecided);
    let r2 = dag.round_refs(2).to_vec();
    for a in [0, 1, 3, 4, 5] {
        add(&mut dag, a, 3, &r2, 0);
    }
    assert_eq!(try_direct_decide(&dag, LeaderSlot::new(2, 0), &s), Verdict::Skip);
}

#[test]
fn indirect_with_undecided_anchor() {
    let f = mixed_fixture();
    let s = psync_schedule(1, 2);
    // L1b's only candidate anchors sit at R+3, which is undecided.
    let later: Vec<_> = try_decide(&f.dag, R + 1, R + 3, &s);
    assert_eq!(try_indirect_decide(&f.dag, LeaderSlot::new(R + 1, 1), &later, &s), Ok(Verdict::Undecided));
}

#[test]
fn indirect_rejects_gaps() {
    let f = mixed_fixture();
    let s = psync_schedule(1, 2);
    let later: Vec<_> = try_decide(&f.dag, R + 1, R + 3, &s).into_iter().skip(1).collect();
    let slot = LeaderSlot::new(R + 1, 1);
    assert_eq!(try_indirect_decide(&f.dag, slot, &later, &s), Err(MissingDecisions(slot)));
}

#[test]
fn empty_dag_is_undecided() {
    let c = Committee::standard(1, Mode::PartialSync);
    let dag = Dag::new(&c);
    let s = psync_schedule(1, 2);
    let out = try_decide(&dag, 0, 3, &s);
    assert_eq!(out.len(), 6);
    assert!(out.iter().all(|d| d.verdict == Verdict::Undecided));
}

#[test]
fn extend_stops_at_first_undecided() {
    let f = vote_fixture();
    let a = f.p[0];
    let b = f.p[2];
    let d = |round, verdict| SlotDecision { slot: LeaderSlot::new(round, 0), verdict };
    let out = extend_commit_sequence(&f.dag, &[d(1, Verdict::Skip), d(2, Verdict::Undecided), d(3, Verdict::Commit(b))]);
    assert!(out.committed_leaders.is_empty());
    let out = extend_commit_sequence(&f.dag, &[d(1, Verdict::Commit(a)), d(2, Verdict::Skip), d(3, Verdict::Commit(b))]);
    assert_eq!(out.committed_leaders, vec![a, b]);
}

#[test]
fn linearize_chain_and_shared_history() {
    let c = Committee::standard(0, Mode::PartialSync);
    let mut dag = Dag::new(&c);
    let g = dag.round_refs(0)[0];
    let m = add(&mut dag, 0, 1, &[g], 0);
    let top = add(&mut dag, 0, 2, &[m], 0);
    assert_eq!(linearize_sub_dags(&[top], &dag), vec![g, m, top]);

    let f = vote_fixture();
    let seq = linearize_sub_dags(&[f.votes[0], f.votes[1]], &f.dag);
    let mut seen = std::collections::HashSet::new();
    assert!(seq.iter().all(|b| seen.insert(b.digest)));
    // Only v1's vote is new in the second batch: the first covered P0..P4.
    assert_eq!(*seq.last().unwrap(), f.votes[1]);
    assert_eq!(seq[seq.len() - 2], f.votes[0]);
}

#[test]
fn linearization_respects_causality() {
    let f = mixed_fixture();
    let seq = linearize_sub_dags(&[f.b(5, R + 3)], &f.dag);
    let pos: std::collections::HashMap<_, _> = seq.iter().enumerate().map(|(i, b)| (b.digest, i)).collect();
    for b in &seq {
        for p in f.dag.get(&b.digest).unwrap().parents() {
            assert!(pos[&p.digest] < pos[&b.digest]);
        }
    }
}

#[test]
fn committer_cache_matches_batch_rules() {
    // Feed the mixed fixture one block at a time; the final verdicts must match a
    // batch evaluation over the full DAG.
    let f = mixed_fixture();
    let s = psync_schedule(1, 2);
    let c = Committee::standard(1, Mode::PartialSync);
    let mut dag = Dag::new(&c);
    let mut committer = Committer::new(s.clone());
    for r in 1..=R + 3 {
        for b in f.dag.round_blocks(r) {
            dag.insert_block(b.clone());
            committer.update(&dag);
        }
    }
    let batch = try_decide(&f.dag, 0, R + 3, &s);
    for d in batch {
        if d.verdict.is_final() {
            assert_eq!(committer.verdict(d.slot), d.verdict, "{:?}", d.slot);
        }
    }
}

#[test]
fn async_leader_needs_coin_shares() {
    let c = Committee::standard(1, Mode::Async);
    let s = Schedule::new(c.clone(), 2, Coin::new(5));
    let mut dag = Dag::new(&c);
    let g = dag.round_refs(0).to_vec();
    let mk = |a: u32, r: Round, parents: &[BlockRef]| {
        Arc::new(Block::new(
            ValidatorId(a),
            r,
            parents.to_vec(),
            vec![],
            Some(crate::block::CoinShare { author: ValidatorId(a), round: r }),
            &Signer::new(ValidatorId(a)),
        ))
    };
    let r1: Vec<_> = (0..6).map(|a| mk(a, 1, &g)).collect();
    for b in &r1 {
        dag.insert_block(b.clone());
    }
    let r1: Vec<_> = r1.iter().map(|b| b.reference()).collect();
    let r2: Vec<_> = (0..6).map(|a| mk(a, 2, &r1)).collect();
    for b in &r2 {
        dag.insert_block(b.clone());
    }
    let r2: Vec<_> = r2.iter().map(|b| b.reference()).collect();
    let slot = LeaderSlot::new(1, 0);
    assert_eq!(get_leader_blocks(&dag, slot, &s).unwrap_err(), CoinUnavailable(slot));
    dag.insert_block(mk(0, 3, &r2));
    assert!(get_leader_blocks(&dag, slot, &s).is_err());
    dag.insert_block(mk(1, 3, &r2));
    assert_eq!(get_leader_blocks(&dag, slot, &s).unwrap().len(), 1);
}

#[test]
fn equivocating_leader_commits_the_certified_twin() {
    // Leader v1 at round 1 proposes twins; five decision blocks vote for one
    // of them, so the other has a skip quorum but the slot must commit.
    let c = Committee::standard(1, Mode::PartialSync);
    let s = psync_schedule(1, 1);
    for favored in 0..2 {
        let mut dag = Dag::new(&c);
        let g = dag.round_refs(0).to_vec();
        let others: Vec<_> = [0, 2, 3, 4, 5].iter().map(|a| add(&mut dag, *a, 1, &g, 0)).collect();
        let twins = [add(&mut dag, 1, 1, &g, 1), add(&mut dag, 1, 1, &g, 2)];
        let (yes, no) = (twins[favored], twins[1 - favored]);
        for a in 0..5 {
            let mut parents = others[..4].to_vec();
            parents.push(yes);
            add(&mut dag, a, 2, &parents, 0);
        }
        let mut parents = others[..4].to_vec();
        parents.push(no);
        add(&mut dag, 5, 2, &parents, 0);
        assert_eq!(tally_votes(&dag, &c, &no, None).non_supports, 5);
        assert_eq!(try_direct_decide(&dag, LeaderSlot::new(1, 0), &s), Verdict::Commit(yes));
    }
}

#[test]
fn twins_skip_only_when_both_lack_support() {
    let c = Committee::standard(1, Mode::PartialSync);
    let s = psync_schedule(1, 1);
    let mut dag = Dag::new(&c);
    let g = dag.round_refs(0).to_vec();
    let others: Vec<_> = [0, 2, 3, 4, 5].iter().map(|a| add(&mut dag, *a, 1, &g, 0)).collect();
    add(&mut dag, 1, 1, &g, 1);
    add(&mut dag, 1, 1, &g, 2);
    for a in 0..6 {
        add(&mut dag, a, 2, &others, 0);
    }
    assert_eq!(try_direct_decide(&dag, LeaderSlot::new(1, 0), &s), Verdict::Skip);
    // Two decision blocks for a twin leave it without a skip quorum.
    let mut dag2 = Dag::new(&c);
    let g = dag2.round_refs(0).to_vec();
    let others: Vec<_> = [0, 2, 3, 4, 5].iter().map(|a| add(&mut dag2, *a, 1, &g, 0)).collect();
    let t0 = add(&mut dag2, 1, 1, &g, 1);
    add(&mut dag2, 1, 1, &g, 2);
    for a in 0..4 {
        add(&mut dag2, a, 2, &others, 0);
    }
    for a in 4..6 {
        add(&mut dag2, a, 2, &[others[0], others[1], others[2], others[3], t0], 0);
    }
    assert_eq!(try_direct_decide(&dag2, LeaderSlot::new(1, 0), &s), Verdict::Undecided);
}

#[test]
fn anchored_tally_ignores_twins_outside_the_anchor() {
    // v2 has two decision blocks but the anchor links to only one, so v2
    // counts whether or not the other twin is stored locally.
    let c = Committee::standard(1, Mode::PartialSync);
    let mut dag = Dag::new(&c);
    let g = dag.round_refs(0).to_vec();
    let r1: Vec<_> = (0..6).map(|a| add(&mut dag, a, 1, &g, 0)).collect();
    let leader = r1[1];
    let without: Vec<_> = [0, 2, 3, 4, 5].iter().map(|a| r1[*a]).collect();
    let v1 = add(&mut dag, 1, 2, &r1[..5], 0);
    let t1 = add(&mut dag, 2, 2, &r1[..5], 1);
    let v3 = add(&mut dag, 3, 2, &r1[..5], 0);
    let v4 = add(&mut dag, 4, 2, &without, 0);
    let v5 = add(&mut dag, 5, 2, &without, 0);
    let anchor = add(&mut dag, 3, 3, &[v1, t1, v3, v4, v5], 0);
    let before = tally_votes(&dag, &c, &leader, Some(&anchor));
    add(&mut dag, 2, 2, &r1[..5], 2);
    let after = tally_votes(&dag, &c, &leader, Some(&anchor));
    assert_eq!(before.supports, c.weak_quorum());
    assert_eq!(after, before);
    // Without an anchor the equivocator counts on neither side.
    assert_eq!(tally_votes(&dag, &c, &leader, None), Tally { supports: 2, non_supports: 2 });
}
