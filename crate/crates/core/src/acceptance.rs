// SPDX-License-Identifier: Apache-2.0

//! End-to-end acceptance checks. Each criterion runs its own simulations and
//! reports what it measured against the bound it enforces.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::block::{Block, BlockRef, Signer};
use crate::committer::{slot_leader, tally_votes, validate_stake_split, Coin, LeaderSlot, Rule, Schedule, Tally};
use crate::dag::Dag;
use crate::guard::{guard_fault_budget, is_valid_blameset, BlameKind};
use crate::scenario::{find, FaultEntry, Scenario};
use crate::simnet::{coin_seed, Fault, LogEntry, NetworkModel, RunRecord, Sim};
use crate::types::{Committee, Mode, Round, Time, ValidatorId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Report {
    pub id: u8,
    pub title: &'static str,
    pub measured: String,
    pub bound: String,
    pub pass: bool,
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "[{verdict}] {:>2} {}: {} (bound: {})", self.id, self.title, self.measured, self.bound)
    }
}

pub const CRITERIA: u8 = 10;

/// Runs every criterion in order.
pub fn run_all() -> Vec<Report> {
    run_selected(&(1..=CRITERIA).collect::<Vec<_>>())
}

/// Runs criterion `id`. The two fast-path criteria share their runs, so
/// asking for either returns both.
pub fn run_one(id: u8) -> Vec<Report> {
    match id {
        1 | 2 => fast_path(),
        3 => vec![safety()],
        4 => vec![liveness_window()],
        5 => vec![quorum_math()],
        6 => vec![liveness_recovery()],
        7 => vec![safety_recovery()],
        8 => vec![no_false_alarms()],
        9 => vec![async_combinatorics()],
        10 => vec![stake_split()],
        _ => Vec::new(),
    }
}

/// Named groups of criteria.
pub const SUITES: [(&str, &[u8]); 9] = [
    ("all", &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]),
    ("fast-path", &[1, 2]),
    ("safety", &[3]),
    ("liveness", &[4]),
    ("quorum-math", &[5]),
    ("guard", &[6, 7]),
    ("false-alarms", &[8]),
    ("async", &[9]),
    ("stake", &[10]),
];

/// Criteria selected by a suite name or a criterion number.
pub fn suite(name: &str) -> Option<Vec<u8>> {
    if let Ok(id) = name.parse::<u8>() {
        return (1..=CRITERIA).contains(&id).then(|| vec![id]);
    }
    SUITES.iter().find(|(n, _)| *n == name).map(|(_, ids)| ids.to_vec())
}

/// Runs the given criteria once each, in ascending order.
pub fn run_selected(ids: &[u8]) -> Vec<Report> {
    let wanted: BTreeSet<u8> = ids.iter().copied().collect();
    let mut out: Vec<Report> = Vec::new();
    for id in &wanted {
        if out.iter().any(|r| r.id == *id) {
            continue;
        }
        out.extend(run_one(*id).into_iter().filter(|r| wanted.contains(&r.id)));
    }
    out.sort_by_key(|r| r.id);
    out
}

fn run(sc: &Scenario, seed: u64) -> RunRecord {
    Sim::new(sc, seed).unwrap_or_else(|e| panic!("{}: {e}", sc.name)).run()
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

#[derive(Default)]
struct FastPath {
    complete: u64,
    direct: u64,
    late_triggers: u64,
    latency: BTreeMap<u64, u64>,
    elapsed: Duration,
}

impl FastPath {
    fn share(&self) -> f64 {
        self.direct as f64 / self.complete.max(1) as f64
    }

    fn modal(&self) -> u64 {
        crate::metrics::Metrics { commit_latency_rounds: self.latency.clone(), ..Default::default() }
            .modal_latency_rounds()
            .unwrap_or(0)
    }
}

const FAST_PATH_SEEDS: u64 = 20;

fn measure_fast_path(sc: &Scenario) -> FastPath {
    let start = Instant::now();
    let wl = sc.mode.wave_length();
    let mut out = FastPath::default();
    for seed in 1..=FAST_PATH_SEEDS {
        let r = run(sc, seed);
        let mut direct: BTreeSet<(ValidatorId, LeaderSlot)> = BTreeSet::new();
        for e in r.decisions(1) {
            let LogEntry::Decided { node, slot, commit: Some(_), rule: Rule::Direct, trigger_round, .. } = e else {
                continue;
            };
            direct.insert((*node, *slot));
            if *trigger_round != slot.round + wl - 1 {
                out.late_triggers += 1;
            }
            *out.latency.entry(crate::metrics::latency_rounds(slot.round, *trigger_round)).or_default() += 1;
        }
        for v in r.honest_validators(1) {
            // A slot is complete once its decision round lies below the node's last round.
            for round in (1..).take_while(|round| round + wl - 1 < v.final_round) {
                for rank in 0..sc.leaders_per_round {
                    out.complete += 1;
                    out.direct += u64::from(direct.contains(&(v.id, LeaderSlot::new(round, rank))));
                }
            }
        }
    }
    out.elapsed = start.elapsed();
    out
}

fn fast_path() -> Vec<Report> {
    let budget = Duration::from_secs(60);
    let mut sync = Vec::new();
    let mut asy = Vec::new();
    for f in [1, 2, 6] {
        let sc = find(&format!("fault-free-f{f}")).expect("catalog");
        sync.push((f, measure_fast_path(&sc)));
        asy.push((f, measure_fast_path(&sc.with_mode(Mode::Async))));
    }
    let describe = |runs: &[(usize, FastPath)]| {
        runs.iter()
            .map(|(f, m)| {
                format!(
                    "f={f}: {:.2}% direct, {} off-round triggers, modal {} delays, {}",
                    100.0 * m.share(),
                    m.late_triggers,
                    m.modal(),
                    secs(m.elapsed)
                )
            })
            .collect::<Vec<_>>()
            .join("; ")
    };
    let c1 = Report {
        id: 1,
        title: "fault-free commit path",
        measured: describe(&sync),
        bound: ">= 99% direct, every direct verdict upon propose+1 blocks, < 60s per config".into(),
        pass: sync.iter().all(|(_, m)| m.share() >= 0.99 && m.late_triggers == 0 && m.elapsed < budget),
    };
    let ratios: Vec<String> =
        sync.iter().zip(&asy).map(|((f, s), (_, a))| format!("f={f}: {}/{}", a.modal(), s.modal())).collect();
    let c2 = Report {
        id: 2,
        title: "async latency delta",
        measured: format!("{}; modal ratios {}", describe(&asy), ratios.join(", ")),
        bound: "every direct verdict upon propose+2 blocks, modal async/sync = 3/2".into(),
        pass: sync.iter().zip(&asy).all(|((_, s), (_, a))| {
            a.late_triggers == 0 && a.direct > 0 && s.modal() > 0 && 2 * a.modal() == 3 * s.modal()
        }),
    };
    vec![c1, c2]
}

/// Network variants for the safety sweep, with whether guards run.
fn safety_networks(delta: Time) -> [(Mode, NetworkModel, bool); 3] {
    [
        (Mode::PartialSync, NetworkModel::PartialSynchrony { gst: 0, delta }, true),
        (Mode::PartialSync, NetworkModel::PartialSynchrony { gst: 15 * delta, delta }, false),
        (Mode::Async, NetworkModel::Asynchronous { cap: delta, adversarial: true }, true),
    ]
}

fn safety() -> Report {
    let start = Instant::now();
    let base = find("crash-leader").expect("catalog");
    let faults = [
        FaultEntry { validator: ValidatorId(1), fault: Fault::Crash { after: 10 } },
        FaultEntry { validator: ValidatorId(2), fault: Fault::Equivocate },
        FaultEntry { validator: ValidatorId(3), fault: Fault::WithholdVotes { targets: vec![ValidatorId(1)] } },
    ];
    let (mut runs, mut prefix, mut conflicts, mut unsound) = (0u64, 0usize, 0usize, 0usize);
    for (mode, network, guards) in safety_networks(base.delta()) {
        for fault in &faults {
            let mut sc = base.clone();
            sc.name = "safety-sweep".into();
            sc.mode = mode;
            sc.network = network;
            sc.rounds = 30;
            sc.faults = vec![fault.clone()];
            if !guards {
                sc.guards = None;
            }
            for seed in 1..=100 {
                let r = run(&sc, seed);
                runs += 1;
                prefix += r.checks.prefix_violations.len();
                conflicts += r.checks.commit_skip_conflicts.len();
                unsound += usize::from(!r.checks.sound());
            }
        }
    }
    let elapsed = start.elapsed();
    Report {
        id: 3,
        title: "safety under at most f Byzantine",
        measured: format!(
            "{runs} runs: {prefix} prefix violations, {conflicts} commit/skip conflicts, {unsound} unsound runs, {}",
            secs(elapsed)
        ),
        bound: "zero violations and conflicts, < 600s".into(),
        pass: prefix == 0 && conflicts == 0 && unsound == 0 && elapsed < Duration::from_secs(600),
    }
}

fn liveness_window() -> Report {
    let mut undecided = 0u64;
    let mut late = 0u64;
    let mut worst_delay = 0u64;
    let mut worst_gap = 0u64;
    let mut gap_violations = 0u64;
    let mut checked = 0u64;
    for name in ["crash-leader", "crash-f"] {
        let sc = find(name).expect("catalog");
        let window = 2 * sc.f as u64 + 2;
        let wl = sc.mode.wave_length();
        for seed in 1..=20 {
            let r = run(&sc, seed);
            let mut decided: HashMap<(ValidatorId, LeaderSlot), Round> = HashMap::new();
            for e in r.decisions(1) {
                if let LogEntry::Decided { node, slot, dag_round, .. } = e {
                    decided.entry((*node, *slot)).or_insert(*dag_round);
                }
            }
            for v in r.honest_validators(1) {
                for round in (1..).take_while(|round| round + wl - 1 + window <= v.final_round) {
                    let d = round + wl - 1;
                    checked += 1;
                    match decided.get(&(v.id, LeaderSlot::new(round, 0))) {
                        None => undecided += 1,
                        Some(at) => {
                            worst_delay = worst_delay.max(at.saturating_sub(d));
                            late += u64::from(*at > d + window);
                        }
                    }
                }
                let mut prev = 0;
                for (slot, _) in v.sequence.iter().filter(|(_, c)| c.is_some()) {
                    let gap = slot.round - prev;
                    worst_gap = worst_gap.max(gap);
                    gap_violations += u64::from(gap > window);
                    prev = slot.round;
                }
            }
        }
    }
    Report {
        id: 4,
        title: "liveness window",
        measured: format!(
            "{checked} slots: {undecided} undecided, {late} late, worst delay {worst_delay} rounds, worst commit gap {worst_gap} rounds"
        ),
        bound: "every slot decided within 2f+2 rounds of its decision round, commit gap <= 2f+2".into(),
        pass: checked > 0 && undecided == 0 && late == 0 && gap_violations == 0,
    }
}

/// One decision-round author's stance towards a leader block.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Stance {
    Absent,
    Support,
    NonSupport,
    /// Two decision-round blocks, one on each side.
    Both,
}

/// Supports and non-supports over `stances`, counting an equivocator on
/// both sides.
fn count_both(stances: &[Stance]) -> (usize, usize, usize) {
    let both = stances.iter().filter(|s| **s == Stance::Both).count();
    let sup = stances.iter().filter(|s| matches!(s, Stance::Support | Stance::Both)).count();
    let non = stances.iter().filter(|s| matches!(s, Stance::NonSupport | Stance::Both)).count();
    (sup, non, both)
}

fn assignments(n: usize, alphabet: &[Stance]) -> impl Iterator<Item = Vec<Stance>> + '_ {
    let k = alphabet.len();
    (0..k.pow(n as u32)).map(move |mut code| {
        (0..n)
            .map(|_| {
                let s = alphabet[code % k];
                code /= k;
                s
            })
            .collect()
    })
}

/// A DAG with leader `v0` at round 1 and one round-2 block per present author.
fn vote_dag(committee: &Committee, stances: &[Stance]) -> (Dag, BlockRef) {
    let mut dag = Dag::new(committee);
    let genesis = dag.round_refs(0).to_vec();
    let r1: Vec<BlockRef> = committee
        .members()
        .iter()
        .map(|m| {
            let b = Arc::new(Block::new(*m, 1, genesis.clone(), Vec::new(), None, &Signer::new(*m)));
            dag.insert_block(b.clone());
            b.reference()
        })
        .collect();
    let leader = r1[0];
    for (m, s) in committee.members().iter().zip(stances) {
        let parents = match s {
            Stance::Absent => continue,
            Stance::Support => r1[..committee.strong_quorum()].to_vec(),
            Stance::NonSupport => r1[1..].to_vec(),
            Stance::Both => unreachable!("honest assignments only"),
        };
        dag.insert_block(Arc::new(Block::new(*m, 2, parents, Vec::new(), None, &Signer::new(*m))));
    }
    (dag, leader)
}

fn quorum_math() -> Report {
    let start = Instant::now();
    let committee = Committee::standard(1, Mode::PartialSync);
    let n = committee.size();
    let strong = committee.strong_quorum();
    let weak = committee.weak_quorum();
    let honest = [Stance::Absent, Stance::Support, Stance::NonSupport];
    let (mut honest_cases, mut honest_bad, mut tally_mismatch) = (0u64, 0u64, 0u64);
    for a in assignments(n, &honest) {
        honest_cases += 1;
        let (sup, non, _) = count_both(&a);
        if (sup >= strong && non >= strong) || (non >= strong && sup >= weak) {
            honest_bad += 1;
        }
        let (dag, leader) = vote_dag(&committee, &a);
        if tally_votes(&dag, &committee, &leader, None) != (Tally { supports: sup, non_supports: non }) {
            tally_mismatch += 1;
        }
    }
    let all = [Stance::Absent, Stance::Support, Stance::NonSupport, Stance::Both];
    let (mut cases, mut overlap_bad) = (0u64, 0u64);
    for a in assignments(n, &all) {
        cases += 1;
        let (sup, non, both) = count_both(&a);
        if sup >= strong && non >= strong && both < 2 * strong - n {
            overlap_bad += 1;
        }
        if non >= strong && sup >= weak && both < strong + weak - n {
            overlap_bad += 1;
        }
    }
    let elapsed = start.elapsed();
    Report {
        id: 5,
        title: "quorum arithmetic",
        measured: format!(
            "{honest_cases} honest assignments: {honest_bad} conflicting, {tally_mismatch} tally mismatches; \
             {cases} assignments with equivocators: {overlap_bad} below the overlap bound; {}",
            secs(elapsed)
        ),
        bound: format!(
            "no {strong}/{strong} or {strong}/{weak} split without equivocators, overlap >= {} and >= {}",
            2 * strong - n,
            strong + weak - n
        ),
        pass: honest_bad == 0 && tally_mismatch == 0 && overlap_bad == 0,
    }
}

/// Time bounds for guard recovery, in virtual time.
struct GuardBounds {
    delta: Time,
    agreement: Time,
}

impl GuardBounds {
    fn of(r: &RunRecord) -> Self {
        let t = guard_fault_budget(r.guard_count) as Time;
        Self { delta: r.guard_delta, agreement: (t + 1) * r.guard_delta }
    }
}

fn liveness_recovery() -> Report {
    let sc = find("crash-f-plus-1").expect("catalog");
    let crashed: BTreeSet<ValidatorId> = sc
        .faults
        .iter()
        .filter_map(|e| matches!(e.fault, Fault::Crash { .. }).then_some(e.validator))
        .collect();
    let crash_round = sc
        .faults
        .iter()
        .filter_map(|e| match e.fault {
            Fault::Crash { after } => Some(after),
            _ => None,
        })
        .max()
        .expect("crash faults");
    let mut failures: Vec<String> = Vec::new();
    let (mut worst_assembly, mut worst_agreed) = (0, 0);
    let seeds = 20;
    let mut bounds = None;
    for seed in 1..=seeds {
        let r = run(&sc, seed);
        let b = GuardBounds::of(&r);
        let mut fail = |what: String| failures.push(format!("seed {seed}: {what}"));
        let honest = r.honest_ids(1);

        let mut authors: BTreeMap<Round, BTreeSet<ValidatorId>> = BTreeMap::new();
        for e in &r.log {
            if let LogEntry::Created { epoch: 1, author, round, .. } = e {
                authors.entry(*round).or_default().insert(*author);
            }
        }
        let quorum = Committee::standard(sc.f, sc.mode).strong_quorum();
        if let Some((round, _)) = authors.iter().find(|(round, a)| **round > crash_round + 1 && a.len() >= quorum) {
            fail(format!("round {round} reached a quorum after the crash"));
        }

        for g in r.honest_guards() {
            let blamed: BTreeSet<ValidatorId> = r
                .log
                .iter()
                .filter_map(|e| match e {
                    LogEntry::LBlamed { guard, accused, .. } if *guard == g.id => Some(*accused),
                    _ => None,
                })
                .collect();
            if blamed != crashed {
                fail(format!("{} blamed {blamed:?}", g.id));
            }
        }

        let agreed: Vec<_> = r.honest_guards().map(|g| g.agreed.clone().flatten()).collect();
        let Some(Some(bs)) = agreed.first().cloned() else {
            fail("no agreed blameset".into());
            continue;
        };
        if agreed.iter().any(|a| a.as_ref() != Some(&bs)) {
            fail("honest guards agreed on different sets".into());
        }
        if bs.kind != BlameKind::Liveness || bs.members.len() < sc.f + 1 || bs.members.iter().any(|m| honest.contains(m)) {
            fail(format!("agreed on {:?}", bs.members));
        }

        let entered = r
            .guard_entries(|e| matches!(e, LogEntry::GuardEntered { round, .. } if *round == bs.round))
            .map(LogEntry::time)
            .min();
        let assembled = r.guard_entries(|e| matches!(e, LogEntry::RecoveryStarted { .. })).map(LogEntry::time).min();
        let last_agreed = r.guard_entries(|e| matches!(e, LogEntry::Agreed { .. })).map(LogEntry::time).max();
        match (entered, assembled, last_agreed) {
            (Some(e), Some(a), Some(g)) => {
                worst_assembly = worst_assembly.max(a.saturating_sub(e));
                worst_agreed = worst_agreed.max(g.saturating_sub(e));
                if a > e + 6 * b.delta {
                    fail(format!("assembly {}us after round entry", a - e));
                }
                if g > e + 6 * b.delta + b.agreement {
                    fail(format!("agreement {}us after round entry", g - e));
                }
            }
            _ => fail("missing round entry, assembly or agreement".into()),
        }

        if !r.decisions(2).any(|e| matches!(e, LogEntry::Decided { commit: Some(_), .. })) {
            fail("reduced committee never committed".into());
        }
        bounds = Some(b);
    }
    let measured_bounds = bounds.is_some();
    let b = bounds.unwrap_or(GuardBounds { delta: 0, agreement: 0 });
    Report {
        id: 6,
        title: "guard liveness recovery",
        measured: format!(
            "{seeds} seeds: assembly <= {worst_assembly}us and agreement <= {worst_agreed}us after round entry; {}",
            failure_summary(&failures)
        ),
        bound: format!(
            "halt, blames on exactly {{{}}}, identical agreed set without honest members, assembly <= 6Δ = {}us, \
             agreement <= 6Δ + Δ_BA = {}us, commits after reconfiguration",
            crashed.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "),
            6 * b.delta,
            6 * b.delta + b.agreement
        ),
        pass: failures.is_empty() && measured_bounds,
    }
}

fn failure_summary(failures: &[String]) -> String {
    match failures {
        [] => "no failures".into(),
        [first, ..] => format!("{} failures, first: {first}", failures.len()),
    }
}

fn safety_recovery() -> Report {
    let sc = find("splitview-3f").expect("catalog");
    let mut failures: Vec<String> = Vec::new();
    let mut worst = 0;
    let mut evidence_checked = 0;
    let seeds = 10;
    let mut bound = 0;
    for seed in 1..=seeds {
        let r = run(&sc, seed);
        let b = GuardBounds::of(&r);
        bound = 2 * b.delta + b.agreement;
        let mut fail = |what: String| failures.push(format!("seed {seed}: {what}"));
        let honest = r.honest_ids(1);

        let diverged = r.checks.commit_skip_conflicts.iter().chain(&r.checks.prefix_violations).any(|(e, _)| *e == 1);
        if !diverged {
            fail("no commit divergence".into());
        }

        let schedule = Schedule::new(
            Committee::standard(sc.f, sc.mode),
            sc.leaders_per_round,
            Coin::new(coin_seed(seed, 1)),
        );
        for g in r.honest_guards() {
            let detected = r.log.iter().find_map(|e| match e {
                LogEntry::Detected { guard, blameset, .. } if *guard == g.id => Some(blameset),
                _ => None,
            });
            match detected {
                Some(bs) if bs.kind == BlameKind::Safety && bs.members.len() > sc.f => {}
                other => fail(format!("{} detected {other:?}", g.id)),
            }
            let safety: Vec<_> = g.evidence.iter().filter(|e| e.kind == BlameKind::Safety).collect();
            if safety.is_empty() {
                fail(format!("{} kept no safety evidence", g.id));
            }
            for ev in safety {
                evidence_checked += 1;
                match ev.restore() {
                    Ok((bs, dag)) if is_valid_blameset(&bs, &schedule, r.guard_count, &dag) => {}
                    Ok(_) => fail(format!("{} evidence does not verify", g.id)),
                    Err(e) => fail(format!("{} evidence: {e}", g.id)),
                }
            }
        }

        let agreed: Vec<_> = r.honest_guards().map(|g| g.agreed.clone().flatten()).collect();
        match agreed.first() {
            Some(Some(bs)) => {
                if agreed.iter().any(|a| a.as_ref() != Some(bs)) {
                    fail("honest guards agreed on different sets".into());
                }
                if bs.members.iter().any(|m| honest.contains(m)) {
                    fail(format!("agreed on {:?}", bs.members));
                }
            }
            _ => fail("no agreed blameset".into()),
        }

        let observed = r.guard_entries(|e| matches!(e, LogEntry::Conflict { .. })).map(LogEntry::time).min();
        let restored = r.guard_entries(|e| matches!(e, LogEntry::Agreed { .. })).map(LogEntry::time).max();
        match (observed, restored) {
            (Some(o), Some(a)) => {
                worst = worst.max(a.saturating_sub(o));
                if a > o + bound {
                    fail(format!("recovery took {}us", a - o));
                }
            }
            _ => fail("missing conflict or agreement".into()),
        }
    }
    Report {
        id: 7,
        title: "guard safety recovery",
        measured: format!(
            "{seeds} seeds, {evidence_checked} evidence files re-verified, recovery <= {worst}us after the first observed conflict; {}",
            failure_summary(&failures)
        ),
        bound: format!(
            "divergence, every honest guard detects >= f+1 members, identical agreed set without honest members, \
             recovery <= 2Δ + Δ_BA = {bound}us"
        ),
        pass: failures.is_empty(),
    }
}

fn no_false_alarms() -> Report {
    let (mut runs, mut recovers, mut detections, mut honest_named) = (0u64, 0usize, 0usize, 0usize);
    let scenarios: Vec<Scenario> = crate::scenario::catalog()
        .into_iter()
        .filter(|s| !s.guard_scenario && s.guards.is_some())
        .map(|mut s| {
            s.rounds = s.rounds.min(30);
            s
        })
        .collect();
    for sc in &scenarios {
        for seed in 1..=100 {
            let r = run(sc, seed);
            runs += 1;
            let honest = r.honest_ids(1);
            for e in r.guard_entries(|_| true) {
                let bs = match e {
                    LogEntry::RecoveryStarted { blameset, .. } => {
                        recovers += 1;
                        Some(blameset)
                    }
                    LogEntry::Detected { blameset, .. } => {
                        detections += 1;
                        Some(blameset)
                    }
                    LogEntry::Agreed { blameset, .. } => blameset.as_ref(),
                    _ => None,
                };
                if bs.is_some_and(|bs| bs.members.iter().any(|m| honest.contains(m))) {
                    honest_named += 1;
                }
            }
            for g in r.honest_guards() {
                honest_named += g
                    .evidence
                    .iter()
                    .filter(|ev| ev.members.iter().any(|m| honest.contains(m)))
                    .count();
            }
        }
    }
    Report {
        id: 8,
        title: "no false alarms",
        measured: format!(
            "{runs} runs over {} scenarios: {recovers} recover calls, {detections} detections, {honest_named} blamesets naming honest validators",
            scenarios.len()
        ),
        bound: "zero recover calls, zero honest validators in any blameset".into(),
        pass: runs > 0 && recovers == 0 && honest_named == 0,
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Probability that `l` distinct uniform leaders out of `n` include one of
/// `c` marked validators.
pub fn hit_probability(n: usize, c: usize, l: usize) -> f64 {
    1.0 - binomial(n - c, l) / binomial(n, l)
}

#[derive(Debug, Default)]
struct WaveStats {
    samples: u64,
    successes: u64,
    expected: f64,
    min_core: usize,
    min_honest_refs: usize,
    /// Rounds whose leaders included a block from the core set but that saw
    /// no direct commit.
    missed_hits: u64,
}

/// Samples rounds of async `f = 1` runs with `l` leaders per round until at
/// least `min_samples` have been collected.
fn sample_waves(l: u64, min_samples: u64) -> WaveStats {
    let mut st = WaveStats { min_core: usize::MAX, min_honest_refs: usize::MAX, ..Default::default() };
    let names = ["async-adversarial", "async-fault-free"];
    let mut seed = 0;
    while st.samples < min_samples {
        seed += 1;
        let mut sc = find(names[seed as usize % 2]).expect("catalog");
        sc.leaders_per_round = l;
        let (r, state) = Sim::new(&sc, seed).expect("valid").run_with_state();
        let honest = r.honest_ids(1);
        let committee = state.schedule.committee.clone();
        let n = committee.size();

        let mut union = Dag::new(&committee);
        let mut blocks: Vec<Arc<Block>> = state
            .dags
            .iter()
            .filter(|(id, _)| honest.contains(id))
            .flat_map(|(_, d)| (1..=d.highest_round()).flat_map(move |round| d.round_blocks(round).cloned()))
            .collect();
        blocks.sort_by_key(|b| (b.round(), b.digest()));
        for b in blocks {
            union.insert_block(b);
        }

        let direct: BTreeSet<Round> = r
            .decisions(1)
            .filter_map(|e| match e {
                LogEntry::Decided { slot, commit: Some(_), rule: Rule::Direct, .. } => Some(slot.round),
                _ => None,
            })
            .collect();
        let last = r.honest_validators(1).map(|v| v.final_round).min().unwrap_or(0);
        for round in (1..).take_while(|round| round + 4 <= last) {
            let next: Vec<_> = union.round_blocks(round + 1).cloned().collect();
            for b in &next {
                let refs = b.parents().iter().filter(|p| p.round == round && honest.contains(&p.author)).count();
                st.min_honest_refs = st.min_honest_refs.min(refs);
            }
            let core: BTreeSet<ValidatorId> = union
                .round_blocks(round)
                .filter(|b| honest.contains(&b.author()))
                .filter(|b| {
                    let me = b.reference();
                    next.iter().filter(|c| honest.contains(&c.author()) && c.parents().contains(&me)).count() > r.f
                })
                .map(|b| b.author())
                .collect();
            st.min_core = st.min_core.min(core.len());
            st.expected += hit_probability(n, core.len(), l as usize);
            let hit = (0..l).any(|rank| {
                slot_leader(&union, LeaderSlot::new(round, rank), &state.schedule).is_ok_and(|v| core.contains(&v))
            });
            let success = direct.contains(&round);
            st.missed_hits += u64::from(hit && !success);
            st.successes += u64::from(success);
            st.samples += 1;
        }
    }
    st
}

fn async_combinatorics() -> Report {
    let f = 1;
    let two = sample_waves(2, 5000);
    let four = sample_waves(4, 500);
    let freq = two.successes as f64 / two.samples as f64;
    let mean_bound = two.expected / two.samples as f64;
    let min_refs = two.min_honest_refs.min(four.min_honest_refs);
    let min_core = two.min_core.min(four.min_core);
    Report {
        id: 9,
        title: "async leader combinatorics",
        measured: format!(
            "l=2: {} rounds, success {:.4} vs bound {:.4}, {} missed core hits; l=4: {}/{} rounds succeeded; \
             min honest parents {min_refs}, min core set {min_core}",
            two.samples, freq, mean_bound, two.missed_hits, four.successes, four.samples
        ),
        bound: format!(
            "honest parents >= {}, core set >= {}, success >= mean of 1 - C(6-|C|,2)/C(6,2), l=4 always succeeds",
            3 * f + 1,
            2 * f + 1
        ),
        pass: two.samples >= 5000
            && min_refs > 3 * f
            && min_core > 2 * f
            && two.missed_hits == 0
            && four.missed_hits == 0
            && freq >= mean_bound
            && four.successes == four.samples,
    }
}

fn stake_split() -> Report {
    let top = 1_000_000u64;
    let mut wrong = Vec::new();
    for total in 2..=top {
        let required = (5 * (total - 1)).div_ceil(6);
        if validate_stake_split(total, required).is_err() || validate_stake_split(total, required - 1).is_ok() {
            wrong.push(total);
        }
    }
    Report {
        id: 10,
        title: "stake split",
        measured: format!("{} totals checked, {} wrong", top - 1, wrong.len()),
        bound: "accepts ceil(5(S-1)/6) and rejects one less for every S in [2, 10^6]".into(),
        pass: wrong.is_empty(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hit_probability_matches_enumeration() {
        // Count leader pairs that miss a marked set of size c, by brute force.
        for c in 0..=6 {
            let mut miss = 0;
            let mut total = 0;
            for a in 0..6 {
                for b in a + 1..6 {
                    total += 1;
                    if a >= c && b >= c {
                        miss += 1;
                    }
                }
            }
            let expected = 1.0 - miss as f64 / total as f64;
            assert!((hit_probability(6, c, 2) - expected).abs() < 1e-12, "c={c}");
        }
        assert!((hit_probability(6, 3, 2) - 0.8).abs() < 1e-12);
        assert_eq!(hit_probability(6, 3, 4), 1.0);
    }

    #[test]
    fn assignment_enumeration_is_complete() {
        let all: BTreeSet<Vec<u8>> = assignments(3, &[Stance::Absent, Stance::Support, Stance::NonSupport])
            .map(|a| a.iter().map(|s| *s as u8).collect())
            .collect();
        assert_eq!(all.len(), 27);
    }

    #[test]
    fn overlap_bounds_for_f1() {
        let c = Committee::standard(1, Mode::PartialSync);
        assert_eq!(2 * c.strong_quorum() - c.size(), 4);
        assert_eq!(c.strong_quorum() + c.weak_quorum() - c.size(), 2);
    }

    #[test]
    fn suite_names_and_numbers() {
        assert_eq!(suite("guard"), Some(vec![6, 7]));
        assert_eq!(suite("7"), Some(vec![7]));
        assert_eq!(suite("0"), None);
        assert_eq!(suite("11"), None);
        assert_eq!(suite("nope"), None);
        assert_eq!(suite("all").unwrap().len(), CRITERIA as usize);
    }

    #[test]
    fn selection_runs_each_criterion_once() {
        let ids: Vec<u8> = run_selected(&[10, 5, 10]).iter().map(|r| r.id).collect();
        assert_eq!(ids, [5, 10]);
    }

    #[test]
    fn quorum_math_passes() {
        let r = quorum_math();
        assert!(r.pass, "{r}");
    }

    #[test]
    fn stake_split_report() {
        let r = stake_split();
        assert!(r.pass, "{r}");
    }
}
