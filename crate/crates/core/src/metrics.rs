// SPDX-License-Identifier: Apache-2.0

//! Per-run metrics, scenario assertions and plot tables, all derived from a
//! [`RunRecord`] alone.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::committer::Rule;
use crate::scenario::Scenario;
use crate::simnet::{BlameSummary, LogEntry, RunRecord};
use crate::types::{Mode, Time};

/// Bucket width for virtual-time latencies.
pub const VTIME_BUCKET: Time = 1_000;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub seed: u64,
    pub mode: Option<Mode>,
    /// Offered load in transaction bytes per second of virtual time.
    pub offered_load: u64,
    /// Transaction bytes per delivered block, averaged over honest validators.
    pub load_bytes_per_block: u64,
    /// Honest first-epoch decisions, one per (validator, slot).
    pub slots_direct_committed: u64,
    pub slots_indirect: u64,
    pub slots_skipped: u64,
    /// Commits by message delays from proposal to the block that triggered
    /// the verdict.
    pub commit_latency_rounds: BTreeMap<u64, u64>,
    /// Commits by virtual time from the leader's proposal, in buckets of
    /// [`VTIME_BUCKET`].
    pub commit_latency_vtime: BTreeMap<Time, u64>,
    /// First honest guard detection (conflict or assembled blameset).
    pub guard_detection_vtime: Option<Time>,
    pub blameset: Option<BlameSummary>,
    /// From detection to the last honest guard's agreed output.
    pub recovery_vtime: Option<Time>,
    /// Failed scenario assertions; empty when the run passed.
    pub failures: Vec<String>,
}

impl Metrics {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn from_text(s: &str) -> Result<Self, MetricsError> {
        serde_json::from_str(s).map_err(|e| MetricsError(e.to_string()))
    }

    /// Most frequent commit latency in message delays.
    pub fn modal_latency_rounds(&self) -> Option<u64> {
        mode_of(&self.commit_latency_rounds)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed metrics file: {0}")]
pub struct MetricsError(pub String);

fn mode_of<K: Copy + Ord>(h: &BTreeMap<K, u64>) -> Option<K> {
    // Ties go to the smaller key.
    h.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(k, _)| *k)
}

/// Latency in message delays of a commit first reached upon `trigger_round`.
pub fn latency_rounds(slot_round: u64, trigger_round: u64) -> u64 {
    trigger_round - slot_round + 1
}

pub fn measure(sc: &Scenario, r: &RunRecord) -> Metrics {
    let mut m = Metrics {
        scenario: r.scenario.clone(),
        seed: r.seed,
        mode: Some(sc.mode),
        offered_load: sc.load.tx_per_sec * sc.load.tx_size as u64,
        load_bytes_per_block: load_per_block(r),
        ..Default::default()
    };
    let created: HashMap<_, Time> = r
        .log
        .iter()
        .filter_map(|e| match e {
            LogEntry::Created { t, epoch: 1, digest, .. } => Some((*digest, *t)),
            _ => None,
        })
        .collect();
    for e in r.decisions(1) {
        let LogEntry::Decided { t, slot, commit, rule, trigger_round, .. } = e else { continue };
        match (commit, rule) {
            (None, _) => m.slots_skipped += 1,
            (Some(_), Rule::Direct) => m.slots_direct_committed += 1,
            (Some(_), Rule::Indirect) => m.slots_indirect += 1,
        }
        if let Some(b) = commit {
            *m.commit_latency_rounds.entry(latency_rounds(slot.round, *trigger_round)).or_default() += 1;
            if let Some(c) = created.get(&b.digest) {
                *m.commit_latency_vtime.entry((t - c) / VTIME_BUCKET * VTIME_BUCKET).or_default() += 1;
            }
        }
    }
    let honest_guards: BTreeSet<_> = r.honest_guards().map(|g| g.id).collect();
    let by_honest = |e: &&LogEntry| crate::simnet::record::guard_of(e).is_some_and(|g| honest_guards.contains(&g));
    let detection = r
        .log
        .iter()
        .filter(by_honest)
        .find(|e| matches!(e, LogEntry::Conflict { .. } | LogEntry::RecoveryStarted { .. }))
        .map(LogEntry::time);
    m.guard_detection_vtime = detection;
    let agreed: Vec<_> = r
        .log
        .iter()
        .filter(by_honest)
        .filter_map(|e| match e {
            LogEntry::Agreed { t, blameset: Some(bs), .. } => Some((*t, bs.clone())),
            _ => None,
        })
        .collect();
    if let Some((_, bs)) = agreed.first() {
        m.blameset = Some(bs.clone());
        let last = agreed.iter().map(|(t, _)| *t).max().expect("non-empty");
        m.recovery_vtime = detection.map(|d| last.saturating_sub(d));
    }
    m.failures = assess(sc, r);
    m
}

fn load_per_block(r: &RunRecord) -> u64 {
    let (blocks, bytes) = r
        .honest_validators(1)
        .fold((0usize, 0usize), |(n, b), v| (n + v.delivered_blocks, b + v.delivered_bytes));
    if blocks == 0 {
        0
    } else {
        (bytes / blocks) as u64
    }
}

/// The scenario's own pass conditions.
pub fn assess(sc: &Scenario, r: &RunRecord) -> Vec<String> {
    let mut out = Vec::new();
    let c = &r.checks;
    if c.model_violations > 0 {
        out.push(format!("{} deliveries outside the network model", c.model_violations));
    }
    if c.forged_blocks > 0 {
        out.push(format!("{} blocks attributed to honest validators they never created", c.forged_blocks));
    }
    if c.honest_equivocations > 0 {
        out.push(format!("{} honest equivocations", c.honest_equivocations));
    }
    let diverged: BTreeSet<u32> =
        c.prefix_violations.iter().chain(&c.commit_skip_conflicts).map(|(epoch, _)| *epoch).collect();
    if sc.expect.divergence != diverged.contains(&1) {
        out.push(format!("first-epoch divergence expected {} but observed {}", sc.expect.divergence, !sc.expect.divergence));
    }
    if let Some(e) = diverged.iter().find(|e| **e > 1) {
        out.push(format!("honest commit logs diverge in epoch {e}"));
    }
    let reconfigured = r.reconfiguration().is_some();
    if sc.expect.recovery != reconfigured {
        out.push(format!("recovery expected {} but reconfigured {reconfigured}", sc.expect.recovery));
    }
    let honest = r.honest_ids(1);
    for e in r.guard_entries(|e| matches!(e, LogEntry::Detected { .. } | LogEntry::RecoveryStarted { .. } | LogEntry::Agreed { .. })) {
        let bs = match e {
            LogEntry::Detected { blameset, .. } | LogEntry::RecoveryStarted { blameset, .. } => Some(blameset),
            LogEntry::Agreed { blameset, .. } => blameset.as_ref(),
            _ => None,
        };
        if let Some(v) = bs.and_then(|bs| bs.members.iter().find(|m| honest.contains(m))) {
            out.push(format!("honest {v} in a blameset at t={}", e.time()));
            break;
        }
    }
    let last_epoch = r.validators.iter().map(|v| v.epoch).max().unwrap_or(1);
    let target = if last_epoch > 1 { sc.post_rounds } else { sc.rounds };
    let halted = !sc.expect.recovery && sc.corrupt().len() > sc.f;
    if !halted {
        if let Some(v) = r.honest_validators(last_epoch).find(|v| v.final_round < target) {
            out.push(format!("{} stopped at round {} of {target} in epoch {last_epoch}", v.id, v.final_round));
        }
    }
    out
}

/// Sum of several runs of one scenario.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scenario: String,
    pub runs: u64,
    pub failed_runs: Vec<u64>,
    pub slots_direct_committed: u64,
    pub slots_indirect: u64,
    pub slots_skipped: u64,
    pub commit_latency_rounds: BTreeMap<u64, u64>,
    pub commit_latency_vtime: BTreeMap<Time, u64>,
    pub modal_latency_rounds: Option<u64>,
    pub recoveries: u64,
}

impl Aggregate {
    pub fn of(runs: &[Metrics]) -> Self {
        let mut a = Aggregate { scenario: runs.first().map(|m| m.scenario.clone()).unwrap_or_default(), ..Default::default() };
        for m in runs {
            a.runs += 1;
            if !m.passed() {
                a.failed_runs.push(m.seed);
            }
            a.slots_direct_committed += m.slots_direct_committed;
            a.slots_indirect += m.slots_indirect;
            a.slots_skipped += m.slots_skipped;
            for (k, v) in &m.commit_latency_rounds {
                *a.commit_latency_rounds.entry(*k).or_default() += v;
            }
            for (k, v) in &m.commit_latency_vtime {
                *a.commit_latency_vtime.entry(*k).or_default() += v;
            }
            a.recoveries += u64::from(m.blameset.is_some());
        }
        a.modal_latency_rounds = mode_of(&a.commit_latency_rounds);
        a
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

/// Tab-separated latency table, one row per (scenario, mode, offered load)
/// group.
///
/// Columns: `scenario`, `mode`, `offered_load_bytes_per_sec`,
/// `bytes_per_block`, `runs`, `commits`, `latency_rounds_mode`,
/// `latency_rounds_mean`, `latency_vtime_mean_us`. `bytes_per_block` is the
/// mean over the group's runs.
pub fn emit_plot_data(metrics: &[Metrics]) -> String {
    let mut groups: BTreeMap<(String, String, u64), Vec<&Metrics>> = BTreeMap::new();
    for m in metrics {
        let mode = match m.mode {
            Some(Mode::PartialSync) => "partial-sync",
            Some(Mode::Async) => "async",
            None => "unknown",
        };
        groups.entry((m.scenario.clone(), mode.to_string(), m.offered_load)).or_default().push(m);
    }
    let mut out = String::from(
        "scenario\tmode\toffered_load_bytes_per_sec\tbytes_per_block\truns\tcommits\tlatency_rounds_mode\tlatency_rounds_mean\tlatency_vtime_mean_us\n",
    );
    for ((scenario, mode, load), ms) in groups {
        let mut rounds: BTreeMap<u64, u64> = BTreeMap::new();
        let mut vtime: BTreeMap<Time, u64> = BTreeMap::new();
        for m in &ms {
            for (k, v) in &m.commit_latency_rounds {
                *rounds.entry(*k).or_default() += v;
            }
            for (k, v) in &m.commit_latency_vtime {
                *vtime.entry(*k).or_default() += v;
            }
        }
        let commits: u64 = rounds.values().sum();
        let mean = |h: &BTreeMap<u64, u64>| {
            let n: u64 = h.values().sum();
            if n == 0 {
                0.0
            } else {
                h.iter().map(|(k, v)| *k as f64 * *v as f64).sum::<f64>() / n as f64
            }
        };
        let modal = mode_of(&rounds).map_or_else(String::new, |m| m.to_string());
        let per_block = ms.iter().map(|m| m.load_bytes_per_block).sum::<u64>() / ms.len() as u64;
        let _ = writeln!(
            out,
            "{scenario}\t{mode}\t{load}\t{per_block}\t{}\t{commits}\t{modal}\t{:.3}\t{:.1}",
            ms.len(),
            mean(&rounds),
            mean(&vtime)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(name: &str, mode: Mode, lat: &[(u64, u64)]) -> Metrics {
        Metrics {
            scenario: name.into(),
            mode: Some(mode),
            commit_latency_rounds: lat.iter().copied().collect(),
            commit_latency_vtime: lat.iter().map(|(k, v)| (k * 10_000, *v)).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn empty_input_gives_header_only() {
        let t = emit_plot_data(&[]);
        assert_eq!(t.lines().count(), 1);
        assert!(t.starts_with("scenario\tmode"));
    }

    #[test]
    fn two_modes_two_rows() {
        let t = emit_plot_data(&[
            metrics("ff", Mode::PartialSync, &[(2, 90), (3, 1)]),
            metrics("ff", Mode::PartialSync, &[(2, 10)]),
            metrics("ff-async", Mode::Async, &[(3, 50), (4, 7)]),
        ]);
        let rows: Vec<Vec<&str>> = t.lines().skip(1).map(|l| l.split('\t').collect()).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0][..7], ["ff", "partial-sync", "0", "0", "2", "101", "2"]);
        assert_eq!(rows[1][..7], ["ff-async", "async", "0", "0", "1", "57", "3"]);
    }

    #[test]
    fn metrics_round_trip_and_reject_garbage() {
        let m = metrics("x", Mode::Async, &[(3, 1)]);
        assert_eq!(Metrics::from_text(&m.to_text()).unwrap(), m);
        assert!(Metrics::from_text("{").is_err());
    }

    #[test]
    fn mode_prefers_smaller_on_ties() {
        assert_eq!(mode_of(&[(2u64, 5u64), (3, 5)].into_iter().collect()), Some(2));
        assert_eq!(mode_of::<u64>(&BTreeMap::new()), None);
    }
}
