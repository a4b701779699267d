// SPDX-License-Identifier: Apache-2.0

//! Scenario files and the built-in catalog.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guard::guard_fault_budget;
use crate::simnet::fault::{Fault, GuardFault};
use crate::simnet::NetworkModel;
use crate::types::{GuardId, Mode, Round, Time, ValidatorId};
use crate::validator::Load;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEntry {
    pub validator: ValidatorId,
    #[serde(flatten)]
    pub fault: Fault,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardFaultEntry {
    pub guard: GuardId,
    pub behavior: GuardFault,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuardSetup {
    pub count: usize,
    /// Bound for guard-to-guard messages and guard timers; defaults to the
    /// network's delta.
    #[serde(default)]
    pub delta: Option<Time>,
    #[serde(default)]
    pub faults: Vec<GuardFaultEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitViewSetup {
    pub round: Round,
}

/// Outcomes the run must show for the scenario to pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    /// Honest commit logs diverge in the first epoch.
    #[serde(default)]
    pub divergence: bool,
    /// Guards agree on a blameset and the committee is reconfigured.
    #[serde(default)]
    pub recovery: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub f: usize,
    pub mode: Mode,
    #[serde(default = "one")]
    pub leaders_per_round: u64,
    pub network: NetworkModel,
    /// Run until every honest validator has proposed this round.
    pub rounds: Round,
    /// Virtual-time cutoff.
    pub horizon: Time,
    /// Defaults to twice the network delta.
    #[serde(default)]
    pub leader_timeout: Option<Time>,
    #[serde(default = "no_load")]
    pub load: Load,
    #[serde(default)]
    pub guards: Option<GuardSetup>,
    #[serde(default)]
    pub faults: Vec<FaultEntry>,
    #[serde(default)]
    pub split_view: Option<SplitViewSetup>,
    /// Allows more than `f` corrupt validators.
    #[serde(default)]
    pub guard_scenario: bool,
    /// Rounds to run after a reconfiguration.
    #[serde(default)]
    pub post_rounds: Round,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub expect: Expect,
}

fn one() -> u64 {
    1
}

fn no_load() -> Load {
    Load { tx_per_sec: 0, tx_size: 512 }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{corrupt} corrupt validators exceed f={f}; label the scenario as a guard scenario")]
    BudgetExceeded { corrupt: usize, f: usize },
    #[error("{byzantine} faulty guards exceed the budget of {budget} for {count} guards")]
    GuardBudgetExceeded { byzantine: usize, budget: usize, count: usize },
    #[error("{0} is not a committee member")]
    UnknownValidator(ValidatorId),
    #[error("{0} is not a guard")]
    UnknownGuard(GuardId),
    #[error("{0} has more than one fault")]
    DuplicateFault(String),
    #[error("leaders per round must be in 1..={n}, got {l}")]
    LeadersPerRound { l: u64, n: usize },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot parse scenario: {0}")]
    Parse(String),
}

impl Scenario {
    pub fn from_toml(s: &str) -> Result<Self, ConfigError> {
        let sc: Scenario = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("serializable")
    }

    pub fn n(&self) -> usize {
        5 * self.f + 1
    }

    pub fn delta(&self) -> Time {
        self.network.delta()
    }

    pub fn guard_delta(&self) -> Time {
        self.guards.as_ref().and_then(|g| g.delta).unwrap_or_else(|| self.delta())
    }

    pub fn leader_timeout(&self) -> Time {
        self.leader_timeout.unwrap_or(2 * self.delta())
    }

    /// Validators under adversarial control.
    pub fn corrupt(&self) -> BTreeSet<ValidatorId> {
        let mut out: BTreeSet<_> = self.faults.iter().map(|e| e.validator).collect();
        if self.split_view.is_some() {
            out.extend((0..3 * self.f as u32).map(ValidatorId));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.n();
        if self.leaders_per_round == 0 || self.leaders_per_round > n as u64 {
            return Err(ConfigError::LeadersPerRound { l: self.leaders_per_round, n });
        }
        if self.rounds == 0 || self.horizon == 0 || self.delta() == 0 {
            return Err(ConfigError::Invalid("rounds, horizon and delta must be positive".into()));
        }
        let mut seen = BTreeSet::new();
        for e in &self.faults {
            if e.validator.0 as usize >= n {
                return Err(ConfigError::UnknownValidator(e.validator));
            }
            if !seen.insert(e.validator) {
                return Err(ConfigError::DuplicateFault(e.validator.to_string()));
            }
            if let Fault::WithholdVotes { targets } = &e.fault {
                if let Some(t) = targets.iter().find(|t| t.0 as usize >= n) {
                    return Err(ConfigError::UnknownValidator(*t));
                }
            }
        }
        if let Some(sv) = &self.split_view {
            self.validate_split_view(sv)?;
            if let Some(e) = self.faults.iter().find(|e| (e.validator.0 as usize) < 3 * self.f) {
                return Err(ConfigError::DuplicateFault(e.validator.to_string()));
            }
        }
        let corrupt = self.corrupt().len();
        if corrupt > self.f && !self.guard_scenario {
            return Err(ConfigError::BudgetExceeded { corrupt, f: self.f });
        }
        if let Some(g) = &self.guards {
            if g.count == 0 {
                return Err(ConfigError::Invalid("guard count must be positive".into()));
            }
            let mut seen = BTreeSet::new();
            for e in &g.faults {
                if e.guard.0 as usize >= g.count {
                    return Err(ConfigError::UnknownGuard(e.guard));
                }
                if !seen.insert(e.guard) {
                    return Err(ConfigError::DuplicateFault(e.guard.to_string()));
                }
            }
            let budget = guard_fault_budget(g.count);
            if g.faults.len() > budget {
                return Err(ConfigError::GuardBudgetExceeded { byzantine: g.faults.len(), budget, count: g.count });
            }
        }
        if (self.expect.recovery || self.split_view.is_some()) && self.guards.is_none() {
            return Err(ConfigError::Invalid("recovery needs guards".into()));
        }
        Ok(())
    }

    fn validate_split_view(&self, sv: &SplitViewSetup) -> Result<(), ConfigError> {
        let n = self.n() as Round;
        let fixed = matches!(self.network, NetworkModel::Synchronous { delta, min_delay } if delta == min_delay);
        if self.f == 0 || self.mode != Mode::PartialSync || self.leaders_per_round != 1 || !fixed {
            return Err(ConfigError::Invalid(
                "split view needs f >= 1, partial-sync mode, one leader per round and a fixed-delay network".into(),
            ));
        }
        if sv.round < n || sv.round % n != 0 {
            return Err(ConfigError::Invalid(format!("split view round must be a positive multiple of {n}")));
        }
        Ok(())
    }

    /// Replaces the network delta (and the cap in async mode).
    pub fn with_delta(mut self, delta: Time) -> Self {
        self.network = match self.network {
            NetworkModel::Synchronous { min_delay, delta: old } => {
                NetworkModel::Synchronous { delta, min_delay: if min_delay == old { delta } else { min_delay.min(delta) } }
            }
            NetworkModel::PartialSynchrony { gst, .. } => NetworkModel::PartialSynchrony { gst, delta },
            NetworkModel::Asynchronous { adversarial, .. } => NetworkModel::Asynchronous { cap: delta, adversarial },
        };
        self.leader_timeout = None;
        self
    }

    /// Switches between the partially synchronous protocol on a synchronous
    /// network and the async protocol on a benign asynchronous one.
    pub fn with_mode(mut self, mode: Mode) -> Self {
        if mode == self.mode {
            return self;
        }
        let delta = self.delta();
        self.network = match mode {
            Mode::Async => NetworkModel::Asynchronous { cap: delta, adversarial: false },
            Mode::PartialSync => NetworkModel::Synchronous { delta, min_delay: 1 },
        };
        self.mode = mode;
        self
    }
}

const DELTA: Time = 10_000;

fn base(name: &str, description: &str, f: usize, mode: Mode, network: NetworkModel) -> Scenario {
    Scenario {
        name: name.into(),
        description: description.into(),
        f,
        mode,
        leaders_per_round: 1,
        network,
        rounds: 60,
        horizon: 60_000_000,
        leader_timeout: None,
        load: Load { tx_per_sec: 1_000, tx_size: 512 },
        guards: Some(GuardSetup { count: 5, delta: None, faults: Vec::new() }),
        faults: Vec::new(),
        split_view: None,
        guard_scenario: false,
        post_rounds: 0,
        seeds: (1..=5).collect(),
        expect: Expect::default(),
    }
}

fn sync() -> NetworkModel {
    NetworkModel::Synchronous { delta: DELTA, min_delay: 1 }
}

fn psync() -> NetworkModel {
    NetworkModel::PartialSynchrony { gst: 0, delta: DELTA }
}

fn crash(v: u32, after: Round) -> FaultEntry {
    FaultEntry { validator: ValidatorId(v), fault: Fault::Crash { after } }
}

/// The built-in scenarios.
pub fn catalog() -> Vec<Scenario> {
    let mut out = Vec::new();
    for f in [1, 2, 6] {
        let mut s = base(&format!("fault-free-f{f}"), "no faults, synchronous network", f, Mode::PartialSync, sync());
        s.rounds = 200;
        if f == 6 {
            s.guards = None;
        }
        out.push(s);
    }

    let mut s = base("crash-leader", "one validator crashes and its leader slots time out", 1, Mode::PartialSync, psync());
    s.faults.push(crash(1, 5));
    out.push(s);

    let mut s = base("crash-f", "f validators crash", 2, Mode::PartialSync, psync());
    s.faults.extend([crash(1, 10), crash(7, 10)]);
    out.push(s);

    let mut s = base("crash-f-plus-1", "f + 1 validators crash; guards remove them", 1, Mode::PartialSync, sync());
    s.faults.extend([crash(1, 10), crash(4, 10)]);
    s.guard_scenario = true;
    s.rounds = 40;
    s.post_rounds = 20;
    s.expect.recovery = true;
    out.push(s);

    let mut s = base("equivocate-f", "one validator equivocates every round", 1, Mode::PartialSync, psync());
    s.faults.push(FaultEntry { validator: ValidatorId(2), fault: Fault::Equivocate });
    out.push(s);

    let mut s = base("withhold-f", "one validator never references v1", 1, Mode::PartialSync, psync());
    s.faults.push(FaultEntry { validator: ValidatorId(3), fault: Fault::WithholdVotes { targets: vec![ValidatorId(1)] } });
    out.push(s);

    let mut s = base(
        "splitview-3f",
        "3f validators split honest views of one leader; guards remove them",
        1,
        Mode::PartialSync,
        NetworkModel::Synchronous { delta: DELTA, min_delay: DELTA },
    );
    s.split_view = Some(SplitViewSetup { round: 12 });
    s.guard_scenario = true;
    s.rounds = 30;
    s.post_rounds = 20;
    s.expect = Expect { divergence: true, recovery: true };
    out.push(s);

    let mut s = base("async-fault-free", "no faults, async protocol, benign scheduler", 1, Mode::Async, async_net(false));
    s.rounds = 200;
    out.push(s);

    let mut s = base(
        "async-adversarial",
        "async protocol, scheduler slows a random set of senders every round, one validator withholds",
        1,
        Mode::Async,
        async_net(true),
    );
    s.leaders_per_round = 2;
    s.rounds = 200;
    s.faults.push(FaultEntry { validator: ValidatorId(5), fault: Fault::WithholdVotes { targets: vec![ValidatorId(0)] } });
    out.push(s);

    let mut s = base(
        "byz-guard-recover",
        "f + 1 crashes with one guard proposing a bogus blameset",
        1,
        Mode::PartialSync,
        sync(),
    );
    s.faults.extend([crash(2, 10), crash(3, 10)]);
    s.guards.as_mut().expect("set").faults.push(GuardFaultEntry { guard: GuardId(0), behavior: GuardFault::Bogus });
    s.guard_scenario = true;
    s.rounds = 40;
    s.post_rounds = 20;
    s.expect.recovery = true;
    out.push(s);
    out
}

fn async_net(adversarial: bool) -> NetworkModel {
    NetworkModel::Asynchronous { cap: DELTA, adversarial }
}

pub fn find(name: &str) -> Option<Scenario> {
    catalog().into_iter().find(|s| s.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_is_valid_and_round_trips() {
        let cat = catalog();
        assert_eq!(cat.len(), 12);
        for s in cat {
            s.validate().unwrap_or_else(|e| panic!("{}: {e}", s.name));
            assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
        }
    }

    #[test]
    fn over_budget_needs_a_guard_label() {
        let mut s = find("crash-f-plus-1").unwrap();
        s.guard_scenario = false;
        assert_eq!(s.validate(), Err(ConfigError::BudgetExceeded { corrupt: 2, f: 1 }));
    }

    #[test]
    fn rejects_bad_configs() {
        let mut s = find("crash-leader").unwrap();
        s.faults.push(crash(9, 1));
        assert_eq!(s.validate(), Err(ConfigError::UnknownValidator(ValidatorId(9))));

        let mut s = find("splitview-3f").unwrap();
        s.split_view = Some(SplitViewSetup { round: 13 });
        assert!(matches!(s.validate(), Err(ConfigError::Invalid(_))));

        let mut s = find("byz-guard-recover").unwrap();
        let g = s.guards.as_mut().unwrap();
        g.faults.extend([1, 2].map(|i| GuardFaultEntry { guard: GuardId(i), behavior: GuardFault::Silent }));
        assert_eq!(s.validate(), Err(ConfigError::GuardBudgetExceeded { byzantine: 3, budget: 2, count: 5 }));

        assert!(matches!(Scenario::from_toml("name = 1"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn parses_hand_written_toml() {
        let s = Scenario::from_toml(
            r#"
            name = "mini"
            f = 1
            mode = "partial-sync"
            rounds = 10
            horizon = 1000000
            seeds = [1, 2]

            [network]
            kind = "partial-synchrony"
            gst = 50000
            delta = 1000

            [[faults]]
            validator = 2
            kind = "crash"
            after = 3
            "#,
        )
        .unwrap();
        assert_eq!(s.faults, [crash(2, 3)]);
        assert_eq!(s.leader_timeout(), 2000);
        assert!(s.guards.is_none());
    }

    #[test]
    fn overrides() {
        let s = find("fault-free-f1").unwrap().with_mode(Mode::Async).with_delta(500);
        assert_eq!(s.network, NetworkModel::Asynchronous { cap: 500, adversarial: false });
        let s = find("splitview-3f").unwrap().with_delta(700);
        assert_eq!(s.network, NetworkModel::Synchronous { delta: 700, min_delay: 700 });
    }
}
