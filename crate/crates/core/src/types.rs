// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Protocol round number. Round 0 holds the genesis blocks.
pub type Round = u64;

/// Virtual time in microseconds.
pub type Time = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValidatorId(pub u32);

impl fmt::Display for ValidatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GuardId(pub u32);

impl fmt::Display for GuardId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Two-round waves, round-robin leaders, leader timeouts.
    PartialSync,
    /// Three-round waves, coin-elected leaders, no timeouts.
    Async,
}

impl Mode {
    pub fn wave_length(self) -> u64 {
        match self {
            Mode::PartialSync => 2,
            Mode::Async => 3,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CommitteeError {
    #[error("committee of {size} cannot tolerate f={f}: need at least 5f+1 members")]
    TooSmall { size: usize, f: usize },
    #[error("duplicate committee member {0}")]
    Duplicate(ValidatorId),
}

/// Ordered validator set with its fault budget.
///
/// Quorum sizes are derived from `f` and the member count: the strong
/// quorum is `n - f` and the weak quorum is `n - 3f`. For the standard
/// `n = 5f + 1` committee these are `4f + 1` and `2f + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Committee {
    members: Vec<ValidatorId>,
    f: usize,
    mode: Mode,
}

impl Committee {
    pub fn new(members: Vec<ValidatorId>, f: usize, mode: Mode) -> Result<Self, CommitteeError> {
        if members.len() < 5 * f + 1 {
            return Err(CommitteeError::TooSmall { size: members.len(), f });
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &members {
            if !seen.insert(*m) {
                return Err(CommitteeError::Duplicate(*m));
            }
        }
        Ok(Self { members, f, mode })
    }

    /// `5f + 1` members `v0 .. v5f`.
    pub fn standard(f: usize, mode: Mode) -> Self {
        let members = (0..(5 * f + 1) as u32).map(ValidatorId).collect();
        Self { members, f, mode }
    }

    pub fn members(&self) -> &[ValidatorId] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn wave_length(&self) -> u64 {
        self.mode.wave_length()
    }

    pub fn strong_quorum(&self) -> usize {
        self.size() - self.f
    }

    pub fn weak_quorum(&self) -> usize {
        self.size() - 3 * self.f
    }

    /// Smallest number of coin shares that reveals a coin value.
    pub fn coin_threshold(&self) -> usize {
        self.f + 1
    }

    pub fn contains(&self, id: ValidatorId) -> bool {
        self.members.contains(&id)
    }

    /// `members[(seed + rank) mod n]`.
    pub fn member_at(&self, seed: u64, rank: u64) -> ValidatorId {
        let n = self.size() as u64;
        self.members[((seed % n + rank % n) % n) as usize]
    }

    /// Committee left after removing `removed`; the fault budget is the
    /// largest `f'` with `5f' + 1 <= n'`.
    pub fn without(&self, removed: &[ValidatorId]) -> Committee {
        let members: Vec<_> = self.members.iter().copied().filter(|m| !removed.contains(m)).collect();
        let f = members.len().saturating_sub(1) / 5;
        Committee { members, f, mode: self.mode }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_quorums() {
        for f in 0..8 {
            let c = Committee::standard(f, Mode::PartialSync);
            assert_eq!(c.size(), 5 * f + 1);
            assert_eq!(c.strong_quorum(), 4 * f + 1);
            assert_eq!(c.weak_quorum(), 2 * f + 1);
        }
    }

    #[test]
    fn rejects_undersized() {
        let members = (0..5).map(ValidatorId).collect();
        assert_eq!(
            Committee::new(members, 1, Mode::PartialSync),
            Err(CommitteeError::TooSmall { size: 5, f: 1 })
        );
    }

    #[test]
    fn removing_two_of_six_leaves_four_with_no_fault_budget() {
        let c = Committee::standard(1, Mode::PartialSync);
        let reduced = c.without(&[ValidatorId(1), ValidatorId(4)]);
        assert_eq!(reduced.members(), &[ValidatorId(0), ValidatorId(2), ValidatorId(3), ValidatorId(5)]);
        assert_eq!(reduced.f(), 0);
        assert_eq!(reduced.strong_quorum(), 4);
        assert_eq!(reduced.weak_quorum(), 4);
    }

    #[test]
    fn member_at_wraps() {
        let c = Committee::standard(1, Mode::PartialSync);
        assert_eq!(c.member_at(4, 0), ValidatorId(4));
        assert_eq!(c.member_at(4, 1), ValidatorId(5));
        assert_eq!(c.member_at(6, 0), ValidatorId(0));
        assert_eq!(c.member_at(3, 1), ValidatorId(4));
    }
}
