// SPDX-License-Identifier: Apache-2.0

//! Core/guard stake split.
//!
//! The core set must hold at least `ceil(5(S - 1) / 6)` of the total stake
//! `S` for the guard layer's recovery guarantees to hold.

use thiserror::Error;

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
#[error("core stake {core} below required {required} of total {total}")]
pub struct StakeViolation {
    pub total: u64,
    pub core: u64,
    pub required: u64,
}

/// `ceil(5(S - 1) / 6)`.
pub fn required_core_stake(total: u64) -> u64 {
    let num = 5 * (total as u128).saturating_sub(1);
    num.div_ceil(6) as u64
}

pub fn validate_stake_split(total: u64, core: u64) -> Result<(), StakeViolation> {
    let required = required_core_stake(total);
    if core >= required {
        Ok(())
    } else {
        Err(StakeViolation { total, core, required })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(validate_stake_split(600, 500), Ok(()));
        assert_eq!(
            validate_stake_split(600, 490),
            Err(StakeViolation { total: 600, core: 490, required: 500 })
        );
        assert_eq!(validate_stake_split(7, 5), Ok(()));
        assert!(validate_stake_split(7, 4).is_err());
    }

    #[test]
    fn matches_rational_bound_on_small_totals() {
        // Compare against the inequality 6 * core >= 5 * (S - 1) directly.
        for total in 1..2000u64 {
            for core in 0..=total {
                let exact = 6 * core >= 5 * (total - 1);
                assert_eq!(validate_stake_split(total, core).is_ok(), exact, "S={total} Sc={core}");
            }
        }
    }
}
