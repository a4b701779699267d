// SPDX-License-Identifier: Apache-2.0

//! Common coin for coin-elected leaders.
//!
//! The coin value for a wave is a keyed hash of the epoch seed and the wave's
//! decision round. It is revealed only to holders of `f + 1` distinct shares
//! from that decision round; which shares are used does not matter.

use std::collections::BTreeSet;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::block::CoinShare;
use crate::dag::Dag;
use crate::types::{Committee, Round};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Coin {
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CoinOutput(pub u64);

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
#[error("{have} distinct shares for round {round}, need {need}")]
pub struct InsufficientShares {
    pub round: Round,
    pub have: usize,
    pub need: usize,
}

impl Coin {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn value(&self, decision_round: Round) -> CoinOutput {
        let mut h = Sha256::new();
        h.update(b"coin");
        h.update(self.seed.to_be_bytes());
        h.update(decision_round.to_be_bytes());
        let out = h.finalize();
        let word = u64::from_be_bytes(out[..8].try_into().expect("8 bytes"));
        CoinOutput(word)
    }

    /// Combines shares for the wave decided at `decision_round`.
    pub fn combine_coin_shares(
        &self,
        shares: &[CoinShare],
        decision_round: Round,
        committee: &Committee,
    ) -> Result<CoinOutput, InsufficientShares> {
        let authors: BTreeSet<_> = shares
            .iter()
            .filter(|s| s.round == decision_round && committee.contains(s.author))
            .map(|s| s.author)
            .collect();
        let need = committee.coin_threshold();
        if authors.len() < need {
            return Err(InsufficientShares { round: decision_round, have: authors.len(), need });
        }
        Ok(self.value(decision_round))
    }

    /// Combines the shares carried by the stored blocks of `decision_round`.
    pub fn from_dag(&self, dag: &Dag, decision_round: Round, committee: &Committee) -> Result<CoinOutput, InsufficientShares> {
        let shares: Vec<CoinShare> = dag.round_blocks(decision_round).filter_map(|b| b.coin_share().copied()).collect();
        self.combine_coin_shares(&shares, decision_round, committee)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::committer::{leader_of, LeaderSlot};
    use crate::types::{Mode, ValidatorId};

    fn share(a: u32, r: Round) -> CoinShare {
        CoinShare { author: ValidatorId(a), round: r }
    }

    #[test]
    fn threshold_is_f_plus_one() {
        let c = Committee::standard(1, Mode::Async);
        let coin = Coin::new(9);
        assert_eq!(
            coin.combine_coin_shares(&[share(0, 5), share(0, 5)], 5, &c),
            Err(InsufficientShares { round: 5, have: 1, need: 2 })
        );
        assert!(coin.combine_coin_shares(&[share(0, 5), share(3, 5)], 5, &c).is_ok());
    }

    #[test]
    fn shares_from_other_rounds_do_not_count() {
        let c = Committee::standard(1, Mode::Async);
        let coin = Coin::new(1);
        assert!(coin.combine_coin_shares(&[share(0, 5), share(1, 4)], 5, &c).is_err());
    }

    #[test]
    fn any_qualifying_subset_gives_the_same_value() {
        let c = Committee::standard(2, Mode::Async);
        let coin = Coin::new(77);
        for r in 0..40 {
            let a = coin.combine_coin_shares(&[share(0, r), share(1, r), share(2, r)], r, &c).unwrap();
            let b = coin.combine_coin_shares(&[share(10, r), share(7, r), share(4, r), share(9, r)], r, &c).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn leader_distribution_is_uniform() {
        // Chi-square over 5000 waves against the uniform distribution on 6
        // outcomes; 5 degrees of freedom, 0.999 quantile is 20.515.
        let c = Committee::standard(1, Mode::Async);
        let coin = Coin::new(2024);
        let shares: Vec<_> = (0..2).map(|a| share(a, 0)).collect();
        let mut counts = [0u64; 6];
        let waves = 5000u64;
        for w in 0..waves {
            let r = 3 * w + 2;
            let s: Vec<_> = shares.iter().map(|x| CoinShare { round: r, ..*x }).collect();
            let out = coin.combine_coin_shares(&s, r, &c).unwrap();
            let leader = leader_of(LeaderSlot::new(r - 2, 0), &c, Some(out)).unwrap();
            counts[leader.0 as usize] += 1;
        }
        let expected = waves as f64 / 6.0;
        let chi2: f64 = counts.iter().map(|&k| (k as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 20.515, "chi2 = {chi2}, counts = {counts:?}");
        // Every bucket within 3 sigma of the multinomial mean.
        let sigma = (waves as f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        for k in counts {
            assert!((k as f64 - expected).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }
}
