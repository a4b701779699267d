// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

use crate::types::Round;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WaveCoords {
    pub wave_offset: u64,
    pub leader_offset: u64,
    pub wave_length: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WavePosition {
    pub wave: u64,
    pub propose_round: Round,
    pub decision_round: Round,
}

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
#[error("round {round} is not a propose round for offset {offset} and wave length {wave_length}")]
pub struct MisalignedRound {
    pub round: Round,
    pub offset: u64,
    pub wave_length: u64,
}

impl WaveCoords {
    /// Coordinates of the decider responsible for slot `(round, rank)`.
    pub fn for_slot(round: Round, rank: u64, wave_length: u64) -> Self {
        Self { wave_offset: round % wave_length, leader_offset: rank, wave_length }
    }

    pub fn propose_round(&self, wave: u64) -> Round {
        wave * self.wave_length + self.wave_offset
    }

    pub fn decision_round(&self, wave: u64) -> Round {
        self.propose_round(wave) + self.wave_length - 1
    }

    /// Wave whose propose round is `r`.
    pub fn wave_number(&self, r: Round) -> Result<u64, MisalignedRound> {
        let misaligned = MisalignedRound { round: r, offset: self.wave_offset, wave_length: self.wave_length };
        if r < self.wave_offset || (r - self.wave_offset) % self.wave_length != 0 {
            return Err(misaligned);
        }
        Ok((r - self.wave_offset) / self.wave_length)
    }

    pub fn position(&self, r: Round) -> Result<WavePosition, MisalignedRound> {
        let wave = self.wave_number(r)?;
        Ok(WavePosition { wave, propose_round: self.propose_round(wave), decision_round: self.decision_round(wave) })
    }
}
