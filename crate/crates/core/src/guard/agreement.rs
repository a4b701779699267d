// SPDX-License-Identifier: Apache-2.0

//! Agreement on one blameset among guards under synchrony.
//!
//! Every guard with a recovery input broadcasts it with its signature. A
//! value is accepted when it carries a chain of `k` distinct signatures,
//! starting with the proposer's, and arrives by `epoch + k * delta`; a newly
//! accepted value is forwarded at once with one more signature. At
//! `epoch + (t + 1) * delta` every proposer with exactly one accepted value
//! contributes it, and the first valid contribution in proposer order is the
//! output.
//!
//! The epoch is the earliest start any guard announced. Messages naming a
//! later epoch than the local one are ignored, and values from superseded
//! epochs are discarded at decision time.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use sha2::{Digest as _, Sha256};

use super::blameset::{BlameSet, GuardKey, GuardTag};
use crate::block::Digest;
use crate::types::{GuardId, Time};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DsMessage {
    pub proposer: GuardId,
    pub epoch: Time,
    pub value: Arc<BlameSet>,
    pub chain: Vec<GuardTag>,
}

impl DsMessage {
    pub(crate) fn signed_digest(proposer: GuardId, epoch: Time, value: &Digest) -> Digest {
        let mut h = Sha256::new();
        h.update(b"recover");
        h.update(proposer.0.to_be_bytes());
        h.update(epoch.to_be_bytes());
        h.update(value.0);
        Digest(h.finalize().into())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AgreementAction {
    /// Send to every other guard.
    Send(DsMessage),
    /// Decide at this time; replaces any earlier deadline.
    ArmDecision(Time),
}

/// Why a message was not accepted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rejection {
    BadChain,
    Late,
    StaleEpoch,
    InvalidValue,
    Duplicate,
    Decided,
}

#[derive(Debug)]
pub struct Agreement {
    key: GuardKey,
    guard_count: usize,
    delta: Time,
    epoch: Option<Time>,
    // (proposer, epoch) -> accepted value digests and values.
    accepted: BTreeMap<(GuardId, Time), BTreeMap<Digest, Arc<BlameSet>>>,
    outcome: Option<Option<Arc<BlameSet>>>,
}

/// Largest number of faulty guards an honest majority tolerates.
pub fn guard_fault_budget(guard_count: usize) -> usize {
    guard_count.saturating_sub(1) / 2
}

impl Agreement {
    pub fn new(key: GuardKey, guard_count: usize, delta: Time) -> Self {
        Self { key, guard_count, delta, epoch: None, accepted: BTreeMap::new(), outcome: None }
    }

    pub fn fault_budget(&self) -> usize {
        guard_fault_budget(self.guard_count)
    }

    /// `(t + 1) * delta`.
    pub fn duration(&self) -> Time {
        (self.fault_budget() as Time + 1) * self.delta
    }

    pub fn epoch(&self) -> Option<Time> {
        self.epoch
    }

    pub fn outcome(&self) -> Option<&Option<Arc<BlameSet>>> {
        self.outcome.as_ref()
    }

    pub fn is_running(&self) -> bool {
        self.epoch.is_some() && self.outcome.is_none()
    }

    fn set_epoch(&mut self, e: Time, out: &mut Vec<AgreementAction>) {
        if self.epoch.is_none_or(|cur| e < cur) {
            self.epoch = Some(e);
            out.push(AgreementAction::ArmDecision(e + self.duration()));
        }
    }

    /// Broadcasts `value`. A guard joining an epoch that already started
    /// still sends, but only counts its own value once it comes back.
    pub fn propose(&mut self, value: Arc<BlameSet>, now: Time) -> Vec<AgreementAction> {
        let mut out = Vec::new();
        if self.outcome.is_some() {
            return out;
        }
        self.set_epoch(now, &mut out);
        let epoch = self.epoch.expect("set above");
        let me = self.key.id();
        let tag = self.key.sign(&DsMessage::signed_digest(me, epoch, &value.digest()));
        if now == epoch {
            self.accepted.entry((me, epoch)).or_default().insert(value.digest(), value.clone());
        }
        out.push(AgreementAction::Send(DsMessage { proposer: me, epoch, value, chain: vec![tag] }));
        out
    }

    pub fn on_message(
        &mut self,
        m: &DsMessage,
        now: Time,
        valid: impl Fn(&BlameSet) -> bool,
    ) -> Result<Vec<AgreementAction>, Rejection> {
        if self.outcome.is_some() {
            return Err(Rejection::Decided);
        }
        let k = m.chain.len();
        let digest = DsMessage::signed_digest(m.proposer, m.epoch, &m.value.digest());
        let mut signers = BTreeSet::new();
        let chain_ok = k >= 1
            && k <= self.fault_budget() + 1
            && m.chain[0].signer() == m.proposer
            && m.chain.iter().all(|t| {
                (t.signer().0 as usize) < self.guard_count && t.verifies(t.signer(), &digest) && signers.insert(t.signer())
            });
        if !chain_ok {
            return Err(Rejection::BadChain);
        }
        if now > m.epoch + k as Time * self.delta {
            return Err(Rejection::Late);
        }
        if self.epoch.is_some_and(|e| m.epoch > e) {
            return Err(Rejection::StaleEpoch);
        }
        if !valid(&m.value) {
            return Err(Rejection::InvalidValue);
        }
        let mut out = Vec::new();
        self.set_epoch(m.epoch, &mut out);
        let slot = self.accepted.entry((m.proposer, m.epoch)).or_default();
        if slot.contains_key(&m.value.digest()) {
            return if out.is_empty() { Err(Rejection::Duplicate) } else { Ok(out) };
        }
        // Two values already prove the proposer equivocated.
        let forward = slot.len() < 2;
        slot.insert(m.value.digest(), m.value.clone());
        let me = self.key.id();
        if forward && k <= self.fault_budget() && !signers.contains(&me) {
            let mut chain = m.chain.clone();
            chain.push(self.key.sign(&digest));
            out.push(AgreementAction::Send(DsMessage { chain, ..m.clone() }));
        }
        Ok(out)
    }

    /// Fixes the outcome once the deadline for the current epoch has passed.
    pub fn on_deadline(&mut self, now: Time, valid: impl Fn(&BlameSet) -> bool) -> Option<&Option<Arc<BlameSet>>> {
        let epoch = self.epoch?;
        if self.outcome.is_some() || now < epoch + self.duration() {
            return None;
        }
        let picked = (0..self.guard_count as u32)
            .filter_map(|j| self.accepted.get(&(GuardId(j), epoch)))
            .filter(|vals| vals.len() == 1)
            .filter_map(|vals| vals.values().next())
            .find(|v| valid(v))
            .cloned();
        self.outcome = Some(picked);
        self.outcome.as_ref()
    }

    /// The single value accepted from each proposer in the current epoch.
    pub fn contributions(&self) -> BTreeMap<GuardId, Option<Arc<BlameSet>>> {
        let Some(epoch) = self.epoch else { return BTreeMap::new() };
        self.accepted
            .iter()
            .filter(|((_, e), _)| *e == epoch)
            .map(|((j, _), vals)| (*j, if vals.len() == 1 { vals.values().next().cloned() } else { None }))
            .collect()
    }
}
