// SPDX-License-Identifier: Apache-2.0

//! Committee change after an agreed blameset.

use crate::block::BlockRef;
use crate::types::Committee;

use super::blameset::{BlameKind, BlameSet, Proof};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reconfiguration {
    pub committee: Committee,
    pub kind: BlameKind,
    /// For safety recoveries, the conflicting leader block holding a strong
    /// certificate; the surviving history extends it.
    pub canonical: Option<BlockRef>,
}

/// Removes the blamed members. The remaining committee restarts from genesis.
pub fn apply_reconfiguration(bs: &BlameSet, committee: &Committee) -> Reconfiguration {
    let removed: Vec<_> = bs.members.iter().copied().collect();
    let canonical = match &bs.proof {
        Proof::Safety { certified, .. } => *certified,
        Proof::Liveness { .. } => None,
    };
    Reconfiguration { committee: committee.without(&removed), kind: bs.kind(), canonical }
}
