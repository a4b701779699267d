// SPDX-License-Identifier: Apache-2.0

//! Blocks, references and validity.
//!
//! A block digest is SHA-256 over a canonical big-endian encoding of the
//! block contents, in field order:
//!
//! ```text
//! author       u32
//! round        u64
//! parents      u32 count, then per parent: author u32, round u64, digest [u8; 32]
//! transactions u32 count, then per transaction: u32 length, bytes
//! coin_share   u8 0 (absent) | u8 1, author u32, round u64
//! ```
//!
//! The authentication tag is not part of the digest.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::types::{Committee, Mode, Round, ValidatorId};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

// Digests are uniform already, so a prefix keys hash maps well.
impl std::hash::Hash for Digest {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        state.write_u64(u64::from_le_bytes(self.0[..8].try_into().expect("8 bytes")));
    }
}

impl Digest {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(Digest(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &self.to_hex()[..8])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("bad digest"))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockRef {
    pub author: ValidatorId,
    pub round: Round,
    pub digest: Digest,
}

impl BlockRef {
    /// The `(author, round)` position this block occupies.
    pub fn position(&self) -> (ValidatorId, Round) {
        (self.author, self.round)
    }
}

// Rounds first so that sorted collections follow DAG height.
impl Ord for BlockRef {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.round, self.author, self.digest).cmp(&(other.round, other.author, other.digest))
    }
}

impl PartialOrd for BlockRef {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for BlockRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B({},{})#{:?}", self.author, self.round, self.digest)
    }
}

/// Coin share bound to the `(author, round)` of the carrying block.
///
/// Shares are presence tokens; the coin value itself comes from
/// [`crate::committer::coin`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CoinShare {
    pub author: ValidatorId,
    pub round: Round,
}

/// Identity label binding a signer to a digest.
///
/// Tags can only be produced through a [`Signer`]; the simulator hands each
/// node the signer for its own identity and nothing else.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AuthTag {
    signer: ValidatorId,
    digest: Digest,
}

impl AuthTag {
    pub fn signer(&self) -> ValidatorId {
        self.signer
    }

    pub fn verifies(&self, author: ValidatorId, digest: &Digest) -> bool {
        self.signer == author && self.digest == *digest
    }
}

#[derive(Clone, Debug)]
pub struct Signer {
    id: ValidatorId,
}

impl Signer {
    pub fn new(id: ValidatorId) -> Self {
        Self { id }
    }

    pub fn id(&self) -> ValidatorId {
        self.id
    }

    pub fn sign(&self, digest: &Digest) -> AuthTag {
        AuthTag { signer: self.id, digest: *digest }
    }
}

pub type Transaction = Vec<u8>;

#[derive(Clone, PartialEq, Eq)]
pub struct Block {
    author: ValidatorId,
    round: Round,
    parents: Vec<BlockRef>,
    transactions: Vec<Transaction>,
    coin_share: Option<CoinShare>,
    digest: Digest,
    auth_tag: AuthTag,
}

impl Block {
    pub fn new(
        author: ValidatorId,
        round: Round,
        parents: Vec<BlockRef>,
        transactions: Vec<Transaction>,
        coin_share: Option<CoinShare>,
        signer: &Signer,
    ) -> Self {
        let digest = compute_digest(author, round, &parents, &transactions, coin_share.as_ref());
        let auth_tag = signer.sign(&digest);
        Self { author, round, parents, transactions, coin_share, digest, auth_tag }
    }

    pub fn genesis(author: ValidatorId) -> Self {
        Self::new(author, 0, Vec::new(), Vec::new(), None, &Signer::new(author))
    }

    pub fn author(&self) -> ValidatorId {
        self.author
    }

    pub fn round(&self) -> Round {
        self.round
    }

    pub fn parents(&self) -> &[BlockRef] {
        &self.parents
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.transactions
    }

    pub fn coin_share(&self) -> Option<&CoinShare> {
        self.coin_share.as_ref()
    }

    pub fn digest(&self) -> Digest {
        self.digest
    }

    pub fn auth_tag(&self) -> &AuthTag {
        &self.auth_tag
    }

    pub fn reference(&self) -> BlockRef {
        BlockRef { author: self.author, round: self.round, digest: self.digest }
    }

    pub fn payload_bytes(&self) -> usize {
        self.transactions.iter().map(Vec::len).sum()
    }

    /// Canonical byte encoding (see module docs).
    pub fn encode(&self) -> Vec<u8> {
        encode(self.author, self.round, &self.parents, &self.transactions, self.coin_share.as_ref())
    }
}

impl fmt::Debug for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} <- {:?}", self.reference(), self.parents)
    }
}

fn encode(
    author: ValidatorId,
    round: Round,
    parents: &[BlockRef],
    transactions: &[Transaction],
    coin_share: Option<&CoinShare>,
) -> Vec<u8> {
    let payload: usize = transactions.iter().map(|t| t.len() + 4).sum();
    let mut out = Vec::with_capacity(12 + 4 + parents.len() * 44 + 4 + payload + 13);
    out.extend_from_slice(&author.0.to_be_bytes());
    out.extend_from_slice(&round.to_be_bytes());
    out.extend_from_slice(&(parents.len() as u32).to_be_bytes());
    for p in parents {
        out.extend_from_slice(&p.author.0.to_be_bytes());
        out.extend_from_slice(&p.round.to_be_bytes());
        out.extend_from_slice(&p.digest.0);
    }
    out.extend_from_slice(&(transactions.len() as u32).to_be_bytes());
    for t in transactions {
        out.extend_from_slice(&(t.len() as u32).to_be_bytes());
        out.extend_from_slice(t);
    }
    match coin_share {
        None => out.push(0),
        Some(s) => {
            out.push(1);
            out.extend_from_slice(&s.author.0.to_be_bytes());
            out.extend_from_slice(&s.round.to_be_bytes());
        }
    }
    out
}

fn compute_digest(
    author: ValidatorId,
    round: Round,
    parents: &[BlockRef],
    transactions: &[Transaction],
    coin_share: Option<&CoinShare>,
) -> Digest {
    let bytes = encode(author, round, parents, transactions, coin_share);
    Digest(Sha256::digest(&bytes).into())
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum ValidityError {
    /// Tag does not name the author, does not cover the digest, or the author
    /// is not a committee member.
    #[error("authentication tag does not verify for {0}")]
    BadSignature(ValidatorId),
    #[error("parent {parent:?} is not from round {expected}")]
    WrongParentRound { parent: BlockRef, expected: Round },
    #[error("{found} distinct parent authors, need {needed}")]
    InsufficientParents { found: usize, needed: usize },
    #[error("parent author {0} appears twice")]
    DuplicateParentAuthor(ValidatorId),
    #[error("missing or malformed coin share")]
    MissingCoinShare,
}

/// Checks authentication, parent structure and the coin share.
pub fn validate_block(b: &Block, c: &Committee) -> Result<(), ValidityError> {
    if !c.contains(b.author) || !b.auth_tag.verifies(b.author, &b.digest) {
        return Err(ValidityError::BadSignature(b.author));
    }
    if b.round == 0 {
        // Genesis: no parents.
        return match b.parents.first() {
            Some(p) => Err(ValidityError::WrongParentRound { parent: *p, expected: 0 }),
            None => Ok(()),
        };
    }
    let mut authors = BTreeSet::new();
    for p in &b.parents {
        if p.round + 1 != b.round {
            return Err(ValidityError::WrongParentRound { parent: *p, expected: b.round - 1 });
        }
        if !authors.insert(p.author) {
            return Err(ValidityError::DuplicateParentAuthor(p.author));
        }
    }
    let found = authors.iter().filter(|a| c.contains(**a)).count();
    if found < c.strong_quorum() {
        return Err(ValidityError::InsufficientParents { found, needed: c.strong_quorum() });
    }
    if c.mode() == Mode::Async {
        match b.coin_share {
            Some(s) if s.author == b.author && s.round == b.round => {}
            _ => return Err(ValidityError::MissingCoinShare),
        }
    }
    Ok(())
}
