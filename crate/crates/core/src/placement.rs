//! Storage layout: every message is cut into `C(N,t)` sub-messages of `t^K`
//! bits, one per `t`-subset of databases, and each database stores every
//! sub-message whose subset contains it.

use std::collections::BTreeMap;

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{binom, checked_pow, enum_subsets, Rational, SubsetId};
use crate::error::{Error, Result};

/// Packed bit vector used for messages, sub-messages and answers.
pub type Bits = BitVec<u8, Lsb0>;

/// Validated system parameters and every size derived from them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Params {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub t: usize,
    /// Sub-messages per message, `C(N,t)`.
    pub sub_count: usize,
    /// Bits per sub-message, `t^K`.
    pub sub_size: usize,
    /// Message length `L = C(N,t) * t^K`.
    #[serde(rename = "L")]
    pub message_len: usize,
    /// Normalized storage `t/N`.
    pub mu: Rational,
    /// Bits held by each database, `K * C(N-1,t-1) * t^K`.
    pub per_db_storage: u64,
}

fn to_usize(v: u64, what: &'static str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Overflow(what))
}

impl Params {
    pub fn new(n: usize, k: usize, t: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParams("N must be at least 1".into()));
        }
        if k == 0 {
            return Err(Error::InvalidParams("K must be at least 1".into()));
        }
        if t == 0 || t > n {
            return Err(Error::InvalidParams(format!(
                "t = {t} must satisfy 1 <= t <= N = {n}"
            )));
        }
        let (n64, k64, t64) = (n as u64, k as u64, t as u64);
        let sub_count = binom(n64, t as i64)?;
        let sub_size = checked_pow(t64, k64)?;
        let message_len = sub_count
            .checked_mul(sub_size)
            .ok_or(Error::Overflow("message length"))?;
        let per_db_storage = k64
            .checked_mul(binom(n64 - 1, t as i64 - 1)?)
            .and_then(|v| v.checked_mul(sub_size))
            .ok_or(Error::Overflow("per-database storage"))?;
        Ok(Params {
            n,
            k,
            t,
            sub_count: to_usize(sub_count, "sub-message count")?,
            sub_size: to_usize(sub_size, "sub-message size")?,
            message_len: to_usize(message_len, "message length")?,
            mu: Rational::ratio(t64, n64)?,
            per_db_storage,
        })
    }

    /// Sub-messages of one message held by each database, `C(N-1,t-1)`.
    pub fn subs_per_db(&self) -> u64 {
        // Cannot overflow: bounded by sub_count, which was computed already.
        binom(self.n as u64 - 1, self.t as i64 - 1).expect("bounded by C(N,t)")
    }

    /// `mu * K * L` evaluated as an exact rational.
    pub fn mu_kl(&self) -> Result<Rational> {
        let kl = (self.k as u64)
            .checked_mul(self.message_len as u64)
            .ok_or(Error::Overflow("K*L"))?;
        self.mu.checked_mul(Rational::ratio(kl, 1)?)
    }

    pub(crate) fn check_db(&self, db: usize) -> Result<()> {
        if db == 0 || db > self.n {
            return Err(Error::InvalidParams(format!(
                "database index {db} out of range 1..={}",
                self.n
            )));
        }
        Ok(())
    }
}

/// Which `(message, subset)` sub-messages each database stores.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Placement {
    params: Params,
    subsets: Vec<SubsetId>,
    /// Index `db - 1`; each list ordered by message then subset rank.
    holdings: Vec<Vec<(usize, SubsetId)>>,
}

impl Placement {
    pub fn build(params: &Params) -> Result<Self> {
        let subsets = enum_subsets(params.n, params.t)?;
        let holdings = (1..=params.n)
            .map(|db| {
                (1..=params.k)
                    .flat_map(|m| {
                        subsets
                            .iter()
                            .filter(move |s| s.contains(db))
                            .map(move |s| (m, s.clone()))
                    })
                    .collect()
            })
            .collect();
        Ok(Placement {
            params: params.clone(),
            subsets,
            holdings,
        })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// All subsets in rank order.
    pub fn subsets(&self) -> &[SubsetId] {
        &self.subsets
    }

    pub fn subset(&self, rank: usize) -> Option<&SubsetId> {
        self.subsets.get(rank)
    }

    /// Subsets containing `db`, in rank order.
    pub fn subsets_of(&self, db: usize) -> impl Iterator<Item = &SubsetId> + '_ {
        self.subsets.iter().filter(move |s| s.contains(db))
    }

    /// `(message, subset)` pairs stored at `db` (1-based).
    pub fn stored_at(&self, db: usize) -> &[(usize, SubsetId)] {
        &self.holdings[db - 1]
    }

    pub fn holds(&self, db: usize, message: usize, subset_rank: usize) -> bool {
        (1..=self.params.k).contains(&message)
            && self
                .subsets
                .get(subset_rank)
                .is_some_and(|s| s.contains(db))
    }

    pub fn to_document(&self) -> PlacementDocument {
        let assignments = self
            .holdings
            .iter()
            .enumerate()
            .flat_map(|(i, held)| {
                held.iter().map(move |(m, s)| Assignment {
                    db: i + 1,
                    message: *m,
                    subset_members: s.members().to_vec(),
                })
            })
            .collect();
        PlacementDocument {
            version: PlacementDocument::VERSION,
            n: self.params.n,
            k: self.params.k,
            t: self.params.t,
            assignments,
        }
    }

    /// Rebuilds a placement from a document, rejecting any document that
    /// differs from the canonical layout for its parameters.
    pub fn from_document(doc: &PlacementDocument) -> Result<Self> {
        if doc.version != PlacementDocument::VERSION {
            return Err(Error::InvalidParams(format!(
                "unsupported placement document version {}",
                doc.version
            )));
        }
        let placement = Placement::build(&Params::new(doc.n, doc.k, doc.t)?)?;
        if placement.to_document().assignments != doc.assignments {
            return Err(Error::InvalidParams(
                "placement assignments do not follow the subset membership rule".into(),
            ));
        }
        Ok(placement)
    }
}

/// Versioned JSON form of a [`Placement`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementDocument {
    pub version: u32,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub t: usize,
    pub assignments: Vec<Assignment>,
}

impl PlacementDocument {
    pub const VERSION: u32 = 1;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub db: usize,
    pub message: usize,
    pub subset_members: Vec<usize>,
}

/// The contents `Z_n` of one database.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatabaseStore {
    db: usize,
    n: usize,
    sub_size: usize,
    contents: BTreeMap<(usize, usize), Bits>,
}

impl DatabaseStore {
    pub fn db(&self) -> usize {
        self.db
    }

    /// Number of databases in the system this store belongs to.
    pub fn system_size(&self) -> usize {
        self.n
    }

    pub fn sub_size(&self) -> usize {
        self.sub_size
    }

    /// Sub-message `(message, subset rank)` if this database holds it.
    pub fn get(&self, message: usize, subset_rank: usize) -> Option<&BitSlice<u8, Lsb0>> {
        self.contents
            .get(&(message, subset_rank))
            .map(|b| b.as_bitslice())
    }

    pub fn sub_messages(&self) -> usize {
        self.contents.len()
    }

    pub fn stored_bits(&self) -> u64 {
        self.contents.values().map(|b| b.len() as u64).sum()
    }
}

/// Materializes every database's store from the `K` messages.
///
/// Sub-message `(m, S)` is the slice of message `m` starting at
/// `rank(S) * sub_size`.
pub fn init_databases(placement: &Placement, messages: &[Bits]) -> Result<Vec<DatabaseStore>> {
    let p = placement.params();
    if messages.len() != p.k {
        return Err(Error::MessageCount {
            expected: p.k,
            actual: messages.len(),
        });
    }
    for (i, msg) in messages.iter().enumerate() {
        if msg.len() != p.message_len {
            return Err(Error::MessageLength {
                message: i + 1,
                expected: p.message_len,
                actual: msg.len(),
            });
        }
    }
    Ok((1..=p.n)
        .map(|db| {
            let contents = placement
                .stored_at(db)
                .iter()
                .map(|(m, s)| {
                    let start = s.rank() * p.sub_size;
                    let slice = &messages[m - 1][start..start + p.sub_size];
                    ((*m, s.rank()), slice.to_bitvec())
                })
                .collect();
            DatabaseStore {
                db,
                n: p.n,
                sub_size: p.sub_size,
                contents,
            }
        })
        .collect())
}

/// Both sides of the per-database storage identity.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StorageReport {
    /// Bits counted from the placement, per database.
    pub counted_per_db: Vec<u64>,
    /// `K * C(N-1,t-1) * t^K`.
    pub closed_form: u64,
    /// `mu * K * L`.
    pub mu_kl: Rational,
}

/// Checks that every database stores exactly `mu*K*L` bits.
pub fn verify_storage(placement: &Placement) -> Result<StorageReport> {
    let p = placement.params();
    let closed_form = p.per_db_storage;
    let mu_kl = p.mu_kl()?;
    let mut counted_per_db = Vec::with_capacity(p.n);
    for db in 1..=p.n {
        let counted = (placement.stored_at(db).len() as u64)
            .checked_mul(p.sub_size as u64)
            .ok_or(Error::Overflow("stored bits"))?;
        if counted != closed_form {
            return Err(Error::StorageMismatch {
                counted,
                closed_form,
            });
        }
        counted_per_db.push(counted);
    }
    if mu_kl != Rational::ratio(closed_form, 1)? {
        return Err(Error::StorageMismatch {
            counted: closed_form,
            closed_form: mu_kl.floor() as u64,
        });
    }
    Ok(StorageReport {
        counted_per_db,
        closed_form,
        mu_kl,
    })
}
