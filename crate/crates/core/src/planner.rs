//! K-stage XOR query construction.
//!
//! Stage `i` downloads XORs of bits from `i` distinct messages, every bit of
//! an element taken from the same sub-message `S`. At stage 1 each database
//! is asked for one fresh bit of every stored sub-message. At stage `i >= 2`,
//! database `n` pairs a fresh desired bit with each undesired sum that another
//! member `d` of `S` returned at stage `i - 1` (the side-information ledger),
//! and pads the undesired message sets with `(t-1)^(i-1)` fresh sums so the
//! per-`(S, M)` element census does not depend on the desired index.
//!
//! Fresh bits are drawn through a user-private permutation of each
//! sub-message, so the positions a database sees are uniformly relabelled.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::combinatorics::{binom, checked_pow, enum_subsets, SubsetId};
use crate::error::{Error, Result};
use crate::placement::{Params, Placement};

/// One bit of one message, inside the sub-message named by the enclosing
/// element. `position` is the true position in stored order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BitRef {
    pub message: usize,
    pub position: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    DesiredContaining,
    PureUndesired,
}

/// A single XOR request: one bit from each message in the element, all from
/// sub-message `subset`. Bits are sorted by message.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct QueryElement {
    pub stage: usize,
    #[serde(rename = "subset_members", serialize_with = "members_of")]
    pub subset: SubsetId,
    pub bits: Vec<BitRef>,
    pub kind: ElementKind,
}

fn members_of<S: Serializer>(subset: &SubsetId, s: S) -> std::result::Result<S::Ok, S::Error> {
    subset.members().serialize(s)
}

impl QueryElement {
    pub fn messages(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().map(|b| b.message)
    }
}

/// Location of an answer bit: element `index` of database `db`'s query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnswerRef {
    pub db: usize,
    pub index: usize,
}

/// Per-sub-message relabelling known only to the user.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SecretPermutations {
    pub seed: Option<u64>,
    sub_count: usize,
    /// Index `(message - 1) * sub_count + subset rank`.
    perms: Vec<Vec<usize>>,
}

impl SecretPermutations {
    pub fn identity(params: &Params) -> Self {
        let id: Vec<usize> = (0..params.sub_size).collect();
        SecretPermutations {
            seed: None,
            sub_count: params.sub_count,
            perms: vec![id; params.k * params.sub_count],
        }
    }

    /// Independent uniform permutation for each `(message, subset)`, drawn in
    /// message-then-rank order from a ChaCha20 stream seeded by `seed`.
    pub fn sample(params: &Params, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let perms = (0..params.k * params.sub_count)
            .map(|_| {
                let mut p: Vec<usize> = (0..params.sub_size).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        SecretPermutations {
            seed: Some(seed),
            sub_count: params.sub_count,
            perms,
        }
    }

    /// Wraps explicit permutations (message-major, then subset rank).
    pub fn from_permutations(params: &Params, perms: Vec<Vec<usize>>) -> Result<Self> {
        let sp = SecretPermutations {
            seed: None,
            sub_count: params.sub_count,
            perms,
        };
        sp.check(params)?;
        Ok(sp)
    }

    pub fn get(&self, message: usize, subset_rank: usize) -> &[usize] {
        &self.perms[(message - 1) * self.sub_count + subset_rank]
    }

    pub fn as_slice(&self) -> &[Vec<usize>] {
        &self.perms
    }

    fn check(&self, params: &Params) -> Result<()> {
        if self.sub_count != params.sub_count || self.perms.len() != params.k * params.sub_count {
            return Err(Error::BadPermutations(format!(
                "expected {} permutations, got {}",
                params.k * params.sub_count,
                self.perms.len()
            )));
        }
        for (i, p) in self.perms.iter().enumerate() {
            let mut seen = vec![false; params.sub_size];
            let ok = p.len() == params.sub_size
                && p.iter()
                    .all(|&x| x < params.sub_size && !std::mem::replace(&mut seen[x], true));
            if !ok {
                return Err(Error::BadPermutations(format!(
                    "entry {i} is not a permutation of 0..{}",
                    params.sub_size
                )));
            }
        }
        Ok(())
    }
}

/// Per-database element counts of one stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StageCount {
    pub total: u64,
    pub desired: u64,
}

/// Closed-form per-database counts for stage `i`.
///
/// Stage 1: `(K*C(N-1,t-1), C(N-1,t-1))`. Stage `i >= 2`:
/// `C(K,i) (N-1) C(N-2,t-2) (t-1)^(i-2)` total, with `C(K-1,i-1)` in place of
/// `C(K,i)` for the desired count.
pub fn stage_counts(params: &Params, stage: usize) -> Result<StageCount> {
    let (n, k, t) = (params.n as u64, params.k as u64, params.t as i64);
    if stage == 0 || stage > params.k {
        return Err(Error::InvalidParams(format!(
            "stage {stage} out of range 1..={}",
            params.k
        )));
    }
    let ovf = || Error::Overflow("stage count");
    if stage == 1 {
        let per = binom(n - 1, t - 1)?;
        return Ok(StageCount {
            total: k.checked_mul(per).ok_or_else(ovf)?,
            desired: per,
        });
    }
    let i = stage as i64;
    let common = if t < 2 {
        0
    } else {
        (n - 1)
            .checked_mul(binom(n - 2, t - 2)?)
            .and_then(|v| v.checked_mul(checked_pow(t as u64 - 1, stage as u64 - 2).ok()?))
            .ok_or_else(ovf)?
    };
    Ok(StageCount {
        total: binom(k, i)?.checked_mul(common).ok_or_else(ovf)?,
        desired: binom(k - 1, i - 1)?.checked_mul(common).ok_or_else(ovf)?,
    })
}

/// The complete user-side plan for retrieving message `theta`.
#[derive(Clone, Debug, Serialize)]
pub struct QueryPlan {
    pub params: Params,
    pub theta: usize,
    /// Index `db - 1`, elements in emission order.
    pub queries: Vec<Vec<QueryElement>>,
    /// Aligned with `queries`: for desired elements of stage >= 2, the answer
    /// holding the undesired sum that cancels the interference.
    pub decode_map: Vec<Vec<Option<AnswerRef>>>,
    pub permutations: SecretPermutations,
    /// Final fresh-bit counter of each `(message, subset)`, message-major.
    pub fresh_counters: Vec<usize>,
}

/// What a database receives: no desired index, no kinds, no secrets.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatabaseQuery {
    pub db: usize,
    pub elements: Vec<ViewElement>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ViewElement {
    pub stage: usize,
    pub subset_members: Vec<usize>,
    pub bits: Vec<BitRef>,
}

type LedgerKey = (usize, usize, Vec<usize>);

/// A stage's undesired sums, keyed by (generating db, subset rank, messages).
#[derive(Default)]
struct Ledger {
    entries: BTreeMap<LedgerKey, Vec<(usize, Vec<BitRef>)>>,
}

struct FreshBits<'a> {
    params: &'a Params,
    perms: &'a SecretPermutations,
    counters: Vec<usize>,
}

impl FreshBits<'_> {
    fn next(&mut self, message: usize, subset_rank: usize) -> Result<BitRef> {
        let idx = (message - 1) * self.params.sub_count + subset_rank;
        let c = self.counters[idx];
        if c >= self.params.sub_size {
            return Err(Error::CountMismatch(format!(
                "sub-message (message {message}, subset rank {subset_rank}) ran out of fresh bits"
            )));
        }
        self.counters[idx] += 1;
        Ok(BitRef {
            message,
            position: self.perms.get(message, subset_rank)[c],
        })
    }
}

/// Builds the plan for desired message `theta` (1-based). Never looks at
/// message contents.
pub fn build_query_plan(
    placement: &Placement,
    theta: usize,
    permutations: &SecretPermutations,
) -> Result<QueryPlan> {
    let params = placement.params();
    if theta == 0 || theta > params.k {
        return Err(Error::InvalidParams(format!(
            "desired message {theta} out of range 1..={}",
            params.k
        )));
    }
    permutations.check(params)?;

    let mut fresh = FreshBits {
        params,
        perms: permutations,
        counters: vec![0; params.k * params.sub_count],
    };
    let mut queries: Vec<Vec<QueryElement>> = vec![Vec::new(); params.n];
    let mut decode_map: Vec<Vec<Option<AnswerRef>>> = vec![Vec::new(); params.n];

    let mut ledger = Ledger::default();
    for db in 1..=params.n {
        for subset in placement.subsets_of(db) {
            for m in 1..=params.k {
                let bit = fresh.next(m, subset.rank())?;
                let kind = if m == theta {
                    ElementKind::DesiredContaining
                } else {
                    ledger
                        .entries
                        .entry((db, subset.rank(), vec![m]))
                        .or_default()
                        .push((queries[db - 1].len(), vec![bit]));
                    ElementKind::PureUndesired
                };
                queries[db - 1].push(QueryElement {
                    stage: 1,
                    subset: subset.clone(),
                    bits: vec![bit],
                    kind,
                });
                decode_map[db - 1].push(None);
            }
        }
    }

    // With t = 1 no subset is shared, so every later stage is empty.
    let last_stage = if params.t == 1 { 1 } else { params.k };
    let padding_base = params.t - 1;
    for stage in 2..=last_stage {
        let message_sets = enum_subsets(params.k, stage)?;
        let padding = checked_pow(padding_base as u64, stage as u64 - 1)?;
        let mut next = Ledger::default();
        for db in 1..=params.n {
            for subset in placement.subsets_of(db) {
                for set in &message_sets {
                    let members = set.members();
                    if set.contains(theta) {
                        let rest: Vec<usize> =
                            members.iter().copied().filter(|&m| m != theta).collect();
                        for &other in subset.members().iter().filter(|&&d| d != db) {
                            let Some(entries) =
                                ledger.entries.get(&(other, subset.rank(), rest.clone()))
                            else {
                                continue;
                            };
                            for (source, side_bits) in entries {
                                let mut bits = side_bits.clone();
                                bits.push(fresh.next(theta, subset.rank())?);
                                bits.sort_unstable();
                                queries[db - 1].push(QueryElement {
                                    stage,
                                    subset: subset.clone(),
                                    bits,
                                    kind: ElementKind::DesiredContaining,
                                });
                                decode_map[db - 1].push(Some(AnswerRef {
                                    db: other,
                                    index: *source,
                                }));
                            }
                        }
                    } else {
                        for _ in 0..padding {
                            let bits = members
                                .iter()
                                .map(|&m| fresh.next(m, subset.rank()))
                                .collect::<Result<Vec<_>>>()?;
                            next.entries
                                .entry((db, subset.rank(), members.to_vec()))
                                .or_default()
                                .push((queries[db - 1].len(), bits.clone()));
                            queries[db - 1].push(QueryElement {
                                stage,
                                subset: subset.clone(),
                                bits,
                                kind: ElementKind::PureUndesired,
                            });
                            decode_map[db - 1].push(None);
                        }
                    }
                }
            }
        }
        ledger = next;
    }

    let plan = QueryPlan {
        params: params.clone(),
        theta,
        queries,
        decode_map,
        permutations: permutations.clone(),
        fresh_counters: fresh.counters,
    };
    plan.verify_counts()?;
    Ok(plan)
}

impl QueryPlan {
    /// Number of stages that can hold elements.
    pub fn stages(&self) -> usize {
        self.params.k
    }

    /// Per-stage `(total, desired)` element counts actually present at `db`.
    pub fn stage_table(&self, db: usize) -> Vec<StageCount> {
        let mut rows = vec![
            StageCount {
                total: 0,
                desired: 0
            };
            self.params.k
        ];
        for el in &self.queries[db - 1] {
            let row = &mut rows[el.stage - 1];
            row.total += 1;
            if el.kind == ElementKind::DesiredContaining {
                row.desired += 1;
            }
        }
        rows
    }

    pub fn total_downloaded(&self) -> u64 {
        self.queries.iter().map(|q| q.len() as u64).sum()
    }

    /// Element counts per `(subset rank, message set)` at `db`.
    pub fn census(&self, db: usize) -> BTreeMap<(usize, Vec<usize>), u64> {
        let mut out = BTreeMap::new();
        for el in &self.queries[db - 1] {
            *out.entry((el.subset.rank(), el.messages().collect()))
                .or_default() += 1;
        }
        out
    }

    /// Checks the built plan against the closed-form counts and the coverage
    /// of the desired message.
    fn verify_counts(&self) -> Result<()> {
        let p = &self.params;
        let mut desired_total = 0u64;
        for db in 1..=p.n {
            for (i, row) in self.stage_table(db).iter().enumerate() {
                let expect = stage_counts(p, i + 1)?;
                if *row != expect {
                    return Err(Error::CountMismatch(format!(
                        "database {db} stage {}: built {row:?}, expected {expect:?}",
                        i + 1
                    )));
                }
                desired_total += row.desired;
            }
            if let Some(el) = self.queries[db - 1].iter().find(|e| !e.subset.contains(db)) {
                return Err(Error::CountMismatch(format!(
                    "database {db} queried for subset {} it does not store",
                    el.subset
                )));
            }
        }
        let per_db = p.subs_per_db() * checked_pow(p.t as u64, p.k as u64 - 1)?;
        if desired_total != per_db * p.n as u64 {
            return Err(Error::CountMismatch(format!(
                "desired bits {desired_total}, expected {}",
                per_db * p.n as u64
            )));
        }
        // Every position of every sub-message of theta exactly once.
        let mut seen = vec![false; p.message_len];
        for el in self.queries.iter().flatten() {
            for b in el.bits.iter().filter(|b| b.message == self.theta) {
                let slot = el.subset.rank() * p.sub_size + b.position;
                if std::mem::replace(&mut seen[slot], true) {
                    return Err(Error::CountMismatch(format!(
                        "desired bit {} of subset {} requested twice",
                        b.position, el.subset
                    )));
                }
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::CountMismatch(
                "desired message not fully covered".into(),
            ));
        }
        let theta_counters = &self.fresh_counters
            [(self.theta - 1) * p.sub_count..self.theta * p.sub_count];
        if theta_counters.iter().any(|&c| c != p.sub_size) {
            return Err(Error::CountMismatch(
                "desired fresh-bit counters did not end at t^K".into(),
            ));
        }
        Ok(())
    }
}

/// The sanitized query sent to database `db`.
pub fn db_view(plan: &QueryPlan, db: usize) -> Result<DatabaseQuery> {
    plan.params.check_db(db)?;
    Ok(DatabaseQuery {
        db,
        elements: plan.queries[db - 1]
            .iter()
            .map(|el| ViewElement {
                stage: el.stage,
                subset_members: el.subset.members().to_vec(),
                bits: el.bits.clone(),
            })
            .collect(),
    })
}
