//! In-process execution of one retrieval: each database answers its
//! sanitized query by XOR over its own store, and the user decodes.

use bitvec::prelude::*;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::combinatorics::{Rational, SubsetId};
use crate::error::{Error, Result};
use crate::placement::{init_databases, Bits, DatabaseStore, Params, Placement};
use crate::planner::{
    build_query_plan, db_view, stage_counts, DatabaseQuery, ElementKind, QueryPlan,
    SecretPermutations, StageCount,
};

/// Renders bits as a `0`/`1` string, first bit first.
pub fn bit_string(bits: &BitSlice<u8, Lsb0>) -> String {
    bits.iter().map(|b| if *b { '1' } else { '0' }).collect()
}

/// Parses a `0`/`1` string.
pub fn parse_bit_string(s: &str) -> Result<Bits> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(Error::Parse {
                what: "bit string",
                input: s.to_owned(),
            }),
        })
        .collect()
}

fn ser_bits<S: Serializer>(bits: &Bits, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(&bit_string(bits))
}

fn ser_bit_rows<S: Serializer>(rows: &[Bits], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(rows.iter().map(|r| bit_string(r)))
}

/// Answer bits of every database, index-aligned with its view.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AnswerSet {
    #[serde(serialize_with = "ser_bit_rows")]
    pub answers: Vec<Bits>,
}

impl AnswerSet {
    pub fn get(&self, db: usize) -> Option<&Bits> {
        self.answers.get(db.checked_sub(1)?)
    }
}

/// What an honest database computes for a view: bit `j` is the XOR of every
/// stored bit element `j` references.
pub fn answer_query(store: &DatabaseStore, view: &DatabaseQuery) -> Result<Bits> {
    if view.db != store.db() {
        return Err(Error::InvalidParams(format!(
            "query for database {} delivered to database {}",
            view.db,
            store.db()
        )));
    }
    let db = store.db();
    view.elements
        .iter()
        .map(|el| {
            let illegal = |message| Error::IllegalQuery {
                db,
                message,
                subset: el.subset_members.clone(),
            };
            let rank = SubsetId::from_members(store.system_size(), &el.subset_members)
                .map_err(|_| illegal(0))?
                .rank();
            el.bits.iter().try_fold(false, |acc, bit| {
                let sub = store
                    .get(bit.message, rank)
                    .ok_or_else(|| illegal(bit.message))?;
                let value = sub.get(bit.position).ok_or(Error::PositionOutOfRange {
                    db,
                    position: bit.position,
                    sub_size: store.sub_size(),
                })?;
                Ok(acc ^ *value)
            })
        })
        .collect()
}

/// Recovers the desired message from the answers.
///
/// Stage-1 desired singles are read directly; every later desired element is
/// XORed with the answer its decode-map entry points at, which cancels the
/// undesired bits. Bit positions in the plan are already true stored
/// positions, so each recovered bit lands at `rank(S) * sub_size + position`.
pub fn decode(plan: &QueryPlan, answers: &AnswerSet) -> Result<Bits> {
    let p = &plan.params;
    if answers.answers.len() != p.n {
        return Err(Error::MisalignedAnswers(format!(
            "{} answer lists for {} databases",
            answers.answers.len(),
            p.n
        )));
    }
    for (i, (q, a)) in plan.queries.iter().zip(&answers.answers).enumerate() {
        if q.len() != a.len() {
            return Err(Error::MisalignedAnswers(format!(
                "database {} answered {} bits for {} elements",
                i + 1,
                a.len(),
                q.len()
            )));
        }
    }
    let mut out = bitvec![u8, Lsb0; 0; p.message_len];
    for (i, query) in plan.queries.iter().enumerate() {
        for (j, el) in query.iter().enumerate() {
            if el.kind != ElementKind::DesiredContaining {
                continue;
            }
            let mut value = answers.answers[i][j];
            if let Some(r) = plan.decode_map[i][j] {
                let side = answers
                    .get(r.db)
                    .and_then(|a| a.get(r.index))
                    .ok_or(Error::DecodeReference {
                        db: r.db,
                        index: r.index,
                    })?;
                value ^= *side;
            }
            let bit = el
                .bits
                .iter()
                .find(|b| b.message == plan.theta)
                .ok_or_else(|| Error::CountMismatch("desired element without desired bit".into()))?;
            out.set(el.subset.rank() * p.sub_size + bit.position, value);
        }
    }
    Ok(out)
}

/// Plan, answers and decoded message of one run.
#[derive(Clone, Debug)]
pub struct Execution {
    pub plan: QueryPlan,
    pub views: Vec<DatabaseQuery>,
    pub answers: AnswerSet,
    pub decoded: Bits,
}

/// Runs plan, views, answers and decode against existing stores.
pub fn execute(
    placement: &Placement,
    stores: &[DatabaseStore],
    theta: usize,
    permutations: &SecretPermutations,
) -> Result<Execution> {
    let plan = build_query_plan(placement, theta, permutations)?;
    let views = (1..=plan.params.n)
        .map(|db| db_view(&plan, db))
        .collect::<Result<Vec<_>>>()?;
    let answers = stores
        .par_iter()
        .zip(views.par_iter())
        .map(|(store, view)| answer_query(store, view))
        .collect::<Result<Vec<_>>>()?;
    let answers = AnswerSet { answers };
    let decoded = decode(&plan, &answers)?;
    Ok(Execution {
        plan,
        views,
        answers,
        decoded,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageRow {
    pub stage: usize,
    pub total_per_db: Vec<u64>,
    pub desired_per_db: Vec<u64>,
    pub closed_form: StageCount,
}

/// Outcome of an end-to-end retrieval.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalReport {
    pub params: Params,
    pub theta: usize,
    pub seed: Option<u64>,
    #[serde(serialize_with = "ser_bits")]
    pub decoded: Bits,
    pub downloaded_bits: u64,
    pub desired_bits: u64,
    pub cost: Rational,
    pub cost_decimal: f64,
    /// Desired bits read straight from stage-1 answers.
    pub direct_bits: u64,
    /// Desired bits recovered by cancelling side information.
    pub cancelled_bits: u64,
    pub stages: Vec<StageRow>,
}

impl RetrievalReport {
    fn from_execution(exec: &Execution) -> Result<Self> {
        let plan = &exec.plan;
        let p = &plan.params;
        let downloaded_bits = plan.total_downloaded();
        let desired_bits = p.message_len as u64;
        let cost = Rational::ratio(downloaded_bits, desired_bits)?;
        let tables: Vec<Vec<StageCount>> = (1..=p.n).map(|db| plan.stage_table(db)).collect();
        let stages = (1..=p.k)
            .map(|stage| {
                Ok(StageRow {
                    stage,
                    total_per_db: tables.iter().map(|t| t[stage - 1].total).collect(),
                    desired_per_db: tables.iter().map(|t| t[stage - 1].desired).collect(),
                    closed_form: stage_counts(p, stage)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let direct_bits = stages[0].desired_per_db.iter().sum();
        Ok(RetrievalReport {
            params: p.clone(),
            theta: plan.theta,
            seed: plan.permutations.seed,
            decoded: exec.decoded.clone(),
            downloaded_bits,
            desired_bits,
            cost,
            cost_decimal: cost.to_f64(),
            direct_bits,
            cancelled_bits: desired_bits - direct_bits,
            stages,
        })
    }
}

fn check_messages(params: &Params, messages: &[Bits]) -> Result<()> {
    if messages.len() != params.k {
        return Err(Error::MessageCount {
            expected: params.k,
            actual: messages.len(),
        });
    }
    Ok(())
}

/// Places the messages, retrieves message `theta` with permutations drawn
/// from `seed`, and checks the decoded bits against the original.
pub fn run_retrieval(
    params: &Params,
    messages: &[Bits],
    theta: usize,
    seed: u64,
) -> Result<RetrievalReport> {
    run_retrieval_with(params, messages, theta, &SecretPermutations::sample(params, seed))
}

pub fn run_retrieval_with(
    params: &Params,
    messages: &[Bits],
    theta: usize,
    permutations: &SecretPermutations,
) -> Result<RetrievalReport> {
    check_messages(params, messages)?;
    let placement = Placement::build(params)?;
    let stores = init_databases(&placement, messages)?;
    let exec = execute(&placement, &stores, theta, permutations)?;
    if exec.decoded != messages[theta - 1] {
        return Err(Error::DecodeMismatch);
    }
    RetrievalReport::from_execution(&exec)
}
