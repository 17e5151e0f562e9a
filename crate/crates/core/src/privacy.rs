//! Audits of the privacy requirement: what any single database receives must
//! be identically distributed whichever message the user wants.
//!
//! Three tiers, each run against the real planner:
//!
//! * structural: the per-`(S, M)` element census and the emission-order
//!   signatures, with permutations fixed, must not depend on the desired index;
//! * exhaustive: for tiny parameters, every joint permutation assignment is
//!   enumerated and the multisets of sanitized queries are compared exactly;
//! * Monte Carlo: sampled plans per desired index, compared by empirical
//!   total-variation distance of each query element's distribution.

use std::collections::HashMap;

use itertools::Itertools;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::combinatorics::{checked_pow, enum_subsets};
use crate::error::{Error, Result};
use crate::placement::{Params, Placement};
use crate::planner::{
    build_query_plan, db_view, DatabaseQuery, QueryPlan, SecretPermutations, ViewElement,
};

/// Default total-variation threshold of the Monte Carlo tier.
pub const DEFAULT_TV_THRESHOLD: f64 = 0.05;

/// Default cap on joint permutations the exhaustive tier will enumerate.
pub const DEFAULT_ENUMERATION_BOUND: u128 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditMode {
    Structural,
    Exhaustive,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct AuditParams {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub t: usize,
}

impl From<&Params> for AuditParams {
    fn from(p: &Params) -> Self {
        AuditParams {
            n: p.n,
            k: p.k,
            t: p.t,
        }
    }
}

/// One census discrepancy at a database.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CensusDiff {
    pub theta: usize,
    /// `None` when compared against the closed form `(t-1)^(|M|-1)`,
    /// otherwise the desired index whose census was used as reference.
    pub reference_theta: Option<usize>,
    pub subset_members: Vec<usize>,
    pub messages: Vec<usize>,
    pub expected: u64,
    pub found: u64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct DbAudit {
    pub db: usize,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub census_diff: Option<Vec<CensusDiff>>,
    /// Desired indices whose emission-order signature differs from the first.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order_diff: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distinct_queries: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi_square: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi_square_dof: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub mode: AuditMode,
    pub params: AuditParams,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub joint_permutations: Option<u128>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tv_threshold: Option<f64>,
    pub per_db: Vec<DbAudit>,
}

impl AuditReport {
    fn new(mode: AuditMode, params: &Params, per_db: Vec<DbAudit>) -> Self {
        AuditReport {
            mode,
            params: params.into(),
            pass: per_db.iter().all(|d| d.pass),
            joint_permutations: None,
            trials: None,
            tv_threshold: None,
            per_db,
        }
    }
}

/// Census and emission-order check with identity permutations.
pub fn structural_audit(params: &Params) -> Result<AuditReport> {
    let placement = Placement::build(params)?;
    let identity = SecretPermutations::identity(params);
    let plans = (1..=params.k)
        .map(|theta| build_query_plan(&placement, theta, &identity))
        .collect::<Result<Vec<_>>>()?;
    structural_audit_of(&placement, &plans)
}

/// Structural audit over already-built plans, one per desired index.
pub(crate) fn structural_audit_of(placement: &Placement, plans: &[QueryPlan]) -> Result<AuditReport> {
    let params = placement.params();
    let mut expected = std::collections::BTreeMap::new();
    let message_sets = (1..=params.k)
        .map(|size| enum_subsets(params.k, size))
        .collect::<Result<Vec<_>>>()?;
    let mut per_db = Vec::with_capacity(params.n);
    for db in 1..=params.n {
        expected.clear();
        for subset in placement.subsets_of(db) {
            for set in message_sets.iter().flatten() {
                let count = checked_pow(params.t as u64 - 1, set.size() as u64 - 1)?;
                if count > 0 {
                    expected.insert((subset.rank(), set.members().to_vec()), count);
                }
            }
        }
        let mut diffs = Vec::new();
        let mut order_diff = Vec::new();
        let reference = &plans[0];
        let reference_census = reference.census(db);
        let signature = |plan: &QueryPlan| -> Vec<(usize, usize, Vec<usize>)> {
            plan.queries[db - 1]
                .iter()
                .map(|el| (el.stage, el.subset.rank(), el.messages().collect()))
                .collect()
        };
        let reference_order = signature(reference);
        for plan in plans {
            let census = plan.census(db);
            let mut against = |table: &std::collections::BTreeMap<(usize, Vec<usize>), u64>,
                               reference_theta: Option<usize>| {
                for key in table.keys().chain(census.keys()).unique() {
                    let want = table.get(key).copied().unwrap_or(0);
                    let got = census.get(key).copied().unwrap_or(0);
                    if want != got {
                        diffs.push(CensusDiff {
                            theta: plan.theta,
                            reference_theta,
                            subset_members: placement
                                .subset(key.0)
                                .map(|s| s.members().to_vec())
                                .unwrap_or_default(),
                            messages: key.1.clone(),
                            expected: want,
                            found: got,
                        });
                    }
                }
            };
            against(&expected, None);
            if plan.theta != reference.theta {
                against(&reference_census, Some(reference.theta));
            }
            if signature(plan) != reference_order {
                order_diff.push(plan.theta);
            }
        }
        per_db.push(DbAudit {
            db,
            pass: diffs.is_empty() && order_diff.is_empty(),
            census_diff: Some(diffs),
            order_diff: Some(order_diff),
            ..Default::default()
        });
    }
    Ok(AuditReport::new(AuditMode::Structural, params, per_db))
}

/// Number of joint permutation assignments, `(sub_size!)^(K * sub_count)`,
/// or `None` if it does not fit in a u128.
pub fn joint_permutation_count(params: &Params) -> Option<u128> {
    let fact = (1..=params.sub_size as u128).try_fold(1u128, |acc, x| acc.checked_mul(x))?;
    let exp = u32::try_from(params.k.checked_mul(params.sub_count)?).ok()?;
    fact.checked_pow(exp)
}

/// Exact comparison over every joint permutation assignment.
pub fn exhaustive_audit(params: &Params, bound: u128) -> Result<AuditReport> {
    let required = joint_permutation_count(params);
    match required {
        Some(r) if r <= bound => {}
        _ => {
            return Err(Error::EnumerationBound {
                required: required.map_or_else(|| "more than 2^128".to_owned(), |r| r.to_string()),
                bound,
            })
        }
    }
    let placement = Placement::build(params)?;
    let single: Vec<Vec<usize>> = (0..params.sub_size)
        .permutations(params.sub_size)
        .collect();
    let slots = params.k * params.sub_count;

    // multisets[theta - 1][db - 1]
    let mut multisets: Vec<Vec<HashMap<DatabaseQuery, u64>>> =
        vec![vec![HashMap::new(); params.n]; params.k];
    for choice in (0..slots).map(|_| 0..single.len()).multi_cartesian_product() {
        let perms = SecretPermutations::from_permutations(
            params,
            choice.iter().map(|&i| single[i].clone()).collect(),
        )?;
        for theta in 1..=params.k {
            let plan = build_query_plan(&placement, theta, &perms)?;
            for db in 1..=params.n {
                *multisets[theta - 1][db - 1]
                    .entry(db_view(&plan, db)?)
                    .or_default() += 1;
            }
        }
    }
    let per_db = (1..=params.n)
        .map(|db| {
            let reference = &multisets[0][db - 1];
            let order_diff: Vec<usize> = (2..=params.k)
                .filter(|&theta| &multisets[theta - 1][db - 1] != reference)
                .collect();
            DbAudit {
                db,
                pass: order_diff.is_empty(),
                order_diff: Some(order_diff),
                distinct_queries: Some(reference.len()),
                ..Default::default()
            }
        })
        .collect();
    let mut report = AuditReport::new(AuditMode::Exhaustive, params, per_db);
    report.joint_permutations = required;
    Ok(report)
}

/// Statistical comparison of sampled plans.
pub fn monte_carlo_audit(params: &Params, trials: usize, seed: u64) -> Result<AuditReport> {
    monte_carlo_audit_with(params, trials, seed, DEFAULT_TV_THRESHOLD, &SecretPermutations::sample)
}

type SlotHistograms = Vec<Vec<HashMap<Vec<u32>, u32>>>;

/// Monte Carlo audit with an explicit threshold and permutation source.
///
/// Each desired index is its own arm; arm `theta` draws its per-trial seeds
/// from ChaCha20 stream `theta` of `seed`, so arms are independent even with
/// one master seed. For every database and every element slot in emission
/// order, the empirical distribution of the slot's contents (stage, subset,
/// message/position pairs) is compared between arm 1 and each other arm. The
/// reported distance is the maximum over slots and arm pairs.
pub fn monte_carlo_audit_with(
    params: &Params,
    trials: usize,
    seed: u64,
    threshold: f64,
    sampler: &(dyn Fn(&Params, u64) -> SecretPermutations + Sync),
) -> Result<AuditReport> {
    if trials == 0 {
        return Err(Error::InvalidParams("trials must be at least 1".into()));
    }
    let placement = Placement::build(params)?;
    let arms = (1..=params.k)
        .map(|theta| sample_arm(&placement, theta, trials, seed, sampler))
        .collect::<Result<Vec<_>>>()?;

    let per_db = (0..params.n)
        .map(|d| {
            let mut worst: Option<(f64, f64, usize)> = None;
            for other in &arms[1..] {
                let slots = arms[0][d].len().max(other[d].len());
                for slot in 0..slots {
                    let empty = HashMap::new();
                    let a = arms[0][d].get(slot).unwrap_or(&empty);
                    let b = other[d].get(slot).unwrap_or(&empty);
                    let (tv, chi, dof) = compare(a, b, trials);
                    if worst.is_none_or(|w| tv > w.0) {
                        worst = Some((tv, chi, dof));
                    }
                }
            }
            let worst = worst.unwrap_or((0.0, 0.0, 0));
            DbAudit {
                db: d + 1,
                pass: worst.0 <= threshold,
                max_tv: Some(worst.0),
                chi_square: Some(worst.1),
                chi_square_dof: Some(worst.2),
                ..Default::default()
            }
        })
        .collect();
    let mut report = AuditReport::new(AuditMode::MonteCarlo, params, per_db);
    report.trials = Some(trials);
    report.tv_threshold = Some(threshold);
    Ok(report)
}

fn sample_arm(
    placement: &Placement,
    theta: usize,
    trials: usize,
    seed: u64,
    sampler: &(dyn Fn(&Params, u64) -> SecretPermutations + Sync),
) -> Result<SlotHistograms> {
    let params = placement.params();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(theta as u64);
    let seeds: Vec<u64> = (0..trials).map(|_| rng.next_u64()).collect();
    let empty = || -> SlotHistograms { vec![Vec::new(); params.n] };
    seeds
        .par_chunks(2048)
        .map(|chunk| -> Result<SlotHistograms> {
            let mut hist = empty();
            for &s in chunk {
                let plan = build_query_plan(placement, theta, &sampler(params, s))?;
                for db in 1..=params.n {
                    let view = db_view(&plan, db)?;
                    let slots = &mut hist[db - 1];
                    if slots.len() < view.elements.len() {
                        slots.resize_with(view.elements.len(), HashMap::new);
                    }
                    for (slot, el) in view.elements.iter().enumerate() {
                        *slots[slot].entry(element_key(el)).or_default() += 1;
                    }
                    // Slots this trial did not fill count as an explicit absence.
                    for slot in slots.iter_mut().skip(view.elements.len()) {
                        *slot.entry(Vec::new()).or_default() += 1;
                    }
                }
            }
            Ok(hist)
        })
        .try_reduce(empty, |mut a, b| {
            for (da, db) in a.iter_mut().zip(b) {
                if da.len() < db.len() {
                    da.resize_with(db.len(), HashMap::new);
                }
                for (sa, sb) in da.iter_mut().zip(db) {
                    for (k, v) in sb {
                        *sa.entry(k).or_default() += v;
                    }
                }
            }
            Ok(a)
        })
}

fn element_key(el: &ViewElement) -> Vec<u32> {
    let mut key = Vec::with_capacity(2 + el.subset_members.len() + 2 * el.bits.len());
    key.push(el.stage as u32);
    key.extend(el.subset_members.iter().map(|&m| m as u32));
    for b in &el.bits {
        key.push(b.message as u32);
        key.push(b.position as u32);
    }
    key
}

/// Total-variation distance, two-sample chi-square statistic and its degrees
/// of freedom for two histograms over `trials` samples each.
fn compare(a: &HashMap<Vec<u32>, u32>, b: &HashMap<Vec<u32>, u32>, trials: usize) -> (f64, f64, usize) {
    let mut abs_diff = 0u64;
    let mut chi = 0.0;
    let mut cells = 0usize;
    for key in a.keys().chain(b.keys()).unique() {
        let x = u64::from(a.get(key).copied().unwrap_or(0));
        let y = u64::from(b.get(key).copied().unwrap_or(0));
        abs_diff += x.abs_diff(y);
        let d = x as f64 - y as f64;
        chi += d * d / (x + y) as f64;
        cells += 1;
    }
    (
        abs_diff as f64 / (2.0 * trials as f64),
        chi,
        cells.saturating_sub(1),
    )
}
