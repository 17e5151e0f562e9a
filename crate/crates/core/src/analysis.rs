//! Storage/download tradeoff: closed-form costs of the grid points
//! `mu = t/N`, their lower convex hull, memory sharing between two grid
//! levels, and the comparison against sharing between the two extremes.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::combinatorics::{binom, checked_pow, Rational};
use crate::error::{Error, Result};
use crate::placement::{Bits, Params};
use crate::runtime::{bit_string, run_retrieval};

/// `1 + 1/t + ... + 1/t^(K-1)`.
pub fn theoretical_cost(t: usize, k: usize) -> Result<Rational> {
    if t == 0 || k == 0 {
        return Err(Error::InvalidParams(format!(
            "cost needs t >= 1 and K >= 1, got t = {t}, K = {k}"
        )));
    }
    let mut sum = Rational::ZERO;
    let mut term = Rational::ONE;
    let ratio = Rational::ratio(1, t as u64)?;
    for _ in 0..k {
        sum = sum.checked_add(term)?;
        term = term.checked_mul(ratio)?;
    }
    Ok(sum)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TradeoffPoint {
    pub t: Option<usize>,
    pub mu: Rational,
    pub cost: Rational,
    pub on_hull: bool,
}

/// `(t/N, D(t))` for `t = 1..=N`, each flagged if it lies on the lower convex
/// hull (collinear points count as on the hull).
pub fn tradeoff_curve(n: usize, k: usize) -> Result<Vec<TradeoffPoint>> {
    if n == 0 {
        return Err(Error::InvalidParams("N must be at least 1".into()));
    }
    let mut points = (1..=n)
        .map(|t| {
            Ok(TradeoffPoint {
                t: Some(t),
                mu: Rational::ratio(t as u64, n as u64)?,
                cost: theoretical_cost(t, k)?,
                on_hull: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for i in lower_hull(&points)? {
        points[i].on_hull = true;
    }
    Ok(points)
}

/// Indices of the lower hull of points sorted by increasing `mu`.
fn lower_hull(points: &[TradeoffPoint]) -> Result<Vec<usize>> {
    // z-component of (a - o) x (b - o); negative means `a` is above o->b.
    let cross = |o: &TradeoffPoint, a: &TradeoffPoint, b: &TradeoffPoint| -> Result<Rational> {
        let l = a.mu.checked_sub(o.mu)?.checked_mul(b.cost.checked_sub(o.cost)?)?;
        let r = a.cost.checked_sub(o.cost)?.checked_mul(b.mu.checked_sub(o.mu)?)?;
        l.checked_sub(r)
    };
    let mut hull: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            if cross(&points[o], &points[a], p)? < Rational::ZERO {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    Ok(hull)
}

/// Bits in one instance of the scheme at level `t`: `C(N,t) t^K`.
fn unit_length(n: usize, k: usize, t: usize) -> Result<u64> {
    binom(n as u64, t as i64)?
        .checked_mul(checked_pow(t as u64, k as u64)?)
        .ok_or(Error::Overflow("unit length"))
}

fn check_mu(n: usize, mu: Rational) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParams("N must be at least 1".into()));
    }
    let low = Rational::ratio(1, n as u64)?;
    if mu < low || mu > Rational::ONE {
        return Err(Error::InvalidParams(format!(
            "mu = {mu} outside [1/{n}, 1]"
        )));
    }
    Ok(())
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: u64, b: u64) -> Result<u64> {
    (a / gcd(a, b))
        .checked_mul(b)
        .ok_or(Error::Overflow("part length"))
}

/// How a storage level between two grid points is realized.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MemShareSpec {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub mu: Rational,
    pub t1: usize,
    pub t2: usize,
    /// Fraction of every message handled at level `t1`.
    pub alpha: Rational,
    /// Smallest whole-bit part lengths realizing `alpha`.
    pub l1: u64,
    pub l2: u64,
    pub unit_l1: u64,
    pub unit_l2: u64,
    pub cost: Rational,
}

/// Mixes the two grid levels adjacent to `mu`.
pub fn memory_share(n: usize, k: usize, mu: Rational) -> Result<MemShareSpec> {
    check_mu(n, mu)?;
    let scaled = mu.checked_mul(Rational::ratio(n as u64, 1)?)?;
    let t1 = scaled.floor() as usize;
    let unit_l1 = unit_length(n, k, t1)?;
    if scaled.is_integer() {
        return Ok(MemShareSpec {
            n,
            k,
            mu,
            t1,
            t2: t1,
            alpha: Rational::ONE,
            l1: unit_l1,
            l2: 0,
            unit_l1,
            unit_l2: unit_l1,
            cost: theoretical_cost(t1, k)?,
        });
    }
    let t2 = t1 + 1;
    let unit_l2 = unit_length(n, k, t2)?;
    // alpha * t1 + (1 - alpha) * t2 = mu * N with t2 - t1 = 1.
    let alpha = Rational::ratio(t2 as u64, 1)?.checked_sub(scaled)?;
    let p = alpha.numer() as u64;
    let q = alpha.denom() as u64;
    let scale = lcm(unit_l1 / gcd(unit_l1, p), unit_l2 / gcd(unit_l2, q - p))?;
    let l1 = p.checked_mul(scale).ok_or(Error::Overflow("part length"))?;
    let l2 = (q - p).checked_mul(scale).ok_or(Error::Overflow("part length"))?;
    let cost = alpha
        .checked_mul(theoretical_cost(t1, k)?)?
        .checked_add(Rational::ONE.checked_sub(alpha)?.checked_mul(theoretical_cost(t2, k)?)?)?;
    Ok(MemShareSpec {
        n,
        k,
        mu,
        t1,
        t2,
        alpha,
        l1,
        l2,
        unit_l1,
        unit_l2,
        cost,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PartReport {
    pub t: usize,
    pub blocks: u64,
    pub bits: u64,
    pub downloaded_bits: u64,
}

/// Outcome of a memory-shared retrieval.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompositeReport {
    pub spec: MemShareSpec,
    pub theta: usize,
    pub seed: u64,
    pub parts: Vec<PartReport>,
    pub downloaded_bits: u64,
    pub desired_bits: u64,
    pub cost: Rational,
    pub cost_decimal: f64,
    /// Bits stored at each database over both parts.
    pub per_db_storage: u64,
    pub storage_mu_kl: Rational,
    #[serde(serialize_with = "ser_bits")]
    pub decoded: Bits,
}

fn ser_bits<S: serde::Serializer>(bits: &Bits, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(&bit_string(bits))
}

/// Splits every message into an `l1`-bit part served at level `t1` and an
/// `l2`-bit part served at `t2`. Each part is cut into blocks of the level's
/// unit length and every block runs the full pipeline with its own seed.
pub fn composite_retrieval(
    n: usize,
    k: usize,
    mu: Rational,
    messages: &[Bits],
    theta: usize,
    seed: u64,
) -> Result<CompositeReport> {
    let spec = memory_share(n, k, mu)?;
    if messages.len() != k {
        return Err(Error::MessageCount {
            expected: k,
            actual: messages.len(),
        });
    }
    let total = (spec.l1 + spec.l2) as usize;
    for (i, m) in messages.iter().enumerate() {
        if m.len() != total {
            return Err(Error::MessageLength {
                message: i + 1,
                expected: total,
                actual: m.len(),
            });
        }
    }
    let mut seeds = ChaCha20Rng::seed_from_u64(seed);
    let mut decoded = Bits::with_capacity(total);
    let mut parts = Vec::new();
    let mut per_db_storage = 0u64;
    let mut offset = 0usize;
    for (t, bits) in [(spec.t1, spec.l1), (spec.t2, spec.l2)] {
        if bits == 0 {
            continue;
        }
        let params = Params::new(n, k, t)?;
        let unit = params.message_len;
        let blocks = bits / unit as u64;
        let mut downloaded = 0u64;
        for _ in 0..blocks {
            let block: Vec<Bits> = messages
                .iter()
                .map(|m| m[offset..offset + unit].to_bitvec())
                .collect();
            let report = run_retrieval(&params, &block, theta, seeds.next_u64())?;
            downloaded += report.downloaded_bits;
            decoded.extend_from_bitslice(&report.decoded);
            offset += unit;
        }
        per_db_storage += blocks * params.per_db_storage;
        parts.push(PartReport {
            t,
            blocks,
            bits,
            downloaded_bits: downloaded,
        });
    }
    if decoded != messages[theta - 1] {
        return Err(Error::DecodeMismatch);
    }
    let downloaded_bits = parts.iter().map(|p| p.downloaded_bits).sum();
    let cost = Rational::ratio(downloaded_bits, total as u64)?;
    if cost != spec.cost {
        return Err(Error::CountMismatch(format!(
            "composite cost {cost} differs from the mixed closed form {}",
            spec.cost
        )));
    }
    let storage_mu_kl = mu.checked_mul(Rational::ratio(k as u64 * total as u64, 1)?)?;
    if storage_mu_kl != Rational::ratio(per_db_storage, 1)? {
        return Err(Error::StorageMismatch {
            counted: per_db_storage,
            closed_form: storage_mu_kl.floor() as u64,
        });
    }
    Ok(CompositeReport {
        spec,
        theta,
        seed,
        parts,
        downloaded_bits,
        desired_bits: total as u64,
        cost,
        cost_decimal: cost.to_f64(),
        per_db_storage,
        storage_mu_kl,
        decoded,
    })
}

/// Cost of sharing between `(1/N, K)` and `(1, D(N))` at storage `mu`.
pub fn baseline_extremes(n: usize, k: usize, mu: Rational) -> Result<Rational> {
    check_mu(n, mu)?;
    let low_cost = Rational::ratio(k as u64, 1)?;
    if n == 1 {
        return Ok(low_cost);
    }
    let high_cost = theoretical_cost(n, k)?;
    let low_mu = Rational::ratio(1, n as u64)?;
    let frac = mu
        .checked_sub(low_mu)?
        .checked_div(Rational::ONE.checked_sub(low_mu)?)?;
    low_cost.checked_add(frac.checked_mul(high_cost.checked_sub(low_cost)?)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ImprovementRow {
    pub t: usize,
    pub mu: Rational,
    pub cost: Rational,
    pub baseline: Rational,
    pub strict: bool,
}

/// Interior grid points against the extreme-sharing baseline.
pub fn improvement_report(n: usize, k: usize) -> Result<Vec<ImprovementRow>> {
    if n < 3 {
        return Err(Error::InvalidParams(format!(
            "interior storage levels need N >= 3, got N = {n}"
        )));
    }
    (2..n)
        .map(|t| {
            let mu = Rational::ratio(t as u64, n as u64)?;
            let cost = theoretical_cost(t, k)?;
            let baseline = baseline_extremes(n, k, mu)?;
            Ok(ImprovementRow {
                t,
                mu,
                cost,
                baseline,
                strict: cost < baseline,
            })
        })
        .collect()
}

/// One row of the exported curve.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub t: usize,
    pub mu: Rational,
    pub cost: Rational,
    pub cost_decimal: f64,
    pub on_hull: bool,
    pub baseline: Rational,
    pub baseline_decimal: f64,
}

pub fn curve_rows(n: usize, k: usize) -> Result<Vec<CurveRow>> {
    tradeoff_curve(n, k)?
        .into_iter()
        .map(|p| {
            let baseline = baseline_extremes(n, k, p.mu)?;
            Ok(CurveRow {
                t: p.t.unwrap_or_default(),
                mu: p.mu,
                cost: p.cost,
                cost_decimal: p.cost.to_f64(),
                on_hull: p.on_hull,
                baseline,
                baseline_decimal: baseline.to_f64(),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct CsvRow {
    t: usize,
    mu_num: i128,
    mu_den: i128,
    cost_num: i128,
    cost_den: i128,
    cost_decimal: f64,
    on_hull: bool,
    baseline_decimal: f64,
}

/// The curve as CSV with columns
/// `t,mu_num,mu_den,cost_num,cost_den,cost_decimal,on_hull,baseline_decimal`.
pub fn curve_csv(n: usize, k: usize) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in curve_rows(n, k)? {
        w.serialize(CsvRow {
            t: r.t,
            mu_num: r.mu.numer(),
            mu_den: r.mu.denom(),
            cost_num: r.cost.numer(),
            cost_den: r.cost.denom(),
            cost_decimal: r.cost_decimal,
            on_hull: r.on_hull,
            baseline_decimal: r.baseline_decimal,
        })
        .map_err(|e| Error::Parse {
            what: "csv row",
            input: e.to_string(),
        })?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse {
        what: "csv output",
        input: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i128, d: i128) -> Rational {
        Rational::new(n, d).unwrap()
    }

    #[test]
    fn cost_examples() {
        assert_eq!(theoretical_cost(2, 2).unwrap(), r(3, 2));
        assert_eq!(theoretical_cost(2, 3).unwrap(), r(7, 4));
        assert_eq!(theoretical_cost(3, 3).unwrap(), r(13, 9));
        for k in 1..10 {
            assert_eq!(theoretical_cost(1, k).unwrap(), r(k as i128, 1));
        }
        assert!(theoretical_cost(0, 2).is_err());
    }

    #[test]
    fn curve_examples() {
        let c = tradeoff_curve(3, 2).unwrap();
        let pts: Vec<_> = c.iter().map(|p| (p.mu, p.cost, p.on_hull)).collect();
        assert_eq!(
            pts,
            vec![
                (r(1, 3), r(2, 1), true),
                (r(2, 3), r(3, 2), true),
                (r(1, 1), r(4, 3), true)
            ]
        );
        let c = tradeoff_curve(3, 3).unwrap();
        let costs: Vec<_> = c.iter().map(|p| p.cost).collect();
        assert_eq!(costs, vec![r(3, 1), r(7, 4), r(13, 9)]);
        let flat = tradeoff_curve(5, 1).unwrap();
        assert!(flat.iter().all(|p| p.cost == Rational::ONE && p.on_hull));
    }

    #[test]
    fn hull_flags_points_above() {
        let pt = |mu, cost| TradeoffPoint {
            t: None,
            mu,
            cost,
            on_hull: false,
        };
        let pts = vec![
            pt(r(0, 1), r(2, 1)),
            pt(r(1, 2), r(3, 2)),
            pt(r(3, 4), r(2, 1)),
            pt(r(1, 1), r(1, 1)),
        ];
        assert_eq!(lower_hull(&pts).unwrap(), vec![0, 1, 3]);
    }

    #[test]
    fn memory_share_examples() {
        let s = memory_share(3, 2, r(1, 2)).unwrap();
        assert_eq!((s.t1, s.t2, s.alpha), (1, 2, r(1, 2)));
        assert_eq!(s.cost, r(7, 4));
        assert_eq!((s.l1, s.l2), (12, 12));
        let s = memory_share(3, 2, r(2, 3)).unwrap();
        assert_eq!((s.t1, s.t2, s.alpha, s.cost), (2, 2, Rational::ONE, r(3, 2)));
        let s = memory_share(4, 3, Rational::ONE).unwrap();
        assert_eq!(s.cost, theoretical_cost(4, 3).unwrap());
        assert!(memory_share(3, 2, r(1, 4)).is_err());
        assert!(memory_share(3, 2, r(5, 4)).is_err());
    }

    #[test]
    fn memory_share_invariants() {
        for n in 2..=6 {
            for k in 1..=4 {
                for den in 1..=12i128 {
                    for num in 1..=den {
                        let mu = r(num, den);
                        let Ok(s) = memory_share(n, k, mu) else {
                            assert!(mu < r(1, n as i128));
                            continue;
                        };
                        let nn = r(n as i128, 1);
                        let mixed = s
                            .alpha
                            .checked_mul(r(s.t1 as i128, 1).checked_div(nn).unwrap())
                            .unwrap()
                            .checked_add(
                                Rational::ONE
                                    .checked_sub(s.alpha)
                                    .unwrap()
                                    .checked_mul(r(s.t2 as i128, 1).checked_div(nn).unwrap())
                                    .unwrap(),
                            )
                            .unwrap();
                        assert_eq!(mixed, mu);
                        assert!(s.alpha > Rational::ZERO && s.alpha <= Rational::ONE);
                        assert_eq!(s.l1 % s.unit_l1, 0);
                        if s.l2 > 0 {
                            assert_eq!(s.l2 % s.unit_l2, 0);
                        }
                        assert_eq!(r(s.l1 as i128, (s.l1 + s.l2) as i128), s.alpha);
                    }
                }
            }
        }
    }

    #[test]
    fn baseline_examples() {
        assert_eq!(baseline_extremes(3, 2, r(2, 3)).unwrap(), r(5, 3));
        assert_eq!(baseline_extremes(3, 2, r(1, 3)).unwrap(), r(2, 1));
        assert_eq!(baseline_extremes(3, 3, r(2, 3)).unwrap(), r(20, 9));
        assert_eq!(baseline_extremes(1, 4, Rational::ONE).unwrap(), r(4, 1));
        assert!(baseline_extremes(3, 2, r(1, 6)).is_err());
    }

    #[test]
    fn improvement_examples() {
        let rows = improvement_report(3, 2).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].cost, rows[0].baseline, rows[0].strict), (r(3, 2), r(5, 3), true));
        let rows = improvement_report(3, 3).unwrap();
        assert_eq!((rows[0].cost, rows[0].baseline), (r(7, 4), r(20, 9)));
        assert!(rows[0].strict);
        let rows = improvement_report(5, 1).unwrap();
        assert!(rows.iter().all(|r| !r.strict));
        assert!(improvement_report(2, 3).is_err());
    }

    #[test]
    fn csv_layout() {
        let csv = curve_csv(3, 2).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,mu_num,mu_den,cost_num,cost_den,cost_decimal,on_hull,baseline_decimal"
        );
        let row: Vec<&str> = lines.nth(1).unwrap().split(',').collect();
        assert_eq!(&row[..5], ["2", "2", "3", "3", "2"]);
        assert_eq!(row[6], "true");
    }
}
