//! Exact integer and rational arithmetic plus canonical subset enumeration.
//!
//! Every count in the scheme is a product of binomials and powers, so all of
//! it is done with checked integer arithmetic. Costs, storage fractions and
//! mixing weights are [`Rational`]s; no floating point takes part in any
//! comparison.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Binomial coefficient `C(n, k)`, with `C(n, k) = 0` for `k < 0` or `k > n`.
///
/// The zero convention lets the per-stage formulas collapse at `t = 1`
/// (they contain `C(N-2, t-2)`).
pub fn binom(n: u64, k: i64) -> Result<u64> {
    if k < 0 || k as u64 > n {
        return Ok(0);
    }
    let k = (k as u64).min(n - k as u64);
    let mut acc: u128 = 1;
    for i in 1..=k {
        // acc * (n - k + i) is always divisible by i here.
        acc = acc
            .checked_mul(u128::from(n - k + i))
            .ok_or(Error::Overflow("binomial coefficient"))?
            / u128::from(i);
    }
    u64::try_from(acc).map_err(|_| Error::Overflow("binomial coefficient"))
}

/// Checked `base^exp`; `0^0 = 1`.
pub fn checked_pow(base: u64, exp: u64) -> Result<u64> {
    let exp = u32::try_from(exp).map_err(|_| Error::Overflow("power"))?;
    base.checked_pow(exp).ok_or(Error::Overflow("power"))
}

/// `C(n, k)` for in-range usize arguments, as a usize.
pub(crate) fn binom_usize(n: usize, k: usize) -> Result<usize> {
    let v = binom(n as u64, k as i64)?;
    usize::try_from(v).map_err(|_| Error::Overflow("binomial coefficient"))
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

/// An exact rational number kept in lowest terms with a positive denominator.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rational {
    num: i128,
    den: i128,
}

impl Rational {
    pub const ZERO: Rational = Rational { num: 0, den: 1 };
    pub const ONE: Rational = Rational { num: 1, den: 1 };

    pub fn new(num: i128, den: i128) -> Result<Self> {
        if den == 0 {
            return Err(Error::DivisionByZero);
        }
        let g = gcd(num, den);
        let (mut num, mut den) = (num / g.max(1), den / g.max(1));
        if den < 0 {
            num = num.checked_neg().ok_or(Error::Overflow("rational sign"))?;
            den = den.checked_neg().ok_or(Error::Overflow("rational sign"))?;
        }
        Ok(Rational { num, den })
    }

    pub fn from_integer(n: i128) -> Self {
        Rational { num: n, den: 1 }
    }

    /// Convenience constructor for non-negative counts.
    pub fn ratio(num: u64, den: u64) -> Result<Self> {
        Self::new(i128::from(num), i128::from(den))
    }

    pub fn numer(&self) -> i128 {
        self.num
    }

    pub fn denom(&self) -> i128 {
        self.den
    }

    pub fn is_integer(&self) -> bool {
        self.den == 1
    }

    pub fn checked_add(self, rhs: Self) -> Result<Self> {
        let g = gcd(self.den, rhs.den);
        let l = (self.den / g)
            .checked_mul(rhs.den)
            .ok_or(Error::Overflow("rational add"))?;
        let a = self
            .num
            .checked_mul(l / self.den)
            .ok_or(Error::Overflow("rational add"))?;
        let b = rhs
            .num
            .checked_mul(l / rhs.den)
            .ok_or(Error::Overflow("rational add"))?;
        Self::new(a.checked_add(b).ok_or(Error::Overflow("rational add"))?, l)
    }

    pub fn checked_neg(self) -> Result<Self> {
        Ok(Rational {
            num: self.num.checked_neg().ok_or(Error::Overflow("rational neg"))?,
            den: self.den,
        })
    }

    pub fn checked_sub(self, rhs: Self) -> Result<Self> {
        self.checked_add(rhs.checked_neg()?)
    }

    pub fn checked_mul(self, rhs: Self) -> Result<Self> {
        // Cross-reduce first to keep intermediates small.
        let g1 = gcd(self.num, rhs.den).max(1);
        let g2 = gcd(rhs.num, self.den).max(1);
        let num = (self.num / g1)
            .checked_mul(rhs.num / g2)
            .ok_or(Error::Overflow("rational mul"))?;
        let den = (self.den / g2)
            .checked_mul(rhs.den / g1)
            .ok_or(Error::Overflow("rational mul"))?;
        Self::new(num, den)
    }

    pub fn checked_div(self, rhs: Self) -> Result<Self> {
        if rhs.num == 0 {
            return Err(Error::DivisionByZero);
        }
        self.checked_mul(Rational::new(rhs.den, rhs.num)?)
    }

    /// Largest integer not above `self`.
    pub fn floor(&self) -> i128 {
        self.num.div_euclid(self.den)
    }

    /// Decimal approximation for display only.
    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Compares `a/b` with `c/d` (`b, d > 0`) by continued-fraction expansion,
/// which never needs a product wider than the inputs.
fn cmp_fractions(mut a: i128, mut b: i128, mut c: i128, mut d: i128) -> Ordering {
    let mut flipped = false;
    loop {
        let (qa, ra) = (a.div_euclid(b), a.rem_euclid(b));
        let (qc, rc) = (c.div_euclid(d), c.rem_euclid(d));
        let ord = match qa.cmp(&qc) {
            Ordering::Equal => match (ra == 0, rc == 0) {
                (true, true) => Ordering::Equal,
                (true, false) => Ordering::Less,
                (false, true) => Ordering::Greater,
                (false, false) => {
                    // ra/b vs rc/d  <=>  d/rc vs b/ra
                    (a, b, c, d) = (b, ra, d, rc);
                    flipped = !flipped;
                    continue;
                }
            },
            o => o,
        };
        return if flipped { ord.reverse() } else { ord };
    }
}

impl Ord for Rational {
    fn cmp(&self, other: &Self) -> Ordering {
        cmp_fractions(self.num, self.den, other.num, other.den)
    }
}

impl PartialOrd for Rational {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Rational {
    type Err = Error;

    /// Accepts `"p/q"` or a bare integer `"p"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse {
            what: "rational",
            input: s.to_owned(),
        };
        let s = s.trim();
        match s.split_once('/') {
            Some((p, q)) => {
                let p: i128 = p.trim().parse().map_err(|_| bad())?;
                let q: i128 = q.trim().parse().map_err(|_| bad())?;
                Rational::new(p, q)
            }
            None => Ok(Rational::from_integer(s.parse().map_err(|_| bad())?)),
        }
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A size-`t` subset of databases `{1..N}` together with its position in the
/// lexicographic enumeration of all such subsets.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct SubsetId {
    rank: usize,
    members: Vec<usize>,
}

impl SubsetId {
    /// Builds the id for `members` (any order) among the `t`-subsets of `{1..n}`.
    pub fn from_members(n: usize, members: &[usize]) -> Result<Self> {
        let mut sorted = members.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != members.len() || sorted.is_empty() {
            return Err(Error::InvalidParams(format!(
                "subset {members:?} must be a non-empty set of distinct indices"
            )));
        }
        if sorted[0] == 0 || *sorted.last().unwrap() > n {
            return Err(Error::InvalidParams(format!(
                "subset {members:?} has members outside 1..={n}"
            )));
        }
        let rank = rank_members(n, &sorted)?;
        Ok(SubsetId {
            rank,
            members: sorted,
        })
    }

    /// Inverse of [`SubsetId::rank`].
    pub fn unrank(n: usize, t: usize, rank: usize) -> Result<Self> {
        check_subset_params(n, t)?;
        let total = binom_usize(n, t)?;
        if rank >= total {
            return Err(Error::InvalidParams(format!(
                "rank {rank} out of range for C({n},{t}) = {total}"
            )));
        }
        let mut members = Vec::with_capacity(t);
        let mut remaining = rank;
        let mut next = 1;
        for slot in 0..t {
            let left = t - slot - 1;
            loop {
                // Subsets whose next member is `next`.
                let block = binom_usize(n - next, left)?;
                if remaining < block {
                    members.push(next);
                    next += 1;
                    break;
                }
                remaining -= block;
                next += 1;
            }
        }
        Ok(SubsetId { rank, members })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, db: usize) -> bool {
        self.members.binary_search(&db).is_ok()
    }
}

impl fmt::Display for SubsetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, m) in self.members.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{m}")?;
        }
        f.write_str("}")
    }
}

fn check_subset_params(n: usize, t: usize) -> Result<()> {
    if t == 0 || t > n {
        return Err(Error::InvalidParams(format!(
            "subset size t = {t} must satisfy 1 <= t <= N = {n}"
        )));
    }
    Ok(())
}

fn rank_members(n: usize, sorted: &[usize]) -> Result<usize> {
    let t = sorted.len();
    let mut rank = 0usize;
    let mut prev = 0usize;
    for (slot, &m) in sorted.iter().enumerate() {
        let left = t - slot - 1;
        for skipped in prev + 1..m {
            rank = rank
                .checked_add(binom_usize(n - skipped, left)?)
                .ok_or(Error::Overflow("subset rank"))?;
        }
        prev = m;
    }
    Ok(rank)
}

/// All `t`-subsets of `{1..n}` in lexicographic order of their sorted members.
pub fn enum_subsets(n: usize, t: usize) -> Result<Vec<SubsetId>> {
    check_subset_params(n, t)?;
    let total = binom_usize(n, t)?;
    let mut out = Vec::with_capacity(total);
    let mut current: Vec<usize> = (1..=t).collect();
    for rank in 0..total {
        out.push(SubsetId {
            rank,
            members: current.clone(),
        });
        // Advance to the lexicographic successor.
        if let Some(pos) = (0..t).rev().find(|&i| current[i] < n - (t - 1 - i)) {
            current[pos] += 1;
            for j in pos + 1..t {
                current[j] = current[j - 1] + 1;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(n: i128, d: i128) -> Rational {
        Rational::new(n, d).unwrap()
    }

    #[test]
    fn binom_examples() {
        assert_eq!(binom(3, 2).unwrap(), 3);
        assert_eq!(binom(1, -1).unwrap(), 0);
        assert_eq!(binom(6, 3).unwrap(), 20);
        assert_eq!(binom(0, 0).unwrap(), 1);
        assert_eq!(binom(4, 5).unwrap(), 0);
    }

    #[test]
    fn binom_pascal_table() {
        // Oracle: Pascal's triangle built purely by addition.
        let mut row = vec![1u64];
        for n in 0..=30u64 {
            for (k, &want) in row.iter().enumerate() {
                assert_eq!(binom(n, k as i64).unwrap(), want, "C({n},{k})");
            }
            let mut next = vec![1u64; row.len() + 1];
            for k in 1..row.len() {
                next[k] = row[k - 1] + row[k];
            }
            row = next;
        }
    }

    #[test]
    fn binom_overflow_is_reported() {
        assert_eq!(binom(200, 100), Err(Error::Overflow("binomial coefficient")));
        assert!(binom(67, 33).is_ok());
    }

    #[test]
    fn pow_overflow_is_reported() {
        assert_eq!(checked_pow(3, 2).unwrap(), 9);
        assert_eq!(checked_pow(0, 0).unwrap(), 1);
        assert!(checked_pow(2, 64).is_err());
    }

    #[test]
    fn stage_identity() {
        for n in 2..=10u64 {
            for t in 2..=n as i64 {
                let lhs = (n - 1) * binom(n - 2, t - 2).unwrap();
                let rhs = binom(n - 1, t - 1).unwrap() * (t as u64 - 1);
                assert_eq!(lhs, rhs, "N={n} t={t}");
            }
        }
    }

    #[test]
    fn enum_subsets_examples() {
        let members = |n, t| {
            enum_subsets(n, t)
                .unwrap()
                .into_iter()
                .map(|s| s.members().to_vec())
                .collect::<Vec<_>>()
        };
        assert_eq!(members(3, 2), vec![vec![1, 2], vec![1, 3], vec![2, 3]]);
        assert_eq!(members(3, 3), vec![vec![1, 2, 3]]);
        assert_eq!(members(4, 1), vec![vec![1], vec![2], vec![3], vec![4]]);
        assert!(enum_subsets(3, 0).is_err());
        assert!(enum_subsets(3, 4).is_err());
    }

    #[test]
    fn rank_unrank_matches_brute_force() {
        // Oracle: filter all bitmasks by popcount and sort lexicographically.
        for n in 1..=10usize {
            for t in 1..=n {
                let mut brute: Vec<Vec<usize>> = (0u32..1 << n)
                    .filter(|m| m.count_ones() as usize == t)
                    .map(|m| (1..=n).filter(|i| m >> (i - 1) & 1 == 1).collect())
                    .collect();
                brute.sort();
                let listed = enum_subsets(n, t).unwrap();
                assert_eq!(listed.len(), brute.len());
                for (rank, members) in brute.iter().enumerate() {
                    let id = SubsetId::from_members(n, members).unwrap();
                    assert_eq!(id.rank(), rank);
                    assert_eq!(listed[rank], id);
                    assert_eq!(SubsetId::unrank(n, t, rank).unwrap(), id);
                }
                assert!(SubsetId::unrank(n, t, brute.len()).is_err());
            }
        }
    }

    #[test]
    fn subset_validation() {
        assert!(SubsetId::from_members(3, &[1, 1]).is_err());
        assert!(SubsetId::from_members(3, &[0, 2]).is_err());
        assert!(SubsetId::from_members(3, &[2, 4]).is_err());
        let s = SubsetId::from_members(3, &[3, 1]).unwrap();
        assert_eq!(s.members(), &[1, 3]);
        assert_eq!(s.to_string(), "{1,3}");
        assert!(s.contains(3) && !s.contains(2));
    }

    #[test]
    fn rational_examples() {
        let one = Rational::ONE;
        assert_eq!(one.checked_add(r(1, 2)).unwrap(), r(3, 2));
        let s = r(1, 3)
            .checked_add(r(1, 9))
            .unwrap()
            .checked_add(one)
            .unwrap();
        assert_eq!(s, r(13, 9));
        assert_eq!(r(3, 2).cmp(&r(5, 3)), Ordering::Less);
        assert_eq!(r(6, -4), r(-3, 2));
        assert_eq!(r(-3, 2).floor(), -2);
        assert_eq!(r(7, 4).checked_div(r(7, 2)).unwrap(), r(1, 2));
        assert_eq!(r(1, 2).checked_div(Rational::ZERO), Err(Error::DivisionByZero));
        assert_eq!(Rational::new(1, 0), Err(Error::DivisionByZero));
    }

    #[test]
    fn rational_text_round_trip() {
        assert_eq!("3/2".parse::<Rational>().unwrap(), r(3, 2));
        assert_eq!(" 4 / 6 ".parse::<Rational>().unwrap(), r(2, 3));
        assert_eq!("5".parse::<Rational>().unwrap(), r(5, 1));
        assert!("x/2".parse::<Rational>().is_err());
        assert!("1/0".parse::<Rational>().is_err());
        assert_eq!(r(13, 9).to_string(), "13/9");
        assert_eq!(r(4, 2).to_string(), "2");
        let json = serde_json::to_string(&r(7, 4)).unwrap();
        assert_eq!(json, "\"7/4\"");
        assert_eq!(serde_json::from_str::<Rational>(&json).unwrap(), r(7, 4));
    }

    #[test]
    fn rational_overflow_is_reported() {
        let big = Rational::from_integer(i128::MAX);
        assert!(big.checked_add(Rational::ONE).is_err());
        assert!(big.checked_mul(Rational::from_integer(2)).is_err());
        // Comparison never overflows.
        assert!(r(i128::MAX, i128::MAX - 1) < r(i128::MAX - 1, i128::MAX - 2));
    }

    proptest! {
        #[test]
        fn rational_ordering_matches_cross_multiplication(
            a in -1000i128..1000, b in 1i128..1000, c in -1000i128..1000, d in 1i128..1000
        ) {
            let (x, y) = (r(a, b), r(c, d));
            prop_assert_eq!(x.cmp(&y), (a * d).cmp(&(c * b)));
            let sum = x.checked_add(y).unwrap();
            prop_assert_eq!(sum, r(a * d + c * b, b * d));
            prop_assert_eq!(x.checked_mul(y).unwrap(), r(a * c, b * d));
            prop_assert_eq!(sum.checked_sub(y).unwrap(), x);
        }
    }
}
