//! Disjoint activation schedules on the time axis.
//!
//! Two index families are supported. The dyadic family `(k, m)` with
//! `0 <= m < 2^k` drives the fractal shear construction on `[0, 1]`; the
//! quadruple family `(k, m, i, n)` drives the mixing construction on
//! `[0, 42]`. All start times are exact.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

pub type Rational = BigRational;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("({k}, {m}) is not a dyadic index: need k >= 1 and 0 <= m < 2^k")]
    NotDyadicIndex { k: u32, m: u64 },
    #[error("({k}, {m}, {i}, {n}) is not a quadruple index")]
    NotQuadIndex { k: u32, m: u32, i: u8, n: u64 },
    #[error("level {k}: duration {tau} violates tau_k <= 2^(-2k)")]
    Finiteness { k: u32, tau: String },
    #[error("level {k}: duration must be positive")]
    NonPositiveDuration { k: u32 },
}

/// Exact number `numerator / 2^log_denominator`.
#[derive(Clone, Debug)]
pub struct Dyadic {
    numerator: BigInt,
    log_denominator: u32,
}

impl Dyadic {
    pub fn new(numerator: impl Into<BigInt>, log_denominator: u32) -> Self {
        Dyadic {
            numerator: numerator.into(),
            log_denominator,
        }
        .reduced()
    }

    pub fn zero() -> Self {
        Dyadic::new(0, 0)
    }

    pub fn from_int(v: i64) -> Self {
        Dyadic::new(v, 0)
    }

    /// `2^e` for any integer exponent.
    pub fn pow2(e: i32) -> Self {
        if e >= 0 {
            Dyadic::new(BigInt::one() << e as usize, 0)
        } else {
            Dyadic::new(1, (-e) as u32)
        }
    }

    pub fn numerator(&self) -> &BigInt {
        &self.numerator
    }

    pub fn log_denominator(&self) -> u32 {
        self.log_denominator
    }

    fn reduced(mut self) -> Self {
        if self.numerator.is_zero() {
            self.log_denominator = 0;
            return self;
        }
        while self.log_denominator > 0 && self.numerator.is_even() {
            self.numerator >>= 1;
            self.log_denominator -= 1;
        }
        self
    }

    fn aligned(&self, other: &Dyadic) -> (BigInt, BigInt, u32) {
        let d = self.log_denominator.max(other.log_denominator);
        let a = &self.numerator << (d - self.log_denominator) as usize;
        let b = &other.numerator << (d - other.log_denominator) as usize;
        (a, b, d)
    }

    pub fn to_rational(&self) -> Rational {
        Rational::new(
            self.numerator.clone(),
            BigInt::one() << self.log_denominator as usize,
        )
    }

    pub fn to_f64(&self) -> f64 {
        rational_to_f64(&self.to_rational())
    }
}

impl PartialEq for Dyadic {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Dyadic {}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b, _) = self.aligned(other);
        a.cmp(&b)
    }
}

impl Add for &Dyadic {
    type Output = Dyadic;
    fn add(self, rhs: &Dyadic) -> Dyadic {
        let (a, b, d) = self.aligned(rhs);
        Dyadic::new(a + b, d)
    }
}

impl Sub for &Dyadic {
    type Output = Dyadic;
    fn sub(self, rhs: &Dyadic) -> Dyadic {
        let (a, b, d) = self.aligned(rhs);
        Dyadic::new(a - b, d)
    }
}

impl Mul for &Dyadic {
    type Output = Dyadic;
    fn mul(self, rhs: &Dyadic) -> Dyadic {
        Dyadic::new(
            &self.numerator * &rhs.numerator,
            self.log_denominator + rhs.log_denominator,
        )
    }
}

impl Neg for Dyadic {
    type Output = Dyadic;
    fn neg(self) -> Dyadic {
        Dyadic::new(-self.numerator, self.log_denominator)
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.log_denominator == 0 {
            write!(f, "{}", self.numerator)
        } else {
            write!(f, "{}/2^{}", self.numerator, self.log_denominator)
        }
    }
}

pub fn rational_to_f64(r: &Rational) -> f64 {
    match (r.numer().to_f64(), r.denom().to_f64()) {
        (Some(n), Some(d)) if n.is_finite() && d.is_finite() => n / d,
        _ => {
            // scale both down so the quotient survives the conversion
            let shift = r.denom().bits().max(r.numer().bits()).saturating_sub(1000);
            let n = (r.numer() >> shift as usize).to_f64().unwrap_or(0.0);
            let d = (r.denom() >> shift as usize).to_f64().unwrap_or(1.0);
            n / d
        }
    }
}

pub fn ratio(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

/// `2^e` as a rational.
pub fn pow2(e: i32) -> Rational {
    Dyadic::pow2(e).to_rational()
}

/// Index `(k, m)` of the dyadic family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DyadicPair {
    pub k: u32,
    pub m: u64,
}

impl DyadicPair {
    pub fn new(k: u32, m: u64) -> Result<Self, ScheduleError> {
        if k == 0 || k > 62 || m >= (1u64 << k) {
            return Err(ScheduleError::NotDyadicIndex { k, m });
        }
        Ok(DyadicPair { k, m })
    }

    fn validate(&self) -> Result<(), ScheduleError> {
        DyadicPair::new(self.k, self.m).map(|_| ())
    }

    /// Left end of the dyadic interval `m 2^-k`.
    pub fn position(&self) -> Dyadic {
        Dyadic::new(self.m, self.k)
    }
}

impl fmt::Display for DyadicPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({};{})", self.k, self.m)
    }
}

/// Time order on dyadic indices: by position `m 2^-k`, ties broken by the
/// coarser level first.
pub fn less_time_dyadic(a: DyadicPair, b: DyadicPair) -> Result<bool, ScheduleError> {
    a.validate()?;
    b.validate()?;
    Ok(match a.position().cmp(&b.position()) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a.k < b.k,
    })
}

/// Start time `t_{k,m}`: the total budget `2^{-2k'}` of every index that
/// precedes `(k, m)` in time.
pub fn shear_start_time(p: DyadicPair) -> Result<Dyadic, ScheduleError> {
    p.validate()?;
    let k = p.k;
    let mut t = &Dyadic::new(p.m, 0) * &Dyadic::pow2(1 - 2 * k as i32);
    for kp in 1..k {
        let count = (p.m >> (k - kp)) + 1;
        t = &t + &(&Dyadic::new(count, 0) * &Dyadic::pow2(-2 * kp as i32));
    }
    Ok(t)
}

/// All dyadic indices with `k <= depth`, sorted in time order.
pub fn dyadic_indices(depth: u32) -> Vec<DyadicPair> {
    let mut out = Vec::new();
    for k in 1..=depth {
        for m in 0..(1u64 << k) {
            out.push(DyadicPair { k, m });
        }
    }
    out.sort_by(|a, b| {
        a.position()
            .cmp(&b.position())
            .then_with(|| a.k.cmp(&b.k))
    });
    out
}

/// Index `(k, m, i, n)` of the quadruple family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct QuadIndex {
    pub k: u32,
    pub m: u32,
    pub i: u8,
    pub n: u64,
}

impl QuadIndex {
    pub fn new(k: u32, m: u32, i: u8, n: u64) -> Result<Self, ScheduleError> {
        let q = QuadIndex { k, m, i, n };
        if k == 0 || k > 60 || m == 0 || m > k || !(i == 1 || i == 2) || n == 0 || n > q.width()
        {
            return Err(ScheduleError::NotQuadIndex { k, m, i, n });
        }
        Ok(q)
    }

    fn validate(&self) -> Result<(), ScheduleError> {
        QuadIndex::new(self.k, self.m, self.i, self.n).map(|_| ())
    }

    /// Number of admissible `n` at this level, `2^{floor(k/2)}`.
    pub fn width(&self) -> u64 {
        1u64 << (self.k / 2)
    }

    /// Duration of one binary swap at this level, `3 * 2^-k`.
    pub fn duration(&self) -> Rational {
        ratio(3, 1) * pow2(-(self.k as i32))
    }

    /// Largest index of depth `k`, the lex prefix covering every level `<= k`.
    pub fn depth_bound(k: u32) -> Self {
        QuadIndex {
            k,
            m: k,
            i: 2,
            n: 1u64 << (k / 2),
        }
    }

    fn lex_key(&self) -> (u32, u32, u8, u64) {
        (self.k, self.m, self.i, self.n)
    }
}

impl fmt::Display for QuadIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({};{};{};{})", self.k, self.m, self.i, self.n)
    }
}

pub fn less_lex(a: QuadIndex, b: QuadIndex) -> Result<bool, ScheduleError> {
    a.validate()?;
    b.validate()?;
    Ok(a.lex_key() < b.lex_key())
}

/// Time order: `a` before `b` iff `(m_a, k_b, i_b, n_b) <lex (m_b, k_a, i_a, n_a)`.
pub fn less_time(a: QuadIndex, b: QuadIndex) -> Result<bool, ScheduleError> {
    a.validate()?;
    b.validate()?;
    Ok((a.m, b.k, b.i, b.n) < (b.m, a.k, a.i, a.n))
}

/// `sum_{k >= j} 2^{floor(k/2) - k}`.
pub fn level_tail(j: u32) -> Rational {
    let a = (j / 2) as i32;
    if j % 2 == 0 {
        ratio(3, 1) * pow2(-a)
    } else {
        pow2(1 - a)
    }
}

/// `T_m`: end of epoch `m`, after every swap with `m' <= m` has run.
pub fn epoch_time(m: u32) -> Rational {
    let mut t = Rational::zero();
    for mp in 1..=m {
        t += ratio(6, 1) * level_tail(mp);
    }
    t
}

/// Limit of `T_m` as `m` grows.
pub fn epoch_limit() -> Rational {
    ratio(42, 1)
}

/// Start time `T_(k,m,i,n)`.
pub fn swap_start_time(q: QuadIndex) -> Result<Rational, ScheduleError> {
    q.validate()?;
    let w = q.width();
    let before_same_level = if q.i == 2 { w - q.n } else { 2 * w - q.n };
    Ok(epoch_time(q.m - 1)
        + ratio(6, 1) * level_tail(q.k + 1)
        + ratio(before_same_level as i64, 1) * q.duration())
}

/// Every index `<=lex bound`, in lex order.
pub fn quad_prefix(bound: QuadIndex) -> Result<Vec<QuadIndex>, ScheduleError> {
    bound.validate()?;
    let mut out = Vec::new();
    for k in 1..=bound.k {
        for m in 1..=k {
            for i in 1..=2u8 {
                for n in 1..=(1u64 << (k / 2)) {
                    let q = QuadIndex { k, m, i, n };
                    if q.lex_key() > bound.lex_key() {
                        return Ok(out);
                    }
                    out.push(q);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Dyadic(DyadicPair),
    Quad(QuadIndex),
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Dyadic(p) => write!(f, "D{p}"),
            Payload::Quad(q) => write!(f, "Q{q}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleEntry {
    pub payload: Payload,
    pub start: Rational,
    pub duration: Rational,
}

impl ScheduleEntry {
    pub fn end(&self) -> Rational {
        &self.start + &self.duration
    }
}

#[derive(Clone, Debug)]
pub enum ScheduleFamily {
    /// One duration per level; depth is `taus.len()`.
    Dyadic { taus: Vec<Rational> },
    /// Every quadruple `<=lex prefix`; `None` is the empty schedule.
    Quad { prefix: Option<QuadIndex> },
}

/// Checks `0 < tau_k <= 2^{-2k}` for every level.
pub fn check_finiteness(taus: &[Rational]) -> Result<(), ScheduleError> {
    for (idx, tau) in taus.iter().enumerate() {
        let k = idx as u32 + 1;
        if !tau.is_positive() {
            return Err(ScheduleError::NonPositiveDuration { k });
        }
        if *tau > pow2(-2 * k as i32) {
            return Err(ScheduleError::Finiteness {
                k,
                tau: tau.to_string(),
            });
        }
    }
    Ok(())
}

/// Entries sorted by start time.
pub fn generate_schedule(family: &ScheduleFamily) -> Result<Vec<ScheduleEntry>, ScheduleError> {
    let mut out = match family {
        ScheduleFamily::Dyadic { taus } => {
            check_finiteness(taus)?;
            let mut out = Vec::new();
            for p in dyadic_indices(taus.len() as u32) {
                out.push(ScheduleEntry {
                    payload: Payload::Dyadic(p),
                    start: shear_start_time(p)?.to_rational(),
                    duration: taus[p.k as usize - 1].clone(),
                });
            }
            out
        }
        ScheduleFamily::Quad { prefix: None } => Vec::new(),
        ScheduleFamily::Quad { prefix: Some(b) } => {
            let mut out = Vec::new();
            for q in quad_prefix(*b)? {
                out.push(ScheduleEntry {
                    payload: Payload::Quad(q),
                    start: swap_start_time(q)?,
                    duration: q.duration(),
                });
            }
            out
        }
    };
    out.sort_by(|a, b| a.start.cmp(&b.start));
    Ok(out)
}

/// True when no two entries overlap (touching endpoints allowed).
pub fn is_disjoint(entries: &[ScheduleEntry]) -> bool {
    let mut sorted: Vec<&ScheduleEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| a.start.cmp(&b.start));
    sorted.windows(2).all(|w| w[0].end() <= w[1].start)
}

pub fn total_duration(entries: &[ScheduleEntry]) -> Rational {
    entries
        .iter()
        .fold(Rational::zero(), |acc, e| acc + &e.duration)
}

pub fn write_schedule_csv<W: Write>(entries: &[ScheduleEntry], mut w: W) -> std::io::Result<()> {
    writeln!(w, "payload,start_num,start_den,duration_num,duration_den")?;
    for e in entries {
        writeln!(
            w,
            "{},{},{},{},{}",
            e.payload,
            e.start.numer(),
            e.start.denom(),
            e.duration.numer(),
            e.duration.denom()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(n: i64, log: u32) -> Dyadic {
        Dyadic::new(n, log)
    }

    #[test]
    fn dyadic_arith_is_value_based() {
        assert_eq!(d(2, 3), d(1, 2));
        assert_eq!(&d(1, 2) + &d(1, 4), d(5, 4));
        assert!(d(3, 4) < d(1, 2));
        assert_eq!((&d(3, 1) * &d(1, 3)).to_rational(), ratio(3, 16));
    }

    #[test]
    fn first_start_times() {
        let t = |k, m| shear_start_time(DyadicPair::new(k, m).unwrap()).unwrap();
        assert_eq!(t(1, 0), Dyadic::zero());
        assert_eq!(t(2, 0), d(1, 2));
        assert_eq!(t(1, 1), d(1, 1));
        assert_eq!(t(2, 1), d(3, 3));
        assert_eq!(t(3, 1), d(11, 5));
        assert_eq!(t(3, 3), d(15, 5));
    }

    #[test]
    fn order_examples() {
        let p = |k, m| DyadicPair::new(k, m).unwrap();
        assert!(less_time_dyadic(p(1, 0), p(2, 0)).unwrap());
        assert!(less_time_dyadic(p(2, 1), p(1, 1)).unwrap());
        assert!(less_time_dyadic(p(5, 0), p(5, 0)).is_ok());
        assert!(!less_time_dyadic(p(5, 0), p(5, 0)).unwrap());
        assert!(DyadicPair::new(2, 4).is_err());
    }

    #[test]
    fn quad_examples() {
        let q = |k, m, i, n| QuadIndex::new(k, m, i, n).unwrap();
        assert!(less_time(q(3, 1, 1, 1), q(2, 2, 1, 1)).unwrap());
        assert!(less_time(q(3, 1, 2, 1), q(3, 1, 1, 2)).unwrap());
        assert_eq!(epoch_time(1), ratio(12, 1));
        assert_eq!(epoch_time(2), ratio(21, 1));
        assert_eq!(swap_start_time(q(3, 1, 1, 1)).unwrap(), ratio(45, 8));
        assert!(QuadIndex::new(2, 3, 1, 1).is_err());
    }

    #[test]
    fn finiteness_rejects_offending_level() {
        let e = check_finiteness(&[ratio(1, 4), ratio(1, 8)]).unwrap_err();
        assert!(matches!(e, ScheduleError::Finiteness { k: 2, .. }));
    }

    #[test]
    fn depth_zero_is_empty() {
        let s = generate_schedule(&ScheduleFamily::Dyadic { taus: vec![] }).unwrap();
        assert!(s.is_empty());
        let s = generate_schedule(&ScheduleFamily::Quad { prefix: None }).unwrap();
        assert!(s.is_empty());
    }
}
