//! Transmission cost of multicasting one item to several tiers of users.
//!
//! Tier `t` wants a block of `B_t` symbols and its weakest user supports rate
//! `r_t`. Three schemes are compared: encoding separately per tier, sending
//! the best tier's block at the overall weakest rate, and multi-resolution
//! coding where each tier after the first only adds its differential part,
//! inflated by an overhead factor `eta`.

use std::fmt::Debug;

use num_rational::Rational64;
use num_traits::{Num, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierSpec<T> {
    block_symbols: Vec<T>,
    rates: Vec<T>,
}

impl<T: Num + Clone + PartialOrd + Debug> TierSpec<T> {
    /// Blocks must be positive and strictly increasing; rates lie in
    /// `(0, 1]` and do not decrease.
    pub fn new(block_symbols: Vec<T>, rates: Vec<T>) -> Result<Self> {
        if block_symbols.is_empty() || block_symbols.len() != rates.len() {
            return Err(Error::Domain(format!(
                "need one rate per tier and at least one tier, got {} blocks and {} rates",
                block_symbols.len(),
                rates.len()
            )));
        }
        for t in 0..rates.len() {
            check_tier(&block_symbols[t], &rates[t]).map_err(|m| Error::Domain(format!("tier {}: {m}", t + 1)))?;
            if t > 0 {
                check_order(&block_symbols[t - 1..=t], &rates[t - 1..=t]).map_err(|m| Error::Domain(format!("tier {}: {m}", t + 1)))?;
            }
        }
        Ok(Self { block_symbols, rates })
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn block_symbols(&self) -> &[T] {
        &self.block_symbols
    }

    pub fn rates(&self) -> &[T] {
        &self.rates
    }

    pub fn map<U: Num + Clone + PartialOrd + Debug>(&self, f: impl Fn(&T) -> U) -> Result<TierSpec<U>> {
        TierSpec::new(self.block_symbols.iter().map(&f).collect(), self.rates.iter().map(&f).collect())
    }
}

fn check_tier<T: Num + PartialOrd>(block: &T, rate: &T) -> std::result::Result<(), String> {
    if !(*block > T::zero()) {
        return Err("block size must be positive".into());
    }
    if !(*rate > T::zero() && *rate <= T::one()) {
        return Err("rate must lie in (0, 1]".into());
    }
    Ok(())
}

fn check_order<T: PartialOrd>(blocks: &[T], rates: &[T]) -> std::result::Result<(), String> {
    if !(blocks[1] > blocks[0]) {
        return Err("block sizes must strictly increase".into());
    }
    if rates[1] < rates[0] {
        return Err("rates must not decrease".into());
    }
    Ok(())
}

/// `Σ_t B_t / r_t`.
pub fn cost_separate<T: Num + Clone + PartialOrd + Debug>(tiers: &TierSpec<T>) -> T {
    tiers.block_symbols.iter().zip(&tiers.rates).fold(T::zero(), |acc, (b, r)| acc + b.clone() / r.clone())
}

/// `B_last / r_first`.
pub fn cost_single_best<T: Num + Clone + PartialOrd + Debug>(tiers: &TierSpec<T>) -> T {
    tiers.block_symbols[tiers.len() - 1].clone() / tiers.rates[0].clone()
}

/// Intercept and slope of `cost_mr` as an affine function of `eta`.
pub fn cost_mr_affine<T: Num + Clone + PartialOrd + Debug>(tiers: &TierSpec<T>) -> (T, T) {
    let b = &tiers.block_symbols;
    let r = &tiers.rates;
    let slope = (1..tiers.len()).fold(T::zero(), |acc, t| acc + (b[t].clone() - b[t - 1].clone()) / r[t].clone());
    (b[0].clone() / r[0].clone(), slope)
}

/// `B_1 / r_1 + Σ_{t≥2} eta (B_t - B_{t-1}) / r_t`; `eta` below one is
/// rejected.
pub fn cost_mr<T: Num + Clone + PartialOrd + Debug>(tiers: &TierSpec<T>, eta: T) -> Result<T> {
    if !(eta >= T::one()) {
        return Err(Error::Domain(format!("eta must be at least 1, got {eta:?}")));
    }
    let (a, s) = cost_mr_affine(tiers);
    Ok(a + eta * s)
}

/// The three costs in units of the base block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticastPlan<T> {
    pub cost_separate: T,
    pub cost_single_best: T,
    pub cost_mr: T,
    pub eta: T,
}

impl<T: Num + Clone + PartialOrd + Debug> MulticastPlan<T> {
    pub fn new(tiers: &TierSpec<T>, eta: T) -> Result<Self> {
        Ok(Self {
            cost_separate: cost_separate(tiers),
            cost_single_best: cost_single_best(tiers),
            cost_mr: cost_mr(tiers, eta.clone())?,
            eta,
        })
    }

    /// Multi-resolution cost relative to each alternative.
    pub fn savings(&self) -> (T, T) {
        (self.cost_mr.clone() / self.cost_separate.clone(), self.cost_mr.clone() / self.cost_single_best.clone())
    }
}

/// The `eta` at which multi-resolution coding costs as much as sending the
/// best block at the weakest rate; `None` with a single tier.
pub fn breakeven_eta<T: Num + Clone + PartialOrd + Debug>(tiers: &TierSpec<T>) -> Option<T> {
    let (a, s) = cost_mr_affine(tiers);
    (s != T::zero()).then(|| (cost_single_best(tiers) - a) / s)
}

/// Reads `1/3`, `2`, `0.75` or `-1.5` exactly.
pub fn parse_exact(text: &str) -> Option<Rational64> {
    let t = text.trim();
    if let Some((n, d)) = t.split_once('/') {
        let (n, d): (i64, i64) = (n.trim().parse().ok()?, d.trim().parse().ok()?);
        return (d != 0).then(|| Rational64::new(n, d));
    }
    let (neg, digits) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t),
    };
    let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
    if int.is_empty() && frac.is_empty() || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 15 {
        return None;
    }
    let den = 10i64.checked_pow(frac.len() as u32)?;
    let whole: i64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let part: i64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
    let num = whole.checked_mul(den)?.checked_add(part)?;
    Some(Rational64::new(if neg { -num } else { num }, den))
}

/// Parses a tier table with one `block_symbols,rate` pair per line. Blank
/// lines, `#` comments and a leading header line are skipped. Errors carry
/// one-based line numbers.
pub fn parse_tier_table(text: &str) -> Result<TierSpec<Rational64>> {
    let (mut blocks, mut rates) = (Vec::new(), Vec::new());
    let mut seen_data = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split(',').map(str::trim).collect();
        if !seen_data && fields.iter().all(|f| f.chars().any(|c| c.is_ascii_alphabetic())) {
            seen_data = true;
            continue;
        }
        seen_data = true;
        let err = |message: String| Error::Parse { line, message };
        if fields.len() != 2 {
            return Err(err(format!("expected `block_symbols,rate`, got {} fields", fields.len())));
        }
        let b = parse_exact(fields[0]).ok_or_else(|| err(format!("bad block size `{}`", fields[0])))?;
        let r = parse_exact(fields[1]).ok_or_else(|| err(format!("bad rate `{}`", fields[1])))?;
        check_tier(&b, &r).map_err(err)?;
        if let (Some(pb), Some(pr)) = (blocks.last(), rates.last()) {
            check_order(&[*pb, b], &[*pr, r]).map_err(err)?;
        }
        blocks.push(b);
        rates.push(r);
    }
    if blocks.is_empty() {
        return Err(Error::Parse { line: text.lines().count().max(1), message: "no tiers".into() });
    }
    TierSpec::new(blocks, rates)
}

pub fn to_f64(tiers: &TierSpec<Rational64>) -> Result<TierSpec<f64>> {
    tiers.map(|v| v.to_f64().unwrap_or(f64::NAN))
}

/// Tiers `(B, 1/3), (2B, 1/2), (4B, 2/3), (6B, 3/4)`.
pub fn example_tiers() -> TierSpec<Rational64> {
    let r = Rational64::new;
    TierSpec::new(vec![r(1, 1), r(2, 1), r(4, 1), r(6, 1)], vec![r(1, 3), r(1, 2), r(2, 3), r(3, 4)]).expect("valid tiers")
}
