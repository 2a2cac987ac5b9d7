//! Oblivious hard environments.
//!
//! Three instances are provided:
//!
//! - `Bernoulli`: contexts cycle round-robin through the interior grid
//!   `{j/m} ∩ [1/4, 3/4]`, outcomes `y ~ Bernoulli(x)`.
//! - `Rademacher`: contexts are `(x, t)` with `x` cycling over `m` equispaced
//!   means in `[1/4, 3/4]`, outcomes `y = x ± 1/4` with a fair sign.
//! - `Bits`: contexts uniform on `{0,1}^k`, outcome deterministically the
//!   midpoint `(val(x) + 1/2) / 2^k`.
//!
//! A trajectory is a pure function of `(kind, parameters, seed)`.

use std::fmt;
use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};
use crate::orthogonal::is_power_of_two;
use crate::rational::RationalValue;
use crate::rng::{rng_from_seed, SimRng};

/// A point of the `k`-bit hypercube; `x_1` is the most significant bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BitContext {
    value: u32,
    k: u8,
}

impl BitContext {
    pub fn new(value: u32, k: u8) -> Result<Self> {
        if k == 0 || k > 30 {
            return Err(Error::InvalidParameter(format!("bit width k = {k} must lie in 1..=30")));
        }
        if value >= 1 << k {
            return Err(Error::IndexOutOfRange { index: value as usize, len: 1 << k });
        }
        Ok(BitContext { value, k })
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let value = bits.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32);
        BitContext::new(value, bits.len() as u8)
    }

    /// `val(x) = Σ_r x_r 2^{k-r}`.
    pub fn val(&self) -> u32 {
        self.value
    }

    pub fn k(&self) -> u8 {
        self.k
    }

    /// Coordinate `x_r` for `r ∈ 1..=k`.
    pub fn bit(&self, r: u8) -> bool {
        debug_assert!(r >= 1 && r <= self.k);
        (self.value >> (self.k - r)) & 1 == 1
    }

    /// Whether `p ∈ J_{val(x)} = [b/N, (b+1)/N)`, the last interval closed.
    pub fn interval_contains(&self, p: RationalValue) -> bool {
        let n = 1i64 << self.k;
        let b = self.value as i64;
        let lo = RationalValue::new(b, n).expect("n > 0");
        let hi = RationalValue::new(b + 1, n).expect("n > 0");
        p >= lo && (p < hi || (b == n - 1 && p <= hi))
    }

    /// Midpoint of the interval `J_{val(x)}`.
    pub fn midpoint(&self) -> RationalValue {
        let n = 1i64 << self.k;
        RationalValue::new(2 * self.value as i64 + 1, 2 * n).expect("nonzero denominator")
    }
}

impl fmt::Display for BitContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 1..=self.k {
            write!(f, "{}", self.bit(r) as u8)?;
        }
        Ok(())
    }
}

/// The context revealed at one round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Context {
    Mean(RationalValue),
    MeanTime { mean: RationalValue, time: u64 },
    Bits(BitContext),
}

impl Context {
    pub fn mean(&self) -> Option<RationalValue> {
        match *self {
            Context::Mean(x) | Context::MeanTime { mean: x, .. } => Some(x),
            Context::Bits(_) => None,
        }
    }

    pub fn time(&self) -> Option<u64> {
        match *self {
            Context::MeanTime { time, .. } => Some(time),
            _ => None,
        }
    }

    pub fn bits(&self) -> Option<BitContext> {
        match *self {
            Context::Bits(b) => Some(b),
            _ => None,
        }
    }

    /// Conditional label mean encoded by the context.
    pub fn label_mean(&self) -> RationalValue {
        match *self {
            Context::Mean(x) | Context::MeanTime { mean: x, .. } => x,
            Context::Bits(b) => b.midpoint(),
        }
    }
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Context::Mean(x) => write!(f, "{x}"),
            Context::MeanTime { mean, time } => write!(f, "{mean}@{time}"),
            Context::Bits(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Round {
    pub context: Context,
    pub outcome: RationalValue,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EnvKind {
    Bernoulli,
    Rademacher,
    Bits,
}

impl EnvKind {
    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::Bernoulli => "bernoulli",
            EnvKind::Rademacher => "rademacher",
            EnvKind::Bits => "bits",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(EnvKind::Bernoulli),
            "rademacher" => Ok(EnvKind::Rademacher),
            "bits" => Ok(EnvKind::Bits),
            other => Err(Error::UnknownId(other.to_string())),
        }
    }
}

/// Environment parameters; `m` is the grid size (Bernoulli, Rademacher),
/// `k` the bit width (Bits).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnvParams {
    pub horizon: usize,
    pub m: Option<usize>,
    pub k: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trajectory {
    kind: EnvKind,
    params: EnvParams,
    seed: u64,
    rounds: Vec<Round>,
}

impl Trajectory {
    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn params(&self) -> EnvParams {
        self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rounds(&self) -> &[Round] {
        &self.rounds
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Newline-delimited dump: `round<TAB>context<TAB>outcome`, rounds 1-based.
    pub fn dump<W: Write>(&self, mut out: W) -> Result<()> {
        for (i, r) in self.rounds.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}", i + 1, r.context, r.outcome)?;
        }
        Ok(())
    }

    pub fn dump_string(&self) -> String {
        let mut buf = Vec::new();
        self.dump(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("dump is ASCII")
    }
}

/// Interior grid `{j/m : j ∈ 1..m-1, j/m ∈ [1/4, 3/4]}`, ascending.
pub fn grid_section3(m: usize) -> Result<Vec<RationalValue>> {
    if m < 8 {
        return Err(Error::InvalidParameter(format!("grid size m = {m} must be at least 8")));
    }
    Ok((1..m)
        .filter(|&j| 4 * j >= m && 4 * j <= 3 * m)
        .map(|j| RationalValue::new(j as i64, m as i64).expect("m > 0"))
        .collect())
}

/// `m` equispaced means `x_i = 1/4 + (i-1) / (2(m-1))`, `i = 1..=m`.
pub fn grid_section4(m: usize) -> Result<Vec<RationalValue>> {
    if m < 2 || !is_power_of_two(m) {
        return Err(Error::InvalidParameter(format!("grid size m = {m} must be a power of two >= 2")));
    }
    let quarter = RationalValue::new(1, 4).expect("const");
    Ok((0..m)
        .map(|i| quarter + RationalValue::new(i as i64, 2 * (m as i64 - 1)).expect("m >= 2"))
        .collect())
}

/// Largest integer `c` with `c^3 ≤ n`.
pub fn integer_cube_root(n: u64) -> u64 {
    let mut c = (n as f64).cbrt().round() as u64;
    while c.saturating_mul(c).saturating_mul(c) > n {
        c -= 1;
    }
    while (c + 1).saturating_mul(c + 1).saturating_mul(c + 1) <= n {
        c += 1;
    }
    c
}

/// `m = ⌊T^{1/3}⌋`, the default Bernoulli grid size.
pub fn default_bernoulli_m(horizon: usize) -> usize {
    integer_cube_root(horizon as u64) as usize
}

/// `m = max{2, 2^{⌊log2 T^{1/3}⌋}}`, computed without floating point.
pub fn rademacher_m(horizon: usize) -> usize {
    let mut e = 0u32;
    while (1u128 << (3 * (e + 1))) <= horizon as u128 {
        e += 1;
    }
    (1usize << e).max(2)
}

pub fn sample_bernoulli_env(horizon: usize, m: usize, seed: u64) -> Result<Trajectory> {
    sample_bernoulli_with(horizon, m, seed, &mut rng_from_seed(seed))
}

fn sample_bernoulli_with(horizon: usize, m: usize, seed: u64, rng: &mut SimRng) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let grid = grid_section3(m)?;
    let rounds = (0..horizon)
        .map(|t| {
            let x = grid[t % grid.len()];
            // exact Bernoulli(num/den): uniform integer below num
            let hit = rng.random_range(0..x.denom()) < x.numer();
            Round { context: Context::Mean(x), outcome: RationalValue::from_integer(hit as i64) }
        })
        .collect();
    Ok(Trajectory {
        kind: EnvKind::Bernoulli,
        params: EnvParams { horizon, m: Some(m), k: None },
        seed,
        rounds,
    })
}

pub fn sample_rademacher_env(horizon: usize, seed: u64) -> Result<Trajectory> {
    if horizon < 2 {
        return Err(Error::InvalidParameter("Rademacher environment needs T >= 2".into()));
    }
    let m = rademacher_m(horizon);
    let grid = grid_section4(m)?;
    let quarter = RationalValue::new(1, 4).expect("const");
    let mut rng = rng_from_seed(seed);
    let rounds = (0..horizon)
        .map(|t| {
            let x = grid[t % m];
            let y = if rng.random::<bool>() { x + quarter } else { x - quarter };
            Round { context: Context::MeanTime { mean: x, time: t as u64 + 1 }, outcome: y }
        })
        .collect();
    Ok(Trajectory {
        kind: EnvKind::Rademacher,
        params: EnvParams { horizon, m: Some(m), k: None },
        seed,
        rounds,
    })
}

pub fn sample_bit_env(horizon: usize, k: u8, seed: u64) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    BitContext::new(0, k)?;
    let mut rng = rng_from_seed(seed);
    let n = 1u32 << k;
    let rounds = (0..horizon)
        .map(|_| {
            let b = BitContext::new(rng.random_range(0..n), k).expect("in range");
            Round { context: Context::Bits(b), outcome: b.midpoint() }
        })
        .collect();
    Ok(Trajectory {
        kind: EnvKind::Bits,
        params: EnvParams { horizon, m: None, k: Some(k) },
        seed,
        rounds,
    })
}

/// Environment description used by experiments to regenerate replicates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvSpec {
    /// `m = None` selects `⌊T^{1/3}⌋`.
    Bernoulli { m: Option<usize> },
    Rademacher,
    Bits { k: u8 },
}

impl EnvSpec {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvSpec::Bernoulli { .. } => EnvKind::Bernoulli,
            EnvSpec::Rademacher => EnvKind::Rademacher,
            EnvSpec::Bits { .. } => EnvKind::Bits,
        }
    }

    /// Grid size this spec uses at horizon `T` (if any).
    pub fn grid_size(&self, horizon: usize) -> Option<usize> {
        match *self {
            EnvSpec::Bernoulli { m } => Some(m.unwrap_or_else(|| default_bernoulli_m(horizon))),
            EnvSpec::Rademacher => Some(rademacher_m(horizon)),
            EnvSpec::Bits { .. } => None,
        }
    }

    pub fn sample(&self, horizon: usize, seed: u64) -> Result<Trajectory> {
        match *self {
            EnvSpec::Bernoulli { .. } => {
                sample_bernoulli_env(horizon, self.grid_size(horizon).expect("bernoulli has a grid"), seed)
            }
            EnvSpec::Rademacher => sample_rademacher_env(horizon, seed),
            EnvSpec::Bits { k } => sample_bit_env(horizon, k, seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn r(n: i64, d: i64) -> RationalValue {
        RationalValue::new(n, d).unwrap()
    }

    #[test]
    fn section3_grid() {
        let g = grid_section3(8).unwrap();
        assert_eq!(g, vec![r(2, 8), r(3, 8), r(4, 8), r(5, 8), r(6, 8)]);
        assert!(grid_section3(4).is_err());
        for m in 8..200 {
            let m0 = grid_section3(m).unwrap().len();
            assert!(2 * m0 + 1 >= m, "m={m} m0={m0}");
        }
    }

    #[test]
    fn section4_grid() {
        assert_eq!(grid_section4(2).unwrap(), vec![r(1, 4), r(3, 4)]);
        assert_eq!(grid_section4(4).unwrap(), vec![r(1, 4), r(5, 12), r(7, 12), r(3, 4)]);
        for m in [2usize, 4, 8, 16, 64] {
            let g = grid_section4(m).unwrap();
            for w in g.windows(2) {
                assert_eq!(w[1] - w[0], r(1, 2 * (m as i64 - 1)));
            }
            assert_eq!(*g.last().unwrap(), r(3, 4));
        }
        assert!(grid_section4(6).is_err());
        assert!(grid_section4(1).is_err());
    }

    #[test]
    fn cube_roots() {
        assert_eq!(integer_cube_root(1023), 10);
        assert_eq!(integer_cube_root(1000), 10);
        assert_eq!(integer_cube_root(999), 9);
        assert_eq!(rademacher_m(64), 4);
        assert_eq!(rademacher_m(63), 2);
        assert_eq!(rademacher_m(2), 2);
        assert_eq!(rademacher_m(1 << 12), 16);
    }

    #[test]
    fn bernoulli_round_robin() {
        let t = sample_bernoulli_env(10, 8, 1).unwrap();
        let grid = grid_section3(8).unwrap();
        let ctx: Vec<_> = t.rounds().iter().map(|r| r.context.mean().unwrap()).collect();
        let expect: Vec<_> = grid.iter().chain(grid.iter()).copied().collect();
        assert_eq!(ctx, expect);
        assert!(t.rounds().iter().all(|r| r.outcome == RationalValue::ZERO || r.outcome == RationalValue::ONE));
    }

    #[test]
    fn bernoulli_counts_balanced() {
        let t = sample_bernoulli_env(1003, 16, 5).unwrap();
        let mut counts: HashMap<RationalValue, usize> = HashMap::new();
        for r in t.rounds() {
            *counts.entry(r.context.mean().unwrap()).or_default() += 1;
        }
        let max = counts.values().max().unwrap();
        let min = counts.values().min().unwrap();
        assert!(max - min <= 1);
    }

    #[test]
    fn bernoulli_means_converge() {
        let horizon = 100_000;
        let t = sample_bernoulli_env(horizon, 8, 11).unwrap();
        let mut agg: HashMap<RationalValue, (f64, f64)> = HashMap::new();
        for r in t.rounds() {
            let e = agg.entry(r.context.mean().unwrap()).or_default();
            e.0 += r.outcome.to_f64();
            e.1 += 1.0;
        }
        for (x, (sum, n)) in agg {
            let x = x.to_f64();
            assert!((3.0 / 16.0..=0.25).contains(&(x * (1.0 - x))));
            assert!((sum / n - x).abs() <= 3.0 * (x * (1.0 - x) / n).sqrt());
        }
    }

    #[test]
    fn rademacher_outcomes() {
        let t = sample_rademacher_env(64, 3).unwrap();
        assert_eq!(t.params().m, Some(4));
        let quarter = r(1, 4);
        for (i, round) in t.rounds().iter().enumerate() {
            let x = round.context.mean().unwrap();
            assert_eq!(round.context.time(), Some(i as u64 + 1));
            assert!(round.outcome == x + quarter || round.outcome == x - quarter);
            assert!(round.outcome.in_unit_interval());
        }
        assert!(sample_rademacher_env(1, 3).is_err());
    }

    #[test]
    fn rademacher_noise_is_centered() {
        let n = 100_000;
        let t = sample_rademacher_env(n, 17).unwrap();
        let mean_xi: f64 = t
            .rounds()
            .iter()
            .map(|r| 4.0 * (r.outcome - r.context.mean().unwrap()).to_f64())
            .sum::<f64>()
            / n as f64;
        assert!(mean_xi.abs() <= 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn bit_env_midpoints() {
        let b = BitContext::from_bits(&[true, false]).unwrap();
        assert_eq!(b.val(), 2);
        assert_eq!(b.midpoint(), r(5, 8));
        assert!(b.bit(1) && !b.bit(2));
        assert_eq!(b.to_string(), "10");
        let t = sample_bit_env(50, 3, 9).unwrap();
        for round in t.rounds() {
            let b = round.context.bits().unwrap();
            let lo = r(b.val() as i64, 8);
            let hi = r(b.val() as i64 + 1, 8);
            assert_eq!(round.outcome, (lo + hi) * RationalValue::HALF);
        }
    }

    #[test]
    fn bit_env_uniform_contexts() {
        let horizon = 100_000;
        let t = sample_bit_env(horizon, 3, 23).unwrap();
        let mut counts = [0usize; 8];
        for round in t.rounds() {
            counts[round.context.bits().unwrap().val() as usize] += 1;
        }
        let p = 1.0 / 8.0;
        let sd = (p * (1.0 - p) / horizon as f64).sqrt();
        for c in counts {
            assert!((c as f64 / horizon as f64 - p).abs() <= 3.0 * sd);
        }
    }

    #[test]
    fn regeneration_is_identical() {
        for spec in [EnvSpec::Bernoulli { m: None }, EnvSpec::Rademacher, EnvSpec::Bits { k: 3 }] {
            let a = spec.sample(700, 42).unwrap();
            let b = spec.sample(700, 42).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.dump_string(), b.dump_string());
            let c = spec.sample(700, 43).unwrap();
            assert_ne!(a.dump_string(), c.dump_string());
        }
    }

    #[test]
    fn dump_format() {
        let t = sample_rademacher_env(2, 0).unwrap();
        let text = t.dump_string();
        let first = text.lines().next().unwrap();
        let fields: Vec<_> = first.split('\t').collect();
        assert_eq!(fields[0], "1");
        assert_eq!(fields[1], "1/4@1");
        assert!(fields[2] == "0" || fields[2] == "1/2");
    }
}
