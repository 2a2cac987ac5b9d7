//! Monte Carlo and closed-form probes for the random-walk lemmas.
//!
//! Walks are simulated on integers and scaled at report time. Replicates are
//! grouped into fixed-size batches, each with its own derived seed, so
//! results do not depend on the execution mode.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::rational::RationalValue;
use crate::rng::{replicate_seed, rng_from_seed, SimRng, Stream};
use crate::stats::{ratio_summary, summarize, Summary};

/// Walks simulated per derived seed.
const BATCH: usize = 1024;

/// Pass floor for `E|N| / √L` in the martingale transform probe.
pub const MARTINGALE_FLOOR: f64 = 0.05;

/// `√2 / log2(3)` rounded up: the analytic ratio `E[√min(τ0, L)] / log2(L+1)`
/// is largest at `L = 2`.
pub const ROOT_RETURN_CEILING: f64 = 0.8924;

/// Pass floor for `ρ · log2(L+1)` in the bucketing probe: the single-bucket
/// limit `ρ → √(2/π)`, so no strategy may lose more than the `log2(L+1)`
/// factor against a plain walk.
pub const BUCKETING_FLOOR: f64 = 0.797_884_560_802_865_4;

/// Outcome of one probe configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub probe: String,
    /// `key=value` pairs separated by `;`.
    pub parameters: String,
    pub estimate: f64,
    pub stderr: f64,
    pub replicates: usize,
    pub bound: f64,
    pub pass: bool,
}

impl fmt::Display for ProbeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}]: {:.6} ± {:.6} (n={}) vs {:.6} {}",
            self.probe,
            self.parameters,
            self.estimate,
            self.stderr,
            self.replicates,
            self.bound,
            if self.pass { "pass" } else { "FAIL" }
        )
    }
}

/// Run `per_walk` for `replicates` walks in seeded batches, in walk order.
fn batched<R, F>(mode: ExecMode, replicates: usize, seed: u64, param: u64, per_walk: F) -> Vec<R>
where
    R: Send,
    F: Fn(&mut SimRng, &mut BitSource) -> R + Sync + Send,
{
    let batches = replicates.div_ceil(BATCH);
    map_indexed(mode, batches, |b| {
        let mut rng = rng_from_seed(replicate_seed(seed, Stream::Probe, param, b as u64));
        let mut bits = BitSource::default();
        let n = BATCH.min(replicates - b * BATCH);
        (0..n).map(|_| per_walk(&mut rng, &mut bits)).collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Fair coin flips drawn 64 at a time.
#[derive(Default)]
pub struct BitSource {
    word: u64,
    left: u32,
}

impl BitSource {
    #[inline]
    pub fn next(&mut self, rng: &mut SimRng) -> bool {
        if self.left == 0 {
            self.word = rng.random();
            self.left = 64;
        }
        let b = self.word & 1 == 1;
        self.word >>= 1;
        self.left -= 1;
        b
    }

    /// `±1` step.
    #[inline]
    pub fn step(&mut self, rng: &mut SimRng) -> i64 {
        if self.next(rng) {
            1
        } else {
            -1
        }
    }
}

/// `P(τ0 = 2n) = C(2n, n) 4^{-n} / (2n − 1)`, exactly.
pub fn first_return_pmf(n: u32) -> Result<BigRational> {
    if n == 0 {
        return Err(Error::InvalidParameter("first return time is at least 2 (n >= 1)".into()));
    }
    let mut binom = BigInt::one();
    for i in 0..n {
        binom = binom * BigInt::from(2 * n - i) / BigInt::from(i + 1);
    }
    let denom = (BigInt::one() << (2 * n as usize)) * BigInt::from(2 * n - 1);
    Ok(BigRational::new(binom, denom))
}

/// `f_1..=f_max` in floating point via `f_n = u_{n−1} / (2n)`,
/// `u_n = u_{n−1} (2n − 1) / (2n)`.
pub fn first_return_table(max_n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(max_n);
    let mut u = 1.0f64;
    for n in 1..=max_n {
        out.push(u / (2 * n) as f64);
        u *= (2 * n - 1) as f64 / (2 * n) as f64;
    }
    out
}

/// `E[√min(τ0, L)] = Σ_{2n<L} f_n √(2n) + (1 − Σ_{2n<L} f_n) √L`.
pub fn truncated_root_return(l: usize) -> Result<f64> {
    if l < 2 {
        return Err(Error::InvalidParameter(format!("truncation L = {l} must be >= 2")));
    }
    let max_n = (l - 1) / 2;
    let f = first_return_table(max_n);
    let head: f64 = f.iter().enumerate().map(|(i, p)| p * ((2 * (i + 1)) as f64).sqrt()).sum();
    let mass: f64 = f.iter().sum();
    Ok(head + (1.0 - mass) * (l as f64).sqrt())
}

/// First return time of a simple walk, capped at `cap` (returns `cap` when
/// the walk has not returned within `cap` steps).
fn return_time(rng: &mut SimRng, bits: &mut BitSource, cap: usize) -> usize {
    let mut s = 0i64;
    for t in 1..=cap {
        s += bits.step(rng);
        if s == 0 {
            return t;
        }
    }
    cap
}

/// Per-`n` comparison between simulated and exact first-return frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct PmfCheck {
    pub n: usize,
    pub exact: f64,
    pub empirical: f64,
    pub stderr: f64,
}

impl PmfCheck {
    pub fn within(&self, sigmas: f64) -> bool {
        (self.empirical - self.exact).abs() <= sigmas * self.stderr
    }
}

pub fn return_pmf_probe(max_n: usize, replicates: usize, seed: u64, mode: ExecMode) -> Result<Vec<PmfCheck>> {
    if max_n == 0 || replicates == 0 {
        return Err(Error::InvalidParameter("need n >= 1 and at least one walk".into()));
    }
    let cap = 2 * max_n;
    let times = batched(mode, replicates, seed, cap as u64, |rng, bits| return_time(rng, bits, cap + 1));
    let mut hits = vec![0usize; max_n + 1];
    for t in times {
        if t <= cap && t % 2 == 0 {
            hits[t / 2] += 1;
        }
    }
    let r = replicates as f64;
    (1..=max_n)
        .map(|n| {
            let exact = first_return_pmf(n as u32)?.to_f64().unwrap_or(f64::NAN);
            let p = hits[n] as f64 / r;
            // binomial standard error at the exact rate, so rare cells are not overconfident
            Ok(PmfCheck { n, exact, empirical: p, stderr: (exact * (1.0 - exact) / r).sqrt() })
        })
        .collect()
}

/// One simulated walk per replicate, shared across every `L` in `ls`.
/// Each report carries the Monte Carlo estimate of `E[√min(τ0, L)]`, the
/// analytic value as `bound`, and passes when the two agree within three
/// standard errors and the ratio to `log2(L+1)` stays below the ceiling.
pub fn truncated_root_return_probe(ls: &[usize], replicates: usize, seed: u64, mode: ExecMode) -> Result<Vec<ProbeReport>> {
    let max_l = *ls.iter().max().ok_or_else(|| Error::InvalidParameter("empty L list".into()))?;
    if ls.iter().any(|&l| l < 2) {
        return Err(Error::InvalidParameter("every L must be >= 2".into()));
    }
    let times = batched(mode, replicates, seed, max_l as u64, |rng, bits| return_time(rng, bits, max_l));
    ls.iter()
        .map(|&l| {
            let samples: Vec<f64> = times.iter().map(|&t| (t.min(l) as f64).sqrt()).collect();
            let s = summarize(&samples);
            let exact = truncated_root_return(l)?;
            let ratio = s.mean / ((l + 1) as f64).log2();
            let agree = (s.mean - exact).abs() <= 3.0 * s.stderr.max(f64::EPSILON);
            Ok(ProbeReport {
                probe: "root-return".into(),
                parameters: format!("L={l}"),
                estimate: s.mean,
                stderr: s.stderr,
                replicates,
                bound: exact,
                pass: agree && ratio <= ROOT_RETURN_CEILING,
            })
        })
        .collect()
}

/// Predictable indicator rule: sees only the number of rounds so far, the
/// count of included rounds and the current transform value (in units of
/// the increment denominator).
pub trait IndicatorStrategy: Sync {
    fn id(&self) -> String;

    fn include(&self, t: usize, included: usize, partial: i64, horizon: usize, rng: &mut SimRng) -> bool;
}

pub struct AllOnes;

impl IndicatorStrategy for AllOnes {
    fn id(&self) -> String {
        "all_ones".into()
    }
    fn include(&self, _: usize, _: usize, _: i64, _: usize, _: &mut SimRng) -> bool {
        true
    }
}

/// Include everything until `⌈L/2⌉` rounds are in, then stop the first time
/// the running sum is within one increment of zero.
pub struct StopWhenSmall {
    pub threshold: i64,
}

impl IndicatorStrategy for StopWhenSmall {
    fn id(&self) -> String {
        "stop_when_small".into()
    }
    fn include(&self, _: usize, included: usize, partial: i64, horizon: usize, _: &mut SimRng) -> bool {
        // `included` stays frozen once we stop, so this is a one-way switch
        included < horizon.div_ceil(2) || partial.abs() > self.threshold
    }
}

/// Independent `Bernoulli(α)` inclusion, `α = num/den`.
pub struct Thinned {
    pub num: u64,
    pub den: u64,
}

impl IndicatorStrategy for Thinned {
    fn id(&self) -> String {
        format!("thinned:{}/{}", self.num, self.den)
    }
    fn include(&self, _: usize, _: usize, _: i64, _: usize, rng: &mut SimRng) -> bool {
        rng.random_range(0..self.den) < self.num
    }
}

/// `N = Σ_t I_t Z_t` with `Z_t = x − y_t`, `y_t ~ Bernoulli(x)`.
///
/// Reports `E|N| / √L` against [`MARTINGALE_FLOOR`]; also returns the mean
/// number of included rounds.
pub fn martingale_transform_probe(
    l: usize,
    x: RationalValue,
    strategy: &dyn IndicatorStrategy,
    replicates: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<(ProbeReport, f64)> {
    if l == 0 || replicates == 0 {
        return Err(Error::InvalidParameter("need L >= 1 and at least one replicate".into()));
    }
    let x = x.ensure_unit_interval()?;
    if x.is_zero() || x == RationalValue::ONE {
        return Err(Error::InvalidParameter("Bernoulli mean must lie strictly inside (0, 1)".into()));
    }
    let (a, d) = (x.numer(), x.denom());
    let fair = d == 2;
    let runs = batched(mode, replicates, seed, l as u64, |rng, bits| {
        // Z·d ∈ {a − d, a}
        let mut n = 0i64;
        let mut included = 0usize;
        for t in 0..l {
            if strategy.include(t, included, n, l, rng) {
                let y = if fair { bits.next(rng) } else { rng.random_range(0..d) < a };
                n += if y { a - d } else { a };
                included += 1;
            }
        }
        ((n as f64 / d as f64).abs(), included as f64)
    });
    let abs: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let inc: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let s = summarize(&abs);
    let root = (l as f64).sqrt();
    let report = ProbeReport {
        probe: "martingale".into(),
        parameters: format!("L={l};x={x};strategy={}", strategy.id()),
        estimate: s.mean / root,
        stderr: s.stderr / root,
        replicates,
        bound: MARTINGALE_FLOOR,
        pass: s.mean / root >= MARTINGALE_FLOOR,
    };
    Ok((report, summarize(&inc).mean))
}

/// Bucket sums (in units of `h`) and counts visible to a strategy.
#[derive(Clone, Debug, Default)]
pub struct BucketState {
    sums: Vec<i64>,
    counts: Vec<u64>,
}

impl BucketState {
    pub fn sums(&self) -> &[i64] {
        &self.sums
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }
}

/// Chooses the next bucket from the pre-increment state. Returning
/// `state.len()` opens a new bucket.
pub trait BucketingStrategy: Send {
    fn id(&self) -> String;

    fn choose(&mut self, state: &BucketState, t: usize, rng: &mut SimRng) -> usize;
}

pub struct SingleBucket;

impl BucketingStrategy for SingleBucket {
    fn id(&self) -> String {
        "single_bucket".into()
    }
    fn choose(&mut self, _: &BucketState, _: usize, _: &mut SimRng) -> usize {
        0
    }
}

pub struct RoundRobin {
    pub buckets: usize,
}

impl BucketingStrategy for RoundRobin {
    fn id(&self) -> String {
        format!("round_robin:{}", self.buckets)
    }
    fn choose(&mut self, _: &BucketState, t: usize, _: &mut SimRng) -> usize {
        t % self.buckets
    }
}

/// Stay in the current bucket until its sum returns to zero, then open a
/// fresh one; each bucket holds exactly one excursion.
#[derive(Default)]
pub struct FreshBucketOnReturn {
    current: usize,
}

impl BucketingStrategy for FreshBucketOnReturn {
    fn id(&self) -> String {
        "fresh_bucket_on_return".into()
    }
    fn choose(&mut self, state: &BucketState, _: usize, _: &mut SimRng) -> usize {
        if self.current < state.len() && state.counts[self.current] > 0 && state.sums[self.current] == 0 {
            self.current = state.len();
        }
        self.current
    }
}

/// Among `buckets` labels, the nonzero bucket with the smallest `|sum|`.
/// When every opened bucket is at zero a new label is opened (up to
/// `buckets`), otherwise bucket 0 is used.
pub struct AvoidZero {
    pub buckets: usize,
}

impl BucketingStrategy for AvoidZero {
    fn id(&self) -> String {
        format!("avoid_zero:{}", self.buckets)
    }
    fn choose(&mut self, state: &BucketState, _: usize, _: &mut SimRng) -> usize {
        let mut best: Option<(i64, usize)> = None;
        for v in 0..self.buckets.min(state.len()) {
            let s = state.sums[v].abs();
            if s != 0 && best.is_none_or(|(b, _)| s < b) {
                best = Some((s, v));
            }
        }
        match best {
            Some((_, v)) => v,
            None if state.len() < self.buckets => state.len(),
            None => 0,
        }
    }
}

/// Among `buckets` labels, a zero-sum bucket (lowest index) when one
/// exists, otherwise the smallest `|sum|`.
pub struct ZeroSeeking {
    pub buckets: usize,
}

impl BucketingStrategy for ZeroSeeking {
    fn id(&self) -> String {
        format!("zero_seeking:{}", self.buckets)
    }
    fn choose(&mut self, state: &BucketState, _: usize, _: &mut SimRng) -> usize {
        if state.len() < self.buckets {
            // unopened labels are at zero
            return (0..state.len()).find(|&v| state.sums[v] == 0).unwrap_or(state.len());
        }
        (0..self.buckets).min_by_key(|&v| (state.sums[v].abs(), v)).unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrategyKind {
    SingleBucket,
    RoundRobin,
    FreshBucketOnReturn,
    AvoidZero,
    ZeroSeeking,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::SingleBucket,
        StrategyKind::RoundRobin,
        StrategyKind::FreshBucketOnReturn,
        StrategyKind::AvoidZero,
        StrategyKind::ZeroSeeking,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "single_bucket" => StrategyKind::SingleBucket,
            "round_robin" => StrategyKind::RoundRobin,
            "fresh_bucket_on_return" => StrategyKind::FreshBucketOnReturn,
            "avoid_zero" => StrategyKind::AvoidZero,
            "zero_seeking" => StrategyKind::ZeroSeeking,
            other => return Err(Error::UnknownId(other.to_string())),
        })
    }

    /// Fresh strategy for horizon `l`; round robin uses `⌈√L⌉` buckets, the
    /// adversarial ones 16.
    pub fn build(&self, l: usize) -> Box<dyn BucketingStrategy> {
        match self {
            StrategyKind::SingleBucket => Box::new(SingleBucket),
            StrategyKind::RoundRobin => Box::new(RoundRobin { buckets: ((l as f64).sqrt().ceil() as usize).max(1) }),
            StrategyKind::FreshBucketOnReturn => Box::new(FreshBucketOnReturn::default()),
            StrategyKind::AvoidZero => Box::new(AvoidZero { buckets: 16 }),
            StrategyKind::ZeroSeeking => Box::new(ZeroSeeking { buckets: 16 }),
        }
    }
}

/// Pathwise quantities from one bucketing run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BucketingRun {
    /// `Σ_v |B_v| / h`.
    pub abs_sum: i64,
    /// `Σ_v √n_v`.
    pub root_counts: f64,
    /// `L_ε`: steps taken from a bucket at zero.
    pub returns: u64,
    /// `Σ_v R_v` from the excursion bookkeeping.
    pub excursions: u64,
    /// `√n_v ≤ Σ_j √ℓ_j` held for every bucket.
    pub subadditive: bool,
    pub buckets: usize,
}

/// One run of `l` increments `±1` routed by `strategy`.
pub fn bucketing_run(
    l: usize,
    strategy: &mut dyn BucketingStrategy,
    rng: &mut SimRng,
    bits: &mut BitSource,
) -> Result<BucketingRun> {
    let mut state = BucketState::default();
    // per bucket: length of the open excursion, Σ √ℓ over closed ones, excursion count
    let mut open: Vec<u64> = Vec::new();
    let mut closed_roots: Vec<f64> = Vec::new();
    let mut excursions: Vec<u64> = Vec::new();
    let mut returns = 0u64;
    for t in 0..l {
        let v = strategy.choose(&state, t, rng);
        if v > state.len() {
            return Err(Error::IndexOutOfRange { index: v, len: state.len() + 1 });
        }
        if v == state.len() {
            state.sums.push(0);
            state.counts.push(0);
            open.push(0);
            closed_roots.push(0.0);
            excursions.push(0);
        }
        if state.sums[v] == 0 {
            returns += 1;
            if open[v] > 0 {
                closed_roots[v] += (open[v] as f64).sqrt();
            }
            open[v] = 0;
            excursions[v] += 1;
        }
        state.sums[v] += bits.step(rng);
        state.counts[v] += 1;
        open[v] += 1;
    }
    let mut subadditive = true;
    let mut root_counts = 0.0;
    for v in 0..state.len() {
        let root_n = (state.counts[v] as f64).sqrt();
        let pieces = closed_roots[v] + (open[v] as f64).sqrt();
        subadditive &= root_n <= pieces * (1.0 + 1e-12);
        root_counts += root_n;
    }
    Ok(BucketingRun {
        abs_sum: state.sums.iter().map(|s| s.abs()).sum(),
        root_counts,
        returns,
        excursions: excursions.iter().sum(),
        subadditive,
        buckets: state.len(),
    })
}

/// Bucketing probe summary.
#[derive(Clone, Debug, PartialEq)]
pub struct BucketingReport {
    pub report: ProbeReport,
    /// `E[Σ_v |B_v|]`.
    pub abs_sum: Summary,
    /// `E[Σ_v √n_v]`.
    pub root_counts: Summary,
    /// `E[Σ_v |B_v|] − h E[L_ε]`, paired across replicates.
    pub drift_gap: Summary,
    /// Replicates where `L_ε ≠ Σ_v R_v` or subadditivity failed.
    pub violations: usize,
    pub mean_buckets: f64,
}

/// `ρ = E[Σ|B_v|] / (h E[Σ √n_v])`, passing when `ρ log2(L+1) ≥ BUCKETING_FLOOR`.
pub fn bucketing_probe(
    l: usize,
    h: RationalValue,
    kind: StrategyKind,
    replicates: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<BucketingReport> {
    if l < 2 || replicates == 0 {
        return Err(Error::InvalidParameter("need L >= 2 and at least one replicate".into()));
    }
    if h.numer() <= 0 || h > RationalValue::ONE {
        return Err(Error::InvalidParameter(format!("step h = {h} must lie in (0, 1]")));
    }
    let hf = h.to_f64();
    let runs = batched(mode, replicates, seed ^ kind as u64, l as u64, |rng, bits| {
        let mut strategy = kind.build(l);
        bucketing_run(l, strategy.as_mut(), rng, bits)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let abs: Vec<f64> = runs.iter().map(|r| r.abs_sum as f64 * hf).collect();
    let roots: Vec<f64> = runs.iter().map(|r| r.root_counts).collect();
    let gap: Vec<f64> = runs.iter().map(|r| (r.abs_sum as f64 - r.returns as f64) * hf).collect();
    let violations = runs.iter().filter(|r| r.returns != r.excursions || !r.subadditive).count();
    let scaled: Vec<f64> = roots.iter().map(|r| r * hf).collect();
    let rho = ratio_summary(&abs, &scaled);
    let log = ((l + 1) as f64).log2();
    let report = ProbeReport {
        probe: "bucketing".into(),
        parameters: format!("L={l};h={h};strategy={}", kind.build(l).id()),
        estimate: rho.mean,
        stderr: rho.stderr,
        replicates,
        bound: BUCKETING_FLOOR / log,
        pass: rho.mean * log >= BUCKETING_FLOOR && violations == 0,
    };
    Ok(BucketingReport {
        report,
        abs_sum: summarize(&abs),
        root_counts: summarize(&roots),
        drift_gap: summarize(&gap),
        violations,
        mean_buckets: runs.iter().map(|r| r.buckets as f64).sum::<f64>() / runs.len() as f64,
    })
}
