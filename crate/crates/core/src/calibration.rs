//! Empirical biases, Err / MCerr, and the deviation statistics used by the
//! lower-bound arguments.
//!
//! All sums are exact. A bias is a rational with `i128` numerator; reports
//! expose both the exact value and an `f64` view.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use num_rational::Ratio;
use num_traits::{Signed, Zero};

use crate::environments::Context;
use crate::error::{Error, Result};
use crate::groups::{grid_index, BlockLayout, GroupFamily, GroupFunction};
use crate::orthogonal::fwht_in_place;
use crate::rational::{common_denominator, ratio_i128_to_f64, scaled_numer, ExactSum, RationalValue};

pub type Exact = Ratio<i128>;

/// One played round: context, realized prediction and outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlayedRound {
    pub context: Context,
    pub prediction: RationalValue,
    pub outcome: RationalValue,
}

impl PlayedRound {
    /// `δ_t = p − x`, with `x` the label mean encoded by the context.
    pub fn drift(&self) -> RationalValue {
        self.prediction - self.context.label_mean()
    }

    pub fn residual(&self) -> RationalValue {
        self.prediction - self.outcome
    }
}

fn check_round(p: RationalValue, y: RationalValue) -> Result<()> {
    p.ensure_unit_interval()?;
    y.ensure_unit_interval()?;
    Ok(())
}

fn exact_to_f64(r: &Exact) -> f64 {
    ratio_i128_to_f64(r)
}

/// Per-(group, prediction value) bias accumulator.
///
/// Families up to `streaming_limit` members update every round; larger ones
/// keep the transcript and evaluate at report time, using transforms for the
/// Walsh and block-Hadamard subfamilies.
#[derive(Clone, Debug)]
pub struct BiasLedger {
    family: Arc<GroupFamily>,
    streaming: bool,
    entries: HashMap<(usize, RationalValue), ExactSum>,
    stored: Vec<PlayedRound>,
    rounds_seen: usize,
    total: ExactSum,
}

impl BiasLedger {
    pub const DEFAULT_STREAMING_LIMIT: usize = 64;

    pub fn new(family: Arc<GroupFamily>) -> Self {
        Self::with_streaming_limit(family, Self::DEFAULT_STREAMING_LIMIT)
    }

    pub fn with_streaming_limit(family: Arc<GroupFamily>, limit: usize) -> Self {
        let streaming = family.len() <= limit;
        BiasLedger {
            family,
            streaming,
            entries: HashMap::new(),
            stored: Vec::new(),
            rounds_seen: 0,
            total: ExactSum::new(),
        }
    }

    pub fn family(&self) -> &GroupFamily {
        &self.family
    }

    pub fn is_streaming(&self) -> bool {
        self.streaming
    }

    pub fn rounds_seen(&self) -> usize {
        self.rounds_seen
    }

    pub fn record_round(&mut self, context: Context, p: RationalValue, y: RationalValue) -> Result<()> {
        check_round(p, y)?;
        let residual = p - y;
        self.total.add(residual);
        self.rounds_seen += 1;
        if self.streaming {
            for (i, g) in self.family.members().iter().enumerate() {
                let w = g.eval(&context, p);
                if w != 0 {
                    self.entries.entry((i, p)).or_default().add_scaled(residual, w as i64);
                }
            }
        } else {
            self.stored.push(PlayedRound { context, prediction: p, outcome: y });
        }
        Ok(())
    }

    pub fn record_all(&mut self, rounds: &[PlayedRound]) -> Result<()> {
        rounds.iter().try_for_each(|r| self.record_round(r.context, r.prediction, r.outcome))
    }

    /// `Σ_t (p^t − y^t)`.
    pub fn total_bias(&self) -> Exact {
        self.total.to_ratio()
    }

    /// `B_T(v, g)` for member `group`; zero when `v` was never realized.
    pub fn bias(&self, group: usize, v: RationalValue) -> Exact {
        self.buckets(group)
            .into_iter()
            .find(|(u, _)| *u == v)
            .map_or_else(Exact::zero, |(_, b)| b)
    }

    /// Realized buckets of member `group` with nonzero weight, sorted by value.
    pub fn buckets(&self, group: usize) -> Vec<(RationalValue, Exact)> {
        if self.streaming {
            let mut out: Vec<_> = self
                .entries
                .iter()
                .filter(|((g, _), _)| *g == group)
                .map(|((_, v), s)| (*v, s.to_ratio()))
                .collect();
            out.sort_by_key(|(v, _)| *v);
            out
        } else {
            direct_buckets(&self.family.members()[group], &self.stored)
        }
    }

    pub fn report(&self) -> Result<CalibrationReport> {
        let errs = if self.streaming {
            let mut errs = vec![Exact::zero(); self.family.len()];
            for ((g, _), s) in &self.entries {
                errs[*g] += s.to_ratio().abs();
            }
            errs
        } else {
            post_hoc_errors(&self.family, &self.stored)?
        };
        Ok(CalibrationReport::from_exact(self.family.ids(), errs, self.rounds_seen))
    }
}

fn direct_buckets(g: &GroupFunction, rounds: &[PlayedRound]) -> Vec<(RationalValue, Exact)> {
    let mut map: BTreeMap<RationalValue, ExactSum> = BTreeMap::new();
    for r in rounds {
        let w = g.eval(&r.context, r.prediction);
        if w != 0 {
            map.entry(r.prediction).or_default().add_scaled(r.residual(), w as i64);
        }
    }
    map.into_iter().map(|(v, s)| (v, s.to_ratio())).collect()
}

/// Transcript-wide denominator for predictions, outcomes and label means.
fn transcript_denominator(rounds: &[PlayedRound]) -> Result<i128> {
    let values: Vec<RationalValue> = rounds
        .iter()
        .flat_map(|r| [r.prediction, r.outcome, r.context.label_mean()])
        .collect();
    common_denominator(values.iter())
}

fn post_hoc_errors(family: &GroupFamily, rounds: &[PlayedRound]) -> Result<Vec<Exact>> {
    let denom = transcript_denominator(rounds)?;
    let members = family.members();
    let mut errs: Vec<Option<Exact>> = vec![None; members.len()];

    if let Some(m) = family.walsh_m() {
        let (plus, minus) = walsh_half_numerators(rounds, m, denom)?;
        for (i, g) in members.iter().enumerate() {
            if let GroupFunction::WalshHalf { m: gm, ell, positive } = g {
                if *gm == m {
                    let num = if *positive { plus[*ell] } else { minus[*ell] };
                    errs[i] = Some(Exact::new(num, 2 * denom));
                }
            }
        }
    }

    if let Some(layout) = family.layout() {
        let mut plus = vec![0i128; layout.covered()];
        let mut minus = vec![0i128; layout.covered()];
        let l = layout.block_len();
        for_each_block_bucket(rounds, layout, denom, |a, _v, _count, residual, _| {
            let s = residual[0];
            for (j, w) in residual.iter().enumerate() {
                plus[(a - 1) * l + j] += (s + w).abs();
                minus[(a - 1) * l + j] += (s - w).abs();
            }
        })?;
        for (i, g) in members.iter().enumerate() {
            if let GroupFunction::BlockHadamardHalf { layout: gl, a, j, positive } = g {
                if *gl == layout {
                    let idx = (a - 1) * l + j;
                    let num = if *positive { plus[idx] } else { minus[idx] };
                    errs[i] = Some(Exact::new(num, 2 * denom));
                }
            }
        }
    }

    Ok(members
        .iter()
        .zip(errs)
        .map(|(g, e)| {
            e.unwrap_or_else(|| {
                direct_buckets(g, rounds)
                    .into_iter()
                    .fold(Exact::zero(), |acc, (_, b)| acc + b.abs())
            })
        })
        .collect())
}

/// Per-bucket Walsh transforms of the residual, indexed by grid position.
fn walsh_bucket_transforms(rounds: &[PlayedRound], m: usize, denom: i128) -> Result<Vec<Vec<i128>>> {
    let mut buckets: HashMap<RationalValue, Vec<i128>> = HashMap::new();
    for r in rounds {
        let s = r.context.mean().map_or(1, |x| grid_index(x, m)) - 1;
        buckets.entry(r.prediction).or_insert_with(|| vec![0; m])[s] += scaled_numer(r.residual(), denom);
    }
    buckets
        .into_values()
        .map(|mut a| {
            fwht_in_place(&mut a)?;
            Ok(a)
        })
        .collect()
}

/// `Σ_v |S_v ± W_v[ℓ]|` for every `ℓ`, as numerators over `2 denom`.
fn walsh_half_numerators(rounds: &[PlayedRound], m: usize, denom: i128) -> Result<(Vec<i128>, Vec<i128>)> {
    let mut plus = vec![0i128; m];
    let mut minus = vec![0i128; m];
    for a in walsh_bucket_transforms(rounds, m, denom)? {
        let s = a[0];
        for (l, w) in a.iter().enumerate() {
            plus[l] += (s + w).abs();
            minus[l] += (s - w).abs();
        }
    }
    Ok((plus, minus))
}

/// `Err(g^{Wal,+}_ℓ − g^{Wal,−}_ℓ) = Σ_v |Σ_t w_ℓ(x^t)(p^t − y^t)|` for `ℓ = 0..m`.
pub fn walsh_signed_errors(rounds: &[PlayedRound], m: usize) -> Result<Vec<Exact>> {
    if m < 2 || !m.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(m));
    }
    let denom = transcript_denominator(rounds)?;
    let mut total = vec![0i128; m];
    for a in walsh_bucket_transforms(rounds, m, denom)? {
        for (l, w) in a.iter().enumerate() {
            total[l] += w.abs();
        }
    }
    Ok(total.into_iter().map(|n| Exact::new(n, denom)).collect())
}

/// For every block `a` and realized bucket `v`, hand the transforms of the
/// masked residual `(p − y)` and drift `(p − x)` vectors (numerators over
/// `denom`) to `visit(a, v, count, residual, drift)`.
fn for_each_block_bucket<F>(rounds: &[PlayedRound], layout: BlockLayout, denom: i128, mut visit: F) -> Result<()>
where
    F: FnMut(usize, RationalValue, usize, &[i128], &[i128]),
{
    let l = layout.block_len();
    let mut per_block: Vec<BTreeMap<RationalValue, Vec<(usize, &PlayedRound)>>> =
        vec![BTreeMap::new(); layout.blocks()];
    for r in rounds {
        if let Some((a, s)) = r.context.time().and_then(|t| layout.locate(t)) {
            per_block[a - 1].entry(r.prediction).or_default().push((s, r));
        }
    }
    let mut residual = vec![0i128; l];
    let mut drift = vec![0i128; l];
    for (a0, buckets) in per_block.into_iter().enumerate() {
        for (v, items) in buckets {
            residual.iter_mut().for_each(|x| *x = 0);
            drift.iter_mut().for_each(|x| *x = 0);
            for (s, r) in &items {
                residual[*s] += scaled_numer(r.residual(), denom);
                drift[*s] += scaled_numer(r.drift(), denom);
            }
            fwht_in_place(&mut residual)?;
            fwht_in_place(&mut drift)?;
            visit(a0 + 1, v, items.len(), &residual, &drift);
        }
    }
    Ok(())
}

/// Err of each member and the maximizing group.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationReport {
    ids: Vec<String>,
    err_exact: Vec<Exact>,
    err: Vec<f64>,
    mcerr: f64,
    argmax: Option<usize>,
    rounds: usize,
}

impl CalibrationReport {
    pub fn from_exact(ids: Vec<String>, err_exact: Vec<Exact>, rounds: usize) -> Self {
        let err: Vec<f64> = err_exact.iter().map(exact_to_f64).collect();
        let mut argmax: Option<usize> = None;
        for i in 0..err_exact.len() {
            argmax = match argmax {
                None => Some(i),
                Some(b) if err_exact[i] > err_exact[b] || (err_exact[i] == err_exact[b] && ids[i] < ids[b]) => Some(i),
                keep => keep,
            };
        }
        let mcerr = argmax.map_or(0.0, |i| err[i]);
        CalibrationReport { ids, err_exact, err, mcerr, argmax, rounds }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn err(&self) -> &[f64] {
        &self.err
    }

    pub fn err_exact(&self) -> &[Exact] {
        &self.err_exact
    }

    pub fn err_of(&self, id: &str) -> Option<f64> {
        self.ids.iter().position(|s| s == id).map(|i| self.err[i])
    }

    pub fn mcerr(&self) -> f64 {
        self.mcerr
    }

    pub fn mcerr_exact(&self) -> Exact {
        self.argmax.map_or_else(Exact::zero, |i| self.err_exact[i])
    }

    pub fn argmax(&self) -> Option<&str> {
        self.argmax.map(|i| self.ids[i].as_str())
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// `(group_id, err)` rows in family order.
    pub fn rows(&self) -> impl Iterator<Item = (&str, f64)> {
        self.ids.iter().map(String::as_str).zip(self.err.iter().copied())
    }
}

/// Record a whole transcript and report.
pub fn report_for(family: Arc<GroupFamily>, rounds: &[PlayedRound]) -> Result<CalibrationReport> {
    let mut ledger = BiasLedger::new(family);
    ledger.record_all(rounds)?;
    ledger.report()
}

/// `Err_T(g) = Σ_v |B_T(v, g)|` for a single group, by direct evaluation.
pub fn group_error(g: &GroupFunction, rounds: &[PlayedRound]) -> Exact {
    direct_buckets(g, rounds).into_iter().fold(Exact::zero(), |acc, (_, b)| acc + b.abs())
}

/// Per-block statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockStats {
    /// `N_a = Σ_v √n_{a,v}`.
    pub n_a: f64,
    /// `E_a = Σ_{t ∈ J_a} δ_t²`.
    pub e_a: f64,
    /// Number of distinct predictions in the block.
    pub q_a: usize,
}

/// Drift and noise accumulated over the η-honest rounds of one context.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextStats {
    pub x: RationalValue,
    pub count: usize,
    /// `N_x = Σ_{t ∈ H_x} (x − y^t)`.
    pub noise: Exact,
    /// `R_x = Σ_{t ∈ H_x} (p^t − x)`.
    pub drift: Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviationStats {
    /// Rounds covered (`T'` with a layout, `T` otherwise).
    pub rounds: usize,
    /// `A = Σ_t |p^t − x^t|`.
    pub a: Exact,
    /// `S = Σ_t δ_t²`.
    pub s: Exact,
    /// `n_v` per realized prediction.
    pub counts: BTreeMap<RationalValue, usize>,
    pub blocks: Vec<BlockStats>,
    pub contexts: Vec<ContextStats>,
}

impl DeviationStats {
    pub fn a_f64(&self) -> f64 {
        exact_to_f64(&self.a)
    }

    pub fn s_f64(&self) -> f64 {
        exact_to_f64(&self.s)
    }

    /// `N = Σ_v √n_v`.
    pub fn n(&self) -> f64 {
        self.counts.values().map(|&c| (c as f64).sqrt()).sum()
    }

    pub fn sum_sq_counts(&self) -> u128 {
        self.counts.values().map(|&c| (c as u128) * (c as u128)).sum()
    }

    /// `(1/(16T')) Σ_v n_v² − T'/m − 1`.
    pub fn l1_quant_rhs(&self, m: usize) -> f64 {
        let t = self.rounds as f64;
        self.sum_sq_counts() as f64 / (16.0 * t) - t / m as f64 - 1.0
    }

    /// `T' / (4 √(A + T'/m + 1))`.
    pub fn n_from_a_rhs(&self, m: usize) -> f64 {
        let t = self.rounds as f64;
        t / (4.0 * (self.a_f64() + t / m as f64 + 1.0).sqrt())
    }

    pub fn sum_block_mass(&self) -> f64 {
        self.blocks.iter().map(|b| b.n_a).sum()
    }

    /// `(Σ_x |N_x|, Σ_x |R_x|)`.
    pub fn context_totals(&self) -> (f64, f64) {
        self.contexts.iter().fold((0.0, 0.0), |(n, r), c| {
            (n + exact_to_f64(&c.noise).abs(), r + exact_to_f64(&c.drift).abs())
        })
    }
}

/// Deviation statistics over the first `T'` rounds (or all rounds when no
/// layout is given); per-context sums only when `eta` is given.
pub fn deviation_stats(
    rounds: &[PlayedRound],
    layout: Option<BlockLayout>,
    eta: Option<RationalValue>,
) -> Result<DeviationStats> {
    let horizon = match layout {
        Some(l) => {
            if rounds.len() < l.covered() {
                return Err(Error::LengthMismatch { expected: l.covered(), got: rounds.len() });
            }
            l.covered()
        }
        None => rounds.len(),
    };
    let rounds = &rounds[..horizon];
    let mut a = ExactSum::new();
    let mut s = ExactSum::new();
    let mut counts: BTreeMap<RationalValue, usize> = BTreeMap::new();
    let mut per_context: BTreeMap<RationalValue, (usize, ExactSum, ExactSum)> = BTreeMap::new();
    for r in rounds {
        let d = r.drift();
        a.add(d.abs());
        s.add(d * d);
        *counts.entry(r.prediction).or_default() += 1;
        if let Some(eta) = eta {
            let x = r.context.label_mean();
            if d.abs() < eta {
                let e = per_context.entry(x).or_default();
                e.0 += 1;
                e.1.add(x - r.outcome);
                e.2.add(d);
            }
        }
    }
    let blocks = match layout {
        Some(l) => rounds
            .chunks(l.block_len())
            .map(|chunk| {
                let mut c: BTreeMap<RationalValue, usize> = BTreeMap::new();
                let mut e = ExactSum::new();
                for r in chunk {
                    *c.entry(r.prediction).or_default() += 1;
                    let d = r.drift();
                    e.add(d * d);
                }
                BlockStats {
                    n_a: c.values().map(|&k| (k as f64).sqrt()).sum(),
                    e_a: e.to_f64(),
                    q_a: c.len(),
                }
            })
            .collect(),
        None => Vec::new(),
    };
    let contexts = per_context
        .into_iter()
        .map(|(x, (count, noise, drift))| ContextStats { x, count, noise: noise.to_ratio(), drift: drift.to_ratio() })
        .collect();
    Ok(DeviationStats { rounds: horizon, a: a.to_ratio(), s: s.to_ratio(), counts, blocks, contexts })
}

/// Transforms of one bucket inside one block.
#[derive(Clone, Debug, PartialEq)]
pub struct BucketTransform {
    pub value: RationalValue,
    pub count: usize,
    /// `D_v^{(a,j)}` numerators over the decomposition denominator.
    pub bias: Vec<i128>,
    /// Signed noise numerators over the decomposition denominator.
    pub noise: Vec<i128>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockEntry {
    pub a: usize,
    /// `E_a` numerator over `denom²`.
    pub energy: i128,
    pub buckets: Vec<BucketTransform>,
}

/// Signed Hadamard bias and noise for every `(a, j, v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDecomposition {
    layout: BlockLayout,
    denom: i128,
    blocks: Vec<BlockEntry>,
}

impl BlockDecomposition {
    pub fn layout(&self) -> BlockLayout {
        self.layout
    }

    pub fn denom(&self) -> i128 {
        self.denom
    }

    pub fn blocks(&self) -> &[BlockEntry] {
        &self.blocks
    }

    /// `Err(h_{a,j}) = Σ_v |D + Nz|`, exactly.
    pub fn signed_error(&self, a: usize, j: usize) -> Exact {
        let sum: i128 = self.blocks[a - 1].buckets.iter().map(|b| (b.bias[j] + b.noise[j]).abs()).sum();
        Exact::new(sum, self.denom)
    }

    /// `E_a` as a real.
    pub fn energy(&self, a: usize) -> f64 {
        let d = self.denom as f64;
        self.blocks[a - 1].energy as f64 / (d * d)
    }

    /// `Σ_j Σ_v D²` for block `a`, as a real.
    pub fn bias_energy(&self, a: usize) -> f64 {
        let d = self.denom as f64;
        self.blocks[a - 1]
            .buckets
            .iter()
            .flat_map(|b| b.bias.iter())
            .map(|&x| {
                let f = x as f64 / d;
                f * f
            })
            .sum()
    }

    /// `(1/L) Σ_j Σ_v |D|`.
    pub fn mean_abs_bias(&self, a: usize) -> f64 {
        let d = self.denom as f64;
        let total: f64 = self.blocks[a - 1]
            .buckets
            .iter()
            .flat_map(|b| b.bias.iter())
            .map(|&x| (x as f64 / d).abs())
            .sum();
        total / self.layout.block_len() as f64
    }

    /// `Σ_v |Nz|` for `(a, j)`.
    pub fn noise_mass(&self, a: usize, j: usize) -> f64 {
        let d = self.denom as f64;
        self.blocks[a - 1].buckets.iter().map(|b| (b.noise[j] as f64 / d).abs()).sum()
    }

    /// Export rows `(block, j, bucket_value, D, Nz)`.
    pub fn rows(&self) -> impl Iterator<Item = (usize, usize, RationalValue, f64, f64)> + '_ {
        let d = self.denom as f64;
        self.blocks.iter().flat_map(move |blk| {
            blk.buckets.iter().flat_map(move |b| {
                (0..b.bias.len()).map(move |j| (blk.a, j, b.value, b.bias[j] as f64 / d, b.noise[j] as f64 / d))
            })
        })
    }
}

/// Split every signed Hadamard functional into bias (`p − x`) and noise
/// (`x − y`) parts, one transform per (block, bucket).
pub fn block_decompose(rounds: &[PlayedRound], layout: BlockLayout) -> Result<BlockDecomposition> {
    if rounds.len() < layout.covered() {
        return Err(Error::LengthMismatch { expected: layout.covered(), got: rounds.len() });
    }
    let covered = &rounds[..layout.covered()];
    for (t, r) in covered.iter().enumerate() {
        if r.context.time() != Some(t as u64 + 1) {
            return Err(Error::InvalidParameter(format!("round {} carries no matching time stamp", t + 1)));
        }
    }
    let denom = transcript_denominator(covered)?;
    let mut blocks: Vec<BlockEntry> = (1..=layout.blocks()).map(|a| BlockEntry { a, energy: 0, buckets: Vec::new() }).collect();
    for (a0, chunk) in covered.chunks(layout.block_len()).enumerate() {
        let mut e: i128 = 0;
        for r in chunk {
            let d = scaled_numer(r.drift(), denom);
            e = d
                .checked_mul(d)
                .and_then(|sq| e.checked_add(sq))
                .ok_or_else(|| Error::Overflow("block energy".into()))?;
        }
        blocks[a0].energy = e;
    }
    for_each_block_bucket(covered, layout, denom, |a, v, count, residual, drift| {
        let noise = residual.iter().zip(drift).map(|(r, d)| r - d).collect();
        blocks[a - 1].buckets.push(BucketTransform { value: v, count, bias: drift.to_vec(), noise });
    })?;
    Ok(BlockDecomposition { layout, denom, blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::{build_block_hadamard_family, build_walsh_family, threshold_family, GroupFamily};

    fn r(n: i64, d: i64) -> RationalValue {
        RationalValue::new(n, d).unwrap()
    }

    fn play(x: RationalValue, p: RationalValue, y: RationalValue) -> PlayedRound {
        PlayedRound { context: Context::Mean(x), prediction: p, outcome: y }
    }

    #[test]
    fn honest_round_bias() {
        let fam = Arc::new(GroupFamily::from_members(vec![GroupFunction::Constant]));
        let mut ledger = BiasLedger::new(fam);
        ledger.record_round(Context::Mean(r(1, 2)), r(1, 2), r(1, 1)).unwrap();
        assert_eq!(ledger.bias(0, r(1, 2)), Exact::new(-1, 2));
        ledger.record_round(Context::Mean(r(1, 2)), r(1, 2), r(0, 1)).unwrap();
        assert_eq!(ledger.bias(0, r(1, 2)), Exact::zero());
    }

    #[test]
    fn threshold_activity_for_honest_prediction() {
        let fam = Arc::new(threshold_family(r(1, 10)).unwrap());
        let mut ledger = BiasLedger::new(fam);
        ledger.record_round(Context::Mean(r(1, 2)), r(1, 2), r(1, 1)).unwrap();
        assert!(ledger.buckets(0).is_empty());
        assert!(ledger.buckets(1).is_empty());
        assert_eq!(ledger.buckets(2).len(), 1);
    }

    #[test]
    fn rejects_out_of_range() {
        let fam = Arc::new(GroupFamily::from_members(vec![GroupFunction::Constant]));
        let mut ledger = BiasLedger::new(fam);
        assert!(ledger.record_round(Context::Mean(r(1, 2)), r(3, 2), r(1, 1)).is_err());
        assert!(ledger.record_round(Context::Mean(r(1, 2)), r(1, 2), r(-1, 1)).is_err());
    }

    #[test]
    fn empty_report_is_zero() {
        let fam = Arc::new(threshold_family(r(1, 10)).unwrap());
        let rep = BiasLedger::new(fam).report().unwrap();
        assert_eq!(rep.mcerr(), 0.0);
        assert!(rep.err().iter().all(|&e| e == 0.0));
    }

    #[test]
    fn argmax_tie_break_is_lexicographic() {
        let ids = vec!["b".to_string(), "a".to_string(), "c".to_string()];
        let errs = vec![Exact::new(1, 1), Exact::new(1, 1), Exact::new(1, 2)];
        let rep = CalibrationReport::from_exact(ids, errs, 3);
        assert_eq!(rep.argmax(), Some("a"));
    }

    fn rademacher_like(t: usize, m: usize, seed: u64) -> Vec<PlayedRound> {
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            state >> 33
        };
        (1..=t)
            .map(|time| {
                let i = (next() % m as u64) as i64;
                let x = r(1, 4) + r(i, 2 * (m as i64 - 1));
                let y = if next() % 2 == 0 { x + r(1, 4) } else { x - r(1, 4) };
                let p = r((next() % 9) as i64, 8);
                PlayedRound { context: Context::MeanTime { mean: x, time: time as u64 }, prediction: p, outcome: y }
            })
            .collect()
    }

    #[test]
    fn streaming_and_post_hoc_agree() {
        let rounds = rademacher_like(200, 8, 11);
        let (_, block) = build_block_hadamard_family(200, 3).unwrap();
        let fam = Arc::new(
            build_walsh_family(8)
                .unwrap()
                .union(block)
                .unwrap()
                .union(threshold_family(r(1, 20)).unwrap())
                .unwrap(),
        );
        let mut streaming = BiasLedger::with_streaming_limit(fam.clone(), usize::MAX);
        let mut post = BiasLedger::with_streaming_limit(fam.clone(), 0);
        streaming.record_all(&rounds).unwrap();
        post.record_all(&rounds).unwrap();
        let a = streaming.report().unwrap();
        let b = post.report().unwrap();
        assert_eq!(a.err_exact(), b.err_exact());
        for (i, g) in fam.members().iter().enumerate() {
            assert_eq!(a.err_exact()[i], group_error(g, &rounds), "{}", g.id());
        }
        assert_eq!(streaming.buckets(5), post.buckets(5));
    }

    #[test]
    fn walsh_signed_errors_match_direct() {
        let rounds = rademacher_like(150, 8, 21);
        let errs = walsh_signed_errors(&rounds, 8).unwrap();
        for ell in 1..8 {
            let h = crate::groups::signed_diff(
                GroupFunction::WalshHalf { m: 8, ell, positive: true },
                GroupFunction::WalshHalf { m: 8, ell, positive: false },
            )
            .unwrap();
            assert_eq!(errs[ell], group_error(&h, &rounds));
        }
    }

    #[test]
    fn telescoping_on_constant_group() {
        let rounds = rademacher_like(100, 4, 3);
        let fam = Arc::new(build_walsh_family(4).unwrap());
        let mut ledger = BiasLedger::new(fam);
        ledger.record_all(&rounds).unwrap();
        let sum = ledger.buckets(0).into_iter().fold(Exact::zero(), |acc, (_, b)| acc + b);
        assert_eq!(sum, ledger.total_bias());
    }

    #[test]
    fn decomposition_identities() {
        let rounds = rademacher_like(128, 8, 5);
        let (layout, _) = build_block_hadamard_family(128, 4).unwrap();
        let dec = block_decompose(&rounds, layout).unwrap();
        for a in 1..=layout.blocks() {
            let lhs = dec.bias_energy(a);
            let rhs = layout.block_len() as f64 * dec.energy(a);
            assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1.0));
            for j in 0..layout.block_len() {
                let plus = GroupFunction::BlockHadamardHalf { layout, a, j, positive: true };
                let minus = GroupFunction::BlockHadamardHalf { layout, a, j, positive: false };
                let h = crate::groups::signed_diff(plus, minus).unwrap();
                assert_eq!(dec.signed_error(a, j), group_error(&h, &rounds));
            }
        }
    }

    #[test]
    fn honest_decomposition_has_no_bias() {
        let rounds: Vec<_> = rademacher_like(64, 4, 9)
            .into_iter()
            .map(|mut p| {
                p.prediction = p.context.label_mean();
                p
            })
            .collect();
        let (layout, _) = build_block_hadamard_family(64, 2).unwrap();
        let dec = block_decompose(&rounds, layout).unwrap();
        assert!(dec.blocks().iter().all(|b| b.buckets.iter().all(|t| t.bias.iter().all(|&d| d == 0))));
        for j in 0..layout.block_len() {
            assert!((exact_to_f64(&dec.signed_error(1, j)) - dec.noise_mass(1, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_bias_concentrates_on_zero_index() {
        let (layout, _) = build_block_hadamard_family(16, 2).unwrap();
        let rounds: Vec<_> = (1..=16u64)
            .map(|t| PlayedRound {
                context: Context::MeanTime { mean: r(1, 2), time: t },
                prediction: r(5, 8),
                outcome: r(1, 2),
            })
            .collect();
        let dec = block_decompose(&rounds, layout).unwrap();
        let d = dec.denom() as f64;
        let b = &dec.blocks()[0].buckets[0];
        assert_eq!(b.bias[0] as f64 / d, 8.0 * 0.125);
        assert!(b.bias[1..].iter().all(|&x| x == 0));
    }

    #[test]
    fn deviation_examples() {
        let honest: Vec<_> = (0..12).map(|i| play(r(1 + (i % 3), 4), r(1 + (i % 3), 4), r(i % 2, 1))).collect();
        let st = deviation_stats(&honest, None, None).unwrap();
        assert!(st.a.is_zero() && st.s.is_zero());
        assert!((st.n() - 3.0 * 2.0).abs() < 1e-12);
        let constant: Vec<_> = (0..16).map(|i| play(r(1 + (i % 3), 4), r(1, 2), r(i % 2, 1))).collect();
        let st = deviation_stats(&constant, None, None).unwrap();
        assert_eq!(st.counts.len(), 1);
        assert!((st.n() - 4.0).abs() < 1e-12);
        assert!(st.s <= st.a);
    }

    #[test]
    fn context_sums_on_honest_rounds() {
        let eta = r(1, 16);
        let rounds = vec![
            play(r(1, 4), r(1, 4) + r(1, 32), r(1, 1)),
            play(r(1, 4), r(1, 4), r(0, 1)),
            play(r(1, 2), r(3, 4), r(0, 1)),
        ];
        let st = deviation_stats(&rounds, None, Some(eta)).unwrap();
        assert_eq!(st.contexts.len(), 1);
        assert_eq!(st.contexts[0].count, 2);
        assert_eq!(st.contexts[0].noise, Exact::new(-1, 2));
        assert_eq!(st.contexts[0].drift, Exact::new(1, 32));
    }
}
