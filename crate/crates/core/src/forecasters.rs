//! Forecasters, context-blind oracles, proper mixtures and pattern routing.
//!
//! A forecaster proposes a finitely supported distribution from the past
//! transcript and the current context; the simulator then draws the
//! prediction (the outcome is already fixed by the oblivious environment) and
//! reports it back through `observe`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{One, Zero};
use rand::Rng;

use crate::calibration::{group_error, Exact, PlayedRound};
use crate::environments::{Context, Round, Trajectory};
use crate::error::{Error, Result};
use crate::groups::{GroupFamily, GroupFunction};
use crate::rational::RationalValue;
use crate::rng::SimRng;

pub type Prob = Ratio<i64>;

/// Finitely supported distribution on `[0, 1]` with exact weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictionDistribution {
    support: Vec<(RationalValue, Prob)>,
}

impl PredictionDistribution {
    pub fn point(v: RationalValue) -> Self {
        PredictionDistribution { support: vec![(v, Prob::one())] }
    }

    /// Merges repeated values and drops zero weights.
    pub fn new(pairs: Vec<(RationalValue, Prob)>) -> Result<Self> {
        let mut merged: BTreeMap<RationalValue, Prob> = BTreeMap::new();
        for (v, w) in pairs {
            v.ensure_unit_interval()?;
            if w < Prob::zero() {
                return Err(Error::InvalidWeights(format!("negative probability {w} at {v}")));
            }
            *merged.entry(v).or_insert_with(Prob::zero) += w;
        }
        let total: Prob = merged.values().copied().sum();
        if total != Prob::one() {
            return Err(Error::InvalidWeights(format!("probabilities sum to {total}")));
        }
        Ok(PredictionDistribution { support: merged.into_iter().filter(|(_, w)| !w.is_zero()).collect() })
    }

    /// Uniform on `{0, 1/q, …, 1}`.
    pub fn uniform_grid(q: i64) -> Result<Self> {
        if q < 1 {
            return Err(Error::InvalidParameter(format!("grid denominator Q = {q} must be >= 1")));
        }
        let w = Prob::new(1, q + 1);
        Ok(PredictionDistribution {
            support: (0..=q).map(|i| (RationalValue::new(i, q).expect("q >= 1"), w)).collect(),
        })
    }

    /// `Σ_i α_i Q_i`.
    pub fn mixture(weights: &[Prob], parts: &[PredictionDistribution]) -> Result<Self> {
        if weights.len() != parts.len() {
            return Err(Error::LengthMismatch { expected: parts.len(), got: weights.len() });
        }
        check_simplex(weights)?;
        let pairs = weights
            .iter()
            .zip(parts)
            .flat_map(|(&a, q)| q.support.iter().map(move |&(v, w)| (v, a * w)))
            .collect();
        PredictionDistribution::new(pairs)
    }

    pub fn support(&self) -> &[(RationalValue, Prob)] {
        &self.support
    }

    pub fn is_point(&self) -> bool {
        self.support.len() == 1
    }

    /// Probability of the values satisfying `pred`.
    pub fn mass_where<F: Fn(RationalValue) -> bool>(&self, pred: F) -> Prob {
        self.support.iter().filter(|(v, _)| pred(*v)).map(|(_, w)| *w).sum()
    }

    /// Exact draw: one uniform integer below the common denominator.
    /// Point masses consume no randomness.
    pub fn sample(&self, rng: &mut SimRng) -> RationalValue {
        if self.is_point() {
            return self.support[0].0;
        }
        let denom = self.support.iter().fold(1i64, |d, (_, w)| d.lcm(w.denom()));
        let mut u = rng.random_range(0..denom);
        for &(v, w) in &self.support {
            let k = w.numer() * (denom / w.denom());
            if u < k {
                return v;
            }
            u -= k;
        }
        self.support.last().expect("non-empty").0
    }
}

pub fn check_simplex(weights: &[Prob]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidWeights("empty weight vector".into()));
    }
    if let Some(w) = weights.iter().find(|w| **w < Prob::zero()) {
        return Err(Error::InvalidWeights(format!("negative weight {w}")));
    }
    let total: Prob = weights.iter().copied().sum();
    if total != Prob::one() {
        return Err(Error::InvalidWeights(format!("weights sum to {total}")));
    }
    Ok(())
}

/// Read-only view of the rounds before the current one.
#[derive(Clone, Copy, Debug)]
pub struct History<'a> {
    rounds: &'a [PlayedRound],
    blind: bool,
}

const DUMMY_CONTEXT: Context = Context::Mean(RationalValue::HALF);

impl<'a> History<'a> {
    pub fn new(rounds: &'a [PlayedRound]) -> Self {
        History { rounds, blind: false }
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Round `i` (0-based); the context is masked in a blind view.
    pub fn get(&self, i: usize) -> Option<PlayedRound> {
        self.rounds.get(i).map(|r| if self.blind { PlayedRound { context: DUMMY_CONTEXT, ..*r } } else { *r })
    }

    pub fn outcomes(&self) -> impl Iterator<Item = RationalValue> + 'a {
        self.rounds.iter().map(|r| r.outcome)
    }

    fn blinded(self) -> Self {
        History { blind: true, ..self }
    }
}

pub trait Forecaster: Send {
    fn id(&self) -> String;

    /// Point-mass proposals only.
    fn deterministic(&self) -> bool;

    fn propose(&mut self, history: &History<'_>, context: &Context) -> Result<PredictionDistribution>;

    fn observe(&mut self, context: &Context, prediction: RationalValue, outcome: RationalValue);
}

/// Builds a fresh forecaster per replicate or per copy.
pub type ForecasterFactory = Arc<dyn Fn() -> Box<dyn Forecaster> + Send + Sync>;

#[derive(Clone, Debug)]
struct Honest;

impl Forecaster for Honest {
    fn id(&self) -> String {
        "honest".into()
    }
    fn deterministic(&self) -> bool {
        true
    }
    fn propose(&mut self, _: &History<'_>, ctx: &Context) -> Result<PredictionDistribution> {
        Ok(PredictionDistribution::point(ctx.label_mean()))
    }
    fn observe(&mut self, _: &Context, _: RationalValue, _: RationalValue) {}
}

#[derive(Clone, Debug)]
struct RoundedHonest {
    q: i64,
}

impl Forecaster for RoundedHonest {
    fn id(&self) -> String {
        format!("rounded_honest:{}", self.q)
    }
    fn deterministic(&self) -> bool {
        true
    }
    fn propose(&mut self, _: &History<'_>, ctx: &Context) -> Result<PredictionDistribution> {
        Ok(PredictionDistribution::point(ctx.label_mean().round_to_grid(self.q)))
    }
    fn observe(&mut self, _: &Context, _: RationalValue, _: RationalValue) {}
}

#[derive(Clone, Debug)]
struct Biased {
    offset: RationalValue,
}

impl Forecaster for Biased {
    fn id(&self) -> String {
        format!("biased:{}", self.offset)
    }
    fn deterministic(&self) -> bool {
        true
    }
    fn propose(&mut self, _: &History<'_>, ctx: &Context) -> Result<PredictionDistribution> {
        Ok(PredictionDistribution::point((ctx.label_mean() + self.offset).clamp_unit()))
    }
    fn observe(&mut self, _: &Context, _: RationalValue, _: RationalValue) {}
}

#[derive(Clone, Debug)]
struct Constant {
    c: RationalValue,
}

impl Forecaster for Constant {
    fn id(&self) -> String {
        format!("constant:{}", self.c)
    }
    fn deterministic(&self) -> bool {
        true
    }
    fn propose(&mut self, _: &History<'_>, _: &Context) -> Result<PredictionDistribution> {
        Ok(PredictionDistribution::point(self.c))
    }
    fn observe(&mut self, _: &Context, _: RationalValue, _: RationalValue) {}
}

/// Uniform over the `2k+1` multiples of `1/q` nearest to `x` (clamped).
#[derive(Clone, Debug)]
struct NoisyHonest {
    q: i64,
    spread: i64,
}

impl Forecaster for NoisyHonest {
    fn id(&self) -> String {
        format!("noisy_honest:{}:{}", self.q, self.spread)
    }
    fn deterministic(&self) -> bool {
        self.spread == 0
    }
    fn propose(&mut self, _: &History<'_>, ctx: &Context) -> Result<PredictionDistribution> {
        let center = ctx.label_mean().round_to_grid(self.q);
        let w = Prob::new(1, 2 * self.spread + 1);
        let step = RationalValue::new(1, self.q)?;
        PredictionDistribution::new(
            (-self.spread..=self.spread)
                .map(|i| ((center + step * RationalValue::from_integer(i)).clamp_unit(), w))
                .collect(),
        )
    }
    fn observe(&mut self, _: &Context, _: RationalValue, _: RationalValue) {}
}

/// Running mean of observed outcomes, rounded to `1/q`; `1/2` before any data.
#[derive(Clone, Debug)]
struct EmpiricalMeanBucket {
    q: i64,
    sum: Ratio<i128>,
    count: i128,
}

impl Forecaster for EmpiricalMeanBucket {
    fn id(&self) -> String {
        format!("empirical_mean_bucket:{}", self.q)
    }
    fn deterministic(&self) -> bool {
        true
    }
    fn propose(&mut self, _: &History<'_>, _: &Context) -> Result<PredictionDistribution> {
        if self.count == 0 {
            return Ok(PredictionDistribution::point(RationalValue::HALF));
        }
        // floor(mean * q + 1/2) without leaving exact arithmetic
        let mean = self.sum / Ratio::from_integer(self.count);
        let scaled = mean * Ratio::from_integer(self.q as i128) + Ratio::new(1, 2);
        let k = scaled.floor().to_integer() as i64;
        Ok(PredictionDistribution::point(RationalValue::new(k, self.q)?))
    }
    fn observe(&mut self, _: &Context, _: RationalValue, y: RationalValue) {
        self.sum += Ratio::new(y.numer() as i128, y.denom() as i128);
        self.count += 1;
    }
}

#[derive(Clone, Debug)]
struct UniformRandom {
    dist: PredictionDistribution,
    q: i64,
}

impl Forecaster for UniformRandom {
    fn id(&self) -> String {
        format!("uniform_random:{}", self.q)
    }
    fn deterministic(&self) -> bool {
        false
    }
    fn propose(&mut self, _: &History<'_>, _: &Context) -> Result<PredictionDistribution> {
        Ok(self.dist.clone())
    }
    fn observe(&mut self, _: &Context, _: RationalValue, _: RationalValue) {}
}

fn check_q(q: i64) -> Result<()> {
    if q < 1 {
        return Err(Error::InvalidParameter(format!("rounding denominator Q = {q} must be >= 1")));
    }
    Ok(())
}

pub fn honest() -> Box<dyn Forecaster> {
    Box::new(Honest)
}

pub fn rounded_honest(q: i64) -> Result<Box<dyn Forecaster>> {
    check_q(q)?;
    Ok(Box::new(RoundedHonest { q }))
}

/// Honest plus a fixed offset, clamped to `[0, 1]`.
pub fn biased(offset: RationalValue) -> Box<dyn Forecaster> {
    Box::new(Biased { offset })
}

pub fn constant(c: RationalValue) -> Result<Box<dyn Forecaster>> {
    Ok(Box::new(Constant { c: c.ensure_unit_interval()? }))
}

pub fn noisy_honest(q: i64, spread: i64) -> Result<Box<dyn Forecaster>> {
    check_q(q)?;
    if spread < 0 {
        return Err(Error::InvalidParameter("spread must be nonnegative".into()));
    }
    Ok(Box::new(NoisyHonest { q, spread }))
}

pub fn empirical_mean_bucket(q: i64) -> Result<Box<dyn Forecaster>> {
    check_q(q)?;
    Ok(Box::new(EmpiricalMeanBucket { q, sum: Ratio::zero(), count: 0 }))
}

pub fn uniform_random(q: i64) -> Result<Box<dyn Forecaster>> {
    Ok(Box::new(UniformRandom { dist: PredictionDistribution::uniform_grid(q)?, q }))
}

/// A forecaster that only ever sees a fixed dummy context.
pub struct MarginalOracle {
    inner: Box<dyn Forecaster>,
}

pub fn context_blind(oracle: Box<dyn Forecaster>) -> MarginalOracle {
    MarginalOracle { inner: oracle }
}

impl MarginalOracle {
    pub fn inner(&self) -> &dyn Forecaster {
        self.inner.as_ref()
    }
}

impl Forecaster for MarginalOracle {
    fn id(&self) -> String {
        format!("context_blind:{}", self.inner.id())
    }
    fn deterministic(&self) -> bool {
        self.inner.deterministic()
    }
    fn propose(&mut self, history: &History<'_>, _: &Context) -> Result<PredictionDistribution> {
        self.inner.propose(&history.blinded(), &DUMMY_CONTEXT)
    }
    fn observe(&mut self, _: &Context, p: RationalValue, y: RationalValue) {
        self.inner.observe(&DUMMY_CONTEXT, p, y);
    }
}

/// Maps the current context and history to mixture weights over `m` copies.
pub type WeightFn = Arc<dyn Fn(&Context, &History<'_>, usize) -> Vec<Prob> + Send + Sync>;

#[derive(Clone)]
pub enum WeightRule {
    Uniform,
    /// All weight on copy 0.
    First,
    /// All weight on copy `key(x) mod m`, with `key` the bit value or the
    /// numerator of the mean.
    OneHotByContext,
    Custom(WeightFn),
}

impl WeightRule {
    pub fn name(&self) -> &'static str {
        match self {
            WeightRule::Uniform => "uniform",
            WeightRule::First => "first",
            WeightRule::OneHotByContext => "one_hot",
            WeightRule::Custom(_) => "custom",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(WeightRule::Uniform),
            "first" => Ok(WeightRule::First),
            "one_hot" => Ok(WeightRule::OneHotByContext),
            other => Err(Error::UnknownId(other.to_string())),
        }
    }

    fn weights(&self, ctx: &Context, history: &History<'_>, m: usize) -> Vec<Prob> {
        let one_hot = |i: usize| (0..m).map(|j| if j == i { Prob::one() } else { Prob::zero() }).collect();
        match self {
            WeightRule::Uniform => vec![Prob::new(1, m as i64); m],
            WeightRule::First => one_hot(0),
            WeightRule::OneHotByContext => {
                let key = match ctx {
                    Context::Bits(b) => b.val() as usize,
                    other => other.label_mean().numer().unsigned_abs() as usize,
                };
                one_hot(key % m)
            }
            WeightRule::Custom(f) => f(ctx, history, m),
        }
    }
}

impl fmt::Debug for WeightRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which copies see `(p, y)` after each round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UpdatePolicy {
    /// Only the copy with the largest weight (lowest index on ties).
    #[default]
    LargestWeight,
    All,
    None,
}

impl UpdatePolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "largest_weight" => Ok(UpdatePolicy::LargestWeight),
            "all" => Ok(UpdatePolicy::All),
            "none" => Ok(UpdatePolicy::None),
            other => Err(Error::UnknownId(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            UpdatePolicy::LargestWeight => "largest_weight",
            UpdatePolicy::All => "all",
            UpdatePolicy::None => "none",
        }
    }
}

/// Convex mixture of `m` context-blind copies.
pub struct ProperReduction {
    copies: Vec<MarginalOracle>,
    rule: WeightRule,
    policy: UpdatePolicy,
    last_weights: Vec<Prob>,
}

pub fn proper_reduction(
    factory: &ForecasterFactory,
    m: usize,
    rule: WeightRule,
    policy: UpdatePolicy,
) -> Result<ProperReduction> {
    if m == 0 {
        return Err(Error::InvalidParameter("a proper reduction needs at least one copy".into()));
    }
    Ok(ProperReduction {
        copies: (0..m).map(|_| context_blind(factory())).collect(),
        rule,
        policy,
        last_weights: Vec::new(),
    })
}

impl ProperReduction {
    pub fn copies(&self) -> usize {
        self.copies.len()
    }

    pub fn last_weights(&self) -> &[Prob] {
        &self.last_weights
    }
}

impl Forecaster for ProperReduction {
    fn id(&self) -> String {
        format!(
            "proper:{}:{}:{}:{}",
            self.copies.len(),
            self.rule.name(),
            self.policy.name(),
            self.copies[0].inner().id()
        )
    }

    fn deterministic(&self) -> bool {
        false
    }

    fn propose(&mut self, history: &History<'_>, ctx: &Context) -> Result<PredictionDistribution> {
        let m = self.copies.len();
        let weights = self.rule.weights(ctx, history, m);
        if weights.len() != m {
            return Err(Error::InvalidWeights(format!("expected {m} weights, got {}", weights.len())));
        }
        check_simplex(&weights)?;
        let parts = self
            .copies
            .iter_mut()
            .map(|c| c.propose(history, ctx))
            .collect::<Result<Vec<_>>>()?;
        let mix = PredictionDistribution::mixture(&weights, &parts)?;
        self.last_weights = weights;
        Ok(mix)
    }

    fn observe(&mut self, ctx: &Context, p: RationalValue, y: RationalValue) {
        match self.policy {
            UpdatePolicy::None => {}
            UpdatePolicy::All => self.copies.iter_mut().for_each(|c| c.observe(ctx, p, y)),
            UpdatePolicy::LargestWeight => {
                let best = self
                    .last_weights
                    .iter()
                    .enumerate()
                    .fold(None::<(usize, Prob)>, |acc, (i, &w)| match acc {
                        Some((_, bw)) if bw >= w => acc,
                        _ => Some((i, w)),
                    });
                if let Some((i, _)) = best {
                    self.copies[i].observe(ctx, p, y);
                }
            }
        }
    }
}

/// One copy per realized membership pattern.
struct Cell {
    oracle: Box<dyn Forecaster>,
    transcript: Vec<PlayedRound>,
}

pub struct PatternRouter {
    factory: ForecasterFactory,
    family: Arc<GroupFamily>,
    cells: BTreeMap<u64, Cell>,
    current: Option<u64>,
}

/// Per-cell summary: pattern bits (group `j` ↦ bit `j`), length and error.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub pattern: u64,
    pub rounds: usize,
    pub err: Exact,
}

impl CellSummary {
    /// Pattern as a `0/1` string, group 0 first.
    pub fn pattern_string(&self, k: usize) -> String {
        (0..k).map(|j| if self.pattern >> j & 1 == 1 { '1' } else { '0' }).collect()
    }
}

pub fn pattern_router(factory: ForecasterFactory, family: Arc<GroupFamily>) -> Result<PatternRouter> {
    if let Some(g) = family.members().iter().find(|g| !(g.is_binary() && g.is_prediction_independent())) {
        return Err(Error::PredictionDependentGroup(g.id()));
    }
    if family.len() > 64 {
        return Err(Error::InvalidParameter(format!("router supports at most 64 groups, got {}", family.len())));
    }
    Ok(PatternRouter { factory, family, cells: BTreeMap::new(), current: None })
}

impl PatternRouter {
    pub fn pattern(&self, ctx: &Context) -> u64 {
        self.family
            .members()
            .iter()
            .enumerate()
            .fold(0u64, |z, (j, g)| z | ((g.eval(ctx, RationalValue::HALF) as u64) << j))
    }

    pub fn copies_instantiated(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_transcripts(&self) -> impl Iterator<Item = (u64, &[PlayedRound])> {
        self.cells.iter().map(|(z, c)| (*z, c.transcript.as_slice()))
    }

    /// Cell error is the marginal calibration error of the copy's own transcript.
    pub fn cell_summaries(&self) -> Vec<CellSummary> {
        self.cells
            .iter()
            .map(|(z, c)| CellSummary {
                pattern: *z,
                rounds: c.transcript.len(),
                err: group_error(&GroupFunction::Constant, &c.transcript),
            })
            .collect()
    }
}

impl Forecaster for PatternRouter {
    fn id(&self) -> String {
        format!("router:{}", (self.factory)().id())
    }

    fn deterministic(&self) -> bool {
        (self.factory)().deterministic()
    }

    fn propose(&mut self, _: &History<'_>, ctx: &Context) -> Result<PredictionDistribution> {
        let z = self.pattern(ctx);
        let factory = &self.factory;
        let cell = self.cells.entry(z).or_insert_with(|| Cell { oracle: factory(), transcript: Vec::new() });
        self.current = Some(z);
        cell.oracle.propose(&History::new(&cell.transcript), ctx)
    }

    fn observe(&mut self, ctx: &Context, p: RationalValue, y: RationalValue) {
        let z = self.current.take().unwrap_or_else(|| self.pattern(ctx));
        let factory = &self.factory;
        let cell = self.cells.entry(z).or_insert_with(|| Cell { oracle: factory(), transcript: Vec::new() });
        cell.oracle.observe(ctx, p, y);
        cell.transcript.push(PlayedRound { context: *ctx, prediction: p, outcome: y });
    }
}

/// Forecaster selection by id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ForecasterSpec {
    Honest,
    RoundedHonest { q: i64 },
    Biased { offset: RationalValue },
    /// `x + 2η`, resolved against the experiment's threshold width.
    Overshoot,
    Constant { c: RationalValue },
    NoisyHonest { q: i64, spread: i64 },
    EmpiricalMeanBucket { q: i64 },
    UniformRandom { q: i64 },
    ContextBlind(Box<ForecasterSpec>),
}

impl ForecasterSpec {
    /// Parse `name[:arg[:arg]]`, e.g. `rounded_honest:16` or `context_blind:uniform_random:8`.
    pub fn parse(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownId(s.to_string());
        let (name, rest) = match s.split_once(':') {
            Some((n, r)) => (n.trim(), Some(r.trim())),
            None => (s.trim(), None),
        };
        let int = |r: Option<&str>, default: i64| -> Result<i64> {
            match r {
                None => Ok(default),
                Some(t) => t.parse().map_err(|_| unknown()),
            }
        };
        let rat = |r: Option<&str>| -> Result<RationalValue> { r.ok_or_else(unknown)?.parse() };
        Ok(match name {
            "honest" if rest.is_none() => ForecasterSpec::Honest,
            "rounded_honest" => ForecasterSpec::RoundedHonest { q: int(rest, 16)? },
            "biased" => ForecasterSpec::Biased { offset: rat(rest)? },
            "overshoot" if rest.is_none() => ForecasterSpec::Overshoot,
            "constant" => ForecasterSpec::Constant { c: rest.map_or(Ok(RationalValue::HALF), |r| r.parse())? },
            "noisy_honest" => {
                let (q, k) = match rest.and_then(|r| r.split_once(':')) {
                    Some((q, k)) => (int(Some(q), 16)?, int(Some(k), 1)?),
                    None => (int(rest, 16)?, 1),
                };
                ForecasterSpec::NoisyHonest { q, spread: k }
            }
            "empirical_mean_bucket" => ForecasterSpec::EmpiricalMeanBucket { q: int(rest, 16)? },
            "uniform_random" => ForecasterSpec::UniformRandom { q: int(rest, 8)? },
            "context_blind" => ForecasterSpec::ContextBlind(Box::new(ForecasterSpec::parse(rest.ok_or_else(unknown)?)?)),
            _ => return Err(unknown()),
        })
    }

    /// Replace `Overshoot` by the concrete offset `2η`.
    pub fn resolve(&self, eta: Option<RationalValue>) -> Result<ForecasterSpec> {
        Ok(match self {
            ForecasterSpec::Overshoot => {
                let eta = eta.ok_or_else(|| Error::InvalidParameter("overshoot needs a threshold width".into()))?;
                ForecasterSpec::Biased { offset: eta + eta }
            }
            ForecasterSpec::ContextBlind(inner) => ForecasterSpec::ContextBlind(Box::new(inner.resolve(eta)?)),
            other => other.clone(),
        })
    }

    pub fn build(&self) -> Result<Box<dyn Forecaster>> {
        match self {
            ForecasterSpec::Honest => Ok(honest()),
            ForecasterSpec::RoundedHonest { q } => rounded_honest(*q),
            ForecasterSpec::Biased { offset } => Ok(biased(*offset)),
            ForecasterSpec::Overshoot => Err(Error::InvalidParameter("overshoot must be resolved first".into())),
            ForecasterSpec::Constant { c } => constant(*c),
            ForecasterSpec::NoisyHonest { q, spread } => noisy_honest(*q, *spread),
            ForecasterSpec::EmpiricalMeanBucket { q } => empirical_mean_bucket(*q),
            ForecasterSpec::UniformRandom { q } => uniform_random(*q),
            ForecasterSpec::ContextBlind(inner) => Ok(Box::new(context_blind(inner.build()?))),
        }
    }

    /// A factory; validated once here so the closure cannot fail.
    pub fn factory(&self) -> Result<ForecasterFactory> {
        self.build()?;
        let spec = self.clone();
        Ok(Arc::new(move || spec.build().expect("validated at factory construction")))
    }
}

/// Play a forecaster against a fixed trajectory.
pub fn play(traj: &Trajectory, forecaster: &mut dyn Forecaster, rng: &mut SimRng) -> Result<Vec<PlayedRound>> {
    play_with(traj, forecaster, rng, |_, _, _| {})
}

/// As [`play`], calling `inspect(t, context, distribution)` before each draw.
pub fn play_with<F>(
    traj: &Trajectory,
    forecaster: &mut dyn Forecaster,
    rng: &mut SimRng,
    inspect: F,
) -> Result<Vec<PlayedRound>>
where
    F: FnMut(usize, &Context, &PredictionDistribution),
{
    play_rounds(traj.rounds(), forecaster, rng, inspect)
}

/// Play against an arbitrary sequence of rounds (e.g. a filtered trajectory).
pub fn play_rounds<F>(
    rounds: &[Round],
    forecaster: &mut dyn Forecaster,
    rng: &mut SimRng,
    mut inspect: F,
) -> Result<Vec<PlayedRound>>
where
    F: FnMut(usize, &Context, &PredictionDistribution),
{
    let mut played: Vec<PlayedRound> = Vec::with_capacity(rounds.len());
    for (t, round) in rounds.iter().enumerate() {
        let dist = forecaster.propose(&History::new(&played), &round.context)?;
        inspect(t, &round.context, &dist);
        let p = dist.sample(rng);
        forecaster.observe(&round.context, p, round.outcome);
        played.push(PlayedRound { context: round.context, prediction: p, outcome: round.outcome });
    }
    Ok(played)
}
