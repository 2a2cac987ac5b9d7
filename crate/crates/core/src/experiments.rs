//! Scaling studies and bound checks.
//!
//! Every `(T, replicate)` cell derives its own seeds, runs independently and
//! is folded back in replicate order, so results are identical under either
//! execution mode.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use num_rational::Ratio;
use num_traits::{Signed, Zero};

use crate::calibration::{
    block_decompose, deviation_stats, group_error, report_for, walsh_signed_errors, CalibrationReport, Exact,
    PlayedRound,
};
use crate::environments::{Context, EnvKind, EnvSpec, Round};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::forecasters::{
    pattern_router, play, play_rounds, play_with, proper_reduction, ForecasterSpec, UpdatePolicy, WeightRule,
};
use crate::groups::{
    asymptotic_block_count, build_bit_family, build_block_hadamard_family, build_walsh_family,
    context_interval_family, default_block_count, default_eta, threshold_family_checked, BlockLayout, GroupFamily,
    GroupFunction, Threshold,
};
use crate::rational::{ExactSum, RationalValue};
use crate::rng::{replicate_seed, rng_from_seed, Stream};
use crate::stats::{summarize, Summary};

/// Largest horizon accepted by any experiment.
pub const MAX_HORIZON: usize = 1 << 20;
/// Largest replicate count accepted by any experiment.
pub const MAX_REPLICATES: usize = 10_000;
/// Largest block length for block-family evaluation.
pub const MAX_BLOCK_LEN: usize = 1 << 14;

/// Accepted exponent range for the honest forecaster on the Bernoulli instance.
pub const HONEST_EXPONENT_WINDOW: (f64, f64) = (0.60, 0.78);
/// Accepted exponent range for `Σ_x |N_x|` under the honest forecaster.
pub const CONTEXT_NOISE_WINDOW: (f64, f64) = (0.60, 0.72);
/// Fraction of `(η/2) E[B_T]` that the overshooting forecaster must reach.
pub const BIG_LIES_FRACTION: f64 = 0.95;
/// Lower floor for `E[Σ_v |Nz|] · log2(L+1) / E[N_a]` over all `(a, j)`.
pub const NOISE_FLOOR: f64 = 0.5;

/// Diagnostic names recorded per replicate.
pub mod diag {
    pub const SUM_ABS_NOISE_X: &str = "sum_abs_noise_x";
    pub const SUM_ABS_DRIFT_X: &str = "sum_abs_drift_x";
    pub const BIG_LIES: &str = "big_lies";
    pub const A: &str = "A";
    pub const N: &str = "N";
    pub const S: &str = "S";
    pub const SQ_LOSS: &str = "sq_loss";
}

/// `log` fit of `value ~ c T^slope`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    /// Regression standard error of the slope; `NaN` with only two points.
    pub stderr: f64,
    pub ci95: (f64, f64),
}

/// Two-sided 97.5% Student quantiles for 1..=30 degrees of freedom.
const T975: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160, 2.145, 2.131, 2.120,
    2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
];

/// Ordinary least squares on `(ln T, ln value)`.
pub fn fit_exponent(points: &[(f64, f64)]) -> Result<ExponentFit> {
    if points.len() < 2 {
        return Err(Error::InvalidParameter("an exponent fit needs at least two points".into()));
    }
    if let Some(p) = points.iter().find(|(t, v)| *t <= 0.0 || *v <= 0.0 || !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("nonpositive point ({}, {}) in exponent fit", p.0, p.1)));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("exponent fit needs distinct horizons".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let df = points.len() - 2;
    let (stderr, ci95) = if df == 0 {
        (f64::NAN, (f64::NAN, f64::NAN))
    } else {
        let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        let se = (sse / df as f64 / sxx).sqrt();
        let q = T975.get(df - 1).copied().unwrap_or(1.96);
        (se, (slope - q * se, slope + q * se))
    };
    Ok(ExponentFit { slope, intercept, stderr, ci95 })
}

/// How the block count `K` is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BlockRule {
    /// `max{2, ⌈log2(T+1)⌉}`.
    #[default]
    Default,
    /// `⌈log2(T+1)^10⌉`; rejected whenever it leaves blocks shorter than 2.
    Asymptotic,
    Fixed(usize),
}

impl BlockRule {
    pub fn count(&self, horizon: usize) -> usize {
        match *self {
            BlockRule::Default => default_block_count(horizon),
            BlockRule::Asymptotic => asymptotic_block_count(horizon),
            BlockRule::Fixed(k) => k,
        }
    }
}

/// Which group family an experiment uses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GroupsSpec {
    /// `{g_all}`.
    All,
    /// `{g1, g2, g3}` at the default threshold width.
    PredDep,
    Walsh,
    Block,
    /// Constant, Walsh and block-Hadamard groups together.
    Full,
    Bits,
    /// Disjoint context intervals between the given cut points.
    Intervals(Vec<RationalValue>),
}

impl GroupsSpec {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "all" => GroupsSpec::All,
            "pred_dep" => GroupsSpec::PredDep,
            "walsh" => GroupsSpec::Walsh,
            "block" => GroupsSpec::Block,
            "full" => GroupsSpec::Full,
            "bits" => GroupsSpec::Bits,
            other => match other.strip_prefix("intervals:") {
                Some(cuts) => GroupsSpec::Intervals(
                    cuts.split(',').map(|c| c.trim().parse()).collect::<Result<Vec<RationalValue>>>()?,
                ),
                None => return Err(Error::UnknownId(other.to_string())),
            },
        })
    }

    pub fn name(&self) -> String {
        match self {
            GroupsSpec::All => "all".into(),
            GroupsSpec::PredDep => "pred_dep".into(),
            GroupsSpec::Walsh => "walsh".into(),
            GroupsSpec::Block => "block".into(),
            GroupsSpec::Full => "full".into(),
            GroupsSpec::Bits => "bits".into(),
            GroupsSpec::Intervals(c) => {
                format!("intervals:{}", c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
            }
        }
    }

    /// Three disjoint context intervals `[0, 1/2), [1/2, 2/3), [2/3, 1)`.
    pub fn three_intervals() -> Self {
        let r = |n, d| RationalValue::new(n, d).expect("const");
        GroupsSpec::Intervals(vec![r(0, 1), r(1, 2), r(2, 3), r(1, 1)])
    }
}

/// Family and parameters resolved at one horizon.
#[derive(Clone, Debug)]
pub struct ResolvedFamily {
    pub family: Arc<GroupFamily>,
    pub eta: Option<RationalValue>,
    pub m: Option<usize>,
    pub layout: Option<BlockLayout>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub id: String,
    pub env: EnvSpec,
    pub forecaster: ForecasterSpec,
    pub groups: GroupsSpec,
    pub horizons: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub mode: ExecMode,
    /// `δ` in `η = δ √(m/T)`; `None` picks the default.
    pub delta: Option<f64>,
    pub blocks: BlockRule,
    /// Streaming threshold passed to the ledger.
    pub pathwise_checks: bool,
}

impl ExperimentConfig {
    pub fn new(id: &str, env: EnvSpec, forecaster: ForecasterSpec, groups: GroupsSpec) -> Self {
        ExperimentConfig {
            id: id.to_string(),
            env,
            forecaster,
            groups,
            horizons: vec![1 << 10],
            replicates: 10,
            seed: 0,
            mode: ExecMode::default(),
            delta: None,
            blocks: BlockRule::default(),
            pathwise_checks: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() || self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("horizon list must be non-empty and strictly increasing".into()));
        }
        if let Some(&t) = self.horizons.iter().find(|&&t| t == 0 || t > MAX_HORIZON) {
            return Err(Error::InvalidParameter(format!("horizon {t} outside 1..={MAX_HORIZON}")));
        }
        if self.replicates == 0 || self.replicates > MAX_REPLICATES {
            return Err(Error::InvalidParameter(format!(
                "replicates = {} outside 1..={MAX_REPLICATES}",
                self.replicates
            )));
        }
        Ok(())
    }

    pub fn resolve_family(&self, horizon: usize) -> Result<ResolvedFamily> {
        resolve_family(&self.groups, &self.env, horizon, self.delta, self.blocks)
    }
}

pub fn resolve_family(
    groups: &GroupsSpec,
    env: &EnvSpec,
    horizon: usize,
    delta: Option<f64>,
    blocks: BlockRule,
) -> Result<ResolvedFamily> {
    let m = env.grid_size(horizon);
    let eta = match m {
        Some(m) => Some(default_eta(horizon, m, delta)?),
        None => None,
    };
    let need_m = || m.ok_or_else(|| Error::InvalidParameter(format!("groups `{}` need a grid environment", groups.name())));
    let layout_for = || -> Result<BlockLayout> {
        let (layout, _) = build_block_hadamard_family(horizon, blocks.count(horizon))?;
        if layout.block_len() > MAX_BLOCK_LEN {
            return Err(Error::InvalidParameter(format!(
                "block length {} exceeds the cap {MAX_BLOCK_LEN}",
                layout.block_len()
            )));
        }
        Ok(layout)
    };
    let (family, layout) = match groups {
        GroupsSpec::All => (GroupFamily::from_members(vec![GroupFunction::Constant]), None),
        GroupsSpec::PredDep => {
            let eta = eta.ok_or_else(|| Error::InvalidParameter("threshold groups need a grid environment".into()))?;
            (threshold_family_checked(eta, need_m()?)?, None)
        }
        GroupsSpec::Walsh => (build_walsh_family(need_m()?)?, None),
        GroupsSpec::Block => {
            let layout = layout_for()?;
            let (_, fam) = build_block_hadamard_family(horizon, layout.blocks())?;
            (fam, Some(layout))
        }
        GroupsSpec::Full => {
            let layout = layout_for()?;
            let (_, block) = build_block_hadamard_family(horizon, layout.blocks())?;
            (build_walsh_family(need_m()?)?.union(block)?, Some(layout))
        }
        GroupsSpec::Bits => match env {
            EnvSpec::Bits { k } => (build_bit_family(*k)?, None),
            _ => return Err(Error::InvalidParameter("bit groups need the bit environment".into())),
        },
        GroupsSpec::Intervals(cuts) => (context_interval_family(cuts)?, None),
    };
    Ok(ResolvedFamily { family: Arc::new(family), eta, m, layout })
}

/// Pathwise inequality bookkeeping.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckTally {
    entries: BTreeMap<String, (u64, u64)>,
}

impl CheckTally {
    pub fn record(&mut self, name: &str, ok: bool) {
        let e = self.entries.entry(name.to_string()).or_default();
        e.0 += 1;
        e.1 += (!ok) as u64;
    }

    pub fn merge(&mut self, other: &CheckTally) {
        for (k, (n, v)) in &other.entries {
            let e = self.entries.entry(k.clone()).or_default();
            e.0 += n;
            e.1 += v;
        }
    }

    /// `(name, evaluations, violations)`.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u64, u64)> {
        self.entries.iter().map(|(k, (n, v))| (k.as_str(), *n, *v))
    }

    pub fn evaluations(&self, name: &str) -> u64 {
        self.entries.get(name).map_or(0, |e| e.0)
    }

    pub fn violations(&self, name: &str) -> u64 {
        self.entries.get(name).map_or(0, |e| e.1)
    }

    pub fn total_violations(&self) -> u64 {
        self.entries.values().map(|e| e.1).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Names of the pathwise checks.
pub mod check {
    pub const DIFF_TWO: &str = "diff_two";
    pub const CONTEXT_DECOMP: &str = "context_decomp";
    pub const L1_QUANT: &str = "l1_quant";
    pub const N_FROM_A: &str = "n_from_a";
    pub const BLOCK_MASS: &str = "block_mass";
    pub const BIAS_AVERAGING: &str = "bias_averaging";
    pub const PARSEVAL: &str = "parseval";
    pub const SQ_LOSS: &str = "sq_loss";
    pub const MISS_PENALTY: &str = "miss_penalty";
    pub const ROUTING: &str = "routing";
    pub const S_LE_A: &str = "s_le_a";
    pub const SINGLE_CELL: &str = "single_cell";
}

/// One row of a bound-check table.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundCheck {
    pub check_id: String,
    pub measured: f64,
    pub bound: f64,
    /// Positive when the check holds with room to spare.
    pub margin: f64,
    pub pass: bool,
}

impl BoundCheck {
    pub fn at_least(id: &str, measured: f64, bound: f64) -> Self {
        let margin = measured - bound;
        BoundCheck { check_id: id.to_string(), measured, bound, margin, pass: margin >= 0.0 }
    }

    pub fn at_most(id: &str, measured: f64, bound: f64) -> Self {
        let margin = bound - measured;
        BoundCheck { check_id: id.to_string(), measured, bound, margin, pass: margin >= 0.0 }
    }

    /// `measured ≤ bound + slack`; the margin ignores the slack.
    pub fn at_most_within(id: &str, measured: f64, bound: f64, slack: f64) -> Self {
        let margin = bound - measured;
        BoundCheck { check_id: id.to_string(), measured, bound, margin, pass: margin + slack >= 0.0 }
    }

    /// Violation counts become `(violations, 0)` rows.
    pub fn from_tally(prefix: &str, tally: &CheckTally) -> Vec<Self> {
        tally
            .iter()
            .map(|(name, _, v)| BoundCheck::at_most(&format!("{prefix}pathwise:{name}"), v as f64, 0.0))
            .collect()
    }
}

fn rel_le(lhs: f64, rhs: f64, tol: f64) -> bool {
    lhs <= rhs + tol * rhs.abs().max(lhs.abs()).max(1.0)
}

/// Per-replicate output of a scaling run.
struct ReplicateOutcome {
    report: CalibrationReport,
    diagnostics: Vec<(&'static str, f64)>,
    checks: CheckTally,
    /// `Σ_v |Nz|` per `(a, j)` and `N_a` per block.
    noise: Option<(Vec<f64>, Vec<f64>)>,
}

fn member_index(family: &GroupFamily) -> HashMap<String, usize> {
    family.ids().into_iter().enumerate().map(|(i, id)| (id, i)).collect()
}

fn run_pathwise(
    fam: &ResolvedFamily,
    env: &EnvSpec,
    rounds: &[PlayedRound],
    report: &CalibrationReport,
    diagnostics: &mut Vec<(&'static str, f64)>,
    checks: &mut CheckTally,
    run_checks: bool,
) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    let index = member_index(&fam.family);
    let err = report.err_exact();
    let mut noise = None;

    if let Some(eta) = fam.eta {
        let big = rounds.iter().filter(|r| r.drift().abs() >= eta).count();
        diagnostics.push((diag::BIG_LIES, big as f64));
    }

    // threshold groups: decomposition on the η-honest rounds
    let honest_id = fam.eta.map(|eta| GroupFunction::PredThreshold { which: Threshold::Honest, eta }.id());
    if let (Some(eta), Some(g3)) = (fam.eta, honest_id.and_then(|id| index.get(&id).copied())) {
        let st = deviation_stats(rounds, None, Some(eta))?;
        let noise_x = st.contexts.iter().fold(Exact::zero(), |acc, c| acc + c.noise.abs());
        let drift_x = st.contexts.iter().fold(Exact::zero(), |acc, c| acc + c.drift.abs());
        let (n_f, r_f) = st.context_totals();
        diagnostics.push((diag::SUM_ABS_NOISE_X, n_f));
        diagnostics.push((diag::SUM_ABS_DRIFT_X, r_f));
        if run_checks {
            checks.record(check::CONTEXT_DECOMP, err[g3] >= noise_x - drift_x);
        }
    }

    if let (Some(m), true) = (fam.family.walsh_m(), run_checks) {
        let signed = walsh_signed_errors(rounds, m)?;
        for (ell, h) in signed.iter().enumerate().skip(1) {
            let plus = index[&format!("wal+/{ell}")];
            let minus = index[&format!("wal-/{ell}")];
            checks.record(check::DIFF_TWO, *h <= err[plus] + err[minus]);
        }
    }

    if let Some(layout) = fam.layout {
        let st = deviation_stats(rounds, Some(layout), None)?;
        let n = st.n();
        diagnostics.push((diag::A, st.a_f64()));
        diagnostics.push((diag::N, n));
        diagnostics.push((diag::S, st.s_f64()));
        let dec = block_decompose(rounds, layout)?;
        let l = layout.block_len();
        let mut nz = vec![0.0; layout.covered()];
        for a in 1..=layout.blocks() {
            for j in 0..l {
                nz[(a - 1) * l + j] = dec.noise_mass(a, j);
            }
        }
        let n_a: Vec<f64> = st.blocks.iter().map(|b| b.n_a).collect();
        noise = Some((nz, n_a));
        if run_checks {
            checks.record(check::S_LE_A, st.s <= st.a);
            let sum_na = st.sum_block_mass();
            let k = layout.blocks() as f64;
            checks.record(check::BLOCK_MASS, rel_le(n, sum_na, 1e-12) && rel_le(sum_na, k.sqrt() * n, 1e-12));
            if env.kind() == EnvKind::Rademacher {
                let m = fam.m.expect("grid environment");
                let t = st.rounds as i128;
                let rhs = Exact::new(st.sum_sq_counts() as i128, 16 * t) - Exact::new(t, m as i128) - Exact::from_integer(1);
                checks.record(check::L1_QUANT, st.a >= rhs);
                checks.record(check::N_FROM_A, rel_le(st.n_from_a_rhs(m), n, 1e-12));
            }
            for (a0, b) in st.blocks.iter().enumerate() {
                let a = a0 + 1;
                let lhs = dec.bias_energy(a);
                let rhs = l as f64 * dec.energy(a);
                checks.record(check::PARSEVAL, (lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1e-300) || lhs == rhs);
                checks.record(check::BIAS_AVERAGING, rel_le(dec.mean_abs_bias(a), (b.q_a as f64 * b.e_a).sqrt(), 1e-9));
                checks.record(check::BIAS_AVERAGING, rel_le((b.q_a as f64 * b.e_a).sqrt(), (b.n_a * b.e_a).sqrt(), 1e-9));
                for j in 0..l {
                    let h = dec.signed_error(a, j);
                    let plus = index[&format!("had+/{a}/{j}")];
                    let minus = index[&format!("had-/{a}/{j}")];
                    checks.record(check::DIFF_TWO, h <= err[plus] + err[minus]);
                }
            }
        }
    }

    if let EnvSpec::Bits { k } = env {
        let mut sq = ExactSum::new();
        for r in rounds {
            let d = r.residual();
            sq.add(d * d);
        }
        diagnostics.push((diag::SQ_LOSS, sq.to_f64()));
        if run_checks {
            let n = 1i128 << k;
            let factor = Exact::new(4 * n - 1, 2 * n);
            checks.record(check::SQ_LOSS, sq.to_ratio() <= factor * report.mcerr_exact());
        }
    }
    Ok(noise)
}

/// Aggregates for one horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub horizon: usize,
    pub replicates: usize,
    pub mcerr: Summary,
    /// Most frequent argmax group (lexicographic on ties).
    pub argmax_group: String,
    /// Mean Err per group, in family order.
    pub per_group: Vec<(String, f64)>,
    pub diagnostics: Vec<(String, Summary)>,
    /// `min_{a,j} E[Σ_v |Nz|] log2(L+1) / E[N_a]` when a block layout is present.
    pub noise_floor: Option<f64>,
    pub eta: Option<RationalValue>,
    pub m: Option<usize>,
    pub layout: Option<BlockLayout>,
}

impl ScalingRow {
    pub fn diagnostic(&self, name: &str) -> Option<Summary> {
        self.diagnostics.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }

    pub fn group_err(&self, id: &str) -> Option<f64> {
        self.per_group.iter().find(|(g, _)| g == id).map(|(_, e)| *e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingResult {
    pub experiment_id: String,
    pub rows: Vec<ScalingRow>,
    /// Fit of mean MCerr against `T` (needs two or more horizons).
    pub fit: Option<ExponentFit>,
    pub checks: CheckTally,
}

impl ScalingResult {
    pub fn diagnostic_fit(&self, name: &str) -> Option<ExponentFit> {
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter_map(|r| r.diagnostic(name).map(|s| (r.horizon as f64, s.mean)))
            .collect();
        fit_exponent(&pts).ok()
    }

    /// Bound-check rows: pathwise tallies plus, per horizon, the big-lies bound
    /// when threshold groups are present.
    pub fn bound_checks(&self) -> Vec<BoundCheck> {
        let mut out = BoundCheck::from_tally("", &self.checks);
        for row in &self.rows {
            if let (Some(eta), Some(big)) = (row.eta, row.diagnostic(diag::BIG_LIES)) {
                if big.mean > 0.0 {
                    out.push(BoundCheck::at_least(
                        &format!("big_lies:T={}", row.horizon),
                        row.mcerr.mean,
                        eta.to_f64() / 2.0 * big.mean,
                    ));
                }
            }
            if let Some(floor) = row.noise_floor {
                out.push(BoundCheck::at_least(&format!("noise_floor:T={}", row.horizon), floor, NOISE_FLOOR));
            }
        }
        out
    }
}

/// Sample, play and score `replicates` runs per horizon.
pub fn run_scaling(cfg: &ExperimentConfig) -> Result<ScalingResult> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(cfg.horizons.len());
    let mut checks = CheckTally::default();
    for &horizon in &cfg.horizons {
        let fam = cfg.resolve_family(horizon)?;
        let spec = cfg.forecaster.resolve(fam.eta)?;
        spec.build()?;
        let outcomes = map_indexed(cfg.mode, cfg.replicates, |rep| -> Result<ReplicateOutcome> {
            let t = horizon as u64;
            let traj = cfg.env.sample(horizon, replicate_seed(cfg.seed, Stream::Environment, t, rep as u64))?;
            let mut forecaster = spec.build()?;
            let mut rng = rng_from_seed(replicate_seed(cfg.seed, Stream::Forecaster, t, rep as u64));
            let played = play(&traj, forecaster.as_mut(), &mut rng)?;
            let report = report_for(fam.family.clone(), &played)?;
            let mut diagnostics = Vec::new();
            let mut tally = CheckTally::default();
            let noise = run_pathwise(&fam, &cfg.env, &played, &report, &mut diagnostics, &mut tally, cfg.pathwise_checks)?;
            Ok(ReplicateOutcome { report, diagnostics, checks: tally, noise })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        for o in &outcomes {
            checks.merge(&o.checks);
        }
        rows.push(aggregate_row(horizon, &fam, &outcomes));
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.horizon as f64, r.mcerr.mean)).collect();
    let fit = if pts.len() >= 2 { fit_exponent(&pts).ok() } else { None };
    Ok(ScalingResult { experiment_id: cfg.id.clone(), rows, fit, checks })
}

fn aggregate_row(horizon: usize, fam: &ResolvedFamily, outcomes: &[ReplicateOutcome]) -> ScalingRow {
    let reps = outcomes.len();
    let mcerr = summarize(&outcomes.iter().map(|o| o.report.mcerr()).collect::<Vec<_>>());
    let ids = fam.family.ids();
    let mut sums = vec![0.0; ids.len()];
    let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
    for o in outcomes {
        for (s, e) in sums.iter_mut().zip(o.report.err()) {
            *s += e;
        }
        if let Some(a) = o.report.argmax() {
            *votes.entry(a).or_default() += 1;
        }
    }
    // BTreeMap iterates lexicographically, so the first maximum wins ties
    let argmax_group = votes
        .iter()
        .fold(None::<(&str, usize)>, |best, (id, &c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((id, c)),
        })
        .map_or_else(String::new, |(id, _)| id.to_string());
    let per_group = ids.into_iter().zip(sums).map(|(id, s)| (id, s / reps as f64)).collect();
    let mut names: Vec<&'static str> = Vec::new();
    for o in outcomes {
        for (n, _) in &o.diagnostics {
            if !names.contains(n) {
                names.push(n);
            }
        }
    }
    let diagnostics = names
        .into_iter()
        .map(|n| {
            let vals: Vec<f64> = outcomes
                .iter()
                .filter_map(|o| o.diagnostics.iter().find(|(k, _)| *k == n).map(|(_, v)| *v))
                .collect();
            (n.to_string(), summarize(&vals))
        })
        .collect();
    let noise_floor = fam.layout.and_then(|layout| {
        let l = layout.block_len();
        let mut nz = vec![0.0; layout.covered()];
        let mut na = vec![0.0; layout.blocks()];
        let mut any = false;
        for (z, n) in outcomes.iter().filter_map(|o| o.noise.as_ref()) {
            any = true;
            nz.iter_mut().zip(z).for_each(|(acc, v)| *acc += v);
            na.iter_mut().zip(n).for_each(|(acc, v)| *acc += v);
        }
        if !any {
            return None;
        }
        let log = ((l + 1) as f64).log2();
        (0..layout.covered())
            .map(|idx| nz[idx] * log / na[idx / l])
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
    });
    ScalingRow {
        horizon,
        replicates: reps,
        mcerr,
        argmax_group,
        per_group,
        diagnostics,
        noise_floor,
        eta: fam.eta,
        m: fam.m,
        layout: fam.layout,
    }
}

/// Oracle experiment on the bit environment.
#[derive(Clone, Debug)]
pub struct OracleConfig {
    pub horizon: usize,
    pub k: u8,
    pub copies: usize,
    pub oracle: ForecasterSpec,
    pub rule: WeightRule,
    pub policy: UpdatePolicy,
    pub replicates: usize,
    pub seed: u64,
    pub mode: ExecMode,
}

impl OracleConfig {
    /// Uniform oracle on `{0, 1/(2N−1), …, 1}`: exactly two support points per
    /// interval `J_b`, so the correct-interval mass is `1/N` every round.
    pub fn new(horizon: usize, k: u8) -> Self {
        OracleConfig {
            horizon,
            k,
            copies: 1,
            oracle: ForecasterSpec::ContextBlind(Box::new(ForecasterSpec::UniformRandom { q: (2i64 << k) - 1 })),
            rule: WeightRule::Uniform,
            policy: UpdatePolicy::default(),
            replicates: 100,
            seed: 0,
            mode: ExecMode::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub mcerr: Summary,
    /// `(1/8)(1 − m/N) T / N²`.
    pub bound: f64,
    pub miss_rate: Summary,
    /// `1 − m/N`.
    pub miss_floor: f64,
    /// `Σ_t π_t / T`.
    pub correct_mass: Summary,
    pub checks: CheckTally,
}

impl OracleResult {
    pub fn bound_checks(&self, copies: usize, n: usize) -> Vec<BoundCheck> {
        let mut out = vec![
            BoundCheck::at_least("oracle:mcerr", self.mcerr.mean, self.bound),
            BoundCheck::at_least("oracle:miss_rate", self.miss_rate.mean, self.miss_floor - 3.0 * self.miss_rate.stderr),
            BoundCheck::at_most(
                "oracle:correct_mass",
                self.correct_mass.mean,
                copies as f64 / n as f64 + 3.0 * self.correct_mass.stderr,
            ),
        ];
        out.extend(BoundCheck::from_tally("oracle:", &self.checks));
        out
    }
}

pub fn run_oracle_bound(cfg: &OracleConfig) -> Result<OracleResult> {
    if cfg.copies == 0 || cfg.replicates == 0 || cfg.replicates > MAX_REPLICATES {
        return Err(Error::InvalidParameter("oracle bound needs copies >= 1 and 1..=10^4 replicates".into()));
    }
    if cfg.horizon == 0 || cfg.horizon > MAX_HORIZON {
        return Err(Error::InvalidParameter(format!("horizon {} outside 1..={MAX_HORIZON}", cfg.horizon)));
    }
    let env = EnvSpec::Bits { k: cfg.k };
    let family = Arc::new(build_bit_family(cfg.k)?);
    let factory = cfg.oracle.factory()?;
    let n = 1usize << cfg.k;
    let penalty = Exact::new(1, 4 * (n as i128) * (n as i128));
    let runs = map_indexed(cfg.mode, cfg.replicates, |rep| -> Result<(f64, f64, f64, CheckTally)> {
        let t = cfg.horizon as u64;
        let traj = env.sample(cfg.horizon, replicate_seed(cfg.seed, Stream::Environment, t, rep as u64))?;
        let mut f = proper_reduction(&factory, cfg.copies, cfg.rule.clone(), cfg.policy)?;
        let mut rng = rng_from_seed(replicate_seed(cfg.seed, Stream::Oracle, t, rep as u64));
        let mut mass = Ratio::<i64>::zero();
        let mut mass_f = 0.0;
        let played = play_with(&traj, &mut f, &mut rng, |_, ctx, dist| {
            if let Context::Bits(b) = ctx {
                let p = dist.mass_where(|v| b.interval_contains(v));
                mass_f += *p.numer() as f64 / *p.denom() as f64;
                mass = p;
            }
        })?;
        let _ = mass;
        let report = report_for(family.clone(), &played)?;
        let mut tally = CheckTally::default();
        let mut misses = 0usize;
        let mut sq = ExactSum::new();
        for r in &played {
            let d = r.residual();
            sq.add(d * d);
            let b = r.context.bits().expect("bit environment");
            if !b.interval_contains(r.prediction) {
                misses += 1;
                let dd = d * d;
                tally.record(check::MISS_PENALTY, Exact::new(dd.numer() as i128, dd.denom() as i128) >= penalty);
            }
        }
        let factor = Exact::new(4 * n as i128 - 1, 2 * n as i128);
        tally.record(check::SQ_LOSS, sq.to_ratio() <= factor * report.mcerr_exact());
        Ok((report.mcerr(), misses as f64 / cfg.horizon as f64, mass_f / cfg.horizon as f64, tally))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut checks = CheckTally::default();
    runs.iter().for_each(|r| checks.merge(&r.3));
    let nf = n as f64;
    let miss_floor = 1.0 - cfg.copies as f64 / nf;
    Ok(OracleResult {
        mcerr: summarize(&runs.iter().map(|r| r.0).collect::<Vec<_>>()),
        bound: 0.125 * miss_floor * cfg.horizon as f64 / (nf * nf),
        miss_rate: summarize(&runs.iter().map(|r| r.1).collect::<Vec<_>>()),
        miss_floor,
        correct_mass: summarize(&runs.iter().map(|r| r.2).collect::<Vec<_>>()),
        checks,
    })
}

/// Pattern-routing experiment.
#[derive(Clone, Debug)]
pub struct ReductionConfig {
    pub env: EnvSpec,
    pub groups: GroupsSpec,
    pub oracle: ForecasterSpec,
    pub horizons: Vec<usize>,
    pub replicates: usize,
    /// Standalone runs per cell used to estimate `R(n)`.
    pub envelope_replicates: usize,
    pub seed: u64,
    pub mode: ExecMode,
}

impl ReductionConfig {
    pub fn new(horizons: Vec<usize>) -> Self {
        ReductionConfig {
            env: EnvSpec::Bernoulli { m: None },
            groups: GroupsSpec::three_intervals(),
            oracle: ForecasterSpec::EmpiricalMeanBucket { q: 16 },
            horizons,
            replicates: 50,
            envelope_replicates: 50,
            seed: 0,
            mode: ExecMode::default(),
        }
    }
}

/// Upper concave, nondecreasing envelope of `(n, values[n])` through `(0, 0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcaveEnvelope {
    hull: Vec<(f64, f64)>,
}

impl ConcaveEnvelope {
    pub fn fit(values: &[f64]) -> Self {
        let mut pts: Vec<(f64, f64)> = vec![(0.0, 0.0)];
        pts.extend(values.iter().enumerate().skip(1).map(|(n, &v)| (n as f64, v.max(0.0))));
        let mut hull: Vec<(f64, f64)> = Vec::new();
        for p in pts {
            while hull.len() >= 2 {
                let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
                // drop b when it lies on or below the chord a–p
                if (b.1 - a.1) * (p.0 - a.0) <= (p.1 - a.1) * (b.0 - a.0) {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        // nondecreasing: cut the hull at its peak
        if let Some(peak) = hull.iter().enumerate().max_by(|a, b| a.1 .1.total_cmp(&b.1 .1)).map(|(i, _)| i) {
            hull.truncate(peak + 1);
        }
        ConcaveEnvelope { hull }
    }

    /// Linear interpolation on the hull; constant past the last point.
    pub fn eval(&self, n: f64) -> f64 {
        let h = &self.hull;
        if n <= 0.0 || h.len() == 1 {
            return if n <= 0.0 { 0.0 } else { h[0].1 };
        }
        for w in h.windows(2) {
            if n <= w[1].0 {
                let t = (n - w[0].0) / (w[1].0 - w[0].0);
                return w[0].1 + t * (w[1].1 - w[0].1);
            }
        }
        h.last().expect("non-empty").1
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.hull
    }
}

/// `Err` of the constant group after each prefix of a transcript.
fn prefix_errors(played: &[PlayedRound]) -> Vec<f64> {
    let mut sums: HashMap<RationalValue, ExactSum> = HashMap::new();
    let mut total = 0.0;
    let mut out = Vec::with_capacity(played.len() + 1);
    out.push(0.0);
    for r in played {
        let e = sums.entry(r.prediction).or_default();
        let before = e.abs_f64();
        e.add(r.residual());
        total += e.abs_f64() - before;
        out.push(total.max(0.0));
    }
    out
}

/// Aggregates for one horizon of the routing experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ReductionRow {
    pub horizon: usize,
    pub mcerr: Summary,
    /// `Σ_z R̂(T_z)` per replicate.
    pub envelope_bound: Summary,
    /// Per group: `(id, E[Err(g_j)], E[Σ_{z_j=1} R̂(T_z)])`.
    pub per_group: Vec<(String, Summary, Summary)>,
    /// Per pattern: `(pattern, mean T_z, mean cell Err)`.
    pub cells: Vec<(String, f64, f64)>,
    /// Per group in a singleton cell: `(id, E[Err(g_j)], standalone R at mean T_z, combined stderr)`.
    pub matched: Vec<(String, f64, f64, f64)>,
    pub envelope: ConcaveEnvelope,
    /// Allowed excess over the envelope in units of the measured stderr:
    /// two standard errors of a difference between the routed mean and an
    /// envelope built from independent replicates.
    pub slack_sigmas: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReductionResult {
    pub rows: Vec<ReductionRow>,
    pub checks: CheckTally,
}

impl ReductionResult {
    pub fn bound_checks(&self) -> Vec<BoundCheck> {
        let mut out = Vec::new();
        for row in &self.rows {
            let t = row.horizon;
            let slack = |s: &Summary| row.slack_sigmas * s.stderr;
            out.push(BoundCheck::at_most_within(
                &format!("reduction:mcerr:T={t}"),
                row.mcerr.mean,
                row.envelope_bound.mean,
                slack(&row.mcerr),
            ));
            for (id, err, bound) in &row.per_group {
                out.push(BoundCheck::at_most_within(&format!("reduction:group:{id}:T={t}"), err.mean, bound.mean, slack(err)));
            }
            for (id, err, standalone, se) in &row.matched {
                let gap = (err - standalone).abs();
                out.push(BoundCheck::at_most(&format!("diag:matched:{id}:T={t}"), gap, 2.0 * se));
            }
        }
        out.extend(BoundCheck::from_tally("reduction:", &self.checks));
        out
    }
}

struct RouterOutcome {
    mcerr: f64,
    err: Vec<f64>,
    bound: f64,
    group_bounds: Vec<f64>,
    cells: Vec<(u64, usize, f64)>,
    checks: CheckTally,
}

pub fn run_reduction_bound(cfg: &ReductionConfig) -> Result<ReductionResult> {
    if cfg.horizons.is_empty() || cfg.horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("horizon list must be non-empty and strictly increasing".into()));
    }
    if cfg.replicates == 0 || cfg.envelope_replicates == 0 || cfg.replicates > MAX_REPLICATES {
        return Err(Error::InvalidParameter("replicate counts must lie in 1..=10^4".into()));
    }
    let factory = cfg.oracle.factory()?;
    let mut checks = CheckTally::default();
    let mut rows = Vec::new();
    for &horizon in &cfg.horizons {
        if horizon > MAX_HORIZON {
            return Err(Error::InvalidParameter(format!("horizon {horizon} exceeds {MAX_HORIZON}")));
        }
        let fam = resolve_family(&cfg.groups, &cfg.env, horizon, None, BlockRule::Default)?;
        let family = fam.family.clone();
        // validates the family before any sampling
        pattern_router(factory.clone(), family.clone())?;
        let pattern_of = |ctx: &Context| -> u64 {
            family
                .members()
                .iter()
                .enumerate()
                .fold(0u64, |z, (j, g)| z | ((g.eval(ctx, RationalValue::HALF) as u64) << j))
        };
        let k = family.len();
        let t = horizon as u64;

        // standalone curves on cell-matched sub-environments of a longer run
        let curves = map_indexed(cfg.mode, cfg.envelope_replicates, |rep| -> Result<BTreeMap<u64, Vec<f64>>> {
            // two horizon-T samples keep the context grid of the routed run
            let mut cells: BTreeMap<u64, Vec<Round>> = BTreeMap::new();
            for half in 0..2u64 {
                let seed = replicate_seed(cfg.seed, Stream::Envelope, t, 2 * rep as u64 + half);
                for r in cfg.env.sample(horizon, seed)?.rounds() {
                    cells.entry(pattern_of(&r.context)).or_default().push(*r);
                }
            }
            let mut rng = rng_from_seed(replicate_seed(cfg.seed, Stream::Envelope, t ^ 0x5555, rep as u64));
            cells
                .into_iter()
                .map(|(z, rounds)| {
                    let mut oracle = factory();
                    let played = play_rounds(&rounds, oracle.as_mut(), &mut rng, |_, _, _| {})?;
                    Ok((z, prefix_errors(&played)))
                })
                .collect()
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let mut mean_curve: BTreeMap<u64, (Vec<f64>, Vec<f64>, Vec<u32>)> = BTreeMap::new();
        for rep in &curves {
            for (z, c) in rep {
                let e = mean_curve.entry(*z).or_insert_with(|| (Vec::new(), Vec::new(), Vec::new()));
                if e.0.len() < c.len() {
                    e.0.resize(c.len(), 0.0);
                    e.1.resize(c.len(), 0.0);
                    e.2.resize(c.len(), 0);
                }
                for (n, v) in c.iter().enumerate() {
                    e.0[n] += v;
                    e.1[n] += v * v;
                    e.2[n] += 1;
                }
            }
        }
        let longest = mean_curve.values().map(|c| c.0.len()).max().unwrap_or(1);
        let r_max: Vec<f64> = (0..longest)
            .map(|n| {
                mean_curve
                    .values()
                    .filter(|c| n < c.0.len() && c.2[n] > 0)
                    .map(|c| c.0[n] / c.2[n] as f64)
                    .fold(0.0, f64::max)
            })
            .collect();
        let envelope = ConcaveEnvelope::fit(&r_max);

        let single_cell = family.members() == [GroupFunction::Constant];
        let runs = map_indexed(cfg.mode, cfg.replicates, |rep| -> Result<RouterOutcome> {
            let traj = cfg.env.sample(horizon, replicate_seed(cfg.seed, Stream::Environment, t, rep as u64))?;
            let mut router = pattern_router(factory.clone(), family.clone())?;
            let mut rng = rng_from_seed(replicate_seed(cfg.seed, Stream::Forecaster, t, rep as u64));
            let played = play(&traj, &mut router, &mut rng)?;
            let report = report_for(family.clone(), &played)?;
            let cells = router.cell_summaries();
            let mut tally = CheckTally::default();
            if single_cell {
                // one cell: the router must replay the oracle exactly
                let mut oracle = factory();
                let mut rng = rng_from_seed(replicate_seed(cfg.seed, Stream::Forecaster, t, rep as u64));
                let direct = report_for(family.clone(), &play(&traj, oracle.as_mut(), &mut rng)?)?;
                tally.record(check::SINGLE_CELL, direct.mcerr_exact() == report.mcerr_exact());
            }
            let mut group_bounds = vec![0.0; k];
            for (j, g) in family.members().iter().enumerate() {
                let routed = cells
                    .iter()
                    .filter(|c| c.pattern >> j & 1 == 1)
                    .fold(Exact::zero(), |acc, c| acc + c.err);
                tally.record(check::ROUTING, report.err_exact()[j] <= routed);
                debug_assert_eq!(report.err_exact()[j], group_error(g, &played));
                group_bounds[j] = cells
                    .iter()
                    .filter(|c| c.pattern >> j & 1 == 1)
                    .map(|c| envelope.eval(c.rounds as f64))
                    .sum();
            }
            let total_bound: f64 = cells.iter().map(|c| envelope.eval(c.rounds as f64)).sum();
            let cell_rows = cells
                .iter()
                .map(|c| (c.pattern, c.rounds, *c.err.numer() as f64 / *c.err.denom() as f64))
                .collect();
            Ok(RouterOutcome {
                mcerr: report.mcerr(),
                err: report.err().to_vec(),
                bound: total_bound,
                group_bounds,
                cells: cell_rows,
                checks: tally,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        runs.iter().for_each(|r| checks.merge(&r.checks));

        let ids = family.ids();
        let per_group = (0..k)
            .map(|j| {
                let errs: Vec<f64> = runs.iter().map(|r| r.err[j]).collect();
                let bounds: Vec<f64> = runs.iter().map(|r| r.group_bounds[j]).collect();
                (ids[j].clone(), summarize(&errs), summarize(&bounds))
            })
            .collect::<Vec<_>>();
        let mut cell_acc: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
        for r in &runs {
            for (z, n, e) in &r.cells {
                let c = cell_acc.entry(*z).or_default();
                c.0 += *n as f64;
                c.1 += e;
                c.2 += 1;
            }
        }
        let pattern = |z: u64| (0..k).map(|j| if z >> j & 1 == 1 { '1' } else { '0' }).collect::<String>();
        let cells = cell_acc
            .iter()
            .map(|(z, (n, e, c))| (pattern(*z), n / *c as f64, e / *c as f64))
            .collect();
        let matched = (0..k)
            .filter_map(|j| {
                let z = 1u64 << j;
                let (n, _, c) = cell_acc.get(&z)?;
                let (sum, sq, cnt) = mean_curve.get(&z)?;
                let at = ((n / *c as f64).round() as usize).min(sum.len() - 1);
                let cn = cnt[at] as f64;
                let mean = sum[at] / cn;
                let var = (sq[at] / cn - mean * mean).max(0.0) * cn / (cn - 1.0).max(1.0);
                let (_, err, _) = &per_group[j];
                let se = (err.stderr * err.stderr + var / cn).sqrt();
                Some((ids[j].clone(), err.mean, mean, se))
            })
            .collect();
        rows.push(ReductionRow {
            horizon,
            mcerr: summarize(&runs.iter().map(|r| r.mcerr).collect::<Vec<_>>()),
            envelope_bound: summarize(&runs.iter().map(|r| r.bound).collect::<Vec<_>>()),
            per_group,
            cells,
            matched,
            envelope,
            slack_sigmas: 2.0 * (1.0 + cfg.replicates as f64 / cfg.envelope_replicates as f64).sqrt(),
        });
    }
    Ok(ReductionResult { rows, checks })
}
