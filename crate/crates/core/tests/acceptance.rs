//! Acceptance suite: one line per criterion, nonzero exit on any failure.
//!
//! Reference values come from independent computations in this file
//! (direct parity sums, walk dynamic programming, closed forms), never from
//! the library routine under test.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use caliblab_core::calibration::{block_decompose, BiasLedger, Exact, PlayedRound};
use caliblab_core::environments::{grid_section4, Context, EnvSpec};
use caliblab_core::exec::ExecMode;
use caliblab_core::experiments::{
    check, run_oracle_bound, run_reduction_bound, run_scaling, CheckTally, ExperimentConfig, GroupsSpec,
    OracleConfig, OracleResult, ReductionConfig, ReductionResult, ScalingResult, HONEST_EXPONENT_WINDOW,
};
use caliblab_core::export::{write_bound_checks, write_diagnostics, write_per_group, write_probe_reports, write_scaling};
use caliblab_core::forecasters::ForecasterSpec;
use caliblab_core::groups::{build_block_hadamard_family, build_walsh_family, GroupFunction};
use caliblab_core::orthogonal::{fwht, prefix_extremum, threshold_expansion, threshold_l1_mass, OrthoSystem};
use caliblab_core::probes::{
    bucketing_probe, return_pmf_probe, truncated_root_return, truncated_root_return_probe, StrategyKind,
    BUCKETING_FLOOR,
};
use caliblab_core::RationalValue;
use num_rational::Ratio;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_240_917;

// tolerances
const FWHT_TOL: f64 = 1e-9;
const PARSEVAL_REL_TOL: f64 = 1e-9;
const PMF_SIGMAS: f64 = 3.0;
const BIG_LIES_FRACTION: f64 = 0.95;
const AC1_BUDGET: Duration = Duration::from_secs(60);
const AC5_BUDGET: Duration = Duration::from_secs(300);
const AC6_BUDGET: Duration = Duration::from_secs(1800);

type Outcome = Result<String, String>;

fn parity_sign(j: usize, s: usize) -> i64 {
    if (j & s).count_ones().is_multiple_of(2) {
        1
    } else {
        -1
    }
}

fn sign_table(n: usize) -> Vec<i64> {
    (0..n * n).map(|i| parity_sign(i / n, i % n)).collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn powers(lo: u32, hi: u32) -> impl Iterator<Item = usize> {
    (lo..=hi).map(|e| 1usize << e)
}

fn exact_of(v: RationalValue) -> Exact {
    Exact::new(v.numer() as i128, v.denom() as i128)
}

fn random_transcript(rng: &mut ChaCha8Rng, horizon: usize, m: usize, q: i64) -> Vec<PlayedRound> {
    let grid = grid_section4(m).unwrap();
    (0..horizon)
        .map(|t| PlayedRound {
            context: Context::MeanTime { mean: grid[rng.random_range(0..m)], time: t as u64 + 1 },
            prediction: RationalValue::new(rng.random_range(0..=q), q).unwrap(),
            outcome: RationalValue::from_integer(rng.random_range(0..=1)),
        })
        .collect()
}

fn ac1_identities() -> Outcome {
    let start = Instant::now();
    let mut checked = 0u64;

    for n in powers(0, 10) {
        let table = sign_table(n);
        let sys = OrthoSystem::walsh(n).unwrap();
        for j in 0..n {
            for s in 0..n {
                ensure(sys.sign(j, s) as i64 == table[j * n + s], || format!("sign mismatch n={n} j={j} s={s}"))?;
            }
        }
        for j in 0..n {
            for k in j..n {
                let dot: i64 = (0..n).map(|s| table[j * n + s] * table[k * n + s]).sum();
                let want = if j == k { n as i64 } else { 0 };
                ensure(dot == want, || format!("orthogonality n={n} j={j} k={k}: {dot}"))?;
                checked += 1;
            }
        }
    }

    for n in powers(1, 12) {
        for j in 1..n {
            let mut sum = 0i64;
            let mut max_abs = 0u64;
            for s in 0..n {
                sum += parity_sign(j, s);
                max_abs = max_abs.max(sum.unsigned_abs());
            }
            let tz = j.trailing_zeros();
            ensure(max_abs <= 1 << tz, || format!("prefix bound n={n} j={j}: {max_abs} > 2^{tz}"))?;
            ensure(prefix_extremum(j, n).unwrap() == (tz, max_abs), || format!("prefix_extremum n={n} j={j}"))?;
            checked += 1;
        }
    }

    for m in powers(0, 10) {
        let table = sign_table(m);
        // P_l(r) = Σ_{u<r} ψ_l(u); numerator of α_l(r) is 2 P_l(r) − P_l(m)
        let mut prefix = vec![0i64; m];
        let total: Vec<i64> = (0..m).map(|l| (0..m).map(|u| table[l * m + u]).sum()).collect();
        let mut max_abs = vec![0i64; m];
        for r in 0..=m {
            if r > 0 {
                for (l, p) in prefix.iter_mut().enumerate() {
                    *p += table[l * m + r - 1];
                }
            }
            let expected: Vec<i64> = (0..m).map(|l| 2 * prefix[l] - total[l]).collect();
            let e = threshold_expansion(m, r).unwrap();
            ensure(e.numerators() == expected.as_slice(), || format!("expansion coefficients m={m} r={r}"))?;
            for u in 0..m {
                let val: i64 = (0..m).map(|l| expected[l] * table[l * m + u]).sum();
                let want = if u < r { m as i64 } else { -(m as i64) };
                ensure(val == want, || format!("reconstruction m={m} r={r} u={u}"))?;
            }
            for (slot, c) in max_abs.iter_mut().zip(&expected) {
                *slot = (*slot).max(c.abs());
            }
            checked += 1;
        }
        let mass = Ratio::new(max_abs.iter().sum::<i64>(), m as i64);
        ensure(threshold_l1_mass(m).unwrap() == mass, || format!("l1 mass mismatch m={m}"))?;
        let cap = Ratio::from_integer(1 + m.trailing_zeros() as i64);
        ensure(mass <= cap, || format!("l1 mass {mass} exceeds {cap} at m={m}"))?;
    }

    for m in powers(1, 10) {
        let fam = build_walsh_family(m).unwrap();
        for x in grid_section4(m).unwrap() {
            let ctx = Context::MeanTime { mean: x, time: 7 };
            for ell in 1..m {
                let (p, q) = (&fam.members()[2 * ell - 1], &fam.members()[2 * ell]);
                for v in [RationalValue::ZERO, RationalValue::HALF, RationalValue::ONE] {
                    ensure(p.eval(&ctx, v) + q.eval(&ctx, v) == 1, || format!("walsh complement m={m} ell={ell}"))?;
                    checked += 1;
                }
            }
        }
    }
    for l in powers(1, 8) {
        let k = 3;
        let (_, fam) = build_block_hadamard_family(k * l + 1, k).unwrap();
        for t in 1..=(k * l + 2) as u64 {
            let ctx = Context::MeanTime { mean: RationalValue::HALF, time: t };
            for g in fam.members() {
                let &GroupFunction::BlockHadamardHalf { layout, a, j, positive: true } = g else { continue };
                let minus = GroupFunction::BlockHadamardHalf { layout, a, j, positive: false };
                let in_block = t as usize > (a - 1) * l && t as usize <= a * l;
                let sum = g.eval(&ctx, RationalValue::HALF) + minus.eval(&ctx, RationalValue::HALF);
                ensure(sum == in_block as i8, || format!("block complement L={l} a={a} j={j} t={t}"))?;
                checked += 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let fam = Arc::new(build_walsh_family(8).unwrap());
    for run in 0..50 {
        let rounds = random_transcript(&mut rng, 50 + 13 * run, 8, 32);
        let mut ledger = BiasLedger::new(fam.clone());
        ledger.record_all(&rounds).unwrap();
        let direct = rounds.iter().fold(Exact::zero(), |acc, r| acc + exact_of(r.prediction) - exact_of(r.outcome));
        let buckets = ledger.buckets(0).into_iter().fold(Exact::zero(), |acc, (_, b)| acc + b);
        ensure(buckets == direct, || format!("telescoping run {run}: {buckets} != {direct}"))?;
        checked += 1;
    }

    let elapsed = start.elapsed();
    ensure(elapsed < AC1_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{checked} exact checks, {:.1}s", elapsed.as_secs_f64()))
}

fn ac2_fwht() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = 1usize << rng.random_range(0..=8);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = fwht(&a).unwrap();
        for (j, f) in fast.iter().enumerate() {
            let brute: f64 = (0..n).map(|s| a[s] * parity_sign(j, s) as f64).sum();
            worst = worst.max((f - brute).abs());
        }
    }
    ensure(worst <= FWHT_TOL, || format!("max deviation {worst:e}"))?;
    Ok(format!("max deviation {worst:.3e} over 100 vectors"))
}

fn ac3_parseval() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let mut worst = 0.0f64;
    let mut blocks = 0;
    for run in 0..50 {
        let l = 1usize << (1 + run % 12);
        let k = rng.random_range(2..=4);
        let horizon = k * l + rng.random_range(0..l);
        let rounds = random_transcript(&mut rng, horizon, 16, 8);
        let (layout, _) = build_block_hadamard_family(horizon, k).unwrap();
        let l = layout.block_len();
        let dec = block_decompose(&rounds, layout).unwrap();
        for a in 1..=layout.blocks() {
            let block = &rounds[(a - 1) * l..a * l];
            let energy: f64 = block
                .iter()
                .map(|r| {
                    let d = r.prediction.to_f64() - r.context.mean().unwrap().to_f64();
                    d * d
                })
                .sum();
            let rhs = l as f64 * energy;
            let lhs = dec.bias_energy(a);
            let rel = (lhs - rhs).abs() / rhs.max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
            blocks += 1;
            if l <= 64 {
                // direct D_v^{(a,j)} for a spot check
                for j in 0..l {
                    for entry in &dec.blocks()[a - 1].buckets {
                        let direct: f64 = block
                            .iter()
                            .enumerate()
                            .filter(|(_, r)| r.prediction == entry.value)
                            .map(|(s, r)| {
                                parity_sign(j, s) as f64 * (r.prediction.to_f64() - r.context.mean().unwrap().to_f64())
                            })
                            .sum();
                        let got = entry.bias[j] as f64 / dec.denom() as f64;
                        ensure((got - direct).abs() <= 1e-9, || format!("D mismatch L={l} a={a} j={j}"))?;
                    }
                }
            }
        }
    }
    ensure(worst <= PARSEVAL_REL_TOL, || format!("worst relative gap {worst:e}"))?;
    Ok(format!("{blocks} blocks, worst relative gap {worst:.3e}"))
}

struct Runs {
    honest: ScalingResult,
    honest_time: Duration,
    overshoot: ScalingResult,
    pipeline: Vec<ScalingResult>,
    bits: ScalingResult,
    oracle: OracleResult,
    reduction: ReductionResult,
}

fn run_experiments() -> Runs {
    let start = Instant::now();
    let mut honest =
        ExperimentConfig::new("honest", EnvSpec::Bernoulli { m: None }, ForecasterSpec::Honest, GroupsSpec::PredDep);
    honest.horizons = powers(10, 18).collect();
    honest.replicates = 100;
    honest.seed = SEED;
    let honest = run_scaling(&honest).expect("honest scaling");
    let honest_time = start.elapsed();

    let mut over =
        ExperimentConfig::new("overshoot", EnvSpec::Bernoulli { m: None }, ForecasterSpec::Overshoot, GroupsSpec::PredDep);
    over.horizons = vec![1 << 14];
    over.replicates = 200;
    over.seed = SEED + 7;
    let overshoot = run_scaling(&over).expect("overshoot scaling");

    let pipeline = [
        ForecasterSpec::RoundedHonest { q: 16 },
        ForecasterSpec::NoisyHonest { q: 32, spread: 2 },
        ForecasterSpec::Biased { offset: RationalValue::new(1, 16).unwrap() },
        ForecasterSpec::EmpiricalMeanBucket { q: 8 },
    ]
    .into_iter()
    .enumerate()
    .map(|(i, f)| {
        let mut cfg = ExperimentConfig::new("pipeline", EnvSpec::Rademacher, f, GroupsSpec::Full);
        cfg.horizons = powers(10, 13).collect();
        cfg.replicates = 20;
        cfg.seed = SEED + 100 + i as u64;
        run_scaling(&cfg).expect("pipeline scaling")
    })
    .chain([{
        let mut cfg =
            ExperimentConfig::new("thresholds", EnvSpec::Bernoulli { m: None }, ForecasterSpec::RoundedHonest { q: 8 }, GroupsSpec::PredDep);
        cfg.horizons = powers(10, 14).collect();
        cfg.replicates = 50;
        cfg.seed = SEED + 200;
        run_scaling(&cfg).expect("threshold scaling")
    }])
    .collect();

    let mut bits = ExperimentConfig::new(
        "bits",
        EnvSpec::Bits { k: 3 },
        ForecasterSpec::ContextBlind(Box::new(ForecasterSpec::UniformRandom { q: 15 })),
        GroupsSpec::Bits,
    );
    bits.horizons = vec![1000, 10_000];
    bits.replicates = 50;
    bits.seed = SEED + 300;
    let bits = run_scaling(&bits).expect("bit scaling");

    let mut oracle = OracleConfig::new(10_000, 3);
    oracle.replicates = 100;
    oracle.seed = SEED + 9;
    let oracle = run_oracle_bound(&oracle).expect("oracle bound");

    let mut red = ReductionConfig::new(vec![1 << 10, 1 << 14]);
    red.seed = SEED + 10;
    let reduction = run_reduction_bound(&red).expect("reduction bound");

    Runs { honest, honest_time, overshoot, pipeline, bits, oracle, reduction }
}

fn ac4_pathwise(runs: &Runs) -> Outcome {
    let mut tally = CheckTally::default();
    tally.merge(&runs.honest.checks);
    tally.merge(&runs.overshoot.checks);
    for r in &runs.pipeline {
        tally.merge(&r.checks);
    }
    tally.merge(&runs.bits.checks);
    tally.merge(&runs.oracle.checks);
    tally.merge(&runs.reduction.checks);
    let required = [
        check::DIFF_TWO,
        check::CONTEXT_DECOMP,
        check::L1_QUANT,
        check::N_FROM_A,
        check::BLOCK_MASS,
        check::BIAS_AVERAGING,
        check::SQ_LOSS,
        check::MISS_PENALTY,
        check::ROUTING,
    ];
    for name in required {
        ensure(tally.evaluations(name) > 0, || format!("check `{name}` never evaluated"))?;
    }
    let bad: Vec<String> = tally.iter().filter(|(_, _, v)| *v > 0).map(|(n, e, v)| format!("{n}: {v}/{e}")).collect();
    ensure(bad.is_empty(), || format!("violations: {}", bad.join(", ")))?;
    let total: u64 = tally.iter().map(|(_, e, _)| e).sum();
    Ok(format!("{total} pathwise evaluations over {} checks, zero violations", tally.iter().count()))
}

/// `C(2n, n) 4^{-n} / (2n − 1)` by a product of ratios.
fn first_return_reference(n: usize) -> f64 {
    let mut c = 1.0f64;
    for i in 1..=n {
        c *= (n + i) as f64 / (4 * i) as f64;
    }
    c / (2 * n - 1) as f64
}

/// `E[√min(τ0, L)]` from the distribution of a walk killed at zero.
fn truncated_reference(l: usize) -> f64 {
    // alive[x + l] = P(S_t = x, no return yet), x ≠ 0
    let w = 2 * l + 3;
    let mut alive = vec![0.0f64; w];
    let off = l + 1;
    alive[off + 1] = 0.5;
    alive[off - 1] = 0.5;
    let mut expect = 0.0;
    for t in 2..=l {
        let mut next = vec![0.0f64; w];
        for x in 1..w - 1 {
            let p = alive[x];
            if p == 0.0 {
                continue;
            }
            next[x + 1] += 0.5 * p;
            next[x - 1] += 0.5 * p;
        }
        let returned = next[off];
        next[off] = 0.0;
        expect += returned * (t as f64).sqrt();
        alive = next;
    }
    expect + alive.iter().sum::<f64>() * (l as f64).sqrt()
}

fn ac5_return_times() -> Outcome {
    let start = Instant::now();
    let checks = return_pmf_probe(20, 1_000_000, SEED + 5, ExecMode::default()).map_err(|e| e.to_string())?;
    for c in &checks {
        let reference = first_return_reference(c.n);
        ensure((c.exact - reference).abs() <= 1e-14 * reference, || format!("closed form n={}", c.n))?;
        ensure(c.within(PMF_SIGMAS), || {
            format!("n={}: empirical {} vs {} (se {})", c.n, c.empirical, c.exact, c.stderr)
        })?;
    }
    let ls: Vec<usize> = powers(4, 12).collect();
    let reports = truncated_root_return_probe(&ls, 100_000, SEED + 6, ExecMode::default()).map_err(|e| e.to_string())?;
    for (l, r) in ls.iter().zip(&reports) {
        let reference = truncated_reference(*l);
        let analytic = truncated_root_return(*l).map_err(|e| e.to_string())?;
        ensure((analytic - reference).abs() <= 1e-10 * reference, || {
            format!("analytic L={l}: {analytic} vs reference {reference}")
        })?;
        ensure((r.estimate - reference).abs() <= PMF_SIGMAS * r.stderr, || {
            format!("simulated L={l}: {} vs {reference} (se {})", r.estimate, r.stderr)
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < AC5_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("20 pmf cells and {} truncations within 3 se, {:.1}s", ls.len(), elapsed.as_secs_f64()))
}

fn cube_root(n: usize) -> usize {
    let mut c = 0;
    while (c + 1) * (c + 1) * (c + 1) <= n {
        c += 1;
    }
    c
}

fn ac6_honest_rate(runs: &Runs) -> Outcome {
    let r = &runs.honest;
    ensure(r.rows.len() == 9, || "expected 9 horizons".into())?;
    for row in &r.rows {
        ensure(row.replicates >= 100, || format!("T={}: {} replicates", row.horizon, row.replicates))?;
        ensure(row.m == Some(cube_root(row.horizon)), || format!("T={}: grid {:?}", row.horizon, row.m))?;
        let eta = row.eta.expect("threshold width");
        for which in ["g1", "g2"] {
            let id = format!("{which}@eta={eta}");
            ensure(row.group_err(&id) == Some(0.0), || format!("T={}: Err({id}) = {:?}", row.horizon, row.group_err(&id)))?;
        }
    }
    let fit = r.fit.ok_or("no fit")?;
    let (lo, hi) = HONEST_EXPONENT_WINDOW;
    ensure((0.60, 0.78) == (lo, hi), || "exponent window drifted".into())?;
    ensure(fit.slope >= lo && fit.slope <= hi, || format!("exponent {:.4} outside [{lo}, {hi}]", fit.slope))?;
    ensure(runs.honest_time < AC6_BUDGET, || format!("took {:?}", runs.honest_time))?;
    Ok(format!("exponent {:.4} (se {:.4}), {:.1}s", fit.slope, fit.stderr, runs.honest_time.as_secs_f64()))
}

fn ac7_big_lies(runs: &Runs) -> Outcome {
    let row = &runs.overshoot.rows[0];
    let eta = row.eta.ok_or("no threshold width")?.to_f64();
    let target = BIG_LIES_FRACTION * eta / 2.0 * row.horizon as f64;
    ensure(row.replicates == 200 && row.horizon == 1 << 14, || "wrong configuration".into())?;
    ensure(row.mcerr.mean >= target, || format!("mean MCerr {:.3} < {target:.3}", row.mcerr.mean))?;
    Ok(format!("mean MCerr {:.2} >= {target:.2}", row.mcerr.mean))
}

fn ac8_bucketing() -> Outcome {
    let pinned = (2.0 / std::f64::consts::PI).sqrt();
    ensure((BUCKETING_FLOOR - pinned).abs() < 1e-15, || format!("floor {BUCKETING_FLOOR} is not √(2/π)"))?;
    let h = RationalValue::new(1, 4).unwrap();
    let mut worst = (f64::INFINITY, String::new());
    for kind in StrategyKind::ALL {
        for l in powers(6, 14) {
            let rep = bucketing_probe(l, h, kind, 10_000, SEED + 8, ExecMode::default()).map_err(|e| e.to_string())?;
            let scaled = rep.report.estimate * ((l + 1) as f64).log2();
            ensure(rep.violations == 0, || format!("{kind:?} L={l}: {} bookkeeping violations", rep.violations))?;
            ensure(scaled >= BUCKETING_FLOOR, || format!("{kind:?} L={l}: ρ·log2(L+1) = {scaled:.4}"))?;
            if scaled < worst.0 {
                worst = (scaled, format!("{kind:?} L={l}"));
            }
        }
    }
    Ok(format!("min ρ·log2(L+1) = {:.4} ({}) >= {BUCKETING_FLOOR:.4}", worst.0, worst.1))
}

fn ac9_oracle(runs: &Runs) -> Outcome {
    let o = &runs.oracle;
    let reference = 0.125 * (1.0 - 1.0 / 8.0) * 10_000.0 / 64.0;
    ensure((o.bound - reference).abs() < 1e-12, || format!("bound {} vs {reference}", o.bound))?;
    ensure(o.mcerr.mean >= o.bound, || format!("E[MCerr] {:.3} < {:.3}", o.mcerr.mean, o.bound))?;
    let floor = (1.0 - 1.0 / 8.0) - 3.0 * o.miss_rate.stderr;
    ensure(o.miss_rate.mean >= floor, || format!("miss rate {:.5} < {floor:.5}", o.miss_rate.mean))?;
    Ok(format!("E[MCerr] {:.2} >= {:.2}; miss rate {:.5} >= {floor:.5}", o.mcerr.mean, o.bound, o.miss_rate.mean))
}

fn ac10_reduction(runs: &Runs) -> Outcome {
    let r = &runs.reduction;
    ensure(r.checks.evaluations(check::ROUTING) > 0, || "routing never checked".into())?;
    ensure(r.checks.violations(check::ROUTING) == 0, || "routing inequality violated".into())?;
    let mut parts = Vec::new();
    for row in &r.rows {
        ensure(row.per_group.len() == 3, || "expected three context groups".into())?;
        ensure(row.mcerr.mean <= row.envelope_bound.mean, || {
            format!("T={}: E[MCerr] {:.3} > {:.3}", row.horizon, row.mcerr.mean, row.envelope_bound.mean)
        })?;
        parts.push(format!("T={}: {:.2} <= {:.2}", row.horizon, row.mcerr.mean, row.envelope_bound.mean));
    }
    Ok(parts.join("; "))
}

fn csv_bytes(r: &ScalingResult) -> Vec<u8> {
    let mut out = Vec::new();
    write_scaling(&mut out, r).unwrap();
    write_per_group(&mut out, r).unwrap();
    write_diagnostics(&mut out, r).unwrap();
    write_bound_checks(&mut out, &r.bound_checks()).unwrap();
    out
}

fn ac11_determinism() -> Outcome {
    let mut cfg = ExperimentConfig::new("det", EnvSpec::Rademacher, ForecasterSpec::NoisyHonest { q: 16, spread: 1 }, GroupsSpec::Full);
    cfg.horizons = vec![512, 1024];
    cfg.replicates = 8;
    cfg.seed = SEED + 11;
    let a = csv_bytes(&run_scaling(&cfg).unwrap());
    let b = csv_bytes(&run_scaling(&cfg).unwrap());
    cfg.mode = ExecMode::Sequential;
    let c = csv_bytes(&run_scaling(&cfg).unwrap());
    ensure(a == b, || "scaling CSV differs between reruns".into())?;
    ensure(a == c, || "scaling CSV differs between execution modes".into())?;

    let oracle = |mode| {
        let mut o = OracleConfig::new(2000, 3);
        o.replicates = 10;
        o.mode = mode;
        let mut out = Vec::new();
        write_bound_checks(&mut out, &run_oracle_bound(&o).unwrap().bound_checks(1, 8)).unwrap();
        out
    };
    ensure(oracle(ExecMode::default()) == oracle(ExecMode::Sequential), || "oracle CSV differs".into())?;

    let reduction = || {
        let mut r = ReductionConfig::new(vec![512]);
        r.replicates = 6;
        r.envelope_replicates = 6;
        let mut out = Vec::new();
        write_bound_checks(&mut out, &run_reduction_bound(&r).unwrap().bound_checks()).unwrap();
        out
    };
    ensure(reduction() == reduction(), || "reduction CSV differs".into())?;

    let probe = |mode| {
        let rep = bucketing_probe(256, RationalValue::new(1, 4).unwrap(), StrategyKind::AvoidZero, 3000, 5, mode).unwrap();
        let mut out = Vec::new();
        write_probe_reports(&mut out, &[rep.report]).unwrap();
        out
    };
    ensure(probe(ExecMode::default()) == probe(ExecMode::Sequential), || "probe CSV differs".into())?;
    Ok(format!("{} scaling bytes identical across reruns and modes", a.len()))
}

fn run(name: &str, what: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("{name} PASS {what}: {detail} [{secs:.1}s]");
            true
        }
        Err(detail) => {
            println!("{name} FAIL {what}: {detail} [{secs:.1}s]");
            false
        }
    }
}

fn main() {
    // `cargo test -- --list` and filters from the default harness are not meaningful here
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut ok = true;
    ok &= run("AC1", "exact identity suite", ac1_identities);
    ok &= run("AC2", "fast transform matches brute force", ac2_fwht);
    ok &= run("AC3", "block Parseval", ac3_parseval);
    let started = Instant::now();
    let runs = catch_unwind(run_experiments).ok();
    if runs.is_none() {
        println!("experiment batch panicked after {:.1}s", started.elapsed().as_secs_f64());
    }
    let runs = runs.as_ref();
    let with_runs = |f: fn(&Runs) -> Outcome| move || runs.map_or(Err("experiments did not run".into()), f);
    ok &= run("AC4", "pathwise inequality suite", with_runs(ac4_pathwise));
    ok &= run("AC5", "first-return law", ac5_return_times);
    ok &= run("AC6", "honest forecaster rate", with_runs(ac6_honest_rate));
    ok &= run("AC7", "big lies", with_runs(ac7_big_lies));
    ok &= run("AC8", "adaptive bucketing floor", ac8_bucketing);
    ok &= run("AC9", "oracle bound", with_runs(ac9_oracle));
    ok &= run("AC10", "pattern-routing reduction", with_runs(ac10_reduction));
    ok &= run("AC11", "determinism", ac11_determinism);
    if !ok {
        std::process::exit(1);
    }
}
