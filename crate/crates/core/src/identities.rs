//! Exact identity checks, packaged as probe reports (violations against a
//! bound of zero).

use std::sync::Arc;

use num_traits::Zero;
use rand::Rng;

use crate::calibration::{block_decompose, BiasLedger, Exact, PlayedRound};
use crate::environments::{grid_section4, Context};
use crate::error::{Error, Result};
use crate::groups::{build_block_hadamard_family, build_walsh_family};
use crate::orthogonal::{fwht_in_place, prefix_extremum, threshold_expansion, threshold_l1_mass, OrthoSystem};
use crate::probes::ProbeReport;
use crate::rational::RationalValue;
use crate::rng::{replicate_seed, rng_from_seed, SimRng, Stream};

/// Largest length for which prefix sums are swept.
const PREFIX_CAP: usize = 4096;
/// Largest block length for the complementarity sweep.
const COMPLEMENT_CAP: usize = 256;
const RANDOM_RUNS: usize = 20;

fn report(name: &str, max_n: usize, evaluated: usize, violations: usize) -> ProbeReport {
    ProbeReport {
        probe: format!("identities:{name}"),
        parameters: format!("max_n={max_n}"),
        estimate: violations as f64,
        stderr: 0.0,
        replicates: evaluated,
        bound: 0.0,
        pass: violations == 0 && evaluated > 0,
    }
}

fn powers(max_n: usize) -> impl Iterator<Item = usize> {
    (0..usize::BITS).map(|e| 1usize << e).take_while(move |&n| n <= max_n)
}

/// Random transcript on the time-stamped grid: `T` rounds, contexts from a
/// length-`m` grid, predictions on `{0, 1/q, …, 1}`, fair binary outcomes.
pub fn random_rounds(horizon: usize, m: usize, q: i64, rng: &mut SimRng) -> Result<Vec<PlayedRound>> {
    let grid = grid_section4(m)?;
    (0..horizon)
        .map(|t| {
            Ok(PlayedRound {
                context: Context::MeanTime { mean: grid[rng.random_range(0..m)], time: t as u64 + 1 },
                prediction: RationalValue::new(rng.random_range(0..=q), q)?,
                outcome: RationalValue::from_integer(rng.random_range(0..=1)),
            })
        })
        .collect()
}

/// Orthogonality, prefix sums, threshold expansions, half-group
/// complementarity, telescoping and block Parseval up to length `max_n`.
pub fn identity_suite(max_n: usize, seed: u64) -> Result<Vec<ProbeReport>> {
    if max_n < 2 || !max_n.is_power_of_two() {
        return Err(Error::InvalidParameter(format!("max_n = {max_n} must be a power of two >= 2")));
    }
    let mut out = Vec::new();

    let (mut n_eval, mut bad) = (0, 0);
    for n in powers(max_n) {
        let sys = OrthoSystem::walsh(n)?;
        for j in 0..n {
            let mut row: Vec<i64> = (0..n).map(|s| sys.sign(j, s) as i64).collect();
            sys.transform(&mut row)?;
            n_eval += 1;
            bad += row.iter().enumerate().any(|(k, &c)| c != if k == j { n as i64 } else { 0 }) as usize;
        }
    }
    out.push(report("orthogonality", max_n, n_eval, bad));

    let (mut n_eval, mut bad) = (0, 0);
    for n in powers((4 * max_n).min(PREFIX_CAP)) {
        for j in 1..n {
            let (tz, max_abs) = prefix_extremum(j, n)?;
            n_eval += 1;
            bad += (max_abs > 1u64 << tz) as usize;
        }
    }
    out.push(report("prefix_sum", max_n, n_eval, bad));

    let (mut n_eval, mut bad) = (0, 0);
    for m in powers(max_n) {
        for r in 0..=m {
            n_eval += 1;
            bad += !threshold_expansion(m, r)?.reconstructs_exactly() as usize;
        }
        let log = m.trailing_zeros() as i64;
        n_eval += 1;
        bad += (threshold_l1_mass(m)? > num_rational::Ratio::from_integer(1 + log)) as usize;
    }
    out.push(report("threshold_expansion", max_n, n_eval, bad));

    let (mut n_eval, mut bad) = (0, 0);
    for m in powers(max_n).skip(1) {
        let fam = build_walsh_family(m)?;
        for x in grid_section4(m)? {
            let ctx = Context::MeanTime { mean: x, time: 1 };
            for ell in 1..m {
                let p = fam.members()[2 * ell - 1].eval(&ctx, RationalValue::HALF);
                let q = fam.members()[2 * ell].eval(&ctx, RationalValue::HALF);
                n_eval += 1;
                bad += (p + q != 1) as usize;
            }
        }
    }
    for l in powers(max_n.min(COMPLEMENT_CAP)).skip(1) {
        let k = 3;
        let (layout, fam) = build_block_hadamard_family(k * l, k)?;
        for t in 1..=(k * l + 1) as u64 {
            let ctx = Context::MeanTime { mean: RationalValue::HALF, time: t };
            let located = layout.locate(t);
            for pair in fam.members().chunks(2) {
                let a = match &pair[0] {
                    crate::groups::GroupFunction::BlockHadamardHalf { a, .. } => *a,
                    _ => unreachable!("block family holds half groups only"),
                };
                let indicator = located.is_some_and(|(b, _)| b == a) as i8;
                n_eval += 1;
                bad += (pair[0].eval(&ctx, RationalValue::HALF) + pair[1].eval(&ctx, RationalValue::HALF) != indicator)
                    as usize;
            }
        }
    }
    out.push(report("complementarity", max_n, n_eval, bad));

    let (mut n_eval, mut bad) = (0, 0);
    let walsh = Arc::new(build_walsh_family(8)?);
    for run in 0..RANDOM_RUNS {
        let mut rng = rng_from_seed(replicate_seed(seed, Stream::Probe, 0x7e1e, run as u64));
        let rounds = random_rounds(64 + 37 * run, 8, 16, &mut rng)?;
        let mut ledger = BiasLedger::new(walsh.clone());
        ledger.record_all(&rounds)?;
        let buckets = ledger.buckets(0).into_iter().fold(Exact::zero(), |acc, (_, b)| acc + b);
        let direct = rounds.iter().fold(Exact::zero(), |acc, r| {
            let d = r.residual().ratio();
            acc + Exact::new(*d.numer() as i128, *d.denom() as i128)
        });
        n_eval += 1;
        bad += (buckets != direct || ledger.total_bias() != direct) as usize;
    }
    out.push(report("telescoping", max_n, n_eval, bad));

    let (mut n_eval, mut bad) = (0, 0);
    for (run, l) in powers(max_n.min(PREFIX_CAP)).skip(1).enumerate() {
        let mut rng = rng_from_seed(replicate_seed(seed, Stream::Probe, 0x9a25, run as u64));
        let rounds = random_rounds(2 * l, 8, 16, &mut rng)?;
        let (layout, _) = build_block_hadamard_family(2 * l, 2)?;
        let dec = block_decompose(&rounds, layout)?;
        for a in 1..=layout.blocks() {
            let lhs = dec.bias_energy(a);
            let rhs = l as f64 * dec.energy(a);
            n_eval += 1;
            bad += ((lhs - rhs).abs() > 1e-9 * rhs.abs().max(f64::MIN_POSITIVE)) as usize;
        }
    }
    out.push(report("parseval", max_n, n_eval, bad));

    // integer transforms round-trip up to a factor n
    let (mut n_eval, mut bad) = (0, 0);
    for n in powers(max_n) {
        let mut rng = rng_from_seed(replicate_seed(seed, Stream::Probe, 0xf417, n as u64));
        let orig: Vec<i64> = (0..n).map(|_| rng.random_range(-1000..=1000)).collect();
        let mut v = orig.clone();
        fwht_in_place(&mut v)?;
        fwht_in_place(&mut v)?;
        n_eval += 1;
        bad += v.iter().zip(&orig).any(|(a, b)| *a != n as i64 * b) as usize;
    }
    out.push(report("fwht_involution", max_n, n_eval, bad));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_at_256() {
        let reports = identity_suite(256, 1).unwrap();
        assert_eq!(reports.len(), 7);
        for r in &reports {
            assert!(r.pass, "{r}");
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(identity_suite(100, 0).is_err());
    }
}
