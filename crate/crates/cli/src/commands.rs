use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use caliblab_core::environments::{EnvKind, EnvSpec};
use caliblab_core::exec::{configure_workers, ExecMode};
use caliblab_core::experiments::{
    run_oracle_bound, run_reduction_bound, run_scaling, BlockRule, ExperimentConfig, GroupsSpec, OracleConfig,
    ReductionConfig, HONEST_EXPONENT_WINDOW,
};
use caliblab_core::export;
use caliblab_core::forecasters::{ForecasterSpec, UpdatePolicy, WeightRule};
use caliblab_core::identities::identity_suite;
use caliblab_core::probes::{
    bucketing_probe, martingale_transform_probe, return_pmf_probe, truncated_root_return_probe, AllOnes,
    IndicatorStrategy, ProbeReport, StopWhenSmall, StrategyKind, Thinned,
};
use caliblab_core::RationalValue;

use crate::config::{parse_counts, Config};
use crate::manifest::{now_ms, RunManifest, MANIFEST_FILE};
use crate::{CliError, Command, ProbeArgs, RunArgs};

const DEFAULT_OUT: &str = "caliblab-out";
const PROBES: [&str; 5] = ["return-pmf", "root-return", "martingale", "bucketing", "identities"];

const RUN_KEYS: [&str; 6] = ["run.replicates", "run.seed", "run.workers", "run.mode", "output.dir", "output.extra"];
const SCALING_KEYS: [&str; 11] = [
    "experiment.id",
    "env.kind",
    "env.m",
    "env.k",
    "env.T",
    "forecaster.id",
    "groups.kind",
    "groups.delta",
    "groups.blocks",
    "run.pathwise_checks",
    "assert.exponent_window",
];
const ORACLE_KEYS: [&str; 6] =
    ["env.k", "env.T", "forecaster.id", "oracle.copies", "oracle.weight_rule", "oracle.update_policy"];
const REDUCTION_KEYS: [&str; 7] =
    ["env.kind", "env.m", "env.k", "env.T", "groups.kind", "forecaster.id", "reduction.envelope_replicates"];
const PROBE_KEYS: [&str; 8] =
    ["probe.name", "probe.n", "probe.reps", "probe.L", "probe.strategy", "probe.h", "probe.x", "probe.indicator"];

/// Run a parsed command; `Ok(false)` means an asserted check failed.
pub fn dispatch(command: Command, overrides: &[String]) -> Result<bool, CliError> {
    match command {
        Command::Scaling(args) => {
            let cfg = load(&args, overrides, &SCALING_KEYS)?;
            scaling(&cfg, &args)
        }
        Command::Bounds { which, run } => match which.as_str() {
            "oracle" => {
                let cfg = load(&run, overrides, &ORACLE_KEYS)?;
                oracle(&cfg, &run)
            }
            "reduction" => {
                let cfg = load(&run, overrides, &REDUCTION_KEYS)?;
                reduction(&cfg, &run)
            }
            other => Err(CliError::Usage(format!("unknown bound check `{other}` (expected oracle or reduction)"))),
        },
        Command::Probe(args) => probe(&args, overrides),
    }
}

fn load(args: &RunArgs, overrides: &[String], keys: &[&str]) -> Result<Config, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            Config::parse(&text)?
        }
        None => Config::default(),
    };
    cfg.apply_env()?;
    for o in overrides {
        cfg.set_pair(o)?;
    }
    let known: Vec<&str> = keys.iter().chain(RUN_KEYS.iter()).copied().collect();
    cfg.check_keys(&known)?;
    Ok(cfg)
}

fn exec_mode(cfg: &Config) -> Result<ExecMode, CliError> {
    configure_workers(cfg.count("run.workers")?);
    match cfg.str_or("run.mode", "parallel") {
        "parallel" => Ok(ExecMode::Parallel),
        "sequential" => Ok(ExecMode::Sequential),
        other => Err(CliError::Config(format!("`run.mode`: expected parallel or sequential, got `{other}`"))),
    }
}

fn out_dir(cfg: &Config, flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = flag.clone().unwrap_or_else(|| PathBuf::from(cfg.str_or("output.dir", DEFAULT_OUT)));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn env_spec(cfg: &Config) -> Result<EnvSpec, CliError> {
    Ok(match EnvKind::parse(cfg.str_or("env.kind", "bernoulli"))? {
        EnvKind::Bernoulli => EnvSpec::Bernoulli { m: cfg.count("env.m")? },
        EnvKind::Rademacher => EnvSpec::Rademacher,
        EnvKind::Bits => EnvSpec::Bits { k: cfg.parsed_or("env.k", 3u8)? },
    })
}

fn block_rule(cfg: &Config) -> Result<BlockRule, CliError> {
    Ok(match cfg.str_or("groups.blocks", "default") {
        "default" => BlockRule::Default,
        "asymptotic" => BlockRule::Asymptotic,
        other => BlockRule::Fixed(
            other.parse().map_err(|_| CliError::Config(format!("`groups.blocks`: cannot parse `{other}`")))?,
        ),
    })
}

fn write_csv<F>(dir: &Path, name: &str, outputs: &mut Vec<String>, f: F) -> Result<(), CliError>
where
    F: FnOnce(BufWriter<File>) -> caliblab_core::Result<()>,
{
    f(BufWriter::new(File::create(dir.join(name))?))?;
    outputs.push(name.to_string());
    Ok(())
}

fn finish(
    command: &str,
    cfg: &Config,
    dir: &Path,
    started: u128,
    mut outputs: Vec<String>,
) -> Result<(), CliError> {
    outputs.push(MANIFEST_FILE.to_string());
    RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_digest: cfg.digest(),
        seed: cfg.parsed_or("run.seed", 0u64)?,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        outputs,
    }
    .write(dir)
}

fn window(s: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::Config(format!("`assert.exponent_window`: expected `lo,hi`, got `{s}`"));
    let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

fn scaling(cfg: &Config, args: &RunArgs) -> Result<bool, CliError> {
    let started = now_ms();
    let env = env_spec(cfg)?;
    let forecaster = ForecasterSpec::parse(cfg.str_or("forecaster.id", "honest"))?;
    let groups = GroupsSpec::parse(cfg.str_or("groups.kind", "pred_dep"))?;
    let mut exp = ExperimentConfig::new(cfg.str_or("experiment.id", "scaling"), env, forecaster, groups);
    exp.horizons = cfg.counts("env.T")?.unwrap_or_else(|| vec![1 << 10]);
    exp.replicates = cfg.count_or("run.replicates", 10)?;
    exp.seed = cfg.parsed_or("run.seed", 0)?;
    exp.delta = cfg.parsed("groups.delta")?;
    exp.blocks = block_rule(cfg)?;
    exp.pathwise_checks = cfg.get("run.pathwise_checks").is_none() || cfg.flag("run.pathwise_checks")?;
    exp.mode = exec_mode(cfg)?;
    let result = run_scaling(&exp)?;

    let dir = out_dir(cfg, &args.out)?;
    let mut outputs = Vec::new();
    write_csv(&dir, "scaling.csv", &mut outputs, |w| export::write_scaling(w, &result))?;
    write_csv(&dir, "per_group.csv", &mut outputs, |w| export::write_per_group(w, &result))?;
    let checks = result.bound_checks();
    if cfg.flag("output.extra")? {
        write_csv(&dir, "diagnostics.csv", &mut outputs, |w| export::write_diagnostics(w, &result))?;
        write_csv(&dir, "bound_checks.csv", &mut outputs, |w| export::write_bound_checks(w, &checks))?;
    }
    finish("scaling", cfg, &dir, started, outputs)?;

    for row in &result.rows {
        println!(
            "T={} replicates={} mean_mcerr={:.4} stderr={:.4} argmax={}",
            row.horizon, row.replicates, row.mcerr.mean, row.mcerr.stderr, row.argmax_group
        );
    }
    let mut passed = checks.iter().all(|c| c.pass);
    for c in checks.iter().filter(|c| !c.pass) {
        println!("check failed: {} measured={} bound={}", c.check_id, c.measured, c.bound);
    }
    let default_window = (exp.forecaster == ForecasterSpec::Honest
        && exp.groups == GroupsSpec::PredDep
        && exp.env.kind() == EnvKind::Bernoulli)
        .then_some(HONEST_EXPONENT_WINDOW);
    let target = match cfg.get("assert.exponent_window") {
        Some(s) => Some(window(s)?),
        None => default_window,
    };
    if let Some(fit) = result.fit {
        println!("exponent={:.4} stderr={:.4}", fit.slope, fit.stderr);
        if let Some((lo, hi)) = target {
            let inside = fit.slope >= lo && fit.slope <= hi;
            println!("exponent window [{lo}, {hi}]: {}", if inside { "inside" } else { "outside" });
            passed &= inside;
        }
    }
    Ok(passed || !args.assert)
}

fn oracle(cfg: &Config, args: &RunArgs) -> Result<bool, CliError> {
    let started = now_ms();
    let k: u8 = cfg.parsed_or("env.k", 3)?;
    if !(1..=16).contains(&k) {
        return Err(CliError::Config(format!("`env.k` = {k} must lie in 1..=16")));
    }
    let horizon = cfg.count_or("env.T", 10_000)?;
    let mut oc = OracleConfig::new(horizon, k);
    if let Some(id) = cfg.get("forecaster.id") {
        oc.oracle = ForecasterSpec::parse(id)?;
    }
    oc.copies = cfg.count_or("oracle.copies", 1)?;
    oc.rule = WeightRule::parse(cfg.str_or("oracle.weight_rule", "uniform"))?;
    oc.policy = UpdatePolicy::parse(cfg.str_or("oracle.update_policy", "largest_weight"))?;
    oc.replicates = cfg.count_or("run.replicates", 100)?;
    oc.seed = cfg.parsed_or("run.seed", 0)?;
    oc.mode = exec_mode(cfg)?;
    let result = run_oracle_bound(&oc)?;
    let checks = result.bound_checks(oc.copies, 1 << k);

    let dir = out_dir(cfg, &args.out)?;
    let mut outputs = Vec::new();
    write_csv(&dir, "bound_checks.csv", &mut outputs, |w| export::write_bound_checks(w, &checks))?;
    finish("bounds oracle", cfg, &dir, started, outputs)?;
    report_checks(&checks, args.assert, |_| true)
}

fn reduction(cfg: &Config, args: &RunArgs) -> Result<bool, CliError> {
    let started = now_ms();
    let mut rc = ReductionConfig::new(cfg.counts("env.T")?.unwrap_or_else(|| vec![1 << 10, 1 << 14]));
    rc.env = env_spec(cfg)?;
    if let Some(g) = cfg.get("groups.kind") {
        rc.groups = GroupsSpec::parse(g)?;
    }
    if let Some(id) = cfg.get("forecaster.id") {
        rc.oracle = ForecasterSpec::parse(id)?;
    }
    rc.replicates = cfg.count_or("run.replicates", 50)?;
    rc.envelope_replicates = cfg.count_or("reduction.envelope_replicates", rc.replicates)?;
    rc.seed = cfg.parsed_or("run.seed", 0)?;
    rc.mode = exec_mode(cfg)?;
    let result = run_reduction_bound(&rc)?;
    let checks = result.bound_checks();

    let dir = out_dir(cfg, &args.out)?;
    let mut outputs = Vec::new();
    write_csv(&dir, "bound_checks.csv", &mut outputs, |w| export::write_bound_checks(w, &checks))?;
    if cfg.flag("output.extra")? {
        write_csv(&dir, "router_cells.csv", &mut outputs, |w| export::write_router_cells(w, &result))?;
    }
    finish("bounds reduction", cfg, &dir, started, outputs)?;
    // matched-length rows are diagnostics, not assertions
    report_checks(&checks, args.assert, |id| !id.starts_with("diag:"))
}

fn report_checks(
    checks: &[caliblab_core::experiments::BoundCheck],
    assert: bool,
    asserted: impl Fn(&str) -> bool,
) -> Result<bool, CliError> {
    let mut passed = true;
    for c in checks {
        println!(
            "{} measured={:.6} bound={:.6} margin={:.6} {}",
            c.check_id,
            c.measured,
            c.bound,
            c.margin,
            if c.pass { "pass" } else { "FAIL" }
        );
        if asserted(&c.check_id) {
            passed &= c.pass;
        }
    }
    Ok(passed || !assert)
}

fn indicator(s: &str) -> Result<Box<dyn IndicatorStrategy>, CliError> {
    let bad = || CliError::Unresolved(format!("unknown indicator `{s}`"));
    Ok(match s.split_once(':') {
        None if s == "all_ones" => Box::new(AllOnes),
        Some(("stop_when_small", c)) => Box::new(StopWhenSmall { threshold: c.trim().parse().map_err(|_| bad())? }),
        Some(("thinned", frac)) => {
            let (n, d) = frac.split_once('/').ok_or_else(bad)?;
            let (num, den): (u64, u64) = (n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?);
            if den == 0 || num > den {
                return Err(CliError::Config(format!("thinning fraction `{frac}` must lie in [0, 1]")));
            }
            Box::new(Thinned { num, den })
        }
        _ => return Err(bad()),
    })
}

fn probe(args: &ProbeArgs, overrides: &[String]) -> Result<bool, CliError> {
    let started = now_ms();
    if !PROBES.contains(&args.name.as_str()) {
        return Err(CliError::Usage(format!("unknown probe `{}` (expected one of {})", args.name, PROBES.join(", "))));
    }
    let mut cfg = Config::default();
    cfg.set("probe.name", &args.name);
    for (key, value) in [
        ("probe.n", &args.n),
        ("probe.reps", &args.reps),
        ("probe.L", &args.l),
        ("probe.strategy", &args.strategy),
        ("probe.h", &args.h),
        ("probe.x", &args.x),
        ("probe.indicator", &args.indicator),
    ] {
        if let Some(v) = value {
            cfg.set(key, v);
        }
    }
    if let Some(seed) = args.seed {
        cfg.set("run.seed", &seed.to_string());
    }
    if let Some(w) = args.workers {
        cfg.set("run.workers", &w.to_string());
    }
    if args.sequential {
        cfg.set("run.mode", "sequential");
    }
    cfg.apply_env()?;
    for o in overrides {
        cfg.set_pair(o)?;
    }
    let known: Vec<&str> = PROBE_KEYS.iter().chain(RUN_KEYS.iter()).copied().collect();
    cfg.check_keys(&known)?;

    let seed = cfg.parsed_or("run.seed", 0u64)?;
    let mode = exec_mode(&cfg)?;
    let reps = |default| cfg.count_or("probe.reps", default);
    let ls = |default: &str| {
        let s = cfg.str_or("probe.L", default);
        parse_counts(s).ok_or_else(|| CliError::Config(format!("`probe.L`: `{s}` is not a count list")))
    };
    let rational = |key: &str, default: &str| -> Result<RationalValue, CliError> {
        let s = cfg.str_or(key, default);
        s.parse().map_err(|_| CliError::Config(format!("`{key}`: `{s}` is not a rational")))
    };

    let dir = out_dir(&cfg, &args.out)?;
    let mut outputs = Vec::new();
    let reports: Vec<ProbeReport> = match args.name.as_str() {
        "return-pmf" => {
            let n = cfg.count_or("probe.n", 20)?;
            let walks = reps(1_000_000)?;
            let rows = return_pmf_probe(n, walks, seed, mode)?;
            write_csv(&dir, "probe.csv", &mut outputs, |w| export::write_pmf_checks(w, &rows, 3.0))?;
            rows.iter()
                .map(|r| ProbeReport {
                    probe: "return-pmf".into(),
                    parameters: format!("n={}", r.n),
                    estimate: r.empirical,
                    stderr: r.stderr,
                    replicates: walks,
                    bound: r.exact,
                    pass: r.within(3.0),
                })
                .collect()
        }
        "root-return" => truncated_root_return_probe(&ls("2^4..2^12")?, reps(100_000)?, seed, mode)?,
        "martingale" => {
            let rule = indicator(cfg.str_or("probe.indicator", "all_ones"))?;
            let x = rational("probe.x", "1/2")?;
            let n = reps(10_000)?;
            ls("4096")?
                .into_iter()
                .map(|l| Ok(martingale_transform_probe(l, x, rule.as_ref(), n, seed, mode)?.0))
                .collect::<Result<_, CliError>>()?
        }
        "bucketing" => {
            let kinds = match cfg.str_or("probe.strategy", "all") {
                "all" => StrategyKind::ALL.to_vec(),
                s => vec![StrategyKind::parse(s)?],
            };
            let h = rational("probe.h", "1/4")?;
            let n = reps(10_000)?;
            let ls = ls("2^6..2^14")?;
            let mut out = Vec::new();
            for kind in kinds {
                for &l in &ls {
                    out.push(bucketing_probe(l, h, kind, n, seed, mode)?.report);
                }
            }
            out
        }
        "identities" => identity_suite(cfg.count_or("probe.n", 256)?, seed)?,
        _ => unreachable!("probe names are checked above"),
    };
    if outputs.is_empty() {
        write_csv(&dir, "probe.csv", &mut outputs, |w| export::write_probe_reports(w, &reports))?;
    }
    finish("probe", &cfg, &dir, started, outputs)?;
    for r in &reports {
        println!("{r}");
    }
    Ok(reports.iter().all(|r| r.pass) || !args.assert)
}
