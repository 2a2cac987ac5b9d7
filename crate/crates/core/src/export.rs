//! CSV writers. Floats carry 17 significant digits so reruns compare byte for byte.

use std::io::Write;

use crate::calibration::{BlockDecomposition, CalibrationReport};
use crate::experiments::{BoundCheck, ReductionResult, ScalingResult};
use crate::groups::GroupFamily;
use crate::probes::{PmfCheck, ProbeReport};
use crate::Result;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

fn flag(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

pub fn write_report<W: Write>(out: W, report: &CalibrationReport) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["group_id", "err"])?;
    for (id, err) in report.rows() {
        w.write_record([id, &fmt_f64(err)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_decomposition<W: Write>(out: W, dec: &BlockDecomposition) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["block", "j", "bucket_value", "bias", "noise"])?;
    for (a, j, v, d, nz) in dec.rows() {
        w.write_record([a.to_string(), j.to_string(), v.to_string(), fmt_f64(d), fmt_f64(nz)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_family<W: Write>(out: W, family: &GroupFamily) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["group_id", "kind", "parameters"])?;
    for g in family.members() {
        w.write_record([g.id().as_str(), g.kind_name(), &g.params()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_probe_reports<W: Write>(out: W, reports: &[ProbeReport]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["probe", "parameters", "estimate", "stderr", "replicates", "bound", "pass"])?;
    for r in reports {
        w.write_record([
            r.probe.clone(),
            r.parameters.clone(),
            fmt_f64(r.estimate),
            fmt_f64(r.stderr),
            r.replicates.to_string(),
            fmt_f64(r.bound),
            flag(r.pass).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pmf_checks<W: Write>(out: W, rows: &[PmfCheck], sigmas: f64) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["n", "exact", "empirical", "stderr", "pass"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            fmt_f64(r.exact),
            fmt_f64(r.empirical),
            fmt_f64(r.stderr),
            flag(r.within(sigmas)).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scaling<W: Write>(out: W, result: &ScalingResult) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["experiment_id", "T", "replicate_count", "mean_mcerr", "stderr", "argmax_group"])?;
    for row in &result.rows {
        w.write_record([
            result.experiment_id.clone(),
            row.horizon.to_string(),
            row.replicates.to_string(),
            fmt_f64(row.mcerr.mean),
            fmt_f64(row.mcerr.stderr),
            row.argmax_group.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_per_group<W: Write>(out: W, result: &ScalingResult) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["experiment_id", "T", "group_id", "mean_err"])?;
    for row in &result.rows {
        for (id, err) in &row.per_group {
            w.write_record([result.experiment_id.clone(), row.horizon.to_string(), id.clone(), fmt_f64(*err)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-horizon diagnostics as `(experiment_id, T, name, mean, stderr)`.
pub fn write_diagnostics<W: Write>(out: W, result: &ScalingResult) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["experiment_id", "T", "diagnostic", "mean", "stderr"])?;
    for row in &result.rows {
        for (name, s) in &row.diagnostics {
            w.write_record([
                result.experiment_id.clone(),
                row.horizon.to_string(),
                name.clone(),
                fmt_f64(s.mean),
                fmt_f64(s.stderr),
            ])?;
        }
        if let Some(floor) = row.noise_floor {
            w.write_record([
                result.experiment_id.clone(),
                row.horizon.to_string(),
                "noise_floor".into(),
                fmt_f64(floor),
                fmt_f64(0.0),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_bound_checks<W: Write>(out: W, checks: &[BoundCheck]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["check_id", "measured", "bound", "margin", "pass"])?;
    for c in checks {
        w.write_record([
            c.check_id.clone(),
            fmt_f64(c.measured),
            fmt_f64(c.bound),
            fmt_f64(c.margin),
            flag(c.pass).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Router cells as `(T, pattern, mean T_z, mean cell Err)`.
pub fn write_router_cells<W: Write>(out: W, result: &ReductionResult) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["T", "pattern", "mean_rounds", "mean_err"])?;
    for row in &result.rows {
        for (z, n, e) in &row.cells {
            w.write_record([row.horizon.to_string(), z.clone(), fmt_f64(*n), fmt_f64(*e)])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::BoundCheck;

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(17.08984375), "1.7089843750000000e1");
        assert_eq!(fmt_f64(1.0 / 3.0).parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn bound_check_csv_layout() {
        let mut buf = Vec::new();
        write_bound_checks(&mut buf, &[BoundCheck::at_least("x,y", 2.0, 1.0)]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s,
            "check_id,measured,bound,margin,pass\n\"x,y\",2.0000000000000000e0,1.0000000000000000e0,1.0000000000000000e0,true\n"
        );
    }
}
