//! Tables and text reports for the run outputs.

use std::fmt::Write as _;

use crate::diagnostics::{BlowupReport, DiagnosticsRecord};
use crate::ensemble::EnsembleSummary;
use crate::error::Result;
use crate::particles::ParticleState;

use super::table::{cell, opt_cell, Table};

/// One row per output time of a single run.
pub fn diagnostics_table(records: &[DiagnosticsRecord], p_list: &[f64]) -> Result<Table> {
    let mut t = Table::new("diagnostics", "one row per output time of a single path")
        .column("t", "time", "output time")
        .column("mass", "mass", "integral of rho")
        .column("second_moment", "mass*length^2", "integral of |x|^2 rho")
        .column("cutoff_moment", "mass*length^2", "integral of phi_eps rho; empty without a cutoff");
    for p in p_list {
        t = t.column(&format!("lp_{p}"), "mass/length^(2-2/p)", &format!("L^{p} norm of rho"));
    }
    t = t
        .column("h1", "-", "H^1 norm of rho")
        .column("hessian", "-", "L^2 norm of the Hessian of rho")
        .column("sup", "mass/length^2", "max of |rho|")
        .column("sup_on_ball", "mass/length^2", "max of |rho| on the detector ball")
        .column("blown_up", "0/1", "sup-norm cap exceeded at this time");
    for r in records {
        let mut row = vec![cell(r.t), cell(r.mass), cell(r.second_moment)];
        row.push(if r.cutoff_moment.is_nan() { String::new() } else { cell(r.cutoff_moment) });
        row.extend(r.lp_norms.iter().map(|v| cell(*v)));
        row.extend([cell(r.h1), cell(r.hessian), cell(r.sup), cell(r.sup_on_ball)]);
        row.push((r.blown_up as u8).to_string());
        t.push(row)?;
    }
    Ok(t)
}

pub fn blowup_text(report: &BlowupReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "kind = {}", report.kind.name());
    let _ = writeln!(s, "firing_time = {}", opt_cell(report.firing_time));
    let _ = writeln!(s, "theoretical_bound = {}", opt_cell(report.theoretical_bound));
    if let Some(ok) = report.within_bound() {
        let _ = writeln!(s, "within_bound = {ok}");
    }
    for (kind, t) in &report.firings {
        let _ = writeln!(s, "fired {} at {t}", kind.name());
    }
    for (name, values) in &report.evidence {
        let vals: Vec<String> = values.iter().map(|v| cell(*v)).collect();
        let _ = writeln!(s, "evidence {name} = {}", vals.join(","));
    }
    s
}

/// Series statistics in long form: one row per (series, output time).
pub fn series_table(summary: &EnsembleSummary) -> Result<Table> {
    let mut t = Table::new("series", "ensemble statistics of each diagnostic at each output time")
        .column("series", "-", "diagnostic name")
        .column("t", "time", "output time")
        .column("mean", "as series", "sample mean over running paths")
        .column("variance", "as series^2", "unbiased sample variance")
        .column("std_error", "as series", "standard error of the mean")
        .column("count", "paths", "paths still running");
    for s in &summary.series {
        for (time, st) in summary.times.iter().zip(&s.stats) {
            t.push(vec![
                s.name.clone(),
                cell(*time),
                cell(st.mean),
                cell(st.variance),
                cell(st.std_error),
                st.count.to_string(),
            ])?;
        }
    }
    Ok(t)
}

pub fn paths_table(summary: &EnsembleSummary) -> Result<Table> {
    let mut t = Table::new("paths", "one row per path")
        .column("index", "-", "path index")
        .column("stream", "-", "random stream id derived from the master seed")
        .column("firing_time", "time", "first blowup or contradiction time; empty if none")
        .column("final_time", "time", "last simulated time")
        .column("value", "-", "experiment-specific per-path scalar");
    for r in &summary.path_records {
        t.push(vec![
            r.index.to_string(),
            r.stream.to_string(),
            opt_cell(r.firing_time),
            cell(r.final_time),
            cell(r.value),
        ])?;
    }
    Ok(t)
}

pub fn metrics_table(summary: &EnsembleSummary) -> Result<Table> {
    let mut t = Table::new("metrics", "named scalar results of the experiment")
        .column("name", "-", "metric name")
        .column("value", "-", "metric value");
    for (k, v) in &summary.metrics {
        t.push(vec![k.clone(), cell(*v)])?;
    }
    Ok(t)
}

pub fn sweep_table(summary: &EnsembleSummary) -> Result<Table> {
    let mut t = Table::new("sweep", "statistics at each value of the experiment sweep")
        .column("label", "-", "sweep point")
        .column("value", "-", "sweep parameter")
        .column("mean", "-", "sample mean")
        .column("std_error", "-", "standard error")
        .column("count", "paths", "samples");
    for r in &summary.sweep {
        t.push(vec![
            r.label.clone(),
            cell(r.value),
            cell(r.stat.mean),
            cell(r.stat.std_error),
            r.stat.count.to_string(),
        ])?;
    }
    Ok(t)
}

/// Run manifest: what ran, with which seed, and the headline results.
pub fn manifest_text(summary: &EnsembleSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "experiment = {}", summary.kind.name());
    let _ = writeln!(s, "paths = {}", summary.paths);
    let _ = writeln!(s, "seed = {}", summary.seed);
    let _ = writeln!(s, "blowup_fraction = {}", summary.blowup_fraction);
    for (q, t) in &summary.firing_quantiles {
        let _ = writeln!(s, "firing_quantile_{q} = {t}");
    }
    let _ = writeln!(s, "passed = {}", summary.passed());
    for f in &summary.failures {
        let _ = writeln!(s, "failure: {f}");
    }
    s
}

/// Particle positions at one time.
pub fn particle_table(name: &str, state: &ParticleState) -> Result<Table> {
    let mut t = Table::new(name, "particle positions at one output time")
        .column("id", "-", "particle index")
        .column("x", "length", "first coordinate")
        .column("y", "length", "second coordinate");
    for (k, p) in state.positions.iter().enumerate() {
        t.push(vec![k.to_string(), cell(p[0]), cell(p[1])])?;
    }
    Ok(t)
}

/// Moments of a particle trajectory.
pub fn particle_moments_table(states: &[ParticleState]) -> Result<Table> {
    let mut t = Table::new("particle_moments", "empirical moments of the particle system")
        .column("t", "time", "output time")
        .column("centroid_x", "length", "mean first coordinate")
        .column("centroid_y", "length", "mean second coordinate")
        .column("second_moment", "mass*length^2", "mass-weighted mean of |x|^2")
        .column("min_pair_distance", "length", "smallest periodic pair distance");
    for s in states {
        let c = s.centroid();
        t.push(vec![
            cell(s.t),
            cell(c[0]),
            cell(c[1]),
            cell(s.second_moment()),
            cell(s.min_pair_distance()),
        ])?;
    }
    Ok(t)
}
