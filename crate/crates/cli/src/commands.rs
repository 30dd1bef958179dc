use sks_core::diagnostics::{detect_blowup, CutoffSpec, DetectorConfig, DiagnosticsConfig, Recorder};
use sks_core::ensemble::{run_experiment, sample_path};
use sks_core::io::report::{
    blowup_text, diagnostics_table, manifest_text, metrics_table, particle_moments_table, particle_table,
    paths_table, series_table, sweep_table,
};
use sks_core::io::{OutputDir, RunConfig, Snapshot};
use sks_core::moments::{blowup_mass_condition, blowup_time_bound};
use sks_core::noise::{BrownianPath, NoiseSpec};
use sks_core::particles::{default_delta, sample_gaussian, simulate_particles, ParticleConfig};
use sks_core::solver::Solver;
use sks_core::{make_gaussian_field, Error, Field, Result};

fn open_output(cfg: &RunConfig) -> Result<OutputDir> {
    let mut out = OutputDir::create(&cfg.out_dir())?;
    out.write_text("config.txt", "fully resolved run configuration", &cfg.render())?;
    Ok(out)
}

fn p_list(cfg: &RunConfig) -> Result<Vec<f64>> {
    let spec = cfg.experiment()?;
    let mut list = vec![spec.params.p];
    for p in spec.p_list {
        if !list.contains(&p) {
            list.push(p);
        }
    }
    Ok(list)
}

/// The configured snapshot if any, else the Gaussian of mass `m0`.
pub fn initial_density(cfg: &RunConfig) -> Result<Field> {
    let domain = cfg.domain()?;
    match cfg.initial_snapshot() {
        Some(path) => {
            let snap = Snapshot::read(&path)
                .map_err(|e| Error::Snapshot(format!("{}: {}", path.display(), e)))?;
            if snap.field.domain() != &domain {
                return Err(Error::Config(format!(
                    "snapshot {} is on a different grid than the config",
                    path.display()
                )));
            }
            Ok(snap.field)
        }
        None => {
            let spec = cfg.experiment()?;
            make_gaussian_field(domain, spec.m0, spec.width, (0.0, 0.0))
        }
    }
}

/// Single path drawn from stream 0 of the master seed, the same path an
/// ensemble run uses for its first member.
pub fn simulate(cfg: &RunConfig, quiet: bool) -> Result<u8> {
    let domain = cfg.domain()?;
    let params = cfg.params()?;
    let noise = cfg.noise(domain)?;
    let solver_cfg = cfg.solver()?;
    let spec = cfg.experiment()?;
    let rho0 = initial_density(cfg)?;
    let solver = Solver::new(params, noise.clone(), solver_cfg.clone(), &rho0)?;
    let path = sample_path(&noise, &solver_cfg, spec.path_context(0))?;
    let p_list = p_list(cfg)?;
    // Cutoff radius L/2, so the support of φ_ε just fits in the box.
    let recorder = Recorder::new(
        domain,
        DiagnosticsConfig {
            p_list: p_list.clone(),
            cutoff: Some(CutoffSpec::new(2.0 / domain.half_width())?),
            ..DiagnosticsConfig::default()
        },
    )?;
    let mut out = open_output(cfg)?;
    let every = spec.output_every;
    let snap_every = cfg.snapshot_every();
    let steps = solver_cfg.steps();
    let mut records = Vec::new();
    let mut snapshot_error = None;
    let state = solver.run_observed(&rho0, &path, |s| {
        if s.step % every == 0 || s.step == steps || s.blown_up {
            records.push(recorder.record(s.t, &s.rho, s.blown_up));
        }
        if snap_every > 0 && s.step % snap_every == 0 && snapshot_error.is_none() {
            let file = out.path(&format!("snapshot_{:06}.sks", s.step));
            if let Err(e) = Snapshot::new(s.t, &params, s.rho.clone()).write(&file) {
                snapshot_error = Some(e);
            }
        }
    })?;
    if let Some(e) = snapshot_error {
        return Err(e);
    }
    if snap_every > 0 {
        out.note("snapshot_NNNNNN.sks", "SKS1 binary field snapshot at step NNNNNN");
    }
    out.write_table(&diagnostics_table(&records, &p_list)?)?;
    if state.blown_up {
        let mut det = DetectorConfig::with_cap(solver.cap());
        let m0 = records[0].mass;
        if matches!(noise, NoiseSpec::Divergence | NoiseSpec::None) && blowup_mass_condition(m0, &params) {
            det.theoretical_bound = Some(blowup_time_bound(m0, records[0].second_moment, &params)?);
        }
        let report = detect_blowup(&records, &det);
        out.write_text("blowup.txt", "blowup classification of the run", &blowup_text(&report))?;
        if !quiet {
            println!("blowup at t = {} ({})", state.t, report.kind.name());
        }
    } else if !quiet {
        println!("finished at t = {}, {} records", state.t, records.len());
    }
    out.finish()?;
    Ok(0)
}

pub fn ensemble(cfg: &RunConfig, quiet: bool) -> Result<u8> {
    let spec = cfg.experiment()?;
    let summary = run_experiment(&spec)?;
    let mut out = open_output(cfg)?;
    out.write_table(&series_table(&summary)?)?;
    out.write_table(&paths_table(&summary)?)?;
    out.write_table(&metrics_table(&summary)?)?;
    out.write_table(&sweep_table(&summary)?)?;
    out.write_text("manifest.txt", "experiment, seed and headline results", &manifest_text(&summary))?;
    out.finish()?;
    if !quiet {
        println!("{} over {} paths (seed {})", spec.kind.name(), spec.paths, spec.seed);
        for (k, v) in &summary.metrics {
            println!("  {k} = {v}");
        }
        for f in &summary.failures {
            println!("  failure: {f}");
        }
    }
    Ok(0)
}

/// Particles drawn from stream 1; the common path, when on, is stream 0 as
/// in `simulate`.
pub fn particles(cfg: &RunConfig, quiet: bool) -> Result<u8> {
    let spec = cfg.experiment()?;
    let ctx = spec.path_context(0);
    let count = cfg.particles();
    let state0 = sample_gaussian(count, spec.m0, spec.width, [0.0, 0.0], spec.domain.half_width(), ctx.substream(1))?;
    let mut pcfg = ParticleConfig::new(spec.solver.dt, spec.params, default_delta(&state0))?;
    pcfg.common_noise = spec.particle_common_noise;
    let steps = spec.solver.steps();
    let common = if pcfg.common_noise {
        Some(BrownianPath::sample(2, spec.solver.dt, steps, ctx)?)
    } else {
        None
    };
    let traj = simulate_particles(&state0, &pcfg, steps, spec.output_every, ctx.substream(2), common.as_ref())?;
    let mut out = open_output(cfg)?;
    out.write_table(&particle_moments_table(&traj.states)?)?;
    let snap_every = cfg.snapshot_every();
    for (k, s) in traj.states.iter().enumerate() {
        let step = (s.t / spec.solver.dt).round() as usize;
        let last = k + 1 == traj.states.len();
        if k == 0 || last || (snap_every > 0 && step % snap_every == 0) {
            out.write_table(&particle_table(&format!("particles_{step:06}"), s)?)?;
        }
    }
    out.finish()?;
    if !quiet {
        let last = traj.states.last().expect("initial state is recorded");
        println!("{count} particles to t = {}, second moment {}", last.t, last.second_moment());
    }
    Ok(0)
}

