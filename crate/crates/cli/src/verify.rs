//! Quick invariant checks built from the configured model. Each item prints
//! one PASS or FAIL line; the run fails if any item does.

use std::f64::consts::PI;

use sks_core::diagnostics::{lp_balance_residual, second_moment};
use sks_core::domain::{lp_norm_pow, DomainSpec, ModelParams};
use sks_core::io::{RunConfig, Snapshot};
use sks_core::moments::{brownian_event_probability, BrownianEventSpec};
use sks_core::noise::{BrownianPath, NoiseSpec, PhiMap};
use sks_core::potential::PotentialSolver;
use sks_core::solver::{no_noise_path, Solver, SolverConfig};
use sks_core::{make_gaussian_field, mass, Result, RngContext};

struct Item {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn item(name: &'static str, check: Result<(bool, String)>) -> Item {
    match check {
        Ok((passed, detail)) => Item { name, passed, detail },
        Err(e) => Item {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

pub fn run(cfg: &RunConfig, quiet: bool) -> Result<bool> {
    let domain = cfg.domain()?;
    let params = cfg.params()?;
    let solver = cfg.solver()?;
    let spec = cfg.experiment()?;
    let ctx = RngContext::new(spec.seed, 0);
    // Transport noise needs ν² > 0; fall back to half of `a`.
    let transport = if params.sigma > 0.0 && params.nu_sq() > 0.0 {
        params
    } else {
        params.with_sigma(0.5 * params.a)
    };
    let mut items = vec![
        item("stability guard", stability_guard(&solver, &domain, &params)),
        item("mass conservation", mass_conservation(&domain, &transport, &solver, spec.m0, spec.width, ctx)),
        item("mass oracle", mass_oracle(&domain, &params, spec.m0, spec.width, ctx)),
        item("virial slope", virial_slope(&domain, &params, spec.m0, spec.width)),
        item("event probability", event_probability(ctx)),
        item("lp balance refinement", lp_refinement(&domain, &transport, spec.m0, spec.width, ctx)),
        item("snapshot round trip", snapshot_round_trip(&domain, &params, spec.m0, spec.width)),
    ];
    if let Some(path) = cfg.initial_snapshot() {
        items.push(item("initial snapshot", initial_snapshot(cfg, &path)));
    }
    let mut all = true;
    for it in &items {
        all &= it.passed;
        if !quiet || !it.passed {
            let tag = if it.passed { "PASS" } else { "FAIL" };
            println!("{tag} {}: {}", it.name, it.detail);
        }
    }
    Ok(all)
}

fn stability_guard(solver: &SolverConfig, domain: &DomainSpec, params: &ModelParams) -> Result<(bool, String)> {
    Ok(match solver.validate(domain, params) {
        Ok(()) => (true, format!("dt = {} accepted", solver.dt)),
        Err(e) => (false, e.to_string()),
    })
}

/// Largest per-step relative mass change over 100 transport-noise steps.
fn mass_conservation(
    domain: &DomainSpec,
    params: &ModelParams,
    solver: &SolverConfig,
    m0: f64,
    width: f64,
    ctx: RngContext,
) -> Result<(bool, String)> {
    let rho0 = make_gaussian_field(*domain, m0, width, (0.0, 0.0))?;
    let mut cfg = solver.clone();
    cfg.t_end = 100.0 * cfg.dt;
    let s = Solver::new(*params, NoiseSpec::Divergence, cfg.clone(), &rho0)?;
    let path = BrownianPath::sample(2, cfg.dt, cfg.steps(), ctx.substream(1))?;
    let mut prev = mass(&rho0);
    let mut worst = 0.0f64;
    s.run_observed(&rho0, &path, |st| {
        let m = mass(&st.rho);
        worst = worst.max((m - prev).abs() / prev);
        prev = m;
    })?;
    Ok((worst <= 1e-10, format!("max relative drift per step {worst:.2e} (limit 1e-10)")))
}

/// Constant-mode linear noise against `m₀ exp(−σ²t/2 + σW)`.
fn mass_oracle(domain: &DomainSpec, params: &ModelParams, m0: f64, width: f64, ctx: RngContext) -> Result<(bool, String)> {
    let rho0 = make_gaussian_field(*domain, m0, width, (0.0, 0.0))?;
    let sigma = params.sigma.max(0.5);
    let p = params.with_sigma(sigma);
    let cfg = SolverConfig::new(1e-3, 0.1);
    let noise = NoiseSpec::constant_mode(*domain, PhiMap::Linear)?;
    let s = Solver::new(p, noise, cfg.clone(), &rho0)?;
    let path = BrownianPath::sample(1, cfg.dt, cfg.steps(), ctx.substream(2))?;
    let state = s.run_observed(&rho0, &path, |_| {})?;
    let w = path.values(0)[cfg.steps()];
    let exact = mass(&rho0) * (-0.5 * sigma * sigma * cfg.t_end + sigma * w).exp();
    let err = (mass(&state.rho) - exact).abs() / exact;
    Ok((err <= 1e-3, format!("relative error {err:.2e} at t = 0.1 (limit 1e-3)")))
}

/// Noise-free second-moment slope over `[0, 0.05]` against
/// `2a²m₀ − χm₀²/2π`, within 2% of the diffusive rate `2a²m₀`.
fn virial_slope(domain: &DomainSpec, params: &ModelParams, m0: f64, width: f64) -> Result<(bool, String)> {
    let rho0 = make_gaussian_field(*domain, m0, width, (0.0, 0.0))?;
    let p = params.with_sigma(0.0);
    let cfg = SolverConfig::new(1e-3, 0.05);
    let s = Solver::new(p, NoiseSpec::None, cfg.clone(), &rho0)?;
    let state = s.run_observed(&rho0, &no_noise_path(cfg.dt), |_| {})?;
    let measured = (second_moment(&state.rho) - second_moment(&rho0)) / state.t;
    let mass0 = mass(&rho0);
    let diffusive = 2.0 * p.a * p.a * mass0;
    let expected = diffusive - p.chi / (2.0 * PI) * mass0 * mass0;
    let err = (measured - expected).abs() / diffusive;
    Ok((err <= 0.02, format!("slope {measured:.4} vs {expected:.4}")))
}

/// Monte Carlo estimate against the reflection formula at σ = 1, α = 0.5,
/// β = 1, t = 1.
fn event_probability(ctx: RngContext) -> Result<(bool, String)> {
    let spec = BrownianEventSpec::new(0.5, 1.0, 1.0)?;
    let est = brownian_event_probability(&spec, 1.0, 20_000, 200, ctx.substream(3), true)?;
    let z = (est.mc_estimate - est.closed_form).abs() / est.std_error;
    Ok((
        z <= 3.0,
        format!("MC {:.4} vs closed form {:.4} ({z:.2} standard errors)", est.mc_estimate, est.closed_form),
    ))
}

/// The `L^p` balance residual shrinks when `dt` halves and `n` doubles.
fn lp_refinement(domain: &DomainSpec, params: &ModelParams, m0: f64, width: f64, ctx: RngContext) -> Result<(bool, String)> {
    let coarse = DomainSpec::new(domain.half_width(), 64)?;
    let fine_path = BrownianPath::sample(2, 0.005, 40, ctx.substream(4))?;
    let mut residuals = Vec::new();
    for (d, path) in [(coarse, fine_path.coarsen(2)?), (coarse.refined(2)?, fine_path)] {
        let rho0 = make_gaussian_field(d, m0, width, (0.0, 0.0))?;
        let mut cfg = SolverConfig::new(path.dt(), 0.2);
        cfg.positivity_tol = 1e-6;
        let s = Solver::new(*params, NoiseSpec::Divergence, cfg.clone(), &rho0)?;
        let traj = s.run(&rho0, &path, 1)?;
        let pot = PotentialSolver::new(d, cfg.kernel).background_correction(cfg.background_correction);
        let r = lp_balance_residual(&traj.times, &traj.fields, params, &pot)?;
        let worst = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        residuals.push(worst / lp_norm_pow(&rho0, params.p));
    }
    let ratio = residuals[0] / residuals[1];
    Ok((
        ratio >= 1.5,
        format!("relative residual {:.2e} -> {:.2e}, ratio {ratio:.2}", residuals[0], residuals[1]),
    ))
}

fn initial_snapshot(cfg: &RunConfig, path: &std::path::Path) -> Result<(bool, String)> {
    let rho0 = crate::commands::initial_density(cfg)?;
    Ok((true, format!("{} read, mass {}", path.display(), mass(&rho0))))
}

fn snapshot_round_trip(domain: &DomainSpec, params: &ModelParams, m0: f64, width: f64) -> Result<(bool, String)> {
    let rho0 = make_gaussian_field(*domain, m0, width, (0.0, 0.0))?;
    let snap = Snapshot::new(0.0, params, rho0);
    let back = Snapshot::from_bytes(&snap.to_bytes())?;
    let exact = back
        .field
        .values()
        .iter()
        .zip(snap.field.values())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    Ok((exact && back.params_digest == snap.params_digest, "bit-exact".into()))
}
