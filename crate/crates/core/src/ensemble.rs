//! Monte Carlo experiments over many driving paths.
//!
//! Every path `k` draws from `RngContext::new(seed, 0).substream(k)`, owns its
//! solver, and runs on the rayon pool. Results are collected in path order,
//! so a summary is a pure function of the spec and its seed.

use rayon::prelude::*;

use crate::diagnostics::{second_moment, DiagnosticsConfig, DiagnosticsRecord, Recorder};
use crate::domain::{lp_norm, lp_norm_pow, make_gaussian_field, DomainSpec, Field, ModelParams, RngContext};
use crate::error::{Error, Result};
use crate::moments::{
    blowup_mass_condition, blowup_time_bound, smallness_boundary, smallness_condition, sweep_events,
    EventSweepPoint, MomentOracle,
};
use crate::noise::{make_fourier_basis, BrownianPath, NoiseSpec, PhiMap};
use crate::particles::{
    chaos_gap, default_delta, rule_of_thumb_bandwidth, sample_gaussian, simulate_particles, ParticleConfig,
};
use crate::potential::estimate_cp;
use crate::solver::{no_noise_path, picard_iterate, Solver, SolverConfig, SolverState, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    GlobalExistence,
    SupercriticalDivergence,
    SupercriticalGeneral,
    AnyMassBlowup,
    SmallPerturbation,
    ContinuousDependence,
    PicardContraction,
    ParticleChaos,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::GlobalExistence,
        ExperimentKind::SupercriticalDivergence,
        ExperimentKind::SupercriticalGeneral,
        ExperimentKind::AnyMassBlowup,
        ExperimentKind::SmallPerturbation,
        ExperimentKind::ContinuousDependence,
        ExperimentKind::PicardContraction,
        ExperimentKind::ParticleChaos,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::GlobalExistence => "global_existence",
            ExperimentKind::SupercriticalDivergence => "supercritical_divergence",
            ExperimentKind::SupercriticalGeneral => "supercritical_general",
            ExperimentKind::AnyMassBlowup => "any_mass_blowup",
            ExperimentKind::SmallPerturbation => "small_perturbation",
            ExperimentKind::ContinuousDependence => "continuous_dependence",
            ExperimentKind::PicardContraction => "picard_contraction",
            ExperimentKind::ParticleChaos => "particle_chaos",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown experiment kind '{s}'")))
    }
}

/// Everything an experiment needs. The initial density is a Gaussian of mass
/// `m0` and width `width` at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub paths: usize,
    pub seed: u64,
    pub domain: DomainSpec,
    pub params: ModelParams,
    pub solver: SolverConfig,
    pub m0: f64,
    pub width: f64,
    /// Diagnostics are recorded every this many steps.
    pub output_every: usize,
    /// Norm exponents recorded besides `params.p`.
    pub p_list: Vec<f64>,
    /// Sweep values: `ε` for small perturbation, relative data gaps for
    /// continuous dependence, horizons for Picard, particle counts for chaos.
    pub sweep: Vec<f64>,
    /// Constant of the smallness condition; estimated from Gaussian probes
    /// when absent.
    pub smallness_constant: Option<f64>,
    /// Relative slack on the norm bound of the global-existence runner.
    pub norm_tolerance: f64,
    /// Basis size and leading weight of the general-regime supercritical run.
    pub noise_modes: usize,
    pub alpha0: f64,
    /// `(α, β)` grid of the any-mass runner and the search limit for `t₂`.
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub t2_max: f64,
    pub picard_iterations: usize,
    /// Run the particle comparison against the transport-noise field with a
    /// shared path.
    pub particle_common_noise: bool,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, domain: DomainSpec, params: ModelParams, solver: SolverConfig) -> Self {
        Self {
            kind,
            paths: 50,
            seed: 0,
            domain,
            params,
            solver,
            m0: 1.0,
            width: 1.0,
            output_every: 10,
            p_list: vec![2.0],
            sweep: Vec::new(),
            smallness_constant: None,
            norm_tolerance: 0.01,
            noise_modes: 5,
            alpha0: 1.0,
            alphas: vec![0.25, 0.5, 1.0, 2.0],
            betas: vec![0.5, 1.0, 2.0],
            t2_max: 100.0,
            picard_iterations: 6,
            particle_common_noise: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::InvalidParameter("an ensemble needs at least one path".into()));
        }
        if self.output_every == 0 {
            return Err(Error::InvalidParameter("output interval must be at least one step".into()));
        }
        self.params.validate()
    }

    pub fn initial_density(&self) -> Result<Field> {
        make_gaussian_field(self.domain, self.m0, self.width, (0.0, 0.0))
    }

    pub fn path_context(&self, k: usize) -> RngContext {
        RngContext::new(self.seed, 0).substream(k as u64)
    }

    fn recorder(&self) -> Result<Recorder> {
        let mut p_list = vec![self.params.p];
        for &p in &self.p_list {
            if !p_list.contains(&p) {
                p_list.push(p);
            }
        }
        Recorder::new(
            self.domain,
            DiagnosticsConfig {
                p_list,
                ..DiagnosticsConfig::default()
            },
        )
    }
}

/// Sample mean, unbiased variance and standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                variance: f64::NAN,
                std_error: f64::NAN,
                count: 0,
            };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let variance = if n > 1 {
            samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            variance,
            std_error: (variance / n as f64).sqrt(),
            count: n,
        }
    }

    /// Half width of the normal 95% interval.
    pub fn ci95(&self) -> f64 {
        1.96 * self.std_error
    }
}

/// Statistics of one diagnostic at each output time, over the paths still
/// running at that time.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSummary {
    pub name: String,
    pub stats: Vec<Stat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub index: usize,
    pub stream: u64,
    pub firing_time: Option<f64>,
    pub final_time: f64,
    /// The runner's per-path scalar (norm ratio, gap, event flag, ...).
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub label: String,
    pub value: f64,
    pub stat: Stat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub kind: ExperimentKind,
    pub paths: usize,
    pub seed: u64,
    pub times: Vec<f64>,
    pub series: Vec<SeriesSummary>,
    pub path_records: Vec<PathRecord>,
    pub blowup_fraction: f64,
    /// `(q, firing time)` over the paths that fired.
    pub firing_quantiles: Vec<(f64, f64)>,
    pub metrics: Vec<(String, f64)>,
    pub sweep: Vec<SweepRow>,
    /// Per-path violations of the runner's own assertions.
    pub failures: Vec<String>,
}

impl EnsembleSummary {
    fn empty(spec: &ExperimentSpec) -> Self {
        Self {
            kind: spec.kind,
            paths: spec.paths,
            seed: spec.seed,
            times: Vec::new(),
            series: Vec::new(),
            path_records: Vec::new(),
            blowup_fraction: 0.0,
            firing_quantiles: Vec::new(),
            metrics: Vec::new(),
            sweep: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    pub fn series(&self, name: &str) -> Option<&SeriesSummary> {
        self.series.iter().find(|s| s.name == name)
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn push_metric(&mut self, name: &str, value: f64) {
        self.metrics.push((name.to_string(), value));
    }

    fn set_firings(&mut self) {
        let mut fired: Vec<f64> = self.path_records.iter().filter_map(|r| r.firing_time).collect();
        self.blowup_fraction = fired.len() as f64 / self.path_records.len().max(1) as f64;
        fired.sort_by(f64::total_cmp);
        self.firing_quantiles = if fired.is_empty() {
            Vec::new()
        } else {
            [0.05, 0.25, 0.5, 0.75, 0.95]
                .iter()
                .map(|&q| (q, quantile(&fired, q)))
                .collect()
        };
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Runs `f` on every path index in parallel, keeping path order.
fn for_paths<T: Send>(paths: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    (0..paths).into_par_iter().map(&f).collect()
}

/// Diagnostics of one solver run at the output times.
struct PathRun {
    records: Vec<DiagnosticsRecord>,
    state: SolverState,
}

fn run_recorded(
    solver: &Solver,
    recorder: &Recorder,
    rho0: &Field,
    path: &BrownianPath,
    every: usize,
) -> Result<PathRun> {
    let steps = solver.config().steps();
    let mut records = Vec::new();
    let state = solver.run_observed(rho0, path, |s| {
        if s.step % every == 0 || s.step == steps || s.blown_up {
            records.push(recorder.record(s.t, &s.rho, s.blown_up));
        }
    })?;
    Ok(PathRun { records, state })
}

fn summarize_series(summary: &mut EnsembleSummary, runs: &[PathRun], p_list: &[f64]) {
    let longest = runs.iter().max_by_key(|r| r.records.len());
    summary.times = longest.map(|r| r.records.iter().map(|x| x.t).collect()).unwrap_or_default();
    let len = summary.times.len();
    let mut columns: Vec<(String, Box<dyn Fn(&DiagnosticsRecord) -> f64>)> = vec![
        ("mass".into(), Box::new(|r| r.mass)),
        ("second_moment".into(), Box::new(|r| r.second_moment)),
        ("h1".into(), Box::new(|r| r.h1)),
        ("sup".into(), Box::new(|r| r.sup)),
    ];
    for (k, p) in p_list.iter().enumerate() {
        columns.push((format!("lp_{p}"), Box::new(move |r| r.lp_norms[k])));
    }
    for (name, get) in columns {
        let stats = (0..len)
            .map(|i| {
                let vals: Vec<f64> = runs.iter().filter_map(|r| r.records.get(i)).map(&get).collect();
                Stat::of(&vals)
            })
            .collect();
        summary.series.push(SeriesSummary { name, stats });
    }
}

fn divergence_or_none(params: &ModelParams) -> NoiseSpec {
    if params.sigma > 0.0 {
        NoiseSpec::Divergence
    } else {
        NoiseSpec::None
    }
}

/// The driving path of one run; noise-free runs get an empty path.
pub fn sample_path(noise: &NoiseSpec, cfg: &SolverConfig, ctx: RngContext) -> Result<BrownianPath> {
    match noise.components() {
        0 => Ok(no_noise_path(cfg.dt)),
        c => BrownianPath::sample(c, cfg.dt, cfg.steps(), ctx),
    }
}

/// Constant of the smallness condition from Gaussian probes of widths
/// `{0.5, 0.75, 1} × width`. The gradient bound needs an exponent above 2; for
/// `p = 2` the probes are measured in `L⁴`.
pub fn empirical_smallness_constant(spec: &ExperimentSpec) -> Result<f64> {
    let q = if spec.params.p > 2.0 { spec.params.p } else { 4.0 };
    let probes = [0.5, 0.75, 1.0]
        .iter()
        .map(|f| make_gaussian_field(spec.domain, 1.0, f * spec.width, (0.0, 0.0)))
        .collect::<Result<Vec<_>>>()?;
    estimate_cp(spec.solver.kernel, q, &probes)
}

/// Checks `‖ρ(t)‖_p ≤ ‖ρ₀‖_p (1 + tol)` on every path under transport noise.
pub fn run_global_existence(spec: &ExperimentSpec) -> Result<EnsembleSummary> {
    spec.validate()?;
    let c = match spec.smallness_constant {
        Some(c) => c,
        None => empirical_smallness_constant(spec)?,
    };
    if spec.params.chi > 0.0 && !smallness_condition(spec.m0, &spec.params, c)? {
        return Err(Error::Precondition(format!(
            "mass {} violates the smallness condition with C = {c}",
            spec.m0
        )));
    }
    let rho0 = spec.initial_density()?;
    let noise = divergence_or_none(&spec.params);
    let solver = Solver::new(spec.params, noise.clone(), spec.solver.clone(), &rho0)?;
    let recorder = spec.recorder()?;
    let p = spec.params.p;
    let norm0 = lp_norm(&rho0, p);
    let runs = for_paths(spec.paths, |k| {
        let path = sample_path(&noise, &spec.solver, spec.path_context(k))?;
        run_recorded(&solver, &recorder, &rho0, &path, spec.output_every)
    })?;
    let mut summary = EnsembleSummary::empty(spec);
    let mut worst: f64 = 0.0;
    for (k, run) in runs.iter().enumerate() {
        let ratio = run.records.iter().map(|r| r.lp_norms[0] / norm0).fold(0.0, f64::max);
        worst = worst.max(ratio);
        let stream = spec.path_context(k).stream;
        if let Some(t) = run.state.blowup_time {
            summary.failures.push(format!("path {k} (seed {}, stream {stream}) flagged blowup at t = {t}", spec.seed));
        }
        if ratio > 1.0 + spec.norm_tolerance {
            summary.failures.push(format!(
                "path {k} (seed {}, stream {stream}) norm ratio {ratio} exceeds 1 + {}",
                spec.seed, spec.norm_tolerance
            ));
        }
        summary.path_records.push(PathRecord {
            index: k,
            stream,
            firing_time: run.state.blowup_time,
            final_time: run.state.t,
            value: ratio,
        });
    }
    summarize_series(&mut summary, &runs, recorder.config().p_list.as_slice());
    summary.set_firings();
    summary.push_metric("max_norm_ratio", worst);
    summary.push_metric("smallness_constant", c);
    if let Some(b) = smallness_boundary(&spec.params, c)? {
        summary.push_metric("smallness_boundary", b);
    }
    Ok(summary)
}

/// Per-path firing times against `T* = M₀ / ((χ/2π) m₀² − 2a² m₀)`.
pub fn run_supercritical(spec: &ExperimentSpec) -> Result<EnsembleSummary> {
    spec.validate()?;
    if !blowup_mass_condition(spec.m0, &spec.params) {
        return Err(Error::Precondition(format!("mass {} is below the blowup threshold", spec.m0)));
    }
    let rho0 = spec.initial_density()?;
    let m2 = second_moment(&rho0);
    let t_star = blowup_time_bound(spec.m0, m2, &spec.params)?;
    let noise = match spec.kind {
        ExperimentKind::SupercriticalGeneral => {
            let basis = make_fourier_basis(spec.domain, spec.noise_modes, spec.alpha0)?;
            NoiseSpec::general(basis.modes, PhiMap::Linear)?
        }
        _ => divergence_or_none(&spec.params),
    };
    let solver = Solver::new(spec.params, noise.clone(), spec.solver.clone(), &rho0)?;
    let recorder = spec.recorder()?;
    let runs = for_paths(spec.paths, |k| {
        let path = sample_path(&noise, &spec.solver, spec.path_context(k))?;
        run_recorded(&solver, &recorder, &rho0, &path, spec.output_every)
    })?;
    let mut summary = EnsembleSummary::empty(spec);
    for (k, run) in runs.iter().enumerate() {
        summary.path_records.push(PathRecord {
            index: k,
            stream: spec.path_context(k).stream,
            firing_time: run.state.blowup_time,
            final_time: run.state.t,
            value: run.state.blowup_time.map_or(0.0, |t| (t <= t_star) as u8 as f64),
        });
    }
    summarize_series(&mut summary, &runs, recorder.config().p_list.as_slice());
    summary.set_firings();
    let before = summary.path_records.iter().filter(|r| r.value > 0.0).count();
    summary.push_metric("t_star", t_star);
    summary.push_metric("initial_second_moment", m2);
    summary.push_metric("fraction_before_t_star", before as f64 / spec.paths as f64);
    Ok(summary)
}

/// Fraction of paths that blow up numerically before `t₂`, or whose exact
/// second moment reaches zero before `t₂`, for the best `(α, β)` of the sweep.
/// Field runs that lose positivity are counted in `unresolved_fraction` and
/// only contribute through the second-moment test.
pub fn run_any_mass_blowup(spec: &ExperimentSpec) -> Result<EnsembleSummary> {
    spec.validate()?;
    let rho0 = spec.initial_density()?;
    let m2 = second_moment(&rho0);
    let points = sweep_events(spec.m0, m2, &spec.params, &spec.alphas, &spec.betas, spec.t2_max)?;
    let best = best_event(&points)
        .ok_or_else(|| Error::Precondition("no (alpha, beta) on the grid gives a finite t2".into()))?;
    let fastest = points
        .iter()
        .min_by(|a, b| a.t2.total_cmp(&b.t2))
        .expect("non-empty sweep");
    let mut cfg = spec.solver.clone();
    cfg.t_end = (best.t2 / cfg.dt).ceil() * cfg.dt;
    let noise = NoiseSpec::constant_mode(spec.domain, PhiMap::Linear)?;
    let solver = Solver::new(spec.params, noise.clone(), cfg.clone(), &rho0)?;
    let recorder = spec.recorder()?;
    let outcomes = for_paths(spec.paths, |k| {
        let path = sample_path(&noise, &cfg, spec.path_context(k))?;
        let run = match run_recorded(&solver, &recorder, &rho0, &path, spec.output_every) {
            Ok(run) => Ok(run),
            // A peak too sharp for the grid: neither a cap crossing nor a
            // contradiction, so it is reported apart.
            Err(Error::PositivityLost { t, .. }) => Err(t),
            Err(e) => return Err(e),
        };
        let oracle = MomentOracle::new(spec.m0, m2, spec.params, path)?;
        let contradiction = oracle
            .second_moment_series()
            .iter()
            .enumerate()
            .find(|(j, m)| **m <= 0.0 && *j as f64 * cfg.dt <= best.t2)
            .map(|(j, _)| j as f64 * cfg.dt);
        Ok((run, contradiction))
    })?;
    let mut summary = EnsembleSummary::empty(spec);
    let mut hits = 0usize;
    let mut unresolved = 0usize;
    for (k, (run, contradiction)) in outcomes.iter().enumerate() {
        let (numerical, final_time) = match run {
            Ok(r) => (r.state.blowup_time.filter(|t| *t <= best.t2), r.state.t),
            Err(t) => {
                unresolved += 1;
                (None, *t)
            }
        };
        let first = match (numerical, *contradiction) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        hits += first.is_some() as usize;
        summary.path_records.push(PathRecord {
            index: k,
            stream: spec.path_context(k).stream,
            firing_time: first,
            final_time,
            value: first.is_some() as u8 as f64,
        });
    }
    let runs: Vec<PathRun> = outcomes.into_iter().filter_map(|(r, _)| r.ok()).collect();
    summarize_series(&mut summary, &runs, recorder.config().p_list.as_slice());
    summary.set_firings();
    let n = spec.paths as f64;
    let frac = hits as f64 / n;
    summary.push_metric("alpha", best.alpha);
    summary.push_metric("beta", best.beta);
    summary.push_metric("t2", best.t2);
    summary.push_metric("event_probability", best.probability);
    summary.push_metric("lower_bound", best.lower_bound);
    summary.push_metric("observed_fraction", frac);
    summary.push_metric("observed_std_error", (frac * (1.0 - frac) / n).sqrt());
    summary.push_metric("unresolved_fraction", unresolved as f64 / n);
    summary.push_metric("fastest_alpha", fastest.alpha);
    summary.push_metric("fastest_beta", fastest.beta);
    summary.push_metric("fastest_t2", fastest.t2);
    for p in &points {
        summary.sweep.push(SweepRow {
            label: format!("alpha={} beta={}", p.alpha, p.beta),
            value: p.t2,
            stat: Stat {
                mean: p.lower_bound,
                variance: 0.0,
                std_error: 0.0,
                count: 1,
            },
        });
    }
    Ok(summary)
}

/// The sweep point with the largest blowup-probability floor.
pub fn best_event(points: &[EventSweepPoint]) -> Option<EventSweepPoint> {
    points.iter().copied().max_by(|a, b| a.lower_bound.total_cmp(&b.lower_bound))
}

/// `sup_t ‖a(t) − b(t)‖_p^p` over two trajectories on the same time grid.
fn sup_gap(a: &Trajectory, b: &Trajectory, p: f64) -> Result<f64> {
    if a.fields.len() != b.fields.len() {
        return Err(Error::ShapeMismatch(format!(
            "trajectories have {} and {} records",
            a.fields.len(),
            b.fields.len()
        )));
    }
    let mut worst: f64 = 0.0;
    for (x, y) in a.fields.iter().zip(&b.fields) {
        worst = worst.max(lp_norm_pow(&x.sub(y)?, p));
    }
    Ok(worst)
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// `E sup_t ‖ρ_ε − ρ*‖_p^p` for each `ε` in the sweep, with `ρ_ε` driven by
/// transport noise of strength `ε` and `ρ*` the noise-free solution, both on
/// the same path. Decrease between neighbours is tested on paired per-path
/// differences.
pub fn run_small_perturbation(spec: &ExperimentSpec) -> Result<EnsembleSummary> {
    spec.validate()?;
    if spec.sweep.is_empty() {
        return Err(Error::InvalidParameter("small perturbation needs an epsilon sweep".into()));
    }
    let rho0 = spec.initial_density()?;
    let p = spec.params.p;
    let base = spec.params.with_sigma(0.0);
    let reference = Solver::new(base, NoiseSpec::None, spec.solver.clone(), &rho0)?
        .run(&rho0, &no_noise_path(spec.solver.dt), spec.output_every)?;
    let solvers = spec
        .sweep
        .iter()
        .map(|&eps| {
            let (params, noise) = if eps == 0.0 {
                (base, NoiseSpec::None)
            } else {
                (spec.params.with_sigma(eps), NoiseSpec::Divergence)
            };
            Solver::new(params, noise, spec.solver.clone(), &rho0)
        })
        .collect::<Result<Vec<_>>>()?;
    let gaps = for_paths(spec.paths, |k| {
        let path = BrownianPath::sample(2, spec.solver.dt, spec.solver.steps(), spec.path_context(k))?;
        let quiet = no_noise_path(spec.solver.dt);
        solvers
            .iter()
            .map(|s| {
                let drive = if s.noise().components() == 0 { &quiet } else { &path };
                sup_gap(&s.run(&rho0, drive, spec.output_every)?, &reference, p)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let mut summary = EnsembleSummary::empty(spec);
    summary.times = reference.times.clone();
    let mut means = Vec::new();
    for (e, &eps) in spec.sweep.iter().enumerate() {
        let column: Vec<f64> = gaps.iter().map(|g| g[e]).collect();
        let stat = Stat::of(&column);
        means.push(stat.mean);
        summary.sweep.push(SweepRow {
            label: format!("eps={eps}"),
            value: eps,
            stat,
        });
    }
    for (k, g) in gaps.iter().enumerate() {
        summary.path_records.push(PathRecord {
            index: k,
            stream: spec.path_context(k).stream,
            firing_time: None,
            final_time: spec.solver.t_end,
            value: g[0],
        });
    }
    let mut strictly = true;
    for e in 1..spec.sweep.len() {
        let diffs: Vec<f64> = gaps.iter().map(|g| g[e - 1] - g[e]).collect();
        let d = Stat::of(&diffs);
        let z = if d.std_error > 0.0 { d.mean / d.std_error } else if d.mean > 0.0 { f64::INFINITY } else { 0.0 };
        summary.push_metric(&format!("paired_z_{e}"), z);
        strictly &= z > 3.0;
    }
    summary.push_metric("strictly_decreasing_3sigma", strictly as u8 as f64);
    let positive: Vec<(f64, f64)> = spec
        .sweep
        .iter()
        .zip(&means)
        .filter(|(e, m)| **e > 0.0 && **m > 0.0)
        .map(|(e, m)| (*e, *m))
        .collect();
    if positive.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = positive.into_iter().unzip();
        summary.push_metric("log_log_slope", log_log_slope(&x, &y));
    }
    Ok(summary)
}

/// Shape of the initial-data perturbation: a centred unit-mass Gaussian of
/// three quarters of the width.
fn perturbation_shape(spec: &ExperimentSpec) -> Result<Field> {
    make_gaussian_field(spec.domain, 1.0, 0.75 * spec.width, (0.0, 0.0))
}

/// `E sup_t ‖ρ¹ − ρ²‖_p^p / ‖ρ¹₀ − ρ²₀‖_p^p` for initial gaps
/// `‖ρ¹₀ − ρ²₀‖_p = δ ‖ρ¹₀‖_p`, `δ` from the sweep, both runs on one path.
pub fn run_continuous_dependence(spec: &ExperimentSpec) -> Result<EnsembleSummary> {
    spec.validate()?;
    if spec.sweep.is_empty() {
        return Err(Error::InvalidParameter("continuous dependence needs a gap sweep".into()));
    }
    let rho1 = spec.initial_density()?;
    let p = spec.params.p;
    let shape = perturbation_shape(spec)?;
    let unit = shape.scaled(lp_norm(&rho1, p) / lp_norm(&shape, p));
    let c = match spec.smallness_constant {
        Some(c) => c,
        None => empirical_smallness_constant(spec)?,
    };
    let noise = divergence_or_none(&spec.params);
    let mut data = Vec::new();
    for &delta in &spec.sweep {
        let rho2 = rho1.axpy(delta, &unit)?;
        let m2 = crate::domain::mass(&rho2);
        if spec.params.chi > 0.0 && !smallness_condition(m2, &spec.params, c)? {
            return Err(Error::Precondition(format!(
                "perturbed mass {m2} violates the smallness condition with C = {c}"
            )));
        }
        let initial_gap = lp_norm_pow(&rho1.sub(&rho2)?, p);
        data.push((rho2, initial_gap));
    }
    let s1 = Solver::new(spec.params, noise.clone(), spec.solver.clone(), &rho1)?;
    let solvers = data
        .iter()
        .map(|(r, _)| Solver::new(spec.params, noise.clone(), spec.solver.clone(), r))
        .collect::<Result<Vec<_>>>()?;
    let ratios = for_paths(spec.paths, |k| {
        let path = sample_path(&noise, &spec.solver, spec.path_context(k))?;
        let a = s1.run(&rho1, &path, spec.output_every)?;
        let mut out = Vec::with_capacity(data.len());
        for (s, (r, g)) in solvers.iter().zip(&data) {
            let b = s.run(r, &path, spec.output_every)?;
            out.push((sup_gap(&a, &b, p)?, *g));
        }
        Ok(out)
    })?;
    let mut summary = EnsembleSummary::empty(spec);
    let mut ratio_means = Vec::new();
    for (e, &delta) in spec.sweep.iter().enumerate() {
        let gaps: Vec<f64> = ratios.iter().map(|r| r[e].0).collect();
        let stat = Stat::of(&gaps);
        let ratio = stat.mean / data[e].1;
        ratio_means.push(ratio);
        summary.push_metric(&format!("gap_{e}"), stat.mean);
        summary.push_metric(&format!("ratio_{e}"), ratio);
        summary.sweep.push(SweepRow {
            label: format!("delta={delta}"),
            value: delta,
            stat,
        });
    }
    for (k, r) in ratios.iter().enumerate() {
        summary.path_records.push(PathRecord {
            index: k,
            stream: spec.path_context(k).stream,
            firing_time: None,
            final_time: spec.solver.t_end,
            value: r[0].0 / r[0].1,
        });
    }
    let hi = ratio_means.iter().cloned().fold(f64::MIN, f64::max);
    let lo = ratio_means.iter().cloned().fold(f64::MAX, f64::min);
    summary.push_metric("ratio_max", hi);
    summary.push_metric("ratio_min", lo);
    summary.push_metric("ratio_spread", hi / lo);
    Ok(summary)
}

/// Picard contraction factors for each horizon in the sweep. The factor `z`
/// of a horizon is the geometric mean of the first four successive distance
/// ratios, averaged over paths.
pub fn run_picard(spec: &ExperimentSpec) -> Result<EnsembleSummary> {
    spec.validate()?;
    if spec.sweep.is_empty() {
        return Err(Error::InvalidParameter("Picard runner needs a horizon sweep".into()));
    }
    if spec.picard_iterations < 6 {
        return Err(Error::InvalidParameter("Picard runner needs at least six iterations".into()));
    }
    let rho0 = spec.initial_density()?;
    let noise = divergence_or_none(&spec.params);
    let per_path = for_paths(spec.paths, |k| {
        spec.sweep
            .iter()
            .map(|&horizon| {
                let mut cfg = spec.solver.clone();
                cfg.t_end = horizon;
                let path = sample_path(&noise, &cfg, spec.path_context(k))?;
                let res = picard_iterate(&rho0, &spec.params, &noise, &cfg, &path, spec.picard_iterations)?;
                let z = contraction_factor(&res.distances);
                let contracting = res.ratios.iter().take(4).all(|r| *r < 1.0);
                Ok((z, contracting))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut summary = EnsembleSummary::empty(spec);
    let mut zs = Vec::new();
    for (e, &horizon) in spec.sweep.iter().enumerate() {
        let vals: Vec<f64> = per_path.iter().map(|r| r[e].0).collect();
        let stat = Stat::of(&vals);
        zs.push(stat.mean);
        let all = per_path.iter().all(|r| r[e].1);
        summary.push_metric(&format!("z_{e}"), stat.mean);
        summary.push_metric(&format!("contracting_{e}"), all as u8 as f64);
        summary.sweep.push(SweepRow {
            label: format!("T={horizon}"),
            value: horizon,
            stat,
        });
    }
    for (k, r) in per_path.iter().enumerate() {
        summary.path_records.push(PathRecord {
            index: k,
            stream: spec.path_context(k).stream,
            firing_time: None,
            final_time: spec.sweep[0],
            value: r[0].0,
        });
    }
    if zs.len() >= 2 {
        summary.push_metric("z_reduction", zs[0] / zs[1]);
    }
    Ok(summary)
}

/// `(d₅/d₁)^{1/4}`: geometric mean of the first four distance ratios.
pub fn contraction_factor(distances: &[f64]) -> f64 {
    if distances.len() < 5 || distances[0] == 0.0 {
        return 0.0;
    }
    (distances[4] / distances[0]).powf(0.25)
}

/// Particle systems of each size in the sweep against the field solution,
/// averaged over `paths` replicas.
pub fn run_particle_chaos(spec: &ExperimentSpec) -> Result<EnsembleSummary> {
    spec.validate()?;
    if spec.sweep.is_empty() {
        return Err(Error::InvalidParameter("particle runner needs particle counts".into()));
    }
    let rho0 = spec.initial_density()?;
    let steps = spec.solver.steps();
    let (noise, field_params) = if spec.particle_common_noise {
        (NoiseSpec::Divergence, spec.params)
    } else {
        (NoiseSpec::None, spec.params.with_sigma(0.0))
    };
    let solver = Solver::new(field_params, noise.clone(), spec.solver.clone(), &rho0)?;
    let mut summary = EnsembleSummary::empty(spec);
    // Replicas run in parallel; the force loop inside is parallel too.
    let rows = for_paths(spec.paths, |k| {
        let ctx = spec.path_context(k);
        let path = sample_path(&noise, &spec.solver, ctx.substream(0))?;
        let field = solver.run(&rho0, &path, spec.output_every)?;
        spec.sweep
            .iter()
            .enumerate()
            .map(|(e, &count)| {
                let n = count as usize;
                let state = sample_gaussian(n, spec.m0, spec.width, [0.0, 0.0], spec.domain.half_width(), ctx.substream(1 + 2 * e as u64))?;
                let mut cfg = ParticleConfig::new(spec.solver.dt, field_params, default_delta(&state))?;
                cfg.common_noise = spec.particle_common_noise;
                let common = spec.particle_common_noise.then_some(&path);
                let traj = simulate_particles(&state, &cfg, steps, spec.output_every, ctx.substream(2 + 2 * e as u64), common)?;
                let gap = chaos_gap(&traj, &field, rule_of_thumb_bandwidth(&state))?;
                let l2 = gap.l2.iter().cloned().fold(0.0, f64::max);
                Ok((gap.max_relative_second_moment_gap(), l2))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for (e, &count) in spec.sweep.iter().enumerate() {
        let m: Vec<f64> = rows.iter().map(|r| r[e].0).collect();
        let l2: Vec<f64> = rows.iter().map(|r| r[e].1).collect();
        let stat = Stat::of(&m);
        summary.push_metric(&format!("second_moment_gap_{e}"), stat.mean);
        summary.push_metric(&format!("l2_gap_{e}"), Stat::of(&l2).mean);
        summary.sweep.push(SweepRow {
            label: format!("N={count}"),
            value: count,
            stat,
        });
    }
    for (k, r) in rows.iter().enumerate() {
        summary.path_records.push(PathRecord {
            index: k,
            stream: spec.path_context(k).stream,
            firing_time: None,
            final_time: spec.solver.t_end,
            value: r[0].0,
        });
    }
    Ok(summary)
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<EnsembleSummary> {
    match spec.kind {
        ExperimentKind::GlobalExistence => run_global_existence(spec),
        ExperimentKind::SupercriticalDivergence | ExperimentKind::SupercriticalGeneral => run_supercritical(spec),
        ExperimentKind::AnyMassBlowup => run_any_mass_blowup(spec),
        ExperimentKind::SmallPerturbation => run_small_perturbation(spec),
        ExperimentKind::ContinuousDependence => run_continuous_dependence(spec),
        ExperimentKind::PicardContraction => run_picard(spec),
        ExperimentKind::ParticleChaos => run_particle_chaos(spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(kind: ExperimentKind, sigma: f64, chi: f64) -> ExperimentSpec {
        let domain = DomainSpec::new(6.0, 64).unwrap();
        let params = ModelParams::new(1.0, sigma, chi, 2.0).unwrap();
        let mut s = ExperimentSpec::new(kind, domain, params, SolverConfig::new(0.01, 0.3));
        s.paths = 8;
        s
    }

    #[test]
    fn heat_ensemble_passes_and_is_reproducible() {
        let spec = base(ExperimentKind::GlobalExistence, 0.5, 0.0);
        let a = run_experiment(&spec).unwrap();
        assert!(a.passed(), "{:?}", a.failures);
        assert!(a.metric("max_norm_ratio").unwrap() <= 1.0 + 1e-12);
        let m0 = crate::domain::mass(&spec.initial_density().unwrap());
        let mass = a.series("mass").unwrap();
        assert!(mass.stats.iter().all(|s| (s.mean - m0).abs() < 1e-12));
        assert_eq!(a, run_experiment(&spec).unwrap());
    }

    #[test]
    fn global_existence_guard() {
        let mut spec = base(ExperimentKind::GlobalExistence, 0.0, 2.0 * std::f64::consts::PI);
        spec.m0 = 10.0;
        assert!(matches!(run_experiment(&spec), Err(Error::Precondition(_))));
    }

    #[test]
    fn supercritical_guard_and_control() {
        let spec = base(ExperimentKind::SupercriticalDivergence, 0.0, 2.0 * std::f64::consts::PI);
        assert!(matches!(run_experiment(&spec), Err(Error::Precondition(_))));
    }

    #[test]
    fn zero_perturbation_gives_zero_gap() {
        let mut spec = base(ExperimentKind::SmallPerturbation, 0.0, 0.5);
        spec.sweep = vec![0.0, 0.1];
        spec.paths = 3;
        let s = run_experiment(&spec).unwrap();
        assert_eq!(s.sweep[0].stat.mean, 0.0);
        assert!(s.sweep[1].stat.mean > 0.0);
    }

    #[test]
    fn identical_data_gives_zero_dependence_gap() {
        let mut spec = base(ExperimentKind::ContinuousDependence, 0.5, 0.5);
        spec.sweep = vec![0.0];
        spec.smallness_constant = Some(1.0);
        spec.m0 = 0.2;
        spec.paths = 2;
        let s = run_experiment(&spec).unwrap();
        assert_eq!(s.sweep[0].stat.mean, 0.0);
    }

    #[test]
    fn stats_and_slope_helpers() {
        let s = Stat::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.variance, 1.0);
        assert!((s.std_error - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let x = [0.1, 0.2, 0.4];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((log_log_slope(&x, &y) - 1.5).abs() < 1e-12);
        assert_eq!(quantile(&[1.0, 2.0, 3.0], 0.5), 2.0);
        assert_eq!(contraction_factor(&[16.0, 8.0, 4.0, 2.0, 1.0]), 0.5);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ExperimentKind::ALL {
            assert_eq!(ExperimentKind::parse(k.name()).unwrap(), k);
        }
        assert!(ExperimentKind::parse("nope").is_err());
    }
}
