//! Pseudospectral time stepping for both noise regimes, the deterministic
//! limit and the linearized equation used by Picard iteration.
//!
//! One step of the default scheme, in Fourier space:
//!
//! ```text
//! ρ̂ ← D(k) · (ρ̂ + dt N̂ + Ŝ)
//! ```
//!
//! where `N̂ = −χ i k · FFT(ρ ∇c)` is the dealiased aggregation flux, `Ŝ` the
//! explicit noise increment and `D` the diffusion integrating factor.
//!
//! * Transport noise, [`TransportScheme::Exact`]: `D = exp(−ν²|k|²dt/2 +
//!   iσ k·ΔW)` and `Ŝ = 0`. Diffusion with coefficient `ν²/2` and translation
//!   by `σΔW` are integrated exactly; the Itô correction `σ²/2 Δ` is what turns
//!   `ν²` into the `a²` of the equation. With `χ = 0` the scheme reproduces the
//!   exact solution (heat flow then translation) to roundoff.
//! * Transport noise, [`TransportScheme::EulerMaruyama`]: `D = exp(−a²|k|²dt/2)`
//!   and `Ŝ = iσ (k·ΔW) ρ̂`.
//! * Basis noise: `D = exp(−a²|k|²dt/2)` and `Ŝ = FFT(σ g(ρ) ξ + ½σ² g g'
//!   (ξ² − dt Σ α_k² e_k²))` with `ξ = Σ α_k e_k ΔW_k`. The second term is the
//!   Milstein correction; the pointwise coefficients commute so it needs no
//!   iterated integrals. It can be switched off for plain Euler–Maruyama.
//!
//! Explicit stepping replaces `D` by `1 − a²|k|²dt/2` applied additively and
//! always uses the Euler–Maruyama transport increment.

use rustfft::num_complex::Complex64;

use crate::domain::{DomainSpec, Field, ModelParams};
use crate::error::{Error, Result};
use crate::noise::{modal_sum, BrownianPath, NoiseSpec};
use crate::potential::{KernelKind, PotentialSolver};
use crate::spectral::SpectralGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stepping {
    /// Integrating-factor treatment of diffusion.
    #[default]
    SemiImplicit,
    /// Forward Euler for everything; guarded by a stability bound.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransportScheme {
    /// Exact exponential of the translation and the `ν²` heat flow.
    #[default]
    Exact,
    /// Explicit `σ∇ρ·ΔW` increment with `a²` diffusion in the integrating factor.
    EulerMaruyama,
}

/// Sup-norm level at which a run is declared blown up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlowupCap {
    /// Multiple of `‖ρ₀‖_∞`.
    Relative(f64),
    Absolute(f64),
}

impl Default for BlowupCap {
    fn default() -> Self {
        BlowupCap::Relative(1e4)
    }
}

impl BlowupCap {
    pub fn resolve(&self, rho0: &Field) -> f64 {
        match *self {
            BlowupCap::Relative(f) => f * rho0.sup_norm(),
            BlowupCap::Absolute(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    pub kernel: KernelKind,
    pub stepping: Stepping,
    pub dealias: bool,
    pub blowup_cap: BlowupCap,
    pub transport: TransportScheme,
    /// Milstein correction for basis noise.
    pub milstein: bool,
    /// Free-space correction of the periodic Newtonian potential.
    pub background_correction: bool,
    /// Negative values above `−positivity_tol · max ρ` are clipped; lower
    /// values abort the run.
    pub positivity_tol: f64,
}

impl SolverConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            kernel: KernelKind::Newtonian,
            stepping: Stepping::SemiImplicit,
            dealias: true,
            blowup_cap: BlowupCap::default(),
            transport: TransportScheme::Exact,
            milstein: true,
            background_correction: true,
            positivity_tol: 1e-10,
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    /// Checks step sizes and, for explicit stepping, the diffusive stability
    /// bound on `domain`.
    pub fn validate(&self, domain: &DomainSpec, params: &ModelParams) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "t_end must be nonnegative, got {}",
                self.t_end
            )));
        }
        let cap_ok = match self.blowup_cap {
            BlowupCap::Relative(f) | BlowupCap::Absolute(f) => f.is_finite() && f > 0.0,
        };
        if !cap_ok {
            return Err(Error::InvalidParameter("blowup cap must be positive".into()));
        }
        if !(self.positivity_tol.is_finite() && self.positivity_tol >= 0.0) {
            return Err(Error::InvalidParameter("positivity tolerance must be nonnegative".into()));
        }
        if self.stepping == Stepping::Explicit {
            let limit = explicit_dt_limit(domain, params.a);
            if self.dt > limit {
                return Err(Error::InvalidParameter(format!(
                    "explicit stepping unstable: dt = {} exceeds {limit:.3e}",
                    self.dt
                )));
            }
        }
        Ok(())
    }
}

/// Largest stable explicit step: the smaller of `dx²/(2a²)` and the forward
/// Euler limit `a²|k|²_max dt/2 ≤ 2` of the spectral Laplacian.
pub fn explicit_dt_limit(domain: &DomainSpec, a: f64) -> f64 {
    let dx = domain.dx();
    let kmax = std::f64::consts::PI / dx;
    let k2 = 2.0 * kmax * kmax;
    (dx * dx / (2.0 * a * a)).min(4.0 / (a * a * k2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub t: f64,
    /// Index into the Brownian path of the next increment.
    pub step: usize,
    pub rho: Field,
    pub blown_up: bool,
    pub blowup_time: Option<f64>,
    /// Mass added by positivity clipping so far.
    pub clipped_mass: f64,
    /// Minimum of the latest step's output before clipping.
    pub raw_min: f64,
}

impl SolverState {
    pub fn new(rho: Field) -> Self {
        let raw_min = rho.min();
        Self {
            t: 0.0,
            step: 0,
            rho,
            blown_up: false,
            blowup_time: None,
            raw_min,
            clipped_mass: 0.0,
        }
    }
}

/// Fields recorded along a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub fields: Vec<Field>,
    pub final_state: SolverState,
}

/// A configured stepper for one grid, parameter set and noise.
#[derive(Debug, Clone)]
pub struct Solver {
    params: ModelParams,
    noise: NoiseSpec,
    cfg: SolverConfig,
    grid: SpectralGrid,
    potential: PotentialSolver,
    cap: f64,
    initial_sup: f64,
    /// Real diffusion factor per mode.
    decay: Vec<f64>,
    /// `Σ α_k² e_k²` per node, for the Milstein correction.
    modal_variance: Vec<f64>,
}

impl Solver {
    pub fn new(params: ModelParams, noise: NoiseSpec, cfg: SolverConfig, rho0: &Field) -> Result<Self> {
        let domain = *rho0.domain();
        params.validate()?;
        cfg.validate(&domain, &params)?;
        if matches!(noise, NoiseSpec::Divergence) {
            params.validate_divergence()?;
        }
        let mut modal_variance = Vec::new();
        if let NoiseSpec::General { modes, .. } = &noise {
            rho0.check_same_grid(&modes[0].shape)?;
            modal_variance = vec![0.0; domain.len()];
            for m in modes {
                for (v, e) in modal_variance.iter_mut().zip(m.shape.values()) {
                    *v += m.alpha * m.alpha * e * e;
                }
            }
        }
        let grid = SpectralGrid::new(domain);
        let potential = PotentialSolver::with_grid(grid.clone(), cfg.kernel)
            .background_correction(cfg.background_correction);
        let diff = match (&noise, cfg.transport) {
            (NoiseSpec::Divergence, TransportScheme::Exact) => params.nu_sq(),
            _ => params.a * params.a,
        };
        let decay = (0..domain.len())
            .map(|idx| (-0.5 * diff * grid.k_sq(idx) * cfg.dt).exp())
            .collect();
        Ok(Self {
            params,
            noise,
            cap: cfg.blowup_cap.resolve(rho0),
            initial_sup: rho0.sup_norm(),
            cfg,
            grid,
            potential,
            decay,
            modal_variance,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    /// Advances `state` by one step with noise increments `dw`.
    pub fn step(&self, state: &mut SolverState, dw: &[f64]) -> Result<()> {
        self.advance(state, dw, None)
    }

    /// Linearized step: the transport field is `∇(G * xi)` instead of `∇c`.
    pub fn step_frozen(&self, state: &mut SolverState, dw: &[f64], xi: &Field) -> Result<()> {
        self.advance(state, dw, Some(xi))
    }

    fn advance(&self, state: &mut SolverState, dw: &[f64], frozen: Option<&Field>) -> Result<()> {
        if state.blown_up {
            return Err(Error::Precondition(format!(
                "stepping a blown-up state (t = {})",
                state.t
            )));
        }
        if dw.len() != self.noise.components() {
            return Err(Error::ShapeMismatch(format!(
                "{} increments for {} noise components",
                dw.len(),
                self.noise.components()
            )));
        }
        let dt = self.cfg.dt;
        let grid = &self.grid;
        let rho = state.rho.values();
        let mut rho_hat = grid.forward(rho);

        // Explicit increment accumulated in Fourier space.
        let mut incr = vec![Complex64::new(0.0, 0.0); rho_hat.len()];
        let chi = self.params.chi;
        if chi != 0.0 {
            let (gx, gy) = match frozen {
                None if self.cfg.dealias => {
                    let mut low = rho_hat.clone();
                    grid.apply_mask(&mut low);
                    self.potential.gradient_from_spectrum(&low, rho)
                }
                None => self.potential.gradient_from_spectrum(&rho_hat, rho),
                Some(xi) => {
                    let mut xi_hat = grid.forward(xi.values());
                    if self.cfg.dealias {
                        grid.apply_mask(&mut xi_hat);
                    }
                    self.potential.gradient_from_spectrum(&xi_hat, xi.values())
                }
            };
            let fx: Vec<f64> = rho.iter().zip(&gx).map(|(r, g)| r * g).collect();
            let fy: Vec<f64> = rho.iter().zip(&gy).map(|(r, g)| r * g).collect();
            let (fx_hat, fy_hat) = grid.forward_pair(&fx, &fy);
            for (idx, v) in incr.iter_mut().enumerate() {
                if self.cfg.dealias && !grid.keeps(idx) {
                    continue;
                }
                let (kx, ky) = grid.k_vec(idx);
                let div = (fx_hat[idx] * kx + fy_hat[idx] * ky) * Complex64::new(0.0, 1.0);
                *v = -chi * dt * div;
            }
        }

        let sigma = self.params.sigma;
        let explicit = self.cfg.stepping == Stepping::Explicit;
        let mut phase: Option<(f64, f64)> = None;
        match &self.noise {
            NoiseSpec::None => {}
            NoiseSpec::Divergence => {
                let (wx, wy) = (sigma * dw[0], sigma * dw[1]);
                if explicit || self.cfg.transport == TransportScheme::EulerMaruyama {
                    for (idx, v) in incr.iter_mut().enumerate() {
                        let (kx, ky) = grid.k_vec(idx);
                        *v += rho_hat[idx] * Complex64::new(0.0, kx * wx + ky * wy);
                    }
                } else {
                    phase = Some((wx, wy));
                }
            }
            NoiseSpec::General { modes, phi } => {
                let xi = modal_sum(modes, dw);
                let s: Vec<f64> = rho
                    .iter()
                    .zip(&xi)
                    .zip(&self.modal_variance)
                    .map(|((&r, &x), &var)| {
                        let g = phi.eval(r);
                        let mut v = sigma * g * x;
                        if self.cfg.milstein {
                            v += 0.5 * sigma * sigma * g * phi.derivative(r) * (x * x - dt * var);
                        }
                        v
                    })
                    .collect();
                let s_hat = grid.forward(&s);
                for (v, s) in incr.iter_mut().zip(&s_hat) {
                    *v += s;
                }
            }
        }

        if explicit {
            let half_a2 = 0.5 * self.params.a * self.params.a;
            for (idx, r) in rho_hat.iter_mut().enumerate() {
                *r = *r * (1.0 - half_a2 * grid.k_sq(idx) * dt) + incr[idx];
            }
        } else {
            for (idx, r) in rho_hat.iter_mut().enumerate() {
                let mut f = Complex64::new(self.decay[idx], 0.0);
                if let Some((wx, wy)) = phase {
                    let (kx, ky) = grid.k_vec(idx);
                    f *= Complex64::from_polar(1.0, kx * wx + ky * wy);
                }
                *r = f * (*r + incr[idx]);
            }
        }
        let values = grid.inverse(&rho_hat);
        let t_new = state.t + dt;
        self.finish(state, values, t_new)
    }

    fn finish(&self, state: &mut SolverState, values: Vec<f64>, t_new: f64) -> Result<()> {
        let finite = values.iter().all(|v| v.is_finite());
        let sup = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !finite {
            // A non-finite value right after the sup norm was already far above
            // its initial level counts as blowup; otherwise it is a numerical
            // fault.
            let prev = state.rho.sup_norm();
            if prev > 10.0 * self.initial_sup {
                state.blown_up = true;
                state.blowup_time = Some(t_new);
                state.t = t_new;
                state.step += 1;
                return Ok(());
            }
            return Err(Error::InternalNonFinite { t: t_new });
        }
        let mut rho = Field::from_raw(*state.rho.domain(), values);
        state.t = t_new;
        state.step += 1;
        if sup > self.cap {
            state.blown_up = true;
            state.blowup_time = Some(t_new);
            state.rho = rho;
            return Ok(());
        }
        state.raw_min = rho.min();
        let tol = self.cfg.positivity_tol * sup;
        state.clipped_mass += rho.clip_negatives(tol, t_new)?;
        state.rho = rho;
        Ok(())
    }

    /// Steps along `path` until `t_end` or blowup, calling `observe` on the
    /// initial state and after every step.
    pub fn run_observed(
        &self,
        rho0: &Field,
        path: &BrownianPath,
        mut observe: impl FnMut(&SolverState),
    ) -> Result<SolverState> {
        let steps = self.cfg.steps();
        self.check_path(path, steps)?;
        let mut state = SolverState::new(rho0.clone());
        observe(&state);
        for k in 0..steps {
            let dw = if path.components() == 0 { &[][..] } else { path.increment(k) };
            self.step(&mut state, dw)?;
            observe(&state);
            if state.blown_up {
                break;
            }
        }
        Ok(state)
    }

    /// Runs to `t_end` recording every `every`-th field (and the last one).
    pub fn run(&self, rho0: &Field, path: &BrownianPath, every: usize) -> Result<Trajectory> {
        let every = every.max(1);
        let mut times = Vec::new();
        let mut fields = Vec::new();
        let steps = self.cfg.steps();
        let final_state = self.run_observed(rho0, path, |s| {
            if s.step % every == 0 || s.step == steps || s.blown_up {
                times.push(s.t);
                fields.push(s.rho.clone());
            }
        })?;
        Ok(Trajectory {
            times,
            fields,
            final_state,
        })
    }

    fn check_path(&self, path: &BrownianPath, steps: usize) -> Result<()> {
        let comps = self.noise.components();
        if comps == 0 {
            return Ok(());
        }
        if path.components() != comps {
            return Err(Error::ShapeMismatch(format!(
                "path has {} components, noise needs {comps}",
                path.components()
            )));
        }
        if path.steps() < steps || (path.dt() - self.cfg.dt).abs() > 1e-12 * self.cfg.dt {
            return Err(Error::ShapeMismatch(format!(
                "path ({} steps of {}) does not cover {steps} steps of {}",
                path.steps(),
                path.dt(),
                self.cfg.dt
            )));
        }
        Ok(())
    }
}

/// An empty path for noise-free runs.
pub fn no_noise_path(dt: f64) -> BrownianPath {
    BrownianPath::from_increments(0, dt, Vec::new()).expect("positive dt")
}

/// One step from `state` with a freshly built solver. Prefer [`Solver::step`]
/// in loops.
pub fn step(
    state: &SolverState,
    params: &ModelParams,
    noise: &NoiseSpec,
    cfg: &SolverConfig,
    dw: &[f64],
) -> Result<SolverState> {
    let solver = Solver::new(*params, noise.clone(), cfg.clone(), &state.rho)?;
    let mut next = state.clone();
    solver.step(&mut next, dw)?;
    Ok(next)
}

/// Noise-free run with diffusion `a²/2`.
pub fn solve_deterministic(rho0: &Field, params: &ModelParams, cfg: &SolverConfig) -> Result<Trajectory> {
    let solver = Solver::new(*params, NoiseSpec::None, cfg.clone(), rho0)?;
    solver.run(rho0, &no_noise_path(cfg.dt), 1)
}

/// Linear equation with transport field `∇(G * xi(t_k))` frozen per step.
///
/// `xi` holds one field per time level `0..=steps`; the returned trajectory
/// records every step.
pub fn solve_linearized(
    xi: &[Field],
    rho0: &Field,
    params: &ModelParams,
    noise: &NoiseSpec,
    cfg: &SolverConfig,
    path: &BrownianPath,
) -> Result<Trajectory> {
    let solver = Solver::new(*params, noise.clone(), cfg.clone(), rho0)?;
    let steps = cfg.steps();
    if xi.len() < steps + 1 {
        return Err(Error::ShapeMismatch(format!(
            "source has {} time levels, need {}",
            xi.len(),
            steps + 1
        )));
    }
    solver.check_path(path, steps)?;
    let mut state = SolverState::new(rho0.clone());
    let mut times = vec![0.0];
    let mut fields = vec![rho0.clone()];
    for k in 0..steps {
        let dw = if path.components() == 0 { &[][..] } else { path.increment(k) };
        solver.step_frozen(&mut state, dw, &xi[k])?;
        times.push(state.t);
        fields.push(state.rho.clone());
        if state.blown_up {
            break;
        }
    }
    Ok(Trajectory {
        times,
        fields,
        final_state: state,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardResult {
    pub trajectory: Trajectory,
    /// `sup_t ‖ξ⁽ⁿ⁺¹⁾(t) − ξ⁽ⁿ⁾(t)‖_p` for each iteration.
    pub distances: Vec<f64>,
    /// Successive ratios of `distances`: the empirical contraction factors.
    pub ratios: Vec<f64>,
    /// Set when the distance grew over three consecutive iterations.
    pub diverged: bool,
}

/// Picard iteration `ξ⁽ⁿ⁺¹⁾ = ρ_{ξ⁽ⁿ⁾}` from `ξ⁽⁰⁾ ≡ ρ₀` on one fixed path.
pub fn picard_iterate(
    rho0: &Field,
    params: &ModelParams,
    noise: &NoiseSpec,
    cfg: &SolverConfig,
    path: &BrownianPath,
    iterations: usize,
) -> Result<PicardResult> {
    if iterations < 2 {
        return Err(Error::InvalidParameter("Picard iteration needs at least two iterations".into()));
    }
    let steps = cfg.steps();
    let mut xi: Vec<Field> = vec![rho0.clone(); steps + 1];
    let mut distances = Vec::with_capacity(iterations);
    let mut last = None;
    let mut growth_run = 0;
    let mut diverged = false;
    for _ in 0..iterations {
        let next = solve_linearized(&xi, rho0, params, noise, cfg, path)?;
        if next.fields.len() != xi.len() {
            return Err(Error::Precondition("linearized iterate blew up".into()));
        }
        let d = next
            .fields
            .iter()
            .zip(&xi)
            .map(|(a, b)| crate::domain::lp_norm(&a.sub(b).expect("same grid"), params.p))
            .fold(0.0f64, f64::max);
        if let Some(&prev) = distances.last() {
            if d > prev {
                growth_run += 1;
                if growth_run >= 3 {
                    diverged = true;
                }
            } else {
                growth_run = 0;
            }
        }
        distances.push(d);
        xi = next.fields.clone();
        last = Some(next);
    }
    let ratios = distances
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect();
    Ok(PicardResult {
        trajectory: last.expect("at least one iteration"),
        distances,
        ratios,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{make_gaussian_field, mass, RngContext};
    use crate::noise::PhiMap;

    fn gaussian(n: usize, m0: f64) -> Field {
        make_gaussian_field(DomainSpec::new(10.0, n).unwrap(), m0, 1.0, (0.0, 0.0)).unwrap()
    }

    /// Unit-width Gaussian on `[-6, 6)²` with 64 nodes, resolved well enough
    /// for the default positivity tolerance.
    fn small_gaussian() -> Field {
        make_gaussian_field(DomainSpec::new(6.0, 64).unwrap(), 1.0, 1.0, (0.0, 0.0)).unwrap()
    }

    fn second_moment(f: &Field) -> f64 {
        f.domain()
            .nodes()
            .zip(f.values())
            .map(|((x, y), v)| (x * x + y * y) * v)
            .sum::<f64>()
            * f.domain().cell_area()
    }

    #[test]
    fn heat_flow_spreads_gaussian() {
        let rho0 = gaussian(128, 1.0);
        let params = ModelParams::new(1.0, 0.0, 0.0, 2.0).unwrap();
        let traj = solve_deterministic(&rho0, &params, &SolverConfig::new(0.01, 0.5)).unwrap();
        let last = traj.fields.last().unwrap();
        // M = 2 s² m0 for a centered Gaussian.
        let s2 = second_moment(last) / 2.0;
        assert!((s2 - 1.5).abs() < 0.015, "s² = {s2}");
        assert!((traj.final_state.t - 0.5).abs() < 1e-12);
    }

    #[test]
    fn explicit_guard_rejects_large_steps() {
        let rho0 = gaussian(64, 1.0);
        let params = ModelParams::new(1.0, 0.0, 0.0, 2.0).unwrap();
        let mut cfg = SolverConfig::new(0.1, 1.0);
        cfg.stepping = Stepping::Explicit;
        assert!(Solver::new(params, NoiseSpec::None, cfg.clone(), &rho0).is_err());
        cfg.dt = 0.5 * explicit_dt_limit(rho0.domain(), 1.0);
        assert!(Solver::new(params, NoiseSpec::None, cfg, &rho0).is_ok());
    }

    #[test]
    fn transport_noise_without_aggregation_is_a_translated_heat_flow() {
        let rho0 = gaussian(64, 1.0);
        let params = ModelParams::new(1.0, 0.6, 0.0, 2.0).unwrap();
        let cfg = SolverConfig::new(0.01, 0.3);
        let path = BrownianPath::sample(2, cfg.dt, cfg.steps(), RngContext::new(3, 0)).unwrap();
        let solver = Solver::new(params, NoiseSpec::Divergence, cfg.clone(), &rho0).unwrap();
        let mut prev = mass(&rho0);
        let state = solver
            .run_observed(&rho0, &path, |s| {
                let m = mass(&s.rho);
                assert!((m - prev).abs() < 1e-12 * prev);
                prev = m;
            })
            .unwrap();
        let (wx, wy) = (path.values(0)[cfg.steps()], path.values(1)[cfg.steps()]);
        // ρ(x) = Gaussian of variance s² + ν² t centered at −σW.
        let var = 1.0 + params.nu_sq() * 0.3;
        let c = (-0.6 * wx, -0.6 * wy);
        let exact = Field::from_fn(*rho0.domain(), |x, y| {
            let r2 = (x - c.0).powi(2) + (y - c.1).powi(2);
            (-r2 / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var)
        })
        .unwrap();
        let err = state.rho.sub(&exact).unwrap().sup_norm();
        assert!(err < 1e-10, "error {err}");
    }

    #[test]
    fn subcritical_l2_norm_decreases() {
        let rho0 = small_gaussian();
        let params = ModelParams::new(1.0, 0.0, 2.0 * std::f64::consts::PI, 2.0).unwrap();
        let traj = solve_deterministic(&rho0, &params, &SolverConfig::new(0.005, 0.5)).unwrap();
        let norms: Vec<f64> = traj.fields.iter().map(|f| crate::domain::lp_norm(f, 2.0)).collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn linearized_with_zero_source_conserves_mass() {
        let rho0 = small_gaussian();
        let params = ModelParams::new(1.0, 0.5, 1.0, 2.0).unwrap();
        let cfg = SolverConfig::new(0.01, 0.1);
        let path = BrownianPath::sample(2, cfg.dt, cfg.steps(), RngContext::new(1, 0)).unwrap();
        let xi = vec![Field::zeros(*rho0.domain()); cfg.steps() + 1];
        let traj = solve_linearized(&xi, &rho0, &params, &NoiseSpec::Divergence, &cfg, &path).unwrap();
        for f in &traj.fields {
            assert!((mass(f) - mass(&rho0)).abs() < 1e-10);
        }
        // A nonzero frozen source changes the result when χ > 0.
        let xi1 = vec![rho0.clone(); cfg.steps() + 1];
        let other = solve_linearized(&xi1, &rho0, &params, &NoiseSpec::Divergence, &cfg, &path).unwrap();
        assert!(other.fields.last().unwrap().sub(traj.fields.last().unwrap()).unwrap().sup_norm() > 1e-6);
    }

    #[test]
    fn picard_without_aggregation_converges_at_once() {
        let rho0 = small_gaussian();
        let params = ModelParams::new(1.0, 0.5, 0.0, 2.0).unwrap();
        let cfg = SolverConfig::new(0.01, 0.1);
        let path = BrownianPath::sample(2, cfg.dt, cfg.steps(), RngContext::new(1, 0)).unwrap();
        let res = picard_iterate(&rho0, &params, &NoiseSpec::Divergence, &cfg, &path, 3).unwrap();
        assert!(res.distances[0] > 0.0);
        assert!(res.distances[1] < 1e-14 && res.ratios[0] < 1e-12);
    }

    #[test]
    fn basis_noise_with_milstein_matches_geometric_mass() {
        let rho0 = small_gaussian();
        let d = *rho0.domain();
        let params = ModelParams::new(1.0, 0.8, 0.0, 2.0).unwrap();
        let noise = NoiseSpec::constant_mode(d, PhiMap::Linear).unwrap();
        let cfg = SolverConfig::new(0.001, 0.2);
        let path = BrownianPath::sample(1, cfg.dt, cfg.steps(), RngContext::new(9, 0)).unwrap();
        let solver = Solver::new(params, noise, cfg.clone(), &rho0).unwrap();
        let state = solver.run_observed(&rho0, &path, |_| {}).unwrap();
        let w = path.values(0)[cfg.steps()];
        let exact = (-0.5 * 0.64 * 0.2 + 0.8 * w).exp();
        assert!((mass(&state.rho) - exact).abs() < 1e-3 * exact);
    }
}
