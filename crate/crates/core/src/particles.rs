//! Interacting particle approximation of the aggregation-diffusion flow.
//!
//! Each of the `N` particles carries mass `m₀/N` and moves by
//!
//! ```text
//! dX_i = (m₀/norm) Σ_{j≠i} ∇K_δ(X_i − X_j) dt + a_idio dB_i − σ dW
//! ∇K_δ(x) = −χ x / (2π(|x|² + δ²))
//! ```
//!
//! where `norm` is `N − 1` or `N`, `dW` is an optional common two-dimensional
//! Brownian increment and `a_idio` is `ν` when the common kick is on and `a`
//! otherwise, so the total diffusion always matches `a²/2`. The common kick
//! translates every particle by `−σ ΔW`, which is what the transport-noise
//! field equation does to its profile. Differences use the minimum image of
//! the periodic box.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::diagnostics::second_moment;
use crate::domain::{lp_norm, DomainSpec, Field, ModelParams, RngContext};
use crate::error::{Error, Result};
use crate::noise::BrownianPath;
use crate::solver::Trajectory;

/// Positions in `[−L, L)²` at time `t`, each carrying `mass / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub positions: Vec<[f64; 2]>,
    pub t: f64,
    pub mass: f64,
    half_width: f64,
}

impl ParticleState {
    pub fn new(positions: Vec<[f64; 2]>, mass: f64, half_width: f64) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::InvalidParameter("need at least two particles".into()));
        }
        if !(mass > 0.0 && half_width > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mass and box half-width must be positive (got {mass}, {half_width})"
            )));
        }
        if positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("particle positions"));
        }
        let positions = positions
            .into_iter()
            .map(|[x, y]| [wrap(x, half_width), wrap(y, half_width)])
            .collect();
        Ok(Self {
            positions,
            t: 0.0,
            mass,
            half_width,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.len() as f64;
        let (sx, sy) = self
            .positions
            .iter()
            .fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
        [sx / n, sy / n]
    }

    /// `(m₀/N) Σ |X_i|²`.
    pub fn second_moment(&self) -> f64 {
        let s: f64 = self.positions.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum();
        self.mass * s / self.len() as f64
    }

    /// `(m₀/N) Σ |X_i − X̄|²`.
    pub fn central_second_moment(&self) -> f64 {
        let c = self.centroid();
        let s: f64 = self
            .positions
            .iter()
            .map(|p| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2))
            .sum();
        self.mass * s / self.len() as f64
    }

    /// Smallest pairwise minimum-image distance.
    pub fn min_pair_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, p) in self.positions.iter().enumerate() {
            for q in &self.positions[i + 1..] {
                let d = min_image(p, q, self.half_width);
                best = best.min((d[0] * d[0] + d[1] * d[1]).sqrt());
            }
        }
        best
    }
}

fn wrap(x: f64, half_width: f64) -> f64 {
    let period = 2.0 * half_width;
    let w = x - period * ((x + half_width) / period).floor();
    // Rounding can land exactly on the open end.
    if w >= half_width {
        w - period
    } else {
        w
    }
}

fn min_image(p: &[f64; 2], q: &[f64; 2], half_width: f64) -> [f64; 2] {
    let period = 2.0 * half_width;
    let f = |d: f64| d - period * (d / period).round();
    [f(p[0] - q[0]), f(p[1] - q[1])]
}

/// Normalization of the pairwise sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairNormalization {
    /// `1/(N − 1)`: makes the virial drift exact at `δ = 0`.
    #[default]
    NMinusOne,
    N,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleConfig {
    pub dt: f64,
    pub params: ModelParams,
    /// Desingularization radius `δ`.
    pub delta: f64,
    pub normalization: PairNormalization,
    pub drift: bool,
    pub idiosyncratic: bool,
    /// Shared kick `−σ dW` with a two-component `dW`.
    pub common_noise: bool,
}

impl ParticleConfig {
    pub fn new(dt: f64, params: ModelParams, delta: f64) -> Result<Self> {
        let cfg = Self {
            dt,
            params,
            delta,
            normalization: PairNormalization::default(),
            drift: true,
            idiosyncratic: true,
            common_noise: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "desingularization radius must be positive, got {}",
                self.delta
            )));
        }
        self.params.validate()?;
        if self.common_noise && self.idiosyncratic {
            self.params.validate_divergence()?;
        }
        Ok(())
    }

    /// Standard deviation factor of the per-particle kicks.
    pub fn idiosyncratic_amplitude(&self) -> f64 {
        match (self.idiosyncratic, self.common_noise) {
            (false, _) => 0.0,
            (true, true) => self.params.nu(),
            (true, false) => self.params.a,
        }
    }
}

/// Twice the typical spacing `sqrt(π M_c / N)`, with `M_c` the mean squared
/// distance to the centroid.
pub fn default_delta(state: &ParticleState) -> f64 {
    let spread = state.central_second_moment() / state.mass;
    2.0 * (PI * spread / state.len() as f64).sqrt()
}

/// `N` draws from the isotropic Gaussian of width `s`, recentred and rescaled
/// so the sample centroid is `center` and the sample second moment about it is
/// exactly `2 s²`.
pub fn sample_gaussian(
    count: usize,
    mass: f64,
    s: f64,
    center: [f64; 2],
    half_width: f64,
    ctx: RngContext,
) -> Result<ParticleState> {
    if !(s > 0.0) || count < 2 {
        return Err(Error::InvalidParameter(format!(
            "need width > 0 and at least two particles (s = {s}, N = {count})"
        )));
    }
    let mut rng = ctx.rng();
    let mut pts: Vec<[f64; 2]> = (0..count)
        .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
        .collect();
    let n = count as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0] / n, b + p[1] / n));
    let spread: f64 = pts.iter().map(|p| (p[0] - mx).powi(2) + (p[1] - my).powi(2)).sum::<f64>() / n;
    let scale = s * (2.0 / spread).sqrt();
    for p in &mut pts {
        *p = [center[0] + scale * (p[0] - mx), center[1] + scale * (p[1] - my)];
    }
    ParticleState::new(pts, mass, half_width)
}

/// Pairwise drift of every particle; exactly antisymmetric pair by pair.
/// Coincident particles are rejected.
pub fn pair_drift(state: &ParticleState, cfg: &ParticleConfig) -> Result<Vec<[f64; 2]>> {
    let n = state.len();
    let norm = match cfg.normalization {
        PairNormalization::NMinusOne => (n - 1) as f64,
        PairNormalization::N => n as f64,
    };
    let coef = -cfg.params.chi * state.mass / (2.0 * PI * norm);
    let d2 = cfg.delta * cfg.delta;
    let l = state.half_width;
    let pos = &state.positions;
    let drift: Vec<Option<[f64; 2]>> = pos
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let (mut fx, mut fy) = (0.0, 0.0);
            for (j, q) in pos.iter().enumerate() {
                if j == i {
                    continue;
                }
                let d = min_image(p, q, l);
                let r2 = d[0] * d[0] + d[1] * d[1];
                if r2 == 0.0 {
                    return None;
                }
                let w = 1.0 / (r2 + d2);
                fx += d[0] * w;
                fy += d[1] * w;
            }
            Some([coef * fx, coef * fy])
        })
        .collect();
    drift
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Precondition("particles have collapsed onto each other".into()))
}

/// One Euler–Maruyama step with explicit draws: `normals` holds two standard
/// normals per particle, `common_dw` the common Brownian increment.
pub fn particle_step_with(
    state: &ParticleState,
    cfg: &ParticleConfig,
    normals: &[f64],
    common_dw: Option<[f64; 2]>,
) -> Result<ParticleState> {
    let n = state.len();
    if normals.len() != 2 * n {
        return Err(Error::ShapeMismatch(format!(
            "need {} normals for {n} particles, got {}",
            2 * n,
            normals.len()
        )));
    }
    if cfg.common_noise != common_dw.is_some() {
        return Err(Error::ShapeMismatch("common increment must be given exactly when common noise is on".into()));
    }
    let drift = if cfg.drift && cfg.params.chi > 0.0 {
        pair_drift(state, cfg)?
    } else {
        vec![[0.0; 2]; n]
    };
    let amp = cfg.idiosyncratic_amplitude() * cfg.dt.sqrt();
    let shift = common_dw.map_or([0.0; 2], |dw| [-cfg.params.sigma * dw[0], -cfg.params.sigma * dw[1]]);
    let l = state.half_width;
    let mut positions = Vec::with_capacity(n);
    for (i, (p, f)) in state.positions.iter().zip(&drift).enumerate() {
        let x = p[0] + f[0] * cfg.dt + amp * normals[2 * i] + shift[0];
        let y = p[1] + f[1] * cfg.dt + amp * normals[2 * i + 1] + shift[1];
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::NonFinite("particle positions"));
        }
        positions.push([wrap(x, l), wrap(y, l)]);
    }
    Ok(ParticleState {
        positions,
        t: state.t + cfg.dt,
        mass: state.mass,
        half_width: l,
    })
}

/// One step drawing the particle kicks from `rng`.
pub fn particle_step<R: Rng + ?Sized>(
    state: &ParticleState,
    cfg: &ParticleConfig,
    rng: &mut R,
    common_dw: Option<[f64; 2]>,
) -> Result<ParticleState> {
    let normals: Vec<f64> = (0..2 * state.len()).map(|_| rng.sample(StandardNormal)).collect();
    particle_step_with(state, cfg, &normals, common_dw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<ParticleState>,
}

/// Runs `steps` steps, recording every `every`-th state (and the last). With
/// common noise on, `common` supplies the two-component driving path, which
/// may be shared with a field solver.
pub fn simulate_particles(
    state0: &ParticleState,
    cfg: &ParticleConfig,
    steps: usize,
    every: usize,
    ctx: RngContext,
    common: Option<&BrownianPath>,
) -> Result<ParticleTrajectory> {
    cfg.validate()?;
    if let Some(path) = common {
        if path.components() != 2 || path.steps() < steps || (path.dt() - cfg.dt).abs() > 1e-12 * cfg.dt {
            return Err(Error::ShapeMismatch("common path does not match the particle time grid".into()));
        }
    }
    if cfg.common_noise && common.is_none() {
        return Err(Error::ShapeMismatch("common noise is on but no path was given".into()));
    }
    let every = every.max(1);
    let mut rng = ctx.rng();
    let mut state = state0.clone();
    let mut times = vec![state.t];
    let mut states = vec![state.clone()];
    for k in 0..steps {
        let dw = if cfg.common_noise {
            common.map(|p| {
                let inc = p.increment(k);
                [inc[0], inc[1]]
            })
        } else {
            None
        };
        state = particle_step(&state, cfg, &mut rng, dw)?;
        if (k + 1) % every == 0 || k + 1 == steps {
            times.push(state.t);
            states.push(state.clone());
        }
    }
    Ok(ParticleTrajectory { times, states })
}

/// Scott/Silverman rule for a 2D Gaussian kernel: `ŝ N^{−1/6}`.
pub fn rule_of_thumb_bandwidth(state: &ParticleState) -> f64 {
    let s = (state.central_second_moment() / (2.0 * state.mass)).sqrt();
    s * (state.len() as f64).powf(-1.0 / 6.0)
}

/// Gaussian kernel density estimate on `domain`.
///
/// Each particle deposits a separable periodic Gaussian of width `bandwidth`,
/// renormalized on the grid so it carries exactly `m₀/N`. The estimate has the
/// particles' second moment plus `2 h² m₀`.
pub fn empirical_density(state: &ParticleState, domain: DomainSpec, bandwidth: f64) -> Result<Field> {
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let n = domain.n();
    let dx = domain.dx();
    let l = domain.half_width();
    let reach = ((6.0 * bandwidth / dx).ceil() as usize).min(n / 2);
    let width = (2 * reach + 1).min(n);
    let per = state.mass / state.len() as f64 / domain.cell_area();
    let mut values = vec![0.0; n * n];
    let weights = |c: f64| -> (usize, Vec<f64>) {
        // Nearest node at or below c, then a window around it.
        let base = ((c + l) / dx).floor() as isize;
        let start = base - reach as isize;
        let mut w = Vec::with_capacity(width);
        for k in 0..width as isize {
            let idx = start + k;
            let x = -l + idx as f64 * dx;
            let d = (x - c) / bandwidth;
            w.push((-0.5 * d * d).exp());
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        (start.rem_euclid(n as isize) as usize, w)
    };
    for p in &state.positions {
        let (sx, wx) = weights(p[0]);
        let (sy, wy) = weights(p[1]);
        for (b, vy) in wy.iter().enumerate() {
            let row = ((sy + b) % n) * n;
            for (a, vx) in wx.iter().enumerate() {
                values[row + (sx + a) % n] += per * vy * vx;
            }
        }
    }
    Field::new(domain, values)
}

/// Gap series between a particle run and a field run on the same times.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosGap {
    pub times: Vec<f64>,
    /// `‖KDE − ρ‖₂`.
    pub l2: Vec<f64>,
    /// KDE second moment, less the kernel's `2h²m₀`, minus that of `ρ`.
    pub second_moment_gap: Vec<f64>,
    pub field_second_moment: Vec<f64>,
}

impl ChaosGap {
    /// `max_t |ΔM| / M_field`.
    pub fn max_relative_second_moment_gap(&self) -> f64 {
        self.second_moment_gap
            .iter()
            .zip(&self.field_second_moment)
            .map(|(g, m)| (g / m).abs())
            .fold(0.0, f64::max)
    }
}

pub fn chaos_gap(particles: &ParticleTrajectory, field: &Trajectory, bandwidth: f64) -> Result<ChaosGap> {
    if particles.times.len() != field.times.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} particle snapshots vs {} field snapshots",
            particles.times.len(),
            field.times.len()
        )));
    }
    let mut out = ChaosGap {
        times: Vec::new(),
        l2: Vec::new(),
        second_moment_gap: Vec::new(),
        field_second_moment: Vec::new(),
    };
    for ((tp, sp), (tf, rho)) in particles
        .times
        .iter()
        .zip(&particles.states)
        .zip(field.times.iter().zip(&field.fields))
    {
        if (tp - tf).abs() > 1e-9 * tp.abs().max(1.0) {
            return Err(Error::ShapeMismatch(format!("time grids differ: {tp} vs {tf}")));
        }
        let kde = empirical_density(sp, *rho.domain(), bandwidth)?;
        let m_field = second_moment(rho);
        let m_kde = second_moment(&kde) - 2.0 * bandwidth * bandwidth * sp.mass;
        out.times.push(*tp);
        out.l2.push(lp_norm(&kde.sub(rho)?, 2.0));
        out.second_moment_gap.push(m_kde - m_field);
        out.field_second_moment.push(m_field);
    }
    Ok(out)
}
