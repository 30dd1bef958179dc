//! Brownian paths and the stochastic forcing of both noise regimes.
//!
//! Transport noise moves mass along a two-component Wiener process,
//! `σ ∇ρ · dW`. Basis noise multiplies a Lipschitz map of the density by a
//! finite spatial expansion, `Φ(ρ) Σ α_k e_k dW_k` with `Φ = σ g`. All
//! integrals are Itô.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::domain::{DomainSpec, Field, RngContext};
use crate::error::{Error, Result};

/// Shape `g` of the multiplicative map `Φ(ρ) = σ g(ρ)`.
#[derive(Debug, Clone, PartialEq)]
pub enum PhiMap {
    /// `g(ρ) = ρ`.
    Linear,
    /// `g(ρ) = ρ / (1 + ρ/cap)`.
    BoundedLinear { cap: f64 },
    /// Piecewise-linear interpolation through `(ρ, g)` knots with strictly
    /// increasing `ρ`, extended linearly past both ends.
    Table { knots: Vec<(f64, f64)> },
}

impl PhiMap {
    pub fn validate(&self) -> Result<()> {
        match self {
            PhiMap::Linear => Ok(()),
            PhiMap::BoundedLinear { cap } if cap.is_finite() && *cap > 0.0 => Ok(()),
            PhiMap::BoundedLinear { cap } => Err(Error::InvalidParameter(format!(
                "bounded-linear cap must be positive, got {cap}"
            ))),
            PhiMap::Table { knots } => {
                if knots.len() < 2 {
                    return Err(Error::InvalidParameter("phi table needs at least two knots".into()));
                }
                if knots.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                    return Err(Error::NonFinite("phi table"));
                }
                if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::InvalidParameter(
                        "phi table abscissae must be strictly increasing".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// `g(ρ)`.
    pub fn eval(&self, rho: f64) -> f64 {
        match self {
            PhiMap::Linear => rho,
            PhiMap::BoundedLinear { cap } => rho / (1.0 + rho / cap),
            PhiMap::Table { knots } => {
                let (x0, y0, slope) = table_segment(knots, rho);
                y0 + slope * (rho - x0)
            }
        }
    }

    /// `g'(ρ)`, the one-sided slope at table knots.
    pub fn derivative(&self, rho: f64) -> f64 {
        match self {
            PhiMap::Linear => 1.0,
            PhiMap::BoundedLinear { cap } => {
                let d = 1.0 + rho / cap;
                1.0 / (d * d)
            }
            PhiMap::Table { knots } => table_segment(knots, rho).2,
        }
    }
}

fn table_segment(knots: &[(f64, f64)], x: f64) -> (f64, f64, f64) {
    let seg = match knots.iter().position(|k| k.0 > x) {
        None => knots.len() - 2,
        Some(0) => 0,
        Some(i) => i - 1,
    };
    let (a, b) = (knots[seg], knots[seg + 1]);
    (a.0, a.1, (b.1 - a.1) / (b.0 - a.0))
}

/// One spatial mode `α_k e_k` of the basis noise.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMode {
    pub alpha: f64,
    pub shape: Field,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    /// No stochastic forcing.
    None,
    /// `σ ∇ρ · dW` with a two-component `W`; `σ` comes from the model
    /// parameters.
    Divergence,
    /// `σ g(ρ) Σ α_k e_k dW_k`.
    General { modes: Vec<NoiseMode>, phi: PhiMap },
}

impl NoiseSpec {
    /// Basis noise after checking `‖e_k‖_∞ ≤ 1`, finite weights and a common
    /// grid.
    pub fn general(modes: Vec<NoiseMode>, phi: PhiMap) -> Result<Self> {
        phi.validate()?;
        if modes.is_empty() {
            return Err(Error::InvalidParameter("basis noise needs at least one mode".into()));
        }
        let domain = *modes[0].shape.domain();
        for (k, m) in modes.iter().enumerate() {
            m.shape.check_same_grid(&modes[0].shape)?;
            if !m.alpha.is_finite() {
                return Err(Error::NonFinite("mode weight"));
            }
            if m.shape.sup_norm() > 1.0 + 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "mode {k} has sup norm {} > 1",
                    m.shape.sup_norm()
                )));
            }
        }
        let _ = domain;
        Ok(NoiseSpec::General { modes, phi })
    }

    /// A single spatially constant mode `e ≡ 1`, `α = 1`.
    pub fn constant_mode(domain: DomainSpec, phi: PhiMap) -> Result<Self> {
        let shape = Field::from_fn(domain, |_, _| 1.0)?;
        Self::general(vec![NoiseMode { alpha: 1.0, shape }], phi)
    }

    /// Number of scalar Wiener components driving this noise.
    pub fn components(&self) -> usize {
        match self {
            NoiseSpec::None => 0,
            NoiseSpec::Divergence => 2,
            NoiseSpec::General { modes, .. } => modes.len(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NoiseSpec::None => "none",
            NoiseSpec::Divergence => "divergence",
            NoiseSpec::General { .. } => "general",
        }
    }
}

/// Real Fourier modes on the box together with their weights.
#[derive(Debug, Clone)]
pub struct FourierBasis {
    pub modes: Vec<NoiseMode>,
    /// `‖e_k‖_2` on the box; the modes themselves are sup-normalized.
    pub l2_norms: Vec<f64>,
    /// `Σ_{k > N} α_k²` of the discarded tail of `α_k = α₀/k`.
    pub tail_alpha_sq: f64,
}

/// The first `count` real Fourier modes, lowest wavenumbers first: the
/// constant, then `cos` and `sin` of `π m·x / L` over a half plane of integer
/// vectors `m`. Each mode is scaled to unit sup norm on the grid and weighted
/// `α_k = α₀ / k`.
pub fn make_fourier_basis(domain: DomainSpec, count: usize, alpha0: f64) -> Result<FourierBasis> {
    if count == 0 {
        return Err(Error::InvalidParameter("basis needs at least one mode".into()));
    }
    let half = (domain.n() / 2) as i64;
    let mut vectors: Vec<(i64, i64)> = Vec::new();
    for mx in 0..half {
        for my in (1 - half)..half {
            if mx > 0 || my > 0 {
                vectors.push((mx, my));
            }
        }
    }
    vectors.sort_by_key(|&(mx, my)| (mx * mx + my * my, mx, my));
    if count > 1 + 2 * vectors.len() {
        return Err(Error::InvalidParameter(format!(
            "grid supports at most {} modes",
            1 + 2 * vectors.len()
        )));
    }
    let base = std::f64::consts::PI / domain.half_width();
    let mut shapes: Vec<Vec<f64>> = vec![vec![1.0; domain.len()]];
    for &(mx, my) in &vectors {
        if shapes.len() >= count {
            break;
        }
        let phase: Vec<f64> = domain
            .nodes()
            .map(|(x, y)| base * (mx as f64 * x + my as f64 * y))
            .collect();
        shapes.push(phase.iter().map(|t| t.cos()).collect());
        if shapes.len() < count {
            shapes.push(phase.iter().map(|t| t.sin()).collect());
        }
    }
    let mut modes = Vec::with_capacity(count);
    let mut l2_norms = Vec::with_capacity(count);
    for (k, mut s) in shapes.into_iter().enumerate() {
        let sup = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        s.iter_mut().for_each(|v| *v /= sup);
        let shape = Field::new(domain, s)?;
        l2_norms.push(crate::domain::lp_norm(&shape, 2.0));
        modes.push(NoiseMode {
            alpha: alpha0 / (k + 1) as f64,
            shape,
        });
    }
    let kept: f64 = (1..=count).map(|k| 1.0 / (k * k) as f64).sum();
    let tail_alpha_sq = alpha0 * alpha0 * (std::f64::consts::PI.powi(2) / 6.0 - kept).max(0.0);
    Ok(FourierBasis {
        modes,
        l2_norms,
        tail_alpha_sq,
    })
}

/// One `N(0, dt)` draw per Wiener component of `spec`.
pub fn sample_increments<R: Rng + ?Sized>(spec: &NoiseSpec, dt: f64, rng: &mut R) -> Result<Vec<f64>> {
    draw_increments(spec.components(), dt, rng)
}

fn draw_increments<R: Rng + ?Sized>(components: usize, dt: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    let sd = dt.sqrt();
    Ok((0..components)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect())
}

/// `Σ α_k e_k dW_k` on the grid.
pub fn modal_sum(modes: &[NoiseMode], dw: &[f64]) -> Vec<f64> {
    let len = modes.first().map_or(0, |m| m.shape.values().len());
    let mut out = vec![0.0; len];
    for (m, w) in modes.iter().zip(dw) {
        let c = m.alpha * w;
        if c == 0.0 {
            continue;
        }
        for (o, e) in out.iter_mut().zip(m.shape.values()) {
            *o += c * e;
        }
    }
    out
}

/// Explicit stochastic forcing over one increment `dW`.
///
/// Transport noise uses `grad_rho`; basis noise ignores it.
pub fn noise_term(
    spec: &NoiseSpec,
    sigma: f64,
    rho: &Field,
    grad_rho: (&Field, &Field),
    dw: &[f64],
) -> Result<Field> {
    if dw.len() != spec.components() {
        return Err(Error::ShapeMismatch(format!(
            "{} increments for {} components",
            dw.len(),
            spec.components()
        )));
    }
    let domain = *rho.domain();
    match spec {
        NoiseSpec::None => Ok(Field::zeros(domain)),
        NoiseSpec::Divergence => {
            rho.check_same_grid(grad_rho.0)?;
            rho.check_same_grid(grad_rho.1)?;
            let values = grad_rho
                .0
                .values()
                .iter()
                .zip(grad_rho.1.values())
                .map(|(gx, gy)| sigma * (gx * dw[0] + gy * dw[1]))
                .collect();
            Field::new(domain, values)
        }
        NoiseSpec::General { modes, phi } => {
            rho.check_same_grid(&modes[0].shape)?;
            let xi = modal_sum(modes, dw);
            let values = rho
                .values()
                .iter()
                .zip(&xi)
                .map(|(r, x)| sigma * phi.eval(*r) * x)
                .collect();
            Field::new(domain, values)
        }
    }
}

/// Wiener path on a uniform time grid, stored as increments.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    dt: f64,
    components: usize,
    /// `increments[step * components + c]`.
    increments: Vec<f64>,
}

impl BrownianPath {
    pub fn sample(components: usize, dt: f64, steps: usize, ctx: RngContext) -> Result<Self> {
        let mut rng = ctx.rng();
        let mut increments = Vec::with_capacity(components * steps);
        for _ in 0..steps {
            increments.extend(draw_increments(components, dt, &mut rng)?);
        }
        Ok(Self {
            dt,
            components,
            increments,
        })
    }

    pub fn from_increments(components: usize, dt: f64, increments: Vec<f64>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
        }
        if components > 0 && increments.len() % components != 0 {
            return Err(Error::ShapeMismatch("increments not a multiple of components".into()));
        }
        Ok(Self {
            dt,
            components,
            increments,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn steps(&self) -> usize {
        self.increments.len().checked_div(self.components).unwrap_or(0)
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps() as f64
    }

    /// Increments of every component over step `step`.
    pub fn increment(&self, step: usize) -> &[f64] {
        &self.increments[step * self.components..(step + 1) * self.components]
    }

    /// `W_c(t_k)` for `k = 0..=steps`.
    pub fn values(&self, component: usize) -> Vec<f64> {
        let mut w = 0.0;
        let mut out = Vec::with_capacity(self.steps() + 1);
        out.push(0.0);
        for k in 0..self.steps() {
            w += self.increments[k * self.components + component];
            out.push(w);
        }
        out
    }

    /// Halves the time step by Brownian-bridge midpoints; values on the
    /// coarse grid are unchanged.
    pub fn refine(&self, ctx: RngContext) -> Self {
        let mut rng = ctx.rng();
        let half_sd = 0.5 * self.dt.sqrt();
        let mut increments = Vec::with_capacity(2 * self.increments.len());
        let mut second = vec![0.0; self.components];
        for step in 0..self.steps() {
            for (c, dw) in self.increment(step).iter().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                increments.push(0.5 * dw + half_sd * z);
                second[c] = 0.5 * dw - half_sd * z;
            }
            increments.extend_from_slice(&second);
        }
        Self {
            dt: 0.5 * self.dt,
            components: self.components,
            increments,
        }
    }

    /// Sums `factor` consecutive increments.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps() % factor != 0 {
            return Err(Error::InvalidParameter(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps()
            )));
        }
        let mut increments = Vec::with_capacity(self.increments.len() / factor);
        for block in 0..self.steps() / factor {
            for c in 0..self.components {
                let s: f64 = (0..factor)
                    .map(|k| self.increments[(block * factor + k) * self.components + c])
                    .sum();
                increments.push(s);
            }
        }
        Ok(Self {
            dt: self.dt * factor as f64,
            components: self.components,
            increments,
        })
    }

    /// First `steps` steps of the path.
    pub fn truncated(&self, steps: usize) -> Self {
        let steps = steps.min(self.steps());
        Self {
            dt: self.dt,
            components: self.components,
            increments: self.increments[..steps * self.components].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::make_gaussian_field;

    fn domain() -> DomainSpec {
        DomainSpec::new(10.0, 32).unwrap()
    }

    #[test]
    fn zero_time_step_is_rejected() {
        let mut rng = RngContext::new(1, 0).rng();
        assert!(sample_increments(&NoiseSpec::Divergence, 0.0, &mut rng).is_err());
    }

    #[test]
    fn increment_moments() {
        let path = BrownianPath::sample(1, 0.01, 100_000, RngContext::new(11, 0)).unwrap();
        let inc = &path.increments;
        let n = inc.len() as f64;
        let mean = inc.iter().sum::<f64>() / n;
        let var = inc.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 3.0 * (0.01 / n).sqrt());
        assert!((var - 0.01).abs() < 0.05 * 0.01);
    }

    #[test]
    fn zero_increment_gives_zero_forcing() {
        let d = domain();
        let rho = make_gaussian_field(d, 1.0, 1.0, (0.0, 0.0)).unwrap();
        let g = Field::zeros(d);
        let out = noise_term(&NoiseSpec::Divergence, 0.5, &rho, (&g, &g), &[0.0, 0.0]).unwrap();
        assert_eq!(out.sup_norm(), 0.0);
    }

    #[test]
    fn constant_density_has_no_transport_forcing() {
        let d = domain();
        let rho = Field::from_fn(d, |_, _| 2.0).unwrap();
        let g = Field::zeros(d);
        let out = noise_term(&NoiseSpec::Divergence, 0.5, &rho, (&g, &g), &[0.3, -0.1]).unwrap();
        assert_eq!(out.sup_norm(), 0.0);
    }

    #[test]
    fn constant_mode_scales_density() {
        let d = domain();
        let rho = make_gaussian_field(d, 1.0, 1.0, (0.0, 0.0)).unwrap();
        let spec = NoiseSpec::constant_mode(d, PhiMap::Linear).unwrap();
        let g = Field::zeros(d);
        let out = noise_term(&spec, 0.7, &rho, (&g, &g), &[0.2]).unwrap();
        for (o, r) in out.values().iter().zip(rho.values()) {
            assert!((o - 0.7 * 0.2 * r).abs() < 1e-15);
        }
    }

    #[test]
    fn fourier_basis_is_sup_normalized_and_orthogonal() {
        let d = domain();
        let one = make_fourier_basis(d, 1, 1.0).unwrap();
        assert!(one.modes[0].shape.values().iter().all(|&v| v == 1.0));
        let basis = make_fourier_basis(d, 9, 1.0).unwrap();
        for (k, m) in basis.modes.iter().enumerate() {
            assert!((m.shape.sup_norm() - 1.0).abs() < 1e-15);
            assert!((m.alpha - 1.0 / (k + 1) as f64).abs() < 1e-15);
        }
        for i in 0..9 {
            for j in 0..i {
                let a = basis.modes[i].shape.values();
                let b = basis.modes[j].shape.values();
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na: f64 = a.iter().map(|x| x * x).sum();
                assert!(dot.abs() < 1e-12 * na, "modes {i},{j}: {dot}");
            }
        }
        assert!(basis.tail_alpha_sq > 0.0);
    }

    #[test]
    fn bridge_refinement_keeps_coarse_values() {
        let coarse = BrownianPath::sample(2, 0.1, 16, RngContext::new(5, 1)).unwrap();
        let fine = coarse.refine(RngContext::new(5, 2));
        assert_eq!(fine.steps(), 32);
        for c in 0..2 {
            let wc = coarse.values(c);
            let wf = fine.values(c);
            for k in 0..=16 {
                assert!((wc[k] - wf[2 * k]).abs() < 1e-14);
            }
        }
        let back = fine.coarsen(2).unwrap();
        for (a, b) in back.increments.iter().zip(&coarse.increments) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn phi_maps() {
        let b = PhiMap::BoundedLinear { cap: 2.0 };
        assert!((b.eval(2.0) - 1.0).abs() < 1e-15);
        assert!((b.derivative(0.0) - 1.0).abs() < 1e-15);
        let t = PhiMap::Table {
            knots: vec![(0.0, 0.0), (1.0, 2.0), (3.0, 3.0)],
        };
        t.validate().unwrap();
        assert!((t.eval(0.5) - 1.0).abs() < 1e-15);
        assert!((t.eval(2.0) - 2.5).abs() < 1e-15);
        assert!((t.eval(5.0) - 4.0).abs() < 1e-15);
        assert!((t.derivative(-1.0) - 2.0).abs() < 1e-15);
        assert!(PhiMap::Table { knots: vec![(1.0, 0.0), (0.5, 1.0)] }.validate().is_err());
    }
}
