//! Chemical concentration `c = G * ρ` and its gradient.
//!
//! Two Green kernels are available. The Newtonian kernel `−(1/2π) log|x|`
//! solves `−Δc = ρ`; on the periodic box the zero mode is dropped, which
//! amounts to solving against `ρ − m/|box|`. That neutralizing background
//! pushes every particle outwards with force `m (x − x̄) / (2|box|)`, a few
//! percent of the aggregation at desk box sizes, so by default the solver
//! adds the free-space correction `−m (x − x̄)/(2|box|)` to `∇c` (and the
//! matching quadratic to `c`). The Bessel kernel `1/(1+|k|²)` decays
//! exponentially and needs no correction.

use rustfft::num_complex::Complex64;

use crate::domain::{lp_norm, DomainSpec, Field};
use crate::error::{Error, Result};
use crate::spectral::SpectralGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelKind {
    /// `−Δc = ρ`, `G(x) = −(1/2π) log|x|`.
    #[default]
    Newtonian,
    /// `(I − Δ)c = ρ`, `Ĝ(k) = 1/(1 + |k|²)`.
    Bessel,
}

impl KernelKind {
    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::Newtonian => "newtonian",
            KernelKind::Bessel => "bessel",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "newtonian" => Some(KernelKind::Newtonian),
            "bessel" => Some(KernelKind::Bessel),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    pub c: Field,
    pub grad_c: (Field, Field),
}

/// Zeroth and first moments, needed for the background correction.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LowMoments {
    pub m0: f64,
    pub m1: (f64, f64),
}

impl LowMoments {
    pub(crate) fn of(domain: &DomainSpec, values: &[f64]) -> Self {
        let n = domain.n();
        let mut m0 = 0.0;
        let mut mx = 0.0;
        let mut my = 0.0;
        for j in 0..n {
            let y = domain.coord(j);
            let row = &values[j * n..(j + 1) * n];
            let mut row_sum = 0.0;
            for (i, v) in row.iter().enumerate() {
                row_sum += v;
                mx += domain.coord(i) * v;
            }
            m0 += row_sum;
            my += y * row_sum;
        }
        let da = domain.cell_area();
        Self {
            m0: m0 * da,
            m1: (mx * da, my * da),
        }
    }
}

/// Reusable potential solver for one grid and kernel.
#[derive(Debug, Clone)]
pub struct PotentialSolver {
    grid: SpectralGrid,
    kernel: KernelKind,
    background_correction: bool,
    /// `Ĝ` at each flat index.
    symbol: Vec<f64>,
}

impl PotentialSolver {
    pub fn new(domain: DomainSpec, kernel: KernelKind) -> Self {
        Self::with_grid(SpectralGrid::new(domain), kernel)
    }

    pub fn with_grid(grid: SpectralGrid, kernel: KernelKind) -> Self {
        let symbol = (0..grid.domain().len())
            .map(|idx| {
                let k2 = grid.k_sq(idx);
                match kernel {
                    KernelKind::Newtonian if idx == 0 => 0.0,
                    KernelKind::Newtonian => 1.0 / k2,
                    KernelKind::Bessel => 1.0 / (1.0 + k2),
                }
            })
            .collect();
        Self {
            grid,
            kernel,
            background_correction: true,
            symbol,
        }
    }

    /// Turns the free-space background correction of the Newtonian kernel on
    /// or off. Off gives the plain periodic solution of `−Δc = ρ − mean(ρ)`.
    pub fn background_correction(mut self, on: bool) -> Self {
        self.background_correction = on;
        self
    }

    pub fn kernel(&self) -> KernelKind {
        self.kernel
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    fn corrects(&self) -> bool {
        self.background_correction && self.kernel == KernelKind::Newtonian
    }

    pub fn solve(&self, rho: &Field) -> Result<PotentialField> {
        if rho.domain() != self.grid.domain() {
            return Err(Error::ShapeMismatch("density grid differs from solver grid".into()));
        }
        if rho.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("density passed to the potential solver"));
        }
        let domain = *rho.domain();
        let rho_hat = self.grid.forward(rho.values());
        let c_hat: Vec<Complex64> = rho_hat.iter().zip(&self.symbol).map(|(r, g)| r * g).collect();
        let mut c = self.grid.inverse(&c_hat);
        let (mut gx, mut gy) = self.grid.gradient(&c_hat);
        if self.corrects() {
            let low = LowMoments::of(&domain, rho.values());
            let area = domain.area();
            for (k, (x, y)) in domain.nodes().enumerate() {
                let (dx, dy) = (low.m0 * x - low.m1.0, low.m0 * y - low.m1.1);
                gx[k] -= dx / (2.0 * area);
                gy[k] -= dy / (2.0 * area);
                c[k] -= (low.m0 * (x * x + y * y) - 2.0 * (x * low.m1.0 + y * low.m1.1)) / (4.0 * area);
            }
        }
        Ok(PotentialField {
            c: Field::new(domain, c)?,
            grad_c: (Field::new(domain, gx)?, Field::new(domain, gy)?),
        })
    }

    /// `∇c` from an already transformed density; `values` are the physical
    /// values of the same density (used for the background correction).
    pub(crate) fn gradient_from_spectrum(
        &self,
        rho_hat: &[Complex64],
        values: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let c_hat: Vec<Complex64> = rho_hat.iter().zip(&self.symbol).map(|(r, g)| r * g).collect();
        let (mut gx, mut gy) = self.grid.gradient(&c_hat);
        if self.corrects() {
            let domain = self.grid.domain();
            let low = LowMoments::of(domain, values);
            let scale = 1.0 / (2.0 * domain.area());
            let n = domain.n();
            for j in 0..n {
                let y = domain.coord(j);
                for i in 0..n {
                    let x = domain.coord(i);
                    gx[j * n + i] -= scale * (low.m0 * x - low.m1.0);
                    gy[j * n + i] -= scale * (low.m0 * y - low.m1.1);
                }
            }
        }
        (gx, gy)
    }
}

/// One-shot potential solve with the background correction enabled.
pub fn solve_potential(rho: &Field, kernel: KernelKind) -> Result<PotentialField> {
    PotentialSolver::new(*rho.domain(), kernel).solve(rho)
}

/// Empirical lower estimate of the constant in `‖∇(G*ρ)‖_∞ ≤ C_p ‖ρ‖_p`:
/// the largest ratio over the probe set. Probes with zero norm are skipped.
pub fn estimate_cp(kernel: KernelKind, p: f64, probes: &[Field]) -> Result<f64> {
    if !(p > 2.0) {
        return Err(Error::InvalidParameter(format!(
            "the gradient bound needs p > 2, got {p}"
        )));
    }
    let mut best: Option<f64> = None;
    for probe in probes {
        let norm = lp_norm(probe, p);
        if norm == 0.0 || !norm.is_finite() {
            continue;
        }
        let pot = solve_potential(probe, kernel)?;
        let sup = pot
            .grad_c
            .0
            .values()
            .iter()
            .zip(pot.grad_c.1.values())
            .fold(0.0f64, |m, (gx, gy)| m.max(gx.hypot(*gy)));
        let ratio = sup / norm;
        best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
    }
    best.ok_or_else(|| Error::InvalidParameter("every probe has zero norm".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::make_gaussian_field;
    use std::f64::consts::PI;

    fn gaussian(n: usize) -> Field {
        make_gaussian_field(DomainSpec::new(10.0, n).unwrap(), 1.0, 1.0, (0.0, 0.0)).unwrap()
    }

    #[test]
    fn zero_density_gives_zero_potential() {
        let d = DomainSpec::new(10.0, 32).unwrap();
        for kernel in [KernelKind::Newtonian, KernelKind::Bessel] {
            let pot = solve_potential(&Field::zeros(d), kernel).unwrap();
            assert!(pot.c.sup_norm() == 0.0);
            assert!(pot.grad_c.0.sup_norm() == 0.0 && pot.grad_c.1.sup_norm() == 0.0);
        }
    }

    #[test]
    fn periodic_newtonian_inverts_laplacian() {
        let rho = gaussian(64);
        let solver = PotentialSolver::new(*rho.domain(), KernelKind::Newtonian).background_correction(false);
        let pot = solver.solve(&rho).unwrap();
        let g = solver.grid();
        let mut lap_hat = g.forward(pot.c.values());
        for (idx, v) in lap_hat.iter_mut().enumerate() {
            *v *= -g.k_sq(idx);
        }
        let lap = g.inverse(&lap_hat);
        let mean = rho.values().iter().sum::<f64>() / rho.values().len() as f64;
        let (mut err, mut norm) = (0.0, 0.0);
        for (l, r) in lap.iter().zip(rho.values()) {
            err += (l + (r - mean)).powi(2);
            norm += (r - mean).powi(2);
        }
        assert!((err / norm).sqrt() < 1e-8);
    }

    #[test]
    fn bessel_inverts_helmholtz() {
        let rho = gaussian(64);
        let solver = PotentialSolver::new(*rho.domain(), KernelKind::Bessel);
        let pot = solver.solve(&rho).unwrap();
        let g = solver.grid();
        let mut op_hat = g.forward(pot.c.values());
        for (idx, v) in op_hat.iter_mut().enumerate() {
            *v *= 1.0 + g.k_sq(idx);
        }
        let op = g.inverse(&op_hat);
        let (mut err, mut norm) = (0.0, 0.0);
        for (o, r) in op.iter().zip(rho.values()) {
            err += (o - r).powi(2);
            norm += r * r;
        }
        assert!((err / norm).sqrt() < 1e-8);
    }

    /// `2π r E(r)` for a unit Gaussian: the enclosed mass, by trapezoid
    /// quadrature of `2π s ρ(s)` rather than the closed form.
    fn enclosed_mass_field(r: f64) -> f64 {
        let steps = 4000;
        let h = r / steps as f64;
        let dens = |s: f64| s * (-s * s / 2.0).exp();
        let mut sum = 0.5 * (dens(0.0) + dens(r));
        for k in 1..steps {
            sum += dens(k as f64 * h);
        }
        sum * h
    }

    #[test]
    fn radial_field_matches_enclosed_mass() {
        let rho = gaussian(256);
        let pot = solve_potential(&rho, KernelKind::Newtonian).unwrap();
        let d = *rho.domain();
        let n = d.n();
        let (gx, gy) = (pot.grad_c.0.values(), pot.grad_c.1.values());
        let mut checked = 0;
        for (k, (x, y)) in d.nodes().enumerate() {
            let r = x.hypot(y);
            if !(0.5..=3.0).contains(&r) {
                continue;
            }
            // Attractive field: ∇c points inwards with magnitude E(r).
            let radial = -(gx[k] * x + gy[k] * y) / r;
            let exact = enclosed_mass_field(r) / (2.0 * PI * r);
            assert!((radial - exact).abs() < 0.01 * exact, "r={r}: {radial} vs {exact}");
            checked += 1;
        }
        assert!(checked > n);
    }

    #[test]
    fn translation_equivariance() {
        let rho = make_gaussian_field(DomainSpec::new(10.0, 64).unwrap(), 1.0, 1.0, (0.3, -0.2)).unwrap();
        let solver = PotentialSolver::new(*rho.domain(), KernelKind::Newtonian).background_correction(false);
        let a = solver.solve(&rho.roll(1, 0)).unwrap();
        let b = solver.solve(&rho).unwrap().c.roll(1, 0);
        for (u, v) in a.c.values().iter().zip(b.values()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn cp_estimate_is_scale_invariant_and_monotone() {
        let rho = gaussian(64);
        let single = estimate_cp(KernelKind::Newtonian, 3.0, std::slice::from_ref(&rho)).unwrap();
        assert!(single.is_finite() && single > 0.0);
        let pair = estimate_cp(KernelKind::Newtonian, 3.0, &[rho.clone(), rho.scaled(2.0)]).unwrap();
        assert!((pair - single).abs() < 1e-12 * single);
        let narrow = make_gaussian_field(*rho.domain(), 1.0, 0.5, (0.0, 0.0)).unwrap();
        let more = estimate_cp(KernelKind::Newtonian, 3.0, &[rho.clone(), narrow]).unwrap();
        assert!(more >= single);
        assert!(estimate_cp(KernelKind::Newtonian, 2.0, &[rho.clone()]).is_err());
        assert!(estimate_cp(KernelKind::Newtonian, 3.0, &[Field::zeros(*rho.domain())]).is_err());
    }
}
