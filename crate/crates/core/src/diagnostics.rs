//! Monitored quantities along a run and the blowup detectors.
//!
//! The cutoff `φ_ε` replaces `|x|²` by a compactly supported weight. With
//! `R = 1/ε`, `r = |x|` and `s = (r − R)/R`:
//!
//! ```text
//! φ_ε = r²            for r ≤ R
//! φ_ε = R² P(s)       for R < r < 2R,   P(s) = (1 − s)³ (1 + 5s + 13s²)
//! φ_ε = 0             for r ≥ 2R
//! ```
//!
//! `P` matches value, slope and curvature of `r²` at `s = 0` and vanishes to
//! third order at `s = 1`, so `φ_ε` is C². It satisfies `0 ≤ φ_ε ≤ |x|²`.
//! Its Laplacian `P''(s) + P'(s)/(1 + s)` does not depend on `ε`; on the
//! blend it reaches about `−14.2`, see [`CutoffSpec::laplacian_bound`]. A
//! bound of 4 is impossible for any C¹ blend: with `|Δφ| ≤ 4` the radial
//! profile can fall by at most `≈ 0.23 R²` between `R` and `2R`, short of
//! the `R²` it has to lose.

use crate::domain::{lp_norm, lp_norm_pow, Field, ModelParams};
use crate::error::{Error, Result};
use crate::potential::PotentialSolver;
use crate::spectral::SpectralGrid;

/// `∫ |x|² ρ`.
pub fn second_moment(f: &Field) -> f64 {
    let d = f.domain();
    let n = d.n();
    let mut sum = 0.0;
    for j in 0..n {
        let y = d.coord(j);
        for i in 0..n {
            let x = d.coord(i);
            sum += (x * x + y * y) * f.values()[j * n + i];
        }
    }
    sum * d.cell_area()
}

/// Radial cutoff `φ_ε` of `|x|²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffSpec {
    eps: f64,
}

impl CutoffSpec {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::InvalidParameter(format!("cutoff eps must be positive, got {eps}")));
        }
        Ok(Self { eps })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Radius `1/ε` inside which `φ_ε = |x|²`.
    pub fn inner_radius(&self) -> f64 {
        1.0 / self.eps
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let r0 = self.inner_radius();
        let r2 = x * x + y * y;
        if r2 <= r0 * r0 {
            return r2;
        }
        let s = r2.sqrt() / r0 - 1.0;
        if s >= 1.0 {
            return 0.0;
        }
        r0 * r0 * blend(s)
    }

    /// Radial second derivative and `φ'/r` at radius `r`.
    fn radial_curvatures(&self, r: f64) -> (f64, f64) {
        let r0 = self.inner_radius();
        if r <= r0 {
            return (2.0, 2.0);
        }
        let s = r / r0 - 1.0;
        if s >= 1.0 {
            return (0.0, 0.0);
        }
        (blend_d2(s), blend_d1(s) / (1.0 + s))
    }

    /// `Δφ_ε` at `(x, y)`.
    pub fn laplacian(&self, x: f64, y: f64) -> f64 {
        let (d2, d1r) = self.radial_curvatures(x.hypot(y));
        d2 + d1r
    }

    /// `sup |Δφ_ε|`, the same for every `ε`.
    pub fn laplacian_bound() -> f64 {
        sample_blend(|s| (blend_d2(s) + blend_d1(s) / (1.0 + s)).abs()).max(4.0)
    }

    /// Lipschitz constant of `∇φ_ε`: the largest eigenvalue magnitude of the
    /// Hessian, `max(|φ''|, |φ'/r|)`.
    pub fn gradient_lipschitz() -> f64 {
        sample_blend(|s| blend_d2(s).abs().max((blend_d1(s) / (1.0 + s)).abs())).max(2.0)
    }
}

fn sample_blend(f: impl Fn(f64) -> f64) -> f64 {
    (0..=10_000).map(|k| f(k as f64 / 10_000.0)).fold(0.0, f64::max)
}

// P(s) = 1 + 2s + s² − 25s³ + 34s⁴ − 13s⁵.
fn blend(s: f64) -> f64 {
    1.0 + s * (2.0 + s * (1.0 + s * (-25.0 + s * (34.0 - 13.0 * s))))
}

fn blend_d1(s: f64) -> f64 {
    2.0 + s * (2.0 + s * (-75.0 + s * (136.0 - 65.0 * s)))
}

fn blend_d2(s: f64) -> f64 {
    2.0 + s * (-150.0 + s * (408.0 - 260.0 * s))
}

/// `∫ φ_ε ρ`. The support of `φ_ε` (radius `2/ε`) must fit in the box.
pub fn cutoff_moment(f: &Field, cut: &CutoffSpec) -> Result<f64> {
    let d = f.domain();
    if 2.0 * cut.inner_radius() > d.half_width() {
        return Err(Error::Precondition(format!(
            "cutoff support radius {} exceeds the half width {}",
            2.0 * cut.inner_radius(),
            d.half_width()
        )));
    }
    let sum: f64 = d
        .nodes()
        .zip(f.values())
        .map(|((x, y), v)| cut.eval(x, y) * v)
        .sum();
    Ok(sum * d.cell_area())
}

/// `max ρ` over nodes with `|x| ≤ radius`.
pub fn sup_on_ball(f: &Field, radius: f64) -> f64 {
    let r2 = radius * radius;
    f.domain()
        .nodes()
        .zip(f.values())
        .filter(|((x, y), _)| x * x + y * y <= r2)
        .fold(0.0f64, |m, (_, v)| m.max(v.abs()))
}

/// `(‖ρ‖_{H¹}, ‖D²ρ‖₂)` by Parseval on the grid.
pub fn h1_and_hessian_norms(f: &Field) -> (f64, f64) {
    h1_and_hessian_with(&SpectralGrid::new(*f.domain()), f)
}

fn h1_and_hessian_with(grid: &SpectralGrid, f: &Field) -> (f64, f64) {
    let spec = grid.forward(f.values());
    let n = grid.n();
    let scale = f.domain().cell_area() / f.domain().len() as f64;
    let (mut h1, mut hess) = (0.0, 0.0);
    for (idx, c) in spec.iter().enumerate() {
        let p = c.norm_sqr();
        let (kx, ky) = (grid.k(idx % n), grid.k(idx / n));
        let k2 = kx * kx + ky * ky;
        h1 += p * (1.0 + k2);
        hess += p * k2 * k2;
    }
    ((h1 * scale).sqrt(), (hess * scale).sqrt())
}

/// Rate at which `‖ρ‖_p^p` decreases under transport noise:
///
/// ```text
/// ν² p(p−1)/2 ∫ ρ^{p−2} |∇ρ|²  +  χ p ∫ ρ^{p−1} ∇·(ρ∇c)
/// ```
///
/// Derivatives are spectral; `potential` should match the solver's kernel
/// and background correction. Needs `p ≥ 2`.
pub fn lp_dissipation_rate(f: &Field, params: &ModelParams, potential: &PotentialSolver) -> Result<f64> {
    let p = params.p;
    if p < 2.0 {
        return Err(Error::Precondition(format!("dissipation rate needs p >= 2, got {p}")));
    }
    let grid = potential.grid();
    let rho = f.values();
    let spec = grid.forward(rho);
    let (rx, ry) = grid.gradient(&spec);
    let (gx, gy) = potential.gradient_from_spectrum(&spec, rho);
    let fx: Vec<f64> = rho.iter().zip(&gx).map(|(r, g)| r * g).collect();
    let fy: Vec<f64> = rho.iter().zip(&gy).map(|(r, g)| r * g).collect();
    let (fx_hat, fy_hat) = grid.forward_pair(&fx, &fy);
    let (dxx, _) = grid.gradient(&fx_hat);
    let (_, dyy) = grid.gradient(&fy_hat);
    let nu_sq = params.nu_sq();
    let mut sum = 0.0;
    for k in 0..rho.len() {
        let r = rho[k].max(0.0);
        let grad_sq = rx[k] * rx[k] + ry[k] * ry[k];
        sum += 0.5 * nu_sq * p * (p - 1.0) * r.powf(p - 2.0) * grad_sq
            + params.chi * p * r.powf(p - 1.0) * (dxx[k] + dyy[k]);
    }
    Ok(sum * f.domain().cell_area())
}

/// Residual of the pathwise `L^p` balance
/// `‖ρ(t)‖_p^p − ‖ρ₀‖_p^p + ∫₀ᵗ rate ds` at every output time, with the
/// time integral by the trapezoid rule over `times`. Under transport noise
/// the stochastic term integrates to zero, so the residual measures only
/// discretization error.
pub fn lp_balance_residual(
    times: &[f64],
    fields: &[Field],
    params: &ModelParams,
    potential: &PotentialSolver,
) -> Result<Vec<f64>> {
    if times.len() != fields.len() || times.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} times for {} fields",
            times.len(),
            fields.len()
        )));
    }
    let rates = fields
        .iter()
        .map(|f| lp_dissipation_rate(f, params, potential))
        .collect::<Result<Vec<_>>>()?;
    let norm0 = lp_norm_pow(&fields[0], params.p);
    let mut integral = 0.0;
    let mut out = Vec::with_capacity(fields.len());
    for k in 0..fields.len() {
        if k > 0 {
            integral += 0.5 * (times[k] - times[k - 1]) * (rates[k] + rates[k - 1]);
        }
        out.push(lp_norm_pow(&fields[k], params.p) - norm0 + integral);
    }
    Ok(out)
}

/// What to record at each output time.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsConfig {
    pub p_list: Vec<f64>,
    pub cutoff: Option<CutoffSpec>,
    pub ball_radius: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            p_list: vec![2.0],
            cutoff: None,
            ball_radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub second_moment: f64,
    /// `u_ε`; `NaN` when no cutoff is configured.
    pub cutoff_moment: f64,
    /// `‖ρ‖_p` in the order of the configured `p_list`.
    pub lp_norms: Vec<f64>,
    pub h1: f64,
    pub hessian: f64,
    pub sup: f64,
    pub sup_on_ball: f64,
    pub blown_up: bool,
}

/// Records diagnostics on one grid, reusing its FFT plans.
#[derive(Debug, Clone)]
pub struct Recorder {
    cfg: DiagnosticsConfig,
    grid: SpectralGrid,
}

impl Recorder {
    pub fn new(domain: crate::domain::DomainSpec, cfg: DiagnosticsConfig) -> Result<Self> {
        if let Some(cut) = &cfg.cutoff {
            if 2.0 * cut.inner_radius() > domain.half_width() {
                return Err(Error::Precondition(format!(
                    "cutoff support radius {} exceeds the half width {}",
                    2.0 * cut.inner_radius(),
                    domain.half_width()
                )));
            }
        }
        if cfg.p_list.iter().any(|p| !(*p >= 1.0)) {
            return Err(Error::InvalidParameter("norm exponents must be >= 1".into()));
        }
        Ok(Self {
            cfg,
            grid: SpectralGrid::new(domain),
        })
    }

    pub fn config(&self) -> &DiagnosticsConfig {
        &self.cfg
    }

    pub fn record(&self, t: f64, f: &Field, blown_up: bool) -> DiagnosticsRecord {
        let (h1, hessian) = h1_and_hessian_with(&self.grid, f);
        DiagnosticsRecord {
            t,
            mass: crate::domain::mass(f),
            second_moment: second_moment(f),
            cutoff_moment: match &self.cfg.cutoff {
                Some(c) => cutoff_moment(f, c).expect("checked at construction"),
                None => f64::NAN,
            },
            lp_norms: self.cfg.p_list.iter().map(|&p| lp_norm(f, p)).collect(),
            h1,
            hessian,
            sup: f.sup_norm(),
            sup_on_ball: sup_on_ball(f, self.cfg.ball_radius),
            blown_up,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlowupKind {
    /// No detector fired.
    None,
    /// Too few records to decide.
    Inconclusive,
    /// Sup-norm cap exceeded or non-finite state.
    Numerical,
    /// `H¹` and integrated Hessian norms diverging.
    Type1,
    /// Second moment forced through zero, or past its growth threshold.
    Type2,
    /// Ensemble mean of the local sup norm diverging.
    Type3,
}

impl BlowupKind {
    pub fn name(&self) -> &'static str {
        match self {
            BlowupKind::None => "none",
            BlowupKind::Inconclusive => "inconclusive",
            BlowupKind::Numerical => "numerical",
            BlowupKind::Type1 => "type1",
            BlowupKind::Type2 => "type2",
            BlowupKind::Type3 => "type3",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlowupReport {
    pub kind: BlowupKind,
    pub firing_time: Option<f64>,
    /// Every detector that fired, with its time, earliest first.
    pub firings: Vec<(BlowupKind, f64)>,
    /// Named scalar series backing the decision.
    pub evidence: Vec<(String, Vec<f64>)>,
    pub theoretical_bound: Option<f64>,
}

impl BlowupReport {
    /// True when a detector fired no later than the theoretical bound.
    pub fn within_bound(&self) -> Option<bool> {
        Some(self.firing_time? <= self.theoretical_bound?)
    }
}

/// Thresholds of the per-path detectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Sup-norm cap of the numerical detector.
    pub cap: f64,
    /// Type 1 fires once `‖ρ‖_{H¹}` exceeds this multiple of its initial
    /// value while still accelerating ...
    pub h1_factor: f64,
    /// ... and `∫ ‖D²ρ‖₂ dt` exceeds this multiple of the initial `‖D²ρ‖₂`.
    pub hessian_factor: f64,
    /// Type 2 fires when `M` grows past this multiple of `M(0)` ...
    pub moment_factor: f64,
    /// ... or when the linear extrapolation of the last two records reaches
    /// `M = 0` within this time.
    pub extrapolation_window: f64,
    pub theoretical_bound: Option<f64>,
}

impl DetectorConfig {
    pub fn with_cap(cap: f64) -> Self {
        Self {
            cap,
            h1_factor: 100.0,
            hessian_factor: 100.0,
            moment_factor: 100.0,
            extrapolation_window: 0.0,
            theoretical_bound: None,
        }
    }
}

/// Per-path blowup classification from a record series.
pub fn detect_blowup(records: &[DiagnosticsRecord], cfg: &DetectorConfig) -> BlowupReport {
    let evidence = vec![
        ("t".to_string(), records.iter().map(|r| r.t).collect()),
        ("sup".to_string(), records.iter().map(|r| r.sup).collect()),
        ("h1".to_string(), records.iter().map(|r| r.h1).collect()),
        ("hessian".to_string(), records.iter().map(|r| r.hessian).collect()),
        ("second_moment".to_string(), records.iter().map(|r| r.second_moment).collect()),
        ("mass".to_string(), records.iter().map(|r| r.mass).collect()),
    ];
    if records.len() < 2 {
        return BlowupReport {
            kind: BlowupKind::Inconclusive,
            firing_time: None,
            firings: Vec::new(),
            evidence,
            theoretical_bound: cfg.theoretical_bound,
        };
    }
    let mut firings = Vec::new();

    if let Some(r) = records
        .iter()
        .find(|r| r.blown_up || !r.sup.is_finite() || r.sup > cfg.cap)
    {
        firings.push((BlowupKind::Numerical, r.t));
    }

    let first = &records[0];
    let mut hess_integral = 0.0;
    for w in 1..records.len() {
        let (a, b) = (&records[w - 1], &records[w]);
        if !(b.h1.is_finite() && b.hessian.is_finite()) {
            break;
        }
        hess_integral += 0.5 * (a.hessian + b.hessian) * (b.t - a.t);
        let accelerating = w >= 2 && {
            let z = &records[w - 2];
            let s1 = (a.h1 - z.h1) / (a.t - z.t);
            let s2 = (b.h1 - a.h1) / (b.t - a.t);
            s2 > s1 && s2 > 0.0
        };
        if accelerating
            && b.h1 > cfg.h1_factor * first.h1
            && hess_integral > cfg.hessian_factor * first.hessian
        {
            firings.push((BlowupKind::Type1, b.t));
            break;
        }
    }

    for w in 1..records.len() {
        let (a, b) = (&records[w - 1], &records[w]);
        if b.mass <= 0.0 || !b.second_moment.is_finite() {
            break;
        }
        if b.second_moment > cfg.moment_factor * first.second_moment.max(f64::MIN_POSITIVE) {
            firings.push((BlowupKind::Type2, b.t));
            break;
        }
        let slope = (b.second_moment - a.second_moment) / (b.t - a.t);
        if b.second_moment <= 0.0 || (slope < 0.0 && -b.second_moment / slope <= cfg.extrapolation_window) {
            firings.push((BlowupKind::Type2, b.t));
            break;
        }
    }

    firings.sort_by(|x, y| x.1.total_cmp(&y.1));
    let (kind, firing_time) = match firings.first() {
        Some(&(k, t)) => (k, Some(t)),
        None => (BlowupKind::None, None),
    };
    BlowupReport {
        kind,
        firing_time,
        firings,
        evidence,
        theoretical_bound: cfg.theoretical_bound,
    }
}

/// Ensemble detector: fires at the first common record index where the mean
/// over paths of the local sup norm exceeds `threshold` and more than half of
/// the paths have hit `cap`. Paths that stopped early carry their last
/// record forward.
pub fn detect_type3(paths: &[Vec<DiagnosticsRecord>], cap: f64, threshold: f64) -> BlowupReport {
    let longest = paths.iter().map(|p| p.len()).max().unwrap_or(0);
    let mut mean_series = Vec::with_capacity(longest);
    let mut frac_series = Vec::with_capacity(longest);
    let mut time_series = Vec::with_capacity(longest);
    let mut fired = None;
    let live: Vec<&Vec<DiagnosticsRecord>> = paths.iter().filter(|p| !p.is_empty()).collect();
    for k in 0..longest {
        let mut sum = 0.0;
        let mut hits = 0usize;
        let mut t = f64::NAN;
        for p in &live {
            let r = &p[k.min(p.len() - 1)];
            if k < p.len() {
                t = r.t;
            }
            sum += r.sup_on_ball;
            if r.blown_up || r.sup > cap {
                hits += 1;
            }
        }
        let mean = sum / live.len() as f64;
        let frac = hits as f64 / live.len() as f64;
        mean_series.push(mean);
        frac_series.push(frac);
        time_series.push(t);
        if fired.is_none() && mean > threshold && frac > 0.5 {
            fired = Some(t);
        }
    }
    let kind = if live.is_empty() || longest < 2 {
        BlowupKind::Inconclusive
    } else if fired.is_some() {
        BlowupKind::Type3
    } else {
        BlowupKind::None
    };
    BlowupReport {
        kind,
        firing_time: fired,
        firings: fired.map(|t| (BlowupKind::Type3, t)).into_iter().collect(),
        evidence: vec![
            ("t".to_string(), time_series),
            ("mean_sup_on_ball".to_string(), mean_series),
            ("cap_hit_fraction".to_string(), frac_series),
        ],
        theoretical_bound: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{make_gaussian_field, DomainSpec};
    use std::f64::consts::PI;

    fn unit_gaussian() -> Field {
        make_gaussian_field(DomainSpec::new(10.0, 128).unwrap(), 1.0, 1.0, (0.0, 0.0)).unwrap()
    }

    #[test]
    fn second_moment_of_gaussian() {
        assert!((second_moment(&unit_gaussian()) - 2.0).abs() < 1e-6);
        let shifted =
            make_gaussian_field(DomainSpec::new(10.0, 128).unwrap(), 1.0, 1.0, (1.0, -0.5)).unwrap();
        assert!((second_moment(&shifted) - (2.0 + 1.25)).abs() < 1e-4);
    }

    #[test]
    fn cutoff_blend_properties() {
        let cut = CutoffSpec::new(0.5).unwrap();
        // C² matching at both ends.
        assert!((blend(0.0) - 1.0).abs() < 1e-15 && blend(1.0).abs() < 1e-12);
        assert!((blend_d1(0.0) - 2.0).abs() < 1e-15 && blend_d1(1.0).abs() < 1e-12);
        assert!((blend_d2(0.0) - 2.0).abs() < 1e-15 && blend_d2(1.0).abs() < 1e-12);
        for k in 0..=400 {
            let r = 5.0 * k as f64 / 400.0;
            let v = cut.eval(r, 0.0);
            assert!(v >= 0.0 && v <= r * r + 1e-12);
        }
        assert_eq!(cut.eval(4.0, 0.1), 0.0);
        let bound = CutoffSpec::laplacian_bound();
        assert!(bound > 14.0 && bound < 14.5, "{bound}");
    }

    #[test]
    fn cutoff_laplacian_matches_finite_differences() {
        let cut = CutoffSpec::new(0.5).unwrap();
        let h = 1e-4;
        for &(x, y) in &[(2.3, 0.4), (1.0, 2.5), (-3.1, 1.2)] {
            let fd = (cut.eval(x + h, y) + cut.eval(x - h, y) + cut.eval(x, y + h) + cut.eval(x, y - h)
                - 4.0 * cut.eval(x, y))
                / (h * h);
            assert!((fd - cut.laplacian(x, y)).abs() < 1e-4, "{fd} vs {}", cut.laplacian(x, y));
        }
    }

    #[test]
    fn cutoff_moment_cases() {
        let f = unit_gaussian();
        let m = second_moment(&f);
        let u = cutoff_moment(&f, &CutoffSpec::new(0.2).unwrap()).unwrap();
        assert!((u - m).abs() < 1e-3);
        // Compact support well inside 1/ε.
        let d = DomainSpec::new(10.0, 64).unwrap();
        let bump = Field::from_fn(d, |x, y| if x * x + y * y < 4.0 { 1.0 } else { 0.0 }).unwrap();
        let ub = cutoff_moment(&bump, &CutoffSpec::new(0.3).unwrap()).unwrap();
        assert!((ub - second_moment(&bump)).abs() < 1e-10);
        let ring = Field::from_fn(d, |x, y| if x * x + y * y > 25.0 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(cutoff_moment(&ring, &CutoffSpec::new(0.4).unwrap()).unwrap(), 0.0);
        assert!(cutoff_moment(&f, &CutoffSpec::new(0.1).unwrap()).is_err());
    }

    /// `∫₀^∞ f(r) 2πr dr` by the trapezoid rule on `[0, 12]`.
    fn radial_integral(f: impl Fn(f64) -> f64) -> f64 {
        let steps = 24_000;
        let h = 12.0 / steps as f64;
        (1..steps).map(|k| {
            let r = k as f64 * h;
            f(r) * 2.0 * PI * r
        }).sum::<f64>() * h
    }

    #[test]
    fn h1_norms_of_gaussian() {
        // Unit Gaussian: ρ = e^{−r²/2}/2π, |∇ρ| = rρ, Δρ = (r² − 2)ρ.
        let rho = |r: f64| (-r * r / 2.0).exp() / (2.0 * PI);
        let l2 = radial_integral(|r| rho(r).powi(2));
        let grad = radial_integral(|r| (r * rho(r)).powi(2));
        let lap = radial_integral(|r| ((r * r - 2.0) * rho(r)).powi(2));
        let (h1, hess) = h1_and_hessian_norms(&unit_gaussian());
        assert!((h1 - (l2 + grad).sqrt()).abs() < 1e-4, "{h1}");
        // On the whole plane ‖D²ρ‖₂ = ‖Δρ‖₂.
        assert!((hess - lap.sqrt()).abs() < 1e-4, "{hess}");
        let (z1, z2) = h1_and_hessian_norms(&Field::zeros(DomainSpec::new(10.0, 16).unwrap()));
        assert_eq!((z1, z2), (0.0, 0.0));
        let (s1, s2) = h1_and_hessian_norms(&unit_gaussian().scaled(3.0));
        assert!((s1 - 3.0 * h1).abs() < 1e-12 && (s2 - 3.0 * hess).abs() < 1e-12);
    }

    fn rec(t: f64, sup: f64, m2: f64) -> DiagnosticsRecord {
        DiagnosticsRecord {
            t,
            mass: 1.0,
            second_moment: m2,
            cutoff_moment: f64::NAN,
            lp_norms: vec![],
            h1: 1.0,
            hessian: 1.0,
            sup,
            sup_on_ball: sup,
            blown_up: false,
        }
    }

    #[test]
    fn detector_cases() {
        let short = detect_blowup(&[rec(0.0, 1.0, 1.0)], &DetectorConfig::with_cap(10.0));
        assert_eq!(short.kind, BlowupKind::Inconclusive);
        let flat: Vec<_> = (0..10).map(|k| rec(k as f64 * 0.1, 1.0, 1.0)).collect();
        assert_eq!(detect_blowup(&flat, &DetectorConfig::with_cap(10.0)).kind, BlowupKind::None);
        let growing: Vec<_> = (0..10).map(|k| rec(k as f64 * 0.1, (k * k) as f64, 1.0)).collect();
        let hi = detect_blowup(&growing, &DetectorConfig::with_cap(50.0));
        let lo = detect_blowup(&growing, &DetectorConfig::with_cap(20.0));
        assert_eq!(hi.kind, BlowupKind::Numerical);
        assert!(lo.firing_time.unwrap() <= hi.firing_time.unwrap());
        let falling: Vec<_> = (0..5).map(|k| rec(k as f64 * 0.1, 1.0, 1.0 - 0.3 * k as f64)).collect();
        let mut cfg = DetectorConfig::with_cap(1e9);
        cfg.extrapolation_window = 0.05;
        let r = detect_blowup(&falling, &cfg);
        assert_eq!(r.kind, BlowupKind::Type2);
        assert!((r.firing_time.unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn type3_needs_majority() {
        let hot: Vec<_> = (0..4).map(|k| rec(k as f64, 10f64.powi(k), 1.0)).collect();
        let cold: Vec<_> = (0..4).map(|k| rec(k as f64, 1.0, 1.0)).collect();
        let yes = detect_type3(&[hot.clone(), hot.clone(), cold.clone()], 50.0, 10.0);
        assert_eq!(yes.kind, BlowupKind::Type3);
        assert_eq!(yes.firing_time, Some(2.0));
        let no = detect_type3(&[hot, cold.clone(), cold], 50.0, 10.0);
        assert_eq!(no.kind, BlowupKind::None);
    }

    #[test]
    fn l2_dissipation_of_gaussian() {
        // ∫|∇ρ|² = m²/(4πs⁴) and ∫ρ³ = m³/(12π²s⁴) for a Gaussian of width s;
        // the aggregation term of p = 2 integrates by parts to −χ∫ρ³.
        let f = unit_gaussian();
        let params = ModelParams::new(1.0, 0.5, 2.0, 2.0).unwrap();
        let potential = PotentialSolver::new(*f.domain(), crate::potential::KernelKind::Newtonian);
        let rate = lp_dissipation_rate(&f, &params, &potential).unwrap();
        let expected = 0.75 / (4.0 * PI) - 2.0 / (12.0 * PI * PI);
        assert!((rate - expected).abs() < 1e-6, "{rate} vs {expected}");
    }

    #[test]
    fn balance_residual_of_frozen_fields_is_the_rate_integral() {
        let f = unit_gaussian();
        let params = ModelParams::new(1.0, 0.0, 0.0, 2.0).unwrap();
        let potential = PotentialSolver::new(*f.domain(), crate::potential::KernelKind::Newtonian);
        let r = lp_balance_residual(&[0.0, 0.5, 1.0], &[f.clone(), f.clone(), f.clone()], &params, &potential).unwrap();
        assert_eq!(r[0], 0.0);
        assert!((r[2] - 1.0 / (4.0 * PI)).abs() < 1e-6);
        assert!(lp_balance_residual(&[0.0], &[], &params, &potential).is_err());
    }
}
