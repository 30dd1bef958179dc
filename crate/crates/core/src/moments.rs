//! Exact scalar oracles for mass and second moment, threshold formulas and
//! the Brownian event behind the any-mass blowup bound.
//!
//! For basis noise with a single constant mode and `Φ(ρ) = σρ`, mass and
//! second moment close into linear Itô equations driven by the scalar `W`:
//!
//! ```text
//! dm = σ m dW                                   m(t) = m₀ Ψ(t)
//! dM = (2a² m − χ m²/2π) dt + σ M dW            M(t) = Ψ(t)(M₀ + 2a²m₀t − (χm₀²/2π) ∫Ψ)
//! du⁺ = (2a² m + χ m²/2π) dt + σ u⁺ dW          u⁺(t) = Ψ(t)(M₀ + 2a²m₀t + (χm₀²/2π) ∫Ψ)
//! ```
//!
//! with `Ψ(t) = exp(−σ²t/2 + σW(t))`. Time integrals use the trapezoid rule
//! on the path grid.

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};
use std::f64::consts::PI;

use crate::domain::{ModelParams, RngContext};
use crate::error::{Error, Result};
use crate::noise::BrownianPath;

/// Initial moments, model constants and the scalar driving path.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentOracle {
    pub m0: f64,
    pub second0: f64,
    pub params: ModelParams,
    pub path: BrownianPath,
}

impl MomentOracle {
    pub fn new(m0: f64, second0: f64, params: ModelParams, path: BrownianPath) -> Result<Self> {
        if !(m0 >= 0.0 && second0 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "initial moments must be nonnegative (m0 = {m0}, M0 = {second0})"
            )));
        }
        if path.components() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "moment oracle needs a scalar path, got {} components",
                path.components()
            )));
        }
        Ok(Self {
            m0,
            second0,
            params,
            path,
        })
    }

    fn index(&self, t: f64) -> Result<usize> {
        let dt = self.path.dt();
        let k = (t / dt).round();
        if t < 0.0 || k as usize > self.path.steps() || (k * dt - t).abs() > 1e-9 * dt.max(t) {
            return Err(Error::Precondition(format!(
                "t = {t} is not a node of the path grid (dt = {dt}, horizon {})",
                self.path.horizon()
            )));
        }
        Ok(k as usize)
    }

    /// `Ψ(t_k)` for every node.
    pub fn psi_series(&self) -> Vec<f64> {
        let s = self.params.sigma;
        let dt = self.path.dt();
        self.path
            .values(0)
            .iter()
            .enumerate()
            .map(|(k, w)| (-0.5 * s * s * k as f64 * dt + s * w).exp())
            .collect()
    }

    /// Trapezoid `∫₀^{t_k} Ψ` for every node.
    fn psi_integral_series(psi: &[f64], dt: f64) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(psi.len());
        out.push(0.0);
        for w in psi.windows(2) {
            acc += 0.5 * dt * (w[0] + w[1]);
            out.push(acc);
        }
        out
    }

    pub fn mass_series(&self) -> Vec<f64> {
        self.psi_series().iter().map(|p| self.m0 * p).collect()
    }

    fn moment_series(&self, sign: f64) -> Vec<f64> {
        let psi = self.psi_series();
        let dt = self.path.dt();
        let ints = Self::psi_integral_series(&psi, dt);
        let a2 = self.params.a * self.params.a;
        let k = self.params.chi * self.m0 * self.m0 / (2.0 * PI);
        psi.iter()
            .zip(&ints)
            .enumerate()
            .map(|(j, (p, i))| {
                p * (self.second0 + 2.0 * a2 * self.m0 * j as f64 * dt + sign * k * i)
            })
            .collect()
    }

    pub fn second_moment_series(&self) -> Vec<f64> {
        self.moment_series(-1.0)
    }

    pub fn u_plus_series(&self) -> Vec<f64> {
        self.moment_series(1.0)
    }

    /// `m₀ exp(−σ²t/2 + σW(t))`.
    pub fn exact_mass(&self, t: f64) -> Result<f64> {
        let k = self.index(t)?;
        Ok(self.mass_series()[k])
    }

    pub fn exact_second_moment(&self, t: f64) -> Result<f64> {
        let k = self.index(t)?;
        Ok(self.second_moment_series()[k])
    }

    pub fn supersolution_u_plus(&self, t: f64) -> Result<f64> {
        let k = self.index(t)?;
        Ok(self.u_plus_series()[k])
    }
}

/// Global-existence smallness condition, evaluated literally:
/// `C(−ν²p(p−1)/2 + χ) m₀^{−p/(p−1)} + χ m₀^{(p−2)/(p−1)} ≤ 0`.
pub fn smallness_condition(m0: f64, params: &ModelParams, c: f64) -> Result<bool> {
    if !(m0 > 0.0 && c > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need m0 > 0 and C > 0 (m0 = {m0}, C = {c})"
        )));
    }
    let p = params.p;
    let nu2 = params.nu_sq();
    let lhs = c * (-nu2 * p * (p - 1.0) / 2.0 + params.chi) * m0.powf(-p / (p - 1.0))
        + params.chi * m0.powf((p - 2.0) / (p - 1.0));
    Ok(lhs <= 0.0)
}

/// Largest `m₀` satisfying [`smallness_condition`], by bisection (the set of
/// admissible masses is an interval `(0, m*]`). `None` when no mass
/// qualifies; `+∞` when every mass does.
pub fn smallness_boundary(params: &ModelParams, c: f64) -> Result<Option<f64>> {
    let ok = |m: f64| smallness_condition(m, params, c);
    if params.chi == 0.0 {
        return Ok(Some(f64::INFINITY));
    }
    let (mut lo, mut hi) = (1e-12, 1.0);
    if !ok(lo)? {
        return Ok(None);
    }
    while ok(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(Some(f64::INFINITY));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(Some(lo))
}

/// `χ m₀ / 2π > 2(ν² + σ²)`; note `ν² + σ² = a²`.
pub fn blowup_mass_condition(m0: f64, params: &ModelParams) -> bool {
    params.chi * m0 / (2.0 * PI) > 2.0 * params.a * params.a
}

/// `4π a² / χ`, where [`blowup_mass_condition`] flips.
pub fn blowup_threshold_mass(params: &ModelParams) -> f64 {
    4.0 * PI * params.a * params.a / params.chi
}

/// `T* = M₀ / ((χ/2π) m₀² − 2a² m₀)`.
pub fn blowup_time_bound(m0: f64, second0: f64, params: &ModelParams) -> Result<f64> {
    if !blowup_mass_condition(m0, params) {
        return Err(Error::Precondition(format!(
            "mass {m0} is not above the blowup threshold {}",
            blowup_threshold_mass(params)
        )));
    }
    let rate = params.chi / (2.0 * PI) * m0 * m0 - 2.0 * params.a * params.a * m0;
    Ok(second0 / rate)
}

/// Smallest `t₂ ≥ 0` with
/// `M₀ + 2a²m₀t₂ + K/(σα e^{σβ}) ≤ (K/(σα)) e^{σ(αt₂−β)}`, `K = χm₀²/2π`.
pub fn t2_min(
    m0: f64,
    second0: f64,
    params: &ModelParams,
    alpha: f64,
    beta: f64,
    t_max: f64,
) -> Result<f64> {
    let sigma = params.sigma;
    if !(sigma > 0.0 && alpha > 0.0 && beta > 0.0 && m0 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need sigma, alpha, beta, m0 > 0 (got {sigma}, {alpha}, {beta}, {m0})"
        )));
    }
    let f = |t: f64| t2_gap(m0, second0, params, alpha, beta, t);
    if f(0.0) >= 0.0 {
        return Ok(0.0);
    }
    let mut hi = t_max.min(1.0);
    while f(hi) < 0.0 {
        if hi >= t_max {
            return Err(Error::NoBracket { t_max });
        }
        hi = (2.0 * hi).min(t_max);
    }
    let mut lo = 0.0;
    while hi - lo > 1e-8 * hi.max(1e-300) * 1e-2 {
        let mid = 0.5 * (lo + hi);
        if f(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Right minus left side of the `t₂` inequality.
pub fn t2_gap(m0: f64, second0: f64, params: &ModelParams, alpha: f64, beta: f64, t: f64) -> f64 {
    let sigma = params.sigma;
    let k = params.chi * m0 * m0 / (2.0 * PI);
    let a2 = params.a * params.a;
    let scale = k / (sigma * alpha);
    scale * (sigma * (alpha * t - beta)).exp()
        - second0
        - 2.0 * a2 * m0 * t
        - scale * (-sigma * beta).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrownianEventSpec {
    pub alpha: f64,
    pub beta: f64,
    pub horizon: f64,
}

impl BrownianEventSpec {
    pub fn new(alpha: f64, beta: f64, horizon: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "event parameters must be positive (alpha = {alpha}, beta = {beta}, t = {horizon})"
            )));
        }
        Ok(Self {
            alpha,
            beta,
            horizon,
        })
    }

    /// Boundary slope `c = σ/2 + α`.
    pub fn slope(&self, sigma: f64) -> f64 {
        0.5 * sigma + self.alpha
    }
}

/// `P(W(s) − cs > −β for all s ≤ t)` by the reflection principle.
pub fn event_probability_closed_form(spec: &BrownianEventSpec, sigma: f64) -> f64 {
    let c = spec.slope(sigma);
    let (b, t) = (spec.beta, spec.horizon);
    let n = Normal::standard();
    let st = t.sqrt();
    (n.cdf((b - c * t) / st) - (2.0 * c * b).exp() * n.cdf((-b - c * t) / st)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventProbability {
    pub mc_estimate: f64,
    pub std_error: f64,
    pub closed_form: f64,
}

/// Monte Carlo estimate of the Brownian event probability on `steps` grid
/// intervals, next to the closed form.
///
/// With `bridge_correction` each path contributes its conditional survival
/// probability given the grid values, `Π (1 − exp(−2 d_k d_{k+1} / Δt))` with
/// `d` the distance above the boundary, which removes the bias of checking the
/// barrier only at grid times. Without it the estimator is the plain fraction
/// of paths above the boundary at every grid time.
pub fn brownian_event_probability(
    spec: &BrownianEventSpec,
    sigma: f64,
    paths: usize,
    steps: usize,
    ctx: RngContext,
    bridge_correction: bool,
) -> Result<EventProbability> {
    if paths < 2 || steps == 0 {
        return Err(Error::InvalidParameter("need at least two paths and one step".into()));
    }
    let c = spec.slope(sigma);
    let dt = spec.horizon / steps as f64;
    let sd = dt.sqrt();
    let mut rng = ctx.rng();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..paths {
        let mut d_prev = spec.beta;
        let mut survive = 1.0;
        let mut w = 0.0;
        for k in 1..=steps {
            w += sd * rng.sample::<f64, _>(StandardNormal);
            let d = w - c * k as f64 * dt + spec.beta;
            if d <= 0.0 {
                survive = 0.0;
                break;
            }
            if bridge_correction {
                survive *= 1.0 - (-2.0 * d_prev * d / dt).exp();
            }
            d_prev = d;
        }
        sum += survive;
        sum_sq += survive * survive;
    }
    let n = paths as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(EventProbability {
        mc_estimate: mean,
        std_error: (var / n).sqrt(),
        closed_form: event_probability_closed_form(spec, sigma),
    })
}

/// `½ p`, the floor on the any-mass blowup probability.
pub fn blowup_probability_lower_bound(p_ab: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_ab) {
        return Err(Error::InvalidParameter(format!("probability out of range: {p_ab}")));
    }
    Ok(0.5 * p_ab)
}

/// One point of an `(α, β)` sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventSweepPoint {
    pub alpha: f64,
    pub beta: f64,
    pub t2: f64,
    pub probability: f64,
    pub lower_bound: f64,
}

/// Evaluates `t₂` and the closed-form event probability over a grid of
/// `(α, β)`; points without a bracket below `t_max` are skipped.
pub fn sweep_events(
    m0: f64,
    second0: f64,
    params: &ModelParams,
    alphas: &[f64],
    betas: &[f64],
    t_max: f64,
) -> Result<Vec<EventSweepPoint>> {
    let mut out = Vec::new();
    for &alpha in alphas {
        for &beta in betas {
            let t2 = match t2_min(m0, second0, params, alpha, beta, t_max) {
                Ok(t) => t,
                Err(Error::NoBracket { .. }) => continue,
                Err(e) => return Err(e),
            };
            let probability = if t2 > 0.0 {
                event_probability_closed_form(&BrownianEventSpec::new(alpha, beta, t2)?, params.sigma)
            } else {
                1.0
            };
            out.push(EventSweepPoint {
                alpha,
                beta,
                t2,
                probability,
                lower_bound: 0.5 * probability,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(a: f64, sigma: f64, chi: f64) -> ModelParams {
        ModelParams::new(a, sigma, chi, 2.0).unwrap()
    }

    #[test]
    fn mass_formula_cases() {
        let path = BrownianPath::from_increments(1, 0.5, vec![0.3, -0.3]).unwrap();
        let o = MomentOracle::new(2.0, 1.0, params(1.0, 1.0, 0.0), path.clone()).unwrap();
        assert!((o.exact_mass(1.0).unwrap() - 2.0 * (-0.5f64).exp()).abs() < 1e-14);
        let still = MomentOracle::new(2.0, 1.0, params(1.0, 0.0, 0.0), path).unwrap();
        assert_eq!(still.exact_mass(1.0).unwrap(), 2.0);
        assert!(still.exact_mass(0.3).is_err());
    }

    #[test]
    fn mass_is_a_martingale() {
        let p = params(1.0, 0.8, 0.0);
        let n = 10_000;
        let mut vals = Vec::with_capacity(n);
        for k in 0..n {
            let path = BrownianPath::sample(1, 0.1, 10, RngContext::new(17, k as u64)).unwrap();
            vals.push(MomentOracle::new(1.0, 0.0, p, path).unwrap().exact_mass(1.0).unwrap());
        }
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 1.0).abs() < 3.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn deterministic_second_moment() {
        let path = BrownianPath::from_increments(1, 0.01, vec![0.0; 100]).unwrap();
        let o = MomentOracle::new(1.0, 1.0, params(1.0, 0.0, 2.0 * PI), path.clone()).unwrap();
        assert!((o.exact_second_moment(1.0).unwrap() - 2.0).abs() < 1e-12);
        let heat = MomentOracle::new(1.0, 1.0, params(1.0, 0.0, 0.0), path.clone()).unwrap();
        assert!((heat.exact_second_moment(0.5).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(heat.exact_second_moment(0.5), heat.supersolution_u_plus(0.5));
        // Root of M(t) = 0 equals the time bound when σ = 0.
        let sup = MomentOracle::new(3.0, 1.0, params(1.0, 0.0, 2.0 * PI), path).unwrap();
        let m = sup.second_moment_series();
        let root = m.iter().position(|v| *v <= 1e-12).unwrap() as f64 * 0.01;
        let bound = blowup_time_bound(3.0, 1.0, &params(1.0, 0.0, 2.0 * PI)).unwrap();
        assert!((bound - 1.0 / 3.0).abs() < 1e-15);
        assert!((root - bound).abs() <= 0.01);
    }

    #[test]
    fn supersolution_dominates() {
        let path = BrownianPath::sample(1, 0.01, 200, RngContext::new(2, 0)).unwrap();
        let o = MomentOracle::new(1.5, 2.0, params(1.0, 0.7, 2.0 * PI), path).unwrap();
        for (u, m) in o.u_plus_series().iter().zip(o.second_moment_series()) {
            assert!(*u >= m);
        }
    }

    /// Milstein integration of `du = (2a²m + χm²/2π) dt + σu dW`.
    fn milstein_u_plus(o: &MomentOracle, path: &BrownianPath) -> f64 {
        let (a2, s) = (o.params.a * o.params.a, o.params.sigma);
        let k = o.params.chi / (2.0 * PI);
        let dt = path.dt();
        let (mut u, mut m) = (o.second0, o.m0);
        for step in 0..path.steps() {
            let dw = path.increment(step)[0];
            let corr = 1.0 + s * dw + 0.5 * s * s * (dw * dw - dt);
            u = u * corr + (2.0 * a2 * m + k * m * m) * dt;
            m *= corr;
        }
        u
    }

    #[test]
    fn supersolution_matches_integrated_sde() {
        let p = params(1.0, 0.8, 2.0);
        let mut errs = [0.0; 3];
        let samples = 400;
        for seed in 0..samples {
            let coarse = BrownianPath::sample(1, 0.02, 50, RngContext::new(100 + seed, 0)).unwrap();
            let mut fine = coarse.clone();
            for r in 0..6 {
                fine = fine.refine(RngContext::new(100 + seed, 1 + r));
            }
            let oracle = MomentOracle::new(1.0, 2.0, p, fine.clone()).unwrap();
            let exact = oracle.supersolution_u_plus(1.0).unwrap();
            for (lvl, factor) in [16usize, 8, 4].iter().enumerate() {
                let path = fine.coarsen(*factor).unwrap();
                let err = milstein_u_plus(&oracle, &path) - exact;
                errs[lvl] += err * err;
            }
        }
        let ratio1 = (errs[0] / errs[1]).sqrt();
        let ratio2 = (errs[1] / errs[2]).sqrt();
        assert!((1.6..=2.4).contains(&ratio1), "{ratio1}");
        assert!((1.6..=2.4).contains(&ratio2), "{ratio2}");
    }

    #[test]
    fn smallness_cases() {
        let chi0 = params(1.0, 0.0, 0.0);
        assert!(smallness_condition(0.1, &chi0, 1.0).unwrap());
        assert!(smallness_condition(100.0, &chi0, 1.0).unwrap());
        let strong = params(1.0, 0.0, 1.0);
        assert!(!smallness_condition(1e-3, &strong, 1.0).unwrap());
        assert!(!smallness_condition(10.0, &strong, 1.0).unwrap());
        let p = params(1.0, 0.0, 0.5);
        assert!(smallness_condition(0.9, &p, 1.0).unwrap());
        assert!(!smallness_condition(1.1, &p, 1.0).unwrap());
        let b = smallness_boundary(&p, 1.0).unwrap().unwrap();
        assert!((b - 1.0).abs() < 1e-10);
    }

    #[test]
    fn mass_threshold_cases() {
        let p = params(1.0, 0.0, 2.0 * PI);
        assert!(!blowup_mass_condition(0.0, &p));
        assert!(blowup_mass_condition(3.0, &p));
        assert!((blowup_threshold_mass(&p) - 2.0).abs() < 1e-15);
        assert!(!blowup_mass_condition(2.0, &p) && blowup_mass_condition(2.0 + 1e-12, &p));
        assert_eq!(blowup_time_bound(3.0, 0.0, &p).unwrap(), 0.0);
        let t1 = blowup_time_bound(3.0, 1.0, &p).unwrap();
        assert!((blowup_time_bound(3.0, 2.0, &p).unwrap() - 2.0 * t1).abs() < 1e-15);
        assert!(blowup_time_bound(1.0, 1.0, &p).is_err());
    }

    #[test]
    fn t2_cases() {
        let p = params(1.0, 1.0, 2.0 * PI);
        let mut prev = f64::INFINITY;
        for alpha in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let t2 = t2_min(0.5, 1.0, &p, alpha, 1.0, 1e3).unwrap();
            assert!(t2 < prev, "alpha {alpha}: {t2} vs {prev}");
            assert!(t2_gap(0.5, 1.0, &p, alpha, 1.0, t2) >= 0.0);
            assert!(t2_gap(0.5, 1.0, &p, alpha, 1.0, t2 - 1e-6) < 0.0);
            prev = t2;
        }
        // No second moment and no diffusion: the inequality holds at t = 0.
        let flat = ModelParams { a: 0.0, ..p };
        assert_eq!(t2_min(0.5, 0.0, &flat, 1.0, 1.0, 10.0).unwrap(), 0.0);
        assert!(matches!(t2_min(0.5, 1e6, &p, 0.1, 1.0, 1.0), Err(Error::NoBracket { .. })));
    }

    #[test]
    fn event_probability_limits_and_mc() {
        let far = BrownianEventSpec::new(0.5, 50.0, 1.0).unwrap();
        assert!(event_probability_closed_form(&far, 1.0) > 1.0 - 1e-12);
        let short = BrownianEventSpec::new(0.5, 1.0, 1e-8).unwrap();
        assert!(event_probability_closed_form(&short, 1.0) > 1.0 - 1e-12);
        let spec = BrownianEventSpec::new(0.5, 1.0, 1.0).unwrap();
        let est = brownian_event_probability(&spec, 1.0, 20_000, 200, RngContext::new(4, 0), true).unwrap();
        assert!((est.mc_estimate - est.closed_form).abs() < 3.0 * est.std_error);
    }

    #[test]
    fn lower_bound_halves() {
        assert_eq!(blowup_probability_lower_bound(0.0).unwrap(), 0.0);
        assert_eq!(blowup_probability_lower_bound(1.0).unwrap(), 0.5);
        assert_eq!(blowup_probability_lower_bound(0.4).unwrap(), 0.2);
        assert!(blowup_probability_lower_bound(1.5).is_err());
    }
}
