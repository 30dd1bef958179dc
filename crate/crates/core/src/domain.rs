//! Grid geometry, density fields, model constants and the random-stream context.
//!
//! The plane is truncated to the periodic box `[-L, L)²` sampled on an `n × n`
//! uniform grid. Values are stored row-major: index `j * n + i` holds the node
//! at `(x_i, y_j)` with `x_i = -L + i dx`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Periodic square box `[-L, L)²` with `n` nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSpec {
    half_width: f64,
    n: usize,
}

impl DomainSpec {
    pub fn new(half_width: f64, n: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidDomain(format!(
                "half width must be positive, got {half_width}"
            )));
        }
        if n < 16 || !n.is_power_of_two() {
            return Err(Error::InvalidDomain(format!(
                "grid size must be a power of two >= 16, got {n}"
            )));
        }
        Ok(Self { half_width, n })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    /// Area element `dx²`.
    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dx()
    }

    /// Box area `(2L)²`.
    pub fn area(&self) -> f64 {
        4.0 * self.half_width * self.half_width
    }

    /// Coordinate of node `i` along either axis.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.dx()
    }

    /// Same box with the grid refined by `factor` per axis.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(self.half_width, self.n * factor)
    }

    /// Iterator over `(x, y)` of every node in storage order.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let n = self.n;
        (0..n * n).map(move |k| (self.coord(k % n), self.coord(k / n)))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let l = self.half_width;
        (-l..l).contains(&x) && (-l..l).contains(&y)
    }
}

/// Scalar density sampled on a [`DomainSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    domain: DomainSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn new(domain: DomainSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} values, got {}",
                domain.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field values"));
        }
        Ok(Self { domain, values })
    }

    /// Wraps values without the finiteness check. Used by the stepper, which
    /// inspects non-finite output itself.
    pub(crate) fn from_raw(domain: DomainSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), domain.len());
        Self { domain, values }
    }

    pub fn zeros(domain: DomainSpec) -> Self {
        Self {
            domain,
            values: vec![0.0; domain.len()],
        }
    }

    pub fn from_fn(domain: DomainSpec, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = domain.nodes().map(|(x, y)| f(x, y)).collect();
        Self::new(domain, values)
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scaled(&self, c: f64) -> Field {
        Field {
            domain: self.domain,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Field) -> Result<Field> {
        self.check_same_grid(other)?;
        Ok(Field {
            domain: self.domain,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + c * b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.axpy(-1.0, other)
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.domain != other.domain {
            return Err(Error::ShapeMismatch(format!(
                "grids differ: n={} L={} vs n={} L={}",
                self.domain.n, self.domain.half_width, other.domain.n, other.domain.half_width
            )));
        }
        Ok(())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Shift by whole grid cells (periodic).
    pub fn roll(&self, di: isize, dj: isize) -> Field {
        let n = self.domain.n as isize;
        let mut out = vec![0.0; self.values.len()];
        for j in 0..n {
            for i in 0..n {
                let ti = (i + di).rem_euclid(n);
                let tj = (j + dj).rem_euclid(n);
                out[(tj * n + ti) as usize] = self.values[(j * n + i) as usize];
            }
        }
        Field {
            domain: self.domain,
            values: out,
        }
    }

    /// Applies the positivity policy: values in `(-tol, 0)` are set to zero,
    /// anything below `-tol` is an error. Returns the mass added by clipping.
    pub fn clip_negatives(&mut self, tol: f64, t: f64) -> Result<f64> {
        let min = self.min();
        if min < -tol {
            return Err(Error::PositivityLost { t, min, tol });
        }
        let mut clipped = 0.0;
        for v in self.values.iter_mut().filter(|v| **v < 0.0) {
            clipped -= *v;
            *v = 0.0;
        }
        Ok(clipped * self.domain.cell_area())
    }
}

/// Physical constants of the model.
///
/// `nu² = a² - σ²` is the effective pathwise diffusion of the transport-noise
/// equation; it must be positive whenever that regime is simulated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub a: f64,
    pub sigma: f64,
    pub chi: f64,
    pub p: f64,
}

impl ModelParams {
    pub fn new(a: f64, sigma: f64, chi: f64, p: f64) -> Result<Self> {
        let params = Self { a, sigma, chi, p };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(Error::InvalidParameter(format!("a must be positive, got {}", self.a)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be nonnegative, got {}",
                self.sigma
            )));
        }
        if !(self.chi.is_finite() && self.chi >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "chi must be nonnegative, got {}",
                self.chi
            )));
        }
        if !(self.p.is_finite() && self.p >= 2.0) {
            return Err(Error::InvalidParameter(format!("p must be >= 2, got {}", self.p)));
        }
        Ok(())
    }

    /// Checks `a² - σ² > 0`, required by the transport-noise regime.
    pub fn validate_divergence(&self) -> Result<()> {
        if self.nu_sq() <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "a^2 - sigma^2 must be positive for transport noise (a = {}, sigma = {})",
                self.a, self.sigma
            )));
        }
        Ok(())
    }

    pub fn nu_sq(&self) -> f64 {
        self.a * self.a - self.sigma * self.sigma
    }

    pub fn nu(&self) -> f64 {
        self.nu_sq().max(0.0).sqrt()
    }

    pub fn with_sigma(self, sigma: f64) -> Self {
        Self { sigma, ..self }
    }

    pub fn with_chi(self, chi: f64) -> Self {
        Self { chi, ..self }
    }
}

/// Seed and stream id of one reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngContext {
    pub seed: u64,
    pub stream: u64,
}

impl RngContext {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Context for the `k`-th sub-stream, e.g. one per ensemble path.
    pub fn substream(&self, k: u64) -> Self {
        Self {
            seed: self.seed,
            stream: self
                .stream
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(k.wrapping_add(1)),
        }
    }
}

/// Samples `m0 / (2π s²) exp(-|x - c|² / (2 s²))` on the grid.
///
/// Rejects widths above `L/6` and any sampling whose discrete mass misses
/// `m0` by more than `1e-8` relative.
pub fn make_gaussian_field(domain: DomainSpec, m0: f64, s: f64, center: (f64, f64)) -> Result<Field> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::InvalidParameter(format!("width must be positive, got {s}")));
    }
    if !(m0.is_finite() && m0 >= 0.0) {
        return Err(Error::InvalidParameter(format!("mass must be nonnegative, got {m0}")));
    }
    if !domain.contains(center.0, center.1) {
        return Err(Error::InvalidParameter(format!(
            "center {center:?} outside the box"
        )));
    }
    if s > domain.half_width() / 6.0 {
        return Err(Error::InvalidParameter(format!(
            "width {s} exceeds L/6 = {}; truncation error too large",
            domain.half_width() / 6.0
        )));
    }
    let norm = m0 / (2.0 * PI * s * s);
    let field = Field::from_fn(domain, |x, y| {
        let r2 = (x - center.0).powi(2) + (y - center.1).powi(2);
        norm * (-r2 / (2.0 * s * s)).exp()
    })?;
    if m0 > 0.0 {
        let rel = (mass(&field) - m0).abs() / m0;
        if rel > 1e-8 {
            return Err(Error::InvalidParameter(format!(
                "discrete mass off by {rel:e} relative (width {s} vs dx {}, center {center:?})",
                domain.dx()
            )));
        }
    }
    Ok(field)
}

/// `Σ ρ dx²`.
pub fn mass(f: &Field) -> f64 {
    f.values.iter().sum::<f64>() * f.domain.cell_area()
}

/// `(Σ |ρ|^p dx²)^(1/p)`.
pub fn lp_norm(f: &Field, p: f64) -> f64 {
    assert!(p >= 1.0, "lp_norm needs p >= 1");
    let da = f.domain.cell_area();
    if p == 1.0 {
        return f.values.iter().map(|v| v.abs()).sum::<f64>() * da;
    }
    if p == 2.0 {
        return (f.values.iter().map(|v| v * v).sum::<f64>() * da).sqrt();
    }
    // Normalize by the sup norm to avoid overflow in |ρ|^p.
    let scale = f.sup_norm();
    if scale == 0.0 {
        return 0.0;
    }
    let s: f64 = f.values.iter().map(|v| (v.abs() / scale).powf(p)).sum();
    scale * (s * da).powf(1.0 / p)
}

/// `‖ρ‖_p^p`, computed without the root.
pub fn lp_norm_pow(f: &Field, p: f64) -> f64 {
    lp_norm(f, p).powf(p)
}
