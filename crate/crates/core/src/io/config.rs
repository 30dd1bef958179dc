//! Flat `key = value` run configuration.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! line    := blank | comment | entry
//! comment := '#' any*
//! entry   := key ws* '=' ws* value ws* comment?
//! list    := value (',' value)*
//! ```
//!
//! Keys are the ones in [`KEYS`]; unknown or repeated keys are errors and
//! absent keys take the documented default. [`RunConfig::render`] writes the
//! fully resolved document back out, defaults included.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::domain::{DomainSpec, ModelParams};
use crate::ensemble::{ExperimentKind, ExperimentSpec};
use crate::error::{Error, Result};
use crate::noise::{make_fourier_basis, NoiseSpec, PhiMap};
use crate::potential::KernelKind;
use crate::solver::{BlowupCap, SolverConfig, Stepping, TransportScheme};

/// `(key, default, description)` for every accepted key, in render order.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "master seed; every random stream derives from it"),
    ("out", "out", "output directory"),
    ("half_width", "6", "box is [-L, L)^2"),
    ("n", "64", "grid points per side, power of two"),
    ("a", "1", "total diffusion amplitude"),
    ("sigma", "0", "noise amplitude"),
    ("chi", "1", "chemotactic sensitivity"),
    ("p", "2", "norm exponent, >= 2"),
    ("noise", "divergence", "none | divergence | constant | fourier"),
    ("phi", "linear", "linear | bounded:<cap>; shape of the basis-noise map"),
    ("noise_modes", "5", "modes of the fourier basis"),
    ("alpha0", "1", "leading weight of the fourier basis"),
    ("dt", "0.01", "time step"),
    ("t_end", "1", "final time"),
    ("kernel", "newtonian", "newtonian | bessel"),
    ("stepping", "semi_implicit", "semi_implicit | explicit"),
    ("transport", "exact", "exact | euler_maruyama"),
    ("dealias", "true", "2/3-rule dealiasing of the aggregation flux"),
    ("milstein", "true", "Milstein correction for basis noise"),
    ("background_correction", "true", "free-space correction of the periodic potential"),
    ("positivity_tol", "1e-10", "relative tolerance for clipping negative values"),
    ("blowup_cap", "relative:1e4", "relative:<factor of sup rho0> | absolute:<level>"),
    ("m0", "1", "mass of the Gaussian initial density"),
    ("width", "1", "standard deviation of the Gaussian initial density"),
    ("initial_snapshot", "", "SKS1 file replacing the Gaussian in simulate; empty for none"),
    ("output_every", "10", "steps between recorded outputs"),
    ("snapshot_every", "0", "steps between field snapshots, 0 for none"),
    ("p_list", "2", "extra norm exponents recorded"),
    ("experiment", "global_existence", "ensemble experiment kind"),
    ("paths", "50", "ensemble size"),
    ("sweep", "", "experiment sweep values"),
    ("smallness_constant", "auto", "constant of the smallness condition, or auto"),
    ("norm_tolerance", "0.01", "relative slack of the norm bound"),
    ("alphas", "0.25,0.5,1,2", "alpha grid of the any-mass experiment"),
    ("betas", "0.5,1,2", "beta grid of the any-mass experiment"),
    ("t2_max", "100", "search limit for t2"),
    ("picard_iterations", "6", "Picard iterations"),
    ("particle_common_noise", "false", "particles share the field's noise path"),
    ("particles", "2000", "particle count of the particles command"),
];

/// A validated configuration: every key of [`KEYS`] holds a parseable value.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let values = KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect();
        Self { values }
    }
}

impl RunConfig {
    /// Parses a document and fills absent keys from the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            if seen.insert(key.to_string(), lineno + 1).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
            cfg.set_raw(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", lineno + 1, strip(e))))?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Overrides one key, re-validating the whole document.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let old = self.values.clone();
        self.set_raw(key, value)?;
        if let Err(e) = self.check() {
            self.values = old;
            return Err(e);
        }
        Ok(())
    }

    fn set_raw(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key '{key}'"))),
        }
    }

    /// Builds every typed view once so errors surface at load time.
    fn check(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(strip(e));
        let domain = self.domain().map_err(wrap)?;
        let params = self.params().map_err(wrap)?;
        if let NoiseSpec::Divergence = self.noise(domain).map_err(wrap)? {
            params.validate_divergence().map_err(wrap)?;
        }
        self.phi().map_err(wrap)?;
        self.solver().map_err(wrap)?;
        self.experiment().map_err(wrap)?;
        self.seed().map_err(wrap)?;
        self.usize_of("snapshot_every").map_err(wrap)?;
        self.usize_of("particles").map_err(wrap)?;
        params.validate().map_err(wrap)
    }

    /// The resolved document, one `key = value` per line with its
    /// description as a comment.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (key, _, doc) in KEYS {
            let _ = writeln!(out, "# {doc}");
            let _ = writeln!(out, "{key} = {}", self.values[*key]);
        }
        out
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn seed(&self) -> Result<u64> {
        let v = self.raw("seed");
        v.parse().map_err(|_| Error::Config(format!("seed: expected an unsigned integer, got '{v}'")))
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out"))
    }

    pub fn initial_snapshot(&self) -> Option<PathBuf> {
        Some(self.raw("initial_snapshot")).filter(|v| !v.is_empty()).map(PathBuf::from)
    }

    pub fn snapshot_every(&self) -> usize {
        self.usize_of("snapshot_every").expect("validated")
    }

    pub fn particles(&self) -> usize {
        self.usize_of("particles").expect("validated")
    }

    pub fn domain(&self) -> Result<DomainSpec> {
        DomainSpec::new(self.f64_of("half_width")?, self.usize_of("n")?)
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.f64_of("a")?, self.f64_of("sigma")?, self.f64_of("chi")?, self.f64_of("p")?)
    }

    pub fn phi(&self) -> Result<PhiMap> {
        let v = self.raw("phi");
        let phi = match v.split_once(':') {
            None if v == "linear" => PhiMap::Linear,
            Some(("bounded", cap)) => PhiMap::BoundedLinear { cap: parse_f64("phi", cap)? },
            _ => return Err(Error::Config(format!("phi: expected linear or bounded:<cap>, got '{v}'"))),
        };
        phi.validate()?;
        Ok(phi)
    }

    pub fn noise(&self, domain: DomainSpec) -> Result<NoiseSpec> {
        match self.raw("noise") {
            "none" => Ok(NoiseSpec::None),
            "divergence" => Ok(NoiseSpec::Divergence),
            "constant" => NoiseSpec::constant_mode(domain, self.phi()?),
            "fourier" => {
                let basis = make_fourier_basis(domain, self.usize_of("noise_modes")?, self.f64_of("alpha0")?)?;
                NoiseSpec::general(basis.modes, self.phi()?)
            }
            other => Err(Error::Config(format!(
                "noise: expected none, divergence, constant or fourier, got '{other}'"
            ))),
        }
    }

    pub fn solver(&self) -> Result<SolverConfig> {
        let mut cfg = SolverConfig::new(self.f64_of("dt")?, self.f64_of("t_end")?);
        cfg.kernel = KernelKind::parse(self.raw("kernel"))
            .ok_or_else(|| Error::Config(format!("kernel: unknown '{}'", self.raw("kernel"))))?;
        cfg.stepping = match self.raw("stepping") {
            "semi_implicit" => Stepping::SemiImplicit,
            "explicit" => Stepping::Explicit,
            other => return Err(Error::Config(format!("stepping: unknown '{other}'"))),
        };
        cfg.transport = match self.raw("transport") {
            "exact" => TransportScheme::Exact,
            "euler_maruyama" => TransportScheme::EulerMaruyama,
            other => return Err(Error::Config(format!("transport: unknown '{other}'"))),
        };
        cfg.dealias = self.bool_of("dealias")?;
        cfg.milstein = self.bool_of("milstein")?;
        cfg.background_correction = self.bool_of("background_correction")?;
        cfg.positivity_tol = self.f64_of("positivity_tol")?;
        let cap = self.raw("blowup_cap");
        cfg.blowup_cap = match cap.split_once(':') {
            Some(("relative", v)) => BlowupCap::Relative(parse_f64("blowup_cap", v)?),
            Some(("absolute", v)) => BlowupCap::Absolute(parse_f64("blowup_cap", v)?),
            _ => {
                return Err(Error::Config(format!(
                    "blowup_cap: expected relative:<f> or absolute:<level>, got '{cap}'"
                )))
            }
        };
        if !(cfg.dt.is_finite() && cfg.dt > 0.0) || !(cfg.t_end.is_finite() && cfg.t_end >= 0.0) {
            return Err(Error::Config("dt must be positive and t_end nonnegative".into()));
        }
        Ok(cfg)
    }

    pub fn experiment(&self) -> Result<ExperimentSpec> {
        let kind = ExperimentKind::parse(self.raw("experiment"))?;
        let mut spec = ExperimentSpec::new(kind, self.domain()?, self.params()?, self.solver()?);
        spec.seed = self.seed()?;
        spec.paths = self.usize_of("paths")?;
        spec.m0 = self.f64_of("m0")?;
        spec.width = self.f64_of("width")?;
        spec.output_every = self.usize_of("output_every")?;
        spec.p_list = self.list_of("p_list")?;
        spec.sweep = self.list_of("sweep")?;
        spec.smallness_constant = match self.raw("smallness_constant") {
            "auto" => None,
            v => Some(parse_f64("smallness_constant", v)?),
        };
        spec.norm_tolerance = self.f64_of("norm_tolerance")?;
        spec.noise_modes = self.usize_of("noise_modes")?;
        spec.alpha0 = self.f64_of("alpha0")?;
        spec.alphas = self.list_of("alphas")?;
        spec.betas = self.list_of("betas")?;
        spec.t2_max = self.f64_of("t2_max")?;
        spec.picard_iterations = self.usize_of("picard_iterations")?;
        spec.particle_common_noise = self.bool_of("particle_common_noise")?;
        spec.validate()?;
        Ok(spec)
    }

    fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("key table is complete")
    }

    fn f64_of(&self, key: &str) -> Result<f64> {
        parse_f64(key, self.raw(key))
    }

    fn usize_of(&self, key: &str) -> Result<usize> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| Error::Config(format!("{key}: expected a nonnegative integer, got '{v}'")))
    }

    fn bool_of(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "true" => Ok(true),
            "false" => Ok(false),
            v => Err(Error::Config(format!("{key}: expected true or false, got '{v}'"))),
        }
    }

    fn list_of(&self, key: &str) -> Result<Vec<f64>> {
        let v = self.raw(key);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',').map(|x| parse_f64(key, x.trim())).collect()
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(Error::Config(format!("{key}: expected a finite number, got '{v}'"))),
    }
}

/// Message of an error without the variant prefix, for re-wrapping.
fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_render_round_trips() {
        let cfg = RunConfig::default();
        cfg.check().unwrap();
        let again = RunConfig::parse(&cfg.render()).unwrap();
        assert_eq!(again, cfg);
        assert!(KEYS.len() < 40);
    }

    #[test]
    fn parses_entries_comments_and_lists() {
        let cfg = RunConfig::parse("# heat run\nchi = 0   # no aggregation\n\nsweep = 0.2, 0.1\nseed=7\n").unwrap();
        assert_eq!(cfg.params().unwrap().chi, 0.0);
        assert_eq!(cfg.experiment().unwrap().sweep, vec![0.2, 0.1]);
        assert_eq!(cfg.seed().unwrap(), 7);
        assert_eq!(cfg.get("n"), Some("64"));
    }

    #[test]
    fn rejects_bad_documents() {
        for bad in [
            "bogus = 1",
            "chi = 1\nchi = 2",
            "chi",
            "n = 100",
            "dt = -1",
            "noise = loud",
            "blowup_cap = 5",
            "dealias = yes",
            "seed = -3",
            "phi = bounded:0",
            "experiment = nothing",
            "a = 0.5\nsigma = 1\nnoise = divergence",
        ] {
            let err = RunConfig::parse(bad);
            assert!(matches!(err, Err(Error::Config(_))), "{bad}: {err:?}");
        }
    }

    #[test]
    fn override_keeps_document_valid() {
        let mut cfg = RunConfig::default();
        cfg.set("paths", "7").unwrap();
        assert_eq!(cfg.experiment().unwrap().paths, 7);
        assert!(cfg.set("paths", "x").is_err());
        assert_eq!(cfg.get("paths"), Some("7"));
        assert!(cfg.set("nope", "1").is_err());
    }
}
