//! Property tests of the structural invariants.

use proptest::prelude::*;

use sks_core::domain::{lp_norm, make_gaussian_field, mass, DomainSpec, Field, ModelParams, RngContext};
use sks_core::ensemble::Stat;
use sks_core::io::{RunConfig, Snapshot};
use sks_core::moments::{event_probability_closed_form, BrownianEventSpec, MomentOracle};
use sks_core::noise::{BrownianPath, NoiseSpec};
use sks_core::particles::{pair_drift, ParticleConfig, ParticleState};
use sks_core::solver::{Solver, SolverConfig};
use sks_core::spectral::SpectralGrid;

fn small_domain() -> DomainSpec {
    DomainSpec::new(6.0, 32).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transport_noise_conserves_mass_and_sign(
        a in 0.5f64..2.0,
        frac in 0.0f64..0.9,
        chi in 0.0f64..1.0,
        m0 in 0.1f64..1.0,
        width in 0.7f64..0.9,
        seed in any::<u64>(),
    ) {
        let d = DomainSpec::new(6.0, 64).unwrap();
        let params = ModelParams::new(a, frac * a, chi, 2.0).unwrap();
        let rho0 = make_gaussian_field(d, m0, width, (0.3, -0.2)).unwrap();
        let mut cfg = SolverConfig::new(0.01, 0.1);
        cfg.positivity_tol = 1e-4;
        let s = Solver::new(params, NoiseSpec::Divergence, cfg.clone(), &rho0).unwrap();
        let path = BrownianPath::sample(2, cfg.dt, cfg.steps(), RngContext::new(seed, 0)).unwrap();
        let m_start = mass(&rho0);
        let mut worst = 0.0f64;
        let mut min = f64::INFINITY;
        // Transport conserves mass exactly; the only change is what the
        // positivity projection reports having added.
        let end = s.run_observed(&rho0, &path, |st| {
            worst = worst.max((mass(&st.rho) - st.clipped_mass - m_start).abs() / m_start);
            min = min.min(st.rho.min());
        }).unwrap();
        prop_assert!(worst < 1e-12, "mass drift {worst}");
        prop_assert!(end.clipped_mass < 1e-6 * m_start, "clipped {}", end.clipped_mass);
        prop_assert!(min >= 0.0);
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact(
        values in prop::collection::vec(-1e300f64..1e300, 256),
        t in 0.0f64..1e6,
        half_width in 0.1f64..100.0,
    ) {
        let field = Field::new(DomainSpec::new(half_width, 16).unwrap(), values).unwrap();
        let params = ModelParams::new(1.0, 0.5, 1.0, 2.0).unwrap();
        let snap = Snapshot::new(t, &params, field);
        let back = Snapshot::from_bytes(&snap.to_bytes()).unwrap();
        prop_assert_eq!(back.t.to_bits(), t.to_bits());
        prop_assert!(back.field.values().iter().zip(snap.field.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert_eq!(back.field.domain(), snap.field.domain());
    }

    #[test]
    fn spectral_transform_round_trips(values in prop::collection::vec(-10.0f64..10.0, 256)) {
        let grid = SpectralGrid::new(DomainSpec::new(2.0, 16).unwrap());
        let back = grid.inverse(&grid.forward(&values));
        for (x, y) in values.iter().zip(&back) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn config_override_round_trips(
        seed in any::<u64>(),
        paths in 1usize..500,
        chi in 0.0f64..10.0,
        dt in 1e-4f64..0.1,
    ) {
        let mut cfg = RunConfig::default();
        cfg.set("seed", &seed.to_string()).unwrap();
        cfg.set("paths", &paths.to_string()).unwrap();
        cfg.set("chi", &format!("{chi:?}")).unwrap();
        cfg.set("dt", &format!("{dt:?}")).unwrap();
        let again = RunConfig::parse(&cfg.render()).unwrap();
        prop_assert_eq!(&again, &cfg);
        prop_assert_eq!(again.params().unwrap().chi, chi);
        prop_assert_eq!(again.experiment().unwrap().paths, paths);
    }

    #[test]
    fn pair_drift_has_zero_sum(
        points in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 2..40),
        chi in 0.1f64..5.0,
    ) {
        let positions: Vec<[f64; 2]> = points.iter().map(|&(x, y)| [x, y]).collect();
        let state = ParticleState::new(positions, 1.0, 4.0).unwrap();
        let params = ModelParams::new(1.0, 0.0, chi, 2.0).unwrap();
        let cfg = ParticleConfig::new(0.01, params, 0.1).unwrap();
        let drift = pair_drift(&state, &cfg).unwrap();
        let scale: f64 = drift.iter().map(|v| v[0].abs() + v[1].abs()).sum::<f64>().max(1.0);
        let sx: f64 = drift.iter().map(|v| v[0]).sum();
        let sy: f64 = drift.iter().map(|v| v[1]).sum();
        prop_assert!(sx.abs() < 1e-12 * scale && sy.abs() < 1e-12 * scale);
    }

    #[test]
    fn supersolution_dominates_second_moment(
        sigma in 0.05f64..1.5,
        chi in 0.0f64..10.0,
        m0 in 0.1f64..3.0,
        second0 in 0.1f64..5.0,
        seed in any::<u64>(),
    ) {
        let params = ModelParams::new(2.0, sigma, chi, 2.0).unwrap();
        let path = BrownianPath::sample(1, 0.01, 100, RngContext::new(seed, 0)).unwrap();
        let oracle = MomentOracle::new(m0, second0, params, path).unwrap();
        let lower = oracle.second_moment_series();
        let upper = oracle.u_plus_series();
        for (l, u) in lower.iter().zip(&upper) {
            prop_assert!(u >= l);
        }
        prop_assert!(oracle.mass_series().iter().all(|m| *m > 0.0));
    }

    #[test]
    fn event_probability_is_a_monotone_probability(
        alpha in 0.05f64..3.0,
        beta in 0.05f64..3.0,
        horizon in 0.05f64..5.0,
        sigma in 0.05f64..2.0,
        extra in 0.0f64..1.0,
    ) {
        let p = event_probability_closed_form(&BrownianEventSpec::new(alpha, beta, horizon).unwrap(), sigma);
        let wider = event_probability_closed_form(&BrownianEventSpec::new(alpha, beta + extra, horizon).unwrap(), sigma);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(wider >= p - 1e-12);
    }

    #[test]
    fn stat_mean_lies_within_the_sample(samples in prop::collection::vec(-1e3f64..1e3, 1..50)) {
        let s = Stat::of(&samples);
        let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s.mean >= lo - 1e-9 && s.mean <= hi + 1e-9);
        prop_assert!(s.variance >= 0.0 && s.std_error >= 0.0);
        prop_assert_eq!(s.count, samples.len());
    }

    #[test]
    fn norms_scale_homogeneously(c in 0.01f64..100.0, p in 2.0f64..6.0) {
        let f = make_gaussian_field(small_domain(), 1.0, 1.0, (0.0, 0.0)).unwrap();
        let ratio = lp_norm(&f.scaled(c), p) / lp_norm(&f, p);
        prop_assert!((ratio - c).abs() < 1e-12 * c);
    }
}
