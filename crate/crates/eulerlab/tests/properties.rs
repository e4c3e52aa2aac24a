use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use eulerlab::certifier::{certify, weak_residual, zero_stress, BatterySpec, TestField, WeakMode};
use eulerlab::convexint::{smooth_step, Schedule};
use eulerlab::fields::io::{read_series, write_series};
use eulerlab::fields::random::{random_solenoidal, random_vector};
use eulerlab::fields::{sup_norm, Grid, GridField, GridSpec, SymTensorField, TimeSeries, VectorField};
use eulerlab::multiscale::{reynolds_stress, ScaleDecomposition};
use eulerlab::noiselab::{completion, corrector_symbol, quadratic_form, ThetaProfile};
use eulerlab::stochastic::{alpha_scale, AlphaDistribution};
use eulerlab::transport::{flow_map, FlowOptions};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn scale_decomposition_reconstructs(seed in 0u64..10_000, kappa in 0.0f64..8.0) {
        let g = Grid::new(16).unwrap();
        let u = random_vector(g, 6.0, &mut rng(seed));
        let d = ScaleDecomposition::new(&u, kappa);
        prop_assert!(sup_norm(&d.reconstruct().sub(&u)) <= 1e-12 * sup_norm(&u).max(1.0));
    }

    #[test]
    fn reynolds_stress_vanishes_above_the_band(seed in 0u64..10_000) {
        let g = Grid::new(16).unwrap();
        let u = random_vector(g, 3.0, &mut rng(seed));
        // the filter passes u and u ⊗ u (support radius 6) unchanged
        let r = reynolds_stress(&u, 7.0);
        prop_assert!(sup_norm(&r) <= 1e-12 * sup_norm(&u).powi(2).max(1.0));
    }

    #[test]
    fn constant_flow_map_is_a_translation(c0 in -1.0f64..1.0, c1 in -1.0f64..1.0, c2 in -1.0f64..1.0) {
        let spec = GridSpec::new(8, 1.0, 8).unwrap();
        let c = [c0, c1, c2];
        let v = TimeSeries::from_fn(&spec, |_| VectorField::from_fn(spec.grid, |_| c));
        let fm = flow_map(&v, 1, 4.0, &FlowOptions::default()).unwrap();
        for (i, t) in fm.times.iter().enumerate() {
            let d = fm.deviation[i].at(5);
            for a in 0..3 {
                prop_assert!((d[a] + c[a] * (t - fm.t0)).abs() <= 1e-12);
            }
        }
        prop_assert!(fm.det_defect() <= 1e-12);
    }

    #[test]
    fn weak_residual_is_odd_in_the_stress(seed in 0u64..10_000) {
        let spec = GridSpec::new(8, 1.0, 8).unwrap();
        let u: TimeSeries<VectorField> = TimeSeries::zeros(&spec);
        let s = random_vector(spec.grid, 2.0, &mut rng(seed));
        let st = eulerlab::fields::ops::inverse_divergence_unchecked(&s);
        let r = TimeSeries::from_fn(&spec, |t| st.scaled((std::f64::consts::PI * t).sin()));
        let phi = &TestField::battery(spec.grid, 1.0, &BatterySpec { count: 1, ..Default::default() }).unwrap()[0];
        let a = weak_residual(&u, &r, 0.0, phi).unwrap().raw;
        let b = weak_residual(&u, &r.scaled(-1.0), 0.0, phi).unwrap().raw;
        prop_assert!((a + b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn alpha_scaling_preserves_initial_rest_and_unit_alpha(seed in 0u64..10_000, alpha in 0.0f64..1.0) {
        let spec = GridSpec::new(8, 1.0, 8).unwrap();
        let w = random_solenoidal(spec.grid, 2.0, &mut rng(seed));
        let v = TimeSeries::from_fn(&spec, |t| w.scaled(t * t));
        let r: TimeSeries<SymTensorField> = TimeSeries::zeros(&spec);
        let (vs, _) = alpha_scale(&v, &r, alpha).unwrap();
        prop_assert_eq!(vs.slices[0].max_abs(), 0.0);
        let (v1, _) = alpha_scale(&v, &r, 1.0).unwrap();
        prop_assert!(v1.slices.iter().zip(&v.slices).all(|(a, b)| a == b));
    }

    #[test]
    fn alpha_draws_lie_in_the_unit_interval(seed in any::<u64>()) {
        let mut g = rng(seed);
        for d in [
            AlphaDistribution::Uniform01,
            AlphaDistribution::TwoPoint { alpha1: 1.0, alpha2: 0.25, p: 0.3 },
            AlphaDistribution::Dirac { alpha: 0.5 },
        ] {
            let a = d.sample(&mut g);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn completion_is_orthonormal_to_k(k0 in -6i64..6, k1 in -6i64..6, k2 in -6i64..6) {
        prop_assume!(k0 != 0 || k1 != 0 || k2 != 0);
        let k = [k0 as f64, k1 as f64, k2 as f64];
        let [a, b] = completion([k0, k1, k2]);
        let dot = |x: [f64; 3], y: [f64; 3]| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
        prop_assert!((dot(a, a) - 1.0).abs() < 1e-14 && (dot(b, b) - 1.0).abs() < 1e-14);
        prop_assert!(dot(a, b).abs() < 1e-14);
        prop_assert!(dot(a, k).abs() < 1e-12 && dot(b, k).abs() < 1e-12);
    }

    #[test]
    fn corrector_symbol_is_symmetric_nonpositive(p0 in -5i64..5, p1 in -5i64..5, p2 in -5i64..5, n in 1usize..4) {
        let prof = ThetaProfile::new(1.0, n).unwrap();
        let m = corrector_symbol(&prof, [p0, p1, p2], 1.0, None);
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((m[i][j] - m[j][i]).abs() <= 1e-12);
            }
        }
        let mut rg = rng((p0 + 7 + 20 * (p1 + 7) + 400 * (p2 + 7)) as u64);
        for _ in 0..4 {
            let x: [f64; 3] = [rand::Rng::gen_range(&mut rg, -1.0..1.0), rand::Rng::gen_range(&mut rg, -1.0..1.0), rand::Rng::gen_range(&mut rg, -1.0..1.0)];
            let q: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| x[i] * m[i][j] * x[j]).sum();
            prop_assert!(q <= 1e-12);
        }
    }

    #[test]
    fn quadratic_form_trace_matches_closed_form(n in 1usize..4, nu_t in 0.1f64..3.0) {
        let q = quadratic_form(&ThetaProfile::new(nu_t, n).unwrap(), Grid::new(16).unwrap());
        prop_assert!(q.x_variation <= 1e-12);
        prop_assert!((q.trace - q.trace_closed_form).abs() <= 1e-12 * q.trace_closed_form);
    }

    #[test]
    fn smooth_step_is_monotone_on_the_unit_interval(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(smooth_step(lo) <= smooth_step(hi));
        prop_assert!((0.0..=1.0).contains(&smooth_step(lo)));
    }

    #[test]
    fn cutoffs_square_sum_to_one(t in 0.0f64..1.0, q in 0usize..3) {
        let c = Schedule::default().cutoffs(q);
        let sum: f64 = c.labels(1.0).map(|l| c.value(l, t).powi(2)).sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn series_dump_round_trip_is_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = GridSpec::new(8, 0.5, 8).unwrap();
    let w = random_solenoidal(spec.grid, 3.0, &mut rng(4));
    let v = TimeSeries::from_fn(&spec, |t| w.scaled(1.0 + t));
    let path = tmp.path().join("v.bin");
    let sum = write_series(&path, &v).unwrap();
    assert_eq!(sum.len(), 64);
    let back: TimeSeries<VectorField> = read_series(&path).unwrap();
    assert_eq!(back.t_end, v.t_end);
    assert!(back.slices.iter().zip(&v.slices).all(|(a, b)| a == b));
}

#[test]
fn zero_candidate_is_certified_at_any_threshold() {
    let spec = GridSpec::new(8, 1.0, 8).unwrap();
    let u: TimeSeries<VectorField> = TimeSeries::zeros(&spec);
    let rep = certify(&u, &zero_stress(&u), 0.3, &BatterySpec::default(), 0.0, WeakMode::Full).unwrap();
    assert!(rep.pass);
}
