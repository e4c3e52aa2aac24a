//! Desk-scale acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` fail at desk scale for reasons recorded
//! with the project notes; they are evaluated and printed like the rest but
//! do not fail the binary. Any other FAIL exits non-zero.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use eulerlab::beltrami::{invariant_suite, real_beltrami_flow, DirectionSet};
use eulerlab::certifier::{certify, corrupt_mode, dominant_mode, BatterySpec, WeakMode};
use eulerlab::convexint::IterationState;
use eulerlab::fields::random::random_vector;
use eulerlab::fields::{
    curl, div, div_tensor, inverse_divergence, leray_project, low_pass, sup_norm, Grid, GridField, GridSpec,
    TimeSeries, VectorField, C64,
};
use eulerlab::noiselab::{
    eddy_viscosity_fit, low_mode_battery, simulate_transport_sde, SdeConfig, ThetaProfile,
};
use eulerlab::run::{self, RunConfig};
use eulerlab::stochastic::{
    law_convergence, sample_ensemble, scaled_perturbation_check, support_diagnostic, AlphaDistribution,
};
use eulerlab::transport::{flow_map, flow_map_at, flow_residual, FlowOptions};

const KNOWN_RED: &[&str] = &["ladder"];

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn line(o: &Outcome, secs: f64) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    let note = if !o.pass && KNOWN_RED.contains(&o.name) { " (known red)" } else { "" };
    println!("{tag} {:<12} [{secs:6.1}s]{note} {}", o.name, o.detail);
}

fn beltrami_and_geometry() -> (Outcome, Outcome) {
    let ds = DirectionSet::default_for(5.0).unwrap();
    let rep = invariant_suite(&ds, Grid::new(32).unwrap(), 50, 1000, 11).unwrap();
    let b = Outcome {
        name: "beltrami",
        pass: rep.imag_max <= 1e-12
            && rep.div_max <= 1e-12
            && rep.curl_max <= 1e-12
            && rep.stationary_max <= 1e-10
            && rep.average_max <= 1e-10,
        detail: format!(
            "imag {:.1e} div {:.1e} curl {:.1e} stationary {:.1e} average {:.1e}",
            rep.imag_max, rep.div_max, rep.curl_max, rep.stationary_max, rep.average_max
        ),
    };
    let g = Outcome {
        name: "geometric",
        pass: rep.reconstruction_max <= 1e-10 && rep.gamma_symmetric && rep.outside_ball_rejected,
        detail: format!(
            "reconstruction {:.1e} symmetric {} outside rejected {}",
            rep.reconstruction_max, rep.gamma_symmetric, rep.outside_ball_rejected
        ),
    };
    (b, g)
}

fn operators() -> Outcome {
    let g = Grid::new(32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut f = random_vector(g, 11.0, &mut rng);
    let m = f.mean();
    for a in 0..3 {
        for x in f.c[a].iter_mut() {
            *x -= m[a];
        }
    }
    let inv = sup_norm(&div_tensor(&inverse_divergence(&f).unwrap()).sub(&f)) / sup_norm(&f);

    let v = random_vector(g, 8.0, &mut rng);
    let pv = leray_project(&v);
    let idem = sup_norm(&leray_project(&pv).sub(&pv)) / sup_norm(&v);
    let orth = pv.inner(&v.sub(&pv)).abs() / v.inner(&v);
    let divp = sup_norm(&div(&pv)) / sup_norm(&v);

    let u = random_vector(g, 9.0, &mut rng);
    let a = low_pass(&curl(&u), 6.5);
    let comm = sup_norm(&a.sub(&curl(&low_pass(&u, 6.5)))) / sup_norm(&a).max(1.0);
    Outcome {
        name: "operators",
        pass: inv <= 1e-10 && idem <= 1e-10 && orth <= 1e-10 && divp <= 1e-10 && comm <= 1e-12,
        detail: format!(
            "div∘inv {inv:.1e} leray idem {idem:.1e} orth {orth:.1e} div {divp:.1e} low-pass comm {comm:.1e}"
        ),
    }
}

fn two_pair_beltrami(grid: Grid, amp: f64) -> VectorField {
    let mut coeffs = BTreeMap::new();
    for (k, a) in [([3, 4, 0], C64::new(amp, 0.0)), ([0, 3, 4], C64::new(0.0, amp))] {
        coeffs.insert(k, a);
        coeffs.insert([-k[0], -k[1], -k[2]], a.conj());
    }
    real_beltrami_flow(grid, &coeffs, 5.0).unwrap()
}

fn transport() -> Outcome {
    let spec = GridSpec::new(16, 1.0, 16).unwrap();
    let c = [0.3, -0.7, 1.1];
    let v = TimeSeries::from_fn(&spec, |_| VectorField::from_fn(spec.grid, |_| c));
    let fm = flow_map(&v, 2, 4.0, &FlowOptions::default()).unwrap();
    let mut exact: f64 = 0.0;
    for (i, t) in fm.times.iter().enumerate() {
        for p in 0..spec.grid.len() {
            let d = fm.deviation[i].at(p);
            for a in 0..3 {
                exact = exact.max((d[a] + c[a] * (t - 0.5)).abs());
            }
        }
    }

    let spec = GridSpec::new(16, 1.0, 8).unwrap();
    let w = two_pair_beltrami(spec.grid, 0.2);
    let steady = TimeSeries::from_fn(&spec, |_| w.clone());
    let run = |ds: f64| {
        let opts = FlowOptions {
            max_ds: Some(ds),
            ..FlowOptions::default()
        };
        flow_map_at(&steady, 0.0, &[1.0], &opts).unwrap().deviation.remove(0)
    };
    let (a, b, cc) = (run(1.0 / 8.0), run(1.0 / 16.0), run(1.0 / 32.0));
    let factor = sup_norm(&a.sub(&b)) / sup_norm(&b.sub(&cc));

    let spec = GridSpec::new(32, 0.5, 16).unwrap();
    let det_at = |kmax: f64| {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = eulerlab::fields::random::random_solenoidal(spec.grid, kmax, &mut rng).scaled(0.5);
        let q = eulerlab::fields::random::random_solenoidal(spec.grid, kmax, &mut rng).scaled(0.5);
        let v = TimeSeries::from_fn(&spec, |t| p.add(&q.scaled(t)));
        let fm = flow_map(&v, 1, 4.0, &FlowOptions::default()).unwrap();
        (fm.det_defect(), flow_residual(&fm, &v))
    };
    // |k| <= 2 is evaluated by mode summation; wider bands go through tricubic sampling
    let (det, res) = det_at(2.0);
    let (det_wide, _) = det_at(3.0);
    Outcome {
        name: "transport",
        pass: exact <= 1e-12 && (12.0..=20.0).contains(&factor) && det <= 1e-6,
        detail: format!(
            "constant-velocity error {exact:.1e} self-convergence factor {factor:.2} det defect {det:.1e} (flow residual {res:.1e}; interpolated band |k|<=3: {det_wide:.1e})"
        ),
    }
}

fn ladder(states: &[IterationState], cfg: &RunConfig) -> Outcome {
    let s = run::summarize(states, cfg);
    let ratios: Vec<String> = s
        .estimates
        .rows
        .iter()
        .map(|r| {
            let opt = |x: Option<f64>| x.map_or("-".to_string(), |x| format!("{x:.1}"));
            format!("q{} a1 {} a2 {} a3 {:.1}", r.q, opt(r.a1), opt(r.a2), r.a3)
        })
        .collect();
    Outcome {
        name: "ladder",
        pass: s.pass,
        detail: format!(
            "ER max {:.1e} ({}) | r_sup {:?} decreasing {} | estimates {} [{}] | v(0)=0 {} | energy zero until {:?} >= {:.4} {}",
            s.er_max,
            s.er_pass,
            s.r_sup.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>(),
            s.r_strictly_decreasing,
            s.estimates.pass,
            ratios.join("; "),
            s.initial_zero,
            s.energy_zero_until,
            s.onset_limit,
            s.onset_pass
        ),
    }
}

fn alpha_cross_validation(states: &[IterationState], cfg: &RunConfig) -> Outcome {
    let icfg = cfg.iteration_config().unwrap();
    let state = &states[1];
    let mut parts = Vec::new();
    let mut pass = true;
    for alpha in [1.0, 0.25] {
        // tolerance 1 returns the report; the criterion is applied here
        match scaled_perturbation_check(state, &icfg, alpha, 1.0) {
            Ok(r) => {
                let worst = r.mismatch.max(r.datum_mismatch);
                let ok = if alpha == 1.0 { worst == 0.0 } else { worst <= 1e-4 };
                pass &= ok;
                parts.push(format!(
                    "alpha {alpha}: w {:.2e} datum {:.2e} labels {}/{}",
                    r.mismatch,
                    r.datum_mismatch,
                    r.labels_scaled.len(),
                    r.labels_unscaled.len()
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("alpha {alpha}: {e}"));
            }
        }
    }
    Outcome {
        name: "alpha-scale",
        pass,
        detail: parts.join(" | "),
    }
}

fn stochastic(states: &[IterationState], cfg: &RunConfig, dir: &std::path::Path) -> Outcome {
    let eb = &cfg.ensemble;
    let two = sample_ensemble(
        states,
        eb.first_stage,
        AlphaDistribution::TwoPoint { alpha1: 1.0, alpha2: 0.25, p: 0.5 },
        16,
        cfg.seed,
        None,
    )
    .unwrap();
    let deep = two.norms.last().unwrap();
    let v_norm = two
        .alphas
        .iter()
        .zip(deep)
        .filter(|(a, _)| **a == 1.0)
        .map(|(_, n)| *n)
        .fold(0.0, f64::max);
    let largest = deep.iter().copied().fold(0.0, f64::max);
    let s2 = support_diagnostic(&two, eb.tol_sep * largest);
    let two_ok = s2.clusters.len() == 2 && s2.max_pairwise > 0.1 * v_norm;

    let dirac = sample_ensemble(states, eb.first_stage, AlphaDistribution::Dirac { alpha: 0.5 }, 8, cfg.seed, None)
        .unwrap();
    let largest_d = dirac.norms.last().unwrap().iter().copied().fold(0.0, f64::max);
    let sd = support_diagnostic(&dirac, eb.tol_sep * largest_d);

    let mut ucfg = cfg.clone();
    ucfg.ensemble.distribution = AlphaDistribution::Uniform01;
    let (uens, usum) = run::ensemble_run(states, &ucfg, dir).unwrap();
    let law = law_convergence(&uens);
    let uni_ok = !usum.support.singleton && law.monotone_fraction >= 0.8;

    Outcome {
        name: "stochastic",
        pass: two_ok && sd.singleton && uni_ok,
        detail: format!(
            "two_point clusters {} max_pairwise {:.3e} vs 0.1|v| {:.3e} | dirac singleton {} | uniform01 n={} singleton {} monotone {:.2} E {:?} | members valid {}",
            s2.clusters.len(),
            s2.max_pairwise,
            0.1 * v_norm,
            sd.singleton,
            uens.alphas.len(),
            usum.support.singleton,
            law.monotone_fraction,
            law.rows.iter().map(|r| format!("{:.3e}", r.energy_distance)).collect::<Vec<_>>(),
            usum.members_valid
        ),
    }
}

/// `u = sin²(πt) W`, `R = π sin(2πt) R(W)` with `W` a unit-shell Beltrami field.
fn exact_pair(n: usize, n_t: usize) -> (TimeSeries<VectorField>, TimeSeries<eulerlab::fields::SymTensorField>) {
    let spec = GridSpec::new(n, 1.0, n_t).unwrap();
    let mut c = BTreeMap::new();
    for (k, a) in [
        ([1, 0, 0], C64::new(0.7, 0.2)),
        ([0, 1, 0], C64::new(-0.4, 0.5)),
        ([0, 0, 1], C64::new(0.3, -0.6)),
    ] {
        c.insert(k, a);
        c.insert([-k[0], -k[1], -k[2]], a.conj());
    }
    let w = real_beltrami_flow(spec.grid, &c, 1.0).unwrap();
    let rw = inverse_divergence(&w).unwrap();
    let pi = std::f64::consts::PI;
    (
        TimeSeries::from_fn(&spec, |t| w.scaled((pi * t).sin().powi(2))),
        TimeSeries::from_fn(&spec, |t| rw.scaled(pi * (2.0 * pi * t).sin())),
    )
}

fn certifier(states: &[IterationState], cfg: &RunConfig) -> Outcome {
    let threshold = cfg.certify.threshold;
    let battery = BatterySpec {
        count: 20,
        ..cfg.certify.battery.clone()
    };
    let mut clean = Vec::new();
    let mut dirty = Vec::new();
    for st in states {
        let rep = certify(&st.v, &st.r, 0.0, &battery, threshold, WeakMode::Full).unwrap();
        clean.push(rep.max);
        if let Some(k) = dominant_mode(&st.v, battery.kmax * 64.0) {
            let bad = corrupt_mode(&st.v, k, 1.1);
            dirty.push(certify(&bad, &st.r, 0.0, &battery, threshold, WeakMode::Full).unwrap().max);
        }
    }
    let pairs_pass = clean.iter().all(|&x| x <= threshold);

    // detection: some field of the battery sees a residual of at least 1e-3
    let (u, r) = exact_pair(8, 32);
    let k = dominant_mode(&u, 4.0).unwrap();
    let analytic = certify(&corrupt_mode(&u, k, 1.1), &r, 0.0, &battery, threshold, WeakMode::Full)
        .unwrap()
        .max;
    let detected = analytic >= 1e-3;

    let errs: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|&n_t| {
            let (u, r) = exact_pair(8, n_t);
            certify(&u, &r, 0.0, &battery, 1.0, WeakMode::Full).unwrap().max
        })
        .collect();
    let orders: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    let conv = orders.iter().all(|o| (12.0..=20.0).contains(o));
    Outcome {
        name: "certifier",
        pass: pairs_pass && detected && conv,
        detail: format!(
            "pipeline pairs {:?} <= {threshold:.0e}: {pairs_pass} | corrupted analytic pair {analytic:.2e} >= 1e-3: {detected} (corrupted pipeline pairs {:?}) | n_t ratios {:?}",
            clean.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>(),
            dirty.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>(),
            orders.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>()
        ),
    }
}

fn quadform(cfg: &RunConfig, dir: &std::path::Path) -> Outcome {
    let mut c = cfg.clone();
    c.noise.shells = vec![4, 8];
    let rows = run::noise_quadform(&c, dir).unwrap();
    let xv = rows.iter().map(|r| r.x_variation).fold(0.0, f64::max);
    let (a4, a8) = (rows[0].quartic_anisotropy, rows[1].quartic_anisotropy);
    Outcome {
        name: "quadform",
        pass: xv <= 1e-12 && a8 < a4,
        detail: format!(
            "x-variation {xv:.1e} | quartic anisotropy N=4 {a4:.3e} N=8 {a8:.3e} | matrix anisotropy {:.1e} {:.1e}",
            rows[0].anisotropy, rows[1].anisotropy
        ),
    }
}

fn eddy(cfg: &RunConfig) -> Outcome {
    let mut c = cfg.clone();
    c.noise.shells = vec![4, 8];
    let fits = run::eddy_fits(&c).unwrap();
    let r4 = fits[0].ratio.unwrap();
    let r8 = fits[1].ratio.unwrap();
    let battery = low_mode_battery(Grid::new(c.noise.fit_n).unwrap(), c.noise.fit_kmax);
    let k1 = eddy_viscosity_fit(&ThetaProfile::new(1.0, 4).unwrap(), &battery).unwrap().kappa_eff;
    let k3 = eddy_viscosity_fit(&ThetaProfile::new(3.0, 4).unwrap(), &battery).unwrap().kappa_eff;
    let lin = (k3 - 3.0 * k1).abs() / k1.abs();
    Outcome {
        name: "eddy",
        pass: (0.7..=1.3).contains(&r4) && (r8 - 1.0).abs() < (r4 - 1.0).abs() && lin <= 1e-10,
        detail: format!("ratio N=4 {r4:.4} N=8 {r8:.4} | linearity {lin:.1e}"),
    }
}

fn spde(cfg: &RunConfig) -> Outcome {
    let grid = Grid::new(8).unwrap();
    let k0 = cfg.noise.k0;
    let w0 = run::single_mode(grid, k0);
    let heat_cfg = SdeConfig {
        n_paths: 1,
        dt: 1e-3,
        ..cfg.noise.sde.clone()
    };
    let s = simulate_transport_sde(&w0, &ThetaProfile::new(0.0, cfg.noise.sde_shell).unwrap(), &heat_cfg).unwrap();
    let k2 = k0.iter().map(|k| (k * k) as f64).sum::<f64>();
    let heat = s
        .times
        .iter()
        .zip(&s.mean_energy)
        .map(|(t, e)| {
            let exact = s.mean_energy[0] * (-2.0 * heat_cfg.nu * k2 * t).exp();
            (e - exact).abs() / exact
        })
        .fold(0.0, f64::max);

    let noisy = run::sde_experiment(cfg).unwrap();
    Outcome {
        name: "spde",
        pass: heat <= 0.01 && noisy.relative_slope_error <= 0.25,
        detail: format!(
            "heat relative error {heat:.1e} | {} paths slope {:.3} vs predicted {:.3} (error {:.1}%) | energy identity {:.1e} (t {:.2})",
            cfg.noise.sde.n_paths,
            noisy.mean_log_slope,
            noisy.predicted_slope,
            100.0 * noisy.relative_slope_error,
            noisy.stats.energy_identity,
            noisy.stats.energy_identity_t
        ),
    }
}

fn main() {
    let cfg = RunConfig::default();
    let tmp = tempfile::tempdir().unwrap();
    let mut outcomes = Vec::new();
    let mut timed = |f: &mut dyn FnMut() -> Vec<Outcome>| {
        let t = Instant::now();
        let out = f();
        let secs = t.elapsed().as_secs_f64() / out.len() as f64;
        for o in &out {
            line(o, secs);
        }
        outcomes.extend(out);
    };

    timed(&mut || {
        let (b, g) = beltrami_and_geometry();
        vec![b, g]
    });
    timed(&mut || vec![operators()]);
    timed(&mut || vec![transport()]);

    let t = Instant::now();
    let (states, _) = run::ci_run(&cfg, &tmp.path().join("ci")).unwrap();
    println!("     ladder run: {} stages in {:.1}s", states.len(), t.elapsed().as_secs_f64());
    timed(&mut || vec![ladder(&states, &cfg)]);
    timed(&mut || vec![alpha_cross_validation(&states, &cfg)]);
    timed(&mut || vec![stochastic(&states, &cfg, &tmp.path().join("ensemble"))]);
    timed(&mut || vec![certifier(&states, &cfg)]);
    drop(states);

    timed(&mut || vec![quadform(&cfg, &tmp.path().join("quadform"))]);
    timed(&mut || vec![eddy(&cfg)]);
    timed(&mut || vec![spde(&cfg)]);

    let unexpected: Vec<&str> = outcomes
        .iter()
        .filter(|o| !o.pass && !KNOWN_RED.contains(&o.name))
        .map(|o| o.name)
        .collect();
    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!("acceptance: {passed}/{} criteria pass", outcomes.len());
    if !unexpected.is_empty() {
        println!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
