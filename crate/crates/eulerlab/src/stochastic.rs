//! The α-scaled family `ṽ(t,x) = √α v(√α t, x)`, `R̃(t,x) = α R(√α t, x)`,
//! ensembles over random α, path-space diagnostics and random Reynolds stresses.
//!
//! Off-grid times `√α t_j` are reached with the 6-point Lagrange interpolant in
//! time. The pathwise limit is approximated by the deepest computed stage.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::beltrami::polarized_wave;
use crate::convexint::{IterationConfig, IterationState, Schedule, StageContext};
use crate::convexint::build_perturbation_at;
use crate::certifier::{certify, zero_stress, BatterySpec, CertifyReport, WeakMode};
use crate::error::{Error, Result};
use crate::fields::timeseries::{interp_stencil, simpson_weights, INTERP_POINTS};
use crate::fields::{
    div_tensor, momentum_residual, ops::l2_norm, sup_norm, GridField, GridSpec, SymTensorField, TensorSeries, TimeSeries, VectorSeries, C64,
};
use crate::seed;
use crate::transport::{base_step, FlowOptions};

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::AlphaOutOfRange(alpha))
    }
}

/// Weights on the source slices producing slice `j` of the α-resampled series.
pub fn resample_stencil(alpha: f64, j: usize, dt: f64, len: usize) -> (usize, [f64; INTERP_POINTS]) {
    if alpha == 1.0 {
        let start = j.saturating_sub(INTERP_POINTS / 2 - 1).min(len - INTERP_POINTS);
        let mut w = [0.0; INTERP_POINTS];
        w[j - start] = 1.0;
        return (start, w);
    }
    interp_stencil(alpha.sqrt() * j as f64 * dt, dt, len)
}

/// `t ↦ factor · s(√α t)` on the slices of `s`.
pub fn resample<F: GridField>(s: &TimeSeries<F>, alpha: f64, factor: f64) -> Result<TimeSeries<F>> {
    check_alpha(alpha)?;
    let len = s.slices.len();
    let dt = s.dt();
    let grid = s.slices[0].grid();
    let slices = (0..len)
        .map(|j| {
            let (start, w) = resample_stencil(alpha, j, dt, len);
            let mut out = F::zeros(grid);
            for (m, wm) in w.iter().enumerate() {
                if *wm != 0.0 {
                    out.axpy(factor * wm, &s.slices[start + m]);
                }
            }
            out
        })
        .collect();
    Ok(TimeSeries::new(s.t_end, slices))
}

fn resample_tensor(r: &TensorSeries, alpha: f64, factor: f64) -> Result<TensorSeries> {
    let mut out = resample(r, alpha, factor)?;
    let tf = r.slices.iter().all(|s| s.trace_free);
    for s in &mut out.slices {
        s.trace_free = tf;
    }
    Ok(out)
}

/// `(ṽ, R̃)`; the identity for `α = 1`.
pub fn alpha_scale(v: &VectorSeries, r: &TensorSeries, alpha: f64) -> Result<(VectorSeries, TensorSeries)> {
    check_alpha(alpha)?;
    Ok((resample(v, alpha, alpha.sqrt())?, resample_tensor(r, alpha, alpha)?))
}

/// Scaled copy of a whole state; the pressure scales like `R`.
pub fn alpha_scale_state(state: &IterationState, alpha: f64) -> Result<IterationState> {
    let (v, r) = alpha_scale(&state.v, &state.r, alpha)?;
    let p = resample(&state.p, alpha, alpha)?;
    let mut diag = state.diag.clone();
    diag.r_sup = r.sup();
    diag.r_l2 = r.l2();
    diag.v_sup = v.sup();
    diag.v_l2 = v.l2();
    diag.energy_zero_until = crate::convexint::zero_until(&v);
    Ok(IterationState {
        q: state.q,
        v,
        p,
        r,
        diag,
    })
}

/// Scaled schedule: `μ̃_q = √α μ_q`.
pub fn scaled_schedule(s: &Schedule, alpha: f64) -> Schedule {
    Schedule {
        mu_factor: s.mu_factor * alpha.sqrt(),
        ..s.clone()
    }
}

/// Invariants of one scaled state.
#[derive(Clone, Debug, Serialize)]
pub struct SampleCheck {
    pub alpha: f64,
    pub stage: usize,
    pub initial_zero: bool,
    /// Euler-Reynolds residual of the scaled state (sup over slices of the `L²` norm).
    pub er_residual: f64,
    /// `max_j ‖∂_t ṽ(t_j)‖_{L²} + ‖div R̃(t_j)‖_{L²}`
    pub er_scale: f64,
    /// `‖ṽ‖_C⁰ / (√α sup_{t_j ≤ √α T} |v(t_j)|)` (1 up to the resolution of the slices).
    pub sup_ratio: f64,
    pub pass: bool,
}

impl SampleCheck {
    pub fn relative_residual(&self) -> f64 {
        if self.er_scale == 0.0 {
            self.er_residual
        } else {
            self.er_residual / self.er_scale
        }
    }
}

/// Checks `ṽ(0) = 0` and the Euler-Reynolds residual of the scaled state
/// relative to `er_scale` against `tol_rel`.
///
/// `∂_t ṽ(t) = α (∂_t v)(√α t)` is taken from the resampled slice derivative of
/// `v`, the one `R` absorbed. The linear terms then commute with resampling and
/// what remains is the interpolation error of `ṽ ⊗ ṽ`, which is large once the
/// slices under-resolve the wave phase.
pub fn check_sample(state: &IterationState, alpha: f64, tol_rel: f64) -> Result<SampleCheck> {
    let s = alpha_scale_state(state, alpha)?;
    let initial_zero = s.v.slices[0].max_abs() == 0.0;
    let n = state.v.slices.len();
    let dv = resample(&TimeSeries::new(state.v.t_end, (0..n).map(|j| state.v.ddt(j)).collect()), alpha, alpha)?;
    let er_residual = (0..n)
        .map(|j| l2_norm(&momentum_residual(&dv.slices[j], &s.v.slices[j], &s.p.slices[j], &s.r.slices[j], 0.0)))
        .fold(0.0, f64::max);
    let er_scale = (0..n)
        .map(|j| l2_norm(&dv.slices[j]) + l2_norm(&div_tensor(&s.r.slices[j])))
        .fold(0.0, f64::max);
    let horizon = alpha.sqrt() * state.v.t_end;
    let unscaled = (0..state.v.slices.len())
        .filter(|&j| state.v.time(j) <= horizon + 1e-12)
        .map(|j| sup_norm(&state.v.slices[j]))
        .fold(0.0, f64::max)
        * alpha.sqrt();
    let scaled = s.v.sup();
    let sup_ratio = if unscaled == 0.0 && scaled == 0.0 {
        1.0
    } else {
        scaled / unscaled
    };
    let mut out = SampleCheck {
        alpha,
        stage: state.q,
        initial_zero,
        er_residual,
        er_scale,
        sup_ratio,
        pass: false,
    };
    out.pass = initial_zero && out.relative_residual() <= tol_rel;
    Ok(out)
}

/// Outcome of comparing `F̃_q(ṽ_q, R̃_q)(t)` with `√α F_q(v_q, R_q)(√α t)`.
#[derive(Clone, Debug, Serialize)]
pub struct ScaledCheck {
    pub alpha: f64,
    pub stage: usize,
    /// `max_j ‖w̃(t_j) - √α w(√α t_j)‖_C⁰ / max_j ‖√α w(√α t_j)‖_C⁰`
    pub mismatch: f64,
    /// Same for `Σ χ̃² R̃^l` against `α Σ χ² R^l`.
    pub datum_mismatch: f64,
    pub w_scale: f64,
    pub labels_scaled: Vec<i64>,
    pub labels_unscaled: Vec<i64>,
    pub tol: f64,
    pub pass: bool,
}

fn relative_gap<F: GridField>(a: &[F], b: &[F]) -> (f64, f64) {
    let mut gap: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        gap = gap.max(x.sub(y).max_abs());
        scale = scale.max(y.max_abs());
    }
    let rel = if scale == 0.0 {
        if gap == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        gap / scale
    };
    (rel, scale)
}

/// Builds the stage-`q` perturbation twice: from the scaled state with the
/// scaled schedule, and from the unscaled state at the times `√α t_j`
/// (then multiplied by `√α`). Errors with `MismatchExceeded` above `tol`.
pub fn scaled_perturbation_check(
    state: &IterationState,
    cfg: &IterationConfig,
    alpha: f64,
    tol: f64,
) -> Result<ScaledCheck> {
    check_alpha(alpha)?;
    let times: Vec<f64> = (0..state.v.slices.len()).map(|j| state.v.time(j)).collect();
    let report = if alpha == 0.0 {
        ScaledCheck {
            alpha,
            stage: state.q,
            mismatch: 0.0,
            datum_mismatch: 0.0,
            w_scale: 0.0,
            labels_scaled: vec![],
            labels_unscaled: vec![],
            tol,
            pass: true,
        }
    } else {
        let (vs, rs) = alpha_scale(&state.v, &state.r, alpha)?;
        let cfg_s = IterationConfig {
            schedule: scaled_schedule(&cfg.schedule, alpha),
            ..cfg.clone()
        };
        let ctx_s = StageContext::new(&vs, &rs, state.q, &cfg_s);
        let left = build_perturbation_at(&ctx_s, &times)?;

        // the unscaled flows use the sub-steps corresponding to the scaled ones
        let ds = base_step(&ctx_s.v_l, &cfg_s.flow);
        let cfg_u = IterationConfig {
            flow: FlowOptions {
                cfl: f64::INFINITY,
                max_ds: Some(if alpha == 1.0 { ds } else { alpha.sqrt() * ds }),
                ..cfg.flow.clone()
            },
            ..cfg.clone()
        };
        let ctx = StageContext::new(&state.v, &state.r, state.q, &cfg_u);
        let times_u: Vec<f64> = times
            .iter()
            .map(|t| if alpha == 1.0 { *t } else { alpha.sqrt() * t })
            .collect();
        let right = build_perturbation_at(&ctx, &times_u)?;

        let a = alpha.sqrt();
        let wl: Vec<_> = (0..times.len()).map(|j| left.total(j)).collect();
        let wr: Vec<_> = (0..times.len()).map(|j| right.total(j).scaled(a)).collect();
        let (mismatch, w_scale) = relative_gap(&wl, &wr);
        let sr: Vec<SymTensorField> = right.sr.iter().map(|s| s.scaled(alpha)).collect();
        let (datum_mismatch, _) = relative_gap(&left.sr, &sr);
        ScaledCheck {
            alpha,
            stage: state.q,
            mismatch,
            datum_mismatch,
            w_scale,
            labels_scaled: left.diag.active_labels,
            labels_unscaled: right.diag.active_labels,
            tol,
            pass: mismatch <= tol && datum_mismatch <= tol,
        }
    };
    if !report.pass {
        return Err(Error::MismatchExceeded {
            mismatch: report.mismatch.max(report.datum_mismatch),
            tol,
        });
    }
    Ok(report)
}

/// Law of the random scaling parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlphaDistribution {
    Uniform01,
    /// `α₁` with probability `p`, else `α₂`.
    TwoPoint { alpha1: f64, alpha2: f64, p: f64 },
    Dirac { alpha: f64 },
}

impl AlphaDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AlphaDistribution::Uniform01 => Ok(()),
            AlphaDistribution::TwoPoint { alpha1, alpha2, p } => {
                check_alpha(alpha1)?;
                check_alpha(alpha2)?;
                if (0.0..=1.0).contains(&p) {
                    Ok(())
                } else {
                    Err(Error::Config(format!("two_point probability {p} outside [0, 1]")))
                }
            }
            AlphaDistribution::Dirac { alpha } => check_alpha(alpha),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            AlphaDistribution::Uniform01 => rng.gen::<f64>(),
            AlphaDistribution::TwoPoint { alpha1, alpha2, p } => {
                if rng.gen::<f64>() < p {
                    alpha1
                } else {
                    alpha2
                }
            }
            AlphaDistribution::Dirac { alpha } => alpha,
        }
    }
}

/// Ensemble of α-scaled paths of one base run. Member `i` draws its `α` from
/// the stream `seed::derive(seed, ENSEMBLE_MEMBER + i)`.
#[derive(Clone, Debug, Serialize)]
pub struct Ensemble {
    pub seed: u64,
    pub distribution: AlphaDistribution,
    pub alphas: Vec<f64>,
    /// Stage numbers of the recorded paths; the last one is the limit proxy.
    pub stages: Vec<usize>,
    /// `‖ṽ_p^{α_i}‖_{L²([0,T]×T³)}` per stage and member.
    pub norms: Vec<Vec<f64>>,
    /// `‖ṽ_p^{α_i} - ṽ_p^{α_j}‖` per stage.
    pub distances: Vec<Vec<Vec<f64>>>,
    /// `‖ṽ_p^{α_i} - ṽ_deep^{α_j}‖` per stage.
    pub to_limit: Vec<Vec<Vec<f64>>>,
    /// `‖ṽ_deep^{α_i}(t_j)‖_{L²(T³)}` per member and slice.
    pub slice_norms: Vec<Vec<f64>>,
    /// Invariant checks, one per distinct `α` and stage, when requested.
    pub checks: Vec<SampleCheck>,
}

/// Per-member stencils `(start, √α · weights)` on every output slice.
fn member_stencils(alpha: f64, len: usize, dt: f64) -> Vec<(usize, [f64; INTERP_POINTS])> {
    let a = alpha.sqrt();
    (0..len)
        .map(|j| {
            let (s, w) = resample_stencil(alpha, j, dt, len);
            (s, w.map(|x| a * x))
        })
        .collect()
}

/// `G[m][m'] = ⟨a(s_m), b(s_m')⟩_{L²(T³)}`.
fn gram(a: &VectorSeries, b: &VectorSeries, symmetric: bool) -> Vec<Vec<f64>> {
    let n = a.slices.len();
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        let j0 = if symmetric { i } else { 0 };
        for j in j0..n {
            let x = a.slices[i].inner(&b.slices[j]);
            g[i][j] = x;
            if symmetric {
                g[j][i] = x;
            }
        }
    }
    g
}

type Stencils = Vec<(usize, [f64; INTERP_POINTS])>;

/// Space-time inner product of two resampled paths through a slice Gram matrix.
fn path_inner(sa: &Stencils, sb: &Stencils, g: &[Vec<f64>], quad: &[f64]) -> f64 {
    let mut total = 0.0;
    for ((a, b), wq) in sa.iter().zip(sb).zip(quad) {
        let mut s = 0.0;
        for (m, wa) in a.1.iter().enumerate() {
            if *wa == 0.0 {
                continue;
            }
            let row = &g[a.0 + m];
            for (mm, wb) in b.1.iter().enumerate() {
                if *wb != 0.0 {
                    s += wa * wb * row[b.0 + mm];
                }
            }
        }
        total += wq * s;
    }
    total
}

/// Draws `n` members and records their paths at the stages `first..=last` of
/// `states` (indexed by stage). With `validate = Some(tol_rel)` every distinct
/// `(α, stage)` is checked by `check_sample`.
pub fn sample_ensemble(
    states: &[IterationState],
    first: usize,
    distribution: AlphaDistribution,
    n: usize,
    seed: u64,
    validate: Option<f64>,
) -> Result<Ensemble> {
    distribution.validate()?;
    if states.is_empty() || first >= states.len() {
        return Err(Error::Config(format!(
            "ensemble needs stage {first}, run has {} stages",
            states.len()
        )));
    }
    if n == 0 {
        return Err(Error::Config("ensemble needs at least one member".into()));
    }
    let alphas: Vec<f64> = (0..n)
        .map(|i| distribution.sample(&mut seed::rng(seed, seed::streams::ENSEMBLE_MEMBER + i as u64)))
        .collect();
    let paths: Vec<&IterationState> = states[first..].iter().collect();
    let deep = paths[paths.len() - 1];
    let len = deep.v.slices.len();
    let dt = deep.v.dt();
    for s in &paths {
        if s.v.slices.len() != len || s.v.slices[0].grid != deep.v.slices[0].grid {
            return Err(Error::GridMismatch);
        }
    }
    let quad = simpson_weights(len, dt);
    let stencils: Vec<Stencils> = alphas.iter().map(|&a| member_stencils(a, len, dt)).collect();
    let g_deep = gram(&deep.v, &deep.v, true);
    let self_deep: Vec<f64> = stencils
        .iter()
        .map(|s| path_inner(s, s, &g_deep, &quad))
        .collect();
    let slice_norms: Vec<Vec<f64>> = stencils
        .iter()
        .map(|st| {
            st.iter()
                .map(|(start, w)| {
                    let mut x = 0.0;
                    for (a, wa) in w.iter().enumerate() {
                        for (b, wb) in w.iter().enumerate() {
                            x += wa * wb * g_deep[start + a][start + b];
                        }
                    }
                    x.max(0.0).sqrt()
                })
                .collect()
        })
        .collect();
    let mut norms = Vec::new();
    let mut distances = Vec::new();
    let mut to_limit = Vec::new();
    for (pi, st) in paths.iter().enumerate() {
        let is_deep = pi + 1 == paths.len();
        let g = if is_deep { g_deep.clone() } else { gram(&st.v, &st.v, true) };
        let self_p: Vec<f64> = stencils.iter().map(|s| path_inner(s, s, &g, &quad)).collect();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                if alphas[i] == alphas[j] {
                    continue;
                }
                let c = path_inner(&stencils[i], &stencils[j], &g, &quad);
                let x = (self_p[i] + self_p[j] - 2.0 * c).max(0.0).sqrt();
                d[i][j] = x;
                d[j][i] = x;
            }
        }
        let lim = if is_deep {
            d.clone()
        } else {
            let gc = gram(&st.v, &deep.v, false);
            let mut l = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    let c = path_inner(&stencils[i], &stencils[j], &gc, &quad);
                    l[i][j] = (self_p[i] + self_deep[j] - 2.0 * c).max(0.0).sqrt();
                }
            }
            l
        };
        norms.push(self_p.iter().map(|x| x.max(0.0).sqrt()).collect());
        distances.push(d);
        to_limit.push(lim);
    }
    let mut checks = Vec::new();
    if let Some(tol) = validate {
        let mut distinct: Vec<f64> = alphas.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        for st in &paths {
            for &a in &distinct {
                checks.push(check_sample(st, a, tol)?);
            }
        }
    }
    Ok(Ensemble {
        seed,
        distribution,
        alphas,
        stages: paths.iter().map(|s| s.q).collect(),
        norms,
        distances,
        to_limit,
        slice_norms,
        checks,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SupportReport {
    pub singleton: bool,
    pub max_pairwise: f64,
    pub tol_sep: f64,
    /// Member indices per single-linkage cluster, ordered by first member.
    pub clusters: Vec<Vec<usize>>,
}

/// Single-linkage clusters of the deepest-stage paths at separation `tol_sep`.
pub fn support_diagnostic(ens: &Ensemble, tol_sep: f64) -> SupportReport {
    let d = ens.distances.last().expect("ensemble without stages");
    let n = d.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut max_pairwise: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            max_pairwise = max_pairwise.max(d[i][j]);
            if d[i][j] <= tol_sep {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut root_of: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        match root_of[r] {
            Some(c) => clusters[c].push(i),
            None => {
                root_of[r] = Some(clusters.len());
                clusters.push(vec![i]);
            }
        }
    }
    SupportReport {
        singleton: max_pairwise <= tol_sep,
        max_pairwise,
        tol_sep,
        clusters,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LawRow {
    pub stage: usize,
    /// Energy distance between the stage law and the limit-proxy law.
    pub energy_distance: f64,
    /// Mean pairwise distance inside the stage.
    pub spread: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LawConvergence {
    pub rows: Vec<LawRow>,
    /// Fraction of consecutive stage pairs with non-increasing energy distance.
    pub monotone_fraction: f64,
    /// Soft flag: some consecutive pair increased.
    pub flagged: bool,
}

/// `E_p = 2 mean‖X-Y‖ - mean‖X-X'‖ - mean‖Y-Y'‖` (V-statistics), `X` the
/// stage-`p` members and `Y` the deepest-stage members.
pub fn law_convergence(ens: &Ensemble) -> LawConvergence {
    let mean = |m: &Vec<Vec<f64>>| {
        let n = m.len() as f64;
        m.iter().flatten().sum::<f64>() / (n * n)
    };
    let yy = mean(ens.distances.last().expect("ensemble without stages"));
    let rows: Vec<LawRow> = ens
        .stages
        .iter()
        .enumerate()
        .map(|(i, &stage)| {
            let xx = mean(&ens.distances[i]);
            let xy = mean(&ens.to_limit[i]);
            LawRow {
                stage,
                energy_distance: (2.0 * xy - xx - yy).max(0.0),
                spread: xx,
            }
        })
        .collect();
    let pairs = rows.len().saturating_sub(1);
    let good = rows
        .windows(2)
        .filter(|w| w[1].energy_distance <= w[0].energy_distance)
        .count();
    let monotone_fraction = if pairs == 0 { 1.0 } else { good as f64 / pairs as f64 };
    LawConvergence {
        flagged: good < pairs,
        rows,
        monotone_fraction,
    }
}

/// Per-path proxy for membership in the set of very weak solutions: the
/// certifier residual with `R = 0` is at most `tol` on the battery.
pub fn weak_solution_membership(path: &VectorSeries, battery: &BatterySpec, tol: f64) -> Result<CertifyReport> {
    certify(path, &zero_stress(path), 0.0, battery, tol, WeakMode::Full)
}

/// Bounded random time series for the random Reynolds stress.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessSpec {
    /// Temporal Fourier modes `0..=time_modes` on `[0, T]`.
    pub time_modes: usize,
    /// Geometric decay of the temporal coefficients.
    pub decay: f64,
    /// Spatial weight `(|k| / k_max)^weight_power` favours the top of the shell.
    pub weight_power: f64,
    /// Fixed amplitude; tuned to `‖R‖_C⁰ = δ_q` when absent.
    pub sigma: Option<f64>,
}

impl Default for ProcessSpec {
    fn default() -> Self {
        ProcessSpec {
            time_modes: 4,
            decay: 0.5,
            weight_power: 4.0,
            sigma: None,
        }
    }
}

/// `Z(t) = Σ_m a_m cos(2πmt/T) + b_m sin(2πmt/T)` with `Σ|a_m| + |b_m| = 1`, so `|Z| ≤ 1`.
#[derive(Clone, Debug)]
struct BoundedPath {
    a: Vec<f64>,
    b: Vec<f64>,
    t_end: f64,
}

impl BoundedPath {
    fn draw<R: Rng>(spec: &ProcessSpec, t_end: f64, rng: &mut R) -> Self {
        let mut a = Vec::with_capacity(spec.time_modes + 1);
        let mut b = Vec::with_capacity(spec.time_modes + 1);
        for m in 0..=spec.time_modes {
            let s = spec.decay.powi(m as i32);
            a.push(s * rng.sample::<f64, _>(StandardNormal));
            b.push(if m == 0 { 0.0 } else { s * rng.sample::<f64, _>(StandardNormal) });
        }
        let norm: f64 = a.iter().chain(&b).map(|x| x.abs()).sum();
        if norm > 0.0 {
            a.iter_mut().chain(b.iter_mut()).for_each(|x| *x /= norm);
        }
        BoundedPath { a, b, t_end }
    }

    fn at(&self, t: f64) -> f64 {
        let w = std::f64::consts::TAU * t / self.t_end;
        (0..self.a.len())
            .map(|m| {
                let (s, c) = (m as f64 * w).sin_cos();
                self.a[m] * c + self.b[m] * s
            })
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct RandomReynolds {
    pub r: TensorSeries,
    pub sigma: f64,
    /// Open lower and closed upper radius of the frequency shell.
    pub shell: (f64, f64),
    /// Number of `±k` pairs in the shell.
    pub pairs: usize,
}

/// `R(t,x) = σ Σ_k w_k Z^k(t) e_k(x)` over the shell `λ_q λ̄ < |k| ≤ λ_{q+1} λ̄`,
/// with `e_k = Re(B_k⊗B_k e^{ik·x})`, `e_{-k} = Im(B_k⊗B_k e^{ik·x})` for the
/// canonical member `k` of each pair. `B_k⊗B_k` is symmetric and trace-free.
pub fn random_reynolds(
    q: usize,
    schedule: &Schedule,
    spec: &GridSpec,
    process: &ProcessSpec,
    seed: u64,
) -> Result<RandomReynolds> {
    let grid = spec.grid;
    let lo = schedule.lambda(q) * schedule.lambda_bar;
    let hi = schedule.lambda(q + 1) * schedule.lambda_bar;
    let half = (grid.n / 2) as f64;
    if hi >= half {
        return Err(Error::TuningFailure(format!(
            "shell radius {hi} does not fit below the Nyquist index {half}"
        )));
    }
    let mut rng = seed::rng(seed, seed::streams::RANDOM_REYNOLDS + q as u64);
    let kmax = hi.floor() as i64;
    let mut modes = Vec::new();
    for a in -kmax..=kmax {
        for b in -kmax..=kmax {
            for c in -kmax..=kmax {
                let k = [a, b, c];
                if crate::beltrami::canonical(k) != k {
                    continue;
                }
                let r = ((a * a + b * b + c * c) as f64).sqrt();
                if r > lo && r <= hi {
                    modes.push((k, r));
                }
            }
        }
    }
    if modes.is_empty() {
        return Err(Error::TuningFailure(format!("empty shell ({lo}, {hi}]")));
    }
    let paths: Vec<(BoundedPath, BoundedPath)> = modes
        .iter()
        .map(|_| {
            (
                BoundedPath::draw(process, spec.t_end, &mut rng),
                BoundedPath::draw(process, spec.t_end, &mut rng),
            )
        })
        .collect();
    let sp = grid.spectral();
    let dyads: Vec<[C64; 6]> = modes
        .iter()
        .map(|(k, _)| {
            let b = polarized_wave(*k).b;
            crate::fields::types::SYM_PAIRS.map(|(i, j)| b[i] * b[j])
        })
        .collect();
    let unit_series = TimeSeries::from_fn(spec, |t| {
        let mut spec_c = vec![vec![C64::new(0.0, 0.0); sp.len()]; 6];
        for (((k, r), (zp, zm)), d) in modes.iter().zip(&paths).zip(&dyads) {
            let w = (r / hi).powf(process.weight_power);
            let z = 0.5 * w * C64::new(zp.at(t), -zm.at(t));
            let ip = index(grid, *k);
            let im = index(grid, [-k[0], -k[1], -k[2]]);
            for c in 0..6 {
                let x = z * d[c];
                spec_c[c][ip] += x;
                spec_c[c][im] += x.conj();
            }
        }
        let comps: Vec<Vec<f64>> = spec_c.iter().map(|s| sp.inverse(s)).collect();
        let mut f = SymTensorField::from_comps(grid, comps);
        f.trace_free = true;
        f
    });
    let unit_sup = unit_series.sup();
    let delta = schedule.delta(q);
    let sigma = match process.sigma {
        Some(s) => {
            if s * unit_sup > delta {
                return Err(Error::TuningFailure(format!(
                    "sigma = {s} gives sup {:.4e} > delta_q = {delta:.4e}",
                    s * unit_sup
                )));
            }
            s
        }
        None => {
            if !(unit_sup.is_finite() && unit_sup > 0.0) {
                return Err(Error::TuningFailure(format!("unit stress has sup {unit_sup}")));
            }
            delta * (1.0 - 1e-12) / unit_sup
        }
    };
    let mut r = unit_series.scaled(sigma);
    for s in &mut r.slices {
        s.trace_free = true;
    }
    Ok(RandomReynolds {
        r,
        sigma,
        shell: (lo, hi),
        pairs: modes.len(),
    })
}

fn index(grid: crate::fields::Grid, k: [i64; 3]) -> usize {
    let i = |x: i64| grid.index_of(x).expect("mode inside the grid");
    grid.idx(i(k[0]), i(k[1]), i(k[2]))
}
