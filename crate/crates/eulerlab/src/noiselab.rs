//! Transport noise `Σ_{k,α} Π(σ_{k,α}·∇ ·) ∘ dW^{k,α}` with `σ_{k,α} = θ_k e_{k,α}`,
//! its Itô corrector `L f = ½ Σ Π(σ·∇ Π(σ·∇ f))`, the eddy-viscosity fit and a
//! Galerkin Euler-Maruyama simulation of the linear transport SPDE.
//!
//! Counting convention: `D_N = {k ∈ Z³ : N ≤ |k| ≤ 2N}` counts `k` and `-k`
//! separately; `θ_k² = 6 ν_T / |D_N|` on `D_N`, so `Σ_{k ∈ D_N, α} θ_k² = 12 ν_T`
//! and `tr S = 3 ν_T`. The unprojected (scalar) corrector is then `ν_T Δ` up to
//! shell anisotropy, and the projected one tends to `(3/5) ν_T Δ`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::beltrami::canonical;
use crate::error::{Error, Result};
use crate::fields::spectral::Fft3;
use crate::fields::{div, grad_sup, laplacian, sup_norm, Grid, GridField, SymTensorField, VectorField, C64};
use crate::seed;

type M3 = [[f64; 3]; 3];

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn kf(k: [i64; 3]) -> [f64; 3] {
    [k[0] as f64, k[1] as f64, k[2] as f64]
}

/// `a_{k,1}, a_{k,2}` completing `k̂` to an orthonormal triple; shared by `±k`.
pub fn completion(k: [i64; 3]) -> [[f64; 3]; 2] {
    let kc = kf(canonical(k));
    let e = if kc[1] == 0.0 && kc[2] == 0.0 {
        [0.0, 1.0, 0.0]
    } else {
        [1.0, 0.0, 0.0]
    };
    let c = cross(kc, e);
    let n = norm3(c);
    let a1 = [c[0] / n, c[1] / n, c[2] / n];
    let kn = norm3(kc);
    let kh = [kc[0] / kn, kc[1] / kn, kc[2] / kn];
    let a2 = cross(kh, a1);
    [a1, a2]
}

/// Shell intensity `θ_k = θ 1_{D_N}`.
#[derive(Clone, Debug, Serialize)]
pub struct ThetaProfile {
    pub nu_t: f64,
    pub n: usize,
    /// Canonical representatives of the `±k` pairs of `D_N`.
    pub modes: Vec<[i64; 3]>,
    /// `θ_k²` on the shell.
    pub theta2: f64,
}

impl ThetaProfile {
    pub fn new(nu_t: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("noise shell parameter N must be positive".into()));
        }
        if !(nu_t >= 0.0) {
            return Err(Error::Config(format!("nu_T = {nu_t} must be nonnegative")));
        }
        let hi = 2 * n as i64;
        let (lo2, hi2) = ((n * n) as i64, hi * hi);
        let mut modes = Vec::new();
        for a in -hi..=hi {
            for b in -hi..=hi {
                for c in -hi..=hi {
                    let k = [a, b, c];
                    let r2 = a * a + b * b + c * c;
                    if r2 >= lo2 && r2 <= hi2 && canonical(k) == k {
                        modes.push(k);
                    }
                }
            }
        }
        let count = 2 * modes.len();
        Ok(ThetaProfile {
            nu_t,
            n,
            theta2: 6.0 * nu_t / count as f64,
            modes,
        })
    }

    /// `|D_N|` with `±k` counted.
    pub fn shell_size(&self) -> usize {
        2 * self.modes.len()
    }

    /// Number of noise fields `2 |D_N|`.
    pub fn field_count(&self) -> usize {
        2 * self.shell_size()
    }

    pub fn theta(&self, k: [i64; 3]) -> f64 {
        let r2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        let n = self.n as i64;
        if r2 >= n * n && r2 <= 4 * n * n {
            self.theta2.sqrt()
        } else {
            0.0
        }
    }

    /// `Σ_{k,α} θ_k²` over the `±k`-and-`α`-counted family (`12 ν_T`).
    pub fn l2_norm_sq(&self) -> f64 {
        self.theta2 * self.field_count() as f64
    }
}

/// `σ_{k,α} = θ a_{k,α} cos(k·x)` and `σ_{-k,α} = θ a_{k,α} sin(k·x)`, pairs in
/// the order of `profile.modes`, `α` inner, cosine before sine.
pub fn sigma_fields(profile: &ThetaProfile, grid: Grid) -> Vec<VectorField> {
    let s = grid.period.scale();
    let th = profile.theta2.sqrt();
    let mut out = Vec::with_capacity(profile.field_count());
    for &k in &profile.modes {
        let a = completion(k);
        let kv = kf(k);
        let phase: Vec<f64> = (0..grid.len())
            .map(|p| {
                let x = grid.point(p);
                s * (kv[0] * x[0] + kv[1] * x[1] + kv[2] * x[2])
            })
            .collect();
        for av in a {
            for trig in [f64::cos, f64::sin] {
                let c = [0, 1, 2].map(|i| phase.iter().map(|&ph| th * av[i] * trig(ph)).collect());
                out.push(VectorField::new(grid, c));
            }
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct QuadraticForm {
    /// Pointwise `S(x) = ½ Σ σ⊗σ`.
    #[serde(skip)]
    pub s: SymTensorField,
    /// Largest component-wise `max_x - min_x`.
    pub x_variation: f64,
    /// Spatial mean of `S`.
    pub mean: M3,
    /// `c = tr S / 3`
    pub c: f64,
    /// `‖S - c Id‖_F / c`
    pub anisotropy: f64,
    pub trace: f64,
    /// `3 ν_T`
    pub trace_closed_form: f64,
    /// `|M_xxxx - 3 M_xxyy| / M_xxxx` for `M = mean of k̂⊗k̂⊗k̂⊗k̂` over the shell
    /// (zero for an isotropic fourth moment).
    pub quartic_anisotropy: f64,
}

/// Evaluates `½ Σ σ⊗σ` pointwise on `grid`.
pub fn quadratic_form(profile: &ThetaProfile, grid: Grid) -> QuadraticForm {
    let s = grid.period.scale();
    let mut out = SymTensorField::zeros(grid);
    let pairs = crate::fields::SYM_PAIRS;
    for &k in &profile.modes {
        let a = completion(k);
        let kv = kf(k);
        let mut aa = [0.0; 6];
        for (c, &(i, j)) in pairs.iter().enumerate() {
            aa[c] = 0.5 * profile.theta2 * (a[0][i] * a[0][j] + a[1][i] * a[1][j]);
        }
        for p in 0..grid.len() {
            let x = grid.point(p);
            let (sn, cs) = (s * (kv[0] * x[0] + kv[1] * x[1] + kv[2] * x[2])).sin_cos();
            let w = cs * cs + sn * sn;
            for c in 0..6 {
                out.c[c][p] += aa[c] * w;
            }
        }
    }
    let mut x_variation: f64 = 0.0;
    let mut mean = [[0.0; 3]; 3];
    for (c, &(i, j)) in pairs.iter().enumerate() {
        let lo = out.c[c].iter().copied().fold(f64::INFINITY, f64::min);
        let hi = out.c[c].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        x_variation = x_variation.max(hi - lo);
        let m = out.c[c].iter().sum::<f64>() / grid.len() as f64;
        mean[i][j] = m;
        mean[j][i] = m;
    }
    let trace = mean[0][0] + mean[1][1] + mean[2][2];
    let c = trace / 3.0;
    let mut e2 = 0.0;
    for (i, row) in mean.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let d = v - if i == j { c } else { 0.0 };
            e2 += d * d;
        }
    }
    let (mut m4, mut m22) = (0.0, 0.0);
    for &k in &profile.modes {
        let kv = kf(k);
        let r2 = kv[0] * kv[0] + kv[1] * kv[1] + kv[2] * kv[2];
        m4 += kv[0].powi(4) / (r2 * r2);
        m22 += kv[0] * kv[0] * kv[1] * kv[1] / (r2 * r2);
    }
    QuadraticForm {
        s: out,
        x_variation,
        mean,
        c,
        anisotropy: if c == 0.0 { 0.0 } else { e2.sqrt() / c },
        trace,
        trace_closed_form: 3.0 * profile.nu_t,
        quartic_anisotropy: if m4 == 0.0 { 0.0 } else { (m4 - 3.0 * m22).abs() / m4 },
    }
}

fn projector(p: [f64; 3]) -> M3 {
    let n2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j { 1.0 } else { 0.0 } - if n2 > 0.0 { p[i] * p[j] / n2 } else { 0.0 };
        }
    }
    m
}

fn matmul(a: &M3, b: &M3) -> M3 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|l| a[i][l] * b[l][j]).sum();
        }
    }
    m
}

/// Fourier symbol of `L` at integer wavevector `p`:
/// `L̂(p) = -¼ Σ_{k ∈ D_N/±} θ_k² (|p|² - (k̂·p)²) P_p (P_{p+k} + P_{p-k}) P_p`
/// (the `p ± 2k` contributions of the cosine and sine fields cancel). With
/// `band = Some(r)` intermediate modes with `|p ± k| > r` are dropped
/// (Galerkin truncation).
pub fn corrector_symbol(profile: &ThetaProfile, p: [i64; 3], scale: f64, band: Option<f64>) -> M3 {
    let pv = kf(p).map(|x| x * scale);
    let p2 = pv[0] * pv[0] + pv[1] * pv[1] + pv[2] * pv[2];
    if p2 == 0.0 {
        return [[0.0; 3]; 3];
    }
    let mut acc = [[0.0; 3]; 3];
    for &k in &profile.modes {
        let kv = kf(k).map(|x| x * scale);
        let kn = norm3(kv);
        let kp = (kv[0] * pv[0] + kv[1] * pv[1] + kv[2] * pv[2]) / kn;
        let w = p2 - kp * kp;
        if w == 0.0 {
            continue;
        }
        for sign in [1.0, -1.0] {
            let q = [pv[0] + sign * kv[0], pv[1] + sign * kv[1], pv[2] + sign * kv[2]];
            if let Some(r) = band {
                if norm3(q) > r * scale * (1.0 + 1e-12) {
                    continue;
                }
            }
            let pq = projector(q);
            for i in 0..3 {
                for j in 0..3 {
                    acc[i][j] += w * pq[i][j];
                }
            }
        }
    }
    let pp = projector(pv);
    let mut m = matmul(&pp, &matmul(&acc, &pp));
    for row in m.iter_mut() {
        for v in row.iter_mut() {
            *v *= -0.25 * profile.theta2;
        }
    }
    m
}

fn check_solenoidal(f: &VectorField) -> Result<()> {
    let g = grad_sup(f);
    let d = sup_norm(&div(f));
    if d > 1e-8 * g && d > 1e-12 {
        return Err(Error::NotSolenoidal(d / g));
    }
    Ok(())
}

/// `L f` applied as an exact Fourier multiplier (Nyquist modes set to zero).
pub fn corrector_apply(f: &VectorField, profile: &ThetaProfile) -> Result<VectorField> {
    check_solenoidal(f)?;
    let grid = f.grid;
    let sp = grid.spectral();
    let scale = grid.period.scale();
    let h: Vec<Vec<C64>> = f.c.iter().map(|c| sp.forward(c)).collect();
    let mut out = vec![vec![C64::new(0.0, 0.0); sp.len()]; 3];
    let mut cache: std::collections::HashMap<[i64; 3], M3> = std::collections::HashMap::new();
    for p in 0..sp.len() {
        if sp.is_nyquist(p) {
            continue;
        }
        let b = [h[0][p], h[1][p], h[2][p]];
        if b.iter().all(|z| z.norm() == 0.0) {
            continue;
        }
        let k = sp.kint(p);
        // L̂(-p) = L̂(p): evaluate once per pair
        let key = canonical(k);
        let m = *cache
            .entry(key)
            .or_insert_with(|| corrector_symbol(profile, key, scale, None));
        for i in 0..3 {
            out[i][p] = m[i][0] * b[0] + m[i][1] * b[1] + m[i][2] * b[2];
        }
    }
    Ok(VectorField::from_comps(grid, out.iter().map(|s| sp.inverse(s)).collect()))
}

/// Deterministic battery: `a_{p,α} cos(p·x)` for every pair `0 < |p| ≤ kmax`, `α = 1, 2`.
pub fn low_mode_battery(grid: Grid, kmax: f64) -> Vec<VectorField> {
    let s = grid.period.scale();
    let r = kmax.floor() as i64;
    let mut out = Vec::new();
    for a in -r..=r {
        for b in -r..=r {
            for c in -r..=r {
                let k = [a, b, c];
                let r2 = (a * a + b * b + c * c) as f64;
                if r2 == 0.0 || r2 > kmax * kmax * (1.0 + 1e-12) || canonical(k) != k {
                    continue;
                }
                let kv = kf(k);
                for av in completion(k) {
                    out.push(VectorField::from_fn(grid, |x| {
                        let c = (s * (kv[0] * x[0] + kv[1] * x[1] + kv[2] * x[2])).cos();
                        [av[0] * c, av[1] * c, av[2] * c]
                    }));
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct EddyFit {
    pub nu_t: f64,
    pub n: usize,
    pub kappa_eff: f64,
    /// `(Σ‖Lf - κΔf‖² / Σ‖Lf‖²)^{1/2}`
    pub residual: f64,
    /// `κ_eff / (0.6 ν_T)`; absent for `ν_T = 0`.
    pub ratio: Option<f64>,
    pub fields: usize,
}

/// Least-squares `κ` minimizing `Σ‖Lf - κΔf‖²` over `fields`.
pub fn eddy_viscosity_fit(profile: &ThetaProfile, fields: &[VectorField]) -> Result<EddyFit> {
    let (mut num, mut den, mut ll) = (0.0, 0.0, 0.0);
    let mut pairs = Vec::with_capacity(fields.len());
    for f in fields {
        let lf = corrector_apply(f, profile)?;
        let df = laplacian(f);
        num += lf.inner(&df);
        den += df.inner(&df);
        ll += lf.inner(&lf);
        pairs.push((lf, df));
    }
    if den == 0.0 {
        return Err(Error::Config("eddy-viscosity battery has no nonzero field".into()));
    }
    let kappa = num / den;
    let res2: f64 = pairs
        .iter()
        .map(|(lf, df)| {
            let mut d = lf.clone();
            d.axpy(-kappa, df);
            d.inner(&d)
        })
        .sum();
    Ok(EddyFit {
        nu_t: profile.nu_t,
        n: profile.n,
        kappa_eff: kappa,
        residual: if ll == 0.0 { 0.0 } else { (res2 / ll).sqrt() },
        ratio: if profile.nu_t > 0.0 {
            Some(kappa / (0.6 * profile.nu_t))
        } else {
            None
        },
        fields: fields.len(),
    })
}

/// Parameters of the transport SPDE simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdeConfig {
    pub nu: f64,
    pub dt: f64,
    pub t_end: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Galerkin band `|m| ≤ band`.
    pub band: f64,
    /// Exponent of the `H^{-δ}` norm.
    pub delta: f64,
    /// Record statistics every this many steps.
    pub record_every: usize,
    /// Keep per-path energies in the output.
    pub per_path: bool,
}

impl Default for SdeConfig {
    fn default() -> Self {
        SdeConfig {
            nu: 0.5,
            dt: 0.005,
            t_end: 0.5,
            n_paths: 64,
            seed: 0,
            band: 12.0,
            delta: 0.1,
            record_every: 5,
            per_path: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SdeStats {
    pub times: Vec<f64>,
    /// `E‖ω(t)‖²`
    pub mean_energy: Vec<f64>,
    pub std_energy: Vec<f64>,
    /// `E‖ω(t)‖²_{H^{-δ}}`
    pub mean_hneg: Vec<f64>,
    /// `‖E ω(t)‖²`: energy of the ensemble-mean field.
    pub mean_field_energy: Vec<f64>,
    /// Per path and record time, when requested.
    pub per_path: Option<Vec<Vec<f64>>>,
    /// Largest stable `dt` of the explicit drift.
    pub dt_bound: f64,
    /// Least-squares slope of `log ‖E ω‖²` in time.
    pub mean_field_slope: f64,
    /// `E log ‖ω(t)‖²`
    pub mean_log_energy: Vec<f64>,
    /// Least-squares slope of `E log ‖ω‖²` in time.
    pub mean_log_slope: f64,
    /// Path mean of `‖ω_T‖² - ‖ω_0‖² + 2ν Σ ‖∇ω_n‖² dt - Σ ‖dt A ω_n‖²`, relative to
    /// `‖ω_0‖²`, with `A` the drift. The last sum is the explicit scheme's own
    /// production; the noise produces none, so this vanishes up to sampling error.
    pub energy_identity: f64,
    /// `energy_identity` divided by its standard error.
    pub energy_identity_t: f64,
    /// Path mean of `Σ ‖dt A ω_n‖² / ‖ω_0‖²`.
    pub discretization_drift: f64,
    pub grid_n: usize,
    pub band_modes: usize,
}

/// Galerkin state on the band of an FFT grid.
struct Band {
    /// Flat spectral indices of band modes.
    idx: Vec<usize>,
    /// Wavevectors (scaled) of band modes.
    k: Vec<[f64; 3]>,
    /// Drift symbol `-ν|p|² Id + L̂_band(p)` per band mode.
    drift: Vec<M3>,
    /// Leray projector per band mode.
    proj: Vec<M3>,
}

fn fft_size(min: usize) -> usize {
    (min..)
        .find(|&m| {
            let mut x = m;
            for f in [2, 3, 5] {
                while x % f == 0 {
                    x /= f;
                }
            }
            x == 1 && m % 2 == 0
        })
        .expect("fft size")
}

fn max_eig_sym(m: &M3) -> f64 {
    // Gershgorin bound is enough for a step-size bound
    (0..3)
        .map(|i| (0..3).map(|j| m[i][j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Euler-Maruyama for `dω = (νΔω + L_band ω) dt - Σ Π_band Π(σ·∇ω) dW` on the
/// band `|m| ≤ band`, with `L_band` the corrector of the truncated noise. The
/// band part of `(Σ σ dW)·∇ω` is alias-free on a grid of size `≥ 2 band + 2N + 1`.
pub fn simulate_transport_sde(omega0: &VectorField, profile: &ThetaProfile, cfg: &SdeConfig) -> Result<SdeStats> {
    simulate_transport_sde_parallel(omega0, profile, cfg, 1)
}

/// Paths per reduction chunk; fixed so results do not depend on the worker count.
const PATH_CHUNK: usize = 8;

struct Sim<'a> {
    cfg: &'a SdeConfig,
    n: usize,
    fft: Fft3,
    band: Band,
    w0: Vec<[C64; 3]>,
    noise_modes: Vec<([usize; 2], [[f64; 3]; 2])>,
    th: f64,
    vol: f64,
    e0: f64,
    steps: usize,
    records: Vec<usize>,
    dt_bound: f64,
}

/// Sums over one chunk of paths, in path order.
struct ChunkOut {
    energies: Vec<Vec<f64>>,
    h_sum: Vec<f64>,
    field_sum: Vec<Vec<[C64; 3]>>,
    identity: Vec<f64>,
    disc: Vec<f64>,
}

impl<'a> Sim<'a> {
    fn new(omega0: &VectorField, profile: &ThetaProfile, cfg: &'a SdeConfig) -> Result<Self> {
        check_solenoidal(omega0)?;
        if cfg.n_paths == 0 || cfg.record_every == 0 || !(cfg.dt > 0.0) || !(cfg.t_end > 0.0) {
            return Err(Error::Config("sde needs n_paths, record_every, dt, t_end > 0".into()));
        }
        let g0 = omega0.grid;
        let sp0 = g0.spectral();
        let scale = g0.period.scale();
        let h0: Vec<Vec<C64>> = omega0.c.iter().map(|c| sp0.forward(c)).collect();
        let band2 = cfg.band * cfg.band * (1.0 + 1e-12);
        for p in 0..sp0.len() {
            let k = sp0.kint(p);
            let r2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
            if r2 > band2 && (0..3).any(|c| h0[c][p].norm() > 1e-12) {
                return Err(Error::Config(format!("initial vorticity has modes beyond the band {}", cfg.band)));
            }
        }
        let n = fft_size((2.0 * cfg.band).ceil() as usize + 2 * profile.n + 1);
        let wrap = |k: i64| k.rem_euclid(n as i64) as usize;
        let flat = |k: [i64; 3]| (wrap(k[0]) * n + wrap(k[1])) * n + wrap(k[2]);

        let r = cfg.band.floor() as i64;
        let mut band = Band {
            idx: vec![],
            k: vec![],
            drift: vec![],
            proj: vec![],
        };
        let mut w0 = Vec::new();
        let mut symbol_cache: std::collections::HashMap<[i64; 3], M3> = std::collections::HashMap::new();
        let mut dt_bound = f64::INFINITY;
        let n0 = g0.n as i64;
        for a in -r..=r {
            for b in -r..=r {
                for c in -r..=r {
                    let k = [a, b, c];
                    let r2 = (a * a + b * b + c * c) as f64;
                    if r2 == 0.0 || r2 > band2 {
                        continue;
                    }
                    let key = canonical(k);
                    let l = *symbol_cache
                        .entry(key)
                        .or_insert_with(|| corrector_symbol(profile, key, scale, Some(cfg.band)));
                    let kv = kf(k).map(|x| x * scale);
                    let p2 = kv[0] * kv[0] + kv[1] * kv[1] + kv[2] * kv[2];
                    let mut d = l;
                    for (i, row) in d.iter_mut().enumerate() {
                        row[i] -= cfg.nu * p2;
                    }
                    let rate = max_eig_sym(&d);
                    if rate > 0.0 {
                        dt_bound = dt_bound.min(2.0 / rate);
                    }
                    band.idx.push(flat(k));
                    band.k.push(kv);
                    band.drift.push(d);
                    band.proj.push(projector(kv));
                    let inside = k.iter().all(|&x| x > -n0 / 2 && x < n0 / 2);
                    w0.push(if inside {
                        let p0 = g0.idx(wrap0(k[0], n0), wrap0(k[1], n0), wrap0(k[2], n0));
                        [h0[0][p0], h0[1][p0], h0[2][p0]]
                    } else {
                        [C64::new(0.0, 0.0); 3]
                    });
                }
            }
        }
        if cfg.dt > dt_bound {
            return Err(Error::Config(format!(
                "dt = {} exceeds the explicit stability bound {dt_bound:.4e}",
                cfg.dt
            )));
        }
        let noise_modes = profile
            .modes
            .iter()
            .map(|&k| ([flat(k), flat([-k[0], -k[1], -k[2]])], completion(k)))
            .collect();
        let steps = (cfg.t_end / cfg.dt).round() as usize;
        let mut sim = Sim {
            cfg,
            n,
            fft: Fft3::new(n),
            band,
            w0,
            noise_modes,
            th: profile.theta2.sqrt(),
            vol: g0.volume(),
            e0: 0.0,
            steps,
            records: (0..=steps).filter(|s| s % cfg.record_every == 0).collect(),
            dt_bound,
        };
        sim.e0 = sim.energy(&sim.w0);
        if sim.e0 == 0.0 {
            return Err(Error::Config("initial vorticity vanishes on the band".into()));
        }
        Ok(sim)
    }

    fn weighted(&self, w: &[[C64; 3]], f: impl Fn(f64) -> f64) -> f64 {
        self.vol
            * w.iter()
                .zip(&self.band.k)
                .map(|(x, k)| f(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) * x.iter().map(|z| z.norm_sqr()).sum::<f64>())
                .sum::<f64>()
    }

    fn energy(&self, w: &[[C64; 3]]) -> f64 {
        self.weighted(w, |_| 1.0)
    }

    fn chunk(&self, paths: std::ops::Range<usize>) -> Result<ChunkOut> {
        let nrec = self.records.len();
        let mut out = ChunkOut {
            energies: Vec::new(),
            h_sum: vec![0.0; nrec],
            field_sum: vec![vec![[C64::new(0.0, 0.0); 3]; self.band.idx.len()]; nrec],
            identity: Vec::new(),
            disc: Vec::new(),
        };
        let len = self.n * self.n * self.n;
        let zero = C64::new(0.0, 0.0);
        let mut bufs = [vec![zero; len], vec![zero; len], vec![zero; len], vec![zero; len], vec![zero; len]];
        let mut vbuf = [vec![zero; len], vec![zero; len]];
        for path in paths {
            let (e, ident, disc) = self.path(path, &mut vbuf, &mut bufs, &mut out)?;
            out.energies.push(e);
            out.identity.push(ident);
            out.disc.push(disc);
        }
        Ok(out)
    }

    /// One path; returns its energies at the record times, the energy-identity
    /// sum and the scheme's own production, adding `H^{-δ}` norms and fields to `out`.
    fn path(
        &self,
        path: usize,
        vbuf: &mut [Vec<C64>; 2],
        gbuf: &mut [Vec<C64>; 5],
        out: &mut ChunkOut,
    ) -> Result<(Vec<f64>, f64, f64)> {
        let cfg = self.cfg;
        let (band, n, e0) = (&self.band, self.n, self.e0);
        let len = n * n * n;
        let zero = C64::new(0.0, 0.0);
        let ii = C64::new(0.0, 1.0);
        let sdt = cfg.dt.sqrt();
        let mut rng = seed::rng(cfg.seed, seed::streams::SDE_PATH + path as u64);
        let mut w = self.w0.clone();
        let (mut identity, mut disc) = (0.0, 0.0);
        let mut energies = Vec::with_capacity(self.records.len());
        let mut rec = 0;
        for step in 0..=self.steps {
            if rec < self.records.len() && self.records[rec] == step {
                let e = self.energy(&w);
                if !(e <= 10.0 * e0) {
                    return Err(Error::Unstable {
                        ratio: e / e0,
                        t: step as f64 * cfg.dt,
                    });
                }
                energies.push(e);
                out.h_sum[rec] += self.weighted(&w, |k2| k2.powf(-cfg.delta));
                for (m, x) in out.field_sum[rec].iter_mut().zip(&w) {
                    for c in 0..3 {
                        m[c] += x[c];
                    }
                }
                rec += 1;
            }
            if step == self.steps {
                identity += (self.energy(&w) - e0) / e0;
                break;
            }
            identity += 2.0 * cfg.nu * cfg.dt * self.weighted(&w, |k2| k2) / e0;
            let mut next: Vec<[C64; 3]> = w
                .iter()
                .zip(&band.drift)
                .map(|(x, d)| {
                    let mut y = *x;
                    for i in 0..3 {
                        y[i] += cfg.dt * (d[i][0] * x[0] + d[i][1] * x[1] + d[i][2] * x[2]);
                    }
                    y
                })
                .collect();
            let step_sq: f64 = next
                .iter()
                .zip(&w)
                .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).norm_sqr()).sum::<f64>())
                .sum();
            disc += self.vol * step_sq / e0;
            if self.th > 0.0 {
                // V = Σ σ ΔW, packed as V_x + i V_y and V_z
                for b in vbuf.iter_mut() {
                    b.iter_mut().for_each(|z| *z = zero);
                }
                for (fi, a) in &self.noise_modes {
                    let mut acc = [zero; 3];
                    for av in a {
                        let xc: f64 = rng.sample(StandardNormal);
                        let xs: f64 = rng.sample(StandardNormal);
                        let z = C64::new(xc, -xs) * (0.5 * self.th * sdt);
                        for c in 0..3 {
                            acc[c] += z * av[c];
                        }
                    }
                    let [x, y, z] = acc;
                    vbuf[0][fi[0]] += x + ii * y;
                    vbuf[0][fi[1]] += x.conj() + ii * y.conj();
                    vbuf[1][fi[0]] += z;
                    vbuf[1][fi[1]] += z.conj();
                }
                for b in vbuf.iter_mut() {
                    self.fft.process(b, false);
                }
                // ∂_j ω_i, nine real fields packed in five buffers
                for b in gbuf.iter_mut() {
                    b.iter_mut().for_each(|z| *z = zero);
                }
                for (bi, &fi) in band.idx.iter().enumerate() {
                    let k = band.k[bi];
                    for q in 0..9 {
                        let (i, j) = (q / 3, q % 3);
                        let d = ii * k[j] * w[bi][i];
                        gbuf[q / 2][fi] += if q % 2 == 1 { ii * d } else { d };
                    }
                }
                for b in gbuf.iter_mut() {
                    self.fft.process(b, false);
                }
                // (V·∇)ω_i pointwise, packed as (i=0) + i(i=1) and (i=2);
                // reuses the first two gradient buffers
                for p in 0..len {
                    let v = [vbuf[0][p].re, vbuf[0][p].im, vbuf[1][p].re];
                    let mut gr = [0.0; 9];
                    for q in 0..9 {
                        let z = gbuf[q / 2][p];
                        gr[q] = if q % 2 == 1 { z.im } else { z.re };
                    }
                    let t = [0, 1, 2].map(|i| v[0] * gr[3 * i] + v[1] * gr[3 * i + 1] + v[2] * gr[3 * i + 2]);
                    gbuf[0][p] = C64::new(t[0], t[1]);
                    gbuf[1][p] = C64::new(t[2], 0.0);
                }
                for b in gbuf.iter_mut().take(2) {
                    self.fft.process(b, true);
                }
                let norm = 1.0 / len as f64;
                for (bi, &fi) in band.idx.iter().enumerate() {
                    let z0 = gbuf[0][fi] * norm;
                    let z0m = gbuf[0][flat_neg(fi, n)].conj() * norm;
                    let t = [(z0 + z0m) * 0.5, (z0 - z0m) * C64::new(0.0, -0.5), gbuf[1][fi] * norm];
                    let pr = band.proj[bi];
                    for i in 0..3 {
                        next[bi][i] -= pr[i][0] * t[0] + pr[i][1] * t[1] + pr[i][2] * t[2];
                    }
                }
            }
            w = next;
        }
        Ok((energies, identity, disc))
    }
}

fn wrap0(k: i64, n: i64) -> usize {
    k.rem_euclid(n) as usize
}

/// As `simulate_transport_sde`, with paths spread over `workers` threads. Paths
/// are reduced in fixed chunks of `PATH_CHUNK` and chunks in order, so the
/// statistics do not depend on `workers`.
pub fn simulate_transport_sde_parallel(
    omega0: &VectorField,
    profile: &ThetaProfile,
    cfg: &SdeConfig,
    workers: usize,
) -> Result<SdeStats> {
    let sim = Sim::new(omega0, profile, cfg)?;
    let n_chunks = cfg.n_paths.div_ceil(PATH_CHUNK);
    let range = |c: usize| c * PATH_CHUNK..((c + 1) * PATH_CHUNK).min(cfg.n_paths);
    let workers = workers.clamp(1, n_chunks);
    let chunks: Vec<Result<ChunkOut>> = if workers == 1 {
        (0..n_chunks).map(|c| sim.chunk(range(c))).collect()
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: std::sync::Mutex<Vec<Option<Result<ChunkOut>>>> =
            std::sync::Mutex::new((0..n_chunks).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let c = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if c >= n_chunks {
                        break;
                    }
                    let r = sim.chunk(range(c));
                    slots.lock().expect("worker panicked")[c] = Some(r);
                });
            }
        });
        slots
            .into_inner()
            .expect("worker panicked")
            .into_iter()
            .map(|r| r.expect("chunk not run"))
            .collect()
    };
    let nrec = sim.records.len();
    let np = cfg.n_paths as f64;
    let mut e_paths = Vec::with_capacity(cfg.n_paths);
    let mut identity = Vec::with_capacity(cfg.n_paths);
    let mut disc = Vec::with_capacity(cfg.n_paths);
    let mut h_sum = vec![0.0; nrec];
    let mut mean_field = vec![vec![[C64::new(0.0, 0.0); 3]; sim.band.idx.len()]; nrec];
    for c in chunks {
        let c = c?;
        e_paths.extend(c.energies);
        identity.extend(c.identity);
        disc.extend(c.disc);
        for r in 0..nrec {
            h_sum[r] += c.h_sum[r];
            for (m, x) in mean_field[r].iter_mut().zip(&c.field_sum[r]) {
                for k in 0..3 {
                    m[k] += x[k];
                }
            }
        }
    }
    for w in mean_field.iter_mut().flatten() {
        for z in w.iter_mut() {
            *z /= np;
        }
    }
    let times: Vec<f64> = sim.records.iter().map(|&s| s as f64 * cfg.dt).collect();
    let mean_energy: Vec<f64> = (0..nrec).map(|r| e_paths.iter().map(|e| e[r]).sum::<f64>() / np).collect();
    let std_energy: Vec<f64> = (0..nrec)
        .map(|r| {
            let m = mean_energy[r];
            (e_paths.iter().map(|e| (e[r] - m).powi(2)).sum::<f64>() / np).sqrt()
        })
        .collect();
    let mean_field_energy: Vec<f64> = mean_field.iter().map(|w| sim.energy(w)).collect();
    let mean_field_slope = log_slope(&times, &mean_field_energy);
    let mean_log_energy: Vec<f64> = (0..nrec).map(|r| e_paths.iter().map(|e| e[r].ln()).sum::<f64>() / np).collect();
    let mean_log_slope = linear_slope(&times, &mean_log_energy);
    let identity: Vec<f64> = identity.iter().zip(&disc).map(|(a, b)| a - b).collect();
    let discretization_drift = disc.iter().sum::<f64>() / np;
    let id_mean = identity.iter().sum::<f64>() / np;
    let id_sd = (identity.iter().map(|x| (x - id_mean).powi(2)).sum::<f64>() / (np - 1.0).max(1.0)).sqrt();
    let energy_identity_t = if id_sd > 0.0 { id_mean / (id_sd / np.sqrt()) } else { 0.0 };
    Ok(SdeStats {
        mean_hneg: h_sum.iter().map(|h| h / np).collect(),
        times,
        mean_energy,
        std_energy,
        mean_field_energy,
        per_path: if cfg.per_path { Some(e_paths) } else { None },
        dt_bound: sim.dt_bound,
        mean_field_slope,
        mean_log_slope,
        mean_log_energy,
        energy_identity: id_mean,
        energy_identity_t,
        discretization_drift,
        grid_n: sim.n,
        band_modes: sim.band.idx.len(),
    })
}

fn flat_neg(fi: usize, n: usize) -> usize {
    let (i, j, k) = (fi / (n * n), (fi / n) % n, fi % n);
    let neg = |x: usize| (n - x) % n;
    (neg(i) * n + neg(j)) * n + neg(k)
}

/// Least-squares slope of `log y` against `t` (points with `y > 0`).
pub fn log_slope(t: &[f64], y: &[f64]) -> f64 {
    let (t, y): (Vec<f64>, Vec<f64>) = t.iter().zip(y).filter(|(_, y)| **y > 0.0).map(|(t, y)| (*t, y.ln())).unzip();
    linear_slope(&t, &y)
}

/// Least-squares slope of `y` against `t`.
pub fn linear_slope(t: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = t.iter().copied().zip(y.iter().copied()).collect();
    let n = pts.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    sxy / sxx
}
