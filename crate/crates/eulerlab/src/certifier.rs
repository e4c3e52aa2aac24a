//! Weak-form residual of a candidate `(u, R)`:
//! `∫₀ᵀ∫ u·∂_tφ + (u⊗u - R):∇φ + ν u·Δφ dx dt` over solenoidal test fields
//! with `φ(T) = 0`. No initial-datum term is added, so candidates must start
//! from `u(0) = 0`. A finite battery of test fields stands in for "all φ".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{
    div, gradients, laplacian, ops::l2_norm, self_outer, sup_norm,
    GridField, SymTensorField, TensorSeries, TimeSeries, VectorField, VectorSeries,
};
use crate::fields::timeseries::simpson_weights;
use crate::seed;

/// Battery parameters; field `i` is drawn from `seed::derive(seed, TEST_FIELDS + i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatterySpec {
    pub count: usize,
    pub kmax: f64,
    /// Exponent of the window `(1 - t/T)^m`, at least 2.
    pub window: u32,
    /// Spectral amplitudes of `ψ` scale like `|k|^(-slope)`.
    pub slope: f64,
    pub seed: u64,
}

impl Default for BatterySpec {
    fn default() -> Self {
        BatterySpec {
            count: 20,
            kmax: 4.0,
            window: 2,
            slope: 2.0,
            seed: 0,
        }
    }
}

/// Gaussian solenoidal field on `0 < |k| <= kmax` with amplitudes `|k|^(-slope)`,
/// scaled to unit sup norm.
pub fn smooth_solenoidal<R: rand::Rng>(grid: crate::fields::Grid, kmax: f64, slope: f64, rng: &mut R) -> VectorField {
    use rand_distr::StandardNormal;
    let sp = grid.spectral();
    let comps: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            let mut h = vec![crate::fields::C64::new(0.0, 0.0); sp.len()];
            for (p, c) in h.iter_mut().enumerate() {
                let k = sp.kint(p);
                let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
                if k2 == 0.0 || k2 > kmax * kmax * (1.0 + 1e-12) || sp.is_nyquist(p) {
                    continue;
                }
                let a = k2.powf(-0.5 * slope);
                *c = crate::fields::C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * a;
            }
            sp.inverse(&h)
        })
        .collect();
    let v = crate::fields::leray_project(&VectorField::from_comps(grid, comps));
    let s = sup_norm(&v);
    if s > 0.0 {
        v.scaled(1.0 / s)
    } else {
        v
    }
}

/// `φ(t,x) = (1 - t/T)^m ψ(x)` with `ψ` solenoidal, mean zero, band-limited.
#[derive(Clone, Debug)]
pub struct TestField {
    pub psi: VectorField,
    pub window: u32,
    pub t_end: f64,
    pub kmax: f64,
    /// Derived seed of the field (0 for hand-built fields).
    pub seed: u64,
}

impl TestField {
    pub fn new(psi: VectorField, window: u32, t_end: f64) -> Result<Self> {
        if window < 2 {
            return Err(Error::Config(format!("test window exponent {window} < 2")));
        }
        let rel = sup_norm(&div(&psi)) / (1.0 + crate::fields::grad_sup(&psi));
        if rel > 1e-10 {
            return Err(Error::NotSolenoidal(rel));
        }
        Ok(TestField {
            psi,
            window,
            t_end,
            kmax: f64::INFINITY,
            seed: 0,
        })
    }

    pub fn battery(grid: crate::fields::Grid, t_end: f64, spec: &BatterySpec) -> Result<Vec<Self>> {
        if spec.window < 2 {
            return Err(Error::Config(format!("test window exponent {} < 2", spec.window)));
        }
        (0..spec.count)
            .map(|i| {
                let stream = seed::streams::TEST_FIELDS + i as u64;
                let mut rng = seed::rng(spec.seed, stream);
                let psi = smooth_solenoidal(grid, spec.kmax, spec.slope, &mut rng);
                Ok(TestField {
                    psi,
                    window: spec.window,
                    t_end,
                    kmax: spec.kmax,
                    seed: seed::derive(spec.seed, stream),
                })
            })
            .collect()
    }

    /// `(1 - t/T)^m`
    pub fn window_at(&self, t: f64) -> f64 {
        (1.0 - t / self.t_end).powi(self.window as i32)
    }

    /// `d/dt (1 - t/T)^m`
    pub fn window_rate(&self, t: f64) -> f64 {
        let m = self.window as i32;
        -(m as f64) / self.t_end * (1.0 - t / self.t_end).powi(m - 1)
    }

    pub fn at(&self, t: f64) -> VectorField {
        self.psi.scaled(self.window_at(t))
    }

    /// `sup|φ| + sup|∇φ| + sup|∂_tφ|` over `[0,T] × T³`.
    pub fn c1_norm(&self) -> f64 {
        let s = sup_norm(&self.psi);
        s * (1.0 + self.window as f64 / self.t_end) + crate::fields::grad_sup(&self.psi)
    }
}

/// Per-slice data shared by every test field.
struct Prepared {
    quad: Vec<f64>,
    times: Vec<f64>,
    u: Vec<VectorField>,
    /// `u⊗u - R` (dealiased)
    flux: Vec<SymTensorField>,
    scale: f64,
}

fn prepare(u: &VectorSeries, r: &TensorSeries) -> Result<Prepared> {
    let grid = u.slices[0].grid;
    if r.slices.len() != u.slices.len() || r.slices[0].grid != grid || (r.t_end - u.t_end).abs() > 1e-12 {
        return Err(Error::GridMismatch);
    }
    for s in &u.slices {
        let g = crate::fields::grad_sup(s);
        let d = sup_norm(&div(s));
        if d > 1e-8 * g.max(1e-300) && d > 1e-12 {
            return Err(Error::NotSolenoidal(d / g.max(1e-300)));
        }
        let m = s.mean();
        let mm = m.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if mm > 1e-10 * (1.0 + sup_norm(s)) {
            return Err(Error::NonZeroMean(mm));
        }
    }
    let n = u.slices.len();
    let flux = (0..n)
        .map(|j| self_outer(&u.slices[j]).sub(&r.slices[j]))
        .collect();
    let ul2 = u.l2();
    let scale = ul2 * ul2 + ul2 + r.l2();
    Ok(Prepared {
        quad: simpson_weights(n, u.dt()),
        times: (0..n).map(|j| u.time(j)).collect(),
        u: u.slices.clone(),
        flux,
        scale,
    })
}

/// `sym ∇ψ`
fn sym_grad(psi: &VectorField) -> SymTensorField {
    let g = gradients(psi);
    let mut e = SymTensorField::zeros(psi.grid);
    for (s, &(i, j)) in crate::fields::types::SYM_PAIRS.iter().enumerate() {
        for p in 0..psi.grid.len() {
            e.c[s][p] = 0.5 * (g[i][j][p] + g[j][i][p]);
        }
    }
    e
}

/// Which terms of the weak form are kept.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeakMode {
    /// The full space-time identity.
    #[default]
    Full,
    /// Spatial terms only: the steady identity `∫(u⊗u - R):∇ψ + ν u·Δψ = 0`
    /// for time-independent candidates outside the `u(0) = 0` scope.
    Spatial,
}

#[derive(Clone, Debug, Serialize)]
pub struct WeakResidual {
    pub raw: f64,
    /// `raw / (‖φ‖_C¹ (‖u‖² + ‖u‖ + ‖R‖))`, norms of `u`, `R` in `L²([0,T]×T³)`.
    pub normalized: f64,
}

fn evaluate(prep: &Prepared, nu: f64, phi: &TestField, mode: WeakMode) -> WeakResidual {
    let e = sym_grad(&phi.psi);
    let lap = if nu != 0.0 { Some(laplacian(&phi.psi)) } else { None };
    let mut raw = 0.0;
    for j in 0..prep.times.len() {
        let t = prep.times[j];
        let uj = &prep.u[j];
        let mut slice = match mode {
            WeakMode::Full => phi.window_at(t) * prep.flux[j].inner(&e),
            WeakMode::Spatial => prep.flux[j].inner(&e),
        };
        if mode == WeakMode::Full {
            slice += phi.window_rate(t) * uj.inner(&phi.psi);
        }
        if let Some(l) = &lap {
            let f = if mode == WeakMode::Full { phi.window_at(t) } else { 1.0 };
            slice += nu * f * uj.inner(l);
        }
        raw += prep.quad[j] * slice;
    }
    let denom = phi.c1_norm() * prep.scale;
    WeakResidual {
        raw,
        normalized: if denom == 0.0 { raw.abs() } else { raw.abs() / denom },
    }
}

/// Weak residual for one test field.
pub fn weak_residual(u: &VectorSeries, r: &TensorSeries, nu: f64, phi: &TestField) -> Result<WeakResidual> {
    weak_residual_mode(u, r, nu, phi, WeakMode::Full)
}

pub fn weak_residual_mode(
    u: &VectorSeries,
    r: &TensorSeries,
    nu: f64,
    phi: &TestField,
    mode: WeakMode,
) -> Result<WeakResidual> {
    if phi.psi.grid != u.slices[0].grid {
        return Err(Error::GridMismatch);
    }
    let prep = prepare(u, r)?;
    Ok(evaluate(&prep, nu, phi, mode))
}

#[derive(Clone, Debug, Serialize)]
pub struct CertifyReport {
    pub battery: BatterySpec,
    pub mode: WeakMode,
    pub nu: f64,
    pub residuals: Vec<f64>,
    pub raw: Vec<f64>,
    pub max: f64,
    pub mean: f64,
    pub threshold: f64,
    pub pass: bool,
    pub note: String,
}

/// Evaluates the battery; passes when the largest normalized residual is at most `threshold`.
pub fn certify(
    u: &VectorSeries,
    r: &TensorSeries,
    nu: f64,
    battery: &BatterySpec,
    threshold: f64,
    mode: WeakMode,
) -> Result<CertifyReport> {
    let prep = prepare(u, r)?;
    let fields = TestField::battery(u.slices[0].grid, u.t_end, battery)?;
    let res: Vec<WeakResidual> = fields.iter().map(|f| evaluate(&prep, nu, f, mode)).collect();
    let residuals: Vec<f64> = res.iter().map(|x| x.normalized).collect();
    let max = residuals.iter().copied().fold(0.0, f64::max);
    let mean = if residuals.is_empty() {
        0.0
    } else {
        residuals.iter().sum::<f64>() / residuals.len() as f64
    };
    Ok(CertifyReport {
        battery: battery.clone(),
        mode,
        nu,
        raw: res.iter().map(|x| x.raw).collect(),
        residuals,
        max,
        mean,
        threshold,
        pass: max <= threshold,
        note: format!(
            "finite battery of {} solenoidal test fields with |k| <= {}; the weak formulation quantifies over all test fields",
            battery.count, battery.kmax
        ),
    })
}

/// Zero stress series matching `u`.
pub fn zero_stress(u: &VectorSeries) -> TensorSeries {
    TimeSeries::zeros(&u.spec())
}

/// Multiplies the Fourier coefficients of `u` at `±k` by `factor` on every slice.
pub fn corrupt_mode(u: &VectorSeries, k: [i64; 3], factor: f64) -> VectorSeries {
    let grid = u.slices[0].grid;
    let sp = grid.spectral();
    let km = [-k[0], -k[1], -k[2]];
    u.map(|s| {
        s.map_comps(|c| {
            sp.apply(c, |p, z| {
                let kk = sp.kint(p);
                if kk == k || kk == km {
                    z * factor
                } else {
                    z
                }
            })
        })
    })
}

/// Mode with the largest time-summed amplitude among `0 < |k| <= kmax`.
pub fn dominant_mode(u: &VectorSeries, kmax: f64) -> Option<[i64; 3]> {
    let grid = u.slices[0].grid;
    let sp = grid.spectral();
    let mut energy = vec![0.0; sp.len()];
    for s in &u.slices {
        for c in &s.c {
            for (e, z) in energy.iter_mut().zip(sp.forward(c)) {
                *e += z.norm_sqr();
            }
        }
    }
    let mut best: Option<([i64; 3], f64)> = None;
    for (p, e) in energy.iter().enumerate() {
        let k = sp.kint(p);
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        if k2 == 0.0 || k2 > kmax * kmax * (1.0 + 1e-12) || sp.is_nyquist(p) {
            continue;
        }
        if best.map_or(true, |(_, b)| *e > b) {
            best = Some((k, *e));
        }
    }
    best.filter(|(_, e)| *e > 0.0).map(|(k, _)| k)
}

/// Sup over slices of the `L²` norm, used in reports.
pub fn series_l2_sup(u: &VectorSeries) -> f64 {
    u.slices.iter().map(l2_norm).fold(0.0, f64::max)
}
