//! Back-to-label flow maps `∂_t Φ + v·∇Φ = 0, Φ(t₀, x) = x` by backward
//! characteristics, and transported matrices realized as pullbacks.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{
    div, ops::grad_sup, sup_norm, Grid, GridField, SymTensorField, TimeSeries, VectorField, C64,
};

/// Largest number of spectral modes evaluated by direct summation.
pub const MAX_DIRECT_MODES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowOptions {
    pub cfl: f64,
    pub max_substeps: usize,
    /// Upper bound on the sub-step, on top of the series step and CFL bound.
    pub max_ds: Option<f64>,
    /// Divergence tolerance relative to the gradient sup norm.
    pub div_tol: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            cfl: 0.5,
            max_substeps: 100_000,
            max_ds: None,
            div_tol: 1e-8,
        }
    }
}

/// Point evaluation of a multi-component periodic grid field.
#[derive(Clone, Debug)]
pub enum Sampler {
    /// `sum_m Re(c_m exp(i k_m·x))` per component.
    Modes {
        k: Vec<[f64; 3]>,
        c: Vec<Vec<C64>>,
    },
    /// Tricubic Lagrange interpolation on interleaved values.
    Grid {
        grid: Grid,
        nc: usize,
        vals: Vec<f64>,
    },
}

impl Sampler {
    pub fn new(grid: Grid, comps: &[Vec<f64>]) -> Self {
        let sp = grid.spectral();
        let specs: Vec<Vec<C64>> = comps.iter().map(|c| sp.forward(c)).collect();
        let scale: f64 = specs
            .iter()
            .flat_map(|s| s.iter().map(|z| z.norm()))
            .fold(0.0, f64::max);
        let tol = 1e-14 * scale;
        let active: Vec<usize> = (0..sp.len())
            .filter(|&p| specs.iter().any(|s| s[p].norm() > tol))
            .collect();
        if active.len() <= MAX_DIRECT_MODES {
            let ks = grid.period.scale();
            let k = active
                .iter()
                .map(|&p| {
                    let m = sp.kint(p);
                    // Nyquist modes are read as the cosine-symmetric pair.
                    [m[0] as f64 * ks, m[1] as f64 * ks, m[2] as f64 * ks]
                })
                .collect();
            let c = specs
                .iter()
                .map(|s| active.iter().map(|&p| s[p]).collect())
                .collect();
            if active.iter().all(|&p| !sp.is_nyquist(p)) {
                return Sampler::Modes { k, c };
            }
        }
        let nc = comps.len();
        let mut vals = vec![0.0; grid.len() * nc];
        for (ci, comp) in comps.iter().enumerate() {
            for (p, v) in comp.iter().enumerate() {
                vals[p * nc + ci] = *v;
            }
        }
        Sampler::Grid { grid, nc, vals }
    }

    pub fn ncomp(&self) -> usize {
        match self {
            Sampler::Modes { c, .. } => c.len(),
            Sampler::Grid { nc, .. } => *nc,
        }
    }

    /// Writes the components at `x` into `out`.
    pub fn eval(&self, x: [f64; 3], out: &mut [f64]) {
        match self {
            Sampler::Modes { k, c } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (m, km) in k.iter().enumerate() {
                    let e = C64::from_polar(1.0, km[0] * x[0] + km[1] * x[1] + km[2] * x[2]);
                    for (o, cc) in out.iter_mut().zip(c) {
                        *o += (cc[m] * e).re;
                    }
                }
            }
            Sampler::Grid { grid, nc, vals } => tricubic(*grid, *nc, vals, x, out),
        }
    }
}

#[inline]
fn lagrange4(f: f64) -> [f64; 4] {
    [
        -f * (f - 1.0) * (f - 2.0) / 6.0,
        (f + 1.0) * (f - 1.0) * (f - 2.0) / 2.0,
        -(f + 1.0) * f * (f - 2.0) / 2.0,
        (f + 1.0) * f * (f - 1.0) / 6.0,
    ]
}

fn tricubic(grid: Grid, nc: usize, vals: &[f64], x: [f64; 3], out: &mut [f64]) {
    let n = grid.n;
    let dx = grid.dx();
    let mut idx = [[0usize; 4]; 3];
    let mut w = [[0.0; 4]; 3];
    for a in 0..3 {
        let u = x[a] / dx;
        let i = u.floor();
        w[a] = lagrange4(u - i);
        let i = i as i64;
        for (m, slot) in idx[a].iter_mut().enumerate() {
            *slot = (i - 1 + m as i64).rem_euclid(n as i64) as usize;
        }
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    for (a, wa) in w[0].iter().enumerate() {
        for (b, wb) in w[1].iter().enumerate() {
            let wab = wa * wb;
            let row = (idx[0][a] * n + idx[1][b]) * n;
            for (c, wc) in w[2].iter().enumerate() {
                let base = (row + idx[2][c]) * nc;
                let ww = wab * wc;
                for (o, v) in out.iter_mut().zip(&vals[base..base + nc]) {
                    *o += ww * v;
                }
            }
        }
    }
}

/// Flow map stored as the periodic deviation `Φ(t, x) - x` per output time.
#[derive(Clone, Debug)]
pub struct FlowMap {
    pub t0: f64,
    pub times: Vec<f64>,
    pub deviation: Vec<VectorField>,
    /// Sub-steps used per output time.
    pub substeps: Vec<usize>,
}

impl FlowMap {
    pub fn identity(grid: Grid, t0: f64, times: &[f64]) -> Self {
        FlowMap {
            t0,
            times: times.to_vec(),
            deviation: vec![VectorField::zeros(grid); times.len()],
            substeps: vec![0; times.len()],
        }
    }

    pub fn grid(&self) -> Grid {
        self.deviation[0].grid
    }

    pub fn is_identity(&self) -> bool {
        self.deviation.iter().all(|d| d.max_abs() == 0.0)
    }

    /// `Φ` at output `i`, grid point `p`.
    pub fn point(&self, i: usize, p: usize) -> [f64; 3] {
        let x = self.grid().point(p);
        let d = self.deviation[i].at(p);
        [x[0] + d[0], x[1] + d[1], x[2] + d[2]]
    }

    /// `DΦ[a][b] = δ_ab + ∂_b d_a` at output `i`.
    pub fn jacobian(&self, i: usize) -> [[Vec<f64>; 3]; 3] {
        let g = crate::fields::gradients(&self.deviation[i]);
        let mut out: [[Vec<f64>; 3]; 3] = Default::default();
        for (a, row) in g.into_iter().enumerate() {
            for (b, mut d) in row.into_iter().enumerate() {
                if a == b {
                    d.iter_mut().for_each(|x| *x += 1.0);
                }
                out[a][b] = d;
            }
        }
        out
    }

    /// Largest `|det DΦ - 1|` over outputs and grid points.
    pub fn det_defect(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.times.len() {
            let j = self.jacobian(i);
            for p in 0..self.grid().len() {
                let a = |r: usize, c: usize| j[r][c][p];
                let det = a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1))
                    - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
                    + a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
                m = m.max((det - 1.0).abs());
            }
        }
        m
    }
}

struct VelocityCache<'a> {
    v: &'a TimeSeries<VectorField>,
    memo: HashMap<i64, Arc<Sampler>>,
}

impl<'a> VelocityCache<'a> {
    fn get(&mut self, s: f64) -> Arc<Sampler> {
        let key = (s * (1u64 << 40) as f64).round() as i64;
        if self.memo.len() > 512 {
            self.memo.clear();
        }
        let v = self.v;
        self.memo
            .entry(key)
            .or_insert_with(|| {
                let f = v.at(s.clamp(0.0, v.t_end));
                Arc::new(Sampler::new(f.grid, &f.c))
            })
            .clone()
    }
}

fn check_solenoidal(v: &TimeSeries<VectorField>, tol: f64) -> Result<()> {
    for s in &v.slices {
        let d = sup_norm(&div(s));
        if d > tol * grad_sup(s) {
            return Err(Error::NotSolenoidal(d));
        }
    }
    Ok(())
}

/// Sub-step count for integrating over `span` with the given bound.
fn substeps(span: f64, ds: f64, cap: usize) -> Result<usize> {
    if span == 0.0 {
        return Ok(0);
    }
    let m = (span.abs() / ds - 1e-9).ceil().max(1.0);
    if m > cap as f64 {
        return Err(Error::CflFailure {
            needed: m as usize,
            cap,
        });
    }
    Ok(m as usize)
}

/// Sub-step bound `min(dt, cfl dx / ‖v‖_C⁰, max_ds)` used by `flow_map_at`.
pub fn base_step(v: &TimeSeries<VectorField>, opts: &FlowOptions) -> f64 {
    let vmax = v.sup();
    let mut ds = v.dt();
    if vmax > 0.0 {
        ds = ds.min(opts.cfl * v.slices[0].grid.dx() / vmax);
    }
    if let Some(m) = opts.max_ds {
        ds = ds.min(m);
    }
    ds
}

/// Flow map anchored at `t0` evaluated at the given times.
pub fn flow_map_at(
    v: &TimeSeries<VectorField>,
    t0: f64,
    times: &[f64],
    opts: &FlowOptions,
) -> Result<FlowMap> {
    let grid = v.slices[0].grid;
    let vmax = v.sup();
    if vmax == 0.0 {
        return Ok(FlowMap::identity(grid, t0, times));
    }
    check_solenoidal(v, opts.div_tol)?;
    let ds = base_step(v, opts);
    let mut cache = VelocityCache {
        v,
        memo: HashMap::new(),
    };
    let mut deviation = Vec::with_capacity(times.len());
    let mut counts = Vec::with_capacity(times.len());
    let mut buf = [[0.0; 3]; 4];
    for &t in times {
        let m = substeps(t0 - t, ds, opts.max_substeps)?;
        counts.push(m);
        let mut dev = VectorField::zeros(grid);
        if m == 0 {
            deviation.push(dev);
            continue;
        }
        let h = (t0 - t) / m as f64;
        // Stage samplers are shared by every grid node.
        let stages: Vec<[Arc<Sampler>; 3]> = (0..m)
            .map(|i| {
                let s = t + i as f64 * h;
                [cache.get(s), cache.get(s + 0.5 * h), cache.get(s + h)]
            })
            .collect();
        for p in 0..grid.len() {
            let x0 = grid.point(p);
            let mut x = x0;
            for st in &stages {
                st[0].eval(x, &mut buf[0]);
                let x1 = axpy3(x, 0.5 * h, buf[0]);
                st[1].eval(x1, &mut buf[1]);
                let x2 = axpy3(x, 0.5 * h, buf[1]);
                st[1].eval(x2, &mut buf[2]);
                let x3 = axpy3(x, h, buf[2]);
                st[2].eval(x3, &mut buf[3]);
                for a in 0..3 {
                    x[a] += h / 6.0 * (buf[0][a] + 2.0 * buf[1][a] + 2.0 * buf[2][a] + buf[3][a]);
                }
            }
            for a in 0..3 {
                dev.c[a][p] = x[a] - x0[a];
            }
        }
        deviation.push(dev);
    }
    Ok(FlowMap {
        t0,
        times: times.to_vec(),
        deviation,
        substeps: counts,
    })
}

#[inline]
fn axpy3(x: [f64; 3], s: f64, y: [f64; 3]) -> [f64; 3] {
    [x[0] + s * y[0], x[1] + s * y[1], x[2] + s * y[2]]
}

/// Flow map anchored at `t0 = l/mu` on every slice of `v`.
pub fn flow_map(v: &TimeSeries<VectorField>, l: i64, mu: f64, opts: &FlowOptions) -> Result<FlowMap> {
    let t0 = l as f64 / mu;
    if !(0.0..=v.t_end * (1.0 + 1e-12)).contains(&t0) {
        return Err(Error::Config(format!("anchor time {t0} outside [0, {}]", v.t_end)));
    }
    let times: Vec<f64> = (0..v.slices.len()).map(|j| v.time(j)).collect();
    flow_map_at(v, t0, &times, opts)
}

/// `sup |∂_t Φ + v·∇Φ|` over the outputs of a slice-aligned flow map, with the
/// 4th-order time difference of the deviation.
pub fn flow_residual(fm: &FlowMap, v: &TimeSeries<VectorField>) -> f64 {
    let dev = TimeSeries::new(v.t_end, fm.deviation.clone());
    let mut worst: f64 = 0.0;
    for j in 0..dev.slices.len() {
        let dt = dev.ddt(j);
        // ∂_t d + v + (v·∇) d
        let mut r = dt.add(&v.slices[j]);
        r.axpy(1.0, &crate::fields::advect(&v.slices[j], &dev.slices[j]));
        worst = worst.max(sup_norm(&r));
    }
    worst
}

/// `datum(Φ(t, x))` for every output of the flow map.
pub fn pullback<F: GridField>(datum: &F, fm: &FlowMap) -> Vec<F> {
    let grid = datum.grid();
    if fm.is_identity() {
        return vec![datum.clone(); fm.times.len()];
    }
    let sampler = Sampler::new(grid, datum.comps());
    let nc = sampler.ncomp();
    let mut val = vec![0.0; nc];
    (0..fm.times.len())
        .map(|i| {
            if fm.substeps[i] == 0 {
                return datum.clone();
            }
            let mut comps = vec![vec![0.0; grid.len()]; nc];
            for p in 0..grid.len() {
                sampler.eval(fm.point(i, p), &mut val);
                for (c, v) in comps.iter_mut().zip(&val) {
                    c[p] = *v;
                }
            }
            F::from_comps(grid, comps)
        })
        .collect()
}

/// `R^l(t) = datum(Φ^l(t, ·))` with datum `2 r0⁻¹ ‖R(t₀)‖_C⁰ Id - R(t₀)`.
pub fn transported_reynolds(
    v: &TimeSeries<VectorField>,
    r: &TimeSeries<SymTensorField>,
    l: i64,
    mu: f64,
    r0: f64,
    opts: &FlowOptions,
) -> Result<TimeSeries<SymTensorField>> {
    let fm = flow_map(v, l, mu, opts)?;
    let rt0 = r.at(fm.t0);
    let datum = transport_datum(&rt0, r0);
    Ok(TimeSeries::new(r.t_end, pullback(&datum, &fm)))
}

pub fn transport_datum(rt0: &SymTensorField, r0: f64) -> SymTensorField {
    let s = 2.0 * sup_norm(rt0) / r0;
    let mut d = rt0.scaled(-1.0);
    for c in 0..3 {
        d.c[c].iter_mut().for_each(|x| *x += s);
    }
    d.trace_free = false;
    d
}
