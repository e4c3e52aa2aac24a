use super::grid::GridSpec;
use super::ops::{self, Norms};
use super::types::GridField;

/// Number of nodes in the local Lagrange interpolant used for off-grid times.
pub const INTERP_POINTS: usize = 6;

/// Field sampled on `n_t + 1` uniform slices of `[0, t_end]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries<F> {
    pub t_end: f64,
    pub slices: Vec<F>,
}

/// Finite-difference weights for `d/dt` at slice `j` of `len` slices
/// (5-point, 4th order; one-sided near the ends). Returns start index and weights
/// scaled by `1/dt`.
pub fn ddt_stencil(j: usize, len: usize, dt: f64) -> (usize, [f64; 5]) {
    assert!(len >= 5, "need at least 5 slices for the time derivative");
    let c = 1.0 / (12.0 * dt);
    let (start, w) = if j >= 2 && j + 2 < len {
        (j - 2, [1.0, -8.0, 0.0, 8.0, -1.0])
    } else if j == 0 {
        (0, [-25.0, 48.0, -36.0, 16.0, -3.0])
    } else if j == 1 {
        (0, [-3.0, -10.0, 18.0, -6.0, 1.0])
    } else if j + 2 == len {
        (len - 5, [-1.0, 6.0, -18.0, 10.0, 3.0])
    } else {
        (len - 5, [3.0, -16.0, 36.0, -48.0, 25.0])
    };
    (start, w.map(|x| x * c))
}

/// Lagrange weights of the `INTERP_POINTS`-node interpolant at time `s`
/// on nodes `j dt`, `j = 0..len`.
pub fn interp_stencil(s: f64, dt: f64, len: usize) -> (usize, [f64; INTERP_POINTS]) {
    let p = INTERP_POINTS;
    assert!(len >= p);
    let x = s / dt;
    let base = x.floor() as i64 - (p as i64 / 2 - 1);
    let start = base.clamp(0, (len - p) as i64) as usize;
    let mut w = [0.0; INTERP_POINTS];
    // exact node hit
    let r = x.round();
    if (x - r).abs() == 0.0 && r >= 0.0 && (r as usize) < len {
        let j = r as usize;
        if j >= start && j < start + p {
            w[j - start] = 1.0;
            return (start, w);
        }
    }
    for (m, wm) in w.iter_mut().enumerate() {
        let tm = (start + m) as f64;
        let mut l = 1.0;
        for q in 0..p {
            if q != m {
                let tq = (start + q) as f64;
                l *= (x - tq) / (tm - tq);
            }
        }
        *wm = l;
    }
    (start, w)
}

/// Composite Simpson weights on `len` uniform nodes (3/8 rule closes an odd panel count).
pub fn simpson_weights(len: usize, dt: f64) -> Vec<f64> {
    assert!(len >= 4);
    let intervals = len - 1;
    let mut w = vec![0.0; len];
    let simpson_end = if intervals % 2 == 0 { intervals } else { intervals - 3 };
    let mut i = 0;
    while i < simpson_end {
        w[i] += dt / 3.0;
        w[i + 1] += 4.0 * dt / 3.0;
        w[i + 2] += dt / 3.0;
        i += 2;
    }
    if simpson_end < intervals {
        let s = simpson_end;
        w[s] += 3.0 * dt / 8.0;
        w[s + 1] += 9.0 * dt / 8.0;
        w[s + 2] += 9.0 * dt / 8.0;
        w[s + 3] += 3.0 * dt / 8.0;
    }
    w
}

impl<F: GridField> TimeSeries<F> {
    pub fn new(t_end: f64, slices: Vec<F>) -> Self {
        assert!(slices.len() >= 2);
        TimeSeries { t_end, slices }
    }

    pub fn zeros(spec: &GridSpec) -> Self {
        TimeSeries {
            t_end: spec.t_end,
            slices: vec![F::zeros(spec.grid); spec.n_t + 1],
        }
    }

    pub fn from_fn<G: Fn(f64) -> F>(spec: &GridSpec, f: G) -> Self {
        TimeSeries {
            t_end: spec.t_end,
            slices: spec.times().into_iter().map(f).collect(),
        }
    }

    pub fn n_t(&self) -> usize {
        self.slices.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_t() as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt()
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            grid: self.slices[0].grid(),
            t_end: self.t_end,
            n_t: self.n_t(),
        }
    }

    /// 4th-order finite-difference time derivative at slice `j`.
    pub fn ddt(&self, j: usize) -> F {
        let (start, w) = ddt_stencil(j, self.slices.len(), self.dt());
        let mut out = F::zeros(self.slices[0].grid());
        for (m, wm) in w.iter().enumerate() {
            if *wm != 0.0 {
                out.axpy(*wm, &self.slices[start + m]);
            }
        }
        out
    }

    /// Local Lagrange interpolation at an arbitrary time in `[0, t_end]`.
    pub fn at(&self, s: f64) -> F {
        let (start, w) = interp_stencil(s, self.dt(), self.slices.len());
        let mut out = F::zeros(self.slices[0].grid());
        for (m, wm) in w.iter().enumerate() {
            if *wm != 0.0 {
                out.axpy(*wm, &self.slices[start + m]);
            }
        }
        out
    }

    pub fn map<G: GridField, M: Fn(&F) -> G>(&self, f: M) -> TimeSeries<G> {
        TimeSeries {
            t_end: self.t_end,
            slices: self.slices.iter().map(f).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|f| f.scaled(s))
    }

    pub fn axpy(&mut self, s: f64, other: &Self) {
        for (a, b) in self.slices.iter_mut().zip(&other.slices) {
            a.axpy(s, b);
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Sup over slices of the spatial sup norm.
    pub fn sup(&self) -> f64 {
        self.slices.iter().map(ops::sup_norm).fold(0.0, f64::max)
    }

    /// Space-time `L^2` inner product (Simpson in time).
    pub fn inner(&self, other: &Self) -> f64 {
        let w = simpson_weights(self.slices.len(), self.dt());
        self.slices
            .iter()
            .zip(&other.slices)
            .zip(&w)
            .map(|((a, b), wj)| wj * a.inner(b))
            .sum()
    }

    pub fn l2(&self) -> f64 {
        self.inner(self).max(0.0).sqrt()
    }

    /// Sup norm, spatial `C^1` norm (both sup over slices) and space-time `L^2` norm.
    pub fn norms(&self) -> Norms {
        let mut sup: f64 = 0.0;
        let mut c1: f64 = 0.0;
        for s in &self.slices {
            let n = ops::norms(s);
            sup = sup.max(n.sup);
            c1 = c1.max(n.c1);
        }
        Norms {
            sup,
            c1,
            l2: self.l2(),
        }
    }
}
