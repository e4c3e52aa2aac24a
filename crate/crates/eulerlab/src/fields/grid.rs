use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::spectral::Spectral;
use crate::error::{Error, Result};

/// Side length of the periodic box.
///
/// Everything is computed on `[0, 2π)^3`. With `Unit` the physical coordinate is
/// `x = y / 2π`, so a phase `2π k·x` is the same as `k·y` and derivatives pick up
/// a factor `2π`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    #[default]
    TwoPi,
    Unit,
}

impl Period {
    pub fn length(self) -> f64 {
        match self {
            Period::TwoPi => 2.0 * PI,
            Period::Unit => 1.0,
        }
    }

    /// Factor turning integer wavenumbers into physical ones.
    pub fn scale(self) -> f64 {
        2.0 * PI / self.length()
    }
}

/// Uniform spatial grid with `n` points per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    #[serde(default)]
    pub period: Period,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_period(n, Period::TwoPi)
    }

    pub fn with_period(n: usize, period: Period) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "n = {n}, need a power of two >= 8"
            )));
        }
        Ok(Grid { n, period })
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        self.period.length() / self.n as f64
    }

    pub fn volume(&self) -> f64 {
        self.period.length().powi(3)
    }

    /// Quadrature weight of one grid cell.
    pub fn cell(&self) -> f64 {
        self.volume() / self.len() as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    /// Physical coordinates of flat index `p`.
    #[inline]
    pub fn point(&self, p: usize) -> [f64; 3] {
        let n = self.n;
        let dx = self.dx();
        [
            (p / (n * n)) as f64 * dx,
            ((p / n) % n) as f64 * dx,
            (p % n) as f64 * dx,
        ]
    }

    /// Signed integer wavenumber of index `i` (Nyquist reported as `+n/2`).
    #[inline]
    pub fn wavenumber(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i <= n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Index of a signed wavenumber, if representable.
    pub fn index_of(&self, k: i64) -> Option<usize> {
        let n = self.n as i64;
        if k > -n / 2 && k <= n / 2 {
            Some(k.rem_euclid(n) as usize)
        } else {
            None
        }
    }

    /// Cached transforms for this grid.
    pub fn spectral(&self) -> Arc<Spectral> {
        static CACHE: OnceLock<Mutex<HashMap<Grid, Arc<Spectral>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("spectral cache poisoned");
        guard
            .entry(*self)
            .or_insert_with(|| Arc::new(Spectral::new(*self)))
            .clone()
    }
}

/// Space-time grid: `n_t + 1` uniform slices on `[0, t_end]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub grid: Grid,
    pub t_end: f64,
    pub n_t: usize,
}

impl GridSpec {
    pub fn new(n: usize, t_end: f64, n_t: usize) -> Result<Self> {
        Self::with_period(n, t_end, n_t, Period::TwoPi)
    }

    pub fn with_period(n: usize, t_end: f64, n_t: usize, period: Period) -> Result<Self> {
        let grid = Grid::with_period(n, period)?;
        if n_t < 8 {
            return Err(Error::InvalidGrid(format!("n_t = {n_t}, need >= 8")));
        }
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::InvalidGrid(format!("t_end = {t_end}")));
        }
        Ok(GridSpec { grid, t_end, n_t })
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_t as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_t).map(|j| self.time(j)).collect()
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            grid: Grid {
                n: 32,
                period: Period::TwoPi,
            },
            t_end: 1.0,
            n_t: 64,
        }
    }
}
