use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::grid::Grid;

pub type C64 = Complex64;

/// Unnormalized in-place 3-D FFT on an `m^3` complex array in C order.
pub struct Fft3 {
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft3 {
    pub fn new(m: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft3 {
            m,
            fwd: planner.plan_fft_forward(m),
            inv: planner.plan_fft_inverse(m),
        }
    }

    pub fn process(&self, data: &mut [C64], forward: bool) {
        let m = self.m;
        assert_eq!(data.len(), m * m * m);
        let fft = if forward { &self.fwd } else { &self.inv };
        let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        // last axis is contiguous
        fft.process_with_scratch(data, &mut scratch);
        let mut buf = vec![C64::new(0.0, 0.0); m * m * m];
        // middle axis
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    buf[(i * m + k) * m + j] = data[(i * m + j) * m + k];
                }
            }
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    data[(i * m + j) * m + k] = buf[(i * m + k) * m + j];
                }
            }
        }
        // first axis
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    buf[(j * m + k) * m + i] = data[(i * m + j) * m + k];
                }
            }
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    data[(i * m + j) * m + k] = buf[(j * m + k) * m + i];
                }
            }
        }
    }
}

/// Transforms and wavenumber tables for one grid.
///
/// Spectral coefficients are normalized Fourier coefficients: a field equals
/// `sum_k c_k exp(i k·y)` with `y` the `[0, 2π)` coordinate. Derivatives use
/// `kd`, which vanishes on the Nyquist index; filters use the integer `km`.
pub struct Spectral {
    pub grid: Grid,
    fft: Fft3,
    pad: Fft3,
    m: usize,
    /// Physical derivative wavenumber per axis index (Nyquist -> 0).
    pub kd: Vec<f64>,
    /// Signed integer wavenumber per axis index (Nyquist -> +n/2).
    pub km: Vec<i64>,
}

impl Spectral {
    pub fn new(grid: Grid) -> Self {
        let n = grid.n;
        let m = 3 * n / 2;
        let scale = grid.period.scale();
        let km: Vec<i64> = (0..n).map(|i| grid.wavenumber(i)).collect();
        let kd = km
            .iter()
            .map(|&k| {
                if k == (n / 2) as i64 {
                    0.0
                } else {
                    k as f64 * scale
                }
            })
            .collect();
        Spectral {
            grid,
            fft: Fft3::new(n),
            pad: Fft3::new(m),
            m,
            kd,
            km,
        }
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Derivative wavevector at flat spectral index `p`.
    #[inline]
    pub fn kvec(&self, p: usize) -> [f64; 3] {
        let n = self.grid.n;
        [self.kd[p / (n * n)], self.kd[(p / n) % n], self.kd[p % n]]
    }

    /// Integer wavevector at flat spectral index `p`.
    #[inline]
    pub fn kint(&self, p: usize) -> [i64; 3] {
        let n = self.grid.n;
        [self.km[p / (n * n)], self.km[(p / n) % n], self.km[p % n]]
    }

    /// True when any component sits on the Nyquist index.
    #[inline]
    pub fn is_nyquist(&self, p: usize) -> bool {
        let h = (self.grid.n / 2) as i64;
        let k = self.kint(p);
        k[0] == h || k[1] == h || k[2] == h
    }

    pub fn forward(&self, x: &[f64]) -> Vec<C64> {
        let mut s: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.fft.process(&mut s, true);
        let norm = 1.0 / self.len() as f64;
        for c in s.iter_mut() {
            *c *= norm;
        }
        s
    }

    pub fn inverse(&self, s: &[C64]) -> Vec<f64> {
        let mut buf = s.to_vec();
        self.fft.process(&mut buf, false);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Inverse transform keeping the imaginary part (for real-valuedness checks).
    pub fn inverse_complex(&self, s: &[C64]) -> Vec<C64> {
        let mut buf = s.to_vec();
        self.fft.process(&mut buf, false);
        buf
    }

    /// Applies a spectral multiplier `f(p, c)` and returns grid values.
    pub fn apply<F: Fn(usize, C64) -> C64>(&self, x: &[f64], f: F) -> Vec<f64> {
        let mut s = self.forward(x);
        for (p, c) in s.iter_mut().enumerate() {
            *c = f(p, *c);
        }
        self.inverse(&s)
    }

    /// Spectral derivative along `axis`.
    pub fn deriv(&self, x: &[f64], axis: usize) -> Vec<f64> {
        let s = self.forward(x);
        self.deriv_spec(&s, axis)
    }

    pub fn deriv_spec(&self, s: &[C64], axis: usize) -> Vec<f64> {
        let mut d = s.to_vec();
        for (p, c) in d.iter_mut().enumerate() {
            let k = self.kvec(p)[axis];
            *c *= C64::new(0.0, k);
        }
        self.inverse(&d)
    }

    fn pad_index(&self, k: i64) -> usize {
        k.rem_euclid(self.m as i64) as usize
    }

    /// Scatters base-grid coefficients into a padded-grid spectrum, dropping
    /// Nyquist modes.
    fn scatter(&self, s: &[C64]) -> Vec<C64> {
        let n = self.grid.n;
        let m = self.m;
        let h = (n / 2) as i64;
        let mut big = vec![C64::new(0.0, 0.0); m * m * m];
        for i in 0..n {
            let ki = self.km[i];
            if ki == h {
                continue;
            }
            let bi = self.pad_index(ki);
            for j in 0..n {
                let kj = self.km[j];
                if kj == h {
                    continue;
                }
                let bj = self.pad_index(kj);
                for k in 0..n {
                    let kk = self.km[k];
                    if kk == h {
                        continue;
                    }
                    let bk = self.pad_index(kk);
                    big[(bi * m + bj) * m + bk] = s[(i * n + j) * n + k];
                }
            }
        }
        big
    }

    /// Inverse of `scatter` on the retained modes, with normalization.
    fn gather(&self, big: &[C64]) -> Vec<C64> {
        let n = self.grid.n;
        let m = self.m;
        let h = (n / 2) as i64;
        let norm = 1.0 / (m * m * m) as f64;
        let mut s = vec![C64::new(0.0, 0.0); n * n * n];
        for i in 0..n {
            let ki = self.km[i];
            if ki == h {
                continue;
            }
            let bi = self.pad_index(ki);
            for j in 0..n {
                let kj = self.km[j];
                if kj == h {
                    continue;
                }
                let bj = self.pad_index(kj);
                for k in 0..n {
                    let kk = self.km[k];
                    if kk == h {
                        continue;
                    }
                    let bk = self.pad_index(kk);
                    s[(i * n + j) * n + k] = big[(bi * m + bj) * m + bk] * norm;
                }
            }
        }
        s
    }

    /// Values of the trigonometric interpolant on the 3/2-padded grid.
    /// Nyquist modes are dropped so the padded field stays real.
    pub fn pad_spec(&self, s: &[C64]) -> Vec<f64> {
        let mut big = self.scatter(s);
        self.pad.process(&mut big, false);
        big.into_iter().map(|c| c.re).collect()
    }

    pub fn pad_values(&self, x: &[f64]) -> Vec<f64> {
        self.pad_spec(&self.forward(x))
    }

    /// Pads two real fields with one complex transform each way.
    fn pad_pair(&self, x: &[f64], y: Option<&[f64]>) -> (Vec<f64>, Option<Vec<f64>>) {
        let mut z: Vec<C64> = match y {
            Some(y) => x.iter().zip(y).map(|(&a, &b)| C64::new(a, b)).collect(),
            None => x.iter().map(|&a| C64::new(a, 0.0)).collect(),
        };
        self.fft.process(&mut z, true);
        let norm = 1.0 / self.len() as f64;
        z.iter_mut().for_each(|c| *c *= norm);
        let mut big = self.scatter(&z);
        self.pad.process(&mut big, false);
        let re = big.iter().map(|c| c.re).collect();
        let im = y.map(|_| big.iter().map(|c| c.im).collect());
        (re, im)
    }

    /// Truncates two real padded-grid fields to the base grid.
    fn unpad_pair(&self, a: &[f64], b: Option<&[f64]>) -> (Vec<f64>, Option<Vec<f64>>) {
        let mut big: Vec<C64> = match b {
            Some(b) => a.iter().zip(b).map(|(&x, &y)| C64::new(x, y)).collect(),
            None => a.iter().map(|&x| C64::new(x, 0.0)).collect(),
        };
        self.pad.process(&mut big, true);
        let mut s = self.gather(&big);
        self.fft.process(&mut s, false);
        let re = s.iter().map(|c| c.re).collect();
        let im = b.map(|_| s.iter().map(|c| c.im).collect());
        (re, im)
    }

    /// Spectral coefficients on the base grid of a padded-grid field;
    /// modes outside `|k_i| < n/2` are discarded.
    pub fn unpad_spec(&self, y: &[f64]) -> Vec<C64> {
        let mut big: Vec<C64> = y.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.pad.process(&mut big, true);
        self.gather(&big)
    }

    pub fn unpad(&self, y: &[f64]) -> Vec<f64> {
        self.inverse(&self.unpad_spec(y))
    }

    /// Dealiased pairwise products. Each input is padded once; the output
    /// `r` is `sum_t w_t * a[i_t] * b[j_t]` for every term list in `terms`.
    pub fn products(&self, inputs: &[&[f64]], terms: &[Vec<(f64, usize, usize)>]) -> Vec<Vec<f64>> {
        let mut padded: Vec<Vec<f64>> = Vec::with_capacity(inputs.len());
        for pair in inputs.chunks(2) {
            let (a, b) = self.pad_pair(pair[0], pair.get(1).copied());
            padded.push(a);
            if let Some(b) = b {
                padded.push(b);
            }
        }
        let big = padded.first().map(|v| v.len()).unwrap_or(0);
        let accs: Vec<Vec<f64>> = terms
            .iter()
            .map(|term| {
                let mut acc = vec![0.0; big];
                for &(w, a, b) in term {
                    let (pa, pb) = (&padded[a], &padded[b]);
                    for q in 0..big {
                        acc[q] += w * pa[q] * pb[q];
                    }
                }
                acc
            })
            .collect();
        let mut out = Vec::with_capacity(accs.len());
        for pair in accs.chunks(2) {
            let (a, b) = self.unpad_pair(&pair[0], pair.get(1).map(|v| v.as_slice()));
            out.push(a);
            if let Some(b) = b {
                out.push(b);
            }
        }
        out
    }
}
