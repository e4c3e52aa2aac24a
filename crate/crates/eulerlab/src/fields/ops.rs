use super::spectral::C64;
use super::types::{GridField, ScalarField, SymTensorField, VectorField, SYM_PAIRS};
use crate::error::{Error, Result};

fn check_same(a: super::grid::Grid, b: super::grid::Grid) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

pub fn grad(s: &ScalarField) -> VectorField {
    let sp = s.grid.spectral();
    let hat = sp.forward(&s.data);
    VectorField::new(
        s.grid,
        [
            sp.deriv_spec(&hat, 0),
            sp.deriv_spec(&hat, 1),
            sp.deriv_spec(&hat, 2),
        ],
    )
}

pub fn div(v: &VectorField) -> ScalarField {
    let sp = v.grid.spectral();
    let mut acc = vec![C64::new(0.0, 0.0); sp.len()];
    for a in 0..3 {
        let hat = sp.forward(&v.c[a]);
        for (p, c) in acc.iter_mut().enumerate() {
            *c += C64::new(0.0, sp.kvec(p)[a]) * hat[p];
        }
    }
    ScalarField::new(v.grid, sp.inverse(&acc))
}

pub fn curl(v: &VectorField) -> VectorField {
    let sp = v.grid.spectral();
    let h: Vec<Vec<C64>> = v.c.iter().map(|c| sp.forward(c)).collect();
    let mut out: [Vec<C64>; 3] = Default::default();
    for (a, o) in out.iter_mut().enumerate() {
        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
        *o = (0..sp.len())
            .map(|p| {
                let k = sp.kvec(p);
                C64::new(0.0, k[b]) * h[c][p] - C64::new(0.0, k[c]) * h[b][p]
            })
            .collect();
    }
    VectorField::new(
        v.grid,
        [
            sp.inverse(&out[0]),
            sp.inverse(&out[1]),
            sp.inverse(&out[2]),
        ],
    )
}

/// Row-wise divergence `(div S)_i = sum_j d_j S_ij`.
pub fn div_tensor(s: &SymTensorField) -> VectorField {
    let sp = s.grid.spectral();
    let h: Vec<Vec<C64>> = s.c.iter().map(|c| sp.forward(c)).collect();
    let mut out: [Vec<f64>; 3] = Default::default();
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = vec![C64::new(0.0, 0.0); sp.len()];
        for j in 0..3 {
            let comp = &h[super::types::sym_index(i, j)];
            for (p, c) in acc.iter_mut().enumerate() {
                *c += C64::new(0.0, sp.kvec(p)[j]) * comp[p];
            }
        }
        *o = sp.inverse(&acc);
    }
    VectorField::new(s.grid, out)
}

pub fn laplacian<F: GridField>(u: &F) -> F {
    let sp = u.grid().spectral();
    u.map_comps(|c| {
        sp.apply(c, |p, z| {
            let k = sp.kvec(p);
            -z * (k[0] * k[0] + k[1] * k[1] + k[2] * k[2])
        })
    })
}

/// Gradient matrix `d_b u_a` of every component, indexed `[a][b]`.
pub fn gradients<F: GridField>(u: &F) -> Vec<[Vec<f64>; 3]> {
    let sp = u.grid().spectral();
    u.comps()
        .iter()
        .map(|c| {
            let hat = sp.forward(c);
            [
                sp.deriv_spec(&hat, 0),
                sp.deriv_spec(&hat, 1),
                sp.deriv_spec(&hat, 2),
            ]
        })
        .collect()
}

/// Leray projection: removes the gradient part of every nonzero mode with the
/// per-mode projector `I - k k^T / |k|^2`. The mean is kept.
pub fn leray_project(v: &VectorField) -> VectorField {
    let sp = v.grid.spectral();
    let h: Vec<Vec<C64>> = v.c.iter().map(|c| sp.forward(c)).collect();
    let mut out: [Vec<C64>; 3] = [h[0].clone(), h[1].clone(), h[2].clone()];
    for p in 0..sp.len() {
        let k = sp.kvec(p);
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        if k2 == 0.0 {
            continue;
        }
        let kf = (h[0][p] * k[0] + h[1][p] * k[1] + h[2][p] * k[2]) / k2;
        for a in 0..3 {
            out[a][p] = h[a][p] - kf * k[a];
        }
    }
    VectorField::new(
        v.grid,
        [
            sp.inverse(&out[0]),
            sp.inverse(&out[1]),
            sp.inverse(&out[2]),
        ],
    )
}

/// Leray projection that also removes the mean and every mode touching a
/// Nyquist plane, so the result lies in the range of the spectral curl.
pub fn solenoidal_band(v: &VectorField) -> VectorField {
    let sp = v.grid.spectral();
    let h: Vec<Vec<C64>> = v.c.iter().map(|c| sp.forward(c)).collect();
    let mut out: [Vec<C64>; 3] = [h[0].clone(), h[1].clone(), h[2].clone()];
    for p in 0..sp.len() {
        let k = sp.kvec(p);
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        if k2 == 0.0 || sp.is_nyquist(p) {
            for o in out.iter_mut() {
                o[p] = C64::new(0.0, 0.0);
            }
            continue;
        }
        let kf = (h[0][p] * k[0] + h[1][p] * k[1] + h[2][p] * k[2]) / k2;
        for a in 0..3 {
            out[a][p] = h[a][p] - kf * k[a];
        }
    }
    VectorField::new(
        v.grid,
        [
            sp.inverse(&out[0]),
            sp.inverse(&out[1]),
            sp.inverse(&out[2]),
        ],
    )
}

/// Symmetric trace-free right inverse of the divergence.
///
/// Per mode, with `f` the coefficient vector:
/// `S = -i [ (k f^T + f k^T)/|k|^2 - (k·f)/(2|k|^4) (|k|^2 I + k k^T) ]`,
/// which gives `i S k = f` and `tr S = 0`.
pub fn inverse_divergence(f: &VectorField) -> Result<SymTensorField> {
    let scale = (f.inner(f) / f.grid.volume()).sqrt();
    let m = f.mean();
    let mean = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
    if mean > 1e-10 * scale.max(f64::MIN_POSITIVE) && mean > 0.0 {
        return Err(Error::NonZeroMean(mean / scale));
    }
    Ok(inverse_divergence_unchecked(f))
}

/// As `inverse_divergence`, silently dropping the mean.
pub fn inverse_divergence_unchecked(f: &VectorField) -> SymTensorField {
    let sp = f.grid.spectral();
    let h: Vec<Vec<C64>> = f.c.iter().map(|c| sp.forward(c)).collect();
    let mut out: Vec<Vec<C64>> = vec![vec![C64::new(0.0, 0.0); sp.len()]; 6];
    let mi = C64::new(0.0, -1.0);
    for p in 0..sp.len() {
        let k = sp.kvec(p);
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        if k2 == 0.0 {
            continue;
        }
        let fv = [h[0][p], h[1][p], h[2][p]];
        let kf = fv[0] * k[0] + fv[1] * k[1] + fv[2] * k[2];
        for (s, &(i, j)) in SYM_PAIRS.iter().enumerate() {
            let delta = if i == j { k2 } else { 0.0 };
            let val = (fv[j] * k[i] + fv[i] * k[j]) / k2 - kf * 0.5 / (k2 * k2) * (delta + k[i] * k[j]);
            out[s][p] = mi * val;
        }
    }
    let comps = out.iter().map(|c| sp.inverse(c)).collect();
    let mut s = SymTensorField::from_comps(f.grid, comps);
    s.trace_free = true;
    s
}

/// Sharp spectral filter keeping modes with `|k| <= kappa` (integer
/// wavevectors, Euclidean length). A cutoff at or beyond the largest
/// representable length `sqrt(3) n/2` is the identity.
pub fn low_pass<F: GridField>(u: &F, kappa: f64) -> F {
    let grid = u.grid();
    let sp = grid.spectral();
    let kmax = 3f64.sqrt() * (grid.n / 2) as f64;
    if kappa >= kmax {
        return u.clone();
    }
    let k2cut = kappa * kappa;
    u.map_comps(|c| {
        sp.apply(c, |p, z| {
            let k = sp.kint(p);
            let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
            if k2 <= k2cut * (1.0 + 1e-12) {
                z
            } else {
                C64::new(0.0, 0.0)
            }
        })
    })
}

/// Dealiased symmetric outer product `(a⊗b + b⊗a)/2`.
pub fn sym_outer(a: &VectorField, b: &VectorField) -> SymTensorField {
    let sp = a.grid.spectral();
    let inputs: Vec<&[f64]> = a.c.iter().chain(b.c.iter()).map(|c| c.as_slice()).collect();
    let terms: Vec<Vec<(f64, usize, usize)>> = SYM_PAIRS
        .iter()
        .map(|&(i, j)| vec![(0.5, i, 3 + j), (0.5, j, 3 + i)])
        .collect();
    let out = sp.products(&inputs, &terms);
    SymTensorField::from_comps(a.grid, out)
}

/// Dealiased `a ⊗ a`.
pub fn self_outer(a: &VectorField) -> SymTensorField {
    let sp = a.grid.spectral();
    let inputs: Vec<&[f64]> = a.c.iter().map(|c| c.as_slice()).collect();
    let terms: Vec<Vec<(f64, usize, usize)>> =
        SYM_PAIRS.iter().map(|&(i, j)| vec![(1.0, i, j)]).collect();
    SymTensorField::from_comps(a.grid, sp.products(&inputs, &terms))
}

/// Dealiased pointwise product of scalars.
pub fn mul(a: &ScalarField, b: &ScalarField) -> ScalarField {
    let sp = a.grid.spectral();
    let out = sp.products(&[&a.data, &b.data], &[vec![(1.0, 0, 1)]]);
    ScalarField::new(a.grid, out.into_iter().next().unwrap())
}

/// Dealiased `a · b`.
pub fn dot(a: &VectorField, b: &VectorField) -> ScalarField {
    let sp = a.grid.spectral();
    let inputs: Vec<&[f64]> = a.c.iter().chain(b.c.iter()).map(|c| c.as_slice()).collect();
    let out = sp.products(&inputs, &[vec![(1.0, 0, 3), (1.0, 1, 4), (1.0, 2, 5)]]);
    ScalarField::new(a.grid, out.into_iter().next().unwrap())
}

/// Dealiased `(v·∇) u`.
pub fn advect(v: &VectorField, u: &VectorField) -> VectorField {
    if v.max_abs() == 0.0 || u.max_abs() == 0.0 {
        return VectorField::zeros(v.grid);
    }
    let sp = v.grid.spectral();
    let g = gradients(u);
    let mut inputs: Vec<&[f64]> = v.c.iter().map(|c| c.as_slice()).collect();
    for row in &g {
        for d in row {
            inputs.push(d);
        }
    }
    let terms: Vec<Vec<(f64, usize, usize)>> = (0..3)
        .map(|i| (0..3).map(|j| (1.0, j, 3 + 3 * i + j)).collect())
        .collect();
    VectorField::from_comps(v.grid, sp.products(&inputs, &terms))
}

/// Pressure from the divergence of the momentum balance
/// `d_t v + (v·∇)v + ∇p - νΔv = div R`, mean zero.
pub fn pressure_solve(v: &VectorField, r: &SymTensorField, nu: f64) -> Result<ScalarField> {
    check_same(v.grid, r.grid)?;
    let mut g = div_tensor(r);
    g.axpy(-1.0, &advect(v, v));
    if nu != 0.0 {
        g.axpy(nu, &laplacian(v));
    }
    Ok(pressure_from_force(&g))
}

/// Solves `Δp = div g` with mean-zero `p`.
pub fn pressure_from_force(g: &VectorField) -> ScalarField {
    let sp = g.grid.spectral();
    let h: Vec<Vec<C64>> = g.c.iter().map(|c| sp.forward(c)).collect();
    let mut ph = vec![C64::new(0.0, 0.0); sp.len()];
    for (p, out) in ph.iter_mut().enumerate() {
        let k = sp.kvec(p);
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        if k2 == 0.0 {
            continue;
        }
        let kg = h[0][p] * k[0] + h[1][p] * k[1] + h[2][p] * k[2];
        *out = C64::new(0.0, -1.0) * kg / k2;
    }
    ScalarField::new(g.grid, sp.inverse(&ph))
}

/// Momentum residual `d_t v + (v·∇)v + ∇p - νΔv - div R` for one slice,
/// given the time derivative.
pub fn momentum_residual(
    dvdt: &VectorField,
    v: &VectorField,
    p: &ScalarField,
    r: &SymTensorField,
    nu: f64,
) -> VectorField {
    let mut res = dvdt.clone();
    res.axpy(1.0, &advect(v, v));
    res.axpy(1.0, &grad(p));
    if nu != 0.0 {
        res.axpy(-nu, &laplacian(v));
    }
    res.axpy(-1.0, &div_tensor(r));
    res
}

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Norms {
    pub sup: f64,
    pub c1: f64,
    pub l2: f64,
}

/// Grid sup of the pointwise norm (Euclidean, Frobenius for tensors).
pub fn sup_norm<F: GridField>(u: &F) -> f64 {
    let mut m: f64 = 0.0;
    for p in 0..u.grid().len() {
        m = m.max(u.point_sq(p));
    }
    m.sqrt()
}

/// Grid sup of the Frobenius norm of the spatial gradient.
pub fn grad_sup<F: GridField>(u: &F) -> f64 {
    let g = gradients(u);
    let w = F::weights();
    let mut m: f64 = 0.0;
    for p in 0..u.grid().len() {
        let mut s = 0.0;
        for (a, row) in g.iter().enumerate() {
            for d in row {
                s += w[a] * d[p] * d[p];
            }
        }
        m = m.max(s);
    }
    m.sqrt()
}

pub fn l2_norm<F: GridField>(u: &F) -> f64 {
    u.inner(u).max(0.0).sqrt()
}

pub fn norms<F: GridField>(u: &F) -> Norms {
    let sup = sup_norm(u);
    Norms {
        sup,
        c1: sup + grad_sup(u),
        l2: l2_norm(u),
    }
}
