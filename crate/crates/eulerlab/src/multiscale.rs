//! Small scales acting on large ones: the Reynolds stress of a filtered
//! decomposition and the vortex-coupling operator.

use crate::error::{Error, Result};
use crate::fields::{
    advect, div, low_pass, ops::grad_sup, self_outer, sup_norm, GridField, SymTensorField,
    VectorField,
};

/// `u = u_bar + u_prime` with `u_bar = low_pass(u, kappa)`.
#[derive(Clone, Debug)]
pub struct ScaleDecomposition {
    pub u_bar: VectorField,
    pub u_prime: VectorField,
    pub kappa: f64,
}

impl ScaleDecomposition {
    pub fn new(u: &VectorField, kappa: f64) -> Self {
        let u_bar = low_pass(u, kappa);
        let u_prime = u.sub(&u_bar);
        ScaleDecomposition {
            u_bar,
            u_prime,
            kappa,
        }
    }

    pub fn reconstruct(&self) -> VectorField {
        self.u_bar.add(&self.u_prime)
    }
}

/// `Λ(u⊗u) - ū⊗ū` with `Λ` the sharp cutoff at `kappa`.
pub fn reynolds_stress(u: &VectorField, kappa: f64) -> SymTensorField {
    let u_bar = low_pass(u, kappa);
    let mut r = low_pass(&self_outer(u), kappa);
    r.axpy(-1.0, &self_outer(&u_bar));
    r
}

/// `L = sum_k (u'_k·∇ ω̄ - ω̄·∇ u'_k)`.
pub fn vortex_coupling(omega_bar: &VectorField, u_primes: &[VectorField]) -> Result<VectorField> {
    let mut out = VectorField::zeros(omega_bar.grid);
    for u in u_primes {
        if u.grid != omega_bar.grid {
            return Err(Error::GridMismatch);
        }
        let d = sup_norm(&div(u));
        if d > 1e-8 * grad_sup(u) {
            return Err(Error::NotSolenoidal(d));
        }
        out.axpy(1.0, &advect(u, omega_bar));
        out.axpy(-1.0, &advect(omega_bar, u));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::random::{random_solenoidal, random_vector};
    use crate::fields::{Grid, SYM_PAIRS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Grid {
        Grid::new(16).unwrap()
    }

    #[test]
    fn decomposition_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_vector(grid(), 6.0, &mut rng);
        let d = ScaleDecomposition::new(&u, 2.5);
        assert!(sup_norm(&d.reconstruct().sub(&u)) < 1e-14 * sup_norm(&u));
        assert!(sup_norm(&low_pass(&d.u_prime, 2.5)) < 1e-14);
    }

    #[test]
    fn reynolds_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random_vector(grid(), 5.0, &mut rng);
        assert!(sup_norm(&reynolds_stress(&u, 100.0)) == 0.0);

        // kappa = 0: the mean of u'⊗u'
        let r = reynolds_stress(&u, 0.0);
        let up = ScaleDecomposition::new(&u, 0.0).u_prime;
        let uu = self_outer(&up);
        let g = grid();
        for (c, _) in SYM_PAIRS.iter().enumerate() {
            let mean = uu.c[c].iter().sum::<f64>() / g.len() as f64;
            assert!(r.c[c].iter().all(|x| (x - mean).abs() < 1e-12));
        }

        let u = VectorField::from_fn(g, |x| [(3.0 * x[1]).sin(), 0.0, 0.0]);
        let r = reynolds_stress(&u, 2.0);
        for (c, _) in SYM_PAIRS.iter().enumerate() {
            let expect = if c == 0 { 0.5 } else { 0.0 };
            assert!(r.c[c].iter().all(|x| (x - expect).abs() < 1e-13));
        }
    }

    #[test]
    fn coupling_examples() {
        let g = grid();
        let w = VectorField::from_fn(g, |x| [x[1].sin(), 0.0, 0.0]);
        assert_eq!(sup_norm(&vortex_coupling(&w, &[VectorField::zeros(g)]).unwrap()), 0.0);

        // ω̄ = (sin y, 0, 0), u' = (0, 0, sin x): u'·∇ω̄ = 0, ω̄·∇u' = (0, 0, sin y cos x)
        let u = VectorField::from_fn(g, |x| [0.0, 0.0, x[0].sin()]);
        let l = vortex_coupling(&w, &[u.clone()]).unwrap();
        let expect = VectorField::from_fn(g, |x| [0.0, 0.0, -x[1].sin() * x[0].cos()]);
        assert!(sup_norm(&l.sub(&expect)) < 1e-13);

        let c = VectorField::from_fn(g, |_| [1.0, -2.0, 0.5]);
        let l = vortex_coupling(&c, &[u.clone()]).unwrap();
        assert!(sup_norm(&l.add(&advect(&c, &u))) < 1e-13);

        let bad = VectorField::from_fn(g, |x| [x[0].sin(), 0.0, 0.0]);
        assert!(matches!(vortex_coupling(&w, &[bad]), Err(Error::NotSolenoidal(_))));
    }

    #[test]
    fn coupling_bilinear() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w1 = random_vector(g, 3.0, &mut rng);
        let w2 = random_vector(g, 3.0, &mut rng);
        let u1 = random_solenoidal(g, 3.0, &mut rng);
        let u2 = random_solenoidal(g, 3.0, &mut rng);
        let a = vortex_coupling(&w1.add(&w2.scaled(2.0)), &[u1.clone(), u2.clone()]).unwrap();
        let mut b = vortex_coupling(&w1, &[u1.clone(), u2.clone()]).unwrap();
        b.axpy(2.0, &vortex_coupling(&w2, &[u1.clone(), u2.clone()]).unwrap());
        assert!(sup_norm(&a.sub(&b)) < 1e-12 * sup_norm(&a));
        let joined = vortex_coupling(&w1, &[u1.add(&u2)]).unwrap();
        let split = vortex_coupling(&w1, &[u1, u2]).unwrap();
        assert!(sup_norm(&joined.sub(&split)) < 1e-12 * sup_norm(&split));
    }
}
