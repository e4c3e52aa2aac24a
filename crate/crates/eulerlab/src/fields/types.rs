use super::grid::Grid;

/// Storage order of symmetric tensor components.
pub const SYM_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];
/// Frobenius weight of each stored component.
pub const SYM_WEIGHTS: [f64; 6] = [1.0, 1.0, 1.0, 2.0, 2.0, 2.0];

/// Position of entry `(i, j)` in symmetric storage.
#[inline]
pub fn sym_index(i: usize, j: usize) -> usize {
    match (i.min(j), i.max(j)) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (0, 1) => 3,
        (0, 2) => 4,
        (1, 2) => 5,
        _ => panic!("tensor index out of range"),
    }
}

/// Shared behaviour of grid fields with a fixed number of components.
pub trait GridField: Clone + Send + Sync {
    fn grid(&self) -> Grid;
    fn comps(&self) -> &[Vec<f64>];
    fn comps_mut(&mut self) -> &mut [Vec<f64>];
    fn from_comps(grid: Grid, comps: Vec<Vec<f64>>) -> Self;
    /// Weights turning component squares into the pointwise norm square.
    fn weights() -> &'static [f64];
    fn kind() -> &'static str;

    fn ncomp() -> usize {
        Self::weights().len()
    }

    fn zeros(grid: Grid) -> Self {
        Self::from_comps(grid, vec![vec![0.0; grid.len()]; Self::ncomp()])
    }

    fn scaled(&self, s: f64) -> Self {
        let comps = self
            .comps()
            .iter()
            .map(|c| c.iter().map(|v| v * s).collect())
            .collect();
        Self::from_comps(self.grid(), comps)
    }

    /// `self += s * other`
    fn axpy(&mut self, s: f64, other: &Self) {
        for (a, b) in self.comps_mut().iter_mut().zip(other.comps()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    fn map_comps<F: Fn(&[f64]) -> Vec<f64>>(&self, f: F) -> Self {
        let comps = self.comps().iter().map(|c| f(c)).collect();
        Self::from_comps(self.grid(), comps)
    }

    /// Pointwise norm square at flat index `p`.
    #[inline]
    fn point_sq(&self, p: usize) -> f64 {
        self.comps()
            .iter()
            .zip(Self::weights())
            .map(|(c, w)| w * c[p] * c[p])
            .sum()
    }

    /// Weighted inner product with quadrature weights (exact for the
    /// trigonometric interpolants by discrete Parseval).
    fn inner(&self, other: &Self) -> f64 {
        let cell = self.grid().cell();
        let mut s = 0.0;
        for ((a, b), w) in self.comps().iter().zip(other.comps()).zip(Self::weights()) {
            s += w * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        }
        s * cell
    }

    fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for c in self.comps() {
            for v in c {
                m = m.max(v.abs());
            }
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    pub c: [Vec<f64>; 3],
}

/// Symmetric 3x3 tensor field, components in `SYM_PAIRS` order.
#[derive(Clone, Debug, PartialEq)]
pub struct SymTensorField {
    pub grid: Grid,
    pub c: [Vec<f64>; 6],
    /// Set by constructions that guarantee a vanishing trace.
    pub trace_free: bool,
}

impl ScalarField {
    pub fn new(grid: Grid, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), grid.len());
        ScalarField { grid, data }
    }

    pub fn from_fn<F: Fn([f64; 3]) -> f64>(grid: Grid, f: F) -> Self {
        let data = (0..grid.len()).map(|p| f(grid.point(p))).collect();
        ScalarField { grid, data }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

impl VectorField {
    pub fn new(grid: Grid, c: [Vec<f64>; 3]) -> Self {
        for v in &c {
            assert_eq!(v.len(), grid.len());
        }
        VectorField { grid, c }
    }

    pub fn from_fn<F: Fn([f64; 3]) -> [f64; 3]>(grid: Grid, f: F) -> Self {
        let mut c = [
            vec![0.0; grid.len()],
            vec![0.0; grid.len()],
            vec![0.0; grid.len()],
        ];
        for p in 0..grid.len() {
            let v = f(grid.point(p));
            for a in 0..3 {
                c[a][p] = v[a];
            }
        }
        VectorField { grid, c }
    }

    pub fn at(&self, p: usize) -> [f64; 3] {
        [self.c[0][p], self.c[1][p], self.c[2][p]]
    }

    pub fn mean(&self) -> [f64; 3] {
        let l = self.grid.len() as f64;
        [
            self.c[0].iter().sum::<f64>() / l,
            self.c[1].iter().sum::<f64>() / l,
            self.c[2].iter().sum::<f64>() / l,
        ]
    }
}

impl SymTensorField {
    pub fn new(grid: Grid, c: [Vec<f64>; 6]) -> Self {
        for v in &c {
            assert_eq!(v.len(), grid.len());
        }
        SymTensorField {
            grid,
            c,
            trace_free: false,
        }
    }

    pub fn from_fn<F: Fn([f64; 3]) -> [[f64; 3]; 3]>(grid: Grid, f: F) -> Self {
        let mut out = SymTensorField::zeros(grid);
        for p in 0..grid.len() {
            let m = f(grid.point(p));
            for (s, &(i, j)) in SYM_PAIRS.iter().enumerate() {
                out.c[s][p] = 0.5 * (m[i][j] + m[j][i]);
            }
        }
        out
    }

    /// Constant field equal to `m` (symmetrized).
    pub fn constant(grid: Grid, m: [[f64; 3]; 3]) -> Self {
        Self::from_fn(grid, |_| m)
    }

    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        &self.c[sym_index(i, j)]
    }

    pub fn matrix_at(&self, p: usize) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for (s, &(i, j)) in SYM_PAIRS.iter().enumerate() {
            m[i][j] = self.c[s][p];
            m[j][i] = self.c[s][p];
        }
        m
    }

    pub fn trace(&self) -> ScalarField {
        let data = (0..self.grid.len())
            .map(|p| self.c[0][p] + self.c[1][p] + self.c[2][p])
            .collect();
        ScalarField::new(self.grid, data)
    }

    /// Removes the trace; the removed part is `trace/3 * Id`.
    pub fn trace_free_part(&self) -> SymTensorField {
        let mut out = self.clone();
        for p in 0..self.grid.len() {
            let t = (self.c[0][p] + self.c[1][p] + self.c[2][p]) / 3.0;
            for s in 0..3 {
                out.c[s][p] -= t;
            }
        }
        out.trace_free = true;
        out
    }

    /// `s * Id`
    pub fn isotropic(s: &ScalarField) -> SymTensorField {
        let z = vec![0.0; s.grid.len()];
        SymTensorField::new(
            s.grid,
            [
                s.data.clone(),
                s.data.clone(),
                s.data.clone(),
                z.clone(),
                z.clone(),
                z,
            ],
        )
    }
}

impl GridField for ScalarField {
    fn grid(&self) -> Grid {
        self.grid
    }
    fn comps(&self) -> &[Vec<f64>] {
        std::slice::from_ref(&self.data)
    }
    fn comps_mut(&mut self) -> &mut [Vec<f64>] {
        std::slice::from_mut(&mut self.data)
    }
    fn from_comps(grid: Grid, mut comps: Vec<Vec<f64>>) -> Self {
        assert_eq!(comps.len(), 1);
        ScalarField::new(grid, comps.pop().unwrap())
    }
    fn weights() -> &'static [f64] {
        &[1.0]
    }
    fn kind() -> &'static str {
        "scalar"
    }
}

impl GridField for VectorField {
    fn grid(&self) -> Grid {
        self.grid
    }
    fn comps(&self) -> &[Vec<f64>] {
        &self.c
    }
    fn comps_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.c
    }
    fn from_comps(grid: Grid, comps: Vec<Vec<f64>>) -> Self {
        let c: [Vec<f64>; 3] = comps.try_into().expect("vector field needs 3 components");
        VectorField::new(grid, c)
    }
    fn weights() -> &'static [f64] {
        &[1.0, 1.0, 1.0]
    }
    fn kind() -> &'static str {
        "vector"
    }
}

impl GridField for SymTensorField {
    fn grid(&self) -> Grid {
        self.grid
    }
    fn comps(&self) -> &[Vec<f64>] {
        &self.c
    }
    fn comps_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.c
    }
    fn from_comps(grid: Grid, comps: Vec<Vec<f64>>) -> Self {
        let c: [Vec<f64>; 6] = comps.try_into().expect("tensor field needs 6 components");
        SymTensorField::new(grid, c)
    }
    fn weights() -> &'static [f64] {
        &SYM_WEIGHTS
    }
    fn kind() -> &'static str {
        "sym_tensor"
    }
    fn scaled(&self, s: f64) -> Self {
        let mut out = SymTensorField::from_comps(
            self.grid,
            self.c.iter().map(|c| c.iter().map(|v| v * s).collect()).collect(),
        );
        out.trace_free = self.trace_free;
        out
    }
}
