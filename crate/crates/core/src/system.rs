//! Linear plants whose state and input matrices depend on a scalar random
//! parameter, plus the two built-in example plants.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::Interval;
use crate::error::{Error, Result};

/// Matrix whose entries are polynomials in the parameter, stored as
/// ascending coefficient lists (`[c0, c1, c2]` is `c0 + c1 xi + c2 xi^2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyMatrix {
    rows: usize,
    cols: usize,
    // row-major
    entries: Vec<Vec<f64>>,
}

impl PolyMatrix {
    /// Builds from row-major nested lists of coefficient lists.
    pub fn from_rows(rows: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if nrows == 0 || ncols == 0 {
            return Err(Error::Dimension(
                "polynomial matrix must be non-empty".into(),
            ));
        }
        let mut entries = Vec::with_capacity(nrows * ncols);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != ncols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} entries, expected {ncols}",
                    row.len()
                )));
            }
            for coeffs in row {
                if coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(Error::NonFinite);
                }
                entries.push(coeffs);
            }
        }
        Ok(Self {
            rows: nrows,
            cols: ncols,
            entries,
        })
    }

    /// Constant polynomial matrix.
    pub fn constant(m: &DMatrix<f64>) -> Self {
        let mut entries = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                entries.push(vec![m[(i, j)]]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            entries,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Highest degree carrying a nonzero coefficient.
    pub fn degree(&self) -> usize {
        self.entries
            .iter()
            .map(|c| c.iter().rposition(|v| *v != 0.0).unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, xi: f64) -> DMatrix<f64> {
        DMatrix::from_row_iterator(
            self.rows,
            self.cols,
            self.entries
                .iter()
                .map(|c| c.iter().rev().fold(0.0, |acc, v| acc * xi + v)),
        )
    }

    pub fn to_rows(&self) -> Vec<Vec<Vec<f64>>> {
        self.entries
            .chunks(self.cols)
            .map(|row| row.to_vec())
            .collect()
    }
}

type MatrixClosure = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

/// A matrix-valued function of the parameter.
#[derive(Clone)]
pub enum MatrixFn {
    Polynomial(PolyMatrix),
    General {
        rows: usize,
        cols: usize,
        f: MatrixClosure,
    },
}

impl MatrixFn {
    pub fn general<F>(rows: usize, cols: usize, f: F) -> Self
    where
        F: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self::General {
            rows,
            cols,
            f: Arc::new(f),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Self::Polynomial(p) => p.shape(),
            Self::General { rows, cols, .. } => (*rows, *cols),
        }
    }

    pub fn degree(&self) -> Option<usize> {
        match self {
            Self::Polynomial(p) => Some(p.degree()),
            Self::General { .. } => None,
        }
    }

    pub fn eval(&self, xi: f64) -> DMatrix<f64> {
        match self {
            Self::Polynomial(p) => p.eval(xi),
            Self::General { f, .. } => f(xi),
        }
    }
}

impl fmt::Debug for MatrixFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Polynomial(p) => f.debug_tuple("Polynomial").field(p).finish(),
            Self::General { rows, cols, .. } => f
                .debug_struct("General")
                .field("rows", rows)
                .field("cols", cols)
                .finish_non_exhaustive(),
        }
    }
}

/// `dx/dt = A(xi) x + B(xi) u` with `xi ~ Uniform(interval)`.
#[derive(Debug, Clone)]
pub struct ParametricSystem {
    a: MatrixFn,
    b: MatrixFn,
    interval: Interval,
    declared_degree: Option<usize>,
}

impl ParametricSystem {
    pub fn new(a: MatrixFn, b: MatrixFn, interval: Interval) -> Result<Self> {
        let (nx, nx2) = a.shape();
        if nx != nx2 || nx == 0 {
            return Err(Error::Dimension(format!(
                "A must be square, got {nx}x{nx2}"
            )));
        }
        let (bn, nu) = b.shape();
        if bn != nx || nu == 0 {
            return Err(Error::Dimension(format!(
                "B is {bn}x{nu}, expected {nx} rows"
            )));
        }
        let declared_degree = match (a.degree(), b.degree()) {
            (Some(da), Some(db)) => Some(da.max(db)),
            _ => None,
        };
        Ok(Self {
            a,
            b,
            interval,
            declared_degree,
        })
    }

    /// Parameter-free plant.
    pub fn constant(a: DMatrix<f64>, b: DMatrix<f64>, interval: Interval) -> Result<Self> {
        Self::new(
            MatrixFn::Polynomial(PolyMatrix::constant(&a)),
            MatrixFn::Polynomial(PolyMatrix::constant(&b)),
            interval,
        )
    }

    /// Overrides the polynomial degree used to size the quadrature.
    pub fn with_declared_degree(mut self, degree: Option<usize>) -> Self {
        self.declared_degree = degree;
        self
    }

    pub fn nx(&self) -> usize {
        self.a.shape().0
    }

    pub fn nu(&self) -> usize {
        self.b.shape().1
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn declared_degree(&self) -> Option<usize> {
        self.declared_degree
    }

    pub fn a_fn(&self) -> &MatrixFn {
        &self.a
    }

    pub fn b_fn(&self) -> &MatrixFn {
        &self.b
    }

    pub fn a(&self, xi: f64) -> DMatrix<f64> {
        self.a.eval(xi)
    }

    pub fn b(&self, xi: f64) -> DMatrix<f64> {
        self.b.eval(xi)
    }

    /// `A(xi) - B(xi) K`
    pub fn closed_loop(&self, k: &DMatrix<f64>, xi: f64) -> Result<DMatrix<f64>> {
        if k.shape() != (self.nu(), self.nx()) {
            return Err(Error::Dimension(format!(
                "gain is {}x{}, expected {}x{}",
                k.nrows(),
                k.ncols(),
                self.nu(),
                self.nx()
            )));
        }
        Ok(self.a(xi) - self.b(xi) * k)
    }
}

/// The 2x2 example: `A(xi) = [[0.2 + 0.3 xi^3, -0.4], [0.1, 0.5]]`,
/// `B = [[0.5, 0.1], [0.2, 1]]`, `xi ~ U(-1, 1)`.
pub fn illustrative() -> ParametricSystem {
    let a = PolyMatrix::from_rows(vec![
        vec![vec![0.2, 0.0, 0.0, 0.3], vec![-0.4]],
        vec![vec![0.1], vec![0.5]],
    ])
    .expect("static data");
    let b = PolyMatrix::from_rows(vec![vec![vec![0.5], vec![0.1]], vec![vec![0.2], vec![1.0]]])
        .expect("static data");
    ParametricSystem::new(
        MatrixFn::Polynomial(a),
        MatrixFn::Polynomial(b),
        Interval { a: -1.0, b: 1.0 },
    )
    .expect("static data")
}

/// Four unit masses in a chain joined by springs of stiffness
/// `kappa(xi) = (xi/5 + 1)^4`, force input on the first mass.
pub fn mass_spring() -> ParametricSystem {
    mass_spring_with_masses([1.0; 4])
}

pub fn mass_spring_with_masses(masses: [f64; 4]) -> ParametricSystem {
    // (1 + xi/5)^4 expanded in ascending powers
    let kappa = [1.0, 4.0 / 5.0, 6.0 / 25.0, 4.0 / 125.0, 1.0 / 625.0];
    let scaled = |s: f64| kappa.iter().map(|c| c * s).collect::<Vec<_>>();
    let zero = || vec![0.0];
    let mut a: Vec<Vec<Vec<f64>>> = vec![vec![zero(); 8]; 8];
    for i in 0..4 {
        a[i][i + 4] = vec![1.0];
    }
    // stiffness Laplacian of a free-free chain, row i divided by m_i
    let lap: [[f64; 4]; 4] = [
        [-1.0, 1.0, 0.0, 0.0],
        [1.0, -2.0, 1.0, 0.0],
        [0.0, 1.0, -2.0, 1.0],
        [0.0, 0.0, 1.0, -1.0],
    ];
    for i in 0..4 {
        for j in 0..4 {
            if lap[i][j] != 0.0 {
                a[4 + i][j] = scaled(lap[i][j] / masses[i]);
            }
        }
    }
    let mut b = vec![vec![zero()]; 8];
    b[4] = vec![vec![1.0 / masses[0]]];
    ParametricSystem::new(
        MatrixFn::Polynomial(PolyMatrix::from_rows(a).expect("static data")),
        MatrixFn::Polynomial(PolyMatrix::from_rows(b).expect("static data")),
        Interval { a: -1.0, b: 1.0 },
    )
    .expect("static data")
}

/// `dx/dt = -x + u`, independent of the parameter.
pub fn scalar_deterministic() -> ParametricSystem {
    ParametricSystem::constant(
        DMatrix::from_element(1, 1, -1.0),
        DMatrix::from_element(1, 1, 1.0),
        Interval { a: -1.0, b: 1.0 },
    )
    .expect("static data")
}
