//! Orthonormal Legendre polynomials under the uniform probability measure,
//! Gauss–Legendre quadrature, and Galerkin projections of matrix-valued
//! functions onto the polynomial basis.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Closed interval `[a, b]` supporting a uniformly distributed parameter.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a >= b {
            return Err(Error::InvalidInterval { a, b });
        }
        Ok(Self { a, b })
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.a + self.b)
    }

    pub fn contains(&self, xi: f64) -> bool {
        xi >= self.a && xi <= self.b
    }

    /// Maps `xi` in `[a, b]` to the reference coordinate in `[-1, 1]`.
    pub fn to_reference(&self, xi: f64) -> f64 {
        (2.0 * xi - self.a - self.b) / (self.b - self.a)
    }

    /// Inverse of [`Interval::to_reference`].
    pub fn from_reference(&self, t: f64) -> f64 {
        0.5 * ((self.b - self.a) * t + self.a + self.b)
    }

    /// `n` equally spaced points covering the interval, endpoints included.
    pub fn linspace(&self, n: usize) -> Vec<f64> {
        match n {
            0 => Vec::new(),
            1 => vec![self.midpoint()],
            _ => (0..n)
                .map(|i| self.a + (self.b - self.a) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

/// Legendre polynomials of degree `0..=order`, shifted to an interval and
/// scaled so that `E[phi_i phi_j] = delta_ij` for `xi ~ Uniform(a, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LegendreBasis {
    order: usize,
    interval: Interval,
}

impl LegendreBasis {
    pub fn new(order: usize, interval: Interval) -> Self {
        Self { order, interval }
    }

    /// Highest polynomial degree `N`.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of basis functions, `N + 1`.
    pub fn len(&self) -> usize {
        self.order + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    /// Evaluates `[phi_0(xi), ..., phi_N(xi)]`.
    ///
    /// Points outside the support are evaluated anyway (the polynomials are
    /// defined everywhere) but a warning is logged.
    pub fn eval(&self, xi: f64) -> DVector<f64> {
        if !self.interval.contains(xi) {
            log::warn!(
                "evaluating Legendre basis at {xi}, outside [{}, {}]",
                self.interval.a,
                self.interval.b
            );
        }
        let t = self.interval.to_reference(xi);
        let mut out = DVector::zeros(self.len());
        legendre_values(t, out.as_mut_slice());
        for (k, v) in out.iter_mut().enumerate() {
            *v *= ((2 * k + 1) as f64).sqrt();
        }
        out
    }
}

/// Builds the orthonormal basis of order `n` on `(a, b)`.
pub fn make_basis(n: usize, a: f64, b: f64) -> Result<LegendreBasis> {
    Ok(LegendreBasis::new(n, Interval::new(a, b)?))
}

/// Rejects parameter vectors of dimension other than one.
pub fn check_scalar_parameter(dim: usize) -> Result<()> {
    if dim == 1 {
        Ok(())
    } else {
        Err(Error::ParameterDimension(dim))
    }
}

/// Standard (unnormalized) Legendre values `P_0(t), ..., P_{len-1}(t)` via the
/// three-term recurrence `(k+1) P_{k+1} = (2k+1) t P_k - k P_{k-1}`.
fn legendre_values(t: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = t;
    }
    for k in 1..out.len().saturating_sub(1) {
        let kf = k as f64;
        out[k + 1] = ((2.0 * kf + 1.0) * t * out[k] - kf * out[k - 1]) / (kf + 1.0);
    }
}

/// `P_m(t)` and its derivative `P_m'(t)`.
fn legendre_with_derivative(m: usize, t: f64) -> (f64, f64) {
    let (mut p_prev, mut p) = (1.0, t);
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 1..m {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * t * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
    }
    let mf = m as f64;
    let dp = mf * (t * p - p_prev) / (t * t - 1.0);
    (p, dp)
}

/// Quadrature nodes and probability weights (`sum w = 1`) on an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    interval: Interval,
}

impl QuadratureRule {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// Expectation of a scalar function under the uniform measure.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }
}

/// `m`-node Gauss–Legendre rule on `interval`, weights normalized to sum to one.
pub fn gauss_rule(m: usize, interval: Interval) -> Result<QuadratureRule> {
    if m == 0 {
        return Err(Error::EmptyQuadrature);
    }
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let half = m.div_ceil(2);
    for i in 0..half {
        // Tricomi initial guess, refined by Newton on P_m.
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, t);
            dp = d;
            let dt = p / d;
            t -= dt;
            if dt.abs() <= 1e-16 * t.abs().max(1.0) {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(m, t);
        if d.is_finite() {
            dp = d;
        }
        // Reference weight 2 / ((1 - t^2) P'^2), halved for the probability measure.
        let w = 1.0 / ((1.0 - t * t) * dp * dp);
        nodes[i] = -t;
        nodes[m - 1 - i] = t;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    let nodes = nodes
        .into_iter()
        .map(|t| interval.from_reference(t))
        .collect();
    let weights = weights.into_iter().map(|w| w / total).collect();
    Ok(QuadratureRule {
        nodes,
        weights,
        interval,
    })
}

/// Default number of quadrature nodes for a basis of order `n`.
///
/// For entries polynomial of degree `d` the Galerkin moments `E[phi_i phi_j M]`
/// have degree at most `2n + d`, which `n + ceil(d/2) + 1` nodes already
/// integrate exactly; one extra node is kept as margin. Non-polynomial
/// entries get `2n + 16`.
pub fn default_rule_order(n: usize, degree: Option<usize>) -> usize {
    match degree {
        Some(d) => n + d.div_ceil(2) + 2,
        None => 2 * n + 16,
    }
}

/// Computes `sum_q w_q (phi(xi_q) phi(xi_q)^T kron M(xi_q))`, i.e. the block
/// matrix whose `(i, j)` block is `E[phi_i phi_j M(xi)]`.
pub fn project_outer_kron<F>(
    basis: &LegendreBasis,
    rule: &QuadratureRule,
    m: F,
) -> Result<DMatrix<f64>>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    let nb = basis.len();
    let mut shape: Option<(usize, usize)> = None;
    let mut out: Option<DMatrix<f64>> = None;
    for (xi, w) in rule.iter() {
        let value = m(xi);
        let (r, c) = value.shape();
        match shape {
            None => {
                shape = Some((r, c));
                out = Some(DMatrix::zeros(nb * r, nb * c));
            }
            Some(s) if s != (r, c) => {
                return Err(Error::Dimension(format!(
                    "matrix function returned {r}x{c} at xi = {xi}, expected {}x{}",
                    s.0, s.1
                )));
            }
            Some(_) => {}
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let acc = out.as_mut().expect("initialized above");
        let phi = basis.eval(xi);
        for i in 0..nb {
            for j in i..nb {
                let s = w * phi[i] * phi[j];
                if s == 0.0 {
                    continue;
                }
                let mut block = acc.view_mut((i * r, j * c), (r, c));
                block += &value * s;
                if i != j {
                    let mut block = acc.view_mut((j * r, i * c), (r, c));
                    block += &value * s;
                }
            }
        }
    }
    out.ok_or(Error::EmptyQuadrature)
}
