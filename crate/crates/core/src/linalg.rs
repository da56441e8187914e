//! Dense continuous-time Lyapunov solver (Bartels–Stewart on the real Schur
//! form), Hurwitz test, and a Kleinman–Newton Riccati solver.

use nalgebra::{DMatrix, Matrix4, Schur, Vector4};

use crate::error::{Error, Result};

/// Eigenvalues with real part above `-HURWITZ_MARGIN` are treated as unstable.
pub const HURWITZ_MARGIN: f64 = 1e-9;

/// Relative residual accepted after the Schur solve, before refinement.
pub const LYAPUNOV_RTOL: f64 = 1e-8;

/// Condition estimate above which a solution carries a warning.
pub const CONDITION_WARN: f64 = 1e12;

const SCHUR_MAX_ITERS_PER_ROW: usize = 30;

/// Which of the two Lyapunov equations to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LyapunovSide {
    /// `A^T P + P A + Q = 0`
    Transposed,
    /// `A Y + Y A^T + Q = 0`
    Plain,
}

#[derive(Debug, Clone)]
pub struct LyapunovSolution {
    pub p: DMatrix<f64>,
    /// Frobenius norm of the equation residual at the returned solution.
    pub residual_norm: f64,
    pub warning: Option<String>,
}

/// Result of a Hurwitz test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HurwitzCheck {
    pub is_hurwitz: bool,
    /// Largest real part over the spectrum.
    pub abscissa: f64,
}

/// Real Schur factorization `A = U T U^T` with the diagonal block layout of `T`.
#[derive(Debug, Clone)]
pub struct SchurForm {
    u: DMatrix<f64>,
    t: DMatrix<f64>,
    // (start, size) of each 1x1 or 2x2 diagonal block
    blocks: Vec<(usize, usize)>,
}

impl SchurForm {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!(
                "expected a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let n = a.nrows();
        // The implicit double-shift QR in nalgebra has no exceptional shifts
        // and can stall on clustered eigenvalues; loosening the deflation
        // threshold by a small factor resolves those cases.
        let schur = [1.0, 4.0, 16.0, 128.0]
            .iter()
            .find_map(|scale| {
                Schur::try_new(
                    a.clone(),
                    scale * f64::EPSILON,
                    SCHUR_MAX_ITERS_PER_ROW * n.max(1),
                )
            })
            .ok_or(Error::SchurFailed)?;
        let (u, t) = schur.unpack();
        let mut blocks = Vec::with_capacity(n);
        let mut i = 0;
        while i < n {
            if i + 1 < n && t[(i + 1, i)] != 0.0 {
                blocks.push((i, 2));
                i += 2;
            } else {
                blocks.push((i, 1));
                i += 1;
            }
        }
        Ok(Self { u, t, blocks })
    }

    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    /// Spectral abscissa read off the diagonal blocks.
    pub fn abscissa(&self) -> f64 {
        self.blocks
            .iter()
            .map(|&(s, size)| {
                if size == 1 {
                    self.t[(s, s)]
                } else {
                    let (a, b) = (self.t[(s, s)], self.t[(s, s + 1)]);
                    let (c, d) = (self.t[(s + 1, s)], self.t[(s + 1, s + 1)]);
                    let half_trace = 0.5 * (a + d);
                    let disc = 0.25 * (a - d) * (a - d) + b * c;
                    if disc >= 0.0 {
                        half_trace + disc.sqrt()
                    } else {
                        half_trace
                    }
                }
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn hurwitz(&self) -> HurwitzCheck {
        let abscissa = self.abscissa();
        HurwitzCheck {
            is_hurwitz: abscissa < -HURWITZ_MARGIN,
            abscissa,
        }
    }

    /// Reconstructs `A` from the factors.
    pub fn matrix(&self) -> DMatrix<f64> {
        &self.u * &self.t * self.u.transpose()
    }

    /// Solves the requested Lyapunov equation for the factored `A`, without
    /// a stability check or refinement.
    pub fn solve_raw(&self, q: &DMatrix<f64>, side: LyapunovSide) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if q.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "forcing is {}x{}, expected {n}x{n}",
                q.nrows(),
                q.ncols()
            )));
        }
        let c = self.u.transpose() * q * &self.u;
        let x = match side {
            LyapunovSide::Transposed => self.solve_transposed_triangular(&c)?,
            LyapunovSide::Plain => self.solve_plain_triangular(&c)?,
        };
        let p = &self.u * x * self.u.transpose();
        Ok(symmetrize(&p))
    }

    // T^T X + X T + C = 0, blocks visited in increasing row/column order.
    fn solve_transposed_triangular(&self, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let t = &self.t;
        let mut x = DMatrix::<f64>::zeros(n, n);
        for &(si, pi) in &self.blocks {
            for &(sj, pj) in &self.blocks {
                let mut rhs = -c.view((si, sj), (pi, pj)).clone_owned();
                if si > 0 {
                    rhs -= t.view((0, si), (si, pi)).transpose() * x.view((0, sj), (si, pj));
                }
                if sj > 0 {
                    rhs -= x.view((si, 0), (pi, sj)) * t.view((0, sj), (sj, pj));
                }
                let tii_t = t.view((si, si), (pi, pi)).transpose();
                let tjj = t.view((sj, sj), (pj, pj)).clone_owned();
                let blk = small_sylvester(&tii_t, &tjj, &rhs)?;
                x.view_mut((si, sj), (pi, pj)).copy_from(&blk);
            }
        }
        Ok(x)
    }

    // T Z + Z T^T + C = 0, blocks visited in decreasing row/column order.
    fn solve_plain_triangular(&self, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let t = &self.t;
        let mut z = DMatrix::<f64>::zeros(n, n);
        for &(si, pi) in self.blocks.iter().rev() {
            let ei = si + pi;
            for &(sj, pj) in self.blocks.iter().rev() {
                let ej = sj + pj;
                let mut rhs = -c.view((si, sj), (pi, pj)).clone_owned();
                if ei < n {
                    rhs -= t.view((si, ei), (pi, n - ei)) * z.view((ei, sj), (n - ei, pj));
                }
                if ej < n {
                    rhs -=
                        z.view((si, ej), (pi, n - ej)) * t.view((sj, ej), (pj, n - ej)).transpose();
                }
                let tii = t.view((si, si), (pi, pi)).clone_owned();
                let tjj_t = t.view((sj, sj), (pj, pj)).transpose();
                let blk = small_sylvester(&tii, &tjj_t, &rhs)?;
                z.view_mut((si, sj), (pi, pj)).copy_from(&blk);
            }
        }
        Ok(z)
    }
}

// Solves L X + X M = C for blocks of size at most 2 via the Kronecker form
// (I kron L + M^T kron I) vec X = vec C.
fn small_sylvester(l: &DMatrix<f64>, m: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = l.nrows();
    let q = m.nrows();
    if p == 1 && q == 1 {
        let d = l[(0, 0)] + m[(0, 0)];
        if d == 0.0 {
            return Err(Error::Singular("Lyapunov block"));
        }
        return Ok(DMatrix::from_element(1, 1, c[(0, 0)] / d));
    }
    let dim = p * q;
    let mut sys = Matrix4::<f64>::identity();
    let mut rhs = Vector4::<f64>::zeros();
    for col in 0..q {
        for row in 0..p {
            let r = col * p + row;
            rhs[r] = c[(row, col)];
            for col2 in 0..q {
                for row2 in 0..p {
                    let k = col2 * p + row2;
                    let mut v = 0.0;
                    if col == col2 {
                        v += l[(row, row2)];
                    }
                    if row == row2 {
                        v += m[(col2, col)];
                    }
                    sys[(r, k)] = v;
                }
            }
        }
    }
    let sol = if dim == 4 {
        sys.lu().solve(&rhs)
    } else {
        let s = sys.fixed_view::<2, 2>(0, 0).clone_owned();
        let b = rhs.fixed_rows::<2>(0).clone_owned();
        s.lu().solve(&b).map(|v| Vector4::new(v[0], v[1], 0.0, 0.0))
    }
    .ok_or(Error::Singular("Lyapunov block"))?;
    let mut out = DMatrix::zeros(p, q);
    for col in 0..q {
        for row in 0..p {
            out[(row, col)] = sol[col * p + row];
        }
    }
    Ok(out)
}

pub fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

/// Residual `A^T P + P A + Q` (transposed) or `A P + P A^T + Q` (plain).
pub fn lyapunov_residual(
    a: &DMatrix<f64>,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    side: LyapunovSide,
) -> DMatrix<f64> {
    match side {
        LyapunovSide::Transposed => a.transpose() * p + p * a + q,
        LyapunovSide::Plain => a * p + p * a.transpose() + q,
    }
}

/// Spectral abscissa and Hurwitz verdict for a square matrix.
pub fn is_hurwitz(a: &DMatrix<f64>) -> Result<HurwitzCheck> {
    Ok(SchurForm::new(a)?.hurwitz())
}

/// Solves a continuous-time Lyapunov equation after checking `A` is Hurwitz.
pub fn solve_lyapunov(
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
    side: LyapunovSide,
) -> Result<LyapunovSolution> {
    let schur = SchurForm::new(a)?;
    let check = schur.hurwitz();
    if !check.is_hurwitz {
        return Err(Error::NotHurwitz {
            abscissa: check.abscissa,
        });
    }
    solve_lyapunov_with(&schur, a, q, side)
}

/// Solves with a precomputed Schur factorization of `a`. One step of
/// iterative refinement is applied when the residual exceeds
/// `LYAPUNOV_RTOL * (1 + ||Q||_F)`.
pub fn solve_lyapunov_with(
    schur: &SchurForm,
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
    side: LyapunovSide,
) -> Result<LyapunovSolution> {
    let mut p = schur.solve_raw(q, side)?;
    let tol = LYAPUNOV_RTOL * (1.0 + q.norm());
    let mut residual = lyapunov_residual(a, &p, q, side);
    if residual.norm() > tol {
        let correction = schur.solve_raw(&symmetrize(&residual), side)?;
        p += correction;
        p = symmetrize(&p);
        residual = lyapunov_residual(a, &p, q, side);
    }
    let residual_norm = residual.norm();
    if !residual_norm.is_finite() {
        return Err(Error::NonFinite);
    }
    let q_norm = q.norm();
    let mut warning = None;
    if q_norm > 0.0 {
        let estimate = 2.0 * a.norm() * p.norm() / q_norm;
        if estimate > CONDITION_WARN {
            warning = Some(format!(
                "Lyapunov solve ill-conditioned (estimate {estimate:.3e})"
            ));
        }
    }
    if residual_norm > tol {
        let msg = format!("Lyapunov residual {residual_norm:.3e} above tolerance {tol:.3e}");
        warning = Some(match warning {
            Some(w) => format!("{w}; {msg}"),
            None => msg,
        });
    }
    Ok(LyapunovSolution {
        p,
        residual_norm,
        warning,
    })
}

/// Reference solver by vectorization, `O(n^6)`. Meant for small problems and
/// cross-checks.
pub fn solve_lyapunov_kron(
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
    side: LyapunovSide,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let op = match side {
        LyapunovSide::Transposed => eye.kronecker(&a.transpose()) + a.transpose().kronecker(&eye),
        LyapunovSide::Plain => eye.kronecker(a) + a.kronecker(&eye),
    };
    let rhs = -nalgebra::DVector::from_column_slice(q.as_slice());
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular("vectorized Lyapunov"))?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(s: &DMatrix<f64>) -> f64 {
    s.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(s: &DMatrix<f64>) -> f64 {
    s.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Spectral (induced 2-) norm.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Checks symmetry and positive definiteness (eigenvalues above `tol`).
pub fn check_spd(m: &DMatrix<f64>, name: &str, tol: f64) -> Result<()> {
    if !m.is_square() {
        return Err(Error::NotPositiveDefinite(format!("{name} is not square")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let asym = (m - m.transpose()).norm();
    if asym > 1e-12 * (1.0 + m.norm()) {
        return Err(Error::NotPositiveDefinite(format!(
            "{name} is not symmetric"
        )));
    }
    let lo = min_eigenvalue(m);
    if lo <= tol {
        return Err(Error::NotPositiveDefinite(format!(
            "{name} has smallest eigenvalue {lo:.3e}"
        )));
    }
    Ok(())
}

/// Output of the Kleinman–Newton Riccati iteration.
#[derive(Debug, Clone)]
pub struct CareSolution {
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub iterations: usize,
    /// Frobenius norm of `A^T P + P A - P B R^{-1} B^T P + Q`.
    pub residual_norm: f64,
}

pub const KLEINMAN_TOL: f64 = 1e-10;
pub const KLEINMAN_MAX_ITERS: usize = 100;

/// Solves the continuous algebraic Riccati equation by Newton's method on
/// the gain, starting from a stabilizing `k0`.
pub fn kleinman_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    k0: &DMatrix<f64>,
) -> Result<CareSolution> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::Dimension("inconsistent Riccati data".into()));
    }
    if k0.shape() != (m, n) {
        return Err(Error::Dimension(format!(
            "initial gain is {}x{}, expected {m}x{n}",
            k0.nrows(),
            k0.ncols()
        )));
    }
    if b.iter().all(|v| *v == 0.0) {
        return Err(Error::Unstabilizable("input matrix is zero".into()));
    }
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("R".into()))?
        .inverse();
    let first = is_hurwitz(&(a - b * k0))?;
    if !first.is_hurwitz {
        return Err(Error::Riccati(format!(
            "initial gain does not stabilize (abscissa {:.3e})",
            first.abscissa
        )));
    }
    let mut k = k0.clone();
    let mut p = DMatrix::zeros(n, n);
    let mut iterations = 0;
    for it in 0..KLEINMAN_MAX_ITERS {
        iterations = it + 1;
        let ac = a - b * &k;
        let forcing = q + k.transpose() * r * &k;
        p = match solve_lyapunov(&ac, &forcing, LyapunovSide::Transposed) {
            Ok(sol) => sol.p,
            Err(Error::NotHurwitz { abscissa }) => {
                return Err(Error::Riccati(format!(
                    "intermediate gain lost stability at iteration {it} (abscissa {abscissa:.3e})"
                )))
            }
            Err(e) => return Err(e),
        };
        let next = &r_inv * b.transpose() * &p;
        let step = (&next - &k).norm();
        k = next;
        if step <= KLEINMAN_TOL {
            break;
        }
    }
    // P for the final gain.
    let ac = a - b * &k;
    let forcing = q + k.transpose() * r * &k;
    p = solve_lyapunov(&ac, &forcing, LyapunovSide::Transposed)
        .map(|s| s.p)
        .unwrap_or(p);
    let residual = a.transpose() * &p + &p * a - &p * b * &r_inv * b.transpose() * &p + q;
    Ok(CareSolution {
        k,
        p,
        iterations,
        residual_norm: residual.norm(),
    })
}

/// Stabilizing gain for a controllable pair by Bass's method:
/// `K = B^T Z^{-1}` where `-(A + beta I) Z - Z (A + beta I)^T + 2 B B^T = 0`
/// and `beta` exceeds the spectral abscissa of `A`.
pub fn bass_stabilizing_gain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let beta = a.norm() + 1.0;
    let shifted = -(a + DMatrix::identity(n, n) * beta);
    let forcing = b * b.transpose() * 2.0;
    let z = solve_lyapunov(&shifted, &forcing, LyapunovSide::Plain)?.p;
    let chol = z
        .cholesky()
        .ok_or_else(|| Error::Unstabilizable("controllability Gramian is singular".into()))?;
    Ok(b.transpose() * chol.inverse())
}
