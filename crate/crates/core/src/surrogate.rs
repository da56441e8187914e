//! Galerkin-lifted deterministic surrogate of a parametric plant and the
//! surrogate LQR cost, its gradient, and its Hessian action.

use nalgebra::DMatrix;

use crate::basis::{self, LegendreBasis, QuadratureRule};
use crate::error::{Error, Result};
use crate::linalg::{self, LyapunovSide, SchurForm};
use crate::system::ParametricSystem;

/// Relative change tolerated between a rule and its doubled version when the
/// plant is not polynomial.
pub const DOUBLING_RTOL: f64 = 1e-10;

/// Lifted matrices `A_N = E[phi phi^T kron A(xi)]`, `B_N = E[phi phi^T kron B(xi)]`.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    a_lift: DMatrix<f64>,
    b_lift: DMatrix<f64>,
    order: usize,
    nx: usize,
    nu: usize,
}

impl SurrogateModel {
    pub fn a_lift(&self) -> &DMatrix<f64> {
        &self.a_lift
    }

    pub fn b_lift(&self) -> &DMatrix<f64> {
        &self.b_lift
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    /// Number of basis functions, `N + 1`.
    pub fn blocks(&self) -> usize {
        self.order + 1
    }

    /// Size of the lifted state, `(N + 1) n_x`.
    pub fn lifted_dim(&self) -> usize {
        self.blocks() * self.nx
    }

    /// `[I; 0; ...; 0]`, mapping an initial state to its lifted coefficients.
    pub fn selector(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.lifted_dim(), self.nx);
        s.view_mut((0, 0), (self.nx, self.nx)).fill_with_identity();
        s
    }

    fn check_gain(&self, k: &DMatrix<f64>) -> Result<()> {
        if k.shape() != (self.nu, self.nx) {
            return Err(Error::Dimension(format!(
                "gain is {}x{}, expected {}x{}",
                k.nrows(),
                k.ncols(),
                self.nu,
                self.nx
            )));
        }
        Ok(())
    }

    /// `B_N (I kron K)`, computed block by block.
    fn b_times_block_gain(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        let nb = self.blocks();
        let (nx, nu) = (self.nx, self.nu);
        let mut out = DMatrix::zeros(nb * nx, nb * nx);
        for i in 0..nb {
            for j in 0..nb {
                let bij = self.b_lift.view((i * nx, j * nu), (nx, nu));
                out.view_mut((i * nx, j * nx), (nx, nx))
                    .copy_from(&(bij * k));
            }
        }
        out
    }

    /// Closed-loop lifted matrix `A_N - B_N (I kron K)`.
    pub fn closed_loop(&self, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_gain(k)?;
        Ok(&self.a_lift - self.b_times_block_gain(k))
    }

    /// Spectral abscissa of the lifted closed loop and the admissibility verdict.
    pub fn admissibility(&self, k: &DMatrix<f64>) -> Result<linalg::HurwitzCheck> {
        linalg::is_hurwitz(&self.closed_loop(k)?)
    }
}

/// Assembles the surrogate using an explicit quadrature rule.
pub fn build_surrogate(
    sys: &ParametricSystem,
    order: usize,
    rule: &QuadratureRule,
) -> Result<SurrogateModel> {
    let basis = LegendreBasis::new(order, sys.interval());
    let a_lift = basis::project_outer_kron(&basis, rule, |xi| sys.a(xi))?;
    let b_lift = basis::project_outer_kron(&basis, rule, |xi| sys.b(xi))?;
    let (nx, nu) = (sys.nx(), sys.nu());
    let nb = order + 1;
    if a_lift.shape() != (nb * nx, nb * nx) || b_lift.shape() != (nb * nx, nb * nu) {
        return Err(Error::Dimension(
            "system matrices changed shape during projection".into(),
        ));
    }
    Ok(SurrogateModel {
        a_lift,
        b_lift,
        order,
        nx,
        nu,
    })
}

/// Assembles the surrogate with the default quadrature for the plant: exact
/// for declared polynomial degree, otherwise `2N + 16` nodes with a doubling
/// self-check (the doubled rule wins if the two disagree).
pub fn build_surrogate_auto(sys: &ParametricSystem, order: usize) -> Result<SurrogateModel> {
    let m = basis::default_rule_order(order, sys.declared_degree());
    let rule = basis::gauss_rule(m, sys.interval())?;
    let model = build_surrogate(sys, order, &rule)?;
    if sys.declared_degree().is_some() {
        return Ok(model);
    }
    let fine = build_surrogate(sys, order, &basis::gauss_rule(2 * m, sys.interval())?)?;
    let change = (&fine.a_lift - &model.a_lift).norm() + (&fine.b_lift - &model.b_lift).norm();
    let scale = fine.a_lift.norm() + fine.b_lift.norm();
    if change > DOUBLING_RTOL * scale.max(f64::MIN_POSITIVE) {
        log::warn!(
            "surrogate projection changed by {:.3e} (relative) when doubling the rule to {} nodes",
            change / scale,
            2 * m
        );
        return Ok(fine);
    }
    Ok(model)
}

/// Everything computed at one gain.
#[derive(Debug, Clone)]
pub struct CostEvaluation {
    pub cost: f64,
    pub p_lift: DMatrix<f64>,
    pub y_lift: DMatrix<f64>,
    pub gradient: DMatrix<f64>,
    /// Spectral abscissa of the lifted closed loop.
    pub hurwitz_margin: f64,
    schur: SchurForm,
    a_closed: DMatrix<f64>,
}

impl CostEvaluation {
    /// Lifted closed loop `A_N - B_N (I kron K)`.
    pub fn closed_loop(&self) -> &DMatrix<f64> {
        &self.a_closed
    }

    pub fn gradient_norm(&self) -> f64 {
        self.gradient.norm()
    }

    /// `Tr[(I kron (Q + K^T R K)) Y_N]`, the dual form of the cost.
    pub fn dual_cost(
        &self,
        model: &SurrogateModel,
        k: &DMatrix<f64>,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
    ) -> f64 {
        let weight = q + k.transpose() * r * k;
        let nx = model.nx();
        (0..model.blocks())
            .map(|i| (&weight * self.y_lift.view((i * nx, i * nx), (nx, nx))).trace())
            .sum()
    }

    /// Second derivative of the cost along `e` at the gain this evaluation
    /// was computed for.
    pub fn hessian_action(
        &self,
        model: &SurrogateModel,
        k: &DMatrix<f64>,
        r: &DMatrix<f64>,
        e: &DMatrix<f64>,
    ) -> Result<f64> {
        model.check_gain(e)?;
        let nb = model.blocks();
        let (nx, nu) = (model.nx(), model.nu());
        // E_N = I kron RK - B_N^T P_N
        let mut e_n = -(model.b_lift().transpose() * &self.p_lift);
        let rk = r * k;
        for i in 0..nb {
            let mut blk = e_n.view_mut((i * nu, i * nx), (nu, nx));
            blk += &rk;
        }
        // (I kron E^T) E_N: block row i is E^T times block row i of E_N.
        let mut forcing = DMatrix::zeros(nb * nx, nb * nx);
        for i in 0..nb {
            let row = e.transpose() * e_n.rows(i * nu, nu);
            forcing.rows_mut(i * nx, nx).copy_from(&row);
        }
        let forcing = &forcing + forcing.transpose();
        let p_dir = linalg::solve_lyapunov_with(
            &self.schur,
            &self.a_closed,
            &forcing,
            LyapunovSide::Transposed,
        )?
        .p;
        let re = r * e;
        let bpy = model.b_lift().transpose() * p_dir * &self.y_lift;
        let mut first = 0.0;
        let mut second = 0.0;
        for i in 0..nb {
            let y_row = self.y_lift.view((i * nx, i * nx), (nx, nx));
            first += (e.transpose() * &re * y_row).trace();
            second += (e.transpose() * bpy.view((i * nu, i * nx), (nu, nx))).trace();
        }
        Ok(2.0 * first - 4.0 * second)
    }
}

fn check_weights(model: &SurrogateModel, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
    if q.shape() != (model.nx(), model.nx()) || r.shape() != (model.nu(), model.nu()) {
        return Err(Error::Dimension(format!(
            "weights are Q {}x{}, R {}x{}; expected {}x{} and {}x{}",
            q.nrows(),
            q.ncols(),
            r.nrows(),
            r.ncols(),
            model.nx(),
            model.nx(),
            model.nu(),
            model.nu()
        )));
    }
    Ok(())
}

/// Surrogate cost `Tr(P_N I_N I_N^T)` with its Lyapunov solutions and gradient.
pub fn evaluate(
    model: &SurrogateModel,
    k: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<CostEvaluation> {
    check_weights(model, q, r)?;
    let a_closed = model.closed_loop(k)?;
    let schur = SchurForm::new(&a_closed)?;
    let check = schur.hurwitz();
    if !check.is_hurwitz {
        return Err(Error::Inadmissible {
            abscissa: check.abscissa,
        });
    }
    let nb = model.blocks();
    let nx = model.nx();
    let dim = model.lifted_dim();

    let weight = q + k.transpose() * r * k;
    let mut forcing_p = DMatrix::zeros(dim, dim);
    for i in 0..nb {
        forcing_p
            .view_mut((i * nx, i * nx), (nx, nx))
            .copy_from(&weight);
    }
    let p_lift =
        linalg::solve_lyapunov_with(&schur, &a_closed, &forcing_p, LyapunovSide::Transposed)?.p;

    let mut forcing_y = DMatrix::zeros(dim, dim);
    forcing_y.view_mut((0, 0), (nx, nx)).fill_with_identity();
    let y_lift = linalg::solve_lyapunov_with(&schur, &a_closed, &forcing_y, LyapunovSide::Plain)?.p;

    let cost = p_lift.view((0, 0), (nx, nx)).trace();

    // 2 [ R K sum_i Y_ii - sum_{i,j} H_ij Y_ji ],  H = B_N^T P_N
    let nu = model.nu();
    let hy = model.b_lift().transpose() * &p_lift * &y_lift;
    let mut y_diag = DMatrix::zeros(nx, nx);
    let mut hy_diag = DMatrix::zeros(nu, nx);
    for i in 0..nb {
        y_diag += y_lift.view((i * nx, i * nx), (nx, nx));
        hy_diag += hy.view((i * nu, i * nx), (nu, nx));
    }
    let gradient = (r * k * y_diag - hy_diag) * 2.0;

    Ok(CostEvaluation {
        cost,
        p_lift,
        y_lift,
        gradient,
        hurwitz_margin: check.abscissa,
        schur,
        a_closed,
    })
}

/// Cost only; returns `None` outside the admissible set.
pub fn cost_if_admissible(
    model: &SurrogateModel,
    k: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<Option<f64>> {
    match evaluate(model, k, q, r) {
        Ok(ev) => Ok(Some(ev.cost)),
        Err(Error::Inadmissible { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Action of the Hessian of the surrogate cost on the direction `e`.
pub fn hessian_action(
    model: &SurrogateModel,
    k: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    e: &DMatrix<f64>,
) -> Result<f64> {
    evaluate(model, k, q, r)?.hessian_action(model, k, r, e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{gauss_rule, Interval};
    use crate::system::{self, MatrixFn, PolyMatrix};
    use approx::assert_abs_diff_eq;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn unit() -> Interval {
        Interval::new(-1.0, 1.0).unwrap()
    }

    // analytic cost of the lifted scalar plant dx = -x + u with Q = R = 1
    fn scalar_cost(k: f64) -> f64 {
        (1.0 + k * k) / (2.0 * (1.0 + k))
    }

    #[test]
    fn deterministic_lift_is_block_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.5, -1.0]);
        let sys = ParametricSystem::constant(a.clone(), b.clone(), unit()).unwrap();
        for n in 0..4 {
            let model = build_surrogate_auto(&sys, n).unwrap();
            let eye = DMatrix::<f64>::identity(n + 1, n + 1);
            assert_abs_diff_eq!(model.a_lift().clone(), eye.kronecker(&a), epsilon = 1e-13);
            assert_abs_diff_eq!(model.b_lift().clone(), eye.kronecker(&b), epsilon = 1e-13);
            let s = model.selector();
            assert_eq!(s.transpose() * &s, DMatrix::identity(2, 2));
        }
    }

    #[test]
    fn illustrative_off_diagonal_block() {
        let model = build_surrogate_auto(&system::illustrative(), 1).unwrap();
        let blk = model.a_lift().view((0, 2), (2, 2)).clone_owned();
        let expect = 0.3 * 3f64.sqrt() / 5.0;
        assert_abs_diff_eq!(blk[(0, 0)], expect, epsilon = 1e-14);
        assert_abs_diff_eq!(blk[(0, 1)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(blk[(1, 0)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(blk[(1, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn scalar_xi_lift_is_tridiagonal() {
        let a = PolyMatrix::from_rows(vec![vec![vec![0.0, 1.0]]]).unwrap();
        let sys = ParametricSystem::new(
            MatrixFn::Polynomial(a),
            MatrixFn::Polynomial(PolyMatrix::constant(&scalar(1.0))),
            unit(),
        )
        .unwrap();
        let model = build_surrogate(&sys, 2, &gauss_rule(5, unit()).unwrap()).unwrap();
        let a = model.a_lift();
        for i in 0..3usize {
            for j in 0..3usize {
                if i.abs_diff(j) != 1 {
                    assert_abs_diff_eq!(a[(i, j)], 0.0, epsilon = 1e-15);
                }
            }
        }
        assert_abs_diff_eq!(a[(0, 1)], 1.0 / 3f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(a[(1, 2)], 2.0 / 15f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn closed_loop_examples() {
        let sys = system::scalar_deterministic();
        let model = build_surrogate_auto(&sys, 3).unwrap();
        assert_eq!(
            model.closed_loop(&scalar(0.0)).unwrap(),
            model.a_lift().clone()
        );
        assert_abs_diff_eq!(
            model.closed_loop(&scalar(1.0)).unwrap(),
            DMatrix::identity(4, 4) * -2.0,
            epsilon = 1e-14
        );
        assert!(model.closed_loop(&DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn scalar_cost_and_gradient() {
        let sys = system::scalar_deterministic();
        let one = scalar(1.0);
        for n in 0..5 {
            let model = build_surrogate_auto(&sys, n).unwrap();
            let ev = evaluate(&model, &one, &one, &one).unwrap();
            assert_abs_diff_eq!(ev.cost, 0.5, epsilon = 1e-14);
            assert_abs_diff_eq!(ev.gradient[(0, 0)], 0.25, epsilon = 1e-14);
            assert_abs_diff_eq!(ev.y_lift[(0, 0)], 0.25, epsilon = 1e-14);

            let kstar = scalar(2f64.sqrt() - 1.0);
            let ev = evaluate(&model, &kstar, &one, &one).unwrap();
            assert_abs_diff_eq!(ev.gradient[(0, 0)], 0.0, epsilon = 1e-8);
            assert_abs_diff_eq!(ev.cost, scalar_cost(kstar[(0, 0)]), epsilon = 1e-14);
        }
    }

    #[test]
    fn scalar_hessian() {
        let sys = system::scalar_deterministic();
        let model = build_surrogate_auto(&sys, 2).unwrap();
        let one = scalar(1.0);
        let h = hessian_action(&model, &one, &one, &one, &one).unwrap();
        // d^2/dK^2 of (1+K^2)/(2+2K) is 2/(1+K)^3
        assert_abs_diff_eq!(h, 0.25, epsilon = 1e-13);
        let h = 1e-4;
        let fd = (scalar_cost(1.0 + h) - 2.0 * scalar_cost(1.0) + scalar_cost(1.0 - h)) / (h * h);
        assert_abs_diff_eq!(fd, 0.25, epsilon = 1e-6);
        assert_eq!(
            hessian_action(&model, &one, &one, &one, &scalar(0.0)).unwrap(),
            0.0
        );
    }

    #[test]
    fn inadmissible_gain_reports_abscissa() {
        let model = build_surrogate_auto(&system::illustrative(), 2).unwrap();
        let eye = DMatrix::identity(2, 2);
        match evaluate(&model, &DMatrix::zeros(2, 2), &eye, &eye) {
            Err(Error::Inadmissible { abscissa }) => assert!(abscissa > 0.0),
            other => panic!("expected inadmissible, got {other:?}"),
        }
        assert_eq!(
            cost_if_admissible(&model, &DMatrix::zeros(2, 2), &eye, &eye).unwrap(),
            None
        );
    }

    #[test]
    fn published_illustrative_gain_is_admissible_and_near_stationary() {
        let model = build_surrogate_auto(&system::illustrative(), 5).unwrap();
        let k = DMatrix::from_row_slice(2, 2, &[1.25, -0.10, -0.82, 1.97]);
        let eye = DMatrix::identity(2, 2);
        assert!(model.admissibility(&k).unwrap().is_hurwitz);
        let ev = evaluate(&model, &k, &eye, &eye).unwrap();
        assert!((ev.cost - 4.92).abs() < 0.01, "cost {}", ev.cost);
        assert_abs_diff_eq!(
            ev.cost,
            ev.dual_cost(&model, &k, &eye, &eye),
            epsilon = 1e-9
        );
    }

    #[test]
    fn non_polynomial_plant_uses_doubling_rule() {
        let sys = ParametricSystem::new(
            MatrixFn::general(1, 1, |x: f64| DMatrix::from_element(1, 1, -2.0 + x.sin())),
            MatrixFn::general(1, 1, |_| DMatrix::from_element(1, 1, 1.0)),
            unit(),
        )
        .unwrap();
        assert_eq!(sys.declared_degree(), None);
        let model = build_surrogate_auto(&sys, 3).unwrap();
        let fine = build_surrogate(&sys, 3, &gauss_rule(200, unit()).unwrap()).unwrap();
        assert_abs_diff_eq!(
            model.a_lift().clone(),
            fine.a_lift().clone(),
            epsilon = 1e-13
        );
    }
}
