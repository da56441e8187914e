mod common;

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use pce_lqr::basis::{self, gauss_rule, Interval, LegendreBasis};
use pce_lqr::linalg::{self, LyapunovSide};
use pce_lqr::optimizer::{self, LineSearch, OptimizerConfig, Termination};
use pce_lqr::surrogate::{self, build_surrogate_auto};
use pce_lqr::system::{self, MatrixFn, ParametricSystem, PolyMatrix};
use pce_lqr::validation;
use proptest::prelude::*;

use common::*;

fn interval() -> impl Strategy<Value = Interval> {
    (-3.0..3.0f64, 0.1..4.0f64).prop_map(|(a, w)| Interval::new(a, a + w).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn basis_is_orthonormal(order in 0usize..=20, iv in interval(), extra in 0usize..4) {
        let rule = gauss_rule(order + 1 + extra, iv).unwrap();
        let basis = LegendreBasis::new(order, iv);
        let gram = basis::project_outer_kron(&basis, &rule, |_| DMatrix::identity(1, 1)).unwrap();
        prop_assert!((gram - DMatrix::identity(order + 1, order + 1)).norm() <= 1e-10);
    }

    #[test]
    fn projection_preserves_symmetry(order in 0usize..8, seed in any::<u64>(), n in 1usize..4) {
        let mut rng = rng(seed);
        let s0 = random_symmetric(&mut rng, n);
        let s1 = random_symmetric(&mut rng, n);
        let iv = Interval::new(-1.0, 1.0).unwrap();
        let rule = gauss_rule(order + 3, iv).unwrap();
        let lifted = basis::project_outer_kron(&LegendreBasis::new(order, iv), &rule, |xi| &s0 + &s1 * xi.sin())
            .unwrap();
        prop_assert!((&lifted - lifted.transpose()).amax() <= 1e-12);
    }

    #[test]
    fn lifted_norm_is_bounded_by_sup_norm(order in 0usize..8, seed in any::<u64>(), n in 1usize..4) {
        let mut rng = rng(seed);
        let sys = random_stable_poly_system(&mut rng, n, 1, 3, 0.0);
        let rule = gauss_rule(basis::default_rule_order(order, Some(3)), sys.interval()).unwrap();
        let lifted = basis::project_outer_kron(&LegendreBasis::new(order, sys.interval()), &rule, |xi| sys.a(xi))
            .unwrap();
        let sup = rule.nodes().iter().map(|&xi| linalg::spectral_norm(&sys.a(xi))).fold(0.0, f64::max);
        prop_assert!(linalg::spectral_norm(&lifted) <= sup + 1e-10);
    }

    #[test]
    fn quadrature_is_exact_for_polynomial_moments(order in 0usize..6, degree in 0usize..6, iv in interval()) {
        // Moments E[phi_i phi_j xi^d] from a rule just large enough versus a much larger one.
        let m = (2 * order + degree) / 2 + 1;
        let basis = LegendreBasis::new(order, iv);
        let f = |xi: f64| DMatrix::from_element(1, 1, xi.powi(degree as i32));
        let exact = basis::project_outer_kron(&basis, &gauss_rule(m, iv).unwrap(), f).unwrap();
        let fine = basis::project_outer_kron(&basis, &gauss_rule(m + 20, iv).unwrap(), f).unwrap();
        let scale = 1.0 + fine.amax();
        prop_assert!((exact - fine).amax() <= 1e-12 * scale);
    }

    #[test]
    fn schur_solver_matches_kronecker_reference(seed in any::<u64>(), n in 1usize..7, plain in any::<bool>()) {
        let mut rng = rng(seed);
        let a = random_hurwitz(&mut rng, n, 0.2);
        let q = random_symmetric(&mut rng, n);
        let side = if plain { LyapunovSide::Plain } else { LyapunovSide::Transposed };
        let fast = linalg::solve_lyapunov(&a, &q, side).unwrap().p;
        let slow = linalg::solve_lyapunov_kron(&a, &q, side).unwrap();
        prop_assert!((&fast - &slow).amax() <= 1e-8 * (1.0 + slow.amax()));
    }

    #[test]
    fn lyapunov_trace_pairing(seed in any::<u64>(), n in 1usize..9) {
        let mut rng = rng(seed);
        let a = random_hurwitz(&mut rng, n, 0.5);
        let m = random_symmetric(&mut rng, n);
        let nn = random_symmetric(&mut rng, n);
        let p = linalg::solve_lyapunov(&a, &m, LyapunovSide::Transposed).unwrap().p;
        let y = linalg::solve_lyapunov(&a, &nn, LyapunovSide::Plain).unwrap().p;
        let rhs = (&nn * &p).trace();
        prop_assert!(((&m * &y).trace() - rhs).abs() <= 1e-8 * (1.0 + rhs.abs()));
    }

    #[test]
    fn lyapunov_monotonicity(seed in any::<u64>(), n in 1usize..9) {
        let mut rng = rng(seed);
        let a = random_hurwitz(&mut rng, n, 0.5);
        let q1 = random_psd(&mut rng, n, n);
        let q2 = &q1 + random_psd(&mut rng, n, 1);
        let p1 = linalg::solve_lyapunov(&a, &q1, LyapunovSide::Transposed).unwrap().p;
        let p2 = linalg::solve_lyapunov(&a, &q2, LyapunovSide::Transposed).unwrap().p;
        prop_assert!(linalg::min_eigenvalue(&(p2 - p1)) >= -1e-9);
    }

    #[test]
    fn trace_inequality(seed in any::<u64>(), n in 1usize..9) {
        let mut rng = rng(seed);
        let s = random_symmetric(&mut rng, n);
        let p = random_psd(&mut rng, n, n);
        let (tr, sp) = (p.trace(), (&s * &p).trace());
        let tol = 1e-12 * (1.0 + tr * s.amax());
        prop_assert!(linalg::min_eigenvalue(&s) * tr <= sp + tol);
        prop_assert!(sp <= linalg::max_eigenvalue(&s) * tr + tol);
    }

    #[test]
    fn complete_square(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..6, log_alpha in -2.0..2.0f64) {
        let mut rng = rng(seed);
        let x = random_matrix(&mut rng, rows, cols, 2.0);
        let y = random_matrix(&mut rng, rows, cols, 2.0);
        let alpha = 10f64.powf(log_alpha);
        let xty = x.transpose() * &y;
        let gap = x.transpose() * &x * alpha + y.transpose() * &y / alpha - &xty - xty.transpose();
        prop_assert!(linalg::min_eigenvalue(&gap) >= -1e-9);
    }

    #[test]
    fn cauchy_schwarz_for_random_matrices(seed in any::<u64>(), rows in 1usize..4, cols in 1usize..4) {
        let mut rng = rng(seed);
        let (x0, x1) = (random_matrix(&mut rng, rows, cols, 1.0), random_matrix(&mut rng, rows, cols, 1.0));
        let (y0, y1) = (random_matrix(&mut rng, rows, cols, 1.0), random_matrix(&mut rng, rows, cols, 1.0));
        let rule = gauss_rule(12, Interval::new(0.0, 2.0).unwrap()).unwrap();
        let mut exy = DMatrix::zeros(rows, rows);
        let mut exx = exy.clone();
        let mut eyy = exy.clone();
        for (xi, w) in rule.iter() {
            let x = &x0 + &x1 * xi.exp();
            let y = &y0 + &y1 * xi.cos();
            exy += &x * y.transpose() * w;
            exx += &x * x.transpose() * w;
            eyy += &y * y.transpose() * w;
        }
        let bound = (linalg::spectral_norm(&exx) * linalg::spectral_norm(&eyy)).sqrt();
        prop_assert!(linalg::spectral_norm(&exy) <= bound + 1e-10);
    }

    #[test]
    fn dual_cost_matches_primal(seed in any::<u64>(), nx in 1usize..4, nu in 1usize..3, order in 0usize..6) {
        let mut rng = rng(seed);
        let sys = random_stable_poly_system(&mut rng, nx, nu, 2, 0.5);
        let q = random_spd(&mut rng, nx);
        let r = random_spd(&mut rng, nu);
        let model = build_surrogate_auto(&sys, order).unwrap();
        let k = random_admissible_gain(&mut rng, &model, &DMatrix::zeros(nu, nx), 0.3);
        let ev = surrogate::evaluate(&model, &k, &q, &r).unwrap();
        prop_assert!((ev.cost - ev.dual_cost(&model, &k, &q, &r)).abs() <= 1e-8 * ev.cost.abs());
    }

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), nx in 1usize..4, nu in 1usize..3, order in 0usize..5) {
        let mut rng = rng(seed);
        let sys = random_stable_poly_system(&mut rng, nx, nu, 2, 0.5);
        let q = random_spd(&mut rng, nx);
        let r = random_spd(&mut rng, nu);
        let model = build_surrogate_auto(&sys, order).unwrap();
        let k = random_admissible_gain(&mut rng, &model, &DMatrix::zeros(nu, nx), 0.3);
        let check = validation::gradient_check(&model, &k, &q, &r, 1e-6 * (1.0 + k.norm())).unwrap();
        prop_assert!(check.skipped.is_empty());
        prop_assert!(check.max_rel_error <= 1e-5, "relative error {}", check.max_rel_error);
    }

    #[test]
    fn hessian_matches_second_differences(seed in any::<u64>(), nx in 1usize..4, nu in 1usize..3, order in 0usize..5) {
        let mut rng = rng(seed);
        let sys = random_stable_poly_system(&mut rng, nx, nu, 2, 0.5);
        let q = random_spd(&mut rng, nx);
        let r = random_spd(&mut rng, nu);
        let model = build_surrogate_auto(&sys, order).unwrap();
        let k = random_admissible_gain(&mut rng, &model, &DMatrix::zeros(nu, nx), 0.3);
        let mut e = random_matrix(&mut rng, nu, nx, 1.0);
        e /= e.norm();
        let analytic = surrogate::hessian_action(&model, &k, &q, &r, &e).unwrap();
        let h = 1e-4;
        let cost = |m: &DMatrix<f64>| surrogate::evaluate(&model, m, &q, &r).unwrap().cost;
        let fd = (cost(&(&k + &e * h)) - 2.0 * cost(&k) + cost(&(&k - &e * h))) / (h * h);
        prop_assert!((fd - analytic).abs() <= 1e-4 * analytic.abs(), "fd {fd} analytic {analytic}");
    }

    #[test]
    fn min_eigenvalue_bound(seed in any::<u64>(), nx in 1usize..4, nu in 1usize..3, order in 0usize..6) {
        let mut rng = rng(seed);
        let sys = random_stable_poly_system(&mut rng, nx, nu, 2, 0.5);
        let q = random_spd(&mut rng, nx);
        let r = random_spd(&mut rng, nu);
        let model = build_surrogate_auto(&sys, order).unwrap();
        let k = random_admissible_gain(&mut rng, &model, &DMatrix::zeros(nu, nx), 0.3);
        let ev = surrogate::evaluate(&model, &k, &q, &r).unwrap();
        let weight = &q + k.transpose() * &r * &k;
        let bound = linalg::min_eigenvalue(&weight) / (2.0 * linalg::spectral_norm(ev.closed_loop()));
        prop_assert!(linalg::min_eigenvalue(&ev.p_lift) >= bound - 1e-9);
    }

    #[test]
    fn gain_norm_bound(seed in any::<u64>(), nx in 1usize..4, nu in 1usize..3) {
        let mut rng = rng(seed);
        let sys = random_stable_poly_system(&mut rng, nx, nu, 2, 0.5);
        let q = random_spd(&mut rng, nx);
        let r = random_spd(&mut rng, nu);
        let xi = sys.interval().midpoint();
        let (a, b) = (sys.a(xi), sys.b(xi));
        let k = loop {
            let cand = random_matrix(&mut rng, nu, nx, 2.0);
            if linalg::is_hurwitz(&(&a - &b * &cand)).unwrap().is_hurwitz {
                break cand;
            }
        };
        let tr = validation::cost_at_xi(&sys, &k, &q, &r, xi).unwrap().trace_cost;
        let lr = linalg::min_eigenvalue(&r);
        let a1 = 2.0 * linalg::spectral_norm(&b) / lr;
        let a2 = (2.0 * linalg::spectral_norm(&a) / lr).sqrt();
        prop_assert!(k.norm() <= a1 * tr + a2 * tr.sqrt());
    }

    #[test]
    fn constant_plant_collapses_to_nominal_lqr(seed in any::<u64>(), nx in 1usize..4, nu in 1usize..3, order in 0usize..=8) {
        let mut rng = rng(seed);
        let a = random_hurwitz(&mut rng, nx, 0.3);
        let b = random_matrix(&mut rng, nx, nu, 1.0);
        let q = random_spd(&mut rng, nx);
        let r = random_spd(&mut rng, nu);
        let k = random_matrix(&mut rng, nu, nx, 0.1);
        let ac = &a - &b * &k;
        prop_assume!(linalg::is_hurwitz(&ac).unwrap().is_hurwitz);
        let sys = ParametricSystem::constant(a, b, Interval::new(-1.0, 1.0).unwrap()).unwrap();
        let model = build_surrogate_auto(&sys, order).unwrap();
        let lifted = surrogate::evaluate(&model, &k, &q, &r).unwrap().cost;
        let weight = &q + k.transpose() * &r * &k;
        let nominal = linalg::solve_lyapunov(&ac, &weight, LyapunovSide::Transposed).unwrap().p.trace();
        prop_assert!((lifted - nominal).abs() <= 1e-10 * (1.0 + nominal));
    }
}

#[test]
fn scalar_optimization_reaches_riccati_optimum() {
    let sys = system::scalar_deterministic();
    let one = scalar(1.0);
    let model = build_surrogate_auto(&sys, 3).unwrap();
    let cfg = OptimizerConfig {
        step_size: 0.1,
        grad_tol: 1e-8,
        ..OptimizerConfig::default()
    };
    let report = optimizer::optimize(&model, &one, &one, &one, &cfg).unwrap();
    assert_eq!(
        report.termination,
        Termination::Converged,
        "{:?}",
        report.diagnostics
    );
    let opt = 2f64.sqrt() - 1.0;
    assert_relative_eq!(report.final_gain[(0, 0)], opt, epsilon = 1e-7);
    assert_relative_eq!(report.final_cost, opt, epsilon = 1e-12);
}

#[test]
fn armijo_descent_is_monotone_and_admissible() {
    let sys = system::illustrative();
    let (q, r) = (DMatrix::identity(2, 2), DMatrix::identity(2, 2));
    let model = build_surrogate_auto(&sys, 4).unwrap();
    let k0 = optimizer::initial_gain(&sys, &q, &r, 4, None).unwrap();
    let cfg = OptimizerConfig {
        step_size: 1.0,
        line_search: LineSearch::Armijo {
            c: 1e-4,
            shrink: 0.5,
        },
        ..OptimizerConfig::default()
    };
    let mut costs = Vec::new();
    let report = optimizer::optimize_with(&model, &k0, &q, &r, &cfg, |_, k, ev| {
        assert!(model.admissibility(k).unwrap().is_hurwitz);
        costs.push(ev.cost);
    })
    .unwrap();
    assert_eq!(report.termination, Termination::Converged);
    assert!(costs.windows(2).all(|w| w[1] <= w[0]));
    assert_relative_eq!(report.final_cost, 4.9184, epsilon = 1e-3);
}

#[test]
fn converged_gain_is_a_local_minimum() {
    let sys = system::illustrative();
    let (q, r) = (DMatrix::identity(2, 2), DMatrix::identity(2, 2));
    let model = build_surrogate_auto(&sys, 5).unwrap();
    let k0 = optimizer::initial_gain(&sys, &q, &r, 5, None).unwrap();
    let report = optimizer::optimize(&model, &k0, &q, &r, &OptimizerConfig::default()).unwrap();
    assert!(report.final_grad_norm <= 1e-3);
    let mut rng = rng(11);
    for _ in 0..10 {
        let mut e = random_matrix(&mut rng, 2, 2, 1.0);
        e /= e.norm();
        let curvature = surrogate::hessian_action(&model, &report.final_gain, &q, &r, &e).unwrap();
        assert!(curvature >= -1e-6, "negative curvature {curvature}");
    }
}

#[test]
fn surrogate_matches_true_cost_at_order_eight() {
    for sys in [system::illustrative(), system::mass_spring()] {
        let (q, r) = (
            DMatrix::identity(sys.nx(), sys.nx()),
            DMatrix::identity(sys.nu(), sys.nu()),
        );
        let k = optimizer::initial_gain(&sys, &q, &r, 8, None).unwrap();
        let model = build_surrogate_auto(&sys, 8).unwrap();
        let surrogate_cost = surrogate::evaluate(&model, &k, &q, &r).unwrap().cost;
        let truth = validation::true_cost(&sys, &k, &q, &r, 64).unwrap();
        assert!(truth.converged);
        assert!(
            (truth.value - surrogate_cost).abs() <= 1e-6f64.max(1e-4 * truth.value),
            "true {} surrogate {surrogate_cost}",
            truth.value
        );
    }
}

#[test]
fn per_parameter_costs_average_to_the_surrogate_cost() {
    for sys in [system::illustrative(), system::mass_spring()] {
        let (q, r) = (
            DMatrix::identity(sys.nx(), sys.nx()),
            DMatrix::identity(sys.nu(), sys.nu()),
        );
        let model = build_surrogate_auto(&sys, 5).unwrap();
        let k0 = optimizer::initial_gain(&sys, &q, &r, 5, None).unwrap();
        let report = optimizer::optimize(&model, &k0, &q, &r, &OptimizerConfig::default()).unwrap();
        let grid = sys.interval().linspace(21);
        let costs: Vec<f64> = grid
            .iter()
            .map(|&xi| {
                validation::cost_at_xi(&sys, &report.final_gain, &q, &r, xi)
                    .unwrap()
                    .trace_cost
            })
            .collect();
        assert!(costs.iter().all(|c| c.is_finite()));
        let mean = costs.iter().sum::<f64>() / costs.len() as f64;
        assert!((mean - report.final_cost).abs() <= 0.02 * report.final_cost);
    }
}

#[test]
fn error_decay_on_both_reference_plants() {
    for (sys, orders) in [
        (system::illustrative(), vec![1, 2, 3, 4, 5, 6]),
        (system::mass_spring(), vec![1, 2, 3, 4, 5]),
    ] {
        let (q, r) = (
            DMatrix::identity(sys.nx(), sys.nx()),
            DMatrix::identity(sys.nu(), sys.nu()),
        );
        let k = optimizer::initial_gain(&sys, &q, &r, 5, None).unwrap();
        let study = validation::convergence_study(&sys, &k, &q, &r, &orders).unwrap();
        assert!(study.abs_errors.iter().all(Option::is_some));
        assert!(study.is_non_increasing(1e-10), "{:?}", study.abs_errors);
    }
}

#[test]
fn deterministic_plant_has_no_truncation_error() {
    let sys = system::scalar_deterministic();
    let one = scalar(1.0);
    let study = validation::convergence_study(&sys, &one, &one, &one, &[0, 1, 2, 5]).unwrap();
    for e in study.abs_errors {
        assert!(e.unwrap() <= 1e-10);
    }
}

#[test]
fn monte_carlo_agrees_with_quadrature() {
    let sys = system::illustrative();
    let (q, r) = (DMatrix::identity(2, 2), DMatrix::identity(2, 2));
    let k = optimizer::initial_gain(&sys, &q, &r, 5, None).unwrap();
    let truth = validation::true_cost(&sys, &k, &q, &r, 64).unwrap().value;
    let (mean, stderr) = validation::monte_carlo_cost(&sys, &k, &q, &r, 4000, 3).unwrap();
    assert!(
        (mean - truth).abs() <= 5.0 * stderr,
        "mc {mean} +/- {stderr}, quadrature {truth}"
    );
}

#[test]
fn non_polynomial_plant_uses_a_converged_rule() {
    let iv = Interval::new(0.0, 1.0).unwrap();
    let a = MatrixFn::general(1, 1, |xi| DMatrix::from_element(1, 1, -1.0 - xi.exp()));
    let b = MatrixFn::Polynomial(PolyMatrix::constant(&DMatrix::identity(1, 1)));
    let sys = ParametricSystem::new(a, b, iv).unwrap();
    let model = build_surrogate_auto(&sys, 4).unwrap();
    let reference = surrogate::build_surrogate(&sys, 4, &gauss_rule(200, iv).unwrap()).unwrap();
    assert!((model.a_lift() - reference.a_lift()).amax() <= 1e-12);
}
