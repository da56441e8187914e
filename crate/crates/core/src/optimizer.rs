//! Gradient-descent policy optimization on the surrogate cost.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::surrogate::{self, CostEvaluation, SurrogateModel};
use crate::system::ParametricSystem;

/// Abort when the cost grows past this multiple of the initial cost.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Smallest Armijo step tried before giving up.
pub const MIN_ARMIJO_STEP: f64 = 1e-16;

/// Relative cost increase a fixed step may show and still count as
/// non-increasing; evaluations near the optimum differ only by roundoff.
pub const COST_ROUNDOFF_RTOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LineSearch {
    Fixed,
    Armijo { c: f64, shrink: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub step_size: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub line_search: LineSearch,
    pub record_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            grad_tol: 1e-3,
            max_iters: 100_000,
            line_search: LineSearch::Fixed,
            record_every: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if !(self.grad_tol > 0.0 && self.grad_tol.is_finite()) {
            return Err(Error::Config(format!(
                "gradient tolerance must be positive, got {}",
                self.grad_tol
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be positive".into()));
        }
        if let LineSearch::Armijo { c, shrink } = self.line_search {
            if !(c > 0.0 && c < 1.0) || !(shrink > 0.0 && shrink < 1.0) {
                return Err(Error::Config(format!(
                    "Armijo parameters must lie in (0, 1), got c = {c}, shrink = {shrink}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
    StepRejected,
}

/// One row of the optimization history: cost and gradient norm at `K_iter`
/// and the step size used to leave it (zero on the final row).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizationReport {
    pub iterates: Vec<IterateRecord>,
    #[serde(serialize_with = "crate::config::serialize_matrix")]
    pub final_gain: DMatrix<f64>,
    pub final_cost: f64,
    pub final_grad_norm: f64,
    /// Number of accepted gradient steps.
    pub iterations: usize,
    pub termination: Termination,
    pub diagnostics: Option<String>,
    pub wall_time: f64,
}

/// Nominal LQR gain at the interval midpoint, checked against the lifted
/// closed loop of order `order`.
///
/// The Newton–Riccati iteration is seeded with the first stabilizing gain
/// among `c B^T` (`c` in 1, 10, 100, 1000), then Bass's gain, then
/// `fallback` if given.
pub fn initial_gain(
    sys: &ParametricSystem,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    order: usize,
    fallback: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let xi = sys.interval().midpoint();
    let a = sys.a(xi);
    let b = sys.b(xi);
    if b.iter().all(|v| *v == 0.0) {
        return Err(Error::Unstabilizable(
            "input matrix is zero at the nominal parameter".into(),
        ));
    }
    let stabilizes = |k: &DMatrix<f64>| -> bool {
        linalg::is_hurwitz(&(&a - &b * k)).is_ok_and(|h| h.is_hurwitz)
    };
    let mut seed = [1.0, 10.0, 100.0, 1000.0]
        .iter()
        .map(|c| b.transpose() * *c)
        .find(|k| stabilizes(k));
    if seed.is_none() {
        seed = linalg::bass_stabilizing_gain(&a, &b)
            .ok()
            .filter(|k| stabilizes(k));
    }
    if seed.is_none() {
        seed = fallback.filter(|k| stabilizes(k)).cloned();
    }
    let seed = seed.ok_or_else(|| {
        Error::Unstabilizable("no stabilizing seed gain found for the nominal plant".into())
    })?;
    let care = linalg::kleinman_care(&a, &b, q, r, &seed)?;
    let model = surrogate::build_surrogate_auto(sys, order)?;
    let check = model.admissibility(&care.k)?;
    if !check.is_hurwitz {
        log::error!(
            "nominal LQR gain does not stabilize the order-{order} surrogate; \
             larger uncertainty needs a robust initializer"
        );
        return Err(Error::Inadmissible {
            abscissa: check.abscissa,
        });
    }
    Ok(care.k)
}

/// Runs `K <- K - eta grad J_N(K)` from `k0` until the gradient's Frobenius
/// norm drops to `grad_tol`.
pub fn optimize(
    model: &SurrogateModel,
    k0: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    cfg: &OptimizerConfig,
) -> Result<OptimizationReport> {
    optimize_with(model, k0, q, r, cfg, |_, _, _| {})
}

/// [`optimize`], calling `observe(iter, K, evaluation)` on the initial gain
/// and on every accepted iterate.
pub fn optimize_with<F>(
    model: &SurrogateModel,
    k0: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    cfg: &OptimizerConfig,
    mut observe: F,
) -> Result<OptimizationReport>
where
    F: FnMut(usize, &DMatrix<f64>, &CostEvaluation),
{
    cfg.validate()?;
    linalg::check_spd(q, "Q", 1e-12)?;
    linalg::check_spd(r, "R", 1e-12)?;
    let start = Instant::now();

    let mut k = k0.clone();
    let mut current = surrogate::evaluate(model, &k, q, r)?;
    let initial_cost = current.cost;
    observe(0, &k, &current);
    let mut iterates = Vec::new();
    let mut iterations = 0;
    let mut diagnostics = None;

    let termination = loop {
        let grad_norm = current.gradient_norm();
        if grad_norm <= cfg.grad_tol {
            break Termination::Converged;
        }
        if iterations >= cfg.max_iters {
            break Termination::MaxIters;
        }
        let step = match cfg.line_search {
            LineSearch::Fixed => fixed_step(model, &k, q, r, cfg.step_size, &current),
            LineSearch::Armijo { c, shrink } => {
                armijo_step(model, &k, q, r, cfg.step_size, c, shrink, &current)
            }
        }?;
        let (step_size, next_k, next) = match step {
            StepOutcome::Accepted { step, k, eval } => (step, k, eval),
            StepOutcome::Rejected(reason) => {
                diagnostics = Some(reason);
                break Termination::StepRejected;
            }
        };
        if iterations % cfg.record_every == 0 {
            iterates.push(IterateRecord {
                iter: iterations,
                cost: current.cost,
                grad_norm,
                step: step_size,
            });
        }
        iterations += 1;
        k = next_k;
        current = *next;
        observe(iterations, &k, &current);
        if current.cost > DIVERGENCE_FACTOR * initial_cost {
            diagnostics = Some(format!(
                "cost {:.6e} exceeded {DIVERGENCE_FACTOR:e} times the initial cost",
                current.cost
            ));
            break Termination::StepRejected;
        }
    };
    iterates.push(IterateRecord {
        iter: iterations,
        cost: current.cost,
        grad_norm: current.gradient_norm(),
        step: 0.0,
    });

    Ok(OptimizationReport {
        iterates,
        final_cost: current.cost,
        final_grad_norm: current.gradient_norm(),
        final_gain: k,
        iterations,
        termination,
        diagnostics,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

enum StepOutcome {
    Accepted {
        step: f64,
        k: DMatrix<f64>,
        eval: Box<CostEvaluation>,
    },
    Rejected(String),
}

fn fixed_step(
    model: &SurrogateModel,
    k: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    eta: f64,
    current: &CostEvaluation,
) -> Result<StepOutcome> {
    let candidate = k - &current.gradient * eta;
    match surrogate::evaluate(model, &candidate, q, r) {
        Ok(ev) if ev.cost <= current.cost + COST_ROUNDOFF_RTOL * current.cost.abs() => {
            Ok(StepOutcome::Accepted {
                step: eta,
                k: candidate,
                eval: Box::new(ev),
            })
        }
        Ok(ev) => Ok(StepOutcome::Rejected(format!(
            "fixed step {eta} increased the cost from {:.12e} to {:.12e}",
            current.cost, ev.cost
        ))),
        Err(Error::Inadmissible { abscissa }) => Ok(StepOutcome::Rejected(format!(
            "fixed step {eta} left the admissible set (abscissa {abscissa:.3e})"
        ))),
        Err(e) => Err(e),
    }
}

#[allow(clippy::too_many_arguments)]
fn armijo_step(
    model: &SurrogateModel,
    k: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    eta0: f64,
    c: f64,
    shrink: f64,
    current: &CostEvaluation,
) -> Result<StepOutcome> {
    let g2 = current.gradient.norm_squared();
    let mut eta = eta0;
    while eta >= MIN_ARMIJO_STEP {
        let candidate = k - &current.gradient * eta;
        match surrogate::evaluate(model, &candidate, q, r) {
            Ok(ev) if ev.cost <= current.cost - c * eta * g2 => {
                return Ok(StepOutcome::Accepted {
                    step: eta,
                    k: candidate,
                    eval: Box::new(ev),
                })
            }
            Ok(_) | Err(Error::Inadmissible { .. }) => {}
            Err(e) => return Err(e),
        }
        eta *= shrink;
    }
    Ok(StepOutcome::Rejected(format!(
        "Armijo backtracking fell below step {MIN_ARMIJO_STEP:e}"
    )))
}

/// Coefficient of determination of a least-squares line through `(x, y)`.
pub fn linear_fit_r2(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    if n < 2.0 {
        return 1.0;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    if sxx == 0.0 {
        return 0.0;
    }
    sxy * sxy / (sxx * syy)
}

/// `R^2` of `log ||grad||` against the iteration index over the last half
/// of the recorded history.
pub fn tail_log_linearity(report: &OptimizationReport) -> f64 {
    let it = &report.iterates;
    let tail = &it[it.len() / 2..];
    let x: Vec<f64> = tail.iter().map(|r| r.iter as f64).collect();
    let y: Vec<f64> = tail.iter().map(|r| r.grad_norm.ln()).collect();
    linear_fit_r2(&x, &y)
}
