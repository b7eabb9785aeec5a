//! Newton optimizers for the binary panel likelihood.
//!
//! The concentrated optimizer solves each intercept as a scalar concave
//! problem for fixed β and updates β with the Schur-complement Hessian, so the
//! cost stays linear in the number of intercepts. The joint optimizer factors
//! the dense Hessian and exists mainly as a cross-check.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::covariance::schur;
use super::likelihood::{Derivatives, Problem};
use super::FitOptions;
use crate::error::{Error, Result};

/// One accepted outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loglik: f64,
    pub gradient_norm: f64,
    /// Step length actually taken after halving (0 for the starting point).
    pub step: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub derivs: Derivatives,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub trace: Vec<IterationRecord>,
}

pub(crate) fn sup_norm(d: &Derivatives) -> f64 {
    d.g_beta.iter().chain(&d.g_alpha).fold(0.0f64, |m, v| m.max(v.abs()))
}

pub(crate) fn converged(grad: f64, loglik: f64, tol: f64) -> bool {
    grad < tol * (1.0 + loglik.abs())
}

/// Used after a failed line search: true when the Newton decrement g'H⁻¹g
/// (twice the predicted gain of a full step) is below what the objective can
/// resolve in floating point, so the stall is at the optimum.
pub(crate) fn negligible_decrement(decrement: f64, objective: f64) -> bool {
    decrement < 1e-10 * (1.0 + objective.abs())
}

/// Maximizes ℓ over α_g alone for fixed x'β.
fn solve_intercept(problem: &Problem<'_>, g: usize, xb: &[f64], start: f64) -> (f64, f64) {
    let mut a = start;
    let (mut ll, mut s, mut h) = problem.group_terms(g, xb, a);
    for _ in 0..200 {
        if s.abs() <= 1e-12 * (1.0 + ll.abs()) || !(h < 0.0) {
            break;
        }
        let mut step = (-s / h).clamp(-10.0, 10.0);
        let mut moved = false;
        for _ in 0..60 {
            let cand = a + step;
            let (ll_c, s_c, h_c) = problem.group_terms(g, xb, cand);
            if ll_c >= ll {
                a = cand;
                (ll, s, h) = (ll_c, s_c, h_c);
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (a, ll)
}

fn solve_all_intercepts(problem: &Problem<'_>, beta: &[f64], start: &[f64]) -> (Vec<f64>, f64) {
    let xb = problem.linear_part(beta);
    let mut total = 0.0;
    let alpha = (0..problem.n_groups)
        .map(|g| {
            let (a, ll) = solve_intercept(problem, g, &xb, start[g]);
            total += ll;
            a
        })
        .collect();
    (alpha, total)
}

/// Cholesky of a matrix that must be numerically positive definite.
fn checked_cholesky(m: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let diag: Vec<f64> = (0..m.nrows()).map(|k| m[(k, k)]).collect();
    let chol = m.cholesky().ok_or(Error::CollinearDesign)?;
    let l = chol.l_dirty();
    for (k, dk) in diag.iter().enumerate() {
        if !(l[(k, k)] * l[(k, k)] > 1e-11 * dk.abs().max(f64::MIN_POSITIVE)) {
            return Err(Error::CollinearDesign);
        }
    }
    Ok(chol)
}

pub(crate) fn concentrated(
    problem: &Problem<'_>,
    beta0: Vec<f64>,
    alpha0: Vec<f64>,
    opts: &FitOptions,
) -> Result<Solution> {
    let j = problem.n_beta();
    let mut beta = beta0;
    let (mut alpha, _) = solve_all_intercepts(problem, &beta, &alpha0);
    let mut d = problem.derivatives(&beta, &alpha);
    let mut trace = Vec::new();
    let mut last_step = 0.0;
    for iter in 0..=opts.max_iter {
        let grad = sup_norm(&d);
        trace.push(IterationRecord { iteration: iter, loglik: d.loglik, gradient_norm: grad, step: last_step });
        if converged(grad, d.loglik, opts.tol) {
            return Ok(Solution {
                beta,
                alpha,
                gradient_norm: grad,
                derivs: d,
                iterations: iter,
                converged: true,
                trace,
            });
        }
        if iter == opts.max_iter {
            break;
        }
        if j == 0 {
            // Intercept-only: the inner solves are the whole problem.
            let (a, _) = solve_all_intercepts(problem, &beta, &alpha);
            alpha = a;
            d = problem.derivatives(&beta, &alpha);
            last_step = 1.0;
            continue;
        }
        let neg_h = -&d.h_bb;
        let neg_q = -&d.h_bg;
        let neg_d: Vec<f64> = d.h_gg.iter().map(|v| -v).collect();
        let s = schur(&neg_h, &neg_q, &neg_d);
        let chol = checked_cholesky(s)?;
        let dir = chol.solve(&d.g_beta);
        // dα/dβ along the direction from the implicit-function theorem.
        let dalpha: Vec<f64> = (0..problem.n_groups).map(|g| -d.h_bg.column(g).dot(&dir) / d.h_gg[g]).collect();

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand_beta: Vec<f64> = beta.iter().zip(dir.iter()).map(|(b, dd)| b + step * dd).collect();
            let start: Vec<f64> = alpha.iter().zip(&dalpha).map(|(a, da)| a + step * da).collect();
            let (cand_alpha, ll) = solve_all_intercepts(problem, &cand_beta, &start);
            if ll.is_finite() && ll >= d.loglik {
                accepted = Some((cand_beta, cand_alpha));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((b, a)) => {
                beta = b;
                alpha = a;
                d = problem.derivatives(&beta, &alpha);
                last_step = step;
            }
            None => {
                if negligible_decrement(d.g_beta.dot(&dir), d.loglik) {
                    let iterations = trace.len() - 1;
                    return Ok(Solution {
                        beta,
                        alpha,
                        gradient_norm: grad,
                        derivs: d,
                        iterations,
                        converged: true,
                        trace,
                    });
                }
                break;
            }
        }
    }
    let grad = sup_norm(&d);
    let iterations = trace.len().saturating_sub(1);
    Ok(Solution { beta, alpha, gradient_norm: grad, derivs: d, iterations, converged: false, trace })
}

pub(crate) fn joint(problem: &Problem<'_>, beta0: Vec<f64>, alpha0: Vec<f64>, opts: &FitOptions) -> Result<Solution> {
    let j = problem.n_beta();
    let mut theta: Vec<f64> = beta0.into_iter().chain(alpha0).collect();
    let mut d = problem.derivatives(&theta[..j], &theta[j..]);
    let mut trace = Vec::new();
    let mut last_step = 0.0;
    for iter in 0..=opts.max_iter {
        let grad = sup_norm(&d);
        trace.push(IterationRecord { iteration: iter, loglik: d.loglik, gradient_norm: grad, step: last_step });
        if converged(grad, d.loglik, opts.tol) {
            let alpha = theta.split_off(j);
            return Ok(Solution {
                beta: theta,
                alpha,
                gradient_norm: grad,
                derivs: d,
                iterations: iter,
                converged: true,
                trace,
            });
        }
        if iter == opts.max_iter {
            break;
        }
        let neg_h = -Problem::dense_hessian(&d);
        let chol = checked_cholesky(neg_h)?;
        let score = Problem::dense_score(&d);
        let dir: DVector<f64> = chol.solve(&score);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<f64> = theta.iter().zip(dir.iter()).map(|(t, dd)| t + step * dd).collect();
            let ll = problem.loglik(&cand[..j], &cand[j..]);
            if ll.is_finite() && ll >= d.loglik {
                accepted = Some(cand);
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some(c) => {
                theta = c;
                d = problem.derivatives(&theta[..j], &theta[j..]);
                last_step = step;
            }
            None => {
                if negligible_decrement(score.dot(&dir), d.loglik) {
                    let alpha = theta.split_off(j);
                    let iterations = trace.len() - 1;
                    return Ok(Solution {
                        beta: theta,
                        alpha,
                        gradient_norm: grad,
                        derivs: d,
                        iterations,
                        converged: true,
                        trace,
                    });
                }
                break;
            }
        }
    }
    let grad = sup_norm(&d);
    let iterations = trace.len().saturating_sub(1);
    let alpha = theta.split_off(j);
    Ok(Solution { beta: theta, alpha, gradient_norm: grad, derivs: d, iterations, converged: false, trace })
}
