//! Jeffreys-penalized logit with individual intercepts.
//!
//! Maximizes ℓ(θ) + ½ log det I(θ) by modified-score iterations: the
//! penalized gradient is Σ (y − p + h(½ − p)) z with h the leverage of each
//! observation. The information matrix has a dense slope block and a
//! diagonal intercept block, so log-determinant and leverages come from the
//! Schur complement S = P − Σ_i Q_i Q_i' / D_i.

use nalgebra::{DMatrix, DVector};

use super::covariance::{schur, Covariance};
use super::likelihood::{dot, Problem};
use super::link::logistic;
use super::newton::{negligible_decrement, IterationRecord};
use super::FitOptions;
use crate::error::{Error, Result};

pub(crate) struct FirthSolution {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub loglik: f64,
    pub penalized: f64,
    pub vcov: Covariance,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub trace: Vec<IterationRecord>,
}

struct State {
    penalized: f64,
    loglik: f64,
    /// Modified score over (β, α).
    u_beta: DVector<f64>,
    u_alpha: Vec<f64>,
    p: DMatrix<f64>,
    q: DMatrix<f64>,
    d: Vec<f64>,
    s_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

fn evaluate(problem: &Problem<'_>, beta: &[f64], alpha: &[f64]) -> Result<State> {
    let data = problem.data;
    let j = problem.n_beta();
    let g = problem.n_groups;
    let t_len = data.n_periods();
    let mut p_blk = DMatrix::zeros(j, j);
    let mut q_blk = DMatrix::zeros(j, g);
    let mut d_blk = vec![0.0; g];
    let mut loglik = 0.0;
    let mut probs = Vec::with_capacity(problem.n_obs());
    for (pos, &i) in problem.units.iter().enumerate() {
        let gi = problem.group_of[pos];
        for t in 0..t_len {
            let x = data.x(i, t);
            let eta = dot(x, beta) + alpha[gi];
            let o = problem.link.obs_terms(data.y(i, t), eta);
            loglik += o.loglik;
            let pr = logistic(eta);
            let w = pr * logistic(-eta);
            probs.push((pr, w));
            d_blk[gi] += w;
            for r in 0..j {
                q_blk[(r, gi)] += w * x[r];
                for c in 0..=r {
                    p_blk[(r, c)] += w * x[r] * x[c];
                }
            }
        }
    }
    for r in 0..j {
        for c in 0..r {
            p_blk[(c, r)] = p_blk[(r, c)];
        }
    }
    if d_blk.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::SingularVcov);
    }
    let s = schur(&p_blk, &q_blk, &d_blk);
    let s_chol = s.cholesky().ok_or(Error::CollinearDesign)?;
    let logdet_s: f64 = 2.0 * s_chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let logdet = logdet_s + d_blk.iter().map(|v| v.ln()).sum::<f64>();

    let mut u_beta = DVector::zeros(j);
    let mut u_alpha = vec![0.0; g];
    let mut centered = DVector::zeros(j);
    for (pos, &i) in problem.units.iter().enumerate() {
        let gi = problem.group_of[pos];
        let dg = d_blk[gi];
        for t in 0..t_len {
            let x = data.x(i, t);
            let (pr, w) = probs[pos * t_len + t];
            for r in 0..j {
                centered[r] = x[r] - q_blk[(r, gi)] / dg;
            }
            let lev = if j > 0 { w * (centered.dot(&s_chol.solve(&centered)) + 1.0 / dg) } else { w / dg };
            let resid = f64::from(data.y(i, t)) - pr + lev * (0.5 - pr);
            u_alpha[gi] += resid;
            for r in 0..j {
                u_beta[r] += resid * x[r];
            }
        }
    }
    Ok(State { penalized: loglik + 0.5 * logdet, loglik, u_beta, u_alpha, p: p_blk, q: q_blk, d: d_blk, s_chol })
}

fn sup(state: &State) -> f64 {
    state.u_beta.iter().chain(&state.u_alpha).fold(0.0f64, |m, v| m.max(v.abs()))
}

pub(crate) fn solve(
    problem: &Problem<'_>,
    beta0: Vec<f64>,
    alpha0: Vec<f64>,
    opts: &FitOptions,
) -> Result<FirthSolution> {
    let g = problem.n_groups;
    let mut beta = beta0;
    let mut alpha = alpha0;
    let mut state = evaluate(problem, &beta, &alpha)?;
    let mut trace = Vec::new();
    let mut last_step = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..=opts.max_iter {
        iterations = iter;
        let grad = sup(&state);
        trace.push(IterationRecord { iteration: iter, loglik: state.penalized, gradient_norm: grad, step: last_step });
        if grad < opts.tol * (1.0 + state.penalized.abs().min(state.loglik.abs())) {
            converged = true;
            break;
        }
        if iter == opts.max_iter {
            break;
        }
        // Fisher-scoring direction I⁻¹ U* through the arrowhead structure.
        let mut rhs = state.u_beta.clone();
        for k in 0..g {
            rhs.axpy(-state.u_alpha[k] / state.d[k], &state.q.column(k), 1.0);
        }
        let d_beta = state.s_chol.solve(&rhs);
        let d_alpha: Vec<f64> =
            (0..g).map(|k| (state.u_alpha[k] - state.q.column(k).dot(&d_beta)) / state.d[k]).collect();
        let decrement = state.u_beta.dot(&d_beta) + state.u_alpha.iter().zip(&d_alpha).map(|(u, d)| u * d).sum::<f64>();

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let b: Vec<f64> = beta.iter().zip(d_beta.iter()).map(|(v, dv)| v + step * dv).collect();
            let a: Vec<f64> = alpha.iter().zip(&d_alpha).map(|(v, dv)| v + step * dv).collect();
            if let Ok(cand) = evaluate(problem, &b, &a) {
                if cand.penalized.is_finite() && cand.penalized >= state.penalized {
                    accepted = Some((b, a, cand));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((b, a, cand)) => {
                beta = b;
                alpha = a;
                state = cand;
                last_step = step;
            }
            None => {
                converged = negligible_decrement(decrement, state.penalized);
                break;
            }
        }
    }
    let gradient_norm = sup(&state);
    let vcov = Covariance::from_information(&state.p, &state.q, &state.d)?;
    Ok(FirthSolution {
        beta,
        alpha,
        loglik: state.loglik,
        penalized: state.penalized,
        vcov,
        iterations,
        converged,
        gradient_norm,
        trace,
    })
}
