//! Binary panel log-likelihood with one intercept per group of units.

use nalgebra::{DMatrix, DVector};

use super::link::Link;
use crate::data::PanelDataset;
use crate::error::{Error, Result};

/// An estimation problem: which units enter and which intercept each uses.
#[derive(Debug, Clone)]
pub(crate) struct Problem<'a> {
    pub data: &'a PanelDataset,
    pub link: Link,
    /// Units in the likelihood, ascending.
    pub units: Vec<usize>,
    /// Intercept index for each entry of `units`.
    pub group_of: Vec<usize>,
    pub n_groups: usize,
    /// Positions (into `units`) of the members of each group.
    pub members: Vec<Vec<usize>>,
}

/// Sufficient derivative blocks at a parameter point.
#[derive(Debug, Clone)]
pub(crate) struct Derivatives {
    pub loglik: f64,
    pub g_beta: DVector<f64>,
    pub g_alpha: Vec<f64>,
    pub h_bb: DMatrix<f64>,
    /// Column g holds ∂²ℓ/∂β∂α_g.
    pub h_bg: DMatrix<f64>,
    pub h_gg: Vec<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(data: &'a PanelDataset, link: Link, units: Vec<usize>, group_of: Vec<usize>) -> Self {
        let n_groups = group_of.iter().map(|&g| g + 1).max().unwrap_or(0);
        let mut members = vec![Vec::new(); n_groups];
        for (pos, &g) in group_of.iter().enumerate() {
            members[g].push(pos);
        }
        Self { data, link, units, group_of, n_groups, members }
    }

    pub fn n_beta(&self) -> usize {
        self.data.n_covariates()
    }

    pub fn n_obs(&self) -> usize {
        self.units.len() * self.data.n_periods()
    }

    /// x_it'β for every (unit position, period), row-major.
    pub fn linear_part(&self, beta: &[f64]) -> Vec<f64> {
        let t_len = self.data.n_periods();
        let mut out = Vec::with_capacity(self.n_obs());
        for &i in &self.units {
            for t in 0..t_len {
                out.push(dot(self.data.x(i, t), beta));
            }
        }
        out
    }

    /// Log-likelihood, score and Hessian of intercept `g` alone, given x'β.
    pub fn group_terms(&self, g: usize, xb: &[f64], alpha: f64) -> (f64, f64, f64) {
        let t_len = self.data.n_periods();
        let (mut ll, mut s, mut h) = (0.0, 0.0, 0.0);
        for &pos in &self.members[g] {
            let i = self.units[pos];
            for t in 0..t_len {
                let o = self.link.obs_terms(self.data.y(i, t), xb[pos * t_len + t] + alpha);
                ll += o.loglik;
                s += o.d1;
                h += o.d2;
            }
        }
        (ll, s, h)
    }

    pub fn loglik(&self, beta: &[f64], alpha: &[f64]) -> f64 {
        let t_len = self.data.n_periods();
        let mut ll = 0.0;
        for (pos, &i) in self.units.iter().enumerate() {
            let a = alpha[self.group_of[pos]];
            for t in 0..t_len {
                ll += self.link.obs_terms(self.data.y(i, t), dot(self.data.x(i, t), beta) + a).loglik;
            }
        }
        ll
    }

    pub fn derivatives(&self, beta: &[f64], alpha: &[f64]) -> Derivatives {
        let j = self.n_beta();
        let t_len = self.data.n_periods();
        let mut d = Derivatives {
            loglik: 0.0,
            g_beta: DVector::zeros(j),
            g_alpha: vec![0.0; self.n_groups],
            h_bb: DMatrix::zeros(j, j),
            h_bg: DMatrix::zeros(j, self.n_groups),
            h_gg: vec![0.0; self.n_groups],
        };
        for (pos, &i) in self.units.iter().enumerate() {
            let g = self.group_of[pos];
            let a = alpha[g];
            for t in 0..t_len {
                let x = self.data.x(i, t);
                let o = self.link.obs_terms(self.data.y(i, t), dot(x, beta) + a);
                d.loglik += o.loglik;
                d.g_alpha[g] += o.d1;
                d.h_gg[g] += o.d2;
                for r in 0..j {
                    d.g_beta[r] += o.d1 * x[r];
                    d.h_bg[(r, g)] += o.d2 * x[r];
                    for c in 0..=r {
                        d.h_bb[(r, c)] += o.d2 * x[r] * x[c];
                    }
                }
            }
        }
        for r in 0..j {
            for c in 0..r {
                d.h_bb[(c, r)] = d.h_bb[(r, c)];
            }
        }
        d
    }

    /// Dense Hessian over (β, α).
    pub fn dense_hessian(d: &Derivatives) -> DMatrix<f64> {
        let j = d.g_beta.len();
        let g = d.g_alpha.len();
        let mut h = DMatrix::zeros(j + g, j + g);
        h.view_mut((0, 0), (j, j)).copy_from(&d.h_bb);
        h.view_mut((0, j), (j, g)).copy_from(&d.h_bg);
        h.view_mut((j, 0), (g, j)).copy_from(&d.h_bg.transpose());
        for k in 0..g {
            h[(j + k, j + k)] = d.h_gg[k];
        }
        h
    }

    pub fn dense_score(d: &Derivatives) -> DVector<f64> {
        let j = d.g_beta.len();
        let mut s = DVector::zeros(j + d.g_alpha.len());
        s.rows_mut(0, j).copy_from(&d.g_beta);
        for (k, v) in d.g_alpha.iter().enumerate() {
            s[j + k] = *v;
        }
        s
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Problem over all units for the unrestricted likelihood functions.
fn full_problem<'a>(theta: &[f64], data: &'a PanelDataset, spec: &super::ModelSpec) -> Result<Problem<'a>> {
    let group_of = spec.intercept_mode.group_of(data.n_units())?;
    let problem = Problem::new(data, spec.link, (0..data.n_units()).collect(), group_of);
    let expected = problem.n_beta() + problem.n_groups;
    if theta.len() != expected {
        return Err(Error::DimensionMismatch { expected, got: theta.len() });
    }
    Ok(problem)
}

/// Log-likelihood at θ = (β, α_1, …, α_G) over every unit of the panel,
/// where G is the number of intercepts implied by the spec's intercept mode.
pub fn loglik(theta: &[f64], data: &PanelDataset, spec: &super::ModelSpec) -> Result<f64> {
    let p = full_problem(theta, data, spec)?;
    let (beta, alpha) = theta.split_at(p.n_beta());
    Ok(p.loglik(beta, alpha))
}

/// Analytic score at θ; see [`loglik`] for the parameter layout.
pub fn score(theta: &[f64], data: &PanelDataset, spec: &super::ModelSpec) -> Result<DVector<f64>> {
    let p = full_problem(theta, data, spec)?;
    let (beta, alpha) = theta.split_at(p.n_beta());
    Ok(Problem::dense_score(&p.derivatives(beta, alpha)))
}

/// Analytic Hessian at θ; see [`loglik`] for the parameter layout.
pub fn hessian(theta: &[f64], data: &PanelDataset, spec: &super::ModelSpec) -> Result<DMatrix<f64>> {
    let p = full_problem(theta, data, spec)?;
    let (beta, alpha) = theta.split_at(p.n_beta());
    Ok(Problem::dense_hessian(&p.derivatives(beta, alpha)))
}
