//! Maximum-likelihood core for binary-choice panels.
//!
//! Every intercept mode is handled as a partition of the units: individual
//! effects are singleton groups, pooled estimation is a single group, and
//! grouped fixed effects use a k-means assignment. Groups whose pooled
//! outcome never varies have no finite intercept and are dropped before
//! optimization.

mod covariance;
mod firth;
mod likelihood;
pub mod link;
mod newton;

use serde::{Deserialize, Serialize};

pub use covariance::Covariance;
pub use likelihood::{hessian, loglik, score};
pub use link::Link;
pub use newton::IterationRecord;

use crate::data::{PanelDataset, SeparationReport};
use crate::error::{Error, Result};
use likelihood::Problem;

/// How intercepts enter the index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterceptMode {
    /// One fixed effect per unit.
    Individual,
    /// One intercept per group; `assignments[i]` is the 0-based group of unit i.
    Grouped(Vec<usize>),
    /// A single common intercept.
    Pooled,
}

impl InterceptMode {
    /// Group index of every unit, validating grouped assignments.
    pub(crate) fn group_of(&self, n: usize) -> Result<Vec<usize>> {
        match self {
            InterceptMode::Individual => Ok((0..n).collect()),
            InterceptMode::Pooled => Ok(vec![0; n]),
            InterceptMode::Grouped(a) => {
                if a.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: a.len() });
                }
                let k = a.iter().max().map_or(0, |m| m + 1);
                let mut seen = vec![false; k];
                for &g in a {
                    seen[g] = true;
                }
                if let Some(empty) = seen.iter().position(|s| !s) {
                    return Err(Error::InvalidArgument(format!("group {} has no members", empty + 1)));
                }
                Ok(a.clone())
            }
        }
    }

    pub fn n_intercepts(&self, n: usize) -> usize {
        match self {
            InterceptMode::Individual => n,
            InterceptMode::Pooled => 1,
            InterceptMode::Grouped(a) => a.iter().max().map_or(0, |m| m + 1),
        }
    }
}

/// Model specification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub link: Link,
    pub intercept_mode: InterceptMode,
    /// Covariate 0 of the estimation panel is the lagged outcome
    /// (see [`crate::data::add_lagged_outcome`]).
    pub dynamic: bool,
}

impl ModelSpec {
    pub fn new(link: Link, intercept_mode: InterceptMode, dynamic: bool) -> Self {
        Self { link, intercept_mode, dynamic }
    }

    pub fn individual(link: Link, dynamic: bool) -> Self {
        Self::new(link, InterceptMode::Individual, dynamic)
    }

    pub fn pooled(link: Link, dynamic: bool) -> Self {
        Self::new(link, InterceptMode::Pooled, dynamic)
    }

    pub fn grouped(link: Link, assignments: Vec<usize>, dynamic: bool) -> Self {
        Self::new(link, InterceptMode::Grouped(assignments), dynamic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Scalar Newton per intercept inside Newton on β.
    #[default]
    Concentrated,
    /// Dense Newton over all parameters.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub optimizer: Optimizer,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Relative sup-norm gradient tolerance.
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { optimizer: Optimizer::Concentrated, max_iter: 100, max_halvings: 30, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterceptLabel {
    Unit(String),
    /// 1-based group number.
    Group(usize),
    Pooled,
}

impl std::fmt::Display for InterceptLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InterceptLabel::Unit(id) => write!(f, "unit {id}"),
            InterceptLabel::Group(k) => write!(f, "group {k}"),
            InterceptLabel::Pooled => f.write_str("(intercept)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Intercept {
    pub label: InterceptLabel,
    pub value: f64,
}

/// Where a unit's intercept comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitIntercept {
    /// Index into [`FitResult::intercepts`].
    Estimated(usize),
    /// Dropped: the unit's group never changes outcome; `all_ones` tells
    /// which infinite limit the intercept takes.
    Separated { all_ones: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    MaximumLikelihood,
    Firth,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub estimator: Estimator,
    pub covariate_names: Vec<String>,
    pub beta: Vec<f64>,
    pub intercepts: Vec<Intercept>,
    pub unit_intercepts: Vec<UnitIntercept>,
    /// Unpenalized log-likelihood over the estimation sample.
    pub loglik: f64,
    /// Penalized objective (Firth only).
    pub penalized_loglik: Option<f64>,
    /// Inverse observed information over (β, intercepts).
    pub vcov: Covariance,
    pub dropped_units: SeparationReport,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub trace: Vec<IterationRecord>,
}

impl FitResult {
    pub fn link(&self) -> Link {
        self.spec.link
    }

    /// Intercept of unit `i`, or `None` when the unit was dropped.
    pub fn unit_alpha(&self, i: usize) -> Option<f64> {
        match self.unit_intercepts.get(i)? {
            UnitIntercept::Estimated(k) => Some(self.intercepts[*k].value),
            UnitIntercept::Separated { .. } => None,
        }
    }

    /// Index x'β + α for unit `i` with covariates `x`.
    pub fn index(&self, i: usize, x: &[f64]) -> Option<f64> {
        Some(likelihood::dot(x, &self.beta) + self.unit_alpha(i)?)
    }

    /// Predicted probability for unit `i` at covariates `x`. Dropped units get
    /// the limit of their infinite intercept (0 or 1).
    pub fn predict(&self, i: usize, x: &[f64]) -> f64 {
        match self.unit_intercepts[i] {
            UnitIntercept::Estimated(k) => self.link().cdf(likelihood::dot(x, &self.beta) + self.intercepts[k].value),
            UnitIntercept::Separated { all_ones } => f64::from(u8::from(all_ones)),
        }
    }

    /// Units whose intercept was estimated, ascending.
    pub fn kept_units(&self) -> Vec<usize> {
        (0..self.unit_intercepts.len())
            .filter(|&i| matches!(self.unit_intercepts[i], UnitIntercept::Estimated(_)))
            .collect()
    }

    /// Standard errors of the slopes.
    pub fn beta_se(&self) -> Vec<f64> {
        let b = self.vcov.beta_block();
        (0..b.nrows()).map(|k| b[(k, k)].max(0.0).sqrt()).collect()
    }
}

/// Per-unit intercept layout after dropping groups without outcome variation.
struct Layout {
    units: Vec<usize>,
    group_of: Vec<usize>,
    labels: Vec<InterceptLabel>,
    unit_intercepts: Vec<UnitIntercept>,
    dropped: SeparationReport,
    start_alpha: Vec<f64>,
}

fn layout(data: &PanelDataset, spec: &ModelSpec, drop_separated: bool) -> Result<Layout> {
    let n = data.n_units();
    let t_len = data.n_periods();
    let raw = spec.intercept_mode.group_of(n)?;
    let k = spec.intercept_mode.n_intercepts(n);
    let mut ones = vec![0usize; k];
    let mut size = vec![0usize; k];
    for i in 0..n {
        ones[raw[i]] += data.y_row(i).iter().map(|&v| v as usize).sum::<usize>();
        size[raw[i]] += t_len;
    }
    let separated = |g: usize| drop_separated && (ones[g] == 0 || ones[g] == size[g]);
    let mut remap = vec![None; k];
    let mut labels = Vec::new();
    let mut start_alpha = Vec::new();
    for g in 0..k {
        if separated(g) {
            continue;
        }
        remap[g] = Some(labels.len());
        labels.push(match &spec.intercept_mode {
            InterceptMode::Individual => InterceptLabel::Unit(data.unit_ids()[g].clone()),
            InterceptMode::Grouped(_) => InterceptLabel::Group(g + 1),
            InterceptMode::Pooled => InterceptLabel::Pooled,
        });
        let p = (ones[g] as f64 + 0.5) / (size[g] as f64 + 1.0);
        let logit = (p / (1.0 - p)).ln();
        start_alpha.push(match spec.link {
            Link::Logit => logit,
            Link::Probit => logit / 1.7,
        });
    }
    let mut units = Vec::new();
    let mut group_of = Vec::new();
    let mut unit_intercepts = Vec::with_capacity(n);
    let mut separated_units = Vec::new();
    for i in 0..n {
        match remap[raw[i]] {
            Some(g) => {
                units.push(i);
                group_of.push(g);
                unit_intercepts.push(UnitIntercept::Estimated(g));
            }
            None => {
                separated_units.push(i);
                unit_intercepts.push(UnitIntercept::Separated { all_ones: ones[raw[i]] > 0 });
            }
        }
    }
    if units.is_empty() {
        return Err(Error::NoUsableUnits);
    }
    let dropped = SeparationReport {
        n_kept: n - separated_units.len(),
        fraction_dropped_obs: separated_units.len() as f64 / n as f64,
        separated_units,
    };
    Ok(Layout { units, group_of, labels, unit_intercepts, dropped, start_alpha })
}

fn check_dynamic(data: &PanelDataset, spec: &ModelSpec) -> Result<()> {
    if spec.dynamic && (data.n_covariates() == 0 || !data.covariate_is_binary(0)) {
        return Err(Error::NonBinaryCovariate(0));
    }
    Ok(())
}

/// Average curvature per observation below which a group's fitted
/// probabilities count as saturated at 0 or 1.
const SATURATION: f64 = 1e-8;

/// True when some group's fitted probabilities are all numerically 0 or 1:
/// the stationary point is an artifact of covariate-induced separation and
/// the parameters are drifting to infinity.
fn saturated_groups(problem: &Problem<'_>, curvature: &[f64]) -> bool {
    let t = problem.data.n_periods() as f64;
    curvature.iter().zip(&problem.members).any(|(c, m)| c / (m.len() as f64 * t) < SATURATION)
}

/// Maximum-likelihood fit with default options.
pub fn fit(data: &PanelDataset, spec: &ModelSpec) -> Result<FitResult> {
    fit_with(data, spec, &FitOptions::default())
}

/// Maximum-likelihood fit. Units (or groups) without outcome variation are
/// dropped first; a fit that fails to converge is returned inside
/// [`Error::NonConvergence`].
pub fn fit_with(data: &PanelDataset, spec: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    check_dynamic(data, spec)?;
    let lay = layout(data, spec, true)?;
    let problem = Problem::new(data, spec.link, lay.units.clone(), lay.group_of.clone());
    let beta0 = vec![0.0; data.n_covariates()];
    let sol = match opts.optimizer {
        Optimizer::Concentrated => newton::concentrated(&problem, beta0, lay.start_alpha.clone(), opts)?,
        Optimizer::Joint => newton::joint(&problem, beta0, lay.start_alpha.clone(), opts)?,
    };
    let d = &sol.derivs;
    let neg_d: Vec<f64> = d.h_gg.iter().map(|v| -v).collect();
    // A singular information matrix at a stationary point means some slope
    // direction is absorbed by the intercepts.
    let vcov = Covariance::from_information(&(-&d.h_bb), &(-&d.h_bg), &neg_d).map_err(|e| match e {
        Error::SingularVcov => Error::CollinearDesign,
        other => other,
    })?;
    let diverging = saturated_groups(&problem, &neg_d);
    let result = FitResult {
        spec: spec.clone(),
        estimator: Estimator::MaximumLikelihood,
        covariate_names: data.covariate_names().to_vec(),
        beta: sol.beta,
        intercepts: lay.labels.into_iter().zip(sol.alpha).map(|(label, value)| Intercept { label, value }).collect(),
        unit_intercepts: lay.unit_intercepts,
        loglik: d.loglik,
        penalized_loglik: None,
        vcov,
        dropped_units: lay.dropped,
        iterations: sol.iterations,
        converged: sol.converged && !diverging,
        gradient_norm: sol.gradient_norm,
        trace: sol.trace,
    };
    if result.converged {
        Ok(result)
    } else {
        Err(Error::NonConvergence(Box::new(result)))
    }
}

/// Firth (Jeffreys-penalized) logit with individual intercepts for every
/// unit, separated or not. Only static logit specifications are accepted.
pub fn fit_firth(data: &PanelDataset, spec: &ModelSpec) -> Result<FitResult> {
    fit_firth_with(data, spec, &FitOptions::default())
}

pub fn fit_firth_with(data: &PanelDataset, spec: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    if spec.link != Link::Logit {
        return Err(Error::Unsupported("Firth estimation requires the logit link".into()));
    }
    if spec.dynamic {
        return Err(Error::Unsupported("Firth estimation is only available for static models".into()));
    }
    if spec.intercept_mode != InterceptMode::Individual {
        return Err(Error::Unsupported("Firth estimation uses individual intercepts".into()));
    }
    let lay = layout(data, spec, false)?;
    let problem = Problem::new(data, spec.link, lay.units.clone(), lay.group_of.clone());
    let sol = firth::solve(&problem, vec![0.0; data.n_covariates()], lay.start_alpha.clone(), opts)?;
    let result = FitResult {
        spec: spec.clone(),
        estimator: Estimator::Firth,
        covariate_names: data.covariate_names().to_vec(),
        beta: sol.beta,
        intercepts: lay.labels.into_iter().zip(sol.alpha).map(|(label, value)| Intercept { label, value }).collect(),
        unit_intercepts: lay.unit_intercepts,
        loglik: sol.loglik,
        penalized_loglik: Some(sol.penalized),
        vcov: sol.vcov,
        dropped_units: SeparationReport::none(data.n_units()),
        iterations: sol.iterations,
        converged: sol.converged,
        gradient_norm: sol.gradient_norm,
        trace: sol.trace,
    };
    if result.converged {
        Ok(result)
    } else {
        Err(Error::NonConvergence(Box::new(result)))
    }
}

#[cfg(test)]
mod tests;
