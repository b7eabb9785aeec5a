//! Two-step grouped fixed effects estimator: k-means on individual means of
//! the exogenous covariates, then a fit with one intercept per group.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::ape::{default_kind, plug_in_ape_over, ApeEstimate, ApeSample};
use crate::cluster::{self, rule_bounds, ClusterResult, KSelection, NoiseEstimator, RuleVerdict};
use crate::data::{individual_means, PanelDataset};
use crate::error::{Error, Result};
use crate::estimate::{fit, FitResult, InterceptMode, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupChoice {
    /// γ-rule threshold in (0, 1].
    Gamma(f64),
    /// Fixed number of groups.
    Fixed(usize),
}

#[derive(Debug, Clone, Serialize)]
pub struct GfeConfig {
    pub restarts: usize,
    pub seed: u64,
    /// Scale each moment column to unit standard deviation before clustering.
    pub standardize: bool,
    /// Estimator of V̂ in the γ-rule.
    pub noise: NoiseEstimator,
}

impl Default for GfeConfig {
    fn default() -> Self {
        Self { restarts: cluster::DEFAULT_RESTARTS, seed: 0, standardize: false, noise: NoiseEstimator::default() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GfeResult {
    /// γ-rule outcome; `None` when K was fixed.
    pub selection: Option<KSelection>,
    pub clusters: ClusterResult,
    #[serde(skip)]
    pub fit: FitResult,
    pub apes: Vec<ApeEstimate>,
    /// Groups (0-based) whose pooled outcome never varies.
    pub dropped_groups: Vec<usize>,
    pub fraction_obs_dropped: f64,
}

impl GfeResult {
    pub fn k(&self) -> usize {
        self.clusters.k
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RuleReport {
    pub k: usize,
    pub verdict: RuleVerdict,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub message: String,
}

pub fn rule_report(selection: &KSelection) -> RuleReport {
    rule_report_for(selection.chosen_k, selection.lower_bound, selection.upper_bound, selection.verdict())
}

/// Compliance record for an arbitrary K on an N×T panel.
pub fn rule_report_k(k: usize, n: usize, t: usize) -> RuleReport {
    let (lo, hi) = rule_bounds(n, t);
    rule_report_for(k, lo, hi, cluster::rule_verdict(k, n, t))
}

fn rule_report_for(k: usize, lower_bound: f64, upper_bound: f64, verdict: RuleVerdict) -> RuleReport {
    let message = match verdict {
        RuleVerdict::Compliant => {
            format!("K = {k} is compliant: inside [{:.2}, {upper_bound:.2})", cluster::LOWER_BOUND_FACTOR * lower_bound)
        }
        RuleVerdict::TooFewGroups => {
            format!("K = {k} has too few groups: too close to the lower bound sqrt(T) = {lower_bound:.2}")
        }
        RuleVerdict::TooManyGroups => {
            format!("K = {k} has too many groups: at or above the upper bound T*sqrt(N) = {upper_bound:.2}")
        }
    };
    RuleReport { k, verdict, lower_bound, upper_bound, message }
}

/// Indices of the covariates used for clustering: all of them, minus the
/// lagged outcome in dynamic models.
pub fn clustering_covariates(data: &PanelDataset, spec: &ModelSpec) -> Result<Vec<usize>> {
    let start = usize::from(spec.dynamic);
    if data.n_covariates() <= start {
        return Err(Error::InvalidArgument("no exogenous covariates to cluster on".into()));
    }
    Ok((start..data.n_covariates()).collect())
}

/// Panel restricted to the clustering covariates, optionally rescaled so that
/// the individual means have unit standard deviation per column.
fn moment_panel(data: &PanelDataset, spec: &ModelSpec, standardize: bool) -> Result<PanelDataset> {
    let cols = clustering_covariates(data, spec)?;
    let sub = data.select_covariates(&cols)?;
    if !standardize {
        return Ok(sub);
    }
    let means = individual_means(&sub);
    let n = means.nrows() as f64;
    let scale: Vec<f64> = (0..means.ncols())
        .map(|c| {
            let col = means.column(c);
            let m = col.sum() / n;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            if sd > 0.0 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    let j = sub.n_covariates();
    let mut x = Vec::with_capacity(sub.n_units() * sub.n_periods() * j);
    for i in 0..sub.n_units() {
        for t in 0..sub.n_periods() {
            x.extend(sub.x(i, t).iter().zip(&scale).map(|(v, s)| v * s));
        }
    }
    let y = (0..sub.n_units()).flat_map(|i| sub.y_row(i).to_vec()).collect();
    PanelDataset::new(sub.unit_ids().to_vec(), sub.time_ids().to_vec(), sub.covariate_names().to_vec(), y, x)
}

fn finish(
    data: &PanelDataset,
    spec: &ModelSpec,
    selection: Option<KSelection>,
    clusters: ClusterResult,
) -> Result<GfeResult> {
    let grouped = ModelSpec::new(spec.link, InterceptMode::Grouped(clusters.assignments.clone()), spec.dynamic);
    let fitted = match fit(data, &grouped) {
        Err(Error::NoUsableUnits) => return Err(Error::AllGroupsSeparated),
        other => other?,
    };
    let mut dropped_groups: Vec<usize> =
        fitted.dropped_units.separated_units.iter().map(|&i| clusters.assignments[i]).collect();
    dropped_groups.sort_unstable();
    dropped_groups.dedup();
    let apes = (0..data.n_covariates())
        .map(|j| plug_in_ape_over(&fitted, data, j, default_kind(&fitted.spec, j), ApeSample::All))
        .collect::<Result<Vec<_>>>()?;
    Ok(GfeResult {
        selection,
        fraction_obs_dropped: fitted.dropped_units.fraction_dropped_obs,
        clusters,
        fit: fitted,
        apes,
        dropped_groups,
    })
}

/// Runs classification, group-level separation drop, grouped fit and APEs.
/// The intercept mode of `spec` is replaced by the estimated grouping.
pub fn estimate_gfe(
    data: &PanelDataset,
    spec: &ModelSpec,
    choice: GroupChoice,
    config: &GfeConfig,
) -> Result<GfeResult> {
    let moments = moment_panel(data, spec, config.standardize)?;
    let points = individual_means(&moments);
    match choice {
        GroupChoice::Fixed(k) => {
            let clusters = cluster::kmeans(&points, k, config.restarts, config.seed)?;
            finish(data, spec, None, clusters)
        }
        GroupChoice::Gamma(gamma) => {
            let v = cluster::noise_variance_by(&moments, config.noise);
            let selection =
                cluster::select_k_with(&points, gamma, v, moments.n_periods(), config.restarts, config.seed)?;
            let clusters = selection.clusters.clone();
            finish(data, spec, Some(selection), clusters)
        }
    }
}

/// γ-rule estimates for several thresholds sharing one k-means path. Each
/// entry is the estimate for the matching γ, or the error it produced.
pub fn estimate_gfe_grid(
    data: &PanelDataset,
    spec: &ModelSpec,
    gammas: &[f64],
    config: &GfeConfig,
) -> Result<Vec<Result<GfeResult>>> {
    let moments = moment_panel(data, spec, config.standardize)?;
    let points: DMatrix<f64> = individual_means(&moments);
    let v = cluster::noise_variance_by(&moments, config.noise);
    let selections = cluster::select_k_grid(&points, gammas, v, moments.n_periods(), config.restarts, config.seed)?;
    Ok(selections
        .into_iter()
        .map(|sel| {
            let clusters = sel.clusters.clone();
            finish(data, spec, Some(sel), clusters)
        })
        .collect())
}
