//! Plug-in average partial effects, delta-method standard errors and the
//! half-panel jackknife.

use serde::Serialize;

use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::estimate::{fit, FitResult, InterceptMode, ModelSpec, UnitIntercept};

/// Two-sided 5% and 10% critical values of the standard normal.
pub const Z_05: f64 = 1.959_963_984_540_054;
pub const Z_10: f64 = 1.644_853_626_951_472_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    /// Derivative F'(η)·β_j.
    Continuous,
    /// Difference F(η | x_j = 1) − F(η | x_j = 0).
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ApeMethod {
    Plugin,
    Jackknife,
}

/// Units the average runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ApeSample {
    /// Every unit; a dropped unit contributes its limiting effect, zero.
    #[default]
    All,
    /// Only units with an estimated intercept.
    Kept,
}

#[derive(Debug, Clone, Serialize)]
pub struct ApeEstimate {
    pub covariate: String,
    pub kind: EffectKind,
    pub sample: ApeSample,
    pub value: f64,
    pub se: f64,
    pub n_units_used: usize,
    pub method: ApeMethod,
}

impl ApeEstimate {
    pub fn t_stat(&self, reference: f64) -> f64 {
        (self.value - reference) / self.se
    }

    /// Two-sided test of `value = reference` at critical value `z`.
    pub fn rejects(&self, reference: f64, z: f64) -> bool {
        self.t_stat(reference).abs() > z
    }
}

/// Default effect type: the lagged outcome of a dynamic model is discrete,
/// everything else continuous.
pub fn default_kind(spec: &ModelSpec, j: usize) -> EffectKind {
    if spec.dynamic && j == 0 {
        EffectKind::Discrete
    } else {
        EffectKind::Continuous
    }
}

fn check_unit(fit: &FitResult, data: &PanelDataset, j: usize, i: usize) -> Result<f64> {
    if j >= fit.beta.len() {
        return Err(Error::DimensionMismatch { expected: fit.beta.len(), got: j + 1 });
    }
    if i >= data.n_units() {
        return Err(Error::InvalidArgument(format!("unit index {i} out of range")));
    }
    fit.unit_alpha(i).ok_or(Error::DroppedUnit(i))
}

/// F'(x_it'β + α_i)·β_j.
pub fn partial_effect_continuous(fit: &FitResult, data: &PanelDataset, j: usize, i: usize, t: usize) -> Result<f64> {
    check_unit(fit, data, j, i)?;
    let eta = fit.index(i, data.x(i, t)).expect("unit checked");
    Ok(fit.link().pdf(eta) * fit.beta[j])
}

/// F(η with x_j = 1) − F(η with x_j = 0).
pub fn partial_effect_discrete(fit: &FitResult, data: &PanelDataset, j: usize, i: usize, t: usize) -> Result<f64> {
    check_unit(fit, data, j, i)?;
    if !data.covariate_is_binary(j) {
        return Err(Error::NonBinaryCovariate(j));
    }
    let eta = fit.index(i, data.x(i, t)).expect("unit checked");
    let base = eta - data.x(i, t)[j] * fit.beta[j];
    let link = fit.link();
    Ok(link.cdf(base + fit.beta[j]) - link.cdf(base))
}

/// Per-observation effect and its gradient with respect to (β, α).
fn effect_with_gradient(
    fit: &FitResult,
    x: &[f64],
    alpha: f64,
    j: usize,
    kind: EffectKind,
    grad_beta: &mut [f64],
) -> (f64, f64) {
    let link = fit.link();
    let b = &fit.beta;
    let eta: f64 = x.iter().zip(b).map(|(a, c)| a * c).sum::<f64>() + alpha;
    match kind {
        EffectKind::Continuous => {
            let f1 = link.pdf(eta);
            let f2 = link.pdf_deriv(eta);
            for (k, g) in grad_beta.iter_mut().enumerate() {
                *g += f2 * x[k] * b[j] + if k == j { f1 } else { 0.0 };
            }
            (f1 * b[j], f2 * b[j])
        }
        EffectKind::Discrete => {
            let base = eta - x[j] * b[j];
            let (e1, e0) = (base + b[j], base);
            let (f1, f0) = (link.pdf(e1), link.pdf(e0));
            for (k, g) in grad_beta.iter_mut().enumerate() {
                *g += if k == j { f1 } else { (f1 - f0) * x[k] };
            }
            (link.cdf(e1) - link.cdf(e0), f1 - f0)
        }
    }
}

struct Accumulated {
    value: f64,
    unit_means: Vec<f64>,
    grad_beta: Vec<f64>,
    grad_alpha: Vec<f64>,
}

fn accumulate(
    fit: &FitResult,
    data: &PanelDataset,
    j: usize,
    kind: EffectKind,
    sample: ApeSample,
) -> Result<Accumulated> {
    if j >= fit.beta.len() {
        return Err(Error::DimensionMismatch { expected: fit.beta.len(), got: j + 1 });
    }
    if data.n_units() != fit.unit_intercepts.len() || data.n_covariates() != fit.beta.len() {
        return Err(Error::DimensionMismatch { expected: fit.unit_intercepts.len(), got: data.n_units() });
    }
    if kind == EffectKind::Discrete && !data.covariate_is_binary(j) {
        return Err(Error::NonBinaryCovariate(j));
    }
    let t_len = data.n_periods();
    let mut grad_beta = vec![0.0; fit.beta.len()];
    let mut grad_alpha = vec![0.0; fit.intercepts.len()];
    let mut unit_means = Vec::new();
    let mut n_kept = 0;
    for i in 0..data.n_units() {
        let UnitIntercept::Estimated(g) = fit.unit_intercepts[i] else {
            if sample == ApeSample::All {
                unit_means.push(0.0);
            }
            continue;
        };
        n_kept += 1;
        let alpha = fit.intercepts[g].value;
        let mut sum = 0.0;
        for t in 0..t_len {
            let (mu, d_alpha) = effect_with_gradient(fit, data.x(i, t), alpha, j, kind, &mut grad_beta);
            sum += mu;
            grad_alpha[g] += d_alpha;
        }
        unit_means.push(sum / t_len as f64);
    }
    if n_kept == 0 {
        return Err(Error::NoUsableUnits);
    }
    let count = (unit_means.len() * t_len) as f64;
    grad_beta.iter_mut().for_each(|g| *g /= count);
    grad_alpha.iter_mut().for_each(|g| *g /= count);
    let value = unit_means.iter().sum::<f64>() / unit_means.len() as f64;
    Ok(Accumulated { value, unit_means, grad_beta, grad_alpha })
}

fn se_from(acc: &Accumulated, fit: &FitResult) -> Result<f64> {
    let n_star = acc.unit_means.len() as f64;
    let s2 = acc.unit_means.iter().map(|m| (m - acc.value).powi(2)).sum::<f64>() / n_star;
    let q = fit.vcov.quad_form(&acc.grad_beta, &acc.grad_alpha);
    if !q.is_finite() {
        return Err(Error::SingularVcov);
    }
    Ok((s2 / n_star + q.max(0.0)).sqrt())
}

/// Plug-in APE of covariate `j` over the units kept by the fit, using the
/// default effect type for the fit's model.
pub fn plug_in_ape(fit: &FitResult, data: &PanelDataset, j: usize) -> Result<ApeEstimate> {
    plug_in_ape_as(fit, data, j, default_kind(&fit.spec, j))
}

/// Plug-in APE over the kept units with an explicit effect type.
pub fn plug_in_ape_as(fit: &FitResult, data: &PanelDataset, j: usize, kind: EffectKind) -> Result<ApeEstimate> {
    plug_in_ape_over(fit, data, j, kind, ApeSample::Kept)
}

pub fn plug_in_ape_over(
    fit: &FitResult,
    data: &PanelDataset,
    j: usize,
    kind: EffectKind,
    sample: ApeSample,
) -> Result<ApeEstimate> {
    if !fit.converged {
        return Err(Error::NotConverged);
    }
    let acc = accumulate(fit, data, j, kind, sample)?;
    let se = se_from(&acc, fit)?;
    Ok(ApeEstimate {
        covariate: fit.covariate_names[j].clone(),
        kind,
        sample,
        value: acc.value,
        se,
        n_units_used: acc.unit_means.len(),
        method: ApeMethod::Plugin,
    })
}

/// Delta-method standard error over the kept units: s²_μ/N* + g'V̂g.
pub fn delta_method_se(fit: &FitResult, data: &PanelDataset, j: usize) -> Result<f64> {
    let acc = accumulate(fit, data, j, default_kind(&fit.spec, j), ApeSample::Kept)?;
    se_from(&acc, fit)
}

/// Time ranges of the two half panels. Odd lengths share the middle period.
pub fn half_panel_ranges(t: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let h = t.div_ceil(2);
    (0..h, t - h..t)
}

/// Half-panel jackknife 2μ̂ − ½(μ̂₁ + μ̂₂) with individual intercepts.
pub fn half_panel_jackknife_ape(data: &PanelDataset, spec: &ModelSpec, j: usize) -> Result<ApeEstimate> {
    check_jackknife(data, spec)?;
    let full_fit = fit(data, spec)?;
    let full = plug_in_ape(&full_fit, data, j)?;
    half_panel_jackknife_from(&full, data, spec, j)
}

fn check_jackknife(data: &PanelDataset, spec: &ModelSpec) -> Result<()> {
    if spec.intercept_mode != InterceptMode::Individual {
        return Err(Error::Unsupported("the jackknife uses individual intercepts".into()));
    }
    if data.n_periods() < 4 {
        return Err(Error::PanelTooShort { needed: 4, have: data.n_periods() });
    }
    Ok(())
}

/// Jackknife correction given an already computed full-panel plug-in APE.
/// The standard error is that of the full-panel estimate.
pub fn half_panel_jackknife_from(
    full: &ApeEstimate,
    data: &PanelDataset,
    spec: &ModelSpec,
    j: usize,
) -> Result<ApeEstimate> {
    check_jackknife(data, spec)?;
    let (r1, r2) = half_panel_ranges(data.n_periods());
    let mut halves = [0.0; 2];
    for (slot, range) in halves.iter_mut().zip([r1, r2]) {
        let sub = data.select_periods(range)?;
        let f = fit(&sub, spec)?;
        *slot = plug_in_ape_over(&f, &sub, j, full.kind, full.sample)?.value;
    }
    Ok(ApeEstimate {
        value: jackknife_combine(full.value, halves[0], halves[1]),
        method: ApeMethod::Jackknife,
        ..full.clone()
    })
}

pub fn jackknife_combine(full: f64, half1: f64, half2: f64) -> f64 {
    2.0 * full - 0.5 * (half1 + half2)
}
