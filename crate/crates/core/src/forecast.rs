//! Expanding-window one-step-ahead forecasting with an in-sample
//! sensitivity-plus-specificity cutoff.

use std::io::Write;

use serde::Serialize;

use crate::data::{add_lagged_outcome, PanelDataset};
use crate::error::{Error, Result};
use crate::estimate::{fit, fit_firth, FitResult, ModelSpec, UnitIntercept};
use crate::gfe::{estimate_gfe, GfeConfig, GroupChoice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Confusion {
    pub true_pos: usize,
    pub true_neg: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

impl Confusion {
    pub fn tally(probs: &[f64], outcomes: &[u8], cutoff: f64) -> Self {
        let mut c = Confusion::default();
        for (&p, &y) in probs.iter().zip(outcomes) {
            match (p >= cutoff, y == 1) {
                (true, true) => c.true_pos += 1,
                (false, false) => c.true_neg += 1,
                (true, false) => c.false_pos += 1,
                (false, true) => c.false_neg += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.true_pos + self.true_neg + self.false_pos + self.false_neg
    }

    /// 2TP / (2TP + FP + FN); undefined when all three counts are zero.
    pub fn f1(&self) -> Option<f64> {
        let denom = 2 * self.true_pos + self.false_pos + self.false_neg;
        (denom > 0).then(|| 2.0 * self.true_pos as f64 / denom as f64)
    }

    pub fn sensitivity(&self) -> f64 {
        self.true_pos as f64 / (self.true_pos + self.false_neg) as f64
    }

    pub fn specificity(&self) -> f64 {
        self.true_neg as f64 / (self.true_neg + self.false_pos) as f64
    }
}

/// Candidate cutoffs in increasing order: the smallest probability (every
/// unit classified positive) followed by the midpoints between consecutive
/// distinct probabilities.
pub fn candidate_cutoffs(probs: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = probs.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut out = Vec::with_capacity(sorted.len());
    out.extend(sorted.first());
    out.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    out
}

/// Sensitivity plus specificity of the rule `p ≥ cutoff`.
pub fn youden_sum(probs: &[f64], outcomes: &[u8], cutoff: f64) -> f64 {
    let c = Confusion::tally(probs, outcomes, cutoff);
    c.sensitivity() + c.specificity()
}

/// Cutoff maximizing sensitivity + specificity over the candidate set, the
/// lowest one on ties.
pub fn choose_cutoff(probs: &[f64], outcomes: &[u8]) -> Result<f64> {
    if probs.len() != outcomes.len() {
        return Err(Error::DimensionMismatch { expected: probs.len(), got: outcomes.len() });
    }
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidArgument("fitted probabilities must be finite".into()));
    }
    let pos = outcomes.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == outcomes.len() {
        return Err(Error::DegenerateOutcomes);
    }
    let mut best = (f64::NEG_INFINITY, 0.0);
    for tau in candidate_cutoffs(probs) {
        let v = youden_sum(probs, outcomes, tau);
        if v > best.0 {
            best = (v, tau);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMethod {
    Ml,
    Firth,
    Gfe(GroupChoice),
}

impl ForecastMethod {
    pub fn label(&self) -> String {
        match self {
            ForecastMethod::Ml => "ml".into(),
            ForecastMethod::Firth => "firth".into(),
            ForecastMethod::Gfe(GroupChoice::Gamma(g)) => format!("gfe(gamma={g})"),
            ForecastMethod::Gfe(GroupChoice::Fixed(k)) => format!("gfe(k={k})"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ForecastRow {
    pub train_end: i64,
    pub forecast_time: i64,
    #[serde(flatten)]
    pub confusion: Confusion,
    pub f1: Option<f64>,
    pub cutoff: f64,
    pub k: Option<usize>,
    pub n_dropped: usize,
    /// Units with an estimated (finite) intercept.
    pub forecastable_units: Vec<usize>,
    /// In-sample sensitivity + specificity at the chosen cutoff.
    pub in_sample_youden: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ForecastReport {
    pub method: String,
    pub rows: Vec<ForecastRow>,
    /// Fit of each window, aligned with `rows`.
    #[serde(skip)]
    pub fits: Vec<FitResult>,
    /// Estimation panel of each window (after lagging in dynamic models).
    #[serde(skip)]
    pub windows: Vec<PanelDataset>,
}

/// In-sample fitted probabilities over kept units, with their outcomes.
fn in_sample(fit: &FitResult, data: &PanelDataset) -> (Vec<f64>, Vec<u8>) {
    let mut probs = Vec::new();
    let mut ys = Vec::new();
    for i in fit.kept_units() {
        for t in 0..data.n_periods() {
            probs.push(fit.predict(i, data.x(i, t)));
            ys.push(data.y(i, t));
        }
    }
    (probs, ys)
}

/// Expanding-window forecasts: for each `end` in `train_ends`, fit on the
/// periods `train_start..=end` and predict `end + 1`. Units whose intercept is
/// infinite are predicted at their limit (0 or 1) and counted as dropped.
pub fn expanding_window_forecast(
    data: &PanelDataset,
    spec: &ModelSpec,
    method: ForecastMethod,
    train_start: Option<i64>,
    train_ends: &[i64],
    config: &GfeConfig,
) -> Result<ForecastReport> {
    let start = match train_start {
        Some(s) => {
            data.period_index(s).ok_or_else(|| Error::InvalidArgument(format!("train start {s} is not a period")))?
        }
        None => 0,
    };
    let mut report = ForecastReport { method: method.label(), rows: Vec::new(), fits: Vec::new(), windows: Vec::new() };
    for &end in train_ends {
        let end_idx = data
            .period_index(end)
            .ok_or_else(|| Error::InvalidArgument(format!("training end {end} is not a period")))?;
        let target = end_idx + 1;
        if target >= data.n_periods() {
            return Err(Error::InvalidArgument(format!("no period after training end {end} to forecast")));
        }
        if end_idx < start {
            return Err(Error::WindowTooShort { end, periods: 0 });
        }
        let raw_len = end_idx + 1 - start;
        let est_len = raw_len - usize::from(spec.dynamic);
        if est_len < 3 {
            return Err(Error::WindowTooShort { end, periods: est_len });
        }
        let raw = data.select_periods(start..end_idx + 1)?;
        let window = if spec.dynamic { add_lagged_outcome(&raw)? } else { raw };
        let (fitted, k) = match method {
            ForecastMethod::Ml => (fit(&window, spec)?, None),
            ForecastMethod::Firth => (fit_firth(&window, spec)?, None),
            ForecastMethod::Gfe(choice) => {
                let g = estimate_gfe(&window, spec, choice, config)?;
                let k = g.k();
                (g.fit, Some(k))
            }
        };
        let (probs, ys) = in_sample(&fitted, &window);
        let cutoff = choose_cutoff(&probs, &ys)?;
        let in_sample_youden = youden_sum(&probs, &ys, cutoff);

        let mut out_probs = Vec::with_capacity(data.n_units());
        let mut out_y = Vec::with_capacity(data.n_units());
        for i in 0..data.n_units() {
            let mut x = Vec::with_capacity(window.n_covariates());
            if spec.dynamic {
                x.push(f64::from(data.y(i, end_idx)));
            }
            x.extend_from_slice(data.x(i, target));
            out_probs.push(fitted.predict(i, &x));
            out_y.push(data.y(i, target));
        }
        let confusion = Confusion::tally(&out_probs, &out_y, cutoff);
        let forecastable_units = fitted.kept_units();
        report.rows.push(ForecastRow {
            train_end: end,
            forecast_time: data.time_ids()[target],
            f1: confusion.f1(),
            confusion,
            cutoff,
            k,
            n_dropped: data.n_units() - forecastable_units.len(),
            forecastable_units,
            in_sample_youden,
        });
        report.fits.push(fitted);
        report.windows.push(window);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityRow {
    pub estimator: String,
    pub unit: String,
    pub time: i64,
    pub probability: f64,
    pub dropped: bool,
}

/// In-sample predicted probabilities of every unit and period for each
/// labelled fit. Dropped units contribute the limit of their infinite
/// intercept, which is 0 for units that never experience the event.
pub fn predicted_density_export(fits: &[(String, &FitResult)], data: &PanelDataset) -> Result<Vec<DensityRow>> {
    let mut rows = Vec::new();
    for (label, f) in fits {
        if f.unit_intercepts.len() != data.n_units() || f.beta.len() != data.n_covariates() {
            return Err(Error::DimensionMismatch { expected: f.unit_intercepts.len(), got: data.n_units() });
        }
        for i in 0..data.n_units() {
            let dropped = matches!(f.unit_intercepts[i], UnitIntercept::Separated { .. });
            for t in 0..data.n_periods() {
                rows.push(DensityRow {
                    estimator: label.clone(),
                    unit: data.unit_ids()[i].clone(),
                    time: data.time_ids()[t],
                    probability: f.predict(i, data.x(i, t)),
                    dropped,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_density_csv<W: Write>(rows: &[DensityRow], header: &[String], mut out: W) -> Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["estimator", "unit", "time", "probability", "dropped"])?;
    for r in rows {
        w.write_record([
            r.estimator.clone(),
            r.unit.clone(),
            r.time.to_string(),
            format!("{:.10}", r.probability),
            u8::from(r.dropped).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_csv<W: Write>(report: &ForecastReport, header: &[String], mut out: W) -> Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "train_end",
        "forecast_time",
        "true_pos",
        "true_neg",
        "false_pos",
        "false_neg",
        "k",
        "drop",
        "f1",
        "cutoff",
    ])?;
    for r in &report.rows {
        w.write_record([
            report.method.clone(),
            r.train_end.to_string(),
            r.forecast_time.to_string(),
            r.confusion.true_pos.to_string(),
            r.confusion.true_neg.to_string(),
            r.confusion.false_pos.to_string(),
            r.confusion.false_neg.to_string(),
            r.k.map(|k| k.to_string()).unwrap_or_default(),
            r.n_dropped.to_string(),
            r.f1.map(|f| format!("{f:.3}")).unwrap_or_else(|| "-".into()),
            format!("{:.6}", r.cutoff),
        ])?;
    }
    w.flush()?;
    Ok(())
}
