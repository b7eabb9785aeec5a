//! Monte Carlo harness for static, dynamic and trending-regressor logit
//! designs.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::ape::{
    default_kind, half_panel_jackknife_from, plug_in_ape_over, ApeEstimate, ApeMethod, ApeSample, Z_05, Z_10,
};
use crate::data::{add_lagged_outcome, detect_separation_all, PanelDataset};
use crate::error::{Error, Result};
use crate::estimate::link::logistic;
use crate::estimate::{fit, fit_firth, FitResult, Link, ModelSpec};
use crate::gfe::{estimate_gfe_grid, GfeConfig};

/// Coefficient on the lagged outcome in the dynamic designs.
pub const LAG_COEFFICIENT: f64 = 0.5;
/// Coefficient on each of the two exogenous covariates.
pub const SLOPE: f64 = 1.0;
/// Periods simulated before the observation window in dynamic designs.
pub const BURN_IN: usize = 100;
/// Drift per period of the covariates in the trending design.
pub const TREND: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Static,
    Dynamic,
    Trending,
}

impl DesignKind {
    pub fn is_dynamic(self) -> bool {
        !matches!(self, DesignKind::Static)
    }
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DesignKind::Static => "static",
            DesignKind::Dynamic => "dynamic",
            DesignKind::Trending => "trending",
        })
    }
}

impl FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "static" => Ok(DesignKind::Static),
            "dynamic" => Ok(DesignKind::Dynamic),
            "trending" => Ok(DesignKind::Trending),
            other => Err(Error::InvalidArgument(format!("unknown design `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// True per-unit effects averaged over units with outcome variation.
    Infeasible,
    Ml,
    Jackknife,
    Firth,
    Gfe,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Infeasible => "infeasible",
            EstimatorKind::Ml => "ml",
            EstimatorKind::Jackknife => "j",
            EstimatorKind::Firth => "firth",
            EstimatorKind::Gfe => "gfe",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "infeasible" => Ok(EstimatorKind::Infeasible),
            "ml" | "fe" => Ok(EstimatorKind::Ml),
            "j" | "jackknife" => Ok(EstimatorKind::Jackknife),
            "firth" => Ok(EstimatorKind::Firth),
            "gfe" => Ok(EstimatorKind::Gfe),
            other => Err(Error::InvalidArgument(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimDesign {
    pub kind: DesignKind,
    pub n: usize,
    /// Estimation periods (after the initial condition in dynamic designs).
    pub t: usize,
    pub nu_alpha: f64,
    pub reps: usize,
    pub gamma_grid: Vec<f64>,
    pub estimators: Vec<EstimatorKind>,
    pub seed: u64,
    pub kmeans_restarts: usize,
}

impl SimDesign {
    /// Design with 200 replications, the γ grid (0.1, 0.4, 0.7, 1.0) and
    /// every estimator applicable to `kind`.
    pub fn new(kind: DesignKind, n: usize, t: usize, nu_alpha: f64) -> Self {
        let mut estimators = vec![EstimatorKind::Infeasible, EstimatorKind::Ml, EstimatorKind::Jackknife];
        if kind == DesignKind::Static {
            estimators.push(EstimatorKind::Firth);
        }
        estimators.push(EstimatorKind::Gfe);
        Self {
            kind,
            n,
            t,
            nu_alpha,
            reps: 200,
            gamma_grid: vec![0.1, 0.4, 0.7, 1.0],
            estimators,
            seed: 0,
            kmeans_restarts: crate::cluster::DEFAULT_RESTARTS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument("n must be at least 2".into()));
        }
        if self.t < 2 {
            return Err(Error::PanelTooShort { needed: 2, have: self.t });
        }
        if self.reps == 0 {
            return Err(Error::InvalidArgument("reps must be at least 1".into()));
        }
        if !self.nu_alpha.is_finite() {
            return Err(Error::InvalidArgument("nu-alpha must be finite".into()));
        }
        if self.kind.is_dynamic() && self.estimators.contains(&EstimatorKind::Firth) {
            return Err(Error::Unsupported("Firth estimation is only available for static designs".into()));
        }
        if self.estimators.contains(&EstimatorKind::Gfe) && self.gamma_grid.is_empty() {
            return Err(Error::InvalidArgument("GFE needs at least one gamma".into()));
        }
        for &g in &self.gamma_grid {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1], got {g}")));
            }
        }
        Ok(())
    }

    /// Covariate whose APE is studied: x₁ in static designs, the lagged
    /// outcome otherwise.
    pub fn target_covariate(&self) -> usize {
        0
    }

    fn spec(&self) -> ModelSpec {
        ModelSpec::individual(Link::Logit, self.kind.is_dynamic())
    }

    /// Covariate drift at observation period `t` (1-based inside the window).
    fn drift(&self, t: usize) -> f64 {
        match self.kind {
            DesignKind::Trending => TREND * (t as f64 - self.t as f64 / 2.0),
            _ => 0.0,
        }
    }
}

/// A simulated panel with its true individual effects.
#[derive(Debug, Clone)]
pub struct SimPanel {
    /// Estimation panel: covariates (x₁, x₂) for static designs and
    /// (y_lag, x₁, x₂) for dynamic ones.
    pub data: PanelDataset,
    pub alpha: Vec<f64>,
}

/// Stream of random numbers for one replication.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// Standard logistic draw by inverting the CDF at a uniform.
pub fn logistic_quantile(u: f64) -> f64 {
    (u / (1.0 - u)).ln()
}

fn logistic_draw(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random();
    // `random` samples [0, 1); 0 maps to −∞, which is harmless but avoided.
    logistic_quantile(u.max(f64::MIN_POSITIVE))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn draw_panel(design: &SimDesign, rep: usize) -> Result<SimPanel> {
    let panel = draw_raw_panel(design, rep)?;
    if design.kind.is_dynamic() {
        Ok(SimPanel { data: add_lagged_outcome(&panel.data)?, alpha: panel.alpha })
    } else {
        Ok(panel)
    }
}

/// Draws replication `rep` before any lag is added: dynamic designs return
/// T + 1 periods (0..=T) whose first period serves as the initial condition.
pub fn draw_raw_panel(design: &SimDesign, rep: usize) -> Result<SimPanel> {
    let mut rng = replication_rng(design.seed, rep);
    let (n, t) = (design.n, design.t);
    let mut alpha = Vec::with_capacity(n);
    let unit_ids: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
    let names = vec!["x1".to_string(), "x2".to_string()];
    match design.kind {
        DesignKind::Static => {
            let mut y = Vec::with_capacity(n * t);
            let mut x = Vec::with_capacity(n * t * 2);
            for _ in 0..n {
                let a = design.nu_alpha + normal(&mut rng);
                alpha.push(a);
                for _ in 0..t {
                    let x1 = normal(&mut rng) + a;
                    let x2 = normal(&mut rng) + a;
                    let u = logistic_draw(&mut rng);
                    x.extend([x1, x2]);
                    y.push(u8::from(SLOPE * (x1 + x2) + a + u > 0.0));
                }
            }
            let data = PanelDataset::new(unit_ids, (1..=t as i64).collect(), names, y, x)?;
            Ok(SimPanel { data, alpha })
        }
        DesignKind::Dynamic | DesignKind::Trending => {
            let keep = t + 1;
            let mut y = Vec::with_capacity(n * keep);
            let mut x = Vec::with_capacity(n * keep * 2);
            for _ in 0..n {
                let a = design.nu_alpha + normal(&mut rng);
                alpha.push(a);
                let mut prev = 0u8;
                // Burn-in periods run with the drift frozen at the window's
                // first period; the very first draw has no lag term.
                for s in 0..BURN_IN + keep {
                    let period = s.saturating_sub(BURN_IN);
                    let shift = design.drift(period);
                    let x1 = normal(&mut rng) + a + shift;
                    let x2 = normal(&mut rng) + a + shift;
                    let u = logistic_draw(&mut rng);
                    let lag = if s == 0 { 0.0 } else { LAG_COEFFICIENT * f64::from(prev) };
                    let cur = u8::from(lag + SLOPE * (x1 + x2) + a + u > 0.0);
                    if s >= BURN_IN {
                        x.extend([x1, x2]);
                        y.push(cur);
                    }
                    prev = cur;
                }
            }
            let data = PanelDataset::new(unit_ids, (0..keep as i64).collect(), names, y, x)?;
            Ok(SimPanel { data, alpha })
        }
    }
}

/// E[g(Z)] for Z ~ N(mean, sd²) by composite Simpson quadrature over ±12 sd.
pub fn gaussian_expectation(mean: f64, sd: f64, g: impl Fn(f64) -> f64) -> f64 {
    const INTERVALS: usize = 20_000;
    let (lo, hi) = (-12.0, 12.0);
    let h = (hi - lo) / INTERVALS as f64;
    let norm = (2.0 * std::f64::consts::PI).sqrt();
    let mut total = 0.0;
    for k in 0..=INTERVALS {
        let z = lo + k as f64 * h;
        let w = if k == 0 || k == INTERVALS {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        total += w * g(mean + sd * z) * (-0.5 * z * z).exp() / norm;
    }
    total * h / 3.0
}

fn logistic_density(z: f64) -> f64 {
    logistic(z) * logistic(-z)
}

/// Population APE μ₀ of the studied covariate. The index θ'x + α is
/// Gaussian with mean 3ν (plus twice the drift) and variance 2 + 9 = 11.
pub fn population_ape(design: &SimDesign) -> f64 {
    let sd = 11f64.sqrt();
    let centre = 3.0 * design.nu_alpha;
    match design.kind {
        DesignKind::Static => SLOPE * gaussian_expectation(centre, sd, logistic_density),
        DesignKind::Dynamic | DesignKind::Trending => {
            let per_period = |t: usize| {
                let m = centre + 2.0 * SLOPE * design.drift(t);
                gaussian_expectation(m, sd, |z| logistic(z + LAG_COEFFICIENT) - logistic(z))
            };
            if design.kind == DesignKind::Dynamic {
                per_period(1)
            } else {
                (1..=design.t).map(per_period).sum::<f64>() / design.t as f64
            }
        }
    }
}

/// True per-observation effect of the studied covariate.
fn true_effect(design: &SimDesign, x: &[f64], alpha: f64) -> f64 {
    match design.kind {
        DesignKind::Static => SLOPE * logistic_density(SLOPE * (x[0] + x[1]) + alpha),
        _ => {
            let z = SLOPE * (x[1] + x[2]) + alpha;
            logistic(z + LAG_COEFFICIENT) - logistic(z)
        }
    }
}

/// Average of the true effects over units with outcome variation.
pub fn infeasible_ape(design: &SimDesign, panel: &SimPanel) -> Result<ApeEstimate> {
    let data = &panel.data;
    let sep = detect_separation_all(data);
    let t = data.n_periods();
    let means: Vec<f64> = (0..data.n_units())
        .filter(|&i| !sep.contains(i))
        .map(|i| (0..t).map(|s| true_effect(design, data.x(i, s), panel.alpha[i])).sum::<f64>() / t as f64)
        .collect();
    if means.is_empty() {
        return Err(Error::NoUsableUnits);
    }
    let n = means.len() as f64;
    let value = means.iter().sum::<f64>() / n;
    let s2 = means.iter().map(|m| (m - value).powi(2)).sum::<f64>() / n;
    let j = design.target_covariate();
    Ok(ApeEstimate {
        covariate: data.covariate_names()[j].clone(),
        kind: default_kind(&design.spec(), j),
        sample: ApeSample::Kept,
        value,
        se: (s2 / n).sqrt(),
        n_units_used: means.len(),
        method: ApeMethod::Plugin,
    })
}

/// Outcome of one estimator in one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Draw {
    pub value: f64,
    pub se: f64,
    /// Fraction of observations dropped for complete separation.
    pub cs: f64,
    pub k: Option<usize>,
}

/// Identifies a report row: estimator plus γ for GFE rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RowKey {
    pub estimator: EstimatorKind,
    pub gamma: Option<f64>,
}

impl RowKey {
    fn rows(design: &SimDesign) -> Vec<RowKey> {
        let mut keys = Vec::new();
        for &e in &design.estimators {
            if e == EstimatorKind::Gfe {
                keys.extend(design.gamma_grid.iter().map(|&g| RowKey { estimator: e, gamma: Some(g) }));
            } else {
                keys.push(RowKey { estimator: e, gamma: None });
            }
        }
        keys
    }
}

/// Per-replication results in row order; `None` marks a failure.
#[derive(Debug, Clone)]
pub struct Replication {
    pub rep: usize,
    pub draws: Vec<Option<Draw>>,
}

fn draw_from(ape: &ApeEstimate, cs: f64, k: Option<usize>) -> Draw {
    Draw { value: ape.value, se: ape.se, cs, k }
}

/// Seed for the k-means restarts of one replication.
fn cluster_seed(seed: u64, rep: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (rep as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Plug-in APE averaged over all units, as the comparison estimators report it.
fn full_sample_ape(f: &FitResult, data: &PanelDataset, j: usize) -> Result<ApeEstimate> {
    plug_in_ape_over(f, data, j, default_kind(&f.spec, j), ApeSample::All)
}

pub fn run_replication(design: &SimDesign, rep: usize) -> Result<Replication> {
    let panel = draw_panel(design, rep)?;
    let data = &panel.data;
    let spec = design.spec();
    let j = design.target_covariate();
    let keys = RowKey::rows(design);
    let needs_ml = design.estimators.iter().any(|e| matches!(e, EstimatorKind::Ml | EstimatorKind::Jackknife));
    let ml = if needs_ml {
        fit(data, &spec).and_then(|f| Ok((full_sample_ape(&f, data, j)?, f.dropped_units.fraction_dropped_obs))).ok()
    } else {
        None
    };
    let gfe = if design.estimators.contains(&EstimatorKind::Gfe) {
        let cfg = GfeConfig {
            restarts: design.kmeans_restarts,
            seed: cluster_seed(design.seed, rep),
            ..GfeConfig::default()
        };
        estimate_gfe_grid(data, &spec, &design.gamma_grid, &cfg).ok()
    } else {
        None
    };
    let mut draws = Vec::with_capacity(keys.len());
    let mut gamma_pos = 0;
    for key in keys {
        let d = match key.estimator {
            EstimatorKind::Infeasible => {
                let sep = detect_separation_all(data);
                infeasible_ape(design, &panel).ok().map(|a| draw_from(&a, sep.fraction_dropped_obs, None))
            }
            EstimatorKind::Ml => ml.as_ref().map(|(a, cs)| draw_from(a, *cs, None)),
            EstimatorKind::Jackknife => ml.as_ref().and_then(|(a, cs)| {
                half_panel_jackknife_from(a, data, &spec, j).ok().map(|jk| draw_from(&jk, *cs, None))
            }),
            EstimatorKind::Firth => {
                fit_firth(data, &spec).and_then(|f| full_sample_ape(&f, data, j)).ok().map(|a| draw_from(&a, 0.0, None))
            }
            EstimatorKind::Gfe => {
                let entry = gfe.as_ref().and_then(|all| all[gamma_pos].as_ref().ok());
                gamma_pos += 1;
                entry.map(|r| draw_from(&r.apes[j], r.fraction_obs_dropped, Some(r.k())))
            }
        };
        draws.push(d);
    }
    Ok(Replication { rep, draws })
}

#[derive(Debug, Clone, Serialize)]
pub struct SimRow {
    pub estimator: EstimatorKind,
    pub gamma: Option<f64>,
    pub mean_ratio: f64,
    pub median_ratio: f64,
    /// Monte Carlo standard deviation of the APE estimates.
    pub sd_ape: f64,
    pub size_05: f64,
    pub size_10: f64,
    pub pct_cs: f64,
    pub avg_k: Option<f64>,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub design: SimDesign,
    pub population_ape: f64,
    pub rows: Vec<SimRow>,
}

impl SimReport {
    pub fn row(&self, estimator: EstimatorKind, gamma: Option<f64>) -> Option<&SimRow> {
        self.rows.iter().find(|r| {
            r.estimator == estimator
                && match (r.gamma, gamma) {
                    (Some(a), Some(b)) => (a - b).abs() < 1e-12,
                    (None, None) => true,
                    _ => false,
                }
        })
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn aggregate(key: RowKey, draws: &[Draw], failures: usize, mu0: f64) -> SimRow {
    let n = draws.len() as f64;
    let ratios: Vec<f64> = draws.iter().map(|d| d.value / mu0).collect();
    let mean_value = draws.iter().map(|d| d.value).sum::<f64>() / n;
    let sd_ape = if draws.len() > 1 {
        (draws.iter().map(|d| (d.value - mean_value).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    let rate = |z: f64| draws.iter().filter(|d| ((d.value - mu0) / d.se).abs() > z).count() as f64 / n;
    SimRow {
        estimator: key.estimator,
        gamma: key.gamma,
        mean_ratio: ratios.iter().sum::<f64>() / n,
        median_ratio: median(ratios),
        sd_ape,
        size_05: rate(Z_05),
        size_10: rate(Z_10),
        pct_cs: 100.0 * draws.iter().map(|d| d.cs).sum::<f64>() / n,
        avg_k: (key.estimator == EstimatorKind::Gfe)
            .then(|| draws.iter().filter_map(|d| d.k).map(|k| k as f64).sum::<f64>() / n),
        successes: draws.len(),
        failures,
    }
}

/// Aggregates replications (in replication order) into report rows.
pub fn summarize(design: &SimDesign, replications: &[Replication]) -> SimReport {
    let mu0 = population_ape(design);
    let rows = RowKey::rows(design)
        .into_iter()
        .enumerate()
        .map(|(pos, key)| {
            let ok: Vec<Draw> = replications.iter().filter_map(|r| r.draws[pos]).collect();
            let failures = replications.len() - ok.len();
            aggregate(key, &ok, failures, mu0)
        })
        .collect();
    SimReport { design: design.clone(), population_ape: mu0, rows }
}

/// Runs every replication (in parallel on the current rayon pool) and
/// aggregates them in replication order.
pub fn run_study(design: &SimDesign) -> Result<SimReport> {
    design.validate()?;
    let reps = (0..design.reps).into_par_iter().map(|rep| run_replication(design, rep)).collect::<Result<Vec<_>>>()?;
    Ok(summarize(design, &reps))
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        "NA".to_string()
    }
}

/// Writes the report as CSV. `header` lines are emitted first as `#`
/// comments.
pub fn write_report_csv<W: Write>(report: &SimReport, header: &[String], mut out: W) -> Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "# population_ape={}", fmt_num(report.population_ape))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "estimator",
        "gamma",
        "mean_ratio",
        "median_ratio",
        "sd",
        "size_05",
        "size_10",
        "pct_cs",
        "avg_k",
        "successes",
        "failures",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.estimator.label().to_string(),
            r.gamma.map(|g| g.to_string()).unwrap_or_default(),
            fmt_num(r.mean_ratio),
            fmt_num(r.median_ratio),
            fmt_num(r.sd_ape),
            fmt_num(r.size_05),
            fmt_num(r.size_10),
            fmt_num(r.pct_cs),
            r.avg_k.map(fmt_num).unwrap_or_default(),
            r.successes.to_string(),
            r.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
