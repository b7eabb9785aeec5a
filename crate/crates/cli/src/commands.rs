use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

use gfe_core::ape::{default_kind, plug_in_ape_over, ApeEstimate, ApeSample, EffectKind};
use gfe_core::cluster::NoiseEstimator;
use gfe_core::data::{add_lagged_outcome, load_csv, CsvSchema, PanelDataset};
use gfe_core::estimate::{fit, fit_firth, FitResult, ModelSpec};
use gfe_core::forecast::{self, expanding_window_forecast, predicted_density_export, ForecastMethod};
use gfe_core::gfe::{estimate_gfe, rule_report, rule_report_k, GfeConfig, GroupChoice};
use gfe_core::parse::{parse_estimators, parse_gamma_grid, parse_year_range};
use gfe_core::simulate::{self, run_study, DesignKind, SimDesign};
use gfe_core::{Error, Result};

use crate::args::{
    ApeSampleArg, Cli, Command, DesignArg, EstimateArgs, ForecastArgs, InputArgs, MethodArg, Mode, ModelArgs, NoiseArg,
    SimulateArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Estimate(a) => estimate(cli, a),
        Command::Simulate(a) => simulate(cli, a),
        Command::Forecast(a) => forecast(cli, a),
    })
}

/// Resolved configuration lines written at the top of every output.
fn header(cli: &Cli) -> Vec<String> {
    let mut lines = vec![
        format!("gfe {}", env!("CARGO_PKG_VERSION")),
        format!("config: {}", serde_json::to_string(cli).expect("config serializes")),
    ];
    if !cli.no_timestamp {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        lines.push(format!("timestamp: {secs}"));
    }
    lines
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load(input: &InputArgs) -> Result<PanelDataset> {
    let schema = CsvSchema {
        unit: input.unit_col.clone(),
        time: input.time_col.clone(),
        outcome: input.outcome_col.clone(),
        covariates: input.covariates.clone(),
    };
    load_csv(&input.input, &schema)
}

fn gfe_config(model: &ModelArgs) -> GfeConfig {
    GfeConfig {
        restarts: model.kmeans_restarts,
        seed: model.seed,
        standardize: model.standardize,
        noise: match model.noise {
            NoiseArg::Plain => NoiseEstimator::Plain,
            NoiseArg::Unbiased => NoiseEstimator::Unbiased,
        },
    }
}

fn group_choice(gamma: Option<f64>, k: Option<usize>) -> Result<GroupChoice> {
    match (gamma, k) {
        (Some(_), Some(_)) => Err(Error::InvalidArgument("give either --gamma or --k, not both".into())),
        (Some(g), None) => Ok(GroupChoice::Gamma(g)),
        (None, Some(k)) => Ok(GroupChoice::Fixed(k)),
        (None, None) => Err(Error::InvalidArgument("GFE needs --gamma or --k".into())),
    }
}

fn ape_kind(spec: &ModelSpec, data: &PanelDataset, binary: &[String], j: usize) -> EffectKind {
    if binary.iter().any(|b| b == &data.covariate_names()[j]) {
        EffectKind::Discrete
    } else {
        default_kind(spec, j)
    }
}

fn fit_summary(f: &FitResult) -> Value {
    let se = f.beta_se();
    json!({
        "estimator": f.estimator,
        "link": f.spec.link,
        "dynamic": f.spec.dynamic,
        "coefficients": f.covariate_names.iter().zip(&f.beta).zip(&se)
            .map(|((n, b), s)| json!({"covariate": n, "estimate": b, "se": s}))
            .collect::<Vec<_>>(),
        "n_intercepts": f.intercepts.len(),
        "intercepts": f.intercepts.iter()
            .map(|c| json!({"label": c.label.to_string(), "value": c.value}))
            .collect::<Vec<_>>(),
        "loglik": f.loglik,
        "penalized_loglik": f.penalized_loglik,
        "iterations": f.iterations,
        "converged": f.converged,
        "gradient_norm": f.gradient_norm,
        "dropped_units": f.dropped_units.separated_units,
        "n_kept": f.dropped_units.n_kept,
        "fraction_dropped_obs": f.dropped_units.fraction_dropped_obs,
    })
}

fn write_apes(path: &Path, header: &[String], apes: &[ApeEstimate]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for line in header {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["covariate", "estimate", "se", "method", "kind", "n_units"])?;
    for a in apes {
        w.write_record([
            a.covariate.clone(),
            format!("{:.10}", a.value),
            format!("{:.10}", a.se),
            format!("{:?}", a.method).to_lowercase(),
            format!("{:?}", a.kind).to_lowercase(),
            a.n_units_used.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn estimate(cli: &Cli, a: &EstimateArgs) -> Result<()> {
    let raw = load(&a.input)?;
    let data = if a.model.dynamic { add_lagged_outcome(&raw)? } else { raw };
    let link = a.model.link.into();
    let spec = ModelSpec::individual(link, a.model.dynamic);
    let mut doc = json!({
        "header": header(cli),
        "mode": a.mode,
        "n_units": data.n_units(),
        "n_periods": data.n_periods(),
        "covariates": data.covariate_names(),
    });
    let (fitted, gfe_part) = match a.mode {
        Mode::Fe => (fit(&data, &spec)?, None),
        Mode::Pooled => (fit(&data, &ModelSpec::pooled(link, a.model.dynamic))?, None),
        Mode::Firth => (fit_firth(&data, &spec)?, None),
        Mode::Gfe => {
            let r = estimate_gfe(&data, &spec, group_choice(a.gamma, a.k)?, &gfe_config(&a.model))?;
            let rule = match &r.selection {
                Some(sel) => rule_report(sel),
                None => rule_report_k(r.k(), data.n_units(), data.n_periods()),
            };
            let part = json!({
                "k": r.k(),
                "selection": r.selection.as_ref().map(|s| json!({
                    "gamma": s.gamma,
                    "chosen_k": s.chosen_k,
                    "noise_variance": s.noise_variance,
                    "objective_path": s.objective_path,
                    "rule_compliant": s.rule_compliant,
                })),
                "rule": rule,
                "assignments": r.clusters.assignments,
                "kmeans_objective": r.clusters.objective,
                "dropped_groups": r.dropped_groups,
                "fraction_obs_dropped": r.fraction_obs_dropped,
            });
            (r.fit, Some(part))
        }
    };
    let sample = match a.ape_sample {
        ApeSampleArg::All => ApeSample::All,
        ApeSampleArg::Kept => ApeSample::Kept,
    };
    let apes = (0..data.n_covariates())
        .map(|j| plug_in_ape_over(&fitted, &data, j, ape_kind(&fitted.spec, &data, &a.binary, j), sample))
        .collect::<Result<Vec<_>>>()?;
    doc["fit"] = fit_summary(&fitted);
    doc["apes"] = serde_json::to_value(&apes).expect("apes serialize");
    if let Some(part) = gfe_part {
        doc["gfe"] = part;
    }
    let mut out = open_out(a.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &doc).map_err(io::Error::from)?;
    writeln!(out)?;
    out.flush()?;
    if let Some(p) = &a.ape_out {
        write_apes(p, &header(cli), &apes)?;
    }
    Ok(())
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let kind = match a.design {
        DesignArg::Static => DesignKind::Static,
        DesignArg::Dynamic => DesignKind::Dynamic,
        DesignArg::Trending => DesignKind::Trending,
    };
    let mut design = SimDesign::new(kind, a.n, a.t, a.nu_alpha);
    design.reps = a.reps;
    design.seed = a.seed;
    design.kmeans_restarts = a.kmeans_restarts;
    design.gamma_grid = parse_gamma_grid(&a.gamma)?;
    if let Some(e) = &a.estimators {
        design.estimators = parse_estimators(e)?;
    }
    let report = run_study(&design)?;
    let out = open_out(a.out.as_deref())?;
    simulate::write_report_csv(&report, &header(cli), out)
}

fn forecast(cli: &Cli, a: &ForecastArgs) -> Result<()> {
    let data = load(&a.input)?;
    let spec = ModelSpec::individual(a.model.link.into(), a.model.dynamic);
    let method = match a.method {
        MethodArg::Ml => ForecastMethod::Ml,
        MethodArg::Firth => ForecastMethod::Firth,
        MethodArg::Gfe => ForecastMethod::Gfe(group_choice(a.gamma, a.k)?),
    };
    let ends = parse_year_range(&a.train_ends)?;
    let report = expanding_window_forecast(&data, &spec, method, a.train_start, &ends, &gfe_config(&a.model))?;
    let hdr = header(cli);
    forecast::write_report_csv(&report, &hdr, open_out(a.out.as_deref())?)?;
    if let Some(p) = &a.density_out {
        let (Some(f), Some(w)) = (report.fits.last(), report.windows.last()) else {
            return Ok(());
        };
        let rows = predicted_density_export(&[(report.method.clone(), f)], w)?;
        forecast::write_density_csv(&rows, &hdr, BufWriter::new(File::create(p)?))?;
    }
    Ok(())
}
