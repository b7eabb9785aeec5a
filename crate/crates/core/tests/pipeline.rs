use gfe_core::ape::{plug_in_ape, plug_in_ape_over, ApeSample, EffectKind};
use gfe_core::data::{read_csv, write_csv, CsvSchema, PanelDataset};
use gfe_core::estimate::{fit, Link, ModelSpec};
use gfe_core::forecast::{expanding_window_forecast, ForecastMethod};
use gfe_core::gfe::{estimate_gfe, GfeConfig, GroupChoice};
use gfe_core::simulate::{draw_panel, draw_raw_panel, run_study, DesignKind, EstimatorKind, SimDesign};
use gfe_core::Error;

fn simulated(kind: DesignKind, n: usize, t: usize, rep: usize) -> PanelDataset {
    let design = SimDesign::new(kind, n, t, -0.5);
    draw_panel(&design, rep).unwrap().data
}

#[test]
fn csv_roundtrip_preserves_panel() {
    let data = simulated(DesignKind::Static, 20, 6, 3);
    let mut buf = Vec::new();
    write_csv(&data, &mut buf).unwrap();
    let back = read_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
    assert_eq!(back.n_units(), data.n_units());
    assert_eq!(back.time_ids(), data.time_ids());
    for i in 0..data.n_units() {
        assert_eq!(back.y_row(i), data.y_row(i));
        for t in 0..data.n_periods() {
            for (a, b) in back.x(i, t).iter().zip(data.x(i, t)) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}

#[test]
fn shuffled_rows_give_same_panel() {
    let text = "unit,time,y,x\n2,2,1,0.5\n1,1,0,1.0\n2,1,0,-1.0\n1,2,1,2.0\n";
    let sorted = "unit,time,y,x\n1,1,0,1.0\n1,2,1,2.0\n2,1,0,-1.0\n2,2,1,0.5\n";
    let a = read_csv(text.as_bytes(), &CsvSchema::default()).unwrap();
    let b = read_csv(sorted.as_bytes(), &CsvSchema::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unbalanced_panel_is_rejected() {
    let text = "unit,time,y,x\n1,1,0,1.0\n1,2,1,2.0\n2,1,0,-1.0\n";
    assert!(read_csv(text.as_bytes(), &CsvSchema::default()).is_err());
}

#[test]
fn non_binary_outcome_is_rejected() {
    let text = "unit,time,y,x\n1,1,2,1.0\n1,2,1,2.0\n2,1,0,-1.0\n2,2,1,0.5\n";
    assert!(matches!(read_csv(text.as_bytes(), &CsvSchema::default()), Err(Error::NonBinaryOutcome { .. })));
}

#[test]
fn gfe_with_one_group_matches_pooled_fit() {
    let data = simulated(DesignKind::Static, 60, 8, 1);
    let spec = ModelSpec::individual(Link::Logit, false);
    let g = estimate_gfe(&data, &spec, GroupChoice::Fixed(1), &GfeConfig::default()).unwrap();
    let pooled = fit(&data, &ModelSpec::pooled(Link::Logit, false)).unwrap();
    assert_eq!(g.k(), 1);
    assert!((g.fit.beta[0] - pooled.beta[0]).abs() < 1e-6);
}

#[test]
fn gfe_gamma_rule_picks_between_one_and_n() {
    let data = simulated(DesignKind::Static, 100, 8, 2);
    let spec = ModelSpec::individual(Link::Logit, false);
    let g = estimate_gfe(&data, &spec, GroupChoice::Gamma(0.4), &GfeConfig::default()).unwrap();
    let sel = g.selection.as_ref().unwrap();
    assert!(g.k() >= 1 && g.k() <= data.n_units());
    assert_eq!(sel.chosen_k, g.k());
    assert_eq!(g.clusters.assignments.len(), data.n_units());
    assert!(g.apes[0].value.is_finite() && g.apes[0].se > 0.0);
}

#[test]
fn kept_and_full_sample_apes_agree_without_separation() {
    let data = simulated(DesignKind::Static, 40, 16, 5);
    let f = fit(&data, &ModelSpec::individual(Link::Logit, false)).unwrap();
    let kept = plug_in_ape(&f, &data, 0).unwrap();
    let all = plug_in_ape_over(&f, &data, 0, EffectKind::Continuous, ApeSample::All).unwrap();
    let n_kept = f.dropped_units.n_kept as f64;
    let n = data.n_units() as f64;
    assert!((all.value - kept.value * n_kept / n).abs() < 1e-12);
}

#[test]
fn forecast_rows_follow_train_ends() {
    let design = SimDesign::new(DesignKind::Dynamic, 40, 12, -0.5);
    let data = draw_raw_panel(&design, 0).unwrap().data;
    let times = data.time_ids().to_vec();
    let ends = vec![times[6], times[8], times[10]];
    let spec = ModelSpec::individual(Link::Logit, true);
    let r = expanding_window_forecast(&data, &spec, ForecastMethod::Ml, None, &ends, &GfeConfig::default()).unwrap();
    assert_eq!(r.rows.len(), 3);
    for (row, end) in r.rows.iter().zip(&ends) {
        assert_eq!(row.train_end, *end);
        assert_eq!(row.confusion.total(), data.n_units());
        assert!((0.0..=1.0).contains(&row.cutoff));
    }
}

#[test]
fn forecast_past_last_period_fails() {
    let data = simulated(DesignKind::Static, 10, 5, 0);
    let last = *data.time_ids().last().unwrap();
    let spec = ModelSpec::individual(Link::Logit, false);
    assert!(expanding_window_forecast(&data, &spec, ForecastMethod::Ml, None, &[last], &GfeConfig::default()).is_err());
}

#[test]
fn small_study_is_reproducible() {
    let mut design = SimDesign::new(DesignKind::Static, 30, 6, -0.5);
    design.reps = 4;
    design.seed = 9;
    design.gamma_grid = vec![0.5];
    let a = run_study(&design).unwrap();
    let b = run_study(&design).unwrap();
    assert_eq!(a.rows.len(), b.rows.len());
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!(x.mean_ratio.to_bits(), y.mean_ratio.to_bits());
        assert_eq!(x.successes, y.successes);
    }
    assert!(a.row(EstimatorKind::Gfe, Some(0.5)).is_some());
    assert!(a.row(EstimatorKind::Ml, None).is_some());
}
