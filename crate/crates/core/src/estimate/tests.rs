use approx::assert_relative_eq;

use super::*;
use crate::data::{add_lagged_outcome, detect_separation_all, read_csv, CsvSchema};
use crate::testutil::{random_panel, with_separated};

fn panel(csv: &str) -> PanelDataset {
    read_csv(csv.as_bytes(), &CsvSchema::default()).unwrap()
}

fn two_by_two() -> PanelDataset {
    panel("unit,time,y\n1,1,1\n1,2,0\n2,1,1\n2,2,1\n")
}

/// Central-difference gradient of `f`.
fn fd_gradient(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    (0..theta.len())
        .map(|k| {
            let mut up = theta.to_vec();
            let mut dn = theta.to_vec();
            up[k] += h;
            dn[k] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn intercept_only_closed_form() {
    let d = panel("unit,time,y\nA,1,1\nA,2,1\nA,3,1\nA,4,0\nB,1,0\nB,2,1\nB,3,0\nB,4,0\n");
    let f = fit(&d, &ModelSpec::individual(Link::Logit, false)).unwrap();
    assert_relative_eq!(f.unit_alpha(0).unwrap(), 3f64.ln(), epsilon = 1e-8);
    assert_relative_eq!(f.unit_alpha(1).unwrap(), -(3f64.ln()), epsilon = 1e-8);
}

#[test]
fn two_by_two_individual_drops_second_unit() {
    let f = fit(&two_by_two(), &ModelSpec::individual(Link::Logit, false)).unwrap();
    assert_eq!(f.dropped_units.separated_units, vec![1]);
    assert_eq!(f.unit_alpha(1), None);
    assert_eq!(f.unit_intercepts[1], UnitIntercept::Separated { all_ones: true });
    // Unit 1 has p = 1/2, so its intercept is 0.
    assert_relative_eq!(f.unit_alpha(0).unwrap(), 0.0, epsilon = 1e-10);
    assert_eq!(f.predict(1, &[]), 1.0);
}

#[test]
fn two_by_two_single_group_keeps_both() {
    let f = fit(&two_by_two(), &ModelSpec::grouped(Link::Logit, vec![0, 0], false)).unwrap();
    assert!(f.dropped_units.separated_units.is_empty());
    assert_eq!(f.intercepts.len(), 1);
    assert_eq!(f.intercepts[0].label, InterceptLabel::Group(1));
    assert_relative_eq!(f.intercepts[0].value, 3f64.ln(), epsilon = 1e-8);
}

#[test]
fn intercept_only_loglik_value() {
    let d = panel("unit,time,y\nA,1,1\nA,2,0\nB,1,0\nB,2,1\n");
    let spec = ModelSpec::individual(Link::Logit, false);
    let ll = loglik(&[0.0, 0.0], &d, &spec).unwrap();
    assert_relative_eq!(ll, -4.0 * 2f64.ln(), epsilon = 1e-14);
    // Per unit: -2 log 2.
    let spec1 = ModelSpec::pooled(Link::Logit, false);
    let one = panel("unit,time,y\nA,1,1\nA,2,0\nB,1,1\nB,2,1\n").select_units(&[0]);
    assert!(one.is_err(), "single-unit panels are rejected");
    let ll_pooled = loglik(&[0.0], &d, &spec1).unwrap();
    assert_relative_eq!(ll_pooled / 2.0, -2.0 * 2f64.ln(), epsilon = 1e-14);
}

#[test]
fn dimension_mismatch() {
    let d = two_by_two();
    let spec = ModelSpec::individual(Link::Logit, false);
    assert!(matches!(loglik(&[0.0], &d, &spec), Err(Error::DimensionMismatch { expected: 2, got: 1 })));
}

#[test]
fn score_and_hessian_match_finite_differences() {
    let d = random_panel(11, 6, 5, 2);
    for link in [Link::Logit, Link::Probit] {
        for mode in [InterceptMode::Individual, InterceptMode::Grouped(vec![0, 1, 0, 2, 1, 2]), InterceptMode::Pooled] {
            let spec = ModelSpec::new(link, mode.clone(), false);
            let dim = 2 + mode.n_intercepts(6);
            let theta: Vec<f64> = (0..dim).map(|k| 0.3 * ((k as f64) * 1.7).sin()).collect();
            let g = score(&theta, &d, &spec).unwrap();
            let fd = fd_gradient(|th| loglik(th, &d, &spec).unwrap(), &theta, 1e-6);
            for k in 0..dim {
                assert!((g[k] - fd[k]).abs() <= 1e-6 * (1.0 + g[k].abs()), "{link} {mode:?} {k}");
            }
            let h = hessian(&theta, &d, &spec).unwrap();
            for k in 0..dim {
                let col = fd_gradient(|th| score(th, &d, &spec).unwrap()[k], &theta, 1e-6);
                for c in 0..dim {
                    assert!((h[(k, c)] - col[c]).abs() <= 1e-5 * (1.0 + h[(k, c)].abs()));
                }
            }
        }
    }
}

#[test]
fn score_vanishes_at_mle() {
    let d = random_panel(3, 8, 6, 2);
    let spec = ModelSpec::individual(Link::Logit, false);
    let f = fit(&d, &spec).unwrap();
    let kept = f.kept_units();
    let sub = d.select_units(&kept).unwrap();
    let mut theta = f.beta.clone();
    theta.extend(f.intercepts.iter().map(|c| c.value));
    let g = score(&theta, &sub, &spec).unwrap();
    assert!(g.iter().all(|v| v.abs() < 1e-8 * (1.0 + f.loglik.abs())));
}

#[test]
fn concentrated_matches_joint() {
    for seed in 0..10 {
        let d = random_panel(100 + seed, 9, 5, 2);
        for link in [Link::Logit, Link::Probit] {
            let spec = ModelSpec::individual(link, false);
            let a = fit(&d, &spec);
            let b = fit_with(&d, &spec, &FitOptions { optimizer: Optimizer::Joint, ..FitOptions::default() });
            let (Ok(a), Ok(b)) = (a, b) else { continue };
            for (x, y) in a.beta.iter().zip(&b.beta) {
                assert!((x - y).abs() < 1e-6);
            }
            for (x, y) in a.intercepts.iter().zip(&b.intercepts) {
                assert!((x.value - y.value).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn singleton_groups_reproduce_individual_mode() {
    let d = random_panel(5, 10, 6, 2);
    let ind = fit(&d, &ModelSpec::individual(Link::Logit, false)).unwrap();
    let grp = fit(&d, &ModelSpec::grouped(Link::Logit, (0..10).collect(), false)).unwrap();
    assert_eq!(ind.dropped_units, grp.dropped_units);
    for (a, b) in ind.beta.iter().zip(&grp.beta) {
        assert_relative_eq!(a, b, epsilon = 1e-8);
    }
    for (a, b) in ind.intercepts.iter().zip(&grp.intercepts) {
        assert_relative_eq!(a.value, b.value, epsilon = 1e-8);
    }
}

#[test]
fn one_group_reproduces_pooled_mode() {
    let d = random_panel(6, 10, 6, 2);
    let pooled = fit(&d, &ModelSpec::pooled(Link::Logit, false)).unwrap();
    let grp = fit(&d, &ModelSpec::grouped(Link::Logit, vec![0; 10], false)).unwrap();
    for (a, b) in pooled.beta.iter().zip(&grp.beta) {
        assert_relative_eq!(a, b, epsilon = 1e-8);
    }
    assert_relative_eq!(pooled.intercepts[0].value, grp.intercepts[0].value, epsilon = 1e-8);
    assert!(pooled.dropped_units.separated_units.is_empty());
}

#[test]
fn dropping_separated_units_leaves_beta_unchanged() {
    let d = with_separated(&random_panel(8, 12, 4, 2), &[2, 5, 9]);
    let full = fit(&d, &ModelSpec::individual(Link::Logit, false)).unwrap();
    assert_eq!(full.dropped_units.separated_units, vec![2, 5, 9]);
    let reduced = d.select_units(&full.kept_units()).unwrap();
    let r = fit(&reduced, &ModelSpec::individual(Link::Logit, false)).unwrap();
    for (a, b) in full.beta.iter().zip(&r.beta) {
        assert_relative_eq!(a, b, epsilon = 1e-9);
    }
}

#[test]
fn loglik_non_decreasing_along_trace() {
    for seed in 0..5 {
        let d = random_panel(200 + seed, 10, 6, 2);
        for link in [Link::Logit, Link::Probit] {
            if let Ok(f) = fit(&d, &ModelSpec::individual(link, false)) {
                for w in f.trace.windows(2) {
                    assert!(w[1].loglik >= w[0].loglik - 1e-12 * w[0].loglik.abs());
                }
                assert!(f.gradient_norm < 1e-8 * (1.0 + f.loglik.abs()));
            }
        }
    }
}

#[test]
fn vcov_dimension_and_symmetry() {
    let d = random_panel(9, 8, 6, 2);
    let f = fit(&d, &ModelSpec::individual(Link::Logit, false)).unwrap();
    let v = f.vcov.dense();
    assert_eq!(v.nrows(), 2 + f.intercepts.len());
    for r in 0..v.nrows() {
        assert!(v[(r, r)] > 0.0);
        for c in 0..v.ncols() {
            assert_relative_eq!(v[(r, c)], v[(c, r)], epsilon = 1e-10);
        }
    }
}

#[test]
fn time_constant_covariate_is_collinear_with_fixed_effects() {
    let d = panel("unit,time,y,x\nA,1,1,1\nA,2,0,1\nA,3,1,1\nB,1,0,2\nB,2,1,2\nB,3,0,2\n");
    let err = fit(&d, &ModelSpec::individual(Link::Logit, false)).unwrap_err();
    assert!(matches!(err, Error::CollinearDesign), "{err:?}");
}

#[test]
fn quasi_separation_does_not_converge() {
    // y = 1 exactly when x > 0 within every unit: β diverges.
    let d =
        panel("unit,time,y,x\nA,1,1,1\nA,2,0,-1\nA,3,1,2\nB,1,0,-2\nB,2,1,1\nB,3,0,-1\nC,1,1,3\nC,2,0,-3\nC,3,0,-1\n");
    let err = fit(&d, &ModelSpec::individual(Link::Logit, false)).unwrap_err();
    match err {
        Error::NonConvergence(f) => {
            assert!(!f.converged);
            assert!(!f.trace.is_empty());
        }
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn all_separated_has_no_usable_units() {
    let d = panel("unit,time,y\nA,1,0\nA,2,0\nB,1,1\nB,2,1\n");
    assert!(matches!(fit(&d, &ModelSpec::individual(Link::Logit, false)), Err(Error::NoUsableUnits)));
}

#[test]
fn dynamic_requires_binary_first_covariate() {
    let d = random_panel(1, 4, 4, 1);
    assert!(matches!(fit(&d, &ModelSpec::individual(Link::Logit, true)), Err(Error::NonBinaryCovariate(0))));
    let lagged = add_lagged_outcome(&d).unwrap();
    let _ = fit(&lagged, &ModelSpec::pooled(Link::Logit, true)).unwrap();
}

/// Penalized log-likelihood of an intercept-only unit: ℓ(α) + ½ log(T p (1 − p)).
fn firth_objective(alpha: f64, ys: &[u8]) -> f64 {
    let p = 1.0 / (1.0 + (-alpha).exp());
    let ll: f64 = ys.iter().map(|&y| if y == 1 { p.ln() } else { (1.0 - p).ln() }).sum();
    ll + 0.5 * (ys.len() as f64 * p * (1.0 - p)).ln()
}

fn grid_argmax(f: impl Fn(f64) -> f64) -> f64 {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in -20_000..=20_000 {
        let a = k as f64 * 5e-4;
        let v = f(a);
        if v > best.0 {
            best = (v, a);
        }
    }
    best.1
}

#[test]
fn firth_intercept_only_matches_grid_search() {
    let d = panel("unit,time,y\nA,1,1\nA,2,0\nB,1,1\nB,2,1\nC,1,0\nC,2,0\n");
    let f = fit_firth(&d, &ModelSpec::individual(Link::Logit, false)).unwrap();
    assert_eq!(f.dropped_units.separated_units.len(), 0);
    for (i, ys) in [[1u8, 0], [1, 1], [0, 0]].iter().enumerate() {
        let oracle = grid_argmax(|a| firth_objective(a, ys));
        assert!((f.unit_alpha(i).unwrap() - oracle).abs() < 1e-3, "unit {i}");
    }
    assert_relative_eq!(f.unit_alpha(0).unwrap(), 0.0, epsilon = 1e-8);
    // All-ones with T = 2: p = (2 + 1/2)/3 = 5/6, so α = log 5.
    assert_relative_eq!(f.unit_alpha(1).unwrap(), 5f64.ln(), epsilon = 1e-8);
}

#[test]
fn firth_keeps_separated_units_finite() {
    for seed in 0..5 {
        let d = random_panel(300 + seed, 15, 8, 2);
        let sep = detect_separation_all(&d);
        let f = fit_firth(&d, &ModelSpec::individual(Link::Logit, false)).unwrap();
        assert_eq!(f.dropped_units.fraction_dropped_obs, 0.0);
        assert_eq!(f.intercepts.len(), 15);
        assert!(f.intercepts.iter().all(|c| c.value.is_finite() && c.value.abs() <= 50.0));
        let _ = sep;
    }
}

#[test]
fn firth_rejects_dynamic_and_probit() {
    let d = add_lagged_outcome(&random_panel(1, 4, 5, 1)).unwrap();
    assert!(matches!(fit_firth(&d, &ModelSpec::individual(Link::Logit, true)), Err(Error::Unsupported(_))));
    assert!(matches!(fit_firth(&d, &ModelSpec::individual(Link::Probit, false)), Err(Error::Unsupported(_))));
}

#[test]
fn firth_penalized_gradient_vanishes() {
    // Check the modified score against finite differences of ℓ + ½ log det I.
    let d = random_panel(42, 5, 6, 1);
    let spec = ModelSpec::individual(Link::Logit, false);
    let f = fit_firth(&d, &spec).unwrap();
    let mut theta = f.beta.clone();
    theta.extend(f.intercepts.iter().map(|c| c.value));
    let objective = |th: &[f64]| {
        let ll = loglik(th, &d, &spec).unwrap();
        let h = hessian(th, &d, &spec).unwrap();
        let info = -h;
        ll + 0.5 * info.determinant().ln()
    };
    let g = fd_gradient(objective, &theta, 1e-5);
    assert!(g.iter().all(|v| v.abs() < 1e-6), "{g:?}");
}
