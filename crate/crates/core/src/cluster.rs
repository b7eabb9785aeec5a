//! k-means discretization of unit-level moments and the γ-rule for the
//! number of groups.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::PanelDataset;
use crate::error::{Error, Result};

/// Default number of k-means++ initializations.
pub const DEFAULT_RESTARTS: usize = 10;

/// Multiplier on √T below which K counts as too few groups.
pub const LOWER_BOUND_FACTOR: f64 = 2.0;

const MAX_LLOYD_ITER: usize = 500;

#[derive(Debug, Clone, Serialize)]
pub struct ClusterResult {
    pub k: usize,
    /// Group index of each point, in `0..k`.
    pub assignments: Vec<usize>,
    #[serde(skip)]
    pub centroids: DMatrix<f64>,
    /// Within-cluster sum of squared distances Q̂(K).
    pub objective: f64,
    pub restarts_used: usize,
    pub seed: u64,
}

impl ClusterResult {
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &g in &self.assignments {
            sizes[g] += 1;
        }
        sizes
    }
}

/// Where a chosen K sits relative to the √T ≪ K < T√N range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleVerdict {
    Compliant,
    TooFewGroups,
    TooManyGroups,
}

/// Bounds of the admissible range for K: (√T, T√N).
pub fn rule_bounds(n: usize, t: usize) -> (f64, f64) {
    let st = (t as f64).sqrt();
    (st, t as f64 * (n as f64).sqrt())
}

pub fn rule_verdict(k: usize, n: usize, t: usize) -> RuleVerdict {
    let (lo, hi) = rule_bounds(n, t);
    verdict_within(k, lo, hi)
}

fn verdict_within(k: usize, lo: f64, hi: f64) -> RuleVerdict {
    let k = k as f64;
    if k < LOWER_BOUND_FACTOR * lo {
        RuleVerdict::TooFewGroups
    } else if k >= hi {
        RuleVerdict::TooManyGroups
    } else {
        RuleVerdict::Compliant
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KSelection {
    pub gamma: f64,
    pub chosen_k: usize,
    pub noise_variance: f64,
    /// Q̂(K) for K = 1, 2, ... up to the chosen K (or beyond when the path
    /// was shared across several γ values).
    pub objective_path: Vec<(usize, f64)>,
    pub rule_compliant: bool,
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// Clustering at the chosen K.
    pub clusters: ClusterResult,
}

impl KSelection {
    pub fn verdict(&self) -> RuleVerdict {
        verdict_within(self.chosen_k, self.lower_bound, self.upper_bound)
    }
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, g: usize) -> f64 {
    (0..points.ncols()).map(|c| (points[(i, c)] - centroids[(g, c)]).powi(2)).sum()
}

/// Nearest centroid; ties go to the lowest index.
fn nearest(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for g in 0..centroids.nrows() {
        let d = sq_dist(points, i, centroids, g);
        if d < best.1 {
            best = (g, d);
        }
    }
    best
}

fn kmeans_pp(points: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = points.nrows();
    let mut centroids = DMatrix::zeros(k, points.ncols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from(&points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centroids, 0)).collect();
    for g in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(g).copy_from(&points.row(pick));
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(sq_dist(points, i, &centroids, g));
        }
    }
    centroids
}

/// Recomputes centroids as cluster means, moving the point farthest from its
/// centroid into any cluster that became empty.
fn update_centroids(points: &DMatrix<f64>, assignments: &mut [usize], k: usize) -> DMatrix<f64> {
    let (n, j) = points.shape();
    loop {
        let mut sums = DMatrix::zeros(k, j);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assignments[i]] += 1;
            for c in 0..j {
                sums[(assignments[i], c)] += points[(i, c)];
            }
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            for g in 0..k {
                sums.row_mut(g).scale_mut(1.0 / counts[g] as f64);
            }
            return sums;
        };
        for g in 0..k {
            if counts[g] > 0 {
                sums.row_mut(g).scale_mut(1.0 / counts[g] as f64);
            }
        }
        let mut far = (usize::MAX, -1.0);
        for i in 0..n {
            if counts[assignments[i]] < 2 {
                continue;
            }
            let d = sq_dist(points, i, &sums, assignments[i]);
            if d > far.1 {
                far = (i, d);
            }
        }
        assignments[far.0] = empty;
    }
}

fn objective_of(points: &DMatrix<f64>, assignments: &[usize], centroids: &DMatrix<f64>) -> f64 {
    assignments.iter().enumerate().map(|(i, &g)| sq_dist(points, i, centroids, g)).sum()
}

/// One Lloyd run from the given centers. Returns assignments, centroids and
/// the objective after each iteration.
fn lloyd(points: &DMatrix<f64>, init: DMatrix<f64>) -> (Vec<usize>, DMatrix<f64>, Vec<f64>) {
    let n = points.nrows();
    let k = init.nrows();
    let mut assignments: Vec<usize> = (0..n).map(|i| nearest(points, i, &init).0).collect();
    let mut centroids = update_centroids(points, &mut assignments, k);
    let mut history = vec![objective_of(points, &assignments, &centroids)];
    for _ in 0..MAX_LLOYD_ITER {
        let mut changed = false;
        for i in 0..n {
            let current = sq_dist(points, i, &centroids, assignments[i]);
            let (g, d) = nearest(points, i, &centroids);
            // Only move on strict improvement so the objective cannot rise.
            if g != assignments[i] && d < current {
                assignments[i] = g;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        centroids = update_centroids(points, &mut assignments, k);
        let obj = objective_of(points, &assignments, &centroids);
        let prev = *history.last().unwrap();
        history.push(obj);
        if (prev - obj).abs() <= 1e-10 * prev.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    (assignments, centroids, history)
}

fn split_farthest(points: &DMatrix<f64>, prev: &ClusterResult) -> DMatrix<f64> {
    let far = (0..points.nrows())
        .map(|i| (i, sq_dist(points, i, &prev.centroids, prev.assignments[i])))
        .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    let mut init = prev.centroids.clone().insert_row(prev.k, 0.0);
    init.row_mut(prev.k).copy_from(&points.row(far.0));
    init
}

fn restart_rng(seed: u64, k: usize, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((k as u64) << 32) | restart as u64);
    rng
}

/// Best of `restarts` k-means++ initializations followed by Lloyd iterations.
pub fn kmeans(points: &DMatrix<f64>, k: usize, restarts: usize, seed: u64) -> Result<ClusterResult> {
    kmeans_from(points, k, restarts, seed, None)
}

/// Like [`kmeans`], with one extra Lloyd run started from `warm` (ties with
/// the random restarts go to the restarts).
fn kmeans_from(
    points: &DMatrix<f64>,
    k: usize,
    restarts: usize,
    seed: u64,
    warm: Option<DMatrix<f64>>,
) -> Result<ClusterResult> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    if restarts == 0 {
        return Err(Error::InvalidArgument("k-means needs at least one restart".into()));
    }
    let mut best: Option<(Vec<usize>, DMatrix<f64>, f64)> = None;
    for r in 0..restarts {
        let mut rng = restart_rng(seed, k, r);
        let init = kmeans_pp(points, k, &mut rng);
        let (a, c, hist) = lloyd(points, init);
        let obj = *hist.last().unwrap();
        if best.as_ref().is_none_or(|b| obj < b.2) {
            best = Some((a, c, obj));
        }
    }
    if let Some(init) = warm {
        let (a, c, hist) = lloyd(points, init);
        let obj = *hist.last().unwrap();
        if best.as_ref().is_none_or(|b| obj < b.2) {
            best = Some((a, c, obj));
        }
    }
    let (assignments, centroids, objective) = best.expect("at least one restart");
    Ok(ClusterResult { k, assignments, centroids, objective, restarts_used: restarts, seed })
}

/// Objective history of a single seeded Lloyd run (diagnostic).
pub fn lloyd_history(points: &DMatrix<f64>, k: usize, seed: u64) -> Result<Vec<f64>> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let mut rng = restart_rng(seed, k, 0);
    let init = kmeans_pp(points, k, &mut rng);
    Ok(lloyd(points, init).2)
}

/// Divisor applied to the within-unit sum of squares when estimating V̂.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseEstimator {
    /// Σ_t ‖x_it − x̄_i‖² / T², the plug-in variance of x̄_i.
    #[default]
    Plain,
    /// Σ_t ‖x_it − x̄_i‖² / (T(T−1)), unbiased under serial independence.
    Unbiased,
}

/// V̂ = N⁻¹ Σ_i (T(T−1))⁻¹ Σ_t ‖x_it − x̄_i‖²: the sampling variance of the
/// individual means, summed over covariates.
pub fn noise_variance(data: &PanelDataset) -> f64 {
    noise_variance_by(data, NoiseEstimator::Unbiased)
}

pub fn noise_variance_by(data: &PanelDataset, estimator: NoiseEstimator) -> f64 {
    let n = data.n_units();
    let t = data.n_periods();
    let j = data.n_covariates();
    let mut total = 0.0;
    for i in 0..n {
        let mut mean = vec![0.0; j];
        for s in 0..t {
            for (m, v) in mean.iter_mut().zip(data.x(i, s)) {
                *m += v / t as f64;
            }
        }
        let ss: f64 = (0..t).map(|s| data.x(i, s).iter().zip(&mean).map(|(v, m)| (v - m).powi(2)).sum::<f64>()).sum();
        let divisor = match estimator {
            NoiseEstimator::Plain => t * t,
            NoiseEstimator::Unbiased => t * (t - 1),
        };
        total += ss / divisor as f64;
    }
    total / n as f64
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("gamma must lie in (0, 1], got {gamma}")))
    }
}

/// Smallest K with Q̂(K) ≤ γ·V̂, where V̂ is computed from `data` (the panel
/// whose individual means are `points`).
pub fn select_k(
    points: &DMatrix<f64>,
    gamma: f64,
    data: &PanelDataset,
    restarts: usize,
    seed: u64,
) -> Result<KSelection> {
    select_k_with(points, gamma, noise_variance(data), data.n_periods(), restarts, seed)
}

/// Smallest K with Q̂(K) ≤ γ·V̂ for a given V̂.
pub fn select_k_with(
    points: &DMatrix<f64>,
    gamma: f64,
    noise_variance: f64,
    n_periods: usize,
    restarts: usize,
    seed: u64,
) -> Result<KSelection> {
    let mut all = select_k_grid(points, &[gamma], noise_variance, n_periods, restarts, seed)?;
    let sel = all.pop().expect("one gamma");
    if sel.objective_path.last().is_some_and(|&(_, q)| q > gamma * sel.noise_variance) {
        return Err(Error::ThresholdUnreachable(Box::new(sel)));
    }
    Ok(sel)
}

/// Applies the γ-rule for every γ in `gammas` with one shared objective path,
/// so the chosen K is monotone in γ by construction. The path holds the
/// per-unit objective Q̂(K) = objective / N, on the same scale as V̂. A γ whose threshold is
/// never met gets K = N; callers detect it through the last path entry.
pub fn select_k_grid(
    points: &DMatrix<f64>,
    gammas: &[f64],
    noise_variance: f64,
    n_periods: usize,
    restarts: usize,
    seed: u64,
) -> Result<Vec<KSelection>> {
    for &g in gammas {
        check_gamma(g)?;
    }
    let n = points.nrows();
    let (lower, upper) = rule_bounds(n, n_periods);
    let smallest = gammas.iter().copied().fold(f64::INFINITY, f64::min);
    let mut path = Vec::new();
    let mut fits: Vec<ClusterResult> = Vec::new();
    for k in 1..=n {
        // Splitting the previous solution at its worst-fitted point keeps
        // Q̂(K) non-increasing along the path.
        let warm = fits.last().map(|prev| split_farthest(points, prev));
        let c = kmeans_from(points, k, restarts, seed, warm)?;
        let q = c.objective / n as f64;
        path.push((k, q));
        fits.push(c);
        if q <= smallest * noise_variance {
            break;
        }
    }
    Ok(gammas
        .iter()
        .map(|&gamma| {
            let pos = path.iter().position(|&(_, q)| q <= gamma * noise_variance).unwrap_or(path.len() - 1);
            let chosen_k = path[pos].0;
            KSelection {
                gamma,
                chosen_k,
                noise_variance,
                objective_path: path[..=pos].to_vec(),
                rule_compliant: verdict_within(chosen_k, lower, upper) == RuleVerdict::Compliant,
                lower_bound: lower,
                upper_bound: upper,
                clusters: fits[pos].clone(),
            }
        })
        .collect())
}
