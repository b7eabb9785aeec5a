use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::PanelDataset;

/// Random static logit panel with `j` standard-normal covariates.
pub fn random_panel(seed: u64, n: usize, t: usize, j: usize) -> PanelDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Vec::with_capacity(n * t);
    let mut x = Vec::with_capacity(n * t * j);
    for _ in 0..n {
        let alpha: f64 = rng.random_range(-1.5..1.5);
        for _ in 0..t {
            let mut eta = alpha;
            for c in 0..j {
                let v: f64 = rng.random_range(-2.0..2.0);
                eta += v * if c == 0 { 0.8 } else { -0.5 };
                x.push(v);
            }
            let u: f64 = rng.random_range(1e-12..1.0);
            y.push(u8::from(eta + (u / (1.0 - u)).ln() > 0.0));
        }
    }
    PanelDataset::new(
        (0..n).map(|i| format!("u{i}")).collect(),
        (1..=t as i64).collect(),
        (0..j).map(|c| format!("x{}", c + 1)).collect(),
        y,
        x,
    )
    .expect("valid random panel")
}

/// Copy of `data` with the outcomes of `units` set to all zeros (even
/// positions) or all ones (odd positions).
pub fn with_separated(data: &PanelDataset, units: &[usize]) -> PanelDataset {
    let t = data.n_periods();
    let mut y: Vec<u8> = (0..data.n_units()).flat_map(|i| data.y_row(i).to_vec()).collect();
    for (k, &i) in units.iter().enumerate() {
        let v = u8::from(k % 2 == 1);
        y[i * t..(i + 1) * t].iter_mut().for_each(|c| *c = v);
    }
    let x = (0..data.n_units()).flat_map(|i| (0..t).flat_map(move |s| data.x(i, s).to_vec())).collect();
    PanelDataset::new(data.unit_ids().to_vec(), data.time_ids().to_vec(), data.covariate_names().to_vec(), y, x)
        .unwrap()
}
