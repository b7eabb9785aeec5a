//! Parsers for the list and range arguments accepted on the command line.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::simulate::EstimatorKind;

/// Comma-separated list of γ values, each in (0, 1].
pub fn parse_gamma_list(s: &str) -> Result<Vec<f64>> {
    let values = parse_list::<f64>(s)?;
    for &g in &values {
        if !(g > 0.0 && g <= 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1], got {g}")));
        }
    }
    Ok(values)
}

/// Evenly spaced grid `lo:hi:count` (inclusive), or a plain list.
pub fn parse_gamma_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [lo, hi, count] => {
            let lo: f64 = parse_item(lo)?;
            let hi: f64 = parse_item(hi)?;
            let count: usize = parse_item(count)?;
            if count == 0 || count > 10_000 {
                return Err(Error::InvalidArgument(format!("grid size {count} out of range")));
            }
            let values: Vec<f64> = if count == 1 {
                vec![lo]
            } else {
                (0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64).collect()
            };
            parse_gamma_list(&values.iter().map(f64::to_string).collect::<Vec<_>>().join(","))
        }
        [_] => parse_gamma_list(s),
        _ => Err(Error::InvalidArgument(format!("malformed gamma grid `{s}`"))),
    }
}

/// Estimator names such as `ml,j,firth,gfe`, deduplicated in input order.
pub fn parse_estimators(s: &str) -> Result<Vec<EstimatorKind>> {
    let mut out: Vec<EstimatorKind> = Vec::new();
    for e in parse_list::<EstimatorKind>(s)? {
        if !out.contains(&e) {
            out.push(e);
        }
    }
    Ok(out)
}

/// Years given as an inclusive range `a..b`, `a..=b`, or a comma list.
pub fn parse_year_range(s: &str) -> Result<Vec<i64>> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let a: i64 = parse_item(a)?;
        let b: i64 = parse_item(b)?;
        if b < a || b.checked_sub(a).is_none_or(|d| d > 100_000) {
            return Err(Error::InvalidArgument(format!("invalid year range `{s}`")));
        }
        return Ok((a..=b).collect());
    }
    parse_list::<i64>(s)
}

fn parse_item<T: FromStr>(s: &str) -> Result<T> {
    let s = s.trim();
    s.parse().map_err(|_| Error::InvalidArgument(format!("cannot parse `{s}`")))
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>> {
    if s.trim().is_empty() {
        return Err(Error::InvalidArgument("empty list".into()));
    }
    s.split(',').map(parse_item).collect()
}
