//! Balanced binary-outcome panels: CSV ingestion, validation, lagging,
//! individual moments and complete-separation detection.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Name given to the covariate created by [`add_lagged_outcome`].
pub const LAG_COVARIATE: &str = "y_lag";

/// A balanced N×T panel of binary outcomes with J real covariates.
///
/// Outcomes are stored row-major by unit, covariates as `[(i * T + t) * J + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    unit_ids: Vec<String>,
    time_ids: Vec<i64>,
    covariate_names: Vec<String>,
    y: Vec<u8>,
    x: Vec<f64>,
}

impl PanelDataset {
    /// Builds a panel from dense arrays, checking every invariant.
    pub fn new(
        unit_ids: Vec<String>,
        time_ids: Vec<i64>,
        covariate_names: Vec<String>,
        y: Vec<u8>,
        x: Vec<f64>,
    ) -> Result<Self> {
        let n = unit_ids.len();
        let t = time_ids.len();
        let j = covariate_names.len();
        if n < 2 || t < 2 {
            return Err(Error::InvalidPanel(format!("need N >= 2 and T >= 2, got N = {n}, T = {t}")));
        }
        if y.len() != n * t {
            return Err(Error::DimensionMismatch { expected: n * t, got: y.len() });
        }
        if x.len() != n * t * j {
            return Err(Error::DimensionMismatch { expected: n * t * j, got: x.len() });
        }
        let distinct: BTreeSet<&String> = unit_ids.iter().collect();
        if distinct.len() != n {
            return Err(Error::InvalidPanel("duplicate unit identifiers".into()));
        }
        if time_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPanel("time labels must be strictly increasing".into()));
        }
        if let Some(pos) = y.iter().position(|&v| v > 1) {
            return Err(Error::NonBinaryOutcome { row: pos, value: y[pos].to_string() });
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCovariate { row: pos / j.max(1), column: covariate_names[pos % j].clone() });
        }
        Ok(Self { unit_ids, time_ids, covariate_names, y, x })
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_periods(&self) -> usize {
        self.time_ids.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn time_ids(&self) -> &[i64] {
        &self.time_ids
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    #[inline]
    pub fn y(&self, i: usize, t: usize) -> u8 {
        self.y[i * self.n_periods() + t]
    }

    /// Outcome row of unit `i`.
    pub fn y_row(&self, i: usize) -> &[u8] {
        let t = self.n_periods();
        &self.y[i * t..(i + 1) * t]
    }

    /// Covariate vector of unit `i` at period `t`.
    #[inline]
    pub fn x(&self, i: usize, t: usize) -> &[f64] {
        let j = self.n_covariates();
        let start = (i * self.n_periods() + t) * j;
        &self.x[start..start + j]
    }

    /// Index of a time label, if present.
    pub fn period_index(&self, time: i64) -> Option<usize> {
        self.time_ids.binary_search(&time).ok()
    }

    /// Sub-panel restricted to the given period indices.
    pub fn select_periods(&self, periods: Range<usize>) -> Result<Self> {
        if periods.start >= periods.end || periods.end > self.n_periods() {
            return Err(Error::EmptyPeriodRange);
        }
        let j = self.n_covariates();
        let mut y = Vec::with_capacity(self.n_units() * periods.len());
        let mut x = Vec::with_capacity(self.n_units() * periods.len() * j);
        for i in 0..self.n_units() {
            for t in periods.clone() {
                y.push(self.y(i, t));
                x.extend_from_slice(self.x(i, t));
            }
        }
        Self::new(self.unit_ids.clone(), self.time_ids[periods].to_vec(), self.covariate_names.clone(), y, x)
    }

    /// Sub-panel restricted to the given units, in the given order.
    pub fn select_units(&self, units: &[usize]) -> Result<Self> {
        let t = self.n_periods();
        let j = self.n_covariates();
        let mut y = Vec::with_capacity(units.len() * t);
        let mut x = Vec::with_capacity(units.len() * t * j);
        let mut ids = Vec::with_capacity(units.len());
        for &i in units {
            if i >= self.n_units() {
                return Err(Error::InvalidArgument(format!("unit index {i} out of range")));
            }
            ids.push(self.unit_ids[i].clone());
            y.extend_from_slice(self.y_row(i));
            x.extend_from_slice(&self.x[i * t * j..(i + 1) * t * j]);
        }
        Self::new(ids, self.time_ids.clone(), self.covariate_names.clone(), y, x)
    }

    /// Sub-panel keeping only the listed covariates, in the given order.
    pub fn select_covariates(&self, covariates: &[usize]) -> Result<Self> {
        let j = self.n_covariates();
        if let Some(&bad) = covariates.iter().find(|&&c| c >= j) {
            return Err(Error::InvalidArgument(format!("covariate index {bad} out of range")));
        }
        let obs = self.n_units() * self.n_periods();
        let mut x = Vec::with_capacity(obs * covariates.len());
        for o in 0..obs {
            let row = &self.x[o * j..(o + 1) * j];
            x.extend(covariates.iter().map(|&c| row[c]));
        }
        Self::new(
            self.unit_ids.clone(),
            self.time_ids.clone(),
            covariates.iter().map(|&c| self.covariate_names[c].clone()).collect(),
            self.y.clone(),
            x,
        )
    }

    /// True when every value of covariate `j` is 0 or 1.
    pub fn covariate_is_binary(&self, j: usize) -> bool {
        let jj = self.n_covariates();
        self.x.iter().skip(j).step_by(jj).all(|&v| v == 0.0 || v == 1.0)
    }
}

/// Column names used by [`load_csv`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub unit: String,
    pub time: String,
    pub outcome: String,
    /// Covariate columns; `None` takes every remaining column in header order.
    pub covariates: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self { unit: "unit".into(), time: "time".into(), outcome: "y".into(), covariates: None }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<PanelDataset> {
    read_csv(File::open(path)?, schema)
}

/// Outcome and covariates of one (unit, time) row.
type Cell = (u8, Vec<f64>);

/// Parses a long-format panel (`unit,time,y,<covariates...>`).
///
/// Rows may come in any order; the result is sorted by (unit, time). Units
/// are ordered numerically when every identifier is an integer.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find =
        |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let unit_col = find(&schema.unit)?;
    let time_col = find(&schema.time)?;
    let y_col = find(&schema.outcome)?;
    let cov_names: Vec<String> = match &schema.covariates {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(c, _)| ![unit_col, time_col, y_col].contains(c))
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    let cov_cols = cov_names.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

    let mut cells: BTreeMap<(String, i64), Vec<Cell>> = BTreeMap::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let unit = field(unit_col).to_string();
        let time_raw = field(time_col);
        let time: i64 = time_raw.parse().map_err(|_| Error::InvalidTime { row, value: time_raw.to_string() })?;
        let y = match field(y_col) {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                // Accept "0.0"/"1.0" as produced by some writers.
                match other.parse::<f64>() {
                    Ok(0.0) => 0,
                    Ok(1.0) => 1,
                    _ => return Err(Error::NonBinaryOutcome { row, value: other.to_string() }),
                }
            }
        };
        let mut xs = Vec::with_capacity(cov_cols.len());
        for (k, &c) in cov_cols.iter().enumerate() {
            let v: f64 = field(c).parse().unwrap_or(f64::NAN);
            if !v.is_finite() {
                return Err(Error::NonFiniteCovariate { row, column: cov_names[k].clone() });
            }
            xs.push(v);
        }
        cells.entry((unit, time)).or_default().push((y, xs));
    }

    let times: BTreeSet<i64> = cells.keys().map(|(_, t)| *t).collect();
    let mut per_unit: HashMap<&str, usize> = HashMap::new();
    let mut offending: BTreeSet<String> = BTreeSet::new();
    for ((unit, _), rows) in &cells {
        *per_unit.entry(unit.as_str()).or_default() += 1;
        if rows.len() != 1 {
            offending.insert(unit.clone());
        }
    }
    for (unit, count) in &per_unit {
        if *count != times.len() {
            offending.insert(unit.to_string());
        }
    }
    if !offending.is_empty() {
        return Err(Error::UnbalancedPanel { units: offending.into_iter().collect() });
    }

    let mut units: Vec<String> = per_unit.keys().map(|u| u.to_string()).collect();
    sort_unit_ids(&mut units);
    let time_ids: Vec<i64> = times.into_iter().collect();
    let mut y = Vec::with_capacity(units.len() * time_ids.len());
    let mut x = Vec::with_capacity(units.len() * time_ids.len() * cov_names.len());
    for unit in &units {
        for &t in &time_ids {
            let (yy, xs) = &cells[&(unit.clone(), t)][0];
            y.push(*yy);
            x.extend_from_slice(xs);
        }
    }
    PanelDataset::new(units, time_ids, cov_names, y, x)
}

fn sort_unit_ids(units: &mut [String]) {
    if units.iter().all(|u| u.parse::<i64>().is_ok()) {
        units.sort_by_cached_key(|u| (u.parse::<i64>().unwrap_or_default(), u.clone()));
    } else {
        units.sort();
    }
}

/// Writes the panel in the long format accepted by [`read_csv`].
pub fn write_csv<W: Write>(data: &PanelDataset, writer: W) -> Result<()> {
    // Quoting text fields keeps a unit id such as `#a` from reading back as a comment.
    let mut wtr = csv::WriterBuilder::new().quote_style(csv::QuoteStyle::NonNumeric).from_writer(writer);
    let mut header = vec!["unit".to_string(), "time".to_string(), "y".to_string()];
    header.extend(data.covariate_names.iter().cloned());
    wtr.write_record(&header)?;
    for i in 0..data.n_units() {
        for t in 0..data.n_periods() {
            let mut rec = vec![data.unit_ids[i].clone(), data.time_ids[t].to_string(), data.y(i, t).to_string()];
            // `{:?}` keeps the shortest round-tripping representation.
            rec.extend(data.x(i, t).iter().map(|v| format!("{v:?}")));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv(data: &PanelDataset, path: impl AsRef<Path>) -> Result<()> {
    write_csv(data, File::create(path)?)
}

/// Units whose outcome does not vary over the estimation periods.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationReport {
    /// Sorted indices of separated units.
    pub separated_units: Vec<usize>,
    pub n_kept: usize,
    pub fraction_dropped_obs: f64,
}

impl SeparationReport {
    pub fn none(n: usize) -> Self {
        Self { separated_units: Vec::new(), n_kept: n, fraction_dropped_obs: 0.0 }
    }

    pub fn contains(&self, unit: usize) -> bool {
        self.separated_units.binary_search(&unit).is_ok()
    }
}

/// Flags units with Σ_t y_it ∈ {0, T} over `periods` (indices into the panel).
pub fn detect_separation(data: &PanelDataset, periods: Range<usize>) -> Result<SeparationReport> {
    if periods.len() < 2 || periods.end > data.n_periods() {
        return Err(Error::EmptyPeriodRange);
    }
    let len = periods.len();
    let separated: Vec<usize> = (0..data.n_units())
        .filter(|&i| {
            let s: usize = data.y_row(i)[periods.clone()].iter().map(|&v| v as usize).sum();
            s == 0 || s == len
        })
        .collect();
    let n = data.n_units();
    Ok(SeparationReport {
        n_kept: n - separated.len(),
        fraction_dropped_obs: separated.len() as f64 / n as f64,
        separated_units: separated,
    })
}

/// Separation over every period of the panel.
pub fn detect_separation_all(data: &PanelDataset) -> SeparationReport {
    detect_separation(data, 0..data.n_periods()).expect("panels always have T >= 2")
}

/// Prepends y_{t-1} as covariate 0 and drops the first period, which becomes
/// the initial condition.
pub fn add_lagged_outcome(data: &PanelDataset) -> Result<PanelDataset> {
    let t_all = data.n_periods();
    if t_all < 3 {
        return Err(Error::PanelTooShort { needed: 3, have: t_all });
    }
    let j = data.n_covariates();
    let n = data.n_units();
    let mut y = Vec::with_capacity(n * (t_all - 1));
    let mut x = Vec::with_capacity(n * (t_all - 1) * (j + 1));
    for i in 0..n {
        for t in 1..t_all {
            y.push(data.y(i, t));
            x.push(f64::from(data.y(i, t - 1)));
            x.extend_from_slice(data.x(i, t));
        }
    }
    let mut names = Vec::with_capacity(j + 1);
    names.push(LAG_COVARIATE.to_string());
    names.extend(data.covariate_names.iter().cloned());
    PanelDataset::new(data.unit_ids.clone(), data.time_ids[1..].to_vec(), names, y, x)
}

/// N×J matrix of time-averaged covariates x̄_i. Outcome averages are not included.
pub fn individual_means(data: &PanelDataset) -> DMatrix<f64> {
    let (n, t, j) = (data.n_units(), data.n_periods(), data.n_covariates());
    let mut out = DMatrix::zeros(n, j);
    for i in 0..n {
        for tt in 0..t {
            for (c, v) in data.x(i, tt).iter().enumerate() {
                out[(i, c)] += v;
            }
        }
    }
    out / t as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<PanelDataset> {
        read_csv(s.as_bytes(), &CsvSchema::default())
    }

    /// The two-unit, two-period panel of the illustrative separation example.
    fn two_by_two() -> PanelDataset {
        parse("unit,time,y\n1,1,1\n1,2,0\n2,1,1\n2,2,1\n").unwrap()
    }

    #[test]
    fn loads_two_by_two() {
        let d = two_by_two();
        assert_eq!(d.n_units(), 2);
        assert_eq!(d.n_periods(), 2);
        assert_eq!(d.n_covariates(), 0);
        assert_eq!(d.y_row(0), &[1, 0]);
        assert_eq!(d.y_row(1), &[1, 1]);
    }

    #[test]
    fn rows_are_sorted_by_unit_then_time() {
        let d = parse("unit,time,y,x\n10,2,0,4\n2,2,1,2\n10,1,1,3\n2,1,0,1\n").unwrap();
        assert_eq!(d.unit_ids(), &["2".to_string(), "10".to_string()]);
        assert_eq!(d.x(0, 0), &[1.0]);
        assert_eq!(d.x(1, 1), &[4.0]);
    }

    #[test]
    fn unbalanced_panel_lists_units() {
        let err = parse("unit,time,y\nA,1,0\nA,2,1\nA,3,1\nB,1,0\nB,2,1\n").unwrap_err();
        match err {
            Error::UnbalancedPanel { units } => assert_eq!(units, vec!["B".to_string()]),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn duplicate_cell_is_unbalanced() {
        let err = parse("unit,time,y\nA,1,0\nA,1,1\nB,1,0\nB,2,1\nA,2,0\n").unwrap_err();
        assert!(matches!(err, Error::UnbalancedPanel { .. }));
    }

    #[test]
    fn non_binary_outcome_reports_row() {
        let err = parse("unit,time,y\nA,1,0\nA,2,2\nB,1,0\nB,2,1\n").unwrap_err();
        match err {
            Error::NonBinaryOutcome { row, value } => {
                assert_eq!(row, 1);
                assert_eq!(value, "2");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn non_finite_covariate_rejected() {
        let err = parse("unit,time,y,x\nA,1,0,1\nA,2,1,NaN\nB,1,0,1\nB,2,1,1\n").unwrap_err();
        assert!(matches!(err, Error::NonFiniteCovariate { row: 1, .. }));
    }

    #[test]
    fn missing_column() {
        let schema = CsvSchema { outcome: "crisis".into(), ..CsvSchema::default() };
        let err = read_csv("unit,time,y\nA,1,0\n".as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "crisis"));
    }

    #[test]
    fn separation_on_two_by_two() {
        let d = two_by_two();
        let rep = detect_separation_all(&d);
        assert_eq!(rep.separated_units, vec![1]);
        assert_eq!(rep.n_kept, 1);
        assert!(!rep.contains(0));
    }

    #[test]
    fn all_zero_panel_is_fully_separated() {
        let d = parse("unit,time,y\nA,1,0\nA,2,0\nB,1,0\nB,2,0\n").unwrap();
        let rep = detect_separation_all(&d);
        assert_eq!(rep.separated_units, vec![0, 1]);
        assert_eq!(rep.n_kept, 0);
        assert_eq!(rep.fraction_dropped_obs, 1.0);
    }

    #[test]
    fn separation_rejects_short_range() {
        let d = two_by_two();
        assert!(matches!(detect_separation(&d, 0..1), Err(Error::EmptyPeriodRange)));
        assert!(matches!(detect_separation(&d, 0..3), Err(Error::EmptyPeriodRange)));
    }

    #[test]
    fn lag_shifts_by_one() {
        let d = parse("unit,time,y\nA,1,1\nA,2,0\nA,3,1\nB,1,0\nB,2,0\nB,3,1\n").unwrap();
        let lagged = add_lagged_outcome(&d).unwrap();
        assert_eq!(lagged.n_periods(), 2);
        assert_eq!(lagged.covariate_names(), &[LAG_COVARIATE.to_string()]);
        assert_eq!(lagged.x(0, 0), &[1.0]);
        assert_eq!(lagged.x(0, 1), &[0.0]);
        assert_eq!(lagged.y_row(0), &[0, 1]);
        assert_eq!(lagged.time_ids(), &[2, 3]);
    }

    #[test]
    fn lag_needs_three_periods() {
        let err = add_lagged_outcome(&two_by_two()).unwrap_err();
        assert!(matches!(err, Error::PanelTooShort { needed: 3, have: 2 }));
    }

    #[test]
    fn lag_dimensions() {
        let mut y = Vec::new();
        let mut x = Vec::new();
        for i in 0..3 {
            for t in 0..8 {
                y.push(((i + t) % 2) as u8);
                x.push(t as f64);
                x.push(i as f64);
            }
        }
        let d = PanelDataset::new(
            vec!["a".into(), "b".into(), "c".into()],
            (1..=8).collect(),
            vec!["x1".into(), "x2".into()],
            y,
            x,
        )
        .unwrap();
        let l = add_lagged_outcome(&d).unwrap();
        assert_eq!(l.n_periods(), 7);
        assert_eq!(l.n_covariates(), 3);
    }

    #[test]
    fn lagged_separation_uses_estimation_periods() {
        // y = (1,0,0,0): varies overall but not over periods 2..T.
        let d = parse("unit,time,y\nA,1,1\nA,2,0\nA,3,0\nA,4,0\nB,1,0\nB,2,1\nB,3,0\nB,4,1\n").unwrap();
        let l = add_lagged_outcome(&d).unwrap();
        assert_eq!(detect_separation_all(&l).separated_units, vec![0]);
    }

    #[test]
    fn means_exclude_outcome() {
        let d = parse("unit,time,y,a,b\nA,1,1,0,2\nA,2,0,2,0\nB,1,0,5,5\nB,2,1,5,5\n").unwrap();
        let m = individual_means(&d);
        assert_eq!(m.ncols(), 2);
        assert_eq!((m[(0, 0)], m[(0, 1)]), (1.0, 1.0));
        assert_eq!((m[(1, 0)], m[(1, 1)]), (5.0, 5.0));
    }

    #[test]
    fn mean_of_one_to_four() {
        let d =
            parse("unit,time,y,x\nA,1,1,1\nA,2,0,2\nA,3,0,3\nA,4,0,4\nB,1,0,0\nB,2,1,0\nB,3,0,0\nB,4,1,0\n").unwrap();
        assert_eq!(individual_means(&d)[(0, 0)], 2.5);
    }

    #[test]
    fn csv_roundtrip() {
        let d = parse("unit,time,y,x\nA,1,1,0.1\nA,2,0,-2.5e-7\nB,1,0,3\nB,2,1,1e300\n").unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice(), &CsvSchema::default()).unwrap(), d);
    }

    #[test]
    fn awkward_unit_ids_round_trip() {
        let d = parse("unit,time,y,x\n\"#a\",1,1,0\n\"#a\",2,0,1\nb,1,0,2\nb,2,1,3\n").unwrap();
        assert_eq!(d.unit_ids()[0], "#a");
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice(), &CsvSchema::default()).unwrap(), d);
    }

    #[test]
    fn equal_integer_ids_sort_deterministically() {
        let d = parse("unit,time,y,x\n01,1,1,0\n01,2,0,1\n1,1,0,2\n1,2,1,3\n").unwrap();
        assert_eq!(d.unit_ids(), ["01", "1"]);
    }

    #[test]
    fn select_helpers() {
        let d = parse("unit,time,y,a,b\nA,1,1,0,2\nA,2,0,2,0\nB,1,0,5,6\nB,2,1,7,8\n").unwrap();
        let c = d.select_covariates(&[1]).unwrap();
        assert_eq!(c.x(1, 1), &[8.0]);
        let u = d.select_units(&[1, 0]).unwrap();
        assert_eq!(u.unit_ids()[0], "B");
        assert!(d.select_periods(1..1).is_err());
    }

    proptest::proptest! {
        #[test]
        fn parsed_panels_round_trip(
            ids in proptest::collection::vec("[#\" ,a0-9]{0,3}", 2..4),
            ys in proptest::collection::vec(0u8..2, 8),
        ) {
            let mut text = String::from("unit,time,y,x\n");
            for (k, id) in ids.iter().enumerate() {
                for t in 0..2 {
                    text.push_str(&format!("{id},{t},{},{}\n", ys[(2 * k + t) % 8], k as f64 / 3.0));
                }
            }
            if let Ok(d) = parse(&text) {
                let mut buf = Vec::new();
                write_csv(&d, &mut buf).unwrap();
                proptest::prop_assert_eq!(read_csv(buf.as_slice(), &CsvSchema::default()).unwrap(), d.clone());
                proptest::prop_assert_eq!(parse(&text).unwrap(), d);
            }
        }
    }
}
