//! Panel ingestion, normalization and construction of transition samples.
//!
//! A [`PanelDataset`] is a balanced country × year matrix of output per
//! worker. Every downstream estimate works on the *relative* values, i.e.
//! each year's cross-section divided by its arithmetic mean.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    countries: Vec<String>,
    years: Vec<i32>,
    /// `values[c][t]`, raw output per worker.
    values: Vec<Vec<f64>>,
    /// `normalized[c][t]`, relative to the year-`t` cross-sectional mean.
    normalized: Vec<Vec<f64>>,
}

impl PanelDataset {
    /// Builds a panel from a dense matrix whose columns are the contiguous
    /// years starting at `first_year`.
    pub fn from_matrix(countries: Vec<String>, first_year: i32, values: Vec<Vec<f64>>) -> Result<Self> {
        if countries.len() != values.len() {
            return Err(Error::Data(format!(
                "{} country ids but {} value rows",
                countries.len(),
                values.len()
            )));
        }
        if countries.len() < 2 {
            return Err(Error::Data(format!("need at least 2 countries, got {}", countries.len())));
        }
        let n_years = values[0].len();
        if n_years < 2 {
            return Err(Error::Data(format!("need at least 2 years, got {n_years}")));
        }
        let mut seen = HashSet::new();
        for c in &countries {
            if !seen.insert(c.as_str()) {
                return Err(Error::Data(format!("duplicate country id {c:?}")));
            }
        }
        let years: Vec<i32> = (0..n_years as i32).map(|k| first_year + k).collect();
        for (c, row) in countries.iter().zip(&values) {
            if row.len() != n_years {
                let year = first_year + row.len().min(n_years) as i32;
                return Err(Error::Unbalanced { country: c.clone(), year });
            }
            for (t, &v) in row.iter().enumerate() {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::NonPositive {
                        country: c.clone(),
                        year: years[t],
                        value: v,
                    });
                }
            }
        }
        let normalized = normalize(&values);
        Ok(PanelDataset {
            countries,
            years,
            values,
            normalized,
        })
    }

    pub fn countries(&self) -> &[String] {
        &self.countries
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn first_year(&self) -> i32 {
        self.years[0]
    }

    pub fn last_year(&self) -> i32 {
        *self.years.last().unwrap()
    }

    pub fn n_countries(&self) -> usize {
        self.countries.len()
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn normalized(&self) -> &[Vec<f64>] {
        &self.normalized
    }

    pub fn year_index(&self, year: i32) -> Result<usize> {
        if year < self.first_year() || year > self.last_year() {
            return Err(Error::Data(format!(
                "year {year} outside panel range {}..={}",
                self.first_year(),
                self.last_year()
            )));
        }
        Ok((year - self.first_year()) as usize)
    }

    /// Normalized cross-section for one year, in country order.
    pub fn cross_section(&self, year: i32) -> Result<Vec<f64>> {
        let t = self.year_index(year)?;
        Ok(self.normalized.iter().map(|row| row[t]).collect())
    }
}

fn normalize(values: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = values.len() as f64;
    let n_years = values[0].len();
    let means: Vec<f64> = (0..n_years).map(|t| values.iter().map(|row| row[t]).sum::<f64>() / n).collect();
    values
        .iter()
        .map(|row| row.iter().zip(&means).map(|(v, m)| v / m).collect())
        .collect()
}

fn sniff_delimiter(header: &str) -> u8 {
    if header.contains('\t') {
        b'\t'
    } else if header.contains(';') && !header.contains(',') {
        b';'
    } else {
        b','
    }
}

/// Reads a long-format panel (one row per country-year) from delimited text
/// with a header row. Comma, semicolon and tab delimiters are detected from
/// the header.
///
/// The result covers the years present for every country. A country that
/// lacks a year strictly inside that common range makes the panel
/// unbalanced and is reported by name.
pub fn load_panel<R: Read>(mut source: R, value_column: &str, id_column: &str, year_column: &str) -> Result<PanelDataset> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let header = text.lines().next().ok_or_else(|| Error::Data("empty input".into()))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(sniff_delimiter(header))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Config(format!(
                "column {name:?} not found in header {:?}",
                headers.iter().collect::<Vec<_>>()
            ))
        })
    };
    let (id_idx, year_idx, value_idx) = (col(id_column)?, col(year_column)?, col(value_column)?);

    let mut order: Vec<String> = Vec::new();
    let mut cells: HashMap<String, BTreeMap<i32, f64>> = HashMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let row = line + 2;
        let id = record.get(id_idx).unwrap_or("").to_string();
        let year: i32 = record
            .get(year_idx)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::Data(format!("line {row}: cannot parse year {:?}", record.get(year_idx))))?;
        let value: f64 = record
            .get(value_idx)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::Data(format!("line {row}: cannot parse value {:?}", record.get(value_idx))))?;
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositive { country: id, year, value });
        }
        let entry = cells.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            BTreeMap::new()
        });
        if entry.insert(year, value).is_some() {
            return Err(Error::Data(format!("line {row}: duplicate entry for ({id}, {year})")));
        }
    }
    if order.len() < 2 {
        return Err(Error::Data(format!("need at least 2 countries, got {}", order.len())));
    }

    let first = order.iter().map(|c| *cells[c].keys().next().unwrap()).max().unwrap();
    let last = order.iter().map(|c| *cells[c].keys().next_back().unwrap()).min().unwrap();
    if last - first + 1 < 2 {
        return Err(Error::Data(format!(
            "fewer than 2 years common to all countries (common range {first}..={last})"
        )));
    }
    let mut values = Vec::with_capacity(order.len());
    for c in &order {
        let series = &cells[c];
        let mut row = Vec::with_capacity((last - first + 1) as usize);
        for year in first..=last {
            match series.get(&year) {
                Some(&v) => row.push(v),
                None => return Err(Error::Unbalanced { country: c.clone(), year }),
            }
        }
        values.push(row);
    }
    PanelDataset::from_matrix(order, first, values)
}

/// Relative-income observation tuples for transitions of length `tau`.
///
/// Stored column-wise: `x` at the start year, `y` after `tau` years and,
/// for triples, `z` after `2 * tau` years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    tau: u32,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Option<Vec<f64>>,
    labels: Option<Vec<(String, i32)>>,
}

impl TransitionSample {
    pub fn from_pairs(tau: u32, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        Self::build(tau, x, y, None)
    }

    pub fn from_triples(tau: u32, x: Vec<f64>, y: Vec<f64>, z: Vec<f64>) -> Result<Self> {
        Self::build(tau, x, y, Some(z))
    }

    fn build(tau: u32, x: Vec<f64>, y: Vec<f64>, z: Option<Vec<f64>>) -> Result<Self> {
        if tau == 0 {
            return Err(Error::Config("transition length must be positive".into()));
        }
        if x.len() != y.len() || z.as_ref().is_some_and(|z| z.len() != x.len()) {
            return Err(Error::Data("transition columns have different lengths".into()));
        }
        if x.len() < 2 {
            return Err(Error::Data(format!("need at least 2 tuples, got {}", x.len())));
        }
        Ok(TransitionSample {
            tau,
            x,
            y,
            z,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<(String, i32)>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Data("label count differs from tuple count".into()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn tau(&self) -> u32 {
        self.tau
    }

    pub fn arity(&self) -> usize {
        if self.z.is_some() {
            3
        } else {
            2
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn z(&self) -> Option<&[f64]> {
        self.z.as_deref()
    }

    pub fn labels(&self) -> Option<&[(String, i32)]> {
        self.labels.as_deref()
    }

    /// The (x, y) transition pairs.
    pub fn first_pairs(&self) -> TransitionSample {
        TransitionSample {
            tau: self.tau,
            x: self.x.clone(),
            y: self.y.clone(),
            z: None,
            labels: self.labels.clone(),
        }
    }

    /// The (y, z) transition pairs of a triple sample.
    pub fn second_pairs(&self) -> Result<TransitionSample> {
        let z = self.require_triples()?;
        Ok(TransitionSample {
            tau: self.tau,
            x: self.y.clone(),
            y: z.to_vec(),
            z: None,
            labels: None,
        })
    }

    /// The (x, z) pairs of a triple sample: transitions of length `2 * tau`.
    pub fn outer_pairs(&self) -> Result<TransitionSample> {
        let z = self.require_triples()?;
        Ok(TransitionSample {
            tau: 2 * self.tau,
            x: self.x.clone(),
            y: z.to_vec(),
            z: None,
            labels: self.labels.clone(),
        })
    }

    fn require_triples(&self) -> Result<&[f64]> {
        self.z
            .as_deref()
            .ok_or_else(|| Error::Config("operation requires triples (arity 3)".into()))
    }

    /// Keeps only tuples whose label names one of `countries`.
    pub fn restrict_to(&self, countries: &[String]) -> Result<TransitionSample> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Data("sample carries no country labels".into()))?;
        let keep: HashSet<&str> = countries.iter().map(String::as_str).collect();
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep.contains(labels[i].0.as_str())).collect();
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let out = Self::build(self.tau, pick(&self.x), pick(&self.y), self.z.as_deref().map(pick))?;
        out.with_labels(idx.iter().map(|&i| labels[i].clone()).collect())
    }

    /// Concatenates samples of equal arity and transition length.
    pub fn concat(parts: &[TransitionSample]) -> Result<TransitionSample> {
        let first = parts.first().ok_or_else(|| Error::Data("nothing to concatenate".into()))?;
        let mut out = first.clone();
        for p in &parts[1..] {
            if p.arity() != first.arity() || p.tau != first.tau {
                return Err(Error::Data("cannot pool samples of different arity or length".into()));
            }
            out.x.extend_from_slice(&p.x);
            out.y.extend_from_slice(&p.y);
            if let (Some(z), Some(pz)) = (out.z.as_mut(), p.z.as_ref()) {
                z.extend_from_slice(pz);
            }
            match (out.labels.as_mut(), p.labels.as_ref()) {
                (Some(l), Some(pl)) => l.extend_from_slice(pl),
                _ => out.labels = None,
            }
        }
        Ok(out)
    }
}

/// Last start year admitting a horizon of `arity - 1` transitions of `tau`.
pub fn last_admissible_start(panel: &PanelDataset, tau: u32, arity: usize) -> i32 {
    panel.last_year() - (arity as i32 - 1) * tau as i32
}

/// One tuple per country, taken from the normalized values at `start_year`,
/// `start_year + tau` and (arity 3) `start_year + 2 * tau`.
pub fn make_transitions(panel: &PanelDataset, start_year: i32, tau: u32, arity: usize) -> Result<TransitionSample> {
    if arity != 2 && arity != 3 {
        return Err(Error::Config(format!("arity must be 2 or 3, got {arity}")));
    }
    if tau == 0 {
        return Err(Error::Config("transition length must be positive".into()));
    }
    let last_start = last_admissible_start(panel, tau, arity);
    if start_year < panel.first_year() || start_year > last_start {
        return Err(Error::Horizon { last_start });
    }
    let t0 = panel.year_index(start_year)?;
    let step = tau as usize;
    let col = |t: usize| panel.normalized.iter().map(|row| row[t]).collect::<Vec<f64>>();
    let sample = if arity == 2 {
        TransitionSample::from_pairs(tau, col(t0), col(t0 + step))?
    } else {
        TransitionSample::from_triples(tau, col(t0), col(t0 + step), col(t0 + 2 * step))?
    };
    sample.with_labels(panel.countries.iter().map(|c| (c.clone(), start_year)).collect())
}

/// Concatenates [`make_transitions`] over every start year in
/// `first_start..=last_start`.
pub fn pool_overlapping(panel: &PanelDataset, first_start: i32, last_start: i32, tau: u32, arity: usize) -> Result<TransitionSample> {
    if last_start < first_start {
        return Err(Error::Config(format!("empty start range {first_start}..={last_start}")));
    }
    let parts = (first_start..=last_start)
        .map(|s| make_transitions(panel, s, tau, arity))
        .collect::<Result<Vec<_>>>()?;
    TransitionSample::concat(&parts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IncomeGroup {
    Low,
    Medium,
    High,
}

impl std::str::FromStr for IncomeGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Ok(IncomeGroup::Low),
            "medium" | "middle" => Ok(IncomeGroup::Medium),
            "high" => Ok(IncomeGroup::High),
            other => Err(Error::Config(format!("unknown income group {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncomeGroups {
    pub low: Vec<String>,
    pub medium: Vec<String>,
    pub high: Vec<String>,
}

impl IncomeGroups {
    pub fn get(&self, group: IncomeGroup) -> &[String] {
        match group {
            IncomeGroup::Low => &self.low,
            IncomeGroup::Medium => &self.medium,
            IncomeGroup::High => &self.high,
        }
    }
}

/// Partitions countries into low/medium/high terciles of relative income in
/// `base_year`. Ties are ordered by country id; when the count is not a
/// multiple of three the middle group takes the remainder.
pub fn split_by_initial_income(panel: &PanelDataset, base_year: i32, groups: usize) -> Result<IncomeGroups> {
    if groups != 3 {
        return Err(Error::Config(format!("only tercile splits are supported, got {groups} groups")));
    }
    let section = panel.cross_section(base_year)?;
    let mut order: Vec<usize> = (0..panel.n_countries()).collect();
    order.sort_by(|&a, &b| {
        section[a]
            .total_cmp(&section[b])
            .then_with(|| panel.countries[a].cmp(&panel.countries[b]))
    });
    let n = order.len();
    let tail = n / 3;
    let ids = |r: std::ops::Range<usize>| r.map(|k| panel.countries[order[k]].clone()).collect::<Vec<_>>();
    Ok(IncomeGroups {
        low: ids(0..tail),
        medium: ids(tail..n - tail),
        high: ids(n - tail..n),
    })
}

/// Empirical quantile of sorted data by linear interpolation between order
/// statistics (Hyndman-Fan type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    pub probabilities: Vec<f64>,
    pub years: Vec<i32>,
    /// `values[year][probability]`
    pub values: Vec<Vec<f64>>,
}

impl QuantileTable {
    pub fn column_name(p: f64) -> String {
        let pct = p * 100.0;
        if (pct - pct.round()).abs() < 1e-9 {
            format!("p{}", pct.round() as i64)
        } else {
            format!("p{pct}")
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("year");
        for &p in &self.probabilities {
            out.push(',');
            out.push_str(&Self::column_name(p));
        }
        out.push('\n');
        for (year, row) in self.years.iter().zip(&self.values) {
            out.push_str(&year.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Per-year quantiles of the normalized cross-section.
pub fn quantile_boundaries(panel: &PanelDataset, probabilities: &[f64]) -> Result<QuantileTable> {
    if probabilities.is_empty() {
        return Err(Error::Config("empty probability list".into()));
    }
    if probabilities.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Config("probabilities must lie strictly inside (0, 1)".into()));
    }
    if probabilities.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("probabilities must be strictly increasing".into()));
    }
    let values = panel
        .years
        .iter()
        .map(|&year| {
            let mut section = panel.cross_section(year)?;
            section.sort_by(f64::total_cmp);
            Ok(probabilities.iter().map(|&p| quantile_sorted(&section, p)).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(QuantileTable {
        probabilities: probabilities.to_vec(),
        years: panel.years.clone(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_panel(rows: &[(&str, i32, f64)]) -> String {
        let mut s = String::from("country,year,value\n");
        for (c, y, v) in rows {
            s.push_str(&format!("{c},{y},{v}\n"));
        }
        s
    }

    fn grid_panel(n_countries: usize, first: i32, n_years: usize) -> PanelDataset {
        let countries = (0..n_countries).map(|c| format!("C{c:03}")).collect();
        let values = (0..n_countries)
            .map(|c| (0..n_years).map(|t| 1.0 + c as f64 + 0.1 * t as f64 * (c % 7) as f64).collect())
            .collect();
        PanelDataset::from_matrix(countries, first, values).unwrap()
    }

    #[test]
    fn normalizes_three_countries() {
        let text = csv_panel(&[
            ("A", 2000, 1.0),
            ("B", 2000, 2.0),
            ("C", 2000, 3.0),
            ("A", 2001, 1.0),
            ("B", 2001, 1.0),
            ("C", 2001, 1.0),
        ]);
        let p = load_panel(text.as_bytes(), "value", "country", "year").unwrap();
        let col: Vec<f64> = p.cross_section(2000).unwrap();
        assert_eq!(col, vec![0.5, 1.0, 1.5]);
        assert_eq!(p.cross_section(2001).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn equal_values_normalize_to_one() {
        let text = csv_panel(&[("A", 1, 2.0), ("B", 1, 2.0), ("A", 2, 2.0), ("B", 2, 2.0)]);
        let p = load_panel(text.as_bytes(), "value", "country", "year").unwrap();
        assert!(p.normalized().iter().flatten().all(|&v| v == 1.0));
    }

    #[test]
    fn year_means_are_one() {
        let p = grid_panel(102, 1970, 50);
        for t in 0..50 {
            let mean: f64 = p.normalized().iter().map(|r| r[t]).sum::<f64>() / 102.0;
            assert!((mean - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sniffs_tabs_and_semicolons_and_custom_columns() {
        let tsv = "iso\tyr\trgdpo\nA\t1\t1\nB\t1\t3\nA\t2\t2\nB\t2\t2\n";
        let p = load_panel(tsv.as_bytes(), "rgdpo", "iso", "yr").unwrap();
        assert_eq!(p.cross_section(1).unwrap(), vec![0.5, 1.5]);
        let ssv = "iso;yr;v\nA;1;1\nB;1;3\nA;2;2\nB;2;2\n";
        assert!(load_panel(ssv.as_bytes(), "v", "iso", "yr").is_ok());
    }

    #[test]
    fn trims_to_common_years() {
        let text = csv_panel(&[
            ("A", 1, 1.0),
            ("A", 2, 1.0),
            ("A", 3, 1.0),
            ("B", 2, 1.0),
            ("B", 3, 1.0),
            ("B", 4, 1.0),
        ]);
        let p = load_panel(text.as_bytes(), "value", "country", "year").unwrap();
        assert_eq!(p.years(), &[2, 3]);
    }

    #[test]
    fn rejects_interior_gap_naming_country() {
        let text = csv_panel(&[("A", 1, 1.0), ("A", 2, 1.0), ("A", 3, 1.0), ("B", 1, 1.0), ("B", 3, 1.0)]);
        match load_panel(text.as_bytes(), "value", "country", "year") {
            Err(Error::Unbalanced { country, year }) => {
                assert_eq!(country, "B");
                assert_eq!(year, 2);
            }
            other => panic!("expected unbalanced error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_positive_and_small_panels() {
        let text = csv_panel(&[("A", 1, 1.0), ("B", 1, 0.0), ("A", 2, 1.0), ("B", 2, 1.0)]);
        assert!(matches!(
            load_panel(text.as_bytes(), "value", "country", "year"),
            Err(Error::NonPositive { .. })
        ));
        let one = csv_panel(&[("A", 1, 1.0), ("A", 2, 1.0)]);
        assert!(load_panel(one.as_bytes(), "value", "country", "year").is_err());
        let one_year = csv_panel(&[("A", 1, 1.0), ("B", 1, 1.0)]);
        assert!(load_panel(one_year.as_bytes(), "value", "country", "year").is_err());
        let dup = csv_panel(&[("A", 1, 1.0), ("A", 1, 1.0), ("B", 1, 1.0)]);
        assert!(load_panel(dup.as_bytes(), "value", "country", "year").is_err());
        assert!(matches!(
            load_panel(one.as_bytes(), "gdp", "country", "year"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn transitions_and_horizon_errors() {
        let p = grid_panel(102, 1970, 50);
        let s = make_transitions(&p, 1970, 5, 3).unwrap();
        assert_eq!(s.len(), 102);
        assert_eq!(s.arity(), 3);
        assert_eq!(s.x()[4], p.normalized()[4][0]);
        assert_eq!(s.y()[4], p.normalized()[4][5]);
        assert_eq!(s.z().unwrap()[4], p.normalized()[4][10]);
        let last = make_transitions(&p, 2014, 5, 2).unwrap();
        assert_eq!(last.y()[0], p.normalized()[0][49]);
        match make_transitions(&p, 2015, 5, 2) {
            Err(Error::Horizon { last_start }) => assert_eq!(last_start, 2014),
            other => panic!("{other:?}"),
        }
        assert!(matches!(make_transitions(&p, 2010, 5, 3), Err(Error::Horizon { last_start: 2009 })));
    }

    #[test]
    fn constant_series_give_fixed_points() {
        let values = vec![vec![2.0; 10], vec![4.0; 10], vec![6.0; 10]];
        let p = PanelDataset::from_matrix(vec!["a".into(), "b".into(), "c".into()], 0, values).unwrap();
        let s = make_transitions(&p, 1, 3, 3).unwrap();
        for i in 0..3 {
            assert_eq!(s.x()[i], s.y()[i]);
            assert_eq!(s.y()[i], s.z().unwrap()[i]);
        }
    }

    #[test]
    fn pooled_counts_match_protocol() {
        let p = grid_panel(102, 1970, 50);
        assert_eq!(pool_overlapping(&p, 1970, 1990, 5, 2).unwrap().len(), 2142);
        assert_eq!(pool_overlapping(&p, 1970, 1980, 10, 2).unwrap().len(), 1122);
        assert_eq!(pool_overlapping(&p, 1970, 1985, 5, 3).unwrap().len(), 1632);
        assert_eq!(pool_overlapping(&p, 1970, 1975, 10, 3).unwrap().len(), 612);
        assert_eq!(
            pool_overlapping(&p, 1983, 1983, 5, 2).unwrap(),
            make_transitions(&p, 1983, 5, 2).unwrap()
        );
        assert!(pool_overlapping(&p, 2010, 2015, 5, 2).is_err());
    }

    #[test]
    fn terciles() {
        let p = grid_panel(102, 1970, 50);
        let g = split_by_initial_income(&p, 1970, 3).unwrap();
        assert_eq!((g.low.len(), g.medium.len(), g.high.len()), (34, 34, 34));
        let three = PanelDataset::from_matrix(
            vec!["x".into(), "y".into(), "z".into()],
            0,
            vec![vec![0.5, 1.0], vec![1.0, 1.0], vec![1.5, 1.0]],
        )
        .unwrap();
        let g = split_by_initial_income(&three, 0, 3).unwrap();
        assert_eq!(g.low, vec!["x"]);
        assert_eq!(g.medium, vec!["y"]);
        assert_eq!(g.high, vec!["z"]);
        assert!(split_by_initial_income(&three, 5, 3).is_err());
    }

    #[test]
    fn tercile_ties_and_remainder() {
        let ids = ["d", "a", "c", "b", "e"].map(String::from).to_vec();
        let values = vec![vec![1.0, 1.0]; 5];
        let p = PanelDataset::from_matrix(ids, 0, values).unwrap();
        let g = split_by_initial_income(&p, 0, 3).unwrap();
        assert_eq!(g.low, vec!["a"]);
        assert_eq!(g.medium, vec!["b", "c", "d"]);
        assert_eq!(g.high, vec!["e"]);
    }

    #[test]
    fn quantiles() {
        assert_eq!(quantile_sorted(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.5), 3.0);
        assert!((quantile_sorted(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.2) - 1.8).abs() < 1e-12);
        let p = grid_panel(102, 1970, 50);
        let q = quantile_boundaries(&p, &[0.2, 0.4, 0.6, 0.8]).unwrap();
        assert_eq!(q.values.len(), 50);
        assert!(q.values.iter().all(|r| r.len() == 4 && r.windows(2).all(|w| w[0] <= w[1])));
        assert!(q.to_csv().starts_with("year,p20,p40,p60,p80\n1970,"));
        assert!(quantile_boundaries(&p, &[]).is_err());
        assert!(quantile_boundaries(&p, &[0.0, 0.5]).is_err());

        let flat = PanelDataset::from_matrix(vec!["a".into(), "b".into()], 0, vec![vec![3.0, 3.0], vec![3.0, 3.0]]).unwrap();
        let q = quantile_boundaries(&flat, &[0.1, 0.9]).unwrap();
        assert!(q.values.iter().flatten().all(|&v| v == 1.0));
    }

    #[test]
    fn restrict_by_country() {
        let p = grid_panel(6, 0, 4);
        let s = make_transitions(&p, 0, 1, 2).unwrap();
        let r = s.restrict_to(&["C001".to_string(), "C004".to_string()]).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r.x()[1], s.x()[4]);
    }

    #[test]
    fn renormalization_is_idempotent() {
        let p = grid_panel(20, 0, 5);
        let again = PanelDataset::from_matrix(p.countries().to_vec(), 0, p.normalized().to_vec()).unwrap();
        for (a, b) in p.normalized().iter().flatten().zip(again.normalized().iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
