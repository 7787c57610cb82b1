//! Panel data: long-format records, the collapsed wide-format [`Dataset`],
//! CSV ingestion in both layouts and the long-to-wide reshape.
//!
//! A dataset row is a *configuration*: a full response trajectory together
//! with the full covariate trajectory, carried with its frequency. Rows are
//! kept in lexicographic order of (responses, X1, X2) so that reshaping the
//! same records always yields the same dataset.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{LmError, Result};

/// One unit-occasion row of a long-format panel.
#[derive(Debug, Clone, PartialEq)]
pub struct LongRecord {
    pub unit_id: String,
    /// 1-based occasion index.
    pub occasion: usize,
    pub covariates: Vec<f64>,
    /// 0-based category codes, one per response variable.
    pub responses: Vec<usize>,
}

/// Number of categories of each response variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySpec {
    counts: Vec<usize>,
}

impl CategorySpec {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(LmError::arg("at least one response variable is required"));
        }
        if let Some(j) = counts.iter().position(|&c| c < 2) {
            return Err(LmError::arg(format!(
                "response variable {} has fewer than two categories",
                j + 1
            )));
        }
        Ok(Self { counts })
    }

    /// Smallest spec compatible with the observed codes (at least two categories each).
    pub fn infer(records: &[LongRecord]) -> Result<Self> {
        let r = records
            .first()
            .map(|rec| rec.responses.len())
            .ok_or_else(|| LmError::data("cannot infer categories from an empty panel"))?;
        let mut counts = vec![2; r];
        for rec in records {
            for (c, &y) in counts.iter_mut().zip(&rec.responses) {
                *c = (*c).max(y + 1);
            }
        }
        Self::new(counts)
    }

    pub fn n_vars(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn max_categories(&self) -> usize {
        self.counts.iter().copied().max().unwrap_or(0)
    }
}

/// Wide-format panel of distinct configurations with frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Response codes, `n_config x T x r`.
    pub responses: Array3<usize>,
    /// Positive integer frequency of each configuration.
    pub freq: Vec<u64>,
    /// Occasion-1 covariates, `n_config x p1`.
    pub x1: Array2<f64>,
    /// Occasion 2..T covariates, `n_config x (T-1) x p2`.
    pub x2: Array3<f64>,
    pub categories: CategorySpec,
}

impl Dataset {
    /// Build from unit-level (or already collapsed) arrays, collapsing
    /// duplicate configurations and sorting rows.
    pub fn from_arrays(
        responses: Array3<usize>,
        freq: Vec<u64>,
        x1: Option<Array2<f64>>,
        x2: Option<Array3<f64>>,
        categories: CategorySpec,
    ) -> Result<Self> {
        let (n, t, r) = responses.dim();
        if t == 0 {
            return Err(LmError::data("at least one occasion is required"));
        }
        if freq.len() != n {
            return Err(LmError::data(format!(
                "frequency vector has length {} but there are {n} rows",
                freq.len()
            )));
        }
        if r != categories.n_vars() {
            return Err(LmError::data(format!(
                "responses have {r} variables but {} category counts were given",
                categories.n_vars()
            )));
        }
        let x1 = x1.unwrap_or_else(|| Array2::zeros((n, 0)));
        let x2 = x2.unwrap_or_else(|| Array3::zeros((n, t - 1, 0)));
        if x1.nrows() != n {
            return Err(LmError::data("X1 row count does not match responses"));
        }
        if x2.dim().0 != n || x2.dim().1 != t - 1 {
            return Err(LmError::data("X2 must have dimensions n x (T-1) x p2"));
        }
        let ds = Self {
            responses,
            freq,
            x1,
            x2,
            categories,
        };
        let violations = ds.violations(false);
        if !violations.is_empty() {
            return Err(LmError::data(violations.join("; ")));
        }
        Ok(ds.collapse())
    }

    pub fn n_configs(&self) -> usize {
        self.responses.dim().0
    }

    pub fn n_occasions(&self) -> usize {
        self.responses.dim().1
    }

    pub fn n_vars(&self) -> usize {
        self.responses.dim().2
    }

    pub fn p1(&self) -> usize {
        self.x1.ncols()
    }

    pub fn p2(&self) -> usize {
        self.x2.dim().2
    }

    pub fn n_total(&self) -> u64 {
        self.freq.iter().sum()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.freq[i] as f64
    }

    /// Responses of configuration `i`, `T x r`.
    pub fn config_responses(&self, i: usize) -> ArrayView2<'_, usize> {
        self.responses.index_axis(Axis(0), i)
    }

    pub fn config_x1(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x1.row(i)
    }

    /// Covariates of configuration `i` at 0-based occasion `t >= 1`.
    pub fn config_x2(&self, i: usize, t: usize) -> ArrayView1<'_, f64> {
        self.x2.slice(ndarray::s![i, t - 1, ..])
    }

    /// Every invariant violation, in a stable order. Empty when valid.
    pub fn validate(&self) -> Vec<String> {
        self.violations(true)
    }

    fn violations(&self, check_duplicates: bool) -> Vec<String> {
        let mut out = Vec::new();
        let (n, t, r) = self.responses.dim();
        if self.freq.len() != n {
            out.push("frequency vector length differs from configuration count".to_string());
        }
        if let Some(i) = self.freq.iter().position(|&f| f == 0) {
            out.push(format!("nonpositive frequency at configuration {}", i + 1));
        }
        if r != self.categories.n_vars() {
            out.push("category spec does not match the number of response variables".to_string());
        } else {
            'outer: for i in 0..n {
                for tt in 0..t {
                    for j in 0..r {
                        let y = self.responses[[i, tt, j]];
                        if y >= self.categories.counts()[j] {
                            out.push(format!(
                                "category out of range: configuration {}, occasion {}, variable {} has code {y} (categories 0..{})",
                                i + 1,
                                tt + 1,
                                j + 1,
                                self.categories.counts()[j] - 1
                            ));
                            break 'outer;
                        }
                    }
                }
            }
        }
        if self.x1.nrows() != n || self.x2.dim().0 != n || (t > 0 && self.x2.dim().1 != t - 1) {
            out.push("covariate arrays do not match the response array".to_string());
        } else if self.x1.iter().chain(self.x2.iter()).any(|v| !v.is_finite()) {
            out.push("non-finite covariate value".to_string());
        }
        if check_duplicates && out.is_empty() {
            let mut seen = HashSet::new();
            for i in 0..n {
                if !seen.insert(self.key(i)) {
                    out.push(format!("duplicate configuration at row {}", i + 1));
                    break;
                }
            }
        }
        out
    }

    fn key(&self, i: usize) -> ConfigKey {
        ConfigKey {
            responses: self.responses.index_axis(Axis(0), i).iter().copied().collect(),
            covariates: self
                .x1
                .row(i)
                .iter()
                .chain(self.x2.index_axis(Axis(0), i).iter())
                .map(|&v| if v == 0.0 { 0.0 } else { v })
                .collect(),
        }
    }

    /// Merge identical configurations and sort rows lexicographically.
    pub fn collapse(&self) -> Self {
        let mut merged: BTreeMap<ConfigKey, (usize, u64)> = BTreeMap::new();
        for i in 0..self.n_configs() {
            merged
                .entry(self.key(i))
                .and_modify(|e| e.1 += self.freq[i])
                .or_insert((i, self.freq[i]));
        }
        let order: Vec<(usize, u64)> = merged.into_values().collect();
        let rows: Vec<usize> = order.iter().map(|o| o.0).collect();
        Self {
            responses: self.responses.select(Axis(0), &rows),
            freq: order.iter().map(|o| o.1).collect(),
            x1: self.x1.select(Axis(0), &rows),
            x2: self.x2.select(Axis(0), &rows),
            categories: self.categories.clone(),
        }
    }

    /// Same responses with all covariates dropped (and re-collapsed).
    pub fn without_covariates(&self) -> Self {
        let n = self.n_configs();
        let t = self.n_occasions();
        Self {
            responses: self.responses.clone(),
            freq: self.freq.clone(),
            x1: Array2::zeros((n, 0)),
            x2: Array3::zeros((n, t.saturating_sub(1), 0)),
            categories: self.categories.clone(),
        }
        .collapse()
    }

    /// One row per sample unit: each configuration repeated `freq` times.
    pub fn expand(&self) -> Self {
        let rows: Vec<usize> = (0..self.n_configs())
            .flat_map(|i| std::iter::repeat_n(i, self.freq[i] as usize))
            .collect();
        Self {
            responses: self.responses.select(Axis(0), &rows),
            freq: vec![1; rows.len()],
            x1: self.x1.select(Axis(0), &rows),
            x2: self.x2.select(Axis(0), &rows),
            categories: self.categories.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct ConfigKey {
    responses: Vec<usize>,
    covariates: Vec<f64>,
}

impl PartialEq for ConfigKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for ConfigKey {}

impl std::hash::Hash for ConfigKey {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.responses.hash(state);
        for v in &self.covariates {
            v.to_bits().hash(state);
        }
    }
}

impl PartialOrd for ConfigKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ConfigKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.responses.cmp(&other.responses).then_with(|| {
            for (a, b) in self.covariates.iter().zip(&other.covariates) {
                match a.total_cmp(b) {
                    Ordering::Equal => continue,
                    ord => return ord,
                }
            }
            self.covariates.len().cmp(&other.covariates.len())
        })
    }
}

/// Column roles for long-format CSV input.
#[derive(Debug, Clone, PartialEq)]
pub struct LongSchema {
    pub id: String,
    pub time: String,
    pub covariates: Vec<String>,
    pub responses: Vec<String>,
    /// Declared category counts; codes are range-checked against them when set.
    pub categories: Option<Vec<usize>>,
    /// Code of the lowest category in the file (1 for responses coded 1..c).
    pub code_base: i64,
}

impl LongSchema {
    /// `id` and `time` columns, responses named `y*`, every other column a covariate.
    pub fn from_header(header: &[String]) -> Self {
        let responses: Vec<String> = header
            .iter()
            .filter(|h| h.starts_with('y') && h[1..].chars().all(|c| c.is_ascii_digit()) && h.len() > 1)
            .cloned()
            .collect();
        let covariates = header
            .iter()
            .filter(|h| *h != "id" && *h != "time" && !responses.contains(h))
            .cloned()
            .collect();
        Self {
            id: "id".to_string(),
            time: "time".to_string(),
            covariates,
            responses,
            categories: None,
            code_base: 0,
        }
    }
}

pub fn read_long_csv(path: &Path, schema: &LongSchema) -> Result<Vec<LongRecord>> {
    let file = std::fs::File::open(path)?;
    read_long_csv_from(file, schema)
}

pub fn read_long_csv_from<R: Read>(reader: R, schema: &LongSchema) -> Result<Vec<LongRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = match rdr.headers() {
        Ok(h) => h.iter().map(str::to_string).collect(),
        Err(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => return Err(e.into()),
        Err(_) => return Ok(Vec::new()),
    };
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Ok(Vec::new());
    }
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| LmError::data(format!("column '{name}' not found in header")))
    };
    let id_col = col(&schema.id)?;
    let time_col = col(&schema.time)?;
    let cov_cols = schema.covariates.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let resp_cols = schema.responses.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    if resp_cols.is_empty() {
        return Err(LmError::data("no response columns"));
    }
    if let Some(cats) = &schema.categories {
        if cats.len() != resp_cols.len() {
            return Err(LmError::arg(format!(
                "{} category counts declared for {} response columns",
                cats.len(),
                resp_cols.len()
            )));
        }
    }

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |msg: String| LmError::Parse { line, message: msg };
        if row.len() != header.len() {
            return Err(parse_err(format!(
                "expected {} fields, found {}",
                header.len(),
                row.len()
            )));
        }
        let occasion: i64 = row[time_col]
            .parse()
            .map_err(|_| parse_err(format!("occasion '{}' is not an integer", &row[time_col])))?;
        if occasion < 1 {
            return Err(parse_err(format!("occasion {occasion} must be at least 1")));
        }
        let covariates = cov_cols
            .iter()
            .map(|&c| {
                row[c].parse::<f64>().map_err(|_| {
                    parse_err(format!("covariate '{}' is not numeric: '{}'", header[c], &row[c]))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut responses = Vec::with_capacity(resp_cols.len());
        for (j, &c) in resp_cols.iter().enumerate() {
            let field = &row[c];
            if field.is_empty() || field.eq_ignore_ascii_case("na") {
                return Err(LmError::data(format!(
                    "line {line}: missing response in column '{}' (missing data is not supported)",
                    header[c]
                )));
            }
            let raw: i64 = field.parse().map_err(|_| {
                parse_err(format!("response '{}' is not an integer code: '{field}'", header[c]))
            })?;
            let code = raw - schema.code_base;
            let in_range = code >= 0
                && schema
                    .categories
                    .as_ref()
                    .is_none_or(|cats| (code as usize) < cats[j]);
            if !in_range {
                return Err(LmError::data(format!(
                    "line {line}: response '{}' has code {raw} outside the declared range",
                    header[c]
                )));
            }
            responses.push(code as usize);
        }
        out.push(LongRecord {
            unit_id: row[id_col].to_string(),
            occasion: occasion as usize,
            covariates,
            responses,
        });
    }
    Ok(out)
}

/// Reshape long records into a collapsed wide [`Dataset`].
///
/// Covariates listed in `time_constant` (by column index) must not vary over
/// a unit's occasions; their occasion-1 value is broadcast into X2.
pub fn long2wide(
    records: &[LongRecord],
    categories: &CategorySpec,
    time_constant: &[usize],
) -> Result<Dataset> {
    let r = categories.n_vars();
    let p = records.first().map_or(0, |rec| rec.covariates.len());
    let mut units: Vec<&str> = Vec::new();
    let mut by_unit: HashMap<&str, Vec<&LongRecord>> = HashMap::new();
    for rec in records {
        if rec.responses.len() != r {
            return Err(LmError::data(format!(
                "unit {}: {} responses where {r} were expected",
                rec.unit_id,
                rec.responses.len()
            )));
        }
        if rec.covariates.len() != p {
            return Err(LmError::data(format!(
                "unit {}: inconsistent number of covariates",
                rec.unit_id
            )));
        }
        for (j, &y) in rec.responses.iter().enumerate() {
            if y >= categories.counts()[j] {
                return Err(LmError::data(format!(
                    "unit {}, occasion {}: category {y} out of range for variable {}",
                    rec.unit_id,
                    rec.occasion,
                    j + 1
                )));
            }
        }
        by_unit
            .entry(rec.unit_id.as_str())
            .or_insert_with(|| {
                units.push(rec.unit_id.as_str());
                Vec::new()
            })
            .push(rec);
    }
    if let Some(&m) = time_constant.iter().find(|&&m| m >= p) {
        return Err(LmError::arg(format!("time-constant covariate index {m} out of range")));
    }
    let t_max = records.iter().map(|r| r.occasion).max().unwrap_or(0);
    let n = units.len();
    if n == 0 {
        return Err(LmError::data("no records"));
    }

    let mut responses = Array3::zeros((n, t_max, r));
    let mut x1 = Array2::zeros((n, p));
    let mut x2 = Array3::zeros((n, t_max - 1, p));
    for (i, unit) in units.iter().enumerate() {
        let mut slots: Vec<Option<&LongRecord>> = vec![None; t_max];
        for rec in &by_unit[unit] {
            let slot = &mut slots[rec.occasion - 1];
            if let Some(prev) = slot {
                if prev.covariates != rec.covariates {
                    return Err(LmError::data(format!(
                        "unit {unit}, occasion {}: conflicting covariates",
                        rec.occasion
                    )));
                }
                return Err(LmError::data(format!(
                    "unit {unit}: occasion {} appears more than once",
                    rec.occasion
                )));
            }
            *slot = Some(rec);
        }
        if let Some(missing) = slots.iter().position(Option::is_none) {
            return Err(LmError::data(format!(
                "unit {unit} is unbalanced: occasion {} is missing",
                missing + 1
            )));
        }
        let first = slots[0].unwrap();
        for (t, rec) in slots.iter().map(|s| s.unwrap()).enumerate() {
            for j in 0..r {
                responses[[i, t, j]] = rec.responses[j];
            }
            for m in 0..p {
                let mut v = rec.covariates[m];
                if time_constant.contains(&m) {
                    if v != first.covariates[m] {
                        return Err(LmError::data(format!(
                            "unit {unit}: time-constant covariate {} changes at occasion {}",
                            m + 1,
                            t + 1
                        )));
                    }
                    v = first.covariates[m];
                }
                if t == 0 {
                    x1[[i, m]] = v;
                } else {
                    x2[[i, t - 1, m]] = v;
                }
            }
        }
    }
    Dataset::from_arrays(responses, vec![1; n], Some(x1), Some(x2), categories.clone())
}

/// Parse a wide CSV: optional `id` and `freq` columns, responses `y{j}_t{t}`
/// and covariates `x{m}_t{t}` (1-based indices). Occasion-1 covariates form
/// X1, the rest X2. Categories are inferred when not given.
pub fn read_wide_csv_from<R: Read>(reader: R, categories: Option<&CategorySpec>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut resp_cols: Vec<(usize, usize, usize)> = Vec::new();
    let mut cov_cols: Vec<(usize, usize, usize)> = Vec::new();
    let mut freq_col = None;
    for (c, h) in header.iter().enumerate() {
        if h == "freq" {
            freq_col = Some(c);
        } else if h == "id" {
            continue;
        } else if let Some((kind, a, b)) = parse_wide_name(h) {
            if kind == 'y' {
                resp_cols.push((c, a, b));
            } else {
                cov_cols.push((c, a, b));
            }
        } else {
            return Err(LmError::data(format!("unrecognized wide column '{h}'")));
        }
    }
    let r = resp_cols.iter().map(|x| x.1).max().unwrap_or(0);
    let t = resp_cols.iter().map(|x| x.2).max().unwrap_or(0);
    let p = cov_cols.iter().map(|x| x.1).max().unwrap_or(0);
    if r == 0 || t == 0 {
        return Err(LmError::data("no response columns y{j}_t{t} in wide header"));
    }
    if resp_cols.len() != r * t {
        return Err(LmError::data("response columns do not form a complete r x T grid"));
    }
    if !cov_cols.is_empty() && (cov_cols.len() != p * t || cov_cols.iter().any(|x| x.2 > t)) {
        return Err(LmError::data("covariate columns do not form a complete p x T grid"));
    }

    let mut rows_y: Vec<usize> = Vec::new();
    let mut rows_x: Vec<f64> = Vec::new();
    let mut freq = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |msg: String| LmError::Parse { line, message: msg };
        let mut ys = vec![0usize; t * r];
        for &(c, j, tt) in &resp_cols {
            let v: i64 = row[c]
                .parse()
                .map_err(|_| parse_err(format!("response '{}' is not an integer", &row[c])))?;
            if v < 0 {
                return Err(LmError::data(format!("line {line}: negative response code")));
            }
            ys[(tt - 1) * r + (j - 1)] = v as usize;
        }
        let mut xs = vec![0.0; t * p];
        for &(c, m, tt) in &cov_cols {
            xs[(tt - 1) * p + (m - 1)] = row[c]
                .parse()
                .map_err(|_| parse_err(format!("covariate '{}' is not numeric", &row[c])))?;
        }
        let f: u64 = match freq_col {
            Some(c) => row[c]
                .parse()
                .map_err(|_| parse_err(format!("frequency '{}' is not a positive integer", &row[c])))?,
            None => 1,
        };
        rows_y.extend(ys);
        rows_x.extend(xs);
        freq.push(f);
    }
    let n = freq.len();
    if n == 0 {
        return Err(LmError::data("wide file has no data rows"));
    }
    let responses = Array3::from_shape_vec((n, t, r), rows_y).expect("shape");
    let xfull = Array3::from_shape_vec((n, t, p), rows_x).expect("shape");
    let x1 = xfull.index_axis(Axis(1), 0).to_owned();
    let x2 = xfull.slice(ndarray::s![.., 1.., ..]).to_owned();
    let categories = match categories {
        Some(c) => c.clone(),
        None => {
            let mut counts = vec![2; r];
            for i in 0..n {
                for tt in 0..t {
                    for j in 0..r {
                        counts[j] = counts[j].max(responses[[i, tt, j]] + 1);
                    }
                }
            }
            CategorySpec::new(counts)?
        }
    };
    Dataset::from_arrays(responses, freq, Some(x1), Some(x2), categories)
}

pub fn read_wide_csv(path: &Path, categories: Option<&CategorySpec>) -> Result<Dataset> {
    read_wide_csv_from(std::fs::File::open(path)?, categories)
}

fn parse_wide_name(h: &str) -> Option<(char, usize, usize)> {
    let kind = h.chars().next()?;
    if kind != 'y' && kind != 'x' {
        return None;
    }
    let (a, b) = h[1..].split_once("_t")?;
    Some((kind, a.parse().ok()?, b.parse().ok()?))
}

/// Write the wide layout read by [`read_wide_csv_from`], with a `freq` column.
///
/// Covariates at occasion 1 come from X1 and later occasions from X2, so they
/// are only written when `p1 == p2`.
pub fn write_wide_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let (n, t, r) = ds.responses.dim();
    let p = if ds.p1() == ds.p2() || t == 1 { ds.p1() } else { 0 };
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["freq".to_string()];
    for tt in 1..=t {
        for j in 1..=r {
            header.push(format!("y{j}_t{tt}"));
        }
    }
    for tt in 1..=t {
        for m in 1..=p {
            header.push(format!("x{m}_t{tt}"));
        }
    }
    w.write_record(&header)?;
    for i in 0..n {
        let mut rec = vec![ds.freq[i].to_string()];
        for tt in 0..t {
            for j in 0..r {
                rec.push(ds.responses[[i, tt, j]].to_string());
            }
        }
        for tt in 0..t {
            for m in 0..p {
                let v = if tt == 0 { ds.x1[[i, m]] } else { ds.x2[[i, tt - 1, m]] };
                rec.push(format!("{v}"));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn ten_item_schema() -> LongSchema {
        LongSchema {
            id: "id".into(),
            time: "time".into(),
            covariates: vec!["sex".into()],
            responses: (1..=10).map(|j| format!("y{j}")).collect(),
            categories: Some(vec![2; 10]),
            code_base: 0,
        }
    }

    #[test]
    fn reads_long_row_with_unit_covariate() {
        let csv = "id,sex,time,y1,y2,y3,y4,y5,y6,y7,y8,y9,y10\n1,1,1,0,0,0,0,0,0,0,0,0,0\n";
        let recs = read_long_csv_from(csv.as_bytes(), &ten_item_schema()).unwrap();
        assert_eq!(
            recs,
            vec![LongRecord {
                unit_id: "1".into(),
                occasion: 1,
                covariates: vec![1.0],
                responses: vec![0; 10]
            }]
        );
    }

    #[test]
    fn empty_file_gives_no_records() {
        assert!(read_long_csv_from("".as_bytes(), &ten_item_schema()).unwrap().is_empty());
    }

    #[test]
    fn code_at_category_count_is_rejected() {
        let schema = LongSchema {
            id: "id".into(),
            time: "time".into(),
            covariates: vec![],
            responses: vec!["y1".into()],
            categories: Some(vec![5]),
            code_base: 0,
        };
        let err = read_long_csv_from("id,time,y1\n1,1,5\n".as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, LmError::Data(_)), "{err}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let schema = LongSchema::from_header(&["id".into(), "time".into(), "y1".into()]);
        let err = read_long_csv_from("id,time,y1\n1,1,0\n1,two,0\n".as_bytes(), &schema).unwrap_err();
        match err {
            LmError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn one_based_codes_are_shifted() {
        let mut schema = LongSchema::from_header(&["id".into(), "time".into(), "y1".into()]);
        schema.code_base = 1;
        let recs = read_long_csv_from("id,time,y1\n1,1,1\n1,2,5\n".as_bytes(), &schema).unwrap();
        assert_eq!(recs[0].responses, vec![0]);
        assert_eq!(recs[1].responses, vec![4]);
    }

    fn rec(id: &str, t: usize, cov: f64, y: Vec<usize>) -> LongRecord {
        LongRecord {
            unit_id: id.into(),
            occasion: t,
            covariates: vec![cov],
            responses: y,
        }
    }

    #[test]
    fn single_late_conviction_collapses_with_frequency_three() {
        let cats = CategorySpec::new(vec![2; 10]).unwrap();
        let mut recs = Vec::new();
        let mut late = vec![0; 10];
        late[0] = 1;
        for unit in 0..3 {
            for t in 1..=6 {
                let y = if t == 6 { late.clone() } else { vec![0; 10] };
                recs.push(rec(&format!("f{unit}"), t, 2.0, y));
            }
        }
        let mut early = vec![0; 10];
        early[4] = 1;
        for t in 1..=6 {
            recs.push(rec("g", t, 2.0, if t == 1 { early.clone() } else { vec![0; 10] }));
            recs.push(rec("m", t, 1.0, vec![0; 10]));
        }
        let ds = long2wide(&recs, &cats, &[0]).unwrap();
        assert_eq!(ds.n_total(), 5);
        let row = (0..ds.n_configs())
            .find(|&i| ds.responses[[i, 5, 0]] == 1)
            .unwrap();
        assert_eq!(ds.freq[row], 3);
        assert_eq!(ds.x1[[row, 0]], 2.0);
        assert!(ds.x2.slice(ndarray::s![row, .., 0]).iter().all(|&v| v == 2.0));
        assert!(ds.validate().is_empty());
    }

    #[test]
    fn identical_histories_fully_collapse() {
        let cats = CategorySpec::new(vec![3]).unwrap();
        let recs: Vec<_> = (0..7)
            .flat_map(|u| (1..=4).map(move |t| rec(&u.to_string(), t, 0.0, vec![0])))
            .collect();
        let ds = long2wide(&recs, &cats, &[]).unwrap();
        assert_eq!(ds.n_configs(), 1);
        assert_eq!(ds.freq, vec![7]);
    }

    #[test]
    fn histories_differing_at_last_occasion_stay_apart() {
        let cats = CategorySpec::new(vec![3]).unwrap();
        let mut recs = Vec::new();
        for t in 1..=3 {
            recs.push(rec("a", t, 0.0, vec![1]));
            recs.push(rec("b", t, 0.0, vec![if t == 3 { 2 } else { 1 }]));
        }
        let ds = long2wide(&recs, &cats, &[]).unwrap();
        assert_eq!(ds.n_configs(), 2);
        assert_eq!(ds.freq, vec![1, 1]);
    }

    #[test]
    fn unbalanced_unit_is_named() {
        let cats = CategorySpec::new(vec![2]).unwrap();
        let recs = vec![
            rec("a", 1, 0.0, vec![0]),
            rec("a", 2, 0.0, vec![0]),
            rec("b", 1, 0.0, vec![0]),
        ];
        let err = long2wide(&recs, &cats, &[]).unwrap_err().to_string();
        assert!(err.contains("unit b"), "{err}");
    }

    #[test]
    fn conflicting_covariates_rejected() {
        let cats = CategorySpec::new(vec![2]).unwrap();
        let recs = vec![rec("a", 1, 0.0, vec![0]), rec("a", 1, 1.0, vec![0])];
        let err = long2wide(&recs, &cats, &[]).unwrap_err().to_string();
        assert!(err.contains("conflicting covariates"), "{err}");
    }

    #[test]
    fn validate_reports_violations() {
        let cats = CategorySpec::new(vec![2]).unwrap();
        let good = Dataset::from_arrays(
            array![[[0usize], [1]], [[1], [1]]],
            vec![2, 3],
            None,
            None,
            cats.clone(),
        )
        .unwrap();
        assert!(good.validate().is_empty());

        let mut zero = good.clone();
        zero.freq[0] = 0;
        assert!(zero.validate().iter().any(|v| v.contains("nonpositive frequency")));

        let mut out = good.clone();
        out.responses[[0, 0, 0]] = 2;
        assert!(out.validate().iter().any(|v| v.contains("category out of range")));
    }

    #[test]
    fn wide_csv_round_trip() {
        let cats = CategorySpec::new(vec![3, 2]).unwrap();
        let ds = Dataset::from_arrays(
            array![[[0usize, 1], [2, 0]], [[1, 1], [0, 0]]],
            vec![4, 1],
            Some(array![[0.5], [1.0]]),
            Some(array![[[1.5]], [[-2.0]]]),
            cats.clone(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_wide_csv(&ds, &mut buf).unwrap();
        let back = read_wide_csv_from(buf.as_slice(), Some(&cats)).unwrap();
        assert_eq!(back, ds);
    }

    proptest! {
        #[test]
        fn expand_then_collapse_is_identity(
            codes in proptest::collection::vec(0usize..3, 4 * 3),
            freq in proptest::collection::vec(1u64..4, 4),
            cov in proptest::collection::vec(0u8..2, 4),
        ) {
            let cats = CategorySpec::new(vec![3]).unwrap();
            let responses = Array3::from_shape_vec((4, 3, 1), codes).unwrap();
            let x1 = Array2::from_shape_fn((4, 1), |(i, _)| cov[i] as f64);
            let ds = Dataset::from_arrays(responses, freq.clone(), Some(x1), None, cats).unwrap();
            prop_assert_eq!(ds.n_total(), freq.iter().sum::<u64>());
            let again = ds.expand().collapse();
            prop_assert_eq!(again, ds);
        }

        #[test]
        fn long2wide_preserves_unit_count(
            codes in proptest::collection::vec(0usize..2, 6 * 2),
        ) {
            let cats = CategorySpec::new(vec![2]).unwrap();
            let recs: Vec<LongRecord> = codes
                .chunks(2)
                .enumerate()
                .flat_map(|(u, ys)| {
                    ys.iter().enumerate().map(move |(t, &y)| LongRecord {
                        unit_id: format!("u{u}"),
                        occasion: t + 1,
                        covariates: vec![],
                        responses: vec![y],
                    })
                })
                .collect();
            let ds = long2wide(&recs, &cats, &[]).unwrap();
            prop_assert_eq!(ds.n_total(), 6);
        }
    }
}
