//! Balanced panel datasets: loading, validation and summary points.
//!
//! Data are held unit-major: for unit `i` the `T` outcomes are contiguous, and
//! the regressors form a `T × K` row-major block. Column 0 is the constant when
//! [`PanelDataset::has_intercept_column`] is set.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimators::design_singular_values;
use crate::sum::CompensatedSum;

/// Name given to the prepended column of ones.
pub const INTERCEPT_NAME: &str = "const";

/// Gram-matrix condition number above which a unit is flagged as near-singular.
pub const CONDITION_WARNING_THRESHOLD: f64 = 1e10;

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    unit_ids: Vec<String>,
    time_ids: Vec<String>,
    y: Vec<f64>,
    x: Vec<f64>,
    regressor_names: Vec<String>,
    has_intercept_column: bool,
}

impl PanelDataset {
    /// Builds a dataset from unit-major arrays.
    ///
    /// `y` has length `n·T`, `x` has length `n·T·K` laid out as `(unit, time, regressor)`.
    pub fn new(
        unit_ids: Vec<String>,
        time_ids: Vec<String>,
        y: Vec<f64>,
        x: Vec<f64>,
        regressor_names: Vec<String>,
        has_intercept_column: bool,
    ) -> Result<Self> {
        let n = unit_ids.len();
        let t = time_ids.len();
        let k = regressor_names.len();
        if n == 0 || t == 0 {
            return Err(Error::Schema("panel must have at least one unit and one period".into()));
        }
        if k == 0 {
            return Err(Error::Schema("panel must have at least one regressor".into()));
        }
        if y.len() != n * t {
            return Err(Error::Dimension { expected: n * t, got: y.len() });
        }
        if x.len() != n * t * k {
            return Err(Error::Dimension { expected: n * t * k, got: x.len() });
        }
        if let Some(pos) = y.iter().chain(x.iter()).position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite value at flat position {pos}")));
        }
        if has_intercept_column && x.chunks_exact(k).any(|row| row[0] != 1.0) {
            return Err(Error::Schema("intercept column must be identically 1".into()));
        }
        for (label, ids) in [("unit", &unit_ids), ("time", &time_ids)] {
            let mut seen = std::collections::HashSet::with_capacity(ids.len());
            if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
                return Err(Error::Balance { message: format!("duplicate {label} label"), units: vec![dup.clone()] });
            }
        }
        Ok(Self { unit_ids, time_ids, y, x, regressor_names, has_intercept_column })
    }

    pub fn n(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn t(&self) -> usize {
        self.time_ids.len()
    }

    pub fn k(&self) -> usize {
        self.regressor_names.len()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn time_ids(&self) -> &[String] {
        &self.time_ids
    }

    pub fn regressor_names(&self) -> &[String] {
        &self.regressor_names
    }

    pub fn has_intercept_column(&self) -> bool {
        self.has_intercept_column
    }

    /// Outcomes, unit-major (`n·T`).
    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Regressors, laid out `(unit, time, regressor)`.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn unit_y(&self, i: usize) -> &[f64] {
        let t = self.t();
        &self.y[i * t..(i + 1) * t]
    }

    /// The `T × K` row-major regressor block of unit `i`.
    pub fn unit_x(&self, i: usize) -> &[f64] {
        let tk = self.t() * self.k();
        &self.x[i * tk..(i + 1) * tk]
    }

    pub fn y_at(&self, i: usize, t: usize) -> f64 {
        self.y[i * self.t() + t]
    }

    pub fn x_at(&self, i: usize, t: usize, k: usize) -> f64 {
        self.x[(i * self.t() + t) * self.k() + k]
    }

    /// A new panel whose `j`-th unit is unit `indices[j]` of `self`.
    ///
    /// Unit labels are suffixed with the draw position so that repeated units stay distinct.
    pub fn select_units(&self, indices: &[usize]) -> Result<Self> {
        let mut y = Vec::with_capacity(indices.len() * self.t());
        let mut x = Vec::with_capacity(indices.len() * self.t() * self.k());
        let mut ids = Vec::with_capacity(indices.len());
        for (pos, &i) in indices.iter().enumerate() {
            if i >= self.n() {
                return Err(Error::Dimension { expected: self.n(), got: i });
            }
            y.extend_from_slice(self.unit_y(i));
            x.extend_from_slice(self.unit_x(i));
            ids.push(format!("{}#{pos}", self.unit_ids[i]));
        }
        Self::new(ids, self.time_ids.clone(), y, x, self.regressor_names.clone(), self.has_intercept_column)
    }

    /// Writes the long-format CSV `unit,time,y,<regressors>`; the intercept column is omitted.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let skip = usize::from(self.has_intercept_column);
        let mut header = vec!["unit".to_string(), "time".to_string(), "y".to_string()];
        header.extend(self.regressor_names[skip..].iter().cloned());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n() {
            for t in 0..self.t() {
                record.clear();
                record.push(self.unit_ids[i].clone());
                record.push(self.time_ids[t].clone());
                record.push(self.y_at(i, t).to_string());
                for k in skip..self.k() {
                    record.push(self.x_at(i, t, k).to_string());
                }
                w.write_record(&record)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Which CSV columns hold the panel fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMap {
    pub unit: String,
    pub time: String,
    pub outcome: String,
    /// Regressor columns in order; `None` takes every remaining column in file order.
    pub regressors: Option<Vec<String>>,
    /// Prepend a column of ones named [`INTERCEPT_NAME`].
    pub add_intercept: bool,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self { unit: "unit".into(), time: "time".into(), outcome: "y".into(), regressors: None, add_intercept: true }
    }
}

pub fn load_csv(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<PanelDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file), columns)
}

/// Parses a long-format panel and returns it sorted by `(unit, time)`.
pub fn read_csv<R: Read>(reader: R, columns: &ColumnMap) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let unit_col = find(&columns.unit)?;
    let time_col = find(&columns.time)?;
    let y_col = find(&columns.outcome)?;
    let reg_names: Vec<String> = match &columns.regressors {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(j, _)| ![unit_col, time_col, y_col].contains(j))
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    let reg_cols = reg_names.iter().map(|r| find(r)).collect::<Result<Vec<_>>>()?;
    if reg_cols.is_empty() && !columns.add_intercept {
        return Err(Error::Schema("no regressor columns".into()));
    }

    struct Row {
        unit: String,
        time: String,
        y: f64,
        x: Vec<f64>,
    }
    let mut rows = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        // header is line 1
        let row_no = idx + 2;
        let num = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                row: row_no,
                column: headers.get(col).unwrap_or("").to_string(),
                value: raw.to_string(),
            })
        };
        let y = num(y_col)?;
        let x = reg_cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;
        rows.push(Row {
            unit: record.get(unit_col).unwrap_or("").to_string(),
            time: record.get(time_col).unwrap_or("").to_string(),
            y,
            x,
        });
    }
    if rows.is_empty() {
        return Err(Error::Schema("file has no data rows".into()));
    }

    let units = sorted_labels(rows.iter().map(|r| r.unit.as_str()));
    let times = sorted_labels(rows.iter().map(|r| r.time.as_str()));
    let unit_pos: HashMap<&str, usize> = units.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let time_pos: HashMap<&str, usize> = times.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let (n, t) = (units.len(), times.len());

    let mut slot: Vec<Option<usize>> = vec![None; n * t];
    for (r, row) in rows.iter().enumerate() {
        let cell = unit_pos[row.unit.as_str()] * t + time_pos[row.time.as_str()];
        if slot[cell].is_some() {
            return Err(Error::Balance {
                message: format!("duplicate (unit, time) key ({}, {})", row.unit, row.time),
                units: vec![row.unit.clone()],
            });
        }
        slot[cell] = Some(r);
    }
    let incomplete: Vec<String> =
        (0..n).filter(|&i| slot[i * t..(i + 1) * t].iter().any(Option::is_none)).map(|i| units[i].clone()).collect();
    if !incomplete.is_empty() {
        return Err(Error::Balance {
            message: format!("every unit must be observed in all {t} periods"),
            units: incomplete,
        });
    }

    let k = reg_cols.len() + usize::from(columns.add_intercept);
    let mut y = Vec::with_capacity(n * t);
    let mut x = Vec::with_capacity(n * t * k);
    for r in slot.into_iter().flatten() {
        let row = &rows[r];
        y.push(row.y);
        if columns.add_intercept {
            x.push(1.0);
        }
        x.extend_from_slice(&row.x);
    }
    let mut names = Vec::with_capacity(k);
    if columns.add_intercept {
        names.push(INTERCEPT_NAME.to_string());
    }
    names.extend(reg_names);
    PanelDataset::new(units, times, y, x, names, columns.add_intercept)
}

/// Distinct labels, ordered numerically when every label parses as a number.
fn sorted_labels<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<String> {
    let distinct: BTreeMap<&str, ()> = labels.map(|l| (l, ())).collect();
    let mut out: Vec<String> = distinct.into_keys().map(str::to_string).collect();
    let numeric: Option<Vec<f64>> = out.iter().map(|l| l.parse::<f64>().ok()).collect();
    if let Some(values) = numeric {
        let mut paired: Vec<(f64, String)> = values.into_iter().zip(out).collect();
        paired.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(&b.1)));
        out = paired.into_iter().map(|(_, l)| l).collect();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub severity: Severity,
    /// Offending unit label, or `None` for dataset-wide findings.
    pub unit: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    fn from_issues(issues: Vec<Issue>) -> Self {
        let ok = issues.iter().all(|i| i.severity != Severity::Error);
        Self { ok, issues }
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "validation: {}", if self.ok { "ok" } else { "FAILED" })?;
        for issue in &self.issues {
            let sev = match issue.severity {
                Severity::Warning => "warning",
                Severity::Error => "error",
            };
            let scope = issue.unit.as_deref().unwrap_or("<global>");
            writeln!(f, "  {sev} [{scope}] {}", issue.message)?;
        }
        Ok(())
    }
}

/// Checks that every unit's `T × K` design can be fitted by least squares.
pub fn validate(d: &PanelDataset) -> ValidationReport {
    let (t, k) = (d.t(), d.k());
    let mut issues = Vec::new();
    if t < k {
        issues.push(Issue {
            severity: Severity::Error,
            unit: None,
            message: format!("T = {t} periods is fewer than K = {k} regressors"),
        });
        return ValidationReport::from_issues(issues);
    }
    for i in 0..d.n() {
        let sv = design_singular_values(d.unit_x(i), t, k);
        let (smax, smin) = (sv[0], sv[k - 1]);
        let unit = Some(d.unit_ids()[i].clone());
        if smin <= smax * (t.max(k) as f64) * f64::EPSILON || smax == 0.0 {
            issues.push(Issue {
                severity: Severity::Error,
                unit,
                message: "regressors are collinear within the unit (rank deficient)".into(),
            });
        } else {
            let cond = (smax / smin).powi(2);
            if cond > CONDITION_WARNING_THRESHOLD {
                issues.push(Issue {
                    severity: Severity::Warning,
                    unit,
                    message: format!("near-singular Gram matrix (condition number {cond:.3e})"),
                });
            }
        }
    }
    ValidationReport::from_issues(issues)
}

/// Pooled mean of each regressor over all `n·T` cells.
pub fn column_means(d: &PanelDataset) -> Vec<f64> {
    let k = d.k();
    let cells = (d.n() * d.t()) as f64;
    (0..k)
        .map(|j| {
            let s: CompensatedSum = d.x().iter().skip(j).step_by(k).copied().collect();
            s.value() / cells
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<PanelDataset> {
        read_csv(text.as_bytes(), &ColumnMap::default())
    }

    #[test]
    fn loads_small_panel_with_intercept() {
        let d = parse("unit,time,y,x1\nA,1,1.0,0.5\nA,2,2.0,1.5\nA,3,3.5,2.0\nB,1,0.0,1.0\nB,2,1.0,3.0\nB,3,2.0,2.5\n")
            .unwrap();
        assert_eq!((d.n(), d.t(), d.k()), (2, 3, 2));
        assert!(d.has_intercept_column());
        assert_eq!(d.regressor_names(), &["const", "x1"]);
        assert_eq!(d.x_at(1, 1, 1), 3.0);
        assert_eq!(d.x_at(1, 1, 0), 1.0);
    }

    #[test]
    fn sorts_rows_by_unit_then_time() {
        let d = parse("unit,time,y,x1\n10,2,4,1\n2,2,2,1\n10,1,3,0\n2,1,1,0\n").unwrap();
        assert_eq!(d.unit_ids(), &["2", "10"]);
        assert_eq!(d.y(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn missing_row_is_balance_error_naming_unit() {
        let err = parse("unit,time,y,x1\nA,1,1,1\nA,2,1,2\nA,3,1,3\nB,1,1,1\nB,2,1,2\n").unwrap_err();
        match err {
            Error::Balance { units, .. } => assert_eq!(units, vec!["B".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_key_is_balance_error() {
        let err = parse("unit,time,y,x1\nA,1,1,1\nA,1,2,2\n").unwrap_err();
        match err {
            Error::Balance { message, units } => {
                assert!(message.contains("(A, 1)"), "{message}");
                assert_eq!(units, vec!["A".to_string()]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_schema_error() {
        let err = read_csv(
            "unit,time,y\nA,1,1\n".as_bytes(),
            &ColumnMap { regressors: Some(vec!["x9".into()]), ..ColumnMap::default() },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schema(m) if m.contains("x9")));
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let err = parse("unit,time,y,x1\nA,1,1,1\nA,2,oops,2\n").unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "y");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn intercept_can_be_disabled() {
        let cols = ColumnMap { add_intercept: false, ..ColumnMap::default() };
        let d = read_csv("unit,time,y,x1\nA,1,1,1\nA,2,1,2\n".as_bytes(), &cols).unwrap();
        assert_eq!(d.k(), 1);
        assert!(!d.has_intercept_column());
    }

    #[test]
    fn validate_flags_constant_regressor() {
        let d = parse("unit,time,y,x1\nA,1,1,2\nA,2,2,2\nA,3,3,2\nB,1,1,1\nB,2,2,2\nB,3,3,4\n").unwrap();
        let report = validate(&d);
        assert!(!report.ok);
        let errs: Vec<_> = report.errors().collect();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].unit.as_deref(), Some("A"));
        assert!(errs[0].message.contains("collinear"));
    }

    #[test]
    fn validate_flags_too_few_periods() {
        let d = parse("unit,time,y,x1\nA,1,1,2\nB,1,2,3\n").unwrap();
        let report = validate(&d);
        assert!(!report.ok);
        assert!(report.issues[0].message.contains("fewer than K"));
    }

    #[test]
    fn validate_warns_on_ill_conditioning() {
        // x1 = 1 + 1e-6 t: Gram condition ~ 1e13 but full rank
        let mut text = String::from("unit,time,y,x1\n");
        for t in 0..5 {
            text.push_str(&format!("A,{t},{t},{}\n", 1.0 + 1e-6 * t as f64));
        }
        let report = validate(&parse(&text).unwrap());
        assert!(report.ok);
        assert_eq!(report.issues.len(), 1);
        assert_eq!(report.issues[0].severity, Severity::Warning);
    }

    #[test]
    fn validate_is_repeatable() {
        let d = parse("unit,time,y,x1\nA,1,1,2\nA,2,2,2\nB,1,1,1\nB,2,2,5\n").unwrap();
        assert_eq!(validate(&d), validate(&d));
    }

    #[test]
    fn column_means_match_arithmetic() {
        let d = parse("unit,time,y,x1\nA,1,0,1\nA,2,0,2\nB,1,0,3\nB,2,0,4\n").unwrap();
        assert_eq!(column_means(&d), vec![1.0, 2.5]);
    }

    #[test]
    fn write_then_read_is_identity() {
        let d =
            parse("unit,time,y,x1,x2\nA,1,0.1,1e-300,3.3333333333333335\nA,2,-7.25,2,0.1\nB,1,1,3,-0\nB,2,2.5,4,17\n")
                .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &ColumnMap::default()).unwrap();
        assert_eq!(back, d);
    }
}
