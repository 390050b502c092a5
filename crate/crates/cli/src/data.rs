//! Monthly CSV ingestion.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fracuc::linalg::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// A calendar month.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Month {
    pub year: i32,
    pub month: u32,
}

impl Month {
    fn index(self) -> i64 {
        self.year as i64 * 12 + self.month as i64 - 1
    }

    pub fn succ(self) -> Self {
        if self.month == 12 {
            Month { year: self.year + 1, month: 1 }
        } else {
            Month { year: self.year, month: self.month + 1 }
        }
    }
}

impl FromStr for Month {
    type Err = String;

    /// Accepts `YYYY-MM` and `YYYY-MM-DD`; the day is ignored.
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let mut parts = s.split('-');
        let bad = || format!("unparseable date '{s}' (expected YYYY-MM or YYYY-MM-DD)");
        let year: i32 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let month: u32 = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        if let Some(day) = parts.next() {
            let d: u32 = day.parse().map_err(|_| bad())?;
            if !(1..=31).contains(&d) {
                return Err(bad());
            }
        }
        if parts.next().is_some() || !(1..=12).contains(&month) {
            return Err(bad());
        }
        Ok(Month { year, month })
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    None,
    LogDiffX100,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dates: Vec<Month>,
    /// `n x p`.
    pub values: Matrix<f64>,
    pub names: Vec<String>,
    pub transform_applied: Transform,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.dates.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub log_diff: bool,
    pub from: Option<String>,
    pub to: Option<String>,
    /// With `log_diff`, difference before clipping so that the first month
    /// of the range keeps its observation (the level before it is used).
    pub keep_first: bool,
}

struct Table {
    path: PathBuf,
    names: Vec<String>,
    rows: BTreeMap<Month, (usize, Vec<f64>)>,
}

fn read_table(path: &Path) -> Result<Table, CliError> {
    let ctx = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ctx(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| ctx(e.to_string()))?.clone();
    if headers.len() < 2 {
        return Err(ctx("need a date column and at least one series".into()));
    }
    if !headers[0].eq_ignore_ascii_case("date") && !headers[0].eq_ignore_ascii_case("observation_date") {
        return Err(ctx(format!("first column must be 'date', found '{}'", &headers[0])));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut rows = BTreeMap::new();
    let mut last: Option<Month> = None;
    for (k, rec) in rdr.records().enumerate() {
        // header is line 1
        let line = k + 2;
        let rec = rec.map_err(|e| ctx(format!("line {line}: {e}")))?;
        if rec.len() != headers.len() {
            return Err(ctx(format!("line {line}: expected {} fields, found {}", headers.len(), rec.len())));
        }
        let date: Month = rec[0].parse().map_err(|e| ctx(format!("line {line}: {e}")))?;
        if let Some(prev) = last {
            if date <= prev {
                return Err(ctx(format!("line {line}: date {date} is not after {prev}")));
            }
        }
        last = Some(date);
        let vals = rec
            .iter()
            .skip(1)
            .zip(&names)
            .map(|(cell, name)| match cell {
                "" | "." | "NA" | "NaN" => Err(ctx(format!("line {line}, column '{name}': missing value"))),
                c => c
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ctx(format!("line {line}, column '{name}': non-numeric value '{c}'"))),
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.insert(date, (line, vals));
    }
    if rows.is_empty() {
        return Err(ctx("no data rows".into()));
    }
    Ok(Table {
        path: path.to_path_buf(),
        names,
        rows,
    })
}

fn check_contiguous(dates: &[Month], what: &str) -> Result<(), CliError> {
    for w in dates.windows(2) {
        if w[1].index() - w[0].index() != 1 {
            return Err(CliError::Data(format!(
                "{what}: gap between {} and {} ({} missing month(s))",
                w[0],
                w[1],
                w[1].index() - w[0].index() - 1
            )));
        }
    }
    Ok(())
}

/// Reads one or more CSV files, inner-joins them on date and applies the
/// requested transform and clipping.
pub fn ingest(paths: &[PathBuf], opts: &IngestOptions) -> Result<Dataset, CliError> {
    if paths.is_empty() {
        return Err(CliError::Usage("no data files given".into()));
    }
    let tables = paths.iter().map(|p| read_table(p)).collect::<Result<Vec<_>, _>>()?;
    for t in &tables {
        let dates: Vec<Month> = t.rows.keys().copied().collect();
        check_contiguous(&dates, &t.path.display().to_string())?;
    }
    let mut dates: Vec<Month> = tables[0].rows.keys().copied().collect();
    dates.retain(|d| tables.iter().all(|t| t.rows.contains_key(d)));
    if dates.is_empty() {
        return Err(CliError::Data("the files share no dates".into()));
    }
    check_contiguous(&dates, "joined data")?;
    let mut names = Vec::new();
    for t in &tables {
        for n in &t.names {
            let mut name = n.clone();
            let mut k = 2;
            while names.contains(&name) {
                name = format!("{n}_{k}");
                k += 1;
            }
            names.push(name);
        }
    }
    let p = names.len();
    let mut rows: Vec<Vec<f64>> = dates
        .iter()
        .map(|d| tables.iter().flat_map(|t| t.rows[d].1.iter().copied()).collect())
        .collect();

    let from: Option<Month> = opts.from.as_deref().map(str::parse).transpose().map_err(CliError::Usage)?;
    let to: Option<Month> = opts.to.as_deref().map(str::parse).transpose().map_err(CliError::Usage)?;
    if let (Some(a), Some(b)) = (from, to) {
        if a > b {
            return Err(CliError::Usage(format!("--from {a} is after --to {b}")));
        }
    }
    let in_range = |d: &Month| from.is_none_or(|f| *d >= f) && to.is_none_or(|t| *d <= t);
    let clip = |dates: &mut Vec<Month>, rows: &mut Vec<Vec<f64>>| {
        let keep: Vec<bool> = dates.iter().map(in_range).collect();
        let mut it = keep.iter();
        dates.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        rows.retain(|_| *it.next().unwrap());
    };

    let transform_applied = if opts.log_diff {
        if !opts.keep_first {
            clip(&mut dates, &mut rows);
        } else if let Some(f) = from {
            if dates.first().is_none_or(|d| *d >= f) {
                return Err(CliError::Data(format!(
                    "--keep-first needs the level for the month before {f}"
                )));
            }
        }
        for (r, d) in rows.iter().zip(&dates) {
            if let Some(i) = r.iter().position(|v| *v <= 0.0) {
                return Err(CliError::Data(format!(
                    "{d}, column '{}': log-diff needs positive levels, found {}",
                    names[i], r[i]
                )));
            }
        }
        let diffed: Vec<Vec<f64>> = rows
            .windows(2)
            .map(|w| (0..p).map(|i| 100.0 * (w[1][i].ln() - w[0][i].ln())).collect())
            .collect();
        rows = diffed;
        dates.remove(0);
        if opts.keep_first {
            clip(&mut dates, &mut rows);
        }
        Transform::LogDiffX100
    } else {
        clip(&mut dates, &mut rows);
        Transform::None
    };
    if dates.is_empty() {
        return Err(CliError::Data("no observations left after transform and clipping".into()));
    }
    let values = Matrix::from_fn(dates.len(), p, |t, i| rows[t][i]);
    Ok(Dataset {
        dates,
        values,
        names,
        transform_applied,
    })
}

/// Writes a dataset in the ingestion format.
pub fn write_dataset(path: &Path, dates: &[Month], names: &[String], values: &Matrix<f64>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut header = vec!["date".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(CliError::from_csv)?;
    for (t, d) in dates.iter().enumerate() {
        let mut rec = vec![d.to_string()];
        rec.extend((0..values.cols()).map(|i| values[(t, i)].to_string()));
        w.write_record(&rec).map_err(CliError::from_csv)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

/// `n` consecutive months from `start`.
pub fn month_range(start: Month, n: usize) -> Vec<Month> {
    std::iter::successors(Some(start), |m| Some(m.succ())).take(n).collect()
}
