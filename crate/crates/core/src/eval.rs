//! Coverage and width diagnostics, overall and by quintile of the true value.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conformal::PredictionInterval;
use crate::error::{Error, Result};
use crate::scalar::total_cmp;
use crate::stats::interpolated_quantile;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

fn check_lengths<T>(intervals: &[PredictionInterval<T>], y: &[T]) -> Result<()> {
    if intervals.len() != y.len() {
        return Err(Error::invalid(format!(
            "{} intervals but {} observations",
            intervals.len(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::invalid("no intervals to evaluate"));
    }
    Ok(())
}

/// Fraction of observations inside their closed interval.
pub fn coverage(intervals: &[PredictionInterval<f64>], y: &[f64]) -> Result<f64> {
    check_lengths(intervals, y)?;
    let hits = intervals.iter().zip(y).filter(|(iv, &v)| iv.contains(v)).count();
    Ok(hits as f64 / y.len() as f64)
}

pub fn mean_width(intervals: &[PredictionInterval<f64>]) -> Result<f64> {
    if intervals.is_empty() {
        return Err(Error::invalid("no intervals to evaluate"));
    }
    Ok(intervals.iter().map(|iv| iv.width()).sum::<f64>() / intervals.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuintileStat {
    /// Range of true values assigned to the bin.
    pub y_lo: f64,
    pub y_hi: f64,
    pub n: usize,
    pub covered: usize,
    pub coverage: f64,
    pub mean_width_g: f64,
}

/// Quintile edges: the 20/40/60/80th percentiles of `y`.
pub fn quintile_edges(y: &[f64]) -> [f64; 4] {
    let mut s = y.to_vec();
    s.sort_by(total_cmp);
    std::array::from_fn(|k| interpolated_quantile(&s, 0.2 * (k + 1) as f64))
}

/// Bin of `v`: the number of edges strictly below it, so a value on an
/// edge falls in the lower bin.
pub fn quintile_of(v: f64, edges: &[f64; 4]) -> usize {
    edges.iter().filter(|&&e| e < v).count()
}

/// Coverage and mean width per quintile of `y`, lowest bin first. Empty
/// bins report NaN.
pub fn quintile_report(intervals: &[PredictionInterval<f64>], y: &[f64]) -> Result<Vec<QuintileStat>> {
    check_lengths(intervals, y)?;
    if y.len() < 5 {
        return Err(Error::invalid(format!("quintiles need at least 5 observations, got {}", y.len())));
    }
    let edges = quintile_edges(y);
    let mut n = [0usize; 5];
    let mut covered = [0usize; 5];
    let mut width = [0.0f64; 5];
    let mut lo = [f64::INFINITY; 5];
    let mut hi = [f64::NEG_INFINITY; 5];
    for (iv, &v) in intervals.iter().zip(y) {
        let b = quintile_of(v, &edges);
        n[b] += 1;
        covered[b] += iv.contains(v) as usize;
        width[b] += iv.width();
        lo[b] = lo[b].min(v);
        hi[b] = hi[b].max(v);
    }
    Ok((0..5)
        .map(|b| QuintileStat {
            y_lo: lo[b],
            y_hi: hi[b],
            n: n[b],
            covered: covered[b],
            coverage: covered[b] as f64 / n[b] as f64,
            mean_width_g: width[b] / n[b] as f64,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub name: String,
    pub coverage: f64,
    pub mean_width_g: f64,
    pub crossing_rate: f64,
    pub n_test: usize,
    pub quintiles: Vec<QuintileStat>,
}

impl MethodReport {
    pub fn new(name: &str, intervals: &[PredictionInterval<f64>], y: &[f64]) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            coverage: coverage(intervals, y)?,
            mean_width_g: mean_width(intervals)?,
            crossing_rate: intervals.iter().filter(|iv| iv.crossing).count() as f64 / y.len() as f64,
            n_test: y.len(),
            quintiles: quintile_report(intervals, y)?,
        })
    }

    /// Mean width in the top quintile over the bottom quintile.
    pub fn top_bottom_width_ratio(&self) -> f64 {
        self.quintiles[4].mean_width_g / self.quintiles[0].mean_width_g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub methods: Vec<MethodReport>,
    pub n_test: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Report {
    pub fn new(methods: Vec<MethodReport>, alpha: f64, seed: u64) -> Result<Self> {
        let n_test = methods
            .first()
            .ok_or_else(|| Error::invalid("a report needs at least one method"))?
            .n_test;
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            methods,
            n_test,
            alpha,
            seed,
        })
    }

    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            context: "serializing report".into(),
            source,
        })
    }
}

/// File-name friendly form of a method name (`CV+` -> `cv_plus`).
pub fn slug(name: &str) -> String {
    let s = name.to_ascii_lowercase().replace('+', "_plus_");
    let s = s.replace(|c: char| !c.is_ascii_alphanumeric(), "_");
    s.split('_').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("_")
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let csv_err = |source| Error::Csv {
        context: path.display().to_string(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, one `quintiles_<method>.csv` per method and, for
/// two or more methods, `comparison.csv` sorted by mean width. Returns the
/// paths written.
pub fn emit_report(report: &Report, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    if report.methods.is_empty() {
        return Err(Error::invalid("a report needs at least one method"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let json = dir.join("report.json");
    std::fs::write(&json, report.to_json()? + "\n").map_err(|e| Error::io(&json, e))?;
    written.push(json);

    for m in &report.methods {
        let path = dir.join(format!("quintiles_{}.csv", slug(&m.name)));
        let rows = m
            .quintiles
            .iter()
            .enumerate()
            .map(|(b, q)| {
                vec![
                    (b + 1).to_string(),
                    q.y_lo.to_string(),
                    q.y_hi.to_string(),
                    q.n.to_string(),
                    q.coverage.to_string(),
                    q.mean_width_g.to_string(),
                ]
            })
            .collect();
        write_csv(&path, &["quintile", "y_lo_g", "y_hi_g", "n", "coverage", "mean_width_g"], rows)?;
        written.push(path);
    }

    if report.methods.len() > 1 {
        let mut sorted: Vec<&MethodReport> = report.methods.iter().collect();
        sorted.sort_by(|a, b| a.mean_width_g.total_cmp(&b.mean_width_g).then(a.name.cmp(&b.name)));
        let path = dir.join("comparison.csv");
        let rows = sorted
            .iter()
            .map(|m| {
                vec![
                    m.name.clone(),
                    m.coverage.to_string(),
                    m.mean_width_g.to_string(),
                    m.crossing_rate.to_string(),
                    m.n_test.to_string(),
                ]
            })
            .collect();
        write_csv(&path, &["method", "coverage", "mean_width_g", "crossing_rate", "n_test"], rows)?;
        written.push(path);
    }
    Ok(written)
}

/// Plain-text table of the methods sorted by mean width.
pub fn format_table(report: &Report) -> String {
    let mut sorted: Vec<&MethodReport> = report.methods.iter().collect();
    sorted.sort_by(|a, b| a.mean_width_g.total_cmp(&b.mean_width_g));
    let mut s = format!("{:<8} {:>9} {:>14} {:>9}\n", "method", "coverage", "mean width (g)", "crossing");
    for m in sorted {
        s += &format!(
            "{:<8} {:>9.4} {:>14.3} {:>9.4}\n",
            m.name, m.coverage, m.mean_width_g, m.crossing_rate
        );
    }
    s
}
