//! File formats: route JSON, parameter / trajectory / trace / dataset CSV.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrate::ReferenceTrace;
use crate::edm::{DriverParams, Route, RouteSegment, Trajectory};
use crate::error::{Error, Result};
use crate::plant::PlantSample;
use crate::scalar::{mph_to_mps, mps_to_mph};
use crate::synth::{Dataset, DatasetMeta, FeatureRow};

/// Calibrated parameters bundled with the crate: 26 simulated drivers times
/// 8 segments.
pub const BUNDLED_PARAMS_CSV: &str = include_str!("../data/calibrated_params.csv");

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        context: path.display().to_string(),
        source,
    }
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_string(path: &Path, s: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    write_string(path, &(s + "\n"))
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    parse_json(&read_to_string(path)?, &path.display().to_string())
}

/// Parses JSON, naming `context` and the line / column of any error.
pub fn parse_json<D: serde::de::DeserializeOwned>(s: &str, context: &str) -> Result<D> {
    serde_json::from_str(s).map_err(|source| Error::Json {
        context: context.to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub length_m: f64,
    pub speed_limit_mph: f64,
    #[serde(default)]
    pub ends_with_stop: bool,
}

/// Route file: a JSON array of `{"length_m", "speed_limit_mph",
/// "ends_with_stop"}`. An object `{"segments": [...]}` is also accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RouteFile {
    pub segments: Vec<SegmentSpec>,
}

impl RouteFile {
    pub fn from_segments(segments: &[RouteSegment<f64>]) -> Self {
        Self {
            segments: segments
                .iter()
                .map(|s| SegmentSpec {
                    length_m: s.length,
                    speed_limit_mph: mps_to_mph(s.speed_limit),
                    ends_with_stop: s.ends_with_stop,
                })
                .collect(),
        }
    }

    /// Parses either accepted form. Errors name the line and column.
    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let trimmed = text.trim_start();
        let segments = if trimmed.starts_with('{') {
            #[derive(Deserialize)]
            #[serde(deny_unknown_fields)]
            struct Wrapped {
                segments: Vec<SegmentSpec>,
            }
            parse_json::<Wrapped>(text, context)?.segments
        } else {
            parse_json::<Vec<SegmentSpec>>(text, context)?
        };
        Ok(Self { segments })
    }

    pub fn to_segments(&self) -> Result<Vec<RouteSegment<f64>>> {
        self.segments
            .iter()
            .enumerate()
            .map(|(i, s)| {
                RouteSegment::new(s.length_m, mph_to_mps(s.speed_limit_mph), s.ends_with_stop)
                    .map_err(|e| Error::invalid(format!("segment {i}: {e}")))
            })
            .collect()
    }
}

pub fn read_segments(path: &Path) -> Result<Vec<RouteSegment<f64>>> {
    RouteFile::parse(&read_to_string(path)?, &path.display().to_string())?.to_segments()
}

pub fn read_route(path: &Path) -> Result<Route<f64>> {
    Route::new(read_segments(path)?)
}

/// Parses `a,b,delta,c1,theta` rows (SI units, theta in m/s).
pub fn parse_params_csv(text: &str, context: &str) -> Result<Vec<DriverParams<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let err = |source| Error::Csv {
        context: context.to_string(),
        source,
    };
    let header = rdr.headers().map_err(err)?.clone();
    let names = DriverParams::<f64>::NAMES;
    let cols: Vec<usize> = names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == *n)
                .ok_or_else(|| Error::invalid(format!("{context}: missing column `{n}`")))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(err)?;
        let mut v = [0.0; 5];
        for (k, &c) in cols.iter().enumerate() {
            let field = rec.get(c).unwrap_or("");
            v[k] = field.parse().map_err(|_| {
                Error::invalid(format!("{context}: row {}: `{}` is not a number: {field:?}", line + 2, names[k]))
            })?;
        }
        let p = DriverParams::from_array(v);
        p.validate()
            .map_err(|e| Error::invalid(format!("{context}: row {}: {e}", line + 2)))?;
        out.push(p);
    }
    Ok(out)
}

pub fn read_params_csv(path: &Path) -> Result<Vec<DriverParams<f64>>> {
    parse_params_csv(&read_to_string(path)?, &path.display().to_string())
}

pub fn bundled_params() -> Vec<DriverParams<f64>> {
    parse_params_csv(BUNDLED_PARAMS_CSV, "bundled calibrated_params.csv").expect("bundled parameters are valid")
}

pub fn write_params_csv(path: &Path, params: &[DriverParams<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(DriverParams::<f64>::NAMES).map_err(csv_err(path))?;
    for p in params {
        w.write_record(p.to_array().iter().map(|v| v.to_string())).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `t_s,x_m,v_mps,a_mps2,mode`.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["t_s", "x_m", "v_mps", "a_mps2", "mode"]).map_err(csv_err(path))?;
    for s in &traj.samples {
        w.write_record([
            s.t.to_string(),
            s.x.to_string(),
            s.v.to_string(),
            s.accel.to_string(),
            s.mode.code().to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `t_s,v_mps,P_eng_W,P_batt_W,soc,fuel_g`.
pub fn write_plant_trace_csv(path: &Path, trace: &[PlantSample<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["t_s", "v_mps", "P_eng_W", "P_batt_W", "soc", "fuel_g"])
        .map_err(csv_err(path))?;
    for s in trace {
        w.write_record([s.t, s.v, s.p_eng, s.p_batt, s.soc, s.fuel].map(|v| v.to_string()))
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `t_s,v_mps` or `t_s,v_mph` trace.
pub fn read_reference_csv(path: &Path) -> Result<ReferenceTrace> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    let ctx = path.display();
    let t_col = header
        .iter()
        .position(|h| h == "t_s")
        .ok_or_else(|| Error::invalid(format!("{ctx}: missing column `t_s`")))?;
    let (v_col, mph) = match (header.iter().position(|h| h == "v_mps"), header.iter().position(|h| h == "v_mph")) {
        (Some(c), _) => (c, false),
        (None, Some(c)) => (c, true),
        _ => return Err(Error::invalid(format!("{ctx}: need a `v_mps` or `v_mph` column"))),
    };
    let mut pairs = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let num = |c: usize| -> Result<f64> {
            let f = rec.get(c).unwrap_or("");
            f.parse()
                .map_err(|_| Error::invalid(format!("{ctx}: row {}: not a number: {f:?}", line + 2)))
        };
        let v = num(v_col)?;
        pairs.push((num(t_col)?, if mph { mph_to_mps(v) } else { v }));
    }
    ReferenceTrace::from_pairs(&pairs).map_err(|e| Error::invalid(format!("{ctx}: {e}")))
}

pub fn write_reference_csv(path: &Path, trace: &ReferenceTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["t_s", "v_mps"]).map_err(csv_err(path))?;
    for (k, v) in trace.v.iter().enumerate() {
        let t = trace.t0 + k as f64 * trace.dt;
        w.write_record([t.to_string(), v.to_string()]).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the dataset CSV and its metadata sidecar (`<stem>.meta.json`).
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    // serialize emits the header from the field names
    if data.rows.is_empty() {
        w.write_record(FeatureRow::HEADER).map_err(csv_err(path))?;
    }
    for r in &data.rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    write_json(&meta_path(path), &data.meta)
}

pub fn meta_path(dataset: &Path) -> std::path::PathBuf {
    dataset.with_extension("meta.json")
}

/// Reads a dataset CSV; the metadata sidecar is loaded when present.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = rdr.headers().map_err(csv_err(path))?;
    if header.iter().ne(FeatureRow::HEADER) {
        return Err(Error::invalid(format!(
            "{}: expected header {}",
            path.display(),
            FeatureRow::HEADER.join(",")
        )));
    }
    let rows = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<FeatureRow>, _>>()
        .map_err(csv_err(path))?;
    if let Some(i) = rows.iter().position(|r| r.features().iter().chain([&r.m_f_eq_g]).any(|v| !v.is_finite())) {
        return Err(Error::invalid(format!("{}: row {} has a non-finite value", path.display(), i + 2)));
    }
    let mp = meta_path(path);
    let meta = if mp.exists() {
        read_json(&mp)?
    } else {
        DatasetMeta {
            seed: 0,
            n_params: 0,
            segments: Vec::new(),
            soc0: Vec::new(),
            requested: rows.len(),
            rows: rows.len(),
            exclusions: Vec::new(),
            soc_range: (f64::NAN, f64::NAN),
            soc_violations: 0,
        }
    };
    Ok(Dataset { rows, meta })
}
