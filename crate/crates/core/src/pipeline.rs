//! Seeded end-to-end run: parameters, copula, dataset, intervals, report.
//!
//! Every stage takes its seed from [`stage_seed`] applied to the master seed,
//! so one `seed` value pins the whole run.

use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::calibrate::GaConfig;
use crate::conformal::{split, CqrModel, CrossConformal, DataSplit, JackknifeAb, Method, PredictionInterval};
use crate::edm::{DriverConstants, DriverParams, RouteSegment};
use crate::error::{Error, Result};
use crate::eval::{emit_report, slug, MethodReport, Report};
use crate::gbdt::{GbdtLearner, Hyperparams, QuantileEnsemble};
use crate::io::{self, RouteFile};
use crate::model::Features;
use crate::plant::PlantParams;
use crate::seed::{stage_seed, tags};
use crate::synth::{self, CopulaModel, Dataset, SimConfig};

pub const CONFIG_FILE: &str = "config.json";
pub const DATASET_FILE: &str = "dataset.csv";
pub const SPLIT_FILE: &str = "split.json";
pub const CQR_FILE: &str = "cqr.json";
pub const COPULA_FILE: &str = "copula.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Route JSON; the eight default segments when absent.
    pub route_file: Option<PathBuf>,
    /// Plant parameter JSON; built-in defaults when absent.
    pub plant_file: Option<PathBuf>,
    /// Calibrated driver parameters (CSV); the bundled set when absent.
    pub params_file: Option<PathBuf>,
    pub driver: DriverConstants<f64>,
    pub ga: GaConfig,
    pub copula_samples: usize,
    pub soc0: Vec<f64>,
    /// Train, calibration and test fractions.
    pub split: [f64; 3],
    pub alpha: f64,
    pub hyperparams: Hyperparams,
    pub methods: Vec<Method>,
    /// Fold count for CV and CV+.
    pub folds: usize,
    /// Bootstrap models for JK+aB.
    pub bootstrap: usize,
    pub max_excluded_fraction: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            route_file: None,
            plant_file: None,
            params_file: None,
            driver: DriverConstants::default(),
            ga: GaConfig::default(),
            copula_samples: 1000,
            soc0: synth::DEFAULT_SOC0.to_vec(),
            split: [0.8, 0.1, 0.1],
            alpha: 0.1,
            hyperparams: Hyperparams::default(),
            methods: Method::ALL.to_vec(),
            folds: 5,
            bootstrap: 30,
            max_excluded_fraction: 0.01,
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    /// Loads a JSON config. Relative paths inside it resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = io::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.route_file, &mut cfg.plant_file, &mut cfg.params_file]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1) (got {})", self.alpha)));
        }
        if self.copula_samples == 0 {
            return Err(Error::invalid("copula_samples must be positive"));
        }
        if self.soc0.is_empty() || self.soc0.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
            return Err(Error::invalid(format!("soc0 values must lie in (0, 1]: {:?}", self.soc0)));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("at least one method is required"));
        }
        if self.folds < 2 {
            return Err(Error::invalid("folds must be at least 2"));
        }
        if self.bootstrap == 0 {
            return Err(Error::invalid("bootstrap must be positive"));
        }
        if !(0.0..=1.0).contains(&self.max_excluded_fraction) {
            return Err(Error::invalid("max_excluded_fraction must lie in [0, 1]"));
        }
        self.driver.validate()?;
        self.ga.validate()?;
        self.hyperparams.validate()
    }

    pub fn segments(&self) -> Result<Vec<RouteSegment<f64>>> {
        match &self.route_file {
            Some(p) => io::read_segments(p),
            None => Ok(synth::default_segments()),
        }
    }

    pub fn plant(&self) -> Result<PlantParams<f64>> {
        let p: PlantParams<f64> = match &self.plant_file {
            Some(path) => io::read_json(path)?,
            None => PlantParams::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn params(&self) -> Result<Vec<DriverParams<f64>>> {
        match &self.params_file {
            Some(p) => io::read_params_csv(p),
            None => Ok(io::bundled_params()),
        }
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        Ok(SimConfig {
            driver: self.driver,
            plant: self.plant()?,
            max_excluded_fraction: self.max_excluded_fraction,
        })
    }

    pub fn learner(&self) -> GbdtLearner {
        GbdtLearner::new(self.hyperparams.clone())
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

/// Copula fitted to the calibrated parameters and the simulated dataset.
pub fn gen_data(cfg: &PipelineConfig) -> Result<(CopulaModel, Dataset)> {
    cfg.validate()?;
    let params = cfg.params()?;
    let segments = cfg.segments()?;
    let sim = cfg.sim_config()?;
    info!("fitting t-copula to {} parameter rows", params.len());
    let copula = stage("fit-copula", synth::fit_tcopula(&params))?;
    info!("copula nu = {}{}", copula.nu, if copula.repaired { " (PD repaired)" } else { "" });
    let drawn = stage(
        "sample-copula",
        synth::sample_tcopula(&copula, cfg.copula_samples, stage_seed(cfg.seed, tags::COPULA_SAMPLE)),
    )?;
    info!(
        "simulating {} drivers x {} segments x {} initial charges",
        drawn.len(),
        segments.len(),
        cfg.soc0.len()
    );
    let data = stage(
        "generate-dataset",
        synth::generate_dataset(&drawn, &segments, &cfg.soc0, &sim, stage_seed(cfg.seed, tags::DATASET)),
    )?;
    info!("{} rows, {} excluded", data.len(), data.meta.exclusions.len());
    Ok((copula, data))
}

pub fn split_dataset(cfg: &PipelineConfig, data: &Dataset) -> Result<DataSplit> {
    stage("split", split(data.len(), cfg.split, stage_seed(cfg.seed, tags::SPLIT)))
}

pub type Cqr = CqrModel<f64, QuantileEnsemble<f64>>;

fn rows(x: &Features<f64>, y: &[f64], idx: &[usize]) -> (Features<f64>, Vec<f64>) {
    (x.select(idx), idx.iter().map(|&i| y[i]).collect())
}

/// Trains the quantile band on the training rows and calibrates it.
pub fn train_cqr(cfg: &PipelineConfig, data: &Dataset, sp: &DataSplit) -> Result<Cqr> {
    let (x, y) = (data.features(), data.targets());
    let (x_tr, y_tr) = rows(&x, &y, &sp.train);
    let (x_cal, y_cal) = rows(&x, &y, &sp.calib);
    info!("training CQR on {} rows, calibrating on {}", y_tr.len(), y_cal.len());
    stage("train-cqr", CqrModel::fit(&cfg.learner(), &x_tr, &y_tr, &x_cal, &y_cal, cfg.alpha))
}

/// On-disk form of a CQR model: the margin plus two model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqrFile {
    pub alpha: f64,
    pub q_alpha: f64,
    pub lower: PathBuf,
    pub upper: PathBuf,
}

/// Writes `cqr.json`, `cqr_lower.json` and `cqr_upper.json` into `dir`.
pub fn save_cqr(model: &Cqr, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    model.lower.save(&dir.join("cqr_lower.json"))?;
    model.upper.save(&dir.join("cqr_upper.json"))?;
    io::write_json(
        &dir.join(CQR_FILE),
        &CqrFile {
            alpha: model.alpha,
            q_alpha: model.q_alpha,
            lower: "cqr_lower.json".into(),
            upper: "cqr_upper.json".into(),
        },
    )
}

pub fn load_cqr(path: &Path) -> Result<Cqr> {
    let f: CqrFile = io::read_json(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    Ok(CqrModel {
        lower: QuantileEnsemble::load(&base.join(f.lower))?,
        upper: QuantileEnsemble::load(&base.join(f.upper))?,
        q_alpha: f.q_alpha,
        alpha: f.alpha,
    })
}

/// Intervals on the test rows for every configured method, in config order.
/// CQR uses `cqr`; the baselines are fitted on train plus calibration rows.
pub fn evaluate(
    cfg: &PipelineConfig,
    data: &Dataset,
    sp: &DataSplit,
    cqr: &Cqr,
) -> Result<Vec<(Method, Vec<PredictionInterval<f64>>)>> {
    let (x, y) = (data.features(), data.targets());
    let x_test = x.select(&sp.test);
    let pooled = sp.pooled();
    let (x_pool, y_pool) = rows(&x, &y, &pooled);
    let learner = cfg.learner();

    let wants = |m| cfg.methods.contains(&m);
    let cross = if wants(Method::Cv) || wants(Method::CvPlus) {
        info!("fitting {} fold models on {} pooled rows", cfg.folds, pooled.len());
        Some(stage(
            "cross-fit",
            CrossConformal::fit(&learner, &x_pool, &y_pool, cfg.folds, wants(Method::Cv)),
        )?)
    } else {
        None
    };
    let jk = if wants(Method::JackknifeAb) {
        info!("fitting {} bootstrap models", cfg.bootstrap);
        Some(stage(
            "jkab-fit",
            JackknifeAb::fit_seeded(&learner, &x_pool, &y_pool, cfg.bootstrap, stage_seed(cfg.seed, tags::BOOTSTRAP)),
        )?)
    } else {
        None
    };

    let mut out = Vec::new();
    for &m in &cfg.methods {
        if out.iter().any(|(done, _)| *done == m) {
            continue;
        }
        let ivs = match m {
            Method::Cqr => cqr.predict_all(&x_test),
            Method::Cv => stage("cv", cross.as_ref().expect("fitted").cv_predict_all(&x_test, cfg.alpha))?,
            Method::CvPlus => stage("cv+", cross.as_ref().expect("fitted").cvplus_predict_all(&x_test, cfg.alpha))?,
            Method::JackknifeAb => stage("jk+ab", jk.as_ref().expect("fitted").predict_all(&x_test, cfg.alpha))?,
        };
        out.push((m, ivs));
    }
    Ok(out)
}

pub fn build_report(
    cfg: &PipelineConfig,
    intervals: &[(Method, Vec<PredictionInterval<f64>>)],
    y_test: &[f64],
) -> Result<Report> {
    let methods = intervals
        .iter()
        .map(|(m, ivs)| MethodReport::new(m.name(), ivs, y_test))
        .collect::<Result<Vec<_>>>()?;
    stage("report", Report::new(methods, cfg.alpha, cfg.seed))
}

/// Writes the interval tables and the report files under `dir`.
pub fn write_results(
    dir: &Path,
    data: &Dataset,
    sp: &DataSplit,
    intervals: &[(Method, Vec<PredictionInterval<f64>>)],
    report: &Report,
) -> Result<()> {
    let y = data.targets();
    let y_test: Vec<f64> = sp.test.iter().map(|&i| y[i]).collect();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (m, ivs) in intervals {
        let path = dir.join(format!("intervals_{}.csv", slug(m.name())));
        crate::conformal::write_intervals(&path, *m, &sp.test, &y_test, ivs)?;
    }
    emit_report(report, dir)?;
    Ok(())
}

/// Copies the inputs next to the outputs and writes a config that points
/// at them, so the run can be repeated from the output directory alone.
pub fn write_snapshot(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let inputs = dir.join("inputs");
    std::fs::create_dir_all(&inputs).map_err(|e| Error::io(&inputs, e))?;
    io::write_json(&inputs.join("route.json"), &RouteFile::from_segments(&cfg.segments()?))?;
    io::write_json(&inputs.join("plant.json"), &cfg.plant()?)?;
    io::write_params_csv(&inputs.join("params.csv"), &cfg.params()?)?;
    let snap = PipelineConfig {
        route_file: Some("inputs/route.json".into()),
        plant_file: Some("inputs/plant.json".into()),
        params_file: Some("inputs/params.csv".into()),
        out: ".".into(),
        ..cfg.clone()
    };
    io::write_json(&dir.join(CONFIG_FILE), &snap)
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub copula: CopulaModel,
    pub dataset: Dataset,
    pub split: DataSplit,
    pub cqr: Cqr,
    pub intervals: Vec<(Method, Vec<PredictionInterval<f64>>)>,
    pub y_test: Vec<f64>,
    pub report: Report,
}

/// Runs every stage in memory.
pub fn run(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let (copula, dataset) = gen_data(cfg)?;
    let sp = split_dataset(cfg, &dataset)?;
    let cqr = train_cqr(cfg, &dataset, &sp)?;
    let intervals = evaluate(cfg, &dataset, &sp, &cqr)?;
    let y = dataset.targets();
    let y_test: Vec<f64> = sp.test.iter().map(|&i| y[i]).collect();
    let report = build_report(cfg, &intervals, &y_test)?;
    Ok(PipelineOutput {
        copula,
        dataset,
        split: sp,
        cqr,
        intervals,
        y_test,
        report,
    })
}

/// Runs every stage and writes all artifacts under `cfg.out`.
pub fn run_and_write(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let dir = &cfg.out;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_snapshot(cfg, dir)?;
    let out = run(cfg)?;
    io::write_json(&dir.join(COPULA_FILE), &out.copula)?;
    io::write_dataset(&dir.join(DATASET_FILE), &out.dataset)?;
    io::write_json(&dir.join(SPLIT_FILE), &out.split)?;
    save_cqr(&out.cqr, dir)?;
    write_results(dir, &out.dataset, &out.split, &out.intervals, &out.report)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> PipelineConfig {
        PipelineConfig {
            copula_samples: 30,
            soc0: vec![0.3],
            split: [0.5, 0.25, 0.25],
            hyperparams: Hyperparams {
                n_trees: 10,
                max_leaves: 4,
                max_depth: 3,
                min_samples_leaf: 5,
                ..Default::default()
            },
            folds: 3,
            bootstrap: 6,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.copula_samples, 1000);
        assert_eq!(c.soc0, vec![0.26, 0.30, 0.40]);
        assert_eq!(c.split, [0.8, 0.1, 0.1]);
        assert_eq!(c.alpha, 0.1);
        assert_eq!(c.methods.len(), 4);
        c.validate().unwrap();
        let parsed: PipelineConfig = io::parse_json("{}", "cfg").unwrap();
        assert_eq!(parsed, c);
        assert!(io::parse_json::<PipelineConfig>(r#"{"alhpa": 0.2}"#, "cfg").is_err());
    }

    #[test]
    fn rejects_bad_config() {
        for c in [
            PipelineConfig { alpha: 1.0, ..tiny() },
            PipelineConfig { methods: vec![], ..tiny() },
            PipelineConfig { soc0: vec![1.5], ..tiny() },
            PipelineConfig { folds: 1, ..tiny() },
        ] {
            assert_eq!(run(&c).unwrap_err().exit_code(), 2);
        }
    }

    #[test]
    fn small_run_in_memory() {
        let out = run(&tiny()).unwrap();
        assert_eq!(out.dataset.len(), 30 * 8);
        assert_eq!(out.report.methods.len(), 4);
        let names: Vec<&str> = out.report.methods.iter().map(|m| m.name.as_str()).collect();
        assert_eq!(names, ["CQR", "CV", "CV+", "JK+aB"]);
        assert_eq!(out.y_test.len(), out.split.test.len());
    }

    #[test]
    fn stage_errors_carry_the_stage() {
        // a test fraction too small to leave any test rows
        let c = PipelineConfig {
            copula_samples: 1,
            split: [0.98, 0.01, 0.01],
            ..tiny()
        };
        let e = run(&c).unwrap_err();
        assert_eq!(e.exit_code(), 4);
        assert!(e.to_string().contains("split"), "{e}");
    }
}
