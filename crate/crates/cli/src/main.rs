use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fuelband::calibrate::{calibrate_route, CalibrationResult};
use fuelband::conformal::DataSplit;
use fuelband::edm::{simulate_trip, DriverParams, Route};
use fuelband::eval::format_table;
use fuelband::io;
use fuelband::pipeline::{self, PipelineConfig};
use fuelband::plant::{simulate_energy, simulate_energy_traced};
use fuelband::seed::{stage_seed, tags};
use fuelband::{Error, Result};
use log::info;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "fuelband", version, about = "PHEV trip simulation and conformal fuel-consumption intervals")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; all cores by default.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one driver over a route and compute the trip energy.
    Simulate {
        /// Parameter CSV; `--row` selects the line.
        #[arg(long, conflicts_with = "driver")]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        row: usize,
        /// Inline parameters `a,b,delta,c1,theta`.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        driver: Option<Vec<f64>>,
        /// Route JSON; the configured route when absent.
        #[arg(long)]
        route: Option<PathBuf>,
        #[arg(long, default_value_t = 0.3)]
        soc0: f64,
        /// Also write the per-step plant trace.
        #[arg(long)]
        trace: bool,
    },
    /// Fit driver parameters to a reference speed trace, one segment at a time.
    Calibrate {
        /// CSV with `t_s` and `v_mps` or `v_mph`.
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        route: Option<PathBuf>,
    },
    /// Fit the copula and simulate the training dataset.
    GenData,
    /// Split a dataset and train the CQR band.
    Train {
        /// Dataset CSV; `<out>/dataset.csv` when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score CQR and the baselines on the test rows and write the report.
    Evaluate {
        #[arg(long)]
        data: Option<PathBuf>,
        /// CQR model file; `<out>/cqr.json` when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Split file; `<out>/split.json` when absent.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Run every stage end to end.
    Pipeline,
}

fn config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn route(cfg: &PipelineConfig, path: &Option<PathBuf>) -> Result<Route<f64>> {
    match path {
        Some(p) => io::read_route(p),
        None => Route::new(cfg.segments()?),
    }
}

#[derive(Serialize)]
struct EnergyFile {
    #[serde(flatten)]
    summary: fuelband::plant::EnergySummary,
    tracking_rmse_mps: f64,
    infeasible_steps: usize,
    clipped_steps: usize,
    duration_s: f64,
}

fn simulate(
    cfg: &PipelineConfig,
    params: &Option<PathBuf>,
    row: usize,
    driver: &Option<Vec<f64>>,
    route_path: &Option<PathBuf>,
    soc0: f64,
    trace: bool,
) -> Result<()> {
    let p = match (driver, params) {
        (Some(v), _) => match v.as_slice() {
            &[a, b, delta, c1, theta] => DriverParams::new(a, b, delta, c1, theta)?,
            _ => return Err(Error::InvalidInput(format!("--driver needs 5 values, got {}", v.len()))),
        },
        (None, source) => {
            let (all, name) = match source {
                Some(path) => (io::read_params_csv(path)?, path.display().to_string()),
                None => (io::bundled_params(), "bundled parameters".to_string()),
            };
            *all.get(row)
                .ok_or_else(|| Error::InvalidInput(format!("{name}: no row {row} ({} rows)", all.len())))?
        }
    };
    let route = route(cfg, route_path)?;
    let traj = simulate_trip(&p, &route, &cfg.driver, None)?;
    let plant = cfg.plant()?;
    let energy = if trace {
        simulate_energy_traced(&traj, soc0, &plant)?
    } else {
        simulate_energy(&traj, soc0, &plant)?
    };
    mkdir(&cfg.out)?;
    if let Some(t) = &energy.trace {
        io::write_plant_trace_csv(&cfg.out.join("plant_trace.csv"), t)?;
    }
    io::write_trajectory_csv(&cfg.out.join("trajectory.csv"), &traj)?;
    io::write_json(
        &cfg.out.join("energy.json"),
        &EnergyFile {
            summary: energy.summary(),
            tracking_rmse_mps: energy.tracking_rmse,
            infeasible_steps: energy.infeasible_steps,
            clipped_steps: energy.clipped_steps,
            duration_s: traj.duration(),
        },
    )?;
    println!(
        "{:.1} s, {:.1} m: fuel {:.2} g, battery {:.0} J, equivalent fuel {:.2} g",
        traj.duration(),
        route.total_length(),
        energy.m_fuel,
        energy.e_batt,
        energy.m_f_eq
    );
    Ok(())
}

fn calibrate(cfg: &PipelineConfig, reference: &Path, route_path: &Option<PathBuf>) -> Result<()> {
    let trace = io::read_reference_csv(reference)?;
    let route = route(cfg, route_path)?;
    let mut ga = cfg.ga.clone();
    ga.driver = cfg.driver;
    ga.seed = stage_seed(cfg.seed, tags::CALIBRATE);
    let results = calibrate_route(&trace, &route, &ga)?;
    mkdir(&cfg.out)?;
    let path = cfg.out.join("calibration.json");
    if let [one] = results.as_slice() {
        io::write_json(&path, one)?;
    } else {
        io::write_json(&path, &results)?;
    }
    let params: Vec<DriverParams<f64>> = results.iter().map(|r: &CalibrationResult| r.params).collect();
    io::write_params_csv(&cfg.out.join("calibrated_params.csv"), &params)?;
    for (s, r) in results.iter().enumerate() {
        println!("segment {s}: RMSE {:.3} mph", r.rmse_mph);
    }
    Ok(())
}

fn gen_data(cfg: &PipelineConfig) -> Result<()> {
    mkdir(&cfg.out)?;
    pipeline::write_snapshot(cfg, &cfg.out)?;
    let (copula, data) = pipeline::gen_data(cfg)?;
    io::write_json(&cfg.out.join(pipeline::COPULA_FILE), &copula)?;
    io::write_dataset(&cfg.out.join(pipeline::DATASET_FILE), &data)?;
    println!("{} rows written, {} excluded", data.len(), data.meta.exclusions.len());
    Ok(())
}

fn or_out(cfg: &PipelineConfig, p: &Option<PathBuf>, name: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| cfg.out.join(name))
}

fn train(cfg: &PipelineConfig, data: &Option<PathBuf>) -> Result<()> {
    let data = io::read_dataset(&or_out(cfg, data, pipeline::DATASET_FILE))?;
    let sp = pipeline::split_dataset(cfg, &data)?;
    let cqr = pipeline::train_cqr(cfg, &data, &sp)?;
    mkdir(&cfg.out)?;
    io::write_json(&cfg.out.join(pipeline::SPLIT_FILE), &sp)?;
    pipeline::save_cqr(&cqr, &cfg.out)?;
    println!("CQR margin {:.4} g at alpha {}", cqr.q_alpha, cqr.alpha);
    Ok(())
}

fn evaluate(cfg: &PipelineConfig, data: &Option<PathBuf>, model: &Option<PathBuf>, split: &Option<PathBuf>) -> Result<()> {
    let data = io::read_dataset(&or_out(cfg, data, pipeline::DATASET_FILE))?;
    let cqr = pipeline::load_cqr(&or_out(cfg, model, pipeline::CQR_FILE))?;
    let sp: DataSplit = io::read_json(&or_out(cfg, split, pipeline::SPLIT_FILE))?;
    if let Some(&bad) = sp.train.iter().chain(&sp.calib).chain(&sp.test).find(|&&i| i >= data.len()) {
        return Err(Error::InvalidInput(format!("split refers to row {bad} but the dataset has {}", data.len())));
    }
    let cfg = PipelineConfig { alpha: cqr.alpha, ..cfg.clone() };
    let intervals = pipeline::evaluate(&cfg, &data, &sp, &cqr)?;
    let y = data.targets();
    let y_test: Vec<f64> = sp.test.iter().map(|&i| y[i]).collect();
    let report = pipeline::build_report(&cfg, &intervals, &y_test)?;
    pipeline::write_results(&cfg.out, &data, &sp, &intervals, &report)?;
    print!("{}", format_table(&report));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.jobs {
        if n == 0 {
            return Err(Error::InvalidInput("--jobs must be at least 1".into()));
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = config(&cli.global)?;
    info!("seed {}, output {}", cfg.seed, cfg.out.display());
    match &cli.cmd {
        Cmd::Simulate {
            params,
            row,
            driver,
            route,
            soc0,
            trace,
        } => simulate(&cfg, params, *row, driver, route, *soc0, *trace),
        Cmd::Calibrate { reference, route } => calibrate(&cfg, reference, route),
        Cmd::GenData => gen_data(&cfg),
        Cmd::Train { data } => train(&cfg, data),
        Cmd::Evaluate { data, model, split } => evaluate(&cfg, data, model, split),
        Cmd::Pipeline => {
            let out = pipeline::run_and_write(&cfg)?;
            print!("{}", format_table(&out.report));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
