use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use uplink_vlp::channel::{apply_system_filter, ChannelModel};
use uplink_vlp::config::Config;
use uplink_vlp::estimator::{locate, synthesize_observation, FeatureSelection, SnrSpec};
use uplink_vlp::experiments::{self, fit_scene_surfaces, map_for, write_csv};
use uplink_vlp::fingerprint::{load_map, write_map, FeatureSimulator};
use uplink_vlp::regression::write_coefficients;

#[derive(Parser)]
#[command(name = "vlp", version, about = "Uplink optical-wireless fingerprint positioning toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file; keys not given fall back to the bundled defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `estimator.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `estimator.trials`.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Channel impulse response for one emitter position and detector.
    SimulateIr {
        #[arg(long)]
        x: f64,
        #[arg(long)]
        y: f64,
        /// Detector index, 0-based.
        #[arg(long, default_value_t = 0)]
        detector: usize,
        /// Apply the configured LED and photodiode filters.
        #[arg(long)]
        filtered: bool,
    },
    /// Fingerprint map on the configured grid.
    BuildMap {
        /// Grid step in metres; defaults to `estimator.grid_step`.
        #[arg(long)]
        step: Option<f64>,
    },
    /// Sectioned quartic fits of the second-peak power and delay surfaces.
    FitRegression,
    /// Locates a simulated noisy observation against a saved map.
    Locate {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        x: f64,
        #[arg(long)]
        y: f64,
        /// SNR in dB; `inf` for a noiseless observation.
        #[arg(long, default_value = "inf")]
        snr: f64,
        /// Number of detectors used; defaults to all in the map.
        #[arg(long)]
        q: Option<usize>,
        #[arg(long, default_value_t = 3)]
        features: usize,
    },
    /// RMS error against SNR.
    SweepSnr,
    /// RMS error against grid step.
    SweepGrid,
    /// RMS error against LED bandwidth.
    SweepBw,
    /// Diffuse 3 dB bandwidth over the room.
    BwMap,
    /// CRLB, quantization and nearest-pair bounds against SNR.
    Bounds,
}

fn load_config(common: &Common) -> Result<Config> {
    let mut config = match &common.config {
        Some(path) => Config::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        config.estimator.seed = seed;
    }
    if let Some(trials) = common.trials {
        if trials == 0 {
            bail!("--trials must be at least 1");
        }
        config.estimator.trials = trials;
    }
    Ok(config)
}

fn output(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn build_model(config: &Config) -> Result<ChannelModel> {
    let t = std::time::Instant::now();
    let model = ChannelModel::new(&config.scene, config.channel)?;
    log::info!("channel model built in {:.1?}", t.elapsed());
    Ok(model)
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli.common)?;
    let mut out = output(&cli.common.out)?;
    match cli.command {
        Command::SimulateIr { x, y, detector, filtered } => {
            let model = build_model(&config)?;
            let mut ir = model.response_at(x, y, detector)?;
            if filtered && !config.filter.is_ideal() {
                ir = apply_system_filter(&ir, &config.filter)?;
            }
            ir.write_csv(&mut out)?;
        }
        Command::BuildMap { step } => {
            let model = build_model(&config)?;
            let sim = FeatureSimulator::new(&model, config.filter, config.features);
            let map = map_for(&sim, step.unwrap_or(config.estimator.grid_step))?;
            write_map(&map, &mut out)?;
        }
        Command::FitRegression => {
            let model = build_model(&config)?;
            let sim = FeatureSimulator::new(&model, config.filter, config.features);
            write_coefficients(&fit_scene_surfaces(&sim, config.regression_step)?, &mut out)?;
        }
        Command::Locate {
            map,
            x,
            y,
            snr,
            q,
            features,
        } => {
            let map = load_map(&map).with_context(|| format!("reading map {}", map.display()))?;
            let q = q.unwrap_or(map.detector_count());
            let model = build_model(&config)?;
            let sim = FeatureSimulator::new(&model, config.filter, config.features);
            let noise = SnrSpec::for_scene(&config.scene, snr, config.estimator.sigma_tau_ref)?.noise()?;
            let v = synthesize_observation(&sim, x, y, &noise, config.estimator.seed)?;
            let hit = locate(&v, &map, &noise, FeatureSelection::from_count(features)?, q)?;
            let p = hit.position;
            writeln!(out, "x_m,y_m,cell,estimate_x_m,estimate_y_m,error_m")?;
            writeln!(out, "{x},{y},{},{},{},{}", hit.index, p.x, p.y, (p.x - x).hypot(p.y - y))?;
        }
        Command::SweepSnr => write_csv(&experiments::sweep_snr(&config, &build_model(&config)?)?, &mut out)?,
        Command::SweepGrid => write_csv(&experiments::sweep_grid(&config, &build_model(&config)?)?, &mut out)?,
        Command::SweepBw => write_csv(&experiments::sweep_bw(&config, &build_model(&config)?)?, &mut out)?,
        Command::BwMap => write_csv(&experiments::bw_map(&config, &build_model(&config)?)?, &mut out)?,
        Command::Bounds => write_csv(&experiments::bounds_table(&config, &build_model(&config)?)?, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("vlp: error: {e:#}");
        std::process::exit(1);
    }
}
