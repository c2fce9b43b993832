//! Sweeps over SNR, grid step and LED bandwidth, bound tables and the
//! diffuse bandwidth map. Every table is a deterministic function of the
//! configuration and its seed.

use std::io::Write;

use rayon::prelude::*;

use crate::bounds::{lattice_crlb, lb_rms, BoundResult};
use crate::channel::{diffuse_bw_3db, ChannelModel, SystemFilter};
use crate::config::Config;
use crate::error::{invalid, Error, Result};
use crate::estimator::{rms_error, FeatureSelection, NoiseModel, SnrSpec, TruthSet};
use crate::fingerprint::{build_map, FeatureSimulator, FingerprintMap};
use crate::regression::{fit_surfaces, DetectorSurfaces, FeatureSample, SectionLayout};
use crate::scene::make_grid;

/// One Monte Carlo operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsRow {
    pub snr_db: f64,
    pub q: usize,
    pub features: usize,
    pub grid_step: f64,
    /// LED bandwidth in Hz; infinity for an ideal LED.
    pub bandwidth: f64,
    pub trials: usize,
    pub rms: f64,
    pub stderr: f64,
    /// Two-nearest-centre lower bound over the same positions.
    pub lb_rms: f64,
    pub qlb: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRow {
    pub snr_db: f64,
    pub q: usize,
    pub features: usize,
    pub bounds: BoundResult,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthRow {
    pub x: f64,
    pub y: f64,
    pub detector: usize,
    pub bw_hz: f64,
}

/// Rows that can be written as headered CSV.
pub trait CsvRow {
    const HEADER: &'static str;
    fn csv(&self) -> String;
}

impl CsvRow for RmsRow {
    const HEADER: &'static str = "snr_db,q,features,grid_step_m,bandwidth_hz,trials,rms_m,stderr_m,lb_rms_m,qlb_m";
    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.snr_db,
            self.q,
            self.features,
            self.grid_step,
            self.bandwidth,
            self.trials,
            self.rms,
            self.stderr,
            self.lb_rms,
            self.qlb
        )
    }
}

impl CsvRow for BoundRow {
    const HEADER: &'static str = "snr_db,q,features,crlb_rms_m,qlb_m,qcrlb_m,lb_rms_m";
    fn csv(&self) -> String {
        let b = &self.bounds;
        format!(
            "{},{},{},{},{},{},{}",
            self.snr_db, self.q, self.features, b.crlb_rms, b.qlb, b.qcrlb, b.lb_rms
        )
    }
}

impl CsvRow for BandwidthRow {
    const HEADER: &'static str = "x_m,y_m,detector,bw_hz";
    fn csv(&self) -> String {
        format!("{},{},{},{}", self.x, self.y, self.detector, self.bw_hz)
    }
}

/// Writes the header and one line per row. Floats use the shortest text
/// that reads back to the same value.
pub fn write_csv<R: CsvRow, W: Write>(rows: &[R], mut out: W) -> Result<()> {
    writeln!(out, "{}", R::HEADER)?;
    for r in rows {
        writeln!(out, "{}", r.csv())?;
    }
    Ok(())
}

fn check_model(config: &Config, model: &ChannelModel) -> Result<()> {
    if model.scene() != &config.scene || model.params() != &config.channel {
        return Err(invalid("model", "channel model was built for a different configuration"));
    }
    Ok(())
}

fn simulator<'a>(config: &Config, model: &'a ChannelModel, filter: SystemFilter) -> FeatureSimulator<'a> {
    FeatureSimulator::new(model, filter, config.features)
}

/// Fingerprint map on a grid of the given step at the emitter height.
pub fn map_for(sim: &FeatureSimulator, step: f64) -> Result<FingerprintMap> {
    let scene = sim.model.scene();
    build_map(sim, &make_grid(&scene.room, step, scene.emitter.height())?)
}

fn noise_at(config: &Config, snr_db: f64) -> Result<NoiseModel> {
    SnrSpec::for_scene(&config.scene, snr_db, config.estimator.sigma_tau_ref)?.noise()
}

/// MC and lower-bound rows for every `(snr, q, features)` combination, in
/// that nesting order.
#[allow(clippy::too_many_arguments)]
fn rms_rows(
    config: &Config,
    truths: &TruthSet,
    map: &FingerprintMap,
    snrs: &[f64],
    features: &[usize],
    grid_step: f64,
    bandwidth: f64,
) -> Result<Vec<RmsRow>> {
    let mut rows = Vec::new();
    for &snr_db in snrs {
        log::info!("step {grid_step} m, bandwidth {bandwidth:e} Hz, SNR {snr_db} dB");
        let noise = noise_at(config, snr_db)?;
        for &q in &config.sweep.detectors {
            for &f in features {
                let sel = FeatureSelection::from_count(f)?;
                let mc = rms_error(truths, map, &noise, sel, q)?;
                rows.push(RmsRow {
                    snr_db,
                    q,
                    features: f,
                    grid_step,
                    bandwidth,
                    trials: mc.trials,
                    rms: mc.rms,
                    stderr: mc.stderr,
                    lb_rms: lb_rms(truths, map, &noise, sel, q)?,
                    qlb: crate::bounds::qlb(grid_step),
                });
            }
        }
    }
    Ok(rows)
}

/// RMS error against SNR on the configured grid step.
pub fn sweep_snr(config: &Config, model: &ChannelModel) -> Result<Vec<RmsRow>> {
    check_model(config, model)?;
    let sim = simulator(config, model, config.filter);
    let est = &config.estimator;
    let map = map_for(&sim, est.grid_step)?;
    let truths = TruthSet::draw(&sim, est.trials, est.seed)?;
    let bw = config.filter.f_led.unwrap_or(f64::INFINITY);
    rms_rows(config, &truths, &map, &config.sweep.snr_db, &config.sweep.features, est.grid_step, bw)
}

/// RMS error against grid step at a fixed SNR. The same positions and
/// noise draws are used for every step.
pub fn sweep_grid(config: &Config, model: &ChannelModel) -> Result<Vec<RmsRow>> {
    check_model(config, model)?;
    let sim = simulator(config, model, config.filter);
    let truths = TruthSet::draw(&sim, config.estimator.trials, config.estimator.seed)?;
    let bw = config.filter.f_led.unwrap_or(f64::INFINITY);
    let mut rows = Vec::new();
    for &step in &config.sweep.grid_steps {
        let map = map_for(&sim, step)?;
        rows.extend(rms_rows(
            config,
            &truths,
            &map,
            &[config.sweep.grid_snr_db],
            &config.sweep.features,
            step,
            bw,
        )?);
    }
    Ok(rows)
}

/// RMS error against LED bandwidth. Map and observations are both
/// simulated through the band-limited LED; positions and noise draws are
/// shared across bandwidths.
pub fn sweep_bw(config: &Config, model: &ChannelModel) -> Result<Vec<RmsRow>> {
    check_model(config, model)?;
    let est = &config.estimator;
    let mut rows = Vec::new();
    for &bw in &config.sweep.bandwidths {
        let filter = SystemFilter {
            f_led: bw.is_finite().then_some(bw),
            ..config.filter
        };
        let sim = simulator(config, model, filter);
        let map = map_for(&sim, est.grid_step)?;
        let truths = TruthSet::draw(&sim, est.trials, est.seed)?;
        rows.extend(rms_rows(
            config,
            &truths,
            &map,
            &[config.sweep.bw_snr_db],
            &config.sweep.bw_features,
            est.grid_step,
            bw,
        )?);
    }
    Ok(rows)
}

/// Diffuse 3 dB bandwidth of every detector's unfiltered channel over a
/// grid of the configured map step.
pub fn bw_map(config: &Config, model: &ChannelModel) -> Result<Vec<BandwidthRow>> {
    check_model(config, model)?;
    let scene = model.scene();
    let grid = make_grid(&scene.room, config.sweep.bw_map_step, scene.emitter.height())?;
    let per_cell = grid
        .centers
        .par_iter()
        .map(|c| {
            (0..model.detector_count())
                .map(|d| {
                    Ok(BandwidthRow {
                        x: c.x,
                        y: c.y,
                        detector: d,
                        bw_hz: diffuse_bw_3db(&model.response_at(c.x, c.y, d)?)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}

/// Second-peak power and delay surfaces of every detector, fitted to
/// features simulated on a grid of step `step`.
pub fn fit_scene_surfaces(sim: &FeatureSimulator, step: f64) -> Result<Vec<DetectorSurfaces>> {
    let scene = sim.model.scene();
    let grid = make_grid(&scene.room, step, scene.emitter.height())?;
    let observations = grid
        .centers
        .par_iter()
        .map(|c| sim.observe(c.x, c.y))
        .collect::<Result<Vec<_>>>()?;
    scene
        .detectors
        .iter()
        .enumerate()
        .map(|(q, det)| {
            let samples: Vec<FeatureSample> = grid
                .centers
                .iter()
                .zip(&observations)
                .map(|(c, o)| FeatureSample {
                    x: c.x,
                    y: c.y,
                    features: o.features[q],
                })
                .collect();
            fit_surfaces(&samples, SectionLayout::for_detector(&scene.room, det.position)?)
        })
        .collect()
}

/// Room-average CRLB, or infinity when the information matrix is singular
/// somewhere on the lattice.
pub fn room_crlb(
    config: &Config,
    surfaces: &[DetectorSurfaces],
    noise: &NoiseModel,
    sel: FeatureSelection,
    q: usize,
) -> Result<f64> {
    // The zero-noise bound is zero wherever the shape-weighted one exists.
    let shape = if noise.is_noiseless() { noise_at(config, 0.0)? } else { *noise };
    let crlb = match lattice_crlb(&config.scene, surfaces, &shape, sel, q, config.bound_lattice) {
        Err(Error::SingularFim { .. }) => return Ok(f64::INFINITY),
        other => other?,
    };
    Ok(if noise.is_noiseless() { 0.0 } else { crlb })
}

/// CRLB, quantization bounds and the two-nearest-centre bound for every
/// `(snr, q, features)` combination.
pub fn bounds_table(config: &Config, model: &ChannelModel) -> Result<Vec<BoundRow>> {
    check_model(config, model)?;
    let sim = simulator(config, model, config.filter);
    let est = &config.estimator;
    let surfaces = if config.sweep.features.iter().any(|&f| f > 1) {
        fit_scene_surfaces(&sim, config.regression_step)?
    } else {
        Vec::new()
    };
    let map = map_for(&sim, est.grid_step)?;
    let truths = TruthSet::draw(&sim, est.trials, est.seed)?;
    let mut rows = Vec::new();
    for &snr_db in &config.sweep.snr_db {
        let noise = noise_at(config, snr_db)?;
        for &q in &config.sweep.detectors {
            for &f in &config.sweep.features {
                let sel = FeatureSelection::from_count(f)?;
                let crlb = room_crlb(config, &surfaces, &noise, sel, q)?;
                let lb = lb_rms(&truths, &map, &noise, sel, q)?;
                rows.push(BoundRow {
                    snr_db,
                    q,
                    features: f,
                    bounds: BoundResult::new(crlb, est.grid_step, lb),
                });
            }
        }
    }
    Ok(rows)
}
