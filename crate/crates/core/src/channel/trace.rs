//! Deterministic multipath ray tracing over Lambertian reflecting elements.
//!
//! The first reflection is traced over the fine element partition of the
//! room. Higher-order reflections use a coarser partition: for every coarse
//! element we precompute, per detector, the binned response seen at the
//! detector once that element has absorbed unit power. Those responses only
//! depend on the detector, so evaluating a new emitter position costs one pass
//! over the fine elements plus one shift-and-add per coarse element and
//! bounce order.

use std::f64::consts::PI;

use rayon::prelude::*;

use super::{los_delay, los_gain, ImpulseResponse, SPEED_OF_LIGHT};
use crate::error::{invalid, Error, Result};
use crate::scene::{partition_surfaces, Detector, Element, Emitter, Scene, Vec3};

/// Upper bound on coarse element-pair interactions for one precomputation.
const MAX_PAIR_INTERACTIONS: f64 = 1e9;
/// Upper bound on fine elements kept for first-bounce tracing.
const MAX_FINE_ELEMENTS: usize = 20_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    /// Highest reflection order traced; 0 gives the line of sight only.
    pub max_bounces: usize,
    /// Time bin width in seconds.
    pub dt: f64,
    /// Element edge for the first reflection; `None` uses the room's element size.
    pub fine_element_size: Option<f64>,
    /// Element edge for the second and later reflections.
    pub coarse_element_size: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            max_bounces: 3,
            dt: 0.2e-9,
            fine_element_size: None,
            coarse_element_size: 0.2,
        }
    }
}

impl ChannelParams {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        if let Some(s) = self.fine_element_size {
            if !(s.is_finite() && s > 0.0) {
                return Err(invalid("fine_element_size", format!("must be positive, got {s}")));
            }
        }
        if !(self.coarse_element_size.is_finite() && self.coarse_element_size > 0.0) {
            return Err(invalid(
                "coarse_element_size",
                format!("must be positive, got {}", self.coarse_element_size),
            ));
        }
        Ok(())
    }
}

/// Sparse binned response: `values[i]` sits at bin `offset + i`.
#[derive(Debug, Clone, Default)]
struct Histogram {
    offset: usize,
    values: Vec<f64>,
}

impl Histogram {
    fn from_dense(dense: &[f64]) -> Histogram {
        match dense.iter().position(|&v| v != 0.0) {
            None => Histogram::default(),
            Some(first) => {
                let last = dense.iter().rposition(|&v| v != 0.0).unwrap();
                Histogram {
                    offset: first,
                    values: dense[first..=last].to_vec(),
                }
            }
        }
    }

    fn end(&self) -> usize {
        self.offset + self.values.len()
    }

    fn add_into(&self, out: &mut Vec<f64>, shift: usize, scale: f64) {
        if self.values.is_empty() {
            return;
        }
        let start = shift + self.offset;
        if out.len() < start + self.values.len() {
            out.resize(start + self.values.len(), 0.0);
        }
        for (o, v) in out[start..].iter_mut().zip(&self.values) {
            *o += scale * v;
        }
    }

    /// Adds the histogram delayed by a fractional number of bins, split
    /// linearly between the two neighbouring bins.
    fn add_into_fractional(&self, out: &mut Vec<f64>, shift: f64, scale: f64) {
        let whole = shift.floor();
        let frac = shift - whole;
        self.add_into(out, whole as usize, scale * (1.0 - frac));
        if frac > 0.0 {
            self.add_into(out, whole as usize + 1, scale * frac);
        }
    }
}

/// A fine element as seen from one detector: everything but the emitter leg.
#[derive(Debug, Clone, Copy)]
struct FirstBounceTap {
    center: Vec3,
    normal: Vec3,
    /// `A_e * rho * cos(phi_e) * cos(psi_R) * A_R / (pi d^2)`.
    gain: f64,
    /// Element-to-detector delay in seconds.
    delay: f64,
}

#[derive(Debug, Clone)]
struct DetectorTables {
    detector: Detector,
    taps: Vec<FirstBounceTap>,
    /// `tails[j][e]`: response at the detector after coarse element `e`
    /// absorbs unit power and the light undergoes `j + 1` further reflections.
    tails: Vec<Vec<Histogram>>,
}

/// Precomputed multipath model of one scene. Immutable and shareable across
/// threads; evaluation is a pure function of the emitter position.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    scene: Scene,
    params: ChannelParams,
    coarse: Vec<Element>,
    tables: Vec<DetectorTables>,
}

impl ChannelModel {
    pub fn new(scene: &Scene, params: ChannelParams) -> Result<ChannelModel> {
        scene.validate()?;
        params.validate()?;
        let fine_size = params.fine_element_size.unwrap_or(scene.room.element_size);
        let emitter_z = scene.emitter.position.z;

        let fine_count = estimate_count(scene, fine_size);
        if params.max_bounces >= 1 && fine_count > MAX_FINE_ELEMENTS as f64 {
            return Err(Error::ResourceLimit(format!(
                "{fine_count:.0} first-bounce elements at {fine_size} m exceed {MAX_FINE_ELEMENTS}"
            )));
        }
        let coarse_count = estimate_count(scene, params.coarse_element_size);
        let interactions =
            coarse_count * coarse_count * params.max_bounces.saturating_sub(1) as f64;
        if interactions > MAX_PAIR_INTERACTIONS {
            return Err(Error::ResourceLimit(format!(
                "{interactions:.2e} element-pair interactions for {} bounces at {} m elements exceed {MAX_PAIR_INTERACTIONS:e}",
                params.max_bounces, params.coarse_element_size
            )));
        }

        // Only elements above the emitter plane can be lit by an upward emitter.
        let fine: Vec<Element> = if params.max_bounces >= 1 {
            partition_surfaces(&scene.room, fine_size)?
                .into_iter()
                .filter(|e| e.center.z > emitter_z && e.rho > 0.0)
                .collect()
        } else {
            Vec::new()
        };
        let coarse = if params.max_bounces >= 2 {
            partition_surfaces(&scene.room, params.coarse_element_size)?
        } else {
            Vec::new()
        };

        let tables = scene
            .detectors
            .iter()
            .map(|det| DetectorTables {
                detector: *det,
                taps: first_bounce_taps(&fine, det),
                tails: tail_responses(&coarse, det, params.max_bounces, params.dt),
            })
            .collect();

        Ok(ChannelModel {
            scene: scene.clone(),
            params,
            coarse,
            tables,
        })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn detector_count(&self) -> usize {
        self.tables.len()
    }

    /// Impulse response from the scene's emitter placed at `(x, y)`.
    pub fn response_at(&self, x: f64, y: f64, detector: usize) -> Result<ImpulseResponse> {
        self.response(&self.scene.emitter.at(x, y), detector)
    }

    /// Impulse response from `emitter` to detector `detector` (0-based).
    pub fn response(&self, emitter: &Emitter, detector: usize) -> Result<ImpulseResponse> {
        let table = self.tables.get(detector).ok_or(Error::DimensionMismatch {
            expected: self.tables.len(),
            actual: detector + 1,
        })?;
        self.scene.validate_emitter(emitter)?;
        if (emitter.position.z - self.scene.emitter.position.z).abs() > 1e-12 {
            return Err(invalid(
                "emitter",
                "height differs from the height the model was built for",
            ));
        }
        let dt = self.params.dt;
        let det = &table.detector;

        let mut bins = Vec::new();
        let los = los_gain(emitter, det)?;
        let los_bin = (los_delay(emitter, det)? / dt).round() as usize;
        bins.resize(los_bin + 1, 0.0);
        bins[los_bin] += los;

        let m = emitter.lambertian_order;
        let lambert = LambertPattern::new(m);
        let p = emitter.position;

        if self.params.max_bounces >= 1 {
            for tap in &table.taps {
                let v = tap.center - p;
                let d2 = v.norm_sq();
                let d = d2.sqrt();
                let cos_phi = v.z / d;
                let cos_psi = -tap.normal.dot(v) / d;
                if cos_phi <= 0.0 || cos_psi <= 0.0 {
                    continue;
                }
                let g = lambert.intensity(cos_phi) * cos_psi / d2 * tap.gain;
                deposit(&mut bins, (d / SPEED_OF_LIGHT + tap.delay) / dt, g);
            }
        }

        if !table.tails.is_empty() {
            for (e, el) in self.coarse.iter().enumerate() {
                let v = el.center - p;
                let d2 = v.norm_sq();
                let d = d2.sqrt();
                let cos_phi = v.z / d;
                let cos_psi = -el.normal.dot(v) / d;
                if cos_phi <= 0.0 || cos_psi <= 0.0 {
                    continue;
                }
                let received = lambert.intensity(cos_phi) * cos_psi * el.area / d2;
                let shift = d / SPEED_OF_LIGHT / dt;
                for order in &table.tails {
                    order[e].add_into_fractional(&mut bins, shift, received);
                }
            }
        }

        ImpulseResponse::new(0.0, dt, bins)
    }
}

/// Splits `gain` linearly between the two bins around the fractional bin
/// position `at`.
fn deposit(bins: &mut Vec<f64>, at: f64, gain: f64) {
    let k = at.floor();
    let frac = at - k;
    let k = k as usize;
    if bins.len() < k + 2 {
        bins.resize(k + 2, 0.0);
    }
    bins[k] += gain * (1.0 - frac);
    bins[k + 1] += gain * frac;
}

/// `(m + 1) / (2 pi) cos^m(phi)`, with an integer fast path.
struct LambertPattern {
    m: f64,
    mi: Option<i32>,
    norm: f64,
}

impl LambertPattern {
    fn new(m: f64) -> Self {
        let mi = (m.fract() == 0.0 && m <= 64.0).then_some(m as i32);
        Self {
            m,
            mi,
            norm: (m + 1.0) / (2.0 * PI),
        }
    }

    fn intensity(&self, cos_phi: f64) -> f64 {
        match self.mi {
            Some(1) => self.norm * cos_phi,
            Some(k) => self.norm * cos_phi.powi(k),
            None => self.norm * cos_phi.powf(self.m),
        }
    }
}

fn estimate_count(scene: &Scene, size: f64) -> f64 {
    let r = &scene.room;
    let n = |extent: f64| (extent / size).ceil();
    2.0 * (n(r.width) * n(r.length) + n(r.width) * n(r.height) + n(r.length) * n(r.height))
}

/// Order-1 Lambertian reradiation from an element toward the detector, or
/// `None` when the detector cannot see it.
fn element_to_detector(el: &Element, det: &Detector) -> Option<(f64, f64)> {
    let v = det.position - el.center;
    let d2 = v.norm_sq();
    if d2 == 0.0 {
        return None;
    }
    let d = d2.sqrt();
    let cos_phi = el.normal.dot(v) / d;
    let cos_psi = -det.orientation.dot(v) / d;
    if cos_phi <= 0.0 || cos_psi <= 0.0 || cos_psi < det.fov_half_angle.cos() {
        return None;
    }
    Some((el.rho * cos_phi * cos_psi * det.area / (PI * d2), d / SPEED_OF_LIGHT))
}

fn first_bounce_taps(fine: &[Element], det: &Detector) -> Vec<FirstBounceTap> {
    fine.iter()
        .filter_map(|el| {
            element_to_detector(el, det).map(|(g, delay)| FirstBounceTap {
                center: el.center,
                normal: el.normal,
                gain: g * el.area,
                delay,
            })
        })
        .collect()
}

/// Fraction of the power absorbed by `from` that reaches `to` after
/// reradiation, with its delay. The disc-regularized point form factor keeps
/// neighbouring elements on adjoining surfaces bounded.
fn element_transfer(from: &Element, to: &Element) -> Option<(f64, f64)> {
    let v = to.center - from.center;
    let d2 = v.norm_sq();
    if d2 == 0.0 {
        return None;
    }
    let d = d2.sqrt();
    let cos_from = from.normal.dot(v) / d;
    let cos_to = -to.normal.dot(v) / d;
    if cos_from <= 0.0 || cos_to <= 0.0 {
        return None;
    }
    let g = from.rho * cos_from * cos_to * to.area / (PI * d2 + to.area);
    Some((g, d / SPEED_OF_LIGHT))
}

fn tail_responses(coarse: &[Element], det: &Detector, max_bounces: usize, dt: f64) -> Vec<Vec<Histogram>> {
    if max_bounces < 2 {
        return Vec::new();
    }
    // Zero further reflections: straight to the detector.
    let mut current: Vec<Histogram> = coarse
        .iter()
        .map(|el| match element_to_detector(el, det) {
            Some((g, delay)) => {
                let bin = (delay / dt).round() as usize;
                Histogram {
                    offset: bin,
                    values: vec![g],
                }
            }
            None => Histogram::default(),
        })
        .collect();

    let mut tails = Vec::with_capacity(max_bounces - 1);
    for _ in 1..max_bounces {
        let max_end = current.iter().map(Histogram::end).max().unwrap_or(0);
        let next: Vec<Histogram> = coarse
            .par_iter()
            .enumerate()
            .map(|(i, from)| {
                let mut dense = Vec::new();
                for (j, to) in coarse.iter().enumerate() {
                    if i == j || current[j].values.is_empty() {
                        continue;
                    }
                    if let Some((g, delay)) = element_transfer(from, to) {
                        if dense.is_empty() {
                            dense.reserve(max_end + 64);
                        }
                        let shift = (delay / dt).round() as usize;
                        current[j].add_into(&mut dense, shift, g);
                    }
                }
                Histogram::from_dense(&dense)
            })
            .collect();
        tails.push(next.clone());
        current = next;
    }
    tails
}

/// One-shot impulse response for a single emitter/detector pair. Builds a
/// throwaway [`ChannelModel`]; use the model directly for repeated queries.
pub fn impulse_response(
    emitter: &Emitter,
    detector: &Detector,
    scene: &Scene,
    max_bounces: usize,
    dt: f64,
) -> Result<ImpulseResponse> {
    let single = Scene {
        emitter: *emitter,
        detectors: vec![*detector],
        ..scene.clone()
    };
    let params = ChannelParams {
        max_bounces,
        dt,
        ..ChannelParams::default()
    };
    ChannelModel::new(&single, params)?.response(emitter, 0)
}
