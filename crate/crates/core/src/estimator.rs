//! Noisy observations, the covariance-weighted nearest-neighbour locator and
//! Monte Carlo RMS positioning error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::channel::los_power;
use crate::error::{invalid, Error, Result};
use crate::features::{FeatureVector, Observation};
use crate::fingerprint::{FeatureSimulator, FingerprintMap};
use crate::scene::{Scene, Vec3};

/// Diagonal measurement noise: `sigma` on both power features, `sigma_tau`
/// on the delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    sigma: f64,
    sigma_tau: f64,
    silent: bool,
}

impl NoiseModel {
    /// Standard deviations must be positive; an infinite value removes that
    /// component from the distance metric.
    pub fn new(sigma: f64, sigma_tau: f64) -> Result<Self> {
        for (name, v) in [("sigma", sigma), ("sigma_tau", sigma_tau)] {
            if !(v > 0.0) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        Ok(Self {
            sigma,
            sigma_tau,
            silent: false,
        })
    }

    /// Zero-noise limit of `shape`: observations are left untouched while
    /// the locator keeps `shape`'s relative weighting.
    pub fn noiseless_limit(shape: NoiseModel) -> Self {
        Self { silent: true, ..shape }
    }

    pub fn sigma(&self) -> f64 {
        if self.silent {
            0.0
        } else {
            self.sigma
        }
    }

    pub fn sigma_tau(&self) -> f64 {
        if self.silent {
            0.0
        } else {
            self.sigma_tau
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.silent
    }

    /// Every standard deviation multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        let mut n = NoiseModel::new(self.sigma * k, self.sigma_tau * k)?;
        n.silent = self.silent;
        Ok(n)
    }

    /// Diagonal of the covariance, `[s^2, s^2, s_tau^2, ...]`, length `3q`.
    pub fn covariance_diag(&self, q: usize) -> Vec<f64> {
        let c = [self.sigma.powi(2), self.sigma.powi(2), self.sigma_tau.powi(2)];
        (0..q).flat_map(|_| c).collect()
    }

    /// Inverse variances used by the locator, per feature slot.
    pub(crate) fn weights(&self) -> [f64; 3] {
        let w = 1.0 / (self.sigma * self.sigma);
        [w, w, 1.0 / (self.sigma_tau * self.sigma_tau)]
    }
}

/// Maps an SNR in dB to feature noise. Both deviations scale as
/// `10^(-snr/20)`: `sigma = p_ref 10^(-snr/20)` and
/// `sigma_tau = sigma_tau_ref 10^(-snr/20)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrSpec {
    pub snr_db: f64,
    /// Reference power, watts.
    pub p_ref: f64,
    /// Delay noise at 0 dB, seconds.
    pub sigma_tau_ref: f64,
}

impl SnrSpec {
    pub const DEFAULT_SIGMA_TAU_REF: f64 = 100e-9;

    /// Reference power: line-of-sight power at the first detector from an
    /// emitter at the middle of the room.
    pub fn reference_power(scene: &Scene) -> Result<f64> {
        let det = scene.detectors.first().ok_or_else(|| invalid("detectors", "scene has none"))?;
        let e = scene.emitter.at(scene.room.width / 2.0, scene.room.length / 2.0);
        los_power(&e, det)
    }

    pub fn for_scene(scene: &Scene, snr_db: f64, sigma_tau_ref: f64) -> Result<Self> {
        Ok(Self {
            snr_db,
            p_ref: Self::reference_power(scene)?,
            sigma_tau_ref,
        })
    }

    /// Noise at this SNR. `+inf` dB yields the noiseless limit.
    pub fn noise(&self) -> Result<NoiseModel> {
        if self.snr_db == f64::INFINITY {
            return Ok(NoiseModel::noiseless_limit(NoiseModel::new(self.p_ref, self.sigma_tau_ref)?));
        }
        if !self.snr_db.is_finite() {
            return Err(invalid("snr_db", format!("must be finite or +inf, got {}", self.snr_db)));
        }
        let k = 10f64.powf(-self.snr_db / 20.0);
        NoiseModel::new(self.p_ref * k, self.sigma_tau_ref * k)
    }
}

/// How many features per detector the locator uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureSelection {
    /// LOS power only.
    Los,
    /// LOS and second peak powers.
    LosSpp,
    /// LOS, second peak and their delay.
    All,
}

impl FeatureSelection {
    pub fn from_count(n: usize) -> Result<Self> {
        match n {
            1 => Ok(Self::Los),
            2 => Ok(Self::LosSpp),
            3 => Ok(Self::All),
            _ => Err(invalid("features", format!("feature count must be 1, 2 or 3, got {n}"))),
        }
    }

    pub fn count(self) -> usize {
        match self {
            Self::Los => 1,
            Self::LosSpp => 2,
            Self::All => 3,
        }
    }
}

/// Component mask for one detector. SPP and delay are dropped when the
/// observation found no second peak.
pub(crate) fn component_mask(f: &FeatureVector, sel: FeatureSelection) -> [bool; 3] {
    let n = sel.count();
    [true, n >= 2 && f.spp_valid, n >= 3 && f.spp_valid]
}

fn check_dims(v: &Observation, map: &FingerprintMap, q_used: usize) -> Result<()> {
    if map.cell_count() == 0 {
        return Err(Error::EmptyMap);
    }
    if q_used == 0 {
        return Err(invalid("q_used", "at least one detector is required"));
    }
    for have in [v.detector_count(), map.detector_count()] {
        if have < q_used {
            return Err(Error::DimensionMismatch {
                expected: q_used,
                actual: have,
            });
        }
    }
    Ok(())
}

/// Weighted squared distance between an observation and every map cell,
/// over the first `q_used` detectors.
pub(crate) fn distances(
    v: &Observation,
    map: &FingerprintMap,
    noise: &NoiseModel,
    sel: FeatureSelection,
    q_used: usize,
) -> Result<Vec<f64>> {
    check_dims(v, map, q_used)?;
    let w = noise.weights();
    let terms: Vec<([f64; 3], [f64; 3])> = v.features[..q_used]
        .iter()
        .map(|f| {
            let m = component_mask(f, sel);
            let mut wq = [0.0; 3];
            for c in 0..3 {
                if m[c] {
                    wq[c] = w[c];
                }
            }
            (f.components(), wq)
        })
        .collect();
    Ok((0..map.cell_count())
        .map(|k| {
            let cell = map.cell(k);
            let mut d = 0.0;
            for (q, (obs, wq)) in terms.iter().enumerate() {
                let s = cell[q].components();
                for c in 0..3 {
                    if wq[c] > 0.0 {
                        let diff = obs[c] - s[c];
                        d += wq[c] * diff * diff;
                    }
                }
            }
            d
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Located {
    pub index: usize,
    pub position: Vec3,
}

/// Nearest fingerprint under the covariance-weighted distance; ties go to
/// the lowest cell index.
pub fn locate(
    v: &Observation,
    map: &FingerprintMap,
    noise: &NoiseModel,
    sel: FeatureSelection,
    q_used: usize,
) -> Result<Located> {
    let d = distances(v, map, noise, sel, q_used)?;
    let mut best = 0;
    for (k, &dk) in d.iter().enumerate() {
        if dk < d[best] {
            best = k;
        }
    }
    Ok(Located {
        index: best,
        position: map.center(best),
    })
}

const POSITION_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

/// Per-trial generator, independent of evaluation order.
fn trial_rng(seed: u64, trial: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial.wrapping_mul(2).wrapping_add(purpose));
    rng
}

/// `truth` plus independent zero-mean Gaussian noise on every detected
/// component, using pre-drawn standard normals.
fn perturb(truth: &Observation, noise: &NoiseModel, normals: &[f64]) -> Observation {
    let (s, st) = (noise.sigma(), noise.sigma_tau());
    let features = truth
        .features
        .iter()
        .zip(normals.chunks_exact(3))
        .map(|(f, z)| {
            let mut out = *f;
            out.p_los += s * z[0];
            if f.spp_valid {
                out.p_spp += s * z[1];
                out.delta_tau += st * z[2];
            }
            out
        })
        .collect();
    Observation { features }
}

fn standard_normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Adds noise to a noiseless observation, deterministically in `seed`.
pub fn add_noise(truth: &Observation, noise: &NoiseModel, seed: u64) -> Observation {
    let mut rng = trial_rng(seed, 0, NOISE_STREAM);
    let z = standard_normals(&mut rng, 3 * truth.detector_count());
    perturb(truth, noise, &z)
}

/// Simulated features at `(x, y)` plus measurement noise.
pub fn synthesize_observation(
    sim: &FeatureSimulator,
    x: f64,
    y: f64,
    noise: &NoiseModel,
    seed: u64,
) -> Result<Observation> {
    Ok(add_noise(&sim.observe(x, y)?, noise, seed))
}

/// One Monte Carlo position with its noiseless features.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthSample {
    pub x: f64,
    pub y: f64,
    pub observation: Observation,
}

/// Monte Carlo positions drawn uniformly over the room footprint together
/// with their simulated features. Reusable across noise levels and
/// feature selections so comparisons are paired.
#[derive(Debug, Clone)]
pub struct TruthSet {
    pub seed: u64,
    pub samples: Vec<TruthSample>,
}

impl TruthSet {
    pub fn draw(sim: &FeatureSimulator, trials: usize, seed: u64) -> Result<TruthSet> {
        if trials == 0 {
            return Err(invalid("trials", "at least one trial is required"));
        }
        let room = sim.model.scene().room;
        let samples = (0..trials as u64)
            .into_par_iter()
            .map(|t| {
                let mut rng = trial_rng(seed, t, POSITION_STREAM);
                let x = rng.gen::<f64>() * room.width;
                let y = rng.gen::<f64>() * room.length;
                Ok(TruthSample {
                    x,
                    y,
                    observation: sim.observe(x, y)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TruthSet { seed, samples })
    }

    /// Truths at given positions, e.g. grid centers.
    pub fn at_points(sim: &FeatureSimulator, points: &[(f64, f64)], seed: u64) -> Result<TruthSet> {
        let samples = points
            .par_iter()
            .map(|&(x, y)| {
                Ok(TruthSample {
                    x,
                    y,
                    observation: sim.observe(x, y)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TruthSet { seed, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McResult {
    pub rms: f64,
    /// Standard error of `rms` (delta method on the mean squared error).
    pub stderr: f64,
    pub trials: usize,
}

impl McResult {
    pub(crate) fn from_squared(sq: &[f64]) -> McResult {
        let n = sq.len() as f64;
        let mean = neumaier_sum(sq.iter().copied()) / n;
        let var = if sq.len() > 1 {
            neumaier_sum(sq.iter().map(|s| (s - mean).powi(2))) / (n - 1.0)
        } else {
            0.0
        };
        let rms = mean.sqrt();
        let stderr = if rms > 0.0 { (var / n).sqrt() / (2.0 * rms) } else { 0.0 };
        McResult {
            rms,
            stderr,
            trials: sq.len(),
        }
    }
}

/// Compensated summation; the result does not depend on how the terms were
/// produced, only on their order.
pub(crate) fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Squared positioning error of every truth sample.
pub fn squared_errors(
    truths: &TruthSet,
    map: &FingerprintMap,
    noise: &NoiseModel,
    sel: FeatureSelection,
    q_used: usize,
) -> Result<Vec<f64>> {
    truths
        .samples
        .par_iter()
        .enumerate()
        .map(|(t, s)| {
            let mut rng = trial_rng(truths.seed, t as u64, NOISE_STREAM);
            let z = standard_normals(&mut rng, 3 * s.observation.detector_count());
            let v = perturb(&s.observation, noise, &z);
            let hit = locate(&v, map, noise, sel, q_used)?;
            Ok((s.x - hit.position.x).powi(2) + (s.y - hit.position.y).powi(2))
        })
        .collect()
}

/// RMS positioning error over a prepared truth set.
pub fn rms_error(
    truths: &TruthSet,
    map: &FingerprintMap,
    noise: &NoiseModel,
    sel: FeatureSelection,
    q_used: usize,
) -> Result<McResult> {
    Ok(McResult::from_squared(&squared_errors(truths, map, noise, sel, q_used)?))
}

/// Monte Carlo RMS positioning error with positions uniform over the room.
pub fn rms_error_mc(
    sim: &FeatureSimulator,
    map: &FingerprintMap,
    noise: &NoiseModel,
    sel: FeatureSelection,
    q_used: usize,
    trials: usize,
    seed: u64,
) -> Result<McResult> {
    rms_error(&TruthSet::draw(sim, trials, seed)?, map, noise, sel, q_used)
}
