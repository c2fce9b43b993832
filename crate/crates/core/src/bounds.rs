//! Analytical benchmarks: quantization bound, the two-nearest-centre
//! high-SNR bound, Fisher information and the (quantized) CRLB.

use nalgebra::Matrix2;
use rayon::prelude::*;

use crate::channel::los_power;
use crate::error::{invalid, Error, Result};
use crate::estimator::{component_mask, distances, FeatureSelection, McResult, NoiseModel, TruthSet};
use crate::features::Observation;
use crate::fingerprint::FingerprintMap;
use crate::regression::DetectorSurfaces;
use crate::scene::{Detector, Emitter, Scene};

/// RMS error of snapping a uniform position to the nearest centre of a
/// square grid with spacing `delta`.
pub fn qlb(delta: f64) -> f64 {
    delta / 6f64.sqrt()
}

/// `sqrt(crlb^2 + qlb^2)`.
pub fn qcrlb(crlb: f64, qlb: f64) -> f64 {
    crlb.hypot(qlb)
}

/// Gaussian tail probability `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Outcome of the two-nearest-centre analysis at one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestPair {
    /// Nearest and second-nearest cell indices.
    pub cells: [usize; 2],
    /// Probability of deciding each of the two cells.
    pub eps: [f64; 2],
    /// `sum_j |theta - C_j|^2 eps_j`, square metres.
    pub contribution: f64,
}

/// Whitened, masked component differences `w (a - b)` over `q_used`
/// detectors; the mask follows the observation `v`.
fn whitened_delta(
    v: &Observation,
    a: &[crate::features::FeatureVector],
    b: &[crate::features::FeatureVector],
    noise: &NoiseModel,
    sel: FeatureSelection,
    q_used: usize,
) -> Vec<f64> {
    let w = noise_weights_sqrt(noise);
    let mut out = Vec::with_capacity(3 * q_used);
    for q in 0..q_used {
        let m = component_mask(&v.features[q], sel);
        let (ca, cb) = (a[q].components(), b[q].components());
        for c in 0..3 {
            if m[c] {
                out.push(w[c] * (ca[c] - cb[c]));
            }
        }
    }
    out
}

fn noise_weights_sqrt(noise: &NoiseModel) -> [f64; 3] {
    // Shape weights, which survive the noiseless limit.
    noise.weights().map(f64::sqrt)
}

/// Two-nearest-centre analysis for the noiseless observation `v` taken at
/// `(x, y)`. The decision between the two closest constellation points is
/// treated as a binary hypothesis test; more distant cells are ignored,
/// which makes the bound optimistic at low SNR.
pub fn nn_lower_bound(
    x: f64,
    y: f64,
    v: &Observation,
    map: &FingerprintMap,
    noise: &NoiseModel,
    sel: FeatureSelection,
    q_used: usize,
) -> Result<NearestPair> {
    if map.cell_count() < 2 {
        return Err(invalid("map", "needs at least two cells"));
    }
    let d = distances(v, map, noise, sel, q_used)?;
    let (mut i, mut j) = if d[1] < d[0] { (1, 0) } else { (0, 1) };
    for (k, &dk) in d.iter().enumerate().skip(2) {
        if dk < d[i] {
            j = i;
            i = k;
        } else if dk < d[j] {
            j = k;
        }
    }
    let eps_i = nearest_probability(v, map, noise, sel, q_used, i, j)?;
    let ci = map.center(i);
    let cj = map.center(j);
    let ri = (x - ci.x).powi(2) + (y - ci.y).powi(2);
    let rj = (x - cj.x).powi(2) + (y - cj.y).powi(2);
    Ok(NearestPair {
        cells: [i, j],
        eps: [eps_i, 1.0 - eps_i],
        contribution: ri * eps_i + rj * (1.0 - eps_i),
    })
}

/// Probability of deciding `i` over `j`: `1 - Q(sqrt(D^2 / 2))` with `D`
/// the whitened distance from `v` to the bisecting decision boundary.
fn nearest_probability(
    v: &Observation,
    map: &FingerprintMap,
    noise: &NoiseModel,
    sel: FeatureSelection,
    q_used: usize,
    i: usize,
    j: usize,
) -> Result<f64> {
    let vi = whitened_delta(v, &v.features, map.cell(i), noise, sel, q_used);
    let vj = whitened_delta(v, &v.features, map.cell(j), noise, sel, q_used);
    let sep = whitened_delta(v, map.cell(i), map.cell(j), noise, sel, q_used);
    let norm_sq = |u: &[f64]| u.iter().map(|c| c * c).sum::<f64>();
    let sep_len = norm_sq(&sep).sqrt();
    if sep_len == 0.0 {
        return Err(Error::DegenerateConstellation);
    }
    let dist = (norm_sq(&vj) - norm_sq(&vi)) / (2.0 * sep_len);
    if noise.is_noiseless() {
        return Ok(if dist > 0.0 { 1.0 } else { 0.5 });
    }
    Ok(1.0 - q_function((dist * dist / 2.0).sqrt()))
}

/// Room RMS of the two-nearest-centre bound over a set of positions.
/// Positions whose two nearest fingerprints coincide split evenly.
pub fn lb_rms(
    truths: &TruthSet,
    map: &FingerprintMap,
    noise: &NoiseModel,
    sel: FeatureSelection,
    q_used: usize,
) -> Result<f64> {
    let contrib = truths
        .samples
        .par_iter()
        .map(|s| match nn_lower_bound(s.x, s.y, &s.observation, map, noise, sel, q_used) {
            Ok(p) => Ok(p.contribution),
            Err(Error::DegenerateConstellation) => {
                let d = distances(&s.observation, map, noise, sel, q_used)?;
                let mut order: Vec<usize> = (0..d.len()).collect();
                order.sort_by(|a, b| d[*a].total_cmp(&d[*b]).then(a.cmp(b)));
                let r = |k: usize| {
                    let c = map.center(k);
                    (s.x - c.x).powi(2) + (s.y - c.y).powi(2)
                };
                Ok(0.5 * (r(order[0]) + r(order[1])))
            }
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(McResult::from_squared(&contrib).rms)
}

/// `dP_LOS / d(theta)` in W/m for an upward-facing emitter; zero outside the
/// detector's field of view.
pub fn los_gradient(emitter: &Emitter, detector: &Detector) -> Result<[f64; 2]> {
    let p = los_power(emitter, detector)?;
    if p == 0.0 {
        return Ok([0.0, 0.0]);
    }
    let r = detector.position - emitter.position;
    let d2 = r.norm_sq();
    // P ~ d^-(m+3) with the height fixed, so dP/dtheta_i = -(m+3) P (theta_i - r_i) / d^2.
    let k = -(emitter.lambertian_order + 3.0) * p / d2;
    Ok([k * -r.x, k * -r.y])
}

/// Fisher information `J = H Sigma^-1 H^T` for the 2-D position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fim(pub Matrix2<f64>);

impl Fim {
    pub fn zero() -> Self {
        Fim(Matrix2::zeros())
    }

    fn add_measurement(&mut self, g: [f64; 2], variance: f64) {
        if variance.is_infinite() {
            return;
        }
        let g = nalgebra::Vector2::new(g[0], g[1]);
        self.0 += g * g.transpose() / variance;
    }

    /// `lambda_max / lambda_min` of the symmetric matrix.
    pub fn condition(&self) -> f64 {
        let m = &self.0;
        let tr = m[(0, 0)] + m[(1, 1)];
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let disc = ((tr * tr / 4.0) - det).max(0.0).sqrt();
        let hi = tr / 2.0 + disc;
        let lo = tr / 2.0 - disc;
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }
}

/// Largest condition number treated as invertible.
pub const MAX_CONDITION: f64 = 1e12;

/// Fisher information at `(x, y)` using the first `q_used` detectors.
/// `surfaces[q]` supplies the second-peak power and delay gradients of
/// detector `q`; it is only read when more than one feature is selected.
pub fn fim(
    x: f64,
    y: f64,
    scene: &Scene,
    surfaces: &[DetectorSurfaces],
    noise: &NoiseModel,
    sel: FeatureSelection,
    q_used: usize,
) -> Result<Fim> {
    if q_used == 0 || q_used > scene.detectors.len() {
        return Err(invalid("q_used", format!("must be in 1..={}", scene.detectors.len())));
    }
    if sel != FeatureSelection::Los && surfaces.len() < q_used {
        return Err(Error::DimensionMismatch {
            expected: q_used,
            actual: surfaces.len(),
        });
    }
    let e = scene.emitter.at(x, y);
    let var = noise.sigma().powi(2);
    let var_tau = noise.sigma_tau().powi(2);
    let mut j = Fim::zero();
    for q in 0..q_used {
        j.add_measurement(los_gradient(&e, &scene.detectors[q])?, var);
        if sel.count() >= 2 {
            j.add_measurement(surfaces[q].spp.gradient(x, y)?, var);
        }
        if sel.count() >= 3 {
            j.add_measurement(surfaces[q].delay.gradient(x, y)?, var_tau);
        }
    }
    Ok(j)
}

/// `sqrt(trace(J^-1))`, metres.
pub fn crlb_rms(j: &Fim) -> Result<f64> {
    let condition = j.condition();
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularFim { condition });
    }
    let inv = j.0.try_inverse().ok_or(Error::SingularFim { condition })?;
    Ok((inv[(0, 0)] + inv[(1, 1)]).sqrt())
}

/// `n x n` interior evaluation points, offset from the cell centres so none
/// falls on a diagonal section boundary.
pub fn fim_lattice(scene: &Scene, n: usize) -> Vec<(f64, f64)> {
    let (w, l) = (scene.room.width, scene.room.length);
    let shift = l / (7.0 * n as f64);
    let mut pts = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            pts.push(((i as f64 + 0.5) * w / n as f64, (j as f64 + 0.5) * l / n as f64 + shift));
        }
    }
    pts
}

/// Nudges a point off any section boundary of the given surfaces.
fn off_boundary(x: f64, y: f64, surfaces: &[DetectorSurfaces]) -> (f64, f64) {
    let mut p = (x, y);
    for _ in 0..8 {
        let hit = surfaces
            .iter()
            .any(|s| s.spp.layout.on_boundary(p.0, p.1, 1e-6));
        if !hit {
            break;
        }
        p = (p.0 + 1e-4, p.1 - 0.7e-4);
    }
    p
}

/// Room-average CRLB: RMS of the per-point CRLB over an `n x n` lattice.
pub fn lattice_crlb(
    scene: &Scene,
    surfaces: &[DetectorSurfaces],
    noise: &NoiseModel,
    sel: FeatureSelection,
    q_used: usize,
    n: usize,
) -> Result<f64> {
    let sq = fim_lattice(scene, n)
        .par_iter()
        .map(|&(x, y)| {
            let (x, y) = if sel == FeatureSelection::Los { (x, y) } else { off_boundary(x, y, surfaces) };
            let c = crlb_rms(&fim(x, y, scene, surfaces, noise, sel, q_used)?)?;
            Ok(c * c)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(McResult::from_squared(&sq).rms)
}

/// One row of a bound sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundResult {
    pub crlb_rms: f64,
    pub qlb: f64,
    pub qcrlb: f64,
    pub lb_rms: f64,
}

impl BoundResult {
    pub fn new(crlb_rms: f64, grid_step: f64, lb_rms: f64) -> Self {
        let q = qlb(grid_step);
        Self {
            crlb_rms,
            qlb: q,
            qcrlb: qcrlb(crlb_rms, q),
            lb_rms,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;
    use crate::regression::{PolySurface, SectionLayout, SectionedSurface};
    use crate::scene::{make_grid, Vec3};

    #[test]
    fn quantization_bound() {
        assert!((qlb(0.14) - 0.057155).abs() < 1e-6);
        assert!((qlb(0.10) - 0.040825).abs() < 1e-6);
        assert_eq!(qlb(0.0), 0.0);
        assert_eq!(qcrlb(0.0, 2.0), 2.0);
        assert_eq!(qcrlb(2.0, 0.0), 2.0);
        assert_eq!(qcrlb(3.0, 4.0), 5.0);
    }

    #[test]
    fn q_function_values() {
        assert_eq!(q_function(0.0), 0.5);
        assert!((q_function(1.0) - 0.158655253931457).abs() < 1e-14);
        assert!((q_function(-1.0) - 0.841344746068543).abs() < 1e-14);
        assert!(q_function(40.0) < 1e-300);
    }

    fn toy_map() -> FingerprintMap {
        let grid = make_grid(&Scene::reference().room, 2.5, 0.85).unwrap();
        let fv = |p: f64| FeatureVector::los_only(p);
        FingerprintMap {
            room: [5.0, 5.0, 3.0],
            grid,
            detectors: vec![Vec3::new(1.5, 1.5, 3.0)],
            entries: vec![fv(0.0), fv(2.0), fv(10.0), fv(20.0)],
        }
    }

    fn los_obs(p: f64) -> Observation {
        Observation {
            features: vec![FeatureVector::los_only(p)],
        }
    }

    #[test]
    fn boundary_splits_evenly() {
        let map = toy_map();
        let n = NoiseModel::new(1.0, 1.0).unwrap();
        let r = nn_lower_bound(1.0, 1.0, &los_obs(1.0), &map, &n, FeatureSelection::Los, 1).unwrap();
        assert_eq!(r.eps, [0.5, 0.5]);
        let c0 = map.center(0);
        let c1 = map.center(1);
        let expect = 0.5 * ((1.0 - c0.x).powi(2) + (1.0 - c0.y).powi(2)) + 0.5 * ((1.0 - c1.x).powi(2) + (1.0 - c1.y).powi(2));
        assert!((r.contribution - expect).abs() < 1e-12);
    }

    #[test]
    fn interior_point_probability() {
        let map = toy_map();
        // Distance 0.5 from cell 0, boundary at 1: D = 0.5 / sigma.
        let sigma = 0.25;
        let n = NoiseModel::new(sigma, 1.0).unwrap();
        let r = nn_lower_bound(1.0, 1.0, &los_obs(0.5), &map, &n, FeatureSelection::Los, 1).unwrap();
        assert_eq!(r.cells, [0, 1]);
        let d = 0.5 / sigma;
        assert!((r.eps[0] - (1.0 - q_function(d / 2f64.sqrt()))).abs() < 1e-15);
        let tiny = NoiseModel::new(1e-6, 1.0).unwrap();
        let r = nn_lower_bound(1.0, 1.0, &los_obs(0.5), &map, &tiny, FeatureSelection::Los, 1).unwrap();
        assert_eq!(r.eps, [1.0, 0.0]);
    }

    #[test]
    fn degenerate_pair_is_reported() {
        let mut map = toy_map();
        map.entries[1] = map.entries[0];
        let n = NoiseModel::new(1.0, 1.0).unwrap();
        assert_eq!(
            nn_lower_bound(1.0, 1.0, &los_obs(0.1), &map, &n, FeatureSelection::Los, 1),
            Err(Error::DegenerateConstellation)
        );
    }

    fn scene() -> Scene {
        Scene::reference()
    }

    #[test]
    fn los_gradient_matches_finite_differences() {
        let s = scene();
        let h = 1e-6;
        for &(x, y) in &[(0.3, 0.4), (2.5, 2.5), (4.1, 0.9), (1.0, 3.7)] {
            for det in &s.detectors {
                let g = los_gradient(&s.emitter.at(x, y), det).unwrap();
                let p = |x: f64, y: f64| los_power(&s.emitter.at(x, y), det).unwrap();
                let fd = [(p(x + h, y) - p(x - h, y)) / (2.0 * h), (p(x, y + h) - p(x, y - h)) / (2.0 * h)];
                for i in 0..2 {
                    assert!((g[i] - fd[i]).abs() <= 1e-6 * g[i].abs().max(1e-12), "{i}: {} vs {}", g[i], fd[i]);
                }
            }
        }
    }

    #[test]
    fn los_gradient_points_to_nadir() {
        let s = scene();
        let d = &s.detectors[0];
        assert_eq!(los_gradient(&s.emitter.at(1.5, 1.5), d).unwrap(), [0.0, 0.0]);
        let g = los_gradient(&s.emitter.at(3.0, 2.0), d).unwrap();
        assert!(g[0] < 0.0 && g[1] < 0.0);
        assert!((g[0] / g[1] - 3.0).abs() < 1e-12);
    }

    fn planar_surfaces(q: usize) -> Vec<DetectorSurfaces> {
        // Synthetic smooth surfaces, different per detector.
        (0..q)
            .map(|k| {
                let mut a = [[0.0; 5]; 5];
                a[0][0] = 1e-9;
                a[1][0] = 2e-10 * (k as f64 + 1.0);
                a[0][1] = -1e-10;
                a[2][1] = 3e-12;
                let mut t = [[0.0; 5]; 5];
                t[0][0] = 5e-9;
                t[1][0] = -1e-9;
                t[0][1] = 2e-9 * (k as f64 - 1.5);
                t[1][1] = 1e-10;
                let layout = SectionLayout::Whole { width: 5.0, length: 5.0 };
                DetectorSurfaces {
                    spp: SectionedSurface {
                        layout,
                        sections: vec![PolySurface { coeffs: a }],
                    },
                    delay: SectionedSurface {
                        layout,
                        sections: vec![PolySurface { coeffs: t }],
                    },
                }
            })
            .collect()
    }

    #[test]
    fn fim_matches_finite_difference_assembly() {
        let s = scene();
        let surf = planar_surfaces(4);
        let noise = NoiseModel::new(1e-9, 1e-9).unwrap();
        let (x, y) = (1.1, 3.3);
        let j = fim(x, y, &s, &surf, &noise, FeatureSelection::All, 4).unwrap();
        let h = 1e-5;
        let mut oracle = Matrix2::zeros();
        for q in 0..4 {
            let funcs: [(Box<dyn Fn(f64, f64) -> f64>, f64); 3] = [
                (Box::new(|x, y| los_power(&s.emitter.at(x, y), &s.detectors[q]).unwrap()), 1e-18),
                (Box::new(|x, y| surf[q].spp.eval(x, y).unwrap()), 1e-18),
                (Box::new(|x, y| surf[q].delay.eval(x, y).unwrap()), 1e-18),
            ];
            for (f, var) in &funcs {
                let g = nalgebra::Vector2::new(
                    (f(x + h, y) - f(x - h, y)) / (2.0 * h),
                    (f(x, y + h) - f(x, y - h)) / (2.0 * h),
                );
                oracle += g * g.transpose() / *var;
            }
        }
        assert!((j.0 - oracle).norm() < 1e-3 * oracle.norm());
    }

    #[test]
    fn fim_scaling_and_singularity() {
        let s = scene();
        let surf = planar_surfaces(4);
        let n1 = NoiseModel::new(1e-9, 1e-9).unwrap();
        let n2 = n1.scaled(2.0).unwrap();
        let j1 = fim(2.0, 1.0, &s, &surf, &n1, FeatureSelection::All, 4).unwrap();
        let j2 = fim(2.0, 1.0, &s, &surf, &n2, FeatureSelection::All, 4).unwrap();
        assert!((j1.0 / 4.0 - j2.0).norm() < 1e-12 * j1.0.norm());
        let c1 = crlb_rms(&j1).unwrap();
        let c10 = crlb_rms(&fim(2.0, 1.0, &s, &surf, &n1.scaled(10.0).unwrap(), FeatureSelection::All, 4).unwrap()).unwrap();
        assert!((c10 / c1 - 10.0).abs() < 1e-9);
        let nadir = fim(1.5, 1.5, &s, &surf, &n1, FeatureSelection::Los, 1).unwrap();
        assert_eq!(nadir.0, Matrix2::zeros());
        assert!(matches!(crlb_rms(&nadir), Err(Error::SingularFim { .. })));
        // One scalar measurement has rank one.
        let rank1 = fim(3.0, 2.0, &s, &surf, &n1, FeatureSelection::Los, 1).unwrap();
        assert!(matches!(crlb_rms(&rank1), Err(Error::SingularFim { .. })));
    }

    #[test]
    fn crlb_of_diagonal() {
        let j = Fim(Matrix2::new(1.0 / 4.0, 0.0, 0.0, 1.0 / 9.0));
        assert!((crlb_rms(&j).unwrap() - 13f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn more_information_never_hurts() {
        let s = scene();
        let surf = planar_surfaces(4);
        let n = NoiseModel::new(1e-9, 1e-9).unwrap();
        for &(x, y) in &[(0.7, 2.2), (3.9, 4.4), (2.6, 0.3)] {
            let mut last = f64::INFINITY;
            for q in 2..=4 {
                let c = crlb_rms(&fim(x, y, &s, &surf, &n, FeatureSelection::All, q).unwrap()).unwrap();
                assert!(c <= last * (1.0 + 1e-12));
                last = c;
            }
            let mut last = f64::INFINITY;
            for sel in [FeatureSelection::Los, FeatureSelection::LosSpp, FeatureSelection::All] {
                let c = crlb_rms(&fim(x, y, &s, &surf, &n, sel, 2).unwrap()).unwrap();
                assert!(c <= last * (1.0 + 1e-12));
                last = c;
            }
        }
    }

    #[test]
    fn lattice_avoids_diagonal() {
        let pts = fim_lattice(&scene(), 20);
        assert_eq!(pts.len(), 400);
        assert!(pts.iter().all(|&(x, y)| (x - y).abs() > 1e-3 && (x - (5.0 - y)).abs() > 1e-3));
        assert!(pts.iter().all(|&(x, y)| x > 0.0 && x < 5.0 && y > 0.0 && y < 5.0));
    }

    #[test]
    fn bound_result_ordering() {
        let b = BoundResult::new(0.03, 0.14, 0.06);
        assert!(b.qcrlb >= b.crlb_rms && b.qcrlb >= b.qlb);
    }
}
