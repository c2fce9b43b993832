//! Piecewise bivariate quartic surfaces for the second-peak power and delay
//! as functions of emitter position.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::features::FeatureVector;
use crate::scene::{Room, Vec3};

/// Polynomial degree in each coordinate.
pub const DEGREE: usize = 4;
const N: usize = DEGREE + 1;

/// Fewest samples accepted for one section fit.
pub const MIN_SECTION_SAMPLES: usize = N * N;

/// Points closer than this to a section boundary have no gradient.
pub const BOUNDARY_TOLERANCE: f64 = 1e-9;

/// `f(x, y) = sum_ij coeffs[i][j] x^i y^j = A(x)^T U A(y)` with
/// `A(t) = [1, t, t^2, t^3, t^4]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolySurface {
    pub coeffs: [[f64; N]; N],
}

fn powers(t: f64) -> [f64; N] {
    let mut a = [1.0; N];
    for i in 1..N {
        a[i] = a[i - 1] * t;
    }
    a
}

fn derivative_powers(t: f64) -> [f64; N] {
    let a = powers(t);
    let mut d = [0.0; N];
    for i in 1..N {
        d[i] = i as f64 * a[i - 1];
    }
    d
}

fn bilinear(u: &[[f64; N]; N], a: &[f64; N], b: &[f64; N]) -> f64 {
    let mut s = 0.0;
    for i in 0..N {
        for j in 0..N {
            s += a[i] * u[i][j] * b[j];
        }
    }
    s
}

impl PolySurface {
    pub fn constant(c: f64) -> Self {
        let mut coeffs = [[0.0; N]; N];
        coeffs[0][0] = c;
        Self { coeffs }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        bilinear(&self.coeffs, &powers(x), &powers(y))
    }

    /// `[df/dx, df/dy]`.
    pub fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        [
            bilinear(&self.coeffs, &derivative_powers(x), &powers(y)),
            bilinear(&self.coeffs, &powers(x), &derivative_powers(y)),
        ]
    }
}

/// Least-squares quartic through `(x, y, value)` samples.
pub fn fit_poly_surface(samples: &[(f64, f64, f64)]) -> Result<PolySurface> {
    fit_section(samples, 0)
}

fn fit_section(samples: &[(f64, f64, f64)], section: usize) -> Result<PolySurface> {
    let rank_error = || Error::RankDeficient {
        section,
        samples: samples.len(),
    };
    if samples.len() < MIN_SECTION_SAMPLES {
        return Err(rank_error());
    }
    let mut a = DMatrix::from_fn(samples.len(), N * N, |r, c| {
        let (x, y, _) = samples[r];
        x.powi((c / N) as i32) * y.powi((c % N) as i32)
    });
    // Column equilibration keeps the monomials x^4 y^4 and 1 comparable.
    let norms: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    if norms.iter().any(|&n| n == 0.0 || !n.is_finite()) {
        return Err(rank_error());
    }
    for (mut col, &n) in a.column_iter_mut().zip(&norms) {
        col /= n;
    }
    let b = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.2));
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-12) {
        return Err(rank_error());
    }
    let sol = svd.solve(&b, 0.0).map_err(|_| rank_error())?;
    let mut coeffs = [[0.0; N]; N];
    for c in 0..N * N {
        coeffs[c / N][c % N] = sol[c] / norms[c];
    }
    Ok(PolySurface { coeffs })
}

/// Partition of the room footprint used for one detector.
///
/// `Whole` is a single section. `Quadrants` splits by which wall produces the
/// first diffuse arrival: in coordinates `(u, v)` mirrored so the detector
/// sits in the lower-left quarter, at `(a, b)`, the walls `u = 0` and
/// `v = 0` tie along `b v = a u`, and the walls `u = 0` and `v = L` tie along
/// `v = L - a u / (L - b)` (symmetrically `u = W - b v / (W - a)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SectionLayout {
    Whole { width: f64, length: f64 },
    Quadrants(QuadrantLayout),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrantLayout {
    pub width: f64,
    pub length: f64,
    /// Detector position in the mirrored frame.
    pub a: f64,
    pub b: f64,
    pub mirror_x: bool,
    pub mirror_y: bool,
}

impl QuadrantLayout {
    fn frame(&self, x: f64, y: f64) -> (f64, f64) {
        let u = if self.mirror_x { self.width - x } else { x };
        let v = if self.mirror_y { self.length - y } else { y };
        (u, v)
    }

    /// Signed boundary functions; sections are decided by their signs.
    fn lines(&self, u: f64, v: f64) -> (f64, f64, f64) {
        let diag = self.b * v - self.a * u;
        let upper = v - (self.length - self.a * u / (self.length - self.b));
        let right = u - (self.width - self.b * v / (self.width - self.a));
        (diag, upper, right)
    }
}

impl SectionLayout {
    /// Quadrant layout for a detector at `pos`, mirrored toward the origin.
    pub fn for_detector(room: &Room, pos: Vec3) -> Result<SectionLayout> {
        let (w, l) = (room.width, room.length);
        let mirror_x = pos.x > w / 2.0;
        let mirror_y = pos.y > l / 2.0;
        let a = if mirror_x { w - pos.x } else { pos.x };
        let b = if mirror_y { l - pos.y } else { pos.y };
        if !(a > 0.0 && b > 0.0 && a < w && b < l) {
            return Err(invalid("detector", format!("({}, {}) must be strictly inside the ceiling", pos.x, pos.y)));
        }
        Ok(SectionLayout::Quadrants(QuadrantLayout {
            width: w,
            length: l,
            a,
            b,
            mirror_x,
            mirror_y,
        }))
    }

    pub fn section_count(&self) -> usize {
        match self {
            SectionLayout::Whole { .. } => 1,
            SectionLayout::Quadrants(_) => 4,
        }
    }

    fn inside(&self, x: f64, y: f64) -> bool {
        let (w, l) = match self {
            SectionLayout::Whole { width, length } => (*width, *length),
            SectionLayout::Quadrants(q) => (q.width, q.length),
        };
        (0.0..=w).contains(&x) && (0.0..=l).contains(&y)
    }

    /// Section containing `(x, y)`, checked in order; `None` outside the
    /// footprint. Sections 0 and 1 lie on the side of the diagonal away from
    /// wall `v = 0`, 0 being the part nearer wall `v = L`; 2 and 3 mirror them.
    pub fn section_of(&self, x: f64, y: f64) -> Option<usize> {
        if !self.inside(x, y) {
            return None;
        }
        match self {
            SectionLayout::Whole { .. } => Some(0),
            SectionLayout::Quadrants(q) => {
                let (u, v) = q.frame(x, y);
                let (diag, upper, right) = q.lines(u, v);
                Some(match (diag > 0.0, upper > 0.0, right > 0.0) {
                    (true, true, _) => 0,
                    (true, false, _) => 1,
                    (false, _, true) => 2,
                    (false, _, false) => 3,
                })
            }
        }
    }

    /// Whether `(x, y)` lies within `tol` of the boundary between two
    /// sections.
    pub fn on_boundary(&self, x: f64, y: f64, tol: f64) -> bool {
        match self {
            SectionLayout::Whole { .. } => false,
            SectionLayout::Quadrants(q) => {
                let (u, v) = q.frame(x, y);
                let (diag, upper, right) = q.lines(u, v);
                let diag_dist = diag.abs() / q.a.hypot(q.b);
                let upper_dist = upper.abs() / (1.0 + (q.a / (q.length - q.b)).powi(2)).sqrt();
                let right_dist = right.abs() / (1.0 + (q.b / (q.width - q.a)).powi(2)).sqrt();
                diag_dist < tol || (diag > 0.0 && upper_dist < tol) || (diag <= 0.0 && right_dist < tol)
            }
        }
    }
}

/// One polynomial per section.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionedSurface {
    pub layout: SectionLayout,
    pub sections: Vec<PolySurface>,
}

impl SectionedSurface {
    fn section(&self, x: f64, y: f64) -> Result<usize> {
        self.layout.section_of(x, y).ok_or(Error::OutsideSections { x, y })
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        Ok(self.sections[self.section(x, y)?].eval(x, y))
    }

    /// Gradient of the section polynomial; undefined on section boundaries.
    pub fn gradient(&self, x: f64, y: f64) -> Result<[f64; 2]> {
        let s = self.section(x, y)?;
        if self.layout.on_boundary(x, y, BOUNDARY_TOLERANCE) {
            return Err(Error::OnSectionBoundary { x, y });
        }
        Ok(self.sections[s].gradient(x, y))
    }
}

/// Fitted second-peak power (watts) and delay (seconds) surfaces of one
/// detector.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSurfaces {
    pub spp: SectionedSurface,
    pub delay: SectionedSurface,
}

/// One simulated feature sample of one detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSample {
    pub x: f64,
    pub y: f64,
    pub features: FeatureVector,
}

/// Fits both surfaces section by section. Samples without a second peak
/// are skipped; a section with fewer than 25 usable samples, or whose design
/// is singular, fails with `RankDeficient`.
pub fn fit_surfaces(samples: &[FeatureSample], layout: SectionLayout) -> Result<DetectorSurfaces> {
    let mut spp = Vec::new();
    let mut delay = Vec::new();
    for s in 0..layout.section_count() {
        let mut ps = Vec::new();
        let mut ds = Vec::new();
        for f in samples {
            if f.features.spp_valid && layout.section_of(f.x, f.y) == Some(s) {
                ps.push((f.x, f.y, f.features.p_spp));
                ds.push((f.x, f.y, f.features.delta_tau));
            }
        }
        spp.push(fit_section(&ps, s)?);
        delay.push(fit_section(&ds, s)?);
    }
    Ok(DetectorSurfaces {
        spp: SectionedSurface {
            layout,
            sections: spp,
        },
        delay: SectionedSurface { layout, sections: delay },
    })
}

/// Relative RMS residual `||fit - data|| / ||data||` per section, over
/// samples with a second peak.
pub fn relative_residuals(
    surface: &SectionedSurface,
    samples: &[FeatureSample],
    value: impl Fn(&FeatureVector) -> f64,
) -> Vec<f64> {
    let n = surface.layout.section_count();
    let mut err = vec![0.0; n];
    let mut norm = vec![0.0; n];
    for s in samples.iter().filter(|s| s.features.spp_valid) {
        if let Some(k) = surface.layout.section_of(s.x, s.y) {
            let v = value(&s.features);
            err[k] += (surface.sections[k].eval(s.x, s.y) - v).powi(2);
            norm[k] += v * v;
        }
    }
    err.iter().zip(&norm).map(|(e, n)| (e / n).sqrt()).collect()
}

/// Writes `feature,detector,section,i,j,coefficient` rows; powers in mW,
/// delays in ns, coordinates in metres. Detectors and sections are 0-based.
pub fn write_coefficients<W: Write>(surfaces: &[DetectorSurfaces], mut out: W) -> Result<()> {
    writeln!(out, "feature,detector,section,i,j,coefficient")?;
    for (q, d) in surfaces.iter().enumerate() {
        for (name, surface, unit) in [("p_spp_mW", &d.spp, 1e3), ("delta_tau_ns", &d.delay, 1e9)] {
            for (s, poly) in surface.sections.iter().enumerate() {
                for i in 0..N {
                    for j in 0..N {
                        writeln!(out, "{name},{q},{s},{i},{j},{:.12e}", poly.coeffs[i][j] * unit)?;
                    }
                }
            }
        }
    }
    Ok(())
}
