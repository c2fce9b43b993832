//! Room geometry, the uplink emitter, ceiling photodetectors and the
//! fingerprinting grid.
//!
//! Coordinates are meters with the origin at a floor corner, `x` along the
//! room width, `y` along its length and `z` up. The emitter faces straight up
//! and every detector faces straight down; tilted devices are rejected.

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{invalid, Error, Result};

const ORIENTATION_TOL: f64 = 1e-12;
const PLANE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const UP: Vec3 = Vec3::new(0.0, 0.0, 1.0);
    pub const DOWN: Vec3 = Vec3::new(0.0, 0.0, -1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// The six reflecting planes of a rectangular room.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Surface {
    /// Wall at `x = 0`.
    WallXMin,
    /// Wall at `x = width`.
    WallXMax,
    /// Wall at `y = 0`.
    WallYMin,
    /// Wall at `y = length`.
    WallYMax,
    Floor,
    Ceiling,
}

impl Surface {
    pub const ALL: [Surface; 6] = [
        Surface::WallXMin,
        Surface::WallXMax,
        Surface::WallYMin,
        Surface::WallYMax,
        Surface::Floor,
        Surface::Ceiling,
    ];

    /// Unit normal pointing into the room.
    pub fn inward_normal(self) -> Vec3 {
        match self {
            Surface::WallXMin => Vec3::new(1.0, 0.0, 0.0),
            Surface::WallXMax => Vec3::new(-1.0, 0.0, 0.0),
            Surface::WallYMin => Vec3::new(0.0, 1.0, 0.0),
            Surface::WallYMax => Vec3::new(0.0, -1.0, 0.0),
            Surface::Floor => Vec3::UP,
            Surface::Ceiling => Vec3::DOWN,
        }
    }
}

/// Per-surface diffuse reflectance. Walls share one coefficient; floor and
/// ceiling default to the wall value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reflectance {
    pub walls: f64,
    pub floor: f64,
    pub ceiling: f64,
}

impl Reflectance {
    pub fn uniform(rho: f64) -> Self {
        Self {
            walls: rho,
            floor: rho,
            ceiling: rho,
        }
    }

    pub fn of(&self, surface: Surface) -> f64 {
        match surface {
            Surface::Floor => self.floor,
            Surface::Ceiling => self.ceiling,
            _ => self.walls,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Room {
    pub width: f64,
    pub length: f64,
    pub height: f64,
    pub reflectance: Reflectance,
    /// Edge of the square reflecting elements used for first-bounce tracing.
    pub element_size: f64,
}

impl Room {
    pub fn contains(&self, p: Vec3) -> bool {
        p.is_finite()
            && (0.0..=self.width).contains(&p.x)
            && (0.0..=self.length).contains(&p.y)
            && (0.0..=self.height).contains(&p.z)
    }

    pub fn footprint_contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width).contains(&x) && (0.0..=self.length).contains(&y)
    }

    /// Total inner surface area, `2(wl + wh + lh)`.
    pub fn surface_area(&self) -> f64 {
        2.0 * (self.width * self.length + self.width * self.height + self.length * self.height)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("width", self.width),
            ("length", self.length),
            ("height", self.height),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidScene(format!("room {name} must be positive, got {v}")));
            }
        }
        for s in Surface::ALL {
            let rho = self.reflectance.of(s);
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::InvalidScene(format!(
                    "reflectance of {s:?} must lie in [0, 1], got {rho}"
                )));
            }
        }
        let min_dim = self.width.min(self.length).min(self.height);
        if !(self.element_size > 0.0 && self.element_size <= min_dim) {
            return Err(Error::InvalidScene(format!(
                "element size must lie in (0, {min_dim}], got {}",
                self.element_size
            )));
        }
        Ok(())
    }
}

/// Upward-facing Lambertian infrared LED carried by the user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emitter {
    pub position: Vec3,
    pub lambertian_order: f64,
    /// Transmitted optical power in watts.
    pub power: f64,
    pub orientation: Vec3,
}

impl Emitter {
    /// Same emitter moved to `(x, y)` at its fixed height.
    pub fn at(&self, x: f64, y: f64) -> Emitter {
        Emitter {
            position: Vec3::new(x, y, self.position.z),
            ..*self
        }
    }

    pub fn height(&self) -> f64 {
        self.position.z
    }
}

/// Downward-facing photodetector on the ceiling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detector {
    pub position: Vec3,
    /// Active area in square meters.
    pub area: f64,
    /// Field-of-view half angle in radians.
    pub fov_half_angle: f64,
    pub orientation: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub room: Room,
    /// Emitter parameters; its `(x, y)` is a placeholder moved per evaluation.
    pub emitter: Emitter,
    pub detectors: Vec<Detector>,
}

impl Scene {
    /// The parameter set of the reference 5 x 5 x 3 m room with four ceiling
    /// photodetectors.
    pub fn reference() -> Scene {
        let detector = |x: f64, y: f64| Detector {
            position: Vec3::new(x, y, 3.0),
            area: 1e-4,
            fov_half_angle: 70f64.to_radians(),
            orientation: Vec3::DOWN,
        };
        Scene {
            room: Room {
                width: 5.0,
                length: 5.0,
                height: 3.0,
                reflectance: Reflectance::uniform(0.8),
                element_size: 0.02,
            },
            emitter: Emitter {
                position: Vec3::new(2.5, 2.5, 0.85),
                lambertian_order: 1.0,
                power: 10e-3,
                orientation: Vec3::UP,
            },
            detectors: vec![
                detector(1.5, 1.5),
                detector(3.5, 1.5),
                detector(1.5, 3.5),
                detector(3.5, 3.5),
            ],
        }
    }

    /// Copy of the scene keeping only the first `q` detectors.
    pub fn with_detectors(&self, q: usize) -> Result<Scene> {
        if q == 0 || q > self.detectors.len() {
            return Err(invalid(
                "detectors",
                format!("requested {q} of {} detectors", self.detectors.len()),
            ));
        }
        Ok(Scene {
            detectors: self.detectors[..q].to_vec(),
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        self.validate_emitter(&self.emitter)?;
        if self.detectors.is_empty() {
            return Err(Error::InvalidScene("at least one detector is required".into()));
        }
        for (q, d) in self.detectors.iter().enumerate() {
            let fail = |msg: String| Err(Error::InvalidScene(format!("detector {}: {msg}", q + 1)));
            if !(d.area.is_finite() && d.area > 0.0) {
                return fail(format!("area must be positive, got {}", d.area));
            }
            if !(d.fov_half_angle > 0.0 && d.fov_half_angle <= std::f64::consts::FRAC_PI_2) {
                return fail(format!("FOV half angle must lie in (0, pi/2], got {}", d.fov_half_angle));
            }
            if (d.orientation - Vec3::DOWN).norm() > ORIENTATION_TOL {
                return fail("must face straight down".into());
            }
            if !self.room.contains(d.position) {
                return fail(format!("position {:?} outside the room", d.position));
            }
            if (d.position.z - self.room.height).abs() > PLANE_TOL {
                return fail(format!("must sit on the ceiling plane z = {}", self.room.height));
            }
            if d.position.z <= self.emitter.position.z {
                return fail("lies below the emitter plane".into());
            }
        }
        Ok(())
    }

    /// Checks an emitter against the room, e.g. before tracing it at a new position.
    pub fn validate_emitter(&self, e: &Emitter) -> Result<()> {
        if !(e.lambertian_order.is_finite() && e.lambertian_order >= 1.0) {
            return Err(Error::InvalidScene(format!(
                "Lambertian order must be >= 1, got {}",
                e.lambertian_order
            )));
        }
        if !(e.power.is_finite() && e.power > 0.0) {
            return Err(Error::InvalidScene(format!("transmit power must be positive, got {}", e.power)));
        }
        if (e.orientation - Vec3::UP).norm() > ORIENTATION_TOL {
            return Err(Error::InvalidScene("emitter must face straight up".into()));
        }
        if !self.room.contains(e.position) {
            return Err(Error::InvalidScene(format!("emitter position {:?} outside the room", e.position)));
        }
        Ok(())
    }
}

/// Returns the scene unchanged when every invariant holds.
pub fn validate_scene(scene: Scene) -> Result<Scene> {
    scene.validate()?;
    Ok(scene)
}

/// Square fingerprinting grid over the room footprint at a fixed height.
///
/// Cell `k = j * n_cols + i` is centered at `((i + 1/2) step, (j + 1/2) step)`.
/// Cells that would be clipped by the far walls are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub step: f64,
    pub n_cols: usize,
    pub n_rows: usize,
    pub z: f64,
    pub centers: Vec<Vec3>,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.n_cols + col
    }
}

pub fn make_grid(room: &Room, step: f64, z: f64) -> Result<Grid> {
    if !(step.is_finite() && step > 0.0) {
        return Err(invalid("step", format!("must be positive, got {step}")));
    }
    if step > room.width.min(room.length) {
        return Err(invalid("step", format!("{step} exceeds the room footprint")));
    }
    if !(0.0..=room.height).contains(&z) {
        return Err(invalid("z", format!("{z} outside the room height")));
    }
    let n_cols = (room.width / step + 1e-9).floor() as usize;
    let n_rows = (room.length / step + 1e-9).floor() as usize;
    let mut centers = Vec::with_capacity(n_cols * n_rows);
    for j in 0..n_rows {
        for i in 0..n_cols {
            centers.push(Vec3::new(
                (i as f64 + 0.5) * step,
                (j as f64 + 0.5) * step,
                z,
            ));
        }
    }
    Ok(Grid {
        step,
        n_cols,
        n_rows,
        z,
        centers,
    })
}

/// A flat square (or edge-clipped rectangular) patch of a room surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element {
    pub center: Vec3,
    pub normal: Vec3,
    pub area: f64,
    pub rho: f64,
    pub surface: Surface,
}

/// Split a span into cells of `size`, clipping the last one at the edge.
fn spans(extent: f64, size: f64) -> Vec<(f64, f64)> {
    let n = (extent / size - 1e-9).ceil().max(1.0) as usize;
    (0..n)
        .map(|i| {
            let lo = i as f64 * size;
            let hi = (lo + size).min(extent);
            (0.5 * (lo + hi), hi - lo)
        })
        .collect()
}

/// Tiles all four walls, the floor and the ceiling with reflecting elements.
pub fn partition_surfaces(room: &Room, element_size: f64) -> Result<Vec<Element>> {
    if !(element_size.is_finite() && element_size > 0.0) {
        return Err(invalid("element_size", format!("must be positive, got {element_size}")));
    }
    let (w, l, h) = (room.width, room.length, room.height);
    let xs = spans(w, element_size);
    let ys = spans(l, element_size);
    let zs = spans(h, element_size);

    let mut out = Vec::with_capacity(2 * (xs.len() * ys.len() + xs.len() * zs.len() + ys.len() * zs.len()));
    for surface in Surface::ALL {
        let normal = surface.inward_normal();
        let rho = room.reflectance.of(surface);
        let mut push = |center: Vec3, area: f64| {
            out.push(Element {
                center,
                normal,
                area,
                rho,
                surface,
            })
        };
        match surface {
            Surface::WallXMin | Surface::WallXMax => {
                let x = if surface == Surface::WallXMin { 0.0 } else { w };
                for &(z, dz) in &zs {
                    for &(y, dy) in &ys {
                        push(Vec3::new(x, y, z), dy * dz);
                    }
                }
            }
            Surface::WallYMin | Surface::WallYMax => {
                let y = if surface == Surface::WallYMin { 0.0 } else { l };
                for &(z, dz) in &zs {
                    for &(x, dx) in &xs {
                        push(Vec3::new(x, y, z), dx * dz);
                    }
                }
            }
            Surface::Floor | Surface::Ceiling => {
                let z = if surface == Surface::Floor { 0.0 } else { h };
                for &(y, dy) in &ys {
                    for &(x, dx) in &xs {
                        push(Vec3::new(x, y, z), dx * dy);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_scene_is_valid() {
        let s = Scene::reference();
        assert_eq!(validate_scene(s.clone()).unwrap(), s);
    }

    #[test]
    fn rejects_reflectance_above_one() {
        let mut s = Scene::reference();
        s.room.reflectance = Reflectance::uniform(1.2);
        assert!(matches!(s.validate(), Err(Error::InvalidScene(_))));
    }

    #[test]
    fn rejects_emitter_outside_room() {
        let mut s = Scene::reference();
        s.emitter.position = Vec3::new(6.0, 1.0, 0.85);
        assert!(matches!(s.validate(), Err(Error::InvalidScene(_))));
    }

    #[test]
    fn rejects_tilted_devices_and_low_detectors() {
        let mut s = Scene::reference();
        s.emitter.orientation = Vec3::new(0.0, 0.6, 0.8);
        assert!(s.validate().is_err());

        let mut s = Scene::reference();
        s.detectors[2].position.z = 2.0;
        assert!(s.validate().is_err());

        let mut s = Scene::reference();
        s.emitter.position.z = 3.0;
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("below the emitter plane"), "{err}");
    }

    #[test]
    fn grid_quarter_cells() {
        let g = make_grid(&Scene::reference().room, 2.5, 0.85).unwrap();
        let xy: Vec<(f64, f64)> = g.centers.iter().map(|c| (c.x, c.y)).collect();
        assert_eq!(xy, vec![(1.25, 1.25), (3.75, 1.25), (1.25, 3.75), (3.75, 3.75)]);
    }

    #[test]
    fn grid_fourteen_centimeters() {
        let g = make_grid(&Scene::reference().room, 0.14, 0.85).unwrap();
        // floor(5 / 0.14) = 35 by enumeration: 35 * 0.14 = 4.9 <= 5 < 36 * 0.14 = 5.04
        assert_eq!((g.n_cols, g.n_rows, g.len()), (35, 35, 1225));
        assert!(g.centers.iter().all(|c| c.x > 0.0 && c.x < 5.0 && c.y > 0.0 && c.y < 5.0));
    }

    #[test]
    fn grid_rejects_bad_step() {
        let room = Scene::reference().room;
        assert!(make_grid(&room, 0.0, 0.85).is_err());
        assert!(make_grid(&room, -1.0, 0.85).is_err());
        assert!(make_grid(&room, 6.0, 0.85).is_err());
    }

    #[test]
    fn partition_counts_and_normals() {
        let room = Scene::reference().room;
        let coarse = partition_surfaces(&room, 1.0).unwrap();
        assert_eq!(coarse.len(), 110);
        let fine = partition_surfaces(&room, 0.02).unwrap();
        assert_eq!(fine.len(), 275_000);

        let wall = coarse.iter().find(|e| e.surface == Surface::WallXMin).unwrap();
        assert_eq!(wall.normal, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(wall.center.x, 0.0);
    }

    #[test]
    fn partition_clips_at_edges() {
        let room = Scene::reference().room;
        let els = partition_surfaces(&room, 0.7).unwrap();
        let total: f64 = els.iter().map(|e| e.area).sum();
        assert!((total - room.surface_area()).abs() < 1e-9 * room.surface_area());
        assert!(els.iter().all(|e| e.area <= 0.49 + 1e-12));
    }
}
