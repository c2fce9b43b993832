//! Key-value configuration: `section.key = value` lines, `#` comments.
//! Keys missing from a file take their value from the bundled default.

use std::collections::BTreeMap;
use std::path::Path;

use crate::channel::{ChannelParams, SystemFilter};
use crate::error::{invalid, Error, Result};
use crate::features::FeatureParams;
use crate::scene::{validate_scene, Detector, Emitter, Reflectance, Room, Scene, Vec3};

/// The bundled default configuration text.
pub const DEFAULT_CONFIG: &str = include_str!("../config/default.conf");

/// Estimator and Monte Carlo settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSettings {
    /// Delay noise at 0 dB SNR, seconds.
    pub sigma_tau_ref: f64,
    pub grid_step: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Axes and fixed parameters of the sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub snr_db: Vec<f64>,
    pub detectors: Vec<usize>,
    pub features: Vec<usize>,
    pub grid_steps: Vec<f64>,
    pub grid_snr_db: f64,
    /// LED bandwidths in Hz; infinity is an ideal LED.
    pub bandwidths: Vec<f64>,
    pub bw_snr_db: f64,
    pub bw_features: Vec<usize>,
    pub bw_map_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub scene: Scene,
    pub channel: ChannelParams,
    pub filter: SystemFilter,
    pub features: FeatureParams,
    pub estimator: EstimatorSettings,
    /// Sample spacing of the regression fits, metres.
    pub regression_step: f64,
    /// Points per side of the CRLB evaluation lattice.
    pub bound_lattice: usize,
    pub sweep: SweepSettings,
}

impl Default for Config {
    fn default() -> Self {
        Config::parse(DEFAULT_CONFIG).expect("bundled configuration is valid")
    }
}

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    value: String,
}

fn parse_entries(text: &str) -> Result<BTreeMap<String, Entry>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
            line,
            reason: format!("expected `section.key = value`, got `{content}`"),
        })?;
        let key = key.trim();
        let valid_key = key
            .split_once('.')
            .is_some_and(|(s, k)| !s.is_empty() && !k.is_empty() && !k.contains('.'));
        if !valid_key {
            return Err(Error::Parse {
                line,
                reason: format!("key `{key}` is not of the form section.key"),
            });
        }
        let entry = Entry {
            line,
            value: value.trim().to_string(),
        };
        if out.insert(key.to_string(), entry).is_some() {
            return Err(Error::Parse {
                line,
                reason: format!("duplicate key `{key}`"),
            });
        }
    }
    Ok(out)
}

/// Typed access to the merged entries.
struct Reader {
    entries: BTreeMap<String, Entry>,
}

impl Reader {
    fn entry(&self, key: &str) -> Result<&Entry> {
        self.entries.get(key).ok_or_else(|| Error::Parse {
            line: 0,
            reason: format!("missing key `{key}`"),
        })
    }

    fn parse_err(e: &Entry, key: &str, what: &str) -> Error {
        Error::Parse {
            line: e.line,
            reason: format!("`{key}`: expected {what}, got `{}`", e.value),
        }
    }

    fn number(&self, key: &str) -> Result<f64> {
        let e = self.entry(key)?;
        parse_number(&e.value).ok_or_else(|| Self::parse_err(e, key, "a number"))
    }

    fn count(&self, key: &str) -> Result<usize> {
        let e = self.entry(key)?;
        e.value.parse().map_err(|_| Self::parse_err(e, key, "a non-negative integer"))
    }

    fn seed(&self, key: &str) -> Result<u64> {
        let e = self.entry(key)?;
        e.value.parse().map_err(|_| Self::parse_err(e, key, "a non-negative integer"))
    }

    fn numbers(&self, key: &str) -> Result<Vec<f64>> {
        let e = self.entry(key)?;
        e.value
            .split(',')
            .map(|v| parse_number(v.trim()))
            .collect::<Option<Vec<_>>>()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Self::parse_err(e, key, "a comma-separated list of numbers"))
    }

    fn counts(&self, key: &str) -> Result<Vec<usize>> {
        let e = self.entry(key)?;
        e.value
            .split(',')
            .map(|v| v.trim().parse().ok())
            .collect::<Option<Vec<_>>>()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Self::parse_err(e, key, "a comma-separated list of integers"))
    }
}

fn parse_number(s: &str) -> Option<f64> {
    match s {
        "inf" | "+inf" => Some(f64::INFINITY),
        _ => s.parse::<f64>().ok().filter(|v| v.is_finite()),
    }
}

fn detector_keys(entries: &BTreeMap<String, Entry>) -> Vec<&String> {
    entries.keys().filter(|k| k.starts_with("detector.pd")).collect()
}

const KNOWN_KEYS: &[&str] = &[
    "room.width",
    "room.length",
    "room.height",
    "room.rho_walls",
    "room.rho_floor",
    "room.rho_ceiling",
    "room.element_size",
    "emitter.height",
    "emitter.lambertian_order",
    "emitter.power_mw",
    "detector.area_cm2",
    "detector.fov_deg",
    "channel.bounces",
    "channel.dt_ns",
    "channel.coarse_element_size",
    "channel.fine_element_size",
    "filter.led_mhz",
    "filter.pd_mhz",
    "filter.order",
    "features.guard_ns",
    "features.peak_window_ns",
    "features.spp_floor",
    "estimator.sigma_tau_ref_ns",
    "estimator.grid_step",
    "estimator.trials",
    "estimator.seed",
    "regression.sample_step",
    "bounds.lattice",
    "sweep.snr_db",
    "sweep.detectors",
    "sweep.features",
    "sweep.grid_steps",
    "sweep.grid_snr_db",
    "sweep.bandwidths_mhz",
    "sweep.bw_snr_db",
    "sweep.bw_features",
    "sweep.bw_map_step",
];

fn is_known(key: &str) -> bool {
    KNOWN_KEYS.contains(&key)
        || key
            .strip_prefix("detector.pd")
            .is_some_and(|n| n.parse::<usize>().is_ok_and(|n| n >= 1))
}

fn bandwidth(mhz: f64) -> Option<f64> {
    mhz.is_finite().then_some(mhz * 1e6)
}

impl Config {
    /// Parses `text` on top of the bundled defaults. Giving any
    /// `detector.pdN` key replaces the whole default detector set.
    pub fn parse(text: &str) -> Result<Config> {
        let user = parse_entries(text)?;
        for (key, e) in &user {
            if !is_known(key) {
                return Err(Error::Parse {
                    line: e.line,
                    reason: format!("unknown key `{key}`"),
                });
            }
        }
        let mut merged = parse_entries(DEFAULT_CONFIG)?;
        if !detector_keys(&user).is_empty() {
            merged.retain(|k, _| !k.starts_with("detector.pd"));
        }
        merged.extend(user);
        Config::from_reader(&Reader { entries: merged })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    fn from_reader(r: &Reader) -> Result<Config> {
        let area = r.number("detector.area_cm2")? / 1e4;
        let fov = r.number("detector.fov_deg")?.to_radians();
        let mut detectors = Vec::new();
        for n in 1.. {
            let key = format!("detector.pd{n}");
            if !r.entries.contains_key(&key) {
                break;
            }
            let p = r.numbers(&key)?;
            if p.len() != 3 {
                return Err(Reader::parse_err(r.entry(&key)?, &key, "three coordinates"));
            }
            detectors.push(Detector {
                position: Vec3::new(p[0], p[1], p[2]),
                area,
                fov_half_angle: fov,
                orientation: Vec3::DOWN,
            });
        }
        if detectors.len() != detector_keys(&r.entries).len() {
            return Err(invalid("detector", "detector keys must be numbered pd1, pd2, ... without gaps"));
        }

        let (width, length) = (r.number("room.width")?, r.number("room.length")?);
        let scene = validate_scene(Scene {
            room: Room {
                width,
                length,
                height: r.number("room.height")?,
                reflectance: Reflectance {
                    walls: r.number("room.rho_walls")?,
                    floor: r.number("room.rho_floor")?,
                    ceiling: r.number("room.rho_ceiling")?,
                },
                element_size: r.number("room.element_size")?,
            },
            emitter: Emitter {
                position: Vec3::new(width / 2.0, length / 2.0, r.number("emitter.height")?),
                lambertian_order: r.number("emitter.lambertian_order")?,
                power: r.number("emitter.power_mw")? / 1e3,
                orientation: Vec3::UP,
            },
            detectors,
        })?;

        let fine = match r.entries.get("channel.fine_element_size") {
            Some(_) => Some(r.number("channel.fine_element_size")?),
            None => None,
        };
        let channel = ChannelParams {
            max_bounces: r.count("channel.bounces")?,
            dt: r.number("channel.dt_ns")? / 1e9,
            fine_element_size: fine,
            coarse_element_size: r.number("channel.coarse_element_size")?,
        };
        channel.validate()?;

        let filter = SystemFilter {
            f_led: bandwidth(r.number("filter.led_mhz")?),
            f_pd: bandwidth(r.number("filter.pd_mhz")?),
            order: r.count("filter.order")?,
        };
        let features = FeatureParams {
            guard: r.number("features.guard_ns")? / 1e9,
            peak_window: r.number("features.peak_window_ns")? / 1e9,
            spp_floor: r.number("features.spp_floor")?,
        };
        let estimator = EstimatorSettings {
            sigma_tau_ref: r.number("estimator.sigma_tau_ref_ns")? / 1e9,
            grid_step: r.number("estimator.grid_step")?,
            trials: r.count("estimator.trials")?,
            seed: r.seed("estimator.seed")?,
        };
        let sweep = SweepSettings {
            snr_db: r.numbers("sweep.snr_db")?,
            detectors: r.counts("sweep.detectors")?,
            features: r.counts("sweep.features")?,
            grid_steps: r.numbers("sweep.grid_steps")?,
            grid_snr_db: r.number("sweep.grid_snr_db")?,
            bandwidths: r.numbers("sweep.bandwidths_mhz")?.into_iter().map(|b| b * 1e6).collect(),
            bw_snr_db: r.number("sweep.bw_snr_db")?,
            bw_features: r.counts("sweep.bw_features")?,
            bw_map_step: r.number("sweep.bw_map_step")?,
        };
        let config = Config {
            scene,
            channel,
            filter,
            features,
            estimator,
            regression_step: r.number("regression.sample_step")?,
            bound_lattice: r.count("bounds.lattice")?,
            sweep,
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be positive, got {v}")))
            }
        };
        positive("features.guard_ns", self.features.guard)?;
        positive("features.peak_window_ns", self.features.peak_window)?;
        positive("estimator.sigma_tau_ref_ns", self.estimator.sigma_tau_ref)?;
        positive("estimator.grid_step", self.estimator.grid_step)?;
        positive("regression.sample_step", self.regression_step)?;
        positive("sweep.bw_map_step", self.sweep.bw_map_step)?;
        for &g in &self.sweep.grid_steps {
            positive("sweep.grid_steps", g)?;
        }
        for &b in &self.sweep.bandwidths {
            if !(b > 0.0) {
                return Err(invalid("sweep.bandwidths_mhz", format!("must be positive, got {b}")));
            }
        }
        if self.estimator.trials == 0 {
            return Err(invalid("estimator.trials", "must be at least 1"));
        }
        if self.bound_lattice == 0 {
            return Err(invalid("bounds.lattice", "must be at least 1"));
        }
        let q_max = self.scene.detectors.len();
        if let Some(&q) = self.sweep.detectors.iter().find(|&&q| q == 0 || q > q_max) {
            return Err(invalid("sweep.detectors", format!("{q} is not in 1..={q_max}")));
        }
        for (name, list) in [("sweep.features", &self.sweep.features), ("sweep.bw_features", &self.sweep.bw_features)] {
            if let Some(&f) = list.iter().find(|&&f| !(1..=3).contains(&f)) {
                return Err(invalid(name, format!("{f} is not in 1..=3")));
            }
        }
        Ok(())
    }
}
