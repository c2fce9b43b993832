//! Fingerprint database: feature triples of every detector at every grid
//! cell center, plus its text persistence format.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::channel::{apply_system_filter, ChannelModel, SystemFilter};
use crate::error::{Error, Result};
use crate::features::{assemble_observation, extract_features, FeatureParams, FeatureVector, Observation};
use crate::scene::{make_grid, Grid, Room, Vec3};

pub const FORMAT_VERSION: u32 = 1;

/// Full simulated measurement chain: ray-traced channel, LED/PD bandwidth
/// limit and peak detection.
#[derive(Debug, Clone, Copy)]
pub struct FeatureSimulator<'a> {
    pub model: &'a ChannelModel,
    pub filter: SystemFilter,
    pub features: FeatureParams,
}

impl<'a> FeatureSimulator<'a> {
    pub fn new(model: &'a ChannelModel, filter: SystemFilter, features: FeatureParams) -> Self {
        Self {
            model,
            filter,
            features,
        }
    }

    /// Noiseless features of every detector for an emitter at `(x, y)`.
    pub fn observe(&self, x: f64, y: f64) -> Result<Observation> {
        let p_t = self.model.scene().emitter.power;
        let q = self.model.detector_count();
        let features = (0..q)
            .map(|d| {
                let ir = self.model.response_at(x, y, d)?;
                let ir = if self.filter.is_ideal() {
                    ir
                } else {
                    apply_system_filter(&ir, &self.filter)?
                };
                extract_features(&ir, p_t, &self.features)
            })
            .collect::<Result<Vec<_>>>()?;
        assemble_observation(features, q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintMap {
    /// Room width, length and height the map was built for.
    pub room: [f64; 3],
    pub grid: Grid,
    pub detectors: Vec<Vec3>,
    /// Cell-major: entry `k * Q + q`.
    pub entries: Vec<FeatureVector>,
}

impl FingerprintMap {
    pub fn detector_count(&self) -> usize {
        self.detectors.len()
    }

    pub fn cell_count(&self) -> usize {
        self.grid.len()
    }

    pub fn cell(&self, k: usize) -> &[FeatureVector] {
        let q = self.detector_count();
        &self.entries[k * q..(k + 1) * q]
    }

    pub fn entry(&self, k: usize, q: usize) -> &FeatureVector {
        &self.entries[k * self.detector_count() + q]
    }

    pub fn center(&self, k: usize) -> Vec3 {
        self.grid.centers[k]
    }
}

/// Simulates the features at every cell center. The grid height should be
/// the emitter height of the simulator's scene.
pub fn build_map(sim: &FeatureSimulator, grid: &Grid) -> Result<FingerprintMap> {
    let scene = sim.model.scene();
    let cells: Vec<Observation> = grid
        .centers
        .par_iter()
        .enumerate()
        .map(|(k, c)| {
            sim.observe(c.x, c.y).map_err(|e| Error::Cell {
                cell: k,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    Ok(FingerprintMap {
        room: room_dims(&scene.room),
        grid: grid.clone(),
        detectors: scene.detectors.iter().map(|d| d.position).collect(),
        entries: cells.into_iter().flat_map(|o| o.features).collect(),
    })
}

fn room_dims(room: &Room) -> [f64; 3] {
    [room.width, room.length, room.height]
}

const COLUMNS: &str = "k,q,x_k,y_k,p_los_W,p_spp_W,delta_tau_s";

fn data_rows(map: &FingerprintMap) -> String {
    let q_count = map.detector_count();
    let mut out = String::new();
    for (idx, f) in map.entries.iter().enumerate() {
        let (k, q) = (idx / q_count, idx % q_count);
        let c = map.grid.centers[k];
        writeln!(
            out,
            "{k},{q},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            c.x, c.y, f.p_los, f.p_spp, f.delta_tau
        )
        .unwrap();
    }
    out
}

fn checksum(rows: &str) -> String {
    Sha256::digest(rows.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn write_map<W: Write>(map: &FingerprintMap, mut out: W) -> Result<()> {
    let rows = data_rows(map);
    let [w, l, h] = map.room;
    writeln!(out, "# format_version={FORMAT_VERSION}")?;
    writeln!(out, "# room={w},{l},{h}")?;
    writeln!(out, "# step={}", map.grid.step)?;
    writeln!(out, "# z={}", map.grid.z)?;
    writeln!(out, "# n_cols={}", map.grid.n_cols)?;
    writeln!(out, "# n_rows={}", map.grid.n_rows)?;
    writeln!(out, "# q={}", map.detector_count())?;
    for d in &map.detectors {
        writeln!(out, "# detector={},{},{}", d.x, d.y, d.z)?;
    }
    writeln!(out, "# rows={}", map.entries.len())?;
    writeln!(out, "# sha256={}", checksum(&rows))?;
    writeln!(out, "{COLUMNS}")?;
    out.write_all(rows.as_bytes())?;
    Ok(())
}

pub fn save_map(map: &FingerprintMap, path: impl AsRef<std::path::Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_map(map, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_map(path: impl AsRef<std::path::Path>) -> Result<FingerprintMap> {
    read_map(std::fs::File::open(path)?)
}

#[derive(Default)]
struct Header {
    version: Option<u32>,
    room: Option<[f64; 3]>,
    step: Option<f64>,
    z: Option<f64>,
    n_cols: Option<usize>,
    n_rows: Option<usize>,
    q: Option<usize>,
    detectors: Vec<Vec3>,
    rows: Option<usize>,
    sha256: Option<String>,
}

fn parse_floats(line: usize, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim().parse::<f64>().map_err(|e| Error::Parse {
                line,
                reason: format!("`{t}`: {e}"),
            })
        })
        .collect()
}

fn parse_one<T: std::str::FromStr>(line: usize, s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.trim().parse::<T>().map_err(|e| Error::Parse {
        line,
        reason: format!("`{s}`: {e}"),
    })
}

fn missing(key: &str) -> Error {
    Error::Parse {
        line: 0,
        reason: format!("header is missing `{key}`"),
    }
}

pub fn read_map<R: Read>(input: R) -> Result<FingerprintMap> {
    let reader = BufReader::new(input);
    let mut header = Header::default();
    let mut rows: Vec<String> = Vec::new();
    let mut seen_columns = false;

    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if let Some(rest) = line.strip_prefix('#') {
            let Some((key, value)) = rest.trim().split_once('=') else {
                continue;
            };
            let value = value.trim();
            match key.trim() {
                "format_version" => {
                    let v: u32 = parse_one(lineno, value)?;
                    if v != FORMAT_VERSION {
                        return Err(Error::VersionMismatch(v));
                    }
                    header.version = Some(v);
                }
                "room" => {
                    let v = parse_floats(lineno, value)?;
                    let arr: [f64; 3] = v.try_into().map_err(|_| Error::Parse {
                        line: lineno,
                        reason: "room needs width,length,height".into(),
                    })?;
                    header.room = Some(arr);
                }
                "step" => header.step = Some(parse_one(lineno, value)?),
                "z" => header.z = Some(parse_one(lineno, value)?),
                "n_cols" => header.n_cols = Some(parse_one(lineno, value)?),
                "n_rows" => header.n_rows = Some(parse_one(lineno, value)?),
                "q" => header.q = Some(parse_one(lineno, value)?),
                "detector" => {
                    let v = parse_floats(lineno, value)?;
                    if v.len() != 3 {
                        return Err(Error::Parse {
                            line: lineno,
                            reason: "detector needs x,y,z".into(),
                        });
                    }
                    header.detectors.push(Vec3::new(v[0], v[1], v[2]));
                }
                "rows" => header.rows = Some(parse_one(lineno, value)?),
                "sha256" => header.sha256 = Some(value.to_string()),
                _ => {}
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !seen_columns && line.trim() == COLUMNS {
            seen_columns = true;
            continue;
        }
        rows.push(line);
    }

    header.version.ok_or_else(|| missing("format_version"))?;
    let [w, l, h] = header.room.ok_or_else(|| missing("room"))?;
    let step = header.step.ok_or_else(|| missing("step"))?;
    let z = header.z.ok_or_else(|| missing("z"))?;
    let n_cols = header.n_cols.ok_or_else(|| missing("n_cols"))?;
    let n_rows = header.n_rows.ok_or_else(|| missing("n_rows"))?;
    let q = header.q.ok_or_else(|| missing("q"))?;
    if header.detectors.len() != q {
        return Err(Error::Parse {
            line: 0,
            reason: format!("header lists {} detectors, expected {q}", header.detectors.len()),
        });
    }
    let expected = n_cols * n_rows * q;
    if let Some(declared) = header.rows {
        if declared != expected {
            return Err(Error::Parse {
                line: 0,
                reason: format!("rows={declared} but grid and detectors need {expected}"),
            });
        }
    }
    if rows.len() < expected {
        return Err(Error::Truncated(format!("{} of {expected} rows present", rows.len())));
    }
    if rows.len() > expected {
        return Err(Error::Parse {
            line: 0,
            reason: format!("{} rows found, expected {expected}", rows.len()),
        });
    }
    if let Some(sum) = &header.sha256 {
        let mut joined = rows.join("\n");
        joined.push('\n');
        if &checksum(&joined) != sum {
            return Err(Error::ChecksumMismatch);
        }
    }

    let grid = rebuild_grid(w, l, h, step, z, n_cols, n_rows)?;
    let mut entries = vec![FeatureVector::los_only(0.0); expected];
    let mut filled = vec![false; expected];
    for (i, row) in rows.iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        let lineno = i + 1;
        if cols.len() != 7 {
            return Err(Error::Truncated(format!("row {lineno} has {} of 7 columns", cols.len())));
        }
        let k: usize = parse_one(lineno, cols[0])?;
        let qi: usize = parse_one(lineno, cols[1])?;
        let vals = parse_floats(lineno, &cols[2..].join(","))?;
        if k >= grid.len() || qi >= q {
            return Err(Error::Parse {
                line: lineno,
                reason: format!("index ({k}, {qi}) out of range"),
            });
        }
        let c = grid.centers[k];
        if (vals[0] - c.x).abs() > 1e-9 || (vals[1] - c.y).abs() > 1e-9 {
            return Err(Error::Parse {
                line: lineno,
                reason: format!("cell {k} center does not match the grid"),
            });
        }
        let idx = k * q + qi;
        if filled[idx] {
            return Err(Error::Parse {
                line: lineno,
                reason: format!("duplicate entry ({k}, {qi})"),
            });
        }
        filled[idx] = true;
        entries[idx] = FeatureVector {
            p_los: vals[2],
            p_spp: vals[3],
            delta_tau: vals[4],
            spp_valid: vals[4] > 0.0,
        };
    }
    Ok(FingerprintMap {
        room: [w, l, h],
        grid,
        detectors: header.detectors,
        entries,
    })
}

fn rebuild_grid(w: f64, l: f64, h: f64, step: f64, z: f64, n_cols: usize, n_rows: usize) -> Result<Grid> {
    let room = Room {
        width: w,
        length: l,
        height: h,
        reflectance: crate::scene::Reflectance::uniform(0.0),
        element_size: w.min(l).min(h),
    };
    let grid = make_grid(&room, step, z)?;
    if grid.n_cols != n_cols || grid.n_rows != n_rows {
        return Err(Error::Parse {
            line: 0,
            reason: format!(
                "grid {n_cols}x{n_rows} inconsistent with step {step} in a {w}x{l} room"
            ),
        });
    }
    Ok(grid)
}
